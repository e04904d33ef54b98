//! Ray sampling, volume compositing and full-image rendering.

use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::body::{deform, BodyModel, Pose, Shape, DEFAULT_K_NEIGHBORS};
use crate::error::{invalid, Error, Result};
use crate::fields::{BoundParams, Film, FilmVars, Generator, Template};
use crate::geometry::{filter_rays, generate_rays, pose_boxes, Camera, PartBoxSet};
use crate::io::RgbImage;
use crate::math::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub background: Vec3,
    pub k_neighbors: usize,
    /// Bin centers instead of uniform jitter.
    pub deterministic_midpoint: bool,
    /// Rays shaded per tape.
    pub chunk_rays: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 28,
            background: Vec3::repeat(1.0),
            k_neighbors: DEFAULT_K_NEIGHBORS,
            deterministic_midpoint: false,
            chunk_rays: 256,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray == 0 {
            invalid!("samples_per_ray must be at least 1");
        }
        if self.k_neighbors == 0 || self.chunk_rays == 0 {
            invalid!("k_neighbors and chunk_rays must be positive");
        }
        if (0..3).any(|i| !(0.0..=1.0).contains(&self.background[i])) {
            invalid!("background color must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Sample distances along one ray and the interval each one represents.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

fn check_interval(t_n: f64, t_f: f64, n: usize) -> Result<()> {
    if n == 0 {
        invalid!("need at least one sample per ray");
    }
    if !(t_n < t_f) || !t_n.is_finite() || !t_f.is_finite() {
        invalid!("invalid ray interval [{t_n}, {t_f}]");
    }
    Ok(())
}

fn deltas(t: &[f64], t_f: f64) -> Vec<f64> {
    let n = t.len();
    (0..n).map(|i| if i + 1 < n { t[i + 1] - t[i] } else { t_f - t[i] }).collect()
}

/// One uniform draw in each of `n` equal bins of `[t_n, t_f]`.
pub fn stratified_samples<R: Rng + ?Sized>(t_n: f64, t_f: f64, n: usize, rng: &mut R) -> Result<RaySamples> {
    check_interval(t_n, t_f, n)?;
    let bin = (t_f - t_n) / n as f64;
    let t: Vec<f64> = (0..n).map(|i| t_n + (i as f64 + rng.random::<f64>()) * bin).collect();
    let delta = deltas(&t, t_f);
    Ok(RaySamples { t, delta })
}

/// Bin centers of `n` equal bins of `[t_n, t_f]`.
pub fn midpoint_samples(t_n: f64, t_f: f64, n: usize) -> Result<RaySamples> {
    check_interval(t_n, t_f, n)?;
    let bin = (t_f - t_n) / n as f64;
    let t: Vec<f64> = (0..n).map(|i| t_n + (i as f64 + 0.5) * bin).collect();
    let delta = deltas(&t, t_f);
    Ok(RaySamples { t, delta })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayColor {
    pub rgb: Vec3,
    pub depth: f64,
    pub opacity: f64,
}

/// Per-sample compositing weights `T_i (1 - exp(-sigma_i delta_i))` and the final transmittance.
pub fn composite_weights(sigmas: &[f64], deltas: &[f64]) -> (Vec<f64>, f64) {
    let mut acc = 0.0f64;
    let mut w = Vec::with_capacity(sigmas.len());
    for (s, d) in sigmas.iter().zip(deltas) {
        let sd = s * d;
        w.push((-acc).exp() * (1.0 - (-sd).exp()));
        acc += sd;
    }
    (w, (-acc).exp())
}

/// Discrete volume rendering of one ray.
pub fn integrate_ray(colors: &[Vec3], sigmas: &[f64], samples: &RaySamples, background: &Vec3) -> Result<RayColor> {
    let n = samples.t.len();
    if colors.len() != n || sigmas.len() != n || samples.delta.len() != n {
        invalid!("sample arrays disagree in length");
    }
    if sigmas.iter().chain(&samples.delta).any(|x| !(*x >= 0.0)) {
        invalid!("densities and intervals must be nonnegative");
    }
    let (w, t_final) = composite_weights(sigmas, &samples.delta);
    let mut rgb = background * t_final;
    let mut wsum = 0.0;
    let mut wt = 0.0;
    for i in 0..n {
        rgb += colors[i] * w[i];
        wsum += w[i];
        wt += w[i] * samples.t[i];
    }
    let depth = if wsum > 0.0 { wt / wsum } else { 0.0 };
    Ok(RayColor { rgb, depth, opacity: 1.0 - t_final })
}

/// Body shape, pose and viewpoint of one rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub shape: Shape,
    pub pose: Pose,
    pub camera: Camera,
}

/// Everything about a rendering that does not depend on network parameters:
/// culled rays, sample positions mapped to canonical space and template distances.
#[derive(Clone, Debug)]
pub struct RenderPlan {
    pub width: usize,
    pub height: usize,
    pub samples_per_ray: usize,
    pub background: Vec3,
    pub chunk_rays: usize,
    /// Flat pixel index `row * width + col` of every hit ray.
    pub hit_pixels: Vec<usize>,
    pub directions: Vec<Vec3>,
    /// Per sample, `hit_pixels.len() * samples_per_ray` entries.
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub canonical: Vec<Vec3>,
    pub template_sdf: Vec<f64>,
    pub posed_boxes: PartBoxSet,
}

impl RenderPlan {
    pub fn build<R: Rng + ?Sized>(
        model: &BodyModel,
        template: &Template,
        scene: &Scene,
        cfg: &RenderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let posed = deform(model, &scene.shape, &scene.pose)?;
        let posed_boxes = pose_boxes(&template.boxes, &posed, model)?;
        let mut rays = generate_rays(&scene.camera)?;
        filter_rays(&mut rays, &posed_boxes)?;
        let n = cfg.samples_per_ray;
        let hits: Vec<_> = rays.iter().filter(|r| r.hit).collect();
        let mut plan = Self {
            width: scene.camera.width,
            height: scene.camera.height,
            samples_per_ray: n,
            background: cfg.background,
            chunk_rays: cfg.chunk_rays,
            hit_pixels: Vec::with_capacity(hits.len()),
            directions: Vec::with_capacity(hits.len()),
            t: Vec::with_capacity(hits.len() * n),
            delta: Vec::with_capacity(hits.len() * n),
            canonical: Vec::with_capacity(hits.len() * n),
            template_sdf: Vec::with_capacity(hits.len() * n),
            posed_boxes,
        };
        for ray in hits {
            let s = if cfg.deterministic_midpoint {
                midpoint_samples(ray.t_near, ray.t_far, n)?
            } else {
                stratified_samples(ray.t_near, ray.t_far, n, rng)?
            };
            plan.hit_pixels.push(ray.pixel.0 * plan.width + ray.pixel.1);
            plan.directions.push(ray.direction);
            for &t in &s.t {
                let c = posed.inverse_lbs(&ray.at(t), cfg.k_neighbors)?;
                plan.canonical.push(c);
                plan.template_sdf.push(template.sdf.eval(&c));
            }
            plan.t.extend(s.t);
            plan.delta.extend(s.delta);
        }
        Ok(plan)
    }

    pub fn hit_count(&self) -> usize {
        self.hit_pixels.len()
    }

    /// Composite field queries a render of this plan performs.
    pub fn query_count(&self) -> usize {
        self.hit_pixels.len() * self.samples_per_ray
    }

    /// Keeps only the hit rays whose pixels are listed.
    pub fn restrict(&self, pixels: &[(usize, usize)]) -> Self {
        let wanted: std::collections::HashSet<usize> = pixels.iter().map(|&(r, c)| r * self.width + c).collect();
        let n = self.samples_per_ray;
        let mut out = Self {
            hit_pixels: vec![],
            directions: vec![],
            t: vec![],
            delta: vec![],
            canonical: vec![],
            template_sdf: vec![],
            ..self.clone()
        };
        for (i, &p) in self.hit_pixels.iter().enumerate() {
            if wanted.contains(&p) {
                out.hit_pixels.push(p);
                out.directions.push(self.directions[i]);
                let r = i * n..(i + 1) * n;
                out.t.extend_from_slice(&self.t[r.clone()]);
                out.delta.extend_from_slice(&self.delta[r.clone()]);
                out.canonical.extend_from_slice(&self.canonical[r.clone()]);
                out.template_sdf.extend_from_slice(&self.template_sdf[r]);
            }
        }
        out
    }

    fn chunks(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let n = self.hit_count();
        (0..n.div_ceil(self.chunk_rays)).map(move |c| c * self.chunk_rays..((c + 1) * self.chunk_rays).min(n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major, three channels per pixel.
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
    pub opacity: Vec<f64>,
    pub query_count: usize,
    pub hit_rays: usize,
}

impl RenderOutput {
    fn blank(width: usize, height: usize, background: &Vec3) -> Self {
        Self {
            width,
            height,
            rgb: (0..width * height).flat_map(|_| [background.x, background.y, background.z]).collect(),
            depth: vec![0.0; width * height],
            opacity: vec![0.0; width * height],
            query_count: 0,
            hit_rays: 0,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> Vec3 {
        let i = 3 * (row * self.width + col);
        Vec3::new(self.rgb[i], self.rgb[i + 1], self.rgb[i + 2])
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage { width: self.width, height: self.height, data: self.rgb.clone() }
    }

    pub fn mask(&self, threshold: f64) -> Vec<bool> {
        self.opacity.iter().map(|&o| o > threshold).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.rgb.iter().chain(&self.depth).chain(&self.opacity).all(|x| x.is_finite())
    }
}

/// Shaded rays of one chunk on a tape.
pub struct ShadedChunk<'t> {
    pub rgb: Var<'t>,
    pub opacity: Var<'t>,
    pub weights: Var<'t>,
}

/// Strictly upper triangular ones: `(x U)_i = sum_{j < i} x_j`.
fn exclusive_prefix_matrix(n: usize) -> Tensor {
    let mut u = Tensor::zeros(n, n);
    for j in 0..n {
        for i in j + 1..n {
            u.set(j, i, 1.0);
        }
    }
    u
}

/// Field queries and compositing for hit rays `range` of `plan`.
pub fn shade_chunk<'t>(
    gen: &Generator,
    params: &BoundParams<'t>,
    film: &FilmVars<'t>,
    template: &Template,
    plan: &RenderPlan,
    range: std::ops::Range<usize>,
) -> Result<ShadedChunk<'t>> {
    let tape = params.vars[0].tape();
    let n = plan.samples_per_ray;
    let r = range.len();
    let s = range.start * n..range.end * n;
    let x = Tensor::new(r * n, 3, plan.canonical[s.clone()].iter().flat_map(|p| [p.x, p.y, p.z]).collect());
    let dirs = Tensor::new(
        r * n,
        3,
        plan.directions[range.clone()].iter().flat_map(|d| std::iter::repeat_n([d.x, d.y, d.z], n).flatten()).collect(),
    );
    let d_t = Tensor::new(r * n, 1, plan.template_sdf[s.clone()].to_vec());
    let comp = gen.query(params, film, template, tape.constant(x), &dirs, &d_t, &plan.background)?;

    let delta = Rc::new(Tensor::new(r, n, plan.delta[s].to_vec()));
    let sd = comp.sigma.reshape(r, n).mul_const(delta);
    let before = sd.matmul(tape.constant(exclusive_prefix_matrix(n)));
    let trans = (-before).exp();
    let alpha = (-(-sd).exp()).offset(1.0);
    let weights = trans * alpha;
    let colored = comp.rgb.mul_col(weights.reshape(r * n, 1));
    let group: Rc<[usize]> = (0..r * n * 3).map(|i| (i / (n * 3)) * 3 + i % 3).collect();
    let t_final = (-sd.row_sums()).exp();
    let bg = tape.constant(Tensor::new(r, 3, std::iter::repeat_n([plan.background.x, plan.background.y, plan.background.z], r).flatten().collect()));
    let rgb = colored.scatter_add(group, r, 3) + bg.mul_col(t_final);
    let opacity = (-t_final).offset(1.0);
    Ok(ShadedChunk { rgb, opacity, weights })
}

/// Renders a prepared plan without recording gradients.
pub fn render_plan(gen: &Generator, template: &Template, plan: &RenderPlan, film: &Film) -> Result<RenderOutput> {
    let mut out = RenderOutput::blank(plan.width, plan.height, &plan.background);
    out.query_count = plan.query_count();
    out.hit_rays = plan.hit_count();
    let n = plan.samples_per_ray;
    for range in plan.chunks() {
        let tape = Tape::new();
        let params = gen.bind(&tape, false);
        let fv = film.bind(&tape, false);
        let shaded = shade_chunk(gen, &params, &fv, template, plan, range.clone())?;
        let rgb = shaded.rgb.value();
        let opacity = shaded.opacity.value();
        let w = shaded.weights.value();
        for (j, i) in range.enumerate() {
            let p = plan.hit_pixels[i];
            for c in 0..3 {
                out.rgb[3 * p + c] = rgb.get(j, c);
            }
            out.opacity[p] = opacity.get(j, 0);
            let (mut ws, mut wt) = (0.0, 0.0);
            for k in 0..n {
                ws += w.get(j, k);
                wt += w.get(j, k) * plan.t[i * n + k];
            }
            out.depth[p] = if ws > 0.0 { wt / ws } else { 0.0 };
        }
    }
    if !out.is_finite() {
        return Err(Error::Numeric("render produced non-finite values".into()));
    }
    Ok(out)
}

/// Full pipeline: deform, cull, sample, canonicalize, query and composite.
pub fn render(
    gen: &Generator,
    template: &Template,
    model: &BodyModel,
    scene: &Scene,
    z: &[f64],
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = RenderPlan::build(model, template, scene, cfg, &mut rng)?;
    let film = gen.film(z)?;
    render_plan(gen, template, &plan, &film)
}

/// Gradients of `sum(seed * rgb)` over the image with respect to generator
/// parameters (in store order) and the FiLM modulations.
pub fn backprop_plan(
    gen: &Generator,
    template: &Template,
    plan: &RenderPlan,
    film: &Film,
    rgb_seed: &[f64],
) -> Result<(Vec<Tensor>, Film)> {
    if rgb_seed.len() != plan.width * plan.height * 3 {
        invalid!("pixel gradient has {} entries, image has {}", rgb_seed.len(), plan.width * plan.height * 3);
    }
    let mut grads: Vec<Tensor> = gen.params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
    let zero_like = |l: &Vec<Tensor>| l.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect::<Vec<_>>();
    let mut film_grads =
        Film { gamma: film.gamma.iter().map(zero_like).collect(), phi: film.phi.iter().map(zero_like).collect() };
    for range in plan.chunks() {
        let seed = Tensor::new(
            range.len(),
            3,
            range.clone().flat_map(|i| (0..3).map(move |c| (i, c))).map(|(i, c)| rgb_seed[3 * plan.hit_pixels[i] + c]).collect(),
        );
        if seed.max_abs() == 0.0 {
            continue;
        }
        let tape = Tape::new();
        let params = gen.bind(&tape, true);
        let fv = film.bind(&tape, true);
        let shaded = shade_chunk(gen, &params, &fv, template, plan, range)?;
        let flat = fv.flatten();
        let wrt: Vec<Var<'_>> = params.vars.iter().copied().chain(flat.iter().copied()).collect();
        let g = tape.grad_seeded(&[(shaded.rgb, seed)], &wrt);
        for (acc, gi) in grads.iter_mut().zip(&g) {
            add_into(acc, &gi.value());
        }
        let mut it = g[params.vars.len()..].iter();
        for k in 0..film_grads.gamma.len() {
            for l in 0..film_grads.gamma[k].len() {
                add_into(&mut film_grads.gamma[k][l], &it.next().expect("film gradient").value());
                add_into(&mut film_grads.phi[k][l], &it.next().expect("film gradient").value());
            }
        }
    }
    Ok((grads, film_grads))
}

pub(crate) fn add_into(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Pushes FiLM gradients back through the mapping network and FiLM heads.
pub fn backprop_film(gen: &Generator, z: &[f64], film_grads: &Film) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let params = gen.bind(&tape, true);
    let zv = tape.constant(Tensor::row_vector(z.to_vec()));
    let fv = gen.film_vars(&params, zv)?;
    let mut seeds = Vec::new();
    for k in 0..fv.gamma.len() {
        for l in 0..fv.gamma[k].len() {
            seeds.push((fv.gamma[k][l], film_grads.gamma[k][l].clone()));
            seeds.push((fv.phi[k][l], film_grads.phi[k][l].clone()));
        }
    }
    Ok(tape.grad_seeded(&seeds, &params.vars).iter().map(|g| (*g.value()).clone()).collect())
}

/// Gradient of `sum(seed * rgb)` with respect to every generator parameter.
pub fn render_gradients(
    gen: &Generator,
    template: &Template,
    plan: &RenderPlan,
    z: &[f64],
    rgb_seed: &[f64],
) -> Result<Vec<Tensor>> {
    let film = gen.film(z)?;
    let (mut grads, film_grads) = backprop_plan(gen, template, plan, &film, rgb_seed)?;
    for (acc, g) in grads.iter_mut().zip(backprop_film(gen, z, &film_grads)?) {
        add_into(acc, &g);
    }
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_gradient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
    pub elapsed_secs: f64,
}

/// Relative difference with a floor so that two negligible values compare equal.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the analytic gradient of the mean pixel value over `pixels` with
/// central differences, on the `per_group` largest-gradient entries of every
/// parameter family.
#[allow(clippy::too_many_arguments)]
pub fn render_gradcheck(
    gen: &Generator,
    template: &Template,
    model: &BodyModel,
    scene: &Scene,
    z: &[f64],
    cfg: &RenderConfig,
    seed: u64,
    pixels: &[(usize, usize)],
    per_group: usize,
    step: f64,
) -> Result<GradcheckReport> {
    if pixels.is_empty() || pixels.len() > 64 {
        invalid!("gradcheck needs 1 to 64 pixels, got {}", pixels.len());
    }
    let (w, h) = (scene.camera.width, scene.camera.height);
    if let Some(p) = pixels.iter().find(|&&(r, c)| r >= h || c >= w) {
        invalid!("pixel {p:?} outside a {w}x{h} image");
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = RenderPlan::build(model, template, scene, cfg, &mut rng)?.restrict(pixels);
    let scale = 1.0 / (3 * pixels.len()) as f64;
    let mut seed_img = vec![0.0; w * h * 3];
    for &(r, c) in pixels {
        for ch in 0..3 {
            seed_img[3 * (r * w + c) + ch] = scale;
        }
    }
    let objective = |g: &Generator| -> Result<f64> {
        let out = render_plan(g, template, &plan, &g.film(z)?)?;
        Ok(out.rgb.iter().zip(&seed_img).map(|(a, b)| a * b).sum())
    };
    let grads = render_gradients(gen, template, &plan, z, &seed_img)?;

    let mut by_group: Vec<(String, Vec<(usize, usize, f64)>)> = Vec::new();
    for (i, (name, _)) in gen.params.iter().enumerate() {
        let group = Generator::group_of(name);
        let slot = match by_group.iter().position(|(g, _)| g == group) {
            Some(s) => s,
            None => {
                by_group.push((group.to_string(), Vec::new()));
                by_group.len() - 1
            }
        };
        for (j, &g) in grads[i].data().iter().enumerate() {
            by_group[slot].1.push((i, j, g));
        }
    }
    let mut report = GradcheckReport { groups: Vec::new(), max_rel_error: 0.0, elapsed_secs: 0.0 };
    let mut probe = gen.clone();
    for (group, mut entries) in by_group {
        entries.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()).then((a.0, a.1).cmp(&(b.0, b.1))));
        let max_abs = entries.first().map_or(0.0, |e| e.2.abs());
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for &(i, j, analytic) in entries.iter().take(per_group) {
            let orig = probe.params.tensor(i).data()[j];
            probe.params.tensor_mut(i).data_mut()[j] = orig + step;
            let fp = objective(&probe)?;
            probe.params.tensor_mut(i).data_mut()[j] = orig - step;
            let fm = objective(&probe)?;
            probe.params.tensor_mut(i).data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            worst = worst.max(relative_error(analytic, numeric, 1e-7));
            checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.groups.push(GroupCheck { group, checked, max_rel_error: worst, max_abs_gradient: max_abs });
    }
    report.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
