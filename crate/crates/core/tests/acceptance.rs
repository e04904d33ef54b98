//! End-to-end acceptance checks, one test per criterion. Each prints a single
//! PASS/FAIL line to the real stdout, so the summary survives output capture.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use humanfield::autodiff::{Tape, Tensor};
use humanfield::body::{body_to_json, deform, load_body, make_toy_body, save_body, BodyModel, Pose, Shape};
use humanfield::fields::{
    load_checkpoint, query_composite, save_checkpoint, sdf_to_density, FieldConfig, Generator, MeshSdf, Template,
};
use humanfield::geometry::{canonical_part_boxes, filter_rays, generate_rays, pose_boxes, Camera};
use humanfield::io::{read_pfm, read_png, write_pfm, write_png, RgbImage};
use humanfield::math::{transform_point, Vec3};
use humanfield::raster::{iou, silhouette};
use humanfield::render::{
    composite_weights, integrate_ray, midpoint_samples, relative_error, render, render_gradcheck, RenderConfig, RenderPlan,
    Scene,
};
use humanfield::sampler::{
    bin_histogram, pose_guided_weights, sample_batch, synthetic_records, total_variation, DatasetMeta, SamplerConfig,
    SamplingMode,
};
use humanfield::train::{
    r1_penalty, r1_schedule, synthetic_set, DiscConfig, Discriminator, StepReport, TrainConfig, Trainer, R1_FLOOR,
    R1_HALFLIFE, R1_INITIAL,
};

fn report(n: u32, title: &str, ok: bool, detail: &str) {
    let line = format!("criterion {n:>2} {} {title}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    // bypass the harness capture so the line always shows
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn rest_scene(model: &BodyModel, width: usize, height: usize) -> Scene {
    Scene { shape: Shape::zero(model.shape_dim()), pose: Pose::zero(model.joint_count()), camera: Camera::full_body(width, height) }
}

/// Every joint rotated about a uniform random axis by up to `max_deg`.
fn random_pose(model: &BodyModel, rng: &mut ChaCha8Rng, max_deg: f64) -> Pose {
    let axis_angle = (0..model.joint_count())
        .map(|_| {
            let axis = loop {
                let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let n = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v / n;
                }
            };
            axis * rng.random_range(0.0..=max_deg).to_radians()
        })
        .collect();
    Pose { axis_angle, global_translation: Vec3::zeros() }
}

#[test]
fn criterion_01_template_render_fidelity() {
    let model = make_toy_body(16, 256, 0).unwrap();
    // zero offsets; a sharp density so the rendered edge sits on the mesh
    let config = FieldConfig { alpha_init: 5e-4, sdf_grid: None, ..FieldConfig::new(16) };
    let gen = Generator::new(config.clone(), 0).unwrap();
    let (w, h) = (64, 128);
    let start = Instant::now();
    let template = Template::new(&model, &config).unwrap();
    let scene = rest_scene(&model, w, h);
    let z = vec![0.0; config.latent_dim];
    let out = render(&gen, &template, &model, &scene, &z, &RenderConfig::default(), 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let posed = deform(&model, &scene.shape, &scene.pose).unwrap();
    let oracle = silhouette(&posed.posed_vertices, &model.faces, &scene.camera);
    let score = iou(&out.mask(0.5), &oracle);
    report(1, "template render fidelity", score >= 0.95 && secs < 10.0, &format!("IoU {score:.4} (>= 0.95), {secs:.2} s (< 10 s)"));
}

/// Independent continuous compositing: trapezoid transmittance on a fine grid.
fn quadrature(sigma: impl Fn(f64) -> f64, color: impl Fn(f64) -> Vec3, t0: f64, t1: f64, steps: usize, bg: Vec3) -> Vec3 {
    let h = (t1 - t0) / steps as f64;
    let mut tau = 0.0;
    let mut acc = Vec3::zeros();
    let f = |t: f64, tau: f64| color(t) * ((-tau).exp() * sigma(t));
    let mut prev = f(t0, 0.0);
    let mut s_prev = sigma(t0);
    for k in 1..=steps {
        let t = t0 + k as f64 * h;
        let s = sigma(t);
        tau += 0.5 * (s + s_prev) * h;
        let cur = f(t, tau);
        acc += (prev + cur) * (0.5 * h);
        prev = cur;
        s_prev = s;
    }
    acc + bg * (-tau).exp()
}

#[test]
fn criterion_02_compositing_exactness() {
    let ln2 = 2f64.ln();
    let (w, _) = composite_weights(&[ln2, ln2], &[1.0, 1.0]);
    let err_closed = (w[0] - 0.5).abs().max((w[1] - 0.25).abs());

    // a ray crossing a sphere of radius 0.3 at default sharpness
    let alpha = 0.1;
    let sigma = |t: f64| sdf_to_density((t - 0.5).abs() - 0.3, alpha);
    let color = |t: f64| Vec3::new(t, 1.0 - t, 0.5);
    let bg = Vec3::repeat(1.0);
    let mut worst: f64 = 0.0;
    for (t0, t1) in [(0.0, 1.0), (0.1, 0.9), (-0.2, 1.3)] {
        let s = midpoint_samples(t0, t1, 28).unwrap();
        let colors: Vec<Vec3> = s.t.iter().map(|&t| color(t)).collect();
        let sigmas: Vec<f64> = s.t.iter().map(|&t| sigma(t)).collect();
        let got = integrate_ray(&colors, &sigmas, &s, &bg).unwrap().rgb;
        let oracle = quadrature(sigma, color, t0, t1, 10_000, bg);
        worst = worst.max((got - oracle).amax());
    }
    report(
        2,
        "compositing exactness",
        err_closed < 1e-6 && worst < 1e-3,
        &format!("ln2 weights off by {err_closed:.1e} (< 1e-6), 28-sample vs quadrature {worst:.2e} (< 1e-3)"),
    );
}

#[test]
fn criterion_03_filter_soundness_and_efficiency() {
    let model = make_toy_body(16, 128, 0).unwrap();
    let boxes = canonical_part_boxes(&model, 0.05).unwrap();

    // hit fraction on the standing pose at full resolution
    let rest = deform(&model, &Shape::zero(model.shape_dim()), &Pose::zero(model.joint_count())).unwrap();
    let mut rays = generate_rays(&Camera::full_body(256, 512)).unwrap();
    let hits = filter_rays(&mut rays, &pose_boxes(&boxes, &rest, &model).unwrap()).unwrap();
    let fraction = hits as f64 / rays.len() as f64;

    // culled rays marched densely through the posed surface itself, at the
    // sharpness used for template fidelity
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut poses = vec![Pose::zero(model.joint_count())];
    poses.extend((0..2).map(|_| random_pose(&model, &mut rng, 30.0)));
    let (mut worst, mut closest, mut culled): (f64, f64, usize) = (0.0, f64::INFINITY, 0);
    for pose in &poses {
        let posed = deform(&model, &Shape::zero(model.shape_dim()), pose).unwrap();
        let surface = MeshSdf::new(&posed.posed_vertices, &model.faces).unwrap();
        let mut rays = generate_rays(&Camera::full_body(24, 48)).unwrap();
        filter_rays(&mut rays, &pose_boxes(&boxes, &posed, &model).unwrap()).unwrap();
        let s = midpoint_samples(2.0, 6.0, 1000).unwrap();
        for ray in rays.iter().filter(|r| !r.hit) {
            culled += 1;
            let d: Vec<f64> = s.t.iter().map(|&t| surface.eval(&ray.at(t))).collect();
            closest = closest.min(d.iter().fold(f64::INFINITY, |m, &x| m.min(x)));
            let sigmas: Vec<f64> = d.iter().map(|&x| sdf_to_density(x, 5e-4)).collect();
            let (_, transmittance) = composite_weights(&sigmas, &s.delta);
            worst = worst.max(1.0 - transmittance);
        }
    }
    report(
        3,
        "filter soundness and efficiency",
        worst < 1e-3 && fraction < 0.5,
        &format!(
            "max culled-ray opacity {worst:.1e} over {culled} rays in 3 poses (< 1e-3), closest approach {closest:.3}, hit fraction {fraction:.3} at 512x256 (< 0.5)"
        ),
    );
}

#[test]
fn criterion_04_inverse_skinning_round_trip() {
    let model = make_toy_body(16, 256, 0).unwrap();
    let (lo, hi) = model.bounds();
    let height = hi.y - lo.y;
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // barycentric surface samples, each carried by the skinning transform of
    // its dominant triangle corner
    let samples: Vec<(Vec3, usize)> = (0..1000)
        .map(|_| {
            let t = model.faces[rng.random_range(0..model.faces.len())];
            let (mut a, mut b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            if a + b > 1.0 {
                (a, b) = (1.0 - a, 1.0 - b);
            }
            let w = [1.0 - a - b, a, b];
            let x = model.vertices[t[0]] * w[0] + model.vertices[t[1]] * w[1] + model.vertices[t[2]] * w[2];
            let corner = (0..3).max_by(|&i, &j| w[i].total_cmp(&w[j])).unwrap();
            (x, t[corner])
        })
        .collect();

    let rest = deform(&model, &Shape::zero(model.shape_dim()), &Pose::zero(model.joint_count())).unwrap();
    let identity_err = samples.iter().map(|(x, _)| (rest.inverse_lbs(x, 4).unwrap() - x).amax()).fold(0.0, f64::max);

    // 1000 samples spread over 20 poses, 50 each; every pose is also checked
    // against all 1000 samples for a lower-variance pooled rate
    let tol = 1e-2 * height;
    let (mut spread_ok, mut all_ok, mut worst_pose) = (0, 0, 1.0f64);
    for p in 0..20 {
        let pose = random_pose(&model, &mut rng, 30.0);
        let posed = deform(&model, &Shape::zero(model.shape_dim()), &pose).unwrap();
        let mut ok_here = 0;
        for (i, (x, j)) in samples.iter().enumerate() {
            let moved = transform_point(&posed.vertex_transforms[*j], x);
            if (posed.inverse_lbs(&moved, 4).unwrap() - x).norm() <= tol {
                ok_here += 1;
                if i / 50 == p {
                    spread_ok += 1;
                }
            }
        }
        all_ok += ok_here;
        worst_pose = worst_pose.min(ok_here as f64 / 1000.0);
    }
    let spread = spread_ok as f64 / 1000.0;
    let pooled = all_ok as f64 / 20_000.0;
    report(
        4,
        "inverse skinning round trip",
        spread >= 0.95 && pooled >= 0.95 && identity_err <= 1e-6,
        &format!(
            "{:.1}% of 1000 samples over 20 poses within {tol:.4} (>= 95%), {:.1}% of all 20000 pairs, hardest pose {:.1}%, identity error {identity_err:.1e} (<= 1e-6)",
            100.0 * spread,
            100.0 * pooled,
            100.0 * worst_pose
        ),
    );
}

/// Largest relative error between tape gradients and a five-point central
/// difference of a scalar function of a parameter store, over a stride of
/// entries.
fn param_gradcheck(
    params: &humanfield::fields::ParamStore,
    grads: &[Tensor],
    f: impl Fn(&humanfield::fields::ParamStore) -> f64,
    per_tensor: usize,
    step: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let n = params.tensor(i).len();
        for j in (0..n).step_by((n / per_tensor).max(1)) {
            let at = |h: f64| {
                let mut q = params.clone();
                q.tensor_mut(i).data_mut()[j] += h;
                f(&q)
            };
            let fd = (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
            worst = worst.max(relative_error(grads[i].data()[j], fd, 1e-7));
        }
    }
    worst
}

#[test]
fn criterion_05_gradient_suite() {
    let start = Instant::now();
    let model = make_toy_body(2, 24, 0).unwrap();
    let config = FieldConfig { sdf_grid: Some(24), alpha_init: 0.01, ..FieldConfig::small(2) };
    let mut gen = Generator::new(config.clone(), 2).unwrap();
    // nonzero FiLM and offset heads so the latent and geometry paths are exercised
    for i in 0..gen.params.len() {
        if gen.params.names()[i].contains(".film.w") || gen.params.names()[i].contains(".delta.w") {
            for (j, x) in gen.params.tensor_mut(i).data_mut().iter_mut().enumerate() {
                *x = 0.05 * (j as f64 * 0.61).sin();
            }
        }
    }
    let template = Template::new(&model, &config).unwrap();
    let z: Vec<f64> = (0..config.latent_dim).map(|i| (i as f64 * 0.3).cos()).collect();

    // field: weighted sum of every query output at points inside the boxes
    let pts = Tensor::new(3, 3, vec![0.02, 1.3, 0.01, -0.05, 0.9, 0.04, 0.06, 1.1, -0.03]);
    let dirs = Tensor::new(3, 3, vec![0.0, 0.0, -1.0, 0.0, 0.6, -0.8, 1.0, 0.0, 0.0]);
    let d_t = Tensor::new(3, 1, pts.data().chunks(3).map(|c| template.sdf.eval(&Vec3::new(c[0], c[1], c[2]))).collect());
    let field_value = |params: &humanfield::fields::ParamStore, tracked: bool| -> (f64, Vec<Tensor>) {
        let mut g = gen.clone();
        g.params = params.clone();
        let tape = Tape::new();
        let p = g.bind(&tape, tracked);
        let zv = tape.constant(Tensor::row_vector(z.clone()));
        let film = g.film_vars(&p, zv).unwrap();
        let x = tape.constant(pts.clone());
        let out = g.query(&p, &film, &template, x, &dirs, &d_t, &Vec3::repeat(1.0)).unwrap();
        let obj = out.rgb.sum() + out.sdf.sum().scale(0.5) + out.sigma.sum().scale(0.01) + out.delta.sum();
        let grads = if tracked { tape.grad(obj, &p.vars).iter().map(|v| (*v.value()).clone()).collect() } else { vec![] };
        (obj.item(), grads)
    };
    let (_, field_grads) = field_value(&gen.params, true);
    let field_err = param_gradcheck(&gen.params, &field_grads, |p| field_value(p, false).0, 4, 1e-4);

    // offset gradient with respect to position
    let film = gen.film(&z).unwrap();
    let bg = Vec3::repeat(1.0);
    let dir = Vec3::new(0.0, 0.0, -1.0);
    let delta_at = |x: &Vec3| query_composite(&gen, &template, &film, x, &dir, &bg).unwrap().delta;
    let mut spatial_err: f64 = 0.0;
    for c in pts.data().chunks(3) {
        let x = Vec3::new(c[0], c[1], c[2]);
        let g = query_composite(&gen, &template, &film, &x, &dir, &bg).unwrap().grad_delta;
        for a in 0..3 {
            let h = 1e-4;
            let mut e = Vec3::zeros();
            e[a] = h;
            let fd = (8.0 * (delta_at(&(x + e)) - delta_at(&(x - e))) - (delta_at(&(x + 2.0 * e)) - delta_at(&(x - 2.0 * e))))
                / (12.0 * h);
            spatial_err = spatial_err.max(relative_error(g[a], fd, 1e-7));
        }
    }

    // discriminator with the R1 term, as in its training objective
    let disc = Discriminator::new(DiscConfig::new(8, 8, 4, 8), 5).unwrap();
    let img = |salt: usize| Tensor::new(128, 3, (0..384).map(|i| ((i * 37 + salt * 11) % 101) as f64 / 100.0).collect());
    let (real, fake) = (img(1), img(2));
    let disc_value = |params: &humanfield::fields::ParamStore, tracked: bool| -> (f64, Vec<Tensor>) {
        let d = Discriminator { config: disc.config.clone(), params: params.clone() };
        let tape = Tape::new();
        let p = d.bind(&tape, tracked);
        let rv = tape.leaf(real.clone());
        let sr = d.forward(&p, rv).unwrap();
        let sf = d.forward(&p, tape.constant(fake.clone())).unwrap();
        let loss = sf.softplus().mean() + (-sr).softplus().mean() + r1_penalty(rv, sr).scale(10.0);
        let grads = if tracked { tape.grad(loss, &p).iter().map(|v| (*v.value()).clone()).collect() } else { vec![] };
        (loss.item(), grads)
    };
    let (_, disc_grads) = disc_value(&disc.params, true);
    // leaky ReLU kinks: keep the stencil narrow so it never straddles one
    let disc_err = param_gradcheck(&disc.params, &disc_grads, |p| disc_value(p, false).0, 4, 1e-6);

    // R1 alone against squared finite-difference score gradients
    let one = img(3).data()[..192].to_vec();
    let single = Tensor::new(64, 3, one);
    let tape = Tape::new();
    let p = disc.bind(&tape, false);
    let x = tape.leaf(single.clone());
    let r1 = r1_penalty(x, disc.forward(&p, x).unwrap()).item();
    let h = 1e-6;
    let mut fd = 0.0;
    for i in 0..single.len() {
        let mut a = single.clone();
        a.data_mut()[i] += h;
        let mut b = single.clone();
        b.data_mut()[i] -= h;
        let g = (disc.score_images(&[a]).unwrap()[0] - disc.score_images(&[b]).unwrap()[0]) / (2.0 * h);
        fd += g * g;
    }
    let r1_err = relative_error(r1, fd, 1e-12);

    // end to end: pixels through compositing, the fields, FiLM and mapping
    let scene = rest_scene(&model, 8, 16);
    let plan = RenderPlan::build(&model, &template, &scene, &RenderConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let pixels: Vec<(usize, usize)> = plan.hit_pixels.iter().map(|&p| (p / 8, p % 8)).take(12).collect();
    let e2e = render_gradcheck(&gen, &template, &model, &scene, &z, &RenderConfig::default(), 0, &pixels, 3, 1e-6).unwrap();

    let secs = start.elapsed().as_secs_f64();
    let worst = field_err.max(spatial_err).max(disc_err).max(e2e.max_rel_error);
    report(
        5,
        "gradient suite",
        worst < 1e-5 && r1_err < 1e-5 && secs < 300.0,
        &format!(
            "field {field_err:.1e}, offset wrt position {spatial_err:.1e}, discriminator+R1 {disc_err:.1e}, R1 {r1_err:.1e}, render {:.1e} (all < 1e-5), {secs:.1} s (< 300 s)",
            e2e.max_rel_error
        ),
    );
}

#[test]
fn criterion_06_pose_guided_sampler() {
    let model = make_toy_body(16, 64, 0).unwrap();
    // ten records per 5 degree bin, evenly spread in angle
    let yaws: Vec<f64> = (0..720).map(|i| (i as f64 * 0.5 + 0.25).to_radians()).collect();
    let records = synthetic_records(&model, &yaws, &Camera::full_body(32, 64));
    let meta = DatasetMeta::new(&model, records, 72).unwrap();
    let sigma = 15f64.to_radians();
    let cfg = SamplerConfig { bins: 72, mu_theta: 0.0, sigma_theta: sigma, mode: SamplingMode::Gaussian };
    let weights = pose_guided_weights(&meta, &cfg).unwrap();
    let draws = sample_batch(&weights, 100_000, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let rows = bin_histogram(&meta.bins, &weights, &draws, &cfg).unwrap();

    // target masses written out directly from the circular Gaussian
    let raw: Vec<f64> = (0..72)
        .map(|m| {
            let d = (5.0 * m as f64 + 180.0).rem_euclid(360.0) - 180.0;
            (-0.5 * (d.to_radians() / sigma).powi(2)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let target_err = rows.iter().zip(&raw).map(|(r, p)| (r.target_mass - p / total).abs()).fold(0.0, f64::max);
    let tv = total_variation(&rows);
    // bin 3 sits one sigma (15 degrees) from the center bin
    let ratio = rows[0].target_mass / rows[3].target_mass;
    let ratio_err = (ratio - 0.5f64.exp()).abs();
    report(
        6,
        "pose-guided sampler",
        tv <= 0.01 && ratio_err < 1e-6 && target_err < 1e-12,
        &format!("TV {tv:.4} (<= 0.01), center/sigma ratio error {ratio_err:.1e} (< 1e-6), target error {target_err:.1e}"),
    );
}

#[test]
fn criterion_07_schedule_and_defaults() {
    let stages = [(0, 300.0), (50_000, 150.0), (100_000, 75.0), (150_000, 37.5), (200_000, 18.75), (250_000, 18.5)];
    let schedule_ok = stages.iter().all(|&(i, v)| r1_schedule(i) == v)
        && stages.iter().skip(1).all(|&(i, _)| r1_schedule(i - 1) == r1_schedule(i - 50_000))
        && r1_schedule(u64::MAX) == 18.5;
    // defaults as loaded from an empty configuration file
    let loaded: TrainConfig = serde_json::from_str("{}").unwrap();
    let defaults_ok = loaded == TrainConfig::default()
        && loaded.lambda_off == 1.5
        && loaded.lambda_eik == 0.5
        && loaded.lr_g == 2e-5
        && loaded.lr_d == 2e-4
        && loaded.samples_per_ray == 28
        && RenderConfig::default().samples_per_ray == 28
        && (loaded.r1_initial, loaded.r1_floor, loaded.r1_halflife_iters) == (R1_INITIAL, R1_FLOOR, R1_HALFLIFE)
        && (R1_INITIAL, R1_FLOOR, R1_HALFLIFE) == (300.0, 18.5, 50_000);
    report(
        7,
        "schedule and defaults",
        schedule_ok && defaults_ok,
        &format!(
            "schedule {:?}, lambda_off {} lambda_eik {} lr {}/{} N {}",
            stages.iter().map(|&(i, _)| r1_schedule(i)).collect::<Vec<_>>(),
            loaded.lambda_off,
            loaded.lambda_eik,
            loaded.lr_g,
            loaded.lr_d,
            loaded.samples_per_ray
        ),
    );
}

fn toy_run(iters: u64) -> (Vec<StepReport>, Vec<u8>, f64) {
    let model = make_toy_body(2, 256, 0).unwrap();
    let yaws = [0.0, 0.5 * std::f64::consts::PI, std::f64::consts::PI, 1.5 * std::f64::consts::PI];
    let data = synthetic_set(&model, &yaws, 32, 64, 72).unwrap();
    let gen = Generator::new(FieldConfig::small(2), 0).unwrap();
    let disc = Discriminator::new(DiscConfig::toy(64, 32), 1).unwrap();
    let config = TrainConfig { batch: 4, seed: 0, ..TrainConfig::default() }.with_r1_scaled_to(64, 32);
    let mut trainer = Trainer::new(gen, disc, model, data, config).unwrap();
    let start = Instant::now();
    let mut log = Vec::new();
    let reports = trainer.run(iters, &mut log, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut bytes = trainer.checkpoint().unwrap().to_bytes().unwrap();
    bytes.extend(log);
    (reports, bytes, secs)
}

#[test]
fn criterion_08_toy_adversarial_smoke() {
    let (reports, state, secs) = toy_run(200);
    let finite = reports.iter().all(|r| {
        [r.d_loss, r.g_loss, r.l_off, r.l_eik, r.real_score, r.fake_score].iter().all(|x| x.is_finite())
    });
    let gap = |rs: &[StepReport]| rs.iter().map(|r| r.real_score - r.fake_score).sum::<f64>() / rs.len() as f64;
    let (early, late) = (gap(&reports[..50]), gap(&reports[150..]));
    let (again, state_again, _) = toy_run(200);
    let reproducible = again == reports && state_again == state;
    report(
        8,
        "toy adversarial smoke",
        finite && late > early && reproducible && secs < 1800.0,
        &format!(
            "200 iters in {secs:.0} s (< 1800 s), finite {finite}, mean real-fake gap {early:.3} -> {late:.3}, bit-reproducible {reproducible}"
        ),
    );
}

#[test]
fn criterion_09_sdf_to_density() {
    let at_zero = sdf_to_density(0.0, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut monotone = true;
    for _ in 0..1000 {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if a == b {
            continue;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        monotone &= sdf_to_density(lo, 0.1) > sdf_to_density(hi, 0.1);
    }
    report(9, "sdf to density", at_zero == 5.0 && monotone, &format!("sigma(0; 0.1) = {at_zero}, strictly decreasing over 1000 pairs: {monotone}"));
}

#[test]
fn criterion_10_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let model = make_toy_body(16, 64, 3).unwrap();
    let body_path = dir.path().join("body.json");
    save_body(&model, &body_path).unwrap();
    let first = std::fs::read(&body_path).unwrap();
    save_body(&load_body(&body_path).unwrap(), &body_path).unwrap();
    let body_ok = first == std::fs::read(&body_path).unwrap() && first == body_to_json(&model).into_bytes();

    let data = synthetic_set(&make_toy_body(2, 32, 0).unwrap(), &[0.0], 8, 16, 72).unwrap();
    let trainer = Trainer::new(
        Generator::new(FieldConfig::small(2), 4).unwrap(),
        Discriminator::new(DiscConfig::toy(16, 8), 5).unwrap(),
        make_toy_body(2, 32, 0).unwrap(),
        data,
        TrainConfig::default(),
    )
    .unwrap();
    let ckpt_path = dir.path().join("c.hfck");
    save_checkpoint(&trainer.checkpoint().unwrap(), &ckpt_path).unwrap();
    let first = std::fs::read(&ckpt_path).unwrap();
    let loaded = load_checkpoint(&ckpt_path).unwrap();
    save_checkpoint(&loaded, &ckpt_path).unwrap();
    let ckpt_ok = first == std::fs::read(&ckpt_path).unwrap() && loaded.generator().unwrap() == trainer.gen;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = RgbImage { width: 7, height: 5, data: (0..105).map(|_| rng.random_range(0.0..=1.0)).collect() };
    let png_path = dir.path().join("i.png");
    write_png(&png_path, &img).unwrap();
    let back = read_png(&png_path).unwrap();
    let png_err = img.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // re-encoding the decoded image is exact
    write_png(&png_path, &back).unwrap();
    let png_ok = png_err <= 0.5 / 255.0 + 1e-12 && read_png(&png_path).unwrap() == back && (back.width, back.height) == (7, 5);

    let depth: Vec<f64> = (0..35).map(|_| rng.random_range(0.0..10.0)).collect();
    let pfm_path = dir.path().join("d.pfm");
    write_pfm(&pfm_path, 7, 5, &depth).unwrap();
    let (w, h, got) = read_pfm(&pfm_path).unwrap();
    let pfm_ok = (w, h) == (7, 5) && depth.iter().zip(&got).all(|(a, b)| *a as f32 == *b as f32);

    report(
        10,
        "format round trips",
        body_ok && ckpt_ok && png_ok && pfm_ok,
        &format!("body JSON {body_ok}, checkpoint {ckpt_ok}, PNG max error {png_err:.2e} (<= half a level), PFM exact in f32 {pfm_ok}"),
    );
}
