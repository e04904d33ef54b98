use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FieldConfig, Template};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{bad_data, invalid, Result};
use crate::math::Vec3;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Rc<Tensor>>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(Rc::new(t));
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn shared(&self, i: usize) -> Rc<Tensor> {
        Rc::clone(&self.tensors[i])
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Rc::make_mut(&mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| &**t))
    }

    /// Replaces every tensor with one of identical name and shape.
    pub fn assign(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        if other.len() != self.len() {
            bad_data!("expected {} parameters, found {}", self.len(), other.len());
        }
        for (i, (name, t)) in other.iter().enumerate() {
            if *name != self.names[i] {
                bad_data!("parameter {i} is named {name}, expected {}", self.names[i]);
            }
            if t.shape() != self.tensors[i].shape() {
                bad_data!("parameter {name} has shape {:?}, expected {:?}", t.shape(), self.tensors[i].shape());
            }
            self.tensors[i] = Rc::new(t.clone());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct PartLayout {
    layers: Vec<(usize, usize)>,
    film_w: usize,
    film_b: usize,
    delta_w: usize,
    delta_b: usize,
    rgb_w: usize,
    rgb_dir: usize,
    rgb_b: usize,
}

/// Mapping network, per-part FiLM heads and FiLM-SIREN part networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: FieldConfig,
    pub params: ParamStore,
    mapping: Vec<(usize, usize)>,
    parts: Vec<PartLayout>,
    log_alpha: usize,
}

/// Per-part, per-layer FiLM frequencies and phases (each 1 x hidden_width).
#[derive(Clone, Debug, PartialEq)]
pub struct Film {
    pub gamma: Vec<Vec<Tensor>>,
    pub phi: Vec<Vec<Tensor>>,
}

#[derive(Clone, Debug)]
pub struct FilmVars<'t> {
    pub gamma: Vec<Vec<Var<'t>>>,
    pub phi: Vec<Vec<Var<'t>>>,
}

impl Film {
    pub fn bind<'t>(&self, tape: &'t Tape, tracked: bool) -> FilmVars<'t> {
        let mk = |t: &Tensor| if tracked { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        FilmVars {
            gamma: self.gamma.iter().map(|l| l.iter().map(mk).collect()).collect(),
            phi: self.phi.iter().map(|l| l.iter().map(mk).collect()).collect(),
        }
    }
}

impl FilmVars<'_> {
    pub fn values(&self) -> Film {
        let v = |l: &Vec<Var<'_>>| l.iter().map(|x| (*x.value()).clone()).collect();
        Film { gamma: self.gamma.iter().map(v).collect(), phi: self.phi.iter().map(v).collect() }
    }

    /// All FiLM vars in part-major, layer-major order, gammas before phis per layer.
    pub fn flatten(&self) -> Vec<Var<'_>> {
        let mut out = Vec::new();
        for (g, p) in self.gamma.iter().zip(&self.phi) {
            for (a, b) in g.iter().zip(p) {
                out.push(*a);
                out.push(*b);
            }
        }
        out
    }
}

/// Generator parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams<'t> {
    pub vars: Vec<Var<'t>>,
}

/// Blended field values for a batch of canonical points, all P rows.
#[derive(Clone, Copy, Debug)]
pub struct Composite<'t> {
    pub delta: Var<'t>,
    pub rgb: Var<'t>,
    pub sdf: Var<'t>,
    pub sigma: Var<'t>,
    /// Number of (point, part) network evaluations.
    pub part_queries: usize,
}

pub(crate) fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| round_f32(rng.random_range(-bound..=bound))).collect();
    Tensor::new(rows, cols, data)
}

impl Generator {
    /// Fresh parameters. Offset and FiLM heads start at zero so the initial
    /// geometry is the template and every FiLM layer is the identity modulation.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let w = config.hidden_width;
        let mut mapping = Vec::new();
        for l in 0..config.mapping_layers {
            let fan_in = if l == 0 { config.latent_dim } else { config.style_dim };
            let bound = (6.0 / (1.04 * fan_in as f64)).sqrt();
            let wi = params.push(format!("map.{l}.w"), uniform(&mut rng, fan_in, config.style_dim, bound));
            let bi = params.push(format!("map.{l}.b"), Tensor::zeros(1, config.style_dim));
            mapping.push((wi, bi));
        }
        let mut parts = Vec::new();
        for (k, &depth) in config.part_depths.iter().enumerate() {
            let mut layers = Vec::new();
            for l in 0..depth {
                let (fan_in, bound) = if l == 0 {
                    (3, config.first_omega / 3.0)
                } else {
                    (w, (6.0 / w as f64).sqrt())
                };
                let wi = params.push(format!("part{k:02}.l{l}.w"), uniform(&mut rng, fan_in, w, bound));
                let bi =
                    params.push(format!("part{k:02}.l{l}.b"), uniform(&mut rng, 1, w, 1.0 / (fan_in as f64).sqrt()));
                layers.push((wi, bi));
            }
            let film_w = params.push(format!("part{k:02}.film.w"), Tensor::zeros(config.style_dim, 2 * w * depth));
            let film_b = params.push(format!("part{k:02}.film.b"), Tensor::zeros(1, 2 * w * depth));
            let delta_w = params.push(format!("part{k:02}.delta.w"), Tensor::zeros(w, 1));
            let delta_b = params.push(format!("part{k:02}.delta.b"), Tensor::zeros(1, 1));
            let head = 1.0 / ((w + 3) as f64).sqrt();
            let rgb_w = params.push(format!("part{k:02}.rgb.w"), uniform(&mut rng, w, 3, head));
            let rgb_dir = params.push(format!("part{k:02}.rgb.dir"), uniform(&mut rng, 3, 3, head));
            let rgb_b = params.push(format!("part{k:02}.rgb.b"), Tensor::zeros(1, 3));
            parts.push(PartLayout { layers, film_w, film_b, delta_w, delta_b, rgb_w, rgb_dir, rgb_b });
        }
        let log_alpha = params.push("log_alpha", Tensor::scalar(round_f32(config.alpha_init.ln())));
        Ok(Self { config, params, mapping, parts, log_alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.params.tensor(self.log_alpha).item().exp()
    }

    pub fn log_alpha_index(&self) -> usize {
        self.log_alpha
    }

    /// Coarse parameter family of a parameter name, used for reporting.
    pub fn group_of(name: &str) -> &'static str {
        if name.starts_with("map.") {
            "mapping"
        } else if name == "log_alpha" {
            "alpha"
        } else if name.contains(".film.") {
            "film"
        } else if name.contains(".delta.") {
            "delta_head"
        } else if name.contains(".rgb.") {
            "rgb_head"
        } else {
            "part_layers"
        }
    }

    /// Places every parameter on `tape`, as leaves when `tracked`.
    pub fn bind<'t>(&self, tape: &'t Tape, tracked: bool) -> BoundParams<'t> {
        let vars = (0..self.params.len())
            .map(|i| {
                let t = self.params.shared(i);
                if tracked {
                    tape.leaf_shared(t)
                } else {
                    tape.constant_shared(t)
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Latent (1 x latent_dim) to per-part FiLM modulations on the tape.
    pub fn film_vars<'t>(&self, p: &BoundParams<'t>, z: Var<'t>) -> Result<FilmVars<'t>> {
        if z.shape() != (1, self.config.latent_dim) {
            invalid!("latent has shape {:?}, expected (1, {})", z.shape(), self.config.latent_dim);
        }
        let mut s = z;
        for (l, &(w, b)) in self.mapping.iter().enumerate() {
            s = s.matmul(p.vars[w]).add_row(p.vars[b]);
            if l + 1 < self.mapping.len() {
                s = s.leaky_relu(0.2);
            }
        }
        let width = self.config.hidden_width;
        let mut gamma = Vec::new();
        let mut phi = Vec::new();
        for (k, part) in self.parts.iter().enumerate() {
            let depth = self.config.part_depths[k];
            let raw = s.matmul(p.vars[part.film_w]).add_row(p.vars[part.film_b]).reshape(2 * depth, width);
            gamma.push((0..depth).map(|l| raw.select_rows(&[2 * l]).scale(self.config.film_scale).offset(1.0)).collect());
            phi.push((0..depth).map(|l| raw.select_rows(&[2 * l + 1])).collect());
        }
        Ok(FilmVars { gamma, phi })
    }

    /// FiLM modulations for a latent vector.
    pub fn film(&self, z: &[f64]) -> Result<Film> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let zv = tape.constant(Tensor::row_vector(z.to_vec()));
        Ok(self.film_vars(&p, zv)?.values())
    }

    /// Evaluates the blended field at P canonical points `x` (P x 3).
    ///
    /// `dirs` are P x 3 view directions and `d_t` the P x 1 template distances.
    /// Points outside every box get zero density and the background color.
    #[allow(clippy::too_many_arguments)]
    pub fn query<'t>(
        &self,
        p: &BoundParams<'t>,
        film: &FilmVars<'t>,
        template: &Template,
        x: Var<'t>,
        dirs: &Tensor,
        d_t: &Tensor,
        background: &Vec3,
    ) -> Result<Composite<'t>> {
        let tape = x.tape();
        let n = x.rows();
        if x.cols() != 3 || dirs.shape() != (n, 3) || d_t.shape() != (n, 1) {
            invalid!("query shapes do not match: x {:?}, dirs {:?}, d_t {:?}", x.shape(), dirs.shape(), d_t.shape());
        }
        if template.boxes.len() != self.parts.len() {
            invalid!("template has {} boxes, network has {} parts", template.boxes.len(), self.parts.len());
        }
        let xs = x.value();
        let points: Vec<Vec3> = (0..n).map(|i| Vec3::new(xs.get(i, 0), xs.get(i, 1), xs.get(i, 2))).collect();
        let members = template.membership(&points);
        let dirs_v = tape.constant(dirs.clone());
        let m = self.config.window_m;
        let pw = self.config.window_n as i32;

        let mut num: Option<Var<'t>> = None;
        let mut den: Option<Var<'t>> = None;
        let mut covered = vec![false; n];
        let mut part_queries = 0;
        for (k, idx) in members.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            part_queries += idx.len();
            for &i in idx {
                covered[i] = true;
            }
            let b = &template.boxes.boxes[k];
            let ext = b.extent();
            if (0..3).any(|a| !(ext[a] > 0.0)) {
                invalid!("part {k} box is degenerate");
            }
            let scale = tape.constant(Tensor::row_vector((0..3).map(|a| 2.0 / ext[a]).collect()));
            let shift = tape.constant(Tensor::row_vector((0..3).map(|a| -(b.min[a] + b.max[a]) / ext[a]).collect()));
            let xh = x.select_rows(idx).mul_row(scale).add_row(shift);
            let part = &self.parts[k];
            let mut h = xh;
            for (l, &(w, bias)) in part.layers.iter().enumerate() {
                h = h.matmul(p.vars[w]).add_row(p.vars[bias]).mul_row(film.gamma[k][l]).add_row(film.phi[k][l]).sin();
            }
            let delta = h.matmul(p.vars[part.delta_w]).add_row(p.vars[part.delta_b]);
            let dk = dirs_v.select_rows(idx);
            let rgb = (h.matmul(p.vars[part.rgb_w]) + dk.matmul(p.vars[part.rgb_dir])).add_row(p.vars[part.rgb_b]).sigmoid();
            let omega = xh.powi(pw).row_sums().scale(-m).exp();
            let out = delta.concat_cols(rgb).mul_col(omega).scatter_rows(idx, n);
            let wsum = omega.scatter_rows(idx, n);
            num = Some(match num {
                Some(a) => a + out,
                None => out,
            });
            den = Some(match den {
                Some(a) => a + wsum,
                None => wsum,
            });
        }

        let mask = Rc::new(Tensor::column_vector(covered.iter().map(|&c| c as u8 as f64).collect()));
        let (delta, rgb) = match (num, den) {
            (Some(num), Some(den)) => {
                let den = den.add_const(&mask.map(|c| 1.0 - c));
                let blended = num.mul_col(den.recip());
                let rgb_idx: Rc<[usize]> = (0..n).flat_map(|i| (1..4).map(move |j| i * 4 + j)).collect();
                (blended.column(0), blended.gather(rgb_idx, n, 3))
            }
            _ => (tape.constant(Tensor::zeros(n, 1)), tape.constant(Tensor::zeros(n, 3))),
        };
        let mut bg = Tensor::zeros(n, 3);
        for (i, &c) in covered.iter().enumerate() {
            if !c {
                for j in 0..3 {
                    bg.set(i, j, background[j]);
                }
            }
        }
        let rgb = rgb.add_const(&bg);
        let sdf = delta.add_const(d_t);
        let inv_alpha = (-p.vars[self.log_alpha]).exp();
        let sigma = (-sdf.mul_scalar(inv_alpha)).sigmoid().mul_scalar(inv_alpha).mul_const(mask);
        Ok(Composite { delta, rgb, sdf, sigma, part_queries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::make_toy_body;
    use crate::fields::{normalize_local, query_composite, window_weight};
    use crate::geometry::{PartBox, PartBoxSet};

    fn tiny_config(parts: usize) -> FieldConfig {
        FieldConfig {
            latent_dim: 4,
            style_dim: 4,
            hidden_width: 5,
            part_depths: vec![2; parts],
            sdf_grid: None,
            ..FieldConfig::new(parts)
        }
    }

    /// Two unit cubes overlapping in x in [0, 1]; a cube mesh provides the template.
    fn two_box_template() -> Template {
        let outer = PartBox { min: Vec3::repeat(-0.5), max: Vec3::new(1.5, 0.5, 0.5) };
        let corners = outer.corners().to_vec();
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [3, 7, 6],
            [3, 6, 2],
            [0, 4, 7],
            [0, 7, 3],
            [1, 2, 6],
            [1, 6, 5],
        ];
        let boxes = PartBoxSet {
            boxes: vec![
                PartBox { min: Vec3::new(-1.0, -1.0, -1.0), max: Vec3::new(1.0, 1.0, 1.0) },
                PartBox { min: Vec3::new(0.0, -1.0, -1.0), max: Vec3::new(2.0, 1.0, 1.0) },
            ],
            margin: 0.0,
            posed: None,
        };
        Template { boxes, sdf: super::super::TemplateSdf::new(&corners, &faces, &outer, None).unwrap() }
    }

    fn set_constant_part(gen: &mut Generator, k: usize, delta: f64, logits: [f64; 3]) {
        let part = gen.parts[k].clone();
        gen.params.tensor_mut(part.rgb_w).data_mut().fill(0.0);
        gen.params.tensor_mut(part.rgb_dir).data_mut().fill(0.0);
        gen.params.tensor_mut(part.rgb_b).data_mut().copy_from_slice(&logits);
        gen.params.tensor_mut(part.delta_w).data_mut().fill(0.0);
        gen.params.tensor_mut(part.delta_b).data_mut()[0] = delta;
    }

    #[test]
    fn zero_film_heads_give_identity_modulation() {
        let gen = Generator::new(tiny_config(3), 1).unwrap();
        let film = gen.film(&[0.3, -1.0, 2.0, 0.5]).unwrap();
        for k in 0..3 {
            assert_eq!(film.gamma[k].len(), 2);
            assert_eq!(film.phi[k].len(), 2);
            for l in 0..2 {
                assert!(film.gamma[k][l].data().iter().all(|&g| g == 1.0));
                assert!(film.phi[k][l].data().iter().all(|&g| g == 0.0));
            }
        }
        assert!(gen.film(&[0.0; 3]).is_err());
    }

    #[test]
    fn parameters_are_single_precision_values() {
        let gen = Generator::new(tiny_config(2), 9).unwrap();
        for (_, t) in gen.params.iter() {
            assert!(t.data().iter().all(|&x| x as f32 as f64 == x));
        }
    }

    #[test]
    fn outside_all_boxes_has_zero_density_and_background() {
        let gen = Generator::new(tiny_config(2), 1).unwrap();
        let t = two_box_template();
        let film = gen.film(&[0.0; 4]).unwrap();
        let bg = Vec3::new(1.0, 1.0, 1.0);
        let s = query_composite(&gen, &t, &film, &Vec3::new(5.0, 0.0, 0.0), &Vec3::z(), &bg).unwrap();
        assert_eq!(s.density, 0.0);
        assert_eq!(s.color, bg);
    }

    #[test]
    fn single_box_returns_that_network() {
        let mut gen = Generator::new(tiny_config(2), 1).unwrap();
        set_constant_part(&mut gen, 0, 0.03, [0.0, 1.0, -1.0]);
        let t = two_box_template();
        let film = gen.film(&[0.0; 4]).unwrap();
        let x = Vec3::new(-0.5, 0.2, 0.1);
        let s = query_composite(&gen, &t, &film, &x, &Vec3::z(), &Vec3::zeros()).unwrap();
        assert!((s.delta - 0.03).abs() < 1e-15);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        assert!((s.color - Vec3::new(0.5, sig(1.0), sig(-1.0))).norm() < 1e-15);
        let d_t = t.sdf.eval(&x);
        assert!((s.sdf - (d_t + 0.03)).abs() < 1e-15);
        assert!((s.density - super::super::sdf_to_density(s.sdf, gen.alpha())).abs() < 1e-9 * s.density.max(1.0));
    }

    #[test]
    fn overlapping_boxes_blend_by_window_weight() {
        let mut gen = Generator::new(tiny_config(2), 1).unwrap();
        set_constant_part(&mut gen, 0, 0.0, [40.0, -40.0, -40.0]);
        set_constant_part(&mut gen, 1, 0.0, [-40.0, 40.0, -40.0]);
        let t = two_box_template();
        let film = gen.film(&[0.0; 4]).unwrap();
        // x = 0.5 sits symmetrically in both boxes
        let s = query_composite(&gen, &t, &film, &Vec3::new(0.5, 0.1, -0.2), &Vec3::z(), &Vec3::zeros()).unwrap();
        assert!((s.color - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
        // asymmetric point: weights follow the window function
        let x = Vec3::new(0.2, 0.3, 0.0);
        let w0 = window_weight(&normalize_local(&x, &t.boxes.boxes[0]).unwrap(), 2.0, 8);
        let w1 = window_weight(&normalize_local(&x, &t.boxes.boxes[1]).unwrap(), 2.0, 8);
        let s = query_composite(&gen, &t, &film, &x, &Vec3::z(), &Vec3::zeros()).unwrap();
        assert!((s.color.x - w0 / (w0 + w1)).abs() < 1e-12);
        assert!((s.color.x + s.color.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_offset_gradient_uses_box_jacobian() {
        let mut gen = Generator::new(FieldConfig { part_depths: vec![1, 1], ..tiny_config(2) }, 1).unwrap();
        // one sine layer with tiny weights behaves linearly: delta ~= w_d . (W x_hat)
        let part = gen.parts[0].clone();
        let (wl, bl) = part.layers[0];
        gen.params.tensor_mut(bl).data_mut().fill(0.0);
        let mut wmat = Tensor::zeros(3, 5);
        wmat.set(0, 0, 1e-7);
        wmat.set(1, 1, 1e-7);
        wmat.set(2, 2, 1e-7);
        *gen.params.tensor_mut(wl) = wmat;
        let mut dw = Tensor::zeros(5, 1);
        dw.set(0, 0, 2.0e7);
        dw.set(1, 0, -1.0e7);
        dw.set(2, 0, 0.5e7);
        *gen.params.tensor_mut(part.delta_w) = dw;
        let t = two_box_template();
        let film = gen.film(&[0.0; 4]).unwrap();
        let s = query_composite(&gen, &t, &film, &Vec3::new(-0.7, 0.01, 0.02), &Vec3::z(), &Vec3::zeros()).unwrap();
        // box 0 has extent 2 so d x_hat / d x = 1
        assert!((s.grad_delta - Vec3::new(2.0, -1.0, 0.5)).norm() < 1e-6, "{:?}", s.grad_delta);
    }

    #[test]
    fn zero_offset_network_reproduces_template() {
        let model = make_toy_body(16, 16, 0).unwrap();
        let config = FieldConfig { sdf_grid: None, ..FieldConfig::small(16) };
        let gen = Generator::new(config.clone(), 4).unwrap();
        let t = Template::new(&model, &config).unwrap();
        let film = gen.film(&vec![0.1; 32]).unwrap();
        for v in model.vertices.iter().step_by(11) {
            let x = v + Vec3::new(0.01, -0.02, 0.015);
            let s = query_composite(&gen, &t, &film, &x, &Vec3::z(), &Vec3::zeros()).unwrap();
            assert_eq!(s.delta, 0.0);
            assert_eq!(s.sdf, t.sdf.eval(&x));
            assert_eq!(s.grad_delta, Vec3::zeros());
        }
    }

    #[test]
    fn film_gradients_reach_mapping_network() {
        let mut gen = Generator::new(tiny_config(2), 3).unwrap();
        for k in 0..2 {
            let fw = gen.parts[k].film_w;
            for x in gen.params.tensor_mut(fw).data_mut() {
                *x = 0.01;
            }
        }
        let tape = Tape::new();
        let p = gen.bind(&tape, true);
        let z = tape.constant(Tensor::row_vector(vec![0.5, -0.25, 1.0, 0.3]));
        let film = gen.film_vars(&p, z).unwrap();
        let t = two_box_template();
        let x = tape.constant(Tensor::new(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.1, 0.0]));
        let out =
            gen.query(&p, &film, &t, x, &Tensor::new(2, 3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]), &Tensor::zeros(2, 1), &Vec3::zeros())
                .unwrap();
        let loss = out.rgb.sum();
        let g = tape.grad(loss, &p.vars);
        let map0 = gen.params.index_of("map.0.w").unwrap();
        assert!(g[map0].value().max_abs() > 0.0);
    }
}
