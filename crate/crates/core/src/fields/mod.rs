//! Part-local FiLM-SIREN fields over a template signed distance.

mod checkpoint;
mod generator;
mod sdf;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, GEN_PREFIX};
pub use generator::{BoundParams, Composite, Film, FilmVars, Generator, ParamStore};
pub(crate) use generator::round_f32;
pub use sdf::{point_triangle_distance, MeshSdf, SdfGrid, TemplateSdf, DEFAULT_GRID_RESOLUTION};

use serde::{Deserialize, Serialize};

use crate::autodiff::{stable_sigmoid, Tape, Tensor};
use crate::body::{default_part_depths, BodyModel};
use crate::error::{invalid, Result};
use crate::geometry::{canonical_part_boxes, PartBox, PartBoxSet, DEFAULT_BOX_MARGIN};
use crate::math::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub part_count: usize,
    pub latent_dim: usize,
    pub style_dim: usize,
    pub mapping_layers: usize,
    pub hidden_width: usize,
    pub part_depths: Vec<usize>,
    pub window_m: f64,
    pub window_n: u32,
    pub alpha_init: f64,
    /// Frequency scale of the first sine layer, folded into its weights.
    pub first_omega: f64,
    pub film_scale: f64,
    pub box_margin: f64,
    /// Side length of the cached template SDF grid; `None` queries the mesh directly.
    pub sdf_grid: Option<usize>,
}

impl FieldConfig {
    pub fn new(part_count: usize) -> Self {
        Self {
            part_count,
            latent_dim: 256,
            style_dim: 256,
            mapping_layers: 3,
            hidden_width: 64,
            part_depths: default_part_depths(part_count),
            window_m: 2.0,
            window_n: 8,
            alpha_init: 0.1,
            first_omega: 30.0,
            film_scale: 0.25,
            box_margin: DEFAULT_BOX_MARGIN,
            sdf_grid: Some(DEFAULT_GRID_RESOLUTION),
        }
    }

    /// Narrow networks for fast experiments.
    pub fn small(part_count: usize) -> Self {
        Self {
            latent_dim: 32,
            style_dim: 32,
            hidden_width: 16,
            part_depths: default_part_depths(part_count).iter().map(|&d| d.min(3)).collect(),
            ..Self::new(part_count)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.part_count == 0 {
            invalid!("part_count must be positive");
        }
        if self.part_depths.len() != self.part_count {
            invalid!("{} part depths for {} parts", self.part_depths.len(), self.part_count);
        }
        if self.part_depths.contains(&0) {
            invalid!("every part needs at least one layer");
        }
        if self.latent_dim == 0 || self.style_dim == 0 || self.hidden_width == 0 || self.mapping_layers == 0 {
            invalid!("network sizes must be positive");
        }
        if self.window_n < 2 || self.window_n % 2 != 0 {
            invalid!("window exponent {} must be even and at least 2", self.window_n);
        }
        if !(self.window_m > 0.0) {
            invalid!("window_m must be positive");
        }
        if !(self.alpha_init > 0.0) || !self.alpha_init.is_finite() {
            invalid!("alpha_init must be positive");
        }
        if !(self.box_margin >= 0.0) {
            invalid!("box_margin must be nonnegative");
        }
        if matches!(self.sdf_grid, Some(r) if r < 2) {
            invalid!("sdf grid resolution must be at least 2");
        }
        Ok(())
    }
}

/// Maps `x` into the box's [-1, 1]^3 frame.
pub fn normalize_local(x: &Vec3, b: &PartBox) -> Result<Vec3> {
    let ext = b.extent();
    if (0..3).any(|a| !(ext[a] > 0.0)) {
        invalid!("degenerate box {:?}..{:?}", b.min, b.max);
    }
    Ok(Vec3::from_fn(|a, _| (2.0 * x[a] - (b.min[a] + b.max[a])) / ext[a]))
}

/// exp(-m * sum_i x_i^n)
pub fn window_weight(xh: &Vec3, m: f64, n: u32) -> f64 {
    (-m * xh.iter().map(|c| c.powi(n as i32)).sum::<f64>()).exp()
}

/// Density of an SDF sample: sigmoid(-d / alpha) / alpha.
pub fn sdf_to_density(d: f64, alpha: f64) -> f64 {
    stable_sigmoid(-d / alpha) / alpha
}

/// Canonical part boxes plus template geometry for one body model.
#[derive(Clone, Debug)]
pub struct Template {
    pub boxes: PartBoxSet,
    pub sdf: TemplateSdf,
}

impl Template {
    pub fn new(model: &BodyModel, config: &FieldConfig) -> Result<Self> {
        config.validate()?;
        if model.part_count() != config.part_count {
            invalid!("body has {} parts, network expects {}", model.part_count(), config.part_count);
        }
        let boxes = canonical_part_boxes(model, config.box_margin)?;
        let sdf = TemplateSdf::new(&model.vertices, &model.faces, &boxes.union_bounds(), config.sdf_grid)?;
        Ok(Self { boxes, sdf })
    }

    /// Indices of the points inside each canonical box.
    pub fn membership(&self, points: &[Vec3]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.boxes.len()];
        for (i, p) in points.iter().enumerate() {
            for (k, b) in self.boxes.boxes.iter().enumerate() {
                if b.contains(p) {
                    out[k].push(i);
                }
            }
        }
        out
    }
}

/// Result of one composite field query.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub color: Vec3,
    pub sdf: f64,
    pub density: f64,
    pub delta: f64,
    pub grad_delta: Vec3,
}

/// Queries the blended field at one canonical point. Points outside every
/// box have zero density and the background color.
pub fn query_composite(
    gen: &Generator,
    template: &Template,
    film: &Film,
    x: &Vec3,
    dir: &Vec3,
    background: &Vec3,
) -> Result<FieldSample> {
    let tape = Tape::new();
    let params = gen.bind(&tape, false);
    let film = film.bind(&tape, false);
    let xv = tape.leaf(Tensor::row_vector(vec![x.x, x.y, x.z]));
    let dirs = Tensor::row_vector(vec![dir.x, dir.y, dir.z]);
    let d_t = Tensor::scalar(template.sdf.eval(x));
    let out = gen.query(&params, &film, template, xv, &dirs, &d_t, background)?;
    let grad = tape.grad(out.delta, &[xv])[0].value();
    let rgb = out.rgb.value();
    Ok(FieldSample {
        color: Vec3::new(rgb.get(0, 0), rgb.get(0, 1), rgb.get(0, 2)),
        sdf: out.sdf.item(),
        density: out.sigma.item(),
        delta: out.delta.item(),
        grad_delta: Vec3::new(grad.get(0, 0), grad.get(0, 1), grad.get(0, 2)),
    })
}
