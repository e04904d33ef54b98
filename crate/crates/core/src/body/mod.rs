//! Procedural articulated body: skeleton, skinning, blend shapes, and
//! (inverse) linear blend skinning.

mod grid;
mod io;
mod toy;

use crate::error::{bad_data, invalid, Error, Result};
use crate::math::{self, Mat4, Vec3};

pub use grid::VertexGrid;
pub use io::{body_from_json, body_to_json, load_body, save_body};
pub use toy::{default_part_depths, make_toy_body, PartKind, HEAD_JOINT, JOINT_NAMES, PART_NAMES};

/// Maximum number of body parts (and part subnetworks).
pub const MAX_PARTS: usize = 16;

/// Default neighbor count for inverse skinning.
pub const DEFAULT_K_NEIGHBORS: usize = 4;

/// Clamp applied to neighbor distances before inverse-distance weighting (meters).
pub const INVERSE_DISTANCE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct BodyModel {
    /// Canonical rest-pose vertex positions in meters.
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Rest joint locations.
    pub joints: Vec<Vec3>,
    /// Parent joint of each joint; `None` only for the root at index 0.
    pub parents: Vec<Option<usize>>,
    /// Sparse `(joint, weight)` pairs per vertex.
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    /// `shape_basis[v][s]` is the offset of vertex `v` per unit of shape coefficient `s`.
    pub shape_basis: Vec<Vec<Vec3>>,
    /// `pose_basis[v][p]` is the offset of vertex `v` per unit of pose feature `p`.
    /// Either empty for every vertex or `9 * (joints - 1)` wide.
    pub pose_basis: Vec<Vec<Vec3>>,
    pub vertex_part: Vec<usize>,
    pub part_joint: Vec<usize>,
}

impl BodyModel {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn part_count(&self) -> usize {
        self.part_joint.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_basis.first().map_or(0, Vec::len)
    }

    pub fn pose_basis_dim(&self) -> usize {
        self.pose_basis.first().map_or(0, Vec::len)
    }

    pub fn pose_feature_dim(&self) -> usize {
        9 * self.joint_count().saturating_sub(1)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        let nj = self.joints.len();
        if nj == 0 {
            bad_data!("body has no joints");
        }
        if self.parents.len() != nj {
            bad_data!("parents has {} entries for {} joints", self.parents.len(), nj);
        }
        if self.parents[0].is_some() {
            bad_data!("joint 0 must be the root");
        }
        for (k, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < k => {}
                Some(p) => bad_data!("joint {k} has parent {p}; parents must precede children"),
                None => bad_data!("joint {k} has no parent; only joint 0 may be a root"),
            }
        }
        for (name, len) in [
            ("skin_weights", self.skin_weights.len()),
            ("shape_basis", self.shape_basis.len()),
            ("pose_basis", self.pose_basis.len()),
            ("vertex_part", self.vertex_part.len()),
        ] {
            if len != nv {
                bad_data!("{name} has {len} entries for {nv} vertices");
            }
        }
        for (v, w) in self.skin_weights.iter().enumerate() {
            if w.is_empty() {
                bad_data!("vertex {v} has no skinning weights");
            }
            let mut sum = 0.0;
            for &(j, x) in w {
                if j >= nj {
                    bad_data!("vertex {v} weights joint {j} out of range");
                }
                if !(x >= 0.0) {
                    bad_data!("vertex {v} has negative or NaN weight {x}");
                }
                sum += x;
            }
            if (sum - 1.0).abs() > 1e-6 {
                bad_data!("vertex {v} weights sum to {sum}");
            }
        }
        let sd = self.shape_dim();
        if self.shape_basis.iter().any(|b| b.len() != sd) {
            bad_data!("shape_basis rows have inconsistent widths");
        }
        let pd = self.pose_basis_dim();
        if self.pose_basis.iter().any(|b| b.len() != pd) {
            bad_data!("pose_basis rows have inconsistent widths");
        }
        if pd != 0 && pd != self.pose_feature_dim() {
            bad_data!("pose_basis width {pd} must be 0 or {}", self.pose_feature_dim());
        }
        let np = self.part_joint.len();
        if np == 0 || np > MAX_PARTS {
            bad_data!("part count {np} outside 1..={MAX_PARTS}");
        }
        if let Some(j) = self.part_joint.iter().find(|&&j| j >= nj) {
            bad_data!("part_joint references joint {j} out of range");
        }
        let mut owned = vec![0usize; np];
        for (v, &p) in self.vertex_part.iter().enumerate() {
            if p >= np {
                bad_data!("vertex {v} has part label {p} out of range");
            }
            owned[p] += 1;
        }
        if let Some(p) = owned.iter().position(|&c| c == 0) {
            bad_data!("part {p} owns no vertices");
        }
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i >= nv) {
                bad_data!("face {f} indexes a missing vertex");
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                bad_data!("face {f} is degenerate");
            }
        }
        if self.vertices.iter().chain(&self.joints).any(|v| !v.iter().all(|x| x.is_finite())) {
            bad_data!("non-finite coordinate");
        }
        Ok(())
    }

    /// Axis-aligned bounds of the rest-pose vertices.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        point_bounds(&self.vertices)
    }

    /// Returns true when every edge is shared by exactly two faces.
    pub fn is_edge_manifold(&self) -> bool {
        let mut edges = std::collections::HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        edges.values().all(|&c| c == 2)
    }
}

pub(crate) fn point_bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    /// Per-joint axis-angle rotation (radians times unit axis).
    pub axis_angle: Vec<Vec3>,
    pub global_translation: Vec3,
}

impl Pose {
    pub fn zero(joints: usize) -> Self {
        Self { axis_angle: vec![Vec3::zeros(); joints], global_translation: Vec3::zeros() }
    }

    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.axis_angle.len() != model.joint_count() {
            invalid!("pose has {} joints, model has {}", self.axis_angle.len(), model.joint_count());
        }
        for (k, aa) in self.axis_angle.iter().enumerate() {
            let n = aa.norm();
            if !(n < std::f64::consts::PI) {
                invalid!("joint {k} rotation angle {n} must be below pi");
            }
        }
        if !self.global_translation.iter().all(|x| x.is_finite()) {
            invalid!("non-finite global translation");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub coefficients: Vec<f64>,
}

impl Shape {
    pub fn zero(dim: usize) -> Self {
        Self { coefficients: vec![0.0; dim] }
    }

    pub fn validate(&self, model: &BodyModel) -> Result<()> {
        if self.coefficients.len() != model.shape_dim() {
            invalid!("shape has {} coefficients, model expects {}", self.coefficients.len(), model.shape_dim());
        }
        Ok(())
    }
}

/// World transform of every joint. Each maps rest-pose points to posed points.
pub fn forward_kinematics(model: &BodyModel, pose: &Pose) -> Result<Vec<Mat4>> {
    pose.validate(model)?;
    let mut transforms: Vec<Mat4> = Vec::with_capacity(model.joint_count());
    for (k, joint) in model.joints.iter().enumerate() {
        let r = math::rodrigues(&pose.axis_angle[k]);
        let local = math::affine(&r, &(joint - r * joint));
        let g = match model.parents[k] {
            None => math::translation(&pose.global_translation) * local,
            Some(p) => transforms[p] * local,
        };
        transforms.push(g);
    }
    Ok(transforms)
}

/// Pose-corrective features: `R_k - I` flattened row-major for every non-root joint.
pub fn pose_features(pose: &Pose) -> Vec<f64> {
    pose.axis_angle
        .iter()
        .skip(1)
        .flat_map(|aa| {
            let d = math::rodrigues(aa) - crate::math::Mat3::identity();
            (0..3).flat_map(move |r| (0..3).map(move |c| d[(r, c)]))
        })
        .collect()
}

/// A body deformed to a specific shape and pose.
#[derive(Clone, Debug)]
pub struct PosedBody {
    pub posed_vertices: Vec<Vec3>,
    pub joint_transforms: Vec<Mat4>,
    /// Per-vertex skinning transform including the blend-shape translation.
    pub vertex_transforms: Vec<Mat4>,
    pub vertex_inverses: Vec<Mat4>,
    /// Shape plus pose blend offset of every vertex, in canonical space.
    pub blend_offsets: Vec<Vec3>,
    pub spatial_index: VertexGrid,
}

pub fn deform(model: &BodyModel, shape: &Shape, pose: &Pose) -> Result<PosedBody> {
    shape.validate(model)?;
    let joint_transforms = forward_kinematics(model, pose)?;
    let features = if model.pose_basis_dim() > 0 { pose_features(pose) } else { Vec::new() };
    let nv = model.vertices.len();
    let mut posed_vertices = Vec::with_capacity(nv);
    let mut vertex_transforms = Vec::with_capacity(nv);
    let mut vertex_inverses = Vec::with_capacity(nv);
    let mut blend_offsets = Vec::with_capacity(nv);
    for v in 0..nv {
        let mut offset = Vec3::zeros();
        for (b, c) in model.shape_basis[v].iter().zip(&shape.coefficients) {
            offset += b * *c;
        }
        for (b, f) in model.pose_basis[v].iter().zip(&features) {
            offset += b * *f;
        }
        let mut blended = Mat4::zeros();
        for &(j, w) in &model.skin_weights[v] {
            blended += joint_transforms[j] * w;
        }
        let m = blended * math::translation(&offset);
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Numeric(format!("skinning transform of vertex {v} is singular")))?;
        posed_vertices.push(math::transform_point(&m, &model.vertices[v]));
        vertex_transforms.push(m);
        vertex_inverses.push(inv);
        blend_offsets.push(offset);
    }
    let spatial_index = VertexGrid::build(&posed_vertices);
    Ok(PosedBody { posed_vertices, joint_transforms, vertex_transforms, vertex_inverses, blend_offsets, spatial_index })
}

impl PosedBody {
    /// Maps an observation-space point back to canonical space by
    /// inverse-distance blending the inverse skinning transforms of the
    /// nearest posed vertices.
    pub fn inverse_lbs(&self, point: &Vec3, k_neighbors: usize) -> Result<Vec3> {
        if self.posed_vertices.is_empty() {
            invalid!("posed body has no vertices");
        }
        if k_neighbors == 0 {
            invalid!("k_neighbors must be at least 1");
        }
        Ok(self.inverse_lbs_unchecked(point, k_neighbors))
    }

    pub(crate) fn inverse_lbs_unchecked(&self, point: &Vec3, k_neighbors: usize) -> Vec3 {
        let neighbors = self.spatial_index.nearest(point, k_neighbors);
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for (j, dist) in neighbors {
            let w = 1.0 / dist.max(INVERSE_DISTANCE_EPS);
            acc += math::transform_point(&self.vertex_inverses[j], point) * w;
            total += w;
        }
        acc / total
    }
}
