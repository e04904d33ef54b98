//! A license-free procedural humanoid: 24-joint SMPL-style skeleton with one
//! closed capsule mesh per body part.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::math::Vec3;

use super::{BodyModel, MAX_PARTS};

pub const JOINT_NAMES: [&str; 24] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
    "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
];

pub const HEAD_JOINT: usize = 15;

const PARENTS: [Option<usize>; 24] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Left-side and central joint positions; right-side joints mirror x.
const JOINTS: [[f64; 3]; 24] = [
    [0.0, 0.93, 0.0],
    [0.09, 0.88, 0.0],
    [-0.09, 0.88, 0.0],
    [0.0, 1.03, 0.0],
    [0.09, 0.49, 0.0],
    [-0.09, 0.49, 0.0],
    [0.0, 1.15, 0.0],
    [0.09, 0.09, 0.0],
    [-0.09, 0.09, 0.0],
    [0.0, 1.30, 0.0],
    [0.09, 0.03, 0.10],
    [-0.09, 0.03, 0.10],
    [0.0, 1.43, 0.0],
    [0.08, 1.38, 0.0],
    [-0.08, 1.38, 0.0],
    [0.0, 1.54, 0.0],
    [0.21, 1.40, 0.0],
    [-0.21, 1.40, 0.0],
    [0.22, 1.12, 0.0],
    [-0.22, 1.12, 0.0],
    [0.22, 0.88, 0.0],
    [-0.22, 0.88, 0.0],
    [0.22, 0.80, 0.0],
    [-0.22, 0.80, 0.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartKind {
    Head,
    Trunk,
    Limb,
    Extremity,
}

impl PartKind {
    /// Default FiLM-SIREN depth: more layers for more detailed parts.
    pub fn default_depth(self) -> usize {
        match self {
            PartKind::Head => 8,
            PartKind::Trunk => 6,
            PartKind::Limb => 4,
            PartKind::Extremity => 3,
        }
    }
}

struct Capsule {
    name: &'static str,
    kind: PartKind,
    joint: usize,
    /// Proximal end, next to the driving joint.
    a: [f64; 3],
    b: [f64; 3],
    rx: f64,
    rz: f64,
    /// Part this capsule merges into when fewer parts are requested.
    merge_into: usize,
}

const fn cap(
    name: &'static str,
    kind: PartKind,
    joint: usize,
    a: [f64; 3],
    b: [f64; 3],
    rx: f64,
    rz: f64,
    merge_into: usize,
) -> Capsule {
    Capsule { name, kind, joint, a, b, rx, rz, merge_into }
}

const fn mirror(p: [f64; 3]) -> [f64; 3] {
    [-p[0], p[1], p[2]]
}

use PartKind::*;

/// Ordered so that every capsule merges into a lower index.
const CAPSULES: [Capsule; MAX_PARTS] = [
    cap("pelvis", Trunk, 0, [0.0, 0.96, 0.0], [0.0, 0.90, 0.0], 0.13, 0.10, 0),
    cap("torso", Trunk, 6, [0.0, 1.10, 0.0], [0.0, 1.32, 0.0], 0.15, 0.10, 0),
    cap("left_thigh", Limb, 1, [0.09, 0.84, 0.0], [0.09, 0.53, 0.0], 0.07, 0.07, 0),
    cap("right_thigh", Limb, 2, mirror([0.09, 0.84, 0.0]), mirror([0.09, 0.53, 0.0]), 0.07, 0.07, 0),
    cap("head", Head, 15, [0.0, 1.56, 0.0], [0.0, 1.62, 0.0], 0.08, 0.08, 1),
    cap("left_upper_arm", Limb, 16, [0.22, 1.37, 0.0], [0.22, 1.15, 0.0], 0.045, 0.045, 1),
    cap("right_upper_arm", Limb, 17, mirror([0.22, 1.37, 0.0]), mirror([0.22, 1.15, 0.0]), 0.045, 0.045, 1),
    cap("left_calf", Limb, 4, [0.09, 0.47, 0.0], [0.09, 0.14, 0.0], 0.05, 0.05, 2),
    cap("right_calf", Limb, 5, mirror([0.09, 0.47, 0.0]), mirror([0.09, 0.14, 0.0]), 0.05, 0.05, 3),
    cap("neck", Limb, 12, [0.0, 1.42, 0.0], [0.0, 1.50, 0.0], 0.05, 0.05, 1),
    cap("left_forearm", Limb, 18, [0.22, 1.10, 0.0], [0.22, 0.90, 0.0], 0.04, 0.04, 5),
    cap("right_forearm", Limb, 19, mirror([0.22, 1.10, 0.0]), mirror([0.22, 0.90, 0.0]), 0.04, 0.04, 6),
    cap("left_foot", Extremity, 7, [0.09, 0.045, -0.02], [0.09, 0.045, 0.13], 0.045, 0.045, 7),
    cap("right_foot", Extremity, 8, mirror([0.09, 0.045, -0.02]), mirror([0.09, 0.045, 0.13]), 0.045, 0.045, 8),
    cap("left_hand", Extremity, 20, [0.22, 0.85, 0.0], [0.22, 0.77, 0.0], 0.035, 0.035, 10),
    cap("right_hand", Extremity, 21, mirror([0.22, 0.85, 0.0]), mirror([0.22, 0.77, 0.0]), 0.035, 0.035, 11),
];

pub const PART_NAMES: [&str; MAX_PARTS] = {
    let mut names = [""; MAX_PARTS];
    let mut i = 0;
    while i < MAX_PARTS {
        names[i] = CAPSULES[i].name;
        i += 1;
    }
    names
};

const TARGET_HEIGHT: f64 = 1.70;

/// Part label a capsule ends up with when the body is split into `part_count` parts.
fn merged_part(capsule: usize, part_count: usize) -> usize {
    let mut c = capsule;
    while c >= part_count {
        c = CAPSULES[c].merge_into;
    }
    c
}

/// Default per-part network depth for a toy body split into `part_count` parts.
pub fn default_part_depths(part_count: usize) -> Vec<usize> {
    (0..part_count).map(|p| CAPSULES[p].kind.default_depth()).collect()
}

/// Builds the procedural humanoid. `part_count` in `2..=16`; `verts_per_part`
/// is the vertex budget of each capsule; `seed` jitters the azimuthal sampling
/// of the capsule rings.
pub fn make_toy_body(part_count: usize, verts_per_part: usize, seed: u64) -> Result<BodyModel> {
    if !(2..=MAX_PARTS).contains(&part_count) {
        invalid!("part_count {part_count} outside 2..={MAX_PARTS}");
    }
    if verts_per_part < 8 {
        invalid!("verts_per_part {verts_per_part} must be at least 8");
    }
    let segments = (((2 * (verts_per_part - 2)) as f64).sqrt().round() as usize).max(3);
    let rings = ((verts_per_part - 2) / segments).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vertex_part = Vec::new();
    let mut vertex_capsule = Vec::new();
    for (ci, capsule) in CAPSULES.iter().enumerate() {
        let phase = rng.random_range(0.0..std::f64::consts::TAU / segments as f64);
        let base = vertices.len();
        let (verts, tris) = capsule_mesh(capsule, rings, segments, phase);
        vertices.extend(verts);
        faces.extend(tris.into_iter().map(|f| f.map(|i| i + base)));
        let n = vertices.len() - base;
        vertex_part.extend(std::iter::repeat_n(merged_part(ci, part_count), n));
        vertex_capsule.extend(std::iter::repeat_n(ci, n));
    }

    // normalize to the target height with the soles at y = 0
    let (lo, hi) = super::point_bounds(&vertices);
    let scale = TARGET_HEIGHT / (hi.y - lo.y);
    let lift = Vec3::new(0.0, -lo.y, 0.0);
    let normalize = |p: Vec3| (p + lift) * scale;
    let vertices: Vec<Vec3> = vertices.into_iter().map(normalize).collect();
    let joints: Vec<Vec3> = JOINTS.iter().map(|j| normalize(Vec3::from(*j))).collect();

    let mut skin_weights = Vec::with_capacity(vertices.len());
    let mut shape_basis = Vec::with_capacity(vertices.len());
    for (v, p) in vertices.iter().enumerate() {
        let capsule = &CAPSULES[vertex_capsule[v]];
        let a = normalize(Vec3::from(capsule.a));
        let b = normalize(Vec3::from(capsule.b));
        let axis = b - a;
        let s = ((p - a).dot(&axis) / axis.norm_squared()).clamp(0.0, 1.0);
        skin_weights.push(capsule_weights(capsule.joint, s));
        let radial = p - (a + axis * s);
        let radial = if radial.norm() > 1e-12 { radial.normalize() } else { Vec3::zeros() };
        shape_basis.push(vec![Vec3::new(0.0, 0.05 * p.y, 0.0), radial * 0.02]);
    }

    let part_joint = (0..part_count).map(|p| CAPSULES[p].joint).collect();
    let nv = vertices.len();
    let model = BodyModel {
        vertices,
        faces,
        joints,
        parents: PARENTS.to_vec(),
        skin_weights,
        shape_basis,
        pose_basis: vec![Vec::new(); nv],
        vertex_part,
        part_joint,
    };
    model.validate()?;
    Ok(model)
}

/// Rigid to the driving joint except near the proximal end, where weight
/// ramps toward the parent joint (half-half at the joint itself).
fn capsule_weights(joint: usize, s: f64) -> Vec<(usize, f64)> {
    const BLEND: f64 = 0.25;
    match PARENTS[joint] {
        Some(parent) if s < BLEND => {
            let wp = 0.5 * (1.0 - s / BLEND);
            vec![(joint, 1.0 - wp), (parent, wp)]
        }
        _ => vec![(joint, 1.0)],
    }
}

/// Closed capsule surface: two poles plus `rings` rings of `segments` vertices,
/// faces oriented outward.
fn capsule_mesh(c: &Capsule, rings: usize, segments: usize, phase: f64) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    use std::f64::consts::{PI, TAU};
    let a = Vec3::from(c.a);
    let b = Vec3::from(c.b);
    let u = (b - a).normalize();
    let helper = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (helper - u * helper.dot(&u)).normalize();
    let e2 = u.cross(&e1);
    let r_axial = c.rx.min(c.rz);

    let mut verts = vec![a - u * r_axial];
    for i in 1..=rings {
        let phi = PI * i as f64 / (rings + 1) as f64;
        let center = if phi <= PI / 2.0 { a } else { b };
        for s in 0..segments {
            let psi = phase + TAU * s as f64 / segments as f64;
            let radial = e1 * (c.rx * psi.cos()) + e2 * (c.rz * psi.sin());
            verts.push(center - u * (r_axial * phi.cos()) + radial * phi.sin());
        }
    }
    verts.push(b + u * r_axial);
    let last = verts.len() - 1;
    let ring = |i: usize, s: usize| 1 + (i - 1) * segments + s % segments;

    let mut tris = Vec::new();
    for s in 0..segments {
        tris.push([0, ring(1, s + 1), ring(1, s)]);
    }
    for i in 1..rings {
        for s in 0..segments {
            tris.push([ring(i, s), ring(i, s + 1), ring(i + 1, s + 1)]);
            tris.push([ring(i, s), ring(i + 1, s + 1), ring(i + 1, s)]);
        }
    }
    for s in 0..segments {
        tris.push([last, ring(rings, s), ring(rings, s + 1)]);
    }
    let volume: f64 = tris.iter().map(|t| verts[t[0]].dot(&verts[t[1]].cross(&verts[t[2]]))).sum();
    if volume < 0.0 {
        for t in &mut tris {
            t.swap(1, 2);
        }
    }
    (verts, tris)
}
