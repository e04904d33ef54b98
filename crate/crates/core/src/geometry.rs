//! Part bounding boxes, pinhole camera rays, and ray culling against posed boxes.

use std::fmt::Write as _;

use crate::body::{BodyModel, PosedBody};
use crate::error::{bad_data, invalid, Result};
use crate::math::{self, Mat3, Mat4, Vec3};

pub const DEFAULT_BOX_MARGIN: f64 = 0.05;

/// Axis-aligned box in canonical space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl PartBox {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(b.x, b.y, b.z),
            Vec3::new(a.x, b.y, b.z),
        ]
    }
}

/// A canonical box carried by a rigid transform into observation space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub local: PartBox,
    pub transform: Mat4,
    pub inverse: Mat4,
}

impl OrientedBox {
    pub fn new(local: PartBox, transform: Mat4) -> Self {
        Self { local, transform, inverse: math::rigid_inverse(&transform) }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.local.contains(&math::transform_point(&self.inverse, p))
    }

    pub fn corners(&self) -> [Vec3; 8] {
        self.local.corners().map(|c| math::transform_point(&self.transform, &c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartBoxSet {
    pub boxes: Vec<PartBox>,
    pub margin: f64,
    pub posed: Option<Vec<OrientedBox>>,
}

impl PartBoxSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Bounds of the union of all canonical boxes.
    pub fn union_bounds(&self) -> PartBox {
        let mut out = PartBox { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) };
        for b in &self.boxes {
            out.min = out.min.inf(&b.min);
            out.max = out.max.sup(&b.max);
        }
        out
    }
}

/// Per-part axis-aligned bounds of the rest-pose vertices, inflated by `margin`.
pub fn canonical_part_boxes(model: &BodyModel, margin: f64) -> Result<PartBoxSet> {
    if !(margin >= 0.0) {
        invalid!("box margin {margin} must be nonnegative");
    }
    let np = model.part_count();
    let mut lo = vec![Vec3::repeat(f64::INFINITY); np];
    let mut hi = vec![Vec3::repeat(f64::NEG_INFINITY); np];
    let mut count = vec![0usize; np];
    for (v, &p) in model.vertices.iter().zip(&model.vertex_part) {
        lo[p] = lo[p].inf(v);
        hi[p] = hi[p].sup(v);
        count[p] += 1;
    }
    if let Some(p) = count.iter().position(|&c| c == 0) {
        bad_data!("part {p} has no vertices");
    }
    let m = Vec3::repeat(margin);
    let boxes = lo
        .into_iter()
        .zip(hi)
        .map(|(a, b)| PartBox { min: a - m, max: b + m })
        .collect::<Vec<_>>();
    if let Some(k) = boxes.iter().position(|b| (0..3).any(|a| !(b.min[a] < b.max[a]))) {
        bad_data!("part {k} box is degenerate");
    }
    Ok(PartBoxSet { boxes, margin, posed: None })
}

/// Rigidly moves every canonical box with its part's driving joint, shifted by
/// the mean blend-shape offset of the part's vertices.
pub fn pose_boxes(boxes: &PartBoxSet, posed: &PosedBody, model: &BodyModel) -> Result<PartBoxSet> {
    if boxes.len() != model.part_count() {
        invalid!("{} boxes for a {}-part model", boxes.len(), model.part_count());
    }
    if posed.blend_offsets.len() != model.vertices.len() {
        invalid!("posed body does not belong to this model");
    }
    let np = model.part_count();
    let mut shift = vec![Vec3::zeros(); np];
    let mut count = vec![0usize; np];
    for (o, &p) in posed.blend_offsets.iter().zip(&model.vertex_part) {
        shift[p] += o;
        count[p] += 1;
    }
    let oriented = (0..np)
        .map(|k| {
            let g = posed.joint_transforms[model.part_joint[k]];
            let t = g * math::translation(&(shift[k] / count[k].max(1) as f64));
            OrientedBox::new(boxes.boxes[k], t)
        })
        .collect();
    Ok(PartBoxSet { boxes: boxes.boxes.clone(), margin: boxes.margin, posed: Some(oriented) })
}

/// Pinhole camera. `rotation` maps camera axes (x right, y down, z forward)
/// to world axes and `translation` is the camera center in world space.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target` with principal point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation: Mat3::from_columns(&[x, y, z]),
            translation: eye,
            width,
            height,
        }
    }

    /// Frontal full-body framing of a standing 1.7 m body facing +z, which
    /// fills 80% of the image height.
    pub fn full_body(width: usize, height: usize) -> Self {
        Self::orbit(0.0, width, height)
    }

    /// Full-body framing from a viewpoint rotated by `yaw` radians about the
    /// vertical axis (0 is frontal).
    pub fn orbit(yaw: f64, width: usize, height: usize) -> Self {
        const DISTANCE: f64 = 4.0;
        const CENTER_Y: f64 = 0.85;
        let focal = 0.8 * height as f64 * DISTANCE / 1.7;
        let eye = Vec3::new(DISTANCE * yaw.sin(), CENTER_Y, DISTANCE * yaw.cos());
        Self::look_at(eye, Vec3::new(0.0, CENTER_Y, 0.0), Vec3::y(), focal, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            invalid!("camera image size {}x{} is empty", self.width, self.height);
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            invalid!("focal lengths must be positive");
        }
        let r = &self.rotation;
        if (r.transpose() * r - Mat3::identity()).abs().max() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            invalid!("camera rotation is not a proper rotation");
        }
        Ok(())
    }

    /// Projects a world point to (row, col) continuous pixel coordinates.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.rotation.transpose() * (p - self.translation);
        if c.z <= 1e-9 {
            return None;
        }
        Some((self.fy * c.y / c.z + self.cy, self.fx * c.x / c.z + self.cx))
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, p: &Vec3) -> f64 {
        (self.rotation.transpose() * (p - self.translation)).z
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySegment {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub pixel: (usize, usize),
    pub hit: bool,
}

impl RaySegment {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// One ray per pixel center, row-major.
pub fn generate_rays(cam: &Camera) -> Result<Vec<RaySegment>> {
    cam.validate()?;
    let mut rays = Vec::with_capacity(cam.width * cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            rays.push(pixel_ray(cam, row, col));
        }
    }
    Ok(rays)
}

pub fn pixel_ray(cam: &Camera, row: usize, col: usize) -> RaySegment {
    let d_cam = Vec3::new((col as f64 + 0.5 - cam.cx) / cam.fx, (row as f64 + 0.5 - cam.cy) / cam.fy, 1.0);
    RaySegment {
        origin: cam.translation,
        direction: (cam.rotation * d_cam).normalize(),
        t_near: 0.0,
        t_far: 0.0,
        pixel: (row, col),
        hit: false,
    }
}

/// Slab test in the box frame. Returns the parametric entry and exit
/// distances, with entry clamped to zero when the origin is inside.
pub fn ray_obb_intersect(ray: &RaySegment, obb: &OrientedBox) -> Option<(f64, f64)> {
    let o = math::transform_point(&obb.inverse, &ray.origin);
    let d = math::transform_vector(&obb.inverse, &ray.direction);
    ray_aabb_intersect(&o, &d, &obb.local)
}

pub fn ray_aabb_intersect(o: &Vec3, d: &Vec3, b: &PartBox) -> Option<(f64, f64)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (t1, t2) = ((b.min[a] - o[a]) * inv, (b.max[a] - o[a]) * inv);
        t_enter = t_enter.max(t1.min(t2));
        t_exit = t_exit.min(t1.max(t2));
    }
    let t_enter = t_enter.max(0.0);
    if t_exit <= 0.0 || t_enter >= t_exit {
        return None;
    }
    Some((t_enter, t_exit))
}

/// Marks rays that cross any posed box and sets their `[t_near, t_far]` to the
/// union span of all crossings.
pub fn filter_rays(rays: &mut [RaySegment], boxes: &PartBoxSet) -> Result<usize> {
    let Some(posed) = &boxes.posed else { invalid!("boxes have not been posed") };
    let mut hits = 0;
    for ray in rays.iter_mut() {
        let mut span: Option<(f64, f64)> = None;
        for obb in posed {
            if let Some((a, b)) = ray_obb_intersect(ray, obb) {
                span = Some(match span {
                    None => (a, b),
                    Some((lo, hi)) => (lo.min(a), hi.max(b)),
                });
            }
        }
        match span {
            Some((near, far)) => {
                ray.t_near = near;
                ray.t_far = far;
                ray.hit = true;
                hits += 1;
            }
            None => {
                ray.t_near = 0.0;
                ray.t_far = 0.0;
                ray.hit = false;
            }
        }
    }
    Ok(hits)
}

const BOX_TRIANGLES: [[usize; 3]; 12] = [
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

/// Wavefront OBJ with 8 vertices and 12 triangles per posed box, in part order.
pub fn boxes_to_obj(boxes: &PartBoxSet) -> Result<String> {
    let Some(posed) = &boxes.posed else { invalid!("boxes have not been posed") };
    let mut out = String::new();
    for (k, obb) in posed.iter().enumerate() {
        let _ = writeln!(out, "o part_{k:02}");
        for c in obb.corners() {
            let _ = writeln!(out, "v {:.6} {:.6} {:.6}", c.x, c.y, c.z);
        }
        for t in BOX_TRIANGLES {
            let base = 8 * k + 1;
            let _ = writeln!(out, "f {} {} {}", t[0] + base, t[1] + base, t[2] + base);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{deform, make_toy_body, Pose, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> PartBox {
        PartBox { min: Vec3::repeat(-0.5), max: Vec3::repeat(0.5) }
    }

    fn ray(o: Vec3, d: Vec3) -> RaySegment {
        RaySegment { origin: o, direction: d.normalize(), t_near: 0.0, t_far: 0.0, pixel: (0, 0), hit: false }
    }

    fn random_pose(seed: u64, max_deg: f64) -> Pose {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pose = Pose::zero(24);
        for aa in pose.axis_angle.iter_mut() {
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                .normalize();
            *aa = axis * rng.random_range(0.0..max_deg.to_radians());
        }
        pose
    }

    #[test]
    fn boxes_contain_their_part_vertices() {
        let model = make_toy_body(16, 32, 0).unwrap();
        let set = canonical_part_boxes(&model, 0.0).unwrap();
        for (v, &p) in model.vertices.iter().zip(&model.vertex_part) {
            assert!(set.boxes[p].contains(v));
        }
        let wide = canonical_part_boxes(&model, 0.05).unwrap();
        for (a, b) in set.boxes.iter().zip(&wide.boxes) {
            assert!((b.extent() - a.extent() - Vec3::repeat(0.10)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn head_box_is_about_a_quarter_meter_tall() {
        let model = make_toy_body(16, 64, 0).unwrap();
        let set = canonical_part_boxes(&model, 0.0).unwrap();
        let head = crate::body::PART_NAMES.iter().position(|n| *n == "head").unwrap();
        let h = set.boxes[head].extent().y;
        assert!((h - 0.25).abs() <= 0.05, "head box height {h}");
    }

    #[test]
    fn zero_pose_boxes_are_identity() {
        let model = make_toy_body(16, 16, 0).unwrap();
        let posed = deform(&model, &Shape::zero(2), &Pose::zero(24)).unwrap();
        let set = pose_boxes(&canonical_part_boxes(&model, 0.05).unwrap(), &posed, &model).unwrap();
        for obb in set.posed.unwrap() {
            assert!((obb.transform - Mat4::identity()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn root_rotation_rotates_every_box() {
        let model = make_toy_body(16, 16, 0).unwrap();
        let mut pose = Pose::zero(24);
        pose.axis_angle[0] = Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let posed = deform(&model, &Shape::zero(2), &pose).unwrap();
        let set = pose_boxes(&canonical_part_boxes(&model, 0.05).unwrap(), &posed, &model).unwrap();
        let rz = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        for obb in set.posed.unwrap() {
            assert!((math::rotation_part(&obb.transform) - rz).abs().max() < 1e-12);
        }
    }

    #[test]
    fn posed_boxes_contain_posed_part_vertices() {
        let model = make_toy_body(16, 64, 0).unwrap();
        let pose = random_pose(7, 30.0);
        let posed = deform(&model, &Shape::zero(2), &pose).unwrap();
        let set = pose_boxes(&canonical_part_boxes(&model, 0.05).unwrap(), &posed, &model).unwrap();
        let obbs = set.posed.unwrap();
        for k in 0..16 {
            let (mut inside, mut total) = (0, 0);
            for (v, p) in posed.posed_vertices.iter().enumerate() {
                if model.vertex_part[v] == k {
                    total += 1;
                    inside += obbs[k].contains(p) as usize;
                }
            }
            assert!(inside as f64 >= 0.99 * total as f64, "part {k}: {inside}/{total}");
        }
    }

    #[test]
    fn single_pixel_camera_looks_down_z() {
        let cam = Camera {
            fx: 1.0,
            fy: 1.0,
            cx: 0.5,
            cy: 0.5,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            width: 1,
            height: 1,
        };
        let rays = generate_rays(&cam).unwrap();
        assert_eq!(rays.len(), 1);
        assert!((rays[0].direction - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn ray_count_and_unit_directions() {
        let cam = Camera::full_body(256, 512);
        let rays = generate_rays(&cam).unwrap();
        assert_eq!(rays.len(), 131072);
        assert!(rays.iter().all(|r| (r.direction.norm() - 1.0).abs() < 1e-6));
        assert!(generate_rays(&Camera { width: 0, ..cam }).is_err());
    }

    #[test]
    fn principal_point_ray_follows_optical_axis() {
        let cam = Camera::orbit(0.7, 8, 8);
        let axis = cam.rotation * Vec3::z();
        // pixel (3, 3) has its center at (3.5, 3.5)
        let centered = Camera { cx: 3.5, cy: 3.5, ..cam.clone() };
        let r = pixel_ray(&centered, 3, 3);
        assert!((r.origin - cam.translation).norm() < 1e-15);
        assert!((r.direction - axis).norm() < 1e-12);
    }

    #[test]
    fn slab_test_analytic_cases() {
        let obb = OrientedBox::new(unit_box(), Mat4::identity());
        let (a, b) = ray_obb_intersect(&ray(Vec3::new(-2.0, 0.0, 0.0), Vec3::x()), &obb).unwrap();
        assert!((a - 1.5).abs() < 1e-12 && (b - 2.5).abs() < 1e-12);
        assert!(ray_obb_intersect(&ray(Vec3::new(-2.0, 2.0, 0.0), Vec3::x()), &obb).is_none());
        let (a, b) = ray_obb_intersect(&ray(Vec3::zeros(), Vec3::new(0.3, 0.2, 1.0)), &obb).unwrap();
        assert_eq!(a, 0.0);
        assert!(b > 0.0);
        assert!(ray_obb_intersect(&ray(Vec3::new(2.0, 0.0, 0.0), Vec3::x()), &obb).is_none());
    }

    #[test]
    fn oriented_intersection_equals_canonical_intersection() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let aa = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let obb = OrientedBox::new(unit_box(), math::affine(&math::rodrigues(&aa), &t));
            let r = ray(
                Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            );
            let o = math::transform_point(&obb.inverse, &r.origin);
            let d = math::transform_vector(&obb.inverse, &r.direction);
            let a = ray_obb_intersect(&r, &obb);
            let b = ray_aabb_intersect(&o, &d, &unit_box());
            match (a, b) {
                (None, None) => {}
                (Some(x), Some(y)) => assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12),
                _ => panic!("mismatch"),
            }
        }
    }

    #[test]
    fn camera_facing_away_hits_nothing() {
        let model = make_toy_body(16, 16, 0).unwrap();
        let posed = deform(&model, &Shape::zero(2), &Pose::zero(24)).unwrap();
        let set = pose_boxes(&canonical_part_boxes(&model, 0.05).unwrap(), &posed, &model).unwrap();
        let cam = Camera::look_at(Vec3::new(0.0, 0.85, 4.0), Vec3::new(0.0, 0.85, 8.0), Vec3::y(), 100.0, 32, 64);
        let mut rays = generate_rays(&cam).unwrap();
        assert_eq!(filter_rays(&mut rays, &set).unwrap(), 0);
        assert!(rays.iter().all(|r| !r.hit));
    }

    #[test]
    fn filter_uses_box_interval_and_ignores_order() {
        let model = make_toy_body(16, 16, 0).unwrap();
        let posed = deform(&model, &Shape::zero(2), &Pose::zero(24)).unwrap();
        let set = pose_boxes(&canonical_part_boxes(&model, 0.05).unwrap(), &posed, &model).unwrap();
        let cam = Camera::full_body(32, 64);
        let mut rays = generate_rays(&cam).unwrap();
        filter_rays(&mut rays, &set).unwrap();
        let mut reversed = set.clone();
        reversed.posed.as_mut().unwrap().reverse();
        let mut rays2 = generate_rays(&cam).unwrap();
        filter_rays(&mut rays2, &reversed).unwrap();
        assert_eq!(rays, rays2);
        for r in rays.iter().filter(|r| r.hit) {
            assert!(r.t_near >= 0.0 && r.t_near < r.t_far && r.t_far.is_finite());
        }

        let single = PartBoxSet {
            boxes: vec![unit_box()],
            margin: 0.0,
            posed: Some(vec![OrientedBox::new(unit_box(), math::translation(&Vec3::new(0.0, 0.85, 0.0)))]),
        };
        let mut rays = generate_rays(&cam).unwrap();
        filter_rays(&mut rays, &single).unwrap();
        let center = rays[32 * 32 + 16];
        let oracle = ray_obb_intersect(&center, &single.posed.as_ref().unwrap()[0]).unwrap();
        assert!(center.hit);
        assert_eq!((center.t_near, center.t_far), oracle);
    }

    #[test]
    fn standing_framing_culls_most_rays() {
        let model = make_toy_body(16, 64, 0).unwrap();
        let posed = deform(&model, &Shape::zero(2), &Pose::zero(24)).unwrap();
        let set = pose_boxes(&canonical_part_boxes(&model, 0.05).unwrap(), &posed, &model).unwrap();
        let mut rays = generate_rays(&Camera::full_body(256, 512)).unwrap();
        let hits = filter_rays(&mut rays, &set).unwrap();
        let frac = hits as f64 / rays.len() as f64;
        assert!(frac < 0.5, "hit fraction {frac}");
    }

    #[test]
    fn obj_export_has_eight_vertices_per_box() {
        let model = make_toy_body(16, 16, 0).unwrap();
        let posed = deform(&model, &Shape::zero(2), &Pose::zero(24)).unwrap();
        let set = pose_boxes(&canonical_part_boxes(&model, 0.05).unwrap(), &posed, &model).unwrap();
        let obj = boxes_to_obj(&set).unwrap();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 128);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 192);
    }
}
