//! Small fixed-size linear algebra helpers on top of nalgebra.

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix for an axis-angle vector (axis scaled by angle in radians).
pub fn rodrigues(axis_angle: &Vec3) -> Mat3 {
    let theta = axis_angle.norm();
    let k = skew(axis_angle);
    if theta < 1e-8 {
        // second-order Taylor expansion; exact identity at zero
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let (s, c) = theta.sin_cos();
    Mat3::identity() + (s / theta) * k + ((1.0 - c) / (theta * theta)) * k * k
}

pub fn affine(rotation: &Mat3, translation: &Vec3) -> Mat4 {
    let mut m = Mat4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

pub fn translation(t: &Vec3) -> Mat4 {
    affine(&Mat3::identity(), t)
}

pub fn rotation_part(m: &Mat4) -> Mat3 {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

pub fn translation_part(m: &Mat4) -> Vec3 {
    m.fixed_view::<3, 1>(0, 3).into_owned()
}

pub fn transform_point(m: &Mat4, p: &Vec3) -> Vec3 {
    rotation_part(m) * p + translation_part(m)
}

pub fn transform_vector(m: &Mat4, v: &Vec3) -> Vec3 {
    rotation_part(m) * v
}

/// Inverse of a rigid transform without a general 4x4 inversion.
pub fn rigid_inverse(m: &Mat4) -> Mat4 {
    let rt = rotation_part(m).transpose();
    affine(&rt, &(-(rt * translation_part(m))))
}

/// Largest deviation of `R^T R` from identity and of `det R` from one.
pub fn rigidity_error(m: &Mat4) -> f64 {
    let r = rotation_part(m);
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rodrigues_matches_nalgebra(x in -1.5f64..1.5, y in -1.5f64..1.5, z in -1.5f64..1.5) {
            let v = Vec3::new(x, y, z);
            let ours = rodrigues(&v);
            let theirs = nalgebra::Rotation3::from_scaled_axis(v).into_inner();
            prop_assert!((ours - theirs).abs().max() < 1e-12);
        }
    }

    #[test]
    fn zero_axis_angle_is_identity() {
        assert_eq!(rodrigues(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn rigid_inverse_round_trips() {
        let m = affine(&rodrigues(&Vec3::new(0.3, -0.2, 0.9)), &Vec3::new(1.0, 2.0, -3.0));
        let p = Vec3::new(0.5, -0.25, 2.0);
        let back = transform_point(&rigid_inverse(&m), &transform_point(&m, &p));
        assert!((back - p).norm() < 1e-14);
        assert!(rigidity_error(&m) < 1e-14);
    }
}
