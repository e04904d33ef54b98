//! Z-buffered triangle rasterizer used for silhouettes and synthetic images.

use crate::geometry::Camera;
use crate::io::RgbImage;
use crate::math::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub image: RgbImage,
    pub mask: Vec<bool>,
    /// Camera-axis depth of the visible surface, 0 where empty.
    pub depth: Vec<f64>,
}

/// Draws every triangle with a flat color, testing pixel centers against the
/// projected triangle. Triangles with a vertex behind the camera are skipped.
pub fn rasterize(vertices: &[Vec3], faces: &[[usize; 3]], face_colors: &[Vec3], cam: &Camera, background: &Vec3) -> Raster {
    let (w, h) = (cam.width, cam.height);
    let mut image = RgbImage::new(w, h);
    for r in 0..h {
        for c in 0..w {
            image.set_pixel(r, c, [background.x, background.y, background.z]);
        }
    }
    let mut mask = vec![false; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let projected: Vec<Option<(f64, f64, f64)>> =
        vertices.iter().map(|v| cam.project(v).map(|(r, c)| (r, c, cam.depth(v)))).collect();
    for (f, tri) in faces.iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (projected[tri[0]], projected[tri[1]], projected[tri[2]]) else { continue };
        let area = edge(a, b, (c.0, c.1));
        if area == 0.0 {
            continue;
        }
        let rmin = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let rmax = (a.0.max(b.0).max(c.0).ceil().max(0.0) as usize).min(h);
        let cmin = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let cmax = (a.1.max(b.1).max(c.1).ceil().max(0.0) as usize).min(w);
        for r in rmin..rmax {
            for col in cmin..cmax {
                let p = (r as f64 + 0.5, col as f64 + 0.5);
                let (w0, w1, w2) = (edge(b, c, p) / area, edge(c, a, p) / area, edge(a, b, p) / area);
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a.2 + w1 * b.2 + w2 * c.2;
                let i = r * w + col;
                if z < depth[i] {
                    depth[i] = z;
                    mask[i] = true;
                    let fc = face_colors[f];
                    image.set_pixel(r, col, [fc.x, fc.y, fc.z]);
                }
            }
        }
    }
    for d in &mut depth {
        if !d.is_finite() {
            *d = 0.0;
        }
    }
    Raster { image, mask, depth }
}

/// Signed area term of `p` against the directed edge `a -> b` in (row, col) coordinates.
fn edge(a: (f64, f64, f64), b: (f64, f64, f64), p: (f64, f64)) -> f64 {
    (b.1 - a.1) * (p.0 - a.0) - (b.0 - a.0) * (p.1 - a.1)
}

/// Silhouette of a mesh.
pub fn silhouette(vertices: &[Vec3], faces: &[[usize; 3]], cam: &Camera) -> Vec<bool> {
    let colors = vec![Vec3::zeros(); faces.len()];
    rasterize(vertices, faces, &colors, cam, &Vec3::zeros()).mask
}

/// Intersection over union of two masks; 1 when both are empty.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len());
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
