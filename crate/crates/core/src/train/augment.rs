//! Random pan, scale and rotation with bilinear resampling.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub max_pan_px: f64,
    /// Scale is drawn from [1 - max_scale, 1 + max_scale].
    pub max_scale: f64,
    pub max_rot_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { max_pan_px: 2.0, max_scale: 0.05, max_rot_deg: 3.0 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { max_pan_px: 0.0, max_scale: 0.0, max_rot_deg: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if !ok(self.max_pan_px) || !ok(self.max_rot_deg) || !ok(self.max_scale) || self.max_scale >= 1.0 {
            invalid!("augmentation ranges must be finite, nonnegative and scale below 1");
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Transform2 {
        let mut draw = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let pan_x = draw(self.max_pan_px);
        let pan_y = draw(self.max_pan_px);
        let scale = 1.0 + draw(self.max_scale);
        let rot_deg = draw(self.max_rot_deg);
        Transform2 { pan_x, pan_y, scale, rot_deg }
    }
}

/// Similarity transform about the image center. Content moves right by
/// `pan_x` and down by `pan_y` pixels, grows by `scale` and turns
/// counterclockwise on screen by `rot_deg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform2 {
    pub pan_x: f64,
    pub pan_y: f64,
    pub scale: f64,
    pub rot_deg: f64,
}

impl Transform2 {
    pub fn identity() -> Self {
        Self { pan_x: 0.0, pan_y: 0.0, scale: 1.0, rot_deg: 0.0 }
    }

    /// For every output pixel, four source pixel indices and bilinear weights.
    pub fn taps(&self, width: usize, height: usize) -> Vec<[(usize, f64); 4]> {
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let (s, c) = self.rot_deg.to_radians().sin_cos();
        let mut out = Vec::with_capacity(width * height);
        for r in 0..height {
            for col in 0..width {
                // inverse map from the output pixel center back into the source
                let x = col as f64 + 0.5 - cx - self.pan_x;
                let y = r as f64 + 0.5 - cy - self.pan_y;
                let sx = (c * x - s * y) / self.scale + cx - 0.5;
                let sy = (s * x + c * y) / self.scale + cy - 0.5;
                let sx = sx.clamp(0.0, (width - 1) as f64);
                let sy = sy.clamp(0.0, (height - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                out.push([
                    (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
                    (y0 * width + x1, fx * (1.0 - fy)),
                    (y1 * width + x0, (1.0 - fx) * fy),
                    (y1 * width + x1, fx * fy),
                ]);
            }
        }
        out
    }

    /// Resamples an (H*W) x C image.
    pub fn apply(&self, image: &Tensor, width: usize, height: usize) -> Result<Tensor> {
        check(image.shape(), width, height)?;
        let ch = image.cols();
        let mut out = Tensor::zeros(width * height, ch);
        for (i, taps) in self.taps(width, height).iter().enumerate() {
            for c in 0..ch {
                out.set(i, c, taps.iter().map(|&(j, w)| w * image.get(j, c)).sum());
            }
        }
        Ok(out)
    }

    /// Differentiable version of [`Transform2::apply`].
    pub fn apply_var<'t>(&self, image: Var<'t>, width: usize, height: usize) -> Result<Var<'t>> {
        check(image.shape(), width, height)?;
        let ch = image.cols();
        let n = width * height;
        let taps = self.taps(width, height);
        let tape = image.tape();
        let mut acc: Option<Var<'t>> = None;
        for k in 0..4 {
            let idx: Rc<[usize]> = taps.iter().flat_map(|t| (0..ch).map(move |c| t[k].0 * ch + c)).collect();
            let w = tape.constant(Tensor::column_vector(taps.iter().map(|t| t[k].1).collect()));
            let term = image.gather(idx, n, ch).mul_col(w);
            acc = Some(match acc {
                Some(a) => a + term,
                None => term,
            });
        }
        Ok(acc.expect("four taps"))
    }
}

fn check(shape: (usize, usize), width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || shape.0 != width * height {
        invalid!("image with {} rows is not {}x{}", shape.0, height, width);
    }
    Ok(())
}
