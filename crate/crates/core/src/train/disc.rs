//! Strided convolutional image critic.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, PAD};
use crate::error::{invalid, Result};
use crate::fields::{round_f32, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscConfig {
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Number of stride-2 blocks.
    pub blocks: usize,
}

impl DiscConfig {
    /// Halves the resolution until the short side reaches 4, at most five times.
    pub fn new(height: usize, width: usize, base_channels: usize, max_channels: usize) -> Self {
        let short = height.min(width).max(1);
        let mut blocks = 0;
        while blocks < 5 && short >> (blocks + 1) >= 4 {
            blocks += 1;
        }
        Self { height, width, base_channels, max_channels, blocks }
    }

    /// 64 base channels capped at 256.
    pub fn desk(height: usize, width: usize) -> Self {
        Self::new(height, width, 64, 256)
    }

    /// Narrow variant for toy resolutions.
    pub fn toy(height: usize, width: usize) -> Self {
        Self::new(height, width, 16, 64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.base_channels == 0 || self.max_channels == 0 {
            invalid!("discriminator sizes must be positive");
        }
        if self.blocks > 0 && (self.height >> self.blocks == 0 || self.width >> self.blocks == 0) {
            invalid!("{} blocks downsample a {}x{} image to nothing", self.blocks, self.height, self.width);
        }
        Ok(())
    }

    /// Channels after block `i` (`i = 0` is the RGB projection).
    pub fn channels(&self, i: usize) -> usize {
        (self.base_channels << i.min(20)).min(self.max_channels)
    }

    /// Spatial size after `i` blocks; 3x3 stride-2 convolutions with one
    /// pixel of padding map n to ceil(n / 2).
    pub fn size_after(&self, i: usize) -> (usize, usize) {
        let mut s = (self.height, self.width);
        for _ in 0..i {
            s = (s.0.div_ceil(2), s.1.div_ceil(2));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscConfig,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn new(config: DiscConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            let data = (0..rows * cols).map(|_| round_f32(rng.random_range(-bound..=bound))).collect();
            Tensor::new(rows, cols, data)
        };
        let c0 = config.channels(0);
        params.push("from_rgb.w", uniform(3, c0, (6.0f64 / 3.0).sqrt()));
        params.push("from_rgb.b", Tensor::zeros(1, c0));
        for i in 0..config.blocks {
            let (cin, cout) = (config.channels(i), config.channels(i + 1));
            params.push(format!("block{i}.w"), uniform(9 * cin, cout, (6.0 / (9 * cin) as f64).sqrt()));
            params.push(format!("block{i}.b"), Tensor::zeros(1, cout));
        }
        let (h, w) = config.size_after(config.blocks);
        let feat = h * w * config.channels(config.blocks);
        params.push("out.w", uniform(feat, 1, 1.0 / (feat as f64).sqrt()));
        params.push("out.b", Tensor::zeros(1, 1));
        Ok(Self { config, params })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, tracked: bool) -> Vec<Var<'t>> {
        (0..self.params.len())
            .map(|i| if tracked { tape.leaf_shared(self.params.shared(i)) } else { tape.constant_shared(self.params.shared(i)) })
            .collect()
    }

    /// Scores a batch of images stacked as (batch * H * W) x 3 rows in
    /// row-major pixel order with values in [0, 1]. Returns batch x 1.
    pub fn forward<'t>(&self, p: &[Var<'t>], images: Var<'t>) -> Result<Var<'t>> {
        let cfg = &self.config;
        let per = cfg.height * cfg.width;
        if images.cols() != 3 || images.rows() == 0 || images.rows() % per != 0 {
            invalid!("discriminator expects k*{per} x 3 input, got {:?}", images.shape());
        }
        let batch = images.rows() / per;
        let mut x = images.scale(2.0).offset(-1.0).matmul(p[0]).add_row(p[1]).leaky_relu(0.2);
        for i in 0..cfg.blocks {
            let idx = im2col_index(batch, cfg.size_after(i), cfg.channels(i));
            let (ho, wo) = cfg.size_after(i + 1);
            x = x.gather(idx, batch * ho * wo, 9 * cfg.channels(i)).matmul(p[2 + 2 * i]).add_row(p[3 + 2 * i]).leaky_relu(0.2);
        }
        let (h, w) = cfg.size_after(cfg.blocks);
        let feat = h * w * cfg.channels(cfg.blocks);
        let k = p.len();
        Ok(x.reshape(batch, feat).matmul(p[k - 2]).add_row(p[k - 1]))
    }

    /// Scores for plain images.
    pub fn score_images(&self, images: &[Tensor]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let x = tape.constant(stack_images(images)?);
        Ok(self.forward(&p, x)?.value().data().to_vec())
    }
}

/// Vertically stacks equally shaped images.
pub fn stack_images(images: &[Tensor]) -> Result<Tensor> {
    let Some(first) = images.first() else { invalid!("empty image batch") };
    if images.iter().any(|t| t.shape() != first.shape()) {
        invalid!("images in a batch must share a shape");
    }
    let data = images.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::new(first.rows() * images.len(), first.cols(), data))
}

/// Gather index turning a (batch*H*W) x C map into (batch*Ho*Wo) x 9C patches
/// of a 3x3 stride-2 convolution with zero padding one.
fn im2col_index(batch: usize, (h, w): (usize, usize), c: usize) -> Rc<[usize]> {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut idx = Vec::with_capacity(batch * ho * wo * 9 * c);
    for b in 0..batch {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let y = (2 * oy + ky) as isize - 1;
                        let x = (2 * ox + kx) as isize - 1;
                        let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                        for ch in 0..c {
                            idx.push(if inside { ((b * h + y as usize) * w + x as usize) * c + ch } else { PAD });
                        }
                    }
                }
            }
        }
    }
    idx.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_counts() {
        assert_eq!(DiscConfig::toy(64, 32).blocks, 3);
        assert_eq!(DiscConfig::desk(512, 256).blocks, 5);
        assert_eq!(DiscConfig::toy(8, 8).blocks, 1);
        assert_eq!(DiscConfig::toy(4, 4).blocks, 0);
        let c = DiscConfig::desk(512, 256);
        assert_eq!((0..=5).map(|i| c.channels(i)).collect::<Vec<_>>(), vec![64, 128, 256, 256, 256, 256]);
        assert_eq!(c.size_after(5), (16, 8));
    }

    #[test]
    fn convolution_matches_direct_loop() {
        // one block on a 5x3 single-image input against a hand-written convolution
        let cfg = DiscConfig { height: 5, width: 3, base_channels: 2, max_channels: 4, blocks: 1 };
        let d = Discriminator::new(cfg.clone(), 1).unwrap();
        let img: Vec<f64> = (0..15 * 3).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let tape = Tape::new();
        let p = d.bind(&tape, false);
        let x = tape.constant(Tensor::new(15, 3, img.clone()));
        let score = d.forward(&p, x).unwrap().item();

        let lrelu = |v: f64| if v > 0.0 { v } else { 0.2 * v };
        let t = |i: usize| d.params.tensor(i).clone();
        let (w0, b0, w1, b1, wo, bo) = (t(0), t(1), t(2), t(3), t(4), t(5));
        let mut f0 = vec![[0.0; 2]; 15];
        for (px, f) in f0.iter_mut().enumerate() {
            for (o, fo) in f.iter_mut().enumerate() {
                let mut v = b0.get(0, o);
                for ci in 0..3 {
                    v += (2.0 * img[px * 3 + ci] - 1.0) * w0.get(ci, o);
                }
                *fo = lrelu(v);
            }
        }
        let mut feats = Vec::new();
        for oy in 0..3 {
            for ox in 0..2 {
                for o in 0..4 {
                    let mut v = b1.get(0, o);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (y, x) = (2 * oy as isize + ky as isize - 1, 2 * ox as isize + kx as isize - 1);
                            if y < 0 || x < 0 || y >= 5 || x >= 3 {
                                continue;
                            }
                            for ci in 0..2 {
                                v += f0[(y * 3 + x) as usize][ci] * w1.get((ky * 3 + kx) * 2 + ci, o);
                            }
                        }
                    }
                    feats.push(lrelu(v));
                }
            }
        }
        let expected = bo.item() + feats.iter().enumerate().map(|(i, f)| f * wo.get(i, 0)).sum::<f64>();
        assert!((score - expected).abs() < 1e-12, "{score} vs {expected}");
    }

    #[test]
    fn batch_rows_are_scored_independently() {
        let d = Discriminator::new(DiscConfig::toy(8, 8), 3).unwrap();
        let a = Tensor::new(64, 3, (0..192).map(|i| (i % 5) as f64 / 4.0).collect());
        let b = Tensor::new(64, 3, (0..192).map(|i| (i % 3) as f64 / 2.0).collect());
        let both = d.score_images(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(both[0], d.score_images(&[a]).unwrap()[0]);
        assert_eq!(both[1], d.score_images(&[b]).unwrap()[0]);
        assert!(d.score_images(&[Tensor::zeros(10, 3)]).is_err());
    }
}
