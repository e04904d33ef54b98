//! Adversarial training of the generator against 2D image collections.

mod augment;
mod data;
mod disc;

pub use augment::{AugmentConfig, Transform2};
pub use data::{part_color, render_records, synthetic_set, TrainingSet};
pub use disc::{stack_images, DiscConfig, Discriminator};

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{softplus, Tape, Tensor, Var};
use crate::body::BodyModel;
use crate::error::{bad_data, invalid, Error, Result};
use crate::fields::{round_f32, save_checkpoint, Checkpoint, Generator, ParamStore, Template};
use crate::math::Vec3;
use crate::render::{add_into, render_gradients, render_plan, RenderConfig, RenderPlan, Scene};
use crate::sampler::{pose_guided_weights, sample_batch, sample_latent, SamplerConfig};

pub const DISC_PREFIX: &str = "disc.";

/// f(u) = -log(1 + exp(-u)).
pub fn f_logistic(u: f64) -> f64 {
    -softplus(-u)
}

/// Discriminator objective: softplus(D(fake)) + softplus(-D(real)) + lambda * r1.
pub fn d_loss(scores_real: &[f64], scores_fake: &[f64], r1_term: f64, lambda: f64) -> Result<f64> {
    if scores_real.is_empty() || scores_real.len() != scores_fake.len() {
        invalid!("score batches must be nonempty and equal, got {} and {}", scores_real.len(), scores_fake.len());
    }
    let n = scores_real.len() as f64;
    let fake = scores_fake.iter().map(|&s| -f_logistic(-s)).sum::<f64>() / n;
    let real = scores_real.iter().map(|&s| -f_logistic(s)).sum::<f64>() / n;
    Ok(fake + real + lambda * r1_term)
}

/// Non-saturating generator objective, mean softplus(-D(fake)).
pub fn g_loss(scores_fake: &[f64]) -> Result<f64> {
    if scores_fake.is_empty() {
        invalid!("empty score batch");
    }
    Ok(scores_fake.iter().map(|&s| -f_logistic(s)).sum::<f64>() / scores_fake.len() as f64)
}

/// Mean squared offset.
pub fn offset_loss(deltas: &[f64]) -> Result<f64> {
    if deltas.is_empty() {
        invalid!("no offset samples");
    }
    Ok(deltas.iter().map(|d| d * d).sum::<f64>() / deltas.len() as f64)
}

/// Mean squared gradient norm of the offset.
pub fn eikonal_loss(grads: &[Vec3]) -> Result<f64> {
    if grads.is_empty() {
        invalid!("no gradient samples");
    }
    Ok(grads.iter().map(|g| g.norm_squared()).sum::<f64>() / grads.len() as f64)
}

/// Batch mean of the squared norm of d(score_i)/d(image_i), kept on the tape
/// so it can itself be differentiated. `scores` is batch x 1 and row `i`
/// may only depend on image `i`.
pub fn r1_penalty<'t>(images: Var<'t>, scores: Var<'t>) -> Var<'t> {
    let tape = images.tape();
    let g = tape.grad(scores.sum(), &[images])[0];
    g.square().sum().scale(1.0 / scores.rows() as f64)
}

pub const R1_INITIAL: f64 = 300.0;
pub const R1_FLOOR: f64 = 18.5;
pub const R1_HALFLIFE: u64 = 50_000;
/// Image size the default R1 weights are tuned for, height x width.
pub const NATIVE_RESOLUTION: (usize, usize) = (512, 256);

/// max(initial / 2^floor(iter / halflife), floor)
pub fn r1_lambda(iter: u64, initial: f64, floor: f64, halflife: u64) -> f64 {
    let halvings = (iter / halflife.max(1)).min(1100) as i32;
    (initial * 0.5f64.powi(halvings)).max(floor)
}

/// R1 weight with the default schedule: 300 halved every 50k iterations, never below 18.5.
pub fn r1_schedule(iter: u64) -> f64 {
    r1_lambda(iter, R1_INITIAL, R1_FLOOR, R1_HALFLIFE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda_off: f64,
    pub lambda_eik: f64,
    pub r1_initial: f64,
    pub r1_floor: f64,
    pub r1_halflife_iters: u64,
    pub batch: usize,
    pub aug: AugmentConfig,
    pub iters: u64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Points drawn inside the canonical boxes per step for the offset and eikonal terms.
    pub reg_points: usize,
    pub samples_per_ray: usize,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_g: 2e-5,
            lr_d: 2e-4,
            lambda_off: 1.5,
            lambda_eik: 0.5,
            r1_initial: R1_INITIAL,
            r1_floor: R1_FLOOR,
            r1_halflife_iters: R1_HALFLIFE,
            batch: 8,
            aug: AugmentConfig::default(),
            iters: 1000,
            seed: 0,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            adam_eps: 1e-8,
            reg_points: 1024,
            samples_per_ray: 28,
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();
        if !nonneg(self.lr_g) || !nonneg(self.lr_d) || !nonneg(self.lambda_off) || !nonneg(self.lambda_eik) {
            invalid!("learning rates and loss weights must be finite and nonnegative");
        }
        if !(self.r1_floor >= 0.0 && self.r1_floor <= self.r1_initial && self.r1_initial.is_finite()) {
            invalid!("R1 floor must lie in [0, initial]");
        }
        if self.batch == 0 || self.reg_points == 0 || self.samples_per_ray == 0 {
            invalid!("batch, reg_points and samples_per_ray must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            invalid!("Adam betas must lie in [0, 1) and eps be positive");
        }
        self.aug.validate()?;
        self.sampler.validate()
    }

    pub fn r1_lambda(&self, iter: u64) -> f64 {
        r1_lambda(iter, self.r1_initial, self.r1_floor, self.r1_halflife_iters)
    }

    /// Rescales the R1 weights from the native resolution to `height x width`.
    /// The penalty sums squared input gradients over every pixel, so for the
    /// same critic it grows as the pixel count shrinks.
    pub fn with_r1_scaled_to(mut self, height: usize, width: usize) -> Self {
        let ratio = (height * width) as f64 / (NATIVE_RESOLUTION.0 * NATIVE_RESOLUTION.1) as f64;
        self.r1_initial *= ratio;
        self.r1_floor *= ratio;
        self
    }
}

/// Adam with parameters rounded to single precision after every update.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { beta1, beta2, eps, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            invalid!("{} gradients for {} parameters", grads.len(), params.len());
        }
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.tensor_mut(i).data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let upd = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                p[j] = round_f32(p[j] - lr * upd);
            }
        }
        Ok(())
    }
}

/// Uniform points over the canonical boxes, each box chosen by volume.
pub fn box_samples<R: Rng + ?Sized>(template: &Template, n: usize, rng: &mut R) -> Vec<Vec3> {
    let boxes = &template.boxes.boxes;
    let vol: Vec<f64> = boxes.iter().map(|b| b.extent().product()).collect();
    let total: f64 = vol.iter().sum();
    (0..n)
        .map(|_| {
            let mut u = rng.random_range(0.0..total);
            let mut k = 0;
            while k + 1 < boxes.len() && u >= vol[k] {
                u -= vol[k];
                k += 1;
            }
            let b = &boxes[k];
            Vec3::from_fn(|a, _| rng.random_range(b.min[a]..=b.max[a]))
        })
        .collect()
}

/// Offset and eikonal penalties with their parameter gradients.
#[derive(Clone, Debug)]
pub struct Regularizers {
    pub l_off: f64,
    pub l_eik: f64,
    pub grads: Vec<Tensor>,
}

/// Evaluates `lambda_off * L_off + lambda_eik * L_eik` over `points[i]`
/// under latent `zs[i]` and differentiates it with respect to every generator parameter.
pub fn regularizers(
    gen: &Generator,
    template: &Template,
    zs: &[Vec<f64>],
    points: &[Vec<Vec3>],
    lambda_off: f64,
    lambda_eik: f64,
) -> Result<Regularizers> {
    let total: usize = points.iter().map(Vec::len).sum();
    if total == 0 || zs.len() != points.len() {
        invalid!("need one nonempty point set per latent");
    }
    let tape = Tape::new();
    let p = gen.bind(&tape, true);
    let mut off: Option<Var<'_>> = None;
    let mut eik: Option<Var<'_>> = None;
    for (z, pts) in zs.iter().zip(points) {
        if pts.is_empty() {
            continue;
        }
        let film = gen.film_vars(&p, tape.constant(Tensor::row_vector(z.clone())))?;
        let n = pts.len();
        let x = tape.leaf(Tensor::new(n, 3, pts.iter().flat_map(|v| [v.x, v.y, v.z]).collect()));
        let c = gen.query(&p, &film, template, x, &Tensor::zeros(n, 3), &Tensor::zeros(n, 1), &Vec3::zeros())?;
        let g = tape.grad(c.delta.sum(), &[x])[0];
        let o = c.delta.square().sum();
        let e = g.square().sum();
        off = Some(off.map_or(o, |a| a + o));
        eik = Some(eik.map_or(e, |a| a + e));
    }
    let (off, eik) = (off.expect("points").scale(1.0 / total as f64), eik.expect("points").scale(1.0 / total as f64));
    let loss = off.scale(lambda_off) + eik.scale(lambda_eik);
    let grads = tape.grad(loss, &p.vars).iter().map(|g| (*g.value()).clone()).collect();
    Ok(Regularizers { l_off: off.item(), l_eik: eik.item(), grads })
}

/// Losses and diagnostics of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub iter: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub l_off: f64,
    pub l_eik: f64,
    pub r1_lambda: f64,
    pub alpha: f64,
    pub r1: f64,
    /// Mean discriminator score of the real and fake batches in the D update.
    pub real_score: f64,
    pub fake_score: f64,
}

impl StepReport {
    /// One JSON Lines record.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numbers serialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscStep {
    pub d_loss: f64,
    pub r1: f64,
    pub r1_lambda: f64,
    pub real_score: f64,
    pub fake_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenStep {
    pub g_loss: f64,
    pub l_off: f64,
    pub l_eik: f64,
}

/// Generator, discriminator, data and optimizer state.
pub struct Trainer {
    pub gen: Generator,
    pub disc: Discriminator,
    pub model: BodyModel,
    pub template: Template,
    pub data: TrainingSet,
    pub config: TrainConfig,
    pub iter: u64,
    weights: Vec<f64>,
    gen_opt: Adam,
    disc_opt: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        gen: Generator,
        disc: Discriminator,
        model: BodyModel,
        data: TrainingSet,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if (disc.config.height, disc.config.width) != (data.height, data.width) {
            invalid!("discriminator expects {}x{}, data is {}x{}", disc.config.height, disc.config.width, data.height, data.width);
        }
        let template = Template::new(&model, &gen.config)?;
        let weights = pose_guided_weights(&data.meta, &config.sampler)?;
        let gen_opt = Adam::new(&gen.params, config.adam_beta1, config.adam_beta2, config.adam_eps);
        let disc_opt = Adam::new(&disc.params, config.adam_beta1, config.adam_beta2, config.adam_eps);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { gen, disc, model, template, data, config, iter: 0, weights, gen_opt, disc_opt, rng })
    }

    fn render_config(&self) -> RenderConfig {
        RenderConfig { samples_per_ray: self.config.samples_per_ray, ..RenderConfig::default() }
    }

    /// Draws records and latents and builds their render plans.
    fn draw_fakes(&mut self) -> Result<(Vec<usize>, Vec<Vec<f64>>, Vec<RenderPlan>)> {
        let idx = sample_batch(&self.weights, self.config.batch, &mut self.rng)?;
        let rcfg = self.render_config();
        let mut zs = Vec::with_capacity(idx.len());
        let mut plans = Vec::with_capacity(idx.len());
        for &i in &idx {
            zs.push(sample_latent(&mut self.rng, self.gen.config.latent_dim)?);
            let rec = &self.data.meta.records[i];
            let scene = Scene { shape: rec.shape(), pose: rec.pose(), camera: self.data.camera(i)? };
            plans.push(RenderPlan::build(&self.model, &self.template, &scene, &rcfg, &mut self.rng)?);
        }
        Ok((idx, zs, plans))
    }

    fn render_fake(&self, plan: &RenderPlan, z: &[f64]) -> Result<Tensor> {
        let out = render_plan(&self.gen, &self.template, plan, &self.gen.film(z)?)?;
        Ok(Tensor::new(out.width * out.height, 3, out.rgb))
    }

    /// Discriminator update on a freshly drawn real and fake batch.
    pub fn discriminator_step(&mut self) -> Result<DiscStep> {
        let iter = self.iter;
        let (w, h) = (self.data.width, self.data.height);
        let lambda = self.config.r1_lambda(iter);
        let (idx, zs, plans) = self.draw_fakes()?;
        let mut reals = Vec::with_capacity(idx.len());
        let mut fakes = Vec::with_capacity(idx.len());
        for ((&i, z), plan) in idx.iter().zip(&zs).zip(&plans) {
            let real = self.data.tensor(i);
            reals.push(self.config.aug.sample(&mut self.rng).apply(&real, w, h)?);
            let fake = self.render_fake(plan, z)?;
            fakes.push(self.config.aug.sample(&mut self.rng).apply(&fake, w, h)?);
        }
        let tape = Tape::new();
        let p = self.disc.bind(&tape, true);
        let real_v = tape.leaf(stack_images(&reals)?);
        let fake_v = tape.constant(stack_images(&fakes)?);
        let sr = self.disc.forward(&p, real_v)?;
        let sf = self.disc.forward(&p, fake_v)?;
        let r1 = r1_penalty(real_v, sr);
        let loss = sf.softplus().mean() + (-sr).softplus().mean() + r1.scale(lambda);
        let grads: Vec<Tensor> = tape.grad(loss, &p).iter().map(|g| (*g.value()).clone()).collect();
        if !loss.item().is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("iteration {iter}: discriminator loss or gradient is not finite")));
        }
        self.disc_opt.step(&mut self.disc.params, &grads, self.config.lr_d)?;
        let mean = |v: Var<'_>| v.value().data().iter().sum::<f64>() / v.rows() as f64;
        Ok(DiscStep { d_loss: loss.item(), r1: r1.item(), r1_lambda: lambda, real_score: mean(sr), fake_score: mean(sf) })
    }

    /// Generator update on a freshly rendered fake batch plus the offset and eikonal terms.
    pub fn generator_step(&mut self) -> Result<GenStep> {
        let iter = self.iter;
        let (w, h) = (self.data.width, self.data.height);
        let (_, zs, plans) = self.draw_fakes()?;
        let batch = zs.len() as f64;
        let mut grads: Vec<Tensor> = self.gen.params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        let mut g_loss = 0.0;
        for (z, plan) in zs.iter().zip(&plans) {
            let fake = self.render_fake(plan, z)?;
            let t = self.config.aug.sample(&mut self.rng);
            let tape = Tape::new();
            let p = self.disc.bind(&tape, false);
            let x = tape.leaf(fake);
            let s = self.disc.forward(&p, t.apply_var(x, w, h)?)?;
            let l = (-s).softplus().scale(1.0 / batch);
            g_loss += l.item();
            let seed = tape.grad(l, &[x])[0].value();
            for (acc, g) in grads.iter_mut().zip(render_gradients(&self.gen, &self.template, plan, z, seed.data())?) {
                add_into(acc, &g);
            }
        }
        let per = self.config.reg_points.div_ceil(zs.len());
        let points: Vec<Vec<Vec3>> = zs.iter().map(|_| box_samples(&self.template, per, &mut self.rng)).collect();
        let reg = regularizers(&self.gen, &self.template, &zs, &points, self.config.lambda_off, self.config.lambda_eik)?;
        for (acc, g) in grads.iter_mut().zip(&reg.grads) {
            add_into(acc, g);
        }
        if !g_loss.is_finite() || !reg.l_off.is_finite() || !reg.l_eik.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("iteration {iter}: generator loss or gradient is not finite")));
        }
        self.gen_opt.step(&mut self.gen.params, &grads, self.config.lr_g)?;
        Ok(GenStep { g_loss, l_off: reg.l_off, l_eik: reg.l_eik })
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self) -> Result<StepReport> {
        let d = self.discriminator_step()?;
        let g = self.generator_step()?;
        let report = StepReport {
            iter: self.iter,
            d_loss: d.d_loss,
            g_loss: g.g_loss,
            l_off: g.l_off,
            l_eik: g.l_eik,
            r1_lambda: d.r1_lambda,
            alpha: self.gen.alpha(),
            r1: d.r1,
            real_score: d.real_score,
            fake_score: d.fake_score,
        };
        self.iter += 1;
        Ok(report)
    }

    /// Generator and discriminator in one checkpoint.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::from_generator(&self.gen)?;
        c.meta["discriminator"] = serde_json::to_value(&self.disc.config)?;
        c.meta["iter"] = json!(self.iter);
        c.tensors.extend(self.disc.params.iter().map(|(n, t)| (format!("{DISC_PREFIX}{n}"), t.clone())));
        Ok(c)
    }

    /// Runs `iters` steps, appending one JSON line per step to `log` and
    /// saving a checkpoint to `checkpoint` every `every` steps and at the end.
    pub fn run(&mut self, iters: u64, log: &mut dyn Write, checkpoint: Option<(&Path, u64)>) -> Result<Vec<StepReport>> {
        let mut out = Vec::with_capacity(iters as usize);
        for _ in 0..iters {
            let r = self.step()?;
            writeln!(log, "{}", r.to_json()).map_err(|e| Error::io("training log", e))?;
            if let Some((path, every)) = checkpoint {
                if every > 0 && self.iter % every == 0 {
                    save_checkpoint(&self.checkpoint()?, path)?;
                }
            }
            out.push(r);
        }
        if let Some((path, _)) = checkpoint {
            save_checkpoint(&self.checkpoint()?, path)?;
        }
        Ok(out)
    }
}

/// Discriminator stored in a checkpoint written by [`Trainer::checkpoint`].
pub fn discriminator_from_checkpoint(c: &Checkpoint) -> Result<Discriminator> {
    let Some(cfg) = c.meta.get("discriminator") else { bad_data!("checkpoint has no discriminator") };
    let config: DiscConfig = serde_json::from_value(cfg.clone()).map_err(|e| Error::Data(format!("discriminator config: {e}")))?;
    let mut d = Discriminator::new(config, 0).map_err(|e| Error::Data(e.to_string()))?;
    d.params.assign(&c.section(DISC_PREFIX))?;
    Ok(d)
}
