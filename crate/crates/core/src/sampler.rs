//! Dataset pose metadata and pose-guided sampling of training views.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::body::{forward_kinematics, BodyModel, Pose, Shape, HEAD_JOINT};
use crate::error::{bad_data, invalid, Error, Result};
use crate::geometry::Camera;
use crate::math::{self, Mat3, Vec3};

pub const DEFAULT_BINS: usize = 72;
pub const DEFAULT_SIGMA_DEG: f64 = 15.0;

/// Camera intrinsics plus world-to-camera extrinsics, `x_cam = R x_world + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major rotation.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl MetaCamera {
    pub fn from_camera(cam: &Camera) -> Self {
        let r = cam.rotation.transpose();
        let t = -(r * cam.translation);
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            r: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            t: [t.x, t.y, t.z],
        }
    }

    pub fn to_camera(&self, width: usize, height: usize) -> Result<Camera> {
        let r = Mat3::from_row_slice(&self.r);
        if (r.transpose() * r - Mat3::identity()).abs().max() > 1e-4 || (r.determinant() - 1.0).abs() > 1e-4 {
            bad_data!("camera R is not a rotation");
        }
        let rotation = r.transpose();
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            translation: -(rotation * Vec3::from(self.t)),
            rotation,
            width,
            height,
        };
        cam.validate().map_err(|e| Error::Data(e.to_string()))?;
        Ok(cam)
    }
}

/// One line of dataset metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaRecord {
    pub id: String,
    pub beta: Vec<f64>,
    pub theta: Vec<[f64; 3]>,
    pub cam: MetaCamera,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl MetaRecord {
    pub fn shape(&self) -> Shape {
        Shape { coefficients: self.beta.clone() }
    }

    pub fn pose(&self) -> Pose {
        Pose { axis_angle: self.theta.iter().map(|&a| Vec3::from(a)).collect(), global_translation: Vec3::zeros() }
    }

    fn check(&self, model: &BodyModel) -> Result<()> {
        let finite = self.beta.iter().chain(self.theta.iter().flatten()).all(|x| x.is_finite());
        if !finite {
            bad_data!("record {} holds non-finite values", self.id);
        }
        let checked = self.shape().validate(model).and_then(|_| self.pose().validate(model));
        checked.map_err(|e| Error::Data(format!("record {}: {e}", self.id)))
    }
}

/// Parses JSON Lines metadata; blank lines are skipped.
pub fn parse_metadata(text: &str) -> Result<Vec<MetaRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Data(format!("metadata line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_metadata(path: &Path) -> Result<Vec<MetaRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metadata(&text)
}

pub fn metadata_to_jsonl(records: &[MetaRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Records with zero shape whose only rotation is a root yaw, one per angle.
/// Yaws are wrapped into (-pi, pi) since rotations of exactly pi are not representable.
pub fn synthetic_records(model: &BodyModel, yaws: &[f64], cam: &Camera) -> Vec<MetaRecord> {
    yaws.iter()
        .enumerate()
        .map(|(i, &yaw)| {
            let mut theta = vec![[0.0; 3]; model.joint_count()];
            let y = wrap_signed(yaw).clamp(-PI + 1e-9, PI - 1e-9);
            theta[0] = [0.0, y, 0.0];
            MetaRecord {
                id: format!("synthetic_{i:06}"),
                beta: vec![0.0; model.shape_dim()],
                theta,
                cam: MetaCamera::from_camera(cam),
                image: None,
            }
        })
        .collect()
}

/// Wraps into [0, 2pi).
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps into (-pi, pi].
pub fn wrap_signed(a: f64) -> f64 {
    let w = wrap_angle(a);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Bin of an angle: floor(angle * bins / 2pi) after wrapping.
pub fn angle_bin(angle: f64, bins: usize) -> usize {
    ((wrap_angle(angle) * bins as f64 / TAU).floor() as usize).min(bins - 1)
}

fn yaw_of(forward: &Vec3) -> Option<f64> {
    let h = forward.x.hypot(forward.z);
    (h > 1e-9 * forward.norm().max(1.0)).then(|| wrap_angle(forward.x.atan2(forward.z)))
}

/// Heading of the head joint around the vertical axis. 0 faces +z and the
/// angle grows towards +x. When the head looks straight up or down the root
/// orientation is used instead.
pub fn head_facing_angle(model: &BodyModel, pose: &Pose) -> Result<f64> {
    if model.joint_count() <= HEAD_JOINT {
        invalid!("body has no head joint");
    }
    let g = forward_kinematics(model, pose)?;
    let forward = |m: &crate::math::Mat4| math::rotation_part(m) * Vec3::z();
    if let Some(a) = yaw_of(&forward(&g[HEAD_JOINT])) {
        return Ok(a);
    }
    if let Some(a) = yaw_of(&forward(&g[0])) {
        return Ok(a);
    }
    // root itself pitched vertical: read the heading off its right axis
    let right = math::rotation_part(&g[0]) * Vec3::x();
    Ok(wrap_angle((-right.z).atan2(right.x)))
}

/// Records annotated with head angle and bin.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub records: Vec<MetaRecord>,
    pub head_angles: Vec<f64>,
    pub bins: Vec<usize>,
    pub bin_count: usize,
}

impl DatasetMeta {
    pub fn new(model: &BodyModel, records: Vec<MetaRecord>, bin_count: usize) -> Result<Self> {
        if bin_count < 4 {
            invalid!("need at least 4 bins, got {bin_count}");
        }
        let mut head_angles = Vec::with_capacity(records.len());
        for r in &records {
            r.check(model)?;
            head_angles.push(head_facing_angle(model, &r.pose())?);
        }
        let bins = head_angles.iter().map(|&a| angle_bin(a, bin_count)).collect();
        Ok(Self { records, head_angles, bins, bin_count })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn bin_counts(&self) -> Vec<usize> {
        bin_counts(&self.bins, self.bin_count)
    }
}

fn bin_counts(bins: &[usize], bin_count: usize) -> Vec<usize> {
    let mut c = vec![0; bin_count];
    for &b in bins {
        c[b] += 1;
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Empirical frequencies: every record equally likely.
    Original,
    /// Bin mass follows a Gaussian in angle around the front view.
    Gaussian,
    /// Every populated bin gets equal mass.
    Uniform,
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "gaussian" => Ok(Self::Gaussian),
            "uniform" => Ok(Self::Uniform),
            _ => Err(Error::InvalidArgument(format!("unknown sampling mode {s:?}"))),
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Original => "original",
            Self::Gaussian => "gaussian",
            Self::Uniform => "uniform",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub bins: usize,
    /// Front-view angle in radians.
    pub mu_theta: f64,
    pub sigma_theta: f64,
    pub mode: SamplingMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, mu_theta: 0.0, sigma_theta: DEFAULT_SIGMA_DEG.to_radians(), mode: SamplingMode::Gaussian }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 4 {
            invalid!("need at least 4 bins, got {}", self.bins);
        }
        if !self.mu_theta.is_finite() {
            invalid!("mu_theta must be finite");
        }
        if self.mode == SamplingMode::Gaussian && !(self.sigma_theta > 0.0) {
            invalid!("sigma_theta must be positive");
        }
        Ok(())
    }

    /// Center angle of bin `m`, 2 pi m / M.
    pub fn bin_angle(&self, m: usize) -> f64 {
        TAU * m as f64 / self.bins as f64
    }
}

/// Target mass of every bin; empty bins get zero and the rest sum to one.
pub fn bin_masses(counts: &[usize], cfg: &SamplerConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if counts.len() != cfg.bins {
        invalid!("{} bin counts for {} bins", counts.len(), cfg.bins);
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        bad_data!("every pose bin is empty");
    }
    let raw: Vec<f64> = match cfg.mode {
        SamplingMode::Original => counts.iter().map(|&c| c as f64).collect(),
        SamplingMode::Uniform => counts.iter().map(|&c| if c > 0 { 1.0 } else { 0.0 }).collect(),
        SamplingMode::Gaussian => {
            // log-space so that narrow Gaussians do not underflow every bin
            let log_p = |m: usize| {
                let d = wrap_signed(cfg.bin_angle(m) - cfg.mu_theta) / cfg.sigma_theta;
                -0.5 * d * d
            };
            let peak = (0..cfg.bins).filter(|&m| counts[m] > 0).map(log_p).fold(f64::NEG_INFINITY, f64::max);
            (0..cfg.bins).map(|m| if counts[m] > 0 { (log_p(m) - peak).exp() } else { 0.0 }).collect()
        }
    };
    let sum: f64 = raw.iter().sum();
    Ok(raw.iter().map(|r| r / sum).collect())
}

/// Per-record sampling probability: bin mass shared equally inside the bin.
pub fn pose_guided_weights(meta: &DatasetMeta, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    if meta.bin_count != cfg.bins {
        invalid!("metadata binned into {} bins, sampler uses {}", meta.bin_count, cfg.bins);
    }
    weights_for_bins(&meta.bins, cfg)
}

/// Per-record probabilities for records already assigned to bins.
pub fn weights_for_bins(bins: &[usize], cfg: &SamplerConfig) -> Result<Vec<f64>> {
    if let Some(b) = bins.iter().find(|&&b| b >= cfg.bins) {
        invalid!("bin {b} out of range");
    }
    let counts = bin_counts(bins, cfg.bins);
    let masses = bin_masses(&counts, cfg)?;
    Ok(bins.iter().map(|&b| masses[b] / counts[b] as f64).collect())
}

/// Independent categorical draws of record indices.
pub fn sample_batch<R: Rng + ?Sized>(weights: &[f64], batch: usize, rng: &mut R) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))?;
    Ok((0..batch).map(|_| dist.sample(rng)).collect())
}

/// Standard normal latent code.
pub fn sample_latent<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        invalid!("latent dimension must be positive");
    }
    Ok((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRow {
    pub bin: usize,
    pub theta_deg: f64,
    pub target_mass: f64,
    pub empirical_mass: f64,
}

/// Target versus drawn bin frequencies.
pub fn bin_histogram(bins: &[usize], weights: &[f64], draws: &[usize], cfg: &SamplerConfig) -> Result<Vec<HistogramRow>> {
    if bins.len() != weights.len() {
        invalid!("{} bins for {} weights", bins.len(), weights.len());
    }
    let mut target = vec![0.0; cfg.bins];
    for (&b, &w) in bins.iter().zip(weights) {
        target[b] += w;
    }
    let mut drawn = vec![0usize; cfg.bins];
    for &i in draws {
        let Some(&b) = bins.get(i) else { invalid!("draw {i} out of range") };
        drawn[b] += 1;
    }
    let n = draws.len().max(1) as f64;
    Ok((0..cfg.bins)
        .map(|m| HistogramRow {
            bin: m,
            theta_deg: cfg.bin_angle(m).to_degrees(),
            target_mass: target[m],
            empirical_mass: drawn[m] as f64 / n,
        })
        .collect())
}

/// Half the L1 distance between target and empirical masses.
pub fn total_variation(rows: &[HistogramRow]) -> f64 {
    0.5 * rows.iter().map(|r| (r.target_mass - r.empirical_mass).abs()).sum::<f64>()
}

pub fn histogram_csv(rows: &[HistogramRow]) -> String {
    let mut s = String::from("bin_index,theta_m_degrees,target_mass,empirical_mass\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.bin, r.theta_deg, r.target_mass, r.empirical_mass));
    }
    s
}
