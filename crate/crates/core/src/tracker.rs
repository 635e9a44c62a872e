//! Latent-space particle filter over a [`ModelBank`].
//!
//! Particles live in the latent space of one bank model. Free particles are
//! pushed through that model's dynamics; particles that entered a transition
//! path instead step along its waypoints and are handed to the destination
//! model on arrival. Waypoints of a separate-mode path already live in the
//! destination space, so a particle on a path is weighted and aggregated
//! there (see [`Particle::space`]).

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::gpdm::dynamics_mean;
use crate::latent::rows::{sqdist, sqdist_point};
use crate::latent::{gplvm_fit, latent_to_observation, FitOptions, LatentModel};
use crate::mappings::{fit_mapping, GpMapping, MappingOptions, FEATURE_LATENT_SPACE, POSE_LATENT_SPACE};
use crate::skeleton::{FeatureSequence, FeatureVector, MotionSequence, Pose};
use crate::transitions::{BankMode, ModelBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathState {
    pub path: usize,
    pub waypoint: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub model_id: usize,
    pub x: Vec<f64>,
    pub weight: f64,
    pub path_state: Option<PathState>,
}

impl Particle {
    /// Model whose latent space `x` belongs to.
    pub fn space(&self, bank: &ModelBank) -> usize {
        match self.path_state {
            Some(s) => bank.paths()[s.path].dst_model,
            None => self.model_id,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    rng: ChaCha8Rng,
}

impl ParticleSet {
    pub fn new(particles: Vec<Particle>, seed: u64) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("a particle set cannot be empty"));
        }
        Ok(ParticleSet { particles, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
    }

    pub fn set_uniform(&mut self) {
        let w = 1.0 / self.len() as f64;
        for p in &mut self.particles {
            p.weight = w;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub n_particles: usize,
    pub process_noise_sd: f64,
    pub obs_noise_sd: f64,
    /// Resample when ESS drops below this fraction of the particle count.
    pub resample_threshold: f64,
    /// `None`: half the bank's median nearest-neighbour latent spacing.
    pub transfer_radius: Option<f64>,
    pub transfer_prob: f64,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            n_particles: 500,
            process_noise_sd: 0.05,
            obs_noise_sd: 0.3,
            resample_threshold: 0.5,
            transfer_radius: None,
            transfer_prob: 0.5,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles must be at least 1"));
        }
        if !(self.process_noise_sd > 0.0 && self.obs_noise_sd > 0.0) {
            return Err(Error::invalid("noise levels must be positive"));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::invalid("resample_threshold must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.transfer_prob) {
            return Err(Error::invalid("transfer_prob must lie in [0, 1]"));
        }
        if let Some(r) = self.transfer_radius {
            if !(r >= 0.0) {
                return Err(Error::invalid("transfer_radius must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn radius(&self, bank: &ModelBank) -> f64 {
        self.transfer_radius.unwrap_or_else(|| 0.5 * bank.median_latent_spacing())
    }
}

fn log_likelihood(bank: &ModelBank, model: usize, x: &[f64], obs: &[f64], sd: f64) -> Result<f64> {
    let (mean, _) = latent_to_observation(bank.model(model).base(), x)?;
    if mean.len() != obs.len() {
        return Err(Error::invalid(format!("observation has dimension {}, models expect {}", obs.len(), mean.len())));
    }
    let sq: f64 = mean.iter().zip(obs).map(|(m, o)| (o - m) * (o - m)).sum();
    Ok(-sq / (2.0 * sd * sd))
}

/// Splits `n` items proportionally to `shares` by largest remainder.
fn allocate(n: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| n as f64 * s / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Spreads particles over the models in proportion to how well each model's
/// best training latent explains the first observation, then seeds them
/// around the best-matching latents of their model.
pub fn init_particles(bank: &ModelBank, first_obs: &FeatureVector, cfg: &TrackerConfig) -> Result<ParticleSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ranked = Vec::with_capacity(bank.models().len());
    let mut best = Vec::with_capacity(bank.models().len());
    for (m, model) in bank.models().iter().enumerate() {
        let x = model.base().latents();
        let mut scored: Vec<(f64, usize)> = (0..x.nrows())
            .map(|i| Ok((log_likelihood(bank, m, &model.base().latent_point(i), &first_obs.values, cfg.obs_noise_sd)?, i)))
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        best.push(scored[0].0);
        ranked.push(scored);
    }
    let top = best.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shares: Vec<f64> = best.iter().map(|b| (b - top).exp()).collect();
    let counts = allocate(cfg.n_particles, &shares);

    let w = 1.0 / cfg.n_particles as f64;
    let mut particles = Vec::with_capacity(cfg.n_particles);
    for (m, &count) in counts.iter().enumerate() {
        let keep = (ranked[m].len() / 10).max(1);
        let model = bank.model(m).base();
        for j in 0..count {
            let mut x = model.latent_point(ranked[m][j % keep].1);
            for v in &mut x {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += cfg.process_noise_sd * z;
            }
            particles.push(Particle { model_id: m, x, weight: w, path_state: None });
        }
    }
    Ok(ParticleSet { particles, rng })
}

/// Pushes free particles through their model's dynamics mean plus process
/// noise; particles on a path advance one waypoint. Weights are unchanged.
pub fn predict(ps: &mut ParticleSet, bank: &ModelBank, cfg: &TrackerConfig) -> Result<()> {
    for p in &mut ps.particles {
        match p.path_state {
            Some(state) => {
                let path = &bank.paths()[state.path];
                let next = state.waypoint + 1;
                p.x = path.waypoints[next].clone();
                if next + 1 == path.waypoints.len() {
                    p.model_id = path.dst_model;
                    p.path_state = None;
                } else {
                    p.path_state = Some(PathState { path: state.path, waypoint: next });
                }
            }
            None => {
                let mean = dynamics_mean(bank.model(p.model_id), &p.x)?;
                for (v, m) in p.x.iter_mut().zip(mean.iter()) {
                    let z: f64 = StandardNormal.sample(&mut ps.rng);
                    *v = m + cfg.process_noise_sd * z;
                }
            }
        }
    }
    Ok(())
}

/// Isotropic Gaussian likelihood of `obs` under each particle's
/// reconstruction, normalised in the log domain. On underflow the weights
/// are left untouched and `DegenerateWeights` is returned.
pub fn weight(ps: &mut ParticleSet, bank: &ModelBank, obs: &FeatureVector, cfg: &TrackerConfig) -> Result<()> {
    let logs = ps
        .particles
        .iter()
        .map(|p| log_likelihood(bank, p.space(bank), &p.x, &obs.values, cfg.obs_noise_sd))
        .collect::<Result<Vec<f64>>>()?;
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights);
    }
    for (p, u) in ps.particles.iter_mut().zip(unnorm) {
        p.weight = u / total;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub model_id: usize,
    pub mean: Vec<f64>,
    /// Summed particle weight per model.
    pub mass: Vec<f64>,
}

/// Weighted latent mean inside the model holding the most weight.
pub fn estimate(ps: &ParticleSet, bank: &ModelBank) -> Estimate {
    let mut mass = vec![0.0; bank.models().len()];
    for p in &ps.particles {
        mass[p.space(bank)] += p.weight;
    }
    let model_id = (0..mass.len()).fold(0, |best, m| if mass[m] > mass[best] { m } else { best });
    let d = bank.model(model_id).latent_dim();
    let mut mean = vec![0.0; d];
    for p in ps.particles.iter().filter(|p| p.space(bank) == model_id) {
        for (m, v) in mean.iter_mut().zip(&p.x) {
            *m += p.weight * v;
        }
    }
    if mass[model_id] > 0.0 {
        for m in &mut mean {
            *m /= mass[model_id];
        }
    }
    Estimate { model_id, mean, mass }
}

/// Offspring indices of systematic resampling: one uniform draw, `n` evenly
/// spaced pointers into the cumulative weights.
pub fn systematic_indices(weights: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0] / total;
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while u > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i] / total;
        }
        out.push(i);
    }
    out
}

/// Systematic resampling when ESS < threshold·N. Returns whether it fired.
pub fn resample(ps: &mut ParticleSet, cfg: &TrackerConfig) -> bool {
    let n = ps.len();
    if ps.ess() >= cfg.resample_threshold * n as f64 {
        return false;
    }
    let idx = systematic_indices(&ps.weights(), n, &mut ps.rng);
    let w = 1.0 / n as f64;
    ps.particles = idx
        .into_iter()
        .map(|i| Particle { weight: w, ..ps.particles[i].clone() })
        .collect();
    true
}

/// Lets free particles near a path's exit point enter it. Returns the number
/// of particles that entered a path. Unified banks keep every transition
/// inside the shared space, so nothing happens there.
pub fn maybe_transfer(ps: &mut ParticleSet, bank: &ModelBank, cfg: &TrackerConfig) -> usize {
    if bank.mode() == BankMode::Unified || bank.paths().is_empty() {
        return 0;
    }
    let r2 = cfg.radius(bank).powi(2);
    let mut entered = 0;
    for p in ps.particles.iter_mut().filter(|p| p.path_state.is_none()) {
        let nearest = bank
            .paths()
            .iter()
            .enumerate()
            .filter(|(_, path)| path.src_model == p.model_id)
            .map(|(i, path)| (sqdist(&p.x, &path.src_exit_point), i))
            .filter(|&(d2, _)| d2 <= r2)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, path)) = nearest {
            if ps.rng.random::<f64>() < cfg.transfer_prob {
                p.path_state = Some(PathState { path, waypoint: 0 });
                p.x = bank.paths()[path].waypoints[0].clone();
                entered += 1;
            }
        }
    }
    entered
}

/// Maps bank latents to poses: one GP per bank model into a shared pose
/// latent space, then the pose model's reconstruction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosePipeline {
    pub mappings: Vec<GpMapping>,
    pub pose_model: LatentModel,
}

impl PosePipeline {
    pub fn fit(bank: &ModelBank, pose_latent_dim: usize, fit: &FitOptions) -> Result<Self> {
        let blocks: Vec<&DMatrix<f64>> = (0..bank.models().len()).map(|m| bank.model_poses(m)).collect();
        let total: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut poses = DMatrix::zeros(total, blocks[0].ncols());
        let mut row = 0;
        for b in &blocks {
            poses.rows_mut(row, b.nrows()).copy_from(b);
            row += b.nrows();
        }
        let pose_model = gplvm_fit(&poses, pose_latent_dim, fit)?;
        let opts = MappingOptions { fit: *fit, ..MappingOptions::default() };
        let mut mappings = Vec::with_capacity(blocks.len());
        let mut row = 0;
        for (m, b) in blocks.iter().enumerate() {
            let targets = pose_model.latents().rows(row, b.nrows()).into_owned();
            let inputs = bank.model(m).base().latents();
            mappings.push(fit_mapping(inputs, &targets, &opts, FEATURE_LATENT_SPACE, POSE_LATENT_SPACE)?);
            row += b.nrows();
        }
        Ok(PosePipeline { mappings, pose_model })
    }

    pub fn pose(&self, model: usize, x: &[f64]) -> Result<Pose> {
        let z = self.mappings[model].mean(x)?;
        let (angles, _) = latent_to_observation(&self.pose_model, z.as_slice())?;
        Ok(Pose::new(angles.as_slice().to_vec()))
    }

    fn check(&self, bank: &ModelBank) -> Result<()> {
        if self.mappings.len() != bank.models().len() {
            return Err(Error::invalid(format!(
                "{} pose mappings for {} bank models",
                self.mappings.len(),
                bank.models().len()
            )));
        }
        for (m, map) in self.mappings.iter().enumerate() {
            if map.input_space() != FEATURE_LATENT_SPACE {
                return Err(Error::Wiring { expected: FEATURE_LATENT_SPACE.into(), found: map.input_space().into() });
            }
            if map.output_space() != POSE_LATENT_SPACE {
                return Err(Error::Wiring { expected: POSE_LATENT_SPACE.into(), found: map.output_space().into() });
            }
            if map.input_dim() != bank.model(m).latent_dim() || map.output_dim() != self.pose_model.latent_dim() {
                return Err(Error::invalid(format!("pose mapping {m} has inconsistent dimensions")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub model_id: usize,
    /// Action of the training frame nearest to the estimate.
    pub action: String,
    pub mass: Vec<f64>,
    pub ess: f64,
    pub degenerate: bool,
    pub resampled: bool,
    pub transferred: usize,
}

#[derive(Clone, Debug)]
pub struct TrackOutput {
    pub poses: MotionSequence,
    pub frames: Vec<FrameMeta>,
}

fn nearest_action(bank: &ModelBank, model: usize, x: &[f64]) -> String {
    let latents = bank.model(model).base().latents();
    let row = (0..latents.nrows())
        .map(|i| (sqdist_point(latents, i, x), i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map_or(0, |(_, i)| i);
    bank.action_of_row(model, row).unwrap_or_default().to_string()
}

/// Runs the filter over `obs`: per frame predict, weight, estimate, transfer,
/// resample (the first frame skips predict). Frames whose weights degenerate
/// are reset to uniform and flagged.
pub fn track(
    bank: &ModelBank,
    obs: &FeatureSequence,
    pipeline: &PosePipeline,
    cfg: &TrackerConfig,
) -> Result<TrackOutput> {
    cfg.validate()?;
    pipeline.check(bank)?;
    let dim = bank.model(0).base().data_dim();
    if obs.dim() != dim {
        return Err(Error::invalid(format!("observations have dimension {}, models expect {dim}", obs.dim())));
    }
    let mut ps = init_particles(bank, &obs.frames[0], cfg)?;
    let mut poses = Vec::with_capacity(obs.len());
    let mut frames = Vec::with_capacity(obs.len());
    for (t, f) in obs.frames.iter().enumerate() {
        if t > 0 {
            predict(&mut ps, bank, cfg)?;
        }
        let degenerate = match weight(&mut ps, bank, f, cfg) {
            Ok(()) => false,
            Err(Error::DegenerateWeights) => {
                ps.set_uniform();
                true
            }
            Err(e) => return Err(e),
        };
        let est = estimate(&ps, bank);
        poses.push(pipeline.pose(est.model_id, &est.mean)?);
        let ess = ps.ess();
        let transferred = maybe_transfer(&mut ps, bank, cfg);
        let resampled = resample(&mut ps, cfg);
        frames.push(FrameMeta {
            action: nearest_action(bank, est.model_id, &est.mean),
            model_id: est.model_id,
            mass: est.mass,
            ess,
            degenerate,
            resampled,
            transferred,
        });
    }
    let poses = MotionSequence::new(poses, obs.fps, "estimate", &obs.subject_id)?;
    Ok(TrackOutput { poses, frames })
}

/// Per-frame sidecar: winning model and action, ESS, flags, posterior mass per model.
pub fn write_track_metadata(path: &Path, frames: &[FrameMeta]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let models = frames.first().map_or(0, |f| f.mass.len());
    write!(out, "frame,model,action,ess,degenerate,resampled,transferred")?;
    for m in 0..models {
        write!(out, ",mass_{m}")?;
    }
    writeln!(out)?;
    for (t, f) in frames.iter().enumerate() {
        write!(
            out,
            "{t},{},{},{:?},{},{},{}",
            f.model_id, f.action, f.ess, f.degenerate as u8, f.resampled as u8, f.transferred
        )?;
        for m in &f.mass {
            write!(out, ",{m:?}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
