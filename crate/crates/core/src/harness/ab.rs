//! The transition-path A/B experiment.

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{observation_model, stream, switch_sequence, training_sets};
use crate::harness::report::{ArmRun, MetricsReport};
use crate::latent::{FitOptions, GpdmOptions};
use crate::skeleton::{catalog_action, observe_sequence, per_frame_joint_error, mean, FeatureSequence, MotionSequence, Skeleton};
use crate::tracker::{track, PosePipeline, TrackerConfig};
use crate::transitions::{build_separate_bank, build_unified_bank, BankMode, BankOptions, ModelBank};

pub(crate) fn bank_options(cfg: &ExperimentConfig, seed: u64) -> BankOptions {
    let m = &cfg.model;
    BankOptions {
        latent_dim: m.latent_dim,
        k_paths: m.k_paths,
        n_waypoints: m.n_waypoints,
        smooth_weight: m.smooth_weight,
        gpdm: GpdmOptions {
            fit: FitOptions { max_iters: m.max_iters, seed: stream(seed, 40), ..FitOptions::default() },
            dyn_weight: m.dyn_weight,
            linear_weight: m.linear_weight,
            ..GpdmOptions::default()
        },
    }
}

/// Test data for one seed: ground-truth poses and their observations.
pub fn test_sequence(cfg: &ExperimentConfig, seed: u64) -> Result<(MotionSequence, FeatureSequence)> {
    let d = &cfg.dataset;
    let first = catalog_action(&d.actions[0])?;
    let second = catalog_action(&d.actions[1 % d.actions.len()])?;
    let gt = switch_sequence(&first, &second, d.test_frames, d.switch_frame, d.blend_frames, d.angle_noise_sd, seed)?;
    let obs_model = observation_model(d, gt.dim(), seed)?;
    let obs = observe_sequence(&gt, &obs_model, stream(seed, 50))?;
    Ok((gt, obs))
}

fn arm(
    bank: &ModelBank,
    pipeline: &PosePipeline,
    obs: &FeatureSequence,
    gt: &MotionSequence,
    tracker: &TrackerConfig,
) -> Result<ArmRun> {
    let out = track(bank, obs, pipeline, tracker)?;
    let frame_errors = per_frame_joint_error(&out.poses, gt, &Skeleton::stick_figure())?;
    Ok(ArmRun {
        error: mean(&frame_errors),
        frame_errors,
        posterior: out.frames.iter().map(|f| f.mass.clone()).collect(),
        actions: out.frames.into_iter().map(|f| f.action).collect(),
    })
}

/// Frames after the switch until the estimate first reports the new action.
fn switch_lag(run: &ArmRun, switch_frame: usize, action: &str) -> f64 {
    run.actions
        .iter()
        .skip(switch_frame)
        .position(|a| a == action)
        .unwrap_or(run.actions.len().saturating_sub(switch_frame)) as f64
}

/// Builds both banks for one seed: `(baseline, treatment)`.
pub fn ab_banks(cfg: &ExperimentConfig, seed: u64) -> Result<(ModelBank, ModelBank)> {
    let d = &cfg.dataset;
    let dof = Skeleton::stick_figure().dof();
    let obs_model = observation_model(d, dof, seed)?;
    let sets = training_sets(d, &obs_model, seed)?;
    let opts = bank_options(cfg, seed);
    let treatment = match cfg.model.mode {
        BankMode::Separate => build_separate_bank(&sets, &opts)?,
        BankMode::Unified => build_unified_bank(&sets, &opts, cfg.model.topo_weight)?,
    };
    let baseline = if cfg.model.self_test {
        treatment.clone()
    } else {
        match cfg.model.mode {
            BankMode::Separate => treatment.without_paths(),
            BankMode::Unified => build_unified_bank(&sets, &opts, 0.0)?,
        }
    };
    Ok((baseline, treatment))
}

/// Tracks the same multi-action sequence with and without the transition
/// machinery (paths for separate banks, the topological penalty for unified
/// ones) and reports per-seed joint errors.
pub fn run_ab_transitions(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let d = &cfg.dataset;
    let fit = FitOptions { max_iters: cfg.model.max_iters, ..FitOptions::default() };
    let mut runs = Vec::with_capacity(d.seeds.len());
    for &seed in &d.seeds {
        let (baseline, treatment) = ab_banks(cfg, seed)?;
        let treat_pipe = PosePipeline::fit(&treatment, cfg.model.pose_latent_dim, &fit)?;
        let base_pipe = match cfg.model.mode {
            BankMode::Unified if !cfg.model.self_test => PosePipeline::fit(&baseline, cfg.model.pose_latent_dim, &fit)?,
            _ => treat_pipe.clone(),
        };
        let (gt, obs) = test_sequence(cfg, seed)?;
        let tracker = TrackerConfig { seed: stream(seed, 60) ^ cfg.tracker.seed, ..cfg.tracker.clone() };
        let b = arm(&baseline, &base_pipe, &obs, &gt, &tracker)?;
        let t = arm(&treatment, &treat_pipe, &obs, &gt, &tracker)?;
        let second = &d.actions[1 % d.actions.len()];
        let extras = vec![
            ("baseline_switch_lag".to_string(), switch_lag(&b, d.switch_frame, second)),
            ("treatment_switch_lag".to_string(), switch_lag(&t, d.switch_frame, second)),
        ];
        runs.push((seed, b, t, extras));
    }
    let (experiment, base_label, treat_label) = match cfg.model.mode {
        BankMode::Separate => ("ab-transitions-separate", "no_paths", "paths"),
        BankMode::Unified => ("ab-transitions-unified", "topo_weight_0", "topo_weight"),
    };
    Ok(MetricsReport::assemble(experiment, "joint_error", base_label, treat_label, runs))
}
