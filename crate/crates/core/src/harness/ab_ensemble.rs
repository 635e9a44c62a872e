//! Action-weighted ensemble versus one pooled estimator.

use crate::ensemble::{
    argmax, fit_merger, fit_pose_estimator, iterative_refine, merge_poses, pose_rmse, weighted_pose, ActionGenerator,
    ActionPoseBank2D, EnsembleDataSpec, Pose2D, PoseFeatureSpec,
};
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::data::stream;
use crate::harness::report::{ArmRun, MetricsReport};
use crate::latent::FitOptions;

pub fn ensemble_data_spec(cfg: &ExperimentConfig) -> EnsembleDataSpec {
    let e = &cfg.ensemble;
    EnsembleDataSpec {
        actions: e.actions,
        joints: e.joints,
        context_dim: e.context_dim,
        appearance_dim: e.appearance_dim,
        appearance_mix: e.appearance_mix,
        separation: e.context_separation,
        feature_noise_sd: e.feature_noise_sd,
        pose_noise_sd: e.pose_noise_sd,
    }
}

/// Per seed: pooled GP (baseline) against the refined action-weighted
/// ensemble (treatment), both scored by pose RMSE on held-out samples.
/// Classification accuracies, the single-pass ensemble and a per-joint
/// merger of all experts (fitted on a validation draw) are recorded as extras.
pub fn run_ab_ensemble(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let e = &cfg.ensemble;
    let fit = FitOptions { max_iters: cfg.model.max_iters, ..FitOptions::default() };
    let mut runs = Vec::with_capacity(e.seeds.len());
    for &seed in &e.seeds {
        let gen = ActionGenerator::new(ensemble_data_spec(cfg), stream(seed, 70))?;
        let train = gen.samples(e.train_per_action, stream(seed, 71));
        let test = gen.samples(e.test_per_action, stream(seed, 72));
        let bank = ActionPoseBank2D::train(&train, gen.labels(), PoseFeatureSpec::chain(e.joints), &fit)?;
        let inputs: Vec<Vec<f64>> = train.iter().map(|s| s.global.clone()).collect();
        let poses: Vec<Pose2D> = train.iter().map(|s| s.pose.clone()).collect();
        let pooled = fit_pose_estimator(&inputs, &poses, &fit)?;

        let gt: Vec<Pose2D> = test.iter().map(|s| s.pose.clone()).collect();
        let mut pooled_est = Vec::new();
        let mut single = Vec::new();
        let mut refined = Vec::new();
        let (mut initial_ok, mut refined_ok) = (0usize, 0usize);
        for s in &test {
            pooled_est.push(Pose2D::from_flat(pooled.mean(&s.global)?.as_slice())?);
            single.push(weighted_pose(&bank, &s.global)?.0);
            let r = iterative_refine(&bank, &s.global, e.max_refine_iters)?;
            initial_ok += usize::from(argmax(&r.initial_posterior) == s.action);
            refined_ok += usize::from(argmax(&r.posterior) == s.action);
            refined.push(r.pose);
        }

        let experts = |f: &[f64]| -> Result<Vec<Pose2D>> {
            let mut out = (0..bank.actions()).map(|a| bank.estimate(a, f)).collect::<Result<Vec<_>>>()?;
            out.push(Pose2D::from_flat(pooled.mean(f)?.as_slice())?);
            Ok(out)
        };
        // GP experts interpolate their own training data, so the merger is
        // fitted on a separate validation draw.
        let val = gen.samples(e.train_per_action, stream(seed, 73));
        let val_out = val.iter().map(|s| experts(&s.global)).collect::<Result<Vec<_>>>()?;
        let val_gt: Vec<Pose2D> = val.iter().map(|s| s.pose.clone()).collect();
        let merger = fit_merger(&val_out, &val_gt)?;
        let merged = test
            .iter()
            .map(|s| merge_poses(&merger, &experts(&s.global)?))
            .collect::<Result<Vec<_>>>()?;

        let n = test.len() as f64;
        let extras = vec![
            ("initial_accuracy".to_string(), initial_ok as f64 / n),
            ("refined_accuracy".to_string(), refined_ok as f64 / n),
            ("single_pass_rmse".to_string(), pose_rmse(&single, &gt)?),
            ("merger_rmse".to_string(), pose_rmse(&merged, &gt)?),
        ];
        runs.push((
            seed,
            ArmRun::scalar(pose_rmse(&pooled_est, &gt)?),
            ArmRun::scalar(pose_rmse(&refined, &gt)?),
            extras,
        ));
    }
    Ok(MetricsReport::assemble("ab-ensemble", "pose_rmse", "pooled", "action_weighted", runs))
}
