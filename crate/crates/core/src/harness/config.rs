//! Experiment configuration, read from a sectioned TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::catalog_action;
use crate::tracker::TrackerConfig;
use crate::transitions::BankMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub actions: Vec<String>,
    pub train_frames: usize,
    pub test_frames: usize,
    /// First frame of the second action in the test sequence.
    pub switch_frame: usize,
    pub blend_frames: usize,
    pub angle_noise_sd: f64,
    pub feature_dim: usize,
    pub feature_noise_sd: f64,
    pub seeds: Vec<u64>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            actions: vec!["walk".into(), "jog".into()],
            train_frames: 60,
            test_frames: 200,
            switch_frame: 100,
            blend_frames: 10,
            angle_noise_sd: 0.01,
            feature_dim: 16,
            feature_noise_sd: 0.01,
            seeds: (1..=10).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub mode: BankMode,
    pub latent_dim: usize,
    pub pose_latent_dim: usize,
    pub k_paths: usize,
    pub n_waypoints: usize,
    pub smooth_weight: f64,
    pub topo_weight: f64,
    pub dyn_weight: f64,
    pub linear_weight: f64,
    pub max_iters: usize,
    /// Feed the same bank to both arms of an A/B run.
    pub self_test: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            mode: BankMode::Separate,
            latent_dim: 3,
            pose_latent_dim: 3,
            k_paths: 3,
            n_waypoints: 6,
            smooth_weight: 1.0,
            topo_weight: 10.0,
            dyn_weight: 1.0,
            linear_weight: 0.0,
            max_iters: 200,
            self_test: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub actions: usize,
    pub joints: usize,
    pub train_per_action: usize,
    pub test_per_action: usize,
    /// Global features carrying the action context.
    pub context_dim: usize,
    /// Global features driven by the articulation, shared by all actions.
    pub appearance_dim: usize,
    /// 0: one articulation-to-appearance map for all actions; 1: one per action.
    pub appearance_mix: f64,
    /// Spread of the context class means; small values overlap the classes.
    pub context_separation: f64,
    pub feature_noise_sd: f64,
    pub pose_noise_sd: f64,
    pub max_refine_iters: usize,
    pub seeds: Vec<u64>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            actions: 3,
            joints: 6,
            train_per_action: 40,
            test_per_action: 40,
            context_dim: 4,
            appearance_dim: 4,
            appearance_mix: 0.0,
            context_separation: 1.0,
            feature_noise_sd: 0.3,
            pose_noise_sd: 0.02,
            max_refine_iters: 5,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub tracker: TrackerConfig,
    pub ensemble: EnsembleSpec,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            tracker: TrackerConfig { obs_noise_sd: 0.3, transfer_radius: Some(0.3), ..TrackerConfig::default() },
            ensemble: EnsembleSpec::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        for a in &d.actions {
            catalog_action(a)?;
        }
        if d.seeds.is_empty() || self.ensemble.seeds.is_empty() {
            return Err(Error::invalid("seed lists must be nonempty"));
        }
        if d.train_frames < 3 {
            return Err(Error::invalid("train_frames must be at least 3"));
        }
        if d.test_frames < 2 || d.switch_frame + d.blend_frames > d.test_frames {
            return Err(Error::invalid("switch_frame + blend_frames must fit inside test_frames"));
        }
        if d.feature_dim == 0 || !(d.feature_noise_sd >= 0.0 && d.angle_noise_sd >= 0.0) {
            return Err(Error::invalid("dataset noise must be non-negative and feature_dim positive"));
        }
        let m = &self.model;
        if m.latent_dim == 0 || m.pose_latent_dim == 0 || m.k_paths == 0 || m.n_waypoints < 2 {
            return Err(Error::invalid("latent dims and k_paths must be positive, n_waypoints at least 2"));
        }
        if !(m.smooth_weight >= 0.0 && m.topo_weight >= 0.0 && m.dyn_weight >= 0.0 && m.linear_weight >= 0.0) {
            return Err(Error::invalid("model weights must be non-negative"));
        }
        self.tracker.validate()?;
        let e = &self.ensemble;
        if e.actions < 2 || e.joints < 2 || e.train_per_action < 2 || e.test_per_action < 1 || e.context_dim + e.appearance_dim == 0 {
            return Err(Error::invalid("ensemble needs 2+ actions, 2+ joints, 2+ training samples per action"));
        }
        if e.max_refine_iters == 0 {
            return Err(Error::invalid("max_refine_iters must be at least 1"));
        }
        Ok(())
    }
}
