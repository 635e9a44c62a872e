//! Python bindings: data generation, model banks, tracking, the A/B
//! experiments, ensemble utilities and the command line.

use motionprior::ensemble::{
    extract_pose_features as extract_features, merge_poses as merge, pose_rmse as rmse, MergerModel, Pose2D,
    PoseFeatureSpec,
};
use motionprior::error::Error;
use motionprior::harness::{self, ExperimentConfig};
use motionprior::latent::FitOptions;
use motionprior::skeleton::{catalog_action, generate_synthetic_action, joint_error as joint_err, FeatureSequence, FeatureVector, MotionSequence, Pose, Skeleton};
use motionprior::tracker::{self, PosePipeline, TrackerConfig};
use motionprior::transitions::{self, BankMode};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn config(toml: Option<&str>) -> PyResult<ExperimentConfig> {
    match toml {
        Some(t) => ExperimentConfig::from_toml(t).map_err(py_err),
        None => Ok(ExperimentConfig::default()),
    }
}

fn sequence(frames: Vec<Vec<f64>>, label: &str) -> PyResult<MotionSequence> {
    MotionSequence::new(frames.into_iter().map(Pose::new).collect(), 30.0, label, "python").map_err(py_err)
}

/// Joint-angle frames of a catalog action (`walk`, `jog`, ...).
#[pyfunction]
#[pyo3(signature = (label, frames, noise_sd = 0.01, seed = 0))]
fn generate_action(label: &str, frames: usize, noise_sd: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let spec = catalog_action(label).map_err(py_err)?;
    let seq = generate_synthetic_action(&spec, frames, noise_sd, seed).map_err(py_err)?;
    Ok(seq.frames.into_iter().map(|p| p.angles).collect())
}

/// Mean per-joint position error of the stick figure between two frame lists.
#[pyfunction]
fn joint_error(est: Vec<Vec<f64>>, gt: Vec<Vec<f64>>) -> PyResult<f64> {
    joint_err(&sequence(est, "est")?, &sequence(gt, "gt")?, &Skeleton::stick_figure()).map_err(py_err)
}

/// Trained multi-action motion model bank.
#[pyclass(frozen)]
struct ModelBank {
    inner: transitions::ModelBank,
}

#[pymethods]
impl ModelBank {
    /// Trains the bank of the given experiment config (TOML text) for one seed.
    #[staticmethod]
    #[pyo3(signature = (config_toml = None, seed = 1))]
    fn train(config_toml: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = config(config_toml)?;
        let (_, treatment) = harness::ab_banks(&cfg, seed).map_err(py_err)?;
        Ok(ModelBank { inner: treatment })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(ModelBank { inner: transitions::ModelBank::from_json(text).map_err(py_err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.actions().to_vec()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode() {
            BankMode::Separate => "separate",
            BankMode::Unified => "unified",
        }
    }

    #[getter]
    fn n_models(&self) -> usize {
        self.inner.models().len()
    }

    #[getter]
    fn n_paths(&self) -> usize {
        self.inner.paths().len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.model(0).base().data_dim()
    }

    /// Tracks a feature sequence. Returns `(pose frames, per-frame model
    /// posterior mass, per-frame action labels)`.
    #[pyo3(signature = (features, seed = 0, n_particles = 500, pose_latent_dim = 3))]
    fn track(
        &self,
        features: Vec<Vec<f64>>,
        seed: u64,
        n_particles: usize,
        pose_latent_dim: usize,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<String>)> {
        let obs = FeatureSequence {
            frames: features.into_iter().map(FeatureVector::new).collect(),
            fps: 30.0,
            action_label: "python".into(),
            subject_id: "python".into(),
        };
        if obs.is_empty() {
            return Err(PyValueError::new_err("no feature frames"));
        }
        let pipeline = PosePipeline::fit(&self.inner, pose_latent_dim, &FitOptions::default()).map_err(py_err)?;
        let defaults = ExperimentConfig::default().tracker;
        let cfg = TrackerConfig { seed, n_particles, ..defaults };
        let out = tracker::track(&self.inner, &obs, &pipeline, &cfg).map_err(py_err)?;
        Ok((
            out.poses.frames.into_iter().map(|p| p.angles).collect(),
            out.frames.iter().map(|f| f.mass.clone()).collect(),
            out.frames.into_iter().map(|f| f.action).collect(),
        ))
    }
}

/// Test data of one experiment seed: `(ground-truth poses, observed features)`.
#[pyfunction]
#[pyo3(signature = (config_toml = None, seed = 1))]
fn test_sequence(config_toml: Option<&str>, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (gt, obs) = harness::test_sequence(&config(config_toml)?, seed).map_err(py_err)?;
    Ok((gt.frames.into_iter().map(|p| p.angles).collect(), obs.frames.into_iter().map(|f| f.values).collect()))
}

#[pyclass(frozen)]
struct MetricsReport {
    inner: harness::MetricsReport,
}

#[pymethods]
impl MetricsReport {
    #[getter]
    fn experiment(&self) -> String {
        self.inner.experiment.clone()
    }

    #[getter]
    fn baseline_median(&self) -> f64 {
        self.inner.baseline_median
    }

    #[getter]
    fn treatment_median(&self) -> f64 {
        self.inner.treatment_median
    }

    #[getter]
    fn improvement_pct(&self) -> f64 {
        self.inner.improvement_pct
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.iter().map(|s| s.seed).collect()
    }

    /// `(baseline, treatment)` error per seed.
    #[getter]
    fn per_seed(&self) -> Vec<(f64, f64)> {
        self.inner.seeds.iter().map(|s| (s.baseline.error, s.treatment.error)).collect()
    }

    fn extra_median(&self, name: &str) -> Option<f64> {
        self.inner.extra_median(name)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "MetricsReport({}: {:.4} -> {:.4}, {:.1}%)",
            self.inner.experiment, self.inner.baseline_median, self.inner.treatment_median, self.inner.improvement_pct
        )
    }
}

/// Transition-machinery A/B over the config's seeds.
#[pyfunction]
#[pyo3(signature = (config_toml = None))]
fn run_ab_transitions(py: Python<'_>, config_toml: Option<&str>) -> PyResult<MetricsReport> {
    let cfg = config(config_toml)?;
    let inner = py.detach(|| harness::run_ab_transitions(&cfg)).map_err(py_err)?;
    Ok(MetricsReport { inner })
}

/// Ensemble versus pooled estimator A/B over the config's seeds.
#[pyfunction]
#[pyo3(signature = (config_toml = None))]
fn run_ab_ensemble(py: Python<'_>, config_toml: Option<&str>) -> PyResult<MetricsReport> {
    let cfg = config(config_toml)?;
    let inner = py.detach(|| harness::run_ab_ensemble(&cfg)).map_err(py_err)?;
    Ok(MetricsReport { inner })
}

/// Default experiment config as TOML text.
#[pyfunction]
fn default_config() -> PyResult<String> {
    ExperimentConfig::default().to_toml().map_err(py_err)
}

fn pose2d(joints: Vec<(f64, f64)>) -> Pose2D {
    Pose2D::new(joints.into_iter().map(|(x, y)| [x, y]).collect())
}

/// Centroid offsets and limb angles of a 2D joint chain.
#[pyfunction]
fn extract_pose_features(joints: Vec<(f64, f64)>) -> PyResult<Vec<f64>> {
    let n = joints.len();
    extract_features(&pose2d(joints), &PoseFeatureSpec::chain(n)).map_err(py_err)
}

#[pyfunction]
fn pose_rmse(est: Vec<Vec<(f64, f64)>>, gt: Vec<Vec<(f64, f64)>>) -> PyResult<f64> {
    let est: Vec<Pose2D> = est.into_iter().map(pose2d).collect();
    let gt: Vec<Pose2D> = gt.into_iter().map(pose2d).collect();
    rmse(&est, &gt).map_err(py_err)
}

/// Per-joint convex combination; `weights[j][k]` is expert `k`'s weight at joint `j`.
#[pyfunction]
fn merge_poses(weights: Vec<Vec<f64>>, experts: Vec<Vec<(f64, f64)>>) -> PyResult<Vec<(f64, f64)>> {
    let cols = weights.first().map_or(0, Vec::len);
    if weights.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged weight matrix"));
    }
    let flat: Vec<f64> = weights.iter().flatten().copied().collect();
    let m = MergerModel::new(DMatrix::from_row_slice(weights.len(), cols, &flat)).map_err(py_err)?;
    let experts: Vec<Pose2D> = experts.into_iter().map(pose2d).collect();
    let merged = merge(&m, &experts).map_err(py_err)?;
    Ok(merged.joints.into_iter().map(|j| (j[0], j[1])).collect())
}

/// Runs the `motionprior` command line with `args` (no program name).
#[pyfunction]
fn cli_run(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("motionprior".to_string()).chain(args).collect();
    py.detach(|| harness::cli_run(argv))
}

#[pymodule]
fn motionprior_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ModelBank>()?;
    m.add_class::<MetricsReport>()?;
    m.add_function(wrap_pyfunction!(generate_action, m)?)?;
    m.add_function(wrap_pyfunction!(joint_error, m)?)?;
    m.add_function(wrap_pyfunction!(test_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(run_ab_transitions, m)?)?;
    m.add_function(wrap_pyfunction!(run_ab_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(extract_pose_features, m)?)?;
    m.add_function(wrap_pyfunction!(pose_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(merge_poses, m)?)?;
    m.add_function(wrap_pyfunction!(cli_run, m)?)?;
    Ok(())
}
