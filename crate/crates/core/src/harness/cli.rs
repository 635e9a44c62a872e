//! `motionprior` command line. Every subcommand writes under `--out` and
//! finishes with a `manifest.json` listing the files it wrote and their
//! SHA-256 hashes.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{ActionGenerator, ActionPoseBank2D, PoseFeatureSpec};
use crate::error::{Error, Result};
use crate::harness::ab::bank_options;
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{observation_model, stream, switch_sequence, training_sets};
use crate::harness::report::emit_plot_data;
use crate::harness::{ensemble_data_spec, run_ab_ensemble, run_ab_transitions};
use crate::latent::{gpdm_fit, gplvm_fit, pca_fit, FitOptions, GpdmOptions, ModelDocument};
use crate::skeleton::{
    catalog_action, generate_synthetic_action, load_features, load_sequence, mean, observe_sequence,
    per_frame_joint_error, save_features, save_sequence, MotionSequence, Skeleton,
};
use crate::tracker::{track, write_track_metadata, PosePipeline, TrackerConfig};
use crate::transitions::{build_separate_bank, build_unified_bank, ActionTrainingSet, BankMode, ModelBank};

#[derive(Parser, Debug)]
#[command(name = "motionprior", version, about = "Motion-prior pose tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic action sequences, optionally with observations and a switch sequence.
    GenData {
        #[arg(long, value_delimiter = ',', default_value = "walk,jog")]
        actions: Vec<String>,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Also write `<action>_features.csv` from the seed's observation model.
        #[arg(long)]
        features: bool,
        /// Also write `switch.csv` (first action to second) switching at this frame.
        #[arg(long)]
        switch_at: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fits a model and writes it as JSON.
    Train {
        kind: TrainKind,
        /// Sequence CSVs (pca, gplvm, gpdm, bank).
        #[arg(long, value_delimiter = ',')]
        data: Vec<PathBuf>,
        /// Feature CSVs matching `--data` (bank).
        #[arg(long, value_delimiter = ',')]
        features: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        latent_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Tracks an observation sequence with a trained bank.
    Track {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Mean per-joint position error of an estimate against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Transition machinery on/off over the configured seeds.
    AbTransitions {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Action-weighted ensemble against one pooled estimator.
    AbEnsemble {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrainKind {
    Pca,
    Gplvm,
    Gpdm,
    Bank,
    Ensemble,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub joint_error: f64,
    pub frames: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Runs the CLI on `argv` (program name first). Returns the process exit
/// code: 0 on success, 1 on usage or input errors, 2 on numerical failure.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(p, text)?;
        Ok(())
    }

    fn adopt(&mut self, paths: &[PathBuf]) {
        for p in paths {
            if let Some(name) = p.file_name() {
                self.files.push(name.to_string_lossy().into_owned());
            }
        }
    }

    fn finish(self, command: &str) -> Result<()> {
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = std::fs::read(self.dir.join(name))?;
            files.push(ManifestEntry { path: name.clone(), sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 });
        }
        let manifest = Manifest { command: command.to_string(), files };
        std::fs::write(self.dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { actions, frames, seed, noise, features, switch_at, out } => {
            gen_data(&actions, frames, seed, noise, features, switch_at, &out)
        }
        Command::Train { kind, data, features, config, latent_dim, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            train(kind, &data, &features, &cfg, latent_dim, seed, &out)
        }
        Command::Track { bank, features, config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            let bank = ModelBank::from_json(&std::fs::read_to_string(bank)?)?;
            let obs = load_features(features)?;
            let fit = FitOptions { max_iters: cfg.model.max_iters, ..FitOptions::default() };
            let pipeline = PosePipeline::fit(&bank, cfg.model.pose_latent_dim, &fit)?;
            let tracker = TrackerConfig { seed: stream(seed, 60) ^ cfg.tracker.seed, ..cfg.tracker.clone() };
            let result = track(&bank, &obs, &pipeline, &tracker)?;
            let mut o = Outputs::new(&out)?;
            save_sequence(&result.poses, o.path("poses.csv"))?;
            write_track_metadata(&o.path("track_meta.csv"), &result.frames)?;
            o.finish("track")
        }
        Command::Eval { est, gt, out } => {
            let (est, gt) = (load_sequence(est)?, load_sequence(gt)?);
            let errors = per_frame_joint_error(&est, &gt, &Skeleton::stick_figure())?;
            let report = EvalReport { joint_error: mean(&errors), frames: errors.len() };
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            let mut o = Outputs::new(&out)?;
            o.write("eval.json", &text)?;
            let mut csv = String::from("# per-frame mean joint position error\nframe,joint_error\n");
            for (t, e) in errors.iter().enumerate() {
                csv.push_str(&format!("{t},{e:?}\n"));
            }
            o.write("eval_frames.csv", &csv)?;
            o.finish("eval")
        }
        Command::AbTransitions { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let report = run_ab_transitions(&cfg)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let mut o = Outputs::new(&dir)?;
            o.write("ab_transitions.json", &report.to_json()?)?;
            o.adopt(&emit_plot_data(&report, &dir, "ab_transitions")?);
            println!("{}: median improvement {:.2}%", report.experiment, report.improvement_pct);
            o.finish("ab-transitions")
        }
        Command::AbEnsemble { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let report = run_ab_ensemble(&cfg)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let mut o = Outputs::new(&dir)?;
            o.write("ab_ensemble.json", &report.to_json()?)?;
            println!("{}: median improvement {:.2}%", report.experiment, report.improvement_pct);
            o.finish("ab-ensemble")
        }
    }
}

fn gen_data(
    actions: &[String],
    frames: usize,
    seed: u64,
    noise: f64,
    features: bool,
    switch_at: Option<usize>,
    out: &Path,
) -> Result<()> {
    if actions.is_empty() {
        return Err(Error::invalid("--actions is empty"));
    }
    let specs = actions.iter().map(|a| catalog_action(a)).collect::<Result<Vec<_>>>()?;
    let cfg = ExperimentConfig::default();
    let obs_model = observation_model(&cfg.dataset, Skeleton::stick_figure().dof(), seed)?;
    let mut o = Outputs::new(out)?;
    let emit = |o: &mut Outputs, name: &str, seq: &MotionSequence, obs_seed: u64| -> Result<()> {
        save_sequence(seq, o.path(&format!("{name}.csv")))?;
        if features {
            save_features(&observe_sequence(seq, &obs_model, obs_seed)?, o.path(&format!("{name}_features.csv")))?;
        }
        Ok(())
    };
    for (i, spec) in specs.iter().enumerate() {
        let seq = generate_synthetic_action(spec, frames, noise, stream(seed, 10 + i as u64))?;
        emit(&mut o, &spec.label, &seq, stream(seed, 20 + i as u64))?;
    }
    if let Some(at) = switch_at {
        if specs.len() < 2 || at >= frames {
            return Err(Error::invalid("--switch-at needs two actions and a frame inside the sequence"));
        }
        let seq = switch_sequence(&specs[0], &specs[1], frames, at, cfg.dataset.blend_frames, noise, seed)?;
        emit(&mut o, "switch", &seq, stream(seed, 50))?;
    }
    o.finish("gen-data")
}

fn stacked(data: &[PathBuf]) -> Result<Vec<MotionSequence>> {
    if data.is_empty() {
        return Err(Error::invalid("--data needs at least one sequence CSV"));
    }
    data.iter().map(load_sequence).collect()
}

fn train(
    kind: TrainKind,
    data: &[PathBuf],
    features: &[PathBuf],
    cfg: &ExperimentConfig,
    latent_dim: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let fit = FitOptions { max_iters: cfg.model.max_iters, seed: stream(seed, 40), ..FitOptions::default() };
    let mut o = Outputs::new(out)?;
    match kind {
        TrainKind::Pca | TrainKind::Gplvm => {
            let seqs = stacked(data)?;
            let rows: Vec<_> = seqs.iter().map(MotionSequence::to_matrix).collect();
            let total: usize = rows.iter().map(|m| m.nrows()).sum();
            let mut y = nalgebra::DMatrix::zeros(total, rows[0].ncols());
            let mut at = 0;
            for m in &rows {
                if m.ncols() != y.ncols() {
                    return Err(Error::invalid("sequences differ in dimension"));
                }
                y.rows_mut(at, m.nrows()).copy_from(m);
                at += m.nrows();
            }
            let doc = match kind {
                TrainKind::Pca => ModelDocument::Pca(pca_fit(&y, latent_dim)?),
                _ => ModelDocument::Gplvm(gplvm_fit(&y, latent_dim, &fit)?),
            };
            o.write("model.json", &doc.to_json()?)?;
        }
        TrainKind::Gpdm => {
            let seqs: Vec<_> = stacked(data)?.iter().map(MotionSequence::to_matrix).collect();
            let opts = GpdmOptions {
                fit,
                dyn_weight: cfg.model.dyn_weight,
                linear_weight: cfg.model.linear_weight,
                ..GpdmOptions::default()
            };
            o.write("model.json", &ModelDocument::Gpdm(gpdm_fit(&seqs, latent_dim, &opts)?).to_json()?)?;
        }
        TrainKind::Bank => {
            let sets = if data.is_empty() {
                let obs = observation_model(&cfg.dataset, Skeleton::stick_figure().dof(), seed)?;
                training_sets(&cfg.dataset, &obs, seed)?
            } else {
                if features.len() != data.len() {
                    return Err(Error::invalid("--features must list one CSV per --data sequence"));
                }
                data.iter()
                    .zip(features)
                    .map(|(d, f)| ActionTrainingSet::new(load_sequence(d)?, load_features(f)?))
                    .collect::<Result<Vec<_>>>()?
            };
            let opts = bank_options(cfg, seed);
            let bank = match cfg.model.mode {
                BankMode::Separate => build_separate_bank(&sets, &opts)?,
                BankMode::Unified => build_unified_bank(&sets, &opts, cfg.model.topo_weight)?,
            };
            o.write("bank.json", &bank.to_json()?)?;
        }
        TrainKind::Ensemble => {
            let e = &cfg.ensemble;
            let gen = ActionGenerator::new(ensemble_data_spec(cfg), stream(seed, 70))?;
            let samples = gen.samples(e.train_per_action, stream(seed, 71));
            let bank = ActionPoseBank2D::train(&samples, gen.labels(), PoseFeatureSpec::chain(e.joints), &fit)?;
            o.write("ensemble.json", &serde_json::to_string_pretty(&bank)?)?;
        }
    }
    o.finish("train")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::DegenerateWeights), 2);
        assert_eq!(exit_code(&Error::Diverged { iteration: 3 }), 2);
        assert_eq!(exit_code(&Error::Conditioning("k".into())), 2);
        assert_eq!(exit_code(&Error::invalid("x")), 1);
        assert_eq!(exit_code(&Error::UnknownAction("fly".into())), 1);
    }

    #[test]
    fn help_and_usage_errors() {
        assert_eq!(cli_run(["motionprior", "--help"]), 0);
        assert_eq!(cli_run(["motionprior", "gen-data", "--nope"]), 1);
        assert_eq!(cli_run(["motionprior"]), 1);
    }
}
