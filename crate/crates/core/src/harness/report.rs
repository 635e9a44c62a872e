//! A/B metrics reports and their plot-data CSVs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(baseline − treatment) / baseline · 100`; zero when the baseline is zero.
pub fn relative_improvement(baseline: f64, treatment: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (baseline - treatment) / baseline * 100.0
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One arm of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub error: f64,
    /// Per-frame error; empty for experiments without a time axis.
    pub frame_errors: Vec<f64>,
    /// Per-frame posterior mass per model.
    pub posterior: Vec<Vec<f64>>,
    /// Per-frame action label of the estimate.
    pub actions: Vec<String>,
}

impl ArmRun {
    pub fn scalar(error: f64) -> Self {
        ArmRun { error, frame_errors: Vec::new(), posterior: Vec::new(), actions: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub baseline: ArmRun,
    pub treatment: ArmRun,
    pub improvement_pct: f64,
    /// Extra named scalars (accuracies, lags, ...).
    #[serde(default)]
    pub extras: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub metric: String,
    pub baseline_label: String,
    pub treatment_label: String,
    pub seeds: Vec<SeedResult>,
    pub baseline_median: f64,
    pub treatment_median: f64,
    /// Improvement of the treatment median over the baseline median.
    pub improvement_pct: f64,
    /// Median of the per-seed improvements.
    pub median_seed_improvement_pct: f64,
}

impl MetricsReport {
    pub fn assemble(
        experiment: &str,
        metric: &str,
        baseline_label: &str,
        treatment_label: &str,
        runs: Vec<(u64, ArmRun, ArmRun, Vec<(String, f64)>)>,
    ) -> Self {
        let seeds: Vec<SeedResult> = runs
            .into_iter()
            .map(|(seed, baseline, treatment, extras)| SeedResult {
                seed,
                improvement_pct: relative_improvement(baseline.error, treatment.error),
                baseline,
                treatment,
                extras,
            })
            .collect();
        let baseline_median = median(&seeds.iter().map(|s| s.baseline.error).collect::<Vec<_>>());
        let treatment_median = median(&seeds.iter().map(|s| s.treatment.error).collect::<Vec<_>>());
        MetricsReport {
            experiment: experiment.to_string(),
            metric: metric.to_string(),
            baseline_label: baseline_label.to_string(),
            treatment_label: treatment_label.to_string(),
            improvement_pct: relative_improvement(baseline_median, treatment_median),
            median_seed_improvement_pct: median(&seeds.iter().map(|s| s.improvement_pct).collect::<Vec<_>>()),
            baseline_median,
            treatment_median,
            seeds,
        }
    }

    /// Recomputes every derived field from the per-seed entries.
    pub fn recomputed(&self) -> Self {
        let runs = self
            .seeds
            .iter()
            .map(|s| (s.seed, s.baseline.clone(), s.treatment.clone(), s.extras.clone()))
            .collect();
        Self::assemble(&self.experiment, &self.metric, &self.baseline_label, &self.treatment_label, runs)
    }

    pub fn extra_median(&self, name: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.extras.iter().find(|(k, _)| k == name).map(|(_, v)| *v))
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Writes `<stem>_error.csv` and `<stem>_posterior.csv` into `dir` and
/// returns their paths. Experiments without a time axis produce no files.
pub fn emit_plot_data(report: &MetricsReport, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
    let frames = report.seeds.first().map_or(0, |s| s.baseline.frame_errors.len());
    if frames == 0 {
        return Ok(Vec::new());
    }
    for s in &report.seeds {
        for arm in [&s.baseline, &s.treatment] {
            if arm.frame_errors.len() != frames || (!arm.posterior.is_empty() && arm.posterior.len() != frames) {
                return Err(Error::invalid("report arms disagree on frame count"));
            }
        }
    }
    std::fs::create_dir_all(dir)?;

    let error_path = dir.join(format!("{stem}_error.csv"));
    let mut out = std::io::BufWriter::new(std::fs::File::create(&error_path)?);
    writeln!(out, "# per-frame {}; columns <arm>_seed<seed>, arms baseline={} treatment={}", report.metric, report.baseline_label, report.treatment_label)?;
    let mut header = vec!["frame".to_string()];
    for s in &report.seeds {
        header.push(format!("baseline_seed{}", s.seed));
        header.push(format!("treatment_seed{}", s.seed));
    }
    writeln!(out, "{}", header.join(","))?;
    for t in 0..frames {
        let mut row = vec![t.to_string()];
        for s in &report.seeds {
            row.push(format!("{:?}", s.baseline.frame_errors[t]));
            row.push(format!("{:?}", s.treatment.frame_errors[t]));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;

    let post_path = dir.join(format!("{stem}_posterior.csv"));
    let mut out = std::io::BufWriter::new(std::fs::File::create(&post_path)?);
    writeln!(out, "# per-frame posterior mass; columns <arm>_seed<seed>_model<m>")?;
    let mut header = vec!["frame".to_string()];
    for s in &report.seeds {
        for (arm, run) in [("baseline", &s.baseline), ("treatment", &s.treatment)] {
            for m in 0..run.posterior.first().map_or(0, |p| p.len()) {
                header.push(format!("{arm}_seed{}_model{m}", s.seed));
            }
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for t in 0..frames {
        let mut row = vec![t.to_string()];
        for s in &report.seeds {
            for run in [&s.baseline, &s.treatment] {
                if let Some(p) = run.posterior.get(t) {
                    row.extend(p.iter().map(|v| format!("{v:?}")));
                }
            }
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(vec![error_path, post_path])
}
