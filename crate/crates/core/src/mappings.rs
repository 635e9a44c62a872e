//! Tagged GP regressions between spaces.
//!
//! A [`GpMapping`] carries the names of the spaces it connects, so features,
//! feature-latents, pose-latents and poses cannot be wired together in the
//! wrong order: [`map_chain`] and [`feature_to_pose`] check the tags before
//! evaluating anything.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::rows::{all_finite, center, column_mean, from_rows, sqdist_rows, to_rows};
use crate::latent::{FitOptions, FitReport, GpLikelihood, GpPredictor, KernelParams};
use crate::optim::{self, LbfgsOptions};
use crate::skeleton::{FeatureVector, Pose};

pub const FEATURE_SPACE: &str = "feature";
pub const POSE_SPACE: &str = "pose";
pub const FEATURE_LATENT_SPACE: &str = "feature_latent";
pub const POSE_LATENT_SPACE: &str = "pose_latent";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MappingOptions {
    pub fit: FitOptions,
    /// Keep the noise variance at this value instead of learning it.
    pub fixed_noise: Option<f64>,
    /// Skip hyperparameter optimisation and use the heuristic initial kernel.
    pub optimize: bool,
}

impl Default for MappingOptions {
    fn default() -> Self {
        MappingOptions { fit: FitOptions::default(), fixed_noise: None, optimize: true }
    }
}

/// GP regression from an `input_space` to an `output_space`. Targets are
/// centred, so far from the data the prediction reverts to the target mean.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MappingDoc", into = "MappingDoc")]
pub struct GpMapping {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    target_mean: DVector<f64>,
    kernel: KernelParams,
    input_space: String,
    output_space: String,
    predictor: GpPredictor,
}

#[derive(Serialize, Deserialize)]
struct MappingDoc {
    tags: (String, String),
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    kernel: KernelParams,
    p: usize,
    q: usize,
}

impl From<GpMapping> for MappingDoc {
    fn from(m: GpMapping) -> Self {
        MappingDoc {
            p: m.inputs.ncols(),
            q: m.targets.ncols(),
            tags: (m.input_space, m.output_space),
            inputs: to_rows(&m.inputs),
            targets: to_rows(&m.targets),
            kernel: m.kernel,
        }
    }
}

impl TryFrom<MappingDoc> for GpMapping {
    type Error = Error;

    fn try_from(doc: MappingDoc) -> Result<Self> {
        GpMapping::new(
            from_rows(&doc.inputs, doc.p)?,
            from_rows(&doc.targets, doc.q)?,
            doc.kernel,
            &doc.tags.0,
            &doc.tags.1,
        )
    }
}

impl GpMapping {
    /// Builds a mapping with a given kernel (no optimisation).
    pub fn new(
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        kernel: KernelParams,
        input_space: &str,
        output_space: &str,
    ) -> Result<Self> {
        validate(&inputs, &targets, input_space, output_space)?;
        let target_mean = column_mean(&targets);
        let predictor = GpPredictor::new(&inputs, &center(&targets, &target_mean), &kernel)?;
        Ok(GpMapping {
            inputs,
            targets,
            target_mean,
            kernel,
            input_space: input_space.to_string(),
            output_space: output_space.to_string(),
            predictor,
        })
    }

    pub fn input_space(&self) -> &str {
        &self.input_space
    }

    pub fn output_space(&self) -> &str {
        &self.output_space
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.predictor.mean(x)? + &self.target_mean)
    }

    /// Lipschitz bound of the mean from the kernel: each RBF column changes at
    /// most `σ²·e^{-1/2}/ℓ` per unit input, weighted by its row of `α`.
    pub fn lipschitz_bound(&self) -> f64 {
        let k = &self.kernel;
        let slope = k.signal_variance * (-0.5f64).exp() / k.length_scale;
        let alpha = self.predictor.alpha();
        slope * (0..alpha.nrows()).map(|i| alpha.row(i).norm()).sum::<f64>()
    }
}

fn validate(inputs: &DMatrix<f64>, targets: &DMatrix<f64>, input_space: &str, output_space: &str) -> Result<()> {
    if input_space.is_empty() || output_space.is_empty() {
        return Err(Error::invalid("mapping space tags must be non-empty"));
    }
    if inputs.nrows() < 2 {
        return Err(Error::invalid("a mapping needs at least 2 training pairs"));
    }
    if inputs.nrows() != targets.nrows() {
        return Err(Error::invalid(format!(
            "source has {} rows, destination {}",
            inputs.nrows(),
            targets.nrows()
        )));
    }
    if !all_finite(inputs) || !all_finite(targets) {
        return Err(Error::invalid("mapping data must be finite"));
    }
    Ok(())
}

/// Marginal-likelihood objective of a mapping over its kernel log-parameters
/// (`[ln σ², ln ℓ]`, plus `ln β` unless the noise is fixed), with a unit
/// Gaussian prior on each log-parameter.
pub struct MappingObjective<'a> {
    pub inputs: &'a DMatrix<f64>,
    pub targets: &'a DMatrix<f64>,
    pub fixed_noise: Option<f64>,
}

impl MappingObjective<'_> {
    fn kernel(&self, p: &[f64]) -> KernelParams {
        let ln_noise = match self.fixed_noise {
            Some(b) => b.ln(),
            None => p[2],
        };
        KernelParams::from_log_params(&[p[0], p[1], ln_noise], 0.0)
    }

    pub fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lik = GpLikelihood::evaluate(self.inputs, self.targets, &self.kernel(p), false)?;
        let value = lik.value - 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        let grad = p.iter().enumerate().map(|(i, v)| lik.d_log_params[i] - v).collect();
        Ok((value, grad))
    }

    pub fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(p)?.0)
    }
}

fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| sqdist_rows(x, i, x, j).sqrt())
        .filter(|v| *v > 0.0)
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

pub fn fit_mapping(
    src: &DMatrix<f64>,
    dst: &DMatrix<f64>,
    opts: &MappingOptions,
    input_space: &str,
    output_space: &str,
) -> Result<GpMapping> {
    Ok(fit_mapping_traced(src, dst, opts, input_space, output_space)?.0)
}

pub fn fit_mapping_traced(
    src: &DMatrix<f64>,
    dst: &DMatrix<f64>,
    opts: &MappingOptions,
    input_space: &str,
    output_space: &str,
) -> Result<(GpMapping, FitReport)> {
    validate(src, dst, input_space, output_space)?;
    if let Some(b) = opts.fixed_noise {
        if !(b > 0.0) {
            return Err(Error::invalid("fixed noise must be positive"));
        }
    }
    let centered = center(dst, &column_mean(dst));
    let var = (centered.norm_squared() / centered.len() as f64).max(1e-6);
    let mut p0 = vec![var.ln(), median_pairwise_distance(src).ln()];
    if opts.fixed_noise.is_none() {
        p0.push((0.01 * var).ln());
    }
    let objective = MappingObjective { inputs: src, targets: &centered, fixed_noise: opts.fixed_noise };
    let (p, report) = if opts.optimize {
        let lbfgs = LbfgsOptions { max_iters: opts.fit.max_iters, grad_tol: opts.fit.grad_tol, ..Default::default() };
        let min = optim::minimize(
            |p, g| {
                let (v, grad) = objective.value_and_gradient(p)?;
                for (gi, d) in g.iter_mut().zip(grad) {
                    *gi = -d;
                }
                Ok(-v)
            },
            p0,
            &lbfgs,
        )?;
        let trace = min.trace.iter().map(|v| -v).collect();
        (min.x, FitReport { trace, iterations: min.iterations, converged: min.converged })
    } else {
        (p0, FitReport::default())
    };
    let kernel = objective.kernel(&p);
    Ok((GpMapping::new(src.clone(), dst.clone(), kernel, input_space, output_space)?, report))
}

/// Posterior mean and variance of the mapping at `x`.
pub fn map(m: &GpMapping, x: &[f64]) -> Result<(DVector<f64>, f64)> {
    let (mean, var) = m.predictor.predict(x)?;
    Ok((mean + &m.target_mean, var))
}

/// Evaluates mappings in order, requiring each output tag to match the next input tag.
pub fn map_chain(chain: &[&GpMapping], x: &[f64]) -> Result<DVector<f64>> {
    let Some((first, rest)) = chain.split_first() else {
        return Err(Error::invalid("empty mapping chain"));
    };
    let mut v = first.mean(x)?;
    let mut space = first.output_space();
    for m in rest {
        if m.input_space() != space {
            return Err(Error::Wiring { expected: m.input_space().to_string(), found: space.to_string() });
        }
        v = m.mean(v.as_slice())?;
        space = m.output_space();
    }
    Ok(v)
}

pub fn feature_to_pose(m: &GpMapping, f: &FeatureVector) -> Result<Pose> {
    if m.input_space() != FEATURE_SPACE {
        return Err(Error::Wiring { expected: FEATURE_SPACE.into(), found: m.input_space().into() });
    }
    if m.output_space() != POSE_SPACE {
        return Err(Error::Wiring { expected: POSE_SPACE.into(), found: m.output_space().into() });
    }
    Ok(Pose::new(m.mean(&f.values)?.as_slice().to_vec()))
}
