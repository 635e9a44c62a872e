use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gp::GpPredictor;
use super::gplvm::{
    initial_kernel, initial_latents, validate_training, FitOptions, FitReport, LatentModel, LatentObjective,
};
use super::kernel::KernelParams;
use super::rows::{center, column_mean, from_rows, to_rows};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpdmOptions {
    pub fit: FitOptions,
    /// Weight of the dynamics term; 0 leaves only the observation GP.
    pub dyn_weight: f64,
    /// Fixed linear term of the dynamics kernel (0 keeps the far-field prediction at "stay put").
    pub linear_weight: f64,
    /// Pairs of global frame indices pulled together in latent space.
    pub topo_pairs: Vec<(usize, usize)>,
    pub topo_weight: f64,
}

impl Default for GpdmOptions {
    fn default() -> Self {
        GpdmOptions {
            fit: FitOptions::default(),
            dyn_weight: 1.0,
            linear_weight: 0.0,
            topo_pairs: Vec::new(),
            topo_weight: 0.0,
        }
    }
}

/// GPLVM plus a GP over latent steps. The dynamics GP predicts the
/// displacement `x_t − x_{t−1}`, so its mean function is the identity map.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GpdmDoc", into = "GpdmDoc")]
pub struct GpdmModel {
    base: LatentModel,
    dyn_kernel: KernelParams,
    sequence_lengths: Vec<usize>,
    dyn_pairs: Vec<(usize, usize)>,
    dynamics: GpPredictor,
}

#[derive(Serialize, Deserialize)]
struct GpdmDoc {
    d: usize,
    mean: Vec<f64>,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    #[serde(rename = "Y_centered")]
    y_centered: Vec<Vec<f64>>,
    kernel: KernelParams,
    dyn_kernel: KernelParams,
    dyn_pairs: Vec<(usize, usize)>,
    sequence_lengths: Vec<usize>,
}

impl From<GpdmModel> for GpdmDoc {
    fn from(m: GpdmModel) -> Self {
        GpdmDoc {
            d: m.base.latent_dim(),
            mean: m.base.data_mean().as_slice().to_vec(),
            x: to_rows(m.base.latents()),
            y_centered: to_rows(m.base.y_centered()),
            kernel: *m.base.kernel(),
            dyn_kernel: m.dyn_kernel,
            dyn_pairs: m.dyn_pairs,
            sequence_lengths: m.sequence_lengths,
        }
    }
}

impl TryFrom<GpdmDoc> for GpdmModel {
    type Error = Error;

    fn try_from(doc: GpdmDoc) -> Result<Self> {
        let base = LatentModel::new(
            from_rows(&doc.x, doc.d)?,
            from_rows(&doc.y_centered, doc.mean.len())?,
            DVector::from_vec(doc.mean),
            doc.kernel,
        )?;
        let model = GpdmModel::new(base, doc.dyn_kernel, doc.sequence_lengths)?;
        if model.dyn_pairs != doc.dyn_pairs {
            return Err(Error::invalid("dyn_pairs disagree with sequence_lengths"));
        }
        Ok(model)
    }
}

/// Consecutive-frame pairs inside each block; never across a block boundary.
pub(crate) fn dynamics_pairs(lengths: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut start = 0;
    for &len in lengths {
        pairs.extend((start..start + len.saturating_sub(1)).map(|i| (i, i + 1)));
        start += len;
    }
    pairs
}

pub(crate) fn sequence_starts(lengths: &[usize]) -> Vec<usize> {
    lengths
        .iter()
        .scan(0, |acc, &len| {
            let s = *acc;
            *acc += len;
            Some(s)
        })
        .collect()
}

impl GpdmModel {
    pub fn new(base: LatentModel, dyn_kernel: KernelParams, sequence_lengths: Vec<usize>) -> Result<Self> {
        if sequence_lengths.iter().sum::<usize>() != base.len() {
            return Err(Error::invalid("sequence lengths must add up to the number of latent points"));
        }
        if sequence_lengths.iter().any(|&l| l < 2) {
            return Err(Error::invalid("every sequence needs at least 2 frames"));
        }
        let dyn_pairs = dynamics_pairs(&sequence_lengths);
        let x = base.latents();
        let d = base.latent_dim();
        let inputs = DMatrix::from_fn(dyn_pairs.len(), d, |r, c| x[(dyn_pairs[r].0, c)]);
        let deltas = DMatrix::from_fn(dyn_pairs.len(), d, |r, c| x[(dyn_pairs[r].1, c)] - x[(dyn_pairs[r].0, c)]);
        let dynamics = GpPredictor::new(&inputs, &deltas, &dyn_kernel)?;
        Ok(GpdmModel { base, dyn_kernel, sequence_lengths, dyn_pairs, dynamics })
    }

    pub fn base(&self) -> &LatentModel {
        &self.base
    }

    pub fn dyn_kernel(&self) -> &KernelParams {
        &self.dyn_kernel
    }

    pub fn dyn_pairs(&self) -> &[(usize, usize)] {
        &self.dyn_pairs
    }

    pub fn sequence_lengths(&self) -> &[usize] {
        &self.sequence_lengths
    }

    pub fn latent_dim(&self) -> usize {
        self.base.latent_dim()
    }
}

/// One step of the temporal mapping: predicted next latent and its variance.
pub fn dynamics_step(model: &GpdmModel, x: &[f64]) -> Result<(DVector<f64>, f64)> {
    let (delta, var) = model.dynamics.predict(x)?;
    Ok((delta + DVector::from_column_slice(x), var))
}

/// Mean-only variant used in the particle filter's inner loop.
pub(crate) fn dynamics_mean(model: &GpdmModel, x: &[f64]) -> Result<DVector<f64>> {
    Ok(model.dynamics.mean(x)? + DVector::from_column_slice(x))
}

pub fn gpdm_fit(sequences: &[DMatrix<f64>], d: usize, opts: &GpdmOptions) -> Result<GpdmModel> {
    Ok(gpdm_fit_traced(sequences, d, opts)?.0)
}

/// Stacks the sequences, centres them with the pooled mean, and builds the
/// MAP objective `fit_from` optimises.
pub(crate) fn stacked(sequences: &[DMatrix<f64>], d: usize) -> Result<(DMatrix<f64>, DVector<f64>, Vec<usize>)> {
    if sequences.is_empty() {
        return Err(Error::invalid("need at least one training sequence"));
    }
    let dim = sequences[0].ncols();
    for (s, block) in sequences.iter().enumerate() {
        if block.nrows() < 3 {
            return Err(Error::invalid(format!("sequence {s} has fewer than 3 frames")));
        }
        if block.ncols() != dim {
            return Err(Error::invalid(format!("sequence {s} has dimension {} != {dim}", block.ncols())));
        }
    }
    let lengths: Vec<usize> = sequences.iter().map(|b| b.nrows()).collect();
    let n: usize = lengths.iter().sum();
    let mut y = DMatrix::zeros(n, dim);
    let mut row = 0;
    for block in sequences {
        y.rows_mut(row, block.nrows()).copy_from(block);
        row += block.nrows();
    }
    validate_training(&y, d)?;
    let mean = column_mean(&y);
    Ok((center(&y, &mean), mean, lengths))
}

pub(crate) fn gpdm_objective<'a>(
    yc: &'a DMatrix<f64>,
    d: usize,
    lengths: &[usize],
    opts: &GpdmOptions,
) -> LatentObjective<'a> {
    LatentObjective {
        y: yc,
        latent_dim: d,
        prior_rows: sequence_starts(lengths),
        dyn_pairs: dynamics_pairs(lengths),
        dyn_weight: opts.dyn_weight,
        linear_weight: opts.linear_weight,
        topo_pairs: opts.topo_pairs.clone(),
        topo_weight: opts.topo_weight,
    }
}

pub fn gpdm_fit_traced(
    sequences: &[DMatrix<f64>],
    d: usize,
    opts: &GpdmOptions,
) -> Result<(GpdmModel, FitReport)> {
    let (yc, mean, lengths) = stacked(sequences, d)?;
    let n = yc.nrows();
    if opts.topo_pairs.iter().any(|&(a, b)| a >= n || b >= n) {
        return Err(Error::invalid("topological pair index out of range"));
    }
    let objective = gpdm_objective(&yc, d, &lengths, opts);
    let x0 = initial_latents(&yc, d, &opts.fit);
    let dyn0 = initial_dyn_kernel(&x0, &objective.dyn_pairs, opts.linear_weight);
    let p0 = LatentObjective::pack(&x0, &initial_kernel(&yc), Some(&dyn0));
    let (p, report) = objective.maximize(p0, &opts.fit)?;
    let (x, kernel, dyn_kernel) = objective.unpack(&p);
    let base = LatentModel::new(x, yc, mean, kernel)?;
    Ok((GpdmModel::new(base, dyn_kernel.expect("dynamics present"), lengths)?, report))
}

fn initial_dyn_kernel(x: &DMatrix<f64>, pairs: &[(usize, usize)], linear_weight: f64) -> KernelParams {
    let d = x.ncols() as f64;
    let ms: f64 = pairs.iter().map(|&(a, b)| (x.row(b) - x.row(a)).norm_squared()).sum::<f64>()
        / (pairs.len().max(1) as f64 * d);
    let s = ms.max(1e-3);
    KernelParams { signal_variance: s, length_scale: 1.0, noise_variance: 0.01 * s, linear_weight }
}
