use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gp::{GpLikelihood, GpPredictor};
use super::kernel::KernelParams;
use super::pca::pca_fit;
use super::rows::{all_finite, center, column_mean, from_rows, to_rows};
use crate::error::{Error, Result};
use crate::optim::{self, LbfgsOptions};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    /// Standard deviation of the seeded perturbation added to the PCA initialisation.
    pub init_noise: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iters: 500, grad_tol: 1e-5, seed: 0, init_noise: 0.01 }
    }
}

/// MAP objective value after the initial point and every accepted optimizer step.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Additive pieces of the (maximised) MAP objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    /// GP log marginal likelihood of Y given X.
    pub observation: f64,
    /// Unit Gaussian prior on the observation kernel's log-parameters.
    pub hyper_prior: f64,
    /// Unit spherical prior on the prior rows of X.
    pub latent_prior: f64,
    /// Weighted dynamics GP likelihood plus its own hyper-prior.
    pub dynamics: f64,
    /// Negative topological penalty.
    pub topology: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.observation + self.hyper_prior + self.latent_prior + self.dynamics + self.topology
    }
}

/// MAP objective over latent coordinates and kernel log-parameters.
///
/// Parameter layout: `X` row-major (`N·d`), then `[ln σ², ln ℓ, ln β]` of the
/// observation kernel, then the same three for the dynamics kernel when
/// `dyn_pairs` is non-empty.
#[derive(Clone, Debug)]
pub struct LatentObjective<'a> {
    pub y: &'a DMatrix<f64>,
    pub latent_dim: usize,
    pub prior_rows: Vec<usize>,
    pub dyn_pairs: Vec<(usize, usize)>,
    pub dyn_weight: f64,
    /// Fixed linear term of the dynamics kernel.
    pub linear_weight: f64,
    pub topo_pairs: Vec<(usize, usize)>,
    pub topo_weight: f64,
}

fn hyper_prior(logs: &[f64]) -> f64 {
    -0.5 * logs.iter().map(|v| v * v).sum::<f64>()
}

impl<'a> LatentObjective<'a> {
    /// Plain GPLVM: spherical prior on every row, no dynamics.
    pub fn gplvm(y: &'a DMatrix<f64>, latent_dim: usize) -> Self {
        LatentObjective {
            y,
            latent_dim,
            prior_rows: (0..y.nrows()).collect(),
            dyn_pairs: Vec::new(),
            dyn_weight: 0.0,
            linear_weight: 0.0,
            topo_pairs: Vec::new(),
            topo_weight: 0.0,
        }
    }

    pub fn has_dynamics(&self) -> bool {
        !self.dyn_pairs.is_empty()
    }

    pub fn param_len(&self) -> usize {
        self.y.nrows() * self.latent_dim + 3 + if self.has_dynamics() { 3 } else { 0 }
    }

    pub fn pack(x: &DMatrix<f64>, kernel: &KernelParams, dyn_kernel: Option<&KernelParams>) -> Vec<f64> {
        let mut p: Vec<f64> = (0..x.nrows()).flat_map(|i| x.row(i).iter().copied().collect::<Vec<_>>()).collect();
        p.extend(kernel.log_params());
        if let Some(k) = dyn_kernel {
            p.extend(k.log_params());
        }
        p
    }

    pub fn unpack(&self, p: &[f64]) -> (DMatrix<f64>, KernelParams, Option<KernelParams>) {
        let (n, d) = (self.y.nrows(), self.latent_dim);
        let x = DMatrix::from_row_slice(n, d, &p[..n * d]);
        let k = KernelParams::from_log_params(&p[n * d..n * d + 3], 0.0);
        let dk = self
            .has_dynamics()
            .then(|| KernelParams::from_log_params(&p[n * d + 3..n * d + 6], self.linear_weight));
        (x, k, dk)
    }

    fn dyn_blocks(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.latent_dim;
        let m = self.dyn_pairs.len();
        let inputs = DMatrix::from_fn(m, d, |r, c| x[(self.dyn_pairs[r].0, c)]);
        let deltas = DMatrix::from_fn(m, d, |r, c| x[(self.dyn_pairs[r].1, c)] - x[(self.dyn_pairs[r].0, c)]);
        (inputs, deltas)
    }

    fn evaluate(&self, p: &[f64], grad: Option<&mut [f64]>) -> Result<ObjectiveTerms> {
        if p.len() != self.param_len() {
            return Err(Error::invalid("parameter vector has the wrong length"));
        }
        let (n, d) = (self.y.nrows(), self.latent_dim);
        let (x, kernel, dyn_kernel) = self.unpack(p);
        let want = grad.is_some();
        let obs = GpLikelihood::evaluate(&x, self.y, &kernel, want)?;
        let logs = &p[n * d..n * d + 3];
        let mut terms = ObjectiveTerms {
            observation: obs.value,
            hyper_prior: hyper_prior(logs),
            ..Default::default()
        };
        let mut gx = obs.d_inputs.unwrap_or_else(|| DMatrix::zeros(0, 0));
        let mut g_log = [0.0; 6];
        for k in 0..3 {
            g_log[k] = obs.d_log_params[k] - logs[k];
        }

        for &r in &self.prior_rows {
            terms.latent_prior -= 0.5 * x.row(r).norm_squared();
            if want {
                for c in 0..d {
                    gx[(r, c)] -= x[(r, c)];
                }
            }
        }

        if let Some(dk) = dyn_kernel.filter(|_| self.dyn_weight != 0.0) {
            let w = self.dyn_weight;
            let dyn_logs = &p[n * d + 3..n * d + 6];
            let (inputs, deltas) = self.dyn_blocks(&x);
            let lik = GpLikelihood::evaluate(&inputs, &deltas, &dk, want)?;
            terms.dynamics = w * (lik.value + hyper_prior(dyn_logs));
            if want {
                let di = lik.d_inputs.as_ref().unwrap();
                for (m, &(from, to)) in self.dyn_pairs.iter().enumerate() {
                    for c in 0..d {
                        gx[(from, c)] += w * (di[(m, c)] - lik.d_targets[(m, c)]);
                        gx[(to, c)] += w * lik.d_targets[(m, c)];
                    }
                }
                for k in 0..3 {
                    g_log[3 + k] = w * (lik.d_log_params[k] - dyn_logs[k]);
                }
            }
        }

        if self.topo_weight != 0.0 {
            for &(a, b) in &self.topo_pairs {
                for c in 0..d {
                    let diff = x[(a, c)] - x[(b, c)];
                    terms.topology -= self.topo_weight * diff * diff;
                    if want {
                        gx[(a, c)] -= 2.0 * self.topo_weight * diff;
                        gx[(b, c)] += 2.0 * self.topo_weight * diff;
                    }
                }
            }
        }

        if let Some(g) = grad {
            for i in 0..n {
                for c in 0..d {
                    g[i * d + c] = gx[(i, c)];
                }
            }
            let tail = if self.has_dynamics() { 6 } else { 3 };
            g[n * d..n * d + tail].copy_from_slice(&g_log[..tail]);
        }
        Ok(terms)
    }

    pub fn terms(&self, p: &[f64]) -> Result<ObjectiveTerms> {
        self.evaluate(p, None)
    }

    pub fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(self.terms(p)?.total())
    }

    pub fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; p.len()];
        let v = self.evaluate(p, Some(&mut g))?.total();
        Ok((v, g))
    }

    /// Maximises the objective from `p0` with L-BFGS.
    pub fn maximize(&self, p0: Vec<f64>, opts: &FitOptions) -> Result<(Vec<f64>, FitReport)> {
        let lbfgs = LbfgsOptions { max_iters: opts.max_iters, grad_tol: opts.grad_tol, ..Default::default() };
        let min = optim::minimize(
            |p, g| {
                let v = self.evaluate(p, Some(g))?.total();
                g.iter_mut().for_each(|x| *x = -*x);
                Ok(-v)
            },
            p0,
            &lbfgs,
        )?;
        let report = FitReport {
            trace: min.trace.iter().map(|v| -v).collect(),
            iterations: min.iterations,
            converged: min.converged,
        };
        Ok((min.x, report))
    }
}

/// Latent coordinates with the GP that maps them back to data space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "LatentDoc", into = "LatentDoc")]
pub struct LatentModel {
    x: DMatrix<f64>,
    y_centered: DMatrix<f64>,
    data_mean: DVector<f64>,
    kernel: KernelParams,
    predictor: GpPredictor,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct LatentDoc {
    pub d: usize,
    pub mean: Vec<f64>,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "Y_centered")]
    pub y_centered: Vec<Vec<f64>>,
    pub kernel: KernelParams,
}

impl From<LatentModel> for LatentDoc {
    fn from(m: LatentModel) -> Self {
        LatentDoc {
            d: m.latent_dim(),
            mean: m.data_mean.as_slice().to_vec(),
            x: to_rows(&m.x),
            y_centered: to_rows(&m.y_centered),
            kernel: m.kernel,
        }
    }
}

impl TryFrom<LatentDoc> for LatentModel {
    type Error = Error;

    fn try_from(doc: LatentDoc) -> Result<Self> {
        let x = from_rows(&doc.x, doc.d)?;
        let y = from_rows(&doc.y_centered, doc.mean.len())?;
        LatentModel::new(x, y, DVector::from_vec(doc.mean), doc.kernel)
    }
}

impl LatentModel {
    pub fn new(
        x: DMatrix<f64>,
        y_centered: DMatrix<f64>,
        data_mean: DVector<f64>,
        kernel: KernelParams,
    ) -> Result<Self> {
        if x.nrows() < 2 || x.nrows() != y_centered.nrows() {
            return Err(Error::invalid("a latent model needs N >= 2 matching rows of X and Y"));
        }
        if x.ncols() == 0 || x.ncols() >= y_centered.ncols() {
            return Err(Error::invalid("latent dimension must satisfy 1 <= d < D"));
        }
        if data_mean.len() != y_centered.ncols() {
            return Err(Error::invalid("data mean has the wrong dimension"));
        }
        if !all_finite(&x) || !all_finite(&y_centered) || data_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent model entries must be finite"));
        }
        let predictor = GpPredictor::new(&x, &y_centered, &kernel)?;
        Ok(LatentModel { x, y_centered, data_mean, kernel, predictor })
    }

    pub fn latents(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn latent_point(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn y_centered(&self) -> &DMatrix<f64> {
        &self.y_centered
    }

    pub fn data_mean(&self) -> &DVector<f64> {
        &self.data_mean
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn data_dim(&self) -> usize {
        self.y_centered.ncols()
    }

    /// Posterior mean in data space (mean added back).
    pub fn reconstruct(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.predictor.mean(x)? + &self.data_mean)
    }

    pub fn predictor(&self) -> &GpPredictor {
        &self.predictor
    }
}

pub fn latent_to_observation(model: &LatentModel, x: &[f64]) -> Result<(DVector<f64>, f64)> {
    let (m, v) = model.predictor.predict(x)?;
    Ok((m + &model.data_mean, v))
}

pub(crate) fn validate_training(y: &DMatrix<f64>, d: usize) -> Result<()> {
    if y.nrows() < 2 {
        return Err(Error::invalid("need at least 2 training frames"));
    }
    if d == 0 || d >= y.ncols() {
        return Err(Error::invalid(format!("latent dimension {d} must satisfy 1 <= d < D = {}", y.ncols())));
    }
    if !all_finite(y) {
        return Err(Error::invalid("training data must be finite"));
    }
    Ok(())
}

/// Scaled PCA coordinates plus a seeded perturbation.
pub(crate) fn initial_latents(y_centered: &DMatrix<f64>, d: usize, opts: &FitOptions) -> DMatrix<f64> {
    let n = y_centered.nrows();
    let usable = d.min(n - 1).min(y_centered.ncols());
    let mut x = DMatrix::zeros(n, d);
    if let Ok(pca) = pca_fit(y_centered, usable) {
        let scale = pca.eigenvalues[0].sqrt();
        if scale > 1e-9 {
            let proj = y_centered * pca.components.transpose() / scale;
            x.columns_mut(0, usable).copy_from(&proj);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for v in x.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += opts.init_noise * z;
    }
    x
}

pub(crate) fn initial_kernel(y_centered: &DMatrix<f64>) -> KernelParams {
    let n = y_centered.nrows() as f64;
    let var = y_centered.iter().map(|v| v * v).sum::<f64>() / (n * y_centered.ncols() as f64);
    let s = var.max(1e-3);
    KernelParams::new(s, 1.0, 0.01 * s).expect("positive defaults")
}

pub fn gplvm_fit(y: &DMatrix<f64>, d: usize, opts: &FitOptions) -> Result<LatentModel> {
    Ok(gplvm_fit_traced(y, d, opts)?.0)
}

pub fn gplvm_fit_traced(y: &DMatrix<f64>, d: usize, opts: &FitOptions) -> Result<(LatentModel, FitReport)> {
    validate_training(y, d)?;
    let mean = column_mean(y);
    let yc = center(y, &mean);
    let objective = LatentObjective::gplvm(&yc, d);
    let p0 = LatentObjective::pack(&initial_latents(&yc, d, opts), &initial_kernel(&yc), None);
    let (p, report) = objective.maximize(p0, opts)?;
    let (x, kernel, _) = objective.unpack(&p);
    Ok((LatentModel::new(x, yc, mean, kernel)?, report))
}

/// Latent point whose reconstruction best matches `target` (least squares),
/// started from `init`.
pub fn project_to_latent(model: &LatentModel, target: &[f64], init: &[f64]) -> Result<Vec<f64>> {
    if target.len() != model.data_dim() {
        return Err(Error::invalid("target has the wrong dimension"));
    }
    let goal = DVector::from_column_slice(target);
    let opts = LbfgsOptions { max_iters: 200, grad_tol: 1e-10, ..Default::default() };
    let min = optim::minimize(
        |x, g| {
            let r = model.reconstruct(x)? - &goal;
            let jac = model.predictor.mean_jacobian(x)?;
            let grad = jac.tr_mul(&r);
            g.copy_from_slice(grad.as_slice());
            Ok(0.5 * r.norm_squared())
        },
        init.to_vec(),
        &opts,
    )?;
    Ok(min.x)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::optim::{finite_difference, relative_error};

    pub(crate) fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    fn sinusoid(n: usize, dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, dim, |t, j| {
            let ph = std::f64::consts::TAU * t as f64 / n as f64;
            (ph + j as f64 * 0.7).sin() * (1.0 + 0.2 * j as f64) + 0.1 * (2.0 * ph).cos()
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y = random_matrix(8, 5, 3);
        let yc = center(&y, &column_mean(&y));
        let obj = LatentObjective::gplvm(&yc, 2);
        for seed in [1, 2, 3] {
            let x = random_matrix(8, 2, 100 + seed) * 0.7;
            let k = KernelParams::new(0.5 + 0.2 * seed as f64, 0.9, 0.1).unwrap();
            let p = LatentObjective::pack(&x, &k, None);
            let (_, g) = obj.value_and_gradient(&p).unwrap();
            let fd = finite_difference(|q| obj.value(q).unwrap(), &p, 1e-5);
            assert!(relative_error(&fd, &g) < 1e-4, "seed {seed}: {}", relative_error(&fd, &g));
        }
    }

    #[test]
    fn objective_trace_is_monotone() {
        let y = sinusoid(20, 6);
        let (_, report) = gplvm_fit_traced(&y, 2, &FitOptions::default()).unwrap();
        assert!(report.trace.len() > 1);
        assert!(report.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn reconstructs_training_frames() {
        let y = sinusoid(20, 6);
        let m = gplvm_fit(&y, 2, &FitOptions::default()).unwrap();
        let std = {
            let yc = center(&y, &column_mean(&y));
            (yc.norm_squared() / (yc.len() as f64)).sqrt()
        };
        let mut se = 0.0;
        for i in 0..20 {
            let r = m.reconstruct(&m.latent_point(i)).unwrap();
            se += (0..6).map(|j| (r[j] - y[(i, j)]).powi(2)).sum::<f64>();
        }
        let rmse = (se / 120.0).sqrt();
        assert!(rmse < 0.1 * std, "rmse {rmse} std {std}");
    }

    #[test]
    fn latent_to_observation_behaviour() {
        let x = DMatrix::from_row_slice(4, 1, &[-1.0, -0.3, 0.4, 1.2]);
        let y = DMatrix::from_row_slice(4, 2, &[0.5, -0.2, -0.1, 0.3, 0.2, 0.1, -0.6, -0.2]);
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let k = KernelParams::new(0.7, 0.5, 1e-8).unwrap();
        let m = LatentModel::new(x, y.clone(), mean.clone(), k).unwrap();
        let (r, v) = latent_to_observation(&m, &[-0.3]).unwrap();
        assert!((r[0] - (1.0 - 0.1)).abs() < 1e-4 && (r[1] - (-2.0 + 0.3)).abs() < 1e-4);
        assert!(v > 0.0);
        let (far, _) = latent_to_observation(&m, &[50.0]).unwrap();
        assert!((far - mean).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_latent_dimension() {
        let y = random_matrix(5, 3, 1);
        assert!(gplvm_fit(&y, 3, &FitOptions::default()).is_err());
        assert!(gplvm_fit(&y, 0, &FitOptions::default()).is_err());
        assert!(gplvm_fit(&random_matrix(1, 3, 1), 1, &FitOptions::default()).is_err());
    }

    #[test]
    fn projection_recovers_training_latent() {
        let y = sinusoid(20, 6);
        let m = gplvm_fit(&y, 2, &FitOptions::default()).unwrap();
        let target = m.reconstruct(&m.latent_point(5)).unwrap();
        let mut init = m.latent_point(5);
        init[0] += 0.05;
        let x = project_to_latent(&m, target.as_slice(), &init).unwrap();
        let r = m.reconstruct(&x).unwrap();
        assert!((r - target).norm() < 1e-6);
    }
}
