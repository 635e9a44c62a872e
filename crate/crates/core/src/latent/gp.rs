use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::KernelParams;
use super::rows::{sqdist_point, sqdist_rows};
use crate::error::{Error, Result};

/// Diagonal jitter tried in turn when a Gram matrix fails to factor.
const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `K(X, X) + β·I` including the linear term when present.
pub(crate) fn gram(inputs: &DMatrix<f64>, kernel: &KernelParams) -> DMatrix<f64> {
    let n = inputs.nrows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut v = kernel.rbf_from_sqdist(sqdist_rows(inputs, i, inputs, j));
            if kernel.linear_weight > 0.0 {
                v += kernel.linear_weight * inputs.row(i).dot(&inputs.row(j));
            }
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += kernel.noise_variance;
    }
    k
}

pub(crate) fn factorize(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::Conditioning("Gram matrix has non-finite entries".into()));
    }
    for &jitter in &JITTER_LADDER {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c, jitter));
        }
    }
    Err(Error::Conditioning(format!(
        "Cholesky failed after jitter up to {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Zero-mean GP regression posterior over a fixed training set.
#[derive(Clone, Debug)]
pub struct GpPredictor {
    inputs: DMatrix<f64>,
    /// `(K + β I)⁻¹ Y`
    alpha: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    kernel: KernelParams,
    jitter: f64,
}

impl GpPredictor {
    pub fn new(inputs: &DMatrix<f64>, targets: &DMatrix<f64>, kernel: &KernelParams) -> Result<Self> {
        kernel.validate()?;
        if inputs.nrows() == 0 || inputs.nrows() != targets.nrows() {
            return Err(Error::invalid(format!(
                "inputs have {} rows, targets {}",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if !inputs.iter().chain(targets.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("training data must be finite"));
        }
        let (chol, jitter) = factorize(&gram(inputs, kernel))?;
        let alpha = chol.solve(targets);
        Ok(GpPredictor { inputs: inputs.clone(), alpha, chol, kernel: *kernel, jitter })
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub(crate) fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    /// Diagonal jitter that was needed to factor the Gram matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "query has dimension {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query must be finite"));
        }
        Ok(())
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.inputs.nrows(), |i, _| {
            let mut v = self.kernel.rbf_from_sqdist(sqdist_point(&self.inputs, i, x));
            if self.kernel.linear_weight > 0.0 {
                v += self.kernel.linear_weight
                    * x.iter().enumerate().map(|(k, xk)| xk * self.inputs[(i, k)]).sum::<f64>();
            }
            v
        })
    }

    pub fn mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(self.alpha.tr_mul(&self.cross(x)))
    }

    /// Posterior mean and the shared (isotropic) predictive variance, noise included.
    pub fn predict(&self, x: &[f64]) -> Result<(DVector<f64>, f64)> {
        self.check(x)?;
        let k = self.cross(x);
        let mean = self.alpha.tr_mul(&k);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).expect("L is invertible");
        let prior = self.kernel.eval(x, x) + self.kernel.noise_variance;
        let var = (prior - v.norm_squared()).max(f64::MIN_POSITIVE);
        Ok((mean, var))
    }

    /// Jacobian of the mean, `q × p`, at `x`.
    pub fn mean_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let (p, q) = (self.input_dim(), self.output_dim());
        let l2 = self.kernel.length_scale.powi(2);
        let mut jac = DMatrix::zeros(q, p);
        for i in 0..self.inputs.nrows() {
            let k = self.kernel.rbf_from_sqdist(sqdist_point(&self.inputs, i, x));
            for c in 0..p {
                let dk = k * (self.inputs[(i, c)] - x[c]) / l2
                    + self.kernel.linear_weight * self.inputs[(i, c)];
                for r in 0..q {
                    jac[(r, c)] += self.alpha[(i, r)] * dk;
                }
            }
        }
        Ok(jac)
    }
}

/// GP predictive mean (zero prior mean) and variance at `query`.
pub fn gp_posterior(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    kernel: &KernelParams,
    query: &[f64],
) -> Result<(DVector<f64>, f64)> {
    GpPredictor::new(inputs, targets, kernel)?.predict(query)
}

/// Log marginal likelihood of `targets` (columns independent, shared kernel)
/// and its gradients.
#[derive(Clone, Debug)]
pub struct GpLikelihood {
    pub value: f64,
    /// ∂/∂inputs, present when requested.
    pub d_inputs: Option<DMatrix<f64>>,
    pub d_targets: DMatrix<f64>,
    /// ∂/∂[ln σ², ln ℓ, ln β]
    pub d_log_params: [f64; 3],
}

impl GpLikelihood {
    pub fn evaluate(
        inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        kernel: &KernelParams,
        input_grad: bool,
    ) -> Result<Self> {
        let n = inputs.nrows();
        let q = targets.ncols() as f64;
        let (chol, _) = factorize(&gram(inputs, kernel))?;
        let kinv = chol.inverse();
        let a = &kinv * targets;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let fit: f64 = targets.iter().zip(a.iter()).map(|(y, a)| y * a).sum();
        let value = -0.5 * q * logdet - 0.5 * fit - 0.5 * n as f64 * q * LN_2PI;

        // G = ∂L/∂K = ½ (A Aᵀ − q K⁻¹)
        let g = (&a * a.transpose() - &kinv * q) * 0.5;
        let l2 = kernel.length_scale.powi(2);
        let mut d_sig = 0.0;
        let mut d_len = 0.0;
        let p = inputs.ncols();
        let mut d_inputs = input_grad.then(|| DMatrix::zeros(n, p));
        for i in 0..n {
            for j in 0..n {
                let r2 = sqdist_rows(inputs, i, inputs, j);
                let krbf = kernel.rbf_from_sqdist(r2);
                let gij = g[(i, j)];
                d_sig += gij * krbf;
                d_len += gij * krbf * r2 / l2;
                if let Some(di) = d_inputs.as_mut() {
                    for c in 0..p {
                        let dk = -krbf * (inputs[(i, c)] - inputs[(j, c)]) / l2
                            + kernel.linear_weight * inputs[(j, c)];
                        di[(i, c)] += 2.0 * gij * dk;
                    }
                }
            }
        }
        let d_noise = kernel.noise_variance * g.trace();
        Ok(GpLikelihood {
            value,
            d_inputs,
            d_targets: -a,
            d_log_params: [d_sig, d_len, d_noise],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Gauss-Jordan inverse, independent of the Cholesky path.
    fn inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = m.len();
        let mut a: Vec<Vec<f64>> = m
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            let d = a[c][c];
            a[c].iter_mut().for_each(|v| *v /= d);
            for r in 0..n {
                if r != c {
                    let f = a[r][c];
                    for k in 0..2 * n {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        a.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn oracle(xs: &[f64], ys: &[f64], s2: f64, l: f64, b: f64, q: f64) -> (f64, f64) {
        let k = |a: f64, c: f64| s2 * (-(a - c) * (a - c) / (2.0 * l * l)).exp();
        let n = xs.len();
        let km: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| k(xs[i], xs[j]) + if i == j { b } else { 0.0 }).collect())
            .collect();
        let inv = inverse(&km);
        let ks: Vec<f64> = xs.iter().map(|&x| k(q, x)).collect();
        let mut mean = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                mean += ks[i] * inv[i][j] * ys[j];
                quad += ks[i] * inv[i][j] * ks[j];
            }
        }
        (mean, s2 + b - quad)
    }

    #[test]
    fn interpolates_single_datum() {
        let k = KernelParams::new(1.0, 1.0, 1e-6).unwrap();
        let x = DMatrix::from_element(1, 1, 0.0);
        let y = DMatrix::from_element(1, 1, 5.0);
        let (m, v) = gp_posterior(&x, &y, &k, &[0.0]).unwrap();
        assert!((m[0] - 5.0).abs() < 1e-4);
        assert!(v > 0.0);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let k = KernelParams::new(2.0, 0.5, 0.1).unwrap();
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 3.0]);
        let (m, v) = gp_posterior(&x, &y, &k, &[100.0]).unwrap();
        assert!(m[0].abs() < 1e-12);
        assert!((v - 2.1).abs() < 1e-12);
    }

    #[test]
    fn matches_explicit_inverse_oracle() {
        let xs = [-0.7, 0.2, 1.3];
        let ys = [0.4, -1.1, 0.9];
        let k = KernelParams::new(1.5, 0.8, 0.05).unwrap();
        let x = DMatrix::from_column_slice(3, 1, &xs);
        let y = DMatrix::from_column_slice(3, 1, &ys);
        for q in [-1.0, 0.0, 0.5, 2.0] {
            let (m, v) = gp_posterior(&x, &y, &k, &[q]).unwrap();
            let (om, ov) = oracle(&xs, &ys, 1.5, 0.8, 0.05, q);
            assert!((m[0] - om).abs() < 1e-10);
            assert!((v - ov).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_shrinks_when_point_added() {
        let k = KernelParams::new(1.0, 0.6, 0.01).unwrap();
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let y = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let (_, before) = gp_posterior(&x, &y, &k, &[0.5]).unwrap();
        let x2 = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.5]);
        let y2 = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.5]);
        let (_, after) = gp_posterior(&x2, &y2, &k, &[0.5]).unwrap();
        assert!(after > 0.0 && after <= before);
    }

    #[test]
    fn rejects_bad_queries() {
        let k = KernelParams::new(1.0, 1.0, 0.1).unwrap();
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let y = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let gp = GpPredictor::new(&x, &y, &k).unwrap();
        assert!(gp.mean(&[0.0, 1.0]).is_err());
        assert!(gp.mean(&[f64::NAN]).is_err());
    }

    #[test]
    fn jitter_rescues_duplicate_inputs() {
        // Tiny noise with duplicated inputs is numerically singular without jitter.
        let k = KernelParams::new(1.0, 1.0, 1e-300).unwrap();
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 0.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let gp = GpPredictor::new(&x, &y, &k).unwrap();
        assert!(gp.jitter() > 0.0);
    }

    #[test]
    fn likelihood_gradients_match_finite_differences() {
        let x = DMatrix::from_row_slice(4, 2, &[0.1, 0.3, -0.5, 0.8, 0.9, -0.2, 0.0, 0.0]);
        let y = DMatrix::from_row_slice(4, 3, &[1.0, 0.2, -0.3, 0.4, 0.1, 0.5, -0.6, 0.9, 0.2, 0.3, -0.1, 0.0]);
        let base = KernelParams::new(0.8, 0.7, 0.05).unwrap().with_linear_weight(0.3).unwrap();
        let lik = GpLikelihood::evaluate(&x, &y, &base, true).unwrap();
        let lp = base.log_params();
        let fd = crate::optim::finite_difference(
            |p| {
                let k = KernelParams::from_log_params(p, 0.3);
                GpLikelihood::evaluate(&x, &y, &k, false).unwrap().value
            },
            &lp,
            1e-5,
        );
        assert!(crate::optim::relative_error(&fd, &lik.d_log_params) < 1e-6);
        let flat: Vec<f64> = x.iter().copied().collect();
        let fd = crate::optim::finite_difference(
            |v| {
                let xm = DMatrix::from_column_slice(4, 2, v);
                GpLikelihood::evaluate(&xm, &y, &base, false).unwrap().value
            },
            &flat,
            1e-5,
        );
        let an: Vec<f64> = lik.d_inputs.unwrap().iter().copied().collect();
        assert!(crate::optim::relative_error(&fd, &an) < 1e-6);
    }
}
