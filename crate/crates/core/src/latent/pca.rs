use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::rows::{center, column_mean, from_rows, to_rows};
use crate::error::{Error, Result};

/// Linear eigenspace manifold: top-`d` principal axes of the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PcaDoc", into = "PcaDoc")]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// d × D, orthonormal rows.
    pub components: DMatrix<f64>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PcaDoc {
    d: usize,
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
}

impl From<PcaModel> for PcaDoc {
    fn from(m: PcaModel) -> Self {
        PcaDoc {
            d: m.latent_dim(),
            mean: m.mean.as_slice().to_vec(),
            components: to_rows(&m.components),
            eigenvalues: m.eigenvalues,
        }
    }
}

impl TryFrom<PcaDoc> for PcaModel {
    type Error = Error;

    fn try_from(doc: PcaDoc) -> Result<Self> {
        let components = from_rows(&doc.components, doc.mean.len())?;
        if components.nrows() != doc.d || doc.eigenvalues.len() != doc.d {
            return Err(Error::invalid("pca document dimensions disagree with `d`"));
        }
        Ok(PcaModel { mean: DVector::from_vec(doc.mean), components, eigenvalues: doc.eigenvalues })
    }
}

impl PcaModel {
    pub fn latent_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn data_dim(&self) -> usize {
        self.mean.len()
    }

    /// Sum of squared residuals after projecting and reconstructing every row.
    pub fn reconstruction_error(&self, y: &DMatrix<f64>) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..y.nrows() {
            let row: Vec<f64> = y.row(i).iter().copied().collect();
            let back = pca_reconstruct(self, pca_project(self, &row)?.as_slice())?;
            total += back.iter().zip(&row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(total)
    }
}

/// Principal axes of the sample covariance (normalised by `N − 1`).
pub fn pca_fit(y: &DMatrix<f64>, d: usize) -> Result<PcaModel> {
    let (n, dim) = y.shape();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least 2 samples"));
    }
    if d == 0 || d > (n - 1).min(dim) {
        return Err(Error::invalid(format!(
            "latent dimension {d} outside 1..={}",
            (n - 1).min(dim)
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("PCA input must be finite"));
    }
    let mean = column_mean(y);
    let yc = center(y, &mean);
    let cov = yc.transpose() * &yc / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let components = DMatrix::from_fn(d, dim, |r, c| eig.eigenvectors[(c, order[r])]);
    let eigenvalues = order[..d].iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    Ok(PcaModel { mean, components, eigenvalues })
}

pub fn pca_project(model: &PcaModel, y: &[f64]) -> Result<DVector<f64>> {
    if y.len() != model.data_dim() {
        return Err(Error::invalid(format!(
            "expected a {}-vector, got {}",
            model.data_dim(),
            y.len()
        )));
    }
    Ok(&model.components * (DVector::from_column_slice(y) - &model.mean))
}

pub fn pca_reconstruct(model: &PcaModel, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != model.latent_dim() {
        return Err(Error::invalid(format!(
            "expected a {}-vector, got {}",
            model.latent_dim(),
            x.len()
        )));
    }
    Ok(model.components.tr_mul(&DVector::from_column_slice(x)) + &model.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Cyclic Jacobi eigenvalue iteration; independent of nalgebra's solver.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn collinear_points() {
        let y = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        let m = pca_fit(&y, 1).unwrap();
        let c = m.components.row(0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[0].abs() - h).abs() < 1e-12 && (c[1].abs() - h).abs() < 1e-12);
        assert!(c[0] * c[1] > 0.0);
        assert!(m.reconstruction_error(&y).unwrap() < 1e-20);
        // Second eigenvalue of collinear data is zero.
        let full = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let m2 = pca_fit(&full, 2).unwrap();
        assert!(m2.eigenvalues[1].abs() < 1e-12);
    }

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn eigenvalues_match_jacobi_oracle() {
        let y = random(6, 4, 17);
        let m = pca_fit(&y, 2).unwrap();
        let mean = column_mean(&y);
        let cov: Vec<Vec<f64>> = (0..4)
            .map(|a| {
                (0..4)
                    .map(|b| (0..6).map(|i| (y[(i, a)] - mean[a]) * (y[(i, b)] - mean[b])).sum::<f64>() / 5.0)
                    .collect()
            })
            .collect();
        let ev = jacobi_eigenvalues(cov);
        assert!((m.eigenvalues[0] - ev[0]).abs() < 1e-10);
        assert!((m.eigenvalues[1] - ev[1]).abs() < 1e-10);
    }

    #[test]
    fn full_rank_round_trip_and_orthonormality() {
        let base = random(3, 5, 4);
        // Rank-2 data: mix of 2 directions plus an offset.
        let coeff = random(10, 2, 5);
        let y = DMatrix::from_fn(10, 5, |i, j| coeff[(i, 0)] * base[(0, j)] + coeff[(i, 1)] * base[(1, j)] + base[(2, j)]);
        let m = pca_fit(&y, 2).unwrap();
        let cct = &m.components * m.components.transpose();
        assert!((cct - DMatrix::identity(2, 2)).amax() < 1e-10);
        assert!(m.eigenvalues[0] >= m.eigenvalues[1]);
        for i in 0..10 {
            let row: Vec<f64> = y.row(i).iter().copied().collect();
            let back = pca_reconstruct(&m, pca_project(&m, &row).unwrap().as_slice()).unwrap();
            for j in 0..5 {
                assert!((back[j] - row[j]).abs() < 1e-9);
            }
        }
        assert!(pca_project(&m, m.mean.as_slice()).unwrap().norm() < 1e-12);
        assert_eq!(pca_reconstruct(&m, &[0.0, 0.0]).unwrap(), m.mean);
    }

    #[test]
    fn reconstruction_error_nonincreasing_in_d() {
        let y = random(12, 6, 9);
        let errs: Vec<f64> = (1..=6).map(|d| pca_fit(&y, d).unwrap().reconstruction_error(&y).unwrap()).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let y = random(4, 3, 1);
        assert!(pca_fit(&y, 0).is_err());
        assert!(pca_fit(&y, 4).is_err());
        let m = pca_fit(&y, 2).unwrap();
        assert!(pca_project(&m, &[1.0]).is_err());
        assert!(pca_reconstruct(&m, &[1.0]).is_err());
    }
}
