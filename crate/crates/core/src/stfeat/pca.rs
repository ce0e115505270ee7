//! Principal component analysis on row-sample matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;

/// Eigenvalues at or below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaTarget {
    /// Keep exactly this many components (clamped to the input dimension).
    Dim(usize),
    /// Keep the fewest components whose eigenvalues reach this energy fraction.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// Orthonormal basis, one component per column (`input_dim × k`).
    pub basis: DMatrix<f64>,
    /// Full descending spectrum of the sample covariance (length `input_dim`).
    pub eigenvalues: Vec<f64>,
    pub retained_energy: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// An identity transform of dimension `d` (zero mean, unit basis).
    pub fn identity(d: usize) -> Self {
        PcaModel {
            mean: DVector::zeros(d),
            basis: DMatrix::identity(d, d),
            eigenvalues: vec![1.0; d],
            retained_energy: 1.0,
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let centered = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(self.basis.tr_mul(&centered))
    }

    /// Project every row of `samples`.
    pub fn project_rows(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if samples.ncols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: samples.ncols(),
            });
        }
        let mut centered = samples.clone();
        for mut row in centered.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(self.mean.iter()) {
                *v -= m;
            }
        }
        Ok(centered * &self.basis)
    }

    pub fn reconstruct(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.basis * z + &self.mean
    }

    /// Keep only the leading `k` components.
    pub fn truncated(&self, k: usize) -> PcaModel {
        let k = k.min(self.output_dim());
        let total: f64 = self.eigenvalues.iter().sum();
        let kept: f64 = self.eigenvalues[..k].iter().sum();
        PcaModel {
            mean: self.mean.clone(),
            basis: self.basis.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues.clone(),
            retained_energy: if total > 0.0 { kept / total } else { 1.0 },
        }
    }
}

/// Fit PCA to the rows of `samples` (one sample per row).
pub fn fit_pca(samples: &DMatrix<f64>, target: PcaTarget) -> Result<PcaModel> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let d = samples.ncols();
    let mean = DVector::from_iterator(d, samples.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mean.iter()) {
            *v -= m;
        }
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    from_covariance(mean, cov, target)
}

/// Fit PCA from accumulated moments: sample count, `Σx`, and `Σxxᵀ`.
pub fn fit_pca_from_moments(
    n: usize,
    sum: &DVector<f64>,
    sum_outer: &DMatrix<f64>,
    target: PcaTarget,
) -> Result<PcaModel> {
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = sum / nf;
    let cov = (sum_outer - &mean * mean.transpose() * nf) / (nf - 1.0);
    from_covariance(mean, cov, target)
}

fn from_covariance(mean: DVector<f64>, cov: DMatrix<f64>, target: PcaTarget) -> Result<PcaModel> {
    let d = mean.len();
    let (mut values, vectors) = sym_eigen_desc(&cov);
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::DegenerateData("sample covariance has rank 0".into()));
    }
    for v in values.iter_mut() {
        if *v <= RANK_TOL * top {
            *v = 0.0;
        }
    }
    let total: f64 = values.iter().sum();
    let k = match target {
        PcaTarget::Dim(k) => k.clamp(1, d),
        PcaTarget::Energy(e) => {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Config(format!("PCA energy fraction {e} outside (0, 1]")));
            }
            let mut cum = 0.0;
            let mut k = d;
            for (i, v) in values.iter().enumerate() {
                cum += v;
                if cum >= e * total {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    let kept: f64 = values[..k].iter().sum();
    Ok(PcaModel {
        mean,
        basis: vectors.columns(0, k).into_owned(),
        eigenvalues: values,
        retained_energy: kept / total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn line_data_has_one_component() {
        let samples = DMatrix::from_fn(20, 3, |i, j| (i as f64 - 7.0) * [1.0, -2.0, 0.5][j] + 3.0);
        let pca = fit_pca(&samples, PcaTarget::Energy(0.99)).unwrap();
        assert_eq!(pca.output_dim(), 1);
    }

    #[test]
    fn isotropic_square_keeps_all_energy() {
        let samples = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let pca = fit_pca(&samples, PcaTarget::Dim(2)).unwrap();
        assert!((pca.retained_energy - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_loss_equals_dropped_eigenvalues() {
        let samples = random_matrix(50, 10, 3);
        let n = samples.nrows() as f64;
        // oracle: spectrum of the unbiased covariance, computed independently
        let mean = samples.row_mean();
        let mut centered = samples.clone();
        for mut r in centered.row_iter_mut() {
            r -= &mean;
        }
        let cov = centered.transpose() * &centered / (n - 1.0);
        let mut spectrum: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
        spectrum.sort_by(|a, b| b.total_cmp(a));

        for k in [4usize, 10] {
            let pca = fit_pca(&samples, PcaTarget::Dim(k)).unwrap();
            let gram = pca.basis.tr_mul(&pca.basis);
            assert!((gram - DMatrix::<f64>::identity(k, k)).abs().max() < 1e-8);
            let z = pca.project_rows(&samples).unwrap();
            let mut err = 0.0;
            for (i, row) in z.row_iter().enumerate() {
                let rec = pca.reconstruct(&row.transpose());
                err += (rec - samples.row(i).transpose()).norm_squared();
            }
            let dropped: f64 = spectrum[k..].iter().sum::<f64>() * (n - 1.0);
            if k == 10 {
                assert!(err <= 1e-10, "full reconstruction error {err}");
            } else {
                assert!((err - dropped).abs() <= 1e-8 * dropped, "{err} vs {dropped}");
            }
        }
    }

    #[test]
    fn moments_route_matches_direct() {
        let samples = random_matrix(40, 6, 9);
        let direct = fit_pca(&samples, PcaTarget::Dim(3)).unwrap();
        let sum = DVector::from_iterator(6, samples.column_iter().map(|c| c.sum()));
        let outer = samples.tr_mul(&samples);
        let moments = fit_pca_from_moments(40, &sum, &outer, PcaTarget::Dim(3)).unwrap();
        assert!((direct.basis - moments.basis).abs().max() < 1e-9);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let samples = DMatrix::from_element(5, 3, 2.0);
        assert!(matches!(
            fit_pca(&samples, PcaTarget::Energy(0.9)),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn single_sample_rejected() {
        let samples = DMatrix::from_element(1, 3, 2.0);
        assert!(matches!(fit_pca(&samples, PcaTarget::Dim(1)), Err(Error::TooFewSamples { .. })));
    }
}
