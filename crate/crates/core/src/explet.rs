//! Expressionlets: regularized covariance matrices of local modes, mapped to
//! a vector space through the SPD matrix logarithm.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, symmetrize};
use crate::stfeat::{fit_pca, PcaModel, PcaTarget, StmFeatureSet, VideoMeta};
use crate::umm::{AlignedStm, LocalMode};

/// Relative ridge added to every covariance.
pub const COV_EPS: f64 = 1e-5;
/// Absolute lower bound on the ridge, so near-constant modes stay SPD.
pub const MIN_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecMode {
    /// Row-major flatten of all `d²` entries.
    Full,
    /// Upper triangle with off-diagonals scaled by √2 (`d(d+1)/2` entries);
    /// preserves inner products of the full flatten.
    Tri,
}

impl std::str::FromStr for VecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(VecMode::Full),
            "tri" => Ok(VecMode::Tri),
            other => Err(Error::Config(format!("unknown vectorization `{other}` (full|tri)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    pub use_loc: bool,
    pub vec_mode: VecMode,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            use_loc: false,
            vec_mode: VecMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expressionlet {
    pub mode_index: usize,
    pub cov: DMatrix<f64>,
    pub log_vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpletSet {
    pub meta: VideoMeta,
    pub explets: Vec<Expressionlet>,
    /// Modes that had fewer than two members and fell back to `ε·I`.
    pub undersized: usize,
}

/// Regularized unbiased covariance of the member features of `mode`.
///
/// Returns the matrix and whether the mode was undersized (< 2 members).
pub fn mode_covariance(stm: &StmFeatureSet, mode: &LocalMode, use_loc: bool) -> (DMatrix<f64>, bool) {
    let d = if use_loc {
        stm.appearance_dim() + crate::stfeat::LOC_DIMS
    } else {
        stm.appearance_dim()
    };
    let members: Vec<Vec<f64>> = mode
        .features(stm)
        .map(|f| if use_loc { f.to_vec() } else { f.appearance.clone() })
        .collect();
    if members.len() < 2 {
        return (DMatrix::identity(d, d) * COV_EPS, true);
    }
    (covariance_of(members), false)
}

/// Unbiased covariance of `rows` followed by the ridge. Rows are summed in
/// lexicographic order, so the result does not depend on their order.
pub fn covariance_of(mut rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in &rows {
        centered.iter_mut().zip(r.iter().zip(&mean)).for_each(|(c, (v, m))| *c = v - m);
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    regularize(cov)
}

/// `C + max(ε·tr(C)/d, MIN_RIDGE)·I`, or `ε·I` when the trace is zero.
pub fn regularize(mut cov: DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let tr = cov.trace();
    if tr == 0.0 {
        return DMatrix::identity(d, d) * COV_EPS;
    }
    let ridge = (COV_EPS * tr / d as f64).max(MIN_RIDGE);
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    cov
}

/// Matrix logarithm of an SPD matrix, `U log(Σ) Uᵀ`.
pub fn spd_log(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, u) = sym_eigen_desc(c);
    let min = values.last().copied().unwrap_or(0.0);
    if !(min > 0.0) {
        return Err(Error::NotSpd(min));
    }
    let mut scaled = u.clone();
    for (mut col, v) in scaled.column_iter_mut().zip(&values) {
        col *= v.ln();
    }
    Ok(symmetrize(&(scaled * u.transpose())))
}

pub fn vectorize(log_c: &DMatrix<f64>, mode: VecMode) -> Vec<f64> {
    let d = log_c.nrows();
    match mode {
        VecMode::Full => {
            let mut out = Vec::with_capacity(d * d);
            for i in 0..d {
                for j in 0..d {
                    out.push(log_c[(i, j)]);
                }
            }
            out
        }
        VecMode::Tri => {
            let mut out = Vec::with_capacity(d * (d + 1) / 2);
            for i in 0..d {
                out.push(log_c[(i, i)]);
                for j in (i + 1)..d {
                    out.push(log_c[(i, j)] * std::f64::consts::SQRT_2);
                }
            }
            out
        }
    }
}

/// Build all K expressionlets of an aligned clip.
pub fn encode_stm(stm: &StmFeatureSet, aligned: &AlignedStm, opts: EncodeOptions) -> Result<ExpletSet> {
    let built = aligned
        .modes
        .par_iter()
        .map(|mode| {
            let (cov, undersized) = mode_covariance(stm, mode, opts.use_loc);
            let log_c = spd_log(&cov)?;
            Ok((
                Expressionlet {
                    mode_index: mode.k,
                    log_vec: vectorize(&log_c, opts.vec_mode),
                    cov,
                },
                undersized,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let undersized = built.iter().filter(|b| b.1).count();
    Ok(ExpletSet {
        meta: aligned.meta.clone(),
        explets: built.into_iter().map(|b| b.0).collect(),
        undersized,
    })
}

/// One shared PCA over the log-vectors of every mode of every training clip.
pub fn reduce_explets(train: &[&ExpletSet], energy: f64) -> Result<PcaModel> {
    let rows: Vec<&Vec<f64>> = train
        .iter()
        .flat_map(|s| s.explets.iter().map(|e| &e.log_vec))
        .collect();
    if rows.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: rows.len(),
        });
    }
    let d = rows[0].len();
    let samples = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    fit_pca(&samples, PcaTarget::Energy(energy))
}

/// PCA-reduced log-vectors of one clip, `K × reduced_dim`.
pub fn reduced_vectors(set: &ExpletSet, pca: &PcaModel) -> Result<DMatrix<f64>> {
    let k = set.explets.len();
    let mut out = DMatrix::zeros(k, pca.output_dim());
    for (i, e) in set.explets.iter().enumerate() {
        let z = pca.project(&e.log_vec)?;
        out.set_row(i, &z.transpose());
    }
    Ok(out)
}

impl std::fmt::Display for VecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VecMode::Full => "full",
            VecMode::Tri => "tri",
        })
    }
}
