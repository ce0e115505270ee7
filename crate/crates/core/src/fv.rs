//! Improved Fisher Vector encoding against a trained mixture.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::stfeat::StmFeatureSet;
use crate::umm::UmmModel;

/// Components whose summed responsibility falls below this contribute zeros.
pub const MIN_MASS: f64 = 1e-12;

pub fn fv_dim(d: usize, k: usize) -> usize {
    2 * d * k
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Unnormalized Fisher Vector of already standardized rows.
///
/// Layout per component `k`: the `d` first-order entries, then the `d`
/// second-order entries.
pub fn fv_raw(rows: &[Vec<f64>], gmm: &UmmModel) -> Result<Vec<f64>> {
    let d = gmm.dim();
    let kk = gmm.k();
    if rows.is_empty() {
        return Err(Error::EmptyStm("no features".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimMismatch {
            expected: d,
            got: r.len(),
        });
    }
    let mut order: Vec<&Vec<f64>> = rows.iter().collect();
    order.sort_by(|a, b| lex_cmp(a, b));

    let norms = gmm.log_norms();
    let mut first = vec![0.0; kk * d];
    let mut second = vec![0.0; kk * d];
    let mut mass = vec![0.0; kk];
    let mut logp = vec![0.0; kk];
    for f in order {
        gmm.log_densities_with(f, &norms, &mut logp);
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logp.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for k in 0..kk {
            let gamma = (logp[k] - lse).exp();
            mass[k] += gamma;
            for j in 0..d {
                let u = (f[j] - gmm.means[(k, j)]) / gmm.sigma(k, j);
                first[k * d + j] += gamma * u;
                second[k * d + j] += gamma * (u * u - 1.0);
            }
        }
    }

    let b = rows.len() as f64;
    let mut out = vec![0.0; fv_dim(d, kk)];
    for k in 0..kk {
        if mass[k] < MIN_MASS {
            continue;
        }
        let w = gmm.weights[k];
        let c1 = 1.0 / (b * w.sqrt());
        let c2 = 1.0 / (b * (2.0 * w).sqrt());
        let block = &mut out[2 * k * d..2 * (k + 1) * d];
        for j in 0..d {
            block[j] = c1 * first[k * d + j];
            block[d + j] = c2 * second[k * d + j];
        }
    }
    Ok(out)
}

/// Signed square root followed by L2 normalization; an all-zero vector stays zero.
pub fn normalize_fv(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        *x = x.signum() * x.abs().sqrt();
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    v
}

/// Encode a clip. With `with_loc` unset only the appearance dims are used and
/// the mixture is marginalized accordingly.
pub fn encode_fv(stm: &StmFeatureSet, gmm: &UmmModel, with_loc: bool) -> Result<Vec<f64>> {
    if stm.is_empty() {
        return Err(Error::EmptyStm(stm.meta.video_id.clone()));
    }
    let marginal;
    let model = if with_loc {
        gmm
    } else {
        marginal = gmm.marginal(stm.appearance_dim());
        &marginal
    };
    let rows: Vec<Vec<f64>> = stm
        .features
        .iter()
        .map(|f| {
            let v = if with_loc { f.to_vec() } else { f.appearance.clone() };
            model.standardizer.applied(&v)
        })
        .collect();
    fv_raw(&rows, model).map(normalize_fv)
}
