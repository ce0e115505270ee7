//! Expectation-maximization for axis-aligned Gaussian mixtures.
//!
//! The E-step runs in fixed-size row chunks (in parallel) and the per-chunk
//! sufficient statistics are reduced in chunk order, so results do not depend
//! on the thread count. Rows are sorted lexicographically before seeding,
//! which makes the fit independent of the input order.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{CovKind, Standardizer, UmmModel};
use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::stfeat::StmFeatureSet;

const CHUNK_ROWS: usize = 1024;
const COLLAPSE_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub k: usize,
    pub cov: CovKind,
    pub max_iters: usize,
    /// Stop once the relative log-likelihood gain falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub sigma_floor: f64,
    /// k-means++ seeding runs on at most this many rows.
    pub init_sample: usize,
    /// EM itself runs on at most this many rows (seeded subsample);
    /// `None` uses every row.
    pub max_rows: Option<usize>,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            k: 64,
            cov: CovKind::Isotropic,
            max_iters: 200,
            rel_tol: 1e-6,
            seed: 7,
            sigma_floor: 1e-4,
            init_sample: 100_000,
            max_rows: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    /// Total log-likelihood of the parameters entering each iteration.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    /// Iterations after which a collapsed component was re-seeded.
    pub reseeds: Vec<usize>,
    /// Per-row responsibilities of the final E-step (`n × K`, row-major,
    /// in the sorted row order used internally).
    pub responsibilities: Vec<f64>,
}

struct Params {
    weights: Vec<f64>,
    means: Vec<f64>,
    /// σ per component (iso) or per component and dim (diag).
    sigmas: Vec<f64>,
}

/// Row-major feature matrix.
struct Rows<'a> {
    data: &'a [f64],
    d: usize,
}

impl Rows<'_> {
    fn n(&self) -> usize {
        self.data.len() / self.d
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

struct ChunkStats {
    log_likelihood: f64,
    nk: Vec<f64>,
    sum_x: Vec<f64>,
    worst: Vec<(f64, usize)>,
}

fn log_norms(p: &Params, cov: CovKind, d: usize) -> Vec<f64> {
    let k = p.weights.len();
    (0..k)
        .map(|c| {
            let log_det = match cov {
                CovKind::Isotropic => d as f64 * p.sigmas[c].ln(),
                CovKind::Diagonal => p.sigmas[c * d..(c + 1) * d].iter().map(|s| s.ln()).sum(),
            };
            p.weights[c].ln() - 0.5 * d as f64 * (2.0 * PI).ln() - log_det
        })
        .collect()
}

fn log_densities(x: &[f64], p: &Params, norms: &[f64], cov: CovKind, out: &mut [f64]) {
    let d = x.len();
    for (c, o) in out.iter_mut().enumerate() {
        let mean = &p.means[c * d..(c + 1) * d];
        let q = match cov {
            CovKind::Isotropic => {
                let s = p.sigmas[c];
                x.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>() / (s * s)
            }
            CovKind::Diagonal => x
                .iter()
                .zip(mean)
                .zip(&p.sigmas[c * d..(c + 1) * d])
                .map(|((a, m), s)| ((a - m) / s).powi(2))
                .sum(),
        };
        *o = norms[c] - 0.5 * q;
    }
}

/// E-step: fills `resp` and returns the ordered sufficient statistics.
fn e_step(rows: &Rows, p: &Params, cov: CovKind, resp: &mut [f64]) -> ChunkStats {
    let k = p.weights.len();
    let d = rows.d;
    let norms = log_norms(p, cov, d);
    let chunks: Vec<ChunkStats> = rows
        .data
        .par_chunks(CHUNK_ROWS * d)
        .zip(resp.par_chunks_mut(CHUNK_ROWS * k))
        .enumerate()
        .map(|(ci, (xs, rs))| {
            let mut st = ChunkStats {
                log_likelihood: 0.0,
                nk: vec![0.0; k],
                sum_x: vec![0.0; k * d],
                worst: Vec::new(),
            };
            let mut lp = vec![0.0; k];
            let mut worst = (f64::INFINITY, 0usize);
            for (ri, (x, r)) in xs.chunks(d).zip(rs.chunks_mut(k)).enumerate() {
                log_densities(x, p, &norms, cov, &mut lp);
                let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + lp.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                st.log_likelihood += lse;
                if max < worst.0 {
                    worst = (max, ci * CHUNK_ROWS + ri);
                }
                for c in 0..k {
                    let g = (lp[c] - lse).exp();
                    r[c] = g;
                    st.nk[c] += g;
                    if g > 0.0 {
                        for (s, v) in st.sum_x[c * d..(c + 1) * d].iter_mut().zip(x) {
                            *s += g * v;
                        }
                    }
                }
            }
            st.worst.push(worst);
            st
        })
        .collect();
    let mut total = ChunkStats {
        log_likelihood: 0.0,
        nk: vec![0.0; k],
        sum_x: vec![0.0; k * d],
        worst: Vec::new(),
    };
    for c in chunks {
        total.log_likelihood += c.log_likelihood;
        total.nk.iter_mut().zip(&c.nk).for_each(|(a, b)| *a += b);
        total.sum_x.iter_mut().zip(&c.sum_x).for_each(|(a, b)| *a += b);
        total.worst.extend(c.worst);
    }
    total
}

/// Σ_b γ_bk (x_b − μ_k)² per component (iso: summed over dims), two-pass.
fn scatter(rows: &Rows, means: &[f64], resp: &[f64], k: usize, cov: CovKind) -> Vec<f64> {
    let d = rows.d;
    let width = match cov {
        CovKind::Isotropic => 1,
        CovKind::Diagonal => d,
    };
    let chunks: Vec<Vec<f64>> = rows
        .data
        .par_chunks(CHUNK_ROWS * d)
        .zip(resp.par_chunks(CHUNK_ROWS * k))
        .map(|(xs, rs)| {
            let mut acc = vec![0.0; k * width];
            for (x, r) in xs.chunks(d).zip(rs.chunks(k)) {
                for c in 0..k {
                    let g = r[c];
                    if g == 0.0 {
                        continue;
                    }
                    let mean = &means[c * d..(c + 1) * d];
                    match cov {
                        CovKind::Isotropic => {
                            acc[c] += g * x.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>();
                        }
                        CovKind::Diagonal => {
                            for j in 0..d {
                                let diff = x[j] - mean[j];
                                acc[c * d + j] += g * diff * diff;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; k * width];
    for c in chunks {
        total.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
    }
    total
}

fn sort_rows(rows: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .iter()
            .zip(&rows[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

fn sample_indices(n: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// k-means++ seeding over `candidates` (row indices).
fn kmeans_pp(rows: &Rows, candidates: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![candidates[rng.random_range(0..candidates.len())]];
    let mut best: Vec<f64> = candidates
        .iter()
        .map(|&i| dist2(rows.row(i), rows.row(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = candidates.len() - 1;
            for (j, &w) in best.iter().enumerate() {
                if target < w {
                    chosen = j;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..candidates.len())
        };
        let c = candidates[pick];
        centers.push(c);
        for (b, &i) in best.iter_mut().zip(candidates) {
            *b = b.min(dist2(rows.row(i), rows.row(c)));
        }
    }
    centers
}

/// Fit a `config.k`-component mixture to `features` by EM.
///
/// The returned model carries an identity standardizer; see [`train_umm`]
/// for the z-scored variant used by the pipeline.
pub fn train_em(features: &[Vec<f64>], config: &EmConfig) -> Result<(UmmModel, EmTrace)> {
    let k = config.k;
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if features.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            got: features.len(),
        });
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(Error::DimMismatch { expected: d, got: bad.len() });
    }
    if d == 0 {
        return Err(Error::DegenerateData("zero-dimensional features".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sorted = sort_rows(features);
    let kept = match config.max_rows {
        Some(cap) => sample_indices(sorted.len(), cap.max(k), &mut rng),
        None => (0..sorted.len()).collect(),
    };
    let mut flat = Vec::with_capacity(kept.len() * d);
    for &i in &kept {
        flat.extend_from_slice(&features[sorted[i]]);
    }
    let rows = Rows { data: &flat, d };
    let n = rows.n();

    // Initialization: k-means++ seeds as means, uniform weights, pooled sigma.
    let candidates = sample_indices(n, config.init_sample.max(k), &mut rng);
    let seeds = kmeans_pp(&rows, &candidates, k, &mut rng);
    let mut grand = vec![0.0; d];
    for i in 0..n {
        grand.iter_mut().zip(rows.row(i)).for_each(|(g, v)| *g += v);
    }
    grand.iter_mut().for_each(|g| *g /= n as f64);
    let mut per_dim = vec![0.0; d];
    for i in 0..n {
        for ((s, v), g) in per_dim.iter_mut().zip(rows.row(i)).zip(&grand) {
            *s += (v - g) * (v - g);
        }
    }
    per_dim.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt().max(config.sigma_floor));
    let pooled = (per_dim.iter().map(|s| s * s).sum::<f64>() / d as f64).sqrt().max(config.sigma_floor);
    let mut params = Params {
        weights: vec![1.0 / k as f64; k],
        means: seeds.iter().flat_map(|&i| rows.row(i).to_vec()).collect(),
        sigmas: match config.cov {
            CovKind::Isotropic => vec![pooled; k],
            CovKind::Diagonal => (0..k).flat_map(|_| per_dim.clone()).collect(),
        },
    };

    let mut trace = EmTrace::default();
    let mut resp = vec![0.0; n * k];
    for iter in 0..config.max_iters {
        let stats = e_step(&rows, &params, config.cov, &mut resp);
        let ll = stats.log_likelihood;
        if !ll.is_finite() {
            return Err(Error::DegenerateData(format!("log-likelihood became {ll} at iteration {iter}")));
        }
        if let Some(&prev) = trace.log_likelihoods.last() {
            trace.log_likelihoods.push(ll);
            if ll - prev < config.rel_tol * prev.abs() {
                trace.converged = true;
                break;
            }
        } else {
            trace.log_likelihoods.push(ll);
        }

        // M-step
        let mut means = params.means.clone();
        for c in 0..k {
            if stats.nk[c] > 0.0 {
                for j in 0..d {
                    means[c * d + j] = stats.sum_x[c * d + j] / stats.nk[c];
                }
            }
        }
        let sc = scatter(&rows, &means, &resp, k, config.cov);
        let mut sigmas = params.sigmas.clone();
        for c in 0..k {
            if stats.nk[c] <= 0.0 {
                continue;
            }
            match config.cov {
                CovKind::Isotropic => {
                    sigmas[c] = (sc[c] / (stats.nk[c] * d as f64)).sqrt().max(config.sigma_floor);
                }
                CovKind::Diagonal => {
                    for j in 0..d {
                        sigmas[c * d + j] = (sc[c * d + j] / stats.nk[c]).sqrt().max(config.sigma_floor);
                    }
                }
            }
        }
        let weights: Vec<f64> = stats.nk.iter().map(|v| v / n as f64).collect();

        // Re-seed collapsed components at the worst-explained rows. Their
        // (tiny) weights are kept, so the mixture density can only grow.
        let mut worst = stats.worst.clone();
        worst.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut worst = worst.into_iter();
        let mut reseeded = false;
        for c in 0..k {
            if weights[c] < COLLAPSE_WEIGHT {
                if let Some((_, row)) = worst.next() {
                    means[c * d..(c + 1) * d].copy_from_slice(rows.row(row));
                    match config.cov {
                        CovKind::Isotropic => sigmas[c] = pooled,
                        CovKind::Diagonal => sigmas[c * d..(c + 1) * d].copy_from_slice(&per_dim),
                    }
                    reseeded = true;
                }
            }
        }
        if reseeded {
            trace.reseeds.push(iter);
        }
        params = Params { weights, means, sigmas };
    }
    trace.responsibilities = resp;

    let sig_cols = match config.cov {
        CovKind::Isotropic => 1,
        CovKind::Diagonal => d,
    };
    let model = UmmModel {
        cov: config.cov,
        weights: params.weights,
        means: DMatrix::from_row_slice(k, d, &params.means),
        sigmas: DMatrix::from_row_slice(k, sig_cols, &params.sigmas),
        standardizer: Standardizer::identity(),
        provenance: Provenance::unknown(),
    };
    Ok((model, trace))
}

/// Train the UMM on pooled training features: z-score the appearance dims
/// with training statistics, run EM, and record the training id set.
pub fn train_umm(stms: &[&StmFeatureSet], config: &EmConfig) -> Result<(UmmModel, EmTrace)> {
    let first = stms
        .first()
        .ok_or_else(|| Error::TooFewSamples { needed: 1, got: 0 })?;
    let n_app = first.appearance_dim();
    let mut rows: Vec<Vec<f64>> = stms
        .iter()
        .flat_map(|s| s.features.iter().map(|f| f.to_vec()))
        .collect();
    let standardizer = Standardizer::fit(&rows, n_app);
    rows.par_iter_mut().for_each(|r| standardizer.apply(r));
    let (mut model, trace) = train_em(&rows, config)?;
    model.standardizer = standardizer;
    let ids: Vec<&str> = stms.iter().map(|s| s.meta.video_id.as_str()).collect();
    model.provenance = Provenance::of_ids(&ids);
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for center in [[0.0, 0.0], [10.0, 10.0]] {
            for _ in 0..300 {
                out.push(
                    center
                        .iter()
                        .map(|c| c + Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect(),
                );
            }
        }
        out
    }

    #[test]
    fn recovers_two_separated_clouds() {
        let data = blobs(1);
        let config = EmConfig { k: 2, ..EmConfig::default() };
        let (model, trace) = train_em(&data, &config).unwrap();
        // oracle: the centroids of the generated clouds
        let centroid = |range: std::ops::Range<usize>| -> Vec<f64> {
            let n = range.len() as f64;
            (0..2).map(|j| data[range.clone()].iter().map(|r| r[j]).sum::<f64>() / n).collect()
        };
        let truth = [centroid(0..300), centroid(300..600)];
        for k in 0..2 {
            let m: Vec<f64> = model.means.row(k).iter().copied().collect();
            let near = truth
                .iter()
                .map(|t| t.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            assert!(near < 0.1, "mean {m:?} far from {truth:?}");
            assert!((model.weights[k] - 0.5).abs() < 0.05);
        }
        assert!(trace.log_likelihoods.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn single_component_closed_form() {
        let data = blobs(2);
        let (model, _) = train_em(&data, &EmConfig { k: 1, ..EmConfig::default() }).unwrap();
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..2).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let var = data
            .iter()
            .map(|r| r.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (n * 2.0);
        assert!((model.weights[0] - 1.0).abs() < 1e-12);
        for j in 0..2 {
            assert!((model.means[(0, j)] - mean[j]).abs() < 1e-10);
        }
        assert!((model.sigmas[(0, 0)].powi(2) - var).abs() < 1e-10 * var);
    }

    #[test]
    fn identical_points_clamp_to_floor() {
        let data = vec![vec![1.5, -2.0, 0.25]; 40];
        let config = EmConfig { k: 1, ..EmConfig::default() };
        let (model, trace) = train_em(&data, &config).unwrap();
        assert_eq!(model.sigmas[(0, 0)], config.sigma_floor);
        assert!(trace.log_likelihoods.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn too_few_samples() {
        let data = vec![vec![0.0]; 3];
        assert!(matches!(
            train_em(&data, &EmConfig { k: 4, ..EmConfig::default() }),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn permutation_invariant_and_reproducible() {
        let data = blobs(3);
        let config = EmConfig { k: 3, max_iters: 30, ..EmConfig::default() };
        let (a, ta) = train_em(&data, &config).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let (b, tb) = train_em(&rev, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.log_likelihoods, tb.log_likelihoods);
    }

    #[test]
    fn diagonal_covariance_runs_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let s = if i % 2 == 0 { 0.3 } else { 3.0 };
                vec![
                    Distribution::<f64>::sample(&StandardNormal, &mut rng) * s,
                    Distribution::<f64>::sample(&StandardNormal, &mut rng) * 1.0 + (i % 2) as f64 * 5.0,
                ]
            })
            .collect();
        let config = EmConfig {
            k: 2,
            cov: CovKind::Diagonal,
            ..EmConfig::default()
        };
        let (model, trace) = train_em(&data, &config).unwrap();
        assert_eq!(model.sigmas.shape(), (2, 2));
        assert!(trace.log_likelihoods.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let data = blobs(4);
        let (_, trace) = train_em(&data, &EmConfig { k: 4, max_iters: 10, ..EmConfig::default() }).unwrap();
        for row in trace.responsibilities.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
