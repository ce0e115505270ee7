//! One-vs-rest linear SVM trained by dual coordinate descent on the
//! L2-regularized hinge loss. The bias is learned as the weight of an
//! appended constant-1 feature.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::provenance::Provenance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Stop once `primal − dual ≤ gap_tol · primal`.
    pub gap_tol: f64,
    pub max_epochs: usize,
    /// L2-normalize every vector before training and prediction.
    pub normalize: bool,
    /// Shuffle the coordinate order each epoch with this seed.
    pub shuffle_seed: Option<u64>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            gap_tol: 1e-3,
            max_epochs: 1000,
            normalize: true,
            shuffle_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    /// Sorted, unique class labels.
    pub classes: Vec<usize>,
    /// One weight vector per class, `dim` long.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub c: f64,
    pub normalize: bool,
    pub provenance: Provenance,
}

/// Per-class record of the binary solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTrace {
    /// Dual objective after each epoch.
    pub dual: Vec<f64>,
    pub primal: f64,
    pub converged: bool,
}

pub fn l2_normalized(x: &[f64]) -> Vec<f64> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter().map(|v| v / n).collect()
    } else {
        x.to_vec()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `½‖w‖² + C Σ max(0, 1 − y_i wᵀx_i)` over augmented vectors.
pub fn primal_objective(w: &[f64], xs: &[Vec<f64>], ys: &[f64], c: f64) -> f64 {
    let reg = 0.5 * dot(w, w);
    let loss: f64 = xs.iter().zip(ys).map(|(x, y)| (1.0 - y * dot(w, x)).max(0.0)).sum();
    reg + c * loss
}

/// Binary dual coordinate descent over augmented vectors (`ys` in {−1, +1}).
pub fn solve_binary(xs: &[Vec<f64>], ys: &[f64], config: &SvmConfig) -> (Vec<f64>, BinaryTrace) {
    let n = xs.len();
    let dim = xs.first().map_or(0, Vec::len);
    let c = config.c;
    let qii: Vec<f64> = xs.iter().map(|x| dot(x, x)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = config.shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    let mut dual = Vec::new();
    let mut primal = primal_objective(&w, xs, ys, c);
    let mut converged = false;

    // Shrinking: coordinates stuck at a bound whose gradient points further
    // out are dropped from the active prefix of `order`.
    let mut active = n;
    let (mut pg_max_old, mut pg_min_old) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..config.max_epochs {
        if let Some(r) = rng.as_mut() {
            order[..active].shuffle(r);
        }
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut s = 0;
        while s < active {
            let i = order[s];
            if qii[i] <= 0.0 {
                s += 1;
                continue;
            }
            let g = ys[i] * dot(&w, &xs[i]) - 1.0;
            let pg = if alpha[i] == 0.0 {
                if g > pg_max_old {
                    active -= 1;
                    order.swap(s, active);
                    continue;
                }
                g.min(0.0)
            } else if alpha[i] == c {
                if g < pg_min_old {
                    active -= 1;
                    order.swap(s, active);
                    continue;
                }
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            let new = (alpha[i] - g / qii[i]).clamp(0.0, c);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                let step = delta * ys[i];
                for (wj, xj) in w.iter_mut().zip(&xs[i]) {
                    *wj += step * xj;
                }
            }
            s += 1;
        }
        let d = alpha.iter().sum::<f64>() - 0.5 * dot(&w, &w);
        dual.push(d);
        primal = primal_objective(&w, xs, ys, c);
        if primal - d <= config.gap_tol * primal.abs() {
            converged = true;
            break;
        }
        if pg_max - pg_min <= 1e-12 && active < n {
            // the shrunk problem is solved but the full one is not yet
            active = n;
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
        } else {
            pg_max_old = if pg_max > 0.0 { pg_max } else { f64::INFINITY };
            pg_min_old = if pg_min < 0.0 { pg_min } else { f64::NEG_INFINITY };
        }
    }
    (w, BinaryTrace { dual, primal, converged })
}

fn augment(x: &[f64], normalize: bool) -> Vec<f64> {
    let mut v = if normalize { l2_normalized(x) } else { x.to_vec() };
    v.push(1.0);
    v
}

pub fn train_svm(
    xs: &[Vec<f64>],
    ys: &[usize],
    config: &SvmConfig,
    provenance: Provenance,
) -> Result<(LinearSvmModel, Vec<BinaryTrace>)> {
    if xs.len() != ys.len() {
        return Err(Error::WrongCount {
            expected: ys.len(),
            got: xs.len(),
        });
    }
    if !(config.c > 0.0) {
        return Err(Error::Config(format!("C must be positive, got {}", config.c)));
    }
    let mut classes = ys.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let dim = xs[0].len();
    if let Some(x) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    let aug: Vec<Vec<f64>> = xs.iter().map(|x| augment(x, config.normalize)).collect();
    let solved: Vec<(Vec<f64>, BinaryTrace)> = classes
        .par_iter()
        .map(|&cls| {
            let signs: Vec<f64> = ys.iter().map(|&y| if y == cls { 1.0 } else { -1.0 }).collect();
            solve_binary(&aug, &signs, config)
        })
        .collect();
    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    let mut traces = Vec::with_capacity(classes.len());
    for (mut w, trace) in solved {
        biases.push(w.pop().unwrap_or(0.0));
        weights.push(w);
        traces.push(trace);
    }
    Ok((
        LinearSvmModel {
            classes,
            weights,
            biases,
            c: config.c,
            normalize: config.normalize,
            provenance,
        },
        traces,
    ))
}

impl LinearSvmModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let v = if self.normalize { l2_normalized(x) } else { x.to_vec() };
        Ok(self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, &v) + b).collect())
    }

    /// Highest-scoring class; ties go to the lower class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let scores = self.scores(x)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(self.classes[best])
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(rng: &mut ChaCha8Rng, per: usize, centers: &[[f64; 2]], spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let noise = Normal::new(0.0, spread).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                xs.push(vec![center[0] + noise.sample(rng), center[1] + noise.sample(rng)]);
                ys.push(c);
            }
        }
        (xs, ys)
    }

    fn raw_config() -> SvmConfig {
        SvmConfig {
            normalize: false,
            ..SvmConfig::default()
        }
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (xs, ys) = blobs(&mut rng, 40, &[[-3.0, 0.0], [3.0, 0.5]], 0.5);
        let (m, traces) = train_svm(&xs, &ys, &raw_config(), Provenance::unknown()).unwrap();
        assert_eq!(m.predict_all(&xs).unwrap(), ys);
        for t in &traces {
            for pair in t.dual.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12 * pair[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (xs, ys) = blobs(&mut rng, 20, &[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]], 0.6);
        let a = train_svm(&xs, &ys, &SvmConfig::default(), Provenance::unknown()).unwrap();
        let b = train_svm(&xs, &ys, &SvmConfig::default(), Provenance::unknown()).unwrap();
        assert_eq!(a, b);
    }

    /// Projected subgradient descent on the primal with step `1/t` and
    /// suffix averaging.
    fn primal_oracle(xs: &[Vec<f64>], ys: &[f64], c: f64, iters: usize) -> f64 {
        let dim = xs[0].len();
        let mut w = vec![0.0; dim];
        let mut avg = vec![0.0; dim];
        let mut count = 0.0;
        let mut best = f64::INFINITY;
        for t in 1..=iters {
            let mut g = w.clone();
            for (x, y) in xs.iter().zip(ys) {
                if y * dot(&w, x) < 1.0 {
                    for j in 0..dim {
                        g[j] -= c * y * x[j];
                    }
                }
            }
            let eta = 1.0 / t as f64;
            for j in 0..dim {
                w[j] -= eta * g[j];
            }
            if t > iters / 2 {
                count += 1.0;
                for j in 0..dim {
                    avg[j] += (w[j] - avg[j]) / count;
                }
                best = best.min(primal_objective(&avg, xs, ys, c));
            }
            best = best.min(primal_objective(&w, xs, ys, c));
        }
        best
    }

    #[test]
    fn objective_matches_subgradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let flip = rng.random_bool(0.15);
            let pos = (dot(&truth, &x) > 0.0) != flip;
            xs.push(augment(&x, false));
            ys.push(if pos { 1.0 } else { -1.0 });
        }
        let (w, trace) = solve_binary(&xs, &ys, &raw_config());
        assert!(trace.converged);
        let ours = primal_objective(&w, &xs, &ys, 1.0);
        let oracle = primal_oracle(&xs, &ys, 1.0, 400_000);
        assert!((ours - oracle).abs() <= 1e-3 * oracle, "{ours} vs {oracle}");
    }

    #[test]
    fn tie_goes_to_lower_class() {
        let m = LinearSvmModel {
            classes: vec![2, 5],
            weights: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            biases: vec![0.0, 0.0],
            c: 1.0,
            normalize: false,
            provenance: Provenance::unknown(),
        };
        assert_eq!(m.predict(&[0.0, 3.0]).unwrap(), 2);
        assert_eq!(m.predict(&[-1.0, 0.0]).unwrap(), 5);
        assert!(matches!(m.predict(&[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn predictions_match_score_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (xs, ys) = blobs(&mut rng, 15, &[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]], 0.8);
        let (m, _) = train_svm(&xs, &ys, &raw_config(), Provenance::unknown()).unwrap();
        for _ in 0..100 {
            let x = vec![rng.random_range(-2.0..4.0), rng.random_range(-2.0..4.0)];
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, (w, b)) in m.weights.iter().zip(&m.biases).enumerate() {
                let s = w[0] * x[0] + w[1] * x[1] + b;
                if s > best.0 {
                    best = (s, i);
                }
            }
            assert_eq!(m.predict(&x).unwrap(), m.classes[best.1]);
        }
    }

    #[test]
    fn scaling_with_matched_c_keeps_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (xs, ys) = blobs(&mut rng, 25, &[[-2.0, -2.0], [2.0, 2.0], [2.0, -2.0]], 0.4);
        let (m, _) = train_svm(&xs, &ys, &raw_config(), Provenance::unknown()).unwrap();
        let scale = 3.0;
        let scaled: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| v * scale).collect()).collect();
        let cfg = SvmConfig {
            c: 1.0 / (scale * scale),
            ..raw_config()
        };
        let (ms, _) = train_svm(&scaled, &ys, &cfg, Provenance::unknown()).unwrap();
        assert_eq!(m.predict_all(&xs).unwrap(), ms.predict_all(&scaled).unwrap());
    }

    #[test]
    fn rejects_single_class() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_svm(&xs, &[0, 0], &SvmConfig::default(), Provenance::unknown()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn shuffled_order_still_separates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (xs, ys) = blobs(&mut rng, 30, &[[-3.0, 0.0], [3.0, 0.0]], 0.5);
        let cfg = SvmConfig {
            shuffle_seed: Some(9),
            ..raw_config()
        };
        let (m, _) = train_svm(&xs, &ys, &cfg, Provenance::unknown()).unwrap();
        assert_eq!(m.predict_all(&xs).unwrap(), ys);
    }
}
