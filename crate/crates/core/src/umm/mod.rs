//! Universal Manifold Model: a K-component Gaussian mixture over augmented
//! block features, and the three ways of instantiating local modes on a clip
//! (soft top-T, hard argmax, rigid blocking).

mod em;

use std::f64::consts::PI;

use nalgebra::DMatrix;

pub use em::{train_em, train_umm, EmConfig, EmTrace};

use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::stfeat::{StmFeatureSet, VideoMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovKind {
    /// `σ_k² I`
    Isotropic,
    /// `diag(σ_k1², …, σ_kd²)`
    Diagonal,
}

impl std::str::FromStr for CovKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" => Ok(CovKind::Isotropic),
            "diag" => Ok(CovKind::Diagonal),
            other => Err(Error::Config(format!("unknown covariance kind `{other}` (iso|diag)"))),
        }
    }
}

/// Z-scoring of the leading appearance dims; location dims pass through.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer {
            mean: Vec::new(),
            std: Vec::new(),
        }
    }

    /// Fit on the first `n_dims` columns of `rows`. Constant dims get std 1.
    pub fn fit(rows: &[Vec<f64>], n_dims: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; n_dims];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; n_dims];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, v: &mut [f64]) {
        for ((x, m), s) in v.iter_mut().zip(&self.mean).zip(&self.std) {
            *x = (*x - m) / s;
        }
    }

    pub fn applied(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.apply(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UmmModel {
    pub cov: CovKind,
    pub weights: Vec<f64>,
    /// `K × d`, one mean per row.
    pub means: DMatrix<f64>,
    /// `K × 1` for isotropic components, `K × d` for diagonal ones.
    pub sigmas: DMatrix<f64>,
    pub standardizer: Standardizer,
    pub provenance: Provenance,
}

impl UmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    #[inline]
    pub fn sigma(&self, k: usize, j: usize) -> f64 {
        match self.cov {
            CovKind::Isotropic => self.sigmas[(k, 0)],
            CovKind::Diagonal => self.sigmas[(k, j)],
        }
    }

    /// Per-component `log w_k − (d/2)·log 2π − Σ_j log σ_kj`.
    pub(crate) fn log_norms(&self) -> Vec<f64> {
        let d = self.dim() as f64;
        (0..self.k())
            .map(|k| {
                let log_det: f64 = match self.cov {
                    CovKind::Isotropic => d * self.sigmas[(k, 0)].ln(),
                    CovKind::Diagonal => self.sigmas.row(k).iter().map(|s| s.ln()).sum(),
                };
                self.weights[k].ln() - 0.5 * d * (2.0 * PI).ln() - log_det
            })
            .collect()
    }

    /// `log(w_k · G(f | μ_k, Σ_k))` for every component, given precomputed norms.
    pub(crate) fn log_densities_with(&self, f: &[f64], norms: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (k, o) in out.iter_mut().enumerate() {
            let mean = self.means.row(k);
            let mut q = 0.0;
            match self.cov {
                CovKind::Isotropic => {
                    for j in 0..d {
                        let diff = f[j] - mean[j];
                        q += diff * diff;
                    }
                    let s = self.sigmas[(k, 0)];
                    q /= s * s;
                }
                CovKind::Diagonal => {
                    for j in 0..d {
                        let diff = (f[j] - mean[j]) / self.sigmas[(k, j)];
                        q += diff * diff;
                    }
                }
            }
            *o = norms[k] - 0.5 * q;
        }
    }

    pub fn component_log_density(&self, f: &[f64], k: usize) -> Result<f64> {
        if f.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: f.len(),
            });
        }
        if k >= self.k() {
            return Err(Error::DimMismatch {
                expected: self.k(),
                got: k,
            });
        }
        let norms = self.log_norms();
        let mut all = vec![0.0; self.k()];
        self.log_densities_with(f, &norms, &mut all);
        Ok(all[k])
    }

    /// Weighted component density `w_k · G(f | μ_k, σ_k² I)`.
    pub fn component_density(&self, f: &[f64], k: usize) -> Result<f64> {
        self.component_log_density(f, k).map(f64::exp)
    }

    /// Log weighted densities of every standardized feature of `stm`,
    /// `B × K` row-major.
    fn stm_log_densities(&self, stm: &StmFeatureSet) -> Result<Vec<f64>> {
        if stm.is_empty() {
            return Err(Error::EmptyStm(stm.meta.video_id.clone()));
        }
        let norms = self.log_norms();
        let k = self.k();
        let mut out = vec![0.0; stm.len() * k];
        for (f, row) in stm.features.iter().zip(out.chunks_mut(k)) {
            if f.dim() != self.dim() {
                return Err(Error::DimMismatch {
                    expected: self.dim(),
                    got: f.dim(),
                });
            }
            let v = self.standardizer.applied(&f.to_vec());
            self.log_densities_with(&v, &norms, row);
        }
        Ok(out)
    }

    /// The mixture restricted to the leading `n` dims. The marginal of an
    /// axis-aligned Gaussian keeps its per-dim sigmas.
    pub fn marginal(&self, n: usize) -> UmmModel {
        let n = n.min(self.dim());
        let sigmas = match self.cov {
            CovKind::Isotropic => self.sigmas.clone(),
            CovKind::Diagonal => self.sigmas.columns(0, n).into_owned(),
        };
        let keep = n.min(self.standardizer.mean.len());
        UmmModel {
            cov: self.cov,
            weights: self.weights.clone(),
            means: self.means.columns(0, n).into_owned(),
            sigmas,
            standardizer: Standardizer {
                mean: self.standardizer.mean[..keep].to_vec(),
                std: self.standardizer.std[..keep].to_vec(),
            },
            provenance: self.provenance,
        }
    }
}

/// The features of one clip instantiating one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMode {
    pub k: usize,
    /// Indices into the clip's feature list, highest density first.
    pub members: Vec<usize>,
    /// Log weighted densities of the members (zeros for rigid blocks).
    pub log_probs: Vec<f64>,
}

impl LocalMode {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn features<'a>(&'a self, stm: &'a StmFeatureSet) -> impl Iterator<Item = &'a crate::stfeat::BlockFeature> + 'a {
        self.members.iter().map(move |&i| &stm.features[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedStm {
    pub meta: VideoMeta,
    pub modes: Vec<LocalMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    Soft,
    Hard,
    Rigid,
}

impl std::str::FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Alignment::Soft),
            "hard" => Ok(Alignment::Hard),
            "rigid" => Ok(Alignment::Rigid),
            other => Err(Error::Config(format!("unknown alignment `{other}` (soft|hard|rigid)"))),
        }
    }
}

fn sorted_desc(candidates: &mut [(usize, f64)]) {
    // stable: equal densities keep the lower feature index first
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
}

/// Soft fitting: for each component keep the `T` features with the largest
/// weighted density. A feature may serve several modes.
pub fn fit_soft(stm: &StmFeatureSet, model: &UmmModel, t: usize) -> Result<AlignedStm> {
    if t < 2 {
        return Err(Error::Config(format!("T must be at least 2, got {t}")));
    }
    let dens = model.stm_log_densities(stm)?;
    let k = model.k();
    let take = t.min(stm.len());
    let modes = (0..k)
        .map(|c| {
            let mut cand: Vec<(usize, f64)> = (0..stm.len()).map(|b| (b, dens[b * k + c])).collect();
            sorted_desc(&mut cand);
            cand.truncate(take);
            LocalMode {
                k: c,
                members: cand.iter().map(|p| p.0).collect(),
                log_probs: cand.iter().map(|p| p.1).collect(),
            }
        })
        .collect();
    Ok(AlignedStm {
        meta: stm.meta.clone(),
        modes,
    })
}

/// Hard fitting: every feature goes to its highest-density component
/// (lower index on ties). Modes may be empty.
pub fn fit_hard(stm: &StmFeatureSet, model: &UmmModel) -> Result<AlignedStm> {
    let dens = model.stm_log_densities(stm)?;
    let k = model.k();
    let mut buckets: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for (b, row) in dens.chunks(k).enumerate() {
        let mut best = 0;
        for c in 1..k {
            if row[c] > row[best] {
                best = c;
            }
        }
        buckets[best].push((b, row[best]));
    }
    let modes = buckets
        .into_iter()
        .enumerate()
        .map(|(c, mut cand)| {
            sorted_desc(&mut cand);
            LocalMode {
                k: c,
                members: cand.iter().map(|p| p.0).collect(),
                log_probs: cand.iter().map(|p| p.1).collect(),
            }
        })
        .collect();
    Ok(AlignedStm {
        meta: stm.meta.clone(),
        modes,
    })
}

pub const RIGID_SPATIAL_SIDE: usize = 4;

/// Rigid blocking: a fixed 4×4 spatial grid times `K/16` equal temporal
/// segments over the normalized locations. Modes are ordered t, y, x.
pub fn rigid_blocks(stm: &StmFeatureSet, k: usize) -> Result<AlignedStm> {
    let cells = RIGID_SPATIAL_SIDE * RIGID_SPATIAL_SIDE;
    if k == 0 || k % cells != 0 {
        return Err(Error::BadK {
            k,
            reason: format!("must be a positive multiple of {cells}"),
        });
    }
    let segments = k / cells;
    if segments > stm.counts.t {
        return Err(Error::BadK {
            k,
            reason: format!("{segments} temporal segments exceed {} temporal positions", stm.counts.t),
        });
    }
    if stm.is_empty() {
        return Err(Error::EmptyStm(stm.meta.video_id.clone()));
    }
    let side = RIGID_SPATIAL_SIDE as f64;
    let cell = |v: f64, n: usize, scale: f64| ((v * scale).floor() as usize).min(n - 1);
    let mut modes: Vec<LocalMode> = (0..k)
        .map(|c| LocalMode {
            k: c,
            members: Vec::new(),
            log_probs: Vec::new(),
        })
        .collect();
    for (b, f) in stm.features.iter().enumerate() {
        let xb = cell(f.loc[0], RIGID_SPATIAL_SIDE, side);
        let yb = cell(f.loc[1], RIGID_SPATIAL_SIDE, side);
        let tb = cell(f.loc[2], segments, segments as f64);
        let m = &mut modes[(tb * RIGID_SPATIAL_SIDE + yb) * RIGID_SPATIAL_SIDE + xb];
        m.members.push(b);
        m.log_probs.push(0.0);
    }
    Ok(AlignedStm {
        meta: stm.meta.clone(),
        modes,
    })
}

pub fn align(stm: &StmFeatureSet, model: Option<&UmmModel>, how: Alignment, k: usize, t: usize) -> Result<AlignedStm> {
    match (how, model) {
        (Alignment::Rigid, _) => rigid_blocks(stm, k),
        (Alignment::Soft, Some(m)) => fit_soft(stm, m, t),
        (Alignment::Hard, Some(m)) => fit_hard(stm, m),
        (_, None) => Err(Error::Config("soft/hard alignment needs a trained UMM".into())),
    }
}

impl std::fmt::Display for CovKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovKind::Isotropic => "iso",
            CovKind::Diagonal => "diag",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stfeat::{augment, GridCounts, GridIndex};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta() -> VideoMeta {
        VideoMeta {
            video_id: "v".into(),
            subject_id: "s".into(),
            label: 0,
        }
    }

    fn iso_model(weights: Vec<f64>, means: Vec<Vec<f64>>, sigmas: Vec<f64>) -> UmmModel {
        let d = means[0].len();
        let k = means.len();
        UmmModel {
            cov: CovKind::Isotropic,
            weights,
            means: DMatrix::from_fn(k, d, |i, j| means[i][j]),
            sigmas: DMatrix::from_fn(k, 1, |i, _| sigmas[i]),
            standardizer: Standardizer::identity(),
            provenance: Provenance::unknown(),
        }
    }

    fn random_stm(n: usize, d_app: usize, seed: u64) -> StmFeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = GridCounts { x: 7, y: 7, t: 10 };
        let feats = (0..n)
            .map(|_| {
                let idx = GridIndex {
                    x: rng.random_range(0..7),
                    y: rng.random_range(0..7),
                    t: rng.random_range(0..10),
                };
                augment((0..d_app).map(|_| rng.random_range(-2.0..2.0)).collect(), idx, counts).unwrap()
            })
            .collect();
        StmFeatureSet::new(meta(), counts, feats).unwrap()
    }

    #[test]
    fn standard_normal_at_mean() {
        let m = iso_model(vec![1.0], vec![vec![0.0]], vec![1.0]);
        let p = m.component_density(&[0.0], 0).unwrap();
        assert!((p - 0.398942280401432678).abs() < 1e-15);
    }

    #[test]
    fn density_at_mean_closed_form() {
        for d in [1usize, 3, 10] {
            let m = iso_model(vec![0.3, 0.7], vec![vec![0.5; d], vec![1.0; d]], vec![0.7, 2.0]);
            let p = m.component_density(&vec![1.0; d], 1).unwrap();
            let expected = 0.7 * (2.0 * PI * 4.0f64).powf(-(d as f64) / 2.0);
            assert!((p - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn density_matches_product_of_univariates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = iso_model(vec![0.4, 0.6], vec![vec![0.0; 3], mean.clone()], vec![1.0, 0.8]);
        for _ in 0..20 {
            let f: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let oracle: f64 = 0.6
                * f.iter()
                    .zip(&mean)
                    .map(|(x, mu)| (-(x - mu).powi(2) / (2.0 * 0.64)).exp() / (2.0 * PI * 0.64).sqrt())
                    .product::<f64>();
            let p = m.component_density(&f, 1).unwrap();
            assert!((p - oracle).abs() <= 1e-12 * oracle);
        }
    }

    #[test]
    fn density_dim_mismatch() {
        let m = iso_model(vec![1.0], vec![vec![0.0; 2]], vec![1.0]);
        assert!(matches!(m.component_density(&[0.0], 0), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn soft_k1_picks_nearest() {
        let stm = random_stm(5, 2, 1);
        let center = vec![0.1, -0.2, 0.5, 0.5, 0.5];
        let m = iso_model(vec![1.0], vec![center.clone()], vec![1.0]);
        let aligned = fit_soft(&stm, &m, 3).unwrap();
        let mut by_dist: Vec<(usize, f64)> = stm
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (i, f.to_vec().iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum()))
            .collect();
        by_dist.sort_by(|a, b| a.1.total_cmp(&b.1));
        let nearest: Vec<usize> = by_dist[..3].iter().map(|p| p.0).collect();
        assert_eq!(aligned.modes[0].members, nearest);
    }

    #[test]
    fn soft_t_exceeding_b_takes_everything() {
        let stm = random_stm(6, 2, 2);
        let m = iso_model(vec![0.5, 0.5], vec![vec![0.0; 5], vec![1.0; 5]], vec![1.0, 1.0]);
        let aligned = fit_soft(&stm, &m, 64).unwrap();
        for mode in &aligned.modes {
            let mut members = mode.members.clone();
            members.sort();
            assert_eq!(members, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn soft_matches_full_sort_oracle() {
        let stm = random_stm(50, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let means: Vec<Vec<f64>> = (0..4).map(|_| (0..7).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let m = iso_model(vec![0.1, 0.2, 0.3, 0.4], means, vec![0.5, 1.0, 1.5, 2.0]);
        let aligned = fit_soft(&stm, &m, 8).unwrap();
        for (k, mode) in aligned.modes.iter().enumerate() {
            let mut all: Vec<(usize, f64)> = stm
                .features
                .iter()
                .enumerate()
                .map(|(i, f)| (i, m.component_density(&f.to_vec(), k).unwrap()))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let expected: Vec<usize> = all[..8].iter().map(|p| p.0).collect();
            assert_eq!(mode.members, expected);
            assert!(mode.log_probs.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn soft_rejects_small_t_and_empty() {
        let stm = random_stm(5, 2, 1);
        let m = iso_model(vec![1.0], vec![vec![0.0; 5]], vec![1.0]);
        assert!(fit_soft(&stm, &m, 1).is_err());
        let empty = StmFeatureSet {
            meta: meta(),
            counts: stm.counts,
            features: vec![],
        };
        assert!(matches!(fit_soft(&empty, &m, 4), Err(Error::EmptyStm(_))));
        assert!(matches!(fit_hard(&empty, &m), Err(Error::EmptyStm(_))));
    }

    #[test]
    fn hard_tie_goes_to_lower_component() {
        let counts = GridCounts { x: 1, y: 1, t: 1 };
        let f = augment(vec![0.0], GridIndex { x: 0, y: 0, t: 0 }, counts).unwrap();
        let stm = StmFeatureSet::new(meta(), counts, vec![f]).unwrap();
        let m = iso_model(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0, 0.0]],
            vec![1.0, 1.0],
        );
        let aligned = fit_hard(&stm, &m).unwrap();
        assert_eq!(aligned.modes[0].members, vec![0]);
        assert!(aligned.modes[1].is_empty());
    }

    #[test]
    fn hard_matches_argmax_oracle_and_partitions() {
        let stm = random_stm(60, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let means: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let m = iso_model(vec![0.2; 5], means, vec![0.6, 0.8, 1.0, 1.2, 1.4]);
        let aligned = fit_hard(&stm, &m).unwrap();
        let mut owner = vec![usize::MAX; stm.len()];
        for mode in &aligned.modes {
            for &b in &mode.members {
                assert_eq!(owner[b], usize::MAX, "feature in two modes");
                owner[b] = mode.k;
            }
        }
        for (b, f) in stm.features.iter().enumerate() {
            let v = f.to_vec();
            let dens: Vec<f64> = (0..5).map(|k| m.component_density(&v, k).unwrap()).collect();
            let mut best = 0;
            for k in 1..5 {
                if dens[k] > dens[best] {
                    best = k;
                }
            }
            assert_eq!(owner[b], best);
        }
        let k1 = iso_model(vec![1.0], vec![vec![0.0; 6]], vec![1.0]);
        assert_eq!(fit_hard(&stm, &k1).unwrap().modes[0].len(), stm.len());
    }

    #[test]
    fn rigid_k16_single_segment() {
        let stm = random_stm(200, 1, 7);
        let aligned = rigid_blocks(&stm, 16).unwrap();
        for (b, f) in stm.features.iter().enumerate() {
            if f.loc[0] < 0.25 && f.loc[1] < 0.25 {
                assert!(aligned.modes[0].members.contains(&b));
            }
        }
        let total: usize = aligned.modes.iter().map(|m| m.len()).sum();
        assert_eq!(total, 200);
    }

    #[test]
    fn rigid_k32_two_segments() {
        let stm = random_stm(300, 1, 8);
        let aligned = rigid_blocks(&stm, 32).unwrap();
        assert_eq!(aligned.modes.len(), 32);
        for f in aligned.modes[16].features(&stm) {
            assert!(f.loc[2] >= 0.5);
        }
        for f in aligned.modes[0].features(&stm) {
            assert!(f.loc[2] < 0.5);
        }
    }

    #[test]
    fn rigid_counts_within_multinomial_band() {
        // uniform continuous locations; each of K cells has probability 1/K
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let counts = GridCounts { x: 1000, y: 1000, t: 1000 };
        let n = 6400;
        let feats = (0..n)
            .map(|_| {
                let idx = GridIndex {
                    x: rng.random_range(0..1000),
                    y: rng.random_range(0..1000),
                    t: rng.random_range(0..1000),
                };
                augment(vec![0.0], idx, counts).unwrap()
            })
            .collect();
        let stm = StmFeatureSet::new(meta(), counts, feats).unwrap();
        let k = 64;
        let aligned = rigid_blocks(&stm, k).unwrap();
        let p = 1.0 / k as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for m in &aligned.modes {
            assert!((m.len() as f64 - mean).abs() <= 3.0 * sd + 1e-9, "count {} vs {mean}±{sd}", m.len());
        }
    }

    #[test]
    fn rigid_bad_k() {
        let stm = random_stm(10, 1, 1);
        assert!(matches!(rigid_blocks(&stm, 20), Err(Error::BadK { .. })));
        assert!(matches!(rigid_blocks(&stm, 0), Err(Error::BadK { .. })));
        // 11 segments > 10 temporal positions
        assert!(matches!(rigid_blocks(&stm, 176), Err(Error::BadK { .. })));
    }

    #[test]
    fn marginal_keeps_leading_dims() {
        let m = iso_model(vec![1.0], vec![vec![1.0, 2.0, 3.0]], vec![0.5]);
        let mm = m.marginal(2);
        assert_eq!(mm.dim(), 2);
        assert_eq!(mm.means.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0]);
    }
}
