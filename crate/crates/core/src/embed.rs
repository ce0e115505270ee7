//! Graph-embedding discriminant learning over expressionlets.
//!
//! Expressionlet `m = i·K + p` is mode `p` of training clip `i`. The
//! intrinsic graph links same-mode expressionlets of same-label clips, the
//! penalty graph links same-mode expressionlets of different-label clips, and
//! the projection solves `X L_b Xᵀ v = λ X L_w Xᵀ v` for the top eigenvectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{fix_column_signs, sym_eigen_desc, symmetrize};
use crate::provenance::Provenance;
use crate::stfeat::PcaModel;

/// Relative ridge on the within-class scatter.
pub const RIDGE_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PairGraphs {
    labels: Vec<usize>,
    k: usize,
}

impl PairGraphs {
    pub fn n_nodes(&self) -> usize {
        self.labels.len() * self.k
    }

    pub fn modes(&self) -> usize {
        self.k
    }

    fn split(&self, m: usize) -> (usize, usize) {
        (m / self.k, m % self.k)
    }

    pub fn intrinsic(&self, m: usize, n: usize) -> bool {
        let ((i, p), (j, q)) = (self.split(m), self.split(n));
        m != n && p == q && self.labels[i] == self.labels[j]
    }

    pub fn penalty(&self, m: usize, n: usize) -> bool {
        let ((i, p), (j, q)) = (self.split(m), self.split(n));
        p == q && self.labels[i] != self.labels[j]
    }

    fn neighbors(&self, m: usize, same_label: bool) -> Vec<usize> {
        let (i, p) = self.split(m);
        (0..self.labels.len())
            .filter(|&j| j != i && (self.labels[j] == self.labels[i]) == same_label)
            .map(|j| j * self.k + p)
            .collect()
    }

    /// Dense `(W_w, W_b)`; only sensible for small graphs.
    pub fn to_dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_nodes();
        let ww = DMatrix::from_fn(n, n, |a, b| f64::from(u8::from(self.intrinsic(a, b))));
        let wb = DMatrix::from_fn(n, n, |a, b| f64::from(u8::from(self.penalty(a, b))));
        (ww, wb)
    }
}

pub fn build_graphs(labels: &[usize], k: usize) -> Result<PairGraphs> {
    if labels.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: labels.len(),
        });
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    Ok(PairGraphs {
        labels: labels.to_vec(),
        k,
    })
}

/// Sparse graph Laplacian `L = D − W` of a 0/1 adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    adjacency: Vec<Vec<usize>>,
}

impl Laplacian {
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Self {
        Laplacian { adjacency }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn degree(&self, m: usize) -> f64 {
        self.adjacency[m].len() as f64
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut l = DMatrix::zeros(n, n);
        for (m, adj) in self.adjacency.iter().enumerate() {
            l[(m, m)] = adj.len() as f64;
            for &o in adj {
                l[(m, o)] -= 1.0;
            }
        }
        l
    }

    /// `xᵀ L x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.adjacency
            .iter()
            .enumerate()
            .map(|(m, adj)| x[m] * (adj.len() as f64 * x[m] - adj.iter().map(|&o| x[o]).sum::<f64>()))
            .sum()
    }

    /// `X L Xᵀ` for `X` with one node per column.
    pub fn sandwich(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n_nodes() {
            return Err(Error::DimMismatch {
                expected: self.n_nodes(),
                got: x.ncols(),
            });
        }
        let mut z = DMatrix::zeros(x.nrows(), x.ncols());
        for (m, adj) in self.adjacency.iter().enumerate() {
            let mut col = x.column(m) * adj.len() as f64;
            for &o in adj {
                col -= x.column(o);
            }
            z.set_column(m, &col);
        }
        Ok(symmetrize(&(x * z.transpose())))
    }
}

/// `(L_w, L_b)` of the intrinsic and penalty graphs.
pub fn scatter_laplacians(graphs: &PairGraphs) -> (Laplacian, Laplacian) {
    let n = graphs.n_nodes();
    let lw = (0..n).map(|m| graphs.neighbors(m, true)).collect();
    let lb = (0..n).map(|m| graphs.neighbors(m, false)).collect();
    (Laplacian::from_adjacency(lw), Laplacian::from_adjacency(lb))
}

/// Solve `A v = λ B v` for symmetric `A` and SPD `B` by Cholesky whitening.
/// Returns the top `l` eigenvalues (descending) and eigenvectors as columns.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>, l: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let dim = a.nrows();
    if a.shape() != b.shape() || a.ncols() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: b.nrows(),
        });
    }
    if l == 0 || l > dim {
        return Err(Error::Config(format!("projection dim {l} must be in 1..={dim}")));
    }
    let chol = symmetrize(b)
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("within-class scatter is not positive definite".into()))?;
    let lower = chol.l();
    let y = lower
        .solve_lower_triangular(&symmetrize(a))
        .ok_or_else(|| Error::IllConditioned("singular Cholesky factor".into()))?;
    let c = lower
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::IllConditioned("singular Cholesky factor".into()))?;
    let (values, q) = sym_eigen_desc(&c);
    let q = q.columns(0, l).into_owned();
    let mut v = lower
        .transpose()
        .solve_upper_triangular(&q)
        .ok_or_else(|| Error::IllConditioned("singular Cholesky factor".into()))?;
    fix_column_signs(&mut v);
    Ok((values[..l].to_vec(), v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub pca: PcaModel,
    /// `pca.output_dim() × l`
    pub v: DMatrix<f64>,
    pub eigvals: Vec<f64>,
    pub provenance: Provenance,
}

impl EmbeddingModel {
    pub fn output_dim(&self) -> usize {
        self.v.ncols()
    }

    /// `Vᵀ z` for an already PCA-reduced vector.
    pub fn embed_reduced(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.v.nrows() {
            return Err(Error::DimMismatch {
                expected: self.v.nrows(),
                got: z.len(),
            });
        }
        Ok(self.v.tr_mul(&DVector::from_column_slice(z)).iter().copied().collect())
    }

    /// `Vᵀ · pca(log_vec)`
    pub fn embed(&self, log_vec: &[f64]) -> Result<Vec<f64>> {
        let z = self.pca.project(log_vec)?;
        self.embed_reduced(z.as_slice())
    }
}

/// `A = X L_b Xᵀ`, `B = X L_w Xᵀ + ρI` with `ρ = 1e-6·tr(B)/dim`, and the
/// top-`l` generalized eigenvectors.
pub fn solve_projection(x: &DMatrix<f64>, lw: &Laplacian, lb: &Laplacian, l: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let a = lb.sandwich(x)?;
    let mut b = lw.sandwich(x)?;
    let dim = b.nrows();
    let tr = b.trace();
    if !(tr > 0.0) {
        return Err(Error::IllConditioned("within-class scatter is zero".into()));
    }
    let rho = RIDGE_REL * tr / dim as f64;
    for i in 0..dim {
        b[(i, i)] += rho;
    }
    generalized_eigen(&a, &b, l)
}

/// Fit the discriminant projection on PCA-reduced training expressionlets.
///
/// `reduced[i]` is the `K × pca_dim` matrix of clip `i`, `labels[i]` its class.
pub fn train_embedding(
    reduced: &[&DMatrix<f64>],
    labels: &[usize],
    pca: PcaModel,
    l: usize,
    provenance: Provenance,
) -> Result<EmbeddingModel> {
    if reduced.len() != labels.len() {
        return Err(Error::WrongCount {
            expected: labels.len(),
            got: reduced.len(),
        });
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::SingleClass);
    }
    let k = reduced.first().map(|m| m.nrows()).unwrap_or(0);
    let dim = pca.output_dim();
    let graphs = build_graphs(labels, k)?;
    let mut x = DMatrix::zeros(dim, graphs.n_nodes());
    for (i, m) in reduced.iter().enumerate() {
        if m.nrows() != k || m.ncols() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: m.ncols(),
            });
        }
        for p in 0..k {
            x.set_column(i * k + p, &m.row(p).transpose());
        }
    }
    let (lw, lb) = scatter_laplacians(&graphs);
    let (eigvals, v) = solve_projection(&x, &lw, &lb, l)?;
    Ok(EmbeddingModel {
        pca,
        v,
        eigvals,
        provenance,
    })
}

/// Concatenate the K embedded expressionlets of a clip in mode order.
pub fn concat_video(vectors: &[Vec<f64>], k: usize, l: usize) -> Result<Vec<f64>> {
    if vectors.len() != k {
        return Err(Error::WrongCount {
            expected: k,
            got: vectors.len(),
        });
    }
    let mut out = Vec::with_capacity(k * l);
    for v in vectors {
        if v.len() != l {
            return Err(Error::DimMismatch { expected: l, got: v.len() });
        }
        out.extend_from_slice(v);
    }
    Ok(out)
}
