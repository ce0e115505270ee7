//! On-disk formats: binary model and feature files, manifests, frame
//! directories and flat config files.

mod codec;
pub mod config;
pub mod dataset;

use nalgebra::{DMatrix, DVector};

use crate::classify::LinearSvmModel;
use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::stfeat::{augment, grid_index_from_loc, GridCounts, PcaModel, StmFeatureSet, VideoMeta, LOC_DIMS};
use crate::umm::{AlignedStm, CovKind, LocalMode, Standardizer, UmmModel};

pub use codec::{ByteReader, ByteWriter};
use codec::require_finite;

pub const STMF_VERSION: u32 = 1;

/// Feature rows of one clip: appearance followed by the three location dims,
/// stored as f32.
pub fn encode_stmf(stm: &StmFeatureSet) -> Vec<u8> {
    let mut w = ByteWriter::new(b"STMF");
    w.u32(STMF_VERSION);
    w.len_u32(stm.appearance_dim() + LOC_DIMS);
    w.len_u32(stm.len());
    for f in &stm.features {
        w.f32s(&f.appearance);
        w.f32s(&f.loc);
    }
    w.finish()
}

/// Decode to `(d_total, rows)`.
pub fn decode_stmf(data: &[u8]) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut r = ByteReader::open("STMF", b"STMF", data)?;
    let version = r.u32()?;
    if version != STMF_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let d = r.usize()?;
    let count = r.usize()?;
    if d <= LOC_DIMS {
        return Err(r.err(format!("row width {d} leaves no appearance dims")));
    }
    let flat = r.f32s(r.product(d, count)?)?;
    r.finish()?;
    require_finite("STMF", "features", &flat)?;
    Ok((d, flat.chunks_exact(d).map(<[f64]>::to_vec).collect()))
}

/// Rebuild a feature set from decoded rows and the clip's grid counts.
pub fn stm_from_rows(meta: VideoMeta, counts: GridCounts, rows: Vec<Vec<f64>>) -> Result<StmFeatureSet> {
    let mut features = Vec::with_capacity(rows.len());
    for mut row in rows {
        if row.len() <= LOC_DIMS {
            return Err(Error::DimMismatch {
                expected: LOC_DIMS + 1,
                got: row.len(),
            });
        }
        let split = row.len() - LOC_DIMS;
        let loc = [row[split], row[split + 1], row[split + 2]];
        if !loc.iter().all(|v| (0.0..1.0).contains(v)) {
            return Err(Error::format("STMF", "location outside [0, 1)"));
        }
        row.truncate(split);
        let idx = grid_index_from_loc(loc, counts);
        if idx.x >= counts.x || idx.y >= counts.y || idx.t >= counts.t {
            return Err(Error::IndexOutOfGrid {
                index: [idx.x, idx.y, idx.t],
                counts: [counts.x, counts.y, counts.t],
            });
        }
        let mut f = augment(row, idx, counts)?;
        f.loc = loc;
        features.push(f);
    }
    StmFeatureSet::new(meta, counts, features)
}

/// Round every feature value through f32, matching what a STMF round trip keeps.
pub fn quantize_stm(stm: &mut StmFeatureSet) {
    for f in &mut stm.features {
        for v in f.appearance.iter_mut().chain(f.loc.iter_mut()) {
            *v = f64::from(*v as f32);
        }
    }
}

pub fn quantize(values: &mut [f64]) {
    for v in values {
        *v = f64::from(*v as f32);
    }
}

fn put_pca(w: &mut ByteWriter, pca: &PcaModel) {
    w.len_u32(pca.input_dim());
    w.len_u32(pca.output_dim());
    w.f64(pca.retained_energy);
    w.f64s(pca.mean.iter());
    w.f64s(pca.basis.iter());
    w.f64s(&pca.eigenvalues);
}

fn get_pca(r: &mut ByteReader) -> Result<PcaModel> {
    let d = r.usize()?;
    let k = r.usize()?;
    if k > d {
        return Err(r.err(format!("output dim {k} exceeds input dim {d}")));
    }
    let retained_energy = r.f64()?;
    let mean = r.f64s(d)?;
    let basis = r.f64s(r.product(d, k)?)?;
    let eigenvalues = r.f64s(d)?;
    for (what, v) in [("mean", &mean), ("basis", &basis), ("eigenvalues", &eigenvalues)] {
        require_finite("PCA", what, v)?;
    }
    Ok(PcaModel {
        mean: DVector::from_vec(mean),
        basis: DMatrix::from_vec(d, k, basis),
        eigenvalues,
        retained_energy,
    })
}

pub fn encode_pca(pca: &PcaModel, provenance: &Provenance) -> Vec<u8> {
    let mut w = ByteWriter::new(b"PCA1");
    put_pca(&mut w, pca);
    w.provenance(provenance);
    w.finish()
}

pub fn decode_pca(data: &[u8]) -> Result<(PcaModel, Provenance)> {
    let mut r = ByteReader::open("PCA1", b"PCA1", data)?;
    let pca = get_pca(&mut r)?;
    let prov = r.provenance()?;
    r.finish()?;
    Ok((pca, prov))
}

/// `UMM1`: K, d_total, covariance kind, weights, means, sigmas (K or K·d),
/// standardization vectors, provenance.
pub fn encode_umm(m: &UmmModel) -> Vec<u8> {
    let mut w = ByteWriter::new(b"UMM1");
    w.len_u32(m.k());
    w.len_u32(m.dim());
    w.u8(match m.cov {
        CovKind::Isotropic => 0,
        CovKind::Diagonal => 1,
    });
    w.f64s(&m.weights);
    w.f64s(m.means.transpose().iter());
    w.f64s(m.sigmas.transpose().iter());
    w.len_u32(m.standardizer.mean.len());
    w.f64s(&m.standardizer.mean);
    w.f64s(&m.standardizer.std);
    w.provenance(&m.provenance);
    w.finish()
}

pub fn decode_umm(data: &[u8]) -> Result<UmmModel> {
    let mut r = ByteReader::open("UMM1", b"UMM1", data)?;
    let k = r.usize()?;
    let d = r.usize()?;
    if k == 0 || d == 0 {
        return Err(r.err("empty mixture"));
    }
    let cov = match r.u8()? {
        0 => CovKind::Isotropic,
        1 => CovKind::Diagonal,
        other => return Err(r.err(format!("unknown covariance kind {other}"))),
    };
    let weights = r.f64s(k)?;
    let means = r.f64s(r.product(k, d)?)?;
    let sig_cols = if cov == CovKind::Isotropic { 1 } else { d };
    let sigmas = r.f64s(r.product(k, sig_cols)?)?;
    let n_std = r.usize()?;
    if n_std > d {
        return Err(r.err("standardizer wider than the features"));
    }
    let std_mean = r.f64s(n_std)?;
    let std_std = r.f64s(n_std)?;
    let provenance = r.provenance()?;
    r.finish()?;
    for (what, v) in [("weights", &weights), ("means", &means), ("sigmas", &sigmas), ("standardizer", &std_mean)] {
        require_finite("UMM1", what, v)?;
    }
    if weights.iter().any(|&w| w <= 0.0) || sigmas.iter().any(|&s| s <= 0.0) || std_std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::format("UMM1", "weights, sigmas and scales must be positive"));
    }
    Ok(UmmModel {
        cov,
        weights,
        means: DMatrix::from_row_slice(k, d, &means),
        sigmas: DMatrix::from_row_slice(k, sig_cols, &sigmas),
        standardizer: Standardizer {
            mean: std_mean,
            std: std_std,
        },
        provenance,
    })
}

/// One clip's entry in a vector archive: `k × dim` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveItem {
    pub id: String,
    pub values: Vec<f64>,
}

/// `XLT1` archive of per-clip vector blocks, stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorArchive {
    pub k: usize,
    pub dim: usize,
    pub items: Vec<ArchiveItem>,
}

impl VectorArchive {
    pub fn new(k: usize, dim: usize) -> Self {
        VectorArchive { k, dim, items: Vec::new() }
    }

    pub fn push(&mut self, id: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.k * self.dim {
            return Err(Error::DimMismatch {
                expected: self.k * self.dim,
                got: values.len(),
            });
        }
        self.items.push(ArchiveItem { id: id.to_string(), values });
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ArchiveItem> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Block of one item as a `k × dim` matrix.
    pub fn block(&self, item: &ArchiveItem) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k, self.dim, &item.values)
    }
}

pub fn encode_xlt(a: &VectorArchive) -> Vec<u8> {
    let mut w = ByteWriter::new(b"XLT1");
    w.len_u32(a.k);
    w.len_u32(a.dim);
    for item in &a.items {
        w.str(&item.id);
        w.f32s(&item.values);
    }
    w.finish()
}

pub fn decode_xlt(data: &[u8]) -> Result<VectorArchive> {
    let mut r = ByteReader::open("XLT1", b"XLT1", data)?;
    let k = r.usize()?;
    let dim = r.usize()?;
    let per = r.product(k, dim)?;
    if per == 0 {
        return Err(r.err("empty vector block"));
    }
    let mut a = VectorArchive::new(k, dim);
    while !r.at_end() {
        let id = r.str()?;
        let values = r.f32s(per)?;
        require_finite("XLT1", "vectors", &values)?;
        a.items.push(ArchiveItem { id, values });
    }
    Ok(a)
}

pub fn encode_emb(m: &EmbeddingModel) -> Vec<u8> {
    let mut w = ByteWriter::new(b"EMB1");
    w.len_u32(m.v.ncols());
    put_pca(&mut w, &m.pca);
    w.f64s(m.v.iter());
    w.f64s(&m.eigvals);
    w.provenance(&m.provenance);
    w.finish()
}

pub fn decode_emb(data: &[u8]) -> Result<EmbeddingModel> {
    let mut r = ByteReader::open("EMB1", b"EMB1", data)?;
    let l = r.usize()?;
    let pca = get_pca(&mut r)?;
    let rows = pca.output_dim();
    if l == 0 || l > rows {
        return Err(r.err(format!("projection dim {l} outside 1..={rows}")));
    }
    let v = r.f64s(r.product(rows, l)?)?;
    let eigvals = r.f64s(l)?;
    let provenance = r.provenance()?;
    r.finish()?;
    require_finite("EMB1", "projection", &v)?;
    Ok(EmbeddingModel {
        pca,
        v: DMatrix::from_vec(rows, l, v),
        eigvals,
        provenance,
    })
}

pub fn encode_svm(m: &LinearSvmModel) -> Vec<u8> {
    let mut w = ByteWriter::new(b"SVM1");
    w.len_u32(m.classes.len());
    w.len_u32(m.dim());
    w.f64(m.c);
    w.u8(u8::from(m.normalize));
    for &c in &m.classes {
        w.len_u32(c);
    }
    for wv in &m.weights {
        w.f64s(wv);
    }
    w.f64s(&m.biases);
    w.provenance(&m.provenance);
    w.finish()
}

pub fn decode_svm(data: &[u8]) -> Result<LinearSvmModel> {
    let mut r = ByteReader::open("SVM1", b"SVM1", data)?;
    let n = r.usize()?;
    let dim = r.usize()?;
    if n < 2 {
        return Err(r.err("fewer than two classes"));
    }
    let c = r.f64()?;
    let normalize = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(r.err(format!("bad normalize flag {other}"))),
    };
    let classes: Vec<usize> = r.u32s(n)?.into_iter().map(|c| c as usize).collect();
    if classes.windows(2).any(|p| p[0] >= p[1]) {
        return Err(r.err("classes must be strictly increasing"));
    }
    let flat = r.f64s(r.product(n, dim)?)?;
    let biases = r.f64s(n)?;
    let provenance = r.provenance()?;
    r.finish()?;
    require_finite("SVM1", "weights", &flat)?;
    let weights = if dim == 0 {
        vec![Vec::new(); n]
    } else {
        flat.chunks_exact(dim).map(<[f64]>::to_vec).collect()
    };
    Ok(LinearSvmModel {
        classes,
        weights,
        biases,
        c,
        normalize,
        provenance,
    })
}

/// `ALN1`: provenance of the mixture used (zeros for rigid blocking), K, and
/// per mode the member feature indices.
pub fn encode_aln(aligned: &AlignedStm, umm: &Provenance) -> Vec<u8> {
    let mut w = ByteWriter::new(b"ALN1");
    w.provenance(umm);
    w.len_u32(aligned.modes.len());
    for m in &aligned.modes {
        w.len_u32(m.members.len());
        for &i in &m.members {
            w.len_u32(i);
        }
    }
    w.finish()
}

pub fn decode_aln(data: &[u8]) -> Result<(Provenance, Vec<Vec<usize>>)> {
    let mut r = ByteReader::open("ALN1", b"ALN1", data)?;
    let prov = r.provenance()?;
    let k = r.usize()?;
    if k == 0 {
        return Err(r.err("no modes"));
    }
    let mut modes = Vec::new();
    for _ in 0..k {
        let n = r.usize()?;
        modes.push(r.u32s(n)?.into_iter().map(|i| i as usize).collect());
    }
    r.finish()?;
    Ok((prov, modes))
}

/// Attach decoded member lists to a clip, checking every index.
pub fn aligned_from_members(stm: &StmFeatureSet, modes: Vec<Vec<usize>>) -> Result<AlignedStm> {
    if let Some(&bad) = modes.iter().flatten().find(|&&i| i >= stm.len()) {
        return Err(Error::format("ALN1", format!("member {bad} beyond {} features", stm.len())));
    }
    Ok(AlignedStm {
        meta: stm.meta.clone(),
        modes: modes
            .into_iter()
            .enumerate()
            .map(|(k, members)| LocalMode {
                k,
                log_probs: vec![0.0; members.len()],
                members,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stfeat::GridIndex;
    use proptest::prelude::*;

    fn stm() -> StmFeatureSet {
        let counts = GridCounts { x: 2, y: 2, t: 3 };
        let mut feats = Vec::new();
        for t in 0..3 {
            for y in 0..2 {
                for x in 0..2 {
                    let app = vec![x as f64 * 0.5, y as f64 - 0.25, t as f64 * 1.5];
                    feats.push(augment(app, GridIndex { t, y, x }, counts).unwrap());
                }
            }
        }
        let meta = VideoMeta {
            video_id: "v".into(),
            subject_id: "s".into(),
            label: 1,
        };
        StmFeatureSet::new(meta, counts, feats).unwrap()
    }

    #[test]
    fn stmf_round_trip() {
        let mut s = stm();
        let (d, rows) = decode_stmf(&encode_stmf(&s)).unwrap();
        assert_eq!(d, 6);
        let back = stm_from_rows(s.meta.clone(), s.counts, rows).unwrap();
        quantize_stm(&mut s);
        assert_eq!(back, s);
    }

    #[test]
    fn stmf_rejects_damage() {
        let bytes = encode_stmf(&stm());
        assert!(decode_stmf(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_stmf(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode_stmf(&magic), Err(Error::Format { .. })));
    }

    #[test]
    fn umm_round_trip() {
        for cov in [CovKind::Isotropic, CovKind::Diagonal] {
            let cols = if cov == CovKind::Isotropic { 1 } else { 3 };
            let m = UmmModel {
                cov,
                weights: vec![0.25, 0.75],
                means: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                sigmas: DMatrix::from_fn(2, cols, |r, c| 0.5 + r as f64 + c as f64 * 0.1),
                standardizer: Standardizer {
                    mean: vec![0.1, 0.2],
                    std: vec![1.5, 2.5],
                },
                provenance: Provenance::of_ids(&["a", "b"]),
            };
            assert_eq!(decode_umm(&encode_umm(&m)).unwrap(), m);
        }
    }

    #[test]
    fn pca_emb_svm_round_trip() {
        let pca = PcaModel {
            mean: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            basis: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            eigenvalues: vec![3.0, 2.0, 1.0],
            retained_energy: 5.0 / 6.0,
        };
        let prov = Provenance::of_ids(&["x"]);
        assert_eq!(decode_pca(&encode_pca(&pca, &prov)).unwrap(), (pca.clone(), prov));
        let emb = EmbeddingModel {
            pca,
            v: DMatrix::from_row_slice(2, 1, &[0.5, -0.5]),
            eigvals: vec![2.0],
            provenance: prov,
        };
        assert_eq!(decode_emb(&encode_emb(&emb)).unwrap(), emb);
        let svm = LinearSvmModel {
            classes: vec![0, 3, 4],
            weights: vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            biases: vec![0.1, 0.2, 0.3],
            c: 1.0,
            normalize: true,
            provenance: prov,
        };
        assert_eq!(decode_svm(&encode_svm(&svm)).unwrap(), svm);
    }

    #[test]
    fn xlt_round_trip_is_f32() {
        let mut a = VectorArchive::new(2, 2);
        a.push("clip-1", vec![1.0, 0.1, -2.0, 3.5]).unwrap();
        a.push("clip-2", vec![0.0; 4]).unwrap();
        assert!(a.push("bad", vec![0.0; 3]).is_err());
        let back = decode_xlt(&encode_xlt(&a)).unwrap();
        assert_eq!(back.items.len(), 2);
        assert_eq!(back.items[0].values[1], f64::from(0.1f32));
        assert_eq!(back.block(&back.items[0])[(1, 0)], -2.0);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut a = VectorArchive::new(1, 2);
        a.push("c", vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(decode_xlt(&encode_xlt(&a)), Err(Error::Format { .. })));
        let mut s = stm();
        s.features[2].appearance[0] = f64::INFINITY;
        assert!(matches!(decode_stmf(&encode_stmf(&s)), Err(Error::Format { .. })));
    }

    #[test]
    fn aln_round_trip_and_bounds() {
        let s = stm();
        let modes = vec![vec![0, 3, 5], vec![11, 1]];
        let aligned = aligned_from_members(&s, modes.clone()).unwrap();
        let prov = Provenance::of_ids(&["m"]);
        let (p, back) = decode_aln(&encode_aln(&aligned, &prov)).unwrap();
        assert_eq!((p, back.clone()), (prov, modes));
        assert!(aligned_from_members(&s, vec![vec![12]]).is_err());
    }

    proptest! {
        #[test]
        fn decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256), magic in 0usize..7) {
            let tags: [&[u8; 4]; 7] = [b"STMF", b"UMM1", b"PCA1", b"XLT1", b"EMB1", b"SVM1", b"ALN1"];
            let mut data = tags[magic].to_vec();
            data.extend_from_slice(&bytes);
            let _ = decode_stmf(&data);
            let _ = decode_umm(&data);
            let _ = decode_pca(&data);
            let _ = decode_xlt(&data);
            let _ = decode_emb(&data);
            let _ = decode_svm(&data);
            let _ = decode_aln(&data);
        }
    }
}
