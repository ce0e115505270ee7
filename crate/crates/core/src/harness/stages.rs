//! Pipeline stages shared by the in-process runner and the command-line
//! tools. Every stage that produces a stored artifact rounds its output the
//! same way the file format does, so both routes see identical numbers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::classify::{train_svm, LinearSvmModel, SvmConfig};
use crate::embed::{concat_video, train_embedding, EmbeddingModel};
use crate::error::{Error, Result};
use crate::explet::{encode_stm, reduce_explets, reduced_vectors, EncodeOptions, ExpletSet};
use crate::fv::encode_fv;
use crate::io::{quantize, quantize_stm};
use crate::provenance::Provenance;
use crate::stfeat::{fit_pca_from_moments, PcaModel, PcaTarget, RawStm, StmFeatureSet};
use crate::umm::{align, train_umm, AlignedStm, Alignment, EmConfig, UmmModel};

/// Fail unless a fitted model records exactly the expected training set.
pub fn check_provenance(stage: &str, got: &Provenance, expected: &Provenance) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Provenance(format!(
            "{stage} was fit on {} but the training set is {}",
            got.hex(),
            expected.hex()
        )))
    }
}

pub fn ids_of<'a>(metas: impl IntoIterator<Item = &'a str>) -> Provenance {
    let ids: Vec<&str> = metas.into_iter().collect();
    Provenance::of_ids(&ids)
}

/// Descriptor PCA from moments accumulated clip by clip.
pub fn fit_descriptor_pca(train: &[&RawStm], dim: usize) -> Result<PcaModel> {
    let d = train
        .first()
        .map(|r| r.descriptors.ncols())
        .ok_or(Error::TooFewSamples { needed: 2, got: 0 })?;
    let mut n = 0;
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    for r in train {
        n += r.descriptors.nrows();
        for row in r.descriptors.row_iter() {
            sum += row.transpose();
        }
        outer += r.descriptors.tr_mul(&r.descriptors);
    }
    fit_pca_from_moments(n, &sum, &outer, PcaTarget::Dim(dim))
}

pub fn project_features(raw: &RawStm, pca: &PcaModel) -> Result<StmFeatureSet> {
    let mut stm = raw.to_features(Some(pca))?;
    quantize_stm(&mut stm);
    Ok(stm)
}

pub fn fit_umm(train: &[&StmFeatureSet], config: &EmConfig) -> Result<UmmModel> {
    let (model, trace) = train_umm(train, config)?;
    log::debug!(
        "UMM K={} trained in {} iterations (converged: {})",
        config.k,
        trace.log_likelihoods.len(),
        trace.converged
    );
    Ok(model)
}

pub fn align_all(
    stms: &[&StmFeatureSet],
    umm: Option<&UmmModel>,
    how: Alignment,
    k: usize,
    t: usize,
) -> Result<Vec<AlignedStm>> {
    stms.par_iter().map(|s| align(s, umm, how, k, t)).collect()
}

pub fn encode_all(stms: &[&StmFeatureSet], aligned: &[AlignedStm], opts: EncodeOptions) -> Result<Vec<ExpletSet>> {
    stms.iter().zip(aligned).map(|(s, a)| encode_stm(s, a, opts)).collect()
}

pub fn fit_explet_pca(train: &[&ExpletSet], energy: f64) -> Result<PcaModel> {
    reduce_explets(train, energy)
}

/// `K × r` reduced blocks, row-major and rounded to f32.
pub fn reduce_all(sets: &[ExpletSet], pca: &PcaModel) -> Result<Vec<Vec<f64>>> {
    sets.par_iter()
        .map(|s| {
            let m = reduced_vectors(s, pca)?;
            let mut v: Vec<f64> = m.transpose().iter().copied().collect();
            quantize(&mut v);
            Ok(v)
        })
        .collect()
}

pub fn fit_embedding(
    train_blocks: &[&[f64]],
    labels: &[usize],
    k: usize,
    pca: PcaModel,
    l: usize,
    provenance: Provenance,
) -> Result<EmbeddingModel> {
    let r = pca.output_dim();
    let mats: Vec<DMatrix<f64>> = train_blocks.iter().map(|b| DMatrix::from_row_slice(k, r, b)).collect();
    let refs: Vec<&DMatrix<f64>> = mats.iter().collect();
    train_embedding(&refs, labels, pca, l, provenance)
}

/// Embed every mode of a reduced block and concatenate; rounded to f32.
pub fn embed_block(block: &[f64], k: usize, model: &EmbeddingModel) -> Result<Vec<f64>> {
    let r = model.v.nrows();
    if block.len() != k * r {
        return Err(Error::DimMismatch {
            expected: k * r,
            got: block.len(),
        });
    }
    let modes = block.chunks_exact(r).map(|z| model.embed_reduced(z)).collect::<Result<Vec<_>>>()?;
    let mut v = concat_video(&modes, k, model.output_dim())?;
    quantize(&mut v);
    Ok(v)
}

pub fn fv_all(stms: &[&StmFeatureSet], umm: &UmmModel, with_loc: bool) -> Result<Vec<Vec<f64>>> {
    stms.par_iter()
        .map(|s| {
            let mut v = encode_fv(s, umm, with_loc)?;
            quantize(&mut v);
            Ok(v)
        })
        .collect()
}

pub fn fit_svm(xs: &[Vec<f64>], ys: &[usize], config: &SvmConfig, provenance: Provenance) -> Result<LinearSvmModel> {
    let (model, traces) = train_svm(xs, ys, config, provenance)?;
    for (c, t) in model.classes.iter().zip(&traces) {
        if !t.converged {
            log::warn!("SVM class {c} stopped after {} epochs without reaching the gap", t.dual.len());
        }
    }
    Ok(model)
}
