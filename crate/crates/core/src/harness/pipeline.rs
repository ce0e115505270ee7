//! Cross-validated end-to-end runs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::classify::SvmConfig;
use crate::error::{Error, Result};
use crate::explet::{EncodeOptions, VecMode};
use crate::harness::folds::{make_folds, CvProtocol, Fold};
use crate::harness::metrics::{report_from, EvalReport, Prediction};
use crate::harness::stages::*;
use crate::io::config::ConfigMap;
use crate::stfeat::{extract_raw, DescriptorKind, ExtractConfig, FrameSequence, RawStm, StmFeatureSet};
use crate::umm::{Alignment, CovKind, EmConfig, UmmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// PCA-reduced expressionlets concatenated over modes.
    Explet,
    /// Expressionlets passed through the learned discriminant projection.
    DisExplet,
    /// Fisher Vector of the block features under the UMM.
    Fv,
    /// Fixed spatio-temporal blocks in place of UMM modes, then the
    /// discriminant projection.
    Rigid,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Explet => "explet",
            Variant::DisExplet => "dis-explet",
            Variant::Fv => "fv",
            Variant::Rigid => "rigid",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explet" => Ok(Variant::Explet),
            "dis-explet" => Ok(Variant::DisExplet),
            "fv" => Ok(Variant::Fv),
            "rigid" => Ok(Variant::Rigid),
            other => Err(Error::Config(format!("unknown variant `{other}` (explet|dis-explet|fv|rigid)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UmmScope {
    /// Fit the mixture on the training clips of each fold.
    Train,
    /// Fit one mixture per fold on every clip, test clips included.
    All,
}

impl std::str::FromStr for UmmScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(UmmScope::Train),
            "all" => Ok(UmmScope::All),
            other => Err(Error::Config(format!("unknown umm scope `{other}` (train|all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub extract: ExtractConfig,
    pub pca_dim: usize,
    pub ks: Vec<usize>,
    pub t: usize,
    pub em: EmConfig,
    pub umm_scope: UmmScope,
    /// Alignment of the explet and dis-explet variants.
    pub align: Alignment,
    pub encode: EncodeOptions,
    pub energy: f64,
    pub embed_dim: usize,
    pub fv_with_loc: bool,
    pub svm: SvmConfig,
    pub protocol: CvProtocol,
    pub variants: Vec<Variant>,
    pub parallel_folds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            extract: ExtractConfig::default(),
            pca_dim: 64,
            ks: vec![64],
            t: 64,
            em: EmConfig::default(),
            umm_scope: UmmScope::Train,
            align: Alignment::Soft,
            encode: EncodeOptions::default(),
            energy: 0.99,
            embed_dim: 256,
            fv_with_loc: false,
            svm: SvmConfig::default(),
            protocol: CvProtocol::LeaveOneSubjectOut,
            variants: vec![Variant::DisExplet],
            parallel_folds: 1,
        }
    }
}

/// Keys understood by [`PipelineConfig::from_map`]; `manifest` is read by the
/// command-line front end.
pub const CONFIG_KEYS: &[&str] = &[
    "manifest",
    "desc",
    "patch",
    "stride-frac",
    "pca-dim",
    "K",
    "T",
    "cov",
    "seed",
    "em-max-iters",
    "em-max-rows",
    "em-init-sample",
    "umm-scope",
    "align",
    "cov-with-loc",
    "vec",
    "energy",
    "dim",
    "fv-with-loc",
    "C",
    "no-norm",
    "shuffle-seed",
    "protocol",
    "variant",
    "parallel-folds",
];

impl PipelineConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !CONFIG_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown config key `{k}`")));
        }
        let mut c = PipelineConfig::default();
        if let Some(v) = map.parsed::<DescriptorKind>("desc")? {
            c.extract.descriptor = v;
        }
        if let Some(v) = map.parsed("patch")? {
            c.extract.patch = v;
        }
        if let Some(v) = map.parsed("stride-frac")? {
            c.extract.stride_frac = v;
        }
        if let Some(v) = map.parsed("pca-dim")? {
            c.pca_dim = v;
        }
        if let Some(v) = map.list("K")? {
            c.ks = v;
        }
        if let Some(v) = map.parsed("T")? {
            c.t = v;
        }
        if let Some(v) = map.parsed::<CovKind>("cov")? {
            c.em.cov = v;
        }
        if let Some(v) = map.parsed("seed")? {
            c.em.seed = v;
        }
        if let Some(v) = map.parsed("em-max-iters")? {
            c.em.max_iters = v;
        }
        if let Some(v) = map.parsed("em-max-rows")? {
            c.em.max_rows = Some(v);
        }
        if let Some(v) = map.parsed("em-init-sample")? {
            c.em.init_sample = v;
        }
        if let Some(v) = map.parsed("umm-scope")? {
            c.umm_scope = v;
        }
        if let Some(v) = map.parsed::<Alignment>("align")? {
            if v == Alignment::Rigid {
                return Err(Error::Config("align must be soft or hard; use the rigid variant for blocking".into()));
            }
            c.align = v;
        }
        c.encode.use_loc = map.flag("cov-with-loc")?;
        if let Some(v) = map.parsed::<VecMode>("vec")? {
            c.encode.vec_mode = v;
        }
        if let Some(v) = map.parsed("energy")? {
            c.energy = v;
        }
        if let Some(v) = map.parsed("dim")? {
            c.embed_dim = v;
        }
        c.fv_with_loc = map.flag("fv-with-loc")?;
        if let Some(v) = map.parsed("C")? {
            c.svm.c = v;
        }
        c.svm.normalize = !map.flag("no-norm")?;
        if let Some(v) = map.parsed("shuffle-seed")? {
            c.svm.shuffle_seed = Some(v);
        }
        if let Some(v) = map.parsed("protocol")? {
            c.protocol = v;
        }
        if let Some(v) = map.list("variant")? {
            c.variants = v;
        }
        if let Some(v) = map.parsed("parallel-folds")? {
            c.parallel_folds = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("K must list positive values".into());
        }
        if self.variants.is_empty() {
            return bad("no variants selected".into());
        }
        if self.pca_dim == 0 || self.embed_dim == 0 {
            return bad("pca-dim and dim must be positive".into());
        }
        if !(self.energy > 0.0 && self.energy <= 1.0) {
            return bad(format!("energy {} outside (0, 1]", self.energy));
        }
        if !(self.extract.stride_frac > 0.0) {
            return bad("stride-frac must be positive".into());
        }
        if self.parallel_folds == 0 {
            return bad("parallel-folds must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical key = value form, recorded in the report summary.
    pub fn render(&self) -> String {
        let mut m = ConfigMap::default();
        m.set("desc", self.extract.descriptor.to_string());
        m.set("patch", self.extract.patch.to_string());
        m.set("stride-frac", self.extract.stride_frac.to_string());
        m.set("pca-dim", self.pca_dim.to_string());
        m.set("K", self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
        m.set("T", self.t.to_string());
        m.set("cov", self.em.cov.to_string());
        m.set("seed", self.em.seed.to_string());
        m.set("em-max-iters", self.em.max_iters.to_string());
        if let Some(r) = self.em.max_rows {
            m.set("em-max-rows", r.to_string());
        }
        m.set("em-init-sample", self.em.init_sample.to_string());
        m.set(
            "umm-scope",
            match self.umm_scope {
                UmmScope::Train => "train",
                UmmScope::All => "all",
            },
        );
        m.set(
            "align",
            match self.align {
                Alignment::Soft => "soft",
                Alignment::Hard => "hard",
                Alignment::Rigid => "rigid",
            },
        );
        m.set("cov-with-loc", self.encode.use_loc.to_string());
        m.set("vec", self.encode.vec_mode.to_string());
        m.set("energy", self.energy.to_string());
        m.set("dim", self.embed_dim.to_string());
        m.set("fv-with-loc", self.fv_with_loc.to_string());
        m.set("C", self.svm.c.to_string());
        m.set("no-norm", (!self.svm.normalize).to_string());
        if let Some(s) = self.svm.shuffle_seed {
            m.set("shuffle-seed", s.to_string());
        }
        m.set("protocol", self.protocol.to_string());
        m.set("variant", self.variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(","));
        m.render()
    }

    fn needs_umm(&self) -> bool {
        self.variants.iter().any(|v| *v != Variant::Rigid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantReport {
    pub variant: Variant,
    pub k: usize,
    /// Per fold: reduced expressionlet dim and embedding dim actually used.
    pub dims: Vec<(usize, usize)>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: String,
    pub folds: usize,
    pub clips: usize,
    pub results: Vec<VariantReport>,
}

impl RunReport {
    pub fn get(&self, variant: Variant, k: usize) -> Option<&VariantReport> {
        self.results.iter().find(|r| r.variant == variant && r.k == k)
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("{\n");
        let _ = writeln!(s, "  \"folds\": {},", self.folds);
        let _ = writeln!(s, "  \"clips\": {},", self.clips);
        s.push_str("  \"results\": [\n");
        for (i, r) in self.results.iter().enumerate() {
            let sep = if i + 1 == self.results.len() { "" } else { "," };
            let _ = writeln!(
                s,
                "    {{\"variant\": \"{}\", \"K\": {}, \"acc\": {:.4}, \"macc\": {:.4}}}{sep}",
                r.variant.name(),
                r.k,
                r.report.acc,
                r.report.macc
            );
        }
        s.push_str("  ]\n}\n");
        s
    }

    pub fn accuracy_vs_k_csv(&self) -> String {
        let mut s = String::from("variant,K,acc,macc\n");
        for r in &self.results {
            let _ = writeln!(s, "{},{},{:.4},{:.4}", r.variant.name(), r.k, r.report.acc, r.report.macc);
        }
        s
    }

    /// `summary.txt`, `config.txt`, `accuracy_vs_k.csv`, and per variant and K
    /// a directory holding `confusion.csv` and `predictions.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        fs::write(dir.join("config.txt"), &self.config)?;
        fs::write(dir.join("accuracy_vs_k.csv"), self.accuracy_vs_k_csv())?;
        for r in &self.results {
            let sub = dir.join(format!("{}-k{}", r.variant.name(), r.k));
            fs::create_dir_all(&sub)?;
            fs::write(sub.join("confusion.csv"), r.report.confusion_csv())?;
            fs::write(sub.join("predictions.csv"), r.report.predictions_csv())?;
        }
        Ok(())
    }
}

type FoldOutput = Vec<(Variant, usize, (usize, usize), Vec<Prediction>)>;

/// Extract raw descriptors for every clip.
pub fn extract_all(seqs: &[FrameSequence], config: &ExtractConfig) -> Result<Vec<RawStm>> {
    seqs.iter().map(|s| extract_raw(s, config)).collect()
}

pub fn run_pipeline(config: &PipelineConfig, seqs: &[FrameSequence]) -> Result<RunReport> {
    config.validate()?;
    let raws = extract_all(seqs, &config.extract)?;
    run_on_raw(config, &raws)
}

/// Cross-validated run on pre-extracted descriptors.
pub fn run_on_raw(config: &PipelineConfig, raws: &[RawStm]) -> Result<RunReport> {
    config.validate()?;
    let metas: Vec<_> = raws.iter().map(|r| r.meta.clone()).collect();
    let folds = make_folds(&metas, config.protocol)?;
    let outputs: Vec<FoldOutput> = if config.parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallel_folds)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| {
            folds
                .par_iter()
                .enumerate()
                .map(|(i, f)| run_fold(config, raws, i, f))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        folds
            .iter()
            .enumerate()
            .map(|(i, f)| run_fold(config, raws, i, f))
            .collect::<Result<Vec<_>>>()?
    };

    let mut results = Vec::new();
    for &k in &config.ks {
        for &variant in &config.variants {
            let mut preds = Vec::new();
            let mut dims = Vec::new();
            for out in &outputs {
                for (v, kk, d, p) in out {
                    if *v == variant && *kk == k {
                        dims.push(*d);
                        preds.extend(p.iter().cloned());
                    }
                }
            }
            results.push(VariantReport {
                variant,
                k,
                dims,
                report: report_from(preds),
            });
        }
    }
    Ok(RunReport {
        config: config.render(),
        folds: folds.len(),
        clips: raws.len(),
        results,
    })
}

fn run_fold(config: &PipelineConfig, raws: &[RawStm], fold_index: usize, fold: &Fold) -> Result<FoldOutput> {
    let train_set: HashSet<&str> = fold.train.iter().map(|&i| raws[i].meta.video_id.as_str()).collect();
    if let Some(&leak) = fold.test.iter().find(|&&i| train_set.contains(raws[i].meta.video_id.as_str())) {
        return Err(Error::Provenance(format!(
            "clip `{}` is in both train and test",
            raws[leak].meta.video_id
        )));
    }
    let train_prov = ids_of(fold.train.iter().map(|&i| raws[i].meta.video_id.as_str()));
    log::info!("fold {fold_index}: {} train / {} test clips", fold.train.len(), fold.test.len());

    let train_raw: Vec<&RawStm> = fold.train.iter().map(|&i| &raws[i]).collect();
    let desc_pca = fit_descriptor_pca(&train_raw, config.pca_dim)?;
    let stms: Vec<StmFeatureSet> = raws
        .par_iter()
        .map(|r| project_features(r, &desc_pca))
        .collect::<Result<_>>()?;
    let train_stms: Vec<&StmFeatureSet> = fold.train.iter().map(|&i| &stms[i]).collect();
    let all_stms: Vec<&StmFeatureSet> = stms.iter().collect();
    let labels: Vec<usize> = fold.train.iter().map(|&i| raws[i].meta.label).collect();

    let mut out = Vec::new();
    for &k in &config.ks {
        let umm = if config.needs_umm() {
            let em = EmConfig { k, ..config.em.clone() };
            let (source, expected) = match config.umm_scope {
                UmmScope::Train => (train_stms.clone(), train_prov),
                UmmScope::All => (all_stms.clone(), ids_of(raws.iter().map(|r| r.meta.video_id.as_str()))),
            };
            let umm = fit_umm(&source, &em)?;
            check_provenance("UMM", &umm.provenance, &expected)?;
            Some(umm)
        } else {
            None
        };

        for &variant in &config.variants {
            let (dims, vectors) = encode_variant(config, variant, k, umm.as_ref(), &all_stms, fold, &labels, train_prov)?;
            let xs: Vec<Vec<f64>> = fold.train.iter().map(|&i| vectors[i].clone()).collect();
            let svm = fit_svm(&xs, &labels, &config.svm, train_prov)?;
            check_provenance("SVM", &svm.provenance, &train_prov)?;
            let preds = fold
                .test
                .iter()
                .map(|&i| {
                    Ok(Prediction {
                        fold: fold_index,
                        video_id: raws[i].meta.video_id.clone(),
                        truth: raws[i].meta.label,
                        predicted: svm.predict(&vectors[i])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.push((variant, k, dims, preds));
        }
    }
    Ok(out)
}

/// Final clip vectors of one variant, plus (reduced dim, embedding dim).
#[allow(clippy::too_many_arguments)]
fn encode_variant(
    config: &PipelineConfig,
    variant: Variant,
    k: usize,
    umm: Option<&UmmModel>,
    stms: &[&StmFeatureSet],
    fold: &Fold,
    labels: &[usize],
    train_prov: crate::provenance::Provenance,
) -> Result<((usize, usize), Vec<Vec<f64>>)> {
    if variant == Variant::Fv {
        let umm = umm.expect("mixture fitted for the fv variant");
        return Ok(((0, 0), fv_all(stms, umm, config.fv_with_loc)?));
    }
    let how = if variant == Variant::Rigid { Alignment::Rigid } else { config.align };
    let aligned = align_all(stms, umm, how, k, config.t)?;
    let sets = encode_all(stms, &aligned, config.encode)?;
    let train_sets: Vec<_> = fold.train.iter().map(|&i| &sets[i]).collect();
    let xpca = fit_explet_pca(&train_sets, config.energy)?;
    let r = xpca.output_dim();
    let blocks = reduce_all(&sets, &xpca)?;
    if variant == Variant::Explet {
        return Ok(((r, 0), blocks));
    }
    let l = config.embed_dim.min(r);
    if l < config.embed_dim {
        log::warn!("embedding dim {} exceeds reduced dim {r}; using {l}", config.embed_dim);
    }
    let train_blocks: Vec<&[f64]> = fold.train.iter().map(|&i| blocks[i].as_slice()).collect();
    let emb = fit_embedding(&train_blocks, labels, k, xpca, l, train_prov)?;
    check_provenance("embedding", &emb.provenance, &train_prov)?;
    let vectors = blocks.iter().map(|b| embed_block(b, k, &emb)).collect::<Result<Vec<_>>>()?;
    Ok(((r, l), vectors))
}
