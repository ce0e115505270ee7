use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use explet_core::classify::SvmConfig;
use explet_core::explet::EncodeOptions;
use explet_core::harness::stages::*;
use explet_core::harness::{self, make_folds, PipelineConfig, SyntheticSpec};
use explet_core::io::config::ConfigMap;
use explet_core::io::dataset::{
    load_sequence, read_feature_dir, read_manifest, write_feature_dir, write_manifest,
    ManifestEntry,
};
use explet_core::io::*;
use explet_core::provenance::Provenance;
use explet_core::stfeat::{extract_raw, ExtractConfig, RawStm, StmFeatureSet};
use explet_core::umm::{Alignment, EmConfig};
use explet_core::{Error, Result};

use crate::*;

const VECTORS: &str = "vectors.xlt";
const PCA_FILE: &str = "pca.bin";
const FEATURES_LINK: &str = "features.txt";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Ids of a manifest, in manifest order.
fn manifest_ids(path: &Path) -> Result<Vec<String>> {
    Ok(read_manifest(path)?.into_iter().map(|e| e.meta.video_id).collect())
}

/// Positions of the training clips among `ids`, in the order of `ids`.
fn training_subset(ids: &[&str], train: Option<&Path>) -> Result<Vec<usize>> {
    let Some(path) = train else {
        return Ok((0..ids.len()).collect());
    };
    let wanted: HashSet<String> = manifest_ids(path)?.into_iter().collect();
    let known: HashSet<&str> = ids.iter().copied().collect();
    if let Some(missing) = wanted.iter().find(|w| !known.contains(w.as_str())) {
        return Err(Error::Config(format!("training clip `{missing}` is not in the input")));
    }
    Ok((0..ids.len()).filter(|&i| wanted.contains(ids[i])).collect())
}

fn write_archive(dir: &Path, archive: &VectorArchive) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(VECTORS), encode_xlt(archive))?;
    Ok(())
}

fn read_archive(dir: &Path) -> Result<VectorArchive> {
    decode_xlt(&read_bytes(&dir.join(VECTORS))?)
}

/// Training vectors and labels, in the order of the labels manifest.
fn labelled<'a>(archive: &'a VectorArchive, labels: &Path) -> Result<(Vec<String>, Vec<&'a [f64]>, Vec<usize>)> {
    let entries = read_manifest(labels)?;
    let mut ids = Vec::with_capacity(entries.len());
    let mut xs = Vec::with_capacity(entries.len());
    let mut ys = Vec::with_capacity(entries.len());
    for e in &entries {
        let item = archive
            .get(&e.meta.video_id)
            .ok_or_else(|| Error::Config(format!("no vector for labelled clip `{}`", e.meta.video_id)))?;
        ids.push(e.meta.video_id.clone());
        xs.push(item.values.as_slice());
        ys.push(e.meta.label);
    }
    Ok((ids, xs, ys))
}

fn write_file(out: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, bytes)?;
    Ok(())
}

pub fn extract(a: &ExtractArgs) -> Result<()> {
    let config = ExtractConfig {
        descriptor: a.desc,
        patch: a.patch,
        stride_frac: a.stride_frac,
    };
    if !(config.stride_frac > 0.0) || a.pca_dim == 0 {
        return Err(Error::Config("stride-frac and pca-dim must be positive".into()));
    }
    let entries = read_manifest(&a.manifest)?;
    let raws: Vec<RawStm> = entries
        .iter()
        .map(|e| extract_raw(&load_sequence(e)?, &config))
        .collect::<Result<_>>()?;
    let ids: Vec<&str> = raws.iter().map(|r| r.meta.video_id.as_str()).collect();
    let (pca, prov) = match &a.pca {
        Some(p) => decode_pca(&read_bytes(p)?)?,
        None => {
            let train = training_subset(&ids, a.train.as_deref())?;
            let train_raw: Vec<&RawStm> = train.iter().map(|&i| &raws[i]).collect();
            let prov = ids_of(train.iter().map(|&i| ids[i]));
            (fit_descriptor_pca(&train_raw, a.pca_dim)?, prov)
        }
    };
    let stms: Vec<StmFeatureSet> = raws.iter().map(|r| project_features(r, &pca)).collect::<Result<_>>()?;
    write_feature_dir(&a.out, &stms)?;
    fs::write(a.out.join(PCA_FILE), encode_pca(&pca, &prov))?;
    log::info!("extracted {} clips into {}", stms.len(), a.out.display());
    Ok(())
}

pub fn train_umm(a: &TrainUmmArgs) -> Result<()> {
    let stms = read_feature_dir(&a.features)?;
    let ids: Vec<&str> = stms.iter().map(|s| s.meta.video_id.as_str()).collect();
    let train = training_subset(&ids, a.train.as_deref())?;
    let train_stms: Vec<&StmFeatureSet> = train.iter().map(|&i| &stms[i]).collect();
    let config = EmConfig {
        k: a.k,
        cov: a.cov,
        seed: a.seed,
        max_iters: a.em_max_iters,
        max_rows: a.em_max_rows,
        init_sample: a.em_init_sample,
        ..EmConfig::default()
    };
    let umm = fit_umm(&train_stms, &config)?;
    write_file(&a.out, &encode_umm(&umm))
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let stms = read_feature_dir(&a.features)?;
    let umm = match &a.umm {
        Some(p) => Some(decode_umm(&read_bytes(p)?)?),
        None if a.mode == Alignment::Rigid => None,
        None => return Err(Error::Config(format!("--umm is required for {:?} fitting", a.mode))),
    };
    let k = match (&umm, a.k) {
        (Some(m), Some(k)) if k != m.k() => {
            return Err(Error::Config(format!("--K {k} disagrees with the mixture's {} components", m.k())))
        }
        (Some(m), _) if a.mode != Alignment::Rigid => m.k(),
        (_, Some(k)) => k,
        (_, None) => return Err(Error::Config("--K is required for rigid blocking".into())),
    };
    let umm = umm.filter(|_| a.mode != Alignment::Rigid);
    let refs: Vec<&StmFeatureSet> = stms.iter().collect();
    let aligned = align_all(&refs, umm.as_ref(), a.mode, k, a.t)?;
    let prov = umm.as_ref().map_or_else(Provenance::unknown, |m| m.provenance);
    fs::create_dir_all(&a.out)?;
    for al in &aligned {
        fs::write(a.out.join(format!("{}.aln", al.meta.video_id)), encode_aln(al, &prov))?;
    }
    let features = fs::canonicalize(&a.features)?;
    fs::write(a.out.join(FEATURES_LINK), format!("{}\n", features.display()))?;
    Ok(())
}

pub fn encode(a: &EncodeArgs) -> Result<()> {
    let features = match &a.features {
        Some(f) => f.clone(),
        None => PathBuf::from(fs::read_to_string(a.aligned.join(FEATURES_LINK))?.trim_end()),
    };
    let stms = read_feature_dir(&features)?;
    let umm_prov = match &a.umm {
        Some(p) => Some(decode_umm(&read_bytes(p)?)?.provenance),
        None => None,
    };
    let aligned = stms
        .iter()
        .map(|s| {
            let (prov, modes) = decode_aln(&read_bytes(&a.aligned.join(format!("{}.aln", s.meta.video_id)))?)?;
            if let Some(expected) = &umm_prov {
                check_provenance("alignment", &prov, expected)?;
            }
            aligned_from_members(s, modes)
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = EncodeOptions {
        use_loc: a.cov_with_loc,
        vec_mode: a.vec_mode,
    };
    let refs: Vec<&StmFeatureSet> = stms.iter().collect();
    let sets = encode_all(&refs, &aligned, opts)?;
    let ids: Vec<&str> = stms.iter().map(|s| s.meta.video_id.as_str()).collect();
    let (pca, prov) = match &a.pca {
        Some(p) => decode_pca(&read_bytes(p)?)?,
        None => {
            let train = training_subset(&ids, a.train.as_deref())?;
            let train_sets: Vec<_> = train.iter().map(|&i| &sets[i]).collect();
            (fit_explet_pca(&train_sets, a.energy)?, ids_of(train.iter().map(|&i| ids[i])))
        }
    };
    let k = aligned.first().map_or(0, |al| al.modes.len());
    let blocks = reduce_all(&sets, &pca)?;
    let mut archive = VectorArchive::new(k, pca.output_dim());
    for (id, block) in ids.iter().zip(blocks) {
        archive.push(id, block)?;
    }
    write_archive(&a.out, &archive)?;
    fs::write(a.out.join(PCA_FILE), encode_pca(&pca, &prov))?;
    Ok(())
}

pub fn encode_fv(a: &EncodeFvArgs) -> Result<()> {
    let stms = read_feature_dir(&a.features)?;
    let umm = decode_umm(&read_bytes(&a.umm)?)?;
    let refs: Vec<&StmFeatureSet> = stms.iter().collect();
    let vectors = fv_all(&refs, &umm, a.fv_with_loc)?;
    let dim = vectors.first().map_or(0, Vec::len);
    let mut archive = VectorArchive::new(1, dim);
    for (s, v) in stms.iter().zip(vectors) {
        archive.push(&s.meta.video_id, v)?;
    }
    write_archive(&a.out, &archive)
}

pub fn train_embed(a: &TrainEmbedArgs) -> Result<()> {
    let archive = read_archive(&a.xlt)?;
    let (pca, _) = decode_pca(&read_bytes(&a.xlt.join(PCA_FILE))?)?;
    if pca.output_dim() != archive.dim {
        return Err(Error::DimMismatch {
            expected: pca.output_dim(),
            got: archive.dim,
        });
    }
    let (ids, blocks, labels) = labelled(&archive, &a.labels)?;
    let r = archive.dim;
    let l = a.dim.min(r);
    if l < a.dim {
        log::warn!("embedding dim {} exceeds reduced dim {r}; using {l}", a.dim);
    }
    let emb = fit_embedding(&blocks, &labels, archive.k, pca, l, Provenance::of_ids(&ids))?;
    write_file(&a.out, &encode_emb(&emb))
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let archive = read_archive(&a.xlt)?;
    let emb = decode_emb(&read_bytes(&a.emb)?)?;
    let mut out = VectorArchive::new(archive.k, emb.output_dim());
    for item in &archive.items {
        out.push(&item.id, embed_block(&item.values, archive.k, &emb)?)?;
    }
    write_archive(&a.out, &out)
}

pub fn train_svm(a: &TrainSvmArgs) -> Result<()> {
    let archive = read_archive(&a.vecs)?;
    let (ids, xs, ys) = labelled(&archive, &a.labels)?;
    let config = SvmConfig {
        c: a.c,
        normalize: !a.no_norm,
        shuffle_seed: a.shuffle_seed,
        ..SvmConfig::default()
    };
    let xs: Vec<Vec<f64>> = xs.into_iter().map(<[f64]>::to_vec).collect();
    let svm = fit_svm(&xs, &ys, &config, Provenance::of_ids(&ids))?;
    write_file(&a.out, &encode_svm(&svm))
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let archive = read_archive(&a.vecs)?;
    let svm = decode_svm(&read_bytes(&a.svm)?)?;
    let ids: Vec<String> = match &a.manifest {
        Some(m) => manifest_ids(m)?,
        None => archive.items.iter().map(|i| i.id.clone()).collect(),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&a.out).map_err(Error::from)?;
    w.write_record(["video_id", "predicted"]).map_err(Error::from)?;
    for id in &ids {
        let item = archive
            .get(id)
            .ok_or_else(|| Error::Config(format!("no vector for clip `{id}`")))?;
        let p = svm.predict(&item.values)?;
        w.write_record([id.as_str(), &p.to_string()]).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<(String, usize)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from)?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let p = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad prediction row for `{id}`")))?;
        out.push((id, p));
    }
    Ok(out)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let predicted = read_predictions(&a.predictions)?;
    let truth: Vec<(String, usize)> = read_manifest(&a.labels)?
        .into_iter()
        .map(|e| (e.meta.video_id, e.meta.label))
        .collect();
    let report = harness::evaluate(&predicted, &truth)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("confusion.csv"), report.confusion_csv())?;
    fs::write(a.out.join("predictions.csv"), report.predictions_csv())?;
    let summary = format!("acc = {:.4}\nmacc = {:.4}\n", report.acc, report.macc);
    fs::write(a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let entries = read_manifest(&a.manifest)?;
    let metas: Vec<_> = entries.iter().map(|e| e.meta.clone()).collect();
    let absolute = |&i: &usize| -> Result<ManifestEntry> {
        Ok(ManifestEntry {
            meta: entries[i].meta.clone(),
            path: std::path::absolute(&entries[i].path)?,
        })
    };
    for (n, fold) in make_folds(&metas, a.protocol)?.iter().enumerate() {
        let dir = a.out.join(format!("fold{n}"));
        fs::create_dir_all(&dir)?;
        write_manifest(&dir.join("train.csv"), &fold.train.iter().map(absolute).collect::<Result<Vec<_>>>()?)?;
        write_manifest(&dir.join("test.csv"), &fold.test.iter().map(absolute).collect::<Result<Vec<_>>>()?)?;
    }
    Ok(())
}

fn run_overrides(a: &RunArgs) -> Vec<(&'static str, String)> {
    let values: [(&'static str, &Option<String>); 22] = [
        ("manifest", &a.manifest),
        ("variant", &a.variant),
        ("desc", &a.desc),
        ("patch", &a.patch),
        ("stride-frac", &a.stride_frac),
        ("pca-dim", &a.pca_dim),
        ("K", &a.k),
        ("T", &a.t),
        ("cov", &a.cov),
        ("seed", &a.seed),
        ("em-max-iters", &a.em_max_iters),
        ("em-max-rows", &a.em_max_rows),
        ("em-init-sample", &a.em_init_sample),
        ("umm-scope", &a.umm_scope),
        ("align", &a.align),
        ("vec", &a.vec_mode),
        ("energy", &a.energy),
        ("dim", &a.dim),
        ("C", &a.c),
        ("shuffle-seed", &a.shuffle_seed),
        ("protocol", &a.protocol),
        ("parallel-folds", &a.parallel_folds),
    ];
    let mut out: Vec<(&'static str, String)> = values
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v.clone())))
        .collect();
    for (k, on) in [
        ("cov-with-loc", a.cov_with_loc),
        ("fv-with-loc", a.fv_with_loc),
        ("no-norm", a.no_norm),
    ] {
        if on {
            out.push((k, "true".into()));
        }
    }
    out
}

pub fn run(a: &RunArgs) -> Result<()> {
    let (mut map, config_dir) = match &a.config {
        Some(p) => (
            ConfigMap::parse(&fs::read_to_string(p)?)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ConfigMap::default(), PathBuf::new()),
    };
    let manifest = match (&a.manifest, map.get("manifest")) {
        (Some(m), _) => PathBuf::from(m),
        (None, Some(m)) => config_dir.join(m),
        (None, None) => return Err(Error::Config("no manifest given (--manifest or `manifest` key)".into())),
    };
    for (k, v) in run_overrides(a) {
        map.set(k, v);
    }
    let config = PipelineConfig::from_map(&map)?;
    let entries = read_manifest(&manifest)?;
    let raws: Vec<RawStm> = entries
        .iter()
        .map(|e| extract_raw(&load_sequence(e)?, &config.extract))
        .collect::<Result<_>>()?;
    let report = harness::run_on_raw(&config, &raws)?;
    report.write(&a.out)?;
    print!("{}", report.summary());
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_subjects: a.subjects,
        n_classes: a.classes,
        clips_per: a.clips_per,
        frames: a.frames,
        size: a.size,
        warp: a.warp.unwrap_or(defaults.warp),
        noise: a.noise.unwrap_or(defaults.noise),
        seed: a.seed,
        ..defaults
    };
    let seqs = harness::gen_synthetic(&spec)?;
    let manifest = harness::write_dataset(&a.out, &seqs)?;
    println!("{}", manifest.display());
    Ok(())
}
