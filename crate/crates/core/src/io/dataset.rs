//! Manifests, frame directories and feature directories.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ExtendedColorType, ImageFormat};

use crate::error::{Error, Result};
use crate::io::{decode_stmf, encode_stmf, stm_from_rows};
use crate::stfeat::{FrameSequence, GrayFrame, GridCounts, StmFeatureSet, VideoMeta};

pub const MANIFEST_HEADER: [&str; 4] = ["video_id", "subject_id", "label", "path"];
pub const FEATURE_INDEX: &str = "index.csv";
const FEATURE_HEADER: [&str; 7] = ["video_id", "subject_id", "label", "file", "count_x", "count_y", "count_t"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub meta: VideoMeta,
    pub path: PathBuf,
}

fn check_header(kind: &'static str, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.iter().map(str::trim).eq(want.iter().copied()) {
        Ok(())
    } else {
        Err(Error::format(kind, format!("header must be `{}`", want.join(","))))
    }
}

fn field<T: std::str::FromStr>(kind: &'static str, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).map(str::trim).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::format(kind, format!("bad {name} `{raw}` on line {}", rec.position().map_or(0, |p| p.line()))))
}

fn nonempty(kind: &'static str, rec: &csv::StringRecord, i: usize, name: &str) -> Result<String> {
    let v: String = field(kind, rec, i, name)?;
    if v.is_empty() {
        return Err(Error::format(kind, format!("empty {name}")));
    }
    Ok(v)
}

/// Parse manifest CSV text; relative paths are resolved against `base`.
pub fn parse_manifest(text: &[u8], base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
    check_header("manifest", rdr.headers()?, &MANIFEST_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let video_id = nonempty("manifest", &rec, 0, "video_id")?;
        if !seen.insert(video_id.clone()) {
            return Err(Error::format("manifest", format!("duplicate video_id `{video_id}`")));
        }
        let path: String = nonempty("manifest", &rec, 3, "path")?;
        out.push(ManifestEntry {
            meta: VideoMeta {
                video_id,
                subject_id: nonempty("manifest", &rec, 1, "subject_id")?,
                label: field("manifest", &rec, 2, "label")?,
            },
            path: base.join(path),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Write a manifest; paths are written as given.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for e in entries {
        w.write_record([
            e.meta.video_id.as_str(),
            e.meta.subject_id.as_str(),
            &e.meta.label.to_string(),
            &e.path.to_string_lossy(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Decode a PGM or PNG image to gray values in [0, 1].
pub fn decode_frame(bytes: &[u8]) -> Result<GrayFrame> {
    let img = image::load_from_memory(bytes)?.to_luma8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|p| f64::from(p) / 255.0).collect();
    GrayFrame::new(w as usize, h as usize, pixels)
}

fn is_frame_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png"))
}

/// Frames of a directory in file-name order.
pub fn load_frames(dir: &Path) -> Result<Vec<GrayFrame>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| is_frame_file(p));
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidSequence(format!("no PGM/PNG frames in {}", dir.display())));
    }
    files.iter().map(|f| decode_frame(&fs::read(f)?)).collect()
}

pub fn load_sequence(entry: &ManifestEntry) -> Result<FrameSequence> {
    FrameSequence::new(entry.meta.clone(), load_frames(&entry.path)?)
}

/// Write a frame as binary PGM, rounding to 8 bits.
pub fn write_frame_pgm(path: &Path, frame: &GrayFrame) -> Result<()> {
    let bytes: Vec<u8> = frame.pixels.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        frame.width as u32,
        frame.height as u32,
        ExtendedColorType::L8,
        ImageFormat::Pnm,
    )?;
    Ok(())
}

/// Write one `.stmf` file per clip plus `index.csv`.
pub fn write_feature_dir(dir: &Path, stms: &[StmFeatureSet]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(FEATURE_INDEX))?;
    w.write_record(FEATURE_HEADER)?;
    for s in stms {
        let file = format!("{}.stmf", s.meta.video_id);
        fs::write(dir.join(&file), encode_stmf(s))?;
        w.write_record([
            s.meta.video_id.clone(),
            s.meta.subject_id.clone(),
            s.meta.label.to_string(),
            file,
            s.counts.x.to_string(),
            s.counts.y.to_string(),
            s.counts.t.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureIndexEntry {
    pub meta: VideoMeta,
    pub counts: GridCounts,
    pub file: PathBuf,
}

pub fn parse_feature_index(text: &[u8], base: &Path) -> Result<Vec<FeatureIndexEntry>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
    check_header("feature index", rdr.headers()?, &FEATURE_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let counts = GridCounts {
            x: field("feature index", &rec, 4, "count_x")?,
            y: field("feature index", &rec, 5, "count_y")?,
            t: field("feature index", &rec, 6, "count_t")?,
        };
        if counts.x == 0 || counts.y == 0 || counts.t == 0 {
            return Err(Error::format("feature index", "zero grid count"));
        }
        let file: String = nonempty("feature index", &rec, 3, "file")?;
        out.push(FeatureIndexEntry {
            meta: VideoMeta {
                video_id: nonempty("feature index", &rec, 0, "video_id")?,
                subject_id: nonempty("feature index", &rec, 1, "subject_id")?,
                label: field("feature index", &rec, 2, "label")?,
            },
            counts,
            file: base.join(file),
        });
    }
    Ok(out)
}

pub fn read_feature_index(dir: &Path) -> Result<Vec<FeatureIndexEntry>> {
    parse_feature_index(&fs::read(dir.join(FEATURE_INDEX))?, dir)
}

pub fn load_features(entry: &FeatureIndexEntry) -> Result<StmFeatureSet> {
    let (_, rows) = decode_stmf(&fs::read(&entry.file)?)?;
    stm_from_rows(entry.meta.clone(), entry.counts, rows)
}

pub fn read_feature_dir(dir: &Path) -> Result<Vec<StmFeatureSet>> {
    read_feature_index(dir)?.iter().map(load_features).collect()
}
