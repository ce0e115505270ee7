//! Seeded synthetic expression clips.
//!
//! Every class moves a Gaussian blob through its own face region in its own
//! direction. The motion follows a smooth onset whose start and length are
//! jittered per clip by the warp setting. Each subject adds a static
//! low-frequency texture and an optional face shift; sensor noise is added last.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::dataset::{write_frame_pgm, write_manifest, ManifestEntry};
use crate::stfeat::{FrameSequence, GrayFrame, VideoMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub clips_per: usize,
    pub frames: usize,
    pub size: usize,
    /// 0 gives every clip the same onset; 1 jitters onset start and length widely.
    pub warp: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Peak intensity of the subject texture.
    pub subject_texture: f64,
    /// Largest per-subject face shift in pixels.
    pub subject_shift: f64,
    /// Blob travel distance in pixels.
    pub travel: f64,
    pub blob_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_subjects: 12,
            n_classes: 6,
            clips_per: 5,
            frames: 12,
            size: 96,
            warp: 0.5,
            noise: 0.02,
            subject_texture: 0.08,
            subject_shift: 0.0,
            travel: 14.0,
            blob_sigma: 6.0,
            seed: 7,
        }
    }
}

const BACKGROUND: f64 = 0.35;
const BLOB_PEAK: f64 = 0.4;

struct Subject {
    texture: Vec<f64>,
    shift: (f64, f64),
}

fn subject(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Subject {
    let n = spec.size;
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..2.5),
                rng.random_range(0.5..2.5),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let mut texture = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (u, v) = (x as f64 / n as f64, y as f64 / n as f64);
            let s: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, a)| a * (2.0 * PI * (fx * u + fy * v) + ph).sin())
                .sum();
            texture[y * n + x] = spec.subject_texture * s / norm;
        }
    }
    let shift = (
        rng.random_range(-1.0..=1.0) * spec.subject_shift,
        rng.random_range(-1.0..=1.0) * spec.subject_shift,
    );
    Subject { texture, shift }
}

/// Region center and unit motion direction of a class.
fn class_pattern(spec: &SyntheticSpec, c: usize) -> ((f64, f64), (f64, f64)) {
    let half = spec.size as f64 / 2.0;
    let a = 2.0 * PI * c as f64 / spec.n_classes as f64;
    let r = 0.3 * spec.size as f64;
    let center = (half + r * a.cos(), half + r * a.sin());
    let d = a + PI / 2.0 + if c % 2 == 0 { 0.0 } else { PI / 3.0 };
    (center, (d.cos(), d.sin()))
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn render_clip(
    spec: &SyntheticSpec,
    class: usize,
    subj: &Subject,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GrayFrame>> {
    let n = spec.size;
    let ((cx, cy), (dx, dy)) = class_pattern(spec, class);
    let onset = 0.15 + rng.random_range(-1.0..=1.0) * spec.warp * 0.15;
    let rise = 0.5 * (1.0 + rng.random_range(-1.0..=1.0) * spec.warp * 0.6);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let two_s2 = 2.0 * spec.blob_sigma * spec.blob_sigma;
    (0..spec.frames)
        .map(|t| {
            let s = if spec.frames > 1 { t as f64 / (spec.frames - 1) as f64 } else { 0.0 };
            let p = smoothstep((s - onset) / rise);
            let bx = cx + subj.shift.0 + p * spec.travel * dx;
            let by = cy + subj.shift.1 + p * spec.travel * dy;
            let amp = BLOB_PEAK * (0.25 + 0.75 * p);
            let mut pixels = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    let r2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    let mut v = BACKGROUND + subj.texture[y * n + x] + amp * (-r2 / two_s2).exp();
                    if spec.noise > 0.0 {
                        v += noise.sample(rng);
                    }
                    pixels[y * n + x] = v.clamp(0.0, 1.0);
                }
            }
            GrayFrame::new(n, n, pixels)
        })
        .collect()
}

/// Ids are `s{subject}_c{class}_{clip}`; clips are ordered subject, class, clip.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<FrameSequence>> {
    if spec.n_subjects == 0 || spec.n_classes == 0 || spec.clips_per == 0 || spec.frames == 0 || spec.size < 8 {
        return Err(Error::Config("synthetic spec needs subjects, classes, clips, frames and size ≥ 8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let subjects: Vec<Subject> = (0..spec.n_subjects).map(|_| subject(spec, &mut rng)).collect();
    let mut out = Vec::new();
    for (si, subj) in subjects.iter().enumerate() {
        for c in 0..spec.n_classes {
            for k in 0..spec.clips_per {
                let frames = render_clip(spec, c, subj, &mut rng)?;
                let meta = VideoMeta {
                    video_id: format!("s{si:02}_c{c}_{k}"),
                    subject_id: format!("s{si:02}"),
                    label: c,
                };
                out.push(FrameSequence::new(meta, frames)?);
            }
        }
    }
    Ok(out)
}

/// Write `manifest.csv` and one directory of zero-padded PGM frames per clip.
pub fn write_dataset(dir: &Path, seqs: &[FrameSequence]) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(seqs.len());
    for s in seqs {
        let rel = PathBuf::from("clips").join(&s.meta.video_id);
        let clip_dir = dir.join(&rel);
        fs::create_dir_all(&clip_dir)?;
        for (t, f) in s.frames().iter().enumerate() {
            write_frame_pgm(&clip_dir.join(format!("{t:04}.pgm")), f)?;
        }
        entries.push(ManifestEntry {
            meta: s.meta.clone(),
            path: rel,
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Leave-one-subject-out nearest-centroid accuracy (percent) on time-averaged
/// frames; a floor any sensible encoder should reach.
pub fn mean_frame_centroid_accuracy(seqs: &[FrameSequence]) -> f64 {
    let means: Vec<Vec<f64>> = seqs
        .iter()
        .map(|s| {
            let mut m = vec![0.0; s.width() * s.height()];
            for f in s.frames() {
                for (a, p) in m.iter_mut().zip(&f.pixels) {
                    *a += p / s.len() as f64;
                }
            }
            m
        })
        .collect();
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = seqs.iter().map(|s| s.meta.label).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut correct = 0;
    for (i, s) in seqs.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX);
        for &c in &classes {
            let members: Vec<usize> = (0..seqs.len())
                .filter(|&j| seqs[j].meta.label == c && seqs[j].meta.subject_id != s.meta.subject_id)
                .collect();
            if members.is_empty() {
                continue;
            }
            let dist: f64 = (0..means[i].len())
                .map(|p| {
                    let centroid = members.iter().map(|&j| means[j][p]).sum::<f64>() / members.len() as f64;
                    (means[i][p] - centroid).powi(2)
                })
                .sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        if best.1 == s.meta.label {
            correct += 1;
        }
    }
    100.0 * correct as f64 / seqs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_subjects: 3,
            n_classes: 2,
            clips_per: 2,
            frames: 4,
            size: 32,
            blob_sigma: 3.0,
            travel: 5.0,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn seeded_output_is_reproducible() {
        assert_eq!(gen_synthetic(&small(3)).unwrap(), gen_synthetic(&small(3)).unwrap());
        assert_ne!(gen_synthetic(&small(3)).unwrap(), gen_synthetic(&small(4)).unwrap());
    }

    #[test]
    fn clean_clips_differ_only_by_subject_offset() {
        let spec = SyntheticSpec {
            noise: 0.0,
            warp: 0.0,
            subject_shift: 0.0,
            ..small(5)
        };
        let seqs = gen_synthetic(&spec).unwrap();
        let class0: Vec<&FrameSequence> = seqs.iter().filter(|s| s.meta.label == 0).collect();
        // same subject: identical
        assert_eq!(class0[0].frames(), class0[1].frames());
        // other subject: a constant per-pixel difference in every frame
        let (a, b) = (class0[0], class0[2]);
        let d0: Vec<f64> = a.frames()[0].pixels.iter().zip(&b.frames()[0].pixels).map(|(x, y)| x - y).collect();
        for (fa, fb) in a.frames().iter().zip(b.frames()) {
            for ((x, y), d) in fa.pixels.iter().zip(&fb.pixels).zip(&d0) {
                assert!((x - y - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disjoint_regions_are_centroid_separable() {
        let spec = SyntheticSpec {
            noise: 0.0,
            n_subjects: 4,
            ..small(6)
        };
        let seqs = gen_synthetic(&spec).unwrap();
        assert_eq!(mean_frame_centroid_accuracy(&seqs), 100.0);
    }

    #[test]
    fn dataset_written_to_disk_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = gen_synthetic(&small(8)).unwrap();
        let manifest = write_dataset(dir.path(), &seqs).unwrap();
        let entries = crate::io::dataset::read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), seqs.len());
        let back = crate::io::dataset::load_sequence(&entries[3]).unwrap();
        assert_eq!(back.meta, seqs[3].meta);
        for (f, g) in back.frames().iter().zip(seqs[3].frames()) {
            for (x, y) in f.pixels.iter().zip(&g.pixels) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
