//! Spatio-temporal features: frame sequences, dense block sampling,
//! gradient descriptors, PCA reduction and location augmentation.

mod descriptor;
mod pca;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use descriptor::{
    frame_gradients, hard_bin, hog3d_descriptor, sift2d_descriptor, Gradient, HOG_DIM, ORIENTATION_BINS,
    SIFT_DIM,
};
pub use pca::{fit_pca, fit_pca_from_moments, PcaModel, PcaTarget};

use crate::error::{Error, Result};

/// Number of appended location dims (x, y, t).
pub const LOC_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VideoMeta {
    pub video_id: String,
    pub subject_id: String,
    pub label: usize,
}

/// A grayscale frame, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidSequence(format!(
                "frame has {} pixels, expected {}×{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidSequence(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(GrayFrame { width, height, pixels })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub meta: VideoMeta,
    frames: Vec<GrayFrame>,
}

impl FrameSequence {
    pub fn new(meta: VideoMeta, frames: Vec<GrayFrame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidSequence(format!("video `{}` has no frames", meta.video_id)))?;
        let (w, h) = (first.width, first.height);
        if frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(Error::InvalidSequence(format!(
                "video `{}` mixes frame sizes",
                meta.video_id
            )));
        }
        Ok(FrameSequence { meta, frames })
    }

    pub fn frames(&self) -> &[GrayFrame] {
        &self.frames
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub w: usize,
    pub h: usize,
    pub l: usize,
    pub stride_xy: usize,
    pub stride_t: usize,
}

/// Block counts along x, y and t (w*, h*, l*).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridCounts {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridIndex {
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

/// A `w×h×l` intensity volume, stored `[t][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub w: usize,
    pub h: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Block {
    #[inline]
    pub fn at(&self, x: usize, y: usize, t: usize) -> f64 {
        self.data[(t * self.h + y) * self.w + x]
    }
}

fn grid_count(extent: usize, size: usize, stride: usize) -> usize {
    if size == 0 || size > extent {
        0
    } else {
        (extent - size) / stride + 1
    }
}

pub fn grid_counts(width: usize, height: usize, frames: usize, spec: &BlockSpec) -> Result<GridCounts> {
    if spec.stride_xy == 0 || spec.stride_t == 0 {
        return Err(Error::BadBlockShape("strides must be at least 1".into()));
    }
    let counts = GridCounts {
        x: grid_count(width, spec.w, spec.stride_xy),
        y: grid_count(height, spec.h, spec.stride_xy),
        t: grid_count(frames, spec.l, spec.stride_t),
    };
    if counts.x == 0 || counts.y == 0 || counts.t == 0 {
        return Err(Error::EmptyGrid(format!(
            "{}×{}×{} block does not fit a {}×{}×{} video",
            spec.w, spec.h, spec.l, width, height, frames
        )));
    }
    Ok(counts)
}

/// Densely sample blocks on the stride grid, in row-major (t, y, x) order.
pub fn sample_blocks(seq: &FrameSequence, spec: &BlockSpec) -> Result<(GridCounts, Vec<(Block, GridIndex)>)> {
    let counts = grid_counts(seq.width(), seq.height(), seq.len(), spec)?;
    let mut blocks = Vec::with_capacity(counts.x * counts.y * counts.t);
    for t in 0..counts.t {
        for y in 0..counts.y {
            for x in 0..counts.x {
                let (x0, y0, t0) = (x * spec.stride_xy, y * spec.stride_xy, t * spec.stride_t);
                let mut data = Vec::with_capacity(spec.w * spec.h * spec.l);
                for frame in &seq.frames()[t0..t0 + spec.l] {
                    for yy in y0..y0 + spec.h {
                        data.extend_from_slice(&frame.pixels[yy * frame.width + x0..yy * frame.width + x0 + spec.w]);
                    }
                }
                blocks.push((
                    Block {
                        w: spec.w,
                        h: spec.h,
                        l: spec.l,
                        data,
                    },
                    GridIndex { t, y, x },
                ));
            }
        }
    }
    Ok((counts, blocks))
}

/// One augmented low-level feature: appearance followed by normalized location.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeature {
    pub appearance: Vec<f64>,
    pub loc: [f64; 3],
    pub grid_index: GridIndex,
}

impl BlockFeature {
    pub fn dim(&self) -> usize {
        self.appearance.len() + LOC_DIMS
    }

    /// `[appearance..., x/w*, y/h*, t/l*]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.appearance);
        v.extend_from_slice(&self.loc);
        v
    }
}

pub fn augment(appearance: Vec<f64>, index: GridIndex, counts: GridCounts) -> Result<BlockFeature> {
    if index.x >= counts.x || index.y >= counts.y || index.t >= counts.t {
        return Err(Error::IndexOutOfGrid {
            index: [index.x, index.y, index.t],
            counts: [counts.x, counts.y, counts.t],
        });
    }
    Ok(BlockFeature {
        appearance,
        loc: [
            index.x as f64 / counts.x as f64,
            index.y as f64 / counts.y as f64,
            index.t as f64 / counts.t as f64,
        ],
        grid_index: index,
    })
}

/// Inverse of the location part of [`augment`].
pub fn grid_index_from_loc(loc: [f64; 3], counts: GridCounts) -> GridIndex {
    GridIndex {
        x: (loc[0] * counts.x as f64).round() as usize,
        y: (loc[1] * counts.y as f64).round() as usize,
        t: (loc[2] * counts.t as f64).round() as usize,
    }
}

/// All block features of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct StmFeatureSet {
    pub meta: VideoMeta,
    pub counts: GridCounts,
    pub features: Vec<BlockFeature>,
}

impl StmFeatureSet {
    pub fn new(meta: VideoMeta, counts: GridCounts, features: Vec<BlockFeature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyStm(meta.video_id));
        }
        let d = features[0].appearance.len();
        if let Some(f) = features.iter().find(|f| f.appearance.len() != d) {
            return Err(Error::DimMismatch {
                expected: d,
                got: f.appearance.len(),
            });
        }
        Ok(StmFeatureSet { meta, counts, features })
    }

    pub fn appearance_dim(&self) -> usize {
        self.features[0].appearance.len()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorKind {
    Sift,
    Hog,
}

impl DescriptorKind {
    pub fn raw_dim(self) -> usize {
        match self {
            DescriptorKind::Sift => SIFT_DIM,
            DescriptorKind::Hog => HOG_DIM,
        }
    }

    pub fn depth(self) -> usize {
        match self {
            DescriptorKind::Sift => 1,
            DescriptorKind::Hog => 4,
        }
    }

    pub fn describe(self, block: &Block) -> Result<Vec<f64>> {
        match self {
            DescriptorKind::Sift => sift2d_descriptor(block),
            DescriptorKind::Hog => hog3d_descriptor(block),
        }
    }
}

impl std::str::FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sift" => Ok(DescriptorKind::Sift),
            "hog" => Ok(DescriptorKind::Hog),
            other => Err(Error::Config(format!("unknown descriptor `{other}` (sift|hog)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    pub descriptor: DescriptorKind,
    pub patch: usize,
    pub stride_frac: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            descriptor: DescriptorKind::Sift,
            patch: 24,
            stride_frac: 0.5,
        }
    }
}

impl ExtractConfig {
    pub fn block_spec(&self) -> BlockSpec {
        let stride = ((self.patch as f64 * self.stride_frac).round() as usize).max(1);
        BlockSpec {
            w: self.patch,
            h: self.patch,
            l: self.descriptor.depth(),
            stride_xy: stride,
            stride_t: 1,
        }
    }
}

/// Raw (pre-PCA) descriptors of one clip, one row per block.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStm {
    pub meta: VideoMeta,
    pub counts: GridCounts,
    pub grid: Vec<GridIndex>,
    pub descriptors: DMatrix<f64>,
}

impl RawStm {
    /// Reduce appearance with `pca` (if any) and append normalized locations.
    pub fn to_features(&self, pca: Option<&PcaModel>) -> Result<StmFeatureSet> {
        let appearance = match pca {
            Some(p) => p.project_rows(&self.descriptors)?,
            None => self.descriptors.clone(),
        };
        let features = appearance
            .row_iter()
            .zip(&self.grid)
            .map(|(row, &idx)| augment(row.iter().copied().collect(), idx, self.counts))
            .collect::<Result<Vec<_>>>()?;
        StmFeatureSet::new(self.meta.clone(), self.counts, features)
    }
}

pub fn extract_raw(seq: &FrameSequence, config: &ExtractConfig) -> Result<RawStm> {
    let spec = config.block_spec();
    if seq.len() < spec.l {
        return Err(Error::InvalidSequence(format!(
            "video `{}` has {} frames; {:?} needs at least {}",
            seq.meta.video_id,
            seq.len(),
            config.descriptor,
            spec.l
        )));
    }
    let (counts, blocks) = sample_blocks(seq, &spec)?;
    let rows = blocks
        .par_iter()
        .map(|(b, _)| config.descriptor.describe(b))
        .collect::<Result<Vec<_>>>()?;
    let d = config.descriptor.raw_dim();
    let descriptors = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    Ok(RawStm {
        meta: seq.meta.clone(),
        counts,
        grid: blocks.into_iter().map(|(_, g)| g).collect(),
        descriptors,
    })
}

impl std::fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DescriptorKind::Sift => "sift",
            DescriptorKind::Hog => "hog",
        })
    }
}
