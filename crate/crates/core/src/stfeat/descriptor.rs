//! Dense gradient-histogram descriptors: 3D-HOG over `w×h×4` blocks and an
//! upright fixed-scale SIFT over single-frame `w×h` patches.

use std::f64::consts::TAU;

use super::Block;
use crate::error::{Error, Result};

pub const ORIENTATION_BINS: usize = 8;
pub const HOG_DIM: usize = 2 * 2 * 2 * ORIENTATION_BINS;
pub const SIFT_DIM: usize = 4 * 4 * ORIENTATION_BINS;

const NORM_GUARD: f64 = 1e-12;
const SIFT_CLAMP: f64 = 0.2;

/// Per-pixel gradient magnitude and orientation in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub magnitude: f64,
    pub angle: f64,
}

/// Central-difference gradients of frame `t` of `block`, with replicate
/// padding at the block border. Row-major, `w*h` entries.
pub fn frame_gradients(block: &Block, t: usize) -> Vec<Gradient> {
    let (w, h) = (block.w, block.h);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = (block.at(x.saturating_add(1).min(w - 1), y, t) - block.at(x.saturating_sub(1), y, t)) * 0.5;
            let gy = (block.at(x, y.saturating_add(1).min(h - 1), t) - block.at(x, y.saturating_sub(1), t)) * 0.5;
            out.push(Gradient {
                magnitude: gx.hypot(gy),
                angle: wrap_angle(gy.atan2(gx)),
            });
        }
    }
    out
}

fn wrap_angle(a: f64) -> f64 {
    let a = if a < 0.0 { a + TAU } else { a };
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Split a vote between the two orientation bins whose centers
/// (`(i + ½)·2π/8`) bracket `angle`.
fn linear_vote(hist: &mut [f64], angle: f64, weight: f64) {
    let pos = angle / (TAU / ORIENTATION_BINS as f64) - 0.5;
    let lo = pos.floor();
    let frac = pos - lo;
    let lo = (lo as i64).rem_euclid(ORIENTATION_BINS as i64) as usize;
    let hi = (lo + 1) % ORIENTATION_BINS;
    hist[lo] += (1.0 - frac) * weight;
    hist[hi] += frac * weight;
}

/// The orientation bin `[i·2π/8, (i+1)·2π/8)` containing `angle`.
pub fn hard_bin(angle: f64) -> usize {
    ((angle / (TAU / ORIENTATION_BINS as f64)).floor() as usize).min(ORIENTATION_BINS - 1)
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < NORM_GUARD {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// 3D-HOG: the block is split into 2×2×2 cells, each contributing an
/// 8-bin, individually L2-normalized orientation histogram. Cells are
/// concatenated in (t, y, x) order.
pub fn hog3d_descriptor(block: &Block) -> Result<Vec<f64>> {
    if block.l != 4 || block.w % 2 != 0 || block.h % 2 != 0 || block.w < 2 || block.h < 2 {
        return Err(Error::BadBlockShape(format!(
            "3D-HOG needs an even w×h×4 block, got {}×{}×{}",
            block.w, block.h, block.l
        )));
    }
    let (cw, ch) = (block.w / 2, block.h / 2);
    let mut desc = vec![0.0; HOG_DIM];
    for t in 0..block.l {
        let grads = frame_gradients(block, t);
        for y in 0..block.h {
            for x in 0..block.w {
                let g = grads[y * block.w + x];
                let cell = ((t / 2) * 2 + y / ch) * 2 + x / cw;
                linear_vote(&mut desc[cell * ORIENTATION_BINS..(cell + 1) * ORIENTATION_BINS], g.angle, g.magnitude);
            }
        }
    }
    for cell in desc.chunks_mut(ORIENTATION_BINS) {
        l2_normalize(cell);
    }
    Ok(desc)
}

/// Upright, fixed-scale SIFT computed at the patch center: 4×4 spatial
/// cells × 8 orientation bins, Gaussian-weighted (σ = w/2) magnitude votes,
/// then normalize, clamp at 0.2 and renormalize.
pub fn sift2d_descriptor(patch: &Block) -> Result<Vec<f64>> {
    if patch.l != 1 || patch.w % 4 != 0 || patch.h % 4 != 0 || patch.w == 0 || patch.h == 0 {
        return Err(Error::BadBlockShape(format!(
            "SIFT needs a single-frame patch with sides divisible by 4, got {}×{}×{}",
            patch.w, patch.h, patch.l
        )));
    }
    let (cw, ch) = (patch.w / 4, patch.h / 4);
    let sigma = patch.w as f64 / 2.0;
    let (cx, cy) = ((patch.w as f64 - 1.0) / 2.0, (patch.h as f64 - 1.0) / 2.0);
    let grads = frame_gradients(patch, 0);
    let mut desc = vec![0.0; SIFT_DIM];
    for y in 0..patch.h {
        for x in 0..patch.w {
            let g = grads[y * patch.w + x];
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let weight = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            let cell = (y / ch) * 4 + x / cw;
            desc[cell * ORIENTATION_BINS + hard_bin(g.angle)] += g.magnitude * weight;
        }
    }
    l2_normalize(&mut desc);
    desc.iter_mut().for_each(|v| *v = v.min(SIFT_CLAMP));
    l2_normalize(&mut desc);
    Ok(desc)
}
