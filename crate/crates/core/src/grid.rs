//! Small single-channel image helpers for grid inputs: separable resizing,
//! flips, circular shifts and Gaussian smoothing. Images are row-major
//! `height × width` slices.

use crate::tensor::Array;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    /// Keys cubic convolution with a = -0.5.
    Bicubic,
}

fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Interpolation taps `(source index, weight)` for each destination index,
/// using half-pixel centers and border clamping. Weights sum to one.
fn taps(src: usize, dst: usize, kind: Interpolation) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let clamp = |i: i64| i.clamp(0, src as i64 - 1) as usize;
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let base = center.floor();
            let frac = center - base;
            let base = base as i64;
            let raw: Vec<(usize, f64)> = match kind {
                Interpolation::Bilinear => {
                    vec![(clamp(base), 1.0 - frac), (clamp(base + 1), frac)]
                }
                Interpolation::Bicubic => (-1..=2)
                    .map(|k| (clamp(base + k), cubic(frac - k as f64)))
                    .collect(),
            };
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
            for (i, w) in raw {
                match merged.iter_mut().find(|(j, _)| *j == i) {
                    Some(entry) => entry.1 += w,
                    None => merged.push((i, w)),
                }
            }
            merged
        })
        .collect()
}

pub fn resize(
    src: &[f64],
    (sh, sw): (usize, usize),
    (dh, dw): (usize, usize),
    kind: Interpolation,
) -> Vec<f64> {
    debug_assert_eq!(src.len(), sh * sw);
    let rows = taps(sh, dh, kind);
    let cols = taps(sw, dw, kind);
    // horizontal pass, then vertical
    let mut tmp = vec![0.0; sh * dw];
    for r in 0..sh {
        for (c, tap) in cols.iter().enumerate() {
            tmp[r * dw + c] = tap.iter().map(|&(i, w)| w * src[r * sw + i]).sum();
        }
    }
    let mut out = vec![0.0; dh * dw];
    for (r, tap) in rows.iter().enumerate() {
        for c in 0..dw {
            out[r * dw + c] = tap.iter().map(|&(i, w)| w * tmp[i * dw + c]).sum();
        }
    }
    out
}

/// The resize as a dense `(sh·sw) × (dh·dw)` matrix acting on row vectors,
/// so `flat_dst = flat_src · M` can be recorded on a tape.
pub fn resize_matrix(
    (sh, sw): (usize, usize),
    (dh, dw): (usize, usize),
    kind: Interpolation,
) -> Array {
    let rows = taps(sh, dh, kind);
    let cols = taps(sw, dw, kind);
    let n_out = dh * dw;
    let mut m = Array::zeros(&[sh * sw, n_out]);
    let data = m.data_mut();
    for (r, rtap) in rows.iter().enumerate() {
        for (c, ctap) in cols.iter().enumerate() {
            for &(i, wi) in rtap {
                for &(j, wj) in ctap {
                    data[(i * sw + j) * n_out + r * dw + c] += wi * wj;
                }
            }
        }
    }
    m
}

pub fn flip_horizontal(img: &mut [f64], (h, w): (usize, usize)) {
    for r in 0..h {
        img[r * w..(r + 1) * w].reverse();
    }
}

/// Flat source index for every output cell of a circular shift by `(dy, dx)`.
pub fn roll_indices((h, w): (usize, usize), dy: i64, dx: i64) -> Vec<usize> {
    let (hi, wi) = (h as i64, w as i64);
    let mut idx = Vec::with_capacity(h * w);
    for r in 0..hi {
        for c in 0..wi {
            let sr = (r - dy).rem_euclid(hi);
            let sc = (c - dx).rem_euclid(wi);
            idx.push((sr * wi + sc) as usize);
        }
    }
    idx
}

/// Gaussian blur with a `size × size` kernel (odd size) and clamped borders.
pub fn gaussian_blur(img: &[f64], (h, w): (usize, usize), sigma: f64, size: usize) -> Vec<f64> {
    let half = (size / 2) as i64;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;

    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * img[r * w + clamp(c as i64 + k as i64 - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(r as i64 + k as i64 - half, h) * w + c])
                .sum();
        }
    }
    out
}

/// Anisotropic total variation `Σ |x[i+1,j] - x[i,j]| + |x[i,j+1] - x[i,j]|`.
pub fn total_variation(img: &[f64], (h, w): (usize, usize)) -> f64 {
    let (down, right) = tv_pairs((h, w));
    down.iter()
        .chain(&right)
        .map(|&(a, b)| (img[a] - img[b]).abs())
        .sum()
}

type IndexPairs = Vec<(usize, usize)>;

/// Index pairs `(next, current)` for vertical and horizontal neighbours.
pub(crate) fn tv_pairs((h, w): (usize, usize)) -> (IndexPairs, IndexPairs) {
    let mut down = Vec::new();
    let mut right = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if r + 1 < h {
                down.push(((r + 1) * w + c, r * w + c));
            }
            if c + 1 < w {
                right.push((r * w + c + 1, r * w + c));
            }
        }
    }
    (down, right)
}
