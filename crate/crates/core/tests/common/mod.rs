//! Independent reference implementations used as test oracles. Nothing here
//! touches the tape; everything is plain loops over `f64` slices.

#![allow(dead_code)]

use hypersolid::RepulsionMode;

pub struct Batch {
    pub b: usize,
    pub v: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn m(&self) -> usize {
        self.b * self.v
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-image max over views of the raw features, normalized.
pub fn targets(batch: &Batch) -> Vec<Vec<f64>> {
    (0..batch.b)
        .map(|i| {
            let mut t = vec![f64::NEG_INFINITY; batch.d];
            for v in 0..batch.v {
                for (tk, x) in t.iter_mut().zip(batch.row(i * batch.v + v)) {
                    if *x > *tk {
                        *tk = *x;
                    }
                }
            }
            normalize(&t)
        })
        .collect()
}

pub struct Terms {
    pub alignment: f64,
    pub repulsion: f64,
    pub normalization: f64,
    pub total: f64,
}

/// The reference loss with an explicit target per image (the stop-gradient
/// view of the alignment term).
pub fn loss_with_targets(
    batch: &Batch,
    c: &[Vec<f64>],
    alpha: f64,
    lambda: f64,
    mode: RepulsionMode,
) -> Terms {
    let m = batch.m();
    let x: Vec<Vec<f64>> = (0..m).map(|i| normalize(batch.row(i))).collect();

    let mut align = 0.0;
    for i in 0..m {
        align += 1.0 - dot(&x[i], &c[i / batch.v]);
    }
    align /= m as f64;

    let mut rep = 0.0;
    for i in 0..m {
        for j in 0..m {
            let mut s = if i == j { 0.0 } else { dot(&x[i], &x[j]) };
            let same = i / batch.v == j / batch.v;
            let keep = match mode {
                RepulsionMode::All => true,
                RepulsionMode::NegativesOnly => !same,
                RepulsionMode::PositivesOnly => same,
                RepulsionMode::Off => false,
            };
            if !keep {
                s = 0.0;
            }
            rep += (s - alpha).max(0.0) / (1.0 - alpha);
        }
    }
    rep /= (m * m) as f64;

    let mean_norm = (0..m)
        .map(|i| dot(batch.row(i), batch.row(i)).sqrt())
        .sum::<f64>()
        / m as f64;
    let norm = lambda * (mean_norm - 1.0).powi(2);
    Terms {
        alignment: align,
        repulsion: rep,
        normalization: norm,
        total: align + rep + norm,
    }
}

/// Direct transcription of the reference pseudocode.
pub fn reference_loss(batch: &Batch, alpha: f64, lambda: f64, mode: RepulsionMode) -> Terms {
    loss_with_targets(batch, &targets(batch), alpha, lambda, mode)
}

/// Central differences of the loss with the targets frozen at `batch`.
pub fn frozen_target_fd(batch: &Batch, alpha: f64, lambda: f64, mode: RepulsionMode, h: f64) -> Vec<f64> {
    let c = targets(batch);
    let mut probe = Batch {
        b: batch.b,
        v: batch.v,
        d: batch.d,
        data: batch.data.clone(),
    };
    (0..batch.data.len())
        .map(|k| {
            let orig = probe.data[k];
            probe.data[k] = orig + h;
            let up = loss_with_targets(&probe, &c, alpha, lambda, mode).total;
            probe.data[k] = orig - h;
            let down = loss_with_targets(&probe, &c, alpha, lambda, mode).total;
            probe.data[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Cosine similarity of all ordered off-diagonal pairs.
pub fn pair_cosines(batch: &Batch) -> Vec<f64> {
    let m = batch.m();
    let x: Vec<Vec<f64>> = (0..m).map(|i| normalize(batch.row(i))).collect();
    let mut out = Vec::with_capacity(m * m - m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                out.push(dot(&x[i], &x[j]));
            }
        }
    }
    out
}

/// Smallest distance from any pair cosine to `alpha`, and from any view's
/// coordinate to its image's running max competitor (max-tie margin).
pub fn kink_margin(batch: &Batch, alpha: f64) -> f64 {
    let sim = pair_cosines(batch)
        .into_iter()
        .map(|s| (s - alpha).abs())
        .fold(f64::INFINITY, f64::min);
    let mut tie = f64::INFINITY;
    for i in 0..batch.b {
        for k in 0..batch.d {
            let mut vals: Vec<f64> = (0..batch.v).map(|v| batch.row(i * batch.v + v)[k]).collect();
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if vals.len() > 1 {
                tie = tie.min(vals[0] - vals[1]);
            }
        }
    }
    sim.min(tie)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Exhaustive nearest-reference cosine distance.
pub fn brute_energy(p: &[f64], reference: &[Vec<f64>]) -> f64 {
    let pp = dot(p, p);
    reference
        .iter()
        .map(|r| {
            let denom = (pp * dot(r, r)).sqrt();
            1.0 - if denom > 0.0 { dot(p, r) / denom } else { 0.0 }
        })
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 2.0)
}
