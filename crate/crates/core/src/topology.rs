//! Energy profiles along straight-line walks between embeddings.
//!
//! The energy of a point is its cosine distance to the nearest reference
//! embedding. Walks between same-class endpoints form the positive curve,
//! walks between different-class endpoints the negative one.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::tensor::dot;

/// `min_r (1 - cos(p, r))`, clamped to `[0, 2]`. `ref_sq[r]` is `‖r‖²`.
/// Zero vectors have cosine 0 with everything.
pub fn energy(point: &[f64], reference: &EmbeddingSet, ref_sq: &[f64], skip: &[usize]) -> f64 {
    let pp = dot(point, point);
    let mut best = f64::INFINITY;
    for (r, &rr) in ref_sq.iter().enumerate() {
        if skip.contains(&r) {
            continue;
        }
        let denom = (pp * rr).sqrt();
        let cos = if denom > 0.0 {
            dot(point, reference.row(r)) / denom
        } else {
            0.0
        };
        best = best.min(1.0 - cos);
    }
    best.clamp(0.0, 2.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairTrace {
    pub from: usize,
    pub to: usize,
    pub positive: bool,
    pub energy: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkProfile {
    /// `steps + 1` evenly spaced values in `[0, 1]`.
    pub t: Vec<f64>,
    pub positive: StepStats,
    pub negative: StepStats,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub traces: Vec<PairTrace>,
}

impl WalkProfile {
    /// Mean over pairs of each walk's maximum energy.
    pub fn mean_peak(&self, positive: bool) -> Option<f64> {
        let peaks: Vec<f64> = self
            .traces
            .iter()
            .filter(|p| p.positive == positive)
            .map(|p| p.energy.iter().fold(0.0f64, |a, e| a.max(*e)))
            .collect();
        (!peaks.is_empty()).then(|| peaks.iter().sum::<f64>() / peaks.len() as f64)
    }
}

fn stats(traces: &[&PairTrace], len: usize) -> StepStats {
    if traces.is_empty() {
        return StepStats::default();
    }
    let n = traces.len() as f64;
    let mut out = StepStats {
        mean: Vec::with_capacity(len),
        std: Vec::with_capacity(len),
    };
    for s in 0..len {
        let mean = traces.iter().map(|t| t.energy[s]).sum::<f64>() / n;
        let var = traces.iter().map(|t| (t.energy[s] - mean).powi(2)).sum::<f64>() / n;
        out.mean.push(mean);
        out.std.push(var.sqrt());
    }
    out
}

/// Walks `p_t = (1-t)·z_i + t·z_j` for each pair of reference rows.
/// With `exclude_endpoints`, the two endpoints are left out of the nearest
/// neighbour search for their own walk.
pub fn energy_walk(
    reference: &EmbeddingSet,
    pairs: &[(usize, usize)],
    steps: usize,
    exclude_endpoints: bool,
) -> Result<WalkProfile> {
    let labels = reference.require_labels("energy walk")?;
    if steps < 2 {
        return Err(Error::arg("a walk needs at least 2 steps"));
    }
    let n = reference.len();
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= n || *j >= n) {
        return Err(Error::arg(format!("pair ({i}, {j}) out of range for {n} embeddings")));
    }
    if exclude_endpoints && n < 3 {
        return Err(Error::arg("excluding endpoints leaves no reference embeddings"));
    }
    let ref_sq: Vec<f64> = (0..n).map(|r| dot(reference.row(r), reference.row(r))).collect();
    let t: Vec<f64> = (0..=steps).map(|s| s as f64 / steps as f64).collect();

    let traces: Vec<PairTrace> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (zi, zj) = (reference.row(i), reference.row(j));
            let skip: &[usize] = if exclude_endpoints { &[i, j] } else { &[] };
            let energy = t
                .iter()
                .map(|&t| {
                    let p: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| (1.0 - t) * a + t * b).collect();
                    energy(&p, reference, &ref_sq, skip)
                })
                .collect();
            PairTrace {
                from: i,
                to: j,
                positive: labels[i] == labels[j],
                energy,
            }
        })
        .collect();

    let pos: Vec<&PairTrace> = traces.iter().filter(|p| p.positive).collect();
    let neg: Vec<&PairTrace> = traces.iter().filter(|p| !p.positive).collect();
    Ok(WalkProfile {
        positive: stats(&pos, t.len()),
        negative: stats(&neg, t.len()),
        positive_pairs: pos.len(),
        negative_pairs: neg.len(),
        t,
        traces,
    })
}

/// Draws up to `count` same-class and `count` different-class index pairs
/// with distinct endpoints.
pub fn sample_walk_pairs(labels: &[usize], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    if n < 2 {
        return pos;
    }
    let budget = 100 * count.max(1) * n.min(1000);
    for _ in 0..budget {
        if pos.len() >= count && neg.len() >= count {
            break;
        }
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        if labels[i] == labels[j] {
            if pos.len() < count {
                pos.push((i, j));
            }
        } else if neg.len() < count {
            neg.push((i, j));
        }
    }
    pos.extend(neg);
    pos
}

fn cells(stats: &StepStats, s: usize) -> (String, String) {
    match (stats.mean.get(s), stats.std.get(s)) {
        (Some(m), Some(d)) => (m.to_string(), d.to_string()),
        _ => (String::new(), String::new()),
    }
}

pub fn walks_csv(profile: &WalkProfile) -> String {
    let mut out = String::from("t,pos_mean,pos_std,neg_mean,neg_std\n");
    for (s, t) in profile.t.iter().enumerate() {
        let (pm, ps) = cells(&profile.positive, s);
        let (nm, ns) = cells(&profile.negative, s);
        let _ = writeln!(out, "{t},{pm},{ps},{nm},{ns}");
    }
    out
}

pub fn write_walks_csv(path: &Path, profile: &WalkProfile) -> Result<()> {
    std::fs::write(path, walks_csv(profile))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Array;

    fn set(rows: &[Vec<f64>], labels: Vec<usize>) -> EmbeddingSet {
        EmbeddingSet::new(Array::from_rows(rows).unwrap(), Some(labels)).unwrap()
    }

    #[test]
    fn self_walk_is_flat_zero() {
        let r = set(&[vec![0.3, -1.2, 0.5], vec![1.0, 0.0, 0.0]], vec![0, 1]);
        let p = energy_walk(&r, &[(0, 0)], 10, false).unwrap();
        assert!(p.traces[0].energy.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn basis_walk_midpoint() {
        let r = set(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        let p = energy_walk(&r, &[(0, 1)], 2, false).unwrap();
        let e = &p.traces[0].energy;
        assert_eq!(e[0], 0.0);
        assert_eq!(e[2], 0.0);
        assert!((e[1] - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
        assert_eq!(p.negative_pairs, 1);
        assert_eq!(p.negative.mean[1], e[1]);
        assert_eq!(p.negative.std[1], 0.0);
    }

    #[test]
    fn excluded_endpoints_raise_endpoint_energy() {
        let r = set(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]],
            vec![0, 0, 1],
        );
        let p = energy_walk(&r, &[(0, 1)], 4, true).unwrap();
        assert!(p.traces[0].energy[0] > 0.0);
        assert_eq!(p.positive_pairs, 1);
    }

    #[test]
    fn out_of_range_pair_rejected() {
        let r = set(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        assert!(matches!(energy_walk(&r, &[(0, 2)], 4, false), Err(Error::Argument(_))));
        assert!(energy_walk(&r, &[(0, 1)], 1, false).is_err());
    }

    #[test]
    fn sampled_pairs_respect_labels() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let pairs = sample_walk_pairs(&labels, 20, 9);
        assert_eq!(pairs.len(), 40);
        assert_eq!(pairs.iter().filter(|(i, j)| labels[*i] == labels[*j]).count(), 20);
        assert!(pairs.iter().all(|(i, j)| i != j));
    }

    #[test]
    fn csv_layout() {
        let r = set(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        let p = energy_walk(&r, &[(0, 1)], 2, false).unwrap();
        let csv = walks_csv(&p);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,,,0,0");
    }
}
