//! Frozen-representation probes: cosine k-NN and a linear softmax classifier.
//!
//! Neither probe modifies the embeddings it is given.

use std::cmp::Ordering;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::optim::{self, AdamWConfig, AdamWState};
use crate::tensor::{gemm, Array, Tape, NORMALIZE_EPS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeKind {
    Knn { k: usize },
    Linear { epochs: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub kind: ProbeKind,
    pub top1: f64,
    pub top5: f64,
    pub train_size: usize,
    pub test_size: usize,
}

fn class_count(train: &[usize], test: &[usize]) -> usize {
    train.iter().chain(test).max().map_or(0, |m| m + 1)
}

/// Ranks classes by votes, then summed similarity, then lowest class id.
fn rank_classes(votes: &[usize], sims: &[f64]) -> Vec<usize> {
    let mut classes: Vec<usize> = (0..votes.len()).collect();
    classes.sort_by(|&a, &b| {
        votes[b]
            .cmp(&votes[a])
            .then(sims[b].partial_cmp(&sims[a]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    classes
}

/// Cosine k-NN with a uniform majority vote. Ties between classes go to the
/// larger summed similarity, then to the lowest class id. Top-5 uses the same
/// ranking.
pub fn knn_probe(train: &EmbeddingSet, test: &EmbeddingSet, k: usize) -> Result<ProbeResult> {
    let train_labels = train.require_labels("knn probe (train split)")?;
    let test_labels = test.require_labels("knn probe (test split)")?;
    if k == 0 || k > train.len() {
        return Err(Error::arg(format!(
            "k = {k} must lie in 1..={} (train size)",
            train.len()
        )));
    }
    if train.dim() != test.dim() {
        return Err(Error::dim(format!(
            "train dim {} vs test dim {}",
            train.dim(),
            test.dim()
        )));
    }
    let classes = class_count(train_labels, test_labels);
    let train_n = train.vectors().normalize_rows(NORMALIZE_EPS);
    let test_n = test.vectors().normalize_rows(NORMALIZE_EPS);
    let (n, d) = (train.len(), train.dim());

    const CHUNK: usize = 128;
    let hits: Vec<(bool, bool)> = (0..test.len())
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .flat_map_iter(|&start| {
            let rows = CHUNK.min(test.len() - start);
            let mut sims = vec![0.0; rows * n];
            gemm(
                (rows, d, n),
                &test_n.data()[start * d..],
                (d, 1),
                train_n.data(),
                (1, d),
                &mut sims,
                0.0,
            );
            (0..rows)
                .map(|r| {
                    let row = &sims[r * n..(r + 1) * n];
                    let mut order: Vec<usize> = (0..n).collect();
                    let by_sim = |a: &usize, b: &usize| {
                        row[*b]
                            .partial_cmp(&row[*a])
                            .unwrap_or(Ordering::Equal)
                            .then(a.cmp(b))
                    };
                    if k < n {
                        order.select_nth_unstable_by(k - 1, by_sim);
                    }
                    let mut votes = vec![0usize; classes];
                    let mut sim_sum = vec![0.0; classes];
                    for &j in &order[..k] {
                        votes[train_labels[j]] += 1;
                        sim_sum[train_labels[j]] += row[j];
                    }
                    let ranking = rank_classes(&votes, &sim_sum);
                    let y = test_labels[start + r];
                    (ranking[0] == y, ranking.iter().take(5).any(|&c| c == y))
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(summarize(ProbeKind::Knn { k }, &hits, train.len()))
}

fn summarize(kind: ProbeKind, hits: &[(bool, bool)], train_size: usize) -> ProbeResult {
    let n = hits.len() as f64;
    ProbeResult {
        kind,
        top1: hits.iter().filter(|h| h.0).count() as f64 / n,
        top5: hits.iter().filter(|h| h.1).count() as f64 / n,
        train_size,
        test_size: hits.len(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression on the raw embeddings, trained full-batch
/// with AdamW (no weight decay).
pub fn linear_probe(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    cfg: &LinearProbeConfig,
) -> Result<ProbeResult> {
    let train_labels = train.require_labels("linear probe (train split)")?;
    let test_labels = test.require_labels("linear probe (test split)")?;
    if train.dim() != test.dim() {
        return Err(Error::dim("train and test embeddings differ in dimension"));
    }
    let first = train_labels[0];
    if train_labels.iter().all(|&l| l == first) {
        return Err(Error::arg("linear probe needs at least two classes in the train split"));
    }
    let classes = class_count(train_labels, test_labels);
    let d = train.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.01 / (d as f64).sqrt();
    let mut weight = Array::from_vec(
        &[d, classes],
        (0..d * classes).map(|_| rng.random_range(-bound..bound)).collect(),
    )?;
    let mut bias = Array::zeros(&[classes]);
    let opt = AdamWConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut state = AdamWState::new([&weight, &bias]);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.leaf(train.vectors().clone());
        let w = tape.leaf(weight.clone());
        let b = tape.leaf(bias.clone());
        let logits = tape.matmul(x, w)?;
        let logits = tape.add_bias(logits, b)?;
        let loss = tape.softmax_cross_entropy(logits, train_labels)?;
        if !tape.value(loss).all_finite() {
            return Err(Error::Numeric("linear probe loss diverged".into()));
        }
        let grads = tape.backward(loss)?;
        let g = [grads.wrt(w), grads.wrt(b)];
        optim::step(&mut [&mut weight, &mut bias], &g, &mut state, &opt)?;
    }

    let logits = test.vectors().matmul(&weight)?;
    let hits: Vec<(bool, bool)> = (0..test.len())
        .map(|i| {
            let row: Vec<f64> = logits.row(i).iter().zip(bias.data()).map(|(a, b)| a + b).collect();
            let mut order: Vec<usize> = (0..classes).collect();
            order.sort_by(|&a, &b| {
                row[b]
                    .partial_cmp(&row[a])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let y = test_labels[i];
            (order[0] == y, order.iter().take(5).any(|&c| c == y))
        })
        .collect();
    Ok(summarize(
        ProbeKind::Linear { epochs: cfg.epochs },
        &hits,
        train.len(),
    ))
}

pub const PROBE_HEADER: &str = "probe,k_or_epochs,top1,top5";

pub fn probe_row(r: &ProbeResult) -> String {
    let (name, param) = match r.kind {
        ProbeKind::Knn { k } => ("knn", k),
        ProbeKind::Linear { epochs } => ("linear", epochs),
    };
    format!("{name},{param},{},{}", r.top1, r.top5)
}

/// Appends rows to `probe_results.csv`, writing the header for a new file.
pub fn append_probe_results(path: &Path, results: &[ProbeResult]) -> Result<()> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "{PROBE_HEADER}")?;
    }
    for r in results {
        writeln!(file, "{}", probe_row(r))?;
    }
    Ok(())
}
