//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::fs;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::Instant;

use common::{frozen_target_fd, kink_margin, max_rel_err, pair_cosines, reference_loss, Batch};
use hypersolid::geometry::{effective_rank_from_spectrum, geometry_report, GeometryReport};
use hypersolid::inversion::{invert, total_variation, InputShape, InversionConfig};
use hypersolid::loss::{evaluate, hypersolid_loss, repulsion_loss, value_and_grad};
use hypersolid::probes::knn_probe;
use hypersolid::topology::{energy_walk, sample_walk_pairs};
use hypersolid::trainer::{embed, train_with_observer, TrainConfig};
use hypersolid::views::{synthetic_clusters, Dataset, SyntheticConfig};
use hypersolid::{Array, EmbeddingSet, LossConfig, Parameters, RepulsionMode, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 20;
const PROJECTOR_DIM: usize = 64;
const ALPHA: f64 = 0.9;
const MPA_FLOOR_DEGREES: f64 = 25.84;
const PAIR_SAMPLES: usize = 20_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, v: usize, d: usize, spread: f64) -> Batch {
    let mut data = Vec::with_capacity(b * v * d);
    for _ in 0..b {
        let base: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..v {
            data.extend(base.iter().map(|x| x + spread * rng.sample::<f64, _>(StandardNormal)));
        }
    }
    Batch { b, v, d, data }
}

fn array(batch: &Batch) -> Array {
    Array::from_vec(&[batch.b, batch.v, batch.d], batch.data.clone()).unwrap()
}

/// Shapes with `B, V ≤ 4`, `D ≤ 16` and at least two views in the batch.
fn random_shape(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    loop {
        let (b, v, d) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(2..=16));
        if b * v >= 2 {
            return (b, v, d);
        }
    }
}

const MODES: [RepulsionMode; 4] = [
    RepulsionMode::All,
    RepulsionMode::NegativesOnly,
    RepulsionMode::PositivesOnly,
    RepulsionMode::Off,
];

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut tested, mut redrawn) = (0.0f64, 0, 0);
    while tested < 50 {
        let (b, v, d) = random_shape(&mut rng);
        let batch = random_batch(&mut rng, b, v, d, 0.3);
        // finite differences straddling a ReLU or max kink are meaningless
        if kink_margin(&batch, ALPHA) <= 1e-3 {
            redrawn += 1;
            continue;
        }
        let mode = MODES[tested % MODES.len()];
        let lambda = rng.random_range(0.0..1.0);
        let cfg = LossConfig { alpha: ALPHA, norm_lambda: lambda, repulsion: mode };
        let (_, grad) = value_and_grad(&array(&batch), &cfg).unwrap();
        let fd = frozen_target_fd(&batch, ALPHA, lambda, mode, 1e-5);
        worst = worst.max(max_rel_err(grad.data(), &fd, 1e-6));
        tested += 1;
    }
    outcome(worst < 1e-4, format!("50 batches, max rel err {worst:.2e} (< 1e-4), {redrawn} redrawn near kinks"))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (b, v, d) = random_shape(&mut rng);
        let spread = rng.random_range(0.0..1.0);
        let batch = random_batch(&mut rng, b, v, d, spread);
        let alpha = rng.random_range(0.05..0.95);
        let lambda = rng.random_range(0.0..1.0);
        let mode = MODES[i % MODES.len()];
        let got = evaluate(&array(&batch), &LossConfig { alpha, norm_lambda: lambda, repulsion: mode }).unwrap();
        let want = reference_loss(&batch, alpha, lambda, mode);
        for (g, w) in [
            (got.alignment, want.alignment),
            (got.repulsion, want.repulsion),
            (got.normalization, want.normalization),
            (got.total, want.total),
        ] {
            if g != w {
                worst = worst.max((g - w).abs() / w.abs());
            }
        }
    }
    outcome(worst < 1e-12, format!("100 batches, max rel err {worst:.2e} (< 1e-12)"))
}

fn stop_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (b, v, d) = random_shape(&mut rng);
        let batch = random_batch(&mut rng, b, v, d, 0.4);
        let x = array(&batch);
        let cfg = LossConfig { norm_lambda: 0.0, repulsion: RepulsionMode::Off, ..LossConfig::default() };
        let mut tape = Tape::new();
        let f = tape.leaf(x.clone());
        let terms = hypersolid_loss(&mut tape, f, &cfg).unwrap();
        let through = tape.backward(terms.alignment).unwrap().wrt(f);

        let c = common::targets(&batch);
        let owner: Vec<f64> = (0..batch.m()).flat_map(|i| c[i / batch.v].clone()).collect();
        let mut tape = Tape::new();
        let f = tape.leaf(x);
        let flat = tape.reshape(f, &[batch.m(), batch.d]).unwrap();
        let xn = tape.normalize_rows(flat, 1e-12).unwrap();
        let t = tape.leaf(Array::from_vec(&[batch.m(), batch.d], owner).unwrap());
        let prod = tape.mul(xn, t).unwrap();
        let cos = tape.row_sum(prod).unwrap();
        let neg = tape.scale(cos, -1.0);
        let dist = tape.add_scalar(neg, 1.0);
        let loss = tape.mean(dist);
        let constant = tape.backward(loss).unwrap().wrt(f);
        for (a, b) in through.data().iter().zip(constant.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst < 1e-12, format!("50 batches, max abs diff {worst:.2e} (< 1e-12)"))
}

fn zero_gradient_sparsity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut below, mut nonzero) = (0usize, 0usize);
    for _ in 0..100 {
        let (b, v, d) = random_shape(&mut rng);
        let batch = random_batch(&mut rng, b, v, d, 0.25);
        let mut tape = Tape::new();
        let f = tape.leaf(array(&batch));
        let r = repulsion_loss(&mut tape, f, ALPHA, RepulsionMode::All).unwrap();
        let grads = tape.backward(r.loss).unwrap();
        let sim = tape.value(r.similarity);
        for (s, g) in sim.data().iter().zip(grads.wrt(r.similarity).data()) {
            if *s < ALPHA - 1e-6 {
                below += 1;
                nonzero += usize::from(*g != 0.0);
            }
        }
    }
    // a batch entirely below the threshold gets no repulsion gradient at all
    let spread = Array::from_vec(&[2, 2, 4], Array::eye(4).into_data()).unwrap();
    let mut tape = Tape::new();
    let f = tape.leaf(spread);
    let r = repulsion_loss(&mut tape, f, ALPHA, RepulsionMode::All).unwrap();
    let whole = tape.backward(r.loss).unwrap().wrt(f);
    let clean = whole.data().iter().all(|g| *g == 0.0);
    outcome(
        nonzero == 0 && clean,
        format!("{below} sub-threshold pairs, {nonzero} with nonzero gradient; orthogonal batch gradient zero: {clean}"),
    )
}

struct Run {
    params: Parameters,
    test: EmbeddingSet,
    knn: f64,
    geometry: GeometryReport,
    markov_checked: usize,
    markov_violations: usize,
    seconds: f64,
}

fn dataset(seed: u64) -> Dataset {
    synthetic_clusters(&SyntheticConfig::default(), seed).unwrap()
}

fn run_training(mode: RepulsionMode, seed: u64) -> Run {
    let data = dataset(seed);
    let mut cfg = TrainConfig::default();
    cfg.seed = seed;
    cfg.epochs = EPOCHS;
    cfg.encoder.input_dim = data.train.input_dim();
    cfg.encoder.projector_dim = PROJECTOR_DIM;
    cfg.loss.alpha = ALPHA;
    cfg.loss.repulsion = mode;
    cfg.probe_every = 0;
    let (mut checked, mut violations) = (0usize, 0usize);
    let start = Instant::now();
    let watch = mode == RepulsionMode::All && seed == 0;
    let out = train_with_observer(&data, &cfg, &mut |rec| {
        if !watch {
            return;
        }
        let shape = rec.feats.shape();
        let batch = Batch { b: shape[0], v: shape[1], d: shape[2], data: rec.feats.data().to_vec() };
        let m = batch.m() as f64;
        if m < 2.0 {
            return;
        }
        let cos = pair_cosines(&batch);
        for eps in [0.01, 0.02, 0.05] {
            let freq = cos.iter().filter(|c| **c > ALPHA + eps).count() as f64 / cos.len() as f64;
            let bound = rec.loss.repulsion * (1.0 - ALPHA) / eps * m * m / (m * m - m);
            checked += 1;
            violations += usize::from(freq > bound + 1e-12);
        }
    })
    .unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let train = embed(&out.params, &data.train).unwrap();
    let test = embed(&out.params, &data.test).unwrap();
    let knn = knn_probe(&train, &test, 5).unwrap().top1;
    let geometry = geometry_report(&test, PAIR_SAMPLES, seed).unwrap();
    eprintln!(
        "  trained {mode} seed {seed}: knn {knn:.4}, erank {:.3}, mpa {:.2}, {seconds:.1}s",
        geometry.embedding_rank.unwrap_or(f64::NAN),
        geometry.mpa_degrees
    );
    Run { params: out.params, test, knn, geometry, markov_checked: checked, markov_violations: violations, seconds }
}

fn runs() -> &'static HashMap<(RepulsionMode, u64), Run> {
    static RUNS: OnceLock<HashMap<(RepulsionMode, u64), Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut map = HashMap::new();
        for seed in SEEDS {
            for mode in MODES {
                map.insert((mode, seed), run_training(mode, seed));
            }
        }
        map
    })
}

fn run(mode: RepulsionMode, seed: u64) -> &'static Run {
    &runs()[&(mode, seed)]
}

fn markov_bound() -> Outcome {
    let r = run(RepulsionMode::All, 0);
    outcome(
        r.markov_checked > 0 && r.markov_violations == 0,
        format!("{} (batch, eps) checks, {} violations", r.markov_checked, r.markov_violations),
    )
}

fn rank(r: &Run) -> f64 {
    r.geometry.embedding_rank.unwrap_or(f64::NAN)
}

fn collapse_ablation() -> Outcome {
    let data = dataset(0);
    let raw = |s: &hypersolid::views::SampleSource| {
        EmbeddingSet::new(s.samples().clone(), s.labels().map(|l| l.to_vec())).unwrap()
    };
    let raw_knn = knn_probe(&raw(&data.train), &raw(&data.test), 5).unwrap().top1;
    let (full, off) = (run(RepulsionMode::All, 0), run(RepulsionMode::Off, 0));
    let pass = raw_knn >= 0.99 && rank(off) < 2.0 && rank(full) > 10.0 && full.knn >= 0.95;
    let time = full.seconds + off.seconds;
    outcome(
        pass,
        format!(
            "raw knn {raw_knn:.4} (>= 0.99); alignment-only erank {:.3} (< 2), cvn {:.4}; full erank {:.3} (> 10), knn {:.4} (>= 0.95); {time:.0}s",
            rank(off),
            off.geometry.cvn,
            rank(full),
            full.knn
        ),
    )
}

fn d_prime(r: &Run) -> f64 {
    r.geometry.d_prime.map(|d| d.value).unwrap_or(f64::NAN)
}

fn emergent_separation() -> Outcome {
    let (full, off) = (run(RepulsionMode::All, 0), run(RepulsionMode::Off, 0));
    let mpa = full.geometry.mpa_degrees;
    let pass = mpa > MPA_FLOOR_DEGREES && d_prime(full) > d_prime(off);
    outcome(
        pass,
        format!("mpa {mpa:.2} deg (> {MPA_FLOOR_DEGREES}); d' full {:.3} > alignment-only {:.3}", d_prime(full), d_prime(off)),
    )
}

fn mode_ordering() -> Outcome {
    let chance = 1.0 / SyntheticConfig::default().classes as f64;
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let (all, neg, pos) = (
            run(RepulsionMode::All, seed).knn,
            run(RepulsionMode::NegativesOnly, seed).knn,
            run(RepulsionMode::PositivesOnly, seed).knn,
        );
        pass &= all > neg && neg > pos && pos <= chance + 0.1;
        parts.push(format!("seed {seed}: all {all:.4} neg {neg:.4} pos {pos:.4}"));
    }
    outcome(pass, format!("{}; pos-only bound {:.3}", parts.join(", "), chance + 0.1))
}

fn metric_closed_forms() -> Outcome {
    let ranks = [
        (vec![1.0, 1.0, 1.0, 1.0], 4.0),
        (vec![1.0, 1.0, 0.0, 0.0], 2.0),
        (vec![2.0, 1.0, 1.0], 2.0f64.powf(1.5)),
    ];
    let rank_err = ranks
        .iter()
        .map(|(s, want)| (effective_rank_from_spectrum(s).unwrap() - want).abs())
        .fold(0.0, f64::max);

    let full = run(RepulsionMode::All, 0);
    let reference = full.test.select(&(0..300).collect::<Vec<_>>()).unwrap();
    let rows: Vec<Vec<f64>> = (0..reference.len()).map(|i| reference.row(i).to_vec()).collect();
    let pairs = sample_walk_pairs(reference.labels().unwrap(), 10, 0);
    let steps = 20;
    let profile = energy_walk(&reference, &pairs, steps, false).unwrap();
    let mut mismatches = 0;
    let mut points = 0;
    for trace in &profile.traces {
        for (s, e) in trace.energy.iter().enumerate() {
            let t = s as f64 / steps as f64;
            let p: Vec<f64> = rows[trace.from].iter().zip(&rows[trace.to]).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            points += 1;
            mismatches += usize::from(*e != common::brute_energy(&p, &rows));
        }
    }

    let tv = total_variation(&[0.0, 1.0, 1.0, 0.0], (2, 2)).unwrap();
    let pass = rank_err < 1e-9 && mismatches == 0 && tv == 4.0;
    outcome(
        pass,
        format!("erank max err {rank_err:.1e} (< 1e-9); energy {mismatches}/{points} mismatches vs brute force; checkerboard TV {tv}"),
    )
}

fn inversion_round_trip() -> Outcome {
    let full = run(RepulsionMode::All, 0);
    let params = &full.params;
    let before = params.checksum();
    let p = params.config.input_dim;
    let cfg = InversionConfig { scales: vec![1.0], steps_per_scale: 4000, ..InversionConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let x0: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let target = params.encode(&Array::from_vec(&[1, p], x0).unwrap()).unwrap().normalize_rows(1e-12);
        let inv = invert(params, target.data(), InputShape::Vector(p), &cfg, i).unwrap();
        worst = worst.max(inv.distance);
    }
    let unchanged = params.checksum() == before;
    outcome(
        worst < 0.05 && unchanged,
        format!("10 targets, worst cosine distance {worst:.2e} (< 0.05) in 4000 steps; parameters unchanged: {unchanged}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_hypersolid"))
            .args(["train", "--seed", "7", "--threads", "1", "--epochs", "2", "--projector-dim", "64"])
            .arg("--out-dir")
            .arg(&out)
            .env("RUST_LOG", "error")
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("train exited with {status}"));
        }
        outputs.push((fs::read(out.join("epochs.csv")).unwrap(), fs::read(out.join("model.ckpt")).unwrap()));
    }
    let same_csv = outputs[0].0 == outputs[1].0;
    let same_ckpt = outputs[0].1 == outputs[1].1;
    outcome(
        same_csv && same_ckpt,
        format!("epochs.csv identical: {same_csv}; model.ckpt identical: {same_ckpt} ({} bytes)", outputs[0].1.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored
    let criteria: [Criterion; 11] = [
        ("gradient correctness", gradient_correctness),
        ("oracle equivalence", oracle_equivalence),
        ("stop-gradient", stop_gradient),
        ("zero-gradient sparsity", zero_gradient_sparsity),
        ("Markov bound", markov_bound),
        ("collapse ablation", collapse_ablation),
        ("emergent separation", emergent_separation),
        ("repulsion mode ordering", mode_ordering),
        ("metric closed forms", metric_closed_forms),
        ("inversion round trip", inversion_round_trip),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("{status} criterion {}: {name}: {} [{:.1}s]", i + 1, o.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
