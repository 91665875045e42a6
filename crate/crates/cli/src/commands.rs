use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use hypersolid::config::{RunConfig, WalkReference};
use hypersolid::embeddings::{load_embeddings, EmbeddingSet};
use hypersolid::geometry::{geometry_report, similarity_histogram, write_geometry_csv, write_histogram_csv};
use hypersolid::hseb::{self, Dtype};
use hypersolid::inversion::{invert, InputShape};
use hypersolid::model::{load_checkpoint, save_checkpoint, Parameters};
use hypersolid::probes::{append_probe_results, knn_probe, linear_probe};
use hypersolid::topology::{energy_walk, sample_walk_pairs, write_walks_csv};
use hypersolid::trainer::{embed, train, write_epochs_csv};
use hypersolid::views::{Dataset, SampleSource};
use hypersolid::{Array, Error, Result};

use crate::manifest::RunManifest;
use crate::{Cli, Command, Global};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the norm penalty.
    #[arg(long)]
    lambda: Option<f64>,
    /// all | negatives-only | positives-only | off
    #[arg(long)]
    repulsion: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    projector_dim: Option<usize>,
    /// synthetic | grid | hseb
    #[arg(long)]
    source: Option<String>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Row name in geometry.csv.
    #[arg(long, default_value = "embeddings")]
    name: String,
    #[arg(long)]
    pair_samples: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args, Debug)]
pub struct WalkArgs {
    /// Walk between rows of this file (needs --labels) ...
    #[arg(long, conflicts_with = "checkpoint", requires = "labels")]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// ... or between encoded test samples of the configured source.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    exclude_endpoints: bool,
    /// test | all (neighbours from the test split only, or train and test)
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Encode the configured source with this checkpoint ...
    #[arg(long, conflicts_with_all = ["train_embeddings", "test_embeddings"])]
    checkpoint: Option<PathBuf>,
    /// ... or probe precomputed embeddings.
    #[arg(long, requires_all = ["train_labels", "test_embeddings", "test_labels"])]
    train_embeddings: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_embeddings: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    linear_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InvertArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of test samples whose embeddings are inverted.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// train | test
    #[arg(long, default_value = "test")]
    split: String,
    /// f32 | f64
    #[arg(long, default_value = "f64")]
    dtype: String,
}

/// Defaults, then the config file, then `--set`, then command flags.
fn resolve(global: &Global, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &global.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for pair in &global.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {pair:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn some<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Train(a) => {
            let cfg = resolve(
                g,
                &[
                    ("train.epochs", some(&a.epochs)),
                    ("loss.alpha", some(&a.alpha)),
                    ("loss.norm_lambda", some(&a.lambda)),
                    ("loss.repulsion", a.repulsion.clone()),
                    ("train.batch_size", some(&a.batch_size)),
                    ("train.lr", some(&a.lr)),
                    ("model.projector_dim", some(&a.projector_dim)),
                    ("data.source", a.source.clone()),
                ],
            )?;
            init_threads(g.threads)?;
            cmd_train(g, cfg)
        }
        Command::Analyze(a) => {
            let cfg = resolve(
                g,
                &[
                    ("analysis.pair_samples", some(&a.pair_samples)),
                    ("analysis.bins", some(&a.bins)),
                ],
            )?;
            init_threads(g.threads)?;
            cmd_analyze(g, cfg, a)
        }
        Command::Walk(a) => {
            let cfg = resolve(
                g,
                &[
                    ("walk.pairs", some(&a.pairs)),
                    ("walk.steps", some(&a.steps)),
                    ("walk.exclude_endpoints", a.exclude_endpoints.then(|| "true".to_string())),
                    ("walk.reference", a.reference.clone()),
                ],
            )?;
            init_threads(g.threads)?;
            cmd_walk(g, cfg, a)
        }
        Command::Probe(a) => {
            let cfg = resolve(
                g,
                &[
                    ("train.knn_k", some(&a.k)),
                    ("probe.linear_epochs", some(&a.linear_epochs)),
                ],
            )?;
            init_threads(g.threads)?;
            cmd_probe(g, cfg, a)
        }
        Command::Invert(a) => {
            let cfg = resolve(
                g,
                &[
                    ("invert.count", some(&a.count)),
                    ("invert.steps_per_scale", some(&a.steps)),
                ],
            )?;
            init_threads(g.threads)?;
            cmd_invert(g, cfg, a)
        }
        Command::ExportEmbeddings(a) => {
            let cfg = resolve(g, &[])?;
            let dtype: Dtype = a.dtype.parse()?;
            if a.split != "train" && a.split != "test" {
                return Err(Error::Config(format!("--split must be train or test, got {:?}", a.split)));
            }
            init_threads(g.threads)?;
            cmd_export(g, cfg, a, dtype)
        }
    }
}

fn begin(g: &Global, command: &str, cfg: &RunConfig, inputs: &[&Path], artifacts: &[&str]) -> Result<PathBuf> {
    let dir = g.out_dir.clone();
    let mut m = RunManifest::new(command, cfg, g.threads);
    m.inputs = inputs.iter().map(|p| p.to_path_buf()).collect();
    m.artifacts = artifacts.iter().map(|a| dir.join(a)).collect();
    m.write(&dir, cfg)?;
    Ok(dir)
}

fn cmd_train(g: &Global, mut cfg: RunConfig) -> Result<()> {
    let data = cfg.data.dataset(cfg.seed)?;
    cfg.train.encoder.input_dim = data.train.input_dim();
    cfg.train.seed = cfg.seed;
    let deterministic = g.threads == Some(1);
    let dir = begin(
        g,
        "train",
        &cfg,
        &[],
        &["model.ckpt", "epochs.csv", "timing.csv"],
    )?;
    cfg.train.checkpoint_dir = Some(dir.clone());
    let outcome = train(&data, &cfg.train)?;
    save_checkpoint(&dir.join("model.ckpt"), &outcome.params)?;
    // wall-clock seconds go to a side file so epochs.csv stays reproducible
    write_epochs_csv(&dir.join("epochs.csv"), &outcome.logs, !deterministic)?;
    let mut timing = String::from("epoch,seconds\n");
    for l in &outcome.logs {
        let _ = writeln!(timing, "{},{}", l.epoch, l.seconds);
    }
    fs::write(dir.join("timing.csv"), timing)?;
    Ok(())
}

fn cmd_analyze(g: &Global, cfg: RunConfig, a: &AnalyzeArgs) -> Result<()> {
    let mut inputs = vec![a.embeddings.as_path()];
    inputs.extend(a.labels.as_deref());
    let set = load_embeddings(&a.embeddings, a.labels.as_deref())?;
    let artifacts: &[&str] = if set.labels().is_some() {
        &["geometry.csv", "similarity_hist.csv"]
    } else {
        &["geometry.csv"]
    };
    let dir = begin(g, "analyze", &cfg, &inputs, artifacts)?;
    if set.labels().is_none() {
        log::warn!("no labels given: centroid rank, structure ratio and d' are left empty");
    }
    let report = geometry_report(&set, cfg.pair_samples, cfg.seed)?;
    write_geometry_csv(&dir.join("geometry.csv"), &[(a.name.as_str(), &report)])?;
    if set.labels().is_some() {
        let hist = similarity_histogram(&set, cfg.hist_bins, cfg.pair_samples, cfg.seed)?;
        write_histogram_csv(&dir.join("similarity_hist.csv"), &hist)?;
    } else {
        log::warn!("no labels given: similarity_hist.csv is not written");
    }
    Ok(())
}

fn checkpoint_and_data(cfg: &RunConfig, path: &Path) -> Result<(Parameters, Dataset)> {
    let params = load_checkpoint(path)?;
    let data = cfg.data.dataset(cfg.seed)?;
    if data.train.input_dim() != params.config.input_dim {
        return Err(Error::Dimension(format!(
            "checkpoint expects inputs of size {}, the data source provides {}",
            params.config.input_dim,
            data.train.input_dim()
        )));
    }
    Ok((params, data))
}

fn concat(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut data = a.vectors().data().to_vec();
    data.extend_from_slice(b.vectors().data());
    let labels = match (a.labels(), b.labels()) {
        (Some(x), Some(y)) => Some([x, y].concat()),
        _ => None,
    };
    EmbeddingSet::new(Array::from_vec(&[a.len() + b.len(), a.dim()], data)?, labels)
}

fn cmd_walk(g: &Global, cfg: RunConfig, a: &WalkArgs) -> Result<()> {
    let (endpoints, extra) = match (&a.embeddings, &a.checkpoint) {
        (Some(path), None) => (load_embeddings(path, a.labels.as_deref())?, None),
        (None, Some(ckpt)) => {
            let (params, data) = checkpoint_and_data(&cfg, ckpt)?;
            let test = embed(&params, &data.test)?;
            let train = match cfg.walk_reference {
                WalkReference::All => Some(embed(&params, &data.train)?),
                WalkReference::Test => None,
            };
            (test, train)
        }
        _ => return Err(Error::Config("walk needs --embeddings or --checkpoint".into())),
    };
    let labels = endpoints.require_labels("walk")?.to_vec();
    let reference = match &extra {
        Some(train) => concat(&endpoints, train)?,
        None => endpoints,
    };
    let inputs: Vec<&Path> = [a.embeddings.as_deref(), a.labels.as_deref(), a.checkpoint.as_deref()]
        .into_iter()
        .flatten()
        .collect();
    let dir = begin(g, "walk", &cfg, &inputs, &["walks.csv", "walk_traces.csv"])?;
    let pairs = sample_walk_pairs(&labels, cfg.walk_pairs, cfg.seed);
    let profile = energy_walk(&reference, &pairs, cfg.walk_steps, cfg.walk_exclude_endpoints)?;
    write_walks_csv(&dir.join("walks.csv"), &profile)?;
    let mut traces = String::from("from,to,positive,t,energy\n");
    for p in &profile.traces {
        for (t, e) in profile.t.iter().zip(&p.energy) {
            let _ = writeln!(traces, "{},{},{},{t},{e}", p.from, p.to, u8::from(p.positive));
        }
    }
    fs::write(dir.join("walk_traces.csv"), traces)?;
    Ok(())
}

fn cmd_probe(g: &Global, cfg: RunConfig, a: &ProbeArgs) -> Result<()> {
    let (train_set, test_set) = match (&a.checkpoint, &a.train_embeddings, &a.test_embeddings) {
        (Some(ckpt), None, None) => {
            let (params, data) = checkpoint_and_data(&cfg, ckpt)?;
            (embed(&params, &data.train)?, embed(&params, &data.test)?)
        }
        (None, Some(tr), Some(te)) => (
            load_embeddings(tr, a.train_labels.as_deref())?,
            load_embeddings(te, a.test_labels.as_deref())?,
        ),
        _ => {
            return Err(Error::Config(
                "probe needs --checkpoint or both --train-embeddings and --test-embeddings".into(),
            ))
        }
    };
    let inputs: Vec<&Path> = [
        a.checkpoint.as_deref(),
        a.train_embeddings.as_deref(),
        a.train_labels.as_deref(),
        a.test_embeddings.as_deref(),
        a.test_labels.as_deref(),
    ]
    .into_iter()
    .flatten()
    .collect();
    let dir = begin(g, "probe", &cfg, &inputs, &["probe_results.csv"])?;
    let mut linear_cfg = cfg.train.linear_probe.clone();
    linear_cfg.seed = cfg.seed;
    let knn = knn_probe(&train_set, &test_set, cfg.train.knn_k)?;
    let linear = linear_probe(&train_set, &test_set, &linear_cfg)?;
    append_probe_results(&dir.join("probe_results.csv"), &[knn, linear])
}

fn input_shape(source: &SampleSource) -> InputShape {
    match source.grid() {
        Some((h, w)) => InputShape::Grid(h, w),
        None => InputShape::Vector(source.input_dim()),
    }
}

fn cmd_invert(g: &Global, cfg: RunConfig, a: &InvertArgs) -> Result<()> {
    let (params, data) = checkpoint_and_data(&cfg, &a.checkpoint)?;
    let count = cfg.invert_count.min(data.test.len());
    if count == 0 {
        return Err(Error::Config("invert.count must be at least 1".into()));
    }
    let dir = begin(
        g,
        "invert",
        &cfg,
        &[a.checkpoint.as_path()],
        &["inversions.hseb", "inversion_log.jsonl"],
    )?;
    let rows: Vec<usize> = (0..count).collect();
    let targets = params.encode(data.test.subset(&rows)?.samples())?;
    let shape = input_shape(&data.test);
    let mut recon = Vec::with_capacity(count * shape.len());
    let mut log = String::new();
    for i in 0..count {
        let inv = invert(&params, targets.row(i), shape, &cfg.inversion, cfg.seed.wrapping_add(i as u64))?;
        recon.extend_from_slice(inv.input.data());
        for s in &inv.scales {
            let line = serde_json::json!({
                "target": i,
                "scale": s.scale,
                "height": s.height,
                "width": s.width,
                "steps": s.steps,
                "distance": s.distance,
            });
            let _ = writeln!(log, "{line}");
        }
    }
    hseb::write(
        &dir.join("inversions.hseb"),
        &Array::from_vec(&[count, shape.len()], recon)?,
        Dtype::F64,
    )?;
    fs::write(dir.join("inversion_log.jsonl"), log)?;
    Ok(())
}

fn cmd_export(g: &Global, cfg: RunConfig, a: &ExportArgs, dtype: Dtype) -> Result<()> {
    let (params, data) = checkpoint_and_data(&cfg, &a.checkpoint)?;
    let source = if a.split == "train" { &data.train } else { &data.test };
    let dir = begin(
        g,
        "export-embeddings",
        &cfg,
        &[a.checkpoint.as_path()],
        &["embeddings.hseb", "labels.txt"],
    )?;
    let set = embed(&params, source)?;
    hseb::write(&dir.join("embeddings.hseb"), set.vectors(), dtype)?;
    if let Some(labels) = set.labels() {
        hseb::write_labels(&dir.join("labels.txt"), labels)?;
    }
    Ok(())
}
