//! Training loop: sampled batches → multi-view augmentation → shared encoder →
//! loss → AdamW update, with per-epoch logging and periodic frozen probes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::loss::{hypersolid_loss, LossBreakdown, LossConfig};
use crate::model::{flatten_views, save_checkpoint, EncoderConfig, Parameters};
use crate::optim::{self, AdamWConfig, AdamWState};
use crate::probes::{knn_probe, linear_probe, LinearProbeConfig};
use crate::tensor::{Array, Tape};
use crate::views::{make_views, Dataset, SampleSource, ViewConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub views: ViewConfig,
    pub encoder: EncoderConfig,
    /// Probe every this many epochs; 0 disables probing.
    pub probe_every: usize,
    pub knn_k: usize,
    pub linear_probe: LinearProbeConfig,
    /// Where to leave `last_good.ckpt` when training hits non-finite values.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            batch_size: 128,
            epochs: 20,
            seed: 0,
            loss: LossConfig::default(),
            views: ViewConfig::default(),
            encoder: EncoderConfig::default(),
            probe_every: 5,
            knn_k: 5,
            linear_probe: LinearProbeConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr >= 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.optimizer.lr)));
        }
        if !(self.optimizer.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.optimizer.beta1) || !unit(self.optimizer.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.optimizer.eps > 0.0) {
            return Err(Error::Config("optimizer eps must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn k must be >= 1".into()));
        }
        self.loss.validate()?;
        self.views.validate()?;
        self.encoder.validate()
    }
}

/// Per-epoch summary. Probe accuracies are top-1 on the held-out split.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub seconds: f64,
    pub knn_top1: Option<f64>,
    pub linear_top1: Option<f64>,
}

/// What an observer sees after each batch's forward pass.
pub struct BatchRecord<'a> {
    pub epoch: usize,
    pub batch: usize,
    /// `B×V×D` pre-normalization projector outputs.
    pub feats: &'a Array,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub logs: Vec<EpochLog>,
}

pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(data, cfg, &mut |_| {})
}

/// Loss and parameter gradients of one raw view batch.
pub fn batch_gradients(
    params: &Parameters,
    raw: &Array,
    loss: &LossConfig,
) -> Result<(LossBreakdown, Array, Vec<Array>)> {
    let (b, v) = (raw.shape()[0], raw.shape()[1]);
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let x = tape.leaf(flatten_views(raw, params.config.input_dim)?);
    let out = params.forward_on_tape(&mut tape, &vars, x)?;
    let feats = tape.reshape(out, &[b, v, params.config.projector_dim])?;
    let terms = hypersolid_loss(&mut tape, feats, loss)?;
    let grads = tape.backward(terms.total)?;
    let param_grads = vars.all().into_iter().map(|p| grads.wrt(p)).collect();
    Ok((terms.breakdown(&tape), tape.value(feats).clone(), param_grads))
}

pub fn train_with_observer(
    data: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&BatchRecord<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let source = &data.train;
    if source.input_dim() != cfg.encoder.input_dim {
        return Err(Error::Config(format!(
            "encoder input dim {} does not match the source's {}",
            cfg.encoder.input_dim,
            source.input_dim()
        )));
    }
    let mut params = Parameters::init(&cfg.encoder, cfg.seed)?;
    let mut state = AdamWState::new(params.arrays());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = source.len();
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        // incomplete trailing batches are dropped
        for (bi, idx) in order.chunks_exact(batch).enumerate() {
            let view_seed = rng.next_u64();
            let raw = make_views(source, idx, &cfg.views, view_seed)?;
            let fail = |what: String| abort(&params, cfg, epoch, bi, what);
            let (loss, feats, grads) = match batch_gradients(&params, &raw, &cfg.loss) {
                Ok(r) => r,
                Err(Error::Numeric(msg)) => return Err(fail(msg)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(fail("non-finite loss".into()));
            }
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(fail("non-finite gradient".into()));
            }
            observer(&BatchRecord {
                epoch,
                batch: bi,
                feats: &feats,
                loss,
            });
            optim::step(&mut params.arrays_mut(), &grads, &mut state, &cfg.optimizer)?;
            sum.alignment += loss.alignment;
            sum.repulsion += loss.repulsion;
            sum.normalization += loss.normalization;
            sum.total += loss.total;
            batches += 1;
        }
        let k = batches as f64;
        let mean = LossBreakdown {
            alignment: sum.alignment / k,
            repulsion: sum.repulsion / k,
            normalization: sum.normalization / k,
            total: sum.total / k,
        };
        let (knn_top1, linear_top1) = if cfg.probe_every > 0 && (epoch + 1) % cfg.probe_every == 0 {
            probe_accuracies(&params, data, cfg)?
        } else {
            (None, None)
        };
        log::info!(
            "epoch {epoch}: total {:.6} (align {:.6}, repulse {:.6}, norm {:.3e})",
            mean.total,
            mean.alignment,
            mean.repulsion,
            mean.normalization
        );
        logs.push(EpochLog {
            epoch,
            loss: mean,
            seconds: start.elapsed().as_secs_f64(),
            knn_top1,
            linear_top1,
        });
    }
    Ok(TrainOutcome { params, logs })
}

fn abort(params: &Parameters, cfg: &TrainConfig, epoch: usize, batch: usize, what: String) -> Error {
    let saved = cfg.checkpoint_dir.as_ref().and_then(|dir| {
        let path = dir.join("last_good.ckpt");
        fs::create_dir_all(dir).ok()?;
        save_checkpoint(&path, params).ok()?;
        Some(path)
    });
    let tail = match saved {
        Some(p) => format!("; last good checkpoint at {}", p.display()),
        None => String::new(),
    };
    Error::Numeric(format!("epoch {epoch}, batch {batch}: {what}{tail}"))
}

fn probe_accuracies(
    params: &Parameters,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    if data.train.labels().is_none() || data.test.labels().is_none() {
        return Ok((None, None));
    }
    let train = embed(params, &data.train)?;
    let test = embed(params, &data.test)?;
    let k = cfg.knn_k.min(train.len());
    let knn = knn_probe(&train, &test, k)?.top1;
    let linear = linear_probe(&train, &test, &cfg.linear_probe)?.top1;
    Ok((Some(knn), Some(linear)))
}

/// Projector outputs of the un-augmented samples, labels carried over.
pub fn embed(params: &Parameters, source: &SampleSource) -> Result<EmbeddingSet> {
    const CHUNK: usize = 512;
    let n = source.len();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let rows: Vec<usize> = (s..(s + CHUNK).min(n)).collect();
            let sub = source.subset(&rows)?;
            params.encode(sub.samples())
        })
        .collect::<Result<Vec<Array>>>()?;
    let d = params.config.projector_dim;
    let data: Vec<f64> = parts.into_iter().flat_map(Array::into_data).collect();
    EmbeddingSet::new(
        Array::from_vec(&[n, d], data)?,
        source.labels().map(<[usize]>::to_vec),
    )
}

pub const EPOCHS_HEADER: &str = "epoch,align,repulse,norm,total,knn_acc,linear_acc,seconds";

/// Renders `epochs.csv`. With `with_seconds = false` the wall-clock column is
/// left empty so the file is reproducible byte for byte.
pub fn epochs_csv(logs: &[EpochLog], with_seconds: bool) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(EPOCHS_HEADER);
    out.push('\n');
    for l in logs {
        let secs = if with_seconds {
            format!("{:.3}", l.seconds)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            l.epoch,
            l.loss.alignment,
            l.loss.repulsion,
            l.loss.normalization,
            l.loss.total,
            opt(l.knn_top1),
            opt(l.linear_top1),
            secs
        );
    }
    out
}

pub fn write_epochs_csv(path: &Path, logs: &[EpochLog], with_seconds: bool) -> Result<()> {
    fs::write(path, epochs_csv(logs, with_seconds))?;
    Ok(())
}
