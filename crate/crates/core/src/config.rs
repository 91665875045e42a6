//! Flat `key=value` run configuration with dotted namespaces
//! (`loss.alpha=0.9`). Every key has a default; `to_text` materializes all of
//! them so a resolved config can be replayed verbatim.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::inversion::InversionConfig;
use crate::trainer::TrainConfig;
use crate::views::{self, Dataset, GridConfig, SampleSource, SyntheticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceChoice {
    Synthetic,
    Grid,
    Hseb,
}

impl SourceChoice {
    fn name(self) -> &'static str {
        match self {
            SourceChoice::Synthetic => "synthetic",
            SourceChoice::Grid => "grid",
            SourceChoice::Hseb => "hseb",
        }
    }
}

impl FromStr for SourceChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(SourceChoice::Synthetic),
            "grid" => Ok(SourceChoice::Grid),
            "hseb" => Ok(SourceChoice::Hseb),
            other => Err(Error::Config(format!(
                "data.source must be synthetic, grid or hseb, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: SourceChoice,
    pub synthetic: SyntheticConfig,
    pub grid: GridConfig,
    /// HSEB sample file and optional labels (source = hseb).
    pub path: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceChoice::Synthetic,
            synthetic: SyntheticConfig::default(),
            grid: GridConfig::default(),
            path: None,
            labels: None,
            test_fraction: 0.2,
        }
    }
}

impl DataConfig {
    /// Builds the train/test split; `seed` fixes prototypes and sampling.
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        match self.source {
            SourceChoice::Synthetic => views::synthetic_clusters(&self.synthetic, seed),
            SourceChoice::Grid => views::synthetic_grid(&self.grid, seed),
            SourceChoice::Hseb => {
                let path = self
                    .path
                    .as_deref()
                    .ok_or_else(|| Error::Config("data.source=hseb needs data.path".into()))?;
                let set = crate::embeddings::load_embeddings(path, self.labels.as_deref())?;
                let source = SampleSource::from_embeddings(set)?;
                Dataset::split(&source, self.test_fraction, seed)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WalkReference {
    /// Walk endpoints and neighbours both come from the test split.
    Test,
    /// Neighbours come from train and test; endpoints from test.
    All,
}

impl FromStr for WalkReference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(WalkReference::Test),
            "all" => Ok(WalkReference::All),
            other => Err(Error::Config(format!(
                "walk.reference must be test or all, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub pair_samples: usize,
    pub hist_bins: usize,
    pub walk_pairs: usize,
    pub walk_steps: usize,
    pub walk_exclude_endpoints: bool,
    pub walk_reference: WalkReference,
    pub inversion: InversionConfig,
    pub invert_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            pair_samples: 20_000,
            hist_bins: 256,
            walk_pairs: 100,
            walk_steps: 20,
            walk_exclude_endpoints: false,
            walk_reference: WalkReference::Test,
            inversion: InversionConfig::default(),
            invert_count: 4,
        }
    }
}

/// Every accepted key, in the order `to_text` writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "data.source",
    "data.dim",
    "data.classes",
    "data.train_size",
    "data.test_size",
    "data.class_sigma",
    "data.height",
    "data.width",
    "data.pixel_sigma",
    "data.path",
    "data.labels",
    "data.test_fraction",
    "views.global",
    "views.local",
    "views.noise_sigma",
    "views.mask_global",
    "views.mask_local",
    "views.crop_global",
    "views.crop_local",
    "views.flip_prob",
    "model.hidden_dims",
    "model.projector_dim",
    "model.activation",
    "loss.alpha",
    "loss.norm_lambda",
    "loss.repulsion",
    "train.lr",
    "train.weight_decay",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.batch_size",
    "train.epochs",
    "train.probe_every",
    "train.knn_k",
    "probe.linear_epochs",
    "probe.linear_lr",
    "analysis.pair_samples",
    "analysis.bins",
    "walk.pairs",
    "walk.steps",
    "walk.exclude_endpoints",
    "walk.reference",
    "invert.scales",
    "invert.steps_per_scale",
    "invert.lr",
    "invert.tv_weight",
    "invert.jitter_max",
    "invert.smooth_every",
    "invert.smooth_sigma",
    "invert.count",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, value)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::Config(format!("{key}: expected two comma-separated numbers"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown key {key:?}; valid keys: {}", KEYS.join(", ")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data.source" => self.data.source = v.parse()?,
            "data.dim" => self.data.synthetic.dim = parse(key, v)?,
            "data.classes" => {
                let k = parse(key, v)?;
                self.data.synthetic.classes = k;
                self.data.grid.classes = k;
            }
            "data.train_size" => {
                let n = parse(key, v)?;
                self.data.synthetic.train_size = n;
                self.data.grid.train_size = n;
            }
            "data.test_size" => {
                let n = parse(key, v)?;
                self.data.synthetic.test_size = n;
                self.data.grid.test_size = n;
            }
            "data.class_sigma" => self.data.synthetic.class_sigma = parse(key, v)?,
            "data.height" => self.data.grid.height = parse(key, v)?,
            "data.width" => self.data.grid.width = parse(key, v)?,
            "data.pixel_sigma" => self.data.grid.pixel_sigma = parse(key, v)?,
            "data.path" => self.data.path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.labels" => self.data.labels = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.test_fraction" => self.data.test_fraction = parse(key, v)?,
            "views.global" => t.views.global_views = parse(key, v)?,
            "views.local" => t.views.local_views = parse(key, v)?,
            "views.noise_sigma" => t.views.noise_sigma = parse(key, v)?,
            "views.mask_global" => t.views.mask_fraction_global = parse(key, v)?,
            "views.mask_local" => t.views.mask_fraction_local = parse(key, v)?,
            "views.crop_global" => t.views.crop_scale_global = parse_range(key, v)?,
            "views.crop_local" => t.views.crop_scale_local = parse_range(key, v)?,
            "views.flip_prob" => t.views.flip_prob = parse(key, v)?,
            "model.hidden_dims" => t.encoder.hidden_dims = parse_list(key, v)?,
            "model.projector_dim" => t.encoder.projector_dim = parse(key, v)?,
            "model.activation" => t.encoder.activation = v.parse()?,
            "loss.alpha" => t.loss.alpha = parse(key, v)?,
            "loss.norm_lambda" => t.loss.norm_lambda = parse(key, v)?,
            "loss.repulsion" => t.loss.repulsion = v.parse()?,
            "train.lr" => t.optimizer.lr = parse(key, v)?,
            "train.weight_decay" => t.optimizer.weight_decay = parse(key, v)?,
            "train.beta1" => t.optimizer.beta1 = parse(key, v)?,
            "train.beta2" => t.optimizer.beta2 = parse(key, v)?,
            "train.eps" => t.optimizer.eps = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.probe_every" => t.probe_every = parse(key, v)?,
            "train.knn_k" => t.knn_k = parse(key, v)?,
            "probe.linear_epochs" => t.linear_probe.epochs = parse(key, v)?,
            "probe.linear_lr" => t.linear_probe.lr = parse(key, v)?,
            "analysis.pair_samples" => self.pair_samples = parse(key, v)?,
            "analysis.bins" => self.hist_bins = parse(key, v)?,
            "walk.pairs" => self.walk_pairs = parse(key, v)?,
            "walk.steps" => self.walk_steps = parse(key, v)?,
            "walk.exclude_endpoints" => self.walk_exclude_endpoints = parse(key, v)?,
            "walk.reference" => self.walk_reference = v.parse()?,
            "invert.scales" => self.inversion.scales = parse_list(key, v)?,
            "invert.steps_per_scale" => self.inversion.steps_per_scale = parse(key, v)?,
            "invert.lr" => self.inversion.lr = parse(key, v)?,
            "invert.tv_weight" => self.inversion.tv_weight = parse(key, v)?,
            "invert.jitter_max" => self.inversion.jitter_max = parse(key, v)?,
            "invert.smooth_every" => self.inversion.smooth_every = parse(key, v)?,
            "invert.smooth_sigma" => self.inversion.smooth_sigma = parse(key, v)?,
            "invert.count" => self.invert_count = parse(key, v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let s = match key {
            "seed" => self.seed.to_string(),
            "data.source" => self.data.source.name().to_string(),
            "data.dim" => self.data.synthetic.dim.to_string(),
            "data.classes" => self.data.synthetic.classes.to_string(),
            "data.train_size" => self.data.synthetic.train_size.to_string(),
            "data.test_size" => self.data.synthetic.test_size.to_string(),
            "data.class_sigma" => self.data.synthetic.class_sigma.to_string(),
            "data.height" => self.data.grid.height.to_string(),
            "data.width" => self.data.grid.width.to_string(),
            "data.pixel_sigma" => self.data.grid.pixel_sigma.to_string(),
            "data.path" => path_text(&self.data.path),
            "data.labels" => path_text(&self.data.labels),
            "data.test_fraction" => self.data.test_fraction.to_string(),
            "views.global" => t.views.global_views.to_string(),
            "views.local" => t.views.local_views.to_string(),
            "views.noise_sigma" => t.views.noise_sigma.to_string(),
            "views.mask_global" => t.views.mask_fraction_global.to_string(),
            "views.mask_local" => t.views.mask_fraction_local.to_string(),
            "views.crop_global" => join(&[t.views.crop_scale_global.0, t.views.crop_scale_global.1]),
            "views.crop_local" => join(&[t.views.crop_scale_local.0, t.views.crop_scale_local.1]),
            "views.flip_prob" => t.views.flip_prob.to_string(),
            "model.hidden_dims" => join(&t.encoder.hidden_dims),
            "model.projector_dim" => t.encoder.projector_dim.to_string(),
            "model.activation" => t.encoder.activation.to_string(),
            "loss.alpha" => t.loss.alpha.to_string(),
            "loss.norm_lambda" => t.loss.norm_lambda.to_string(),
            "loss.repulsion" => t.loss.repulsion.to_string(),
            "train.lr" => t.optimizer.lr.to_string(),
            "train.weight_decay" => t.optimizer.weight_decay.to_string(),
            "train.beta1" => t.optimizer.beta1.to_string(),
            "train.beta2" => t.optimizer.beta2.to_string(),
            "train.eps" => t.optimizer.eps.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.probe_every" => t.probe_every.to_string(),
            "train.knn_k" => t.knn_k.to_string(),
            "probe.linear_epochs" => t.linear_probe.epochs.to_string(),
            "probe.linear_lr" => t.linear_probe.lr.to_string(),
            "analysis.pair_samples" => self.pair_samples.to_string(),
            "analysis.bins" => self.hist_bins.to_string(),
            "walk.pairs" => self.walk_pairs.to_string(),
            "walk.steps" => self.walk_steps.to_string(),
            "walk.exclude_endpoints" => self.walk_exclude_endpoints.to_string(),
            "walk.reference" => match self.walk_reference {
                WalkReference::Test => "test".into(),
                WalkReference::All => "all".into(),
            },
            "invert.scales" => join(&self.inversion.scales),
            "invert.steps_per_scale" => self.inversion.steps_per_scale.to_string(),
            "invert.lr" => self.inversion.lr.to_string(),
            "invert.tv_weight" => self.inversion.tv_weight.to_string(),
            "invert.jitter_max" => self.inversion.jitter_max.to_string(),
            "invert.smooth_every" => self.inversion.smooth_every.to_string(),
            "invert.smooth_sigma" => self.inversion.smooth_sigma.to_string(),
            "invert.count" => self.invert_count.to_string(),
            _ => return Err(unknown(key)),
        };
        Ok(s)
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// All keys with their current values, one `key=value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config("data.test_fraction must lie in [0, 1)".into()));
        }
        if self.pair_samples == 0 || self.hist_bins == 0 {
            return Err(Error::Config("analysis.pair_samples and analysis.bins must be positive".into()));
        }
        if self.walk_steps < 2 {
            return Err(Error::Config("walk.steps must be at least 2".into()));
        }
        self.inversion.validate()?;
        let mut train = self.train.clone();
        train.encoder.input_dim = train.encoder.input_dim.max(1);
        train.validate()
    }
}
