//! Sample sources and multi-view batch generation.
//!
//! Every sample yields `global_views + local_views` augmented views. In vector
//! mode a view is the sample plus Gaussian noise with a random subset of
//! coordinates zeroed (local views mask more). In grid mode a view is a random
//! crop resized back to the full grid, optionally flipped, plus noise. Global
//! and local views only differ in those parameters.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::grid::{self, Interpolation};
use crate::tensor::Array;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    SyntheticClusters,
    GridDataset,
    ExternalEmbeddings,
}

/// Raw inputs for training or evaluation, one row per sample.
#[derive(Clone, Debug)]
pub struct SampleSource {
    kind: SourceKind,
    samples: Array,
    labels: Option<Vec<usize>>,
    grid: Option<(usize, usize)>,
}

/// A train split for self-supervised training and a held-out split for probes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: SampleSource,
    pub test: SampleSource,
}

impl SampleSource {
    pub fn new(
        kind: SourceKind,
        samples: Array,
        labels: Option<Vec<usize>>,
        grid: Option<(usize, usize)>,
    ) -> Result<Self> {
        let (n, p) = samples.dims2()?;
        if n == 0 || p == 0 {
            return Err(Error::Empty(format!("sample source is {n}x{p}")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::format(format!("{} labels for {n} samples", l.len())));
            }
        }
        if let Some((h, w)) = grid {
            if h * w != p {
                return Err(Error::dim(format!("grid {h}x{w} does not match input dim {p}")));
            }
        }
        Ok(Self {
            kind,
            samples,
            labels,
            grid,
        })
    }

    /// Vector-mode source over externally produced vectors.
    pub fn from_embeddings(set: EmbeddingSet) -> Result<Self> {
        let labels = set.labels().map(<[usize]>::to_vec);
        Self::new(SourceKind::ExternalEmbeddings, set.vectors().clone(), labels, None)
    }

    /// Grid-mode source whose rows are flattened `height × width` images.
    pub fn from_grid_rows(set: EmbeddingSet, grid: (usize, usize)) -> Result<Self> {
        let labels = set.labels().map(<[usize]>::to_vec);
        Self::new(SourceKind::GridDataset, set.vectors().clone(), labels, Some(grid))
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened input dimension P.
    pub fn input_dim(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn samples(&self) -> &Array {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> Option<usize> {
        self.labels().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let picked: Vec<&[f64]> = rows.iter().map(|&r| self.samples.row(r)).collect();
        let labels = self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect());
        Self::new(self.kind, Array::from_rows(&picked)?, labels, self.grid)
    }
}

impl Dataset {
    /// Seeded random split with `round(n·test_fraction)` held-out samples.
    pub fn split(source: &SampleSource, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::arg(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let n = source.len();
        let n_test = ((n as f64) * test_fraction).round() as usize;
        if n_test == 0 || n_test >= n {
            return Err(Error::arg(format!(
                "split of {n} samples leaves {n_test} for testing"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = index::sample(&mut rng, n, n).into_vec();
        let (test, train) = order.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self {
            train: source.subset(&train)?,
            test: source.subset(&test)?,
        })
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Class-prototype mixture: `classes` prototypes uniform on the unit sphere
/// in `R^dim`, samples = prototype + isotropic Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub class_sigma: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            classes: 8,
            train_size: 4096,
            test_size: 1024,
            class_sigma: 0.15,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.classes == 0 || self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if !(self.class_sigma >= 0.0) {
            return Err(Error::Config("class sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Balanced labels `i mod classes`; the prototypes depend only on `seed`.
pub fn synthetic_clusters(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.dim).map(|_| gaussian(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Result<SampleSource> {
        let mut data = Vec::with_capacity(n * cfg.dim);
        let labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
        for &l in &labels {
            data.extend(
                prototypes[l]
                    .iter()
                    .map(|p| p + cfg.class_sigma * gaussian(rng)),
            );
        }
        SampleSource::new(
            SourceKind::SyntheticClusters,
            Array::from_vec(&[n, cfg.dim], data)?,
            Some(labels),
            None,
        )
    };
    let train = draw(cfg.train_size, &mut rng)?;
    let test = draw(cfg.test_size, &mut rng)?;
    Ok(Dataset { train, test })
}

/// Tiny synthetic image dataset: every class prototype is a sum of three
/// random Gaussian blobs on an `height × width` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub pixel_sigma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            classes: 8,
            train_size: 4096,
            test_size: 1024,
            pixel_sigma: 0.1,
        }
    }
}

pub fn synthetic_grid(cfg: &GridConfig, seed: u64) -> Result<Dataset> {
    let (h, w) = (cfg.height, cfg.width);
    if h == 0 || w == 0 || cfg.classes == 0 || cfg.train_size == 0 || cfg.test_size == 0 {
        return Err(Error::Config("grid sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let mut img = vec![0.0; h * w];
            for _ in 0..3 {
                let cy = rng.random_range(0.0..h as f64);
                let cx = rng.random_range(0.0..w as f64);
                let s = rng.random_range(0.08..0.25) * h.max(w) as f64;
                let amp = rng.random_range(0.5..1.0);
                for r in 0..h {
                    for c in 0..w {
                        let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                        img[r * w + c] += amp * (-d2 / (2.0 * s * s)).exp();
                    }
                }
            }
            img
        })
        .collect();
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Result<SampleSource> {
        let labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
        let mut data = Vec::with_capacity(n * h * w);
        for &l in &labels {
            data.extend(prototypes[l].iter().map(|p| p + cfg.pixel_sigma * gaussian(rng)));
        }
        SampleSource::new(
            SourceKind::GridDataset,
            Array::from_vec(&[n, h * w], data)?,
            Some(labels),
            Some((h, w)),
        )
    };
    let train = draw(cfg.train_size, &mut rng)?;
    let test = draw(cfg.test_size, &mut rng)?;
    Ok(Dataset { train, test })
}

/// Augmentation parameters. Crop scales are area fractions (grid mode only).
#[derive(Clone, Debug, PartialEq)]
pub struct ViewConfig {
    pub global_views: usize,
    pub local_views: usize,
    pub noise_sigma: f64,
    pub mask_fraction_global: f64,
    pub mask_fraction_local: f64,
    pub crop_scale_global: (f64, f64),
    pub crop_scale_local: (f64, f64),
    pub flip_prob: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            global_views: 2,
            local_views: 6,
            noise_sigma: 0.05,
            mask_fraction_global: 0.1,
            mask_fraction_local: 0.5,
            crop_scale_global: (0.4, 1.0),
            crop_scale_local: (0.05, 0.4),
            flip_prob: 0.5,
        }
    }
}

impl ViewConfig {
    pub fn views_per_sample(&self) -> usize {
        self.global_views + self.local_views
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.global_views < 2 {
            return bad("at least two global views are required");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be >= 0");
        }
        let unit = |f: f64| (0.0..1.0).contains(&f);
        if !unit(self.mask_fraction_global) || !unit(self.mask_fraction_local) {
            return bad("mask fractions must lie in [0, 1)");
        }
        if self.mask_fraction_local < self.mask_fraction_global {
            return bad("local mask fraction must be >= the global one");
        }
        for (lo, hi) in [self.crop_scale_global, self.crop_scale_local] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad("crop scales need 0 < min <= max <= 1");
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Builds the raw view batch for `indices`: shape `B×V×P` in vector mode and
/// `B×V×H×W` in grid mode. Views `0..global_views` are the global ones.
/// Pure given `(indices, seed)`.
pub fn make_views(
    source: &SampleSource,
    indices: &[usize],
    cfg: &ViewConfig,
    seed: u64,
) -> Result<Array> {
    if indices.is_empty() {
        return Err(Error::arg("make_views needs at least one sample index"));
    }
    cfg.validate()?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= source.len()) {
        return Err(Error::arg(format!(
            "sample index {bad} out of range for {} samples",
            source.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = source.input_dim();
    let v = cfg.views_per_sample();
    let mut data = Vec::with_capacity(indices.len() * v * p);
    for &i in indices {
        let sample = source.samples.row(i);
        for view in 0..v {
            let global = view < cfg.global_views;
            let out = match source.grid {
                None => vector_view(sample, cfg, global, &mut rng),
                Some(hw) => grid_view(sample, hw, cfg, global, &mut rng),
            };
            data.extend(out);
        }
    }
    let shape = match source.grid {
        None => vec![indices.len(), v, p],
        Some((h, w)) => vec![indices.len(), v, h, w],
    };
    Array::from_vec(&shape, data)
}

fn vector_view(sample: &[f64], cfg: &ViewConfig, global: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = sample
        .iter()
        .map(|x| x + cfg.noise_sigma * gaussian(rng))
        .collect();
    let fraction = if global {
        cfg.mask_fraction_global
    } else {
        cfg.mask_fraction_local
    };
    let count = (fraction * out.len() as f64).round() as usize;
    for j in index::sample(rng, out.len(), count) {
        out[j] = 0.0;
    }
    out
}

fn grid_view(
    sample: &[f64],
    (h, w): (usize, usize),
    cfg: &ViewConfig,
    global: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (lo, hi) = if global {
        cfg.crop_scale_global
    } else {
        cfg.crop_scale_local
    };
    let area = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let side = area.sqrt();
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let mut crop = Vec::with_capacity(ch * cw);
    for r in top..top + ch {
        crop.extend_from_slice(&sample[r * w + left..r * w + left + cw]);
    }
    // local crops are resized to the global grid size as well
    let mut out = grid::resize(&crop, (ch, cw), (h, w), Interpolation::Bilinear);
    if rng.random::<f64>() < cfg.flip_prob {
        grid::flip_horizontal(&mut out, (h, w));
    }
    for x in &mut out {
        *x += cfg.noise_sigma * gaussian(rng);
    }
    out
}
