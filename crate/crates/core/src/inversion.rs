//! Gradient-based feature inversion: optimize an input so the frozen encoder
//! maps it close (in cosine distance) to a target embedding.
//!
//! Grid inputs are optimized coarse to fine. At each scale the canvas is
//! jittered by a circular shift, upsampled to the model resolution through a
//! fixed resize matrix, and encoded; a total-variation penalty on the canvas
//! keeps it smooth, and a light Gaussian blur is applied periodically.
//! Vector inputs use a single scale with none of the image regularizers.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{self, Interpolation};
use crate::model::Parameters;
use crate::optim::{self, AdamWConfig, AdamWState};
use crate::tensor::{Array, Tape, Var, NORMALIZE_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputShape {
    Vector(usize),
    Grid(usize, usize),
}

impl InputShape {
    pub fn len(self) -> usize {
        match self {
            InputShape::Vector(p) => p,
            InputShape::Grid(h, w) => h * w,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionConfig {
    pub scales: Vec<f64>,
    pub steps_per_scale: usize,
    pub lr: f64,
    pub tv_weight: f64,
    /// Largest shift in full-resolution cells; scaled with the canvas.
    pub jitter_max: usize,
    pub smooth_every: usize,
    pub smooth_sigma: f64,
    pub smooth_size: usize,
    /// Standard deviation of the random initial canvas.
    pub init_sigma: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            scales: vec![0.125, 0.25, 0.5, 0.75, 1.0],
            steps_per_scale: 4000,
            lr: 0.05,
            tv_weight: 2.0,
            jitter_max: 32,
            smooth_every: 50,
            smooth_sigma: 0.5,
            smooth_size: 5,
            init_sigma: 0.1,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.scales.is_empty() || self.scales.last() != Some(&1.0) {
            return bad("inversion scales must end at 1.0");
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) || self.scales[0] <= 0.0 {
            return bad("inversion scales must be positive and strictly increasing");
        }
        if self.steps_per_scale == 0 {
            return bad("inversion steps_per_scale must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("inversion lr must be positive");
        }
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return bad("inversion tv_weight must be non-negative");
        }
        if self.smooth_size.is_multiple_of(2) || !(self.smooth_sigma > 0.0) {
            return bad("inversion smoothing needs an odd kernel size and sigma > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleLog {
    pub scale: f64,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    /// Reconstructed input, `1×P` (vector) or `H×W` (grid).
    pub input: Array,
    pub distance: f64,
    pub scales: Vec<ScaleLog>,
}

/// One optimization stage: a canvas of `(ch, cw)` cells that maps to the
/// model input through `upsample` (absent at full resolution).
struct Stage {
    canvas: (usize, usize),
    upsample: Option<Array>,
    jitter: i64,
    grid: bool,
}

fn canvas_dims(shape: InputShape, scale: f64) -> (usize, usize) {
    match shape {
        InputShape::Vector(p) => (1, p),
        InputShape::Grid(h, w) => {
            let s = |n: usize| ((n as f64 * scale).round() as usize).clamp(1, n);
            (s(h), s(w))
        }
    }
}

/// Records `1 - cos(f(x), target)` (+ `tv_weight·TV(x)` on grids) and
/// returns `(objective, distance)`.
fn objective(
    tape: &mut Tape,
    params: &Parameters,
    canvas: Var,
    target: Var,
    stage: &Stage,
    shift: (i64, i64),
    tv_weight: f64,
) -> Result<(Var, Var)> {
    let (ch, cw) = stage.canvas;
    let mut x = canvas;
    if shift != (0, 0) {
        let col = tape.reshape(x, &[ch * cw, 1])?;
        let rolled = tape.gather_rows(col, &grid::roll_indices((ch, cw), shift.0, shift.1))?;
        x = tape.reshape(rolled, &[1, ch * cw])?;
    }
    if let Some(m) = &stage.upsample {
        let m = tape.leaf(m.clone());
        x = tape.matmul(x, m)?;
    }
    let vars = params.to_tape(tape);
    let out = params.forward_on_tape(tape, &vars, x)?;
    let out = tape.normalize_rows(out, NORMALIZE_EPS)?;
    let cos = tape.matmul(out, target)?;
    let cos = tape.sum(cos);
    let neg = tape.scale(cos, -1.0);
    let distance = tape.add_scalar(neg, 1.0);
    if !stage.grid || tv_weight == 0.0 {
        return Ok((distance, distance));
    }
    let tv = tv_on_tape(tape, canvas, (ch, cw))?;
    let tv = tape.scale(tv, tv_weight);
    let total = tape.add(distance, tv)?;
    Ok((total, distance))
}

/// Anisotropic total variation of a `[1, h*w]` canvas on the tape.
fn tv_on_tape(tape: &mut Tape, canvas: Var, (h, w): (usize, usize)) -> Result<Var> {
    let col = tape.reshape(canvas, &[h * w, 1])?;
    let (down, right) = grid::tv_pairs((h, w));
    let mut total = tape.leaf(Array::scalar(0.0));
    for pairs in [down, right] {
        if pairs.is_empty() {
            continue;
        }
        let next: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let cur: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let a = tape.gather_rows(col, &next)?;
        let b = tape.gather_rows(col, &cur)?;
        let diff = tape.sub(a, b)?;
        let diff = tape.abs(diff);
        let part = tape.sum(diff);
        total = tape.add(total, part)?;
    }
    Ok(total)
}

/// Sum of absolute differences between vertically and horizontally
/// adjacent pixels of a row-major `h x w` image.
pub fn total_variation(img: &[f64], (h, w): (usize, usize)) -> Result<f64> {
    if img.len() != h * w {
        return Err(Error::Dimension(format!("image has {} values, grid is {h}x{w}", img.len())));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Array::from_vec(&[1, h * w], img.to_vec())?);
    let tv = tv_on_tape(&mut tape, x, (h, w))?;
    tape.value(tv).item()
}

fn cosine_distance(params: &Parameters, input: &Array, target: &[f64]) -> Result<f64> {
    let out = params.encode(input)?.normalize_rows(NORMALIZE_EPS);
    Ok(1.0 - out.data().iter().zip(target).map(|(a, b)| a * b).sum::<f64>())
}

/// Inverts `target` through the frozen encoder. `params` is only read.
pub fn invert(
    params: &Parameters,
    target: &[f64],
    shape: InputShape,
    cfg: &InversionConfig,
    seed: u64,
) -> Result<Inversion> {
    cfg.validate()?;
    let d = params.config.projector_dim;
    if target.len() != d {
        return Err(Error::dim(format!("target has {} values, encoder outputs {d}", target.len())));
    }
    if shape.len() != params.config.input_dim {
        return Err(Error::dim(format!(
            "input shape {shape:?} does not match encoder input {}",
            params.config.input_dim
        )));
    }
    let target = Array::from_vec(&[1, d], target.to_vec())?.normalize_rows(NORMALIZE_EPS);
    if target.data().iter().all(|v| *v == 0.0) {
        return Err(Error::arg("target embedding is zero"));
    }
    let target_col = target.reshape(&[d, 1])?;

    let is_grid = matches!(shape, InputShape::Grid(..));
    let scales: Vec<f64> = if is_grid { cfg.scales.clone() } else { vec![1.0] };
    let full = match shape {
        InputShape::Vector(p) => (1, p),
        InputShape::Grid(h, w) => (h, w),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, cfg.init_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let first = canvas_dims(shape, scales[0]);
    let mut canvas = Array::from_vec(
        &[1, first.0 * first.1],
        (0..first.0 * first.1).map(|_| init.sample(&mut rng)).collect(),
    )?;
    let opt = AdamWConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };

    let mut logs = Vec::with_capacity(scales.len());
    let mut prev = first;
    for &scale in &scales {
        let dims = canvas_dims(shape, scale);
        if dims != prev {
            let up = grid::resize(canvas.data(), prev, dims, Interpolation::Bicubic);
            canvas = Array::from_vec(&[1, dims.0 * dims.1], up)?;
            prev = dims;
        }
        let stage = Stage {
            canvas: dims,
            upsample: (dims != full)
                .then(|| grid::resize_matrix(dims, full, Interpolation::Bicubic)),
            jitter: if is_grid {
                ((cfg.jitter_max as f64 * scale).round() as i64)
                    .min(dims.0.max(dims.1) as i64 - 1)
                    .max(0)
            } else {
                0
            },
            grid: is_grid,
        };
        let mut state = AdamWState::new([&canvas]);
        for step in 0..cfg.steps_per_scale {
            let shift = if stage.jitter > 0 {
                (
                    rng.random_range(-stage.jitter..=stage.jitter),
                    rng.random_range(-stage.jitter..=stage.jitter),
                )
            } else {
                (0, 0)
            };
            let mut tape = Tape::new();
            let x = tape.leaf(canvas.clone());
            let t = tape.leaf(target_col.clone());
            let (loss, _) = objective(&mut tape, params, x, t, &stage, shift, cfg.tv_weight)
                .map_err(|e| context(e, scale, step))?;
            let grads = tape.backward(loss)?;
            optim::step(&mut [&mut canvas], &[grads.wrt(x)], &mut state, &opt)?;
            if is_grid && cfg.smooth_every > 0 && (step + 1) % cfg.smooth_every == 0 {
                let blurred = grid::gaussian_blur(canvas.data(), dims, cfg.smooth_sigma, cfg.smooth_size);
                canvas.data_mut().copy_from_slice(&blurred);
            }
            if !canvas.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite canvas at scale {scale}, step {step}"
                )));
            }
        }
        let input = model_input(&canvas, &stage)?;
        logs.push(ScaleLog {
            scale,
            height: dims.0,
            width: dims.1,
            steps: cfg.steps_per_scale,
            distance: cosine_distance(params, &input, target.data())?,
        });
        log::info!("inversion scale {scale}: distance {:.6}", logs.last().map_or(0.0, |l| l.distance));
    }

    let input = canvas.reshape(&[full.0, full.1])?;
    let input = if is_grid { input } else { input.reshape(&[1, full.1])? };
    Ok(Inversion {
        distance: logs.last().map_or(f64::NAN, |l| l.distance),
        input,
        scales: logs,
    })
}

fn model_input(canvas: &Array, stage: &Stage) -> Result<Array> {
    match &stage.upsample {
        Some(m) => canvas.matmul(m),
        None => Ok(canvas.clone()),
    }
}

fn context(e: Error, scale: f64, step: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{m} (scale {scale}, step {step})")),
        other => other,
    }
}

/// One JSON object per scale: `{"scale":…,"height":…,"width":…,"steps":…,"distance":…}`.
pub fn scale_log_jsonl(logs: &[ScaleLog]) -> String {
    let mut out = String::new();
    for l in logs {
        let _ = writeln!(
            out,
            "{{\"scale\":{},\"height\":{},\"width\":{},\"steps\":{},\"distance\":{}}}",
            l.scale, l.height, l.width, l.steps, l.distance
        );
    }
    out
}

pub fn write_scale_log(path: &Path, logs: &[ScaleLog]) -> Result<()> {
    std::fs::write(path, scale_log_jsonl(logs))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;

    fn small_encoder(input_dim: usize) -> Parameters {
        let cfg = EncoderConfig {
            input_dim,
            hidden_dims: vec![32],
            projector_dim: 16,
            ..EncoderConfig::default()
        };
        Parameters::init(&cfg, 4).unwrap()
    }

    #[test]
    fn checkerboard_total_variation() {
        assert_eq!(total_variation(&[0.0, 1.0, 1.0, 0.0], (2, 2)).unwrap(), 4.0);
        assert_eq!(total_variation(&[3.0; 6], (2, 3)).unwrap(), 0.0);
        assert!(total_variation(&[0.0; 3], (2, 2)).is_err());
    }

    #[test]
    fn scales_validated() {
        let mut cfg = InversionConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.scales = vec![0.5, 0.25, 1.0];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.scales = vec![0.5, 0.75];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn vector_round_trip_and_frozen_params() {
        let params = small_encoder(8);
        let before = params.checksum();
        let x0 = Array::from_vec(&[1, 8], (0..8).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let target = params.encode(&x0).unwrap();
        let cfg = InversionConfig {
            steps_per_scale: 1500,
            ..InversionConfig::default()
        };
        let inv = invert(&params, target.data(), InputShape::Vector(8), &cfg, 1).unwrap();
        assert!(inv.distance < 0.05, "{}", inv.distance);
        assert_eq!(inv.scales.len(), 1);
        assert_eq!(inv.input.shape(), &[1, 8]);
        assert_eq!(params.checksum(), before);
    }

    #[test]
    fn grid_inversion_runs_every_scale() {
        let params = small_encoder(64);
        let target: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let cfg = InversionConfig {
            steps_per_scale: 60,
            ..InversionConfig::default()
        };
        let inv = invert(&params, &target, InputShape::Grid(8, 8), &cfg, 2).unwrap();
        assert_eq!(inv.input.shape(), &[8, 8]);
        let dims: Vec<(usize, usize)> = inv.scales.iter().map(|l| (l.height, l.width)).collect();
        assert_eq!(dims, vec![(1, 1), (2, 2), (4, 4), (6, 6), (8, 8)]);
        assert!(inv.distance.is_finite());
        let log = scale_log_jsonl(&inv.scales);
        assert_eq!(log.lines().count(), 5);
        assert!(log.starts_with("{\"scale\":0.125,\"height\":1"));
    }

    #[test]
    fn mismatched_target_rejected() {
        let params = small_encoder(8);
        let cfg = InversionConfig::default();
        assert!(invert(&params, &[1.0; 3], InputShape::Vector(8), &cfg, 0).is_err());
        assert!(invert(&params, &[1.0; 16], InputShape::Vector(9), &cfg, 0).is_err());
    }
}
