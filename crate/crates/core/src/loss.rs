//! The hard-ball objective: feature-union alignment + short-range repulsion +
//! a weak penalty on the mean embedding norm.
//!
//! All three terms consume a `B×V×D` view batch of pre-normalization
//! projector outputs and are recorded on a [`Tape`], so gradients with respect
//! to the batch (and through it, the encoder) come from one backward pass.
//!
//! Reference semantics, with `M = B·V` and `x` the row-normalized batch:
//!
//! * repulsion: `S = x·xᵀ` with the diagonal zeroed, then
//!   `mean over all M² entries of ReLU(S - α) / (1 - α)`. Symmetric pairs
//!   count twice and the zeroed diagonal stays in the divisor.
//! * alignment: per image, the target is the elementwise max over its views
//!   of the *unnormalized* features, normalized and detached; the loss is the
//!   mean over views of `1 - cos(view, target)`.
//! * normalization: `λ · (mean row norm - 1)²`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Array, Tape, Var, NORMALIZE_EPS};

/// Which entries of the similarity matrix take part in the repulsion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RepulsionMode {
    /// Every off-diagonal pair.
    All,
    /// Only pairs coming from different images.
    NegativesOnly,
    /// Only distinct views of the same image.
    PositivesOnly,
    /// No repulsion at all (alignment-only ablation).
    Off,
}

impl RepulsionMode {
    fn admits(self, same_image: bool) -> bool {
        match self {
            RepulsionMode::All => true,
            RepulsionMode::NegativesOnly => !same_image,
            RepulsionMode::PositivesOnly => same_image,
            RepulsionMode::Off => false,
        }
    }
}

impl fmt::Display for RepulsionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepulsionMode::All => "all",
            RepulsionMode::NegativesOnly => "negatives-only",
            RepulsionMode::PositivesOnly => "positives-only",
            RepulsionMode::Off => "off",
        })
    }
}

impl FromStr for RepulsionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(RepulsionMode::All),
            "negatives-only" => Ok(RepulsionMode::NegativesOnly),
            "positives-only" => Ok(RepulsionMode::PositivesOnly),
            "off" => Ok(RepulsionMode::Off),
            other => Err(Error::Config(format!(
                "repulsion mode must be all, negatives-only, positives-only or off, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Maximum tolerated cosine similarity between any two views.
    pub alpha: f64,
    pub norm_lambda: f64,
    pub repulsion: RepulsionMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            norm_lambda: 1e-6,
            repulsion: RepulsionMode::All,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie strictly inside (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.norm_lambda >= 0.0 && self.norm_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "norm lambda must be finite and >= 0, got {}",
                self.norm_lambda
            )));
        }
        Ok(())
    }
}

/// Scalar values of the three terms and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub alignment: f64,
    pub repulsion: f64,
    pub normalization: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.alignment, self.repulsion, self.normalization, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Tape handles of the loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub alignment: Var,
    pub repulsion: Var,
    pub normalization: Var,
    pub total: Var,
    /// Masked `M×M` similarity matrix fed to the ReLU, when repulsion is on.
    pub similarity: Option<Var>,
}

impl LossTerms {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let read = |v: Var| tape.value(v).data()[0];
        LossBreakdown {
            alignment: read(self.alignment),
            repulsion: read(self.repulsion),
            normalization: read(self.normalization),
            total: read(self.total),
        }
    }
}

/// Output of [`repulsion_loss`].
#[derive(Clone, Copy, Debug)]
pub struct Repulsion {
    pub loss: Var,
    pub similarity: Var,
}

fn batch_dims(tape: &Tape, feats: Var) -> Result<(usize, usize, usize)> {
    match *tape.value(feats).shape() {
        [b, v, d] => Ok((b, v, d)),
        ref other => Err(Error::dim(format!(
            "view batch must be B x V x D, got {other:?}"
        ))),
    }
}

/// Mask selecting the similarity entries admitted by `mode`; the diagonal
/// is always excluded.
pub fn pair_mask(batch: usize, views: usize, mode: RepulsionMode) -> Array {
    let m = batch * views;
    let mut mask = Array::zeros(&[m, m]);
    let data = mask.data_mut();
    for i in 0..m {
        for j in 0..m {
            if i != j && mode.admits(i / views == j / views) {
                data[i * m + j] = 1.0;
            }
        }
    }
    mask
}

fn repulsion_from_normalized(
    tape: &mut Tape,
    x: Var,
    (b, v): (usize, usize),
    alpha: f64,
    mode: RepulsionMode,
) -> Result<Repulsion> {
    let xt = tape.transpose(x)?;
    let sim = tape.matmul(x, xt)?;
    let mask = tape.leaf(pair_mask(b, v, mode));
    let sim = tape.mul(sim, mask)?;
    let shifted = tape.add_scalar(sim, -alpha);
    let active = tape.relu(shifted);
    let scaled = tape.scale(active, 1.0 / (1.0 - alpha));
    Ok(Repulsion {
        loss: tape.mean(scaled),
        similarity: sim,
    })
}

/// Hard-ball repulsion over all `M = B·V` view embeddings. Pairs whose cosine
/// similarity stays at or below `alpha` contribute neither loss nor gradient.
pub fn repulsion_loss(
    tape: &mut Tape,
    feats: Var,
    alpha: f64,
    mode: RepulsionMode,
) -> Result<Repulsion> {
    let (b, v, d) = batch_dims(tape, feats)?;
    if b * v < 2 {
        return Err(Error::arg(format!(
            "repulsion needs at least two embeddings, got {}",
            b * v
        )));
    }
    let flat = tape.reshape(feats, &[b * v, d])?;
    let x = tape.normalize_rows(flat, NORMALIZE_EPS)?;
    repulsion_from_normalized(tape, x, (b, v), alpha, mode)
}

fn alignment_from_normalized(
    tape: &mut Tape,
    feats: Var,
    x: Var,
    (b, v): (usize, usize),
) -> Result<Var> {
    let target = tape.max_over_axis(feats, 1)?;
    let target = tape.normalize_rows(target, NORMALIZE_EPS)?;
    let target = tape.stop_gradient(target);
    let owner: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, v)).collect();
    let target = tape.gather_rows(target, &owner)?;
    let prod = tape.mul(x, target)?;
    let cos = tape.row_sum(prod)?;
    let neg = tape.scale(cos, -1.0);
    let dist = tape.add_scalar(neg, 1.0);
    Ok(tape.mean(dist))
}

/// Cosine distance of every view to its image's detached max-pooled target.
pub fn alignment_loss(tape: &mut Tape, feats: Var) -> Result<Var> {
    let (b, v, d) = batch_dims(tape, feats)?;
    if v == 0 || b == 0 {
        return Err(Error::dim("alignment needs at least one view per image"));
    }
    let flat = tape.reshape(feats, &[b * v, d])?;
    let x = tape.normalize_rows(flat, NORMALIZE_EPS)?;
    alignment_from_normalized(tape, feats, x, (b, v))
}

/// `λ · (mean over views of ‖z‖₂ - 1)²`.
pub fn normalization_loss(tape: &mut Tape, feats: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::arg(format!("lambda must be >= 0, got {lambda}")));
    }
    let (b, v, d) = batch_dims(tape, feats)?;
    let flat = tape.reshape(feats, &[b * v, d])?;
    let norms = tape.l2_norm_rows(flat);
    let mean = tape.mean(norms);
    let dev = tape.add_scalar(mean, -1.0);
    let sq = tape.mul(dev, dev)?;
    Ok(tape.scale(sq, lambda))
}

/// Records the full objective on `tape`.
pub fn hypersolid_loss(tape: &mut Tape, feats: Var, cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    let (b, v, d) = batch_dims(tape, feats)?;
    if b == 0 || v == 0 {
        return Err(Error::dim("empty view batch"));
    }
    let flat = tape.reshape(feats, &[b * v, d])?;
    let x = tape.normalize_rows(flat, NORMALIZE_EPS)?;
    let alignment = alignment_from_normalized(tape, feats, x, (b, v))?;
    let (repulsion, similarity) = if cfg.repulsion == RepulsionMode::Off {
        (tape.leaf(Array::scalar(0.0)), None)
    } else {
        if b * v < 2 {
            return Err(Error::arg("repulsion needs at least two embeddings"));
        }
        let r = repulsion_from_normalized(tape, x, (b, v), cfg.alpha, cfg.repulsion)?;
        (r.loss, Some(r.similarity))
    };
    let normalization = normalization_loss(tape, feats, cfg.norm_lambda)?;
    let partial = tape.add(alignment, repulsion)?;
    let total = tape.add(partial, normalization)?;
    Ok(LossTerms {
        alignment,
        repulsion,
        normalization,
        total,
        similarity,
    })
}

/// Loss values for a `B×V×D` batch.
pub fn evaluate(feats: &Array, cfg: &LossConfig) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let f = tape.leaf(feats.clone());
    Ok(hypersolid_loss(&mut tape, f, cfg)?.breakdown(&tape))
}

/// Loss values and the gradient of the total with respect to the batch.
pub fn value_and_grad(feats: &Array, cfg: &LossConfig) -> Result<(LossBreakdown, Array)> {
    let mut tape = Tape::new();
    let f = tape.leaf(feats.clone());
    let terms = hypersolid_loss(&mut tape, f, cfg)?;
    let grads = tape.backward(terms.total)?;
    Ok((terms.breakdown(&tape), grads.wrt(f)))
}
