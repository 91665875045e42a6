//! MLP encoder with a linear projector head.
//!
//! Hidden layers use a smooth activation; the final linear layer is the
//! projector and its output is the pre-normalization view embedding. There is
//! no batch normalization, so samples never interact in the forward pass.
//!
//! # Checkpoint layout
//!
//! ```text
//! "HSCK1\n"                       6 bytes magic
//! u32 header_len, header bytes    UTF-8 key=value lines (config + seed)
//! u32 section_count
//! per section:
//!   u32 name_len, name bytes      e.g. "layer0.weight"
//!   u32 rank, rank × u32 dims
//!   u8 dtype (always 1 = f64)
//!   values, f64 little-endian
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Array, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "activation must be gelu or tanh, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub projector_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden_dims: vec![256, 256],
            projector_dim: 1024,
            activation: Activation::Gelu,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.projector_dim < 2 {
            return Err(Error::Config("projector dimension must be >= 2".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, projector last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.projector_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weight: Array,
    pub bias: Array,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub config: EncoderConfig,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

/// Tape handles for every parameter array, in `Parameters::arrays` order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub layers: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl Parameters {
    /// Uniform fan-in init `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                let weight = Array::from_vec(&[fan_in, fan_out], draw(fan_in * fan_out))
                    .expect("sized by construction");
                let bias = Array::from_vec(&[fan_out], draw(fan_out)).expect("sized");
                Layer { weight, bias }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
            seed,
        })
    }

    /// Weight and bias arrays interleaved, layer by layer.
    pub fn arrays(&self) -> Vec<&Array> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.all_finite())
    }

    pub fn to_tape(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        }
    }

    /// Records the forward pass of an `n×P` input on `tape`; returns `n×D`.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &ParamVars, input: Var) -> Result<Var> {
        let last = vars.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if i < last {
                h = match self.config.activation {
                    Activation::Gelu => tape.gelu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
            if !tape.value(h).all_finite() {
                let name = if i == last {
                    "projector".to_string()
                } else {
                    format!("hidden layer {i}")
                };
                return Err(Error::Numeric(format!("non-finite activations in {name}")));
            }
        }
        Ok(h)
    }

    /// Encodes a raw batch `B×V×P` (or `B×V×H×W`) into a `B×V×D` view batch.
    /// Every view goes through the same weights.
    pub fn forward(&self, raw: &Array) -> Result<Array> {
        let (b, v) = match raw.shape() {
            [b, v, ..] if raw.rank() >= 3 => (*b, *v),
            other => {
                return Err(Error::dim(format!(
                    "raw batch needs shape B x V x ..., got {other:?}"
                )))
            }
        };
        let flat = flatten_views(raw, self.config.input_dim)?;
        let out = self.encode(&flat)?;
        out.reshape(&[b, v, self.config.projector_dim])
    }

    /// Encodes `n×P` rows into `n×D` embeddings.
    pub fn encode(&self, rows: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let vars = self.to_tape(&mut tape);
        let x = tape.leaf(rows.clone());
        let out = self.forward_on_tape(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }

    /// FNV-1a over the raw parameter bytes; changes whenever any value does.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for a in self.arrays() {
            for v in a.data() {
                for byte in v.to_le_bytes() {
                    hash ^= u64::from(byte);
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }
}

/// Reshapes a raw batch into `(B·V) × P` rows.
pub fn flatten_views(raw: &Array, input_dim: usize) -> Result<Array> {
    let rows = raw.len() / input_dim.max(1);
    let per_view: usize = raw.shape()[2..].iter().product();
    if per_view != input_dim {
        return Err(Error::dim(format!(
            "views carry {per_view} inputs, encoder expects {input_dim}"
        )));
    }
    raw.reshape(&[rows, input_dim])
}

const CKPT_MAGIC: &[u8; 6] = b"HSCK1\n";

fn header_text(p: &Parameters) -> String {
    let hidden: Vec<String> = p.config.hidden_dims.iter().map(|d| d.to_string()).collect();
    format!(
        "input_dim={}\nhidden_dims={}\nprojector_dim={}\nactivation={}\nseed={}\n",
        p.config.input_dim,
        hidden.join(","),
        p.config.projector_dim,
        p.config.activation,
        p.seed
    )
}

pub fn encode_checkpoint(p: &Parameters) -> Vec<u8> {
    let mut out = CKPT_MAGIC.to_vec();
    let header = header_text(p);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let arrays = p.arrays();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (i, a) in arrays.iter().enumerate() {
        let name = format!(
            "layer{}.{}",
            i / 2,
            if i % 2 == 0 { "weight" } else { "bias" }
        );
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(a.rank() as u32).to_le_bytes());
        for &d in a.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(1);
        for v in a.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Parameters> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6)? != CKPT_MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let header_len = r.u32()?;
    let header = std::str::from_utf8(r.take(header_len)?)
        .map_err(|_| Error::format("checkpoint header is not UTF-8"))?;
    let mut config = EncoderConfig::default();
    let mut seed = 0;
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("bad header line {line:?}")))?;
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::format(format!("bad header value {line:?}")))
        };
        match k {
            "input_dim" => config.input_dim = num(v)?,
            "hidden_dims" => {
                config.hidden_dims = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(num).collect::<Result<_>>()?
                }
            }
            "projector_dim" => config.projector_dim = num(v)?,
            "activation" => {
                config.activation = v.parse().map_err(|_| Error::format("bad activation"))?
            }
            "seed" => {
                seed = v
                    .parse()
                    .map_err(|_| Error::format(format!("bad header value {line:?}")))?
            }
            other => return Err(Error::format(format!("unknown header key {other:?}"))),
        }
    }
    config
        .validate()
        .map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let dims = config.layer_dims();
    let count = r.u32()?;
    if count != dims.len() * 2 {
        return Err(Error::format(format!(
            "{count} sections for {} layers",
            dims.len()
        )));
    }
    let mut arrays = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32()?;
        r.take(name_len)?;
        let rank = r.u32()?;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_>>()?;
        let (fan_in, fan_out) = dims[i / 2];
        let expected: Vec<usize> = if i % 2 == 0 {
            vec![fan_in, fan_out]
        } else {
            vec![fan_out]
        };
        if shape != expected {
            return Err(Error::format(format!(
                "section {i} has shape {shape:?}, expected {expected:?}"
            )));
        }
        if r.take(1)?[0] != 1 {
            return Err(Error::format("checkpoint sections must be f64"));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push(Array::from_vec(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    let mut it = arrays.into_iter();
    let layers = dims
        .iter()
        .map(|_| Layer {
            weight: it.next().expect("counted"),
            bias: it.next().expect("counted"),
        })
        .collect();
    Ok(Parameters {
        config,
        layers,
        seed,
    })
}

pub fn save_checkpoint(path: &Path, p: &Parameters) -> Result<()> {
    fs::write(path, encode_checkpoint(p))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Parameters> {
    decode_checkpoint(&fs::read(path)?)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}
