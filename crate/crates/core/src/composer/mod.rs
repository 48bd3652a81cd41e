//! Sequence descriptor composers: grouping, fusion and recurrent.

mod fusion;
mod grouping;
mod lstm;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;

pub use fusion::{compose_fusion, grad_fusion, Activation, FusionGrads, FusionParams};
pub use grouping::compose_grouping;
pub use lstm::{compose_recurrent, grad_recurrent, step_recurrent, LstmGrads, LstmParams, LstmState};
pub(crate) use lstm::{backward_trace, forward_trace, LstmTrace};

/// Base descriptor size for the single-view head, fusion output and LSTM state.
pub const DEFAULT_DESCRIPTOR_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComposerKind {
    Grouping,
    Fusion,
    Recurrent,
}

impl ComposerKind {
    pub const ALL: [ComposerKind; 3] = [
        ComposerKind::Grouping,
        ComposerKind::Fusion,
        ComposerKind::Recurrent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComposerKind::Grouping => "grouping",
            ComposerKind::Fusion => "fusion",
            ComposerKind::Recurrent => "recurrent",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ComposerKind::Grouping => 1,
            ComposerKind::Fusion => 2,
            ComposerKind::Recurrent => 3,
        }
    }
}

impl fmt::Display for ComposerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComposerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grouping" => Ok(ComposerKind::Grouping),
            "fusion" => Ok(ComposerKind::Fusion),
            "recurrent" => Ok(ComposerKind::Recurrent),
            other => Err(Error::Config(format!("unknown composer kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDescriptor {
    pub values: Vec<f64>,
    pub source: ComposerKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComposerParams {
    /// Concatenation of per-frame descriptors. The optional head is a
    /// single-frame linear layer; without it raw features are concatenated.
    Grouping { head: Option<FusionParams> },
    Fusion(FusionParams),
    Recurrent(LstmParams),
}

/// A composer with its parameters and training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Composer {
    pub n: usize,
    pub params: ComposerParams,
    /// L2-normalize descriptors (per frame for grouping).
    pub normalize: bool,
    pub trained_steps: u64,
}

impl Composer {
    pub fn new(n: usize, params: ComposerParams) -> Result<Self> {
        let c = Composer {
            n,
            params,
            normalize: false,
            trained_steps: 0,
        };
        c.validate()?;
        Ok(c)
    }

    /// Freshly initialized composer of the given kind over `d_in`-dimensional
    /// frames with `d_out`-dimensional base descriptors.
    pub fn init<R: Rng + ?Sized>(
        kind: ComposerKind,
        n: usize,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let params = match kind {
            ComposerKind::Grouping => ComposerParams::Grouping {
                head: Some(FusionParams::init(1, d_in, d_out, rng)),
            },
            ComposerKind::Fusion => ComposerParams::Fusion(FusionParams::init(n, d_in, d_out, rng)),
            ComposerKind::Recurrent => ComposerParams::Recurrent(LstmParams::init(d_in, d_out, rng)),
        };
        Composer::new(n, params)
    }

    /// Grouping over raw features, no learned head.
    pub fn raw_grouping(n: usize) -> Self {
        Composer {
            n,
            params: ComposerParams::Grouping { head: None },
            normalize: false,
            trained_steps: 0,
        }
    }

    /// The grouping composer's per-frame model as a one-frame composer.
    pub fn single_view(&self) -> Result<Self> {
        match &self.params {
            ComposerParams::Grouping { .. } => Ok(Composer { n: 1, ..self.clone() }),
            _ => Err(Error::Config(format!("{} composer has no single-view head", self.kind()))),
        }
    }

    pub fn kind(&self) -> ComposerKind {
        match self.params {
            ComposerParams::Grouping { .. } => ComposerKind::Grouping,
            ComposerParams::Fusion(_) => ComposerKind::Fusion,
            ComposerParams::Recurrent(_) => ComposerKind::Recurrent,
        }
    }

    /// Expected frame dimension, if fixed by the parameters.
    pub fn input_dim(&self) -> Option<usize> {
        match &self.params {
            ComposerParams::Grouping { head } => head.as_ref().map(|h| h.d_in),
            ComposerParams::Fusion(p) => Some(p.d_in),
            ComposerParams::Recurrent(p) => Some(p.d_in),
        }
    }

    /// Descriptor dimension for frames of dimension `frame_dim`.
    pub fn output_dim(&self, frame_dim: usize) -> usize {
        match &self.params {
            ComposerParams::Grouping { head } => self.n * head.as_ref().map_or(frame_dim, |h| h.d_out),
            ComposerParams::Fusion(p) => p.d_out,
            ComposerParams::Recurrent(p) => p.hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("sequence length must be positive".into()));
        }
        match &self.params {
            ComposerParams::Grouping { head } => {
                if let Some(h) = head {
                    h.validate()?;
                    check_len("grouping head frame count", 1, h.n)?;
                }
            }
            ComposerParams::Fusion(p) => {
                p.validate()?;
                check_len("fusion frame count", self.n, p.n)?;
            }
            ComposerParams::Recurrent(p) => p.validate()?,
        }
        Ok(())
    }

    /// Single-view descriptor used by grouping.
    pub fn frame_descriptor(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let ComposerParams::Grouping { head } = &self.params else {
            return Err(Error::Config(format!(
                "{} composer has no single-view head",
                self.kind()
            )));
        };
        let mut v = match head {
            Some(h) => compose_fusion(h, &[frame])?,
            None => frame.to_vec(),
        };
        if self.normalize {
            l2_normalize(&mut v);
        }
        Ok(v)
    }

    pub fn describe(&self, frames: &[&[f64]]) -> Result<SequenceDescriptor> {
        check_len("sequence length", self.n, frames.len())?;
        let values = match &self.params {
            ComposerParams::Grouping { .. } => {
                let per_frame = frames
                    .iter()
                    .map(|f| self.frame_descriptor(f))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&[f64]> = per_frame.iter().map(Vec::as_slice).collect();
                compose_grouping(&refs, self.n)?
            }
            ComposerParams::Fusion(p) => {
                let mut y = compose_fusion(p, frames)?;
                if self.normalize {
                    l2_normalize(&mut y);
                }
                y
            }
            ComposerParams::Recurrent(p) => {
                let (mut y, _) = compose_recurrent(p, frames)?;
                if self.normalize {
                    l2_normalize(&mut y);
                }
                y
            }
        };
        Ok(SequenceDescriptor {
            values,
            source: self.kind(),
        })
    }
}

/// Scales `v` to unit norm; the zero vector is left unchanged.
pub fn l2_normalize(v: &mut [f64]) -> f64 {
    let n = linalg::norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Backward of `y = x / |x|` given the normalized output and `|x|`.
pub(crate) fn l2_normalize_backward(y: &[f64], norm: f64, dy: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; y.len()];
    }
    let proj = linalg::dot(y, dy);
    y.iter().zip(dy).map(|(yi, gi)| (gi - yi * proj) / norm).collect()
}
