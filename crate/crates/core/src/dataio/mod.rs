//! Paired speaker/listener coefficient sequences: synthetic generation,
//! the LSEQ1 file format, dataset directories, and windowed batching.
//!
//! Frame layout (`D = 6 + E` channels): `[pitch, yaw, roll, expr_0 .. expr_{E-1}, tx, ty, tz]`.
//! Expression channel 0 is the smile proxy and channel 1 the frown proxy.

mod batch;
mod lseq;
mod synth;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

pub use batch::{window_starts, BatchIter, Dataset, TrainingWindow, WindowRef};
pub use lseq::{read_sequence, sequence_from_bytes, sequence_to_bytes, write_csv, write_sequence, LSEQ_VERSION};
pub use synth::{
    draw_identity, gen_pair, gen_pairs, generate_dataset, identity_pool, smooth, write_dataset, ListenerIdentity,
    SynthConfig, MANIFEST,
};

use crate::error::{Error, Result};
use crate::nn::NumArray;

pub const ANGLE_DIMS: usize = 3;
pub const TRANS_DIMS: usize = 3;
pub const AUDIO_DIMS: usize = 45;
pub const FPS: u32 = 30;

/// Listener stance label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attitude {
    Positive,
    Neutral,
    Negative,
}

pub const ATTITUDES: [Attitude; 3] = [Attitude::Positive, Attitude::Neutral, Attitude::Negative];

impl Attitude {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Attitude::Positive => "positive",
            Attitude::Neutral => "neutral",
            Attitude::Negative => "negative",
        }
    }
}

impl fmt::Display for Attitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attitude {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Attitude::Positive),
            "neutral" => Ok(Attitude::Neutral),
            "negative" => Ok(Attitude::Negative),
            other => Err(Error::Config(format!(
                "unknown attitude `{other}` (expected positive|neutral|negative)"
            ))),
        }
    }
}

/// Channel groups of a coefficient frame with `expr_dims` expression channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub expr_dims: usize,
}

impl Layout {
    pub fn coeff_dims(self) -> usize {
        ANGLE_DIMS + self.expr_dims + TRANS_DIMS
    }

    pub fn angle(self) -> Range<usize> {
        0..ANGLE_DIMS
    }

    pub fn expression(self) -> Range<usize> {
        ANGLE_DIMS..ANGLE_DIMS + self.expr_dims
    }

    pub fn translation(self) -> Range<usize> {
        ANGLE_DIMS + self.expr_dims..self.coeff_dims()
    }

    /// Column of expression channel `e`.
    pub fn expr(self, e: usize) -> usize {
        ANGLE_DIMS + e
    }

    pub fn from_coeff_dims(d: usize) -> Result<Self> {
        if d < ANGLE_DIMS + TRANS_DIMS + 2 {
            return Err(Error::Config(format!(
                "coefficient width {d} leaves fewer than 2 expression channels"
            )));
        }
        Ok(Self {
            expr_dims: d - ANGLE_DIMS - TRANS_DIMS,
        })
    }
}

/// One frame of head motion.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientFrame {
    /// Pitch, yaw, roll in radians.
    pub angle: [f64; 3],
    pub expression: Vec<f64>,
    pub translation: [f64; 3],
}

impl CoefficientFrame {
    pub fn from_row(row: &[f64]) -> Result<Self> {
        let layout = Layout::from_coeff_dims(row.len())?;
        let frame = Self {
            angle: row[layout.angle()].try_into().unwrap(),
            expression: row[layout.expression()].to_vec(),
            translation: row[layout.translation()].try_into().unwrap(),
        };
        if frame.angle.iter().any(|a| a.abs() > std::f64::consts::PI) || !row.iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("invalid coefficient frame {row:?}")));
        }
        Ok(frame)
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + self.expression.len());
        v.extend_from_slice(&self.angle);
        v.extend_from_slice(&self.expression);
        v.extend_from_slice(&self.translation);
        v
    }
}

/// A speaker/listener pair of equal-length sequences at 30 fps.
#[derive(Clone, Debug, PartialEq)]
pub struct DialoguePair {
    /// `[n, D]` speaker coefficients.
    pub speaker: NumArray,
    /// `[n, A]` speaker acoustic features.
    pub audio: NumArray,
    /// `[n, D]` listener coefficients.
    pub listener: NumArray,
    /// `[I]` listener identity embedding.
    pub identity: NumArray,
    pub attitude: Attitude,
    pub listener_id: u32,
    pub fps: u32,
}

impl DialoguePair {
    pub fn len(&self) -> usize {
        self.speaker.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::from_coeff_dims(self.speaker.cols())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.speaker.rows();
        if self.listener.rows() != n || self.audio.rows() != n {
            return Err(Error::Data(format!(
                "sequence lengths differ: speaker {n}, audio {}, listener {}",
                self.audio.rows(),
                self.listener.rows()
            )));
        }
        if self.listener.cols() != self.speaker.cols() {
            return Err(Error::dims("pair", self.speaker.shape(), self.listener.shape()));
        }
        self.layout()?;
        Ok(())
    }

    pub fn listener_frame(&self, k: usize) -> Result<CoefficientFrame> {
        CoefficientFrame::from_row(self.listener.row(k))
    }
}
