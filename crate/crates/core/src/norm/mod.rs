//! The normalization family.
//!
//! Every member standardizes a pixel with a mean taken over one set of
//! pixels and a standard deviation taken over another:
//!
//! ```text
//! x̂[i] = (x[i] - mean over S(i)) / std over S'(i)
//! y[i] = gamma[c] * x̂[i] + beta[c]
//! ```
//!
//! | kind | mean set `S(i)`            | std set `S'(i)`  |
//! |------|----------------------------|------------------|
//! | BN   | same channel               | same as mean     |
//! | EBN  | same channel               | the whole tensor |
//! | LN   | same sample                | same as mean     |
//! | IN   | same sample and channel    | same as mean     |
//! | GN   | same sample, channel group | same as mean     |
//!
//! Extended batch normalization (EBN) keeps BN's per-channel mean but pools
//! the standard deviation over the whole layer, so the std is estimated from
//! `m_N·m_C·m_H·m_W` samples instead of `m_N·m_H·m_W`.

mod running;
mod stats;
mod train;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub use running::{normalize_eval, RunningState};
pub use stats::{compute_stats, BatchStats};
pub use train::{normalize_backward, normalize_train, NormCache, NormGrads};

pub(crate) use train::{backward_raw, forward_raw};

/// Default group count for group normalization.
pub const DEFAULT_GROUPS: usize = 32;
pub const DEFAULT_EPS: f64 = 1e-5;
/// Default moving-average momentum for running statistics.
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Where the pooled EBN variance is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StdCenter {
    /// Residuals are taken against each pixel's own channel mean, so the
    /// pooled variance is the average of the per-channel BN variances.
    #[default]
    PerChannel,
    /// Residuals are taken against the grand mean of the whole tensor.
    Global,
}

impl fmt::Display for StdCenter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StdCenter::PerChannel => "per-channel",
            StdCenter::Global => "global",
        })
    }
}

impl FromStr for StdCenter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "per-channel" => Ok(StdCenter::PerChannel),
            "global" => Ok(StdCenter::Global),
            other => Err(Error::Config(format!("unknown std centering mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    Batch,
    Extended { std_center: StdCenter },
    Layer,
    Instance,
    Group { groups: usize },
}

impl NormKind {
    pub const fn extended() -> Self {
        NormKind::Extended { std_center: StdCenter::PerChannel }
    }

    pub const fn group() -> Self {
        NormKind::Group { groups: DEFAULT_GROUPS }
    }

    /// Parses a short kind name (`bn`, `ebn`, `ln`, `in`, `gn`) with the
    /// sub-options that apply to it.
    pub fn parse(name: &str, groups: usize, std_center: StdCenter) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "bn" => Ok(NormKind::Batch),
            "ebn" => Ok(NormKind::Extended { std_center }),
            "ln" => Ok(NormKind::Layer),
            "in" => Ok(NormKind::Instance),
            "gn" => Ok(NormKind::Group { groups }),
            other => Err(Error::Config(format!("unknown normalization kind {other:?}"))),
        }
    }

    pub const fn short_name(&self) -> &'static str {
        match self {
            NormKind::Batch => "bn",
            NormKind::Extended { .. } => "ebn",
            NormKind::Layer => "ln",
            NormKind::Instance => "in",
            NormKind::Group { .. } => "gn",
        }
    }

    /// BN and EBN normalize with moving averages at evaluation time; the
    /// per-sample kinds recompute statistics from the input instead.
    pub const fn has_running_stats(&self) -> bool {
        matches!(self, NormKind::Batch | NormKind::Extended { .. })
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if let NormKind::Group { groups } = *self {
            if groups == 0 || !channels.is_multiple_of(groups) {
                return Err(Error::Config(format!(
                    "group count {groups} does not divide channel count {channels}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn layout(&self, shape: Shape4) -> Result<SetLayout> {
        shape.check_positive()?;
        self.validate(shape.c)?;
        let Shape4 { n, c, .. } = shape;
        let hw = shape.spatial();
        let (mean_sets, std_sets, per_mean, per_std) = match *self {
            NormKind::Batch => (c, c, n * hw, n * hw),
            NormKind::Extended { .. } => (c, 1, n * hw, n * c * hw),
            NormKind::Layer => (n, n, c * hw, c * hw),
            NormKind::Instance => (n * c, n * c, hw, hw),
            NormKind::Group { groups } => (n * groups, n * groups, c / groups * hw, c / groups * hw),
        };
        Ok(SetLayout {
            kind: *self,
            shape,
            mean_sets,
            std_sets,
            mean_set_size: per_mean,
            std_set_size: per_std,
        })
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::Group { groups } => write!(f, "gn(G={groups})"),
            NormKind::Extended { std_center } => write!(f, "ebn({std_center})"),
            other => f.write_str(other.short_name()),
        }
    }
}

/// How the pixels of a tensor partition into mean sets and std sets.
///
/// All pixels of one (sample, channel) plane share both sets, so lookups
/// are done per plane.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SetLayout {
    pub kind: NormKind,
    pub shape: Shape4,
    pub mean_sets: usize,
    pub std_sets: usize,
    pub mean_set_size: usize,
    pub std_set_size: usize,
}

impl SetLayout {
    #[inline]
    pub fn mean_set(&self, n: usize, c: usize) -> usize {
        match self.kind {
            NormKind::Batch | NormKind::Extended { .. } => c,
            NormKind::Layer => n,
            NormKind::Instance => n * self.shape.c + c,
            NormKind::Group { groups } => n * groups + c / (self.shape.c / groups),
        }
    }

    #[inline]
    pub fn std_set(&self, n: usize, c: usize) -> usize {
        match self.kind {
            NormKind::Extended { .. } => 0,
            _ => self.mean_set(n, c),
        }
    }
}

/// Learnable per-channel affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Tensor4,
    pub beta: Tensor4,
}

impl NormParams {
    /// `gamma = 1`, `beta = 0`.
    pub fn new(channels: usize) -> Self {
        NormParams {
            gamma: Tensor4::full(Shape4::channels(channels), 1.0),
            beta: Tensor4::zeros(Shape4::channels(channels)),
        }
    }

    pub fn from_vecs(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::InvalidInput(format!(
                "gamma has {} entries but beta has {}",
                gamma.len(),
                beta.len()
            )));
        }
        Ok(NormParams {
            gamma: Tensor4::channel_vector(gamma)?,
            beta: Tensor4::channel_vector(beta)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub(crate) fn check(&self, channels: usize) -> Result<()> {
        self.gamma.expect_shape("norm gamma", Shape4::channels(channels))?;
        self.beta.expect_shape("norm beta", Shape4::channels(channels))
    }
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Config(format!("eps must be finite and non-negative, got {eps}")));
    }
    Ok(())
}
