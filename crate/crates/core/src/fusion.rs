//! Folding frozen normalization into affine maps and preceding linear layers.
//!
//! With frozen statistics a BN or EBN layer is the per-channel affine map
//!
//! ```text
//! y = (gamma / std_r)·x + (beta − gamma·mean_r / std_r)
//! ```
//!
//! which can be absorbed into the weights and bias of the linear layer that
//! feeds it.

use crate::error::{Error, Result};
use crate::norm::{NormKind, NormParams, RunningState};
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub struct FusedAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl FusedAffine {
    pub fn identity(channels: usize) -> Self {
        FusedAffine {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// `y = scale[c]·x + shift[c]`.
    pub fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        let shape = x.shape();
        if shape.c != self.channels() {
            return Err(Error::shape("fused affine", format!("{} channels", self.channels()), shape));
        }
        let hw = shape.spatial();
        let mut y = x.clone();
        for (plane, chunk) in y.data_mut().chunks_exact_mut(hw).enumerate() {
            let c = plane % shape.c;
            let (a, b) = (self.scale[c], self.shift[c]);
            chunk.iter_mut().for_each(|v| *v = a * *v + b);
        }
        Ok(y)
    }
}

/// Collapses a frozen BN/EBN layer into a per-channel affine map.
pub fn fuse_norm(state: &RunningState, params: &NormParams, kind: NormKind) -> Result<FusedAffine> {
    let expected_std = match kind {
        NormKind::Batch => state.channels(),
        NormKind::Extended { .. } => 1,
        other => return Err(Error::UnsupportedKind(other.to_string())),
    };
    if state.std.len() != expected_std {
        return Err(Error::Usage(format!(
            "running state has {} std entries, {kind} needs {expected_std}",
            state.std.len()
        )));
    }
    params.check(state.channels())?;
    let (gamma, beta) = (params.gamma.data(), params.beta.data());
    let mut fused = FusedAffine::identity(state.channels());
    for c in 0..state.channels() {
        let a = gamma[c] / state.std_for(c);
        fused.scale[c] = a;
        fused.shift[c] = beta[c] - a * state.mean[c];
    }
    Ok(fused)
}

/// Folds `fused` into the linear layer `(w, b)` that precedes it, so that the
/// returned layer alone computes `fused(linear(x))`.
///
/// `w` has shape `(out, in, 1, 1)` and `b` shape `(1, out, 1, 1)`.
pub fn fold_into_linear(w: &Tensor4, b: &Tensor4, fused: &FusedAffine) -> Result<(Tensor4, Tensor4)> {
    let ws = w.shape();
    if !ws.is_nc() {
        return Err(Error::shape("fold_into_linear weight", "(out, in, 1, 1)", ws));
    }
    if fused.channels() != ws.n {
        return Err(Error::Usage(format!(
            "fused affine has {} channels but the linear layer has {} outputs",
            fused.channels(),
            ws.n
        )));
    }
    b.expect_shape("fold_into_linear bias", Shape4::channels(ws.n))?;
    let mut w2 = w.clone();
    for (row, a) in w2.data_mut().chunks_exact_mut(ws.c).zip(&fused.scale) {
        row.iter_mut().for_each(|v| *v *= a);
    }
    let b2: Vec<f64> = b
        .data()
        .iter()
        .zip(fused.scale.iter().zip(&fused.shift))
        .map(|(bias, (a, s))| a * bias + s)
        .collect();
    Ok((w2, Tensor4::channel_vector(b2)?))
}
