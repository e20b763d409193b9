use super::{check_eps, NormKind, SetLayout, StdCenter};
use crate::error::Result;
use crate::tensor::{Shape4, Tensor4};

/// Statistics of one batch under one normalization kind.
///
/// `mean` has one entry per mean set and `std` one entry per std set: `C`
/// for BN, `C` and `1` for EBN, `N` for LN, `N·C` for IN and `N·G` for GN.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub kind: NormKind,
    pub shape: Shape4,
    pub mean: Vec<f64>,
    /// Biased variance of each std set, without `eps`.
    pub variance: Vec<f64>,
    /// `sqrt(variance + eps)`.
    pub std: Vec<f64>,
    /// Size of every mean set.
    pub sample_count_mean: usize,
    /// Size of every std set.
    pub sample_count_std: usize,
    pub eps: f64,
    /// Grand mean of the tensor when EBN centers its variance globally.
    pub grand_mean: Option<f64>,
}

impl BatchStats {
    /// Value subtracted from pixel `(n, c)` when forming the std residual.
    #[inline]
    pub(crate) fn std_center(&self, layout: &SetLayout, n: usize, c: usize) -> f64 {
        self.grand_mean.unwrap_or_else(|| self.mean[layout.mean_set(n, c)])
    }
}

/// Means and standard deviations of `x` over the pixel sets of `kind`.
///
/// Reductions run sequentially in storage order, so results are
/// bit-reproducible for a given input.
pub fn compute_stats(x: &Tensor4, kind: NormKind, eps: f64) -> Result<BatchStats> {
    check_eps(eps)?;
    let layout = kind.layout(x.shape())?;
    Ok(stats_with_layout(x, &layout, eps))
}

pub(crate) fn stats_with_layout(x: &Tensor4, layout: &SetLayout, eps: f64) -> BatchStats {
    let shape = layout.shape;
    let hw = shape.spatial();
    let data = x.data();

    let mut sums = vec![0.0; layout.mean_sets];
    for (plane, chunk) in data.chunks_exact(hw).enumerate() {
        let (n, c) = (plane / shape.c, plane % shape.c);
        sums[layout.mean_set(n, c)] += chunk.iter().sum::<f64>();
    }
    let inv_m = 1.0 / layout.mean_set_size as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s * inv_m).collect();

    let grand_mean = match layout.kind {
        NormKind::Extended { std_center: StdCenter::Global } => {
            Some(data.iter().sum::<f64>() / data.len() as f64)
        }
        _ => None,
    };

    let mut sq = vec![0.0; layout.std_sets];
    for (plane, chunk) in data.chunks_exact(hw).enumerate() {
        let (n, c) = (plane / shape.c, plane % shape.c);
        let center = grand_mean.unwrap_or(mean[layout.mean_set(n, c)]);
        sq[layout.std_set(n, c)] += chunk.iter().map(|v| (v - center) * (v - center)).sum::<f64>();
    }
    let inv_m_std = 1.0 / layout.std_set_size as f64;
    let variance: Vec<f64> = sq.iter().map(|s| s * inv_m_std).collect();
    let std = variance.iter().map(|v| (v + eps).sqrt()).collect();

    BatchStats {
        kind: layout.kind,
        shape,
        mean,
        variance,
        std,
        sample_count_mean: layout.mean_set_size,
        sample_count_std: layout.std_set_size,
        eps,
        grand_mean,
    }
}
