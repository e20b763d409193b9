use super::stats::stats_with_layout;
use super::{check_eps, BatchStats, NormKind, NormParams, SetLayout};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// What the backward pass needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub stats: BatchStats,
    /// Standardized input before the affine transform.
    pub xhat: Tensor4,
    gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NormGrads {
    pub grad_x: Tensor4,
    pub grad_gamma: Tensor4,
    pub grad_beta: Tensor4,
}

/// Training-mode forward pass: standardize with batch statistics, then apply
/// the per-channel affine transform.
pub fn normalize_train(
    x: &Tensor4,
    kind: NormKind,
    params: &NormParams,
    eps: f64,
) -> Result<(Tensor4, NormCache)> {
    params.check(x.shape().c)?;
    forward_raw(x, kind, params.gamma.data(), params.beta.data(), eps)
}

pub(crate) fn forward_raw(
    x: &Tensor4,
    kind: NormKind,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Tensor4, NormCache)> {
    check_eps(eps)?;
    let layout = kind.layout(x.shape())?;
    let stats = stats_with_layout(x, &layout, eps);
    let shape = x.shape();
    let hw = shape.spatial();

    let mut xhat = Tensor4::zeros(shape);
    let mut y = Tensor4::zeros(shape);
    let planes = x.data().chunks_exact(hw).zip(xhat.data_mut().chunks_exact_mut(hw));
    for (plane, ((src, xh), out)) in planes.zip(y.data_mut().chunks_exact_mut(hw)).enumerate() {
        let (n, c) = (plane / shape.c, plane % shape.c);
        let mu = stats.mean[layout.mean_set(n, c)];
        let sigma = stats.std[layout.std_set(n, c)];
        let (g, b) = (gamma[c], beta[c]);
        for ((v, h), o) in src.iter().zip(xh.iter_mut()).zip(out.iter_mut()) {
            *h = (v - mu) / sigma;
            *o = g * *h + b;
        }
    }
    Ok((
        y,
        NormCache {
            stats,
            xhat,
            gamma: gamma.to_vec(),
        },
    ))
}

/// Exact gradients of a training-mode normalization, including the paths
/// through the batch mean and standard deviation.
///
/// For EBN the mean couples the pixels of one channel while the standard
/// deviation couples every pixel of the layer.
pub fn normalize_backward(grad_y: &Tensor4, cache: &NormCache) -> Result<NormGrads> {
    let (grad_x, grad_gamma, grad_beta) = backward_raw(grad_y, cache)?;
    Ok(NormGrads {
        grad_x,
        grad_gamma: Tensor4::channel_vector(grad_gamma)?,
        grad_beta: Tensor4::channel_vector(grad_beta)?,
    })
}

pub(crate) fn backward_raw(
    grad_y: &Tensor4,
    cache: &NormCache,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let shape = cache.xhat.shape();
    if grad_y.shape() != shape {
        return Err(Error::Usage(format!(
            "gradient shape {} does not match cached activation shape {shape}",
            grad_y.shape()
        )));
    }
    let stats = &cache.stats;
    let layout: SetLayout = stats.kind.layout(shape)?;
    let hw = shape.spatial();
    let dy = grad_y.data();
    let xhat = cache.xhat.data();

    // Per-set reductions of g = dy·gamma:
    //   a[mean set] = Σ g / σ,  b[std set] = Σ g·x̂.
    let mut a = vec![0.0; layout.mean_sets];
    let mut b = vec![0.0; layout.std_sets];
    let mut grad_gamma = vec![0.0; shape.c];
    let mut grad_beta = vec![0.0; shape.c];
    for (plane, (dy_p, xh_p)) in dy.chunks_exact(hw).zip(xhat.chunks_exact(hw)).enumerate() {
        let (n, c) = (plane / shape.c, plane % shape.c);
        let ss = layout.std_set(n, c);
        let g = cache.gamma[c];
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        for (d, h) in dy_p.iter().zip(xh_p) {
            sum_dy += d;
            sum_dy_xh += d * h;
        }
        grad_beta[c] += sum_dy;
        grad_gamma[c] += sum_dy_xh;
        a[layout.mean_set(n, c)] += g * sum_dy / stats.std[ss];
        b[ss] += g * sum_dy_xh;
    }

    // ∂L/∂var for each std set, pre-multiplied by 2/m' from ∂var/∂x.
    let inv_m = 1.0 / stats.sample_count_mean as f64;
    let inv_m_std = 1.0 / stats.sample_count_std as f64;
    let dvar: Vec<f64> = b
        .iter()
        .zip(&stats.std)
        .map(|(bs, s)| -bs / (s * s) * inv_m_std)
        .collect();

    let mut grad_x = Tensor4::zeros(shape);
    let planes = dy.chunks_exact(hw).zip(xhat.chunks_exact(hw));
    for (plane, ((dy_p, xh_p), gx)) in planes.zip(grad_x.data_mut().chunks_exact_mut(hw)).enumerate() {
        let (n, c) = (plane / shape.c, plane % shape.c);
        let (ms, ss) = (layout.mean_set(n, c), layout.std_set(n, c));
        let sigma = stats.std[ss];
        let g = cache.gamma[c];
        let mean_term = a[ms] * inv_m;
        let center_offset = stats.mean[ms] - stats.std_center(&layout, n, c);
        for ((d, h), out) in dy_p.iter().zip(xh_p).zip(gx.iter_mut()) {
            let residual = h * sigma + center_offset;
            *out = g * d / sigma - mean_term + dvar[ss] * residual;
        }
    }
    Ok((grad_x, grad_gamma, grad_beta))
}

impl NormCache {
    pub fn shape(&self) -> Shape4 {
        self.xhat.shape()
    }
}
