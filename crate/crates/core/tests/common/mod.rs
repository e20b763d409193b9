//! Test-only oracles that do not share code paths with the library.
#![allow(dead_code)]

use ebn::norm::{NormKind, StdCenter};
use ebn::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape4) -> Tensor4 {
    let data = (0..shape.numel()).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor4::from_vec(shape, data).unwrap()
}

/// Random tensor whose entries all sit at least `gap` away from zero.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: Shape4, gap: f64) -> Tensor4 {
    let data = (0..shape.numel())
        .map(|_| loop {
            let v: f64 = rng.random_range(-2.0..2.0);
            if v.abs() >= gap {
                break v;
            }
        })
        .collect();
    Tensor4::from_vec(shape, data).unwrap()
}

pub fn all_indices(shape: Shape4) -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(shape.numel());
    for n in 0..shape.n {
        for c in 0..shape.c {
            for h in 0..shape.h {
                for w in 0..shape.w {
                    out.push([n, c, h, w]);
                }
            }
        }
    }
    out
}

/// Membership test `k ∈ S(i)` for the mean set, written from the set
/// definitions.
pub fn in_mean_set(kind: NormKind, shape: Shape4, i: [usize; 4], k: [usize; 4]) -> bool {
    match kind {
        NormKind::Batch | NormKind::Extended { .. } => k[1] == i[1],
        NormKind::Layer => k[0] == i[0],
        NormKind::Instance => k[0] == i[0] && k[1] == i[1],
        NormKind::Group { groups } => {
            let per = shape.c / groups;
            k[0] == i[0] && k[1] / per == i[1] / per
        }
    }
}

/// Membership test `k ∈ S'(i)` for the std set.
pub fn in_std_set(kind: NormKind, shape: Shape4, i: [usize; 4], k: [usize; 4]) -> bool {
    match kind {
        NormKind::Extended { .. } => true,
        _ => in_mean_set(kind, shape, i, k),
    }
}

/// Per-pixel statistics from explicitly materialized pixel sets.
pub struct PixelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_set_size: Vec<usize>,
    pub std_set_size: Vec<usize>,
}

pub fn brute_force_stats(x: &Tensor4, kind: NormKind, eps: f64) -> PixelStats {
    let shape = x.shape();
    let idx = all_indices(shape);
    let set_mean = |i: [usize; 4]| -> (f64, usize) {
        let members: Vec<f64> = idx
            .iter()
            .filter(|&&k| in_mean_set(kind, shape, i, k))
            .map(|&k| x.get(k))
            .collect();
        (members.iter().sum::<f64>() / members.len() as f64, members.len())
    };
    let grand = idx.iter().map(|&k| x.get(k)).sum::<f64>() / idx.len() as f64;
    let mut out = PixelStats { mean: vec![], std: vec![], mean_set_size: vec![], std_set_size: vec![] };
    for &i in &idx {
        let (mu, m) = set_mean(i);
        let std_members: Vec<[usize; 4]> =
            idx.iter().copied().filter(|&k| in_std_set(kind, shape, i, k)).collect();
        let var = std_members
            .iter()
            .map(|&k| {
                let center = match kind {
                    NormKind::Extended { std_center: StdCenter::Global } => grand,
                    // the residual of k is taken against k's own mean set
                    _ => set_mean(k).0,
                };
                (x.get(k) - center).powi(2)
            })
            .sum::<f64>()
            / std_members.len() as f64;
        out.mean.push(mu);
        out.std.push((var + eps).sqrt());
        out.mean_set_size.push(m);
        out.std_set_size.push(std_members.len());
    }
    out
}

/// Index into `BatchStats::mean` for pixel `i`.
pub fn mean_slot(kind: NormKind, shape: Shape4, i: [usize; 4]) -> usize {
    match kind {
        NormKind::Batch | NormKind::Extended { .. } => i[1],
        NormKind::Layer => i[0],
        NormKind::Instance => i[0] * shape.c + i[1],
        NormKind::Group { groups } => i[0] * groups + i[1] / (shape.c / groups),
    }
}

pub fn std_slot(kind: NormKind, shape: Shape4, i: [usize; 4]) -> usize {
    match kind {
        NormKind::Extended { .. } => 0,
        _ => mean_slot(kind, shape, i),
    }
}

/// Triple-loop `x·wᵀ + b`.
pub fn naive_linear(x: &Tensor4, w: &Tensor4, b: &Tensor4) -> Tensor4 {
    let (n, inp, out) = (x.shape().n, x.shape().c, w.shape().n);
    let mut y = Tensor4::zeros(Shape4::nc(n, out));
    for r in 0..n {
        for o in 0..out {
            let mut acc = 0.0;
            for i in 0..inp {
                acc += w.get([o, i, 0, 0]) * x.get([r, i, 0, 0]);
            }
            y.set([r, o, 0, 0], acc + b.data()[o]);
        }
    }
    y
}

/// Every kind, with group counts chosen to divide `channels`.
pub fn kinds_for(channels: usize) -> Vec<NormKind> {
    let groups = if channels.is_multiple_of(2) { 2 } else { 1 };
    vec![
        NormKind::Batch,
        NormKind::Extended { std_center: StdCenter::PerChannel },
        NormKind::Extended { std_center: StdCenter::Global },
        NormKind::Layer,
        NormKind::Instance,
        NormKind::Group { groups },
    ]
}
