use log::warn;

use super::{BatchStats, NormKind, NormParams, DEFAULT_MOMENTUM};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Moving averages of the batch mean and standard deviation for BN and EBN.
///
/// The standard deviation itself is averaged, not the variance:
///
/// ```text
/// mean_r ← (1 - ρ)·mean_r + ρ·mean_b
/// std_r  ← (1 - ρ)·std_r  + ρ·std_b
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RunningState {
    pub mean: Vec<f64>,
    /// Per channel for BN, a single entry for EBN.
    pub std: Vec<f64>,
    pub momentum: f64,
    /// Number of updates applied so far.
    pub count: u64,
}

impl RunningState {
    /// Fresh state (`mean = 0`, `std = 1`) for a layer with `channels` channels.
    pub fn new(kind: NormKind, channels: usize, momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::Config(format!("momentum must lie in (0, 1], got {momentum}")));
        }
        let std_len = match kind {
            NormKind::Batch => channels,
            NormKind::Extended { .. } => 1,
            other => return Err(Error::UnsupportedKind(other.to_string())),
        };
        Ok(RunningState {
            mean: vec![0.0; channels],
            std: vec![1.0; std_len],
            momentum,
            count: 0,
        })
    }

    pub fn with_default_momentum(kind: NormKind, channels: usize) -> Result<Self> {
        RunningState::new(kind, channels, DEFAULT_MOMENTUM)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Folds one batch's statistics into the moving averages.
    pub fn update(&mut self, stats: &BatchStats) -> Result<()> {
        if stats.mean.len() != self.mean.len() || stats.std.len() != self.std.len() {
            return Err(Error::Usage(format!(
                "batch statistics of {} ({} means, {} stds) do not fit running state ({} means, {} stds)",
                stats.kind,
                stats.mean.len(),
                stats.std.len(),
                self.mean.len(),
                self.std.len()
            )));
        }
        let rho = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - rho) * *r + rho * b;
        }
        for (r, b) in self.std.iter_mut().zip(&stats.std) {
            *r = (1.0 - rho) * *r + rho * b;
        }
        self.count += 1;
        Ok(())
    }

    #[inline]
    pub(crate) fn std_for(&self, channel: usize) -> f64 {
        if self.std.len() == 1 {
            self.std[0]
        } else {
            self.std[channel]
        }
    }
}

/// Evaluation-mode normalization with frozen statistics:
/// `y = gamma·(x - mean_r)/std_r + beta`.
///
/// Each output pixel depends only on the matching input pixel, so results do
/// not depend on how samples are batched. Using a state that was never
/// updated is allowed but logged as a warning.
pub fn normalize_eval(x: &Tensor4, state: &RunningState, params: &NormParams) -> Result<Tensor4> {
    let shape = x.shape();
    if state.channels() != shape.c {
        return Err(Error::shape("normalize_eval", format!("{} channels", state.channels()), shape));
    }
    params.check(shape.c)?;
    if state.count == 0 {
        warn!("evaluating with running statistics that were never updated");
    }
    let hw = shape.spatial();
    let (gamma, beta) = (params.gamma.data(), params.beta.data());
    let mut y = Tensor4::zeros(shape);
    for (plane, (src, out)) in x.data().chunks_exact(hw).zip(y.data_mut().chunks_exact_mut(hw)).enumerate() {
        let c = plane % shape.c;
        let (mu, sigma) = (state.mean[c], state.std_for(c));
        for (v, o) in src.iter().zip(out.iter_mut()) {
            *o = gamma[c] * ((v - mu) / sigma) + beta[c];
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::compute_stats;
    use crate::tensor::Shape4;

    fn stats_with(mean: Vec<f64>, std: Vec<f64>) -> BatchStats {
        let x = Tensor4::zeros(Shape4::nc(2, mean.len()));
        let mut s = compute_stats(&x, NormKind::Batch, 0.0).unwrap();
        s.mean = mean;
        s.std = std;
        s
    }

    #[test]
    fn fresh_state_is_identity_defaults() {
        let s = RunningState::new(NormKind::extended(), 5, 0.1).unwrap();
        assert_eq!(s.mean, vec![0.0; 5]);
        assert_eq!(s.std, vec![1.0]);
        assert_eq!(s.count, 0);
        assert!(matches!(
            RunningState::new(NormKind::Layer, 5, 0.1),
            Err(Error::UnsupportedKind(_))
        ));
        assert!(RunningState::new(NormKind::Batch, 5, 0.0).is_err());
    }

    #[test]
    fn unit_momentum_copies_batch_stats() {
        let mut s = RunningState::new(NormKind::Batch, 2, 1.0).unwrap();
        s.update(&stats_with(vec![3.0, -1.0], vec![2.0, 0.5])).unwrap();
        assert_eq!(s.mean, vec![3.0, -1.0]);
        assert_eq!(s.std, vec![2.0, 0.5]);
        assert_eq!(s.count, 1);
    }

    #[test]
    fn three_updates_match_unrolled_recurrence() {
        let rho = 0.1;
        let mut s = RunningState::new(NormKind::Batch, 1, rho).unwrap();
        let batches = [(2.0, 3.0), (-1.0, 0.5), (4.0, 1.5)];
        for (m, d) in batches {
            s.update(&stats_with(vec![m], vec![d])).unwrap();
        }
        // mean: 0 → 0.2 → 0.08 → 0.472
        // std:  1 → 1.2 → 1.13 → 1.167
        let mean = 0.9 * (0.9 * (0.9 * 0.0 + 0.1 * 2.0) + -0.1) + 0.1 * 4.0;
        let std = 0.9 * (0.9 * (0.9 * 1.0 + 0.1 * 3.0) + 0.1 * 0.5) + 0.1 * 1.5;
        assert!((s.mean[0] - 0.472).abs() < 1e-15 && (s.mean[0] - mean).abs() < 1e-15);
        assert!((s.std[0] - 1.167).abs() < 1e-15 && (s.std[0] - std).abs() < 1e-15);
        assert_eq!(s.count, 3);
    }

    #[test]
    fn constant_batch_mean_converges_geometrically() {
        let rho = 0.25;
        let mut s = RunningState::new(NormKind::Batch, 1, rho).unwrap();
        let target = 8.0;
        for t in 1..=20 {
            s.update(&stats_with(vec![target], vec![1.0])).unwrap();
            let expected_gap = target * (1.0 - rho).powi(t);
            assert!(((target - s.mean[0]) - expected_gap).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_stats_rejected() {
        let mut s = RunningState::new(NormKind::extended(), 2, 0.1).unwrap();
        assert!(s.update(&stats_with(vec![0.0, 0.0], vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn eval_identity_and_scalar_example() {
        let x = Tensor4::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap();
        let s = RunningState::new(NormKind::Batch, 2, 0.1).unwrap();
        assert_eq!(normalize_eval(&x, &s, &NormParams::new(2)).unwrap(), x);

        let s = RunningState { mean: vec![2.0], std: vec![4.0], momentum: 0.1, count: 1 };
        let p = NormParams::from_vecs(vec![8.0], vec![1.0]).unwrap();
        let y = normalize_eval(&Tensor4::from_rows(&[[6.0]]).unwrap(), &s, &p).unwrap();
        assert_eq!(y.data(), &[9.0]);
    }
}
