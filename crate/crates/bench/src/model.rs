//! The fully-connected benchmark network:
//! `input → [linear → norm → ReLU] × depth → linear → logits`.

use ebn::fusion::{fold_into_linear, fuse_norm};
use ebn::norm::{normalize_eval, normalize_train};
use ebn::tape::{linear_forward, softmax_cross_entropy_forward};
use ebn::{BatchStats, NormKind, NormParams, RunningState, SgdMomentum, Shape4, Tape, Tensor4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub inputs: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub classes: usize,
    pub norm: NormKind,
    pub eps: f64,
    /// Moving-average momentum for running statistics.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(out, in, 1, 1)`
    pub w: Tensor4,
    /// `(1, out, 1, 1)`
    pub b: Tensor4,
}

impl Dense {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = Tensor4::from_vec(Shape4::nc(outputs, inputs), draw(outputs * inputs)).expect("positive dims");
        let b = Tensor4::channel_vector(draw(outputs)).expect("positive dims");
        Dense { w, b }
    }

    pub fn outputs(&self) -> usize {
        self.w.shape().n
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(linear_forward(x, &self.w, &self.b)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer {
    pub kind: NormKind,
    pub params: NormParams,
    /// Present for BN and EBN only.
    pub running: Option<RunningState>,
    pub eps: f64,
}

impl NormLayer {
    fn new(kind: NormKind, channels: usize, eps: f64, rho: f64) -> Result<Self> {
        kind.validate(channels)?;
        let running = if kind.has_running_stats() {
            Some(RunningState::new(kind, channels, rho)?)
        } else {
            None
        };
        Ok(NormLayer { kind, params: NormParams::new(channels), running, eps })
    }

    /// Evaluation mode: frozen statistics for BN/EBN, per-batch statistics
    /// for the per-sample kinds.
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        match &self.running {
            Some(state) => Ok(normalize_eval(x, state, &self.params)?),
            None => Ok(normalize_train(x, self.kind, &self.params, self.eps)?.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: NormLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: ModelConfig,
    pub hidden: Vec<HiddenLayer>,
    pub head: Dense,
}

/// Loss and accuracy counts of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    pub correct: usize,
}

/// Momentum buffers, one per trainable tensor in [`Mlp::params_mut`] order.
#[derive(Debug, Clone)]
pub struct Velocity(Vec<Tensor4>);

pub fn build_model(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    if config.inputs == 0 || config.classes == 0 || (config.hidden_layers > 0 && config.hidden_units == 0) {
        return Err(BenchError::Config("layer widths must be positive".into()));
    }
    if config.norm == NormKind::Instance && config.hidden_layers > 0 {
        // every instance set of a dense feature holds one value, so x̂ is 0
        log::warn!("in on fully-connected features discards its input; the hidden layers output beta only");
    }
    let mut hidden = Vec::with_capacity(config.hidden_layers);
    let mut width = config.inputs;
    for _ in 0..config.hidden_layers {
        let dense = Dense::init(width, config.hidden_units, rng);
        let norm = NormLayer::new(config.norm, config.hidden_units, config.eps, config.rho)?;
        hidden.push(HiddenLayer { dense, norm });
        width = config.hidden_units;
    }
    let head = Dense::init(width, config.classes, rng);
    Ok(Mlp { config, hidden, head })
}

impl Mlp {
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Trainable tensors in a fixed order: per hidden layer `w, b, gamma,
    /// beta`, then the head's `w, b`.
    pub fn params(&self) -> Vec<&Tensor4> {
        let mut out = Vec::new();
        for l in &self.hidden {
            out.extend([&l.dense.w, &l.dense.b, &l.norm.params.gamma, &l.norm.params.beta]);
        }
        out.extend([&self.head.w, &self.head.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4> {
        let mut out = Vec::new();
        for l in &mut self.hidden {
            out.extend([&mut l.dense.w, &mut l.dense.b, &mut l.norm.params.gamma, &mut l.norm.params.beta]);
        }
        out.extend([&mut self.head.w, &mut self.head.b]);
        out
    }

    pub fn zero_velocity(&self) -> Velocity {
        Velocity(self.params().iter().map(|t| Tensor4::zeros(t.shape())).collect())
    }

    /// Forward and backward on one batch in training mode, then an SGD step
    /// and a running-statistics update for every BN/EBN layer.
    pub fn train_step(
        &mut self,
        x: Tensor4,
        labels: &[usize],
        opt: &SgdMomentum,
        velocity: &mut Velocity,
    ) -> Result<StepOutput> {
        let (loss, correct, mut grads, param_vars, stats) = {
            let mut tape = Tape::new();
            let mut param_vars = Vec::with_capacity(4 * self.hidden.len() + 2);
            let mut stats: Vec<BatchStats> = Vec::with_capacity(self.hidden.len());
            let mut h = tape.constant(x);
            for layer in &self.hidden {
                let w = tape.param(&layer.dense.w);
                let b = tape.param(&layer.dense.b);
                let g = tape.param(&layer.norm.params.gamma);
                let be = tape.param(&layer.norm.params.beta);
                let z = tape.linear(h, w, b)?;
                let (n, s) = tape.normalize(z, g, be, layer.norm.kind, layer.norm.eps)?;
                h = tape.relu(n)?;
                param_vars.extend([w, b, g, be]);
                stats.push(s);
            }
            let w = tape.param(&self.head.w);
            let b = tape.param(&self.head.b);
            let logits = tape.linear(h, w, b)?;
            param_vars.extend([w, b]);
            let loss_var = tape.softmax_cross_entropy(logits, labels)?;
            let loss = tape.value(loss_var)?.data()[0];
            if !loss.is_finite() {
                return Err(BenchError::Numerical(format!("training loss is {loss}")));
            }
            let correct = count_correct(tape.value(logits)?, labels);
            let grads = tape.backward(loss_var)?;
            (loss, correct, grads, param_vars, stats)
        };

        for ((param, var), v) in self.params_mut().into_iter().zip(param_vars).zip(&mut velocity.0) {
            let g = grads.take(var).expect("every parameter is a gradient leaf");
            opt.step(param, &g, v)?;
        }
        for (layer, s) in self.hidden.iter_mut().zip(&stats) {
            if let Some(state) = &mut layer.norm.running {
                state.update(s)?;
            }
        }
        Ok(StepOutput { loss, correct })
    }

    /// Evaluation-mode logits.
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut h = x.clone();
        for layer in &self.hidden {
            let z = layer.dense.forward(&h)?;
            h = layer.norm.forward_eval(&z)?.map(|v| v.max(0.0));
        }
        self.head.forward(&h)
    }

    /// Evaluation-mode loss on a batch, without recording anything.
    pub fn eval_loss(&self, x: &Tensor4, labels: &[usize]) -> Result<f64> {
        let logits = self.forward_eval(x)?;
        Ok(softmax_cross_entropy_forward(&logits, labels)?.0)
    }

    /// The evaluation-mode computation as an explicit list of stages.
    pub fn eval_graph(&self) -> EvalGraph {
        let mut stages = Vec::with_capacity(3 * self.hidden.len() + 1);
        for layer in &self.hidden {
            stages.push(Stage::Linear(layer.dense.clone()));
            stages.push(Stage::Norm(layer.norm.clone()));
            stages.push(Stage::Relu);
        }
        stages.push(Stage::Linear(self.head.clone()));
        EvalGraph { stages }
    }
}

pub fn count_correct(logits: &Tensor4, labels: &[usize]) -> usize {
    let k = logits.shape().c;
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count()
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Linear(Dense),
    Norm(NormLayer),
    Relu,
}

/// A sequential inference pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGraph {
    pub stages: Vec<Stage>,
}

impl EvalGraph {
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut h = x.clone();
        for stage in &self.stages {
            h = match stage {
                Stage::Linear(d) => d.forward(&h)?,
                Stage::Norm(n) => n.forward_eval(&h)?,
                Stage::Relu => h.map(|v| v.max(0.0)),
            };
        }
        Ok(h)
    }

    pub fn norm_count(&self) -> usize {
        self.stages.iter().filter(|s| matches!(s, Stage::Norm(_))).count()
    }

    pub fn linear_count(&self) -> usize {
        self.stages.iter().filter(|s| matches!(s, Stage::Linear(_))).count()
    }

    /// Folds every frozen norm stage into the linear stage before it.
    ///
    /// Fails for kinds without running statistics, or for a norm stage that
    /// does not directly follow a linear stage.
    pub fn fuse(&self) -> Result<EvalGraph> {
        let mut stages: Vec<Stage> = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            match stage {
                Stage::Norm(norm) => {
                    let state = norm
                        .running
                        .as_ref()
                        .ok_or_else(|| ebn::Error::UnsupportedKind(norm.kind.to_string()))?;
                    let affine = fuse_norm(state, &norm.params, norm.kind)?;
                    let Some(Stage::Linear(dense)) = stages.last_mut() else {
                        return Err(BenchError::Config("normalization stage is not preceded by a linear stage".into()));
                    };
                    let (w, b) = fold_into_linear(&dense.w, &dense.b, &affine)?;
                    *dense = Dense { w, b };
                }
                other => stages.push(other.clone()),
            }
        }
        Ok(EvalGraph { stages })
    }
}
