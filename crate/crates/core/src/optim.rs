use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdMomentum {
    pub fn step(&self, param: &mut Tensor4, grad: &Tensor4, velocity: &mut Tensor4) -> Result<()> {
        sgd_momentum_step(param, grad, velocity, self.lr, self.momentum, self.weight_decay)
    }
}

/// One in-place update:
///
/// ```text
/// v ← momentum·v + (g + weight_decay·p)
/// p ← p − lr·v
/// ```
pub fn sgd_momentum_step(
    param: &mut Tensor4,
    grad: &Tensor4,
    velocity: &mut Tensor4,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grad.shape() != param.shape() || velocity.shape() != param.shape() {
        return Err(Error::Usage(format!(
            "sgd step shapes differ: param {}, grad {}, velocity {}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let p = param.data_mut();
    for ((p, g), v) in p.iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
    Ok(())
}
