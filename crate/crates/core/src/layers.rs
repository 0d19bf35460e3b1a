//! Parameterized building blocks registered in a [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Affine map `x·W + b` with `W: in×out`. A kernel-size-1 convolution is the
/// same map applied per frame.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Weight and bias drawn from U(-1/√fan_in, 1/√fan_in).
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[fan_in, fan_out], bound, rng).with_requires_grad(true),
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::uniform(&[fan_out], bound, rng).with_requires_grad(true),
        );
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound[self.weight])?;
        tape.add(y, bound[self.bias])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gain = store.add(
            format!("{name}.gain"),
            Tensor::full(&[width], 1.0).with_requires_grad(true),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[width]).with_requires_grad(true));
        LayerNorm { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        tape.layernorm(x, bound[self.gain], bound[self.bias])
    }
}
