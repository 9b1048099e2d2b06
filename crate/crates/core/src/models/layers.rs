//! Parameterized building blocks shared by the classifiers and the encoder.

use rand::Rng;

use crate::autodiff::{Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

/// Affine map on the last axis: `x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        group: Group,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[input, output], input, rng),
            group,
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[output]), group);
        Linear {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, Some(b))
    }
}

/// Channels-last 1-D convolution, optionally with a bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    w: ParamId,
    b: Option<ParamId>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        group: Group,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[kernel, c_in, c_out], kernel * c_in, rng),
            group,
        );
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), group));
        Conv1d {
            w,
            b,
            kernel,
            stride,
            padding,
        }
    }

    /// Output length for an input of `len` steps, if at least one step results.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.conv1d(x, w, self.stride, self.padding)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, group: Group) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim]), group),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim]), group),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}
