//! Convolutional classifier with self-attention pooling over time.

use rand::Rng;

use super::layers::{Conv1d, Linear};
use crate::autodiff::{Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AcnnConfig {
    pub input_dim: usize,
    pub channels: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for AcnnConfig {
    fn default() -> Self {
        AcnnConfig {
            input_dim: crate::features::FEATURE_DIM,
            channels: 64,
            conv_layers: 3,
            kernel: 5,
            stride: 2,
            padding: 2,
            hidden: 32,
            classes: 3,
        }
    }
}

/// Logits together with the pooling distribution that produced them.
#[derive(Clone, Copy, Debug)]
pub struct AcnnOutput {
    pub logits: Var,
    /// `[B, T']` attention weights over the downsampled time axis.
    pub attention: Var,
}

#[derive(Clone, Debug)]
pub struct AcnnClassifier {
    pub convs: Vec<Conv1d>,
    /// Learned query scored against every frame embedding.
    query: ParamId,
    pub fc1: Linear,
    pub fc2: Linear,
    pub config: AcnnConfig,
}

impl AcnnClassifier {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: AcnnConfig,
        group: Group,
        rng: &mut R,
    ) -> Result<Self> {
        if config.conv_layers == 0 || config.stride == 0 || config.kernel == 0 {
            return Err(Error::contract(format!("invalid A-CNN config {config:?}")));
        }
        let convs = (0..config.conv_layers)
            .map(|l| {
                let c_in = if l == 0 {
                    config.input_dim
                } else {
                    config.channels
                };
                Conv1d::new(
                    store,
                    &format!("{name}.conv{l}"),
                    c_in,
                    config.channels,
                    config.kernel,
                    config.stride,
                    config.padding,
                    true,
                    group,
                    rng,
                )
            })
            .collect();
        let query = store.add(
            format!("{name}.attn.query"),
            Tensor::uniform(&[config.channels, 1], 1.0 / (config.channels as f64).sqrt(), rng),
            group,
        );
        let fc1 = Linear::new(store, &format!("{name}.fc1"), config.channels, config.hidden, group, rng);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), config.hidden, config.classes, group, rng);
        Ok(AcnnClassifier {
            convs,
            query,
            fc1,
            fc2,
            config,
        })
    }

    /// Time steps left after the convolution stack, if any.
    pub fn output_len(&self, frames: usize) -> Option<usize> {
        self.convs
            .iter()
            .try_fold(frames, |len, c| c.out_len(len).filter(|&l| l > 0))
    }

    /// Shortest input that survives every convolution.
    pub fn min_frames(&self) -> usize {
        (1..).find(|&t| self.output_len(t).is_some()).expect("some length fits")
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.forward_detailed(tape, store, x)?.logits)
    }

    pub fn forward_detailed(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<AcnnOutput> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.config.input_dim {
            return Err(Error::dim("acnn", &shape, &[self.config.input_dim]));
        }
        let min = self.min_frames();
        if shape[1] < min {
            return Err(Error::contract(format!(
                "A-CNN needs at least {min} frames, got {}",
                shape[1]
            )));
        }
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(tape, store, h)?;
            h = tape.gelu(h);
        }
        let (attention, pooled) = self.pool(tape, store, h)?;
        let hidden = self.fc1.forward(tape, store, pooled)?;
        let hidden = tape.gelu(hidden);
        let logits = self.fc2.forward(tape, store, hidden)?;
        Ok(AcnnOutput { logits, attention })
    }

    /// Attention pooling of `[B, T, C]` embeddings: softmax over time of
    /// `query · e_t`, then the weighted sum of the embeddings.
    pub fn pool(&self, tape: &mut Tape, store: &ParamStore, emb: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(emb).to_vec();
        let (batch, steps, ch) = (shape[0], shape[1], shape[2]);
        let q = tape.param(store, self.query);
        let scores = tape.linear(emb, q, None)?;
        let scores = tape.reshape(scores, &[batch, steps])?;
        let attention = tape.softmax(scores)?;
        let a3 = tape.reshape(attention, &[batch, 1, steps])?;
        let pooled = tape.batch_matmul(a3, emb)?;
        let pooled = tape.reshape(pooled, &[batch, ch])?;
        Ok((attention, pooled))
    }
}
