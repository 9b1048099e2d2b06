//! Toy three-stage speech encoder: convolutional latent extractor,
//! transformer context network, and a nearest-neighbour codebook quantizer.

use rand::seq::index;
use rand::Rng;

use super::layers::{Conv1d, LayerNorm, Linear};
use crate::autodiff::{Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Scale of the codebook rows around the latent mean after `init_codebook`.
pub const CODEBOOK_SHRINK: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    /// Probability that a step starts a masked span.
    pub prob: f64,
    pub span: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            prob: 0.065,
            span: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct W2vConfig {
    pub dim: usize,
    /// `(kernel, stride)` of each latent convolution; kernel equals stride so
    /// steps never overlap and the step count is `floor(samples / Π stride)`.
    pub conv: Vec<(usize, usize)>,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
    pub codebook_size: usize,
    pub pos_kernel: usize,
    pub mask: MaskConfig,
}

impl Default for W2vConfig {
    fn default() -> Self {
        W2vConfig {
            dim: 32,
            conv: vec![(5, 5), (8, 8), (8, 8)],
            heads: 2,
            ffn: 64,
            layers: 2,
            codebook_size: 64,
            pos_kernel: 5,
            mask: MaskConfig::default(),
        }
    }
}

impl W2vConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(format!("encoder config: {m}")));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad("dim must be a positive multiple of heads");
        }
        if self.conv.is_empty() || self.conv.iter().any(|&(k, s)| k == 0 || s == 0) {
            return bad("latent convolutions need positive kernel and stride");
        }
        if self.codebook_size == 0 || self.ffn == 0 || self.pos_kernel % 2 == 0 {
            return bad("codebook and ffn must be positive, positional kernel odd");
        }
        if !(0.0..=1.0).contains(&self.mask.prob) || self.mask.span == 0 {
            return bad("mask probability must lie in [0, 1] and span be positive");
        }
        Ok(())
    }

    /// Samples per latent step.
    pub fn stride_product(&self) -> usize {
        self.conv.iter().map(|&(_, s)| s).product()
    }
}

/// Pre-norm transformer block with multi-head self-attention.
#[derive(Clone, Debug)]
struct TransformerLayer {
    ln_attn: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln_ffn: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    heads: usize,
}

impl TransformerLayer {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &W2vConfig, rng: &mut R) -> Self {
        let g = Group::Pretrained;
        let d = cfg.dim;
        TransformerLayer {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d, g),
            wq: Linear::new(store, &format!("{name}.q"), d, d, g, rng),
            wk: Linear::new(store, &format!("{name}.k"), d, d, g, rng),
            wv: Linear::new(store, &format!("{name}.v"), d, d, g, rng),
            wo: Linear::new(store, &format!("{name}.o"), d, d, g, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d, g),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, cfg.ffn, g, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), cfg.ffn, d, g, rng),
            heads: cfg.heads,
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let d = *tape.shape(x).last().unwrap();
        let hd = d / self.heads;
        let n = self.ln_attn.forward(tape, store, x)?;
        let q = self.wq.forward(tape, store, n)?;
        let k = self.wk.forward(tape, store, n)?;
        let v = self.wv.forward(tape, store, n)?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.narrow(q, 2, h * hd, hd)?;
            let kh = tape.narrow(k, 2, h * hd, hd)?;
            let vh = tape.narrow(v, 2, h * hd, hd)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.batch_matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
            let att = tape.softmax(scores)?;
            outs.push(tape.batch_matmul(att, vh)?);
        }
        let heads = tape.concat(&outs, 2)?;
        let attn = self.wo.forward(tape, store, heads)?;
        let x = tape.add(x, attn)?;
        let n = self.ln_ffn.forward(tape, store, x)?;
        let f = self.ff1.forward(tape, store, n)?;
        let f = tape.gelu(f);
        let f = self.ff2.forward(tape, store, f)?;
        tape.add(x, f)
    }
}

/// Output of the codebook lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    /// `[N, D]`, each row a codebook row.
    pub q: Tensor,
    pub indices: Vec<usize>,
}

/// Index of the codebook row nearest to `v` in Euclidean distance; the lowest index wins ties.
pub fn nearest_code(codebook: &Tensor, v: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, row) in codebook.rows().enumerate() {
        let d: f64 = row.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Nearest-neighbour quantization of every row of `z`.
pub fn quantize_with(codebook: &Tensor, z: &Tensor) -> Result<Quantized> {
    let d = codebook.last_dim();
    if z.last_dim() != d {
        return Err(Error::dim("quantize", z.shape(), codebook.shape()));
    }
    let indices: Vec<usize> = z.rows().map(|r| nearest_code(codebook, r)).collect();
    let mut data = Vec::with_capacity(z.numel());
    let cb = codebook.data();
    for &i in &indices {
        data.extend_from_slice(&cb[i * d..(i + 1) * d]);
    }
    Ok(Quantized {
        q: Tensor::new(z.shape(), data)?,
        indices,
    })
}

/// Draws a time mask: each admissible step starts a span with probability
/// `prob`, spans cover `span` steps, and when no start is drawn one is chosen
/// uniformly so at least one span is always masked.
pub fn sample_time_mask<R: Rng + ?Sized>(len: usize, cfg: MaskConfig, rng: &mut R) -> Result<Vec<bool>> {
    if len < cfg.span {
        return Err(Error::contract(format!(
            "sequence of {len} steps is shorter than the mask span {}",
            cfg.span
        )));
    }
    let starts = len - cfg.span + 1;
    let mut chosen: Vec<usize> = (0..starts).filter(|_| rng.random_bool(cfg.prob)).collect();
    if chosen.is_empty() {
        chosen.push(rng.random_range(0..starts));
    }
    let mut mask = vec![false; len];
    for s in chosen {
        mask[s..s + cfg.span].iter_mut().for_each(|m| *m = true);
    }
    Ok(mask)
}

#[derive(Clone, Debug)]
pub struct ToyW2VEncoder {
    local: Vec<(Conv1d, LayerNorm)>,
    pos_conv: Conv1d,
    layers: Vec<TransformerLayer>,
    final_ln: LayerNorm,
    mask_embedding: ParamId,
    codebook: ParamId,
    pub config: W2vConfig,
}

impl ToyW2VEncoder {
    /// Registers all encoder tensors under `name` in the pretrained group.
    /// The codebook is a non-trainable buffer.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: W2vConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let g = Group::Pretrained;
        let d = config.dim;
        let local = config
            .conv
            .iter()
            .enumerate()
            .map(|(i, &(k, s))| {
                let c_in = if i == 0 { 1 } else { d };
                let conv = Conv1d::new(store, &format!("{name}.conv{i}"), c_in, d, k, s, 0, false, g, rng);
                let ln = LayerNorm::new(store, &format!("{name}.conv{i}.ln"), d, g);
                (conv, ln)
            })
            .collect();
        let pos_conv = Conv1d::new(
            store,
            &format!("{name}.pos_conv"),
            d,
            d,
            config.pos_kernel,
            1,
            config.pos_kernel / 2,
            true,
            g,
            rng,
        );
        let layers = (0..config.layers)
            .map(|l| TransformerLayer::new(store, &format!("{name}.layer{l}"), &config, rng))
            .collect();
        let final_ln = LayerNorm::new(store, &format!("{name}.final_ln"), d, g);
        let mask_embedding = store.add(
            format!("{name}.mask_embedding"),
            Tensor::uniform(&[d], 1.0, rng),
            g,
        );
        let codebook = store.add_buffer(
            format!("{name}.codebook"),
            Tensor::randn(&[config.codebook_size, d], 1.0, rng),
            g,
        );
        Ok(ToyW2VEncoder {
            local,
            pos_conv,
            layers,
            final_ln,
            mask_embedding,
            codebook,
            config,
        })
    }

    pub fn latent_steps(&self, samples: usize) -> usize {
        samples / self.config.stride_product()
    }

    pub fn codebook<'a>(&self, store: &'a ParamStore) -> &'a Tensor {
        store.get(self.codebook).value()
    }

    /// Latents `[B, floor(S / stride), dim]` from waveforms `[B, S, 1]`.
    pub fn encode_local(&self, tape: &mut Tape, store: &ParamStore, wave: Var) -> Result<Var> {
        let shape = tape.shape(wave).to_vec();
        if shape.len() != 3 || shape[2] != 1 {
            return Err(Error::dim("encode_local", &shape, &[1]));
        }
        let min = self.config.stride_product();
        if shape[1] < min {
            return Err(Error::contract(format!(
                "waveform of {} samples is shorter than one latent step ({min} samples)",
                shape[1]
            )));
        }
        let mut h = wave;
        for (conv, ln) in &self.local {
            h = conv.forward(tape, store, h)?;
            h = ln.forward(tape, store, h)?;
            h = tape.gelu(h);
        }
        Ok(h)
    }

    /// Replaces the steps flagged in `mask[b][t]` with the learned mask
    /// embedding; other steps are passed through unchanged.
    pub fn apply_mask(&self, tape: &mut Tape, store: &ParamStore, z: Var, mask: &[Vec<bool>]) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        let (batch, steps, d) = (shape[0], shape[1], shape[2]);
        if mask.len() != batch || mask.iter().any(|m| m.len() != steps) {
            return Err(Error::dim("apply_mask", &shape, &[mask.len()]));
        }
        let rows = batch * steps;
        let flat = tape.reshape(z, &[rows, d])?;
        let emb = tape.param(store, self.mask_embedding);
        let emb = tape.reshape(emb, &[1, d])?;
        let table = tape.concat(&[flat, emb], 0)?;
        let picks: Vec<usize> = mask
            .iter()
            .flatten()
            .enumerate()
            .map(|(i, &m)| if m { rows } else { i })
            .collect();
        let out = tape.index_select(table, &picks)?;
        tape.reshape(out, &[batch, steps, d])
    }

    /// Context vectors `[B, T, dim]` from (possibly masked) latents.
    pub fn contextualize(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let pos = self.pos_conv.forward(tape, store, z)?;
        let pos = tape.gelu(pos);
        let mut h = tape.add(z, pos)?;
        for layer in &self.layers {
            h = layer.forward(tape, store, h)?;
        }
        self.final_ln.forward(tape, store, h)
    }

    /// Unmasked encoding used by the downstream classifiers.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, wave: Var) -> Result<Var> {
        let z = self.encode_local(tape, store, wave)?;
        self.contextualize(tape, store, z)
    }

    /// Nearest codebook rows of `z: [N, dim]`.
    pub fn quantize(&self, store: &ParamStore, z: &Tensor) -> Result<Quantized> {
        quantize_with(self.codebook(store), z)
    }

    /// Quantized targets for the rows of `z` that still carry gradient to the
    /// encoder, treating the lookup as identity in the backward pass.
    pub fn quantize_straight_through(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<(Var, Vec<usize>)> {
        let Quantized { q, indices } = self.quantize(store, tape.value(z))?;
        Ok((tape.straight_through(z, q)?, indices))
    }

    /// Seeds the codebook from `latents: [N, dim]`: row i is
    /// `mean + CODEBOOK_SHRINK * (z_i - mean)` for distinct sampled latents
    /// `z_i`. Shrinking toward the mean keeps the codes nearly parallel, so
    /// cosine scores start close to uniform while nearest-neighbor
    /// assignment still follows the spread of the data.
    pub fn init_codebook<R: Rng + ?Sized>(&self, store: &mut ParamStore, latents: &Tensor, rng: &mut R) -> Result<()> {
        let d = self.config.dim;
        let k = self.config.codebook_size;
        if latents.ndim() != 2 || latents.last_dim() != d || latents.shape()[0] == 0 {
            return Err(Error::dim("init_codebook", latents.shape(), &[k, d]));
        }
        let n = latents.shape()[0];
        let rows: Vec<&[f64]> = latents.rows().collect();
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v / n as f64;
            }
        }
        let mut picks = index::sample(rng, n, k.min(n)).into_vec();
        while picks.len() < k {
            picks.push(rng.random_range(0..n));
        }
        let mut data = Vec::with_capacity(k * d);
        for &i in &picks {
            data.extend(
                rows[i]
                    .iter()
                    .zip(&mean)
                    .map(|(v, m)| m + CODEBOOK_SHRINK * (v - m) + 1e-6 * rng.random_range(-1.0..1.0)),
            );
        }
        *store.get_mut(self.codebook).value_mut() = Tensor::new(&[k, d], data)?;
        Ok(())
    }
}

/// Stacks equal-length waveforms into `[B, S, 1]`.
pub fn waveform_batch(waves: &[&[f64]]) -> Result<Tensor> {
    let first = waves
        .first()
        .ok_or_else(|| Error::contract("empty waveform batch"))?;
    let len = first.len();
    if len == 0 {
        return Err(Error::contract("empty waveform"));
    }
    let mut data = Vec::with_capacity(len * waves.len());
    for w in waves {
        if w.len() != len {
            return Err(Error::dim("waveform_batch", &[len], &[w.len()]));
        }
        data.extend_from_slice(w);
    }
    Tensor::new(&[waves.len(), len, 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stride_product_is_320() {
        assert_eq!(W2vConfig::default().stride_product(), 320);
    }

    #[test]
    fn mask_floor_and_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = sample_time_mask(20, MaskConfig { prob: 0.0, span: 4 }, &mut rng).unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 4);
        let first = m.iter().position(|&b| b).unwrap();
        assert!(m[first..first + 4].iter().all(|&b| b));
        let m = sample_time_mask(20, MaskConfig { prob: 1.0, span: 4 }, &mut rng).unwrap();
        assert!(m.iter().all(|&b| b));
        assert!(sample_time_mask(3, MaskConfig::default(), &mut rng).is_err());
    }
}
