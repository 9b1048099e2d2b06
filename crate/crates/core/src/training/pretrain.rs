//! Masked contrastive pretraining of the toy encoder.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{contrastive_loss, cosine_scores, ContrastiveConfig};
use crate::models::{sample_time_mask, waveform_batch, ToyW2VEncoder};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Samples per training crop; every crop in a batch has this length.
    pub crop_samples: usize,
    pub contrastive: ContrastiveConfig,
    /// Seed the codebook from encoder latents of the corpus before training.
    pub init_codebook: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 500,
            batch_size: 4,
            lr: 2e-4,
            seed: 0,
            crop_samples: 32_000,
            contrastive: ContrastiveConfig::default(),
            init_codebook: true,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.contrastive.validate()?;
        if self.batch_size == 0 || self.crop_samples == 0 {
            return Err(Error::contract("batch_size and crop_samples must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    /// Contrastive loss of every optimizer step.
    pub losses: Vec<f64>,
    /// Fraction of masked steps whose true target scored strictly highest, per step.
    pub retrieval: Vec<f64>,
    /// Clips too short for one crop or one mask span.
    pub skipped: usize,
}

/// Contrastive loss of one batch of equal-length crops.
pub struct ContrastiveBatch {
    pub loss: Var,
    pub hits: usize,
    pub masked: usize,
}

/// Draws `k` distractor rows for a masked step from the other masked steps
/// of its utterance: without replacement when enough exist, otherwise every
/// other step plus uniform draws with replacement to fill `k`.
fn distractors<R: Rng + ?Sized>(others: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    if others.len() >= k {
        index::sample(rng, others.len(), k)
            .into_iter()
            .map(|i| others[i])
            .collect()
    } else {
        let mut out = others.to_vec();
        while out.len() < k {
            out.push(others[rng.random_range(0..others.len())]);
        }
        out
    }
}

/// Encodes, masks, contextualizes and scores a batch `[B, S, 1]`.
///
/// Targets are the quantized unmasked latents (straight-through); each masked
/// step is contrasted against its own target and `K` targets of other masked
/// steps of the same utterance. Steps quantized to the same code as the
/// target are not used as distractors, since an identical candidate cannot
/// be told apart; a masked step with no differing step is left out.
pub fn contrastive_batch<R: Rng + ?Sized>(
    tape: &mut Tape,
    encoder: &ToyW2VEncoder,
    store: &ParamStore,
    waves: Tensor,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<ContrastiveBatch> {
    let w = tape.constant(waves);
    let z = encoder.encode_local(tape, store, w)?;
    let shape = tape.shape(z).to_vec();
    let (batch, steps, d) = (shape[0], shape[1], shape[2]);
    let masks: Vec<Vec<bool>> = (0..batch)
        .map(|_| sample_time_mask(steps, encoder.config.mask, rng))
        .collect::<Result<_>>()?;
    let zm = encoder.apply_mask(tape, store, z, &masks)?;
    let c = encoder.contextualize(tape, store, zm)?;
    let flat_z = tape.reshape(z, &[batch * steps, d])?;
    let (q, codes) = encoder.quantize_straight_through(tape, store, flat_z)?;

    let mut rows = Vec::new();
    let mut candidates = Vec::new();
    for (b, mask) in masks.iter().enumerate() {
        let masked: Vec<usize> = (0..steps).filter(|&t| mask[t]).map(|t| b * steps + t).collect();
        for &r in &masked {
            let others: Vec<usize> = masked
                .iter()
                .copied()
                .filter(|&o| codes[o] != codes[r])
                .collect();
            if others.is_empty() {
                continue;
            }
            rows.push(r);
            candidates.push(r);
            candidates.extend(distractors(&others, cfg.num_distractors, rng));
        }
    }
    if rows.is_empty() {
        return Err(Error::contract("no masked step has a distractor"));
    }
    let m = rows.len();
    let k1 = cfg.num_distractors + 1;
    let flat_c = tape.reshape(c, &[batch * steps, d])?;
    let ctx = tape.index_select(flat_c, &rows)?;
    let cand = tape.index_select(q, &candidates)?;
    let cand = tape.reshape(cand, &[m, k1, d])?;
    let loss = contrastive_loss(tape, ctx, cand, cfg.temperature)?;

    let mut scratch = Tape::new();
    let cv = scratch.constant(tape.value(ctx).clone());
    let qv = scratch.constant(tape.value(cand).clone());
    let sims = cosine_scores(&mut scratch, cv, qv)?;
    let hits = scratch
        .value(sims)
        .rows()
        .filter(|row| row[1..].iter().all(|&s| row[0] > s))
        .count();
    Ok(ContrastiveBatch { loss, hits, masked: m })
}

/// Clips long enough for one crop that yields at least one mask span.
fn usable<'a>(encoder: &ToyW2VEncoder, waves: &'a [Vec<f64>], crop: usize) -> (Vec<&'a [f64]>, usize) {
    let min_steps = encoder.config.mask.span;
    let ok: Vec<&[f64]> = waves
        .iter()
        .filter(|w| w.len() >= crop && encoder.latent_steps(crop) >= min_steps)
        .map(|w| w.as_slice())
        .collect();
    let skipped = waves.len() - ok.len();
    (ok, skipped)
}

fn sample_batch<'a, R: Rng + ?Sized>(clips: &[&'a [f64]], batch: usize, crop: usize, rng: &mut R) -> Result<Tensor> {
    let crops: Vec<&[f64]> = (0..batch)
        .map(|_| {
            let w = clips[rng.random_range(0..clips.len())];
            let start = rng.random_range(0..=w.len() - crop);
            &w[start..start + crop]
        })
        .collect();
    waveform_batch(&crops)
}

/// Seeds the codebook with latents of random crops.
fn init_codebook<R: Rng + ?Sized>(
    encoder: &ToyW2VEncoder,
    store: &mut ParamStore,
    clips: &[&[f64]],
    crop: usize,
    rng: &mut R,
) -> Result<()> {
    let want = encoder.config.codebook_size;
    let per = encoder.latent_steps(crop).max(1);
    let batch = want.div_ceil(per).clamp(1, 16) * 2;
    let waves = sample_batch(clips, batch, crop, rng)?;
    let mut tape = Tape::new();
    let w = tape.constant(waves);
    let z = encoder.encode_local(&mut tape, store, w)?;
    let d = encoder.config.dim;
    let n = tape.value(z).numel() / d;
    let latents = tape.value(z).reshape(&[n, d])?;
    encoder.init_codebook(store, &latents, rng)
}

/// Self-supervised training of the pretrained parameter group of `store`.
/// Deterministic for a fixed seed.
pub fn pretrain_selfsupervised(
    encoder: &ToyW2VEncoder,
    store: &mut ParamStore,
    waves: &[Vec<f64>],
    config: &PretrainConfig,
) -> Result<PretrainReport> {
    config.validate()?;
    if waves.is_empty() {
        return Err(Error::contract("pretraining corpus is empty"));
    }
    let (clips, skipped) = usable(encoder, waves, config.crop_samples);
    if skipped > 0 {
        log::warn!("pretraining skipped {skipped} clips shorter than one crop");
    }
    if clips.is_empty() {
        return Err(Error::contract(format!(
            "no clip holds a crop of {} samples",
            config.crop_samples
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if config.init_codebook {
        init_codebook(encoder, store, &clips, config.crop_samples, &mut rng)?;
    }
    let active = store.partition().pretrained().clone();
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut report = PretrainReport {
        skipped,
        ..PretrainReport::default()
    };
    for step in 0..config.steps {
        let waves = sample_batch(&clips, config.batch_size, config.crop_samples, &mut rng)?;
        let mut tape = Tape::new();
        let out = contrastive_batch(&mut tape, encoder, store, waves, &config.contrastive, &mut rng)?;
        let loss = tape.value(out.loss).item();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("contrastive loss became {loss} at step {step}")));
        }
        let grads = tape.backward(out.loss)?;
        drop(tape);
        store.zero_grads();
        store.accumulate(&grads);
        adam.step(store, &active)?;
        report.losses.push(loss);
        report.retrieval.push(out.hits as f64 / out.masked as f64);
    }
    store.clear_grads();
    Ok(report)
}

/// Mean contrastive loss and retrieval accuracy over `batches` fresh batches,
/// without updating anything.
pub fn contrastive_eval(
    encoder: &ToyW2VEncoder,
    store: &ParamStore,
    waves: &[Vec<f64>],
    config: &PretrainConfig,
    batches: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (clips, _) = usable(encoder, waves, config.crop_samples);
    if clips.is_empty() || batches == 0 {
        return Err(Error::contract("nothing to evaluate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut loss, mut hits, mut total) = (0.0, 0, 0);
    for _ in 0..batches {
        let waves = sample_batch(&clips, config.batch_size, config.crop_samples, &mut rng)?;
        let mut tape = Tape::new();
        let out = contrastive_batch(&mut tape, encoder, store, waves, &config.contrastive, &mut rng)?;
        loss += tape.value(out.loss).item();
        hits += out.hits;
        total += out.masked;
    }
    Ok((loss / batches as f64, hits as f64 / total as f64))
}
