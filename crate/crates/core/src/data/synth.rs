//! Seeded three-class synthetic speech stand-in.
//!
//! Each clip is a harmonic source whose pitch follows a reflected random
//! walk inside the class range, coloured by three parallel band-pass
//! "formant" resonators, gated into voiced stretches and pauses on a 10 ms
//! grid, modulated by per-block amplitude jitter, and mixed with a noise
//! floor 20 dB below the speech level.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Label;
use crate::error::{Error, Result};
use crate::features::SAMPLE_RATE;

/// Samples per gating block (10 ms).
pub const BLOCK: usize = 160;
/// RMS of voiced speech before jitter.
pub const SPEECH_RMS: f64 = 0.1;
/// Noise floor relative to the speech level (−20 dB).
pub const NOISE_RATIO: f64 = 0.1;
/// Standard deviation of the per-block pitch step in Hz.
const F0_STEP_HZ: f64 = 1.5;
/// Highest harmonic frequency in the source.
const HARMONIC_CEILING_HZ: f64 = 4000.0;
/// Pause lengths in blocks.
const PAUSE_BLOCKS: (usize, usize) = (15, 50);

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClassProfile {
    pub label: Label,
    pub f0_range: (f64, f64),
    pub pause_fraction: f64,
    pub formants: [f64; 3],
    /// Relative per-block amplitude variation in `[0, 1)`.
    pub jitter: f64,
}

impl SynthClassProfile {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.f0_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::contract(format!("{}: bad F0 range {lo}..{hi}", self.label)));
        }
        if !(0.0..1.0).contains(&self.pause_fraction) {
            return Err(Error::contract(format!("{}: pause fraction must be in [0, 1)", self.label)));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::contract(format!("{}: jitter must be in [0, 1)", self.label)));
        }
        if self.formants.iter().any(|&f| !(f > 0.0 && f < SAMPLE_RATE as f64 / 2.0)) {
            return Err(Error::contract(format!("{}: formants must lie below Nyquist", self.label)));
        }
        Ok(())
    }

    /// Number of generative parameters that differ between two profiles.
    pub fn differences(&self, other: &SynthClassProfile) -> usize {
        [
            self.f0_range != other.f0_range,
            self.pause_fraction != other.pause_fraction,
            self.formants != other.formants,
            self.jitter != other.jitter,
        ]
        .iter()
        .filter(|&&d| d)
        .count()
    }
}

/// Default profiles in label order: lower, slower, more hesitant speech for AD.
pub fn default_profiles() -> [SynthClassProfile; 3] {
    [
        SynthClassProfile {
            label: Label::Ad,
            f0_range: (90.0, 135.0),
            pause_fraction: 0.40,
            formants: [600.0, 1100.0, 2400.0],
            jitter: 0.30,
        },
        SynthClassProfile {
            label: Label::Mci,
            f0_range: (130.0, 170.0),
            pause_fraction: 0.25,
            formants: [700.0, 1250.0, 2600.0],
            jitter: 0.20,
        },
        SynthClassProfile {
            label: Label::Hc,
            f0_range: (165.0, 215.0),
            pause_fraction: 0.15,
            formants: [800.0, 1400.0, 2800.0],
            jitter: 0.10,
        },
    ]
}

/// Band-pass biquad with unit peak gain.
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(center: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * center / SAMPLE_RATE as f64;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        BandPass {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    while v < lo || v > hi {
        v = if v < lo { 2.0 * lo - v } else { 2.0 * hi - v };
    }
    v
}

/// Splits `total` into `parts` non-negative integers, uniformly over compositions.
fn random_composition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.random_range(0..=total)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

/// Voiced (`true`) / pause (`false`) flag per 10 ms block, with exactly
/// `round(pause_fraction · blocks)` pause blocks grouped into pauses.
pub fn pause_layout<R: Rng + ?Sized>(blocks: usize, pause_fraction: f64, rng: &mut R) -> Vec<bool> {
    let paused = (pause_fraction * blocks as f64).round() as usize;
    if paused == 0 {
        return vec![true; blocks];
    }
    let mean = (PAUSE_BLOCKS.0 + PAUSE_BLOCKS.1) / 2;
    let count = paused.div_ceil(mean).max(1);
    // pause lengths: base share plus a random composition of the rest
    let base = (paused / count).min(PAUSE_BLOCKS.0);
    let extra = random_composition(paused - base * count, count, rng);
    let pauses: Vec<usize> = extra.iter().map(|e| base + e).collect();
    let gaps = random_composition(blocks - paused, count + 1, rng);
    let mut layout = Vec::with_capacity(blocks);
    for i in 0..count {
        layout.extend(std::iter::repeat_n(true, gaps[i]));
        layout.extend(std::iter::repeat_n(false, pauses[i]));
    }
    layout.extend(std::iter::repeat_n(true, gaps[count]));
    layout
}

/// Pitch in Hz for each 10 ms block.
pub fn pitch_track<R: Rng + ?Sized>(blocks: usize, range: (f64, f64), rng: &mut R) -> Vec<f64> {
    let (lo, hi) = range;
    let step = Normal::new(0.0, F0_STEP_HZ).expect("valid step");
    let mut f0 = rng.random_range(lo..=hi);
    (0..blocks)
        .map(|_| {
            let cur = f0;
            f0 = reflect(f0 + step.sample(rng), lo, hi);
            cur
        })
        .collect()
}

/// `Σ_{k=1..=n} sin(kφ)/k`, with `sin(kφ)` from the Chebyshev recurrence.
fn harmonic_sum(phase: f64, n: usize) -> f64 {
    let c = 2.0 * phase.cos();
    let (mut prev, mut cur) = (0.0, phase.sin());
    let mut sum = 0.0;
    for k in 1..=n {
        sum += cur / k as f64;
        let next = c * cur - prev;
        prev = cur;
        cur = next;
    }
    sum
}

/// One clip of `samples` samples drawn from `profile`.
pub fn synthesize_clip<R: Rng + ?Sized>(profile: &SynthClassProfile, samples: usize, rng: &mut R) -> Vec<f64> {
    let blocks = samples.div_ceil(BLOCK);
    let track = pitch_track(blocks, profile.f0_range, rng);
    let layout = pause_layout(blocks, profile.pause_fraction, rng);
    let gains: Vec<f64> = (0..blocks)
        .map(|_| 1.0 + profile.jitter * rng.random_range(-1.0..=1.0))
        .collect();

    let fs = SAMPLE_RATE as f64;
    let mut filters: Vec<BandPass> = profile.formants.iter().map(|&f| BandPass::new(f, 5.0)).collect();
    let formant_gain = [1.0, 0.7, 0.4];
    let mut phase: f64 = 0.0;
    let mut voiced = Vec::with_capacity(samples);
    for n in 0..samples {
        let f0 = track[n / BLOCK];
        phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI);
        let harmonics = (HARMONIC_CEILING_HZ / f0).floor() as usize;
        let src = harmonic_sum(phase, harmonics);
        let shaped: f64 = filters
            .iter_mut()
            .zip(formant_gain)
            .map(|(f, g)| g * f.process(src))
            .sum();
        voiced.push(0.3 * src + shaped);
    }
    let rms = (voiced.iter().map(|v| v * v).sum::<f64>() / samples as f64).sqrt();
    let scale = if rms > 0.0 { SPEECH_RMS / rms } else { 0.0 };
    let noise = Normal::new(0.0, SPEECH_RMS * NOISE_RATIO).expect("valid noise level");
    voiced
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let b = n / BLOCK;
            let speech = if layout[b] { v * scale * gains[b] } else { 0.0 };
            speech + noise.sample(rng)
        })
        .collect()
}

/// Deterministic per-clip generator: an independent stream for every
/// (subset, label, index).
pub fn clip_rng(seed: u64, subset: u16, label: Label, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subset as u64) << 40) | ((label.index() as u64) << 32) | index as u64);
    rng
}
