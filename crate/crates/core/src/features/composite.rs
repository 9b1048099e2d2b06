use super::cqt::{cqt, CQT_BINS};
use super::frame::frame_signal;
use super::mfcc::{mfcc, NUM_MFCC};
use super::pitch::estimate_f0;
use super::signal::AudioSignal;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// 13 MFCC + 1 F0 + 24 CQT.
pub const FEATURE_DIM: usize = NUM_MFCC + 1 + CQT_BINS;
pub const F0_COLUMN: usize = NUM_MFCC;

/// Per-frame composite features, `num_frames × FEATURE_DIM`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Tensor,
}

impl FeatureSequence {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.ndim() != 2 {
            return Err(Error::contract(format!(
                "feature sequence must be 2-D, got {:?}",
                frames.shape()
            )));
        }
        if !frames.all_finite() {
            return Err(Error::Numeric("feature sequence has non-finite entries".into()));
        }
        Ok(FeatureSequence { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.frames.data()[i * d..(i + 1) * d]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor {
        self.frames
    }
}

/// Column-wise z-normalization with statistics from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNormalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn identity(dim: usize) -> Self {
        FeatureNormalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::dim("normalizer", &[mean.len()], &[std.len()]));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::contract("normalizer std must be positive"));
        }
        Ok(FeatureNormalizer { mean, std })
    }

    /// Population mean and standard deviation of every column over all frames.
    /// Constant columns get a unit standard deviation.
    pub fn fit(sequences: &[FeatureSequence]) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::contract("cannot fit a normalizer on no sequences"))?;
        let dim = first.dim();
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for s in sequences {
            if s.dim() != dim {
                return Err(Error::dim("normalizer", &[dim], &[s.dim()]));
            }
            for row in s.frames.rows() {
                for (a, v) in sum.iter_mut().zip(row) {
                    *a += v;
                }
            }
            count += s.num_frames();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; dim];
        for s in sequences {
            for row in s.frames.rows() {
                for ((a, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureNormalizer { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn apply(&self, seq: &FeatureSequence) -> Result<FeatureSequence> {
        if seq.dim() != self.mean.len() {
            return Err(Error::dim("normalizer", &[self.mean.len()], &[seq.dim()]));
        }
        let mut out = seq.frames.clone();
        let d = self.mean.len();
        for row in out.data_mut().chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(FeatureSequence { frames: out })
    }
}

/// `[mfcc | f0 | cqt]` of one 4000-sample frame.
pub fn frame_features(frame: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(FEATURE_DIM);
    v.extend(mfcc(frame));
    v.push(estimate_f0(frame));
    v.extend(cqt(frame));
    v
}

/// Unnormalized composite features of every frame of `signal`.
pub fn raw_features(signal: &AudioSignal) -> Result<FeatureSequence> {
    let frames = frame_signal(signal)?;
    let n = frames.len();
    let data: Vec<f64> = frames.into_iter().flat_map(frame_features).collect();
    FeatureSequence::new(Tensor::new(&[n, FEATURE_DIM], data)?)
}

/// Composite features normalized with caller-supplied training statistics.
pub fn composite_features(
    signal: &AudioSignal,
    normalizer: &FeatureNormalizer,
) -> Result<FeatureSequence> {
    normalizer.apply(&raw_features(signal)?)
}
