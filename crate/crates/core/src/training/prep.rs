//! Turning decoded clips into model inputs.

use crate::autodiff::Tensor;
use crate::data::LabeledClip;
use crate::error::{Error, Result};
use crate::features::{raw_features, FeatureNormalizer, FeatureSequence};

use super::supervised::Example;

/// Raw composite features of every clip.
pub fn clip_features(clips: &[LabeledClip]) -> Result<Vec<FeatureSequence>> {
    clips.iter().map(|c| raw_features(&c.signal)).collect()
}

/// Normalized feature examples using statistics fitted elsewhere.
pub fn feature_examples(
    clips: &[LabeledClip],
    features: Vec<FeatureSequence>,
    normalizer: &FeatureNormalizer,
) -> Result<Vec<Example>> {
    clips
        .iter()
        .zip(features)
        .map(|(c, f)| {
            Ok(Example {
                input: normalizer.apply(&f)?.into_tensor(),
                label: c.label.index(),
            })
        })
        .collect()
}

/// Centre crop of `len` samples.
pub fn center_crop(samples: &[f64], len: usize) -> Result<&[f64]> {
    if samples.len() < len {
        return Err(Error::TooShort {
            len: samples.len(),
            min: len,
        });
    }
    let start = (samples.len() - len) / 2;
    Ok(&samples[start..start + len])
}

/// Waveform examples `[len, 1]` from centre crops.
pub fn waveform_examples(clips: &[LabeledClip], len: usize) -> Result<Vec<Example>> {
    clips
        .iter()
        .map(|c| {
            let crop = center_crop(c.signal.samples(), len)?;
            Ok(Example {
                input: Tensor::new(&[len, 1], crop.to_vec())?,
                label: c.label.index(),
            })
        })
        .collect()
}
