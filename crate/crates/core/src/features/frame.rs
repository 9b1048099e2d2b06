use super::signal::AudioSignal;
use crate::error::{Error, Result};

/// 250 ms at 16 kHz.
pub const WINDOW: usize = 4000;
/// 250 ms windows overlapping by 50 ms advance by 200 ms.
pub const HOP: usize = 3200;

/// Number of full windows in `len` samples.
pub fn frame_count(len: usize) -> usize {
    if len < WINDOW {
        0
    } else {
        (len - WINDOW) / HOP + 1
    }
}

/// Splits a signal into full 4000-sample windows at a 3200-sample hop.
/// A trailing partial window is dropped.
pub fn frame_signal(signal: &AudioSignal) -> Result<Vec<&[f64]>> {
    let s = signal.samples();
    if s.len() < WINDOW {
        return Err(Error::TooShort {
            len: s.len(),
            min: WINDOW,
        });
    }
    Ok((0..frame_count(s.len()))
        .map(|i| &s[i * HOP..i * HOP + WINDOW])
        .collect())
}

/// Symmetric Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}
