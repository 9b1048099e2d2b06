use std::f64::consts::PI;
use std::sync::OnceLock;

use super::frame::{hann, WINDOW};
use super::mfcc::LOG_FLOOR;
use super::SAMPLE_RATE;

pub const CQT_BINS: usize = 24;
pub const BINS_PER_OCTAVE: usize = 12;
pub const CQT_FMIN: f64 = 110.0;

/// Quality factor for 12 bins per octave.
pub fn q_factor() -> f64 {
    1.0 / (2f64.powf(1.0 / BINS_PER_OCTAVE as f64) - 1.0)
}

/// `fmin · 2^(b/12)` for every bin.
pub fn center_frequencies() -> Vec<f64> {
    (0..CQT_BINS)
        .map(|b| CQT_FMIN * 2f64.powf(b as f64 / BINS_PER_OCTAVE as f64))
        .collect()
}

/// One complex analysis kernel, centred in the frame.
#[derive(Clone, Debug)]
struct Kernel {
    offset: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

fn kernels() -> &'static [Kernel] {
    static KERNELS: OnceLock<Vec<Kernel>> = OnceLock::new();
    KERNELS.get_or_init(|| {
        let q = q_factor();
        center_frequencies()
            .into_iter()
            .map(|f| {
                let len = ((q * SAMPLE_RATE as f64 / f).round() as usize).min(WINDOW);
                let win = hann(len);
                let norm = len as f64;
                let (re, im) = win
                    .iter()
                    .enumerate()
                    .map(|(n, w)| {
                        let phase = -2.0 * PI * q * n as f64 / len as f64;
                        (w * phase.cos() / norm, w * phase.sin() / norm)
                    })
                    .unzip();
                Kernel {
                    offset: (WINDOW - len) / 2,
                    re,
                    im,
                }
            })
            .collect()
    })
}

/// Length of each bin's kernel in samples.
pub fn kernel_lengths() -> Vec<usize> {
    kernels().iter().map(|k| k.re.len()).collect()
}

/// Floored log-magnitude constant-Q spectrum of a 4000-sample frame,
/// by direct inner products with the windowed complex kernels.
pub fn cqt(frame: &[f64]) -> Vec<f64> {
    assert_eq!(frame.len(), WINDOW, "frame must have {WINDOW} samples");
    kernels()
        .iter()
        .map(|k| {
            let x = &frame[k.offset..k.offset + k.re.len()];
            let re: f64 = x.iter().zip(&k.re).map(|(a, b)| a * b).sum();
            let im: f64 = x.iter().zip(&k.im).map(|(a, b)| a * b).sum();
            (re * re + im * im).sqrt().max(LOG_FLOOR).ln()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64) -> Vec<f64> {
        (0..WINDOW)
            .map(|i| (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    }

    #[test]
    fn silence_is_floored() {
        assert!(cqt(&vec![0.0; WINDOW]).iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn octave_placement() {
        assert_eq!(argmax(&cqt(&sine(220.0))), 12);
        assert_eq!(argmax(&cqt(&sine(110.0))), 0);
    }

    #[test]
    fn every_kernel_fits_in_the_frame() {
        assert!(kernel_lengths().iter().all(|&l| l <= WINDOW && l > 0));
        // longest kernel belongs to the lowest bin
        assert_eq!(kernel_lengths()[0], kernel_lengths().into_iter().max().unwrap());
    }
}
