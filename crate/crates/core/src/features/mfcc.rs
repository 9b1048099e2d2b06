use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::frame::{hann, WINDOW};
use super::SAMPLE_RATE;

pub const NUM_MFCC: usize = 13;
pub const NUM_MEL_BANDS: usize = 26;
pub const MEL_FMAX: f64 = 8000.0;
/// Floor applied before taking logarithms of energies and magnitudes.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale between 0 Hz and 8 kHz,
/// evaluated on the bins of a `WINDOW`-point real spectrum.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `NUM_MEL_BANDS + 2` edge frequencies in Hz.
    edges: Vec<f64>,
    /// Per band: first bin and weights from it onward.
    bands: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new() -> Self {
        let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(MEL_FMAX));
        let edges: Vec<f64> = (0..NUM_MEL_BANDS + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (NUM_MEL_BANDS + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / WINDOW as f64;
        let nbins = WINDOW / 2 + 1;
        let bands = (0..NUM_MEL_BANDS)
            .map(|b| {
                let (left, center, right) = (edges[b], edges[b + 1], edges[b + 2]);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..nbins {
                    let f = k as f64 * bin_hz;
                    let w = if f > left && f <= center {
                        (f - left) / (center - left)
                    } else if f > center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                    }
                    if first.is_some() {
                        if f >= right {
                            break;
                        }
                        weights.push(w);
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        MelFilterbank { edges, bands }
    }

    /// Peak frequency of each band.
    pub fn centers(&self) -> &[f64] {
        &self.edges[1..=NUM_MEL_BANDS]
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Weighted power per band.
    pub fn energies(&self, power: &[f64]) -> Vec<f64> {
        self.bands
            .iter()
            .map(|(first, w)| {
                w.iter()
                    .zip(&power[*first..])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct2_orthonormal(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                    .sum::<f64>()
        })
        .collect()
}

struct MfccPlan {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: MelFilterbank,
}

fn plan() -> &'static MfccPlan {
    static PLAN: OnceLock<MfccPlan> = OnceLock::new();
    PLAN.get_or_init(|| MfccPlan {
        fft: FftPlanner::new().plan_fft_forward(WINDOW),
        window: hann(WINDOW),
        filterbank: MelFilterbank::new(),
    })
}

pub fn mel_filterbank() -> &'static MelFilterbank {
    &plan().filterbank
}

/// Hann-windowed frame.
pub fn windowed(frame: &[f64]) -> Vec<f64> {
    frame.iter().zip(&plan().window).map(|(x, w)| x * w).collect()
}

/// `|X_k|²` for `k = 0..=WINDOW/2` of the Hann-windowed frame.
pub fn power_spectrum(frame: &[f64]) -> Vec<f64> {
    assert_eq!(frame.len(), WINDOW, "frame must have {WINDOW} samples");
    let p = plan();
    let mut buf: Vec<Complex<f64>> = frame
        .iter()
        .zip(&p.window)
        .map(|(x, w)| Complex::new(x * w, 0.0))
        .collect();
    p.fft.process(&mut buf);
    buf[..WINDOW / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Cepstrum of a power spectrum: mel energies, floored log, orthonormal DCT-II.
pub fn mfcc_from_power(power: &[f64]) -> Vec<f64> {
    let log_e: Vec<f64> = mel_filterbank()
        .energies(power)
        .into_iter()
        .map(|e| e.max(LOG_FLOOR).ln())
        .collect();
    dct2_orthonormal(&log_e, NUM_MFCC)
}

/// 13 MFCCs (c0 included) of a 4000-sample frame.
pub fn mfcc(frame: &[f64]) -> Vec<f64> {
    mfcc_from_power(&power_spectrum(frame))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_spans_the_band() {
        let fb = MelFilterbank::new();
        assert_eq!(fb.centers().len(), NUM_MEL_BANDS);
        assert!(fb.edges()[0].abs() < 1e-9);
        assert!((fb.edges()[NUM_MEL_BANDS + 1] - MEL_FMAX).abs() < 1e-9);
        assert!(fb.centers().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn silence_gives_floor_cepstrum() {
        let c = mfcc(&vec![0.0; WINDOW]);
        let c0 = (NUM_MEL_BANDS as f64).sqrt() * LOG_FLOOR.ln();
        assert!((c[0] - c0).abs() < 1e-9, "{} vs {c0}", c[0]);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9), "{c:?}");
    }
}
