use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::frame::WINDOW;
use super::SAMPLE_RATE;

pub const F0_MIN_HZ: f64 = 60.0;
pub const F0_MAX_HZ: f64 = 400.0;
/// Frames whose best normalized autocorrelation peak falls below this are unvoiced.
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Earliest peak within this fraction of the best one wins, which avoids
/// locking onto a multiple of the period.
const OCTAVE_TOLERANCE: f64 = 0.9;

const FFT_LEN: usize = 8192;

struct PitchPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plan() -> &'static PitchPlan {
    static PLAN: OnceLock<PitchPlan> = OnceLock::new();
    PLAN.get_or_init(|| {
        let mut planner = FftPlanner::new();
        PitchPlan {
            forward: planner.plan_fft_forward(FFT_LEN),
            inverse: planner.plan_fft_inverse(FFT_LEN),
        }
    })
}

pub fn min_lag() -> usize {
    (SAMPLE_RATE as f64 / F0_MAX_HZ).ceil() as usize
}

pub fn max_lag() -> usize {
    (SAMPLE_RATE as f64 / F0_MIN_HZ).floor() as usize
}

/// Normalized autocorrelation `r(τ) / sqrt(E_head(τ)·E_tail(τ))` for
/// `τ = 0..=max_lag+1`, where the energies cover the overlapping parts.
pub fn normalized_autocorrelation(frame: &[f64]) -> Vec<f64> {
    assert!(frame.len() <= FFT_LEN / 2, "frame too long for the pitch FFT");
    let n = frame.len();
    let p = plan();
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
    for (b, &x) in buf.iter_mut().zip(frame) {
        b.re = x;
    }
    p.forward.process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    p.inverse.process(&mut buf);

    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &x in frame {
        prefix.push(prefix.last().unwrap() + x * x);
    }
    let total = prefix[n];
    let last = (max_lag() + 1).min(n - 1);
    (0..=last)
        .map(|lag| {
            let r = buf[lag].re / FFT_LEN as f64;
            let head = prefix[n - lag];
            let tail = total - prefix[lag];
            let denom = (head * tail).sqrt();
            if denom > 0.0 {
                r / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Autocorrelation pitch in Hz, or 0 when the frame is unvoiced.
pub fn estimate_f0(frame: &[f64]) -> f64 {
    assert_eq!(frame.len(), WINDOW, "frame must have {WINDOW} samples");
    let energy: f64 = frame.iter().map(|x| x * x).sum();
    if energy <= 1e-12 {
        return 0.0;
    }
    let r = normalized_autocorrelation(frame);
    let (lo, hi) = (min_lag(), max_lag());
    let peaks: Vec<usize> = (lo..=hi)
        .filter(|&t| r[t] > r[t - 1] && r[t] >= r[t + 1])
        .collect();
    let Some(best) = peaks.iter().map(|&t| r[t]).reduce(f64::max) else {
        return 0.0;
    };
    if best < VOICING_THRESHOLD {
        return 0.0;
    }
    let lag = peaks
        .into_iter()
        .find(|&t| r[t] >= OCTAVE_TOLERANCE * best)
        .expect("best peak qualifies");
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let shift = if curvature.abs() > 1e-12 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    SAMPLE_RATE as f64 / (lag as f64 + shift)
}
