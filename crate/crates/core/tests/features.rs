use std::f64::consts::PI;

use adspeech_core::features::mfcc::{self, hz_to_mel, mel_filterbank, mel_to_hz};
use adspeech_core::features::{
    composite_features, cqt, raw_features, AudioSignal, FeatureNormalizer, FeatureSequence,
    FEATURE_DIM, SAMPLE_RATE, WINDOW,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 0.25).unwrap();
    (0..len).map(|_| n.sample(&mut rng)).collect()
}

fn tone(freq: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
        .collect()
}

/// Power spectrum by the O(N²) definition of the DFT.
fn naive_power(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let w = mfcc::windowed(frame);
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in w.iter().enumerate() {
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn mfcc_fft_matches_naive_dft() {
    for seed in 0..3 {
        let frame = noise(seed, WINDOW);
        let fast = mfcc::mfcc(&frame);
        let slow = mfcc::mfcc_from_power(&naive_power(&frame));
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn one_khz_tone_peaks_in_the_band_containing_it() {
    // band centres recomputed from the mel spacing, independent of the filterbank code
    let (lo, hi) = (0.0, hz_to_mel(8000.0));
    let centers: Vec<f64> = (1..=26)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / 27.0))
        .collect();
    let expected = centers
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
        .unwrap()
        .0;
    let frame = tone(1000.0, WINDOW);
    let energies = mel_filterbank().energies(&mfcc::power_spectrum(&frame));
    let got = energies
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(got, expected);
}

#[test]
fn cqt_centers_follow_semitone_grid() {
    let c = adspeech_core::features::cqt::center_frequencies();
    assert_eq!(c.len(), 24);
    for (b, f) in c.iter().enumerate() {
        assert_eq!(*f, 110.0 * 2f64.powf(b as f64 / 12.0));
    }
    assert!((c[12] - 220.0).abs() < 1e-12);
    let q = adspeech_core::features::cqt::q_factor();
    assert!((q - 16.817153745105756).abs() < 1e-9);
    let _ = cqt(&vec![0.0; WINDOW]);
}

#[test]
fn composite_dimensions_and_determinism() {
    let s = AudioSignal::new(noise(1, 4000), SAMPLE_RATE).unwrap();
    let f = composite_features(&s, &FeatureNormalizer::identity(FEATURE_DIM)).unwrap();
    assert_eq!((f.num_frames(), f.dim()), (1, 38));
    assert_eq!(f, raw_features(&s).unwrap());

    let long = AudioSignal::new(noise(2, 16000), SAMPLE_RATE).unwrap();
    let a = raw_features(&long).unwrap();
    let b = raw_features(&long).unwrap();
    assert_eq!(a.num_frames(), 4);
    let bits = |f: &FeatureSequence| {
        f.as_tensor()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));

    let short = AudioSignal::new(vec![0.0; 100], SAMPLE_RATE).unwrap();
    assert!(raw_features(&short).is_err());
}

#[test]
fn training_statistics_normalize_to_zero_mean() {
    let train: Vec<FeatureSequence> = (0..4)
        .map(|i| {
            let mut x = tone(120.0 + 30.0 * i as f64, 12_000);
            for (a, b) in x.iter_mut().zip(noise(10 + i, 12_000)) {
                *a += 0.1 * b;
            }
            raw_features(&AudioSignal::new(x, SAMPLE_RATE).unwrap()).unwrap()
        })
        .collect();
    let norm = FeatureNormalizer::fit(&train).unwrap();
    let normalized: Vec<FeatureSequence> =
        train.iter().map(|s| norm.apply(s).unwrap()).collect();
    let frames: usize = normalized.iter().map(|s| s.num_frames()).sum();
    for col in 0..FEATURE_DIM {
        let mean: f64 = normalized
            .iter()
            .flat_map(|s| (0..s.num_frames()).map(move |i| s.frame(i)[col]))
            .sum::<f64>()
            / frames as f64;
        assert!(mean.abs() < 1e-10, "column {col}: {mean}");
    }
}
