//! Handcrafted acoustic features over 250 ms windows with a 200 ms hop:
//! MFCC, autocorrelation F0 and a direct constant-Q transform.

mod composite;
pub mod cqt;
mod frame;
pub mod mfcc;
pub mod pitch;
mod signal;

pub use composite::{
    composite_features, frame_features, raw_features, FeatureNormalizer, FeatureSequence,
    F0_COLUMN, FEATURE_DIM,
};
pub use cqt::cqt;
pub use frame::{frame_count, frame_signal, hann, HOP, WINDOW};
pub use mfcc::mfcc;
pub use pitch::estimate_f0;
pub use signal::{AudioSignal, SAMPLE_RATE};
