//! Downstream classifiers, the toy self-supervised encoder, and checkpoints.

pub mod acnn;
pub mod checkpoint;
pub mod classifier;
pub mod gru;
pub mod layers;
pub mod w2v;

pub use acnn::{AcnnClassifier, AcnnConfig, AcnnOutput};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, store_tensors, write_checkpoint};
pub use classifier::{Head, HeadConfig, ModelKind, SpeechClassifier};
pub use gru::{gru_cell_step, BiGruClassifier, BiGruLayer, BiGruOutput, BoundGruCell, GruCell, GruConfig};
pub use w2v::{
    nearest_code, quantize_with, sample_time_mask, waveform_batch, MaskConfig, Quantized, ToyW2VEncoder, CODEBOOK_SHRINK,
    W2vConfig,
};
