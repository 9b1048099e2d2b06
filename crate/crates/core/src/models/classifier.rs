//! A downstream head, optionally stacked on the toy encoder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::acnn::{AcnnClassifier, AcnnConfig};
use super::gru::{BiGruClassifier, GruConfig};
use super::w2v::{ToyW2VEncoder, W2vConfig};
use crate::autodiff::{Group, ParamStore, ParameterPartition, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Gru,
    Acnn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gru => "GRU",
            ModelKind::Acnn => "ACNN",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GRU" => Ok(ModelKind::Gru),
            "ACNN" => Ok(ModelKind::Acnn),
            other => Err(Error::contract(format!(
                "unknown model {other:?}, expected GRU or ACNN"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadConfig {
    Gru(GruConfig),
    Acnn(AcnnConfig),
}

impl HeadConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Gru => HeadConfig::Gru(GruConfig::default()),
            ModelKind::Acnn => HeadConfig::Acnn(AcnnConfig::default()),
        }
    }

    fn with_input_dim(self, dim: usize) -> Self {
        match self {
            HeadConfig::Gru(c) => HeadConfig::Gru(GruConfig { input_dim: dim, ..c }),
            HeadConfig::Acnn(c) => HeadConfig::Acnn(AcnnConfig { input_dim: dim, ..c }),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Head {
    Gru(BiGruClassifier),
    Acnn(AcnnClassifier),
}

impl Head {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            Head::Gru(m) => m.forward(tape, store, x),
            Head::Acnn(m) => m.forward(tape, store, x),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Head::Gru(_) => ModelKind::Gru,
            Head::Acnn(_) => ModelKind::Acnn,
        }
    }
}

/// Classifier over feature sequences `[B, T, F]`, or over raw waveforms
/// `[B, S, 1]` when an encoder is present.
#[derive(Clone, Debug)]
pub struct SpeechClassifier {
    pub encoder: Option<ToyW2VEncoder>,
    pub head: Head,
}

impl SpeechClassifier {
    /// Registers the encoder (pretrained group) and the head (downstream
    /// group) in `store`. With an encoder the head input width follows the
    /// encoder dimension.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        head: HeadConfig,
        encoder: Option<W2vConfig>,
        rng: &mut R,
    ) -> Result<Self> {
        let (encoder, head_cfg) = match encoder {
            Some(cfg) => {
                let dim = cfg.dim;
                let enc = ToyW2VEncoder::new(store, "encoder", cfg, rng)?;
                (Some(enc), head.with_input_dim(dim))
            }
            None => (None, head),
        };
        let head = match head_cfg {
            HeadConfig::Gru(c) => Head::Gru(BiGruClassifier::new(store, "head", c, Group::Downstream, rng)?),
            HeadConfig::Acnn(c) => Head::Acnn(AcnnClassifier::new(store, "head", c, Group::Downstream, rng)?),
        };
        let model = SpeechClassifier { encoder, head };
        ParameterPartition::from_store(store).validate(store)?;
        Ok(model)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let x = match &self.encoder {
            Some(enc) => enc.encode(tape, store, input)?,
            None => input,
        };
        self.head.forward(tape, store, x)
    }
}
