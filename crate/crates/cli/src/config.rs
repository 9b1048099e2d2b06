//! Experiment configuration files.
//!
//! The file is parsed into raw, string-typed sections first and then
//! validated field by field, so every rejection names the offending key.

use std::fmt;
use std::path::Path;

use adspeech_core::data::{stratified_counts, ClassCounts, CorpusConfig, DEV_FRACTION, LARGE_COUNTS, SMALL_COUNTS};
use adspeech_core::losses::{ContrastiveConfig, WeightGradient};
use adspeech_core::models::{MaskConfig, ModelKind, W2vConfig};
use adspeech_core::training::{FreezeSchedule, LossKind, PretrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Built-in presets, one per results table.
pub const PRESETS: [(&str, &str); 3] = [
    ("table1", include_str!("../../../experiments/table1.toml")),
    ("table2", include_str!("../../../experiments/table2.toml")),
    ("table3", include_str!("../../../experiments/table3.toml")),
];

/// A rejected configuration, with the dotted path of the field at fault.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config: `{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pipeline {
    Features,
    ToyW2v,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Features => "handcrafted-features",
            Pipeline::ToyW2v => "toy-w2v",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossChoice {
    Ce,
    Swce,
}

impl LossChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            LossChoice::Ce => "CE",
            LossChoice::Swce => "SWCE",
        }
    }

    pub fn kind(self) -> LossKind {
        match self {
            LossChoice::Ce => LossKind::CrossEntropy,
            LossChoice::Swce => LossKind::SoftWeighted(WeightGradient::Detached),
        }
    }
}

impl fmt::Display for LossChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One table row: a pipeline, classifier, loss and freeze length, run for every seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSpec {
    pub pipeline: Pipeline,
    pub model: ModelKind,
    pub loss: LossChoice,
    pub freeze_steps: u64,
}

impl RunSpec {
    /// Directory-safe identifier, e.g. `toy-w2v_GRU_CE_N1000`.
    pub fn slug(&self) -> String {
        format!(
            "{}_{}_{}_N{}",
            self.pipeline, self.model, self.loss, self.freeze_steps
        )
    }
}

/// Settings of the synthetic corpus; hashed to key the corpus cache.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusSettings {
    pub seed: u64,
    pub duration_s: f64,
    pub large_counts: ClassCounts,
    pub small_counts: ClassCounts,
}

impl CorpusSettings {
    pub fn to_core(&self) -> CorpusConfig {
        CorpusConfig {
            seed: self.seed,
            large: self.large_counts,
            small: self.small_counts,
            duration_s: self.duration_s,
            ..CorpusConfig::default()
        }
    }
}

/// Encoder size; hashed together with the pretraining settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncoderSettings {
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub layers: usize,
    pub codebook_size: usize,
}

impl EncoderSettings {
    pub fn to_core(&self) -> W2vConfig {
        W2vConfig {
            dim: self.dim,
            heads: self.heads,
            ffn: self.ffn,
            layers: self.layers,
            codebook_size: self.codebook_size,
            ..W2vConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub crop_samples: usize,
    pub temperature: f64,
    pub num_distractors: usize,
    pub mask_prob: f64,
    pub mask_span: usize,
}

impl PretrainSettings {
    pub fn to_core(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            crop_samples: self.crop_samples,
            contrastive: ContrastiveConfig {
                temperature: self.temperature,
                num_distractors: self.num_distractors,
            },
            ..PretrainConfig::default()
        }
    }

    pub fn mask(&self) -> MaskConfig {
        MaskConfig {
            prob: self.mask_prob,
            span: self.mask_span,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: Option<usize>,
    /// Samples of the centred waveform crop fed to the toy-w2v pipeline.
    pub waveform_samples: usize,
}

impl TrainingSettings {
    pub fn to_core(&self, seed: u64, run: &RunSpec) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            loss: run.loss.kind(),
            schedule: FreezeSchedule {
                freeze_steps: run.freeze_steps,
            },
            ..TrainConfig::default()
        }
    }
}

/// A validated experiment: shared corpus, encoder and training settings plus
/// the rows of one results table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub corpus: CorpusSettings,
    pub encoder: EncoderSettings,
    pub pretrain: PretrainSettings,
    pub training: TrainingSettings,
    pub runs: Vec<RunSpec>,
}

impl ExperimentConfig {
    pub fn needs_encoder(&self) -> bool {
        self.runs.iter().any(|r| r.pipeline == Pipeline::ToyW2v)
    }

    pub fn w2v(&self) -> W2vConfig {
        W2vConfig {
            mask: self.pretrain.mask(),
            ..self.encoder.to_core()
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    seeds: Option<Vec<i64>>,
    corpus: Option<RawCorpus>,
    encoder: Option<RawEncoder>,
    pretrain: Option<RawPretrain>,
    training: Option<RawTraining>,
    run: Option<Vec<RawRun>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    seed: Option<i64>,
    duration_s: Option<f64>,
    large_counts: Option<Vec<i64>>,
    small_counts: Option<Vec<i64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawEncoder {
    dim: Option<i64>,
    heads: Option<i64>,
    ffn: Option<i64>,
    layers: Option<i64>,
    codebook_size: Option<i64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPretrain {
    steps: Option<i64>,
    batch_size: Option<i64>,
    lr: Option<f64>,
    seed: Option<i64>,
    crop_samples: Option<i64>,
    temperature: Option<f64>,
    num_distractors: Option<i64>,
    mask_prob: Option<f64>,
    mask_span: Option<i64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    lr: Option<f64>,
    batch_size: Option<i64>,
    max_epochs: Option<i64>,
    patience: Option<i64>,
    waveform_samples: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    pipeline: Option<String>,
    model: Option<String>,
    loss: Option<String>,
    freeze_steps: Option<i64>,
    freeze_epochs: Option<i64>,
}

type Checked<T> = Result<T, ConfigError>;

fn count(field: &str, v: Option<i64>, default: usize, min: i64) -> Checked<usize> {
    match v {
        None => Ok(default),
        Some(x) if x >= min => Ok(x as usize),
        Some(x) => Err(ConfigError::new(field, format!("must be at least {min}, got {x}"))),
    }
}

fn seed(field: &str, v: Option<i64>, default: u64) -> Checked<u64> {
    match v {
        None => Ok(default),
        Some(x) if x >= 0 => Ok(x as u64),
        Some(x) => Err(ConfigError::new(field, format!("must be non-negative, got {x}"))),
    }
}

fn positive(field: &str, v: Option<f64>, default: f64) -> Checked<f64> {
    let x = v.unwrap_or(default);
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::new(field, format!("must be a positive number, got {x}")))
    }
}

fn counts(field: &str, v: Option<Vec<i64>>, default: ClassCounts) -> Checked<ClassCounts> {
    let Some(v) = v else { return Ok(default) };
    if v.len() != default.len() || v.iter().any(|&c| c < 1) {
        return Err(ConfigError::new(
            field,
            format!("expected {} positive class counts (AD, MCI, HC), got {v:?}", default.len()),
        ));
    }
    Ok([v[0] as usize, v[1] as usize, v[2] as usize])
}

fn choice<T: Copy>(field: &str, v: Option<&str>, options: &[(&str, T)]) -> Checked<T> {
    let names: Vec<&str> = options.iter().map(|o| o.0).collect();
    let v = v.ok_or_else(|| ConfigError::new(field, format!("missing; expected one of {}", names.join(", "))))?;
    options
        .iter()
        .find(|o| o.0 == v)
        .map(|o| o.1)
        .ok_or_else(|| ConfigError::new(field, format!("unknown value \"{v}\"; expected one of {}", names.join(", "))))
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let field = e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .map(|line| format!("line {line}"))
            .unwrap_or_default();
        ConfigError::new(field, msg)
    })?;

    let name = raw.name.unwrap_or_else(|| "experiment".into());
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(ConfigError::new("name", "must be non-empty ASCII letters, digits, '-' or '_'"));
    }

    let seeds = match raw.seeds {
        None => vec![0],
        Some(v) if v.is_empty() => return Err(ConfigError::new("seeds", "must list at least one seed")),
        Some(v) => v
            .iter()
            .enumerate()
            .map(|(i, &s)| seed(&format!("seeds[{i}]"), Some(s), 0))
            .collect::<Checked<Vec<_>>>()?,
    };
    check_unique_seeds(&seeds)?;

    let c = raw.corpus.unwrap_or_default();
    let duration_s = positive("corpus.duration_s", c.duration_s, 6.0)?;
    if duration_s < 0.25 {
        return Err(ConfigError::new("corpus.duration_s", "must be at least 0.25 s (one analysis window)"));
    }
    let corpus = CorpusSettings {
        seed: seed("corpus.seed", c.seed, 0)?,
        duration_s,
        large_counts: counts("corpus.large_counts", c.large_counts, LARGE_COUNTS)?,
        small_counts: counts("corpus.small_counts", c.small_counts, SMALL_COUNTS)?,
    };

    let w = W2vConfig::default();
    let e = raw.encoder.unwrap_or_default();
    let encoder = EncoderSettings {
        dim: count("encoder.dim", e.dim, w.dim, 1)?,
        heads: count("encoder.heads", e.heads, w.heads, 1)?,
        ffn: count("encoder.ffn", e.ffn, w.ffn, 1)?,
        layers: count("encoder.layers", e.layers, w.layers, 1)?,
        codebook_size: count("encoder.codebook_size", e.codebook_size, w.codebook_size, 2)?,
    };
    if encoder.dim % encoder.heads != 0 {
        return Err(ConfigError::new("encoder.heads", "must divide encoder.dim"));
    }

    let pd = PretrainConfig::default();
    let md = MaskConfig::default();
    let p = raw.pretrain.unwrap_or_default();
    let pretrain = PretrainSettings {
        steps: count("pretrain.steps", p.steps, pd.steps, 0)?,
        batch_size: count("pretrain.batch_size", p.batch_size, pd.batch_size, 1)?,
        lr: positive("pretrain.lr", p.lr, pd.lr)?,
        seed: seed("pretrain.seed", p.seed, pd.seed)?,
        crop_samples: count("pretrain.crop_samples", p.crop_samples, pd.crop_samples, 320)?,
        temperature: positive("pretrain.temperature", p.temperature, pd.contrastive.temperature)?,
        num_distractors: count("pretrain.num_distractors", p.num_distractors, pd.contrastive.num_distractors, 1)?,
        mask_prob: positive("pretrain.mask_prob", p.mask_prob, md.prob)?,
        mask_span: count("pretrain.mask_span", p.mask_span, md.span, 1)?,
    };
    if pretrain.mask_prob > 1.0 {
        return Err(ConfigError::new("pretrain.mask_prob", "must not exceed 1"));
    }

    let td = TrainConfig::default();
    let t = raw.training.unwrap_or_default();
    let training = TrainingSettings {
        lr: positive("training.lr", t.lr, td.lr)?,
        batch_size: count("training.batch_size", t.batch_size, td.batch_size, 1)?,
        max_epochs: count("training.max_epochs", t.max_epochs, td.max_epochs, 1)?,
        patience: t
            .patience
            .map(|p| count("training.patience", Some(p), 0, 1))
            .transpose()?,
        waveform_samples: count("training.waveform_samples", t.waveform_samples, 32_000, 320)?,
    };
    let clip_samples = (corpus.duration_s * adspeech_core::features::SAMPLE_RATE as f64).round() as usize;
    if training.waveform_samples > clip_samples {
        return Err(ConfigError::new(
            "training.waveform_samples",
            format!("exceeds the clip length of {clip_samples} samples"),
        ));
    }

    // optimizer steps per epoch: partial batches count as steps
    let dev = stratified_counts(corpus.large_counts, DEV_FRACTION);
    let train_clips: usize = corpus.large_counts.iter().zip(&dev).map(|(l, d)| l - d).sum();
    let steps_per_epoch = train_clips.div_ceil(training.batch_size) as u64;

    let raw_runs = raw.run.unwrap_or_default();
    if raw_runs.is_empty() {
        return Err(ConfigError::new("run", "at least one [[run]] table is required"));
    }
    let mut runs = Vec::with_capacity(raw_runs.len());
    for (i, r) in raw_runs.iter().enumerate() {
        let f = |k: &str| format!("run[{i}].{k}");
        let run = RunSpec {
            pipeline: choice(
                &f("pipeline"),
                r.pipeline.as_deref(),
                &[("handcrafted-features", Pipeline::Features), ("toy-w2v", Pipeline::ToyW2v)],
            )?,
            model: choice(
                &f("model"),
                r.model.as_deref(),
                &[("GRU", ModelKind::Gru), ("ACNN", ModelKind::Acnn)],
            )?,
            loss: choice(&f("loss"), r.loss.as_deref(), &[("CE", LossChoice::Ce), ("SWCE", LossChoice::Swce)])?,
            freeze_steps: match (r.freeze_steps, r.freeze_epochs) {
                (Some(_), Some(_)) => {
                    return Err(ConfigError::new(f("freeze_epochs"), "give freeze_steps or freeze_epochs, not both"))
                }
                (None, Some(e)) => seed(&f("freeze_epochs"), Some(e), 0)? * steps_per_epoch,
                (steps, None) => seed(&f("freeze_steps"), steps, 0)?,
            },
        };
        if run.pipeline == Pipeline::Features && run.freeze_steps != 0 {
            return Err(ConfigError::new(
                f("freeze_steps"),
                "the handcrafted-features pipeline has no pretrained block; use 0",
            ));
        }
        if runs.contains(&run) {
            return Err(ConfigError::new(f("pipeline"), "duplicates an earlier run"));
        }
        runs.push(run);
    }

    let config = ExperimentConfig {
        name,
        seeds,
        corpus,
        encoder,
        pretrain,
        training,
        runs,
    };
    config
        .w2v()
        .validate()
        .map_err(|e| ConfigError::new("encoder", e.to_string()))?;
    config
        .pretrain
        .to_core()
        .validate()
        .map_err(|e| ConfigError::new("pretrain", e.to_string()))?;
    Ok(config)
}

fn check_unique_seeds(seeds: &[u64]) -> Checked<()> {
    for (i, s) in seeds.iter().enumerate() {
        if seeds[..i].contains(s) {
            return Err(ConfigError::new(format!("seeds[{i}]"), format!("seed {s} is listed twice")));
        }
    }
    Ok(())
}

/// Replaces the seed list, e.g. from `--seeds`.
pub fn override_seeds(config: &mut ExperimentConfig, seeds: Vec<u64>) -> Result<(), ConfigError> {
    if seeds.is_empty() {
        return Err(ConfigError::new("--seeds", "must list at least one seed"));
    }
    check_unique_seeds(&seeds).map_err(|e| ConfigError::new("--seeds", e.message))?;
    config.seeds = seeds;
    Ok(())
}

/// Text of a preset name or a config file path. An existing file wins over
/// a preset of the same name.
pub fn resolve_config_source(arg: &str) -> Result<String, ConfigError> {
    let path = Path::new(arg);
    if path.is_file() {
        return std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())));
    }
    PRESETS
        .iter()
        .find(|(name, _)| *name == arg)
        .map(|(_, text)| text.to_string())
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            ConfigError::new(
                "--config",
                format!("{arg} is neither a file nor a preset ({})", names.join(", ")),
            )
        })
}
