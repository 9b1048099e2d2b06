//! Executes an experiment: corpus, optional pretraining, one supervised run
//! per (row, seed), then the report.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use adspeech_core::autodiff::ParamStore;
use adspeech_core::data::{build_corpus, load_split, CorpusManifest, LabeledClip, Split, MANIFEST_FILE};
use adspeech_core::features::FeatureNormalizer;
use adspeech_core::models::{load_checkpoint, save_checkpoint, HeadConfig, SpeechClassifier, ToyW2VEncoder};
use adspeech_core::training::{
    clip_features, feature_examples, pretrain_selfsupervised, train_supervised, waveform_examples, Example, SplitData,
};
use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CorpusSettings, ExperimentConfig, Pipeline, RunSpec};
use crate::report::{write_reports, RunResult};

/// Bumped whenever generated artifacts change meaning, invalidating caches.
const CACHE_VERSION: u32 = 1;

fn content_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    hex::encode(&Sha256::digest(&json)[..8])
}

#[derive(Serialize)]
struct CorpusKey<'a> {
    version: u32,
    corpus: &'a CorpusSettings,
}

pub fn corpus_key(settings: &CorpusSettings) -> String {
    content_hash(&CorpusKey {
        version: CACHE_VERSION,
        corpus: settings,
    })
}

/// The corpus for `settings` under `cache`, generated on first use.
pub fn cached_corpus(settings: &CorpusSettings, cache: &Path) -> Result<CorpusManifest> {
    let dir = cache.join(format!("corpus-{}", corpus_key(settings)));
    if dir.join(MANIFEST_FILE).is_file() {
        log::info!("reusing corpus {}", dir.display());
        return CorpusManifest::read(&dir.join(MANIFEST_FILE)).with_context(|| format!("cached corpus {}", dir.display()));
    }
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).with_context(|| format!("removing stale {}", tmp.display()))?;
    }
    log::info!("generating corpus {}", dir.display());
    build_corpus(&settings.to_core(), &tmp).context("generating corpus")?;
    fs::rename(&tmp, &dir).with_context(|| format!("moving corpus into {}", dir.display()))?;
    CorpusManifest::read(&dir.join(MANIFEST_FILE)).context("reading generated corpus")
}

#[derive(Serialize)]
struct PretrainKey<'a> {
    version: u32,
    corpus: String,
    encoder: &'a crate::config::EncoderSettings,
    pretrain: &'a crate::config::PretrainSettings,
}

/// Encoder parameters after self-supervised training on the training split,
/// cached as a checkpoint keyed by corpus, encoder and pretraining settings.
fn cached_encoder(config: &ExperimentConfig, clips: &[LabeledClip], cache: &Path) -> Result<ParamStore> {
    let key = content_hash(&PretrainKey {
        version: CACHE_VERSION,
        corpus: corpus_key(&config.corpus),
        encoder: &config.encoder,
        pretrain: &config.pretrain,
    });
    let path = cache.join(format!("pretrain-{key}.ckpt"));
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.pretrain.seed);
    let encoder = ToyW2VEncoder::new(&mut store, "encoder", config.w2v(), &mut rng)?;
    if path.is_file() {
        log::info!("reusing pretrained encoder {}", path.display());
        load_checkpoint(&mut store, &path)?;
        return Ok(store);
    }
    log::info!("pretraining encoder for {} steps", config.pretrain.steps);
    let waves: Vec<Vec<f64>> = clips.iter().map(|c| c.signal.samples().to_vec()).collect();
    let report = pretrain_selfsupervised(&encoder, &mut store, &waves, &config.pretrain.to_core())?;
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        log::info!("pretraining loss {first:.4} -> {last:.4}");
    }
    let trace: String = report
        .losses
        .iter()
        .zip(&report.retrieval)
        .enumerate()
        .map(|(i, (l, r))| format!("{{\"step\":{},\"loss\":{l},\"retrieval\":{r}}}\n", i + 1))
        .collect();
    fs::write(cache.join(format!("pretrain-{key}.jsonl")), trace)?;
    let tmp = path.with_extension("partial");
    save_checkpoint(&store, &tmp)?;
    fs::rename(&tmp, &path)?;
    Ok(store)
}

/// Shared inputs of one pipeline.
struct Inputs {
    train: Arc<[Example]>,
    dev: Arc<[Example]>,
    test: Arc<[Example]>,
}

impl Inputs {
    fn split(&self) -> Result<SplitData> {
        Ok(SplitData::shared(self.train.clone(), self.dev.clone(), self.test.clone())?)
    }
}

struct Clips {
    train: Vec<LabeledClip>,
    dev: Vec<LabeledClip>,
    test: Vec<LabeledClip>,
}

fn feature_inputs(clips: &Clips) -> Result<Inputs> {
    let train_feats = clip_features(&clips.train)?;
    let norm = FeatureNormalizer::fit(&train_feats)?;
    Ok(Inputs {
        train: feature_examples(&clips.train, train_feats, &norm)?.into(),
        dev: feature_examples(&clips.dev, clip_features(&clips.dev)?, &norm)?.into(),
        test: feature_examples(&clips.test, clip_features(&clips.test)?, &norm)?.into(),
    })
}

fn waveform_inputs(clips: &Clips, len: usize) -> Result<Inputs> {
    Ok(Inputs {
        train: waveform_examples(&clips.train, len)?.into(),
        dev: waveform_examples(&clips.dev, len)?.into(),
        test: waveform_examples(&clips.test, len)?.into(),
    })
}

/// Persisted outcome of one (row, seed) run, enough to rebuild the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub row: usize,
    pub seed_index: usize,
    pub result: RunResult,
}

fn run_one(
    config: &ExperimentConfig,
    spec: &RunSpec,
    seed: u64,
    inputs: &Inputs,
    pretrained: Option<&ParamStore>,
    dir: &Path,
) -> Result<RunResult> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = match spec.pipeline {
        Pipeline::Features => None,
        Pipeline::ToyW2v => Some(config.w2v()),
    };
    let model = SpeechClassifier::new(&mut store, HeadConfig::default_for(spec.model), encoder, &mut rng)?;
    if let Some(src) = pretrained {
        let copied = store.copy_matching(src)?;
        if copied != src.len() {
            bail!("pretrained checkpoint matched {copied} of {} encoder tensors", src.len());
        }
    }
    let data = inputs.split()?;
    let history = train_supervised(&model, &mut store, &data, &config.training.to_core(seed, spec))?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("history.jsonl"), history.to_jsonl())?;
    Ok(RunResult {
        pipeline: spec.pipeline.as_str().into(),
        model: spec.model.to_string(),
        loss: spec.loss.as_str().into(),
        freeze_steps: spec.freeze_steps,
        seed,
        dev_acc: history.best_dev.accuracy,
        test_acc: history.test.accuracy,
        test_margin: history.test.mean_margin,
        best_epoch: history.best_epoch,
        epochs: history.epochs.len(),
        steps: history.steps.len(),
    })
}

pub const RUNS_DIR: &str = "runs";
pub const RESULT_FILE: &str = "result.json";

pub fn run_dir(out: &Path, spec: &RunSpec, seed: u64) -> PathBuf {
    out.join(RUNS_DIR).join(spec.slug()).join(format!("seed-{seed}"))
}

/// Runs every row for every seed on `jobs` worker threads and writes
/// `report.csv`, `report.md` and `margins.csv` under `out`. Outputs do not
/// depend on `jobs`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<RunRecord>> {
    let cache = out.join("cache");
    fs::create_dir_all(&cache).with_context(|| format!("creating {}", cache.display()))?;
    let manifest = cached_corpus(&config.corpus, &cache)?;
    let clips = Clips {
        train: load_split(&manifest, Split::Train)?,
        dev: load_split(&manifest, Split::Dev)?,
        test: load_split(&manifest, Split::Test)?,
    };
    log::info!(
        "corpus: {} train, {} dev, {} test clips",
        clips.train.len(),
        clips.dev.len(),
        clips.test.len()
    );
    let uses = |p| config.runs.iter().any(|r| r.pipeline == p);
    let features = uses(Pipeline::Features).then(|| feature_inputs(&clips)).transpose()?;
    let (waves, pretrained) = if uses(Pipeline::ToyW2v) {
        let store = cached_encoder(config, &clips.train, &cache)?;
        (Some(waveform_inputs(&clips, config.training.waveform_samples)?), Some(store))
    } else {
        (None, None)
    };
    drop(clips);

    let tasks: Vec<(usize, usize)> = (0..config.runs.len())
        .flat_map(|r| (0..config.seeds.len()).map(move |s| (r, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new(tasks.iter().map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(r, s)) = tasks.get(i) else { break };
        let spec = &config.runs[r];
        let seed = config.seeds[s];
        let (inputs, pre) = match spec.pipeline {
            Pipeline::Features => (features.as_ref(), None),
            Pipeline::ToyW2v => (waves.as_ref(), pretrained.as_ref()),
        };
        log::info!("{} seed {seed}: training", spec.slug());
        let result = run_one(config, spec, seed, inputs.expect("prepared above"), pre, &run_dir(out, spec, seed))
            .with_context(|| format!("run {} seed {seed}", spec.slug()));
        if let Ok(res) = &result {
            log::info!(
                "{} seed {seed}: dev {:.2}% test {:.2}%",
                spec.slug(),
                100.0 * res.dev_acc,
                100.0 * res.test_acc
            );
        }
        slots.lock().expect("no worker panicked")[i] = Some(result);
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len()) {
            scope.spawn(worker);
        }
    });

    let mut records = Vec::with_capacity(tasks.len());
    for (&(row, seed_index), slot) in tasks.iter().zip(slots.into_inner().expect("no worker panicked")) {
        let result = slot.expect("every task ran")?;
        let record = RunRecord { row, seed_index, result };
        let dir = run_dir(out, &config.runs[row], config.seeds[seed_index]);
        fs::write(dir.join(RESULT_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
        records.push(record);
    }
    write_reports(out, &records)?;
    Ok(records)
}

/// Reads every `runs/*/seed-*/result.json` under `dir`, in row and seed order.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let runs = dir.join(RUNS_DIR);
    let mut records = Vec::new();
    for row in fs::read_dir(&runs).with_context(|| format!("reading {}", runs.display()))? {
        let row = row?.path();
        if !row.is_dir() {
            continue;
        }
        for seed in fs::read_dir(&row)? {
            let file = seed?.path().join(RESULT_FILE);
            if file.is_file() {
                let text = fs::read_to_string(&file)?;
                records.push(serde_json::from_str::<RunRecord>(&text).with_context(|| format!("parsing {}", file.display()))?);
            }
        }
    }
    if records.is_empty() {
        bail!("no {RESULT_FILE} files under {}", runs.display());
    }
    records.sort_by_key(|r| (r.row, r.seed_index));
    Ok(records)
}
