//! Freeze-then-joint supervised training and clip-level evaluation.

use std::cell::Cell;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Adam, AdamConfig, Group, ParamSelector, ParamStore, ParameterPartition, Tape, Tensor};
use crate::autodiff::kernels::softmax_rows;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, swce_loss, WeightGradient};
use crate::models::SpeechClassifier;

/// Optimizer steps during which only the downstream parameters update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FreezeSchedule {
    pub freeze_steps: u64,
}

/// Parameters an optimizer step may update: the downstream set while
/// `step < N`, both sets from step `N` on.
pub fn active_params(step: u64, schedule: &FreezeSchedule, partition: &ParameterPartition) -> ParamSelector {
    if step < schedule.freeze_steps {
        partition.downstream().clone()
    } else {
        partition.all()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    #[default]
    CrossEntropy,
    SoftWeighted(WeightGradient),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a dev improvement; off when `None`.
    pub patience: Option<usize>,
    pub seed: u64,
    pub loss: LossKind,
    pub schedule: FreezeSchedule,
    /// Also evaluate the training split after every epoch.
    pub track_train_accuracy: bool,
    /// Record the pretrained-block hash before the first and after every step.
    pub trace_pretrained_hash: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 8,
            max_epochs: 30,
            patience: None,
            seed: 0,
            loss: LossKind::CrossEntropy,
            schedule: FreezeSchedule::default(),
            track_train_accuracy: false,
            trace_pretrained_hash: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(format!("lr must be positive, got {}", self.lr)));
        }
        if self.max_epochs == 0 {
            return Err(Error::contract("max_epochs must be at least 1"));
        }
        Ok(())
    }
}

/// One model input (features `[T, F]` or waveform `[S, 1]`) and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub label: usize,
}

/// Train, dev and test examples of one run. The test split can only be read
/// through [`SplitData::read_test`], which counts accesses.
#[derive(Debug)]
pub struct SplitData {
    pub train: Arc<[Example]>,
    pub dev: Arc<[Example]>,
    test: Arc<[Example]>,
    test_reads: Cell<usize>,
}

impl Clone for SplitData {
    /// Shares the examples; the copy starts with a fresh access counter.
    fn clone(&self) -> Self {
        SplitData {
            train: self.train.clone(),
            dev: self.dev.clone(),
            test: self.test.clone(),
            test_reads: Cell::new(0),
        }
    }
}

impl SplitData {
    pub fn new(train: Vec<Example>, dev: Vec<Example>, test: Vec<Example>) -> Result<Self> {
        Self::shared(train.into(), dev.into(), test.into())
    }

    /// Splits backed by examples other runs may share.
    pub fn shared(train: Arc<[Example]>, dev: Arc<[Example]>, test: Arc<[Example]>) -> Result<Self> {
        for (name, s) in [("train", &train), ("dev", &dev), ("test", &test)] {
            if s.is_empty() {
                return Err(Error::contract(format!("{name} split is empty")));
            }
        }
        Ok(SplitData {
            train,
            dev,
            test,
            test_reads: Cell::new(0),
        })
    }

    pub fn read_test(&self) -> &[Example] {
        self.test_reads.set(self.test_reads.get() + 1);
        &self.test
    }

    pub fn test_reads(&self) -> usize {
        self.test_reads.get()
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }
}

/// Clip-level accuracy, confusion matrix (`[true][predicted]`) and mean
/// margin `p[y] − max_{j≠y} p[j]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub mean_margin: f64,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }
}

/// Scores rows of class logits against labels. The prediction is the
/// arg-max, lowest class on ties.
pub fn evaluate_logits(logits: &Tensor, labels: &[usize]) -> Result<Evaluation> {
    let classes = logits.last_dim();
    if logits.numel() != classes * labels.len() || labels.is_empty() {
        return Err(Error::dim("evaluate", logits.shape(), &[labels.len()]));
    }
    let probs = softmax_rows(logits.data(), classes);
    let mut confusion = vec![vec![0; classes]; classes];
    let mut margin_sum = 0.0;
    for ((row, p), &y) in logits.rows().zip(probs.chunks_exact(classes)).zip(labels) {
        if y >= classes {
            return Err(Error::contract(format!("label {y} out of range for {classes} classes")));
        }
        let pred = row
            .iter()
            .enumerate()
            .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
        confusion[y][pred] += 1;
        let wrong = (0..classes).filter(|&j| j != y).map(|j| p[j]).fold(f64::NEG_INFINITY, f64::max);
        margin_sum += p[y] - if wrong.is_finite() { wrong } else { 0.0 };
    }
    let correct: usize = (0..classes).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        confusion,
        mean_margin: margin_sum / labels.len() as f64,
    })
}

/// Stacks the inputs of a batch into one tensor with a leading batch axis.
pub fn stack_inputs(batch: &[&Example]) -> Result<Tensor> {
    let inputs: Vec<&Tensor> = batch.iter().map(|e| &e.input).collect();
    Tensor::stack(&inputs)
}

/// Logits of every example, computed in batches of `batch_size`.
pub fn predict(model: &SpeechClassifier, store: &ParamStore, examples: &[Example], batch_size: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut classes = 0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let mut tape = Tape::new();
        let x = tape.constant(stack_inputs(&refs)?);
        let logits = model.forward(&mut tape, store, x)?;
        classes = tape.value(logits).last_dim();
        data.extend_from_slice(tape.value(logits).data());
    }
    Tensor::new(&[examples.len(), classes], data)
}

pub fn evaluate(model: &SpeechClassifier, store: &ParamStore, examples: &[Example], batch_size: usize) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::contract("cannot evaluate an empty split"));
    }
    let logits = predict(model, store, examples, batch_size)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    evaluate_logits(&logits, &labels)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dev_acc: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_acc: Option<f64>,
}

/// Everything a supervised run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were retained.
    pub best_epoch: usize,
    pub best_dev: Evaluation,
    pub test: Evaluation,
    /// Entry `s` is the pretrained-block hash after `s` optimizer steps.
    pub pretrained_hashes: Vec<String>,
    pub test_reads: usize,
}

impl TrainHistory {
    /// Line-delimited records: one `{"step","loss"}` per optimizer step, then
    /// one `{"epoch","dev_acc",…}` per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("serializable"));
            out.push('\n');
        }
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

fn batch_loss(
    tape: &mut Tape,
    model: &SpeechClassifier,
    store: &ParamStore,
    batch: &[&Example],
    loss: LossKind,
) -> Result<crate::autodiff::Var> {
    let x = tape.constant(stack_inputs(batch)?);
    let logits = model.forward(tape, store, x)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    match loss {
        LossKind::CrossEntropy => cross_entropy(tape, logits, &labels),
        LossKind::SoftWeighted(mode) => swce_loss(tape, logits, &labels, mode),
    }
}

/// Trains `model` with Adam, shuffling the training split each epoch with a
/// seeded generator. Each step updates only the parameters selected by the
/// freeze schedule. The parameters with the best dev accuracy (first
/// occurrence) are restored at the end and scored once on the test split.
pub fn train_supervised(
    model: &SpeechClassifier,
    store: &mut ParamStore,
    data: &SplitData,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    let partition = ParameterPartition::from_store(store);
    partition.validate(store)?;
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut hashes = Vec::new();
    if config.trace_pretrained_hash {
        hashes.push(store.group_hash(Group::Pretrained));
    }
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, Evaluation, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut step: u64 = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, model, store, &batch, config.loss)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss became {value} at step {step}")));
            }
            let grads = tape.backward(loss)?;
            drop(tape);
            store.zero_grads();
            store.accumulate(&grads);
            adam.step(store, &active_params(step, &config.schedule, &partition))?;
            step += 1;
            steps.push(StepRecord { step, loss: value });
            if config.trace_pretrained_hash {
                hashes.push(store.group_hash(Group::Pretrained));
            }
            loss_sum += value;
            batches += 1;
        }
        let dev = evaluate(model, store, &data.dev, config.batch_size)?;
        let train_acc = if config.track_train_accuracy {
            Some(evaluate(model, store, &data.train, config.batch_size)?.accuracy)
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch,
            dev_acc: dev.accuracy,
            train_loss: loss_sum / batches as f64,
            train_acc,
        });
        let improved = best.as_ref().is_none_or(|(_, b, _)| dev.accuracy > b.accuracy);
        if improved {
            best = Some((epoch, dev, store.values()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    store.clear_grads();
    let (best_epoch, best_dev, values) = best.expect("at least one epoch ran");
    store.load_values(&values)?;
    let reads_before = data.test_reads();
    let test = evaluate(model, store, data.read_test(), config.batch_size)?;
    let test_reads = data.test_reads() - reads_before;
    debug_assert_eq!(test_reads, 1);
    Ok(TrainHistory {
        steps,
        epochs,
        best_epoch,
        best_dev,
        test,
        pretrained_hashes: hashes,
        test_reads,
    })
}
