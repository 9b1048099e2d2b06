//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always
//! printed; exits non-zero when any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use adspeech_cli::config::PRESETS;
use adspeech_cli::{parse_config, run_experiment, LossChoice, Pipeline, MARGINS_CSV, REPORT_CSV, REPORT_MD};
use adspeech_core::autodiff::{grad_check, Group, ParamStore, Tape, Tensor, Var};
use adspeech_core::data::{clip_rng, default_profiles, synthesize_clip, Label, LabeledClip};
use adspeech_core::features::{AudioSignal, FeatureNormalizer, SAMPLE_RATE};
use adspeech_core::losses::{
    batch_soft_weights, contrastive_loss, cross_entropy, soft_weight, soft_weight_bounds, swce_loss,
    swce_loss_with_weights, ContrastiveConfig, ProbabilityVector, WeightGradient,
};
use adspeech_core::models::{
    sample_time_mask, AcnnClassifier, AcnnConfig, BiGruClassifier, GruConfig, HeadConfig, MaskConfig, ModelKind,
    SpeechClassifier, ToyW2VEncoder, W2vConfig,
};
use adspeech_core::training::{
    clip_features, contrastive_eval, feature_examples, pretrain_selfsupervised, train_supervised, Example,
    FreezeSchedule, PretrainConfig, SplitData, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget_s: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(budget_s), || {
        format!("took {:.1}s, budget {budget_s}s", elapsed.as_secs_f64())
    })
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Fixed random projection of an output, so every entry reaches the loss.
fn projected(tape: &mut Tape, out: Var, seed: u64) -> adspeech_core::Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(Tensor::randn(&shape, 1.0, &mut rng(seed ^ 0x5eed)));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

// 1 ------------------------------------------------------------------------

fn presets_mirror_the_tables() -> Outcome {
    let load = |name: &str| {
        let text = PRESETS.iter().find(|p| p.0 == name).map(|p| p.1).ok_or(format!("no preset {name}"))?;
        parse_config(text).map_err(err)
    };
    let t1 = load("table1")?;
    ensure(
        t1.runs.len() == 2 && t1.runs.iter().all(|r| r.pipeline == Pipeline::Features),
        || "table1 should hold GRU and A-CNN on handcrafted features".into(),
    )?;
    let t2 = load("table2")?;
    let mut cells: Vec<(String, u64)> = t2.runs.iter().map(|r| (r.model.to_string(), r.freeze_steps)).collect();
    cells.sort();
    let expected: Vec<(String, u64)> = ["ACNN", "GRU"]
        .iter()
        .flat_map(|m| [0, 1000, 2000].map(|n| (m.to_string(), n)))
        .collect();
    ensure(cells == expected, || format!("table2 rows {cells:?}"))?;
    let t3 = load("table3")?;
    ensure(
        t3.runs.len() == 4
            && t3.runs.iter().all(|r| r.freeze_steps == 1000)
            && t3.runs.iter().filter(|r| r.loss == LossChoice::Swce).count() == 2
            && t3.seeds.len() == 5,
        || "table3 should compare CE and SWCE for both models at N=1000 over 5 seeds".into(),
    )?;
    Ok("published table numbers need a private corpus and XLSR-53; presets table1/2/3 reproduce the table layouts \
        (2, 6 and 4 rows) and the remaining criteria substitute property checks"
        .into())
}

// 2 ------------------------------------------------------------------------

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| -> Result<(), String> {
        match worst.iter_mut().find(|w| w.0 == name) {
            Some(w) => w.1 = w.1.max(e),
            None => worst.push((name, e)),
        }
        ensure(e < GRAD_TOL, || format!("{name}: relative error {e:.3e}"))
    };
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..3)).collect();
        let mut s = ParamStore::new();
        let id = s.add("logits", Tensor::randn(&[5, 3], 2.0, &mut r), Group::Downstream);
        let res = grad_check(&mut s, GRAD_EPS, |t, s| {
            let l = t.param(s, id);
            cross_entropy(t, l, &labels)
        })
        .map_err(err)?;
        record("CE", res.max_rel_error)?;
        // detached weights are constants: check with them frozen at the base point
        let frozen = {
            let mut t = Tape::new();
            let l = t.param(&s, id);
            batch_soft_weights(&t, l, &labels).map_err(err)?
        };
        let res = grad_check(&mut s, GRAD_EPS, |t, s| {
            let l = t.param(s, id);
            swce_loss_with_weights(t, l, &labels, &frozen)
        })
        .map_err(err)?;
        record("SWCE", res.max_rel_error)?;
        let res = grad_check(&mut s, GRAD_EPS, |t, s| {
            let l = t.param(s, id);
            swce_loss(t, l, &labels, WeightGradient::Through)
        })
        .map_err(err)?;
        record("SWCE", res.max_rel_error)?;

        let mut s = ParamStore::new();
        let c = s.add("c", Tensor::randn(&[3, 4], 1.0, &mut r), Group::Downstream);
        let q = s.add("q", Tensor::randn(&[3, 5, 4], 1.0, &mut r), Group::Downstream);
        let res = grad_check(&mut s, GRAD_EPS, |t, s| {
            let (cv, qv) = (t.param(s, c), t.param(s, q));
            contrastive_loss(t, cv, qv, 0.1)
        })
        .map_err(err)?;
        record("contrastive", res.max_rel_error)?;

        let mut s = ParamStore::new();
        let gru = GruConfig {
            input_dim: 3,
            hidden: 3,
            layers: 2,
            classes: 3,
        };
        let m = BiGruClassifier::new(&mut s, "g", gru, Group::Downstream, &mut r).map_err(err)?;
        let x = Tensor::randn(&[2, 3, 3], 1.0, &mut r);
        let res = grad_check(&mut s, GRAD_EPS, |t, s| {
            let xv = t.constant(x.clone());
            let l = m.forward(t, s, xv)?;
            projected(t, l, seed)
        })
        .map_err(err)?;
        record("GRU", res.max_rel_error)?;

        let mut s = ParamStore::new();
        let acnn = AcnnConfig {
            input_dim: 3,
            channels: 4,
            hidden: 3,
            ..AcnnConfig::default()
        };
        let m = AcnnClassifier::new(&mut s, "a", acnn, Group::Downstream, &mut r).map_err(err)?;
        let x = Tensor::randn(&[2, 9, 3], 1.0, &mut r);
        let res = grad_check(&mut s, GRAD_EPS, |t, s| {
            let xv = t.constant(x.clone());
            let l = m.forward(t, s, xv)?;
            projected(t, l, seed)
        })
        .map_err(err)?;
        record("A-CNN", res.max_rel_error)?;

        let mut s = ParamStore::new();
        let w2v = W2vConfig {
            dim: 4,
            conv: vec![(2, 2), (2, 2)],
            heads: 2,
            ffn: 6,
            layers: 1,
            codebook_size: 8,
            pos_kernel: 3,
            mask: MaskConfig { prob: 0.2, span: 2 },
        };
        let enc = ToyW2VEncoder::new(&mut s, "enc", w2v, &mut r).map_err(err)?;
        let wave = Tensor::randn(&[1, 32, 1], 0.5, &mut r);
        let mask = vec![sample_time_mask(8, enc.config.mask, &mut r).map_err(err)?];
        let masked: Vec<usize> = (0..8).filter(|&t| mask[0][t]).collect();
        let cand = Tensor::randn(&[masked.len(), 4, 4], 1.0, &mut r);
        let res = grad_check(&mut s, GRAD_EPS, |t, s| {
            let w = t.constant(wave.clone());
            let z = enc.encode_local(t, s, w)?;
            let zm = enc.apply_mask(t, s, z, &mask)?;
            let c = enc.contextualize(t, s, zm)?;
            let c = t.reshape(c, &[8, 4])?;
            let c = t.index_select(c, &masked)?;
            let q = t.constant(cand.clone());
            let l = contrastive_loss(t, c, q, 0.1)?;
            let extra = projected(t, z, seed)?;
            let extra = t.scale(extra, 0.1);
            t.add(l, extra)
        })
        .map_err(err)?;
        record("encoder", res.max_rel_error)?;
    }
    within(start.elapsed(), 120)?;
    let summary: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Ok(format!("10 seeds each, worst relative error: {}", summary.join(", ")))
}

// 3 ------------------------------------------------------------------------

fn random_simplex(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| -r.random::<f64>().ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn swce_closed_form() -> Outcome {
    let mut r = rng(3);
    let mut max_dev: f64 = 0.0;
    for i in 0..10_000 {
        let n = 2 + i % 6;
        let p = random_simplex(&mut r, n);
        let m = r.random_range(0..n);
        let w = soft_weight(&ProbabilityVector::new(p.clone(), m).map_err(err)?).w;
        let closed = (1.0 / n as f64 - p[m]).exp();
        // the defining sum, which equals N·p[m] − 1 on the simplex
        let pairwise: f64 = (0..n).filter(|&j| j != m).map(|j| p[m] - p[j]).sum();
        ensure((pairwise - (n as f64 * p[m] - 1.0)).abs() < 1e-12, || format!("identity fails for {p:?}"))?;
        max_dev = max_dev.max((w - closed).abs());
        let (lo, hi) = soft_weight_bounds(n);
        ensure((1.0 / n as f64 - 1.0).exp() == lo && (1.0 / n as f64).exp() == hi, || "bounds".into())?;
        ensure(w >= lo && w <= hi, || format!("w={w} outside [{lo}, {hi}] for {p:?}"))?;
    }
    ensure(max_dev < 1e-12, || format!("max deviation {max_dev:.3e}"))?;
    Ok(format!("10000 simplices, max |w - exp(1/N - p[m])| = {max_dev:.1e}, bounds held"))
}

// 4 ------------------------------------------------------------------------

fn ce_degeneracy() -> Outcome {
    let mut r = rng(4);
    for i in 0..100 {
        let batch = r.random_range(1..=16);
        let logits = Tensor::randn(&[batch, 3], 3.0, &mut r);
        let labels: Vec<usize> = (0..batch).map(|_| r.random_range(0..3)).collect();
        let mut t = Tape::new();
        let l = t.constant(logits);
        let ce = cross_entropy(&mut t, l, &labels).map_err(err)?;
        let sw = swce_loss_with_weights(&mut t, l, &labels, &vec![1.0; batch]).map_err(err)?;
        let (a, b) = (t.value(ce).item(), t.value(sw).item());
        ensure(a.to_bits() == b.to_bits(), || format!("batch {i}: {a} vs {b}"))?;
    }
    Ok("100 random batches bitwise equal".into())
}

// 5 ------------------------------------------------------------------------

fn motivating_example() -> Outcome {
    let eval = |p: [f64; 3]| -> Result<(f64, f64), String> {
        let w = soft_weight(&ProbabilityVector::new(p.to_vec(), 0).map_err(err)?).w;
        let mut t = Tape::new();
        let l = t.constant(Tensor::new(&[1, 3], p.iter().map(|x| x.ln()).collect()).map_err(err)?);
        let loss = swce_loss(&mut t, l, &[0], WeightGradient::Detached).map_err(err)?;
        Ok((w, t.value(loss).item()))
    };
    let (w1, l1) = eval([0.8, 0.1, 0.1])?;
    let (w2, l2) = eval([0.4, 0.3, 0.3])?;
    // oracle: exp(1/3 - p[0]) * (-ln p[0])
    let oracle = |p0: f64| (1.0f64 / 3.0 - p0).exp() * -p0.ln();
    ensure((l1 - oracle(0.8)).abs() < 1e-12 && (l2 - oracle(0.4)).abs() < 1e-12, || {
        format!("losses {l1}, {l2} differ from the closed form")
    })?;
    ensure(w1 < w2 && l1 < l2, || format!("weights {w1}, {w2}; losses {l1}, {l2}"))?;
    Ok(format!(
        "(0.8,0.1,0.1): w={w1:.5} loss={l1:.5}; (0.4,0.3,0.3): w={w2:.5} loss={l2:.5}"
    ))
}

// 6 ------------------------------------------------------------------------

fn wave_examples(n: usize, seed: u64) -> Vec<Example> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| Example {
            input: Tensor::randn(&[64, 1], 0.3, &mut r),
            label: i % 3,
        })
        .collect()
}

fn freeze_schedule() -> Outcome {
    let w2v = W2vConfig {
        dim: 4,
        conv: vec![(2, 2), (2, 2)],
        heads: 2,
        ffn: 6,
        layers: 1,
        codebook_size: 8,
        pos_kernel: 3,
        mask: MaskConfig { prob: 0.2, span: 2 },
    };
    let head = HeadConfig::Gru(GruConfig {
        input_dim: 4,
        hidden: 3,
        layers: 1,
        classes: 3,
    });
    let mut notes = Vec::new();
    for n in [0usize, 50, 100] {
        let mut store = ParamStore::new();
        let model = SpeechClassifier::new(&mut store, head.clone(), Some(w2v.clone()), &mut rng(6)).map_err(err)?;
        let data = SplitData::new(wave_examples(16, 60), wave_examples(6, 61), wave_examples(6, 62)).map_err(err)?;
        let config = TrainConfig {
            lr: 1e-2,
            max_epochs: n / 2 + 2,
            schedule: FreezeSchedule { freeze_steps: n as u64 },
            trace_pretrained_hash: true,
            ..TrainConfig::default()
        };
        let h = train_supervised(&model, &mut store, &data, &config).map_err(err)?;
        let hashes = &h.pretrained_hashes;
        ensure(hashes.len() > n + 1, || format!("N={n}: only {} steps", hashes.len() - 1))?;
        ensure(hashes[..=n].iter().all(|x| *x == hashes[0]), || {
            format!("N={n}: pretrained hash changed during the freeze")
        })?;
        ensure(hashes[n + 1] != hashes[n], || format!("N={n}: hash unchanged at step {}", n + 1))?;
        notes.push(format!("N={n} constant for {n} steps, changed at step {}", n + 1));
    }
    Ok(notes.join("; "))
}

// 7 ------------------------------------------------------------------------

fn synthetic_clips(per_class: u32, seconds: f64, subset: u16) -> Vec<LabeledClip> {
    let profiles = default_profiles();
    let len = (seconds * SAMPLE_RATE as f64) as usize;
    let mut out = Vec::new();
    for i in 0..per_class {
        for label in Label::ALL {
            let samples = synthesize_clip(&profiles[label.index()], len, &mut clip_rng(7, subset, label, i));
            out.push(LabeledClip {
                id: format!("{label}-{i}"),
                label,
                signal: AudioSignal::new(samples, SAMPLE_RATE).expect("valid clip"),
            });
        }
    }
    out
}

fn self_supervised_sanity() -> Outcome {
    let start = Instant::now();
    let waves: Vec<Vec<f64>> = synthetic_clips(17, 6.0, 9)
        .into_iter()
        .take(50)
        .map(|c| c.signal.samples().to_vec())
        .collect();
    ensure(waves.len() == 50, || "expected 50 clips".into())?;
    let mut store = ParamStore::new();
    let encoder = ToyW2VEncoder::new(&mut store, "encoder", W2vConfig::default(), &mut rng(0)).map_err(err)?;
    let config = PretrainConfig::default();
    let k = ContrastiveConfig::default().num_distractors;
    let report = pretrain_selfsupervised(&encoder, &mut store, &waves, &config).map_err(err)?;
    let chance_loss = ((k + 1) as f64).ln();
    let first = report.losses[0];
    let (_, retrieval) = contrastive_eval(&encoder, &store, &waves, &config, 20, 77).map_err(err)?;
    let chance = 1.0 / (k + 1) as f64;
    ensure(report.losses.len() == 500, || "expected 500 steps".into())?;
    ensure((first - chance_loss).abs() <= 0.5, || {
        format!("initial loss {first:.4} vs ln(K+1) = {chance_loss:.4}")
    })?;
    ensure(retrieval > chance + 0.1, || {
        format!("retrieval {retrieval:.4} not above chance {chance:.4} + 0.1")
    })?;
    within(start.elapsed(), 300)?;
    Ok(format!(
        "initial loss {first:.4} (ln 11 = {chance_loss:.4}); retrieval after 500 steps {retrieval:.4} \
         vs chance {chance:.4}; {:.0}s",
        start.elapsed().as_secs_f64()
    ))
}

// 8 ------------------------------------------------------------------------

fn overfit(kind: ModelKind, examples: &[Example]) -> Result<usize, String> {
    let data = SplitData::new(examples.to_vec(), examples.to_vec(), examples.to_vec()).map_err(err)?;
    let mut store = ParamStore::new();
    let model = SpeechClassifier::new(&mut store, HeadConfig::default_for(kind), None, &mut rng(8)).map_err(err)?;
    let config = TrainConfig {
        max_epochs: 200,
        track_train_accuracy: true,
        ..TrainConfig::default()
    };
    let h = train_supervised(&model, &mut store, &data, &config).map_err(err)?;
    h.epochs
        .iter()
        .find(|e| e.train_acc == Some(1.0))
        .map(|e| e.epoch)
        .ok_or_else(|| {
            let best = h.epochs.iter().filter_map(|e| e.train_acc).fold(0.0, f64::max);
            format!("{kind}: best train accuracy {best:.3} in 200 epochs")
        })
}

fn end_to_end_learnability(dir: &Path) -> Outcome {
    let start = Instant::now();
    let tiny = synthetic_clips(8, 6.0, 8);
    let feats = clip_features(&tiny).map_err(err)?;
    let norm = FeatureNormalizer::fit(&feats).map_err(err)?;
    let examples = feature_examples(&tiny, feats, &norm).map_err(err)?;
    let mut notes = Vec::new();
    for kind in [ModelKind::Gru, ModelKind::Acnn] {
        let epoch = overfit(kind, &examples)?;
        notes.push(format!("{kind} 100% train at epoch {epoch}"));
    }

    let config = parse_config(
        r#"
name = "learnability"
seeds = [0]
[corpus]
seed = 2021
[training]
max_epochs = 30
[[run]]
pipeline = "handcrafted-features"
model = "GRU"
loss = "CE"
[[run]]
pipeline = "handcrafted-features"
model = "ACNN"
loss = "CE"
"#,
    )
    .map_err(err)?;
    let records = run_experiment(&config, dir, 1).map_err(|e| format!("{e:#}"))?;
    let train_clips: usize = config.corpus.large_counts.iter().sum();
    let test_clips: usize = config.corpus.small_counts.iter().sum();
    ensure(train_clips == 280 && test_clips == 119, || "corpus counts differ from 280/119".into())?;
    for rec in &records {
        let r = &rec.result;
        ensure(r.test_acc >= 0.8, || format!("{}: test accuracy {:.4}", r.model, r.test_acc))?;
        notes.push(format!("{} test {:.2}%", r.model, 100.0 * r.test_acc));
    }
    within(start.elapsed(), 900)?;
    notes.push(format!("{:.0}s", start.elapsed().as_secs_f64()));
    Ok(notes.join("; "))
}

// 9 ------------------------------------------------------------------------

const SWCE_CONFIG: &str = r#"
name = "swce-check"
seeds = [0, 1, 2, 3, 4]
[corpus]
seed = 2021
[training]
max_epochs = 8
[[run]]
pipeline = "handcrafted-features"
model = "GRU"
loss = "CE"
[[run]]
pipeline = "handcrafted-features"
model = "GRU"
loss = "SWCE"
[[run]]
pipeline = "handcrafted-features"
model = "ACNN"
loss = "CE"
[[run]]
pipeline = "handcrafted-features"
model = "ACNN"
loss = "SWCE"
"#;

fn swce_behaviour(dir: &Path) -> Outcome {
    let config = parse_config(SWCE_CONFIG).map_err(err)?;
    run_experiment(&config, dir, 1).map_err(|e| format!("{e:#}"))?;
    let csv = fs::read_to_string(dir.join(REPORT_CSV)).map_err(err)?;
    let lines: Vec<&str> = csv.lines().collect();
    ensure(lines.len() == 5, || format!("report has {} lines", lines.len()))?;
    for line in &lines[1..] {
        ensure(line.split(',').all(|c| !c.is_empty() && c != "n/a"), || format!("unpopulated cell in {line}"))?;
    }
    let margins = fs::read_to_string(dir.join(MARGINS_CSV)).map_err(err)?;
    ensure(margins.lines().count() == 21, || "margins.csv should hold 20 runs".into())?;
    let md = fs::read_to_string(dir.join(REPORT_MD)).map_err(err)?;
    let comparisons: Vec<&str> = md.lines().filter(|l| l.starts_with("- handcrafted-features")).collect();
    ensure(md.contains("## SWCE vs CE") && comparisons.len() == 2, || "comparison missing".into())?;
    Ok(format!(
        "5 seeds, 4 rows populated; {}",
        comparisons.iter().map(|l| l.trim_start_matches("- ")).collect::<Vec<_>>().join(" | ")
    ))
}

// 10 -----------------------------------------------------------------------

const DETERMINISM_CONFIG: &str = r#"
name = "determinism"
seeds = [0, 1]
[corpus]
seed = 3
duration_s = 2.0
large_counts = [10, 10, 10]
small_counts = [5, 5, 5]
[encoder]
dim = 8
ffn = 16
layers = 1
codebook_size = 16
[pretrain]
steps = 20
crop_samples = 6400
[training]
max_epochs = 4
waveform_samples = 6400
[[run]]
pipeline = "handcrafted-features"
model = "GRU"
loss = "CE"
[[run]]
pipeline = "handcrafted-features"
model = "ACNN"
loss = "SWCE"
[[run]]
pipeline = "toy-w2v"
model = "ACNN"
loss = "CE"
freeze_steps = 5
"#;

fn determinism(dir: &Path) -> Outcome {
    let config = parse_config(DETERMINISM_CONFIG).map_err(err)?;
    let (a, b) = (dir.join("a"), dir.join("b"));
    run_experiment(&config, &a, 1).map_err(|e| format!("{e:#}"))?;
    let first: Vec<Vec<u8>> = [REPORT_CSV, REPORT_MD, MARGINS_CSV]
        .iter()
        .map(|f| fs::read(a.join(f)))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    // fresh directory with two workers, then a rerun over the warm cache
    run_experiment(&config, &b, 2).map_err(|e| format!("{e:#}"))?;
    run_experiment(&config, &a, 1).map_err(|e| format!("{e:#}"))?;
    for (i, f) in [REPORT_CSV, REPORT_MD, MARGINS_CSV].iter().enumerate() {
        ensure(fs::read(b.join(f)).map_err(err)? == first[i], || format!("{f} differs between fresh runs"))?;
        ensure(fs::read(a.join(f)).map_err(err)? == first[i], || format!("{f} differs on cached rerun"))?;
    }
    Ok("report.csv, report.md and margins.csv byte-identical across a fresh run, a 2-worker run and a cached rerun \
        (features and toy-w2v pipelines)"
        .into())
}

// --------------------------------------------------------------------------

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let root = scratch.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("published numbers substituted by property checks", Box::new(presets_mirror_the_tables)),
        ("gradient integrity", Box::new(gradient_integrity)),
        ("SWCE closed form and bounds", Box::new(swce_closed_form)),
        ("SWCE with unit weights equals CE", Box::new(ce_degeneracy)),
        ("motivating example ordering", Box::new(motivating_example)),
        ("freeze schedule hash invariance", Box::new(freeze_schedule)),
        ("self-supervised objective sanity", Box::new(self_supervised_sanity)),
        ("end-to-end learnability", Box::new({
            let d = root.join("c8");
            move || end_to_end_learnability(&d)
        })),
        ("SWCE vs CE report", Box::new({
            let d = root.join("c9");
            move || swce_behaviour(&d)
        })),
        ("report determinism", Box::new({
            let d = root.join("c10");
            move || determinism(&d)
        })),
    ];
    let mut failed = 0;
    for (i, (title, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {title}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {title}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
