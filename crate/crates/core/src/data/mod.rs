//! Audio ingestion, the synthetic corpus, manifests and split construction.

pub mod manifest;
pub mod synth;
pub mod wav;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use manifest::{CorpusManifest, ManifestRecord, MANIFEST_FILE};
pub use synth::{clip_rng, default_profiles, synthesize_clip, SynthClassProfile};
pub use wav::{decode_wav, encode_wav, load_wav, write_wav};

use crate::error::{Error, Result};
use crate::features::{AudioSignal, SAMPLE_RATE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "HC")]
    Hc,
}

pub const NUM_CLASSES: usize = 3;

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [Label::Ad, Label::Mci, Label::Hc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ad => "AD",
            Label::Mci => "MCI",
            Label::Hc => "HC",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown label {s:?}, expected AD, MCI or HC")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Per-class clip counts in label order.
pub type ClassCounts = [usize; NUM_CLASSES];

/// Class counts of the larger (train/dev) and smaller (test) sets.
pub const LARGE_COUNTS: ClassCounts = [79, 93, 108];
pub const SMALL_COUNTS: ClassCounts = [35, 39, 45];
/// Fraction of the larger set held out for validation.
pub const DEV_FRACTION: f64 = 0.2;

/// One subset of clips written by [`generate_corpus`].
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetSpec {
    /// Directory name under the output root; also prefixes clip ids.
    pub name: String,
    /// Keeps clip streams of different subsets independent.
    pub stream: u16,
    pub counts: ClassCounts,
    pub split: Split,
}

/// Writes one WAV per clip under `out/<subset>/` and returns their records,
/// all assigned to `subset.split`. Identical inputs give identical bytes.
pub fn generate_corpus(
    profiles: &[SynthClassProfile; NUM_CLASSES],
    subset: &SubsetSpec,
    duration_s: f64,
    seed: u64,
    out: &Path,
) -> Result<CorpusManifest> {
    for (p, l) in profiles.iter().zip(Label::ALL) {
        p.validate()?;
        if p.label != l {
            return Err(Error::contract(format!("profile for {l} is labelled {}", p.label)));
        }
    }
    if subset.counts.contains(&0) {
        return Err(Error::contract(format!("subset {} needs at least one clip per class", subset.name)));
    }
    let samples = (duration_s * SAMPLE_RATE as f64).round() as usize;
    if samples == 0 {
        return Err(Error::contract("clip duration must be positive"));
    }
    let dir = out.join(&subset.name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let jobs: Vec<(Label, usize)> = Label::ALL
        .iter()
        .flat_map(|&l| (0..subset.counts[l.index()]).map(move |i| (l, i)))
        .collect();
    let records: Vec<ManifestRecord> = jobs
        .iter()
        .map(|&(label, i)| {
            let file = format!("{}_{:03}.wav", label.as_str().to_lowercase(), i);
            ManifestRecord {
                id: format!("{}-{}-{:03}", subset.name, label, i),
                path: format!("{}/{}", subset.name, file),
                label,
                split: subset.split,
                duration_s: samples as f64 / SAMPLE_RATE as f64,
            }
        })
        .collect();

    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let chunk = jobs.len().div_ceil(threads);
    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .zip(records.chunks(chunk))
            .map(|(js, rs)| {
                scope.spawn(move || -> Result<()> {
                    for (&(label, i), r) in js.iter().zip(rs) {
                        let mut rng = clip_rng(seed, subset.stream, label, i as u32);
                        let clip = synthesize_clip(&profiles[label.index()], samples, &mut rng);
                        write_wav(&out.join(&r.path), &clip)?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("generator thread panicked"))
    })?;
    Ok(CorpusManifest::new(out, records))
}

/// Dev clips per class: `round(fraction · total)` shared out by largest remainder.
pub fn stratified_counts(counts: ClassCounts, fraction: f64) -> ClassCounts {
    let total: usize = counts.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut out: ClassCounts = [0; NUM_CLASSES];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(out.iter().sum());
    for &c in order.iter().cycle().take(NUM_CLASSES * 2) {
        if missing == 0 {
            break;
        }
        if out[c] < counts[c] {
            out[c] += 1;
            missing -= 1;
        }
    }
    out
}

/// Test = every clip of the small set; dev = a seeded class-stratified 20%
/// of the large set; train = the rest of the large set.
pub fn split_corpus(large: &CorpusManifest, small: &CorpusManifest, seed: u64) -> Result<CorpusManifest> {
    let small_ids: std::collections::HashSet<&str> = small.records.iter().map(|r| r.id.as_str()).collect();
    if let Some(r) = large.records.iter().find(|r| small_ids.contains(r.id.as_str())) {
        return Err(Error::contract(format!("clip {} appears in both sets", r.id)));
    }
    let class_counts = |m: &CorpusManifest| {
        let mut c: ClassCounts = [0; NUM_CLASSES];
        for r in &m.records {
            c[r.label.index()] += 1;
        }
        c
    };
    let (lc, sc) = (class_counts(large), class_counts(small));
    for l in Label::ALL {
        if lc[l.index()] == 0 || sc[l.index()] == 0 {
            return Err(Error::contract(format!("class {l} is absent from one of the sets")));
        }
    }
    let dev_counts = stratified_counts(lc, DEV_FRACTION);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = vec![Split::Train; large.records.len()];
    for l in Label::ALL {
        let mut members: Vec<usize> = (0..large.records.len())
            .filter(|&i| large.records[i].label == l)
            .collect();
        members.sort_by(|&a, &b| large.records[a].id.cmp(&large.records[b].id));
        members.shuffle(&mut rng);
        for &i in &members[..dev_counts[l.index()]] {
            split[i] = Split::Dev;
        }
    }
    let mut records: Vec<ManifestRecord> = large
        .records
        .iter()
        .zip(split)
        .map(|(r, s)| ManifestRecord { split: s, ..r.clone() })
        .collect();
    records.extend(small.records.iter().map(|r| ManifestRecord {
        split: Split::Test,
        ..r.clone()
    }));
    if large.root != small.root {
        return Err(Error::contract("both sets must share one root directory"));
    }
    Ok(CorpusManifest::new(large.root.clone(), records))
}

/// Generation settings of a full corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub large: ClassCounts,
    pub small: ClassCounts,
    pub duration_s: f64,
    pub profiles: [SynthClassProfile; NUM_CLASSES],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            large: LARGE_COUNTS,
            small: SMALL_COUNTS,
            duration_s: 6.0,
            profiles: default_profiles(),
        }
    }
}

/// Generates both sets under `out`, splits them, and writes `manifest.csv`.
pub fn build_corpus(config: &CorpusConfig, out: &Path) -> Result<CorpusManifest> {
    let large = SubsetSpec {
        name: "large".into(),
        stream: 0,
        counts: config.large,
        split: Split::Train,
    };
    let small = SubsetSpec {
        name: "small".into(),
        stream: 1,
        counts: config.small,
        split: Split::Test,
    };
    let l = generate_corpus(&config.profiles, &large, config.duration_s, config.seed, out)?;
    let s = generate_corpus(&config.profiles, &small, config.duration_s, config.seed, out)?;
    let manifest = split_corpus(&l, &s, config.seed)?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// A decoded clip with its label.
#[derive(Clone, Debug)]
pub struct LabeledClip {
    pub id: String,
    pub label: Label,
    pub signal: AudioSignal,
}

/// Loads every clip of `split`, in manifest order.
pub fn load_split(manifest: &CorpusManifest, split: Split) -> Result<Vec<LabeledClip>> {
    manifest
        .split(split)
        .map(|r| {
            Ok(LabeledClip {
                id: r.id.clone(),
                label: r.label,
                signal: load_wav(&manifest.path_of(r))?,
            })
        })
        .collect()
}
