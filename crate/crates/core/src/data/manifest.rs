//! Corpus manifest CSV: `id,path,label,split,duration_s`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Label, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Relative to the manifest root.
    pub path: String,
    pub label: Label,
    pub split: Split,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    /// Directory the record paths are relative to.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

impl CorpusManifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Self {
        CorpusManifest {
            root: root.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path_of(&self, r: &ManifestRecord) -> PathBuf {
        self.root.join(&r.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.split(split).filter(|r| r.label == label).count()
    }

    /// Unique ids and, when `check_files` is set, existing clip files.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate clip id {}", r.id)));
            }
            if check_files && !self.path_of(r).is_file() {
                return Err(Error::Manifest(format!(
                    "clip {} points at missing file {}",
                    r.id,
                    self.path_of(r).display()
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| Error::Manifest(format!("cannot serialize {}: {e}", r.id)))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Manifest(format!("cannot flush manifest: {e}")))?;
        let mut text = String::from_utf8(bytes).expect("csv output is UTF-8");
        if self.records.is_empty() {
            text = "id,path,label,split,duration_s\n".to_string();
        }
        Ok(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; record paths resolve against the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let manifest = Self::parse(&text, root)?;
        manifest.validate(true)?;
        Ok(manifest)
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| Error::Manifest(format!("unreadable header: {e}")))?
            .clone();
        let expected = ["id", "path", "label", "split", "duration_s"];
        if header.iter().ne(expected) {
            return Err(Error::Manifest(format!(
                "header must be {}, got {}",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let records = rdr
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Error::Manifest(format!("record {}: {e}", i + 1))))
            .collect::<Result<Vec<ManifestRecord>>>()?;
        Ok(CorpusManifest { root, records })
    }
}
