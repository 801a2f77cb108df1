use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use usfmae_imaging::RasterImage;

use super::frames::{open_source, FrameSamplingPolicy};
use super::{CorpusError, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["path", "dataset", "label", "split", "fold"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: String,
    pub dataset: String,
    pub label: Option<String>,
    pub split: Split,
    pub fold: Option<usize>,
}

impl SampleRecord {
    /// File stem used for output names.
    pub fn stem(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub source_uri: String,
}

impl Manifest {
    /// Builds a manifest, enforcing non-empty unique paths.
    pub fn new(records: Vec<SampleRecord>, source_uri: impl Into<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(CorpusError::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.path.is_empty() {
                return Err(CorpusError::EmptyPath { row: i + 2 });
            }
            if !seen.insert(r.path.as_str()) {
                return Err(CorpusError::DuplicatePath {
                    path: r.path.clone(),
                    row: i + 2,
                });
            }
        }
        Ok(Manifest {
            records,
            source_uri: source_uri.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Directory that relative record paths are resolved against.
    pub fn base_dir(&self) -> PathBuf {
        Path::new(&self.source_uri)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    /// Records in the given split, or all records for `None`.
    pub fn filter(&self, split: Option<Split>) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            let fold = r.fold.map(|f| f.to_string()).unwrap_or_default();
            out.write_record([
                r.path.as_str(),
                r.dataset.as_str(),
                r.label.as_deref().unwrap_or(""),
                &r.split.to_string(),
                &fold,
            ])?;
        }
        out.flush().map_err(|e| CorpusError::Io {
            path: PathBuf::from(&self.source_uri),
            source: e,
        })?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Reads a manifest CSV. Rows are numbered as file lines, header = row 1.
pub fn load_manifest(source: impl AsRef<Path>) -> Result<Manifest> {
    let source = source.as_ref();
    let file = std::fs::File::open(source).map_err(|e| CorpusError::Io {
        path: source.to_path_buf(),
        source: e,
    })?;
    let mut m = read_manifest(file)?;
    m.source_uri = source.to_string_lossy().into_owned();
    Ok(m)
}

pub(crate) fn read_manifest<R: std::io::Read>(r: R) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = rdr.headers()?.clone();
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(MANIFEST_HEADER) {
        *slot = header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                column: name.to_string(),
                row: 1,
            })?;
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(records.len() + 2, |p| p.line() as usize);
        let cell = |i: usize| -> Result<&str> {
            rec.get(cols[i]).map(str::trim).ok_or_else(|| CorpusError::MissingColumn {
                column: MANIFEST_HEADER[i].to_string(),
                row,
            })
        };
        let path = cell(0)?;
        if path.is_empty() {
            return Err(CorpusError::EmptyPath { row });
        }
        let split_s = cell(3)?;
        let split = split_s.parse().map_err(|_| CorpusError::BadSplitValue {
            value: split_s.to_string(),
            row,
        })?;
        let fold_s = cell(4)?;
        let fold = if fold_s.is_empty() {
            None
        } else {
            Some(fold_s.parse().map_err(|_| CorpusError::BadFold {
                value: fold_s.to_string(),
                row,
            })?)
        };
        let label = cell(2)?;
        records.push((
            row,
            SampleRecord {
                path: path.to_string(),
                dataset: cell(1)?.to_string(),
                label: (!label.is_empty()).then(|| label.to_string()),
                split,
                fold,
            },
        ));
    }
    let mut seen = HashSet::new();
    for (row, r) in &records {
        if !seen.insert(r.path.as_str()) {
            return Err(CorpusError::DuplicatePath {
                path: r.path.clone(),
                row: *row,
            });
        }
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    Ok(Manifest {
        records: records.into_iter().map(|(_, r)| r).collect(),
        source_uri: String::new(),
    })
}

/// Sorted distinct labels across the given records.
pub fn class_names<'a>(records: impl IntoIterator<Item = &'a SampleRecord>) -> Vec<String> {
    records
        .into_iter()
        .filter_map(|r| r.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn load_record(m: &Manifest, r: &SampleRecord, policy: &FrameSamplingPolicy) -> Result<Vec<RasterImage>> {
    let path = m.resolve(r);
    open_source(&path)?.into_frames(policy)
}

/// Loads every image of a split; clips contribute their sampled frames.
pub fn load_unlabeled(m: &Manifest, split: Option<Split>, policy: &FrameSamplingPolicy) -> Result<Vec<RasterImage>> {
    let recs = m.filter(split);
    let loaded: Result<Vec<Vec<RasterImage>>> = recs.par_iter().map(|r| load_record(m, r, policy)).collect();
    Ok(loaded?.into_iter().flatten().collect())
}

/// Loads a split with labels mapped to indices into `names`.
pub fn load_labeled(
    m: &Manifest,
    split: Option<Split>,
    names: &[String],
    policy: &FrameSamplingPolicy,
) -> Result<Vec<(RasterImage, usize, usize)>> {
    let recs: Vec<(usize, &SampleRecord)> = m
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| split.is_none_or(|s| r.split == s))
        .collect();
    let mut labels = Vec::with_capacity(recs.len());
    for &(i, r) in &recs {
        let label = r
            .label
            .as_ref()
            .and_then(|l| names.iter().position(|n| n == l))
            .ok_or_else(|| CorpusError::MissingLabel {
                path: r.path.clone(),
                row: i + 2,
            })?;
        labels.push(label);
    }
    let loaded: Result<Vec<Vec<RasterImage>>> = recs.par_iter().map(|(_, r)| load_record(m, r, policy)).collect();
    Ok(loaded?
        .into_iter()
        .zip(recs.iter().zip(labels))
        .flat_map(|(frames, (&(i, _), y))| frames.into_iter().map(move |f| (f, y, i)))
        .collect())
}
