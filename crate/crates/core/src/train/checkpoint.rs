//! Binary checkpoint: `USFM` magic, `u32` version, `u64`-prefixed JSON
//! metadata, `u32` tensor count, then tensor records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use usfmae_tensor::serialize::{read_record, write_record, RecordError};
use usfmae_tensor::{RngState, Tensor};

use super::optim::{AdamW, AdamWConfig};
use super::{Result, TrainError};
use crate::model::{ClassifierModel, MaePretrainModel, ModelConfig, ParamStore, Pooling};

pub const MAGIC: [u8; 4] = *b"USFM";
pub const FORMAT_VERSION: u32 = 1;

const METADATA: &str = "<metadata>";
const MOMENT_M: &str = "adamw.m.";
const MOMENT_V: &str = "adamw.v.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointKind {
    Pretrain,
    Classifier {
        pooling: Pooling,
        num_classes: usize,
        #[serde(default)]
        class_names: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Present when saved with full optimizer state.
    pub optimizer: Option<AdamW>,
    pub rng: Option<RngState>,
    pub step: u64,
    /// Free-form run information (training config, class names, ...).
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    decay: bool,
}

#[derive(Serialize, Deserialize)]
struct RngMeta {
    seed: u64,
    stream: u64,
    /// Decimal string; JSON numbers cannot carry a u128.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    config: AdamWConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    #[serde(flatten)]
    kind: CheckpointKind,
    model: ModelConfig,
    step: u64,
    rng: Option<RngMeta>,
    params: Vec<ParamMeta>,
    optimizer: Option<OptimizerMeta>,
    #[serde(default)]
    extra: serde_json::Value,
}

impl Checkpoint {
    pub fn from_pretrain(model: &MaePretrainModel) -> Self {
        Checkpoint {
            kind: CheckpointKind::Pretrain,
            config: model.config.clone(),
            params: model.params.clone(),
            optimizer: None,
            rng: None,
            step: 0,
            extra: serde_json::Value::Null,
        }
    }

    pub fn from_classifier(model: &ClassifierModel, class_names: Vec<String>) -> Self {
        Checkpoint {
            kind: CheckpointKind::Classifier {
                pooling: model.pooling,
                num_classes: model.num_classes,
                class_names,
            },
            config: model.config.clone(),
            params: model.params.clone(),
            optimizer: None,
            rng: None,
            step: 0,
            extra: serde_json::Value::Null,
        }
    }

    pub fn pretrain_model(&self) -> Result<MaePretrainModel> {
        match self.kind {
            CheckpointKind::Pretrain => Ok(MaePretrainModel {
                config: self.config.clone(),
                params: self.params.clone(),
            }),
            _ => Err(TrainError::CheckpointIncompatible(
                "expected a pretraining checkpoint, found a classifier".into(),
            )),
        }
    }

    pub fn classifier_model(&self) -> Result<ClassifierModel> {
        match &self.kind {
            CheckpointKind::Classifier {
                pooling,
                num_classes,
                ..
            } => Ok(ClassifierModel {
                config: self.config.clone(),
                pooling: *pooling,
                num_classes: *num_classes,
                params: self.params.clone(),
            }),
            CheckpointKind::Pretrain => Err(TrainError::CheckpointIncompatible(
                "expected a classifier checkpoint, found a pretraining checkpoint".into(),
            )),
        }
    }

    pub fn class_names(&self) -> &[String] {
        match &self.kind {
            CheckpointKind::Classifier { class_names, .. } => class_names,
            CheckpointKind::Pretrain => &[],
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| TrainError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| TrainError::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let meta = Metadata {
            kind: self.kind.clone(),
            model: self.config.clone(),
            step: self.step,
            rng: self.rng.map(|s| RngMeta {
                seed: s.seed,
                stream: s.stream,
                word_pos: s.word_pos.to_string(),
            }),
            params: self
                .params
                .names()
                .iter()
                .zip(self.params.decays())
                .map(|(n, &d)| ParamMeta {
                    name: n.clone(),
                    decay: d,
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                config: o.config.clone(),
                step: o.step,
            }),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&meta)?;
        let records = self.records();
        let io = |e| TrainError::Io {
            path: "<checkpoint stream>".into(),
            source: e,
        };
        w.write_all(&MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        w.write_all(&(records.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, t) in records {
            write_record(w, &name, t).map_err(|e| record_error(e, &name))?;
        }
        Ok(())
    }

    fn records(&self) -> Vec<(String, &Tensor<f32>)> {
        let names = self.params.names();
        let mut out: Vec<(String, &Tensor<f32>)> =
            names.iter().cloned().zip(self.params.tensors()).collect();
        if let Some(opt) = &self.optimizer {
            out.extend(names.iter().map(|n| format!("{MOMENT_M}{n}")).zip(&opt.m));
            out.extend(names.iter().map(|n| format!("{MOMENT_V}{n}")).zip(&opt.v));
        }
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_header(r, &mut magic)?;
        if magic != MAGIC {
            return Err(TrainError::BadMagic { found: magic });
        }
        let mut four = [0u8; 4];
        read_header(r, &mut four)?;
        let version = u32::from_le_bytes(four);
        if version != FORMAT_VERSION {
            return Err(TrainError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut eight = [0u8; 8];
        read_header(r, &mut eight)?;
        let len = u64::from_le_bytes(eight);
        let mut json = Vec::new();
        r.take(len).read_to_end(&mut json).map_err(|e| TrainError::Io {
            path: METADATA.into(),
            source: e,
        })?;
        if json.len() as u64 != len {
            return Err(TrainError::TruncatedFile {
                tensor: METADATA.into(),
            });
        }
        let meta: Metadata = serde_json::from_slice(&json)
            .map_err(|e| TrainError::CorruptCheckpoint(format!("metadata: {e}")))?;

        let mut expected: Vec<String> = meta.params.iter().map(|p| p.name.clone()).collect();
        if meta.optimizer.is_some() {
            let base = expected.clone();
            expected.extend(base.iter().map(|n| format!("{MOMENT_M}{n}")));
            expected.extend(base.iter().map(|n| format!("{MOMENT_V}{n}")));
        }
        let first_missing = |i: usize| TrainError::TruncatedFile {
            tensor: expected.get(i).cloned().unwrap_or_else(|| "<tensor count>".into()),
        };
        let mut count = [0u8; 4];
        r.read_exact(&mut count).map_err(|_| first_missing(0))?;
        let count = u32::from_le_bytes(count) as usize;
        if count != expected.len() {
            // A short count means entries were dropped from the file.
            if count < expected.len() {
                return Err(first_missing(count));
            }
            return Err(TrainError::CorruptCheckpoint(format!(
                "{count} tensors stored, metadata lists {}",
                expected.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for (i, want) in expected.iter().enumerate() {
            let (name, t) = read_record::<f32, _>(r).map_err(|e| match e {
                RecordError::Truncated => first_missing(i),
                other => record_error(other, want),
            })?;
            if &name != want {
                return Err(TrainError::CorruptCheckpoint(format!(
                    "tensor {i} is {name:?}, expected {want:?}"
                )));
            }
            tensors.push(t);
        }

        let n = meta.params.len();
        let mut rest = tensors.split_off(n);
        let mut params = ParamStore::new();
        for (p, t) in meta.params.into_iter().zip(tensors) {
            params.push(p.name, t, p.decay);
        }
        let optimizer = meta.optimizer.map(|o| {
            let v = rest.split_off(n);
            AdamW {
                config: o.config,
                step: o.step,
                m: rest,
                v,
            }
        });
        let rng = match meta.rng {
            Some(s) => Some(RngState {
                seed: s.seed,
                stream: s.stream,
                word_pos: s
                    .word_pos
                    .parse()
                    .map_err(|_| TrainError::CorruptCheckpoint(format!("rng word_pos {:?}", s.word_pos)))?,
            }),
            None => None,
        };
        Ok(Checkpoint {
            kind: meta.kind,
            config: meta.model,
            params,
            optimizer,
            rng,
            step: meta.step,
            extra: meta.extra,
        })
    }
}

fn read_header<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TrainError::TruncatedFile {
            tensor: "<header>".into(),
        },
        _ => TrainError::Io {
            path: "<checkpoint stream>".into(),
            source: e,
        },
    })
}

fn record_error(e: RecordError, name: &str) -> TrainError {
    match e {
        RecordError::Truncated => TrainError::TruncatedFile {
            tensor: name.to_string(),
        },
        RecordError::Io(source) => TrainError::Io {
            path: format!("<tensor {name}>").into(),
            source,
        },
        other => TrainError::CorruptCheckpoint(format!("tensor {name}: {other}")),
    }
}
