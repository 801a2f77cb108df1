use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use usfmae_imaging::annomask::{clean_image, PipelineConfig};
use usfmae_imaging::imgproc::resize_bilinear;
use usfmae_imaging::RasterImage;

use super::frames::{open_source, FrameSamplingPolicy, Source};
use super::manifest::{Manifest, SampleRecord};
use super::{CorpusError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchOptions {
    /// Also write the fused annotation mask of each output under `masks/`.
    pub debug_masks: bool,
    pub frames: FrameSamplingPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileLog {
    pub path: String,
    pub dataset: String,
    pub status: FileStatus,
    /// Output file names relative to the output directory.
    pub outputs: Vec<String>,
    /// Fraction of pixels inpainted, averaged over frames.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub processed: usize,
    pub failed: usize,
    /// One row per manifest record, sorted by path.
    pub files: Vec<FileLog>,
}

fn check_writable(dir: &Path) -> Result<()> {
    let unwritable = |e| CorpusError::OutputDirUnwritable {
        path: dir.to_path_buf(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(unwritable)?;
    std::fs::remove_file(&probe).map_err(unwritable)
}

fn output_stem(r: &SampleRecord) -> String {
    format!("{}__{}", r.dataset, r.stem())
}

fn process_one(
    m: &Manifest,
    r: &SampleRecord,
    cfg: &PipelineConfig,
    out_dir: &Path,
    opts: &BatchOptions,
) -> Result<(Vec<String>, f64)> {
    let frames = match open_source(&m.resolve(r))? {
        Source::Still(img) => vec![(None, img)],
        Source::Clip(clip) => {
            let idx = super::frames::frame_indices(clip.frames.len(), clip.fps, &opts.frames)?;
            let mut frames = clip.frames;
            idx.into_iter()
                .map(|i| (Some(i), std::mem::replace(&mut frames[i], RasterImage::filled(1, 1, 1, 0.0))))
                .collect()
        }
    };
    let stem = output_stem(r);
    let mut names = Vec::with_capacity(frames.len());
    let mut masked = 0.0;
    let n_frames = frames.len();
    for (idx, img) in frames {
        let (clean, masks) = clean_image(&img, cfg)?;
        let region = &masks.inpaint_region;
        masked += region.count() as f64 / (region.width() * region.height()).max(1) as f64;
        let out = resize_bilinear(&clean, cfg.output_size, cfg.output_size);
        let name = match idx {
            None => format!("{stem}.png"),
            Some(i) => format!("{stem}__f{i:05}.png"),
        };
        let write_err = |e| CorpusError::Image {
            path: out_dir.join(&name),
            source: e,
        };
        out.save_png(out_dir.join(&name)).map_err(write_err)?;
        if opts.debug_masks {
            let mask_name = Path::new("masks").join(name.replace(".png", ".mask.png"));
            masks
                .fused
                .to_image()
                .save_png(out_dir.join(&mask_name))
                .map_err(|e| CorpusError::Image {
                    path: out_dir.join(&mask_name),
                    source: e,
                })?;
        }
        names.push(name);
    }
    Ok((names, masked / n_frames.max(1) as f64))
}

/// Cleans every record and writes `<dataset>__<stem>.png` (clips add a
/// `__fNNNNN` frame suffix) plus `report.json`. A failing record is logged in
/// the report and does not stop the batch. Records whose output name would
/// overwrite an earlier record's output are failed.
pub fn run_preprocess_batch(
    manifest: &Manifest,
    cfg: &PipelineConfig,
    out_dir: impl AsRef<Path>,
    opts: &BatchOptions,
) -> Result<BatchReport> {
    let out_dir = out_dir.as_ref();
    cfg.validate()?;
    opts.frames.validate()?;
    check_writable(out_dir)?;
    if opts.debug_masks {
        check_writable(&out_dir.join("masks"))?;
    }
    let mut first_with_stem: HashMap<String, &str> = HashMap::new();
    let clash: Vec<Option<String>> = manifest
        .records
        .iter()
        .map(|r| match first_with_stem.get(&output_stem(r)) {
            Some(prev) => Some(format!("output name {}.png already used by {prev}", output_stem(r))),
            None => {
                first_with_stem.insert(output_stem(r), &r.path);
                None
            }
        })
        .collect();

    let mut files: Vec<FileLog> = manifest
        .records
        .par_iter()
        .zip(clash.par_iter())
        .map(|(r, clash)| {
            let result = match clash {
                Some(msg) => Err(msg.clone()),
                None => process_one(manifest, r, cfg, out_dir, opts).map_err(|e| e.to_string()),
            };
            let (status, outputs, masked_fraction, error) = match result {
                Ok((outs, frac)) => (FileStatus::Ok, outs, Some(frac), None),
                Err(e) => (FileStatus::Failed, Vec::new(), None, Some(e)),
            };
            FileLog {
                path: r.path.clone(),
                dataset: r.dataset.clone(),
                status,
                outputs,
                masked_fraction,
                error,
            }
        })
        .collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let processed = files.iter().filter(|f| f.status == FileStatus::Ok).count();
    let report = BatchReport {
        processed,
        failed: files.len() - processed,
        files,
    };
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_vec_pretty(&report)?).map_err(|e| CorpusError::Io {
        path: report_path,
        source: e,
    })?;
    Ok(report)
}

impl BatchReport {
    /// Manifest of the written PNGs, carrying over dataset, label, split and
    /// fold of the source records. `None` if nothing was written.
    pub fn output_manifest(&self, source: &Manifest, out_dir: &Path) -> Option<Manifest> {
        let by_path: HashMap<&str, &SampleRecord> = source.records.iter().map(|r| (r.path.as_str(), r)).collect();
        let records: Vec<SampleRecord> = self
            .files
            .iter()
            .flat_map(|f| {
                let src = by_path[f.path.as_str()];
                f.outputs.iter().map(move |o| SampleRecord {
                    path: o.clone(),
                    ..src.clone()
                })
            })
            .collect();
        let uri: PathBuf = out_dir.join("manifest.csv");
        Manifest::new(records, uri.to_string_lossy()).ok()
    }
}
