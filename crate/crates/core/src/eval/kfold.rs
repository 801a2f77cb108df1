use serde::{Deserialize, Serialize};
use usfmae_tensor::Rng;

use super::metrics::{Averaged, MetricsReport};
use super::{EvalError, Result};

/// Per-fold reports plus mean and sample standard deviation of the macro
/// metrics across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldSummary {
    pub folds: Vec<MetricsReport>,
    pub mean: Averaged,
    pub std: Averaged,
}

/// Fold id per record, balanced in size, shuffled by `seed`.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).map(|i| i % k.max(1)).collect();
    Rng::new(seed).shuffle(&mut ids);
    ids
}

fn check_folds(folds: &[Option<usize>], k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(EvalError::InvalidFoldCount(k));
    }
    let mut ids = Vec::with_capacity(folds.len());
    let mut seen = vec![false; k];
    for (row, f) in folds.iter().enumerate() {
        match f {
            Some(f) if *f < k => {
                seen[*f] = true;
                ids.push(*f);
            }
            _ => return Err(EvalError::MissingFoldIds(format!("record {row} has fold {f:?} (k = {k})"))),
        }
    }
    if let Some(f) = seen.iter().position(|s| !s) {
        return Err(EvalError::MissingFoldIds(format!("no record in fold {f}")));
    }
    Ok(ids)
}

/// For each fold f: `train` on records outside f, then `evaluate` on f.
pub fn kfold_run<M>(
    folds: &[Option<usize>],
    k: usize,
    mut train: impl FnMut(usize, &[usize]) -> Result<M>,
    mut evaluate: impl FnMut(usize, &M, &[usize]) -> Result<MetricsReport>,
) -> Result<KFoldSummary> {
    let ids = check_folds(folds, k)?;
    let mut reports = Vec::with_capacity(k);
    for f in 0..k {
        let (test, train_idx): (Vec<usize>, Vec<usize>) = (0..ids.len()).partition(|&i| ids[i] == f);
        let model = train(f, &train_idx)?;
        reports.push(evaluate(f, &model, &test)?);
    }
    let stat = |get: fn(&MetricsReport) -> f64| {
        let v: Vec<f64> = reports.iter().map(get).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (mean, var.sqrt())
    };
    let (p, ps) = stat(|r| r.macro_avg.precision);
    let (r, rs) = stat(|r| r.macro_avg.recall);
    let (f, fs) = stat(|r| r.macro_avg.f1);
    Ok(KFoldSummary {
        folds: reports,
        mean: Averaged {
            precision: p,
            recall: r,
            f1: f,
        },
        std: Averaged {
            precision: ps,
            recall: rs,
            f1: fs,
        },
    })
}
