use proptest::prelude::*;
use usfmae_core::eval::{
    argmax_rows, assign_folds, curves_svg, kfold_run, one_vs_rest_curves, pr_curve, roc_curve, write_curve_csv,
    CurveKind, EvalError, MetricsReport,
};
use usfmae_tensor::Rng;

#[test]
fn three_class_report_by_hand() {
    let probs = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.8, 0.1],
        vec![0.2, 0.3, 0.5],
        vec![0.6, 0.3, 0.1],
        vec![0.3, 0.3, 0.4],
        vec![0.1, 0.1, 0.8],
    ];
    let labels = [0, 1, 2, 1, 1, 2];
    let preds = argmax_rows(&probs);
    assert_eq!(preds, vec![0, 1, 2, 0, 2, 2]);
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let r = MetricsReport::from_predictions(&preds, &labels, 3, &names).unwrap();
    // class 0: tp 1 fp 1 fn 0; class 1: tp 1 fp 0 fn 2; class 2: tp 2 fp 1 fn 0
    let want = [(0.5, 1.0), (1.0, 1.0 / 3.0), (2.0 / 3.0, 1.0)];
    for (c, (p, rc)) in want.iter().enumerate() {
        assert!((r.classes[c].precision - p).abs() < 1e-12);
        assert!((r.classes[c].recall - rc).abs() < 1e-12);
        assert_eq!(r.classes[c].name.as_deref(), Some(names[c].as_str()));
    }
    assert_eq!(r.classes[1].support, 3);
    let f1s = [2.0 / 3.0, 0.5, 0.8];
    assert!((r.macro_avg.f1 - f1s.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-12);
    assert!((r.micro_avg.f1 - r.accuracy).abs() < 1e-12);

    let back: MetricsReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn roc_reference_cases() {
    let labels = [true, true, false, false];
    assert_eq!(roc_curve(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap().auc, 1.0);
    assert_eq!(roc_curve(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap().auc, 0.0);
    assert_eq!(roc_curve(&[0.5; 4], &labels).unwrap().auc, 0.5);
    let c = roc_curve(&[0.9, 0.3, 0.6, 0.1], &labels).unwrap();
    assert_eq!(c.auc, 0.75);
    let first = c.points[0];
    let last = *c.points.last().unwrap();
    assert_eq!((first.x, first.y, last.x, last.y), (0.0, 0.0, 1.0, 1.0));
    assert!(matches!(
        roc_curve(&[0.1, 0.2], &[true, true]),
        Err(EvalError::SingleClassOnly { class: None })
    ));
    assert!(matches!(roc_curve(&[0.1, f64::NAN], &[true, false]), Err(EvalError::InvalidScore { index: 1 })));
}

#[test]
fn average_precision_by_hand() {
    let pr = pr_curve(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
    assert!((pr.auc - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    assert_eq!(pr.kind, CurveKind::Pr);
    assert!(matches!(pr_curve(&[0.3], &[false]), Err(EvalError::NoPositives)));
}

// Probability that a random positive outranks a random negative, ties half.
fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

proptest! {
    #[test]
    fn roc_auc_is_the_rank_statistic(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = Rng::new(seed);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.below(8) as f64 / 8.0).collect();
        let auc = roc_curve(&scores, &labels).unwrap().auc;
        prop_assert!((auc - mann_whitney(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn one_vs_rest_outputs() {
    let probs = vec![vec![0.8, 0.2], vec![0.3, 0.7], vec![0.6, 0.4], vec![0.1, 0.9]];
    let labels = [0, 1, 1, 1];
    let ovr = one_vs_rest_curves(&probs, &labels).unwrap();
    assert_eq!((ovr.roc.len(), ovr.pr.len()), (2, 2));
    assert_eq!(ovr.roc[1].class_id, Some(1));
    assert_eq!(ovr.roc[0].auc, 1.0);
    assert_eq!(ovr.roc[1].auc, 1.0);

    let mut buf = Vec::new();
    write_curve_csv(&ovr.roc[0], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("threshold,x,y\n"));
    assert_eq!(text.lines().count(), ovr.roc[0].points.len() + 1);

    let svg = curves_svg(&ovr.roc, "ROC");
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("AUC"));

    let bad = vec![vec![0.5, 0.6], vec![0.5, 0.5]];
    assert!(matches!(
        one_vs_rest_curves(&bad, &[0, 1]),
        Err(EvalError::RowsNotNormalized { row: 0, .. })
    ));
}

#[test]
fn kfold_with_a_threshold_classifier() {
    let mut rng = Rng::new(21);
    let n = 50;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x: Vec<f64> = labels.iter().map(|&y| y as f64 + 0.3 * rng.normal()).collect();
    let folds: Vec<Option<usize>> = assign_folds(n, 5, 4).into_iter().map(Some).collect();
    let summary = kfold_run(
        &folds,
        5,
        |_, train| {
            // midpoint between class means
            let mean = |c: usize| {
                let v: Vec<f64> = train.iter().filter(|&&i| labels[i] == c).map(|&i| x[i]).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            Ok((mean(0) + mean(1)) / 2.0)
        },
        |_, &cut, test| {
            let preds: Vec<usize> = test.iter().map(|&i| usize::from(x[i] > cut)).collect();
            let ys: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            MetricsReport::from_predictions(&preds, &ys, 2, &[])
        },
    )
    .unwrap();
    assert_eq!(summary.folds.len(), 5);
    assert_eq!(summary.folds.iter().map(|f| f.samples).sum::<usize>(), n);
    let f1s: Vec<f64> = summary.folds.iter().map(|f| f.macro_avg.f1).collect();
    let mean = f1s.iter().sum::<f64>() / 5.0;
    let sd = (f1s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((summary.mean.f1 - mean).abs() < 1e-12);
    assert!((summary.std.f1 - sd).abs() < 1e-12);
    assert!(summary.mean.f1 > 0.8);
}
