use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Score threshold (`+inf` for the starting point).
    pub threshold: f64,
    /// FPR for ROC, recall for PR.
    pub x: f64,
    /// TPR for ROC, precision for PR.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub kind: CurveKind,
    pub class_id: Option<usize>,
    pub points: Vec<CurvePoint>,
    /// Trapezoidal area for ROC, average precision for PR.
    pub auc: f64,
}

/// Cumulative (threshold, tp, fp) after each group of tied scores, highest
/// score first.
fn ranked_counts(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, u64, u64)>> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::InvalidScore { index: i });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((scores[i], tp, fp));
        }
    }
    Ok(out)
}

/// ROC curve over distinct score thresholds with trapezoidal AUC.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<CurveSeries> {
    let ranked = ranked_counts(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(EvalError::SingleClassOnly { class: None });
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    points.extend(ranked.iter().map(|&(t, tp, fp)| CurvePoint {
        threshold: t,
        x: fp as f64 / neg,
        y: tp as f64 / pos,
    }));
    let auc = points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0)
        .sum();
    Ok(CurveSeries {
        kind: CurveKind::Roc,
        class_id: None,
        points,
        auc,
    })
}

/// Precision-recall curve with average precision Σ (R_k − R_{k−1}) P_k.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<CurveSeries> {
    let ranked = ranked_counts(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    if pos == 0.0 {
        return Err(EvalError::NoPositives);
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 1.0,
    }];
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(t, tp, fp) in &ranked {
        let recall = tp as f64 / pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint {
            threshold: t,
            x: recall,
            y: precision,
        });
    }
    Ok(CurveSeries {
        kind: CurveKind::Pr,
        class_id: None,
        points,
        auc: ap,
    })
}

/// Per-class ROC and PR curves treating each class against the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneVsRest {
    pub roc: Vec<CurveSeries>,
    pub pr: Vec<CurveSeries>,
}

pub fn one_vs_rest_curves(probabilities: &[Vec<f64>], labels: &[usize]) -> Result<OneVsRest> {
    if probabilities.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: probabilities.len(),
            right: labels.len(),
        });
    }
    let classes = probabilities.first().map_or(0, Vec::len);
    for (row, p) in probabilities.iter().enumerate() {
        let s: f64 = p.iter().sum();
        if p.len() != classes || (s - 1.0).abs() > 1e-5 {
            return Err(EvalError::RowsNotNormalized { row, sum: s });
        }
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(EvalError::LabelOutOfRange { label: y, classes });
    }
    let mut out = OneVsRest {
        roc: Vec::with_capacity(classes),
        pr: Vec::with_capacity(classes),
    };
    for c in 0..classes {
        let scores: Vec<f64> = probabilities.iter().map(|p| p[c]).collect();
        let bin: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        let tag = |e: EvalError| match e {
            EvalError::SingleClassOnly { .. } | EvalError::NoPositives => {
                EvalError::SingleClassOnly { class: Some(c) }
            }
            other => other,
        };
        let mut roc = roc_curve(&scores, &bin).map_err(tag)?;
        let mut pr = pr_curve(&scores, &bin).map_err(tag)?;
        roc.class_id = Some(c);
        pr.class_id = Some(c);
        out.roc.push(roc);
        out.pr.push(pr);
    }
    Ok(out)
}

/// CSV with header `threshold,x,y`.
pub fn write_curve_csv<W: Write>(curve: &CurveSeries, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in &curve.points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Static SVG line plot of one or more curves of the same kind.
pub fn curves_svg(curves: &[CurveSeries], title: &str) -> String {
    let (w, h, m) = (420.0, 420.0, 50.0);
    let side = w - 2.0 * m;
    let kind = curves.first().map_or(CurveKind::Roc, |c| c.kind);
    let (xl, yl, metric) = match kind {
        CurveKind::Roc => ("False positive rate", "True positive rate", "AUC"),
        CurveKind::Pr => ("Recall", "Precision", "AP"),
    };
    let px = |x: f64| m + x.clamp(0.0, 1.0) * side;
    let py = |y: f64| h - m - y.clamp(0.0, 1.0) * side;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{side}" height="{side}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#,
            px(v),
            h - m + 15.0,
            m - 5.0,
            py(v) + 4.0
        );
    }
    if kind == CurveKind::Roc {
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 3"/>"##,
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xl}</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{yl}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = match c.kind {
            CurveKind::Roc => c.points.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y))).collect(),
            // Average precision is a right-step integral; draw it as steps.
            CurveKind::Pr => c
                .points
                .windows(2)
                .flat_map(|q| {
                    [
                        format!("{:.2},{:.2}", px(q[0].x), py(q[1].y)),
                        format!("{:.2},{:.2}", px(q[1].x), py(q[1].y)),
                    ]
                })
                .collect(),
        };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let label = match c.class_id {
            Some(k) => format!("class {k}: {metric} {:.3}", c.auc),
            None => format!("{metric} {:.3}", c.auc),
        };
        let ly = m + 16.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#,
            w - m - 6.0,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: [f64; 4] = [0.9, 0.8, 0.7, 0.6];
    const L: [bool; 4] = [true, false, true, false];

    #[test]
    fn roc_small_example() {
        let c = roc_curve(&S, &L).unwrap();
        assert!((c.auc - 0.75).abs() < 1e-12);
        assert!(c.points.windows(2).all(|w| w[0].x <= w[1].x));
    }

    #[test]
    fn roc_perfect_and_tied() {
        let c = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(c.auc, 1.0);
        let c = roc_curve(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.auc, 0.5);
    }

    #[test]
    fn roc_needs_both_classes() {
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClassOnly { class: None })
        ));
    }

    #[test]
    fn average_precision_examples() {
        let c = pr_curve(&S, &L).unwrap();
        assert!((c.auc - (0.5 + (2.0 / 3.0) * 0.5)).abs() < 1e-12);
        let c = pr_curve(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap();
        assert_eq!(c.auc, 1.0);
        // The only positive ranked last among n.
        let n = 7;
        let scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / 10.0).collect();
        let labels: Vec<bool> = (0..n).map(|i| i == n - 1).collect();
        let c = pr_curve(&scores, &labels).unwrap();
        assert!((c.auc - 1.0 / n as f64).abs() < 1e-12);
        assert!(c.points.windows(2).all(|w| w[0].x <= w[1].x));
        assert!(matches!(pr_curve(&[0.3], &[false]), Err(EvalError::NoPositives)));
    }

    #[test]
    fn nan_score_rejected() {
        assert!(matches!(
            roc_curve(&[0.1, f64::NAN], &[true, false]),
            Err(EvalError::InvalidScore { index: 1 })
        ));
    }

    #[test]
    fn one_vs_rest_binary_matches_column() {
        let probs: Vec<Vec<f64>> = S.iter().map(|&s| vec![1.0 - s, s]).collect();
        let labels: Vec<usize> = L.iter().map(|&l| usize::from(l)).collect();
        let ovr = one_vs_rest_curves(&probs, &labels).unwrap();
        let direct = roc_curve(&S, &L).unwrap();
        assert_eq!(ovr.roc[1].points, direct.points);
        assert_eq!(ovr.roc[1].class_id, Some(1));
    }

    #[test]
    fn one_vs_rest_checks_rows_and_classes() {
        let bad = vec![vec![0.5, 0.6], vec![0.5, 0.5]];
        assert!(matches!(
            one_vs_rest_curves(&bad, &[0, 1]),
            Err(EvalError::RowsNotNormalized { row: 0, .. })
        ));
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.6, 0.3, 0.1]];
        assert!(matches!(
            one_vs_rest_curves(&probs, &[0, 1]),
            Err(EvalError::SingleClassOnly { class: Some(2) })
        ));
    }

    #[test]
    fn csv_and_svg() {
        let c = roc_curve(&S, &L).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,x,y\ninf,0.0,0.0\n"));
        let svg = curves_svg(&[c], "ROC <test>");
        assert!(svg.starts_with("<svg") && svg.contains("polyline") && svg.contains("&lt;test&gt;"));
    }
}
