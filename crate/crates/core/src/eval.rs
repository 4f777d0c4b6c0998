//! Confusion metrics, ROC/AUC and error statistics over validation predictions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("labels and scores differ in length ({labels} vs {scores})")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("evaluation input is empty")]
    Empty,
    #[error("scores must be finite")]
    NonFinite,
    #[error("labels must be 0 or 1")]
    BadLabel,
    #[error("ROC needs both classes present")]
    SingleClass,
}

/// Binary labels and continuous scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInput {
    pub y: Vec<u8>,
    pub y_hat: Vec<f64>,
}

impl EvalInput {
    pub fn new(y: Vec<u8>, y_hat: Vec<f64>) -> Result<Self, EvalError> {
        if y.len() != y_hat.len() {
            return Err(EvalError::LengthMismatch {
                labels: y.len(),
                scores: y_hat.len(),
            });
        }
        if y.is_empty() {
            return Err(EvalError::Empty);
        }
        if y_hat.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite);
        }
        if y.iter().any(|&l| l > 1) {
            return Err(EvalError::BadLabel);
        }
        Ok(Self { y, y_hat })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Positive iff score >= threshold.
pub fn confusion(input: &EvalInput, threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&y, &s) in input.y.iter().zip(&input.y_hat) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Classification metrics; `None` marks a 0/0 ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> ClassMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ClassMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        specificity: ratio(c.tn, c.tn + c.fp),
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score threshold reaching this point; `None` for the (0, 0) origin.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC by sweeping distinct scores in descending order, one step per tie group;
/// AUC by the trapezoid rule, which equals the Mann-Whitney statistic with ties
/// counted one half.
pub fn roc_auc(input: &EvalInput) -> Result<RocCurve, EvalError> {
    let pos = input.y.iter().filter(|&&l| l == 1).count();
    let neg = input.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..input.len()).collect();
    order.sort_by(|&a, &b| input.y_hat[b].partial_cmp(&input.y_hat[a]).unwrap());

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    // integer counts keep the area exact up to one final division
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = input.y_hat[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && input.y_hat[order[i]] == s {
            if input.y[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += ((fp - fp0) * (tp + tp0)) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: Some(s),
        });
    }
    let auc = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let t = p.threshold.map_or("inf".to_string(), |t| t.to_string());
            let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, t);
        }
        out
    }

    /// Standalone ROC plot with the chance diagonal and the AUC annotated.
    pub fn to_svg(&self, title: &str) -> String {
        let (size, margin) = (400.0, 50.0);
        let plot = size - 2.0 * margin;
        let px = |v: f64| margin + v * plot;
        let py = |v: f64| size - margin - v * plot;
        let mut path = String::new();
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(
                path,
                "{}{:.2},{:.2} ",
                if i == 0 { "M" } else { "L" },
                px(p.fpr),
                py(p.tpr)
            );
        }
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<rect x="{margin}" y="{margin}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        );
        for t in [0.0, 0.5, 1.0] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{t}</text>"#,
                px(t),
                size - margin + 16.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{t}</text>"#,
                margin - 6.0,
                py(t) + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">False positive rate</text>"#,
            size / 2.0,
            size - 12.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">True positive rate</text>"#,
            size / 2.0,
            size / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#,
            size / 2.0,
            margin - 18.0,
            xml_escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="crimson" stroke-width="2"/>"#,
            path.trim_end()
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="end">AUC = {:.4}</text>"#,
            px(1.0) - 8.0,
            py(0.0) - 10.0,
            self.auc
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
    /// Counts of e = y - y_hat in 40 equal bins over [-1, 1].
    pub histogram: Vec<usize>,
}

/// Bin index of an error value: a value on an inner edge goes to the lower bin.
pub fn histogram_bin(e: f64) -> usize {
    let t = (e + 1.0) * (HISTOGRAM_BINS as f64 / 2.0);
    let r = t.round();
    let idx = if (t - r).abs() < 1e-9 { r - 1.0 } else { t.floor() };
    idx.clamp(0.0, (HISTOGRAM_BINS - 1) as f64) as usize
}

pub fn error_stats(input: &EvalInput) -> ErrorStats {
    let m = input.len() as f64;
    let mut histogram = vec![0; HISTOGRAM_BINS];
    let (mut abs, mut sq) = (0.0, 0.0);
    for (&y, &s) in input.y.iter().zip(&input.y_hat) {
        let e = y as f64 - s;
        abs += e.abs();
        sq += e * e;
        histogram[histogram_bin(e)] += 1;
    }
    ErrorStats {
        mae: abs / m,
        rmse: (sq / m).sqrt(),
        histogram,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
    pub auc: f64,
    pub mae: f64,
    pub rmse: f64,
    pub roc: Vec<RocPoint>,
    pub error_histogram: Vec<usize>,
}

pub fn evaluate(input: &EvalInput, threshold: f64) -> Result<MetricReport, EvalError> {
    let counts = confusion(input, threshold);
    let roc = roc_auc(input)?;
    let err = error_stats(input);
    Ok(MetricReport {
        threshold,
        counts,
        metrics: metrics(&counts),
        auc: roc.auc,
        mae: err.mae,
        rmse: err.rmse,
        roc: roc.points,
        error_histogram: err.histogram,
    })
}
