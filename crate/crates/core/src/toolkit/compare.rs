//! Agreement between two metrics exports: Pearson correlation and mean
//! absolute error per metric, over words present in both files.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::export::{parse_metrics_csv, ExportError, MetricsRow};

/// (column, label) of the compared metrics, in report order.
pub const COMPARED_METRICS: [(&str, &str); 13] = [
    ("TFD", "TFD"),
    ("AFD", "AFD"),
    ("MiFD", "MiFD"),
    ("MaFD", "MaFD"),
    ("F_count", "#F"),
    ("TFF_ts", "TFF"),
    ("FFD", "FFD"),
    ("FpFFD", "FpFFD"),
    ("FpD", "FpD"),
    ("FpR", "FpR"),
    ("RPD", "RPD"),
    ("sRPD", "sRPD"),
    ("RRD", "RRD"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricAgreement {
    pub metric: String,
    pub label: String,
    /// Rows where both files define the metric.
    pub n: usize,
    /// `None` when fewer than two rows or either column has zero variance.
    pub rho: Option<f64>,
    pub mae: Option<f64>,
    /// Population standard deviation of the absolute errors.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub joined_words: usize,
    pub metrics: Vec<MetricAgreement>,
}

/// Sample Pearson product-moment correlation; `None` if undefined.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean and population SD of `|a - b|`.
pub fn mae_sd(a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return None;
    }
    let err: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    let n = err.len() as f64;
    let mae = err.iter().sum::<f64>() / n;
    let var = err.iter().map(|e| (e - mae) * (e - mae)).sum::<f64>() / n;
    Some((mae, var.sqrt()))
}

pub fn compare_rows(a: &[MetricsRow], b: &[MetricsRow]) -> ComparisonReport {
    let bi: BTreeMap<usize, &MetricsRow> = b.iter().map(|r| (r.word_index, r)).collect();
    let joined: Vec<(&MetricsRow, &MetricsRow)> =
        a.iter().filter_map(|r| bi.get(&r.word_index).map(|s| (r, *s))).collect();
    let metrics = COMPARED_METRICS
        .iter()
        .map(|(col, label)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                joined.iter().filter_map(|(r, s)| Some((*r.values.get(*col)?, *s.values.get(*col)?))).unzip();
            let ms = mae_sd(&xs, &ys);
            MetricAgreement {
                metric: col.to_string(),
                label: label.to_string(),
                n: xs.len(),
                rho: pearson(&xs, &ys),
                mae: ms.map(|m| m.0),
                sd: ms.map(|m| m.1),
            }
        })
        .collect();
    ComparisonReport { joined_words: joined.len(), metrics }
}

pub fn compare_csv(a: &str, b: &str) -> Result<ComparisonReport, ExportError> {
    Ok(compare_rows(&parse_metrics_csv(a)?, &parse_metrics_csv(b)?))
}

impl ComparisonReport {
    pub fn metric(&self, name: &str) -> Option<&MetricAgreement> {
        self.metrics.iter().find(|m| m.metric == name || m.label == name)
    }

    /// Metrics whose correlation is defined and below `min_rho`, or whose
    /// MAE exceeds `max_mae`.
    pub fn violations(&self, min_rho: Option<f64>, max_mae: Option<f64>) -> Vec<String> {
        let mut out = Vec::new();
        for m in &self.metrics {
            if let (Some(lim), Some(r)) = (min_rho, m.rho) {
                if r < lim {
                    out.push(format!("{}: rho {r} < {lim}", m.label));
                }
            }
            if let (Some(lim), Some(e)) = (max_mae, m.mae) {
                if e > lim {
                    out.push(format!("{}: MAE {e} > {lim}", m.label));
                }
            }
        }
        out
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>7}  {:>22}  {:>5}", "Metric", "rho", "MAE ± SD", "n")?;
        for m in &self.metrics {
            let rho = m.rho.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
            let mae = match (m.mae, m.sd) {
                (Some(e), Some(s)) => format!("{e:.3} ± {s:.3}"),
                _ => "n/a".to_string(),
            };
            writeln!(f, "{:<8} {:>7}  {:>22}  {:>5}", m.label, rho, mae, m.n)?;
        }
        write!(f, "joined words: {}", self.joined_words)
    }
}
