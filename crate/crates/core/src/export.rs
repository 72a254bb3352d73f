//! Per-word metrics CSV.
//!
//! Durations and timestamps are milliseconds with three decimals, absent
//! optional values are empty cells and FpR is written as `0`/`1`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{format_ms, format_ms_f64, LayoutManifest, WordMetrics};

pub const METRICS_HEADER: [&str; 19] = [
    "word_index",
    "text",
    "char_index",
    "sentence_index",
    "TFD",
    "AFD",
    "MiFD",
    "MaFD",
    "F_count",
    "TFF_ts",
    "TTFF",
    "FFD",
    "FpFFD",
    "Fp_group",
    "FpR",
    "FpD",
    "RPD",
    "sRPD",
    "RRD",
];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("missing column {0}")]
    MissingColumn(String),
}

fn opt_ms(v: Option<i64>) -> String {
    v.map(format_ms).unwrap_or_default()
}

/// Renders the metrics table. Rows are ordered by word index; text columns
/// come from the manifest when it knows the word.
pub fn metrics_csv(manifest: Option<&LayoutManifest>, metrics: &[WordMetrics]) -> String {
    let mut rows: Vec<&WordMetrics> = metrics.iter().collect();
    rows.sort_by_key(|m| m.word_index);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(METRICS_HEADER).expect("in-memory write");
    for m in rows {
        let word = manifest.and_then(|l| l.word(m.word_index));
        let record = [
            m.word_index.to_string(),
            word.map(|w| w.text.clone()).unwrap_or_default(),
            word.map(|w| w.char_index.to_string()).unwrap_or_default(),
            word.map(|w| w.sentence_index.to_string()).unwrap_or_default(),
            format_ms(m.tfd_us),
            m.afd_us.map(format_ms_f64).unwrap_or_default(),
            opt_ms(m.mifd_us),
            opt_ms(m.mafd_us),
            m.fixation_count.to_string(),
            opt_ms(m.tff_ts_us),
            opt_ms(m.ttff_us),
            opt_ms(m.ffd_us),
            opt_ms(m.fp_ffd_us),
            m.fp_group.map(|g| g.to_string()).unwrap_or_default(),
            m.fp_regression.map(|r| if r { "1" } else { "0" }.to_string()).unwrap_or_default(),
            opt_ms(m.fpd_us),
            opt_ms(m.rpd_us),
            opt_ms(m.srpd_us),
            format_ms(m.rrd_us),
        ];
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Numeric view of one exported row: metric name -> value (absent cells omitted).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub word_index: usize,
    pub values: BTreeMap<String, f64>,
}

/// Parses a metrics CSV into numeric rows keyed by column name.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, ExportError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let idx_col = headers
        .iter()
        .position(|h| h == "word_index")
        .ok_or_else(|| ExportError::MissingColumn("word_index".into()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let word_index = rec[idx_col]
            .parse()
            .map_err(|_| ExportError::Parse { line, message: format!("bad word_index {:?}", &rec[idx_col]) })?;
        let mut values = BTreeMap::new();
        for (name, cell) in headers.iter().zip(rec.iter()) {
            if matches!(name, "word_index" | "text") || cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| ExportError::Parse { line, message: format!("column {name}: {cell:?} is not numeric") })?;
            values.insert(name.to_string(), v);
        }
        rows.push(MetricsRow { word_index, values });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParagraphAoi, Rect, WordAoi};

    #[test]
    fn header_only_for_empty() {
        let csv = metrics_csv(None, &[]);
        assert_eq!(csv, format!("{}\n", METRICS_HEADER.join(",")));
    }

    #[test]
    fn row_format() {
        let manifest = LayoutManifest {
            url: "u".into(),
            page_text: "Hi, there".into(),
            words: vec![WordAoi {
                word_index: 0,
                char_index: 0,
                sentence_index: 0,
                paragraph_id: 0,
                text: "Hi,".into(),
                bbox: Rect::new(0.0, 0.0, 10.0, 10.0),
            }],
            paragraphs: vec![ParagraphAoi { id: 0, bbox: Rect::new(0.0, 0.0, 10.0, 10.0) }],
            media: vec![],
        };
        let mut m = WordMetrics::empty(0);
        m.tfd_us = 270_000;
        m.fixation_count = 2;
        m.afd_us = Some(135_000.0);
        m.mifd_us = Some(120_000);
        m.mafd_us = Some(150_000);
        m.tff_ts_us = Some(3_333);
        m.ttff_us = Some(3_333);
        m.ffd_us = Some(150_000);
        m.fp_ffd_us = Some(150_000);
        m.fp_group = Some(2);
        m.fp_regression = Some(false);
        m.fpd_us = Some(150_000);
        m.rpd_us = Some(150_000);
        m.srpd_us = Some(150_000);
        m.rrd_us = 120_000;
        let csv = metrics_csv(Some(&manifest), &[m, WordMetrics::empty(1)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[1],
            "0,\"Hi,\",0,0,270.000,135.000,120.000,150.000,2,3.333,3.333,150.000,150.000,2,0,150.000,150.000,150.000,120.000"
        );
        assert_eq!(lines[2], "1,,,,0.000,,,,0,,,,,,,,,,0.000");

        let rows = parse_metrics_csv(&csv).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].values["TFD"], 270.0);
        assert_eq!(rows[0].values["FpR"], 0.0);
        assert!(!rows[1].values.contains_key("AFD"));
    }

    #[test]
    fn parse_errors_carry_line() {
        let bad = "word_index,TFD\n0,1.0\n1,abc\n";
        match parse_metrics_csv(bad) {
            Err(ExportError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_metrics_csv("TFD\n1\n"), Err(ExportError::MissingColumn(_))));
    }
}
