//! Per-video score files and two-stream fusion over them.
//!
//! A score file is CSV: a header `id,label,score_0,…,score_{C-1}` followed
//! by one row per video.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Result, TleError};
use crate::head::argmax;
use crate::train::{fuse_streams_weighted, report_from, EvalReport, FuseMode, VideoPrediction};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub label: usize,
    pub scores: Vec<f64>,
}

impl From<&VideoPrediction> for ScoreRow {
    fn from(p: &VideoPrediction) -> Self {
        ScoreRow {
            id: p.id.clone(),
            label: p.label,
            scores: p.scores.clone(),
        }
    }
}

pub fn scores_to_csv(rows: &[ScoreRow]) -> Result<String> {
    let classes = rows.first().map_or(0, |r| r.scores.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["id".to_owned(), "label".to_owned()]
        .into_iter()
        .chain((0..classes).map(|c| format!("score_{c}")));
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        let fields = [r.id.clone(), r.label.to_string()]
            .into_iter()
            .chain(r.scores.iter().map(f64::to_string));
        w.write_record(fields).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| TleError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn csv_error(e: csv::Error) -> TleError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    TleError::Config {
        line,
        message: e.to_string(),
    }
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    let classes = header.len().saturating_sub(2);
    if classes == 0 || &header[0] != "id" || &header[1] != "label" {
        return Err(TleError::Config {
            line: 1,
            message: format!("bad header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| TleError::Config { line, message };
        let label: usize = record[1].parse().map_err(|_| bad(format!("bad label `{}`", &record[1])))?;
        if label >= classes {
            return Err(bad(format!("label {label} out of range")));
        }
        let scores = record
            .iter()
            .skip(2)
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(format!("bad score `{f}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ScoreRow {
            id: record[0].to_owned(),
            label,
            scores,
        });
    }
    Ok(rows)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    parse_scores(&std::fs::read_to_string(path)?)
}

pub fn write_scores(rows: &[ScoreRow], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, scores_to_csv(rows)?)?;
    Ok(())
}

/// Video-level accuracy of a score table.
pub fn score_accuracy(rows: &[ScoreRow]) -> f64 {
    let correct = rows.iter().filter(|r| argmax(&r.scores) == r.label).count();
    correct as f64 / rows.len().max(1) as f64
}

/// Fuses two score tables video by video, matching rows by id. Output rows
/// follow the order of `spatial`.
pub fn fuse_tables(spatial: &[ScoreRow], temporal: &[ScoreRow], spatial_weight: f64, mode: FuseMode) -> Result<Vec<ScoreRow>> {
    if spatial.len() != temporal.len() {
        return Err(TleError::DimensionMismatch(format!(
            "stream tables cover {} and {} videos",
            spatial.len(),
            temporal.len()
        )));
    }
    let by_id: HashMap<&str, &ScoreRow> = temporal.iter().map(|r| (r.id.as_str(), r)).collect();
    spatial
        .iter()
        .map(|s| {
            let t = by_id
                .get(s.id.as_str())
                .ok_or_else(|| TleError::DimensionMismatch(format!("video `{}` missing from temporal scores", s.id)))?;
            if t.label != s.label {
                return Err(TleError::DimensionMismatch(format!("video `{}` has conflicting labels", s.id)));
            }
            Ok(ScoreRow {
                id: s.id.clone(),
                label: s.label,
                scores: fuse_streams_weighted(&s.scores, &t.scores, spatial_weight, mode)?,
            })
        })
        .collect()
}

/// Evaluation report for a fused table.
pub fn fused_report(rows: &[ScoreRow]) -> EvalReport {
    let classes = rows.first().map_or(0, |r| r.scores.len());
    let preds = rows
        .iter()
        .map(|r| VideoPrediction {
            id: r.id.clone(),
            label: r.label,
            predicted: argmax(&r.scores),
            scores: r.scores.clone(),
        })
        .collect();
    report_from(preds, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            ScoreRow {
                id: "a,\"quoted\"".into(),
                label: 1,
                scores: vec![0.25, -1.5, 3.0],
            },
            ScoreRow {
                id: "b".into(),
                label: 0,
                scores: vec![1e-3, 2.0, 0.0],
            },
        ];
        assert_eq!(parse_scores(&scores_to_csv(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn malformed_rows() {
        assert!(parse_scores("").is_err());
        assert!(parse_scores("id,label,score_0,score_1\nx,0,1.0\n").is_err());
        assert!(parse_scores("id,label,score_0,score_1\nx,5,1.0,2.0\n").is_err());
        assert!(parse_scores("id,label,score_0,score_1\nx,0,nan,2.0\n").is_err());
    }

    #[test]
    fn fusion_matches_by_id() {
        let s = parse_scores("id,label,score_0,score_1\na,0,2,0\nb,1,0,1\n").unwrap();
        let t = parse_scores("id,label,score_0,score_1\nb,1,0,3\na,0,0,2\n").unwrap();
        let fused = fuse_tables(&s, &t, 0.5, FuseMode::Logits).unwrap();
        assert_eq!(fused[0].scores, vec![1.0, 1.0]);
        assert_eq!(fused[1].scores, vec![0.0, 2.0]);
        let missing = parse_scores("id,label,score_0,score_1\na,0,1,1\nc,1,0,1\n").unwrap();
        assert!(fuse_tables(&s, &missing, 0.5, FuseMode::Logits).is_err());
    }
}
