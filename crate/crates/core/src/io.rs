//! Point-set files: headerless CSV or `{"d", "points", "labels"?}` JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::PointSet;
use crate::{Error, Result};

/// A point set as read from disk, with labels when the file carries them.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFile {
    pub points: PointSet,
    pub labels: Option<Vec<i8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointsJson {
    pub d: usize,
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<i8>>,
}

fn parse_label(field: &str, row: usize) -> Result<i8> {
    match field.trim() {
        "+1" | "1" | "1.0" | "+1.0" => Ok(1),
        "-1" | "-1.0" => Ok(-1),
        other => Err(Error::Parse(format!(
            "row {}: label {other:?} is not +1 or -1",
            row + 1
        ))),
    }
}

/// Parses headerless CSV. With `labeled`, the last column of every row is a
/// `±1` label; otherwise every column is a coordinate.
pub fn parse_csv(text: &str, labeled: bool) -> Result<PointFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let fields: Vec<&str> = rec.iter().collect();
        let coords = if labeled {
            let (last, rest) = fields
                .split_last()
                .ok_or_else(|| Error::Parse(format!("row {}: empty", i + 1)))?;
            labels.push(parse_label(last, i)?);
            rest
        } else {
            &fields[..]
        };
        let row = coords
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {f:?}: {e}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("row {}: non-finite coordinate", i + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("no points".into()));
    }
    Ok(PointFile {
        points: PointSet::from_rows(&rows)?,
        labels: labeled.then_some(labels),
    })
}

pub fn to_csv(points: &PointSet, labels: Option<&[i8]>) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != points.n() {
            return Err(Error::DimensionMismatch {
                expected: points.n(),
                got: l.len(),
            });
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for (i, x) in points.points().iter().enumerate() {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            rec.push(if l[i] > 0 { "+1".into() } else { "-1".into() });
        }
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_json(text: &str) -> Result<PointFile> {
    let j: PointsJson = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if j.points.iter().any(|r| r.len() != j.d) {
        return Err(Error::Parse(format!("every point must have {} coordinates", j.d)));
    }
    let points = PointSet::from_rows(&j.points)?;
    if let Some(l) = &j.labels {
        if l.len() != points.n() {
            return Err(Error::DimensionMismatch {
                expected: points.n(),
                got: l.len(),
            });
        }
        if l.iter().any(|&y| y != 1 && y != -1) {
            return Err(Error::Parse("labels must be +1 or -1".into()));
        }
    }
    Ok(PointFile {
        points,
        labels: j.labels,
    })
}

pub fn to_json(points: &PointSet, labels: Option<&[i8]>) -> Result<String> {
    let j = PointsJson {
        d: points.d(),
        points: points.to_rows(),
        labels: labels.map(<[i8]>::to_vec),
    };
    serde_json::to_string(&j).map_err(|e| Error::Parse(e.to_string()))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads a `.json` or CSV point file. JSON files say for themselves whether
/// they are labeled; `labeled` only applies to CSV.
pub fn read_points(path: &Path, labeled: bool) -> Result<PointFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if is_json(path) {
        parse_json(&text)
    } else {
        parse_csv(&text, labeled)
    }
}

pub fn write_points(path: &Path, points: &PointSet, labels: Option<&[i8]>) -> Result<()> {
    let text = if is_json(path) {
        to_json(points, labels)?
    } else {
        to_csv(points, labels)?
    };
    fs::write(path, text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
