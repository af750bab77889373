//! CSV ingestion for curve and field datasets.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::density::CurveSnapshot;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn headers(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>> {
    let h = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    Ok(h.iter().map(|s| s.to_ascii_lowercase()).collect())
}

fn column(headers: &[String], name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| parse_err(path, 1, format!("missing column `{name}`")))
}

fn number(record: &csv::StringRecord, idx: usize, name: &str, path: &Path, line: usize) -> Result<f64> {
    let raw = record
        .get(idx)
        .ok_or_else(|| parse_err(path, line, format!("row has no `{name}` value")))?;
    let v: f64 = raw
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{name}` value `{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("`{name}` value `{raw}` is not finite")));
    }
    Ok(v)
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

/// Reads `condition,strain,stress` rows and returns one snapshot per
/// condition, ordered by condition.
///
/// Rows within a condition are sorted by strain; repeated strains are merged
/// into the mean of their stresses with a warning.
pub fn ingest_curves(path: &Path) -> Result<Vec<CurveSnapshot>> {
    let mut reader = open(path)?;
    let h = headers(&mut reader, path)?;
    let (ci, ei, si) = (
        column(&h, "condition", path)?,
        column(&h, "strain", path)?,
        column(&h, "stress", path)?,
    );
    let mut groups: BTreeMap<u64, (f64, Vec<(f64, f64)>)> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = line_of(&rec);
        let c = number(&rec, ci, "condition", path, line)?;
        let e = number(&rec, ei, "strain", path, line)?;
        let s = number(&rec, si, "stress", path, line)?;
        groups.entry(order_key(c)).or_insert_with(|| (c, Vec::new())).1.push((e, s));
    }
    if groups.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    groups
        .into_values()
        .map(|(c, mut rows)| {
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            let merged = merge_duplicates(&rows);
            if merged.len() < rows.len() {
                warn!(
                    "{}: condition {c}: {} repeated strain values averaged",
                    path.display(),
                    rows.len() - merged.len()
                );
            }
            let (strains, stresses): (Vec<f64>, Vec<f64>) = merged.into_iter().unzip();
            CurveSnapshot::new(c, strains, stresses)
                .map_err(|e| parse_err(path, 0, format!("condition {c}: {e}")))
        })
        .collect()
}

/// Key that sorts like the float itself (for finite values).
fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if v.is_sign_negative() {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn merge_duplicates(sorted: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let mean = sorted[i..j].iter().map(|p| p.1).sum::<f64>() / (j - i) as f64;
        out.push((sorted[i].0, mean));
        i = j;
    }
    out
}

/// Field rows sharing one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub condition: f64,
    pub rows: Vec<Vec<f64>>,
}

impl FieldSnapshot {
    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.dim())
            .map(|k| self.rows.iter().map(|r| r[k]).sum::<f64>() / n)
            .collect()
    }
}

/// Reads `condition,v1..vD` rows, grouped by condition.
pub fn ingest_fields(path: &Path) -> Result<Vec<FieldSnapshot>> {
    let mut reader = open(path)?;
    let h = headers(&mut reader, path)?;
    let ci = column(&h, "condition", path)?;
    let value_cols: Vec<usize> = (0..h.len()).filter(|&i| i != ci).collect();
    if value_cols.is_empty() {
        return Err(parse_err(path, 1, "missing value columns `v1..vD`"));
    }
    let mut groups: BTreeMap<u64, FieldSnapshot> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = line_of(&rec);
        let c = number(&rec, ci, "condition", path, line)?;
        let values = value_cols
            .iter()
            .map(|&i| number(&rec, i, &h[i], path, line))
            .collect::<Result<Vec<f64>>>()?;
        groups
            .entry(order_key(c))
            .or_insert_with(|| FieldSnapshot {
                condition: c,
                rows: Vec::new(),
            })
            .rows
            .push(values);
    }
    if groups.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok(groups.into_values().collect())
}
