use std::io::{BufRead, Read, Write};

use thiserror::Error;

use super::{Dataset, DiscardReason, Sample};
use crate::nlp::{PointKind, PrimalDualPoint};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset is empty")]
    Empty,
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `ds` as CSV. Every sample must have the same `p` and `u` widths.
pub fn write_dataset_csv<W: Write>(ds: &Dataset, out: W) -> Result<(), CsvError> {
    let first = ds.samples.first().ok_or(CsvError::Empty)?;
    let (n_p, n_u) = (first.p.len(), first.u.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..n_p).map(|i| format!("p_{i}")).collect();
    header.extend((0..n_u).map(|i| format!("u_{i}")));
    header.extend(
        [
            "kind",
            "anchor_id",
            "stationarity_norm",
            "corrector_iters",
            "discarded",
            "reason",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for (row, s) in ds.samples.iter().enumerate() {
        if s.p.len() != n_p || s.u.len() != n_u {
            return Err(CsvError::Row {
                row: row + 1,
                message: "inconsistent vector widths".into(),
            });
        }
        let mut rec: Vec<String> = s.p.iter().chain(&s.u).map(|&v| fmt_f64(v)).collect();
        rec.push(kind_str(s.kind).into());
        rec.push(s.anchor_id.to_string());
        rec.push(fmt_f64(s.stationarity_norm));
        rec.push(s.corrector_iters.to_string());
        rec.push(s.discarded.is_some().to_string());
        rec.push(s.discarded.map(|r| r.as_str()).unwrap_or("").into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn kind_str(k: PointKind) -> &'static str {
    match k {
        PointKind::ExactAnchor => "exact_anchor",
        PointKind::Augmented => "augmented",
    }
}

/// Reads a dataset written by [`write_dataset_csv`].
///
/// Row numbers in errors count the header as row 1. Sample indices are
/// reassigned in file order within each anchor.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset, CsvError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = r
        .headers()
        .map_err(|e| CsvError::Header(e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let n_p = cols.iter().take_while(|c| c.starts_with("p_")).count();
    let n_u = cols[n_p..]
        .iter()
        .take_while(|c| c.starts_with("u_"))
        .count();
    let tail = [
        "kind",
        "anchor_id",
        "stationarity_norm",
        "corrector_iters",
        "discarded",
        "reason",
    ];
    if n_p == 0 || cols.len() != n_p + n_u + tail.len() || cols[n_p + n_u..] != tail {
        return Err(CsvError::Header(format!("unexpected columns {cols:?}")));
    }

    let mut ds = Dataset::default();
    let mut next_index: std::collections::HashMap<usize, usize> = Default::default();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let bad = |message: String| CsvError::Row { row, message };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != cols.len() {
            return Err(bad(format!(
                "expected {} fields, got {}",
                cols.len(),
                rec.len()
            )));
        }
        let num = |j: usize| -> Result<f64, CsvError> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("column {}: not a number: {:?}", cols[j], &rec[j])))
        };
        let p = (0..n_p).map(num).collect::<Result<Vec<_>, _>>()?;
        let u = (n_p..n_p + n_u).map(num).collect::<Result<Vec<_>, _>>()?;
        let base = n_p + n_u;
        let kind = match &rec[base] {
            "exact_anchor" => PointKind::ExactAnchor,
            "augmented" => PointKind::Augmented,
            other => return Err(bad(format!("unknown kind {other:?}"))),
        };
        let anchor_id = rec[base + 1]
            .parse()
            .map_err(|_| bad("anchor_id: not an integer".into()))?;
        let stationarity_norm = num(base + 2)?;
        let corrector_iters = rec[base + 3]
            .parse()
            .map_err(|_| bad("corrector_iters: not an integer".into()))?;
        let discarded = match (&rec[base + 4], &rec[base + 5]) {
            ("false", "") => None,
            ("true", reason) => Some(
                DiscardReason::parse(reason)
                    .ok_or_else(|| bad(format!("unknown reason {reason:?}")))?,
            ),
            (d, r) => {
                return Err(bad(format!(
                    "inconsistent discarded/reason fields {d:?}/{r:?}"
                )))
            }
        };
        let sample_index = match kind {
            PointKind::ExactAnchor => None,
            PointKind::Augmented => {
                let n = next_index.entry(anchor_id).or_insert(0);
                *n += 1;
                Some(*n - 1)
            }
        };
        ds.samples.push(Sample {
            p,
            u,
            kind,
            anchor_id,
            sample_index,
            stationarity_norm,
            corrector_iters,
            discarded,
            point: None,
        });
    }
    if ds.samples.is_empty() {
        return Err(CsvError::Empty);
    }
    ds.anchors_attempted = ds.n_anchors();
    Ok(ds)
}

/// Writes the kept primal-dual points of valid samples, one JSON object per
/// line, in dataset order.
pub fn write_points_jsonl<W: Write>(ds: &Dataset, mut out: W) -> Result<usize, CsvError> {
    let mut n = 0;
    for s in ds.samples.iter().filter(|s| s.is_valid()) {
        if let Some(pt) = &s.point {
            serde_json::to_writer(&mut out, pt).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
            n += 1;
        }
    }
    out.flush()?;
    Ok(n)
}

pub fn read_points_jsonl<R: BufRead>(input: R) -> Result<Vec<PrimalDualPoint>, CsvError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pt = serde_json::from_str(&line).map_err(|e| CsvError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        out.push(pt);
    }
    Ok(out)
}
