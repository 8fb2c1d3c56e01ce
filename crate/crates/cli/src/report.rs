//! Per-method dice tables from training metrics CSVs.
//!
//! Each CSV contributes its last row per model id. Model 0 rows are two-model
//! ensembles; other rows are single models, labeled supervised-only when the
//! run never logged a non-zero CACPS loss. A `method=path` argument forces the
//! label of the single-model rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cacps::{Error, ErrorKind, Result};

pub const SUPERVISED: &str = "supervised-only";
pub const SINGLE: &str = "single-cacps";
pub const DOUBLE: &str = "double-cacps";
const METHOD_ORDER: [&str; 3] = [SUPERVISED, SINGLE, DOUBLE];
const DICE_COLUMNS: [&str; 4] = ["val_dice_LV", "val_dice_MYO", "val_dice_RV", "val_dice_avg"];

/// Final dice row of one model in one run, with the CSV text kept verbatim.
#[derive(Clone, Debug, PartialEq)]
pub struct RunScore {
    pub source: String,
    pub model_id: u8,
    pub text: [String; 4],
    pub values: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub runs: Vec<RunScore>,
}

impl MethodRow {
    pub fn mean(&self, col: usize) -> f64 {
        self.runs.iter().map(|r| r.values[col]).sum::<f64>() / self.runs.len() as f64
    }

    /// `(min, max)` of a column.
    pub fn range(&self, col: usize) -> (f64, f64) {
        self.runs
            .iter()
            .map(|r| r.values[col])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Verbatim value for a single run, `mean ± half-range` otherwise.
    pub fn cell(&self, col: usize) -> String {
        if let [only] = &self.runs[..] {
            return only.text[col].clone();
        }
        let (lo, hi) = self.range(col);
        format!("{:.4} ± {:.4}", self.mean(col), (hi - lo) / 2.0)
    }
}

fn data_err(msg: String) -> Error {
    Error::new(ErrorKind::Data, msg)
}

/// Reads one metrics CSV; `label` overrides the inferred single-model method.
pub fn read_run(path: &Path, label: Option<&str>) -> Result<Vec<(String, RunScore)>> {
    let source = path.display().to_string();
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| data_err(format!("{source}: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| data_err(format!("{source}: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(format!("{source}: missing column {name}")))
    };
    let model_col = col("model_id")?;
    let cacps_col = col("L_cacps")?;
    let dice_cols = [
        col(DICE_COLUMNS[0])?,
        col(DICE_COLUMNS[1])?,
        col(DICE_COLUMNS[2])?,
        col(DICE_COLUMNS[3])?,
    ];

    let mut last: BTreeMap<u8, RunScore> = BTreeMap::new();
    let mut cacps_active: BTreeMap<u8, bool> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| data_err(format!("{source}: {e}")))?;
        let bad = |what: &str| data_err(format!("{source} row {}: bad {what}", line + 2));
        let model_id: u8 = rec
            .get(model_col)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad("model_id"))?;
        let lc = rec.get(cacps_col).unwrap_or("");
        if !lc.is_empty() {
            let v: f64 = lc.parse().map_err(|_| bad("L_cacps"))?;
            *cacps_active.entry(model_id).or_default() |= v != 0.0;
        }
        let text = dice_cols.map(|c| rec.get(c).unwrap_or("").to_string());
        if text.iter().any(String::is_empty) {
            continue;
        }
        let mut values = [0.0; 4];
        for (k, t) in text.iter().enumerate() {
            values[k] = t.parse().map_err(|_| bad(DICE_COLUMNS[k]))?;
        }
        last.insert(
            model_id,
            RunScore {
                source: source.clone(),
                model_id,
                text,
                values,
            },
        );
    }
    if last.is_empty() {
        return Err(data_err(format!("{source}: no rows with validation dice")));
    }
    Ok(last
        .into_values()
        .map(|score| {
            let method = if score.model_id == 0 {
                DOUBLE.to_string()
            } else if let Some(l) = label {
                l.to_string()
            } else if cacps_active.get(&score.model_id).copied().unwrap_or(false) {
                SINGLE.to_string()
            } else {
                SUPERVISED.to_string()
            };
            (method, score)
        })
        .collect())
}

/// Groups `[method=]path` arguments into method rows, known methods first.
pub fn build_report(args: &[String]) -> Result<Vec<MethodRow>> {
    let mut groups: BTreeMap<String, Vec<RunScore>> = BTreeMap::new();
    for arg in args {
        let (label, path) = match arg.split_once('=') {
            Some((l, p)) if !l.is_empty() => (Some(l), p),
            _ => (None, arg.as_str()),
        };
        for (method, score) in read_run(Path::new(path), label)? {
            groups.entry(method).or_default().push(score);
        }
    }
    let rank = |m: &str| {
        METHOD_ORDER
            .iter()
            .position(|k| *k == m)
            .unwrap_or(METHOD_ORDER.len())
    };
    let mut rows: Vec<MethodRow> = groups
        .into_iter()
        .map(|(method, runs)| MethodRow { method, runs })
        .collect();
    rows.sort_by(|a, b| {
        rank(&a.method)
            .cmp(&rank(&b.method))
            .then_with(|| a.method.cmp(&b.method))
    });
    Ok(rows)
}

pub fn render_text(rows: &[MethodRow]) -> String {
    let mut cells: Vec<[String; 6]> = vec![[
        "method".into(),
        "runs".into(),
        "LV".into(),
        "MYO".into(),
        "RV".into(),
        "avg".into(),
    ]];
    for r in rows {
        cells.push([
            r.method.clone(),
            r.runs.len().to_string(),
            r.cell(0),
            r.cell(1),
            r.cell(2),
            r.cell(3),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Writes `report.csv` and `report.txt` into `out`.
pub fn write_report(rows: &[MethodRow], out: &Path) -> Result<()> {
    let path = out.join("report.csv");
    let io_err = |e: String| Error::new(ErrorKind::Io, format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(e.to_string()))?;
    let mut header = vec!["method".to_string(), "runs".to_string()];
    for c in DICE_COLUMNS {
        header.extend([c.to_string(), format!("{c}_min"), format!("{c}_max")]);
    }
    w.write_record(&header).map_err(|e| io_err(e.to_string()))?;
    for r in rows {
        let mut rec = vec![r.method.clone(), r.runs.len().to_string()];
        for c in 0..4 {
            let (lo, hi) = r.range(c);
            let center = if r.runs.len() == 1 {
                r.runs[0].text[c].clone()
            } else {
                r.mean(c).to_string()
            };
            rec.extend([center, lo.to_string(), hi.to_string()]);
        }
        w.write_record(&rec).map_err(|e| io_err(e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(e.to_string()))?;
    let txt = out.join("report.txt");
    fs::write(&txt, render_text(rows))
        .map_err(|e| Error::new(ErrorKind::Io, format!("{}: {e}", txt.display())))
}
