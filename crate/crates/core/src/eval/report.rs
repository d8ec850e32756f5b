//! Regenerate every table from raw JSONL records; no models needed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::aggregate::{aggregate, csv_bytes, speedup_summary, write_csv, AggregateRow};
use super::io::read_records;
use super::svg::pareto_svg;
use crate::env::EnvId;
use crate::error::{Error, Result};
use crate::nn::checkpoint::write_atomic;

/// Per-environment trajectory quality of two methods on matched episodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QualityRow {
    pub env: EnvId,
    pub method: String,
    pub jerk_mean: Option<f64>,
    pub monotonicity_fraction: Option<f64>,
}

pub fn quality_rows(rows: &[AggregateRow]) -> Vec<QualityRow> {
    rows.iter()
        .map(|r| QualityRow { env: r.env, method: r.method.clone(), jerk_mean: r.jerk_mean, monotonicity_fraction: r.monotonicity_fraction })
        .collect()
}

/// Success rate pivoted to one row per environment and one column per
/// `method/variant`.
pub fn grid_csv(rows: &[AggregateRow]) -> Result<Vec<u8>> {
    let mut cols: Vec<String> = Vec::new();
    for r in rows {
        let c = column(r);
        if !cols.contains(&c) {
            cols.push(c);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["env".to_string()];
    header.extend(cols.iter().cloned());
    w.write_record(&header)?;
    for env in EnvId::ALL {
        if !rows.iter().any(|r| r.env == env) {
            continue;
        }
        let mut rec = vec![env.name().to_string()];
        for c in &cols {
            rec.push(rows.iter().find(|r| r.env == env && column(r) == *c).map(|r| format!("{:.1}", r.success_rate)).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn column(r: &AggregateRow) -> String {
    if r.variant.is_empty() {
        r.method.clone()
    } else {
        format!("{}/{}", r.method, r.variant)
    }
}

/// Record files in `dir` (excluding timing sidecars), sorted by name.
pub fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir.to_path_buf()));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".jsonl") && !name.ends_with(".timing.jsonl")
        })
        .collect();
    out.sort();
    Ok(out)
}

/// For every `<name>.jsonl` in `dir`: `<name>.csv` (aggregate rows) and
/// `<name>.grid.csv` (success pivot). Headline-like files (both `gc_idm` and
/// a `cem` baseline) also get `<name>.speedup.csv` and `<name>.quality.csv`;
/// files with a CEM sweep get `pareto.svg`.
pub fn regenerate(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for path in record_files(dir)? {
        let records = read_records(&path)?;
        let rows = aggregate(&records);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("records").to_string();
        let out = |suffix: &str| dir.join(format!("{stem}{suffix}"));
        write_csv(&out(".csv"), &rows)?;
        write_atomic(&out(".grid.csv"), &grid_csv(&rows)?)?;
        written.extend([out(".csv"), out(".grid.csv")]);
        let has = |m: &str| rows.iter().any(|r| r.method == m);
        if has("gc_idm") && has("cem") {
            let timed = rows.iter().all(|r| r.ms_per_plan.is_some());
            if timed {
                write_atomic(&out(".speedup.csv"), &csv_bytes(&speedup_summary(&rows, "gc_idm", "cem")?)?)?;
                written.push(out(".speedup.csv"));
            }
            write_csv(&out(".quality.csv"), &quality_rows(&rows))?;
            written.push(out(".quality.csv"));
            if rows.iter().filter(|r| r.method == "cem").map(|r| &r.variant).collect::<std::collections::BTreeSet<_>>().len() > 1 {
                write_atomic(&dir.join("pareto.svg"), pareto_svg(&rows, "gc_idm", "cem").as_bytes())?;
                written.push(dir.join("pareto.svg"));
            }
        }
    }
    Ok(written)
}
