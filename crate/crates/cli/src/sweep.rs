use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde_json::{json, Value};
use smpd_core::report::json_hash;
use smpd_core::Error;

use crate::config::{apply_override, is_numeric_key, Experiment};
use crate::output::{col, write_table, Cell, Table};

pub struct SweepReport {
    pub index: PathBuf,
    pub failed: usize,
}

struct Point {
    value: f64,
    result: std::result::Result<(String, serde_json::Map<String, Value>), String>,
}

/// Runs `experiment` once per value of `param` and writes a merged index.
/// Point failures are recorded in the index and do not stop the sweep.
pub fn sweep(experiment: Experiment, device: &Value, options: &Value, param: &str, values: &[String], out: &Path) -> Result<SweepReport> {
    let values: Vec<&str> = values.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if values.is_empty() {
        bail!(Error::Config("sweep needs at least one value".into()));
    }
    if !is_numeric_key(device, options, param) {
        bail!(Error::Config(format!("`{param}` is not a numeric config key")));
    }
    let parsed = values
        .iter()
        .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("sweep value {v:?} is not a number"))))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    let base = json_hash(&json!({
        "experiment": experiment.name(),
        "device": device,
        "options": options,
        "param": param,
        "values": parsed,
    }));
    let dir = out.join(format!("{}_sweep_{base}", experiment.name()));
    let points: Vec<Point> = values
        .par_iter()
        .zip(&parsed)
        .enumerate()
        .map(|(k, (raw, &value))| {
            let run = || -> Result<(String, serde_json::Map<String, Value>)> {
                let (mut d, mut o) = (device.clone(), options.clone());
                apply_override(&mut d, &mut o, &format!("{param}={raw}"))?;
                let (r, outcome, _) = crate::run_once(experiment, d, o, &dir.join(format!("point_{k:03}")))?;
                Ok((r.hash, outcome.summary))
            };
            Point { value, result: run().map_err(|e| format!("{e:#}")) }
        })
        .collect();

    let mut keys = BTreeSet::new();
    for p in &points {
        if let Ok((_, s)) = &p.result {
            keys.extend(s.iter().filter(|(_, v)| v.is_number() || v.is_boolean() || v.is_null()).map(|(k, _)| k.clone()));
        }
    }
    let mut cols = vec![
        col("point", "", "point index"),
        col(param, "", "swept value"),
        col("status", "", "ok or failed"),
        col("point_config_hash", "", "hash of the point's resolved config"),
        col("error", "", "failure message"),
    ];
    cols.extend(keys.iter().map(|k| col(k, "", "summary scalar of the point")));
    let mut table = Table::new(None, cols);
    let mut failed = 0;
    for (k, p) in points.iter().enumerate() {
        let mut row: Vec<Cell> = vec![k.into(), p.value.into()];
        match &p.result {
            Ok((hash, s)) => {
                row.extend([Cell::from("ok"), hash.clone().into(), "".into()]);
                row.extend(keys.iter().map(|key| match s.get(key) {
                    Some(Value::Number(n)) => Cell::F(n.as_f64().unwrap_or(f64::NAN)),
                    Some(Value::Bool(b)) => Cell::S(b.to_string()),
                    _ => Cell::S(String::new()),
                }));
            }
            Err(e) => {
                failed += 1;
                log::error!("sweep point {k} ({param} = {}) failed: {e}", p.value);
                row.extend([Cell::from("failed"), "".into(), e.replace('\n', " ").into()]);
                row.extend(keys.iter().map(|_| Cell::S(String::new())));
            }
        }
        table.push(row);
    }
    let index = write_table(out, &format!("{}_sweep_{base}", experiment.name()), &base, &table)?;
    Ok(SweepReport { index, failed })
}
