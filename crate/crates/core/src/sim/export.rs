use std::collections::BTreeMap;

use serde_json::json;

use super::{BatchAggregate, RunSeries, SimError};

/// `run,step,component,value`, one row per sample.
pub fn batch_csv(batch: &[RunSeries]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "step", "component", "value"])
        .unwrap();
    for r in batch {
        for (component, values) in &r.series {
            for (step, v) in values.iter().enumerate() {
                w.write_record([
                    &r.run_index.to_string(),
                    &step.to_string(),
                    component,
                    &v.to_string(),
                ])
                .unwrap();
            }
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Inverse of [`batch_csv`]; the seed is not part of the file and is taken
/// from the caller.
pub fn parse_batch_csv(text: &str, seed: u64) -> Result<Vec<RunSeries>, SimError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut runs: BTreeMap<u32, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Csv(e.to_string()))?;
        let bad = || SimError::Csv(format!("row {}: malformed", line + 2));
        let run: u32 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let step: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let component = rec.get(2).ok_or_else(bad)?.to_string();
        let value: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let col = runs.entry(run).or_default().entry(component).or_default();
        if col.len() != step {
            return Err(bad());
        }
        col.push(value);
    }
    Ok(runs
        .into_iter()
        .map(|(run_index, series)| RunSeries {
            run_index,
            seed,
            series,
            clamped: false,
        })
        .collect())
}

/// `run,summary` rows.
pub fn aggregate_csv(agg: &BatchAggregate) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "summary"]).unwrap();
    for (i, s) in agg.summaries.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn aggregate_sidecar(agg: &BatchAggregate) -> serde_json::Value {
    json!({
        "target": agg.target,
        "bins": agg.bins,
        "peak": agg.peak,
        "mean": agg.mean,
    })
}
