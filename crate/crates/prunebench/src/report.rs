//! Rendering of results files: per-experiment mean±std tables and
//! plot-ready curve CSV.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics;

#[derive(Clone, Debug, Default)]
struct ExperimentRows {
    finals: Vec<f64>,
    trainabilities: Vec<f64>,
    total_epochs: Option<u64>,
    total_macs: Option<u128>,
}

fn parse_kv(field: &str, key: &str) -> Result<f64> {
    field
        .strip_prefix(&format!("{key}="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Metric(format!("malformed summary field `{field}`")))
}

/// Per-experiment summary table from an append-only results file:
/// one line per manifest hash with final accuracy and trainability, both as
/// sample mean ± sample (n−1) std over seeds.
pub fn render_report(results: &str) -> Result<String> {
    let mut experiments: BTreeMap<String, ExperimentRows> = BTreeMap::new();
    for line in results.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() >= 7 && cols[2] == "SUMMARY" {
            let e = experiments.entry(cols[0].to_string()).or_default();
            e.finals.push(parse_kv(cols[3], "final_acc")?);
            e.trainabilities.push(parse_kv(cols[4], "T")?);
            e.total_epochs = Some(parse_kv(cols[5], "total_epochs")? as u64);
            e.total_macs = cols[6]
                .strip_prefix("total_macs=")
                .and_then(|v| v.parse().ok());
        }
    }
    let mut out = String::from("manifest\tn\tfinal_acc\tT\ttotal_epochs\ttotal_macs\n");
    for (hash, rows) in &experiments {
        let final_s = metrics::aggregate(&rows.finals)?;
        let t_s = metrics::aggregate(&rows.trainabilities)?;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            &hash[..12.min(hash.len())],
            final_s.n,
            final_s.render(),
            t_s.render(),
            rows.total_epochs.unwrap_or(0),
            rows.total_macs.unwrap_or(0),
        ));
    }
    Ok(out)
}

/// Curve data for external plotting: epoch, phase, lr, accuracy per seed,
/// with a marker column flagging epochs where the LR changed.
pub fn curves_csv(results: &str, manifest_hash: &str) -> Result<String> {
    let mut out = String::from("seed,phase,epoch,lr,test_acc,lr_changed\n");
    let mut last_lr: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut any = false;
    for line in results.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() == 6 && cols[0].starts_with(manifest_hash) && cols[2] != "SUMMARY" {
            any = true;
            let lr: f64 = cols[4]
                .parse()
                .map_err(|_| Error::Metric(format!("bad lr field `{}`", cols[4])))?;
            let key = (cols[1].to_string(), cols[3].to_string());
            let changed = last_lr.get(&key).map(|&p| p != lr).unwrap_or(false);
            last_lr.insert(key, lr);
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cols[1],
                cols[3],
                cols[2],
                cols[4],
                cols[5],
                if changed { 1 } else { 0 }
            ));
        }
    }
    if !any {
        return Err(Error::Metric(format!(
            "no rows found for manifest `{manifest_hash}`"
        )));
    }
    Ok(out)
}
