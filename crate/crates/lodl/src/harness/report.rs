//! Plain-text renderings of harness output. The CSVs hold quality numbers
//! only; wall times and oracle counts go to the JSON sidecar so reruns of
//! the same config produce byte-identical CSV files.

use std::collections::HashMap;
use std::fmt::Write;

use super::{mean_std, AblationCell, HarnessError, Method, NeighborhoodReport, RunRecord, TimingRecord};

/// One row per grid cell, in run order.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("domain,method,seed,init,normalized_dq,raw_dq\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6}",
            r.domain, r.method, r.seed, r.init, r.normalized_dq, r.raw_dq
        )
        .unwrap();
    }
    out
}

/// Results-table view: normalized decision quality per domain and method,
/// mean and sample standard deviation over all seeds and initializations.
pub fn summary_table(records: &[RunRecord]) -> String {
    let mut order: Vec<(String, Method)> = Vec::new();
    let mut groups: HashMap<(String, Method), Vec<f64>> = HashMap::new();
    for r in records {
        let key = (r.domain.clone(), r.method);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.normalized_dq);
    }
    let mut out = format!(
        "{:<10} {:<22} {:>10} {:>10} {:>6}\n",
        "domain", "method", "dq mean", "dq std", "cells"
    );
    for key in &order {
        let values = &groups[key];
        let (mean, std) = mean_std(values);
        writeln!(
            out,
            "{:<10} {:<22} {:>10.4} {:>10.4} {:>6}",
            key.0,
            key.1.name(),
            mean,
            std,
            values.len()
        )
        .unwrap();
    }
    out
}

/// One row per loss family with its two fit-error probes and its decision
/// quality; the correlations live in the JSON report.
pub fn neighborhood_csv(report: &NeighborhoodReport) -> String {
    let mut out = String::from("domain,family,mae_gaussian,mae_empirical,normalized_dq\n");
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            report.domain,
            row.family.name(),
            row.mae_gaussian,
            row.mae_empirical,
            row.normalized_dq
        )
        .unwrap();
    }
    out
}

/// One row per (strategy, k, family) cell.
pub fn ablation_csv(domain: &str, cells: &[AblationCell]) -> String {
    let mut out = String::from("domain,strategy,k,family,mean_dq,std_dq,n_seeds\n");
    for cell in cells {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{}",
            domain,
            cell.strategy.name(),
            cell.k,
            cell.family.name(),
            cell.mean_dq,
            cell.std_dq,
            cell.per_seed.len()
        )
        .unwrap();
    }
    out
}

/// Timing sidecar, pretty-printed.
pub fn timings_json(timings: &[TimingRecord]) -> Result<String, HarnessError> {
    let mut out = serde_json::to_string_pretty(timings)?;
    out.push('\n');
    Ok(out)
}
