//! Plot-ready output files: flow records, epoch metrics, price-distribution
//! dumps, convergence traces, per-port stats, and a JSON summary. Identical
//! runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::engine::SchedulerMode;
use crate::host::FlowRecord;
use crate::workload::FlowSpec;

use super::{RunError, RunOutcome};

pub fn mode_name(mode: SchedulerMode) -> &'static str {
    match mode {
        SchedulerMode::Market => "market",
        SchedulerMode::IdealSrpt => "ideal_srpt",
        SchedulerMode::FairShare => "fair_share",
    }
}

pub fn flows_csv(records: &[FlowRecord]) -> String {
    let mut s = String::from(FlowRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

pub fn workload_csv(flows: &[FlowSpec]) -> String {
    let mut s = String::from(FlowSpec::CSV_HEADER);
    s.push('\n');
    for f in flows {
        s.push_str(&f.to_csv_row());
        s.push('\n');
    }
    s
}

/// Writes every configured artifact of a finished run into `dir`.
pub fn emit_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &RunOutcome,
    workloads: Option<&[FlowSpec]>,
) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;

    let mut flows = String::from(FlowRecord::CSV_HEADER);
    flows.push('\n');
    for e in &outcome.epochs {
        for r in &e.records {
            flows.push_str(&r.to_csv_row());
            flows.push('\n');
        }
    }
    fs::write(dir.join("flows.csv"), flows)?;

    let mut epochs = String::from(super::EpochMetrics::CSV_HEADER);
    epochs.push('\n');
    for m in &outcome.metrics {
        epochs.push_str(&m.to_csv_row());
        epochs.push('\n');
    }
    fs::write(dir.join("epochs.csv"), epochs)?;

    let mut conv = String::from("iteration,wasserstein,contraction,mean_price\n");
    for (i, (w, m)) in outcome
        .convergence
        .distances
        .iter()
        .zip(outcome.convergence.mean_price.iter())
        .enumerate()
    {
        let ratio = if i == 0 {
            String::new()
        } else {
            outcome
                .convergence
                .contraction
                .get(i - 1)
                .map(|c| format!("{c:.6}"))
                .unwrap_or_default()
        };
        let _ = writeln!(conv, "{i},{w:.6},{ratio},{m:.6}");
    }
    fs::write(dir.join("convergence.csv"), conv)?;

    if cfg.output.dump_prices {
        for (i, e) in outcome.epochs.iter().enumerate() {
            let base = dir.join(format!("prices_epoch{i}.csv"));
            fs::write(&base, e.dist.to_csv())?;
            fs::write(
                dir.join(format!("prices_epoch{i}.json")),
                e.dist.sidecar_json(),
            )?;
        }
    }

    if cfg.output.dump_ports {
        let mut ports =
            String::from("run_epoch,port,epoch,k_current,clearing_price,queue_bytes,overload_count\n");
        for (i, e) in outcome.epochs.iter().enumerate() {
            for (port, row) in &e.port_rows {
                let _ = writeln!(
                    ports,
                    "{},{},{},{},{},{},{}",
                    i,
                    port,
                    row.epoch,
                    row.k_current,
                    crate::protocol::units_to_dollars(row.clearing_price_units),
                    row.queue_bytes,
                    row.overload_count
                );
            }
        }
        fs::write(dir.join("ports.csv"), ports)?;
    }

    if cfg.output.dump_workload {
        if let Some(flows) = workloads {
            fs::write(dir.join("workload.csv"), workload_csv(flows))?;
        }
    }

    let last = outcome.metrics.last();
    let summary = json!({
        "mode": mode_name(outcome.mode),
        "seed": cfg.seed,
        "epochs": outcome.metrics.len(),
        "workload_digests": outcome.digests,
        "headline": last.map(|m| json!({
            "avg_fct_us": m.avg_fct_us,
            "avg_slowdown": m.avg_slowdown,
            "latency_avg_slowdown": m.latency_avg_slowdown,
            "deadline_miss_rate": m.deadline_miss_rate,
            "avg_cct_us": m.avg_cct_us,
            "fairness_p5_bw": m.fairness_p5_bw,
            "mean_price": m.mean_price,
        })),
        "mean_price_by_epoch": outcome.convergence.mean_price,
        "wasserstein_by_epoch": outcome.convergence.distances,
        "flows_completed": outcome.epochs.iter().map(|e| e.records.len()).sum::<usize>(),
        "flows_incomplete": outcome.epochs.iter().map(|e| e.incomplete).sum::<usize>(),
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(())
}
