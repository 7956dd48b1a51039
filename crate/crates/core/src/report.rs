//! Result files: the per-round metrics CSV and the JSON run summary.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::orchestrator::{total_simulated_duration, RoundMetrics};

pub const METRICS_HEADER: &str =
    "round,participants,accuracy,mean_loss,bytes_up,bytes_down,sim_duration_s,wall_clock_s";

/// One row per round. `participants` is the participant count. Wall-clock
/// time is written as `0` unless `include_wall_clock` is set, which keeps
/// the file byte-identical across repeated runs.
pub fn metrics_csv(metrics: &[RoundMetrics], include_wall_clock: bool) -> String {
    let mut out = String::with_capacity(64 * (metrics.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let wall = if include_wall_clock { m.wall_clock_s } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.round_index,
            m.participants.len(),
            m.global_accuracy,
            m.mean_client_loss,
            m.bytes_up,
            m.bytes_down,
            m.simulated_duration_s,
            wall
        );
    }
    out
}

/// Resolved config, provenance notes and the full metrics series.
pub fn summary_json(config: &ExperimentConfig, metrics: &[RoundMetrics]) -> Value {
    json!({
        "config": config,
        "config_text": config.to_text(),
        "notes": {
            "evaluation_pool": format!(
                "union of per-client hold-outs ({}% of each client's examples, seeded)",
                config.holdout_fraction * 100.0
            ),
            "non_iid_construction": "label-sorted shards that never cross a class boundary, dealt classes_per_client per client",
            "local_optimizer": "mini-batch SGD (proximal term added for fedprox)",
            "fedadam": "no bias correction; pseudo-gradient = weighted mean - global",
            "participants_per_round": "max(1, round_half_even(fraction * num_clients))",
            "bytes_per_value": crate::orchestrator::BYTES_PER_VALUE,
        },
        "final_accuracy": metrics.last().map(|m| m.global_accuracy),
        "total_sim_duration_s": total_simulated_duration(metrics),
        "total_wall_clock_s": metrics.iter().map(|m| m.wall_clock_s).sum::<f64>(),
        "rounds": metrics,
    })
}
