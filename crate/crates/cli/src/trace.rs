//! Trace CSV and summary JSON emission.
//!
//! Column schema (stable): t,y,y_wom,u,phi,U,g,I,d,reward,attack_active.
//! Detector fields are empty on unprocessed fast steps. The first line is a
//! `# config_hash=...` provenance comment.

use std::io::Write;

use dwmlab_core::env::Trace;
use serde::{Deserialize, Serialize};

use crate::CliResult;

pub const TRACE_HEADER: &str = "t,y,y_wom,u,phi,U,g,I,d,reward,attack_active";

/// Render one episode trace as CSV text.
pub fn trace_csv(trace: &Trace, config_hash: &str, replication: usize) -> String {
    let mut out = String::with_capacity(trace.len() * 64 + 128);
    out.push_str(&format!("# config_hash={config_hash} replication={replication}\n"));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for i in 0..trace.len() {
        let processed = trace.processed[i];
        let opt = |v: f64| if processed { format!("{v}") } else { String::new() };
        let opt_flag = |v: bool| if processed { (v as u8).to_string() } else { String::new() };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            trace.t[i],
            trace.y[i],
            trace.y_wom[i],
            trace.u[i],
            trace.phi[i],
            trace.u_cov[i],
            opt(trace.g[i]),
            opt_flag(trace.alarm[i]),
            opt(trace.d[i]),
            opt(trace.reward[i]),
            trace.attack_active[i] as u8,
        ));
    }
    out
}

pub fn write_text(path: &std::path::Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// A parsed trace row; used by the schema-check tests and `identify`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub y: f64,
    pub y_wom: f64,
    pub u: f64,
    pub phi: f64,
    pub u_cov: f64,
    pub g: Option<f64>,
    pub alarm: Option<bool>,
    pub d: Option<f64>,
    pub reward: Option<f64>,
    pub attack_active: bool,
}

/// Parse a trace CSV produced by `trace_csv`.
pub fn parse_trace_csv(text: &str) -> CliResult<Vec<TraceRow>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (ln, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != TRACE_HEADER {
                return Err(crate::CliError::Runtime(format!(
                    "line {}: unexpected trace header `{line}`",
                    ln + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(crate::CliError::Runtime(format!(
                "line {}: expected 11 fields, found {}",
                ln + 1,
                fields.len()
            )));
        }
        let req = |s: &str| -> CliResult<f64> {
            s.parse::<f64>()
                .map_err(|e| crate::CliError::Runtime(format!("line {}: {e}", ln + 1)))
        };
        let opt = |s: &str| -> CliResult<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                req(s).map(Some)
            }
        };
        rows.push(TraceRow {
            t: fields[0]
                .parse()
                .map_err(|e| crate::CliError::Runtime(format!("line {}: {e}", ln + 1)))?,
            y: req(fields[1])?,
            y_wom: req(fields[2])?,
            u: req(fields[3])?,
            phi: req(fields[4])?,
            u_cov: req(fields[5])?,
            g: opt(fields[6])?,
            alarm: opt(fields[7])?.map(|v| v != 0.0),
            d: opt(fields[8])?,
            reward: opt(fields[9])?,
            attack_active: req(fields[10])? != 0.0,
        });
    }
    if !saw_header {
        return Err(crate::CliError::Runtime("trace file has no header".into()));
    }
    Ok(rows)
}

/// Per-replication summary entry in the summary JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: usize,
    pub epochs: usize,
    pub fast_steps: usize,
    pub energy: f64,
    pub degradation: f64,
    pub alarms: usize,
    pub detection_delay: Option<usize>,
    pub final_belief: f64,
    pub mean_belief_after_onset: Option<f64>,
    pub total_reward: f64,
    pub onset: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArlSummary {
    pub mean: Option<f64>,
    pub censored: usize,
    pub n: usize,
}

impl From<dwmlab_core::metrics::ArlResult> for ArlSummary {
    fn from(r: dwmlab_core::metrics::ArlResult) -> Self {
        ArlSummary { mean: r.mean, censored: r.censored, n: r.n }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummaryFile {
    pub config_hash: String,
    pub command: String,
    pub replications: Vec<ReplicationSummary>,
    pub arl1: ArlSummary,
    pub energy_mean: f64,
    pub degradation_mean: f64,
}
