//! The experiment recipes behind each subcommand.

use std::path::{Path, PathBuf};

use dwmlab_core::env::{fit_arx, fit_gmm, EnvSpec};
use dwmlab_core::metrics;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{
    build_fixed_scenario, build_spec, ArmChoice, AttackMode, Environment, PolicyChoice, RunConfig,
    SegmentFileConfig, GmmComponentConfig, TABLE_V_VARIANCES,
};
use crate::hash::config_hash;
use crate::runner::{run_replications, PolicySource, ReplicationOutcome};
use crate::trace::{trace_csv, write_text, ArlSummary, RunSummaryFile};
use crate::train::{hyper_from_config, train};
use crate::{CliError, CliResult};

/// Copy of the config with purely environmental fields removed, so the
/// provenance hash depends only on what changes results.
pub fn config_for_hash(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.output_dir = None;
    c.workers = 0;
    c
}

pub fn resolved_hash(cfg: &RunConfig) -> String {
    config_hash(&config_for_hash(cfg))
}

fn aggregate_summary(
    cfg: &RunConfig,
    command: &str,
    outcomes: &[ReplicationOutcome],
) -> RunSummaryFile {
    let delays: Vec<Option<usize>> = outcomes
        .iter()
        .map(|o| o.summary.onset.and(o.summary.detection_delay))
        .collect();
    let arl1: ArlSummary = metrics::arl1(&delays).into();
    let n = outcomes.len().max(1) as f64;
    RunSummaryFile {
        config_hash: resolved_hash(cfg),
        command: command.to_string(),
        replications: outcomes.iter().map(|o| o.summary.clone()).collect(),
        arl1,
        energy_mean: outcomes.iter().map(|o| o.summary.energy).sum::<f64>() / n,
        degradation_mean: outcomes.iter().map(|o| o.summary.degradation).sum::<f64>() / n,
    }
}

fn write_summary_json(path: &Path, summary: &RunSummaryFile) -> CliResult<()> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::Runtime(format!("summary encode: {e}")))?;
    write_text(path, &json)
}

// ---------------------------------------------------------------------------
// simulate / evaluate
// ---------------------------------------------------------------------------

/// Run seeded replications of the configured scenario; write per-episode
/// trace CSVs and a summary file.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> CliResult<RunSummaryFile> {
    let spec = build_spec(cfg)?;
    let source = PolicySource::from_choice(&cfg.watermark.policy)?;
    let outcomes = run_replications(&spec, cfg, &source, cfg.replications)?;
    let hash = resolved_hash(cfg);
    for o in &outcomes {
        let path = out_dir.join(format!("trace_rep{:04}.csv", o.summary.replication));
        write_text(&path, &trace_csv(&o.result.trace, &hash, o.summary.replication))?;
    }
    let summary = aggregate_summary(cfg, "simulate", &outcomes);
    write_summary_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Evaluate a frozen checkpoint on the configured scenario.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    out_dir: &Path,
    checkpoint: Option<&Path>,
) -> CliResult<RunSummaryFile> {
    let mut cfg = cfg.clone();
    if let Some(path) = checkpoint {
        cfg.watermark.policy = PolicyChoice::Ddpg(path.to_string_lossy().into_owned());
    }
    if !matches!(cfg.watermark.policy, PolicyChoice::Ddpg(_)) {
        return Err(CliError::Config(
            "evaluate needs a trained checkpoint (--checkpoint or watermark.policy.ddpg)".into(),
        ));
    }
    let spec = build_spec(&cfg)?;
    let source = PolicySource::from_choice(&cfg.watermark.policy)?;
    let outcomes = run_replications(&spec, &cfg, &source, cfg.replications)?;
    let summary = aggregate_summary(&cfg, "evaluate", &outcomes);
    write_summary_json(&out_dir.join("evaluate_summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub episodes: usize,
    pub final_checkpoint: String,
    pub first20_mean_return: f64,
    pub last20_mean_return: f64,
}

/// DDPG training; writes the learning curve, periodic checkpoints, and the
/// final checkpoint.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> CliResult<TrainReport> {
    let spec = build_spec(cfg)?;
    if cfg.attack.mode == AttackMode::None {
        eprintln!(
            "note: training with attack.mode=none; the confidence term never sees an attack"
        );
    }
    let hash = resolved_hash(cfg);
    let state_dim = spec.state_dim() + 1;
    let hyper = hyper_from_config(cfg, spec.u_max);
    let streams = dwmlab_core::rng::Streams::new(cfg.seed);
    let mut init_rng = streams.stream("agent-init", 0);

    let (agent, start_episode) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let agent = ck.restore(hyper, &mut init_rng)?;
            (agent, ck.episodes_trained)
        }
        None => (dwmlab_core::rl::AgentBundle::new(state_dim, hyper, &mut init_rng), 0),
    };

    let episodes = cfg.training_episodes();
    let every = cfg.training.checkpoint_every.max(1);
    let hash_for_hook = hash.clone();
    let out_for_hook = out_dir.to_path_buf();
    let mut hook = move |episode: usize, agent: &dwmlab_core::rl::AgentBundle| -> CliResult<()> {
        if (episode + 1) % every == 0 {
            let ck = Checkpoint::of(agent, state_dim, &hash_for_hook, episode + 1);
            ck.save(&out_for_hook.join(format!("checkpoint_ep{:04}.json", episode + 1)))?;
        }
        Ok(())
    };
    let out = train(&spec, cfg, episodes, start_episode, agent, &mut hook)?;

    // learning curve
    let mut curve = format!("# config_hash={hash}\n");
    curve.push_str("episode,steps,return,ou_sigma,critic1_loss,critic2_loss,actor_value,attacked\n");
    for e in &out.log {
        curve.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.episode,
            e.steps,
            e.total_reward,
            e.ou_sigma,
            e.critic1_loss,
            e.critic2_loss,
            e.actor_value,
            e.attacked as u8
        ));
    }
    write_text(&out_dir.join("learning_curve.csv"), &curve)?;

    let final_path = out_dir.join("checkpoint_final.json");
    Checkpoint::of(&out.agent, state_dim, &hash, episodes).save(&final_path)?;

    let takes = |range: &[crate::train::EpisodeLog]| {
        if range.is_empty() {
            0.0
        } else {
            range.iter().map(|e| e.total_reward).sum::<f64>() / range.len() as f64
        }
    };
    let k = out.log.len().min(20);
    let report = TrainReport {
        config_hash: hash,
        episodes,
        final_checkpoint: final_path.to_string_lossy().into_owned(),
        first20_mean_return: takes(&out.log[..k]),
        last20_mean_return: takes(&out.log[out.log.len() - k..]),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("report encode: {e}")))?;
    write_text(&out_dir.join("train_report.json"), &json)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub variance: Option<f64>,
    pub energy_mean: f64,
    pub energy_se: f64,
    pub degradation_mean: f64,
    pub degradation_se: f64,
    pub arl1: ArlSummary,
    pub post_onset_alarm_rate: f64,
    pub mean_belief_after_onset: f64,
    pub inter_alarm_mean: Option<f64>,
    pub inter_alarm_median: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config_hash: String,
    pub arms: Vec<ArmReport>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn arm_label(arm: &ArmChoice) -> String {
    match arm {
        ArmChoice::None => "none".into(),
        ArmChoice::Low => "low".into(),
        ArmChoice::High => "high".into(),
        ArmChoice::TableV => "table_v".into(),
        ArmChoice::Ddpg => "ddpg".into(),
        ArmChoice::Constant(u) => format!("constant_{u}"),
    }
}

fn default_arms(env: Environment) -> Vec<ArmChoice> {
    match env {
        Environment::MotorTwin => vec![
            ArmChoice::None,
            ArmChoice::Low,
            ArmChoice::High,
            ArmChoice::TableV,
            ArmChoice::Ddpg,
        ],
        _ => vec![ArmChoice::None, ArmChoice::Low, ArmChoice::High, ArmChoice::Ddpg],
    }
}

/// Run the baseline-comparison arms under common random numbers: a nominal
/// phase for energy and control degradation, an attacked phase for detection
/// delay and inter-alarm behavior.
pub fn cmd_benchmark(
    cfg: &RunConfig,
    out_dir: &Path,
    checkpoint: Option<&Path>,
) -> CliResult<BenchmarkReport> {
    let spec = build_spec(cfg)?;
    let arms_cfg = cfg.benchmark.arms.clone().unwrap_or_else(|| default_arms(cfg.environment));
    let low = cfg.benchmark.low_variance.unwrap_or(1e-9);
    let high = cfg.benchmark.high_variance.unwrap_or(2.5e-3);

    // expand arm choices into (label, policy) pairs
    let mut arms: Vec<(String, PolicyChoice)> = Vec::new();
    for arm in &arms_cfg {
        match arm {
            ArmChoice::None => arms.push(("none".into(), PolicyChoice::None)),
            ArmChoice::Low => arms.push(("low".into(), PolicyChoice::Constant(low))),
            ArmChoice::High => arms.push(("high".into(), PolicyChoice::Constant(high))),
            ArmChoice::Constant(u) => {
                arms.push((arm_label(arm), PolicyChoice::Constant(*u)));
            }
            ArmChoice::TableV => {
                for u in TABLE_V_VARIANCES {
                    arms.push((format!("table_v_{u}"), PolicyChoice::Constant(u)));
                }
            }
            ArmChoice::Ddpg => {
                let path = checkpoint
                    .map(|p| p.to_string_lossy().into_owned())
                    .or_else(|| cfg.benchmark.checkpoint.clone())
                    .or_else(|| match &cfg.watermark.policy {
                        PolicyChoice::Ddpg(p) => Some(p.clone()),
                        _ => None,
                    })
                    .ok_or_else(|| {
                        CliError::Config(
                            "benchmark ddpg arm needs a trained checkpoint \
                             (--checkpoint or benchmark.checkpoint)"
                                .into(),
                        )
                    })?;
                arms.push(("ddpg".into(), PolicyChoice::Ddpg(path)));
            }
        }
    }

    let hash = resolved_hash(cfg);
    let mut reports = Vec::new();
    let mut gaps_csv = format!("# config_hash={hash}\narm,replication,gap\n");

    for (label, policy) in &arms {
        let source = PolicySource::from_choice(policy)?;
        // nominal phase
        let mut nominal_cfg = cfg.clone();
        nominal_cfg.attack.mode = AttackMode::None;
        nominal_cfg.watermark.policy = policy.clone();
        let nominal = run_replications(&spec, &nominal_cfg, &source, cfg.replications)?;
        // attacked phase (the configured fixed scenario)
        let mut attacked_cfg = cfg.clone();
        attacked_cfg.attack.mode = AttackMode::Fixed;
        attacked_cfg.watermark.policy = policy.clone();
        let scenario = build_fixed_scenario(&attacked_cfg, &spec)?;
        let attacked = run_replications(&spec, &attacked_cfg, &source, cfg.replications)?;

        let energies: Vec<f64> = nominal.iter().map(|o| o.summary.energy).collect();
        let degs: Vec<f64> = nominal.iter().map(|o| o.summary.degradation).collect();
        let (energy_mean, energy_se) = mean_se(&energies);
        let (deg_mean, deg_se) = mean_se(&degs);

        let delays: Vec<Option<usize>> =
            attacked.iter().map(|o| o.summary.detection_delay).collect();
        let arl1: ArlSummary = metrics::arl1(&delays).into();

        let mut post_alarms = 0usize;
        let mut post_steps = 0usize;
        let mut beliefs = Vec::new();
        let mut all_gaps: Vec<usize> = Vec::new();
        for o in &attacked {
            let tr = &o.result.trace;
            for i in 0..tr.len() {
                if tr.processed[i] && tr.t[i] > scenario.onset {
                    post_steps += 1;
                    post_alarms += tr.alarm[i] as usize;
                }
            }
            if let Some(b) = o.summary.mean_belief_after_onset {
                beliefs.push(b);
            }
            let s = metrics::summarize(tr, Some(scenario.onset));
            for g in &s.inter_alarm {
                gaps_csv.push_str(&format!("{label},{},{g}\n", o.summary.replication));
                all_gaps.push(*g);
            }
        }
        all_gaps.sort_unstable();
        let inter_alarm_mean = (!all_gaps.is_empty())
            .then(|| all_gaps.iter().sum::<usize>() as f64 / all_gaps.len() as f64);
        let inter_alarm_median =
            (!all_gaps.is_empty()).then(|| all_gaps[all_gaps.len() / 2] as f64);
        let (belief_mean, _) = mean_se(&beliefs);

        let variance = match policy {
            PolicyChoice::Constant(u) => Some(*u),
            PolicyChoice::None => Some(0.0),
            PolicyChoice::Ddpg(_) => None,
        };
        reports.push(ArmReport {
            arm: label.clone(),
            variance,
            energy_mean,
            energy_se,
            degradation_mean: deg_mean,
            degradation_se: deg_se,
            arl1,
            post_onset_alarm_rate: if post_steps > 0 {
                post_alarms as f64 / post_steps as f64
            } else {
                f64::NAN
            },
            mean_belief_after_onset: belief_mean,
            inter_alarm_mean,
            inter_alarm_median,
        });
    }

    // summary CSV
    let mut csv = format!("# config_hash={hash}\n");
    csv.push_str(
        "arm,variance,energy_mean,energy_se,degradation_mean,degradation_se,\
         arl1_mean,arl1_censored,post_onset_alarm_rate,mean_belief_after_onset,\
         inter_alarm_mean,inter_alarm_median\n",
    );
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.arm,
            fmt_opt(r.variance),
            r.energy_mean,
            r.energy_se,
            r.degradation_mean,
            r.degradation_se,
            fmt_opt(r.arl1.mean),
            r.arl1.censored,
            r.post_onset_alarm_rate,
            r.mean_belief_after_onset,
            fmt_opt(r.inter_alarm_mean),
            fmt_opt(r.inter_alarm_median),
        ));
    }
    write_text(&out_dir.join("benchmark_summary.csv"), &csv)?;
    write_text(&out_dir.join("benchmark_inter_alarm.csv"), &gaps_csv)?;
    let report = BenchmarkReport { config_hash: hash, arms: reports };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("report encode: {e}")))?;
    write_text(&out_dir.join("benchmark_summary.json"), &json)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub rows: Vec<SweepRowFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRowFile {
    pub u: f64,
    pub detection_mean: f64,
    pub detection_se: f64,
    pub degradation_mean: f64,
    pub degradation_se: f64,
}

/// The fixed-variance trade-off sweep: mean detection belief under attack
/// and mean degradation under nominal operation, per variance.
pub fn cmd_sweep(cfg: &RunConfig, out_dir: &Path) -> CliResult<SweepReport> {
    let spec = build_spec(cfg)?;
    let variances = cfg
        .sweep
        .variances
        .clone()
        .unwrap_or_else(|| vec![1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]);
    let episodes = cfg.sweep.episodes_per_point.unwrap_or(cfg.replications);

    let mut per_u = Vec::new();
    for &u in &variances {
        let source = PolicySource::Constant(u);
        let mut nominal_cfg = cfg.clone();
        nominal_cfg.attack.mode = AttackMode::None;
        let nominal = run_replications(&spec, &nominal_cfg, &source, episodes)?;
        let mut attacked_cfg = cfg.clone();
        attacked_cfg.attack.mode = AttackMode::Fixed;
        let attacked = run_replications(&spec, &attacked_cfg, &source, episodes)?;
        let detection: Vec<f64> =
            attacked.iter().filter_map(|o| o.summary.mean_belief_after_onset).collect();
        let degradation: Vec<f64> = nominal.iter().map(|o| o.summary.degradation).collect();
        per_u.push((u, detection, degradation));
    }
    let rows = metrics::sweep_rows(&per_u);

    let hash = resolved_hash(cfg);
    let mut csv = format!("# config_hash={hash}\n");
    csv.push_str("u,detection_mean,detection_se,degradation_mean,degradation_se\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.u, r.detection_mean, r.detection_se, r.degradation_mean, r.degradation_se
        ));
    }
    write_text(&out_dir.join("sweep.csv"), &csv)?;
    let report = SweepReport {
        config_hash: hash,
        rows: rows
            .iter()
            .map(|r| SweepRowFile {
                u: r.u,
                detection_mean: r.detection_mean,
                detection_se: r.detection_se,
                degradation_mean: r.degradation_mean,
                degradation_se: r.degradation_se,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("report encode: {e}")))?;
    write_text(&out_dir.join("sweep.json"), &json)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyReport {
    /// Provenance hash over the input series and boundaries.
    pub input_hash: String,
    pub segments: Vec<SegmentFileConfig>,
}

/// Read a numeric column from a CSV file (comments and a header allowed).
fn read_csv_column(path: &Path, col: usize) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {path:?}: {e}")))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() <= col {
            return Err(CliError::Config(format!(
                "{path:?}: expected at least {} columns",
                col + 1
            )));
        }
        match fields[col].trim().parse::<f64>() {
            Ok(v) => out.push(v),
            // tolerate one header line
            Err(_) if out.is_empty() => continue,
            Err(e) => return Err(CliError::Config(format!("{path:?}: {e}"))),
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{path:?}: no numeric rows")));
    }
    Ok(out)
}

/// Fit per-segment ARX(1,1) parameters and a control mixture from recorded
/// (y, u) series; the result is a config fragment loadable as `segments`.
pub fn cmd_identify(
    y_path: &Path,
    u_path: Option<&Path>,
    boundaries: &[usize],
    out_path: &Path,
) -> CliResult<IdentifyReport> {
    let y = read_csv_column(y_path, 0)?;
    let u = match u_path {
        Some(p) => read_csv_column(p, 0)?,
        None => read_csv_column(y_path, 1)?,
    };
    if y.len() != u.len() {
        return Err(CliError::Config(format!(
            "series lengths differ: y has {}, u has {}",
            y.len(),
            u.len()
        )));
    }
    if boundaries.len() < 2 {
        return Err(CliError::Config("need at least two segment boundaries".into()));
    }
    let mut sorted = boundaries.to_vec();
    sorted.sort_unstable();
    if *sorted.last().unwrap() > y.len() {
        return Err(CliError::Config(format!(
            "segment boundary {} beyond series length {}",
            sorted.last().unwrap(),
            y.len()
        )));
    }

    let mut segments = Vec::new();
    for w in sorted.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo < 10 {
            return Err(CliError::Config(format!(
                "segment [{lo}, {hi}) too short for identification"
            )));
        }
        let fit = fit_arx(&y[lo..hi], &u[lo..hi]).map_err(CliError::from)?;
        let gmm = fit_gmm(&u[lo..hi], 3).map_err(CliError::from)?;
        segments.push(SegmentFileConfig {
            a: fit.a,
            b: fit.b,
            q: fit.q,
            // the operating point the segment drives toward
            setpoint: y[hi - 1],
            gmm: gmm
                .components
                .iter()
                .map(|c| GmmComponentConfig { weight: c.weight, mean: c.mean, variance: c.variance })
                .collect(),
        });
    }
    let input_hash = config_hash(&(&y, &u, &sorted));
    let report = IdentifyReport { input_hash, segments };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("fragment encode: {e}")))?;
    write_text(out_path, &json)?;
    Ok(report)
}

/// Resolve the output directory: flag > environment variable > config > ./out.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var("DWMLAB_OUTPUT_DIR") {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    if let Some(c) = cfg {
        if let Some(p) = &c.output_dir {
            return PathBuf::from(p);
        }
    }
    PathBuf::from("out")
}

/// Convenience used by tests: a spec for the configured environment.
pub fn spec_of(cfg: &RunConfig) -> CliResult<EnvSpec> {
    build_spec(cfg)
}
