//! Replication fan-out: each replication owns its environment and rng
//! streams; results merge deterministically by replication index.

use dwmlab_core::attack::{AttackKind, AttackScenario};
use dwmlab_core::env::{
    record_nominal, run_episode, ActorPolicy, ConstantPolicy, EnvSpec, EpisodeResult, NonePolicy,
    Policy,
};
use dwmlab_core::metrics;
use dwmlab_core::rl::Mlp;
use dwmlab_core::rng::Streams;

use crate::checkpoint::Checkpoint;
use crate::config::{PolicyChoice, RunConfig};
use crate::trace::ReplicationSummary;
use crate::{CliError, CliResult};

/// A policy source that can be instantiated per worker.
#[derive(Clone)]
pub enum PolicySource {
    None,
    Constant(f64),
    Actor { net: Mlp, u_max: f64 },
}

impl PolicySource {
    pub fn from_choice(choice: &PolicyChoice) -> CliResult<PolicySource> {
        Ok(match choice {
            PolicyChoice::None => PolicySource::None,
            PolicyChoice::Constant(u) => {
                if *u < 0.0 {
                    return Err(CliError::Config(
                        "at `watermark.policy.constant`: must be nonnegative".into(),
                    ));
                }
                PolicySource::Constant(*u)
            }
            PolicyChoice::Ddpg(path) => {
                let ck = Checkpoint::load(std::path::Path::new(path))?;
                let (net, u_max) = ck.actor()?;
                PolicySource::Actor { net, u_max }
            }
        })
    }

    pub fn make(&self) -> Box<dyn Policy + '_> {
        match self {
            PolicySource::None => Box::new(NonePolicy),
            PolicySource::Constant(u) => Box::new(ConstantPolicy(*u)),
            PolicySource::Actor { net, u_max } => Box::new(ActorPolicy { actor: net, u_max: *u_max }),
        }
    }
}

/// Outcome of one replication.
pub struct ReplicationOutcome {
    pub result: EpisodeResult,
    pub scenario: AttackScenario,
    pub summary: ReplicationSummary,
}

/// Run one replication: derive its streams, build the scenario (recording
/// a prior nominal episode for replays), and drive the policy.
pub fn run_replication(
    spec: &EnvSpec,
    cfg: &RunConfig,
    source: &PolicySource,
    rep: usize,
) -> CliResult<ReplicationOutcome> {
    let streams = Streams::new(cfg.seed);
    let mut prior_rng = streams.stream("scenario", rep as u64);
    let scenario = crate::config::scenario_for_episode(cfg, spec, &mut prior_rng)?;
    let recording = if scenario.kind == AttackKind::Replay {
        let rec_seed = streams.stream("recording-seed", rep as u64).next_u64();
        Some(record_nominal(spec, source.make().as_mut(), rec_seed)?)
    } else {
        None
    };
    let ep_seed = streams.stream("episode-seed", rep as u64).next_u64();
    let result = run_episode(spec, scenario.clone(), recording, source.make().as_mut(), ep_seed)?;
    let onset = (scenario.kind != AttackKind::None).then_some(scenario.onset);
    let s = metrics::summarize(&result.trace, onset);
    let summary = ReplicationSummary {
        replication: rep,
        epochs: result.decision_epochs,
        fast_steps: result.trace.len(),
        energy: s.energy,
        degradation: s.degradation,
        alarms: s.alarm_times.len(),
        detection_delay: s.detection_delay,
        final_belief: s.final_belief,
        mean_belief_after_onset: s.mean_belief_after_onset,
        total_reward: result.total_reward,
        onset,
    };
    Ok(ReplicationOutcome { result, scenario, summary })
}

/// Fan replications across a worker pool; results ordered by index.
pub fn run_replications(
    spec: &EnvSpec,
    cfg: &RunConfig,
    source: &PolicySource,
    n: usize,
) -> CliResult<Vec<ReplicationOutcome>> {
    let workers = if cfg.workers > 0 {
        cfg.workers
    } else {
        std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
    }
    .min(n.max(1));

    if workers <= 1 {
        return (0..n).map(|rep| run_replication(spec, cfg, source, rep)).collect();
    }

    let mut slots: Vec<Option<CliResult<ReplicationOutcome>>> = Vec::new();
    slots.resize_with(n, || None);
    let slots = std::sync::Mutex::new(slots);
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let rep = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if rep >= n {
                    break;
                }
                let out = run_replication(spec, cfg, source, rep);
                slots.lock().unwrap()[rep] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("replication slot filled"))
        .collect()
}
