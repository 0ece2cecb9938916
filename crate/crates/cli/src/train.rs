//! DDPG training loop over the decision environment.
//!
//! Per-episode rng streams keep the whole run reproducible from the root
//! seed. Exploration adds OU noise to the actor's pre-squash output; the
//! noise scale decays per episode. A non-finite loss or reward aborts with
//! a diagnostic dump of the offending batch context.

use dwmlab_core::attack::AttackKind;
use dwmlab_core::env::{record_nominal, ActorPolicy, EnvSpec, Episode};
use dwmlab_core::linalg::Matrix;
use dwmlab_core::rl::{AgentBundle, Hyper};
use dwmlab_core::rng::Streams;

use crate::config::RunConfig;
use crate::{CliError, CliResult};

/// Per-episode training log entry.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub ou_sigma: f64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_value: f64,
    pub attacked: bool,
}

pub struct TrainOutput {
    pub agent: AgentBundle,
    pub log: Vec<EpisodeLog>,
}

/// Callback invoked after each episode (used for periodic checkpointing).
pub type EpisodeHook<'a> = dyn FnMut(usize, &AgentBundle) -> CliResult<()> + 'a;

pub fn train(
    spec: &EnvSpec,
    cfg: &RunConfig,
    episodes: usize,
    start_episode: usize,
    mut agent: AgentBundle,
    hook: &mut EpisodeHook<'_>,
) -> CliResult<TrainOutput> {
    let streams = Streams::new(cfg.seed);
    let state_scale = spec.state_scale;
    let mut log = Vec::with_capacity(episodes);

    for episode in start_episode..episodes {
        let mut prior_rng = streams.stream("train-scenario", episode as u64);
        let scenario = crate::config::scenario_for_episode(cfg, spec, &mut prior_rng)?;
        let recording = if scenario.kind == AttackKind::Replay {
            let rec_seed = streams.stream("train-recording", episode as u64).next_u64();
            let mut rec_policy = ActorPolicy { actor: &agent.actor, u_max: agent.hyper.u_max };
            Some(record_nominal(spec, &mut rec_policy, rec_seed)?)
        } else {
            None
        };
        let attacked = scenario.kind != AttackKind::None;
        let ep_seed = streams.stream("train-episode", episode as u64).next_u64();
        let (mut env, state) = Episode::reset(spec, scenario, recording, ep_seed)?;

        let mut explore_rng = streams.stream("explore", episode as u64);
        let mut train_rng = streams.stream("train-step", episode as u64);
        agent.noise.reset();

        let mut features = state.features(state_scale);
        let mut total_reward = 0.0;
        let mut steps = 0usize;
        let (mut c1, mut c2, mut av, mut nstats) = (0.0, 0.0, 0.0, 0usize);
        while !env.done() {
            let action = agent.act_explore(&features, &mut explore_rng);
            let out = env.step_decision(&Matrix::scalar(action))?;
            let next_features = out.state.features(state_scale);
            if !out.reward.is_finite() {
                return Err(nan_abort(cfg, episode, steps, "reward", out.reward));
            }
            agent.buffer.push(&features, action, out.reward, &next_features, out.done);
            if let Some(stats) = agent.train_step(&mut train_rng) {
                if !stats.critic1_loss.is_finite() || !stats.critic2_loss.is_finite() {
                    return Err(nan_abort(cfg, episode, steps, "critic loss", stats.critic1_loss));
                }
                c1 += stats.critic1_loss;
                c2 += stats.critic2_loss;
                av += stats.actor_value;
                nstats += 1;
            }
            total_reward += out.reward;
            features = next_features;
            steps += 1;
        }
        let ou_sigma = agent.noise.sigma;
        agent.noise.decay(agent.hyper.ou_decay);
        let denom = nstats.max(1) as f64;
        log.push(EpisodeLog {
            episode,
            steps,
            total_reward,
            ou_sigma,
            critic1_loss: c1 / denom,
            critic2_loss: c2 / denom,
            actor_value: av / denom,
            attacked,
        });
        hook(episode, &agent)?;
    }
    Ok(TrainOutput { agent, log })
}

fn nan_abort(cfg: &RunConfig, episode: usize, step: usize, what: &str, value: f64) -> CliError {
    CliError::Runtime(format!(
        "non-finite {what} ({value}) at episode {episode}, decision step {step}; \
         seed {} — aborting before the divergence can corrupt the checkpoint",
        cfg.seed
    ))
}

/// Default DDPG hyperparameters resolved from a config.
pub fn hyper_from_config(cfg: &RunConfig, u_max: f64) -> Hyper {
    let mut h = Hyper::standard(cfg.hidden_width(), u_max);
    h.lr = cfg.training.learning_rate;
    h.tau = cfg.training.tau;
    h.gamma = cfg.training.gamma;
    h.batch = cfg.training.batch;
    h.buffer_capacity = cfg.training.buffer;
    h.ou_theta = cfg.training.ou_theta;
    h.ou_sigma0 = cfg.training.ou_sigma;
    h.ou_decay = cfg.training.ou_decay;
    h
}
