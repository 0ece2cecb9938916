//! Policy checkpoints: versioned structured-text files carrying layer
//! shapes and parameters for the actor, critics, and their targets.
//! Loading rejects mismatched shapes or an unknown format version.

use dwmlab_core::rl::{AgentBundle, Hyper, Mlp};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetFile {
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
}

impl NetFile {
    fn of(net: &Mlp) -> Self {
        NetFile { dims: net.dims().to_vec(), params: net.params().to_vec() }
    }

    fn restore_into(&self, net: &mut Mlp, name: &str) -> CliResult<()> {
        if self.dims != net.dims() {
            return Err(CliError::Config(format!(
                "checkpoint {name} dims {:?} do not match expected {:?}",
                self.dims,
                net.dims()
            )));
        }
        if self.params.len() != net.n_params() {
            return Err(CliError::Config(format!(
                "checkpoint {name} has {} parameters, expected {}",
                self.params.len(),
                net.n_params()
            )));
        }
        net.set_params(&self.params);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub state_dim: usize,
    pub hidden: usize,
    pub u_max: f64,
    pub episodes_trained: usize,
    pub ou_sigma: f64,
    pub actor: NetFile,
    pub actor_target: NetFile,
    pub critic1: NetFile,
    pub critic1_target: NetFile,
    pub critic2: NetFile,
    pub critic2_target: NetFile,
}

impl Checkpoint {
    pub fn of(agent: &AgentBundle, state_dim: usize, config_hash: &str, episodes: usize) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            state_dim,
            hidden: agent.hyper.hidden,
            u_max: agent.hyper.u_max,
            episodes_trained: episodes,
            ou_sigma: agent.noise.sigma,
            actor: NetFile::of(&agent.actor),
            actor_target: NetFile::of(&agent.actor_target),
            critic1: NetFile::of(&agent.critic1),
            critic1_target: NetFile::of(&agent.critic1_target),
            critic2: NetFile::of(&agent.critic2),
            critic2_target: NetFile::of(&agent.critic2_target),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("checkpoint encode: {e}")))?;
        crate::trace::write_text(path, &json)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Checkpoint> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read checkpoint {path:?}: {e}")))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let ck: Checkpoint = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("checkpoint at `{}`: {}", e.path(), e.inner())))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(CliError::Config(format!(
                "unsupported checkpoint format version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    /// Rebuild an agent (empty buffer, restored networks and noise level).
    pub fn restore(&self, mut hyper: Hyper, seed_rng: &mut dwmlab_core::rng::Rng) -> CliResult<AgentBundle> {
        hyper.hidden = self.hidden;
        hyper.u_max = self.u_max;
        let mut agent = AgentBundle::new(self.state_dim, hyper, seed_rng);
        self.actor.restore_into(&mut agent.actor, "actor")?;
        self.actor_target.restore_into(&mut agent.actor_target, "actor_target")?;
        self.critic1.restore_into(&mut agent.critic1, "critic1")?;
        self.critic1_target.restore_into(&mut agent.critic1_target, "critic1_target")?;
        self.critic2.restore_into(&mut agent.critic2, "critic2")?;
        self.critic2_target.restore_into(&mut agent.critic2_target, "critic2_target")?;
        agent.noise.sigma = self.ou_sigma;
        Ok(agent)
    }

    /// Load just the frozen actor for evaluation policies.
    pub fn actor(&self) -> CliResult<(Mlp, f64)> {
        let mut rng = dwmlab_core::rng::Rng::seed_from_u64(0);
        let mut net = Mlp::new(&self.actor.dims, true, &mut rng);
        self.actor.restore_into(&mut net, "actor")?;
        Ok((net, self.u_max))
    }
}
