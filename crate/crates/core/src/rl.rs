//! From-scratch DDPG: small fully-connected networks with manual
//! backpropagation, double critics with a min TD target, soft target
//! updates, a ring replay buffer, Ornstein-Uhlenbeck exploration, RMSprop,
//! and global gradient clipping.
//!
//! Hidden layers are Linear -> LayerNorm -> LeakyReLU(0.01); the output
//! layer is plain linear. The actor's scalar output is squashed to
//! L = sqrt(U_max) (tanh(z) + 1) / 2 and the action is U = L^2, so actions
//! always land in [0, U_max].

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng::Rng;

const LEAKY_SLOPE: f64 = 0.01;
const LN_EPS: f64 = 1e-5;
const RMS_DECAY: f64 = 0.99;
const RMS_EPS: f64 = 1e-8;

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
fn leaky_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

// ---------------------------------------------------------------------------
// MLP with manual reverse-mode gradients
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct LayerSpec {
    w_off: usize,
    b_off: usize,
    gain_off: usize,
    beta_off: usize,
    in_dim: usize,
    out_dim: usize,
    /// Hidden layers normalize + activate; the output layer is linear.
    hidden: bool,
}

/// Fully-connected network with per-hidden-layer normalization parameters.
#[derive(Clone, Debug)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    layers: Vec<LayerSpec>,
    norm: bool,
}

/// Per-layer values cached by a forward pass for the backward sweep.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of each layer (layer l reads xs[l]); xs.last() is the output.
    xs: Vec<Vec<f64>>,
    lins: Vec<Vec<f64>>,
    /// (z_hat, inv_std) for normalized layers.
    norms: Vec<Option<(Vec<f64>, f64)>>,
    pre_acts: Vec<Vec<f64>>,
}

impl Mlp {
    fn layout(dims: &[usize], norm: bool) -> (Vec<LayerSpec>, usize) {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for l in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let hidden = l + 2 < dims.len() + 1 && l < dims.len() - 2;
            let w_off = off;
            off += in_dim * out_dim;
            let b_off = off;
            off += out_dim;
            let (gain_off, beta_off) = if hidden && norm {
                let g = off;
                off += out_dim;
                let be = off;
                off += out_dim;
                (g, be)
            } else {
                (usize::MAX, usize::MAX)
            };
            layers.push(LayerSpec { w_off, b_off, gain_off, beta_off, in_dim, out_dim, hidden });
        }
        (layers, off)
    }

    /// Random init: weights and biases uniform in +-1/sqrt(fan_in),
    /// normalization gain 1 and bias 0.
    pub fn new(dims: &[usize], norm: bool, rng: &mut Rng) -> Self {
        let (layers, n) = Self::layout(dims, norm);
        let mut params = vec![0.0; n];
        for spec in &layers {
            let bound = 1.0 / math::sqrt(spec.in_dim as f64);
            for i in 0..spec.in_dim * spec.out_dim {
                params[spec.w_off + i] = bound * (2.0 * rng.uniform() - 1.0);
            }
            for i in 0..spec.out_dim {
                params[spec.b_off + i] = bound * (2.0 * rng.uniform() - 1.0);
            }
            if spec.gain_off != usize::MAX {
                for i in 0..spec.out_dim {
                    params[spec.gain_off + i] = 1.0;
                    params[spec.beta_off + i] = 0.0;
                }
            }
        }
        Mlp { dims: dims.to_vec(), params, layers, norm }
    }

    /// All-zero parameters except unit normalization gains. Test helper.
    pub fn zeroed(dims: &[usize], norm: bool) -> Self {
        let (layers, n) = Self::layout(dims, norm);
        let mut params = vec![0.0; n];
        for spec in &layers {
            if spec.gain_off != usize::MAX {
                for i in 0..spec.out_dim {
                    params[spec.gain_off + i] = 1.0;
                }
            }
        }
        Mlp { dims: dims.to_vec(), params, layers, norm }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.params.len(), "parameter count mismatch");
        self.params.copy_from_slice(p);
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, ForwardCache) {
        assert_eq!(input.len(), self.dims[0], "input width");
        let n_layers = self.layers.len();
        let mut cache = ForwardCache {
            xs: Vec::with_capacity(n_layers + 1),
            lins: Vec::with_capacity(n_layers),
            norms: Vec::with_capacity(n_layers),
            pre_acts: Vec::with_capacity(n_layers),
        };
        cache.xs.push(input.to_vec());
        for spec in &self.layers {
            let x = cache.xs.last().unwrap().clone();
            let mut lin = vec![0.0; spec.out_dim];
            for o in 0..spec.out_dim {
                let row = &self.params[spec.w_off + o * spec.in_dim..spec.w_off + (o + 1) * spec.in_dim];
                lin[o] = self.params[spec.b_off + o]
                    + row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>();
            }
            let (pre_act, norm_cache) = if spec.hidden && self.norm {
                let nf = spec.out_dim as f64;
                let mean = lin.iter().sum::<f64>() / nf;
                let var = lin.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                let inv_std = 1.0 / math::sqrt(var + LN_EPS);
                let z_hat: Vec<f64> = lin.iter().map(|v| (v - mean) * inv_std).collect();
                let pre: Vec<f64> = (0..spec.out_dim)
                    .map(|i| self.params[spec.gain_off + i] * z_hat[i] + self.params[spec.beta_off + i])
                    .collect();
                (pre, Some((z_hat, inv_std)))
            } else {
                (lin.clone(), None)
            };
            let out: Vec<f64> = if spec.hidden {
                pre_act.iter().map(|v| leaky(*v)).collect()
            } else {
                pre_act.clone()
            };
            cache.lins.push(lin);
            cache.norms.push(norm_cache);
            cache.pre_acts.push(pre_act);
            cache.xs.push(out);
        }
        (cache.xs.last().unwrap().clone(), cache)
    }

    /// Reverse-mode sweep. Accumulates parameter gradients into `grads`
    /// (same layout as `params`) and returns the gradient w.r.t. the input.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len());
        let mut d = d_out.to_vec();
        for (l, spec) in self.layers.iter().enumerate().rev() {
            // activation
            if spec.hidden {
                for (di, pre) in d.iter_mut().zip(&cache.pre_acts[l]) {
                    *di *= leaky_deriv(*pre);
                }
            }
            // layer norm
            let d_lin: Vec<f64> = if let Some((z_hat, inv_std)) = &cache.norms[l] {
                let nf = spec.out_dim as f64;
                let mut d_zhat = vec![0.0; spec.out_dim];
                for i in 0..spec.out_dim {
                    grads[spec.gain_off + i] += d[i] * z_hat[i];
                    grads[spec.beta_off + i] += d[i];
                    d_zhat[i] = d[i] * self.params[spec.gain_off + i];
                }
                let mean_dz = d_zhat.iter().sum::<f64>() / nf;
                let mean_dz_z = d_zhat.iter().zip(z_hat).map(|(a, b)| a * b).sum::<f64>() / nf;
                (0..spec.out_dim)
                    .map(|i| inv_std * (d_zhat[i] - mean_dz - z_hat[i] * mean_dz_z))
                    .collect()
            } else {
                d.clone()
            };
            // linear
            let x = &cache.xs[l];
            let mut d_x = vec![0.0; spec.in_dim];
            for o in 0..spec.out_dim {
                grads[spec.b_off + o] += d_lin[o];
                let w_row = spec.w_off + o * spec.in_dim;
                for i in 0..spec.in_dim {
                    grads[w_row + i] += d_lin[o] * x[i];
                    d_x[i] += self.params[w_row + i] * d_lin[o];
                }
            }
            d = d_x;
        }
        d
    }
}

// ---------------------------------------------------------------------------
// Actor squash
// ---------------------------------------------------------------------------

/// L = sqrt(U_max) (tanh(z) + 1) / 2, U = L^2, clamped against rounding.
pub fn squash_action(z: f64, u_max: f64) -> f64 {
    let l = math::sqrt(u_max) * (math::tanh(z) + 1.0) * 0.5;
    (l * l).min(u_max)
}

/// dU/dz for the squash above.
pub fn squash_deriv(z: f64, u_max: f64) -> f64 {
    let th = math::tanh(z);
    u_max * (th + 1.0) * (1.0 - th * th) * 0.5
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

/// Ring buffer of transitions in struct-of-arrays layout.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    state_dim: usize,
    capacity: usize,
    len: usize,
    head: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    r: Vec<f64>,
    s2: Vec<f64>,
    done: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, capacity: usize) -> Self {
        ReplayBuffer {
            state_dim,
            capacity,
            len: 0,
            head: 0,
            s: vec![0.0; state_dim * capacity],
            a: vec![0.0; capacity],
            r: vec![0.0; capacity],
            s2: vec![0.0; state_dim * capacity],
            done: vec![0.0; capacity],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, s: &[f64], a: f64, r: f64, s2: &[f64], done: bool) {
        let i = self.head;
        self.s[i * self.state_dim..(i + 1) * self.state_dim].copy_from_slice(s);
        self.a[i] = a;
        self.r[i] = r;
        self.s2[i * self.state_dim..(i + 1) * self.state_dim].copy_from_slice(s2);
        self.done[i] = if done { 1.0 } else { 0.0 };
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.s[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.s2[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> f64 {
        self.a[i]
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.r[i]
    }

    pub fn done(&self, i: usize) -> f64 {
        self.done[i]
    }

    /// Uniform sample of `batch` distinct indices.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        assert!(batch <= self.len, "batch larger than buffer");
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            let i = rng.below(self.len);
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        picked
    }
}

// ---------------------------------------------------------------------------
// OU exploration noise
// ---------------------------------------------------------------------------

/// Mean-reverting exploration noise x <- x + theta (mu - x) + sigma N(0,1).
#[derive(Clone, Copy, Debug)]
pub struct OuNoise {
    pub x: f64,
    pub mu: f64,
    pub theta: f64,
    pub sigma: f64,
}

impl OuNoise {
    pub fn new(mu: f64, theta: f64, sigma: f64) -> Self {
        OuNoise { x: 0.0, mu, theta, sigma }
    }

    pub fn sample(&mut self, rng: &mut Rng) -> f64 {
        self.x += self.theta * (self.mu - self.x) + self.sigma * rng.standard_normal();
        self.x
    }

    /// Per-episode decay sigma <- factor * sigma.
    pub fn decay(&mut self, factor: f64) {
        self.sigma *= factor;
    }

    pub fn reset(&mut self) {
        self.x = 0.0;
    }
}

// ---------------------------------------------------------------------------
// RMSprop with global-norm clipping
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct RmsProp {
    acc: Vec<f64>,
    lr: f64,
}

impl RmsProp {
    fn new(n: usize, lr: f64) -> Self {
        RmsProp { acc: vec![0.0; n], lr }
    }

    /// Clip the gradient to unit global L2 norm, then apply the update.
    fn step(&mut self, params: &mut [f64], grads: &mut [f64], clip: f64) {
        let norm = math::norm2(grads);
        if norm > clip {
            let scale = clip / norm;
            for g in grads.iter_mut() {
                *g *= scale;
            }
        }
        for i in 0..params.len() {
            let g = grads[i];
            self.acc[i] = RMS_DECAY * self.acc[i] + (1.0 - RMS_DECAY) * g * g;
            params[i] -= self.lr * g / (math::sqrt(self.acc[i]) + RMS_EPS);
        }
    }
}

// ---------------------------------------------------------------------------
// Agent bundle
// ---------------------------------------------------------------------------

/// DDPG hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct Hyper {
    pub hidden: usize,
    pub lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub grad_clip: f64,
    pub u_max: f64,
    pub ou_theta: f64,
    pub ou_sigma0: f64,
    pub ou_decay: f64,
}

impl Hyper {
    /// The setup used by both twins (hidden width differs: 32 vs 64).
    pub fn standard(hidden: usize, u_max: f64) -> Self {
        Hyper {
            hidden,
            lr: 1e-3,
            tau: 5e-3,
            gamma: 0.99,
            batch: 128,
            buffer_capacity: 1_000_000,
            grad_clip: 1.0,
            u_max,
            ou_theta: 0.15,
            ou_sigma0: 0.99,
            ou_decay: 0.995,
        }
    }
}

/// Losses reported by one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_value: f64,
}

/// Actor, double critics, their targets, buffer, noise and optimizer state.
#[derive(Clone, Debug)]
pub struct AgentBundle {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    pub buffer: ReplayBuffer,
    pub noise: OuNoise,
    pub hyper: Hyper,
    opt_actor: RmsProp,
    opt_c1: RmsProp,
    opt_c2: RmsProp,
    scratch: Vec<f64>,
}

impl AgentBundle {
    pub fn new(state_dim: usize, hyper: Hyper, rng: &mut Rng) -> Self {
        let h = hyper.hidden;
        let actor_dims = [state_dim, h, h, h, 1];
        let critic_dims = [state_dim + 1, h, h, h, 1];
        let actor = Mlp::new(&actor_dims, true, rng);
        let critic1 = Mlp::new(&critic_dims, true, rng);
        let critic2 = Mlp::new(&critic_dims, true, rng);
        let n_actor = actor.n_params();
        let n_critic = critic1.n_params();
        AgentBundle {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            buffer: ReplayBuffer::new(state_dim, hyper.buffer_capacity),
            noise: OuNoise::new(0.0, hyper.ou_theta, hyper.ou_sigma0),
            hyper,
            opt_actor: RmsProp::new(n_actor, hyper.lr),
            opt_c1: RmsProp::new(n_critic, hyper.lr),
            opt_c2: RmsProp::new(n_critic, hyper.lr),
            scratch: vec![0.0; n_critic],
        }
    }

    /// Deterministic policy action U in [0, U_max].
    pub fn act(&self, state: &[f64]) -> f64 {
        squash_action(self.actor.forward(state)[0], self.hyper.u_max)
    }

    /// Exploration action: OU noise added to the pre-squash output.
    pub fn act_explore(&mut self, state: &[f64], rng: &mut Rng) -> f64 {
        let z = self.actor.forward(state)[0] + self.noise.sample(rng);
        squash_action(z, self.hyper.u_max)
    }

    /// TD targets y = r + gamma (1 - done) min(Q1_t, Q2_t) at the target
    /// actor's action.
    pub fn td_target(&self, batch: &[usize]) -> Vec<f64> {
        let u_max = self.hyper.u_max;
        batch
            .iter()
            .map(|&i| {
                let s2 = self.buffer.next_state(i);
                let a2 = squash_action(self.actor_target.forward(s2)[0], u_max) / u_max;
                let mut input = s2.to_vec();
                input.push(a2);
                let q1 = self.critic1_target.forward(&input)[0];
                let q2 = self.critic2_target.forward(&input)[0];
                self.buffer.reward(i)
                    + self.hyper.gamma * (1.0 - self.buffer.done(i)) * q1.min(q2)
            })
            .collect()
    }

    /// One DDPG update on a sampled minibatch: regress both critics to the
    /// TD target, ascend critic 1 through the actor, clip, apply RMSprop,
    /// then soft-update the three target networks.
    pub fn train_step(&mut self, rng: &mut Rng) -> Option<TrainStats> {
        if self.buffer.len() < self.hyper.batch {
            return None;
        }
        let batch = self.buffer.sample_indices(self.hyper.batch, rng);
        let targets = self.td_target(&batch);
        let b = batch.len() as f64;
        let u_max = self.hyper.u_max;

        // critics: mean squared error against the TD target
        let mut critic_losses = [0.0; 2];
        for (ci, critic, opt) in [
            (0usize, &mut self.critic1, &mut self.opt_c1),
            (1usize, &mut self.critic2, &mut self.opt_c2),
        ] {
            let mut grads = vec![0.0; critic.n_params()];
            let mut loss = 0.0;
            for (&i, &y) in batch.iter().zip(&targets) {
                let mut input = self.buffer.state(i).to_vec();
                input.push(self.buffer.action(i) / u_max);
                let (out, cache) = critic.forward_cached(&input);
                let err = out[0] - y;
                loss += err * err;
                critic.backward(&cache, &[2.0 * err / b], &mut grads);
            }
            critic_losses[ci] = loss / b;
            opt.step(critic.params_mut(), &mut grads, self.hyper.grad_clip);
        }

        // actor: ascend critic 1 at the actor's (squashed) action
        let mut actor_grads = vec![0.0; self.actor.n_params()];
        let mut actor_value = 0.0;
        for &i in &batch {
            let s = self.buffer.state(i);
            let (z_out, actor_cache) = self.actor.forward_cached(s);
            let z = z_out[0];
            let a_norm = squash_action(z, u_max) / u_max;
            let mut input = s.to_vec();
            input.push(a_norm);
            let (q, critic_cache) = self.critic1.forward_cached(&input);
            actor_value += q[0];
            // d(-Q)/d input; critic parameters are not updated here
            self.scratch.iter_mut().for_each(|g| *g = 0.0);
            let d_input = self.critic1.backward(&critic_cache, &[-1.0 / b], &mut self.scratch);
            let d_a_norm = d_input[s.len()];
            let dz = d_a_norm * squash_deriv(z, u_max) / u_max;
            self.actor.backward(&actor_cache, &[dz], &mut actor_grads);
        }
        self.opt_actor.step(self.actor.params_mut(), &mut actor_grads, self.hyper.grad_clip);

        // soft target updates
        let tau = self.hyper.tau;
        soft_update(&mut self.actor_target, &self.actor, tau);
        soft_update(&mut self.critic1_target, &self.critic1, tau);
        soft_update(&mut self.critic2_target, &self.critic2, tau);

        Some(TrainStats {
            critic1_loss: critic_losses[0],
            critic2_loss: critic_losses[1],
            actor_value: actor_value / b,
        })
    }
}

/// target <- tau * live + (1 - tau) * target.
pub fn soft_update(target: &mut Mlp, live: &Mlp, tau: f64) {
    let live_p = live.params();
    for (t, l) in target.params_mut().iter_mut().zip(live_p) {
        *t = tau * l + (1.0 - tau) * *t;
    }
}
