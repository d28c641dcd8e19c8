//! Per-station discrete soft actor-critic.
//!
//! The policy factorizes over the UAVs an agent controls: the actor emits one
//! block of logits per UAV and the joint probability is the product of the
//! per-UAV masked categoricals. Each critic maps an observation to one block
//! of action values per UAV and scores a joint action as the sum of the
//! selected entries, which is a critic over the observation and the one-hot
//! joint action whose action dependence is additive. Expectations over the
//! joint action (soft target and actor loss) are computed exactly by
//! enumerating the joint support when it has at most [`MAX_JOINT_ENUMERATION`]
//! elements, and in factorized form otherwise.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentAction, Env};
use crate::error::{Error, Result};
use crate::neural::{masked_softmax, soft_update, Adam, Checkpoint, Mlp, ParamGrads, RngState, CHECKPOINT_VERSION};
use crate::scenario::LearnParams;

/// Largest joint support enumerated exactly.
pub const MAX_JOINT_ENUMERATION: usize = 4096;

/// Per-UAV categorical distributions, outer index = UAV.
pub type PolicyDist = Vec<Vec<f64>>;

/// `-sum p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Actor, twin critics, their targets and optimizer states for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub n_uavs: usize,
    pub n_actions: usize,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub actor_opt: Adam,
    pub critic1_opt: Adam,
    pub critic2_opt: Adam,
    pub entropy_alpha: f64,
}

impl AgentNets {
    pub fn new(obs_dim: usize, n_uavs: usize, n_actions: usize, learn: &LearnParams, rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend(&learn.hidden_sizes);
        sizes.push(n_uavs * n_actions);
        let actor = Mlp::new(&sizes, rng)?;
        let critic1 = Mlp::new(&sizes, rng)?;
        let critic2 = Mlp::new(&sizes, rng)?;
        Ok(Self {
            n_uavs,
            n_actions,
            actor_opt: Adam::new(&actor, learn.actor_lr),
            critic1_opt: Adam::new(&critic1, learn.critic_lr),
            critic2_opt: Adam::new(&critic2, learn.critic_lr),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            entropy_alpha: learn.entropy_alpha,
        })
    }

    fn check_mask(&self, mask: &[Vec<bool>]) -> Result<()> {
        if mask.len() != self.n_uavs || mask.iter().any(|m| m.len() != self.n_actions) {
            return Err(Error::Shape(format!(
                "mask must be {} x {}, got {} rows",
                self.n_uavs,
                self.n_actions,
                mask.len()
            )));
        }
        Ok(())
    }

    fn dist_from_logits(&self, logits: &[f64], mask: &[Vec<bool>]) -> Result<PolicyDist> {
        self.check_mask(mask)?;
        mask.iter()
            .enumerate()
            .map(|(u, m)| masked_softmax(&logits[u * self.n_actions..(u + 1) * self.n_actions], m))
            .collect()
    }

    /// Masked per-UAV softmax over the actor's logits.
    pub fn policy_distribution(&self, obs: &[f64], mask: &[Vec<bool>]) -> Result<PolicyDist> {
        let logits = self.actor.forward(obs)?;
        self.dist_from_logits(&logits, mask)
    }

    /// Online critic values `(Q1, Q2)` of a joint action.
    pub fn q_values(&self, obs: &[f64], action: &[usize]) -> Result<(f64, f64)> {
        let h1 = self.critic1.forward(obs)?;
        let h2 = self.critic2.forward(obs)?;
        Ok((self.joint_q(&h1, action)?, self.joint_q(&h2, action)?))
    }

    fn joint_q(&self, heads: &[f64], action: &[usize]) -> Result<f64> {
        if action.len() != self.n_uavs || action.iter().any(|a| *a >= self.n_actions) {
            return Err(Error::Shape(format!("invalid joint action {action:?}")));
        }
        Ok(action.iter().enumerate().map(|(u, a)| heads[u * self.n_actions + a]).sum())
    }

    pub fn is_finite(&self) -> bool {
        [&self.actor, &self.critic1, &self.critic2, &self.target1, &self.target2]
            .iter()
            .all(|n| n.is_finite())
    }

    pub fn checkpoint(&self, rng: Option<&ChaCha8Rng>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            nets: vec![
                ("actor".into(), self.actor.clone()),
                ("critic1".into(), self.critic1.clone()),
                ("critic2".into(), self.critic2.clone()),
                ("target1".into(), self.target1.clone()),
                ("target2".into(), self.target2.clone()),
            ],
            optimizers: vec![
                ("actor".into(), self.actor_opt.clone()),
                ("critic1".into(), self.critic1_opt.clone()),
                ("critic2".into(), self.critic2_opt.clone()),
            ],
            rng: rng.map(RngState::capture),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, n_uavs: usize, n_actions: usize, entropy_alpha: f64) -> Result<Self> {
        let net = |name: &str| {
            ck.nets
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks network `{name}`")))
        };
        let opt = |name: &str| {
            ck.optimizers
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, o)| o.clone())
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks optimizer `{name}`")))
        };
        let nets = Self {
            n_uavs,
            n_actions,
            actor: net("actor")?,
            critic1: net("critic1")?,
            critic2: net("critic2")?,
            target1: net("target1")?,
            target2: net("target2")?,
            actor_opt: opt("actor")?,
            critic1_opt: opt("critic1")?,
            critic2_opt: opt("critic2")?,
            entropy_alpha,
        };
        if nets.actor.output_dim() != n_uavs * n_actions || nets.critic1.output_dim() != n_uavs * n_actions {
            return Err(Error::Shape("checkpoint output size does not match the action space".into()));
        }
        if nets.target1.layer_sizes != nets.critic1.layer_sizes || nets.target2.layer_sizes != nets.critic2.layer_sizes {
            return Err(Error::Shape("target and online critic shapes differ".into()));
        }
        Ok(nets)
    }
}

/// One buffered decision of one agent. Fields are snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub mask: Vec<Vec<bool>>,
    pub action: Vec<usize>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub next_mask: Vec<Vec<bool>>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions with its own sampling stream.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), next: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Indices of a uniform sample without replacement.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let n = n.min(self.items.len());
        index::sample(&mut self.rng, self.items.len(), n).into_vec()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn sample(&mut self, n: usize) -> Vec<Transition> {
        self.sample_indices(n).into_iter().map(|i| self.items[i].clone()).collect()
    }
}

/// Exact or factorized expectations of the clipped double-Q under a
/// factorized policy.
struct JointStats {
    /// `E[min(Q1, Q2)]`.
    expected_min_q: f64,
    /// `E[min(Q1, Q2) | a_u = b]` per UAV and action (0 off-support).
    conditional: Vec<Vec<f64>>,
}

fn joint_stats(dist: &PolicyDist, h1: &[f64], h2: &[f64], n_actions: usize) -> JointStats {
    let n_uavs = dist.len();
    let support: Vec<Vec<usize>> = dist
        .iter()
        .map(|p| p.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(a, _)| a).collect())
        .collect();
    let joint_size = support.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.len()));
    let mut conditional = vec![vec![0.0; n_actions]; n_uavs];
    match joint_size {
        Some(size) if size <= MAX_JOINT_ENUMERATION => {
            let mut digits = vec![0usize; n_uavs];
            let mut expected = 0.0;
            for _ in 0..size {
                let mut q1 = 0.0;
                let mut q2 = 0.0;
                let mut prob = 1.0;
                for (u, d) in digits.iter().enumerate() {
                    let a = support[u][*d];
                    q1 += h1[u * n_actions + a];
                    q2 += h2[u * n_actions + a];
                    prob *= dist[u][a];
                }
                let m = q1.min(q2);
                expected += prob * m;
                for (u, d) in digits.iter().enumerate() {
                    let a = support[u][*d];
                    conditional[u][a] += prob / dist[u][a] * m;
                }
                for (u, d) in digits.iter_mut().enumerate() {
                    *d += 1;
                    if *d < support[u].len() {
                        break;
                    }
                    *d = 0;
                }
            }
            JointStats { expected_min_q: expected, conditional }
        }
        _ => {
            // factorized: use the critic with the smaller expected value
            let per_uav = |h: &[f64]| -> Vec<f64> {
                (0..n_uavs).map(|u| (0..n_actions).map(|a| dist[u][a] * h[u * n_actions + a]).sum()).collect()
            };
            let e1 = per_uav(h1);
            let e2 = per_uav(h2);
            let (h, e) = if e1.iter().sum::<f64>() <= e2.iter().sum::<f64>() { (h1, e1) } else { (h2, e2) };
            let total: f64 = e.iter().sum();
            for u in 0..n_uavs {
                for &a in &support[u] {
                    conditional[u][a] = h[u * n_actions + a] + total - e[u];
                }
            }
            JointStats { expected_min_q: total, conditional }
        }
    }
}

/// Soft state value `E_pi[min Q - alpha ln pi]` of a joint distribution.
fn soft_value(dist: &PolicyDist, h1: &[f64], h2: &[f64], n_actions: usize, alpha: f64) -> f64 {
    let stats = joint_stats(dist, h1, h2, n_actions);
    // E[-ln pi(a)] over a factorized pi is the sum of per-UAV entropies
    stats.expected_min_q + alpha * dist.iter().map(|p| entropy(p)).sum::<f64>()
}

/// Soft Bellman targets `r + gamma (1 - done) V_targ(s')`.
pub fn q_target(batch: &[&Transition], agent: &AgentNets, gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Contract("q_target on an empty batch".into()));
    }
    batch
        .iter()
        .map(|t| {
            if t.done || gamma == 0.0 {
                return Ok(t.reward);
            }
            let dist = agent.policy_distribution(&t.next_obs, &t.next_mask)?;
            let h1 = agent.target1.forward(&t.next_obs)?;
            let h2 = agent.target2.forward(&t.next_obs)?;
            Ok(t.reward + gamma * soft_value(&dist, &h1, &h2, agent.n_actions, alpha))
        })
        .collect()
}

/// One Adam step of both critics on the mean squared Bellman error.
/// Returns the pre-step losses.
pub fn critic_update(agent: &mut AgentNets, batch: &[&Transition], targets: &[f64]) -> Result<(f64, f64)> {
    if batch.len() != targets.len() || batch.is_empty() {
        return Err(Error::Shape(format!("{} transitions for {} targets", batch.len(), targets.len())));
    }
    let n = batch.len() as f64;
    let n_actions = agent.n_actions;
    let mut losses = [0.0; 2];
    for (which, loss) in losses.iter_mut().enumerate() {
        let net = if which == 0 { &agent.critic1 } else { &agent.critic2 };
        let mut grads = ParamGrads::zeros_like(net);
        for (t, y) in batch.iter().zip(targets) {
            let cache = net.forward_cache(&t.obs)?;
            let q = agent.joint_q(cache.output(), &t.action)?;
            let err = q - y;
            *loss += err * err / n;
            let mut upstream = vec![0.0; net.output_dim()];
            for (u, a) in t.action.iter().enumerate() {
                upstream[u * n_actions + a] = 2.0 * err / n;
            }
            net.accumulate(&cache, &upstream, &mut grads)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        if which == 0 {
            agent.critic1_opt.step(&mut agent.critic1, &grads)?;
        } else {
            agent.critic2_opt.step(&mut agent.critic2, &grads)?;
        }
    }
    Ok((losses[0], losses[1]))
}

/// One Adam step of the actor on `mean E_pi[alpha ln pi - min Q]` with the
/// online critics frozen. Returns the pre-step loss.
pub fn actor_update(agent: &mut AgentNets, batch: &[&Transition]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("actor_update on an empty batch".into()));
    }
    let n = batch.len() as f64;
    let alpha = agent.entropy_alpha;
    let na = agent.n_actions;
    let mut grads = ParamGrads::zeros_like(&agent.actor);
    let mut loss = 0.0;
    for t in batch {
        let cache = agent.actor.forward_cache(&t.obs)?;
        let dist = agent.dist_from_logits(cache.output(), &t.mask)?;
        let h1 = agent.critic1.forward(&t.obs)?;
        let h2 = agent.critic2.forward(&t.obs)?;
        let stats = joint_stats(&dist, &h1, &h2, na);
        let neg_entropy: f64 = dist.iter().map(|p| -entropy(p)).sum();
        loss += (alpha * neg_entropy - stats.expected_min_q) / n;
        let mut upstream = vec![0.0; agent.actor.output_dim()];
        for (u, p) in dist.iter().enumerate() {
            // dL/dpi_u(b) = alpha (ln pi_u(b) + 1) - E[min Q | a_u = b] (+ b-independent terms)
            let g: Vec<f64> = (0..na)
                .map(|b| if p[b] > 0.0 { alpha * (p[b].ln() + 1.0) - stats.conditional[u][b] } else { 0.0 })
                .collect();
            let mean: f64 = (0..na).map(|b| p[b] * g[b]).sum();
            for b in 0..na {
                if p[b] > 0.0 {
                    upstream[u * na + b] = p[b] * (g[b] - mean) / n;
                }
            }
        }
        agent.actor.accumulate(&cache, &upstream, &mut grads)?;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    agent.actor_opt.step(&mut agent.actor, &grads)?;
    Ok(loss)
}

/// Critic step, actor step, then soft target updates on one batch.
pub fn update_agent(agent: &mut AgentNets, batch: &[&Transition], learn: &LearnParams) -> Result<UpdateStats> {
    let targets = q_target(batch, agent, learn.gamma, agent.entropy_alpha)?;
    let (c1, c2) = critic_update(agent, batch, &targets)?;
    let actor = actor_update(agent, batch)?;
    soft_update(&mut agent.target1, &agent.critic1, learn.tau_soft)?;
    soft_update(&mut agent.target2, &agent.critic2, learn.tau_soft)?;
    Ok(UpdateStats { critic_loss: 0.5 * (c1 + c2), actor_loss: actor })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Draws one action per UAV from `dist`, or its mode when `greedy`
/// (ties to the lowest index).
pub fn select_action(dist: &PolicyDist, greedy: bool, rng: &mut impl Rng) -> Vec<usize> {
    dist.iter()
        .map(|p| {
            if greedy {
                let mut best = 0;
                for (a, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = a;
                    }
                }
                best
            } else {
                let mut r: f64 = rng.random();
                let mut last = 0;
                for (a, v) in p.iter().enumerate() {
                    if *v > 0.0 {
                        last = a;
                        if r < *v {
                            return a;
                        }
                        r -= v;
                    }
                }
                last
            }
        })
        .collect()
}

/// Uniform choice among admissible actions.
pub fn random_action(mask: &[Vec<bool>], rng: &mut impl Rng) -> Vec<usize> {
    mask.iter()
        .map(|m| {
            let allowed: Vec<usize> = m.iter().enumerate().filter(|(_, v)| **v).map(|(a, _)| a).collect();
            allowed[rng.random_range(0..allowed.len())]
        })
        .collect()
}

/// Per-episode training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub steps: u64,
    /// Sum of rewards per agent.
    pub agent_returns: Vec<f64>,
    pub updates: usize,
    pub mean_critic_loss: f64,
    pub mean_actor_loss: f64,
}

/// All agents of one run with their replay buffers and exploration stream.
#[derive(Debug, Clone)]
pub struct Learner {
    pub agents: Vec<AgentNets>,
    pub buffers: Vec<ReplayBuffer>,
    pub learn: LearnParams,
    rng: ChaCha8Rng,
}

impl Learner {
    /// One agent per environment agent, initialized from `seed`.
    pub fn new(env: &Env, learn: &LearnParams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agents = Vec::new();
        let mut buffers = Vec::new();
        for a in 0..env.n_agents() {
            agents.push(AgentNets::new(
                env.observation_dim(a),
                env.agent_uavs(a).len(),
                env.actions_per_uav(),
                learn,
                &mut rng,
            )?);
            buffers.push(ReplayBuffer::new(learn.replay_capacity, rng.random()));
        }
        Ok(Self { agents, buffers, learn: learn.clone(), rng })
    }

    /// Actions of every agent for the current state.
    pub fn act(&mut self, env: &Env, greedy: bool) -> Result<Vec<AgentAction>> {
        let mut actions = Vec::with_capacity(self.agents.len());
        for (a, agent) in self.agents.iter().enumerate() {
            let obs = env.observe(a)?;
            let mask = env.action_mask(a)?;
            let dist = agent.policy_distribution(&obs, &mask)?;
            actions.push(AgentAction { per_uav_choice: select_action(&dist, greedy, &mut self.rng) });
        }
        Ok(actions)
    }

    /// Runs one exploratory episode from the current (reset) state, storing
    /// transitions and updating after every step.
    pub fn train_episode(&mut self, env: &mut Env) -> Result<EpisodeStats> {
        let n_agents = self.agents.len();
        let mut returns = vec![0.0; n_agents];
        let mut updates = 0;
        let mut critic_sum = 0.0;
        let mut actor_sum = 0.0;
        let mut steps = 0;
        while !env.state().done {
            let obs: Vec<Vec<f64>> = (0..n_agents).map(|a| env.observe(a)).collect::<Result<_>>()?;
            let masks: Vec<Vec<Vec<bool>>> = (0..n_agents).map(|a| env.action_mask(a)).collect::<Result<_>>()?;
            let mut actions = Vec::with_capacity(n_agents);
            for a in 0..n_agents {
                let dist = self.agents[a].policy_distribution(&obs[a], &masks[a])?;
                actions.push(AgentAction { per_uav_choice: select_action(&dist, false, &mut self.rng) });
            }
            let outcome = env.step(&actions)?;
            steps += 1;
            for a in 0..n_agents {
                returns[a] += outcome.rewards[a];
                self.buffers[a].push(Transition {
                    obs: obs[a].clone(),
                    mask: masks[a].clone(),
                    action: actions[a].per_uav_choice.clone(),
                    reward: outcome.rewards[a],
                    next_obs: env.observe(a)?,
                    next_mask: env.action_mask(a)?,
                    done: outcome.done,
                });
            }
            for a in 0..n_agents {
                let ready = self.buffers[a].len() >= self.learn.warmup_transitions.max(self.learn.batch_size.min(2));
                if !ready {
                    continue;
                }
                for _ in 0..self.learn.updates_per_step {
                    let idx = self.buffers[a].sample_indices(self.learn.batch_size);
                    let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffers[a].get(i)).collect();
                    let stats = update_agent(&mut self.agents[a], &batch, &self.learn)?;
                    critic_sum += stats.critic_loss;
                    actor_sum += stats.actor_loss;
                    updates += 1;
                }
            }
        }
        let denom = updates.max(1) as f64;
        Ok(EpisodeStats {
            steps,
            agent_returns: returns,
            updates,
            mean_critic_loss: critic_sum / denom,
            mean_actor_loss: actor_sum / denom,
        })
    }

    /// Writes one checkpoint per agent plus a manifest tying agents to
    /// their UAVs.
    pub fn save(&self, env: &Env, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut manifest = Vec::new();
        for (a, agent) in self.agents.iter().enumerate() {
            let file = format!("agent_{a}.json");
            agent.checkpoint(Some(&self.rng)).save(dir.join(&file))?;
            manifest.push(AgentManifest {
                agent: a,
                uavs: env.agent_uavs(a).iter().map(|u| u.0).collect(),
                checkpoint: file,
            });
        }
        let text = serde_json::to_string_pretty(&LearnerManifest { learn: self.learn.clone(), agents: manifest })?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(env: &Env, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: LearnerManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.agents.len() != env.n_agents() {
            return Err(Error::Shape(format!(
                "checkpoint has {} agents, environment has {}",
                manifest.agents.len(),
                env.n_agents()
            )));
        }
        let mut agents = Vec::new();
        let mut buffers = Vec::new();
        let mut rng = None;
        for m in &manifest.agents {
            let ck = Checkpoint::load(dir.join(&m.checkpoint))?;
            let nets = AgentNets::from_checkpoint(&ck, m.uavs.len(), env.actions_per_uav(), manifest.learn.entropy_alpha)?;
            if nets.actor.input_dim() != env.observation_dim(m.agent) {
                return Err(Error::Shape(format!("agent {} expects a different observation size", m.agent)));
            }
            if let Some(state) = &ck.rng {
                rng = Some(state.restore()?);
            }
            agents.push(nets);
            buffers.push(ReplayBuffer::new(manifest.learn.replay_capacity, m.agent as u64));
        }
        Ok(Self {
            agents,
            buffers,
            learn: manifest.learn,
            rng: rng.unwrap_or_else(|| ChaCha8Rng::seed_from_u64(0)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgentManifest {
    agent: usize,
    uavs: Vec<usize>,
    checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LearnerManifest {
    learn: LearnParams,
    agents: Vec<AgentManifest>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradient_check;

    fn learn() -> LearnParams {
        LearnParams { hidden_sizes: vec![8], ..LearnParams::default() }
    }

    fn agent(obs: usize, uavs: usize, actions: usize) -> AgentNets {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        AgentNets::new(obs, uavs, actions, &learn(), &mut rng).unwrap()
    }

    /// Linear networks with zero weights so every head equals its bias.
    fn tabular(uavs: usize, actions: usize, actor_bias: &[f64], q1: &[f64], q2: &[f64]) -> AgentNets {
        let lp = LearnParams { hidden_sizes: vec![], ..LearnParams::default() };
        let mut a = AgentNets::new(1, uavs, actions, &lp, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for net in [&mut a.actor, &mut a.critic1, &mut a.critic2, &mut a.target1, &mut a.target2] {
            net.weights[0].iter_mut().for_each(|w| *w = 0.0);
        }
        a.actor.biases[0] = actor_bias.to_vec();
        a.critic1.biases[0] = q1.to_vec();
        a.target1.biases[0] = q1.to_vec();
        a.critic2.biases[0] = q2.to_vec();
        a.target2.biases[0] = q2.to_vec();
        a
    }

    fn transition(uavs: usize, actions: usize, action: Vec<usize>, reward: f64, done: bool) -> Transition {
        Transition {
            obs: vec![1.0],
            mask: vec![vec![true; actions]; uavs],
            action,
            reward,
            next_obs: vec![1.0],
            next_mask: vec![vec![true; actions]; uavs],
            done,
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert!((entropy(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.7, 0.3]) - 0.610_864_302_054_893_7).abs() < 1e-12);
        let n = 6;
        assert!((entropy(&vec![1.0 / n as f64; n]) - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn policy_distribution_masks() {
        let a = tabular(1, 4, &[0.0; 4], &[0.0; 4], &[0.0; 4]);
        let d = a.policy_distribution(&[1.0], &[vec![true; 4]]).unwrap();
        assert!(d[0].iter().all(|p| (*p - 0.25).abs() < 1e-15));
        let d = a.policy_distribution(&[1.0], &[vec![false, true, false, false]]).unwrap();
        assert_eq!(d[0], vec![0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(a.policy_distribution(&[1.0], &[vec![false; 4]]), Err(Error::Contract(_))));
        assert!(matches!(a.policy_distribution(&[1.0], &[vec![true; 3]]), Err(Error::Shape(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = agent(5, 3, 6);
        for _ in 0..200 {
            let obs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mask: Vec<Vec<bool>> = (0..3).map(|_| (0..6).map(|j| j == 0 || rng.random_bool(0.5)).collect()).collect();
            let d = net.policy_distribution(&obs, &mask).unwrap();
            for (p, m) in d.iter().zip(&mask) {
                for (v, ok) in p.iter().zip(m) {
                    if !ok {
                        assert_eq!(*v, 0.0);
                    }
                }
                for _ in 0..5 {
                    let a = select_action(&d, false, &mut rng);
                    assert!(a.iter().zip(&mask).all(|(a, m)| m[*a]));
                }
            }
        }
    }

    #[test]
    fn q_target_trivial_cases() {
        let a = tabular(1, 2, &[0.0, 0.0], &[5.0, 1.0], &[4.0, 2.0]);
        let t = transition(1, 2, vec![0], 1.5, false);
        assert_eq!(q_target(&[&t], &a, 0.0, 0.2).unwrap(), vec![1.5]);
        let d = transition(1, 2, vec![0], 1.5, true);
        assert_eq!(q_target(&[&d], &a, 0.9, 0.2).unwrap(), vec![1.5]);
        assert!(q_target(&[], &a, 0.9, 0.2).is_err());
    }

    #[test]
    fn q_target_hand_computed() {
        // pi = softmax(ln 3, 0) = (0.75, 0.25); min Q = (4, 1)
        let a = tabular(1, 2, &[3f64.ln(), 0.0], &[5.0, 1.0], &[4.0, 2.0]);
        let t = transition(1, 2, vec![0], 1.0, false);
        let (gamma, alpha) = (0.9, 0.2);
        let v = 0.75 * (4.0 - alpha * 0.75f64.ln()) + 0.25 * (1.0 - alpha * 0.25f64.ln());
        let y = q_target(&[&t], &a, gamma, alpha).unwrap()[0];
        assert!((y - (1.0 + gamma * v)).abs() < 1e-12, "{y}");
    }

    #[test]
    fn joint_enumeration_matches_brute_force() {
        // two UAVs, three actions, one masked; min of sums is not additive
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h1: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h2: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dist = vec![vec![0.2, 0.8, 0.0], vec![0.5, 0.3, 0.2]];
        let stats = joint_stats(&dist, &h1, &h2, 3);
        let mut expected = 0.0;
        let mut cond = vec![vec![0.0; 3]; 2];
        for a in 0..3 {
            for b in 0..3 {
                let m = (h1[a] + h1[3 + b]).min(h2[a] + h2[3 + b]);
                expected += dist[0][a] * dist[1][b] * m;
                cond[0][a] += dist[1][b] * m;
                cond[1][b] += dist[0][a] * m;
            }
        }
        assert!((stats.expected_min_q - expected).abs() < 1e-12);
        for u in 0..2 {
            for a in 0..3 {
                if dist[u][a] > 0.0 {
                    assert!((stats.conditional[u][a] - cond[u][a]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn critic_trivial_losses() {
        // Q(s,a) = y exactly
        let mut a = tabular(1, 2, &[0.0, 0.0], &[1.0, 2.0], &[1.0, 2.0]);
        let t = transition(1, 2, vec![1], 0.0, true);
        let before = a.clone();
        let (l1, l2) = critic_update(&mut a, &[&t], &[2.0]).unwrap();
        assert_eq!((l1, l2), (0.0, 0.0));
        assert_eq!(a.critic1, before.critic1);
        // Q = 0, y = 1
        let mut a = tabular(1, 2, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]);
        let (l1, _) = critic_update(&mut a, &[&t], &[1.0]).unwrap();
        assert_eq!(l1, 1.0);
        assert!(matches!(critic_update(&mut a, &[&t], &[f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn critic_loss_decreases_on_fixed_batch() {
        let mut a = agent(4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch: Vec<Transition> = (0..16)
            .map(|_| Transition {
                obs: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                mask: vec![vec![true; 3]; 2],
                action: vec![rng.random_range(0..3), rng.random_range(0..3)],
                reward: 0.0,
                next_obs: vec![0.0; 4],
                next_mask: vec![vec![true; 3]; 2],
                done: true,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let targets: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut losses = Vec::new();
        for _ in 0..50 {
            losses.push(critic_update(&mut a, &refs, &targets).unwrap().0);
        }
        assert!(losses[49] < 0.85 * losses[0], "{losses:?}");
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn actor_sign_check() {
        let mut a = tabular(1, 3, &[0.0; 3], &[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]);
        a.entropy_alpha = 0.0;
        let t = transition(1, 3, vec![0], 0.0, false);
        let before = a.policy_distribution(&[1.0], &t.mask).unwrap()[0][1];
        actor_update(&mut a, &[&t]).unwrap();
        let after = a.policy_distribution(&[1.0], &t.mask).unwrap()[0][1];
        assert!(after > before);
    }

    #[test]
    fn actor_uniform_when_q_flat() {
        let mut a = tabular(1, 4, &[1.0, -0.5, 0.3, 0.0], &[2.0; 4], &[2.0; 4]);
        a.actor_opt.lr = 0.01;
        let t = transition(1, 4, vec![0], 0.0, false);
        let mut h = entropy(&a.policy_distribution(&[1.0], &t.mask).unwrap()[0]);
        for _ in 0..1000 {
            actor_update(&mut a, &[&t]).unwrap();
            let now = entropy(&a.policy_distribution(&[1.0], &t.mask).unwrap()[0]);
            if h < 4f64.ln() - 1e-3 {
                assert!(now >= h - 1e-9);
            }
            h = now;
        }
        assert!((h - 4f64.ln()).abs() < 1e-3, "{h}");
    }

    fn converge(alpha: f64, q: &[f64], steps: usize) -> Vec<f64> {
        let mut a = tabular(1, q.len(), &vec![0.0; q.len()], q, q);
        a.entropy_alpha = alpha;
        a.actor_opt.lr = 0.05;
        let t = transition(1, q.len(), vec![0], 0.0, false);
        for _ in 0..steps {
            actor_update(&mut a, &[&t]).unwrap();
        }
        a.policy_distribution(&[1.0], &t.mask).unwrap().remove(0)
    }

    #[test]
    fn actor_reaches_soft_optimum() {
        let q = [1.0, 0.6];
        let alpha = 0.5;
        let pi = converge(alpha, &q, 3000);
        let star = masked_softmax(&[q[0] / alpha, q[1] / alpha], &[true, true]).unwrap();
        let gap = pi.iter().zip(&star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-3, "{pi:?} vs {star:?}");
    }

    #[test]
    fn actor_near_greedy_for_tiny_alpha() {
        let pi = converge(1e-4, &[0.2, 0.9, 0.4], 3000);
        assert!(pi[1] > 0.98, "{pi:?}");
    }

    #[test]
    fn actor_and_critic_shapes_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lp = LearnParams { hidden_sizes: vec![64, 64], ..LearnParams::default() };
        let mut a = AgentNets::new(108, 2, 6, &lp, &mut rng).unwrap();
        let batch: Vec<Transition> = (0..32)
            .map(|_| Transition {
                obs: (0..108).map(|_| rng.random_range(-1.0..1.0)).collect(),
                mask: vec![vec![true; 6]; 2],
                action: vec![rng.random_range(0..6), rng.random_range(0..6)],
                reward: rng.random_range(0.0..1.0),
                next_obs: (0..108).map(|_| rng.random_range(-1.0..1.0)).collect(),
                next_mask: vec![vec![true; 6]; 2],
                done: false,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        for round in 0..2 {
            for net in [&a.actor, &a.critic1] {
                let x: Vec<f64> = (0..108).map(|_| rng.random_range(-1.0..1.0)).collect();
                let up: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
                let err = gradient_check(net, &x, &up, 100, 1e-5, &mut rng).unwrap();
                assert!(err < 1e-4, "round {round}: {err}");
            }
            for _ in 0..100 {
                update_agent(&mut a, &refs, &lp).unwrap();
            }
        }
    }

    #[test]
    fn replay_buffer_ring_and_uniformity() {
        let mut buf = ReplayBuffer::new(100, 1);
        for i in 0..150 {
            buf.push(transition(1, 2, vec![0], i as f64, false));
        }
        assert_eq!(buf.len(), 100);
        let rewards: Vec<f64> = (0..100).map(|i| buf.get(i).reward).collect();
        assert!(rewards.iter().all(|r| *r >= 50.0));

        let idx = buf.sample_indices(64);
        let mut sorted = idx.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 64);

        let mut counts = [0usize; 100];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for i in buf.sample_indices(10) {
                counts[i] += 1;
            }
        }
        let mean = draws as f64 / 100.0;
        let sd = (draws as f64 * 0.01 * 0.99).sqrt();
        assert!(counts.iter().all(|c| (*c as f64 - mean).abs() < 5.0 * sd), "{counts:?}");
    }

    #[test]
    fn greedy_selection_takes_mode() {
        let d = vec![vec![0.1, 0.6, 0.3], vec![0.0, 0.0, 1.0]];
        assert_eq!(select_action(&d, true, &mut ChaCha8Rng::seed_from_u64(0)), vec![1, 2]);
        let mask = vec![vec![true, false, true]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_ne!(random_action(&mask, &mut rng)[0], 1);
        }
    }
}
