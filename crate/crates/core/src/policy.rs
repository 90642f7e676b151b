//! Mixed discrete-continuous stochastic policy with a shared critic.
//!
//! One trunk `[obs, 64, 64, out]` feeds every head. The output vector is laid
//! out as
//!
//! ```text
//! [ logits (n·K) | means (n·P) | log-stds (n·P) | value ]
//! ```
//!
//! for `n` agents, `K` skills and `P` continuous parameters per agent (the
//! whole skill library). A sampled action first draws each agent's skill, then
//! only that skill's parameters: `p = low + (high − low) · sigmoid(μ + σ·ε)`.
//! The noise `ε` and the pre-squash value are stored in the action so it can
//! be replayed under updated parameters.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{AgentAction, EnvSchema, JointAction, JointState};
use crate::error::{invalid, Error, Result};
use crate::nn::{ForwardCache, NetworkCheckpoint, NetworkParams};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Mean heads are clamped to `±MEAN_LIMIT` (zero gradient outside), which
/// keeps sampled pre-squash values near the region the squash resolves.
pub const MEAN_LIMIT: f64 = 20.0;
/// Scale applied to the initial output layer, so the initial policy is close
/// to uniform with unit-σ Gaussians centered in their boxes.
const OUTPUT_INIT_SCALE: f64 = 0.01;

/// Positions of the heads in the network output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub n_agents: usize,
    pub n_skills: usize,
    pub params_per_agent: usize,
    pub obs_dim: usize,
}

impl HeadLayout {
    pub fn of(schema: &EnvSchema) -> Self {
        Self {
            n_agents: schema.n_agents,
            n_skills: schema.n_skills(),
            params_per_agent: schema.params_per_agent(),
            obs_dim: schema.obs_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.n_agents * self.n_skills + 2 * self.n_agents * self.params_per_agent + 1
    }

    pub fn logit(&self, agent: usize, skill: usize) -> usize {
        agent * self.n_skills + skill
    }

    pub fn mean(&self, agent: usize, param: usize) -> usize {
        self.n_agents * self.n_skills + agent * self.params_per_agent + param
    }

    pub fn log_std(&self, agent: usize, param: usize) -> usize {
        self.mean(agent, param) + self.n_agents * self.params_per_agent
    }

    pub fn value(&self) -> usize {
        self.output_dim() - 1
    }
}

/// Decoded network output.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    /// `logits[agent][skill]`.
    pub logits: Vec<Vec<f64>>,
    /// `means[agent][param]` over the agent's whole parameter list.
    /// Clamped to `±MEAN_LIMIT`.
    pub means: Vec<Vec<f64>>,
    /// Clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_stds: Vec<Vec<f64>>,
    /// Whether the clamp was inactive (the log-std then has a gradient).
    log_std_free: Vec<Vec<bool>>,
    /// Likewise for the mean clamp.
    mean_free: Vec<Vec<bool>>,
    pub value: f64,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Maps the real line into the open interval `(low, high)`.
pub fn squash(u: f64, low: f64, high: f64) -> f64 {
    low + (high - low) * sigmoid(u)
}

/// `d squash / du`.
pub fn squash_derivative(u: f64, low: f64, high: f64) -> f64 {
    let s = sigmoid(u);
    (high - low) * s * (1.0 - s)
}

/// `log d squash / du`, stable for large `|u|`.
fn log_squash_derivative(u: f64, low: f64, high: f64) -> f64 {
    // log σ(u) + log σ(−u) = −|u| − 2·log(1 + e^{−|u|})
    (high - low).ln() - u.abs() - 2.0 * (-u.abs()).exp().ln_1p()
}

/// Inverse of [`squash`].
pub fn unsquash(p: f64, low: f64, high: f64) -> f64 {
    let x = ((p - low) / (high - low)).clamp(1e-300, 1.0 - 1e-16);
    (x / (1.0 - x)).ln()
}

impl PolicyOutput {
    /// Decodes a raw network output.
    pub fn from_raw(layout: &HeadLayout, raw: &[f64]) -> Result<Self> {
        if raw.len() != layout.output_dim() {
            return Err(invalid(format!(
                "policy output has length {}, layout needs {}",
                raw.len(),
                layout.output_dim()
            )));
        }
        let n = layout.n_agents;
        let p = layout.params_per_agent;
        let logits = (0..n)
            .map(|i| (0..layout.n_skills).map(|k| raw[layout.logit(i, k)]).collect())
            .collect();
        let raw_means: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..p).map(|j| raw[layout.mean(i, j)]).collect())
            .collect();
        let mean_free = raw_means
            .iter()
            .map(|m| m.iter().map(|v| v.abs() <= MEAN_LIMIT).collect())
            .collect();
        let means = raw_means
            .iter()
            .map(|m| m.iter().map(|v| v.clamp(-MEAN_LIMIT, MEAN_LIMIT)).collect())
            .collect();
        let mut log_stds = Vec::with_capacity(n);
        let mut log_std_free = Vec::with_capacity(n);
        for i in 0..n {
            let raw_ls: Vec<f64> = (0..p).map(|j| raw[layout.log_std(i, j)]).collect();
            log_std_free.push(raw_ls.iter().map(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(v)).collect());
            log_stds.push(raw_ls.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect());
        }
        Ok(Self {
            logits,
            means,
            log_stds,
            log_std_free,
            mean_free,
            value: raw[layout.value()],
        })
    }

    pub fn skill_probs(&self, agent: usize) -> Vec<f64> {
        softmax(&self.logits[agent])
    }
}

/// Gradient of a scalar with respect to the raw network output.
pub type HeadGrad = Vec<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    net: NetworkParams,
    schema: EnvSchema,
    layout: HeadLayout,
}

impl Policy {
    pub fn new(schema: &EnvSchema, seed: u64) -> Result<Self> {
        let layout = HeadLayout::of(schema);
        let mut net = NetworkParams::init(&[layout.obs_dim, 64, 64, layout.output_dim()], seed)?;
        let last = net.num_layers() - 1;
        net.weight_mut(last).iter_mut().for_each(|w| *w *= OUTPUT_INIT_SCALE);
        Self::from_network(schema, net)
    }

    /// Wraps any network whose input and output sizes fit the schema.
    pub fn from_network(schema: &EnvSchema, net: NetworkParams) -> Result<Self> {
        let layout = HeadLayout::of(schema);
        if net.input_dim() != layout.obs_dim || net.output_dim() != layout.output_dim() {
            return Err(Error::Config(format!(
                "policy network is {}→{}, {} needs {}→{}",
                net.input_dim(),
                net.output_dim(),
                schema.name,
                layout.obs_dim,
                layout.output_dim()
            )));
        }
        Ok(Self {
            net,
            schema: schema.clone(),
            layout,
        })
    }

    pub fn network(&self) -> &NetworkParams {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut NetworkParams {
        &mut self.net
    }

    pub fn schema(&self) -> &EnvSchema {
        &self.schema
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn forward(&self, state: &JointState) -> Result<(PolicyOutput, ForwardCache)> {
        self.forward_obs(&state.flatten(&self.schema))
    }

    pub fn forward_obs(&self, obs: &[f64]) -> Result<(PolicyOutput, ForwardCache)> {
        let (raw, cache) = self.net.forward(obs)?;
        Ok((PolicyOutput::from_raw(&self.layout, &raw)?, cache))
    }

    pub fn output(&self, state: &JointState) -> Result<PolicyOutput> {
        PolicyOutput::from_raw(&self.layout, &self.net.predict(&state.flatten(&self.schema))?)
    }

    /// Parameter gradients of `head_grad · output`.
    pub fn backward(&self, cache: &ForwardCache, head_grad: &[f64], grads: &mut NetworkParams) -> Result<()> {
        self.net.backward_into(cache, head_grad, grads)?;
        Ok(())
    }

    fn param_index(&self, skill: usize, j: usize) -> usize {
        self.schema.param_offset(skill) + j
    }

    /// Draws a joint action and returns it with its log-probability.
    pub fn sample(&self, out: &PolicyOutput, rng: &mut impl Rng) -> (JointAction, f64) {
        let mut agents = Vec::with_capacity(self.layout.n_agents);
        for i in 0..self.layout.n_agents {
            let probs = out.skill_probs(i);
            let r: f64 = rng.random();
            let mut acc = 0.0;
            let mut skill = probs.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if r < acc {
                    skill = k;
                    break;
                }
            }
            let n_params = self.schema.skills[skill].params.len();
            let noise: Vec<f64> = (0..n_params).map(|_| StandardNormal.sample(rng)).collect();
            agents.push(self.realize(out, i, skill, noise));
        }
        let a = JointAction { agents };
        let lp = self.log_prob(out, &a).expect("sampled action fits the layout");
        (a, lp)
    }

    /// Most likely skill per agent with parameters at the squashed mean.
    pub fn act_deterministic(&self, out: &PolicyOutput) -> JointAction {
        let agents = (0..self.layout.n_agents)
            .map(|i| {
                let skill = out.logits[i]
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (k, &v)| if v > best.1 { (k, v) } else { best },
                    )
                    .0;
                let n = self.schema.skills[skill].params.len();
                self.realize(out, i, skill, vec![0.0; n])
            })
            .collect();
        JointAction { agents }
    }

    /// Builds agent `i`'s action for `skill` from standard-normal `noise`.
    pub fn realize(&self, out: &PolicyOutput, agent: usize, skill: usize, noise: Vec<f64>) -> AgentAction {
        let spec = &self.schema.skills[skill];
        let mut pre_squash = Vec::with_capacity(noise.len());
        let mut params = Vec::with_capacity(noise.len());
        for (j, (eps, p)) in noise.iter().zip(&spec.params).enumerate() {
            let idx = self.param_index(skill, j);
            let u = out.means[agent][idx] + out.log_stds[agent][idx].exp() * eps;
            pre_squash.push(u);
            params.push(squash(u, p.low, p.high));
        }
        AgentAction {
            skill,
            params,
            pre_squash,
            noise,
        }
    }

    /// Re-draws `action` under `out` with its recorded noise.
    pub fn replay(&self, out: &PolicyOutput, action: &JointAction) -> JointAction {
        JointAction {
            agents: action
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| self.realize(out, i, a.skill, a.noise.clone()))
                .collect(),
        }
    }

    fn check_action(&self, action: &JointAction) -> Result<()> {
        if action.agents.len() != self.layout.n_agents {
            return Err(invalid("action has the wrong number of agents"));
        }
        for a in &action.agents {
            if a.skill >= self.layout.n_skills {
                return Err(invalid(format!("skill {} out of range", a.skill)));
            }
            if a.params.len() != self.schema.skills[a.skill].params.len() {
                return Err(invalid("parameter count does not match the skill"));
            }
        }
        Ok(())
    }

    fn pre_squash(&self, a: &AgentAction, j: usize) -> f64 {
        match a.pre_squash.get(j) {
            Some(&u) => u,
            None => {
                let spec = &self.schema.skills[a.skill].params[j];
                unsquash(a.params[j], spec.low, spec.high)
            }
        }
    }

    /// Log-density of `action`: categorical terms plus Gaussian densities of
    /// the pre-squash values with the change-of-variables correction.
    pub fn log_prob(&self, out: &PolicyOutput, action: &JointAction) -> Result<f64> {
        self.check_action(action)?;
        let mut lp = 0.0;
        for (i, a) in action.agents.iter().enumerate() {
            lp += log_softmax(&out.logits[i])[a.skill];
            for (j, spec) in self.schema.skills[a.skill].params.iter().enumerate() {
                let idx = self.param_index(a.skill, j);
                let (mu, ls) = (out.means[i][idx], out.log_stds[i][idx]);
                let u = self.pre_squash(a, j);
                let z = (u - mu) / ls.exp();
                lp += -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln();
                lp -= log_squash_derivative(u, spec.low, spec.high);
            }
        }
        Ok(lp)
    }

    /// Gradient of [`Self::log_prob`] with respect to the raw output, holding
    /// the recorded pre-squash values fixed.
    pub fn log_prob_grad(&self, out: &PolicyOutput, action: &JointAction) -> Result<HeadGrad> {
        self.check_action(action)?;
        let l = &self.layout;
        let mut g = vec![0.0; l.output_dim()];
        for (i, a) in action.agents.iter().enumerate() {
            let probs = out.skill_probs(i);
            for (k, p) in probs.iter().enumerate() {
                g[l.logit(i, k)] = if k == a.skill { 1.0 } else { 0.0 } - p;
            }
            for j in 0..self.schema.skills[a.skill].params.len() {
                let idx = self.param_index(a.skill, j);
                let (mu, ls) = (out.means[i][idx], out.log_stds[i][idx]);
                let var = (2.0 * ls).exp();
                let d = self.pre_squash(a, j) - mu;
                if out.mean_free[i][idx] {
                    g[l.mean(i, idx)] = d / var;
                }
                if out.log_std_free[i][idx] {
                    g[l.log_std(i, idx)] = d * d / var - 1.0;
                }
            }
        }
        Ok(g)
    }

    /// Sum of categorical entropies and of the pre-squash Gaussian entropies
    /// of every parameter head.
    pub fn entropy(&self, out: &PolicyOutput) -> f64 {
        let mut h = 0.0;
        for i in 0..self.layout.n_agents {
            let lp = log_softmax(&out.logits[i]);
            h -= lp.iter().map(|l| l.exp() * l).sum::<f64>();
            for ls in &out.log_stds[i] {
                h += 0.5 * (2.0 * PI * std::f64::consts::E).ln() + ls;
            }
        }
        h
    }

    pub fn entropy_grad(&self, out: &PolicyOutput) -> HeadGrad {
        let l = &self.layout;
        let mut g = vec![0.0; l.output_dim()];
        for i in 0..l.n_agents {
            let lp = log_softmax(&out.logits[i]);
            let h: f64 = -lp.iter().map(|v| v.exp() * v).sum::<f64>();
            for (k, v) in lp.iter().enumerate() {
                g[l.logit(i, k)] = -v.exp() * (v + h);
            }
            for j in 0..l.params_per_agent {
                if out.log_std_free[i][j] {
                    g[l.log_std(i, j)] = 1.0;
                }
            }
        }
        g
    }

    /// Reparameterization: pulls `d_params[i][j]` (a gradient with respect to
    /// agent `i`'s chosen-skill parameter `j`) back to the mean and log-std
    /// heads through `p = squash(μ + σ·ε)` with the recorded `ε`. Skill
    /// logits receive nothing.
    pub fn reparam_grad(&self, out: &PolicyOutput, action: &JointAction, d_params: &[Vec<f64>]) -> Result<HeadGrad> {
        self.check_action(action)?;
        let l = &self.layout;
        let mut g = vec![0.0; l.output_dim()];
        for (i, a) in action.agents.iter().enumerate() {
            for (j, spec) in self.schema.skills[a.skill].params.iter().enumerate() {
                let idx = self.param_index(a.skill, j);
                let (mu, ls) = (out.means[i][idx], out.log_stds[i][idx]);
                let eps = a.noise.get(j).copied().unwrap_or(0.0);
                let u = mu + ls.exp() * eps;
                let dpdu = squash_derivative(u, spec.low, spec.high) * d_params[i][j];
                if out.mean_free[i][idx] {
                    g[l.mean(i, idx)] += dpdu;
                }
                if out.log_std_free[i][idx] {
                    g[l.log_std(i, idx)] += dpdu * ls.exp() * eps;
                }
            }
        }
        Ok(g)
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            layout: self.layout,
            schema: self.schema.clone(),
            network: self.net.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ckpt: PolicyCheckpoint) -> Result<Self> {
        if ckpt.format != POLICY_FORMAT || ckpt.version != POLICY_VERSION {
            return Err(Error::Format(format!(
                "expected {POLICY_FORMAT} v{POLICY_VERSION}, found {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.layout != HeadLayout::of(&ckpt.schema) {
            return Err(Error::Format("head layout does not match the recorded schema".into()));
        }
        Self::from_network(&ckpt.schema, NetworkParams::from_checkpoint(ckpt.network)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: PolicyCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_checkpoint(ckpt)
    }
}

pub const POLICY_FORMAT: &str = "synergy-policy";
pub const POLICY_VERSION: u32 = 1;

/// Network checkpoint plus the head-layout manifest and the schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub layout: HeadLayout,
    pub schema: EnvSchema,
    pub network: NetworkCheckpoint,
}
