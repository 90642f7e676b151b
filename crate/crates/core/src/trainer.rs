//! The training loop: rollouts with reward shaping, `f^joint` co-training,
//! PPO, and the analytic gradient of `E[r2]`.
//!
//! One outer iteration is
//!
//! 1. collect `n_steps` transitions from each of `workers` environments;
//! 2. if the method uses `f^joint`, append the batch to its buffer and fit it;
//! 3. replace every extrinsic reward with `intrinsic + λ · extrinsic`;
//! 4. run PPO on the shaped batch, adding the reparameterized gradient of
//!    `r2` for the `r2` method;
//! 5. emit a [`MetricsRecord`].
//!
//! The single-agent models are pretrained once before the loop and never
//! change afterwards.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{pretrain_single, Composition, FitConfig, ForwardModel, ModelInput, ModelSample};
use crate::envs::{Env, EnvConfig, JointAction, JointState};
use crate::error::{invalid, Error, Result};
use crate::nn::{clip_gradients, AdamConfig, AdamState, NetworkParams};
use crate::policy::{HeadGrad, Policy};
use crate::rewards::{self, MetricWeights, RewardConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Compositional prediction error.
    R1,
    /// Prediction disparity with the analytic gradient of `E[r2]`.
    R2,
    /// Prediction disparity through the score function only.
    R2NoAnalytic,
    /// Prediction error of `f^joint`.
    SurpriseJoint,
    /// Sum of each agent's single-model prediction error.
    SurpriseSeparate,
    ExtrinsicOnly,
    /// Uniform random actions; the policy is never updated.
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::R1,
        Method::R2,
        Method::R2NoAnalytic,
        Method::SurpriseJoint,
        Method::SurpriseSeparate,
        Method::ExtrinsicOnly,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::R1 => "r1",
            Method::R2 => "r2",
            Method::R2NoAnalytic => "r2_no_analytic",
            Method::SurpriseJoint => "surprise_joint",
            Method::SurpriseSeparate => "surprise_separate",
            Method::ExtrinsicOnly => "extrinsic_only",
            Method::Random => "random",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| invalid(format!("unknown method {name:?}")))
    }

    pub fn needs_singles(self) -> bool {
        matches!(
            self,
            Method::R1 | Method::R2 | Method::R2NoAnalytic | Method::SurpriseSeparate
        )
    }

    pub fn needs_joint(self) -> bool {
        matches!(self, Method::R2 | Method::R2NoAnalytic | Method::SurpriseJoint)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    pub grad_clip: f64,
    pub n_steps: usize,
    pub minibatches: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            entropy_coef: 0.01,
            vf_coef: 0.5,
            grad_clip: 0.5,
            n_steps: 10,
            minibatches: 4,
            epochs: 4,
            lr: 1e-3,
        }
    }
}

/// How `f^joint` is fitted during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointFitConfig {
    /// Adam steps per outer iteration.
    pub steps_per_update: usize,
    pub batch_size: usize,
    /// Only the most recent transitions are kept.
    pub buffer_capacity: usize,
    /// Random-policy transitions used to fit `f^joint` before training.
    pub pretrain_samples: usize,
    pub lr: f64,
}

impl Default for JointFitConfig {
    fn default() -> Self {
        Self {
            steps_per_update: 16,
            batch_size: 32,
            buffer_capacity: 50_000,
            pretrain_samples: 0,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub lambda: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub ppo: PpoConfig,
    pub workers: usize,
    /// Random transitions per single-agent model.
    pub pretrain_samples: usize,
    pub pretrain_fit: FitConfig,
    pub joint_fit: JointFitConfig,
    pub total_env_steps: usize,
    pub seed: u64,
    pub metric_weights: MetricWeights,
    pub composition: Composition,
    /// Weight of the analytic `E[r2]` gradient. It is further divided by the
    /// batch advantage std, matching the normalization of the PPO term.
    pub analytic_coef: f64,
    /// Credit `r2` only to earlier actions in the score-function term (the
    /// `τ̄` form of the objective) instead of treating PPO as a black box.
    pub strict_credit: bool,
    /// Episodes in the rolling success window.
    pub success_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::R2,
            lambda: 10.0,
            gamma: 0.99,
            gae_lambda: 0.95,
            ppo: PpoConfig::default(),
            workers: 8,
            pretrain_samples: 10_000,
            pretrain_fit: FitConfig::default(),
            joint_fit: JointFitConfig::default(),
            total_env_steps: 50_000,
            seed: 0,
            metric_weights: MetricWeights::default(),
            composition: Composition::Fixed,
            analytic_coef: 1.0,
            strict_credit: false,
            success_window: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} out of range")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda");
        }
        let p = &self.ppo;
        if !(p.clip > 0.0 && p.entropy_coef >= 0.0 && p.vf_coef >= 0.0 && p.grad_clip > 0.0 && p.lr > 0.0) {
            return bad("ppo coefficients");
        }
        if p.n_steps == 0 || p.epochs == 0 || p.minibatches == 0 || p.minibatches > p.n_steps * self.workers {
            return bad("ppo batch layout");
        }
        if self.workers == 0 || self.success_window == 0 {
            return bad("workers and success_window");
        }
        if self.method.needs_singles() && self.pretrain_samples == 0 {
            return bad("pretrain_samples");
        }
        let j = &self.joint_fit;
        if j.batch_size == 0 || j.buffer_capacity == 0 || j.lr <= 0.0 {
            return bad("joint_fit");
        }
        if !(self.analytic_coef.is_finite() && self.analytic_coef >= 0.0) {
            return bad("analytic_coef");
        }
        self.reward_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            lambda: self.lambda,
            metric_weights: self.metric_weights,
            composition: self.composition,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.workers * self.ppo.n_steps
    }

    /// Outer iterations needed to cover `total_env_steps`.
    pub fn iterations(&self) -> usize {
        self.total_env_steps.div_ceil(self.batch_size())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: JointState,
    pub action: JointAction,
    pub extrinsic: u8,
    pub intrinsic: f64,
    pub shaped_reward: f64,
    pub next_state: JointState,
    pub log_prob: f64,
    pub value: f64,
    pub done: bool,
}

/// `n_steps` consecutive transitions per worker, stored worker after worker.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    pub n_workers: usize,
    pub n_steps: usize,
    /// Critic value of each worker's last next-state (0 when that step ended the episode).
    pub bootstrap: Vec<f64>,
    /// Success flag of every episode that finished during the rollout, in order.
    pub finished: Vec<u8>,
}

impl RolloutBatch {
    pub fn worker(&self, w: usize) -> &[Transition] {
        &self.transitions[w * self.n_steps..(w + 1) * self.n_steps]
    }
}

/// Generalized advantage estimates and the matching returns.
#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    pub raw: Vec<f64>,
    /// `raw` shifted and scaled to mean 0 and standard deviation 1.
    pub normalized: Vec<f64>,
    pub returns: Vec<f64>,
}

pub fn compute_advantages(batch: &RolloutBatch, gamma: f64, gae_lambda: f64) -> Advantages {
    let mut raw = vec![0.0; batch.transitions.len()];
    for w in 0..batch.n_workers {
        let base = w * batch.n_steps;
        let mut next_value = batch.bootstrap[w];
        let mut gae = 0.0;
        for t in (0..batch.n_steps).rev() {
            let tr = &batch.transitions[base + t];
            let live = if tr.done { 0.0 } else { 1.0 };
            let delta = tr.shaped_reward + gamma * next_value * live - tr.value;
            gae = delta + gamma * gae_lambda * live * gae;
            raw[base + t] = gae;
            next_value = tr.value;
        }
    }
    let returns = raw.iter().zip(&batch.transitions).map(|(a, t)| a + t.value).collect();
    Advantages {
        normalized: normalize(&raw),
        raw,
        returns,
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (mean, (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn normalize(x: &[f64]) -> Vec<f64> {
    let (mean, sd) = mean_sd(x);
    x.iter().map(|v| (v - mean) / (sd + 1e-8)).collect()
}

impl Advantages {
    /// Factor applied by advantage normalization. The analytic reward
    /// gradient is scaled by it too, so it keeps the weight it has relative
    /// to the rest of the shaped return.
    pub fn scale(&self) -> f64 {
        1.0 / (mean_sd(&self.raw).1 + 1e-8)
    }
}

/// Clipped surrogate `min(ρ·Â, clip(ρ, 1 ± ε)·Â)` for one sample.
pub fn ppo_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// `d surrogate / d log π`: the unclipped branch is active only when it is the minimum.
fn surrogate_logp_grad(ratio: f64, advantage: f64, clip: f64) -> f64 {
    if ratio * advantage <= ratio.clamp(1.0 - clip, 1.0 + clip) * advantage {
        ratio * advantage
    } else {
        0.0
    }
}

/// Gradient of `r2` with respect to each agent's chosen-skill parameters.
pub type ActionGradFn<'a> = dyn Fn(&JointState, &JointAction) -> Result<Vec<Vec<f64>>> + 'a;

/// Losses of one minibatch, all averaged per sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Largest `|ρ − 1|` seen in the minibatch.
    pub max_ratio_deviation: f64,
}

/// Gradient of the PPO loss on `indices`, plus `analytic_coef` times the
/// reparameterized gradient of `r2` when `analytic` is given. Returned
/// gradients are for minimization and not yet clipped.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_gradient(
    policy: &Policy,
    batch: &RolloutBatch,
    adv: &Advantages,
    indices: &[usize],
    ppo: &PpoConfig,
    analytic: Option<&ActionGradFn>,
    analytic_coef: f64,
) -> Result<(NetworkParams, LossReport)> {
    let mut grads = policy.network().zeros_like();
    let mut report = LossReport::default();
    let m = indices.len() as f64;
    let value_idx = policy.layout().value();
    for &i in indices {
        let tr = &batch.transitions[i];
        let (out, cache) = policy.forward(&tr.state)?;
        let lp = policy.log_prob(&out, &tr.action)?;
        let ratio = (lp - tr.log_prob).exp();
        let a = adv.normalized[i];
        let surr = ppo_surrogate(ratio, a, ppo.clip);
        let ent = policy.entropy(&out);
        let err = out.value - adv.returns[i];
        report.policy_loss -= surr / m;
        report.value_loss += 0.5 * err * err / m;
        report.entropy += ent / m;
        report.max_ratio_deviation = report.max_ratio_deviation.max((ratio - 1.0).abs());

        let d_lp = -surrogate_logp_grad(ratio, a, ppo.clip) / m;
        let mut head: HeadGrad = policy
            .log_prob_grad(&out, &tr.action)?
            .into_iter()
            .map(|g| g * d_lp)
            .collect();
        for (h, e) in head.iter_mut().zip(policy.entropy_grad(&out)) {
            *h -= ppo.entropy_coef * e / m;
        }
        head[value_idx] += ppo.vf_coef * err / m;
        if let Some(grad_fn) = analytic {
            let replayed = policy.replay(&out, &tr.action);
            let dp = grad_fn(&tr.state, &replayed)?;
            for (h, g) in head.iter_mut().zip(policy.reparam_grad(&out, &replayed, &dp)?) {
                *h -= analytic_coef * g / m;
            }
        }
        policy.backward(&cache, &head, &mut grads)?;
    }
    let total = report.policy_loss + ppo.vf_coef * report.value_loss - ppo.entropy_coef * report.entropy;
    if !total.is_finite() || !grads.is_finite() {
        return Err(Error::Numeric("non-finite PPO loss".into()));
    }
    Ok((grads, report))
}

/// `epochs` passes over `minibatches` shuffled minibatches, each followed by
/// gradient clipping and an Adam step. Returns the mean per-minibatch losses
/// and the ratio deviation of the very first minibatch.
pub fn ppo_update(
    policy: &mut Policy,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    adv: &Advantages,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    analytic: Option<&ActionGradFn>,
) -> Result<LossReport> {
    let ppo = &cfg.ppo;
    let n = batch.transitions.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut mean = LossReport::default();
    let mut first_dev = None;
    let steps = (ppo.epochs * ppo.minibatches) as f64;
    for _ in 0..ppo.epochs {
        order.shuffle(rng);
        for k in 0..ppo.minibatches {
            let idx = &order[k * n / ppo.minibatches..(k + 1) * n / ppo.minibatches];
            let (mut grads, r) =
                minibatch_gradient(policy, batch, adv, idx, ppo, analytic, cfg.analytic_coef * adv.scale())?;
            first_dev.get_or_insert(r.max_ratio_deviation);
            clip_gradients(&mut grads, ppo.grad_clip);
            adam.step(policy.network_mut(), &grads)?;
            mean.policy_loss += r.policy_loss / steps;
            mean.value_loss += r.value_loss / steps;
            mean.entropy += r.entropy / steps;
        }
    }
    mean.max_ratio_deviation = first_dev.unwrap_or(0.0);
    Ok(mean)
}

/// One row of the learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: usize,
    pub env_steps: usize,
    /// Mean success over the most recent completed episodes (0 before any).
    pub success_rate: f64,
    pub mean_intrinsic: f64,
    pub mean_extrinsic: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub joint_model_loss: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    /// Metrics of the untrained policy, before any environment step.
    pub initial: MetricsRecord,
    pub records: Vec<MetricsRecord>,
}

impl TrainHistory {
    pub fn final_success(&self) -> f64 {
        self.records.last().unwrap_or(&self.initial).success_rate
    }

    /// First env-step count at which the rolling success reaches `level`.
    pub fn steps_to(&self, level: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.success_rate >= level)
            .map(|r| r.env_steps)
    }
}

fn stream_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Seed of agent `agent`'s single-model pretraining in a run seeded `run_seed`.
pub fn single_model_seed(run_seed: u64, agent: usize) -> u64 {
    stream_seed(run_seed, 100 + agent as u64)
}

/// Pretrains the single-agent models a method needs, one per agent.
pub fn pretrain_singles(cfg: &TrainConfig, env_cfg: &EnvConfig) -> Result<Vec<ForwardModel>> {
    (0..env_cfg.n_agents)
        .map(|i| {
            Ok(pretrain_single(
                env_cfg,
                i,
                cfg.pretrain_samples,
                single_model_seed(cfg.seed, i),
                &cfg.pretrain_fit,
            )?
            .model)
        })
        .collect()
}

struct Worker {
    rng: ChaCha8Rng,
    state: JointState,
    episode: u64,
    id: u64,
}

impl Worker {
    fn episode_seed(&self) -> u64 {
        (self.id << 40) | self.episode
    }
}

/// Mutable state of one training run.
pub struct Trainer {
    cfg: TrainConfig,
    reward: RewardConfig,
    env: Env,
    policy: Policy,
    adam: AdamState,
    singles: Vec<ForwardModel>,
    joint: Option<(ForwardModel, AdamState)>,
    buffer: VecDeque<ModelSample>,
    workers: Vec<Worker>,
    update_rng: ChaCha8Rng,
    window: VecDeque<u8>,
    episodes: usize,
    env_steps: usize,
    updates: usize,
}

impl Trainer {
    /// Builds a run, pretraining the single-agent models if the method needs them.
    pub fn new(cfg: TrainConfig, env_cfg: EnvConfig) -> Result<Self> {
        let singles = if cfg.method.needs_singles() {
            pretrain_singles(&cfg, &env_cfg)?
        } else {
            Vec::new()
        };
        Self::with_singles(cfg, env_cfg, singles)
    }

    /// Builds a run around already-trained single-agent models, which must be
    /// one per agent in agent order when the method needs them.
    pub fn with_singles(cfg: TrainConfig, env_cfg: EnvConfig, singles: Vec<ForwardModel>) -> Result<Self> {
        cfg.validate()?;
        let env = Env::new(env_cfg)?;
        let schema = env.schema().clone();
        if cfg.method.needs_singles() {
            if singles.len() != schema.n_agents {
                return Err(Error::Config(format!(
                    "{} needs {} single-agent models",
                    cfg.method.name(),
                    schema.n_agents
                )));
            }
            for (i, m) in singles.iter().enumerate() {
                if m.input_spec() != (ModelInput::Single { agent: i })
                    || m.schema().obs_dim() != schema.obs_dim()
                    || m.schema().skills != schema.skills
                {
                    return Err(Error::Config(format!(
                        "single-agent model {i} does not fit {}",
                        schema.name
                    )));
                }
            }
        }
        let policy = Policy::new(&schema, stream_seed(cfg.seed, 1))?;
        let adam = AdamState::new(
            policy.network(),
            AdamConfig {
                lr: cfg.ppo.lr,
                ..AdamConfig::default()
            },
        );
        let mut update_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 2));
        let mut buffer = VecDeque::new();
        let joint = if cfg.method.needs_joint() {
            let mut model = ForwardModel::new(&schema, ModelInput::Joint, stream_seed(cfg.seed, 3))?;
            let mut adam_j = AdamState::new(model.network(), adam_j_config(&cfg));
            if cfg.joint_fit.pretrain_samples > 0 {
                let samples = crate::dynamics::collect_random(
                    &env,
                    cfg.joint_fit.pretrain_samples,
                    &mut update_rng,
                    |s, a, n| model.sample(s, a, &n.env),
                )?;
                let refs: Vec<&ModelSample> = samples.iter().collect();
                let fit = FitConfig {
                    adam: adam_j_config(&cfg),
                    ..cfg.pretrain_fit.clone()
                };
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 4));
                crate::dynamics::fit_model(&mut model, &refs, &fit, &mut rng)?;
                adam_j = AdamState::new(model.network(), adam_j_config(&cfg));
                buffer.extend(samples);
                while buffer.len() > cfg.joint_fit.buffer_capacity {
                    buffer.pop_front();
                }
            }
            Some((model, adam_j))
        } else {
            None
        };
        let workers = (0..cfg.workers as u64)
            .map(|id| Worker {
                rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1000 + id)),
                state: env.reset(id << 40),
                episode: 0,
                id,
            })
            .collect();
        Ok(Self {
            reward: cfg.reward_config(),
            cfg,
            env,
            policy,
            adam,
            singles,
            joint,
            buffer,
            workers,
            update_rng,
            window: VecDeque::new(),
            episodes: 0,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn joint_model(&self) -> Option<&ForwardModel> {
        self.joint.as_ref().map(|(m, _)| m)
    }

    pub fn single_models(&self) -> &[ForwardModel] {
        &self.singles
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn initial_metrics(&self) -> MetricsRecord {
        MetricsRecord {
            update: 0,
            env_steps: 0,
            success_rate: 0.0,
            mean_intrinsic: 0.0,
            mean_extrinsic: 0.0,
            policy_loss: 0.0,
            value_loss: 0.0,
            joint_model_loss: 0.0,
            episodes: 0,
        }
    }

    /// Runs the current policy (uniform random for [`Method::Random`]) for
    /// `n_steps` in every worker. Rewards are not shaped yet.
    pub fn collect_rollouts(&mut self) -> Result<RolloutBatch> {
        let n_steps = self.cfg.ppo.n_steps;
        let mut transitions = Vec::with_capacity(self.cfg.batch_size());
        let mut bootstrap = Vec::with_capacity(self.workers.len());
        let mut finished = Vec::new();
        let random = self.cfg.method == Method::Random;
        for w in &mut self.workers {
            for _ in 0..n_steps {
                let state = w.state.clone();
                let (action, log_prob, value) = if random {
                    (self.env.schema().random_action(&mut w.rng), 0.0, 0.0)
                } else {
                    let out = self.policy.output(&state)?;
                    let (a, lp) = self.policy.sample(&out, &mut w.rng);
                    (a, lp, out.value)
                };
                let step = self.env.step(&state, &action)?;
                w.state = if step.done {
                    finished.push(step.extrinsic);
                    w.episode += 1;
                    self.env.reset(w.episode_seed())
                } else {
                    step.next.clone()
                };
                transitions.push(Transition {
                    state,
                    action,
                    extrinsic: step.extrinsic,
                    intrinsic: 0.0,
                    shaped_reward: self.cfg.lambda * step.extrinsic as f64,
                    next_state: step.next,
                    log_prob,
                    value,
                    done: step.done,
                });
            }
            let last = transitions.last().expect("n_steps > 0");
            bootstrap.push(if last.done || random {
                0.0
            } else {
                self.policy.output(&last.next_state)?.value
            });
        }
        Ok(RolloutBatch {
            transitions,
            n_workers: self.workers.len(),
            n_steps,
            bootstrap,
            finished,
        })
    }

    /// Appends the batch to the `f^joint` buffer and fits it. Returns the mean
    /// pre-step minibatch loss (0 when the method has no joint model).
    pub fn fit_joint(&mut self, batch: &RolloutBatch) -> Result<f64> {
        let Some((model, adam)) = self.joint.as_mut() else {
            return Ok(0.0);
        };
        let jf = &self.cfg.joint_fit;
        for t in &batch.transitions {
            self.buffer
                .push_back(model.sample(&t.state, &t.action, &t.next_state.env)?);
            if self.buffer.len() > jf.buffer_capacity {
                self.buffer.pop_front();
            }
        }
        let mut total = 0.0;
        for _ in 0..jf.steps_per_update {
            let picks: Vec<&ModelSample> = (0..jf.batch_size)
                .map(|_| &self.buffer[self.update_rng.random_range(0..self.buffer.len())])
                .collect();
            total += model.train_step(adam, &picks)?;
        }
        Ok(if jf.steps_per_update == 0 {
            0.0
        } else {
            total / jf.steps_per_update as f64
        })
    }

    fn intrinsic(&self, t: &Transition) -> Result<f64> {
        let r = &self.reward;
        let joint = self.joint_model();
        Ok(match self.cfg.method {
            Method::R1 => rewards::r1(&t.state, &t.action, &t.next_state, &self.singles, r)?,
            Method::R2 | Method::R2NoAnalytic => {
                rewards::r2(&t.state, &t.action, joint.expect("joint model"), &self.singles, r)?
            }
            Method::SurpriseJoint => {
                rewards::surprise_joint(&t.state, &t.action, &t.next_state, joint.expect("joint model"), r)?
            }
            Method::SurpriseSeparate => {
                let mut sum = 0.0;
                for (i, m) in self.singles.iter().enumerate() {
                    sum += rewards::surprise_single(&t.state, &t.action, &t.next_state, m, i, r)?;
                }
                sum
            }
            Method::ExtrinsicOnly | Method::Random => 0.0,
        })
    }

    /// Computes every transition's intrinsic reward and replaces its reward
    /// with `intrinsic + λ · extrinsic`.
    pub fn shape_rewards(&self, batch: &mut RolloutBatch) -> Result<()> {
        for t in &mut batch.transitions {
            t.intrinsic = self.intrinsic(t)?;
        }
        let strict = self.cfg.strict_credit && matches!(self.cfg.method, Method::R2 | Method::R2NoAnalytic);
        for w in 0..batch.n_workers {
            let base = w * batch.n_steps;
            for k in 0..batch.n_steps {
                let i = base + k;
                let credited = if strict {
                    // r2 at step t+1 reaches a_t only through later states,
                    // so it is credited one step earlier.
                    let t = &batch.transitions[i];
                    match batch.transitions.get(i + 1) {
                        Some(next) if k + 1 < batch.n_steps && !t.done => self.cfg.gamma * next.intrinsic,
                        _ => 0.0,
                    }
                } else {
                    batch.transitions[i].intrinsic
                };
                let t = &mut batch.transitions[i];
                t.shaped_reward = rewards::full_reward(credited, t.extrinsic, &self.reward)?;
            }
        }
        Ok(())
    }

    /// One outer iteration.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let mut batch = self.collect_rollouts()?;
        let joint_model_loss = self.fit_joint(&batch)?;
        self.shape_rewards(&mut batch)?;
        let mut losses = LossReport::default();
        if self.cfg.method != Method::Random {
            let adv = compute_advantages(&batch, self.cfg.gamma, self.cfg.gae_lambda);
            let cfg = self.cfg.clone();
            let reward = self.reward;
            let singles = &self.singles;
            let joint = self.joint.as_ref().map(|(m, _)| m);
            let grad_fn = move |s: &JointState, a: &JointAction| -> Result<Vec<Vec<f64>>> {
                Ok(rewards::r2_action_grad(s, a, joint.expect("joint model"), singles, &reward)?.1)
            };
            let analytic: Option<&ActionGradFn> = if cfg.method == Method::R2 { Some(&grad_fn) } else { None };
            losses = ppo_update(
                &mut self.policy,
                &mut self.adam,
                &batch,
                &adv,
                &cfg,
                &mut self.update_rng,
                analytic,
            )?;
        }
        let n = batch.transitions.len() as f64;
        self.env_steps += batch.transitions.len();
        self.updates += 1;
        for s in &batch.finished {
            self.window.push_back(*s);
            if self.window.len() > self.cfg.success_window {
                self.window.pop_front();
            }
        }
        self.episodes += batch.finished.len();
        let success_rate = if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().map(|&s| s as f64).sum::<f64>() / self.window.len() as f64
        };
        Ok(MetricsRecord {
            update: self.updates,
            env_steps: self.env_steps,
            success_rate,
            mean_intrinsic: batch.transitions.iter().map(|t| t.intrinsic).sum::<f64>() / n,
            mean_extrinsic: batch.transitions.iter().map(|t| t.extrinsic as f64).sum::<f64>() / n,
            policy_loss: losses.policy_loss,
            value_loss: losses.value_loss,
            joint_model_loss,
            episodes: self.episodes,
        })
    }

    /// Runs every remaining iteration, calling `on_record` after each.
    pub fn run(&mut self, mut on_record: impl FnMut(&Self, &MetricsRecord) -> Result<()>) -> Result<TrainHistory> {
        let initial = self.initial_metrics();
        let mut records = Vec::new();
        while self.env_steps < self.cfg.total_env_steps {
            let r = self.step()?;
            on_record(self, &r)?;
            records.push(r);
        }
        Ok(TrainHistory { initial, records })
    }
}

/// Runs a whole training job for `env_cfg`.
pub fn train(cfg: &TrainConfig, env_cfg: &EnvConfig) -> Result<TrainHistory> {
    Trainer::new(cfg.clone(), env_cfg.clone())?.run(|_, _| Ok(()))
}

fn adam_j_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.joint_fit.lr,
        ..AdamConfig::default()
    }
}

/// Estimators of the gradient of `J(θ) = E_τ[Σ_t r_t]` when `r_t` depends on
/// the action through a known differentiable function.
pub mod return_grad {
    /// Per-step ingredients of one sampled trajectory.
    #[derive(Clone, Debug, PartialEq)]
    pub struct StepTerms {
        pub reward: f64,
        /// `∇θ log π(a_t | s_t)`.
        pub score: Vec<f64>,
        /// Reparameterized `∇θ r(s_t, a_t)` with the noise held fixed.
        pub analytic: Vec<f64>,
    }

    fn add(into: &mut [f64], v: &[f64], s: f64) {
        into.iter_mut().zip(v).for_each(|(a, b)| *a += s * b);
    }

    /// `Σ_t r_t · Σ_{k<t} ∇ log π_k + Σ_t ∇ r_t`: the reward at step `t`
    /// reaches earlier actions through the states they produced and
    /// `a_t` itself only through the analytic term.
    pub fn strict(steps: &[StepTerms]) -> Vec<f64> {
        let dim = steps.first().map_or(0, |s| s.score.len());
        let mut g = vec![0.0; dim];
        let mut prefix = vec![0.0; dim];
        for s in steps {
            add(&mut g, &prefix, s.reward);
            add(&mut g, &s.analytic, 1.0);
            add(&mut prefix, &s.score, 1.0);
        }
        g
    }

    /// The score term over `k ≤ t` plus the analytic term, as a black-box
    /// policy-gradient method sees it: the step-`t` action is counted twice.
    pub fn black_box(steps: &[StepTerms]) -> Vec<f64> {
        let dim = steps.first().map_or(0, |s| s.score.len());
        let mut g = vec![0.0; dim];
        let mut prefix = vec![0.0; dim];
        for s in steps {
            add(&mut prefix, &s.score, 1.0);
            add(&mut g, &prefix, s.reward);
            add(&mut g, &s.analytic, 1.0);
        }
        g
    }
}
