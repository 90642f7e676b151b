//! Learned forward models of the environment state.
//!
//! A [`ForwardModel`] regresses the change of the environment state caused by
//! one agent acting alone (`f^A`, `f^B`, …) or by all agents acting together
//! (`f^joint`). Models predict a delta, never an absolute state:
//!
//! * network input: `[env features | agent state(s) | action encoding(s)]`;
//! * network output: `[Δposition(3) | raw rotation(4, if tracked) | Δflags]`.
//!
//! The raw rotation is offset by the identity quaternion and renormalized, so
//! a zero output is the identity delta. Action encodings are a one-hot skill
//! selector followed by one slot per continuous parameter of the whole skill
//! library; only the chosen skill's slots are filled, rescaled to `[-1, 1]`.
//!
//! Every prediction can be traced and pulled back, which gives exact
//! gradients of downstream quantities with respect to the continuous action
//! parameters through any chain of models.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{single_agent_variant, AgentAction, Env, EnvConfig, EnvSchema, EnvState, JointAction, JointState};
use crate::error::{invalid, Error, Result};
use crate::nn::{AdamConfig, AdamState, ForwardCache, NetworkCheckpoint, NetworkParams};
use crate::pose::{hamilton_grad, normalize_grad, Quat};

/// Hidden widths shared by all models.
pub const HIDDEN: [usize; 2] = [64, 64];

/// Which agents a model conditions on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelInput {
    Single { agent: usize },
    Joint,
}

/// How single-agent models are chained into `f^composed`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// Agent order A, B(, C).
    #[default]
    Fixed,
    /// Mean over every agent ordering; the quaternion block is renormalized.
    AverageAllPermutations,
}

/// Encodes one agent's action for a model input.
pub fn encode_action(schema: &EnvSchema, action: &AgentAction) -> Vec<f64> {
    let k = schema.n_skills();
    let mut v = vec![0.0; k + schema.params_per_agent()];
    v[action.skill] = 1.0;
    let off = k + schema.param_offset(action.skill);
    for (j, (p, spec)) in action
        .params
        .iter()
        .zip(&schema.skills[action.skill].params)
        .enumerate()
    {
        v[off + j] = 2.0 * (p - spec.low) / (spec.high - spec.low) - 1.0;
    }
    v
}

/// Pulls an encoding gradient back to the chosen skill's raw parameters.
fn encoding_grad(schema: &EnvSchema, action: &AgentAction, g: &[f64]) -> Vec<f64> {
    let off = schema.n_skills() + schema.param_offset(action.skill);
    schema.skills[action.skill]
        .params
        .iter()
        .enumerate()
        .map(|(j, spec)| g[off + j] * 2.0 / (spec.high - spec.low))
        .collect()
}

/// Gradient with respect to the quantities the metric and the features read
/// from an [`EnvState`]: position, orientation and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvGrad {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    pub flags: Vec<f64>,
}

impl EnvGrad {
    pub fn zeros(flags_dim: usize) -> Self {
        Self {
            position: [0.0; 3],
            orientation: [0.0; 4],
            flags: vec![0.0; flags_dim],
        }
    }

    fn scaled(&self, s: f64) -> EnvGrad {
        EnvGrad {
            position: self.position.map(|v| v * s),
            orientation: self.orientation.map(|v| v * s),
            flags: self.flags.iter().map(|v| v * s).collect(),
        }
    }
}

/// Everything needed to pull a gradient back through one prediction.
#[derive(Clone, Debug)]
pub struct StepTrace {
    cache: ForwardCache,
    input_orientation: Quat,
    /// `e + raw`, before normalization.
    offset_raw: [f64; 4],
    /// `normalize(e + raw) ⊗ q`, before normalization.
    product: [f64; 4],
    sign: f64,
    actions: Vec<AgentAction>,
}

/// Single-agent or joint forward model.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardModel {
    net: NetworkParams,
    input: ModelInput,
    schema: EnvSchema,
}

impl ForwardModel {
    /// Randomly initialized `[in, 64, 64, out]` model.
    pub fn new(schema: &EnvSchema, input: ModelInput, seed: u64) -> Result<Self> {
        let sizes = Self::layer_sizes(schema, input, &HIDDEN)?;
        Ok(Self {
            net: NetworkParams::init(&sizes, seed)?,
            input,
            schema: schema.clone(),
        })
    }

    /// Wraps existing parameters; the layer sizes must match the schema.
    pub fn from_network(schema: &EnvSchema, input: ModelInput, net: NetworkParams) -> Result<Self> {
        let expect_in = Self::input_dim_for(schema, input);
        let expect_out = Self::output_dim_for(schema);
        if net.input_dim() != expect_in || net.output_dim() != expect_out {
            return Err(invalid(format!(
                "network is {}→{}, model needs {expect_in}→{expect_out}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        if let ModelInput::Single { agent } = input {
            if agent >= schema.n_agents {
                return Err(invalid(format!("agent {agent} out of range")));
            }
        }
        Ok(Self {
            net,
            input,
            schema: schema.clone(),
        })
    }

    pub fn layer_sizes(schema: &EnvSchema, input: ModelInput, hidden: &[usize]) -> Result<Vec<usize>> {
        if let ModelInput::Single { agent } = input {
            if agent >= schema.n_agents {
                return Err(invalid(format!("agent {agent} out of range")));
            }
        }
        let mut sizes = vec![Self::input_dim_for(schema, input)];
        sizes.extend_from_slice(hidden);
        sizes.push(Self::output_dim_for(schema));
        Ok(sizes)
    }

    pub fn input_dim_for(schema: &EnvSchema, input: ModelInput) -> usize {
        let per_agent = schema.agent_state_dim + schema.n_skills() + schema.params_per_agent();
        let agents = match input {
            ModelInput::Single { .. } => 1,
            ModelInput::Joint => schema.n_agents,
        };
        schema.env_feature_dim() + agents * per_agent
    }

    pub fn output_dim_for(schema: &EnvSchema) -> usize {
        3 + if schema.tracks_orientation { 4 } else { 0 } + schema.flags_dim
    }

    pub fn network(&self) -> &NetworkParams {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut NetworkParams {
        &mut self.net
    }

    pub fn input_spec(&self) -> ModelInput {
        self.input
    }

    pub fn schema(&self) -> &EnvSchema {
        &self.schema
    }

    fn check_env(&self, env: &EnvState) -> Result<()> {
        if env.geometry.len() != self.schema.geometry_dim || env.flags.len() != self.schema.flags_dim {
            return Err(invalid(format!(
                "environment state does not match the {} schema",
                self.schema.name
            )));
        }
        Ok(())
    }

    fn input_vector(&self, env: &EnvState, agent_states: &[&[f64]], actions: &[&AgentAction]) -> Result<Vec<f64>> {
        self.check_env(env)?;
        let mut x = env.features(&self.schema);
        for s in agent_states {
            if s.len() != self.schema.agent_state_dim {
                return Err(invalid("agent state has the wrong length"));
            }
            x.extend_from_slice(s);
        }
        for a in actions {
            if a.skill >= self.schema.n_skills() || a.params.len() != self.schema.skills[a.skill].params.len() {
                return Err(invalid("action does not match the skill library"));
            }
            x.extend(encode_action(&self.schema, a));
        }
        Ok(x)
    }

    /// Network input for `(env, state, action)` under this model's input spec.
    pub fn encode(&self, env: &EnvState, state: &JointState, action: &JointAction) -> Result<Vec<f64>> {
        let (states, acts) = self.select(state, action)?;
        self.input_vector(env, &states, &acts)
    }

    fn select<'a>(
        &self,
        state: &'a JointState,
        action: &'a JointAction,
    ) -> Result<(Vec<&'a [f64]>, Vec<&'a AgentAction>)> {
        if state.agents.len() != self.schema.n_agents || action.agents.len() != self.schema.n_agents {
            return Err(invalid("agent count does not match the schema"));
        }
        Ok(match self.input {
            ModelInput::Single { agent } => (vec![&state.agents[agent][..]], vec![&action.agents[agent]]),
            ModelInput::Joint => (
                state.agents.iter().map(|s| &s[..]).collect(),
                action.agents.iter().collect(),
            ),
        })
    }

    /// Applies a network output to `env`.
    fn decode(&self, env: &EnvState, out: &[f64]) -> (EnvState, [f64; 4], [f64; 4], f64) {
        let mut next = env.clone();
        for (p, d) in next.object_pose.position.iter_mut().zip(out) {
            *p += d;
        }
        let mut k = 3;
        let (mut offset_raw, mut product, mut sign) = ([1.0, 0.0, 0.0, 0.0], [0.0; 4], 1.0);
        if self.schema.tracks_orientation {
            offset_raw = [1.0 + out[3], out[4], out[5], out[6]];
            let n = Quat::from_array(offset_raw).normalized();
            let m = n.hamilton(env.object_pose.orientation);
            product = m.to_array();
            let u = m.normalized();
            sign = if u.w < 0.0 { -1.0 } else { 1.0 };
            next.object_pose.orientation = u.canonical();
            k = 7;
        }
        for (f, d) in next.flags.iter_mut().zip(&out[k..]) {
            *f += d;
        }
        (next, offset_raw, product, sign)
    }

    fn run(&self, env: &EnvState, x: Vec<f64>, actions: Vec<AgentAction>) -> Result<(EnvState, StepTrace)> {
        let (out, cache) = self.net.forward(&x)?;
        let (next, offset_raw, product, sign) = self.decode(env, &out);
        Ok((
            next,
            StepTrace {
                cache,
                input_orientation: env.object_pose.orientation,
                offset_raw,
                product,
                sign,
                actions,
            },
        ))
    }

    /// `f^i(env, s^i, a^i)`: timestep and geometry pass through unchanged.
    pub fn predict_single(&self, env: &EnvState, agent_state: &[f64], agent_action: &AgentAction) -> Result<EnvState> {
        Ok(self.trace_single(env, agent_state, agent_action)?.0)
    }

    pub fn trace_single(
        &self,
        env: &EnvState,
        agent_state: &[f64],
        agent_action: &AgentAction,
    ) -> Result<(EnvState, StepTrace)> {
        if self.input == ModelInput::Joint {
            return Err(invalid("predict_single needs a single-agent model"));
        }
        let x = self.input_vector(env, &[agent_state], &[agent_action])?;
        self.run(env, x, vec![agent_action.clone()])
    }

    /// `f^joint(s, a)`.
    pub fn predict_joint(&self, state: &JointState, action: &JointAction) -> Result<EnvState> {
        Ok(self.trace_joint(state, action)?.0)
    }

    pub fn trace_joint(&self, state: &JointState, action: &JointAction) -> Result<(EnvState, StepTrace)> {
        if self.input != ModelInput::Joint {
            return Err(invalid("predict_joint needs a joint model"));
        }
        let x = self.encode(&state.env, state, action)?;
        self.run(&state.env, x, action.agents.clone())
    }

    /// Pulls `g` (on the predicted state) back to the input state and to the
    /// continuous parameters of each traced action.
    pub fn backprop(&self, trace: &StepTrace, g: &EnvGrad) -> Result<(EnvGrad, Vec<Vec<f64>>)> {
        let schema = &self.schema;
        let mut g_out = Vec::with_capacity(self.net.output_dim());
        g_out.extend_from_slice(&g.position);
        let mut g_in = EnvGrad {
            position: g.position,
            orientation: g.orientation,
            flags: g.flags.clone(),
        };
        if schema.tracks_orientation {
            let gu = g.orientation.map(|v| v * trace.sign);
            let gm = normalize_grad(trace.product, gu);
            let n = Quat::from_array(trace.offset_raw).normalized();
            let (gn, gq) = hamilton_grad(n, trace.input_orientation, gm);
            g_out.extend(normalize_grad(trace.offset_raw, gn));
            g_in.orientation = gq;
        }
        g_out.extend_from_slice(&g.flags);
        let mut scratch = self.net.zeros_like();
        let gx = self.net.backward_into(&trace.cache, &g_out, &mut scratch)?;
        // Feature block: [t/h, geometry, position, orientation?, flags].
        let mut k = 1 + schema.geometry_dim;
        for i in 0..3 {
            g_in.position[i] += gx[k + i];
        }
        k += 3;
        if schema.tracks_orientation {
            for i in 0..4 {
                g_in.orientation[i] += gx[k + i];
            }
            k += 4;
        }
        for i in 0..schema.flags_dim {
            g_in.flags[i] += gx[k + i];
        }
        k += schema.flags_dim;
        k += trace.actions.len() * schema.agent_state_dim;
        let width = schema.n_skills() + schema.params_per_agent();
        let action_grads = trace
            .actions
            .iter()
            .enumerate()
            .map(|(j, a)| encoding_grad(schema, a, &gx[k + j * width..k + (j + 1) * width]))
            .collect();
        Ok((g_in, action_grads))
    }

    /// Regression target in network-output space for `env → next`.
    pub fn target(&self, env: &EnvState, next: &EnvState) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.net.output_dim());
        for i in 0..3 {
            t.push(next.object_pose.position[i] - env.object_pose.position[i]);
        }
        if self.schema.tracks_orientation {
            let dq = next
                .object_pose
                .orientation
                .hamilton(env.object_pose.orientation.conjugate())
                .normalized()
                .canonical();
            t.extend([dq.w - 1.0, dq.x, dq.y, dq.z]);
        }
        t.extend(next.flags.iter().zip(&env.flags).map(|(a, b)| a - b));
        t
    }

    /// Encoded `(input, target)` pair for training on the transition `s, a → next`.
    /// Single-agent models read the environment part of `s` and their own agent's slice.
    pub fn sample(&self, state: &JointState, action: &JointAction, next: &EnvState) -> Result<ModelSample> {
        Ok(ModelSample {
            input: self.encode(&state.env, state, action)?,
            target: self.target(&state.env, next),
        })
    }

    /// Mean over samples of the squared L2 error, and its parameter gradient.
    pub fn loss_and_grad(&self, batch: &[&ModelSample]) -> Result<(f64, NetworkParams)> {
        if batch.is_empty() {
            return Err(invalid("empty training batch"));
        }
        let mut grads = self.net.zeros_like();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let (out, cache) = self.net.forward(&s.input)?;
            let mut g = Vec::with_capacity(out.len());
            for (o, t) in out.iter().zip(&s.target) {
                let d = o - t;
                loss += d * d * scale;
                g.push(2.0 * d * scale);
            }
            self.net.backward_into(&cache, &g, &mut grads)?;
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, batch: &[&ModelSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let mut loss = 0.0;
        for s in batch {
            let out = self.net.predict(&s.input)?;
            loss += out.iter().zip(&s.target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
        }
        Ok(loss / batch.len() as f64)
    }

    /// One Adam step on the batch; returns the loss before the update.
    pub fn train_step(&mut self, adam: &mut AdamState, batch: &[&ModelSample]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(batch)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("forward-model loss is not finite".into()));
        }
        adam.step(&mut self.net, &grads)?;
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            input: self.input,
            schema: self.schema.clone(),
            network: self.net.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ckpt: ModelCheckpoint) -> Result<Self> {
        if ckpt.format != MODEL_FORMAT || ckpt.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let net = NetworkParams::from_checkpoint(ckpt.network)?;
        Self::from_network(&ckpt.schema, ckpt.input, net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: ModelCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_checkpoint(ckpt)
    }
}

pub const MODEL_FORMAT: &str = "synergy-forward-model";
pub const MODEL_VERSION: u32 = 1;

/// Forward-model checkpoint: the network plus its input spec and the schema
/// it was trained on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub input: ModelInput,
    pub schema: EnvSchema,
    pub network: NetworkCheckpoint,
}

/// One encoded training pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

fn check_singles(models: &[ForwardModel], n_agents: usize) -> Result<()> {
    if models.len() != n_agents {
        return Err(invalid(format!(
            "{} single-agent models for {n_agents} agents",
            models.len()
        )));
    }
    for (i, m) in models.iter().enumerate() {
        if m.input != (ModelInput::Single { agent: i }) {
            return Err(invalid(format!("model {i} is not the single-agent model of agent {i}")));
        }
    }
    Ok(())
}

/// Traces of one sequential chain, in application order.
#[derive(Clone, Debug)]
pub struct ChainTrace {
    steps: Vec<(usize, StepTrace)>,
}

/// Applies the single-agent models of `order` one after another.
pub fn trace_chain(
    models: &[ForwardModel],
    state: &JointState,
    action: &JointAction,
    order: &[usize],
) -> Result<(EnvState, ChainTrace)> {
    check_singles(models, state.agents.len())?;
    if action.agents.len() != state.agents.len() {
        return Err(invalid("agent count mismatch between state and action"));
    }
    let mut env = state.env.clone();
    let mut steps = Vec::with_capacity(order.len());
    for &i in order {
        let (next, trace) = models[i].trace_single(&env, &state.agents[i], &action.agents[i])?;
        steps.push((i, trace));
        env = next;
    }
    Ok((env, ChainTrace { steps }))
}

/// Pulls `g` back through a chain; returns per-agent parameter gradients.
pub fn backprop_chain(models: &[ForwardModel], trace: &ChainTrace, g: &EnvGrad) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); models.len()];
    let mut g = g.clone();
    for (i, step) in trace.steps.iter().rev() {
        let (g_in, mut a) = models[*i].backprop(step, &g)?;
        out[*i] = a.remove(0);
        g = g_in;
    }
    Ok(out)
}

/// All orderings of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !prefix.contains(&i) {
                prefix.push(i);
                rec(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), n, &mut out);
    out
}

/// Traced `f^composed`.
#[derive(Clone, Debug)]
pub struct ComposeTrace {
    chains: Vec<ChainTrace>,
    /// Unnormalized quaternion mean (permutation averaging only).
    quat_mean: Option<[f64; 4]>,
    sign: f64,
}

pub fn trace_compose(
    models: &[ForwardModel],
    state: &JointState,
    action: &JointAction,
    ordering: Composition,
) -> Result<(EnvState, ComposeTrace)> {
    let n = state.agents.len();
    match ordering {
        Composition::Fixed => {
            let order: Vec<usize> = (0..n).collect();
            let (env, chain) = trace_chain(models, state, action, &order)?;
            Ok((
                env,
                ComposeTrace {
                    chains: vec![chain],
                    quat_mean: None,
                    sign: 1.0,
                },
            ))
        }
        Composition::AverageAllPermutations => {
            let perms = permutations(n);
            let count = perms.len() as f64;
            let mut mean = state.env.clone();
            mean.object_pose.position = [0.0; 3];
            mean.flags.iter_mut().for_each(|f| *f = 0.0);
            let mut q = [0.0; 4];
            let mut chains = Vec::with_capacity(perms.len());
            for p in &perms {
                let (env, chain) = trace_chain(models, state, action, p)?;
                for i in 0..3 {
                    mean.object_pose.position[i] += env.object_pose.position[i];
                }
                for (i, v) in env.object_pose.orientation.to_array().iter().enumerate() {
                    q[i] += v;
                }
                for (f, v) in mean.flags.iter_mut().zip(&env.flags) {
                    *f += v;
                }
                chains.push(chain);
            }
            // Sum first, divide once: identical chains average to themselves exactly.
            mean.object_pose.position.iter_mut().for_each(|v| *v /= count);
            mean.flags.iter_mut().for_each(|v| *v /= count);
            q.iter_mut().for_each(|v| *v /= count);
            let u = Quat::from_array(q).normalized();
            let sign = if u.w < 0.0 { -1.0 } else { 1.0 };
            mean.object_pose.orientation = u.canonical();
            Ok((
                mean,
                ComposeTrace {
                    chains,
                    quat_mean: Some(q),
                    sign,
                },
            ))
        }
    }
}

/// `f^composed(s, a)`.
pub fn compose(
    models: &[ForwardModel],
    state: &JointState,
    action: &JointAction,
    ordering: Composition,
) -> Result<EnvState> {
    Ok(trace_compose(models, state, action, ordering)?.0)
}

pub fn backprop_compose(models: &[ForwardModel], trace: &ComposeTrace, g: &EnvGrad) -> Result<Vec<Vec<f64>>> {
    let Some(q) = trace.quat_mean else {
        return backprop_chain(models, &trace.chains[0], g);
    };
    let w = 1.0 / trace.chains.len() as f64;
    let gq = normalize_grad(q, g.orientation.map(|v| v * trace.sign));
    let per_chain = EnvGrad {
        position: g.position,
        orientation: gq,
        flags: g.flags.clone(),
    }
    .scaled(w);
    let mut total: Option<Vec<Vec<f64>>> = None;
    for chain in &trace.chains {
        let grads = backprop_chain(models, chain, &per_chain)?;
        total = Some(match total {
            None => grads,
            Some(mut t) => {
                for (a, b) in t.iter_mut().zip(&grads) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
                t
            }
        });
    }
    Ok(total.unwrap_or_default())
}

/// Settings of the single-agent pretraining fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            validation_fraction: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

/// Encoded transitions of one model, split for validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ModelSample>,
    /// The first `n_train` samples (after shuffling) are the training split.
    pub n_train: usize,
}

impl Dataset {
    pub fn train(&self) -> Vec<&ModelSample> {
        self.samples[..self.n_train].iter().collect()
    }

    pub fn validation(&self) -> Vec<&ModelSample> {
        self.samples[self.n_train..].iter().collect()
    }

    /// Mean over validation samples of the summed per-coordinate target variance.
    pub fn target_variance(&self, samples: &[&ModelSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let d = samples[0].target.len();
        let n = samples.len() as f64;
        (0..d)
            .map(|j| {
                let mean = samples.iter().map(|s| s.target[j]).sum::<f64>() / n;
                samples.iter().map(|s| (s.target[j] - mean).powi(2)).sum::<f64>() / n
            })
            .sum()
    }

    /// Columnar text: a header `split,x0..,y0..`, then one transition per line.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let (dx, dy) = self
            .samples
            .first()
            .map(|s| (s.input.len(), s.target.len()))
            .unwrap_or((0, 0));
        let mut header = vec!["split".to_string()];
        header.extend((0..dx).map(|i| format!("x{i}")));
        header.extend((0..dy).map(|i| format!("y{i}")));
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut rec = vec![if i < self.n_train { "train" } else { "val" }.to_string()];
            rec.extend(s.input.iter().chain(&s.target).map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let header = r.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
        let dx = header.iter().filter(|h| h.starts_with('x')).count();
        let mut samples = Vec::new();
        let mut n_train = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            if &rec[0] == "train" {
                n_train += 1;
            }
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                .collect::<Result<_>>()?;
            samples.push(ModelSample {
                input: vals[..dx].to_vec(),
                target: vals[dx..].to_vec(),
            });
        }
        Ok(Self { samples, n_train })
    }
}

/// Outcome of [`pretrain_single`].
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub model: ForwardModel,
    pub dataset: Dataset,
    pub train_mse: f64,
    pub validation_mse: f64,
    /// Variance of the validation targets, for judging the MSE.
    pub target_variance: f64,
}

/// Collects `n_samples` transitions of `agent_id` acting alone under the
/// uniform random policy and fits its forward model. Only
/// [`Env::transition`] is used, so no reward is ever evaluated.
pub fn pretrain_single(
    env_cfg: &EnvConfig,
    agent_id: usize,
    n_samples: usize,
    seed: u64,
    fit: &FitConfig,
) -> Result<Pretrained> {
    if n_samples == 0 {
        return Err(invalid("pretraining needs at least one sample"));
    }
    let env = Env::new(single_agent_variant(env_cfg, agent_id)?)?;
    let schema = env.schema().clone();
    let mut model = ForwardModel::new(&schema, ModelInput::Single { agent: agent_id }, seed ^ 0xA5A5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = collect_random(&env, n_samples, &mut rng, |s, a, next| model.sample(s, a, &next.env))?;
    samples.shuffle(&mut rng);
    let n_val = ((n_samples as f64 * fit.validation_fraction).round() as usize).min(n_samples - 1);
    let dataset = Dataset {
        n_train: n_samples - n_val,
        samples,
    };
    fit_model(&mut model, &dataset.train(), fit, &mut rng)?;
    let train_mse = model.loss(&dataset.train())?;
    let val = dataset.validation();
    let (validation_mse, target_variance) = if val.is_empty() {
        (train_mse, dataset.target_variance(&dataset.train()))
    } else {
        (model.loss(&val)?, dataset.target_variance(&val))
    };
    Ok(Pretrained {
        model,
        dataset,
        train_mse,
        validation_mse,
        target_variance,
    })
}

/// Runs the uniform random policy for `n` transitions, restarting episodes at
/// the horizon, and maps each transition through `f`.
pub fn collect_random<T>(
    env: &Env,
    n: usize,
    rng: &mut ChaCha8Rng,
    mut f: impl FnMut(&JointState, &JointAction, &JointState) -> Result<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    let mut episode = 0u64;
    let mut s = env.reset(rand::Rng::random(rng));
    while out.len() < n {
        let a = env.schema().random_action(rng);
        let next = env.transition(&s, &a)?;
        out.push(f(&s, &a, &next)?);
        s = if env.at_horizon(&next) {
            episode += 1;
            env.reset(rand::Rng::random::<u64>(rng) ^ episode)
        } else {
            next
        };
    }
    Ok(out)
}

/// Minibatch Adam over `samples` for `fit.epochs` epochs.
pub fn fit_model(
    model: &mut ForwardModel,
    samples: &[&ModelSample],
    fit: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    let mut adam = AdamState::new(model.network(), fit.adam);
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let bs = fit.batch_size.max(1);
    for _ in 0..fit.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(bs) {
            let batch: Vec<&ModelSample> = chunk.iter().map(|&i| samples[i]).collect();
            model.train_step(&mut adam, &batch)?;
        }
    }
    Ok(())
}
