//! Intrinsic and shaped rewards.
//!
//! All intrinsic signals are distances under [`state_metric`]:
//!
//! | signal | distance between |
//! |--------|------------------|
//! | [`r1`] | true next state and `f^composed(s, a)` |
//! | [`r2`] | `f^joint(s, a)` and `f^composed(s, a)` |
//! | [`surprise_joint`] | true next state and `f^joint(s, a)` |
//! | [`surprise_single`] | true next state and `f^i(s, a^i)` |
//!
//! `r2` never looks at the true next state, which is what makes it
//! differentiable in the action: [`r2_action_grad`] pulls the metric back
//! through both model chains to every continuous action parameter.

use serde::{Deserialize, Serialize};

use crate::dynamics::{backprop_compose, trace_compose, Composition, EnvGrad, ForwardModel};
use crate::envs::{EnvState, JointAction, JointState};
use crate::error::{invalid, Result};

/// Per-block weights of the state metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricWeights {
    pub position: f64,
    pub orientation: f64,
    pub flags: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self {
            position: 1.0,
            orientation: 1.0,
            flags: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the sparse extrinsic reward.
    pub lambda: f64,
    #[serde(default)]
    pub metric_weights: MetricWeights,
    /// How `f^composed` chains the single-agent models.
    #[serde(default)]
    pub composition: Composition,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            metric_weights: MetricWeights::default(),
            composition: Composition::Fixed,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.metric_weights;
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(invalid(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if [w.position, w.orientation, w.flags]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(invalid("metric weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Block-weighted Euclidean distance over position, sign-canonical
/// orientation and flags. Timestep and geometry are ignored.
pub fn state_metric(a: &EnvState, b: &EnvState, w: &MetricWeights) -> Result<f64> {
    Ok(metric_with_grad(a, b, w)?.0)
}

/// The metric and its gradient with respect to `a` (the gradient with
/// respect to `b` is the negation). At distance 0 the gradient is zero.
pub fn metric_with_grad(a: &EnvState, b: &EnvState, w: &MetricWeights) -> Result<(f64, EnvGrad)> {
    if a.flags.len() != b.flags.len() || a.geometry.len() != b.geometry.len() {
        return Err(invalid("states come from different schemas"));
    }
    let qa = a.object_pose.orientation.canonical().to_array();
    let qb = b.object_pose.orientation.canonical().to_array();
    let mut g = EnvGrad::zeros(a.flags.len());
    let mut sq = 0.0;
    for i in 0..3 {
        let d = a.object_pose.position[i] - b.object_pose.position[i];
        sq += w.position * d * d;
        g.position[i] = w.position * d;
    }
    for i in 0..4 {
        let d = qa[i] - qb[i];
        sq += w.orientation * d * d;
        g.orientation[i] = w.orientation * d;
    }
    for (i, (x, y)) in a.flags.iter().zip(&b.flags).enumerate() {
        let d = x - y;
        sq += w.flags * d * d;
        g.flags[i] = w.flags * d;
    }
    let dist = sq.sqrt();
    if dist == 0.0 {
        return Ok((0.0, EnvGrad::zeros(a.flags.len())));
    }
    // A sign flip between the canonical and the stored quaternion of `a`
    // flips its gradient too.
    if a.object_pose.orientation.w < 0.0 {
        g.orientation = g.orientation.map(|v| -v);
    }
    let inv = 1.0 / dist;
    g.position = g.position.map(|v| v * inv);
    g.orientation = g.orientation.map(|v| v * inv);
    g.flags.iter_mut().for_each(|v| *v *= inv);
    Ok((dist, g))
}

/// Compositional prediction error `‖s̄^env − f^composed(s, a)‖`.
pub fn r1(
    s: &JointState,
    a: &JointAction,
    s_bar: &JointState,
    singles: &[ForwardModel],
    cfg: &RewardConfig,
) -> Result<f64> {
    let composed = crate::dynamics::compose(singles, s, a, cfg.composition)?;
    state_metric(&s_bar.env, &composed, &cfg.metric_weights)
}

/// Prediction disparity `‖f^joint(s, a) − f^composed(s, a)‖`.
pub fn r2(
    s: &JointState,
    a: &JointAction,
    joint: &ForwardModel,
    singles: &[ForwardModel],
    cfg: &RewardConfig,
) -> Result<f64> {
    let j = joint.predict_joint(s, a)?;
    let c = crate::dynamics::compose(singles, s, a, cfg.composition)?;
    state_metric(&j, &c, &cfg.metric_weights)
}

/// `r2` and its gradient with respect to the continuous parameters of each
/// agent's chosen skill (`grads[i][j]` is agent `i`'s parameter `j`). Skill
/// choices get no gradient; at `r2 = 0` the gradient is zero.
pub fn r2_action_grad(
    s: &JointState,
    a: &JointAction,
    joint: &ForwardModel,
    singles: &[ForwardModel],
    cfg: &RewardConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (j, jt) = joint.trace_joint(s, a)?;
    let (c, ct) = trace_compose(singles, s, a, cfg.composition)?;
    let (value, g) = metric_with_grad(&j, &c, &cfg.metric_weights)?;
    let mut grads: Vec<Vec<f64>> = a.agents.iter().map(|x| vec![0.0; x.params.len()]).collect();
    if value == 0.0 {
        return Ok((0.0, grads));
    }
    let (_, gj) = joint.backprop(&jt, &g)?;
    let neg = EnvGrad {
        position: g.position.map(|v| -v),
        orientation: g.orientation.map(|v| -v),
        flags: g.flags.iter().map(|v| -v).collect(),
    };
    let gc = backprop_compose(singles, &ct, &neg)?;
    for (i, out) in grads.iter_mut().enumerate() {
        for (k, v) in out.iter_mut().enumerate() {
            *v = gj[i][k] + gc[i][k];
        }
    }
    Ok((value, grads))
}

/// Non-synergistic surprise `‖f^joint(s, a) − s̄^env‖`.
pub fn surprise_joint(
    s: &JointState,
    a: &JointAction,
    s_bar: &JointState,
    joint: &ForwardModel,
    cfg: &RewardConfig,
) -> Result<f64> {
    let j = joint.predict_joint(s, a)?;
    state_metric(&j, &s_bar.env, &cfg.metric_weights)
}

/// Surprise of agent `agent_id`'s own model `‖f^i(s^env, s^i, a^i) − s̄^env‖`.
pub fn surprise_single(
    s: &JointState,
    a: &JointAction,
    s_bar: &JointState,
    model: &ForwardModel,
    agent_id: usize,
    cfg: &RewardConfig,
) -> Result<f64> {
    if agent_id >= s.agents.len() || agent_id >= a.agents.len() {
        return Err(invalid(format!("agent {agent_id} out of range")));
    }
    let p = model.predict_single(&s.env, &s.agents[agent_id], &a.agents[agent_id])?;
    state_metric(&p, &s_bar.env, &cfg.metric_weights)
}

/// Shaped reward `intrinsic + λ · extrinsic`.
pub fn full_reward(intrinsic: f64, extrinsic: u8, cfg: &RewardConfig) -> Result<f64> {
    if extrinsic > 1 {
        return Err(invalid(format!("extrinsic reward must be 0 or 1, got {extrinsic}")));
    }
    Ok(intrinsic + cfg.lambda * extrinsic as f64)
}
