//! Kinematic cooperative tasks with sparse binary rewards.
//!
//! Each environment is a closed-form [`WorldRules`] implementation wrapped by
//! [`Env`], which owns the horizon, the goal check, action validation and the
//! single-agent variant (all other agents frozen, issuing no-ops).
//!
//! | name | agents | synergy mechanic |
//! |------|--------|------------------|
//! | `bar-lift` (`ball-pickup`) | 2 | concurrent lifts raise the bar by the smaller lift; a solo lift leaks and tilts |
//! | `bottle-twist` (`corkscrew`) | 2 | twisting the cap only changes the relative angle while another agent holds the base |
//! | `block-push` | 2, 3 | the block only moves when every agent pushes in an aligned direction |
//! | `soccer` | 2, 3 | a goal only counts after every agent has possessed the ball |
//! | `reach` | 1, 2 | none: agent moves add up, used for sanity checks |

mod bar_lift;
mod block_push;
mod bottle_twist;
mod reach;
mod soccer;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pose::Pose;

pub use bar_lift::{BAR_DROP_TILT, BAR_LEAK, BAR_REACH, BAR_TILT_RATE};
pub use block_push::PUSH_CONE;
pub use soccer::CAPTURE_RADIUS;

/// Environment part of the state: everything that is not an agent's
/// proprioception.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub timestep: usize,
    /// Per-episode object geometry and goal parameters, constant within an episode.
    pub geometry: Vec<f64>,
    pub object_pose: Pose,
    /// Extra per-environment quantities (possession flags, relative angles).
    pub flags: Vec<f64>,
    /// Per-episode physical parameters the agents never observe (bar
    /// density). Excluded from features and from the metric.
    #[serde(default)]
    pub hidden: Vec<f64>,
}

impl EnvState {
    /// The vector the state metric is computed on:
    /// `[position(3), orientation(w,x,y,z, w ≥ 0), flags…]`.
    /// Timestep and geometry are excluded.
    pub fn metric_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(7 + self.flags.len());
        v.extend_from_slice(&self.object_pose.position);
        v.extend_from_slice(&self.object_pose.orientation.canonical().to_array());
        v.extend_from_slice(&self.flags);
        v
    }

    /// Network input features:
    /// `[timestep / horizon, geometry…, position(3), orientation(4) if tracked, flags…]`.
    pub fn features(&self, schema: &EnvSchema) -> Vec<f64> {
        let mut v = Vec::with_capacity(schema.env_feature_dim());
        v.push(self.timestep as f64 / schema.horizon as f64);
        v.extend_from_slice(&self.geometry);
        v.extend_from_slice(&self.object_pose.position);
        if schema.tracks_orientation {
            v.extend_from_slice(&self.object_pose.orientation.to_array());
        }
        v.extend_from_slice(&self.flags);
        v
    }
}

/// Full state `⟨s^1, …, s^N, s^env⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub agents: Vec<Vec<f64>>,
    pub env: EnvState,
}

impl JointState {
    /// Policy input: agent states in order, then the environment features.
    pub fn flatten(&self, schema: &EnvSchema) -> Vec<f64> {
        let mut v: Vec<f64> = self.agents.iter().flatten().copied().collect();
        v.extend(self.env.features(schema));
        v
    }
}

/// One agent's action: a skill and the continuous parameters of that skill.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub skill: usize,
    /// Parameters of the chosen skill, inside the skill's boxes.
    pub params: Vec<f64>,
    /// Pre-squash Gaussian samples (empty for actions not drawn from a policy).
    #[serde(default)]
    pub pre_squash: Vec<f64>,
    /// Standard-normal draws behind `pre_squash`, kept for replay.
    #[serde(default)]
    pub noise: Vec<f64>,
}

impl AgentAction {
    pub fn new(skill: usize, params: Vec<f64>) -> Self {
        Self {
            skill,
            params,
            pre_squash: Vec::new(),
            noise: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub agents: Vec<AgentAction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub name: String,
    pub params: Vec<ParamSpec>,
}

impl SkillSpec {
    pub(crate) fn new(name: &str, params: &[(&str, f64, f64)]) -> Self {
        Self {
            name: name.to_string(),
            params: params
                .iter()
                .map(|&(n, low, high)| ParamSpec {
                    name: n.to_string(),
                    low,
                    high,
                })
                .collect(),
        }
    }
}

/// Machine-readable description of an environment's state and action layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSchema {
    pub name: String,
    pub n_agents: usize,
    pub horizon: usize,
    pub agent_state_dim: usize,
    pub geometry_dim: usize,
    pub flags_dim: usize,
    pub tracks_orientation: bool,
    /// Skill library shared by all agents; the last entry is the no-op.
    pub skills: Vec<SkillSpec>,
}

impl EnvSchema {
    pub fn n_skills(&self) -> usize {
        self.skills.len()
    }

    pub fn noop_skill(&self) -> usize {
        self.skills.len() - 1
    }

    /// Total continuous parameters across one agent's skill library.
    pub fn params_per_agent(&self) -> usize {
        self.skills.iter().map(|s| s.params.len()).sum()
    }

    /// Offset of skill `k`'s first parameter within the per-agent parameter list.
    pub fn param_offset(&self, skill: usize) -> usize {
        self.skills[..skill].iter().map(|s| s.params.len()).sum()
    }

    pub fn env_feature_dim(&self) -> usize {
        1 + self.geometry_dim + 3 + if self.tracks_orientation { 4 } else { 0 } + self.flags_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.n_agents * self.agent_state_dim + self.env_feature_dim()
    }

    /// Width of the metric vector (see [`EnvState::metric_vector`]).
    pub fn metric_dim(&self) -> usize {
        7 + self.flags_dim
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate_action(&self, action: &JointAction) -> Result<()> {
        if action.agents.len() != self.n_agents {
            return Err(invalid(format!(
                "{} expects {} agent actions, got {}",
                self.name,
                self.n_agents,
                action.agents.len()
            )));
        }
        for (i, a) in action.agents.iter().enumerate() {
            let skill = self
                .skills
                .get(a.skill)
                .ok_or_else(|| invalid(format!("agent {i}: skill {} out of range", a.skill)))?;
            if a.params.len() != skill.params.len() {
                return Err(invalid(format!(
                    "agent {i}: skill {} takes {} parameters, got {}",
                    skill.name,
                    skill.params.len(),
                    a.params.len()
                )));
            }
            for (p, spec) in a.params.iter().zip(&skill.params) {
                if !(spec.low..=spec.high).contains(p) {
                    return Err(invalid(format!(
                        "agent {i}: parameter {} = {p} outside [{}, {}]",
                        spec.name, spec.low, spec.high
                    )));
                }
            }
        }
        Ok(())
    }

    /// Uniform over skills, then uniform over each parameter's box.
    pub fn random_agent_action(&self, rng: &mut impl Rng) -> AgentAction {
        let skill = rng.random_range(0..self.n_skills());
        let params = self.skills[skill]
            .params
            .iter()
            .map(|p| rng.random_range(p.low..p.high))
            .collect();
        AgentAction::new(skill, params)
    }

    pub fn random_action(&self, rng: &mut impl Rng) -> JointAction {
        JointAction {
            agents: (0..self.n_agents).map(|_| self.random_agent_action(rng)).collect(),
        }
    }

    pub fn noop_action(&self) -> AgentAction {
        AgentAction::new(self.noop_skill(), Vec::new())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    BarLift,
    BottleTwist,
    BlockPush,
    Soccer,
    Reach,
}

/// Environment configuration. `name` selects the mechanics; `ball-pickup` and
/// `corkscrew` are presets of `bar-lift` and `bottle-twist` with their own goals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Overrides the goal threshold (lift height, twist angle, or goal radius).
    #[serde(default)]
    pub goal: Option<f64>,
    /// Half-width of the object-location randomization box (meters).
    #[serde(default = "default_location_range")]
    pub location_range: f64,
    /// Only this agent acts; the others are frozen and issue no-ops.
    #[serde(default)]
    pub active_agent: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_agents() -> usize {
    2
}
fn default_horizon() -> usize {
    10
}
fn default_location_range() -> f64 {
    0.1
}

impl EnvConfig {
    pub fn new(name: &str, n_agents: usize) -> Self {
        Self {
            name: name.to_string(),
            n_agents,
            horizon: default_horizon(),
            goal: None,
            location_range: default_location_range(),
            active_agent: None,
            seed: 0,
        }
    }

    pub fn kind(&self) -> Result<EnvKind> {
        Ok(match self.name.as_str() {
            "bar-lift" | "ball-pickup" => EnvKind::BarLift,
            "bottle-twist" | "corkscrew" => EnvKind::BottleTwist,
            "block-push" => EnvKind::BlockPush,
            "soccer" => EnvKind::Soccer,
            "reach" => EnvKind::Reach,
            other => return Err(invalid(format!("unknown environment {other:?}"))),
        })
    }

    fn goal_or(&self, default: f64) -> f64 {
        self.goal.unwrap_or(default)
    }
}

/// The same world with only `agent_id` acting.
pub fn single_agent_variant(cfg: &EnvConfig, agent_id: usize) -> Result<EnvConfig> {
    if cfg.n_agents < 2 {
        return Err(invalid("single-agent variant needs at least two agents"));
    }
    if agent_id >= cfg.n_agents {
        return Err(invalid(format!("agent {agent_id} out of range")));
    }
    Ok(EnvConfig {
        active_agent: Some(agent_id),
        ..cfg.clone()
    })
}

/// Skill library of a named environment.
pub fn skill_library(env_name: &str) -> Result<Vec<SkillSpec>> {
    let cfg = EnvConfig::new(env_name, 2);
    Ok(match cfg.kind()? {
        EnvKind::BarLift => bar_lift::skills(),
        EnvKind::BottleTwist => bottle_twist::skills(),
        EnvKind::BlockPush => block_push::skills(),
        EnvKind::Soccer => soccer::skills(),
        EnvKind::Reach => reach::skills(),
    })
}

/// Closed-form world dynamics. Implementations are pure functions of the
/// state (which carries the episode's randomization in its geometry).
pub(crate) trait WorldRules: Send + Sync {
    fn agent_state_dim(&self) -> usize;
    fn geometry_dim(&self) -> usize;
    fn flags_dim(&self) -> usize;
    fn tracks_orientation(&self) -> bool;
    fn skills(&self) -> Vec<SkillSpec>;
    fn reset(&self, rng: &mut ChaCha8Rng) -> JointState;
    /// Next state ignoring the timestep, which [`Env`] advances.
    fn transition(&self, state: &JointState, actions: &[AgentAction]) -> JointState;
    fn is_goal(&self, state: &JointState) -> bool;
}

pub struct StepOutcome {
    pub next: JointState,
    /// Sparse reward: 1 on the first step that reaches the goal.
    pub extrinsic: u8,
    pub done: bool,
}

pub struct Env {
    cfg: EnvConfig,
    schema: EnvSchema,
    rules: Box<dyn WorldRules>,
    reward_evaluations: AtomicU64,
}

impl std::fmt::Debug for Env {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Env").field("cfg", &self.cfg).finish()
    }
}

impl Clone for Env {
    fn clone(&self) -> Self {
        Env::new(self.cfg.clone()).expect("config already validated")
    }
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        if cfg.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if cfg.location_range.is_nan() || cfg.location_range < 0.0 {
            return Err(invalid("location_range must be non-negative"));
        }
        let kind = cfg.kind()?;
        let n = cfg.n_agents;
        let agents_ok = match kind {
            EnvKind::BarLift | EnvKind::BottleTwist => n == 2,
            EnvKind::BlockPush | EnvKind::Soccer => n == 2 || n == 3,
            EnvKind::Reach => n == 1 || n == 2,
        };
        if !agents_ok {
            return Err(invalid(format!("{} does not support {n} agents", cfg.name)));
        }
        if let Some(a) = cfg.active_agent {
            if a >= n {
                return Err(invalid(format!("active agent {a} out of range")));
            }
        }
        let range = cfg.location_range;
        let rules: Box<dyn WorldRules> = match kind {
            EnvKind::BarLift => Box::new(bar_lift::BarLift::new(cfg.goal_or(0.25), range)),
            EnvKind::BottleTwist => {
                let default = if cfg.name == "corkscrew" {
                    std::f64::consts::PI
                } else {
                    std::f64::consts::FRAC_PI_2
                };
                Box::new(bottle_twist::BottleTwist::new(cfg.goal_or(default), range))
            }
            EnvKind::BlockPush => {
                let default = if n == 3 { 0.06 } else { 0.08 };
                Box::new(block_push::BlockPush::new(n, cfg.goal_or(default), range))
            }
            EnvKind::Soccer => Box::new(soccer::Soccer::new(n, cfg.goal_or(0.15), range)),
            EnvKind::Reach => Box::new(reach::Reach::new(n, cfg.goal_or(0.08), range)),
        };
        let schema = EnvSchema {
            name: cfg.name.clone(),
            n_agents: n,
            horizon: cfg.horizon,
            agent_state_dim: rules.agent_state_dim(),
            geometry_dim: rules.geometry_dim(),
            flags_dim: rules.flags_dim(),
            tracks_orientation: rules.tracks_orientation(),
            skills: rules.skills(),
        };
        Ok(Self {
            cfg,
            schema,
            rules,
            reward_evaluations: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn schema(&self) -> &EnvSchema {
        &self.schema
    }

    /// Number of goal checks performed so far (each [`Env::step`] is one).
    pub fn reward_evaluations(&self) -> u64 {
        self.reward_evaluations.load(Ordering::Relaxed)
    }

    /// Initial state of the episode identified by `episode_seed`.
    pub fn reset(&self, episode_seed: u64) -> JointState {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode_seed);
        self.rules.reset(&mut rng)
    }

    fn masked<'a>(&self, action: &'a JointAction) -> std::borrow::Cow<'a, [AgentAction]> {
        match self.cfg.active_agent {
            None => std::borrow::Cow::Borrowed(&action.agents),
            Some(active)
                if action
                    .agents
                    .iter()
                    .enumerate()
                    .all(|(i, a)| i == active || a.skill == self.schema.noop_skill()) =>
            {
                std::borrow::Cow::Borrowed(&action.agents)
            }
            Some(active) => std::borrow::Cow::Owned(
                action
                    .agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        if i == active {
                            a.clone()
                        } else {
                            self.schema.noop_action()
                        }
                    })
                    .collect(),
            ),
        }
    }

    fn check_state(&self, state: &JointState) -> Result<()> {
        if state.agents.len() != self.schema.n_agents
            || state.agents.iter().any(|a| a.len() != self.schema.agent_state_dim)
            || state.env.geometry.len() != self.schema.geometry_dim
            || state.env.flags.len() != self.schema.flags_dim
        {
            return Err(invalid(format!("state does not match the {} schema", self.schema.name)));
        }
        Ok(())
    }

    /// Dynamics only: no goal check, no reward.
    pub fn transition(&self, state: &JointState, action: &JointAction) -> Result<JointState> {
        self.check_state(state)?;
        self.schema.validate_action(action)?;
        let mut next = self.rules.transition(state, &self.masked(action));
        next.env.timestep = state.env.timestep + 1;
        Ok(next)
    }

    pub fn step(&self, state: &JointState, action: &JointAction) -> Result<StepOutcome> {
        let next = self.transition(state, action)?;
        self.reward_evaluations.fetch_add(1, Ordering::Relaxed);
        let goal = self.rules.is_goal(&next);
        let done = goal || next.env.timestep >= self.cfg.horizon;
        Ok(StepOutcome {
            next,
            extrinsic: goal as u8,
            done,
        })
    }

    /// Goal predicate, for analysis code (does not count as a reward evaluation).
    pub fn is_goal(&self, state: &JointState) -> bool {
        self.rules.is_goal(state)
    }

    pub fn at_horizon(&self, state: &JointState) -> bool {
        state.env.timestep >= self.cfg.horizon
    }
}

fn uniform(rng: &mut ChaCha8Rng, low: f64, high: f64) -> f64 {
    if high > low {
        rng.random_range(low..high)
    } else {
        low
    }
}
