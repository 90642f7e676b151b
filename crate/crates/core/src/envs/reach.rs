//! A marker moved toward a target. Every agent's move adds to the marker's
//! displacement, so joint dynamics are exactly the sequential composition of
//! the per-agent dynamics.
//!
//! Agent state: empty. Geometry: `[target_x, target_y, target_radius]`.

use std::f64::consts::TAU;

use rand_chacha::ChaCha8Rng;

use super::block_push::{direction_skills, DIRECTIONS};
use super::{uniform, AgentAction, EnvState, JointState, SkillSpec, WorldRules};
use crate::pose::{Pose, Quat};

pub(crate) fn skills() -> Vec<SkillSpec> {
    direction_skills("move", 0.2)
}

pub(crate) struct Reach {
    n_agents: usize,
    goal_radius: f64,
    location_range: f64,
}

impl Reach {
    pub(crate) fn new(n_agents: usize, goal_radius: f64, location_range: f64) -> Self {
        Self {
            n_agents,
            goal_radius,
            location_range,
        }
    }
}

impl WorldRules for Reach {
    fn agent_state_dim(&self) -> usize {
        0
    }
    fn geometry_dim(&self) -> usize {
        3
    }
    fn flags_dim(&self) -> usize {
        0
    }
    fn tracks_orientation(&self) -> bool {
        false
    }
    fn skills(&self) -> Vec<SkillSpec> {
        skills()
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> JointState {
        let r = self.location_range / 2.0;
        let x = uniform(rng, -r, r);
        let y = uniform(rng, -r, r);
        let d = uniform(rng, 0.15, 0.3);
        let phi = uniform(rng, 0.0, TAU);
        JointState {
            agents: vec![Vec::new(); self.n_agents],
            env: EnvState {
                timestep: 0,
                geometry: vec![x + d * phi.cos(), y + d * phi.sin(), self.goal_radius],
                object_pose: Pose::new([x, y, 0.0], Quat::IDENTITY),
                flags: Vec::new(),
                hidden: Vec::new(),
            },
        }
    }

    fn transition(&self, state: &JointState, actions: &[AgentAction]) -> JointState {
        let mut next = state.clone();
        for a in actions {
            if let Some(d) = DIRECTIONS.get(a.skill) {
                next.env.object_pose.position[0] += d[0] * a.params[0];
                next.env.object_pose.position[1] += d[1] * a.params[0];
            }
        }
        next
    }

    fn is_goal(&self, state: &JointState) -> bool {
        let p = state.env.object_pose.position;
        let g = &state.env.geometry;
        ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt() <= g[2]
    }
}
