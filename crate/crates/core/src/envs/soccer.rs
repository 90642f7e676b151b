//! Agents dribble a ball into a goal region.
//!
//! Agents move in one of four directions. An agent that starts its move
//! within `CAPTURE_RADIUS` of the ball carries it along; with several
//! carriers the ball follows their mean displacement. After moving, every
//! agent within `CAPTURE_RADIUS` of the ball has its possession flag set. A
//! goal counts only once every possession flag is set. Orientation is not
//! tracked.
//!
//! Agent state: `[x, y]`. Geometry: `[goal_x, goal_y, goal_radius]`.
//! Flags: one possession flag per agent.

use rand_chacha::ChaCha8Rng;

use super::block_push::{direction_skills, DIRECTIONS};
use super::{uniform, AgentAction, EnvState, JointState, SkillSpec, WorldRules};
use crate::pose::{Pose, Quat};

pub const CAPTURE_RADIUS: f64 = 0.05;

pub(crate) fn skills() -> Vec<SkillSpec> {
    direction_skills("move", 0.3)
}

const AGENT_STARTS: [[f64; 2]; 3] = [[-0.3, -0.2], [-0.3, 0.2], [-0.4, 0.0]];

pub(crate) struct Soccer {
    n_agents: usize,
    goal_radius: f64,
    location_range: f64,
}

impl Soccer {
    pub(crate) fn new(n_agents: usize, goal_radius: f64, location_range: f64) -> Self {
        Self {
            n_agents,
            goal_radius,
            location_range,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl WorldRules for Soccer {
    fn agent_state_dim(&self) -> usize {
        2
    }
    fn geometry_dim(&self) -> usize {
        3
    }
    fn flags_dim(&self) -> usize {
        self.n_agents
    }
    fn tracks_orientation(&self) -> bool {
        false
    }
    fn skills(&self) -> Vec<SkillSpec> {
        skills()
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> JointState {
        let r = self.location_range;
        let x = uniform(rng, -r, r);
        let y = uniform(rng, -r, r);
        let gy = uniform(rng, -0.1, 0.1);
        JointState {
            agents: AGENT_STARTS[..self.n_agents].iter().map(|p| p.to_vec()).collect(),
            env: EnvState {
                timestep: 0,
                geometry: vec![0.6, gy, self.goal_radius],
                object_pose: Pose::new([x, y, 0.0], Quat::IDENTITY),
                flags: vec![0.0; self.n_agents],
                hidden: Vec::new(),
            },
        }
    }

    fn transition(&self, state: &JointState, actions: &[AgentAction]) -> JointState {
        let mut next = state.clone();
        let ball = state.env.object_pose.position;
        let moves: Vec<[f64; 2]> = actions
            .iter()
            .map(|a| match DIRECTIONS.get(a.skill) {
                Some(d) => [d[0] * a.params[0], d[1] * a.params[0]],
                None => [0.0, 0.0],
            })
            .collect();
        let mut carry = [0.0, 0.0];
        let mut carriers = 0;
        for (agent, m) in state.agents.iter().zip(&moves) {
            if (m[0] != 0.0 || m[1] != 0.0) && dist(agent, &ball) <= CAPTURE_RADIUS {
                carry[0] += m[0];
                carry[1] += m[1];
                carriers += 1;
            }
        }
        if carriers > 0 {
            next.env.object_pose.position[0] += carry[0] / carriers as f64;
            next.env.object_pose.position[1] += carry[1] / carriers as f64;
        }
        let ball = next.env.object_pose.position;
        for (i, (agent, m)) in next.agents.iter_mut().zip(&moves).enumerate() {
            agent[0] += m[0];
            agent[1] += m[1];
            if dist(agent, &ball) <= CAPTURE_RADIUS {
                next.env.flags[i] = 1.0;
            }
        }
        next
    }

    fn is_goal(&self, state: &JointState) -> bool {
        let g = &state.env.geometry;
        state.env.flags.iter().all(|&f| f == 1.0) && dist(&state.env.object_pose.position, g) <= g[2]
    }
}
