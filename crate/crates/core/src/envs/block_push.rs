//! Agents push a large block toward a target region.
//!
//! Each agent picks one of four directions plus an amount. The block moves
//! only when every agent pushes and all push directions lie within
//! `PUSH_CONE` of each other; it then moves by the smallest amount along the
//! mean direction, and the agents move with it. Any other combination leaves
//! the block in place.
//!
//! Agent state: `[x, y]`. Geometry: `[target_x, target_y, target_radius]`.
//! Orientation is not tracked.

use std::f64::consts::FRAC_PI_4;

use rand_chacha::ChaCha8Rng;

use super::{uniform, AgentAction, EnvState, JointState, SkillSpec, WorldRules};
use crate::pose::{Pose, Quat};

/// Maximum angle between any two pushes that still move the block.
pub const PUSH_CONE: f64 = FRAC_PI_4;

pub(crate) const DIRECTIONS: [[f64; 2]; 4] = [[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]];

pub(crate) fn direction_skills(prefix: &str, max_amount: f64) -> Vec<SkillSpec> {
    let mut v: Vec<SkillSpec> = ["up", "down", "left", "right"]
        .iter()
        .map(|d| SkillSpec::new(&format!("{prefix}_{d}"), &[("amount", 0.0, max_amount)]))
        .collect();
    v.push(SkillSpec::new("no-op", &[]));
    v
}

pub(crate) fn skills() -> Vec<SkillSpec> {
    direction_skills("push", 0.2)
}

/// Start offsets of the agents relative to the block.
const AGENT_OFFSETS: [[f64; 2]; 3] = [[-0.15, 0.1], [-0.15, -0.1], [-0.2, 0.0]];

pub(crate) struct BlockPush {
    n_agents: usize,
    goal_radius: f64,
    location_range: f64,
}

impl BlockPush {
    pub(crate) fn new(n_agents: usize, goal_radius: f64, location_range: f64) -> Self {
        Self {
            n_agents,
            goal_radius,
            location_range,
        }
    }

    /// Range of the target's x offset from the block's start.
    fn target_offset(&self) -> (f64, f64) {
        if self.n_agents == 3 {
            (0.25, 0.4)
        } else {
            (0.2, 0.35)
        }
    }
}

impl WorldRules for BlockPush {
    fn agent_state_dim(&self) -> usize {
        2
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
        let r = self.location_range;
        let x = uniform(rng, -r, r);
        let y = uniform(rng, -r, r);
        let (lo, hi) = self.target_offset();
        let tx = x + uniform(rng, lo, hi);
        let ty = y + uniform(rng, -0.05, 0.05);
        JointState {
            agents: AGENT_OFFSETS[..self.n_agents]
                .iter()
                .map(|o| vec![x + o[0], y + o[1]])
                .collect(),
            env: EnvState {
                timestep: 0,
                geometry: vec![tx, ty, self.goal_radius],
                object_pose: Pose::new([x, y, 0.0], Quat::IDENTITY),
                flags: Vec::new(),
                hidden: Vec::new(),
            },
        }
    }

    fn transition(&self, state: &JointState, actions: &[AgentAction]) -> JointState {
        let mut next = state.clone();
        let pushes: Option<Vec<([f64; 2], f64)>> = actions
            .iter()
            .map(|a| DIRECTIONS.get(a.skill).map(|d| (*d, a.params[0])))
            .collect();
        let Some(pushes) = pushes else {
            return next;
        };
        let cos_cone = PUSH_CONE.cos();
        let aligned = pushes.iter().all(|(d1, _)| {
            pushes
                .iter()
                .all(|(d2, _)| d1[0] * d2[0] + d1[1] * d2[1] >= cos_cone - 1e-12)
        });
        if !aligned {
            return next;
        }
        let mut mean = [0.0, 0.0];
        for (d, _) in &pushes {
            mean[0] += d[0];
            mean[1] += d[1];
        }
        let norm = (mean[0] * mean[0] + mean[1] * mean[1]).sqrt();
        let amount = pushes.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let shift = [amount * mean[0] / norm, amount * mean[1] / norm];
        next.env.object_pose.position[0] += shift[0];
        next.env.object_pose.position[1] += shift[1];
        for a in next.agents.iter_mut() {
            a[0] += shift[0];
            a[1] += shift[1];
        }
        next
    }

    fn is_goal(&self, state: &JointState) -> bool {
        let p = state.env.object_pose.position;
        let g = &state.env.geometry;
        ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt() <= g[2]
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::act;
    use super::super::{Env, EnvConfig, JointAction};

    const UP: usize = 0;
    const RIGHT: usize = 3;
    const NOOP: usize = 4;

    #[test]
    fn aligned_pushes_move_by_the_smallest_amount() {
        let env = Env::new(EnvConfig::new("block-push", 2)).unwrap();
        let s = env.reset(1);
        let a = JointAction {
            agents: vec![act(RIGHT, &[0.15]), act(RIGHT, &[0.1])],
        };
        let out = env.step(&s, &a).unwrap();
        let dx = out.next.env.object_pose.position[0] - s.env.object_pose.position[0];
        assert!((dx - 0.1).abs() < 1e-15);
        assert!((out.next.agents[0][0] - s.agents[0][0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn lone_or_misaligned_pushes_do_nothing() {
        let env = Env::new(EnvConfig::new("block-push", 2)).unwrap();
        let s = env.reset(1);
        for a in [
            JointAction {
                agents: vec![act(RIGHT, &[0.15]), act(NOOP, &[])],
            },
            JointAction {
                agents: vec![act(RIGHT, &[0.15]), act(UP, &[0.15])],
            },
        ] {
            let out = env.step(&s, &a).unwrap();
            assert_eq!(out.next.env.object_pose, s.env.object_pose);
            assert_eq!(out.next.env.timestep, 1);
        }
    }

    #[test]
    fn three_agents_must_all_push() {
        let env = Env::new(EnvConfig::new("block-push", 3)).unwrap();
        let s = env.reset(2);
        let two = JointAction {
            agents: vec![act(RIGHT, &[0.2]), act(RIGHT, &[0.2]), act(NOOP, &[])],
        };
        assert_eq!(env.step(&s, &two).unwrap().next.env.object_pose, s.env.object_pose);
        let three = JointAction {
            agents: vec![act(RIGHT, &[0.2]), act(RIGHT, &[0.2]), act(RIGHT, &[0.2])],
        };
        let moved = env.step(&s, &three).unwrap().next;
        assert!((moved.env.object_pose.position[0] - s.env.object_pose.position[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn scripted_pushes_reach_the_target() {
        for n in [2, 3] {
            let env = Env::new(EnvConfig::new("block-push", n)).unwrap();
            for ep in 0..100 {
                let mut s = env.reset(ep);
                let mut solved = false;
                for _ in 0..10 {
                    let dx = s.env.geometry[0] - s.env.object_pose.position[0];
                    let dy = s.env.geometry[1] - s.env.object_pose.position[1];
                    let (skill, amt) = if dx.abs() >= dy.abs() {
                        (if dx > 0.0 { RIGHT } else { 2 }, dx.abs().min(0.2))
                    } else {
                        (if dy > 0.0 { UP } else { 1 }, dy.abs().min(0.2))
                    };
                    let a = JointAction {
                        agents: (0..n).map(|_| act(skill, &[amt])).collect(),
                    };
                    let out = env.step(&s, &a).unwrap();
                    s = out.next;
                    if out.extrinsic == 1 {
                        solved = true;
                        break;
                    }
                }
                assert!(solved);
            }
        }
    }
}
