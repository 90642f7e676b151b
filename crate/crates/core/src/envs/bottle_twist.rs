//! A cuboid cap hinged on a cuboid base.
//!
//! `grasp(height, approach_angle)` takes hold of the base (height below the
//! hinge) or the cap (at or above it); it needs `|approach_angle| ≤ 60°` and
//! a height on the bottle. `twist(angle)` by an agent holding the cap rotates
//! the cap about z. If some other agent holds the base at the same time, only
//! the cap turns and the relative angle grows; otherwise base and cap turn
//! together.
//!
//! Object pose: the cap (world yaw). Flags: `[relative cap angle (rad)]`.
//! Agent state: `[holds_base, holds_cap]`. Geometry: `[base_height, cap_height]`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

use rand_chacha::ChaCha8Rng;

use super::{uniform, AgentAction, EnvState, JointState, SkillSpec, WorldRules};
use crate::pose::{Pose, Quat};

pub(crate) const GRASP: usize = 0;
pub(crate) const TWIST: usize = 1;

pub(crate) fn skills() -> Vec<SkillSpec> {
    vec![
        SkillSpec::new(
            "grasp",
            &[("height", -0.1, 0.1), ("approach_angle", -FRAC_PI_2, FRAC_PI_2)],
        ),
        SkillSpec::new("twist", &[("angle", 0.0, FRAC_PI_2)]),
        SkillSpec::new("no-op", &[]),
    ]
}

pub(crate) struct BottleTwist {
    goal_angle: f64,
    location_range: f64,
}

impl BottleTwist {
    pub(crate) fn new(goal_angle: f64, location_range: f64) -> Self {
        Self {
            goal_angle,
            location_range,
        }
    }
}

impl WorldRules for BottleTwist {
    fn agent_state_dim(&self) -> usize {
        2
    }
    fn geometry_dim(&self) -> usize {
        2
    }
    fn flags_dim(&self) -> usize {
        1
    }
    fn tracks_orientation(&self) -> bool {
        true
    }
    fn skills(&self) -> Vec<SkillSpec> {
        skills()
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> JointState {
        let r = self.location_range;
        let base = uniform(rng, 0.04, 0.1);
        let cap = uniform(rng, 0.02, 0.06);
        let x = uniform(rng, -r, r);
        let y = uniform(rng, -r, r);
        JointState {
            agents: vec![vec![0.0, 0.0]; 2],
            env: EnvState {
                timestep: 0,
                geometry: vec![base, cap],
                object_pose: Pose::new([x, y, base], Quat::IDENTITY),
                flags: vec![0.0],
                hidden: Vec::new(),
            },
        }
    }

    fn transition(&self, state: &JointState, actions: &[AgentAction]) -> JointState {
        let (base_h, cap_h) = (state.env.geometry[0], state.env.geometry[1]);
        let mut next = state.clone();
        for (i, a) in actions.iter().enumerate() {
            if a.skill == GRASP {
                let (h, approach) = (a.params[0], a.params[1]);
                if approach.abs() <= FRAC_PI_3 && h >= -base_h && h <= cap_h {
                    next.agents[i] = if h < 0.0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
                }
            }
        }
        let twisting: Vec<bool> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| a.skill == TWIST && next.agents[i][1] == 1.0)
            .collect();
        for (i, a) in actions.iter().enumerate() {
            if !twisting[i] {
                continue;
            }
            let angle = a.params[0];
            let base_held = next
                .agents
                .iter()
                .enumerate()
                .any(|(j, s)| j != i && !twisting[j] && s[0] == 1.0);
            let pose = &mut next.env.object_pose;
            pose.orientation = Quat::from_axis_angle([0.0, 0.0, 1.0], angle)
                .hamilton(pose.orientation)
                .normalized()
                .canonical();
            if base_held {
                next.env.flags[0] += angle;
            }
        }
        next
    }

    fn is_goal(&self, state: &JointState) -> bool {
        state.env.flags[0] >= self.goal_angle
    }
}
