//! Two agents lift a heavy bar lying along the x axis.
//!
//! Rules, applied per step after grasps are resolved:
//!
//! * `grasp(offset, z_orientation, approach_height)` places the gripper at
//!   `offset * BAR_REACH` meters from the bar center. It is infeasible when
//!   that point lies beyond the bar's half-length, when the gripper is more
//!   than `GRASP_ALIGN_TOL` from perpendicular to the bar, or when it
//!   approaches from lower than `GRASP_MIN_APPROACH`.
//! * `lift(d)` needs a grasp. When both agents lift while grasping opposite
//!   halves, the bar rises by `min(d_A, d_B)` and stays level.
//! * Any other lift is a solo lift: the center rises by `BAR_LEAK * d / ρ`
//!   and the bar tilts by `BAR_TILT_RATE * d * ρ` radians about the y axis,
//!   raising the lifter's end (a grasp at the exact center counts as the +x
//!   half). `ρ` is the bar's relative density, drawn per episode and never
//!   observed.
//! * A tilt beyond `BAR_DROP_TILT` drops the bar: it returns to the table,
//!   level, and every grasp is released. So does a feasible re-grasp by an
//!   agent that is holding a raised bar alone, since the bar is unsupported
//!   while the gripper moves.
//!
//! A lone lifter therefore raises the bar by at most
//! `BAR_LEAK * BAR_DROP_TILT / (BAR_TILT_RATE * ρ²)`, about 0.2 m at the
//! lightest density.
//!
//! Agent state: `[grasped, grasp position along the bar (m)]`.
//! Geometry: `[half_length]`. Hidden: `[ρ]`.

use std::f64::consts::TAU;

use rand_chacha::ChaCha8Rng;

use super::{uniform, AgentAction, EnvState, JointState, SkillSpec, WorldRules};
use crate::pose::{Pose, Quat};

pub const BAR_REACH: f64 = 0.5;
pub const BAR_LEAK: f64 = 0.2;
/// Radians of tilt per meter of solo lift.
pub const BAR_TILT_RATE: f64 = 1.0;
pub const BAR_DROP_TILT: f64 = 0.5;
/// Largest angle between the gripper and the bar's normal that still grasps.
pub const GRASP_ALIGN_TOL: f64 = 15.0 * std::f64::consts::PI / 180.0;
pub const GRASP_MIN_APPROACH: f64 = 0.05;
const DENSITY: (f64, f64) = (0.7, 1.5);

pub(crate) const GRASP: usize = 0;
pub(crate) const LIFT: usize = 1;

const HALF_LENGTH: (f64, f64) = (0.3, 0.5);

pub(crate) fn skills() -> Vec<SkillSpec> {
    vec![
        SkillSpec::new(
            "grasp",
            &[
                ("offset", -1.0, 1.0),
                ("z_orientation", 0.0, TAU),
                ("approach_height", 0.0, 0.1),
            ],
        ),
        SkillSpec::new("lift", &[("distance", 0.0, 0.5)]),
        SkillSpec::new("no-op", &[]),
    ]
}

pub(crate) struct BarLift {
    goal_height: f64,
    location_range: f64,
}

impl BarLift {
    pub(crate) fn new(goal_height: f64, location_range: f64) -> Self {
        Self {
            goal_height,
            location_range,
        }
    }
}

fn solo_lift(pose: &mut Pose, distance: f64, grasp_pos: f64, density: f64) {
    pose.position[2] += BAR_LEAK * distance / density;
    let sign = if grasp_pos < 0.0 { 1.0 } else { -1.0 };
    let tilt = Quat::from_axis_angle([0.0, 1.0, 0.0], sign * BAR_TILT_RATE * distance * density);
    pose.orientation = tilt.hamilton(pose.orientation).normalized().canonical();
}

impl WorldRules for BarLift {
    fn agent_state_dim(&self) -> usize {
        2
    }
    fn geometry_dim(&self) -> usize {
        1
    }
    fn flags_dim(&self) -> usize {
        0
    }
    fn tracks_orientation(&self) -> bool {
        true
    }
    fn skills(&self) -> Vec<SkillSpec> {
        skills()
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> JointState {
        let r = self.location_range;
        let half_length = uniform(rng, HALF_LENGTH.0, HALF_LENGTH.1);
        let x = uniform(rng, -r, r);
        let y = uniform(rng, -r, r);
        let density = uniform(rng, DENSITY.0, DENSITY.1);
        JointState {
            agents: vec![vec![0.0, 0.0]; 2],
            env: EnvState {
                timestep: 0,
                geometry: vec![half_length],
                object_pose: Pose::new([x, y, 0.0], Quat::IDENTITY),
                flags: Vec::new(),
                hidden: vec![density],
            },
        }
    }

    fn transition(&self, state: &JointState, actions: &[AgentAction]) -> JointState {
        let half_length = state.env.geometry[0];
        let raised = state.env.object_pose.position[2] > 0.0;
        let mut next = state.clone();
        let mut unsupported = false;
        for (i, a) in actions.iter().enumerate() {
            if a.skill == GRASP {
                let pos = a.params[0] * BAR_REACH;
                if pos.abs() <= half_length
                    && a.params[1].cos().abs() >= GRASP_ALIGN_TOL.cos()
                    && a.params[2] >= GRASP_MIN_APPROACH
                {
                    let others_hold = state.agents.iter().enumerate().any(|(j, s)| j != i && s[0] == 1.0);
                    unsupported |= raised && state.agents[i][0] == 1.0 && !others_hold;
                    next.agents[i] = vec![1.0, pos];
                }
            }
        }
        // (distance, grasp position) of every feasible lift
        let lifts: Vec<(f64, f64)> = actions
            .iter()
            .enumerate()
            .filter(|(i, a)| a.skill == LIFT && state.agents[*i][0] == 1.0)
            .map(|(i, a)| (a.params[0], state.agents[i][1]))
            .collect();
        let pose = &mut next.env.object_pose;
        if lifts.len() == 2 && lifts[0].1 * lifts[1].1 < 0.0 {
            pose.position[2] += lifts[0].0.min(lifts[1].0);
        } else {
            for &(d, pos) in &lifts {
                solo_lift(pose, d, pos, state.env.hidden[0]);
            }
        }
        if unsupported || pose.orientation.angle_about(1).abs() > BAR_DROP_TILT {
            pose.position[2] = 0.0;
            pose.orientation = Quat::IDENTITY;
            for a in next.agents.iter_mut() {
                *a = vec![0.0, 0.0];
            }
        }
        next
    }

    fn is_goal(&self, state: &JointState) -> bool {
        state.env.object_pose.position[2] >= self.goal_height
    }
}
