use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::{wrap_angle, Vec2};
use super::layout::{Layout, TargetRule};
use super::render::{render, Frame};
use crate::error::{Error, Result};

pub const TURN_ANGLE: f64 = PI / 12.0;

/// Clearance between the target center and walls when it is placed randomly.
const TARGET_CLEARANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Action {
    Left = 0,
    Right = 1,
    Forward = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Left, Action::Right, Action::Forward];
    pub const COUNT: usize = 3;

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or(Error::UnknownAction(id))
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Forward => "forward",
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown action '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in `[0, 2π)`, counter-clockwise from +x.
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Frame,
    pub reward: f64,
    pub done: bool,
    pub reached: bool,
}

/// Episodic navigation task on one layout.
#[derive(Debug, Clone)]
pub struct NavEnv {
    layout: Arc<Layout>,
    rng: ChaCha8Rng,
    pose: Pose,
    target: Option<Vec2>,
    target_enabled: bool,
    steps: usize,
    done: bool,
}

impl NavEnv {
    /// Environment with a target; the first episode is already reset.
    pub fn new(layout: Arc<Layout>, seed: u64) -> Self {
        Self::build(layout, seed, true)
    }

    /// Target-free variant used for data collection. Episodes end only at
    /// the step limit.
    pub fn empty(layout: Arc<Layout>, seed: u64) -> Self {
        Self::build(layout, seed, false)
    }

    fn build(layout: Arc<Layout>, seed: u64, target_enabled: bool) -> Self {
        let mut env = Self {
            layout,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pose: Pose::new(0.0, 0.0, 0.0),
            target: None,
            target_enabled,
            steps: 0,
            done: false,
        };
        env.reset_state();
        env
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn target(&self) -> Option<Vec2> {
        self.target
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn max_steps(&self) -> usize {
        self.layout.max_steps()
    }

    /// Starts a new episode and returns its first observation.
    pub fn reset(&mut self) -> Frame {
        self.reset_state();
        self.observe()
    }

    /// Starts a new episode without rendering.
    pub fn reset_state(&mut self) {
        let layout = Arc::clone(&self.layout);
        let agent_r = layout.config().agent_radius;
        let target_r = layout.config().target_radius;
        loop {
            let p = layout.sample_in(&mut self.rng, layout.spawn_region(), agent_r);
            let heading = self.rng.gen_range(0.0..std::f64::consts::TAU);
            let target = if self.target_enabled {
                Some(match layout.target_rule() {
                    TargetRule::Fixed(t) => *t,
                    TargetRule::Within(region) => {
                        layout.sample_in(&mut self.rng, region, TARGET_CLEARANCE)
                    }
                })
            } else {
                None
            };
            if target.is_some_and(|t| t.distance(p) <= target_r + 0.5) {
                continue;
            }
            self.pose = Pose::new(p.x, p.y, heading);
            self.target = target;
            self.steps = 0;
            self.done = false;
            return;
        }
    }

    /// Places the agent (and target) explicitly and restarts the step count.
    pub fn set_state(&mut self, pose: Pose, target: Option<Vec2>) -> Result<()> {
        let p = pose.position();
        if !self.layout.is_free(p) {
            return Err(Error::OutsideFreeSpace { x: p.x, y: p.y });
        }
        self.pose = Pose::new(pose.x, pose.y, pose.heading);
        self.target = if self.target_enabled { target } else { None };
        self.steps = 0;
        self.done = false;
        Ok(())
    }

    pub fn observe(&self) -> Frame {
        render(&self.layout, self.pose, self.target).expect("agent pose is kept in free space")
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        let (reward, done, reached) = self.advance(action)?;
        Ok(Transition {
            observation: self.observe(),
            reward,
            done,
            reached,
        })
    }

    /// Applies an action without rendering. Returns `(reward, done, reached)`.
    pub fn advance(&mut self, action: Action) -> Result<(f64, bool, bool)> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        self.apply_motion(action);
        self.steps += 1;
        let l_max = self.layout.max_steps();
        let reached = self.target.is_some_and(|t| {
            t.distance(self.pose.position()) <= self.layout.config().target_radius
        });
        let reward = if reached {
            1.0 - 0.2 * self.steps as f64 / l_max as f64
        } else {
            0.0
        };
        self.done = reached || self.steps >= l_max;
        Ok((reward, self.done, reached))
    }

    /// Moves the agent without touching the episode state.
    pub(crate) fn apply_motion(&mut self, action: Action) {
        match action {
            Action::Left => self.pose.heading = wrap_angle(self.pose.heading + TURN_ANGLE),
            Action::Right => self.pose.heading = wrap_angle(self.pose.heading - TURN_ANGLE),
            Action::Forward => {
                let from = self.pose.position();
                let delta = Vec2::from_angle(self.pose.heading) * self.layout.config().step_len;
                let to = self.slide(from, delta);
                self.pose.x = to.x;
                self.pose.y = to.y;
            }
        }
    }

    /// Straight move if possible, else the component along the nearest wall,
    /// else no move.
    fn slide(&self, from: Vec2, delta: Vec2) -> Vec2 {
        let to = from + delta;
        if self.layout.path_free(from, to) {
            return to;
        }
        if let Some(wall) = self.layout.nearest_wall(to) {
            let e = wall.b - wall.a;
            let tangent = e * (1.0 / e.norm());
            let slid = from + tangent * delta.dot(tangent);
            if self.layout.path_free(from, slid) {
                return slid;
            }
        }
        from
    }
}
