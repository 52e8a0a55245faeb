use rand::Rng as _;

use super::{clip_action, CmdpEnv, CmdpSpec, EpisodeClock, StepResult, DEFAULT_GAMMA_C, DEFAULT_GAMMA_R};
use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::rng::Rng;
use crate::Result;

pub const START_CENTER: [f64; 2] = [-0.7, -0.7];
pub const START_HALF_WIDTH: f64 = 0.1;
pub const GOAL: [f64; 2] = [0.7, 0.7];
pub const GOAL_RADIUS: f64 = 0.1;
pub const HAZARD: [f64; 2] = [0.0, 0.0];
pub const HAZARD_RADIUS: f64 = 0.15;
/// Displacement per step at full action.
pub const MAX_SPEED: f64 = 0.2;
pub const DISTANCE_SCALE: f64 = 2.0;
pub const GOAL_BONUS: f64 = 10.0;
pub const ARENA: f64 = 1.0;

/// Point robot in `[-1, 1]²` that must reach a fixed goal while avoiding a hazard disc on
/// the straight line from the start box.
///
/// State is `(x, y, goal_x, goal_y)`; the action is a velocity, `pos += 0.2·a`. Each step
/// pays `−2·‖pos − goal‖`, plus `10` on entering the goal disc (which ends the episode).
/// Entering the hazard disc sets `c = 1` and ends the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGoal2D {
    pub(crate) spec: CmdpSpec,
    pos: [f64; 2],
    clock: EpisodeClock,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl PointGoal2D {
    pub fn new() -> Self {
        Self {
            spec: CmdpSpec {
                state_dim: 4,
                action_dim: 2,
                gamma_r: DEFAULT_GAMMA_R,
                gamma_c: DEFAULT_GAMMA_C,
                max_episode_steps: 50,
            },
            pos: START_CENTER,
            clock: EpisodeClock::default(),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], GOAL[0], GOAL[1]]
    }
}

impl Default for PointGoal2D {
    fn default() -> Self {
        Self::new()
    }
}

impl CmdpEnv for PointGoal2D {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        for i in 0..2 {
            self.pos[i] = START_CENTER[i] + rng.random_range(-START_HALF_WIDTH..START_HALF_WIDTH);
        }
        self.clock.start();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clip_action(action, 2)?;
        self.clock.tick()?;
        for i in 0..2 {
            self.pos[i] = (self.pos[i] + MAX_SPEED * a[i]).clamp(-ARENA, ARENA);
        }
        let d = dist(self.pos, GOAL);
        let c = dist(self.pos, HAZARD) < HAZARD_RADIUS;
        let goal = !c && d < GOAL_RADIUS;
        let terminal = c || goal;
        let truncated = self.clock.finish(terminal, self.spec.max_episode_steps);
        Ok(StepResult {
            s_next: self.observe(),
            r: -DISTANCE_SCALE * d + if goal { GOAL_BONUS } else { 0.0 },
            c,
            terminal,
            truncated,
        })
    }
}

impl Encode for PointGoal2D {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.spec);
        enc.f64(self.pos[0]);
        enc.f64(self.pos[1]);
        enc.put(&self.clock);
    }
}

impl Decode for PointGoal2D {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            spec: dec.get()?,
            pos: [dec.f64()?, dec.f64()?],
            clock: dec.get()?,
        })
    }
}
