use std::f64::consts::PI;

use rand::Rng as _;

use super::{clip_action, CmdpEnv, CmdpSpec, EpisodeClock, StepResult, DEFAULT_GAMMA_C, DEFAULT_GAMMA_R};
use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::rng::Rng;
use crate::Result;

pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_SPEED: f64 = 8.0;
pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 10.0;
/// Angular speed above which the constraint is violated.
pub const SPEED_LIMIT: f64 = 5.0;

/// Torque-limited pendulum swing-up with a velocity constraint.
///
/// State is `(cos θ, sin θ, θ̇ / 8)`; the action scales a torque of at most 2. The reward
/// is `−(θ² + 0.1·θ̇² + 0.001·u²)` with `θ` wrapped to `[−π, π)`. Exceeding
/// [`SPEED_LIMIT`] in angular speed sets `c = 1` and ends the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedPendulum {
    pub(crate) spec: CmdpSpec,
    theta: f64,
    theta_dot: f64,
    clock: EpisodeClock,
}

fn wrap(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl ConstrainedPendulum {
    pub fn new() -> Self {
        Self {
            spec: CmdpSpec {
                state_dim: 3,
                action_dim: 1,
                gamma_r: DEFAULT_GAMMA_R,
                gamma_c: DEFAULT_GAMMA_C,
                max_episode_steps: 200,
            },
            theta: 0.0,
            theta_dot: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot / MAX_SPEED]
    }
}

impl Default for ConstrainedPendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl CmdpEnv for ConstrainedPendulum {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.clock.start();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clip_action(action, 1)?;
        self.clock.tick()?;
        let u = MAX_TORQUE * a[0];
        let th = wrap(self.theta);
        let r = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        self.theta_dot = (self.theta_dot + (1.5 * GRAVITY * self.theta.sin() + 3.0 * u) * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        let c = self.theta_dot.abs() > SPEED_LIMIT;
        let truncated = self.clock.finish(c, self.spec.max_episode_steps);
        Ok(StepResult {
            s_next: self.observe(),
            r,
            c,
            terminal: c,
            truncated,
        })
    }
}

impl Encode for ConstrainedPendulum {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.spec);
        enc.f64(self.theta);
        enc.f64(self.theta_dot);
        enc.put(&self.clock);
    }
}

impl Decode for ConstrainedPendulum {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            spec: dec.get()?,
            theta: dec.f64()?,
            theta_dot: dec.f64()?,
            clock: dec.get()?,
        })
    }
}
