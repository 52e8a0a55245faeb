//! Constrained MDP contract and small environments.
//!
//! The constraint signal is observed on arrival: `c` of a step is `1` exactly when the
//! state reached by that step is a failure state, and such a step always ends the episode.

mod oracle;
mod pendulum;
mod point_goal;
mod tabular;

pub use oracle::{episode_failure_probability, exact_safety_q, exact_safety_q_with_gamma, TabularPolicy};
pub use pendulum::ConstrainedPendulum;
pub use point_goal::PointGoal2D;
pub use tabular::TabularChain;

use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::rng::Rng;
use crate::{Error, Result};

pub const DEFAULT_GAMMA_R: f64 = 0.99;
pub const DEFAULT_GAMMA_C: f64 = 0.6;

/// Static description of an environment. Actions always live in `[-1, 1]^action_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmdpSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub gamma_r: f64,
    pub gamma_c: f64,
    pub max_episode_steps: usize,
}

impl CmdpSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_r", self.gamma_r), ("gamma_c", self.gamma_c)] {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {g}")));
            }
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub s_next: Vec<f64>,
    pub r: f64,
    pub c: bool,
    /// Ended by violation or by reaching the goal.
    pub terminal: bool,
    /// Ended by the time limit only.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }

    /// Terminal without violation.
    pub fn success(&self) -> bool {
        self.terminal && !self.c
    }
}

pub trait CmdpEnv {
    fn spec(&self) -> &CmdpSpec;

    /// Starts an episode and returns `s_0 ~ ρ_0`.
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;

    /// Advances one step; actions are clipped to `[-1, 1]`. Stepping a finished (or never
    /// started) episode is a contract error.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

pub(crate) fn clip_action(action: &[f64], dim: usize) -> Result<Vec<f64>> {
    if action.len() != dim {
        return Err(Error::shape("env step", dim, action.len()));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::NonFinite("action".into()));
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}

/// Episode bookkeeping shared by the environments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct EpisodeClock {
    running: bool,
    steps: usize,
}

impl EpisodeClock {
    fn start(&mut self) {
        self.running = true;
        self.steps = 0;
    }

    fn tick(&mut self) -> Result<()> {
        if !self.running {
            return Err(Error::Contract("step called on a finished episode; call reset first".into()));
        }
        self.steps += 1;
        Ok(())
    }

    /// Closes the episode if it ended; returns the truncation flag.
    fn finish(&mut self, terminal: bool, limit: usize) -> bool {
        let truncated = !terminal && self.steps >= limit;
        if terminal || truncated {
            self.running = false;
        }
        truncated
    }
}

impl Encode for EpisodeClock {
    fn encode(&self, enc: &mut Encoder) {
        enc.bool(self.running);
        enc.usize(self.steps);
    }
}

impl Decode for EpisodeClock {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            running: dec.bool()?,
            steps: dec.usize()?,
        })
    }
}

impl Encode for CmdpSpec {
    fn encode(&self, enc: &mut Encoder) {
        enc.usize(self.state_dim);
        enc.usize(self.action_dim);
        enc.f64(self.gamma_r);
        enc.f64(self.gamma_c);
        enc.usize(self.max_episode_steps);
    }
}

impl Decode for CmdpSpec {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            state_dim: dec.usize()?,
            action_dim: dec.usize()?,
            gamma_r: dec.f64()?,
            gamma_c: dec.f64()?,
            max_episode_steps: dec.usize()?,
        })
    }
}

/// Environment names accepted in configuration.
pub const ENV_NAMES: [&str; 3] = ["tabular_chain", "point_goal", "pendulum"];

/// Any of the bundled environments, selected by name.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyEnv {
    Tabular(TabularChain),
    PointGoal(PointGoal2D),
    Pendulum(ConstrainedPendulum),
}

impl AnyEnv {
    /// Builds an environment by name. `rng` seeds the environment's own transition noise.
    pub fn from_name(name: &str, rng: Rng) -> Result<Self> {
        match name {
            "tabular_chain" => Ok(AnyEnv::Tabular(TabularChain::new(tabular::DEFAULT_STATES, rng)?)),
            "point_goal" => Ok(AnyEnv::PointGoal(PointGoal2D::new())),
            "pendulum" => Ok(AnyEnv::Pendulum(ConstrainedPendulum::new())),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected one of {})",
                ENV_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnyEnv::Tabular(_) => "tabular_chain",
            AnyEnv::PointGoal(_) => "point_goal",
            AnyEnv::Pendulum(_) => "pendulum",
        }
    }

    fn inner(&self) -> &dyn CmdpEnv {
        match self {
            AnyEnv::Tabular(e) => e,
            AnyEnv::PointGoal(e) => e,
            AnyEnv::Pendulum(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn CmdpEnv {
        match self {
            AnyEnv::Tabular(e) => e,
            AnyEnv::PointGoal(e) => e,
            AnyEnv::Pendulum(e) => e,
        }
    }

    pub fn spec_mut(&mut self) -> &mut CmdpSpec {
        match self {
            AnyEnv::Tabular(e) => &mut e.spec,
            AnyEnv::PointGoal(e) => &mut e.spec,
            AnyEnv::Pendulum(e) => &mut e.spec,
        }
    }
}

impl CmdpEnv for AnyEnv {
    fn spec(&self) -> &CmdpSpec {
        self.inner().spec()
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.inner_mut().reset(rng)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.inner_mut().step(action)
    }
}

impl Encode for AnyEnv {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            AnyEnv::Tabular(e) => {
                enc.u8(0);
                e.encode(enc);
            }
            AnyEnv::PointGoal(e) => {
                enc.u8(1);
                e.encode(enc);
            }
            AnyEnv::Pendulum(e) => {
                enc.u8(2);
                e.encode(enc);
            }
        }
    }
}

impl Decode for AnyEnv {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        match dec.u8()? {
            0 => Ok(AnyEnv::Tabular(dec.get()?)),
            1 => Ok(AnyEnv::PointGoal(dec.get()?)),
            2 => Ok(AnyEnv::Pendulum(dec.get()?)),
            t => Err(Error::Decode(format!("unknown environment tag {t}"))),
        }
    }
}
