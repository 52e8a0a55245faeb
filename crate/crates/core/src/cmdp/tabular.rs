use rand::Rng as _;

use super::{clip_action, CmdpEnv, CmdpSpec, EpisodeClock, StepResult, DEFAULT_GAMMA_C, DEFAULT_GAMMA_R};
use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::rng::Rng;
use crate::{Error, Result};

pub(crate) const DEFAULT_STATES: usize = 7;
/// Probability that an action takes effect; otherwise the agent stays put.
pub const MOVE_PROB: f64 = 0.9;

/// A slippery one-dimensional chain.
///
/// With `n` states the layout is `failure ← 0 → 1 → … → goal`, where the goal has index
/// `n − 2` and the failure state index `n − 1`. Episodes start at `0`, next to the cliff.
/// Observations are one-hot over all `n` indices; a positive action moves right and any
/// other action moves left, each succeeding with probability [`MOVE_PROB`]. Reaching the
/// goal pays `+1` and ends the episode; falling off the cliff sets `c = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularChain {
    pub(crate) spec: CmdpSpec,
    n: usize,
    pos: usize,
    clock: EpisodeClock,
    rng: Rng,
}

impl TabularChain {
    pub fn new(n_states: usize, rng: Rng) -> Result<Self> {
        if n_states < 3 {
            return Err(Error::Config(format!("tabular chain needs at least 3 states, got {n_states}")));
        }
        Ok(Self {
            spec: CmdpSpec {
                state_dim: n_states,
                action_dim: 1,
                gamma_r: DEFAULT_GAMMA_R,
                gamma_c: DEFAULT_GAMMA_C,
                max_episode_steps: 100,
            },
            n: n_states,
            pos: 0,
            clock: EpisodeClock::default(),
            rng,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn goal(&self) -> usize {
        self.n - 2
    }

    pub fn failure(&self) -> usize {
        self.n - 1
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        s == self.goal() || s == self.failure()
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        v[s] = 1.0;
        v
    }

    /// Index of the hot entry of an observation.
    pub fn decode_state(&self, obs: &[f64]) -> Result<usize> {
        if obs.len() != self.n {
            return Err(Error::shape("tabular observation", self.n, obs.len()));
        }
        obs.iter()
            .position(|&v| v > 0.5)
            .ok_or_else(|| Error::Contract("observation is not one-hot".into()))
    }

    /// `(s', P(s' | s, a))` pairs; `right` is the discretised action `a > 0`.
    pub fn transitions(&self, s: usize, right: bool) -> Vec<(usize, f64)> {
        if self.is_absorbing(s) {
            return vec![(s, 1.0)];
        }
        let target = match (right, s) {
            (true, s) => s + 1,
            (false, 0) => self.failure(),
            (false, s) => s - 1,
        };
        vec![(target, MOVE_PROB), (s, 1.0 - MOVE_PROB)]
    }
}

impl CmdpEnv for TabularChain {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut Rng) -> Vec<f64> {
        self.pos = self.start();
        self.clock.start();
        self.one_hot(self.pos)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clip_action(action, 1)?;
        self.clock.tick()?;
        if self.rng.random::<f64>() < MOVE_PROB {
            let (next, _) = self.transitions(self.pos, a[0] > 0.0)[0];
            self.pos = next;
        }
        let c = self.pos == self.failure();
        let goal = self.pos == self.goal();
        let terminal = c || goal;
        let truncated = self.clock.finish(terminal, self.spec.max_episode_steps);
        Ok(StepResult {
            s_next: self.one_hot(self.pos),
            r: if goal { 1.0 } else { 0.0 },
            c,
            terminal,
            truncated,
        })
    }
}

impl Encode for TabularChain {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.spec);
        enc.usize(self.n);
        enc.usize(self.pos);
        enc.put(&self.clock);
        enc.put(&self.rng);
    }
}

impl Decode for TabularChain {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            spec: dec.get()?,
            n: dec.usize()?,
            pos: dec.usize()?,
            clock: dec.get()?,
            rng: dec.get()?,
        })
    }
}
