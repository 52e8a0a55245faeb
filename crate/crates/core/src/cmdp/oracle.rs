//! Exact dynamic programming on [`TabularChain`].

use super::{AnyEnv, TabularChain};
use crate::diffcore::MatrixF64;
use crate::models::{ActionCandidate, NextActions};
use crate::rng::Rng;
use crate::{Error, Result};

const RESIDUAL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

/// Explicit distribution over the two discretised actions, `[P(left), P(right)]` per state.
/// As a continuous policy it plays exactly `−1` or `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Vec<[f64; 2]>,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize) -> Self {
        Self {
            probs: vec![[0.5, 0.5]; n_states],
        }
    }

    pub fn new(probs: Vec<[f64; 2]>) -> Result<Self> {
        for (s, p) in probs.iter().enumerate() {
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || ((p[0] + p[1]) - 1.0).abs() > 1e-12 {
                return Err(Error::Contract(format!("row {s} of the policy table is not a distribution: {p:?}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[[f64; 2]] {
        &self.probs
    }

    fn check(&self, env: &TabularChain) -> Result<()> {
        if self.probs.len() != env.n_states() {
            return Err(Error::shape("policy table", env.n_states(), self.probs.len()));
        }
        Ok(())
    }
}

fn tabular(env: &AnyEnv) -> Result<&TabularChain> {
    match env {
        AnyEnv::Tabular(t) => Ok(t),
        other => Err(Error::Unsupported(format!("exact oracle needs the tabular chain, got `{}`", other.name()))),
    }
}

/// `Q_c(s, a)` under `policy` with the environment's `γ_c`; rows are states, columns
/// `[left, right]`.
pub fn exact_safety_q(env: &AnyEnv, policy: &TabularPolicy) -> Result<Vec<[f64; 2]>> {
    let gamma = super::CmdpEnv::spec(env).gamma_c;
    exact_safety_q_with_gamma(tabular(env)?, policy, gamma)
}

/// Fixed point of `Q(s, a) = Σ_{s'} P(s'|s, a)·[c(s') + (1 − c(s'))·γ·V(s')]`, with
/// `V(s) = Σ_a π(a|s)·Q(s, a)`, by value iteration to a sup-norm residual of `1e-10`.
///
/// The constraint indicator is read on the arrived-at state, matching what the
/// environment reports per step. The failure state has `Q = 1` and the goal `Q = 0`.
pub fn exact_safety_q_with_gamma(env: &TabularChain, policy: &TabularPolicy, gamma: f64) -> Result<Vec<[f64; 2]>> {
    policy.check(env)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma_c must lie in [0, 1), got {gamma}")));
    }
    let n = env.n_states();
    let mut q = vec![[0.0; 2]; n];
    q[env.failure()] = [1.0, 1.0];
    for _ in 0..MAX_SWEEPS {
        let v: Vec<f64> = (0..n).map(|s| policy.probs[s][0] * q[s][0] + policy.probs[s][1] * q[s][1]).collect();
        let mut residual: f64 = 0.0;
        let mut next = q.clone();
        for (s, row) in next.iter_mut().enumerate() {
            if env.is_absorbing(s) {
                continue;
            }
            for (a, entry) in row.iter_mut().enumerate() {
                *entry = env
                    .transitions(s, a == 1)
                    .into_iter()
                    .map(|(s2, p)| {
                        let c = if s2 == env.failure() { 1.0 } else { 0.0 };
                        p * (c + (1.0 - c) * gamma * v[s2])
                    })
                    .sum();
                residual = residual.max((*entry - q[s][a]).abs());
            }
        }
        q = next;
        if residual <= RESIDUAL {
            return Ok(q);
        }
    }
    Err(Error::NonFinite("value iteration did not converge".into()))
}

/// Probability that an episode started at the start state fails within `horizon` steps.
pub fn episode_failure_probability(env: &AnyEnv, policy: &TabularPolicy, horizon: usize) -> Result<f64> {
    let env = tabular(env)?;
    policy.check(env)?;
    let n = env.n_states();
    let mut f = vec![0.0; n];
    for _ in 0..horizon {
        let mut next = vec![0.0; n];
        for (s, slot) in next.iter_mut().enumerate() {
            if env.is_absorbing(s) {
                continue;
            }
            *slot = (0..2)
                .map(|a| {
                    policy.probs[s][a]
                        * env
                            .transitions(s, a == 1)
                            .into_iter()
                            .map(|(s2, p)| p * if s2 == env.failure() { 1.0 } else { f[s2] })
                            .sum::<f64>()
                })
                .sum();
        }
        f = next;
    }
    Ok(f[env.start()])
}

impl NextActions for TabularPolicy {
    /// Both discrete actions, weighted by their table probabilities.
    fn candidates(&self, next_states: &MatrixF64, _rng: &mut Rng) -> Result<Vec<ActionCandidate>> {
        if next_states.cols() != self.probs.len() {
            return Err(Error::shape("tabular next states", self.probs.len(), next_states.cols()));
        }
        let rows = next_states.rows();
        let states: Vec<usize> = (0..rows)
            .map(|n| next_states.row(n).iter().position(|&v| v > 0.5).unwrap_or(0))
            .collect();
        Ok([(0, -1.0), (1, 1.0)]
            .into_iter()
            .map(|(a, value)| {
                let weight: Vec<f64> = states.iter().map(|&s| self.probs[s][a]).collect();
                ActionCandidate {
                    actions: MatrixF64::filled(rows, 1, value),
                    log_prob: weight.iter().map(|w| w.max(f64::MIN_POSITIVE).ln()).collect(),
                    weight,
                }
            })
            .collect())
    }
}
