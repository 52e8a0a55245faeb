//! The end-to-end training loop, evaluation rollouts and per-step metrics.
//!
//! One [`Trainer`] owns one run: the learner state, the environment, the three buffers
//! and every random stream. Its complete state round-trips through the binary codec, so
//! a restored trainer continues bit-identically.

use std::collections::VecDeque;

use rand::Rng as _;

use crate::algo::{train_step, AlgoState, HyperParams, StepLosses, Variant};
use crate::buffers::{
    Buffers, Transition, DEFAULT_INIT_CAPACITY, DEFAULT_SAFETY_CAPACITY, DEFAULT_TRANSITION_CAPACITY, INIT_PREFILL,
};
use crate::cmdp::{AnyEnv, CmdpEnv};
use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::diffcore::MatrixF64;
use crate::rng::{Rng, SeedTree};
use crate::{Error, Result};

/// Steps of uniform random actions, without updates, at the start of a run.
pub const DEFAULT_WARMUP: usize = 1000;
/// Episodes in the trailing violation-rate window.
pub const DEFAULT_VIOLATION_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Environment name, see [`crate::cmdp::ENV_NAMES`].
    pub env: String,
    pub hyper: HyperParams,
    pub total_steps: usize,
    /// Steps between evaluation rounds; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub violation_window: usize,
    pub seed: u64,
    pub warmup: usize,
    /// Resets used to pre-fill `D_0` before the first step.
    pub init_prefill: usize,
    pub transition_capacity: usize,
    pub safety_capacity: usize,
    pub init_capacity: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "point_goal".into(),
            hyper: HyperParams::default(),
            total_steps: 50_000,
            eval_every: 0,
            eval_episodes: 10,
            violation_window: DEFAULT_VIOLATION_WINDOW,
            seed: 0,
            warmup: DEFAULT_WARMUP,
            init_prefill: INIT_PREFILL,
            transition_capacity: DEFAULT_TRANSITION_CAPACITY,
            safety_capacity: DEFAULT_SAFETY_CAPACITY,
            init_capacity: DEFAULT_INIT_CAPACITY,
        }
    }
}

impl RunConfig {
    pub fn variant(&self) -> Variant {
        self.hyper.variant
    }

    /// `total_steps = 0` is accepted and yields an empty run.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.violation_window == 0 {
            return Err(Error::Config("violation_window must be at least 1".into()));
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive when eval_every is set".into()));
        }
        if self.transition_capacity == 0 || self.safety_capacity == 0 || self.init_capacity == 0 {
            return Err(Error::Config("buffer capacities must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the metrics stream, emitted after every environment step.
///
/// `return` and `violated` describe the most recently completed episode (0 before the
/// first one ends); `violation_rate` is the mean of `violated` over the trailing window of
/// completed episodes. Losses are zero during warmup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// Environment steps executed so far, starting at 1.
    pub step: u64,
    /// Completed episodes so far.
    pub episode: u64,
    pub episode_return: f64,
    pub violated: bool,
    pub nu: f64,
    pub eps: f64,
    pub alpha: f64,
    pub losses: StepLosses,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    /// Fraction of episodes that ended in a violation.
    pub violation_rate: f64,
    /// Fraction of episodes that reached a non-violating terminal state.
    pub success_rate: f64,
}

/// Receives the metrics stream of [`Trainer::run`].
pub trait MetricsSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()>;

    fn evaluation(&mut self, _step: u64, _summary: &EvalSummary) -> Result<()> {
        Ok(())
    }

    /// Called after every step and evaluation, e.g. to write checkpoints.
    fn after_step(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        self.push(*record);
        Ok(())
    }
}

/// Rolls out `n_episodes` full episodes without writing any buffer or updating anything.
/// `deterministic` uses the mean action `tanh μ`.
pub fn evaluate(
    state: &AlgoState,
    env: &mut AnyEnv,
    n_episodes: usize,
    deterministic: bool,
    rng: &mut Rng,
) -> Result<EvalSummary> {
    if n_episodes == 0 {
        return Err(Error::Contract("evaluation needs at least one episode".into()));
    }
    let (mut total_return, mut violations, mut successes) = (0.0, 0usize, 0usize);
    for _ in 0..n_episodes {
        let mut s = env.reset(rng);
        loop {
            let action = select_action(state, &s, deterministic, rng)?;
            let res = env.step(&action)?;
            total_return += res.r;
            if res.done() {
                violations += usize::from(res.c);
                successes += usize::from(res.success());
                break;
            }
            s = res.s_next;
        }
    }
    let n = n_episodes as f64;
    Ok(EvalSummary {
        episodes: n_episodes,
        mean_return: total_return / n,
        violation_rate: violations as f64 / n,
        success_rate: successes as f64 / n,
    })
}

fn select_action(state: &AlgoState, s: &[f64], deterministic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
    let row = MatrixF64::from_vec(1, s.len(), s.to_vec())?;
    let action = if deterministic {
        state.policy.deterministic_action(&row)?
    } else {
        state.policy.sample_action(&row, rng)?.action
    };
    Ok(action.row(0).to_vec())
}

/// A single training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    config: RunConfig,
    state: AlgoState,
    env: AnyEnv,
    buffers: Buffers,
    reset_rng: Rng,
    action_rng: Rng,
    update_rng: Rng,
    current: Option<Vec<f64>>,
    episode_return: f64,
    steps: u64,
    episodes: u64,
    last_return: f64,
    last_violated: bool,
    window: VecDeque<bool>,
}

impl Trainer {
    /// Builds the environment and learner from `config.seed` and pre-fills `D_0`.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seeds = SeedTree::new(config.seed);
        let mut env = AnyEnv::from_name(&config.env, seeds.rng("env"))?;
        let (state_dim, action_dim) = (env.spec().state_dim, env.spec().action_dim);
        let state = AlgoState::new(config.hyper.clone(), state_dim, action_dim, &seeds.subtree("init"))?;
        let mut buffers = Buffers::new(config.transition_capacity, config.safety_capacity, config.init_capacity)?;
        let mut reset_rng = seeds.rng("reset");
        for _ in 0..config.init_prefill {
            buffers.init_states.push(env.reset(&mut reset_rng));
        }
        Ok(Self {
            state,
            env,
            buffers,
            reset_rng,
            action_rng: seeds.rng("action"),
            update_rng: seeds.rng("update"),
            current: None,
            episode_return: 0.0,
            steps: 0,
            episodes: 0,
            last_return: 0.0,
            last_violated: false,
            window: VecDeque::with_capacity(config.violation_window),
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn state(&self) -> &AlgoState {
        &self.state
    }

    pub fn buffers(&self) -> &Buffers {
        &self.buffers
    }

    pub fn env(&self) -> &AnyEnv {
        &self.env
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn is_finished(&self) -> bool {
        self.steps >= self.config.total_steps as u64
    }

    /// Extends (or shortens) the run; used when resuming from a checkpoint.
    pub fn set_total_steps(&mut self, total_steps: usize) {
        self.config.total_steps = total_steps;
    }

    pub fn violation_rate(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|&&v| v).count() as f64 / self.window.len() as f64
    }

    /// One environment step followed, after warmup, by one full update.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let s = match self.current.take() {
            Some(s) => s,
            None => {
                let s = self.env.reset(&mut self.reset_rng);
                self.buffers.init_states.push(s.clone());
                self.episode_return = 0.0;
                s
            }
        };
        let in_warmup = (self.steps as usize) < self.config.warmup;
        let action = if in_warmup {
            let dim = self.env.spec().action_dim;
            (0..dim).map(|_| self.action_rng.random_range(-1.0..=1.0)).collect()
        } else {
            select_action(&self.state, &s, false, &mut self.action_rng)?
        };
        let res = self.env.step(&action)?;
        self.episode_return += res.r;
        self.buffers.push(Transition {
            s,
            a: action,
            r: res.r,
            c: res.c,
            s_next: res.s_next.clone(),
            terminal: res.terminal,
        });
        self.steps += 1;

        let losses = if in_warmup || self.buffers.transitions.is_empty() {
            StepLosses::default()
        } else {
            train_step(&mut self.state, &self.buffers, &mut self.update_rng)?
        };
        let losses_finite = [losses.qr, losses.qc, losses.pi, losses.meta].iter().all(|v| v.is_finite());
        if !losses_finite || !self.state.is_finite() {
            return Err(Error::NonFinite(format!(
                "training diverged at step {}: nu={} eps={} alpha={} loss_qr={} loss_qc={} loss_pi={} loss_meta={}",
                self.steps, self.state.nu, self.state.eps, self.state.alpha, losses.qr, losses.qc, losses.pi, losses.meta
            )));
        }

        if res.done() {
            self.episodes += 1;
            self.last_return = self.episode_return;
            self.last_violated = res.c;
            if self.window.len() == self.config.violation_window {
                self.window.pop_front();
            }
            self.window.push_back(res.c);
        } else {
            self.current = Some(res.s_next);
        }

        Ok(MetricsRecord {
            step: self.steps,
            episode: self.episodes,
            episode_return: self.last_return,
            violated: self.last_violated,
            nu: self.state.nu,
            eps: self.state.eps,
            alpha: self.state.alpha,
            losses,
            violation_rate: self.violation_rate(),
        })
    }

    /// Steps until `total_steps` have been executed, with periodic evaluation.
    pub fn run(&mut self, sink: &mut dyn MetricsSink) -> Result<()> {
        while !self.is_finished() {
            let record = self.step()?;
            sink.record(&record)?;
            let every = self.config.eval_every as u64;
            if every > 0 && self.steps.is_multiple_of(every) {
                let summary = self.evaluate(self.config.eval_episodes, true)?;
                sink.evaluation(self.steps, &summary)?;
            }
            sink.after_step(self)?;
        }
        Ok(())
    }

    /// Evaluates the current policy on a fresh environment. The rollouts use their own
    /// seed stream keyed by the step counter and leave the training streams untouched.
    pub fn evaluate(&self, n_episodes: usize, deterministic: bool) -> Result<EvalSummary> {
        let seeds = SeedTree::new(self.config.seed).subtree("eval").subtree(&self.steps.to_string());
        let mut env = AnyEnv::from_name(&self.config.env, seeds.rng("env"))?;
        evaluate(&self.state, &mut env, n_episodes, deterministic, &mut seeds.rng("rollout"))
    }
}

impl Encode for RunConfig {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.env);
        self.hyper.encode(enc);
        for v in [
            self.total_steps,
            self.eval_every,
            self.eval_episodes,
            self.violation_window,
            self.warmup,
            self.init_prefill,
            self.transition_capacity,
            self.safety_capacity,
            self.init_capacity,
        ] {
            enc.usize(v);
        }
        enc.u64(self.seed);
    }
}

impl Decode for RunConfig {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let env = dec.str()?.to_string();
        let hyper = dec.get()?;
        let mut next = || dec.usize();
        let (total_steps, eval_every, eval_episodes, violation_window) = (next()?, next()?, next()?, next()?);
        let (warmup, init_prefill) = (next()?, next()?);
        let (transition_capacity, safety_capacity, init_capacity) = (next()?, next()?, next()?);
        Ok(Self {
            env,
            hyper,
            total_steps,
            eval_every,
            eval_episodes,
            violation_window,
            seed: dec.u64()?,
            warmup,
            init_prefill,
            transition_capacity,
            safety_capacity,
            init_capacity,
        })
    }
}

impl Encode for Trainer {
    fn encode(&self, enc: &mut Encoder) {
        self.config.encode(enc);
        self.state.encode(enc);
        self.env.encode(enc);
        self.buffers.encode(enc);
        for rng in [&self.reset_rng, &self.action_rng, &self.update_rng] {
            rng.encode(enc);
        }
        enc.bool(self.current.is_some());
        if let Some(s) = &self.current {
            enc.f64s(s);
        }
        enc.f64(self.episode_return);
        enc.u64(self.steps);
        enc.u64(self.episodes);
        enc.f64(self.last_return);
        enc.bool(self.last_violated);
        enc.usize(self.window.len());
        for &v in &self.window {
            enc.bool(v);
        }
    }
}

impl Decode for Trainer {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let config: RunConfig = dec.get()?;
        config.validate()?;
        let state = dec.get()?;
        let env = dec.get()?;
        let buffers = dec.get()?;
        let (reset_rng, action_rng, update_rng) = (dec.get()?, dec.get()?, dec.get()?);
        let current = if dec.bool()? { Some(dec.f64s()?) } else { None };
        let episode_return = dec.f64()?;
        let (steps, episodes) = (dec.u64()?, dec.u64()?);
        let last_return = dec.f64()?;
        let last_violated = dec.bool()?;
        let n = dec.seq_len()?;
        let window = (0..n).map(|_| dec.bool()).collect::<Result<VecDeque<_>>>()?;
        if window.len() > config.violation_window {
            return Err(Error::Decode("violation window longer than configured".into()));
        }
        Ok(Self {
            config,
            state,
            env,
            buffers,
            reset_rng,
            action_rng,
            update_rng,
            current,
            episode_return,
            steps,
            episodes,
            last_return,
            last_violated,
            window,
        })
    }
}
