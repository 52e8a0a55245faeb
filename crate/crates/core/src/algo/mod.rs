//! Learning updates: critic regression, the sequential `ν → φ → ε → α` step, baselines and
//! a finite-difference gradient check of every analytic meta-gradient.

mod critics;
pub mod gradcheck;
mod inner;
mod meta;
mod step;

use std::fmt;
use std::str::FromStr;

pub use critics::{reward_critic_update, reward_targets, safety_critic_update, safety_targets};
pub use inner::{actor_direction, actor_update, nu_update, ActorForm, InnerEval};
pub use meta::{
    alpha_meta_gradient, alpha_meta_gradient_rcpo, alpha_update, entropy_alpha_update, eps_meta_gradient, eps_update,
    eps_update_nl, j_alpha_value, j_eps_value, j_nl_value, DetEval, OuterEval, EPS_META_COEFF,
};
pub use step::{train_step, StepLosses};

use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::diffcore::{OptKind, OptState};
use crate::models::{CriticPair, CriticRole, SquashedGaussianPolicy, TargetPair};
use crate::rng::SeedTree;
use crate::{Error, Result};

/// Which learner to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Lagrangian SAC with ε and α tuned by meta-gradients.
    MetaSacLag,
    /// As [`Variant::MetaSacLag`], with the nonlinear objective driving ε.
    MetaSacLagJnl,
    /// Lagrangian SAC, fixed ε, α by the target-entropy loss.
    SacV2Lag,
    /// Actor on the penalised critic `Q_r − ν·Q_c`, α by the target-entropy loss.
    RcpoSacV2,
    /// Penalised-critic actor with α tuned by a meta-gradient.
    RcpoMetaSac,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::MetaSacLag,
        Variant::MetaSacLagJnl,
        Variant::SacV2Lag,
        Variant::RcpoSacV2,
        Variant::RcpoMetaSac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MetaSacLag => "meta_sac_lag",
            Variant::MetaSacLagJnl => "meta_sac_lag_jnl",
            Variant::SacV2Lag => "sacv2_lag",
            Variant::RcpoSacV2 => "rcpo_sacv2",
            Variant::RcpoMetaSac => "rcpo_meta_sac",
        }
    }

    /// ε is learned rather than fixed.
    pub fn tunes_eps(self) -> bool {
        matches!(self, Variant::MetaSacLag | Variant::MetaSacLagJnl)
    }

    /// The actor ascends the penalised critic rather than the Lagrangian.
    pub fn is_rcpo(self) -> bool {
        matches!(self, Variant::RcpoSacV2 | Variant::RcpoMetaSac)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub variant: Variant,
    pub beta_nu: f64,
    pub beta_phi: f64,
    pub beta_eps: f64,
    pub beta_alpha: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub init_nu: f64,
    pub init_eps: f64,
    pub init_alpha: f64,
    pub gamma_r: f64,
    pub gamma_c: f64,
    pub hidden: Vec<usize>,
    pub optimizer: OptKind,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// RMSProp denominator floor for the ε and α optimizers. Their meta-gradients carry
    /// products of base rates and are many orders of magnitude below critic gradients.
    pub meta_rms_eps: f64,
    /// Exclusive lower bound of α.
    pub alpha_min: f64,
    pub eps_min: f64,
    /// Target entropy of the entropy-constrained α loss; `None` means `−dim A`.
    pub target_entropy: Option<f64>,
    /// Differentiate the actor loss through `ν'(φ)` instead of using `ν'` as a value.
    pub expanded_actor_gradient: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            variant: Variant::MetaSacLag,
            beta_nu: 3e-4,
            beta_phi: 3e-4,
            beta_eps: 1e-3,
            beta_alpha: 1e-3,
            critic_lr: 3e-4,
            tau: 0.005,
            batch_size: 64,
            init_nu: 10.0,
            init_eps: 1.0,
            init_alpha: 1.0,
            gamma_r: crate::cmdp::DEFAULT_GAMMA_R,
            gamma_c: crate::cmdp::DEFAULT_GAMMA_C,
            hidden: vec![64, 64],
            optimizer: OptKind::RmsProp,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            meta_rms_eps: 1e-20,
            alpha_min: 1e-4,
            eps_min: 0.01,
            target_entropy: None,
            expanded_actor_gradient: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("beta_nu", self.beta_nu),
            ("beta_phi", self.beta_phi),
            ("beta_eps", self.beta_eps),
            ("beta_alpha", self.beta_alpha),
            ("critic_lr", self.critic_lr),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, g) in [("gamma_r", self.gamma_r), ("gamma_c", self.gamma_c)] {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {g}")));
            }
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < 1.0) {
            return Err(Error::Config(format!("alpha_min must lie in (0, 1), got {}", self.alpha_min)));
        }
        if !(self.eps_min > 0.0 && self.eps_min <= 1.0) {
            return Err(Error::Config(format!("eps_min must lie in (0, 1], got {}", self.eps_min)));
        }
        if !(self.init_nu >= 0.0 && self.init_nu.is_finite()) {
            return Err(Error::Config(format!("init_nu must be nonnegative, got {}", self.init_nu)));
        }
        if !(self.eps_min..=1.0).contains(&self.init_eps) {
            return Err(Error::Config(format!("init_eps must lie in [{}, 1], got {}", self.eps_min, self.init_eps)));
        }
        if !(self.init_alpha > self.alpha_min && self.init_alpha <= 1.0) {
            return Err(Error::Config(format!(
                "init_alpha must lie in ({}, 1], got {}",
                self.alpha_min, self.init_alpha
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.meta_opt(self.beta_eps).validate()?;
        self.opt(self.critic_lr).validate()
    }

    pub(crate) fn opt(&self, lr: f64) -> OptState {
        OptState::new(self.optimizer, lr, self.rms_decay, self.rms_eps)
    }

    pub(crate) fn meta_opt(&self, lr: f64) -> OptState {
        OptState::new(self.optimizer, lr, self.rms_decay, self.meta_rms_eps)
    }

    pub fn target_entropy_for(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }

    /// Projection of ν onto `[0, ∞)`.
    pub fn project_nu(&self, nu: f64) -> f64 {
        nu.max(0.0)
    }

    /// Projection of ε onto `[eps_min, 1]`.
    pub fn project_eps(&self, eps: f64) -> f64 {
        eps.clamp(self.eps_min, 1.0)
    }

    /// Projection of α onto `(alpha_min, 1]`; the open end is realised by the next
    /// representable value above `alpha_min`.
    pub fn project_alpha(&self, alpha: f64) -> f64 {
        alpha.clamp(self.alpha_min.next_up(), 1.0)
    }
}

/// One optimizer per learnable object.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub reward1: OptState,
    pub reward2: OptState,
    pub safety1: OptState,
    pub safety2: OptState,
    pub policy: OptState,
    pub nu: OptState,
    pub eps: OptState,
    pub alpha: OptState,
}

impl Optimizers {
    pub fn new(h: &HyperParams) -> Self {
        Self {
            reward1: h.opt(h.critic_lr),
            reward2: h.opt(h.critic_lr),
            safety1: h.opt(h.critic_lr),
            safety2: h.opt(h.critic_lr),
            policy: h.opt(h.beta_phi),
            nu: h.opt(h.beta_nu),
            eps: h.meta_opt(h.beta_eps),
            alpha: h.meta_opt(h.beta_alpha),
        }
    }
}

/// Every learnable quantity of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoState {
    pub hyper: HyperParams,
    pub policy: SquashedGaussianPolicy,
    pub reward: CriticPair,
    pub reward_target: TargetPair,
    pub safety: CriticPair,
    pub safety_target: TargetPair,
    pub nu: f64,
    pub eps: f64,
    pub alpha: f64,
    pub opts: Optimizers,
}

impl AlgoState {
    pub fn new(hyper: HyperParams, state_dim: usize, action_dim: usize, seeds: &SeedTree) -> Result<Self> {
        hyper.validate()?;
        let policy = SquashedGaussianPolicy::new(state_dim, action_dim, &hyper.hidden, &mut seeds.rng("policy"))?;
        let reward = CriticPair::new(CriticRole::Reward, state_dim, action_dim, &hyper.hidden, &mut seeds.rng("reward"))?;
        let safety = CriticPair::new(CriticRole::Safety, state_dim, action_dim, &hyper.hidden, &mut seeds.rng("safety"))?;
        Ok(Self {
            opts: Optimizers::new(&hyper),
            nu: hyper.init_nu,
            eps: hyper.init_eps,
            alpha: hyper.project_alpha(hyper.init_alpha),
            reward_target: TargetPair::from_source(&reward),
            safety_target: TargetPair::from_source(&safety),
            policy,
            reward,
            safety,
            hyper,
        })
    }

    /// All scalars and network parameters are finite.
    pub fn is_finite(&self) -> bool {
        use crate::models::QPair;
        [self.nu, self.eps, self.alpha].iter().all(|v| v.is_finite())
            && self.policy.trunk().is_finite()
            && self.reward.is_finite()
            && self.safety.is_finite()
            && self.reward_target.pair().is_finite()
            && self.safety_target.pair().is_finite()
    }
}

impl Encode for Variant {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(self.name());
    }
}

impl Decode for Variant {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        dec.str()?.parse().map_err(|e: Error| Error::Decode(e.to_string()))
    }
}

impl Encode for HyperParams {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.variant);
        for v in [
            self.beta_nu,
            self.beta_phi,
            self.beta_eps,
            self.beta_alpha,
            self.critic_lr,
            self.tau,
        ] {
            enc.f64(v);
        }
        enc.usize(self.batch_size);
        for v in [self.init_nu, self.init_eps, self.init_alpha, self.gamma_r, self.gamma_c] {
            enc.f64(v);
        }
        enc.usize(self.hidden.len());
        for &h in &self.hidden {
            enc.usize(h);
        }
        enc.u8(match self.optimizer {
            OptKind::Sgd => 0,
            OptKind::RmsProp => 1,
        });
        for v in [self.rms_decay, self.rms_eps, self.meta_rms_eps, self.alpha_min, self.eps_min] {
            enc.f64(v);
        }
        enc.bool(self.target_entropy.is_some());
        enc.f64(self.target_entropy.unwrap_or(0.0));
        enc.bool(self.expanded_actor_gradient);
    }
}

impl Decode for HyperParams {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let variant = dec.get()?;
        let [beta_nu, beta_phi, beta_eps, beta_alpha, critic_lr, tau] =
            [dec.f64()?, dec.f64()?, dec.f64()?, dec.f64()?, dec.f64()?, dec.f64()?];
        let batch_size = dec.usize()?;
        let [init_nu, init_eps, init_alpha, gamma_r, gamma_c] = [dec.f64()?, dec.f64()?, dec.f64()?, dec.f64()?, dec.f64()?];
        let n = dec.seq_len()?;
        let hidden = (0..n).map(|_| dec.usize()).collect::<Result<_>>()?;
        let optimizer = match dec.u8()? {
            0 => OptKind::Sgd,
            1 => OptKind::RmsProp,
            k => return Err(Error::Decode(format!("unknown optimizer tag {k}"))),
        };
        let [rms_decay, rms_eps, meta_rms_eps, alpha_min, eps_min] = [dec.f64()?, dec.f64()?, dec.f64()?, dec.f64()?, dec.f64()?];
        let has_entropy = dec.bool()?;
        let entropy = dec.f64()?;
        Ok(Self {
            variant,
            beta_nu,
            beta_phi,
            beta_eps,
            beta_alpha,
            critic_lr,
            tau,
            batch_size,
            init_nu,
            init_eps,
            init_alpha,
            gamma_r,
            gamma_c,
            hidden,
            optimizer,
            rms_decay,
            rms_eps,
            meta_rms_eps,
            alpha_min,
            eps_min,
            target_entropy: has_entropy.then_some(entropy),
            expanded_actor_gradient: dec.bool()?,
        })
    }
}

impl Encode for Optimizers {
    fn encode(&self, enc: &mut Encoder) {
        for o in [
            &self.reward1,
            &self.reward2,
            &self.safety1,
            &self.safety2,
            &self.policy,
            &self.nu,
            &self.eps,
            &self.alpha,
        ] {
            enc.put(o);
        }
    }
}

impl Decode for Optimizers {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            reward1: dec.get()?,
            reward2: dec.get()?,
            safety1: dec.get()?,
            safety2: dec.get()?,
            policy: dec.get()?,
            nu: dec.get()?,
            eps: dec.get()?,
            alpha: dec.get()?,
        })
    }
}

impl Encode for AlgoState {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.hyper);
        enc.put(&self.policy);
        enc.put(&self.reward);
        enc.put(&self.reward_target);
        enc.put(&self.safety);
        enc.put(&self.safety_target);
        enc.f64(self.nu);
        enc.f64(self.eps);
        enc.f64(self.alpha);
        enc.put(&self.opts);
    }
}

impl Decode for AlgoState {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            hyper: dec.get()?,
            policy: dec.get()?,
            reward: dec.get()?,
            reward_target: dec.get()?,
            safety: dec.get()?,
            safety_target: dec.get()?,
            nu: dec.f64()?,
            eps: dec.f64()?,
            alpha: dec.f64()?,
            opts: dec.get()?,
        })
    }
}
