use super::HyperParams;
use crate::diffcore::{apply_scalar_update, dot, Direction, MatrixF64, OptState};
use crate::models::{CriticPair, DeterministicEval, PairEval, PolicySample, SquashedGaussianPolicy};
use crate::Result;

/// Coefficient of the closed-form ε meta-gradient,
/// `∇_ε J_ε = −3·β_ν·β_φ·∇_φ Q_c(φ)ᵀ·[∇_{φ'} Q_r − ν'·∇_{φ'} Q_c]`.
pub const EPS_META_COEFF: f64 = -3.0;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Critic values at sampled actions of the updated policy `φ'` on the resampled batch `B'`.
#[derive(Debug, Clone)]
pub struct OuterEval {
    pub sample: PolicySample,
    pub qr: Vec<f64>,
    pub qc: Vec<f64>,
    re: PairEval,
    se: PairEval,
}

impl OuterEval {
    pub fn compute(
        policy: &SquashedGaussianPolicy,
        reward: &CriticPair,
        safety: &CriticPair,
        states: &MatrixF64,
        noise: &MatrixF64,
    ) -> Result<Self> {
        let sample = policy.evaluate_with_noise(states, noise)?;
        let re = reward.evaluate(states, &sample.action)?;
        let se = safety.evaluate(states, &sample.action)?;
        Ok(Self {
            qr: re.value.clone(),
            qc: se.value.clone(),
            sample,
            re,
            se,
        })
    }

    /// `∇_{φ'} Σ_n (wr[n]·Q_r + wc[n]·Q_c)` through the reparameterised action.
    fn grad(&self, policy: &SquashedGaussianPolicy, reward: &CriticPair, safety: &CriticPair, wr: &[f64], wc: &[f64]) -> Result<Vec<f64>> {
        let mut da = reward.action_grad(&self.re, wr)?;
        da.add_scaled(&safety.action_grad(&self.se, wc)?, 1.0)?;
        policy.backward_sample(&self.sample, &da, &vec![0.0; wr.len()])
    }

    /// `∇_{φ'} J_ε` with `J_ε = mean[ν'·Q_c − Q_r]` and `ν'` held constant.
    pub fn grad_j_eps(&self, policy: &SquashedGaussianPolicy, reward: &CriticPair, safety: &CriticPair, nu_prime: f64) -> Result<Vec<f64>> {
        let n = self.qr.len() as f64;
        let wr = vec![-1.0 / n; self.qr.len()];
        let wc = vec![nu_prime / n; self.qr.len()];
        self.grad(policy, reward, safety, &wr, &wc)
    }

    /// `∇_{φ'} J_nl`, branching per row on the sign of `Q_r`.
    pub fn grad_j_nl(&self, policy: &SquashedGaussianPolicy, reward: &CriticPair, safety: &CriticPair) -> Result<Vec<f64>> {
        let n = self.qr.len() as f64;
        let (wr, wc): (Vec<f64>, Vec<f64>) = self
            .qr
            .iter()
            .zip(&self.qc)
            .map(|(&qr, &qc)| if qr < 0.0 { (qc / n, qr / n) } else { ((1.0 - qc) / n, -qr / n) })
            .unzip();
        self.grad(policy, reward, safety, &wr, &wc)
    }
}

/// `J_ε = mean_{B'}[ν'·Q_c − Q_r]`.
pub fn j_eps_value(outer: &OuterEval, nu_prime: f64) -> f64 {
    mean(&outer.qc) * nu_prime - mean(&outer.qr)
}

/// `J_nl = mean_{B'}[Q_r·Q_c if Q_r < 0 else Q_r·(1 − Q_c)]`.
pub fn j_nl_value(outer: &OuterEval) -> f64 {
    let v: Vec<f64> = outer
        .qr
        .iter()
        .zip(&outer.qc)
        .map(|(&qr, &qc)| if qr < 0.0 { qr * qc } else { qr * (1.0 - qc) })
        .collect();
    mean(&v)
}

/// `ĝ_ε = coeff·β_ν·β_φ·g_cᵀ·(−∇_{φ'} J)`; with `coeff = −3` and `J = J_ε` this is the
/// closed-form meta-gradient. `g_c = ∇_φ mean Q_c` comes from the inner batch at `φ`.
pub fn eps_meta_gradient(coeff: f64, beta_nu: f64, beta_phi: f64, g_c: &[f64], grad_j: &[f64]) -> f64 {
    -coeff * beta_nu * beta_phi * dot(g_c, grad_j)
}

fn step_eps(eps: f64, g: f64, hyper: &HyperParams, opt: &mut OptState) -> Result<f64> {
    Ok(hyper.project_eps(apply_scalar_update(eps, g, opt, Direction::Ascend)?))
}

/// ε' from the worst-case objective `J_ε`; returns `(ε', J_ε)`.
#[allow(clippy::too_many_arguments)]
pub fn eps_update(
    policy_prime: &SquashedGaussianPolicy,
    reward: &CriticPair,
    safety: &CriticPair,
    outer: &OuterEval,
    g_c: &[f64],
    nu_prime: f64,
    eps: f64,
    hyper: &HyperParams,
    opt: &mut OptState,
) -> Result<(f64, f64)> {
    let grad = outer.grad_j_eps(policy_prime, reward, safety, nu_prime)?;
    let g = eps_meta_gradient(EPS_META_COEFF, hyper.beta_nu, hyper.beta_phi, g_c, &grad);
    Ok((step_eps(eps, g, hyper, opt)?, j_eps_value(outer, nu_prime)))
}

/// ε' from the nonlinear objective `J_nl`; returns `(ε', J_nl)`.
#[allow(clippy::too_many_arguments)]
pub fn eps_update_nl(
    policy_prime: &SquashedGaussianPolicy,
    reward: &CriticPair,
    safety: &CriticPair,
    outer: &OuterEval,
    g_c: &[f64],
    eps: f64,
    hyper: &HyperParams,
    opt: &mut OptState,
) -> Result<(f64, f64)> {
    let grad = outer.grad_j_nl(policy_prime, reward, safety)?;
    let g = eps_meta_gradient(EPS_META_COEFF, hyper.beta_nu, hyper.beta_phi, g_c, &grad);
    Ok((step_eps(eps, g, hyper, opt)?, j_nl_value(outer)))
}

/// Critic values at the deterministic actions of `φ'` on initial states.
#[derive(Debug, Clone)]
pub struct DetEval {
    pub det: DeterministicEval,
    pub qr: Vec<f64>,
    pub qc: Vec<f64>,
    da_r: MatrixF64,
    da_c: MatrixF64,
}

impl DetEval {
    pub fn compute(policy: &SquashedGaussianPolicy, reward: &CriticPair, safety: &CriticPair, states: &MatrixF64) -> Result<Self> {
        let det = policy.deterministic(states)?;
        let re = reward.evaluate(states, &det.action)?;
        let se = safety.evaluate(states, &det.action)?;
        let w = vec![1.0 / states.rows() as f64; states.rows()];
        Ok(Self {
            da_r: reward.action_grad(&re, &w)?,
            da_c: safety.action_grad(&se, &w)?,
            qr: re.value,
            qc: se.value,
            det,
        })
    }

    /// `∇_{φ'} mean Q_r(s₀, π^det_{φ'}(s₀))`.
    pub fn grad_qr(&self, policy: &SquashedGaussianPolicy) -> Result<Vec<f64>> {
        policy.backward_deterministic(&self.det, &self.da_r)
    }

    /// `∇_{φ'} mean Q_c(s₀, π^det_{φ'}(s₀))`.
    pub fn grad_qc(&self, policy: &SquashedGaussianPolicy) -> Result<Vec<f64>> {
        policy.backward_deterministic(&self.det, &self.da_c)
    }

    /// `∇_{φ'} J_α = ∇_{φ'} Q_r − ν'·∇_{φ'} Q_c`, from two separate backward passes.
    pub fn grad_j_alpha(&self, policy: &SquashedGaussianPolicy, nu_prime: f64) -> Result<Vec<f64>> {
        let gr = self.grad_qr(policy)?;
        let gc = self.grad_qc(policy)?;
        Ok(super::inner::combine(&gr, -nu_prime, &gc))
    }

    /// Gradient of the penalised critic `Q_r − ν'·Q_c` as one function of the action.
    pub fn grad_penalised(&self, policy: &SquashedGaussianPolicy, nu_prime: f64) -> Result<Vec<f64>> {
        let mut da = self.da_r.clone();
        da.add_scaled(&self.da_c, -nu_prime)?;
        policy.backward_deterministic(&self.det, &da)
    }
}

/// `J_α = mean_{D_0}[Q_r − ν'·(Q_c − ε')]` at deterministic actions.
pub fn j_alpha_value(det: &DetEval, nu_prime: f64, eps_prime: f64) -> f64 {
    mean(&det.qr) - nu_prime * (mean(&det.qc) - eps_prime)
}

/// `ĝ_α = −β_φ·∇_φ log πᵀ·[∇_{φ'} Q_r − ν'·∇_{φ'} Q_c]`.
pub fn alpha_meta_gradient(beta_phi: f64, g_lp: &[f64], policy_prime: &SquashedGaussianPolicy, det: &DetEval, nu_prime: f64) -> Result<f64> {
    Ok(-beta_phi * dot(g_lp, &det.grad_j_alpha(policy_prime, nu_prime)?))
}

/// The α meta-gradient of the penalised-critic learner: the objective is the penalised
/// critic at initial states, differentiated as a single function.
pub fn alpha_meta_gradient_rcpo(beta_phi: f64, g_lp: &[f64], policy_prime: &SquashedGaussianPolicy, det: &DetEval, nu_prime: f64) -> Result<f64> {
    Ok(-beta_phi * dot(g_lp, &det.grad_penalised(policy_prime, nu_prime)?))
}

/// Projected ascent step of α along a meta-gradient.
pub fn alpha_update(alpha: f64, g: f64, hyper: &HyperParams, opt: &mut OptState) -> Result<f64> {
    Ok(hyper.project_alpha(apply_scalar_update(alpha, g, opt, Direction::Ascend)?))
}

/// Target-entropy temperature step: raises α while `E[−log π]` is below `target_entropy`
/// and lowers it otherwise. Returns `(α', loss)`.
pub fn entropy_alpha_update(alpha: f64, log_prob_mean: f64, target_entropy: f64, hyper: &HyperParams, opt: &mut OptState) -> Result<(f64, f64)> {
    let slack = log_prob_mean + target_entropy;
    let next = apply_scalar_update(alpha, slack, opt, Direction::Ascend)?;
    Ok((hyper.project_alpha(next), -alpha * slack))
}
