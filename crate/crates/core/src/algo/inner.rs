use crate::diffcore::{apply_scalar_update, apply_update, Direction, GradPack, MatrixF64, OptState};
use crate::models::{CriticPair, PolicySample, SquashedGaussianPolicy};
use crate::Result;

/// Everything the inner step needs from one batch `B` at the current `φ`.
///
/// Gradients are flat over the policy parameters and taken of batch means with the noise
/// held fixed (reparameterisation).
#[derive(Debug, Clone)]
pub struct InnerEval {
    pub sample: PolicySample,
    /// `min(Q_r1, Q_r2)(s, a_φ)` per row.
    pub qr: Vec<f64>,
    /// `max(Q_c1, Q_c2)(s, a_φ)` per row.
    pub qc: Vec<f64>,
    /// `∇_φ mean Q_r`.
    pub g_r: Vec<f64>,
    /// `∇_φ mean Q_c`.
    pub g_c: Vec<f64>,
    /// `∇_φ mean log π`.
    pub g_lp: Vec<f64>,
    da_r: MatrixF64,
    da_c: MatrixF64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl InnerEval {
    pub fn compute(
        policy: &SquashedGaussianPolicy,
        reward: &CriticPair,
        safety: &CriticPair,
        states: &MatrixF64,
        noise: &MatrixF64,
    ) -> Result<Self> {
        let sample = policy.evaluate_with_noise(states, noise)?;
        let n = states.rows();
        let w = vec![1.0 / n as f64; n];
        let re = reward.evaluate(states, &sample.action)?;
        let se = safety.evaluate(states, &sample.action)?;
        let da_r = reward.action_grad(&re, &w)?;
        let da_c = safety.action_grad(&se, &w)?;
        let zero_a = MatrixF64::zeros(n, policy.action_dim());
        let zero_w = vec![0.0; n];
        let g_r = policy.backward_sample(&sample, &da_r, &zero_w)?;
        let g_c = policy.backward_sample(&sample, &da_c, &zero_w)?;
        let g_lp = policy.backward_sample(&sample, &zero_a, &w)?;
        Ok(Self {
            qr: re.value,
            qc: se.value,
            g_r,
            g_c,
            g_lp,
            da_r,
            da_c,
            sample,
        })
    }

    pub fn qr_mean(&self) -> f64 {
        mean(&self.qr)
    }

    pub fn qc_mean(&self) -> f64 {
        mean(&self.qc)
    }

    pub fn log_prob_mean(&self) -> f64 {
        mean(&self.sample.log_prob)
    }

    /// `L = mean[Q_r − ν·(Q_c − ε) − α·log π]`.
    pub fn lagrangian(&self, nu: f64, eps: f64, alpha: f64) -> f64 {
        self.qr_mean() - nu * (self.qc_mean() - eps) - alpha * self.log_prob_mean()
    }

    /// `∇_φ mean[Q_r − ν·Q_c]` through a single backward pass of the combined critic.
    pub fn penalised_gradient(&self, policy: &SquashedGaussianPolicy, nu: f64) -> Result<Vec<f64>> {
        let mut da = self.da_r.clone();
        da.add_scaled(&self.da_c, -nu)?;
        let n = da.rows();
        policy.backward_sample(&self.sample, &da, &vec![0.0; n])
    }
}

/// `ν' = max(0, ν + β_ν·(mean Q_c − ε))`, written as a descent step on `∇_ν J_ν = ε − mean Q_c`.
pub fn nu_update(nu: f64, eps: f64, qc_mean: f64, opt: &mut OptState) -> Result<f64> {
    Ok(apply_scalar_update(nu, eps - qc_mean, opt, Direction::Descend)?.max(0.0))
}

/// How the actor's ascent direction treats the multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActorForm {
    /// `ν'` enters as a value: `g_r − ν'·g_c − α·g_lp`.
    Value,
    /// `ν'(φ) = ν + β_ν·(mean Q_c(φ) − ε)` is differentiated:
    /// `g_r − (2β_ν·mean Q_c − 2β_ν·ε + ν)·g_c − α·g_lp`.
    Expanded { nu: f64, beta_nu: f64, eps: f64 },
    /// Penalised critic `Q_r − ν'·Q_c` differentiated as one function.
    Penalised,
}

/// Ascent direction of the actor objective at `φ`.
pub fn actor_direction(
    policy: &SquashedGaussianPolicy,
    inner: &InnerEval,
    form: ActorForm,
    nu_prime: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    let base = match form {
        ActorForm::Value => combine(&inner.g_r, -nu_prime, &inner.g_c),
        ActorForm::Expanded { nu, beta_nu, eps } => {
            let factor = 2.0 * beta_nu * inner.qc_mean() - 2.0 * beta_nu * eps + nu;
            combine(&inner.g_r, -factor, &inner.g_c)
        }
        ActorForm::Penalised => inner.penalised_gradient(policy, nu_prime)?,
    };
    Ok(combine(&base, -alpha, &inner.g_lp))
}

pub(crate) fn combine(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// `φ' = φ + step(direction)`.
pub fn actor_update(policy: &mut SquashedGaussianPolicy, direction: &[f64], opt: &mut OptState) -> Result<()> {
    let grads = GradPack::from_flat(policy.trunk(), direction)?;
    apply_update(policy.trunk_mut(), &grads, opt, Direction::Ascend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CriticRole;
    use crate::rng::SeedTree;

    fn setup(seed: u64) -> (SquashedGaussianPolicy, CriticPair, CriticPair, MatrixF64, MatrixF64) {
        let tree = SeedTree::new(seed);
        let mut rng = tree.rng("nets");
        let pol = SquashedGaussianPolicy::new(3, 2, &[4, 4], &mut rng).unwrap();
        let r = CriticPair::new(CriticRole::Reward, 3, 2, &[4, 4], &mut rng).unwrap();
        let c = CriticPair::new(CriticRole::Safety, 3, 2, &[4, 4], &mut rng).unwrap();
        let s = MatrixF64::from_vec(6, 3, (0..18).map(|k| ((k * 7 % 11) as f64 / 5.0) - 1.0).collect()).unwrap();
        let noise = pol.draw_noise(6, &mut tree.rng("noise"));
        (pol, r, c, s, noise)
    }

    #[test]
    fn nu_substitution_and_projection() {
        let mut sgd = OptState::sgd(0.01);
        assert!((nu_update(10.0, 0.4, 0.5, &mut sgd).unwrap() - 10.001).abs() < 1e-12);
        assert_eq!(nu_update(10.0, 0.4, 0.4, &mut sgd).unwrap(), 10.0);
        assert_eq!(nu_update(0.0, 0.5, 0.2, &mut sgd).unwrap(), 0.0);
    }

    #[test]
    fn collapsed_lagrangian_is_pure_reward_ascent() {
        let (pol, r, c, s, noise) = setup(1);
        let inner = InnerEval::compute(&pol, &r, &c, &s, &noise).unwrap();
        let d = actor_direction(&pol, &inner, ActorForm::Value, 0.0, 0.0).unwrap();
        assert_eq!(d, inner.g_r);
    }

    #[test]
    fn penalised_form_agrees_with_the_value_form() {
        let (pol, r, c, s, noise) = setup(2);
        let inner = InnerEval::compute(&pol, &r, &c, &s, &noise).unwrap();
        let a = actor_direction(&pol, &inner, ActorForm::Value, 1.7, 0.3).unwrap();
        let b = actor_direction(&pol, &inner, ActorForm::Penalised, 1.7, 0.3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn expanded_form_equals_the_chain_rule() {
        // d/dφ [ν'(φ)·(q̄_c − ε)] = ν'·g_c + β_ν·(q̄_c − ε)·g_c, computed term by term.
        let (pol, r, c, s, noise) = setup(3);
        let inner = InnerEval::compute(&pol, &r, &c, &s, &noise).unwrap();
        let (nu, beta_nu, eps, alpha) = (2.0, 0.05, 0.3, 0.2);
        let nu_prime = nu + beta_nu * (inner.qc_mean() - eps);
        let closed = actor_direction(&pol, &inner, ActorForm::Expanded { nu, beta_nu, eps }, nu_prime, alpha).unwrap();
        for i in 0..closed.len() {
            let chain = inner.g_r[i]
                - (nu_prime * inner.g_c[i] + beta_nu * (inner.qc_mean() - eps) * inner.g_c[i])
                - alpha * inner.g_lp[i];
            assert!((closed[i] - chain).abs() <= 1e-10);
        }
    }

    #[test]
    fn actor_update_moves_only_the_policy() {
        let (mut pol, r, c, s, noise) = setup(4);
        let (r0, c0) = (r.clone(), c.clone());
        let inner = InnerEval::compute(&pol, &r, &c, &s, &noise).unwrap();
        let before = inner.lagrangian(1.0, 0.5, 0.1);
        let d = actor_direction(&pol, &inner, ActorForm::Value, 1.0, 0.1).unwrap();
        actor_update(&mut pol, &d, &mut OptState::sgd(1e-3)).unwrap();
        let after = InnerEval::compute(&pol, &r, &c, &s, &noise).unwrap().lagrangian(1.0, 0.5, 0.1);
        assert!(after > before);
        assert_eq!((r, c), (r0, c0));
    }
}
