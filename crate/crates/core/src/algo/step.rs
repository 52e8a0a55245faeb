use super::inner::{actor_direction, actor_update, nu_update, ActorForm, InnerEval};
use super::meta::{
    alpha_meta_gradient, alpha_meta_gradient_rcpo, alpha_update, entropy_alpha_update, eps_update, eps_update_nl,
    j_alpha_value, DetEval, OuterEval,
};
use super::{reward_critic_update, safety_critic_update, AlgoState, Variant};
use crate::buffers::Buffers;
use crate::models::polyak_update;
use crate::rng::Rng;
use crate::Result;

/// Scalar diagnostics of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    /// Reward-critic regression loss.
    pub qr: f64,
    /// Safety-critic regression loss.
    pub qc: f64,
    /// Negated actor objective at `φ` before the step.
    pub pi: f64,
    /// The ε objective (`J_ε` or `J_nl`), the α meta-objective, or the α loss, by variant.
    pub meta: f64,
}

/// One full update: safety critics on `D ∪ D_s`, reward critics on `B ⊂ D`, then
/// `ν → φ → ε → α` in that order, then both target pairs.
///
/// `ε` is evaluated on an independently resampled `B'` at the updated `φ'`; `α` on
/// initial states from `D_0`. New scalars are committed only after all four are computed.
pub fn train_step(state: &mut AlgoState, buffers: &Buffers, rng: &mut Rng) -> Result<StepLosses> {
    let h = state.hyper.clone();
    let n = h.batch_size;

    let union = buffers.sample_all(n, rng)?;
    let qc_loss = safety_critic_update(
        &mut state.safety,
        &state.safety_target,
        (&mut state.opts.safety1, &mut state.opts.safety2),
        &union,
        &state.policy,
        h.gamma_c,
        rng,
    )?;

    let b = buffers.sample_transitions(n, rng)?;
    let qr_loss = reward_critic_update(
        &mut state.reward,
        &state.reward_target,
        (&mut state.opts.reward1, &mut state.opts.reward2),
        &b,
        &state.policy,
        state.alpha,
        h.gamma_r,
        rng,
    )?;

    let noise = state.policy.draw_noise(n, rng);
    let inner = InnerEval::compute(&state.policy, &state.reward, &state.safety, &b.states, &noise)?;

    let nu_prime = nu_update(state.nu, state.eps, inner.qc_mean(), &mut state.opts.nu)?;

    let form = if h.variant.is_rcpo() {
        ActorForm::Penalised
    } else if h.expanded_actor_gradient {
        ActorForm::Expanded {
            nu: state.nu,
            beta_nu: h.beta_nu,
            eps: state.eps,
        }
    } else {
        ActorForm::Value
    };
    let pi_loss = -inner.lagrangian(nu_prime, state.eps, state.alpha);
    let direction = actor_direction(&state.policy, &inner, form, nu_prime, state.alpha)?;
    actor_update(&mut state.policy, &direction, &mut state.opts.policy)?;

    let mut meta = 0.0;
    let eps_prime = if h.variant.tunes_eps() {
        let b_prime = buffers.sample_transitions(n, rng)?;
        let noise_prime = state.policy.draw_noise(n, rng);
        let outer = OuterEval::compute(&state.policy, &state.reward, &state.safety, &b_prime.states, &noise_prime)?;
        let (eps, value) = if h.variant == Variant::MetaSacLagJnl {
            eps_update_nl(&state.policy, &state.reward, &state.safety, &outer, &inner.g_c, state.eps, &h, &mut state.opts.eps)?
        } else {
            eps_update(
                &state.policy,
                &state.reward,
                &state.safety,
                &outer,
                &inner.g_c,
                nu_prime,
                state.eps,
                &h,
                &mut state.opts.eps,
            )?
        };
        meta = value;
        eps
    } else {
        state.eps
    };

    let alpha_prime = match h.variant {
        Variant::MetaSacLag | Variant::MetaSacLagJnl | Variant::RcpoMetaSac => {
            let s0 = buffers.init_states.sample(n, rng)?;
            let det = DetEval::compute(&state.policy, &state.reward, &state.safety, &s0)?;
            let g = if h.variant == Variant::RcpoMetaSac {
                meta = j_alpha_value(&det, nu_prime, eps_prime);
                alpha_meta_gradient_rcpo(h.beta_phi, &inner.g_lp, &state.policy, &det, nu_prime)?
            } else {
                alpha_meta_gradient(h.beta_phi, &inner.g_lp, &state.policy, &det, nu_prime)?
            };
            alpha_update(state.alpha, g, &h, &mut state.opts.alpha)?
        }
        Variant::SacV2Lag | Variant::RcpoSacV2 => {
            let target = h.target_entropy_for(state.policy.action_dim());
            let (alpha, loss) = entropy_alpha_update(state.alpha, inner.log_prob_mean(), target, &h, &mut state.opts.alpha)?;
            meta = loss;
            alpha
        }
    };

    state.nu = nu_prime;
    state.eps = eps_prime;
    state.alpha = alpha_prime;
    polyak_update(&mut state.reward_target, &state.reward, h.tau)?;
    polyak_update(&mut state.safety_target, &state.safety, h.tau)?;

    Ok(StepLosses {
        qr: qr_loss,
        qc: qc_loss,
        pi: pi_loss,
        meta,
    })
}
