use crate::buffers::Batch;
use crate::diffcore::OptState;
use crate::models::{q_max, q_min, CriticPair, NextActions, TargetPair};
use crate::rng::Rng;
use crate::{Error, Result};

fn check_batch(batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer("critic batch"));
    }
    Ok(())
}

/// `y = r + γ_r·(1 − terminal)·E_{a'}[min(Q̄_r1, Q̄_r2)(s', a') − α·log π(a'|s')]`.
pub fn reward_targets(
    batch: &Batch,
    target: &TargetPair,
    next: &dyn NextActions,
    alpha: f64,
    gamma_r: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_batch(batch)?;
    let mut boot = vec![0.0; batch.len()];
    for cand in next.candidates(&batch.next_states, rng)? {
        let q = q_min(target, &batch.next_states, &cand.actions)?;
        for n in 0..boot.len() {
            boot[n] += cand.weight[n] * (q[n] - alpha * cand.log_prob[n]);
        }
    }
    Ok((0..batch.len())
        .map(|n| {
            let live = if batch.terminals[n] { 0.0 } else { 1.0 };
            batch.rewards[n] + gamma_r * live * boot[n]
        })
        .collect())
}

/// `y = clamp(c + (1 − c)·(1 − terminal)·γ_c·E_{a'}[max(Q̄_c1, Q̄_c2)(s', a')], 0, 1)`.
///
/// `c` belongs to the arrived-at state `s'`, so a violating transition is worth exactly 1.
pub fn safety_targets(
    batch: &Batch,
    target: &TargetPair,
    next: &dyn NextActions,
    gamma_c: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_batch(batch)?;
    let mut boot = vec![0.0; batch.len()];
    for cand in next.candidates(&batch.next_states, rng)? {
        let q = q_max(target, &batch.next_states, &cand.actions)?;
        for n in 0..boot.len() {
            boot[n] += cand.weight[n] * q[n];
        }
    }
    Ok((0..batch.len())
        .map(|n| {
            let c = batch.costs[n];
            let live = if batch.terminals[n] { 0.0 } else { 1.0 };
            (c + (1.0 - c) * live * gamma_c * boot[n]).clamp(0.0, 1.0)
        })
        .collect())
}

/// One regression step of both reward critics; returns the mean half squared error.
#[allow(clippy::too_many_arguments)]
pub fn reward_critic_update(
    critics: &mut CriticPair,
    target: &TargetPair,
    opts: (&mut OptState, &mut OptState),
    batch: &Batch,
    next: &dyn NextActions,
    alpha: f64,
    gamma_r: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let y = reward_targets(batch, target, next, alpha, gamma_r, rng)?;
    critics.regress(&batch.states, &batch.actions, &y, opts.0, opts.1)
}

/// One regression step of both safety critics on a batch from `D ∪ D_s`.
pub fn safety_critic_update(
    critics: &mut CriticPair,
    target: &TargetPair,
    opts: (&mut OptState, &mut OptState),
    batch: &Batch,
    next: &dyn NextActions,
    gamma_c: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let y = safety_targets(batch, target, next, gamma_c, rng)?;
    critics.regress(&batch.states, &batch.actions, &y, opts.0, opts.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::Transition;
    use crate::diffcore::{MatrixF64, MlpNet};
    use crate::models::{CriticRole, QPair, SquashedGaussianPolicy};
    use crate::rng::SeedTree;

    fn constant_pair(role: CriticRole, v1: f64, v2: f64) -> TargetPair {
        let net = |v: f64| {
            let mut n = MlpNet::zeros(&[3, 1]).unwrap();
            n.biases_mut()[0].set(0, 0, v);
            n
        };
        TargetPair::from_source(&CriticPair::from_nets(role, 2, net(v1), net(v2)).unwrap())
    }

    fn batch(items: &[Transition]) -> Batch {
        Batch::collate(&items.iter().collect::<Vec<_>>()).unwrap()
    }

    fn tr(r: f64, c: bool, terminal: bool) -> Transition {
        Transition {
            s: vec![0.1, 0.2],
            a: vec![0.3],
            r,
            c,
            s_next: vec![0.4, -0.5],
            terminal,
        }
    }

    fn policy(seed: u64) -> SquashedGaussianPolicy {
        SquashedGaussianPolicy::new(2, 1, &[4], &mut SeedTree::new(seed).rng("p")).unwrap()
    }

    #[test]
    fn terminal_reward_target_is_the_reward() {
        let t = constant_pair(CriticRole::Reward, 3.0, 4.0);
        let y = reward_targets(&batch(&[tr(1.0, false, true)]), &t, &policy(0), 0.5, 0.99, &mut SeedTree::new(0).rng("r")).unwrap();
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn zero_discount_reward_target_is_the_reward() {
        let t = constant_pair(CriticRole::Reward, 3.0, 4.0);
        let y = reward_targets(&batch(&[tr(-0.25, false, false)]), &t, &policy(0), 0.5, 0.0, &mut SeedTree::new(0).rng("r")).unwrap();
        assert_eq!(y, vec![-0.25]);
    }

    #[test]
    fn reward_target_matches_direct_evaluation() {
        let mut rng = SeedTree::new(1).rng("net");
        let src = CriticPair::new(CriticRole::Reward, 2, 1, &[5], &mut rng).unwrap();
        let t = TargetPair::from_source(&src);
        let pol = policy(2);
        let items: Vec<Transition> = (0..6)
            .map(|k| Transition {
                s: vec![k as f64 * 0.1, 0.3],
                a: vec![0.2],
                r: k as f64 - 2.0,
                c: false,
                s_next: vec![0.5 - k as f64 * 0.2, -0.1 * k as f64],
                terminal: k == 3,
            })
            .collect();
        let b = batch(&items);
        let (alpha, gamma) = (0.2, 0.9);
        let y = reward_targets(&b, &t, &pol, alpha, gamma, &mut SeedTree::new(3).rng("a")).unwrap();
        // Replay the same draw and evaluate the target formula row by row.
        let sample = pol.sample_action(&b.next_states, &mut SeedTree::new(3).rng("a")).unwrap();
        for n in 0..6 {
            let input = MatrixF64::from_rows(&[[b.next_states.row(n), sample.action.row(n)].concat()]).unwrap();
            let q1 = t.pair().q1.forward(&input).unwrap().get(0, 0);
            let q2 = t.pair().q2.forward(&input).unwrap().get(0, 0);
            let boot = if items[n].terminal { 0.0 } else { q1.min(q2) - alpha * sample.log_prob[n] };
            let expected = items[n].r + gamma * boot;
            assert!((y[n] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn violation_target_is_one() {
        let t = constant_pair(CriticRole::Safety, 0.2, 0.5);
        let y = safety_targets(&batch(&[tr(0.0, true, true)]), &t, &policy(0), 0.6, &mut SeedTree::new(0).rng("r")).unwrap();
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn safe_target_discounts_the_pessimistic_twin() {
        let t = constant_pair(CriticRole::Safety, 0.2, 0.5);
        let y = safety_targets(&batch(&[tr(0.0, false, false)]), &t, &policy(0), 0.6, &mut SeedTree::new(0).rng("r")).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn safety_targets_are_clamped() {
        let high = constant_pair(CriticRole::Safety, 3.0, 2.0);
        let low = constant_pair(CriticRole::Safety, -3.0, -2.0);
        let b = batch(&[tr(0.0, false, false)]);
        let mut rng = SeedTree::new(0).rng("r");
        assert_eq!(safety_targets(&b, &high, &policy(0), 0.6, &mut rng).unwrap(), vec![1.0]);
        assert_eq!(safety_targets(&b, &low, &policy(0), 0.6, &mut rng).unwrap(), vec![0.0]);
    }

    #[test]
    fn roles_are_enforced_in_targets() {
        let safety = constant_pair(CriticRole::Safety, 0.0, 0.0);
        let b = batch(&[tr(0.0, false, false)]);
        let mut rng = SeedTree::new(0).rng("r");
        assert!(reward_targets(&b, &safety, &policy(0), 0.1, 0.9, &mut rng).is_err());
    }
}
