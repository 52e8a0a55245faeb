//! Function approximators: the tanh-squashed Gaussian policy, twin critics and their
//! polyak-averaged targets.

use rand_distr::{Distribution, StandardNormal};

use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::diffcore::{apply_update, Direction, ForwardTrace, MatrixF64, MlpNet, OptState};
use crate::rng::Rng;
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Guards `log(0)` in the tanh change-of-variables correction.
pub const TANH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Stochastic policy `a = tanh(μ(s) + σ(s)⊙ξ)`, `ξ ~ N(0, I)`.
///
/// One trunk emits `[μ | log σ]`; `log σ` is clamped to the configured bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGaussianPolicy {
    trunk: MlpNet,
    action_dim: usize,
    log_std_bounds: (f64, f64),
}

/// A reparameterised batch of actions together with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    trace: ForwardTrace,
    log_std_active: Vec<bool>,
    pub noise: MatrixF64,
    pub mean: MatrixF64,
    pub log_std: MatrixF64,
    pub pre_squash: MatrixF64,
    pub action: MatrixF64,
    pub log_prob: Vec<f64>,
}

/// Deterministic actions `tanh(μ(s))` with their forward trace.
#[derive(Debug, Clone)]
pub struct DeterministicEval {
    trace: ForwardTrace,
    pub action: MatrixF64,
}

impl SquashedGaussianPolicy {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * action_dim);
        Ok(Self {
            trunk: MlpNet::new_random(&dims, rng)?,
            action_dim,
            log_std_bounds: (LOG_STD_MIN, LOG_STD_MAX),
        })
    }

    pub fn from_trunk(trunk: MlpNet, action_dim: usize) -> Result<Self> {
        if trunk.output_dim() != 2 * action_dim {
            return Err(Error::shape("policy trunk", 2 * action_dim, trunk.output_dim()));
        }
        Ok(Self {
            trunk,
            action_dim,
            log_std_bounds: (LOG_STD_MIN, LOG_STD_MAX),
        })
    }

    pub fn trunk(&self) -> &MlpNet {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut MlpNet {
        &mut self.trunk
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn log_std_bounds(&self) -> (f64, f64) {
        self.log_std_bounds
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.trunk.params_flat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.trunk.set_params_flat(flat)
    }

    /// Draws `ξ ~ N(0, I)` and evaluates the reparameterised sample.
    pub fn sample_action(&self, states: &MatrixF64, rng: &mut Rng) -> Result<PolicySample> {
        let noise = self.draw_noise(states.rows(), rng);
        self.evaluate_with_noise(states, &noise)
    }

    pub fn draw_noise(&self, rows: usize, rng: &mut Rng) -> MatrixF64 {
        let data = (0..rows * self.action_dim).map(|_| StandardNormal.sample(rng)).collect();
        MatrixF64::from_vec(rows, self.action_dim, data).expect("sized above")
    }

    /// The sample obtained with the given standard-normal noise; `ξ = 0` gives the
    /// deterministic action.
    pub fn evaluate_with_noise(&self, states: &MatrixF64, noise: &MatrixF64) -> Result<PolicySample> {
        if noise.shape() != (states.rows(), self.action_dim) {
            return Err(Error::shape(
                "policy noise",
                format!("{}x{}", states.rows(), self.action_dim),
                format!("{}x{}", noise.rows(), noise.cols()),
            ));
        }
        let trace = self.trunk.forward_trace(states)?;
        let out = trace.output();
        let d = self.action_dim;
        let (lo, hi) = self.log_std_bounds;
        let mean = out.columns(0, d);
        let raw = out.columns(d, 2 * d);
        let log_std_active = raw.as_slice().iter().map(|&r| r > lo && r < hi).collect();
        let log_std = raw.map(|r| r.clamp(lo, hi));
        let mut pre_squash = MatrixF64::zeros(states.rows(), d);
        let mut log_prob = vec![0.0; states.rows()];
        for n in 0..states.rows() {
            let mut lp = 0.0;
            for i in 0..d {
                let (mu, ls, xi) = (mean.get(n, i), log_std.get(n, i), noise.get(n, i));
                let u = mu + ls.exp() * xi;
                pre_squash.set(n, i, u);
                let a = u.tanh();
                lp += -0.5 * xi * xi - HALF_LN_2PI - ls - (1.0 - a * a + TANH_EPS).ln();
            }
            log_prob[n] = lp;
        }
        let action = pre_squash.map(f64::tanh);
        Ok(PolicySample {
            trace,
            log_std_active,
            noise: noise.clone(),
            mean,
            log_std,
            pre_squash,
            action,
            log_prob,
        })
    }

    pub fn deterministic_action(&self, states: &MatrixF64) -> Result<MatrixF64> {
        Ok(self.deterministic(states)?.action)
    }

    pub fn deterministic(&self, states: &MatrixF64) -> Result<DeterministicEval> {
        let trace = self.trunk.forward_trace(states)?;
        let action = trace.output().columns(0, self.action_dim).map(f64::tanh);
        Ok(DeterministicEval { trace, action })
    }

    /// Gradient with respect to the policy parameters (flat) of
    /// `Σ_n [ Σ_i d_action[n,i]·a[n,i] + d_log_prob[n]·log π(a_n|s_n) ]`, differentiating
    /// through the reparameterised action.
    pub fn backward_sample(&self, sample: &PolicySample, d_action: &MatrixF64, d_log_prob: &[f64]) -> Result<Vec<f64>> {
        let rows = sample.action.rows();
        let d = self.action_dim;
        if d_action.shape() != (rows, d) || d_log_prob.len() != rows {
            return Err(Error::shape(
                "policy backward",
                format!("{rows}x{d} and {rows} weights"),
                format!("{}x{} and {}", d_action.rows(), d_action.cols(), d_log_prob.len()),
            ));
        }
        let mut upstream = MatrixF64::zeros(rows, 2 * d);
        for n in 0..rows {
            let w = d_log_prob[n];
            for i in 0..d {
                let a = sample.action.get(n, i);
                let one_minus = 1.0 - a * a;
                let du = d_action.get(n, i) * one_minus + w * 2.0 * a * one_minus / (one_minus + TANH_EPS);
                upstream.set(n, i, du);
                let sigma_xi = sample.log_std.get(n, i).exp() * sample.noise.get(n, i);
                let dls = du * sigma_xi - w;
                let gate = if sample.log_std_active[n * d + i] { 1.0 } else { 0.0 };
                upstream.set(n, d + i, dls * gate);
            }
        }
        Ok(self.trunk.backward_trace(&sample.trace, &upstream)?.flat_params())
    }

    /// Gradient (flat) of `Σ d_action ⊙ tanh(μ)` with respect to the policy parameters.
    pub fn backward_deterministic(&self, eval: &DeterministicEval, d_action: &MatrixF64) -> Result<Vec<f64>> {
        let rows = eval.action.rows();
        let d = self.action_dim;
        if d_action.shape() != (rows, d) {
            return Err(Error::shape("deterministic backward", format!("{rows}x{d}"), format!("{:?}", d_action.shape())));
        }
        let mut upstream = MatrixF64::zeros(rows, 2 * d);
        for n in 0..rows {
            for i in 0..d {
                let a = eval.action.get(n, i);
                upstream.set(n, i, d_action.get(n, i) * (1.0 - a * a));
            }
        }
        Ok(self.trunk.backward_trace(&eval.trace, &upstream)?.flat_params())
    }

    /// `log π(a|s)` for given actions in `(-1, 1)`.
    pub fn log_prob_of(&self, states: &MatrixF64, actions: &MatrixF64) -> Result<Vec<f64>> {
        let out = self.trunk.forward(states)?;
        let d = self.action_dim;
        if actions.shape() != (states.rows(), d) {
            return Err(Error::shape("log_prob_of", format!("{}x{d}", states.rows()), format!("{:?}", actions.shape())));
        }
        let (lo, hi) = self.log_std_bounds;
        Ok((0..states.rows())
            .map(|n| {
                (0..d)
                    .map(|i| {
                        let a = actions.get(n, i);
                        let u = a.atanh();
                        let (mu, ls) = (out.get(n, i), out.get(n, d + i).clamp(lo, hi));
                        let z = (u - mu) / ls.exp();
                        -0.5 * z * z - HALF_LN_2PI - ls - (1.0 - a * a + TANH_EPS).ln()
                    })
                    .sum()
            })
            .collect())
    }
}

/// Which combination of the twin critics is pessimistic: min for reward, max for safety.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticRole {
    Reward,
    Safety,
}

/// Twin critics `Q(s, a)` over `[s | a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair {
    pub q1: MlpNet,
    pub q2: MlpNet,
    role: CriticRole,
    state_dim: usize,
}

/// Slowly tracking copy of a [`CriticPair`], written only by [`polyak_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPair(CriticPair);

/// Both critic outputs and the pessimistic combination per row.
#[derive(Debug, Clone)]
pub struct PairEval {
    t1: ForwardTrace,
    t2: ForwardTrace,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub value: Vec<f64>,
    first_selected: Vec<bool>,
}

/// Read access shared by live and target pairs.
pub trait QPair {
    fn pair(&self) -> &CriticPair;
}

impl QPair for CriticPair {
    fn pair(&self) -> &CriticPair {
        self
    }
}

impl QPair for TargetPair {
    fn pair(&self) -> &CriticPair {
        &self.0
    }
}

impl CriticPair {
    pub fn new(role: CriticRole, state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(Self {
            q1: MlpNet::new_random(&dims, rng)?,
            q2: MlpNet::new_random(&dims, rng)?,
            role,
            state_dim,
        })
    }

    pub fn from_nets(role: CriticRole, state_dim: usize, q1: MlpNet, q2: MlpNet) -> Result<Self> {
        if q1.dims() != q2.dims() || q1.output_dim() != 1 || q1.input_dim() <= state_dim {
            return Err(Error::shape("CriticPair", format!("{:?} -> 1", q1.dims()), format!("{:?}", q2.dims())));
        }
        Ok(Self { q1, q2, role, state_dim })
    }

    pub fn role(&self) -> CriticRole {
        self.role
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.q1.input_dim() - self.state_dim
    }

    pub fn is_finite(&self) -> bool {
        self.q1.is_finite() && self.q2.is_finite()
    }

    /// Evaluates both critics and the role's pessimistic combination.
    pub fn evaluate(&self, states: &MatrixF64, actions: &MatrixF64) -> Result<PairEval> {
        let input = MatrixF64::hcat(states, actions)?;
        let t1 = self.q1.forward_trace(&input)?;
        let t2 = self.q2.forward_trace(&input)?;
        let q1 = t1.output().as_slice().to_vec();
        let q2 = t2.output().as_slice().to_vec();
        let first_selected: Vec<bool> = q1
            .iter()
            .zip(&q2)
            .map(|(a, b)| match self.role {
                CriticRole::Reward => a <= b,
                CriticRole::Safety => a >= b,
            })
            .collect();
        let value = first_selected
            .iter()
            .zip(q1.iter().zip(&q2))
            .map(|(&first, (&a, &b))| if first { a } else { b })
            .collect();
        Ok(PairEval {
            t1,
            t2,
            q1,
            q2,
            value,
            first_selected,
        })
    }

    /// `∂/∂a Σ_n upstream[n]·value[n]`, one row per sample.
    pub fn action_grad(&self, eval: &PairEval, upstream: &[f64]) -> Result<MatrixF64> {
        let rows = eval.value.len();
        if upstream.len() != rows {
            return Err(Error::shape("action_grad", rows, upstream.len()));
        }
        let mut u1 = MatrixF64::zeros(rows, 1);
        let mut u2 = MatrixF64::zeros(rows, 1);
        for n in 0..rows {
            if eval.first_selected[n] {
                u1.set(n, 0, upstream[n]);
            } else {
                u2.set(n, 0, upstream[n]);
            }
        }
        let g1 = self.q1.backward_trace(&eval.t1, &u1)?.input;
        let g2 = self.q2.backward_trace(&eval.t2, &u2)?.input;
        let total = self.q1.input_dim();
        let mut out = g1.columns(self.state_dim, total);
        out.add_scaled(&g2.columns(self.state_dim, total), 1.0)?;
        Ok(out)
    }

    /// One regression step of both critics on `½(Q − y)²`; returns the mean loss over the two.
    pub fn regress(
        &mut self,
        states: &MatrixF64,
        actions: &MatrixF64,
        targets: &[f64],
        opt1: &mut OptState,
        opt2: &mut OptState,
    ) -> Result<f64> {
        let rows = states.rows();
        if rows == 0 || targets.len() != rows {
            return Err(Error::shape("critic regression", rows, targets.len()));
        }
        let input = MatrixF64::hcat(states, actions)?;
        let mut total = 0.0;
        for (net, opt) in [(&mut self.q1, opt1), (&mut self.q2, opt2)] {
            let trace = net.forward_trace(&input)?;
            let pred = trace.output().as_slice();
            let mut upstream = MatrixF64::zeros(rows, 1);
            let mut loss = 0.0;
            for n in 0..rows {
                let err = pred[n] - targets[n];
                loss += 0.5 * err * err;
                upstream.set(n, 0, err / rows as f64);
            }
            total += loss / rows as f64;
            let grads = net.backward_trace(&trace, &upstream)?;
            apply_update(net, &grads, opt, Direction::Descend)?;
        }
        Ok(total / 2.0)
    }
}

impl TargetPair {
    pub fn from_source(source: &CriticPair) -> Self {
        TargetPair(source.clone())
    }
}

fn pessimistic(pair: &CriticPair, states: &MatrixF64, actions: &MatrixF64) -> Result<Vec<f64>> {
    Ok(pair.evaluate(states, actions)?.value)
}

/// Elementwise `min(Q1, Q2)`; only defined for reward critics.
pub fn q_min(pair: &impl QPair, states: &MatrixF64, actions: &MatrixF64) -> Result<Vec<f64>> {
    let pair = pair.pair();
    if pair.role != CriticRole::Reward {
        return Err(Error::Contract("q_min called on a safety critic pair".into()));
    }
    pessimistic(pair, states, actions)
}

/// Elementwise `max(Q1, Q2)`; only defined for safety critics.
pub fn q_max(pair: &impl QPair, states: &MatrixF64, actions: &MatrixF64) -> Result<Vec<f64>> {
    let pair = pair.pair();
    if pair.role != CriticRole::Safety {
        return Err(Error::Contract("q_max called on a reward critic pair".into()));
    }
    pessimistic(pair, states, actions)
}

/// `ω̄ ← τ·ω + (1 − τ)·ω̄` for every parameter.
pub fn polyak_update(target: &mut TargetPair, source: &CriticPair, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Contract(format!("polyak tau must lie in (0, 1], got {tau}")));
    }
    let t = &mut target.0;
    if t.role != source.role || t.q1.dims() != source.q1.dims() {
        return Err(Error::shape("polyak_update", format!("{:?}", source.q1.dims()), format!("{:?}", t.q1.dims())));
    }
    for (tn, sn) in [(&mut t.q1, &source.q1), (&mut t.q2, &source.q2)] {
        let mixed: Vec<f64> = tn
            .params_flat()
            .iter()
            .zip(sn.params_flat())
            .map(|(&bar, w)| tau * w + (1.0 - tau) * bar)
            .collect();
        tn.set_params_flat(&mixed)?;
    }
    Ok(())
}

/// Weighted next actions used when bootstrapping critic targets.
#[derive(Debug, Clone)]
pub struct ActionCandidate {
    pub actions: MatrixF64,
    pub log_prob: Vec<f64>,
    /// Probability weight per row; weights of all candidates sum to one per row.
    pub weight: Vec<f64>,
}

/// A source of next actions `a' ~ π(s')` for critic targets.
pub trait NextActions {
    fn candidates(&self, next_states: &MatrixF64, rng: &mut Rng) -> Result<Vec<ActionCandidate>>;
}

impl NextActions for SquashedGaussianPolicy {
    /// One fresh reparameterised sample per next state.
    fn candidates(&self, next_states: &MatrixF64, rng: &mut Rng) -> Result<Vec<ActionCandidate>> {
        let s = self.sample_action(next_states, rng)?;
        Ok(vec![ActionCandidate {
            actions: s.action,
            log_prob: s.log_prob,
            weight: vec![1.0; next_states.rows()],
        }])
    }
}

impl Encode for SquashedGaussianPolicy {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.trunk);
        enc.usize(self.action_dim);
        enc.f64(self.log_std_bounds.0);
        enc.f64(self.log_std_bounds.1);
    }
}

impl Decode for SquashedGaussianPolicy {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let trunk: MlpNet = dec.get()?;
        let action_dim = dec.usize()?;
        let bounds = (dec.f64()?, dec.f64()?);
        let mut p = Self::from_trunk(trunk, action_dim).map_err(|e| Error::Decode(e.to_string()))?;
        p.log_std_bounds = bounds;
        Ok(p)
    }
}

impl Encode for CriticPair {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self.role {
            CriticRole::Reward => 0,
            CriticRole::Safety => 1,
        });
        enc.usize(self.state_dim);
        enc.put(&self.q1);
        enc.put(&self.q2);
    }
}

impl Decode for CriticPair {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let role = match dec.u8()? {
            0 => CriticRole::Reward,
            1 => CriticRole::Safety,
            r => return Err(Error::Decode(format!("unknown critic role {r}"))),
        };
        let state_dim = dec.usize()?;
        let q1 = dec.get()?;
        let q2 = dec.get()?;
        CriticPair::from_nets(role, state_dim, q1, q2).map_err(|e| Error::Decode(e.to_string()))
    }
}

impl Encode for TargetPair {
    fn encode(&self, enc: &mut Encoder) {
        self.0.encode(enc);
    }
}

impl Decode for TargetPair {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(TargetPair(dec.get()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand::Rng as _;

    fn batch(rows: usize, cols: usize, rng: &mut Rng) -> MatrixF64 {
        MatrixF64::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn policy_with_output_bias(state_dim: usize, bias: &[f64]) -> SquashedGaussianPolicy {
        let mut trunk = MlpNet::zeros(&[state_dim, 4, bias.len()]).unwrap();
        trunk.biases_mut()[1].as_mut_slice().copy_from_slice(bias);
        SquashedGaussianPolicy::from_trunk(trunk, bias.len() / 2).unwrap()
    }

    #[test]
    fn collapsed_std_gives_the_deterministic_action() {
        let policy = policy_with_output_bias(3, &[0.4, -0.7, -50.0, -50.0]);
        let s = batch(5, 3, &mut SeedTree::new(1).rng("s"));
        let sample = policy.sample_action(&s, &mut SeedTree::new(1).rng("n")).unwrap();
        let det = policy.deterministic_action(&s).unwrap();
        for (a, b) in sample.action.as_slice().iter().zip(det.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(sample.log_std.as_slice().iter().all(|&l| l == LOG_STD_MIN));
    }

    #[test]
    fn log_prob_at_the_mode() {
        let policy = policy_with_output_bias(2, &[0.0, 0.0, 0.3, -0.5]);
        let s = MatrixF64::zeros(1, 2);
        let sample = policy.evaluate_with_noise(&s, &MatrixF64::zeros(1, 2)).unwrap();
        assert_eq!(sample.action.as_slice(), &[0.0, 0.0]);
        let expected = (-HALF_LN_2PI - 0.3) + (-HALF_LN_2PI + 0.5);
        // At a = 0 the correction is -ln(1 + δ).
        assert!((sample.log_prob[0] - (expected - 2.0 * (1.0 + TANH_EPS).ln())).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one_in_one_dimension() {
        let mut rng = SeedTree::new(2).rng("p");
        let policy = SquashedGaussianPolicy::new(3, 1, &[8], &mut rng).unwrap();
        let s = batch(1, 3, &mut rng);
        // Midpoint rule on a grid uniform in u = atanh(a), mapped back with da = (1 − a²) du.
        let n = 20_000;
        let (lo, hi) = (-12.0f64, 12.0f64);
        let du = (hi - lo) / n as f64;
        let actions: Vec<f64> = (0..n).map(|k| (lo + (k as f64 + 0.5) * du).tanh()).collect();
        let states = MatrixF64::from_rows(&vec![s.row(0).to_vec(); n]).unwrap();
        let lp = policy.log_prob_of(&states, &MatrixF64::column(&actions)).unwrap();
        let integral: f64 = actions.iter().zip(&lp).map(|(a, l)| l.exp() * (1.0 - a * a) * du).sum();
        assert!((integral - 1.0).abs() <= 1e-3, "integral {integral}");
    }

    #[test]
    fn sampled_log_prob_agrees_with_log_prob_of() {
        let mut rng = SeedTree::new(3).rng("p");
        let policy = SquashedGaussianPolicy::new(3, 2, &[8, 8], &mut rng).unwrap();
        let s = batch(6, 3, &mut rng);
        let sample = policy.sample_action(&s, &mut rng).unwrap();
        let lp = policy.log_prob_of(&s, &sample.action).unwrap();
        for (a, b) in sample.log_prob.iter().zip(&lp) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(sample.action.as_slice().iter().all(|a| a.abs() < 1.0));
    }

    #[test]
    fn zero_trunk_acts_with_zero() {
        let policy = SquashedGaussianPolicy::from_trunk(MlpNet::zeros(&[3, 4, 4]).unwrap(), 2).unwrap();
        let s = batch(3, 3, &mut SeedTree::new(4).rng("s"));
        assert!(policy.deterministic_action(&s).unwrap().as_slice().iter().all(|&a| a == 0.0));
        let zero_noise = policy.evaluate_with_noise(&s, &MatrixF64::zeros(3, 2)).unwrap();
        assert_eq!(zero_noise.action, policy.deterministic_action(&s).unwrap());
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let s = crate::diffcore::norm(a).max(crate::diffcore::norm(b));
        if s < 1e-12 {
            0.0
        } else {
            d / s
        }
    }

    fn fd_grad(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..params.len())
            .map(|i| {
                let mut p = params.to_vec();
                p[i] += h;
                let fp = f(&p);
                p[i] -= 2.0 * h;
                (fp - f(&p)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn deterministic_critic_gradient_matches_finite_differences() {
        let mut rng = SeedTree::new(5).rng("fd");
        let policy = SquashedGaussianPolicy::new(3, 2, &[6], &mut rng).unwrap();
        let critics = CriticPair::new(CriticRole::Reward, 3, 2, &[6], &mut rng).unwrap();
        let s = batch(4, 3, &mut rng);
        let objective = |p: &SquashedGaussianPolicy| -> f64 {
            q_min(&critics, &s, &p.deterministic_action(&s).unwrap()).unwrap().iter().sum()
        };
        let eval = policy.deterministic(&s).unwrap();
        let pe = critics.evaluate(&s, &eval.action).unwrap();
        let da = critics.action_grad(&pe, &[1.0; 4]).unwrap();
        let analytic = policy.backward_deterministic(&eval, &da).unwrap();
        let fd = fd_grad(&policy.params_flat(), |p| {
            let mut q = policy.clone();
            q.set_params_flat(p).unwrap();
            objective(&q)
        });
        assert!(rel_err(&analytic, &fd) <= 1e-5);
    }

    #[test]
    fn reparameterised_gradient_matches_finite_differences() {
        let mut rng = SeedTree::new(6).rng("fd");
        let policy = SquashedGaussianPolicy::new(3, 2, &[5], &mut rng).unwrap();
        let critics = CriticPair::new(CriticRole::Safety, 3, 2, &[5], &mut rng).unwrap();
        let s = batch(5, 3, &mut rng);
        let noise = policy.draw_noise(5, &mut rng);
        let alpha = 0.3;
        let objective = |p: &SquashedGaussianPolicy| -> f64 {
            let smp = p.evaluate_with_noise(&s, &noise).unwrap();
            let q = q_max(&critics, &s, &smp.action).unwrap();
            q.iter().zip(&smp.log_prob).map(|(q, l)| q - alpha * l).sum::<f64>() / 5.0
        };
        let smp = policy.evaluate_with_noise(&s, &noise).unwrap();
        let pe = critics.evaluate(&s, &smp.action).unwrap();
        let da = critics.action_grad(&pe, &[0.2; 5]).unwrap();
        let analytic = policy.backward_sample(&smp, &da, &[-alpha / 5.0; 5]).unwrap();
        let fd = fd_grad(&policy.params_flat(), |p| {
            let mut q = policy.clone();
            q.set_params_flat(p).unwrap();
            objective(&q)
        });
        assert!(rel_err(&analytic, &fd) <= 1e-4, "{}", rel_err(&analytic, &fd));
    }

    #[test]
    fn pessimistic_combination_by_role() {
        let mut rng = SeedTree::new(7).rng("q");
        let reward = CriticPair::new(CriticRole::Reward, 2, 1, &[4], &mut rng).unwrap();
        let safety = CriticPair::new(CriticRole::Safety, 2, 1, &[4], &mut rng).unwrap();
        let s = batch(20, 2, &mut rng);
        let a = batch(20, 1, &mut rng);
        let input = MatrixF64::hcat(&s, &a).unwrap();
        let lo = q_min(&reward, &s, &a).unwrap();
        let r1 = reward.q1.forward(&input).unwrap();
        let r2 = reward.q2.forward(&input).unwrap();
        for n in 0..20 {
            assert_eq!(lo[n], r1.get(n, 0).min(r2.get(n, 0)));
        }
        let hi = q_max(&safety, &s, &a).unwrap();
        let c1 = safety.q1.forward(&input).unwrap();
        let c2 = safety.q2.forward(&input).unwrap();
        for n in 0..20 {
            assert_eq!(hi[n], c1.get(n, 0).max(c2.get(n, 0)));
        }
        assert!(matches!(q_min(&safety, &s, &a), Err(Error::Contract(_))));
        assert!(matches!(q_max(&reward, &s, &a), Err(Error::Contract(_))));
    }

    fn constant_net(value: f64) -> MlpNet {
        let mut net = MlpNet::zeros(&[2, 1]).unwrap();
        net.biases_mut()[0].set(0, 0, value);
        net
    }

    #[test]
    fn fixed_values_pick_the_right_twin() {
        let reward = CriticPair::from_nets(CriticRole::Reward, 1, constant_net(0.2), constant_net(0.7)).unwrap();
        let safety = CriticPair::from_nets(CriticRole::Safety, 1, constant_net(0.2), constant_net(0.7)).unwrap();
        let s = MatrixF64::zeros(1, 1);
        assert_eq!(q_min(&reward, &s, &s).unwrap(), vec![0.2]);
        assert_eq!(q_max(&safety, &s, &s).unwrap(), vec![0.7]);
        let same = CriticPair::from_nets(CriticRole::Reward, 1, constant_net(0.4), constant_net(0.4)).unwrap();
        assert_eq!(q_min(&same, &s, &s).unwrap(), vec![0.4]);
    }

    #[test]
    fn polyak_substitution_and_copy() {
        let source = CriticPair::from_nets(CriticRole::Reward, 1, constant_net(1.0), constant_net(1.0)).unwrap();
        let zero = CriticPair::from_nets(CriticRole::Reward, 1, constant_net(0.0), constant_net(0.0)).unwrap();
        let mut target = TargetPair::from_source(&zero);
        polyak_update(&mut target, &source, 0.005).unwrap();
        assert!((target.pair().q1.biases()[0].get(0, 0) - 0.005).abs() < 1e-15);
        polyak_update(&mut target, &source, 1.0).unwrap();
        assert_eq!(target.pair(), &source);
        assert!(polyak_update(&mut target, &source, 0.0).is_err());
        assert!(polyak_update(&mut target, &source, 1.5).is_err());
    }

    #[test]
    fn polyak_converges_geometrically() {
        let mut rng = SeedTree::new(8).rng("q");
        let source = CriticPair::new(CriticRole::Safety, 2, 1, &[3], &mut rng).unwrap();
        let init = CriticPair::new(CriticRole::Safety, 2, 1, &[3], &mut rng).unwrap();
        let mut target = TargetPair::from_source(&init);
        let tau = 0.1;
        let p0 = init.q1.params_flat();
        let w = source.q1.params_flat();
        for k in 1..=30 {
            polyak_update(&mut target, &source, tau).unwrap();
            let pk = target.pair().q1.params_flat();
            for i in 0..w.len() {
                let expected = (1.0 - tau).powi(k) * (p0[i] - w[i]).abs();
                assert!(((pk[i] - w[i]).abs() - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regression_reduces_loss() {
        let mut rng = SeedTree::new(9).rng("r");
        let mut critics = CriticPair::new(CriticRole::Reward, 2, 1, &[16], &mut rng).unwrap();
        let s = batch(32, 2, &mut rng);
        let a = batch(32, 1, &mut rng);
        let y: Vec<f64> = (0..32).map(|n| s.get(n, 0) - 2.0 * a.get(n, 0)).collect();
        let (mut o1, mut o2) = (OptState::sgd(0.1), OptState::sgd(0.1));
        let first = critics.regress(&s, &a, &y, &mut o1, &mut o2).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = critics.regress(&s, &a, &y, &mut o1, &mut o2).unwrap();
        }
        assert!(last < 0.1 * first, "{first} -> {last}");
    }
}
