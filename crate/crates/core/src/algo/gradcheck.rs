//! Finite-difference verification of every analytic gradient used by the learner.
//!
//! Runs on tiny random networks with plain SGD inner steps, where the closed forms are
//! exact. Each quantity becomes one report row; failures are rows, not errors.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng as _;

use super::inner::{actor_direction, combine, ActorForm, InnerEval};
use super::meta::{alpha_meta_gradient, eps_meta_gradient, j_alpha_value, j_eps_value, j_nl_value, DetEval, OuterEval, EPS_META_COEFF};
use crate::diffcore::{norm, MatrixF64, MlpNet};
use crate::models::{q_max, q_min, CriticPair, CriticRole, SquashedGaussianPolicy};
use crate::rng::SeedTree;
use crate::{Error, Result};

/// Deliberate corruptions used to confirm that the harness catches errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Flip the sign of the `−3` coefficient of the ε meta-gradient.
    EpsCoeff,
}

impl FromStr for Mutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps_coeff" => Ok(Mutation::EpsCoeff),
            other => Err(Error::Config(format!("unknown mutation `{other}` (expected eps_coeff)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub beta_nu: f64,
    pub beta_phi: f64,
    pub beta_eps: f64,
    pub nu: f64,
    pub eps: f64,
    pub alpha: f64,
    /// Central-difference step.
    pub h: f64,
    pub tolerance: f64,
    /// All networks start at zero instead of random weights.
    pub zero_nets: bool,
    pub mutation: Option<Mutation>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            state_dim: 3,
            action_dim: 2,
            hidden: vec![4, 4],
            batch: 8,
            beta_nu: 0.05,
            beta_phi: 0.05,
            beta_eps: 0.05,
            nu: 1.5,
            eps: 0.3,
            alpha: 0.2,
            h: 1e-6,
            tolerance: 1e-3,
            zero_nets: false,
            mutation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub quantity: &'static str,
    /// The value for scalar quantities, the Euclidean norm for vectors.
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, quantity: &str) -> Option<&GradcheckRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        let mut out = format!("gradcheck seed {}\n", self.seed);
        let _ = writeln!(out, "{:<20} {:>14} {:>14} {:>10}  result", "quantity", "analytic", "fd", "rel_err");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<20} {:>14.6e} {:>14.6e} {:>10.2e}  {}",
                r.quantity,
                r.analytic,
                r.fd,
                r.rel_err,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        out
    }

    /// Comma-separated rows under the header `quantity,analytic,fd,rel_err,pass`.
    pub fn delimited(&self, with_header: bool) -> String {
        let mut out = String::new();
        if with_header {
            out.push_str("seed,quantity,analytic,fd,rel_err,pass\n");
        }
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:e},{:e},{:e},{}", self.seed, r.quantity, r.analytic, r.fd, r.rel_err, r.pass);
        }
        out
    }
}

/// Below this magnitude both sides count as zero.
const ABS_FLOOR: f64 = 1e-9;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both are negligible.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = norm(a).max(norm(b));
    if scale <= ABS_FLOOR {
        return 0.0;
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / scale
}

struct Instance {
    policy: SquashedGaussianPolicy,
    reward: CriticPair,
    safety: CriticPair,
    s: MatrixF64,
    noise: MatrixF64,
    s_prime: MatrixF64,
    noise_prime: MatrixF64,
    s0: MatrixF64,
}

impl Instance {
    fn new(cfg: &GradcheckConfig) -> Result<Self> {
        let tree = SeedTree::new(cfg.seed);
        let (sd, ad) = (cfg.state_dim, cfg.action_dim);
        let mut pol_dims = vec![sd];
        pol_dims.extend(&cfg.hidden);
        pol_dims.push(2 * ad);
        let mut q_dims = vec![sd + ad];
        q_dims.extend(&cfg.hidden);
        q_dims.push(1);
        let (policy, reward, safety) = if cfg.zero_nets {
            let q = MlpNet::zeros(&q_dims)?;
            (
                SquashedGaussianPolicy::from_trunk(MlpNet::zeros(&pol_dims)?, ad)?,
                CriticPair::from_nets(CriticRole::Reward, sd, q.clone(), q.clone())?,
                CriticPair::from_nets(CriticRole::Safety, sd, q.clone(), q)?,
            )
        } else {
            let mut rng = tree.rng("nets");
            (
                SquashedGaussianPolicy::new(sd, ad, &cfg.hidden, &mut rng)?,
                CriticPair::new(CriticRole::Reward, sd, ad, &cfg.hidden, &mut rng)?,
                CriticPair::new(CriticRole::Safety, sd, ad, &cfg.hidden, &mut rng)?,
            )
        };
        let mut data = tree.rng("data");
        let mut states = |rows: usize| {
            let v = (0..rows * sd).map(|_| data.random_range(-1.0..1.0)).collect();
            MatrixF64::from_vec(rows, sd, v)
        };
        let (s, s_prime, s0) = (states(cfg.batch)?, states(cfg.batch)?, states(cfg.batch)?);
        let mut noise_rng = tree.rng("noise");
        let noise = policy.draw_noise(cfg.batch, &mut noise_rng);
        let noise_prime = policy.draw_noise(cfg.batch, &mut noise_rng);
        Ok(Self {
            policy,
            reward,
            safety,
            s,
            noise,
            s_prime,
            noise_prime,
            s0,
        })
    }

    fn with_params(&self, flat: &[f64]) -> Result<SquashedGaussianPolicy> {
        let mut p = self.policy.clone();
        p.set_params_flat(flat)?;
        Ok(p)
    }

    /// Batch means of `(Q_r, Q_c, log π)` at sampled actions of `policy` on `B`.
    fn means(&self, policy: &SquashedGaussianPolicy) -> Result<(f64, f64, f64)> {
        let smp = policy.evaluate_with_noise(&self.s, &self.noise)?;
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok((
            m(&q_min(&self.reward, &self.s, &smp.action)?),
            m(&q_max(&self.safety, &self.s, &smp.action)?),
            m(&smp.log_prob),
        ))
    }
}

fn central(h: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    Ok((f(h)? - f(-h)?) / (2.0 * h))
}

fn central_vec(x: &[f64], h: f64, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut p = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let up = f(&p)?;
        p[i] = x[i] - h;
        let down = f(&p)?;
        p[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Runs every check on one seeded instance.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let inst = Instance::new(cfg)?;
    let (h, nu, eps, alpha) = (cfg.h, cfg.nu, cfg.eps, cfg.alpha);
    let (bn, bp) = (cfg.beta_nu, cfg.beta_phi);
    let coeff = match cfg.mutation {
        Some(Mutation::EpsCoeff) => -EPS_META_COEFF,
        None => EPS_META_COEFF,
    };
    let phi = inst.policy.params_flat();
    let inner = InnerEval::compute(&inst.policy, &inst.reward, &inst.safety, &inst.s, &inst.noise)?;
    let qc_bar = inner.qc_mean();
    let nu_of = |e: f64| (nu + bn * (qc_bar - e)).max(0.0);
    let nu_prime = nu_of(eps);

    let mut rows = Vec::new();
    let mut push = |quantity: &'static str, analytic: &[f64], fd: &[f64]| {
        let rel_err = relative_error(analytic, fd);
        let scalar = |v: &[f64]| if v.len() == 1 { v[0] } else { norm(v) };
        rows.push(GradcheckRow {
            quantity,
            analytic: scalar(analytic),
            fd: scalar(fd),
            rel_err,
            pass: rel_err <= cfg.tolerance,
        });
    };

    // ν: ∇_ν J_ν = ε − mean Q_c, with J_ν the Lagrangian as a function of ν.
    let fd = central(h, |d| Ok(inner.lagrangian(nu + d, eps, alpha)))?;
    push("nu_J_nu", &[eps - qc_bar], &[fd]);

    // φ: ascent direction of the Lagrangian with ν' as a value.
    let analytic = actor_direction(&inst.policy, &inner, ActorForm::Value, nu_prime, alpha)?;
    let fd = central_vec(&phi, h, |p| {
        let (qr, qc, lp) = inst.means(&inst.with_params(p)?)?;
        Ok(qr - nu_prime * (qc - eps) - alpha * lp)
    })?;
    push("phi_L", &analytic, &fd);

    // φ with ν'(φ) expanded inside the loss.
    let analytic = actor_direction(&inst.policy, &inner, ActorForm::Expanded { nu, beta_nu: bn, eps }, nu_prime, alpha)?;
    let fd = central_vec(&phi, h, |p| {
        let (qr, qc, lp) = inst.means(&inst.with_params(p)?)?;
        let nu_p = nu + bn * (qc - eps);
        Ok(qr - nu_p * (qc - eps) - alpha * lp)
    })?;
    push("phi_L_expanded", &analytic, &fd);

    // ε: inner map whose ε-derivative is 3·β_ν·β_φ·g_c, the chain behind the closed form.
    let phi_of_eps = |e: f64| -> Result<SquashedGaussianPolicy> {
        let factor = 2.0 * bn * (qc_bar - e) + nu_of(e);
        let dir = combine(&combine(&inner.g_r, -factor, &inner.g_c), -alpha, &inner.g_lp);
        inst.with_params(&combine(&phi, bp, &dir))
    };
    let outer_at = |p: &SquashedGaussianPolicy| OuterEval::compute(p, &inst.reward, &inst.safety, &inst.s_prime, &inst.noise_prime);
    let pol_eps = phi_of_eps(eps)?;
    let outer = outer_at(&pol_eps)?;
    let grad_j = outer.grad_j_eps(&pol_eps, &inst.reward, &inst.safety, nu_prime)?;
    let g_eps = eps_meta_gradient(coeff, bn, bp, &inner.g_c, &grad_j);
    // ν' inside J_ε stays at its unperturbed value; only φ'(ε) moves.
    let fd = central(h, |d| Ok(j_eps_value(&outer_at(&phi_of_eps(eps + d)?)?, nu_prime)))?;
    push("eps_J_eps", &[g_eps], &[fd]);

    let grad_nl = outer.grad_j_nl(&pol_eps, &inst.reward, &inst.safety)?;
    let g_nl = eps_meta_gradient(coeff, bn, bp, &inner.g_c, &grad_nl);
    let fd = central(h, |d| Ok(j_nl_value(&outer_at(&phi_of_eps(eps + d)?)?)))?;
    push("eps_J_nl", &[g_nl], &[fd]);

    // α: value-form inner step, φ'(α) = φ + β_φ·(g_r − ν'·g_c − α·g_lp).
    let phi_of_alpha = |a: f64| -> Vec<f64> {
        let dir = combine(&combine(&inner.g_r, -nu_prime, &inner.g_c), -a, &inner.g_lp);
        combine(&phi, bp, &dir)
    };
    let analytic: Vec<f64> = inner.g_lp.iter().map(|g| -bp * g).collect();
    let (up, down) = (phi_of_alpha(alpha + h), phi_of_alpha(alpha - h));
    let fd: Vec<f64> = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect();
    push("alpha_phi_prime", &analytic, &fd);

    let eps_prime = (eps + cfg.beta_eps * g_eps).clamp(0.01, 1.0);
    let phi_prime = phi_of_alpha(alpha);
    let pol_prime = inst.with_params(&phi_prime)?;
    let det = DetEval::compute(&pol_prime, &inst.reward, &inst.safety, &inst.s0)?;
    let j_alpha_at = |p: &[f64]| -> Result<f64> {
        let det = DetEval::compute(&inst.with_params(p)?, &inst.reward, &inst.safety, &inst.s0)?;
        Ok(j_alpha_value(&det, nu_prime, eps_prime))
    };
    let analytic = det.grad_j_alpha(&pol_prime, nu_prime)?;
    let fd = central_vec(&phi_prime, h, j_alpha_at)?;
    push("phi_prime_J_alpha", &analytic, &fd);

    let g_alpha = alpha_meta_gradient(bp, &inner.g_lp, &pol_prime, &det, nu_prime)?;
    let fd = central(h, |d| j_alpha_at(&phi_of_alpha(alpha + d)))?;
    push("alpha_J_alpha", &[g_alpha], &[fd]);

    Ok(GradcheckReport { seed: cfg.seed, rows })
}

/// `trials` independent instances with seeds derived from `cfg.seed`.
pub fn gradcheck_trials(cfg: &GradcheckConfig, trials: usize) -> Result<Vec<GradcheckReport>> {
    let tree = SeedTree::new(cfg.seed);
    (0..trials)
        .map(|k| {
            let seed = if trials == 1 { cfg.seed } else { tree.subtree(&format!("trial-{k}")).root() };
            gradcheck(&GradcheckConfig { seed, ..cfg.clone() })
        })
        .collect()
}
