//! Reward recovery: for any pair of strictly positive policies there is a reward under which
//! `beta log(pi'/pi0)` is the soft advantage of `pi0` up to a per-state constant.

use crate::error::{invalid_arg, Error, Result};
use crate::mdp::{soft_evaluate, soft_q_linear_system, TabularMdp};
use crate::policy::{entropy, Policy, TabularPolicy};
use nalgebra::{DMatrix, DVector};

/// Residual above which the system is reported inconsistent.
const CONSISTENCY_TOL: f64 = 1e-6;

/// The system `C x = b` with `x = r + f` and its solution.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub num_actions: usize,
    /// `(I - Pi0)(I - gamma P^pi0_sa)^-1`.
    pub c: DMatrix<f64>,
    /// Soft-centered advantage plus `g`.
    pub b: DVector<f64>,
    /// Block-diagonal row operation: per state, identity with the first row set to `pi0(.|s)`.
    pub d: DMatrix<f64>,
    /// `beta H(pi0(.|s))` per state-action pair.
    pub g: DVector<f64>,
    /// Entropy bonus `gamma beta E[H(pi0(.|s'))]` per state-action pair.
    pub f: DVector<f64>,
    pub recovered_r: Vec<f64>,
    /// `max |C x - b|`.
    pub residual: f64,
    /// Largest spread over actions, per state, of `A_soft - beta log(pi'/pi0)` under the
    /// recovered reward.
    pub advantage_deviation: f64,
}

impl LinearSystem {
    /// Rows `s * num_actions` of `D C` and `D b` should vanish; returns their largest entry.
    pub fn designated_rows_max(&self) -> f64 {
        let dc = &self.d * &self.c;
        let db = &self.d * &self.b;
        let mut worst: f64 = 0.0;
        for row in (0..dc.nrows()).step_by(self.num_actions) {
            worst = worst.max(dc.row(row).amax()).max(db[row].abs());
        }
        worst
    }
}

/// Builds and solves the recovery system with a minimum-norm least-squares solve, then checks
/// the recovered reward with an independent soft evaluation.
pub fn recover_reward(
    mdp: &TabularMdp,
    pi0: &TabularPolicy,
    pi_prime: &TabularPolicy,
    beta: f64,
) -> Result<LinearSystem> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    for pi in [pi0, pi_prime] {
        if pi.num_states() != ns || pi.num_actions() != na {
            return Err(invalid_arg("policy shape does not match the MDP"));
        }
    }
    let soft0 = soft_evaluate(mdp, pi0, beta)?;
    let n = ns * na;
    let log_ratio = |s: usize| -> Vec<f64> {
        pi_prime.log_probs_row(s).iter().zip(pi0.log_probs_row(s)).map(|(a, b)| a - b).collect()
    };

    let mut pi_block = DMatrix::<f64>::zeros(n, n);
    let mut d = DMatrix::<f64>::identity(n, n);
    let mut g = DVector::<f64>::zeros(n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..ns {
        let p = pi0.probs_row(s);
        let h = entropy(p);
        let lr = log_ratio(s);
        let mean: f64 = p.iter().zip(&lr).map(|(x, l)| x * l).sum();
        for a in 0..na {
            let i = s * na + a;
            for (a2, p2) in p.iter().enumerate() {
                pi_block[(i, s * na + a2)] = *p2;
                d[(s * na, s * na + a2)] = *p2;
            }
            g[i] = beta * h;
            // A = beta (lr - mean) - beta H, so A + g has zero pi0-mean.
            b[i] = beta * (lr[a] - mean);
        }
    }

    let m = soft_q_linear_system(mdp, pi0);
    let m_inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("singular state-action evaluation system".into()))?;
    let c = (DMatrix::<f64>::identity(n, n) - pi_block) * m_inv;
    // b has zero pi0-mean per state, so (I - Pi0) b = b and x0 = M b solves C x = b. The null
    // space of C is M E, with E broadcasting one constant per state; removing that component
    // gives the minimum-norm solution.
    let x0 = &m * &b;
    let mut e = DMatrix::<f64>::zeros(n, ns);
    for i in 0..n {
        e[(i, i / na)] = 1.0;
    }
    let null = &m * e;
    let coef = (null.transpose() * &null)
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("degenerate null-space basis".into()))?
        .solve(&(null.transpose() * &x0));
    let x = x0 - null * coef;
    let residual = (&c * &x - &b).amax();
    if !(residual <= CONSISTENCY_TOL) {
        return Err(Error::ConsistencyFailure { residual, tolerance: CONSISTENCY_TOL });
    }
    let f = DVector::from_vec(soft0.f.clone());
    let recovered_r: Vec<f64> = (&x - &f).iter().copied().collect();

    // Terminal flags are cleared so the check can assign reward anywhere.
    let mut parts = mdp.to_parts();
    parts.rewards = recovered_r.clone();
    parts.terminal = vec![false; ns];
    let check = soft_evaluate(&TabularMdp::new(parts)?, pi0, beta)?;
    let mut advantage_deviation: f64 = 0.0;
    for s in 0..ns {
        let diff: Vec<f64> =
            check.advantage_row(s).iter().zip(log_ratio(s)).map(|(a, l)| a - beta * l).collect();
        let hi = diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = diff.iter().copied().fold(f64::INFINITY, f64::min);
        advantage_deviation = advantage_deviation.max(hi - lo);
    }

    Ok(LinearSystem { num_actions: na, c, b, d, g, f, recovered_r, residual, advantage_deviation })
}
