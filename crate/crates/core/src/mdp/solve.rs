//! Exact policy evaluation by direct linear solves.

use super::TabularMdp;
use crate::error::{invalid_arg, Error, Result};
use crate::policy::{entropy, DeterministicPolicy, Policy, TabularPolicy};
use nalgebra::{DMatrix, DVector};

/// Residual above which a solve is reported as a numerical failure.
const SOLVE_GUARD: f64 = 1e-8;

/// Hard values of a policy: `V` per state, `Q` and `A = Q - V` per state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    num_actions: usize,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
}

impl ValueTable {
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn a_row(&self, s: usize) -> &[f64] {
        &self.a[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// `max_s |V(s) - sum_a pi(a|s) (r(s,a) + gamma E[V(s')])|`.
    pub fn bellman_residual<P: Policy + ?Sized>(&self, mdp: &TabularMdp, policy: &P) -> f64 {
        (0..mdp.num_states())
            .map(|s| {
                let probs = policy.probs(s);
                let backup: f64 = (0..mdp.num_actions())
                    .map(|a| {
                        let next: f64 =
                            mdp.transitions(s, a).iter().map(|(n, p)| p * self.v[*n]).sum();
                        probs[a] * (mdp.reward(s, a) + mdp.gamma() * next)
                    })
                    .sum();
                (self.v[s] - backup).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Max-entropy evaluation of a strictly positive policy at temperature `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftValues {
    num_actions: usize,
    pub beta: f64,
    pub q_soft: Vec<f64>,
    pub v_soft: Vec<f64>,
    /// Policy entropy per state.
    pub entropy: Vec<f64>,
    /// Entropy bonus `gamma * beta * E[H(pi(.|s'))]` per state-action pair.
    pub f: Vec<f64>,
}

impl SoftValues {
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q_soft[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Soft advantage `Q_soft(s, .) - V_soft(s)`.
    pub fn advantage_row(&self, s: usize) -> Vec<f64> {
        self.q_row(s).iter().map(|q| q - self.v_soft[s]).collect()
    }
}

fn check_shape<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P) -> Result<()> {
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(invalid_arg(format!(
            "policy shape {}x{} does not match MDP {}x{}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

/// Solves `(I - gamma P^pi) x = rhs` over states.
fn solve_state_system<P: Policy + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = mdp.num_states();
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        let probs = policy.probs(s);
        for a in 0..mdp.num_actions() {
            if probs[a] == 0.0 {
                continue;
            }
            for &(next, p) in mdp.transitions(s, a) {
                m[(s, next)] -= mdp.gamma() * probs[a] * p;
            }
        }
    }
    let x = m
        .clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::NumericalFailure("singular evaluation system".into()))?;
    let residual = (&m * &x - rhs).amax();
    if !(residual <= SOLVE_GUARD * (1.0 + rhs.amax())) {
        return Err(Error::NumericalFailure(format!("evaluation residual {residual:e}")));
    }
    Ok(x)
}

fn one_step_backup(mdp: &TabularMdp, values: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(mdp.num_states() * mdp.num_actions());
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let next: f64 = mdp.transitions(s, a).iter().map(|(n, p)| p * values[*n]).sum();
            q.push(mdp.reward(s, a) + mdp.gamma() * next);
        }
    }
    q
}

/// Exact `V`, `Q` and `A` of `policy` from the linear system `(I - gamma P^pi) V = R^pi`.
/// Uses the standard advantage convention `A = r + gamma E[V(s')] - V(s)`.
pub fn exact_value<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P) -> Result<ValueTable> {
    check_shape(mdp, policy)?;
    let n = mdp.num_states();
    let rhs = DVector::from_iterator(
        n,
        (0..n).map(|s| {
            let probs = policy.probs(s);
            (0..mdp.num_actions()).map(|a| probs[a] * mdp.reward(s, a)).sum::<f64>()
        }),
    );
    let v: Vec<f64> = solve_state_system(mdp, policy, &rhs)?.iter().copied().collect();
    let q = one_step_backup(mdp, &v);
    let na = mdp.num_actions();
    let a = q.iter().enumerate().map(|(i, q)| q - v[i / na]).collect();
    Ok(ValueTable { num_actions: na, v, q, a })
}

/// Soft (max-entropy) evaluation. `V_soft = (I - gamma P^pi)^-1 (R^pi + beta H)` over states,
/// then `Q_soft = r + gamma E[V_soft(s')]`, which is the solution of the state-action system
/// `Q_soft = (I - gamma P^pi_sa)^-1 (r + f)`.
pub fn soft_evaluate(mdp: &TabularMdp, policy: &TabularPolicy, beta: f64) -> Result<SoftValues> {
    check_shape(mdp, policy)?;
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid_arg(format!("beta must be positive, got {beta}")));
    }
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let ent: Vec<f64> = (0..n).map(|s| entropy(policy.probs_row(s))).collect();
    let rhs = DVector::from_iterator(
        n,
        (0..n).map(|s| {
            let probs = policy.probs_row(s);
            (0..na).map(|a| probs[a] * mdp.reward(s, a)).sum::<f64>() + beta * ent[s]
        }),
    );
    let v_soft: Vec<f64> = solve_state_system(mdp, policy, &rhs)?.iter().copied().collect();
    let q_soft = one_step_backup(mdp, &v_soft);
    let f = (0..n * na)
        .map(|i| {
            let (s, a) = (i / na, i % na);
            mdp.gamma() * beta * mdp.transitions(s, a).iter().map(|(n, p)| p * ent[*n]).sum::<f64>()
        })
        .collect();
    Ok(SoftValues { num_actions: na, beta, q_soft, v_soft, entropy: ent, f })
}

/// The state-action matrix `I - gamma P^pi_sa`, with
/// `P^pi_sa[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')`, indexed `s * num_actions + a`.
pub fn soft_q_linear_system(mdp: &TabularMdp, policy: &TabularPolicy) -> DMatrix<f64> {
    let na = mdp.num_actions();
    let n = mdp.num_states() * na;
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..mdp.num_states() {
        for a in 0..na {
            for &(next, p) in mdp.transitions(s, a) {
                let probs = policy.probs_row(next);
                for (a2, pa2) in probs.iter().enumerate() {
                    m[(s * na + a, next * na + a2)] -= mdp.gamma() * p * pa2;
                }
            }
        }
    }
    m
}

/// Optimal deterministic policy by value iteration; ties go to the lowest action index.
pub fn optimal_policy(mdp: &TabularMdp) -> Result<DeterministicPolicy> {
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let mut v = vec![0.0; n];
    for _ in 0..100_000 {
        let q = one_step_backup(mdp, &v);
        let next: Vec<f64> =
            q.chunks(na).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    let q = one_step_backup(mdp, &v);
    let actions = q
        .chunks(na)
        .map(|row| {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter().position(|x| *x >= best - 1e-12).unwrap_or(0)
        })
        .collect();
    DeterministicPolicy::new(na, actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_key_door, KeyDoorState, MdpParts};

    fn bandit(gamma: f64) -> TabularMdp {
        // One live state with two actions that both end the episode, plus the terminal.
        TabularMdp::new(MdpParts {
            num_states: 2,
            num_actions: 2,
            transitions: vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![(1, 1.0)], vec![(1, 1.0)]],
            rewards: vec![1.0, 0.5, 0.0, 0.0],
            gamma,
            rho0: vec![1.0, 0.0],
            terminal: vec![false, true],
            horizon: 10,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_discount_is_expected_reward() {
        let mdp = bandit(0.0);
        let pi = TabularPolicy::from_distributions(&[vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
        let vt = exact_value(&mdp, &pi).unwrap();
        assert!((vt.v[0] - (0.3 * 1.0 + 0.7 * 0.5)).abs() < 1e-15);
        assert_eq!(vt.v[1], 0.0);
    }

    #[test]
    fn optimal_key_door_value_is_geometric() {
        let mdp = build_key_door(10, 0.9).unwrap();
        let opt = optimal_policy(&mdp).unwrap();
        let vt = exact_value(&mdp, &opt).unwrap();
        let far = KeyDoorState { position: 9, has_key: false }.index(10);
        assert!((vt.v[far] - 0.9f64.powi(19)).abs() < 1e-12);
        assert!((vt.v[far] - 0.13509).abs() < 1e-5);
        assert!(vt.bellman_residual(&mdp, &opt) < 1e-10);
    }

    #[test]
    fn advantages_center_under_policy() {
        let mdp = build_key_door(6, 0.9).unwrap();
        let pi = TabularPolicy::new(
            mdp.num_states(),
            4,
            (0..mdp.num_states() * 4).map(|i| ((i * 7) % 5) as f64 * 0.3).collect(),
        )
        .unwrap();
        let vt = exact_value(&mdp, &pi).unwrap();
        assert!(vt.bellman_residual(&mdp, &pi) < 1e-10);
        for s in 0..mdp.num_states() {
            let mean: f64 = pi.probs_row(s).iter().zip(vt.a_row(s)).map(|(p, a)| p * a).sum();
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn pure_entropy_bonus() {
        let mdp = TabularMdp::new(MdpParts {
            num_states: 1,
            num_actions: 2,
            transitions: vec![vec![(0, 1.0)], vec![(0, 1.0)]],
            rewards: vec![0.0, 0.0],
            gamma: 0.0,
            rho0: vec![1.0],
            terminal: vec![false],
            horizon: 1,
            ..Default::default()
        })
        .unwrap();
        let pi = TabularPolicy::uniform(1, 2);
        let beta = 0.7;
        let sv = soft_evaluate(&mdp, &pi, beta).unwrap();
        assert!((sv.v_soft[0] - beta * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn soft_identities_hold() {
        let mdp = build_key_door(4, 0.9).unwrap();
        let pi = TabularPolicy::new(
            mdp.num_states(),
            4,
            (0..mdp.num_states() * 4).map(|i| ((i * 5) % 7) as f64 * 0.2 - 0.5).collect(),
        )
        .unwrap();
        let beta = 0.8;
        let sv = soft_evaluate(&mdp, &pi, beta).unwrap();
        // Expected soft advantage is minus the scaled entropy.
        for s in 0..mdp.num_states() {
            let adv = sv.advantage_row(s);
            let mean: f64 = pi.probs_row(s).iter().zip(&adv).map(|(p, a)| p * a).sum();
            assert!((mean + beta * sv.entropy[s]).abs() < 1e-10);
            let v_check: f64 = pi
                .probs_row(s)
                .iter()
                .zip(sv.q_row(s))
                .map(|(p, q)| p * (q - beta * p.ln()))
                .sum();
            assert!((v_check - sv.v_soft[s]).abs() < 1e-10);
        }
        // The state-action system reproduces Q_soft.
        let m = soft_q_linear_system(&mdp, &pi);
        let na = mdp.num_actions();
        let rhs = DVector::from_iterator(
            sv.q_soft.len(),
            (0..sv.q_soft.len()).map(|i| mdp.reward(i / na, i % na) + sv.f[i]),
        );
        let q = DVector::from_vec(sv.q_soft.clone());
        assert!((&m * &q - rhs).amax() < 1e-10);
    }

    #[test]
    fn small_temperature_approaches_hard_values() {
        let mdp = build_key_door(4, 0.9).unwrap();
        let pi = TabularPolicy::uniform(mdp.num_states(), 4);
        let sv = soft_evaluate(&mdp, &pi, 1e-6).unwrap();
        let vt = exact_value(&mdp, &pi).unwrap();
        for s in 0..mdp.num_states() {
            assert!((sv.v_soft[s] - vt.v[s]).abs() < 1e-4);
        }
    }

    #[test]
    fn soft_rejects_bad_beta() {
        let mdp = build_key_door(3, 0.9).unwrap();
        let pi = TabularPolicy::uniform(mdp.num_states(), 4);
        assert!(matches!(soft_evaluate(&mdp, &pi, 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mdp = build_key_door(3, 0.9).unwrap();
        let pi = TabularPolicy::uniform(2, 4);
        assert!(exact_value(&mdp, &pi).is_err());
    }
}
