//! Advantage estimators, the induced-policy error metric, critical-state scores and the
//! Monte Carlo value-difference baseline.

mod recover;

pub use recover::{recover_reward, LinearSystem};

use crate::error::{invalid_arg, Result};
use crate::mdp::{exact_value, return_to_go, rollout, Start, TabularMdp, Trajectory, ValueTable};
use crate::policy::{check_distribution, entropy, kl_update, per_state_kl, Policy, TabularPolicy};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-state additive constant applied to log-ratio advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    None,
    /// `sum_a pi0(a|s) A(s,a) = 0`.
    #[default]
    ZeroMean,
    /// `sum_a pi0(a|s) A(s,a) = -beta H(pi0(.|s))`.
    SoftEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub a_hat: Vec<f64>,
    /// Samples pooled at this state.
    pub n: usize,
    /// Per-sample advantage rows, when retained.
    pub samples: Option<Vec<Vec<f64>>>,
}

/// Advantage estimates over a set of covered states.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate {
    pub num_actions: usize,
    pub centering: Centering,
    pub states: BTreeMap<usize, StateEstimate>,
}

impl AdvantageEstimate {
    pub fn new(num_actions: usize, centering: Centering) -> Self {
        Self { num_actions, centering, states: BTreeMap::new() }
    }

    pub fn row(&self, s: usize) -> Option<&[f64]> {
        self.states.get(&s).map(|e| e.a_hat.as_slice())
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.states.iter().map(|(s, e)| (*s, e.a_hat.as_slice()))
    }

    /// Adds the states of `other`, replacing any already present.
    pub fn extend(&mut self, other: AdvantageEstimate) {
        self.states.extend(other.states);
    }
}

/// Monte Carlo advantage at `s`: `n` rollouts per action with that action forced first,
/// `Q_hat` the mean discounted return, `V_hat = sum_a pi0(a|s) Q_hat(s,a)`.
/// Consumes `num_actions * n` trajectories.
pub fn mc_advantage<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi0: &TabularPolicy,
    s: usize,
    n: usize,
    rng: &mut R,
) -> Result<AdvantageEstimate> {
    if n == 0 {
        return Err(invalid_arg("mc_advantage needs n >= 1"));
    }
    if s >= mdp.num_states() || mdp.is_terminal(s) {
        return Err(invalid_arg(format!("state {s} is terminal or out of range")));
    }
    let na = mdp.num_actions();
    let mut q_hat = vec![0.0; na];
    for (a, q) in q_hat.iter_mut().enumerate() {
        let mut total = 0.0;
        for _ in 0..n {
            let traj = rollout(mdp, pi0, Start::StateAction(s, a), rng)?;
            total += return_to_go(&traj, mdp.gamma(), 0)?;
        }
        *q = total / n as f64;
    }
    let v_hat: f64 = pi0.probs_row(s).iter().zip(&q_hat).map(|(p, q)| p * q).sum();
    let mut est = AdvantageEstimate::new(na, Centering::ZeroMean);
    est.states.insert(
        s,
        StateEstimate { a_hat: q_hat.iter().map(|q| q - v_hat).collect(), n: n * na, samples: None },
    );
    Ok(est)
}

fn centering_constant(pi0_row: &[f64], log_ratio: &[f64], beta: f64, centering: Centering) -> f64 {
    let mean: f64 = pi0_row.iter().zip(log_ratio).map(|(p, l)| p * l).sum();
    match centering {
        Centering::None => 0.0,
        Centering::ZeroMean => -beta * mean,
        Centering::SoftEntropy => -beta * mean - beta * entropy(pi0_row),
    }
}

/// Log-ratio advantage at `s` pooled over the in-context updated distributions in `updated`:
/// `A_i = beta (log pi'_i - log pi0) + c_i(s)` with `c_i` fixed by `centering`, averaged over
/// samples.
pub fn ricl_advantage(
    pi0: &TabularPolicy,
    updated: &[Vec<f64>],
    s: usize,
    beta: f64,
    centering: Centering,
) -> Result<AdvantageEstimate> {
    if updated.is_empty() {
        return Err(invalid_arg("ricl_advantage needs at least one sample"));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid_arg(format!("beta must be positive, got {beta}")));
    }
    let na = pi0.num_actions();
    pi0.log_prob(s, 0)?;
    let lp0 = pi0.log_probs_row(s);
    let mut samples = Vec::with_capacity(updated.len());
    for p in updated {
        check_distribution(p, na)?;
        let log_ratio: Vec<f64> = p.iter().zip(lp0).map(|(x, l)| x.ln() - l).collect();
        let c = centering_constant(pi0.probs_row(s), &log_ratio, beta, centering);
        samples.push(log_ratio.iter().map(|l| beta * l + c).collect::<Vec<f64>>());
    }
    let mut a_hat = vec![0.0; na];
    for row in &samples {
        a_hat.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    a_hat.iter_mut().for_each(|m| *m /= samples.len() as f64);
    let mut est = AdvantageEstimate::new(na, centering);
    est.states.insert(s, StateEstimate { a_hat, n: updated.len(), samples: Some(samples) });
    Ok(est)
}

/// `pi(a|s) ∝ pi0(a|s) exp(A_hat(s,a) / beta)` at covered states, `pi0` elsewhere.
pub fn induced_policy(pi0: &TabularPolicy, estimate: &AdvantageEstimate, beta: f64) -> Result<TabularPolicy> {
    kl_update(pi0, estimate.rows(), beta)
}

/// Reference policy induced by exact advantages at every state.
pub fn ground_truth_policy(pi0: &TabularPolicy, gt: &ValueTable, beta: f64) -> Result<TabularPolicy> {
    kl_update(pi0, (0..pi0.num_states()).map(|s| (s, gt.a_row(s))), beta)
}

/// `E_{s ~ rho0} KL(method(.|s) || gt(.|s))`.
pub fn estimation_error(method: &TabularPolicy, gt: &TabularPolicy, rho0: &[f64]) -> Result<f64> {
    if method.num_states() != gt.num_states()
        || method.num_actions() != gt.num_actions()
        || rho0.len() != gt.num_states()
    {
        return Err(invalid_arg("policies and rho0 must share one state/action space"));
    }
    let mut e = 0.0;
    for (s, w) in rho0.iter().enumerate() {
        if *w > 0.0 {
            e += w * per_state_kl(method.probs_row(s), gt.probs_row(s))?;
        }
    }
    Ok(e)
}

/// `KL(pi(.|s) || pi0(.|s))` along `states`, divided by its maximum. An all-zero vector is
/// returned as is.
pub fn critical_score(pi: &TabularPolicy, pi0: &TabularPolicy, states: &[usize]) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(invalid_arg("critical_score needs at least one state"));
    }
    let mut scores = Vec::with_capacity(states.len());
    for &s in states {
        pi.log_prob(s, 0)?;
        scores.push(per_state_kl(pi.probs_row(s), pi0.probs_row(s))?);
    }
    Ok(normalize_max(scores))
}

/// Divides by the maximum when it is positive.
pub fn normalize_max(mut xs: Vec<f64>) -> Vec<f64> {
    let max = xs.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        xs.iter_mut().for_each(|x| *x /= max);
    }
    xs
}

/// Step whose action has the largest `|A_gt|`; the earliest wins ties.
pub fn oracle_label(gt: &ValueTable, traj: &Trajectory) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for st in &traj.steps {
        let v = gt.a_row(st.state)[st.action].abs();
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((st.state, v));
        }
    }
    best.map(|(s, _)| s)
}

/// Frequency with which each of `states` was labeled critical across `labels`, one label per
/// trajectory.
pub fn frequency_critical_score(labels: &[usize], states: &[usize]) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(invalid_arg("frequency_critical_score needs at least one trajectory"));
    }
    let m = labels.len() as f64;
    Ok(states.iter().map(|s| labels.iter().filter(|l| *l == s).count() as f64 / m).collect())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid_arg("spearman needs two equal-length samples of size >= 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut vx, mut vy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(invalid_arg("spearman is undefined for a constant sample"));
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEstimate {
    pub delta_hat: f64,
    pub ground_truth_delta: f64,
    /// Rollouts per policy.
    pub n: usize,
}

/// Mean discounted return of `pi_prime` minus that of `pi0`, `n` rollouts each from `s0`.
pub fn delta_estimate<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi0: &TabularPolicy,
    pi_prime: &TabularPolicy,
    s0: usize,
    n: usize,
    rng: &mut R,
) -> Result<DeltaEstimate> {
    if n == 0 {
        return Err(invalid_arg("delta_estimate needs n >= 1"));
    }
    if s0 >= mdp.num_states() || mdp.is_terminal(s0) {
        return Err(invalid_arg(format!("state {s0} is terminal or out of range")));
    }
    let mut mean_return = |pi: &TabularPolicy| -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..n {
            total += rollout(mdp, pi, Start::State(s0), rng)?.discounted_return(mdp.gamma());
        }
        Ok(total / n as f64)
    };
    let delta_hat = mean_return(pi_prime)? - mean_return(pi0)?;
    let ground_truth_delta = exact_value(mdp, pi_prime)?.v[s0] - exact_value(mdp, pi0)?.v[s0];
    Ok(DeltaEstimate { delta_hat, ground_truth_delta, n })
}
