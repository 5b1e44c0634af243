//! Reference computations for the integration tests, written independently of the library's
//! solvers: fixed-point iteration instead of linear solves, brute-force search, direct sums.
#![allow(dead_code)]

use ricl_core::mdp::{MdpParts, TabularMdp};
use ricl_core::policy::{Policy, TabularPolicy};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rows(pi: &TabularPolicy) -> Vec<Vec<f64>> {
    (0..pi.num_states()).map(|s| pi.probs_row(s).to_vec()).collect()
}

fn backup(mdp: &TabularMdp, v: &[f64], s: usize, a: usize) -> f64 {
    mdp.reward(s, a) + mdp.gamma() * mdp.transitions(s, a).iter().map(|(n, p)| p * v[*n]).sum::<f64>()
}

fn iterate(mdp: &TabularMdp, mut update: impl FnMut(&[f64], usize) -> f64) -> Vec<f64> {
    let mut v = vec![0.0; mdp.num_states()];
    for _ in 0..20_000 {
        let next: Vec<f64> =
            (0..mdp.num_states()).map(|s| if mdp.is_terminal(s) { 0.0 } else { update(&v, s) }).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    v
}

/// `(V, Q, A)` of a stochastic policy by repeated Bellman backups.
pub struct Values {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
}

pub fn evaluate(mdp: &TabularMdp, pi: &[Vec<f64>]) -> Values {
    let na = mdp.num_actions();
    let v = iterate(mdp, |v, s| (0..na).map(|a| pi[s][a] * backup(mdp, v, s, a)).sum());
    finish(mdp, v)
}

fn finish(mdp: &TabularMdp, v: Vec<f64>) -> Values {
    let na = mdp.num_actions();
    let q: Vec<Vec<f64>> = (0..mdp.num_states())
        .map(|s| (0..na).map(|a| if mdp.is_terminal(s) { 0.0 } else { backup(mdp, &v, s, a) }).collect())
        .collect();
    let a = q.iter().zip(&v).map(|(row, vs)| row.iter().map(|x| x - vs).collect()).collect();
    Values { v, q, a }
}

/// Soft values with the entropy bonus `beta H(pi(.|s))` paid at every live state. Every state
/// is treated as live, so the recovered-reward check may assign reward anywhere.
pub fn soft_evaluate(mdp: &TabularMdp, pi: &[Vec<f64>], beta: f64) -> Values {
    let na = mdp.num_actions();
    let mut v = vec![0.0; mdp.num_states()];
    for _ in 0..20_000 {
        let next: Vec<f64> = (0..mdp.num_states())
            .map(|s| {
                let h: f64 = pi[s].iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
                (0..na).map(|a| pi[s][a] * backup(mdp, &v, s, a)).sum::<f64>() + beta * h
            })
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    let q: Vec<Vec<f64>> = (0..mdp.num_states()).map(|s| (0..na).map(|a| backup(mdp, &v, s, a)).collect()).collect();
    let a = q.iter().zip(&v).map(|(row, vs)| row.iter().map(|x| x - vs).collect()).collect();
    Values { v, q, a }
}

/// Optimal values by value iteration.
pub fn optimal(mdp: &TabularMdp) -> Values {
    let na = mdp.num_actions();
    let v = iterate(mdp, |v, s| (0..na).map(|a| backup(mdp, v, s, a)).fold(f64::NEG_INFINITY, f64::max));
    finish(mdp, v)
}

/// Probability of reaching a terminal state within the MDP's horizon, by dynamic programming
/// over steps remaining, averaged over the initial distribution.
pub fn success_probability(mdp: &TabularMdp, pi: &[Vec<f64>]) -> f64 {
    let n = mdp.num_states();
    let mut p = vec![0.0; n];
    for _ in 0..mdp.horizon() {
        p = (0..n)
            .map(|s| {
                if mdp.is_terminal(s) {
                    return 1.0;
                }
                (0..mdp.num_actions())
                    .map(|a| pi[s][a] * mdp.transitions(s, a).iter().map(|(x, q)| q * if mdp.is_terminal(*x) { 1.0 } else { p[*x] }).sum::<f64>())
                    .sum()
            })
            .collect();
    }
    mdp.rho0().iter().zip(&p).map(|(r, x)| r * x).sum()
}

/// Shortest number of steps to any terminal state, by breadth-first search over transitions.
pub fn steps_to_terminal(mdp: &TabularMdp) -> Vec<Option<usize>> {
    let n = mdp.num_states();
    let mut dist: Vec<Option<usize>> = (0..n).map(|s| mdp.is_terminal(s).then_some(0)).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            for a in 0..mdp.num_actions() {
                for (x, _) in mdp.transitions(s, a) {
                    if let Some(d) = dist[*x] {
                        if dist[s].is_none_or(|cur| d + 1 < cur) {
                            dist[s] = Some(d + 1);
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            return dist;
        }
    }
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// `pi0 exp(A / beta)`, normalized per state.
pub fn tilt(pi0: &[Vec<f64>], adv: &[Vec<f64>], beta: f64) -> Vec<Vec<f64>> {
    pi0.iter()
        .zip(adv)
        .map(|(p, a)| {
            let w: Vec<f64> = p.iter().zip(a).map(|(p, a)| p * (a / beta).exp()).collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Spearman correlation: Pearson correlation of mid-ranks, ranks counted directly.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    cov / (sx * sy)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation.
pub fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A dense random MDP with no terminal states and a random policy pair.
pub fn random_instance(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> (TabularMdp, TabularPolicy, TabularPolicy) {
    let mut transitions = Vec::with_capacity(ns * na);
    for _ in 0..ns * na {
        let w: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>().powi(2) + 1e-3).collect();
        let z: f64 = w.iter().sum();
        transitions.push(w.iter().enumerate().map(|(i, x)| (i, x / z)).collect());
    }
    let mdp = TabularMdp::new(MdpParts {
        num_states: ns,
        num_actions: na,
        transitions,
        rewards: (0..ns * na).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        gamma: 0.9,
        rho0: vec![1.0 / ns as f64; ns],
        terminal: vec![false; ns],
        horizon: 50,
        state_labels: vec![],
        action_labels: vec![],
    })
    .unwrap();
    let mut policy = || TabularPolicy::new(ns, na, (0..ns * na).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
    let pi0 = policy();
    let pi1 = policy();
    (mdp, pi0, pi1)
}
