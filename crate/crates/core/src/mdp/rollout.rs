use super::TabularMdp;
use crate::error::{invalid_arg, Result};
use crate::policy::Policy;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub final_state: usize,
    /// True when the horizon cut the episode before a terminal state.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps.iter().rev().fold(0.0, |acc, s| s.reward + gamma * acc)
    }

    /// Reached a terminal state with positive total reward.
    pub fn succeeded(&self) -> bool {
        !self.truncated && self.total_reward() > 0.0
    }
}

/// Where an episode begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Sample the start state from the MDP's initial distribution.
    Initial,
    State(usize),
    /// Start at a state with a forced first action, then follow the policy.
    StateAction(usize, usize),
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples one episode. Ends at a terminal state or after `mdp.horizon()` steps.
pub fn rollout<P: Policy + ?Sized, R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    start: Start,
    rng: &mut R,
) -> Result<Trajectory> {
    let (mut s, forced) = match start {
        Start::Initial => (sample_categorical(mdp.rho0(), rng), None),
        Start::State(s) => (s, None),
        Start::StateAction(s, a) => {
            if a >= mdp.num_actions() {
                return Err(invalid_arg(format!("forced action {a} out of range")));
            }
            (s, Some(a))
        }
    };
    mdp.check_state(s)?;
    if mdp.is_terminal(s) {
        return Err(invalid_arg(format!("cannot start an episode in terminal state {s}")));
    }
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut forced = forced;
    while steps.len() < mdp.horizon() {
        let a = match forced.take() {
            Some(a) => a,
            None => policy.sample_with(s, rng.gen()),
        };
        let reward = mdp.reward(s, a);
        steps.push(Step { state: s, action: a, reward });
        s = match mdp.deterministic_next(s, a) {
            Some(next) => next,
            None => {
                let row = mdp.transitions(s, a);
                let probs: Vec<f64> = row.iter().map(|(_, p)| *p).collect();
                row[sample_categorical(&probs, rng)].0
            }
        };
        if mdp.is_terminal(s) {
            return Ok(Trajectory { steps, final_state: s, truncated: false });
        }
    }
    Ok(Trajectory { steps, final_state: s, truncated: true })
}

/// `sum_{k >= t} gamma^(k - t) r_k`.
pub fn return_to_go(traj: &Trajectory, gamma: f64, t: usize) -> Result<f64> {
    if t >= traj.len() {
        return Err(invalid_arg(format!("step {t} outside trajectory of length {}", traj.len())));
    }
    Ok(traj.steps[t..].iter().rev().fold(0.0, |acc, s| s.reward + gamma * acc))
}
