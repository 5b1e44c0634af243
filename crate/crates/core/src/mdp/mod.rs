//! Finite MDPs, the bundled environments, exact evaluation and sampling.

mod grid;
mod key_door;
mod rollout;
mod solve;

pub use grid::{build_grid_goto, GridAction, GridObject, GridState, Orientation};
pub use key_door::{build_key_door, KeyDoorAction, KeyDoorState};
pub use rollout::{return_to_go, rollout, Start, Step, Trajectory};
pub use solve::{
    exact_value, optimal_policy, soft_evaluate, soft_q_linear_system, SoftValues, ValueTable,
};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;

/// A finite discounted MDP with explicit sparse transitions.
///
/// Transition and reward tables are indexed by `s * num_actions + a`.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    rewards: Vec<f64>,
    gamma: f64,
    rho0: Vec<f64>,
    terminal: Vec<bool>,
    horizon: usize,
    state_labels: Vec<String>,
    action_labels: Vec<String>,
}

/// Raw parts used to assemble a [`TabularMdp`].
#[derive(Debug, Clone, Default)]
pub struct MdpParts {
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub rewards: Vec<f64>,
    pub gamma: f64,
    pub rho0: Vec<f64>,
    pub terminal: Vec<bool>,
    pub horizon: usize,
    pub state_labels: Vec<String>,
    pub action_labels: Vec<String>,
}

impl TabularMdp {
    pub fn new(parts: MdpParts) -> Result<Self> {
        let MdpParts {
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
            rho0,
            terminal,
            horizon,
            mut state_labels,
            mut action_labels,
        } = parts;
        let bad = |m: String| Err(Error::InvalidEnvironment(m));
        if num_states == 0 || num_actions == 0 {
            return bad("empty state or action space".into());
        }
        let n_sa = num_states * num_actions;
        if transitions.len() != n_sa || rewards.len() != n_sa {
            return bad(format!(
                "expected {n_sa} transition rows and rewards, got {} and {}",
                transitions.len(),
                rewards.len()
            ));
        }
        if rho0.len() != num_states || terminal.len() != num_states {
            return bad("rho0 and terminal must have one entry per state".into());
        }
        if !(0.0..1.0).contains(&gamma) {
            return bad(format!("gamma must lie in [0, 1), got {gamma}"));
        }
        if horizon == 0 {
            return bad("horizon must be positive".into());
        }
        for (sa, row) in transitions.iter().enumerate() {
            let (s, a) = (sa / num_actions, sa % num_actions);
            let mut total = 0.0;
            for &(next, p) in row {
                if next >= num_states || !(p >= 0.0) {
                    return bad(format!("bad transition entry at ({s}, {a})"));
                }
                total += p;
            }
            if (total - 1.0).abs() > PROB_TOL {
                return bad(format!("P[{s}][{a}] sums to {total}"));
            }
            if !rewards[sa].is_finite() {
                return bad(format!("non-finite reward at ({s}, {a})"));
            }
            if terminal[s] {
                let self_loop: f64 = row.iter().filter(|(n, _)| *n == s).map(|(_, p)| p).sum();
                if (self_loop - 1.0).abs() > PROB_TOL || rewards[sa] != 0.0 {
                    return bad(format!("terminal state {s} must self-loop with reward 0"));
                }
            }
        }
        if rho0.iter().any(|p| !(*p >= 0.0)) || (rho0.iter().sum::<f64>() - 1.0).abs() > PROB_TOL
        {
            return bad("rho0 must be a probability distribution".into());
        }
        if state_labels.len() != num_states {
            state_labels = (0..num_states).map(|s| format!("s{s}")).collect();
        }
        if action_labels.len() != num_actions {
            action_labels = (0..num_actions).map(|a| format!("a{a}")).collect();
        }
        Ok(Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
            rho0,
            terminal,
            horizon,
            state_labels,
            action_labels,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn transitions(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.num_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn state_label(&self, s: usize) -> &str {
        &self.state_labels[s]
    }

    pub fn action_label(&self, a: usize) -> &str {
        &self.action_labels[a]
    }

    /// States with positive initial probability, in index order.
    pub fn start_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.rho0[s] > 0.0).collect()
    }

    /// Copy of this MDP with a different reward table. Terminal rewards must stay zero.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::new(MdpParts {
            num_states: self.num_states,
            num_actions: self.num_actions,
            transitions: self.transitions.clone(),
            rewards,
            gamma: self.gamma,
            rho0: self.rho0.clone(),
            terminal: self.terminal.clone(),
            horizon: self.horizon,
            state_labels: self.state_labels.clone(),
            action_labels: self.action_labels.clone(),
        })
    }

    /// Copy of this MDP with a different initial distribution.
    pub fn with_rho0(&self, rho0: Vec<f64>) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.rho0 = rho0;
        Self::new(parts)
    }

    /// Copy of this MDP with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.horizon = horizon;
        Self::new(parts)
    }

    pub fn to_parts(&self) -> MdpParts {
        MdpParts {
            num_states: self.num_states,
            num_actions: self.num_actions,
            transitions: self.transitions.clone(),
            rewards: self.rewards.clone(),
            gamma: self.gamma,
            rho0: self.rho0.clone(),
            terminal: self.terminal.clone(),
            horizon: self.horizon,
            state_labels: self.state_labels.clone(),
            action_labels: self.action_labels.clone(),
        }
    }

    /// Deterministic successor of `(s, a)`, if the transition is deterministic.
    pub fn deterministic_next(&self, s: usize, a: usize) -> Option<usize> {
        match self.transitions(s, a) {
            [(next, p)] if (*p - 1.0).abs() <= PROB_TOL => Some(*next),
            _ => None,
        }
    }

    pub(crate) fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(Error::InvalidArgument(format!(
                "state {s} out of range ({} states)",
                self.num_states
            )));
        }
        Ok(())
    }
}
