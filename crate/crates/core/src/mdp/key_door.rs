//! One-dimensional corridor with the key in the leftmost cell and the door in the rightmost.

use super::{MdpParts, TabularMdp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum KeyDoorAction {
    Left = 0,
    Right = 1,
    PickUp = 2,
    Unlock = 3,
}

impl KeyDoorAction {
    pub const ALL: [KeyDoorAction; 4] = [Self::Left, Self::Right, Self::PickUp, Self::Unlock];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Left => "move left",
            Self::Right => "move right",
            Self::PickUp => "pick up the key",
            Self::Unlock => "unlock the door",
        }
    }
}

/// Live corridor state. The absorbing success state is index `2 * length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyDoorState {
    pub position: usize,
    pub has_key: bool,
}

impl KeyDoorState {
    pub fn index(self, length: usize) -> usize {
        self.position + if self.has_key { length } else { 0 }
    }

    /// Inverse of [`KeyDoorState::index`]; `None` for the terminal state.
    pub fn from_index(s: usize, length: usize) -> Option<Self> {
        (s < 2 * length).then(|| Self { position: s % length, has_key: s >= length })
    }

    /// The state sequence of the shortest successful episode from the far end without the key:
    /// walk to the key, pick it up, walk to the door, unlock.
    pub fn canonical_path(length: usize) -> Vec<usize> {
        let mut path: Vec<usize> = (0..length)
            .rev()
            .map(|p| Self { position: p, has_key: false }.index(length))
            .collect();
        path.extend((0..length).map(|p| Self { position: p, has_key: true }.index(length)));
        path
    }
}

pub fn terminal_index(length: usize) -> usize {
    2 * length
}

/// Builds the corridor. Invalid actions are reward-free no-ops; unlocking at the door while
/// holding the key pays 1 and ends the episode. Episodes start uniformly at any cell without
/// the key and are truncated after `4 * length` steps.
pub fn build_key_door(length: usize, gamma: f64) -> Result<TabularMdp> {
    if length < 2 {
        return Err(Error::InvalidEnvironment(format!(
            "key-door corridor needs length >= 2, got {length}"
        )));
    }
    let num_states = 2 * length + 1;
    let terminal = terminal_index(length);
    let num_actions = KeyDoorAction::ALL.len();
    let mut transitions = Vec::with_capacity(num_states * num_actions);
    let mut rewards = Vec::with_capacity(num_states * num_actions);
    let mut state_labels = Vec::with_capacity(num_states);

    for s in 0..num_states {
        let Some(state) = KeyDoorState::from_index(s, length) else {
            state_labels.push("door open".to_string());
            for _ in 0..num_actions {
                transitions.push(vec![(terminal, 1.0)]);
                rewards.push(0.0);
            }
            continue;
        };
        state_labels.push(format!(
            "pos={} key={}",
            state.position,
            if state.has_key { "yes" } else { "no" }
        ));
        for action in KeyDoorAction::ALL {
            let (next, reward) = match action {
                KeyDoorAction::Left => (
                    KeyDoorState { position: state.position.saturating_sub(1), ..state }.index(length),
                    0.0,
                ),
                KeyDoorAction::Right => (
                    KeyDoorState { position: (state.position + 1).min(length - 1), ..state }
                        .index(length),
                    0.0,
                ),
                KeyDoorAction::PickUp if state.position == 0 && !state.has_key => {
                    (KeyDoorState { position: 0, has_key: true }.index(length), 0.0)
                }
                KeyDoorAction::Unlock if state.position == length - 1 && state.has_key => {
                    (terminal, 1.0)
                }
                _ => (s, 0.0),
            };
            transitions.push(vec![(next, 1.0)]);
            rewards.push(reward);
        }
    }

    let mut rho0 = vec![0.0; num_states];
    for p in 0..length {
        rho0[p] = 1.0 / length as f64;
    }
    let mut is_terminal = vec![false; num_states];
    is_terminal[terminal] = true;

    TabularMdp::new(MdpParts {
        num_states,
        num_actions,
        transitions,
        rewards,
        gamma,
        rho0,
        terminal: is_terminal,
        horizon: 4 * length,
        state_labels,
        action_labels: KeyDoorAction::ALL.iter().map(|a| a.label().to_string()).collect(),
    })
}
