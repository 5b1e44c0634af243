//! Small fully observed goto-style gridworld, a tabular stand-in for the BabyAI goto task.

use super::{MdpParts, TabularMdp};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MAX_GRID_SIDE: usize = 8;
pub const GRID_HORIZON: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    East = 0,
    South = 1,
    West = 2,
    North = 3,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [Self::East, Self::South, Self::West, Self::North];

    fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Self::East => (1, 0),
            Self::South => (0, 1),
            Self::West => (-1, 0),
            Self::North => (0, -1),
        }
    }

    fn left(self) -> Self {
        Self::from_index(self as usize + 3)
    }

    fn right(self) -> Self {
        Self::from_index(self as usize + 1)
    }
}

/// Actions labelled A-F in the order the policy prompt lists them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridAction {
    TurnLeft = 0,
    TurnRight = 1,
    Forward = 2,
    PickUp = 3,
    Drop = 4,
    Toggle = 5,
}

impl GridAction {
    pub const ALL: [GridAction; 6] = [
        Self::TurnLeft,
        Self::TurnRight,
        Self::Forward,
        Self::PickUp,
        Self::Drop,
        Self::Toggle,
    ];

    pub fn letter(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::TurnLeft => "turn left",
            Self::TurnRight => "turn right",
            Self::Forward => "move forward",
            Self::PickUp => "pick up",
            Self::Drop => "drop",
            Self::Toggle => "toggle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridObject {
    pub name: String,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridState {
    pub x: usize,
    pub y: usize,
    pub facing: Orientation,
    pub carrying: bool,
}

impl GridState {
    pub fn index(self, width: usize) -> usize {
        let cell = self.y * width + self.x;
        (cell * 4 + self.facing as usize) * 2 + usize::from(self.carrying)
    }

    pub fn from_index(s: usize, width: usize, height: usize) -> Option<Self> {
        if s >= width * height * 8 {
            return None;
        }
        let carrying = s % 2 == 1;
        let facing = Orientation::from_index((s / 2) % 4);
        let cell = s / 8;
        Some(Self { x: cell % width, y: cell / width, facing, carrying })
    }
}

/// Builds a walled `width x height` room. Objects block movement. Moving forward into,
/// picking up, or toggling the goal object ends the episode with reward 1. Picking up a
/// distractor only sets the carried flag (the layout itself is static) and dropping clears it.
pub fn build_grid_goto(
    width: usize,
    height: usize,
    objects: &[GridObject],
    goal: &str,
    gamma: f64,
) -> Result<TabularMdp> {
    let bad = |m: String| Err(Error::InvalidEnvironment(m));
    if width == 0 || height == 0 || width > MAX_GRID_SIDE || height > MAX_GRID_SIDE {
        return bad(format!("grid {width}x{height} outside 1..={MAX_GRID_SIDE} per side"));
    }
    let mut occupant: Vec<Option<usize>> = vec![None; width * height];
    for (i, obj) in objects.iter().enumerate() {
        if obj.x >= width || obj.y >= height {
            return bad(format!("object {} placed outside the grid", obj.name));
        }
        let cell = obj.y * width + obj.x;
        if occupant[cell].is_some() {
            return bad(format!("two objects share cell ({}, {})", obj.x, obj.y));
        }
        occupant[cell] = Some(i);
    }
    let Some(goal_idx) = objects.iter().position(|o| o.name == goal) else {
        return bad(format!("goal object {goal:?} is not in the layout"));
    };
    if occupant.iter().all(|o| o.is_some()) {
        return bad("no free cell for the agent".into());
    }

    let live = width * height * 8;
    let terminal = live;
    let num_states = live + 1;
    let num_actions = GridAction::ALL.len();
    let mut transitions = Vec::with_capacity(num_states * num_actions);
    let mut rewards = Vec::with_capacity(num_states * num_actions);
    let mut state_labels = Vec::with_capacity(num_states);
    let mut rho0 = vec![0.0; num_states];

    let front = |st: &GridState| -> Option<usize> {
        let (dx, dy) = st.facing.delta();
        let nx = st.x as isize + dx;
        let ny = st.y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height)
            .then(|| ny as usize * width + nx as usize)
    };

    for s in 0..live {
        let st = GridState::from_index(s, width, height).expect("live index");
        state_labels.push(format!(
            "x={} y={} facing={:?} carrying={}",
            st.x, st.y, st.facing, st.carrying
        ));
        let ahead = front(&st);
        let ahead_obj = ahead.and_then(|c| occupant[c]);
        for action in GridAction::ALL {
            let (next, reward) = match action {
                GridAction::TurnLeft => (GridState { facing: st.facing.left(), ..st }.index(width), 0.0),
                GridAction::TurnRight => {
                    (GridState { facing: st.facing.right(), ..st }.index(width), 0.0)
                }
                GridAction::Forward | GridAction::PickUp | GridAction::Toggle
                    if ahead_obj == Some(goal_idx) =>
                {
                    (terminal, 1.0)
                }
                GridAction::Forward => match ahead {
                    Some(c) if occupant[c].is_none() => (
                        GridState { x: c % width, y: c / width, ..st }.index(width),
                        0.0,
                    ),
                    _ => (s, 0.0),
                },
                GridAction::PickUp if ahead_obj.is_some() && !st.carrying => {
                    (GridState { carrying: true, ..st }.index(width), 0.0)
                }
                GridAction::Drop
                    if st.carrying && ahead.is_some_and(|c| occupant[c].is_none()) =>
                {
                    (GridState { carrying: false, ..st }.index(width), 0.0)
                }
                _ => (s, 0.0),
            };
            transitions.push(vec![(next, 1.0)]);
            rewards.push(reward);
        }
        if !st.carrying && occupant[st.y * width + st.x].is_none() {
            rho0[s] = 1.0;
        }
    }
    state_labels.push("goal reached".into());
    for _ in 0..num_actions {
        transitions.push(vec![(terminal, 1.0)]);
        rewards.push(0.0);
    }
    let total: f64 = rho0.iter().sum();
    rho0.iter_mut().for_each(|p| *p /= total);
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
        horizon: GRID_HORIZON,
        state_labels,
        action_labels: GridAction::ALL
            .iter()
            .map(|a| format!("{}: {}", a.letter(), a.label()))
            .collect(),
    })
}
