//! Benchmark environment constructors.
//!
//! Three families, all emitted as validated [`TabularMdp`]s:
//!
//! - **Gambler's problem**: capital 0..=100, bet up to `min(s, 100 - s)`
//!   (a zero bet is an admissible self-loop), win the stake with probability
//!   `p_head`. Capital 0 and 100 are terminal; reaching 100 is the win.
//! - **Frozen lake**: an 8x8 tile grid walked with slippery moves — the
//!   intended direction lands with probability `p_intended`, the rest splits
//!   equally between the two perpendicular directions, and walking into the
//!   wall stays put. Holes and the goal are terminal.
//! - **Chain**: the two-state instance from
//!   [`crate::bounds::gap_instance`], re-exported here so experiment drivers
//!   can treat it as just another family.
//!
//! Goal-entry rewards ("reward 1 on reaching the goal") are encoded as the
//! expected immediate reward under the nominal kernel:
//! `r(s, a) = P_nominal(goal | s, a)`. That keeps rewards deterministic per
//! state-action pair, which is what the robust formulation assumes —
//! ambiguity perturbs transition rows only.

use crate::bounds;
use crate::mdp::{Kernel, TabularMdp};
use thiserror::Error;

/// Intended-direction probability used by every frozen-lake *test*
/// environment; the nominal environments keep their configured value.
pub const FROZEN_LAKE_TEST_P_INTENDED: f64 = 0.2;

/// The widely used 8x8 frozen-lake layout, the default map everywhere.
pub const CANONICAL_8X8: &str = "SFFFFFFF\n\
                                 FFFFFFFF\n\
                                 FFFHFFFF\n\
                                 FFFFFHFF\n\
                                 FFFHFFFF\n\
                                 FHHFFFHF\n\
                                 FHFFHFHF\n\
                                 FFFHFFFG";

/// Environment construction problems.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("{name} = {value} is outside {range}")]
    BadParameter { name: &'static str, value: f64, range: &'static str },
    #[error("bad map: {0}")]
    BadMap(String),
    #[error("the chain family has no test-environment sweep")]
    NoSweep,
    #[error(transparent)]
    Gap(#[from] bounds::BoundsError),
}

fn check_gamma(gamma: f64) -> Result<(), EnvError> {
    if gamma.is_finite() && gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(EnvError::BadParameter { name: "gamma", value: gamma, range: "(0, 1)" })
    }
}

// ---------------------------------------------------------------------------
// Gambler's problem
// ---------------------------------------------------------------------------

/// Build the gambler's problem: states 0..=100, bets `0..=min(s, 100 - s)`
/// labeled by their decimal value, `p_head in (0, 1]`.
///
/// From capital `s` with bet `b`, the row puts `p_head` on `s + b` and the
/// rest on `s - b`; the reward is `p_head` exactly when `s + b == 100` (the
/// expected value of the goal-entry reward). The terminal states 0 and 100
/// fall out of the same action formula with the single bet 0.
pub fn gamblers(p_head: f64, gamma: f64) -> Result<TabularMdp, EnvError> {
    if !(p_head.is_finite() && p_head > 0.0 && p_head <= 1.0) {
        return Err(EnvError::BadParameter { name: "p_head", value: p_head, range: "(0, 1]" });
    }
    check_gamma(gamma)?;
    let num_states = 101;
    let mut actions = Vec::with_capacity(num_states);
    let mut rewards = Vec::with_capacity(num_states);
    let mut kernel: Kernel = Vec::with_capacity(num_states);
    for s in 0..num_states {
        let max_bet = s.min(100 - s);
        let mut labels = Vec::with_capacity(max_bet + 1);
        let mut r = Vec::with_capacity(max_bet + 1);
        let mut rows = Vec::with_capacity(max_bet + 1);
        for bet in 0..=max_bet {
            labels.push(bet.to_string());
            let mut row = vec![0.0; num_states];
            if bet == 0 {
                row[s] = 1.0;
                r.push(0.0);
            } else {
                row[s + bet] = p_head;
                row[s - bet] += 1.0 - p_head;
                r.push(if s + bet == 100 { p_head } else { 0.0 });
            }
            rows.push(row);
        }
        actions.push(labels);
        rewards.push(r);
        kernel.push(rows);
    }
    let mdp = TabularMdp::from_parts(gamma, actions, rewards, kernel, vec![0, 100])
        .expect("gambler shapes are fixed");
    debug_assert!(crate::mdp::validate_mdp(&mdp).is_empty());
    Ok(mdp)
}

// ---------------------------------------------------------------------------
// Frozen lake
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tile {
    Frozen,
    Hole,
    Goal,
}

/// A parsed 8x8 frozen-lake map: exactly one `S`, exactly one `G`, tiles
/// from `{S, F, H, G}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenMap {
    tiles: Vec<Tile>,
    start: usize,
    goal: usize,
}

pub const FROZEN_SIDE: usize = 8;

impl FrozenMap {
    /// Parse 8 lines of 8 characters from `{S, F, H, G}`.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != FROZEN_SIDE {
            return Err(EnvError::BadMap(format!("{} lines, expected {FROZEN_SIDE}", lines.len())));
        }
        let mut tiles = Vec::with_capacity(FROZEN_SIDE * FROZEN_SIDE);
        let mut start = None;
        let mut goal = None;
        for (row, line) in lines.iter().enumerate() {
            let line = line.trim();
            if line.chars().count() != FROZEN_SIDE {
                return Err(EnvError::BadMap(format!(
                    "line {} has {} characters, expected {FROZEN_SIDE}",
                    row + 1,
                    line.chars().count()
                )));
            }
            for (col, ch) in line.chars().enumerate() {
                let index = row * FROZEN_SIDE + col;
                let tile = match ch {
                    'S' => {
                        if start.replace(index).is_some() {
                            return Err(EnvError::BadMap("more than one start tile".into()));
                        }
                        Tile::Frozen
                    }
                    'F' => Tile::Frozen,
                    'H' => Tile::Hole,
                    'G' => {
                        if goal.replace(index).is_some() {
                            return Err(EnvError::BadMap("more than one goal tile".into()));
                        }
                        Tile::Goal
                    }
                    other => {
                        return Err(EnvError::BadMap(format!(
                            "unexpected tile {other:?} at line {}, column {}",
                            row + 1,
                            col + 1
                        )))
                    }
                };
                tiles.push(tile);
            }
        }
        let start = start.ok_or_else(|| EnvError::BadMap("no start tile".into()))?;
        let goal = goal.ok_or_else(|| EnvError::BadMap("no goal tile".into()))?;
        Ok(FrozenMap { tiles, start, goal })
    }

    /// The default layout ([`CANONICAL_8X8`]).
    pub fn canonical() -> Self {
        Self::parse(CANONICAL_8X8).expect("canonical map parses")
    }

    /// State index of the start tile.
    pub fn start_state(&self) -> usize {
        self.start
    }

    /// State index of the goal tile.
    pub fn goal_state(&self) -> usize {
        self.goal
    }

    /// State indices of the holes, ascending.
    pub fn holes(&self) -> Vec<usize> {
        self.tiles
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == Tile::Hole)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Grid actions in index order; perpendicular slips pair left/right with
/// up/down and vice versa.
const DIRECTIONS: [(&str, isize, isize); 4] =
    [("left", 0, -1), ("down", 1, 0), ("right", 0, 1), ("up", -1, 0)];

fn step_from(state: usize, dir: usize) -> usize {
    let row = (state / FROZEN_SIDE) as isize;
    let col = (state % FROZEN_SIDE) as isize;
    let (_, dr, dc) = DIRECTIONS[dir];
    let (nr, nc) = (row + dr, col + dc);
    if nr < 0 || nr >= FROZEN_SIDE as isize || nc < 0 || nc >= FROZEN_SIDE as isize {
        state // bumped the wall
    } else {
        (nr * FROZEN_SIDE as isize + nc) as usize
    }
}

/// Build a frozen lake over `map` with intended-direction probability
/// `p_intended in (0, 1]`.
///
/// Every state gets the four actions `left, down, right, up`. A move lands
/// in the intended direction with probability `p_intended` and in each
/// perpendicular direction with `(1 - p_intended) / 2`; wall bumps stay put,
/// merging their mass. Holes and the goal are absorbing; the reward of a
/// move is its probability of entering the goal.
pub fn frozen_lake(map: &FrozenMap, p_intended: f64, gamma: f64) -> Result<TabularMdp, EnvError> {
    if !(p_intended.is_finite() && p_intended > 0.0 && p_intended <= 1.0) {
        return Err(EnvError::BadParameter {
            name: "p_intended",
            value: p_intended,
            range: "(0, 1]",
        });
    }
    check_gamma(gamma)?;
    let num_states = FROZEN_SIDE * FROZEN_SIDE;
    let slip = (1.0 - p_intended) / 2.0;
    let mut actions = Vec::with_capacity(num_states);
    let mut rewards = Vec::with_capacity(num_states);
    let mut kernel: Kernel = Vec::with_capacity(num_states);
    let mut terminal = map.holes();
    terminal.push(map.goal_state());
    terminal.sort_unstable();
    for s in 0..num_states {
        let labels: Vec<String> = DIRECTIONS.iter().map(|(name, _, _)| name.to_string()).collect();
        let mut r = Vec::with_capacity(4);
        let mut rows = Vec::with_capacity(4);
        let is_terminal = map.tiles[s] != Tile::Frozen;
        for dir in 0..4 {
            let mut row = vec![0.0; num_states];
            if is_terminal {
                row[s] = 1.0;
                r.push(0.0);
            } else {
                // Intended direction plus the two perpendicular slips.
                let outcomes = [(dir, p_intended), ((dir + 1) % 4, slip), ((dir + 3) % 4, slip)];
                let mut goal_mass = 0.0;
                for (d, prob) in outcomes {
                    if prob > 0.0 {
                        let target = step_from(s, d);
                        row[target] += prob;
                        if target == map.goal_state() {
                            goal_mass += prob;
                        }
                    }
                }
                r.push(goal_mass);
            }
            rows.push(row);
        }
        actions.push(labels);
        rewards.push(r);
        kernel.push(rows);
    }
    let mdp = TabularMdp::from_parts(gamma, actions, rewards, kernel, terminal)
        .expect("frozen lake shapes are fixed");
    debug_assert!(crate::mdp::validate_mdp(&mdp).is_empty());
    Ok(mdp)
}

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

/// The two-state chain: the nominal model of the robustness-gap instance.
pub fn chain(gamma: f64) -> Result<TabularMdp, EnvError> {
    Ok(bounds::gap_instance(gamma)?.mdp)
}

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

/// A benchmark family with its nominal parameters; the unit experiment
/// drivers work in.
#[derive(Debug, Clone)]
pub enum EnvFamily {
    Gamblers { p_head: f64, gamma: f64 },
    FrozenLake { map: FrozenMap, p_intended: f64, gamma: f64 },
    Chain { gamma: f64 },
}

impl EnvFamily {
    /// Family name as it appears in experiment records.
    pub fn name(&self) -> &'static str {
        match self {
            EnvFamily::Gamblers { .. } => "gamblers",
            EnvFamily::FrozenLake { .. } => "frozenlake",
            EnvFamily::Chain { .. } => "chain",
        }
    }

    /// The nominal environment.
    pub fn build(&self) -> Result<TabularMdp, EnvError> {
        match self {
            EnvFamily::Gamblers { p_head, gamma } => gamblers(*p_head, *gamma),
            EnvFamily::FrozenLake { map, p_intended, gamma } => {
                frozen_lake(map, *p_intended, *gamma)
            }
            EnvFamily::Chain { gamma } => chain(*gamma),
        }
    }

    /// States rollouts may start from (gamblers draw uniformly from these).
    pub fn start_states(&self) -> Vec<usize> {
        match self {
            EnvFamily::Gamblers { .. } => (1..=99).collect(),
            EnvFamily::FrozenLake { map, .. } => vec![map.start_state()],
            EnvFamily::Chain { .. } => vec![0],
        }
    }

    /// States that count as a win when entered.
    pub fn goal_states(&self) -> Vec<usize> {
        match self {
            EnvFamily::Gamblers { .. } => vec![100],
            EnvFamily::FrozenLake { map, .. } => vec![map.goal_state()],
            EnvFamily::Chain { .. } => vec![],
        }
    }

    /// The test environment for one point `x` of a robustness sweep,
    /// together with the random-action probability to apply at rollout time.
    ///
    /// Gamblers sweeps the head probability (`x = p_head`, no random
    /// actions); frozen lake fixes the test kernel at
    /// [`FROZEN_LAKE_TEST_P_INTENDED`] and sweeps the random-action
    /// probability (`x = rho`). The chain has no sweep.
    pub fn test_env(&self, x: f64) -> Result<(TabularMdp, f64), EnvError> {
        match self {
            EnvFamily::Gamblers { gamma, .. } => Ok((gamblers(x, *gamma)?, 0.0)),
            EnvFamily::FrozenLake { map, gamma, .. } => {
                if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
                    return Err(EnvError::BadParameter {
                        name: "rho",
                        value: x,
                        range: "[0, 1]",
                    });
                }
                Ok((frozen_lake(map, FROZEN_LAKE_TEST_P_INTENDED, *gamma)?, x))
            }
            EnvFamily::Chain { .. } => Err(EnvError::NoSweep),
        }
    }
}
