//! Translation of end-to-end objectives into per-round bid policies, solved
//! against a snapshot of the global price distribution by closed form or
//! dynamic programming, plus the one-step-deviation truthfulness check.

mod coflow;
mod deadline;
mod fairness;
mod fct;
mod truthful;

pub use coflow::{coflow_bids, CoflowBidder, CoflowFlow, MemberRole};
pub use deadline::{active_region, solve_deadline};
pub use fairness::{
    solve_fairness, solve_fairness_with_residuals, FAIRNESS_DISCOUNT, FAIRNESS_TOL,
};
pub use fct::{fct_value_table, loss_penalty, solve_fct, FCT_ROOT_TOL};
pub use truthful::{verify_truthfulness, DeviationOutcome, RolloutModel, TruthfulnessReport};

use std::fmt::Write as _;

use thiserror::Error;

use crate::price::PriceError;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("price distribution: {0}")]
    Price(#[from] PriceError),
    #[error("invalid objective parameters: {0}")]
    BadParams(String),
    #[error("value iteration did not converge: residual {residual} after {iterations} sweeps")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("coflow has no member flows")]
    EmptyCoflow,
}

/// Objective choices a flow can declare, with the utility-scale parameters
/// that double as budgets.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    /// Minimize completion time; `w` is the penalty scale in dollars and
    /// `horizon` the horizon T in RTTs.
    Fct { w: f64, horizon: u32 },
    /// A fixed reward `budget` is earned only by finishing with slack left.
    Deadline { budget: f64, f_max: u32, d_max: u32 },
    /// Proportional-fairness proxy over EWMA throughput.
    Fairness { w: f64, alpha: f64 },
    /// Coflow members share a centralized agent; bottleneck flows reuse the
    /// FCT policy, others get deadlines equal to the bottleneck finish time.
    Coflow { w: f64, horizon: u32, budget: f64 },
    /// Constant bid per RTT, no state.
    BestEffort { bid: f64 },
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |msg: String| Err(SolveError::BadParams(msg));
        match *self {
            ObjectiveSpec::Fct { w, horizon } => {
                if !(w > 0.0) || horizon == 0 {
                    return bad(format!("fct requires w>0 and horizon>0, got w={w} T={horizon}"));
                }
            }
            ObjectiveSpec::Deadline { budget, f_max, d_max } => {
                if !(budget >= 0.0) || f_max == 0 || d_max == 0 {
                    return bad(format!(
                        "deadline requires budget>=0 and grids>=1, got C={budget} F={f_max} D={d_max}"
                    ));
                }
            }
            ObjectiveSpec::Fairness { w, alpha } => {
                if !(w > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
                    return bad(format!("fairness requires w>0 and 0<alpha<1, got w={w} alpha={alpha}"));
                }
            }
            ObjectiveSpec::Coflow { w, horizon, budget } => {
                if !(w > 0.0) || horizon == 0 || !(budget >= 0.0) {
                    return bad(format!("coflow requires w>0, horizon>0, budget>=0, got w={w} T={horizon} C={budget}"));
                }
            }
            ObjectiveSpec::BestEffort { bid } => {
                if !(bid >= 0.0) {
                    return bad(format!("best-effort bid must be >= 0, got {bid}"));
                }
            }
        }
        Ok(())
    }

    /// Largest dollar amount this objective could ever bid; sizes `p_max`.
    pub fn budget_scale(&self) -> f64 {
        match *self {
            ObjectiveSpec::Fct { w, .. } => w,
            ObjectiveSpec::Deadline { budget, .. } => budget,
            ObjectiveSpec::Fairness { w, .. } => w,
            ObjectiveSpec::Coflow { w, budget, .. } => w.max(budget),
            ObjectiveSpec::BestEffort { bid } => bid,
        }
    }
}

/// Which objective family a policy was solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Fct,
    Deadline,
    Fairness,
    BestEffort,
}

/// Discretized state-space descriptor shared by bid and value tables.
#[derive(Debug, Clone, PartialEq)]
pub enum StateGrid {
    /// FCT: remaining rounds F in 1..=f_max (index F-1).
    RemainingRounds { f_max: u32 },
    /// Deadline: (F, D) with F in 1..=f_max and D in 0..=d_max;
    /// row-major index (F-1) * (d_max+1) + D.
    FdGrid { f_max: u32, d_max: u32 },
    /// Fairness: X_i = (i+1)/x_bins for i in 0..x_bins, with the EWMA factor
    /// and discount baked into the transition.
    Ewma { x_bins: usize, alpha: f64, gamma: f64 },
    /// Best effort: a single state.
    Constant,
}

impl StateGrid {
    pub fn len(&self) -> usize {
        match *self {
            StateGrid::RemainingRounds { f_max } => f_max as usize,
            StateGrid::FdGrid { f_max, d_max } => f_max as usize * (d_max as usize + 1),
            StateGrid::Ewma { x_bins, .. } => x_bins,
            StateGrid::Constant => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nearest grid index for an EWMA throughput value.
    pub fn ewma_index(&self, x: f64) -> usize {
        match *self {
            StateGrid::Ewma { x_bins, .. } => {
                let i = (x * x_bins as f64 - 1.0).round();
                (i.max(0.0) as usize).min(x_bins - 1)
            }
            _ => panic!("ewma_index on non-EWMA grid"),
        }
    }

    /// Throughput value of an EWMA grid index.
    pub fn ewma_value(&self, i: usize) -> f64 {
        match *self {
            StateGrid::Ewma { x_bins, .. } => (i + 1) as f64 / x_bins as f64,
            _ => panic!("ewma_value on non-EWMA grid"),
        }
    }
}

/// A solved state -> bid table. Immutable once produced; shareable across
/// concurrently running epochs.
#[derive(Debug, Clone)]
pub struct BidPolicy {
    pub objective: ObjectiveKind,
    pub grid: StateGrid,
    pub bids: Vec<f64>,
    /// Version of the price distribution this was solved against.
    pub price_version: u64,
    /// Grid states whose FCT root exceeded the distribution support and were
    /// capped at p_max.
    pub capped_states: usize,
}

impl BidPolicy {
    pub fn constant(bid: f64) -> Self {
        BidPolicy {
            objective: ObjectiveKind::BestEffort,
            grid: StateGrid::Constant,
            bids: vec![bid],
            price_version: 0,
            capped_states: 0,
        }
    }

    /// Bid for an FCT state (remaining rounds F >= 1). States beyond the grid
    /// clamp to the last (least urgent) entry.
    pub fn bid_fct(&self, f: u32) -> f64 {
        debug_assert!(matches!(self.grid, StateGrid::RemainingRounds { .. }));
        if f == 0 {
            return 0.0;
        }
        let idx = (f as usize - 1).min(self.bids.len() - 1);
        self.bids[idx]
    }

    /// Bid for a deadline state; negative slack means the deadline is missed
    /// and the flow stops bidding.
    pub fn bid_deadline(&self, f: u32, d: i64) -> f64 {
        let StateGrid::FdGrid { f_max, d_max } = self.grid else {
            panic!("bid_deadline on non-deadline grid");
        };
        if f == 0 || d < 0 {
            return 0.0;
        }
        let f = f.min(f_max);
        let d = (d as u32).min(d_max);
        self.bids[(f as usize - 1) * (d_max as usize + 1) + d as usize]
    }

    /// Bid for a fairness state (EWMA throughput), nearest-grid lookup.
    pub fn bid_fairness(&self, x: f64) -> f64 {
        self.bids[self.grid.ewma_index(x)]
    }

    pub fn bid_constant(&self) -> f64 {
        self.bids[0]
    }

    /// CSV dump, one `state...,bid` row per grid point (heatmap-ready).
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self.grid {
            StateGrid::RemainingRounds { f_max } => {
                s.push_str("f,bid\n");
                for f in 1..=f_max {
                    let _ = writeln!(s, "{},{}", f, self.bid_fct(f));
                }
            }
            StateGrid::FdGrid { f_max, d_max } => {
                s.push_str("f,d,bid\n");
                for f in 1..=f_max {
                    for d in 0..=d_max {
                        let _ = writeln!(s, "{},{},{}", f, d, self.bid_deadline(f, d as i64));
                    }
                }
            }
            StateGrid::Ewma { x_bins, .. } => {
                s.push_str("x,bid\n");
                for i in 0..x_bins {
                    let _ = writeln!(s, "{},{}", self.grid.ewma_value(i), self.bids[i]);
                }
            }
            StateGrid::Constant => {
                s.push_str("bid\n");
                let _ = writeln!(s, "{}", self.bids[0]);
            }
        }
        s
    }
}

/// Expected-future-net-utility table over the same grid as its policy.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub grid: StateGrid,
    pub values: Vec<f64>,
    /// Sup-norm residual of the final solver iteration (0 for direct solves).
    pub residual: f64,
}

impl ValueTable {
    /// U(F, D); out-of-range slack is terminal.
    pub fn value_fd(&self, f: u32, d: i64) -> f64 {
        let StateGrid::FdGrid { f_max, d_max } = self.grid else {
            panic!("value_fd on non-deadline grid");
        };
        if d < 0 {
            return 0.0;
        }
        if f == 0 {
            // Terminal reward row is stored separately by the solver; callers
            // use `marginal_utility` which never needs (0, d) directly.
            unreachable!("terminal row not stored");
        }
        let f = f.min(f_max);
        let d = (d as u32).min(d_max);
        self.values[(f as usize - 1) * (d_max as usize + 1) + d as usize]
    }
}

/// Per-round win/loss rewards of a state.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rewards {
    pub win: f64,
    pub lose: f64,
}

/// A point in one of the objective state spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum State {
    Fct { f: u32 },
    Deadline { f: u32, d: i64 },
    Fairness { x: f64 },
    Constant,
}

/// Marginal continuation utility: the win-minus-lose difference in expected
/// future net utility plus the immediate reward difference, clamped at zero.
/// This is the truthful bid.
pub fn marginal_utility(
    table: &ValueTable,
    terminal_reward: f64,
    state: State,
    rewards: Rewards,
) -> f64 {
    let (u_win, u_lose) = match (state, &table.grid) {
        (State::Fct { f }, StateGrid::RemainingRounds { .. }) => {
            let win = if f <= 1 { terminal_reward } else { table.values[f as usize - 2] };
            let lose = if f == 0 { terminal_reward } else { table.values[f as usize - 1] };
            (win, lose)
        }
        (State::Deadline { f, d }, StateGrid::FdGrid { .. }) => {
            let win = if d < 0 {
                0.0
            } else if f <= 1 {
                terminal_reward
            } else {
                table.value_fd(f - 1, d)
            };
            let lose = if d <= 0 {
                0.0
            } else if f == 0 {
                terminal_reward
            } else {
                table.value_fd(f, d - 1)
            };
            (win, lose)
        }
        (State::Fairness { x }, &StateGrid::Ewma { x_bins, alpha, gamma }) => {
            let win = gamma * fairness::ewma_interp(&table.values, x_bins, (1.0 - alpha) * x + alpha);
            let lose = gamma * fairness::ewma_interp(&table.values, x_bins, (1.0 - alpha) * x);
            (win, lose)
        }
        (State::Constant, StateGrid::Constant) => (0.0, 0.0),
        (s, g) => panic!("state {s:?} does not match grid {g:?}"),
    };
    ((rewards.win + u_win) - (rewards.lose + u_lose)).max(0.0)
}

/// Best-effort tier: a constant bid per RTT, independent of state.
pub fn best_effort_bid(bid_const: f64) -> f64 {
    bid_const.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_effort_is_constant() {
        assert_eq!(best_effort_bid(0.0), 0.0);
        for _ in 0..100 {
            assert_eq!(best_effort_bid(5.0), 5.0);
        }
        let p = BidPolicy::constant(5.0);
        assert_eq!(p.bid_constant(), 5.0);
    }

    #[test]
    fn marginal_utility_is_zero_when_sides_match() {
        let table = ValueTable {
            grid: StateGrid::RemainingRounds { f_max: 4 },
            values: vec![3.0; 4],
            residual: 0.0,
        };
        let b = marginal_utility(
            &table,
            3.0,
            State::Fct { f: 2 },
            Rewards { win: 1.0, lose: 1.0 },
        );
        assert_eq!(b, 0.0);
    }

    #[test]
    fn objective_validation_rejects_bad_params() {
        assert!(ObjectiveSpec::Fct { w: 0.0, horizon: 4 }.validate().is_err());
        assert!(ObjectiveSpec::Fairness { w: 1.0, alpha: 1.0 }.validate().is_err());
        assert!(ObjectiveSpec::BestEffort { bid: -1.0 }.validate().is_err());
        assert!(ObjectiveSpec::Deadline { budget: 10.0, f_max: 4, d_max: 4 }
            .validate()
            .is_ok());
    }

    #[test]
    fn policy_csv_has_state_and_bid_columns() {
        let p = BidPolicy {
            objective: ObjectiveKind::Fct,
            grid: StateGrid::RemainingRounds { f_max: 2 },
            bids: vec![1.5, 0.5],
            price_version: 1,
            capped_states: 0,
        };
        let csv = p.to_csv();
        assert!(csv.starts_with("f,bid\n"));
        assert!(csv.contains("1,1.5"));
        assert!(csv.contains("2,0.5"));
    }
}
