//! Deadline bidding: 2-D dynamic program over (remaining rounds F, slack D).
//! Winning a round decrements F, losing decrements D; the budget reward is
//! earned only by reaching F = 0 with D >= 0. The bid at (F, D) is
//! `U(F-1, D) - U(F, D-1)` with the terminal reward folded into `U(0, .)`.

use crate::price::PriceDistribution;

use super::{BidPolicy, ObjectiveKind, SolveError, StateGrid, ValueTable};

pub fn solve_deadline(
    dist: &PriceDistribution,
    budget: f64,
    f_max: u32,
    d_max: u32,
) -> Result<(BidPolicy, ValueTable), SolveError> {
    if f_max == 0 || d_max == 0 {
        return Err(SolveError::BadParams(format!(
            "deadline grids must be >= 1, got F={f_max} D={d_max}"
        )));
    }
    if !(budget >= 0.0) {
        return Err(SolveError::BadParams(format!("budget must be >= 0, got {budget}")));
    }
    let cols = d_max as usize + 1;
    let mut bids = vec![0.0; f_max as usize * cols];
    let mut values = vec![0.0; f_max as usize * cols];
    // U(0, d >= 0) = budget: the final winning round earns the reward.
    let mut prev_row = vec![budget; cols];
    let mut row = vec![0.0; cols];
    for f in 1..=f_max as usize {
        for d in 0..cols {
            let u_win = prev_row[d];
            let u_lose = if d == 0 { 0.0 } else { row[d - 1] };
            let b = (u_win - u_lose).max(0.0);
            let p_win = dist.cdf(b)?;
            let pay = dist.expected_price_below(b)?;
            let u = p_win * u_win - pay + (1.0 - p_win) * u_lose;
            let idx = (f - 1) * cols + d;
            bids[idx] = b;
            values[idx] = u;
            row[d] = u;
        }
        std::mem::swap(&mut prev_row, &mut row);
    }
    let grid = StateGrid::FdGrid { f_max, d_max };
    Ok((
        BidPolicy {
            objective: ObjectiveKind::Deadline,
            grid: grid.clone(),
            bids,
            price_version: dist.version(),
            capped_states: 0,
        },
        ValueTable {
            grid,
            values,
            residual: 0.0,
        },
    ))
}

/// Number of (F, D) states with a bid above `threshold`; Fig.-4-style
/// "active bidding region" size.
pub fn active_region(policy: &BidPolicy, threshold: f64) -> usize {
    policy.bids.iter().filter(|b| **b > threshold).count()
}
