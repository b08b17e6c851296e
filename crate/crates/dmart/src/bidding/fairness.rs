//! Fairness bidding: discounted value iteration over an EWMA-throughput grid.
//! Win reward `(w / X) * alpha * (1 - X)` and loss reward `-w * alpha` come
//! from the derivative of the logarithmic utility; bids rise sharply as a
//! flow approaches starvation.

use crate::price::PriceDistribution;

use super::{BidPolicy, ObjectiveKind, Rewards, SolveError, StateGrid, ValueTable};

/// Discount factor making the infinite-horizon iteration a contraction.
pub const FAIRNESS_DISCOUNT: f64 = 0.99;
/// Sup-norm convergence tolerance, relative to the utility scale `w`.
pub const FAIRNESS_TOL: f64 = 1e-4;
/// Iteration cap before declaring non-convergence.
pub const FAIRNESS_MAX_ITERS: usize = 100_000;

pub fn fairness_rewards(w: f64, alpha: f64, x: f64) -> Rewards {
    Rewards {
        win: w / x * alpha * (1.0 - x),
        lose: -w * alpha,
    }
}

/// Linear interpolation of a value table over the grid X_i = (i+1)/x_bins.
pub(crate) fn ewma_interp(values: &[f64], x_bins: usize, x: f64) -> f64 {
    let pos = (x * x_bins as f64 - 1.0).clamp(0.0, (x_bins - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(x_bins - 1);
    let frac = pos - i0 as f64;
    values[i0] * (1.0 - frac) + values[i1] * frac
}

pub fn solve_fairness(
    dist: &PriceDistribution,
    w: f64,
    alpha: f64,
    x_bins: usize,
) -> Result<(BidPolicy, ValueTable), SolveError> {
    let (policy, table, _) = solve_fairness_with_residuals(dist, w, alpha, x_bins)?;
    Ok((policy, table))
}

/// As `solve_fairness`, additionally returning the sup-norm residual of every
/// value-iteration sweep for convergence diagnostics.
pub fn solve_fairness_with_residuals(
    dist: &PriceDistribution,
    w: f64,
    alpha: f64,
    x_bins: usize,
) -> Result<(BidPolicy, ValueTable, Vec<f64>), SolveError> {
    if !(w > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(SolveError::BadParams(format!(
            "fairness requires w>0 and 0<alpha<1, got w={w} alpha={alpha}"
        )));
    }
    if x_bins < 16 {
        return Err(SolveError::BadParams(format!(
            "fairness grid needs at least 16 bins, got {x_bins}"
        )));
    }
    let grid = StateGrid::Ewma {
        x_bins,
        alpha,
        gamma: FAIRNESS_DISCOUNT,
    };
    // Per-state rewards and win/lose successor positions. Successors land
    // between grid points; the value estimate interpolates linearly (nearest
    // projection quantizes the continuation difference worse than the bid
    // scale and wrecks monotonicity).
    let states: Vec<(f64, Rewards, f64, f64)> = (0..x_bins)
        .map(|i| {
            let x = grid.ewma_value(i);
            let x_win = (1.0 - alpha) * x + alpha;
            let x_lose = (1.0 - alpha) * x;
            (x, fairness_rewards(w, alpha, x), x_win, x_lose)
        })
        .collect();

    let mut values = vec![0.0; x_bins];
    let mut next = vec![0.0; x_bins];
    let mut residuals = Vec::new();
    let mut residual = f64::INFINITY;
    while residuals.len() < FAIRNESS_MAX_ITERS {
        residual = 0.0f64;
        for (i, &(_, rewards, xw, xl)) in states.iter().enumerate() {
            let side_win = rewards.win + FAIRNESS_DISCOUNT * ewma_interp(&values, x_bins, xw);
            let side_lose = rewards.lose + FAIRNESS_DISCOUNT * ewma_interp(&values, x_bins, xl);
            let b = (side_win - side_lose).max(0.0);
            let p_win = dist.cdf(b)?;
            let pay = dist.expected_price_below(b)?;
            let u = p_win * side_win - pay + (1.0 - p_win) * side_lose;
            residual = residual.max((u - values[i]).abs());
            next[i] = u;
        }
        std::mem::swap(&mut values, &mut next);
        residuals.push(residual);
        if residual < FAIRNESS_TOL * w {
            let bids: Vec<f64> = states
                .iter()
                .map(|&(_, rewards, xw, xl)| {
                    ((rewards.win + FAIRNESS_DISCOUNT * ewma_interp(&values, x_bins, xw))
                        - (rewards.lose + FAIRNESS_DISCOUNT * ewma_interp(&values, x_bins, xl)))
                        .max(0.0)
                })
                .collect();
            return Ok((
                BidPolicy {
                    objective: ObjectiveKind::Fairness,
                    grid: grid.clone(),
                    bids,
                    price_version: dist.version(),
                    capped_states: 0,
                },
                ValueTable {
                    grid,
                    values,
                    residual,
                },
                residuals,
            ));
        }
    }
    Err(SolveError::NonConvergence {
        residual,
        iterations: FAIRNESS_MAX_ITERS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bids_are_nonincreasing_in_throughput() {
        let dist = PriceDistribution::uniform_prior(0.0, 20.0, 512).unwrap();
        let (policy, table) = solve_fairness(&dist, 50.0, 0.1, 64).unwrap();
        assert!(table.residual < FAIRNESS_TOL * 50.0);
        for i in 1..policy.bids.len() {
            assert!(
                policy.bids[i] <= policy.bids[i - 1] + 1e-9,
                "bid at X index {i} must not exceed the hungrier state"
            );
        }
        // Starvation limit: the lowest-throughput state bids the grid maximum.
        let max = policy.bids.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(policy.bids[0], max);
        // Saturated state bids no more than any other state.
        let last = *policy.bids.last().unwrap();
        for b in &policy.bids {
            assert!(last <= *b + 1e-9);
        }
    }

    #[test]
    fn lookup_uses_nearest_grid_point() {
        let dist = PriceDistribution::uniform_prior(0.0, 20.0, 256).unwrap();
        let (policy, _) = solve_fairness(&dist, 10.0, 0.2, 32).unwrap();
        assert_eq!(policy.bid_fairness(1.0), *policy.bids.last().unwrap());
        assert_eq!(policy.bid_fairness(0.0), policy.bids[0]);
        assert_eq!(policy.bid_fairness(1.0 / 32.0), policy.bids[0]);
    }

    #[test]
    fn residuals_decrease_after_burn_in() {
        let dist = PriceDistribution::uniform_prior(0.0, 20.0, 256).unwrap();
        let (_, _, residuals) = solve_fairness_with_residuals(&dist, 25.0, 0.1, 32).unwrap();
        assert!(residuals.len() > 8);
        let burn_in = residuals.len() / 4;
        for pair in residuals[burn_in..].windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-9), "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn rejects_tiny_grids_and_bad_alpha() {
        let dist = PriceDistribution::uniform_prior(0.0, 1.0, 64).unwrap();
        assert!(solve_fairness(&dist, 1.0, 0.1, 8).is_err());
        assert!(solve_fairness(&dist, 1.0, 1.2, 32).is_err());
    }
}
