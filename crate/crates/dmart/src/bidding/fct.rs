//! Closed-form completion-time bidding: the truthful bid at remaining-rounds
//! state F solves `integral of the price CDF over [0, b] = w * (1 - F/T)`,
//! which recovers SRPT-like ordering (shorter remaining time, higher bid).

use crate::price::PriceDistribution;

use super::{BidPolicy, ObjectiveKind, SolveError, StateGrid, ValueTable};

/// Residual tolerance of the root finder, relative to the penalty scale `w`.
pub const FCT_ROOT_TOL: f64 = 1e-6;

/// Solves the per-state bids for remaining rounds F in 1..=f_max.
///
/// The loss penalty magnitude at F is `w * (1 - F/T)`; the bid is the root of
/// the monotone map `b -> integral_cdf(b)` found by bisection. Roots beyond
/// the distribution support are capped at `p_max` and counted.
pub fn solve_fct(
    dist: &PriceDistribution,
    w: f64,
    horizon: u32,
    f_max: u32,
) -> Result<BidPolicy, SolveError> {
    if !(w > 0.0) || horizon == 0 || f_max == 0 {
        return Err(SolveError::BadParams(format!(
            "fct solver requires w>0, T>0, f_max>0, got w={w} T={horizon} f_max={f_max}"
        )));
    }
    if f_max > horizon {
        return Err(SolveError::BadParams(format!(
            "fct grid f_max={f_max} exceeds horizon T={horizon}"
        )));
    }
    let support_integral = dist.integral_cdf(dist.p_max())?;
    let mut bids = Vec::with_capacity(f_max as usize);
    let mut capped = 0usize;
    for f in 1..=f_max {
        let penalty = loss_penalty(w, horizon, f);
        if penalty <= 0.0 {
            bids.push(0.0);
            continue;
        }
        if penalty >= support_integral {
            bids.push(dist.p_max());
            capped += 1;
            continue;
        }
        bids.push(solve_integral_root(dist, penalty, FCT_ROOT_TOL * w)?);
    }
    Ok(BidPolicy {
        objective: ObjectiveKind::Fct,
        grid: StateGrid::RemainingRounds { f_max },
        bids,
        price_version: dist.version(),
        capped_states: capped,
    })
}

/// Magnitude of the per-round loss penalty at remaining rounds `f`.
pub fn loss_penalty(w: f64, horizon: u32, f: u32) -> f64 {
    w * (1.0 - f as f64 / horizon as f64)
}

/// Bisection for `integral_cdf(b) = target` on `[0, p_max]`. The integrand is
/// nondecreasing and convex, so plain bisection is robust.
fn solve_integral_root(
    dist: &PriceDistribution,
    target: f64,
    tol: f64,
) -> Result<f64, SolveError> {
    let mut lo = 0.0;
    let mut hi = dist.p_max();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = dist.integral_cdf(mid)?;
        if (v - target).abs() <= tol {
            return Ok(mid);
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expected-net-utility table consistent with the closed-form bids, used by
/// the cross-check between the recursion and the closed form. `U(0) = 0`;
/// states whose bid has zero win probability keep `U = 0` (they never
/// progress and their penalty is zero only at F = T).
pub fn fct_value_table(
    dist: &PriceDistribution,
    policy: &BidPolicy,
    w: f64,
    horizon: u32,
) -> Result<ValueTable, SolveError> {
    let StateGrid::RemainingRounds { f_max } = policy.grid else {
        return Err(SolveError::BadParams("policy is not an FCT policy".into()));
    };
    let mut values = vec![0.0; f_max as usize];
    let mut u_prev = 0.0; // U(0)
    for f in 1..=f_max {
        let b = policy.bid_fct(f);
        let p_win = dist.cdf(b)?;
        let pay = dist.expected_price_below(b)?;
        let r_l = -loss_penalty(w, horizon, f);
        let u = if p_win > 0.0 {
            // U(F) solves U = p (U(F-1)) - E[P 1{P<b}] + (1-p)(U(F) + r_l).
            (p_win * u_prev - pay + (1.0 - p_win) * r_l) / p_win
        } else {
            0.0
        };
        values[f as usize - 1] = u;
        u_prev = u;
    }
    Ok(ValueTable {
        grid: policy.grid.clone(),
        values,
        residual: 0.0,
    })
}
