//! One-step-deviation truthfulness check. Under exogenous prices (each round
//! drawn i.i.d. from the global distribution), bidding the marginal
//! continuation utility is weakly dominant; this estimates the expected net
//! utility of deviating to each grid bid for one round (continuing with the
//! policy thereafter) using paired common-random-number rollouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::price::PriceDistribution;

use super::{BidPolicy, SolveError, State};

/// Reward semantics of the objective being rolled out.
#[derive(Debug, Clone, Copy)]
pub enum RolloutModel {
    Fct { w: f64, horizon: u32 },
    Deadline { budget: f64 },
    Fairness { w: f64, alpha: f64, gamma: f64, rounds: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct DeviationOutcome {
    pub bid: f64,
    /// Mean of (deviation utility - truthful utility) over paired rollouts.
    pub mean_delta: f64,
    /// Standard error of the paired difference.
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct TruthfulnessReport {
    pub state: State,
    pub truthful_bid: f64,
    pub truthful_mean: f64,
    pub deviations: Vec<DeviationOutcome>,
    /// True iff no deviation beats the truthful bid by more than 3 sigma.
    pub passed: bool,
}

pub fn verify_truthfulness(
    policy: &BidPolicy,
    model: &RolloutModel,
    dist: &PriceDistribution,
    state: State,
    bid_grid: &[f64],
    n_rollouts: usize,
    seed: u64,
) -> Result<TruthfulnessReport, SolveError> {
    if n_rollouts == 0 {
        return Err(SolveError::BadParams("need at least one rollout".into()));
    }
    let truthful_bid = lookup_bid(policy, state);
    let mut truthful = vec![0.0f64; n_rollouts];
    for (i, t) in truthful.iter_mut().enumerate() {
        let mut rng = rollout_rng(seed, i);
        *t = rollout(policy, model, dist, state, truthful_bid, &mut rng)?;
    }
    let truthful_mean = mean(&truthful);

    let mut deviations = Vec::with_capacity(bid_grid.len());
    let mut passed = true;
    for &bid in bid_grid {
        let mut diffs = vec![0.0f64; n_rollouts];
        for (i, d) in diffs.iter_mut().enumerate() {
            // Same price stream as the truthful arm: paired comparison.
            let mut rng = rollout_rng(seed, i);
            *d = rollout(policy, model, dist, state, bid, &mut rng)? - truthful[i];
        }
        let mean_delta = mean(&diffs);
        let sigma = std_error(&diffs, mean_delta);
        if mean_delta > 3.0 * sigma + 1e-9 {
            passed = false;
        }
        deviations.push(DeviationOutcome {
            bid,
            mean_delta,
            sigma,
        });
    }
    Ok(TruthfulnessReport {
        state,
        truthful_bid,
        truthful_mean,
        deviations,
        passed,
    })
}

fn rollout_rng(seed: u64, rollout: usize) -> ChaCha8Rng {
    // splitmix64 spreads (seed, index) into independent streams.
    let mut z = seed ^ (rollout as u64).wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn lookup_bid(policy: &BidPolicy, state: State) -> f64 {
    match state {
        State::Fct { f } => policy.bid_fct(f),
        State::Deadline { f, d } => policy.bid_deadline(f, d),
        State::Fairness { x } => policy.bid_fairness(x),
        State::Constant => policy.bid_constant(),
    }
}

/// Net utility of one trajectory: round 1 uses `first_bid`, later rounds
/// follow the policy. Prices are drawn i.i.d. from `dist`; a round is won
/// when the drawn price is strictly below the bid, paying that price.
fn rollout(
    policy: &BidPolicy,
    model: &RolloutModel,
    dist: &PriceDistribution,
    state: State,
    first_bid: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, SolveError> {
    let mut utility = 0.0;
    match (*model, state) {
        (RolloutModel::Fct { w, horizon }, State::Fct { f: f0 }) => {
            let mut f = f0;
            let cap = 6 * horizon.max(1);
            for t in 0..cap {
                if f == 0 {
                    break;
                }
                let bid = if t == 0 { first_bid } else { policy.bid_fct(f) };
                let price = dist.quantile(rng.gen::<f64>())?;
                if price < bid {
                    utility -= price;
                    f -= 1;
                } else {
                    utility -= super::loss_penalty(w, horizon, f);
                }
            }
        }
        (RolloutModel::Deadline { budget }, State::Deadline { f: f0, d: d0 }) => {
            let mut f = f0;
            let mut d = d0;
            let mut t = 0u32;
            while f > 0 && d >= 0 {
                let bid = if t == 0 {
                    first_bid
                } else {
                    policy.bid_deadline(f, d)
                };
                let price = dist.quantile(rng.gen::<f64>())?;
                if price < bid {
                    utility -= price;
                    f -= 1;
                } else {
                    d -= 1;
                }
                t += 1;
            }
            if f == 0 && d >= 0 {
                utility += budget;
            }
        }
        (
            RolloutModel::Fairness {
                w,
                alpha,
                gamma,
                rounds,
            },
            State::Fairness { x: x0 },
        ) => {
            let mut x = x0;
            let mut discount = 1.0;
            for t in 0..rounds {
                let bid = if t == 0 { first_bid } else { policy.bid_fairness(x) };
                let price = dist.quantile(rng.gen::<f64>())?;
                let rewards = super::fairness::fairness_rewards(w, alpha, x);
                if price < bid {
                    utility += discount * (rewards.win - price);
                    x = (1.0 - alpha) * x + alpha;
                } else {
                    utility += discount * rewards.lose;
                    x = ((1.0 - alpha) * x).max(1e-6);
                }
                discount *= gamma;
            }
        }
        (m, s) => {
            return Err(SolveError::BadParams(format!(
                "rollout model {m:?} does not match state {s:?}"
            )))
        }
    }
    Ok(utility)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_error(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}
