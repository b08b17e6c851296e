//! Coflow bidding through a coflow-centralized agent that sees every member
//! flow. The port with the most remaining coflow work per unit capacity is
//! the bottleneck; flows crossing it bid the FCT policy on the shared
//! bottleneck-rounds state, and every other member gets a deadline equal to
//! the bottleneck completion estimate (rate-matching the stragglers).

use std::collections::HashMap;
use std::sync::Arc;

use crate::price::PriceDistribution;

use super::{solve_deadline, solve_fct, BidPolicy, SolveError};

/// One member flow as the agent sees it.
#[derive(Debug, Clone)]
pub struct CoflowFlow {
    pub flow_id: u32,
    pub remaining_bytes: u64,
    /// (port key, port capacity in bytes per RTT) for each traversed link.
    pub path: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberRole {
    /// Crosses the bottleneck port; bids the FCT policy at the shared
    /// bottleneck-rounds state.
    Bottleneck,
    /// Slack granted at assignment: bottleneck rounds minus own rounds.
    NonBottleneck { slack: u32 },
}

/// Solved per-flow assignment for one coflow against one price snapshot.
#[derive(Debug, Clone)]
pub struct CoflowBidder {
    pub bottleneck_port: u64,
    /// Total bottleneck rounds remaining (the shared FCT state).
    pub bottleneck_rounds: u32,
    pub roles: HashMap<u32, MemberRole>,
    pub fct_policy: Arc<BidPolicy>,
    pub deadline_policy: Arc<BidPolicy>,
}

impl CoflowBidder {
    /// Current bid for a member: bottleneck members use the shared
    /// bottleneck-rounds state, others their own remaining rounds with live
    /// slack up to the bottleneck completion estimate.
    pub fn bid(&self, flow_id: u32, own_rounds: u32) -> f64 {
        match self.roles.get(&flow_id) {
            Some(MemberRole::Bottleneck) => self.fct_policy.bid_fct(self.bottleneck_rounds),
            Some(MemberRole::NonBottleneck { .. }) => self.deadline_policy.bid_deadline(
                own_rounds,
                self.bottleneck_rounds as i64 - own_rounds as i64,
            ),
            None => 0.0,
        }
    }

    /// Recomputes the bottleneck and member roles from fresh remaining-bytes
    /// figures, reusing the solved policy tables. Called whenever progress or
    /// membership changes could move the bottleneck.
    pub fn reassign(&mut self, members: &[CoflowFlow], host_bytes_per_round: u64) {
        let Some((port, rounds)) = bottleneck_of(members) else {
            return;
        };
        self.bottleneck_port = port;
        self.bottleneck_rounds = rounds.max(1);
        self.roles.clear();
        for m in members {
            let crosses = m.path.iter().any(|&(p, _)| p == port);
            let role = if crosses {
                MemberRole::Bottleneck
            } else {
                let own = port_rounds(m.remaining_bytes, host_bytes_per_round).max(1);
                MemberRole::NonBottleneck {
                    slack: self.bottleneck_rounds.saturating_sub(own),
                }
            };
            self.roles.insert(m.flow_id, role);
        }
    }
}

/// Rounds a port needs to drain the coflow bytes crossing it.
fn port_rounds(bytes: u64, bytes_per_round: u64) -> u32 {
    bytes.div_ceil(bytes_per_round.max(1)) as u32
}

/// The port with the most remaining work per unit capacity and its round
/// count; ties break toward the lower port key.
fn bottleneck_of(members: &[CoflowFlow]) -> Option<(u64, u32)> {
    let mut per_port: HashMap<u64, (u64, u64)> = HashMap::new();
    for m in members {
        for &(port, cap) in &m.path {
            let e = per_port.entry(port).or_insert((0, cap));
            e.0 += m.remaining_bytes;
            e.1 = cap;
        }
    }
    per_port
        .iter()
        .max_by(|(ka, (ba, ca)), (kb, (bb, cb))| {
            let ra = *ba as f64 / *ca as f64;
            let rb = *bb as f64 / *cb as f64;
            ra.partial_cmp(&rb).unwrap().then_with(|| kb.cmp(ka))
        })
        .map(|(&port, &(bytes, cap))| (port, port_rounds(bytes, cap)))
}

/// Identifies the bottleneck and assigns each member its policy. Recompute
/// whenever membership or remaining bytes move the bottleneck.
pub fn coflow_bids(
    members: &[CoflowFlow],
    dist: &PriceDistribution,
    w: f64,
    horizon: u32,
    budget: f64,
    host_bytes_per_round: u64,
) -> Result<CoflowBidder, SolveError> {
    if members.is_empty() {
        return Err(SolveError::EmptyCoflow);
    }
    let (bottleneck_port, rounds) = bottleneck_of(members).ok_or(SolveError::EmptyCoflow)?;
    let bottleneck_rounds = rounds.max(1);

    let f_max = bottleneck_rounds.min(horizon);
    let fct_policy = Arc::new(solve_fct(dist, w, horizon, f_max)?);
    let d_max = bottleneck_rounds.max(1);
    let (deadline_policy, _) = solve_deadline(dist, budget, f_max.max(1), d_max)?;
    let deadline_policy = Arc::new(deadline_policy);

    let mut roles = HashMap::new();
    for m in members {
        let crosses = m.path.iter().any(|&(p, _)| p == bottleneck_port);
        let role = if crosses {
            MemberRole::Bottleneck
        } else {
            let own = port_rounds(m.remaining_bytes, host_bytes_per_round).max(1);
            MemberRole::NonBottleneck {
                slack: bottleneck_rounds.saturating_sub(own),
            }
        };
        roles.insert(m.flow_id, role);
    }
    Ok(CoflowBidder {
        bottleneck_port,
        bottleneck_rounds,
        roles,
        fct_policy,
        deadline_policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist() -> PriceDistribution {
        PriceDistribution::uniform_prior(0.0, 10.0, 256).unwrap()
    }

    #[test]
    fn singleton_coflow_reduces_to_the_fct_policy() {
        let round = 1000u64;
        let members = vec![CoflowFlow {
            flow_id: 1,
            remaining_bytes: 5 * round,
            path: vec![(7, round)],
        }];
        let d = dist();
        let bidder = coflow_bids(&members, &d, 20.0, 64, 100.0, round).unwrap();
        assert_eq!(bidder.bottleneck_port, 7);
        assert_eq!(bidder.bottleneck_rounds, 5);
        assert_eq!(bidder.roles[&1], MemberRole::Bottleneck);
        let direct = solve_fct(&d, 20.0, 64, 5).unwrap();
        assert_eq!(bidder.bid(1, 5), direct.bid_fct(5));
    }

    #[test]
    fn bottleneck_rule_arithmetic() {
        // Sizes 10 and 2 units on distinct equal-capacity ports: the 10-unit
        // port is the bottleneck and the short flow gets slack 10 - 2 = 8.
        let round = 100u64;
        let members = vec![
            CoflowFlow {
                flow_id: 1,
                remaining_bytes: 10 * round,
                path: vec![(1, round)],
            },
            CoflowFlow {
                flow_id: 2,
                remaining_bytes: 2 * round,
                path: vec![(2, round)],
            },
        ];
        let bidder = coflow_bids(&members, &dist(), 20.0, 64, 100.0, round).unwrap();
        assert_eq!(bidder.bottleneck_port, 1);
        assert_eq!(bidder.bottleneck_rounds, 10);
        assert_eq!(bidder.roles[&1], MemberRole::Bottleneck);
        assert_eq!(bidder.roles[&2], MemberRole::NonBottleneck { slack: 8 });
    }

    #[test]
    fn single_port_coflow_is_all_bottleneck() {
        let round = 100u64;
        let members: Vec<CoflowFlow> = (0..4)
            .map(|i| CoflowFlow {
                flow_id: i,
                remaining_bytes: (i as u64 + 1) * round,
                path: vec![(9, round)],
            })
            .collect();
        let bidder = coflow_bids(&members, &dist(), 20.0, 64, 100.0, round).unwrap();
        assert_eq!(bidder.bottleneck_rounds, 10);
        for m in &members {
            assert_eq!(bidder.roles[&m.flow_id], MemberRole::Bottleneck);
        }
        // Pure SEBF: every member bids by total remaining on the shared port.
        let b = bidder.bid(0, 1);
        for m in &members {
            assert_eq!(bidder.bid(m.flow_id, 3), b);
        }
    }

    #[test]
    fn empty_coflow_is_an_error() {
        assert!(matches!(
            coflow_bids(&[], &dist(), 20.0, 64, 100.0, 100),
            Err(SolveError::EmptyCoflow)
        ));
    }
}
