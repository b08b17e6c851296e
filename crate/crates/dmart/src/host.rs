//! Sender-side transport: one probe per RTT carrying the fresh bid, rate
//! gating on the end-to-end auction status, SYN-as-probe startup, bypass for
//! sub-RTT flows, objective-state updates, telemetry logging, and deferred
//! settlement.

use crate::bidding::State;
use crate::protocol::{units_to_dollars, HeaderFlags, MarketHeader};

/// Objective class tags carried through to the flow record CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveClass {
    Fct,
    Deadline,
    Fairness,
    Coflow,
    BestEffort,
}

impl ObjectiveClass {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveClass::Fct => "fct",
            ObjectiveClass::Deadline => "deadline",
            ObjectiveClass::Fairness => "fairness",
            ObjectiveClass::Coflow => "coflow",
            ObjectiveClass::BestEffort => "best_effort",
        }
    }
}

/// Sender-side per-flow objective and progress state.
#[derive(Debug)]
pub struct FlowState {
    pub flow_id: u32,
    pub app_id: u8,
    pub size_bytes: u64,
    pub arrival_ns: u64,
    pub class: ObjectiveClass,
    /// Bytes not yet handed to the NIC.
    pub unsent_bytes: u64,
    /// Bytes acknowledged end to end.
    pub acked_bytes: u64,
    /// Deadline slack in RTTs; decremented on confirmed losing rounds.
    pub slack: i64,
    /// EWMA throughput in [0, 1] (fairness flows).
    pub ewma_throughput: f64,
    pub ewma_alpha: f64,
    pub won_last_rtt: bool,
    /// Deferred charges in currency units, summed over won rounds and links.
    pub accrued_charge_units: u64,
    /// (time ns, end-to-end max price units) per probe ACK.
    pub telemetry_log: Vec<(u64, u32)>,
    pub bypass: bool,
    pub rounds_won: u64,
    pub rounds_lost: u64,
    pub completed_at: Option<u64>,
    /// Start of the flow's current round; rounds are spaced at least one RTT
    /// apart so a fast ACK path cannot out-clock the line rate.
    pub last_round_at: Option<u64>,
    /// First ACK reporting an end-to-end loss, and first data emission.
    pub first_loss_ack_at: Option<u64>,
    pub first_send_at: Option<u64>,
    /// Coflow id when the flow is a coflow member.
    pub coflow: Option<u32>,
    /// Monotone counter matching probes to their ACKs; stale ACKs are ignored.
    pub probe_generation: u64,
}

/// Bytes a host can move in one RTT at line rate; the auction round quantum
/// and the bypass eligibility bound.
pub fn round_bytes(host_bps: u64, rtt_ns: u64) -> u64 {
    host_bps * rtt_ns / 8 / 1_000_000_000
}

/// Remaining full-rate rounds needed for `bytes`.
pub fn rounds_for(bytes: u64, round_bytes: u64) -> u32 {
    bytes.div_ceil(round_bytes.max(1)) as u32
}

impl FlowState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        flow_id: u32,
        app_id: u8,
        size_bytes: u64,
        arrival_ns: u64,
        class: ObjectiveClass,
        slack_rtts: i64,
        ewma_alpha: f64,
        ewma_x0: f64,
        round_bytes: u64,
        coflow: Option<u32>,
    ) -> Self {
        FlowState {
            flow_id,
            app_id,
            size_bytes,
            arrival_ns,
            class,
            unsent_bytes: size_bytes,
            acked_bytes: 0,
            slack: slack_rtts,
            ewma_throughput: ewma_x0,
            ewma_alpha,
            won_last_rtt: false,
            accrued_charge_units: 0,
            telemetry_log: Vec::new(),
            bypass: size_bytes <= round_bytes,
            rounds_won: 0,
            rounds_lost: 0,
            completed_at: None,
            last_round_at: None,
            first_loss_ack_at: None,
            first_send_at: None,
            coflow,
            probe_generation: 0,
        }
    }

    /// Remaining full-rate rounds (the F state).
    pub fn remaining_rounds(&self, round_bytes: u64) -> u32 {
        rounds_for(self.unsent_bytes, round_bytes)
    }

    /// The objective state the bid policy is indexed by.
    pub fn objective_state(&self, round_bytes: u64) -> State {
        match self.class {
            ObjectiveClass::Fct | ObjectiveClass::Coflow => State::Fct {
                f: self.remaining_rounds(round_bytes),
            },
            ObjectiveClass::Deadline => State::Deadline {
                f: self.remaining_rounds(round_bytes),
                d: self.slack,
            },
            ObjectiveClass::Fairness => State::Fairness {
                x: self.ewma_throughput,
            },
            ObjectiveClass::BestEffort => State::Constant,
        }
    }

    /// Header for the next probe (or the SYN, which registers bids the same
    /// way). `prev_e2e_status` reports whether the flow won all path auctions
    /// in the previous RTT.
    pub fn probe_header(&self, bid_units: u32, first: bool) -> MarketHeader {
        MarketHeader {
            flow_id: self.flow_id,
            app_id: self.app_id,
            bid: bid_units,
            telemetry: 0,
            flags: HeaderFlags {
                auction_status: true,
                probe: true,
                prev_e2e_status: first || self.won_last_rtt,
                bypass: false,
            },
        }
    }

    /// Applies an echoed probe ACK. ACKs from an older probe generation are
    /// stale and ignored. Returns true if the ACK was fresh.
    pub fn on_probe_ack(&mut self, header: &MarketHeader, generation: u64, now: u64) -> bool {
        if generation != self.probe_generation {
            return false;
        }
        self.won_last_rtt = header.flags.auction_status;
        if !self.won_last_rtt && self.first_loss_ack_at.is_none() {
            self.first_loss_ack_at = Some(now);
        }
        self.telemetry_log.push((now, header.telemetry));
        true
    }

    /// Advances objective state at the start of a new round, after the
    /// previous round's outcome is known. Win: one round of service was
    /// earned (F shrinks via the bytes sent); loss: deadline slack burns and
    /// the EWMA decays.
    pub fn advance_round(&mut self) {
        let a = self.ewma_alpha;
        if self.won_last_rtt {
            self.rounds_won += 1;
            self.ewma_throughput = (1.0 - a) * self.ewma_throughput + a;
        } else {
            self.rounds_lost += 1;
            if self.class == ObjectiveClass::Deadline {
                self.slack -= 1;
            }
            self.ewma_throughput *= 1.0 - a;
        }
    }

    /// Bytes to hand to the NIC this round (a full RTT at line rate, or the
    /// tail of the flow).
    pub fn take_round_bytes(&mut self, round_bytes: u64) -> u64 {
        let n = self.unsent_bytes.min(round_bytes);
        self.unsent_bytes -= n;
        n
    }

    pub fn note_send(&mut self, now: u64) {
        if self.first_send_at.is_none() {
            self.first_send_at = Some(now);
        }
    }

    pub fn all_sent(&self) -> bool {
        self.unsent_bytes == 0
    }

    pub fn record_data_ack(&mut self, bytes: u64) {
        self.acked_bytes += bytes;
    }

    pub fn is_complete(&self) -> bool {
        self.acked_bytes >= self.size_bytes
    }

    /// Settlement on the last acked byte: the deferred aggregate charge and
    /// the completion metrics.
    pub fn settle(&mut self, now: u64, host_bps: u64, base_rtt_ns: u64) -> FlowRecord {
        self.completed_at = Some(now);
        let fct_ns = now.saturating_sub(self.arrival_ns);
        let ideal_ns = self.size_bytes as f64 * 8.0 / host_bps as f64 * 1e9 + base_rtt_ns as f64;
        FlowRecord {
            flow_id: self.flow_id,
            app_id: self.app_id,
            objective: self.class,
            size_bytes: self.size_bytes,
            start_ns: self.arrival_ns,
            fct_us: fct_ns as f64 / 1000.0,
            slowdown: fct_ns as f64 / ideal_ns,
            deadline_met: match self.class {
                ObjectiveClass::Deadline => Some(self.slack >= 0),
                _ => None,
            },
            coflow: self.coflow,
            charges_dollars: units_to_dollars_u64(self.accrued_charge_units),
            rounds_won: self.rounds_won,
            bypass: self.bypass,
        }
    }
}

fn units_to_dollars_u64(units: u64) -> f64 {
    units as f64 / 256.0
}

/// Settled per-flow record; one CSV row.
#[derive(Debug, Clone, Copy)]
pub struct FlowRecord {
    pub flow_id: u32,
    pub app_id: u8,
    pub objective: ObjectiveClass,
    pub size_bytes: u64,
    pub start_ns: u64,
    pub fct_us: f64,
    pub slowdown: f64,
    pub deadline_met: Option<bool>,
    pub coflow: Option<u32>,
    pub charges_dollars: f64,
    pub rounds_won: u64,
    pub bypass: bool,
}

impl FlowRecord {
    pub const CSV_HEADER: &'static str =
        "flow_id,app_id,objective,size,start,fct_us,slowdown,deadline_met,cct_group,charges";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{:.6},{},{},{:.6}",
            self.flow_id,
            self.app_id,
            self.objective.name(),
            self.size_bytes,
            self.start_ns,
            self.fct_us,
            self.slowdown,
            self.deadline_met.map(|m| if m { "1" } else { "0" }).unwrap_or(""),
            self.coflow.map(|c| c.to_string()).unwrap_or_default(),
            self.charges_dollars,
        )
    }
}
