//! The switch model: per-egress-port repeated top-k second-price auctions
//! with current/next winner records, adaptive overcommitment, FIFO data
//! queuing with a separate control queue, telemetry stamping, and overload
//! reset. Ports also implement the two in-simulator baseline disciplines
//! (preemptive smallest-remaining-first and per-flow round robin).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};

use crate::protocol::MarketHeader;

/// Packet classes. Probes (and SYNs, which register bids the same way),
/// probe ACKs and data ACKs travel the control queue; data packets the
/// data queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketKind {
    Probe,
    Data,
    ProbeAck,
    DataAck,
}

impl PacketKind {
    pub fn is_control(self) -> bool {
        !matches!(self, PacketKind::Data)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Packet {
    pub flow: u32,
    pub kind: PacketKind,
    pub bytes: u32,
    /// Next path index to traverse.
    pub hop: u8,
    /// Traveling the reverse (ACK) path.
    pub reverse: bool,
    pub header: MarketHeader,
    /// Global ordinal; breaks scheduling ties deterministically.
    pub seq: u64,
    /// Remaining flow bytes when the packet was sent (priority tag for the
    /// smallest-remaining-first baseline).
    pub srpt_tag: u64,
}

/// Queue scheduling discipline of a port's data queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discipline {
    /// Market mode: plain FIFO, admission controlled by auctions.
    Fifo,
    /// Idealized SRPT: serve the packet with the smallest remaining-bytes tag.
    Srpt,
    /// Fair share: per-flow round robin, one packet per turn.
    RoundRobin,
}

#[derive(Debug)]
enum DataQueue {
    Fifo(VecDeque<Packet>),
    Srpt(BinaryHeap<Reverse<SrptEntry>>),
    Rr {
        queues: HashMap<u32, VecDeque<Packet>>,
        order: VecDeque<u32>,
    },
}

#[derive(Debug)]
struct SrptEntry {
    tag: u64,
    seq: u64,
    pkt: Packet,
}

impl PartialEq for SrptEntry {
    fn eq(&self, other: &Self) -> bool {
        (self.tag, self.seq) == (other.tag, other.seq)
    }
}

impl Eq for SrptEntry {}

impl Ord for SrptEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.tag, self.seq).cmp(&(other.tag, other.seq))
    }
}

impl PartialOrd for SrptEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-egress auction record pair plus the quota machinery.
#[derive(Debug)]
pub struct LinkAuctionState {
    pub k_default: u32,
    pub k_current: u32,
    pub k_cap: u32,
    /// Standing bid per flow: the latest registration and the epoch it was
    /// made in. Entries persist one full epoch past their registration so
    /// probes are judged against the standing market, not the arrival-order
    /// prefix of the current RTT.
    forming: BTreeMap<u32, (u32, u64)>,
    /// Top-k promoted at the last tick, sorted by (bid desc, flow asc).
    pub current_winners: Vec<(u32, u32)>,
    /// Winners of the epoch before that; a no-progress report only counts as
    /// downstream blocking if the flow was already entitled last RTT.
    prev_winners: Vec<u32>,
    /// Highest bid excluded at promotion, in currency units; 0 if none.
    pub clearing_price: u32,
    /// Current winners that reported no end-to-end progress this epoch.
    blocked: BTreeSet<u32>,
    saw_blocked_this_epoch: bool,
    /// Admissions suppressed for the next epoch after an overload.
    suppress_pending: bool,
    pub epoch_index: u64,
    /// Adaptive overcommitment switch (off reproduces the deadlock).
    pub adaptive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotaDirection {
    Up,
    Down,
}

impl LinkAuctionState {
    fn new(k_default: u32) -> Self {
        LinkAuctionState {
            k_default,
            k_current: k_default,
            k_cap: 4 * k_default,
            forming: BTreeMap::new(),
            current_winners: Vec::new(),
            prev_winners: Vec::new(),
            clearing_price: 0,
            blocked: BTreeSet::new(),
            saw_blocked_this_epoch: false,
            suppress_pending: false,
            epoch_index: 0,
            adaptive: true,
        }
    }

    /// Distinct-flow standing bids, highest first, ties broken by lower
    /// flow id.
    fn ranked(&self) -> Vec<(u32, u32)> {
        let mut v: Vec<(u32, u32)> = self.forming.iter().map(|(f, (b, _))| (*f, *b)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn is_current_winner(&self, flow: u32) -> bool {
        self.current_winners.iter().any(|(f, _)| *f == flow)
    }
}

/// One per-epoch stats row, dumped to the per-port CSV.
#[derive(Debug, Clone, Copy)]
pub struct PortEpochRow {
    pub epoch: u64,
    pub k_current: u32,
    pub clearing_price_units: u32,
    pub queue_bytes: u64,
    pub overload_count: u64,
    /// Peak data-queue occupancy during the epoch.
    pub max_queue_bytes: u64,
    /// Peak of (occupancy - k_current * BDP) sampled at every data enqueue.
    pub max_excess_bytes: i64,
}

#[derive(Debug, Default)]
pub struct PortCounters {
    pub overloads: u64,
    pub dropped_packets: u64,
    pub dropped_bytes: u64,
    pub malformed_probes: u64,
    pub tx_bytes: u64,
    pub tx_data_bytes: u64,
}

/// An egress link: auction state, a control FIFO served with strict priority,
/// and a byte-bounded data queue.
#[derive(Debug)]
pub struct SwitchPort {
    pub id: u32,
    pub capacity_bps: u64,
    /// One-RTT bandwidth-delay product of this link, in bytes.
    pub bdp_bytes: u64,
    pub auction: LinkAuctionState,
    control_q: VecDeque<Packet>,
    data_q: DataQueue,
    data_bytes: u64,
    busy: bool,
    pub overload_threshold: u64,
    pub hard_cap: u64,
    pub counters: PortCounters,
    pub epoch_rows: Vec<PortEpochRow>,
    /// Per-flow (rounds charged, total units) ledger for settlement checks.
    pub charge_ledger: HashMap<u32, (u64, u64)>,
    epoch_max_queue: u64,
    epoch_max_excess: i64,
    /// Clearing prices promoted so far, for offline aggregation.
    pub price_log: Vec<(u64, u32)>,
}

impl SwitchPort {
    pub fn new(id: u32, capacity_bps: u64, host_bps: u64, bdp_bytes: u64, disc: Discipline) -> Self {
        let k_default = capacity_bps.div_ceil(host_bps.max(1)).max(1) as u32;
        let data_q = match disc {
            Discipline::Fifo => DataQueue::Fifo(VecDeque::new()),
            Discipline::Srpt => DataQueue::Srpt(BinaryHeap::new()),
            Discipline::RoundRobin => DataQueue::Rr {
                queues: HashMap::new(),
                order: VecDeque::new(),
            },
        };
        SwitchPort {
            id,
            capacity_bps,
            bdp_bytes,
            auction: LinkAuctionState::new(k_default),
            control_q: VecDeque::new(),
            data_q,
            data_bytes: 0,
            busy: false,
            overload_threshold: 8 * bdp_bytes,
            hard_cap: 16 * bdp_bytes,
            counters: PortCounters::default(),
            epoch_rows: Vec::new(),
            charge_ledger: HashMap::new(),
            epoch_max_queue: 0,
            epoch_max_excess: i64::MIN,
            price_log: Vec::new(),
        }
    }

    pub fn data_queue_bytes(&self) -> u64 {
        self.data_bytes
    }

    /// Serialization time of a packet on this link.
    pub fn serialization_ns(&self, bytes: u32) -> u64 {
        (bytes as u64 * 8 * 1_000_000_000).div_ceil(self.capacity_bps)
    }

    /// Auction-side processing of a probe's forward pass: registers the fresh
    /// bid, reports blocking, provisionally clears the status of flows
    /// outside the running top-k, and stamps price telemetry.
    pub fn on_probe(&mut self, header: MarketHeader) -> MarketHeader {
        let mut h = header;
        if h.flags.bypass || !h.flags.probe {
            return h;
        }
        let a = &mut self.auction;
        a.forming.insert(h.flow_id, (h.bid, a.epoch_index + 1));
        if !h.flags.prev_e2e_status
            && a.is_current_winner(h.flow_id)
            && a.prev_winners.contains(&h.flow_id)
            && a.blocked.insert(h.flow_id)
        {
            a.saw_blocked_this_epoch = true;
            if a.adaptive {
                self.adapt_overcommitment(QuotaDirection::Up);
            }
        }
        let a = &self.auction;
        let ranked = a.ranked();
        let k = a.k_current as usize;
        let in_topk = ranked.iter().take(k).any(|(f, _)| *f == h.flow_id);
        if a.suppress_pending || !in_topk {
            // Sticky: once cleared the status stays cleared downstream.
            h.flags.auction_status = false;
        }
        // Winners observe the highest excluded bid, losers the lowest
        // admitted one.
        let signal = if in_topk {
            ranked.get(k).map(|(_, b)| *b).unwrap_or(0)
        } else {
            ranked
                .get(k.saturating_sub(1))
                .map(|(_, b)| *b)
                .unwrap_or(0)
        };
        h.merge_telemetry(signal)
    }

    /// Raw-bytes probe ingestion; malformed headers are dropped and counted.
    pub fn ingest_probe_bytes(&mut self, bytes: &[u8]) -> Option<MarketHeader> {
        match MarketHeader::decode(bytes) {
            Ok(h) => Some(self.on_probe(h)),
            Err(_) => {
                self.counters.malformed_probes += 1;
                None
            }
        }
    }

    /// Atomically promotes next winners to current winners, records the
    /// clearing price ((k+1)-th highest observed bid, or 0), applies quota
    /// decay, and starts collecting the next epoch's bids.
    pub fn epoch_tick(&mut self, epoch: u64) {
        let ranked = self.auction.ranked();
        self.auction.prev_winners = self
            .auction
            .current_winners
            .iter()
            .map(|(f, _)| *f)
            .collect();
        if self.auction.suppress_pending {
            self.auction.current_winners.clear();
            self.auction.clearing_price = 0;
            self.auction.suppress_pending = false;
        } else {
            let k = self.auction.k_current as usize;
            self.auction.current_winners = ranked.iter().take(k).copied().collect();
            self.auction.clearing_price = ranked.get(k).map(|(_, b)| *b).unwrap_or(0);
        }
        self.price_log.push((epoch, self.auction.clearing_price));
        self.epoch_rows.push(PortEpochRow {
            epoch,
            k_current: self.auction.k_current,
            clearing_price_units: self.auction.clearing_price,
            queue_bytes: self.data_bytes,
            overload_count: self.counters.overloads,
            max_queue_bytes: self.epoch_max_queue,
            max_excess_bytes: if self.epoch_max_excess == i64::MIN {
                i64::MIN
            } else {
                self.epoch_max_excess
            },
        });
        self.epoch_max_queue = self.data_bytes;
        self.epoch_max_excess = i64::MIN;
        if !self.auction.saw_blocked_this_epoch && self.auction.k_current > self.auction.k_default {
            self.adapt_overcommitment(QuotaDirection::Down);
        }
        self.auction.blocked.clear();
        self.auction.saw_blocked_this_epoch = false;
        // Evict registrations not refreshed during the epoch just promoted.
        self.auction.forming.retain(|_, (_, stamp)| *stamp >= epoch);
        self.auction.epoch_index = epoch;
    }

    /// Raises the winner quota to unblock a downstream-blocked winner, or
    /// decays it one step toward the default after a fully unblocked epoch.
    pub fn adapt_overcommitment(&mut self, direction: QuotaDirection) {
        let a = &mut self.auction;
        match direction {
            QuotaDirection::Up => a.k_current = (a.k_current + 1).min(a.k_cap),
            QuotaDirection::Down => a.k_current = (a.k_current - 1).max(a.k_default),
        }
    }

    /// Charges `flow` this port's clearing price if it is a current winner
    /// (0 otherwise) and records it in the ledger. Returns the units charged.
    pub fn charge(&mut self, flow: u32) -> u32 {
        if self.auction.is_current_winner(flow) {
            let price = self.auction.clearing_price;
            let e = self.charge_ledger.entry(flow).or_insert((0, 0));
            e.0 += 1;
            e.1 += price as u64;
            price
        } else {
            0
        }
    }

    /// True if the packet was accepted (control packets always are).
    pub fn enqueue(&mut self, pkt: Packet) -> bool {
        if pkt.kind.is_control() {
            self.control_q.push_back(pkt);
            return true;
        }
        let len = pkt.bytes as u64;
        if self.data_bytes + len > self.hard_cap {
            self.counters.dropped_packets += 1;
            self.counters.dropped_bytes += len;
            return false;
        }
        self.data_bytes += len;
        self.epoch_max_queue = self.epoch_max_queue.max(self.data_bytes);
        let excess = self.data_bytes as i64
            - (self.auction.k_current as u64 * self.bdp_bytes) as i64;
        self.epoch_max_excess = self.epoch_max_excess.max(excess);
        match &mut self.data_q {
            DataQueue::Fifo(q) => q.push_back(pkt),
            DataQueue::Srpt(q) => q.push(Reverse(SrptEntry {
                tag: pkt.srpt_tag,
                seq: pkt.seq,
                pkt,
            })),
            DataQueue::Rr { queues, order } => {
                let q = queues.entry(pkt.flow).or_default();
                if q.is_empty() {
                    order.push_back(pkt.flow);
                }
                q.push_back(pkt);
            }
        }
        if self.data_bytes > self.overload_threshold && !self.auction.suppress_pending {
            self.counters.overloads += 1;
            self.auction.current_winners.clear();
            self.auction.clearing_price = 0;
            self.auction.forming.clear();
            self.auction.suppress_pending = true;
        }
        true
    }

    fn pop_data(&mut self) -> Option<Packet> {
        match &mut self.data_q {
            DataQueue::Fifo(q) => q.pop_front(),
            DataQueue::Srpt(q) => q.pop().map(|e| e.0.pkt),
            DataQueue::Rr { queues, order } => {
                let flow = *order.front()?;
                let q = queues.get_mut(&flow).expect("rr queue exists");
                let pkt = q.pop_front().expect("rr queue non-empty");
                order.pop_front();
                if q.is_empty() {
                    queues.remove(&flow);
                } else {
                    order.push_back(flow);
                }
                Some(pkt)
            }
        }
    }

    /// Starts transmitting the next packet if the line is idle: control FIFO
    /// drains with strict priority over data. Returns the packet and its
    /// serialization time.
    pub fn start_tx(&mut self) -> Option<(Packet, u64)> {
        if self.busy {
            return None;
        }
        let pkt = if let Some(p) = self.control_q.pop_front() {
            Some(p)
        } else {
            let p = self.pop_data();
            if let Some(ref p) = p {
                self.data_bytes -= p.bytes as u64;
                self.counters.tx_data_bytes += p.bytes as u64;
            }
            p
        }?;
        self.busy = true;
        self.counters.tx_bytes += pkt.bytes as u64;
        Some((pkt, self.serialization_ns(pkt.bytes)))
    }

    pub fn tx_complete(&mut self) {
        debug_assert!(self.busy);
        self.busy = false;
    }

    pub fn is_idle(&self) -> bool {
        !self.busy
    }

    pub fn has_backlog(&self) -> bool {
        !self.control_q.is_empty() || self.data_bytes > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{dollars_to_units, HeaderFlags};

    fn probe(flow: u32, bid_dollars: f64) -> MarketHeader {
        MarketHeader {
            flow_id: flow,
            app_id: 0,
            bid: dollars_to_units(bid_dollars),
            telemetry: 0,
            flags: HeaderFlags {
                auction_status: true,
                probe: true,
                prev_e2e_status: true,
                bypass: false,
            },
        }
    }

    fn port(k_host_ratio: u64) -> SwitchPort {
        SwitchPort::new(0, 50_000_000_000 * k_host_ratio, 50_000_000_000, 62_500, Discipline::Fifo)
    }

    #[test]
    fn two_flow_walkthrough_keeps_winner_and_clears_loser() {
        let mut p = port(1);
        assert_eq!(p.auction.k_default, 1);
        let h1 = p.on_probe(probe(1, 30.0));
        assert!(h1.flags.auction_status);
        let h2 = p.on_probe(probe(2, 10.0));
        assert!(!h2.flags.auction_status, "loser's status cleared");
        // Loser observes the lowest admitted bid, winner the highest excluded.
        assert_eq!(h2.telemetry, dollars_to_units(30.0));
        let h1b = p.on_probe(probe(1, 30.0));
        assert_eq!(h1b.telemetry, dollars_to_units(10.0));
        p.epoch_tick(1);
        assert_eq!(p.auction.current_winners, vec![(1, dollars_to_units(30.0))]);
        assert_eq!(p.auction.clearing_price, dollars_to_units(10.0));
    }

    #[test]
    fn single_bidder_pays_nothing() {
        let mut p = port(1);
        let h = p.on_probe(probe(5, 12.0));
        assert!(h.flags.auction_status);
        assert_eq!(h.telemetry, 0);
        p.epoch_tick(1);
        assert_eq!(p.auction.clearing_price, 0);
        assert_eq!(p.charge(5), 0);
    }

    #[test]
    fn top_k_and_clearing_price_with_quota_two() {
        let mut p = port(1);
        p.auction.k_current = 2;
        for (f, b) in [(1u32, 9.0), (2, 7.0), (3, 5.0), (4, 3.0)] {
            p.on_probe(probe(f, b));
        }
        p.epoch_tick(1);
        let winners: Vec<u32> = p.auction.current_winners.iter().map(|(f, _)| *f).collect();
        assert_eq!(winners, vec![1, 2]);
        assert_eq!(p.auction.clearing_price, dollars_to_units(5.0));
        assert_eq!(p.charge(1), dollars_to_units(5.0));
        assert_eq!(p.charge(2), dollars_to_units(5.0));
        assert_eq!(p.charge(3), 0);
    }

    #[test]
    fn equal_bids_tie_break_by_lower_flow_id() {
        let mut p = port(1);
        p.on_probe(probe(2, 5.0));
        p.on_probe(probe(1, 5.0));
        p.epoch_tick(1);
        assert_eq!(p.auction.current_winners[0].0, 1);
        assert_eq!(p.auction.clearing_price, dollars_to_units(5.0));
    }

    #[test]
    fn blocked_winner_raises_quota_and_decay_returns_it() {
        let mut p = port(1);
        p.on_probe(probe(1, 20.0));
        p.epoch_tick(1);
        assert_eq!(p.auction.k_current, 1);
        // A no-progress report from a freshly promoted winner is not blocking
        // evidence (it simply lost the previous round here).
        let mut h = probe(1, 20.0);
        h.flags.prev_e2e_status = false;
        p.on_probe(h);
        assert_eq!(p.auction.k_current, 1);
        p.epoch_tick(2);
        // Now the flow was entitled last RTT and still reports no progress:
        // the quota bumps within the epoch.
        p.on_probe(h);
        assert_eq!(p.auction.k_current, 2);
        let h2 = p.on_probe(probe(2, 10.0));
        assert!(h2.flags.auction_status, "second flow admitted under k=2");
        p.epoch_tick(3);
        assert_eq!(p.auction.current_winners.len(), 2);
        // Three unblocked epochs decay 3 -> 2 -> 1 (cap at default).
        p.auction.k_current = 3;
        p.epoch_tick(4);
        assert_eq!(p.auction.k_current, 2);
        p.epoch_tick(5);
        assert_eq!(p.auction.k_current, 1);
        p.epoch_tick(6);
        assert_eq!(p.auction.k_current, 1);
    }

    #[test]
    fn quota_cap_is_four_times_default() {
        let mut p = port(1);
        for _ in 0..10 {
            p.adapt_overcommitment(QuotaDirection::Up);
        }
        assert_eq!(p.auction.k_current, 4);
    }

    #[test]
    fn spine_port_default_quota_matches_capacity_ratio() {
        let p = SwitchPort::new(
            0,
            200_000_000_000,
            50_000_000_000,
            250_000,
            Discipline::Fifo,
        );
        assert_eq!(p.auction.k_default, 4);
    }

    #[test]
    fn serialization_time_is_exact() {
        let p = port(1);
        assert_eq!(p.serialization_ns(1500), 240);
    }

    #[test]
    fn control_packets_skip_the_data_queue_and_preempt_it() {
        let mut p = port(1);
        let data = Packet {
            flow: 1,
            kind: PacketKind::Data,
            bytes: 1500,
            hop: 0,
            reverse: false,
            header: MarketHeader::default(),
            seq: 1,
            srpt_tag: 0,
        };
        assert!(p.enqueue(data));
        assert_eq!(p.data_queue_bytes(), 1500);
        let ctrl = Packet {
            kind: PacketKind::Probe,
            bytes: 64,
            seq: 2,
            ..data
        };
        assert!(p.enqueue(ctrl));
        assert_eq!(p.data_queue_bytes(), 1500, "probe stays out of data FIFO");
        let (first, _) = p.start_tx().unwrap();
        assert_eq!(first.kind, PacketKind::Probe);
        assert!(p.start_tx().is_none(), "line busy");
        p.tx_complete();
        let (second, ser) = p.start_tx().unwrap();
        assert_eq!(second.kind, PacketKind::Data);
        assert_eq!(ser, 240);
    }

    #[test]
    fn overload_clears_winners_and_suppresses_one_epoch() {
        let mut p = port(1);
        p.on_probe(probe(1, 5.0));
        p.epoch_tick(1);
        assert!(p.auction.is_current_winner(1));
        let mk = |seq: u64| Packet {
            flow: 1,
            kind: PacketKind::Data,
            bytes: 62_500,
            hop: 0,
            reverse: false,
            header: MarketHeader::default(),
            seq,
            srpt_tag: 0,
        };
        // 8 BDP threshold = 500 kB; the ninth BDP-sized packet crosses it.
        for s in 0..9 {
            assert!(p.enqueue(mk(s)));
        }
        assert_eq!(p.counters.overloads, 1);
        assert!(p.auction.current_winners.is_empty());
        let h = p.on_probe(probe(2, 50.0));
        assert!(!h.flags.auction_status, "no admissions while suppressed");
        p.epoch_tick(2);
        assert!(p.auction.current_winners.is_empty(), "one empty epoch");
        p.on_probe(probe(2, 50.0));
        p.epoch_tick(3);
        assert!(p.auction.is_current_winner(2), "admissions resume");
    }

    #[test]
    fn hard_cap_drops_with_counter() {
        let mut p = port(1);
        let mk = |seq: u64| Packet {
            flow: 1,
            kind: PacketKind::Data,
            bytes: 500_000,
            hop: 0,
            reverse: false,
            header: MarketHeader::default(),
            seq,
            srpt_tag: 0,
        };
        assert!(p.enqueue(mk(0)));
        assert!(p.enqueue(mk(1)));
        assert!(!p.enqueue(mk(2)), "16 BDP hard cap");
        assert_eq!(p.counters.dropped_packets, 1);
    }

    #[test]
    fn malformed_probe_bytes_are_counted_and_dropped() {
        let mut p = port(1);
        assert!(p.ingest_probe_bytes(&[0u8; 11]).is_none());
        let mut bytes = probe(1, 1.0).encode().unwrap();
        bytes[11] = 0x0d;
        assert!(p.ingest_probe_bytes(&bytes).is_none());
        assert_eq!(p.counters.malformed_probes, 2);
        assert!(p.ingest_probe_bytes(&probe(1, 1.0).encode().unwrap()).is_some());
    }

    #[test]
    fn round_robin_alternates_flows() {
        let mut p = SwitchPort::new(0, 10_000_000_000, 10_000_000_000, 12_500, Discipline::RoundRobin);
        let mk = |flow: u32, seq: u64| Packet {
            flow,
            kind: PacketKind::Data,
            bytes: 1000,
            hop: 0,
            reverse: false,
            header: MarketHeader::default(),
            seq,
            srpt_tag: 0,
        };
        for s in 0..3 {
            p.enqueue(mk(1, s));
        }
        for s in 3..5 {
            p.enqueue(mk(2, s));
        }
        let mut served = Vec::new();
        while let Some((pkt, _)) = p.start_tx() {
            served.push(pkt.flow);
            p.tx_complete();
        }
        assert_eq!(served, vec![1, 2, 1, 2, 1]);
    }

    #[test]
    fn srpt_serves_smallest_tag_first() {
        let mut p = SwitchPort::new(0, 10_000_000_000, 10_000_000_000, 12_500, Discipline::Srpt);
        let mk = |flow: u32, seq: u64, tag: u64| Packet {
            flow,
            kind: PacketKind::Data,
            bytes: 1000,
            hop: 0,
            reverse: false,
            header: MarketHeader::default(),
            seq,
            srpt_tag: tag,
        };
        p.enqueue(mk(1, 0, 50_000));
        p.enqueue(mk(2, 1, 2_000));
        p.enqueue(mk(3, 2, 9_000));
        let mut order = Vec::new();
        while let Some((pkt, _)) = p.start_tx() {
            order.push(pkt.flow);
            p.tx_complete();
        }
        assert_eq!(order, vec![2, 3, 1]);
    }
}
