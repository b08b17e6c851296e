//! Deterministic seeded discrete-event core: event queue, leaf-spine
//! topology, flow-hash ECMP path selection, and the packet pipeline wiring
//! hosts and switch ports together. One simulation instance is strictly
//! single threaded; identical seed and config give bit-identical outputs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bidding::{BidPolicy, CoflowBidder, CoflowFlow, State};
use crate::fabric::{Discipline, Packet, PacketKind, SwitchPort};
use crate::host::{round_bytes, FlowRecord, FlowState, ObjectiveClass};
use crate::protocol::{dollars_to_units, MarketHeader};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid topology parameter: {0}")]
    BadTopology(String),
    #[error("unknown host {0}")]
    UnknownHost(u32),
    #[error("event scheduled in the past: {at} < {now}")]
    CausalityFault { at: u64, now: u64 },
}

/// Leaf-spine fabric dimensions and link parameters.
#[derive(Debug, Clone)]
pub struct Topology {
    pub racks: u32,
    pub hosts_per_rack: u32,
    pub spines: u32,
    pub host_bps: u64,
    pub spine_bps: u64,
    pub prop_delay_ns: u64,
    pub host_proc_ns: u64,
}

impl Topology {
    /// Builds the leaf-spine fabric: one leaf per rack, hosts at `host_gbps`,
    /// leaf-spine links at `spine_gbps`, spine count sized for full bisection
    /// (`ceil(R*H*host / spine)`).
    pub fn build_leaf_spine(
        racks: u32,
        hosts_per_rack: u32,
        host_gbps: u64,
        spine_gbps: u64,
        prop_delay_ns: u64,
        host_proc_ns: u64,
    ) -> Result<Topology, EngineError> {
        if racks == 0 || hosts_per_rack == 0 || host_gbps == 0 || spine_gbps == 0 {
            return Err(EngineError::BadTopology(format!(
                "all of racks={racks}, hosts_per_rack={hosts_per_rack}, host_gbps={host_gbps}, spine_gbps={spine_gbps} must be positive"
            )));
        }
        let spines =
            ((racks as u64 * hosts_per_rack as u64 * host_gbps).div_ceil(spine_gbps)).max(1) as u32;
        Ok(Topology {
            racks,
            hosts_per_rack,
            spines,
            host_bps: host_gbps * 1_000_000_000,
            spine_bps: spine_gbps * 1_000_000_000,
            prop_delay_ns,
            host_proc_ns,
        })
    }

    /// Pins the spine count (scenario topologies that need a single shared
    /// spine link).
    pub fn with_spines(mut self, spines: u32) -> Topology {
        self.spines = spines.max(1);
        self
    }

    pub fn hosts(&self) -> u32 {
        self.racks * self.hosts_per_rack
    }

    pub fn rack_of(&self, host: u32) -> u32 {
        host / self.hosts_per_rack
    }

    pub fn ports(&self) -> u32 {
        // host uplinks | leaf->spine | spine->leaf | leaf->host
        self.hosts() + self.racks * self.spines + self.spines * self.racks + self.hosts()
    }

    pub fn host_up(&self, host: u32) -> u32 {
        host
    }

    pub fn leaf_up(&self, leaf: u32, spine: u32) -> u32 {
        self.hosts() + leaf * self.spines + spine
    }

    pub fn spine_down(&self, spine: u32, leaf: u32) -> u32 {
        self.hosts() + self.racks * self.spines + spine * self.racks + leaf
    }

    pub fn leaf_down(&self, host: u32) -> u32 {
        self.hosts() + 2 * self.racks * self.spines + host
    }

    pub fn port_capacity_bps(&self, port: u32) -> u64 {
        let n = self.hosts();
        if port < n || port >= n + 2 * self.racks * self.spines {
            self.host_bps
        } else {
            self.spine_bps
        }
    }

    /// Stable flow-hash spine choice (FNV-1a over the flow tuple).
    pub fn ecmp_spine(&self, src: u32, dst: u32, flow_id: u32) -> u32 {
        let mut h: u64 = 0xcbf29ce484222325;
        for word in [src, dst, flow_id] {
            for b in word.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        (h % self.spines as u64) as u32
    }

    /// Ordered egress-port list from `src` to `dst`. Intra-rack pairs take
    /// two hops; cross-rack traffic hashes onto a spine.
    pub fn ecmp_path(&self, src: u32, dst: u32, flow_id: u32) -> Result<Vec<u32>, EngineError> {
        if src >= self.hosts() {
            return Err(EngineError::UnknownHost(src));
        }
        if dst >= self.hosts() {
            return Err(EngineError::UnknownHost(dst));
        }
        let (rs, rd) = (self.rack_of(src), self.rack_of(dst));
        if rs == rd {
            return Ok(vec![self.host_up(src), self.leaf_down(dst)]);
        }
        let spine = self.ecmp_spine(src, dst, flow_id);
        Ok(vec![
            self.host_up(src),
            self.leaf_up(rs, spine),
            self.spine_down(spine, rd),
            self.leaf_down(dst),
        ])
    }

    /// Propagation delay of a port's link; host stack processing is folded
    /// into the host-adjacent hops.
    pub fn port_prop_ns(&self, port: u32) -> u64 {
        let n = self.hosts();
        if port < n || port >= n + 2 * self.racks * self.spines {
            self.prop_delay_ns + self.host_proc_ns
        } else {
            self.prop_delay_ns
        }
    }

    /// Host uplinks are sender NICs, not switch egresses: they carry no
    /// auction state and probes pass through them unprocessed.
    pub fn is_switch_egress(&self, port: u32) -> bool {
        port >= self.hosts()
    }

    /// Destination host of a leaf->host port, if it is one.
    fn leaf_down_host(&self, port: u32) -> Option<u32> {
        let base = self.hosts() + 2 * self.racks * self.spines;
        (port >= base).then(|| port - base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerMode {
    Market,
    IdealSrpt,
    FairShare,
}

impl SchedulerMode {
    fn discipline(self) -> Discipline {
        match self {
            SchedulerMode::Market => Discipline::Fifo,
            SchedulerMode::IdealSrpt => Discipline::Srpt,
            SchedulerMode::FairShare => Discipline::RoundRobin,
        }
    }
}

/// Bid source for a market-mode flow.
#[derive(Debug, Clone)]
pub enum PolicyRef {
    Fct(Arc<BidPolicy>),
    Deadline(Arc<BidPolicy>),
    Fairness(Arc<BidPolicy>),
    BestEffort(f64),
    /// Member of the coflow with this id; bids via the coflow agent.
    Coflow(u32),
    /// Baseline modes carry no policy.
    None,
}

#[derive(Debug, Clone)]
pub struct FlowInput {
    pub flow_id: u32,
    pub app_id: u8,
    pub src: u32,
    pub dst: u32,
    pub size_bytes: u64,
    pub arrival_ns: u64,
    pub class: ObjectiveClass,
    pub slack_rtts: i64,
    pub ewma_alpha: f64,
    pub policy: PolicyRef,
    pub coflow: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Conservation {
    pub injected_bytes: u64,
    pub delivered_bytes: u64,
    pub dropped_bytes: u64,
}

#[derive(Debug)]
enum EventKind {
    FlowArrival(u32),
    TxDone { port: u32, pkt: Packet },
    Arrive { port: u32, pkt: Packet },
    EpochTick,
    ProbeRetry { flow: u32, generation: u64 },
    HostRound(u32),
}

#[derive(Debug)]
struct Ev {
    t: u64,
    ord: u64,
    kind: EventKind,
}

impl PartialEq for Ev {
    fn eq(&self, other: &Self) -> bool {
        (self.t, self.ord) == (other.t, other.ord)
    }
}
impl Eq for Ev {}
impl Ord for Ev {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.t, self.ord).cmp(&(other.t, other.ord))
    }
}
impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineParams {
    pub mode: SchedulerMode,
    pub rtt_ns: u64,
    pub mtu_bytes: u32,
    pub control_bytes: u32,
    pub horizon_ns: u64,
    /// In-flight cap for the baseline modes, in host BDPs.
    pub baseline_window_bdp: u32,
    /// Probe drop probability (loss model; off by default).
    pub probe_loss_rate: f64,
    pub seed: u64,
    /// Adaptive overcommitment at the ports.
    pub overcommit: bool,
    /// Record (flow, time, total acked bytes) per data ACK; scenario-scale
    /// runs only.
    pub trace_acks: bool,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            mode: SchedulerMode::Market,
            rtt_ns: 10_000,
            mtu_bytes: 1500,
            control_bytes: 64,
            horizon_ns: u64::MAX,
            baseline_window_bdp: 4,
            probe_loss_rate: 0.0,
            seed: 0,
            overcommit: true,
            trace_acks: false,
        }
    }
}

struct FlowEntry {
    state: FlowState,
    path: Vec<u32>,
    rev_path: Vec<u32>,
    policy: PolicyRef,
    inflight_bytes: u64,
    done: bool,
}

struct CoflowRuntime {
    members: Vec<u32>,
    bidder: Option<CoflowBidder>,
}

/// One simulation instance.
pub struct Simulation {
    pub params: EngineParams,
    pub topo: Topology,
    ports: Vec<SwitchPort>,
    flows: Vec<FlowEntry>,
    coflows: BTreeMap<u32, CoflowRuntime>,
    heap: BinaryHeap<Reverse<Ev>>,
    now: u64,
    ord: u64,
    seq: u64,
    epoch: u64,
    live_events: usize,
    remaining_flows: usize,
    pub counters: Conservation,
    pub records: Vec<FlowRecord>,
    /// Per-round end-to-end max-price telemetry, in dollars, logged once per
    /// fresh probe ACK; the raw material for the epoch's price distribution.
    pub telemetry_dollars: Vec<f64>,
    round_bytes: u64,
    loss_rng: ChaCha8Rng,
    pub ecmp_spine_hist: Vec<u64>,
    pub ack_trace: Vec<(u32, u64, u64)>,
    /// (flow idx, time, won, telemetry units) per fresh probe ACK when
    /// tracing is on.
    pub probe_trace: Vec<(u32, u64, bool, u32)>,
}

impl Simulation {
    pub fn new(topo: Topology, params: EngineParams) -> Simulation {
        let disc = params.mode.discipline();
        let mut ports = Vec::with_capacity(topo.ports() as usize);
        for p in 0..topo.ports() {
            let cap = topo.port_capacity_bps(p);
            let bdp = cap * params.rtt_ns / 8 / 1_000_000_000;
            // Host NICs arbitrate their own flows locally: in market mode the
            // sender knows its flows' bids and serves the most urgent first;
            // switch egresses keep the single data FIFO.
            let port_disc = if params.mode == SchedulerMode::Market && !topo.is_switch_egress(p) {
                Discipline::Srpt
            } else {
                disc
            };
            let mut port = SwitchPort::new(p, cap, topo.host_bps, bdp.max(1), port_disc);
            port.auction.adaptive = params.overcommit;
            ports.push(port);
        }
        let round_bytes = round_bytes(topo.host_bps, params.rtt_ns);
        let spines = topo.spines as usize;
        let mut sim = Simulation {
            params,
            topo,
            ports,
            flows: Vec::new(),
            coflows: BTreeMap::new(),
            heap: BinaryHeap::new(),
            now: 0,
            ord: 0,
            seq: 0,
            epoch: 0,
            live_events: 0,
            remaining_flows: 0,
            counters: Conservation::default(),
            records: Vec::new(),
            telemetry_dollars: Vec::new(),
            round_bytes,
            loss_rng: ChaCha8Rng::seed_from_u64(params.seed ^ 0x70b3),
            ecmp_spine_hist: vec![0; spines],
            ack_trace: Vec::new(),
            probe_trace: Vec::new(),
        };
        if sim.params.mode == SchedulerMode::Market {
            sim.schedule(sim.params.rtt_ns, EventKind::EpochTick);
        }
        sim
    }

    pub fn round_bytes(&self) -> u64 {
        self.round_bytes
    }

    pub fn ports(&self) -> &[SwitchPort] {
        &self.ports
    }

    pub fn port(&self, id: u32) -> &SwitchPort {
        &self.ports[id as usize]
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn flow_state(&self, idx: u32) -> &FlowState {
        &self.flows[idx as usize].state
    }

    pub fn add_flow(&mut self, input: FlowInput) -> Result<u32, EngineError> {
        let path = self.topo.ecmp_path(input.src, input.dst, input.flow_id)?;
        if self.topo.rack_of(input.src) != self.topo.rack_of(input.dst) {
            let spine = self.topo.ecmp_spine(input.src, input.dst, input.flow_id);
            self.ecmp_spine_hist[spine as usize] += 1;
        }
        // ACKs retrace the same spine in the reverse direction.
        let rev_path = if self.topo.rack_of(input.src) == self.topo.rack_of(input.dst) {
            vec![self.topo.host_up(input.dst), self.topo.leaf_down(input.src)]
        } else {
            let spine = self.topo.ecmp_spine(input.src, input.dst, input.flow_id);
            vec![
                self.topo.host_up(input.dst),
                self.topo.leaf_up(self.topo.rack_of(input.dst), spine),
                self.topo.spine_down(spine, self.topo.rack_of(input.src)),
                self.topo.leaf_down(input.src),
            ]
        };
        let state = FlowState::new(
            input.flow_id,
            input.app_id,
            input.size_bytes,
            input.arrival_ns,
            input.class,
            input.slack_rtts,
            input.ewma_alpha,
            0.5,
            self.round_bytes,
            input.coflow,
        );
        let idx = self.flows.len() as u32;
        if let Some(cid) = input.coflow {
            self.coflows
                .entry(cid)
                .or_insert_with(|| CoflowRuntime {
                    members: Vec::new(),
                    bidder: None,
                })
                .members
                .push(idx);
        }
        self.flows.push(FlowEntry {
            state,
            path,
            rev_path,
            policy: input.policy,
            inflight_bytes: 0,
            done: false,
        });
        self.remaining_flows += 1;
        self.schedule(input.arrival_ns, EventKind::FlowArrival(idx));
        Ok(idx)
    }

    pub fn set_coflow_bidder(&mut self, coflow: u32, bidder: CoflowBidder) {
        self.coflows
            .entry(coflow)
            .or_insert_with(|| CoflowRuntime {
                members: Vec::new(),
                bidder: None,
            })
            .bidder = Some(bidder);
    }

    /// Member views for solving a coflow's bid assignment.
    pub fn coflow_members(&self, coflow: u32) -> Vec<CoflowFlow> {
        let Some(rt) = self.coflows.get(&coflow) else {
            return Vec::new();
        };
        rt.members
            .iter()
            .map(|&i| {
                let f = &self.flows[i as usize];
                CoflowFlow {
                    flow_id: f.state.flow_id,
                    remaining_bytes: f.state.unsent_bytes,
                    path: f
                        .path
                        .iter()
                        .map(|&p| {
                            let cap = self.topo.port_capacity_bps(p);
                            (p as u64, cap * self.params.rtt_ns / 8 / 1_000_000_000)
                        })
                        .collect(),
                }
            })
            .collect()
    }

    fn schedule(&mut self, at: u64, kind: EventKind) {
        debug_assert!(at >= self.now, "event in the past");
        if !matches!(kind, EventKind::EpochTick) {
            self.live_events += 1;
        }
        self.heap.push(Reverse(Ev {
            t: at,
            ord: self.ord,
            kind,
        }));
        self.ord += 1;
    }

    /// Drains events in (timestamp, ordinal) order until the horizon or until
    /// all flows settle.
    pub fn run(&mut self) -> Result<(), EngineError> {
        loop {
            match self.heap.peek() {
                Some(Reverse(ev)) if ev.t <= self.params.horizon_ns => {}
                _ => break,
            }
            let Reverse(ev) = self.heap.pop().expect("peeked");
            if ev.t < self.now {
                return Err(EngineError::CausalityFault {
                    at: ev.t,
                    now: self.now,
                });
            }
            self.now = ev.t;
            let tick = matches!(ev.kind, EventKind::EpochTick);
            if !tick {
                self.live_events -= 1;
            }
            match ev.kind {
                EventKind::FlowArrival(idx) => self.on_arrival(idx),
                EventKind::TxDone { port, pkt } => self.on_tx_done(port, pkt),
                EventKind::Arrive { port, pkt } => self.on_arrive(port, pkt),
                EventKind::EpochTick => self.on_epoch_tick(),
                EventKind::ProbeRetry { flow, generation } => self.on_probe_retry(flow, generation),
                EventKind::HostRound(flow) => self.host_round(flow),
            }
            if self.remaining_flows == 0 && self.live_events == 0 {
                break;
            }
        }
        Ok(())
    }

    fn on_epoch_tick(&mut self) {
        self.epoch += 1;
        let first_switch = self.topo.hosts() as usize;
        for p in &mut self.ports[first_switch..] {
            p.epoch_tick(self.epoch);
        }
        if self.remaining_flows > 0 || self.live_events > 0 {
            let at = self.now + self.params.rtt_ns;
            if at <= self.params.horizon_ns {
                self.schedule(at, EventKind::EpochTick);
            }
        }
    }

    fn on_arrival(&mut self, idx: u32) {
        let entry = &mut self.flows[idx as usize];
        if entry.state.size_bytes == 0 {
            let rec = entry
                .state
                .settle(self.now, self.topo.host_bps, self.params.rtt_ns);
            self.records.push(rec);
            entry.done = true;
            self.remaining_flows -= 1;
            return;
        }
        match self.params.mode {
            SchedulerMode::Market => {
                if entry.state.bypass {
                    // Sub-RTT flows skip auctions and send immediately.
                    let n = entry.state.take_round_bytes(u64::MAX);
                    self.emit_data(idx, n, true);
                } else {
                    self.refresh_coflow(idx);
                    self.emit_probe(idx, true);
                }
            }
            SchedulerMode::IdealSrpt | SchedulerMode::FairShare => {
                self.pump_baseline(idx);
            }
        }
    }

    fn compute_bid_units(&self, idx: u32) -> u32 {
        let entry = &self.flows[idx as usize];
        let state = entry.state.objective_state(self.round_bytes);
        let dollars = match (&entry.policy, state) {
            (PolicyRef::Fct(p), State::Fct { f }) => p.bid_fct(f),
            (PolicyRef::Deadline(p), State::Deadline { f, d }) => p.bid_deadline(f, d),
            (PolicyRef::Fairness(p), State::Fairness { x }) => p.bid_fairness(x),
            (PolicyRef::BestEffort(bid), _) => *bid,
            (PolicyRef::Coflow(cid), _) => {
                let own = entry.state.remaining_rounds(self.round_bytes);
                self.coflows
                    .get(cid)
                    .and_then(|rt| rt.bidder.as_ref())
                    .map(|b| b.bid(entry.state.flow_id, own))
                    .unwrap_or(0.0)
            }
            (PolicyRef::None, _) => 0.0,
            (p, s) => {
                debug_assert!(false, "policy {p:?} does not fit state {s:?}");
                0.0
            }
        };
        dollars_to_units(dollars)
    }

    /// Re-derives the coflow bottleneck after progress; cheap, table reuse.
    fn refresh_coflow(&mut self, idx: u32) {
        let Some(cid) = self.flows[idx as usize].state.coflow else {
            return;
        };
        let members = self.coflow_members(cid);
        let host_round = self.round_bytes;
        if let Some(rt) = self.coflows.get_mut(&cid) {
            if let Some(b) = rt.bidder.as_mut() {
                b.reassign(&members, host_round);
            }
        }
    }

    fn emit_probe(&mut self, idx: u32, first: bool) {
        let bid = self.compute_bid_units(idx);
        let entry = &mut self.flows[idx as usize];
        let header = entry.state.probe_header(bid, first);
        let generation = entry.state.probe_generation;
        let pkt = Packet {
            flow: idx,
            kind: PacketKind::Probe,
            bytes: self.params.control_bytes,
            hop: 1,
            reverse: false,
            header,
            seq: self.seq,
            srpt_tag: generation,
        };
        self.seq += 1;
        if self.params.probe_loss_rate > 0.0
            && self.loss_rng.gen::<f64>() < self.params.probe_loss_rate
        {
            // Probe lost in the stack; the retry timer recovers it.
        } else {
            // The first hop is the sender's own NIC; auctions start at the
            // first switch egress.
            let first_port = self.flows[idx as usize].path[0];
            self.offer(first_port, pkt);
        }
        if self.params.probe_loss_rate > 0.0 {
            self.schedule(
                self.now + 2 * self.params.rtt_ns,
                EventKind::ProbeRetry {
                    flow: idx,
                    generation,
                },
            );
        }
    }

    /// Advances one auction round: state transition on the latest outcome, a
    /// fresh probe, and (on a win) one RTT worth of data plus its charges.
    fn host_round(&mut self, idx: u32) {
        let entry = &mut self.flows[idx as usize];
        if entry.done {
            return;
        }
        entry.state.last_round_at = Some(self.now);
        entry.state.advance_round();
        let won = entry.state.won_last_rtt;
        // NIC backpressure: the TX ring holds at most two rounds; a squeezed
        // flow keeps its bytes and keeps bidding.
        let nic = entry.path[0];
        let bytes = if won {
            let free = (2 * self.round_bytes).saturating_sub(
                self.ports[nic as usize].data_queue_bytes(),
            );
            let quantum = self.round_bytes.min(free);
            self.flows[idx as usize].state.take_round_bytes(quantum)
        } else {
            0
        };
        if won && bytes > 0 {
            self.refresh_coflow(idx);
        }
        let all_sent = self.flows[idx as usize].state.all_sent();
        if !all_sent {
            self.emit_probe(idx, false);
        }
        if bytes > 0 {
            self.emit_data(idx, bytes, false);
        }
    }

    fn on_probe_retry(&mut self, idx: u32, generation: u64) {
        let entry = &self.flows[idx as usize];
        if entry.done || entry.state.all_sent() || entry.state.probe_generation != generation {
            return;
        }
        self.emit_probe(idx, false);
    }

    /// Splits a round's worth of bytes into MTU packets and charges the
    /// path's clearing prices (market mode, non-bypass).
    fn emit_data(&mut self, idx: u32, bytes: u64, bypass: bool) {
        if bytes == 0 {
            return;
        }
        let path0 = self.flows[idx as usize].path[0];
        if !bypass && self.params.mode == SchedulerMode::Market {
            let path = self.flows[idx as usize].path.clone();
            let flow_id = self.flows[idx as usize].state.flow_id;
            let mut charged: u64 = 0;
            for p in path {
                if self.topo.is_switch_egress(p) {
                    charged += self.ports[p as usize].charge(flow_id) as u64;
                }
            }
            self.flows[idx as usize].state.accrued_charge_units += charged;
        }
        let bid_units = if bypass { u32::MAX } else { self.compute_bid_units(idx) };
        let entry = &mut self.flows[idx as usize];
        let mut header = MarketHeader {
            flow_id: entry.state.flow_id,
            app_id: entry.state.app_id,
            bid: 0,
            telemetry: 0,
            ..Default::default()
        };
        header.flags.bypass = bypass;
        // NIC priority: higher bid drains first (tag sorts ascending).
        let srpt_tag = match self.params.mode {
            SchedulerMode::Market => (u32::MAX - bid_units) as u64,
            _ => entry.state.unsent_bytes + bytes,
        };
        let mut left = bytes;
        let mtu = self.params.mtu_bytes as u64;
        let mut packets = Vec::new();
        while left > 0 {
            let n = left.min(mtu) as u32;
            left -= n as u64;
            packets.push(Packet {
                flow: idx,
                kind: PacketKind::Data,
                bytes: n,
                hop: 1,
                reverse: false,
                header,
                seq: self.seq,
                srpt_tag,
            });
            self.seq += 1;
        }
        entry.inflight_bytes += bytes;
        entry.state.note_send(self.now);
        self.counters.injected_bytes += bytes;
        for pkt in packets {
            self.offer(path0, pkt);
        }
    }

    /// Baseline modes: keep up to the window limit in flight, tagging packets
    /// with the remaining flow bytes at send time.
    fn pump_baseline(&mut self, idx: u32) {
        let window = self.params.baseline_window_bdp as u64 * self.round_bytes;
        loop {
            let entry = &mut self.flows[idx as usize];
            if entry.state.unsent_bytes == 0 || entry.inflight_bytes >= window {
                break;
            }
            let remaining = entry.state.unsent_bytes;
            let n = remaining.min(self.params.mtu_bytes as u64);
            entry.state.unsent_bytes -= n;
            entry.inflight_bytes += n;
            self.counters.injected_bytes += n;
            let pkt = Packet {
                flow: idx,
                kind: PacketKind::Data,
                bytes: n as u32,
                hop: 1,
                reverse: false,
                header: MarketHeader {
                    flow_id: entry.state.flow_id,
                    ..Default::default()
                },
                seq: self.seq,
                srpt_tag: remaining,
            };
            self.seq += 1;
            let path0 = self.flows[idx as usize].path[0];
            self.offer(path0, pkt);
        }
    }

    fn offer(&mut self, port: u32, pkt: Packet) {
        let accepted = self.ports[port as usize].enqueue(pkt);
        if !accepted {
            self.counters.dropped_bytes += pkt.bytes as u64;
            self.flows[pkt.flow as usize].inflight_bytes -= pkt.bytes as u64;
            return;
        }
        if let Some((next, ser)) = self.ports[port as usize].start_tx() {
            self.schedule(self.now + ser, EventKind::TxDone { port, pkt: next });
        }
    }

    fn on_tx_done(&mut self, port: u32, pkt: Packet) {
        self.ports[port as usize].tx_complete();
        let prop = self.topo.port_prop_ns(port);
        self.schedule(self.now + prop, EventKind::Arrive { port, pkt });
        if let Some((next, ser)) = self.ports[port as usize].start_tx() {
            self.schedule(self.now + ser, EventKind::TxDone { port, pkt: next });
        }
    }

    fn on_arrive(&mut self, port: u32, mut pkt: Packet) {
        let (path_len, next_port) = {
            let entry = &self.flows[pkt.flow as usize];
            let path = if pkt.reverse { &entry.rev_path } else { &entry.path };
            (path.len(), path.get(pkt.hop as usize).copied())
        };
        if (pkt.hop as usize) < path_len {
            let next = next_port.expect("hop within path");
            pkt.hop += 1;
            if pkt.kind == PacketKind::Probe && !pkt.reverse && self.topo.is_switch_egress(next) {
                pkt.header = self.ports[next as usize].on_probe(pkt.header);
            }
            self.offer(next, pkt);
            return;
        }
        debug_assert!(self.topo.leaf_down_host(port).is_some());
        if pkt.reverse {
            self.deliver_ack(pkt);
        } else {
            self.deliver_forward(pkt);
        }
    }

    /// Destination host: echo probes, count and ACK data.
    fn deliver_forward(&mut self, pkt: Packet) {
        match pkt.kind {
            PacketKind::Probe => {
                let echo = Packet {
                    kind: PacketKind::ProbeAck,
                    bytes: self.params.control_bytes,
                    hop: 1,
                    reverse: true,
                    ..pkt
                };
                let p0 = self.flows[pkt.flow as usize].rev_path[0];
                self.offer(p0, echo);
            }
            PacketKind::Data => {
                self.counters.delivered_bytes += pkt.bytes as u64;
                let ack = Packet {
                    kind: PacketKind::DataAck,
                    bytes: self.params.control_bytes,
                    hop: 1,
                    reverse: true,
                    // Acked byte count rides in the tag field.
                    srpt_tag: pkt.bytes as u64,
                    ..pkt
                };
                let p0 = self.flows[pkt.flow as usize].rev_path[0];
                self.offer(p0, ack);
            }
            PacketKind::ProbeAck | PacketKind::DataAck => unreachable!("acks travel reverse"),
        }
    }

    /// Source host: probe ACKs clock the next round, data ACKs settle bytes.
    fn deliver_ack(&mut self, pkt: Packet) {
        let idx = pkt.flow;
        match pkt.kind {
            PacketKind::ProbeAck => {
                let fresh = {
                    let entry = &mut self.flows[idx as usize];
                    entry
                        .state
                        .on_probe_ack(&pkt.header, pkt.srpt_tag, self.now)
                };
                if !fresh {
                    return;
                }
                self.telemetry_dollars
                    .push(pkt.header.telemetry as f64 / 256.0);
                if self.params.trace_acks {
                    self.probe_trace.push((
                        idx,
                        self.now,
                        pkt.header.flags.auction_status,
                        pkt.header.telemetry,
                    ));
                }
                self.flows[idx as usize].state.probe_generation += 1;
                // One round per RTT: an early ACK waits for the boundary so a
                // fast control path cannot out-clock the line rate.
                let due = self.flows[idx as usize]
                    .state
                    .last_round_at
                    .map(|t| t + self.params.rtt_ns)
                    .unwrap_or(self.now);
                if due > self.now {
                    self.schedule(due, EventKind::HostRound(idx));
                } else {
                    self.host_round(idx);
                }
            }
            PacketKind::DataAck => {
                let n = pkt.srpt_tag;
                let entry = &mut self.flows[idx as usize];
                entry.state.record_data_ack(n);
                if self.params.trace_acks {
                    let total = entry.state.acked_bytes;
                    self.ack_trace.push((idx, self.now, total));
                }
                entry.inflight_bytes -= n;
                if entry.state.is_complete() && !entry.done {
                    entry.done = true;
                    let rec = entry
                        .state
                        .settle(self.now, self.topo.host_bps, self.params.rtt_ns);
                    self.records.push(rec);
                    self.remaining_flows -= 1;
                } else if self.params.mode != SchedulerMode::Market {
                    self.pump_baseline(idx);
                }
            }
            _ => unreachable!("forward kinds handled at the destination"),
        }
    }

    /// Bytes still inside the fabric: queued at ports or riding in-flight
    /// events. Used by the conservation check.
    pub fn in_flight_bytes(&self) -> u64 {
        let queued: u64 = self.ports.iter().map(|p| p.data_queue_bytes()).sum();
        let transiting: u64 = self
            .heap
            .iter()
            .map(|Reverse(ev)| match &ev.kind {
                EventKind::TxDone { pkt, .. } | EventKind::Arrive { pkt, .. }
                    if pkt.kind == PacketKind::Data && !pkt.reverse =>
                {
                    pkt.bytes as u64
                }
                _ => 0,
            })
            .sum();
        queued + transiting
    }

    /// Flows that never settled (horizon truncation).
    pub fn incomplete_flows(&self) -> usize {
        self.remaining_flows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_topo() -> Topology {
        Topology::build_leaf_spine(4, 4, 10, 40, 1000, 250).unwrap()
    }

    #[test]
    fn paper_scale_topology_dimensions() {
        let t = Topology::build_leaf_spine(9, 16, 50, 200, 1000, 250).unwrap();
        assert_eq!(t.hosts(), 144);
        assert_eq!(t.spines, 36);
        assert!(t.spines as u64 * t.spine_bps >= t.hosts() as u64 * t.host_bps);
    }

    #[test]
    fn desk_scale_topology_dimensions() {
        let t = desk_topo();
        assert_eq!(t.hosts(), 16);
        assert_eq!(t.spines, 4);
        assert_eq!(t.ports(), 16 + 16 + 16 + 16);
    }

    #[test]
    fn single_rack_paths_skip_the_spine() {
        let t = Topology::build_leaf_spine(1, 4, 10, 40, 1000, 250).unwrap();
        let p = t.ecmp_path(0, 3, 9).unwrap();
        assert_eq!(p, vec![t.host_up(0), t.leaf_down(3)]);
    }

    #[test]
    fn ecmp_is_deterministic_and_spread() {
        let t = desk_topo();
        let a = t.ecmp_path(0, 12, 77).unwrap();
        let b = t.ecmp_path(0, 12, 77).unwrap();
        assert_eq!(a, b);
        // Chi-square over 10^4 random-ish tuples: no spine should be starved
        // or dominant (critical value for 3 dof at alpha=0.01 is 11.34).
        let mut counts = [0u64; 4];
        let mut n = 0u64;
        for flow in 0..10_000u32 {
            let src = flow % 16;
            let dst = (flow * 7 + 3) % 16;
            if t.rack_of(src) == t.rack_of(dst) {
                continue;
            }
            counts[t.ecmp_spine(src, dst, flow) as usize] += 1;
            n += 1;
        }
        let expect = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| (*c as f64 - expect).powi(2) / expect)
            .sum();
        assert!(chi2 < 11.34, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn unknown_hosts_are_rejected() {
        let t = desk_topo();
        assert!(t.ecmp_path(0, 99, 1).is_err());
    }

    fn one_flow_input(flow_id: u32, src: u32, dst: u32, bytes: u64, at: u64) -> FlowInput {
        FlowInput {
            flow_id,
            app_id: 0,
            src,
            dst,
            size_bytes: bytes,
            arrival_ns: at,
            class: ObjectiveClass::BestEffort,
            slack_rtts: 0,
            ewma_alpha: 0.1,
            policy: PolicyRef::BestEffort(5.0),
            coflow: None,
        }
    }

    #[test]
    fn empty_simulation_terminates_immediately() {
        let mut sim = Simulation::new(desk_topo(), EngineParams::default());
        sim.run().unwrap();
        assert_eq!(sim.records.len(), 0);
    }

    #[test]
    fn single_uncontended_flow_completes_with_low_slowdown() {
        let mut sim = Simulation::new(desk_topo(), EngineParams::default());
        // 125 kB cross-rack: 10 rounds at 12.5 kB per RTT.
        sim.add_flow(one_flow_input(1, 0, 12, 125_000, 0)).unwrap();
        sim.run().unwrap();
        assert_eq!(sim.records.len(), 1);
        let rec = sim.records[0];
        assert!(!rec.bypass);
        assert_eq!(rec.rounds_won, 10);
        // Ideal is 100 us + RTT; probing costs about one extra RTT plus the
        // ACK tail.
        assert!(rec.slowdown < 1.35, "slowdown {}", rec.slowdown);
        assert_eq!(rec.charges_dollars, 0.0, "no contention, no charges");
        assert_eq!(sim.counters.injected_bytes, 125_000);
        assert_eq!(sim.counters.delivered_bytes, 125_000);
        assert_eq!(sim.counters.dropped_bytes, 0);
        assert_eq!(sim.in_flight_bytes(), 0);
    }

    #[test]
    fn bypass_flow_skips_auctions_and_charges_nothing() {
        let mut sim = Simulation::new(desk_topo(), EngineParams::default());
        sim.add_flow(one_flow_input(1, 0, 5, 10_000, 0)).unwrap();
        sim.run().unwrap();
        let rec = sim.records[0];
        assert!(rec.bypass);
        assert_eq!(rec.charges_dollars, 0.0);
        assert_eq!(rec.rounds_won, 0, "no auction rounds");
        assert!(rec.fct_us < 30.0);
    }

    #[test]
    fn contended_pair_prices_the_link_and_slows_the_loser() {
        let mut sim = Simulation::new(desk_topo(), EngineParams::default());
        let mut hi = one_flow_input(1, 0, 12, 125_000, 0);
        hi.policy = PolicyRef::BestEffort(30.0);
        let mut lo = one_flow_input(2, 1, 12, 125_000, 0);
        lo.policy = PolicyRef::BestEffort(10.0);
        sim.add_flow(hi).unwrap();
        sim.add_flow(lo).unwrap();
        sim.run().unwrap();
        assert_eq!(sim.records.len(), 2);
        let r1 = sim.records.iter().find(|r| r.flow_id == 1).unwrap();
        let r2 = sim.records.iter().find(|r| r.flow_id == 2).unwrap();
        assert!(r2.fct_us > r1.fct_us, "loser finishes after winner");
        assert!(r1.charges_dollars > 0.0, "winner pays the clearing price");
        // The contended leaf->host port saw a nonzero clearing price.
        let port = sim.port(sim.topo.leaf_down(12));
        assert!(port.price_log.iter().any(|(_, p)| *p > 0));
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let run = || {
            let mut sim = Simulation::new(desk_topo(), EngineParams::default());
            for i in 0..20u32 {
                let src = i % 16;
                let dst = (i * 5 + 2) % 16;
                if src == dst {
                    continue;
                }
                let mut f = one_flow_input(i, src, dst, 40_000 + 7_000 * i as u64, 500 * i as u64);
                f.policy = PolicyRef::BestEffort(1.0 + i as f64);
                sim.add_flow(f).unwrap();
            }
            sim.run().unwrap();
            let mut rows: Vec<String> = sim.records.iter().map(|r| r.to_csv_row()).collect();
            rows.sort();
            rows.join("\n")
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn conservation_holds_mid_run_at_a_hard_horizon() {
        let mut params = EngineParams::default();
        params.horizon_ns = 40_000; // cut mid-transfer
        let mut sim = Simulation::new(desk_topo(), params);
        sim.add_flow(one_flow_input(1, 0, 12, 2_000_000, 0)).unwrap();
        sim.add_flow(one_flow_input(2, 1, 12, 2_000_000, 0)).unwrap();
        sim.run().unwrap();
        let c = sim.counters;
        assert_eq!(
            c.injected_bytes,
            c.delivered_bytes + sim.in_flight_bytes() + c.dropped_bytes
        );
        assert_eq!(c.dropped_bytes, 0);
    }

    #[test]
    fn probe_loss_is_recovered_by_the_retry_timer() {
        let mut params = EngineParams::default();
        params.probe_loss_rate = 0.3;
        params.seed = 9;
        let mut sim = Simulation::new(desk_topo(), params);
        sim.add_flow(one_flow_input(1, 0, 12, 125_000, 0)).unwrap();
        sim.run().unwrap();
        assert_eq!(sim.records.len(), 1, "flow completes despite probe loss");
    }

    #[test]
    fn srpt_mode_lets_short_flows_preempt() {
        let mut params = EngineParams::default();
        params.mode = SchedulerMode::IdealSrpt;
        let mut sim = Simulation::new(desk_topo(), params);
        let mut long = one_flow_input(1, 0, 12, 3_000_000, 0);
        long.policy = PolicyRef::None;
        let mut short = one_flow_input(2, 1, 12, 60_000, 200_000);
        short.policy = PolicyRef::None;
        sim.add_flow(long).unwrap();
        sim.add_flow(short).unwrap();
        sim.run().unwrap();
        let s = sim.records.iter().find(|r| r.flow_id == 2).unwrap();
        assert!(
            s.slowdown < 2.0,
            "short flow must cut ahead of the long one: {}",
            s.slowdown
        );
    }

    #[test]
    fn fair_share_mode_splits_capacity_evenly() {
        let mut params = EngineParams::default();
        params.mode = SchedulerMode::FairShare;
        let mut sim = Simulation::new(desk_topo(), params);
        for f in 0..2u32 {
            let mut input = one_flow_input(f + 1, f, 12, 1_000_000, 0);
            input.policy = PolicyRef::None;
            sim.add_flow(input).unwrap();
        }
        sim.run().unwrap();
        let f1 = sim.records.iter().find(|r| r.flow_id == 1).unwrap();
        let f2 = sim.records.iter().find(|r| r.flow_id == 2).unwrap();
        let ratio = f1.fct_us / f2.fct_us;
        assert!(
            (0.95..=1.05).contains(&ratio),
            "equal backlogged flows finish together, ratio {ratio}"
        );
    }
}
