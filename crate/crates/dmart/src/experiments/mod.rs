//! The experiment harness: per-epoch policy updates from the smoothed price
//! distribution, epoch simulation runs, scheduling metrics, in-simulator
//! baselines, convergence protocols, and plot-ready output files.

pub mod output;
pub mod scenarios;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bidding::{coflow_bids, solve_deadline, solve_fairness, solve_fct, BidPolicy, SolveError};
use crate::config::{ConfigError, ExperimentConfig};
use crate::engine::{
    EngineError, EngineParams, FlowInput, PolicyRef, SchedulerMode, Simulation, Topology,
};
use crate::fabric::PortEpochRow;
use crate::host::{FlowRecord, ObjectiveClass};
use crate::price::{ConvergenceReport, PriceDistribution, PriceError};
use crate::workload::{
    drift_step, poisson_arrivals, rate_for_load, DriftParams, DriftState, FlowSpec, ObjectiveMix,
    SizeDist, WorkloadError,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Price(#[from] PriceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

/// Bid policies for one epoch, solved against one price snapshot.
#[derive(Debug, Clone)]
pub struct PolicySet {
    pub fct: Arc<BidPolicy>,
    pub deadline: Arc<BidPolicy>,
    pub fairness: Arc<BidPolicy>,
    pub best_effort_bid: f64,
    pub price_version: u64,
}

/// Solves every objective against the (smoothed) global price distribution;
/// the once-per-epoch policy update.
pub fn solve_policies(
    cfg: &ExperimentConfig,
    dist: &PriceDistribution,
) -> Result<PolicySet, SolveError> {
    let o = &cfg.objectives;
    let fct = Arc::new(solve_fct(dist, o.fct_w, o.fct_horizon, o.fct_horizon)?);
    let (deadline, _) = solve_deadline(dist, o.deadline_budget, o.deadline_fmax, o.deadline_dmax)?;
    let (fairness, _) = solve_fairness(dist, o.fairness_w, o.fairness_alpha, o.fairness_bins)?;
    Ok(PolicySet {
        fct,
        deadline: Arc::new(deadline),
        fairness: Arc::new(fairness),
        best_effort_bid: o.best_effort_bid,
        price_version: dist.version(),
    })
}

fn mix_seed(seed: u64, epoch: u32, salt: u64) -> u64 {
    let mut z = seed ^ salt ^ ((epoch as u64) << 32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv64(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One epoch's injected flows, identical across scheduler modes for a given
/// (seed, epoch, drift state): the paired-comparison contract.
#[derive(Debug, Clone)]
pub struct EpochWorkload {
    pub flows: Vec<FlowSpec>,
    pub digest: u64,
    pub load: f64,
}

pub fn generate_epoch(
    cfg: &ExperimentConfig,
    drift: &DriftState,
    epoch: u32,
) -> Result<EpochWorkload, WorkloadError> {
    let w = &cfg.workload;
    let hosts = cfg.topology.racks * cfg.topology.hosts_per_rack;
    let rtt_us = cfg.engine.rtt_us;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch, 0x9e37));
    let short = SizeDist::by_name(&w.short_dist)?.scaled(w.short_scale);
    let long = SizeDist::by_name(&w.long_dist)?.scaled(w.long_scale);
    let mean_size =
        drift.short_frac * short.mean() + (1.0 - drift.short_frac) * long.mean();
    let rate = rate_for_load(drift.load, hosts, cfg.topology.host_gbps * 1_000_000_000, mean_size);
    let epoch_ns = cfg.epoch_ns();
    let arrivals = poisson_arrivals(rate, epoch_ns, &mut rng)?;

    let mut flows = Vec::with_capacity(arrivals.len());
    let base_id = epoch
        .checked_mul(1_000_000)
        .expect("epoch id space");
    let mut next_id = base_id;
    let uniform_pair = |rng: &mut ChaCha8Rng| {
        let src = rng.gen_range(0..hosts);
        let mut dst = rng.gen_range(0..hosts - 1);
        if dst >= src {
            dst += 1;
        }
        (src, dst)
    };
    let push_flow = |rng: &mut ChaCha8Rng,
                         flows: &mut Vec<FlowSpec>,
                         next_id: &mut u32,
                         at: u64,
                         class: ObjectiveClass,
                         is_short: bool,
                         hotspot: &[u32]| {
        let (src, mut dst) = uniform_pair(rng);
        if !hotspot.is_empty() {
            // Incast hotspot: concentrate destinations on the hot racks.
            let rack = hotspot[rng.gen_range(0..hotspot.len())];
            dst = rack * cfg.topology.hosts_per_rack
                + rng.gen_range(0..cfg.topology.hosts_per_rack);
            if dst == src {
                dst = (dst + 1) % hosts;
            }
        }
        let size = if is_short {
            short.sample(rng)
        } else {
            long.sample(rng)
        };
        let slack_rtts = if class == ObjectiveClass::Deadline {
            let us = rng.gen_range(w.deadline_slack_min_us..=w.deadline_slack_max_us);
            (us / rtt_us).ceil() as i64
        } else {
            0
        };
        flows.push(FlowSpec {
            flow_id: *next_id,
            app_id: class as u8,
            src,
            dst,
            size_bytes: size,
            arrival_ns: at,
            class,
            slack_rtts,
            coflow: None,
        });
        *next_id += 1;
    };

    let mix = drift.mix;
    for &at in &arrivals {
        let class = mix.draw(&mut rng);
        let is_short = class == ObjectiveClass::Fct && rng.gen::<f64>() < drift.short_frac;
        push_flow(&mut rng, &mut flows, &mut next_id, at, class, is_short, &[]);
    }
    if drift.burst {
        // Burst epochs double the short-flow arrival rate, sometimes
        // concentrated on two racks.
        let extra = poisson_arrivals(rate, epoch_ns, &mut rng)?;
        for &at in &extra {
            push_flow(
                &mut rng,
                &mut flows,
                &mut next_id,
                at,
                ObjectiveClass::Fct,
                true,
                &drift.hotspot_racks,
            );
        }
    }

    // Coflows: concurrent member batches, capped so members stay a small
    // share (<= ~10%) of the epoch's flow count.
    let member_cap = flows.len() / 10;
    let mut members_emitted = 0usize;
    for c in 0..w.coflows_per_epoch {
        let n = rng.gen_range(w.coflow_min_flows..=w.coflow_max_flows);
        if w.coflows_per_epoch > 1 && members_emitted + n as usize > member_cap.max(n as usize) {
            break;
        }
        let at = rng.gen_range(0..epoch_ns.max(1));
        let batch = crate::workload::gen_coflow(
            n,
            &long,
            hosts,
            at,
            base_id / 1_000_000 * 10_000 + c,
            next_id,
            ObjectiveClass::Coflow as u8,
            &mut rng,
        )?;
        next_id += batch.len() as u32;
        members_emitted += batch.len();
        flows.extend(batch);
    }
    flows.sort_by_key(|f| (f.arrival_ns, f.flow_id));

    let mut dump = String::from(FlowSpec::CSV_HEADER);
    for f in &flows {
        dump.push('\n');
        dump.push_str(&f.to_csv_row());
    }
    Ok(EpochWorkload {
        digest: fnv64(&dump),
        flows,
        load: drift.load,
    })
}

/// Scheduling-quality aggregates of one epoch.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub load: f64,
    pub flows_total: usize,
    pub flows_completed: usize,
    pub flows_reported: usize,
    pub avg_fct_us: f64,
    pub avg_slowdown: f64,
    pub latency_avg_slowdown: f64,
    pub latency_avg_fct_us: f64,
    pub deadline_miss_rate: Option<f64>,
    pub avg_cct_us: Option<f64>,
    pub fairness_p5_bw: Option<f64>,
    pub mean_price: f64,
    pub wasserstein_step: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,load,flows,completed,reported,avg_fct_us,avg_slowdown,latency_avg_slowdown,latency_avg_fct_us,deadline_miss_rate,avg_cct_us,fairness_p5_bw,mean_price,wasserstein_step";

    pub fn to_csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.6}")).unwrap_or_default()
        }
        format!(
            "{},{:.4},{},{},{},{:.3},{:.6},{:.6},{:.3},{},{},{},{:.6},{:.6}",
            self.epoch,
            self.load,
            self.flows_total,
            self.flows_completed,
            self.flows_reported,
            self.avg_fct_us,
            self.avg_slowdown,
            self.latency_avg_slowdown,
            self.latency_avg_fct_us,
            opt(self.deadline_miss_rate),
            opt(self.avg_cct_us),
            opt(self.fairness_p5_bw),
            self.mean_price,
            self.wasserstein_step,
        )
    }
}

/// Metrics over completed flows; static-load runs skip the leading
/// `warmup_frac` of completions (by arrival) as warm-up.
pub fn compute_metrics(
    records: &[FlowRecord],
    workload: &EpochWorkload,
    warmup_frac: f64,
    host_bps: u64,
    epoch: u32,
    mean_price: f64,
) -> EpochMetrics {
    let mut sorted: Vec<&FlowRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.start_ns, r.flow_id));
    let skip = (sorted.len() as f64 * warmup_frac) as usize;
    let reported = &sorted[skip.min(sorted.len())..];

    let mut n = 0usize;
    let mut slow_sum = 0.0;
    let mut fct_sum = 0.0;
    let mut lat_n = 0usize;
    let mut lat_slow = 0.0;
    let mut lat_fct = 0.0;
    let mut dl_n = 0usize;
    let mut dl_miss = 0usize;
    let mut fair_bw: Vec<f64> = Vec::new();
    let bytes_per_ns = host_bps as f64 / 8.0 / 1e9;
    for r in reported {
        n += 1;
        slow_sum += r.slowdown;
        fct_sum += r.fct_us;
        match r.objective {
            ObjectiveClass::Fct => {
                lat_n += 1;
                lat_slow += r.slowdown;
                lat_fct += r.fct_us;
            }
            ObjectiveClass::Deadline => {
                dl_n += 1;
                if r.deadline_met == Some(false) {
                    dl_miss += 1;
                }
            }
            ObjectiveClass::Fairness => {
                if r.fct_us > 0.0 {
                    fair_bw.push(r.size_bytes as f64 / (r.fct_us * 1000.0) / bytes_per_ns);
                }
            }
            _ => {}
        }
    }

    // Coflow completion time: the spread from the shared arrival to the last
    // member's finish, over coflows whose members all completed.
    let mut member_counts: std::collections::BTreeMap<u32, usize> = Default::default();
    for f in &workload.flows {
        if let Some(c) = f.coflow {
            *member_counts.entry(c).or_default() += 1;
        }
    }
    let mut group_done: std::collections::BTreeMap<u32, (usize, f64)> = Default::default();
    for r in records {
        if let Some(c) = r.coflow {
            let e = group_done.entry(c).or_insert((0, 0.0));
            e.0 += 1;
            let end_us = r.start_ns as f64 / 1000.0 + r.fct_us;
            e.1 = e.1.max(end_us);
        }
    }
    let mut ccts: Vec<f64> = Vec::new();
    for (c, (done, end_us)) in &group_done {
        if member_counts.get(c) == Some(done) {
            let arrival_us = workload
                .flows
                .iter()
                .find(|f| f.coflow == Some(*c))
                .map(|f| f.arrival_ns as f64 / 1000.0)
                .unwrap_or(0.0);
            ccts.push(end_us - arrival_us);
        }
    }

    fair_bw.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p5 = if fair_bw.is_empty() {
        None
    } else {
        Some(fair_bw[(fair_bw.len() as f64 * 0.05) as usize])
    };
    EpochMetrics {
        epoch,
        load: workload.load,
        flows_total: workload.flows.len(),
        flows_completed: records.len(),
        flows_reported: n,
        avg_fct_us: if n > 0 { fct_sum / n as f64 } else { 0.0 },
        avg_slowdown: if n > 0 { slow_sum / n as f64 } else { 0.0 },
        latency_avg_slowdown: if lat_n > 0 { lat_slow / lat_n as f64 } else { 0.0 },
        latency_avg_fct_us: if lat_n > 0 { lat_fct / lat_n as f64 } else { 0.0 },
        deadline_miss_rate: (dl_n > 0).then(|| dl_miss as f64 / dl_n as f64),
        avg_cct_us: (!ccts.is_empty()).then(|| ccts.iter().sum::<f64>() / ccts.len() as f64),
        fairness_p5_bw: p5,
        mean_price,
        wasserstein_step: 0.0,
    }
}

/// Everything one epoch run produces.
pub struct EpochResult {
    pub metrics: EpochMetrics,
    pub dist: PriceDistribution,
    pub records: Vec<FlowRecord>,
    pub digest: u64,
    pub port_rows: Vec<(u32, PortEpochRow)>,
    /// Max over ports of (data queue - k*BDP) sampled at enqueues, after the
    /// 20-RTT warmup. Non-positive means the queue bound held.
    pub max_queue_excess_after_warmup: i64,
    pub incomplete: usize,
}

pub fn engine_params(cfg: &ExperimentConfig, mode: SchedulerMode, epoch: u32) -> EngineParams {
    EngineParams {
        mode,
        rtt_ns: cfg.rtt_ns(),
        mtu_bytes: cfg.engine.mtu_bytes,
        control_bytes: cfg.engine.control_bytes,
        horizon_ns: (cfg.epoch_ns() as f64 * (1.0 + cfg.engine.drain_factor)) as u64,
        baseline_window_bdp: cfg.engine.baseline_window_bdp,
        probe_loss_rate: cfg.engine.probe_loss_rate,
        seed: mix_seed(cfg.seed, epoch, 0x51ed),
        overcommit: cfg.market.overcommit,
        trace_acks: false,
    }
}

pub fn build_topology(cfg: &ExperimentConfig) -> Result<Topology, EngineError> {
    let t = &cfg.topology;
    let topo = Topology::build_leaf_spine(
        t.racks,
        t.hosts_per_rack,
        t.host_gbps,
        t.spine_gbps,
        t.prop_delay_ns,
        t.host_proc_ns,
    )?;
    Ok(match t.spines {
        Some(s) => topo.with_spines(s),
        None => topo,
    })
}

/// Runs one epoch: fresh simulation, injected workload, telemetry aggregated
/// into the epoch's realized price distribution.
pub fn run_epoch(
    cfg: &ExperimentConfig,
    mode: SchedulerMode,
    policies: Option<&PolicySet>,
    price: Option<&PriceDistribution>,
    workload: &EpochWorkload,
    epoch: u32,
    warmup_frac: f64,
) -> Result<EpochResult, RunError> {
    let topo = build_topology(cfg)?;
    let params = engine_params(cfg, mode, epoch);
    let mut sim = Simulation::new(topo, params);
    for f in &workload.flows {
        let policy = match (mode, policies) {
            (SchedulerMode::Market, Some(p)) => match f.class {
                ObjectiveClass::Fct => PolicyRef::Fct(p.fct.clone()),
                ObjectiveClass::Deadline => PolicyRef::Deadline(p.deadline.clone()),
                ObjectiveClass::Fairness => PolicyRef::Fairness(p.fairness.clone()),
                ObjectiveClass::BestEffort => PolicyRef::BestEffort(p.best_effort_bid),
                ObjectiveClass::Coflow => PolicyRef::Coflow(f.coflow.unwrap_or(0)),
            },
            _ => PolicyRef::None,
        };
        sim.add_flow(FlowInput {
            flow_id: f.flow_id,
            app_id: f.app_id,
            src: f.src,
            dst: f.dst,
            size_bytes: f.size_bytes,
            arrival_ns: f.arrival_ns,
            class: f.class,
            slack_rtts: f.slack_rtts,
            ewma_alpha: cfg.objectives.fairness_alpha,
            policy,
            coflow: f.coflow,
        })?;
    }
    if mode == SchedulerMode::Market {
        if let Some(dist) = price {
            let o = &cfg.objectives;
            let cids: Vec<u32> = workload.flows.iter().filter_map(|f| f.coflow).collect();
            let mut seen = std::collections::BTreeSet::new();
            for cid in cids {
                if !seen.insert(cid) {
                    continue;
                }
                let members = sim.coflow_members(cid);
                let bidder = coflow_bids(
                    &members,
                    dist,
                    o.coflow_w,
                    o.coflow_horizon,
                    o.coflow_budget,
                    sim.round_bytes(),
                )?;
                sim.set_coflow_bidder(cid, bidder);
            }
        }
    }
    sim.run()?;

    let mut dist = PriceDistribution::new(cfg.price_pmax(), cfg.market.price_bins)
        .expect("positive support");
    for &s in &sim.telemetry_dollars {
        dist.record(s)?;
    }
    dist.set_version(epoch as u64 + 1);
    let mean_price = if dist.is_empty() { 0.0 } else { dist.mean()? };

    let metrics = compute_metrics(
        &sim.records,
        workload,
        warmup_frac,
        sim.topo.host_bps,
        epoch,
        mean_price,
    );
    let mut port_rows = Vec::new();
    let mut max_excess = i64::MIN;
    for p in sim.ports() {
        for row in &p.epoch_rows {
            if row.epoch > 20 && row.max_excess_bytes != i64::MIN {
                max_excess = max_excess.max(row.max_excess_bytes);
            }
            port_rows.push((p.id, *row));
        }
    }
    let incomplete = sim.incomplete_flows();
    Ok(EpochResult {
        metrics,
        dist,
        records: sim.records,
        digest: workload.digest,
        port_rows,
        max_queue_excess_after_warmup: max_excess,
        incomplete,
    })
}

/// Load schedule of a convergence protocol.
#[derive(Debug, Clone, Copy)]
pub enum ConvergenceProtocol {
    /// Fixed load from an assumed uniform prior.
    ColdStart,
    /// Load steps `from -> to` at `at_epoch`.
    StepLoad { from: f64, to: f64, at_epoch: u32 },
}

pub struct FixedPointOutcome {
    pub report: ConvergenceReport,
    pub metrics: Vec<EpochMetrics>,
    pub epochs: Vec<EpochResult>,
    pub final_dist: PriceDistribution,
}

/// The market operator iterated to its empirical fixed point: solve policies
/// against the smoothed distribution, run an epoch, measure the Wasserstein
/// step, smooth, repeat.
pub fn fixed_point_loop(
    cfg: &ExperimentConfig,
    protocol: ConvergenceProtocol,
    alpha: f64,
    epochs: u32,
) -> Result<FixedPointOutcome, RunError> {
    let mut report = ConvergenceReport::default();
    let mut results = Vec::new();
    let mut metrics_all = Vec::new();
    let mut smoothed = PriceDistribution::uniform_prior(0.0, cfg.price_pmax(), cfg.market.price_bins)?;
    let mut prev_realized: Option<PriceDistribution> = None;
    let mix = ObjectiveMix {
        fct: cfg.workload.mix_fct,
        deadline: cfg.workload.mix_deadline,
        fairness: cfg.workload.mix_fairness,
        best_effort: cfg.workload.mix_best_effort,
    }
    .normalized();
    for e in 0..epochs {
        let load = match protocol {
            ConvergenceProtocol::ColdStart => cfg.workload.load,
            ConvergenceProtocol::StepLoad { from, to, at_epoch } => {
                if e < at_epoch {
                    from
                } else {
                    to
                }
            }
        };
        let drift = DriftState {
            epoch: e,
            load,
            short_frac: cfg.workload.short_frac,
            mix,
            burst: false,
            hotspot_racks: Vec::new(),
        };
        let workload = generate_epoch(cfg, &drift, e)?;
        let policies = solve_policies(cfg, &smoothed)?;
        let mut result = run_epoch(
            cfg,
            SchedulerMode::Market,
            Some(&policies),
            Some(&smoothed),
            &workload,
            e,
            0.0,
        )?;
        let realized = result.dist.clone();
        let w = match (&prev_realized, realized.is_empty()) {
            (_, true) => 0.0,
            (None, false) => smoothed.wasserstein(&realized)?,
            (Some(prev), false) => {
                if prev.is_empty() {
                    0.0
                } else {
                    prev.wasserstein(&realized)?
                }
            }
        };
        let mean = result.metrics.mean_price;
        result.metrics.wasserstein_step = w;
        report.push(w, mean);
        if !realized.is_empty() {
            smoothed = smoothed.smooth(&realized, alpha)?;
        }
        prev_realized = Some(realized);
        metrics_all.push(result.metrics.clone());
        results.push(result);
    }
    Ok(FixedPointOutcome {
        report,
        metrics: metrics_all,
        epochs: results,
        final_dist: smoothed,
    })
}

/// A full multi-epoch run in any scheduler mode. Market mode updates policies
/// once per epoch from the smoothed distribution; baseline modes replay the
/// identical workload stream with their own queue discipline.
pub struct RunOutcome {
    pub mode: SchedulerMode,
    pub metrics: Vec<EpochMetrics>,
    pub epochs: Vec<EpochResult>,
    pub convergence: ConvergenceReport,
    pub digests: Vec<u64>,
}

pub fn run_experiment(cfg: &ExperimentConfig, mode: SchedulerMode) -> Result<RunOutcome, RunError> {
    let drift_params = DriftParams {
        base_load: cfg.drift.base_load,
        amplitude: cfg.drift.amplitude,
        period_epochs: cfg.drift.period_epochs,
        noise_sd: cfg.drift.noise_sd,
        walk_step: cfg.drift.walk_step,
        walk_prob: cfg.drift.walk_prob,
        burst_prob: cfg.drift.burst_prob,
        hotspot_prob: cfg.drift.hotspot_prob,
        ..DriftParams::default()
    };
    let mix = ObjectiveMix {
        fct: cfg.workload.mix_fct,
        deadline: cfg.workload.mix_deadline,
        fairness: cfg.workload.mix_fairness,
        best_effort: cfg.workload.mix_best_effort,
    }
    .normalized();
    // Drift runs report every flow; static runs skip the warm-up prefix.
    let warmup_frac = if cfg.drift.enabled { 0.0 } else { 0.4 };
    let mut drift_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0, 0xd21f));
    let mut drift = DriftState::initial(mix, cfg.workload.short_frac, &drift_params);
    if !cfg.drift.enabled {
        drift.load = cfg.workload.load;
    }

    let mut smoothed =
        PriceDistribution::uniform_prior(0.0, cfg.price_pmax(), cfg.market.price_bins)?;
    let mut prev_realized: Option<PriceDistribution> = None;
    let mut report = ConvergenceReport::default();
    let mut epochs = Vec::new();
    let mut metrics_all = Vec::new();
    let mut digests = Vec::new();

    for e in 0..cfg.workload.epochs {
        if cfg.drift.enabled && e > 0 {
            drift = drift_step(&drift, &drift_params, cfg.topology.racks, &mut drift_rng);
        }
        if !cfg.drift.enabled {
            drift.epoch = e;
            drift.load = cfg.workload.load;
        }
        let workload = generate_epoch(cfg, &drift, e)?;
        digests.push(workload.digest);
        let mut result = match mode {
            SchedulerMode::Market => {
                let policies = solve_policies(cfg, &smoothed)?;
                run_epoch(
                    cfg,
                    mode,
                    Some(&policies),
                    Some(&smoothed),
                    &workload,
                    e,
                    warmup_frac,
                )?
            }
            _ => run_epoch(cfg, mode, None, None, &workload, e, warmup_frac)?,
        };
        if mode == SchedulerMode::Market {
            let realized = result.dist.clone();
            let w = match (&prev_realized, realized.is_empty()) {
                (_, true) => 0.0,
                (None, false) => smoothed.wasserstein(&realized)?,
                (Some(prev), false) if !prev.is_empty() => prev.wasserstein(&realized)?,
                _ => 0.0,
            };
            result.metrics.wasserstein_step = w;
            report.push(w, result.metrics.mean_price);
            if !realized.is_empty() {
                smoothed = smoothed.smooth(&realized, cfg.market.smoothing_alpha)?;
            }
            prev_realized = Some(realized);
        }
        metrics_all.push(result.metrics.clone());
        epochs.push(result);
    }
    Ok(RunOutcome {
        mode,
        metrics: metrics_all,
        epochs,
        convergence: report,
        digests,
    })
}
