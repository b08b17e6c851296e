//! Flow and coflow generation: size distribution families (uniform range or
//! loadable inverse-CDF tables), Poisson arrivals calibrated to an offered
//! load, concurrent coflow batches, and the multi-epoch drift process
//! (diurnal load, sticky random-walk mixes, bursts, hotspots).

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::host::ObjectiveClass;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("unknown size distribution {0:?}")]
    UnknownDistribution(String),
    #[error("malformed CDF table: {0}")]
    MalformedTable(String),
    #[error("arrival rate must be positive, got {0}")]
    BadRate(f64),
    #[error("invalid workload parameter: {0}")]
    BadParams(String),
}

/// One flow to inject, scheduler-agnostic.
#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub flow_id: u32,
    pub app_id: u8,
    pub src: u32,
    pub dst: u32,
    pub size_bytes: u64,
    pub arrival_ns: u64,
    pub class: ObjectiveClass,
    /// Deadline slack in RTTs (deadline flows).
    pub slack_rtts: i64,
    pub coflow: Option<u32>,
}

impl FlowSpec {
    pub const CSV_HEADER: &'static str =
        "flow_id,app_id,src,dst,size_bytes,arrival_ns,objective,slack_rtts,coflow";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.flow_id,
            self.app_id,
            self.src,
            self.dst,
            self.size_bytes,
            self.arrival_ns,
            self.class.name(),
            self.slack_rtts,
            self.coflow.map(|c| c.to_string()).unwrap_or_default(),
        )
    }
}

/// Inverse-CDF table over flow sizes: `size_bytes,cum_prob` rows with
/// cum_prob strictly increasing to 1.0. Sampling interpolates linearly in
/// bytes between rows; mass below the first row sits at the first size.
#[derive(Debug, Clone)]
pub struct CdfTable {
    points: Vec<(u64, f64)>,
}

impl CdfTable {
    pub fn parse_csv(text: &str) -> Result<CdfTable, WorkloadError> {
        let mut points: Vec<(u64, f64)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("size_bytes")) {
                continue;
            }
            let mut parts = line.split(',');
            let size: u64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| WorkloadError::MalformedTable(format!("line {lineno}: bad size")))?;
            let cum: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| WorkloadError::MalformedTable(format!("line {lineno}: bad cum_prob")))?;
            if parts.next().is_some() {
                return Err(WorkloadError::MalformedTable(format!(
                    "line {lineno}: too many fields"
                )));
            }
            if size == 0 {
                return Err(WorkloadError::MalformedTable(format!(
                    "line {lineno}: size must be positive"
                )));
            }
            if !(0.0..=1.0).contains(&cum) {
                return Err(WorkloadError::MalformedTable(format!(
                    "line {lineno}: cum_prob {cum} outside [0,1]"
                )));
            }
            if let Some(&(psize, pcum)) = points.last() {
                if size <= psize || cum <= pcum {
                    return Err(WorkloadError::MalformedTable(format!(
                        "line {lineno}: sizes and cum_prob must be strictly increasing"
                    )));
                }
            }
            points.push((size, cum));
        }
        let last = points
            .last()
            .ok_or_else(|| WorkloadError::MalformedTable("empty table".into()))?;
        if (last.1 - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::MalformedTable(format!(
                "cum_prob must end at 1.0, got {}",
                last.1
            )));
        }
        Ok(CdfTable { points })
    }

    pub fn sample(&self, u: f64) -> u64 {
        let u = u.clamp(0.0, 1.0);
        let mut prev = (self.points[0].0, 0.0);
        for &(size, cum) in &self.points {
            if u <= cum {
                let (psize, pcum) = prev;
                if cum <= pcum {
                    return size;
                }
                let frac = (u - pcum) / (cum - pcum);
                return (psize as f64 + frac * (size - psize) as f64).round() as u64;
            }
            prev = (size, cum);
        }
        self.points.last().unwrap().0
    }

    /// Mean of the interpolated distribution (each segment is uniform
    /// between its endpoints; the head mass sits at the first size).
    pub fn mean(&self) -> f64 {
        let mut prev = (self.points[0].0, 0.0);
        let mut acc = 0.0;
        for &(size, cum) in &self.points {
            let (psize, pcum) = prev;
            acc += (cum - pcum) * (psize as f64 + size as f64) / 2.0;
            prev = (size, cum);
        }
        // Head: the first row's mass is a point at its size, so correct the
        // first segment (psize == size there makes the formula exact already).
        acc
    }
}

/// Flow-size families from the evaluation workloads.
#[derive(Debug, Clone)]
pub enum SizeDist {
    Uniform { lo: u64, hi: u64 },
    Table(Arc<CdfTable>),
}

impl SizeDist {
    /// The bundled families: `websearch`, `datamining`, `alibaba`, `uniform`.
    pub fn by_name(name: &str) -> Result<SizeDist, WorkloadError> {
        match name {
            "websearch" => Ok(SizeDist::Table(Arc::new(
                CdfTable::parse_csv(include_str!("../data/websearch.csv"))
                    .expect("bundled websearch table parses"),
            ))),
            "datamining" => Ok(SizeDist::Table(Arc::new(
                CdfTable::parse_csv(include_str!("../data/datamining.csv"))
                    .expect("bundled datamining table parses"),
            ))),
            "alibaba" => Ok(SizeDist::Table(Arc::new(
                CdfTable::parse_csv(include_str!("../data/alibaba.csv"))
                    .expect("bundled alibaba table parses"),
            ))),
            "uniform" => Ok(SizeDist::Uniform {
                lo: 50_000,
                hi: 10_000_000,
            }),
            other => Err(WorkloadError::UnknownDistribution(other.to_string())),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            SizeDist::Uniform { lo, hi } => rng.gen_range(*lo..=*hi),
            SizeDist::Table(t) => t.sample(rng.gen::<f64>()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            SizeDist::Uniform { lo, hi } => (*lo as f64 + *hi as f64) / 2.0,
            SizeDist::Table(t) => t.mean(),
        }
    }

    /// Scales sizes by a constant factor (desk-scale shrinking of a family).
    pub fn scaled(self, factor: f64) -> SizeDist {
        match self {
            SizeDist::Uniform { lo, hi } => SizeDist::Uniform {
                lo: ((lo as f64 * factor).round() as u64).max(1),
                hi: ((hi as f64 * factor).round() as u64).max(1),
            },
            SizeDist::Table(t) => {
                let points = t
                    .points
                    .iter()
                    .map(|&(s, c)| (((s as f64 * factor).round() as u64).max(1), c))
                    .collect();
                SizeDist::Table(Arc::new(CdfTable { points }))
            }
        }
    }
}

/// Flow arrival rate (flows per ns) that offers `load` fraction of the
/// aggregate host capacity given the mean flow size.
pub fn rate_for_load(load: f64, hosts: u32, host_bps: u64, mean_size_bytes: f64) -> f64 {
    let bytes_per_ns = hosts as f64 * host_bps as f64 / 8.0 / 1e9;
    load * bytes_per_ns / mean_size_bytes
}

/// Poisson arrival times over `[0, horizon_ns)`.
pub fn poisson_arrivals<R: Rng>(
    rate_per_ns: f64,
    horizon_ns: u64,
    rng: &mut R,
) -> Result<Vec<u64>, WorkloadError> {
    if !(rate_per_ns > 0.0) {
        return Err(WorkloadError::BadRate(rate_per_ns));
    }
    let exp = Exp::new(rate_per_ns).map_err(|_| WorkloadError::BadRate(rate_per_ns))?;
    let mut t = 0.0f64;
    let mut out = Vec::new();
    loop {
        t += exp.sample(rng);
        if t >= horizon_ns as f64 {
            break;
        }
        out.push(t as u64);
    }
    Ok(out)
}

/// Concurrent member flows of one coflow: shared arrival time and coflow id,
/// i.i.d. sizes, uniformly random distinct src-dst pairs.
#[allow(clippy::too_many_arguments)]
pub fn gen_coflow<R: Rng>(
    n_flows: u32,
    size_dist: &SizeDist,
    hosts: u32,
    arrival_ns: u64,
    coflow_id: u32,
    first_flow_id: u32,
    app_id: u8,
    rng: &mut R,
) -> Result<Vec<FlowSpec>, WorkloadError> {
    if n_flows < 1 {
        return Err(WorkloadError::BadParams("coflow needs at least one flow".into()));
    }
    if hosts < 2 {
        return Err(WorkloadError::BadParams("coflow needs at least two hosts".into()));
    }
    let mut out = Vec::with_capacity(n_flows as usize);
    for i in 0..n_flows {
        let src = rng.gen_range(0..hosts);
        let mut dst = rng.gen_range(0..hosts - 1);
        if dst >= src {
            dst += 1;
        }
        out.push(FlowSpec {
            flow_id: first_flow_id + i,
            app_id,
            src,
            dst,
            size_bytes: size_dist.sample(rng),
            arrival_ns,
            class: ObjectiveClass::Coflow,
            slack_rtts: 0,
            coflow: Some(coflow_id),
        });
    }
    Ok(out)
}

/// Objective mix fractions; normalized to sum 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveMix {
    pub fct: f64,
    pub deadline: f64,
    pub fairness: f64,
    pub best_effort: f64,
}

impl ObjectiveMix {
    pub fn normalized(mut self) -> ObjectiveMix {
        let sum = self.fct + self.deadline + self.fairness + self.best_effort;
        if sum > 0.0 {
            self.fct /= sum;
            self.deadline /= sum;
            self.fairness /= sum;
            self.best_effort /= sum;
        }
        self
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.fct, self.deadline, self.fairness, self.best_effort]
    }

    /// Draws a class from the mix.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> ObjectiveClass {
        let u: f64 = rng.gen();
        let a = self.as_array();
        let mut acc = 0.0;
        for (frac, class) in a.iter().zip([
            ObjectiveClass::Fct,
            ObjectiveClass::Deadline,
            ObjectiveClass::Fairness,
            ObjectiveClass::BestEffort,
        ]) {
            acc += frac;
            if u < acc {
                return class;
            }
        }
        ObjectiveClass::BestEffort
    }
}

/// Knobs of the synthetic drift process.
#[derive(Debug, Clone, Copy)]
pub struct DriftParams {
    pub base_load: f64,
    pub amplitude: f64,
    pub period_epochs: f64,
    pub noise_sd: f64,
    pub walk_step: f64,
    pub walk_prob: f64,
    pub burst_prob: f64,
    pub hotspot_prob: f64,
    pub load_min: f64,
    pub load_max: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            base_load: 0.6,
            amplitude: 0.25,
            period_epochs: 20.0,
            noise_sd: 0.03,
            walk_step: 0.05,
            walk_prob: 0.3,
            burst_prob: 0.15,
            hotspot_prob: 0.5,
            load_min: 0.2,
            load_max: 0.95,
        }
    }
}

/// Per-epoch state of the drifting environment.
#[derive(Debug, Clone)]
pub struct DriftState {
    pub epoch: u32,
    pub load: f64,
    pub short_frac: f64,
    pub mix: ObjectiveMix,
    pub burst: bool,
    pub hotspot_racks: Vec<u32>,
}

impl DriftState {
    pub fn initial(mix: ObjectiveMix, short_frac: f64, params: &DriftParams) -> DriftState {
        DriftState {
            epoch: 0,
            load: params.base_load.clamp(params.load_min, params.load_max),
            short_frac,
            mix: mix.normalized(),
            burst: false,
            hotspot_racks: Vec::new(),
        }
    }
}

/// Diurnal load with noise, sticky random walks on the short-flow fraction
/// and the objective mix, Bernoulli short-flow bursts sometimes concentrated
/// on two racks.
pub fn drift_step<R: Rng>(
    state: &DriftState,
    params: &DriftParams,
    racks: u32,
    rng: &mut R,
) -> DriftState {
    let epoch = state.epoch + 1;
    let noise = if params.noise_sd > 0.0 {
        Normal::new(0.0, params.noise_sd)
            .map(|n| n.sample(rng))
            .unwrap_or(0.0)
    } else {
        0.0
    };
    let phase = 2.0 * std::f64::consts::PI * epoch as f64 / params.period_epochs;
    let load = (params.base_load + params.amplitude * phase.sin() + noise)
        .clamp(params.load_min, params.load_max);

    let mut walk = |v: f64| -> f64 {
        if rng.gen::<f64>() < params.walk_prob {
            let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            (v + dir * params.walk_step).clamp(0.0, 1.0)
        } else {
            v
        }
    };
    let short_frac = walk(state.short_frac);
    let mix = ObjectiveMix {
        fct: walk(state.mix.fct),
        deadline: walk(state.mix.deadline),
        fairness: walk(state.mix.fairness),
        best_effort: walk(state.mix.best_effort),
    }
    .normalized();

    let burst = rng.gen::<f64>() < params.burst_prob;
    let hotspot_racks = if burst && racks >= 2 && rng.gen::<f64>() < params.hotspot_prob {
        let a = rng.gen_range(0..racks);
        let mut b = rng.gen_range(0..racks - 1);
        if b >= a {
            b += 1;
        }
        vec![a, b]
    } else {
        Vec::new()
    };
    DriftState {
        epoch,
        load,
        short_frac,
        mix,
        burst,
        hotspot_racks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn uniform_samples_stay_in_range_and_look_uniform() {
        let d = SizeDist::by_name("uniform").unwrap();
        let mut r = rng(1);
        let n = 10_000;
        let mut samples: Vec<u64> = (0..n).map(|_| d.sample(&mut r)).collect();
        samples.sort_unstable();
        assert!(*samples.first().unwrap() >= 50_000);
        assert!(*samples.last().unwrap() <= 10_000_000);
        // One-sample KS test against the uniform CDF at alpha = 0.01:
        // critical D = 1.63 / sqrt(n).
        let span = 10_000_000.0 - 50_000.0;
        let mut d_stat = 0.0f64;
        for (i, s) in samples.iter().enumerate() {
            let f = (*s as f64 - 50_000.0) / span;
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            d_stat = d_stat.max((f - emp_lo).abs()).max((emp_hi - f).abs());
        }
        assert!(d_stat < 1.63 / (n as f64).sqrt(), "KS statistic {d_stat}");
    }

    #[test]
    fn degenerate_single_row_table_is_constant() {
        let t = CdfTable::parse_csv("1000,1.0").unwrap();
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(t.sample(u), 1000);
        }
    }

    #[test]
    fn table_sampling_matches_its_analytic_mean() {
        let d = SizeDist::by_name("websearch").unwrap();
        let mut r = rng(7);
        let n = 100_000;
        let sum: f64 = (0..n).map(|_| d.sample(&mut r) as f64).sum();
        let empirical = sum / n as f64;
        let analytic = d.mean();
        let rel = (empirical - analytic).abs() / analytic;
        assert!(rel < 0.02, "empirical {empirical} vs analytic {analytic}");
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(CdfTable::parse_csv("").is_err());
        assert!(CdfTable::parse_csv("1000,0.5\n500,1.0").is_err(), "sizes must increase");
        assert!(CdfTable::parse_csv("1000,0.5\n2000,0.4").is_err(), "cum must increase");
        assert!(CdfTable::parse_csv("1000,0.5").is_err(), "must end at 1.0");
        assert!(CdfTable::parse_csv("0,1.0").is_err(), "zero size");
        assert!(CdfTable::parse_csv("nonsense").is_err());
        assert!(SizeDist::by_name("mystery").is_err());
    }

    #[test]
    fn poisson_interarrivals_have_the_right_mean() {
        let rate = 1.0 / 5_000.0; // one flow per 5 us
        let mut r = rng(3);
        let arrivals = poisson_arrivals(rate, 500_000_000, &mut r).unwrap();
        let n = arrivals.len() as f64;
        let mean_gap = arrivals.last().copied().unwrap() as f64 / n;
        assert!((mean_gap - 5_000.0).abs() / 5_000.0 < 0.02, "mean gap {mean_gap}");
        assert!(poisson_arrivals(0.0, 1000, &mut r).is_err());
        assert!(poisson_arrivals(-1.0, 1000, &mut r).is_err());
    }

    #[test]
    fn load_calibration_injects_the_target_byte_volume() {
        let d = SizeDist::by_name("uniform").unwrap();
        let hosts = 16;
        let host_bps = 10_000_000_000u64;
        let horizon = 50_000_000u64; // 50 ms
        let rate = rate_for_load(0.8, hosts, host_bps, d.mean());
        let mut r = rng(11);
        let arrivals = poisson_arrivals(rate, horizon, &mut r).unwrap();
        let bytes: u64 = arrivals.iter().map(|_| d.sample(&mut r)).sum();
        let capacity_bytes = hosts as f64 * host_bps as f64 / 8.0 * horizon as f64 / 1e9;
        let measured = bytes as f64 / capacity_bytes;
        assert!(
            (0.75..=0.85).contains(&measured),
            "offered load {measured} outside [0.75, 0.85]"
        );
    }

    #[test]
    fn coflow_members_share_arrival_and_id() {
        let d = SizeDist::by_name("uniform").unwrap();
        let mut r = rng(5);
        let flows = gen_coflow(8, &d, 16, 12345, 3, 100, 2, &mut r).unwrap();
        assert_eq!(flows.len(), 8);
        for f in &flows {
            assert_eq!(f.arrival_ns, 12345);
            assert_eq!(f.coflow, Some(3));
            assert_ne!(f.src, f.dst);
            assert!(f.src < 16 && f.dst < 16);
        }
        let singleton = gen_coflow(1, &d, 16, 0, 0, 0, 0, &mut r).unwrap();
        assert_eq!(singleton.len(), 1);
        assert!(gen_coflow(0, &d, 16, 0, 0, 0, 0, &mut r).is_err());
    }

    #[test]
    fn coflow_endpoints_are_spread_over_hosts() {
        let d = SizeDist::by_name("uniform").unwrap();
        let mut r = rng(17);
        let mut counts = vec![0u64; 16];
        for c in 0..500u32 {
            for f in gen_coflow(8, &d, 16, 0, c, c * 8, 0, &mut r).unwrap() {
                counts[f.src as usize] += 1;
                counts[f.dst as usize] += 1;
            }
        }
        let n: u64 = counts.iter().sum();
        let expect = n as f64 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| (*c as f64 - expect).powi(2) / expect)
            .sum();
        // 15 dof at alpha = 0.01.
        assert!(chi2 < 30.58, "chi2 {chi2}");
    }

    #[test]
    fn drift_without_amplitude_or_noise_is_constant_load() {
        let params = DriftParams {
            amplitude: 0.0,
            noise_sd: 0.0,
            ..DriftParams::default()
        };
        let mix = ObjectiveMix {
            fct: 0.85,
            deadline: 0.15,
            fairness: 0.0,
            best_effort: 0.0,
        };
        let mut state = DriftState::initial(mix, 0.8, &params);
        let mut r = rng(2);
        for _ in 0..20 {
            state = drift_step(&state, &params, 4, &mut r);
            assert!((state.load - 0.6).abs() < 1e-12);
            let sum: f64 = state.mix.as_array().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "mix stays normalized");
            assert!(state.short_frac >= 0.0 && state.short_frac <= 1.0);
        }
    }

    #[test]
    fn burst_frequency_matches_its_probability() {
        let params = DriftParams::default();
        let mix = ObjectiveMix {
            fct: 1.0,
            deadline: 0.0,
            fairness: 0.0,
            best_effort: 0.0,
        };
        let mut state = DriftState::initial(mix, 0.5, &params);
        let mut r = rng(23);
        let n = 4000;
        let mut bursts = 0;
        let mut hotspots = 0;
        for _ in 0..n {
            state = drift_step(&state, &params, 4, &mut r);
            if state.burst {
                bursts += 1;
                if !state.hotspot_racks.is_empty() {
                    hotspots += 1;
                    assert_eq!(state.hotspot_racks.len(), 2);
                    assert_ne!(state.hotspot_racks[0], state.hotspot_racks[1]);
                }
            }
        }
        let rate = bursts as f64 / n as f64;
        assert!((rate - 0.15).abs() < 0.02, "burst rate {rate}");
        let hs = hotspots as f64 / bursts as f64;
        assert!((hs - 0.5).abs() < 0.08, "hotspot share {hs}");
    }

    #[test]
    fn objective_mix_draw_tracks_fractions() {
        let mix = ObjectiveMix {
            fct: 0.85,
            deadline: 0.15,
            fairness: 0.0,
            best_effort: 0.0,
        }
        .normalized();
        let mut r = rng(31);
        let n = 20_000;
        let deadline = (0..n)
            .filter(|_| mix.draw(&mut r) == ObjectiveClass::Deadline)
            .count();
        let frac = deadline as f64 / n as f64;
        assert!((frac - 0.15).abs() < 0.03, "deadline fraction {frac}");
    }

    #[test]
    fn scaled_distribution_shrinks_sizes() {
        let d = SizeDist::by_name("websearch").unwrap().scaled(0.1);
        let full = SizeDist::by_name("websearch").unwrap();
        assert!((d.mean() - full.mean() * 0.1).abs() / (full.mean() * 0.1) < 0.01);
    }
}
