//! Experiment configuration: plain TOML with one section per subsystem.
//! Validation enforces the timescale separation (the policy-update period,
//! one epoch, must be at least 100 RTTs).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SchedulerMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologySection {
    pub racks: u32,
    pub hosts_per_rack: u32,
    pub host_gbps: u64,
    pub spine_gbps: u64,
    pub prop_delay_ns: u64,
    pub host_proc_ns: u64,
    /// Optional pin for scenario topologies; otherwise sized for bisection.
    pub spines: Option<u32>,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            racks: 4,
            hosts_per_rack: 4,
            host_gbps: 10,
            spine_gbps: 40,
            prop_delay_ns: 1000,
            host_proc_ns: 250,
            spines: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSection {
    pub rtt_us: f64,
    pub mtu_bytes: u32,
    pub control_bytes: u32,
    pub baseline_window_bdp: u32,
    pub probe_loss_rate: f64,
    /// Run-on time after the last injection, in epoch fractions.
    pub drain_factor: f64,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            rtt_us: 10.0,
            mtu_bytes: 1500,
            control_bytes: 64,
            baseline_window_bdp: 4,
            probe_loss_rate: 0.0,
            drain_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketSection {
    /// Adaptive overcommitment on blocked winners.
    pub overcommit: bool,
    pub price_bins: usize,
    /// p_max = this factor times the largest configured budget.
    pub price_pmax_factor: f64,
    /// EWMA weight of the newest epoch distribution.
    pub smoothing_alpha: f64,
}

impl Default for MarketSection {
    fn default() -> Self {
        MarketSection {
            overcommit: true,
            price_bins: 512,
            price_pmax_factor: 1.25,
            smoothing_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectivesSection {
    pub fct_w: f64,
    pub fct_horizon: u32,
    pub deadline_budget: f64,
    pub deadline_fmax: u32,
    pub deadline_dmax: u32,
    pub fairness_w: f64,
    pub fairness_alpha: f64,
    pub fairness_bins: usize,
    pub best_effort_bid: f64,
    pub coflow_w: f64,
    pub coflow_horizon: u32,
    pub coflow_budget: f64,
}

impl Default for ObjectivesSection {
    fn default() -> Self {
        ObjectivesSection {
            fct_w: 100.0,
            fct_horizon: 256,
            deadline_budget: 2000.0,
            deadline_fmax: 256,
            deadline_dmax: 256,
            fairness_w: 100.0,
            fairness_alpha: 0.1,
            fairness_bins: 64,
            best_effort_bid: 1.0,
            coflow_w: 200.0,
            coflow_horizon: 256,
            coflow_budget: 400.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSection {
    pub epochs: u32,
    pub epoch_ms: f64,
    pub load: f64,
    /// Family for the short/latency class and for the bulk classes.
    pub short_dist: String,
    pub long_dist: String,
    /// Desk-scale shrink factors applied to the families.
    pub short_scale: f64,
    pub long_scale: f64,
    /// Fraction of non-coflow flows drawn from `short_dist`.
    pub short_frac: f64,
    pub mix_fct: f64,
    pub mix_deadline: f64,
    pub mix_fairness: f64,
    pub mix_best_effort: f64,
    pub coflows_per_epoch: u32,
    pub coflow_min_flows: u32,
    pub coflow_max_flows: u32,
    pub deadline_slack_min_us: f64,
    pub deadline_slack_max_us: f64,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            epochs: 1,
            epoch_ms: 8.0,
            load: 0.7,
            short_dist: "websearch".into(),
            long_dist: "uniform".into(),
            short_scale: 1.0,
            long_scale: 0.1,
            short_frac: 1.0,
            mix_fct: 1.0,
            mix_deadline: 0.0,
            mix_fairness: 0.0,
            mix_best_effort: 0.0,
            coflows_per_epoch: 0,
            coflow_min_flows: 4,
            coflow_max_flows: 12,
            deadline_slack_min_us: 100.0,
            deadline_slack_max_us: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftSection {
    pub enabled: bool,
    pub base_load: f64,
    pub amplitude: f64,
    pub period_epochs: f64,
    pub noise_sd: f64,
    pub walk_step: f64,
    pub walk_prob: f64,
    pub burst_prob: f64,
    pub hotspot_prob: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection {
            enabled: false,
            base_load: 0.6,
            amplitude: 0.25,
            period_epochs: 20.0,
            noise_sd: 0.03,
            walk_step: 0.05,
            walk_prob: 0.3,
            burst_prob: 0.15,
            hotspot_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: String,
    pub dump_prices: bool,
    pub dump_ports: bool,
    pub dump_workload: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            dump_prices: true,
            dump_ports: false,
            dump_workload: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub topology: TopologySection,
    pub engine: EngineSection,
    pub market: MarketSection,
    pub objectives: ObjectivesSection,
    pub workload: WorkloadSection,
    pub drift: DriftSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn rtt_ns(&self) -> u64 {
        (self.engine.rtt_us * 1000.0).round() as u64
    }

    pub fn epoch_ns(&self) -> u64 {
        (self.workload.epoch_ms * 1_000_000.0).round() as u64
    }

    /// Largest configured budget; sizes the price support.
    pub fn max_budget(&self) -> f64 {
        let o = &self.objectives;
        o.fct_w
            .max(o.deadline_budget)
            .max(o.fairness_w)
            .max(o.best_effort_bid)
            .max(o.coflow_w)
            .max(o.coflow_budget)
    }

    pub fn price_pmax(&self) -> f64 {
        self.max_budget() * self.market.price_pmax_factor
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let t = &self.topology;
        if t.racks == 0 || t.hosts_per_rack == 0 || t.host_gbps == 0 || t.spine_gbps == 0 {
            return invalid("topology dimensions and speeds must be positive".into());
        }
        if self.engine.rtt_us <= 0.0 {
            return invalid("rtt_us must be positive".into());
        }
        // Timescale separation: policies update once per epoch, so the epoch
        // must dwarf the RTT.
        let ratio = self.epoch_ns() as f64 / self.rtt_ns() as f64;
        if ratio < 100.0 {
            return invalid(format!(
                "epoch must be at least 100 RTTs (policy-update timescale), got {ratio:.1}"
            ));
        }
        if !(0.0 < self.workload.load && self.workload.load <= 1.0) {
            return invalid(format!("load {} outside (0, 1]", self.workload.load));
        }
        if !(0.0..=1.0).contains(&self.market.smoothing_alpha) {
            return invalid("smoothing_alpha outside [0, 1]".into());
        }
        if self.market.price_bins == 0 {
            return invalid("price_bins must be positive".into());
        }
        if self.workload.coflow_min_flows == 0
            || self.workload.coflow_max_flows < self.workload.coflow_min_flows
        {
            return invalid("coflow flow-count range is empty".into());
        }
        if self.workload.deadline_slack_max_us < self.workload.deadline_slack_min_us {
            return invalid("deadline slack range is empty".into());
        }
        let mix = self.workload.mix_fct
            + self.workload.mix_deadline
            + self.workload.mix_fairness
            + self.workload.mix_best_effort;
        if mix <= 0.0 {
            return invalid("objective mix sums to zero".into());
        }
        if self.objectives.fct_horizon < self.objectives.deadline_fmax.max(1) {
            // Horizons only need to be positive; grids are clamped at lookup.
        }
        Ok(())
    }
}

pub fn parse_mode(s: &str) -> Result<SchedulerMode, ConfigError> {
    match s {
        "market" => Ok(SchedulerMode::Market),
        "ideal_srpt" => Ok(SchedulerMode::IdealSrpt),
        "fair_share" => Ok(SchedulerMode::FairShare),
        other => Err(ConfigError::Invalid(format!(
            "unknown mode {other:?}; expected market|ideal_srpt|fair_share"
        ))),
    }
}
