use dmart::config::ExperimentConfig;
use dmart::engine::SchedulerMode;
use dmart::experiments::run_experiment;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.topology.host_gbps = 25;
    cfg.topology.spine_gbps = 100;
    cfg.workload.epoch_ms = 8.0;
    cfg.workload.load = 0.7;
    cfg.workload.epochs = 6;
    cfg.validate().unwrap();
    let market = run_experiment(&cfg, SchedulerMode::Market).unwrap();
    let srpt = run_experiment(&cfg, SchedulerMode::IdealSrpt).unwrap();
    let buckets = [12_500u64, 31_250, 62_500, 125_000, 500_000, 2_000_000, u64::MAX];
    let label = ["<12.5k", "<31k(bypass)", "<62.5k", "<125k", "<500k", "<2M", ">=2M"];
    for (name, out) in [("market", &market), ("srpt", &srpt)] {
        let rec = &out.epochs.last().unwrap().records;
        print!("{name:>7}: ");
        for (i, b) in buckets.iter().enumerate() {
            let lo = if i == 0 { 0 } else { buckets[i - 1] };
            let sel: Vec<f64> = rec.iter().filter(|r| r.size_bytes > lo && r.size_bytes <= *b).map(|r| r.slowdown).collect();
            if sel.is_empty() { print!("{}: -- ", label[i]); }
            else { print!("{}: {:.2}({}) ", label[i], sel.iter().sum::<f64>() / sel.len() as f64, sel.len()); }
        }
        println!();
    }
    // inspect the slowest non-bypass market flows
    let rec = &market.epochs.last().unwrap().records;
    let mut slow: Vec<_> = rec.iter().filter(|r| !r.bypass).collect();
    slow.sort_by(|a, b| b.slowdown.partial_cmp(&a.slowdown).unwrap());
    for r in slow.iter().take(8) {
        let f0 = (r.size_bytes + 31_249) / 31_250;
        println!(
            "  flow {} size {} slow {:.2} fct_us {:.1} rounds_won {} f0 {} elapsed_rtts {:.1}",
            r.flow_id, r.size_bytes, r.slowdown, r.fct_us, r.rounds_won, f0, r.fct_us / 10.0
        );
    }
}
