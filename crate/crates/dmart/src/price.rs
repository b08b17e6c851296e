//! The global clearing-price distribution and the integral/expectation
//! primitives the bidding solvers query, plus the Wasserstein metric used
//! for convergence diagnostics.
//!
//! Prices are histogrammed into `B` uniform bins over `[0, p_max]` with a
//! piecewise-linear CDF (mass spread uniformly within each bin), which makes
//! `integral_cdf` closed form and root finding smooth.

use std::fmt::Write as _;
use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriceError {
    #[error("operation requires a non-empty price distribution")]
    Empty,
    #[error("price sample {0} is negative")]
    NegativeSample(f64),
    #[error("invalid support [{lo}, {hi}]: lo must be >= 0 and < hi")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("invalid bin count {0}")]
    InvalidBins(usize),
    #[error("malformed distribution dump: {0}")]
    Parse(String),
}

/// Prefix sums derived from the bin weights; rebuilt lazily after mutation.
#[derive(Debug, Clone)]
struct Prefixes {
    /// cum_mass[i] = sum of counts[0..i].
    cum_mass: Vec<f64>,
    /// cum_int[i] = integral of the CDF over [0, edge_i].
    cum_int: Vec<f64>,
    /// cum_moment[i] = sum over bins j < i of counts[j] * bin_center_j.
    cum_moment: Vec<f64>,
}

/// Empirical distribution of end-to-end clearing prices.
#[derive(Debug)]
pub struct PriceDistribution {
    p_max: f64,
    counts: Vec<f64>,
    total: f64,
    version: u64,
    /// Samples above `p_max` that were folded into the top bin.
    clamped: u64,
    cache: OnceLock<Prefixes>,
}

impl Clone for PriceDistribution {
    fn clone(&self) -> Self {
        PriceDistribution {
            p_max: self.p_max,
            counts: self.counts.clone(),
            total: self.total,
            version: self.version,
            clamped: self.clamped,
            cache: OnceLock::new(),
        }
    }
}

impl PriceDistribution {
    /// An empty histogram with `bins` uniform bins over `[0, p_max]`.
    pub fn new(p_max: f64, bins: usize) -> Result<Self, PriceError> {
        if bins == 0 {
            return Err(PriceError::InvalidBins(bins));
        }
        if !(p_max > 0.0) || !p_max.is_finite() {
            return Err(PriceError::InvalidRange { lo: 0.0, hi: p_max });
        }
        Ok(PriceDistribution {
            p_max,
            counts: vec![0.0; bins],
            total: 0.0,
            version: 0,
            clamped: 0,
            cache: OnceLock::new(),
        })
    }

    /// Equal probability mass per unit length on `[lo, hi]`; the standard
    /// cold-start prior. Bins cover `[0, hi]`, so bins overlapping `lo` get
    /// proportional mass.
    pub fn uniform_prior(lo: f64, hi: f64, bins: usize) -> Result<Self, PriceError> {
        if !(lo >= 0.0) || !(hi > lo) || !hi.is_finite() {
            return Err(PriceError::InvalidRange { lo, hi });
        }
        let mut dist = PriceDistribution::new(hi, bins)?;
        let width = hi / bins as f64;
        for (i, c) in dist.counts.iter_mut().enumerate() {
            let b_lo = i as f64 * width;
            let b_hi = b_lo + width;
            let overlap = (b_hi.min(hi) - b_lo.max(lo)).max(0.0);
            *c = overlap / (hi - lo);
        }
        dist.total = dist.counts.iter().sum();
        Ok(dist)
    }

    /// Histograms a batch of samples.
    pub fn from_samples(samples: &[f64], p_max: f64, bins: usize) -> Result<Self, PriceError> {
        let mut dist = PriceDistribution::new(p_max, bins)?;
        for &s in samples {
            dist.record(s)?;
        }
        Ok(dist)
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total <= 0.0
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    /// Count of recorded samples that exceeded `p_max`.
    pub fn clamped_samples(&self) -> u64 {
        self.clamped
    }

    pub fn bin_width(&self) -> f64 {
        self.p_max / self.counts.len() as f64
    }

    fn bin_edge(&self, i: usize) -> f64 {
        i as f64 * self.bin_width()
    }

    /// Adds one sample. Samples above `p_max` clamp into the top bin and are
    /// counted in the clamp diagnostic; negative samples are rejected.
    pub fn record(&mut self, sample: f64) -> Result<(), PriceError> {
        if !(sample >= 0.0) {
            return Err(PriceError::NegativeSample(sample));
        }
        let bins = self.counts.len();
        let idx = if sample >= self.p_max {
            if sample > self.p_max {
                self.clamped += 1;
            }
            bins - 1
        } else {
            ((sample / self.bin_width()) as usize).min(bins - 1)
        };
        self.counts[idx] += 1.0;
        self.total += 1.0;
        self.cache = OnceLock::new();
        Ok(())
    }

    fn prefixes(&self) -> &Prefixes {
        self.cache.get_or_init(|| {
            let bins = self.counts.len();
            let w = self.bin_width();
            let mut cum_mass = Vec::with_capacity(bins + 1);
            let mut cum_int = Vec::with_capacity(bins + 1);
            let mut cum_moment = Vec::with_capacity(bins + 1);
            cum_mass.push(0.0);
            cum_int.push(0.0);
            cum_moment.push(0.0);
            let total = self.total.max(f64::MIN_POSITIVE);
            let mut mass = 0.0;
            let mut integral = 0.0;
            let mut moment = 0.0;
            for (i, &c) in self.counts.iter().enumerate() {
                let f_lo = mass / total;
                let slope = c / (total * w);
                integral += f_lo * w + slope * w * w / 2.0;
                moment += c * (self.bin_edge(i) + w / 2.0);
                mass += c;
                cum_mass.push(mass);
                cum_int.push(integral);
                cum_moment.push(moment);
            }
            Prefixes {
                cum_mass,
                cum_int,
                cum_moment,
            }
        })
    }

    fn locate(&self, x: f64) -> usize {
        let bins = self.counts.len();
        ((x / self.bin_width()) as usize).min(bins - 1)
    }

    /// Piecewise-linear CDF. `cdf(x) = 0` for `x <= 0`, `1` for `x >= p_max`.
    pub fn cdf(&self, x: f64) -> Result<f64, PriceError> {
        if self.is_empty() {
            return Err(PriceError::Empty);
        }
        if x <= 0.0 {
            return Ok(0.0);
        }
        if x >= self.p_max {
            return Ok(1.0);
        }
        let p = self.prefixes();
        let i = self.locate(x);
        let frac = (x - self.bin_edge(i)) / self.bin_width();
        Ok((p.cum_mass[i] + self.counts[i] * frac) / self.total)
    }

    /// Exact integral of the piecewise-linear CDF over `[0, b]`. For
    /// `b > p_max` the CDF is 1 beyond the support.
    pub fn integral_cdf(&self, b: f64) -> Result<f64, PriceError> {
        if self.is_empty() {
            return Err(PriceError::Empty);
        }
        if b <= 0.0 {
            return Ok(0.0);
        }
        let p = self.prefixes();
        if b >= self.p_max {
            return Ok(p.cum_int[self.counts.len()] + (b - self.p_max));
        }
        let i = self.locate(b);
        let w = self.bin_width();
        let dx = b - self.bin_edge(i);
        let f_lo = p.cum_mass[i] / self.total;
        let slope = self.counts[i] / (self.total * w);
        Ok(p.cum_int[i] + f_lo * dx + slope * dx * dx / 2.0)
    }

    /// Unconditional truncated first moment `E[P * 1{P < b}]`.
    pub fn expected_price_below(&self, b: f64) -> Result<f64, PriceError> {
        if self.is_empty() {
            return Err(PriceError::Empty);
        }
        if b <= 0.0 {
            return Ok(0.0);
        }
        let p = self.prefixes();
        if b >= self.p_max {
            return Ok(p.cum_moment[self.counts.len()] / self.total);
        }
        let i = self.locate(b);
        let e_i = self.bin_edge(i);
        let w = self.bin_width();
        let density = self.counts[i] / (self.total * w);
        Ok(p.cum_moment[i] / self.total + density * (b * b - e_i * e_i) / 2.0)
    }

    /// Distribution mean.
    pub fn mean(&self) -> Result<f64, PriceError> {
        self.expected_price_below(self.p_max)
    }

    /// Quantile function (inverse CDF) for `u` in `[0, 1)`; used to draw
    /// exogenous prices in Monte-Carlo rollouts.
    pub fn quantile(&self, u: f64) -> Result<f64, PriceError> {
        if self.is_empty() {
            return Err(PriceError::Empty);
        }
        let u = u.clamp(0.0, 1.0);
        let p = self.prefixes();
        let target = u * self.total;
        // Last bin whose cumulative start is <= target.
        let i = match p.cum_mass[1..].binary_search_by(|m| m.partial_cmp(&target).unwrap()) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
        .min(self.counts.len() - 1);
        let in_bin = target - p.cum_mass[i];
        let frac = if self.counts[i] > 0.0 {
            (in_bin / self.counts[i]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Ok(self.bin_edge(i) + frac * self.bin_width())
    }

    /// Breakpoints of the piecewise-linear CDF (the bin edges).
    fn edges(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.counts.len()).map(|i| self.bin_edge(i))
    }

    /// W1 distance: the integral of `|CDF_a - CDF_b|` over the union support.
    pub fn wasserstein(&self, other: &PriceDistribution) -> Result<f64, PriceError> {
        if self.is_empty() || other.is_empty() {
            return Err(PriceError::Empty);
        }
        let mut points: Vec<f64> = self.edges().chain(other.edges()).collect();
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup();
        let mut acc = 0.0;
        let mut x0 = points[0];
        let mut g0 = self.cdf(x0)? - other.cdf(x0)?;
        for &x1 in &points[1..] {
            let g1 = self.cdf(x1)? - other.cdf(x1)?;
            let len = x1 - x0;
            if len > 0.0 {
                acc += if g0 * g1 >= 0.0 {
                    (g0.abs() + g1.abs()) / 2.0 * len
                } else {
                    // Linear segment crosses zero: split at the root.
                    (g0 * g0 + g1 * g1) * len / (2.0 * (g0 - g1).abs())
                };
            }
            x0 = x1;
            g0 = g1;
        }
        Ok(acc)
    }

    /// Convex per-bin blend `(1 - alpha) * prev + alpha * new`, rebinned to
    /// common edges (the wider support, the finer bin count). The result is
    /// normalized to unit total.
    pub fn smooth(&self, newer: &PriceDistribution, alpha: f64) -> Result<Self, PriceError> {
        if self.is_empty() || newer.is_empty() {
            return Err(PriceError::Empty);
        }
        let alpha = alpha.clamp(0.0, 1.0);
        let p_max = self.p_max.max(newer.p_max);
        let bins = self.bins().max(newer.bins());
        let mut out = PriceDistribution::new(p_max, bins)?;
        rebin_into(self, &mut out.counts, p_max, 1.0 - alpha);
        rebin_into(newer, &mut out.counts, p_max, alpha);
        out.total = out.counts.iter().sum();
        out.version = newer.version;
        Ok(out)
    }

    /// CSV dump, one `bin_lo,bin_hi,count` line per bin.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.bin_edge(i), self.bin_edge(i + 1), c);
        }
        s
    }

    /// One-line JSON sidecar carrying the metadata the CSV cannot.
    pub fn sidecar_json(&self) -> String {
        format!(
            "{{\"version\":{},\"total\":{},\"p_max\":{}}}",
            self.version, self.total, self.p_max
        )
    }

    /// Parses a CSV dump plus its JSON sidecar back into a distribution.
    pub fn parse_csv(csv: &str, sidecar: &str) -> Result<Self, PriceError> {
        let meta: serde_json::Value = serde_json::from_str(sidecar)
            .map_err(|e| PriceError::Parse(format!("sidecar: {e}")))?;
        let version = meta
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| PriceError::Parse("sidecar missing version".into()))?;
        let p_max = meta
            .get("p_max")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| PriceError::Parse("sidecar missing p_max".into()))?;
        if !(p_max > 0.0) || !p_max.is_finite() {
            return Err(PriceError::Parse(format!("bad p_max {p_max}")));
        }

        let mut counts = Vec::new();
        let mut lines = csv.lines();
        match lines.next() {
            Some("bin_lo,bin_hi,count") => {}
            _ => return Err(PriceError::Parse("missing bin_lo,bin_hi,count header".into())),
        }
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let lo: f64 = parse_field(parts.next(), lineno)?;
            let hi: f64 = parse_field(parts.next(), lineno)?;
            let count: f64 = parse_field(parts.next(), lineno)?;
            if parts.next().is_some() {
                return Err(PriceError::Parse(format!("line {lineno}: too many fields")));
            }
            if !(count >= 0.0) || !count.is_finite() {
                return Err(PriceError::Parse(format!("line {lineno}: bad count {count}")));
            }
            if !(hi > lo) || lo < 0.0 || !hi.is_finite() {
                return Err(PriceError::Parse(format!("line {lineno}: bad bin [{lo},{hi}]")));
            }
            counts.push(count);
        }
        if counts.is_empty() {
            return Err(PriceError::Parse("no bins".into()));
        }
        let mut dist = PriceDistribution::new(p_max, counts.len())?;
        dist.total = counts.iter().sum();
        dist.counts = counts;
        dist.version = version;
        Ok(dist)
    }
}

fn parse_field(field: Option<&str>, lineno: usize) -> Result<f64, PriceError> {
    field
        .ok_or_else(|| PriceError::Parse(format!("line {lineno}: missing field")))?
        .trim()
        .parse::<f64>()
        .map_err(|e| PriceError::Parse(format!("line {lineno}: {e}")))
}

/// Spreads `src`'s mass (scaled to `weight` overall) onto `dst` bins that
/// uniformly cover `[0, p_max]`, splitting by interval overlap.
fn rebin_into(src: &PriceDistribution, dst: &mut [f64], p_max: f64, weight: f64) {
    if weight <= 0.0 || src.total <= 0.0 {
        return;
    }
    let dst_w = p_max / dst.len() as f64;
    let src_w = src.bin_width();
    for (i, &c) in src.counts.iter().enumerate() {
        if c <= 0.0 {
            continue;
        }
        let mass = weight * c / src.total;
        let lo = i as f64 * src_w;
        let hi = lo + src_w;
        let first = ((lo / dst_w) as usize).min(dst.len() - 1);
        let last = (((hi / dst_w).ceil() as usize).max(first + 1)).min(dst.len());
        for (j, d) in dst.iter_mut().enumerate().take(last).skip(first) {
            let d_lo = j as f64 * dst_w;
            let d_hi = d_lo + dst_w;
            let overlap = (hi.min(d_hi) - lo.max(d_lo)).max(0.0);
            *d += mass * overlap / src_w;
        }
    }
}

/// Per-iteration convergence diagnostics of the market operator.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceReport {
    /// `W(F_{t+1}, F_t)` per iteration.
    pub distances: Vec<f64>,
    /// `distances[t+1] / distances[t]`, the empirical contraction factor.
    pub contraction: Vec<f64>,
    /// Mean price of each epoch's realized distribution.
    pub mean_price: Vec<f64>,
}

impl ConvergenceReport {
    pub fn push(&mut self, distance: f64, mean_price: f64) {
        debug_assert!(distance >= 0.0);
        if let Some(&prev) = self.distances.last() {
            if prev > 0.0 {
                self.contraction.push(distance / prev);
            }
        }
        self.distances.push(distance);
        self.mean_price.push(mean_price);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} != {b} (tol {tol})");
    }

    #[test]
    fn record_and_two_point_cdf() {
        let mut d = PriceDistribution::new(40.0, 512).unwrap();
        d.record(10.0).unwrap();
        assert_eq!(d.total(), 1.0);
        assert_close(d.cdf(10.0 + d.bin_width()).unwrap(), 1.0, 1e-12);
        d.record(30.0).unwrap();
        assert_close(d.cdf(20.0).unwrap(), 0.5, 1e-12);
        assert!(d.record(-1.0).is_err());
    }

    #[test]
    fn out_of_range_sample_clamps_into_top_bin() {
        let mut d = PriceDistribution::new(10.0, 16).unwrap();
        d.record(25.0).unwrap();
        assert_eq!(d.clamped_samples(), 1);
        assert_eq!(d.total(), 1.0);
        assert_close(d.cdf(10.0).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn uniform_prior_matches_analytic_forms() {
        let d = PriceDistribution::uniform_prior(0.0, 100.0, 512).unwrap();
        assert_close(d.cdf(25.0).unwrap(), 0.25, 1e-12);
        assert_close(d.cdf(50.0).unwrap(), 0.5, 1e-12);
        // integral of x/100 over [0,b] = b^2/200
        assert_close(d.integral_cdf(60.0).unwrap(), 18.0, 1e-9);
        assert_close(d.integral_cdf(0.0).unwrap(), 0.0, 1e-12);
        // E[P 1{P<b}] = b^2/200 for uniform [0,100]... with density 1/100:
        // integral of x/100 over [0,50] = 12.5; full mean 50.
        assert_close(d.expected_price_below(50.0).unwrap(), 12.5, 1e-9);
        assert_close(d.mean().unwrap(), 50.0, 1e-9);
        assert_close(d.wasserstein(&d).unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn uniform_zero_one_fixture() {
        let d = PriceDistribution::uniform_prior(0.0, 1.0, 512).unwrap();
        assert_close(d.integral_cdf(0.6).unwrap(), 0.18, 1e-9);
        assert_close(d.expected_price_below(1.0).unwrap(), 0.5, 1e-9);
        assert_close(d.expected_price_below(0.5).unwrap(), 0.125, 1e-9);
    }

    #[test]
    fn point_mass_fixture_matches_step_oracle_within_bin_width() {
        // One sample at 5; the step-CDF oracle gives integral_cdf(10) = 5 and
        // E[P 1{P<10}] = 5. Histogram smearing is bounded by the bin width.
        let mut d = PriceDistribution::new(10.0, 512).unwrap();
        d.record(5.0).unwrap();
        let w = d.bin_width();
        assert_close(d.integral_cdf(10.0).unwrap(), 5.0, w);
        assert_close(d.expected_price_below(10.0).unwrap(), 5.0, w);
        // And exactly (1e-9) against the analytic form of the ramp CDF the
        // representation declares: mass uniform on [e, e+w], F(x) ramps,
        // integral over [0,10] = 10 - (e + w/2).
        let e = (5.0 / w).floor() * w;
        assert_close(d.integral_cdf(10.0).unwrap(), 10.0 - (e + w / 2.0), 1e-9);
    }

    #[test]
    fn integral_cdf_extends_past_support() {
        let mut d = PriceDistribution::new(10.0, 512).unwrap();
        d.record(5.0).unwrap();
        let at_max = d.integral_cdf(10.0).unwrap();
        assert_close(d.integral_cdf(12.0).unwrap(), at_max + 2.0, 1e-12);
    }

    #[test]
    fn wasserstein_of_deltas_is_their_distance() {
        let a = PriceDistribution::from_samples(&[2.0], 100.0, 4096).unwrap();
        let b = PriceDistribution::from_samples(&[7.0], 100.0, 4096).unwrap();
        let w = a.bin_width();
        assert_close(a.wasserstein(&b).unwrap(), 5.0, 2.0 * w);
        assert_close(
            a.wasserstein(&b).unwrap(),
            b.wasserstein(&a).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn wasserstein_matches_sorted_sample_transport() {
        // Brute-force 1-D optimal transport between equal-size sample sets is
        // the mean |a_(i) - b_(i)| over sorted samples.
        let xs = [1.0f64, 4.0, 9.0];
        let ys = [2.0f64, 3.0, 11.0];
        let oracle = xs
            .iter()
            .zip(ys.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 3.0;
        let a = PriceDistribution::from_samples(&xs, 16.0, 8192).unwrap();
        let b = PriceDistribution::from_samples(&ys, 16.0, 8192).unwrap();
        assert_close(a.wasserstein(&b).unwrap(), oracle, 2.0 * a.bin_width());
    }

    #[test]
    fn smooth_blends_and_preserves_mass() {
        let a = PriceDistribution::from_samples(&[1.0; 10], 10.0, 64).unwrap();
        let b = PriceDistribution::from_samples(&[9.0; 30], 10.0, 64).unwrap();
        let s = a.smooth(&b, 0.5).unwrap();
        assert_close(s.total(), 1.0, 1e-12);
        // Disjoint point masses blend into a bimodal histogram with equal mass.
        assert_close(s.cdf(5.0).unwrap(), 0.5, 1e-9);
        let keep_prev = a.smooth(&b, 0.0).unwrap();
        assert_close(keep_prev.cdf(5.0).unwrap(), 1.0, 1e-12);
        let keep_new = a.smooth(&b, 1.0).unwrap();
        assert_close(keep_new.cdf(5.0).unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn smooth_rebins_mismatched_supports() {
        let a = PriceDistribution::from_samples(&[1.0], 4.0, 32).unwrap();
        let b = PriceDistribution::from_samples(&[9.0], 16.0, 64).unwrap();
        let s = a.smooth(&b, 0.5).unwrap();
        assert_eq!(s.p_max(), 16.0);
        assert_close(s.total(), 1.0, 1e-12);
        assert_close(s.cdf(5.0).unwrap(), 0.5, 1e-9);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let d = PriceDistribution::uniform_prior(0.0, 100.0, 512).unwrap();
        for u in [0.0, 0.1, 0.25, 0.5, 0.9] {
            let q = d.quantile(u).unwrap();
            assert_close(d.cdf(q).unwrap(), u, 1e-9);
        }
    }

    #[test]
    fn empty_distribution_errors() {
        let d = PriceDistribution::new(10.0, 8).unwrap();
        assert!(d.cdf(1.0).is_err());
        assert!(d.integral_cdf(1.0).is_err());
        assert!(d.wasserstein(&d).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut d = PriceDistribution::from_samples(&[1.0, 2.5, 9.0], 10.0, 32).unwrap();
        d.set_version(7);
        let back = PriceDistribution::parse_csv(&d.to_csv(), &d.sidecar_json()).unwrap();
        assert_eq!(back.version(), 7);
        assert_eq!(back.bins(), 32);
        assert_eq!(back.total(), 3.0);
        assert_close(
            back.cdf(5.0).unwrap(),
            d.cdf(5.0).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(PriceDistribution::parse_csv("nope", "{}").is_err());
        assert!(PriceDistribution::parse_csv("bin_lo,bin_hi,count\n", "{\"version\":1,\"total\":0,\"p_max\":1}").is_err());
        assert!(PriceDistribution::parse_csv(
            "bin_lo,bin_hi,count\n0,1,-3\n",
            "{\"version\":1,\"total\":1,\"p_max\":1}"
        )
        .is_err());
    }
}
