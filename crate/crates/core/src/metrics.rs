//! Per-run measurements, summaries, CSV output and cross-run comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::types::{Micros, MICROS_PER_SEC};

/// One request's end-to-end latency. Requests still open at the horizon
/// are kept with `completed == false` and latency `horizon - arrival`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencySample {
    pub function: u32,
    pub arrival: Micros,
    pub latency: Micros,
    pub completed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub policy: Option<PolicyKind>,
    pub cores: usize,
    pub horizon: Micros,
    pub warmup: Micros,
    pub seed: u64,
    /// Requests that arrived after warmup.
    pub latency_samples: Vec<LatencySample>,
    pub switches: u64,
    pub switch_cost_total: Micros,
    pub busy: Vec<Micros>,
    pub idle: Vec<Micros>,
    pub overhead: Vec<Micros>,
    /// Time spent runnable but not running, summed over tasks.
    pub rq_wait_total: Micros,
    /// Post-warmup completions with latency within one second.
    pub completions_within_target: u64,
    /// CPU time received per function.
    pub function_cpu: Vec<Micros>,
    pub migrations: u64,
    /// Balance points at which a core idled next to a core with >= 2 runnable.
    pub balance_violations: u64,
    pub requests_issued: u64,
    /// Hash over the dispatch sequence.
    pub digest: u64,
}

impl RunMetrics {
    pub fn total(v: &[Micros]) -> Micros {
        v.iter().sum()
    }

    pub fn capacity(&self) -> f64 {
        self.cores as f64 * self.horizon as f64
    }

    /// Checks busy + idle + overhead == horizon on every core.
    pub fn check_identity(&self) -> Result<()> {
        for c in 0..self.cores {
            let sum = self.busy[c] + self.idle[c] + self.overhead[c];
            if sum != self.horizon {
                return Err(Error::bookkeeping(format!(
                    "core {c}: busy {} + idle {} + overhead {} = {sum} != {}",
                    self.busy[c], self.idle[c], self.overhead[c], self.horizon
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub policy: String,
    pub density: f64,
    pub cores: usize,
    pub median_us: Micros,
    pub p95_us: Micros,
    pub p99_us: Micros,
    pub throughput_rps: f64,
    pub overhead_pct: f64,
    pub mean_switch_cost_us: f64,
    pub switch_rate_hz: f64,
    pub rq_wait_s: f64,
    pub util_effective_pct: f64,
    pub util_perceived_pct: f64,
    pub seed: u64,
    #[serde(skip)]
    pub no_switches: bool,
    #[serde(skip)]
    pub zero_throughput: bool,
    #[serde(skip)]
    pub samples: usize,
    #[serde(skip)]
    pub cdf: Vec<(Micros, f64)>,
}

pub const DEFAULT_LATENCY_TARGET_US: Micros = MICROS_PER_SEC;
const CDF_POINTS: usize = 1000;

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[Micros], p: f64) -> Micros {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Empirical CDF, thinned to at most ~1000 points; the last point is 1.0.
pub fn cdf(sorted: &[Micros]) -> Vec<(Micros, f64)> {
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let step = n.div_ceil(CDF_POINTS);
    let mut out = Vec::with_capacity(CDF_POINTS + 1);
    let mut i = 0;
    while i < n {
        // Last index holding this value, so cum_prob counts ties fully.
        let mut j = (i + step - 1).min(n - 1);
        while j + 1 < n && sorted[j + 1] == sorted[j] {
            j += 1;
        }
        out.push((sorted[j], (j + 1) as f64 / n as f64));
        i = j + 1;
    }
    out
}

pub fn summarize(m: &RunMetrics, latency_target: Micros) -> Summary {
    let mut lat: Vec<Micros> = m.latency_samples.iter().map(|s| s.latency).collect();
    lat.sort_unstable();
    let measured_s = m.horizon.saturating_sub(m.warmup) as f64 / MICROS_PER_SEC as f64;
    let good = m
        .latency_samples
        .iter()
        .filter(|s| s.completed && s.latency <= latency_target)
        .count();
    let throughput = if measured_s > 0.0 { good as f64 / measured_s } else { 0.0 };
    let cap = m.capacity();
    let busy = RunMetrics::total(&m.busy) as f64;
    let overhead = RunMetrics::total(&m.overhead) as f64;
    let pct = |x: f64| if cap > 0.0 { 100.0 * x / cap } else { 0.0 };
    Summary {
        policy: m.policy.map_or_else(String::new, |p| p.name().to_string()),
        density: 0.0,
        cores: m.cores,
        median_us: percentile(&lat, 0.5),
        p95_us: percentile(&lat, 0.95),
        p99_us: percentile(&lat, 0.99),
        throughput_rps: throughput,
        overhead_pct: pct(overhead),
        mean_switch_cost_us: if m.switches == 0 {
            0.0
        } else {
            m.switch_cost_total as f64 / m.switches as f64
        },
        switch_rate_hz: if m.horizon == 0 {
            0.0
        } else {
            m.switches as f64 * MICROS_PER_SEC as f64 / m.horizon as f64
        },
        rq_wait_s: m.rq_wait_total as f64 / MICROS_PER_SEC as f64,
        util_effective_pct: pct(busy),
        util_perceived_pct: pct(busy + overhead),
        seed: m.seed,
        no_switches: m.switches == 0,
        zero_throughput: good == 0,
        samples: lat.len(),
        cdf: cdf(&lat),
    }
}

pub const SUMMARY_HEADER: &str = "policy,density,cores,median_us,p95_us,p99_us,throughput_rps,overhead_pct,mean_switch_cost_us,switch_rate_hz,rq_wait_s,util_effective_pct,util_perceived_pct,seed";
pub const CDF_HEADER: &str = "policy,density,latency_us,cum_prob";

pub fn write_summaries<W: Write>(w: W, rows: &[Summary]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    if rows.is_empty() {
        wr.write_record(SUMMARY_HEADER.split(','))?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_cdfs<W: Write>(w: W, rows: &[Summary]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CDF_HEADER.split(','))?;
    for r in rows {
        for &(lat, p) in &r.cdf {
            wr.write_record([
                r.policy.clone(),
                r.density.to_string(),
                lat.to_string(),
                p.to_string(),
            ])?;
        }
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub density: f64,
    pub policy: String,
    pub median_us: Micros,
    pub p95_us: Micros,
    pub p99_us: Micros,
    pub throughput_rps: f64,
    pub overhead_pct: f64,
    pub mean_switch_cost_us: f64,
    pub rq_wait_s: f64,
    /// Relative to the baseline policy at the same density.
    pub median_delta_pct: f64,
    pub p95_delta_pct: f64,
    pub throughput_delta_pct: f64,
    pub switch_cost_delta_pct: f64,
    /// Drop from this policy's own peak throughput across densities.
    pub throughput_degradation_pct: f64,
}

fn delta_pct(x: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (x - base) / base
    }
}

/// Aligns summaries by (density, policy). Every policy must cover the same
/// densities; seeds of one cell are averaged. The baseline is the first
/// policy in input order.
pub fn compare(runs: &[Summary]) -> Result<Vec<ComparisonRow>> {
    if runs.len() < 2 {
        return Err(Error::Comparison(format!("need at least 2 runs, got {}", runs.len())));
    }
    let mut policies: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(u64, String), Vec<&Summary>> = BTreeMap::new();
    for r in runs {
        if !policies.contains(&r.policy) {
            policies.push(r.policy.clone());
        }
        cells.entry((r.density.to_bits(), r.policy.clone())).or_default().push(r);
    }
    let cores: BTreeSet<usize> = runs.iter().map(|r| r.cores).collect();
    if cores.len() > 1 {
        return Err(Error::Comparison(format!("runs mix core counts {cores:?}")));
    }
    let axis_of = |p: &String| -> BTreeSet<u64> {
        cells.keys().filter(|k| &k.1 == p).map(|k| k.0).collect()
    };
    let axis = axis_of(&policies[0]);
    for p in &policies[1..] {
        if axis_of(p) != axis {
            return Err(Error::Comparison(format!(
                "policy {p} covers different densities than {}",
                policies[0]
            )));
        }
    }
    let mut densities: Vec<f64> = axis.iter().map(|&b| f64::from_bits(b)).collect();
    densities.sort_by(f64::total_cmp);

    let mean = |v: &[&Summary], f: &dyn Fn(&Summary) -> f64| v.iter().map(|s| f(s)).sum::<f64>() / v.len() as f64;
    let agg = |d: f64, p: &String| -> ComparisonRow {
        let v = &cells[&(d.to_bits(), p.clone())];
        ComparisonRow {
            density: d,
            policy: p.clone(),
            median_us: mean(v, &|s| s.median_us as f64).round() as Micros,
            p95_us: mean(v, &|s| s.p95_us as f64).round() as Micros,
            p99_us: mean(v, &|s| s.p99_us as f64).round() as Micros,
            throughput_rps: mean(v, &|s| s.throughput_rps),
            overhead_pct: mean(v, &|s| s.overhead_pct),
            mean_switch_cost_us: mean(v, &|s| s.mean_switch_cost_us),
            rq_wait_s: mean(v, &|s| s.rq_wait_s),
            median_delta_pct: 0.0,
            p95_delta_pct: 0.0,
            throughput_delta_pct: 0.0,
            switch_cost_delta_pct: 0.0,
            throughput_degradation_pct: 0.0,
        }
    };
    let mut rows = Vec::new();
    for p in &policies {
        let peak = densities
            .iter()
            .map(|&d| agg(d, p).throughput_rps)
            .fold(0.0, f64::max);
        for &d in &densities {
            let base = agg(d, &policies[0]);
            let mut r = agg(d, p);
            r.median_delta_pct = delta_pct(r.median_us as f64, base.median_us as f64);
            r.p95_delta_pct = delta_pct(r.p95_us as f64, base.p95_us as f64);
            r.throughput_delta_pct = delta_pct(r.throughput_rps, base.throughput_rps);
            r.switch_cost_delta_pct = delta_pct(r.mean_switch_cost_us, base.mean_switch_cost_us);
            r.throughput_degradation_pct = if peak > 0.0 {
                100.0 * (peak - r.throughput_rps) / peak
            } else {
                0.0
            };
            rows.push(r);
        }
    }
    rows.sort_by(|a, b| {
        a.density.total_cmp(&b.density).then_with(|| {
            let ia = policies.iter().position(|p| *p == a.policy);
            let ib = policies.iter().position(|p| *p == b.policy);
            ia.cmp(&ib)
        })
    });
    Ok(rows)
}

pub fn write_comparison<W: Write>(w: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}
