//! Experiment files, scenario construction, sweeps and the cluster
//! consolidation estimate.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{self, RunConfig, Workload};
use crate::error::{Error, Result};
use crate::metrics::{self, percentile, LatencySample, RunMetrics, Summary};
use crate::policy::{PolicyKind, TaskClass};
use crate::types::{Micros, MICROS_PER_SEC};
use crate::workload::{
    gen_arrivals, read_trace, synth_population, ArrivalKind, ArrivalPlan, BandProfile, BurstParams, ClosedLoop,
    FunctionSpec, OpenArrivals, ServiceModel,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Closed loop, fixed 100ms requests.
    Steady,
    /// Open loop, bursty per-function arrivals, short per-function demand.
    Azure,
    /// Open loop, 0..5 rps per function, 100ms requests.
    Random,
    /// Closed loop, two 50ms workers per request.
    Parallel,
    /// Closed loop, 10ms / 100ms / 1000ms request mix.
    Mix,
    /// Arrivals replayed from `workload.trace`.
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub scenario: Scenario,
    /// Functions per core.
    pub density: f64,
    /// Density at which the default band profile offers exactly the node's
    /// capacity.
    pub reference_density: f64,
    /// Group levels from the root to each function group.
    pub depth: u32,
    pub warmup_us: Micros,
    /// Overrides the scenario's service model for every function.
    pub service: Option<ServiceModel>,
    /// Azure scenario: per-function demand drawn log-uniformly in this range.
    pub demand_min_us: Micros,
    pub demand_max_us: Micros,
    pub burst: BurstParams,
    pub closed: ClosedLoop,
    /// `band,mean_rps` CSV replacing the default profile.
    pub profile: Option<PathBuf>,
    /// `function_id,timestamp_us` CSV for the replay scenario.
    pub trace: Option<PathBuf>,
    pub max_threads: u32,
    /// LAGS-static: functions in bands 1..=k run in the real-time class.
    pub static_rr_bands: u8,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            scenario: Scenario::Azure,
            density: 9.0,
            reference_density: 10.0,
            depth: 2,
            warmup_us: 5 * MICROS_PER_SEC,
            service: None,
            demand_min_us: 100,
            demand_max_us: 500,
            burst: BurstParams::default(),
            closed: ClosedLoop::default(),
            profile: None,
            trace: None,
            max_threads: 32,
            static_rr_bands: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub densities: Vec<f64>,
    pub policies: Vec<String>,
    /// Extra LAGS runs per window size; empty keeps `run.load_credit_window_ticks`.
    pub window_ticks: Vec<u32>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            densities: vec![3.0, 11.0, 19.0],
            policies: vec!["cfs".into(), "lags".into()],
            window_ticks: Vec::new(),
            seeds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    /// The existing, over-provisioned cluster size.
    pub baseline_nodes: usize,
    /// Functions per core at the baseline size.
    pub density: f64,
    pub min_nodes: usize,
    pub latency_target_us: Micros,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            baseline_nodes: 14,
            density: 4.0,
            min_nodes: 1,
            latency_target_us: MICROS_PER_SEC,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            run: RunConfig::default(),
            workload: WorkloadConfig::default(),
            sweep: SweepConfig::default(),
            cluster: ClusterConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        self.run.validate()?;
        let w = &self.workload;
        if !(w.density > 0.0 && w.density.is_finite()) {
            return Err(Error::invalid("workload.density", "must be > 0"));
        }
        if !(w.reference_density > 0.0 && w.reference_density.is_finite()) {
            return Err(Error::invalid("workload.reference_density", "must be > 0"));
        }
        if w.depth == 0 {
            return Err(Error::invalid("workload.depth", "must be >= 1"));
        }
        if w.warmup_us >= self.run.horizon_us {
            return Err(Error::invalid("workload.warmup_us", "must be shorter than run.horizon_us"));
        }
        if w.demand_min_us == 0 || w.demand_min_us > w.demand_max_us {
            return Err(Error::invalid("workload.demand_min_us", "need 0 < demand_min_us <= demand_max_us"));
        }
        if w.max_threads == 0 {
            return Err(Error::invalid("workload.max_threads", "must be >= 1"));
        }
        if w.static_rr_bands as usize > crate::workload::NUM_BANDS {
            return Err(Error::invalid("workload.static_rr_bands", "must be <= 10"));
        }
        if !(w.burst.sigma >= 0.0 && w.burst.sigma.is_finite()) {
            return Err(Error::invalid("workload.burst.sigma", "must be >= 0"));
        }
        if let Some(s) = &w.service {
            s.validate()?;
        }
        if w.scenario == Scenario::Replay && w.trace.is_none() {
            return Err(Error::invalid("workload.trace", "replay scenario needs a trace file"));
        }
        for d in &self.sweep.densities {
            if !(*d >= 1.0 && d.is_finite()) {
                return Err(Error::invalid("sweep.densities", format!("density {d} < 1")));
            }
        }
        for p in &self.sweep.policies {
            PolicyKind::parse(p)?;
        }
        if !(self.cluster.density > 0.0 && self.cluster.density.is_finite()) {
            return Err(Error::invalid("cluster.density", "must be > 0"));
        }
        if self.cluster.min_nodes == 0 || self.cluster.min_nodes > self.cluster.baseline_nodes {
            return Err(Error::invalid("cluster.min_nodes", "need 1 <= min_nodes <= baseline_nodes"));
        }
        Ok(())
    }
}

/// A policy together with an optional Load Credit window override.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub policy: PolicyKind,
    pub window_ticks: Option<u32>,
}

impl Variant {
    pub fn new(policy: PolicyKind) -> Self {
        Variant {
            policy,
            window_ticks: None,
        }
    }

    pub fn label(&self) -> String {
        let base = match self.policy {
            PolicyKind::Rr => "lags-static",
            p => p.name(),
        };
        match self.window_ticks {
            Some(w) => format!("{base}-w{w}"),
            None => base.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSpec {
    pub variant: Variant,
    pub density: f64,
    pub seed: u64,
}

pub struct RunResult {
    pub spec: RunSpec,
    pub summary: Summary,
    pub metrics: RunMetrics,
    pub functions: Vec<FunctionSpec>,
}

fn scenario_service(w: &WorkloadConfig) -> ServiceModel {
    if let Some(s) = &w.service {
        return s.clone();
    }
    match w.scenario {
        Scenario::Parallel => ServiceModel::Parallel {
            workers: 2,
            per_worker_us: 50_000,
        },
        Scenario::Mix => ServiceModel::Mix {
            choices: vec![(0.3, 10_000), (0.4, 100_000), (0.3, 1_000_000)],
        },
        _ => ServiceModel::Fixed { us: 100_000 },
    }
}

fn log_uniform_mean(a: f64, b: f64) -> f64 {
    if a == b {
        a
    } else {
        (b - a) / (b / a).ln()
    }
}

/// Functions for one node: `n` drawn from the bands, with the scenario's
/// service model.
pub fn population(w: &WorkloadConfig, n: usize, seed: u64) -> Result<Vec<FunctionSpec>> {
    let azure = w.scenario == Scenario::Azure && w.service.is_none();
    let mean_work = if azure {
        log_uniform_mean(w.demand_min_us as f64, w.demand_max_us as f64)
    } else {
        scenario_service(w).mean_work_us()
    };
    let profile = match &w.profile {
        Some(p) => BandProfile::read_csv(p)?,
        None => BandProfile::heavy_tailed(w.reference_density, mean_work),
    };
    let mut specs = synth_population(n, &profile, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c8e_9cf5_7093_2bd5);
    let (lo, hi) = ((w.demand_min_us as f64).ln(), (w.demand_max_us as f64).ln());
    for s in &mut specs {
        s.max_threads = w.max_threads;
        s.service_model = if azure {
            let us = if lo == hi { lo.exp() } else { rng.random_range(lo..hi).exp() };
            ServiceModel::Fixed { us: us.round().max(1.0) as Micros }
        } else {
            scenario_service(w)
        };
    }
    Ok(specs)
}

/// LAGS-static runs the lightest bands in the real-time class.
pub fn apply_policy(specs: &mut [FunctionSpec], policy: PolicyKind, static_rr_bands: u8) {
    for s in specs {
        s.class = if policy == PolicyKind::Rr && s.demand_band <= static_rr_bands {
            TaskClass::Rr
        } else {
            TaskClass::Fair
        };
    }
}

pub fn arrivals(w: &WorkloadConfig, specs: &[FunctionSpec], horizon: Micros, seed: u64) -> Result<ArrivalPlan> {
    let kind = match w.scenario {
        Scenario::Steady | Scenario::Parallel | Scenario::Mix => ArrivalKind::Steady,
        Scenario::Azure => ArrivalKind::Trace,
        Scenario::Random => ArrivalKind::Random,
        Scenario::Replay => {
            let path = w
                .trace
                .as_ref()
                .ok_or_else(|| Error::invalid("workload.trace", "replay scenario needs a trace file"))?;
            let events = read_trace(path)?;
            return Ok(ArrivalPlan::Open(OpenArrivals::replay(specs, events, horizon, seed)?));
        }
    };
    gen_arrivals(kind, specs, horizon, seed, &w.burst, &w.closed)
}

pub fn functions_for(density: f64, cores: usize) -> usize {
    ((density * cores as f64).round() as usize).max(1)
}

fn run_config_for(cfg: &ExperimentConfig, spec: &RunSpec) -> RunConfig {
    let mut run = cfg.run.clone();
    run.policy = spec.variant.policy;
    run.seed = spec.seed;
    if let Some(w) = spec.variant.window_ticks {
        run.load_credit_window_ticks = w;
    }
    run
}

/// Runs one node with the given functions.
pub fn simulate(cfg: &ExperimentConfig, spec: &RunSpec, mut functions: Vec<FunctionSpec>) -> Result<RunResult> {
    let run = run_config_for(cfg, spec);
    apply_policy(&mut functions, run.policy, cfg.workload.static_rr_bands);
    let plan = arrivals(&cfg.workload, &functions, run.horizon_us, spec.seed)?;
    let wl = Workload {
        functions: functions.clone(),
        arrivals: plan,
        depth: cfg.workload.depth,
        warmup_us: cfg.workload.warmup_us,
    };
    let metrics = engine::run(&run, wl)?;
    let mut summary = metrics::summarize(&metrics, metrics::DEFAULT_LATENCY_TARGET_US);
    summary.policy = spec.variant.label();
    summary.density = spec.density;
    Ok(RunResult {
        spec: *spec,
        summary,
        metrics,
        functions,
    })
}

pub fn execute(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<RunResult> {
    let n = functions_for(spec.density, cfg.run.cores);
    let functions = population(&cfg.workload, n, spec.seed)?;
    simulate(cfg, spec, functions)
}

/// Runs `jobs` on up to `parallel` threads, preserving input order.
pub fn run_parallel<T, F>(jobs: usize, parallel: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallel.clamp(1, jobs.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let r = f(i);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Cross product of densities, policy variants and seeds.
pub fn sweep_specs(cfg: &ExperimentConfig) -> Result<Vec<RunSpec>> {
    let s = &cfg.sweep;
    if s.densities.is_empty() {
        return Err(Error::Usage("empty density list".into()));
    }
    if s.policies.is_empty() {
        return Err(Error::Usage("empty policy list".into()));
    }
    let seeds = if s.seeds.is_empty() { vec![cfg.run.seed] } else { s.seeds.clone() };
    let mut variants = Vec::new();
    for p in &s.policies {
        let kind = PolicyKind::parse(p)?;
        if kind == PolicyKind::Lags && !s.window_ticks.is_empty() {
            variants.extend(s.window_ticks.iter().map(|&w| Variant {
                policy: kind,
                window_ticks: Some(w),
            }));
        } else {
            variants.push(Variant::new(kind));
        }
    }
    let mut out = Vec::new();
    for &density in &s.densities {
        for &variant in &variants {
            for &seed in &seeds {
                out.push(RunSpec { variant, density, seed });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterRow {
    pub policy: String,
    pub nodes: usize,
    pub p95_us: Micros,
    pub median_us: Micros,
    pub util_perceived_pct: f64,
    pub meets_target: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsolidationReport {
    pub rows: Vec<ClusterRow>,
    /// Smallest node count meeting the target, per policy label.
    pub minimum: Vec<(String, Option<usize>)>,
}

impl ConsolidationReport {
    pub fn minimum_for(&self, label: &str) -> Option<usize> {
        self.minimum.iter().find(|m| m.0 == label).and_then(|m| m.1)
    }
}

/// Splits `functions` round-robin over `nodes`, renumbering ids per node.
pub fn partition(functions: &[FunctionSpec], nodes: usize) -> Result<Vec<Vec<FunctionSpec>>> {
    if nodes == 0 || nodes > functions.len() {
        return Err(Error::invalid(
            "cluster.nodes",
            format!("{nodes} nodes for {} functions", functions.len()),
        ));
    }
    let mut parts = vec![Vec::new(); nodes];
    for (i, f) in functions.iter().enumerate() {
        let mut f = f.clone();
        f.id = parts[i % nodes].len() as u32;
        parts[i % nodes].push(f);
    }
    Ok(parts)
}

/// Shrinks the cluster one node at a time from the baseline for each policy
/// and reports the smallest size whose cluster-wide p95 stays within the
/// latency target. The scan stops at the first size that misses.
pub fn consolidate(cfg: &ExperimentConfig, policies: &[PolicyKind], parallel: usize) -> Result<ConsolidationReport> {
    if cfg.workload.scenario == Scenario::Replay {
        return Err(Error::invalid("workload.scenario", "consolidation needs a synthetic scenario"));
    }
    let c = &cfg.cluster;
    let total = functions_for(c.density * c.baseline_nodes as f64, cfg.run.cores);
    let population = population(&cfg.workload, total, cfg.run.seed)?;
    let mut rows = Vec::new();
    let mut minimum = Vec::new();
    for &p in policies {
        let label = Variant::new(p).label();
        let mut best = None;
        let mut policy_rows = Vec::new();
        for k in (c.min_nodes..=c.baseline_nodes).rev() {
            let parts = partition(&population, k)?;
            let results = run_parallel(k, parallel, |node| {
                let spec = RunSpec {
                    variant: Variant::new(p),
                    density: parts[node].len() as f64 / cfg.run.cores as f64,
                    seed: cfg.run.seed.wrapping_add((k * 1000 + node) as u64),
                };
                simulate(cfg, &spec, parts[node].clone()).map(|r| r.metrics)
            });
            let mut samples: Vec<LatencySample> = Vec::new();
            let (mut busy, mut overhead, mut cap) = (0.0, 0.0, 0.0);
            for m in results {
                let m = m?;
                busy += RunMetrics::total(&m.busy) as f64;
                overhead += RunMetrics::total(&m.overhead) as f64;
                cap += m.capacity();
                samples.extend(m.latency_samples);
            }
            let mut lat: Vec<Micros> = samples.iter().map(|s| s.latency).collect();
            lat.sort_unstable();
            let p95 = percentile(&lat, 0.95);
            let meets = !lat.is_empty() && p95 <= c.latency_target_us;
            policy_rows.push(ClusterRow {
                policy: label.clone(),
                nodes: k,
                p95_us: p95,
                median_us: percentile(&lat, 0.5),
                util_perceived_pct: if cap > 0.0 { 100.0 * (busy + overhead) / cap } else { 0.0 },
                meets_target: meets,
            });
            if !meets {
                break;
            }
            best = Some(k);
        }
        policy_rows.reverse();
        rows.extend(policy_rows);
        minimum.push((label, best));
    }
    Ok(ConsolidationReport { rows, minimum })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.run.cores = 2;
        c.run.horizon_us = 3 * MICROS_PER_SEC;
        c.workload.warmup_us = MICROS_PER_SEC;
        c.workload.density = 2.0;
        c
    }

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let c = small();
        let text = c.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        let bad = format!("{text}\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let typo = "schema_version = 1\n[run]\ncorez = 4\n";
        assert!(ExperimentConfig::from_toml(typo).is_err());
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let c = ExperimentConfig::from_toml("schema_version = 1\n").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert!(ExperimentConfig::from_toml("schema_version = 7\n").is_err());
    }

    #[test]
    fn bad_cap_names_field() {
        let err = ExperimentConfig::from_toml("schema_version = 1\n[run.policy_params]\nrr_bandwidth_cap = 1.3\n")
            .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("rr_bandwidth_cap"), "{err}");
    }

    #[test]
    fn static_preset_marks_light_bands() {
        let w = WorkloadConfig::default();
        let mut specs = population(&w, 20, 1).unwrap();
        apply_policy(&mut specs, PolicyKind::Rr, 3);
        for s in &specs {
            assert_eq!(s.class == TaskClass::Rr, s.demand_band <= 3);
        }
        apply_policy(&mut specs, PolicyKind::Cfs, 3);
        assert!(specs.iter().all(|s| s.class == TaskClass::Fair));
    }

    #[test]
    fn azure_demands_within_range() {
        let w = WorkloadConfig::default();
        let specs = population(&w, 200, 4).unwrap();
        for s in &specs {
            let ServiceModel::Fixed { us } = s.service_model else {
                panic!("azure uses fixed demand")
            };
            assert!((100..=500).contains(&us), "{us}");
        }
    }

    #[test]
    fn sweep_cross_product() {
        let mut c = small();
        c.sweep.densities = vec![3.0, 11.0, 19.0];
        c.sweep.policies = vec!["cfs".into(), "lags".into()];
        assert_eq!(sweep_specs(&c).unwrap().len(), 6);
        c.sweep.window_ticks = vec![1, 100, 1000];
        c.sweep.policies = vec!["lags".into()];
        c.sweep.densities = vec![11.0];
        let labels: Vec<String> = sweep_specs(&c).unwrap().iter().map(|s| s.variant.label()).collect();
        assert_eq!(labels, ["lags-w1", "lags-w100", "lags-w1000"]);
        c.sweep.densities.clear();
        assert!(matches!(sweep_specs(&c), Err(Error::Usage(_))));
    }

    #[test]
    fn round_robin_partition() {
        let w = WorkloadConfig::default();
        let specs = population(&w, 7, 1).unwrap();
        let parts = partition(&specs, 3).unwrap();
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), [3, 2, 2]);
        assert_eq!(parts[1][0].demand_band, specs[1].demand_band);
        assert!(parts.iter().all(|p| p.iter().enumerate().all(|(i, f)| f.id as usize == i)));
        assert!(partition(&specs, 8).is_err());
    }

    #[test]
    fn light_cluster_meets_target_everywhere() {
        let mut c = small();
        c.workload.scenario = Scenario::Random;
        c.cluster.density = 1.0;
        c.cluster.baseline_nodes = 1;
        let r = consolidate(&c, &[PolicyKind::Cfs, PolicyKind::Lags], 2).unwrap();
        assert_eq!(r.minimum_for("cfs"), Some(1));
        assert_eq!(r.minimum_for("lags"), Some(1));
    }

    #[test]
    fn parallel_runner_keeps_order() {
        let r = run_parallel(10, 3, |i| Ok(i * 2));
        let v: Vec<usize> = r.into_iter().map(|x| x.unwrap()).collect();
        assert_eq!(v, (0..10).map(|i| i * 2).collect::<Vec<_>>());
    }
}
