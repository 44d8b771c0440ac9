use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cgsched::experiment::{self, ExperimentConfig, RunResult, RunSpec, Variant};
use cgsched::metrics::{self, Summary};
use cgsched::policy::PolicyKind;
use cgsched::{Error, Result};

#[derive(Parser)]
#[command(name = "cgsched", version, about = "Simulate hierarchical CPU group scheduling policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation.
    Run(Common),
    /// Run densities x policies (x window sizes) and compare.
    Sweep(Common),
    /// Find the smallest cluster meeting the latency target per policy.
    Consolidate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    density: Vec<f64>,
    #[arg(long = "window-ticks", value_delimiter = ',')]
    window_ticks: Vec<u32>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
        Cmd::Consolidate(a) => cmd_consolidate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(a: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.run.seed = s;
        cfg.sweep.seeds.clear();
    }
    if !a.policy.is_empty() {
        cfg.sweep.policies = a.policy.clone();
    }
    if !a.density.is_empty() {
        cfg.sweep.densities = a.density.clone();
    }
    if !a.window_ticks.is_empty() {
        cfg.sweep.window_ticks = a.window_ticks.clone();
    }
    cfg.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    Ok(cfg)
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn write_results(out: &Path, rows: &[Summary]) -> Result<()> {
    write_file(&out.join("summary.csv"), |b| metrics::write_summaries(b, rows))?;
    write_file(&out.join("cdf.csv"), |b| metrics::write_cdfs(b, rows))
}

fn write_manifest(out: &Path, cfg: &ExperimentConfig, header: &str) -> Result<()> {
    let text = format!("{header}{}", cfg.to_toml());
    let path = out.join("manifest.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn print_row(s: &Summary) {
    println!(
        "{:<14} d={:<5} p50={:>9}us p95={:>9}us p99={:>9}us tput={:>9.1}/s ovh={:>5.2}% sw={:>5.1}us wait={:>9.1}s",
        s.policy,
        s.density,
        s.median_us,
        s.p95_us,
        s.p99_us,
        s.throughput_rps,
        s.overhead_pct,
        s.mean_switch_cost_us,
        s.rq_wait_s
    );
}

fn cmd_run(a: &Common) -> Result<()> {
    let mut cfg = load(a)?;
    if a.policy.len() > 1 || a.density.len() > 1 || a.window_ticks.len() > 1 {
        return Err(Error::Usage("run takes a single policy, density and window".into()));
    }
    if let Some(p) = a.policy.first() {
        cfg.run.policy = PolicyKind::parse(p)?;
    }
    if let Some(&d) = a.density.first() {
        cfg.workload.density = d;
    }
    if let Some(&w) = a.window_ticks.first() {
        cfg.run.load_credit_window_ticks = w;
    }
    // The manifest describes exactly this run.
    cfg.sweep.policies = vec![cfg.run.policy.name().to_string()];
    cfg.sweep.densities = vec![cfg.workload.density.max(1.0)];
    cfg.sweep.window_ticks.clear();
    cfg.sweep.seeds.clear();
    cfg.validate()?;
    let spec = RunSpec {
        variant: Variant::new(cfg.run.policy),
        density: cfg.workload.density,
        seed: cfg.run.seed,
    };
    let r = experiment::execute(&cfg, &spec)?;
    print_row(&r.summary);
    write_results(&a.out, std::slice::from_ref(&r.summary))?;
    write_manifest(&a.out, &cfg, "")
}

fn cmd_sweep(a: &Common) -> Result<()> {
    let cfg = load(a)?;
    let specs = experiment::sweep_specs(&cfg)?;
    let results = experiment::run_parallel(specs.len(), a.parallel, |i| {
        let mut c = cfg.clone();
        c.workload.density = specs[i].density;
        experiment::execute(&c, &specs[i]).map(|r: RunResult| r.summary)
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (spec, r) in specs.iter().zip(results) {
        match r {
            Ok(s) => {
                print_row(&s);
                rows.push(s);
            }
            Err(e) => failures.push((spec, e)),
        }
    }
    write_results(&a.out, &rows)?;
    if let Some((spec, e)) = failures.into_iter().next() {
        let header = format!(
            "# partial results: {} of {} runs completed\n# first failure: {} density {} seed {}: {e}\n",
            rows.len(),
            specs.len(),
            spec.variant.label(),
            spec.density,
            spec.seed
        );
        write_manifest(&a.out, &cfg, &header)?;
        return Err(e);
    }
    let comparison = metrics::compare(&rows)?;
    write_file(&a.out.join("comparison.csv"), |b| metrics::write_comparison(b, &comparison))?;
    write_manifest(&a.out, &cfg, "")
}

fn cmd_consolidate(a: &Common) -> Result<()> {
    let cfg = load(a)?;
    let policies = cfg
        .sweep
        .policies
        .iter()
        .map(|p| PolicyKind::parse(p))
        .collect::<Result<Vec<_>>>()?;
    let report = experiment::consolidate(&cfg, &policies, a.parallel)?;
    let path = a.out.join("consolidation.csv");
    let mut wr = csv::Writer::from_path(&path)?;
    for r in &report.rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(|e| Error::io(&path, e))?;
    for (label, min) in &report.minimum {
        match min {
            Some(n) => println!("{label}: {n} nodes meet p95 <= {}us", cfg.cluster.latency_target_us),
            None => println!("{label}: no candidate size meets the target"),
        }
    }
    if let (Some(base), Some(other)) = (report.minimum.first().and_then(|m| m.1), report.minimum.get(1)) {
        if let Some(n) = other.1 {
            let delta = 100.0 * (base as f64 - n as f64) / base as f64;
            println!("{} vs {}: {delta:.1}% fewer nodes", other.0, report.minimum[0].0);
        }
    }
    write_manifest(&a.out, &cfg, "")
}
