//! C interface to the simulator.
//!
//! Configurations and results are opaque handles created and released
//! through this API. Every fallible call returns a [`CgsStatus`]; on failure
//! the message is available from [`cgs_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cgsched::experiment::{self, ExperimentConfig, RunResult, RunSpec, Variant};
use cgsched::policy::PolicyKind;

/// Result codes. Validation errors match the command-line exit code 1,
/// simulation failures exit code 2.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgsStatus {
    Ok = 0,
    InvalidConfig = 1,
    Runtime = 2,
    NullPointer = 3,
    InvalidUtf8 = 4,
    Panic = 5,
}

/// An experiment configuration.
pub struct CgsConfig {
    inner: ExperimentConfig,
}

/// The outcome of one simulation.
pub struct CgsRun {
    inner: RunResult,
}

/// Headline numbers of a run, as in the summary CSV.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CgsSummary {
    pub density: f64,
    pub cores: u64,
    pub median_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub throughput_rps: f64,
    pub overhead_pct: f64,
    pub mean_switch_cost_us: f64,
    pub switch_rate_hz: f64,
    pub rq_wait_s: f64,
    pub util_effective_pct: f64,
    pub util_perceived_pct: f64,
    pub seed: u64,
    pub switches: u64,
    pub digest: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CgsStatus, msg: impl Into<String>) -> CgsStatus {
    set_error(msg.into());
    status
}

fn from_core(e: cgsched::Error) -> CgsStatus {
    let status = if e.exit_code() == 1 {
        CgsStatus::InvalidConfig
    } else {
        CgsStatus::Runtime
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> CgsStatus) -> CgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(CgsStatus::Panic, msg)
        }
    }
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, CgsStatus> {
    if s.is_null() {
        return Err(fail(CgsStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(CgsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cgs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a configuration holding the documented defaults.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn cgs_config_default(out: *mut *mut CgsConfig) -> CgsStatus {
    guard(|| {
        if out.is_null() {
            return fail(CgsStatus::NullPointer, "out is NULL");
        }
        let cfg = Box::new(CgsConfig {
            inner: ExperimentConfig::default(),
        });
        *out = Box::into_raw(cfg);
        CgsStatus::Ok
    })
}

/// Parses and validates an experiment file's contents.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cgs_config_from_toml(toml: *const c_char, out: *mut *mut CgsConfig) -> CgsStatus {
    guard(|| {
        if out.is_null() {
            return fail(CgsStatus::NullPointer, "out is NULL");
        }
        let t = match text(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::from_toml(t) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CgsConfig { inner }));
                CgsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a configuration. NULL is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cgs_config_free(cfg: *mut CgsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Selects the policy by name: `cfs`, `eevdf`, `lags` or `lags-static`.
///
/// # Safety
/// `cfg` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cgs_config_set_policy(cfg: *mut CgsConfig, name: *const c_char) -> CgsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(CgsStatus::NullPointer, "cfg is NULL");
        };
        let n = match text(name, "name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        match PolicyKind::parse(n) {
            Ok(p) => {
                cfg.inner.run.policy = p;
                CgsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Sets functions per core.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cgs_config_set_density(cfg: *mut CgsConfig, density: f64) -> CgsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(CgsStatus::NullPointer, "cfg is NULL");
        };
        let mut next = cfg.inner.clone();
        next.workload.density = density;
        match next.validate() {
            Ok(()) => {
                cfg.inner = next;
                CgsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cgs_config_set_seed(cfg: *mut CgsConfig, seed: u64) -> CgsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(CgsStatus::NullPointer, "cfg is NULL");
        };
        cfg.inner.run.seed = seed;
        CgsStatus::Ok
    })
}

/// Runs one simulation with the configured policy, density and seed.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cgs_run(cfg: *const CgsConfig, out: *mut *mut CgsRun) -> CgsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(CgsStatus::NullPointer, "cfg is NULL");
        };
        if out.is_null() {
            return fail(CgsStatus::NullPointer, "out is NULL");
        }
        let c = &cfg.inner;
        let spec = RunSpec {
            variant: Variant::new(c.run.policy),
            density: c.workload.density,
            seed: c.run.seed,
        };
        match experiment::execute(c, &spec) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CgsRun { inner }));
                CgsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Copies the run's summary into `out`.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cgs_run_summary(run: *const CgsRun, out: *mut CgsSummary) -> CgsStatus {
    guard(|| {
        let (Some(run), false) = (run.as_ref(), out.is_null()) else {
            return fail(CgsStatus::NullPointer, "run or out is NULL");
        };
        let s = &run.inner.summary;
        let m = &run.inner.metrics;
        *out = CgsSummary {
            density: s.density,
            cores: s.cores as u64,
            median_us: s.median_us,
            p95_us: s.p95_us,
            p99_us: s.p99_us,
            throughput_rps: s.throughput_rps,
            overhead_pct: s.overhead_pct,
            mean_switch_cost_us: s.mean_switch_cost_us,
            switch_rate_hz: s.switch_rate_hz,
            rq_wait_s: s.rq_wait_s,
            util_effective_pct: s.util_effective_pct,
            util_perceived_pct: s.util_perceived_pct,
            seed: s.seed,
            switches: m.switches,
            digest: m.digest,
        };
        CgsStatus::Ok
    })
}

/// Copies up to `cap` request latencies (µs, post-warmup, in recording order)
/// into `buf` and stores the total count in `len`. Pass `cap = 0` to query
/// the count.
///
/// # Safety
/// `run` must be a live handle, `len` writable, and `buf` valid for `cap`
/// elements when `cap > 0`.
#[no_mangle]
pub unsafe extern "C" fn cgs_run_latencies(
    run: *const CgsRun,
    buf: *mut u64,
    cap: usize,
    len: *mut usize,
) -> CgsStatus {
    guard(|| {
        let (Some(run), false) = (run.as_ref(), len.is_null()) else {
            return fail(CgsStatus::NullPointer, "run or len is NULL");
        };
        if cap > 0 && buf.is_null() {
            return fail(CgsStatus::NullPointer, "buf is NULL");
        }
        let samples = &run.inner.metrics.latency_samples;
        *len = samples.len();
        for (i, s) in samples.iter().take(cap).enumerate() {
            *buf.add(i) = s.latency;
        }
        CgsStatus::Ok
    })
}

/// Releases a run. NULL is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cgs_run_free(run: *mut CgsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
