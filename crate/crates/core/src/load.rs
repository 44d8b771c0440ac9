//! Per-entity load tracking (PELT) and the per-group Load Credit average.
//!
//! PELT accumulates a signal in 1024µs periods, decaying every completed
//! period by `y` with `y^32 = 1/2`. The averaged value tends to the input
//! level under constant input, so an entity that is always busy converges to
//! its weight and an idle one decays with a 32ms half-life.
//!
//! Load Credit is an exponential moving average of a group's aggregate PELT
//! load, updated once per scheduler tick with `alpha = 2 / (window + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Micros;

/// Length of one PELT accounting period.
pub const PELT_PERIOD_US: Micros = 1024;

/// Number of periods over which a contribution decays to one half.
pub const PELT_HALFLIFE_PERIODS: u32 = 32;

/// Per-period decay factor `y = 0.5^(1/32)`.
const PELT_Y: f64 = 0.978_572_062_087_700_1;

pub fn pelt_decay() -> f64 {
    PELT_Y
}

/// Sum of the infinite series `1024 * sum_{n>=0} y^n`, the saturation value
/// of `load_sum` for a unit input.
pub fn load_avg_max() -> f64 {
    PELT_PERIOD_US as f64 / (1.0 - pelt_decay())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeltState {
    pub load_avg: f64,
    pub last_update: Micros,
    /// Microseconds already accumulated in the current (incomplete) period.
    pub period_contrib: u32,
    load_sum: f64,
}

impl Default for PeltState {
    fn default() -> Self {
        PeltState::new(0)
    }
}

impl PeltState {
    pub fn new(now: Micros) -> Self {
        PeltState {
            load_avg: 0.0,
            last_update: now,
            period_contrib: (now % PELT_PERIOD_US) as u32,
            load_sum: 0.0,
        }
    }

    /// A state that has been at `level` for long enough to be saturated,
    /// positioned on a period boundary.
    pub fn saturated(now: Micros, level: f64) -> Self {
        let mut s = PeltState::new(now - now % PELT_PERIOD_US);
        s.load_sum = level * (load_avg_max() - PELT_PERIOD_US as f64);
        s.load_avg = level;
        s.last_update = now - now % PELT_PERIOD_US;
        s
    }

    /// Accounts the interval `[last_update, now)` during which the input was
    /// held at `level` (load units, i.e. runnable fraction times weight).
    pub fn accumulate(&mut self, now: Micros, level: f64) -> Result<()> {
        if now < self.last_update {
            return Err(Error::TimeRegression {
                now,
                last: self.last_update,
            });
        }
        let delta = now - self.last_update;
        if delta == 0 {
            return Ok(());
        }
        self.last_update = now;

        let old_contrib = self.period_contrib as Micros;
        let total = delta + old_contrib;
        let periods = total / PELT_PERIOD_US;
        let remainder = total % PELT_PERIOD_US;

        if periods == 0 {
            self.load_sum += level * delta as f64;
        } else {
            let y = pelt_decay();
            let decay = y.powi(periods.min(i32::MAX as u64) as i32);
            self.load_sum *= decay;
            if level != 0.0 {
                // Segments: the tail of the old period (decayed `periods`
                // times), the full periods in between, and the new partial.
                let d1 = (PELT_PERIOD_US - old_contrib) as f64 * decay;
                let full = if periods > 1 {
                    PELT_PERIOD_US as f64 * y * (1.0 - y.powi((periods - 1) as i32)) / (1.0 - y)
                } else {
                    0.0
                };
                self.load_sum += level * (d1 + full + remainder as f64);
            }
        }
        self.period_contrib = remainder as u32;
        let divider = load_avg_max() - PELT_PERIOD_US as f64 + self.period_contrib as f64;
        self.load_avg = self.load_sum / divider;
        Ok(())
    }
}

/// Advances `state` to `now` with the input held at `runnable_fraction` of
/// `weight` since the last update.
pub fn pelt_update(
    state: &PeltState,
    now: Micros,
    runnable_fraction: f64,
    weight: u32,
) -> Result<PeltState> {
    if !(0.0..=1.0).contains(&runnable_fraction) {
        return Err(Error::invalid(
            "runnable_fraction",
            format!("{runnable_fraction} not in [0, 1]"),
        ));
    }
    let mut next = *state;
    next.accumulate(now, runnable_fraction * weight as f64)?;
    Ok(next)
}

/// Sum of per-core contributions into a group-wide load figure.
pub fn update_tg_load_avg<I: IntoIterator<Item = f64>>(per_core: I) -> f64 {
    per_core.into_iter().sum()
}

/// Averaging window of the Load Credit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditWindow {
    Ticks(u32),
    /// No forgetting: the credit is the group's cumulative attained service.
    Infinite,
}

impl CreditWindow {
    pub fn alpha(self) -> Option<f64> {
        match self {
            CreditWindow::Ticks(w) => Some(2.0 / (w as f64 + 1.0)),
            CreditWindow::Infinite => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadCreditState {
    pub load_avg_ema: f64,
    pub window: CreditWindow,
    pub last_tick: u64,
}

impl LoadCreditState {
    pub fn new(window: CreditWindow) -> Self {
        LoadCreditState {
            load_avg_ema: 0.0,
            window,
            last_tick: 0,
        }
    }

    /// One EMA step toward `load_avg`. No-op in infinite-window mode, where
    /// the credit advances through [`LoadCreditState::record_service`].
    pub fn update(&mut self, load_avg: f64, tick: u64) {
        if let Some(alpha) = self.window.alpha() {
            self.load_avg_ema += alpha * (load_avg - self.load_avg_ema);
        }
        self.last_tick = tick;
    }

    pub fn record_service(&mut self, delta_exec: Micros) {
        if self.window == CreditWindow::Infinite {
            self.load_avg_ema += delta_exec as f64;
        }
    }

    pub fn value(&self) -> f64 {
        self.load_avg_ema
    }
}
