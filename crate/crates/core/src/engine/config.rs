use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::load::CreditWindow;
use crate::policy::{Policy, PolicyKind, PolicyParams};
use crate::types::{Micros, MICROS_PER_SEC};

/// Context-switch cost: a fixed part plus a charge per runqueue level that
/// has to be walked (reinserting the previous chain, descending to the next).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchCostModel {
    pub base_us: Micros,
    pub per_level_us: Micros,
}

impl Default for SwitchCostModel {
    fn default() -> Self {
        SwitchCostModel {
            base_us: 2,
            per_level_us: 3,
        }
    }
}

impl SwitchCostModel {
    pub fn cost(&self, levels: usize) -> Micros {
        self.base_us + self.per_level_us * levels as Micros
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cores: usize,
    pub policy: PolicyKind,
    pub policy_params: PolicyParams,
    pub switch_cost: SwitchCostModel,
    pub tick_us: Micros,
    pub horizon_us: Micros,
    /// EMA window of the Load Credit in ticks; 0 means unbounded (credit is
    /// total CPU service received).
    pub load_credit_window_ticks: u32,
    pub seed: u64,
    pub balance_interval_us: Micros,
    /// Minimum runnable-count gap before an idle core pulls work.
    pub imbalance_threshold: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cores: 12,
            policy: PolicyKind::Cfs,
            policy_params: PolicyParams::default(),
            switch_cost: SwitchCostModel::default(),
            tick_us: 4_000,
            horizon_us: 60 * MICROS_PER_SEC,
            load_credit_window_ticks: 1000,
            seed: 1,
            balance_interval_us: 16_000,
            imbalance_threshold: 2,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cores == 0 {
            return Err(Error::invalid("run.cores", "must be >= 1"));
        }
        if self.horizon_us == 0 {
            return Err(Error::invalid("run.horizon_us", "must be > 0"));
        }
        if self.tick_us == 0 {
            return Err(Error::invalid("run.tick_us", "must be > 0"));
        }
        if self.balance_interval_us == 0 {
            return Err(Error::invalid("run.balance_interval_us", "must be > 0"));
        }
        if self.imbalance_threshold == 0 {
            return Err(Error::invalid("run.imbalance_threshold", "must be >= 1"));
        }
        self.policy_params.validate("run.policy_params.")
    }

    pub fn sched_policy(&self) -> Policy {
        Policy::with_params(self.policy, self.policy_params.clone())
    }

    pub fn credit_window(&self) -> CreditWindow {
        match self.load_credit_window_ticks {
            0 => CreditWindow::Infinite,
            n => CreditWindow::Ticks(n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_formula() {
        let m = SwitchCostModel::default();
        assert_eq!(m.cost(0), 2);
        assert_eq!(m.cost(4), 14);
    }

    #[test]
    fn validation_names_fields() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.policy_params.rr_bandwidth_cap = 1.3;
        match c.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert!(field.contains("rr_bandwidth_cap"), "{field}"),
            other => panic!("{other:?}"),
        }
        let c = RunConfig {
            horizon_us: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
