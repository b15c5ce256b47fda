//! Oversight cost of a gate and the reliability-cost frontier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::StateKey;
use crate::agent::Evaluator;
use crate::audit::{GateConfig, GateDecision, RiskWeights};
use crate::error::{Error, Result};
use crate::eventlog::EventLog;
use crate::model::{occupancy, CountModel, OccupancyMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub c_a: f64,
    pub c_h: f64,
    pub lambda: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            c_a: 1.0,
            c_h: 10.0,
            lambda: 0.0,
        }
    }
}

impl CostParams {
    pub fn new(c_a: f64, c_h: f64, lambda: f64) -> Result<Self> {
        let p = Self { c_a, c_h, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_a >= 0.0 && self.c_h > self.c_a && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cost parameters need c_H > c_A >= 0 and lambda >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Σ_s D(s) G(s), summed in state order.
pub fn escalated_visits(
    occ: &OccupancyMeasure,
    verdict: impl Fn(&StateKey) -> GateDecision,
) -> f64 {
    let mut states: Vec<(&StateKey, &f64)> = occ.visits.iter().collect();
    states.sort_by(|a, b| a.0.cmp(b.0));
    states
        .into_iter()
        .filter(|(s, _)| verdict(s).escalates())
        .map(|(_, d)| *d)
        .sum()
}

/// `c_A E[T] + (c_H - c_A) Σ_s D(s) G(s)` per case.
pub fn expected_cost(
    occ: &OccupancyMeasure,
    verdict: impl Fn(&StateKey) -> GateDecision,
    params: &CostParams,
    mean_t: f64,
) -> f64 {
    params.c_a * mean_t + (params.c_h - params.c_a) * escalated_visits(occ, verdict)
}

/// Adds `lambda` per expected autonomous error.
pub fn cost_with_error(base: f64, autonomous_errors_per_case: f64, lambda: f64) -> f64 {
    base + lambda * autonomous_errors_per_case
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub cfg: GateConfig,
    pub touches_per_case: f64,
    pub safe_completion: f64,
    pub safe_completion_surrogate: f64,
    pub zero_touch: f64,
    pub cost_per_case: f64,
    pub cost_with_error: f64,
}

/// One frontier point per gate, sorted by touches per case.
///
/// Gate inputs come from `train_counts` and `weights`; outcomes and the
/// visit measure come from `test_log` abstracted the same way.
pub fn sweep_frontier(
    test_log: &EventLog,
    train_counts: &CountModel,
    weights: &RiskWeights,
    grid: &[GateConfig],
    params: &CostParams,
) -> Result<Vec<FrontierPoint>> {
    let evaluator = Evaluator::new(test_log, train_counts, weights)?;
    let test_counts = crate::model::build_counts(test_log, &train_counts.abstraction)?;
    sweep_frontier_on(&evaluator, &occupancy(&test_counts), grid, params)
}

pub fn sweep_frontier_on(
    evaluator: &Evaluator,
    test_occ: &OccupancyMeasure,
    grid: &[GateConfig],
    params: &CostParams,
) -> Result<Vec<FrontierPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("gate grid is empty".into()));
    }
    params.validate()?;
    let mut points: Vec<FrontierPoint> = grid
        .par_iter()
        .map(|cfg| {
            let run = evaluator.run(cfg);
            let sur = evaluator.surrogates(cfg);
            let profiles = evaluator.profiles();
            let cost = expected_cost(
                test_occ,
                |s| profiles.gate(cfg, s),
                params,
                test_occ.mean_decisions,
            );
            FrontierPoint {
                cfg: *cfg,
                touches_per_case: run.touches_per_case(),
                safe_completion: run.safe_rate(),
                safe_completion_surrogate: sur.r_safe_theory,
                zero_touch: run.zero_touch_rate(),
                cost_per_case: cost,
                cost_with_error: cost_with_error(
                    cost,
                    run.autonomous_errors_per_case(),
                    params.lambda,
                ),
            }
        })
        .collect();
    points.sort_by(|a, b| a.touches_per_case.total_cmp(&b.touches_per_case));
    Ok(points)
}
