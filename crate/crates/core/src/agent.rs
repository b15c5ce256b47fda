//! Held-out greedy agent and the reliability surrogates it is checked
//! against.
//!
//! The agent is fitted on a training log and replayed over an evaluation
//! log. At each nonterminal step it escalates when the gate fires and
//! otherwise proposes the training greedy action, which is scored against
//! the activity that actually came next.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractionLevel, ActionKey, StateKey};
use crate::audit::{trace_verdicts, GateConfig, GateDecision, RiskWeights, StateProfiles};
use crate::error::{Error, Result};
use crate::eventlog::EventLog;
use crate::model::CountModel;
use crate::trace::DecisionTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub case: u32,
    pub step: u32,
    /// Index into [`AgentRun::states`].
    pub state: u32,
    pub verdict: GateDecision,
    pub greedy: Option<ActionKey>,
    pub observed: ActionKey,
    /// Only defined for autonomous steps.
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub decisions: usize,
    pub touches: usize,
    pub all_autonomous: bool,
    pub zero_touch_success: bool,
    pub safe_success: bool,
    pub autonomous_errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub cfg: GateConfig,
    pub states: Vec<StateKey>,
    pub decisions: Vec<DecisionRecord>,
    pub cases: Vec<CaseOutcome>,
}

fn mean_of(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

impl AgentRun {
    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    /// C_0: share of cases finished with no escalation and no mismatch.
    pub fn zero_touch_rate(&self) -> f64 {
        mean_of(
            self.cases.iter().filter(|c| c.zero_touch_success).count(),
            self.n_cases(),
        )
    }

    /// R_safe: share of cases where every step escalated or matched.
    pub fn safe_rate(&self) -> f64 {
        mean_of(
            self.cases.iter().filter(|c| c.safe_success).count(),
            self.n_cases(),
        )
    }

    pub fn autonomous_case_rate(&self) -> f64 {
        mean_of(
            self.cases.iter().filter(|c| c.all_autonomous).count(),
            self.n_cases(),
        )
    }

    pub fn touches_per_case(&self) -> f64 {
        mean_of(self.cases.iter().map(|c| c.touches).sum(), self.n_cases())
    }

    pub fn autonomous_errors_per_case(&self) -> f64 {
        mean_of(
            self.cases.iter().map(|c| c.autonomous_errors).sum(),
            self.n_cases(),
        )
    }

    pub fn autonomous_event_rate(&self) -> f64 {
        let autonomous = self
            .decisions
            .iter()
            .filter(|d| !d.verdict.escalates())
            .count();
        if self.decisions.is_empty() {
            1.0
        } else {
            autonomous as f64 / self.decisions.len() as f64
        }
    }

    /// Realized accuracy over autonomous steps; `None` without any.
    pub fn autonomous_step_accuracy(&self) -> Option<f64> {
        let (mut n, mut ok) = (0usize, 0usize);
        for c in self.decisions.iter().filter_map(|d| d.correct) {
            n += 1;
            ok += usize::from(c);
        }
        (n > 0).then(|| ok as f64 / n as f64)
    }

    /// Whether the greedy action matches the observed one, for every step
    /// regardless of verdict. Steps without a greedy action count as 0.
    pub fn greedy_match_series(&self) -> Vec<bool> {
        self.decisions
            .iter()
            .map(|d| d.greedy.as_ref() == Some(&d.observed))
            .collect()
    }

    /// Per-decision CSV: case, step, state fields, verdict, greedy action,
    /// observed action and correctness (blank for escalated steps).
    pub fn write_decisions_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "case_id",
            "step",
            "activity",
            "item_type",
            "gr_flag",
            "value_bin",
            "actor_class",
            "verdict",
            "greedy",
            "observed",
            "correct",
        ])?;
        for d in &self.decisions {
            let s = &self.states[d.state as usize];
            wtr.write_record([
                self.cases[d.case as usize].case_id.as_str(),
                &d.step.to_string(),
                &s.activity,
                s.item_type.as_deref().unwrap_or(""),
                s.gr_flag.as_deref().unwrap_or(""),
                s.value_bin.map_or("", |b| b.label()),
                s.actor_class.map_or("", |a| a.label()),
                if d.verdict.escalates() {
                    "escalate"
                } else {
                    "autonomous"
                },
                d.greedy.as_ref().map_or("", |a| a.as_str()),
                d.observed.as_str(),
                match d.correct {
                    Some(true) => "1",
                    Some(false) => "0",
                    None => "",
                },
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surrogates {
    pub c0_theory: f64,
    pub r_safe_theory: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub cfg: GateConfig,
    /// Mean m(s) over autonomous evaluation decisions.
    pub m_step_theory: Option<f64>,
    pub m_step_test: Option<f64>,
    pub r_safe_theory: f64,
    pub r_safe_test: f64,
    pub c0_theory: f64,
    pub c0_test: f64,
    pub touches_per_case: f64,
    pub a_event_test: f64,
    pub a_case_test: f64,
    pub autonomous_errors_per_case: f64,
}

impl ValidationSummary {
    pub fn step_gap(&self) -> Option<f64> {
        Some((self.m_step_theory? - self.m_step_test?).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub points: Vec<ValidationSummary>,
    pub mean_abs_step_gap: Option<f64>,
    pub max_abs_step_gap: Option<f64>,
}

/// A training model bound to an interned evaluation log.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub trace: DecisionTrace,
    profiles: StateProfiles,
    /// Per trace state: training greedy action and m(s).
    greedy: Vec<(Option<ActionKey>, Option<u32>, f64)>,
}

impl Evaluator {
    pub fn new(
        eval_log: &EventLog,
        train_counts: &CountModel,
        weights: &RiskWeights,
    ) -> Result<Self> {
        let trace = DecisionTrace::new(eval_log, &train_counts.abstraction)?;
        Ok(Self::from_trace(trace, train_counts, weights))
    }

    pub fn from_trace(
        trace: DecisionTrace,
        train_counts: &CountModel,
        weights: &RiskWeights,
    ) -> Self {
        let profiles = StateProfiles::new(train_counts, weights);
        let greedy = trace
            .states
            .iter()
            .map(|s| {
                let p = profiles.get(s);
                let id = p.greedy.as_ref().and_then(|a| trace.action_id(a));
                (p.greedy.clone(), id, p.top_probability)
            })
            .collect();
        Self {
            trace,
            profiles,
            greedy,
        }
    }

    pub fn profiles(&self) -> &StateProfiles {
        &self.profiles
    }

    pub fn verdicts(&self, cfg: &GateConfig) -> Vec<GateDecision> {
        trace_verdicts(&self.trace, &self.profiles, cfg)
    }

    pub fn run(&self, cfg: &GateConfig) -> AgentRun {
        let verdicts = self.verdicts(cfg);
        let mut decisions = Vec::with_capacity(self.trace.n_decisions);
        let mut cases = Vec::with_capacity(self.trace.n_cases());
        for (ci, case) in self.trace.cases.iter().enumerate() {
            let mut touches = 0;
            let mut errors = 0;
            for (t, step) in case.steps.iter().enumerate() {
                let verdict = verdicts[step.state as usize];
                let (greedy, greedy_id, _) = &self.greedy[step.state as usize];
                let correct = match verdict {
                    GateDecision::Escalate => {
                        touches += 1;
                        None
                    }
                    GateDecision::Autonomous => {
                        let ok = *greedy_id == Some(step.action);
                        errors += usize::from(!ok);
                        Some(ok)
                    }
                };
                decisions.push(DecisionRecord {
                    case: ci as u32,
                    step: t as u32,
                    state: step.state,
                    verdict,
                    greedy: greedy.clone(),
                    observed: self.trace.action(step).clone(),
                    correct,
                });
            }
            cases.push(CaseOutcome {
                case_id: case.case_id.clone(),
                decisions: case.steps.len(),
                touches,
                all_autonomous: touches == 0,
                zero_touch_success: touches == 0 && errors == 0,
                safe_success: errors == 0,
                autonomous_errors: errors,
            });
        }
        AgentRun {
            cfg: *cfg,
            states: self.trace.states.clone(),
            decisions,
            cases,
        }
    }

    /// Product-form surrogates averaged over evaluation cases.
    pub fn surrogates(&self, cfg: &GateConfig) -> Surrogates {
        let verdicts = self.verdicts(cfg);
        let (mut c0, mut safe) = (0.0, 0.0);
        for case in &self.trace.cases {
            let (mut pc0, mut psafe) = (1.0, 1.0);
            for step in &case.steps {
                let m = self.greedy[step.state as usize].2;
                if verdicts[step.state as usize].escalates() {
                    pc0 = 0.0;
                } else {
                    pc0 *= m;
                    psafe *= m;
                }
            }
            c0 += pc0;
            safe += psafe;
        }
        let n = self.trace.n_cases().max(1) as f64;
        Surrogates {
            c0_theory: c0 / n,
            r_safe_theory: safe / n,
        }
    }

    /// Mean m(s) over autonomous evaluation decisions.
    pub fn m_step_theory(&self, cfg: &GateConfig) -> Option<f64> {
        let verdicts = self.verdicts(cfg);
        let (mut n, mut sum) = (0usize, 0.0);
        for step in self.trace.cases.iter().flat_map(|c| &c.steps) {
            if !verdicts[step.state as usize].escalates() {
                n += 1;
                sum += self.greedy[step.state as usize].2;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn summary(&self, cfg: &GateConfig) -> ValidationSummary {
        let run = self.run(cfg);
        let sur = self.surrogates(cfg);
        ValidationSummary {
            cfg: *cfg,
            m_step_theory: self.m_step_theory(cfg),
            m_step_test: run.autonomous_step_accuracy(),
            r_safe_theory: sur.r_safe_theory,
            r_safe_test: run.safe_rate(),
            c0_theory: sur.c0_theory,
            c0_test: run.zero_touch_rate(),
            touches_per_case: run.touches_per_case(),
            a_event_test: run.autonomous_event_rate(),
            a_case_test: run.autonomous_case_rate(),
            autonomous_errors_per_case: run.autonomous_errors_per_case(),
        }
    }

    pub fn validate(&self, cfgs: &[GateConfig]) -> Result<ValidationReport> {
        if cfgs.is_empty() {
            return Err(Error::InvalidConfig("validation grid is empty".into()));
        }
        let points: Vec<ValidationSummary> = cfgs.par_iter().map(|c| self.summary(c)).collect();
        let gaps: Vec<f64> = points
            .iter()
            .filter_map(ValidationSummary::step_gap)
            .collect();
        Ok(ValidationReport {
            mean_abs_step_gap: (!gaps.is_empty())
                .then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
            max_abs_step_gap: gaps.iter().copied().reduce(f64::max),
            points,
        })
    }
}

fn check_level(counts: &CountModel, level: AbstractionLevel) -> Result<()> {
    if counts.abstraction.level != level {
        return Err(Error::AbstractionMismatch {
            built: counts.abstraction.level.to_string(),
            requested: level.to_string(),
        });
    }
    Ok(())
}

pub fn run_agent(
    test_log: &EventLog,
    train_counts: &CountModel,
    weights: &RiskWeights,
    cfg: &GateConfig,
    level: AbstractionLevel,
) -> Result<AgentRun> {
    check_level(train_counts, level)?;
    Ok(Evaluator::new(test_log, train_counts, weights)?.run(cfg))
}

pub fn surrogates(
    test_log: &EventLog,
    train_counts: &CountModel,
    weights: &RiskWeights,
    cfg: &GateConfig,
    level: AbstractionLevel,
) -> Result<Surrogates> {
    check_level(train_counts, level)?;
    Ok(Evaluator::new(test_log, train_counts, weights)?.surrogates(cfg))
}

/// Runs the agent and the surrogates over an `h0` grid at fixed `tau`, `w0`.
pub fn validate(
    test_log: &EventLog,
    train_counts: &CountModel,
    weights: &RiskWeights,
    h0_grid: &[f64],
    tau: u64,
    w0: f64,
) -> Result<ValidationReport> {
    let cfgs = h0_grid
        .iter()
        .map(|h0| GateConfig::new(tau, *h0, w0))
        .collect::<Result<Vec<_>>>()?;
    Evaluator::new(test_log, train_counts, weights)?.validate(&cfgs)
}
