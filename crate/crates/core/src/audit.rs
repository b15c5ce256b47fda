//! Support, ambiguity and risk audit: blind masses, risk weights, the
//! escalation gate and the autonomy shares it induces.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::{ActionKey, StateKey};
use crate::error::{Error, Result};
use crate::eventlog::EventLog;
use crate::model::CountModel;
use crate::trace::DecisionTrace;

/// Exception-sensitive activities of the purchase-to-pay process.
pub const DEFAULT_EXCEPTION_ACTIVITIES: [&str; 18] = [
    "Change Approval for Purchase Order",
    "Change Delivery Indicator",
    "Change Final Invoice Indicator",
    "Change Price",
    "Change Quantity",
    "Change Rejection Indicator",
    "Change Storage Location",
    "Change payment term",
    "Delete Purchase Order Item",
    "Remove Payment Block",
    "Set Payment Block",
    "Cancel Goods Receipt",
    "Cancel Invoice Receipt",
    "Cancel Subsequent Invoice",
    "Vendor creates debit memo",
    "Block Purchase Order Item",
    "Reactivate Purchase Order Item",
    "Update Order Confirmation",
];

/// Weight of the value term in the pairwise risk score.
pub const PAIR_VALUE_WEIGHT: f64 = 0.6;
/// Weight of the exception indicator in the pairwise risk score.
pub const PAIR_EXCEPTION_WEIGHT: f64 = 0.4;

pub fn default_exception_set() -> BTreeSet<String> {
    DEFAULT_EXCEPTION_ACTIVITIES
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Reads a newline-delimited activity list. Blank lines and `#` comments
/// are skipped.
pub fn load_exception_set(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub tau: u64,
    pub h0: f64,
    pub w0: f64,
}

impl GateConfig {
    pub fn new(tau: u64, h0: f64, w0: f64) -> Result<Self> {
        let cfg = Self { tau, h0, w0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 || self.h0.is_nan() || self.h0 < 0.0 || !(0.0..=1.0).contains(&self.w0) {
            return Err(Error::InvalidConfig(format!(
                "gate needs tau >= 1, h0 >= 0, 0 <= w0 <= 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Autonomous,
    Escalate,
}

impl GateDecision {
    pub fn escalates(self) -> bool {
        self == Self::Escalate
    }

    /// G(s) as 0/1.
    pub fn indicator(self) -> u64 {
        u64::from(self.escalates())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskWeights {
    pub w_state: HashMap<StateKey, f64>,
    pub w_sa: HashMap<(StateKey, ActionKey), f64>,
    pub exception_set: BTreeSet<String>,
}

impl RiskWeights {
    /// w(s); zero for states the weights were not fitted on.
    pub fn state(&self, s: &StateKey) -> f64 {
        self.w_state.get(s).copied().unwrap_or(0.0)
    }

    /// w_SA(s, a); pairs outside the fit fall back to the exception term.
    pub fn pair(&self, s: &StateKey, a: &ActionKey) -> f64 {
        self.w_sa
            .get(&(s.clone(), a.clone()))
            .copied()
            .unwrap_or_else(|| self.exception_term(a))
    }

    fn exception_term(&self, a: &ActionKey) -> f64 {
        if self.exception_set.contains(a.as_str()) {
            PAIR_EXCEPTION_WEIGHT
        } else {
            0.0
        }
    }
}

/// State- and pair-level risk scores.
///
/// `w(s)` normalizes `ln(1 + mean |V|)` by its maximum over states. `w_SA`
/// averages `0.6 ln(1+|V_t|) / max_u ln(1+|V_u|) + 0.4 [a in E]` over the
/// pair's decisions, with the maximum taken over every event. A zero
/// normalizer zeroes the value terms.
pub fn risk_weights(counts: &CountModel, exception_set: &BTreeSet<String>) -> RiskWeights {
    let log_means: HashMap<&StateKey, f64> = counts
        .states
        .iter()
        .map(|(s, c)| {
            let mean = if c.visits == 0 {
                0.0
            } else {
                c.value_sum / c.visits as f64
            };
            (s, mean.ln_1p())
        })
        .collect();
    let max_state = log_means.values().copied().fold(0.0, f64::max);
    let w_state = log_means
        .into_iter()
        .map(|(s, l)| {
            let w = if max_state > 0.0 { l / max_state } else { 0.0 };
            (s.clone(), w.clamp(0.0, 1.0))
        })
        .collect();

    let max_event = counts.max_log_value;
    let w_sa = counts
        .iter_pairs()
        .map(|(s, a, p)| {
            let value = if max_event > 0.0 && p.count > 0 {
                (p.log_value_sum / p.count as f64) / max_event
            } else {
                0.0
            };
            let exc = if exception_set.contains(a.as_str()) {
                PAIR_EXCEPTION_WEIGHT
            } else {
                0.0
            };
            (
                (s.clone(), a.clone()),
                (PAIR_VALUE_WEIGHT * value + exc).clamp(0.0, 1.0),
            )
        })
        .collect();

    RiskWeights {
        w_state,
        w_sa,
        exception_set: exception_set.clone(),
    }
}

/// Per-state gate inputs taken from a reference model.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProfile {
    pub support: u64,
    pub decisions: u64,
    /// `None` when the state has no observed decisions.
    pub entropy: Option<f64>,
    pub risk: f64,
    pub greedy: Option<ActionKey>,
    /// m(s); zero without decisions.
    pub top_probability: f64,
}

impl StateProfile {
    const UNSEEN: StateProfile = StateProfile {
        support: 0,
        decisions: 0,
        entropy: None,
        risk: 0.0,
        greedy: None,
        top_probability: 0.0,
    };

    /// Escalate iff `N(s) < tau`, `H > h0` or `w(s) > w0`. Nonterminal
    /// queries on states without decisions always escalate.
    pub fn gate(&self, cfg: &GateConfig) -> GateDecision {
        let Some(h) = self.entropy else {
            return GateDecision::Escalate;
        };
        if self.support < cfg.tau || h > cfg.h0 || self.risk > cfg.w0 {
            GateDecision::Escalate
        } else {
            GateDecision::Autonomous
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateProfiles {
    profiles: HashMap<StateKey, StateProfile>,
}

impl StateProfiles {
    pub fn new(counts: &CountModel, weights: &RiskWeights) -> Self {
        let profiles = counts
            .states
            .iter()
            .map(|(s, c)| {
                let greedy = counts.greedy(s);
                let profile = StateProfile {
                    support: c.visits,
                    decisions: c.decisions,
                    entropy: counts.entropy_bits(s).ok(),
                    risk: weights.state(s),
                    greedy: greedy.map(|(a, _)| a.clone()),
                    top_probability: greedy.map_or(0.0, |(_, m)| m),
                };
                (s.clone(), profile)
            })
            .collect();
        Self { profiles }
    }

    pub fn get(&self, s: &StateKey) -> &StateProfile {
        self.profiles.get(s).unwrap_or(&StateProfile::UNSEEN)
    }

    pub fn gate(&self, cfg: &GateConfig, s: &StateKey) -> GateDecision {
        self.get(s).gate(cfg)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &StateProfile)> {
        self.profiles.iter()
    }
}

/// Gate verdict for one state against a reference model.
pub fn gate(
    counts: &CountModel,
    weights: &RiskWeights,
    cfg: &GateConfig,
    s: &StateKey,
) -> GateDecision {
    let support = counts.state_count(s);
    let Ok(h) = counts.entropy_bits(s) else {
        return GateDecision::Escalate;
    };
    if support < cfg.tau || h > cfg.h0 || weights.state(s) > cfg.w0 {
        GateDecision::Escalate
    } else {
        GateDecision::Autonomous
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindMassCurve {
    pub thresholds: Vec<u64>,
    pub state_mass: Vec<f64>,
    pub sa_mass: Vec<f64>,
    pub sa_risk_mass: Vec<f64>,
}

fn check_thresholds(thresholds: &[u64]) -> Result<()> {
    if thresholds.iter().any(|t| *t < 1) || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig(
            "thresholds must be >= 1 and ascending".into(),
        ));
    }
    Ok(())
}

/// Blind masses with support and occupancy taken from the same counts.
pub fn blind_mass_curve(
    counts: &CountModel,
    weights: &RiskWeights,
    thresholds: &[u64],
) -> Result<BlindMassCurve> {
    blind_mass_curve_against(counts, counts, weights, thresholds)
}

/// Blind masses with support from `reference` and occupancy from
/// `evaluation`. Both must use the same abstraction; `weights` supplies
/// w_SA for the evaluation pairs.
///
/// The state and pair masses are integer ratios; the risk-weighted mass
/// sums in sorted key order so results do not depend on hash order.
pub fn blind_mass_curve_against(
    reference: &CountModel,
    evaluation: &CountModel,
    weights: &RiskWeights,
    thresholds: &[u64],
) -> Result<BlindMassCurve> {
    check_thresholds(thresholds)?;
    let n = evaluation.n_events.max(1) as f64;
    let d = evaluation.n_decisions.max(1) as f64;

    let states: Vec<(u64, u64)> = evaluation
        .states
        .iter()
        .map(|(s, c)| (reference.state_count(s), c.visits))
        .collect();
    let mut pairs: Vec<(&StateKey, &ActionKey, u64, u64)> = evaluation
        .iter_pairs()
        .map(|(s, a, p)| (s, a, reference.pair_count(s, a), p.count))
        .collect();
    pairs.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let pair_w: Vec<f64> = pairs
        .iter()
        .map(|(s, a, _, _)| weights.pair(s, a))
        .collect();

    let mut curve = BlindMassCurve {
        thresholds: thresholds.to_vec(),
        state_mass: Vec::with_capacity(thresholds.len()),
        sa_mass: Vec::with_capacity(thresholds.len()),
        sa_risk_mass: Vec::with_capacity(thresholds.len()),
    };
    for &tau in thresholds {
        let blind_visits: u64 = states
            .iter()
            .filter(|(support, _)| *support < tau)
            .map(|(_, v)| v)
            .sum();
        let mut blind_pairs = 0u64;
        let mut risk = 0.0;
        for ((_, _, support, count), w) in pairs.iter().zip(&pair_w) {
            if *support < tau {
                blind_pairs += count;
                risk += *count as f64 * w;
            }
        }
        curve.state_mass.push(blind_visits as f64 / n);
        curve.sa_mass.push(blind_pairs as f64 / d);
        curve.sa_risk_mass.push(risk / d);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutonomyShares {
    pub a_event: f64,
    pub a_case: f64,
}

/// Autonomy shares of `log` under a gate fitted on `counts`.
pub fn autonomy_shares(
    log: &EventLog,
    counts: &CountModel,
    weights: &RiskWeights,
    cfg: &GateConfig,
) -> Result<AutonomyShares> {
    let trace = DecisionTrace::new(log, &counts.abstraction)?;
    let profiles = StateProfiles::new(counts, weights);
    Ok(autonomy_shares_on(&trace, &profiles, cfg))
}

/// Verdict per interned trace state.
pub fn trace_verdicts(
    trace: &DecisionTrace,
    profiles: &StateProfiles,
    cfg: &GateConfig,
) -> Vec<GateDecision> {
    trace.states.iter().map(|s| profiles.gate(cfg, s)).collect()
}

pub fn autonomy_shares_on(
    trace: &DecisionTrace,
    profiles: &StateProfiles,
    cfg: &GateConfig,
) -> AutonomyShares {
    let verdicts = trace_verdicts(trace, profiles, cfg);
    let mut autonomous = 0usize;
    let mut clean_cases = 0usize;
    for case in &trace.cases {
        let mut clean = true;
        for step in &case.steps {
            if verdicts[step.state as usize].escalates() {
                clean = false;
            } else {
                autonomous += 1;
            }
        }
        clean_cases += usize::from(clean);
    }
    AutonomyShares {
        a_event: if trace.n_decisions == 0 {
            1.0
        } else {
            autonomous as f64 / trace.n_decisions as f64
        },
        a_case: if trace.cases.is_empty() {
            1.0
        } else {
            clean_cases as f64 / trace.n_cases() as f64
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageDecomposition {
    pub overall: f64,
    /// E[C | (s,a) supported]; `None` when no decision is supported.
    pub supported_mean: Option<f64>,
    /// E[C | (s,a) blind]; `None` when no decision is blind.
    pub blind_mean: Option<f64>,
    pub blind_mass: f64,
}

impl CoverageDecomposition {
    /// `overall - [(1-B) supported + B blind]`, skipping undefined sides.
    pub fn identity_residual(&self) -> f64 {
        let s = self
            .supported_mean
            .map_or(0.0, |m| (1.0 - self.blind_mass) * m);
        let b = self.blind_mean.map_or(0.0, |m| self.blind_mass * m);
        self.overall - (s + b)
    }
}

/// Splits mean correctness over supported and blind decisions.
///
/// `correctness` holds one entry per nonterminal decision of `log`, in case
/// then step order. A decision `(s, a)` is supported when `counts` has at
/// least `tau` observations of it.
pub fn coverage_decomposition(
    log: &EventLog,
    counts: &CountModel,
    correctness: &[bool],
    tau: u64,
) -> Result<CoverageDecomposition> {
    let trace = DecisionTrace::new(log, &counts.abstraction)?;
    coverage_decomposition_on(&trace, counts, correctness, tau)
}

pub fn coverage_decomposition_on(
    trace: &DecisionTrace,
    counts: &CountModel,
    correctness: &[bool],
    tau: u64,
) -> Result<CoverageDecomposition> {
    if correctness.len() != trace.n_decisions {
        return Err(Error::LengthMismatch {
            expected: trace.n_decisions,
            got: correctness.len(),
        });
    }
    if trace.n_decisions == 0 {
        return Err(Error::EmptyLog);
    }
    let (mut sup_n, mut sup_c, mut blind_n, mut blind_c) = (0u64, 0u64, 0u64, 0u64);
    let steps = trace.cases.iter().flat_map(|c| &c.steps);
    for (step, correct) in steps.zip(correctness) {
        let supported = counts.pair_count(trace.state(step), trace.action(step)) >= tau;
        let c = u64::from(*correct);
        if supported {
            sup_n += 1;
            sup_c += c;
        } else {
            blind_n += 1;
            blind_c += c;
        }
    }
    let total = (sup_n + blind_n) as f64;
    let mean = |c: u64, n: u64| (n > 0).then(|| c as f64 / n as f64);
    Ok(CoverageDecomposition {
        overall: (sup_c + blind_c) as f64 / total,
        supported_mean: mean(sup_c, sup_n),
        blind_mean: mean(blind_c, blind_n),
        blind_mass: blind_n as f64 / total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayState {
    pub state: StateKey,
    pub support: u64,
    pub entropy: f64,
    pub risk: f64,
    /// Nonterminal visits in the evaluation log.
    pub eval_decisions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayReport {
    pub band: (f64, f64),
    pub states: Vec<GatewayState>,
    pub decision_share: f64,
    pub case_share: f64,
}

/// States that pass the support and risk clauses with entropy in
/// `(h_lo, h_hi]`, and how much of the evaluation log they absorb.
pub fn gateway_band_analysis(
    eval_log: &EventLog,
    counts: &CountModel,
    weights: &RiskWeights,
    cfg: &GateConfig,
    band: (f64, f64),
) -> Result<GatewayReport> {
    let trace = DecisionTrace::new(eval_log, &counts.abstraction)?;
    let profiles = StateProfiles::new(counts, weights);
    gateway_band_on(&trace, &profiles, cfg, band)
}

pub fn gateway_band_on(
    trace: &DecisionTrace,
    profiles: &StateProfiles,
    cfg: &GateConfig,
    band: (f64, f64),
) -> Result<GatewayReport> {
    let (lo, hi) = band;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::InvalidConfig(format!(
            "entropy band needs h_lo < h_hi, got ({lo}, {hi}]"
        )));
    }
    let mut members: Vec<(&StateKey, &StateProfile)> = profiles
        .iter()
        .filter(|(_, p)| {
            p.support >= cfg.tau && p.risk <= cfg.w0 && p.entropy.is_some_and(|h| lo < h && h <= hi)
        })
        .collect();
    members.sort_by(|a, b| a.0.cmp(b.0));
    let member_set: HashSet<&StateKey> = members.iter().map(|(s, _)| *s).collect();

    let in_band: Vec<bool> = trace
        .states
        .iter()
        .map(|s| member_set.contains(s))
        .collect();
    let visits = trace.visits();
    let mut eval_visits: HashMap<&StateKey, u64> = HashMap::new();
    for (i, s) in trace.states.iter().enumerate() {
        if in_band[i] {
            eval_visits.insert(s, visits[i]);
        }
    }
    let absorbed: u64 = eval_visits.values().sum();
    let touched = trace
        .cases
        .iter()
        .filter(|c| c.steps.iter().any(|st| in_band[st.state as usize]))
        .count();

    Ok(GatewayReport {
        band,
        states: members
            .into_iter()
            .map(|(s, p)| GatewayState {
                state: s.clone(),
                support: p.support,
                entropy: p.entropy.unwrap_or_default(),
                risk: p.risk,
                eval_decisions: eval_visits.get(s).copied().unwrap_or(0),
            })
            .collect(),
        decision_share: if trace.n_decisions == 0 {
            0.0
        } else {
            absorbed as f64 / trace.n_decisions as f64
        },
        case_share: if trace.cases.is_empty() {
            0.0
        } else {
            touched as f64 / trace.n_cases() as f64
        },
    })
}

/// One row of the per-state audit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub state: StateKey,
    pub visits: u64,
    pub decisions: u64,
    pub n_actions: usize,
    pub entropy: Option<f64>,
    pub top_probability: Option<f64>,
    pub greedy: Option<ActionKey>,
    pub risk: f64,
}

pub fn state_table(counts: &CountModel, weights: &RiskWeights) -> Vec<StateRow> {
    counts
        .sorted_states()
        .into_iter()
        .map(|(s, c)| StateRow {
            state: s.clone(),
            visits: c.visits,
            decisions: c.decisions,
            n_actions: counts.actions(s).map_or(0, |r| r.len()),
            entropy: counts.entropy_bits(s).ok(),
            top_probability: counts.top_probability(s),
            greedy: counts.greedy(s).map(|(a, _)| a.clone()),
            risk: weights.state(s),
        })
        .collect()
}
