//! Count tables and the estimators derived from them.
//!
//! Every probability is a ratio of integer counts evaluated at query time;
//! nothing derived is stored, so a [`CountModel`] read back from JSON yields
//! bit-identical reports.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::{Abstraction, ActionKey, StateKey};
use crate::error::{Error, Result};
use crate::eventlog::EventLog;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateCounts {
    /// N(s): every visit, terminal events included.
    pub visits: u64,
    /// Visits that have a successor event.
    pub decisions: u64,
    /// Sum of |V| over all visits.
    pub value_sum: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairCounts {
    pub count: u64,
    /// Sum of ln(1 + |V_t|) over the decisions in this pair.
    pub log_value_sum: f64,
    /// N(s, a, s').
    pub next: BTreeMap<StateKey, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountModel {
    pub abstraction: Abstraction,
    pub n_cases: u64,
    pub n_events: u64,
    pub n_decisions: u64,
    /// max over all events of ln(1 + |V|).
    pub max_log_value: f64,
    pub states: HashMap<StateKey, StateCounts>,
    /// Outgoing actions per state, ordered by action label.
    pub pairs: HashMap<StateKey, BTreeMap<ActionKey, PairCounts>>,
}

impl CountModel {
    pub fn empty(abstraction: Abstraction) -> Self {
        Self {
            abstraction,
            n_cases: 0,
            n_events: 0,
            n_decisions: 0,
            max_log_value: 0.0,
            states: HashMap::new(),
            pairs: HashMap::new(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.values().map(BTreeMap::len).sum()
    }

    pub fn state_count(&self, s: &StateKey) -> u64 {
        self.states.get(s).map_or(0, |c| c.visits)
    }

    pub fn decision_count(&self, s: &StateKey) -> u64 {
        self.states.get(s).map_or(0, |c| c.decisions)
    }

    pub fn pair_count(&self, s: &StateKey, a: &ActionKey) -> u64 {
        self.pairs
            .get(s)
            .and_then(|row| row.get(a))
            .map_or(0, |p| p.count)
    }

    pub fn actions(&self, s: &StateKey) -> Option<&BTreeMap<ActionKey, PairCounts>> {
        self.pairs.get(s).filter(|row| !row.is_empty())
    }

    /// Iterates `(state, action, counts)` in unspecified order.
    pub fn iter_pairs(&self) -> impl Iterator<Item = (&StateKey, &ActionKey, &PairCounts)> {
        self.pairs
            .iter()
            .flat_map(|(s, row)| row.iter().map(move |(a, p)| (s, a, p)))
    }

    /// States sorted by key, for reports.
    pub fn sorted_states(&self) -> Vec<(&StateKey, &StateCounts)> {
        let mut v: Vec<_> = self.states.iter().collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Adds another model's counts. Both must share an abstraction.
    pub fn merge(&mut self, other: &CountModel) {
        self.n_cases += other.n_cases;
        self.n_events += other.n_events;
        self.n_decisions += other.n_decisions;
        self.max_log_value = self.max_log_value.max(other.max_log_value);
        for (s, c) in &other.states {
            let e = self.states.entry(s.clone()).or_default();
            e.visits += c.visits;
            e.decisions += c.decisions;
            e.value_sum += c.value_sum;
        }
        for (s, row) in &other.pairs {
            let mine = self.pairs.entry(s.clone()).or_default();
            for (a, p) in row {
                let e = mine.entry(a.clone()).or_default();
                e.count += p.count;
                e.log_value_sum += p.log_value_sum;
                for (next, n) in &p.next {
                    *e.next.entry(next.clone()).or_default() += n;
                }
            }
        }
    }

    /// π̂(·|s), ordered by action label.
    pub fn policy(&self, s: &StateKey) -> Result<Vec<(ActionKey, f64)>> {
        let row = self
            .actions(s)
            .ok_or_else(|| Error::UnknownState(s.to_string()))?;
        let total: u64 = row.values().map(|p| p.count).sum();
        Ok(row
            .iter()
            .map(|(a, p)| (a.clone(), p.count as f64 / total as f64))
            .collect())
    }

    /// Shannon entropy of π̂(·|s) in bits.
    pub fn entropy_bits(&self, s: &StateKey) -> Result<f64> {
        let row = self
            .actions(s)
            .ok_or_else(|| Error::UnknownState(s.to_string()))?;
        Ok(entropy_of_counts(row.values().map(|p| p.count)))
    }

    /// Greedy action and its probability m(s); ties go to the smallest label.
    pub fn greedy(&self, s: &StateKey) -> Option<(&ActionKey, f64)> {
        let row = self.actions(s)?;
        let total: u64 = row.values().map(|p| p.count).sum();
        let mut best: Option<(&ActionKey, u64)> = None;
        for (a, p) in row {
            if best.is_none_or(|(_, n)| p.count > n) {
                best = Some((a, p.count));
            }
        }
        best.map(|(a, n)| (a, n as f64 / total as f64))
    }

    /// m(s) = max_a π̂(a|s).
    pub fn top_probability(&self, s: &StateKey) -> Option<f64> {
        self.greedy(s).map(|(_, m)| m)
    }

    /// P̂(·|s, a), ordered by next state.
    pub fn kernel(&self, s: &StateKey, a: &ActionKey) -> Option<Vec<(StateKey, f64)>> {
        let p = self.pairs.get(s)?.get(a)?;
        Some(
            p.next
                .iter()
                .map(|(next, n)| (next.clone(), *n as f64 / p.count as f64))
                .collect(),
        )
    }

    pub fn to_artifact(&self) -> CountArtifact {
        let mut states: Vec<StateEntry> = self
            .states
            .iter()
            .map(|(s, c)| StateEntry {
                state: s.clone(),
                counts: c.clone(),
            })
            .collect();
        states.sort_by(|a, b| a.state.cmp(&b.state));
        let mut pairs: Vec<PairEntry> = self
            .iter_pairs()
            .map(|(s, a, p)| PairEntry {
                state: s.clone(),
                action: a.clone(),
                count: p.count,
                log_value_sum: p.log_value_sum,
                next: p
                    .next
                    .iter()
                    .map(|(n, c)| NextEntry {
                        state: n.clone(),
                        count: *c,
                    })
                    .collect(),
            })
            .collect();
        pairs.sort_by(|a, b| (&a.state, &a.action).cmp(&(&b.state, &b.action)));
        CountArtifact {
            abstraction: self.abstraction.clone(),
            n_cases: self.n_cases,
            n_events: self.n_events,
            n_decisions: self.n_decisions,
            max_log_value: self.max_log_value,
            states,
            pairs,
        }
    }

    pub fn from_artifact(art: CountArtifact) -> Self {
        let mut model = Self::empty(art.abstraction);
        model.n_cases = art.n_cases;
        model.n_events = art.n_events;
        model.n_decisions = art.n_decisions;
        model.max_log_value = art.max_log_value;
        model.states = art
            .states
            .into_iter()
            .map(|e| (e.state, e.counts))
            .collect();
        for p in art.pairs {
            model.pairs.entry(p.state).or_default().insert(
                p.action,
                PairCounts {
                    count: p.count,
                    log_value_sum: p.log_value_sum,
                    next: p.next.into_iter().map(|n| (n.state, n.count)).collect(),
                },
            );
        }
        model
    }

    /// JSON with lexicographically sorted object keys.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self.to_artifact())?;
        Ok(serde_json::to_string_pretty(&value)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self::from_artifact(serde_json::from_str(text)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Entropy in bits of the distribution proportional to `counts`.
pub fn entropy_of_counts(counts: impl Iterator<Item = u64> + Clone) -> f64 {
    let total: u64 = counts.clone().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .filter(|n| *n > 0)
        .map(|n| {
            let p = n as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub state: StateKey,
    pub counts: StateCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextEntry {
    pub state: StateKey,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub state: StateKey,
    pub action: ActionKey,
    pub count: u64,
    pub log_value_sum: f64,
    pub next: Vec<NextEntry>,
}

/// Serialized form of a [`CountModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountArtifact {
    pub abstraction: Abstraction,
    pub n_cases: u64,
    pub n_events: u64,
    pub n_decisions: u64,
    pub max_log_value: f64,
    pub states: Vec<StateEntry>,
    pub pairs: Vec<PairEntry>,
}

/// Counts every event as a state visit and every consecutive event pair as
/// one decision whose action is the successor's activity.
pub fn build_counts(log: &EventLog, abstraction: &Abstraction) -> Result<CountModel> {
    let mut model = CountModel::empty(abstraction.clone());
    for case in &log.cases {
        let states = abstraction.case_states(case)?;
        model.n_cases += 1;
        for (t, (event, s)) in case.events.iter().zip(&states).enumerate() {
            let v = event.abs_value();
            let log_v = v.ln_1p();
            model.n_events += 1;
            model.max_log_value = model.max_log_value.max(log_v);
            let sc = model.states.entry(s.clone()).or_default();
            sc.visits += 1;
            sc.value_sum += v;
            let Some(next_event) = case.events.get(t + 1) else {
                continue;
            };
            sc.decisions += 1;
            model.n_decisions += 1;
            let pc = model
                .pairs
                .entry(s.clone())
                .or_default()
                .entry(ActionKey::new(next_event.activity.clone()))
                .or_default();
            pc.count += 1;
            pc.log_value_sum += log_v;
            *pc.next.entry(states[t + 1].clone()).or_default() += 1;
        }
    }
    Ok(model)
}

/// Empirical occupancy measures of one log under one abstraction.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    /// N(s) / n over all events.
    pub d_state: HashMap<StateKey, f64>,
    /// N(s, a) / number of decisions.
    pub d_sa: HashMap<(StateKey, ActionKey), f64>,
    /// Expected nonterminal visits per case.
    pub visits: HashMap<StateKey, f64>,
    pub n_cases: u64,
    pub mean_decisions: f64,
}

pub fn occupancy(counts: &CountModel) -> OccupancyMeasure {
    let n = counts.n_events.max(1) as f64;
    let d = counts.n_decisions.max(1) as f64;
    let cases = counts.n_cases.max(1) as f64;
    let d_state = counts
        .states
        .iter()
        .map(|(s, c)| (s.clone(), c.visits as f64 / n))
        .collect();
    let d_sa = counts
        .iter_pairs()
        .map(|(s, a, p)| ((s.clone(), a.clone()), p.count as f64 / d))
        .collect();
    let visits = counts
        .states
        .iter()
        .filter(|(_, c)| c.decisions > 0)
        .map(|(s, c)| (s.clone(), c.decisions as f64 / cases))
        .collect();
    OccupancyMeasure {
        d_state,
        d_sa,
        visits,
        n_cases: counts.n_cases,
        mean_decisions: if counts.n_cases == 0 {
            0.0
        } else {
            counts.n_decisions as f64 / counts.n_cases as f64
        },
    }
}
