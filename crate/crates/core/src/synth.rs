//! Synthetic event logs drawn from a fully specified ground-truth process.
//!
//! Each generator state emits one event per visit. From a nonterminal state
//! an action (the next activity) is drawn from the true policy, then the next
//! state from the true kernel; the next state must carry the action's
//! activity. States without actions end the case.
//!
//! Case `i` draws from its own ChaCha stream, so generation is deterministic
//! for a seed and independent of thread scheduling.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog::{Case, EventLog, EventRecord, SchemaMapping, GR_FLAG_KEY, ITEM_TYPE_KEY};

const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighted {
    pub state: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedResource {
    pub resource: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseProfile {
    pub item_type: String,
    pub gr_flag: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueSampler {
    #[default]
    Zero,
    Fixed {
        value: f64,
    },
    /// Zero with probability `zero_mass`, else `exp(N(mu, sigma^2))`.
    LogNormal {
        mu: f64,
        sigma: f64,
        #[serde(default)]
        zero_mass: f64,
    },
}

impl ValueSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Fixed { value } => value,
            Self::LogNormal {
                mu,
                sigma,
                zero_mass,
            } => {
                if rng.gen::<f64>() < zero_mass {
                    0.0
                } else {
                    // validated in GroundTruthProcess::validate
                    LogNormal::new(mu, sigma).map_or(0.0, |d| d.sample(rng))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub activity: String,
    pub p: f64,
    pub next: Vec<Weighted>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub id: String,
    pub activity: String,
    #[serde(default)]
    pub resources: Vec<WeightedResource>,
    #[serde(default)]
    pub value: ValueSampler,
    /// Empty for terminal states.
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthProcess {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub max_case_len: usize,
    /// Seconds between consecutive case starts.
    #[serde(default = "default_stride")]
    pub case_stride_secs: i64,
    /// Seconds between consecutive events of a case.
    #[serde(default = "default_gap")]
    pub event_gap_secs: i64,
    pub start: Vec<Weighted>,
    #[serde(default)]
    pub case_profiles: Vec<CaseProfile>,
    pub states: Vec<StateSpec>,
}

fn default_cap() -> usize {
    10_000
}

fn default_stride() -> i64 {
    120
}

fn default_gap() -> i64 {
    60
}

fn check_sum(what: &str, ps: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for p in ps {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!(
                "{what}: probability {p} outside [0, 1]"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(Error::InvalidConfig(format!(
            "{what}: probabilities sum to {total}"
        )));
    }
    Ok(())
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T], p: impl Fn(&T) -> f64) -> &'a T {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for item in items {
        acc += p(item);
        if u < acc {
            return item;
        }
    }
    // rounding slack lands on the last entry with positive weight
    items
        .iter()
        .rev()
        .find(|i| p(i) > 0.0)
        .unwrap_or(&items[items.len() - 1])
}

impl GroundTruthProcess {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let process: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        process.validate()?;
        Ok(process)
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Checks row sums, references, activity consistency and that a
    /// terminal state is reachable from every state.
    pub fn validate(&self) -> Result<()> {
        let index = self.index();
        if index.len() != self.states.len() {
            return Err(Error::InvalidConfig("duplicate state ids".into()));
        }
        if self.start.is_empty() {
            return Err(Error::InvalidConfig("empty start distribution".into()));
        }
        if self.max_case_len == 0 {
            return Err(Error::InvalidConfig("max_case_len must be positive".into()));
        }
        check_sum("start", self.start.iter().map(|w| w.p))?;
        if !self.case_profiles.is_empty() {
            check_sum("case_profiles", self.case_profiles.iter().map(|c| c.p))?;
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("unknown state `{id}`")))
        };
        for w in &self.start {
            lookup(&w.state)?;
        }
        for s in &self.states {
            if !s.resources.is_empty() {
                check_sum(
                    &format!("{} resources", s.id),
                    s.resources.iter().map(|r| r.p),
                )?;
            }
            if let ValueSampler::LogNormal {
                mu,
                sigma,
                zero_mass,
            } = s.value
            {
                if LogNormal::new(mu, sigma).is_err() || !(0.0..=1.0).contains(&zero_mass) {
                    return Err(Error::InvalidConfig(format!("{}: bad value sampler", s.id)));
                }
            }
            if s.actions.is_empty() {
                continue;
            }
            check_sum(&format!("{} policy", s.id), s.actions.iter().map(|a| a.p))?;
            for a in &s.actions {
                check_sum(
                    &format!("{} -> {} kernel", s.id, a.activity),
                    a.next.iter().map(|w| w.p),
                )?;
                for w in &a.next {
                    let j = lookup(&w.state)?;
                    if self.states[j].activity != a.activity {
                        return Err(Error::InvalidConfig(format!(
                            "{}: action `{}` leads to state `{}` with activity `{}`",
                            s.id, a.activity, w.state, self.states[j].activity
                        )));
                    }
                }
            }
        }

        // Backward reachability from terminal states over positive edges.
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); self.states.len()];
        for (i, s) in self.states.iter().enumerate() {
            for a in s.actions.iter().filter(|a| a.p > 0.0) {
                for w in a.next.iter().filter(|w| w.p > 0.0) {
                    preds[index[w.state.as_str()]].push(i);
                }
            }
        }
        let mut reached: HashSet<usize> = HashSet::new();
        let mut queue: VecDeque<usize> = (0..self.states.len())
            .filter(|i| self.states[*i].actions.is_empty())
            .collect();
        reached.extend(queue.iter().copied());
        while let Some(j) = queue.pop_front() {
            for &i in &preds[j] {
                if reached.insert(i) {
                    queue.push_back(i);
                }
            }
        }
        if let Some(s) = self
            .states
            .iter()
            .enumerate()
            .find(|(i, _)| !reached.contains(i))
        {
            return Err(Error::InvalidConfig(format!(
                "no terminal state reachable from `{}`",
                s.1.id
            )));
        }
        Ok(())
    }

    /// True π(·|s) by state id.
    pub fn policy(&self, id: &str) -> Option<BTreeMap<String, f64>> {
        let s = self.states.iter().find(|s| s.id == id)?;
        let mut out = BTreeMap::new();
        for a in &s.actions {
            *out.entry(a.activity.clone()).or_default() += a.p;
        }
        Some(out)
    }

    /// Deterministic chain through `activities`, one state each.
    pub fn chain(activities: &[&str]) -> Self {
        let states = activities
            .iter()
            .enumerate()
            .map(|(i, a)| StateSpec {
                id: a.to_string(),
                activity: a.to_string(),
                resources: Vec::new(),
                value: ValueSampler::Zero,
                actions: activities
                    .get(i + 1)
                    .map(|next| {
                        vec![ActionSpec {
                            activity: next.to_string(),
                            p: 1.0,
                            next: vec![Weighted {
                                state: next.to_string(),
                                p: 1.0,
                            }],
                        }]
                    })
                    .unwrap_or_default(),
            })
            .collect();
        Self {
            seed: 0,
            max_case_len: activities.len(),
            case_stride_secs: default_stride(),
            event_gap_secs: default_gap(),
            start: vec![Weighted {
                state: activities[0].to_string(),
                p: 1.0,
            }],
            case_profiles: single_profile(),
            states,
        }
    }

    /// `Hub` branches to `Left` or `Right` with probability `p_left`, both
    /// continue to `End`.
    pub fn hub(p_left: f64) -> Self {
        let step = |to: &str, p: f64| ActionSpec {
            activity: to.into(),
            p,
            next: vec![Weighted {
                state: to.into(),
                p: 1.0,
            }],
        };
        let state = |id: &str, actions: Vec<ActionSpec>| StateSpec {
            id: id.into(),
            activity: id.into(),
            resources: Vec::new(),
            value: ValueSampler::Zero,
            actions,
        };
        Self {
            seed: 0,
            max_case_len: 10,
            case_stride_secs: default_stride(),
            event_gap_secs: default_gap(),
            start: vec![Weighted {
                state: "Hub".into(),
                p: 1.0,
            }],
            case_profiles: single_profile(),
            states: vec![
                state(
                    "Hub",
                    vec![step("Left", p_left), step("Right", 1.0 - p_left)],
                ),
                state("Left", vec![step("End", 1.0)]),
                state("Right", vec![step("End", 1.0)]),
                state("End", Vec::new()),
            ],
        }
    }

    /// `Start -> Loop`, where `Loop` repeats itself with probability
    /// `p_loop` and otherwise moves to `End`.
    pub fn self_loop(p_loop: f64) -> Self {
        let step = |to: &str, p: f64| ActionSpec {
            activity: to.into(),
            p,
            next: vec![Weighted {
                state: to.into(),
                p: 1.0,
            }],
        };
        let state = |id: &str, actions: Vec<ActionSpec>| StateSpec {
            id: id.into(),
            activity: id.into(),
            resources: Vec::new(),
            value: ValueSampler::Zero,
            actions,
        };
        Self {
            seed: 0,
            max_case_len: 100_000,
            case_stride_secs: default_stride(),
            event_gap_secs: default_gap(),
            start: vec![Weighted {
                state: "Start".into(),
                p: 1.0,
            }],
            case_profiles: single_profile(),
            states: vec![
                state("Start", vec![step("Loop", 1.0)]),
                state(
                    "Loop",
                    vec![step("Loop", p_loop), step("End", 1.0 - p_loop)],
                ),
                state("End", Vec::new()),
            ],
        }
    }
}

fn single_profile() -> Vec<CaseProfile> {
    vec![CaseProfile {
        item_type: "Standard".into(),
        gr_flag: "true".into(),
        p: 1.0,
    }]
}

fn base_time() -> DateTime<Utc> {
    DateTime::from_timestamp(1_577_836_800, 0).unwrap_or_default() // 2020-01-01
}

/// Draws `n_cases` cases. `seed` overrides the process seed.
pub fn generate(process: &GroundTruthProcess, n_cases: usize, seed: u64) -> Result<EventLog> {
    if n_cases == 0 {
        return Err(Error::InvalidConfig("n_cases must be at least 1".into()));
    }
    process.validate()?;
    let index = process.index();
    let width = n_cases.to_string().len().max(6);

    let mut cases: Vec<Case> = (0..n_cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let case_id = format!("case_{i:0width$}");
            let profile = (!process.case_profiles.is_empty())
                .then(|| pick(&mut rng, &process.case_profiles, |c| c.p));
            let start = base_time() + Duration::seconds(process.case_stride_secs * i as i64);

            let mut events = Vec::new();
            let mut current = index[pick(&mut rng, &process.start, |w| w.p).state.as_str()];
            loop {
                if events.len() >= process.max_case_len {
                    return Err(Error::NonterminatingProcess {
                        case: i,
                        cap: process.max_case_len,
                    });
                }
                let spec = &process.states[current];
                let resource = if spec.resources.is_empty() {
                    String::new()
                } else {
                    pick(&mut rng, &spec.resources, |r| r.p).resource.clone()
                };
                let mut case_attrs = BTreeMap::new();
                if let Some(p) = profile {
                    case_attrs.insert(ITEM_TYPE_KEY.to_string(), p.item_type.clone());
                    case_attrs.insert(GR_FLAG_KEY.to_string(), p.gr_flag.clone());
                }
                let t = events.len() as i64;
                events.push(EventRecord {
                    case_id: case_id.clone(),
                    activity: spec.activity.clone(),
                    timestamp: start + Duration::seconds(process.event_gap_secs * t),
                    event_index: 0,
                    resource,
                    cumulative_net_worth: spec.value.sample(&mut rng),
                    case_attrs,
                });
                if spec.actions.is_empty() {
                    break;
                }
                let action = pick(&mut rng, &spec.actions, |a| a.p);
                current = index[pick(&mut rng, &action.next, |w| w.p).state.as_str()];
            }
            Ok(Case::new(case_id, events))
        })
        .collect::<Result<_>>()?;

    let mut ordinal = 0i64;
    for case in &mut cases {
        for e in &mut case.events {
            e.event_index = ordinal;
            ordinal += 1;
        }
    }
    EventLog::from_cases(cases, SchemaMapping::synthetic())
}

/// Shape of a randomly drawn process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomProcessParams {
    pub n_activities: usize,
    pub max_actions: usize,
    /// Probability mass reserved for ending the case at every step.
    pub end_mass: f64,
    pub max_case_len: usize,
}

impl Default for RandomProcessParams {
    fn default() -> Self {
        Self {
            n_activities: 6,
            max_actions: 3,
            end_mass: 0.25,
            max_case_len: 400,
        }
    }
}

/// A random process with self-loops, two item types, two GR flags, mixed
/// human/system resources and log-normal values with zero mass.
pub fn random_process(seed: u64, params: RandomProcessParams) -> GroundTruthProcess {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_activities.max(1);
    let names: Vec<String> = (0..n).map(|i| format!("Act{i}")).collect();
    let dirichlet = |rng: &mut ChaCha8Rng, k: usize, mass: f64| -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut ps: Vec<f64> = raw.iter().map(|r| mass * r / total).collect();
        // absorb rounding so rows sum to `mass` exactly enough
        let drift = mass - ps.iter().sum::<f64>();
        ps[k - 1] += drift;
        ps
    };

    let mut states: Vec<StateSpec> = names
        .iter()
        .map(|name| {
            let k = rng.gen_range(1..=params.max_actions.max(1)).min(n);
            let mut targets: Vec<usize> = (0..n).collect();
            for i in 0..k {
                let j = rng.gen_range(i..n);
                targets.swap(i, j);
            }
            targets.truncate(k);
            targets.sort_unstable();
            let ps = dirichlet(&mut rng, k + 1, 1.0);
            let mut actions: Vec<ActionSpec> = targets
                .iter()
                .zip(&ps)
                .map(|(t, p)| ActionSpec {
                    activity: names[*t].clone(),
                    p: *p * (1.0 - params.end_mass),
                    next: vec![Weighted {
                        state: names[*t].clone(),
                        p: 1.0,
                    }],
                })
                .collect();
            let used: f64 = actions.iter().map(|a| a.p).sum();
            actions.push(ActionSpec {
                activity: "End".into(),
                p: 1.0 - used,
                next: vec![Weighted {
                    state: "End".into(),
                    p: 1.0,
                }],
            });
            let human = rng.gen_range(0.2..0.9);
            StateSpec {
                id: name.clone(),
                activity: name.clone(),
                resources: vec![
                    WeightedResource {
                        resource: format!("user_{:03}", rng.gen_range(0..20)),
                        p: human,
                    },
                    WeightedResource {
                        resource: "batch_00".into(),
                        p: 1.0 - human,
                    },
                ],
                value: ValueSampler::LogNormal {
                    mu: rng.gen_range(2.0..8.0),
                    sigma: rng.gen_range(0.3..1.5),
                    zero_mass: rng.gen_range(0.0..0.4),
                },
                actions,
            }
        })
        .collect();
    states.push(StateSpec {
        id: "End".into(),
        activity: "End".into(),
        resources: Vec::new(),
        value: ValueSampler::Zero,
        actions: Vec::new(),
    });

    let start_ps = dirichlet(&mut rng, n.min(2), 1.0);
    let profile_ps = dirichlet(&mut rng, 4, 1.0);
    let profiles = [
        ("Standard", "true"),
        ("Standard", "false"),
        ("Service", "true"),
        ("Service", "false"),
    ];
    GroundTruthProcess {
        seed,
        max_case_len: params.max_case_len,
        case_stride_secs: rng.gen_range(30..300),
        event_gap_secs: default_gap(),
        start: start_ps
            .iter()
            .enumerate()
            .map(|(i, p)| Weighted {
                state: names[i].clone(),
                p: *p,
            })
            .collect(),
        case_profiles: profiles
            .iter()
            .zip(&profile_ps)
            .map(|((it, gr), p)| CaseProfile {
                item_type: it.to_string(),
                gr_flag: gr.to_string(),
                p: *p,
            })
            .collect(),
        states,
    }
}
