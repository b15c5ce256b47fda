//! State abstraction: mapping an event and its case context to a [`StateKey`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog::{Case, EventLog, EventRecord, GR_FLAG_KEY, ITEM_TYPE_KEY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AbstractionLevel {
    /// Activity only.
    #[serde(rename = "l1", alias = "L1")]
    ActivityOnly,
    /// Activity, item type and goods-receipt flag.
    #[serde(rename = "l2", alias = "L2")]
    ActivityItemGr,
    /// Adds the value bin and actor class.
    #[serde(rename = "l3", alias = "L3")]
    Full,
}

impl AbstractionLevel {
    pub const ALL: [Self; 3] = [Self::ActivityOnly, Self::ActivityItemGr, Self::Full];

    pub fn label(self) -> &'static str {
        match self {
            Self::ActivityOnly => "l1",
            Self::ActivityItemGr => "l2",
            Self::Full => "l3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" | "1" => Some(Self::ActivityOnly),
            "l2" | "2" => Some(Self::ActivityItemGr),
            "l3" | "3" => Some(Self::Full),
            _ => None,
        }
    }
}

impl fmt::Display for AbstractionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValueBin {
    Zero,
    Low,
    Mid,
    High,
    VeryHigh,
}

impl ValueBin {
    pub fn label(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Low => "low",
            Self::Mid => "mid",
            Self::High => "high",
            Self::VeryHigh => "very_high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActorClass {
    Human,
    System,
}

impl ActorClass {
    pub fn label(self) -> &'static str {
        match self {
            Self::Human => "human",
            Self::System => "system",
        }
    }
}

/// Abstracted workflow state. Fields beyond the active level are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey {
    pub activity: String,
    pub item_type: Option<String>,
    pub gr_flag: Option<String>,
    pub value_bin: Option<ValueBin>,
    pub actor_class: Option<ActorClass>,
}

impl StateKey {
    pub fn activity(activity: impl Into<String>) -> Self {
        Self {
            activity: activity.into(),
            item_type: None,
            gr_flag: None,
            value_bin: None,
            actor_class: None,
        }
    }

    /// Drops the fields that `level` does not carry.
    pub fn project(&self, level: AbstractionLevel) -> Self {
        let mut out = self.clone();
        if level < AbstractionLevel::Full {
            out.value_bin = None;
            out.actor_class = None;
        }
        if level < AbstractionLevel::ActivityItemGr {
            out.item_type = None;
            out.gr_flag = None;
        }
        out
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.activity)?;
        if let Some(v) = &self.item_type {
            write!(f, " | {v}")?;
        }
        if let Some(v) = &self.gr_flag {
            write!(f, " | gr={v}")?;
        }
        if let Some(v) = self.value_bin {
            write!(f, " | {}", v.label())?;
        }
        if let Some(v) = self.actor_class {
            write!(f, " | {}", v.label())?;
        }
        Ok(())
    }
}

/// Next-activity action label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionKey(pub String);

impl ActionKey {
    pub fn new(activity: impl Into<String>) -> Self {
        Self(activity.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Upper edges of the Low, Mid and High bins over nonzero `|V|`.
///
/// A value equal to an edge falls into the lower bin: Low is `(0, q_low]`,
/// Mid `(q_low, q_mid]`, High `(q_mid, q_high]`, VeryHigh `(q_high, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBinning {
    pub edges: [f64; 3],
}

impl ValueBinning {
    pub const PERCENTILES: [f64; 3] = [25.0, 75.0, 95.0];

    pub fn from_edges(edges: [f64; 3]) -> Result<Self> {
        let [lo, mid, hi] = edges;
        if !(lo > 0.0 && lo <= mid && mid <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bin edges must satisfy 0 < q_low <= q_mid <= q_high, got {edges:?}"
            )));
        }
        Ok(Self { edges })
    }

    /// Fits edges at the 25th/75th/95th percentiles (linear interpolation)
    /// of the nonzero `|V|` values over all events.
    pub fn fit(log: &EventLog) -> Self {
        let mut values: Vec<f64> = log
            .cases
            .iter()
            .flat_map(|c| c.events.iter())
            .map(EventRecord::abs_value)
            .filter(|v| *v > 0.0)
            .collect();
        Self::fit_values(&mut values)
    }

    pub fn fit_values(values: &mut [f64]) -> Self {
        if values.is_empty() {
            return Self {
                edges: [f64::MIN_POSITIVE; 3],
            };
        }
        values.sort_by(f64::total_cmp);
        let edges = Self::PERCENTILES.map(|p| percentile_sorted(values, p).max(f64::MIN_POSITIVE));
        Self { edges }
    }

    pub fn bin(&self, abs_value: f64) -> ValueBin {
        let [lo, mid, hi] = self.edges;
        if abs_value == 0.0 {
            ValueBin::Zero
        } else if abs_value <= lo {
            ValueBin::Low
        } else if abs_value <= mid {
            ValueBin::Mid
        } else if abs_value <= hi {
            ValueBin::High
        } else {
            ValueBin::VeryHigh
        }
    }
}

/// Linear-interpolation percentile of an ascending slice, `p` in `[0, 100]`.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (p / 100.0) * (sorted.len() - 1) as f64;
    let below = pos.floor() as usize;
    let above = pos.ceil() as usize;
    let frac = pos - below as f64;
    sorted[below] + (sorted[above] - sorted[below]) * frac
}

/// Rule deciding whether a resource string denotes an automated actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorPattern {
    /// Case-insensitive prefixes marking system users.
    #[serde(default = "default_prefixes")]
    pub system_prefixes: Vec<String>,
    /// Case-insensitive exact values marking system users.
    #[serde(default = "default_values")]
    pub system_values: Vec<String>,
    #[serde(default = "default_true")]
    pub empty_is_system: bool,
}

fn default_prefixes() -> Vec<String> {
    vec!["batch".into()]
}

fn default_values() -> Vec<String> {
    vec!["NONE".into()]
}

fn default_true() -> bool {
    true
}

impl Default for ActorPattern {
    fn default() -> Self {
        Self {
            system_prefixes: default_prefixes(),
            system_values: default_values(),
            empty_is_system: true,
        }
    }
}

impl ActorPattern {
    pub fn classify(&self, resource: &str) -> ActorClass {
        let r = resource.trim();
        if r.is_empty() {
            return if self.empty_is_system {
                ActorClass::System
            } else {
                ActorClass::Human
            };
        }
        let lower = r.to_ascii_lowercase();
        let system = self
            .system_prefixes
            .iter()
            .any(|p| lower.starts_with(&p.to_ascii_lowercase()))
            || self.system_values.iter().any(|v| v.eq_ignore_ascii_case(r));
        if system {
            ActorClass::System
        } else {
            ActorClass::Human
        }
    }
}

/// Classifies a resource under the default pattern.
pub fn classify_actor(resource: &str) -> ActorClass {
    ActorPattern::default().classify(resource)
}

/// User-facing abstraction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionConfig {
    #[serde(default = "default_level")]
    pub level: AbstractionLevel,
    #[serde(default)]
    pub actor: ActorPattern,
    /// Explicit bin edges; fitted from the log when absent.
    #[serde(default)]
    pub bin_edges: Option<[f64; 3]>,
    #[serde(default)]
    pub item_type_default: Option<String>,
    #[serde(default)]
    pub gr_flag_default: Option<String>,
}

fn default_level() -> AbstractionLevel {
    AbstractionLevel::Full
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        Self {
            level: default_level(),
            actor: ActorPattern::default(),
            bin_edges: None,
            item_type_default: None,
            gr_flag_default: None,
        }
    }
}

impl AbstractionConfig {
    pub fn with_level(level: AbstractionLevel) -> Self {
        Self {
            level,
            ..Self::default()
        }
    }
}

/// A fitted abstraction: level plus everything needed to map events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abstraction {
    pub level: AbstractionLevel,
    pub bins: ValueBinning,
    pub actor: ActorPattern,
    pub item_type_default: Option<String>,
    pub gr_flag_default: Option<String>,
}

/// Case-level attributes resolved once per case.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaseContext {
    pub item_type: Option<String>,
    pub gr_flag: Option<String>,
}

impl Abstraction {
    pub fn fit(log: &EventLog, cfg: &AbstractionConfig) -> Result<Self> {
        let bins = match cfg.bin_edges {
            Some(edges) => ValueBinning::from_edges(edges)?,
            None => ValueBinning::fit(log),
        };
        Ok(Self::with_bins(cfg, bins))
    }

    pub fn with_bins(cfg: &AbstractionConfig, bins: ValueBinning) -> Self {
        Self {
            level: cfg.level,
            bins,
            actor: cfg.actor.clone(),
            item_type_default: cfg.item_type_default.clone(),
            gr_flag_default: cfg.gr_flag_default.clone(),
        }
    }

    /// Same binning and actor rule at a different level.
    pub fn at_level(&self, level: AbstractionLevel) -> Self {
        Self {
            level,
            ..self.clone()
        }
    }

    pub fn case_context(&self, case: &Case) -> Result<CaseContext> {
        if self.level == AbstractionLevel::ActivityOnly {
            return Ok(CaseContext::default());
        }
        let resolve = |key: &str, default: &Option<String>| -> Result<String> {
            case.attr(key)
                .map(str::to_string)
                .or_else(|| default.clone())
                .ok_or_else(|| Error::MissingAttribute {
                    case_id: case.case_id.clone(),
                    attribute: key.to_string(),
                })
        };
        Ok(CaseContext {
            item_type: Some(resolve(ITEM_TYPE_KEY, &self.item_type_default)?),
            gr_flag: Some(resolve(GR_FLAG_KEY, &self.gr_flag_default)?),
        })
    }

    pub fn state(&self, event: &EventRecord, ctx: &CaseContext) -> StateKey {
        let mut key = StateKey::activity(event.activity.clone());
        if self.level >= AbstractionLevel::ActivityItemGr {
            key.item_type = ctx.item_type.clone();
            key.gr_flag = ctx.gr_flag.clone();
        }
        if self.level == AbstractionLevel::Full {
            key.value_bin = Some(self.bins.bin(event.abs_value()));
            key.actor_class = Some(self.actor.classify(&event.resource));
        }
        key
    }

    /// States of every event in the case, in order.
    pub fn case_states(&self, case: &Case) -> Result<Vec<StateKey>> {
        let ctx = self.case_context(case)?;
        Ok(case.events.iter().map(|e| self.state(e, &ctx)).collect())
    }
}

/// Maps one event to its state under the default actor rule and no
/// attribute defaults.
pub fn abstract_state(
    event: &EventRecord,
    case: &Case,
    level: AbstractionLevel,
    bins: &ValueBinning,
) -> Result<StateKey> {
    let abs = Abstraction::with_bins(&AbstractionConfig::with_level(level), *bins);
    let ctx = abs.case_context(case)?;
    Ok(abs.state(event, &ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};
    use std::collections::BTreeMap;

    fn event(activity: &str, v: f64, resource: &str) -> EventRecord {
        let mut attrs = BTreeMap::new();
        attrs.insert(ITEM_TYPE_KEY.to_string(), "Standard".to_string());
        attrs.insert(GR_FLAG_KEY.to_string(), "true".to_string());
        EventRecord {
            case_id: "c".into(),
            activity: activity.into(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            event_index: 0,
            resource: resource.into(),
            cumulative_net_worth: v,
            case_attrs: attrs,
        }
    }

    #[test]
    fn actor_defaults() {
        assert_eq!(classify_actor("batch_05"), ActorClass::System);
        assert_eq!(classify_actor("BATCH_00"), ActorClass::System);
        assert_eq!(classify_actor("user_123"), ActorClass::Human);
        assert_eq!(classify_actor("NONE"), ActorClass::System);
        assert_eq!(classify_actor(""), ActorClass::System);
    }

    #[test]
    fn all_zero_values_bin_to_zero() {
        let bins = ValueBinning::fit_values(&mut []);
        assert!(bins.edges.iter().all(|e| *e > 0.0));
        assert_eq!(bins.bin(0.0), ValueBin::Zero);
    }

    #[test]
    fn edge_values_take_lower_bin() {
        let bins = ValueBinning::from_edges([10.0, 20.0, 30.0]).unwrap();
        assert_eq!(bins.bin(10.0), ValueBin::Low);
        assert_eq!(bins.bin(10.5), ValueBin::Mid);
        assert_eq!(bins.bin(20.0), ValueBin::Mid);
        assert_eq!(bins.bin(30.0), ValueBin::High);
        assert_eq!(bins.bin(30.01), ValueBin::VeryHigh);
    }

    #[test]
    fn invalid_edges_rejected() {
        assert!(ValueBinning::from_edges([0.0, 1.0, 2.0]).is_err());
        assert!(ValueBinning::from_edges([3.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn l1_projection() {
        let e = event("Clear Invoice", 5.0, "user_1");
        let case = Case::new("c", vec![e.clone()]);
        let bins = ValueBinning::from_edges([1.0, 2.0, 3.0]).unwrap();
        let s = abstract_state(&e, &case, AbstractionLevel::ActivityOnly, &bins).unwrap();
        assert_eq!(s, StateKey::activity("Clear Invoice"));
    }

    #[test]
    fn l3_fills_everything() {
        let e = event("Clear Invoice", -2.5, "batch_1");
        let case = Case::new("c", vec![e.clone()]);
        let bins = ValueBinning::from_edges([1.0, 2.0, 3.0]).unwrap();
        let s = abstract_state(&e, &case, AbstractionLevel::Full, &bins).unwrap();
        assert_eq!(s.item_type.as_deref(), Some("Standard"));
        assert_eq!(s.gr_flag.as_deref(), Some("true"));
        assert_eq!(s.value_bin, Some(ValueBin::High));
        assert_eq!(s.actor_class, Some(ActorClass::System));
        assert_eq!(
            s.project(AbstractionLevel::ActivityOnly),
            StateKey::activity("Clear Invoice")
        );
    }

    #[test]
    fn missing_attribute_at_l2() {
        let mut e = event("A", 0.0, "u");
        e.case_attrs.clear();
        let case = Case::new("c", vec![e.clone()]);
        let bins = ValueBinning::fit_values(&mut []);
        let err = abstract_state(&e, &case, AbstractionLevel::ActivityItemGr, &bins).unwrap_err();
        assert!(matches!(err, Error::MissingAttribute { .. }));
        let mut cfg = AbstractionConfig::with_level(AbstractionLevel::ActivityItemGr);
        cfg.item_type_default = Some("?".into());
        cfg.gr_flag_default = Some("?".into());
        let abs = Abstraction::with_bins(&cfg, bins);
        assert_eq!(
            abs.case_states(&case).unwrap()[0].item_type.as_deref(),
            Some("?")
        );
    }

    #[test]
    fn case_attribute_from_first_carrier() {
        let mut first = event("A", 0.0, "u");
        first.case_attrs.insert(ITEM_TYPE_KEY.into(), String::new());
        let mut second = event("B", 0.0, "u");
        second.timestamp = DateTime::from_timestamp(10, 0).unwrap();
        second
            .case_attrs
            .insert(ITEM_TYPE_KEY.into(), "Service".into());
        let case = Case::new("c", vec![first, second]);
        assert_eq!(case.attr(ITEM_TYPE_KEY), Some("Service"));
    }
}
