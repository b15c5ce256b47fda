//! Case-based event logs: CSV ingestion, ordering, descriptive statistics and
//! the chronological train/test split.
//!
//! Events are grouped by case identifier. Within a case they are ordered by
//! `(timestamp, event_index)`; when the source has no event identifier column
//! the row ordinal of the file stands in for it. Cases are kept sorted by
//! identifier so that every downstream computation sees the same order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attribute keys under which the mapped case-level columns are stored.
pub const ITEM_TYPE_KEY: &str = "item_type";
pub const GR_FLAG_KEY: &str = "gr_flag";

/// Special `timestamp_format` value selecting RFC 3339 parsing.
pub const RFC3339: &str = "rfc3339";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub case_id: String,
    pub activity: String,
    pub timestamp: DateTime<Utc>,
    pub event_index: i64,
    pub resource: String,
    pub cumulative_net_worth: f64,
    pub case_attrs: BTreeMap<String, String>,
}

impl EventRecord {
    pub fn abs_value(&self) -> f64 {
        self.cumulative_net_worth.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub events: Vec<EventRecord>,
    pub completion_time: DateTime<Utc>,
}

impl Case {
    /// Builds a case, ordering its events by `(timestamp, event_index)`.
    ///
    /// Panics if `events` is empty.
    pub fn new(case_id: impl Into<String>, mut events: Vec<EventRecord>) -> Self {
        assert!(!events.is_empty(), "a case holds at least one event");
        events.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then(a.event_index.cmp(&b.event_index))
        });
        let completion_time = events.last().map(|e| e.timestamp).unwrap_or_default();
        Self {
            case_id: case_id.into(),
            events,
            completion_time,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of nonterminal decisions, `len - 1`.
    pub fn n_decisions(&self) -> usize {
        self.events.len().saturating_sub(1)
    }

    /// Case-level attribute: the first non-empty value carried by any event.
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.events
            .iter()
            .filter_map(|e| e.case_attrs.get(key))
            .map(|v| v.as_str())
            .find(|v| !v.is_empty())
    }
}

/// Column layout of a CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaMapping {
    pub case_id: String,
    pub activity: String,
    pub timestamp: String,
    #[serde(default)]
    pub event_index: Option<String>,
    #[serde(default)]
    pub resource: Option<String>,
    #[serde(default)]
    pub net_worth: Option<String>,
    #[serde(default)]
    pub item_type: Option<String>,
    #[serde(default)]
    pub gr_flag: Option<String>,
    /// chrono format string, or `rfc3339`.
    #[serde(default = "default_timestamp_format")]
    pub timestamp_format: String,
    #[serde(default = "default_delimiter")]
    pub csv_delimiter: char,
    /// Further columns copied verbatim into `case_attrs`.
    #[serde(default)]
    pub extra_columns: Vec<String>,
}

fn default_timestamp_format() -> String {
    RFC3339.to_string()
}

fn default_delimiter() -> char {
    ','
}

impl SchemaMapping {
    /// Column names of the public BPI Challenge 2019 CSV export.
    pub fn bpi2019() -> Self {
        Self {
            case_id: "case concept:name".into(),
            activity: "event concept:name".into(),
            timestamp: "event time:timestamp".into(),
            event_index: Some("eventID".into()),
            resource: Some("event org:resource".into()),
            net_worth: Some("event Cumulative net worth (EUR)".into()),
            item_type: Some("case Item Type".into()),
            gr_flag: Some("case GR-Based Inv. Verif.".into()),
            timestamp_format: "%d-%m-%Y %H:%M:%S%.f".into(),
            csv_delimiter: ',',
            extra_columns: Vec::new(),
        }
    }

    /// Layout written by [`write_csv`] for generated logs.
    pub fn synthetic() -> Self {
        Self {
            case_id: "case_id".into(),
            activity: "activity".into(),
            timestamp: "timestamp".into(),
            event_index: Some("event_index".into()),
            resource: Some("resource".into()),
            net_worth: Some("net_worth".into()),
            item_type: Some("item_type".into()),
            gr_flag: Some("gr_flag".into()),
            timestamp_format: "%Y-%m-%dT%H:%M:%S%.3fZ".into(),
            csv_delimiter: ',',
            extra_columns: Vec::new(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bpi2019" | "bpi" => Some(Self::bpi2019()),
            "synthetic" | "synth" => Some(Self::synthetic()),
            _ => None,
        }
    }

    /// Reads a mapping from a `.json` or `.toml` file. Unknown keys are
    /// ignored so the same file can carry other settings.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let schema: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, name) in [
            ("case_id", &self.case_id),
            ("activity", &self.activity),
            ("timestamp", &self.timestamp),
        ] {
            if name.trim().is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "mandatory column `{field}` is not mapped"
                )));
            }
        }
        if !self.csv_delimiter.is_ascii() {
            return Err(Error::InvalidConfig(
                "csv_delimiter must be a single ASCII character".into(),
            ));
        }
        Ok(())
    }

    pub fn parse_timestamp(&self, raw: &str) -> std::result::Result<DateTime<Utc>, String> {
        let raw = raw.trim();
        let ts = if self.timestamp_format.eq_ignore_ascii_case(RFC3339) {
            DateTime::parse_from_rfc3339(raw)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| e.to_string())?
        } else {
            NaiveDateTime::parse_from_str(raw, &self.timestamp_format)
                .map(|t| t.and_utc())
                .map_err(|e| format!("`{raw}` does not match `{}`: {e}", self.timestamp_format))?
        };
        Ok(truncate_to_millis(ts))
    }

    pub fn format_timestamp(&self, ts: &DateTime<Utc>) -> String {
        if self.timestamp_format.eq_ignore_ascii_case(RFC3339) {
            ts.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
        } else {
            ts.format(&self.timestamp_format).to_string()
        }
    }
}

fn truncate_to_millis(ts: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(ts.timestamp_millis()).unwrap_or(ts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub cases: Vec<Case>,
    pub schema: SchemaMapping,
}

impl EventLog {
    /// Assembles a log from cases, sorting them by identifier.
    pub fn from_cases(mut cases: Vec<Case>, schema: SchemaMapping) -> Result<Self> {
        let mut seen = HashSet::with_capacity(cases.len());
        for case in &cases {
            if case.case_id.is_empty() {
                return Err(Error::InvalidConfig("empty case identifier".into()));
            }
            if !seen.insert(case.case_id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate case identifier `{}`",
                    case.case_id
                )));
            }
        }
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        Ok(Self { cases, schema })
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn n_events(&self) -> usize {
        self.cases.iter().map(Case::len).sum()
    }

    pub fn n_decisions(&self) -> usize {
        self.cases.iter().map(Case::n_decisions).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Mean number of nonterminal decisions per case.
    pub fn mean_decisions(&self) -> f64 {
        if self.cases.is_empty() {
            return 0.0;
        }
        self.n_decisions() as f64 / self.n_cases() as f64
    }
}

struct ColumnIndex {
    case_id: usize,
    activity: usize,
    timestamp: usize,
    event_index: Option<usize>,
    resource: Option<usize>,
    net_worth: Option<usize>,
    item_type: Option<usize>,
    gr_flag: Option<usize>,
    extra: Vec<(String, usize)>,
}

impl ColumnIndex {
    fn resolve(headers: &[String], schema: &SchemaMapping) -> Result<Self> {
        let find = |name: &str| -> Option<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .or_else(|| headers.iter().position(|h| h.trim() == name.trim()))
        };
        let required =
            |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
        // Mapped optional columns may be absent from a given export.
        let optional = |name: &Option<String>| name.as_deref().and_then(find);
        let mut extra = Vec::with_capacity(schema.extra_columns.len());
        for name in &schema.extra_columns {
            extra.push((name.clone(), required(name)?));
        }
        Ok(Self {
            case_id: required(&schema.case_id)?,
            activity: required(&schema.activity)?,
            timestamp: required(&schema.timestamp)?,
            event_index: optional(&schema.event_index),
            resource: optional(&schema.resource),
            net_worth: optional(&schema.net_worth),
            item_type: optional(&schema.item_type),
            gr_flag: optional(&schema.gr_flag),
            extra,
        })
    }
}

fn parse_event_index(raw: &str) -> std::result::Result<i64, String> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Ok(v);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e18 => Ok(v as i64),
        _ => Err(format!("`{raw}` is not an integer event identifier")),
    }
}

fn parse_net_worth(raw: &str) -> std::result::Result<f64, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(0.0);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{raw}` is not a number")),
    }
}

/// Reads a CSV event log.
///
/// Row numbers in errors are 1-based and count the header as row 1, so they
/// match what a spreadsheet or `sed -n` shows.
pub fn ingest_csv(path: &Path, schema: &SchemaMapping) -> Result<EventLog> {
    schema.validate()?;
    let file = fs::File::open(path)?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &SchemaMapping) -> Result<EventLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.csv_delimiter as u8)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers: Vec<String> = rdr
        .byte_headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let h = String::from_utf8_lossy(h).into_owned();
            if i == 0 {
                h.trim_start_matches('\u{feff}').to_string()
            } else {
                h
            }
        })
        .collect();
    let cols = ColumnIndex::resolve(&headers, schema)?;

    let mut groups: HashMap<String, Vec<EventRecord>> = HashMap::new();
    let mut record = csv::ByteRecord::new();
    let mut ordinal: i64 = 0;
    while rdr.read_byte_record(&mut record)? {
        let row = ordinal as usize + 2;
        let field = |i: usize| String::from_utf8_lossy(record.get(i).unwrap_or_default());
        let parse_err = |column: &str, reason: String| Error::ParseError {
            row,
            column: column.to_string(),
            reason,
        };

        let case_id = field(cols.case_id).trim().to_string();
        if case_id.is_empty() {
            return Err(parse_err(&schema.case_id, "empty case identifier".into()));
        }
        let activity = field(cols.activity).trim().to_string();
        if activity.is_empty() {
            return Err(parse_err(&schema.activity, "empty activity".into()));
        }
        let timestamp = schema
            .parse_timestamp(&field(cols.timestamp))
            .map_err(|e| parse_err(&schema.timestamp, e))?;
        let event_index = match (cols.event_index, &schema.event_index) {
            (Some(i), Some(name)) => {
                parse_event_index(&field(i)).map_err(|e| parse_err(name, e))?
            }
            _ => ordinal,
        };
        let resource = cols
            .resource
            .map(|i| field(i).trim().to_string())
            .unwrap_or_default();
        let cumulative_net_worth = match (cols.net_worth, &schema.net_worth) {
            (Some(i), Some(name)) => parse_net_worth(&field(i)).map_err(|e| parse_err(name, e))?,
            _ => 0.0,
        };

        let mut case_attrs = BTreeMap::new();
        if let Some(i) = cols.item_type {
            case_attrs.insert(ITEM_TYPE_KEY.to_string(), field(i).trim().to_string());
        }
        if let Some(i) = cols.gr_flag {
            case_attrs.insert(GR_FLAG_KEY.to_string(), field(i).trim().to_string());
        }
        for (name, i) in &cols.extra {
            case_attrs.insert(name.clone(), field(*i).into_owned());
        }

        groups
            .entry(case_id.clone())
            .or_default()
            .push(EventRecord {
                case_id,
                activity,
                timestamp,
                event_index,
                resource,
                cumulative_net_worth,
                case_attrs,
            });
        ordinal += 1;
    }

    if groups.is_empty() {
        return Err(Error::EmptyLog);
    }

    let mut cases: Vec<Case> = groups
        .into_par_iter()
        .map(|(id, events)| Case::new(id, events))
        .collect();
    cases.par_sort_unstable_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(EventLog {
        cases,
        schema: schema.clone(),
    })
}

/// Writes a log in the column layout of `schema`.
pub fn write_csv(log: &EventLog, path: &Path, schema: &SchemaMapping) -> Result<()> {
    let file = fs::File::create(path)?;
    write_csv_to(log, std::io::BufWriter::new(file), schema)
}

pub fn write_csv_to<W: Write>(log: &EventLog, writer: W, schema: &SchemaMapping) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(schema.csv_delimiter as u8)
        .from_writer(writer);

    let mut header: Vec<&str> = vec![&schema.case_id, &schema.activity, &schema.timestamp];
    for col in [
        &schema.event_index,
        &schema.resource,
        &schema.net_worth,
        &schema.item_type,
        &schema.gr_flag,
    ]
    .into_iter()
    .flatten()
    {
        header.push(col);
    }
    header.extend(schema.extra_columns.iter().map(String::as_str));
    wtr.write_record(&header)?;

    for case in &log.cases {
        for e in &case.events {
            let mut row = vec![
                e.case_id.clone(),
                e.activity.clone(),
                schema.format_timestamp(&e.timestamp),
            ];
            if schema.event_index.is_some() {
                row.push(e.event_index.to_string());
            }
            if schema.resource.is_some() {
                row.push(e.resource.clone());
            }
            if schema.net_worth.is_some() {
                row.push(e.cumulative_net_worth.to_string());
            }
            let attr = |k: &str| e.case_attrs.get(k).cloned().unwrap_or_default();
            if schema.item_type.is_some() {
                row.push(attr(ITEM_TYPE_KEY));
            }
            if schema.gr_flag.is_some() {
                row.push(attr(GR_FLAG_KEY));
            }
            for name in &schema.extra_columns {
                row.push(attr(name));
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStats {
    pub n_cases: usize,
    pub n_events: usize,
    pub n_activities: usize,
    pub mean_case_len: f64,
    pub median_case_len: f64,
    /// Nearest-rank 99th percentile.
    pub p99_case_len: usize,
    pub max_case_len: usize,
    pub selfloop_transition_rate: f64,
    pub selfloop_case_rate: f64,
    pub start_activity_shares: BTreeMap<String, f64>,
}

pub fn compute_log_stats(log: &EventLog) -> Result<LogStats> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n_cases = log.n_cases();
    let mut lens: Vec<usize> = log.cases.iter().map(Case::len).collect();
    lens.sort_unstable();
    let n_events: usize = lens.iter().sum();

    let mut activities = HashSet::new();
    let mut starts: BTreeMap<String, usize> = BTreeMap::new();
    let mut transitions = 0usize;
    let mut loops = 0usize;
    let mut looping_cases = 0usize;
    for case in &log.cases {
        *starts.entry(case.events[0].activity.clone()).or_default() += 1;
        let mut has_loop = false;
        for e in &case.events {
            activities.insert(e.activity.as_str());
        }
        for w in case.events.windows(2) {
            transitions += 1;
            if w[0].activity == w[1].activity {
                loops += 1;
                has_loop = true;
            }
        }
        looping_cases += usize::from(has_loop);
    }

    let median = if n_cases % 2 == 1 {
        lens[n_cases / 2] as f64
    } else {
        (lens[n_cases / 2 - 1] + lens[n_cases / 2]) as f64 / 2.0
    };
    let rank = ((0.99 * n_cases as f64).ceil() as usize).clamp(1, n_cases);

    Ok(LogStats {
        n_cases,
        n_events,
        n_activities: activities.len(),
        mean_case_len: n_events as f64 / n_cases as f64,
        median_case_len: median,
        p99_case_len: lens[rank - 1],
        max_case_len: lens[n_cases - 1],
        selfloop_transition_rate: if transitions == 0 {
            0.0
        } else {
            loops as f64 / transitions as f64
        },
        selfloop_case_rate: looping_cases as f64 / n_cases as f64,
        start_activity_shares: starts
            .into_iter()
            .map(|(a, c)| (a, c as f64 / n_cases as f64))
            .collect(),
    })
}

/// Splits whole cases by completion time: the earliest
/// `floor(train_fraction * n_cases)` cases train, the rest test.
pub fn chronological_split(log: &EventLog, train_fraction: f64) -> Result<(EventLog, EventLog)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} is outside (0, 1)"
        )));
    }
    let n = log.n_cases();
    let mut order: Vec<&Case> = log.cases.iter().collect();
    order.sort_by(|a, b| {
        a.completion_time
            .cmp(&b.completion_time)
            .then_with(|| a.case_id.cmp(&b.case_id))
    });
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    let n_train = ((train_fraction * n as f64) + 1e-9).floor() as usize;
    let n_train = n_train.min(n);
    if n_train == 0 || n_train == n {
        return Err(Error::DegenerateSplit {
            train: n_train,
            test: n - n_train,
        });
    }
    let (train, test) = order.split_at(n_train);
    let build = |cases: &[&Case]| {
        EventLog::from_cases(
            cases.iter().map(|c| (*c).clone()).collect(),
            log.schema.clone(),
        )
    };
    Ok((build(train)?, build(test)?))
}
