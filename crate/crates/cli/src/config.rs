//! Run configuration: defaults, then the config file, then flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use flowgap::audit::{default_exception_set, load_exception_set};
use flowgap::{
    AbstractionConfig, AbstractionLevel, CostParams, Error, GateConfig, Result, SchemaMapping,
};
use serde::Deserialize;

/// Optional `[run]` table of a config file. Every field mirrors a flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct RunTable {
    pub level: Option<AbstractionLevel>,
    pub tau: Option<Vec<u64>>,
    pub h0: Option<Vec<f64>>,
    pub w0: Option<Vec<f64>>,
    pub split: Option<f64>,
    pub c_a: Option<f64>,
    pub c_h: Option<f64>,
    pub lambda: Option<f64>,
    pub exceptions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub band: Option<[f64; 2]>,
}

/// Values given on the command line; `None` defers to the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub level: Option<AbstractionLevel>,
    pub tau: Option<Vec<u64>>,
    pub h0: Option<Vec<f64>>,
    pub w0: Option<Vec<f64>>,
    pub split: Option<f64>,
    pub c_a: Option<f64>,
    pub c_h: Option<f64>,
    pub lambda: Option<f64>,
    pub exceptions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub band: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub schema: SchemaMapping,
    pub abstraction: AbstractionConfig,
    /// Set only when the user chose a level.
    pub level: Option<AbstractionLevel>,
    pub tau: Option<Vec<u64>>,
    pub h0: Option<Vec<f64>>,
    pub w0: Option<Vec<f64>>,
    pub split: f64,
    pub cost: CostParams,
    pub exceptions: BTreeSet<String>,
    pub out: PathBuf,
    pub band: (f64, f64),
}

pub const DEFAULT_SPLIT: f64 = 0.8;
pub const DEFAULT_BAND: (f64, f64) = (1.5, 2.0);
pub const DEFAULT_OUT: &str = "flowgap-out";

impl RunConfig {
    /// `schema` is a preset name or a TOML/JSON file. A file may carry the
    /// column mapping at top level (or `preset = "..."`), plus optional
    /// `[abstraction]` and `[run]` tables.
    pub fn resolve(schema: Option<&str>, flags: Overrides) -> Result<Self> {
        let (schema, abstraction, run, base) = match schema {
            None => (
                SchemaMapping::synthetic(),
                AbstractionConfig::default(),
                RunTable::default(),
                None,
            ),
            Some(name) => match SchemaMapping::preset(name) {
                Some(s) => (s, AbstractionConfig::default(), RunTable::default(), None),
                None => {
                    let path = Path::new(name);
                    let (s, a, r) = load_file(path)?;
                    (s, a, r, path.parent().map(Path::to_path_buf))
                }
            },
        };

        let relative = |p: PathBuf| match (&base, p.is_relative()) {
            (Some(dir), true) => dir.join(p),
            _ => p,
        };
        let exceptions_path = flags.exceptions.or(run.exceptions.map(relative));
        let exceptions = match exceptions_path {
            Some(p) => load_exception_set(&p)?,
            None => default_exception_set(),
        };

        let defaults = CostParams::default();
        let cost = CostParams::new(
            flags.c_a.or(run.c_a).unwrap_or(defaults.c_a),
            flags.c_h.or(run.c_h).unwrap_or(defaults.c_h),
            flags.lambda.or(run.lambda).unwrap_or(defaults.lambda),
        )?;
        let split = flags.split.or(run.split).unwrap_or(DEFAULT_SPLIT);
        if !(split > 0.0 && split < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fraction must lie in (0, 1), got {split}"
            )));
        }
        let band = flags
            .band
            .or(run.band)
            .map_or(DEFAULT_BAND, |b| (b[0], b[1]));
        if band.0 >= band.1 {
            return Err(Error::InvalidConfig(format!(
                "entropy band must satisfy lo < hi, got {band:?}"
            )));
        }

        let cfg = Self {
            schema,
            abstraction,
            level: flags.level.or(run.level),
            tau: flags.tau.or(run.tau),
            h0: flags.h0.or(run.h0),
            w0: flags.w0.or(run.w0),
            split,
            cost,
            exceptions,
            out: flags
                .out
                .or(run.out)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            band,
        };
        for list in [
            &cfg.tau.as_ref().map(Vec::len),
            &cfg.h0.as_ref().map(Vec::len),
            &cfg.w0.as_ref().map(Vec::len),
        ] {
            if *list == Some(0) {
                return Err(Error::InvalidConfig(
                    "threshold lists must not be empty".into(),
                ));
            }
        }
        Ok(cfg)
    }

    /// Level for single-level commands; the full state unless chosen.
    pub fn single_level(&self) -> AbstractionLevel {
        self.level.unwrap_or(self.abstraction.level)
    }

    pub fn abstraction_at(&self, level: AbstractionLevel) -> AbstractionConfig {
        AbstractionConfig {
            level,
            ..self.abstraction.clone()
        }
    }

    /// Cartesian product of the gate lists, in (tau, w0, h0) order.
    pub fn gate_grid(&self, tau: &[u64], h0: &[f64], w0: &[f64]) -> Result<Vec<GateConfig>> {
        let tau = self.tau.as_deref().unwrap_or(tau);
        let h0 = self.h0.as_deref().unwrap_or(h0);
        let w0 = self.w0.as_deref().unwrap_or(w0);
        let mut grid = Vec::with_capacity(tau.len() * h0.len() * w0.len());
        for t in tau {
            for w in w0 {
                for h in h0 {
                    grid.push(GateConfig::new(*t, *h, *w)?);
                }
            }
        }
        Ok(grid)
    }
}

fn load_file(path: &Path) -> Result<(SchemaMapping, AbstractionConfig, RunTable)> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    let schema = match value.get("preset").and_then(|p| p.as_str()) {
        Some(name) => SchemaMapping::preset(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown schema preset `{name}`")))?,
        None if value.get("case_id").is_some() => serde_json::from_value(value.clone())?,
        None => SchemaMapping::synthetic(),
    };
    schema.validate()?;
    let abstraction = match value.get("abstraction") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => AbstractionConfig::default(),
    };
    let run = match value.get("run") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => RunTable::default(),
    };
    Ok((schema, abstraction, run))
}

/// `1.0:3.0:0.25` expands to an inclusive range, otherwise a comma list.
pub fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let (lo, hi, step) = (nums[0], nums[1], nums[2]);
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(format!("bad range `{s}`"));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| lo + step * i as f64).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

pub fn parse_u64_list(s: &str) -> std::result::Result<Vec<u64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

pub fn parse_band(s: &str) -> std::result::Result<[f64; 2], String> {
    match parse_f64_list(s)?.as_slice() {
        [lo, hi] => Ok([*lo, *hi]),
        _ => Err("band needs exactly two values `lo,hi`".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_lists() {
        assert_eq!(
            parse_f64_list("1.0:2.0:0.25").unwrap(),
            vec![1.0, 1.25, 1.5, 1.75, 2.0]
        );
        assert_eq!(parse_f64_list("0.5, 1").unwrap(), vec![0.5, 1.0]);
        assert!(parse_f64_list("1:0:1").is_err());
        assert_eq!(parse_u64_list("50,200").unwrap(), vec![50, 200]);
        assert!(parse_band("1").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(
            &path,
            "preset = \"synthetic\"\n[abstraction]\nlevel = \"l2\"\n[run]\ntau = [7]\nsplit = 0.5\nc_h = 4.0\n",
        )
        .unwrap();
        let cfg = RunConfig::resolve(
            path.to_str(),
            Overrides {
                tau: Some(vec![3]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.tau, Some(vec![3]));
        assert_eq!(cfg.split, 0.5);
        assert_eq!(cfg.cost.c_h, 4.0);
        assert_eq!(cfg.single_level(), AbstractionLevel::ActivityItemGr);
    }

    #[test]
    fn bad_cost_rejected() {
        let flags = Overrides {
            c_a: Some(5.0),
            c_h: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve(None, flags),
            Err(Error::InvalidConfig(_))
        ));
    }
}
