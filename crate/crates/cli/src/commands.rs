//! Subcommand bodies. Each reads a log, runs the library and writes CSV/JSON
//! files under the output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flowgap::agent::Evaluator;
use flowgap::audit::{gateway_band_on, state_table};
use flowgap::economics::sweep_frontier_on;
use flowgap::synth::{random_process, RandomProcessParams};
use flowgap::trace::DecisionTrace;
use flowgap::*;
use serde_json::json;

use crate::config::RunConfig;

/// Thresholds for the blind-mass table.
pub const TABLE_TAUS: [u64; 3] = [50, 200, 1000];
/// Thresholds for the blind-mass curve.
pub const CURVE_TAUS: [u64; 14] = [
    1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10_000, 20_000,
];
pub const DEFAULT_TAU: u64 = 50;
pub const DEFAULT_W0: f64 = 0.6;

pub fn default_h0() -> Vec<f64> {
    (0..=8).map(|i| 1.0 + 0.25 * f64::from(i)).collect()
}

fn load(path: &Path, cfg: &RunConfig) -> Result<EventLog> {
    ingest_csv(path, &cfg.schema)
}

fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_writer(path: PathBuf) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn stats(log_path: &Path, cfg: &RunConfig) -> Result<()> {
    let log = load(log_path, cfg)?;
    let stats = compute_log_stats(&log)?;
    let out = prepare_out(cfg)?;
    write_json(out.join("stats.json"), &stats)?;

    let mut so = std::io::stdout().lock();
    let rows: [(&str, String); 9] = [
        ("cases", stats.n_cases.to_string()),
        ("events", stats.n_events.to_string()),
        ("activities", stats.n_activities.to_string()),
        ("mean case length", format!("{:.4}", stats.mean_case_len)),
        ("median case length", format!("{}", stats.median_case_len)),
        ("p99 case length", stats.p99_case_len.to_string()),
        ("max case length", stats.max_case_len.to_string()),
        (
            "self-loop transitions",
            format!("{:.4}", stats.selfloop_transition_rate),
        ),
        (
            "cases with a self-loop",
            format!("{:.4}", stats.selfloop_case_rate),
        ),
    ];
    for (k, v) in rows {
        writeln!(so, "{k:<24}{v}")?;
    }
    let mut starts: Vec<(&String, &f64)> = stats.start_activity_shares.iter().collect();
    starts.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    writeln!(so, "start activities")?;
    for (a, p) in starts.into_iter().take(10) {
        writeln!(so, "  {p:>8.4}  {a}")?;
    }
    Ok(())
}

pub fn audit(log_path: &Path, cfg: &RunConfig) -> Result<()> {
    let log = load(log_path, cfg)?;
    let out = prepare_out(cfg)?;
    let levels: Vec<AbstractionLevel> = match cfg.level {
        Some(l) => vec![l],
        None => AbstractionLevel::ALL.to_vec(),
    };
    let table_taus: Vec<u64> = cfg.tau.clone().unwrap_or_else(|| TABLE_TAUS.to_vec());
    let mut curve_taus: Vec<u64> = CURVE_TAUS.iter().chain(&table_taus).copied().collect();
    curve_taus.sort_unstable();
    curve_taus.dedup();

    // Fit bins once so every level shares them.
    let base = Abstraction::fit(&log, &cfg.abstraction_at(AbstractionLevel::Full))?;
    let mut table = csv_writer(out.join("table2.csv"))?;
    table.write_record([
        "level",
        "states",
        "sa_pairs",
        "tau",
        "b_state",
        "b_sa",
        "b_sa_risk",
    ])?;
    let mut curve_csv = csv_writer(out.join("blind_curve.csv"))?;
    curve_csv.write_record(["level", "tau", "b_state", "b_sa", "b_sa_risk"])?;
    let mut states_csv = csv_writer(out.join("states.csv"))?;
    states_csv.write_record([
        "level",
        "activity",
        "item_type",
        "gr_flag",
        "value_bin",
        "actor_class",
        "visits",
        "decisions",
        "n_actions",
        "entropy_bits",
        "top_probability",
        "greedy",
        "risk",
    ])?;
    let mut summary = Vec::new();

    for level in &levels {
        let counts = build_counts(&log, &base.at_level(*level))?;
        let weights = risk_weights(&counts, &cfg.exceptions);
        let table_curve = blind_mass_curve(&counts, &weights, &table_taus)?;
        let curve = blind_mass_curve(&counts, &weights, &curve_taus)?;
        let label = level.label();
        for (i, tau) in table_taus.iter().enumerate() {
            table.write_record([
                label,
                &counts.n_states().to_string(),
                &counts.n_pairs().to_string(),
                &tau.to_string(),
                &table_curve.state_mass[i].to_string(),
                &table_curve.sa_mass[i].to_string(),
                &table_curve.sa_risk_mass[i].to_string(),
            ])?;
        }
        for (i, tau) in curve_taus.iter().enumerate() {
            curve_csv.write_record([
                label,
                &tau.to_string(),
                &curve.state_mass[i].to_string(),
                &curve.sa_mass[i].to_string(),
                &curve.sa_risk_mass[i].to_string(),
            ])?;
        }
        for row in state_table(&counts, &weights) {
            let s = &row.state;
            states_csv.write_record([
                label,
                &s.activity,
                s.item_type.as_deref().unwrap_or(""),
                s.gr_flag.as_deref().unwrap_or(""),
                s.value_bin.map_or("", |b| b.label()),
                s.actor_class.map_or("", |a| a.label()),
                &row.visits.to_string(),
                &row.decisions.to_string(),
                &row.n_actions.to_string(),
                &opt(row.entropy),
                &opt(row.top_probability),
                row.greedy.as_ref().map_or("", |a| a.as_str()),
                &row.risk.to_string(),
            ])?;
        }
        summary.push(json!({
            "level": label,
            "states": counts.n_states(),
            "sa_pairs": counts.n_pairs(),
            "table": table_curve,
        }));
    }
    table.flush()?;
    curve_csv.flush()?;
    states_csv.flush()?;
    write_json(
        out.join("audit.json"),
        &json!({
            "n_cases": log.n_cases(),
            "n_events": log.n_events(),
            "bin_edges": base.bins.edges,
            "exception_activities": cfg.exceptions,
            "levels": summary,
        }),
    )?;
    eprintln!(
        "audit: {} level(s) written to {}",
        levels.len(),
        out.display()
    );
    Ok(())
}

pub fn sweep(log_path: &Path, cfg: &RunConfig) -> Result<()> {
    let log = load(log_path, cfg)?;
    let out = prepare_out(cfg)?;
    let level = cfg.single_level();
    let grid = cfg.gate_grid(&[DEFAULT_TAU], &default_h0(), &[DEFAULT_W0])?;

    // Envelope on the full log.
    let abs = Abstraction::fit(&log, &cfg.abstraction_at(level))?;
    let counts = build_counts(&log, &abs)?;
    let weights = risk_weights(&counts, &cfg.exceptions);
    let trace = DecisionTrace::new(&log, &abs)?;
    let profiles = flowgap::audit::StateProfiles::new(&counts, &weights);
    let mut env = csv_writer(out.join("autonomy.csv"))?;
    env.write_record(["tau", "h0", "w0", "a_event", "a_case"])?;
    for g in &grid {
        let s = flowgap::audit::autonomy_shares_on(&trace, &profiles, g);
        env.write_record([
            g.tau.to_string(),
            g.h0.to_string(),
            g.w0.to_string(),
            s.a_event.to_string(),
            s.a_case.to_string(),
        ])?;
    }
    env.flush()?;

    // Frontier on the held-out split.
    let (train, test) = chronological_split(&log, cfg.split)?;
    let train_abs = Abstraction::fit(&train, &cfg.abstraction_at(level))?;
    let train_counts = build_counts(&train, &train_abs)?;
    let train_weights = risk_weights(&train_counts, &cfg.exceptions);
    let evaluator = Evaluator::new(&test, &train_counts, &train_weights)?;
    let test_occ = occupancy(&build_counts(&test, &train_abs)?);
    let points = sweep_frontier_on(&evaluator, &test_occ, &grid, &cfg.cost)?;
    let mut fr = csv_writer(out.join("frontier.csv"))?;
    fr.write_record([
        "tau",
        "h0",
        "w0",
        "touches_per_case",
        "safe_completion_test",
        "safe_completion_surrogate",
        "zero_touch_test",
        "cost",
        "cost_lambda",
    ])?;
    for p in &points {
        fr.write_record([
            p.cfg.tau.to_string(),
            p.cfg.h0.to_string(),
            p.cfg.w0.to_string(),
            p.touches_per_case.to_string(),
            p.safe_completion.to_string(),
            p.safe_completion_surrogate.to_string(),
            p.zero_touch.to_string(),
            p.cost_per_case.to_string(),
            p.cost_with_error.to_string(),
        ])?;
    }
    fr.flush()?;
    eprintln!(
        "sweep: {} gate(s) at {} written to {}",
        grid.len(),
        level,
        out.display()
    );
    Ok(())
}

pub fn validate(log_path: &Path, cfg: &RunConfig, decisions: bool) -> Result<()> {
    let log = load(log_path, cfg)?;
    let out = prepare_out(cfg)?;
    let level = cfg.single_level();
    let grid = cfg.gate_grid(&[DEFAULT_TAU], &default_h0(), &[DEFAULT_W0])?;

    let (train, test) = chronological_split(&log, cfg.split)?;
    let abs = Abstraction::fit(&train, &cfg.abstraction_at(level))?;
    let counts = build_counts(&train, &abs)?;
    let weights = risk_weights(&counts, &cfg.exceptions);
    let evaluator = Evaluator::new(&test, &counts, &weights)?;
    let report = evaluator.validate(&grid)?;

    let mut t3 = csv_writer(out.join("table3.csv"))?;
    t3.write_record([
        "tau",
        "h0",
        "w0",
        "m_step_theory",
        "m_step_test",
        "r_safe_theory",
        "r_safe_test",
        "c0_theory",
        "c0_test",
        "touches_per_case",
        "a_event_test",
        "a_case_test",
        "autonomous_errors_per_case",
        "step_gap",
    ])?;
    for p in &report.points {
        t3.write_record([
            p.cfg.tau.to_string(),
            p.cfg.h0.to_string(),
            p.cfg.w0.to_string(),
            opt(p.m_step_theory),
            opt(p.m_step_test),
            p.r_safe_theory.to_string(),
            p.r_safe_test.to_string(),
            p.c0_theory.to_string(),
            p.c0_test.to_string(),
            p.touches_per_case.to_string(),
            p.a_event_test.to_string(),
            p.a_case_test.to_string(),
            p.autonomous_errors_per_case.to_string(),
            opt(p.step_gap()),
        ])?;
    }
    t3.flush()?;
    let gaps: Vec<_> = report
        .points
        .iter()
        .map(|p| {
            json!({
                "tau": p.cfg.tau,
                "h0": p.cfg.h0,
                "w0": p.cfg.w0,
                "m_step_theory": p.m_step_theory,
                "m_step_test": p.m_step_test,
                "gap": p.step_gap(),
            })
        })
        .collect();
    write_json(
        out.join("step_gap.json"),
        &json!({
            "mean_abs_step_gap": report.mean_abs_step_gap,
            "max_abs_step_gap": report.max_abs_step_gap,
            "points": gaps,
        }),
    )?;

    // One gateway report per (tau, w0); h0 plays no part in membership.
    let mut seen = Vec::new();
    let mut gateways = Vec::new();
    let mut gw = csv_writer(out.join("gateway.csv"))?;
    gw.write_record([
        "tau",
        "w0",
        "activity",
        "item_type",
        "gr_flag",
        "value_bin",
        "actor_class",
        "support",
        "entropy_bits",
        "risk",
        "eval_decisions",
    ])?;
    for g in &grid {
        let key = (g.tau, g.w0.to_bits());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let r = gateway_band_on(&evaluator.trace, evaluator.profiles(), g, cfg.band)?;
        for st in &r.states {
            let s = &st.state;
            gw.write_record([
                g.tau.to_string(),
                g.w0.to_string(),
                s.activity.clone(),
                s.item_type.clone().unwrap_or_default(),
                s.gr_flag.clone().unwrap_or_default(),
                s.value_bin.map_or("", |b| b.label()).to_string(),
                s.actor_class.map_or("", |a| a.label()).to_string(),
                st.support.to_string(),
                st.entropy.to_string(),
                st.risk.to_string(),
                st.eval_decisions.to_string(),
            ])?;
        }
        gateways.push(json!({
            "tau": g.tau,
            "w0": g.w0,
            "band": [r.band.0, r.band.1],
            "n_states": r.states.len(),
            "decision_share": r.decision_share,
            "case_share": r.case_share,
        }));
    }
    gw.flush()?;
    write_json(out.join("gateway.json"), &gateways)?;

    if decisions {
        let dir = out.join("decisions");
        fs::create_dir_all(&dir)?;
        for g in &grid {
            let run = evaluator.run(g);
            let name = format!("tau{}_h0{}_w0{}.csv", g.tau, g.h0, g.w0);
            run.write_decisions_csv(std::io::BufWriter::new(fs::File::create(dir.join(name))?))?;
        }
    }
    eprintln!(
        "validate: {} train / {} test cases, {} gate(s) at {} written to {}",
        train.n_cases(),
        test.n_cases(),
        grid.len(),
        level,
        out.display()
    );
    Ok(())
}

/// `process` is a TOML/JSON process file or one of the built-in fixtures
/// `random`, `hub`, `self-loop`, `chain`.
pub fn synth(process: &str, n: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let p = match process {
        "random" => random_process(seed.unwrap_or(0), RandomProcessParams::default()),
        "hub" => GroundTruthProcess::hub(0.5),
        "self-loop" => GroundTruthProcess::self_loop(0.85),
        "chain" => GroundTruthProcess::chain(&["Start", "Review", "Approve", "Close"]),
        path => GroundTruthProcess::from_file(Path::new(path))?,
    };
    let log = generate(&p, n, seed.unwrap_or(p.seed))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    flowgap::eventlog::write_csv(&log, out, &SchemaMapping::synthetic())?;
    eprintln!(
        "synth: {} cases, {} events written to {}",
        log.n_cases(),
        log.n_events(),
        out.display()
    );
    Ok(())
}
