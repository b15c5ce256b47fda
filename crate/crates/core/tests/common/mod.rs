//! Brute-force reference implementation used as a test oracle.
//!
//! Everything here works from the raw `EventLog` with string tuples, ordered
//! maps and literal loops over events. It shares no code path with the
//! library beyond the log type itself.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use flowgap::{EventLog, StateKey};

pub type OState = (String, String, String, String, String);

const NONE: &str = "-";

pub fn key_tuple(k: &StateKey) -> OState {
    (
        k.activity.clone(),
        k.item_type.clone().unwrap_or_else(|| NONE.into()),
        k.gr_flag.clone().unwrap_or_else(|| NONE.into()),
        k.value_bin.map_or(NONE.into(), |b| b.label().to_string()),
        k.actor_class.map_or(NONE.into(), |a| a.label().to_string()),
    )
}

/// Linear-interpolation percentile, computed as a weighted pair average.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() as f64 - 1.0);
    let lo = h as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let w = h - lo as f64;
    (1.0 - w) * sorted[lo] + w * sorted[lo + 1]
}

pub fn edges(log: &EventLog) -> [f64; 3] {
    let mut v = Vec::new();
    for c in &log.cases {
        for e in &c.events {
            if e.cumulative_net_worth != 0.0 {
                v.push(e.cumulative_net_worth.abs());
            }
        }
    }
    if v.is_empty() {
        return [f64::MIN_POSITIVE; 3];
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [
        percentile(&v, 0.25),
        percentile(&v, 0.75),
        percentile(&v, 0.95),
    ]
}

pub fn bin(v: f64, e: [f64; 3]) -> &'static str {
    let v = v.abs();
    if v == 0.0 {
        "zero"
    } else if v > e[2] {
        "very_high"
    } else if v > e[1] {
        "high"
    } else if v > e[0] {
        "mid"
    } else {
        "low"
    }
}

pub fn actor(resource: &str) -> &'static str {
    let r = resource.trim().to_lowercase();
    if r.is_empty() || r == "none" || r.starts_with("batch") {
        "system"
    } else {
        "human"
    }
}

fn case_attr(case: &flowgap::Case, key: &str) -> String {
    for e in &case.events {
        if let Some(v) = e.case_attrs.get(key) {
            if !v.is_empty() {
                return v.clone();
            }
        }
    }
    panic!("case {} lacks {key}", case.case_id)
}

/// `level` is 1, 2 or 3.
pub fn state(level: u8, case: &flowgap::Case, t: usize, e: [f64; 3]) -> OState {
    let ev = &case.events[t];
    let mut s: OState = (
        ev.activity.clone(),
        NONE.into(),
        NONE.into(),
        NONE.into(),
        NONE.into(),
    );
    if level >= 2 {
        s.1 = case_attr(case, "item_type");
        s.2 = case_attr(case, "gr_flag");
    }
    if level >= 3 {
        s.3 = bin(ev.cumulative_net_worth, e).into();
        s.4 = actor(&ev.resource).into();
    }
    s
}

#[derive(Debug, Default, Clone)]
pub struct OCounts {
    pub n_cases: u64,
    pub n_events: u64,
    pub n_dec: u64,
    pub n_s: BTreeMap<OState, u64>,
    pub dec_s: BTreeMap<OState, u64>,
    pub n_sa: BTreeMap<(OState, String), u64>,
    pub n_sas: BTreeMap<(OState, String, OState), u64>,
    pub abs_values: BTreeMap<OState, Vec<f64>>,
    pub pair_values: BTreeMap<(OState, String), Vec<f64>>,
    pub all_values: Vec<f64>,
}

pub fn counts(log: &EventLog, level: u8, e: [f64; 3]) -> OCounts {
    let mut oc = OCounts::default();
    for case in &log.cases {
        oc.n_cases += 1;
        for t in 0..case.events.len() {
            let s = state(level, case, t, e);
            let v = case.events[t].cumulative_net_worth.abs();
            oc.n_events += 1;
            *oc.n_s.entry(s.clone()).or_insert(0) += 1;
            oc.abs_values.entry(s.clone()).or_default().push(v);
            oc.all_values.push(v);
            if t + 1 < case.events.len() {
                let a = case.events[t + 1].activity.clone();
                let s2 = state(level, case, t + 1, e);
                oc.n_dec += 1;
                *oc.dec_s.entry(s.clone()).or_insert(0) += 1;
                *oc.n_sa.entry((s.clone(), a.clone())).or_insert(0) += 1;
                *oc.n_sas.entry((s.clone(), a.clone(), s2)).or_insert(0) += 1;
                oc.pair_values.entry((s, a)).or_default().push(v);
            }
        }
    }
    oc
}

pub fn policy(oc: &OCounts, s: &OState) -> BTreeMap<String, f64> {
    let total: u64 = oc
        .n_sa
        .iter()
        .filter(|((x, _), _)| x == s)
        .map(|(_, n)| *n)
        .sum();
    oc.n_sa
        .iter()
        .filter(|((x, _), _)| x == s)
        .map(|((_, a), n)| (a.clone(), *n as f64 / total as f64))
        .collect()
}

pub fn entropy(oc: &OCounts, s: &OState) -> Option<f64> {
    let p = policy(oc, s);
    if p.is_empty() {
        return None;
    }
    let mut h = 0.0;
    for q in p.values() {
        if *q > 0.0 {
            h -= q * q.log2();
        }
    }
    Some(h)
}

/// (greedy action, m(s)); smallest label wins ties.
pub fn greedy(oc: &OCounts, s: &OState) -> Option<(String, f64)> {
    let p = policy(oc, s);
    let m = p.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    p.into_iter().find(|(_, q)| *q == m)
}

pub struct OWeights {
    pub w_s: BTreeMap<OState, f64>,
    pub w_sa: BTreeMap<(OState, String), f64>,
}

pub fn weights(oc: &OCounts, exc: &BTreeSet<String>) -> OWeights {
    let mean_log: BTreeMap<OState, f64> = oc
        .abs_values
        .iter()
        .map(|(s, vs)| {
            (
                s.clone(),
                (1.0 + vs.iter().sum::<f64>() / vs.len() as f64).ln(),
            )
        })
        .collect();
    let max_s = mean_log.values().cloned().fold(0.0, f64::max);
    let w_s = mean_log
        .into_iter()
        .map(|(s, l)| (s, if max_s > 0.0 { l / max_s } else { 0.0 }))
        .collect();
    let max_e = oc
        .all_values
        .iter()
        .map(|v| (1.0 + v).ln())
        .fold(0.0, f64::max);
    let w_sa = oc
        .pair_values
        .iter()
        .map(|((s, a), vs)| {
            let mut acc = 0.0;
            for v in vs {
                let value = if max_e > 0.0 {
                    (1.0 + v).ln() / max_e
                } else {
                    0.0
                };
                let ex = if exc.contains(a) { 1.0 } else { 0.0 };
                acc += 0.6 * value + 0.4 * ex;
            }
            ((s.clone(), a.clone()), acc / vs.len() as f64)
        })
        .collect();
    OWeights { w_s, w_sa }
}

/// (B_state, B_SA, B_SA_risk) with support from `reference` and occupancy
/// from `eval`; `w` must cover eval pairs.
pub fn blind(reference: &OCounts, eval: &OCounts, w: &OWeights, tau: u64) -> (f64, f64, f64) {
    let mut bs = 0.0;
    for (s, n) in &eval.n_s {
        let d = *n as f64 / eval.n_events as f64;
        if reference.n_s.get(s).copied().unwrap_or(0) < tau {
            bs += d;
        }
    }
    let (mut bsa, mut br) = (0.0, 0.0);
    for (k, n) in &eval.n_sa {
        let d = *n as f64 / eval.n_dec as f64;
        if reference.n_sa.get(k).copied().unwrap_or(0) < tau {
            bsa += d;
            br += d * w.w_sa[k];
        }
    }
    (bs, bsa, br)
}

#[derive(Debug, Clone, Copy)]
pub struct OGate {
    pub tau: u64,
    pub h0: f64,
    pub w0: f64,
}

pub fn escalates(reference: &OCounts, w: &OWeights, g: OGate, s: &OState) -> bool {
    let n = reference.n_s.get(s).copied().unwrap_or(0);
    match entropy(reference, s) {
        None => true,
        Some(h) => n < g.tau || h > g.h0 || w.w_s.get(s).copied().unwrap_or(0.0) > g.w0,
    }
}

#[derive(Debug, Clone, Default)]
pub struct OAgent {
    pub a_event: f64,
    pub a_case: f64,
    pub c0_test: f64,
    pub r_safe_test: f64,
    pub touches: f64,
    pub c0_theory: f64,
    pub r_safe_theory: f64,
    pub m_theory: Option<f64>,
    pub m_test: Option<f64>,
    pub errors_per_case: f64,
    pub cost: f64,
    /// Greedy-vs-observed match for every decision, in log order.
    pub matches: Vec<bool>,
}

/// Replays `eval` against a reference model, case by case.
#[allow(clippy::too_many_arguments)]
pub fn agent(
    eval: &EventLog,
    reference: &OCounts,
    w: &OWeights,
    g: OGate,
    level: u8,
    e: [f64; 3],
    c_a: f64,
    c_h: f64,
) -> OAgent {
    let mut out = OAgent::default();
    let (mut dec, mut auto_dec, mut auto_ok, mut m_sum) = (0usize, 0usize, 0usize, 0.0);
    let (mut clean, mut zero, mut safe, mut touches, mut errors) =
        (0usize, 0usize, 0usize, 0usize, 0usize);
    let (mut c0, mut rs, mut cost) = (0.0, 0.0, 0.0);
    for case in &eval.cases {
        let mut all_auto = true;
        let mut all_ok = true;
        let mut p0 = 1.0;
        let mut ps = 1.0;
        let mut case_cost = 0.0;
        for t in 0..case.events.len().saturating_sub(1) {
            let s = state(level, case, t, e);
            let obs = &case.events[t + 1].activity;
            let gr = greedy(reference, &s);
            let m = gr.as_ref().map_or(0.0, |x| x.1);
            let hit = gr.as_ref().is_some_and(|x| &x.0 == obs);
            out.matches.push(hit);
            dec += 1;
            if escalates(reference, w, g, &s) {
                all_auto = false;
                touches += 1;
                p0 *= 0.0;
                case_cost += c_h;
            } else {
                auto_dec += 1;
                m_sum += m;
                p0 *= m;
                ps *= m;
                case_cost += c_a;
                if hit {
                    auto_ok += 1;
                } else {
                    all_ok = false;
                    errors += 1;
                }
            }
        }
        clean += all_auto as usize;
        zero += (all_auto && all_ok) as usize;
        safe += all_ok as usize;
        c0 += p0;
        rs += ps;
        cost += case_cost;
    }
    let n = eval.cases.len() as f64;
    out.a_event = if dec == 0 {
        1.0
    } else {
        auto_dec as f64 / dec as f64
    };
    out.a_case = clean as f64 / n;
    out.c0_test = zero as f64 / n;
    out.r_safe_test = safe as f64 / n;
    out.touches = touches as f64 / n;
    out.c0_theory = c0 / n;
    out.r_safe_theory = rs / n;
    out.m_theory = (auto_dec > 0).then(|| m_sum / auto_dec as f64);
    out.m_test = (auto_dec > 0).then(|| auto_ok as f64 / auto_dec as f64);
    out.errors_per_case = errors as f64 / n;
    out.cost = cost / n;
    out
}

/// (overall, supported mean, blind mean, blind share) of a 0/1 series.
pub fn coverage(
    eval: &EventLog,
    reference: &OCounts,
    level: u8,
    e: [f64; 3],
    series: &[bool],
    tau: u64,
) -> (f64, Option<f64>, Option<f64>, f64) {
    let mut k = 0;
    let (mut sn, mut sc, mut bn, mut bc) = (0.0, 0.0, 0.0, 0.0);
    for case in &eval.cases {
        for t in 0..case.events.len().saturating_sub(1) {
            let s = state(level, case, t, e);
            let a = case.events[t + 1].activity.clone();
            let c = if series[k] { 1.0 } else { 0.0 };
            k += 1;
            if reference.n_sa.get(&(s, a)).copied().unwrap_or(0) >= tau {
                sn += 1.0;
                sc += c;
            } else {
                bn += 1.0;
                bc += c;
            }
        }
    }
    let total = sn + bn;
    (
        (sc + bc) / total,
        (sn > 0.0).then(|| sc / sn),
        (bn > 0.0).then(|| bc / bn),
        bn / total,
    )
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Compares every library metric on `log` against the brute-force
/// recomputation. Returns a description of each mismatch.
pub fn check_all_metrics(
    log: &EventLog,
    level: u8,
    cfg: flowgap::GateConfig,
    tol: f64,
) -> Vec<String> {
    use flowgap::*;

    let mut bad = Vec::new();
    let mut expect = |what: String, ok: bool| {
        if !ok {
            bad.push(what);
        }
    };
    let lvl = match level {
        1 => AbstractionLevel::ActivityOnly,
        2 => AbstractionLevel::ActivityItemGr,
        _ => AbstractionLevel::Full,
    };
    let exc: BTreeSet<String> = ["Act1", "Act3"].iter().map(|s| s.to_string()).collect();
    let g = OGate {
        tau: cfg.tau,
        h0: cfg.h0,
        w0: cfg.w0,
    };
    let (c_a, c_h) = (1.0, 10.0);

    // Descriptive mode on the whole log.
    let e = edges(log);
    let abs = Abstraction::fit(log, &AbstractionConfig::with_level(lvl)).unwrap();
    for (i, (got, want)) in abs.bins.edges.iter().zip(e).enumerate() {
        expect(format!("edge {i}"), close(*got, want, tol * want.max(1.0)));
    }
    let counts = build_counts(log, &abs).unwrap();
    let oc = self::counts(log, level, e);
    expect("n_events".into(), counts.n_events == oc.n_events);
    expect("n_decisions".into(), counts.n_decisions == oc.n_dec);
    expect("n_states".into(), counts.n_states() == oc.n_s.len());
    expect("n_pairs".into(), counts.n_pairs() == oc.n_sa.len());
    for (s, c) in &counts.states {
        let k = key_tuple(s);
        expect(format!("N({k:?})"), oc.n_s.get(&k) == Some(&c.visits));
    }
    for (s, a, p) in counts.iter_pairs() {
        let k = (key_tuple(s), a.0.clone());
        expect(format!("N{k:?}"), oc.n_sa.get(&k) == Some(&p.count));
        for (next, n) in &p.next {
            let kk = (k.0.clone(), k.1.clone(), key_tuple(next));
            expect(format!("N{kk:?}"), oc.n_sas.get(&kk) == Some(n));
        }
        let kern = counts.kernel(s, a).unwrap();
        let row: f64 = kern.iter().map(|(_, p)| p).sum();
        expect(format!("kernel row {k:?}"), close(row, 1.0, 1e-12));
    }
    for s in counts.states.keys() {
        let k = key_tuple(s);
        let lib_h = counts.entropy_bits(s).ok();
        let o_h = entropy(&oc, &k);
        expect(
            format!("H({k:?})"),
            match (lib_h, o_h) {
                (Some(a), Some(b)) => close(a, b, tol),
                (None, None) => true,
                _ => false,
            },
        );
        if let Ok(p) = counts.policy(s) {
            let op = policy(&oc, &k);
            expect(format!("pi len {k:?}"), p.len() == op.len());
            for (a, q) in &p {
                expect(format!("pi({a}|{k:?})"), close(*q, op[&a.0], tol));
            }
            let (ga, gm) = counts.greedy(s).unwrap();
            let (oa, om) = greedy(&oc, &k).unwrap();
            expect(format!("greedy {k:?}"), ga.0 == oa && close(gm, om, tol));
        }
    }

    let w = risk_weights(&counts, &exc);
    let ow = weights(&oc, &exc);
    for (s, v) in &w.w_state {
        expect(format!("w({s})"), close(*v, ow.w_s[&key_tuple(s)], tol));
    }
    for ((s, a), v) in &w.w_sa {
        expect(
            format!("w_sa({s},{a})"),
            close(*v, ow.w_sa[&(key_tuple(s), a.0.clone())], tol),
        );
    }

    let taus = [1, 2, 3, 5, 10, 40];
    let curve = blind_mass_curve(&counts, &w, &taus).unwrap();
    for (i, tau) in taus.iter().enumerate() {
        let (bs, bsa, br) = blind(&oc, &oc, &ow, *tau);
        expect(
            format!("B_state({tau})"),
            close(curve.state_mass[i], bs, tol),
        );
        expect(format!("B_sa({tau})"), close(curve.sa_mass[i], bsa, tol));
        expect(
            format!("B_risk({tau})"),
            close(curve.sa_risk_mass[i], br, tol),
        );
    }

    let shares = autonomy_shares(log, &counts, &w, &cfg).unwrap();
    let full = agent(log, &oc, &ow, g, level, e, c_a, c_h);
    expect("A_event".into(), close(shares.a_event, full.a_event, tol));
    expect("A_case".into(), close(shares.a_case, full.a_case, tol));

    // Agent mode on the chronological split.
    let Ok((train, test)) = chronological_split(log, 0.8) else {
        return bad;
    };
    let te = edges(&train);
    let tabs = Abstraction::fit(&train, &AbstractionConfig::with_level(lvl)).unwrap();
    let tcounts = build_counts(&train, &tabs).unwrap();
    let toc = self::counts(&train, level, te);
    let tw = risk_weights(&tcounts, &exc);
    let tow = weights(&toc, &exc);
    let o = agent(&test, &toc, &tow, g, level, te, c_a, c_h);

    let run = run_agent(&test, &tcounts, &tw, &cfg, lvl).unwrap();
    let sur = surrogates(&test, &tcounts, &tw, &cfg, lvl).unwrap();
    let summary = validate(&test, &tcounts, &tw, &[cfg.h0], cfg.tau, cfg.w0)
        .unwrap()
        .points[0];
    expect(
        "C0_test".into(),
        close(run.zero_touch_rate(), o.c0_test, tol),
    );
    expect(
        "R_safe_test".into(),
        close(run.safe_rate(), o.r_safe_test, tol),
    );
    expect(
        "touches".into(),
        close(run.touches_per_case(), o.touches, tol),
    );
    expect(
        "A_case_test".into(),
        close(run.autonomous_case_rate(), o.a_case, tol),
    );
    expect("C0_theory".into(), close(sur.c0_theory, o.c0_theory, tol));
    expect(
        "R_safe_theory".into(),
        close(sur.r_safe_theory, o.r_safe_theory, tol),
    );
    let opt_close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => close(a, b, tol),
        (None, None) => true,
        _ => false,
    };
    expect(
        "m_theory".into(),
        opt_close(summary.m_step_theory, o.m_theory),
    );
    expect("m_test".into(), opt_close(summary.m_step_test, o.m_test));
    expect(
        "errors/case".into(),
        close(run.autonomous_errors_per_case(), o.errors_per_case, tol),
    );

    let test_counts = build_counts(&test, &tcounts.abstraction).unwrap();
    let occ = occupancy(&test_counts);
    let params = CostParams::new(c_a, c_h, 2.0).unwrap();
    let profiles = flowgap::audit::StateProfiles::new(&tcounts, &tw);
    let cost = expected_cost(
        &occ,
        |s| profiles.gate(&cfg, s),
        &params,
        occ.mean_decisions,
    );
    expect("cost".into(), close(cost, o.cost, tol));
    let frontier = sweep_frontier(&test, &tcounts, &tw, &[cfg], &params).unwrap();
    expect(
        "cost_lambda".into(),
        close(
            frontier[0].cost_with_error,
            o.cost + 2.0 * o.errors_per_case,
            tol,
        ),
    );

    let series = run.greedy_match_series();
    expect("match series".into(), series == o.matches);
    if !series.is_empty() {
        let dec = coverage_decomposition(&test, &tcounts, &series, cfg.tau).unwrap();
        let (ov, sm, bm, bmass) = coverage(&test, &toc, level, te, &series, cfg.tau);
        expect("coverage overall".into(), close(dec.overall, ov, tol));
        expect(
            "coverage supported".into(),
            opt_close(dec.supported_mean, sm),
        );
        expect("coverage blind".into(), opt_close(dec.blind_mean, bm));
        expect("coverage mass".into(), close(dec.blind_mass, bmass, tol));
    }

    // Train-support / test-occupancy blind masses.
    let test_oc = self::counts(&test, level, te);
    let test_w = risk_weights(&test_counts, &exc);
    let test_ow = weights(&test_oc, &exc);
    let curve = blind_mass_curve_against(&tcounts, &test_counts, &test_w, &taus).unwrap();
    for (i, tau) in taus.iter().enumerate() {
        let (bs, bsa, br) = blind(&toc, &test_oc, &test_ow, *tau);
        expect(
            format!("split B_state({tau})"),
            close(curve.state_mass[i], bs, tol),
        );
        expect(
            format!("split B_sa({tau})"),
            close(curve.sa_mass[i], bsa, tol),
        );
        expect(
            format!("split B_risk({tau})"),
            close(curve.sa_risk_mass[i], br, tol),
        );
    }
    bad
}

pub mod props;
