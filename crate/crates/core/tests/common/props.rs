//! Structural invariants that must hold on any log, reported as a list of
//! violations so one checker serves both the proptest target and the
//! acceptance run.

use flowgap::agent::Evaluator;
use flowgap::audit::{
    autonomy_shares_on, coverage_decomposition, default_exception_set, StateProfiles,
};
use flowgap::economics::escalated_visits;
use flowgap::trace::DecisionTrace;
use flowgap::*;

pub const TAUS: [u64; 8] = [1, 2, 3, 5, 8, 13, 21, 50];

pub fn gate_grid() -> Vec<GateConfig> {
    let mut g = Vec::new();
    for tau in [1, 3, 10] {
        for h0 in [0.5, 1.0, 2.0] {
            for w0 in [0.3, 0.7, 1.0] {
                g.push(GateConfig::new(tau, h0, w0).unwrap());
            }
        }
    }
    g
}

/// `a` is at least as permissive as `b` on every axis.
fn looser(a: &GateConfig, b: &GateConfig) -> bool {
    a.tau <= b.tau && a.h0 >= b.h0 && a.w0 >= b.w0
}

pub fn check_properties(log: &EventLog) -> Vec<String> {
    let mut bad = Vec::new();
    let mut expect = |what: String, ok: bool| {
        if !ok {
            bad.push(what);
        }
    };
    let exc = default_exception_set();
    let grid = gate_grid();

    let full = Abstraction::fit(log, &AbstractionConfig::default()).unwrap();
    let mut per_level = Vec::new();
    for level in AbstractionLevel::ALL {
        let abs = full.at_level(level);
        let counts = build_counts(log, &abs).unwrap();

        // Normalization.
        for s in counts.pairs.keys() {
            let total: f64 = counts.policy(s).unwrap().iter().map(|(_, p)| p).sum();
            expect(
                format!("{level} policy row {s}"),
                (total - 1.0).abs() <= 1e-12,
            );
            for a in counts.actions(s).unwrap().keys() {
                let row: f64 = counts.kernel(s, a).unwrap().iter().map(|(_, p)| p).sum();
                expect(
                    format!("{level} kernel row {s}/{a:?}"),
                    (row - 1.0).abs() <= 1e-12,
                );
            }
            let h = counts.entropy_bits(s).unwrap();
            let support = counts.actions(s).unwrap().len() as f64;
            expect(
                format!("{level} entropy bound {s}"),
                h >= 0.0 && h <= support.log2() + 1e-12,
            );
        }
        let occ = occupancy(&counts);
        let ds: f64 = occ.d_state.values().sum();
        expect(format!("{level} d_state sum"), (ds - 1.0).abs() <= 1e-12);
        if counts.n_decisions > 0 {
            let dsa: f64 = occ.d_sa.values().sum();
            expect(format!("{level} d_sa sum"), (dsa - 1.0).abs() <= 1e-12);
        }
        let dv: f64 = occ.visits.values().sum();
        expect(
            format!("{level} visits sum"),
            (dv - log.mean_decisions()).abs() <= 1e-12,
        );

        // Blind mass.
        let w = risk_weights(&counts, &exc);
        for v in w.w_state.values().chain(w.w_sa.values()) {
            expect(format!("{level} weight range"), (0.0..=1.0).contains(v));
        }
        let curve = blind_mass_curve(&counts, &w, &TAUS).unwrap();
        expect(
            format!("{level} B(1)"),
            curve.state_mass[0] == 0.0 && curve.sa_mass[0] == 0.0 && curve.sa_risk_mass[0] == 0.0,
        );
        for (i, tau) in TAUS.iter().enumerate() {
            let (b, bsa, br) = (curve.state_mass[i], curve.sa_mass[i], curve.sa_risk_mass[i]);
            expect(
                format!("{level} range at {tau}"),
                [b, bsa, br].iter().all(|x| (0.0..=1.0 + 1e-12).contains(x)),
            );
            expect(format!("{level} domination at {tau}"), br <= bsa + 1e-12);
            if i > 0 {
                expect(
                    format!("{level} monotone at {tau}"),
                    curve.state_mass[i - 1] <= b
                        && curve.sa_mass[i - 1] <= bsa
                        && curve.sa_risk_mass[i - 1] <= br,
                );
            }
        }

        // Gate monotonicity on the grid, per state and in aggregate.
        let profiles = StateProfiles::new(&counts, &w);
        let trace = DecisionTrace::new(log, &abs).unwrap();
        let shares: Vec<_> = grid
            .iter()
            .map(|cfg| autonomy_shares_on(&trace, &profiles, cfg))
            .collect();
        let mean_t = log.mean_decisions();
        let params = CostParams::default();
        let costs: Vec<f64> = grid
            .iter()
            .map(|cfg| expected_cost(&occ, |s| profiles.gate(cfg, s), &params, mean_t))
            .collect();
        for (i, cost) in costs.iter().enumerate() {
            expect(
                format!("{level} cost bracket {:?}", grid[i]),
                params.c_a * mean_t - 1e-9 <= *cost && *cost <= params.c_h * mean_t + 1e-9,
            );
        }
        for (i, a) in grid.iter().enumerate() {
            for (j, b) in grid.iter().enumerate() {
                if !looser(a, b) {
                    continue;
                }
                for (s, _) in counts.sorted_states() {
                    expect(
                        format!("{level} gate flip {s} {a:?} vs {b:?}"),
                        !(profiles.gate(a, s).escalates() && !profiles.gate(b, s).escalates()),
                    );
                }
                expect(
                    format!("{level} shares {a:?} vs {b:?}"),
                    shares[i].a_event >= shares[j].a_event && shares[i].a_case >= shares[j].a_case,
                );
                expect(
                    format!("{level} cost order {a:?} vs {b:?}"),
                    costs[i] <= costs[j] + 1e-9,
                );
            }
        }
        per_level.push(counts);
    }

    // Refinement and projection.
    for k in 1..3 {
        expect(
            format!("states refine {k}"),
            per_level[k - 1].n_states() <= per_level[k].n_states(),
        );
        expect(
            format!("pairs refine {k}"),
            per_level[k - 1].n_pairs() <= per_level[k].n_pairs(),
        );
    }
    for (fine, coarse_level) in [
        (2, AbstractionLevel::ActivityOnly),
        (2, AbstractionLevel::ActivityItemGr),
        (1, AbstractionLevel::ActivityOnly),
    ] {
        let coarse = &per_level[coarse_level as usize];
        let mut projected = std::collections::BTreeMap::<StateKey, u64>::new();
        for (s, c) in &per_level[fine].states {
            *projected.entry(s.project(coarse_level)).or_default() += c.visits;
        }
        let direct: std::collections::BTreeMap<StateKey, u64> = coarse
            .states
            .iter()
            .map(|(s, c)| (s.clone(), c.visits))
            .collect();
        expect(
            format!("projection {fine} -> {coarse_level}"),
            projected == direct,
        );
    }

    // Agent mode.
    let Ok((train, test)) = chronological_split(log, 0.8) else {
        return bad;
    };
    expect(
        "split sizes".into(),
        train.n_cases() + test.n_cases() == log.n_cases(),
    );
    let abs = Abstraction::fit(&train, &AbstractionConfig::default()).unwrap();
    let counts = build_counts(&train, &abs).unwrap();
    let w = risk_weights(&counts, &exc);
    let evaluator = Evaluator::new(&test, &counts, &w).unwrap();
    let test_occ = occupancy(&build_counts(&test, &abs).unwrap());
    let mut by_h0: std::collections::BTreeMap<(u64, u64), Vec<(f64, f64)>> = Default::default();
    for cfg in &grid {
        let run = evaluator.run(cfg);
        expect(format!("determinism {cfg:?}"), run == evaluator.run(cfg));
        expect(
            format!("C0 <= R_safe {cfg:?}"),
            run.zero_touch_rate() <= run.safe_rate(),
        );
        for c in &run.cases {
            expect(
                format!("case order {}", c.case_id),
                !c.zero_touch_success || (c.safe_success && c.touches == 0),
            );
        }
        let sur = evaluator.surrogates(cfg);
        expect(
            format!("surrogate order {cfg:?}"),
            sur.c0_theory <= sur.r_safe_theory + 1e-15,
        );
        let profiles = evaluator.profiles();
        let visits = escalated_visits(&test_occ, |s| profiles.gate(cfg, s));
        expect(
            format!("touches identity {cfg:?}"),
            (visits - run.touches_per_case()).abs() <= 1e-12,
        );
        let dec = coverage_decomposition(&test, &counts, &run.greedy_match_series(), cfg.tau);
        match dec {
            Ok(d) => expect(
                format!("coverage identity {cfg:?}"),
                d.identity_residual().abs() <= 1e-12,
            ),
            Err(Error::EmptyLog) => {}
            Err(e) => expect(format!("coverage {e}"), false),
        }
        by_h0
            .entry((cfg.tau, cfg.w0.to_bits()))
            .or_default()
            .push((cfg.h0, run.touches_per_case()));
    }
    for series in by_h0.values() {
        expect(
            "touches nonincreasing in h0".into(),
            series
                .windows(2)
                .all(|p| p[0].0 > p[1].0 || p[0].1 >= p[1].1),
        );
    }
    bad
}
