//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use incentive_core::agents::{
    individual_optimum, individual_utility, utility, viability_threshold,
};
use incentive_core::equilibrium::{
    best_response_dynamics, closed_form_equilibrium, default_init, min_viability_total,
    FIXED_POINT_TOL, MAX_ITER,
};
use incentive_core::mechanisms::{allocate, others_total, solve_m_max, solve_two_type_schedule};
use incentive_core::oracle::{certify_nash, spot_check_data_max, DATA_MAX_TOL};
use incentive_core::{AccuracyModel, GridSpec, MechanismSpec, Population, TwoTypePrior};
use incentive_mech::sweeps::{equilibrium_sweep, individual_sweep};
use incentive_mech::verify::{verify_report, VerifyReport};
use incentive_mech::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const SEED: u64 = 2024;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn cfg(overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::from_toml("", &o).expect("valid overrides")
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn random_model(rng: &mut ChaCha8Rng) -> AccuracyModel {
    match rng.gen_range(0..3) {
        0 => AccuracyModel::simple(rng.gen_range(0.6..0.99), rng.gen_range(1.0..8.0)),
        1 => AccuracyModel::full(rng.gen_range(0.8..0.99), rng.gen_range(1.0..20.0)),
        _ => AccuracyModel::power_law(
            rng.gen_range(0.5..5.0),
            rng.gen_range(0.3..0.8),
            rng.gen_range(0.0..0.2),
        ),
    }
    .unwrap()
}

fn individual_closed_form() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_m, mut worst_u) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = rng.gen_range(0.6..0.99);
        let k = rng.gen_range(1.0..10.0);
        let model = AccuracyModel::simple(a, k).unwrap();
        let c = rng.gen_range(0.01..0.99) * a * a * a / (27.0 * k);
        let closed = k.cbrt() * c.powf(-2.0 / 3.0);
        let m = individual_optimum(&model, c);
        worst_m = worst_m.max((m - closed).abs() / closed);
        worst_u = worst_u.max((utility(&model, c, m) - (a - 3.0 * (k * c).cbrt())).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst_m <= 1e-6 && worst_u <= 1e-6 && secs < 1.0,
        format!("rel m* error {worst_m:.2e}, utility error {worst_u:.2e}, {secs:.3} s"),
    )
}

fn power_law_slope() -> Outcome {
    let mut slopes = Vec::new();
    for kind in ["simple", "full"] {
        let kind_override = format!("accuracy.kind={kind}");
        let rows = individual_sweep(&cfg(&[
            &kind_override,
            "sweep.from=1e-7",
            "sweep.to=1",
            "sweep.points=71",
        ]))
        .unwrap();
        let viable: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.m_star > 0.0)
            .map(|r| (r.c, r.m_star))
            .collect();
        slopes.push((loglog_slope(&viable), viable.len()));
    }
    let (simple, full) = (slopes[0], slopes[1]);
    let target = -2.0 / 3.0;
    (
        (simple.0 - target).abs() <= 0.01 && (full.0 - target).abs() <= 0.05,
        format!(
            "simple slope {:.5} ({} pts), full slope {:.5} ({} pts)",
            simple.0, simple.1, full.0, full.1
        ),
    )
}

fn free_riding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let grid = GridSpec::default();
    let mech = MechanismSpec::StandardFederated;
    let (mut worst_dist, mut worst_regret, mut failures) = (0.0f64, 0.0f64, 0);
    let mut max_iter = 0;
    for _ in 0..50 {
        let model =
            AccuracyModel::simple(rng.gen_range(0.8..0.99), rng.gen_range(1.0..4.0)).unwrap();
        let hi = 0.9 * viability_threshold(&model);
        let n = rng.gen_range(2..=10);
        let costs: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0.002f64.ln()..hi.ln()).exp())
            .collect();
        let pop = Population::new(&costs).unwrap();
        let res = best_response_dynamics(
            &mech,
            &model,
            &pop,
            &default_init(&model, &pop),
            FIXED_POINT_TOL,
            MAX_ITER,
        )
        .unwrap();
        let expected = closed_form_equilibrium(&mech, &model, &pop).unwrap();
        let dist = res
            .profile
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs() / (1.0 + b))
            .fold(0.0, f64::max);
        let regret = certify_nash(&mech, &model, &pop, &res.profile, &grid).unwrap();
        worst_dist = worst_dist.max(dist);
        worst_regret = worst_regret.max(regret);
        max_iter = max_iter.max(res.iterations);
        if !res.converged || dist > 1e-6 || regret > 1e-4 {
            failures += 1;
        }
    }
    (
        failures == 0,
        format!(
            "{failures}/50 failed, max distance {worst_dist:.2e}, max regret {worst_regret:.2e}, max iterations {max_iter}"
        ),
    )
}

fn shaping_equilibrium() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let grid = GridSpec::default();
    let mech = MechanismSpec::ShapingKnown { epsilon: EPS };
    let (mut worst_regret, mut worst_gap, mut below, mut failures) =
        (0.0f64, f64::NEG_INFINITY, 0, 0);
    for _ in 0..50 {
        let model = random_model(&mut rng);
        let threshold = viability_threshold(&model);
        let n = rng.gen_range(1..=10);
        let costs: Vec<f64> = (0..n)
            .map(|_| threshold * rng.gen_range(0.05..3.0))
            .collect();
        let pop = Population::new(&costs).unwrap();
        let eq = match closed_form_equilibrium(&mech, &model, &pop) {
            Ok(eq) => eq,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let regret = certify_nash(&mech, &model, &pop, &eq, &grid).unwrap();
        worst_regret = worst_regret.max(regret);
        let acc = allocate(&mech, &model, &pop, &eq).unwrap();
        for (i, &c) in costs.iter().enumerate() {
            if eq[i] < individual_optimum(&model, c) {
                below += 1;
            }
            let gap = (acc[i] - c * eq[i] - individual_utility(&model, c)).abs() - EPS * eq[i];
            worst_gap = worst_gap.max(gap);
        }
    }
    (
        failures == 0 && below == 0 && worst_regret <= 1e-4 && worst_gap <= 1e-6,
        format!(
            "{failures} solver failures, {below} agents below m*, max regret {worst_regret:.2e}, max |du| - eps m {worst_gap:.2e}"
        ),
    )
}

fn example_constants() -> Outcome {
    let (c, k) = (0.01, 1.0);
    let model = AccuracyModel::simple(0.95, k).unwrap();
    let eq = closed_form_equilibrium(
        &MechanismSpec::ShapingKnown { epsilon: EPS },
        &model,
        &Population::uniform(c, 3).unwrap(),
    )
    .unwrap();
    let m_star = individual_optimum(&model, c);
    let far = solve_m_max(&model, c, EPS, m_star, 1e9);
    let limit = 3.0 * (k / (c * c)).cbrt();
    let rel = (far - limit).abs() / limit;
    (
        eq[0] >= 32.31 && rel <= 1e-3,
        format!(
            "m_max(n=3) = {:.4}, m_max(D=1e9) = {far:.4} vs {limit:.4} (rel {rel:.1e})",
            eq[0]
        ),
    )
}

fn figure_four() -> Outcome {
    let by_n =
        equilibrium_sweep(&cfg(&["sweep.param=n", "sweep.from=1e3", "sweep.to=1e5"])).unwrap();
    let by_c = equilibrium_sweep(&cfg(&[
        "sweep.param=c",
        "sweep.from=0.05",
        "sweep.to=1",
        "sweep.points=21",
    ]))
    .unwrap();
    let slope_n = loglog_slope(
        &by_n
            .iter()
            .map(|r| (r.n as f64, r.total_data))
            .collect::<Vec<_>>(),
    );
    let slope_c = loglog_slope(&by_c.iter().map(|r| (r.c, r.total_data)).collect::<Vec<_>>());
    let rows = by_n.iter().chain(&by_c);
    let zero_optima = rows.clone().all(|r| r.m_star == 0.0);
    let all_ok = rows.clone().all(|r| r.status == "ok");
    let regret = rows.filter_map(|r| r.nash_regret).fold(0.0f64, f64::max);
    (
        (slope_n - 1.0).abs() <= 0.05
            && (slope_c + 1.0).abs() <= 0.1
            && zero_optima
            && all_ok
            && regret <= 1e-4,
        format!(
            "slope vs n {slope_n:.4}, slope vs c {slope_c:.4}, all m* = 0: {zero_optima}, certified regret {regret:.1e}"
        ),
    )
}

/// Largest root of `a_opt - 2 sqrt(k/m) - (c/n) m`, by plain bisection.
fn viability_oracle(a: f64, k: f64, share: f64) -> f64 {
    let f = |m: f64| a - 2.0 * (k / m).sqrt() - share * m;
    let mut lo = (k / (share * share)).cbrt();
    let mut hi = lo;
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn minimum_viability() -> Outcome {
    let a = 0.95;
    let model = AccuracyModel::simple(a, 1.0).unwrap();
    let (c, n) = (0.1, 100);
    let m = min_viability_total(&model, c, n);
    let residual = (model.eval(m) - c / n as f64 * m).abs();
    let oracle = viability_oracle(a, 1.0, c / n as f64);
    let rel = (m - oracle).abs() / oracle;
    let mut checked = 0;
    let mut violations = 0;
    for &c in &[0.05, 0.1, 0.2, 0.5, 1.0] {
        for &k in &[1.0, 2.0, 5.0, 10.0] {
            let model = AccuracyModel::simple(a, k).unwrap();
            let n_low = (32.0 * c * k / a.powi(3)).ceil() as usize;
            for mult in [1, 2, 5, 10, 100] {
                let n = n_low * mult;
                checked += 1;
                if min_viability_total(&model, c, n) < a * n as f64 / (2.0 * c) {
                    violations += 1;
                }
            }
        }
    }
    (
        residual <= 1e-8 && rel <= 1e-8 && violations == 0,
        format!(
            "m_tot {m:.6} (oracle {oracle:.6}, residual {residual:.1e}); bound held at {}/{checked} grid points",
            checked - violations
        ),
    )
}

fn two_type_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let (mut order, mut saturation, mut rent, mut high, mut residual) = (0, 0, 0, 0, 0);
    let (mut clamped, mut worst_res) = (0, 0.0f64);
    for _ in 0..50 {
        let model = random_model(&mut rng);
        let ch = viability_threshold(&model) * rng.gen_range(0.05..0.95);
        let cl = ch * rng.gen_range(0.05..0.95);
        let p = rng.gen_range(0.0..=1.0);
        let eps = 1e-4 * cl;
        let n = rng.gen_range(2..=6);
        let is_low: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let prior = TwoTypePrior::uniform(cl, ch, p, n).unwrap();
        let pop = Population::with_types(prior, &is_low).unwrap();
        let mech = MechanismSpec::ShapingTwoType { epsilon: eps };
        let eq = closed_form_equilibrium(&mech, &model, &pop).unwrap();
        let total: f64 = eq.iter().sum();
        let s = solve_two_type_schedule(&model, cl, ch, p, eps, others_total(&eq, total, 0));
        if !(s.m_star_high <= s.m_up && s.m_up <= s.m_down) {
            order += 1;
        }
        if p >= cl / (cl + ch) && s.m_down != s.m_max_low {
            saturation += 1;
        }
        if s.m_up > s.m_star_high && s.m_up < s.m_max_high {
            let r = s.intersection_residual(&model, cl, ch, eps).abs();
            worst_res = worst_res.max(r);
            if r > 1e-8 {
                residual += 1;
            }
        } else {
            clamped += 1;
        }
        let acc = allocate(&mech, &model, &pop, &eq).unwrap();
        for i in 0..n {
            let c = pop.cost(i);
            let gain = acc[i] - c * eq[i] - individual_utility(&model, c);
            if is_low[i] && gain < -1e-9 {
                rent += 1;
            }
            if !is_low[i] && gain.abs() > eps * eq[i] + 1e-6 {
                high += 1;
            }
        }
    }
    (
        order + saturation + rent + high + residual == 0,
        format!(
            "violations: ordering {order}, saturation {saturation}, low rent {rent}, high utility {high}, residual {residual} (max {worst_res:.1e}; {clamped} draws at the m_up clamp)"
        ),
    )
}

/// The verify suite at 1000 draws per property, shared by two criteria.
fn full_report() -> &'static VerifyReport {
    static REPORT: OnceLock<VerifyReport> = OnceLock::new();
    REPORT.get_or_init(|| verify_report(&cfg(&["verify.instances=1000"])).unwrap())
}

fn property_suites() -> Outcome {
    let report = full_report();
    let get = |name: &str| report.checks.iter().find(|c| c.name == name).unwrap();
    let wanted = [
        ("feasibility", 1000),
        ("individual_rationality", 1000),
        ("allocation_continuity", 1000),
        ("best_response_monotone", 1000),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, at_least) in wanted {
        let c = get(name);
        ok &= c.pass && c.instances >= at_least;
        notes.push(format!(
            "{name} {} ({:.1e})",
            if c.pass { "ok" } else { "FAILED" },
            c.worst
        ));
    }
    let status = Command::new(env!("CARGO_BIN_EXE_incentive-mech"))
        .args(["verify", "--out"])
        .arg(std::env::temp_dir().join("incentive-mech-acceptance-verify.json"))
        .status()
        .expect("binary runs");
    ok &= status.code() == Some(0);
    notes.push(format!("verify exit {:?}", status.code()));
    (ok, notes.join(", "))
}

fn oracle_agreement() -> Outcome {
    let grid = full_report()
        .checks
        .iter()
        .find(|c| c.name == "best_response_vs_grid")
        .unwrap()
        .clone();
    let model = AccuracyModel::simple(0.95, 1.0).unwrap();
    let instances: [&[f64]; 4] = [
        &[0.01, 0.02],
        &[0.01, 0.01],
        &[0.005, 0.01, 0.02],
        &[0.02, 0.025, 0.03],
    ];
    let mut worst_margin = f64::NEG_INFINITY;
    let mut pass = grid.pass && grid.instances >= 500;
    for costs in instances {
        let pop = Population::new(costs).unwrap();
        let r = spot_check_data_max(&model, &pop, EPS, usize::MAX, &GridSpec::default()).unwrap();
        pass &= r.pass && r.margin <= DATA_MAX_TOL;
        worst_margin = worst_margin.max(r.margin);
    }
    (
        pass,
        format!(
            "solver vs grid on {} instances: max {:.2} final steps; best alternative margin {worst_margin:.3e} over {} instances",
            grid.instances,
            grid.worst,
            instances.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("individual optimum closed form", individual_closed_form),
        ("power-law slope of m*", power_law_slope),
        ("catastrophic free-riding", free_riding),
        ("shaping equilibrium", shaping_equilibrium),
        ("identical-agent constants", example_constants),
        ("equilibrium data vs n and c", figure_four),
        ("minimum viability", minimum_viability),
        ("two-type screening", two_type_suite),
        ("property suites", property_suites),
        ("oracle agreement", oracle_agreement),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = run();
        failed += usize::from(!pass);
        println!(
            "acceptance {:>2} {} {name}: {detail} [{:.1} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
