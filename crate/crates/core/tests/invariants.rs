use incentive_core::agents::{
    individual_optimum, individual_utility, utility, viability_threshold,
};
use incentive_core::equilibrium::{best_response, closed_form_equilibrium};
use incentive_core::mechanisms::{
    allocate, check_feasible, check_ir, solve_two_type_schedule, ShapingScheduleKnown,
};
use incentive_core::{AccuracyModel, InverseSlope, MechanismSpec, Population, TwoTypePrior};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

const EPS: f64 = 1e-6;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        rng_seed: RngSeed::Fixed(0x5eed),
        ..ProptestConfig::default()
    }
}

fn model() -> impl Strategy<Value = AccuracyModel> {
    prop_oneof![
        (0.6..0.99f64, 1.0..8.0f64).prop_map(|(a, k)| AccuracyModel::simple(a, k).unwrap()),
        (0.8..0.99f64, 1.0..20.0f64).prop_map(|(a, k)| AccuracyModel::full(a, k).unwrap()),
        (0.5..5.0f64, 0.3..0.8f64, 0.0..0.2f64)
            .prop_map(|(b, al, t)| AccuracyModel::power_law(b, al, t).unwrap()),
    ]
}

/// A cost expressed as a multiple of the model's viability threshold.
fn cost_for(model: &AccuracyModel, multiple: f64) -> f64 {
    viability_threshold(model) * multiple
}

fn profile_for(pop: &Population, fractions: &[f64]) -> Vec<f64> {
    fractions
        .iter()
        .enumerate()
        .map(|(i, f)| f / pop.cost(i))
        .collect()
}

/// Model, population and profile with costs on both sides of viability.
fn instance() -> impl Strategy<Value = (AccuracyModel, Population, Vec<f64>)> {
    (
        model(),
        prop::collection::vec((0.05..3.0f64, 0.0..1.0f64), 1..6),
    )
        .prop_map(|(model, draws)| {
            let costs: Vec<f64> = draws.iter().map(|d| cost_for(&model, d.0)).collect();
            let pop = Population::new(&costs).unwrap();
            let fractions: Vec<f64> = draws.iter().map(|d| d.1).collect();
            let profile = profile_for(&pop, &fractions);
            (model, pop, profile)
        })
}

/// Two-type draws with the high cost below viability, costs at least 5%
/// apart, and epsilon well below both the costs and their spread.
fn two_type() -> impl Strategy<Value = (AccuracyModel, f64, f64, f64, f64, f64)> {
    (
        model(),
        0.05..0.95f64,
        0.05..0.95f64,
        0.0..=1.0f64,
        0.0..2000.0f64,
    )
        .prop_map(|(model, high, ratio, p, others)| {
            let c_high = cost_for(&model, high);
            let c_low = c_high * ratio;
            (model, c_low, c_high, p, others, 1e-4 * c_low)
        })
}

proptest! {
    #![proptest_config(cases(1000))]

    #[test]
    fn mechanisms_are_feasible_and_ir((model, pop, profile) in instance(), p in 0.0..=1.0f64) {
        let costs = pop.costs();
        let lo = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = costs.iter().cloned().fold(0.0, f64::max);
        let prior = TwoTypePrior::uniform(lo, hi, p, pop.len()).unwrap();
        let is_low: Vec<bool> = costs.iter().map(|&c| c == lo).collect();
        let typed = Population::with_types(prior, &is_low).unwrap();
        let typed_profile = profile_for(&typed, &profile.iter().enumerate().map(|(i, m)| m * pop.cost(i)).collect::<Vec<_>>());
        for (mech, pop, profile) in [
            (MechanismSpec::StandardFederated, &pop, &profile),
            (MechanismSpec::shaping(), &pop, &profile),
            (MechanismSpec::shaping_two_type(), &typed, &typed_profile),
        ] {
            let feas = check_feasible(&mech, &model, pop, profile).unwrap();
            let ir = check_ir(&mech, &model, pop, profile).unwrap();
            prop_assert!(feas.ok, "{mech:?} infeasible by {}", feas.worst);
            prop_assert!(ir.ok, "{mech:?} violates IR by {}", ir.worst);
            let acc = allocate(&mech, &model, pop, profile).unwrap();
            prop_assert!(acc.iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }
}

proptest! {
    #![proptest_config(cases(300))]

    #[test]
    fn accuracy_is_monotone_and_bounded(model in model(), x in 0.0..1e5f64, dx in 0.0..1e3f64) {
        let (a, b) = (model.eval(x), model.eval(x + dx));
        prop_assert!(a <= b + 1e-15);
        prop_assert!((0.0..=model.limit()).contains(&a));
    }

    #[test]
    fn inverse_slope_round_trips(model in model(), s_frac in 1e-4..0.9f64) {
        let floor = model.concave_from().max(model.min_viable_dataset());
        let s = model.slope(floor.max(1.0)).unwrap() * s_frac;
        if let InverseSlope::Finite(m) = model.inverse_slope(s) {
            prop_assert!((model.slope(m).unwrap() - s).abs() <= 1e-8 * s);
        } else {
            prop_assert!(false, "finite slope has finite inverse");
        }
    }

    #[test]
    fn simple_bound_closed_form(a in 0.6..0.99f64, k in 1.0..8.0f64, frac in 0.01..0.99f64) {
        let model = AccuracyModel::simple(a, k).unwrap();
        let c = frac * a.powi(3) / (27.0 * k);
        let m = individual_optimum(&model, c);
        let closed = k.cbrt() * c.powf(-2.0 / 3.0);
        prop_assert!((m - closed).abs() / closed <= 1e-6);
        prop_assert!((utility(&model, c, m) - (a - 3.0 * (k * c).cbrt())).abs() <= 1e-6);
    }

    #[test]
    fn shaping_curve_is_continuous_with_incentive_slope(
        model in model(), mult in 0.05..3.0f64, others in 0.0..5000.0f64,
    ) {
        let c = cost_for(&model, mult);
        let sched = ShapingScheduleKnown::new(&model, c, EPS, others);
        prop_assert!(sched.m_max >= sched.m_star && sched.m_star >= 0.0);
        prop_assert!(sched.residual(&model, c, EPS).abs() <= 1e-8);
        let offer = sched.offer(&model, c, EPS);
        for x in [sched.m_star, sched.m_max] {
            let jump = (offer.accuracy(x + 1e-6) - offer.accuracy((x - 1e-6).max(0.0))).abs();
            prop_assert!(jump < 1e-4, "jump {jump} at {x}");
        }
        if sched.m_max - sched.m_star > 1e-3 && sched.m_star + others >= model.min_viable_dataset() {
            let x = 0.5 * (sched.m_star + sched.m_max);
            prop_assert!((offer.slope(x) - (c + EPS)).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_type_schedule_ordering((model, cl, ch, p, others, eps) in two_type()) {
        let s = solve_two_type_schedule(&model, cl, ch, p, eps, others);
        prop_assert!(s.m_star_high <= s.m_up, "{s:?}");
        prop_assert!(s.m_up <= s.m_down, "{s:?}");
        prop_assert!(s.m_down <= s.m_max_low && s.m_down >= s.m_max_high, "{s:?}");
        prop_assert!(s.m_up <= s.m_max_high, "{s:?}");
        if s.m_up < s.m_max_high && s.m_up > s.m_star_high {
            prop_assert!(s.intersection_residual(&model, cl, ch, eps).abs() <= 1e-8);
        }
        if p >= cl / (cl + ch) {
            prop_assert_eq!(s.m_down, s.m_max_low);
        }
        let offer = s.offer(&model, cl, ch, eps);
        for x in [s.m_star_high, s.m_up, s.m_down] {
            let jump = (offer.accuracy(x + 1e-6) - offer.accuracy((x - 1e-6).max(0.0))).abs();
            prop_assert!(jump < 1e-4, "jump {jump} at {x}");
        }
        let low = |x: f64| offer.accuracy(x) - cl * x;
        prop_assert!(low(s.m_down) >= low(s.m_up) - 1e-12);
    }
}

proptest! {
    #![proptest_config(cases(200))]

    #[test]
    fn shaping_response_is_monotone_and_dominant(
        model in model(), mult in 0.05..3.0f64, d1 in 0.0..3000.0f64, extra in 0.0..3000.0f64,
    ) {
        let c = cost_for(&model, mult);
        let pop = Population::new(&[c, c]).unwrap();
        let shaping = MechanismSpec::shaping();
        let lo = best_response(&shaping, &model, &pop, 0, &[0.0, d1]).unwrap();
        let hi = best_response(&shaping, &model, &pop, 0, &[0.0, d1 + extra]).unwrap();
        prop_assert!(hi >= lo - 1e-9 * (1.0 + lo), "{lo} -> {hi}");
        let fed = best_response(&MechanismSpec::StandardFederated, &model, &pop, 0, &[0.0, d1]).unwrap();
        prop_assert!(lo >= fed - 1e-9 * (1.0 + fed), "shaping {lo} < standard {fed}");
    }
}

proptest! {
    #![proptest_config(cases(50))]

    #[test]
    fn shaping_equilibrium_keeps_utility(
        model in model(), mults in prop::collection::vec(0.05..0.95f64, 1..8),
    ) {
        let costs: Vec<f64> = mults.iter().map(|&m| cost_for(&model, m)).collect();
        let pop = Population::new(&costs).unwrap();
        let eq = closed_form_equilibrium(&MechanismSpec::shaping(), &model, &pop).unwrap();
        let acc = allocate(&MechanismSpec::shaping(), &model, &pop, &eq).unwrap();
        for (i, &c) in costs.iter().enumerate() {
            prop_assert!(eq[i] >= individual_optimum(&model, c));
            let gain = acc[i] - c * eq[i] - individual_utility(&model, c);
            prop_assert!(gain.abs() <= EPS * eq[i] + 1e-6, "agent {i}: {gain}");
        }
    }

    #[test]
    fn two_type_equilibrium_information_rent(
        model in model(), high in 0.05..0.95f64, ratio in 0.05..0.95f64, p in 0.0..=1.0f64,
        types in prop::collection::vec(any::<bool>(), 2..6),
    ) {
        let ch = cost_for(&model, high);
        let cl = ch * ratio;
        let eps = 1e-4 * cl;
        let prior = TwoTypePrior::uniform(cl, ch, p, types.len()).unwrap();
        let pop = Population::with_types(prior, &types).unwrap();
        let mech = MechanismSpec::ShapingTwoType { epsilon: eps };
        let eq = closed_form_equilibrium(&mech, &model, &pop).unwrap();
        let acc = allocate(&mech, &model, &pop, &eq).unwrap();
        for i in 0..pop.len() {
            let c = pop.cost(i);
            let rent = acc[i] - c * eq[i] - individual_utility(&model, c);
            if types[i] && cl < ch {
                prop_assert!(rent >= -1e-9, "low agent {i}: {rent}");
            } else {
                prop_assert!(rent.abs() <= eps * eq[i] + 1e-6, "high agent {i}: {rent}");
            }
        }
    }
}
