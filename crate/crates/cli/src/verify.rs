//! Randomized property checks and oracle comparisons behind `verify`.

use incentive_core::agents::{individual_optimum, individual_utility, viability_threshold};
use incentive_core::equilibrium::{
    best_response, best_response_dynamics, closed_form_equilibrium, default_init, FIXED_POINT_TOL,
    MAX_ITER,
};
use incentive_core::mechanisms::{
    allocate, check_feasible, check_ir, solve_two_type_schedule, DegradedRule, InflatedRule,
    ShapingScheduleKnown, CHECK_TOL,
};
use incentive_core::oracle::{
    certify_nash, grid_best_response, scan_constraints, spot_check_data_max,
};
use incentive_core::{
    AccuracyModel, AllocationRule, GridSpec, MechanismSpec, Population, TwoTypePrior,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Adversary, ExperimentConfig};
use crate::error::CliError;

pub const REGRET_TOL: f64 = 1e-4;
pub const CONTINUITY_TOL: f64 = 1e-4;
pub const RESIDUAL_TOL: f64 = 1e-8;
pub const UTILITY_SLACK: f64 = 1e-6;
/// Failure messages kept per check.
const MAX_NOTES: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub instances: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Accumulates the worst value of one check; `pass` requires `worst <= tol`.
struct Tally {
    check: Check,
}

impl Tally {
    fn new(name: &str, tolerance: f64) -> Self {
        Tally {
            check: Check {
                name: name.into(),
                pass: true,
                instances: 0,
                worst: f64::NEG_INFINITY,
                tolerance,
                failures: Vec::new(),
            },
        }
    }

    fn record(&mut self, value: f64, note: impl FnOnce() -> String) {
        let c = &mut self.check;
        c.worst = c.worst.max(value);
        if !(value <= c.tolerance) {
            c.pass = false;
            if c.failures.len() < MAX_NOTES {
                c.failures.push(note());
            }
        }
    }

    fn fail(&mut self, note: String) {
        self.check.pass = false;
        if self.check.failures.len() < MAX_NOTES {
            self.check.failures.push(note);
        }
    }

    fn done(mut self, instances: usize) -> Check {
        self.check.instances = instances;
        if self.check.worst == f64::NEG_INFINITY {
            self.check.worst = 0.0;
        }
        self.check
    }
}

fn random_model(rng: &mut ChaCha8Rng) -> AccuracyModel {
    let model = match rng.gen_range(0..3) {
        0 => AccuracyModel::simple(rng.gen_range(0.6..0.99), rng.gen_range(1.0..8.0)),
        1 => AccuracyModel::full(rng.gen_range(0.8..0.99), rng.gen_range(1.0..20.0)),
        _ => AccuracyModel::power_law(
            rng.gen_range(0.5..5.0),
            rng.gen_range(0.3..0.8),
            rng.gen_range(0.0..0.2),
        ),
    };
    model.expect("parameters drawn inside the valid ranges")
}

/// Costs as multiples of the model's viability threshold.
fn random_costs(
    rng: &mut ChaCha8Rng,
    model: &AccuracyModel,
    n: usize,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    let threshold = viability_threshold(model);
    (0..n).map(|_| threshold * rng.gen_range(lo..hi)).collect()
}

/// Population with two-type prior: the cheapest agents are the low type.
fn typed(costs: &[f64], p: f64) -> Result<Population, CliError> {
    let lo = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = costs.iter().cloned().fold(0.0, f64::max);
    let prior = TwoTypePrior::uniform(lo, hi, p, costs.len())?;
    let is_low: Vec<bool> = costs.iter().map(|&c| c == lo).collect();
    Ok(Population::with_types(prior, &is_low)?)
}

struct Instance {
    model: AccuracyModel,
    pop: Population,
    typed: Population,
    profile: Vec<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Result<Instance, CliError> {
    let model = random_model(rng);
    let n = rng.gen_range(1..6);
    let costs = random_costs(rng, &model, n, 0.05, 3.0);
    let profile: Vec<f64> = costs.iter().map(|c| rng.gen_range(0.0..1.0) / c).collect();
    let p = rng.gen_range(0.0..=1.0);
    Ok(Instance {
        model,
        pop: Population::new(&costs)?,
        typed: typed(&costs, p)?,
        profile,
    })
}

fn constraint_checks(
    rng: &mut ChaCha8Rng,
    count: usize,
    epsilon: f64,
    adversary: Adversary,
) -> Result<(Check, Check), CliError> {
    let mut feas = Tally::new("feasibility", CHECK_TOL);
    let mut ir = Tally::new("individual_rationality", CHECK_TOL);
    let extra: Option<Box<dyn AllocationRule>> = match adversary {
        Adversary::None => None,
        Adversary::Inflated => Some(Box::new(InflatedRule { offset: 0.05 })),
        Adversary::Degraded => Some(Box::new(DegradedRule { factor: 0.5 })),
    };
    let standard = MechanismSpec::StandardFederated;
    let known = MechanismSpec::ShapingKnown { epsilon };
    let two = MechanismSpec::ShapingTwoType { epsilon };
    for _ in 0..count {
        let inst = random_instance(rng)?;
        let mut rules: Vec<(&dyn AllocationRule, &Population)> = vec![
            (&standard, &inst.pop),
            (&known, &inst.pop),
            (&two, &inst.typed),
        ];
        if let Some(rule) = &extra {
            rules.push((rule.as_ref(), &inst.pop));
        }
        for (rule, pop) in rules {
            let at_profile_f = check_feasible(rule, &inst.model, pop, &inst.profile)?.worst;
            let at_profile_i = check_ir(rule, &inst.model, pop, &inst.profile)?.worst;
            let (scan_f, scan_i) = scan_constraints(rule, &inst.model, pop, &inst.profile, 500)?;
            let label = rule.label();
            feas.record(at_profile_f.max(scan_f), || {
                format!("{label}: excess {}", at_profile_f.max(scan_f))
            });
            ir.record(at_profile_i.max(scan_i), || {
                format!("{label}: shortfall {}", at_profile_i.max(scan_i))
            });
        }
    }
    Ok((feas.done(count), ir.done(count)))
}

fn jump<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    (f(x + 1e-6) - f((x - 1e-6).max(0.0))).abs()
}

fn continuity_check(rng: &mut ChaCha8Rng, count: usize, epsilon: f64) -> Check {
    let mut t = Tally::new("allocation_continuity", CONTINUITY_TOL);
    for _ in 0..count {
        let model = random_model(rng);
        let threshold = viability_threshold(&model);
        let c = threshold * rng.gen_range(0.05..3.0);
        let others = rng.gen_range(0.0..5000.0);
        let s = ShapingScheduleKnown::new(&model, c, epsilon, others);
        let offer = s.offer(&model, c, epsilon);
        for x in [s.m_star, s.m_max] {
            t.record(jump(|y| offer.accuracy(y), x), || {
                format!("known c={c} at {x}")
            });
        }
        let ch = threshold * rng.gen_range(0.05..0.95);
        let cl = ch * rng.gen_range(0.05..0.95);
        let eps = 1e-4 * cl;
        let s = solve_two_type_schedule(&model, cl, ch, rng.gen_range(0.0..=1.0), eps, others);
        let offer = s.offer(&model, cl, ch, eps);
        for x in [s.m_star_high, s.m_up, s.m_down] {
            t.record(jump(|y| offer.accuracy(y), x), || {
                format!("two-type ({cl},{ch}) at {x}")
            });
        }
    }
    t.done(count)
}

fn monotonicity_check(rng: &mut ChaCha8Rng, count: usize, epsilon: f64) -> Result<Check, CliError> {
    let mut t = Tally::new("best_response_monotone", 0.0);
    let shaping = MechanismSpec::ShapingKnown { epsilon };
    for _ in 0..count {
        let model = random_model(rng);
        let c = viability_threshold(&model) * rng.gen_range(0.05..3.0);
        let pop = Population::new(&[c, c])?;
        let d1 = rng.gen_range(0.0..3000.0);
        let d2 = d1 + rng.gen_range(0.0..3000.0);
        let lo = best_response(&shaping, &model, &pop, 0, &[0.0, d1])?;
        let hi = best_response(&shaping, &model, &pop, 0, &[0.0, d2])?;
        let fed = best_response(
            &MechanismSpec::StandardFederated,
            &model,
            &pop,
            0,
            &[0.0, d1],
        )?;
        let drop = (lo - hi).max(fed - lo) - 1e-9 * (1.0 + lo.max(fed));
        t.record(drop.max(0.0), || {
            format!("c={c}: {lo} -> {hi}, standard {fed}")
        });
    }
    Ok(t.done(count))
}

fn grid_agreement_check(
    rng: &mut ChaCha8Rng,
    count: usize,
    epsilon: f64,
    grid: &GridSpec,
) -> Result<Check, CliError> {
    let mut t = Tally::new("best_response_vs_grid", 2.0);
    for _ in 0..count {
        let inst = random_instance(rng)?;
        let mech = match rng.gen_range(0..3) {
            0 => MechanismSpec::StandardFederated,
            1 => MechanismSpec::ShapingKnown { epsilon },
            _ => MechanismSpec::ShapingTwoType { epsilon },
        };
        let pop = if matches!(mech, MechanismSpec::ShapingTwoType { .. }) {
            &inst.typed
        } else {
            &inst.pop
        };
        let solver = best_response(&mech, &inst.model, pop, 0, &inst.profile)?;
        let oracle = grid_best_response(&mech, &inst.model, pop, 0, &inst.profile, grid)?;
        let steps = (solver - oracle).abs() / grid.final_step(1.0 / pop.cost(0));
        t.record(steps, || {
            format!("{mech:?}: solver {solver}, grid {oracle}")
        });
    }
    Ok(t.done(count))
}

/// Shaping equilibria keep every agent at or above its own optimum with
/// unchanged utility; worst is the largest normalized violation.
fn shaping_equilibrium_check(
    rng: &mut ChaCha8Rng,
    count: usize,
    epsilon: f64,
    grid: &GridSpec,
) -> Result<Check, CliError> {
    let mut t = Tally::new("shaping_equilibrium", 0.0);
    let mech = MechanismSpec::ShapingKnown { epsilon };
    for _ in 0..count {
        let model = random_model(rng);
        let n = rng.gen_range(1..8);
        let pop = Population::new(&random_costs(rng, &model, n, 0.05, 0.95))?;
        let eq = match closed_form_equilibrium(&mech, &model, &pop) {
            Ok(eq) => eq,
            Err(e) => {
                t.fail(format!("{model:?}: {e}"));
                continue;
            }
        };
        let regret = certify_nash(&mech, &model, &pop, &eq, grid)?;
        t.record(regret / REGRET_TOL - 1.0, || format!("regret {regret}"));
        let acc = allocate(&mech, &model, &pop, &eq)?;
        for i in 0..n {
            let c = pop.cost(i);
            let below = individual_optimum(&model, c) - eq[i];
            t.record(below, || format!("agent {i} below its optimum by {below}"));
            let gap = (acc[i] - c * eq[i] - individual_utility(&model, c)).abs();
            let excess = gap - epsilon * eq[i] - UTILITY_SLACK;
            t.record(excess, || format!("agent {i} utility moved by {gap}"));
        }
    }
    Ok(t.done(count))
}

/// Standard federated dynamics settle on the cheapest agent alone. Costs are
/// log-uniform below viability with the two cheapest at least 1% apart.
fn free_riding_check(
    rng: &mut ChaCha8Rng,
    count: usize,
    grid: &GridSpec,
) -> Result<Check, CliError> {
    let mut t = Tally::new("free_riding", 0.0);
    let mech = MechanismSpec::StandardFederated;
    for _ in 0..count {
        let model = AccuracyModel::simple(rng.gen_range(0.6..0.99), rng.gen_range(1.0..4.0))?;
        let hi = 0.9 * viability_threshold(&model);
        let n = rng.gen_range(2..=10);
        let costs = loop {
            let costs: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0.002f64.ln()..hi.ln()).exp())
                .collect();
            let mut sorted = costs.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted[1] >= 1.01 * sorted[0] {
                break costs;
            }
        };
        let pop = Population::new(&costs)?;
        let init = default_init(&model, &pop);
        let dyn_eq = best_response_dynamics(&mech, &model, &pop, &init, FIXED_POINT_TOL, MAX_ITER)?;
        let closed = closed_form_equilibrium(&mech, &model, &pop)?;
        if !dyn_eq.converged {
            t.fail(format!("dynamics did not converge for costs {costs:?}"));
        }
        let dist = dyn_eq
            .profile
            .iter()
            .zip(&closed)
            .map(|(a, b)| (a - b).abs() / (1.0 + b))
            .fold(0.0, f64::max);
        t.record(dist / 1e-6 - 1.0, || {
            format!("costs {costs:?}: distance {dist}")
        });
        let regret = certify_nash(&mech, &model, &pop, &dyn_eq.profile, grid)?;
        t.record(regret / REGRET_TOL - 1.0, || format!("regret {regret}"));
    }
    Ok(t.done(count))
}

fn two_type_check(rng: &mut ChaCha8Rng, count: usize) -> Result<Check, CliError> {
    let mut t = Tally::new("two_type_screening", 0.0);
    for _ in 0..count {
        let model = random_model(rng);
        let ch = viability_threshold(&model) * rng.gen_range(0.05..0.95);
        let cl = ch * rng.gen_range(0.05..0.95);
        let eps = 1e-4 * cl;
        let p = rng.gen_range(0.0..=1.0);
        let others = rng.gen_range(0.0..2000.0);
        let s = solve_two_type_schedule(&model, cl, ch, p, eps, others);
        let order = (s.m_star_high - s.m_up).max(s.m_up - s.m_down);
        t.record(order, || format!("ordering {s:?}"));
        if p >= cl / (cl + ch) {
            let off = (s.m_down - s.m_max_low).abs();
            t.record(off, || {
                format!("m_down {} != m_max_low {}", s.m_down, s.m_max_low)
            });
        }
        if s.m_up < s.m_max_high && s.m_up > s.m_star_high {
            let r = s.intersection_residual(&model, cl, ch, eps).abs();
            t.record(r / RESIDUAL_TOL - 1.0, || format!("residual {r}"));
        }

        let n = rng.gen_range(2..6);
        let is_low: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let pop = Population::with_types(TwoTypePrior::uniform(cl, ch, p, n)?, &is_low)?;
        let mech = MechanismSpec::ShapingTwoType { epsilon: eps };
        let eq = match closed_form_equilibrium(&mech, &model, &pop) {
            Ok(eq) => eq,
            Err(e) => {
                t.fail(format!("({cl}, {ch}, {p}): {e}"));
                continue;
            }
        };
        let acc = allocate(&mech, &model, &pop, &eq)?;
        for i in 0..n {
            let c = pop.cost(i);
            let rent = acc[i] - c * eq[i] - individual_utility(&model, c);
            let bad = if is_low[i] {
                -rent - 1e-9
            } else {
                rent.abs() - eps * eq[i] - UTILITY_SLACK
            };
            t.record(bad, || format!("agent {i} (low={}) rent {rent}", is_low[i]));
        }
    }
    Ok(t.done(count))
}

fn data_max_check(epsilon: f64, grid: &GridSpec) -> Result<Check, CliError> {
    let mut t = Tally::new("data_maximization", incentive_core::oracle::DATA_MAX_TOL);
    let model = AccuracyModel::simple(0.95, 1.0)?;
    let instances: [&[f64]; 2] = [&[0.01, 0.02], &[0.005, 0.01, 0.02]];
    for costs in instances {
        let pop = Population::new(costs)?;
        let report = spot_check_data_max(&model, &pop, epsilon, usize::MAX, grid)?;
        if !report.pass {
            t.fail(format!("costs {costs:?}: margin {}", report.margin));
        }
        t.record(report.margin, || {
            format!("costs {costs:?}: margin {}", report.margin)
        });
    }
    Ok(t.done(instances.len()))
}

/// The configured mechanism and population, solved and certified.
fn configured_check(
    cfg: &ExperimentConfig,
    grid: &GridSpec,
) -> Result<(Check, Vec<String>), CliError> {
    let model = cfg.model()?;
    let pop = match cfg.mechanism {
        MechanismSpec::ShapingTwoType { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Population::sample_types(cfg.prior()?, &mut rng)?
        }
        _ => cfg.population()?,
    };
    let warnings = cfg.mechanism.validate(&pop)?;
    let mut t = Tally::new("configured_equilibrium", REGRET_TOL);
    match closed_form_equilibrium(&cfg.mechanism, &model, &pop) {
        Ok(eq) => {
            let regret = certify_nash(&cfg.mechanism, &model, &pop, &eq, grid)?;
            t.record(regret, || format!("regret {regret}"));
        }
        Err(e) => t.fail(e.to_string()),
    }
    Ok((t.done(1), warnings))
}

/// Runs every check; the report passes only if each check does.
pub fn verify_report(cfg: &ExperimentConfig) -> Result<VerifyReport, CliError> {
    let grid = cfg.grid()?;
    let (configured, warnings) = configured_check(cfg, &grid)?;
    let epsilon = cfg.epsilon();
    let count = cfg.verify.instances;
    if count == 0 {
        return Err(CliError::Validation(
            "verify.instances must be positive".into(),
        ));
    }
    let small = (count / 10).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (feas, ir) = constraint_checks(&mut rng, count, epsilon, cfg.verify.adversarial)?;
    let checks = vec![
        configured,
        feas,
        ir,
        continuity_check(&mut rng, count, epsilon),
        monotonicity_check(&mut rng, count, epsilon)?,
        grid_agreement_check(&mut rng, count / 2, epsilon, &grid)?,
        shaping_equilibrium_check(&mut rng, small, epsilon, &grid)?,
        free_riding_check(&mut rng, small, &grid)?,
        two_type_check(&mut rng, small)?,
        data_max_check(epsilon, &grid)?,
    ];
    Ok(VerifyReport {
        pass: checks.iter().all(|c| c.pass),
        seed: cfg.seed,
        checks,
        warnings,
    })
}
