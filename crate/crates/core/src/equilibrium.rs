//! Nash equilibria in data contributions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::accuracy::{AccuracyModel, InverseSlope};
use crate::agents::{individual_optimum, Population};
use crate::error::{Error, Result};
use crate::mechanisms::{
    allocate, check_profile, others_total, solve_two_type_schedule, AllocationRule, MechanismSpec,
    Offer, ShapingScheduleKnown,
};
use crate::oracle::{certify_nash, GridSpec};
use crate::roots::bisect;

/// Sup-norm change below which a profile counts as a fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 10_000;
pub const DAMPING: f64 = 0.5;
/// Largest utility gain the closed-form self-check tolerates.
pub const SELF_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub profile: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub utilities: Vec<f64>,
    pub nash_regret: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EquilibriumResult {
    /// Evaluates a profile under a rule and certifies it on the oracle grid.
    pub fn evaluate<R: AllocationRule + ?Sized>(
        rule: &R,
        model: &AccuracyModel,
        pop: &Population,
        profile: Vec<f64>,
        iterations: usize,
        converged: bool,
        grid: &GridSpec,
    ) -> Result<Self> {
        let accuracies = allocate(rule, model, pop, &profile)?;
        let utilities = accuracies
            .iter()
            .zip(&profile)
            .enumerate()
            .map(|(i, (a, m))| a - pop.cost(i) * m)
            .collect();
        let nash_regret = certify_nash(rule, model, pop, &profile, grid)?;
        Ok(EquilibriumResult {
            profile,
            accuracies,
            utilities,
            nash_regret,
            iterations,
            converged,
        })
    }

    pub fn total(&self) -> f64 {
        self.profile.iter().sum()
    }
}

/// Maximizer of `offer(x) - c x` over `[0, 1/c]`, ties toward larger `x`.
///
/// Between consecutive breakpoints the offered utility is concave, so its
/// maximizer there is where the right derivative changes sign.
pub fn maximize_offer(offer: &Offer, cost: f64) -> (f64, f64) {
    let upper = 1.0 / cost;
    let utility = |x: f64| offer.accuracy(x) - cost * x;
    let mut points: Vec<f64> = offer
        .breakpoints()
        .into_iter()
        .filter(|&p| p < upper)
        .collect();
    points.push(upper);

    let mut candidates = points.clone();
    for w in points.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if offer.slope(mid) - cost > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        candidates.push(lo);
    }

    let mut best = (0.0, utility(0.0));
    for x in candidates {
        let u = utility(x);
        if u > best.1 || (u == best.1 && x > best.0) {
            best = (x, u);
        }
    }
    best
}

fn response<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    i: usize,
    others: f64,
) -> Result<(f64, f64)> {
    let offer = rule.offer(model, pop, i, others)?;
    Ok(maximize_offer(&offer, pop.cost(i)))
}

/// Utility-maximizing contribution of agent `i` with the others held fixed.
pub fn best_response<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    i: usize,
    profile: &[f64],
) -> Result<f64> {
    check_profile(pop, profile)?;
    let total: f64 = profile.iter().sum();
    Ok(response(rule, model, pop, i, others_total(profile, total, i))?.0)
}

/// Jacobi iterations allowed without halving the change before switching.
pub const STALL_WINDOW: usize = 200;

/// Best-response iteration from `init`.
///
/// Runs damped synchronous (Jacobi) updates. If the sup-norm change has not
/// halved within [`STALL_WINDOW`] iterations, the remaining budget is spent
/// on sequential (Gauss-Seidel) sweeps, which settle the free-riding cycles
/// that synchronous updates fall into once several agents are active. Stops
/// once no agent's best response differs from its contribution by `tol`.
pub fn best_response_dynamics<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult> {
    check_profile(pop, init)?;
    let mut m: Vec<f64> = init
        .iter()
        .enumerate()
        .map(|(i, x)| x.min(1.0 / pop.cost(i)))
        .collect();
    let mut converged = false;
    let mut iterations = 0;
    let (mut benchmark, mut since) = (f64::INFINITY, 0);
    let mut sequential = false;
    while iterations < max_iter {
        iterations += 1;
        let change = if sequential {
            gauss_seidel_sweep(rule, model, pop, &mut m)?
        } else {
            jacobi_step(rule, model, pop, &mut m, tol)?
        };
        if change < tol {
            converged = true;
            break;
        }
        if change < 0.5 * benchmark {
            (benchmark, since) = (change, 0);
        } else {
            since += 1;
            sequential |= since >= STALL_WINDOW;
        }
    }
    EquilibriumResult::evaluate(
        rule,
        model,
        pop,
        m,
        iterations,
        converged,
        &GridSpec::default(),
    )
}

/// One damped synchronous update; returns the largest best-response gap.
/// The profile is left untouched when that gap is already below `tol`.
fn jacobi_step<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    m: &mut [f64],
    tol: f64,
) -> Result<f64> {
    let total: f64 = m.iter().sum();
    let br = (0..m.len())
        .map(|i| Ok(response(rule, model, pop, i, others_total(m, total, i))?.0))
        .collect::<Result<Vec<f64>>>()?;
    let change = br
        .iter()
        .zip(m.iter())
        .map(|(b, x)| (b - x).abs())
        .fold(0.0, f64::max);
    if change >= tol {
        for (x, b) in m.iter_mut().zip(&br) {
            *x += DAMPING * (b - *x);
        }
    }
    Ok(change)
}

/// Agents respond in index order, each seeing the updates before it.
fn gauss_seidel_sweep<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    m: &mut [f64],
) -> Result<f64> {
    let mut change: f64 = 0.0;
    let mut total: f64 = m.iter().sum();
    for (i, mi) in m.iter_mut().enumerate() {
        let others = (total - *mi).max(0.0);
        let br = response(rule, model, pop, i, others)?.0;
        change = change.max((br - *mi).abs());
        total = others + br;
        *mi = br;
    }
    Ok(change)
}

/// Largest positive root of `(c/n) m = a(m)`, or 0 when the line stays above.
pub fn min_viability_total(model: &AccuracyModel, cost: f64, n: usize) -> f64 {
    let share = cost / n as f64;
    let surplus = |m: f64| model.eval(m) - share * m;
    let m0 = model.min_viable_dataset().max(model.concave_from());
    let peak = match model.inverse_slope(share) {
        InverseSlope::Finite(m) => m.max(m0),
        InverseSlope::Infinite => return 0.0,
    };
    if !(surplus(peak) > 0.0) {
        return 0.0;
    }
    let mut hi = 2.0 * peak.max(1.0);
    while surplus(hi) > 0.0 {
        hi *= 2.0;
    }
    bisect(surplus, peak, hi, 1e-15, 400)
}

/// Individual optima, or an even split of the minimum-viability total when
/// nobody would collect data alone.
pub fn default_init(model: &AccuracyModel, pop: &Population) -> Vec<f64> {
    let optima: Vec<f64> = pop
        .costs()
        .iter()
        .map(|&c| individual_optimum(model, c))
        .collect();
    if optima.iter().any(|&m| m > 0.0) {
        return optima;
    }
    let n = pop.len();
    let mean_cost = pop.costs().iter().sum::<f64>() / n as f64;
    vec![min_viability_total(model, mean_cost, n) / n as f64; n]
}

/// Agents sharing a cost and prior behave identically; returns one
/// representative per group and each agent's group.
fn group_agents(pop: &Population) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut reps = Vec::new();
    let mut counts = Vec::new();
    let mut group_of = Vec::with_capacity(pop.len());
    for i in 0..pop.len() {
        let p = pop.prior().map_or(0, |pr| pr.p[i].to_bits());
        let key = (pop.cost(i).to_bits(), p);
        let g = *index.entry(key).or_insert_with(|| {
            reps.push(i);
            counts.push(0.0);
            reps.len() - 1
        });
        counts[g] += 1.0;
        group_of.push(g);
    }
    (reps, group_of, counts)
}

/// Equilibrium predicted by the analysis of each mechanism.
///
/// Standard federated learning: the cheapest agent (lowest index on ties)
/// collects its individual optimum and everyone else free-rides. Shaping:
/// the joint fixed point of every agent's schedule target given the others'
/// total, found by damped iteration from [`default_init`]. The result is
/// checked against [`best_response`] before it is returned.
pub fn closed_form_equilibrium(
    mech: &MechanismSpec,
    model: &AccuracyModel,
    pop: &Population,
) -> Result<Vec<f64>> {
    mech.validate(pop)?;
    let profile = match *mech {
        MechanismSpec::StandardFederated => {
            let cheapest = (0..pop.len())
                .min_by(|&a, &b| pop.cost(a).total_cmp(&pop.cost(b)))
                .unwrap_or(0);
            let mut profile = vec![0.0; pop.len()];
            profile[cheapest] = individual_optimum(model, pop.cost(cheapest));
            profile
        }
        MechanismSpec::ShapingKnown { epsilon } => fixed_point(model, pop, |i, others| {
            Ok(ShapingScheduleKnown::new(model, pop.cost(i), epsilon, others).m_max)
        })?,
        MechanismSpec::ShapingTwoType { epsilon } => {
            let prior = pop.prior().ok_or(Error::MissingTypePrior)?;
            fixed_point(model, pop, |i, others| {
                let schedule = solve_two_type_schedule(
                    model,
                    prior.c_low,
                    prior.c_high,
                    prior.p[i],
                    epsilon,
                    others,
                );
                Ok(schedule.target(pop.is_low(i).unwrap_or(false)))
            })?
        }
    };
    self_check(mech, model, pop, &profile)?;
    Ok(profile)
}

fn fixed_point<F>(model: &AccuracyModel, pop: &Population, target: F) -> Result<Vec<f64>>
where
    F: Fn(usize, f64) -> Result<f64>,
{
    let (reps, group_of, counts) = group_agents(pop);
    let init = default_init(model, pop);
    let mut x: Vec<f64> = reps.iter().map(|&i| init[i]).collect();
    let expand = |x: &[f64]| group_of.iter().map(|&g| x[g]).collect::<Vec<f64>>();
    let mut change = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let total: f64 = x.iter().zip(&counts).map(|(v, n)| v * n).sum();
        let next = reps
            .iter()
            .zip(&x)
            .map(|(&i, &v)| target(i, (total - v).max(0.0)))
            .collect::<Result<Vec<f64>>>()?;
        change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < FIXED_POINT_TOL {
            return Ok(expand(&next));
        }
        for (v, t) in x.iter_mut().zip(&next) {
            *v += DAMPING * (t - *v);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        last_change: change,
        last: expand(&x),
    })
}

/// Fails when some agent could gain more than [`SELF_CHECK_TOL`] by deviating.
fn self_check(
    mech: &MechanismSpec,
    model: &AccuracyModel,
    pop: &Population,
    profile: &[f64],
) -> Result<()> {
    let (reps, _, _) = group_agents(pop);
    let total: f64 = profile.iter().sum();
    for i in reps {
        let offer = mech.offer(model, pop, i, others_total(profile, total, i))?;
        let cost = pop.cost(i);
        let (br, best) = maximize_offer(&offer, cost);
        let current = offer.accuracy(profile[i]) - cost * profile[i];
        if best - current > SELF_CHECK_TOL {
            return Err(Error::NashCheck {
                agent: i,
                contribution: profile[i],
                best_response: br,
            });
        }
    }
    Ok(())
}

/// [`closed_form_equilibrium`] packaged with accuracies, utilities and a
/// grid-certified regret.
pub fn solve(
    mech: &MechanismSpec,
    model: &AccuracyModel,
    pop: &Population,
    grid: &GridSpec,
) -> Result<EquilibriumResult> {
    let profile = closed_form_equilibrium(mech, model, pop)?;
    EquilibriumResult::evaluate(mech, model, pop, profile, 0, true, grid)
}
