//! Brute-force checks that share no code with the equilibrium solvers.
//!
//! Everything here evaluates offered accuracies on grids. Nothing calls
//! `best_response` or `closed_form_equilibrium`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::accuracy::AccuracyModel;
use crate::agents::{individual_optimum, Population, TwoTypePrior};
use crate::equilibrium::default_init;
use crate::error::{invalid, Result};
use crate::mechanisms::{
    check_profile, line_meets_pooled, others_total, AllocationRule, MechanismSpec, Offer, Segment,
    TwoTypeBase, CHECK_TOL,
};

/// Largest total-data gain an alternative may show before the check fails.
pub const DATA_MAX_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_agent: usize,
    /// Each pass re-grids a window 10x narrower around the incumbent.
    pub refinement_passes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points_per_agent: 10_000,
            refinement_passes: 2,
        }
    }
}

impl GridSpec {
    pub fn new(points_per_agent: usize, refinement_passes: usize) -> Result<Self> {
        if points_per_agent < 100 {
            return Err(invalid(
                "points_per_agent",
                format!("{points_per_agent} is below the minimum of 100"),
            ));
        }
        Ok(GridSpec {
            points_per_agent,
            refinement_passes,
        })
    }

    /// Grid spacing of the last refinement pass over `[0, upper]`.
    pub fn final_step(&self, upper: f64) -> f64 {
        upper / self.points_per_agent as f64 / 10f64.powi(self.refinement_passes as i32)
    }

    /// Maximizes `f` over `[0, upper]`; ties go to the larger point.
    pub fn maximize<F: Fn(f64) -> f64>(&self, f: F, upper: f64) -> (f64, f64) {
        let n = self.points_per_agent;
        let (mut lo, mut hi) = (0.0, upper);
        let mut best = (0.0, f(0.0));
        for _ in 0..=self.refinement_passes {
            let h = (hi - lo) / n as f64;
            for j in 0..=n {
                let x = lo + h * j as f64;
                let u = f(x);
                if u > best.1 || (u == best.1 && x > best.0) {
                    best = (x, u);
                }
            }
            let width = (hi - lo) / 10.0;
            hi = (best.0 + 0.5 * width).min(upper);
            lo = (hi - width).max(0.0);
            hi = (lo + width).min(upper);
        }
        best
    }
}

fn offer_utility(offer: &Offer, cost: f64, x: f64) -> f64 {
    offer.accuracy(x) - cost * x
}

/// Best grid contribution for agent `i` with the others held fixed.
pub fn grid_best_response<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    i: usize,
    profile: &[f64],
    grid: &GridSpec,
) -> Result<f64> {
    check_profile(pop, profile)?;
    let total: f64 = profile.iter().sum();
    let offer = rule.offer(model, pop, i, others_total(profile, total, i))?;
    let cost = pop.cost(i);
    Ok(grid
        .maximize(|x| offer_utility(&offer, cost, x), 1.0 / cost)
        .0)
}

/// Largest utility gain any agent finds on the grid by deviating alone.
///
/// Agents with the same cost, prior and contribution face the same problem,
/// so each such group is checked once.
pub fn certify_nash<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    profile: &[f64],
    grid: &GridSpec,
) -> Result<f64> {
    check_profile(pop, profile)?;
    let total: f64 = profile.iter().sum();
    let mut seen: HashMap<(u64, u64, u64), ()> = HashMap::new();
    let mut regret: f64 = 0.0;
    for i in 0..pop.len() {
        let p = pop.prior().map_or(0, |pr| pr.p[i].to_bits());
        if seen
            .insert((pop.cost(i).to_bits(), profile[i].to_bits(), p), ())
            .is_some()
        {
            continue;
        }
        let offer = rule.offer(model, pop, i, others_total(profile, total, i))?;
        let cost = pop.cost(i);
        let (_, best) = grid.maximize(|x| offer_utility(&offer, cost, x), 1.0 / cost);
        regret = regret.max(best - offer_utility(&offer, cost, profile[i]));
    }
    Ok(regret.max(0.0))
}

/// Damped synchronous iteration of grid best responses.
///
/// Returns the last profile and whether it settled to within two final
/// grid steps per agent.
pub fn grid_equilibrium<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    grid: &GridSpec,
    max_iter: usize,
) -> Result<(Vec<f64>, bool)> {
    let mut m = default_init(model, pop);
    for _ in 0..max_iter {
        let next = (0..pop.len())
            .map(|i| grid_best_response(rule, model, pop, i, &m, grid))
            .collect::<Result<Vec<f64>>>()?;
        let settled = next
            .iter()
            .zip(&m)
            .enumerate()
            .all(|(i, (a, b))| (a - b).abs() <= 2.0 * grid.final_step(1.0 / pop.cost(i)));
        if settled {
            return Ok((next, true));
        }
        for (x, t) in m.iter_mut().zip(&next) {
            *x += 0.5 * (t - *x);
        }
    }
    Ok((m, false))
}

/// Known-cost shaping with a moved threshold and a rescaled line slope.
///
/// The own-data piece ends at `t = max(0, m* (1 + shift_rel) + shift_abs)`;
/// from there a line of slope `(c + eps) slope_scale` runs until it meets
/// the pooled accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedShaping {
    pub epsilon: f64,
    pub shift_rel: f64,
    pub shift_abs: f64,
    pub slope_scale: f64,
}

impl AllocationRule for PerturbedShaping {
    fn offer(
        &self,
        model: &AccuracyModel,
        pop: &Population,
        agent: usize,
        others: f64,
    ) -> Result<Offer> {
        let cost = pop.cost(agent);
        let m_star = individual_optimum(model, cost);
        let start = (m_star * (1.0 + self.shift_rel) + self.shift_abs).max(0.0);
        let value = model.eval(start);
        let slope = (cost + self.epsilon) * self.slope_scale;
        let end = line_meets_pooled(model, start, value, slope, others);
        Ok(Offer::new(
            *model,
            others,
            vec![
                (start, Segment::Own { scale: 1.0 }),
                (
                    end,
                    Segment::Line {
                        start,
                        value,
                        slope,
                    },
                ),
                (f64::INFINITY, Segment::Pooled { shift: 0.0 }),
            ],
        ))
    }

    fn label(&self) -> String {
        format!(
            "perturbed(shift={}m*{:+}, slope x{})",
            1.0 + self.shift_rel,
            self.shift_abs,
            self.slope_scale
        )
    }
}

/// Two-type shaping with `m_down` pinned at a fraction of the way from the
/// high-cost to the low-cost saturation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinnedDownShaping {
    pub epsilon: f64,
    pub fraction: f64,
}

impl AllocationRule for PinnedDownShaping {
    fn offer(
        &self,
        model: &AccuracyModel,
        pop: &Population,
        _agent: usize,
        others: f64,
    ) -> Result<Offer> {
        let prior = pop.prior().ok_or(crate::error::Error::MissingTypePrior)?;
        let (cl, ch) = (prior.c_low, prior.c_high);
        let base = TwoTypeBase::new(model, cl, ch, self.epsilon, others);
        let m_down = base.m_max_high + self.fraction * (base.m_max_low - base.m_max_high);
        Ok(base
            .with_m_down(model, cl, ch, self.epsilon, m_down)
            .offer(model, cl, ch, self.epsilon))
    }

    fn label(&self) -> String {
        format!("pinned-down({})", self.fraction)
    }
}

/// Worst feasibility and IR violations of a rule's offers at a profile,
/// scanned over each agent's grid of own contributions.
pub fn scan_constraints<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    profile: &[f64],
    points: usize,
) -> Result<(f64, f64)> {
    check_profile(pop, profile)?;
    let total: f64 = profile.iter().sum();
    let (mut feas, mut ir) = (0.0f64, 0.0f64);
    for i in 0..pop.len() {
        let others = others_total(profile, total, i);
        let offer = rule.offer(model, pop, i, others)?;
        let upper = 1.0 / pop.cost(i);
        for j in 0..=points {
            let x = upper * j as f64 / points as f64;
            let a = offer.accuracy(x);
            feas = feas.max(a - model.eval(x + others));
            ir = ir.max(model.eval(x) - a);
        }
    }
    Ok((feas, ir))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternativeOutcome {
    pub label: String,
    pub feasible: bool,
    pub ir: bool,
    pub converged: bool,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMaxReport {
    pub reference: String,
    pub reference_total: f64,
    pub alternatives: Vec<AlternativeOutcome>,
    /// Largest `alternative - reference` over admissible alternatives.
    pub margin: f64,
    pub pass: bool,
}

/// Threshold shifts and slope scales of the perturbation family.
pub fn perturbation_family(epsilon: f64) -> Vec<PerturbedShaping> {
    let shifts = [
        (-0.5, 0.0),
        (0.0, -1.0),
        (0.0, 0.0),
        (0.0, 1.0),
        (0.25, 0.0),
    ];
    let scales = [1.0, 1.05, 1.2, 1.5];
    let mut family = Vec::new();
    for &(shift_rel, shift_abs) in &shifts {
        for &slope_scale in &scales {
            if shift_rel == 0.0 && shift_abs == 0.0 && slope_scale == 1.0 {
                continue;
            }
            family.push(PerturbedShaping {
                epsilon,
                shift_rel,
                shift_abs,
                slope_scale,
            });
        }
    }
    family
}

fn outcome<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    grid: &GridSpec,
) -> Result<(AlternativeOutcome, Vec<f64>)> {
    let (profile, converged) = grid_equilibrium(rule, model, pop, grid, 500)?;
    let (feas, ir) = scan_constraints(rule, model, pop, &profile, 2_000)?;
    Ok((
        AlternativeOutcome {
            label: rule.label(),
            feasible: feas <= CHECK_TOL,
            ir: ir <= CHECK_TOL,
            converged,
            total: profile.iter().sum(),
        },
        profile,
    ))
}

fn summarize(
    reference: AlternativeOutcome,
    alternatives: Vec<AlternativeOutcome>,
) -> DataMaxReport {
    let margin = alternatives
        .iter()
        .filter(|a| a.feasible && a.ir && a.converged)
        .map(|a| a.total - reference.total)
        .fold(f64::NEG_INFINITY, f64::max);
    DataMaxReport {
        reference: reference.label,
        reference_total: reference.total,
        pass: reference.converged && !(margin > DATA_MAX_TOL),
        margin,
        alternatives,
    }
}

/// Compares the known-cost shaping equilibrium total against standard
/// federated learning and the first `n_alternatives` perturbed variants.
pub fn spot_check_data_max(
    model: &AccuracyModel,
    pop: &Population,
    epsilon: f64,
    n_alternatives: usize,
    grid: &GridSpec,
) -> Result<DataMaxReport> {
    let shaping = MechanismSpec::ShapingKnown { epsilon };
    let (reference, _) = outcome(&shaping, model, pop, grid)?;
    let mut alternatives = vec![outcome(&MechanismSpec::StandardFederated, model, pop, grid)?.0];
    for rule in perturbation_family(epsilon)
        .into_iter()
        .take(n_alternatives)
    {
        alternatives.push(outcome(&rule, model, pop, grid)?.0);
    }
    Ok(summarize(reference, alternatives))
}

/// Expected equilibrium total over every type realization, weighted exactly.
fn expected_total<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    prior: &TwoTypePrior,
    grid: &GridSpec,
) -> Result<AlternativeOutcome> {
    let n = prior.p.len();
    let mut acc = AlternativeOutcome {
        label: rule.label(),
        feasible: true,
        ir: true,
        converged: true,
        total: 0.0,
    };
    for mask in 0u32..(1 << n) {
        let is_low: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let weight: f64 = prior
            .p
            .iter()
            .zip(&is_low)
            .map(|(&p, &low)| if low { p } else { 1.0 - p })
            .product();
        if weight == 0.0 {
            continue;
        }
        let pop = Population::with_types(prior.clone(), &is_low)?;
        let (o, _) = outcome(rule, model, &pop, grid)?;
        acc.feasible &= o.feasible;
        acc.ir &= o.ir;
        acc.converged &= o.converged;
        acc.total += weight * o.total;
    }
    Ok(acc)
}

/// Compares the two-type shaping expected total against the same schedule
/// with `m_down` pinned at each of `fractions`.
pub fn spot_check_two_type(
    model: &AccuracyModel,
    prior: &TwoTypePrior,
    epsilon: f64,
    fractions: &[f64],
    grid: &GridSpec,
) -> Result<DataMaxReport> {
    if prior.p.len() > 10 {
        return Err(invalid("p", "type enumeration is limited to 10 agents"));
    }
    let reference = expected_total(
        &MechanismSpec::ShapingTwoType { epsilon },
        model,
        prior,
        grid,
    )?;
    let alternatives = fractions
        .iter()
        .map(|&fraction| {
            expected_total(&PinnedDownShaping { epsilon, fraction }, model, prior, grid)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(reference, alternatives))
}
