//! Two-type screening equilibrium under sampled cost types.

use incentive_core::agents::{individual_optimum, individual_utility};
use incentive_core::equilibrium::closed_form_equilibrium;
use incentive_core::mechanisms::{allocate, solve_two_type_schedule, ShapingScheduleTwoType};
use incentive_core::{Error, MechanismSpec, Population};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Absolute slack on the high-cost utility comparison, on top of `eps m`.
pub const UTILITY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct TypeSummary {
    /// Agent-draw observations of this type.
    pub observations: usize,
    pub individual_optimum: f64,
    pub individual_utility: f64,
    pub mean_contribution: f64,
    pub mean_utility: f64,
    /// Mean of `u_eq - u*` (the information rent for low-cost agents).
    pub mean_rent: f64,
    pub min_rent: f64,
    pub max_rent: f64,
    /// Largest `|u_eq - u*| - eps m_eq`; non-positive means within slack.
    pub worst_slack_excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleSummary {
    pub others: f64,
    pub m_star_high: f64,
    pub m_star_low: f64,
    pub m_up: f64,
    pub m_down: f64,
    pub m_max_high: f64,
    pub m_max_low: f64,
    /// Weight on `m_star_high` when `m_up` interpolates the two optima.
    pub gamma: Option<f64>,
    pub m_up_between_optima: bool,
    pub m_down_saturated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoTypeReport {
    pub c_low: f64,
    pub c_high: f64,
    pub p: f64,
    pub n: usize,
    pub epsilon: f64,
    pub draws: usize,
    pub seed: u64,
    pub nonconverged_draws: usize,
    pub expected_total: f64,
    pub total_std_error: f64,
    /// Same draws under known-cost shaping, for the price of not knowing costs.
    pub known_cost_expected_total: f64,
    pub high: TypeSummary,
    pub low: TypeSummary,
    /// The schedule an agent faces when the others supply their expected share.
    pub schedule: ScheduleSummary,
    pub high_within_slack: bool,
    pub low_rent_nonnegative: bool,
    pub warnings: Vec<String>,
}

struct Draw {
    profile: Vec<f64>,
    utilities: Vec<f64>,
    is_low: Vec<bool>,
    known_total: f64,
    converged: bool,
}

fn run_draw(
    mech: &MechanismSpec,
    model: &incentive_core::AccuracyModel,
    pop: &Population,
    epsilon: f64,
) -> Result<Draw, CliError> {
    let (profile, converged) = match closed_form_equilibrium(mech, model, pop) {
        Ok(p) => (p, true),
        Err(Error::NoConvergence { last, .. }) => (last, false),
        Err(Error::NashCheck { .. }) => (vec![f64::NAN; pop.len()], false),
        Err(e) => return Err(e.into()),
    };
    let utilities = if converged {
        allocate(mech, model, pop, &profile)?
            .iter()
            .zip(&profile)
            .enumerate()
            .map(|(i, (a, m))| a - pop.cost(i) * m)
            .collect()
    } else {
        vec![f64::NAN; pop.len()]
    };
    let known = MechanismSpec::ShapingKnown { epsilon };
    let known_total = closed_form_equilibrium(&known, model, pop)
        .map(|p| p.iter().sum())
        .unwrap_or(f64::NAN);
    Ok(Draw {
        profile,
        utilities,
        is_low: (0..pop.len())
            .map(|i| pop.is_low(i).unwrap_or(false))
            .collect(),
        known_total,
        converged,
    })
}

fn summarize(draws: &[Draw], low: bool, m_star: f64, u_star: f64, epsilon: f64) -> TypeSummary {
    let mut s = TypeSummary {
        observations: 0,
        individual_optimum: m_star,
        individual_utility: u_star,
        mean_contribution: 0.0,
        mean_utility: 0.0,
        mean_rent: 0.0,
        min_rent: f64::INFINITY,
        max_rent: f64::NEG_INFINITY,
        worst_slack_excess: f64::NEG_INFINITY,
    };
    for d in draws.iter().filter(|d| d.converged) {
        for i in (0..d.profile.len()).filter(|&i| d.is_low[i] == low) {
            let rent = d.utilities[i] - u_star;
            s.observations += 1;
            s.mean_contribution += d.profile[i];
            s.mean_utility += d.utilities[i];
            s.mean_rent += rent;
            s.min_rent = s.min_rent.min(rent);
            s.max_rent = s.max_rent.max(rent);
            s.worst_slack_excess = s
                .worst_slack_excess
                .max(rent.abs() - epsilon * d.profile[i]);
        }
    }
    if s.observations > 0 {
        let k = s.observations as f64;
        s.mean_contribution /= k;
        s.mean_utility /= k;
        s.mean_rent /= k;
    }
    s
}

fn schedule_summary(s: &ShapingScheduleTwoType) -> ScheduleSummary {
    let spread = s.m_star_low - s.m_star_high;
    let tol = 1e-9 * (1.0 + s.m_star_low);
    let between = s.m_star_high - tol <= s.m_up && s.m_up <= s.m_star_low + tol;
    ScheduleSummary {
        others: s.others,
        m_star_high: s.m_star_high,
        m_star_low: s.m_star_low,
        m_up: s.m_up,
        m_down: s.m_down,
        m_max_high: s.m_max_high,
        m_max_low: s.m_max_low,
        gamma: (between && spread > 0.0)
            .then(|| ((s.m_star_low - s.m_up) / spread).clamp(0.0, 1.0)),
        m_up_between_optima: between,
        m_down_saturated: s.m_down == s.m_max_low,
    }
}

/// Monte Carlo over type realizations drawn from the configured prior.
pub fn two_type_report(cfg: &ExperimentConfig) -> Result<TwoTypeReport, CliError> {
    let model = cfg.model()?;
    let prior = cfg.prior()?;
    let t = &cfg.two_type;
    if t.draws == 0 {
        return Err(CliError::Validation(
            "two_type.draws must be positive".into(),
        ));
    }
    let epsilon = cfg.epsilon();
    let mech = MechanismSpec::ShapingTwoType { epsilon };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pops = (0..t.draws)
        .map(|_| Population::sample_types(prior.clone(), &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let warnings = mech.validate(&pops[0])?;
    let draws = pops
        .par_iter()
        .map(|pop| run_draw(&mech, &model, pop, epsilon))
        .collect::<Result<Vec<_>, CliError>>()?;

    let ok: Vec<&Draw> = draws.iter().filter(|d| d.converged).collect();
    let totals: Vec<f64> = ok.iter().map(|d| d.profile.iter().sum()).collect();
    let count = totals.len().max(1) as f64;
    let mean = totals.iter().sum::<f64>() / count;
    let var = totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
    let known = ok.iter().map(|d| d.known_total).sum::<f64>() / count;

    let (ch, cl) = (t.c_high, t.c_low);
    let high = summarize(
        &draws,
        false,
        individual_optimum(&model, ch),
        individual_utility(&model, ch),
        epsilon,
    );
    let low = summarize(
        &draws,
        true,
        individual_optimum(&model, cl),
        individual_utility(&model, cl),
        epsilon,
    );
    let others = mean * (t.n as f64 - 1.0) / t.n as f64;
    let schedule = solve_two_type_schedule(&model, cl, ch, t.p, epsilon, others);

    Ok(TwoTypeReport {
        c_low: cl,
        c_high: ch,
        p: t.p,
        n: t.n,
        epsilon,
        draws: t.draws,
        seed: cfg.seed,
        nonconverged_draws: draws.len() - ok.len(),
        expected_total: mean,
        total_std_error: (var / count).sqrt(),
        known_cost_expected_total: known,
        high_within_slack: high.worst_slack_excess <= UTILITY_SLACK,
        low_rent_nonnegative: low.observations == 0 || low.min_rent >= -UTILITY_SLACK,
        high,
        low,
        schedule: schedule_summary(&schedule),
        warnings,
    })
}
