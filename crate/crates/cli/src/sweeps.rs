//! Individual-optimum, equilibrium and minimum-population sweeps.

use incentive_core::agents::{individual_optimum, individual_utility, viability_threshold};
use incentive_core::equilibrium::{closed_form_equilibrium, min_viability_total};
use incentive_core::oracle::certify_nash;
use incentive_core::{AccuracyModel, Error, MechanismSpec, Population};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Scale, SweepConfig};
use crate::error::CliError;
use crate::table::{to_csv, Cell};

/// Every `CERTIFY_EVERY`-th equilibrium point is checked on the oracle grid.
pub const CERTIFY_EVERY: usize = 10;

/// Largest population the minimum-agents search will consider.
const N_SEARCH_CAP: u64 = 1 << 50;

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRow {
    pub c: f64,
    pub k: Option<f64>,
    pub m_star: f64,
    pub u_star: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumRow {
    pub n: usize,
    pub c: f64,
    pub k: Option<f64>,
    pub total_data: f64,
    pub per_agent: f64,
    pub m_star: f64,
    pub nash_regret: Option<f64>,
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinAgentsRow {
    pub c: f64,
    pub k: Option<f64>,
    pub n_min: u64,
}

fn sweep_default(param: &str, from: f64, to: f64, points: usize, scale: Scale) -> SweepConfig {
    SweepConfig {
        param: Some(param.into()),
        from: Some(from),
        to: Some(to),
        points: Some(points),
        scale: Some(scale),
        ks: None,
    }
}

/// One model per entry of `sweep.ks`, or the configured model alone.
fn models(cfg: &ExperimentConfig) -> Result<Vec<(Option<f64>, AccuracyModel)>, CliError> {
    match &cfg.sweep.ks {
        Some(ks) if !ks.is_empty() => ks
            .iter()
            .map(|&k| Ok((Some(k), cfg.model_with_k(k)?)))
            .collect(),
        Some(_) => Err(CliError::Validation("sweep.ks is empty".into())),
        None => Ok(vec![(cfg.k(), cfg.model()?)]),
    }
}

fn expect_param(param: &str, allowed: &[&str], command: &str) -> Result<(), CliError> {
    if allowed.contains(&param) {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "{command} sweeps {}, not `{param}`",
            allowed.join(" or ")
        )))
    }
}

/// Optimal stand-alone contribution over a log-spaced cost axis.
pub fn individual_sweep(cfg: &ExperimentConfig) -> Result<Vec<IndividualRow>, CliError> {
    let (param, costs) = cfg
        .sweep
        .resolve(&sweep_default("c", 1e-4, 1.0, 41, Scale::Log))?;
    expect_param(&param, &["c"], "individual-sweep")?;
    if costs.iter().any(|&c| !(c > 0.0)) {
        return Err(CliError::Validation("costs must be positive".into()));
    }
    let mut rows = Vec::new();
    for (k, model) in models(cfg)? {
        let cutoff = viability_threshold(&model);
        rows.extend(costs.iter().map(|&c| IndividualRow {
            c,
            k,
            m_star: individual_optimum(&model, c),
            u_star: individual_utility(&model, c),
            cutoff,
        }));
    }
    Ok(rows)
}

pub fn individual_csv(rows: &[IndividualRow]) -> String {
    let body: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            vec![
                r.c.into(),
                r.k.into(),
                r.m_star.into(),
                r.u_star.into(),
                r.cutoff.into(),
            ]
        })
        .collect();
    to_csv(&["c", "k", "m_star", "u_star", "viability_cutoff"], &body)
}

/// Known-cost shaping equilibrium of identical agents along one axis.
pub fn equilibrium_sweep(cfg: &ExperimentConfig) -> Result<Vec<EquilibriumRow>, CliError> {
    let (param, values) = cfg
        .sweep
        .resolve(&sweep_default("n", 1e3, 1e5, 21, Scale::Log))?;
    expect_param(&param, &["n", "c", "k"], "equilibrium-sweep")?;
    let mech = MechanismSpec::ShapingKnown {
        epsilon: cfg.epsilon(),
    };
    let grid = cfg.grid()?;
    let points: Vec<(usize, f64, Option<f64>, AccuracyModel)> = values
        .iter()
        .map(|&v| {
            let (n, c, k) = match param.as_str() {
                "n" => (v.round() as usize, cfg.population.cost, cfg.k()),
                "c" => (cfg.population.n, v, cfg.k()),
                _ => (cfg.population.n, cfg.population.cost, Some(v)),
            };
            let model = match k {
                Some(k) if param == "k" => cfg.model_with_k(k)?,
                _ => cfg.model()?,
            };
            if n == 0 {
                return Err(CliError::Validation(
                    "population size must be positive".into(),
                ));
            }
            mech.validate(&Population::uniform(c, 1)?)?;
            Ok((n, c, k, model))
        })
        .collect::<Result<_, CliError>>()?;
    points
        .par_iter()
        .enumerate()
        .map(|(idx, (n, c, k, model))| {
            equilibrium_point(&mech, model, *n, *c, *k, idx % CERTIFY_EVERY == 0, &grid)
        })
        .collect()
}

fn equilibrium_point(
    mech: &MechanismSpec,
    model: &AccuracyModel,
    n: usize,
    c: f64,
    k: Option<f64>,
    certify: bool,
    grid: &incentive_core::GridSpec,
) -> Result<EquilibriumRow, CliError> {
    let pop = Population::uniform(c, n)?;
    let (profile, status) = match closed_form_equilibrium(mech, model, &pop) {
        Ok(profile) => (Some(profile), "ok"),
        Err(Error::NoConvergence { last, .. }) => (Some(last), "nonconverged"),
        Err(Error::NashCheck { .. }) => (None, "nonconverged"),
        Err(e) => return Err(e.into()),
    };
    let total_data = profile.as_ref().map_or(f64::NAN, |p| p.iter().sum());
    let nash_regret = match &profile {
        Some(p) if certify => Some(certify_nash(mech, model, &pop, p, grid)?),
        _ => None,
    };
    Ok(EquilibriumRow {
        n,
        c,
        k,
        total_data,
        per_agent: total_data / n as f64,
        m_star: individual_optimum(model, c),
        nash_regret,
        status,
    })
}

pub fn equilibrium_csv(rows: &[EquilibriumRow]) -> String {
    let body: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            vec![
                (r.n as u64).into(),
                r.c.into(),
                r.k.into(),
                r.total_data.into(),
                r.per_agent.into(),
                r.m_star.into(),
                r.nash_regret.into(),
                r.status.into(),
            ]
        })
        .collect();
    to_csv(
        &[
            "n",
            "c",
            "k",
            "total_data",
            "per_agent",
            "m_star",
            "nash_regret",
            "status",
        ],
        &body,
    )
}

/// Smallest population whose known-cost shaping equilibrium is positive.
///
/// Identical agents reach a positive equilibrium exactly when the line
/// `(c + eps) m / n` dips below the pooled accuracy somewhere, which is
/// monotone in `n`.
pub fn min_agents(model: &AccuracyModel, cost: f64, epsilon: f64) -> Result<u64, CliError> {
    let viable = |n: u64| min_viability_total(model, cost + epsilon, n as usize) > 0.0;
    let mut hi = 1u64;
    while !viable(hi) {
        if hi >= N_SEARCH_CAP {
            return Err(CliError::Validation(format!(
                "no population up to {N_SEARCH_CAP} makes cost {cost} viable"
            )));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    // Invariant: lo is not viable (or zero), hi is viable.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if viable(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn min_agents_sweep(cfg: &ExperimentConfig) -> Result<Vec<MinAgentsRow>, CliError> {
    let (param, costs) = cfg
        .sweep
        .resolve(&sweep_default("c", 0.05, 0.5, 10, Scale::Linear))?;
    expect_param(&param, &["c"], "min-agents")?;
    let epsilon = cfg.epsilon();
    let mut cells = Vec::new();
    for (k, model) in models(cfg)? {
        for &c in &costs {
            MechanismSpec::ShapingKnown { epsilon }.validate(&Population::uniform(c, 1)?)?;
            cells.push((c, k, model));
        }
    }
    cells
        .par_iter()
        .map(|&(c, k, model)| {
            Ok(MinAgentsRow {
                c,
                k,
                n_min: min_agents(&model, c, epsilon)?,
            })
        })
        .collect()
}

pub fn min_agents_csv(rows: &[MinAgentsRow]) -> String {
    let body: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| vec![r.c.into(), r.k.into(), r.n_min.into()])
        .collect();
    to_csv(&["c", "k", "n_min"], &body)
}
