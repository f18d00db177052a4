//! Agent costs, utilities and the stand-alone optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accuracy::{AccuracyModel, InverseSlope};
use crate::error::{invalid, Result};
use crate::roots::bisect;

/// A data generator with a linear cost `c * m` for `m` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    cost: f64,
}

impl Agent {
    pub fn new(cost: f64) -> Result<Self> {
        if !(cost > 0.0 && cost.is_finite()) {
            return Err(invalid("cost", format!("{cost} must be finite and > 0")));
        }
        Ok(Agent { cost })
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn utility(&self, model: &AccuracyModel, m: f64) -> f64 {
        utility(model, self.cost, m)
    }

    pub fn individual_optimum(&self, model: &AccuracyModel) -> f64 {
        individual_optimum(model, self.cost)
    }
}

/// Costs are either low or high; agent `i` is low-cost with probability `p[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTypePrior {
    pub c_low: f64,
    pub c_high: f64,
    pub p: Vec<f64>,
}

impl TwoTypePrior {
    pub fn new(c_low: f64, c_high: f64, p: Vec<f64>) -> Result<Self> {
        Agent::new(c_low)?;
        Agent::new(c_high)?;
        if c_low > c_high {
            return Err(invalid(
                "c_low",
                format!("{c_low} exceeds c_high = {c_high}"),
            ));
        }
        if p.is_empty() {
            return Err(invalid("p", "at least one agent is required"));
        }
        if let Some(bad) = p.iter().find(|q| !(**q >= 0.0 && **q <= 1.0)) {
            return Err(invalid("p", format!("prior {bad} not in [0, 1]")));
        }
        Ok(TwoTypePrior { c_low, c_high, p })
    }

    pub fn uniform(c_low: f64, c_high: f64, p: f64, n: usize) -> Result<Self> {
        Self::new(c_low, c_high, vec![p; n])
    }
}

/// An ordered set of agents; index is the agent id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    agents: Vec<Agent>,
    prior: Option<TwoTypePrior>,
}

impl Population {
    pub fn new(costs: &[f64]) -> Result<Self> {
        if costs.is_empty() {
            return Err(invalid("costs", "population must have at least one agent"));
        }
        let agents = costs
            .iter()
            .map(|&c| Agent::new(c))
            .collect::<Result<_>>()?;
        Ok(Population {
            agents,
            prior: None,
        })
    }

    /// `n` agents sharing the same cost.
    pub fn uniform(cost: f64, n: usize) -> Result<Self> {
        Self::new(&vec![cost; n])
    }

    /// `n` costs drawn log-uniformly from `[low, high]`.
    pub fn log_uniform(low: f64, high: f64, n: usize, seed: u64) -> Result<Self> {
        if !(low > 0.0 && high >= low) {
            return Err(invalid(
                "costs",
                format!("bad log-uniform range [{low}, {high}]"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (low.ln(), high.ln());
        let costs: Vec<f64> = (0..n)
            .map(|_| {
                if b > a {
                    rng.gen_range(a..b).exp()
                } else {
                    low
                }
            })
            .collect();
        Self::new(&costs)
    }

    /// A two-type population with realized types; `is_low[i]` selects `c_low`.
    pub fn with_types(prior: TwoTypePrior, is_low: &[bool]) -> Result<Self> {
        if is_low.len() != prior.p.len() {
            return Err(invalid(
                "p",
                format!(
                    "{} priors for {} realized types",
                    prior.p.len(),
                    is_low.len()
                ),
            ));
        }
        let costs: Vec<f64> = is_low
            .iter()
            .map(|&low| if low { prior.c_low } else { prior.c_high })
            .collect();
        let mut pop = Self::new(&costs)?;
        pop.prior = Some(prior);
        Ok(pop)
    }

    /// Draws each agent's type independently from its prior.
    pub fn sample_types<R: Rng>(prior: TwoTypePrior, rng: &mut R) -> Result<Self> {
        let is_low: Vec<bool> = prior.p.iter().map(|&p| rng.gen::<f64>() < p).collect();
        Self::with_types(prior, &is_low)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn cost(&self, i: usize) -> f64 {
        self.agents[i].cost
    }

    pub fn costs(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.cost).collect()
    }

    pub fn min_cost(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.cost)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn prior(&self) -> Option<&TwoTypePrior> {
        self.prior.as_ref()
    }

    /// True when agent `i` drew the low cost. Ties (`c_low == c_high`) count as low.
    pub fn is_low(&self, i: usize) -> Option<bool> {
        self.prior.as_ref().map(|p| self.agents[i].cost == p.c_low)
    }
}

/// `u(m) = a(m) - c m`.
pub fn utility(model: &AccuracyModel, cost: f64, m: f64) -> f64 {
    model.eval(m) - cost * m
}

/// Data an agent collects on its own.
///
/// The candidate is the stationary point `b'(m) = c`; it is kept only when it
/// yields strictly positive utility, so a zero-utility tie resolves to 0.
pub fn individual_optimum(model: &AccuracyModel, cost: f64) -> f64 {
    match model.inverse_slope(cost) {
        InverseSlope::Finite(m) if utility(model, cost, m) > 0.0 => m,
        _ => 0.0,
    }
}

/// Best stand-alone utility `max(0, u(m*))`.
pub fn individual_utility(model: &AccuracyModel, cost: f64) -> f64 {
    utility(model, cost, individual_optimum(model, cost))
}

/// Largest marginal cost at which collecting data alone is still profitable.
///
/// Found by bisection (in log cost) on the sign of the utility at the
/// stationary point, which is decreasing in the cost.
pub fn viability_threshold(model: &AccuracyModel) -> f64 {
    let surplus = |c: f64| match model.inverse_slope(c) {
        InverseSlope::Finite(m) => utility(model, c, m),
        InverseSlope::Infinite => f64::NEG_INFINITY,
    };
    let m0 = model.min_viable_dataset().max(model.concave_from());
    // At the slope of m0 the stationary point is m0 itself, where a = 0.
    let mut hi = model.db(m0.max(f64::MIN_POSITIVE));
    if !hi.is_finite() {
        hi = 1.0;
    }
    while surplus(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.5 * hi;
    while surplus(lo) <= 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return 0.0;
        }
    }
    bisect(|t| surplus(t.exp()), lo.ln(), hi.ln(), 1e-15, 200).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple() -> AccuracyModel {
        AccuracyModel::simple(0.95, 1.0).unwrap()
    }

    /// Grid maximizer of u over [0, 1/c]; independent of the solver path.
    fn grid_argmax(model: &AccuracyModel, c: f64, points: usize) -> (f64, f64) {
        let hi = 1.0 / c;
        (0..=points)
            .map(|j| hi * j as f64 / points as f64)
            .map(|m| (m, utility(model, c, m)))
            .fold(
                (0.0, 0.0),
                |best, cand| if cand.1 > best.1 { cand } else { best },
            )
    }

    #[test]
    fn utility_examples() {
        let m = simple();
        assert_eq!(utility(&m, 0.01, 0.0), 0.0);
        assert!((utility(&m, 0.01, 100.0) + 0.25).abs() < 1e-14);
        let m_star = 100f64.powf(2.0 / 3.0);
        let expected = 0.95 - 3.0 * 0.01f64.powf(1.0 / 3.0);
        assert!((utility(&m, 0.01, m_star) - expected).abs() < 1e-12);
        assert!((expected - 0.30367).abs() < 1e-5);
    }

    #[test]
    fn individual_optimum_examples() {
        let m = simple();
        let x = individual_optimum(&m, 0.01);
        assert!((x - 10f64.powf(4.0 / 3.0)).abs() / x < 1e-8);

        assert_eq!(individual_optimum(&m, 0.1), 0.0);
        let (_, best) = grid_argmax(&m, 0.1, 10_000);
        assert!(best <= 0.0);
        assert_eq!(individual_optimum(&m, 50.0), 0.0);
    }

    #[test]
    fn individual_optimum_matches_grid() {
        for &c in &[0.002, 0.005, 0.01, 0.02, 0.03] {
            let m = simple();
            let x = individual_optimum(&m, c);
            let (gx, gu) = grid_argmax(&m, c, 200_000);
            assert!(utility(&m, c, x) >= gu - 1e-12, "c = {c}");
            assert!((x - gx).abs() <= 2.0 / (c * 200_000.0) + 1e-9, "c = {c}");
        }
    }

    #[test]
    fn viability_threshold_examples() {
        let c1 = viability_threshold(&simple());
        assert!((c1 - 0.95f64.powi(3) / 27.0).abs() < 1e-12);
        assert!((c1 - 0.031_755).abs() < 1e-6);

        let m8 = AccuracyModel::simple(0.95, 8.0).unwrap();
        let c8 = viability_threshold(&m8);
        assert!((c8 - 0.95f64.powi(3) / 216.0).abs() < 1e-12);

        let tiny = AccuracyModel::simple(1e-6, 1.0).unwrap();
        assert!(viability_threshold(&tiny) < 1e-17);
    }

    #[test]
    fn viability_threshold_separates_optimum_for_other_curves() {
        for model in [
            AccuracyModel::full(0.95, 1.0).unwrap(),
            AccuracyModel::full(0.9, 10.0).unwrap(),
            AccuracyModel::power_law(2.0, 0.5, 0.2).unwrap(),
        ] {
            let c = viability_threshold(&model);
            assert!(individual_optimum(&model, c * 0.999) > 0.0, "{model:?}");
            assert_eq!(individual_optimum(&model, c * 1.001), 0.0, "{model:?}");
        }
    }

    #[test]
    fn population_validation() {
        assert!(Population::new(&[]).is_err());
        assert!(Population::new(&[0.1, 0.0]).is_err());
        assert!(TwoTypePrior::new(0.2, 0.1, vec![0.5]).is_err());
        assert!(TwoTypePrior::new(0.1, 0.2, vec![1.5]).is_err());
        let prior = TwoTypePrior::uniform(0.01, 0.02, 0.5, 3).unwrap();
        let pop = Population::with_types(prior, &[true, false, true]).unwrap();
        assert_eq!(pop.costs(), vec![0.01, 0.02, 0.01]);
        assert_eq!(pop.is_low(1), Some(false));
    }

    #[test]
    fn log_uniform_is_seeded() {
        let a = Population::log_uniform(0.01, 0.1, 5, 42).unwrap();
        let b = Population::log_uniform(0.01, 0.1, 5, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.costs().iter().all(|&c| (0.01..=0.1).contains(&c)));
    }
}
