//! Allocation rules mapping contribution profiles to per-agent accuracies.
//!
//! Every rule here depends on the profile only through an agent's own
//! contribution and the total contributed by the others, so a rule is
//! described by the [`Offer`] it makes to agent `i` once the others' total is
//! fixed: a piecewise curve in the agent's own contribution.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::accuracy::{AccuracyModel, InverseSlope};
use crate::agents::{individual_optimum, Population};
use crate::error::{invalid, Error, Result};
use crate::roots::bisect;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Slack used by the feasibility and IR checkers.
pub const CHECK_TOL: f64 = 1e-9;

const CROSSING_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MechanismSpec {
    /// Everyone receives the model trained on the pooled data.
    #[serde(rename = "standard")]
    StandardFederated,
    /// Accuracy shaping when each agent's cost is known.
    #[serde(rename = "shaping")]
    ShapingKnown { epsilon: f64 },
    /// Accuracy shaping for low/high cost types with a prior.
    #[serde(rename = "shaping2t")]
    ShapingTwoType { epsilon: f64 },
}

impl MechanismSpec {
    pub fn shaping() -> Self {
        MechanismSpec::ShapingKnown {
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn shaping_two_type() -> Self {
        MechanismSpec::ShapingTwoType {
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            MechanismSpec::StandardFederated => None,
            MechanismSpec::ShapingKnown { epsilon } | MechanismSpec::ShapingTwoType { epsilon } => {
                Some(epsilon)
            }
        }
    }

    /// Checks the parameters against a population; returns soft warnings.
    pub fn validate(&self, pop: &Population) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if let Some(eps) = self.epsilon() {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(invalid("epsilon", format!("{eps} must be > 0")));
            }
            if eps > 0.01 * pop.min_cost() {
                warnings.push(format!(
                    "epsilon = {eps} is large relative to the smallest cost {}",
                    pop.min_cost()
                ));
            }
        }
        if let MechanismSpec::ShapingTwoType { epsilon } = *self {
            let prior = pop.prior().ok_or(Error::MissingTypePrior)?;
            if prior.p.len() != pop.len() {
                return Err(invalid("p", "one prior per agent is required"));
            }
            let spread = prior.c_high - prior.c_low;
            if spread > 0.0 && epsilon >= spread {
                warnings.push(format!(
                    "epsilon = {epsilon} is not below c_high - c_low = {spread}; high-cost agents will mimic low-cost ones"
                ));
            }
        }
        Ok(warnings)
    }
}

/// One piece of an offered accuracy curve, as a function of own data `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    /// `scale * a(x)`: accuracy from the agent's own data.
    Own { scale: f64 },
    /// `value + slope (x - start)` held between the agent's own accuracy
    /// `a(x)` and the pooled accuracy `a(x + others)`.
    Line { start: f64, value: f64, slope: f64 },
    /// `a(x + others) + shift`: the pooled model.
    Pooled { shift: f64 },
}

/// The accuracy curve offered to a single agent, others' total held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Offer {
    model: AccuracyModel,
    others: f64,
    /// `ends[j]` is the right end of segment `j`; the last is infinite.
    ends: Vec<f64>,
    segments: Vec<Segment>,
}

impl Offer {
    /// Builds an offer from `(right end, segment)` pairs in increasing order.
    pub fn new(model: AccuracyModel, others: f64, pieces: Vec<(f64, Segment)>) -> Self {
        let (mut ends, segments): (Vec<f64>, Vec<Segment>) = pieces.into_iter().unzip();
        if let Some(last) = ends.last_mut() {
            *last = f64::INFINITY;
        }
        Offer {
            model,
            others,
            ends,
            segments,
        }
    }

    pub fn pooled(model: AccuracyModel, others: f64) -> Self {
        Self::new(
            model,
            others,
            vec![(f64::INFINITY, Segment::Pooled { shift: 0.0 })],
        )
    }

    pub fn others(&self) -> f64 {
        self.others
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn piece_index(&self, own: f64) -> usize {
        self.ends
            .iter()
            .position(|&end| own <= end)
            .unwrap_or(self.segments.len() - 1)
    }

    pub fn accuracy(&self, own: f64) -> f64 {
        let pooled = self.model.eval(own + self.others);
        let value = match self.segments[self.piece_index(own)] {
            Segment::Own { scale } => scale * self.model.eval(own),
            Segment::Line {
                start,
                value,
                slope,
            } => (value + slope * (own - start))
                .max(self.model.eval(own))
                .min(pooled),
            Segment::Pooled { shift } => pooled + shift,
        };
        value.clamp(0.0, 1.0)
    }

    /// Right derivative of [`Offer::accuracy`] in the agent's own contribution.
    pub fn slope(&self, own: f64) -> f64 {
        let x = own + self.others;
        let pooled = (self.model.eval(x), self.model.eval_slope(x));
        let (value, slope) = match self.segments[self.piece_index(own)] {
            Segment::Own { scale } => (
                scale * self.model.eval(own),
                scale * self.model.eval_slope(own),
            ),
            Segment::Line {
                start,
                value,
                slope,
            } => {
                let line = value + slope * (own - start);
                let alone = self.model.eval(own);
                if line >= pooled.0 {
                    pooled
                } else if line < alone {
                    (alone, self.model.eval_slope(own))
                } else {
                    (line, slope)
                }
            }
            Segment::Pooled { shift } => (pooled.0 + shift, pooled.1),
        };
        if value < 0.0 || (value >= 1.0 && slope > 0.0) {
            0.0
        } else {
            slope
        }
    }

    /// Points in `[0, inf)` between which the offered utility is concave:
    /// segment ends, the points where `a` leaves zero, and the points where
    /// a line crosses the own-data curve.
    pub fn breakpoints(&self) -> Vec<f64> {
        let m0 = self.model.min_viable_dataset();
        let mut points = vec![0.0];
        points.extend(self.ends.iter().copied().filter(|e| e.is_finite()));
        let mut lo = 0.0;
        for (seg, &hi) in self.segments.iter().zip(&self.ends) {
            match *seg {
                Segment::Own { .. } => points.push(m0),
                Segment::Pooled { .. } => points.push(m0 - self.others),
                Segment::Line {
                    start,
                    value,
                    slope,
                } => {
                    points.push(m0 - self.others);
                    points.push(m0);
                    points.extend(line_meets_own(&self.model, start, value, slope, lo, hi));
                }
            }
            lo = hi;
        }
        points.retain(|p| *p >= 0.0 && p.is_finite());
        points.sort_by(f64::total_cmp);
        points.dedup();
        points
    }
}

/// Anything that can tell agent `i` what accuracy each contribution earns.
pub trait AllocationRule: Send + Sync {
    fn offer(
        &self,
        model: &AccuracyModel,
        pop: &Population,
        agent: usize,
        others: f64,
    ) -> Result<Offer>;

    fn label(&self) -> String;
}

/// Breakpoints of the known-cost shaping curve for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapingScheduleKnown {
    pub m_star: f64,
    pub m_max: f64,
    pub others: f64,
}

impl ShapingScheduleKnown {
    pub fn new(model: &AccuracyModel, cost: f64, epsilon: f64, others: f64) -> Self {
        let m_star = individual_optimum(model, cost);
        let m_max = solve_m_max(model, cost, epsilon, m_star, others);
        ShapingScheduleKnown {
            m_star,
            m_max,
            others,
        }
    }

    pub fn offer(&self, model: &AccuracyModel, cost: f64, epsilon: f64) -> Offer {
        Offer::new(
            *model,
            self.others,
            vec![
                (self.m_star, Segment::Own { scale: 1.0 }),
                (
                    self.m_max,
                    Segment::Line {
                        start: self.m_star,
                        value: model.eval(self.m_star),
                        slope: cost + epsilon,
                    },
                ),
                (f64::INFINITY, Segment::Pooled { shift: 0.0 }),
            ],
        )
    }

    /// `a(m_max + others) - (a(m*) + (c + eps)(m_max - m*))`.
    pub fn residual(&self, model: &AccuracyModel, cost: f64, epsilon: f64) -> f64 {
        model.eval(self.m_max + self.others)
            - model.eval(self.m_star)
            - (cost + epsilon) * (self.m_max - self.m_star)
    }
}

/// Largest `x >= start` where the line `value + slope (x - start)` meets the
/// pooled curve `a(x + others)`; `start` when they never meet beyond it.
pub fn line_meets_pooled(
    model: &AccuracyModel,
    start: f64,
    value: f64,
    slope: f64,
    others: f64,
) -> f64 {
    let gap = |x: f64| model.eval(x + others) - value - slope * (x - start);
    // gap is concave once the pooled argument is past m0.
    let concave_from = start.max(model.min_viable_dataset() - others);
    let peak = match model.inverse_slope(slope) {
        InverseSlope::Finite(m) => (m - others).max(concave_from),
        InverseSlope::Infinite => return start,
    };
    if !(gap(peak) > 0.0) {
        return start;
    }
    let mut step = peak.max(1.0);
    let mut hi = peak + step;
    while gap(hi) > 0.0 {
        step *= 2.0;
        hi = peak + step;
        if !hi.is_finite() {
            return peak;
        }
    }
    bisect(gap, peak, hi, CROSSING_RTOL, 400)
}

/// Points in `[lo, hi]` where `value + slope (x - start)` crosses `a(x)`.
fn line_meets_own(
    model: &AccuracyModel,
    start: f64,
    value: f64,
    slope: f64,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    let gap = |x: f64| value + slope * (x - start) - model.eval(x);
    let m0 = model.min_viable_dataset();
    let mut roots = Vec::new();
    // Below m0 the curve is zero and the gap is linear.
    let zero = start - value / slope;
    if zero >= lo && zero <= hi.min(m0) {
        roots.push(zero);
    }
    // Above m0 the gap is convex with its minimum where a' equals the slope.
    let (a, b) = (lo.max(m0), hi.min(1e300));
    if a >= b {
        return roots;
    }
    let low = match model.inverse_slope(slope) {
        InverseSlope::Finite(m) => m.clamp(a, b),
        InverseSlope::Infinite => b,
    };
    if gap(low) < 0.0 {
        if gap(a) > 0.0 {
            roots.push(bisect(gap, a, low, CROSSING_RTOL, 400));
        }
        if gap(b) > 0.0 {
            roots.push(bisect(gap, low, b, CROSSING_RTOL, 400));
        }
    }
    roots
}

/// `m_max` for an agent with cost `c`: where the shaping line of slope
/// `c + eps` starting at `(m*, a(m*))` meets the pooled accuracy.
pub fn solve_m_max(
    model: &AccuracyModel,
    cost: f64,
    epsilon: f64,
    m_star: f64,
    others: f64,
) -> f64 {
    line_meets_pooled(model, m_star, model.eval(m_star), cost + epsilon, others)
}

/// Breakpoints of the two-type shaping curve for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapingScheduleTwoType {
    pub m_star_high: f64,
    pub m_star_low: f64,
    pub m_up: f64,
    pub m_down: f64,
    pub m_max_high: f64,
    pub m_max_low: f64,
    pub others: f64,
}

/// Two-type schedule for an agent that is low-cost with probability `p`.
///
/// `m_down` targets the marginal accuracy `c_low - p/(1-p) c_high` on the
/// pooled curve, clamped into `[m_max_high, m_max_low]`; `m_up` is where the
/// high-cost line from `m*_high` meets the low-cost line ending at `m_down`.
pub fn solve_two_type_schedule(
    model: &AccuracyModel,
    c_low: f64,
    c_high: f64,
    p: f64,
    epsilon: f64,
    others: f64,
) -> ShapingScheduleTwoType {
    let base = TwoTypeBase::new(model, c_low, c_high, epsilon, others);
    let target = if p >= 1.0 {
        InverseSlope::Infinite
    } else {
        model.inverse_slope(c_low - p / (1.0 - p) * c_high)
    };
    let candidate = match target {
        InverseSlope::Finite(m) => m - others,
        InverseSlope::Infinite => f64::INFINITY,
    };
    let m_down = candidate.max(base.m_max_high).min(base.m_max_low);
    base.with_m_down(model, c_low, c_high, epsilon, m_down)
}

/// Individual optima and saturation points shared by every `m_down` choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTypeBase {
    pub m_star_high: f64,
    pub m_star_low: f64,
    pub m_max_high: f64,
    pub m_max_low: f64,
    pub others: f64,
}

impl TwoTypeBase {
    pub fn new(model: &AccuracyModel, c_low: f64, c_high: f64, epsilon: f64, others: f64) -> Self {
        let m_star_high = individual_optimum(model, c_high);
        let m_star_low = individual_optimum(model, c_low);
        TwoTypeBase {
            m_star_high,
            m_star_low,
            m_max_high: solve_m_max(model, c_high, epsilon, m_star_high, others),
            m_max_low: solve_m_max(model, c_low, epsilon, m_star_low, others),
            others,
        }
    }

    /// Completes the schedule for a given `m_down` by intersecting the two
    /// shaping lines.
    ///
    /// The intersection is kept inside `[m*_high, min(m_max_high, m_down)]`.
    /// Past `m_max_high` the high-cost line lies above the pooled curve, so the
    /// allocation there already follows the pooled curve and a high-cost agent
    /// stops at `m_max_high`.
    pub fn with_m_down(
        &self,
        model: &AccuracyModel,
        c_low: f64,
        c_high: f64,
        epsilon: f64,
        m_down: f64,
    ) -> ShapingScheduleTwoType {
        let spread = c_high - c_low;
        let m_up = if spread <= 1e-12 * c_high {
            m_down
        } else {
            let numerator = model.eval(m_down + self.others)
                - (c_low + epsilon) * m_down
                - model.eval(self.m_star_high)
                + (c_high + epsilon) * self.m_star_high;
            let cap = m_down.min(self.m_max_high).max(self.m_star_high);
            (numerator / spread).clamp(self.m_star_high, cap)
        };
        ShapingScheduleTwoType {
            m_star_high: self.m_star_high,
            m_star_low: self.m_star_low,
            m_up,
            m_down,
            m_max_high: self.m_max_high,
            m_max_low: self.m_max_low,
            others: self.others,
        }
    }
}

impl ShapingScheduleTwoType {
    pub fn offer(&self, model: &AccuracyModel, c_low: f64, c_high: f64, epsilon: f64) -> Offer {
        Offer::new(
            *model,
            self.others,
            vec![
                (self.m_star_high, Segment::Own { scale: 1.0 }),
                (
                    self.m_up,
                    Segment::Line {
                        start: self.m_star_high,
                        value: model.eval(self.m_star_high),
                        slope: c_high + epsilon,
                    },
                ),
                (
                    self.m_down,
                    Segment::Line {
                        start: self.m_down,
                        value: model.eval(self.m_down + self.others),
                        slope: c_low + epsilon,
                    },
                ),
                (f64::INFINITY, Segment::Pooled { shift: 0.0 }),
            ],
        )
    }

    /// Difference between the low-cost line and the high-cost line at `m_up`.
    pub fn intersection_residual(
        &self,
        model: &AccuracyModel,
        c_low: f64,
        c_high: f64,
        epsilon: f64,
    ) -> f64 {
        let low_line =
            model.eval(self.m_down + self.others) - (c_low + epsilon) * (self.m_down - self.m_up);
        let high_line =
            model.eval(self.m_star_high) + (c_high + epsilon) * (self.m_up - self.m_star_high);
        low_line - high_line
    }

    /// Contribution the schedule asks of an agent of the given type.
    pub fn target(&self, is_low: bool) -> f64 {
        if is_low {
            self.m_down
        } else {
            self.m_up
        }
    }
}

impl AllocationRule for MechanismSpec {
    fn offer(
        &self,
        model: &AccuracyModel,
        pop: &Population,
        agent: usize,
        others: f64,
    ) -> Result<Offer> {
        match *self {
            MechanismSpec::StandardFederated => Ok(Offer::pooled(*model, others)),
            MechanismSpec::ShapingKnown { epsilon } => {
                let cost = pop.cost(agent);
                Ok(ShapingScheduleKnown::new(model, cost, epsilon, others)
                    .offer(model, cost, epsilon))
            }
            MechanismSpec::ShapingTwoType { epsilon } => {
                let prior = pop.prior().ok_or(Error::MissingTypePrior)?;
                let p = *prior.p.get(agent).ok_or(Error::MissingTypePrior)?;
                let schedule =
                    solve_two_type_schedule(model, prior.c_low, prior.c_high, p, epsilon, others);
                Ok(schedule.offer(model, prior.c_low, prior.c_high, epsilon))
            }
        }
    }

    fn label(&self) -> String {
        match self {
            MechanismSpec::StandardFederated => "standard".into(),
            MechanismSpec::ShapingKnown { .. } => "shaping".into(),
            MechanismSpec::ShapingTwoType { .. } => "shaping2t".into(),
        }
    }
}

/// Returns the pooled accuracy plus a constant: infeasible whenever `offset > 0`.
#[derive(Debug, Clone, Copy)]
pub struct InflatedRule {
    pub offset: f64,
}

impl AllocationRule for InflatedRule {
    fn offer(&self, model: &AccuracyModel, _: &Population, _: usize, others: f64) -> Result<Offer> {
        Ok(Offer::new(
            *model,
            others,
            vec![(f64::INFINITY, Segment::Pooled { shift: self.offset })],
        ))
    }

    fn label(&self) -> String {
        format!("inflated({})", self.offset)
    }
}

/// Returns a scaled-down stand-alone accuracy: not IR whenever `factor < 1`.
#[derive(Debug, Clone, Copy)]
pub struct DegradedRule {
    pub factor: f64,
}

impl AllocationRule for DegradedRule {
    fn offer(&self, model: &AccuracyModel, _: &Population, _: usize, others: f64) -> Result<Offer> {
        Ok(Offer::new(
            *model,
            others,
            vec![(f64::INFINITY, Segment::Own { scale: self.factor })],
        ))
    }

    fn label(&self) -> String {
        format!("degraded({})", self.factor)
    }
}

pub(crate) fn check_profile(pop: &Population, profile: &[f64]) -> Result<()> {
    if profile.len() != pop.len() {
        return Err(Error::ProfileLength {
            got: profile.len(),
            expected: pop.len(),
        });
    }
    if let Some((agent, &value)) = profile.iter().enumerate().find(|(_, m)| !(**m >= 0.0)) {
        return Err(Error::NegativeContribution { agent, value });
    }
    Ok(())
}

/// Sum of everyone else's contribution, never negative.
pub fn others_total(profile: &[f64], total: f64, agent: usize) -> f64 {
    (total - profile[agent]).max(0.0)
}

pub fn allocate<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    profile: &[f64],
) -> Result<Vec<f64>> {
    check_profile(pop, profile)?;
    let total: f64 = profile.iter().sum();
    (0..pop.len())
        .map(|i| {
            let offer = rule.offer(model, pop, i, others_total(profile, total, i))?;
            Ok(offer.accuracy(profile[i]))
        })
        .collect()
}

/// Outcome of a pointwise constraint check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub ok: bool,
    /// Largest violation found (0 when none).
    pub worst: f64,
    pub agent: Option<usize>,
}

fn report(violations: impl Iterator<Item = (usize, f64)>) -> CheckReport {
    let (agent, worst) = violations.fold(
        (None, 0.0),
        |(a, w), (i, v)| {
            if v > w {
                (Some(i), v)
            } else {
                (a, w)
            }
        },
    );
    CheckReport {
        ok: worst <= CHECK_TOL,
        worst,
        agent,
    }
}

/// No agent receives more than the pooled data can train.
pub fn check_feasible<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    profile: &[f64],
) -> Result<CheckReport> {
    let acc = allocate(rule, model, pop, profile)?;
    let pooled = model.eval(profile.iter().sum());
    Ok(report(acc.iter().map(|a| a - pooled).enumerate()))
}

/// No agent receives less than it could train alone.
pub fn check_ir<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    profile: &[f64],
) -> Result<CheckReport> {
    let acc = allocate(rule, model, pop, profile)?;
    Ok(report(
        acc.iter()
            .zip(profile)
            .map(|(a, &m)| model.eval(m) - a)
            .enumerate(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub agent_id: usize,
    pub m_i: f64,
    pub piece_index: usize,
    pub accuracy: f64,
}

/// Per-agent accuracy and the curve piece that produced it.
pub fn allocation_trace<R: AllocationRule + ?Sized>(
    rule: &R,
    model: &AccuracyModel,
    pop: &Population,
    profile: &[f64],
) -> Result<Vec<TraceRow>> {
    check_profile(pop, profile)?;
    let total: f64 = profile.iter().sum();
    (0..pop.len())
        .map(|i| {
            let offer = rule.offer(model, pop, i, others_total(profile, total, i))?;
            Ok(TraceRow {
                agent_id: i,
                m_i: profile[i],
                piece_index: offer.piece_index(profile[i]),
                accuracy: offer.accuracy(profile[i]),
            })
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> io::Result<()> {
    writeln!(out, "agent_id,m_i,piece_index,accuracy")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.agent_id, r.m_i, r.piece_index, r.accuracy
        )?;
    }
    Ok(())
}
