//! Data-sharing mechanisms that shape accuracy to elicit contributions.

// Negated comparisons are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accuracy;
pub mod agents;
pub mod equilibrium;
pub mod error;
pub mod mechanisms;
pub mod oracle;
pub mod roots;

pub use accuracy::{AccuracyModel, CurveKind, InverseSlope};
pub use agents::{Agent, Population, TwoTypePrior};
pub use equilibrium::EquilibriumResult;
pub use error::{Error, Result};
pub use mechanisms::{AllocationRule, MechanismSpec, Offer, Segment};
pub use oracle::GridSpec;
