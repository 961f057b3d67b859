//! Fairness-constrained threshold decisions for two groups and the feedback
//! loop between decision loss and group participation.

pub mod dist;
pub mod dynamics;
pub mod config;
pub mod empirics;
pub mod error;
pub mod fairsolve;
pub mod horizon;
pub mod output;
mod numeric;
pub mod popmodel;
pub mod scenario;

pub use dist::{check_assumption1, AssumptionReport, DistKind, SubgroupDistribution};
pub use error::{Error, Result};
pub use popmodel::{total_loss, Branch, GroupSpec, Label, Minimizer, PopulationState, SubgroupCounts};
