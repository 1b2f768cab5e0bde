//! Two-size Wright–Fisher model.
//!
//! Individuals come in two sizes, `theta < 1` and `1`. Each generation is
//! filled by sampling parents until the consumed resources reach `R`, so the
//! population size is a renewal first-passage time and fluctuates with the
//! type composition.

// `!(a > b)` comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod error;
pub mod model;
pub mod moments;
pub mod renewal;
pub mod sde;
pub mod stats;
pub mod streams;
pub mod wf;

pub use analytics::{AnalyticsKind, AnalyticsResult, ScaleSpec};
pub use error::{Error, Result};
pub use model::{mu, rho_finite, rho_limit, var_xi, IncrementLaw, RhoSpec, SizeParams, Theta};
pub use moments::{Method, MomentReport};
pub use renewal::{DiscreteLaw, PassageOutcome, StoppingRule, StrictPassage};
pub use sde::{DiffusionSpec, SdePath};
pub use stats::{Estimate, MeanVar};
pub use wf::{GenerationState, Trajectory};
