//! Posterior post-processing: loadings alignment, posterior predictive
//! draws, held-out predictive scoring, conditional-relationship curves and
//! convergence diagnostics.

mod align;
mod curve;
mod diagnostics;
mod predictive;

pub use align::{match_align, AlignedLoadings};
pub use curve::{conditional_curve, ConditionalCurve};
pub use diagnostics::{diagnostics, effective_sample_size, write_traces, DiagnosticsReport};
pub use predictive::{lppd, posterior_predictive, LppdResult};
