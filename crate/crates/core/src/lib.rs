//! Numerical laboratory for McKean–Vlasov SDEs of convolution type
//!
//! ```text
//! dX_t = B[t, X_t, μ_t] dt + Σ[t, X_t, μ_t] dW_t,   B[t,x,μ] = ∫ b(t,x,y) μ(dy)
//! ```
//!
//! The crate simulates interacting-particle approximations, probes the
//! regularity hypotheses that guarantee pathwise uniqueness, and replays the
//! Zvonkin-transform argument as a set of numerical checks:
//!
//! - [`kernels`]: interaction kernels and the measure functionals B, Σ, A = ΣΣᵀ
//! - [`measure`]: empirical measures, moments and coupling distances
//! - [`regularity`]: modulus / Dini / ellipticity / Lipschitz probes and the hypothesis report
//! - [`particle`]: Euler–Maruyama particle system, single and coupled runs
//! - [`zvonkin`]: backward parabolic solve, gradient bound, norm equivalence, martingale residual
//! - [`uniqueness`]: coupled-solution coalescence, Gronwall fits, interval iteration, chaos scaling
//! - [`scenario`]: the JSON experiment description shared by every front end

// `!(a < b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod kernels;
pub mod measure;
pub mod numeric;
pub mod particle;
pub mod regularity;
pub mod rng;
pub mod scenario;
pub mod uniqueness;
pub mod zvonkin;

pub use error::{Error, Result};
pub use kernels::{builtin_kernel, KernelSpec};
pub use measure::EmpiricalMeasure;
pub use scenario::Scenario;
