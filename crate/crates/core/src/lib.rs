//! The geometric distribution of order `k`: the number of Bernoulli(`p`)
//! trials up to and including the first run of `k` consecutive successes.
//!
//! The pmf is available through four independent engines (a linear
//! recurrence, a sum over the roots of the characteristic polynomial,
//! Muselli's alternating binomial sum, and a closed form without vanishing
//! binomials). Factorial moments are computed from a single pmf value,
//!
//! ```text
//! μ_(r) = r! · f_k((r+1)k + r) / (q p^k)^(r+1),
//! ```
//!
//! and cross-checked against two direct binomial-sum expansions and a
//! truncated series. Everything except the root solver works both in
//! binary64 and in exact big-rational arithmetic.

pub mod error;
pub mod numerics;
pub mod moments;
pub mod params;
pub mod pmf;
pub mod roots;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use numerics::{gen_binomial, parse_scalar, Mode, Real, Scalar};
pub use params::{make_params, Params};
