//! Linear algebra, special functions and sampling primitives.

pub mod linalg;
pub mod random;
pub mod special;
pub mod wishart;

pub use linalg::{cholesky, CholeskyFactor, Direction};
pub use random::{stream_rng, StreamRng};
pub use special::{ln_gamma, log_gamma_product, log_multigamma, log_sum_exp};
pub use wishart::wishart_logpdf;
