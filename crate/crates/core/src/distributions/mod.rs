//! Special functions, the noncentral chi-square distribution and
//! reproducible random streams.

pub mod chisq;
pub mod gamma;
pub mod rng;

pub use chisq::NoncentralChiSq;
pub use gamma::{chisq_sf, gamma_p, gamma_q, ln_gamma};
pub use rng::{mvn_sample, MvNormal, RngStream};
