//! Weak-instrument diagnostics for linear IV models with one endogenous
//! regressor.
//!
//! The crate covers the class of linear GMM estimators
//! `beta = x'Z Omega Z'y / x'Z Omega Z'x` (2SLS and the first-stage-weighted
//! GMMf among them), the matching generalized effective first-stage
//! F-statistics, and Nagar-bias based tests of the null of weak instruments
//! under heteroskedasticity or clustering. A grouped-data simulator exercises
//! it all end to end.
//!
//! ```no_run
//! use weakiv::{data, weak_test};
//!
//! let schema = data::CsvSchema {
//!     y: "y".into(),
//!     x: "x".into(),
//!     z: vec!["z1".into(), "z2".into()],
//!     intercept: true,
//!     ..Default::default()
//! };
//! let pd = data::partial_out(&data::load_csv("sample.csv", &schema)?)?;
//! let result = weak_test::weak_iv_test(&pd, &weak_test::WeakIvConfig::default())?;
//! println!("F_eff = {:.3}, cv = {:.3}", result.statistic.value, result.cv);
//! # Ok::<(), weakiv::Error>(())
//! ```

pub mod data;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod fstats;
pub mod grouped;
pub(crate) mod linalg;
pub mod weak_test;

pub use error::{Error, Result};
