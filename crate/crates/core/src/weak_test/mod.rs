//! Weak-instruments testing for the linear GMM class.

pub mod critical;
pub mod diagnostics;
pub mod procedure;
pub mod sup;
pub mod womega;

pub use critical::{critical_value, monte_carlo_cv, patnaik_keff, scaled_ncx2_cv, CriticalValue, CvMethod, McCv, McOptions};
pub use diagnostics::{concentration, nagar_bias, nagar_bias_grouped, GroupedMoments, GroupedNagar};
pub use procedure::{weak_iv_test, weak_iv_test_parts, BenchmarkChoice, TestMethod, WeakIvConfig, WeakIvResult};
pub use sup::{ratio, ratio_at_infinity, sup_b, sup_b_gmmf, ArgmaxBeta, SupOptions, SupResult};
pub use womega::{benchmark, nagar_n, s_matrices, transform_w, BenchmarkKind, WOmega};
