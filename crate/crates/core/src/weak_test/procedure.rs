//! The full weak-instruments test: statistic, `B`, `d = B/tau`, effective
//! degrees of freedom, critical value and decision.

use nalgebra::DMatrix;

use super::critical::{critical_value, scaled_ncx2_cv, CvMethod, McOptions};
use super::sup::{sup_b, sup_b_gmmf, SupOptions, SupResult};
use super::womega::{transform_w, BenchmarkKind};
use crate::data::PartialledData;
use crate::error::{Error, Result};
use crate::estimators::{estimate_sigma_v, estimate_w, omega_matrix, SigmaV, WMatrix, WOptions, WeightSpec};
use crate::fstats::{f_effective, f_generalized, f_robust, FStatValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BenchmarkChoice {
    Mop,
    #[default]
    Ls,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestMethod {
    Patnaik,
    MonteCarlo(McOptions),
    /// Sets `B = 1`. Valid only with the MOP benchmark, under which `B <= 1`.
    ConservativeSimplified,
}

impl TestMethod {
    pub fn label(&self) -> &'static str {
        match self {
            TestMethod::Patnaik => "patnaik",
            TestMethod::MonteCarlo(_) => "monte-carlo",
            TestMethod::ConservativeSimplified => "conservative",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakIvConfig {
    pub weights: WeightSpec,
    pub benchmark: BenchmarkChoice,
    pub tau: f64,
    pub alpha: f64,
    pub method: TestMethod,
    pub sup: SupOptions,
    /// Kernel for `W`; `None` picks cluster when labels are present.
    pub w: Option<WOptions>,
}

impl Default for WeakIvConfig {
    fn default() -> Self {
        WeakIvConfig {
            weights: WeightSpec::TwoSls,
            benchmark: BenchmarkChoice::Ls,
            tau: 0.10,
            alpha: 0.05,
            method: TestMethod::Patnaik,
            sup: SupOptions::default(),
            w: None,
        }
    }
}

impl WeakIvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if matches!(self.weights, WeightSpec::TwoStep) {
            return Err(Error::TwoStepGmm);
        }
        if self.method == TestMethod::ConservativeSimplified && self.benchmark == BenchmarkChoice::Ls {
            return Err(Error::ConservativeUnderLs);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakIvResult {
    pub statistic: FStatValue,
    pub b: f64,
    pub d_tau: f64,
    pub keff: f64,
    pub cv: f64,
    pub alpha: f64,
    pub tau: f64,
    pub benchmark: BenchmarkKind,
    pub method: TestMethod,
    pub reject: bool,
    /// Absent for the conservative method, which does not search.
    pub sup: Option<SupResult>,
    pub mc_std_error: Option<f64>,
    /// False when the sphere search hit its iteration cap.
    pub converged: bool,
}

/// Run the test on data: estimates `W` (and `Sigma_v` for the LS benchmark)
/// and delegates to [`weak_iv_test_parts`].
pub fn weak_iv_test(pd: &PartialledData, cfg: &WeakIvConfig) -> Result<WeakIvResult> {
    cfg.validate()?;
    let wopts = cfg.w.unwrap_or_else(|| WOptions::for_data(pd));
    let w = estimate_w(pd, &wopts)?;
    let omega = omega_matrix(pd, &cfg.weights, w.w2())?;
    let statistic = match cfg.weights {
        WeightSpec::TwoSls => f_effective(pd, w.w2())?,
        WeightSpec::Gmmf => f_robust(pd, w.w2())?,
        _ => f_generalized(pd, w.w2(), &omega)?,
    };
    let sigma_v = match cfg.benchmark {
        BenchmarkChoice::Ls => Some(estimate_sigma_v(pd)?),
        BenchmarkChoice::Mop => None,
    };
    weak_iv_test_parts(statistic, &w, &omega, sigma_v, cfg)
}

/// The test from precomputed ingredients. `sigma_v` is required for the LS
/// benchmark and ignored otherwise.
pub fn weak_iv_test_parts(
    statistic: FStatValue,
    w: &WMatrix,
    omega: &DMatrix<f64>,
    sigma_v: Option<SigmaV>,
    cfg: &WeakIvConfig,
) -> Result<WeakIvResult> {
    cfg.validate()?;
    let kind = match cfg.benchmark {
        BenchmarkChoice::Mop => BenchmarkKind::Mop,
        BenchmarkChoice::Ls => BenchmarkKind::Ls(
            sigma_v.ok_or_else(|| Error::InvalidInput("the LS benchmark needs Sigma_v".into()))?,
        ),
    };
    let wom = transform_w(w, omega, cfg.weights.clone())?;
    let gmmf = matches!(cfg.weights, WeightSpec::Gmmf);

    let sup = match cfg.method {
        TestMethod::ConservativeSimplified => None,
        _ if gmmf => Some(sup_b_gmmf(&wom, &kind)?),
        _ => Some(sup_b(&wom, &kind, &cfg.sup)?),
    };
    let b = sup.as_ref().map_or(1.0, |s| s.b);
    let converged = sup.as_ref().is_none_or(|s| s.converged);
    let d_tau = b / cfg.tau;

    let (cv, keff, mc_std_error) = match (&cfg.method, gmmf) {
        // W_Omega,2 = I: the limit is exactly chi2_k(d k)/k.
        (TestMethod::Patnaik | TestMethod::ConservativeSimplified, true) => {
            let k = w.kz() as f64;
            (scaled_ncx2_cv(k, d_tau, cfg.alpha), k, None)
        }
        (TestMethod::MonteCarlo(opts), _) => {
            let c = critical_value(wom.w2(), d_tau, cfg.alpha, &CvMethod::MonteCarlo(*opts))?;
            (c.cv, c.keff, c.mc_std_error)
        }
        _ => {
            let c = critical_value(wom.w2(), d_tau, cfg.alpha, &CvMethod::Patnaik)?;
            (c.cv, c.keff, None)
        }
    };

    Ok(WeakIvResult {
        reject: statistic.value > cv,
        statistic,
        b,
        d_tau,
        keff,
        cv,
        alpha: cfg.alpha,
        tau: cfg.tau,
        benchmark: kind,
        method: cfg.method,
        sup,
        mc_std_error,
        converged,
    })
}
