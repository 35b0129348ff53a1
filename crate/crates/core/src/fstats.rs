//! First-stage F-statistics: non-robust, robust, effective and generalized
//! effective.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::PartialledData;
use crate::error::{Error, Result};
use crate::estimators::WMatrix;
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub enum FStatKind {
    NonRobust,
    Robust,
    Effective,
    GeneralizedEffective(DMatrix<f64>),
}

impl FStatKind {
    pub fn label(&self) -> &'static str {
        match self {
            FStatKind::NonRobust => "F",
            FStatKind::Robust => "F_r",
            FStatKind::Effective => "F_eff",
            FStatKind::GeneralizedEffective(_) => "F_geff",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FStatValue {
    pub kind: FStatKind,
    pub value: f64,
}

fn checked(kind: FStatKind, value: f64) -> Result<FStatValue> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidInput(format!("{} evaluated to {value}", kind.label())));
    }
    Ok(FStatValue { kind, value })
}

/// `x'P_Z x / (k_z sigma^2_{v2})` with `sigma^2_{v2} = v2'v2 / n`.
pub fn f_nonrobust(pd: &PartialledData) -> Result<FStatValue> {
    let s2 = pd.v2_hat().norm_squared() / pd.n() as f64;
    if s2 <= 0.0 {
        return Err(Error::InvalidInput("first-stage residual variance is zero".into()));
    }
    checked(FStatKind::NonRobust, pd.x_pz_x() / (pd.kz() as f64 * s2))
}

/// `x'Z W2^{-1} Z'x / (n k_z)`.
pub fn f_robust(pd: &PartialledData, w2: &DMatrix<f64>) -> Result<FStatValue> {
    let chol = linalg::cholesky(w2, "W2")?;
    let q = linalg::inv_quad_form(&chol, pd.zx());
    checked(FStatKind::Robust, q / (pd.n() as f64 * pd.kz() as f64))
}

/// `x'P_Z x / tr(W2 (Z'Z/n)^{-1})`.
pub fn f_effective(pd: &PartialledData, w2: &DMatrix<f64>) -> Result<FStatValue> {
    let tr = pd.zz_chol().solve(w2).trace() * pd.n() as f64;
    if !(tr > 0.0) {
        return Err(Error::NotPositiveDefinite("W2".into()));
    }
    checked(FStatKind::Effective, pd.x_pz_x() / tr)
}

/// `x'Z Omega Z'x / (n tr(W2 Omega))`.
pub fn f_generalized(pd: &PartialledData, w2: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<FStatValue> {
    let num = pd.zx().dot(&(omega * pd.zx()));
    let tr = (w2 * omega).trace();
    if !(tr > 0.0) {
        return Err(Error::NotPositiveDefinite("W2 Omega".into()));
    }
    checked(
        FStatKind::GeneralizedEffective(omega.clone()),
        num / (pd.n() as f64 * tr),
    )
}

/// The three standard statistics from one shared `W` estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FStats {
    pub f: f64,
    pub f_eff: f64,
    pub f_r: f64,
}

pub fn all_fstats(pd: &PartialledData, w: &WMatrix) -> Result<FStats> {
    Ok(FStats {
        f: f_nonrobust(pd)?.value,
        f_eff: f_effective(pd, w.w2())?.value,
        f_r: f_robust(pd, w.w2())?.value,
    })
}
