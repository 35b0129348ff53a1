//! Population diagnostics: concentration parameters and Nagar bias values.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::womega::{nagar_n, transform_w};
use crate::error::{Error, Result};
use crate::estimators::{WMatrix, WeightSpec};

/// `mu^2 = ||c_Omega||^2 / tr(W_Omega,2)` with `c_Omega = Omega^{1/2} Q c`,
/// computed as `c'Q Omega Q c / tr(Omega W2)`.
pub fn concentration(c: &DVector<f64>, qzz: &DMatrix<f64>, w2: &DMatrix<f64>, omega: &DMatrix<f64>) -> f64 {
    let qc = qzz * c;
    qc.dot(&(omega * &qc)) / (omega * w2).trace()
}

/// Nagar bias `n(beta, c_Omega,0, W_Omega) / mu^2` for population inputs.
/// `w` is the covariance of `(Z'v1, Z'v2)/sqrt(n)` with `v1 = u + beta v2`.
pub fn nagar_bias(beta: f64, c: &DVector<f64>, qzz: &DMatrix<f64>, w: &WMatrix, omega: &DMatrix<f64>) -> Result<f64> {
    let wom = transform_w(w, omega, WeightSpec::Custom(omega.clone()))?;
    let root = crate::linalg::sym_sqrt(omega, "Omega")?;
    let c_om = root * (qzz * c);
    let norm = c_om.norm();
    if norm == 0.0 {
        return Err(Error::InvalidInput("Nagar bias is undefined at c = 0".into()));
    }
    let mu2 = norm * norm / wom.tr_w2();
    Ok(nagar_n(beta, &(c_om / norm), &wom) / mu2)
}

/// Per-group population moments of a grouped design with fixed shares.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedMoments {
    /// Local-to-zero first-stage coefficients `c_g = sqrt(n) pi_g`.
    pub c: Vec<f64>,
    /// Group shares, summing to one.
    pub f: Vec<f64>,
    pub sigma_v2: Vec<f64>,
    pub sigma_uv: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupedNagar {
    pub n_2sls: f64,
    pub n_gmmf: f64,
    pub mu2_2sls: f64,
    pub mu2_gmmf: f64,
}

/// Closed-form concentration parameters and Nagar biases of 2SLS and GMMf
/// with group-indicator instruments.
pub fn nagar_bias_grouped(m: &GroupedMoments) -> Result<GroupedNagar> {
    let g = m.c.len();
    if g == 0 || m.f.len() != g || m.sigma_v2.len() != g || m.sigma_uv.len() != g {
        return Err(Error::InvalidInput("grouped moments must have equal, nonzero lengths".into()));
    }
    if m.f.iter().any(|&f| !(f > 0.0 && f < 1.0)) || (m.f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("group shares must lie in (0, 1) and sum to one".into()));
    }
    if m.sigma_v2.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidInput("group first-stage variances must be positive".into()));
    }
    let cf: Vec<f64> = (0..g).map(|i| m.c[i] * m.c[i] * m.f[i]).collect();
    let cf_w: Vec<f64> = (0..g).map(|i| cf[i] / m.sigma_v2[i]).collect();
    let s_cf: f64 = cf.iter().sum();
    let s_cf_w: f64 = cf_w.iter().sum();
    if !(s_cf > 0.0) {
        return Err(Error::InvalidInput("all c_g are zero".into()));
    }
    let n_2sls = (0..g).map(|i| (1.0 - 2.0 * cf[i] / s_cf) * m.sigma_uv[i]).sum::<f64>() / s_cf;
    let n_gmmf = (0..g)
        .map(|i| (1.0 - 2.0 * cf_w[i] / s_cf_w) * m.sigma_uv[i] / m.sigma_v2[i])
        .sum::<f64>()
        / s_cf_w;
    Ok(GroupedNagar {
        n_2sls,
        n_gmmf,
        mu2_2sls: s_cf / m.sigma_v2.iter().sum::<f64>(),
        mu2_gmmf: s_cf_w / g as f64,
    })
}
