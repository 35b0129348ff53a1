//! Group-level statistics: group means, group IV estimates, group F-statistics
//! and the weights that express 2SLS and GMMf as averages of group estimates.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub counts: Vec<usize>,
    pub xbar: Vec<f64>,
    pub ybar: Option<Vec<f64>>,
    /// Within-group first-stage residual variance (divisor `n_g`).
    pub sigma_v2_hat: Vec<f64>,
    /// `n_g xbar_g^2 / sigma_v2_hat_g`.
    pub f_g: Vec<f64>,
    /// `ybar_g / xbar_g`, `None` when `xbar_g = 0`.
    pub beta_g: Option<Vec<Option<f64>>>,
    /// `n_g xbar_g^2 / sum_s n_s xbar_s^2`.
    pub w_2sls: Vec<f64>,
    /// `F_g / sum_s F_s`.
    pub w_gmmf: Vec<f64>,
}

impl GroupStats {
    /// `sum_g w_g beta_g` over groups with a defined estimate.
    pub fn weighted_beta(&self, weights: &[f64]) -> Option<f64> {
        let betas = self.beta_g.as_ref()?;
        Some(weights.iter().zip(betas).filter_map(|(w, b)| b.map(|b| w * b)).sum())
    }

    /// `(1/G) sum F_g`.
    pub fn mean_f(&self) -> f64 {
        self.f_g.iter().sum::<f64>() / self.f_g.len() as f64
    }

    /// `sum_g [sigma_g^2 / sum_s sigma_s^2] F_g`.
    pub fn variance_weighted_f(&self) -> f64 {
        let total: f64 = self.sigma_v2_hat.iter().sum();
        self.sigma_v2_hat.iter().zip(&self.f_g).map(|(s, f)| s / total * f).sum()
    }
}

pub fn group_stats(x: &DVector<f64>, y: Option<&DVector<f64>>, labels: &[usize], g: usize) -> Result<GroupStats> {
    let mut counts = vec![0usize; g];
    let mut sx = vec![0.0; g];
    let mut sy = vec![0.0; g];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        sx[l] += x[i];
        if let Some(y) = y {
            sy[l] += y[i];
        }
    }
    if let Some(e) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup { group: e + 1, attempts: 1 });
    }
    let xbar: Vec<f64> = sx.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mut ss = vec![0.0; g];
    for (i, &l) in labels.iter().enumerate() {
        ss[l] += (x[i] - xbar[l]).powi(2);
    }
    let sigma_v2_hat: Vec<f64> = ss.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    if sigma_v2_hat.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidInput("a group has zero first-stage variance".into()));
    }
    let signal: Vec<f64> = xbar.iter().zip(&counts).map(|(m, &c)| c as f64 * m * m).collect();
    let f_g: Vec<f64> = signal.iter().zip(&sigma_v2_hat).map(|(s, v)| s / v).collect();
    let total_signal: f64 = signal.iter().sum();
    let total_f: f64 = f_g.iter().sum();
    let ybar = y.map(|_| sy.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect::<Vec<_>>());
    let beta_g = ybar.as_ref().map(|yb| {
        yb.iter()
            .zip(&xbar)
            .map(|(y, x)| if *x == 0.0 { None } else { Some(y / x) })
            .collect()
    });
    Ok(GroupStats {
        w_2sls: signal.iter().map(|s| s / total_signal).collect(),
        w_gmmf: f_g.iter().map(|f| f / total_f).collect(),
        counts,
        xbar,
        ybar,
        sigma_v2_hat,
        f_g,
        beta_g,
    })
}
