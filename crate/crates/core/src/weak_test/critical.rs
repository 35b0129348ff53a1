//! Critical values for the generalized effective F-statistic.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distributions::{NoncentralChiSq, RngStream};
use crate::error::{Error, Result};
use crate::linalg;

/// Patnaik effective degrees of freedom
/// `T^2 (1 + 2d) / (tr(W2'W2) + 2d T lambda_max(W2))`, `T = tr W2`.
pub fn patnaik_keff(w2: &DMatrix<f64>, d_tau: f64) -> f64 {
    let t = w2.trace();
    let tr_sq = w2.tr_dot(w2);
    let lmax = linalg::max_eigenvalue(w2);
    t * t * (1.0 + 2.0 * d_tau) / (tr_sq + 2.0 * d_tau * t * lmax)
}

/// Upper-`alpha` quantile of `chi2_k(d k) / k`.
pub fn scaled_ncx2_cv(k: f64, d_tau: f64, alpha: f64) -> f64 {
    NoncentralChiSq::new(k, d_tau * k).upper_quantile(alpha) / k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub draws: usize,
    pub directions: usize,
    pub batches: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            draws: 100_000,
            directions: 200,
            batches: 20,
            seed: 0x3c_7a11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CvMethod {
    Patnaik,
    MonteCarlo(McOptions),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCv {
    pub value: f64,
    pub std_error: f64,
    /// Index of the selected direction (eigenvectors of `W2` come first).
    pub direction: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalValue {
    pub cv: f64,
    pub keff: f64,
    pub mc_std_error: Option<f64>,
}

pub fn critical_value(w2: &DMatrix<f64>, d_tau: f64, alpha: f64, method: &CvMethod) -> Result<CriticalValue> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(d_tau >= 0.0) || !d_tau.is_finite() {
        return Err(Error::InvalidInput(format!("d_tau must be finite and nonnegative, got {d_tau}")));
    }
    let keff = patnaik_keff(w2, d_tau);
    Ok(match method {
        CvMethod::Patnaik => CriticalValue {
            cv: scaled_ncx2_cv(keff, d_tau, alpha),
            keff,
            mc_std_error: None,
        },
        CvMethod::MonteCarlo(opts) => {
            let mc = monte_carlo_cv(w2, d_tau, alpha, opts)?;
            CriticalValue {
                cv: mc.value,
                keff,
                mc_std_error: Some(mc.std_error),
            }
        }
    })
}

/// Empirical upper-`alpha` quantile of `||c + L xi||^2 / T` for each direction,
/// sharing the draws `L xi` across directions.
fn direction_quantiles(dirs: &[DVector<f64>], eta: &DMatrix<f64>, eta_sq: &[f64], t: f64, alpha: f64) -> Vec<f64> {
    dirs.par_iter()
        .map(|c| {
            let proj = eta.tr_mul(c);
            let c_sq = c.norm_squared();
            let mut stats: Vec<f64> = eta_sq.iter().zip(proj.iter()).map(|(e, p)| (c_sq + 2.0 * p + e) / t).collect();
            empirical_upper_quantile(&mut stats, alpha)
        })
        .collect()
}

fn empirical_upper_quantile(values: &mut [f64], alpha: f64) -> f64 {
    let n = values.len();
    let idx = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    *v
}

/// Draw `L xi` columns (k x count) from one stream.
fn draws(l: &DMatrix<f64>, count: usize, stream: RngStream) -> DMatrix<f64> {
    let k = l.nrows();
    let mut rng = stream.into_rng();
    let xi = DMatrix::from_fn(k, count, |_, _| rng.sample::<f64, _>(StandardNormal));
    l * xi
}

/// Monte Carlo critical value.
///
/// Directions `c` with `||c||^2 = d T` are the eigenvectors of `W2` followed by
/// random unit vectors. A first sample picks the direction with the largest
/// empirical quantile; an independent second sample then estimates the
/// quantile in that direction, so the reported value carries no
/// maximum-selection bias. The standard error comes from batch means over the
/// second sample.
pub fn monte_carlo_cv(w2: &DMatrix<f64>, d_tau: f64, alpha: f64, opts: &McOptions) -> Result<McCv> {
    let k = w2.nrows();
    if opts.draws < 2 * opts.batches.max(1) {
        return Err(Error::InvalidInput("too few Monte Carlo draws for the batch count".into()));
    }
    let t = w2.trace();
    let l = linalg::cholesky(w2, "W_Omega,2")?.l();
    let radius = (d_tau * t).sqrt();

    let (_, vecs) = linalg::sym_eigen(w2);
    let mut dirs: Vec<DVector<f64>> = vecs.column_iter().map(|v| v.into_owned() * radius).collect();
    let mut rng = RngStream::new(opts.seed, 0).into_rng();
    while dirs.len() < opts.directions.max(1) {
        let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            dirs.push(v * (radius / norm));
        }
    }

    let eta = draws(&l, opts.draws, RngStream::new(opts.seed, 1));
    let eta_sq: Vec<f64> = eta.column_iter().map(|c| c.norm_squared()).collect();
    let q = direction_quantiles(&dirs, &eta, &eta_sq, t, alpha);
    let direction = q
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("at least one direction");
    let c = &dirs[direction];

    let eta = draws(&l, opts.draws, RngStream::new(opts.seed, 2));
    let c_sq = c.norm_squared();
    let proj = eta.tr_mul(c);
    let mut stats: Vec<f64> = eta
        .column_iter()
        .zip(proj.iter())
        .map(|(e, p)| (c_sq + 2.0 * p + e.norm_squared()) / t)
        .collect();

    let batches = opts.batches.max(2);
    let size = stats.len() / batches;
    let batch_q: Vec<f64> = stats
        .chunks_mut(size)
        .take(batches)
        .map(|chunk| empirical_upper_quantile(chunk, alpha))
        .collect();
    let mean = batch_q.iter().sum::<f64>() / batches as f64;
    let var = batch_q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    let value = empirical_upper_quantile(&mut stats, alpha);
    Ok(McCv {
        value,
        std_error: (var / batches as f64).sqrt(),
        direction,
    })
}
