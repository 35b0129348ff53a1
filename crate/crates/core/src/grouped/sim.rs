//! Monte Carlo replications over a grouped design.
//!
//! Replication `r` draws from stream `r` of the configured seed and results
//! are reduced in replication order, so output does not depend on the number
//! of worker threads.

use rayon::prelude::*;
use serde::Serialize;

use super::design::GroupedDesign;
use super::generate::generate_sample;
use super::stats::{group_stats, GroupStats};
use crate::data::{partial_out, Dataset, PartialledData};
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_sigma_v, estimate_w, estimate_with_omega, ols, omega_matrix, wald_test, WOptions, WaldTest, WeightSpec,
};
use crate::fstats::{f_effective, f_nonrobust, f_robust, FStatKind, FStatValue};
use crate::linalg;
use crate::weak_test::{weak_iv_test_parts, BenchmarkChoice, SupOptions, TestMethod, WeakIvConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub reps: usize,
    pub seed: u64,
    pub tau: f64,
    pub alpha: f64,
    pub benchmark: BenchmarkChoice,
    pub method: TestMethod,
    pub sup: SupOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            reps: 1000,
            seed: 20_240_601,
            tau: 0.10,
            alpha: 0.05,
            benchmark: BenchmarkChoice::Ls,
            method: TestMethod::Patnaik,
            sup: SupOptions::default(),
        }
    }
}

/// Structural-side results of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralRep {
    pub b_eff: f64,
    pub cv_eff: f64,
    pub reject_eff: bool,
    pub b_r: f64,
    pub cv_r: f64,
    pub reject_r: bool,
    pub beta_ols: f64,
    pub beta_2sls: f64,
    pub beta_gmmf: f64,
    pub wald_2sls: WaldTest,
    pub wald_gmmf: WaldTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepStats {
    pub f: f64,
    pub f_eff: f64,
    pub f_r: f64,
    pub groups: GroupStats,
    pub structural: Option<StructuralRep>,
}

/// One replication on an already drawn sample.
pub fn rep_stats(design: &GroupedDesign, pd: &PartialledData, labels: &[usize], cfg: &SimConfig) -> Result<RepStats> {
    let groups = group_stats(pd.x(), design.is_structural().then(|| pd.y()), labels, design.g())?;
    let f = f_nonrobust(pd)?.value;

    let Some(_) = design.groups[0].structural else {
        let v2 = pd.v2_hat();
        let w2 = linalg::weighted_cross(pd.z(), &v2.component_mul(v2)) / pd.n() as f64;
        return Ok(RepStats {
            f,
            f_eff: f_effective(pd, &w2)?.value,
            f_r: f_robust(pd, &w2)?.value,
            groups,
            structural: None,
        });
    };

    let w = estimate_w(pd, &WOptions::default())?;
    let f_eff = f_effective(pd, w.w2())?.value;
    let f_r = f_robust(pd, w.w2())?.value;
    let sigma_v = estimate_sigma_v(pd)?;
    let test_cfg = |weights: WeightSpec| WeakIvConfig {
        weights,
        benchmark: cfg.benchmark,
        tau: cfg.tau,
        alpha: cfg.alpha,
        method: cfg.method,
        sup: cfg.sup,
        w: None,
    };
    let omega_2sls = omega_matrix(pd, &WeightSpec::TwoSls, w.w2())?;
    let omega_gmmf = omega_matrix(pd, &WeightSpec::Gmmf, w.w2())?;
    let eff = weak_iv_test_parts(
        FStatValue {
            kind: FStatKind::Effective,
            value: f_eff,
        },
        &w,
        &omega_2sls,
        Some(sigma_v),
        &test_cfg(WeightSpec::TwoSls),
    )?;
    let rob = weak_iv_test_parts(
        FStatValue {
            kind: FStatKind::Robust,
            value: f_r,
        },
        &w,
        &omega_gmmf,
        Some(sigma_v),
        &test_cfg(WeightSpec::Gmmf),
    )?;
    let wopts = WOptions::default();
    let tsls = estimate_with_omega(pd, WeightSpec::TwoSls, omega_2sls, &wopts)?;
    let gmmf = estimate_with_omega(pd, WeightSpec::Gmmf, omega_gmmf, &wopts)?;
    Ok(RepStats {
        f,
        f_eff,
        f_r,
        groups,
        structural: Some(StructuralRep {
            b_eff: eff.b,
            cv_eff: eff.cv,
            reject_eff: eff.reject,
            b_r: rob.b,
            cv_r: rob.cv,
            reject_r: rob.reject,
            beta_ols: ols(pd)?,
            beta_2sls: tsls.beta_hat,
            beta_gmmf: gmmf.beta_hat,
            wald_2sls: wald_test(&tsls, design.beta),
            wald_gmmf: wald_test(&gmmf, design.beta),
        }),
    })
}

/// Draw replication `r` and compute its statistics.
pub fn run_rep(design: &GroupedDesign, cfg: &SimConfig, r: u64) -> Result<RepStats> {
    let sample = generate_sample(design, RngStream::new(cfg.seed, r))?;
    // First-stage-only designs carry no y; x stands in so the residualized
    // container can be built, and nothing downstream reads it.
    let y = sample.y.clone().unwrap_or_else(|| sample.x.clone());
    let pd = partial_out(&Dataset::new(y, sample.x.clone(), sample.z())?)?;
    rep_stats(design, &pd, &sample.labels, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two values.
    pub sd: Option<f64>,
}

impl Moments {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.len() >= 2).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Moments { mean, sd }
    }
}

fn freq(values: impl IntoIterator<Item = bool>) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for v in values {
        hits += usize::from(v);
        total += 1;
    }
    hits as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralSummary {
    pub b_eff: Moments,
    pub cv_eff: Moments,
    pub rf_eff: f64,
    pub b_r: Moments,
    pub cv_r: Moments,
    pub rf_r: f64,
    pub beta_ols: Moments,
    pub beta_2sls: Moments,
    pub beta_gmmf: Moments,
    pub bias_ols: f64,
    pub bias_2sls: f64,
    pub bias_gmmf: f64,
    pub rf_wald_2sls: f64,
    pub rf_wald_gmmf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub design: String,
    pub n: usize,
    pub scale: f64,
    pub beta: f64,
    pub seed: u64,
    pub tau: f64,
    pub alpha: f64,
    pub benchmark: String,
    pub reps: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
    pub f: Moments,
    pub f_eff: Moments,
    pub f_r: Moments,
    pub f_g: Vec<f64>,
    pub w_2sls: Vec<f64>,
    pub w_gmmf: Vec<f64>,
    pub structural: Option<StructuralSummary>,
}

/// Run `cfg.reps` replications and reduce them. Failed replications are
/// counted and excluded; if every replication fails the first error is
/// returned.
pub fn run_sim(design: &GroupedDesign, cfg: &SimConfig) -> Result<SimSummary> {
    let (summary, _) = run_sim_with_reps(design, cfg)?;
    Ok(summary)
}

/// As [`run_sim`], also returning the per-replication records.
pub fn run_sim_with_reps(design: &GroupedDesign, cfg: &SimConfig) -> Result<(SimSummary, Vec<RepStats>)> {
    if cfg.reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    design.validate()?;
    let results: Vec<Result<RepStats>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|r| run_rep(design, cfg, r))
        .collect();
    let mut reps = Vec::with_capacity(results.len());
    let mut failures = 0;
    let mut first_error = None;
    for res in results {
        match res {
            Ok(r) => reps.push(r),
            Err(e) => {
                failures += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if reps.is_empty() {
        return Err(first_error.expect("no replications and no error"));
    }
    let g = design.g();
    let group_mean = |pick: &dyn Fn(&GroupStats) -> &Vec<f64>| -> Vec<f64> {
        (0..g)
            .map(|j| reps.iter().map(|r| pick(&r.groups)[j]).sum::<f64>() / reps.len() as f64)
            .collect()
    };
    let structural = design.is_structural().then(|| {
        let s: Vec<&StructuralRep> = reps.iter().filter_map(|r| r.structural.as_ref()).collect();
        let m = |f: &dyn Fn(&StructuralRep) -> f64| Moments::of(s.iter().map(|r| f(r)));
        let beta_ols = m(&|r| r.beta_ols);
        let beta_2sls = m(&|r| r.beta_2sls);
        let beta_gmmf = m(&|r| r.beta_gmmf);
        StructuralSummary {
            b_eff: m(&|r| r.b_eff),
            cv_eff: m(&|r| r.cv_eff),
            rf_eff: freq(s.iter().map(|r| r.reject_eff)),
            b_r: m(&|r| r.b_r),
            cv_r: m(&|r| r.cv_r),
            rf_r: freq(s.iter().map(|r| r.reject_r)),
            bias_ols: beta_ols.mean - design.beta,
            bias_2sls: beta_2sls.mean - design.beta,
            bias_gmmf: beta_gmmf.mean - design.beta,
            beta_ols,
            beta_2sls,
            beta_gmmf,
            rf_wald_2sls: freq(s.iter().map(|r| r.wald_2sls.pvalue < cfg.alpha)),
            rf_wald_gmmf: freq(s.iter().map(|r| r.wald_gmmf.pvalue < cfg.alpha)),
        }
    });
    let summary = SimSummary {
        design: design.name.clone(),
        n: design.n,
        scale: design.scale,
        beta: design.beta,
        seed: cfg.seed,
        tau: cfg.tau,
        alpha: cfg.alpha,
        benchmark: match cfg.benchmark {
            BenchmarkChoice::Ls => "ls".into(),
            BenchmarkChoice::Mop => "mop".into(),
        },
        reps: cfg.reps,
        failures,
        first_failure: first_error.map(|e| e.to_string()),
        f: Moments::of(reps.iter().map(|r| r.f)),
        f_eff: Moments::of(reps.iter().map(|r| r.f_eff)),
        f_r: Moments::of(reps.iter().map(|r| r.f_r)),
        f_g: group_mean(&|s| &s.f_g),
        w_2sls: group_mean(&|s| &s.w_2sls),
        w_gmmf: group_mean(&|s| &s.w_gmmf),
        structural,
    };
    Ok((summary, reps))
}

/// One point of a scale sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub e: f64,
    pub mean_f: f64,
    pub mean_f_eff: f64,
    pub mean_f_r: f64,
    pub rel_bias_2sls: f64,
    pub rel_bias_gmmf: f64,
    pub rf_eff: f64,
    pub rf_r: f64,
    pub rf_wald_2sls: f64,
    pub rf_wald_gmmf: f64,
    pub failures: usize,
}

/// Rerun the simulation for each scale `e` with the same seed. Relative bias
/// is `|bias| / |OLS bias|` from the simulated means.
pub fn sweep_scale(design: &GroupedDesign, e_grid: &[f64], cfg: &SimConfig) -> Result<Vec<CurveRow>> {
    if e_grid.is_empty() {
        return Err(Error::InvalidInput("the scale grid is empty".into()));
    }
    if !design.is_structural() {
        return Err(Error::Design(format!(
            "design `{}` has no structural covariances; curves need biases",
            design.name
        )));
    }
    e_grid
        .iter()
        .map(|&e| {
            let s = run_sim(&design.with_scale(e), cfg)?;
            let st = s.structural.expect("structural design");
            let ols = st.bias_ols.abs();
            Ok(CurveRow {
                e,
                mean_f: s.f.mean,
                mean_f_eff: s.f_eff.mean,
                mean_f_r: s.f_r.mean,
                rel_bias_2sls: st.bias_2sls.abs() / ols,
                rel_bias_gmmf: st.bias_gmmf.abs() / ols,
                rf_eff: st.rf_eff,
                rf_r: st.rf_r,
                rf_wald_2sls: st.rf_wald_2sls,
                rf_wald_gmmf: st.rf_wald_gmmf,
                failures: s.failures,
            })
        })
        .collect()
}
