//! Random grouped designs: how often is the 2SLS Nagar bias larger in
//! magnitude than the GMMf one, given concentration-parameter ranges in which
//! GMMf is much better identified?
//!
//! Sampling law (a convention): `G` groups with equal shares, `c_g ~ U[-c, c]`,
//! group variances of `u` and `v2` uniform on `(0, v]`, within-group
//! correlation uniform on `(-1, 1)`.

use rand::Rng;
use serde::Serialize;

use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::weak_test::{nagar_bias_grouped, GroupedMoments, GroupedNagar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomDesignLaw {
    pub groups: usize,
    pub c_max: f64,
    pub var_max: f64,
}

impl Default for RandomDesignLaw {
    fn default() -> Self {
        RandomDesignLaw {
            groups: 10,
            c_max: 40.0,
            var_max: 10.0,
        }
    }
}

/// Acceptance region. Ranges are open intervals on the concentration
/// parameters `mu^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraints {
    pub min_abs_rho: f64,
    pub mu2_2sls: (f64, f64),
    pub mu2_gmmf: (f64, f64),
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints {
            min_abs_rho: 0.2,
            mu2_2sls: (5.0, 10.0),
            mu2_gmmf: (40.0, 45.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomDesignOutcome {
    /// Share of accepted designs with `|N_2sls| > |N_gmmf|`.
    pub proportion: f64,
    pub accepted: usize,
    pub draws: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledDesign {
    pub moments: GroupedMoments,
    pub sigma_u2: Vec<f64>,
}

impl SampledDesign {
    /// Overall `corr(u, v2)` with equal weights.
    pub fn rho(&self) -> f64 {
        let uu: f64 = self.sigma_u2.iter().sum();
        let vv: f64 = self.moments.sigma_v2.iter().sum();
        let uv: f64 = self.moments.sigma_uv.iter().sum();
        uv / (uu * vv).sqrt()
    }
}

pub fn sample_design<R: Rng>(law: &RandomDesignLaw, rng: &mut R) -> SampledDesign {
    let g = law.groups;
    // 1 - U[0,1) lies in (0, 1], keeping variances strictly positive.
    let var = |rng: &mut R| law.var_max * (1.0 - rng.random::<f64>());
    let mut c = Vec::with_capacity(g);
    let mut sigma_u2 = Vec::with_capacity(g);
    let mut sigma_v2 = Vec::with_capacity(g);
    let mut sigma_uv = Vec::with_capacity(g);
    for _ in 0..g {
        c.push(rng.random_range(-law.c_max..=law.c_max));
        let su = var(rng);
        let sv = var(rng);
        let rho = loop {
            let r = rng.random_range(-1.0..1.0);
            if r > -1.0 {
                break r;
            }
        };
        sigma_u2.push(su);
        sigma_v2.push(sv);
        sigma_uv.push(rho * (su * sv).sqrt());
    }
    SampledDesign {
        moments: GroupedMoments {
            c,
            f: vec![1.0 / g as f64; g],
            sigma_v2,
            sigma_uv,
        },
        sigma_u2,
    }
}

/// `Some(nagar)` when the design satisfies the constraints.
pub fn accept(design: &SampledDesign, cons: &Constraints) -> Result<Option<GroupedNagar>> {
    if design.rho().abs() <= cons.min_abs_rho {
        return Ok(None);
    }
    let nb = nagar_bias_grouped(&design.moments)?;
    let inside = |v: f64, (lo, hi): (f64, f64)| v > lo && v < hi;
    Ok((inside(nb.mu2_2sls, cons.mu2_2sls) && inside(nb.mu2_gmmf, cons.mu2_gmmf)).then_some(nb))
}

/// Whether the 2SLS Nagar bias is strictly larger in magnitude.
pub fn two_sls_worse(nb: &GroupedNagar) -> bool {
    nb.n_2sls.abs() > nb.n_gmmf.abs()
}

/// Sample until `count` designs are accepted or `max_draws` is reached.
pub fn random_design_comparison(
    law: &RandomDesignLaw,
    cons: &Constraints,
    count: usize,
    seed: u64,
    max_draws: u64,
) -> Result<RandomDesignOutcome> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be positive".into()));
    }
    let mut rng = RngStream::new(seed, 0).into_rng();
    let (mut accepted, mut worse, mut draws) = (0usize, 0usize, 0u64);
    while accepted < count {
        if draws >= max_draws {
            return Err(Error::SamplingTimeout {
                accepted,
                wanted: count,
                draws,
            });
        }
        draws += 1;
        let d = sample_design(law, &mut rng);
        if let Some(nb) = accept(&d, cons)? {
            accepted += 1;
            worse += usize::from(two_sls_worse(&nb));
        }
    }
    Ok(RandomDesignOutcome {
        proportion: worse as f64 / accepted as f64,
        accepted,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let law = RandomDesignLaw::default();
        let cons = Constraints::default();
        let a = random_design_comparison(&law, &cons, 20, 9, 10_000_000).unwrap();
        let b = random_design_comparison(&law, &cons, 20, 9, 10_000_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_2sls_bias_is_not_worse() {
        let m = GroupedMoments {
            c: vec![3.0; 4],
            f: vec![0.25; 4],
            sigma_v2: vec![1.0, 2.0, 3.0, 4.0],
            sigma_uv: vec![0.5, -0.5, 0.9, -0.9],
        };
        let nb = nagar_bias_grouped(&m).unwrap();
        assert!(nb.n_2sls.abs() < 1e-15);
        assert!(!two_sls_worse(&nb));
    }

    #[test]
    fn impossible_constraints_time_out() {
        let cons = Constraints {
            mu2_2sls: (1e9, 2e9),
            ..Default::default()
        };
        assert!(matches!(
            random_design_comparison(&RandomDesignLaw::default(), &cons, 1, 0, 1000),
            Err(Error::SamplingTimeout { draws: 1000, .. })
        ));
    }
}
