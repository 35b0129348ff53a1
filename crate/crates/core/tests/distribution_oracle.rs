//! Special functions checked against an independent implementation.

use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};
use statrs::function::gamma::{gamma_lr, ln_gamma as sr_ln_gamma};

use weakiv::distributions::{gamma_p, ln_gamma, mvn_sample, NoncentralChiSq, RngStream};

#[test]
fn log_gamma_matches() {
    for x in [0.1, 0.5, 1.0, 1.5, 2.0, 7.3, 30.0, 171.0, 1e4] {
        let (a, b) = (ln_gamma(x), sr_ln_gamma(x));
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "x {x}: {a} vs {b}");
    }
}

#[test]
fn regularized_lower_gamma_matches() {
    for a in [0.3, 1.0, 2.5, 10.0, 75.0] {
        for x in [0.01, 0.5, 1.0, 3.0, 9.0, 40.0, 120.0] {
            let (p, q) = (gamma_p(a, x), gamma_lr(a, x));
            assert!((p - q).abs() <= 1e-12, "a {a} x {x}: {p} vs {q}");
        }
    }
}

#[test]
fn central_cdf_matches() {
    for df in [1.0, 2.0, 5.0, 17.0] {
        let oracle = ChiSquared::new(df).unwrap();
        for x in [0.05, 1.0, 4.0, 12.0, 30.0] {
            let (a, b) = (NoncentralChiSq::central(df).cdf(x), oracle.cdf(x));
            assert!((a - b).abs() <= 1e-12, "df {df} x {x}: {a} vs {b}");
        }
    }
}

/// Poisson(ncp/2) mixture of central chi-squares, summed far into the tail.
fn mixture_cdf(df: f64, ncp: f64, x: f64) -> f64 {
    if ncp == 0.0 {
        return ChiSquared::new(df).unwrap().cdf(x);
    }
    let pois = Poisson::new(ncp / 2.0).unwrap();
    (0..2000u64)
        .map(|j| pois.pmf(j) * ChiSquared::new(df + 2.0 * j as f64).unwrap().cdf(x))
        .sum()
}

#[test]
fn noncentral_cdf_matches_poisson_mixture() {
    for df in [1.0, 3.0, 10.0] {
        for ncp in [0.5, 4.0, 25.0, 100.0] {
            let d = NoncentralChiSq::new(df, ncp);
            for x in [0.5, 5.0, 20.0, 60.0, 150.0] {
                let (a, b) = (d.cdf(x), mixture_cdf(df, ncp, x));
                assert!((a - b).abs() <= 1e-10, "df {df} ncp {ncp} x {x}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn multivariate_normal_sample_moments() {
    let mean = nalgebra::DVector::from_vec(vec![1.0, -2.0]);
    let cov = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
    let draws = mvn_sample(&mean, &cov, RngStream::new(1, 0), 100_000).unwrap();
    let n = draws.nrows() as f64;
    let m0 = draws.column(0).sum() / n;
    let m1 = draws.column(1).sum() / n;
    let c01 = draws.column(0).iter().zip(draws.column(1).iter()).map(|(a, b)| (a - m0) * (b - m1)).sum::<f64>() / n;
    assert!((m0 - 1.0).abs() < 0.02 && (m1 + 2.0).abs() < 0.02);
    assert!((c01 - 0.6).abs() < 0.03, "{c01}");
}
