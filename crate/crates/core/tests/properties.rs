use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use weakiv::distributions::NoncentralChiSq;
use weakiv::estimators::{SigmaV, WeightSpec};
use weakiv::weak_test::{
    benchmark, patnaik_keff, ratio, scaled_ncx2_cv, sup_b, BenchmarkKind, SupOptions, WOmega,
};

/// Symmetric positive definite `d x d` matrix from unconstrained entries.
fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-2.0f64..2.0, d * d), 0.01f64..1.0).prop_map(move |(v, ridge)| {
        let a = DMatrix::from_vec(d, d, v);
        &a * a.transpose() + DMatrix::identity(d, d) * ridge
    })
}

fn wom(k: usize) -> impl Strategy<Value = WOmega> {
    spd(2 * k).prop_map(move |w| {
        WOmega::from_blocks(
            w.view((0, 0), (k, k)).into_owned(),
            w.view((0, k), (k, k)).into_owned(),
            w.view((k, k), (k, k)).into_owned(),
            WeightSpec::TwoSls,
        )
        .unwrap()
    })
}

fn sigma() -> impl Strategy<Value = SigmaV> {
    (0.1f64..4.0, 0.1f64..4.0, -0.95f64..0.95).prop_map(|(a, b, r)| SigmaV::new(a, r * (a * b).sqrt(), b).unwrap())
}

fn unit(k: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, k)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| {
            let v = DVector::from_vec(v);
            let n = v.norm();
            v / n
        })
}

fn opts() -> SupOptions {
    SupOptions {
        random_starts: 16,
        ..SupOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mop_supremum_is_at_most_one(w in (2usize..6).prop_flat_map(wom)) {
        let b = sup_b(&w, &BenchmarkKind::Mop, &opts()).unwrap().b;
        prop_assert!(b <= 1.0 + 1e-6, "B = {b}");
        prop_assert!(b > 0.0);
    }

    #[test]
    fn supremum_dominates_every_point(
        (w, c) in (2usize..5).prop_flat_map(|k| (wom(k), unit(k))),
        s in sigma(),
        beta in -50.0f64..50.0,
    ) {
        for kind in [BenchmarkKind::Mop, BenchmarkKind::Ls(s)] {
            let b = sup_b(&w, &kind, &opts()).unwrap().b;
            let r = ratio(beta, &c, &w, &kind).unwrap();
            prop_assert!(r <= b * (1.0 + 1e-8) + 1e-12, "{} ratio {r} above sup {b}", kind.label());
        }
    }

    #[test]
    fn supremum_is_invariant_to_scaling_w(w in (2usize..5).prop_flat_map(wom), lambda in 0.01f64..100.0) {
        let a = sup_b(&w, &BenchmarkKind::Mop, &opts()).unwrap().b;
        let b = sup_b(&w.scaled(lambda), &BenchmarkKind::Mop, &opts()).unwrap().b;
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
    }

    #[test]
    fn benchmark_is_positive(w in (2usize..5).prop_flat_map(wom), beta in -1e3f64..1e3) {
        prop_assert!(benchmark(beta, &w, &BenchmarkKind::Mop).unwrap() > 0.0);
    }

    #[test]
    fn effective_degrees_of_freedom_lie_in_one_to_k(w2 in (1usize..8).prop_flat_map(spd), d in 0.0f64..50.0) {
        let k = w2.nrows() as f64;
        let keff = patnaik_keff(&w2, d);
        prop_assert!(keff >= 1.0 - 1e-12 && keff <= k + 1e-9, "keff {keff} for k {k}");
    }

    #[test]
    fn critical_value_increases_with_d(k in 1.0f64..12.0, d in 0.5f64..20.0, step in 0.1f64..5.0) {
        prop_assert!(scaled_ncx2_cv(k, d + step, 0.05) > scaled_ncx2_cv(k, d, 0.05));
    }

    #[test]
    fn cdf_is_monotone_and_complements_sf(df in 0.5f64..30.0, ncp in 0.0f64..60.0, x in 0.0f64..150.0, dx in 0.01f64..10.0) {
        let d = NoncentralChiSq::new(df, ncp);
        let (lo, hi) = (d.cdf(x), d.cdf(x + dx));
        prop_assert!(lo <= hi + 1e-14);
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!((d.cdf(x) + d.sf(x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_decreases_in_noncentrality(df in 0.5f64..30.0, ncp in 0.0f64..40.0, step in 0.5f64..10.0, x in 0.1f64..100.0) {
        let a = NoncentralChiSq::new(df, ncp).cdf(x);
        let b = NoncentralChiSq::new(df, ncp + step).cdf(x);
        prop_assert!(b <= a + 1e-13, "{b} > {a}");
    }

    #[test]
    fn quantile_inverts_cdf(df in 0.5f64..30.0, ncp in 0.0f64..60.0, p in 0.001f64..0.999) {
        let d = NoncentralChiSq::new(df, ncp);
        prop_assert!((d.cdf(d.quantile(p)) - p).abs() < 1e-8);
    }
}
