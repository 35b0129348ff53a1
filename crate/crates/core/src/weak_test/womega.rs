//! The Omega-transformed moment covariance, the Nagar bias numerator and the
//! two benchmark biases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{SigmaV, WMatrix, WeightSpec};
use crate::linalg;

/// `W` rotated into the metric of a weight matrix: each block `B` becomes
/// `Omega^{1/2} B Omega^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WOmega {
    w1: DMatrix<f64>,
    w12: DMatrix<f64>,
    w2: DMatrix<f64>,
    omega_used: WeightSpec,
}

impl WOmega {
    /// Build directly from blocks (population or synthetic inputs). The
    /// assembled matrix must be positive definite.
    pub fn from_blocks(w1: DMatrix<f64>, w12: DMatrix<f64>, w2: DMatrix<f64>, omega_used: WeightSpec) -> Result<Self> {
        let w = WMatrix::new(w1, w12, w2, Default::default())?;
        Ok(WOmega {
            w1: w.w1().clone(),
            w12: w.w12().clone(),
            w2: w.w2().clone(),
            omega_used,
        })
    }

    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn w12(&self) -> &DMatrix<f64> {
        &self.w12
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    pub fn omega_used(&self) -> &WeightSpec {
        &self.omega_used
    }

    pub fn kz(&self) -> usize {
        self.w1.nrows()
    }

    pub fn tr_w2(&self) -> f64 {
        self.w2.trace()
    }

    /// Multiply every block by `lambda > 0`.
    pub fn scaled(&self, lambda: f64) -> Self {
        WOmega {
            w1: &self.w1 * lambda,
            w12: &self.w12 * lambda,
            w2: &self.w2 * lambda,
            omega_used: self.omega_used.clone(),
        }
    }
}

/// `(I_2 (x) Omega^{1/2}) W (I_2 (x) Omega^{1/2})`, blockwise.
pub fn transform_w(w: &WMatrix, omega: &DMatrix<f64>, omega_used: WeightSpec) -> Result<WOmega> {
    if omega.nrows() != w.kz() || omega.ncols() != w.kz() {
        return Err(Error::InvalidInput(format!("Omega must be {k}x{k}", k = w.kz())));
    }
    let root = linalg::sym_sqrt(omega, "Omega")?;
    let sandwich = |b: &DMatrix<f64>| &root * b * &root;
    Ok(WOmega {
        w1: linalg::symmetrize(&sandwich(w.w1())),
        w12: sandwich(w.w12()),
        w2: linalg::symmetrize(&sandwich(w.w2())),
        omega_used,
    })
}

/// `S1 = W1 - beta (W12 + W12') + beta^2 W2` and `S12 = W12 - beta W2`.
pub fn s_matrices(beta: f64, wom: &WOmega) -> (DMatrix<f64>, DMatrix<f64>) {
    let s1 = wom.w1() - (wom.w12() + wom.w12().transpose()) * beta + wom.w2() * (beta * beta);
    let s12 = wom.w12() - wom.w2() * beta;
    (s1, s12)
}

/// Nagar bias numerator `[tr S12 - 2 c0'S12 c0] / tr W2` for unit `c0`.
pub fn nagar_n(beta: f64, c0: &DVector<f64>, wom: &WOmega) -> f64 {
    let (_, s12) = s_matrices(beta, wom);
    (s12.trace() - 2.0 * c0.dot(&(&s12 * c0))) / wom.tr_w2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchmarkKind {
    /// Estimator-specific worst case `sqrt(tr S1 / tr W2)`.
    Mop,
    /// Worst-case OLS bias `sqrt((s1^2 - 2 beta s12 + beta^2 s2^2) / s2^2)`.
    Ls(SigmaV),
}

impl BenchmarkKind {
    pub fn label(&self) -> &'static str {
        match self {
            BenchmarkKind::Mop => "mop",
            BenchmarkKind::Ls(_) => "ls",
        }
    }

    /// Coefficients `(q0, q1, q2)` of `BM^2 = q0 - q1 beta + q2 beta^2`.
    pub fn quadratic(&self, wom: &WOmega) -> (f64, f64, f64) {
        match self {
            BenchmarkKind::Mop => {
                let t = wom.tr_w2();
                (wom.w1().trace() / t, 2.0 * wom.w12().trace() / t, 1.0)
            }
            BenchmarkKind::Ls(s) => (s.s1sq / s.s2sq, 2.0 * s.s12 / s.s2sq, 1.0),
        }
    }
}

/// Benchmark bias at `beta`. A non-positive radicand means the covariance
/// sits on the perfect-dependence boundary and is reported as an error.
pub fn benchmark(beta: f64, wom: &WOmega, kind: &BenchmarkKind) -> Result<f64> {
    let radicand = match kind {
        BenchmarkKind::Mop => s_matrices(beta, wom).0.trace() / wom.tr_w2(),
        BenchmarkKind::Ls(s) => (s.s1sq - 2.0 * beta * s.s12 + beta * beta * s.s2sq) / s.s2sq,
    };
    if !(radicand > 0.0) {
        return Err(Error::BenchmarkRadicand { beta, radicand });
    }
    Ok(radicand.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks() -> WOmega {
        let w1 = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 2.0]);
        let w12 = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let w2 = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 1.0]);
        WOmega::from_blocks(w1, w12, w2, WeightSpec::TwoSls).unwrap()
    }

    #[test]
    fn identity_transform_is_noop() {
        let w = blocks();
        let wm = WMatrix::new(w.w1().clone(), w.w12().clone(), w.w2().clone(), Default::default()).unwrap();
        let t = transform_w(&wm, &DMatrix::identity(2, 2), WeightSpec::TwoSls).unwrap();
        assert!((t.w1() - w.w1()).norm() < 1e-14);
        assert!((t.w12() - w.w12()).norm() < 1e-14);
        assert!((t.w2() - w.w2()).norm() < 1e-14);
    }

    #[test]
    fn s_matrices_at_zero_and_boundary() {
        let w = blocks();
        let (s1, s12) = s_matrices(0.0, &w);
        assert_eq!(&s1, w.w1());
        assert_eq!(&s12, w.w12());
        let id = DMatrix::identity(2, 2);
        let all_i = WOmega {
            w1: id.clone(),
            w12: id.clone(),
            w2: id,
            omega_used: WeightSpec::TwoSls,
        };
        let (s1, _) = s_matrices(1.0, &all_i);
        assert_eq!(s1.norm(), 0.0);
        assert!(matches!(
            benchmark(1.0, &all_i, &BenchmarkKind::Mop),
            Err(Error::BenchmarkRadicand { .. })
        ));
    }

    #[test]
    fn ls_benchmark_at_zero() {
        let s = SigmaV::new(4.0, 0.5, 1.0).unwrap();
        let bm = benchmark(0.0, &blocks(), &BenchmarkKind::Ls(s)).unwrap();
        assert!((bm - 2.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_reproduces_benchmark() {
        let w = blocks();
        let s = SigmaV::new(2.0, -0.6, 1.3).unwrap();
        for kind in [BenchmarkKind::Mop, BenchmarkKind::Ls(s)] {
            let (q0, q1, q2) = kind.quadratic(&w);
            for beta in [-3.0, -0.2, 0.0, 1.1, 7.0] {
                let bm = benchmark(beta, &w, &kind).unwrap();
                assert!((bm * bm - (q0 - q1 * beta + q2 * beta * beta)).abs() < 1e-12 * bm * bm);
            }
        }
    }
}
