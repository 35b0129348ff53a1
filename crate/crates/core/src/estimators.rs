//! Linear IV/GMM point estimators, the moment covariance estimate `W`, the
//! reduced-form residual covariance `Sigma_v`, and robust Wald tests.
//!
//! Every estimator in the class has the form
//! `beta = x'Z Omega Z'y / x'Z Omega Z'x` for a fixed weight matrix `Omega`.

use nalgebra::{DMatrix, DVector};

use crate::data::PartialledData;
use crate::distributions::gamma::chisq_sf;
use crate::error::{Error, Result};
use crate::linalg;

/// Choice of the GMM weight matrix `Omega_n`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    /// `(Z'Z/n)^{-1}`, giving 2SLS.
    TwoSls,
    /// `W_2^{-1}`, the inverse first-stage moment covariance.
    Gmmf,
    /// A user-supplied symmetric positive definite matrix.
    Custom(DMatrix<f64>),
    /// Efficient two-step GMM. Always rejected: its weight matrix depends on a
    /// first-step estimate of beta, which is not consistent when instruments
    /// are weak.
    TwoStep,
}

impl WeightSpec {
    pub fn label(&self) -> &'static str {
        match self {
            WeightSpec::TwoSls => "2sls",
            WeightSpec::Gmmf => "gmmf",
            WeightSpec::Custom(_) => "custom",
            WeightSpec::TwoStep => "two-step",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovFlavor {
    #[default]
    Hc0,
    Cluster,
}

/// Which residual plays the role of `v1` in `W1` and `W12`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum V1Source {
    /// OLS residuals of the reduced form `y = Z pi_y + v1`.
    #[default]
    ReducedForm,
    /// `v1 = y - x b + b v2`, i.e. the reduced form restricted to `pi_y = b pi`.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WOptions {
    pub flavor: CovFlavor,
    /// Scale by `n/(n - k_z)` (HC0) or `G/(G - 1)` (cluster).
    pub dof_correction: bool,
    pub v1: V1Source,
}

impl WOptions {
    /// Cluster flavour when the data carry cluster labels, HC0 otherwise.
    pub fn for_data(pd: &PartialledData) -> Self {
        WOptions {
            flavor: if pd.clusters().is_some() {
                CovFlavor::Cluster
            } else {
                CovFlavor::Hc0
            },
            ..Default::default()
        }
    }
}

/// Partitioned covariance of `(Z'v1, Z'v2)/sqrt(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WMatrix {
    w1: DMatrix<f64>,
    w12: DMatrix<f64>,
    w2: DMatrix<f64>,
    flavor: CovFlavor,
}

impl WMatrix {
    /// Validates shapes, symmetry of the diagonal blocks and positive
    /// definiteness of the assembled matrix.
    pub fn new(w1: DMatrix<f64>, w12: DMatrix<f64>, w2: DMatrix<f64>, flavor: CovFlavor) -> Result<Self> {
        let k = w1.nrows();
        for (name, m) in [("W1", &w1), ("W12", &w12), ("W2", &w2)] {
            if m.nrows() != k || m.ncols() != k {
                return Err(Error::InvalidInput(format!("{name} must be {k}x{k}")));
            }
        }
        let w1 = linalg::symmetrize(&w1);
        let w2 = linalg::symmetrize(&w2);
        linalg::cholesky(&linalg::assemble_blocks(&w1, &w12, &w2), "W")?;
        Ok(WMatrix { w1, w12, w2, flavor })
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

    pub fn flavor(&self) -> CovFlavor {
        self.flavor
    }

    pub fn kz(&self) -> usize {
        self.w1.nrows()
    }

    pub fn full(&self) -> DMatrix<f64> {
        linalg::assemble_blocks(&self.w1, &self.w12, &self.w2)
    }

    /// Homoskedastic form `Sigma_v (x) Q`.
    pub fn kronecker(sigma: &SigmaV, q: &DMatrix<f64>) -> Result<Self> {
        WMatrix::new(q * sigma.s1sq, q * sigma.s12, q * sigma.s2sq, CovFlavor::Hc0)
    }
}

/// Covariance matrix of the reduced-form and first-stage errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaV {
    pub s1sq: f64,
    pub s12: f64,
    pub s2sq: f64,
}

impl SigmaV {
    /// Rejects non-positive variances and `1 - rho^2 <= 1e-12`.
    pub fn new(s1sq: f64, s12: f64, s2sq: f64) -> Result<Self> {
        if !(s1sq > 0.0 && s2sq > 0.0) || !s12.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "Sigma_v with variances ({s1sq}, {s2sq})"
            )));
        }
        let gap = 1.0 - s12 * s12 / (s1sq * s2sq);
        if gap <= 1e-12 {
            return Err(Error::PerfectCorrelation(gap));
        }
        Ok(SigmaV { s1sq, s12, s2sq })
    }

    pub fn rho(&self) -> f64 {
        self.s12 / (self.s1sq * self.s2sq).sqrt()
    }

    pub fn det(&self) -> f64 {
        self.s1sq * self.s2sq - self.s12 * self.s12
    }
}

fn v1_residuals(pd: &PartialledData, source: V1Source) -> DVector<f64> {
    match source {
        V1Source::ReducedForm => pd.v1_hat().clone(),
        V1Source::Fixed(b) => pd.y() - pd.x() * b + pd.v2_hat() * b,
    }
}

/// Sum of `z_i r_i` within each cluster, one row per cluster.
fn cluster_scores(z: &DMatrix<f64>, r: &DVector<f64>, ids: &[usize], g: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(g, z.ncols());
    for (i, &c) in ids.iter().enumerate() {
        let ri = r[i];
        for j in 0..z.ncols() {
            s[(c, j)] += z[(i, j)] * ri;
        }
    }
    s
}

fn dof_factor(pd: &PartialledData, opts: &WOptions) -> Result<f64> {
    if !opts.dof_correction {
        return Ok(1.0);
    }
    Ok(match opts.flavor {
        CovFlavor::Hc0 => {
            let n = pd.n() as f64;
            n / (n - pd.kz() as f64)
        }
        CovFlavor::Cluster => {
            let g = require_clusters(pd)?.count() as f64;
            if g < 2.0 {
                return Err(Error::InvalidInput("cluster correction needs at least two clusters".into()));
            }
            g / (g - 1.0)
        }
    })
}

fn require_clusters(pd: &PartialledData) -> Result<&crate::data::Clusters> {
    pd.clusters()
        .ok_or_else(|| Error::InvalidInput("cluster-robust covariance requested but no cluster labels supplied".into()))
}

/// Estimate `W` from reduced-form and first-stage residuals.
pub fn estimate_w(pd: &PartialledData, opts: &WOptions) -> Result<WMatrix> {
    let n = pd.n() as f64;
    let z = pd.z();
    let v1 = v1_residuals(pd, opts.v1);
    let v2 = pd.v2_hat();
    let scale = dof_factor(pd, opts)? / n;
    let (w1, w12, w2) = match opts.flavor {
        CovFlavor::Hc0 => (
            linalg::weighted_cross(z, &v1.component_mul(&v1)),
            linalg::weighted_cross(z, &v1.component_mul(v2)),
            linalg::weighted_cross(z, &v2.component_mul(v2)),
        ),
        CovFlavor::Cluster => {
            let cl = require_clusters(pd)?;
            let s1 = cluster_scores(z, &v1, cl.ids(), cl.count());
            let s2 = cluster_scores(z, v2, cl.ids(), cl.count());
            (s1.tr_mul(&s1), s1.tr_mul(&s2), s2.tr_mul(&s2))
        }
    };
    WMatrix::new(w1 * scale, w12 * scale, w2 * scale, opts.flavor).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::NotPositiveDefinite(format!(
            "estimated W ({:?} flavour{})",
            opts.flavor,
            if opts.flavor == CovFlavor::Cluster {
                ", possibly too few clusters"
            } else {
                ""
            }
        )),
        other => other,
    })
}

/// `(1/n)[v1 v2]'[v1 v2]` from the reduced-form and first-stage residuals.
pub fn estimate_sigma_v(pd: &PartialledData) -> Result<SigmaV> {
    let n = pd.n() as f64;
    let v1 = pd.v1_hat();
    let v2 = pd.v2_hat();
    SigmaV::new(v1.dot(v1) / n, v1.dot(v2) / n, v2.dot(v2) / n)
}

/// Resolve `Omega_n` for a weight specification. `w2` is only consulted for
/// [`WeightSpec::Gmmf`].
pub fn omega_matrix(pd: &PartialledData, spec: &WeightSpec, w2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = pd.kz();
    match spec {
        WeightSpec::TwoSls => Ok(pd.zz_chol().inverse() * pd.n() as f64),
        WeightSpec::Gmmf => linalg::spd_inverse(w2, "W2"),
        WeightSpec::Custom(omega) => {
            if omega.nrows() != k || omega.ncols() != k {
                return Err(Error::InvalidInput(format!("custom Omega must be {k}x{k}")));
            }
            if (omega - omega.transpose()).amax() > 1e-12 * omega.amax() {
                return Err(Error::InvalidInput("custom Omega is not symmetric".into()));
            }
            linalg::cholesky(omega, "custom Omega")
                .map_err(|_| Error::InvalidInput("custom Omega is not positive definite".into()))?;
            Ok(omega.clone())
        }
        WeightSpec::TwoStep => Err(Error::TwoStepGmm),
    }
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub beta_hat: f64,
    pub se_robust: f64,
    pub se_nonrobust: f64,
    /// Structural residuals `y - x beta_hat`.
    pub residuals: DVector<f64>,
    pub weights_used: WeightSpec,
    pub omega: DMatrix<f64>,
}

/// Linear GMM estimate with both robust (sandwich) and non-robust standard
/// errors. The robust SE uses the same HC0/cluster kernel as [`estimate_w`]
/// applied to the structural residuals.
pub fn estimate(pd: &PartialledData, spec: &WeightSpec, opts: &WOptions) -> Result<EstimateResult> {
    let omega = match spec {
        WeightSpec::Gmmf => omega_matrix(pd, spec, estimate_w(pd, opts)?.w2())?,
        WeightSpec::TwoStep => return Err(Error::TwoStepGmm),
        _ => omega_matrix(pd, spec, &DMatrix::zeros(0, 0))?,
    };
    estimate_with_omega(pd, spec.clone(), omega, opts)
}

/// As [`estimate`] with `Omega_n` already resolved.
pub fn estimate_with_omega(
    pd: &PartialledData,
    spec: WeightSpec,
    omega: DMatrix<f64>,
    opts: &WOptions,
) -> Result<EstimateResult> {
    let a = &omega * pd.zx();
    let denom = pd.zx().dot(&a);
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::DegenerateIdentification(denom));
    }
    let beta_hat = pd.zy().dot(&a) / denom;
    let residuals = pd.y() - pd.x() * beta_hat;
    let n = pd.n() as f64;

    // Influence of observation i on the numerator is u_i z_i'a.
    let za = pd.z() * &a;
    let meat = match opts.flavor {
        CovFlavor::Hc0 => residuals.iter().zip(za.iter()).map(|(u, s)| (u * s).powi(2)).sum::<f64>(),
        CovFlavor::Cluster => {
            let cl = require_clusters(pd)?;
            let mut sums = vec![0.0; cl.count()];
            for (i, &c) in cl.ids().iter().enumerate() {
                sums[c] += residuals[i] * za[i];
            }
            sums.iter().map(|s| s * s).sum()
        }
    } * dof_factor(pd, opts)?;
    let se_robust = meat.sqrt() / denom;
    let sigma_u2 = residuals.norm_squared() / n;
    let se_nonrobust = (sigma_u2 * za.norm_squared()).sqrt() / denom;

    Ok(EstimateResult {
        beta_hat,
        se_robust,
        se_nonrobust,
        residuals,
        weights_used: spec,
        omega,
    })
}

/// OLS of y on x (both already partialled).
pub fn ols(pd: &PartialledData) -> Result<f64> {
    let xx = pd.x().norm_squared();
    if xx <= 0.0 {
        return Err(Error::DegenerateIdentification(xx));
    }
    Ok(pd.x().dot(pd.y()) / xx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldTest {
    pub statistic: f64,
    pub pvalue: f64,
}

/// Robust Wald test of `beta = beta0`, referred to chi-square(1).
pub fn wald_test(res: &EstimateResult, beta0: f64) -> WaldTest {
    let statistic = ((res.beta_hat - beta0) / res.se_robust).powi(2);
    WaldTest {
        statistic,
        pvalue: chisq_sf(1.0, statistic),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partial_out, Clusters, Dataset};
    use crate::distributions::rng::RngStream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn simulated(n: usize, k: usize, seed: u64, strength: f64) -> PartialledData {
        let mut rng = RngStream::new(seed, 0).into_rng();
        let z = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let v: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let u = 0.5 * v + e * (1.0 + z[(i, 0)].abs());
            x[i] = strength * z.row(i).sum() + v * (1.0 + 0.5 * z[(i, 0)].powi(2)).sqrt();
            y[i] = 0.7 * x[i] + u;
        }
        partial_out(&Dataset::new(y, x, z).unwrap()).unwrap()
    }

    #[test]
    fn just_identified_invariance() {
        let pd = simulated(200, 1, 1, 0.5);
        let opts = WOptions::default();
        let z = pd.z().column(0);
        let iv = z.dot(pd.y()) / z.dot(pd.x());
        for spec in [
            WeightSpec::TwoSls,
            WeightSpec::Gmmf,
            WeightSpec::Custom(DMatrix::from_element(1, 1, 3.7)),
        ] {
            let r = estimate(&pd, &spec, &opts).unwrap();
            assert!((r.beta_hat - iv).abs() < 1e-12 * iv.abs().max(1.0));
        }
    }

    #[test]
    fn two_sls_matches_projection_formula() {
        let pd = simulated(300, 4, 2, 0.3);
        let r = estimate(&pd, &WeightSpec::TwoSls, &WOptions::default()).unwrap();
        let pz = pd.z() * pd.zz_chol().solve(&pd.z().transpose());
        let expected = pd.x().dot(&(&pz * pd.y())) / pd.x().dot(&(&pz * pd.x()));
        assert!((r.beta_hat - expected).abs() < 1e-10);
        assert!(r.se_robust > 0.0 && r.se_nonrobust > 0.0);
        let resid = pd.y() - pd.x() * r.beta_hat;
        assert!((resid - &r.residuals).norm() < 1e-12);
    }

    #[test]
    fn omega_scale_invariance() {
        let pd = simulated(250, 3, 3, 0.4);
        let omega = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]);
        let opts = WOptions::default();
        let a = estimate(&pd, &WeightSpec::Custom(omega.clone()), &opts).unwrap();
        let b = estimate(&pd, &WeightSpec::Custom(omega * 17.0), &opts).unwrap();
        assert!((a.beta_hat - b.beta_hat).abs() < 1e-12);
        assert!((a.se_robust - b.se_robust).abs() < 1e-12);
    }

    #[test]
    fn two_step_is_refused() {
        let pd = simulated(50, 2, 4, 0.4);
        assert!(matches!(
            estimate(&pd, &WeightSpec::TwoStep, &WOptions::default()),
            Err(Error::TwoStepGmm)
        ));
    }

    #[test]
    fn custom_omega_must_be_pd() {
        let pd = simulated(50, 2, 5, 0.4);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = estimate(&pd, &WeightSpec::Custom(bad), &WOptions::default()).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn w_blocks_match_brute_force() {
        let pd = simulated(80, 3, 6, 0.4);
        let w = estimate_w(&pd, &WOptions::default()).unwrap();
        let n = pd.n() as f64;
        let mut w1 = DMatrix::zeros(3, 3);
        let mut w12 = DMatrix::zeros(3, 3);
        let mut w2 = DMatrix::zeros(3, 3);
        for i in 0..pd.n() {
            let zi = pd.z().row(i).transpose();
            let zz = &zi * zi.transpose();
            let (a, b) = (pd.v1_hat()[i], pd.v2_hat()[i]);
            w1 += &zz * (a * a / n);
            w12 += &zz * (a * b / n);
            w2 += &zz * (b * b / n);
        }
        assert!((w.w1() - w1).norm() < 1e-12);
        assert!((w.w12() - w12).norm() < 1e-12);
        assert!((w.w2() - w2).norm() < 1e-12);
        assert_eq!(w.w1(), &w.w1().transpose());
        assert_eq!(w.w2(), &w.w2().transpose());
    }

    #[test]
    fn cluster_w_with_singleton_clusters_equals_hc0() {
        let pd0 = simulated(60, 2, 7, 0.5);
        let labels: Vec<String> = (0..60).map(|i| i.to_string()).collect();
        let d = Dataset::new(pd0.y().clone(), pd0.x().clone(), pd0.z().clone())
            .unwrap()
            .with_clusters(Clusters::from_labels(&labels))
            .unwrap();
        let pd = partial_out(&d).unwrap();
        let hc0 = estimate_w(&pd, &WOptions::default()).unwrap();
        let cl = estimate_w(
            &pd,
            &WOptions {
                flavor: CovFlavor::Cluster,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((hc0.full() - cl.full()).norm() < 1e-12);
    }

    #[test]
    fn too_few_clusters_is_singular() {
        let pd0 = simulated(60, 3, 8, 0.5);
        let labels: Vec<&str> = (0..60).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
        let d = Dataset::new(pd0.y().clone(), pd0.x().clone(), pd0.z().clone())
            .unwrap()
            .with_clusters(Clusters::from_labels(&labels))
            .unwrap();
        let pd = partial_out(&d).unwrap();
        let err = estimate_w(&pd, &WOptions::for_data(&pd)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)));
    }

    #[test]
    fn constant_residual_indicator_design() {
        // Z = group indicators, v1 = v2 = 1 -> every block is Diag(n_g / n).
        let counts = [3usize, 5, 2];
        let n: usize = counts.iter().sum();
        let mut z = DMatrix::zeros(n, 3);
        let mut row = 0;
        for (g, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                z[(row, g)] = 1.0;
                row += 1;
            }
        }
        let zz = z.tr_mul(&z) / n as f64;
        let ones = DVector::from_element(n, 1.0);
        let w = linalg::weighted_cross(&z, &ones) / n as f64;
        assert_eq!(w, zz);
        assert_eq!(w[(1, 1)], 0.5);
    }

    #[test]
    fn sigma_v_matches_loop_oracle() {
        let pd = simulated(120, 2, 9, 0.4);
        let s = estimate_sigma_v(&pd).unwrap();
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for i in 0..pd.n() {
            let (p, q) = (pd.v1_hat()[i], pd.v2_hat()[i]);
            a += p * p;
            b += p * q;
            c += q * q;
        }
        let n = pd.n() as f64;
        assert!((s.s1sq - a / n).abs() < 1e-12);
        assert!((s.s12 - b / n).abs() < 1e-12);
        assert!((s.s2sq - c / n).abs() < 1e-12);
    }

    #[test]
    fn sigma_v_rejects_perfect_correlation() {
        assert!(matches!(SigmaV::new(2.0, 2.0, 2.0), Err(Error::PerfectCorrelation(_))));
        let id = SigmaV::new(1.0, 0.0, 1.0).unwrap();
        assert_eq!(id.det(), 1.0);
    }

    #[test]
    fn wald_trivial_cases() {
        let pd = simulated(100, 2, 10, 0.5);
        let mut r = estimate(&pd, &WeightSpec::TwoSls, &WOptions::default()).unwrap();
        let w = wald_test(&r, r.beta_hat);
        assert_eq!(w.statistic, 0.0);
        assert!((w.pvalue - 1.0).abs() < 1e-15);
        r.se_robust = 1.0;
        let w = wald_test(&r, r.beta_hat - 1.959963984540054);
        assert!((w.pvalue - 0.05).abs() < 1e-9);
    }
}
