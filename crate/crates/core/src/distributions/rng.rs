//! Reproducible random streams and multivariate normal sampling.
//!
//! A stream is a ChaCha20 generator keyed by `seed` with `stream` selecting
//! one of 2^64 independent sequences, so replication `r` can always draw from
//! stream `r` no matter which worker thread runs it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn into_rng(self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Multivariate normal with a cached lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(crate::Error::InvalidInput("covariance shape does not match mean".into()));
        }
        let chol_l = linalg::cholesky(cov, "covariance")?.l();
        Ok(MvNormal { mean, chol_l })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol_l * xi
    }
}

/// `count` draws of `mean + L xi`, one per row.
pub fn mvn_sample(mean: &DVector<f64>, cov: &DMatrix<f64>, stream: RngStream, count: usize) -> Result<DMatrix<f64>> {
    let dist = MvNormal::new(mean.clone(), cov)?;
    let mut rng = stream.into_rng();
    let d = dist.dim();
    let mut out = DMatrix::zeros(count, d);
    for i in 0..count {
        let draw = dist.sample(&mut rng);
        out.row_mut(i).copy_from(&draw.transpose());
    }
    Ok(out)
}
