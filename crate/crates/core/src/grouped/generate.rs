//! Sampling grouped-data IV datasets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::design::{GroupSizes, GroupedDesign};
use crate::data::Dataset;
use crate::distributions::RngStream;
use crate::error::{Error, Result};

/// Attempts at drawing labels before an empty group becomes an error.
pub const MAX_LABEL_ATTEMPTS: usize = 10;

/// One draw from a grouped design. `y` is absent for first-stage-only designs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
    pub x: DVector<f64>,
    pub y: Option<DVector<f64>>,
    /// Label draws needed to populate every group (1 when none was empty).
    pub label_attempts: usize,
}

impl GroupedSample {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn g(&self) -> usize {
        self.counts.len()
    }

    /// The `n x G` indicator matrix.
    pub fn z(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n(), self.g());
        for (i, &g) in self.labels.iter().enumerate() {
            z[(i, g)] = 1.0;
        }
        z
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        let y = self
            .y
            .clone()
            .ok_or_else(|| Error::Design("design has no structural side, so y is not generated".into()))?;
        Dataset::new(y, self.x.clone(), self.z())
    }
}

fn fixed_counts(n: usize, probs: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    let short = n.saturating_sub(counts.iter().sum::<usize>());
    for &g in order.iter().take(short) {
        counts[g] += 1;
    }
    counts
}

fn draw_labels<R: Rng>(design: &GroupedDesign, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let g = design.g();
    let probs = design.probs();
    if design.group_sizes == GroupSizes::Fixed {
        let counts = fixed_counts(design.n, &probs);
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyGroup { group: empty + 1, attempts: 1 });
        }
        let labels = counts.iter().enumerate().flat_map(|(g, &c)| std::iter::repeat_n(g, c)).collect();
        return Ok((labels, counts, 1));
    }
    let mut cum = Vec::with_capacity(g);
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cum.push(acc);
    }
    let mut last_empty = 0;
    for attempt in 1..=MAX_LABEL_ATTEMPTS {
        let mut counts = vec![0usize; g];
        let labels: Vec<usize> = (0..design.n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let k = cum.partition_point(|&c| c <= u).min(g - 1);
                counts[k] += 1;
                k
            })
            .collect();
        match counts.iter().position(|&c| c == 0) {
            None => return Ok((labels, counts, attempt)),
            Some(e) => last_empty = e,
        }
    }
    Err(Error::EmptyGroup {
        group: last_empty + 1,
        attempts: MAX_LABEL_ATTEMPTS,
    })
}

/// Draw labels, then `(u, v2) ~ N(0, Sigma_g)` per observation;
/// `x = pi_g + v2`, `y = x beta + u`.
pub fn generate_sample(design: &GroupedDesign, stream: RngStream) -> Result<GroupedSample> {
    let mut rng = stream.into_rng();
    let (labels, counts, label_attempts) = draw_labels(design, &mut rng)?;
    let pi = design.pi();
    // Lower Cholesky of [[v2, uv], [uv, u2]] ordered so v2 uses the first normal.
    let factors: Vec<(f64, f64, f64)> = design
        .groups
        .iter()
        .map(|gr| {
            let sv = gr.sigma_v2.sqrt();
            match gr.structural {
                Some(s) => {
                    let l21 = s.sigma_uv / sv;
                    (sv, l21, (s.sigma_u2 - l21 * l21).sqrt())
                }
                None => (sv, 0.0, 0.0),
            }
        })
        .collect();
    let structural = design.is_structural();
    let n = design.n;
    let mut x = DVector::zeros(n);
    let mut y = if structural { Some(DVector::zeros(n)) } else { None };
    for (i, &g) in labels.iter().enumerate() {
        let (sv, l21, l22) = factors[g];
        let e1: f64 = rng.sample(StandardNormal);
        let v2 = sv * e1;
        x[i] = pi[g] + v2;
        if let Some(y) = y.as_mut() {
            let e2: f64 = rng.sample(StandardNormal);
            y[i] = design.beta * x[i] + l21 * e1 + l22 * e2;
        }
    }
    Ok(GroupedSample {
        labels,
        counts,
        x,
        y,
        label_attempts,
    })
}

/// As [`generate_sample`], packaged as a [`Dataset`] with indicator
/// instruments. Requires a structural design.
pub fn generate(design: &GroupedDesign, stream: RngStream) -> Result<Dataset> {
    generate_sample(design, stream)?.to_dataset()
}
