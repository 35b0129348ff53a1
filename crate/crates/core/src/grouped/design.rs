//! Grouped-data IV designs: one first-stage coefficient and one error
//! covariance per group, group-indicator instruments.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimators::{SigmaV, WMatrix};
use crate::weak_test::GroupedMoments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupSizes {
    /// Labels drawn i.i.d. from the group probabilities.
    #[default]
    Multinomial,
    /// `n_g = round(n p_g)`, largest-remainder rounding.
    Fixed,
}

/// Structural-side covariance of `(u, v2)` within a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Structural {
    pub sigma_u2: f64,
    pub sigma_uv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub pi0: f64,
    pub sigma_v2: f64,
    /// `None` for designs that only specify the first stage.
    pub structural: Option<Structural>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDesign {
    pub name: String,
    pub n: usize,
    pub beta: f64,
    /// Multiplier `e` in `pi = e pi0`.
    pub scale: f64,
    pub group_sizes: GroupSizes,
    pub groups: Vec<Group>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    name: Option<String>,
    n: usize,
    #[serde(default)]
    beta: f64,
    #[serde(default = "one")]
    scale: f64,
    #[serde(default)]
    group_sizes: GroupSizes,
    sigma: Option<SigmaFile>,
    group: Vec<GroupFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SigmaFile {
    u2: Option<f64>,
    uv: Option<f64>,
    v2: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    pi0: f64,
    sigma_v2: Option<f64>,
    sigma_u2: Option<f64>,
    sigma_uv: Option<f64>,
    prob: Option<f64>,
}

fn one() -> f64 {
    1.0
}

const BUILTINS: &[(&str, &str)] = &[
    ("me", include_str!("../../designs/me.toml")),
    ("me_reconstructed", include_str!("../../designs/me_reconstructed.toml")),
    ("he", include_str!("../../designs/he.toml")),
    ("he_reconstructed", include_str!("../../designs/he_reconstructed.toml")),
    ("appendix_a2", include_str!("../../designs/appendix_a2.toml")),
    ("a1_reconstructed", include_str!("../../designs/a1_reconstructed.toml")),
    ("homoskedastic", include_str!("../../designs/homoskedastic.toml")),
];

impl GroupedDesign {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: DesignFile = toml::from_str(text).map_err(|e| Error::Design(e.to_string()))?;
        let common = file.sigma.as_ref();
        let g = file.group.len();
        let probs: Vec<Option<f64>> = file.group.iter().map(|gr| gr.prob).collect();
        let probs: Vec<f64> = if probs.iter().all(Option::is_none) {
            vec![1.0 / g.max(1) as f64; g]
        } else if probs.iter().all(Option::is_some) {
            probs.into_iter().flatten().collect()
        } else {
            return Err(Error::Design("either every group sets `prob` or none does".into()));
        };

        let mut groups = Vec::with_capacity(g);
        for (i, (gr, prob)) in file.group.iter().zip(probs).enumerate() {
            let pick = |own: Option<f64>, shared: Option<f64>| own.or(shared);
            let sigma_v2 = pick(gr.sigma_v2, common.and_then(|c| c.v2))
                .ok_or_else(|| Error::Design(format!("group {}: sigma_v2 missing", i + 1)))?;
            let u2 = pick(gr.sigma_u2, common.and_then(|c| c.u2));
            let uv = pick(gr.sigma_uv, common.and_then(|c| c.uv));
            let structural = match (u2, uv) {
                (Some(sigma_u2), Some(sigma_uv)) => Some(Structural { sigma_u2, sigma_uv }),
                (None, None) => None,
                _ => {
                    return Err(Error::Design(format!(
                        "group {}: sigma_u2 and sigma_uv must be given together",
                        i + 1
                    )))
                }
            };
            groups.push(Group {
                pi0: gr.pi0,
                sigma_v2,
                structural,
                prob,
            });
        }
        let design = GroupedDesign {
            name: file.name.unwrap_or_else(|| "design".into()),
            n: file.n,
            beta: file.beta,
            scale: file.scale,
            group_sizes: file.group_sizes,
            groups,
        };
        design.validate()?;
        Ok(design)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// One of the shipped designs, see [`GroupedDesign::builtin_names`].
    pub fn builtin(name: &str) -> Result<Self> {
        let (_, text) = BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Design(format!("unknown builtin design `{name}`")))?;
        Self::from_toml_str(text)
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTINS.iter().map(|(n, _)| *n)
    }

    /// `builtin:<name>` or a file path.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec.strip_prefix("builtin:") {
            Some(name) => Self::builtin(name),
            None => Self::load(spec),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups.len();
        if g < 2 {
            return Err(Error::Design("at least two groups are required".into()));
        }
        if self.n < 2 * g {
            return Err(Error::Design(format!("n = {} is too small for {g} groups", self.n)));
        }
        if !self.beta.is_finite() || !self.scale.is_finite() {
            return Err(Error::Design("beta and scale must be finite".into()));
        }
        let total: f64 = self.groups.iter().map(|gr| gr.prob).sum();
        if (total - 1.0).abs() > 1e-9 || self.groups.iter().any(|gr| !(gr.prob > 0.0)) {
            return Err(Error::Design(format!("group probabilities must be positive and sum to 1 (sum {total})")));
        }
        let has_structural = self.groups[0].structural.is_some();
        for (i, gr) in self.groups.iter().enumerate() {
            if !gr.pi0.is_finite() || !(gr.sigma_v2 > 0.0) || !gr.sigma_v2.is_finite() {
                return Err(Error::Design(format!("group {}: invalid pi0 or sigma_v2", i + 1)));
            }
            if gr.structural.is_some() != has_structural {
                return Err(Error::Design("structural covariances must be given for all groups or none".into()));
            }
            if let Some(s) = gr.structural {
                if !(s.sigma_u2 > 0.0) || s.sigma_u2 * gr.sigma_v2 - s.sigma_uv * s.sigma_uv <= 0.0 {
                    return Err(Error::Design(format!("group {}: covariance of (u, v2) is not positive definite", i + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn g(&self) -> usize {
        self.groups.len()
    }

    pub fn is_structural(&self) -> bool {
        self.groups[0].structural.is_some()
    }

    pub fn pi(&self) -> Vec<f64> {
        self.groups.iter().map(|gr| self.scale * gr.pi0).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.groups.iter().map(|gr| gr.prob).collect()
    }

    pub fn with_scale(&self, scale: f64) -> Self {
        GroupedDesign {
            scale,
            ..self.clone()
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        GroupedDesign { n, ..self.clone() }
    }

    fn structural(&self) -> Result<Vec<Structural>> {
        self.groups
            .iter()
            .map(|gr| {
                gr.structural
                    .ok_or_else(|| Error::Design(format!("design `{}` has no structural covariances", self.name)))
            })
            .collect()
    }

    /// Fixed-share moments with `c_g = sqrt(n) pi_g`.
    pub fn moments(&self) -> Result<GroupedMoments> {
        let s = self.structural()?;
        let root_n = (self.n as f64).sqrt();
        Ok(GroupedMoments {
            c: self.pi().iter().map(|p| p * root_n).collect(),
            f: self.probs(),
            sigma_v2: self.groups.iter().map(|gr| gr.sigma_v2).collect(),
            sigma_uv: s.iter().map(|s| s.sigma_uv).collect(),
        })
    }

    /// Population `Q_zz = Diag(p_g)`.
    pub fn qzz(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.probs()))
    }

    /// Population `W` for `(Z'v1, Z'v2)/sqrt(n)` with `v1 = u + beta v2`.
    pub fn population_w(&self) -> Result<WMatrix> {
        let s = self.structural()?;
        let b = self.beta;
        let diag = |f: &dyn Fn(usize) -> f64| DMatrix::from_diagonal(&DVector::from_fn(self.g(), |i, _| self.groups[i].prob * f(i)));
        let v2 = |i: usize| self.groups[i].sigma_v2;
        let w1 = diag(&|i| s[i].sigma_u2 + 2.0 * b * s[i].sigma_uv + b * b * v2(i));
        let w12 = diag(&|i| s[i].sigma_uv + b * v2(i));
        let w2 = diag(&v2);
        WMatrix::new(w1, w12, w2, Default::default())
    }

    /// Population covariance of the reduced-form and first-stage errors.
    pub fn population_sigma_v(&self) -> Result<SigmaV> {
        let w = self.population_w()?;
        SigmaV::new(w.w1().trace(), w.w12().trace(), w.w2().trace())
    }

    /// Probability limit of the OLS bias, `E[x u] / E[x^2]`.
    pub fn ols_bias(&self) -> Result<f64> {
        let s = self.structural()?;
        let pi = self.pi();
        let num: f64 = self.groups.iter().zip(&s).map(|(gr, s)| gr.prob * s.sigma_uv).sum();
        let den: f64 = self
            .groups
            .iter()
            .zip(&pi)
            .map(|(gr, p)| gr.prob * (p * p + gr.sigma_v2))
            .sum();
        Ok(num / den)
    }

    /// Overall correlation of `u` and `v2`.
    pub fn rho_uv(&self) -> Result<f64> {
        let s = self.structural()?;
        let (mut uu, mut uv, mut vv) = (0.0, 0.0, 0.0);
        for (gr, s) in self.groups.iter().zip(&s) {
            uu += gr.prob * s.sigma_u2;
            uv += gr.prob * s.sigma_uv;
            vv += gr.prob * gr.sigma_v2;
        }
        Ok(uv / (uu * vv).sqrt())
    }
}
