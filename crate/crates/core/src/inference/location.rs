//! Normal-Wishart location posteriors in two dimensions.
//!
//! The parameterisation follows the usual conjugate convention: `scale` is
//! the Wishart scale matrix `W`, so the expected precision is `nu * W`, and
//! the mean has precision `beta * Λ` given `Λ`.

use std::f64::consts::{LN_2, PI};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::corpus::ImageRecord;
use crate::special::{digamma_unchecked, ln_gamma};
use crate::{Error, Result};

use super::Responsibilities;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "NormalWishartRepr", into = "NormalWishartRepr")]
pub struct NormalWishart {
    pub mean: Vector2<f64>,
    pub scale: Matrix2<f64>,
    pub beta: f64,
    pub nu: f64,
}

/// Normal-Wishart prior shared by the foreground topics.
pub type LocationPrior = NormalWishart;

#[derive(Serialize, Deserialize)]
struct NormalWishartRepr {
    mean: [f64; 2],
    /// Row-major.
    scale: [[f64; 2]; 2],
    beta: f64,
    nu: f64,
}

impl From<NormalWishartRepr> for NormalWishart {
    fn from(r: NormalWishartRepr) -> Self {
        NormalWishart {
            mean: Vector2::new(r.mean[0], r.mean[1]),
            scale: Matrix2::new(r.scale[0][0], r.scale[0][1], r.scale[1][0], r.scale[1][1]),
            beta: r.beta,
            nu: r.nu,
        }
    }
}

impl From<NormalWishart> for NormalWishartRepr {
    fn from(nw: NormalWishart) -> Self {
        let s = nw.scale;
        NormalWishartRepr {
            mean: [nw.mean.x, nw.mean.y],
            scale: [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]],
            beta: nw.beta,
            nu: nw.nu,
        }
    }
}

impl Default for NormalWishart {
    /// Centred on the image with a spread of half the image extent:
    /// `W = diag(1/0.5², 1/0.5²)`, `beta = 1`, `nu = 5`.
    fn default() -> Self {
        NormalWishart {
            mean: Vector2::new(0.5, 0.5),
            scale: Matrix2::from_diagonal_element(4.0),
            beta: 1.0,
            nu: 5.0,
        }
    }
}

fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

fn is_positive_definite(m: &Matrix2<f64>) -> bool {
    let a = m[(0, 0)];
    let det = m.determinant();
    a > 0.0
        && det > 0.0
        && a.is_finite()
        && det.is_finite()
        && (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-9 * a.abs().max(1.0)
}

impl NormalWishart {
    pub fn validate(&self) -> Result<()> {
        if !is_positive_definite(&self.scale) {
            return Err(Error::Domain(
                "Normal-Wishart scale matrix is not symmetric positive-definite".into(),
            ));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Domain(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.nu > 1.0) {
            return Err(Error::Domain(format!("nu must be > 1, got {}", self.nu)));
        }
        if !self.mean.iter().all(|x| x.is_finite()) {
            return Err(Error::Domain("Normal-Wishart mean is not finite".into()));
        }
        Ok(())
    }

    /// `E[Λ] = nu * W`.
    pub fn expected_precision(&self) -> Matrix2<f64> {
        self.scale * self.nu
    }

    /// `E[ln |Λ|]` under the Wishart factor.
    pub fn expected_log_det(&self) -> f64 {
        digamma_unchecked(0.5 * self.nu)
            + digamma_unchecked(0.5 * (self.nu - 1.0))
            + 2.0 * LN_2
            + self.scale.determinant().ln()
    }

    /// Log normaliser of the Wishart density, `ln B(W, nu)`.
    fn wishart_log_norm(&self) -> f64 {
        -0.5 * self.nu * self.scale.determinant().ln()
            - self.nu * LN_2
            - 0.5 * PI.ln()
            - ln_gamma(0.5 * self.nu)
            - ln_gamma(0.5 * (self.nu - 1.0))
    }

    /// `KL(self || prior)` between two Normal-Wishart distributions.
    pub fn kl_divergence(&self, prior: &NormalWishart) -> f64 {
        let d = 2.0;
        let w0_inv = prior
            .scale
            .try_inverse()
            .expect("prior scale is invertible");
        let wishart = self.wishart_log_norm() - prior.wishart_log_norm()
            + 0.5 * (self.nu - prior.nu) * self.expected_log_det()
            - 0.5 * self.nu * d
            + 0.5 * self.nu * (w0_inv * self.scale).trace();
        let dm = self.mean - prior.mean;
        let gaussian = 0.5
            * (d * prior.beta / self.beta - d
                + d * (self.beta / prior.beta).ln()
                + prior.beta * self.nu * (dm.transpose() * self.scale * dm)[(0, 0)]);
        wishart + gaussian
    }

    /// Log density of the Student-t posterior predictive at `x`.
    pub fn student_t_log_density(&self, x: [f64; 2]) -> Result<f64> {
        self.validate()?;
        Ok(StudentT::new(self).log_density(x))
    }

    /// `E[ln N(x | μ, Λ⁻¹)]` under this posterior.
    pub fn expected_log_likelihood(&self, x: [f64; 2]) -> f64 {
        ExpectedGaussian::new(self).log_density(x)
    }

    /// Conjugate update from weighted observations.
    ///
    /// With `n = Σ w`, weighted mean `x̄` and weighted scatter `S` about `x̄`:
    /// `beta' = beta + n`, `nu' = nu + n`, `m' = (beta m + n x̄) / beta'`,
    /// `W'⁻¹ = W⁻¹ + S + (beta n / beta') (x̄ − m)(x̄ − m)ᵀ`.
    pub fn posterior(
        &self,
        observations: impl Iterator<Item = ([f64; 2], f64)> + Clone,
    ) -> NormalWishart {
        let mut n = 0.0;
        let mut sum = Vector2::zeros();
        for (x, w) in observations.clone() {
            n += w;
            sum += Vector2::new(x[0], x[1]) * w;
        }
        if n <= 0.0 {
            return *self;
        }
        let xbar = sum / n;
        let mut scatter = Matrix2::zeros();
        for (x, w) in observations {
            let d = Vector2::new(x[0], x[1]) - xbar;
            scatter += d * d.transpose() * w;
        }
        let beta = self.beta + n;
        let nu = self.nu + n;
        let mean = (self.mean * self.beta + xbar * n) / beta;
        let dm = xbar - self.mean;
        let w0_inv = symmetrize(self.scale.try_inverse().expect("prior scale is invertible"));
        let w_inv = symmetrize(w0_inv + scatter + dm * dm.transpose() * (self.beta * n / beta));
        let scale = symmetrize(w_inv.try_inverse().expect("posterior scale is invertible"));
        NormalWishart {
            mean,
            scale,
            beta,
            nu,
        }
    }
}

/// Posterior for foreground topic `topic` of one image.
pub fn update_nw_stats(
    image: &ImageRecord,
    responsibilities: &Responsibilities,
    prior: &LocationPrior,
    topic: usize,
) -> NormalWishart {
    prior.posterior(
        image
            .tokens
            .iter()
            .enumerate()
            .map(move |(i, t)| (t.location, responsibilities.get(i, topic))),
    )
}

/// Student-t predictive with constants hoisted out of the per-token loop.
#[derive(Debug, Clone, Copy)]
pub struct StudentT {
    mean: Vector2<f64>,
    precision: Matrix2<f64>,
    dof: f64,
    log_norm: f64,
}

impl StudentT {
    pub fn new(nw: &NormalWishart) -> Self {
        let dof = nw.nu - 1.0;
        let precision = nw.scale * (dof * nw.beta / (1.0 + nw.beta));
        let log_norm = ln_gamma(0.5 * (dof + 2.0)) - ln_gamma(0.5 * dof)
            + 0.5 * precision.determinant().ln()
            - (dof * PI).ln();
        StudentT {
            mean: nw.mean,
            precision,
            dof,
            log_norm,
        }
    }

    #[inline]
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let d = Vector2::new(x[0], x[1]) - self.mean;
        let maha = (d.transpose() * self.precision * d)[(0, 0)];
        self.log_norm - 0.5 * (self.dof + 2.0) * (maha / self.dof).ln_1p()
    }
}

/// Expected Gaussian log-likelihood with constants hoisted.
#[derive(Debug, Clone, Copy)]
pub struct ExpectedGaussian {
    mean: Vector2<f64>,
    precision: Matrix2<f64>,
    constant: f64,
}

impl ExpectedGaussian {
    pub fn new(nw: &NormalWishart) -> Self {
        let constant = 0.5 * nw.expected_log_det() - (2.0 * PI).ln() - 1.0 / nw.beta;
        ExpectedGaussian {
            mean: nw.mean,
            precision: nw.expected_precision(),
            constant,
        }
    }

    #[inline]
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let d = Vector2::new(x[0], x[1]) - self.mean;
        self.constant - 0.5 * (d.transpose() * self.precision * d)[(0, 0)]
    }
}
