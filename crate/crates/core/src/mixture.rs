//! Scalar Gaussian mixtures: density evaluation, seeded sampling, the
//! single-Gaussian baseline fit, and KL divergence between mixtures by
//! deterministic Simpson quadrature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;
use std::fmt;

/// Standard deviations are floored here wherever a mixture is produced, so
/// degenerate (zero-spread) residual sets keep downstream costs finite.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureError {
    /// Fitting needs at least two samples (or K samples for mixtures).
    TooFewSamples { needed: usize, got: usize },
    /// Weights/means/stds violate the mixture invariants.
    InvalidMixture,
}

impl fmt::Display for MixtureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixtureError::TooFewSamples { needed, got } => {
                write!(f, "need at least {needed} samples, got {got}")
            }
            MixtureError::InvalidMixture => write!(f, "invalid mixture parameters"),
        }
    }
}

impl std::error::Error for MixtureError {}

/// One Gaussian component: weight, mean (m), standard deviation (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// A scalar Gaussian mixture with K >= 1 components.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm1D {
    components: Vec<GmmComponent>,
}

impl Gmm1D {
    /// Validates the invariants: weights sum to 1 (1e-9), are non-negative,
    /// and every standard deviation exceeds 1e-9.
    pub fn new(components: Vec<GmmComponent>) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::InvalidMixture);
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MixtureError::InvalidMixture);
        }
        for c in &components {
            if !(c.weight >= 0.0 && c.std > 1e-9 && c.mean.is_finite() && c.std.is_finite()) {
                return Err(MixtureError::InvalidMixture);
            }
        }
        Ok(Gmm1D { components })
    }

    /// Single standard normal-style component.
    pub fn single(mean: f64, std: f64) -> Self {
        Gmm1D::new(vec![GmmComponent {
            weight: 1.0,
            mean,
            std,
        }])
        .expect("single component is always valid")
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Canonical order for comparison and serialization: ascending mean.
    pub fn canonicalized(mut self) -> Self {
        self.components
            .sort_by(|a, b| a.mean.partial_cmp(&b.mean).expect("finite means"));
        self
    }

    /// Mixture mean.
    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }
}

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * TAU.sqrt())
}

/// Mixture density at `r`.
pub fn gmm_pdf(gmm: &Gmm1D, r: f64) -> f64 {
    gmm.components()
        .iter()
        .map(|c| c.weight * normal_pdf(r, c.mean, c.std))
        .sum()
}

/// One draw from the mixture: component chosen by weight, then a Gaussian
/// draw. Consumes exactly one uniform plus one normal variate.
pub fn gmm_draw<R: Rng>(gmm: &Gmm1D, rng: &mut R) -> f64 {
    let mut u: f64 = rng.random();
    let mut comp = gmm.components().len() - 1;
    for (k, c) in gmm.components().iter().enumerate() {
        if u < c.weight {
            comp = k;
            break;
        }
        u -= c.weight;
    }
    let c = gmm.components()[comp];
    let normal = Normal::new(c.mean, c.std).expect("validated std");
    normal.sample(rng)
}

/// Draws `n` samples, fully determined by the seed.
pub fn gmm_sample(gmm: &Gmm1D, seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| gmm_draw(gmm, &mut rng)).collect()
}

/// Single-Gaussian baseline fit: sample mean and population standard
/// deviation (denominator N), floored at [`SIGMA_FLOOR`].
pub fn fit_gauss(residuals: &[f64]) -> Result<Gmm1D, MixtureError> {
    if residuals.len() < 2 {
        return Err(MixtureError::TooFewSamples {
            needed: 2,
            got: residuals.len(),
        });
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(Gmm1D::single(mean, var.sqrt().max(SIGMA_FLOOR)))
}

/// Quadrature grid for [`gmm_kl`]: +-`span_sigmas` around the union of the
/// two mixtures' component means, `points` Simpson nodes (odd).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub span_sigmas: f64,
    pub points: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            span_sigmas: 10.0,
            points: 4001,
        }
    }
}

/// KL divergence `KL(p || q)` in nats by composite Simpson quadrature.
/// Densities are clamped below at 1e-300 inside the logarithm.
pub fn gmm_kl(p: &Gmm1D, q: &Gmm1D, quad: &QuadratureConfig) -> f64 {
    assert!(quad.points >= 3 && quad.points % 2 == 1, "points must be odd >= 3");
    assert!(quad.span_sigmas > 0.0);
    let all = p.components().iter().chain(q.components().iter());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_std: f64 = 0.0;
    for c in all {
        lo = lo.min(c.mean);
        hi = hi.max(c.mean);
        max_std = max_std.max(c.std);
    }
    let a = lo - quad.span_sigmas * max_std;
    let b = hi + quad.span_sigmas * max_std;
    let h = (b - a) / (quad.points - 1) as f64;

    let integrand = |x: f64| {
        let px = gmm_pdf(p, x).max(1e-300);
        let qx = gmm_pdf(q, x).max(1e-300);
        px * (px.ln() - qx.ln())
    };
    let mut sum = integrand(a) + integrand(b);
    for i in 1..quad.points - 1 {
        let x = a + h * i as f64;
        sum += integrand(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}
