//! Uncertainty-aware variational-Bayes Gaussian-mixture learning over noisy
//! residual samples, with the conventional fit recovered exactly at zero
//! sample uncertainty.
//!
//! Each observed residual `r_n` is treated as a draw from
//! `N(r_n | eta_n, phi_n)` around a latent noise-free residual `eta_n`; the
//! latent residuals follow the mixture being learned. The variational family
//! factorizes as `q(E|Z) q(Z) q(Pi) q(M, Lambda)` with a Dirichlet prior on
//! the weights and a Gaussian-Wishart (Gamma in one dimension, shape nu/2,
//! rate 1/(2w)) prior per component.
//!
//! At `phi = 0` the observation and latent-entropy expectations are
//! individually divergent; they are always evaluated jointly through their
//! closed-form combination, which is finite and exact for all `phi >= 0`.

use crate::mixture::{Gmm1D, GmmComponent, MixtureError, SIGMA_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

/// An observed residual with its propagated variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSample {
    pub r: f64,
    pub phi: f64,
}

/// Prior hyperparameters of the Dirichlet + Gaussian-Wishart model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbPriors {
    pub alpha0: f64,
    pub beta0: f64,
    pub m0: f64,
    pub w0: f64,
    pub nu0: f64,
}

impl VbPriors {
    /// Defaults with the Wishart scale tied to the empirical residual
    /// variance so `E[lambda] = nu0 * w0` matches the sample precision.
    pub fn data_driven(residuals: &[f64]) -> Self {
        let n = residuals.len().max(1) as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let nu0 = 2.0;
        VbPriors {
            alpha0: 1.0,
            beta0: 1.0,
            m0: 0.0,
            w0: 1.0 / (nu0 * var.max(1e-12)),
            nu0,
        }
    }
}

/// Sweeping parameters for the E/M iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbConfig {
    pub max_sweeps: usize,
    /// Relative ELBO-change convergence tolerance; zero or negative runs
    /// all sweeps.
    pub tol: f64,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            max_sweeps: 200,
            tol: 1e-6,
        }
    }
}

/// Variational posterior state: per-component Dirichlet and Gaussian-Wishart
/// parameters, per-sample responsibilities and latent-residual moments.
#[derive(Debug, Clone, PartialEq)]
pub struct VbPosterior {
    pub num_components: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub m: Vec<f64>,
    pub w: Vec<f64>,
    pub nu: Vec<f64>,
    /// Responsibilities, row-major `n x k`.
    pub gamma: Vec<f64>,
    /// Latent residual posterior means, row-major `n x k`.
    pub tau: Vec<f64>,
    /// Latent residual posterior variances, row-major `n x k`.
    pub psi: Vec<f64>,
    /// Effective counts `N_k`.
    pub counts: Vec<f64>,
    pub elbo_trace: Vec<f64>,
}

impl VbPosterior {
    pub fn gamma_at(&self, n: usize, k: usize) -> f64 {
        self.gamma[n * self.num_components + k]
    }
}

/// Posterior of the latent noise-free residual given assignment to one
/// component: `psi = phi / (1 + phi nu w)` and the division-free
/// `tau = (r + phi nu w m) / (1 + phi nu w)`, exact at `phi = 0`.
pub fn latent_residual_posterior(
    sample: &ResidualSample,
    m_k: f64,
    w_k: f64,
    nu_k: f64,
) -> (f64, f64) {
    let lam = nu_k * w_k;
    let s = 1.0 + sample.phi * lam;
    let tau = (sample.r + sample.phi * lam * m_k) / s;
    let psi = sample.phi / s;
    (tau, psi)
}

// Joint value of E[ln N(r|eta,phi)] - E[ln N(eta|tau,psi)] under
// q(eta) = N(tau, psi) with (tau, psi) freshly optimal for (m_k, w_k, nu_k).
// Both terms diverge as phi -> 0 but the combination is finite; this closed
// form is exact for all phi >= 0.
fn observation_minus_entropy(sample: &ResidualSample, m_k: f64, w_k: f64, nu_k: f64) -> f64 {
    let lam = nu_k * w_k;
    let s = 1.0 + sample.phi * lam;
    let d = sample.r - m_k;
    -0.5 * s.ln() - 0.5 * (sample.phi * lam * lam * d * d / (s * s) + 1.0 / s) + 0.5
}

// Same combination evaluated at stored latent moments, which may have been
// produced under older Gaussian-Wishart parameters. At phi = 0 the stored
// moments are always (r, 0) and the joint limit is exactly zero.
fn observation_minus_entropy_stored(sample: &ResidualSample, tau: f64, psi: f64) -> f64 {
    if sample.phi == 0.0 {
        return 0.0;
    }
    let d = sample.r - tau;
    0.5 * (psi / sample.phi).ln() - (d * d + psi) / (2.0 * sample.phi) + 0.5
}

/// One variational E-step: refreshes the latent-residual moments from the
/// current Gaussian-Wishart posterior, then the responsibilities.
pub fn e_step(samples: &[ResidualSample], post: &mut VbPosterior) {
    let k = post.num_components;
    let alpha_sum: f64 = post.alpha.iter().sum();
    let dig_sum = digamma(alpha_sum);
    let e_ln_pi: Vec<f64> = post.alpha.iter().map(|a| digamma(*a) - dig_sum).collect();
    let e_ln_lambda: Vec<f64> = (0..k)
        .map(|j| digamma(post.nu[j] / 2.0) + 2.0f64.ln() + post.w[j].ln())
        .collect();

    let mut log_rho = vec![0.0; k];
    for (n, sample) in samples.iter().enumerate() {
        for j in 0..k {
            let (tau, psi) = latent_residual_posterior(sample, post.m[j], post.w[j], post.nu[j]);
            post.tau[n * k + j] = tau;
            post.psi[n * k + j] = psi;
            let lam = post.nu[j] * post.w[j];
            let d = tau - post.m[j];
            let gauss = 0.5 * e_ln_lambda[j]
                - 0.5 * (2.0 * PI).ln()
                - 0.5 * (lam * (d * d + psi) + 1.0 / post.beta[j]);
            log_rho[j] = observation_minus_entropy(sample, post.m[j], post.w[j], post.nu[j])
                + gauss
                + e_ln_pi[j];
        }
        let max = log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..k {
            let v = (log_rho[j] - max).exp();
            post.gamma[n * k + j] = v;
            total += v;
        }
        for j in 0..k {
            post.gamma[n * k + j] /= total;
        }
    }
}

/// One variational M-step: conjugate parameter updates from the current
/// responsibilities and latent-residual moments. Components with effective
/// count below 1e-12 collapse to their prior.
pub fn m_step(samples: &[ResidualSample], post: &mut VbPosterior, priors: &VbPriors) {
    let k = post.num_components;
    for j in 0..k {
        let mut n_k = 0.0;
        let mut tau_sum = 0.0;
        for n in 0..samples.len() {
            n_k += post.gamma[n * k + j];
            tau_sum += post.gamma[n * k + j] * post.tau[n * k + j];
        }
        let (tau_bar, s_k) = if n_k < 1e-12 {
            (priors.m0, 0.0)
        } else {
            let tau_bar = tau_sum / n_k;
            let mut spread = 0.0;
            let mut psi_sum = 0.0;
            for n in 0..samples.len() {
                let g = post.gamma[n * k + j];
                let d = post.tau[n * k + j] - tau_bar;
                spread += g * d * d;
                psi_sum += g * post.psi[n * k + j];
            }
            (tau_bar, (spread + psi_sum) / n_k)
        };
        post.counts[j] = n_k;
        post.alpha[j] = priors.alpha0 + n_k;
        post.beta[j] = priors.beta0 + n_k;
        post.m[j] = (priors.beta0 * priors.m0 + n_k * tau_bar) / post.beta[j];
        post.nu[j] = priors.nu0 + n_k;
        let d0 = tau_bar - priors.m0;
        let w_inv =
            1.0 / priors.w0 + n_k * s_k + priors.beta0 * n_k * d0 * d0 / (priors.beta0 + n_k);
        post.w[j] = 1.0 / w_inv;
    }
}

// ln of the 1-D Wishart normalization B(w, nu).
fn ln_wishart_b(w: f64, nu: f64) -> f64 {
    -(nu / 2.0) * (2.0 * w).ln() - ln_gamma(nu / 2.0)
}

/// Evidence lower bound of the current posterior state.
pub fn elbo(samples: &[ResidualSample], post: &VbPosterior, priors: &VbPriors) -> f64 {
    let k = post.num_components;
    let alpha_sum: f64 = post.alpha.iter().sum();
    let dig_sum = digamma(alpha_sum);
    let e_ln_pi: Vec<f64> = post.alpha.iter().map(|a| digamma(*a) - dig_sum).collect();
    let e_ln_lambda: Vec<f64> = (0..k)
        .map(|j| digamma(post.nu[j] / 2.0) + 2.0f64.ln() + post.w[j].ln())
        .collect();

    let mut total = 0.0;
    // observation likelihood and latent entropy jointly, then the mixture
    // likelihood, assignment likelihood, and assignment entropy
    for (n, sample) in samples.iter().enumerate() {
        for j in 0..k {
            let g = post.gamma[n * k + j];
            if g <= 0.0 {
                continue;
            }
            let tau = post.tau[n * k + j];
            let psi = post.psi[n * k + j];
            let lam = post.nu[j] * post.w[j];
            let d = tau - post.m[j];
            let gauss = 0.5 * e_ln_lambda[j]
                - 0.5 * (2.0 * PI).ln()
                - 0.5 * (lam * (d * d + psi) + 1.0 / post.beta[j]);
            total += g
                * (observation_minus_entropy_stored(sample, tau, psi)
                    + gauss
                    + e_ln_pi[j]
                    - g.ln());
        }
    }
    // Dirichlet prior minus its variational counterpart
    let k_f = k as f64;
    total += ln_gamma(k_f * priors.alpha0) - k_f * ln_gamma(priors.alpha0);
    total -= ln_gamma(alpha_sum) - post.alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>();
    for j in 0..k {
        total += (priors.alpha0 - post.alpha[j]) * e_ln_pi[j];
    }
    // Gaussian-Wishart prior minus its variational counterpart
    for j in 0..k {
        let lam = post.nu[j] * post.w[j];
        let dm = post.m[j] - priors.m0;
        let prior_n = 0.5
            * (priors.beta0.ln() - (2.0 * PI).ln() + e_ln_lambda[j]
                - priors.beta0 * (lam * dm * dm + 1.0 / post.beta[j]));
        let prior_w = ln_wishart_b(priors.w0, priors.nu0)
            + (priors.nu0 - 2.0) / 2.0 * e_ln_lambda[j]
            - lam / (2.0 * priors.w0);
        let q_n = 0.5 * (post.beta[j].ln() - (2.0 * PI).ln() + e_ln_lambda[j] - 1.0);
        let q_w = ln_wishart_b(post.w[j], post.nu[j])
            + (post.nu[j] - 2.0) / 2.0 * e_ln_lambda[j]
            - post.nu[j] / 2.0;
        total += prior_n + prior_w - q_n - q_w;
    }
    total
}

// k-means++ seeding on the raw residual values, then hard assignment.
fn kmeanspp_hard_init(values: &[f64], k: usize, seed: u64) -> Vec<usize> {
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![values[rng.random_range(0..n)]];
    while centers.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|v| {
                centers
                    .iter()
                    .map(|c| (v - c) * (v - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            centers.push(values[rng.random_range(0..n)]);
            continue;
        }
        let mut u = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                chosen = i;
                break;
            }
            u -= d;
        }
        centers.push(values[chosen]);
    }
    values
        .iter()
        .map(|v| {
            let mut best = 0;
            for (j, c) in centers.iter().enumerate().skip(1) {
                if (v - c).abs() < (v - centers[best]).abs() {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Extracts the point-estimate mixture by posterior expectation:
/// `pi_k = alpha_k / sum(alpha)`, `mu_k = m_k`, `sigma_k = 1/sqrt(nu_k w_k)`
/// floored at [`SIGMA_FLOOR`], in canonical ascending-mean order.
pub fn extract_mixture(post: &VbPosterior) -> Gmm1D {
    let alpha_sum: f64 = post.alpha.iter().sum();
    let comps = (0..post.num_components)
        .map(|j| GmmComponent {
            weight: post.alpha[j] / alpha_sum,
            mean: post.m[j],
            std: (1.0 / (post.nu[j] * post.w[j]).sqrt()).max(SIGMA_FLOOR),
        })
        .collect();
    Gmm1D::new(comps)
        .expect("posterior expectation is a valid mixture")
        .canonicalized()
}

/// Uncertainty-aware VB mixture fit over noisy residual samples.
///
/// Deterministic given `(samples, seed)`: responsibilities are initialized
/// by k-means++ hard assignments on the raw residuals, the first M-step
/// treats observations as exact, then E/M sweeps run until the relative
/// ELBO change drops below `cfg.tol` or `cfg.max_sweeps` is reached.
pub fn fit_ugmm(
    samples: &[ResidualSample],
    num_components: usize,
    priors: &VbPriors,
    seed: u64,
    cfg: &VbConfig,
) -> Result<(VbPosterior, Gmm1D), MixtureError> {
    assert!(num_components >= 1);
    if samples.len() < num_components {
        return Err(MixtureError::TooFewSamples {
            needed: num_components,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let k = num_components;
    let values: Vec<f64> = samples.iter().map(|s| s.r).collect();
    let assignment = kmeanspp_hard_init(&values, k, seed);

    let mut post = VbPosterior {
        num_components: k,
        alpha: vec![priors.alpha0; k],
        beta: vec![priors.beta0; k],
        m: vec![priors.m0; k],
        w: vec![priors.w0; k],
        nu: vec![priors.nu0; k],
        gamma: vec![0.0; n * k],
        tau: values
            .iter()
            .flat_map(|v| std::iter::repeat(*v).take(k))
            .collect(),
        psi: vec![0.0; n * k],
        counts: vec![0.0; k],
        elbo_trace: Vec::new(),
    };
    for (nn, a) in assignment.iter().enumerate() {
        post.gamma[nn * k + a] = 1.0;
    }
    m_step(samples, &mut post, priors);

    let mut prev = f64::NEG_INFINITY;
    for _ in 0..cfg.max_sweeps {
        e_step(samples, &mut post);
        m_step(samples, &mut post, priors);
        let l = elbo(samples, &post, priors);
        post.elbo_trace.push(l);
        if cfg.tol > 0.0 && prev.is_finite() && (l - prev).abs() <= cfg.tol * prev.abs().max(1.0)
        {
            break;
        }
        prev = l;
    }
    let mixture = extract_mixture(&post);
    Ok((post, mixture))
}

/// Conventional fit that uses the residual values directly: identical to
/// [`fit_ugmm`] with every sample variance set to zero.
pub fn fit_cgmm(
    residuals: &[f64],
    num_components: usize,
    priors: &VbPriors,
    seed: u64,
    cfg: &VbConfig,
) -> Result<(VbPosterior, Gmm1D), MixtureError> {
    let samples: Vec<ResidualSample> = residuals
        .iter()
        .map(|&r| ResidualSample { r, phi: 0.0 })
        .collect();
    fit_ugmm(&samples, num_components, priors, seed, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{gmm_kl, gmm_sample, QuadratureConfig};
    use approx::assert_abs_diff_eq;

    fn unit_priors() -> VbPriors {
        VbPriors {
            alpha0: 1.0,
            beta0: 1.0,
            m0: 0.0,
            w0: 0.5,
            nu0: 2.0,
        }
    }

    #[test]
    fn latent_posterior_zero_phi() {
        let s = ResidualSample { r: 0.7, phi: 0.0 };
        let (tau, psi) = latent_residual_posterior(&s, 0.0, 1.0, 2.0);
        assert_eq!(tau, 0.7);
        assert_eq!(psi, 0.0);
    }

    #[test]
    fn latent_posterior_uninformative_limit() {
        let s = ResidualSample { r: 5.0, phi: 1e12 };
        let (tau, psi) = latent_residual_posterior(&s, -0.3, 2.0, 3.0);
        assert_abs_diff_eq!(tau, -0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(psi, 1.0 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn latent_posterior_hand_value() {
        let s = ResidualSample { r: 1.0, phi: 1.0 };
        // nu * w = 1
        let (tau, psi) = latent_residual_posterior(&s, 0.0, 0.5, 2.0);
        assert_abs_diff_eq!(tau, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(psi, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn shrinkage_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = ResidualSample {
                r: rng.random::<f64>() * 4.0 - 2.0,
                phi: rng.random::<f64>() * 3.0,
            };
            let m = rng.random::<f64>() - 0.5;
            let w = 0.1 + rng.random::<f64>();
            let nu = 2.0 + rng.random::<f64>() * 5.0;
            let (tau, psi) = latent_residual_posterior(&s, m, w, nu);
            assert!(psi <= s.phi + 1e-15);
            assert!(psi <= 1.0 / (nu * w) + 1e-15);
            let (lo, hi) = if s.r < m { (s.r, m) } else { (m, s.r) };
            assert!(tau >= lo - 1e-12 && tau <= hi + 1e-12);
        }
    }

    #[test]
    fn e_step_single_component_is_one() {
        let samples: Vec<ResidualSample> = (0..10)
            .map(|i| ResidualSample {
                r: i as f64 * 0.1,
                phi: 0.2,
            })
            .collect();
        let (post, _) = fit_ugmm(&samples, 1, &unit_priors(), 3, &VbConfig::default()).unwrap();
        for n in 0..samples.len() {
            assert_abs_diff_eq!(post.gamma_at(n, 0), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn e_step_symmetric_split() {
        let samples = vec![ResidualSample { r: 0.0, phi: 0.0 }];
        let mut post = VbPosterior {
            num_components: 2,
            alpha: vec![2.0, 2.0],
            beta: vec![3.0, 3.0],
            m: vec![-1.0, 1.0],
            w: vec![0.5, 0.5],
            nu: vec![4.0, 4.0],
            gamma: vec![0.0; 2],
            tau: vec![0.0; 2],
            psi: vec![0.0; 2],
            counts: vec![0.0; 2],
            elbo_trace: vec![],
        };
        e_step(&samples, &mut post);
        assert_abs_diff_eq!(post.gamma_at(0, 0), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(post.gamma_at(0, 1), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn responsibilities_normalize_and_counts_conserve() {
        let truth = Gmm1D::new(vec![
            GmmComponent {
                weight: 0.7,
                mean: -0.2,
                std: 0.1,
            },
            GmmComponent {
                weight: 0.3,
                mean: 0.4,
                std: 0.2,
            },
        ])
        .unwrap();
        let values = gmm_sample(&truth, 5, 300);
        let samples: Vec<ResidualSample> = values
            .iter()
            .map(|&r| ResidualSample { r, phi: 0.01 })
            .collect();
        let (post, _) =
            fit_ugmm(&samples, 3, &VbPriors::data_driven(&values), 5, &VbConfig::default())
                .unwrap();
        for n in 0..samples.len() {
            let total: f64 = (0..3).map(|j| post.gamma_at(n, j)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
        let count_sum: f64 = post.counts.iter().sum();
        assert_abs_diff_eq!(count_sum, samples.len() as f64, epsilon = 1e-9);
    }

    #[test]
    fn empty_component_collapses_to_prior() {
        let samples = vec![
            ResidualSample { r: 0.1, phi: 0.0 },
            ResidualSample { r: 0.2, phi: 0.0 },
        ];
        let priors = unit_priors();
        let mut post = VbPosterior {
            num_components: 2,
            alpha: vec![0.0; 2],
            beta: vec![0.0; 2],
            m: vec![0.0; 2],
            w: vec![0.0; 2],
            nu: vec![0.0; 2],
            gamma: vec![1.0, 0.0, 1.0, 0.0],
            tau: vec![0.1, 0.1, 0.2, 0.2],
            psi: vec![0.0; 4],
            counts: vec![0.0; 2],
            elbo_trace: vec![],
        };
        m_step(&samples, &mut post, &priors);
        assert_eq!(post.alpha[1], priors.alpha0);
        assert_eq!(post.beta[1], priors.beta0);
        assert_eq!(post.m[1], priors.m0);
        assert_eq!(post.nu[1], priors.nu0);
        assert_abs_diff_eq!(post.w[1], priors.w0, epsilon = 1e-15);
    }

    #[test]
    fn m_step_weak_priors_moment_match() {
        let values = gmm_sample(&Gmm1D::single(0.4, 0.3), 9, 5000);
        let samples: Vec<ResidualSample> = values
            .iter()
            .map(|&r| ResidualSample { r, phi: 0.0 })
            .collect();
        let priors = VbPriors {
            alpha0: 1.0,
            beta0: 1e-10,
            m0: 0.0,
            w0: 1e10,
            nu0: 1e-10,
        };
        let mut post = VbPosterior {
            num_components: 1,
            alpha: vec![0.0],
            beta: vec![0.0],
            m: vec![0.0],
            w: vec![0.0],
            nu: vec![0.0],
            gamma: vec![1.0; samples.len()],
            tau: values.clone(),
            psi: vec![0.0; samples.len()],
            counts: vec![0.0],
            elbo_trace: vec![],
        };
        m_step(&samples, &mut post, &priors);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert_abs_diff_eq!(post.m[0], mean, epsilon = 1e-6);
        assert_abs_diff_eq!(1.0 / (post.nu[0] * post.w[0]), var, epsilon = 1e-6);
    }

    #[test]
    fn m_step_w_decomposition() {
        let values = vec![-0.5, -0.1, 0.3, 0.8];
        let samples: Vec<ResidualSample> = values
            .iter()
            .map(|&r| ResidualSample { r, phi: 0.1 })
            .collect();
        let priors = unit_priors();
        let (post, _) =
            fit_ugmm(&samples, 2, &priors, 1, &VbConfig { max_sweeps: 3, tol: 0.0 }).unwrap();
        // recompute w_k^-1 from its three summands independently
        for j in 0..2 {
            let k = 2;
            let n_k = post.counts[j];
            if n_k < 1e-12 {
                continue;
            }
            let tau_bar = (0..values.len())
                .map(|n| post.gamma_at(n, j) * post.tau[n * k + j])
                .sum::<f64>()
                / n_k;
            let spread = (0..values.len())
                .map(|n| {
                    let d = post.tau[n * k + j] - tau_bar;
                    post.gamma_at(n, j) * d * d
                })
                .sum::<f64>()
                / n_k;
            let psi_avg = (0..values.len())
                .map(|n| post.gamma_at(n, j) * post.psi[n * k + j])
                .sum::<f64>()
                / n_k;
            let s_k = spread + psi_avg;
            let d0 = tau_bar - priors.m0;
            let w_inv = 1.0 / priors.w0
                + n_k * s_k
                + priors.beta0 * n_k * d0 * d0 / (priors.beta0 + n_k);
            assert_abs_diff_eq!(1.0 / post.w[j], w_inv, epsilon = 1e-12);
        }
    }

    #[test]
    fn elbo_monotone_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let n = 50 + (trial * 13) % 100;
            let samples: Vec<ResidualSample> = (0..n)
                .map(|_| ResidualSample {
                    r: rng.random::<f64>() * 2.0 - 1.0,
                    phi: rng.random::<f64>() * 0.2,
                })
                .collect();
            let values: Vec<f64> = samples.iter().map(|s| s.r).collect();
            let priors = VbPriors::data_driven(&values);
            let (post, _) = fit_ugmm(
                &samples,
                3,
                &priors,
                trial as u64,
                &VbConfig {
                    max_sweeps: 200,
                    tol: 0.0,
                },
            )
            .unwrap();
            for pair in post.elbo_trace.windows(2) {
                let slack = 1e-8 * pair[0].abs().max(1.0);
                assert!(
                    pair[1] >= pair[0] - slack,
                    "ELBO decreased: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn elbo_equals_conjugate_evidence_for_single_sample() {
        // K = 1, phi = 0: one exact conjugate update makes q the true
        // posterior, so the ELBO must equal the Student-t log evidence.
        let priors = VbPriors {
            alpha0: 1.5,
            beta0: 2.0,
            m0: 0.3,
            w0: 0.8,
            nu0: 3.0,
        };
        let r = 1.7;
        let samples = vec![ResidualSample { r, phi: 0.0 }];
        let mut post = VbPosterior {
            num_components: 1,
            alpha: vec![priors.alpha0],
            beta: vec![priors.beta0],
            m: vec![priors.m0],
            w: vec![priors.w0],
            nu: vec![priors.nu0],
            gamma: vec![1.0],
            tau: vec![r],
            psi: vec![0.0],
            counts: vec![0.0],
            elbo_trace: vec![],
        };
        m_step(&samples, &mut post, &priors);
        let l = elbo(&samples, &post, &priors);

        // Student-t predictive of the Normal-Gamma model
        let dof = priors.nu0;
        let precision = priors.nu0 * priors.w0 * priors.beta0 / (1.0 + priors.beta0);
        let z2 = precision * (r - priors.m0) * (r - priors.m0);
        let log_t = ln_gamma((dof + 1.0) / 2.0) - ln_gamma(dof / 2.0)
            + 0.5 * (precision / (PI * dof)).ln()
            - (dof + 1.0) / 2.0 * (1.0 + z2 / dof).ln();
        assert_abs_diff_eq!(l, log_t, epsilon = 1e-8);
    }

    #[test]
    fn fit_single_gaussian_with_three_components() {
        let truth = Gmm1D::single(0.1, 0.25);
        let values = gmm_sample(&truth, 21, 5000);
        let samples: Vec<ResidualSample> = values
            .iter()
            .map(|&r| ResidualSample { r, phi: 0.0 })
            .collect();
        let (_, est) = fit_ugmm(
            &samples,
            3,
            &VbPriors::data_driven(&values),
            21,
            &VbConfig::default(),
        )
        .unwrap();
        let kl = gmm_kl(&truth, &est, &QuadratureConfig::default());
        assert!(kl < 0.05, "KL {kl}");
    }

    #[test]
    fn cgmm_recovers_separated_mixture() {
        let truth = Gmm1D::new(vec![
            GmmComponent {
                weight: 0.5,
                mean: -1.0,
                std: 0.1,
            },
            GmmComponent {
                weight: 0.5,
                mean: 1.0,
                std: 0.1,
            },
        ])
        .unwrap();
        let values = gmm_sample(&truth, 33, 5000);
        let (post, est) = fit_cgmm(
            &values,
            2,
            &VbPriors::data_driven(&values),
            33,
            &VbConfig::default(),
        )
        .unwrap();
        let kl = gmm_kl(&truth, &est, &QuadratureConfig::default());
        assert!(kl < 0.02, "KL {kl}");
        for pair in post.elbo_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-8 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn cgmm_is_ugmm_at_zero_phi_bitwise() {
        let values = gmm_sample(&Gmm1D::single(0.0, 0.3), 4, 500);
        let samples: Vec<ResidualSample> = values
            .iter()
            .map(|&r| ResidualSample { r, phi: 0.0 })
            .collect();
        let priors = VbPriors::data_driven(&values);
        let cfg = VbConfig::default();
        let (pa, ga) = fit_ugmm(&samples, 3, &priors, 9, &cfg).unwrap();
        let (pb, gb) = fit_cgmm(&values, 3, &priors, 9, &cfg).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ga, gb);
    }

    #[test]
    fn too_few_samples_rejected() {
        let samples = vec![ResidualSample { r: 0.0, phi: 0.0 }];
        assert!(matches!(
            fit_ugmm(&samples, 3, &unit_priors(), 0, &VbConfig::default()),
            Err(MixtureError::TooFewSamples { .. })
        ));
    }
}
