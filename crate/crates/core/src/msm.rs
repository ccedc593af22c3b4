//! Max-Sum-Mixture conversion of a Gaussian-mixture likelihood into a
//! 2-vector square-root cost for nonlinear least squares.
//!
//! The load-bearing identity is
//! `exp(-0.5 ||rho(r)||^2) = (1/zeta) * sum_k s_k exp(e_k(r))`
//! with `s_k = pi_k / sigma_k`, `e_k = -0.5 ((r - mu_k)/sigma_k)^2`, and
//! `zeta = K max_k(s_k) + c`, which keeps the expression under the square
//! root non-negative. All exponentials are handled in the log domain.

use crate::mixture::Gmm1D;
use nalgebra::Vector2;

/// Normalization offset `c` of the MSM cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsmConfig {
    pub c: f64,
}

impl Default for MsmConfig {
    fn default() -> Self {
        MsmConfig { c: 10.0 }
    }
}

// ln s_k + e_k(r) for every component.
fn log_scores(gmm: &Gmm1D, r: f64) -> Vec<f64> {
    gmm.components()
        .iter()
        .map(|c| {
            let z = (r - c.mean) / c.std;
            (c.weight / c.std).ln() - 0.5 * z * z
        })
        .collect()
}

/// Index of the dominant Gaussian mode, `argmax_k s_k exp(e_k(r))`,
/// evaluated in the log domain; ties break to the lowest index.
pub fn dominant_mode(gmm: &Gmm1D, r: f64) -> usize {
    let scores = log_scores(gmm, r);
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// ln zeta = ln(K max_k(s_k) + c).
fn ln_zeta(gmm: &Gmm1D, cfg: &MsmConfig) -> f64 {
    let max_s = gmm
        .components()
        .iter()
        .map(|c| c.weight / c.std)
        .fold(f64::NEG_INFINITY, f64::max);
    (gmm.num_components() as f64 * max_s + cfg.c).ln()
}

/// Square root of the mixture cost: `rho_1 = (r - mu_k~)/sigma_k~` and
/// `rho_2 = sqrt(-2 ln((1/zeta) sum_k s_k exp(e_k - e_k~)))`.
pub fn msm_cost(gmm: &Gmm1D, r: f64, cfg: &MsmConfig) -> Vector2<f64> {
    let k = dominant_mode(gmm, r);
    let comp = gmm.components()[k];
    let rho1 = (r - comp.mean) / comp.std;

    let z = (r - comp.mean) / comp.std;
    let e_dom = -0.5 * z * z;
    // ln sum_k s_k exp(e_k - e_dom) via log-sum-exp over ln s_k + e_k - e_dom
    let scores = log_scores(gmm, r);
    let shifted_max = scores
        .iter()
        .map(|s| s - e_dom)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = scores
        .iter()
        .map(|s| (s - e_dom - shifted_max).exp())
        .sum::<f64>()
        .ln()
        + shifted_max;
    let under_root = -2.0 * (lse - ln_zeta(gmm, cfg));
    Vector2::new(rho1, under_root.max(0.0).sqrt())
}

/// Derivative of [`msm_cost`] with respect to `r`, with the dominant mode
/// held fixed. When `rho_2` falls below 1e-8 its derivative is defined as 0
/// to guard the square-root singularity.
pub fn msm_jacobian(gmm: &Gmm1D, r: f64, cfg: &MsmConfig) -> Vector2<f64> {
    let k = dominant_mode(gmm, r);
    let comp = gmm.components()[k];
    let d_rho1 = 1.0 / comp.std;

    let rho = msm_cost(gmm, r, cfg);
    if rho[1] < 1e-8 {
        return Vector2::new(d_rho1, 0.0);
    }
    // rho_2^2 = 2 ln zeta - 2 L(r), L = ln sum_k s_k exp(e_k); the e_k~
    // anchoring cancels in the derivative, so dL/dr = sum_k w_k e_k' - 0
    // under frozen k~ is handled by differentiating L and e_k~ separately.
    let scores = log_scores(gmm, r);
    let max_score = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max_score).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut d_lse = 0.0;
    for (c, w) in gmm.components().iter().zip(&weights) {
        let e_prime = -(r - c.mean) / (c.std * c.std);
        d_lse += w / total * e_prime;
    }
    let e_dom_prime = -(r - comp.mean) / (comp.std * comp.std);
    // d(rho_2^2)/dr = -2 (dL/dr - e_dom') with L anchored at e_dom
    let d_rho2_sq = -2.0 * (d_lse - e_dom_prime);
    Vector2::new(d_rho1, d_rho2_sq / (2.0 * rho[1]))
}

/// Full cost `||rho(r)||^2`; equal to `2 ln zeta - 2 ln sum_k s_k exp(e_k)`
/// independent of the dominant-mode split.
pub fn msm_total_cost(gmm: &Gmm1D, r: f64, cfg: &MsmConfig) -> f64 {
    let rho = msm_cost(gmm, r, cfg);
    rho.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::GmmComponent;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mixture(rng: &mut impl Rng, k: usize) -> Gmm1D {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        Gmm1D::new(
            raw.iter()
                .map(|w| GmmComponent {
                    weight: w / total,
                    mean: rng.random::<f64>() * 2.0 - 1.0,
                    std: 0.02 + rng.random::<f64>() * 0.5,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dominant_mode_single_component() {
        let g = Gmm1D::single(0.3, 0.2);
        for r in [-5.0, 0.0, 5.0] {
            assert_eq!(dominant_mode(&g, r), 0);
        }
    }

    #[test]
    fn dominant_mode_nearest_mean_under_equal_scores() {
        let g = Gmm1D::new(vec![
            GmmComponent {
                weight: 0.5,
                mean: -1.0,
                std: 0.3,
            },
            GmmComponent {
                weight: 0.5,
                mean: 1.0,
                std: 0.3,
            },
        ])
        .unwrap();
        assert_eq!(dominant_mode(&g, -0.9), 0);
        assert_eq!(dominant_mode(&g, 0.9), 1);
        // exact tie at r = 0 breaks to the lowest index
        assert_eq!(dominant_mode(&g, 0.0), 0);
    }

    #[test]
    fn dominant_mode_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10_000 {
            let k = 1 + (rng.random::<u32>() % 4) as usize;
            let g = random_mixture(&mut rng, k);
            let r = rng.random::<f64>() * 4.0 - 2.0;
            let direct = g
                .components()
                .iter()
                .map(|c| {
                    let z = (r - c.mean) / c.std;
                    c.weight / c.std * (-0.5 * z * z).exp()
                })
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(dominant_mode(&g, r), direct);
        }
    }

    #[test]
    fn single_mode_second_entry_constant() {
        let g = Gmm1D::single(0.0, 1.0);
        let cfg = MsmConfig::default();
        let a = msm_cost(&g, 0.0, &cfg);
        let b = msm_cost(&g, 5.0, &cfg);
        assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-12);
        assert_abs_diff_eq!(a[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[0], 5.0, epsilon = 1e-15);
    }

    // Independent evaluation of 2 ln zeta - 2 ln sum s_k exp(e_k).
    fn direct_total_cost(g: &Gmm1D, r: f64, cfg: &MsmConfig) -> f64 {
        let terms: Vec<f64> = g
            .components()
            .iter()
            .map(|c| {
                let z = (r - c.mean) / c.std;
                (c.weight / c.std).ln() - 0.5 * z * z
            })
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        let max_s = g
            .components()
            .iter()
            .map(|c| c.weight / c.std)
            .fold(f64::NEG_INFINITY, f64::max);
        2.0 * (g.num_components() as f64 * max_s + cfg.c).ln() - 2.0 * lse
    }

    #[test]
    fn cost_identity_against_independent_lse() {
        let mut rng = ChaCha8Rng::seed_from_u64(555);
        let cfg = MsmConfig::default();
        for _ in 0..10_000 {
            let k = 1 + (rng.random::<u32>() % 4) as usize;
            let g = random_mixture(&mut rng, k);
            let r = rng.random::<f64>() * 6.0 - 3.0;
            let direct = direct_total_cost(&g, r, &cfg);
            let total = msm_total_cost(&g, r, &cfg);
            let rel = (total - direct).abs() / direct.abs().max(1e-12);
            assert!(rel < 1e-9, "identity violated: {total} vs {direct}");
        }
    }

    #[test]
    fn cost_monotone_in_likelihood_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(31337);
        let cfg = MsmConfig::default();
        for _ in 0..2000 {
            let g = random_mixture(&mut rng, 3);
            let ra = rng.random::<f64>() * 4.0 - 2.0;
            let rb = rng.random::<f64>() * 4.0 - 2.0;
            let score = |r: f64| {
                g.components()
                    .iter()
                    .map(|c| {
                        let z = (r - c.mean) / c.std;
                        c.weight / c.std * (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
            };
            if score(ra) > score(rb) * (1.0 + 1e-12) {
                assert!(msm_total_cost(&g, ra, &cfg) < msm_total_cost(&g, rb, &cfg));
            }
        }
    }

    #[test]
    fn jacobian_single_component() {
        let g = Gmm1D::single(0.2, 0.5);
        let j = msm_jacobian(&g, 1.7, &MsmConfig::default());
        assert_abs_diff_eq!(j[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        let cfg = MsmConfig::default();
        let mut checked = 0;
        while checked < 500 {
            let g = random_mixture(&mut rng, 3);
            let r = rng.random::<f64>() * 3.0 - 1.5;
            let h = 1e-6;
            // only test where the dominant mode is locally constant
            if dominant_mode(&g, r - h) != dominant_mode(&g, r + h) {
                continue;
            }
            let jac = msm_jacobian(&g, r, &cfg);
            let fp = msm_cost(&g, r + h, &cfg);
            let fm = msm_cost(&g, r - h, &cfg);
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                // denominator floor keeps the comparison above the FD
                // roundoff floor for near-zero derivatives
                let rel = (jac[i] - fd).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-5, "component {i}: analytic {} fd {fd}", jac[i]);
            }
            checked += 1;
        }
    }

    #[test]
    fn total_cost_smooth_across_mode_boundary() {
        // equal weights and stds: the argmax flips at the midpoint
        let g = Gmm1D::new(vec![
            GmmComponent {
                weight: 0.5,
                mean: -1.0,
                std: 0.3,
            },
            GmmComponent {
                weight: 0.5,
                mean: 1.0,
                std: 0.3,
            },
        ])
        .unwrap();
        let cfg = MsmConfig::default();
        // second-order one-sided stencils so the smooth curvature term does
        // not masquerade as a kink
        let h = 1e-5;
        let f = |r: f64| msm_total_cost(&g, r, &cfg);
        let right = (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h);
        let left = (3.0 * f(0.0) - 4.0 * f(-h) + f(-2.0 * h)) / (2.0 * h);
        assert!(
            (left - right).abs() < 1e-6,
            "one-sided derivatives differ: {left} vs {right}"
        );
    }

    #[test]
    fn gaussian_degeneration_constant_offset() {
        let g = Gmm1D::single(0.4, 0.25);
        let cfg = MsmConfig::default();
        let offsets: Vec<f64> = [-2.0, -0.3, 0.4, 1.9]
            .iter()
            .map(|&r| {
                let z = (r - 0.4) / 0.25;
                msm_total_cost(&g, r, &cfg) - z * z
            })
            .collect();
        for w in offsets.windows(2) {
            assert_abs_diff_eq!(w[0], w[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn never_nan_for_extreme_inputs() {
        let g = Gmm1D::new(vec![
            GmmComponent {
                weight: 0.999_999,
                mean: 0.0,
                std: 1e-6,
            },
            GmmComponent {
                weight: 1e-6,
                mean: 100.0,
                std: 1e3,
            },
        ])
        .unwrap();
        let cfg = MsmConfig::default();
        for r in [-1e6, -1.0, 0.0, 1.0, 1e6] {
            let rho = msm_cost(&g, r, &cfg);
            assert!(rho[0].is_finite() && rho[1].is_finite(), "rho {rho:?} at r={r}");
            assert!(rho[1] >= 0.0);
        }
    }
}
