//! Pose algebra for 1-D, 2-D and rigid 3-D states.
//!
//! The 3-D variant is a full SE(3) element; the 1-D/2-D variants are flat
//! vector states whose retraction is plain addition, so the solver and the
//! sigma-point machinery treat all three uniformly through [`Pose`].
//!
//! Tangent ordering for the 3-D variant is (translation, rotation)
//! throughout the crate, matching the dataset/trajectory file layouts.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector2, Vector3};
use std::f64::consts::PI;
use std::fmt;

/// Tangent-space increment; length 1, 2 or 6 depending on the pose variant.
pub type Tangent = DVector<f64>;

/// Symmetric PSD matrix sized to the tangent dimension.
pub type Covariance = DMatrix<f64>;

/// Errors from the geometry layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryError {
    /// Rotation angle within 1e-6 of pi; the log branch is ambiguous there.
    AngleNearPi,
    /// Cholesky factorization failed even after jitter.
    CovarianceNotPsd,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::AngleNearPi => write!(f, "rotation angle too close to pi for log"),
            GeometryError::CovarianceNotPsd => {
                write!(f, "covariance is not positive semi-definite")
            }
        }
    }
}

impl std::error::Error for GeometryError {}

/// A robot state: scalar position, planar position, or SE(3) pose.
#[derive(Debug, Clone, PartialEq)]
pub enum Pose {
    Scalar1D(f64),
    Planar2D(Vector2<f64>),
    Rigid3D {
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    },
}

impl Pose {
    /// Identity element for the given spatial dimension (1, 2 or 3).
    pub fn identity(dim: usize) -> Self {
        match dim {
            1 => Pose::Scalar1D(0.0),
            2 => Pose::Planar2D(Vector2::zeros()),
            3 => Pose::Rigid3D {
                rotation: Matrix3::identity(),
                translation: Vector3::zeros(),
            },
            _ => panic!("unsupported dimension {dim}"),
        }
    }

    /// Spatial dimension of the state (1, 2 or 3).
    pub fn dim(&self) -> usize {
        match self {
            Pose::Scalar1D(_) => 1,
            Pose::Planar2D(_) => 2,
            Pose::Rigid3D { .. } => 3,
        }
    }

    /// Degrees of freedom of the tangent space (1, 2 or 6).
    pub fn dof(&self) -> usize {
        match self {
            Pose::Scalar1D(_) => 1,
            Pose::Planar2D(_) => 2,
            Pose::Rigid3D { .. } => 6,
        }
    }

    /// Translation components as a dynamic vector (what RMSE is taken over).
    pub fn position(&self) -> DVector<f64> {
        match self {
            Pose::Scalar1D(x) => DVector::from_vec(vec![*x]),
            Pose::Planar2D(p) => DVector::from_column_slice(p.as_slice()),
            Pose::Rigid3D { translation, .. } => DVector::from_column_slice(translation.as_slice()),
        }
    }

    /// Group composition. For flat variants this is vector addition.
    pub fn compose(&self, other: &Pose) -> Pose {
        match (self, other) {
            (Pose::Scalar1D(a), Pose::Scalar1D(b)) => Pose::Scalar1D(a + b),
            (Pose::Planar2D(a), Pose::Planar2D(b)) => Pose::Planar2D(a + b),
            (
                Pose::Rigid3D {
                    rotation: c1,
                    translation: t1,
                },
                Pose::Rigid3D {
                    rotation: c2,
                    translation: t2,
                },
            ) => Pose::Rigid3D {
                rotation: c1 * c2,
                translation: c1 * t2 + t1,
            },
            _ => panic!("pose variant mismatch in compose"),
        }
    }

    /// Group inverse. For flat variants this is negation.
    pub fn inverse(&self) -> Pose {
        match self {
            Pose::Scalar1D(a) => Pose::Scalar1D(-a),
            Pose::Planar2D(a) => Pose::Planar2D(-a),
            Pose::Rigid3D {
                rotation,
                translation,
            } => {
                let rt = rotation.transpose();
                Pose::Rigid3D {
                    rotation: rt,
                    translation: -(rt * translation),
                }
            }
        }
    }

    /// Frobenius distance of `R^T R` from the identity.
    pub fn orthonormality_drift(&self) -> f64 {
        match self {
            Pose::Rigid3D { rotation, .. } => {
                (rotation.transpose() * rotation - Matrix3::identity()).norm()
            }
            _ => 0.0,
        }
    }
}

/// Skew-symmetric matrix of a 3-vector.
pub fn so3_hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`so3_hat`] on skew-symmetric input.
pub fn so3_vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

// (1 - cos t) / t^2 with series fallback near zero.
fn coeff_one_minus_cos(theta: f64) -> f64 {
    if theta < 1e-4 {
        let t2 = theta * theta;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        (1.0 - theta.cos()) / (theta * theta)
    }
}

// (t - sin t) / t^3 with series fallback near zero.
fn coeff_theta_minus_sin(theta: f64) -> f64 {
    if theta < 1e-4 {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// Rotation matrix of an axis-angle vector (Rodrigues formula).
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let hat = so3_hat(phi);
    let sin_c = if theta < 1e-4 {
        let t2 = theta * theta;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        theta.sin() / theta
    };
    Matrix3::identity() + hat * sin_c + hat * hat * coeff_one_minus_cos(theta)
}

/// Axis-angle vector of a rotation matrix.
///
/// Fails with [`GeometryError::AngleNearPi`] when the angle is within 1e-6
/// of pi, where the axis sign is not recoverable from `R - R^T`.
pub fn so3_log(rot: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let cos_theta = ((rot.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta > PI - 1e-6 {
        return Err(GeometryError::AngleNearPi);
    }
    let w = so3_vee(&(rot - rot.transpose())) / 2.0;
    if theta < 1e-10 {
        Ok(w)
    } else {
        Ok(w * (theta / theta.sin()))
    }
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let hat = so3_hat(phi);
    Matrix3::identity() + hat * coeff_one_minus_cos(theta) + hat * hat * coeff_theta_minus_sin(theta)
}

/// Inverse left Jacobian of SO(3).
pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let hat = so3_hat(phi);
    let c = if theta < 1e-4 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - hat * 0.5 + hat * hat * c
}

/// SE(3) exponential map; `xi` ordered (translation, rotation).
pub fn se3_exp(xi: &Tangent) -> Pose {
    assert_eq!(xi.len(), 6, "se3_exp expects a 6-vector");
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    Pose::Rigid3D {
        rotation: so3_exp(&phi),
        translation: so3_left_jacobian(&phi) * rho,
    }
}

/// SE(3) logarithm map; inverse of [`se3_exp`] for rotation angles below pi.
pub fn se3_log(pose: &Pose) -> Result<Tangent, GeometryError> {
    match pose {
        Pose::Rigid3D {
            rotation,
            translation,
        } => {
            let phi = so3_log(rotation)?;
            let rho = so3_left_jacobian_inv(&phi) * translation;
            Ok(DVector::from_vec(vec![
                rho.x, rho.y, rho.z, phi.x, phi.y, phi.z,
            ]))
        }
        _ => panic!("se3_log expects a Rigid3D pose"),
    }
}

// Barfoot's Q matrix coupling translation and rotation in the SE(3) Jacobian.
fn se3_q_matrix(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let rx = so3_hat(rho);
    let px = so3_hat(phi);
    let (c1, c2, c3) = if theta < 1e-4 {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0,
            1.0 / 24.0 - t2 / 720.0,
            1.0 / 120.0 - t2 / 2520.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t4),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
        )
    };
    rx * 0.5
        + (px * rx + rx * px + px * rx * px) * c1
        + (px * px * rx + rx * px * px - px * rx * px * 3.0) * c2
        + (px * rx * px * px + px * px * rx * px) * c3
}

/// Inverse left Jacobian of SE(3) for tangent ordering (translation, rotation).
pub fn se3_left_jacobian_inv(xi: &Tangent) -> Matrix6<f64> {
    assert_eq!(xi.len(), 6);
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    let jinv = so3_left_jacobian_inv(&phi);
    let q = se3_q_matrix(&rho, &phi);
    let top_right = -jinv * q * jinv;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&top_right);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out
}

/// Inverse right Jacobian of SE(3).
pub fn se3_right_jacobian_inv(xi: &Tangent) -> Matrix6<f64> {
    se3_left_jacobian_inv(&(-xi))
}

/// Adjoint matrix of an SE(3) pose for tangent ordering (translation, rotation).
pub fn se3_adjoint(pose: &Pose) -> Matrix6<f64> {
    match pose {
        Pose::Rigid3D {
            rotation,
            translation,
        } => {
            let mut out = Matrix6::zeros();
            out.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
            out.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(so3_hat(translation) * rotation));
            out.fixed_view_mut::<3, 3>(3, 3).copy_from(rotation);
            out
        }
        _ => panic!("se3_adjoint expects a Rigid3D pose"),
    }
}

// Nearest rotation via polar decomposition; keeps det = +1.
fn polar_project(rot: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = rot.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always succeeds");
    let v_t = svd.v_t.expect("svd of 3x3 always succeeds");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    r
}

/// Right-perturbation retraction: flat variants add, Rigid3D composes with
/// `exp(delta)`. Re-projects the rotation if orthonormality drift exceeds 1e-9.
pub fn retract(pose: &Pose, delta: &Tangent) -> Pose {
    assert_eq!(
        delta.len(),
        pose.dof(),
        "tangent dimension does not match pose variant"
    );
    match pose {
        Pose::Scalar1D(x) => Pose::Scalar1D(x + delta[0]),
        Pose::Planar2D(p) => Pose::Planar2D(p + Vector2::new(delta[0], delta[1])),
        Pose::Rigid3D { .. } => {
            let mut out = pose.compose(&se3_exp(delta));
            if out.orthonormality_drift() > 1e-9 {
                if let Pose::Rigid3D { rotation, .. } = &mut out {
                    *rotation = polar_project(rotation);
                }
            }
            out
        }
    }
}

/// Sigma points for a pose with tangent-space covariance.
///
/// Returns the 2L+1 points of the unscented transform: the mean with weight
/// `kappa / (L + kappa)`, and `retract(mean, ±col_i)` with weight
/// `1 / (2 (L + kappa))`, where the columns come from the lower Cholesky
/// factor of `cov + 1e-12 I` scaled by `sqrt(L + kappa)`.
pub fn sigma_points(
    mean: &Pose,
    cov: &Covariance,
    kappa: f64,
) -> Result<Vec<(Pose, f64)>, GeometryError> {
    let l = mean.dof();
    assert_eq!(cov.nrows(), l, "covariance size does not match tangent dim");
    assert_eq!(cov.ncols(), l);
    let mut jittered = cov.clone();
    for i in 0..l {
        jittered[(i, i)] += 1e-12;
    }
    let chol = jittered
        .cholesky()
        .ok_or(GeometryError::CovarianceNotPsd)?;
    let scale = (l as f64 + kappa).sqrt();
    let lower = chol.l() * scale;

    let mut points = Vec::with_capacity(2 * l + 1);
    points.push((mean.clone(), kappa / (l as f64 + kappa)));
    let wi = 1.0 / (2.0 * (l as f64 + kappa));
    for i in 0..l {
        let col: DVector<f64> = lower.column(i).into();
        points.push((retract(mean, &col), wi));
        points.push((retract(mean, &(-&col)), wi));
    }
    Ok(points)
}

/// Propagates the state covariance through a scalar function of the pose via
/// sigma points; returns the weighted variance of the function values.
pub fn propagate_scalar_variance<F: Fn(&Pose) -> f64>(
    mean: &Pose,
    cov: &Covariance,
    f: F,
    kappa: f64,
) -> Result<f64, GeometryError> {
    let points = sigma_points(mean, cov, kappa)?;
    let values: Vec<(f64, f64)> = points.iter().map(|(p, w)| (f(p), *w)).collect();
    let mean_f: f64 = values.iter().map(|(v, w)| v * w).sum();
    let var: f64 = values.iter().map(|(v, w)| w * (v - mean_f) * (v - mean_f)).sum();
    Ok(var.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tangent6(rng: &mut impl Rng, trans_scale: f64, rot_scale: f64) -> Tangent {
        DVector::from_fn(6, |i, _| {
            let s = if i < 3 { trans_scale } else { rot_scale };
            (rng.random::<f64>() * 2.0 - 1.0) * s
        })
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let pose = se3_exp(&DVector::zeros(6));
        assert_eq!(pose, Pose::identity(3));
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let xi = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0]);
        let pose = se3_exp(&xi);
        if let Pose::Rigid3D {
            rotation,
            translation,
        } = pose
        {
            let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
            assert!((rotation - expected).norm() < 1e-12);
            assert!(translation.norm() < 1e-15);
        } else {
            panic!("expected Rigid3D");
        }
    }

    #[test]
    fn log_of_identity_is_zero() {
        let xi = se3_log(&Pose::identity(3)).unwrap();
        assert!(xi.norm() < 1e-15);
    }

    #[test]
    fn log_of_pure_translation() {
        let pose = Pose::Rigid3D {
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.3, 0.0, 0.0),
        };
        let xi = se3_log(&pose).unwrap();
        let expected = DVector::from_vec(vec![0.3, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((xi - expected).norm() < 1e-15);
    }

    #[test]
    fn log_near_pi_errors() {
        let phi = Vector3::new(0.0, 0.0, PI - 1e-8);
        let pose = Pose::Rigid3D {
            rotation: so3_exp(&phi),
            translation: Vector3::zeros(),
        };
        assert_eq!(se3_log(&pose).unwrap_err(), GeometryError::AngleNearPi);
    }

    #[test]
    fn exp_log_roundtrip_1000_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        for _ in 0..1000 {
            // keep the rotation norm safely below pi
            let xi = random_tangent6(&mut rng, 2.0, 1.7);
            let back = se3_log(&se3_exp(&xi)).unwrap();
            assert!(
                (&back - &xi).norm() <= 1e-9,
                "roundtrip error {}",
                (&back - &xi).norm()
            );
        }
    }

    #[test]
    fn retract_zero_is_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = se3_exp(&random_tangent6(&mut rng, 1.0, 1.0));
        let out = retract(&pose, &DVector::zeros(6));
        assert!(se3_log(&pose.inverse().compose(&out)).unwrap().norm() < 1e-14);
    }

    #[test]
    fn retract_scalar_is_additive() {
        let out = retract(&Pose::Scalar1D(3.0), &DVector::from_vec(vec![0.5]));
        assert_eq!(out, Pose::Scalar1D(3.5));
    }

    #[test]
    fn retract_composes_to_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let pose = se3_exp(&random_tangent6(&mut rng, 1.0, 1.2));
            let d1 = random_tangent6(&mut rng, 1e-3, 1e-3);
            let d2 = random_tangent6(&mut rng, 1e-3, 1e-3);
            let two_step = retract(&retract(&pose, &d1), &d2);
            let one_step = retract(&pose, &(&d1 + &d2));
            let diff = se3_log(&one_step.inverse().compose(&two_step)).unwrap();
            assert!(
                diff.norm() <= 2.0 * d1.norm() * d2.norm(),
                "BCH first-order bound violated: {} vs {}",
                diff.norm(),
                2.0 * d1.norm() * d2.norm()
            );
        }
    }

    #[test]
    fn rotation_stays_orthonormal_over_many_retractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut pose = Pose::identity(3);
        for _ in 0..10_000 {
            pose = retract(&pose, &random_tangent6(&mut rng, 0.05, 0.05));
        }
        assert!(pose.orthonormality_drift() <= 1e-9);
    }

    #[test]
    fn sigma_points_scalar_closed_form() {
        let mean = Pose::Scalar1D(1.5);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let pts = sigma_points(&mean, &cov, 2.0).unwrap();
        assert_eq!(pts.len(), 3);
        assert_abs_diff_eq!(pts[0].1, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[1].1, 1.0 / 6.0, epsilon = 1e-12);
        let spread = 12.0f64.sqrt();
        match (&pts[1].0, &pts[2].0) {
            (Pose::Scalar1D(a), Pose::Scalar1D(b)) => {
                assert_abs_diff_eq!(*a, 1.5 + spread, epsilon = 1e-5);
                assert_abs_diff_eq!(*b, 1.5 - spread, epsilon = 1e-5);
            }
            _ => panic!("expected scalar points"),
        }
    }

    #[test]
    fn sigma_points_zero_cov_collapse_to_mean() {
        let mean = Pose::Planar2D(Vector2::new(0.4, -0.2));
        let cov = DMatrix::zeros(2, 2);
        for (p, _) in sigma_points(&mean, &cov, 2.0).unwrap() {
            let d = p.position() - mean.position();
            assert!(d.norm() < 1e-5);
        }
    }

    #[test]
    fn sigma_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let a = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let cov = &a * a.transpose();
            let mean = se3_exp(&random_tangent6(&mut rng, 1.0, 1.0));
            let total: f64 = sigma_points(&mean, &cov, 2.0)
                .unwrap()
                .iter()
                .map(|(_, w)| w)
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn propagate_constant_function_has_zero_variance() {
        let cov = DMatrix::from_element(1, 1, 2.5);
        let var = propagate_scalar_variance(&Pose::Scalar1D(0.0), &cov, |_| 3.3, 2.0).unwrap();
        assert_abs_diff_eq!(var, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn propagate_linear_function_is_exact() {
        // gradient magnitude <= 1 so the 1e-12 jitter stays below tolerance
        let g = 0.7;
        let sigma2 = 0.36;
        let cov = DMatrix::from_element(1, 1, sigma2);
        let var = propagate_scalar_variance(
            &Pose::Scalar1D(2.0),
            &cov,
            |p| match p {
                Pose::Scalar1D(x) => g * x + 1.0,
                _ => unreachable!(),
            },
            2.0,
        )
        .unwrap();
        assert_abs_diff_eq!(var, g * g * sigma2, epsilon = 1e-12);
    }

    #[test]
    fn propagate_linear_map_mean_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>());
        let cov = &a * a.transpose();
        let mean = Pose::Planar2D(Vector2::new(0.3, -1.1));
        let pts = sigma_points(&mean, &cov, 2.0).unwrap();
        let f = |p: &Pose| match p {
            Pose::Planar2D(v) => 0.25 * v.x - 0.5 * v.y + 2.0,
            _ => unreachable!(),
        };
        let mean_f: f64 = pts.iter().map(|(p, w)| w * f(p)).sum();
        assert_abs_diff_eq!(mean_f, f(&mean), epsilon = 1e-12);
    }
}
