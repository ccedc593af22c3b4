//! Anchor constellation, TDOA measurement models (1-D linear as a special
//! case of the hyperbolic form, 2-D/3-D hyperbolic with lever arm), motion
//! models, residuals, and their analytic Jacobians.

use crate::lie::{
    se3_adjoint, se3_log, se3_right_jacobian_inv, so3_hat, Covariance, Pose, Tangent,
};
use nalgebra::{DMatrix, DVector, Vector3};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum SceneError {
    /// Tag position coincides with an anchor; the gradient is undefined there.
    TagAtAnchor { anchor: usize },
    /// A TDOA pair references a missing anchor index or a degenerate pair.
    InvalidPair { i: usize, j: usize },
    /// A measurement points at a pose slot outside the trajectory.
    PoseIndexOutOfRange { index: usize, max: usize },
    /// Pose variant does not match the anchor dimension.
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneError::TagAtAnchor { anchor } => {
                write!(f, "tag position coincides with anchor {anchor}")
            }
            SceneError::InvalidPair { i, j } => write!(f, "invalid TDOA anchor pair ({i}, {j})"),
            SceneError::PoseIndexOutOfRange { index, max } => {
                write!(f, "pose index {index} outside trajectory 0..={max}")
            }
            SceneError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for SceneError {}

/// Fixed UWB anchors with the set of ordered TDOA pairs read out of them.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConstellation {
    positions: Vec<DVector<f64>>,
    pairs: Vec<(usize, usize)>,
}

impl AnchorConstellation {
    /// Validates indices, distinctness, and anchor separation (> 1e-9 m).
    pub fn new(
        positions: Vec<DVector<f64>>,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self, SceneError> {
        for &(i, j) in &pairs {
            if i == j || i >= positions.len() || j >= positions.len() {
                return Err(SceneError::InvalidPair { i, j });
            }
            if (&positions[i] - &positions[j]).norm() <= 1e-9 {
                return Err(SceneError::InvalidPair { i, j });
            }
        }
        Ok(AnchorConstellation { positions, pairs })
    }

    pub fn positions(&self) -> &[DVector<f64>] {
        &self.positions
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn position(&self, idx: usize) -> &DVector<f64> {
        &self.positions[idx]
    }

    /// Spatial dimension shared by all anchors.
    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, |p| p.len())
    }
}

/// Body-frame offset from the robot origin to the UWB tag antenna.
/// Zero-length for the flat 1-D/2-D variants.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRig {
    pub lever_arm: Vector3<f64>,
}

impl SensorRig {
    pub fn new(lever_arm: Vector3<f64>) -> Self {
        SensorRig { lever_arm }
    }

    pub fn zero() -> Self {
        SensorRig {
            lever_arm: Vector3::zeros(),
        }
    }
}

/// One observed TDOA value for an anchor pair at a trajectory step.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaMeasurement {
    pub pair: (usize, usize),
    pub pose_index: usize,
    pub value: f64,
}

/// One odometry step: the measured increment (a pose so that flat addition
/// and SE(3) composition share one code path) and its noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryIncrement {
    pub delta: Pose,
    pub noise_cov: Covariance,
}

/// Everything one estimation problem consumes: anchors, rig, odometry chain,
/// TDOA observations, and the prior on the initial pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub anchors: AnchorConstellation,
    pub rig: SensorRig,
    pub odometry: Vec<OdometryIncrement>,
    pub tdoa: Vec<TdoaMeasurement>,
    pub prior_mean: Pose,
    pub prior_cov: Covariance,
}

impl Dataset {
    /// Number of odometry steps T; the trajectory has T+1 pose slots.
    pub fn num_steps(&self) -> usize {
        self.odometry.len()
    }

    pub fn dim(&self) -> usize {
        self.anchors.dim()
    }

    /// Measurements of one pair, in file order.
    pub fn measurements_for_pair(&self, pair: (usize, usize)) -> Vec<&TdoaMeasurement> {
        self.tdoa.iter().filter(|m| m.pair == pair).collect()
    }

    /// Checks pose-index bounds and pair membership for every measurement.
    pub fn validate(&self) -> Result<(), SceneError> {
        let max = self.num_steps();
        for m in &self.tdoa {
            if m.pose_index > max {
                return Err(SceneError::PoseIndexOutOfRange {
                    index: m.pose_index,
                    max,
                });
            }
            if !self.anchors.pairs().contains(&m.pair) {
                return Err(SceneError::InvalidPair {
                    i: m.pair.0,
                    j: m.pair.1,
                });
            }
        }
        if self.prior_mean.dim() != self.dim() {
            return Err(SceneError::DimensionMismatch {
                expected: self.dim(),
                got: self.prior_mean.dim(),
            });
        }
        Ok(())
    }
}

/// Tag antenna position in the inertial frame.
pub fn tag_position(pose: &Pose, rig: &SensorRig) -> DVector<f64> {
    match pose {
        Pose::Scalar1D(_) | Pose::Planar2D(_) => pose.position(),
        Pose::Rigid3D {
            rotation,
            translation,
        } => {
            let p = rotation * rig.lever_arm + translation;
            DVector::from_column_slice(p.as_slice())
        }
    }
}

/// Noise-free TDOA prediction `|p_tag - a_j| - |p_tag - a_i|`.
pub fn tdoa_predict(
    pose: &Pose,
    rig: &SensorRig,
    anchors: &AnchorConstellation,
    pair: (usize, usize),
) -> Result<f64, SceneError> {
    let tag = tag_position(pose, rig);
    let di = (&tag - anchors.position(pair.0)).norm();
    let dj = (&tag - anchors.position(pair.1)).norm();
    if di <= 1e-9 {
        return Err(SceneError::TagAtAnchor { anchor: pair.0 });
    }
    if dj <= 1e-9 {
        return Err(SceneError::TagAtAnchor { anchor: pair.1 });
    }
    Ok(dj - di)
}

/// Measurement residual `r = d - d_pred(pose)`.
pub fn tdoa_residual(
    meas: &TdoaMeasurement,
    pose: &Pose,
    rig: &SensorRig,
    anchors: &AnchorConstellation,
) -> Result<f64, SceneError> {
    Ok(meas.value - tdoa_predict(pose, rig, anchors, meas.pair)?)
}

/// Gradient of the TDOA prediction with respect to a right-perturbation of
/// the pose, as a row over the tangent dimension.
pub fn tdoa_jacobian(
    pose: &Pose,
    rig: &SensorRig,
    anchors: &AnchorConstellation,
    pair: (usize, usize),
) -> Result<DVector<f64>, SceneError> {
    let tag = tag_position(pose, rig);
    let to_i = &tag - anchors.position(pair.0);
    let to_j = &tag - anchors.position(pair.1);
    let (ni, nj) = (to_i.norm(), to_j.norm());
    if ni <= 1e-9 {
        return Err(SceneError::TagAtAnchor { anchor: pair.0 });
    }
    if nj <= 1e-9 {
        return Err(SceneError::TagAtAnchor { anchor: pair.1 });
    }
    let grad_pos = to_j / nj - to_i / ni;
    match pose {
        Pose::Scalar1D(_) | Pose::Planar2D(_) => Ok(grad_pos),
        Pose::Rigid3D { rotation, .. } => {
            let g = Vector3::new(grad_pos[0], grad_pos[1], grad_pos[2]);
            // p_tag(delta) = C (I + phi^) l + p + C rho to first order
            let d_rho = rotation.transpose() * g;
            let d_phi = -(so3_hat(&rig.lever_arm).transpose() * rotation.transpose() * g);
            let mut out = DVector::zeros(6);
            out.rows_mut(0, 3).copy_from(&d_rho);
            out.rows_mut(3, 3).copy_from(&d_phi);
            Ok(out)
        }
    }
}

/// Noise-free mean of the motion model: flat addition or `T * dT`.
pub fn motion_predict(prev: &Pose, incr: &OdometryIncrement) -> Pose {
    prev.compose(&incr.delta)
}

/// Motion residual: flat `(prev + u) - curr`, rigid `log(pred^-1 curr)`.
/// Zero exactly when `curr` equals the prediction.
pub fn motion_residual(
    prev: &Pose,
    curr: &Pose,
    incr: &OdometryIncrement,
) -> Result<Tangent, crate::lie::GeometryError> {
    let pred = motion_predict(prev, incr);
    match (&pred, curr) {
        (Pose::Rigid3D { .. }, Pose::Rigid3D { .. }) => se3_log(&pred.inverse().compose(curr)),
        _ => Ok(pred.position() - curr.position()),
    }
}

/// Jacobians of [`motion_residual`] with respect to right-perturbations of
/// `prev` and `curr`, in that order.
pub fn motion_jacobians(
    prev: &Pose,
    curr: &Pose,
    incr: &OdometryIncrement,
) -> Result<(DMatrix<f64>, DMatrix<f64>), crate::lie::GeometryError> {
    match (prev, curr) {
        (Pose::Rigid3D { .. }, Pose::Rigid3D { .. }) => {
            let r = motion_residual(prev, curr, incr)?;
            let j_curr = se3_right_jacobian_inv(&r);
            let adj = se3_adjoint(&incr.delta.inverse());
            // left-perturbation chain: log(exp(-(Ad_{dT^-1} dp))^ E)
            let j_prev = -(se3_right_jacobian_inv(&(-&r)) * adj);
            let to_dyn = |m: nalgebra::Matrix6<f64>| {
                DMatrix::from_iterator(6, 6, m.iter().copied())
            };
            Ok((to_dyn(j_prev), to_dyn(j_curr)))
        }
        _ => {
            let dof = prev.dof();
            Ok((DMatrix::identity(dof, dof), -DMatrix::identity(dof, dof)))
        }
    }
}
