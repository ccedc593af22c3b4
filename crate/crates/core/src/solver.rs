//! Factor-graph construction and damped Gauss-Newton (Levenberg-Marquardt)
//! solution of the trajectory MAP problem, plus Laplace-approximation
//! marginal covariances per pose.
//!
//! The graph is a pose chain: one prior factor on pose 0, one odometry
//! binary factor per step, and one Max-Sum-Mixture TDOA unary factor per
//! measurement. The normal equations are therefore block tridiagonal and
//! are factorized blockwise; marginal covariance blocks come from the
//! backward recursion on the chain Cholesky factor, which is exact.

use crate::lie::{retract, se3_log, se3_right_jacobian_inv, Covariance, GeometryError, Pose};
use crate::mixture::Gmm1D;
use crate::msm::{msm_cost, msm_jacobian, MsmConfig};
use crate::scene::{
    motion_jacobians, motion_residual, tdoa_jacobian, tdoa_residual, AnchorConstellation, Dataset,
    OdometryIncrement, SceneError, SensorRig, TdoaMeasurement,
};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    /// A measurement's pair has no noise model.
    MissingTheta { pair: (usize, usize) },
    /// The objective became NaN or infinite.
    SolverDiverged,
    /// Information matrix factorization failed even after jitter.
    SingularInformation,
    Geometry(GeometryError),
    Scene(SceneError),
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::MissingTheta { pair } => {
                write!(f, "no noise model for pair ({}, {})", pair.0, pair.1)
            }
            SolverError::SolverDiverged => write!(f, "objective diverged to NaN/inf"),
            SolverError::SingularInformation => write!(f, "information matrix is singular"),
            SolverError::Geometry(e) => write!(f, "{e}"),
            SolverError::Scene(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SolverError {}

impl From<GeometryError> for SolverError {
    fn from(e: GeometryError) -> Self {
        SolverError::Geometry(e)
    }
}

impl From<SceneError> for SolverError {
    fn from(e: SceneError) -> Self {
        SolverError::Scene(e)
    }
}

/// Levenberg-Marquardt parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub step_tol: f64,
    pub rel_loss_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 100,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 0.1,
            step_tol: 1e-8,
            rel_loss_tol: 1e-10,
        }
    }
}

struct TdoaFactor {
    meas: TdoaMeasurement,
    gmm: Gmm1D,
}

/// Pose-chain factor graph: prior, odometry chain, MSM TDOA unary factors.
pub struct FactorGraph {
    num_poses: usize,
    dof: usize,
    prior_mean: Pose,
    prior_whitener: DMatrix<f64>,
    odometry: Vec<(OdometryIncrement, DMatrix<f64>)>,
    tdoa: Vec<TdoaFactor>,
    rig: SensorRig,
    anchors: AnchorConstellation,
    msm: MsmConfig,
}

// Inverse lower Cholesky factor of a covariance, used to whiten residuals.
// Falls back to a 1e-12 diagonal jitter for numerically semi-definite input.
fn whitener(cov: &Covariance) -> Result<DMatrix<f64>, SolverError> {
    let n = cov.nrows();
    let chol = cov.clone().cholesky().or_else(|| {
        let mut jittered = cov.clone();
        for i in 0..n {
            jittered[(i, i)] += 1e-12;
        }
        jittered.cholesky()
    });
    let chol = chol.ok_or(SolverError::SingularInformation)?;
    chol.l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(SolverError::SingularInformation)
}

/// Builds the factor graph for a dataset under per-pair noise models.
pub fn build_graph(
    dataset: &Dataset,
    theta: &BTreeMap<(usize, usize), Gmm1D>,
    msm: MsmConfig,
) -> Result<FactorGraph, SolverError> {
    let dof = dataset.prior_mean.dof();
    let mut odometry = Vec::with_capacity(dataset.odometry.len());
    for incr in &dataset.odometry {
        let w = whitener(&incr.noise_cov)?;
        odometry.push((incr.clone(), w));
    }
    let mut tdoa = Vec::with_capacity(dataset.tdoa.len());
    for meas in &dataset.tdoa {
        let gmm = theta
            .get(&meas.pair)
            .ok_or(SolverError::MissingTheta { pair: meas.pair })?;
        tdoa.push(TdoaFactor {
            meas: meas.clone(),
            gmm: gmm.clone(),
        });
    }
    Ok(FactorGraph {
        num_poses: dataset.num_steps() + 1,
        dof,
        prior_mean: dataset.prior_mean.clone(),
        prior_whitener: whitener(&dataset.prior_cov)?,
        odometry,
        tdoa,
        rig: dataset.rig.clone(),
        anchors: dataset.anchors.clone(),
        msm,
    })
}

impl FactorGraph {
    pub fn num_poses(&self) -> usize {
        self.num_poses
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Total factor count: prior + odometry + TDOA.
    pub fn num_factors(&self) -> usize {
        1 + self.odometry.len() + self.tdoa.len()
    }

    // Prior residual and Jacobian at pose 0 (unwhitened).
    fn prior_terms(&self, pose: &Pose) -> Result<(DVector<f64>, DMatrix<f64>), SolverError> {
        match (&self.prior_mean, pose) {
            (Pose::Rigid3D { .. }, Pose::Rigid3D { .. }) => {
                let r = se3_log(&self.prior_mean.inverse().compose(pose))?;
                let j = se3_right_jacobian_inv(&r);
                let jd = DMatrix::from_iterator(6, 6, j.iter().copied());
                Ok((r, jd))
            }
            _ => {
                let r = self.prior_mean.position() - pose.position();
                Ok((r, -DMatrix::identity(self.dof, self.dof)))
            }
        }
    }

    /// Value of the full objective (sum of squared whitened residual norms,
    /// TDOA factors contributing the squared MSM 2-vector) at given poses.
    pub fn objective(&self, poses: &[Pose]) -> Result<f64, SolverError> {
        assert_eq!(poses.len(), self.num_poses);
        let (r0, _) = self.prior_terms(&poses[0])?;
        let mut total = (&self.prior_whitener * r0).norm_squared();
        for (t, (incr, w)) in self.odometry.iter().enumerate() {
            let r = motion_residual(&poses[t], &poses[t + 1], incr)?;
            total += (w * r).norm_squared();
        }
        for f in &self.tdoa {
            let r = tdoa_residual(&f.meas, &poses[f.meas.pose_index], &self.rig, &self.anchors)?;
            total += msm_cost(&f.gmm, r, &self.msm).norm_squared();
        }
        Ok(total)
    }

    /// Gauss-Newton information blocks at the given linearization point:
    /// diagonal blocks, super-diagonal blocks (t, t+1), and the gradient.
    pub fn information_blocks(
        &self,
        poses: &[Pose],
    ) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DVector<f64>>), SolverError> {
        let n = self.num_poses;
        let d = self.dof;
        let mut diag = vec![DMatrix::zeros(d, d); n];
        let mut off = vec![DMatrix::zeros(d, d); n.saturating_sub(1)];
        let mut grad = vec![DVector::zeros(d); n];

        let (r0, j0) = self.prior_terms(&poses[0])?;
        let wr = &self.prior_whitener * r0;
        let wj = &self.prior_whitener * j0;
        diag[0] += wj.transpose() * &wj;
        grad[0] += wj.transpose() * wr;

        for (t, (incr, w)) in self.odometry.iter().enumerate() {
            let r = motion_residual(&poses[t], &poses[t + 1], incr)?;
            let (jp, jc) = motion_jacobians(&poses[t], &poses[t + 1], incr)?;
            let wr = w * r;
            let wjp = w * jp;
            let wjc = w * jc;
            diag[t] += wjp.transpose() * &wjp;
            diag[t + 1] += wjc.transpose() * &wjc;
            off[t] += wjp.transpose() * &wjc;
            grad[t] += wjp.transpose() * &wr;
            grad[t + 1] += wjc.transpose() * wr;
        }

        for f in &self.tdoa {
            let t = f.meas.pose_index;
            let r = tdoa_residual(&f.meas, &poses[t], &self.rig, &self.anchors)?;
            let rho = msm_cost(&f.gmm, r, &self.msm);
            let drho = msm_jacobian(&f.gmm, r, &self.msm);
            let dpred = tdoa_jacobian(&poses[t], &self.rig, &self.anchors, f.meas.pair)?;
            // dr/ddelta = -dpred; the factor Jacobian is the 2 x dof outer product
            let mut jf = DMatrix::zeros(2, d);
            for i in 0..2 {
                for c in 0..d {
                    jf[(i, c)] = drho[i] * -dpred[c];
                }
            }
            diag[t] += jf.transpose() * &jf;
            grad[t] += jf.transpose() * DVector::from_column_slice(rho.as_slice());
        }
        Ok((diag, off, grad))
    }
}

// Block Cholesky of a block-tridiagonal SPD matrix: returns the diagonal
// (lower-triangular) and sub-diagonal blocks of L with H = L L^T.
fn block_tridiag_cholesky(
    diag: &[DMatrix<f64>],
    off: &[DMatrix<f64>],
) -> Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let n = diag.len();
    let mut l_diag = Vec::with_capacity(n);
    let mut l_sub = Vec::with_capacity(n.saturating_sub(1));
    l_diag.push(diag[0].clone().cholesky()?.l());
    for t in 1..n {
        // B_t = U_{t-1}^T Lambda_{t-1}^{-T}
        let x = l_diag[t - 1].solve_lower_triangular(&off[t - 1])?;
        let b = x.transpose();
        let reduced = &diag[t] - &b * b.transpose();
        l_diag.push(reduced.cholesky()?.l());
        l_sub.push(b);
    }
    Some((l_diag, l_sub))
}

// Solves L L^T x = b for the block-bidiagonal factor from
// block_tridiag_cholesky; b and x are per-pose stacked vectors.
fn block_tridiag_solve(
    l_diag: &[DMatrix<f64>],
    l_sub: &[DMatrix<f64>],
    b: &[DVector<f64>],
) -> Option<Vec<DVector<f64>>> {
    let n = l_diag.len();
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
    for t in 0..n {
        let rhs = if t == 0 {
            b[0].clone()
        } else {
            &b[t] - &l_sub[t - 1] * &y[t - 1]
        };
        y.push(l_diag[t].solve_lower_triangular(&rhs)?);
    }
    let mut x = vec![DVector::zeros(0); n];
    for t in (0..n).rev() {
        let rhs = if t == n - 1 {
            y[t].clone()
        } else {
            &y[t] - l_sub[t].transpose() * &x[t + 1]
        };
        x[t] = l_diag[t].tr_solve_lower_triangular(&rhs)?;
    }
    Some(x)
}

// Diagonal blocks of the inverse of a block-tridiagonal SPD matrix from its
// block Cholesky factor: P_T = L_T^{-T} L_T^{-1},
// P_t = L_t^{-T} (I + B_{t+1}^T P_{t+1} B_{t+1}) L_t^{-1}.
fn marginal_blocks(l_diag: &[DMatrix<f64>], l_sub: &[DMatrix<f64>]) -> Option<Vec<Covariance>> {
    let n = l_diag.len();
    let d = l_diag[0].nrows();
    let mut out = vec![Covariance::zeros(0, 0); n];
    let ident = DMatrix::identity(d, d);
    let mut prev: Option<Covariance> = None;
    for t in (0..n).rev() {
        let inner = match &prev {
            None => ident.clone(),
            Some(p_next) => &ident + l_sub[t].transpose() * p_next * &l_sub[t],
        };
        // P_t = Lambda_t^{-T} inner Lambda_t^{-1}
        let z = l_diag[t].tr_solve_lower_triangular(&inner.transpose())?;
        let p = l_diag[t].tr_solve_lower_triangular(&z.transpose())?;
        // enforce exact symmetry against roundoff
        let p = (&p + p.transpose()) * 0.5;
        prev = Some(p.clone());
        out[t] = p;
    }
    Some(out)
}

/// MAP solution: poses, Laplace marginal covariances, and the objective
/// value at the returned poses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    pub poses: Vec<Pose>,
    pub covariances: Vec<Covariance>,
    pub final_loss: f64,
    /// False when the iteration budget ran out before the tolerances hit.
    pub converged: bool,
    pub iterations: usize,
}

/// Levenberg-Marquardt on the stacked whitened residuals, updates applied
/// through the right-perturbation retraction.
pub fn solve_map(
    graph: &FactorGraph,
    init: &[Pose],
    cfg: &SolverConfig,
) -> Result<TrajectoryEstimate, SolverError> {
    assert_eq!(init.len(), graph.num_poses, "init length must be T+1");
    let d = graph.dof;
    let mut poses = init.to_vec();
    let mut loss = graph.objective(&poses)?;
    if !loss.is_finite() {
        return Err(SolverError::SolverDiverged);
    }
    let mut lambda = cfg.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let (mut diag, off, grad) = graph.information_blocks(&poses)?;
        for block in &mut diag {
            for i in 0..d {
                block[(i, i)] += lambda;
            }
        }
        let neg_grad: Vec<DVector<f64>> = grad.iter().map(|g| -g).collect();
        let step = match block_tridiag_cholesky(&diag, &off)
            .and_then(|(ld, ls)| block_tridiag_solve(&ld, &ls, &neg_grad))
        {
            Some(s) => s,
            None => {
                lambda *= cfg.damping_up;
                continue;
            }
        };
        let candidate: Vec<Pose> = poses
            .iter()
            .zip(&step)
            .map(|(p, s)| retract(p, s))
            .collect();
        let new_loss = graph.objective(&candidate)?;
        if new_loss.is_finite() && new_loss <= loss {
            let step_norm: f64 = step.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt();
            let decrease = loss - new_loss;
            poses = candidate;
            loss = new_loss;
            lambda *= cfg.damping_down;
            if step_norm < cfg.step_tol || decrease <= cfg.rel_loss_tol * loss.max(1e-300) {
                converged = true;
                break;
            }
        } else {
            lambda *= cfg.damping_up;
            if lambda > 1e16 {
                break;
            }
        }
    }
    if !loss.is_finite() {
        return Err(SolverError::SolverDiverged);
    }
    let covariances = laplace_covariances(graph, &poses)?;
    Ok(TrajectoryEstimate {
        poses,
        covariances,
        final_loss: loss,
        converged,
        iterations,
    })
}

/// Marginal per-pose covariances from the Gauss-Newton information matrix
/// at the solution (the Laplace approximation of the posterior).
pub fn laplace_covariances(
    graph: &FactorGraph,
    solution: &[Pose],
) -> Result<Vec<Covariance>, SolverError> {
    let (diag, off, _) = graph.information_blocks(solution)?;
    let factor = block_tridiag_cholesky(&diag, &off).or_else(|| {
        let jittered: Vec<DMatrix<f64>> = diag
            .iter()
            .map(|b| {
                let mut b = b.clone();
                for i in 0..b.nrows() {
                    b[(i, i)] += 1e-10;
                }
                b
            })
            .collect();
        block_tridiag_cholesky(&jittered, &off)
    });
    let (ld, ls) = factor.ok_or(SolverError::SingularInformation)?;
    marginal_blocks(&ld, &ls).ok_or(SolverError::SingularInformation)
}
