//! The outer/inner alternation joining trajectory estimation and noise-model
//! learning: inner MAP solve under the current mixtures, Laplace marginal
//! covariances, residual and uncertainty extraction, outer refit of the
//! per-pair mixtures, and the loss-based termination rule.

use crate::lie::{propagate_scalar_variance, se3_adjoint, Covariance, GeometryError, Pose};
use crate::mixture::{fit_gauss, Gmm1D, MixtureError};
use crate::msm::MsmConfig;
use crate::scene::{motion_predict, tdoa_predict, tdoa_residual, Dataset, SceneError};
use crate::seeds;
use crate::solver::{
    build_graph, solve_map, SolverConfig, SolverError, TrajectoryEstimate,
};
use crate::vb::{fit_cgmm, fit_ugmm, ResidualSample, VbConfig, VbPriors};
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum BilevelError {
    Solver(SolverError),
    Mixture(MixtureError),
    Scene(SceneError),
    Geometry(GeometryError),
}

impl fmt::Display for BilevelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BilevelError::Solver(e) => write!(f, "{e}"),
            BilevelError::Mixture(e) => write!(f, "{e}"),
            BilevelError::Scene(e) => write!(f, "{e}"),
            BilevelError::Geometry(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for BilevelError {}

impl From<SolverError> for BilevelError {
    fn from(e: SolverError) -> Self {
        BilevelError::Solver(e)
    }
}
impl From<MixtureError> for BilevelError {
    fn from(e: MixtureError) -> Self {
        BilevelError::Mixture(e)
    }
}
impl From<SceneError> for BilevelError {
    fn from(e: SceneError) -> Self {
        BilevelError::Scene(e)
    }
}
impl From<GeometryError> for BilevelError {
    fn from(e: GeometryError) -> Self {
        BilevelError::Geometry(e)
    }
}

/// Noise-model learning method driving the outer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    /// Single-Gaussian baseline fit of the raw residuals.
    Gauss,
    /// Conventional mixture fit of the raw residuals.
    CGmm,
    /// Uncertainty-aware mixture fit over (residual, variance) samples.
    UGmm,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Gauss => "gauss",
            Method::CGmm => "cgmm",
            Method::UGmm => "ugmm",
        }
    }
}

/// How the first trajectory/covariance estimate is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    DeadReckoning,
    /// Dead-reckoning followed by a MAP solve under single-Gaussian models.
    GaussianMap,
}

/// How losses are compared across outer iterations. The mixture-dependent
/// constant in the MSM cost makes raw values incomparable when the mixtures
/// change, so the default re-evaluates both trajectories under the newest
/// mixtures; the raw comparison is kept behind this switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossComparison {
    UnderNewTheta,
    RawValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilevelConfig {
    pub max_outer_iterations: usize,
    pub num_components: usize,
    pub msm: MsmConfig,
    pub solver: SolverConfig,
    pub vb: VbConfig,
    /// Explicit VB priors; data-driven per fit when absent.
    pub vb_priors: Option<VbPriors>,
    pub kappa: f64,
    pub init_mode: InitMode,
    pub loss_comparison: LossComparison,
    /// Zeroes every propagated variance; turns the UGmm method into CGmm.
    pub force_phi_zero: bool,
    /// Relative outer-loss convergence tolerance.
    pub outer_loss_tol: f64,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            max_outer_iterations: 10,
            num_components: 3,
            msm: MsmConfig::default(),
            solver: SolverConfig::default(),
            vb: VbConfig::default(),
            vb_priors: None,
            kappa: 2.0,
            init_mode: InitMode::DeadReckoning,
            loss_comparison: LossComparison::UnderNewTheta,
            force_phi_zero: false,
            outer_loss_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    LossIncreased,
    MaxIterations,
    /// A solver or fit error interrupted the loop after at least one
    /// completed iteration; the result carries the last accepted iterate.
    Failed,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::LossIncreased => "loss_increased",
            Termination::MaxIterations => "max_iterations",
            Termination::Failed => "error",
        }
    }
}

/// Per-outer-iteration bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationDiag {
    /// Objective of the new trajectory under the newly fitted mixtures.
    pub loss: f64,
    /// Objective of the previous trajectory under the same new mixtures
    /// (or the previous raw loss in `RawValues` mode).
    pub reference_loss: f64,
    pub inner_iterations: usize,
    /// Final ELBO per pair; empty for the Gauss method.
    pub per_pair_elbo: BTreeMap<(usize, usize), f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilevelResult {
    pub trajectory: TrajectoryEstimate,
    pub theta: BTreeMap<(usize, usize), Gmm1D>,
    pub diagnostics: Vec<IterationDiag>,
    pub termination: Termination,
    /// Message of the error that stopped the loop, for `Failed` only.
    pub error: Option<String>,
}

/// Dead-reckoning (or Gaussian-MAP) initialization of poses and marginal
/// covariances.
pub fn initialize(
    dataset: &Dataset,
    cfg: &BilevelConfig,
) -> Result<(Vec<Pose>, Vec<Covariance>), BilevelError> {
    let t_steps = dataset.num_steps();
    let mut poses = Vec::with_capacity(t_steps + 1);
    let mut covs = Vec::with_capacity(t_steps + 1);
    poses.push(dataset.prior_mean.clone());
    covs.push(dataset.prior_cov.clone());
    for incr in &dataset.odometry {
        let prev = poses.last().expect("non-empty");
        let next = motion_predict(prev, incr);
        let f = match &incr.delta {
            Pose::Rigid3D { .. } => {
                let adj = se3_adjoint(&incr.delta.inverse());
                DMatrix::from_iterator(6, 6, adj.iter().copied())
            }
            _ => DMatrix::identity(prev.dof(), prev.dof()),
        };
        let prev_cov = covs.last().expect("non-empty");
        covs.push(&f * prev_cov * f.transpose() + &incr.noise_cov);
        poses.push(next);
    }

    match cfg.init_mode {
        InitMode::DeadReckoning => Ok((poses, covs)),
        InitMode::GaussianMap => {
            let mut theta = BTreeMap::new();
            for &pair in dataset.anchors.pairs() {
                let residuals = residuals_for_pair(dataset, &poses, pair)?;
                if residuals.len() >= 2 {
                    theta.insert(pair, fit_gauss(&residuals)?);
                }
            }
            let graph = build_graph(dataset, &theta, cfg.msm)?;
            let est = solve_map(&graph, &poses, &cfg.solver)?;
            Ok((est.poses, est.covariances))
        }
    }
}

fn residuals_for_pair(
    dataset: &Dataset,
    poses: &[Pose],
    pair: (usize, usize),
) -> Result<Vec<f64>, BilevelError> {
    dataset
        .tdoa
        .iter()
        .filter(|m| m.pair == pair)
        .map(|m| {
            tdoa_residual(m, &poses[m.pose_index], &dataset.rig, &dataset.anchors)
                .map_err(BilevelError::from)
        })
        .collect()
}

/// Residual samples of one pair: the residual at the estimated pose and the
/// state covariance propagated through the residual model by sigma points.
pub fn extract_residual_samples(
    dataset: &Dataset,
    poses: &[Pose],
    covariances: &[Covariance],
    pair: (usize, usize),
    kappa: f64,
) -> Result<Vec<ResidualSample>, BilevelError> {
    let mut out = Vec::new();
    for m in dataset.tdoa.iter().filter(|m| m.pair == pair) {
        let t = m.pose_index;
        let r = tdoa_residual(m, &poses[t], &dataset.rig, &dataset.anchors)?;
        let value = m.value;
        let phi = propagate_scalar_variance(
            &poses[t],
            &covariances[t],
            |p| value - tdoa_predict(p, &dataset.rig, &dataset.anchors, m.pair).unwrap_or(0.0),
            kappa,
        )?;
        out.push(ResidualSample { r, phi });
    }
    Ok(out)
}

// Pairs that actually carry measurements, in constellation order.
fn measured_pairs(dataset: &Dataset) -> Vec<(usize, usize)> {
    dataset
        .anchors
        .pairs()
        .iter()
        .copied()
        .filter(|p| dataset.tdoa.iter().any(|m| m.pair == *p))
        .collect()
}

// Outer step: refit every measured pair's mixture with the method's fit.
// Returns the mixtures and the final ELBO per pair (empty for Gauss).
fn fit_theta(
    method: Method,
    dataset: &Dataset,
    poses: &[Pose],
    covariances: &[Covariance],
    cfg: &BilevelConfig,
    seed: u64,
    outer_iter: u64,
) -> Result<(BTreeMap<(usize, usize), Gmm1D>, BTreeMap<(usize, usize), f64>), BilevelError> {
    let mut theta = BTreeMap::new();
    let mut elbos = BTreeMap::new();
    for (pair_index, pair) in measured_pairs(dataset).into_iter().enumerate() {
        let fit_seed = seeds::derive(
            seed,
            seeds::VB_INIT,
            outer_iter * seeds::VB_COUNTER_STRIDE + pair_index as u64,
        );
        match method {
            Method::Gauss => {
                let residuals = residuals_for_pair(dataset, poses, pair)?;
                theta.insert(pair, fit_gauss(&residuals)?);
            }
            Method::CGmm => {
                let residuals = residuals_for_pair(dataset, poses, pair)?;
                let priors = cfg
                    .vb_priors
                    .unwrap_or_else(|| VbPriors::data_driven(&residuals));
                let (post, mixture) =
                    fit_cgmm(&residuals, cfg.num_components, &priors, fit_seed, &cfg.vb)?;
                elbos.insert(pair, post.elbo_trace.last().copied().unwrap_or(f64::NAN));
                theta.insert(pair, mixture);
            }
            Method::UGmm => {
                let mut samples =
                    extract_residual_samples(dataset, poses, covariances, pair, cfg.kappa)?;
                if cfg.force_phi_zero {
                    for s in &mut samples {
                        s.phi = 0.0;
                    }
                }
                let values: Vec<f64> = samples.iter().map(|s| s.r).collect();
                let priors = cfg
                    .vb_priors
                    .unwrap_or_else(|| VbPriors::data_driven(&values));
                let (post, mixture) =
                    fit_ugmm(&samples, cfg.num_components, &priors, fit_seed, &cfg.vb)?;
                elbos.insert(pair, post.elbo_trace.last().copied().unwrap_or(f64::NAN));
                theta.insert(pair, mixture);
            }
        }
    }
    Ok((theta, elbos))
}

/// The full alternation for any of the three methods. [`run_bilevel`] and
/// [`run_baseline`] are the spec-named entry points.
pub fn run_method(
    dataset: &Dataset,
    method: Method,
    cfg: &BilevelConfig,
    seed: u64,
) -> Result<BilevelResult, BilevelError> {
    let (init_poses, init_covs) = initialize(dataset, cfg)?;
    let (mut theta, _) = fit_theta(method, dataset, &init_poses, &init_covs, cfg, seed, 0)?;

    let mut poses = init_poses;
    let mut covs = init_covs;
    let mut diagnostics = Vec::new();
    let mut best: Option<(TrajectoryEstimate, BTreeMap<(usize, usize), Gmm1D>)> = None;
    let mut prev_raw_loss = f64::INFINITY;
    let mut termination = Termination::MaxIterations;
    let mut error = None;

    for iter in 1..=cfg.max_outer_iterations {
        let step = || -> Result<_, BilevelError> {
            let graph = build_graph(dataset, &theta, cfg.msm)?;
            let est = solve_map(&graph, &poses, &cfg.solver)?;
            let (theta_new, elbos) =
                fit_theta(method, dataset, &est.poses, &est.covariances, cfg, seed, iter as u64)?;
            let graph_new = build_graph(dataset, &theta_new, cfg.msm)?;
            let new_loss = graph_new.objective(&est.poses)?;
            let reference_loss = match cfg.loss_comparison {
                LossComparison::UnderNewTheta => graph_new.objective(&poses)?,
                LossComparison::RawValues => prev_raw_loss,
            };
            Ok((est, theta_new, elbos, new_loss, reference_loss))
        }();
        let (est, theta_new, elbos, new_loss, reference_loss) = match step {
            Ok(v) => v,
            Err(e) => {
                if best.is_none() {
                    return Err(e);
                }
                termination = Termination::Failed;
                error = Some(e.to_string());
                break;
            }
        };
        diagnostics.push(IterationDiag {
            loss: new_loss,
            reference_loss,
            inner_iterations: est.iterations,
            per_pair_elbo: elbos,
        });
        if new_loss > reference_loss {
            termination = Termination::LossIncreased;
            break;
        }
        poses = est.poses.clone();
        covs = est.covariances.clone();
        let accepted = TrajectoryEstimate {
            final_loss: new_loss,
            ..est
        };
        theta = theta_new;
        best = Some((accepted, theta.clone()));
        prev_raw_loss = new_loss;
        if (reference_loss - new_loss).abs() <= cfg.outer_loss_tol * reference_loss.abs().max(1e-300)
        {
            termination = Termination::Converged;
            break;
        }
    }
    drop(covs);

    match best {
        Some((trajectory, theta)) => Ok(BilevelResult {
            trajectory,
            theta,
            diagnostics,
            termination,
            error,
        }),
        None => {
            // the very first inner solve already increased the loss relative
            // to the initialization; return the initialization as the iterate
            let (init_poses, init_covs) = initialize(dataset, cfg)?;
            let graph = build_graph(dataset, &theta, cfg.msm)?;
            let final_loss = graph.objective(&init_poses)?;
            Ok(BilevelResult {
                trajectory: TrajectoryEstimate {
                    poses: init_poses,
                    covariances: init_covs,
                    final_loss,
                    converged: false,
                    iterations: 0,
                },
                theta,
                diagnostics,
                termination,
                error,
            })
        }
    }
}

/// Joint localization and uncertainty-aware noise model learning.
pub fn run_bilevel(
    dataset: &Dataset,
    cfg: &BilevelConfig,
    seed: u64,
) -> Result<BilevelResult, BilevelError> {
    run_method(dataset, Method::UGmm, cfg, seed)
}

/// The same loop with the outer step replaced by the baseline fit.
pub fn run_baseline(
    dataset: &Dataset,
    cfg: &BilevelConfig,
    method: Method,
    seed: u64,
) -> Result<BilevelResult, BilevelError> {
    run_method(dataset, method, cfg, seed)
}
