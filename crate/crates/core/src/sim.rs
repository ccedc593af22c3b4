//! Scenario generation: 1-D, 2-D and 3-D trajectories with odometry noise
//! and two-component mixture measurement noise, plus the pose-perturbation
//! inputs of the noise-model study (uncertainty levels and covariance
//! mis-scaling).

use crate::lie::{retract, se3_log, Covariance, Pose, Tangent};
use crate::mixture::{gmm_draw, Gmm1D, GmmComponent};
use crate::scene::{
    tdoa_predict, AnchorConstellation, Dataset, OdometryIncrement, SensorRig, TdoaMeasurement,
};
use crate::seeds;
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    ConfigInvalid(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::ConfigInvalid(msg) => write!(f, "invalid scenario config: {msg}"),
        }
    }
}

impl std::error::Error for SimError {}

/// Ground-truth trajectory shape.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    /// Straight line from `start` to `end`.
    Line { start: Vec<f64>, end: Vec<f64> },
    /// Per-axis sinusoids `center + amp * sin(2 pi freq * t/T + phase)`;
    /// in 3-D a yaw of `yaw_range * t/T` radians is applied about z.
    Lissajous {
        center: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        phase: Vec<f64>,
        yaw_range: f64,
    },
    /// Catmull-Rom spline through the waypoints, uniform parameterization.
    WaypointSpline { waypoints: Vec<Vec<f64>> },
}

/// Full description of one simulated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub dimension: usize,
    pub t_steps: usize,
    pub anchors: Vec<Vec<f64>>,
    pub pairs: Vec<(usize, usize)>,
    pub trajectory: TrajectoryKind,
    /// Per-axis odometry translation noise std (m per step).
    pub odo_sigma_trans: f64,
    /// Per-axis odometry rotation noise std (rad per step, 3-D only).
    pub odo_sigma_rot: f64,
    pub prior_sigma_trans: f64,
    pub prior_sigma_rot: f64,
    /// Measurement noise truth, one mixture per pair.
    pub noise_truth: Vec<Gmm1D>,
    pub lever_arm: [f64; 3],
    pub seed: u64,
}

/// The representative NLOS-bias shape used by default: a dominant tight
/// component at zero and a biased wide one.
pub fn default_noise_truth() -> Gmm1D {
    Gmm1D::new(vec![
        GmmComponent {
            weight: 0.75,
            mean: 0.0,
            std: 0.1,
        },
        GmmComponent {
            weight: 0.25,
            mean: 0.6,
            std: 0.2,
        },
    ])
    .expect("default mixture is valid")
}

impl ScenarioConfig {
    /// Paper-shaped defaults per dimension: one pair on a line for 1-D, two
    /// disjoint pairs for 2-D, four disjoint pairs with a lever arm for 3-D.
    pub fn default_for_dim(dimension: usize, seed: u64) -> Self {
        let t_steps = 120;
        match dimension {
            1 => ScenarioConfig {
                dimension,
                t_steps,
                anchors: vec![vec![0.0], vec![10.0]],
                pairs: vec![(0, 1)],
                trajectory: TrajectoryKind::Lissajous {
                    center: vec![5.0],
                    amplitude: vec![3.5],
                    frequency: vec![1.0],
                    phase: vec![0.0],
                    yaw_range: 0.0,
                },
                odo_sigma_trans: 0.02,
                odo_sigma_rot: 0.0,
                prior_sigma_trans: 0.01,
                prior_sigma_rot: 0.0,
                noise_truth: vec![default_noise_truth()],
                lever_arm: [0.0; 3],
                seed,
            },
            2 => ScenarioConfig {
                dimension,
                t_steps,
                // pair baselines along x and along y so both axes are
                // directly observable
                anchors: vec![
                    vec![-5.0, 0.0],
                    vec![5.0, 0.0],
                    vec![0.0, -5.0],
                    vec![0.0, 5.0],
                ],
                pairs: vec![(0, 1), (2, 3)],
                trajectory: TrajectoryKind::Lissajous {
                    center: vec![0.0, 0.0],
                    amplitude: vec![3.5, 2.5],
                    frequency: vec![1.0, 2.0],
                    phase: vec![0.0, PI / 2.0],
                    yaw_range: 0.0,
                },
                odo_sigma_trans: 0.02,
                odo_sigma_rot: 0.0,
                prior_sigma_trans: 0.01,
                prior_sigma_rot: 0.0,
                noise_truth: vec![default_noise_truth(); 2],
                lever_arm: [0.0; 3],
                seed,
            },
            3 => ScenarioConfig {
                dimension,
                t_steps,
                // room-corner anchors paired across diagonals so the four
                // baselines span diverse directions
                anchors: vec![
                    vec![-3.5, -4.0, 0.3],
                    vec![3.5, 4.0, 2.8],
                    vec![3.5, -4.0, 0.3],
                    vec![-3.5, 4.0, 2.8],
                    vec![-3.5, 4.0, 0.3],
                    vec![3.5, -4.0, 2.8],
                    vec![3.5, 4.0, 0.3],
                    vec![-3.5, -4.0, 2.8],
                ],
                pairs: vec![(0, 1), (2, 3), (4, 5), (6, 7)],
                trajectory: TrajectoryKind::Lissajous {
                    center: vec![0.0, 0.0, 1.5],
                    amplitude: vec![2.5, 3.0, 0.8],
                    frequency: vec![1.0, 2.0, 2.0],
                    phase: vec![0.0, PI / 2.0, PI / 4.0],
                    yaw_range: PI,
                },
                odo_sigma_trans: 0.008,
                odo_sigma_rot: 0.003,
                prior_sigma_trans: 0.01,
                prior_sigma_rot: 0.01,
                noise_truth: vec![default_noise_truth(); 4],
                lever_arm: [0.10, 0.02, -0.05],
                seed,
            },
            _ => panic!("unsupported dimension {dimension}"),
        }
    }
}

/// Simulation output: the observable dataset plus what only the simulator
/// knows (truth poses and the per-pair truth mixtures).
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub truth: Vec<Pose>,
    pub truth_theta: BTreeMap<(usize, usize), Gmm1D>,
}

// Catmull-Rom interpolation through waypoints at parameter s in [0, 1].
fn catmull_rom(waypoints: &[Vec<f64>], s: f64) -> Vec<f64> {
    let m = waypoints.len();
    let segs = (m - 1) as f64;
    let x = (s * segs).min(segs - 1e-12);
    let i = x.floor() as usize;
    let u = x - i as f64;
    let at = |idx: isize| -> &Vec<f64> {
        let clamped = idx.clamp(0, (m - 1) as isize) as usize;
        &waypoints[clamped]
    };
    let (p0, p1, p2, p3) = (
        at(i as isize - 1),
        at(i as isize),
        at(i as isize + 1),
        at(i as isize + 2),
    );
    (0..p1.len())
        .map(|d| {
            0.5 * ((2.0 * p1[d])
                + (-p0[d] + p2[d]) * u
                + (2.0 * p0[d] - 5.0 * p1[d] + 4.0 * p2[d] - p3[d]) * u * u
                + (-p0[d] + 3.0 * p1[d] - 3.0 * p2[d] + p3[d]) * u * u * u)
        })
        .collect()
}

fn position_at(config: &ScenarioConfig, t: usize) -> Result<Vec<f64>, SimError> {
    let s = t as f64 / config.t_steps.max(1) as f64;
    match &config.trajectory {
        TrajectoryKind::Line { start, end } => {
            if start.len() != config.dimension || end.len() != config.dimension {
                return Err(SimError::ConfigInvalid(
                    "line endpoints must match the dimension".into(),
                ));
            }
            Ok((0..config.dimension)
                .map(|d| start[d] + (end[d] - start[d]) * s)
                .collect())
        }
        TrajectoryKind::Lissajous {
            center,
            amplitude,
            frequency,
            phase,
            ..
        } => {
            if center.len() != config.dimension
                || amplitude.len() != config.dimension
                || frequency.len() != config.dimension
                || phase.len() != config.dimension
            {
                return Err(SimError::ConfigInvalid(
                    "lissajous parameter lengths must match the dimension".into(),
                ));
            }
            Ok((0..config.dimension)
                .map(|d| center[d] + amplitude[d] * (2.0 * PI * frequency[d] * s + phase[d]).sin())
                .collect())
        }
        TrajectoryKind::WaypointSpline { waypoints } => {
            if waypoints.len() < 2 || waypoints.iter().any(|w| w.len() != config.dimension) {
                return Err(SimError::ConfigInvalid(
                    "need at least two waypoints of the right dimension".into(),
                ));
            }
            Ok(catmull_rom(waypoints, s))
        }
    }
}

fn truth_pose_at(config: &ScenarioConfig, t: usize) -> Result<Pose, SimError> {
    let p = position_at(config, t)?;
    Ok(match config.dimension {
        1 => Pose::Scalar1D(p[0]),
        2 => Pose::Planar2D(nalgebra::Vector2::new(p[0], p[1])),
        3 => {
            let yaw = match &config.trajectory {
                TrajectoryKind::Lissajous { yaw_range, .. } => {
                    yaw_range * t as f64 / config.t_steps.max(1) as f64
                }
                _ => 0.0,
            };
            let (sy, cy) = yaw.sin_cos();
            Pose::Rigid3D {
                rotation: nalgebra::Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0),
                translation: Vector3::new(p[0], p[1], p[2]),
            }
        }
        d => return Err(SimError::ConfigInvalid(format!("unsupported dimension {d}"))),
    })
}

// Diagonal covariance for the pose dof; floored so whitening stays defined
// in noise-free runs.
fn diag_cov(dof: usize, sigma_trans: f64, sigma_rot: f64) -> Covariance {
    let mut cov = Covariance::zeros(dof, dof);
    for i in 0..dof {
        let sigma = if dof == 6 && i >= 3 { sigma_rot } else { sigma_trans };
        cov[(i, i)] = (sigma * sigma).max(1e-12);
    }
    cov
}

fn draw_tangent<R: Rng>(dof: usize, sigma_trans: f64, sigma_rot: f64, rng: &mut R) -> Tangent {
    DVector::from_fn(dof, |i, _| {
        let sigma = if dof == 6 && i >= 3 { sigma_rot } else { sigma_trans };
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    })
}

/// Generates a dataset: ground truth from the trajectory generator,
/// odometry increments composed with sampled noise, one TDOA sample per
/// pair per step t = 1..T drawn around the noise-free prediction. Fully
/// determined by the config seed.
pub fn simulate(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    if config.pairs.is_empty() {
        return Err(SimError::ConfigInvalid("no TDOA pairs configured".into()));
    }
    if config.noise_truth.len() != config.pairs.len() {
        return Err(SimError::ConfigInvalid(format!(
            "{} noise models for {} pairs",
            config.noise_truth.len(),
            config.pairs.len()
        )));
    }
    if config.anchors.iter().any(|a| a.len() != config.dimension) {
        return Err(SimError::ConfigInvalid(
            "anchor dimensions must match the scenario dimension".into(),
        ));
    }
    let anchors = AnchorConstellation::new(
        config
            .anchors
            .iter()
            .map(|a| DVector::from_column_slice(a))
            .collect(),
        config.pairs.clone(),
    )
    .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;

    let truth: Vec<Pose> = (0..=config.t_steps)
        .map(|t| truth_pose_at(config, t))
        .collect::<Result<_, _>>()?;

    // the linear 1-D measurement model only holds strictly between anchors
    if config.dimension == 1 {
        let lo = config.anchors.iter().map(|a| a[0]).fold(f64::INFINITY, f64::min);
        let hi = config
            .anchors
            .iter()
            .map(|a| a[0])
            .fold(f64::NEG_INFINITY, f64::max);
        for p in &truth {
            if let Pose::Scalar1D(x) = p {
                if *x <= lo || *x >= hi {
                    return Err(SimError::ConfigInvalid(format!(
                        "1-D trajectory leaves the anchor interval ({lo}, {hi}) at x = {x}"
                    )));
                }
            }
        }
    }

    let rig = SensorRig::new(Vector3::new(
        config.lever_arm[0],
        config.lever_arm[1],
        config.lever_arm[2],
    ));
    let dof = truth[0].dof();

    let mut odo_rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, seeds::SIM_ODOMETRY, 0));
    let noise_cov = diag_cov(dof, config.odo_sigma_trans, config.odo_sigma_rot);
    let mut odometry = Vec::with_capacity(config.t_steps);
    for t in 1..=config.t_steps {
        let true_delta = match (&truth[t - 1], &truth[t]) {
            (Pose::Rigid3D { .. }, Pose::Rigid3D { .. }) => {
                truth[t - 1].inverse().compose(&truth[t])
            }
            (a, b) => match (a, b) {
                (Pose::Scalar1D(x0), Pose::Scalar1D(x1)) => Pose::Scalar1D(x1 - x0),
                (Pose::Planar2D(p0), Pose::Planar2D(p1)) => Pose::Planar2D(p1 - p0),
                _ => unreachable!("trajectory variants are homogeneous"),
            },
        };
        let xi = draw_tangent(dof, config.odo_sigma_trans, config.odo_sigma_rot, &mut odo_rng);
        let measured = match &true_delta {
            Pose::Rigid3D { .. } => retract(&true_delta, &xi),
            Pose::Scalar1D(x) => Pose::Scalar1D(x + xi[0]),
            Pose::Planar2D(p) => Pose::Planar2D(p + nalgebra::Vector2::new(xi[0], xi[1])),
        };
        odometry.push(OdometryIncrement {
            delta: measured,
            noise_cov: noise_cov.clone(),
        });
    }

    let mut meas_rng =
        ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, seeds::SIM_MEASUREMENT, 0));
    let mut tdoa = Vec::with_capacity(config.t_steps * config.pairs.len());
    for t in 1..=config.t_steps {
        for (pi, &pair) in config.pairs.iter().enumerate() {
            let clean = tdoa_predict(&truth[t], &rig, &anchors, pair)
                .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            let eta = gmm_draw(&config.noise_truth[pi], &mut meas_rng);
            tdoa.push(TdoaMeasurement {
                pair,
                pose_index: t,
                value: clean + eta,
            });
        }
    }

    let mut prior_rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, seeds::SIM_PRIOR, 0));
    let prior_cov = diag_cov(dof, config.prior_sigma_trans, config.prior_sigma_rot);
    let xi0 = draw_tangent(
        dof,
        config.prior_sigma_trans,
        config.prior_sigma_rot,
        &mut prior_rng,
    );
    let prior_mean = retract(&truth[0], &xi0);

    let truth_theta: BTreeMap<(usize, usize), Gmm1D> = config
        .pairs
        .iter()
        .copied()
        .zip(config.noise_truth.iter().cloned())
        .collect();

    Ok(SimOutput {
        dataset: Dataset {
            anchors,
            rig,
            odometry,
            tdoa,
            prior_mean,
            prior_cov,
        },
        truth,
        truth_theta,
    })
}

/// Reading of the study's uniform perturbation bounds: as diagonal variance
/// entries (default) or as standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UniformBounds {
    Variance,
    StdDev,
}

/// Pose-perturbation study inputs: per pose, a diagonal covariance with
/// translational entries drawn from `U(0, 0.035 omega)` and rotational
/// entries from `U(0, 0.05 omega)`, a perturbation sampled from it, and the
/// reported covariance mis-scaled by `delta`.
pub fn perturb_for_study(
    truth: &[Pose],
    omega: f64,
    delta: f64,
    seed: u64,
    bounds: UniformBounds,
) -> (Vec<Pose>, Vec<Covariance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::STUDY_PERTURB, 0));
    let mut noisy = Vec::with_capacity(truth.len());
    let mut covs = Vec::with_capacity(truth.len());
    for pose in truth {
        let dof = pose.dof();
        let mut cov = Covariance::zeros(dof, dof);
        for i in 0..dof {
            let bound = if dof == 6 && i >= 3 { 0.05 * omega } else { 0.035 * omega };
            let draw = rng.random::<f64>() * bound;
            cov[(i, i)] = match bounds {
                UniformBounds::Variance => draw,
                UniformBounds::StdDev => draw * draw,
            };
        }
        let xi = DVector::from_fn(dof, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            cov[(i, i)].sqrt() * z
        });
        noisy.push(retract(pose, &xi));
        covs.push(cov * delta);
    }
    (noisy, covs)
}

/// Ordered relative pose between consecutive truth poses; used by tests to
/// check odometry consistency.
pub fn true_increment(prev: &Pose, curr: &Pose) -> Result<Tangent, crate::lie::GeometryError> {
    match (prev, curr) {
        (Pose::Rigid3D { .. }, Pose::Rigid3D { .. }) => se3_log(&prev.inverse().compose(curr)),
        _ => Ok(curr.position() - prev.position()),
    }
}
