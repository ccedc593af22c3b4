//! Human-editable key-value configuration mirroring the library types.
//!
//! Syntax: `key = value`, one per line; `#` starts a comment; lists are
//! comma-separated; `anchor`, `tdoa_pair`, `noise_component`, and `waypoint`
//! repeat. `auto` selects the per-dimension default where noted.
//! `default-config` prints the canonical text below with every default.

use mixloc::bilevel::{BilevelConfig, InitMode, LossComparison};
use mixloc::mixture::{Gmm1D, GmmComponent, QuadratureConfig};
use mixloc::msm::MsmConfig;
use mixloc::sim::{ScenarioConfig, TrajectoryKind, UniformBounds};
use mixloc::solver::SolverConfig;
use mixloc::vb::{VbConfig, VbPriors};

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec {
    Auto,
    Line,
    Lissajous,
    Waypoints,
}

/// KL argument order for evaluation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlDirection {
    TruthFirst,
    EstimateFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    // scenario
    pub dim: usize,
    pub steps: usize,
    pub trajectory: TrajectorySpec,
    pub anchors: Vec<Vec<f64>>,
    pub pairs: Vec<(usize, usize)>,
    pub line_start: Option<Vec<f64>>,
    pub line_end: Option<Vec<f64>>,
    pub lissajous_center: Option<Vec<f64>>,
    pub lissajous_amplitude: Option<Vec<f64>>,
    pub lissajous_frequency: Option<Vec<f64>>,
    pub lissajous_phase: Option<Vec<f64>>,
    pub yaw_range: Option<f64>,
    pub waypoints: Vec<Vec<f64>>,
    pub odo_sigma: Option<f64>,
    pub odo_sigma_rot: Option<f64>,
    pub prior_sigma: f64,
    pub prior_sigma_rot: Option<f64>,
    pub lever_arm: Option<[f64; 3]>,
    pub noise_components: Vec<GmmComponent>,
    // bilevel
    pub outer_iters: usize,
    pub components: usize,
    pub msm_c: f64,
    pub kappa: f64,
    pub init: InitMode,
    pub loss_compare: LossComparison,
    pub outer_loss_tol: f64,
    pub force_phi_zero: bool,
    // vb
    pub alpha0: f64,
    pub beta0: f64,
    pub m0: f64,
    pub nu0: f64,
    /// None = data-driven `1 / (nu0 var(r))`.
    pub w0: Option<f64>,
    pub vb_max_sweeps: usize,
    pub vb_tol: f64,
    // solver
    pub max_iterations: usize,
    pub damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub step_tol: f64,
    pub loss_tol: f64,
    // eval
    pub kl_direction: KlDirection,
    pub kl_span_sigmas: f64,
    pub kl_points: usize,
    // compare
    pub compare_dims: Vec<usize>,
    pub compare_seeds: u64,
    // study
    pub study_omegas: Vec<f64>,
    pub study_deltas: Vec<f64>,
    pub study_samples: usize,
    pub study_seeds: u64,
    pub uniform_bounds: UniformBounds,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            dim: 2,
            steps: 120,
            trajectory: TrajectorySpec::Auto,
            anchors: Vec::new(),
            pairs: Vec::new(),
            line_start: None,
            line_end: None,
            lissajous_center: None,
            lissajous_amplitude: None,
            lissajous_frequency: None,
            lissajous_phase: None,
            yaw_range: None,
            waypoints: Vec::new(),
            odo_sigma: None,
            odo_sigma_rot: None,
            prior_sigma: 0.01,
            prior_sigma_rot: None,
            lever_arm: None,
            noise_components: Vec::new(),
            outer_iters: 10,
            components: 3,
            msm_c: 10.0,
            kappa: 2.0,
            init: InitMode::DeadReckoning,
            loss_compare: LossComparison::UnderNewTheta,
            outer_loss_tol: 1e-6,
            force_phi_zero: false,
            alpha0: 1.0,
            beta0: 1.0,
            m0: 0.0,
            nu0: 2.0,
            w0: None,
            vb_max_sweeps: 200,
            vb_tol: 1e-6,
            max_iterations: 100,
            damping_init: 1e-4,
            damping_up: 10.0,
            damping_down: 0.1,
            step_tol: 1e-8,
            loss_tol: 1e-10,
            kl_direction: KlDirection::TruthFirst,
            kl_span_sigmas: 10.0,
            kl_points: 4001,
            compare_dims: vec![1, 2, 3],
            compare_seeds: 20,
            study_omegas: (0..=10).map(|v| v as f64).collect(),
            study_deltas: vec![0.1, 0.5, 1.0, 1.5, 1.9],
            study_samples: 5000,
            study_seeds: 50,
            uniform_bounds: UniformBounds::Variance,
        }
    }
}

fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|v| v.trim().parse().map_err(|e| format!("{v:?}: {e}")))
        .collect()
}

impl AppConfig {
    /// Parses the key-value text; errors carry the line number and key.
    pub fn parse(text: &str) -> Result<AppConfig, String> {
        let mut cfg = AppConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {lineno}: expected key = value"))?;
            let key = key.trim();
            let value = value.trim();
            let err = |e: String| format!("line {lineno}, key {key}: {e}");
            let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| err(e.to_string()));
            let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| err(e.to_string()));
            match key {
                "dim" => cfg.dim = parse_usize(value)?,
                "steps" => cfg.steps = parse_usize(value)?,
                "trajectory" => {
                    cfg.trajectory = match value {
                        "auto" => TrajectorySpec::Auto,
                        "line" => TrajectorySpec::Line,
                        "lissajous" => TrajectorySpec::Lissajous,
                        "waypoints" => TrajectorySpec::Waypoints,
                        other => return Err(err(format!("unknown trajectory {other:?}"))),
                    }
                }
                "anchor" => cfg.anchors.push(parse_list(value).map_err(err)?),
                "tdoa_pair" => {
                    let v = parse_list(value).map_err(err)?;
                    if v.len() != 2 {
                        return Err(err("expected i,j".into()));
                    }
                    cfg.pairs.push((v[0] as usize, v[1] as usize));
                }
                "line_start" => cfg.line_start = Some(parse_list(value).map_err(err)?),
                "line_end" => cfg.line_end = Some(parse_list(value).map_err(err)?),
                "lissajous_center" => cfg.lissajous_center = Some(parse_list(value).map_err(err)?),
                "lissajous_amplitude" => {
                    cfg.lissajous_amplitude = Some(parse_list(value).map_err(err)?)
                }
                "lissajous_frequency" => {
                    cfg.lissajous_frequency = Some(parse_list(value).map_err(err)?)
                }
                "lissajous_phase" => cfg.lissajous_phase = Some(parse_list(value).map_err(err)?),
                "yaw_range" => cfg.yaw_range = Some(parse_f64(value)?),
                "waypoint" => cfg.waypoints.push(parse_list(value).map_err(err)?),
                "odo_sigma" => {
                    cfg.odo_sigma = if value == "auto" { None } else { Some(parse_f64(value)?) }
                }
                "odo_sigma_rot" => {
                    cfg.odo_sigma_rot =
                        if value == "auto" { None } else { Some(parse_f64(value)?) }
                }
                "prior_sigma" => cfg.prior_sigma = parse_f64(value)?,
                "prior_sigma_rot" => {
                    cfg.prior_sigma_rot =
                        if value == "auto" { None } else { Some(parse_f64(value)?) }
                }
                "lever_arm" => {
                    if value == "auto" {
                        cfg.lever_arm = None;
                    } else {
                        let v = parse_list(value).map_err(err)?;
                        if v.len() != 3 {
                            return Err(err("expected three components".into()));
                        }
                        cfg.lever_arm = Some([v[0], v[1], v[2]]);
                    }
                }
                "noise_component" => {
                    let v = parse_list(value).map_err(err)?;
                    if v.len() != 3 {
                        return Err(err("expected weight,mean,std".into()));
                    }
                    cfg.noise_components.push(GmmComponent {
                        weight: v[0],
                        mean: v[1],
                        std: v[2],
                    });
                }
                "outer_iters" => cfg.outer_iters = parse_usize(value)?,
                "components" => cfg.components = parse_usize(value)?,
                "msm_c" => cfg.msm_c = parse_f64(value)?,
                "kappa" => cfg.kappa = parse_f64(value)?,
                "init" => {
                    cfg.init = match value {
                        "dead-reckoning" => InitMode::DeadReckoning,
                        "gaussian-map" => InitMode::GaussianMap,
                        other => return Err(err(format!("unknown init mode {other:?}"))),
                    }
                }
                "loss_compare" => {
                    cfg.loss_compare = match value {
                        "new-theta" => LossComparison::UnderNewTheta,
                        "raw" => LossComparison::RawValues,
                        other => return Err(err(format!("unknown loss comparison {other:?}"))),
                    }
                }
                "outer_loss_tol" => cfg.outer_loss_tol = parse_f64(value)?,
                "force_phi_zero" => {
                    cfg.force_phi_zero = value
                        .parse()
                        .map_err(|e: std::str::ParseBoolError| err(e.to_string()))?
                }
                "alpha0" => cfg.alpha0 = parse_f64(value)?,
                "beta0" => cfg.beta0 = parse_f64(value)?,
                "m0" => cfg.m0 = parse_f64(value)?,
                "nu0" => cfg.nu0 = parse_f64(value)?,
                "w0" => cfg.w0 = if value == "auto" { None } else { Some(parse_f64(value)?) },
                "vb_max_sweeps" => cfg.vb_max_sweeps = parse_usize(value)?,
                "vb_tol" => cfg.vb_tol = parse_f64(value)?,
                "max_iterations" => cfg.max_iterations = parse_usize(value)?,
                "damping_init" => cfg.damping_init = parse_f64(value)?,
                "damping_up" => cfg.damping_up = parse_f64(value)?,
                "damping_down" => cfg.damping_down = parse_f64(value)?,
                "step_tol" => cfg.step_tol = parse_f64(value)?,
                "loss_tol" => cfg.loss_tol = parse_f64(value)?,
                "kl_direction" => {
                    cfg.kl_direction = match value {
                        "truth-first" => KlDirection::TruthFirst,
                        "estimate-first" => KlDirection::EstimateFirst,
                        other => return Err(err(format!("unknown direction {other:?}"))),
                    }
                }
                "kl_span_sigmas" => cfg.kl_span_sigmas = parse_f64(value)?,
                "kl_points" => cfg.kl_points = parse_usize(value)?,
                "compare_dims" => {
                    cfg.compare_dims = parse_list(value)
                        .map_err(err)?
                        .into_iter()
                        .map(|v| v as usize)
                        .collect()
                }
                "compare_seeds" => {
                    cfg.compare_seeds = value.parse().map_err(|e| err(format!("{e}")))?
                }
                "study_omegas" => cfg.study_omegas = parse_list(value).map_err(err)?,
                "study_deltas" => cfg.study_deltas = parse_list(value).map_err(err)?,
                "study_samples" => cfg.study_samples = parse_usize(value)?,
                "study_seeds" => {
                    cfg.study_seeds = value.parse().map_err(|e| err(format!("{e}")))?
                }
                "uniform_bounds" => {
                    cfg.uniform_bounds = match value {
                        "variance" => UniformBounds::Variance,
                        "stddev" => UniformBounds::StdDev,
                        other => return Err(err(format!("unknown interpretation {other:?}"))),
                    }
                }
                other => return Err(format!("line {lineno}: unknown key {other:?}")),
            }
        }
        Ok(cfg)
    }

    /// Canonical config text with every default; `parse` accepts it.
    pub fn default_text() -> String {
        r#"# mixloc configuration
# 'key = value', '#' comments, comma-separated lists; 'auto' picks the
# per-dimension default. Repeatable keys: anchor, tdoa_pair, waypoint,
# noise_component.

# ---- scenario ----
dim = 2
steps = 120
trajectory = auto                # auto | line | lissajous | waypoints
# anchor = x,y                   # repeat per anchor (auto layout if omitted)
# tdoa_pair = 0,1                # repeat per TDOA pair
# line_start = -3,-2             # line generator endpoints
# line_end = 3,2
# lissajous_center = 0,0         # per-axis sinusoid parameters
# lissajous_amplitude = 3.5,2.5
# lissajous_frequency = 1,2
# lissajous_phase = 0,1.5707963267948966
# yaw_range = 3.141592653589793  # 3-D yaw sweep over the run (rad)
# waypoint = 0,0                 # repeat for the waypoints generator
odo_sigma = auto                 # m/step; auto: 0.02 (1-D/2-D), 0.008 (3-D)
odo_sigma_rot = auto             # rad/step; auto: 0 (flat), 0.003 (3-D)
prior_sigma = 0.01               # m, initial-pose prior
prior_sigma_rot = auto           # rad; auto: 0 (flat), 0.01 (3-D)
lever_arm = auto                 # m, body frame; auto: 0.10,0.02,-0.05 (3-D)
# noise_component = weight,mean,std   # truth mixture, shared by all pairs;
#                                     # default 0.75,0,0.1 + 0.25,0.6,0.2

# ---- bi-level loop ----
outer_iters = 10
components = 3                   # mixture components K
msm_c = 10                       # cost normalization offset
kappa = 2                        # sigma-point spread parameter
init = dead-reckoning            # dead-reckoning | gaussian-map
loss_compare = new-theta         # new-theta | raw
outer_loss_tol = 1e-6
force_phi_zero = false           # turns the ugmm method into cgmm

# ---- variational fit ----
alpha0 = 1
beta0 = 1
m0 = 0
nu0 = 2
w0 = auto                        # auto = 1/(nu0 * var(residuals))
vb_max_sweeps = 200
vb_tol = 1e-6

# ---- inner solver ----
max_iterations = 100
damping_init = 1e-4
damping_up = 10
damping_down = 0.1
step_tol = 1e-8
loss_tol = 1e-10

# ---- evaluation ----
kl_direction = truth-first       # truth-first | estimate-first
kl_span_sigmas = 10
kl_points = 4001

# ---- compare sweep ----
compare_dims = 1,2,3
compare_seeds = 20

# ---- noise-model study ----
study_omegas = 0,1,2,3,4,5,6,7,8,9,10
study_deltas = 0.1,0.5,1.0,1.5,1.9
study_samples = 5000
study_seeds = 50
uniform_bounds = variance        # variance | stddev
"#
        .to_string()
    }

    /// Scenario for one dimension and seed: per-dimension defaults with the
    /// config's explicit overrides applied.
    pub fn scenario(&self, dim: usize, seed: u64) -> Result<ScenarioConfig, String> {
        if !(1..=3).contains(&dim) {
            return Err(format!("dimension must be 1, 2 or 3, got {dim}"));
        }
        let mut sc = ScenarioConfig::default_for_dim(dim, seed);
        sc.t_steps = self.steps;
        if !self.anchors.is_empty() {
            sc.anchors = self.anchors.clone();
        }
        if !self.pairs.is_empty() {
            sc.pairs = self.pairs.clone();
        }
        match self.trajectory {
            TrajectorySpec::Auto => {}
            TrajectorySpec::Line => {
                let start = self
                    .line_start
                    .clone()
                    .ok_or("line trajectory needs line_start")?;
                let end = self.line_end.clone().ok_or("line trajectory needs line_end")?;
                sc.trajectory = TrajectoryKind::Line { start, end };
            }
            TrajectorySpec::Lissajous => {
                let default = match ScenarioConfig::default_for_dim(dim, seed).trajectory {
                    TrajectoryKind::Lissajous {
                        center,
                        amplitude,
                        frequency,
                        phase,
                        yaw_range,
                    } => (center, amplitude, frequency, phase, yaw_range),
                    _ => unreachable!("defaults are lissajous"),
                };
                sc.trajectory = TrajectoryKind::Lissajous {
                    center: self.lissajous_center.clone().unwrap_or(default.0),
                    amplitude: self.lissajous_amplitude.clone().unwrap_or(default.1),
                    frequency: self.lissajous_frequency.clone().unwrap_or(default.2),
                    phase: self.lissajous_phase.clone().unwrap_or(default.3),
                    yaw_range: self.yaw_range.unwrap_or(default.4),
                };
            }
            TrajectorySpec::Waypoints => {
                if self.waypoints.len() < 2 {
                    return Err("waypoints trajectory needs at least two waypoint entries".into());
                }
                sc.trajectory = TrajectoryKind::WaypointSpline {
                    waypoints: self.waypoints.clone(),
                };
            }
        }
        if let Some(v) = self.odo_sigma {
            sc.odo_sigma_trans = v;
        }
        if let Some(v) = self.odo_sigma_rot {
            sc.odo_sigma_rot = v;
        }
        sc.prior_sigma_trans = self.prior_sigma;
        if let Some(v) = self.prior_sigma_rot {
            sc.prior_sigma_rot = v;
        }
        if let Some(v) = self.lever_arm {
            sc.lever_arm = v;
        }
        if !self.noise_components.is_empty() {
            let gmm = Gmm1D::new(self.noise_components.clone())
                .map_err(|e| format!("noise_component: {e}"))?;
            sc.noise_truth = vec![gmm; sc.pairs.len()];
        } else if sc.noise_truth.len() != sc.pairs.len() {
            sc.noise_truth = vec![mixloc::sim::default_noise_truth(); sc.pairs.len()];
        }
        sc.seed = seed;
        Ok(sc)
    }

    pub fn bilevel(&self) -> BilevelConfig {
        BilevelConfig {
            max_outer_iterations: self.outer_iters,
            num_components: self.components,
            msm: MsmConfig { c: self.msm_c },
            solver: SolverConfig {
                max_iterations: self.max_iterations,
                initial_damping: self.damping_init,
                damping_up: self.damping_up,
                damping_down: self.damping_down,
                step_tol: self.step_tol,
                rel_loss_tol: self.loss_tol,
            },
            vb: VbConfig {
                max_sweeps: self.vb_max_sweeps,
                tol: self.vb_tol,
            },
            vb_priors: self.w0.map(|w0| VbPriors {
                alpha0: self.alpha0,
                beta0: self.beta0,
                m0: self.m0,
                w0,
                nu0: self.nu0,
            }),
            kappa: self.kappa,
            init_mode: self.init,
            loss_comparison: self.loss_compare,
            force_phi_zero: self.force_phi_zero,
            outer_loss_tol: self.outer_loss_tol,
        }
    }

    /// Priors for standalone fits (the bilevel path resolves `auto` per fit).
    pub fn vb_priors_for(&self, residuals: &[f64]) -> VbPriors {
        match self.w0 {
            Some(w0) => VbPriors {
                alpha0: self.alpha0,
                beta0: self.beta0,
                m0: self.m0,
                w0,
                nu0: self.nu0,
            },
            None => VbPriors {
                alpha0: self.alpha0,
                beta0: self.beta0,
                m0: self.m0,
                nu0: self.nu0,
                ..VbPriors::data_driven(residuals)
            },
        }
    }

    pub fn quadrature(&self) -> QuadratureConfig {
        QuadratureConfig {
            span_sigmas: self.kl_span_sigmas,
            points: self.kl_points,
        }
    }

    /// KL between truth and estimate in the configured direction.
    pub fn kl(&self, truth: &Gmm1D, estimate: &Gmm1D) -> f64 {
        let quad = self.quadrature();
        match self.kl_direction {
            KlDirection::TruthFirst => mixloc::mixture::gmm_kl(truth, estimate, &quad),
            KlDirection::EstimateFirst => mixloc::mixture::gmm_kl(estimate, truth, &quad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_text_parses_to_defaults() {
        let parsed = AppConfig::parse(&AppConfig::default_text()).unwrap();
        assert_eq!(parsed, AppConfig::default());
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = AppConfig::parse("dim = 2\nbogus = 1\n").unwrap_err();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn overrides_apply_to_scenario() {
        let cfg = AppConfig::parse(
            "dim = 1\nsteps = 50\nodo_sigma = 0.05\nnoise_component = 1.0,0.0,0.2\n",
        )
        .unwrap();
        let sc = cfg.scenario(1, 9).unwrap();
        assert_eq!(sc.t_steps, 50);
        assert_eq!(sc.odo_sigma_trans, 0.05);
        assert_eq!(sc.noise_truth[0].components().len(), 1);
        assert_eq!(sc.seed, 9);
    }

    #[test]
    fn explicit_vb_priors_pass_through() {
        let cfg = AppConfig::parse("w0 = 2.5\nbeta0 = 3\n").unwrap();
        let priors = cfg.vb_priors_for(&[0.0, 1.0]);
        assert_eq!(priors.w0, 2.5);
        assert_eq!(priors.beta0, 3.0);
        let bl = cfg.bilevel();
        assert!(bl.vb_priors.is_some());
    }
}
