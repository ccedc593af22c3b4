//! Persistent formats and evaluation metrics: line-delimited dataset files,
//! model and trajectory files, the flat results CSV, and RMSE.
//!
//! All floating-point fields are written as decimal text with 17 significant
//! digits, which round-trips IEEE f64 exactly; rewriting the same data
//! produces byte-identical files.

use crate::lie::{Covariance, Pose};
use crate::mixture::{Gmm1D, GmmComponent};
use crate::scene::{
    AnchorConstellation, Dataset, OdometryIncrement, SensorRig, TdoaMeasurement,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

pub const DATASET_HEADER: &str = "mixloc-dataset v1";
pub const MODELS_HEADER: &str = "mixloc-models v1";
pub const TRAJECTORY_HEADER: &str = "mixloc-trajectory v1";

#[derive(Debug)]
pub enum IoError {
    Io(std::io::Error),
    Parse { line: usize, message: String },
    SchemaVersionMismatch { found: String },
    LengthMismatch { expected: usize, got: usize },
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoError::Io(e) => write!(f, "{e}"),
            IoError::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            IoError::SchemaVersionMismatch { found } => {
                write!(f, "unsupported schema header: {found:?}")
            }
            IoError::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for IoError {}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError::Io(e)
    }
}

/// 17 significant digits: exact f64 round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

// value of `key=` in a header line, ignoring non key=value tokens.
fn header_usize(header: &str, key: &str, lineno: usize) -> Result<usize, IoError> {
    header
        .split_whitespace()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| parse_err(lineno, format!("missing header field {key}")))?
        .parse()
        .map_err(|e| parse_err(lineno, format!("header field {key}: {e}")))
}

// key=value tokens of one record line.
fn fields(line: &str, lineno: usize) -> Result<BTreeMap<&str, &str>, IoError> {
    let mut map = BTreeMap::new();
    for token in line.split_whitespace().skip(1) {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, format!("expected key=value, got {token:?}")))?;
        map.insert(k, v);
    }
    Ok(map)
}

fn get_f64(map: &BTreeMap<&str, &str>, key: &str, lineno: usize) -> Result<f64, IoError> {
    map.get(key)
        .ok_or_else(|| parse_err(lineno, format!("missing field {key}")))?
        .parse()
        .map_err(|e| parse_err(lineno, format!("field {key}: {e}")))
}

fn get_usize(map: &BTreeMap<&str, &str>, key: &str, lineno: usize) -> Result<usize, IoError> {
    map.get(key)
        .ok_or_else(|| parse_err(lineno, format!("missing field {key}")))?
        .parse()
        .map_err(|e| parse_err(lineno, format!("field {key}: {e}")))
}

fn pose_fields(pose: &Pose) -> String {
    match pose {
        Pose::Scalar1D(x) => format!("x={}", fmt_f64(*x)),
        Pose::Planar2D(p) => format!("x={} y={}", fmt_f64(p.x), fmt_f64(p.y)),
        Pose::Rigid3D {
            rotation,
            translation,
        } => {
            let mut out = format!(
                "tx={} ty={} tz={}",
                fmt_f64(translation.x),
                fmt_f64(translation.y),
                fmt_f64(translation.z)
            );
            for r in 0..3 {
                for c in 0..3 {
                    out.push_str(&format!(" r{r}{c}={}", fmt_f64(rotation[(r, c)])));
                }
            }
            out
        }
    }
}

fn parse_pose(map: &BTreeMap<&str, &str>, dim: usize, lineno: usize) -> Result<Pose, IoError> {
    match dim {
        1 => Ok(Pose::Scalar1D(get_f64(map, "x", lineno)?)),
        2 => Ok(Pose::Planar2D(Vector2::new(
            get_f64(map, "x", lineno)?,
            get_f64(map, "y", lineno)?,
        ))),
        3 => {
            let translation = Vector3::new(
                get_f64(map, "tx", lineno)?,
                get_f64(map, "ty", lineno)?,
                get_f64(map, "tz", lineno)?,
            );
            let mut rotation = Matrix3::zeros();
            for r in 0..3 {
                for c in 0..3 {
                    rotation[(r, c)] = get_f64(map, &format!("r{r}{c}"), lineno)?;
                }
            }
            Ok(Pose::Rigid3D {
                rotation,
                translation,
            })
        }
        _ => Err(parse_err(lineno, format!("unsupported dim {dim}"))),
    }
}

fn cov_field(cov: &Covariance) -> String {
    cov.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn parse_cov(raw: &str, dof: usize, lineno: usize) -> Result<Covariance, IoError> {
    let values: Vec<f64> = raw
        .split(',')
        .map(|v| v.parse())
        .collect::<Result<_, _>>()
        .map_err(|e| parse_err(lineno, format!("covariance entry: {e}")))?;
    if values.len() != dof * dof {
        return Err(parse_err(
            lineno,
            format!("covariance needs {} entries, got {}", dof * dof, values.len()),
        ));
    }
    // nalgebra iter order is column-major; symmetric matrices are unaffected
    Ok(DMatrix::from_vec(dof, dof, values))
}

/// Serializes a dataset (with optional ground-truth poses) to the
/// line-delimited text format.
pub fn dataset_to_string(dataset: &Dataset, truth: Option<&[Pose]>) -> String {
    let dim = dataset.dim();
    let mut out = format!("{DATASET_HEADER} dim={dim} units=m,rad,s\n");
    let l = dataset.rig.lever_arm;
    out.push_str(&format!(
        "rig lx={} ly={} lz={}\n",
        fmt_f64(l.x),
        fmt_f64(l.y),
        fmt_f64(l.z)
    ));
    for (idx, a) in dataset.anchors.positions().iter().enumerate() {
        let coords = ["x", "y", "z"]
            .iter()
            .take(dim)
            .enumerate()
            .map(|(d, name)| format!("{name}={}", fmt_f64(a[d])))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!("anchor idx={idx} {coords}\n"));
    }
    for &(i, j) in dataset.anchors.pairs() {
        out.push_str(&format!("pair i={i} j={j}\n"));
    }
    out.push_str(&format!(
        "prior {} cov={}\n",
        pose_fields(&dataset.prior_mean),
        cov_field(&dataset.prior_cov)
    ));
    for (t, incr) in dataset.odometry.iter().enumerate() {
        out.push_str(&format!(
            "odom t={} {} cov={}\n",
            t + 1,
            pose_fields(&incr.delta),
            cov_field(&incr.noise_cov)
        ));
    }
    for m in &dataset.tdoa {
        out.push_str(&format!(
            "tdoa i={} j={} t={} d={}\n",
            m.pair.0,
            m.pair.1,
            m.pose_index,
            fmt_f64(m.value)
        ));
    }
    if let Some(truth) = truth {
        for (t, pose) in truth.iter().enumerate() {
            out.push_str(&format!("truth_pose t={t} {}\n", pose_fields(pose)));
        }
    }
    out
}

/// Parses the dataset format; the second element carries ground-truth poses
/// when the file has `truth_pose` records.
pub fn dataset_from_str(text: &str) -> Result<(Dataset, Option<Vec<Pose>>), IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))?;
    if !header.starts_with(DATASET_HEADER) {
        return Err(IoError::SchemaVersionMismatch {
            found: header.chars().take(40).collect(),
        });
    }
    let dim = header_usize(header, "dim", 1)?;
    let dof = match dim {
        1 => 1,
        2 => 2,
        3 => 6,
        _ => return Err(parse_err(1, format!("unsupported dim {dim}"))),
    };

    let mut rig = SensorRig::zero();
    let mut anchor_list: Vec<(usize, DVector<f64>)> = Vec::new();
    let mut pairs = Vec::new();
    let mut prior: Option<(Pose, Covariance)> = None;
    let mut odometry: Vec<(usize, OdometryIncrement)> = Vec::new();
    let mut tdoa = Vec::new();
    let mut truth: Vec<(usize, Pose)> = Vec::new();

    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let kind = line.split_whitespace().next().unwrap_or("");
        let map = fields(line, lineno)?;
        match kind {
            "rig" => {
                rig = SensorRig::new(Vector3::new(
                    get_f64(&map, "lx", lineno)?,
                    get_f64(&map, "ly", lineno)?,
                    get_f64(&map, "lz", lineno)?,
                ));
            }
            "anchor" => {
                let idx = get_usize(&map, "idx", lineno)?;
                let coords: Vec<f64> = ["x", "y", "z"]
                    .iter()
                    .take(dim)
                    .map(|name| get_f64(&map, name, lineno))
                    .collect::<Result<_, _>>()?;
                anchor_list.push((idx, DVector::from_vec(coords)));
            }
            "pair" => {
                pairs.push((get_usize(&map, "i", lineno)?, get_usize(&map, "j", lineno)?));
            }
            "prior" => {
                let mean = parse_pose(&map, dim, lineno)?;
                let cov_raw = map
                    .get("cov")
                    .ok_or_else(|| parse_err(lineno, "missing field cov"))?;
                prior = Some((mean, parse_cov(cov_raw, dof, lineno)?));
            }
            "odom" => {
                let t = get_usize(&map, "t", lineno)?;
                let delta = parse_pose(&map, dim, lineno)?;
                let cov_raw = map
                    .get("cov")
                    .ok_or_else(|| parse_err(lineno, "missing field cov"))?;
                odometry.push((
                    t,
                    OdometryIncrement {
                        delta,
                        noise_cov: parse_cov(cov_raw, dof, lineno)?,
                    },
                ));
            }
            "tdoa" => {
                tdoa.push(TdoaMeasurement {
                    pair: (get_usize(&map, "i", lineno)?, get_usize(&map, "j", lineno)?),
                    pose_index: get_usize(&map, "t", lineno)?,
                    value: get_f64(&map, "d", lineno)?,
                });
            }
            "truth_pose" => {
                let t = get_usize(&map, "t", lineno)?;
                truth.push((t, parse_pose(&map, dim, lineno)?));
            }
            other => {
                return Err(parse_err(lineno, format!("unknown record kind {other:?}")));
            }
        }
    }

    anchor_list.sort_by_key(|(idx, _)| *idx);
    for (expect, (idx, _)) in anchor_list.iter().enumerate() {
        if *idx != expect {
            return Err(parse_err(0, format!("anchor indices not contiguous at {idx}")));
        }
    }
    let anchors = AnchorConstellation::new(
        anchor_list.into_iter().map(|(_, p)| p).collect(),
        pairs,
    )
    .map_err(|e| parse_err(0, e.to_string()))?;
    let (prior_mean, prior_cov) =
        prior.ok_or_else(|| parse_err(0, "missing prior record"))?;
    odometry.sort_by_key(|(t, _)| *t);
    for (expect, (t, _)) in odometry.iter().enumerate() {
        if *t != expect + 1 {
            return Err(parse_err(0, format!("odometry steps not contiguous at t={t}")));
        }
    }
    let dataset = Dataset {
        anchors,
        rig,
        odometry: odometry.into_iter().map(|(_, o)| o).collect(),
        tdoa,
        prior_mean,
        prior_cov,
    };
    dataset.validate().map_err(|e| parse_err(0, e.to_string()))?;

    let truth = if truth.is_empty() {
        None
    } else {
        truth.sort_by_key(|(t, _)| *t);
        if truth.len() != dataset.num_steps() + 1 {
            return Err(parse_err(
                0,
                format!(
                    "expected {} truth poses, got {}",
                    dataset.num_steps() + 1,
                    truth.len()
                ),
            ));
        }
        Some(truth.into_iter().map(|(_, p)| p).collect())
    };
    Ok((dataset, truth))
}

pub fn write_dataset(
    path: &Path,
    dataset: &Dataset,
    truth: Option<&[Pose]>,
) -> Result<(), IoError> {
    fs::write(path, dataset_to_string(dataset, truth))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, Option<Vec<Pose>>), IoError> {
    dataset_from_str(&fs::read_to_string(path)?)
}

/// Serializes per-pair mixtures; components in canonical ascending-mean order.
pub fn models_to_string(theta: &BTreeMap<(usize, usize), Gmm1D>) -> String {
    let mut out = format!("{MODELS_HEADER}\n");
    for (&(i, j), gmm) in theta {
        let canonical = gmm.clone().canonicalized();
        for (k, c) in canonical.components().iter().enumerate() {
            out.push_str(&format!(
                "model i={i} j={j} comp={k} weight={} mean={} std={}\n",
                fmt_f64(c.weight),
                fmt_f64(c.mean),
                fmt_f64(c.std)
            ));
        }
    }
    out
}

pub fn models_from_str(text: &str) -> Result<BTreeMap<(usize, usize), Gmm1D>, IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if header.trim() != MODELS_HEADER {
        return Err(IoError::SchemaVersionMismatch {
            found: header.chars().take(40).collect(),
        });
    }
    let mut raw: BTreeMap<(usize, usize), Vec<(usize, GmmComponent)>> = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let map = fields(line, lineno)?;
        let pair = (get_usize(&map, "i", lineno)?, get_usize(&map, "j", lineno)?);
        raw.entry(pair).or_default().push((
            get_usize(&map, "comp", lineno)?,
            GmmComponent {
                weight: get_f64(&map, "weight", lineno)?,
                mean: get_f64(&map, "mean", lineno)?,
                std: get_f64(&map, "std", lineno)?,
            },
        ));
    }
    let mut out = BTreeMap::new();
    for (pair, mut comps) in raw {
        comps.sort_by_key(|(k, _)| *k);
        let gmm = Gmm1D::new(comps.into_iter().map(|(_, c)| c).collect())
            .map_err(|e| parse_err(0, format!("pair ({}, {}): {e}", pair.0, pair.1)))?;
        out.insert(pair, gmm);
    }
    Ok(out)
}

pub fn write_models(path: &Path, theta: &BTreeMap<(usize, usize), Gmm1D>) -> Result<(), IoError> {
    fs::write(path, models_to_string(theta))?;
    Ok(())
}

pub fn read_models(path: &Path) -> Result<BTreeMap<(usize, usize), Gmm1D>, IoError> {
    models_from_str(&fs::read_to_string(path)?)
}

/// Serializes an estimated trajectory with marginal covariances and loss.
pub fn trajectory_to_string(poses: &[Pose], covariances: &[Covariance], loss: f64) -> String {
    let dim = poses.first().map_or(0, |p| p.dim());
    let mut out = format!("{TRAJECTORY_HEADER} dim={dim}\n");
    out.push_str(&format!("loss value={}\n", fmt_f64(loss)));
    for (t, pose) in poses.iter().enumerate() {
        out.push_str(&format!("pose t={t} {}\n", pose_fields(pose)));
    }
    for (t, cov) in covariances.iter().enumerate() {
        out.push_str(&format!("cov t={t} c={}\n", cov_field(cov)));
    }
    out
}

#[allow(clippy::type_complexity)]
pub fn trajectory_from_str(text: &str) -> Result<(Vec<Pose>, Vec<Covariance>, f64), IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if !header.starts_with(TRAJECTORY_HEADER) {
        return Err(IoError::SchemaVersionMismatch {
            found: header.chars().take(40).collect(),
        });
    }
    let dim = header_usize(header, "dim", 1)?;
    let dof = match dim {
        1 => 1,
        2 => 2,
        3 => 6,
        _ => return Err(parse_err(1, format!("unsupported dim {dim}"))),
    };
    let mut poses = Vec::new();
    let mut covs = Vec::new();
    let mut loss = f64::NAN;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let kind = line.split_whitespace().next().unwrap_or("");
        let map = fields(line, lineno)?;
        match kind {
            "loss" => loss = get_f64(&map, "value", lineno)?,
            "pose" => {
                let t = get_usize(&map, "t", lineno)?;
                poses.push((t, parse_pose(&map, dim, lineno)?));
            }
            "cov" => {
                let t = get_usize(&map, "t", lineno)?;
                let raw = map
                    .get("c")
                    .ok_or_else(|| parse_err(lineno, "missing field c"))?;
                covs.push((t, parse_cov(raw, dof, lineno)?));
            }
            other => return Err(parse_err(lineno, format!("unknown record kind {other:?}"))),
        }
    }
    poses.sort_by_key(|(t, _)| *t);
    covs.sort_by_key(|(t, _)| *t);
    Ok((
        poses.into_iter().map(|(_, p)| p).collect(),
        covs.into_iter().map(|(_, c)| c).collect(),
        loss,
    ))
}

pub fn write_trajectory(
    path: &Path,
    poses: &[Pose],
    covariances: &[Covariance],
    loss: f64,
) -> Result<(), IoError> {
    fs::write(path, trajectory_to_string(poses, covariances, loss))?;
    Ok(())
}

#[allow(clippy::type_complexity)]
pub fn read_trajectory(path: &Path) -> Result<(Vec<Pose>, Vec<Covariance>, f64), IoError> {
    trajectory_from_str(&fs::read_to_string(path)?)
}

/// Localization RMSE over translation components only.
pub fn rmse(estimate: &[Pose], truth: &[Pose]) -> Result<f64, IoError> {
    if estimate.len() != truth.len() {
        return Err(IoError::LengthMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let total: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.position() - t.position()).norm_squared())
        .sum();
    Ok((total / truth.len() as f64).sqrt())
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub rmse_m: f64,
    /// Mean per-pair KL; NaN when no truth models were available.
    pub kl_mean: f64,
    pub per_pair_kl: Vec<f64>,
    pub outer_iters: usize,
    pub term_reason: String,
    pub wall_s: f64,
}

pub fn records_header(pair_cols: usize) -> String {
    let mut h = String::from("scenario,method,seed,rmse_m,kl_nats_mean,outer_iters,term_reason,wall_s");
    for i in 0..pair_cols {
        h.push_str(&format!(",kl_pair_{i}"));
    }
    h
}

fn record_row(record: &ExperimentRecord, pair_cols: usize) -> String {
    let kl_mean = if record.kl_mean.is_nan() {
        String::new()
    } else {
        fmt_f64(record.kl_mean)
    };
    let mut row = format!(
        "{},{},{},{},{},{},{},{}",
        record.scenario,
        record.method,
        record.seed,
        fmt_f64(record.rmse_m),
        kl_mean,
        record.outer_iters,
        record.term_reason,
        fmt_f64(record.wall_s)
    );
    for i in 0..pair_cols {
        row.push(',');
        if let Some(kl) = record.per_pair_kl.get(i) {
            if !kl.is_nan() {
                row.push_str(&fmt_f64(*kl));
            }
        }
    }
    row
}

/// Appends records to a CSV file, writing the header on first creation.
/// Appending the same records twice yields byte-identical duplicate rows.
pub fn append_records(
    path: &Path,
    records: &[ExperimentRecord],
    pair_cols: usize,
) -> Result<(), IoError> {
    let mut body = String::new();
    if !path.exists() {
        body.push_str(&records_header(pair_cols));
        body.push('\n');
    }
    for record in records {
        body.push_str(&record_row(record, pair_cols));
        body.push('\n');
    }
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(body.as_bytes())?;
    Ok(())
}

/// Reads a results CSV; malformed rows are skipped and reported as warnings.
pub fn read_records(path: &Path) -> Result<(Vec<ExperimentRecord>, Vec<String>), IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if !header.starts_with("scenario,method,seed,") {
        return Err(IoError::SchemaVersionMismatch {
            found: header.chars().take(40).collect(),
        });
    }
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<ExperimentRecord> {
            if cols.len() < 8 {
                return None;
            }
            let per_pair_kl = cols[8..]
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Some(f64::NAN)
                    } else {
                        c.parse().ok()
                    }
                })
                .collect::<Option<Vec<f64>>>()?;
            Some(ExperimentRecord {
                scenario: cols[0].to_string(),
                method: cols[1].to_string(),
                seed: cols[2].parse().ok()?,
                rmse_m: cols[3].parse().ok()?,
                kl_mean: if cols[4].is_empty() {
                    f64::NAN
                } else {
                    cols[4].parse().ok()?
                },
                outer_iters: cols[5].parse().ok()?,
                term_reason: cols[6].to_string(),
                wall_s: cols[7].parse().ok()?,
                per_pair_kl,
            })
        })();
        match parsed {
            Some(record) => records.push(record),
            None => warnings.push(format!("line {lineno}: malformed row skipped")),
        }
    }
    Ok((records, warnings))
}

/// Group mean and percentiles of RMSE and KL per (scenario, method).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub scenario: String,
    pub method: String,
    pub count: usize,
    pub rmse_mean: f64,
    pub rmse_p50: f64,
    pub rmse_p90: f64,
    pub kl_mean: f64,
    pub kl_p50: f64,
    pub kl_p90: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Aggregates records by (scenario, method), sorted for stable output.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(String, String), Vec<&ExperimentRecord>> = BTreeMap::new();
    for record in records {
        groups
            .entry((record.scenario.clone(), record.method.clone()))
            .or_default()
            .push(record);
    }
    groups
        .into_iter()
        .map(|((scenario, method), rows)| {
            let mut rmse: Vec<f64> = rows.iter().map(|r| r.rmse_m).collect();
            rmse.sort_by(|a, b| a.partial_cmp(b).expect("finite rmse"));
            let mut kl: Vec<f64> = rows
                .iter()
                .map(|r| r.kl_mean)
                .filter(|v| !v.is_nan())
                .collect();
            kl.sort_by(|a, b| a.partial_cmp(b).expect("finite kl"));
            let mean = |v: &[f64]| {
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            };
            GroupSummary {
                scenario,
                method,
                count: rows.len(),
                rmse_mean: mean(&rmse),
                rmse_p50: percentile(&rmse, 0.5),
                rmse_p90: percentile(&rmse, 0.9),
                kl_mean: mean(&kl),
                kl_p50: percentile(&kl, 0.5),
                kl_p90: percentile(&kl, 0.9),
            }
        })
        .collect()
}
