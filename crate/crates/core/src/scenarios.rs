//! Scenario parameter sets, ground-truth trajectories and prior draws.
//!
//! A [`ScenarioConfig`] is a plain serializable document; matrices are
//! stored as row-major nested arrays. Three built-in scenarios are provided:
//! `s1` (single sensor, object aligned with its velocity), `s2` (single
//! sensor, drifting object with fixed body orientation) and `s3` (nine-node
//! network tracking an ellipse).

use std::f64::consts::{FRAC_PI_4, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_central::CentralFilterState;
use crate::filter_distributed::{ConsensusConfig, NodeFilterState, PriorCase};
use crate::linalg::{from_rows, Mat3, Mat4, Vec2, Vec3, Vec4};
use crate::model::{wrap_angle, DynamicsModel, ExtentState, InfoEstimate, KinematicState, NoiseModel};
use crate::network::{GroundTruthStep, SensorNetwork, SensorNode, Shape, Topology};

pub const SCENARIO_NAMES: [&str; 3] = ["s1", "s2", "s3"];

/// How the sideslip angle of the true object evolves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SideslipProfile {
    /// Body axis along the velocity, `β ≡ 0`.
    Aligned,
    /// Body orientation fixed at `orientation`, so `β = heading − orientation`.
    FixedOrientation { orientation: f64 },
    Constant { sideslip: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Corner points in meters; the object starts at the first one.
    pub waypoints: Vec<[f64; 2]>,
    /// Constant speed in m/s.
    pub speed: f64,
    /// Radius of the arc joining consecutive legs, in meters.
    pub turn_radius: f64,
    pub sideslip: SideslipProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub position: [f64; 2],
    pub sensing_range: f64,
    pub meas_cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    Equal,
    UncorrelatedUnequal,
    CorrelatedUnequal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorInitPolicy {
    pub mode: PriorMode,
    /// Correlation of corresponding prior-mean perturbations across nodes.
    #[serde(default)]
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub kin_cov: [[f64; 4]; 4],
    pub ext_cov: [[f64; 3]; 3],
    pub policy: PriorInitPolicy,
    /// Diagonal scales multiplied by uniform(0, 1) draws in unequal modes.
    pub unequal_kin_scale: [f64; 4],
    pub unequal_ext_scale: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralPriorSpec {
    pub kin_cov: [[f64; 4]; 4],
    pub ext_cov: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Scan period `T` in seconds.
    pub scan_period: f64,
    pub scan_count: usize,
    pub kin_proc_cov: [[f64; 4]; 4],
    pub ext_proc_cov: [[f64; 3]; 3],
    pub shape: Shape,
    /// True semi-lengths `(l₁, l₂)` in meters, `l₁` along the body axis.
    pub semi_lengths: [f64; 2],
    /// Poisson rate `λ` of measurements per detecting node and scan.
    pub expected_measurements: f64,
    pub trajectory: TrajectorySpec,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<[usize; 2]>,
    pub prior: PriorSpec,
    /// Prior of the centralized filter when it differs from the node prior.
    #[serde(default)]
    pub central_prior: Option<CentralPriorSpec>,
    pub consensus: ConsensusConfig,
    pub monte_carlo_runs: usize,
}

fn diag4(d: [f64; 4]) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for (i, v) in d.into_iter().enumerate() {
        m[i][i] = v;
    }
    m
}

fn diag3(d: [f64; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (i, v) in d.into_iter().enumerate() {
        m[i][i] = v;
    }
    m
}

fn single_sensor(name: &str) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        scan_period: 3.0,
        scan_count: 100,
        kin_proc_cov: diag4([50.0, 50.0, 1.0, 1.0]),
        ext_proc_cov: diag3([0.3, 1.0 / 500.0, 1.0 / 220.0]),
        shape: Shape::Rectangle,
        semi_lengths: [2.0, 1.5],
        expected_measurements: 7.0,
        trajectory: TrajectorySpec {
            waypoints: vec![[0.0, 0.0], [225.0, 0.0], [225.0, 240.0]],
            speed: 1.5,
            turn_radius: 20.0,
            sideslip: SideslipProfile::Aligned,
        },
        nodes: vec![NodeSpec {
            position: [0.0, 0.0],
            sensing_range: 1.0e6,
            meas_cov: [[1.0 / 3.0, 0.0], [0.0, 1.0 / 3.0]],
        }],
        links: vec![],
        prior: PriorSpec {
            kin_cov: diag4([2.0, 2.0, 1.0 / 5.0, 1.0 / 5.0]),
            ext_cov: diag3([0.36, 1.0 / 500.0, 1.0 / 50.0]),
            policy: PriorInitPolicy { mode: PriorMode::Equal, rho: 0.0 },
            unequal_kin_scale: [2.0, 2.0, 1.0 / 5.0, 1.0 / 5.0],
            unequal_ext_scale: [0.36, 1.0 / 500.0, 1.0 / 50.0],
        },
        central_prior: None,
        consensus: ConsensusConfig::new(0.5, 1, PriorCase::Converged),
        monte_carlo_runs: 50,
    }
}

/// Single sensor, rectangle moving along its body axis through a turn.
pub fn build_s1() -> ScenarioConfig {
    single_sensor("s1")
}

/// As [`build_s1`] but the body orientation stays at π/4 while the
/// velocity turns.
pub fn build_s2() -> ScenarioConfig {
    let mut cfg = single_sensor("s2");
    cfg.trajectory.sideslip = SideslipProfile::FixedOrientation { orientation: FRAC_PI_4 };
    cfg.prior.ext_cov = diag3([0.01, 1.0 / 500.0, 1.0 / 100.0]);
    cfg.prior.unequal_ext_scale = [0.01, 1.0 / 500.0, 1.0 / 100.0];
    cfg.ext_proc_cov = diag3([0.5, 1.0 / 400.0, 1.0 / 300.0]);
    cfg
}

/// Nine sensors on a 3×3 grid over `[0, 500]²`, linked in a ring, tracking
/// an ellipse along an S-shaped path.
pub fn build_s3() -> ScenarioConfig {
    let coords = [125.0, 250.0, 375.0];
    // Boustrophedon order so that ring neighbours are grid neighbours.
    let order = [(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (0, 1), (0, 2), (1, 2), (2, 2)];
    let nodes = order
        .iter()
        .map(|&(cx, cy)| NodeSpec {
            position: [coords[cx], coords[cy]],
            sensing_range: 200.0,
            meas_cov: [[40.0, 0.0], [0.0, 20.0]],
        })
        .collect();
    let links = (0..9).map(|s| [s, (s + 1) % 9]).collect();
    ScenarioConfig {
        name: "s3".into(),
        scan_period: 5.0,
        scan_count: 45,
        kin_proc_cov: diag4([100.0, 100.0, 1.0, 1.0]),
        ext_proc_cov: diag3([2e-3, 1e-3, 1e-4]),
        shape: Shape::Ellipse,
        semi_lengths: [35.0, 30.0],
        expected_measurements: 10.0,
        trajectory: TrajectorySpec {
            waypoints: vec![[25.0, 300.0], [250.0, 300.0], [250.0, 75.0], [475.0, 75.0]],
            speed: 100.0 / 36.0,
            turn_radius: 50.0,
            sideslip: SideslipProfile::Aligned,
        },
        nodes,
        links,
        prior: PriorSpec {
            kin_cov: diag4([50.0, 50.0, 10.0, 10.0]),
            ext_cov: diag3([0.01, 0.1, 0.1]),
            policy: PriorInitPolicy { mode: PriorMode::Equal, rho: 0.0 },
            unequal_kin_scale: [100.0, 100.0, 10.0, 10.0],
            unequal_ext_scale: [1.0, 7.0, 7.0],
        },
        central_prior: Some(CentralPriorSpec {
            kin_cov: diag4([2.0, 2.0, 0.5, 0.5]),
            ext_cov: diag3([2e-3, 1e-3, 1e-4]),
        }),
        consensus: ConsensusConfig::new(0.65 / 2.0, 10, PriorCase::Converged),
        monte_carlo_runs: 50,
    }
}

pub fn build_named(name: &str) -> Result<ScenarioConfig> {
    match name {
        "s1" => Ok(build_s1()),
        "s2" => Ok(build_s2()),
        "s3" => Ok(build_s3()),
        other => Err(Error::Config(format!("unknown scenario '{other}' (known: {})", SCENARIO_NAMES.join(", ")))),
    }
}

fn check_cov<const N: usize>(rows: &[[f64; N]; N], what: &str, allow_singular: bool) -> Result<()> {
    let m = from_rows(rows);
    if !m.iter().all(|v| v.is_finite()) || (m - m.transpose()).abs().max() > 0.0 {
        return Err(Error::Config(format!("{what} must be finite and symmetric")));
    }
    let ok = if allow_singular {
        crate::linalg::min_eigenvalue(&m) >= -1e-12 * m.abs().max().max(1.0)
    } else {
        m.cholesky().is_some()
    };
    if !ok {
        let kind = if allow_singular { "positive semidefinite" } else { "positive definite" };
        return Err(Error::Config(format!("{what} must be {kind}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config serializes")
    }

    /// Full consistency check; also builds the network and the truth.
    pub fn validate(&self) -> Result<()> {
        if !(self.scan_period > 0.0) {
            return Err(Error::Config("scan_period must be positive".into()));
        }
        if self.scan_count == 0 {
            return Err(Error::Config("scan_count must be at least 1".into()));
        }
        if self.monte_carlo_runs == 0 {
            return Err(Error::Config("monte_carlo_runs must be at least 1".into()));
        }
        if !(self.expected_measurements > 0.0) {
            return Err(Error::Config("expected_measurements must be positive".into()));
        }
        if !self.semi_lengths.iter().all(|l| *l > 0.0 && l.is_finite()) {
            return Err(Error::Config("semi_lengths must be positive".into()));
        }
        check_cov(&self.kin_proc_cov, "kin_proc_cov", true)?;
        check_cov(&self.ext_proc_cov, "ext_proc_cov", true)?;
        check_cov(&self.prior.kin_cov, "prior.kin_cov", false)?;
        check_cov(&self.prior.ext_cov, "prior.ext_cov", false)?;
        if let Some(c) = &self.central_prior {
            check_cov(&c.kin_cov, "central_prior.kin_cov", false)?;
            check_cov(&c.ext_cov, "central_prior.ext_cov", false)?;
        }
        let rho = self.prior.policy.rho;
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Config(format!("prior.policy.rho must lie in [0, 1), got {rho}")));
        }
        let scales = self.prior.unequal_kin_scale.iter().chain(self.prior.unequal_ext_scale.iter());
        if !scales.copied().all(|s| s > 0.0 && s.is_finite()) {
            return Err(Error::Config("unequal prior scales must be positive".into()));
        }
        let network = self.network()?;
        self.consensus.validate(&network.topology)?;
        build_truth(self)?;
        Ok(())
    }

    pub fn dynamics(&self) -> DynamicsModel {
        DynamicsModel::nearly_constant_velocity(self.scan_period, from_rows(&self.kin_proc_cov), from_rows(&self.ext_proc_cov))
    }

    pub fn network(&self) -> Result<SensorNetwork> {
        if self.nodes.is_empty() {
            return Err(Error::Config("scenario has no sensor nodes".into()));
        }
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                check_cov(&n.meas_cov, &format!("nodes[{id}].meas_cov"), false)?;
                SensorNode::new(id, Vec2::from(n.position), n.sensing_range, from_rows(&n.meas_cov))
            })
            .collect::<Result<Vec<_>>>()?;
        let topology = Topology::from_links(nodes.len(), &self.links)?;
        SensorNetwork::new(nodes, topology)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        self.network()?.noise_model(self.shape.mult_cov())
    }

    /// Switches the prior policy and the matching consensus prior case.
    pub fn with_prior_mode(mut self, mode: PriorMode, rho: f64) -> Self {
        self.prior.policy = PriorInitPolicy { mode, rho };
        self.consensus.prior_case = match mode {
            PriorMode::UncorrelatedUnequal => PriorCase::Uncorrelated,
            PriorMode::Equal | PriorMode::CorrelatedUnequal => PriorCase::Converged,
        };
        self
    }
}

enum Piece {
    Line { start: Vec2, dir: Vec2, len: f64 },
    Arc { center: Vec2, radius: f64, start_angle: f64, sweep: f64 },
}

impl Piece {
    fn len(&self) -> f64 {
        match self {
            Piece::Line { len, .. } => *len,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn at(&self, s: f64) -> Vec2 {
        match self {
            Piece::Line { start, dir, .. } => start + dir * s,
            Piece::Arc { center, radius, start_angle, sweep } => {
                let a = start_angle + sweep.signum() * s / radius;
                center + Vec2::new(a.cos(), a.sin()) * *radius
            }
        }
    }
}

fn path_pieces(spec: &TrajectorySpec, step: f64) -> Result<Vec<Piece>> {
    let pts: Vec<Vec2> = spec.waypoints.iter().map(|w| Vec2::from(*w)).collect();
    if pts.len() < 2 {
        return Err(Error::Config("trajectory needs at least two waypoints".into()));
    }
    if !pts.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(Error::Config("trajectory waypoints must be finite".into()));
    }
    if !(spec.turn_radius >= 0.0) {
        return Err(Error::Config("turn_radius must be nonnegative".into()));
    }
    for (i, w) in pts.windows(2).enumerate() {
        let d = (w[1] - w[0]).norm();
        if d < step {
            return Err(Error::Config(format!(
                "waypoints {i} and {} are {d:.3} m apart, closer than one scan step ({step:.3} m)",
                i + 1
            )));
        }
    }
    // Tangent distance of the fillet at each interior corner.
    let mut cut = vec![0.0; pts.len()];
    let mut arcs = vec![None; pts.len()];
    for i in 1..pts.len() - 1 {
        let a = (pts[i] - pts[i - 1]).normalize();
        let b = (pts[i + 1] - pts[i]).normalize();
        let cross = a.x * b.y - a.y * b.x;
        let turn = cross.atan2(a.dot(&b));
        if turn.abs() < 1e-12 || spec.turn_radius == 0.0 {
            continue;
        }
        if (turn.abs() - PI).abs() < 1e-9 {
            return Err(Error::Config(format!("trajectory reverses direction at waypoint {i}")));
        }
        cut[i] = spec.turn_radius * (turn.abs() / 2.0).tan();
        arcs[i] = Some((a, turn));
    }
    let mut pieces = Vec::new();
    for i in 0..pts.len() - 1 {
        let dir = (pts[i + 1] - pts[i]).normalize();
        let seg = (pts[i + 1] - pts[i]).norm();
        let len = seg - cut[i] - cut[i + 1];
        if len < -1e-9 {
            return Err(Error::Config(format!("turn_radius too large for the leg between waypoints {i} and {}", i + 1)));
        }
        pieces.push(Piece::Line { start: pts[i] + dir * cut[i], dir, len: len.max(0.0) });
        if let Some((a, turn)) = arcs[i + 1] {
            let entry = pts[i + 1] - a * cut[i + 1];
            let left = Vec2::new(-a.y, a.x) * turn.signum();
            let center = entry + left * spec.turn_radius;
            let r = entry - center;
            pieces.push(Piece::Arc { center, radius: spec.turn_radius, start_angle: r.y.atan2(r.x), sweep: turn });
        }
    }
    Ok(pieces)
}

fn point_at(pieces: &[Piece], mut s: f64) -> Vec2 {
    for p in pieces {
        if s <= p.len() {
            return p.at(s);
        }
        s -= p.len();
    }
    let last = pieces.last().expect("path has at least one piece");
    last.at(last.len())
}

pub fn path_length(spec: &TrajectorySpec, step: f64) -> Result<f64> {
    Ok(path_pieces(spec, step)?.iter().map(Piece::len).sum())
}

/// True states at every scan: constant speed along the filleted waypoint
/// path, velocity from forward differences of consecutive positions.
pub fn build_truth(cfg: &ScenarioConfig) -> Result<Vec<GroundTruthStep>> {
    let spec = &cfg.trajectory;
    if !(spec.speed > 0.0) || !spec.speed.is_finite() {
        return Err(Error::Config("trajectory speed must be positive".into()));
    }
    let step = spec.speed * cfg.scan_period;
    let pieces = path_pieces(spec, step)?;
    let total: f64 = pieces.iter().map(Piece::len).sum();
    let needed = step * cfg.scan_count as f64;
    if needed > total + 1e-9 {
        return Err(Error::Config(format!(
            "trajectory is {total:.2} m long but {} scans need {needed:.2} m",
            cfg.scan_count
        )));
    }
    let positions: Vec<Vec2> = (0..=cfg.scan_count)
        .map(|k| point_at(&pieces, step * k as f64))
        .collect();
    (0..cfg.scan_count)
        .map(|k| {
            let velocity = (positions[k + 1] - positions[k]) / cfg.scan_period;
            let heading = velocity.y.atan2(velocity.x);
            let sideslip = match spec.sideslip {
                SideslipProfile::Aligned => 0.0,
                SideslipProfile::FixedOrientation { orientation } => wrap_angle(heading - orientation),
                SideslipProfile::Constant { sideslip } => wrap_angle(sideslip),
            };
            let ext = ExtentState::new(cfg.semi_lengths[0], cfg.semi_lengths[1], sideslip)?;
            Ok(GroundTruthStep::new(KinematicState::new(positions[k], velocity), ext))
        })
        .collect()
}

fn gaussian_vec<const N: usize, R: Rng + ?Sized>(rng: &mut R) -> nalgebra::SVector<f64, N> {
    nalgebra::SVector::<f64, N>::from_fn(|_, _| StandardNormal.sample(rng))
}

fn perturbed<const N: usize>(
    truth: &nalgebra::SVector<f64, N>,
    cov: &nalgebra::SMatrix<f64, N, N>,
    z: &nalgebra::SVector<f64, N>,
) -> Result<InfoEstimate<N>> {
    let l = cov
        .cholesky()
        .ok_or_else(|| Error::Config("prior covariance is not positive definite".into()))?
        .l();
    InfoEstimate::from_covariance(truth + l * z, cov)
}

/// Initial estimates for one Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPriors {
    pub central: CentralFilterState,
    pub nodes: Vec<NodeFilterState>,
}

/// Draws the central and per-node priors around the first true state.
/// Means are the truth plus a Gaussian sample from the prior covariance.
pub fn draw_priors<R: Rng + ?Sized>(cfg: &ScenarioConfig, truth0: &GroundTruthStep, rng: &mut R) -> Result<InitialPriors> {
    let x0 = truth0.kin.to_vector();
    let p0 = truth0.ext.to_vector();
    let n = cfg.nodes.len();
    let base_kin: Mat4 = from_rows(&cfg.prior.kin_cov);
    let base_ext: Mat3 = from_rows(&cfg.prior.ext_cov);
    let (kin_covs, ext_covs): (Vec<Mat4>, Vec<Mat3>) = match cfg.prior.policy.mode {
        PriorMode::Equal => (vec![base_kin; n], vec![base_ext; n]),
        PriorMode::UncorrelatedUnequal | PriorMode::CorrelatedUnequal => (0..n)
            .map(|_| {
                let k = Vec4::from(cfg.prior.unequal_kin_scale).component_mul(&Vec4::from_fn(|_, _| rng.random::<f64>()));
                let e = Vec3::from(cfg.prior.unequal_ext_scale).component_mul(&Vec3::from_fn(|_, _| rng.random::<f64>()));
                (Mat4::from_diagonal(&k.map(|v| v.max(1e-12))), Mat3::from_diagonal(&e.map(|v| v.max(1e-12))))
            })
            .unzip(),
    };
    let rho = match cfg.prior.policy.mode {
        PriorMode::CorrelatedUnequal => cfg.prior.policy.rho,
        _ => 0.0,
    };
    let shared_kin: Vec4 = gaussian_vec(rng);
    let shared_ext: Vec3 = gaussian_vec(rng);
    let mut nodes = Vec::with_capacity(n);
    for id in 0..n {
        let (zk, ze) = match cfg.prior.policy.mode {
            PriorMode::Equal => (shared_kin, shared_ext),
            _ => {
                let ek: Vec4 = gaussian_vec(rng);
                let ee: Vec3 = gaussian_vec(rng);
                (shared_kin * rho.sqrt() + ek * (1.0 - rho).sqrt(), shared_ext * rho.sqrt() + ee * (1.0 - rho).sqrt())
            }
        };
        nodes.push(NodeFilterState {
            id,
            kin: perturbed(&x0, &kin_covs[id], &zk)?,
            ext: perturbed(&p0, &ext_covs[id], &ze)?,
        });
    }
    let central = match &cfg.central_prior {
        None => CentralFilterState::new(perturbed(&x0, &base_kin, &shared_kin)?, perturbed(&p0, &base_ext, &shared_ext)?),
        Some(c) => {
            let zk: Vec4 = gaussian_vec(rng);
            let ze: Vec3 = gaussian_vec(rng);
            CentralFilterState::new(perturbed(&x0, &from_rows(&c.kin_cov), &zk)?, perturbed(&p0, &from_rows(&c.ext_cov), &ze)?)
        }
    };
    Ok(InitialPriors { central, nodes })
}
