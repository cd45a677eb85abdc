//! Centralized weighted-least-squares filter (CWLSF).
//!
//! All nodes report to a fusion center that processes the `i`-th measurement
//! of every node jointly, for `i = 1..n_k`, then runs an information-form
//! time update.

use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::linalg::{is_finite, spd_inverse, spd_solve, symmetrize, Mat3, Mat4, Vec2, Vec3, Vec4};
use crate::model::{wrap_angle, DynamicsModel, InfoEstimate, LinearizedModel, NoiseModel};
use crate::network::ScanMeasurements;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralFilterState {
    pub kin: InfoEstimate<4>,
    pub ext: InfoEstimate<3>,
    /// Number of sequential indices already processed in the current scan.
    pub seq_index: usize,
}

impl CentralFilterState {
    pub fn new(kin: InfoEstimate<4>, ext: InfoEstimate<3>) -> Self {
        Self { kin, ext, seq_index: 0 }
    }

    pub fn linearize(&self, noise: &NoiseModel) -> Result<LinearizedModel> {
        LinearizedModel::new(&self.kin, &self.ext, &noise.mult_cov)
    }
}

/// The measurement with one sequential index from every node; `None` marks
/// a node without a measurement at that index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeMeasurementSlice(Vec<Option<Vec2>>);

impl NodeMeasurementSlice {
    pub fn new(per_node: Vec<Option<Vec2>>) -> Self {
        Self(per_node)
    }

    pub fn absent(nodes: usize) -> Self {
        Self(vec![None; nodes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, node: usize) -> Option<&Vec2> {
        self.0.get(node).and_then(Option::as_ref)
    }

    pub fn detections(&self) -> impl Iterator<Item = (usize, &Vec2)> {
        self.0.iter().enumerate().filter_map(|(s, y)| y.as_ref().map(|y| (s, y)))
    }

    pub fn any_detection(&self) -> bool {
        self.0.iter().any(Option::is_some)
    }
}

/// `x̂' = (Ω + Σ U)⁻¹ (Ω x̂ + Σ u)`, `Ω' = Ω + Σ U`.
pub(crate) fn wls_combine<const N: usize>(
    prior: &InfoEstimate<N>,
    info_sum: &SMatrix<f64, N, N>,
    vec_sum: &SMatrix<f64, N, 1>,
    what: &str,
) -> Result<InfoEstimate<N>> {
    let info = symmetrize(&(prior.info + info_sum));
    let rhs = prior.info * prior.mean + vec_sum;
    let mean = spd_solve(&info, &rhs, what)?;
    Ok(InfoEstimate { mean, info })
}

pub(crate) fn kinematic_sums(
    lin: &LinearizedModel,
    slice: &NodeMeasurementSlice,
    noise: &NoiseModel,
) -> Result<(Mat4, Vec4)> {
    let mut info = Mat4::zeros();
    let mut vec = Vec4::zeros();
    for (s, y) in slice.detections() {
        let (u_info, u_vec) = lin.kinematic_terms(noise.meas_cov(s)?, y)?;
        info += u_info;
        vec += u_vec;
    }
    Ok((info, vec))
}

pub(crate) fn extent_sums(
    lin: &LinearizedModel,
    slice: &NodeMeasurementSlice,
    noise: &NoiseModel,
) -> Result<(Mat3, Vec3)> {
    let mut info = Mat3::zeros();
    let mut vec = Vec3::zeros();
    for (s, y) in slice.detections() {
        let (u_info, u_vec) = lin.extent_terms(noise.meas_cov(s)?, y)?;
        info += u_info;
        vec += u_vec;
    }
    Ok((info, vec))
}

pub(crate) fn wrap_extent(mut ext: InfoEstimate<3>) -> InfoEstimate<3> {
    ext.mean[2] = wrap_angle(ext.mean[2]);
    ext
}

fn check_slice(slice: &NodeMeasurementSlice, noise: &NoiseModel) -> Result<()> {
    if slice.len() != noise.meas_cov_per_node.len() {
        return Err(Error::Validation(format!(
            "measurement slice covers {} nodes, noise model {}",
            slice.len(),
            noise.meas_cov_per_node.len()
        )));
    }
    Ok(())
}

/// Kinematic WLS update with one measurement per detecting node,
/// linearized at the current estimate. The extent is left untouched.
pub fn update_kinematics(
    state: &CentralFilterState,
    slice: &NodeMeasurementSlice,
    noise: &NoiseModel,
) -> Result<CentralFilterState> {
    check_slice(slice, noise)?;
    if !slice.any_detection() {
        return Ok(*state);
    }
    let lin = state.linearize(noise)?;
    let (info, vec) = kinematic_sums(&lin, slice, noise)?;
    let kin = wls_combine(&state.kin, &info, &vec, "kinematic normal matrix")?;
    Ok(CentralFilterState { kin, ..*state })
}

/// Extent WLS update from de-biased pseudo-measurements, linearized at the
/// current estimate. The kinematics are left untouched.
pub fn update_extent(
    state: &CentralFilterState,
    slice: &NodeMeasurementSlice,
    noise: &NoiseModel,
) -> Result<CentralFilterState> {
    check_slice(slice, noise)?;
    if !slice.any_detection() {
        return Ok(*state);
    }
    let lin = state.linearize(noise)?;
    let (info, vec) = extent_sums(&lin, slice, noise)?;
    let ext = wls_combine(&state.ext, &info, &vec, "extent normal matrix")?;
    Ok(CentralFilterState { ext: wrap_extent(ext), ..*state })
}

/// One sequential index: both updates use the linearization at the
/// incoming estimate, so the extent update sees `x̂^{[i−1]}`.
pub fn sequential_step(
    state: &CentralFilterState,
    slice: &NodeMeasurementSlice,
    noise: &NoiseModel,
) -> Result<CentralFilterState> {
    check_slice(slice, noise)?;
    let mut next = *state;
    next.seq_index += 1;
    if !slice.any_detection() {
        return Ok(next);
    }
    let lin = state.linearize(noise)?;
    let (kin_info, kin_vec) = kinematic_sums(&lin, slice, noise)?;
    let (ext_info, ext_vec) = extent_sums(&lin, slice, noise)?;
    next.kin = wls_combine(&state.kin, &kin_info, &kin_vec, "kinematic normal matrix")?;
    next.ext = wrap_extent(wls_combine(&state.ext, &ext_info, &ext_vec, "extent normal matrix")?);
    Ok(next)
}

pub fn sequential_scan(
    state: &CentralFilterState,
    slices: &[NodeMeasurementSlice],
    noise: &NoiseModel,
) -> Result<CentralFilterState> {
    slices.iter().try_fold(*state, |st, slice| sequential_step(&st, slice, noise))
}

/// `x̂' = Φ x̂`, `Ω' = (Φ Ω⁻¹ Φᵀ + C_w)⁻¹`.
pub fn predict_info<const N: usize>(
    est: &InfoEstimate<N>,
    transition: &SMatrix<f64, N, N>,
    proc_cov: &SMatrix<f64, N, N>,
) -> Result<InfoEstimate<N>> {
    let cov = spd_inverse(&est.info, "information matrix before prediction")?;
    let pred_cov = symmetrize(&(transition * cov * transition.transpose() + proc_cov));
    let info = spd_inverse(&pred_cov, "predicted covariance")?;
    let mean = transition * est.mean;
    if !is_finite(&mean) {
        return Err(Error::Conditioning("non-finite predicted mean".into()));
    }
    Ok(InfoEstimate { mean, info })
}

pub fn time_update(state: &CentralFilterState, dynamics: &DynamicsModel) -> Result<CentralFilterState> {
    Ok(CentralFilterState {
        kin: predict_info(&state.kin, &dynamics.kin_transition, &dynamics.kin_proc_cov)?,
        ext: wrap_extent(predict_info(&state.ext, &dynamics.ext_transition, &dynamics.ext_proc_cov)?),
        seq_index: 0,
    })
}

/// Runs the filter over every scan starting from `prior` (the predicted
/// state of the first scan) and returns the posterior of each scan.
pub fn run_cwlsf(
    prior: &CentralFilterState,
    scans: &[ScanMeasurements],
    noise: &NoiseModel,
    dynamics: &DynamicsModel,
) -> Result<Vec<CentralFilterState>> {
    let mut state = CentralFilterState { seq_index: 0, ..*prior };
    let mut out = Vec::with_capacity(scans.len());
    for (k, scan) in scans.iter().enumerate() {
        let posterior = sequential_scan(&state, &scan.slices(), noise)?;
        out.push(posterior);
        if k + 1 < scans.len() {
            state = time_update(&posterior, dynamics)?;
        }
    }
    Ok(out)
}
