//! Distributed weighted-least-squares filter (DWLSF).
//!
//! Every node forms local `(δΩ, δx̂)` pairs from its own prior and its own
//! measurement, the network runs average consensus on them, and each node
//! recovers an estimate from the consensus output. With equal priors and
//! enough iterations every node reproduces the centralized estimate.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_central::{predict_info, wrap_extent, NodeMeasurementSlice};
use crate::linalg::{is_finite, spd_solve, symmetrize, Mat3, Mat4, Vec2, Vec3, Vec4};
use crate::model::{DynamicsModel, InfoEstimate, LinearizedModel, NoiseModel};
use crate::network::{ScanMeasurements, Topology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFilterState {
    pub id: usize,
    pub kin: InfoEstimate<4>,
    pub ext: InfoEstimate<3>,
}

/// Scalar `ω` used to rescale the consensus output into an information
/// matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    /// `ω = |N|`.
    #[default]
    Count,
}

impl WeightPolicy {
    pub fn weight(&self, network_size: usize) -> f64 {
        match self {
            WeightPolicy::Count => network_size as f64,
        }
    }
}

/// How node priors are weighted before consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorCase {
    /// Priors already agree across nodes: weight `Ω / |N|`.
    #[default]
    Converged,
    /// Independent priors: weight `Ω` (unscaled) until the first consensus
    /// round has fused them, `Ω / |N|` afterwards.
    Uncorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    /// `ξ`
    pub rate: f64,
    /// `L`
    pub iterations: usize,
    #[serde(default)]
    pub weight_policy: WeightPolicy,
    #[serde(default)]
    pub prior_case: PriorCase,
}

impl ConsensusConfig {
    pub fn new(rate: f64, iterations: usize, prior_case: PriorCase) -> Self {
        Self { rate, iterations, weight_policy: WeightPolicy::Count, prior_case }
    }

    /// Checks `0 < ξ < 1/Δmax` and `L ≥ 1`.
    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("consensus iterations must be at least 1".into()));
        }
        let dmax = topology.max_degree();
        if !(self.rate > 0.0) || (dmax > 0 && self.rate * dmax as f64 >= 1.0) {
            return Err(Error::Config(format!(
                "consensus rate {} outside (0, 1/{dmax}) for maximum degree {dmax}",
                self.rate
            )));
        }
        Ok(())
    }
}

/// One node's `(δΩ^x, δx̂, δΩ^p, δp̂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusQuantities {
    pub kin_info: Mat4,
    pub kin_vec: Vec4,
    pub ext_info: Mat3,
    pub ext_vec: Vec3,
}

/// Values that average consensus can operate on elementwise.
pub trait ConsensusValue: Clone {
    /// `self += rate · (a − b)`
    fn add_scaled_diff(&mut self, rate: f64, a: &Self, b: &Self);
}

impl ConsensusValue for f64 {
    fn add_scaled_diff(&mut self, rate: f64, a: &Self, b: &Self) {
        *self += rate * (a - b);
    }
}

impl<const R: usize, const C: usize> ConsensusValue for SMatrix<f64, R, C> {
    fn add_scaled_diff(&mut self, rate: f64, a: &Self, b: &Self) {
        for ((s, x), y) in self.iter_mut().zip(a.iter()).zip(b.iter()) {
            *s += rate * (x - y);
        }
    }
}

impl ConsensusValue for ConsensusQuantities {
    fn add_scaled_diff(&mut self, rate: f64, a: &Self, b: &Self) {
        self.kin_info.add_scaled_diff(rate, &a.kin_info, &b.kin_info);
        self.kin_vec.add_scaled_diff(rate, &a.kin_vec, &b.kin_vec);
        self.ext_info.add_scaled_diff(rate, &a.ext_info, &b.ext_info);
        self.ext_vec.add_scaled_diff(rate, &a.ext_vec, &b.ext_vec);
    }
}

/// `F = Ω/|N|` for converged priors, `F = Ω` for uncorrelated ones.
pub fn prior_weight<const N: usize>(
    info: &SMatrix<f64, N, N>,
    case: PriorCase,
    network_size: usize,
) -> SMatrix<f64, N, N> {
    match case {
        PriorCase::Converged => info / network_size.max(1) as f64,
        PriorCase::Uncorrelated => *info,
    }
}

/// Local pair `δΩ = F + U`, `δx̂ = F x̂ + u`; a node without a measurement
/// has `U = 0`, `u = 0`.
pub fn local_consensus_quantities(
    state: &NodeFilterState,
    measurement: Option<&Vec2>,
    noise: &NoiseModel,
    case: PriorCase,
    network_size: usize,
) -> Result<ConsensusQuantities> {
    let f_kin = prior_weight(&state.kin.info, case, network_size);
    let f_ext = prior_weight(&state.ext.info, case, network_size);
    let mut q = ConsensusQuantities {
        kin_info: f_kin,
        kin_vec: f_kin * state.kin.mean,
        ext_info: f_ext,
        ext_vec: f_ext * state.ext.mean,
    };
    if let Some(y) = measurement {
        let lin = LinearizedModel::new(&state.kin, &state.ext, &noise.mult_cov)?;
        let meas_cov = noise.meas_cov(state.id)?;
        let (u_kin, v_kin) = lin.kinematic_terms(meas_cov, y)?;
        let (u_ext, v_ext) = lin.extent_terms(meas_cov, y)?;
        q.kin_info += u_kin;
        q.kin_vec += v_kin;
        q.ext_info += u_ext;
        q.ext_vec += v_ext;
    }
    Ok(q)
}

fn check_rate(topology: &Topology, rate: f64) -> Result<()> {
    let dmax = topology.max_degree() as f64;
    if !(rate > 0.0) || rate * dmax > 1.0 {
        return Err(Error::Config(format!("consensus rate {rate} outside (0, 1/Δmax] with Δmax = {dmax}")));
    }
    Ok(())
}

/// One synchronous round `a_s ← a_s + ξ Σ_{j ∈ N_s} (a_j − a_s)`.
pub fn consensus_step<T: ConsensusValue>(values: &[T], topology: &Topology, rate: f64) -> Vec<T> {
    values
        .iter()
        .enumerate()
        .map(|(s, own)| {
            let mut next = own.clone();
            for &j in topology.neighbors(s) {
                next.add_scaled_diff(rate, &values[j], own);
            }
            next
        })
        .collect()
}

/// `iterations` rounds of average consensus. The rate may reach `1/Δmax`
/// here; filters require it strictly below.
pub fn average_consensus<T: ConsensusValue>(
    values: &[T],
    topology: &Topology,
    rate: f64,
    iterations: usize,
) -> Result<Vec<T>> {
    if values.len() != topology.len() {
        return Err(Error::Config(format!("{} values for a {}-node topology", values.len(), topology.len())));
    }
    check_rate(topology, rate)?;
    let mut current = values.to_vec();
    for _ in 0..iterations {
        current = consensus_step(&current, topology, rate);
    }
    Ok(current)
}

/// `x̂ = δΩ(L)⁻¹ δx̂(L)` and `Ω = ω δΩ(L)` for each node.
pub fn recover_estimates(
    consensus: &[ConsensusQuantities],
    policy: WeightPolicy,
    network_size: usize,
) -> Result<Vec<NodeFilterState>> {
    let omega = policy.weight(network_size);
    consensus
        .iter()
        .enumerate()
        .map(|(id, q)| {
            let kin_info = symmetrize(&q.kin_info);
            let ext_info = symmetrize(&q.ext_info);
            let kin_mean = spd_solve(&kin_info, &q.kin_vec, &format!("node {id} kinematic consensus matrix"))?;
            let ext_mean = spd_solve(&ext_info, &q.ext_vec, &format!("node {id} extent consensus matrix"))?;
            if !is_finite(&kin_mean) || !is_finite(&ext_mean) {
                return Err(Error::Conditioning(format!("node {id}: non-finite recovered estimate")));
            }
            Ok(NodeFilterState {
                id,
                kin: InfoEstimate { mean: kin_mean, info: kin_info * omega },
                ext: wrap_extent(InfoEstimate { mean: ext_mean, info: ext_info * omega }),
            })
        })
        .collect()
}

/// Quantities, consensus and recovery for one sequential index.
pub fn distributed_step(
    states: &[NodeFilterState],
    slice: &NodeMeasurementSlice,
    topology: &Topology,
    noise: &NoiseModel,
    config: &ConsensusConfig,
    case: PriorCase,
) -> Result<Vec<NodeFilterState>> {
    let n = states.len();
    if slice.len() != n || topology.len() != n {
        return Err(Error::Validation(format!(
            "{n} node states, {} measurements, {} topology nodes",
            slice.len(),
            topology.len()
        )));
    }
    let local = states
        .iter()
        .map(|st| local_consensus_quantities(st, slice.get(st.id), noise, case, n))
        .collect::<Result<Vec<_>>>()?;
    let agreed = average_consensus(&local, topology, config.rate, config.iterations)?;
    recover_estimates(&agreed, config.weight_policy, n)
}

pub fn time_update_node(state: &NodeFilterState, dynamics: &DynamicsModel) -> Result<NodeFilterState> {
    Ok(NodeFilterState {
        id: state.id,
        kin: predict_info(&state.kin, &dynamics.kin_transition, &dynamics.kin_proc_cov)?,
        ext: wrap_extent(predict_info(&state.ext, &dynamics.ext_transition, &dynamics.ext_proc_cov)?),
    })
}

/// Runs the filter on every node over all scans from per-node priors and
/// returns each scan's per-node posterior.
pub fn run_dwlsf(
    topology: &Topology,
    priors: &[NodeFilterState],
    scans: &[ScanMeasurements],
    config: &ConsensusConfig,
    noise: &NoiseModel,
    dynamics: &DynamicsModel,
) -> Result<Vec<Vec<NodeFilterState>>> {
    config.validate(topology)?;
    if priors.iter().enumerate().any(|(s, p)| p.id != s) {
        return Err(Error::Validation("node priors must be ordered by node id".into()));
    }
    let mut states = priors.to_vec();
    let mut fused = config.prior_case == PriorCase::Converged;
    let mut out = Vec::with_capacity(scans.len());
    for (k, scan) in scans.iter().enumerate() {
        for slice in scan.slices() {
            let case = if fused { PriorCase::Converged } else { PriorCase::Uncorrelated };
            states = distributed_step(&states, &slice, topology, noise, config, case)?;
            fused = true;
        }
        out.push(states.clone());
        if k + 1 < scans.len() {
            states = states.iter().map(|st| time_update_node(st, dynamics)).collect::<Result<_>>()?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_central::{sequential_step, CentralFilterState};
    use crate::linalg::Mat2;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node_state(id: usize) -> NodeFilterState {
        NodeFilterState {
            id,
            kin: InfoEstimate::from_covariance(
                Vec4::new(100.0, 300.0, 2.5, 0.5),
                &Mat4::from_diagonal(&Vec4::new(50.0, 50.0, 10.0, 10.0)),
            )
            .unwrap(),
            ext: InfoEstimate::from_covariance(
                Vec3::new(34.0, 31.0, 0.05),
                &Mat3::from_diagonal(&Vec3::new(0.01, 0.1, 0.1)),
            )
            .unwrap(),
        }
    }

    fn noise(n: usize) -> NoiseModel {
        NoiseModel::new(Mat2::identity() / 4.0, vec![Mat2::new(40.0, 0.0, 0.0, 20.0); n]).unwrap()
    }

    #[test]
    fn prior_weight_cases() {
        let eye = Mat3::identity();
        assert_eq!(prior_weight(&eye, PriorCase::Converged, 4), eye * 0.25);
        let m = Mat3::new(2.0, 0.1, 0.0, 0.1, 3.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(prior_weight(&m, PriorCase::Uncorrelated, 9), m);
        let summed: Mat3 = (0..7).map(|_| prior_weight(&m, PriorCase::Converged, 7)).sum();
        assert_relative_eq!(summed, m, max_relative = 1e-14);
    }

    #[test]
    fn naive_node_quantities_are_the_weighted_prior() {
        let st = node_state(0);
        let q = local_consensus_quantities(&st, None, &noise(3), PriorCase::Converged, 3).unwrap();
        assert_eq!(q.kin_info, st.kin.info / 3.0);
        assert_eq!(q.kin_vec, (st.kin.info / 3.0) * st.kin.mean);
        assert_eq!(q.ext_info, st.ext.info / 3.0);
    }

    #[test]
    fn summed_quantities_equal_central_normal_equations() {
        let n = 3;
        let states: Vec<_> = (0..n).map(node_state).collect();
        let slice = NodeMeasurementSlice::new(vec![Some(Vec2::new(120.0, 310.0)), None, Some(Vec2::new(90.0, 280.0))]);
        let nm = noise(n);
        let sum = states
            .iter()
            .map(|st| local_consensus_quantities(st, slice.get(st.id), &nm, PriorCase::Converged, n).unwrap())
            .fold(None::<ConsensusQuantities>, |acc, q| {
                Some(match acc {
                    None => q,
                    Some(mut a) => {
                        a.kin_info += q.kin_info;
                        a.kin_vec += q.kin_vec;
                        a.ext_info += q.ext_info;
                        a.ext_vec += q.ext_vec;
                        a
                    }
                })
            })
            .unwrap();
        let central = sequential_step(&CentralFilterState::new(states[0].kin, states[0].ext), &slice, &nm).unwrap();
        assert_relative_eq!(sum.kin_info, central.kin.info, max_relative = 1e-12);
        assert_relative_eq!(sum.ext_info, central.ext.info, max_relative = 1e-12);
        let kin_mean = sum.kin_info.try_inverse().unwrap() * sum.kin_vec;
        assert_relative_eq!(kin_mean, central.kin.mean, max_relative = 1e-10);
    }

    #[test]
    fn two_node_consensus_reaches_mean_in_one_step() {
        let topo = Topology::complete(2).unwrap();
        let out = average_consensus(&[0.0, 2.0], &topo, 0.5, 1).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn identical_values_are_a_fixed_point() {
        let topo = Topology::ring(5).unwrap();
        let v = vec![Mat2::new(1.0, 2.0, 2.0, 5.0); 5];
        assert_eq!(average_consensus(&v, &topo, 0.3, 37).unwrap(), v);
    }

    #[test]
    fn ring_consensus_reaches_mean_and_conserves_sum() {
        let topo = Topology::ring(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<Vec3> = (0..6).map(|_| Vec3::from_fn(|_, _| rng.random_range(-10.0..10.0))).collect();
        let mean = vals.iter().sum::<Vec3>() / 6.0;
        let mut cur = vals.clone();
        for _ in 0..200 {
            cur = consensus_step(&cur, &topo, 0.325);
            let sum: Vec3 = cur.iter().sum();
            assert!((sum - mean * 6.0).norm() <= 1e-12 * (mean * 6.0).norm().max(1.0) * 10.0);
        }
        for v in &cur {
            assert!((v - mean).norm() < 1e-6);
        }
    }

    #[test]
    fn rate_validation() {
        let topo = Topology::ring(9).unwrap();
        assert!(ConsensusConfig::new(0.325, 10, PriorCase::Converged).validate(&topo).is_ok());
        assert!(ConsensusConfig::new(0.5, 10, PriorCase::Converged).validate(&topo).is_err());
        assert!(ConsensusConfig::new(0.3, 0, PriorCase::Converged).validate(&topo).is_err());
        assert!(ConsensusConfig::new(-0.1, 3, PriorCase::Converged).validate(&topo).is_err());
        assert!(average_consensus(&[1.0; 9], &topo, 0.6, 1).is_err());
    }

    #[test]
    fn recovery_mean_is_scale_invariant() {
        let st = node_state(0);
        let q = local_consensus_quantities(&st, Some(&Vec2::new(101.0, 295.0)), &noise(1), PriorCase::Converged, 1)
            .unwrap();
        let scaled = ConsensusQuantities {
            kin_info: q.kin_info * 3.7,
            kin_vec: q.kin_vec * 3.7,
            ext_info: q.ext_info * 3.7,
            ext_vec: q.ext_vec * 3.7,
        };
        let a = recover_estimates(&[q], WeightPolicy::Count, 1).unwrap();
        let b = recover_estimates(&[scaled], WeightPolicy::Count, 1).unwrap();
        assert_relative_eq!(a[0].kin.mean, b[0].kin.mean, max_relative = 1e-12);
        assert_relative_eq!(a[0].ext.mean, b[0].ext.mean, max_relative = 1e-12);
    }
}
