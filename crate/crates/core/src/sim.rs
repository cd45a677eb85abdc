//! Simulation plumbing: seed derivation and single Monte Carlo runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filter_central::{run_cwlsf, CentralFilterState};
use crate::filter_distributed::{run_dwlsf, ConsensusConfig, NodeFilterState};
use crate::linalg::{Vec3, Vec4};
use crate::metrics::{acee, gwd, nees, ospa, EllipticExtentSummary, ObjectSummary, OSPA_CUTOFF, OSPA_ORDER};
use crate::model::{ExtentState, KinematicState};
use crate::network::{generate_scan, GroundTruthStep, ScanMeasurements, Shape};
use crate::scenarios::{build_truth, draw_priors, InitialPriors, ScenarioConfig};

const MEASUREMENT_STREAM: u64 = 1;
const PRIOR_STREAM: u64 = 2;

/// Mixes `seed` with a path of indices (run, step, node, ...) into an
/// independent stream seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019))))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything one Monte Carlo run consumes.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub truth: Vec<GroundTruthStep>,
    pub scans: Vec<ScanMeasurements>,
    pub priors: InitialPriors,
}

/// Builds the truth, measurements and priors of run `run` under `seed`.
pub fn simulate_inputs(cfg: &ScenarioConfig, seed: u64, run: u64) -> Result<RunInputs> {
    let truth = build_truth(cfg)?;
    let network = cfg.network()?;
    let meas_seed = derive_seed(seed, &[run, MEASUREMENT_STREAM]);
    let scans = truth
        .iter()
        .enumerate()
        .map(|(k, t)| generate_scan(t, &network, cfg.shape, cfg.expected_measurements, meas_seed, k))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[run, PRIOR_STREAM]));
    let priors = draw_priors(cfg, &truth[0], &mut rng)?;
    Ok(RunInputs { truth, scans, priors })
}

/// GWD and OSPA of one estimate against the truth.
pub fn estimate_errors(kin: &Vec4, ext: &Vec3, truth: &GroundTruthStep, shape: Shape) -> Result<(f64, f64)> {
    let k = KinematicState::from_vector(kin);
    let e = ExtentState::from_vector(ext);
    let est = EllipticExtentSummary::from_state(&k, &e)?;
    let tru = EllipticExtentSummary::from_state(&truth.kin, &truth.ext)?;
    let g = gwd(&est, &tru);
    let o = ospa(&ObjectSummary::from_state(&k, &e), &ObjectSummary::from_truth(truth), shape, OSPA_CUTOFF, OSPA_ORDER)?;
    if !g.is_finite() || !o.is_finite() {
        return Err(Error::Conditioning("non-finite error metric".into()));
    }
    Ok((g, o))
}

/// Per-scan errors of the centralized filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralRunMetrics {
    pub gwd: Vec<f64>,
    pub ospa: Vec<f64>,
    /// Kinematic NEES.
    pub nees: Vec<f64>,
}

pub fn central_metrics(
    posteriors: &[CentralFilterState],
    truth: &[GroundTruthStep],
    shape: Shape,
) -> Result<CentralRunMetrics> {
    let mut out = CentralRunMetrics { gwd: vec![], ospa: vec![], nees: vec![] };
    for (st, t) in posteriors.iter().zip(truth) {
        let (g, o) = estimate_errors(&st.kin.mean, &st.ext.mean, t, shape)?;
        out.gwd.push(g);
        out.ospa.push(o);
        out.nees.push(nees(&st.kin, &t.kin.to_vector()));
    }
    Ok(out)
}

pub fn run_central(cfg: &ScenarioConfig, inputs: &RunInputs) -> Result<Vec<CentralFilterState>> {
    run_cwlsf(&inputs.priors.central, &inputs.scans, &cfg.noise_model()?, &cfg.dynamics())
}

/// Per-scan errors of the distributed filter, averaged over nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedRunMetrics {
    pub gwd: Vec<f64>,
    pub ospa: Vec<f64>,
    pub acee_kin: Vec<f64>,
    pub acee_ext: Vec<f64>,
}

pub fn distributed_metrics(
    posteriors: &[Vec<NodeFilterState>],
    truth: &[GroundTruthStep],
    shape: Shape,
) -> Result<DistributedRunMetrics> {
    let mut out = DistributedRunMetrics { gwd: vec![], ospa: vec![], acee_kin: vec![], acee_ext: vec![] };
    for (nodes, t) in posteriors.iter().zip(truth) {
        let n = nodes.len() as f64;
        let (mut g, mut o) = (0.0, 0.0);
        for nd in nodes {
            let (gs, os) = estimate_errors(&nd.kin.mean, &nd.ext.mean, t, shape)?;
            g += gs / n;
            o += os / n;
        }
        out.gwd.push(g);
        out.ospa.push(o);
        if nodes.len() >= 2 {
            let kins: Vec<Vec4> = nodes.iter().map(|nd| nd.kin.mean).collect();
            let exts: Vec<Vec3> = nodes.iter().map(|nd| nd.ext.mean).collect();
            out.acee_kin.push(acee(&kins)?);
            out.acee_ext.push(acee(&exts)?);
        } else {
            out.acee_kin.push(0.0);
            out.acee_ext.push(0.0);
        }
    }
    Ok(out)
}

/// Runs the distributed filter with `iterations` consensus rounds.
pub fn run_distributed(cfg: &ScenarioConfig, inputs: &RunInputs, iterations: usize) -> Result<Vec<Vec<NodeFilterState>>> {
    let network = cfg.network()?;
    let consensus = ConsensusConfig { iterations, ..cfg.consensus };
    run_dwlsf(&network.topology, &inputs.priors.nodes, &inputs.scans, &consensus, &cfg.noise_model()?, &cfg.dynamics())
}
