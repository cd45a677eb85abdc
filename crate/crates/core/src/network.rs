//! Sensor network: node placement, fields of view, communication topology
//! and synthetic measurement generation.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_central::NodeMeasurementSlice;
use crate::linalg::{Mat2, Vec2};
use crate::model::{coefficient_matrix, ExtentState, KinematicState, NoiseModel};
use crate::sim::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorNode {
    pub id: usize,
    pub position: Vec2,
    /// Radius of the (circular, full-azimuth) field of view in meters.
    pub sensing_range: f64,
    pub meas_cov: Mat2,
}

impl SensorNode {
    pub fn new(id: usize, position: Vec2, sensing_range: f64, meas_cov: Mat2) -> Result<Self> {
        if !(sensing_range > 0.0) {
            return Err(Error::Config(format!("node {id}: sensing range must be positive, got {sensing_range}")));
        }
        if meas_cov.cholesky().is_none() || (meas_cov - meas_cov.transpose()).abs().max() > 1e-12 {
            return Err(Error::Config(format!("node {id}: measurement covariance must be SPD")));
        }
        Ok(Self { id, position, sensing_range, meas_cov })
    }
}

/// Undirected, connected communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::Config("topology has no nodes".into()));
        }
        for (s, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("adjacency row {s} has {} entries, expected {n}", row.len())));
            }
            if row[s] {
                return Err(Error::Config(format!("self-loop at node {s}")));
            }
            for (j, &linked) in row.iter().enumerate() {
                if linked != adjacency[j][s] {
                    return Err(Error::Config(format!("adjacency not symmetric between {s} and {j}")));
                }
            }
        }
        let neighbors = adjacency
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, &l)| l).map(|(j, _)| j).collect())
            .collect();
        let topo = Self { adjacency, neighbors };
        if !topo.is_connected() {
            return Err(Error::Config("topology is disconnected; consensus cannot reach the global mean".into()));
        }
        Ok(topo)
    }

    pub fn from_links(n: usize, links: &[[usize; 2]]) -> Result<Self> {
        let mut adjacency = vec![vec![false; n]; n];
        for &[a, b] in links {
            if a >= n || b >= n {
                return Err(Error::Config(format!("link ({a}, {b}) refers to a node outside 0..{n}")));
            }
            if a == b {
                return Err(Error::Config(format!("self-loop at node {a}")));
            }
            adjacency[a][b] = true;
            adjacency[b][a] = true;
        }
        Self::from_adjacency(adjacency)
    }

    /// Cycle `0 - 1 - … - (n−1) - 0`.
    pub fn ring(n: usize) -> Result<Self> {
        let links: Vec<[usize; 2]> = match n {
            0 => vec![],
            1 => vec![],
            2 => vec![[0, 1]],
            _ => (0..n).map(|s| [s, (s + 1) % n]).collect(),
        };
        Self::from_links(n, &links)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let adjacency = (0..n).map(|s| (0..n).map(|j| j != s).collect()).collect();
        Self::from_adjacency(adjacency)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn linked(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    /// Δmax, the largest node degree.
    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Undirected edge list with `a < b`.
    pub fn links(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for (a, nb) in self.neighbors.iter().enumerate() {
            out.extend(nb.iter().filter(|&&b| b > a).map(|&b| [a, b]));
        }
        out
    }

    fn hops_from(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            let d = dist[s].unwrap_or(0);
            for &j in &self.neighbors[s] {
                if dist[j].is_none() {
                    dist[j] = Some(d + 1);
                    queue.push_back(j);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.hops_from(0).iter().all(Option::is_some)
    }

    /// Longest shortest-path length in hops.
    pub fn diameter(&self) -> usize {
        (0..self.len())
            .flat_map(|s| self.hops_from(s))
            .map(|d| d.unwrap_or(usize::MAX))
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    pub nodes: Vec<SensorNode>,
    pub topology: Topology,
}

impl SensorNetwork {
    pub fn new(nodes: Vec<SensorNode>, topology: Topology) -> Result<Self> {
        if nodes.len() != topology.len() {
            return Err(Error::Config(format!(
                "{} nodes but topology over {} nodes",
                nodes.len(),
                topology.len()
            )));
        }
        if let Some((s, n)) = nodes.iter().enumerate().find(|(s, n)| n.id != *s) {
            return Err(Error::Config(format!("node at index {s} has id {}", n.id)));
        }
        Ok(Self { nodes, topology })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn noise_model(&self, mult_cov: Mat2) -> Result<NoiseModel> {
        NoiseModel::new(mult_cov, self.nodes.iter().map(|n| n.meas_cov).collect())
    }
}

/// Object state at one scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthStep {
    pub kin: KinematicState,
    pub ext: ExtentState,
    /// Body orientation `α = atan2(v_y, v_x) − β`.
    pub orientation: f64,
}

impl GroundTruthStep {
    pub fn new(kin: KinematicState, ext: ExtentState) -> Self {
        let orientation = ext.orientation(&kin.velocity);
        Self { kin, ext, orientation }
    }
}

/// Spatial distribution of scattering sources over the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `h` uniform on `[−1, 1]²`, covariance `I/3`.
    Rectangle,
    /// `h` uniform on the unit disk, covariance `I/4`.
    Ellipse,
}

impl Shape {
    /// Covariance of the multiplicative noise `h`.
    pub fn mult_cov(&self) -> Mat2 {
        match self {
            Shape::Rectangle => Mat2::identity() / 3.0,
            Shape::Ellipse => Mat2::identity() / 4.0,
        }
    }

    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        match self {
            Shape::Rectangle => Vec2::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)),
            Shape::Ellipse => {
                let radius = rng.random::<f64>().sqrt();
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                Vec2::new(radius * angle.cos(), radius * angle.sin())
            }
        }
    }
}

/// Closed-ball field of view test.
pub fn in_fov(node: &SensorNode, position: &Vec2) -> bool {
    (position - node.position).norm() <= node.sensing_range
}

/// A noise-free scattering source `H x + S h`.
pub fn scatter_source<R: Rng + ?Sized>(truth: &GroundTruthStep, shape: Shape, rng: &mut R) -> Result<Vec2> {
    let s = coefficient_matrix(&truth.kin.velocity, &truth.ext)?;
    Ok(truth.kin.position + s * shape.sample_unit(rng))
}

/// Measurements of `truth` collected by `node` in one scan; empty when the
/// object centroid is outside the node's field of view.
pub fn generate_measurements<R: Rng + ?Sized>(
    truth: &GroundTruthStep,
    node: &SensorNode,
    shape: Shape,
    expected_count: f64,
    rng: &mut R,
) -> Result<Vec<Vec2>> {
    if !(expected_count > 0.0) {
        return Err(Error::Validation(format!("expected measurement count must be positive, got {expected_count}")));
    }
    if !in_fov(node, &truth.kin.position) {
        return Ok(Vec::new());
    }
    let poisson = Poisson::new(expected_count).map_err(|e| Error::Validation(e.to_string()))?;
    let count = (poisson.sample(rng) as usize).max(1);
    let noise_chol = node
        .meas_cov
        .cholesky()
        .ok_or_else(|| Error::Validation(format!("node {}: measurement covariance not SPD", node.id)))?
        .l();
    (0..count)
        .map(|_| {
            let source = scatter_source(truth, shape, rng)?;
            let z = Vec2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
            Ok(source + noise_chol * z)
        })
        .collect()
}

/// Ids of the nodes whose field of view contains the object centroid.
pub fn detecting_nodes(truth: &GroundTruthStep, network: &SensorNetwork) -> BTreeSet<usize> {
    network
        .nodes
        .iter()
        .filter(|n| in_fov(n, &truth.kin.position))
        .map(|n| n.id)
        .collect()
}

/// Nodes that neither observe the object nor have an observing neighbor.
pub fn naive_nodes(truth: &GroundTruthStep, network: &SensorNetwork) -> BTreeSet<usize> {
    let detecting = detecting_nodes(truth, network);
    (0..network.len())
        .filter(|&s| {
            !detecting.contains(&s) && network.topology.neighbors(s).iter().all(|j| !detecting.contains(j))
        })
        .collect()
}

/// All measurements of one scan, per node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanMeasurements {
    pub per_node: Vec<Vec<Vec2>>,
}

impl ScanMeasurements {
    pub fn empty(nodes: usize) -> Self {
        Self { per_node: vec![Vec::new(); nodes] }
    }

    /// Number of sequential indices, i.e. the largest per-node count.
    pub fn sequential_len(&self) -> usize {
        self.per_node.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Measurements with sequential index `i` (0-based); nodes with fewer
    /// than `i + 1` measurements are absent.
    pub fn slice(&self, i: usize) -> NodeMeasurementSlice {
        NodeMeasurementSlice::new(self.per_node.iter().map(|m| m.get(i).copied()).collect())
    }

    pub fn slices(&self) -> Vec<NodeMeasurementSlice> {
        (0..self.sequential_len()).map(|i| self.slice(i)).collect()
    }
}

/// Generates one scan for every node, each node drawing from its own stream
/// seeded by `(seed, step, node)`.
pub fn generate_scan(
    truth: &GroundTruthStep,
    network: &SensorNetwork,
    shape: Shape,
    expected_count: f64,
    seed: u64,
    step: usize,
) -> Result<ScanMeasurements> {
    let per_node = network
        .nodes
        .iter()
        .map(|node| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[step as u64, node.id as u64]));
            generate_measurements(truth, node, shape, expected_count, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanMeasurements { per_node })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetrize;

    fn node(id: usize, x: f64, y: f64, range: f64) -> SensorNode {
        SensorNode::new(id, Vec2::new(x, y), range, Mat2::identity()).unwrap()
    }

    fn truth_at(x: f64, y: f64) -> GroundTruthStep {
        GroundTruthStep::new(
            KinematicState::new(Vec2::new(x, y), Vec2::new(2.0, 1.0)),
            ExtentState::new(35.0, 30.0, 0.2).unwrap(),
        )
    }

    #[test]
    fn fov_is_a_closed_ball() {
        let n = node(0, 100.0, 100.0, 200.0);
        assert!(in_fov(&n, &Vec2::new(250.0, 100.0)));
        assert!(!in_fov(&n, &Vec2::new(400.0, 100.0)));
        assert!(in_fov(&n, &Vec2::new(300.0, 100.0)));
    }

    #[test]
    fn out_of_fov_yields_no_measurements() {
        let n = node(0, 0.0, 0.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = generate_measurements(&truth_at(50.0, 0.0), &n, Shape::Ellipse, 10.0, &mut rng).unwrap();
        assert!(m.is_empty());
        let m = generate_measurements(&truth_at(5.0, 0.0), &n, Shape::Ellipse, 10.0, &mut rng).unwrap();
        assert!(!m.is_empty());
    }

    #[test]
    fn rectangle_multiplicative_noise_has_third_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let mut acc = Mat2::zeros();
        let mut mean = Vec2::zeros();
        for _ in 0..n {
            let h = Shape::Rectangle.sample_unit(&mut rng);
            mean += h;
            acc += h * h.transpose();
        }
        mean /= n as f64;
        let cov = acc / n as f64 - mean * mean.transpose();
        let want = Shape::Rectangle.mult_cov();
        assert!((cov - want).norm() / want.norm() < 0.01, "{cov}");
    }

    #[test]
    fn ellipse_sources_lie_inside_true_ellipse() {
        let truth = truth_at(10.0, -4.0);
        let s = coefficient_matrix(&truth.kin.velocity, &truth.ext).unwrap();
        let shape_inv = (s * s.transpose()).try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let z = scatter_source(&truth, Shape::Ellipse, &mut rng).unwrap();
            let d = z - truth.kin.position;
            assert!((d.transpose() * shape_inv * d)[0] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn generated_measurement_moments() {
        let truth = truth_at(0.0, 0.0);
        let mut n0 = node(0, 0.0, 0.0, 1e4);
        n0.meas_cov = Mat2::new(40.0, 0.0, 0.0, 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut all = Vec::new();
        while all.len() < 100_000 {
            all.extend(generate_measurements(&truth, &n0, Shape::Ellipse, 10.0, &mut rng).unwrap());
        }
        let n = all.len() as f64;
        let mean = all.iter().fold(Vec2::zeros(), |a, y| a + y) / n;
        let cov = all.iter().fold(Mat2::zeros(), |a, y| a + (y - mean) * (y - mean).transpose()) / n;
        let s = coefficient_matrix(&truth.kin.velocity, &truth.ext).unwrap();
        let want = symmetrize(&(s * Shape::Ellipse.mult_cov() * s.transpose() + n0.meas_cov));
        assert!((cov - want).norm() / want.norm() < 0.03, "{cov} vs {want}");
        let sd = (want.diagonal() / n).map(f64::sqrt);
        assert!((mean - truth.kin.position).abs().iter().zip(sd.iter()).all(|(e, s)| *e < 5.0 * s));
    }

    #[test]
    fn scan_generation_is_reproducible() {
        let nodes = vec![node(0, 0.0, 0.0, 100.0), node(1, 50.0, 0.0, 100.0)];
        let net = SensorNetwork::new(nodes, Topology::ring(2).unwrap()).unwrap();
        let t = truth_at(20.0, 0.0);
        let a = generate_scan(&t, &net, Shape::Ellipse, 10.0, 77, 3).unwrap();
        let b = generate_scan(&t, &net, Shape::Ellipse, 10.0, 77, 3).unwrap();
        let c = generate_scan(&t, &net, Shape::Ellipse, 10.0, 77, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.per_node.iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn ragged_scans_pad_with_absent_markers() {
        let scan = ScanMeasurements {
            per_node: vec![vec![Vec2::new(1.0, 1.0)], vec![], vec![Vec2::zeros(), Vec2::new(2.0, 0.0)]],
        };
        assert_eq!(scan.sequential_len(), 2);
        let s1 = scan.slice(1);
        assert_eq!(s1.len(), 3);
        assert_eq!(s1.detections().map(|(s, _)| s).collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn detecting_and_naive_nodes() {
        // chain 0 - 1 - 2 - 3, only node 0 sees the object
        let nodes = vec![
            node(0, 0.0, 0.0, 50.0),
            node(1, 200.0, 0.0, 50.0),
            node(2, 400.0, 0.0, 50.0),
            node(3, 600.0, 0.0, 50.0),
        ];
        let topo = Topology::from_links(4, &[[0, 1], [1, 2], [2, 3]]).unwrap();
        let net = SensorNetwork::new(nodes, topo).unwrap();
        let t = truth_at(10.0, 0.0);
        assert_eq!(detecting_nodes(&t, &net), BTreeSet::from([0]));
        assert_eq!(naive_nodes(&t, &net), BTreeSet::from([2, 3]));
        assert!(detecting_nodes(&truth_at(1e4, 0.0), &net).is_empty());
        assert!(detecting_nodes(&truth_at(200.0, 0.0), &net).contains(&1));
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::from_links(4, &[[0, 1], [2, 3]]).is_err());
        assert!(Topology::from_adjacency(vec![vec![false, true], vec![false, false]]).is_err());
        assert!(Topology::from_adjacency(vec![vec![true]]).is_err());
        let ring = Topology::ring(9).unwrap();
        assert_eq!(ring.max_degree(), 2);
        assert_eq!(ring.diameter(), 4);
        assert_eq!(Topology::complete(5).unwrap().diameter(), 1);
        assert_eq!(Topology::ring(1).unwrap().max_degree(), 0);
        assert_eq!(ring.links().len(), 9);
    }
}
