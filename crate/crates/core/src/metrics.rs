//! Error metrics: Gaussian Wasserstein distance, OSPA over boundary points,
//! averaged consensus estimate error and NEES.

use nalgebra::SVector;

use crate::error::{Error, Result};
use crate::linalg::{is_finite, min_eigenvalue, psd_sqrt, symmetrize, Mat2, Vec2};
use crate::model::{coefficient_matrix, ExtentState, InfoEstimate, KinematicState};
use crate::network::{GroundTruthStep, Shape};

pub const OSPA_POINTS: usize = 20;
pub const OSPA_CUTOFF: f64 = 10.0;
pub const OSPA_ORDER: f64 = 2.0;

/// Center and shape matrix `R(α) diag(l₁², l₂²) R(α)ᵀ` of an object. A
/// vanishing semi-length gives a singular but valid shape matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticExtentSummary {
    pub center: Vec2,
    pub shape_matrix: Mat2,
}

impl EllipticExtentSummary {
    pub fn new(center: Vec2, shape_matrix: Mat2) -> Result<Self> {
        if !is_finite(&shape_matrix) || !center.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("non-finite extent summary".into()));
        }
        let scale = shape_matrix.abs().max().max(1.0);
        if (shape_matrix - shape_matrix.transpose()).abs().max() > 1e-9 * scale
            || min_eigenvalue(&symmetrize(&shape_matrix)) < -1e-9 * scale
        {
            return Err(Error::Validation("shape matrix must be symmetric positive semidefinite".into()));
        }
        Ok(Self { center, shape_matrix: symmetrize(&shape_matrix) })
    }

    pub fn from_axes(center: Vec2, orientation: f64, l1: f64, l2: f64) -> Result<Self> {
        let (s, c) = orientation.sin_cos();
        let r = Mat2::new(c, -s, s, c);
        Self::new(center, r * Mat2::new(l1 * l1, 0.0, 0.0, l2 * l2) * r.transpose())
    }

    pub fn from_state(kin: &KinematicState, ext: &ExtentState) -> Result<Self> {
        let s = coefficient_matrix(&kin.velocity, ext)?;
        Self::new(kin.position, s * s.transpose())
    }
}

/// `sqrt(‖c_a − c_b‖² + tr(Σ_a + Σ_b − 2 (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}))`, with the
/// cross trace taken as the sum of singular values of `Σ_a^{1/2} Σ_b^{1/2}`.
pub fn gwd(a: &EllipticExtentSummary, b: &EllipticExtentSummary) -> f64 {
    let cross = (psd_sqrt(&a.shape_matrix) * psd_sqrt(&b.shape_matrix)).singular_values().sum();
    let trace = (a.shape_matrix + b.shape_matrix).trace() - 2.0 * cross;
    ((a.center - b.center).norm_squared() + trace.max(0.0)).sqrt()
}

/// Pose and size of an object for boundary sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSummary {
    pub center: Vec2,
    /// Body orientation `α` in radians.
    pub orientation: f64,
    pub semi_lengths: Vec2,
}

impl ObjectSummary {
    pub fn from_state(kin: &KinematicState, ext: &ExtentState) -> Self {
        Self { center: kin.position, orientation: ext.orientation(&kin.velocity), semi_lengths: ext.semi_lengths }
    }

    pub fn from_truth(t: &GroundTruthStep) -> Self {
        Self { center: t.kin.position, orientation: t.orientation, semi_lengths: t.ext.semi_lengths }
    }

    /// `n` points at uniform spacing of the boundary parameter, starting on
    /// the positive body axis.
    pub fn boundary_points(&self, shape: Shape, n: usize) -> Vec<Vec2> {
        let (s, c) = self.orientation.sin_cos();
        let r = Mat2::new(c, -s, s, c);
        let d = Mat2::from_diagonal(&self.semi_lengths);
        (0..n)
            .map(|j| {
                let u = unit_boundary(shape, j as f64 / n as f64);
                self.center + r * d * u
            })
            .collect()
    }
}

/// Point at fraction `t ∈ [0, 1)` of the unit circle or of the perimeter of
/// `[−1, 1]²`, counter-clockwise from `(1, 0)`.
fn unit_boundary(shape: Shape, t: f64) -> Vec2 {
    match shape {
        Shape::Ellipse => {
            let a = std::f64::consts::TAU * t;
            Vec2::new(a.cos(), a.sin())
        }
        Shape::Rectangle => {
            let s = (8.0 * t + 1.0) % 8.0;
            match s {
                s if s < 2.0 => Vec2::new(1.0, -1.0 + s),
                s if s < 4.0 => Vec2::new(1.0 - (s - 2.0), 1.0),
                s if s < 6.0 => Vec2::new(-1.0, 1.0 - (s - 4.0)),
                s => Vec2::new(-1.0 + (s - 6.0), -1.0),
            }
        }
    }
}

/// Minimum-cost perfect matching on a square cost matrix. Returns the
/// column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // Potentials method, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

/// OSPA between equal-size point sets with cutoff `c` and order `p`.
pub fn ospa_points(a: &[Vec2], b: &[Vec2], cutoff: f64, order: f64) -> Result<f64> {
    if !(cutoff > 0.0) || !(order >= 1.0) {
        return Err(Error::Validation(format!("OSPA needs c > 0 and p >= 1, got c = {cutoff}, p = {order}")));
    }
    if a.len() != b.len() {
        return Err(Error::Validation(format!("OSPA point sets differ in size: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let cost: Vec<Vec<f64>> =
        a.iter().map(|x| b.iter().map(|y| (x - y).norm().min(cutoff).powf(order)).collect()).collect();
    let assignment = min_cost_assignment(&cost);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((total / a.len() as f64).powf(1.0 / order))
}

/// OSPA between the boundary point sets of two objects.
pub fn ospa(estimate: &ObjectSummary, truth: &ObjectSummary, shape: Shape, cutoff: f64, order: f64) -> Result<f64> {
    ospa_points(
        &estimate.boundary_points(shape, OSPA_POINTS),
        &truth.boundary_points(shape, OSPA_POINTS),
        cutoff,
        order,
    )
}

/// `(1/|N|) Σ_s ‖x̂_s − x̄‖` with `x̄` the across-node mean.
pub fn acee<const N: usize>(estimates: &[SVector<f64, N>]) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(Error::Validation("ACEE needs at least two nodes".into()));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<SVector<f64, N>>() / n;
    Ok(estimates.iter().map(|x| (x - mean).norm()).sum::<f64>() / n)
}

/// `(x̂ − x)ᵀ Ω (x̂ − x)`.
pub fn nees<const N: usize>(estimate: &InfoEstimate<N>, truth: &SVector<f64, N>) -> f64 {
    let e = estimate.mean - truth;
    (e.transpose() * estimate.info * e)[0]
}
