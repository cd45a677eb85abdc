//! Coupled velocity measurement model.
//!
//! A scattering source on the object is observed as
//!
//! ```text
//! y = H x + S(ϑ, p) h + v,    S = R(α) diag(l₁, l₂),   α = atan2(v_y, v_x) − β
//! ```
//!
//! where `x = [position, velocity]`, `p = [l₁, l₂, β]`, `h` is zero-mean
//! multiplicative noise with covariance `C^h` and `v` is sensor noise. The
//! orientation of the extent is tied to the velocity direction through the
//! sideslip angle `β`.
//!
//! The model is linearized to first order around the current estimates to
//! obtain two separate linear models with additive noise: one in the
//! kinematics (position measurement with an equivalent noise covariance) and
//! one in the extent (quadratic pseudo-measurement built from the residual
//! Kronecker square). [`LinearizedModel`] evaluates everything needed by a
//! single WLS update at one linearization point.

use std::f64::consts::PI;

use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    floor_eigenvalues, is_finite, kron2, spd_inverse, symmetrize, vect2, Mat2, Mat2x3, Mat3,
    Mat3x4, Mat4, Vec2, Vec3, Vec4,
};

/// Linearization points with a speed below this are rejected.
pub const MIN_SPEED: f64 = 1e-6;

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Position and velocity of the object centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl KinematicState {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        Self { position, velocity }
    }

    pub fn from_vector(x: &Vec4) -> Self {
        Self {
            position: Vec2::new(x[0], x[1]),
            velocity: Vec2::new(x[2], x[3]),
        }
    }

    pub fn to_vector(&self) -> Vec4 {
        Vec4::new(self.position[0], self.position[1], self.velocity[0], self.velocity[1])
    }

    /// Direction of motion, `atan2(v_y, v_x)`.
    pub fn heading(&self) -> f64 {
        self.velocity[1].atan2(self.velocity[0])
    }
}

/// Semi-lengths and sideslip angle of the object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtentState {
    pub semi_lengths: Vec2,
    /// Drift between orientation and direction of motion, wrapped to `(−π, π]`.
    pub sideslip: f64,
}

impl ExtentState {
    /// Validated constructor: semi-lengths must be strictly positive.
    pub fn new(l1: f64, l2: f64, sideslip: f64) -> Result<Self> {
        if !(l1 > 0.0 && l2 > 0.0) || !l1.is_finite() || !l2.is_finite() || !sideslip.is_finite() {
            return Err(Error::Validation(format!(
                "extent needs positive finite semi-lengths, got ({l1}, {l2}), sideslip {sideslip}"
            )));
        }
        Ok(Self { semi_lengths: Vec2::new(l1, l2), sideslip: wrap_angle(sideslip) })
    }

    /// Unvalidated conversion from an estimate vector `[l₁, l₂, β]`; the
    /// angle is wrapped.
    pub fn from_vector(p: &Vec3) -> Self {
        Self { semi_lengths: Vec2::new(p[0], p[1]), sideslip: wrap_angle(p[2]) }
    }

    pub fn to_vector(&self) -> Vec3 {
        Vec3::new(self.semi_lengths[0], self.semi_lengths[1], self.sideslip)
    }

    /// Body orientation `α` for a given velocity.
    pub fn orientation(&self, velocity: &Vec2) -> f64 {
        wrap_angle(velocity[1].atan2(velocity[0]) - self.sideslip)
    }
}

/// Multiplicative noise covariance and per-node sensor noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub mult_cov: Mat2,
    pub meas_cov_per_node: Vec<Mat2>,
}

impl NoiseModel {
    pub fn new(mult_cov: Mat2, meas_cov_per_node: Vec<Mat2>) -> Result<Self> {
        check_spd(&mult_cov, "multiplicative noise covariance")?;
        for (s, c) in meas_cov_per_node.iter().enumerate() {
            check_spd(c, &format!("measurement covariance of node {s}"))?;
        }
        Ok(Self { mult_cov, meas_cov_per_node })
    }

    pub fn meas_cov(&self, node: usize) -> Result<&Mat2> {
        self.meas_cov_per_node
            .get(node)
            .ok_or_else(|| Error::Validation(format!("no measurement covariance for node {node}")))
    }
}

/// Linear dynamics for kinematics and extent.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub kin_transition: Mat4,
    pub ext_transition: Mat3,
    pub kin_proc_cov: Mat4,
    pub ext_proc_cov: Mat3,
    pub scan_period: f64,
}

impl DynamicsModel {
    /// Nearly-constant-velocity kinematics and a static (rigid) extent.
    pub fn nearly_constant_velocity(scan_period: f64, kin_proc_cov: Mat4, ext_proc_cov: Mat3) -> Self {
        Self {
            kin_transition: ncv_transition(scan_period),
            ext_transition: Mat3::identity(),
            kin_proc_cov,
            ext_proc_cov,
            scan_period,
        }
    }
}

pub fn ncv_transition(scan_period: f64) -> Mat4 {
    let mut phi = Mat4::identity();
    phi[(0, 2)] = scan_period;
    phi[(1, 3)] = scan_period;
    phi
}

/// Mean plus information matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoEstimate<const N: usize> {
    pub mean: SMatrix<f64, N, 1>,
    pub info: SMatrix<f64, N, N>,
}

impl<const N: usize> InfoEstimate<N> {
    pub fn new(mean: SMatrix<f64, N, 1>, info: SMatrix<f64, N, N>) -> Result<Self> {
        check_spd(&info, "information matrix")?;
        Ok(Self { mean, info: symmetrize(&info) })
    }

    pub fn from_covariance(mean: SMatrix<f64, N, 1>, cov: &SMatrix<f64, N, N>) -> Result<Self> {
        let info = spd_inverse(cov, "covariance")?;
        Ok(Self { mean, info })
    }

    pub fn covariance(&self) -> Result<SMatrix<f64, N, N>> {
        spd_inverse(&self.info, "information matrix")
    }
}

fn check_spd<const N: usize>(m: &SMatrix<f64, N, N>, what: &str) -> Result<()> {
    if !is_finite(m) {
        return Err(Error::Validation(format!("{what} has non-finite entries")));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-9 * m.abs().max().max(1.0) {
        return Err(Error::Validation(format!("{what} is not symmetric")));
    }
    if symmetrize(m).cholesky().is_none() {
        return Err(Error::Validation(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Position selector `H = [I₂ 0]`.
pub fn position_selector() -> SMatrix<f64, 2, 4> {
    SMatrix::<f64, 2, 4>::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// Constant 0/1 matrices picking `(r₁², r₂², r₁r₂)` and `(r₁², r₂², r₂r₁)`
/// out of `r ⊗ r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KroneckerSelectors {
    pub f: Mat3x4,
    pub f_tilde: Mat3x4,
}

impl KroneckerSelectors {
    pub fn new() -> Self {
        #[rustfmt::skip]
        let f = Mat3x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 1.0, 0.0, 0.0,
        );
        #[rustfmt::skip]
        let f_tilde = Mat3x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0,
        );
        Self { f, f_tilde }
    }
}

impl Default for KroneckerSelectors {
    fn default() -> Self {
        Self::new()
    }
}

fn check_speed(velocity: &Vec2) -> Result<f64> {
    let speed = velocity.norm();
    if !speed.is_finite() || speed < MIN_SPEED {
        return Err(Error::DegenerateInput(format!(
            "speed {speed:e} below {MIN_SPEED:e} m/s at linearization point"
        )));
    }
    Ok(speed)
}

/// `(cos α, sin α)` written in terms of the velocity and sideslip.
fn orientation_cos_sin(velocity: &Vec2, sideslip: f64, speed: f64) -> (f64, f64) {
    let (sb, cb) = sideslip.sin_cos();
    let (vx, vy) = (velocity[0], velocity[1]);
    ((vx * cb + vy * sb) / speed, (vy * cb - vx * sb) / speed)
}

/// The coefficient matrix `S = R(α) diag(l₁, l₂)`.
pub fn coefficient_matrix(velocity: &Vec2, extent: &ExtentState) -> Result<Mat2> {
    let speed = check_speed(velocity)?;
    let (c, s) = orientation_cos_sin(velocity, extent.sideslip, speed);
    let (l1, l2) = (extent.semi_lengths[0], extent.semi_lengths[1]);
    Ok(Mat2::new(c * l1, -s * l2, s * l1, c * l2))
}

/// Partial derivatives of the unit velocity direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityPartials {
    /// ∂(v_x/‖ϑ‖)/∂v_x
    pub d1: f64,
    /// ∂(v_y/‖ϑ‖)/∂v_y
    pub d2: f64,
    /// ∂(v_y/‖ϑ‖)/∂v_x = ∂(v_x/‖ϑ‖)/∂v_y
    pub d3: f64,
}

pub fn velocity_partials(velocity: &Vec2) -> Result<VelocityPartials> {
    let speed = check_speed(velocity)?;
    let (vx, vy) = (velocity[0], velocity[1]);
    let cube = speed * speed * speed;
    Ok(VelocityPartials {
        d1: 1.0 / speed - vx * vx / cube,
        d2: 1.0 / speed - vy * vy / cube,
        d3: -vx * vy / cube,
    })
}

/// Jacobians of the two rows of `S` with respect to `p = [l₁, l₂, β]`.
/// Row `j` of `first_row` is the gradient of `S[0, j]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtentJacobians {
    pub first_row: Mat2x3,
    pub second_row: Mat2x3,
}

impl ExtentJacobians {
    pub fn row(&self, m: usize) -> &Mat2x3 {
        if m == 0 {
            &self.first_row
        } else {
            &self.second_row
        }
    }
}

pub fn jacobians_extent(velocity: &Vec2, extent: &ExtentState) -> Result<ExtentJacobians> {
    let speed = check_speed(velocity)?;
    let (c, s) = orientation_cos_sin(velocity, extent.sideslip, speed);
    let (l1, l2) = (extent.semi_lengths[0], extent.semi_lengths[1]);
    #[rustfmt::skip]
    let first_row = Mat2x3::new(
        c,   0.0, l1 * s,
        0.0, -s,  l2 * c,
    );
    #[rustfmt::skip]
    let second_row = Mat2x3::new(
        s,   0.0, -l1 * c,
        0.0, c,   l2 * s,
    );
    Ok(ExtentJacobians { first_row, second_row })
}

/// Jacobians of the two rows of `S` with respect to the velocity `(v_x, v_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityJacobians {
    pub first_row: Mat2,
    pub second_row: Mat2,
}

impl VelocityJacobians {
    pub fn row(&self, m: usize) -> &Mat2 {
        if m == 0 {
            &self.first_row
        } else {
            &self.second_row
        }
    }
}

pub fn jacobians_velocity(velocity: &Vec2, extent: &ExtentState) -> Result<VelocityJacobians> {
    let VelocityPartials { d1, d2, d3 } = velocity_partials(velocity)?;
    let (sb, cb) = extent.sideslip.sin_cos();
    let (l1, l2) = (extent.semi_lengths[0], extent.semi_lengths[1]);
    let first_row = Mat2::new(
        l1 * (d3 * sb + d1 * cb),
        l1 * (d2 * sb + d3 * cb),
        l2 * (d1 * sb - d3 * cb),
        l2 * (d3 * sb - d2 * cb),
    );
    let second_row = Mat2::new(
        l1 * (d3 * cb - d1 * sb),
        l1 * (d2 * cb - d3 * sb),
        l2 * (d3 * sb + d1 * cb),
        l2 * (d2 * sb + d3 * cb),
    );
    Ok(VelocityJacobians { first_row, second_row })
}

/// The terms making up the equivalent noise covariance `R^x` of the
/// kinematic measurement model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalentNoise {
    /// `Ŝ C^h Ŝᵀ`
    pub spread: Mat2,
    /// Contribution of the extent uncertainty.
    pub extent_uncertainty: Mat2,
    /// Contribution of the velocity uncertainty.
    pub velocity_uncertainty: Mat2,
    pub sensor: Mat2,
}

impl EquivalentNoise {
    pub fn total(&self) -> Mat2 {
        symmetrize(&(self.spread + self.extent_uncertainty + self.velocity_uncertainty + self.sensor))
    }
}

/// Contributions of one detection to the information-form WLS normal
/// equations, for the kinematic and the extent model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementTerms {
    /// `Hᵀ V^x H`
    pub kin_info: Mat4,
    /// `Hᵀ V^x y`
    pub kin_vec: Vec4,
    /// `Mᵀ V^p M`
    pub ext_info: Mat3,
    /// `Mᵀ V^p Ỹ`
    pub ext_vec: Vec3,
}

/// Everything evaluated at one linearization point `(x̂, C^x, p̂, C^p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel {
    pub kin_mean: Vec4,
    pub kin_cov: Mat4,
    pub ext_mean: Vec3,
    pub ext_cov: Mat3,
    pub mult_cov: Mat2,
    /// `Ŝ`
    pub coefficient: Mat2,
    pub ext_jac: ExtentJacobians,
    pub vel_jac: VelocityJacobians,
}

impl LinearizedModel {
    pub fn new(prior_kin: &InfoEstimate<4>, prior_ext: &InfoEstimate<3>, mult_cov: &Mat2) -> Result<Self> {
        let kin_cov = prior_kin.covariance()?;
        let ext_cov = prior_ext.covariance()?;
        Self::from_covariances(prior_kin.mean, kin_cov, prior_ext.mean, ext_cov, mult_cov)
    }

    /// Same as [`LinearizedModel::new`] but from covariances, which may be
    /// singular (zero uncertainty is allowed here).
    pub fn from_covariances(
        kin_mean: Vec4,
        kin_cov: Mat4,
        ext_mean: Vec3,
        ext_cov: Mat3,
        mult_cov: &Mat2,
    ) -> Result<Self> {
        let velocity = Vec2::new(kin_mean[2], kin_mean[3]);
        let extent = ExtentState::from_vector(&ext_mean);
        Ok(Self {
            kin_mean,
            kin_cov,
            ext_mean,
            ext_cov,
            mult_cov: *mult_cov,
            coefficient: coefficient_matrix(&velocity, &extent)?,
            ext_jac: jacobians_extent(&velocity, &extent)?,
            vel_jac: jacobians_velocity(&velocity, &extent)?,
        })
    }

    fn velocity_cov(&self) -> Mat2 {
        self.kin_cov.fixed_view::<2, 2>(2, 2).into_owned()
    }

    /// The three state-induced terms of the equivalent kinematic noise plus
    /// the sensor term.
    pub fn equivalent_noise(&self, meas_cov: &Mat2) -> EquivalentNoise {
        let s = &self.coefficient;
        let ch = &self.mult_cov;
        let vel_cov = self.velocity_cov();
        let mut extent_uncertainty = Mat2::zeros();
        let mut velocity_uncertainty = Mat2::zeros();
        for m in 0..2 {
            for n in 0..2 {
                let jp = self.ext_jac.row(n).transpose() * ch * self.ext_jac.row(m);
                extent_uncertainty[(m, n)] = (self.ext_cov * jp).trace();
                let jv = self.vel_jac.row(n).transpose() * ch * self.vel_jac.row(m);
                velocity_uncertainty[(m, n)] = (vel_cov * jv).trace();
            }
        }
        EquivalentNoise {
            spread: s * ch * s.transpose(),
            extent_uncertainty,
            velocity_uncertainty,
            sensor: *meas_cov,
        }
    }

    /// `R^x`, the equivalent noise covariance of the kinematic model.
    pub fn kinematic_noise(&self, meas_cov: &Mat2) -> Result<Mat2> {
        let r = self.equivalent_noise(meas_cov).total();
        if !is_finite(&r) || r.cholesky().is_none() {
            return Err(Error::Conditioning("equivalent kinematic noise is not positive definite".into()));
        }
        Ok(r)
    }

    /// Pseudo-measurement matrix `M` of the extent model.
    pub fn pseudo_measurement_matrix(&self) -> Mat3 {
        let s1 = self.coefficient.row(0);
        let s2 = self.coefficient.row(1);
        let ch = &self.mult_cov;
        let j1 = &self.ext_jac.first_row;
        let j2 = &self.ext_jac.second_row;
        let r1 = (s1 * ch * j1) * 2.0;
        let r2 = (s2 * ch * j2) * 2.0;
        let r3 = s1 * ch * j2 + s2 * ch * j1;
        Mat3::from_rows(&[r1, r2, r3])
    }

    /// Contribution `(Hᵀ V^x H, Hᵀ V^x y)` of one detection to the
    /// kinematic normal equations.
    pub fn kinematic_terms(&self, meas_cov: &Mat2, y: &Vec2) -> Result<(Mat4, Vec4)> {
        let h = position_selector();
        let r_x = self.kinematic_noise(meas_cov)?;
        let v_x = spd_inverse(&r_x, "equivalent kinematic noise")?;
        Ok((symmetrize(&(h.transpose() * v_x * h)), h.transpose() * (v_x * y)))
    }

    /// Contribution `(Mᵀ V^p M, Mᵀ V^p Ỹ)` of one detection to the extent
    /// normal equations, with the de-biased pseudo-measurement
    /// `Ỹ = F(r ⊗ r) − v̄^p` and `r` taken against this point's `x̂`.
    pub fn extent_terms(&self, meas_cov: &Mat2, y: &Vec2) -> Result<(Mat3, Vec3)> {
        let r_x = self.kinematic_noise(meas_cov)?;
        let c_y = measurement_residual_cov(&self.kin_cov, &r_x);
        let m = self.pseudo_measurement_matrix();
        let (bias, r_p) = pseudo_noise_moments(&m, &self.ext_mean, &self.ext_cov, &c_y)?;
        let v_p = spd_inverse(&r_p, "pseudo-measurement noise")?;
        let debiased = pseudo_measurement(y, &self.kin_mean) - bias;
        let info = symmetrize(&(m.transpose() * v_p * m));
        let vec = m.transpose() * (v_p * debiased);
        if !is_finite(&info) || !is_finite(&vec) {
            return Err(Error::Conditioning("non-finite extent contribution".into()));
        }
        Ok((info, vec))
    }

    /// Per-detection information contributions for both models.
    pub fn measurement_terms(&self, meas_cov: &Mat2, y: &Vec2) -> Result<MeasurementTerms> {
        let (kin_info, kin_vec) = self.kinematic_terms(meas_cov, y)?;
        let (ext_info, ext_vec) = self.extent_terms(meas_cov, y)?;
        Ok(MeasurementTerms { kin_info, kin_vec, ext_info, ext_vec })
    }
}

/// `R^x` for node `node` at the given priors.
pub fn kinematic_noise_moments(
    prior_kin: &InfoEstimate<4>,
    prior_ext: &InfoEstimate<3>,
    noise: &NoiseModel,
    node: usize,
) -> Result<Mat2> {
    LinearizedModel::new(prior_kin, prior_ext, &noise.mult_cov)?.kinematic_noise(noise.meas_cov(node)?)
}

/// `C^y = H C^x Hᵀ + R^x`, the covariance of the position residual.
pub fn measurement_residual_cov(kin_cov: &Mat4, r_x: &Mat2) -> Mat2 {
    let pos = kin_cov.fixed_view::<2, 2>(0, 0).into_owned();
    symmetrize(&(pos + r_x))
}

/// `F (r ⊗ r) = (r₁², r₂², r₁r₂)` for `r = y − H x̂`.
pub fn pseudo_measurement(y: &Vec2, kin_mean: &Vec4) -> Vec3 {
    let r1 = y[0] - kin_mean[0];
    let r2 = y[1] - kin_mean[1];
    Vec3::new(r1 * r1, r2 * r2, r1 * r2)
}

/// `F (C^y ⊗ C^y)(F + F̃)ᵀ`, the covariance of the pseudo-measurement.
pub fn pseudo_measurement_cov(c_y: &Mat2) -> Mat3 {
    let sel = KroneckerSelectors::new();
    symmetrize(&(sel.f * kron2(c_y, c_y) * (sel.f + sel.f_tilde).transpose()))
}

/// `M` at the given priors.
pub fn pseudo_measurement_matrix(
    prior_kin: &InfoEstimate<4>,
    prior_ext: &InfoEstimate<3>,
    noise: &NoiseModel,
) -> Result<Mat3> {
    Ok(LinearizedModel::new(prior_kin, prior_ext, &noise.mult_cov)?.pseudo_measurement_matrix())
}

/// Mean and (floored) covariance of the equivalent extent-model noise.
pub fn pseudo_noise_moments(m: &Mat3, ext_mean: &Vec3, ext_cov: &Mat3, c_y: &Mat2) -> Result<(Vec3, Mat3)> {
    let sel = KroneckerSelectors::new();
    let mean = sel.f * vect2(c_y) - m * ext_mean;
    let raw = pseudo_measurement_cov(c_y) - m * ext_cov * m.transpose();
    let cov = floor_eigenvalues(&raw, "pseudo-measurement noise covariance")?;
    Ok((mean, cov))
}
