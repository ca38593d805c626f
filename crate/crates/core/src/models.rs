//! Model specifications and their stationary statistics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius};

const NORMALITY_TOL: f64 = 1e-10;
const LYAPUNOV_TOL: f64 = 1e-10;

/// Linear SDE `dX = θ A X dt + γ^{1/2} dW` with the true parameter θ† = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    drift: DMatrix<f64>,
    gamma: f64,
}

impl LinearModel {
    /// Validates squareness, finiteness, `γ > 0`, stability and normality.
    pub fn new(drift: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let d = drift.nrows();
        if d == 0 || drift.ncols() != d {
            return Err(Error::Model(format!("drift must be square, got {:?}", drift.shape())));
        }
        if drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("drift has non-finite entries".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Model(format!("gamma must be positive, got {gamma}")));
        }
        let abscissa = linalg::spectral_abscissa(&drift);
        if abscissa >= 0.0 {
            return Err(Error::Model(format!(
                "drift has an eigenvalue with real part {abscissa:.3e} >= 0"
            )));
        }
        let scale = drift.norm_squared();
        let residual = linalg::normality_residual(&drift);
        if residual > NORMALITY_TOL * scale {
            return Err(Error::Model(format!(
                "drift is not normal: ‖AAᵀ − AᵀA‖_F = {residual:.3e}"
            )));
        }
        Ok(Self { drift, gamma })
    }

    /// The two-dimensional test problem `A = −½[[1, −1], [1, 1]]`, `γ = 1`.
    pub fn preset() -> Self {
        let drift = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, -0.5, -0.5]);
        Self::new(drift, 1.0).expect("preset model is valid")
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    /// `(AᵀA):C / γ`, the information rate that drives the posterior variance.
    pub fn information_rate(&self) -> Result<f64> {
        let c = stationary_covariance(self)?;
        information_rate(&self.drift, &c, self.gamma)
    }
}

/// `(AᵀA):C / γ` for an arbitrary covariance-like matrix `C`.
pub fn information_rate(drift: &DMatrix<f64>, cov: &DMatrix<f64>, gamma: f64) -> Result<f64> {
    Ok(frobenius(&(drift.transpose() * drift), cov)? / gamma)
}

/// Stationary covariance `C = −γ (A + Aᵀ)⁻¹` of the reference SDE.
pub fn stationary_covariance(model: &LinearModel) -> Result<DMatrix<f64>> {
    let a = model.drift();
    let sym = a + a.transpose();
    let inv = sym
        .try_inverse()
        .ok_or_else(|| Error::Numeric("drift not dissipative: A + Aᵀ is singular".into()))?;
    let c = inv * (-model.gamma());
    let q = DMatrix::identity(model.dim(), model.dim()) * model.gamma();
    let residual = linalg::lyapunov_residual(a, &c, &q);
    let scale = 1.0_f64.max(a.norm() * c.norm());
    if residual > LYAPUNOV_TOL * scale {
        return Err(Error::Numeric(format!(
            "closed-form covariance violates the Lyapunov equation (residual {residual:.3e})"
        )));
    }
    Ok(c)
}

/// Fast-process coupling `M = [[1, β], [−β, 1]]`.
pub fn rotation_m(beta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, beta, -beta, 1.0])
}

/// Two-scale data model: the slow state is driven by a fast OU process
/// `P` with coupling `M` and time scale `ε` instead of white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleModel {
    base: LinearModel,
    coupling: DMatrix<f64>,
    epsilon: f64,
}

impl TwoScaleModel {
    pub fn new(base: LinearModel, coupling: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        let d = base.dim();
        if coupling.shape() != (d, d) {
            return Err(Error::Model(format!(
                "coupling matrix must be {d}x{d}, got {:?}",
                coupling.shape()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Model(format!("epsilon must be positive, got {epsilon}")));
        }
        let sym = &coupling + coupling.transpose();
        if sym.cholesky().is_none() {
            return Err(Error::Model("M + Mᵀ must be symmetric positive definite".into()));
        }
        Ok(Self { base, coupling, epsilon })
    }

    /// Preset two-dimensional two-scale model with `M = rotation_m(β)`.
    pub fn preset(epsilon: f64, beta: f64) -> Result<Self> {
        Self::new(LinearModel::preset(), rotation_m(beta), epsilon)
    }

    pub fn base(&self) -> &LinearModel {
        &self.base
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `ε (M + Mᵀ)⁻¹`, the stationary covariance of the fast process.
    pub fn fast_stationary_covariance(&self) -> DMatrix<f64> {
        let sym = &self.coupling + self.coupling.transpose();
        sym.try_inverse().expect("validated positive definite") * self.epsilon
    }
}

/// Low-pass observation filter `dZ = δ⁻¹(X − Z) dt + δ_noise √2 dV`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub delta: f64,
    /// Whether the independent filter noise is switched on (`δ_noise = 1`).
    pub noise: bool,
}

impl FilterConfig {
    pub fn new(delta: f64, noise: bool) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("filter delta must be positive, got {delta}")));
        }
        Ok(Self { delta, noise })
    }

    pub fn noise_factor(&self) -> f64 {
        if self.noise {
            1.0
        } else {
            0.0
        }
    }
}

/// Stationary second moments of the joint (X, Z) system.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedStationaryCovariance {
    pub sigma_xx: DMatrix<f64>,
    /// `E[X Zᵀ]`.
    pub sigma_xz: DMatrix<f64>,
    pub sigma_zz: DMatrix<f64>,
    /// `C̃ = Σ_zz − δ_noise δ I`.
    pub c_tilde: DMatrix<f64>,
}

impl ExtendedStationaryCovariance {
    /// Frobenius residuals of the three block relations:
    /// `AΣxx + ΣxxAᵀ + γI`, `Σxz + Σzx − 2(Σzz − δ_noise δ I)` and
    /// `AΣxz + δ⁻¹(Σxx − Σxz)`.
    pub fn relation_residuals(&self, model: &LinearModel, filter: &FilterConfig) -> [f64; 3] {
        let a = model.drift();
        let d = model.dim();
        let eye = DMatrix::<f64>::identity(d, d);
        let r1 = a * &self.sigma_xx + &self.sigma_xx * a.transpose() + &eye * model.gamma();
        let shifted = &self.sigma_zz - &eye * (filter.noise_factor() * filter.delta);
        let r2 = &self.sigma_xz + self.sigma_xz.transpose() - shifted * 2.0;
        let r3 = a * &self.sigma_xz + (&self.sigma_xx - &self.sigma_xz) / filter.delta;
        [r1.norm(), r2.norm(), r3.norm()]
    }
}

/// Solves the joint stationary Lyapunov equation of the data and filter
/// processes and extracts its blocks.
pub fn extended_stationary_covariance(
    model: &LinearModel,
    filter: &FilterConfig,
) -> Result<ExtendedStationaryCovariance> {
    let d = model.dim();
    let a = model.drift();
    let inv_delta = 1.0 / filter.delta;
    let mut joint = DMatrix::<f64>::zeros(2 * d, 2 * d);
    joint.view_mut((0, 0), (d, d)).copy_from(a);
    for i in 0..d {
        joint[(d + i, i)] = inv_delta;
        joint[(d + i, d + i)] = -inv_delta;
    }
    let mut q = DMatrix::<f64>::zeros(2 * d, 2 * d);
    for i in 0..d {
        q[(i, i)] = model.gamma();
        q[(d + i, d + i)] = 2.0 * filter.noise_factor();
    }
    let s = linalg::solve_lyapunov(&joint, &q)?;
    let sigma_xx = s.view((0, 0), (d, d)).into_owned();
    let sigma_xz = s.view((0, d), (d, d)).into_owned();
    let sigma_zz = s.view((d, d), (d, d)).into_owned();
    let c = stationary_covariance(model)?;
    let gap = (&sigma_xx - &c).norm();
    if gap > 1e-8 * 1.0_f64.max(c.norm()) {
        return Err(Error::Numeric(format!(
            "joint stationary covariance disagrees with C (gap {gap:.3e})"
        )));
    }
    let c_tilde = &sigma_zz - DMatrix::<f64>::identity(d, d) * (filter.noise_factor() * filter.delta);
    Ok(ExtendedStationaryCovariance { sigma_xx, sigma_xz, sigma_zz, c_tilde })
}

/// Centered first difference `(u_{i+1} − u_{i−1}) / (2Δy)` with periodic wrap.
pub fn periodic_centered_difference(d: usize, dy: f64) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        m[(i, (i + 1) % d)] += 0.5 / dy;
        m[(i, (i + d - 1) % d)] -= 0.5 / dy;
    }
    m
}

/// Raw drift `−(U D + ρ D Dᵀ)` of the semi-discrete advection-diffusion
/// equation on a periodic grid of `d` points over `[0, length)`.
pub fn spde_drift(u: f64, rho: f64, length: f64, d: usize) -> Result<DMatrix<f64>> {
    if d < 4 {
        return Err(Error::Model(format!("need at least 4 grid points, got {d}")));
    }
    if !(rho > 0.0) || !(length > 0.0) {
        return Err(Error::Model("rho and the domain length must be positive".into()));
    }
    let dy = length / d as f64;
    let dmat = periodic_centered_difference(d, dy);
    let diffusion = &dmat * dmat.transpose();
    Ok(-(dmat * u + diffusion * rho))
}

/// Linear model for the discretised stochastic advection-diffusion equation,
/// with `γ = Δy⁻¹` and drift `−(U D + ρ D Dᵀ + κ I)`.
///
/// Any consistent periodic derivative annihilates constants, so the raw
/// operator always has a zero eigenvalue (and, for even `d`, the centered
/// difference also annihilates the grid-scale checkerboard). `damping = κ`
/// shifts the spectrum into the left half plane and must be positive.
pub fn spde_advection_diffusion(
    u: f64,
    rho: f64,
    length: f64,
    d: usize,
    damping: f64,
) -> Result<LinearModel> {
    if !(damping > 0.0 && damping.is_finite()) {
        return Err(Error::Model(format!("damping must be positive, got {damping}")));
    }
    let drift = spde_drift(u, rho, length, d)? - DMatrix::<f64>::identity(d, d) * damping;
    LinearModel::new(drift, d as f64 / length)
}

/// JSON model document:
/// `{"kind": "linear" | "two_scale", "A": [[..]], "gamma": .., "M": [[..]], "epsilon": ..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        gamma: f64,
    },
    TwoScale {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        gamma: f64,
        #[serde(rename = "M")]
        m: Vec<Vec<f64>>,
        epsilon: f64,
    },
}

/// Either kind of data-generating model.
#[derive(Debug, Clone, PartialEq)]
pub enum DataModel {
    Linear(LinearModel),
    TwoScale(TwoScaleModel),
}

impl DataModel {
    /// The linear model the estimators assume.
    pub fn estimation_model(&self) -> &LinearModel {
        match self {
            DataModel::Linear(m) => m,
            DataModel::TwoScale(m) => m.base(),
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Model(format!("{what} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ModelSpec {
    pub fn build(&self) -> Result<DataModel> {
        match self {
            ModelSpec::Linear { a, gamma } => {
                Ok(DataModel::Linear(LinearModel::new(matrix_from_rows(a, "A")?, *gamma)?))
            }
            ModelSpec::TwoScale { a, gamma, m, epsilon } => {
                let base = LinearModel::new(matrix_from_rows(a, "A")?, *gamma)?;
                Ok(DataModel::TwoScale(TwoScaleModel::new(
                    base,
                    matrix_from_rows(m, "M")?,
                    *epsilon,
                )?))
            }
        }
    }

    pub fn from_model(model: &DataModel) -> Self {
        match model {
            DataModel::Linear(l) => ModelSpec::Linear {
                a: matrix_to_rows(l.drift()),
                gamma: l.gamma(),
            },
            DataModel::TwoScale(t) => ModelSpec::TwoScale {
                a: matrix_to_rows(t.base().drift()),
                gamma: t.base().gamma(),
                m: matrix_to_rows(t.coupling()),
                epsilon: t.epsilon(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn preset_covariance_is_identity() {
        let model = LinearModel::preset();
        let c = stationary_covariance(&model).unwrap();
        assert_relative_eq!(c, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn scaled_identity_drift() {
        let model = LinearModel::new(-DMatrix::<f64>::identity(2, 2), 2.0).unwrap();
        let c = stationary_covariance(&model).unwrap();
        assert_relative_eq!(c, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn preset_frobenius_values() {
        let model = LinearModel::preset();
        let a = model.drift();
        let c = stationary_covariance(&model).unwrap();
        assert_relative_eq!(frobenius(&(a.transpose() * a), &c).unwrap(), 1.0, epsilon = 1e-14);
        // tr(A M) evaluated by hand: A M = −½[[3, 1], [−1, 3]].
        let m = rotation_m(2.0);
        let by_hand = -0.5 * (1.0 * 1.0 + (-1.0) * (-2.0)) + -0.5 * (1.0 * 2.0 + 1.0 * 1.0);
        assert_relative_eq!(frobenius(&a.transpose(), &m).unwrap(), by_hand, epsilon = 1e-14);
        assert_relative_eq!(by_hand, -3.0);
    }

    #[test]
    fn rotation_m_examples() {
        assert_eq!(rotation_m(0.0), DMatrix::<f64>::identity(2, 2));
        assert_eq!(rotation_m(2.0), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -2.0, 1.0]));
    }

    #[test]
    fn rejects_unstable_and_non_normal_drifts() {
        let unstable = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0]);
        assert!(matches!(LinearModel::new(unstable, 1.0), Err(Error::Model(_))));
        let non_normal = DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, 0.0, -1.0]);
        assert!(matches!(LinearModel::new(non_normal, 1.0), Err(Error::Model(_))));
        assert!(LinearModel::new(-DMatrix::<f64>::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn two_scale_requires_positive_definite_coupling() {
        let base = LinearModel::preset();
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(TwoScaleModel::new(base.clone(), bad, 0.01).is_err());
        assert!(TwoScaleModel::new(base.clone(), rotation_m(2.0), 0.0).is_err());
        let ok = TwoScaleModel::new(base, rotation_m(2.0), 0.01).unwrap();
        assert_relative_eq!(
            ok.fast_stationary_covariance(),
            DMatrix::identity(2, 2) * 0.005,
            epsilon = 1e-15
        );
    }

    #[test]
    fn spde_pure_diffusion_is_symmetric() {
        let a = spde_drift(0.0, 1.0, 1.0, 8).unwrap();
        assert_eq!((&a - a.transpose()).norm(), 0.0);
        assert_eq!(linalg::normality_residual(&a), 0.0);
    }

    #[test]
    fn spde_raw_operator_has_zero_mode() {
        let err = spde_advection_diffusion(1.0, 0.5, 1.0, 16, 0.0).unwrap_err();
        assert!(matches!(err, Error::Model(_)));
    }

    #[test]
    fn spde_damped_model_is_stable_and_normal() {
        let model = spde_advection_diffusion(1.0, 0.5, 1.0, 16, 0.1).unwrap();
        assert_eq!(model.gamma(), 16.0);
        assert!(linalg::spectral_abscissa(model.drift()) < 0.0);
        let c = stationary_covariance(&model).unwrap();
        let q = DMatrix::identity(16, 16) * model.gamma();
        assert!(linalg::lyapunov_residual(model.drift(), &c, &q) <= 1e-10);
        // general solver agrees with the closed form
        let general = linalg::solve_lyapunov(model.drift(), &q).unwrap();
        assert!((general - c).norm() < 1e-9);
    }

    #[test]
    fn spde_rejects_small_grids() {
        assert!(spde_drift(1.0, 0.5, 1.0, 3).is_err());
    }

    #[test]
    fn extended_covariance_relations_hold() {
        let model = LinearModel::preset();
        for noise in [false, true] {
            let filter = FilterConfig::new(0.1, noise).unwrap();
            let ext = extended_stationary_covariance(&model, &filter).unwrap();
            for r in ext.relation_residuals(&model, &filter) {
                assert!(r <= 1e-10, "residual {r}");
            }
            let sym = (&ext.sigma_xz + ext.sigma_xz.transpose()) * 0.5;
            assert!((sym - &ext.c_tilde).norm() <= 1e-10);
        }
    }

    #[test]
    fn c_tilde_approaches_c_for_small_delta() {
        let model = LinearModel::preset();
        let c = stationary_covariance(&model).unwrap();
        let filter = FilterConfig::new(1e-6, false).unwrap();
        let ext = extended_stationary_covariance(&model, &filter).unwrap();
        assert!((&ext.c_tilde - &c).norm() <= 1e-4);
    }

    #[test]
    fn c_tilde_gap_is_first_order_in_delta() {
        let model = LinearModel::preset();
        let c = stationary_covariance(&model).unwrap();
        for noise in [false, true] {
            let mut pts = Vec::new();
            let mut delta = 0.08;
            for _ in 0..6 {
                let f = FilterConfig::new(delta, noise).unwrap();
                let gap = (extended_stationary_covariance(&model, &f).unwrap().c_tilde - &c).norm();
                pts.push((delta.ln(), gap.ln()));
                delta /= 2.0;
            }
            let slope = least_squares_slope(&pts);
            assert!(slope >= 0.9, "slope {slope}");
        }
    }

    fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn model_spec_json_round_trip() {
        let spec = ModelSpec::from_model(&DataModel::TwoScale(
            TwoScaleModel::preset(0.01, 2.0).unwrap(),
        ));
        let text = spec.to_json().unwrap();
        assert!(text.contains("\"kind\": \"two_scale\""));
        assert!(text.contains("\"A\""));
        let back = ModelSpec::from_json(&text).unwrap();
        assert_eq!(back, spec);
        let built = back.build().unwrap();
        assert_eq!(built.estimation_model(), &LinearModel::preset());
    }

    #[test]
    fn model_spec_rejects_ragged_arrays() {
        let text = r#"{"kind":"linear","A":[[1.0],[0.0,1.0]],"gamma":1.0}"#;
        assert!(ModelSpec::from_json(text).unwrap().build().is_err());
    }
}
