//! Fine-grid data generation and path functionals.
//!
//! All processes are integrated with explicit Euler-Maruyama on a uniform
//! grid `τ_l = l Δτ`. Path functionals use left-point (Itô) sums on the same
//! grid, so estimator sums and diagnostics are consistent with the data.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, mat_vec};
use crate::models::{stationary_covariance, FilterConfig, LinearModel, TwoScaleModel};
use crate::rng::{fill_standard_normal, noise_stream, StreamTag};

/// Largest allowed `Δτ · max |Re λ|` for explicit integration.
pub const STABILITY_MARGIN: f64 = 0.1;
/// Largest allowed `Δτ / δ` for the filter relaxation.
pub const FILTER_STIFFNESS_LIMIT: f64 = 0.5;

/// Which process produced a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathSource {
    Reference,
    TwoScale { epsilon: f64 },
    /// The fast OU process `P` of a two-scale simulation.
    FastProcess { epsilon: f64 },
    Filtered { delta: f64, noise: bool },
    /// Externally supplied states.
    External,
}

/// A trajectory sampled on the fine grid, stored row-major
/// (`n_fine + 1` rows of `dim` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    delta_tau: f64,
    dim: usize,
    states: Vec<f64>,
    seed: u64,
    source: PathSource,
}

impl ObservationPath {
    pub fn from_states(
        delta_tau: f64,
        dim: usize,
        states: Vec<f64>,
        seed: u64,
        source: PathSource,
    ) -> Result<Self> {
        if !(delta_tau > 0.0 && delta_tau.is_finite()) {
            return Err(Error::Config(format!("delta_tau must be positive, got {delta_tau}")));
        }
        if dim == 0 || states.len() < 2 * dim || !states.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form at least two states of dimension {dim}",
                states.len()
            )));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("path contains non-finite values".into()));
        }
        Ok(Self { delta_tau, dim, states, seed, source })
    }

    pub fn n_fine(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta_tau(&self) -> f64 {
        self.delta_tau
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> PathSource {
        self.source
    }

    #[inline]
    pub fn state(&self, l: usize) -> &[f64] {
        &self.states[l * self.dim..(l + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn time(&self, l: usize) -> f64 {
        l as f64 * self.delta_tau
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.n_fine())
    }

    pub fn same_grid(&self, other: &ObservationPath) -> bool {
        self.n_fine() == other.n_fine() && self.delta_tau == other.delta_tau
    }

    fn check_window(&self, from: usize, to: usize) -> Result<()> {
        if from >= to || to > self.n_fine() {
            return Err(Error::Index(format!(
                "window [{from}, {to}] invalid for a path with {} steps",
                self.n_fine()
            )));
        }
        Ok(())
    }
}

/// Slow and fast components of a two-scale simulation on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleBundle {
    pub x_path: ObservationPath,
    pub p_path: ObservationPath,
}

/// Initial state for the reference simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialCondition {
    /// `X₀ ~ N(0, C)`.
    #[default]
    Stationary,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub initial: InitialCondition,
    /// Switching this off integrates the deterministic ODE `dX = A X dt`.
    pub diffusion: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { initial: InitialCondition::Stationary, diffusion: true }
    }
}

/// Number of grid steps covering `[0, final_time]`; the grid must divide the
/// interval exactly.
pub fn grid_steps(final_time: f64, delta_tau: f64) -> Result<usize> {
    if !(final_time > 0.0 && delta_tau > 0.0) {
        return Err(Error::Config(format!(
            "need positive horizon and step, got T={final_time}, dtau={delta_tau}"
        )));
    }
    let n = (final_time / delta_tau).round();
    if n < 1.0 || (n * delta_tau - final_time).abs() > 1e-9 * final_time {
        return Err(Error::Config(format!(
            "step {delta_tau} does not divide the horizon {final_time}"
        )));
    }
    Ok(n as usize)
}

fn check_stability(drift: &DMatrix<f64>, delta_tau: f64) -> Result<()> {
    let stiff = delta_tau * linalg::max_abs_real_eigenvalue(drift);
    if stiff > STABILITY_MARGIN * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "dtau * max|Re λ(A)| = {stiff:.3e} violates the stability margin {STABILITY_MARGIN}"
        )));
    }
    Ok(())
}

fn draw_gaussian(cov: &DMatrix<f64>, seed: u64, tag: StreamTag) -> Result<Vec<f64>> {
    let d = cov.nrows();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
    let mut rng = noise_stream(seed, tag);
    let mut xi = vec![0.0; d];
    fill_standard_normal(&mut rng, &mut xi);
    let mut out = vec![0.0; d];
    mat_vec(&chol.l(), &xi, &mut out);
    Ok(out)
}

/// Euler-Maruyama path of `dX = A X dt + γ^{1/2} dW` with `X₀ ~ N(0, C)`.
pub fn simulate_reference(
    model: &LinearModel,
    final_time: f64,
    delta_tau: f64,
    seed: u64,
) -> Result<ObservationPath> {
    simulate_reference_with(model, final_time, delta_tau, seed, &SimulationOptions::default())
}

pub fn simulate_reference_with(
    model: &LinearModel,
    final_time: f64,
    delta_tau: f64,
    seed: u64,
    options: &SimulationOptions,
) -> Result<ObservationPath> {
    let n = grid_steps(final_time, delta_tau)?;
    let a = model.drift();
    check_stability(a, delta_tau)?;
    let d = model.dim();
    let x0 = match &options.initial {
        InitialCondition::Stationary => {
            draw_gaussian(&stationary_covariance(model)?, seed, StreamTag::InitialState)?
        }
        InitialCondition::Fixed(x) => {
            if x.len() != d {
                return Err(Error::Shape(format!("initial state has length {}, expected {d}", x.len())));
            }
            x.clone()
        }
    };
    let mut states = Vec::with_capacity((n + 1) * d);
    states.extend_from_slice(&x0);
    let mut rng = noise_stream(seed, StreamTag::Brownian);
    let noise_scale = (model.gamma() * delta_tau).sqrt();
    let mut x = x0;
    let mut ax = vec![0.0; d];
    let mut xi = vec![0.0; d];
    for _ in 0..n {
        mat_vec(a, &x, &mut ax);
        if options.diffusion {
            fill_standard_normal(&mut rng, &mut xi);
        }
        for i in 0..d {
            x[i] += delta_tau * ax[i] + noise_scale * xi[i];
        }
        states.extend_from_slice(&x);
    }
    ObservationPath::from_states(delta_tau, d, states, seed, PathSource::Reference)
}

/// Joint Euler-Maruyama path of the two-scale system
///
/// ```text
/// dX = A X dt + γ^{1/2} ε⁻¹ M P dt
/// dP = −ε⁻¹ M P dt + dW
/// ```
///
/// with `P₀ ~ N(0, ε(M + Mᵀ)⁻¹)`. When `shared_noise` holds a reference
/// seed, `W` and `X₀` are taken from that seed's streams, so the path is
/// coupled to `simulate_reference(.., shared_seed)`.
pub fn simulate_two_scale(
    model: &TwoScaleModel,
    final_time: f64,
    delta_tau: f64,
    seed: u64,
    shared_noise: Option<u64>,
) -> Result<TwoScaleBundle> {
    let eps = model.epsilon();
    if delta_tau > eps / 10.0 * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "dtau = {delta_tau} does not resolve the fast scale (need dtau <= eps/10 = {})",
            eps / 10.0
        )));
    }
    let n = grid_steps(final_time, delta_tau)?;
    let base = model.base();
    let a = base.drift();
    let m = model.coupling();
    check_stability(a, delta_tau)?;
    check_stability(&(m / eps), delta_tau)?;
    let d = base.dim();
    let noise_seed = shared_noise.unwrap_or(seed);
    let x0 = draw_gaussian(&stationary_covariance(base)?, noise_seed, StreamTag::InitialState)?;
    let p0 = draw_gaussian(&model.fast_stationary_covariance(), seed, StreamTag::FastInitialState)?;

    let mut xs = Vec::with_capacity((n + 1) * d);
    let mut ps = Vec::with_capacity((n + 1) * d);
    xs.extend_from_slice(&x0);
    ps.extend_from_slice(&p0);
    let mut rng = noise_stream(noise_seed, StreamTag::Brownian);
    let coupling = base.gamma().sqrt() / eps;
    let sqrt_dt = delta_tau.sqrt();
    let (mut x, mut p) = (x0, p0);
    let (mut ax, mut mp, mut xi) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for _ in 0..n {
        mat_vec(a, &x, &mut ax);
        mat_vec(m, &p, &mut mp);
        fill_standard_normal(&mut rng, &mut xi);
        for i in 0..d {
            x[i] += delta_tau * (ax[i] + coupling * mp[i]);
            p[i] += -delta_tau / eps * mp[i] + sqrt_dt * xi[i];
        }
        xs.extend_from_slice(&x);
        ps.extend_from_slice(&p);
    }
    Ok(TwoScaleBundle {
        x_path: ObservationPath::from_states(delta_tau, d, xs, seed, PathSource::TwoScale { epsilon: eps })?,
        p_path: ObservationPath::from_states(
            delta_tau,
            d,
            ps,
            seed,
            PathSource::FastProcess { epsilon: eps },
        )?,
    })
}

/// Low-pass filtered observations `dZ = δ⁻¹(X − Z) dt + δ_noise √2 dV`,
/// `Z₀ = X₀`, on the grid of `x_path`.
pub fn simulate_filtered(
    x_path: &ObservationPath,
    filter: &FilterConfig,
    seed: u64,
) -> Result<ObservationPath> {
    let dt = x_path.delta_tau();
    let ratio = dt / filter.delta;
    if ratio > FILTER_STIFFNESS_LIMIT {
        return Err(Error::Config(format!(
            "dtau/delta = {ratio:.3} exceeds the filter stiffness limit {FILTER_STIFFNESS_LIMIT}"
        )));
    }
    let d = x_path.dim();
    let n = x_path.n_fine();
    let mut zs = Vec::with_capacity((n + 1) * d);
    zs.extend_from_slice(x_path.state(0));
    let mut z = x_path.state(0).to_vec();
    let mut rng = noise_stream(seed, StreamTag::FilterNoise);
    let noise_scale = filter.noise_factor() * (2.0 * dt).sqrt();
    let mut eta = vec![0.0; d];
    for l in 0..n {
        let x = x_path.state(l);
        if filter.noise {
            fill_standard_normal(&mut rng, &mut eta);
        }
        for i in 0..d {
            z[i] += ratio * (x[i] - z[i]) + noise_scale * eta[i];
        }
        zs.extend_from_slice(&z);
    }
    ObservationPath::from_states(
        dt,
        d,
        zs,
        seed,
        PathSource::Filtered { delta: filter.delta, noise: filter.noise },
    )
}

/// `X_{τ_to} − X_{τ_from}`.
pub fn increment(path: &ObservationPath, from: usize, to: usize) -> Result<DVector<f64>> {
    path.check_window(from, to)?;
    let (a, b) = (path.state(from), path.state(to));
    Ok(DVector::from_iterator(path.dim(), b.iter().zip(a).map(|(y, x)| y - x)))
}

/// First- and second-order increments over a window of fine steps.
#[derive(Debug, Clone, PartialEq)]
pub struct IteratedIncrement {
    /// `X_{s,t}`.
    pub first: DVector<f64>,
    /// `𝕏_{s,t} = Σ_l (X_l − X_s) ⊗ (X_{l+1} − X_l)`.
    pub second: DMatrix<f64>,
    /// Fine-grid indices `(s, t)`.
    pub window: (usize, usize),
}

/// Left-point second-order iterated integral over fine indices `[from, to]`.
pub fn iterated_integral(path: &ObservationPath, from: usize, to: usize) -> Result<IteratedIncrement> {
    path.check_window(from, to)?;
    let d = path.dim();
    let origin = path.state(from);
    let mut second = vec![0.0; d * d];
    for l in from..to {
        let (x, y) = (path.state(l), path.state(l + 1));
        for i in 0..d {
            let ai = x[i] - origin[i];
            if ai == 0.0 {
                continue;
            }
            for j in 0..d {
                second[i * d + j] += ai * (y[j] - x[j]);
            }
        }
    }
    Ok(IteratedIncrement {
        first: increment(path, from, to)?,
        second: DMatrix::from_row_slice(d, d, &second),
        window: (from, to),
    })
}

/// The pieces of the exact discrete identity
/// `𝕏 = ½ X⊗X − ½ Σ ΔX_l⊗ΔX_l + ½ Σ [X_{s,τ_l}, ΔX_l]` with the commutator
/// `[a, b] = a⊗b − b⊗a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDecomposition {
    pub increment: IteratedIncrement,
    /// `Σ ΔX_l ⊗ ΔX_l`.
    pub quadratic_variation: DMatrix<f64>,
    /// `Σ [X_{s,τ_l}, ΔX_l]`.
    pub commutator: DMatrix<f64>,
}

impl AreaDecomposition {
    /// Right-hand side of the identity, assembled from the increment,
    /// quadratic variation and commutator sum.
    pub fn reconstructed_second(&self) -> DMatrix<f64> {
        let f = &self.increment.first;
        (f * f.transpose()) * 0.5 - &self.quadratic_variation * 0.5 + &self.commutator * 0.5
    }
}

pub fn area_decomposition(path: &ObservationPath, from: usize, to: usize) -> Result<AreaDecomposition> {
    let increment = iterated_integral(path, from, to)?;
    let d = path.dim();
    let origin = path.state(from);
    let mut qv = DMatrix::<f64>::zeros(d, d);
    let mut comm = DMatrix::<f64>::zeros(d, d);
    for l in from..to {
        let (x, y) = (path.state(l), path.state(l + 1));
        for i in 0..d {
            for j in 0..d {
                let (di, dj) = (y[i] - x[i], y[j] - x[j]);
                qv[(i, j)] += di * dj;
                comm[(i, j)] += (x[i] - origin[i]) * dj - di * (x[j] - origin[j]);
            }
        }
    }
    Ok(AreaDecomposition { increment, quadratic_variation: qv, commutator: comm })
}

/// Chen's relation for adjacent windows `[s, u]` and `[u, t]`.
pub fn chen_combine(a: &IteratedIncrement, b: &IteratedIncrement) -> Result<IteratedIncrement> {
    if a.window.1 != b.window.0 {
        return Err(Error::Index(format!(
            "windows {:?} and {:?} are not adjacent",
            a.window, b.window
        )));
    }
    if a.first.len() != b.first.len() {
        return Err(Error::Shape("increments of different dimensions".into()));
    }
    Ok(IteratedIncrement {
        first: &a.first + &b.first,
        second: &a.second + &b.second + &a.first * b.first.transpose(),
        window: (a.window.0, b.window.1),
    })
}

/// Itô sum `Σ_l (A X_l)ᵀ (X_{l+1} − X_l)` over fine indices `[from, to]`.
pub fn j_integral(path: &ObservationPath, drift: &DMatrix<f64>, from: usize, to: usize) -> Result<f64> {
    path.check_window(from, to)?;
    if drift.shape() != (path.dim(), path.dim()) {
        return Err(Error::Shape(format!(
            "drift {:?} does not match path dimension {}",
            drift.shape(),
            path.dim()
        )));
    }
    Ok(j_sum(path, drift, path, from, to))
}

/// `Σ_l (A G_l)ᵀ (X_{l+1} − X_l)` where `G` is the gain path (equal to `X`
/// for the plain EnKBF, the filtered `Z` otherwise). Unchecked.
pub(crate) fn j_sum(
    gain_path: &ObservationPath,
    drift: &DMatrix<f64>,
    data: &ObservationPath,
    from: usize,
    to: usize,
) -> f64 {
    let d = data.dim();
    let mut ag = vec![0.0; d];
    let mut total = 0.0;
    for l in from..to {
        mat_vec(drift, gain_path.state(l), &mut ag);
        let (x, y) = (data.state(l), data.state(l + 1));
        for i in 0..d {
            total += ag[i] * (y[i] - x[i]);
        }
    }
    total
}

/// Writes `t,<name>_1,..,<name>_d,...` with one row per fine step.
pub fn write_paths_csv<W: Write>(out: &mut W, columns: &[(&str, &ObservationPath)]) -> Result<()> {
    let Some((_, first)) = columns.first() else {
        return Err(Error::Config("no paths to write".into()));
    };
    if columns.iter().any(|(_, p)| !p.same_grid(first)) {
        return Err(Error::Shape("paths are not on a common grid".into()));
    }
    let mut header = String::from("t");
    for (name, p) in columns {
        for i in 1..=p.dim() {
            header.push_str(&format!(",{name}_{i}"));
        }
    }
    writeln!(out, "{header}")?;
    for l in 0..=first.n_fine() {
        let mut line = format!("{}", first.time(l));
        for (_, p) in columns {
            for v in p.state(l) {
                line.push_str(&format!(",{v}"));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
