//! Frequentist theory for the mean-field filter, recovery of the
//! multiscale correction `M` from iterated integrals, and the subsampling
//! diagnostic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, MatrixNorm};
use crate::paths::{iterated_integral, ObservationPath};

/// Agreement required between the integrated and closed-form moments.
const CLOSED_FORM_TOL: f64 = 1e-6;

/// Predicted moments of `μ_t` on an output grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequentistMoments {
    pub times: Vec<f64>,
    /// Frequentist mean `m_t`.
    pub m: Vec<f64>,
    /// Frequentist variance `p_t`.
    pub p: Vec<f64>,
    /// Posterior variance `σ_t`.
    pub sigma: Vec<f64>,
    pub c: f64,
}

/// `σ_t = σ₀ / (1 + c σ₀ t)`.
pub fn sigma_closed_form(sigma0: f64, c: f64, t: f64) -> f64 {
    sigma0 / (1.0 + c * sigma0 * t)
}

/// `m_t = 1 − (1 − m₀) σ_t/σ₀`.
pub fn mean_closed_form(sigma0: f64, m0: f64, c: f64, t: f64) -> f64 {
    if sigma0 == 0.0 {
        return m0;
    }
    1.0 - (1.0 - m0) * sigma_closed_form(sigma0, c, t) / sigma0
}

/// `p_t = c t σ_t²`.
pub fn variance_closed_form(sigma0: f64, c: f64, t: f64) -> f64 {
    let s = sigma_closed_form(sigma0, c, t);
    c * t * s * s
}

fn check_inputs(sigma0: f64, c: f64, final_time: f64) -> Result<()> {
    if !(sigma0 >= 0.0 && sigma0.is_finite()) {
        return Err(Error::Config(format!("sigma_0 must be non-negative, got {sigma0}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    if !(final_time >= 0.0 && final_time.is_finite()) {
        return Err(Error::Config(format!("horizon must be non-negative, got {final_time}")));
    }
    Ok(())
}

fn output_grid(final_time: f64, dt_grid: f64) -> Result<Vec<f64>> {
    if !(dt_grid > 0.0) {
        return Err(Error::Config(format!("grid step must be positive, got {dt_grid}")));
    }
    let n = (final_time / dt_grid).round() as usize;
    if (n as f64 * dt_grid - final_time).abs() > 1e-9 * final_time.max(1.0) {
        return Err(Error::Config(format!("grid step {dt_grid} does not divide {final_time}")));
    }
    Ok((0..=n).map(|k| k as f64 * dt_grid).collect())
}

/// Classical RK4 for `y' = f(t, y)` on `grid`, with `substeps` steps per
/// grid interval. Returns `y` at the grid points.
fn rk4<const N: usize>(
    grid: &[f64],
    y0: [f64; N],
    substeps: usize,
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
) -> Vec<[f64; N]> {
    let axpy = |y: &[f64; N], k: &[f64; N], h: f64| {
        let mut out = *y;
        for i in 0..N {
            out[i] += h * k[i];
        }
        out
    };
    let mut out = Vec::with_capacity(grid.len());
    let mut y = y0;
    out.push(y);
    for w in grid.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            let t = w[0] + s as f64 * h;
            let k1 = f(t, &y);
            let k2 = f(t + 0.5 * h, &axpy(&y, &k1, 0.5 * h));
            let k3 = f(t + 0.5 * h, &axpy(&y, &k2, 0.5 * h));
            let k4 = f(t + h, &axpy(&y, &k3, h));
            for i in 0..N {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out.push(y);
    }
    out
}

/// Integrates `dm/dt = c σ_t (1 − m)` and `dp/dt = c σ_t (σ_t − 2p)` with
/// `p₀ = 0`, at ten RK4 steps per output interval.
pub fn frequentist_moments(
    sigma0: f64,
    m0: f64,
    c: f64,
    final_time: f64,
    dt_grid: f64,
) -> Result<FrequentistMoments> {
    check_inputs(sigma0, c, final_time)?;
    let times = output_grid(final_time, dt_grid)?;
    let sol = rk4(&times, [m0, 0.0], 10, |t, y| {
        let s = sigma_closed_form(sigma0, c, t);
        [c * s * (1.0 - y[0]), c * s * (s - 2.0 * y[1])]
    });
    let moments = FrequentistMoments {
        sigma: times.iter().map(|&t| sigma_closed_form(sigma0, c, t)).collect(),
        m: sol.iter().map(|y| y[0]).collect(),
        p: sol.iter().map(|y| y[1]).collect(),
        times,
        c,
    };
    for (k, &t) in moments.times.iter().enumerate() {
        let dm = (moments.m[k] - mean_closed_form(sigma0, m0, c, t)).abs();
        let dp = (moments.p[k] - variance_closed_form(sigma0, c, t)).abs();
        if dm > CLOSED_FORM_TOL || dp > CLOSED_FORM_TOL {
            return Err(Error::Numeric(format!(
                "integrated moments drift from the closed form at t={t} ({dm:.2e}, {dp:.2e})"
            )));
        }
    }
    Ok(moments)
}

/// `dm/dt = σ_t [c (1 − m) + b]`, integrated like [`frequentist_moments`].
/// Returns `(times, m)`.
pub fn biased_frequentist_mean(
    sigma0: f64,
    m0: f64,
    c: f64,
    bias_rate: f64,
    final_time: f64,
    dt_grid: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_inputs(sigma0, c, final_time)?;
    let times = output_grid(final_time, dt_grid)?;
    let sol = rk4(&times, [m0], 10, |t, y| {
        [sigma_closed_form(sigma0, c, t) * (c * (1.0 - y[0]) + bias_rate)]
    });
    Ok((times, sol.into_iter().map(|y| y[0]).collect()))
}

/// `m_t = m* + (m₀ − m*) σ_t/σ₀` with `m* = 1 + b/c`.
pub fn biased_mean_closed_form(sigma0: f64, m0: f64, c: f64, bias_rate: f64, t: f64) -> f64 {
    let fixed = 1.0 + bias_rate / c;
    if sigma0 == 0.0 {
        return m0;
    }
    fixed + (m0 - fixed) * sigma_closed_form(sigma0, c, t) / sigma0
}

/// `(γ/2) Aᵀ:M`, the drift per unit time that the uncorrected high-frequency
/// scheme picks up on multiscale data.
pub fn bias_term(drift: &DMatrix<f64>, m: &DMatrix<f64>, gamma: f64) -> Result<f64> {
    Ok(0.5 * gamma * frobenius(&drift.transpose(), m)?)
}

/// Estimate of `M` with per-entry standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MEstimate {
    pub matrix: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub n_windows: usize,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MEstimateDoc {
    matrix: Vec<Vec<f64>>,
    stderr: Vec<Vec<f64>>,
    n_windows: usize,
    n_paths: usize,
}

impl MEstimate {
    pub fn to_json(&self) -> Result<String> {
        let doc = MEstimateDoc {
            matrix: crate::models::matrix_to_rows(&self.matrix),
            stderr: crate::models::matrix_to_rows(&self.stderr),
            n_windows: self.n_windows,
            n_paths: self.n_paths,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Minimum number of outer windows per path for [`estimate_m`].
pub const MIN_M_WINDOWS: usize = 10;

/// Accumulates `(2/(Δt γ)) 𝕏_{t_n, t_{n+1}}` over consecutive windows of
/// one or more paths. Standard errors treat windows as independent samples.
#[derive(Debug, Clone)]
pub struct MAccumulator {
    delta_t: f64,
    gamma: f64,
    sum: DMatrix<f64>,
    sum_sq: DMatrix<f64>,
    n_windows: usize,
    n_paths: usize,
}

impl MAccumulator {
    pub fn new(dim: usize, delta_t: f64, gamma: f64) -> Result<Self> {
        if !(delta_t > 0.0 && gamma > 0.0) {
            return Err(Error::Config(format!("need positive dt and gamma, got {delta_t}, {gamma}")));
        }
        Ok(Self {
            delta_t,
            gamma,
            sum: DMatrix::zeros(dim, dim),
            sum_sq: DMatrix::zeros(dim, dim),
            n_windows: 0,
            n_paths: 0,
        })
    }

    pub fn add_path(&mut self, path: &ObservationPath) -> Result<()> {
        if path.dim() != self.sum.nrows() {
            return Err(Error::Shape(format!(
                "path dimension {} does not match {}",
                path.dim(),
                self.sum.nrows()
            )));
        }
        let l = window_steps(path, self.delta_t)?;
        let n = path.n_fine() / l;
        if n < MIN_M_WINDOWS {
            return Err(Error::Config(format!(
                "path holds {n} windows of {}, need at least {MIN_M_WINDOWS}",
                self.delta_t
            )));
        }
        let scale = 2.0 / (self.delta_t * self.gamma);
        for k in 0..n {
            let sample = iterated_integral(path, k * l, (k + 1) * l)?.second * scale;
            self.sum_sq += sample.component_mul(&sample);
            self.sum += sample;
        }
        self.n_windows += n;
        self.n_paths += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<MEstimate> {
        let n = self.n_windows;
        if n < 2 {
            return Err(Error::Config("no windows accumulated".into()));
        }
        let nf = n as f64;
        let mean = &self.sum / nf;
        let stderr = DMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| {
            let var = (self.sum_sq[(i, j)] - nf * mean[(i, j)] * mean[(i, j)]) / (nf - 1.0);
            (var.max(0.0) / nf).sqrt()
        });
        Ok(MEstimate { matrix: mean, stderr, n_windows: n, n_paths: self.n_paths })
    }
}

/// `M_est = (2/(Δt γ)) · mean_n 𝕏_{t_n, t_{n+1}}` along a single path.
pub fn estimate_m(path: &ObservationPath, delta_t: f64, gamma: f64) -> Result<MEstimate> {
    let mut acc = MAccumulator::new(path.dim(), delta_t, gamma)?;
    acc.add_path(path)?;
    acc.finish()
}

fn window_steps(path: &ObservationPath, delta_t: f64) -> Result<usize> {
    let l = (delta_t / path.delta_tau()).round();
    if l < 1.0 || (l * path.delta_tau() - delta_t).abs() > 1e-9 * delta_t {
        return Err(Error::Config(format!(
            "window {delta_t} is not a multiple of the fine step {}",
            path.delta_tau()
        )));
    }
    Ok(l as usize)
}

/// `h(Δt) = Δt⁻² ‖E[X_{t_n,t_{n+1}} ⊗ X_{t_{n+1},t_{n+2}}]‖` per step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleDiagnostic {
    pub delta_t: Vec<f64>,
    pub h: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Consecutive window pairs used per step size, summed over paths.
    pub n_windows: Vec<usize>,
    pub norm: MatrixNorm,
}

impl SubsampleDiagnostic {
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "delta_t,h,stderr")?;
        for k in 0..self.h.len() {
            writeln!(out, "{},{},{}", self.delta_t[k], self.h[k], self.stderr[k])?;
        }
        Ok(())
    }
}

/// Minimum number of outer windows per path for [`subsample_diagnostic`].
pub const MIN_DIAGNOSTIC_WINDOWS: usize = 20;

/// Averages the product of consecutive increments over all overlapping
/// window pairs of every path. The standard error is a delta-method error;
/// with several paths it is computed from the per-path means, with a single
/// path from the window pairs.
pub fn subsample_diagnostic(
    paths: &[&ObservationPath],
    delta_ts: &[f64],
    norm: MatrixNorm,
) -> Result<SubsampleDiagnostic> {
    let Some(first) = paths.first() else {
        return Err(Error::Config("no paths supplied".into()));
    };
    if paths.iter().any(|p| !p.same_grid(first) || p.dim() != first.dim()) {
        return Err(Error::Shape("paths are not on a common grid".into()));
    }
    if delta_ts.is_empty() {
        return Err(Error::Config("no step sizes supplied".into()));
    }
    let d = first.dim();
    let mut out = SubsampleDiagnostic {
        delta_t: delta_ts.to_vec(),
        h: Vec::new(),
        stderr: Vec::new(),
        n_windows: Vec::new(),
        norm,
    };
    for &dt in delta_ts {
        let l = window_steps(first, dt)?;
        let n = first.n_fine() / l;
        if n < MIN_DIAGNOSTIC_WINDOWS {
            return Err(Error::Config(format!(
                "step {dt} leaves {n} windows per path, need at least {MIN_DIAGNOSTIC_WINDOWS}"
            )));
        }
        let pairs = n - 1;
        // per path, the mean outer product and the flattened per-pair samples
        let mut path_means = Vec::with_capacity(paths.len());
        let mut samples: Vec<DMatrix<f64>> = Vec::new();
        for path in paths {
            let incs: Vec<Vec<f64>> = (0..n)
                .map(|k| {
                    let (a, b) = (path.state(k * l), path.state((k + 1) * l));
                    b.iter().zip(a).map(|(y, x)| y - x).collect()
                })
                .collect();
            let mut mean = DMatrix::<f64>::zeros(d, d);
            for k in 0..pairs {
                let g = DMatrix::from_fn(d, d, |i, j| incs[k][i] * incs[k + 1][j]);
                mean += &g;
                if paths.len() == 1 {
                    samples.push(g);
                }
            }
            path_means.push(mean / pairs as f64);
        }
        let grand = path_means.iter().fold(DMatrix::<f64>::zeros(d, d), |acc, m| acc + m)
            / path_means.len() as f64;
        let grad = norm.gradient(&grand);
        let projected: Vec<f64> = if paths.len() > 1 {
            path_means.iter().map(|m| grad.dot(m)).collect()
        } else {
            samples.iter().map(|m| grad.dot(m)).collect()
        };
        let k = projected.len() as f64;
        let mean_proj = projected.iter().sum::<f64>() / k;
        let var = projected.iter().map(|v| (v - mean_proj).powi(2)).sum::<f64>() / (k - 1.0);
        let scale = 1.0 / (dt * dt);
        out.h.push(norm.apply(&grand) * scale);
        out.stderr.push((var / k).sqrt() * scale);
        out.n_windows.push(pairs * paths.len());
    }
    Ok(out)
}
