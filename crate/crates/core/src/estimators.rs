//! Discrete-time ensemble Kalman-Bucy filters and stochastic gradient
//! descent for the scalar drift parameter `θ` in `dX = θ A X dt + γ^{1/2} dW`.
//!
//! The mean-field filters propagate `(μ, σ)` exactly; the particle version
//! in [`run_ensemble`] evolves an explicit ensemble with the same update.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, frobenius, mat_vec};
use crate::models::LinearModel;
use crate::paths::{j_sum, ObservationPath};
use crate::rng::{fill_standard_normal, noise_stream, StreamTag};

/// Gaussian posterior `N(μ, σ)` over `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianPosterior {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("invalid posterior N({mu}, {sigma})")));
        }
        Ok(Self { mu, sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Increments sampled at the outer step only.
    Subsampled,
    /// Inner Itô sum over the fine grid.
    HighFreq,
    /// Inner Itô sum with the `−(Δt/2) σ Aᵀ:M` drift.
    HighFreqCorrected,
    /// Midpoint gain with the `−(Δt/2) σ tr(A)` drift.
    StratMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Denominator `γ + Δt σ (Ax)ᵀ(Ax)`.
    #[default]
    Exact,
    /// Denominator `γ + Δt σ (AᵀA):C`.
    Approx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub variant: Scheme,
    pub delta_t: f64,
    /// Fine steps per outer step.
    pub inner_steps: usize,
    pub correction: Option<DMatrix<f64>>,
    pub gain_mode: GainMode,
    /// Stationary covariance `C`, required by [`GainMode::Approx`].
    pub stationary_cov: Option<DMatrix<f64>>,
}

impl SchemeConfig {
    /// Outer step `delta_t` on a fine grid of width `delta_tau`; the ratio
    /// must be a whole number.
    pub fn new(variant: Scheme, delta_t: f64, delta_tau: f64) -> Result<Self> {
        if !(delta_t > 0.0 && delta_tau > 0.0 && delta_t.is_finite()) {
            return Err(Error::Config(format!(
                "steps must be positive, got dt={delta_t}, dtau={delta_tau}"
            )));
        }
        let ratio = (delta_t / delta_tau).round();
        if ratio < 1.0 || (ratio * delta_tau - delta_t).abs() > 1e-9 * delta_t {
            return Err(Error::Config(format!(
                "outer step {delta_t} is not a multiple of the fine step {delta_tau}"
            )));
        }
        Ok(Self {
            variant,
            delta_t,
            inner_steps: ratio as usize,
            correction: None,
            gain_mode: GainMode::Exact,
            stationary_cov: None,
        })
    }

    pub fn with_correction(mut self, m: DMatrix<f64>) -> Self {
        self.correction = Some(m);
        self
    }

    pub fn with_approx_gain(mut self, cov: DMatrix<f64>) -> Self {
        self.gain_mode = GainMode::Approx;
        self.stationary_cov = Some(cov);
        self
    }

    /// Number of outer steps covering the path.
    pub fn outer_steps(&self, path: &ObservationPath) -> Result<usize> {
        let l = self.inner_steps;
        let dtau = path.delta_tau();
        if (l as f64 * dtau - self.delta_t).abs() > 1e-9 * self.delta_t {
            return Err(Error::Config(format!(
                "{l} fine steps of {dtau} do not make the outer step {}",
                self.delta_t
            )));
        }
        if !path.n_fine().is_multiple_of(l) {
            return Err(Error::Config(format!(
                "path of {} fine steps is not a whole number of outer steps of {l}",
                path.n_fine()
            )));
        }
        Ok(path.n_fine() / l)
    }
}

/// Fine-grid window `[from, to]` of a path.
#[derive(Debug, Clone, Copy)]
pub struct PathWindow<'a> {
    pub path: &'a ObservationPath,
    pub from: usize,
    pub to: usize,
}

impl<'a> PathWindow<'a> {
    pub fn new(path: &'a ObservationPath, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > path.n_fine() {
            return Err(Error::Index(format!(
                "window [{from}, {to}] invalid for a path with {} steps",
                path.n_fine()
            )));
        }
        Ok(Self { path, from, to })
    }

    pub fn len(&self) -> usize {
        self.to - self.from
    }

    pub fn is_empty(&self) -> bool {
        self.from == self.to
    }
}

/// Posterior moments at the outer times `t_n = nΔt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTrace {
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl EstimatorTrace {
    fn start(capacity: usize, prior: GaussianPosterior) -> Self {
        let mut trace = Self {
            times: Vec::with_capacity(capacity),
            mu: Vec::with_capacity(capacity),
            sigma: Vec::with_capacity(capacity),
        };
        trace.push(0.0, prior);
        trace
    }

    fn push(&mut self, t: f64, post: GaussianPosterior) {
        self.times.push(t);
        self.mu.push(post.mu);
        self.sigma.push(post.sigma);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn terminal(&self) -> GaussianPosterior {
        let n = self.len() - 1;
        GaussianPosterior { mu: self.mu[n], sigma: self.sigma[n] }
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,mu,sigma")?;
        for i in 0..self.len() {
            writeln!(out, "{},{},{}", self.times[i], self.mu[i], self.sigma[i])?;
        }
        Ok(())
    }
}

/// Kalman gain `K = σ (Ax)ᵀ / (γ + Δt σ q)` with `q = (Ax)ᵀ(Ax)` or
/// `q = (AᵀA):C`.
pub fn kalman_gain(
    sigma: f64,
    x: &[f64],
    model: &LinearModel,
    delta_t: f64,
    mode: GainMode,
    cov: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("variance must be non-negative, got {sigma}")));
    }
    if x.len() != model.dim() {
        return Err(Error::Shape(format!("state of length {} for dimension {}", x.len(), model.dim())));
    }
    let mut ax = vec![0.0; x.len()];
    mat_vec(model.drift(), x, &mut ax);
    let q = match mode {
        GainMode::Exact => dot(&ax, &ax),
        GainMode::Approx => {
            let c = cov.ok_or_else(|| Error::Config("approximate gain needs the stationary covariance".into()))?;
            approx_information(model.drift(), c)?
        }
    };
    let den = model.gamma() + delta_t * sigma * q;
    Ok(DVector::from_iterator(ax.len(), ax.iter().map(|v| sigma * v / den)))
}

fn approx_information(a: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    frobenius(&(a.transpose() * a), cov)
}

enum DataTerm<'b> {
    /// `K·(x_{n+1} − x_n)`.
    Increment(&'b [f64], &'b [f64]),
    /// `(σ/γ)·J` for a precomputed inner sum.
    InnerSum(f64),
}

/// Quantities of one outer step, evaluated at a given variance.
#[derive(Debug, Clone, Copy)]
struct StepTerms {
    data: f64,
    /// `K·(A x)` with `x` the decay state.
    decay: f64,
    drift: f64,
    /// `K = gain_scale · y`.
    gain_scale: f64,
}

impl StepTerms {
    fn apply(&self, post: GaussianPosterior, dt: f64) -> GaussianPosterior {
        let contraction = 1.0 - 0.5 * dt * self.decay;
        GaussianPosterior {
            mu: post.mu + self.data + self.drift - self.decay * post.mu * dt,
            sigma: post.sigma * contraction * contraction,
        }
    }
}

struct Stepper<'a> {
    a: &'a DMatrix<f64>,
    gamma: f64,
    dt: f64,
    variant: Scheme,
    inner_steps: usize,
    approx: Option<f64>,
    /// Drift per unit variance.
    drift_rate: f64,
    y: Vec<f64>,
    w: Vec<f64>,
    mid: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a LinearModel, cfg: &SchemeConfig) -> Result<Self> {
        let a = model.drift();
        let d = model.dim();
        let approx = match cfg.gain_mode {
            GainMode::Exact => None,
            GainMode::Approx => {
                let c = cfg.stationary_cov.as_ref().ok_or_else(|| {
                    Error::Config("approximate gain needs the stationary covariance".into())
                })?;
                Some(approx_information(a, c)?)
            }
        };
        let drift_rate = match cfg.variant {
            Scheme::HighFreqCorrected => {
                let m = cfg.correction.as_ref().ok_or_else(|| {
                    Error::Config("the corrected scheme needs a correction matrix".into())
                })?;
                -0.5 * cfg.delta_t * frobenius(&a.transpose(), m)?
            }
            Scheme::StratMidpoint => -0.5 * cfg.delta_t * a.trace(),
            _ => 0.0,
        };
        if !(cfg.delta_t > 0.0) || cfg.inner_steps == 0 {
            return Err(Error::Config("invalid scheme configuration".into()));
        }
        Ok(Self {
            a,
            gamma: model.gamma(),
            dt: cfg.delta_t,
            variant: cfg.variant,
            inner_steps: cfg.inner_steps,
            approx,
            drift_rate,
            y: vec![0.0; d],
            w: vec![0.0; d],
            mid: vec![0.0; d],
        })
    }

    /// Assumes `self.y = A g` (gain state) and `self.w = A x` (decay state).
    fn terms(&self, sigma: f64, data: DataTerm<'_>) -> Result<StepTerms> {
        let yw = dot(&self.y, &self.w);
        let den = self.gamma + self.dt * sigma * self.approx.unwrap_or(yw);
        if !(den > 0.0) {
            return Err(Error::Numeric(format!("non-positive gain denominator {den}")));
        }
        let gain_scale = sigma / den;
        let data = match data {
            DataTerm::Increment(x0, x1) => {
                gain_scale * self.y.iter().zip(x1.iter().zip(x0)).map(|(y, (b, a))| y * (b - a)).sum::<f64>()
            }
            DataTerm::InnerSum(j) => sigma / self.gamma * j,
        };
        Ok(StepTerms { data, decay: gain_scale * yw, drift: self.drift_rate * sigma, gain_scale })
    }

    fn subsampled_terms(&mut self, sigma: f64, x0: &[f64], x1: &[f64]) -> Result<StepTerms> {
        mat_vec(self.a, x0, &mut self.y);
        mat_vec(self.a, x0, &mut self.w);
        self.terms(sigma, DataTerm::Increment(x0, x1))
    }

    fn midpoint_terms(&mut self, sigma: f64, x0: &[f64], x1: &[f64]) -> Result<StepTerms> {
        for i in 0..self.mid.len() {
            self.mid[i] = 0.5 * (x0[i] + x1[i]);
        }
        mat_vec(self.a, &self.mid, &mut self.y);
        mat_vec(self.a, &self.mid, &mut self.w);
        self.terms(sigma, DataTerm::Increment(x0, x1))
    }

    /// Inner-sum terms with gain built from `gain_path` and data from `data`.
    fn inner_sum_terms(
        &mut self,
        sigma: f64,
        gain_path: &ObservationPath,
        data: &ObservationPath,
        from: usize,
        to: usize,
    ) -> Result<StepTerms> {
        mat_vec(self.a, gain_path.state(from), &mut self.y);
        mat_vec(self.a, data.state(from), &mut self.w);
        let j = j_sum(gain_path, self.a, data, from, to);
        self.terms(sigma, DataTerm::InnerSum(j))
    }

    fn window_terms(&mut self, sigma: f64, path: &ObservationPath, from: usize, to: usize) -> Result<StepTerms> {
        match self.variant {
            Scheme::Subsampled => self.subsampled_terms(sigma, path.state(from), path.state(to)),
            Scheme::StratMidpoint => self.midpoint_terms(sigma, path.state(from), path.state(to)),
            Scheme::HighFreq | Scheme::HighFreqCorrected => self.inner_sum_terms(sigma, path, path, from, to),
        }
    }
}

fn check_post(post: GaussianPosterior) -> Result<()> {
    GaussianPosterior::new(post.mu, post.sigma).map(|_| ())
}

fn require_variant(cfg: &SchemeConfig, allowed: &[Scheme], op: &str) -> Result<()> {
    if !allowed.contains(&cfg.variant) {
        return Err(Error::Config(format!("{op} does not support the {:?} scheme", cfg.variant)));
    }
    Ok(())
}

fn check_window(window: &PathWindow<'_>, cfg: &SchemeConfig) -> Result<()> {
    PathWindow::new(window.path, window.from, window.to)?;
    if window.len() != cfg.inner_steps {
        return Err(Error::Config(format!(
            "window has {} fine steps, the scheme uses {}",
            window.len(),
            cfg.inner_steps
        )));
    }
    Ok(())
}

pub fn enkbf_step_subsampled(
    post: GaussianPosterior,
    x_n: &[f64],
    x_np1: &[f64],
    model: &LinearModel,
    cfg: &SchemeConfig,
) -> Result<GaussianPosterior> {
    require_variant(cfg, &[Scheme::Subsampled], "the subsampled step")?;
    check_post(post)?;
    if x_n.len() != model.dim() || x_np1.len() != model.dim() {
        return Err(Error::Shape("states do not match the model dimension".into()));
    }
    let mut stepper = Stepper::new(model, cfg)?;
    Ok(stepper.subsampled_terms(post.sigma, x_n, x_np1)?.apply(post, cfg.delta_t))
}

pub fn enkbf_step_highfreq(
    post: GaussianPosterior,
    window: PathWindow<'_>,
    model: &LinearModel,
    cfg: &SchemeConfig,
) -> Result<GaussianPosterior> {
    require_variant(cfg, &[Scheme::HighFreq, Scheme::HighFreqCorrected], "the high-frequency step")?;
    check_post(post)?;
    check_window(&window, cfg)?;
    let mut stepper = Stepper::new(model, cfg)?;
    let terms = stepper.inner_sum_terms(post.sigma, window.path, window.path, window.from, window.to)?;
    Ok(terms.apply(post, cfg.delta_t))
}

pub fn enkbf_step_strat(
    post: GaussianPosterior,
    window: PathWindow<'_>,
    model: &LinearModel,
    cfg: &SchemeConfig,
) -> Result<GaussianPosterior> {
    require_variant(cfg, &[Scheme::StratMidpoint], "the midpoint step")?;
    check_post(post)?;
    PathWindow::new(window.path, window.from, window.to)?;
    let mut stepper = Stepper::new(model, cfg)?;
    let terms = stepper.midpoint_terms(post.sigma, window.path.state(window.from), window.path.state(window.to))?;
    Ok(terms.apply(post, cfg.delta_t))
}

fn check_dim(path: &ObservationPath, model: &LinearModel) -> Result<()> {
    if path.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "path dimension {} does not match model dimension {}",
            path.dim(),
            model.dim()
        )));
    }
    Ok(())
}

/// Mean-field filter over the whole path.
pub fn run_estimator(
    path: &ObservationPath,
    cfg: &SchemeConfig,
    prior: GaussianPosterior,
    model: &LinearModel,
) -> Result<EstimatorTrace> {
    check_dim(path, model)?;
    check_post(prior)?;
    let n = cfg.outer_steps(path)?;
    let mut stepper = Stepper::new(model, cfg)?;
    let mut trace = EstimatorTrace::start(n + 1, prior);
    let mut post = prior;
    let l = stepper.inner_steps;
    for k in 0..n {
        post = stepper.window_terms(post.sigma, path, k * l, (k + 1) * l)?.apply(post, cfg.delta_t);
        trace.push((k + 1) as f64 * cfg.delta_t, post);
    }
    Ok(trace)
}

/// Filter driven by `dX` with the gain built from the filtered path `Z`.
pub fn run_filtered_estimator(
    x_path: &ObservationPath,
    z_path: &ObservationPath,
    cfg: &SchemeConfig,
    prior: GaussianPosterior,
    model: &LinearModel,
) -> Result<EstimatorTrace> {
    require_variant(cfg, &[Scheme::HighFreq], "the filtered estimator")?;
    if !x_path.same_grid(z_path) || x_path.dim() != z_path.dim() {
        return Err(Error::Config("observation and filtered paths are not aligned".into()));
    }
    check_dim(x_path, model)?;
    check_post(prior)?;
    let n = cfg.outer_steps(x_path)?;
    let mut stepper = Stepper::new(model, cfg)?;
    let mut trace = EstimatorTrace::start(n + 1, prior);
    let mut post = prior;
    let l = cfg.inner_steps;
    for k in 0..n {
        post = stepper
            .inner_sum_terms(post.sigma, z_path, x_path, k * l, (k + 1) * l)?
            .apply(post, cfg.delta_t);
        trace.push((k + 1) as f64 * cfg.delta_t, post);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationKind {
    /// Particles move about the mean with `½(θ⁽ⁱ⁾ + θ̄)`.
    #[default]
    Deterministic,
    /// Each particle sees independent perturbed observations.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    thetas: Vec<f64>,
    innovation: InnovationKind,
}

impl Ensemble {
    pub fn new(thetas: Vec<f64>, innovation: InnovationKind) -> Result<Self> {
        if thetas.len() < 2 {
            return Err(Error::Config(format!("an ensemble needs at least 2 particles, got {}", thetas.len())));
        }
        if thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric("ensemble contains non-finite particles".into()));
        }
        Ok(Self { thetas, innovation })
    }

    /// `size` i.i.d. draws from the Gaussian prior.
    pub fn sample(prior: GaussianPosterior, size: usize, innovation: InnovationKind, seed: u64) -> Result<Self> {
        check_post(prior)?;
        let normal = Normal::new(prior.mu, prior.sigma.sqrt())
            .map_err(|e| Error::Config(format!("prior: {e}")))?;
        let mut rng: ChaCha8Rng = noise_stream(seed, StreamTag::Prior);
        Self::new((0..size).map(|_| normal.sample(&mut rng)).collect(), innovation)
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn innovation(&self) -> InnovationKind {
        self.innovation
    }

    pub fn size(&self) -> usize {
        self.thetas.len()
    }

    pub fn mean(&self) -> f64 {
        self.thetas.iter().sum::<f64>() / self.size() as f64
    }

    /// Empirical variance with the `1/M` normalisation.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.thetas.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / self.size() as f64
    }

    pub fn moments(&self) -> GaussianPosterior {
        GaussianPosterior { mu: self.mean(), sigma: self.variance() }
    }
}

/// Interacting particle filter. Returns the empirical moments at each outer
/// time together with the final ensemble. A collapsed ensemble has zero
/// gain and stays collapsed.
pub fn run_ensemble(
    path: &ObservationPath,
    cfg: &SchemeConfig,
    initial: Ensemble,
    seed: u64,
    model: &LinearModel,
) -> Result<(EstimatorTrace, Ensemble)> {
    check_dim(path, model)?;
    let n = cfg.outer_steps(path)?;
    let mut stepper = Stepper::new(model, cfg)?;
    let mut ensemble = initial;
    let mut trace = EstimatorTrace::start(n + 1, ensemble.moments());
    let l = cfg.inner_steps;
    let dt = cfg.delta_t;
    let d = model.dim();
    let mut rng = noise_stream(seed, StreamTag::EnsembleNoise);
    let mut xi = vec![0.0; d];
    let noise_scale = (model.gamma() * dt).sqrt();
    for k in 0..n {
        let moments = ensemble.moments();
        let terms = stepper.window_terms(moments.sigma, path, k * l, (k + 1) * l)?;
        let shift = terms.data + terms.drift;
        match ensemble.innovation {
            InnovationKind::Deterministic => {
                let pull = 0.5 * terms.decay * dt;
                for theta in &mut ensemble.thetas {
                    *theta += shift - pull * (*theta + moments.mu);
                }
            }
            InnovationKind::Stochastic => {
                let pull = terms.decay * dt;
                for theta in &mut ensemble.thetas {
                    fill_standard_normal(&mut rng, &mut xi);
                    let perturbation = terms.gain_scale * dot(&stepper.y, &xi);
                    *theta += shift - pull * *theta - noise_scale * perturbation;
                }
            }
        }
        trace.push((k + 1) as f64 * dt, ensemble.moments());
    }
    if ensemble.thetas.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("ensemble diverged".into()));
    }
    Ok((trace, ensemble))
}

/// Parameter values at the outer times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdTrace {
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
}

/// `α_t = min(ᾱ, 1/(c t))`.
pub fn learning_rate(alpha_bar: f64, c: f64, t: f64) -> f64 {
    if t <= 0.0 || c <= 0.0 {
        alpha_bar
    } else {
        alpha_bar.min(1.0 / (c * t))
    }
}

/// Stochastic gradient descent
/// `θ ← θ + (α_t/γ)[J − θ (Ax_n)ᵀ(Ax_n) Δt]`, where `J` is the subsampled
/// increment term, the inner Itô sum, or the inner sum minus
/// `(γΔt/2) Aᵀ:M`.
pub fn run_sgd(
    path: &ObservationPath,
    cfg: &SchemeConfig,
    alpha_bar: f64,
    theta0: f64,
    model: &LinearModel,
) -> Result<SgdTrace> {
    require_variant(
        cfg,
        &[Scheme::Subsampled, Scheme::HighFreq, Scheme::HighFreqCorrected],
        "gradient descent",
    )?;
    if !(alpha_bar >= 0.0 && alpha_bar.is_finite()) || !theta0.is_finite() {
        return Err(Error::Config(format!("invalid learning rate {alpha_bar} or start {theta0}")));
    }
    check_dim(path, model)?;
    let n = cfg.outer_steps(path)?;
    let a = model.drift();
    let gamma = model.gamma();
    let c = match &cfg.stationary_cov {
        Some(cov) => approx_information(a, cov)? / gamma,
        None => model.information_rate()?,
    };
    let correction = match cfg.variant {
        Scheme::HighFreqCorrected => {
            let m = cfg
                .correction
                .as_ref()
                .ok_or_else(|| Error::Config("the corrected scheme needs a correction matrix".into()))?;
            0.5 * gamma * cfg.delta_t * frobenius(&a.transpose(), m)?
        }
        _ => 0.0,
    };
    let l = cfg.inner_steps;
    let dt = cfg.delta_t;
    let mut ax = vec![0.0; model.dim()];
    let mut times = Vec::with_capacity(n + 1);
    let mut theta = Vec::with_capacity(n + 1);
    let mut current = theta0;
    times.push(0.0);
    theta.push(current);
    for k in 0..n {
        let (from, to) = (k * l, (k + 1) * l);
        let x0 = path.state(from);
        mat_vec(a, x0, &mut ax);
        let j = match cfg.variant {
            Scheme::Subsampled => {
                let x1 = path.state(to);
                ax.iter().zip(x1.iter().zip(x0)).map(|(y, (b, a))| y * (b - a)).sum()
            }
            _ => j_sum(path, a, path, from, to) - correction,
        };
        let alpha = learning_rate(alpha_bar, c, k as f64 * dt);
        current += alpha / gamma * (j - current * dot(&ax, &ax) * dt);
        times.push((k + 1) as f64 * dt);
        theta.push(current);
    }
    if !current.is_finite() {
        return Err(Error::Numeric("gradient descent diverged".into()));
    }
    Ok(SgdTrace { times, theta })
}
