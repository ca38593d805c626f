//! Seeded Monte Carlo experiments.
//!
//! Every trial simulates one fresh data path and runs all configured
//! schemes on that same path. Trials are independent and may run in
//! parallel; results are collected in trial order, so aggregates do not
//! depend on the number of worker threads.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    bias_term, biased_mean_closed_form, estimate_m, mean_closed_form, sigma_closed_form,
};
use crate::error::{Error, Result};
use crate::estimators::{run_estimator, run_filtered_estimator, EstimatorTrace, GainMode, GaussianPosterior, Scheme, SchemeConfig};
use crate::models::{
    extended_stationary_covariance, information_rate, rotation_m, stationary_covariance, DataModel,
    FilterConfig, LinearModel, ModelSpec, TwoScaleModel,
};
use crate::paths::{grid_steps, simulate_filtered, simulate_reference, simulate_two_scale, ObservationPath};
use crate::rng::derive_seed;

/// Trials for the desk-scale runs.
pub const DEFAULT_TRIALS: usize = 2000;
/// Trials with `--full`.
pub const FULL_TRIALS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Subsampled,
    HighFreq,
    HighFreqCorrected,
    StratMidpoint,
    /// High-frequency scheme with the gain built from the filtered path.
    Filtered,
}

/// Correction matrix used by [`SchemeKind::HighFreqCorrected`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrectionSpec {
    #[default]
    None,
    /// The coupling matrix of the two-scale data model.
    TrueM,
    /// `M_est` computed on each trial path at the scheme's `delta_t`.
    EstimatedPerPath,
    Matrix { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub name: String,
    pub kind: SchemeKind,
    pub delta_t: f64,
    #[serde(default)]
    pub correction: CorrectionSpec,
    #[serde(default)]
    pub gain_mode: GainMode,
}

impl SchemeSpec {
    pub fn new(name: &str, kind: SchemeKind, delta_t: f64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            delta_t,
            correction: CorrectionSpec::None,
            gain_mode: GainMode::Exact,
        }
    }

    pub fn with_correction(mut self, correction: CorrectionSpec) -> Self {
        self.correction = correction;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: f64,
    pub variance: f64,
}

/// JSON-serialisable experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSpec,
    pub schemes: Vec<SchemeSpec>,
    pub prior: PriorSpec,
    pub final_time: f64,
    pub delta_tau: f64,
    pub n_trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    /// Spacing of the aggregated output grid; every outer step when absent.
    #[serde(default)]
    pub output_dt: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<PreparedExperiment> {
        PreparedExperiment::new(self)
    }
}

#[derive(Debug, Clone)]
enum Correction {
    None,
    Fixed(DMatrix<f64>),
    PerPath,
}

#[derive(Debug, Clone)]
struct PreparedScheme {
    spec: SchemeSpec,
    cfg: SchemeConfig,
    correction: Correction,
    stride: usize,
    /// Information rate used by the analytic overlay.
    c: f64,
    /// Drift of the frequentist mean expected for this scheme on this data.
    bias_rate: f64,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    config: ExperimentConfig,
    data: DataModel,
    prior: GaussianPosterior,
    schemes: Vec<PreparedScheme>,
}

impl PreparedExperiment {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        if config.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if config.schemes.is_empty() {
            return Err(Error::Config("no schemes configured".into()));
        }
        let data = config.model.build()?;
        let prior = GaussianPosterior::new(config.prior.mean, config.prior.variance)?;
        let n_fine = grid_steps(config.final_time, config.delta_tau)?;
        let model = data.estimation_model();
        let cov = stationary_covariance(model)?;
        let c = information_rate(model.drift(), &cov, model.gamma())?;
        let mut names = std::collections::HashSet::new();
        let mut schemes = Vec::with_capacity(config.schemes.len());
        for spec in &config.schemes {
            if !names.insert(spec.name.clone()) {
                return Err(Error::Config(format!("duplicate scheme name {}", spec.name)));
            }
            if spec.name.is_empty() || spec.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid scheme name {:?}", spec.name)));
            }
            let variant = match spec.kind {
                SchemeKind::Subsampled => Scheme::Subsampled,
                SchemeKind::HighFreq | SchemeKind::Filtered => Scheme::HighFreq,
                SchemeKind::HighFreqCorrected => Scheme::HighFreqCorrected,
                SchemeKind::StratMidpoint => Scheme::StratMidpoint,
            };
            let mut cfg = SchemeConfig::new(variant, spec.delta_t, config.delta_tau)?;
            if n_fine % cfg.inner_steps != 0 {
                return Err(Error::Config(format!(
                    "scheme {}: delta_t {} does not divide the horizon {}",
                    spec.name, spec.delta_t, config.final_time
                )));
            }
            let correction = match (&spec.correction, spec.kind) {
                (CorrectionSpec::None, SchemeKind::HighFreqCorrected) => {
                    return Err(Error::Config(format!("scheme {} needs a correction", spec.name)));
                }
                (CorrectionSpec::None, _) => Correction::None,
                (_, kind) if kind != SchemeKind::HighFreqCorrected => {
                    return Err(Error::Config(format!(
                        "scheme {}: only the corrected scheme takes a correction",
                        spec.name
                    )));
                }
                (CorrectionSpec::TrueM, _) => match &data {
                    DataModel::TwoScale(m) => Correction::Fixed(m.coupling().clone()),
                    DataModel::Linear(_) => {
                        return Err(Error::Config("true M requires two-scale data".into()));
                    }
                },
                (CorrectionSpec::EstimatedPerPath, _) => Correction::PerPath,
                (CorrectionSpec::Matrix { rows }, _) => {
                    let d = model.dim();
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(Error::Shape(format!("correction matrix must be {d}x{d}")));
                    }
                    Correction::Fixed(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
                }
            };
            if let Correction::Fixed(m) = &correction {
                cfg = cfg.with_correction(m.clone());
            }
            if spec.gain_mode == GainMode::Approx {
                cfg = cfg.with_approx_gain(cov.clone());
            }
            let mut scheme_c = c;
            if spec.kind == SchemeKind::Filtered {
                let filter = config
                    .filter
                    .ok_or_else(|| Error::Config(format!("scheme {} needs a filter", spec.name)))?;
                let ext = extended_stationary_covariance(model, &filter)?;
                scheme_c = information_rate(model.drift(), &ext.c_tilde, model.gamma())?;
            }
            let data_bias = match &data {
                DataModel::TwoScale(m) => bias_term(model.drift(), m.coupling(), model.gamma())? / model.gamma(),
                DataModel::Linear(_) => 0.0,
            };
            let bias_rate = match (spec.kind, &correction) {
                (SchemeKind::HighFreq, _) => data_bias,
                (SchemeKind::HighFreqCorrected, Correction::Fixed(m)) => {
                    data_bias - bias_term(model.drift(), m, model.gamma())? / model.gamma()
                }
                _ => 0.0,
            };
            let stride = match config.output_dt {
                None => 1,
                Some(out) => {
                    let r = (out / spec.delta_t).round();
                    if r >= 1.0 && (r * spec.delta_t - out).abs() <= 1e-9 * out {
                        r as usize
                    } else {
                        1
                    }
                }
            };
            schemes.push(PreparedScheme { spec: spec.clone(), cfg, correction, stride, c: scheme_c, bias_rate });
        }
        Ok(Self { config: config.clone(), data, prior, schemes })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn scheme_names(&self) -> Vec<String> {
        self.schemes.iter().map(|s| s.spec.name.clone()).collect()
    }

    fn data_path(&self, seed: u64) -> Result<ObservationPath> {
        let (t, dtau) = (self.config.final_time, self.config.delta_tau);
        match &self.data {
            DataModel::Linear(m) => simulate_reference(m, t, dtau, seed),
            DataModel::TwoScale(m) => Ok(simulate_two_scale(m, t, dtau, seed, None)?.x_path),
        }
    }

    fn run_trial(&self, index: usize) -> Result<TrialOutput> {
        let seed = derive_seed(self.config.master_seed, index as u64);
        let wrap = |e: Error| Error::Trial { index, seed, source: Box::new(e) };
        let model = self.data.estimation_model();
        let path = self.data_path(seed).map_err(wrap)?;
        let needs_filter = self.schemes.iter().any(|s| s.spec.kind == SchemeKind::Filtered);
        let z_path = match (needs_filter, &self.config.filter) {
            (true, Some(filter)) => Some(simulate_filtered(&path, filter, seed).map_err(wrap)?),
            _ => None,
        };
        let mut traces = Vec::with_capacity(self.schemes.len());
        for scheme in &self.schemes {
            let trace = match (&scheme.spec.kind, &scheme.correction) {
                (SchemeKind::Filtered, _) => {
                    let z = z_path.as_ref().expect("filtered path simulated");
                    run_filtered_estimator(&path, z, &scheme.cfg, self.prior, model)
                }
                (_, Correction::PerPath) => estimate_m(&path, scheme.spec.delta_t, model.gamma()).and_then(|est| {
                    let cfg = scheme.cfg.clone().with_correction(est.matrix);
                    run_estimator(&path, &cfg, self.prior, model)
                }),
                _ => run_estimator(&path, &scheme.cfg, self.prior, model),
            }
            .map_err(wrap)?;
            traces.push(thin(trace, scheme.stride));
        }
        Ok(TrialOutput { index, seed, traces })
    }
}

fn thin(trace: EstimatorTrace, stride: usize) -> EstimatorTrace {
    if stride == 1 {
        return trace;
    }
    let pick = |v: &Vec<f64>| v.iter().step_by(stride).copied().collect();
    EstimatorTrace { times: pick(&trace.times), mu: pick(&trace.mu), sigma: pick(&trace.sigma) }
}

struct TrialOutput {
    index: usize,
    seed: u64,
    traces: Vec<EstimatorTrace>,
}

/// Terminal values of one trial, per scheme in configuration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub terminal_mu: Vec<f64>,
    pub terminal_sigma: Vec<f64>,
}

/// Empirical frequentist moments of one scheme across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub scheme: String,
    pub times: Vec<f64>,
    /// Mean of `μ_t` over trials.
    pub m_hat: Vec<f64>,
    /// Variance of `μ_t` over trials (`1/N` normalisation).
    pub p_hat: Vec<f64>,
    /// `√(p̂/N)`.
    pub se_m: Vec<f64>,
    /// Standard error of `p̂` from the fourth central moment.
    pub se_p: Vec<f64>,
    /// Mean posterior variance over trials.
    pub sigma_mean: Vec<f64>,
    pub sigma_analytic: Vec<f64>,
    pub m_analytic: Vec<f64>,
    pub n_trials: usize,
}

impl AggregateStats {
    pub fn terminal_index(&self) -> usize {
        self.times.len() - 1
    }

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,m_hat,p_hat,se_m,sigma_analytic,m_analytic")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.times[k], self.m_hat[k], self.p_hat[k], self.se_m[k], self.sigma_analytic[k], self.m_analytic[k]
            )?;
        }
        Ok(())
    }
}

/// Mean and standard error of a paired terminal difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub config: ExperimentConfig,
    pub stats: Vec<AggregateStats>,
    pub trials: Vec<TrialRecord>,
}

impl MonteCarloResult {
    pub fn scheme(&self, name: &str) -> Option<&AggregateStats> {
        self.stats.iter().find(|s| s.scheme == name)
    }

    fn scheme_index(&self, name: &str) -> Result<usize> {
        self.stats
            .iter()
            .position(|s| s.scheme == name)
            .ok_or_else(|| Error::Config(format!("unknown scheme {name}")))
    }

    /// Terminal `μ_a − μ_b` across the paired trials.
    pub fn paired_difference(&self, a: &str, b: &str) -> Result<PairedDifference> {
        let (ia, ib) = (self.scheme_index(a)?, self.scheme_index(b)?);
        let diffs: Vec<f64> = self.trials.iter().map(|t| t.terminal_mu[ia] - t.terminal_mu[ib]).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = if diffs.len() > 1 {
            diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(PairedDifference { mean, stderr: (var / n).sqrt() })
    }
}

/// Sample moments of each column of `rows` (trial-major), two-pass and in
/// trial order.
fn column_moments(values: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = values.len() as f64;
    let len = values[0].len();
    let mut mean = vec![0.0; len];
    for v in values {
        for k in 0..len {
            mean[k] += v[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let (mut m2, mut m4) = (vec![0.0; len], vec![0.0; len]);
    for v in values {
        for k in 0..len {
            let d = v[k] - mean[k];
            let d2 = d * d;
            m2[k] += d2;
            m4[k] += d2 * d2;
        }
    }
    let p: Vec<f64> = m2.iter().map(|s| s / n).collect();
    let se_m = p.iter().map(|p| (p / n).sqrt()).collect();
    let se_p = p
        .iter()
        .zip(&m4)
        .map(|(p, s4)| ((s4 / n - p * p).max(0.0) / n).sqrt())
        .collect();
    (mean, p, se_m, se_p)
}

/// Runs every trial and aggregates per scheme. The first failing trial
/// aborts the run with its index and seed.
pub fn run_monte_carlo(config: &ExperimentConfig) -> Result<MonteCarloResult> {
    let prepared = config.validate()?;
    let outputs: Vec<TrialOutput> = (0..config.n_trials)
        .into_par_iter()
        .map(|i| prepared.run_trial(i))
        .collect::<Result<_>>()?;
    let sigma0 = prepared.prior.sigma;
    let m0 = prepared.prior.mu;
    let mut stats = Vec::with_capacity(prepared.schemes.len());
    for (s, scheme) in prepared.schemes.iter().enumerate() {
        let mus: Vec<&[f64]> = outputs.iter().map(|o| o.traces[s].mu.as_slice()).collect();
        let sigmas: Vec<&[f64]> = outputs.iter().map(|o| o.traces[s].sigma.as_slice()).collect();
        let (m_hat, p_hat, se_m, se_p) = column_moments(&mus);
        let (sigma_mean, ..) = column_moments(&sigmas);
        let times = outputs[0].traces[s].times.clone();
        let sigma_analytic = times.iter().map(|&t| sigma_closed_form(sigma0, scheme.c, t)).collect();
        let m_analytic = times
            .iter()
            .map(|&t| {
                if scheme.bias_rate == 0.0 {
                    mean_closed_form(sigma0, m0, scheme.c, t)
                } else {
                    biased_mean_closed_form(sigma0, m0, scheme.c, scheme.bias_rate, t)
                }
            })
            .collect();
        stats.push(AggregateStats {
            scheme: scheme.spec.name.clone(),
            times,
            m_hat,
            p_hat,
            se_m,
            se_p,
            sigma_mean,
            sigma_analytic,
            m_analytic,
            n_trials: outputs.len(),
        });
    }
    let trials = outputs
        .iter()
        .map(|o| TrialRecord {
            index: o.index,
            seed: o.seed,
            terminal_mu: o.traces.iter().map(|t| *t.mu.last().expect("non-empty trace")).collect(),
            terminal_sigma: o.traces.iter().map(|t| *t.sigma.last().expect("non-empty trace")).collect(),
        })
        .collect();
    Ok(MonteCarloResult { config: config.clone(), stats, trials })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemeSummary {
    scheme: String,
    final_time: f64,
    m_hat: f64,
    p_hat: f64,
    se_m: f64,
    se_p: f64,
    sigma_mean: f64,
    sigma_analytic: f64,
    m_analytic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Summary {
    experiment: String,
    master_seed: u64,
    n_trials: usize,
    /// Trial `i` uses `derive_seed(master_seed, i)`.
    seed_rule: String,
    schemes: Vec<SchemeSummary>,
    config: ExperimentConfig,
}

/// Writes `<dir>/<scheme>.csv`, `summary.json` and `trials.csv`. Output is
/// byte-identical for identical configurations.
pub fn write_outputs(result: &MonteCarloResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in &result.stats {
        let mut file = std::io::BufWriter::new(fs::File::create(dir.join(format!("{}.csv", s.scheme)))?);
        s.write_csv(&mut file)?;
    }
    let summary = Summary {
        experiment: result.config.name.clone(),
        master_seed: result.config.master_seed,
        n_trials: result.config.n_trials,
        seed_rule: "splitmix64(master_seed, trial_index)".into(),
        schemes: result
            .stats
            .iter()
            .map(|s| {
                let k = s.terminal_index();
                SchemeSummary {
                    scheme: s.scheme.clone(),
                    final_time: s.times[k],
                    m_hat: s.m_hat[k],
                    p_hat: s.p_hat[k],
                    se_m: s.se_m[k],
                    se_p: s.se_p[k],
                    sigma_mean: s.sigma_mean[k],
                    sigma_analytic: s.sigma_analytic[k],
                    m_analytic: s.m_analytic[k],
                }
            })
            .collect(),
        config: result.config.clone(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let mut trials = String::from("index,seed");
    for s in &result.stats {
        trials.push_str(&format!(",mu_{0},sigma_{0}", s.scheme));
    }
    trials.push('\n');
    for t in &result.trials {
        trials.push_str(&format!("{},{}", t.index, t.seed));
        for (m, s) in t.terminal_mu.iter().zip(&t.terminal_sigma) {
            trials.push_str(&format!(",{m},{s}"));
        }
        trials.push('\n');
    }
    fs::write(dir.join("trials.csv"), trials)?;
    Ok(())
}

/// Overrides of the preset experiment settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOverrides {
    pub trials: Option<usize>,
    pub delta_t: Option<f64>,
    pub delta_tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub full: bool,
}

impl ExperimentOverrides {
    fn trials(&self, default: usize) -> usize {
        self.trials.unwrap_or(if self.full { FULL_TRIALS } else { default })
    }
}

const PRESET_T: f64 = 6.0;
const PRESET_DT: f64 = 0.06;
const PRESET_DTAU: f64 = 1e-4;
const PRESET_PRIOR: PriorSpec = PriorSpec { mean: 0.0, variance: 4.0 };

fn base_config(name: &str, model: ModelSpec, schemes: Vec<SchemeSpec>, o: &ExperimentOverrides, trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        model,
        schemes,
        prior: PRESET_PRIOR,
        final_time: PRESET_T,
        delta_tau: o.delta_tau.unwrap_or(PRESET_DTAU),
        n_trials: o.trials(trials),
        master_seed: o.seed.unwrap_or(DEFAULT_SEED),
        filter: None,
        output_dt: None,
        output_dir: None,
    }
}

fn two_scale_spec(o: &ExperimentOverrides) -> Result<ModelSpec> {
    let model = TwoScaleModel::new(
        LinearModel::preset(),
        rotation_m(o.beta.unwrap_or(2.0)),
        o.epsilon.unwrap_or(0.01),
    )?;
    Ok(ModelSpec::from_model(&DataModel::TwoScale(model)))
}

/// Reference data; subsampled and high-frequency schemes.
pub fn fig2_config(o: &ExperimentOverrides) -> ExperimentConfig {
    let dt = o.delta_t.unwrap_or(PRESET_DT);
    base_config(
        "fig2",
        ModelSpec::from_model(&DataModel::Linear(LinearModel::preset())),
        vec![
            SchemeSpec::new("subsampled", SchemeKind::Subsampled, dt),
            SchemeSpec::new("high_freq", SchemeKind::HighFreq, dt),
        ],
        o,
        DEFAULT_TRIALS,
    )
}

/// Two-scale data; subsampled, corrected (true and per-path estimated `M`)
/// and the uncorrected control.
pub fn fig3_config(o: &ExperimentOverrides) -> Result<ExperimentConfig> {
    let dt = o.delta_t.unwrap_or(PRESET_DT);
    Ok(base_config(
        "fig3",
        two_scale_spec(o)?,
        vec![
            SchemeSpec::new("subsampled", SchemeKind::Subsampled, dt),
            SchemeSpec::new("corrected", SchemeKind::HighFreqCorrected, dt).with_correction(CorrectionSpec::TrueM),
            SchemeSpec::new("corrected_estimated", SchemeKind::HighFreqCorrected, dt)
                .with_correction(CorrectionSpec::EstimatedPerPath),
            SchemeSpec::new("uncorrected", SchemeKind::HighFreq, dt),
        ],
        o,
        DEFAULT_TRIALS,
    ))
}

/// Filtered-data estimator at `Δt = Δτ` on reference and on two-scale
/// data, without any correction term.
pub fn filtered_configs(o: &ExperimentOverrides) -> Result<[ExperimentConfig; 2]> {
    let dtau = o.delta_tau.unwrap_or(PRESET_DTAU);
    let dt = o.delta_t.unwrap_or(dtau);
    let filter = FilterConfig::new(o.delta.unwrap_or(0.1), false)?;
    let schemes = vec![SchemeSpec::new("filtered", SchemeKind::Filtered, dt)];
    let mut reference = base_config(
        "filtered_reference",
        ModelSpec::from_model(&DataModel::Linear(LinearModel::preset())),
        schemes.clone(),
        o,
        100,
    );
    let mut two_scale = base_config("filtered_two_scale", two_scale_spec(o)?, schemes, o, 100);
    for c in [&mut reference, &mut two_scale] {
        c.filter = Some(filter);
        c.output_dt = Some(PRESET_DT);
    }
    Ok([reference, two_scale])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    experiment: String,
    seconds: f64,
}

fn run_and_write(config: &ExperimentConfig, dir: &Path) -> Result<MonteCarloResult> {
    let start = Instant::now();
    let result = run_monte_carlo(config)?;
    write_outputs(&result, dir)?;
    let timing = Timing { experiment: config.name.clone(), seconds: start.elapsed().as_secs_f64() };
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok(result)
}

pub fn experiment_fig2(o: &ExperimentOverrides, out: &Path) -> Result<MonteCarloResult> {
    run_and_write(&fig2_config(o), &out.join("fig2"))
}

pub fn experiment_fig3(o: &ExperimentOverrides, out: &Path) -> Result<MonteCarloResult> {
    run_and_write(&fig3_config(o)?, &out.join("fig3"))
}

/// Results land in `<out>/filtered/reference` and `<out>/filtered/two_scale`.
pub fn experiment_filtered(o: &ExperimentOverrides, out: &Path) -> Result<[MonteCarloResult; 2]> {
    let [reference, two_scale] = filtered_configs(o)?;
    let base = out.join("filtered");
    Ok([
        run_and_write(&reference, &base.join("reference"))?,
        run_and_write(&two_scale, &base.join("two_scale"))?,
    ])
}

/// Runs a configuration loaded from JSON into `<out>/<name>`.
pub fn experiment_from_config(config: &ExperimentConfig, out: &Path) -> Result<MonteCarloResult> {
    let dir = config.output_dir.clone().unwrap_or_else(|| out.to_path_buf()).join(&config.name);
    run_and_write(config, &dir)
}
