//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 numerical failure,
//! 5 I/O. Failures print a single line `error[<category>]: <message>`.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::analysis::{
    frequentist_moments, mean_closed_form, sigma_closed_form, subsample_diagnostic, variance_closed_form, MAccumulator,
};
use crate::error::{Error, Result};
use crate::estimators::{
    run_ensemble, run_estimator, run_filtered_estimator, Ensemble, GaussianPosterior, InnovationKind, Scheme,
    SchemeConfig,
};
use crate::harness::{
    experiment_fig2, experiment_fig3, experiment_filtered, experiment_from_config, ExperimentConfig,
    ExperimentOverrides, MonteCarloResult,
};
use crate::linalg::MatrixNorm;
use crate::models::{rotation_m, stationary_covariance, FilterConfig, LinearModel, ModelSpec, DataModel, TwoScaleModel};
use crate::paths::{
    simulate_filtered, simulate_reference, simulate_two_scale, write_paths_csv, ObservationPath,
};
use crate::rng::derive_seed;

/// Environment variable holding the default experiment output directory.
pub const OUTPUT_DIR_ENV: &str = "ENKBF_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "enkbf-output";

#[derive(Debug, Parser)]
#[command(name = "enkbf", version, about = "Parameter estimation for linear SDEs with ensemble Kalman-Bucy filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate observation paths and write them as CSV.
    Simulate(SimulateArgs),
    /// Run one estimator on one simulated path and write its trace.
    Estimate(EstimateArgs),
    /// Closed-form frequentist moments.
    Moments(MomentsArgs),
    /// Estimate the multiscale correction matrix from two-scale paths.
    EstimateM(EstimateMArgs),
    /// Subsampling diagnostic h(dt) over a list of outer steps.
    SubsampleScan(ScanArgs),
    /// Reproduce a Monte Carlo experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataKind {
    Reference,
    TwoScale,
    Filtered,
}

/// Shared model and grid flags; defaults are the preset model.
#[derive(Debug, Args)]
struct ModelArgs {
    /// JSON model document (overrides the preset drift and gamma).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "T", default_value_t = 6.0)]
    final_time: f64,
    #[arg(long, default_value_t = 1e-4)]
    dtau: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Switch on the independent filter noise.
    #[arg(long)]
    filter_noise: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl ModelArgs {
    fn base_model(&self) -> Result<LinearModel> {
        match &self.model {
            None => Ok(LinearModel::preset()),
            Some(p) => Ok(ModelSpec::from_json(&fs::read_to_string(p)?)?.build()?.estimation_model().clone()),
        }
    }

    fn data_model(&self, kind: DataKind) -> Result<DataModel> {
        if let Some(p) = &self.model {
            let spec = ModelSpec::from_json(&fs::read_to_string(p)?)?;
            let built = spec.build()?;
            if matches!(built, DataModel::TwoScale(_)) || !matches!(kind, DataKind::TwoScale) {
                return Ok(built);
            }
        }
        let base = self.base_model()?;
        Ok(match kind {
            DataKind::TwoScale => DataModel::TwoScale(TwoScaleModel::new(base, rotation_m(self.beta), self.epsilon)?),
            _ => DataModel::Linear(base),
        })
    }

    fn filter(&self) -> Result<FilterConfig> {
        FilterConfig::new(self.delta, self.filter_noise)
    }

    fn path(&self, data: &DataModel, seed: u64) -> Result<ObservationPath> {
        match data {
            DataModel::Linear(m) => simulate_reference(m, self.final_time, self.dtau, seed),
            DataModel::TwoScale(m) => Ok(simulate_two_scale(m, self.final_time, self.dtau, seed, None)?.x_path),
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "reference")]
    kind: DataKind,
    #[command(flatten)]
    model: ModelArgs,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    Subsampled,
    HighFreq,
    HighFreqCorrected,
    StratMidpoint,
    Filtered,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CorrectionArg {
    True,
    Estimated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InnovationArg {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long, value_enum, default_value = "reference")]
    data: DataKind,
    #[arg(long, value_enum, default_value = "subsampled")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 0.06)]
    dt: f64,
    #[arg(long, default_value_t = 4.0)]
    sigma0: f64,
    #[arg(long, default_value_t = 0.0)]
    m0: f64,
    /// Correction matrix for the corrected scheme.
    #[arg(long, value_enum, default_value = "true")]
    correction: CorrectionArg,
    /// Use the gain denominator with (AᵀA):C.
    #[arg(long)]
    approx_gain: bool,
    /// Run an ensemble of this many particles instead of the mean-field filter.
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long, value_enum, default_value = "deterministic")]
    innovation: InnovationArg,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MomentsArgs {
    #[arg(long, default_value_t = 4.0)]
    sigma0: f64,
    #[arg(long, default_value_t = 0.0)]
    m0: f64,
    /// Information rate (AᵀA):C/γ; taken from the preset model when absent.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long = "T", default_value_t = 6.0)]
    final_time: f64,
    #[arg(long, default_value_t = 0.06)]
    dt: f64,
    /// Write the trajectories `t,m,p,sigma` to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateMArgs {
    #[arg(long, default_value_t = 200)]
    paths: usize,
    #[arg(long, default_value_t = 0.06)]
    dt: f64,
    #[arg(long, value_enum, default_value = "two-scale")]
    data: DataKind,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    Spectral,
    Frobenius,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[arg(long, default_value_t = 200)]
    paths: usize,
    /// Comma-separated outer steps.
    #[arg(long, value_delimiter = ',', default_values_t = [0.002, 0.005, 0.01, 0.02, 0.03, 0.06, 0.1, 0.2])]
    dts: Vec<f64>,
    #[arg(long, value_enum, default_value = "spectral")]
    norm: NormArg,
    #[arg(long, value_enum, default_value = "two-scale")]
    data: DataKind,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentName {
    Fig2,
    Fig3,
    Filtered,
    /// Run the configuration given by `--config`.
    Config,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    name: ExperimentName,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    dtau: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Full trial count (10⁴).
    #[arg(long)]
    full: bool,
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to $ENKBF_OUTPUT_DIR or ./enkbf-output.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let category = e.category();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", category.as_str());
            category.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Moments(a) => moments(a),
        Command::EstimateM(a) => estimate_m_cmd(a),
        Command::SubsampleScan(a) => scan(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let m = &a.model;
    let mut out = sink(&a.out)?;
    match a.kind {
        DataKind::Reference => {
            let model = m.base_model()?;
            let x = simulate_reference(&model, m.final_time, m.dtau, m.seed)?;
            write_paths_csv(&mut out, &[("x", &x)])?;
        }
        DataKind::TwoScale => {
            let DataModel::TwoScale(model) = m.data_model(DataKind::TwoScale)? else {
                return Err(Error::Config("two-scale simulation needs a two-scale model".into()));
            };
            let b = simulate_two_scale(&model, m.final_time, m.dtau, m.seed, None)?;
            write_paths_csv(&mut out, &[("x", &b.x_path), ("p", &b.p_path)])?;
        }
        DataKind::Filtered => {
            let model = m.base_model()?;
            let x = simulate_reference(&model, m.final_time, m.dtau, m.seed)?;
            let z = simulate_filtered(&x, &m.filter()?, m.seed)?;
            write_paths_csv(&mut out, &[("x", &x), ("z", &z)])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let m = &a.model;
    let data = m.data_model(a.data)?;
    let model = data.estimation_model().clone();
    let path = m.path(&data, m.seed)?;
    let prior = GaussianPosterior::new(a.m0, a.sigma0)?;
    let variant = match a.scheme {
        SchemeArg::Subsampled => Scheme::Subsampled,
        SchemeArg::HighFreq | SchemeArg::Filtered => Scheme::HighFreq,
        SchemeArg::HighFreqCorrected => Scheme::HighFreqCorrected,
        SchemeArg::StratMidpoint => Scheme::StratMidpoint,
    };
    let mut cfg = SchemeConfig::new(variant, a.dt, m.dtau)?;
    if a.approx_gain {
        cfg = cfg.with_approx_gain(stationary_covariance(&model)?);
    }
    if variant == Scheme::HighFreqCorrected {
        let corr = match (a.correction, &data) {
            (CorrectionArg::True, DataModel::TwoScale(t)) => t.coupling().clone(),
            (CorrectionArg::True, DataModel::Linear(_)) => {
                return Err(Error::Config("the true correction needs two-scale data".into()));
            }
            (CorrectionArg::Estimated, _) => crate::analysis::estimate_m(&path, a.dt, model.gamma())?.matrix,
        };
        cfg = cfg.with_correction(corr);
    }
    let trace = match (a.scheme, a.particles) {
        (SchemeArg::Filtered, None) => {
            let z = simulate_filtered(&path, &m.filter()?, m.seed)?;
            run_filtered_estimator(&path, &z, &cfg, prior, &model)?
        }
        (SchemeArg::Filtered, Some(_)) => {
            return Err(Error::Config("the filtered scheme has no ensemble version".into()));
        }
        (_, None) => run_estimator(&path, &cfg, prior, &model)?,
        (_, Some(size)) => {
            let kind = match a.innovation {
                InnovationArg::Deterministic => InnovationKind::Deterministic,
                InnovationArg::Stochastic => InnovationKind::Stochastic,
            };
            let ensemble = Ensemble::sample(prior, size, kind, m.seed)?;
            run_ensemble(&path, &cfg, ensemble, m.seed, &model)?.0
        }
    };
    let mut out = sink(&a.out)?;
    trace.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn moments(a: MomentsArgs) -> Result<()> {
    let c = match a.c {
        Some(c) => c,
        None => LinearModel::preset().information_rate()?,
    };
    let fm = frequentist_moments(a.sigma0, a.m0, c, a.final_time, a.dt)?;
    let k = fm.times.len() - 1;
    let t = fm.times[k];
    println!("sigma_T={}", round_print(sigma_closed_form(a.sigma0, c, t)));
    println!("m_T={}", round_print(mean_closed_form(a.sigma0, a.m0, c, t)));
    println!("p_T={}", round_print(variance_closed_form(a.sigma0, c, t)));
    if let Some(p) = &a.out {
        let mut out = sink(&Some(p.clone()))?;
        writeln!(out, "t,m,p,sigma")?;
        for i in 0..=k {
            writeln!(out, "{},{},{},{}", fm.times[i], fm.m[i], fm.p[i], fm.sigma[i])?;
        }
        out.flush()?;
    }
    Ok(())
}

/// Ten decimals, enough to show `0.16` rather than rounding noise.
fn round_print(v: f64) -> String {
    let s = format!("{v:.10}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

fn simulate_many(m: &ModelArgs, data: &DataModel, n: usize) -> Result<Vec<ObservationPath>> {
    if n == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| m.path(data, derive_seed(m.seed, i as u64)))
        .collect()
}

fn estimate_m_cmd(a: EstimateMArgs) -> Result<()> {
    let m = &a.model;
    let data = m.data_model(a.data)?;
    let model = data.estimation_model();
    let paths = simulate_many(m, &data, a.paths)?;
    let mut acc = MAccumulator::new(model.dim(), a.dt, model.gamma())?;
    for p in &paths {
        acc.add_path(p)?;
    }
    println!("{}", acc.finish()?.to_json()?);
    Ok(())
}

fn scan(a: ScanArgs) -> Result<()> {
    let m = &a.model;
    let data = m.data_model(a.data)?;
    let paths = simulate_many(m, &data, a.paths)?;
    let refs: Vec<&ObservationPath> = paths.iter().collect();
    let norm = match a.norm {
        NormArg::Spectral => MatrixNorm::Spectral,
        NormArg::Frobenius => MatrixNorm::Frobenius,
    };
    let diag = subsample_diagnostic(&refs, &a.dts, norm)?;
    let mut out = sink(&a.out)?;
    diag.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn output_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn report(result: &MonteCarloResult, dir: &Path) {
    for s in &result.stats {
        let k = s.terminal_index();
        println!(
            "{}/{}: T={} m_hat={:.4} (se {:.4}) p_hat={:.4} sigma_analytic={:.4} m_analytic={:.4}",
            result.config.name, s.scheme, s.times[k], s.m_hat[k], s.se_m[k], s.p_hat[k], s.sigma_analytic[k], s.m_analytic[k]
        );
    }
    println!("wrote {}", dir.display());
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let out = output_dir(&a.out_dir);
    let o = ExperimentOverrides {
        trials: a.trials,
        delta_t: a.dt,
        delta_tau: a.dtau,
        epsilon: a.epsilon,
        beta: a.beta,
        delta: a.delta,
        seed: a.seed,
        full: a.full,
    };
    if a.config.is_some() && !matches!(a.name, ExperimentName::Config) {
        return Err(Error::Config("--config is only used with `experiment config`".into()));
    }
    match a.name {
        ExperimentName::Fig2 => report(&experiment_fig2(&o, &out)?, &out.join("fig2")),
        ExperimentName::Fig3 => report(&experiment_fig3(&o, &out)?, &out.join("fig3")),
        ExperimentName::Filtered => {
            let [r, t] = experiment_filtered(&o, &out)?;
            report(&r, &out.join("filtered").join("reference"));
            report(&t, &out.join("filtered").join("two_scale"));
        }
        ExperimentName::Config => {
            let path = a.config.ok_or_else(|| Error::Config("`experiment config` needs --config".into()))?;
            let mut cfg = ExperimentConfig::from_json(&fs::read_to_string(path)?)?;
            if let Some(n) = a.trials {
                cfg.n_trials = n;
            }
            if let Some(s) = a.seed {
                cfg.master_seed = s;
            }
            let result = experiment_from_config(&cfg, &out)?;
            let dir = cfg.output_dir.clone().unwrap_or(out).join(&cfg.name);
            report(&result, &dir);
        }
    }
    Ok(())
}
