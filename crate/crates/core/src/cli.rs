//! Command-line driver: `synth`, `fit`, `forecast`, `evaluate`, `inspect`.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::FitSettings;
use crate::engine::{
    extract_components, fit_with_nu, predict_slabs, ComponentSummary, Hyperparams, Loading,
};
use crate::error::{Result, StelarError};
use crate::eval::{evaluate_horizons, EvalOptions, Method};
use crate::io::{emit_csv, ingest_csv, offset_date, write_forecast_csv, FillPolicy, TensorBundle};
use crate::model::{FlatMatrix, ModelFile};
use crate::sir_fit::SirComponent;
use crate::synth::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "stelar", version, about = "Epidemic tensor factorization with latent SIR models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with known latent structure.
    Synth(SynthArgs),
    /// Fit a model to a long-format CSV.
    Fit(FitArgs),
    /// Forecast future slabs from a saved model.
    Forecast(ForecastArgs),
    /// Compare forecasting methods on held-out trailing slabs.
    Evaluate(EvaluateArgs),
    /// Export the strongest components of a saved model.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving data.csv, truth.json and future.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub locations: usize,
    #[arg(long, default_value_t = 5)]
    pub signals: usize,
    #[arg(long, default_value_t = 60)]
    pub len: usize,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Slabs of true continuation written to future.csv.
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Noise standard deviation relative to the signal RMS.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Population scale of every preset wave.
    #[arg(long, default_value_t = 1000.0)]
    pub population: f64,
    #[arg(long, default_value = "2020-01-01")]
    pub start_date: NaiveDate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FillArg {
    Zero,
    Error,
}

impl From<FillArg> for FillPolicy {
    fn from(f: FillArg) -> Self {
        match f {
            FillArg::Zero => FillPolicy::Zero,
            FillArg::Error => FillPolicy::Error,
        }
    }
}

/// Hyperparameter overrides; they win over `--config`.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Frobenius weight, or `auto`.
    #[arg(long)]
    pub mu: Option<String>,
    /// Latent SIR weight, or `auto` to select it on the validation window.
    #[arg(long)]
    pub nu: Option<String>,
    #[arg(long)]
    pub iters_outer: Option<usize>,
    #[arg(long)]
    pub iters_inner: Option<usize>,
    #[arg(long)]
    pub iters_grad: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_window: Option<usize>,
    /// Signal index scored for early stopping, or `all`.
    #[arg(long)]
    pub val_signals: Option<String>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl HyperArgs {
    pub fn settings(&self) -> Result<FitSettings> {
        let mut s = FitSettings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        let numbers = [
            ("rank", self.rank.map(|v| v.to_string())),
            ("mu", self.mu.clone()),
            ("nu", self.nu.clone()),
            ("iters_outer", self.iters_outer.map(|v| v.to_string())),
            ("iters_inner", self.iters_inner.map(|v| v.to_string())),
            ("iters_grad", self.iters_grad.map(|v| v.to_string())),
            ("horizon", self.horizon.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("val_window", self.val_window.map(|v| v.to_string())),
            ("val_signals", self.val_signals.clone()),
            ("patience", self.patience.map(|v| v.to_string())),
        ];
        for (key, value) in numbers {
            if let Some(v) = value {
                s.set(key, &v)?;
            }
        }
        s.hp.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FillArg::Zero)]
    pub fill: FillArg,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Output model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Slabs to forecast; defaults to the horizon stored in the model.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FillArg::Zero)]
    pub fill: FillArg,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Comma-separated test horizons in days.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub horizons: Vec<usize>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "mean,sir,seir,stelar_two_step,stelar")]
    pub methods: Vec<String>,
    /// Comma-separated signal indices; all signals when absent.
    #[arg(long, value_delimiter = ',')]
    pub signals: Option<Vec<usize>>,
    /// Report CSV; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Components to report; all when absent.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub n_locations: usize,
    #[arg(long, default_value_t = 5)]
    pub n_signals: usize,
    /// Component JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Temporal profiles as `component,date,value` CSV.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stelar: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::Forecast(a) => forecast(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Inspect(a) => inspect(&a),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct TruthFile<'a> {
    spec: &'a SyntheticSpec,
    location_factor: FlatMatrix,
    signal_factor: FlatMatrix,
    /// Temporal factor over the observed and future slabs.
    temporal_factor: FlatMatrix,
    components: Vec<SirComponent>,
}

fn synth(a: &SynthArgs) -> Result<()> {
    if !(a.population > 0.0 && a.population.is_finite()) {
        return Err(StelarError::usage("population must be positive"));
    }
    let mut spec = SyntheticSpec::with_presets(a.locations, a.signals, a.len, a.rank, a.population);
    spec.horizon = a.horizon;
    spec.noise_level = a.noise;
    spec.seed = a.seed;
    spec.start_date = a.start_date;
    let (bundle, truth) = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    emit_csv(&bundle, &a.out_dir.join("data.csv"))?;
    let doc = TruthFile {
        spec: &spec,
        location_factor: FlatMatrix::from_matrix(&truth.model.a),
        signal_factor: FlatMatrix::from_matrix(&truth.model.b),
        temporal_factor: FlatMatrix::from_matrix(&truth.c_extended),
        components: truth.sir.components().collect(),
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| StelarError::numerical(format!("cannot serialize truth: {e}")))?;
    fs::write(a.out_dir.join("truth.json"), json)?;
    if let Some(future) = truth.future {
        let future = TensorBundle::new(
            future,
            bundle.location_labels.clone(),
            bundle.signal_labels.clone(),
            offset_date(bundle.start_date, a.len),
        )?;
        emit_csv(&future, &a.out_dir.join("future.csv"))?;
    }
    eprintln!(
        "wrote {}x{}x{} tensor to {}",
        a.locations,
        a.signals,
        a.len,
        a.out_dir.display()
    );
    Ok(())
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    let bundle = ingest_csv(&a.input, a.fill.into())?;
    let settings = a.hyper.settings()?;
    let hp = settings.resolve(&bundle.tensor);
    let (nu, fitted) = fit_with_nu(&bundle.tensor, &hp, &settings.nu)?;
    let used = Hyperparams { nu, ..hp };
    let file = ModelFile::new(
        &fitted,
        &used,
        bundle.location_labels.clone(),
        bundle.signal_labels.clone(),
        bundle.start_date,
    )?;
    file.save(&a.model)?;
    eprintln!(
        "fit rank {} (mu {:.4e}, nu {:.4e}): best iteration {} of {}, stopped by {:?}, objective {:.6e}",
        used.rank,
        used.mu,
        used.nu,
        fitted.best_iteration + 1,
        fitted.objective_trace.len(),
        fitted.stopped_reason,
        fitted.objective_trace[fitted.best_iteration],
    );
    Ok(())
}

fn forecast(a: &ForecastArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let fitted = file.to_fitted()?;
    let horizon = a.horizon.unwrap_or(file.hyperparams.horizon);
    if horizon == 0 {
        return Err(StelarError::usage("horizon must be >= 1"));
    }
    let pred = predict_slabs(&fitted, horizon)?;
    let mut out = output(&a.out)?;
    write_forecast_csv(
        &pred,
        &file.location_labels,
        &file.signal_labels,
        file.forecast_start(),
        &mut out,
    )?;
    out.flush()?;
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let bundle = ingest_csv(&a.input, a.fill.into())?;
    let settings = a.hyper.settings()?;
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>>>()?;
    let signals = a
        .signals
        .clone()
        .unwrap_or_else(|| (0..bundle.tensor.signals()).collect());
    let opts = EvalOptions {
        hp: settings.resolve(&bundle.tensor),
        nu: settings.nu.clone(),
    };
    let report = evaluate_horizons(
        &methods,
        &bundle.tensor,
        opts.hp.val_window,
        &a.horizons,
        &signals,
        &opts,
    )?;
    if let Some(path) = &a.out {
        report.write_csv(File::create(path)?, &bundle.signal_labels)?;
    }
    print!("{}", report.to_table(&bundle.signal_labels));
    Ok(())
}

#[derive(Serialize)]
struct LabeledLoading<'a> {
    index: usize,
    label: &'a str,
    loading: f64,
}

fn labeled<'a>(labels: &'a [String], l: &Loading) -> LabeledLoading<'a> {
    LabeledLoading {
        index: l.index,
        label: labels.get(l.index).map_or("", |s| s.as_str()),
        loading: l.loading,
    }
}

#[derive(Serialize)]
struct ComponentRecord<'a> {
    component: usize,
    weight: f64,
    temporal_profile: Vec<f64>,
    top_locations: Vec<LabeledLoading<'a>>,
    top_signals: Vec<LabeledLoading<'a>>,
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let fitted = file.to_fitted()?;
    let top_k = a.top_k.unwrap_or(file.dims.rank);
    let summaries = extract_components(&fitted, top_k, a.n_locations, a.n_signals)?;
    let records: Vec<ComponentRecord> = summaries
        .iter()
        .map(|s| ComponentRecord {
            component: s.component,
            weight: s.weight,
            temporal_profile: s.temporal_profile.clone(),
            top_locations: s.top_locations.iter().map(|l| labeled(&file.location_labels, l)).collect(),
            top_signals: s.top_signals.iter().map(|l| labeled(&file.signal_labels, l)).collect(),
        })
        .collect();
    let json = serde_json::to_string_pretty(&records)
        .map_err(|e| StelarError::numerical(format!("cannot serialize components: {e}")))?;
    let mut out = output(&a.out)?;
    writeln!(out, "{json}")?;
    out.flush()?;
    if let Some(path) = &a.profiles {
        write_profiles(path, &summaries, file.start_date)?;
    }
    Ok(())
}

fn write_profiles(
    path: &Path,
    summaries: &[ComponentSummary],
    start: NaiveDate,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::io::csv_err)?;
    w.write_record(["component", "date", "value"])
        .map_err(crate::io::csv_err)?;
    for s in summaries {
        for (t, v) in s.temporal_profile.iter().enumerate() {
            w.write_record([
                s.component.to_string(),
                offset_date(start, t).to_string(),
                v.to_string(),
            ])
            .map_err(crate::io::csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
