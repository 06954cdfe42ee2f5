//! Command-line front end: argument parsing, JSON run configuration, CSV
//! ingestion and result serialization.
//!
//! Exit codes: 0 success, 1 input error, 2 configuration error,
//! 3 computed but not converged.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diagnostics::{diagnose, DiagnosticsConfig};
use crate::dualspace::{self, density_grid, forecast_next, mutual_information, transitions, vector_field, StatePoint};
use crate::error::Error;
use crate::loss::{FitKind, RegKind};
use crate::optimizer::{decompose, OptimizerConfig};
use crate::params::{BetaRule, Hyperparameters, Mode};
use crate::series::{DualSignal, TimeSeries, MIN_SERIES_LEN};
use crate::spc::{chart, WeightScheme, ZMode};
use crate::stats::pearson;
use crate::synth::{generate, scenario, ScenarioSpec, PRNG_IDENTITY};
use crate::tuning::{tune, Method, TuningSpec};

pub const SCHEMA_VERSION: &str = "1";

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DUALSIG_OUT_DIR";

const DEFAULT_OUT_DIR: &str = "dualsig-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Display) -> Self {
        Self { code: EXIT_INPUT, message: message.to_string() }
    }

    fn config(message: impl Display) -> Self {
        Self { code: EXIT_CONFIG, message: message.to_string() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dualsig", version, about = "Dual-signal decomposition of time series into mean, dispersion and noise")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn mean and dispersion signals and isolate the noise.
    Decompose(DecomposeArgs),
    /// Generate a synthetic series with known ground truth.
    Synth(SynthArgs),
    /// Per-point control-chart Z-values, p-values and weights.
    Spc(SpcArgs),
    /// Search hyperparameters that make the isolated noise stationary.
    Tune(TuneArgs),
    /// Analytics on the (mean, dispersion) plane.
    Dualspace(DualspaceArgs),
    /// Stationarity and whiteness diagnostics of any series.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct IoArgs {
    /// Input CSV file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Value column name; optional for single-column or (label, value) files.
    #[arg(long)]
    column: Option<String>,
    /// Label column passed through to the outputs.
    #[arg(long)]
    label_column: Option<String>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    parse_serde(s)
}
fn parse_fit(s: &str) -> std::result::Result<FitKind, String> {
    parse_serde(s)
}
fn parse_reg(s: &str) -> std::result::Result<RegKind, String> {
    parse_serde(s)
}
fn parse_zmode(s: &str) -> std::result::Result<ZMode, String> {
    parse_serde(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SchemeArg {
    None,
    Linear,
    Transformed,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum BetaRuleArg {
    Fixed,
    Estimated,
}

/// Hyperparameter overrides; each flag replaces the configured value.
#[derive(Debug, Args, Default)]
struct HyperArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    beta_mean: Option<f64>,
    #[arg(long)]
    beta_disp: Option<f64>,
    #[arg(long)]
    gamma_mean: Option<f64>,
    #[arg(long)]
    gamma_disp: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// SPC window length n.
    #[arg(long)]
    spc_window: Option<usize>,
    #[arg(long)]
    p_cutoff: Option<f64>,
    #[arg(long, value_enum)]
    weight_scheme: Option<SchemeArg>,
    /// k of the transformed weighting.
    #[arg(long, default_value_t = 9.0)]
    weight_k: f64,
    /// m of the transformed weighting.
    #[arg(long, default_value_t = 2.0)]
    weight_m: f64,
    #[arg(long, value_parser = parse_fit)]
    fit_kind: Option<FitKind>,
    #[arg(long, value_parser = parse_reg)]
    reg_kind: Option<RegKind>,
    #[arg(long, value_parser = parse_zmode)]
    z_mode: Option<ZMode>,
    #[arg(long, value_enum)]
    beta_rule: Option<BetaRuleArg>,
    /// C_β of the estimated rule.
    #[arg(long, default_value_t = 25.0)]
    c_beta: f64,
    #[arg(long)]
    disp_weighting: Option<bool>,
    #[arg(long)]
    huber_delta: Option<f64>,
    #[arg(long)]
    s_floor: Option<f64>,
}

impl HyperArgs {
    fn apply(&self, h: &mut Hyperparameters) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { h.$f = v; } )* };
        }
        set!(mode, beta_mean, beta_disp, gamma_mean, gamma_disp, theta, spc_window, p_cutoff, fit_kind, reg_kind, z_mode, disp_weighting);
        if let Some(s) = self.weight_scheme {
            h.weight_scheme = match s {
                SchemeArg::None => WeightScheme::None,
                SchemeArg::Linear => WeightScheme::Linear,
                SchemeArg::Transformed => WeightScheme::Transformed { k: self.weight_k, m: self.weight_m },
                SchemeArg::Binary => WeightScheme::Binary,
            };
        }
        if let Some(r) = self.beta_rule {
            h.beta_rule = match r {
                BetaRuleArg::Fixed => BetaRule::Fixed,
                BetaRuleArg::Estimated => BetaRule::Estimated { c_beta: self.c_beta },
            };
        }
        if self.huber_delta.is_some() {
            h.huber_delta = self.huber_delta;
        }
        if self.s_floor.is_some() {
            h.s_floor = self.s_floor;
        }
    }
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    rel_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Built-in scenario name.
    scenario: Option<String>,
    /// JSON scenario spec instead of a built-in name.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpcArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    budget: Option<usize>,
    /// Comma-separated start seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = parse_serde::<Method>)]
    method: Option<Method>,
}

#[derive(Debug, Args)]
struct DualspaceArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Grid cells along the mean axis.
    #[arg(long)]
    grid_m: Option<usize>,
    /// Grid cells along the dispersion axis.
    #[arg(long)]
    grid_s: Option<usize>,
    /// Equal-frequency bins for mutual information.
    #[arg(long)]
    bins: Option<usize>,
    /// Fill empty vector-field cells by inverse-distance weighting with this power.
    #[arg(long)]
    idw_power: Option<f64>,
    /// Forecast steps appended after the last state.
    #[arg(long)]
    forecast_steps: Option<usize>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long)]
    adf_max_lag: Option<usize>,
    #[arg(long)]
    lb_lags: Option<usize>,
    #[arg(long)]
    rolling_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualspaceOptions {
    pub grid_m: usize,
    pub grid_s: usize,
    pub bins: usize,
    pub idw_power: Option<f64>,
    pub forecast_steps: usize,
    /// Kernel bandwidth per axis; `None` uses the Silverman rule.
    pub bandwidth: Option<(f64, f64)>,
}

impl Default for DualspaceOptions {
    fn default() -> Self {
        Self { grid_m: 20, grid_s: 20, bins: 4, idw_power: None, forecast_steps: 0, bandwidth: None }
    }
}

/// JSON run configuration; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: Option<String>,
    pub input: Option<PathBuf>,
    pub column: Option<String>,
    pub label_column: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub hyperparameters: Hyperparameters,
    pub optimizer: OptimizerConfig,
    pub diagnostics: DiagnosticsConfig,
    pub tuning: Option<TuningSpec>,
    pub dualspace: DualspaceOptions,
    /// Scenario spec for `synth`.
    pub scenario: Option<ScenarioSpec>,
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
    if let Some(v) = &cfg.schema_version {
        if v != SCHEMA_VERSION {
            return Err(CliError::config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")));
        }
    }
    Ok(cfg)
}

/// Flag, then config, then the environment, then the built-in default.
fn output_dir(flag: Option<&PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.cloned()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// A numeric column read from CSV, with optional pass-through labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSeries {
    pub name: String,
    pub values: Vec<f64>,
    pub labels: Option<Vec<String>>,
}

fn parse_cell(raw: &str, row: usize, column: &str) -> CliResult<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| CliError::input(format!("row {row}, column '{column}': '{raw}' is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::input(format!("row {row}, column '{column}': value {raw} is not finite")));
    }
    Ok(v)
}

/// Reads named numeric columns from a headed CSV; rows are 1-based data rows.
pub fn read_columns(path: &Path, names: &[&str]) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::input(e.to_string()))?.clone();
    let idx = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| CliError::input(format!("{} has no column '{n}'", path.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(format!("row {}: {e}", row + 1)))?;
        for (k, &i) in idx.iter().enumerate() {
            let raw = rec.get(i).unwrap_or("");
            out[k].push(parse_cell(raw, row + 1, names[k])?);
        }
    }
    Ok(out)
}

/// Reads the value column (and labels) selected by name or by file shape.
pub fn read_series(path: &Path, column: Option<&str>, label_column: Option<&str>) -> CliResult<InputSeries> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::input(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(format!("{} has no column '{name}'", path.display())))
    };
    let (value_idx, label_idx) = match (column, headers.len()) {
        (Some(c), _) => (find(c)?, label_column.map(find).transpose()?),
        (None, 1) => (0, None),
        (None, 2) => (1, Some(label_column.map(find).transpose()?.unwrap_or(0))),
        (None, n) => {
            return Err(CliError::input(format!(
                "{} has {n} columns; choose one with --column (available: {})",
                path.display(),
                headers.join(", ")
            )))
        }
    };
    let name = headers.get(value_idx).cloned().unwrap_or_default();
    let mut values = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(format!("row {}: {e}", row + 1)))?;
        values.push(parse_cell(rec.get(value_idx).unwrap_or(""), row + 1, &name)?);
        if let (Some(l), Some(i)) = (labels.as_mut(), label_idx) {
            l.push(rec.get(i).unwrap_or("").to_string());
        }
    }
    Ok(InputSeries { name, values, labels })
}

fn input_path(flag: Option<&PathBuf>, cfg: &RunConfig) -> CliResult<PathBuf> {
    flag.cloned()
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| CliError::config("no input file; pass --input or set \"input\" in the config"))
}

/// Rejects series too short for the configured window before any computation.
fn require_length(len: usize, h: Option<&Hyperparameters>) -> CliResult<()> {
    let need = h.map_or(MIN_SERIES_LEN, |h| (h.spc_window + 2).max(MIN_SERIES_LEN));
    if len < need {
        return Err(CliError::config(format!("series has {len} points; at least {need} are required")));
    }
    Ok(())
}

fn load_series(io: &IoArgs, cfg: &RunConfig, h: Option<&Hyperparameters>) -> CliResult<(InputSeries, TimeSeries)> {
    let path = input_path(io.input.as_ref(), cfg)?;
    let column = io.column.as_deref().or(cfg.column.as_deref());
    let label = io.label_column.as_deref().or(cfg.label_column.as_deref());
    let input = read_series(&path, column, label)?;
    require_length(input.values.len(), h)?;
    let x = TimeSeries::new(input.values.clone())?;
    Ok((input, x))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(dir: &Path, name: &str, mut value: Value) -> CliResult<()> {
    if let Value::Object(map) = &mut value {
        map.insert("schema_version".into(), Value::String(SCHEMA_VERSION.into()));
    }
    let text = serde_json::to_string_pretty(&value).map_err(|e| CliError::input(e.to_string()))? + "\n";
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

/// Writes a CSV from a header and pre-formatted rows.
fn write_csv(dir: &Path, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let path = dir.join(name);
    let err = |e: csv::Error| CliError::input(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

/// Shortest decimal that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn resolve_hyper(cfg: &RunConfig, args: &HyperArgs) -> CliResult<Hyperparameters> {
    let mut h = cfg.hyperparameters.clone();
    args.apply(&mut h);
    h.validate()?;
    Ok(h)
}

fn cmd_decompose(a: &DecomposeArgs) -> CliResult<i32> {
    let cfg = load_config(a.io.config.as_deref())?;
    let h = resolve_hyper(&cfg, &a.hyper)?;
    let mut opt = cfg.optimizer.clone();
    if let Some(v) = a.max_iterations {
        opt.max_iterations = v;
    }
    if let Some(v) = a.rel_tolerance {
        opt.rel_tolerance = v;
    }
    opt.validate()?;
    let (input, x) = load_series(&a.io, &cfg, Some(&h))?;
    let out = output_dir(a.io.out.as_ref(), &cfg);
    let r = decompose(&x, &h, &opt)?;
    create_dir(&out)?;

    let mut header = vec!["t"];
    if input.labels.is_some() {
        header.push("label");
    }
    header.extend(["x", "m", "s", "eps", "w"]);
    let rows = (0..x.len()).map(|t| {
        let mut row = vec![(t + 1).to_string()];
        if let Some(l) = &input.labels {
            row.push(l[t].clone());
        }
        row.extend([
            num(x.values()[t]),
            num(r.signal.mean()[t]),
            num(r.signal.dispersion()[t]),
            num(r.noise.values()[t]),
            num(r.weights[t]),
        ]);
        row
    });
    write_csv(&out, "decomposition.csv", &header, rows)?;

    let diag = match &r.diagnostics {
        Some(d) => to_value(d),
        None => Value::Null,
    };
    let diag_error = match &r.diagnostics {
        Some(_) => Value::Null,
        None => match diagnose(r.noise.values(), Some(&r.signal), &cfg.diagnostics) {
            Ok(_) => Value::Null,
            Err(e) => Value::String(e.to_string()),
        },
    };
    let meta = json!({
        "input": input_path(a.io.input.as_ref(), &cfg)?.display().to_string(),
        "column": input.name,
        "hyperparameters": to_value(&h),
        "optimizer": to_value(&opt),
        "converged": r.converged,
        "iterations": r.iterations,
    });
    write_json(&out, "diagnostics.json", json!({ "run": meta.clone(), "diagnostics": diag, "error": diag_error }))?;
    write_json(
        &out,
        "loss.json",
        json!({
            "run": meta,
            "mode": to_value(&r.mode),
            "loss_value": r.loss_value,
            "loss": to_value(&r.loss),
            "beta_mean": r.beta_mean,
            "beta_disp": r.beta_disp,
            "series_scale": r.scale,
            "huber_delta": r.huber_delta,
            "s_floor": r.s_floor,
        }),
    )?;
    Ok(if r.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_synth(a: &SynthArgs) -> CliResult<i32> {
    let (mut spec, name) = match (&a.scenario, &a.spec) {
        (Some(_), Some(_)) => return Err(CliError::config("give either a scenario name or --spec, not both")),
        (Some(n), None) => (scenario(n).map_err(|e| CliError::config(e.to_string()))?, n.clone()),
        (None, Some(path)) => {
            let cfg = load_config(Some(path))?;
            let spec = cfg.scenario.ok_or_else(|| CliError::config(format!("{} has no \"scenario\" section", path.display())))?;
            (spec, "custom".to_string())
        }
        (None, None) => return Err(CliError::config("missing scenario name or --spec")),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| CliError::config(e.to_string()))?;
    let s = generate(&spec)?;
    let out = output_dir(a.out.as_ref(), &RunConfig::default());
    create_dir(&out)?;
    let rows = (0..s.x.len()).map(|t| {
        vec![
            (t + 1).to_string(),
            num(s.x.values()[t]),
            num(s.true_mean[t]),
            num(s.true_disp[t]),
            num(s.true_noise[t]),
        ]
    });
    write_csv(&out, "synthetic.csv", &["t", "x", "true_m", "true_s", "true_eps"], rows)?;
    write_json(&out, "synthetic.json", json!({ "scenario": name, "spec": to_value(&spec), "prng": PRNG_IDENTITY }))?;
    Ok(EXIT_OK)
}

fn cmd_spc(a: &SpcArgs) -> CliResult<i32> {
    let cfg = load_config(a.io.config.as_deref())?;
    let h = resolve_hyper(&cfg, &a.hyper)?;
    let (input, x) = load_series(&a.io, &cfg, Some(&h))?;
    let c = chart(&x, h.spc_window, h.z_mode, h.weight_scheme, h.p_cutoff)?;
    let out = output_dir(a.io.out.as_ref(), &cfg);
    create_dir(&out)?;
    let mut header = vec!["t"];
    if input.labels.is_some() {
        header.push("label");
    }
    header.extend(["x", "z", "p", "w"]);
    let rows = (0..x.len()).map(|t| {
        let mut row = vec![(t + 1).to_string()];
        if let Some(l) = &input.labels {
            row.push(l[t].clone());
        }
        // an undefined Z is written as an empty cell
        row.extend([
            num(x.values()[t]),
            c.z.values[t].map(num).unwrap_or_default(),
            num(c.p[t]),
            num(c.w.values[t]),
        ]);
        row
    });
    write_csv(&out, "spc.csv", &header, rows)?;
    write_json(&out, "spc.json", json!({ "hyperparameters": to_value(&h) }))?;
    Ok(EXIT_OK)
}

fn cmd_tune(a: &TuneArgs) -> CliResult<i32> {
    let cfg = load_config(a.io.config.as_deref())?;
    let h = resolve_hyper(&cfg, &a.hyper)?;
    let mut spec = cfg.tuning.clone().unwrap_or_default();
    if spec.search_space.base != Hyperparameters::default() && spec.search_space.base != h {
        return Err(CliError::config("set the base hyperparameters in the top-level \"hyperparameters\" section"));
    }
    spec.search_space.base = h.clone();
    if spec.search_space.is_empty() {
        return Err(CliError::config("the tuning search space is empty"));
    }
    if let Some(b) = a.budget {
        spec.budget = b;
    }
    if let Some(s) = &a.seeds {
        spec.seeds = s.clone();
    }
    if let Some(m) = a.method {
        spec.method = m;
    }
    let (_, x) = load_series(&a.io, &cfg, Some(&h))?;
    let out = output_dir(a.io.out.as_ref(), &cfg);
    let result = match tune(&x, &spec) {
        Ok(r) => r,
        Err(Error::Tuning { message, trace }) => {
            create_dir(&out)?;
            write_trace(&out, &trace)?;
            return Err(CliError::input(format!("tuning failed after {} evaluations: {message}", trace.len())));
        }
        Err(e) => return Err(e.into()),
    };
    create_dir(&out)?;
    write_trace(&out, &result.trace)?;
    write_json(
        &out,
        "best_h.json",
        json!({ "hyperparameters": to_value(&result.best_h), "optimizer": to_value(&spec.optimizer) }),
    )?;
    write_json(
        &out,
        "tuning.json",
        json!({
            "best_score": result.best_score,
            "best_index": result.best_index,
            "evaluations": result.trace.len(),
            "spec": to_value(&spec),
            "best_diagnostics": to_value(&result.trace[result.best_index].diagnostics),
        }),
    )?;
    Ok(EXIT_OK)
}

fn write_trace(out: &Path, trace: &[crate::tuning::TraceEntry]) -> CliResult<()> {
    let header = [
        "index", "phase", "score", "converged", "mode", "beta_rule", "beta_mean", "beta_disp", "gamma_mean",
        "gamma_disp", "theta", "spc_window", "p_cutoff", "weight_scheme", "fit_kind", "reg_kind", "z_mode",
        "disp_weighting", "adf_p", "lb_p", "kl", "error",
    ];
    let compact = |v: Value| match v {
        Value::String(s) => s,
        other => other.to_string(),
    };
    let rows = trace.iter().map(|e| {
        let h = &e.h;
        let d = e.diagnostics.as_ref();
        vec![
            e.index.to_string(),
            compact(to_value(&e.phase)),
            e.score.map(num).unwrap_or_default(),
            e.converged.to_string(),
            compact(to_value(&h.mode)),
            compact(to_value(&h.beta_rule)),
            num(h.beta_mean),
            num(h.beta_disp),
            num(h.gamma_mean),
            num(h.gamma_disp),
            num(h.theta),
            h.spc_window.to_string(),
            num(h.p_cutoff),
            compact(to_value(&h.weight_scheme)),
            compact(to_value(&h.fit_kind)),
            compact(to_value(&h.reg_kind)),
            compact(to_value(&h.z_mode)),
            h.disp_weighting.to_string(),
            d.map(|d| num(d.adf_p)).unwrap_or_default(),
            d.map(|d| num(d.lb_p)).unwrap_or_default(),
            d.map(|d| num(d.kl_to_standard_normal)).unwrap_or_default(),
            e.error.clone().unwrap_or_default(),
        ]
    });
    write_csv(out, "trace.csv", &header, rows)
}

fn cmd_dualspace(a: &DualspaceArgs) -> CliResult<i32> {
    let cfg = load_config(a.io.config.as_deref())?;
    let mut o = cfg.dualspace.clone();
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { o.$f = v; } )* };
    }
    set!(grid_m, grid_s, bins, forecast_steps);
    if a.idw_power.is_some() {
        o.idw_power = a.idw_power;
    }
    if o.grid_m < 2 || o.grid_s < 2 || o.bins < 2 {
        return Err(CliError::config("grid_m, grid_s and bins must be at least 2"));
    }
    let path = input_path(a.io.input.as_ref(), &cfg)?;
    let cols = read_columns(&path, &["m", "s"])?;
    let (m, s) = (cols[0].clone(), cols[1].clone());
    if m.len() < 2 {
        return Err(CliError::input("dualspace needs at least 2 rows"));
    }
    let signal = DualSignal::new(m.clone(), s.clone())?;
    let points = dualspace::states(&signal);
    let edges = transitions(&points)?;
    // identical states have no kernel bandwidth; fall back to a point mass
    let (density, point_mass) = match density_grid(&points, (o.grid_m, o.grid_s), o.bandwidth) {
        Ok(g) => (g, false),
        Err(Error::Degenerate(_)) => (density_grid(&points, (o.grid_m, o.grid_s), Some((0.0, 0.0)))?, true),
        Err(e) => return Err(e.into()),
    };
    let field = vector_field(&edges, &density.axes, o.idw_power)?;
    let last = points[points.len() - 1];
    let forecast: Vec<StatePoint> = forecast_next(last, &field, &density, o.forecast_steps)?;

    let out = output_dir(a.io.out.as_ref(), &cfg);
    create_dir(&out)?;
    let state_rows = points
        .iter()
        .map(|p| ("observed", p))
        .chain(forecast.iter().map(|p| ("forecast", p)))
        .map(|(kind, p)| vec![(p.t + 1).to_string(), num(p.m), num(p.s), kind.to_string()]);
    write_csv(&out, "states.csv", &["t", "m", "s", "kind"], state_rows)?;
    let edge_rows = edges.iter().map(|e| {
        vec![(e.from + 1).to_string(), (e.to + 1).to_string(), num(e.m_from), num(e.s_from), num(e.dm), num(e.ds)]
    });
    write_csv(&out, "edges.csv", &["from", "to", "m_from", "s_from", "dm", "ds"], edge_rows)?;

    let ax = &density.axes;
    let (mc, sc) = (ax.m_centers(), ax.s_centers());
    let cell_rows = |extra: &dyn Fn(usize) -> Vec<String>| -> Vec<Vec<String>> {
        let mut rows = Vec::with_capacity(ax.nm() * ax.ns());
        for (i, &m_center) in mc.iter().enumerate() {
            for (j, &s_center) in sc.iter().enumerate() {
                let mut r = vec![
                    i.to_string(),
                    j.to_string(),
                    num(ax.m_edges[i]),
                    num(ax.m_edges[i + 1]),
                    num(ax.s_edges[j]),
                    num(ax.s_edges[j + 1]),
                    num(m_center),
                    num(s_center),
                ];
                r.extend(extra(i * ax.ns() + j));
                rows.push(r);
            }
        }
        rows
    };
    let cell_header = ["i", "j", "m_lo", "m_hi", "s_lo", "s_hi", "m_center", "s_center"];
    let mut h1 = cell_header.to_vec();
    h1.push("mass");
    write_csv(&out, "density.csv", &h1, cell_rows(&|c| vec![num(density.cells[c])]))?;
    let mut h2 = cell_header.to_vec();
    h2.extend(["dm", "ds", "support", "status"]);
    let status = |c: usize| match to_value(&field.status[c]) {
        Value::String(s) => s,
        v => v.to_string(),
    };
    write_csv(
        &out,
        "vector_field.csv",
        &h2,
        cell_rows(&|c| vec![num(field.dm[c]), num(field.ds[c]), field.support[c].to_string(), status(c)]),
    )?;

    let (mi, mi_error) = match mutual_information(&m, &s, o.bins) {
        Ok(v) => (Value::from(v), Value::Null),
        Err(e) => (Value::Null, Value::String(e.to_string())),
    };
    let mut summary = BTreeMap::new();
    summary.insert("input", Value::String(path.display().to_string()));
    summary.insert("options", to_value(&o));
    summary.insert("grid", to_value(&density.axes));
    summary.insert("bandwidth", to_value(&density.bandwidth));
    summary.insert("point_mass_fallback", Value::Bool(point_mass));
    summary.insert("mutual_information", mi);
    summary.insert("mutual_information_error", mi_error);
    summary.insert("pearson_m_s", pearson(&m, &s).map_or(Value::Null, Value::from));
    summary.insert("states", Value::from(points.len()));
    summary.insert("forecast_steps", Value::from(forecast.len()));
    write_json(&out, "dualspace.json", to_value(&summary))?;
    Ok(EXIT_OK)
}

fn cmd_diagnose(a: &DiagnoseArgs) -> CliResult<i32> {
    let cfg = load_config(a.io.config.as_deref())?;
    let mut d = cfg.diagnostics.clone();
    if a.adf_max_lag.is_some() {
        d.adf_max_lag = a.adf_max_lag;
    }
    if a.lb_lags.is_some() {
        d.lb_lags = a.lb_lags;
    }
    if a.rolling_window.is_some() {
        d.rolling_window = a.rolling_window;
    }
    let (input, x) = load_series(&a.io, &cfg, None)?;
    let report = diagnose(x.values(), None, &d)?;
    let out = output_dir(a.io.out.as_ref(), &cfg);
    create_dir(&out)?;
    write_json(
        &out,
        "diagnostics.json",
        json!({ "column": input.name, "config": to_value(&d), "diagnostics": to_value(&report) }),
    )?;
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command;
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Decompose(a) => cmd_decompose(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Spc(a) => cmd_spc(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Dualspace(a) => cmd_dualspace(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(code) => {
            if code == EXIT_NOT_CONVERGED {
                eprintln!("warning: optimizer did not converge; results were written anyway");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
