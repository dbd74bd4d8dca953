//! Command-line front end: run configuration parsing and the `derive`,
//! `simulate`, `fig2`, `validate` and `sweep` commands.
//!
//! Exit codes: 0 success, 1 configuration error, 2 hard failure of a
//! physical precondition, 3 failed validation check.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::analysis::{self, FieldProbe, SqueezingReport, DEFAULT_N_TARGET};
use crate::dynamics::{self, ArrivalProcess, CollisionSpec, OverlapPolicy};
use crate::error::{Error, Result};
use crate::gaussian;
use crate::hilbert::{AtomLevel, SpaceDescriptor, StateVector};
use crate::model::{self, Channel, ParamFile, PhysicalParams, StarkShifts};
use crate::protocol::{self, Engine, InitialField, ProtocolSpec, ProtocolStep, SwapRule};
use crate::C64;

/// The experimental parameter set shipped with the binary.
pub const BUNDLED_CONFIG: &str = include_str!("../../../configs/default.json");

/// Worker-count override for the global thread pool.
pub const WORKERS_ENV: &str = "RAMAN_SQUEEZE_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_HARD_FAILURE: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

const OPTION_KEYS: [&str; 14] = [
    "step2",
    "engine",
    "truncation",
    "seed",
    "samples",
    "n_target",
    "gamma_t",
    "step_duration_s",
    "trajectories",
    "overlap_policy",
    "include_stark",
    "swap",
    "initial",
    "r_values",
];

/// Default r grid of `fig2`.
pub fn default_r_grid() -> Vec<f64> {
    (2..=19).map(|k| k as f64 / 20.0).collect()
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParams(_) | Error::Protocol(_) => EXIT_CONFIG,
        _ => EXIT_HARD_FAILURE,
    }
}

/// How step durations are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DurationRule {
    /// Fixed duration per step in seconds.
    Seconds(f64),
    /// `γ T` per step.
    GammaT(f64),
    /// Preparation time down to this residual Bogoliubov occupation.
    NTarget(f64),
}

/// A parsed run configuration.
///
/// The JSON layout holds the nine parameter keys of [`ParamFile`] plus
/// optional run options; keys starting with `_` are comments. When several
/// duration keys are present `step_duration_s` wins over `gamma_t`, which
/// wins over `n_target`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: ParamFile,
    /// Explicit companion step instead of the swap construction.
    pub step2: Option<ParamFile>,
    pub engine: Engine,
    pub truncation: (usize, usize),
    pub seed: u64,
    pub samples: usize,
    pub duration: DurationRule,
    pub trajectories: usize,
    pub overlap_policy: OverlapPolicy,
    pub include_stark: bool,
    pub swap: SwapRule,
    pub initial: InitialField,
    pub r_values: Option<Vec<f64>>,
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], context: &str) -> Result<()> {
    for k in obj.keys() {
        if !k.starts_with('_') && !allowed.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown key {context}{k:?}")));
        }
    }
    Ok(())
}

fn number(obj: &Map<String, Value>, key: &str, context: &str) -> Result<Option<f64>> {
    match obj.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("key {context}{key:?} must be a number"))),
    }
}

fn unsigned(obj: &Map<String, Value>, key: &str) -> Result<Option<u64>> {
    match obj.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("key {key:?} must be a non-negative integer"))),
    }
}

fn param_file(obj: &Map<String, Value>, context: &str) -> Result<ParamFile> {
    let mut vals = [0.0; 9];
    for (slot, key) in vals.iter_mut().zip(ParamFile::KEYS) {
        *slot = number(obj, key, context)?
            .ok_or_else(|| Error::Config(format!("missing key {context}{key:?}")))?;
    }
    let [omega1_hz, omega2_hz, g1_hz, g2_hz, delta1_hz, delta2_hz, gamma_e_hz, r_a_hz, tau_s] =
        vals;
    Ok(ParamFile {
        omega1_hz,
        omega2_hz,
        g1_hz,
        g2_hz,
        delta1_hz,
        delta2_hz,
        gamma_e_hz,
        r_a_hz,
        tau_s,
    })
}

fn parse_truncation(v: &Value) -> Result<(usize, usize)> {
    let bad = || Error::Config("key \"truncation\" must be an integer or [N1, N2]".into());
    match v {
        Value::Number(n) => {
            let n = n.as_u64().ok_or_else(bad)? as usize;
            Ok((n, n))
        }
        Value::Array(a) if a.len() == 2 => {
            let n1 = a[0].as_u64().ok_or_else(bad)? as usize;
            let n2 = a[1].as_u64().ok_or_else(bad)? as usize;
            Ok((n1, n2))
        }
        _ => Err(bad()),
    }
}

/// Parses `"N1,N2"` or a single `N`.
pub fn parse_truncation_flag(s: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parse = |p: &str| p.parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    match parts.as_slice() {
        [n] => {
            let n = parse(n)?;
            Ok((n, n))
        }
        [a, b] => Ok((parse(a)?, parse(b)?)),
        _ => Err("expected N1,N2".into()),
    }
}

fn parse_swap(v: &Value, params: &ParamFile) -> Result<SwapRule> {
    match v {
        Value::String(s) if s == "symmetric" => Ok(SwapRule::Symmetric),
        Value::Object(o) => {
            reject_unknown(o, &["omega1_hz", "omega2_hz"], "swap.")?;
            let get = |k: &str| {
                number(o, k, "swap.")?
                    .ok_or_else(|| Error::Config(format!("missing key \"swap.{k}\"")))
            };
            let w = 2.0 * PI;
            Ok(SwapRule::Explicit {
                omega_tilde1: w * get("omega1_hz")? * w * params.g1_hz,
                omega_tilde2: w * get("omega2_hz")? * w * params.g2_hz,
            })
        }
        _ => Err(Error::Config(
            "key \"swap\" must be \"symmetric\" or {\"omega1_hz\", \"omega2_hz\"}".into(),
        )),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let mut allowed: Vec<&str> = ParamFile::KEYS.to_vec();
        allowed.extend(OPTION_KEYS);
        reject_unknown(obj, &allowed, "")?;

        let params = param_file(obj, "")?;
        let step2 = match obj.get("step2") {
            None => None,
            Some(Value::Object(o)) => {
                reject_unknown(o, &ParamFile::KEYS, "step2.")?;
                Some(param_file(o, "step2.")?)
            }
            Some(_) => return Err(Error::Config("key \"step2\" must be an object".into())),
        };
        let engine = match obj.get("engine") {
            None => Engine::default(),
            Some(Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("key \"engine\" must be a string".into())),
        };
        let truncation = obj
            .get("truncation")
            .map(parse_truncation)
            .transpose()?
            .unwrap_or((15, 15));
        let duration = if let Some(t) = number(obj, "step_duration_s", "")? {
            DurationRule::Seconds(t)
        } else if let Some(g) = number(obj, "gamma_t", "")? {
            DurationRule::GammaT(g)
        } else {
            DurationRule::NTarget(number(obj, "n_target", "")?.unwrap_or(DEFAULT_N_TARGET))
        };
        let overlap_policy = match obj.get("overlap_policy") {
            None => OverlapPolicy::default(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|_| {
                Error::Config("key \"overlap_policy\" must be \"drop\" or \"defer\"".into())
            })?,
        };
        let include_stark = match obj.get("include_stark") {
            None => false,
            Some(v) => v
                .as_bool()
                .ok_or_else(|| Error::Config("key \"include_stark\" must be a boolean".into()))?,
        };
        let swap = obj
            .get("swap")
            .map(|v| parse_swap(v, &params))
            .transpose()?
            .unwrap_or_default();
        let initial = match obj.get("initial") {
            None => InitialField::default(),
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("key \"initial\": {e}")))?,
        };
        let r_values = match obj.get("r_values") {
            None => None,
            Some(v) => Some(serde_json::from_value::<Vec<f64>>(v.clone()).map_err(|_| {
                Error::Config("key \"r_values\" must be an array of numbers".into())
            })?),
        };
        Ok(Self {
            params,
            step2,
            engine,
            truncation,
            seed: unsigned(obj, "seed")?.unwrap_or(0),
            samples: unsigned(obj, "samples")?.unwrap_or(50) as usize,
            duration,
            trajectories: unsigned(obj, "trajectories")?.unwrap_or(200) as usize,
            overlap_policy,
            include_stark,
            swap,
            initial,
            r_values,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Self::from_json(BUNDLED_CONFIG),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn physical(&self) -> Result<PhysicalParams> {
        self.params.to_params()
    }

    /// Both steps in execution order, with zero durations.
    pub fn build_steps(&self) -> Result<ProtocolSpec> {
        let given = self.physical()?;
        let mut spec = match &self.step2 {
            None => protocol::build_two_step_protocol(&given, self.swap)?,
            Some(p2) => {
                let a = ProtocolStep::new(given, 0.0)?;
                let b = ProtocolStep::new(p2.to_params()?, 0.0)?;
                if a.channel() == b.channel() {
                    return Err(Error::Protocol(
                        "step2 drives the same channel as the first step".into(),
                    ));
                }
                let steps = if a.channel() == Channel::B1 {
                    vec![a, b]
                } else {
                    vec![b, a]
                };
                ProtocolSpec::from_steps(steps)?
            }
        };
        spec.engine = self.engine;
        spec.truncation = self.truncation;
        spec.seed = self.seed;
        spec.trajectories = self.trajectories;
        spec.overlap_policy = self.overlap_policy;
        spec.include_stark = self.include_stark;
        spec.samples_per_step = self.samples;
        Ok(spec)
    }

    pub fn apply_durations(&self, spec: ProtocolSpec) -> Result<ProtocolSpec> {
        match self.duration {
            DurationRule::Seconds(t) => spec.with_durations(&[t; 2]),
            DurationRule::GammaT(g) => spec.with_gamma_t(g),
            DurationRule::NTarget(n) => spec.with_n_target(n),
        }
    }

    pub fn build_spec(&self) -> Result<ProtocolSpec> {
        self.apply_durations(self.build_steps()?)
    }

    fn n_target(&self) -> f64 {
        match self.duration {
            DurationRule::NTarget(n) => n,
            _ => DEFAULT_N_TARGET,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "raman-squeeze",
    version,
    about = "Two-mode squeezing by an engineered atomic reservoir"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Derived rates, regime checks and timing for a parameter set.
    Derive(CommonArgs),
    /// Runs the two-step protocol and writes the trajectory CSV.
    Simulate(CommonArgs),
    /// Preparation time and photon number against r.
    Fig2(Fig2Args),
    /// Runs the built-in oracle battery.
    Validate(ValidateArgs),
    /// Runs the protocol over a list of r or γT values.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Run configuration (JSON); defaults to the bundled parameter set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// fock, gaussian or collision.
    #[arg(long)]
    pub engine: Option<String>,
    /// Photon-number cutoffs as N1,N2.
    #[arg(long, value_parser = parse_truncation_flag)]
    pub truncation: Option<(usize, usize)>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Residual Bogoliubov occupation that sets the step duration.
    #[arg(long)]
    pub n_target: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Fig2Args {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated r values.
    #[arg(long, value_delimiter = ',')]
    pub r_values: Option<Vec<f64>>,
    /// Also write an SVG plot.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Multiplies every check tolerance.
    #[arg(long, default_value_t = 1.0)]
    pub tol_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    R,
    GammaT,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
}

impl CommonArgs {
    /// Loads the configuration and applies the flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = &self.engine {
            cfg.engine = e.parse()?;
        }
        if let Some(t) = self.truncation {
            cfg.truncation = t;
        }
        if let Some(n) = self.n_target {
            cfg.duration = DurationRule::NTarget(n);
        }
        Ok(cfg)
    }
}

fn hz(rad_per_s: f64) -> f64 {
    rad_per_s / (2.0 * PI)
}

fn channel_name(c: Channel) -> &'static str {
    match c {
        Channel::B1 => "b1",
        Channel::B2 => "b2",
    }
}

/// Derived parameters, regime report and timing as JSON.
pub fn cmd_derive(cfg: &RunConfig) -> Result<Value> {
    let steps = cfg.build_steps()?;
    let mut warnings = Vec::new();
    let spec = match cfg.apply_durations(steps.clone()) {
        Ok(s) => s,
        Err(e) => {
            warnings.push(format!("step durations unavailable: {e}"));
            steps
        }
    };
    let total = spec.total_duration();
    let mut step_json = Vec::new();
    for (k, s) in spec.steps.iter().enumerate() {
        let d = &s.derived;
        let regime = protocol::validate_regime(&s.params, d, total);
        for w in regime.warnings() {
            warnings.push(format!("step {}: {w}", k + 1));
        }
        step_json.push(json!({
            "channel": channel_name(d.channel),
            "atom_state": s.atom_state.label().to_string(),
            "params": ParamFile::from_params(&s.params),
            "theta1_over_2pi_hz": hz(d.theta1),
            "theta2_over_2pi_hz": hz(d.theta2),
            "theta_b_over_2pi_hz": hz(d.theta_b),
            "theta_b_rad_s": d.theta_b,
            "r": d.r,
            "epsilon": d.epsilon,
            "gamma_per_s": d.gamma,
            "duration_s": s.duration,
            "regime": regime.checks,
        }));
    }
    let given = model::derive_rates(&cfg.physical()?)?;
    let first = &spec.steps[0];
    let r = first.derived.r;
    let preparation = if first.gamma() > 0.0 {
        let p = analysis::preparation_time(r, first.gamma(), cfg.n_target())?;
        if let Some(w) = &p.warning {
            warnings.push(w.clone());
        }
        serde_json::to_value(p).expect("serializable")
    } else {
        Value::Null
    };
    let decay = model::spontaneous_decay_estimate(&first.params);
    Ok(json!({
        "given": {
            "channel": channel_name(given.channel),
            "theta1_over_2pi_hz": hz(given.theta1),
            "theta2_over_2pi_hz": hz(given.theta2),
            "theta_b_over_2pi_hz": hz(given.theta_b),
            "gamma_per_s": given.gamma,
        },
        "r": r,
        "epsilon": first.derived.epsilon,
        "n_bar": r * r / (1.0 - r * r),
        "total_time_s": total,
        "steps": step_json,
        "preparation": preparation,
        "decay": {
            "excited_occupation": decay.excited_occupation,
            "rate_per_s": decay.rate,
            "probability": decay.rate * total,
        },
        "warnings": warnings,
    }))
}

/// Trajectory CSV and final report of one protocol run.
#[derive(Clone, Debug)]
pub struct SimulateOutput {
    pub csv: String,
    pub report: Value,
    pub warnings: Vec<String>,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateOutput> {
    let spec = cfg.build_spec()?;
    let (traj, report) = protocol::run_protocol(&spec, &cfg.initial)?;
    Ok(SimulateOutput {
        csv: traj.to_csv(),
        report: json!({
            "engine": spec.engine,
            "seed": spec.seed,
            "r": spec.r(),
            "epsilon": spec.epsilon(),
            "step_durations_s": spec.steps.iter().map(|s| s.duration).collect::<Vec<_>>(),
            "total_duration_s": spec.total_duration(),
            "report": report,
            "diagnostics": traj.diagnostics,
        }),
        warnings: traj.diagnostics.warnings.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig2Row {
    pub r: f64,
    pub n_bar: f64,
    pub gamma: f64,
    pub t_per_step: f64,
    pub total_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fig2Output {
    pub rows: Vec<Fig2Row>,
    pub warnings: Vec<String>,
}

impl Fig2Output {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,n_bar,gamma,T_per_step,total_time_2T\n");
        for row in &self.rows {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                row.r, row.n_bar, row.gamma, row.t_per_step, row.total_time
            )
            .unwrap();
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let time: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.r, r.total_time * 1e3))
            .collect();
        let photons: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.r, r.n_bar)).collect();
        let mut svg = String::from(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"560\" font-family=\"sans-serif\" font-size=\"12\">\n",
        );
        svg.push_str(&line_panel(&time, "2T (ms)", 20.0, "#1f77b4"));
        svg.push_str(&line_panel(&photons, "n", 290.0, "#d62728"));
        svg.push_str("</svg>\n");
        svg
    }
}

/// One framed line plot, 560×220 at vertical offset `top`.
fn line_panel(points: &[(f64, f64)], y_label: &str, top: f64, colour: &str) -> String {
    let (left, width, height) = (60.0, 560.0, 220.0);
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        points
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    };
    let (x0, x1) = bounds(|p| p.0);
    let (_, y1) = bounds(|p| p.1);
    let y0 = 0.0;
    let sx = |x: f64| {
        left + if x1 > x0 {
            (x - x0) / (x1 - x0) * width
        } else {
            0.0
        }
    };
    let sy = |y: f64| {
        top + height
            - if y1 > y0 {
                (y - y0) / (y1 - y0) * height
            } else {
                0.0
            }
    };
    let mut g = String::new();
    writeln!(
        g,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{width}\" height=\"{height}\" fill=\"none\" stroke=\"black\"/>"
    )
    .unwrap();
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    writeln!(
        g,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"/>",
        path.join(" ")
    )
    .unwrap();
    let bottom = top + height;
    writeln!(
        g,
        "<text x=\"{left}\" y=\"{}\" text-anchor=\"middle\">{x0:.2}</text>",
        bottom + 16.0
    )
    .unwrap();
    writeln!(
        g,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x1:.2}</text>",
        left + width,
        bottom + 16.0
    )
    .unwrap();
    writeln!(
        g,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">r</text>",
        left + width / 2.0,
        bottom + 16.0
    )
    .unwrap();
    writeln!(
        g,
        "<text x=\"{}\" y=\"{bottom}\" text-anchor=\"end\">0</text>",
        left - 6.0
    )
    .unwrap();
    writeln!(
        g,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.3}</text>",
        left - 6.0,
        top + 10.0
    )
    .unwrap();
    writeln!(
        g,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">{y_label}</text>",
        left - 40.0,
        top + height / 2.0,
        left - 40.0,
        top + height / 2.0
    )
    .unwrap();
    g
}

/// Preparation time and vacuum-referenced photon number on an r grid.
///
/// At each r the weaker channel's drive is rescaled, so
/// `Θ_b(r) = Θ_strong √(1 − r²)` and `γ(r) = r_a Θ_b(r)² τ²`. Points are
/// evaluated in parallel and returned in input order.
pub fn cmd_fig2(cfg: &RunConfig, r_values: Option<&[f64]>) -> Result<Fig2Output> {
    let grid = r_values
        .map(<[f64]>::to_vec)
        .or_else(|| cfg.r_values.clone())
        .unwrap_or_else(default_r_grid);
    if grid.is_empty() {
        return Err(Error::Config("empty r grid".into()));
    }
    let base = cfg.physical()?;
    let n_target = cfg.n_target();
    let rows: Vec<Result<(Fig2Row, Option<String>)>> = grid
        .par_iter()
        .map(|&r| {
            let p = protocol::params_with_ratio(&base, r)?;
            let gamma = model::derive_rates(&p)?.gamma;
            let t = analysis::preparation_time(r, gamma, n_target)?;
            Ok((
                Fig2Row {
                    r,
                    n_bar: t.n_initial,
                    gamma,
                    t_per_step: t.per_step,
                    total_time: t.total,
                },
                t.warning.map(|w| format!("r = {r}: {w}")),
            ))
        })
        .collect();
    let mut out = Fig2Output {
        rows: Vec::with_capacity(grid.len()),
        warnings: Vec::new(),
    };
    for row in rows {
        let (row, warning) = row?;
        out.rows.push(row);
        out.warnings.extend(warning);
    }
    Ok(out)
}

/// Outcome of one validation check. `error` is compared against
/// `tolerance` scaled by the `--tol-scale` factor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub tol_scale: f64,
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationSummary {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            writeln!(
                out,
                "{:<32} {}  error {:.3e}  tol {:.3e}  {}",
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.error,
                c.tolerance * self.tol_scale,
                c.detail
            )
            .unwrap();
        }
        writeln!(out, "{} passed, {} failed", self.passed, self.failed).unwrap();
        out
    }
}

type CheckFn = fn(&RunConfig) -> Result<(f64, String)>;

/// Parameters with Θ_b = 1, r_a = 1, τ = 0.1 in scaled units, so that
/// Θ_b τ = r_a τ = 0.1 and γ = 0.01.
pub fn weak_beam_params(r: f64) -> Result<PhysicalParams> {
    let th1 = 1.0 / (1.0 - r * r).sqrt();
    PhysicalParams::new(
        th1 * 100.0,
        r * th1 * 200.0,
        1.0,
        1.0,
        -100.0,
        200.0,
        0.0,
        1.0,
        0.1,
    )
}

fn check_raman_rate(_: &RunConfig) -> Result<(f64, String)> {
    let p = RunConfig::from_json(BUNDLED_CONFIG)?.physical()?;
    let theta1 = hz(model::derive_rates(&p)?.theta1);
    Ok(((theta1 - 2000.0).abs(), format!("theta1/2pi = {theta1} Hz")))
}

fn squeeze_space() -> Result<SpaceDescriptor> {
    SpaceDescriptor::field(25, 25)
}

fn check_bogoliubov(_: &RunConfig) -> Result<(f64, String)> {
    let s = squeeze_space()?;
    let keep = |i: usize| {
        let (_, n1, n2) = s.decompose(i);
        n1 <= 12 && n2 <= 12
    };
    let mut worst = 0.0_f64;
    for j in [1, 2] {
        let exact = dynamics::b_mode_by_commutator_series(s, 0.5, j, 12)?;
        let closed = model::bogoliubov_mode(s, 0.5, j)?;
        worst = worst.max(exact.max_deviation_where(&closed, keep));
    }
    Ok((
        worst,
        "N = 25, eps = 0.5, n1, n2 <= 12, 12 nested commutators".into(),
    ))
}

fn check_tmsv(_: &RunConfig) -> Result<(f64, String)> {
    let s = squeeze_space()?;
    let mut worst = 0.0_f64;
    for eps in [0.2, 0.5, 0.6f64.atanh()] {
        let sq = model::build_squeeze_operator(s, eps)?;
        let built = sq
            .dagger()
            .apply(&StateVector::basis(s, AtomLevel::G, 0, 0)?);
        let series = analysis::tmsv_state_vector(s, eps)?;
        worst = worst.max(1.0 - series.inner(&built).norm_sqr());
    }
    Ok((worst, "1 - overlap, eps in {0.2, 0.5, atanh 0.6}".into()))
}

fn check_variance_fock(_: &RunConfig) -> Result<(f64, String)> {
    let s = SpaceDescriptor::field(20, 20)?;
    let eps = 0.6f64.atanh();
    let rho = crate::hilbert::DensityMatrix::pure(&analysis::tmsv_state_vector(s, eps)?);
    let v = analysis::epr_variances_fock(&rho)?.x_minus;
    Ok(((v - 0.125).abs(), format!("V(X1 - X2) = {v}")))
}

fn check_variance_gaussian(_: &RunConfig) -> Result<(f64, String)> {
    let v = gaussian::gaussian_tmsv(0.6f64.atanh())
        .epr_variances()
        .x_minus;
    Ok(((v - 0.125).abs(), format!("V(X1 - X2) = {v}")))
}

fn check_decay_ratio(_: &RunConfig) -> Result<(f64, String)> {
    let mut p = RunConfig::from_json(BUNDLED_CONFIG)?.physical()?;
    p.gamma_e = 1.0;
    let ratio = model::spontaneous_decay_estimate(&p).rate / p.gamma_e;
    Ok((
        (ratio - 1.6e-3).abs() / 1.6e-3,
        format!("Gamma_e / gamma_e = {ratio}"),
    ))
}

fn check_fig2_shape(cfg: &RunConfig) -> Result<(f64, String)> {
    let out = cmd_fig2(cfg, Some(&default_r_grid()))?;
    let mut worst = 0.0_f64;
    for row in &out.rows {
        worst = worst.max((row.n_bar - row.r * row.r / (1.0 - row.r * row.r)).abs());
    }
    for w in out.rows.windows(2) {
        worst = worst.max(w[0].total_time - w[1].total_time);
        worst = worst.max(w[0].n_bar - w[1].n_bar);
    }
    Ok((worst, "n_bar formula and monotone 2T".into()))
}

fn check_fig2_band(_: &RunConfig) -> Result<(f64, String)> {
    let cfg = RunConfig::from_json(BUNDLED_CONFIG)?;
    let out = cmd_fig2(&cfg, Some(&[0.95]))?;
    let ms = out.rows[0].total_time * 1e3;
    let outside = (5.0 - ms).max(ms - 9.0).max(0.0);
    Ok((outside, format!("2T(0.95) = {ms:.3} ms, band [5, 9] ms")))
}

fn r095_spec() -> Result<ProtocolSpec> {
    let mut cfg = RunConfig::from_json(BUNDLED_CONFIG)?;
    cfg.params = ParamFile::from_params(&protocol::params_with_ratio(&cfg.physical()?, 0.95)?);
    cfg.engine = Engine::Gaussian;
    cfg.duration = DurationRule::GammaT(9.2);
    cfg.build_spec()
}

fn check_gaussian_photons(_: &RunConfig) -> Result<(f64, String)> {
    let (_, rep) = protocol::run_protocol(&r095_spec()?, &InitialField::Vacuum)?;
    let target = 9.2564;
    let err = (rep.n1_mean - target)
        .abs()
        .max((rep.n2_mean - target).abs())
        / target;
    Ok((
        err,
        format!("n1 = {:.5}, n2 = {:.5}", rep.n1_mean, rep.n2_mean),
    ))
}

fn check_gaussian_variance(_: &RunConfig) -> Result<(f64, String)> {
    let (_, rep) = protocol::run_protocol(&r095_spec()?, &InitialField::Vacuum)?;
    let target = 0.5 * (-2.0 * 0.95f64.atanh()).exp();
    Ok((
        (rep.v_squeezed - target).abs() / target,
        format!("V = {:.6e}, target {target:.6e}", rep.v_squeezed),
    ))
}

fn check_tmsv_fixed_point(_: &RunConfig) -> Result<(f64, String)> {
    let eps = 0.8;
    let target = gaussian::gaussian_tmsv(eps);
    let mut worst = 0.0_f64;
    for which in [1, 2] {
        let out = gaussian::gaussian_lindblad_evolve(&target, eps, 1.0, which, 5.0)?;
        let d = (out.cov() - target.cov())
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        worst = worst.max(d);
    }
    Ok((
        worst,
        "covariance drift of the target under each jump".into(),
    ))
}

fn small_gaussian_spec(r: f64, gamma_t: f64) -> Result<ProtocolSpec> {
    let base = RunConfig::from_json(BUNDLED_CONFIG)?.physical()?;
    let p = protocol::params_with_ratio(&base, r)?;
    let mut spec =
        protocol::build_two_step_protocol(&p, SwapRule::Symmetric)?.with_gamma_t(gamma_t)?;
    spec.samples_per_step = 10;
    Ok(spec)
}

fn report_distance(a: &SqueezingReport, b: &SqueezingReport) -> f64 {
    [
        a.v_squeezed - b.v_squeezed,
        a.v_antisqueezed - b.v_antisqueezed,
        a.n1_mean - b.n1_mean,
        a.n2_mean - b.n2_mean,
        a.fidelity - b.fidelity,
    ]
    .iter()
    .fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn check_cross_engine(_: &RunConfig) -> Result<(f64, String)> {
    let mut spec = small_gaussian_spec(0.5, 12.0)?;
    let (_, g) = protocol::run_protocol(&spec, &InitialField::Vacuum)?;
    spec.engine = Engine::Fock;
    spec.truncation = (12, 12);
    let (_, f) = protocol::run_protocol(&spec, &InitialField::Vacuum)?;
    Ok((
        report_distance(&g, &f),
        "r = 0.5, N = 12, gamma T = 12".into(),
    ))
}

fn check_initial_state_independence(_: &RunConfig) -> Result<(f64, String)> {
    let mut spec = small_gaussian_spec(0.6, 12.0)?;
    spec.engine = Engine::Fock;
    spec.truncation = (15, 15);
    let (_, base) = protocol::run_protocol(&spec, &InitialField::Vacuum)?;
    let mut worst = 0.0_f64;
    for init in [
        InitialField::Fock(1, 1),
        InitialField::Coherent([0.5, -0.2, 0.1, 0.3]),
    ] {
        let (_, rep) = protocol::run_protocol(&spec, &init)?;
        worst = worst.max(report_distance(&base, &rep));
    }
    Ok((
        worst,
        "Fock engine, r = 0.6, N = 15, gamma T = 12: vacuum vs |1,1> vs coherent".into(),
    ))
}

fn check_step_order(_: &RunConfig) -> Result<(f64, String)> {
    let spec = small_gaussian_spec(0.8, 12.0)?;
    let (_, forward) = protocol::run_protocol(&spec, &InitialField::Vacuum)?;
    let (_, backward) = protocol::run_protocol(&spec.reversed(), &InitialField::Vacuum)?;
    Ok((
        report_distance(&forward, &backward),
        "b1 then b2 vs b2 then b1".into(),
    ))
}

fn check_epsilon_consistency(cfg: &RunConfig) -> Result<(f64, String)> {
    let spec = cfg.build_steps()?;
    let e: Vec<f64> = spec.steps.iter().map(|s| s.derived.epsilon).collect();
    Ok(((e[0] - e[1]).abs(), format!("eps = {:?}", e)))
}

fn check_arrivals(cfg: &RunConfig) -> Result<(f64, String)> {
    let n = 10_000;
    let rate = 2.5;
    let xs = ArrivalProcess::new(rate, cfg.seed, OverlapPolicy::Drop)?.inter_arrival_samples(n);
    let d = analysis::ks_statistic_exponential(&xs, rate);
    // Asymptotic 1 % critical value is 1.628 / sqrt(n); the check reports
    // the excess over it.
    let critical = 1.628 / (n as f64).sqrt();
    Ok((
        (d - critical).max(0.0),
        format!("KS D = {d:.5}, 1% critical {critical:.5}"),
    ))
}

fn collision_fixture() -> Result<(CollisionSpec, SpaceDescriptor)> {
    let d = model::derive_rates(&weak_beam_params(0.4)?)?;
    let spec = CollisionSpec {
        derived: d,
        stark: StarkShifts::zero(),
        atom: AtomLevel::G,
        tau: 0.1,
    };
    Ok((spec, SpaceDescriptor::field(5, 5)?))
}

fn check_kraus_channel(_: &RunConfig) -> Result<(f64, String)> {
    let (spec, s) = collision_fixture()?;
    let rho = InitialField::Thermal(0.3, 0.2).to_density(s)?;
    let kraus = spec.channel(s)?.apply(&rho);
    let literal = dynamics::collision_step(&rho, spec.atom, &spec.hamiltonian(s)?, spec.tau)?;
    let diff: Array2<C64> = kraus.matrix() - literal.matrix();
    let err = diff.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    Ok((err, "Kraus map vs joint evolution and partial trace".into()))
}

fn check_determinism(cfg: &RunConfig) -> Result<(f64, String)> {
    let (spec, s) = collision_fixture()?;
    let rho = crate::hilbert::DensityMatrix::vacuum(s);
    let probe = FieldProbe::new(s, spec.derived.epsilon)?;
    let arrivals = ArrivalProcess::new(1.0, cfg.seed, OverlapPolicy::Drop)?;
    let times: Vec<f64> = (0..=5).map(|k| 4.0 * k as f64).collect();
    let run = || dynamics::run_collision_ensemble(&rho, &spec, 20.0, &arrivals, 8, &times, &probe);
    let a = run()?.to_csv();
    let b = run()?.to_csv();
    Ok((
        if a == b { 0.0 } else { 1.0 },
        "two seeded ensembles, CSV compared bytewise".into(),
    ))
}

const CHECKS: [(&str, CheckFn, f64); 18] = [
    ("raman_rate_theta1", check_raman_rate, 1e-9),
    ("bogoliubov_identity", check_bogoliubov, 1e-6),
    ("tmsv_construction", check_tmsv, 1e-6),
    ("variance_formula_fock", check_variance_fock, 1e-4),
    ("variance_formula_gaussian", check_variance_gaussian, 1e-10),
    ("decay_estimate_ratio", check_decay_ratio, 1e-12),
    ("fig2_shape", check_fig2_shape, 1e-15),
    ("fig2_time_band", check_fig2_band, 0.0),
    ("gaussian_photons_r095", check_gaussian_photons, 0.02),
    ("gaussian_variance_r095", check_gaussian_variance, 0.03),
    ("tmsv_fixed_point", check_tmsv_fixed_point, 1e-10),
    ("cross_engine_r05", check_cross_engine, 1e-3),
    (
        "initial_state_independence",
        check_initial_state_independence,
        1e-3,
    ),
    ("step_order_symmetry", check_step_order, 1e-3),
    ("epsilon_consistency", check_epsilon_consistency, 1e-12),
    ("arrival_statistics_ks", check_arrivals, 0.0),
    ("kraus_vs_literal_collision", check_kraus_channel, 1e-10),
    ("seeded_determinism", check_determinism, 0.0),
];

/// Runs every check; a check that errors counts as failed.
pub fn cmd_validate(cfg: &RunConfig, tol_scale: f64) -> ValidationSummary {
    let checks: Vec<CheckOutcome> = CHECKS
        .iter()
        .map(|&(name, f, tol)| match f(cfg) {
            Ok((error, detail)) => CheckOutcome {
                name: name.into(),
                error,
                tolerance: tol,
                pass: error <= tol * tol_scale,
                detail,
            },
            Err(e) => CheckOutcome {
                name: name.into(),
                error: f64::NAN,
                tolerance: tol,
                pass: false,
                detail: e.to_string(),
            },
        })
        .collect();
    let passed = checks.iter().filter(|c| c.pass).count();
    ValidationSummary {
        tol_scale,
        passed,
        failed: checks.len() - passed,
        checks,
    }
}

/// Seed of sweep point `i`.
fn sweep_seed(seed: u64, i: usize) -> u64 {
    seed ^ ((i as u64) << 48)
}

/// One protocol run per value, in parallel, rows in input order.
pub fn cmd_sweep(cfg: &RunConfig, param: SweepParam, values: &[f64]) -> Result<String> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if param == SweepParam::R && cfg.step2.is_some() {
        return Err(Error::Config(
            "an r sweep needs a config without \"step2\"".into(),
        ));
    }
    let rows: Vec<Result<String>> = values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = cfg.clone();
            c.seed = sweep_seed(cfg.seed, i);
            match param {
                SweepParam::R => {
                    c.params =
                        ParamFile::from_params(&protocol::params_with_ratio(&cfg.physical()?, v)?)
                }
                SweepParam::GammaT => c.duration = DurationRule::GammaT(v),
            }
            let spec = c.build_spec()?;
            let (_, rep) = protocol::run_protocol(&spec, &c.initial)?;
            Ok(format!(
                "{v:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                spec.epsilon(),
                spec.total_duration(),
                rep.n1_mean,
                rep.n2_mean,
                rep.v_squeezed,
                rep.v_antisqueezed,
                rep.duan_sum,
                rep.fidelity,
                rep.truncation_leak
            ))
        })
        .collect();
    let name = match param {
        SweepParam::R => "r",
        SweepParam::GammaT => "gamma_t",
    };
    let mut out = format!(
        "{name},epsilon,total_time,n1_mean,n2_mean,v_squeezed,v_antisqueezed,duan_sum,fidelity,truncation_leak\n"
    );
    for row in rows {
        out.push_str(&row?);
        out.push('\n');
    }
    Ok(out)
}

/// Sizes the global thread pool from [`WORKERS_ENV`] when set.
pub fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| {
        Error::Config(format!(
            "{WORKERS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    if n == 0 {
        return Err(Error::Config(format!(
            "{WORKERS_ENV} must be a positive integer"
        )));
    }
    // A pool that is already initialized keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn report_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.report.json"))
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn dispatch(cli: &Cli) -> Result<i32> {
    configure_workers()?;
    match &cli.command {
        Command::Derive(a) => {
            let cfg = a.resolve()?;
            let v = cmd_derive(&cfg)?;
            write_output(a.out.as_deref(), &pretty(&v))?;
            Ok(EXIT_OK)
        }
        Command::Simulate(a) => {
            let cfg = a.resolve()?;
            let out = cmd_simulate(&cfg)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            match a.out.as_deref() {
                Some(p) => {
                    write_output(Some(p), &out.csv)?;
                    write_output(Some(&report_path(p)), &pretty(&out.report))?;
                }
                None => {
                    print!("{}", out.csv);
                    eprint!("{}", pretty(&out.report));
                }
            }
            Ok(EXIT_OK)
        }
        Command::Fig2(a) => {
            let cfg = a.common.resolve()?;
            let out = cmd_fig2(&cfg, a.r_values.as_deref())?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            write_output(a.common.out.as_deref(), &out.to_csv())?;
            if let Some(svg) = &a.svg {
                write_output(Some(svg), &out.to_svg())?;
            }
            Ok(EXIT_OK)
        }
        Command::Validate(a) => {
            let cfg = a.common.resolve()?;
            let summary = cmd_validate(&cfg, a.tol_scale);
            eprint!("{}", summary.table());
            write_output(a.common.out.as_deref(), &pretty(&summary))?;
            Ok(if summary.all_pass() {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Sweep(a) => {
            let cfg = a.common.resolve()?;
            let csv = cmd_sweep(&cfg, a.param, &a.values)?;
            write_output(a.common.out.as_deref(), &csv)?;
            Ok(EXIT_OK)
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled() -> RunConfig {
        RunConfig::from_json(BUNDLED_CONFIG).unwrap()
    }

    fn with_key(key: &str, value: Value) -> String {
        let mut v: Value = serde_json::from_str(BUNDLED_CONFIG).unwrap();
        v.as_object_mut().unwrap().insert(key.into(), value);
        v.to_string()
    }

    #[test]
    fn bundled_config_defaults() {
        let cfg = bundled();
        assert_eq!(cfg.engine, Engine::Gaussian);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.duration, DurationRule::NTarget(0.1));
        assert_eq!(cfg.truncation, (15, 15));
        assert_eq!(cfg.swap, SwapRule::Symmetric);
        assert_eq!(cfg.initial, InitialField::Vacuum);
    }

    #[test]
    fn unknown_and_missing_keys_are_named() {
        let e = RunConfig::from_json(&with_key("omega3_hz", json!(1.0))).unwrap_err();
        assert!(e.to_string().contains("omega3_hz"), "{e}");
        let mut v: Value = serde_json::from_str(BUNDLED_CONFIG).unwrap();
        v.as_object_mut().unwrap().remove("g2_hz");
        let e = RunConfig::from_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("g2_hz"), "{e}");
        let e = RunConfig::from_json(&with_key("tau_s", json!("fast"))).unwrap_err();
        assert!(e.to_string().contains("tau_s"), "{e}");
        assert!(RunConfig::from_json(&with_key("_note", json!([1, 2]))).is_ok());
        assert_eq!(exit_code(&e), EXIT_CONFIG);
    }

    #[test]
    fn duration_precedence() {
        let mut v: Value = serde_json::from_str(BUNDLED_CONFIG).unwrap();
        let o = v.as_object_mut().unwrap();
        o.insert("gamma_t".into(), json!(4.0));
        o.insert("step_duration_s".into(), json!(0.002));
        assert_eq!(
            RunConfig::from_json(&v.to_string()).unwrap().duration,
            DurationRule::Seconds(0.002)
        );
        v.as_object_mut().unwrap().remove("step_duration_s");
        assert_eq!(
            RunConfig::from_json(&v.to_string()).unwrap().duration,
            DurationRule::GammaT(4.0)
        );
    }

    #[test]
    fn derive_reports_raman_rate_in_hz() {
        let v = cmd_derive(&bundled()).unwrap();
        let theta1 = v["given"]["theta1_over_2pi_hz"].as_f64().unwrap();
        assert!((theta1 - 2000.0).abs() < 1e-9, "{theta1}");
        assert_eq!(v["given"]["channel"], "b2");
        assert_eq!(v["steps"][0]["channel"], "b1");
        assert_eq!(v["steps"][1]["channel"], "b2");
        let companion = v["steps"][0]["theta2_over_2pi_hz"].as_f64().unwrap();
        assert!((companion - 2000.0).abs() < 1e-9, "{companion}");
        assert!(v["warnings"]
            .as_array()
            .unwrap()
            .iter()
            .any(|w| w.as_str().unwrap().contains("theta_b_tau")));
    }

    #[test]
    fn derive_error_codes() {
        let e = RunConfig::from_json(&with_key("delta1_hz", json!(0.0)))
            .and_then(|c| cmd_derive(&c))
            .unwrap_err();
        assert!(e.to_string().contains("delta1 must be nonzero"));
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        // Θ1 = Θ2 once Ω2 |Δ1| = Ω1 |Δ2|.
        let e = RunConfig::from_json(&with_key("omega2_hz", json!(80000.0)))
            .and_then(|c| cmd_derive(&c))
            .unwrap_err();
        assert_eq!(e, Error::DegenerateChannel);
        assert_eq!(exit_code(&e), EXIT_HARD_FAILURE);
    }

    #[test]
    fn explicit_step2_and_swap() {
        let cfg = bundled();
        let swapped = cfg.build_steps().unwrap();
        let mut explicit = cfg.clone();
        explicit.step2 = Some(ParamFile::from_params(&swapped.steps[0].params));
        let direct = explicit.build_steps().unwrap();
        for (a, b) in swapped.steps.iter().zip(&direct.steps) {
            assert_eq!(a.channel(), b.channel());
            assert!((a.derived.epsilon - b.derived.epsilon).abs() < 1e-12);
        }
        let text = with_key("swap", json!({"omega1_hz": 1.0}));
        let e = RunConfig::from_json(&text).unwrap_err();
        assert!(e.to_string().contains("swap.omega2_hz"), "{e}");
    }

    #[test]
    fn truncation_flag_parsing() {
        assert_eq!(parse_truncation_flag("12,8"), Ok((12, 8)));
        assert_eq!(parse_truncation_flag("10"), Ok((10, 10)));
        assert!(parse_truncation_flag("a,b").is_err());
        assert!(parse_truncation_flag("1,2,3").is_err());
    }

    #[test]
    fn fig2_rows_follow_input_order() {
        let cfg = bundled();
        let grid = [0.9, 0.1, 0.5];
        let out = cmd_fig2(&cfg, Some(&grid)).unwrap();
        let rs: Vec<f64> = out.rows.iter().map(|r| r.r).collect();
        assert_eq!(rs, grid);
        assert!((out.rows[1].n_bar - 0.01 / 0.99).abs() < 1e-15);
        assert_eq!(out.rows[1].total_time, 0.0);
        assert!(!out.warnings.is_empty());
        assert!(cmd_fig2(&cfg, Some(&[1.0])).is_err());
        let csv = out.to_csv();
        assert!(csv.starts_with("r,n_bar,gamma,T_per_step,total_time_2T\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(out.to_svg().contains("<polyline"));
    }

    #[test]
    fn forced_zero_tolerance_fails_inexact_check() {
        let cfg = bundled();
        let ok = check_variance_gaussian(&cfg).unwrap();
        assert!(ok.0 <= 1e-10);
        let (err, _) = check_decay_ratio(&cfg).unwrap();
        assert!(err <= 1e-12);
    }

    #[test]
    fn report_path_sits_next_to_csv() {
        assert_eq!(
            report_path(Path::new("/tmp/run.csv")),
            PathBuf::from("/tmp/run.report.json")
        );
    }
}
