//! `sfl`: solve, sweep and compare congestion-charge scenarios.

mod output;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sfl_core::policy::{find_charge_for_target, ChargeKind, ChargePolicy, Target};
use sfl_core::scenario::{generate_synthetic, grid_preset, load_scenario, save_scenario, sf_like_preset, GeneratorConfig, Scenario};
use sfl_core::solver::{solve, SolverConfig, SolverReport};
use sfl_core::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "sfl", version, about = "Ride-sourcing spatial pricing under congestion charges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one scenario under one charge.
    Solve(SolveArgs),
    /// Solve a range of charge levels and tabulate the results.
    Sweep(SweepArgs),
    /// Find the charge level of every scheme that meets a target.
    Target(TargetArgs),
    /// Re-solve with one parameter scaled.
    Sensitivity(SensitivityArgs),
    /// Write a generated scenario file.
    Gen(GenArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Worker threads for the solver; 0 uses every core.
    #[arg(long, env = "SFL_THREADS", default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Charge {
    None,
    CordonIn,
    CordonBoth,
    Trip,
}

impl From<Charge> for ChargeKind {
    fn from(c: Charge) -> Self {
        match c {
            Charge::None => ChargeKind::None,
            Charge::CordonIn => ChargeKind::CordonIn,
            Charge::CordonBoth => ChargeKind::CordonBoth,
            Charge::Trip => ChargeKind::TripBased,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "none")]
    charge: Charge,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    level: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    charge: Charge,
    /// START:END:COUNT
    #[arg(long)]
    levels: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    NcReduction,
    Revenue,
}

#[derive(Args, Debug)]
struct TargetArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long, allow_negative_numbers = true)]
    value: f64,
    /// Scheme whose level is reported at the top level of the output.
    #[arg(long, value_enum, default_value = "cordon-in")]
    charge: Charge,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    Alpha,
    Epsilon,
    Sigma,
    Eta,
    #[value(name = "N0")]
    N0,
    #[value(name = "lambda0")]
    Lambda0,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    param: Param,
    /// Comma-separated multipliers, e.g. 0.7,1,1.3
    #[arg(long)]
    scales: String,
    #[arg(long, value_enum, default_value = "none")]
    charge: Charge,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    level: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Preset {
    SfLike,
    Grid,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lattice side for the grid preset.
    #[arg(long, default_value_t = 4)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = classify(&e);
        Failure { kind: kind.into(), message: e.to_string(), code }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { kind: "InvalidArgument".into(), message: message.into(), code: 2 }
}

/// Input problems exit with 2, numerical failures with 3.
fn classify(e: &Error) -> (&'static str, u8) {
    let code = if e.is_validation() || matches!(e, Error::Io(_)) { 2 } else { 3 };
    (e.kind(), code)
}

fn config(common: &Common) -> SolverConfig {
    SolverConfig { threads: common.threads, seed: common.seed, ..SolverConfig::default() }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    Ok(load_scenario(&common.scenario)?)
}

fn solve_one(sc: &Scenario, kind: ChargeKind, level: f64, cfg: &SolverConfig) -> Result<SolverReport, Failure> {
    let inst = sc.instance()?;
    let policy = ChargePolicy::for_instance(kind, level, &inst)?;
    Ok(solve(&inst, &policy, cfg)?)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::from(Error::Io(format!("{}: {e}", p.display())))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn check_level(level: f64) -> Result<(), Failure> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(invalid("level must be nonnegative"));
    }
    Ok(())
}

fn cmd_solve(a: &SolveArgs) -> Result<(), Failure> {
    check_level(a.level)?;
    let sc = load(&a.common)?;
    let rep = solve_one(&sc, a.charge.into(), a.level, &config(&a.common))?;
    let text = match a.format {
        Format::Json => output::json(&rep),
        Format::Csv => output::csv_table(&[(a.level, &rep)])?,
    };
    write_text(a.out.as_deref(), &text)
}

fn parse_levels(text: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || invalid(format!("levels must look like START:END:COUNT, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let end: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 {
        return Err(invalid("level count must be at least 1"));
    }
    let levels: Vec<f64> =
        if count == 1 { vec![start] } else { (0..count).map(|k| start + (end - start) * k as f64 / (count - 1) as f64).collect() };
    for &l in &levels {
        check_level(l)?;
    }
    Ok(levels)
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let levels = parse_levels(&a.levels)?;
    let sc = load(&a.common)?;
    let cfg = config(&a.common);
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::from(Error::Io(format!("{}: {e}", a.out.display()))))?;
    let mut reports = Vec::with_capacity(levels.len());
    for (k, &level) in levels.iter().enumerate() {
        let rep = solve_one(&sc, a.charge.into(), level, &cfg)?;
        write_text(Some(&a.out.join(format!("report_{k:03}.json"))), &output::json(&rep))?;
        reports.push((level, rep));
    }
    let rows: Vec<(f64, &SolverReport)> = reports.iter().map(|(l, r)| (*l, r)).collect();
    write_text(Some(&a.out.join("sweep.csv")), &output::csv_table(&rows)?)
}

#[derive(Serialize)]
struct TargetEntry {
    charge: &'static str,
    level: f64,
    achieved: f64,
    report: SolverReport,
}

#[derive(Serialize)]
struct TargetOutput {
    metric: &'static str,
    value: f64,
    charge: &'static str,
    level: f64,
    schemes: Vec<TargetEntry>,
}

fn cmd_target(a: &TargetArgs) -> Result<(), Failure> {
    let sc = load(&a.common)?;
    let inst = sc.instance()?;
    let cfg = config(&a.common);
    let (target, metric) = match a.metric {
        Metric::NcReduction => (Target::NcReduction(a.value), "nc-reduction"),
        Metric::Revenue => (Target::Revenue(a.value), "revenue"),
    };
    let wanted: ChargeKind = a.charge.into();
    let mut schemes = Vec::new();
    for kind in [ChargeKind::CordonIn, ChargeKind::CordonBoth, ChargeKind::TripBased] {
        let res = find_charge_for_target(&inst, kind, target, &cfg)?;
        schemes.push(TargetEntry { charge: kind.as_str(), level: res.level, achieved: res.achieved, report: res.report });
    }
    let level = schemes.iter().find(|s| s.charge == wanted.as_str()).map_or(0.0, |s| s.level);
    let out = TargetOutput { metric, value: a.value, charge: wanted.as_str(), level, schemes };
    write_text(a.out.as_deref(), &output::json(&out))
}

#[derive(Serialize)]
struct SensitivityEntry {
    scale: f64,
    report: SolverReport,
}

#[derive(Serialize)]
struct SensitivityOutput {
    param: &'static str,
    charge: &'static str,
    level: f64,
    runs: Vec<SensitivityEntry>,
}

fn scaled(sc: &Scenario, param: Param, s: f64) -> Scenario {
    let mut out = sc.clone();
    let p = &mut out.params;
    match param {
        Param::Alpha => p.alpha *= s,
        Param::Epsilon => p.epsilon *= s,
        Param::Sigma => p.sigma_s *= s,
        Param::Eta => p.eta *= s,
        Param::N0 => p.n0 *= s,
        Param::Lambda0 => out.scale_demand(s),
    }
    out
}

fn param_name(p: Param) -> &'static str {
    match p {
        Param::Alpha => "alpha",
        Param::Epsilon => "epsilon",
        Param::Sigma => "sigma",
        Param::Eta => "eta",
        Param::N0 => "N0",
        Param::Lambda0 => "lambda0",
    }
}

fn cmd_sensitivity(a: &SensitivityArgs) -> Result<(), Failure> {
    check_level(a.level)?;
    let scales: Vec<f64> =
        a.scales.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad scale {t:?}")))).collect::<Result<_, _>>()?;
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(invalid(format!("scales must be positive, got {s}")));
    }
    let sc = load(&a.common)?;
    let cfg = config(&a.common);
    let mut runs = Vec::new();
    for &s in &scales {
        let rep = solve_one(&scaled(&sc, a.param, s), a.charge.into(), a.level, &cfg)?;
        runs.push(SensitivityEntry { scale: s, report: rep });
    }
    let kind: ChargeKind = a.charge.into();
    let out = SensitivityOutput { param: param_name(a.param), charge: kind.as_str(), level: a.level, runs };
    write_text(a.out.as_deref(), &output::json(&out))
}

fn cmd_gen(a: &GenArgs) -> Result<(), Failure> {
    let sc = match a.preset {
        Preset::SfLike => {
            if a.seed == 0 {
                sf_like_preset()
            } else {
                generate_synthetic(&GeneratorConfig { seed: a.seed, m: 19, ..Default::default() })?
            }
        }
        Preset::Grid => grid_preset(a.size, a.seed)?,
    };
    Ok(save_scenario(&sc, &a.out)?)
}

fn report_failure(f: &Failure) {
    let body = serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report_failure(&Failure { kind: "Usage".into(), message: e.to_string().trim().to_string(), code: 2 });
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Target(a) => cmd_target(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report_failure(&f);
            ExitCode::from(f.code)
        }
    }
}
