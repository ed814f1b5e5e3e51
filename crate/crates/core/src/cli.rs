//! Command dispatch and CSV output for the `sbc-forge` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::analysis::{efficiency_bands, sideband_efficiency_map, ProbeTransition};
use crate::bloch::SignalCorrection;
use crate::config::{ConfigError, RunConfig};
use crate::sweep::{find_optimum, run_sweep, run_trajectory, SweepResult, SweptParam};

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 1.
    #[error("{0}")]
    Config(String),
    /// Exit code 2.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Run(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

macro_rules! run_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Run(e.to_string())
            }
        }
    )*};
}
run_error_from!(
    crate::sweep::SweepError,
    crate::analysis::AnalysisError,
    crate::bloch::BlochError,
    crate::sequencer::ScheduleError,
    crate::fock::FockError,
    std::io::Error
);

#[derive(Parser, Debug)]
#[command(
    name = "sbc-forge",
    about = "Sideband-cooling sequence simulation and optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Key-value config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config entry (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one cooling sequence; writes trace.csv and schedule.txt.
    Simulate(RunArgs),
    /// Scan one parameter, fit T_0 per value; writes sweep.csv.
    Sweep(RunArgs),
    /// Best sideband order per level; writes strategy_map.csv and bands.csv.
    StrategyMap(RunArgs),
    /// Frequency scans of the post-cooling state; writes spectrum.csv.
    Spectrum(RunArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&load(&args)?),
        Command::Sweep(args) => cmd_sweep(&load(&args)?),
        Command::StrategyMap(args) => cmd_strategy_map(&load(&args)?),
        Command::Spectrum(args) => cmd_spectrum(&load(&args)?),
    }
}

fn load(args: &RunArgs) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(&args.config, &args.set)?)
}

fn ensure_out_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(config.out_dir());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)?;
    Ok(())
}

/// Column suffixes per mode: empty for one mode, _ip/_op for two.
fn mode_suffixes(n_modes: usize) -> Vec<&'static str> {
    match n_modes {
        1 => vec![""],
        _ => vec!["_ip", "_op"],
    }
}

fn trace_csv(traces: &[crate::analysis::CoolingTrace]) -> String {
    let suffixes = mode_suffixes(traces.len());
    let mut out = String::from("t_us");
    for s in &suffixes {
        let _ = write!(out, ",p0{s},nbar{s}");
    }
    out.push('\n');
    for i in 0..traces[0].samples.len() {
        let _ = write!(out, "{}", traces[0].samples[i].time * 1e6);
        for trace in traces {
            let s = &trace.samples[i];
            let _ = write!(out, ",{},{}", s.p0, s.nbar);
        }
        out.push('\n');
    }
    out
}

pub fn cmd_simulate(config: &RunConfig) -> Result<(), CliError> {
    let (scenario, physics) = config.scenario()?;
    let schedule = scenario.build_schedule(scenario.t_c(), config.repump_timing()?)?;
    let out_dir = ensure_out_dir(config)?;
    write_file(&out_dir.join("schedule.txt"), &schedule.to_text())?;

    let initial = scenario.initial_state(config.tail_threshold()?)?;
    let tables = scenario.tables();
    let output = run_trajectory(&schedule, initial, &tables, &physics)?;
    write_file(&out_dir.join("trace.csv"), &trace_csv(&output.traces))?;

    println!("scenario={}", scenario.name());
    println!("T_c_us={}", schedule.cooling_time() * 1e6);
    println!("T_total_us={}", schedule.total_time() * 1e6);
    let suffixes = mode_suffixes(output.traces.len());
    for (mode, suffix) in suffixes.iter().enumerate() {
        let p0 = output.final_state.ground_state_population(mode);
        println!("final_p0{suffix}={p0}");
        println!(
            "final_nbar{suffix}={}",
            output.final_state.mean_occupation(mode)
        );
        if config.bool_or("signal_correction", false)? {
            let correction = SignalCorrection {
                amplitude: config.f64_or("signal_a", 0.7)?,
                offset: config.f64_or("signal_b", 0.23)?,
            };
            println!("signal{suffix}={}", correction.apply(p0));
        }
    }
    Ok(())
}

/// Swept values print in config units (µs for times, 1/ms for rates).
fn format_value(param: SweptParam, value: f64) -> String {
    if param.is_time() {
        format!("{}", value * 1e6)
    } else if param == SweptParam::GammaEff {
        format!("{}", value / 1e3)
    } else if param == SweptParam::BetaMax {
        format!("{}", value.round() as i64)
    } else {
        format!("{value}")
    }
}

fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("swept_param,value,mode,nbar_i,nbar_f,T0_us,residual,status\n");
    for point in &result.points {
        for (mode, fit) in point.fits.iter().enumerate() {
            let value = format_value(result.param, point.value);
            match fit {
                Ok(f) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},ok",
                        result.param.name(),
                        value,
                        mode,
                        f.nbar_i,
                        f.nbar_f,
                        f.t0 * 1e6,
                        f.residual_norm
                    );
                }
                Err(reason) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},nan,nan,nan,nan,failed({})",
                        result.param.name(),
                        value,
                        mode,
                        reason.replace(',', ";")
                    );
                }
            }
        }
    }
    out
}

pub fn cmd_sweep(config: &RunConfig) -> Result<(), CliError> {
    let plan = config.sweep_plan()?;
    let out_dir = ensure_out_dir(config)?;
    // audit schedule at the full cooling time with the base parameters
    let schedule = plan.scenario.build_schedule(plan.scenario.t_c(), plan.repump)?;
    write_file(&out_dir.join("schedule.txt"), &schedule.to_text())?;

    let result = run_sweep(&plan)?;
    write_file(&out_dir.join("sweep.csv"), &sweep_csv(&result))?;
    if config.bool_or("write_traces", false)? {
        for point in &result.points {
            let name = format!(
                "trace_{}.csv",
                format_value(result.param, point.value).replace('.', "p")
            );
            write_file(&out_dir.join(name), &trace_csv(&point.traces))?;
        }
    }
    for point in &result.points {
        for (t_c, reason) in &point.skipped {
            eprintln!(
                "note: {}={}: skipped T_c={} us: {}",
                result.param.name(),
                format_value(result.param, point.value),
                t_c * 1e6,
                reason
            );
        }
    }

    let optimum = find_optimum(&result, config.objective()?)?;
    println!(
        "optimum {}={} T0_us={}",
        result.param.name(),
        format_value(result.param, optimum.value),
        optimum.score * 1e6
    );
    Ok(())
}

pub fn cmd_strategy_map(config: &RunConfig) -> Result<(), CliError> {
    let eta = config.f64_or("eta", f64::NAN)?;
    if eta.is_nan() {
        return Err(ConfigError::MissingKey("eta".into()).into());
    }
    if eta <= 0.0 {
        return Err(CliError::Config(format!(
            "key 'eta': must be positive, got {eta}"
        )));
    }
    let n_max = config.usize_or("n_max", 0)?;
    if n_max == 0 {
        return Err(ConfigError::MissingKey("n_max".into()).into());
    }
    let map = sideband_efficiency_map(eta, n_max);
    let out_dir = ensure_out_dir(config)?;

    let mut csv = String::from("n,best_beta\n");
    for &(n, beta) in &map {
        let _ = writeln!(csv, "{n},{beta}");
    }
    write_file(&out_dir.join("strategy_map.csv"), &csv)?;

    let bands = efficiency_bands(&map);
    let mut band_csv = String::from("beta,n_lo,n_hi\n");
    for &(lo, hi, beta) in &bands {
        let _ = writeln!(band_csv, "{beta},{lo},{hi}");
        println!("beta={beta}: n in [{lo},{hi}]");
    }
    write_file(&out_dir.join("bands.csv"), &band_csv)?;
    println!(
        "max_beta={}",
        map.iter().map(|&(_, b)| b).max().unwrap_or(0)
    );
    Ok(())
}

fn parse_transition(name: &str) -> Result<ProbeTransition, CliError> {
    let name = name.trim();
    if name == "carrier" {
        return Ok(ProbeTransition::Carrier);
    }
    let (kind, order) = name.split_at(3.min(name.len()));
    let order: usize = order
        .parse()
        .map_err(|_| CliError::Config(format!("key 'transitions': bad transition '{name}'")))?;
    match kind {
        "rsb" => Ok(ProbeTransition::Rsb(order)),
        "bsb" => Ok(ProbeTransition::Bsb(order)),
        _ => Err(CliError::Config(format!(
            "key 'transitions': bad transition '{name}'"
        ))),
    }
}

pub fn cmd_spectrum(config: &RunConfig) -> Result<(), CliError> {
    let (scenario, physics) = config.scenario()?;
    let schedule = scenario.build_schedule(scenario.t_c(), config.repump_timing()?)?;
    let initial = scenario.initial_state(config.tail_threshold()?)?;
    let tables = scenario.tables();
    let state = run_trajectory(&schedule, initial, &tables, &physics)?.final_state;

    let probe_time = config.f64_or("probe_time_us", 10.0)? * 1e-6;
    let span = config.f64_or("detuning_max_mhz", 0.05)?;
    let points = config.usize_or("detuning_points", 101)?.max(2);
    let detunings_mhz: Vec<f64> = (0..points)
        .map(|i| -span + 2.0 * span * i as f64 / (points - 1) as f64)
        .collect();
    let detunings: Vec<f64> = detunings_mhz
        .iter()
        .map(|&mhz| std::f64::consts::TAU * mhz * 1e6)
        .collect();
    let transitions: Vec<(String, ProbeTransition)> = config
        .get("transitions")
        .unwrap_or("rsb1,carrier,bsb1")
        .split(',')
        .map(|name| parse_transition(name).map(|t| (name.trim().to_string(), t)))
        .collect::<Result<_, _>>()?;

    let suffixes = mode_suffixes(state.n_modes());
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for (mode, suffix) in suffixes.iter().enumerate() {
        for (name, transition) in &transitions {
            let spectrum = crate::analysis::simulate_sideband_spectrum(
                &state,
                &tables,
                physics.omega0,
                mode,
                probe_time,
                &detunings,
                *transition,
            );
            columns.push((format!("{name}{suffix}"), spectrum));
        }
    }

    let mut csv = String::from("detuning_mhz");
    for (name, _) in &columns {
        let _ = write!(csv, ",{name}");
    }
    csv.push('\n');
    for (i, mhz) in detunings_mhz.iter().enumerate() {
        let _ = write!(csv, "{mhz}");
        for (_, column) in &columns {
            let _ = write!(csv, ",{}", column[i]);
        }
        csv.push('\n');
    }
    let out_dir = ensure_out_dir(config)?;
    write_file(&out_dir.join("spectrum.csv"), &csv)?;
    for (name, column) in &columns {
        let peak = column.iter().cloned().fold(0.0f64, f64::max);
        println!("peak_{name}={peak}");
    }
    Ok(())
}
