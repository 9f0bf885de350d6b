mod args;
mod bench;
mod config;
mod error;
mod gateway;
mod load;
mod model;

use std::ffi::OsString;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use dtlsgate_core::bench::{tsc_available, ClockSource, CycleClock};
use dtlsgate_core::HashKey;

use args::{BenchCmd, Cli, Command, GatewayCmd, ModelCmd};
use error::CliError;

/// Frequency recorded with TSC readings when `--cpu-hz` is absent. It only
/// labels cycle/second conversions; cycle counts themselves are raw.
const DEFAULT_NOMINAL_HZ: f64 = 3.2e9;

/// Settings every subcommand shares.
pub struct Ctx {
    pub seed: Option<u64>,
    pub hash_key: HashKey,
    clock: Option<ClockSource>,
    pub cpu_hz: Option<f64>,
    /// The parsed invocation as JSON, embedded in every report.
    pub effective: serde_json::Value,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let hash_key = match (&cli.hash_key, cli.seed) {
            (Some(hex), _) => HashKey::from_hex(hex).map_err(|e| CliError::Usage(format!("--hash-key: {e}")))?,
            (None, Some(seed)) => HashKey::new(seed, seed.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15),
            (None, None) => HashKey::random(),
        };
        if let Some(hz) = cli.cpu_hz {
            if !(hz.is_finite() && hz > 0.0) {
                return Err(CliError::Usage(format!("--cpu-hz must be positive, got {hz}")));
            }
        }
        Ok(Self {
            seed: cli.seed,
            hash_key,
            clock: cli.clock,
            cpu_hz: cli.cpu_hz,
            effective: serde_json::to_value(cli)?,
        })
    }

    /// The requested cycle clock; TSC when available and nothing was asked for.
    pub fn clock(&self) -> Result<CycleClock, CliError> {
        let source = match self.clock {
            Some(s) => s,
            None if tsc_available() => ClockSource::Tsc,
            None => ClockSource::Monotonic,
        };
        let hz = match (source, self.cpu_hz) {
            (_, Some(hz)) => hz,
            (ClockSource::Tsc, None) => DEFAULT_NOMINAL_HZ,
            (ClockSource::Monotonic, None) => {
                return Err(CliError::Usage(
                    "the monotonic clock needs --cpu-hz to convert nanoseconds to cycles".into(),
                ))
            }
        };
        CycleClock::new(source, hz).map_err(CliError::Usage)
    }

    pub fn effective_json(&self) -> String {
        self.effective.to_string()
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn parse(argv: Vec<OsString>) -> Result<Cli, CliError> {
    let mut cmd = Cli::command();
    if let Some(path) = config::config_path(&argv) {
        cmd = config::with_defaults(cmd, &config::load(&path)?)?;
    }
    let mut matches = cmd.try_get_matches_from(argv).unwrap_or_else(|e| e.exit());
    Ok(Cli::from_arg_matches_mut(&mut matches).unwrap_or_else(|e| e.exit()))
}

fn run(argv: Vec<OsString>) -> Result<(), CliError> {
    let cli = parse(argv)?;
    let ctx = Ctx::new(&cli)?;
    match &cli.command {
        Command::Gateway(GatewayCmd::Run(a)) => gateway::run(&ctx, a),
        Command::Loadgen(a) => load::loadgen(&ctx, a),
        Command::Bench(BenchCmd::Micro(a)) => bench::micro(&ctx, a),
        Command::Bench(BenchCmd::Blackbox(a)) => load::blackbox(&ctx, a),
        Command::Bench(BenchCmd::Plotdata(a)) => bench::plotdata(a),
        Command::Model(ModelCmd::Predict(a)) => model::predict(&ctx, a),
        Command::Model(ModelCmd::Fit(a)) => model::fit(a),
        Command::Model(ModelCmd::Validate(a)) => model::validate(a),
        Command::Model(ModelCmd::Params(a)) => model::params(a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
