use std::fmt::Display;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Serialize, Serializer};

use dtlsgate_core::bench::plot::Figure;
use dtlsgate_core::bench::{ClockSource, StageKind};
use dtlsgate_core::{CipherSuite, KexMethod};

fn display<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn redacted<S: Serializer>(v: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(_) => s.serialize_str("<redacted>"),
        None => s.serialize_none(),
    }
}

/// Instrumented DTLS-style UDP echo gateway with load generator, stage
/// microbenchmarks and a cycle cost model.
#[derive(Debug, Parser, Serialize)]
#[command(name = "dtlsgate", version, arg_required_else_help = true)]
pub struct Cli {
    /// JSON object of option defaults keyed by long flag name; flags on the
    /// command line override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice (hash key, handshake randoms, keys).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flow hash key as 32 hex digits. For reproducible test runs only.
    #[arg(long, global = true, value_name = "HEX")]
    #[serde(serialize_with = "redacted")]
    pub hash_key: Option<String>,

    /// Cycle source for instrumentation: tsc or monotonic.
    #[arg(long, global = true)]
    pub clock: Option<ClockSource>,

    /// Nominal CPU frequency in Hz. Required with the monotonic clock; used
    /// for cycle/second conversion and throughput prediction.
    #[arg(long, global = true, value_name = "HZ")]
    pub cpu_hz: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Run the echo gateway.
    #[command(subcommand, arg_required_else_help = true)]
    Gateway(GatewayCmd),
    /// Drive load against a gateway and verify every echo.
    Loadgen(LoadgenArgs),
    /// Stage microbenchmarks, throughput sweeps and plot data.
    #[command(subcommand, arg_required_else_help = true)]
    Bench(BenchCmd),
    /// Evaluate, refit and validate the cycle cost model.
    #[command(subcommand, arg_required_else_help = true)]
    Model(ModelCmd),
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayCmd {
    /// Serve until interrupted or until --duration elapses.
    Run(GatewayRunArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GatewayRunArgs {
    #[arg(long, value_name = "HOST:PORT")]
    pub listen: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Accept only this suite (aes128gcm, aes256gcm, chacha20); all by default.
    #[arg(long)]
    #[serde(serialize_with = "opt_display")]
    pub suite: Option<CipherSuite>,
    /// ecdhe or dhe.
    #[arg(long, default_value = "ecdhe")]
    #[serde(serialize_with = "display")]
    pub kex: KexMethod,
    /// Generate a fresh server key pair for every handshake.
    #[arg(long)]
    pub no_reuse_kex: bool,
    #[arg(long, value_name = "C")]
    pub max_connections: Option<usize>,
    /// Record per-stage cycles.
    #[arg(long)]
    pub instrument: bool,
    #[arg(long, default_value_t = dtlsgate_core::packet_io::DEFAULT_BATCH)]
    pub batch: usize,
    /// Stop after this many seconds.
    #[arg(long, value_name = "SEC")]
    pub duration: Option<f64>,
    /// Also write the final statistics as JSON here.
    #[arg(long, value_name = "FILE")]
    pub stats_out: Option<PathBuf>,
}

fn opt_display<T: Display, S: Serializer>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

/// Load options shared by `loadgen` and `bench blackbox`.
#[derive(Debug, Args, Serialize)]
pub struct LoadArgs {
    /// HOST:PORT of a running gateway, `mem` for an in-process gateway on
    /// an in-memory network, or `sim` for a virtual-time run.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 10)]
    pub connections: usize,
    /// Plaintext bytes per packet.
    #[arg(long, default_value_t = 500)]
    pub payload: usize,
    #[arg(long, default_value = "chacha20")]
    #[serde(serialize_with = "display")]
    pub suite: CipherSuite,
    #[arg(long, default_value = "ecdhe")]
    #[serde(serialize_with = "display")]
    pub kex: KexMethod,
    /// Maximum unanswered packets when unpaced.
    #[arg(long, default_value_t = 256)]
    pub window: usize,
    #[arg(long, default_value_t = 5.0, value_name = "SEC")]
    pub handshake_timeout: f64,
    #[arg(long, default_value_t = 1.0, value_name = "SEC")]
    pub echo_timeout: f64,
    /// Service rate of the simulated gateway; unlimited by default.
    #[arg(long, value_name = "PPS")]
    pub capacity: Option<f64>,
    /// Receive queue of the simulated gateway.
    #[arg(long, default_value_t = 4096)]
    pub queue: usize,
    /// Workers of the in-process gateway.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct LoadgenArgs {
    #[command(flatten)]
    pub load: LoadArgs,
    /// Packets per connection when no rate is given.
    #[arg(long, default_value_t = 100)]
    pub packets: u64,
    /// Offered packets per second over all connections.
    #[arg(long, value_name = "PPS")]
    pub rate: Option<f64>,
    /// Seconds to offer --rate for.
    #[arg(long, value_name = "SEC")]
    pub duration: Option<f64>,
    /// JSON report.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchCmd {
    /// Per-stage cycle microbenchmarks.
    Micro(MicroArgs),
    /// Offered versus achieved throughput over a rate sweep.
    Blackbox(BlackboxArgs),
    /// Tidy per-figure series from bench reports.
    Plotdata(PlotdataArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct MicroArgs {
    /// Stage names (IO_RX, IO_TX, HASH, TABLE_LOOKUP, TABLE_INSERT,
    /// STATE_ALLOC, CRYPTO_SEAL, CRYPTO_OPEN, HANDSHAKE) or `all`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub stage: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: u64,
    /// Timings discarded before aggregation; 10% of --iterations by default.
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long, default_value = "chacha20")]
    #[serde(serialize_with = "display")]
    pub suite: CipherSuite,
    #[arg(long, default_value = "ecdhe")]
    #[serde(serialize_with = "display")]
    pub kex: KexMethod,
    #[arg(long)]
    pub no_reuse_kex: bool,
    /// Payload sizes for the IO and crypto stages.
    #[arg(long, value_delimiter = ',', default_value = "500")]
    pub payload: Vec<usize>,
    /// Table sizes for the table stages, connection counts for HANDSHAKE.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub connections: Vec<usize>,
    #[arg(long, default_value_t = dtlsgate_core::packet_io::DEFAULT_BATCH)]
    pub batch: usize,
    /// Pin the measuring thread to this CPU where the platform allows.
    #[arg(long, value_name = "CORE")]
    pub pin: Option<usize>,
    /// Repetitions per connection count for HANDSHAKE.
    #[arg(long, default_value_t = 10)]
    pub repetitions: u32,
    /// Report file, CSV unless it ends in .json; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BlackboxArgs {
    #[command(flatten)]
    pub load: LoadArgs,
    /// `A:B:STEP` (inclusive) or a comma list, packets per second.
    #[arg(long, value_parser = parse_rates)]
    pub rates: Rates,
    /// Seconds per rate.
    #[arg(long, default_value_t = 1.0, value_name = "SEC")]
    pub duration: f64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Rates(pub Vec<f64>);

pub fn parse_rates(s: &str) -> Result<Rates, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or_else(|| format!("bad rate {t:?}"))
    };
    let rates = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err("expected A:B:STEP".into());
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if b < a {
            return Err("range end below start".into());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        if n >= 100_000 {
            return Err("too many rates".into());
        }
        (0..=n).map(|i| a + step * i as f64).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if rates.windows(2).any(|w| w[0] >= w[1]) {
        return Err("rates must be strictly ascending".into());
    }
    Ok(Rates(rates))
}

#[derive(Debug, Args, Serialize)]
pub struct PlotdataArgs {
    /// Bench reports (CSV or JSON); repeat for several.
    #[arg(long = "in", value_name = "FILE", required = true)]
    pub input: Vec<PathBuf>,
    /// fig4 to fig9.
    #[arg(long)]
    #[serde(serialize_with = "display")]
    pub figure: Figure,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelCmd {
    /// Total cycles for a workload and the throughput it allows.
    Predict(PredictArgs),
    /// Refit one component from `x,cycles` samples.
    Fit(FitArgs),
    /// sMAPE of forecast against measured `component,arg,cycles` rows.
    Validate(ValidateArgs),
    /// Write a parameter file.
    Params(ParamsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ParamsSource {
    /// `defaults` or a params.json path.
    #[arg(long, default_value = "defaults")]
    pub params: String,
    /// Override the AEAD passes per packet.
    #[arg(long)]
    pub crypto_passes: Option<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub connections: f64,
    #[arg(long)]
    pub packets: f64,
    /// Payload bytes in total; packets times the per-packet payload otherwise.
    #[arg(long)]
    pub bytes: Option<f64>,
    #[command(flatten)]
    pub source: ParamsSource,
    /// Link limit in bits per second.
    #[arg(long, value_name = "BPS")]
    pub bandwidth_cap: Option<f64>,
    #[arg(long, default_value_t = 576.0)]
    pub wire_bytes: f64,
    /// New connections per second charged against the cycle budget.
    #[arg(long)]
    pub conn_rate: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// tx, rx, hash, lookup, crypto, mem, handshake or insert.
    #[arg(long)]
    pub component: String,
    /// CSV with header `x,cycles`.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[command(flatten)]
    pub source: ParamsSource,
    /// Updated params.json; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// CSV with header `component,arg,cycles`.
    #[arg(long, value_name = "FILE")]
    pub measured: PathBuf,
    /// Forecast rows in the same format; evaluated from --params otherwise.
    #[arg(long, value_name = "FILE")]
    pub forecast: Option<PathBuf>,
    #[command(flatten)]
    pub source: ParamsSource,
    /// Evaluate the insertion sawtooth below 1000 connections.
    #[arg(long)]
    pub allow_small: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub source: ParamsSource,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Stage list with `all` expanded.
pub fn stages(names: &[String]) -> Result<Vec<StageKind>, String> {
    let mut out = Vec::new();
    for n in names {
        if n.eq_ignore_ascii_case("all") {
            out.extend(StageKind::ALL);
        } else {
            out.push(n.parse::<StageKind>().map_err(|e| e.to_string())?);
        }
    }
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn rate_ranges_are_inclusive() {
        assert_eq!(parse_rates("1000:5000:2000").unwrap().0, [1000.0, 3000.0, 5000.0]);
        assert_eq!(parse_rates("0.5:1.5:0.5").unwrap().0, [0.5, 1.0, 1.5]);
        assert_eq!(parse_rates("10,20,40").unwrap().0, [10.0, 20.0, 40.0]);
        for bad in ["", "1:2", "5:1:1", "1:2:0", "2,1", "1,-3", "x"] {
            assert!(parse_rates(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn all_expands_every_stage() {
        assert_eq!(stages(&["all".into()]).unwrap(), StageKind::ALL);
        assert!(stages(&["HASH".into(), "nope".into()]).is_err());
    }
}
