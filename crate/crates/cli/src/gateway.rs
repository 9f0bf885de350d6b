use std::io::Write;
use std::sync::mpsc;
use std::time::Duration;

use dtlsgate_core::gateway::{Gateway, GatewayConfig, DEFAULT_QUEUE_DEPTH};
use dtlsgate_core::packet_io::UdpTransport;
use dtlsgate_core::secure_channel::ChannelConfig;
use dtlsgate_core::CipherSuite;
use serde_json::json;

use crate::args::GatewayRunArgs;
use crate::error::CliError;
use crate::{write_file, Ctx};

pub fn secs(flag: &str, v: f64) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(v)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| CliError::Usage(format!("--{flag} must be a positive number of seconds, got {v}")))
}

pub fn run(ctx: &Ctx, a: &GatewayRunArgs) -> Result<(), CliError> {
    if a.workers == 0 || a.batch == 0 {
        return Err(CliError::Usage("--workers and --batch must be at least 1".into()));
    }
    let duration = a.duration.map(|d| secs("duration", d)).transpose()?;
    let cfg = GatewayConfig {
        channel: ChannelConfig {
            suites: a.suite.map_or_else(|| CipherSuite::ALL.to_vec(), |s| vec![s]),
            kex: a.kex,
            reuse_kex: !a.no_reuse_kex,
        },
        hash_key: ctx.hash_key,
        workers: a.workers,
        batch: a.batch,
        max_connections: a.max_connections,
        clock: if a.instrument { Some(ctx.clock()?) } else { None },
        seed: ctx.seed,
        queue_depth: DEFAULT_QUEUE_DEPTH,
    };

    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(|e| CliError::Failed(format!("installing the interrupt handler: {e}")))?;

    let io = UdpTransport::bind(&a.listen)?;
    let gw = Gateway::start(Box::new(io), cfg)?;
    println!("listening on {}", gw.local_addr());
    std::io::stdout().flush()?;
    match duration {
        Some(d) => {
            let _ = rx.recv_timeout(d);
        }
        None => {
            let _ = rx.recv();
        }
    }
    let addr = gw.local_addr();
    let stats = gw.stop()?;

    let report = json!({
        "config": ctx.effective,
        "listen": addr.to_string(),
        "total": stats.total(),
        "stats": stats,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = &a.stats_out {
        write_file(path, &text)?;
    }
    Ok(())
}
