use std::net::{Ipv4Addr, SocketAddr, ToSocketAddrs};

use dtlsgate_core::bench::loadgen::{
    blackbox_sweep, run_loadgen, run_sim, ClientFactory, LoadTarget, LoadgenConfig, LoadgenStats,
    ServiceCapacity, SimTarget,
};
use dtlsgate_core::bench::{emit_report, now_unix, BenchReport, ReportFormat, RunMeta};
use dtlsgate_core::gateway::{Gateway, GatewayConfig, GatewayStats};
use dtlsgate_core::packet_io::{LoopbackNet, QueueConfig};
use dtlsgate_core::secure_channel::ChannelConfig;
use serde_json::json;

use crate::args::{BlackboxArgs, LoadArgs, LoadgenArgs};
use crate::error::CliError;
use crate::gateway::secs;
use crate::{write_file, Ctx};

const MEM_GATEWAY: &str = "10.0.0.1:4433";

/// A load target plus the in-process gateway behind it, if any.
struct Setup {
    target: LoadTarget,
    gateway: Option<Gateway>,
}

impl Setup {
    fn new(ctx: &Ctx, l: &LoadArgs) -> Result<Self, CliError> {
        if l.capacity.is_some() && l.target != "sim" {
            return Err(CliError::Usage("--capacity applies to --target sim only".into()));
        }
        let gw_cfg = GatewayConfig {
            channel: ChannelConfig {
                kex: l.kex,
                ..ChannelConfig::default()
            },
            hash_key: ctx.hash_key,
            workers: l.workers,
            seed: ctx.seed,
            ..GatewayConfig::default()
        };
        match l.target.as_str() {
            "sim" => {
                let capacity = match l.capacity {
                    Some(pps) if pps.is_finite() && pps > 0.0 => ServiceCapacity::Packets(pps),
                    Some(pps) => return Err(CliError::Usage(format!("--capacity must be positive, got {pps}"))),
                    None => ServiceCapacity::Unlimited,
                };
                let mut sim = SimTarget::new(gw_cfg, capacity);
                sim.queue_capacity = l.queue;
                Ok(Self {
                    target: LoadTarget::Sim(sim),
                    gateway: None,
                })
            }
            "mem" => {
                let net = LoopbackNet::new();
                let addr: SocketAddr = MEM_GATEWAY.parse().expect("valid address");
                let ep = net.bind(addr, QueueConfig::default())?;
                let gw = Gateway::start(Box::new(ep), gw_cfg)?;
                Ok(Self {
                    target: LoadTarget::Remote {
                        addr,
                        clients: ClientFactory::Loopback {
                            net,
                            base: Ipv4Addr::new(10, 1, 0, 0),
                        },
                    },
                    gateway: Some(gw),
                })
            }
            other => {
                let addr = other
                    .to_socket_addrs()
                    .ok()
                    .and_then(|mut a| a.next())
                    .ok_or_else(|| CliError::Usage(format!("--target: cannot resolve {other:?}")))?;
                let bind = match addr {
                    SocketAddr::V4(_) => Ipv4Addr::UNSPECIFIED.into(),
                    SocketAddr::V6(_) => std::net::Ipv6Addr::UNSPECIFIED.into(),
                };
                Ok(Self {
                    target: LoadTarget::Remote {
                        addr,
                        clients: ClientFactory::Udp { bind },
                    },
                    gateway: None,
                })
            }
        }
    }

    fn finish(self) -> Result<Option<GatewayStats>, CliError> {
        Ok(self.gateway.map(|g| g.stop()).transpose()?)
    }
}

fn loadgen_config(ctx: &Ctx, l: &LoadArgs) -> Result<LoadgenConfig, CliError> {
    Ok(LoadgenConfig {
        connections: l.connections,
        payload: l.payload,
        suite: l.suite,
        kex: l.kex,
        handshake_timeout: secs("handshake-timeout", l.handshake_timeout)?,
        echo_timeout: secs("echo-timeout", l.echo_timeout)?,
        window: l.window,
        seed: ctx.seed,
        ..LoadgenConfig::default()
    })
}

fn summary(s: &LoadgenStats) -> String {
    format!(
        "established {}/{}  sent {}  verified {}  lost {}  duplicates {}  achieved {:.0} pps ({:.1} Mbit/s) over {:.3}s",
        s.established,
        s.requested_connections,
        s.sent,
        s.verified,
        s.lost,
        s.duplicates,
        s.achieved_pps,
        s.achieved_bps / 1e6,
        s.elapsed_secs
    )
}

pub fn loadgen(ctx: &Ctx, a: &LoadgenArgs) -> Result<(), CliError> {
    let cfg = LoadgenConfig {
        packets_per_conn: a.packets,
        rate: a.rate,
        duration: a.duration.map(|d| secs("duration", d)).transpose()?,
        ..loadgen_config(ctx, &a.load)?
    };
    let setup = Setup::new(ctx, &a.load)?;
    let (stats, worker, queue_drops) = match &setup.target {
        LoadTarget::Sim(sim) => {
            let out = run_sim(sim, &cfg)?;
            (out.stats, Some(out.worker), Some(out.queue_drops))
        }
        LoadTarget::Remote { addr, clients } => {
            let res = clients
                .make(cfg.connections, 0)
                .map_err(CliError::from)
                .and_then(|c| Ok(run_loadgen(*addr, c, &cfg)?));
            (res?, None, None)
        }
    };
    let gateway = setup.finish()?;
    println!("{}", summary(&stats));

    if let Some(path) = &a.out {
        let report = json!({
            "created_unix": now_unix(),
            "config": ctx.effective,
            "target": a.load.target,
            "stats": stats,
            "sim_worker": worker,
            "sim_queue_drops": queue_drops,
            "gateway": gateway,
        });
        write_file(path, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

pub fn blackbox(ctx: &Ctx, a: &BlackboxArgs) -> Result<(), CliError> {
    let cfg = LoadgenConfig {
        duration: Some(secs("duration", a.duration)?),
        ..loadgen_config(ctx, &a.load)?
    };
    let setup = Setup::new(ctx, &a.load)?;
    let sweep = blackbox_sweep(&setup.target, &a.rates.0, &cfg);
    setup.finish()?;
    let sweep = sweep?;

    for p in &sweep.points {
        let line = format!(
            "offered {:>10.0} pps  achieved {:>10.0} pps  {:>9.1} Mbit/s",
            p.offered_pps,
            p.achieved_pps,
            p.achieved_bps / 1e6
        );
        // Keep stdout clean for the CSV when there is no --out.
        if a.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
    for (rate, why) in &sweep.failures {
        eprintln!("rate {rate} failed: {why}");
    }
    if sweep.points.is_empty() {
        return Err(CliError::Failed("every rate in the sweep failed".into()));
    }

    let clock = ctx.clock().ok();
    let defaults = RunMeta::default();
    let report = BenchReport {
        meta: RunMeta {
            suite: a.load.suite,
            kex: a.load.kex,
            reuse_kex: true,
            payload_bytes: a.load.payload as u64,
            clock_source: clock.map_or(defaults.clock_source, |c| c.source()),
            nominal_hz: clock.map_or(defaults.nominal_hz, |c| c.nominal_hz()),
            warmup: 0,
            repetitions: 1,
            seed: ctx.seed,
            created_unix: now_unix(),
            config: ctx.effective_json(),
        },
        samples: Vec::new(),
        blackbox: Some(sweep.points),
    };
    if let Some(path) = &a.out {
        emit_report(&report, path, ReportFormat::for_path(path))?;
    } else {
        print!("{}", report.to_csv()?);
    }
    Ok(())
}
