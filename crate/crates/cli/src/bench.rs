use dtlsgate_core::bench::micro::{default_warmup, handshake_curve, measure_stage, MicroConfig};
use dtlsgate_core::bench::plot::{plot_csv, plot_rows};
use dtlsgate_core::bench::{
    emit_report, now_unix, read_report, BenchReport, ReportFormat, RunMeta, StageKind, StageSample,
};

use crate::args::{stages, MicroArgs, PlotdataArgs};
use crate::error::CliError;
use crate::{write_file, Ctx};

fn print_sample(s: &StageSample) {
    let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
    println!(
        "{:<13} bytes {:>5} conns {:>6}  mean {:>12.1}  min {:>10}  max {:>10}  n {}",
        s.stage.name(),
        opt(s.bytes),
        opt(s.connections),
        s.mean,
        s.min,
        s.max,
        s.iterations
    );
}

/// Best effort: a core the platform refuses only earns a warning.
#[cfg(target_os = "linux")]
fn pin(core: usize) {
    if core >= libc::CPU_SETSIZE as usize {
        eprintln!("warning: --pin {core} ignored, no such CPU");
        return;
    }
    // SAFETY: the set is a plain bitmask owned by this frame and sized for the call.
    let rc = unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(core, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set)
    };
    if rc != 0 {
        eprintln!("warning: --pin {core} ignored: {}", std::io::Error::last_os_error());
    }
}

#[cfg(not(target_os = "linux"))]
fn pin(core: usize) {
    eprintln!("warning: --pin {core} ignored, thread pinning is not supported here");
}

pub fn micro(ctx: &Ctx, a: &MicroArgs) -> Result<(), CliError> {
    if let Some(core) = a.pin {
        pin(core);
    }
    let stages = stages(&a.stage).map_err(CliError::Usage)?;
    if a.payload.is_empty() || a.connections.is_empty() {
        return Err(CliError::Usage("--payload and --connections need at least one value".into()));
    }
    let clock = ctx.clock()?;
    let warmup = a.warmup.unwrap_or_else(|| default_warmup(a.iterations));
    let seed = ctx.seed.unwrap_or(1);
    let base = MicroConfig {
        suite: Some(a.suite),
        kex: a.kex,
        reuse_kex: !a.no_reuse_kex,
        payload: a.payload[0],
        batch: a.batch,
        connections: a.connections[0],
        seed,
        clock,
    };

    let mut samples = Vec::new();
    for stage in stages {
        let configs: Vec<MicroConfig> = match stage {
            StageKind::Handshake => {
                let counts: Vec<u64> = a.connections.iter().map(|&c| c as u64).collect();
                let curve = handshake_curve(a.suite, a.kex, !a.no_reuse_kex, &counts, a.repetitions, &clock, seed)?;
                for series in curve {
                    samples.push(series.to_sample()?);
                }
                continue;
            }
            StageKind::IoRx | StageKind::IoTx | StageKind::CryptoSeal | StageKind::CryptoOpen => a
                .payload
                .iter()
                .map(|&payload| MicroConfig {
                    payload,
                    ..base.clone()
                })
                .collect(),
            StageKind::TableLookup | StageKind::TableInsert => a
                .connections
                .iter()
                .map(|&connections| MicroConfig {
                    connections,
                    ..base.clone()
                })
                .collect(),
            StageKind::Hash | StageKind::StateAlloc => vec![base.clone()],
        };
        for cfg in configs {
            samples.push(measure_stage(stage, a.iterations, warmup, &cfg)?);
        }
    }

    let report = BenchReport {
        meta: RunMeta {
            suite: a.suite,
            kex: a.kex,
            reuse_kex: !a.no_reuse_kex,
            payload_bytes: a.payload[0] as u64,
            clock_source: clock.source(),
            nominal_hz: clock.nominal_hz(),
            warmup,
            repetitions: a.repetitions as u64,
            seed: Some(seed),
            created_unix: now_unix(),
            config: ctx.effective_json(),
        },
        samples,
        blackbox: None,
    };
    match &a.out {
        Some(path) => {
            for s in &report.samples {
                print_sample(s);
            }
            emit_report(&report, path, ReportFormat::for_path(path))?;
        }
        None => print!("{}", report.to_csv()?),
    }
    Ok(())
}

pub fn plotdata(a: &PlotdataArgs) -> Result<(), CliError> {
    let reports = a
        .input
        .iter()
        .map(|p| read_report(p, ReportFormat::for_path(p)))
        .collect::<Result<Vec<BenchReport>, _>>()?;
    let rows = plot_rows(&reports, a.figure);
    if rows.is_empty() {
        eprintln!("warning: the input holds no {} series", a.figure);
    }
    let csv = plot_csv(&rows)?;
    match &a.out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
