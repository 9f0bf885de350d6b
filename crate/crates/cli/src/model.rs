use std::path::Path;

use dtlsgate_core::cost_model::{
    breakdown, eval_total, forecast_rows, predict_throughput, read_fit_samples, read_validation_rows,
    refit, round3, validate as validate_rows, Component, CostModelParams, PredictionInput,
};

use crate::args::{FitArgs, ParamsArgs, ParamsSource, PredictArgs, ValidateArgs};
use crate::error::CliError;
use crate::{read_file, write_file, Ctx};

/// Frequency for throughput prediction when `--cpu-hz` is absent.
const DEFAULT_CPU_HZ: f64 = 3.2e9;

fn load_params(src: &ParamsSource) -> Result<CostModelParams, CliError> {
    let mut p = if src.params == "defaults" {
        CostModelParams::default()
    } else {
        CostModelParams::load(Path::new(&src.params))?
    };
    if let Some(n) = src.crypto_passes {
        p.crypto_passes = n;
    }
    p.validate()?;
    Ok(p)
}

fn emit_params(p: &CostModelParams, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, &p.to_json()),
        None => {
            println!("{}", p.to_json());
            Ok(())
        }
    }
}

pub fn predict(ctx: &Ctx, a: &PredictArgs) -> Result<(), CliError> {
    let params = load_params(&a.source)?;
    let input = PredictionInput {
        c: a.connections,
        p: a.packets,
        b: a.bytes,
        cpu_hz: ctx.cpu_hz.unwrap_or(DEFAULT_CPU_HZ),
        bandwidth_cap: a.bandwidth_cap,
        wire_bytes_per_pkt: a.wire_bytes,
        conn_rate: a.conn_rate,
    };
    for (which, cycles) in breakdown(&params, &input)? {
        println!("{:<13} {}", which.name(), round3(cycles));
    }
    let t = predict_throughput(&params, &input)?;
    println!(
        "throughput {} pps, {} bit/s at {} Hz ({} cycles per packet){}",
        t.pps,
        t.bps,
        input.cpu_hz,
        round3(t.per_packet_cycles),
        if t.bandwidth_limited { ", bandwidth limited" } else { "" }
    );
    println!("total cycles {}", round3(eval_total(&params, &input)?));
    Ok(())
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let which: Component = a.component.parse()?;
    let base = load_params(&a.source)?;
    let samples = read_fit_samples(read_file(&a.input)?)?;
    let (fitted, err) = refit(&base, which, &samples)?;

    let (old, new) = (serde_json::to_value(&base)?, serde_json::to_value(&fitted)?);
    if let (Some(old), Some(new)) = (old.as_object(), new.as_object()) {
        for (k, v) in new {
            if old.get(k) != Some(v) {
                eprintln!("{k}: {} -> {v}", old[k]);
            }
        }
    }
    eprintln!("sMAPE fit={err:.3}%");
    emit_params(&fitted, a.out.as_deref())
}

pub fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let measured = read_validation_rows(read_file(&a.measured)?)?;
    let forecast = match &a.forecast {
        Some(path) => read_validation_rows(read_file(path)?)?,
        None => forecast_rows(&load_params(&a.source)?, &measured, a.allow_small)?,
    };
    let v = validate_rows(&forecast, &measured)?;
    for (which, err) in &v.per_component {
        println!("sMAPE {which}={err:.3}%");
    }
    println!("sMAPE total={:.3}%", v.total);
    Ok(())
}

pub fn params(a: &ParamsArgs) -> Result<(), CliError> {
    emit_params(&load_params(&a.source)?, a.out.as_deref())
}
