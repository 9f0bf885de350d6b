//! Cycle cost model for the gateway.
//!
//! Eight components, each a closed form in one of `p` (packets), `c`
//! (connections) or `b` (payload bytes):
//!
//! ```text
//! tx(p)        = tx_per_pkt * p
//! rx(p)        = rx_per_pkt * p
//! hash(p)      = hash_per_pkt * p
//! mem(c)       = mem_per_conn * c + mem_fixed
//! insert(c)    = c * (base + saw * ((2^(floor(log2 c) + 1) - 8) / c - 1))
//! lookup(p)    = table_lookup_per_pkt * p
//! handshake(c) = hs_fixed + hs_per_conn * c
//! crypto(b)    = crypto_per_byte * b
//! ```
//!
//! [`eval_total`] folds these into `fixed + per_conn * c + per_pkt * p`, using
//! the worst case of the insertion sawtooth (`base + saw` per connection).

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest connection count the sawtooth form is defined for.
pub const SAWTOOTH_MIN_C: f64 = 1000.0;
/// Capacity the state table starts at; the `- 8` term of the sawtooth.
pub const SAWTOOTH_INITIAL_CAPACITY: f64 = 8.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{component} is only defined for c >= {min} (got {arg})")]
    Domain {
        component: Component,
        arg: f64,
        min: f64,
    },
    #[error("argument must be finite and non-negative (got {0})")]
    NegativeArgument(f64),
    #[error("parameter {field} is invalid: {value}")]
    InvalidParam { field: &'static str, value: f64 },
    #[error("series lengths differ: {forecast} forecast vs {actual} actual")]
    LengthMismatch { forecast: usize, actual: usize },
    #[error("series is empty")]
    Empty,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("degenerate fit: {0}")]
    Degenerate(&'static str),
    #[error("unknown component {0:?}")]
    UnknownComponent(String),
    #[error("no rows for component {0}")]
    NoRows(Component),
    #[error("row {row}: forecast is ({f_component}, {f_arg}) but measurement is ({a_component}, {a_arg})")]
    RowMismatch {
        row: usize,
        f_component: Component,
        f_arg: f64,
        a_component: Component,
        a_arg: f64,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Coefficients, all in CPU cycles except the last two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelParams {
    pub tx_per_pkt: f64,
    pub rx_per_pkt: f64,
    pub hash_per_pkt: f64,
    pub mem_per_conn: f64,
    pub mem_fixed: f64,
    pub table_insert_base: f64,
    pub table_insert_saw: f64,
    pub table_lookup_per_pkt: f64,
    pub hs_fixed: f64,
    pub hs_per_conn: f64,
    pub crypto_per_byte: f64,
    pub payload_bytes_per_pkt: f64,
    /// AEAD passes per packet: 1 for a single seal, 2 for open + re-seal.
    pub crypto_passes: u32,
}

impl Default for CostModelParams {
    fn default() -> Self {
        Self {
            tx_per_pkt: 66.0,
            rx_per_pkt: 77.0,
            hash_per_pkt: 62.0,
            mem_per_conn: 354.0,
            mem_fixed: 1477.0,
            table_insert_base: 400.0,
            table_insert_saw: 170.0,
            table_lookup_per_pkt: 118.0,
            hs_fixed: 5_759_960.0,
            hs_per_conn: 2_325_634.0,
            crypto_per_byte: 12.0,
            payload_bytes_per_pkt: 500.0,
            crypto_passes: 1,
        }
    }
}

impl CostModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("tx_per_pkt", self.tx_per_pkt),
            ("rx_per_pkt", self.rx_per_pkt),
            ("hash_per_pkt", self.hash_per_pkt),
            ("mem_per_conn", self.mem_per_conn),
            ("mem_fixed", self.mem_fixed),
            ("table_insert_base", self.table_insert_base),
            ("table_insert_saw", self.table_insert_saw),
            ("table_lookup_per_pkt", self.table_lookup_per_pkt),
            ("hs_fixed", self.hs_fixed),
            ("hs_per_conn", self.hs_per_conn),
            ("crypto_per_byte", self.crypto_per_byte),
        ];
        for (field, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidParam { field, value });
            }
        }
        if !self.payload_bytes_per_pkt.is_finite() || self.payload_bytes_per_pkt < 1.0 {
            return Err(ModelError::InvalidParam {
                field: "payload_bytes_per_pkt",
                value: self.payload_bytes_per_pkt,
            });
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// Non-crypto cycles per packet: rx + tx + hash + lookup.
    pub fn per_packet_base(&self) -> f64 {
        self.rx_per_pkt + self.tx_per_pkt + self.hash_per_pkt + self.table_lookup_per_pkt
    }

    /// Crypto cycles per packet at the configured payload size and pass count.
    pub fn per_packet_crypto(&self) -> f64 {
        self.crypto_per_byte * self.payload_bytes_per_pkt * self.crypto_passes as f64
    }

    pub fn per_packet(&self) -> f64 {
        self.per_packet_base() + self.per_packet_crypto()
    }

    /// Worst case of the insertion sawtooth per connection.
    pub fn insert_worst_case(&self) -> f64 {
        self.table_insert_base + self.table_insert_saw
    }

    pub fn per_connection(&self) -> f64 {
        self.hs_per_conn + self.mem_per_conn + self.insert_worst_case()
    }

    pub fn fixed(&self) -> f64 {
        self.hs_fixed + self.mem_fixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Tx,
    Rx,
    Hash,
    Mem,
    /// Exact sawtooth of table insertion cost.
    Insert,
    /// Linear upper envelope of the sawtooth, `(base + saw) * c`.
    InsertWorst,
    Lookup,
    Handshake,
    /// Per-byte AEAD cost for one pass.
    Crypto,
}

impl Component {
    pub const ALL: [Component; 9] = [
        Component::Tx,
        Component::Rx,
        Component::Hash,
        Component::Mem,
        Component::Insert,
        Component::InsertWorst,
        Component::Lookup,
        Component::Handshake,
        Component::Crypto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Tx => "tx",
            Component::Rx => "rx",
            Component::Hash => "hash",
            Component::Mem => "mem",
            Component::Insert => "insert",
            Component::InsertWorst => "insert_worst",
            Component::Lookup => "lookup",
            Component::Handshake => "handshake",
            Component::Crypto => "crypto",
        }
    }

    /// The input the component is a function of.
    pub fn argument(self) -> Argument {
        match self {
            Component::Tx | Component::Rx | Component::Hash | Component::Lookup => Argument::Packets,
            Component::Mem | Component::Insert | Component::InsertWorst | Component::Handshake => {
                Argument::Connections
            }
            Component::Crypto => Argument::Bytes,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Component::ALL
            .into_iter()
            .find(|c| c.name() == lower)
            .ok_or_else(|| ModelError::UnknownComponent(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Argument {
    Packets,
    Connections,
    Bytes,
}

/// `(2^(floor(log2 c) + 1) - 8) / c - 1`; the shape of the insertion sawtooth.
pub fn sawtooth_shape(c: f64) -> f64 {
    let k = c.log2().floor();
    // log2 can land one ulp low on exact powers of two.
    let k = if 2f64.powf(k + 1.0) <= c { k + 1.0 } else { k };
    (2f64.powf(k + 1.0) - SAWTOOTH_INITIAL_CAPACITY) / c - 1.0
}

/// Evaluates one component. The sawtooth needs `c >= 1000` unless
/// `allow_small` is set; with it, `c < 1` evaluates to 0.
pub fn eval_component(
    params: &CostModelParams,
    which: Component,
    arg: f64,
    allow_small: bool,
) -> Result<f64, ModelError> {
    if !arg.is_finite() || arg < 0.0 {
        return Err(ModelError::NegativeArgument(arg));
    }
    let v = match which {
        Component::Tx => params.tx_per_pkt * arg,
        Component::Rx => params.rx_per_pkt * arg,
        Component::Hash => params.hash_per_pkt * arg,
        Component::Mem => params.mem_per_conn * arg + params.mem_fixed,
        Component::Insert => {
            if arg < SAWTOOTH_MIN_C && !allow_small {
                return Err(ModelError::Domain {
                    component: which,
                    arg,
                    min: SAWTOOTH_MIN_C,
                });
            }
            if arg < 1.0 {
                0.0
            } else {
                arg * (params.table_insert_base + params.table_insert_saw * sawtooth_shape(arg))
            }
        }
        Component::InsertWorst => params.insert_worst_case() * arg,
        Component::Lookup => params.table_lookup_per_pkt * arg,
        Component::Handshake => params.hs_fixed + params.hs_per_conn * arg,
        Component::Crypto => params.crypto_per_byte * arg,
    };
    Ok(v)
}

/// Rounds to the three decimals results are reported with.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInput {
    pub c: f64,
    pub p: f64,
    /// Payload bytes; `p * payload_bytes_per_pkt` when absent.
    pub b: Option<f64>,
    pub cpu_hz: f64,
    pub bandwidth_cap: Option<f64>,
    pub wire_bytes_per_pkt: f64,
    /// New connections per second, charged against the cycle budget.
    pub conn_rate: Option<f64>,
}

impl Default for PredictionInput {
    fn default() -> Self {
        Self {
            c: 0.0,
            p: 0.0,
            b: None,
            cpu_hz: 3.2e9,
            bandwidth_cap: None,
            wire_bytes_per_pkt: 576.0,
            conn_rate: None,
        }
    }
}

impl PredictionInput {
    pub fn new(c: f64, p: f64) -> Self {
        Self {
            c,
            p,
            ..Self::default()
        }
    }

    pub fn bytes(&self, params: &CostModelParams) -> f64 {
        self.b.unwrap_or(self.p * params.payload_bytes_per_pkt)
    }
}

/// The additive terms of [`eval_total`], in a fixed order.
pub fn breakdown(
    params: &CostModelParams,
    input: &PredictionInput,
) -> Result<Vec<(Component, f64)>, ModelError> {
    params.validate()?;
    let b = input.bytes(params);
    let passes = params.crypto_passes as f64;
    let mut out = Vec::with_capacity(8);
    for which in [
        Component::Tx,
        Component::Rx,
        Component::Hash,
        Component::Lookup,
        Component::Mem,
        Component::InsertWorst,
        Component::Handshake,
    ] {
        let arg = match which.argument() {
            Argument::Packets => input.p,
            Argument::Connections => input.c,
            Argument::Bytes => unreachable!(),
        };
        out.push((which, eval_component(params, which, arg, true)?));
    }
    out.push((
        Component::Crypto,
        eval_component(params, Component::Crypto, b, true)? * passes,
    ));
    Ok(out)
}

/// Total cycles for `c` connections and `p` packets.
pub fn eval_total(params: &CostModelParams, input: &PredictionInput) -> Result<f64, ModelError> {
    Ok(breakdown(params, input)?.iter().map(|(_, v)| v).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Throughput {
    /// Whole packets per second.
    pub pps: f64,
    /// Unrounded packets per second before any bandwidth cap.
    pub pps_exact: f64,
    pub bps: f64,
    pub per_packet_cycles: f64,
    pub bandwidth_limited: bool,
}

/// Steady-state throughput under a cycle budget and optional link cap.
pub fn predict_throughput(
    params: &CostModelParams,
    input: &PredictionInput,
) -> Result<Throughput, ModelError> {
    params.validate()?;
    if !(input.cpu_hz > 0.0) {
        return Err(ModelError::InvalidParam {
            field: "cpu_hz",
            value: input.cpu_hz,
        });
    }
    let per_packet = match input.b {
        Some(b) if input.p > 0.0 => {
            params.per_packet_base() + params.crypto_per_byte * (b / input.p) * params.crypto_passes as f64
        }
        _ => params.per_packet(),
    };
    let budget = input.cpu_hz - input.conn_rate.unwrap_or(0.0) * params.per_connection();
    let pps_exact = (budget / per_packet).max(0.0);
    let mut pps = pps_exact.floor();
    let bits_per_pkt = input.wire_bytes_per_pkt * 8.0;
    let mut bps = pps * bits_per_pkt;
    let mut bandwidth_limited = false;
    if let Some(cap) = input.bandwidth_cap {
        if bps > cap {
            bps = cap;
            pps = (cap / bits_per_pkt).floor();
            bandwidth_limited = true;
        }
    }
    Ok(Throughput {
        pps,
        pps_exact,
        bps,
        per_packet_cycles: per_packet,
        bandwidth_limited,
    })
}

/// Symmetric mean absolute percentage error, in percent.
///
/// Denominator `(|A| + |F|) / 2`; pairs with both values zero contribute 0.
pub fn smape(forecast: &[f64], actual: &[f64]) -> Result<f64, ModelError> {
    if forecast.len() != actual.len() {
        return Err(ModelError::LengthMismatch {
            forecast: forecast.len(),
            actual: actual.len(),
        });
    }
    if forecast.is_empty() {
        return Err(ModelError::Empty);
    }
    let sum: f64 = forecast
        .iter()
        .zip(actual)
        .map(|(f, a)| {
            let denom = (a.abs() + f.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (f - a).abs() / denom
            }
        })
        .sum();
    Ok(100.0 * sum / forecast.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub smape: f64,
}

/// Least-squares line through `(x, cycles)` samples. With `zero_intercept`
/// the line is forced through the origin.
pub fn fit_linear(samples: &[(f64, f64)], zero_intercept: bool) -> Result<LinearFit, ModelError> {
    if samples.len() < 2 {
        return Err(ModelError::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ModelError::Degenerate("all x values are equal"));
    }
    let (slope, intercept) = if zero_intercept {
        let xx: f64 = samples.iter().map(|s| s.0 * s.0).sum();
        let xy: f64 = samples.iter().map(|s| s.0 * s.1).sum();
        (xy / xx, 0.0)
    } else {
        let sxy: f64 = samples.iter().map(|s| (s.0 - mean_x) * (s.1 - mean_y)).sum();
        let slope = sxy / sxx;
        (slope, mean_y - slope * mean_x)
    };
    let forecast: Vec<f64> = samples.iter().map(|s| intercept + slope * s.0).collect();
    let actual: Vec<f64> = samples.iter().map(|s| s.1).collect();
    Ok(LinearFit {
        slope,
        intercept,
        smape: smape(&forecast, &actual)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SawtoothFit {
    pub base: f64,
    pub saw: f64,
    pub smape: f64,
}

/// Fits `avg(c) = base + saw * sawtooth_shape(c)` to `(c, avg insert cycles)`.
pub fn fit_sawtooth(samples: &[(f64, f64)]) -> Result<SawtoothFit, ModelError> {
    if samples.len() < 2 {
        return Err(ModelError::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    if let Some(&(c, _)) = samples.iter().find(|s| !(s.0 >= SAWTOOTH_MIN_C)) {
        return Err(ModelError::Domain {
            component: Component::Insert,
            arg: c,
            min: SAWTOOTH_MIN_C,
        });
    }
    let shaped: Vec<(f64, f64)> = samples.iter().map(|&(c, y)| (sawtooth_shape(c), y)).collect();
    let line = fit_linear(&shaped, false)
        .map_err(|_| ModelError::Degenerate("sawtooth shape is constant over the samples"))?;
    Ok(SawtoothFit {
        base: line.intercept,
        saw: line.slope,
        smape: line.smape,
    })
}

/// Refits the coefficients behind `which` from `(arg, cycles)` samples and
/// returns the updated parameters with the fit's sMAPE.
///
/// Per-packet and per-byte components are fitted through the origin; `mem`
/// and `handshake` get slope and intercept; `insert` takes per-insert
/// averages and fits the sawtooth.
pub fn refit(
    params: &CostModelParams,
    which: Component,
    samples: &[(f64, f64)],
) -> Result<(CostModelParams, f64), ModelError> {
    let mut p = params.clone();
    let err = match which {
        Component::Insert => {
            let f = fit_sawtooth(samples)?;
            p.table_insert_base = f.base;
            p.table_insert_saw = f.saw;
            f.smape
        }
        Component::Mem | Component::Handshake => {
            let f = fit_linear(samples, false)?;
            let (slope, fixed) = (f.slope.max(0.0), f.intercept.max(0.0));
            if which == Component::Mem {
                p.mem_per_conn = slope;
                p.mem_fixed = fixed;
            } else {
                p.hs_per_conn = slope;
                p.hs_fixed = fixed;
            }
            f.smape
        }
        Component::InsertWorst => {
            return Err(ModelError::Degenerate(
                "insert_worst is derived; fit insert instead",
            ))
        }
        _ => {
            let f = fit_linear(samples, true)?;
            let slope = f.slope.max(0.0);
            match which {
                Component::Tx => p.tx_per_pkt = slope,
                Component::Rx => p.rx_per_pkt = slope,
                Component::Hash => p.hash_per_pkt = slope,
                Component::Lookup => p.table_lookup_per_pkt = slope,
                Component::Crypto => p.crypto_per_byte = slope,
                _ => unreachable!(),
            }
            f.smape
        }
    };
    p.validate()?;
    Ok((p, err))
}

/// One line of a `x,cycles` sample file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub x: f64,
    pub cycles: f64,
}

/// One line of a `component,arg,cycles` validation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub component: String,
    pub arg: f64,
    pub cycles: f64,
}

pub fn read_fit_samples<R: io::Read>(r: R) -> Result<Vec<(f64, f64)>, ModelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    rdr.deserialize::<FitSample>()
        .map(|row| Ok(row.map(|s| (s.x, s.cycles))?))
        .collect()
}

pub fn write_fit_samples<W: io::Write>(w: W, samples: &[(f64, f64)]) -> Result<(), ModelError> {
    let mut wtr = csv::Writer::from_writer(w);
    for &(x, cycles) in samples {
        wtr.serialize(FitSample { x, cycles })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_validation_rows<R: io::Read>(r: R) -> Result<Vec<ValidationRow>, ModelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    let rows = rdr.deserialize::<ValidationRow>().collect::<Result<Vec<_>, _>>()?;
    for row in &rows {
        row.component.parse::<Component>()?;
    }
    Ok(rows)
}

pub fn write_validation_rows<W: io::Write>(w: W, rows: &[ValidationRow]) -> Result<(), ModelError> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Forecast rows for the components and arguments of `measured`.
pub fn forecast_rows(
    params: &CostModelParams,
    measured: &[ValidationRow],
    allow_small: bool,
) -> Result<Vec<ValidationRow>, ModelError> {
    measured
        .iter()
        .map(|row| {
            let which: Component = row.component.parse()?;
            Ok(ValidationRow {
                component: row.component.clone(),
                arg: row.arg,
                cycles: eval_component(params, which, row.arg, allow_small)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation {
    pub per_component: Vec<(Component, f64)>,
    pub total: f64,
}

/// Row-aligned sMAPE of forecast against measurement, per component and over all rows.
pub fn validate(forecast: &[ValidationRow], measured: &[ValidationRow]) -> Result<Validation, ModelError> {
    if forecast.len() != measured.len() {
        return Err(ModelError::LengthMismatch {
            forecast: forecast.len(),
            actual: measured.len(),
        });
    }
    let mut groups: std::collections::BTreeMap<Component, (Vec<f64>, Vec<f64>)> = Default::default();
    for (i, (f, a)) in forecast.iter().zip(measured).enumerate() {
        let fc: Component = f.component.parse()?;
        let ac: Component = a.component.parse()?;
        if fc != ac || f.arg != a.arg {
            return Err(ModelError::RowMismatch {
                row: i + 1,
                f_component: fc,
                f_arg: f.arg,
                a_component: ac,
                a_arg: a.arg,
            });
        }
        let g = groups.entry(fc).or_default();
        g.0.push(f.cycles);
        g.1.push(a.cycles);
    }
    let per_component = groups
        .iter()
        .map(|(c, (f, a))| Ok((*c, smape(f, a)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let f: Vec<f64> = forecast.iter().map(|r| r.cycles).collect();
    let a: Vec<f64> = measured.iter().map(|r| r.cycles).collect();
    Ok(Validation {
        per_component,
        total: smape(&f, &a)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d() -> CostModelParams {
        CostModelParams::default()
    }

    fn ev(which: Component, arg: f64) -> f64 {
        eval_component(&d(), which, arg, false).unwrap()
    }

    /// Integer-only evaluation of the sawtooth: c*base + saw*(2^(k+1) - 8 - c).
    fn sawtooth_oracle(c: u64, base: i64, saw: i64) -> i64 {
        let k = 63 - c.leading_zeros() as i64;
        c as i64 * base + saw * ((1i64 << (k + 1)) - 8 - c as i64)
    }

    #[test]
    fn published_component_values() {
        assert_eq!(ev(Component::Rx, 1.0), 77.0);
        assert_eq!(ev(Component::Tx, 1.0), 66.0);
        assert_eq!(ev(Component::Hash, 1.0), 62.0);
        assert_eq!(ev(Component::Mem, 0.0), 1477.0);
        assert_eq!(ev(Component::Crypto, 500.0), 6000.0);
        assert_eq!(ev(Component::Lookup, 1.0), 118.0);
        assert_eq!(ev(Component::Handshake, 0.0), 5_759_960.0);
    }

    #[test]
    fn sawtooth_points() {
        assert_eq!(round3(ev(Component::Insert, 1000.0)), 402_720.0);
        assert_eq!(round3(ev(Component::Insert, 1024.0)), 582_320.0);
        for c in [1000u64, 1023, 1024, 1025, 2047, 2048, 4096, 65_535, 100_000, 1 << 20] {
            assert_eq!(
                round3(ev(Component::Insert, c as f64)),
                sawtooth_oracle(c, 400, 170) as f64,
                "c = {c}"
            );
        }
    }

    #[test]
    fn sawtooth_domain() {
        assert!(matches!(
            eval_component(&d(), Component::Insert, 999.0, false),
            Err(ModelError::Domain { .. })
        ));
        assert!(eval_component(&d(), Component::Insert, 999.0, true).is_ok());
        assert_eq!(eval_component(&d(), Component::Insert, 0.0, true).unwrap(), 0.0);
        assert!(eval_component(&d(), Component::Tx, -1.0, false).is_err());
    }

    #[test]
    fn aggregates() {
        let p = d();
        assert_eq!(p.per_packet_base(), 323.0);
        assert_eq!(p.per_packet(), 6323.0);
        assert_eq!(p.per_connection(), 2_326_558.0);
        assert_eq!(p.fixed(), 5_761_437.0);
        assert_eq!(p.insert_worst_case(), 570.0);
    }

    #[test]
    fn totals() {
        let p = d();
        assert_eq!(eval_total(&p, &PredictionInput::new(1000.0, 1e6)).unwrap(), 8_655_319_437.0);
        assert_eq!(eval_total(&p, &PredictionInput::new(1000.0, 0.0)).unwrap(), 2_332_319_437.0);
    }

    #[test]
    fn explicit_bytes_override_payload_default() {
        let p = d();
        let mut input = PredictionInput::new(0.0, 10.0);
        let implied = eval_total(&p, &input).unwrap();
        input.b = Some(5000.0);
        assert_eq!(eval_total(&p, &input).unwrap(), implied);
        input.b = Some(0.0);
        assert_eq!(eval_total(&p, &input).unwrap(), implied - 60_000.0);
    }

    #[test]
    fn throughput_examples() {
        let p = d();
        let t = predict_throughput(&p, &PredictionInput::new(0.0, 0.0)).unwrap();
        assert_eq!(t.pps, 506_088.0);
        assert_eq!(t.per_packet_cycles, 6323.0);
        assert_eq!(t.bps, 506_088.0 * 576.0 * 8.0);

        let capped = PredictionInput {
            bandwidth_cap: Some(1e9),
            ..PredictionInput::default()
        };
        let t = predict_throughput(&p, &capped).unwrap();
        assert!(t.bandwidth_limited);
        assert_eq!(t.bps, 1e9);
        assert_eq!(t.pps, 217_013.0);
    }

    #[test]
    fn doubling_per_packet_cost_halves_throughput() {
        let p = d();
        let mut doubled = p.clone();
        doubled.tx_per_pkt *= 2.0;
        doubled.rx_per_pkt *= 2.0;
        doubled.hash_per_pkt *= 2.0;
        doubled.table_lookup_per_pkt *= 2.0;
        doubled.crypto_passes = 2;
        assert_eq!(doubled.per_packet(), 2.0 * p.per_packet());
        let input = PredictionInput::default();
        let a = predict_throughput(&p, &input).unwrap();
        let b = predict_throughput(&doubled, &input).unwrap();
        assert_eq!(b.pps_exact * 2.0, a.pps_exact);
    }

    #[test]
    fn connection_rate_consumes_budget() {
        let p = d();
        let input = PredictionInput {
            conn_rate: Some(100.0),
            ..PredictionInput::default()
        };
        let t = predict_throughput(&p, &input).unwrap();
        assert_eq!(t.pps, ((3.2e9 - 100.0 * 2_326_558.0) / 6323.0f64).floor());
        assert!(predict_throughput(&p, &PredictionInput { cpu_hz: 0.0, ..input }).is_err());
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((smape(&[110.0], &[100.0]).unwrap() - 9.524).abs() < 1e-3);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(smape(&[0.0], &[5.0]).unwrap(), 200.0);
        assert!(matches!(smape(&[1.0], &[1.0, 2.0]), Err(ModelError::LengthMismatch { .. })));
        assert!(matches!(smape(&[], &[]), Err(ModelError::Empty)));
    }

    #[test]
    fn linear_fit_examples() {
        let f = fit_linear(&[(1.0, 70.0), (2.0, 140.0), (3.0, 210.0)], false).unwrap();
        assert!((f.slope - 70.0).abs() < 1e-9 && f.intercept.abs() < 1e-9 && f.smape < 1e-9);
        let f = fit_linear(&[(0.0, 1477.0), (1.0, 1831.0), (2.0, 2185.0)], false).unwrap();
        assert!((f.slope - 354.0).abs() < 1e-9 && (f.intercept - 1477.0).abs() < 1e-9);
        let f = fit_linear(&[(1.0, 70.0), (2.0, 140.0)], true).unwrap();
        assert!((f.slope - 70.0).abs() < 1e-12 && f.intercept == 0.0);
        assert!(matches!(fit_linear(&[(1.0, 1.0), (1.0, 2.0)], false), Err(ModelError::Degenerate(_))));
        assert!(matches!(fit_linear(&[(1.0, 1.0)], false), Err(ModelError::TooFewSamples { .. })));
    }

    #[test]
    fn sawtooth_fit_recovers_exact_coefficients() {
        let cs = [1000.0, 1500.0, 2048.0, 3000.0, 5000.0];
        let samples: Vec<_> = cs.iter().map(|&c| (c, ev(Component::Insert, c) / c)).collect();
        let f = fit_sawtooth(&samples).unwrap();
        assert!((f.base - 400.0).abs() < 1e-6, "{f:?}");
        assert!((f.saw - 170.0).abs() < 1e-6, "{f:?}");
        assert!(f.smape < 1e-9);
        assert!(matches!(fit_sawtooth(&samples[..1]), Err(ModelError::TooFewSamples { .. })));
        assert!(matches!(
            fit_sawtooth(&[(999.0, 1.0), (2000.0, 2.0)]),
            Err(ModelError::Domain { .. })
        ));
    }

    #[test]
    fn worst_case_approaches_base_plus_saw() {
        let mut prev = 0.0;
        for k in [10, 16, 24, 30, 40] {
            let c = 2f64.powi(k) + 1.0;
            let per = ev(Component::Insert, c) / c;
            assert!(per > prev && per < 570.0);
            prev = per;
        }
        assert!((570.0 - prev).abs() < 1e-6);
    }

    // The per-connection sawtooth dips just under the base cost right before
    // each doubling: at c = 2^(k+1) - 1 the shape term is -7/c.
    #[test]
    fn per_connection_sawtooth_bounds() {
        let p = d();
        let at = |c: f64| ev(Component::Insert, c) / c;
        assert!(at(2047.0) < 400.0);
        assert!((at(2047.0) - (400.0 - 170.0 * 7.0 / 2047.0)).abs() < 1e-9);
        for c in 1000..200_000u32 {
            let c = c as f64;
            let v = at(c);
            assert!(v >= p.table_insert_base - p.table_insert_saw * 7.0 / c - 1e-9, "c = {c}");
            assert!(v < p.insert_worst_case(), "c = {c}");
        }
    }

    #[test]
    fn params_json_round_trip_and_names() {
        let p = d();
        let json = p.to_json();
        for field in [
            "tx_per_pkt",
            "rx_per_pkt",
            "hash_per_pkt",
            "mem_per_conn",
            "mem_fixed",
            "table_insert_base",
            "table_insert_saw",
            "table_lookup_per_pkt",
            "hs_fixed",
            "hs_per_conn",
            "crypto_per_byte",
            "payload_bytes_per_pkt",
            "crypto_passes",
        ] {
            assert!(json.contains(&format!("\"{field}\"")), "{field}");
        }
        assert_eq!(CostModelParams::from_json(&json).unwrap(), p);
        let bad = json.replace("\"tx_per_pkt\": 66.0", "\"tx_per_pkt\": -1.0");
        assert!(matches!(
            CostModelParams::from_json(&bad),
            Err(ModelError::InvalidParam { field: "tx_per_pkt", .. })
        ));
        let bad = json.replace("\"payload_bytes_per_pkt\": 500.0", "\"payload_bytes_per_pkt\": 0.5");
        assert!(CostModelParams::from_json(&bad).is_err());
        assert!(CostModelParams::from_json("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn refit_updates_only_target() {
        let p = d();
        let samples: Vec<_> = (1..=10).map(|x| (x as f64 * 100.0, x as f64 * 100.0 * 80.0)).collect();
        let (q, err) = refit(&p, Component::Rx, &samples).unwrap();
        assert!((q.rx_per_pkt - 80.0).abs() < 1e-9 && err < 1e-9);
        assert_eq!(CostModelParams { rx_per_pkt: 77.0, ..q }, p);

        let samples: Vec<_> = (0..5).map(|c| (c as f64, 10.0 + 3.0 * c as f64)).collect();
        let (q, _) = refit(&p, Component::Handshake, &samples).unwrap();
        assert!((q.hs_fixed - 10.0).abs() < 1e-9 && (q.hs_per_conn - 3.0).abs() < 1e-9);
        assert!(refit(&p, Component::InsertWorst, &samples).is_err());
    }

    #[test]
    fn validation_files() {
        let csv_text = "component,arg,cycles\nrx,10,770\ntx, 10, 700\n# comment\nmem,0,1477\n";
        let rows = read_validation_rows(csv_text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        let forecast = forecast_rows(&d(), &rows, false).unwrap();
        let v = validate(&forecast, &rows).unwrap();
        assert_eq!(v.per_component.len(), 3);
        let tx = v.per_component.iter().find(|(c, _)| *c == Component::Tx).unwrap().1;
        assert!((tx - smape(&[660.0], &[700.0]).unwrap()).abs() < 1e-12);
        assert_eq!(validate(&rows, &rows).unwrap().total, 0.0);
        assert!(read_validation_rows("component,arg,cycles\nwarp,1,1\n".as_bytes()).is_err());

        let mut buf = Vec::new();
        write_validation_rows(&mut buf, &rows).unwrap();
        assert_eq!(read_validation_rows(&buf[..]).unwrap(), rows);
        let mut swapped = rows.clone();
        swapped.swap(0, 1);
        assert!(matches!(validate(&swapped, &rows), Err(ModelError::RowMismatch { row: 1, .. })));
    }

    #[test]
    fn fit_sample_files() {
        let samples = vec![(1.0, 70.0), (2.0, 140.5)];
        let mut buf = Vec::new();
        write_fit_samples(&mut buf, &samples).unwrap();
        assert!(buf.starts_with(b"x,cycles\n"));
        assert_eq!(read_fit_samples(&buf[..]).unwrap(), samples);
    }

    #[test]
    fn component_names_parse() {
        for c in Component::ALL {
            assert_eq!(c.name().parse::<Component>().unwrap(), c);
        }
        assert!("INSERT".parse::<Component>().is_ok());
        assert!("nope".parse::<Component>().is_err());
    }

    proptest! {
        #[test]
        fn total_is_sum_of_components(c in 0u32..1_000_000, p in 0u64..1_000_000_000, b in proptest::option::of(0u64..1_000_000_000_000)) {
            let params = d();
            let input = PredictionInput { b: b.map(|b| b as f64), ..PredictionInput::new(c as f64, p as f64) };
            let bytes = input.bytes(&params);
            let expect = eval_component(&params, Component::Tx, p as f64, false).unwrap()
                + eval_component(&params, Component::Rx, p as f64, false).unwrap()
                + eval_component(&params, Component::Hash, p as f64, false).unwrap()
                + eval_component(&params, Component::Lookup, p as f64, false).unwrap()
                + eval_component(&params, Component::Mem, c as f64, false).unwrap()
                + eval_component(&params, Component::InsertWorst, c as f64, false).unwrap()
                + eval_component(&params, Component::Handshake, c as f64, false).unwrap()
                + eval_component(&params, Component::Crypto, bytes, false).unwrap() * params.crypto_passes as f64;
            let total = eval_total(&params, &input).unwrap();
            prop_assert!((total - expect).abs() <= 1e-9 * expect.abs().max(1.0));
            // Closed form with the aggregate constants.
            let closed = 5_761_437.0 + 2_326_558.0 * c as f64 + 323.0 * p as f64 + 12.0 * bytes;
            prop_assert!((total - closed).abs() <= 1e-9 * closed);
        }

        #[test]
        fn total_is_monotone(c in 0u32..100_000, p in 0u32..1_000_000, b in 0u32..1_000_000, dc in 0u32..1000, dp in 0u32..1000, db in 0u32..1000) {
            let params = d();
            let at = |c: u32, p: u32, b: u32| eval_total(&params, &PredictionInput { b: Some(b as f64), ..PredictionInput::new(c as f64, p as f64) }).unwrap();
            let base = at(c, p, b);
            prop_assert!(at(c + dc, p, b) >= base);
            prop_assert!(at(c, p + dp, b) >= base);
            prop_assert!(at(c, p, b + db) >= base);
        }

        #[test]
        fn smape_symmetric_and_bounded(pairs in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..50)) {
            let (f, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let x = smape(&f, &a).unwrap();
            let y = smape(&a, &f).unwrap();
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!((0.0..=200.0 + 1e-9).contains(&x));
        }
    }
}
