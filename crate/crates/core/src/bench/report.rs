//! Bench reports and their CSV/JSON files.
//!
//! CSV layout: `# key=value` metadata lines, the sample table with header
//! `stage,iterations,total_cycles,mean,min,max,bytes,connections`, then, when
//! present, a blank line and the blackbox table with header
//! `offered_pps,achieved_pps,achieved_bps`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BenchError, ClockSource, StageKind};
use crate::secure_channel::{CipherSuite, KexMethod};

pub const SAMPLE_HEADER: &str = "stage,iterations,total_cycles,mean,min,max,bytes,connections";
pub const BLACKBOX_HEADER: &str = "offered_pps,achieved_pps,achieved_bps";

/// Aggregate of one stage measurement. `bytes` is payload bytes per
/// operation; `connections` the table size or connection count in play.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSample {
    pub stage: StageKind,
    pub iterations: u64,
    pub total_cycles: u64,
    pub mean: f64,
    pub min: u64,
    pub max: u64,
    pub bytes: Option<u64>,
    pub connections: Option<u64>,
}

impl StageSample {
    /// Aggregates per-operation timings. Fails on an empty slice.
    pub fn from_timings(stage: StageKind, timings: &[u64]) -> Result<Self, BenchError> {
        if timings.is_empty() {
            return Err(BenchError::Config("no timings to aggregate".into()));
        }
        let total: u64 = timings.iter().sum();
        Ok(Self {
            stage,
            iterations: timings.len() as u64,
            total_cycles: total,
            mean: total as f64 / timings.len() as f64,
            min: *timings.iter().min().expect("non-empty"),
            max: *timings.iter().max().expect("non-empty"),
            bytes: None,
            connections: None,
        })
    }

    pub fn with_bytes(mut self, bytes: u64) -> Self {
        self.bytes = Some(bytes);
        self
    }

    pub fn with_connections(mut self, connections: u64) -> Self {
        self.connections = Some(connections);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackboxPoint {
    pub offered_pps: f64,
    pub achieved_pps: f64,
    pub achieved_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub suite: CipherSuite,
    pub kex: KexMethod,
    pub reuse_kex: bool,
    pub payload_bytes: u64,
    pub clock_source: ClockSource,
    pub nominal_hz: f64,
    pub warmup: u64,
    pub repetitions: u64,
    pub seed: Option<u64>,
    pub created_unix: u64,
    /// Effective run configuration as compact JSON.
    pub config: String,
}

impl Default for RunMeta {
    fn default() -> Self {
        Self {
            suite: CipherSuite::ChaCha20Poly1305,
            kex: KexMethod::Ecdhe,
            reuse_kex: true,
            payload_bytes: 500,
            clock_source: ClockSource::Monotonic,
            nominal_hz: 3.2e9,
            warmup: 0,
            repetitions: 1,
            seed: None,
            created_unix: 0,
            config: "{}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BenchReport {
    pub meta: RunMeta,
    pub samples: Vec<StageSample>,
    pub blackbox: Option<Vec<BlackboxPoint>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `json` by extension, CSV otherwise.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl BenchReport {
    pub fn to_csv(&self) -> Result<String, BenchError> {
        let m = &self.meta;
        let mut out = String::new();
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(out, "# suite={}", m.suite.name());
        let _ = writeln!(out, "# kex={}", m.kex.name());
        let _ = writeln!(out, "# reuse_kex={}", m.reuse_kex);
        let _ = writeln!(out, "# payload_bytes={}", m.payload_bytes);
        let _ = writeln!(out, "# clock_source={}", m.clock_source);
        let _ = writeln!(out, "# nominal_hz={}", m.nominal_hz);
        let _ = writeln!(out, "# warmup={}", m.warmup);
        let _ = writeln!(out, "# repetitions={}", m.repetitions);
        let _ = writeln!(out, "# seed={}", opt(m.seed));
        let _ = writeln!(out, "# created_unix={}", m.created_unix);
        let _ = writeln!(out, "# config={}", m.config.replace('\n', " "));

        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(SAMPLE_HEADER.split(','))?;
        for s in &self.samples {
            w.write_record([
                s.stage.name().to_string(),
                s.iterations.to_string(),
                s.total_cycles.to_string(),
                s.mean.to_string(),
                s.min.to_string(),
                s.max.to_string(),
                opt(s.bytes),
                opt(s.connections),
            ])?;
        }
        out.push_str(&finish(w)?);
        if let Some(points) = &self.blackbox {
            out.push('\n');
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(BLACKBOX_HEADER.split(','))?;
            for p in points {
                w.write_record([
                    p.offered_pps.to_string(),
                    p.achieved_pps.to_string(),
                    p.achieved_bps.to_string(),
                ])?;
            }
            out.push_str(&finish(w)?);
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let mut meta = RunMeta::default();
        let mut sections: Vec<Vec<&str>> = vec![Vec::new()];
        for line in text.lines() {
            if let Some(kv) = line.strip_prefix('#') {
                let (k, v) = kv.trim_start().split_once('=').unwrap_or((kv.trim(), ""));
                apply_meta(&mut meta, k.trim(), v)?;
            } else if line.trim().is_empty() {
                if !sections.last().expect("non-empty").is_empty() {
                    sections.push(Vec::new());
                }
            } else {
                sections.last_mut().expect("non-empty").push(line);
            }
        }
        sections.retain(|s| !s.is_empty());

        let mut report = BenchReport {
            meta,
            ..BenchReport::default()
        };
        let mut iter = sections.into_iter();
        match iter.next() {
            None => return Err(BenchError::Format("missing sample header".into())),
            Some(lines) => {
                if lines[0].trim() != SAMPLE_HEADER {
                    return Err(BenchError::Format(format!("bad sample header {:?}", lines[0])));
                }
                for rec in records(&lines[1..])? {
                    report.samples.push(parse_sample(&rec)?);
                }
            }
        }
        if let Some(lines) = iter.next() {
            if lines[0].trim() != BLACKBOX_HEADER {
                return Err(BenchError::Format(format!("bad blackbox header {:?}", lines[0])));
            }
            let mut points = Vec::new();
            for rec in records(&lines[1..])? {
                if rec.len() != 3 {
                    return Err(BenchError::Format("blackbox row needs 3 fields".into()));
                }
                points.push(BlackboxPoint {
                    offered_pps: num(&rec[0])?,
                    achieved_pps: num(&rec[1])?,
                    achieved_bps: num(&rec[2])?,
                });
            }
            report.blackbox = Some(points);
        }
        if iter.next().is_some() {
            return Err(BenchError::Format("unexpected trailing section".into()));
        }
        Ok(report)
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn samples_for(&self, stage: StageKind) -> impl Iterator<Item = &StageSample> {
        self.samples.iter().filter(move |s| s.stage == stage)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, BenchError> {
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn records(lines: &[&str]) -> Result<Vec<csv::StringRecord>, BenchError> {
    let joined = lines.join("\n");
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(joined.as_bytes());
    Ok(rdr.records().collect::<Result<Vec<_>, _>>()?)
}

fn num<T: FromStr>(s: &str) -> Result<T, BenchError> {
    s.parse()
        .map_err(|_| BenchError::Format(format!("bad number {s:?}")))
}

fn opt_num(s: &str) -> Result<Option<u64>, BenchError> {
    if s.is_empty() {
        Ok(None)
    } else {
        num(s).map(Some)
    }
}

fn parse_sample(rec: &csv::StringRecord) -> Result<StageSample, BenchError> {
    if rec.len() != 8 {
        return Err(BenchError::Format(format!("sample row needs 8 fields, got {}", rec.len())));
    }
    Ok(StageSample {
        stage: rec[0].parse().map_err(BenchError::Format)?,
        iterations: num(&rec[1])?,
        total_cycles: num(&rec[2])?,
        mean: num(&rec[3])?,
        min: num(&rec[4])?,
        max: num(&rec[5])?,
        bytes: opt_num(&rec[6])?,
        connections: opt_num(&rec[7])?,
    })
}

fn apply_meta(m: &mut RunMeta, key: &str, v: &str) -> Result<(), BenchError> {
    let bad = |e: String| BenchError::Format(format!("metadata {key}: {e}"));
    match key {
        "suite" => m.suite = v.parse().map_err(bad)?,
        "kex" => m.kex = v.parse().map_err(bad)?,
        "reuse_kex" => m.reuse_kex = v.parse().map_err(|_| bad(v.into()))?,
        "payload_bytes" => m.payload_bytes = num(v)?,
        "clock_source" => m.clock_source = v.parse().map_err(bad)?,
        "nominal_hz" => m.nominal_hz = num(v)?,
        "warmup" => m.warmup = num(v)?,
        "repetitions" => m.repetitions = num(v)?,
        "seed" => m.seed = opt_num(v)?,
        "created_unix" => m.created_unix = num(v)?,
        "config" => m.config = v.to_string(),
        // Unknown keys are free-form comments.
        _ => {}
    }
    Ok(())
}

/// Writes `report` to `path` in `format`.
pub fn emit_report(report: &BenchReport, path: &Path, format: ReportFormat) -> Result<(), BenchError> {
    let text = match format {
        ReportFormat::Csv => report.to_csv()?,
        ReportFormat::Json => report.to_json()?,
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: &Path, format: ReportFormat) -> Result<BenchReport, BenchError> {
    let text = fs::read_to_string(path)?;
    match format {
        ReportFormat::Csv => BenchReport::from_csv(&text),
        ReportFormat::Json => BenchReport::from_json(&text),
    }
}
