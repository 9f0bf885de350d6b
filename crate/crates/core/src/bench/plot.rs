//! Tidy per-figure series (`figure,series,x,y`) extracted from bench reports.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::{BenchError, BenchReport, StageKind, StageSample};

pub const PLOT_HEADER: &str = "figure,series,x,y";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Offered versus achieved load from a blackbox sweep.
    Fig4,
    /// Packet IO and flow hashing cycles per packet over payload size.
    Fig5,
    /// State table and allocation cycles over connection count.
    Fig6,
    /// Handshake cycles over connection count, one series per key exchange.
    Fig7,
    /// Handshake cycles over connection count, with and without key reuse.
    Fig8,
    /// Seal and open cycles over payload size, one series per suite.
    Fig9,
}

impl Figure {
    pub const ALL: [Figure; 6] = [
        Figure::Fig4,
        Figure::Fig5,
        Figure::Fig6,
        Figure::Fig7,
        Figure::Fig8,
        Figure::Fig9,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Fig8 => "fig8",
            Figure::Fig9 => "fig9",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| BenchError::Config(format!("unknown figure {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub figure: &'static str,
    pub series: String,
    pub x: f64,
    pub y: f64,
}

fn x_bytes(s: &StageSample) -> f64 {
    s.bytes.unwrap_or(0) as f64
}

fn x_conns(s: &StageSample) -> f64 {
    s.connections.unwrap_or(0) as f64
}

/// Collects the series of `figure` from every report, sorted by series then x.
pub fn plot_rows(reports: &[BenchReport], figure: Figure) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    let mut push = |series: String, x: f64, y: f64| {
        rows.push(PlotRow {
            figure: figure.name(),
            series,
            x,
            y,
        })
    };
    for r in reports {
        let samples = |stages: &'static [StageKind]| r.samples.iter().filter(move |s| stages.contains(&s.stage));
        match figure {
            Figure::Fig4 => {
                for p in r.blackbox.iter().flatten() {
                    push("achieved_pps".into(), p.offered_pps, p.achieved_pps);
                    push("achieved_mbps".into(), p.offered_pps, p.achieved_bps / 1e6);
                }
            }
            Figure::Fig5 => {
                for s in samples(&[StageKind::IoRx, StageKind::IoTx, StageKind::Hash]) {
                    push(s.stage.name().into(), x_bytes(s), s.mean);
                }
            }
            Figure::Fig6 => {
                for s in samples(&[StageKind::TableLookup, StageKind::TableInsert, StageKind::StateAlloc]) {
                    push(s.stage.name().into(), x_conns(s), s.mean);
                }
            }
            Figure::Fig7 => {
                for s in samples(&[StageKind::Handshake]) {
                    push(r.meta.kex.name().into(), x_conns(s), s.mean);
                }
            }
            Figure::Fig8 => {
                let series = if r.meta.reuse_kex { "reuse" } else { "noreuse" };
                for s in samples(&[StageKind::Handshake]) {
                    push(series.into(), x_conns(s), s.mean);
                }
            }
            Figure::Fig9 => {
                for s in samples(&[StageKind::CryptoSeal, StageKind::CryptoOpen]) {
                    let suite = r.meta.suite.name();
                    push(format!("{}/{suite}", s.stage.name()), x_bytes(s), s.mean);
                }
            }
        }
    }
    rows.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    rows
}

pub fn plot_csv(rows: &[PlotRow]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PLOT_HEADER.split(','))?;
    for r in rows {
        w.write_record([r.figure, &r.series, &r.x.to_string(), &r.y.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{BlackboxPoint, RunMeta};
    use crate::secure_channel::{CipherSuite, KexMethod};

    fn sample(stage: StageKind, mean: u64, bytes: Option<u64>, conns: Option<u64>) -> StageSample {
        let mut s = StageSample::from_timings(stage, &[mean]).unwrap();
        s.bytes = bytes;
        s.connections = conns;
        s
    }

    #[test]
    fn figure_names_round_trip() {
        for f in Figure::ALL {
            assert_eq!(f.name().parse::<Figure>().unwrap(), f);
        }
        assert!("fig3".parse::<Figure>().is_err());
    }

    #[test]
    fn series_are_tidy() {
        let mut a = BenchReport::default();
        a.meta = RunMeta {
            suite: CipherSuite::Aes128Gcm,
            kex: KexMethod::Ecdhe,
            reuse_kex: true,
            ..RunMeta::default()
        };
        a.samples = vec![
            sample(StageKind::Handshake, 900, None, Some(100)),
            sample(StageKind::Handshake, 1000, None, Some(10)),
            sample(StageKind::CryptoSeal, 700, Some(500), None),
        ];
        a.blackbox = Some(vec![BlackboxPoint {
            offered_pps: 1000.0,
            achieved_pps: 990.0,
            achieved_bps: 4e6,
        }]);
        let mut b = a.clone();
        b.meta.reuse_kex = false;
        b.blackbox = None;

        let rows = plot_rows(&[a.clone(), b], Figure::Fig8);
        let got: Vec<(&str, f64, f64)> = rows.iter().map(|r| (r.series.as_str(), r.x, r.y)).collect();
        assert_eq!(
            got,
            vec![
                ("noreuse", 10.0, 1000.0),
                ("noreuse", 100.0, 900.0),
                ("reuse", 10.0, 1000.0),
                ("reuse", 100.0, 900.0)
            ]
        );
        let csv = plot_csv(&plot_rows(&[a.clone()], Figure::Fig9)).unwrap();
        assert_eq!(csv, "figure,series,x,y\nfig9,CRYPTO_SEAL/aes128gcm,500,700\n".replace("aes128gcm", CipherSuite::Aes128Gcm.name()));
        let fig4 = plot_rows(&[a], Figure::Fig4);
        assert_eq!(fig4.len(), 2);
        assert_eq!(fig4[0].series, "achieved_mbps");
        assert_eq!(fig4[0].y, 4.0);
        assert!(plot_rows(&[], Figure::Fig5).is_empty());
    }
}
