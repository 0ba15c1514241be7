use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::ingest::ObjectClass;

use super::eval::{ConfusionMatrix, EvalReport};

fn confusion_header() -> String {
    let mut h = String::new();
    for t in ObjectClass::ALL {
        for p in ObjectClass::ALL {
            write!(h, ",true_{t}_pred_{p}").unwrap();
        }
    }
    h
}

fn row(out: &mut String, point: &str, samples: Option<u64>, m: &ConfusionMatrix) {
    let samples = samples.map_or(String::new(), |s| s.to_string());
    write!(out, "{point},{samples},{},{}", m.micro_f1(), m.macro_f1()).unwrap();
    for v in m.0.iter().flatten() {
        write!(out, ",{v}").unwrap();
    }
    out.push('\n');
}

/// One row per checkpoint plus a `final` row. Columns: point, samples
/// learned, micro-F1, macro-F1, then the confusion matrix row-major as
/// `true_<class>_pred_<class>`.
pub fn report_csv(report: &EvalReport, samples_learned: u64) -> String {
    let mut out = format!(
        "point,samples_learned,micro_f1,macro_f1{}\n",
        confusion_header()
    );
    for (i, p) in report.series.iter().enumerate() {
        row(
            &mut out,
            &format!("checkpoint_{}", i + 1),
            Some(p.samples_learned),
            &p.confusion,
        );
    }
    row(&mut out, "final", Some(samples_learned), &report.confusion);
    out
}

pub fn write_report_csv(path: &Path, report: &EvalReport, samples_learned: u64) -> Result<()> {
    fs::write(path, report_csv(report, samples_learned)).map_err(|e| Error::io(path, e))
}

/// Stages of the frame loop, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Segment,
    Annotate,
    Describe,
    Track,
    Discriminate,
    Learn,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Segment,
        Stage::Annotate,
        Stage::Describe,
        Stage::Track,
        Stage::Discriminate,
        Stage::Learn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Segment => "segment",
            Stage::Annotate => "annotate",
            Stage::Describe => "describe",
            Stage::Track => "track",
            Stage::Discriminate => "discriminate",
            Stage::Learn => "learn",
        }
    }
}

/// Upper bucket edges in milliseconds; a last bucket takes the rest.
pub const BUCKET_EDGES_MS: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

/// Per-stage wall time of every processed frame. Kept out of [`EvalReport`]
/// so reports stay reproducible.
#[derive(Clone, Debug, Default)]
pub struct Telemetry {
    samples: [Vec<Duration>; Stage::ALL.len()],
}

impl Telemetry {
    pub fn record(&mut self, stage: Stage, elapsed: Duration) {
        self.samples[stage as usize].push(elapsed);
    }

    pub fn durations(&self, stage: Stage) -> &[Duration] {
        &self.samples[stage as usize]
    }

    pub fn histogram(&self, stage: Stage) -> [u64; BUCKET_EDGES_MS.len() + 1] {
        let mut h = [0; BUCKET_EDGES_MS.len() + 1];
        for d in self.durations(stage) {
            let ms = d.as_secs_f64() * 1e3;
            h[BUCKET_EDGES_MS
                .iter()
                .position(|&e| ms <= e)
                .unwrap_or(BUCKET_EDGES_MS.len())] += 1;
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,frames,total_ms,mean_ms,p50_ms,p95_ms,max_ms");
        for e in BUCKET_EDGES_MS {
            write!(out, ",le_{e}ms").unwrap();
        }
        writeln!(out, ",gt_{}ms", BUCKET_EDGES_MS[BUCKET_EDGES_MS.len() - 1]).unwrap();
        for stage in Stage::ALL {
            let mut ms: Vec<f64> = self
                .durations(stage)
                .iter()
                .map(|d| d.as_secs_f64() * 1e3)
                .collect();
            ms.sort_by(f64::total_cmp);
            let total: f64 = ms.iter().sum();
            let pct = |q: f64| {
                if ms.is_empty() {
                    0.0
                } else {
                    ms[((ms.len() - 1) as f64 * q).round() as usize]
                }
            };
            let mean = if ms.is_empty() {
                0.0
            } else {
                total / ms.len() as f64
            };
            write!(
                out,
                "{},{},{total:.3},{mean:.3},{:.3},{:.3},{:.3}",
                stage.name(),
                ms.len(),
                pct(0.5),
                pct(0.95),
                ms.last().copied().unwrap_or(0.0)
            )
            .unwrap();
            for n in self.histogram(stage) {
                write!(out, ",{n}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::eval::SeriesPoint;

    #[test]
    fn report_has_nine_labelled_confusion_columns() {
        let m = ConfusionMatrix([[3, 1, 0], [0, 2, 0], [0, 0, 4]]);
        let report = EvalReport::from_confusion(
            m,
            vec![SeriesPoint {
                samples_learned: 100,
                confusion: m,
            }],
        );
        let csv = report_csv(&report, 150);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let header: Vec<_> = lines[0].split(',').collect();
        assert_eq!(header.len(), 13);
        assert_eq!(header[4], "true_Car_pred_Car");
        assert_eq!(header[5], "true_Car_pred_Pedestrian");
        assert_eq!(header[12], "true_Cyclist_pred_Cyclist");
        assert!(lines[1].starts_with("checkpoint_1,100,0.9,"));
        assert!(lines[2].starts_with("final,150,"));
        assert!(lines[2].ends_with(",3,1,0,0,2,0,0,0,4"));
    }

    #[test]
    fn histogram_buckets() {
        let mut t = Telemetry::default();
        for ms in [0.5, 1.0, 1.5, 30.0, 500.0] {
            t.record(Stage::Track, Duration::from_secs_f64(ms / 1e3));
        }
        assert_eq!(t.histogram(Stage::Track), [2, 1, 0, 0, 0, 1, 0, 1]);
        assert_eq!(t.histogram(Stage::Learn), [0; 8]);
        assert_eq!(t.to_csv().lines().count(), 1 + Stage::ALL.len());
    }
}
