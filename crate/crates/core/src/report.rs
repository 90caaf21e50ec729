//! Metrics extraction and threshold sweeps.
//!
//! CSV layouts (all headers fixed):
//!
//! | file           | header                                                     |
//! |----------------|------------------------------------------------------------|
//! | metrics.csv    | `strategy,mean_rtt_ms,median_rtt_ms,p99_rtt_ms,rtt_samples,migration_count,mean_inter_migration_s,residual_s,mean_replicas,max_replicas,overlap_fraction,downtime_fraction` |
//! | durations.csv  | `strategy,handoff_s,duration_s`                            |
//! | replicas.csv   | `strategy,t_s,replicas`                                    |
//! | rtt.csv        | `strategy,t_s,site_id,rtt_ms`                              |
//! | sweep.csv      | `threshold,unit,migration_count,p99_rtt_ms,mean_rtt_ms`    |
//!
//! Percentiles use the nearest-rank method over all `(t, client)` samples.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lifecycle::MigrationTimeline;
use crate::strategies::{run_strategy_with, IslDelays, Kind, Schedule, StrategySpec, Threshold};
use crate::traces::Trace;

pub const METRICS_HEADER: [&str; 12] = [
    "strategy",
    "mean_rtt_ms",
    "median_rtt_ms",
    "p99_rtt_ms",
    "rtt_samples",
    "migration_count",
    "mean_inter_migration_s",
    "residual_s",
    "mean_replicas",
    "max_replicas",
    "overlap_fraction",
    "downtime_fraction",
];
pub const DURATIONS_HEADER: [&str; 3] = ["strategy", "handoff_s", "duration_s"];
pub const REPLICAS_HEADER: [&str; 3] = ["strategy", "t_s", "replicas"];
pub const RTT_HEADER: [&str; 4] = ["strategy", "t_s", "site_id", "rtt_ms"];
pub const SWEEP_HEADER: [&str; 5] = ["threshold", "unit", "migration_count", "p99_rtt_ms", "mean_rtt_ms"];

/// Nearest-rank percentile of an ascending slice; `p` in (0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RttSample {
    pub t: u32,
    pub site: usize,
    pub rtt_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub strategy: String,
    pub mean_rtt_ms: f64,
    pub median_rtt_ms: f64,
    pub p99_rtt_ms: f64,
    pub samples: Vec<RttSample>,
    pub sites: Vec<String>,
    pub migration_count: usize,
    pub handoffs_s: Vec<u32>,
    /// Time since the previous hand-off (or initial placement).
    pub durations_s: Vec<u32>,
    /// Time from the last hand-off to the end of the trace.
    pub residual_s: u32,
    pub mean_duration_s: f64,
    pub replica_series: Vec<(u32, usize)>,
    pub mean_replicas: f64,
    pub max_replicas: usize,
    pub overlap_fraction: f64,
    pub downtime_fraction: f64,
}

/// RTT is twice the one-way latency to the assigned satellite, sampled at
/// every covered `(t, client)` after the first `ramp_up_s` seconds.
pub fn compute_metrics(
    trace: &Trace,
    schedule: &Schedule,
    timeline: Option<&MigrationTimeline>,
    ramp_up_s: u32,
) -> MetricsReport {
    let start = trace.start_s();
    let end = start + trace.duration_s();
    let mut samples = Vec::new();
    for (ti, &t) in schedule.times.iter().enumerate() {
        if t < start + ramp_up_s {
            continue;
        }
        let Some(tti) = trace.time_index(t) else { continue };
        for si in 0..schedule.sites.len() {
            let Some(tsi) = trace.site_index(&schedule.sites[si]) else { continue };
            if let Some(us) = schedule.assigned(ti, si).and_then(|sat| trace.latency_us(tti, tsi, sat)) {
                samples.push(RttSample {
                    t,
                    site: si,
                    rtt_ms: 2.0 * f64::from(us) / 1000.0,
                });
            }
        }
    }
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.rtt_ms).collect();
    sorted.sort_by(f64::total_cmp);
    let mean_rtt_ms = if sorted.is_empty() {
        f64::NAN
    } else {
        sorted.iter().sum::<f64>() / sorted.len() as f64
    };

    let mut prev = schedule
        .migrations
        .iter()
        .find(|m| m.bootstrap)
        .map_or(start, |m| m.t_handoff);
    let mut handoffs_s = Vec::new();
    let mut durations_s = Vec::new();
    for m in schedule.migrations.iter().filter(|m| !m.bootstrap) {
        handoffs_s.push(m.t_handoff);
        durations_s.push(m.t_handoff - prev);
        prev = m.t_handoff;
    }
    let residual_s = end.saturating_sub(prev);
    let mean_duration_s = if durations_s.is_empty() {
        f64::NAN
    } else {
        durations_s.iter().map(|&d| f64::from(d)).sum::<f64>() / durations_s.len() as f64
    };

    let replica_series: Vec<(u32, usize)> = schedule
        .times
        .iter()
        .zip(&schedule.replicas)
        .map(|(&t, r)| (t, r.len()))
        .collect();
    let mean_replicas = if replica_series.is_empty() {
        0.0
    } else {
        replica_series.iter().map(|r| r.1 as f64).sum::<f64>() / replica_series.len() as f64
    };
    let duration = f64::from(trace.duration_s());

    MetricsReport {
        strategy: schedule.spec.label(),
        mean_rtt_ms,
        median_rtt_ms: percentile(&sorted, 50.0).unwrap_or(f64::NAN),
        p99_rtt_ms: percentile(&sorted, 99.0).unwrap_or(f64::NAN),
        samples,
        sites: schedule.sites.clone(),
        migration_count: schedule.migration_count(),
        handoffs_s,
        durations_s,
        residual_s,
        mean_duration_s,
        max_replicas: replica_series.iter().map(|r| r.1).max().unwrap_or(0),
        replica_series,
        mean_replicas,
        overlap_fraction: timeline.map_or(0.0, |t| t.overlap_fraction),
        downtime_fraction: timeline.map_or(0.0, |t| t.downtime_fraction(duration)),
    }
}

fn csv_err(what: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Config(format!("writing {what}: {e}"))
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(METRICS_HEADER)?;
        for r in reports {
            w.write_record([
                r.strategy.clone(),
                f4(r.mean_rtt_ms),
                f4(r.median_rtt_ms),
                f4(r.p99_rtt_ms),
                r.samples.len().to_string(),
                r.migration_count.to_string(),
                f4(r.mean_duration_s),
                r.residual_s.to_string(),
                f4(r.mean_replicas),
                r.max_replicas.to_string(),
                f4(r.overlap_fraction),
                f4(r.downtime_fraction),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_err("metrics"))
}

pub fn write_durations_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(DURATIONS_HEADER)?;
        for r in reports {
            for (t, d) in r.handoffs_s.iter().zip(&r.durations_s) {
                w.write_record([r.strategy.clone(), t.to_string(), d.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_err("durations"))
}

pub fn write_replicas_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(REPLICAS_HEADER)?;
        for r in reports {
            for (t, n) in &r.replica_series {
                w.write_record([r.strategy.clone(), t.to_string(), n.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_err("replicas"))
}

pub fn write_rtt_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(RTT_HEADER)?;
        for r in reports {
            for s in &r.samples {
                w.write_record([r.strategy.clone(), s.t.to_string(), r.sites[s.site].clone(), f4(s.rtt_ms)])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_err("rtt samples"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "strategy           {}", self.strategy)?;
        writeln!(
            f,
            "rtt (ms)           mean {:.3}  median {:.3}  p99 {:.3}  ({} samples)",
            self.mean_rtt_ms,
            self.median_rtt_ms,
            self.p99_rtt_ms,
            self.samples.len()
        )?;
        writeln!(
            f,
            "migrations         {}  (mean {:.1} s between hand-offs)",
            self.migration_count, self.mean_duration_s
        )?;
        writeln!(f, "replicas           mean {:.2}  max {}", self.mean_replicas, self.max_replicas)?;
        write!(
            f,
            "overlap / downtime {:.4} / {:.4}",
            self.overlap_fraction, self.downtime_fraction
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold: Threshold,
    pub migration_count: usize,
    pub p99_rtt_ms: f64,
    pub mean_rtt_ms: f64,
}

fn threshold_value(t: Threshold) -> f64 {
    match t {
        Threshold::Relative(v) | Threshold::AbsoluteMs(v) => v,
    }
}

/// Runs the threshold heuristic once per value, keeping the template's
/// aggregation and cardinality. Rows come back sorted by threshold.
pub fn pareto_sweep(
    trace: &Trace,
    thresholds: &[Threshold],
    template: &StrategySpec,
    isl: Option<&dyn IslDelays>,
    ramp_up_s: u32,
) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(Error::Config("sweep needs at least one threshold".into()));
    }
    let mut rows = thresholds
        .par_iter()
        .map(|&threshold| {
            let spec = StrategySpec {
                kind: Kind::Threshold,
                threshold: Some(threshold),
                ..*template
            };
            let schedule = run_strategy_with(trace, &spec, isl)?;
            let m = compute_metrics(trace, &schedule, None, ramp_up_s);
            Ok(SweepRow {
                threshold,
                migration_count: m.migration_count,
                p99_rtt_ms: m.p99_rtt_ms,
                mean_rtt_ms: m.mean_rtt_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| threshold_value(a.threshold).total_cmp(&threshold_value(b.threshold)));
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(SWEEP_HEADER)?;
        for r in rows {
            let (v, unit) = match r.threshold {
                Threshold::Relative(v) => (v, "fraction"),
                Threshold::AbsoluteMs(v) => (v, "ms"),
            };
            w.write_record([
                f4(v),
                unit.to_string(),
                r.migration_count.to_string(),
                f4(r.p99_rtt_ms),
                f4(r.mean_rtt_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_err("sweep"))
}

/// Parses `lo:hi:step` (inclusive) or a comma-separated list.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("invalid threshold list {s:?}"));
    let num = |x: &str| -> Result<f64> {
        let v: f64 = x.trim().parse().map_err(|_| bad())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad())
        }
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if !(step > 0.0) || hi < lo {
                return Err(bad());
            }
            let n = ((hi - lo) / step + 1e-9).floor();
            if n > 10_000.0 {
                return Err(Error::Config(format!("threshold range {s:?} has too many values")));
            }
            Ok((0..=n as usize)
                .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
                .collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::{plan_timeline, CostModel};
    use crate::strategies::{run_strategy, Aggregation, Cardinality};
    use crate::traces::{Sample, TraceBuilder};
    use proptest::prelude::*;

    fn constant_trace(len: u32) -> Trace {
        let mut b = TraceBuilder::new(vec!["a".into(), "b".into()]);
        for t in 0..len {
            b.push_step(
                t,
                vec![
                    Some(vec![Sample { sat: 3, one_way_us: 2500 }]),
                    Some(vec![Sample { sat: 3, one_way_us: 2500 }]),
                ],
            );
        }
        b.finish()
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&v, 50.0), Some(50.0));
        assert_eq!(percentile(&[7.0], 99.0), Some(7.0));
        assert_eq!(percentile(&[], 99.0), None);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 100.0), Some(3.0));
    }

    #[test]
    fn constant_trace_metrics() {
        let tr = constant_trace(30);
        let s = run_strategy(&tr, &StrategySpec::minmax(Cardinality::ManyToOne)).unwrap();
        let m = compute_metrics(&tr, &s, None, 0);
        assert_eq!(m.mean_rtt_ms, 5.0);
        assert_eq!(m.p99_rtt_ms, 5.0);
        assert_eq!(m.median_rtt_ms, 5.0);
        assert_eq!(m.migration_count, 0);
        assert!(m.durations_s.is_empty());
        assert_eq!(m.residual_s, 30);
        assert_eq!(m.samples.len(), 60);
        assert_eq!((m.mean_replicas, m.max_replicas), (1.0, 1));
    }

    #[test]
    fn ramp_up_is_excluded() {
        let mut b = TraceBuilder::new(vec!["a".into()]);
        for t in 0..10 {
            let us = if t < 4 { 9000 } else { 1000 };
            b.push_step(t, vec![Some(vec![Sample { sat: 1, one_way_us: us }])]);
        }
        let tr = b.finish();
        let s = run_strategy(&tr, &StrategySpec::minmax(Cardinality::OneToOne)).unwrap();
        let m = compute_metrics(&tr, &s, None, 4);
        assert_eq!(m.samples.len(), 6);
        assert_eq!(m.mean_rtt_ms, 2.0);
    }

    fn alternating(len: u32, period: u32) -> Trace {
        let mut b = TraceBuilder::new(vec!["c".into()]);
        for t in 0..len {
            let (x, y) = if (t / period) % 2 == 0 { (1000, 3000) } else { (3000, 1000) };
            b.push_step(
                t,
                vec![Some(vec![Sample { sat: 1, one_way_us: x }, Sample { sat: 2, one_way_us: y }])],
            );
        }
        b.finish()
    }

    #[test]
    fn durations_partition_the_trace() {
        let tr = alternating(100, 15);
        let s = run_strategy(&tr, &StrategySpec::minmax(Cardinality::OneToOne)).unwrap();
        let (tl, _) = plan_timeline(&s, 0.0, &CostModel::container(), 0.0).unwrap();
        let m = compute_metrics(&tr, &s, Some(&tl), 0);
        assert_eq!(m.migration_count, m.durations_s.len());
        assert_eq!(m.durations_s, vec![15; 6]);
        assert_eq!(m.durations_s.iter().sum::<u32>() + m.residual_s, 100);
        assert!(m.p99_rtt_ms >= m.median_rtt_ms);
        assert!((m.downtime_fraction - 6.0 * 3.82 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn decoupled_ready_means_no_downtime() {
        let tr = alternating(100, 15);
        let s = run_strategy(&tr, &StrategySpec::minmax(Cardinality::OneToOne)).unwrap();
        let (tl, _) = plan_timeline(&s, 20.0, &CostModel::decoupled(), 10.0).unwrap();
        assert_eq!(compute_metrics(&tr, &s, Some(&tl), 0).downtime_fraction, 0.0);
    }

    #[test]
    fn range_parsing() {
        let v = parse_values("0:0.50:0.05").unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v[3], 0.15);
        assert_eq!(v[10], 0.5);
        assert_eq!(parse_values("0.1").unwrap(), vec![0.1]);
        assert_eq!(parse_values("1,2.5").unwrap(), vec![1.0, 2.5]);
        for bad in ["", "a", "0:1", "0:1:0", "1:0:0.1", "0:1:-1", "nan", "0:1e12:1e-9"] {
            assert!(parse_values(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn sweep_rows_sorted_and_endpoint_matches_minmax() {
        let tr = alternating(200, 7);
        let tpl = StrategySpec::relative(0.0, Cardinality::OneToOne).with_aggregation(Aggregation::Mean);
        let ths: Vec<Threshold> = [0.5, 0.0, 0.8].into_iter().map(Threshold::Relative).collect();
        let rows = pareto_sweep(&tr, &ths, &tpl, None, 0).unwrap();
        assert_eq!(rows.iter().map(|r| threshold_value(r.threshold)).collect::<Vec<_>>(), vec![0.0, 0.5, 0.8]);
        let mm = run_strategy(&tr, &StrategySpec::minmax(Cardinality::OneToOne)).unwrap();
        assert_eq!(rows[0].migration_count, mm.migration_count());
        // 1 ms vs 3 ms: a 67% gain clears 50% but not 80%.
        assert_eq!(rows[1].migration_count, mm.migration_count());
        assert_eq!(rows[2].migration_count, 0);
        assert!(pareto_sweep(&tr, &[], &tpl, None, 0).is_err());
    }

    #[test]
    fn headers_are_stable() {
        let tr = constant_trace(3);
        let s = run_strategy(&tr, &StrategySpec::minmax(Cardinality::ManyToOne)).unwrap();
        let m = [compute_metrics(&tr, &s, None, 0)];
        let mut buf = Vec::new();
        write_metrics_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "minmax,5.0000,5.0000,5.0000,6,0,NaN,3,1.0000,1,0.0000,0.0000"
        );
    }

    proptest! {
        #[test]
        fn p99_at_least_median(v in proptest::collection::vec(0.0f64..100.0, 1..200)) {
            let mut v = v;
            v.sort_by(f64::total_cmp);
            prop_assert!(percentile(&v, 99.0).unwrap() >= percentile(&v, 50.0).unwrap());
        }
    }
}
