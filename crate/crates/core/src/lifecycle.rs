//! Proactive migration: replicate ahead of each hand-off, switch clients,
//! then tear the old replica down.
//!
//! Costs are linear in payload size. Two calibrated defaults are provided:
//! a container checkpoint/restore baseline and decoupled-state replication.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::strategies::{opt_id, Schedule};
use crate::traces::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    DecoupledState,
    ContainerSnapshot,
}

impl FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(CostMode::DecoupledState),
            "container" => Ok(CostMode::ContainerSnapshot),
            _ => Err(Error::Config(format!("unknown cost model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainerSplit {
    pub checkpoint_s: f64,
    pub transfer_base_s: f64,
    pub restore_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub base_s: f64,
    pub per_mb_s: f64,
    pub mode: CostMode,
    pub split: Option<ContainerSplit>,
}

impl CostModel {
    /// Checkpoint/transfer/restore of a stateful container: 3.82 s empty,
    /// 35.7 s with 1000 MB of memory.
    pub fn container() -> Self {
        CostModel {
            base_s: 3.82,
            per_mb_s: (35.7 - 3.82) / 1000.0,
            mode: CostMode::ContainerSnapshot,
            split: Some(ContainerSplit {
                checkpoint_s: 0.30,
                transfer_base_s: 0.13,
                restore_s: 3.39,
            }),
        }
    }

    /// Replication of decoupled application state: 131 ms empty, plus
    /// wire time at 10 Gbps derated by 1.5.
    pub fn decoupled() -> Self {
        CostModel {
            base_s: 0.131,
            per_mb_s: 0.0008,
            mode: CostMode::DecoupledState,
            split: None,
        }
    }

    pub fn for_mode(mode: CostMode) -> Self {
        match mode {
            CostMode::ContainerSnapshot => CostModel::container(),
            CostMode::DecoupledState => CostModel::decoupled(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_s >= 0.0 && self.per_mb_s >= 0.0) {
            return Err(Error::Config("cost model terms must be non-negative".into()));
        }
        if let Some(s) = self.split {
            let sum = s.checkpoint_s + s.transfer_base_s + s.restore_s;
            if (sum - self.base_s).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "container split sums to {sum}, base is {}",
                    self.base_s
                )));
            }
        }
        Ok(())
    }
}

pub fn migration_cost(model: &CostModel, payload_mb: f64) -> Result<f64> {
    if !(payload_mb >= 0.0) {
        return Err(Error::Domain(format!("payload must be non-negative, got {payload_mb}")));
    }
    Ok(model.base_s + model.per_mb_s * payload_mb)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Downtime {
    pub fraction: f64,
    /// Migration takes longer than the hand-off period.
    pub infeasible: bool,
}

pub fn downtime_fraction(model: &CostModel, payload_mb: f64, handoff_period_s: f64) -> Result<Downtime> {
    if !(handoff_period_s > 0.0) {
        return Err(Error::Domain(format!(
            "hand-off period must be positive, got {handoff_period_s}"
        )));
    }
    let cost = migration_cost(model, payload_mb)?;
    Ok(match model.mode {
        CostMode::DecoupledState => Downtime {
            fraction: 0.0,
            infeasible: false,
        },
        CostMode::ContainerSnapshot => {
            let f = cost / handoff_period_s;
            Downtime {
                fraction: f.min(1.0),
                infeasible: f > 1.0,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEntry {
    pub replicate_start_s: f64,
    pub handoff_s: u32,
    pub teardown_s: u32,
    pub from_sat: Option<u32>,
    pub to_sat: u32,
    pub payload_mb: f64,
    pub ready: bool,
    /// Initial placement, deployed before the trace starts.
    pub bootstrap: bool,
    pub clients: Vec<String>,
}

impl TimelineEntry {
    pub fn ready_at(&self, cost_s: f64) -> f64 {
        if self.bootstrap {
            f64::NEG_INFINITY
        } else {
            self.replicate_start_s + cost_s
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationTimeline {
    pub entries: Vec<TimelineEntry>,
    pub lead_time_s: f64,
    pub model: CostModel,
    pub cost_s: f64,
    /// Share of the run with a replication window open.
    pub overlap_fraction: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Deploy { sat: u32, t: f64 },
    NotifyClients { clients: Vec<String>, sat: u32, t: f64 },
    Remove { sat: u32, t: f64 },
}

impl Command {
    pub fn t(&self) -> f64 {
        match self {
            Command::Deploy { t, .. } | Command::NotifyClients { t, .. } | Command::Remove { t, .. } => *t,
        }
    }

    pub fn sat(&self) -> u32 {
        match self {
            Command::Deploy { sat, .. } | Command::NotifyClients { sat, .. } | Command::Remove { sat, .. } => {
                *sat
            }
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Command::Deploy { .. } => 0,
            Command::NotifyClients { .. } => 1,
            Command::Remove { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SchedulerCommandLog {
    pub commands: Vec<Command>,
}

impl SchedulerCommandLog {
    /// Checks deploy → notify → remove per replica incarnation.
    pub fn validate(&self) -> Result<()> {
        #[derive(PartialEq)]
        enum St {
            Deployed,
            Serving,
        }
        let mut state: BTreeMap<u32, St> = BTreeMap::new();
        let mut last_t = f64::NEG_INFINITY;
        for c in &self.commands {
            if c.t() < last_t {
                return Err(Error::Strategy(format!("command log out of order at t={}", c.t())));
            }
            last_t = c.t();
            let sat = c.sat();
            match (c, state.get(&sat)) {
                (Command::Deploy { .. }, None) => {
                    state.insert(sat, St::Deployed);
                }
                (Command::NotifyClients { .. }, Some(St::Deployed | St::Serving)) => {
                    state.insert(sat, St::Serving);
                }
                (Command::Remove { .. }, Some(St::Serving)) => {
                    state.remove(&sat);
                }
                _ => {
                    return Err(Error::Strategy(format!(
                        "ill-formed command sequence for satellite {sat} at t={}",
                        c.t()
                    )))
                }
            }
        }
        if let Some(sat) = state.keys().next() {
            return Err(Error::Strategy(format!("satellite {sat} never removed")));
        }
        Ok(())
    }
}

/// A contiguous stay of one satellite in the replica set.
#[derive(Debug, Clone, PartialEq)]
struct Incarnation {
    sat: u32,
    start_ti: usize,
    /// Exclusive; `None` if it survives to the end of the trace.
    end_ti: Option<usize>,
}

fn incarnations(schedule: &Schedule) -> Vec<Incarnation> {
    let mut open: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (ti, set) in schedule.replicas.iter().enumerate() {
        let closed: Vec<u32> = open.keys().copied().filter(|s| !set.contains(s)).collect();
        for sat in closed {
            let start_ti = open.remove(&sat).unwrap();
            out.push(Incarnation {
                sat,
                start_ti,
                end_ti: Some(ti),
            });
        }
        for &s in set {
            open.entry(s).or_insert(ti);
        }
    }
    for (sat, start_ti) in open {
        out.push(Incarnation {
            sat,
            start_ti,
            end_ti: None,
        });
    }
    out.sort_by_key(|i| (i.start_ti, i.sat));
    out
}

fn schedule_end(schedule: &Schedule) -> u32 {
    let step = match schedule.times.as_slice() {
        [a, b, ..] => b - a,
        _ => 1,
    };
    schedule.times.last().map_or(0, |t| t + step)
}

pub fn plan_timeline(
    schedule: &Schedule,
    lead_time_s: f64,
    model: &CostModel,
    payload_mb: f64,
) -> Result<(MigrationTimeline, SchedulerCommandLog)> {
    if !(lead_time_s >= 0.0) {
        return Err(Error::Domain(format!("lead time must be non-negative, got {lead_time_s}")));
    }
    model.validate()?;
    let cost_s = migration_cost(model, payload_mb)?;
    let start = schedule.times.first().copied().unwrap_or(0);
    let end = schedule_end(schedule);
    let duration = f64::from(end - start);

    let removal_after = |sat: u32, t: u32| -> u32 {
        let from = schedule.times.partition_point(|&x| x < t);
        (from..schedule.times.len())
            .find(|&ti| !schedule.replicas[ti].contains(&sat))
            .map_or(end, |ti| schedule.times[ti])
    };

    let mut entries = Vec::with_capacity(schedule.migrations.len());
    for m in &schedule.migrations {
        let replicate_start_s = if m.bootstrap {
            f64::from(m.t_handoff)
        } else {
            f64::from(start).max(f64::from(m.t_handoff) - lead_time_s)
        };
        let teardown_s = match m.from_sat {
            Some(from) => removal_after(from, m.t_handoff),
            None => m.t_handoff,
        };
        entries.push(TimelineEntry {
            replicate_start_s,
            handoff_s: m.t_handoff,
            teardown_s,
            from_sat: m.from_sat,
            to_sat: m.to_sat,
            payload_mb,
            ready: m.bootstrap || replicate_start_s + cost_s <= f64::from(m.t_handoff) + 1e-9,
            bootstrap: m.bootstrap,
            clients: m.affected_clients.clone(),
        });
    }

    // Time with at least one replication window open; overlapping windows
    // count once.
    let mut windows: Vec<(f64, f64)> = entries
        .iter()
        .filter(|e| !e.bootstrap)
        .map(|e| (e.replicate_start_s, f64::from(e.handoff_s)))
        .collect();
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut overlap = 0.0;
    let mut covered_to = f64::NEG_INFINITY;
    for (lo, hi) in windows {
        let lo = lo.max(covered_to);
        if hi > lo {
            overlap += hi - lo;
            covered_to = hi;
        }
    }
    let overlap_fraction = if duration > 0.0 { overlap / duration } else { 0.0 };

    let mut warnings = Vec::new();
    let mut last_window: BTreeMap<&str, u32> = BTreeMap::new();
    for e in entries.iter().filter(|e| !e.bootstrap) {
        for c in &e.clients {
            if let Some(&prev) = last_window.get(c.as_str()) {
                if e.replicate_start_s < f64::from(prev) {
                    warnings.push(format!(
                        "t={}: replication window for {c} overlaps hand-off at t={prev}; cadence shorter than lead time",
                        e.handoff_s
                    ));
                }
            }
            last_window.insert(c.as_str(), e.handoff_s);
        }
    }

    let log = command_log(schedule, &entries, end);
    Ok((
        MigrationTimeline {
            entries,
            lead_time_s,
            model: *model,
            cost_s,
            overlap_fraction,
            warnings,
        },
        log,
    ))
}

fn deploying_entry<'a>(entries: &'a [TimelineEntry], sat: u32, t: u32) -> Option<&'a TimelineEntry> {
    entries.iter().rev().find(|e| e.to_sat == sat && e.handoff_s <= t)
}

fn command_log(schedule: &Schedule, entries: &[TimelineEntry], end: u32) -> SchedulerCommandLog {
    let n_sites = schedule.sites.len();
    let mut commands = Vec::new();
    // Pending removal per satellite, so a re-deploy that starts before the
    // previous stay is torn down keeps the running instance instead.
    let mut pending_remove: BTreeMap<u32, f64> = BTreeMap::new();
    for inc in incarnations(schedule) {
        let t_start = schedule.times[inc.start_ti];
        let deploy_t = deploying_entry(entries, inc.sat, t_start)
            .filter(|e| e.handoff_s == t_start)
            .map_or(f64::from(t_start), |e| e.replicate_start_s);
        let last_ti = inc.end_ti.unwrap_or(schedule.times.len());
        let clients: Vec<String> = (0..n_sites)
            .filter(|&si| (inc.start_ti..last_ti).any(|ti| schedule.assigned(ti, si) == Some(inc.sat)))
            .map(|si| schedule.sites[si].clone())
            .collect();
        let t_end = inc.end_ti.map_or(end, |ti| schedule.times[ti]);
        match pending_remove.get(&inc.sat) {
            Some(&removal) if deploy_t <= removal => {}
            Some(&removal) => {
                commands.push(Command::Remove { sat: inc.sat, t: removal });
                commands.push(Command::Deploy { sat: inc.sat, t: deploy_t });
            }
            None => commands.push(Command::Deploy { sat: inc.sat, t: deploy_t }),
        }
        commands.push(Command::NotifyClients {
            clients,
            sat: inc.sat,
            t: f64::from(t_start),
        });
        pending_remove.insert(inc.sat, f64::from(t_end));
    }
    for (sat, t) in pending_remove {
        commands.push(Command::Remove { sat, t });
    }
    commands.sort_by(|a, b| {
        a.t()
            .total_cmp(&b.t())
            .then(a.rank().cmp(&b.rank()))
            .then(a.sat().cmp(&b.sat()))
    });
    SchedulerCommandLog { commands }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationCause {
    UnreadyReplica,
    CoverageGap,
}

impl ViolationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCause::UnreadyReplica => "unready_replica",
            ViolationCause::CoverageGap => "coverage_gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub t: u32,
    pub site_id: String,
    pub cause: ViolationCause,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DowntimeReport {
    pub violations: Vec<Violation>,
}

impl DowntimeReport {
    pub fn count(&self, cause: ViolationCause) -> usize {
        self.violations.iter().filter(|v| v.cause == cause).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let res: csv::Result<()> = (|| {
            w.write_record(["t_s", "site_id", "cause"])?;
            for v in &self.violations {
                w.write_record([v.t.to_string(), v.site_id.clone(), v.cause.as_str().to_string()])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::Config(format!("writing violations: {e}")))
    }
}

/// Checks that every covered client is served by a ready replica each second.
pub fn check_zero_downtime(timeline: &MigrationTimeline, schedule: &Schedule, trace: &Trace) -> DowntimeReport {
    let mut violations = Vec::new();
    for (ti, &t) in schedule.times.iter().enumerate() {
        let trace_ti = trace.time_index(t);
        for (si, site) in schedule.sites.iter().enumerate() {
            let covered = trace_ti
                .zip(trace.site_index(site))
                .is_some_and(|(a, b)| trace.cell(a, b).is_some());
            let cause = match (covered, schedule.assigned(ti, si)) {
                (false, _) | (true, None) => Some(ViolationCause::CoverageGap),
                (true, Some(sat)) => {
                    let ready_at = deploying_entry(&timeline.entries, sat, t)
                        .map_or(f64::NEG_INFINITY, |e| e.ready_at(timeline.cost_s));
                    (f64::from(t) < ready_at - 1e-9).then_some(ViolationCause::UnreadyReplica)
                }
            };
            if let Some(cause) = cause {
                violations.push(Violation {
                    t,
                    site_id: site.clone(),
                    cause,
                });
            }
        }
    }
    DowntimeReport { violations }
}

pub const TIMELINE_HEADER: [&str; 7] = [
    "replicate_start_s",
    "handoff_s",
    "teardown_s",
    "from_sat",
    "to_sat",
    "payload_mb",
    "ready",
];

impl MigrationTimeline {
    pub fn migrations(&self) -> impl Iterator<Item = &TimelineEntry> {
        self.entries.iter().filter(|e| !e.bootstrap)
    }

    /// Seconds of service outage caused by migrations, as a fraction of
    /// `duration_s`. A container is frozen for the whole checkpoint/restore;
    /// decoupled state only stalls if the replica is not ready at hand-off.
    pub fn downtime_fraction(&self, duration_s: f64) -> f64 {
        if !(duration_s > 0.0) {
            return 0.0;
        }
        let lost: f64 = self
            .migrations()
            .map(|e| match self.model.mode {
                CostMode::ContainerSnapshot => self.cost_s,
                CostMode::DecoupledState => (e.ready_at(self.cost_s) - f64::from(e.handoff_s)).max(0.0),
            })
            .sum();
        (lost / duration_s).min(1.0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let res: csv::Result<()> = (|| {
            w.write_record(TIMELINE_HEADER)?;
            for e in &self.entries {
                w.write_record([
                    format!("{:.3}", e.replicate_start_s),
                    e.handoff_s.to_string(),
                    e.teardown_s.to_string(),
                    opt_id(e.from_sat),
                    e.to_sat.to_string(),
                    format!("{:.3}", e.payload_mb),
                    e.ready.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::Config(format!("writing timeline: {e}")))
    }
}
