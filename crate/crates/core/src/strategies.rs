//! Server-selection strategies over a latency trace.
//!
//! All strategies share one scoring rule: a satellite's score at a timestep
//! aggregates (mean or RMS) the one-way latency of every covered client to
//! it, and only satellites that every covered client can reach are scored.
//! Ties are always broken toward the lowest flat id.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::orbits::{propagate, ShellSpec};
use crate::topology::{build_isl_grid, isl_graph, LinkModel};
use crate::traces::{Sample, Trace};

/// Candidate window used by the sticky strategy: 10% of the optimum.
pub const STICKY_WINDOW: f64 = 0.10;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    MinMax,
    Sticky,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Fraction τ of the incumbent's score.
    Relative(f64),
    /// Absolute improvement δ in milliseconds.
    AbsoluteMs(f64),
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Relative(t) => write!(f, "{t:.4}"),
            Threshold::AbsoluteMs(d) => write!(f, "{d:.4}ms"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    Mean,
    Rms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cardinality {
    OneToOne,
    ManyToOne,
    ManyToMany,
}

macro_rules! parse_enum {
    ($ty:ty, $what:literal, { $($s:literal => $v:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), s))),
                }
            }
        }
    };
}

parse_enum!(Kind, "strategy", { "minmax" => Kind::MinMax, "sticky" => Kind::Sticky, "threshold" => Kind::Threshold });
parse_enum!(Aggregation, "aggregation", { "mean" => Aggregation::Mean, "rms" => Aggregation::Rms });
parse_enum!(Cardinality, "cardinality", {
    "1:1" => Cardinality::OneToOne, "n:1" => Cardinality::ManyToOne, "n:m" => Cardinality::ManyToMany,
});

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::MinMax => "minmax",
            Kind::Sticky => "sticky",
            Kind::Threshold => "threshold",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategySpec {
    pub kind: Kind,
    pub threshold: Option<Threshold>,
    pub aggregation: Aggregation,
    pub cardinality: Cardinality,
}

impl StrategySpec {
    pub fn minmax(cardinality: Cardinality) -> Self {
        StrategySpec {
            kind: Kind::MinMax,
            threshold: None,
            aggregation: Aggregation::Mean,
            cardinality,
        }
    }

    pub fn relative(tau: f64, cardinality: Cardinality) -> Self {
        StrategySpec {
            kind: Kind::Threshold,
            threshold: Some(Threshold::Relative(tau)),
            aggregation: Aggregation::Rms,
            cardinality,
        }
    }

    pub fn absolute_ms(delta_ms: f64, cardinality: Cardinality) -> Self {
        StrategySpec {
            kind: Kind::Threshold,
            threshold: Some(Threshold::AbsoluteMs(delta_ms)),
            aggregation: Aggregation::Rms,
            cardinality,
        }
    }

    pub fn sticky(cardinality: Cardinality) -> Self {
        StrategySpec {
            kind: Kind::Sticky,
            threshold: None,
            aggregation: Aggregation::Rms,
            cardinality,
        }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.threshold {
            Some(Threshold::Relative(t)) if !(0.0..=1.0).contains(&t) => {
                return Err(Error::Config(format!("tau must be in [0, 1], got {t}")))
            }
            Some(Threshold::AbsoluteMs(d)) if !(d > 0.0 && d.is_finite()) => {
                return Err(Error::Config(format!("delta must be positive, got {d}")))
            }
            _ => {}
        }
        if self.kind == Kind::Threshold && self.threshold.is_none() {
            return Err(Error::Config("threshold strategy needs --tau or --delta-ms".into()));
        }
        if self.kind == Kind::Sticky && self.cardinality == Cardinality::ManyToMany {
            return Err(Error::Config("sticky supports only 1:1 and n:1".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match (self.kind, self.threshold) {
            (Kind::Threshold, Some(Threshold::Relative(t))) => format!("threshold-{:.0}%", t * 100.0),
            (Kind::Threshold, Some(Threshold::AbsoluteMs(d))) => format!("threshold-{d}ms"),
            (k, _) => k.to_string(),
        }
    }

    /// Whether switching from `current` to `best` clears the threshold.
    fn improves(&self, best: f64, current: f64) -> bool {
        match self.threshold {
            None | Some(Threshold::Relative(_)) => {
                let tau = match self.threshold {
                    Some(Threshold::Relative(t)) => t,
                    _ => 0.0,
                };
                best <= (1.0 - tau) * current + EPS
            }
            Some(Threshold::AbsoluteMs(d)) => best <= current - d + EPS,
        }
    }
}

pub fn aggregate(values_ms: &[f64], aggregation: Aggregation) -> Option<f64> {
    if values_ms.is_empty() {
        return None;
    }
    let n = values_ms.len() as f64;
    Some(match aggregation {
        Aggregation::Mean => values_ms.iter().sum::<f64>() / n,
        Aggregation::Rms => (values_ms.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
    })
}

/// Score of `sat` at time index `ti` over the covered clients among
/// `clients`. `None` if no client is covered or some covered client has no
/// latency to `sat`.
pub fn score(
    trace: &Trace,
    ti: usize,
    sat: u32,
    clients: &[usize],
    aggregation: Aggregation,
) -> Option<f64> {
    let mut values = Vec::with_capacity(clients.len());
    for &si in clients {
        if trace.cell(ti, si).is_some() {
            values.push(f64::from(trace.latency_us(ti, si, sat)?) / 1000.0);
        }
    }
    aggregate(&values, aggregation)
}

/// Scores of every satellite reachable by all covered clients, ascending id.
struct Scorer {
    count: Vec<u32>,
    acc: Vec<f64>,
    touched: Vec<u32>,
}

impl Scorer {
    fn new(sat_bound: u32) -> Self {
        Scorer {
            count: vec![0; sat_bound as usize],
            acc: vec![0.0; sat_bound as usize],
            touched: Vec::new(),
        }
    }

    fn scores(&mut self, trace: &Trace, ti: usize, aggregation: Aggregation) -> Vec<(u32, f64)> {
        let mut covered = 0u32;
        for si in 0..trace.sites().len() {
            let Some(cell) = trace.cell(ti, si) else { continue };
            covered += 1;
            for s in cell {
                let i = s.sat as usize;
                if self.count[i] == 0 {
                    self.touched.push(s.sat);
                }
                self.count[i] += 1;
                let ms = s.one_way_ms();
                self.acc[i] += match aggregation {
                    Aggregation::Mean => ms,
                    Aggregation::Rms => ms * ms,
                };
            }
        }
        self.touched.sort_unstable();
        let n = f64::from(covered);
        let mut out = Vec::new();
        for &sat in &self.touched {
            let i = sat as usize;
            if self.count[i] == covered {
                let m = self.acc[i] / n;
                out.push((
                    sat,
                    match aggregation {
                        Aggregation::Mean => m,
                        Aggregation::Rms => m.sqrt(),
                    },
                ));
            }
            self.count[i] = 0;
            self.acc[i] = 0.0;
        }
        self.touched.clear();
        out
    }
}

fn argmin(scores: &[(u32, f64)]) -> Option<(u32, f64)> {
    // `scores` is sorted by id, so the first minimum wins ties.
    scores
        .iter()
        .copied()
        .fold(None, |best: Option<(u32, f64)>, (s, v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((s, v)),
        })
}

fn lookup(scores: &[(u32, f64)], sat: u32) -> Option<f64> {
    scores
        .binary_search_by_key(&sat, |&(s, _)| s)
        .ok()
        .map(|i| scores[i].1)
}

/// Per-instant best satellite under `aggregation`; `None` during a total gap.
pub fn select_minmax(trace: &Trace, ti: usize, aggregation: Aggregation) -> Option<u32> {
    let mut scorer = Scorer::new(trace.sat_bound());
    argmin(&scorer.scores(trace, ti, aggregation)).map(|(s, _)| s)
}

/// Threshold rule: keep `current` unless the best satellite clears the bar.
pub fn select_threshold(
    trace: &Trace,
    ti: usize,
    current: Option<u32>,
    spec: &StrategySpec,
) -> Option<u32> {
    let mut scorer = Scorer::new(trace.sat_bound());
    threshold_step(&scorer.scores(trace, ti, spec.aggregation), current, spec)
}

fn threshold_step(scores: &[(u32, f64)], current: Option<u32>, spec: &StrategySpec) -> Option<u32> {
    let (best, best_score) = argmin(scores)?;
    let Some(cur) = current else { return Some(best) };
    match lookup(scores, cur) {
        None => Some(best),
        Some(cur_score) if best != cur && spec.improves(best_score, cur_score) => Some(best),
        Some(_) => Some(cur),
    }
}

/// Satellites within `window` of the best score.
fn candidate_window(scores: &[(u32, f64)], window: f64) -> Vec<u32> {
    let Some((_, best)) = argmin(scores) else { return Vec::new() };
    scores
        .iter()
        .filter(|&&(_, v)| v <= (1.0 + window) * best + EPS)
        .map(|&(s, _)| s)
        .collect()
}

/// ISL shortest-path delays between satellites, used for hand-off latency
/// and replication-source choice.
pub trait IslDelays: Sync {
    /// One-way delay in ms from `from` to each of `to` at time `t`.
    fn delays_ms(&self, t: u32, from: u32, to: &[u32]) -> Vec<Option<f64>>;
}

#[derive(Debug, Clone)]
pub struct GridDelays {
    shell: ShellSpec,
    edges: Vec<(u32, u32)>,
    link: LinkModel,
}

impl GridDelays {
    pub fn new(shell: &ShellSpec, link: &LinkModel) -> Self {
        GridDelays {
            shell: shell.clone(),
            edges: build_isl_grid(shell),
            link: link.clone(),
        }
    }
}

impl IslDelays for GridDelays {
    fn delays_ms(&self, t: u32, from: u32, to: &[u32]) -> Vec<Option<f64>> {
        let state = propagate(&self.shell, f64::from(t));
        if from as usize >= state.len() {
            return vec![None; to.len()];
        }
        let d = isl_graph(&state, &self.edges, &self.link).shortest_paths(from);
        to.iter()
            .map(|&s| d.get(s as usize).copied().filter(|v| v.is_finite()))
            .collect()
    }
}

/// Sticky choice among `candidates[ti]`: longest future persistence, then
/// smallest ISL delay from `current`, then lowest id.
pub fn select_sticky(
    candidates: &[Vec<u32>],
    ti: usize,
    current: Option<u32>,
    t: u32,
    isl: Option<&dyn IslDelays>,
) -> Option<u32> {
    let now = &candidates[ti];
    if now.len() <= 1 {
        return now.first().copied();
    }
    let persistence = |s: u32| {
        candidates[ti..]
            .iter()
            .take_while(|c| c.binary_search(&s).is_ok())
            .count()
    };
    let scored: Vec<(u32, usize)> = now.iter().map(|&s| (s, persistence(s))).collect();
    let longest = scored.iter().map(|&(_, p)| p).max()?;
    let tied: Vec<u32> = scored
        .iter()
        .filter(|&&(_, p)| p == longest)
        .map(|&(s, _)| s)
        .collect();
    if tied.len() == 1 {
        return Some(tied[0]);
    }
    let (Some(cur), Some(isl)) = (current, isl) else {
        return Some(tied[0]);
    };
    let delays = isl.delays_ms(t, cur, &tied);
    tied.iter()
        .zip(delays)
        .min_by(|(a, da), (b, db)| {
            let da = da.unwrap_or(f64::INFINITY);
            let db = db.unwrap_or(f64::INFINITY);
            da.total_cmp(&db).then(a.cmp(b))
        })
        .map(|(&s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicationSource {
    Satellite(u32),
    Origin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationEvent {
    pub t_handoff: u32,
    pub from_sat: Option<u32>,
    pub to_sat: u32,
    pub affected_clients: Vec<String>,
    /// Set for many-to-many placements only.
    pub replication_source: Option<ReplicationSource>,
    /// Initial placement; not counted as a migration.
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub spec: StrategySpec,
    pub sites: Vec<String>,
    pub times: Vec<u32>,
    /// `[ti * sites.len() + si]`; `None` while the client is in a coverage gap.
    pub assignment: Vec<Option<u32>>,
    /// Replica set per timestep, ascending id.
    pub replicas: Vec<Vec<u32>>,
    pub migrations: Vec<MigrationEvent>,
    /// Coverage gaps and forced decisions, in time order.
    pub log: Vec<String>,
}

impl Schedule {
    pub fn assigned(&self, ti: usize, si: usize) -> Option<u32> {
        self.assignment[ti * self.sites.len() + si]
    }

    /// Hand-offs, excluding initial placement.
    pub fn migration_count(&self) -> usize {
        self.migrations.iter().filter(|m| !m.bootstrap).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let res: csv::Result<()> = (|| {
            w.write_record(["t_s", "site_id", "serving_sat"])?;
            for (ti, t) in self.times.iter().enumerate() {
                for (si, site) in self.sites.iter().enumerate() {
                    w.write_record([t.to_string(), site.clone(), opt_id(self.assigned(ti, si))])?;
                }
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::Config(format!("writing schedule: {e}")))
    }

    pub fn write_events_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let res: csv::Result<()> = (|| {
            w.write_record(["t_handoff_s", "from_sat", "to_sat", "replication_source", "clients"])?;
            for m in &self.migrations {
                let source = match m.replication_source {
                    Some(ReplicationSource::Satellite(s)) => s.to_string(),
                    _ => "-1".into(),
                };
                w.write_record([
                    m.t_handoff.to_string(),
                    opt_id(m.from_sat),
                    m.to_sat.to_string(),
                    source,
                    m.affected_clients.join(";"),
                ])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::Config(format!("writing events: {e}")))
    }
}

pub(crate) fn opt_id(v: Option<u32>) -> String {
    v.map_or_else(|| "-1".to_string(), |s| s.to_string())
}

pub fn run_strategy(trace: &Trace, spec: &StrategySpec) -> Result<Schedule> {
    run_strategy_with(trace, spec, None)
}

/// Runs `spec` over the trace. `isl` supplies satellite-to-satellite
/// delays for sticky tie-breaks and replication sources; without it those
/// ties fall back to the lowest flat id.
pub fn run_strategy_with(
    trace: &Trace,
    spec: &StrategySpec,
    isl: Option<&dyn IslDelays>,
) -> Result<Schedule> {
    spec.validate()?;
    if spec.cardinality == Cardinality::OneToOne && trace.sites().len() > 1 {
        return Err(Error::Strategy(format!(
            "1:1 cardinality needs exactly one client, trace has {}",
            trace.sites().len()
        )));
    }
    let mut schedule = Schedule {
        spec: *spec,
        sites: trace.sites().to_vec(),
        times: trace.times().to_vec(),
        assignment: Vec::with_capacity(trace.len() * trace.sites().len()),
        replicas: Vec::with_capacity(trace.len()),
        migrations: Vec::new(),
        log: Vec::new(),
    };
    match spec.cardinality {
        Cardinality::ManyToMany => run_many_to_many(trace, spec, isl, &mut schedule),
        _ => run_single_replica(trace, spec, isl, &mut schedule),
    }
    Ok(schedule)
}

fn run_single_replica(
    trace: &Trace,
    spec: &StrategySpec,
    isl: Option<&dyn IslDelays>,
    schedule: &mut Schedule,
) {
    let mut scorer = Scorer::new(trace.sat_bound());
    let window = match spec.threshold {
        Some(Threshold::Relative(t)) => t,
        _ => STICKY_WINDOW,
    };
    let sticky_candidates: Vec<Vec<u32>> = if spec.kind == Kind::Sticky {
        (0..trace.len())
            .map(|ti| candidate_window(&scorer.scores(trace, ti, spec.aggregation), window))
            .collect()
    } else {
        Vec::new()
    };

    let n_sites = trace.sites().len();
    let mut current: Option<u32> = None;
    for (ti, &t) in trace.times().iter().enumerate() {
        let scores = scorer.scores(trace, ti, spec.aggregation);
        let next = if scores.is_empty() {
            schedule.log.push(format!("t={t}: no satellite scorable, keeping {}", opt_id(current)));
            current
        } else {
            match (current, spec.kind) {
                (None, _) | (Some(_), Kind::MinMax) => argmin(&scores).map(|(s, _)| s),
                (Some(_), Kind::Threshold) => {
                    if lookup(&scores, current.unwrap()).is_none() {
                        schedule.log.push(format!("t={t}: forced re-selection"));
                    }
                    threshold_step(&scores, current, spec)
                }
                (Some(cur), Kind::Sticky) => {
                    if sticky_candidates[ti].binary_search(&cur).is_ok() {
                        Some(cur)
                    } else {
                        select_sticky(&sticky_candidates, ti, current, t, isl).or(current)
                    }
                }
            }
        };
        if next != current {
            if let Some(to) = next {
                schedule.migrations.push(MigrationEvent {
                    t_handoff: t,
                    from_sat: current,
                    to_sat: to,
                    affected_clients: (0..n_sites)
                        .filter(|&si| trace.cell(ti, si).is_some())
                        .map(|si| trace.sites()[si].clone())
                        .collect(),
                    replication_source: None,
                    bootstrap: current.is_none(),
                });
            }
            current = next;
        }
        for si in 0..n_sites {
            let served = current.filter(|&s| trace.latency_us(ti, si, s).is_some());
            schedule.assignment.push(served);
        }
        schedule.replicas.push(current.into_iter().collect());
    }
}

/// Per-client candidate sets for one timestep: satellites within the
/// threshold of that client's optimum. Gap clients get `None`.
pub fn client_candidates(trace: &Trace, ti: usize, threshold: Threshold) -> Vec<Option<Vec<Sample>>> {
    (0..trace.sites().len())
        .map(|si| {
            let cell = trace.cell(ti, si)?;
            let best = cell.iter().map(|s| s.one_way_us).min()?;
            let best = f64::from(best);
            let bound = match threshold {
                Threshold::Relative(t) => (1.0 + t) * best,
                Threshold::AbsoluteMs(d) => best + d * 1000.0,
            };
            Some(
                cell.iter()
                    .filter(|s| f64::from(s.one_way_us) <= bound + EPS)
                    .copied()
                    .collect(),
            )
        })
        .collect()
}

/// Result of one many-to-many placement step.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub replicas: Vec<u32>,
    pub assignment: Vec<Option<u32>>,
    /// Satellites not in the incumbent set, ascending id.
    pub added: Vec<u32>,
}

/// Greedy hitting set over per-client candidate sets with incumbent retention.
pub fn place_replicas(candidates: &[Option<Vec<Sample>>], incumbents: &[u32]) -> Placement {
    let contains = |c: &[Sample], s: u32| c.binary_search_by_key(&s, |x| x.sat).is_ok();
    let mut chosen: BTreeSet<u32> = incumbents
        .iter()
        .copied()
        .filter(|&s| candidates.iter().flatten().any(|c| contains(c, s)))
        .collect();

    let mut uncovered: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.as_ref().is_some_and(|c| !chosen.iter().any(|&s| contains(c, s))))
        .map(|(i, _)| i)
        .collect();

    while !uncovered.is_empty() {
        let mut pool: BTreeSet<u32> = BTreeSet::new();
        for &i in &uncovered {
            pool.extend(candidates[i].as_ref().unwrap().iter().map(|s| s.sat));
        }
        let mut best: Option<(usize, f64, u32)> = None;
        for &s in &pool {
            let hits: Vec<f64> = uncovered
                .iter()
                .filter_map(|&i| {
                    let c = candidates[i].as_ref().unwrap();
                    c.binary_search_by_key(&s, |x| x.sat).ok().map(|k| c[k].one_way_ms())
                })
                .collect();
            let rms = aggregate(&hits, Aggregation::Rms).unwrap_or(f64::INFINITY);
            let better = match best {
                None => true,
                Some((g, r, _)) => hits.len() > g || (hits.len() == g && rms < r),
            };
            if better {
                best = Some((hits.len(), rms, s));
            }
        }
        let (_, _, s) = best.expect("uncovered clients have non-empty candidate sets");
        chosen.insert(s);
        uncovered.retain(|&i| !contains(candidates[i].as_ref().unwrap(), s));
    }

    let assignment: Vec<Option<u32>> = candidates
        .iter()
        .map(|c| {
            let c = c.as_ref()?;
            c.iter()
                .filter(|x| chosen.contains(&x.sat))
                .min_by_key(|x| (x.one_way_us, x.sat))
                .map(|x| x.sat)
        })
        .collect();
    let used: BTreeSet<u32> = assignment.iter().flatten().copied().collect();
    let replicas: Vec<u32> = chosen.into_iter().filter(|s| used.contains(s)).collect();
    let added = replicas
        .iter()
        .copied()
        .filter(|s| !incumbents.contains(s))
        .collect();
    Placement {
        replicas,
        assignment,
        added,
    }
}

fn run_many_to_many(
    trace: &Trace,
    spec: &StrategySpec,
    isl: Option<&dyn IslDelays>,
    schedule: &mut Schedule,
) {
    let threshold = match spec.kind {
        Kind::MinMax => Threshold::Relative(0.0),
        _ => spec.threshold.unwrap_or(Threshold::Relative(0.0)),
    };
    let mut current: Vec<u32> = Vec::new();
    for (ti, &t) in trace.times().iter().enumerate() {
        let candidates = client_candidates(trace, ti, threshold);
        if candidates.iter().all(Option::is_none) {
            schedule.log.push(format!("t={t}: all clients in coverage gap"));
            schedule.assignment.extend(std::iter::repeat(None).take(trace.sites().len()));
            schedule.replicas.push(current.clone());
            continue;
        }
        for (si, c) in candidates.iter().enumerate() {
            if c.is_none() {
                schedule.log.push(format!("t={t}: {} in coverage gap", trace.sites()[si]));
            }
        }
        let placement = place_replicas(&candidates, &current);
        let bootstrap = current.is_empty() && schedule.migrations.is_empty();
        for &new in &placement.added {
            let source = replication_source(&current, new, t, isl);
            schedule.migrations.push(MigrationEvent {
                t_handoff: t,
                from_sat: match source {
                    ReplicationSource::Satellite(s) => Some(s),
                    ReplicationSource::Origin => None,
                },
                to_sat: new,
                affected_clients: placement
                    .assignment
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| **a == Some(new))
                    .map(|(si, _)| trace.sites()[si].clone())
                    .collect(),
                replication_source: Some(source),
                bootstrap,
            });
        }
        schedule.assignment.extend(placement.assignment.iter().copied());
        current = placement.replicas;
        schedule.replicas.push(current.clone());
    }
}

fn replication_source(
    current: &[u32],
    new: u32,
    t: u32,
    isl: Option<&dyn IslDelays>,
) -> ReplicationSource {
    let Some(&first) = current.first() else {
        return ReplicationSource::Origin;
    };
    let Some(isl) = isl else {
        return ReplicationSource::Satellite(first);
    };
    let delays = isl.delays_ms(t, new, current);
    let best = current
        .iter()
        .zip(delays)
        .min_by(|(a, da), (b, db)| {
            da.unwrap_or(f64::INFINITY)
                .total_cmp(&db.unwrap_or(f64::INFINITY))
                .then(a.cmp(b))
        })
        .map_or(first, |(&s, _)| s);
    ReplicationSource::Satellite(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::TraceBuilder;
    use proptest::prelude::*;

    /// Trace from `[t][site] -> [(sat, us)]`; an empty list is a gap.
    fn trace_of(grid: &[Vec<Vec<(u32, u32)>>]) -> Trace {
        let n_sites = grid.first().map_or(0, Vec::len);
        let sites = (0..n_sites).map(|i| format!("c{i:02}")).collect();
        let mut b = TraceBuilder::new(sites);
        for (t, cells) in grid.iter().enumerate() {
            b.push_step(
                t as u32,
                cells
                    .iter()
                    .map(|c| {
                        let mut v: Vec<Sample> = c
                            .iter()
                            .map(|&(sat, one_way_us)| Sample { sat, one_way_us })
                            .collect();
                        v.sort();
                        Some(v)
                    })
                    .collect(),
            );
        }
        b.finish()
    }

    #[test]
    fn aggregation_arithmetic() {
        assert_eq!(aggregate(&[5.0], Aggregation::Mean), Some(5.0));
        assert_eq!(aggregate(&[5.0], Aggregation::Rms), Some(5.0));
        assert_eq!(aggregate(&[3.0, 4.0], Aggregation::Mean), Some(3.5));
        let rms = aggregate(&[3.0, 4.0], Aggregation::Rms).unwrap();
        assert!((rms - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate(&[], Aggregation::Rms), None);
    }

    proptest! {
        #[test]
        fn rms_dominates_mean(v in prop::collection::vec(0.0f64..100.0, 1..20)) {
            let m = aggregate(&v, Aggregation::Mean).unwrap();
            let r = aggregate(&v, Aggregation::Rms).unwrap();
            prop_assert!(r >= m - 1e-9);
        }
    }

    #[test]
    fn score_excludes_unreachable_satellites() {
        let tr = trace_of(&[vec![vec![(1, 3000), (2, 5000)], vec![(1, 4000)]]]);
        assert_eq!(score(&tr, 0, 1, &[0, 1], Aggregation::Mean), Some(3.5));
        assert_eq!(score(&tr, 0, 2, &[0, 1], Aggregation::Mean), None);
        assert_eq!(score(&tr, 0, 2, &[0], Aggregation::Rms), Some(5.0));
    }

    #[test]
    fn minmax_singleton_and_tie() {
        let tr = trace_of(&[vec![vec![(7, 2000)]], vec![vec![(4, 2000), (2, 2000), (9, 3000)]]]);
        assert_eq!(select_minmax(&tr, 0, Aggregation::Mean), Some(7));
        assert_eq!(select_minmax(&tr, 1, Aggregation::Mean), Some(2));
    }

    #[test]
    fn threshold_arithmetic() {
        let spec = StrategySpec::relative(0.10, Cardinality::OneToOne);
        let keep = trace_of(&[vec![vec![(1, 5000), (2, 4600)]]]);
        assert_eq!(select_threshold(&keep, 0, Some(1), &spec), Some(1));
        let go = trace_of(&[vec![vec![(1, 5000), (2, 4400)]]]);
        assert_eq!(select_threshold(&go, 0, Some(1), &spec), Some(2));
        let edge = trace_of(&[vec![vec![(1, 5000), (2, 4500)]]]);
        assert_eq!(select_threshold(&edge, 0, Some(1), &spec), Some(2));
        // Incumbent unreachable: forced move to the argmin.
        assert_eq!(select_threshold(&go, 0, Some(99), &spec), Some(2));
        let abs = StrategySpec::absolute_ms(1.0, Cardinality::OneToOne);
        assert_eq!(select_threshold(&keep, 0, Some(1), &abs), Some(1));
        let far = trace_of(&[vec![vec![(1, 5000), (2, 3900)]]]);
        assert_eq!(select_threshold(&far, 0, Some(1), &abs), Some(2));
    }

    #[test]
    fn sticky_picks_most_persistent() {
        // sat 1 is best at t0 but leaves the window at t1; sat 2 persists.
        let tr = trace_of(&[
            vec![vec![(1, 1000), (2, 1050), (3, 3000)]],
            vec![vec![(1, 2000), (2, 1000), (3, 3000)]],
            vec![vec![(1, 2000), (2, 1000), (3, 3000)]],
        ]);
        let s = run_strategy(&tr, &StrategySpec::sticky(Cardinality::OneToOne)).unwrap();
        // Bootstrap takes the argmin, then hands off once.
        assert_eq!(s.migrations.len(), 2);
        assert_eq!(s.migrations[1].to_sat, 2);
        assert_eq!(s.migrations[1].t_handoff, 1);

        let cands = vec![vec![5u32]];
        assert_eq!(select_sticky(&cands, 0, Some(1), 0, None), Some(5));
    }

    struct FixedDelays;
    impl IslDelays for FixedDelays {
        fn delays_ms(&self, _t: u32, from: u32, to: &[u32]) -> Vec<Option<f64>> {
            to.iter().map(|&s| Some((f64::from(s) - f64::from(from)).abs())).collect()
        }
    }

    #[test]
    fn sticky_tie_prefers_nearest_to_current() {
        let cands = vec![vec![2u32, 8, 9], vec![2, 8, 9]];
        assert_eq!(select_sticky(&cands, 0, Some(10), 0, Some(&FixedDelays)), Some(9));
        assert_eq!(select_sticky(&cands, 0, Some(10), 0, None), Some(2));
    }

    #[test]
    fn constant_trace_never_migrates() {
        let step = vec![vec![(1, 3000), (2, 3100)], vec![(1, 5000), (2, 4000)]];
        let tr = trace_of(&vec![step; 30]);
        for spec in [
            StrategySpec::minmax(Cardinality::ManyToOne),
            StrategySpec::relative(0.1, Cardinality::ManyToOne),
            StrategySpec::sticky(Cardinality::ManyToOne),
            StrategySpec::minmax(Cardinality::ManyToMany),
            StrategySpec::absolute_ms(1.0, Cardinality::ManyToMany),
        ] {
            let s = run_strategy(&tr, &spec).unwrap();
            assert_eq!(s.migration_count(), 0, "{spec:?}");
            assert!(s.migrations.iter().all(|m| m.bootstrap && m.t_handoff == 0));
        }
    }

    #[test]
    fn one_to_one_rejects_multiple_clients() {
        let tr = trace_of(&[vec![vec![(1, 3000)], vec![(1, 3000)]]]);
        assert!(run_strategy(&tr, &StrategySpec::minmax(Cardinality::OneToOne)).is_err());
        assert!(StrategySpec::sticky(Cardinality::ManyToMany).validate().is_err());
        assert!(StrategySpec::relative(1.5, Cardinality::OneToOne).validate().is_err());
        assert!(StrategySpec::absolute_ms(0.0, Cardinality::OneToOne).validate().is_err());
    }

    #[test]
    fn gaps_retain_assignment() {
        let tr = trace_of(&[vec![vec![(1, 3000)]], vec![vec![]], vec![vec![(1, 3000), (2, 1000)]]]);
        let s = run_strategy(&tr, &StrategySpec::minmax(Cardinality::OneToOne)).unwrap();
        assert_eq!(s.replicas, vec![vec![1], vec![1], vec![2]]);
        assert_eq!(s.assigned(1, 0), None);
        assert_eq!(s.migration_count(), 1);
        assert!(!s.log.is_empty());
    }

    #[test]
    fn disjoint_candidates_need_one_replica_each() {
        let tr = trace_of(&[vec![vec![(1, 1000)], vec![(2, 1000)], vec![(3, 1000)]]]);
        let s = run_strategy(&tr, &StrategySpec::relative(0.1, Cardinality::ManyToMany)).unwrap();
        assert_eq!(s.replicas[0], vec![1, 2, 3]);
        assert!(s
            .migrations
            .iter()
            .all(|m| m.replication_source == Some(ReplicationSource::Origin)));
    }

    #[test]
    fn many_to_many_single_client_matches_argmin() {
        let tr = trace_of(&[vec![vec![(4, 3000), (5, 2000), (6, 2100)]]]);
        let s = run_strategy(&tr, &StrategySpec::relative(0.1, Cardinality::ManyToMany)).unwrap();
        assert_eq!(s.replicas[0], vec![5]);
        assert_eq!(s.assigned(0, 0), Some(5));
    }

    #[test]
    fn incumbents_are_retained_and_sourced() {
        let tr = trace_of(&[
            vec![vec![(1, 1000), (2, 1050)], vec![(3, 1000)]],
            vec![vec![(1, 1060), (2, 1000)], vec![(3, 3000), (4, 1000)]],
        ]);
        let s = run_strategy(&tr, &StrategySpec::relative(0.1, Cardinality::ManyToMany)).unwrap();
        // Client 0 stays on incumbent 1 (within 10%); client 1 needs sat 4.
        assert_eq!(s.replicas[1], vec![1, 4]);
        let added = s.migrations.last().unwrap();
        assert_eq!(added.to_sat, 4);
        assert!(!added.bootstrap);
        assert_eq!(added.replication_source, Some(ReplicationSource::Satellite(1)));
        let with_isl =
            run_strategy_with(&tr, &StrategySpec::relative(0.1, Cardinality::ManyToMany), Some(&FixedDelays))
                .unwrap();
        assert_eq!(
            with_isl.migrations.last().unwrap().replication_source,
            Some(ReplicationSource::Satellite(3))
        );
    }

    #[test]
    fn threshold_zero_matches_minmax_single_client() {
        let tr = trace_of(&[
            vec![vec![(1, 3000), (2, 3000)]],
            vec![vec![(1, 3100), (2, 3000)]],
            vec![vec![(1, 2900), (2, 3000), (3, 2900)]],
        ]);
        let a = run_strategy(&tr, &StrategySpec::minmax(Cardinality::OneToOne)).unwrap();
        let b = run_strategy(
            &tr,
            &StrategySpec::relative(0.0, Cardinality::OneToOne).with_aggregation(Aggregation::Mean),
        )
        .unwrap();
        assert_eq!(a.assignment, b.assignment);
    }

    /// Brute-force minimum hitting set size.
    fn optimal_cover(sets: &[Vec<u32>], universe: u32) -> usize {
        (0u32..(1 << universe))
            .filter(|mask| sets.iter().all(|s| s.iter().any(|&x| mask & (1 << x) != 0)))
            .map(|m| m.count_ones() as usize)
            .min()
            .unwrap()
    }

    fn cover_instance() -> impl Strategy<Value = Vec<Vec<(u32, u32)>>> {
        prop::collection::vec(
            prop::collection::btree_map(0u32..10, 1000u32..1100, 1..5)
                .prop_map(|m| m.into_iter().collect::<Vec<_>>()),
            1..=8,
        )
    }

    proptest! {
        #[test]
        fn greedy_cover_is_valid_and_bounded(inst in cover_instance()) {
            let candidates: Vec<Option<Vec<Sample>>> = inst
                .iter()
                .map(|c| Some(c.iter().map(|&(sat, one_way_us)| Sample { sat, one_way_us }).collect()))
                .collect();
            let p = place_replicas(&candidates, &[]);
            for (c, a) in candidates.iter().zip(&p.assignment) {
                let a = a.expect("every client covered");
                prop_assert!(c.as_ref().unwrap().iter().any(|s| s.sat == a));
                prop_assert!(p.replicas.contains(&a));
            }
            let sets: Vec<Vec<u32>> = inst.iter().map(|c| c.iter().map(|x| x.0).collect()).collect();
            let opt = optimal_cover(&sets, 10);
            let n = inst.len() as f64;
            prop_assert!(p.replicas.len() as f64 <= (1.0 + n.ln()) * opt as f64 + 1e-9);
        }
    }
}
