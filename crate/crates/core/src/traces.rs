//! Per-second latency traces: generation from geometry and the CSV format.
//!
//! The CSV layout is `t_s,site_id,sat_id,one_way_us`. A `(t, site)` pair
//! with no access satellite is written as a single gap row with
//! `sat_id = -1` and `one_way_us = 0`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::orbits::{propagate, GroundSite, ShellSpec, SiteRole};
use crate::topology::{build_isl_grid, snapshot, LinkModel};

pub const TRACE_HEADER: [&str; 4] = ["t_s", "site_id", "sat_id", "one_way_us"];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub shell: ShellSpec,
    pub link: LinkModel,
    pub sites: Vec<GroundSite>,
    pub duration_s: u32,
    pub step_s: u32,
    pub ramp_up_s: u32,
    /// Keep only the k lowest-latency satellites per `(t, client)`.
    pub candidates: Option<usize>,
}

impl ScenarioConfig {
    pub fn new(shell: ShellSpec, sites: Vec<GroundSite>, duration_s: u32) -> Self {
        ScenarioConfig {
            shell,
            link: LinkModel::default(),
            sites,
            duration_s,
            step_s: 1,
            ramp_up_s: 0,
            candidates: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shell.validate()?;
        self.link.validate()?;
        if self.step_s < 1 {
            return Err(Error::Config("step_s must be at least 1".into()));
        }
        if self.duration_s != 0 && self.duration_s < self.step_s {
            return Err(Error::Config(format!(
                "duration_s ({}) shorter than step_s ({})",
                self.duration_s, self.step_s
            )));
        }
        if self.candidates == Some(0) {
            return Err(Error::Config("candidates must be at least 1".into()));
        }
        let mut ids = Vec::new();
        for s in &self.sites {
            s.validate()?;
            ids.push(s.site_id.as_str());
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate site_id {}", w[0])));
        }
        Ok(())
    }

    /// Client sites sorted by id.
    pub fn clients(&self) -> Vec<GroundSite> {
        let mut c: Vec<GroundSite> = self
            .sites
            .iter()
            .filter(|s| s.role == SiteRole::Client)
            .cloned()
            .collect();
        c.sort_by(|a, b| a.site_id.cmp(&b.site_id));
        c
    }

    pub fn times(&self) -> Vec<u32> {
        (0..self.duration_s).step_by(self.step_s as usize).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sample {
    pub sat: u32,
    pub one_way_us: u32,
}

impl Sample {
    pub fn one_way_ms(&self) -> f64 {
        f64::from(self.one_way_us) / 1000.0
    }
}

/// Dense `(time, site)` grid of latency samples; each cell is either a gap
/// or a list of samples sorted by satellite id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    sites: Vec<String>,
    times: Vec<u32>,
    offsets: Vec<usize>,
    gaps: Vec<bool>,
    samples: Vec<Sample>,
    sat_bound: u32,
}

impl Trace {
    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn times(&self) -> &[u32] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Spacing between consecutive timesteps (1 for traces with fewer than two).
    pub fn step_s(&self) -> u32 {
        match self.times.as_slice() {
            [a, b, ..] => b - a,
            _ => 1,
        }
    }

    pub fn start_s(&self) -> u32 {
        self.times.first().copied().unwrap_or(0)
    }

    /// Covered time span: last timestep plus one step, minus the first.
    pub fn duration_s(&self) -> u32 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a + self.step_s(),
            _ => 0,
        }
    }

    /// One greater than the largest satellite id present.
    pub fn sat_bound(&self) -> u32 {
        self.sat_bound
    }

    pub fn row_count(&self) -> usize {
        self.samples.len()
    }

    pub fn site_index(&self, site_id: &str) -> Option<usize> {
        self.sites.binary_search_by(|s| s.as_str().cmp(site_id)).ok()
    }

    pub fn time_index(&self, t: u32) -> Option<usize> {
        self.times.binary_search(&t).ok()
    }

    /// Samples for `(time index, site index)`, `None` for a coverage gap.
    pub fn cell(&self, ti: usize, si: usize) -> Option<&[Sample]> {
        let idx = ti * self.sites.len() + si;
        if self.gaps[idx] {
            None
        } else {
            Some(&self.samples[self.offsets[idx]..self.offsets[idx + 1]])
        }
    }

    pub fn latency_us(&self, ti: usize, si: usize, sat: u32) -> Option<u32> {
        let cell = self.cell(ti, si)?;
        cell.binary_search_by_key(&sat, |s| s.sat)
            .ok()
            .map(|i| cell[i].one_way_us)
    }

    /// Lowest-latency sample in a cell, ties to the lower satellite id.
    pub fn nearest(&self, ti: usize, si: usize) -> Option<Sample> {
        self.cell(ti, si)?
            .iter()
            .min_by_key(|s| (s.one_way_us, s.sat))
            .copied()
    }

    pub fn has_gaps(&self) -> bool {
        self.gaps.iter().any(|&g| g)
    }

    /// Keeps only the first `n` timesteps.
    pub fn truncated(&self, n: usize) -> Trace {
        let n = n.min(self.times.len());
        let cells = n * self.sites.len();
        let end = self.offsets[cells];
        let samples = self.samples[..end].to_vec();
        let sat_bound = samples.iter().map(|s| s.sat + 1).max().unwrap_or(0);
        Trace {
            sites: if n == 0 { Vec::new() } else { self.sites.clone() },
            times: self.times[..n].to_vec(),
            offsets: self.offsets[..=cells].to_vec(),
            gaps: self.gaps[..cells].to_vec(),
            samples,
            sat_bound,
        }
    }

    /// Iterates `(t, site_id, Option<Sample>)` in file order; `None` marks a gap.
    pub fn rows(&self) -> impl Iterator<Item = (u32, &str, Option<Sample>)> + '_ {
        self.times.iter().enumerate().flat_map(move |(ti, &t)| {
            self.sites.iter().enumerate().flat_map(move |(si, site)| {
                let cell: Box<dyn Iterator<Item = Option<Sample>>> = match self.cell(ti, si) {
                    None => Box::new(std::iter::once(None)),
                    Some(c) => Box::new(c.iter().copied().map(Some)),
                };
                cell.map(move |s| (t, site.as_str(), s))
            })
        })
    }
}

/// Accumulates cells in `(time, site)` order.
#[derive(Debug)]
pub struct TraceBuilder {
    trace: Trace,
}

impl TraceBuilder {
    pub fn new(sites: Vec<String>) -> Self {
        TraceBuilder {
            trace: Trace {
                sites,
                offsets: vec![0],
                ..Trace::default()
            },
        }
    }

    /// Appends one timestep; `cells[si]` is `None` for a gap. Samples must
    /// already be sorted by satellite id. An empty sample list is a gap.
    pub fn push_step(&mut self, t: u32, cells: Vec<Option<Vec<Sample>>>) {
        debug_assert_eq!(cells.len(), self.trace.sites.len());
        let tr = &mut self.trace;
        tr.times.push(t);
        for cell in cells {
            match cell.filter(|c| !c.is_empty()) {
                None => tr.gaps.push(true),
                Some(samples) => {
                    tr.gaps.push(false);
                    if let Some(m) = samples.iter().map(|s| s.sat + 1).max() {
                        tr.sat_bound = tr.sat_bound.max(m);
                    }
                    tr.samples.extend(samples);
                }
            }
            tr.offsets.push(tr.samples.len());
        }
    }

    pub fn finish(mut self) -> Trace {
        if self.trace.times.is_empty() {
            self.trace.sites.clear();
        }
        self.trace
    }
}

fn to_us(ms: f64) -> u32 {
    ((ms * 1000.0).round() as u32).max(1)
}

pub fn generate_trace(config: &ScenarioConfig) -> Result<Trace> {
    config.validate()?;
    let clients = config.clients();
    let edges = build_isl_grid(&config.shell);
    let steps: Vec<Vec<Option<Vec<Sample>>>> = config
        .times()
        .into_par_iter()
        .map(|t| {
            let state = propagate(&config.shell, f64::from(t));
            let snap = snapshot(&state, &clients, &edges, &config.link);
            snap.sites
                .iter()
                .map(|view| {
                    view.access?;
                    let mut samples: Vec<Sample> = view
                        .latencies()
                        .map(|(sat, ms)| Sample {
                            sat,
                            one_way_us: to_us(ms),
                        })
                        .collect();
                    if let Some(k) = config.candidates {
                        if samples.len() > k {
                            samples.sort_unstable_by_key(|s| (s.one_way_us, s.sat));
                            samples.truncate(k);
                            samples.sort_unstable_by_key(|s| s.sat);
                        }
                    }
                    Some(samples)
                })
                .collect()
        })
        .collect();
    let mut builder = TraceBuilder::new(clients.into_iter().map(|s| s.site_id).collect());
    for (t, cells) in config.times().into_iter().zip(steps) {
        builder.push_step(t, cells);
    }
    Ok(builder.finish())
}

pub fn write_trace_to<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(TRACE_HEADER)?;
        for (t, site, sample) in trace.rows() {
            match sample {
                Some(s) => w.write_record([
                    t.to_string(),
                    site.to_string(),
                    s.sat.to_string(),
                    s.one_way_us.to_string(),
                ])?,
                None => w.write_record([t.to_string(), site.to_string(), "-1".into(), "0".into()])?,
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::Config(format!("writing trace: {e}")))
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_to(trace, BufWriter::new(f))
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace_from(BufReader::new(f), &path.display().to_string())
}

pub fn read_trace_str(s: &str) -> Result<Trace> {
    read_trace_from(s.as_bytes(), "<trace>")
}

enum Row {
    Sample(Sample),
    Gap,
}

/// Parses a trace CSV. `name` labels error messages.
pub fn read_trace_from<R: Read>(input: R, name: &str) -> Result<Trace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = rdr.records();
    match records.next() {
        None => return Ok(Trace::default()),
        Some(rec) => {
            let rec = rec.map_err(|e| csv_err(name, e))?;
            if rec.iter().ne(TRACE_HEADER) {
                return Err(Error::parse(name, 1, "expected header t_s,site_id,sat_id,one_way_us"));
            }
        }
    }

    let mut rows: Vec<(u32, String, Row, u64)> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_err(name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(Error::parse(name, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let t: u32 = rec[0]
            .parse()
            .map_err(|_| Error::parse(name, line, format!("bad t_s {:?}", &rec[0])))?;
        let site = &rec[1];
        if site.is_empty() {
            return Err(Error::parse(name, line, "empty site_id"));
        }
        let sat: i64 = rec[2]
            .parse()
            .map_err(|_| Error::parse(name, line, format!("bad sat_id {:?}", &rec[2])))?;
        let us: u32 = rec[3]
            .parse()
            .map_err(|_| Error::parse(name, line, format!("bad one_way_us {:?}", &rec[3])))?;
        let row = match (sat, us) {
            (-1, 0) => Row::Gap,
            (-1, _) => return Err(Error::parse(name, line, "gap row must have one_way_us 0")),
            (s, 0) if s >= 0 => return Err(Error::parse(name, line, "one_way_us must be positive")),
            (s, u) => match u32::try_from(s) {
                Ok(sat) if sat < u32::MAX => Row::Sample(Sample { sat, one_way_us: u }),
                _ => return Err(Error::parse(name, line, format!("bad sat_id {s}"))),
            },
        };
        rows.push((t, site.to_string(), row, line));
    }

    let mut sites: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
    sites.sort_unstable();
    sites.dedup();

    let mut builder = TraceBuilder::new(sites.clone());
    let mut i = 0;
    while i < rows.len() {
        let t = rows[i].0;
        if let Some(&prev) = builder.trace.times.last() {
            if t <= prev {
                return Err(Error::parse(name, rows[i].3, "rows not sorted by t_s"));
            }
        }
        let mut cells = Vec::with_capacity(sites.len());
        for site in &sites {
            let line = rows.get(i).map_or(0, |r| r.3);
            if i >= rows.len() || rows[i].0 != t || rows[i].1 != *site {
                return Err(Error::parse(
                    name,
                    line,
                    format!("missing entry for t_s={t}, site_id={site} (rows must be sorted and complete)"),
                ));
            }
            if matches!(rows[i].2, Row::Gap) {
                i += 1;
                cells.push(None);
                if i < rows.len() && rows[i].0 == t && rows[i].1 == *site {
                    return Err(Error::parse(name, rows[i].3, "gap marker mixed with samples"));
                }
                continue;
            }
            let mut samples: Vec<Sample> = Vec::new();
            while i < rows.len() && rows[i].0 == t && rows[i].1 == *site {
                match rows[i].2 {
                    Row::Sample(s) => {
                        if samples.last().is_some_and(|p| p.sat >= s.sat) {
                            return Err(Error::parse(name, rows[i].3, "rows not sorted by sat_id"));
                        }
                        samples.push(s);
                    }
                    Row::Gap => {
                        return Err(Error::parse(name, rows[i].3, "gap marker mixed with samples"))
                    }
                }
                i += 1;
            }
            cells.push(Some(samples));
        }
        if i < rows.len() && rows[i].0 == t {
            return Err(Error::parse(name, rows[i].3, "rows not sorted by site_id"));
        }
        builder.push_step(t, cells);
    }
    Ok(builder.finish())
}

fn csv_err(name: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::parse(name, line, e.to_string())
}
