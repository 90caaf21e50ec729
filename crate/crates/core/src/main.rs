use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use leo_edge::config::load_scenario;
use leo_edge::lifecycle::{check_zero_downtime, plan_timeline, Command, CostMode, CostModel};
use leo_edge::report::{
    compute_metrics, pareto_sweep, parse_values, write_durations_csv, write_metrics_csv, write_replicas_csv,
    write_rtt_csv, write_sweep_csv, MetricsReport,
};
use leo_edge::scenarios::Bundled;
use leo_edge::strategies::{
    run_strategy_with, Aggregation, Cardinality, GridDelays, IslDelays, Kind, Schedule, StrategySpec, Threshold,
};
use leo_edge::traces::{generate_trace, read_trace, write_trace_to, ScenarioConfig, Trace};
use leo_edge::{Error, Result};

#[derive(Parser)]
#[command(name = "leo-edge", version, about = "Trace-driven server selection for LEO edge services")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a latency trace from a scenario config.
    Trace {
        #[arg(long)]
        config: PathBuf,
        /// Keep only the k lowest-latency satellites per client and second.
        #[arg(long = "candidates-only", value_name = "K")]
        candidates: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a server-selection strategy over a trace.
    Schedule(RunArgs),
    /// Expand a schedule into a replication timeline.
    Plan(PlanArgs),
    /// Compute RTT, migration and replica metrics.
    Metrics(PlanArgs),
    /// Sweep the threshold heuristic over a range of thresholds.
    Sweep(SweepArgs),
    /// Run a bundled scenario end to end.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct Source {
    /// Trace CSV to read.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Scenario config; generates the trace if --trace is absent and
    /// supplies inter-satellite delays either way.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct StrategyArgs {
    #[arg(long, default_value = "threshold")]
    strategy: Kind,
    #[arg(long, conflicts_with = "delta_ms")]
    tau: Option<f64>,
    #[arg(long)]
    delta_ms: Option<f64>,
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// 1:1, n:1 or n:m; defaults to 1:1 for one client, n:1 otherwise.
    #[arg(long)]
    cardinality: Option<Cardinality>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LifecycleArgs {
    #[arg(long, default_value_t = 20.0)]
    lead_s: f64,
    #[arg(long, default_value_t = 0.0)]
    payload_mb: f64,
    #[arg(long, default_value = "decoupled")]
    cost_model: CostMode,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    lifecycle: LifecycleArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// Relative thresholds, `lo:hi:step` or a comma list.
    #[arg(long, conflicts_with = "delta_ms", required_unless_present = "delta_ms")]
    tau: Option<String>,
    /// Absolute thresholds in milliseconds.
    #[arg(long)]
    delta_ms: Option<String>,
    #[arg(long, default_value = "rms")]
    aggregation: Aggregation,
    #[arg(long)]
    cardinality: Option<Cardinality>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// single-client, single-plane, iot or cdn.
    name: Bundled,
    #[command(flatten)]
    strategy: StrategyArgs,
    #[command(flatten)]
    lifecycle: LifecycleArgs,
    /// Site jitter seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_s: Option<u32>,
    #[arg(long = "candidates-only", value_name = "K")]
    candidates: Option<usize>,
    /// Also write the (large) trace CSV.
    #[arg(long)]
    write_trace: bool,
    /// Output directory (default `out/<scenario>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Trace { config, candidates, out } => {
            let mut cfg = load_scenario(&config)?;
            if candidates.is_some() {
                cfg.candidates = candidates;
            }
            let trace = generate_trace(&cfg)?;
            emit(out.as_deref(), "trace.csv", |w| write_trace_to(&trace, w))
        }
        Cmd::Schedule(args) => {
            let loaded = Loaded::new(&args.source)?;
            let schedule = loaded.schedule(&args.strategy)?;
            write_schedule(&schedule, args.out.as_deref())
        }
        Cmd::Plan(args) => {
            let loaded = Loaded::new(&args.run.source)?;
            let schedule = loaded.schedule(&args.run.strategy)?;
            plan(&loaded.trace, &schedule, &args.lifecycle, args.run.out.as_deref()).map(|_| ())
        }
        Cmd::Metrics(args) => {
            let loaded = Loaded::new(&args.run.source)?;
            let schedule = loaded.schedule(&args.run.strategy)?;
            let timeline = lifecycle_plan(&schedule, &args.lifecycle)?.0;
            let m = compute_metrics(&loaded.trace, &schedule, Some(&timeline), loaded.ramp_up_s);
            write_metrics(&m, args.run.out.as_deref())
        }
        Cmd::Sweep(args) => {
            let loaded = Loaded::new(&args.source)?;
            let thresholds: Vec<Threshold> = match (&args.tau, &args.delta_ms) {
                (Some(t), _) => parse_values(t)?.into_iter().map(Threshold::Relative).collect(),
                (None, Some(d)) => parse_values(d)?.into_iter().map(Threshold::AbsoluteMs).collect(),
                (None, None) => unreachable!("clap requires one of --tau/--delta-ms"),
            };
            let template = StrategySpec::relative(0.0, loaded.cardinality(args.cardinality))
                .with_aggregation(args.aggregation);
            let rows = pareto_sweep(&loaded.trace, &thresholds, &template, loaded.isl(), loaded.ramp_up_s)?;
            emit(args.out.as_deref(), "sweep.csv", |w| write_sweep_csv(&rows, w))
        }
        Cmd::Scenario(args) => scenario(args),
    }
}

struct Loaded {
    trace: Trace,
    isl: Option<GridDelays>,
    ramp_up_s: u32,
}

impl Loaded {
    fn new(src: &Source) -> Result<Self> {
        let cfg = src.config.as_deref().map(load_scenario).transpose()?;
        let trace = match (&src.trace, &cfg) {
            (Some(path), _) => read_trace(path)?,
            (None, Some(cfg)) => generate_trace(cfg)?,
            (None, None) => return Err(Error::Config("need --trace or --config".into())),
        };
        Ok(Loaded::from_parts(trace, cfg.as_ref()))
    }

    fn from_parts(trace: Trace, cfg: Option<&ScenarioConfig>) -> Self {
        Loaded {
            trace,
            isl: cfg.map(|c| GridDelays::new(&c.shell, &c.link)),
            ramp_up_s: cfg.map_or(0, |c| c.ramp_up_s),
        }
    }

    fn isl(&self) -> Option<&dyn IslDelays> {
        self.isl.as_ref().map(|g| g as &dyn IslDelays)
    }

    fn cardinality(&self, c: Option<Cardinality>) -> Cardinality {
        c.unwrap_or(if self.trace.sites().len() == 1 {
            Cardinality::OneToOne
        } else {
            Cardinality::ManyToOne
        })
    }

    fn schedule(&self, args: &StrategyArgs) -> Result<Schedule> {
        let spec = strategy_spec(args, self.cardinality(args.cardinality))?;
        run_strategy_with(&self.trace, &spec, self.isl())
    }
}

fn strategy_spec(args: &StrategyArgs, cardinality: Cardinality) -> Result<StrategySpec> {
    let spec = match (args.strategy, args.tau, args.delta_ms) {
        (Kind::MinMax, None, None) => StrategySpec::minmax(cardinality),
        (Kind::Sticky, None, None) => StrategySpec::sticky(cardinality),
        (Kind::Threshold, _, Some(d)) => StrategySpec::absolute_ms(d, cardinality),
        (Kind::Threshold, tau, None) => StrategySpec::relative(tau.unwrap_or(0.10), cardinality),
        (k, _, _) => return Err(Error::Config(format!("--tau/--delta-ms only apply to threshold, not {k}"))),
    };
    let spec = match args.aggregation {
        Some(a) => spec.with_aggregation(a),
        None => spec,
    };
    spec.validate()?;
    Ok(spec)
}

fn emit(dir: Option<&Path>, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            f(&mut w)?;
            w.flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn write_schedule(schedule: &Schedule, out: Option<&Path>) -> Result<()> {
    emit(out, "schedule.csv", |w| schedule.write_csv(w))?;
    if out.is_some() {
        emit(out, "events.csv", |w| schedule.write_events_csv(w))?;
    }
    Ok(())
}

fn lifecycle_plan(
    schedule: &Schedule,
    args: &LifecycleArgs,
) -> Result<(leo_edge::lifecycle::MigrationTimeline, leo_edge::lifecycle::SchedulerCommandLog)> {
    plan_timeline(schedule, args.lead_s, &CostModel::for_mode(args.cost_model), args.payload_mb)
}

fn plan(
    trace: &Trace,
    schedule: &Schedule,
    args: &LifecycleArgs,
    out: Option<&Path>,
) -> Result<leo_edge::lifecycle::MigrationTimeline> {
    let (timeline, log) = lifecycle_plan(schedule, args)?;
    for w in &timeline.warnings {
        eprintln!("warning: {w}");
    }
    emit(out, "timeline.csv", |w| timeline.write_csv(w))?;
    if out.is_some() {
        write_schedule(schedule, out)?;
        let report = check_zero_downtime(&timeline, schedule, trace);
        emit(out, "violations.csv", |w| report.write_csv(w))?;
        emit(out, "commands.csv", |w| write_commands(&log.commands, w))?;
    }
    Ok(timeline)
}

fn write_commands(commands: &[Command], w: &mut dyn Write) -> Result<()> {
    let err = |e: io::Error| Error::io("<commands>", e);
    writeln!(w, "t_s,command,sat,clients").map_err(err)?;
    for c in commands {
        let (name, clients) = match c {
            Command::Deploy { .. } => ("deploy", String::new()),
            Command::NotifyClients { clients, .. } => ("notify", clients.join(";")),
            Command::Remove { .. } => ("remove", String::new()),
        };
        writeln!(w, "{:.3},{name},{},{clients}", c.t(), c.sat()).map_err(err)?;
    }
    Ok(())
}

fn write_metrics(m: &MetricsReport, out: Option<&Path>) -> Result<()> {
    let ms = std::slice::from_ref(m);
    match out {
        Some(_) => {
            emit(out, "metrics.csv", |w| write_metrics_csv(ms, w))?;
            emit(out, "durations.csv", |w| write_durations_csv(ms, w))?;
            emit(out, "replicas.csv", |w| write_replicas_csv(ms, w))?;
            emit(out, "rtt.csv", |w| write_rtt_csv(ms, w))?;
            println!("{m}");
            Ok(())
        }
        None => {
            eprintln!("{m}");
            emit(None, "metrics.csv", |w| write_metrics_csv(ms, w))
        }
    }
}

fn scenario(args: ScenarioArgs) -> Result<()> {
    let mut cfg = args.name.config(args.seed);
    if let Some(d) = args.duration_s {
        cfg.duration_s = d;
    }
    if args.candidates.is_some() {
        cfg.candidates = args.candidates;
    }
    let out = args.out.unwrap_or_else(|| Path::new("out").join(args.name.name()));
    let trace = generate_trace(&cfg)?;
    if args.write_trace {
        emit(Some(&out), "trace.csv", |w| write_trace_to(&trace, w))?;
    }
    let loaded = Loaded::from_parts(trace, Some(&cfg));
    let card = args.strategy.cardinality.unwrap_or(args.name.cardinality());
    let spec = strategy_spec(&args.strategy, card)?;
    let schedule = run_strategy_with(&loaded.trace, &spec, loaded.isl())?;
    let timeline = plan(&loaded.trace, &schedule, &args.lifecycle, Some(&out))?;
    let m = compute_metrics(&loaded.trace, &schedule, Some(&timeline), cfg.ramp_up_s);
    write_metrics(&m, Some(&out))
}
