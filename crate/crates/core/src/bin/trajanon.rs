use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use trajanon::anonymizer::{pair_records, AnonymizeParams, DEFAULT_DELTA_H};
use trajanon::history::{build_history_log, HistoryLog};
use trajanon::metrics::{
    hop_filter_csv, hop_filter_impact, hw_model_csv, hw_throughput, measure_sw_throughput, retention_csv,
    retention_curve, HwModelParams,
};
use trajanon::pipeline::{load_history, load_records, run_pipeline, HistorySource, RunConfig, RunSnapshot, RETENTION_KS};
use trajanon::synth::{synth_city, SynthParams};
use trajanon::{Error, Result, RoadGraph};

#[derive(Parser)]
#[command(name = "trajanon", version, about = "History-aware segment-based trajectory k-anonymization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic city (map, records, history records).
    Synth(SynthArgs),
    /// Build a binary history log from prior-period records.
    BuildHistory(BuildHistoryArgs),
    /// Run the anonymization pipeline.
    Anonymize(AnonymizeArgs),
    /// Measure throughput against history size, next to the hardware model.
    Bench(BenchArgs),
    /// Retention curves, hop-filter impact and throughput-model tables.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    grid: usize,
    #[arg(long, default_value_t = 0.2)]
    arterial_fraction: f64,
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 6)]
    samples: usize,
    /// Prior-period users (defaults to --users).
    #[arg(long)]
    history_users: Option<usize>,
    /// Injected circuitous prior-period routes.
    #[arg(long, default_value_t = 0)]
    detours: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BuildHistoryArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a `node,run` CSV export.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone)]
struct HistoryArgs {
    /// Prior-period raw records, gap-filled at load time.
    #[arg(long, conflicts_with = "history_log")]
    history_records: Option<PathBuf>,
    /// Prebuilt binary history log.
    #[arg(long)]
    history_log: Option<PathBuf>,
    /// Ignore any history and anonymize with shortest paths only.
    #[arg(long)]
    no_history: bool,
}

impl HistoryArgs {
    fn source(&self) -> Result<HistorySource> {
        if self.no_history {
            return Ok(HistorySource::Empty);
        }
        match (&self.history_records, &self.history_log) {
            (Some(p), None) => Ok(HistorySource::Records(p.clone())),
            (None, Some(p)) => Ok(HistorySource::Log(p.clone())),
            _ => Err(Error::Config(
                "give one of --history-records, --history-log or --no-history".into(),
            )),
        }
    }
}

#[derive(Args)]
struct AnonymizeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    records: PathBuf,
    #[command(flatten)]
    history: HistoryArgs,
    #[arg(long)]
    k: u32,
    #[arg(long, default_value_t = DEFAULT_DELTA_H)]
    delta_h: u32,
    #[arg(long)]
    no_hop_filter: bool,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also export published segments as GeoJSON.
    #[arg(long)]
    geojson: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct HwArgs {
    #[arg(long, default_value_t = 107.0e6)]
    f_clk_hz: f64,
    #[arg(long, default_value_t = 4)]
    entries_per_cycle: u64,
    #[arg(long, default_value_t = 0)]
    overhead_cycles: u64,
}

impl HwArgs {
    fn params(&self) -> Result<HwModelParams> {
        if !(self.f_clk_hz > 0.0) || self.entries_per_cycle == 0 {
            return Err(Error::Config("clock and entries per cycle must be positive".into()));
        }
        Ok(HwModelParams {
            f_clk_hz: self.f_clk_hz,
            entries_per_cycle: self.entries_per_cycle,
            overhead_cycles: self.overhead_cycles,
        })
    }
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    records: PathBuf,
    #[command(flatten)]
    history: HistoryArgs,
    /// History sizes in entries; the log is truncated or repeated to fit.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    sizes: Vec<u64>,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 16)]
    k: u32,
    #[arg(long, default_value_t = DEFAULT_DELTA_H)]
    delta_h: u32,
    #[arg(long)]
    no_hop_filter: bool,
    #[command(flatten)]
    hw: HwArgs,
    /// Output CSV path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct MetricsArgs {
    /// Output directory of an `anonymize` run.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = RETENTION_KS.to_vec())]
    ks: Vec<u32>,
    /// Run made with the hop filter on.
    #[arg(long, requires = "without_filter")]
    with_filter: Option<PathBuf>,
    /// Same inputs, hop filter off.
    #[arg(long, requires = "with_filter")]
    without_filter: Option<PathBuf>,
    /// History sizes for a throughput-model table.
    #[arg(long, value_delimiter = ',')]
    hw_sizes: Vec<u64>,
    #[command(flatten)]
    hw: HwArgs,
    /// Write reports here instead of stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn to_json<S: Serialize + ?Sized>(v: &S) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes `name` (and `name` with a .json extension when asked) to `dir`, or
/// prints to stdout.
fn emit(dir: Option<&Path>, name: &str, csv: &str, json: Option<String>) -> Result<()> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            write(&d.join(name), csv)?;
            if let Some(j) = json {
                write(&d.join(Path::new(name).with_extension("json")), &j)?;
            }
        }
        None => {
            print!("{csv}");
            if let Some(j) = json {
                print!("{j}");
            }
        }
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let params = SynthParams {
        grid: a.grid,
        arterial_fraction: a.arterial_fraction,
        users: a.users,
        samples_per_user: a.samples,
        history_users: a.history_users,
        detours: a.detours,
        ..SynthParams::default()
    };
    let city = synth_city(a.seed, &params)?;
    let manifest = city.write_to(&a.out_dir, a.seed)?;
    if a.json {
        print!("{}", to_json(&manifest));
    } else {
        print!("{}", manifest.to_text());
    }
    Ok(())
}

fn cmd_build_history(a: BuildHistoryArgs) -> Result<()> {
    let graph = RoadGraph::<f64>::load(&a.map)?;
    let records = load_records::<f64>(&a.records)?;
    let log = build_history_log(&graph, &records);
    log.save(&a.out)?;
    if let Some(p) = &a.csv {
        let mut buf = Vec::new();
        log.write_csv(&mut buf)?;
        std::fs::write(p, buf).map_err(|e| Error::io(p, e))?;
    }
    if a.json {
        print!(
            "{}",
            to_json(&serde_json::json!({ "entries": log.len(), "runs": log.run_count() }))
        );
    } else {
        println!("entries {}", log.len());
        println!("runs {}", log.run_count());
    }
    Ok(())
}

fn cmd_anonymize(a: AnonymizeArgs) -> Result<()> {
    if a.parallel == 0 {
        return Err(Error::Config("--parallel must be at least 1".into()));
    }
    let config = RunConfig {
        map: a.map.clone(),
        records: a.records.clone(),
        history: a.history.source()?,
        k: a.k,
        delta_h: a.delta_h,
        hop_filter: !a.no_hop_filter,
        parallel: a.parallel,
    };
    let out = run_pipeline(&config)?;
    let graph = if a.geojson { Some(RoadGraph::<f64>::load(&a.map)?) } else { None };
    let files = out.write_to(&a.out_dir, a.json, graph.as_ref())?;
    let used = out.reports.iter().filter(|r| r.used_history).count();
    println!(
        "pairs {} history {} shortest {} seen {} published {} (k={})",
        out.reports.len(),
        used,
        out.reports.len() - used,
        out.counter().seen().len(),
        out.published.len(),
        out.k()
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    history_size: u64,
    model_records_per_sec: f64,
    measured_records_per_sec: f64,
    measured_min_records_per_sec: f64,
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let hw = a.hw.params()?;
    if a.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut rows = Vec::new();
    if !a.sizes.is_empty() {
        let graph = RoadGraph::<f64>::load(&a.map)?;
        let records = load_records::<f64>(&a.records)?;
        let base: HistoryLog = load_history(&graph, &a.history.source()?)?;
        let pairs = pair_records(&graph, &records);
        let params = AnonymizeParams {
            delta_h: a.delta_h,
            hop_filter: !a.no_hop_filter,
        };
        for &size in &a.sizes {
            let log = base.resized(size as usize);
            let sw = measure_sw_throughput(&graph, &log, &pairs, params, a.k, a.repetitions)?;
            rows.push(BenchRow {
                history_size: log.len() as u64,
                model_records_per_sec: hw_throughput(&hw, log.len() as u64),
                measured_records_per_sec: sw.median,
                measured_min_records_per_sec: sw.min,
            });
        }
    }
    let mut csv = String::from("history_size,model_records_per_sec,measured_records_per_sec,measured_min_records_per_sec\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.2},{:.2},{:.2}\n",
            r.history_size, r.model_records_per_sec, r.measured_records_per_sec, r.measured_min_records_per_sec
        ));
    }
    match &a.out {
        Some(p) => {
            write(p, &csv)?;
            if a.json {
                write(&p.with_extension("json"), &to_json(&rows))?;
            }
        }
        None => {
            print!("{csv}");
            if a.json {
                print!("{}", to_json(&rows));
            }
        }
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    if a.ks.contains(&0) {
        return Err(Error::Config("k values must be at least 1".into()));
    }
    let mut ks = a.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let dir = a.out_dir.as_deref();
    let mut did_something = false;

    if let Some(run) = &a.run {
        let snap = RunSnapshot::load(run)?;
        let curve = retention_curve(&snap.counter, &ks)?;
        emit(dir, "retention.csv", &retention_csv(&curve), a.json.then(|| to_json(&curve)))?;
        did_something = true;
    }
    if let (Some(w), Some(wo)) = (&a.with_filter, &a.without_filter) {
        let deltas = hop_filter_impact(&RunSnapshot::load(w)?, &RunSnapshot::load(wo)?, &ks)?;
        emit(dir, "hop_filter.csv", &hop_filter_csv(&deltas), a.json.then(|| to_json(&deltas)))?;
        did_something = true;
    }
    if !a.hw_sizes.is_empty() {
        let hw = a.hw.params()?;
        let rows: Vec<_> = a
            .hw_sizes
            .iter()
            .map(|&n| serde_json::json!({ "history_size": n, "records_per_sec": hw_throughput(&hw, n) }))
            .collect();
        emit(dir, "hw_model.csv", &hw_model_csv(&hw, &a.hw_sizes), a.json.then(|| to_json(&rows)))?;
        did_something = true;
    }
    if !did_something {
        return Err(Error::Config(
            "nothing to do: give --run, --with-filter/--without-filter or --hw-sizes".into(),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::BuildHistory(a) => cmd_build_history(a),
        Command::Anonymize(a) => cmd_anonymize(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Metrics(a) => cmd_metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
