use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use sttsim::accounting::{self, CacheParams, Report};
use sttsim::cache::{CacheGeometry, CacheSize};
use sttsim::policy::Policy;
use sttsim::sim::{self, RunOutcome};
use sttsim::trace::{self, SynthConfig, Trace, TraceEvent};

/// STT-RAM last-level cache simulator with read-disturbance mitigation
/// policies.
#[derive(Parser, Debug)]
#[command(name = "sttsim", version)]
struct Cli {
    /// TOML file supplying defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one policy and report it against the ideal baseline.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        policy: Policy,
    },
    /// Simulate every policy on the same trace.
    Compare {
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Write a synthetic trace.
    Gen(GenArgs),
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Trace file; `.sttb` is read as binary, anything else as text.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    cache_size: Option<CacheSize>,
    #[arg(long)]
    assoc: Option<usize>,
    #[arg(long, value_enum)]
    report: Option<ReportFormat>,
    /// Report destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lcll_sense_fraction: Option<f64>,
    /// Override one cache parameter, e.g. `write_energy=0.4`.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the output extension, else text.
    #[arg(long, value_enum)]
    format: Option<TraceFormat>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    zero_frac: Option<f64>,
    #[arg(long)]
    narrow_frac: Option<f64>,
    #[arg(long)]
    wide_frac: Option<f64>,
    #[arg(long)]
    mean_run_len: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Text,
    Binary,
}

/// Settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    cache_size: Option<CacheSize>,
    assoc: Option<usize>,
    report: Option<ReportFormat>,
    params: BTreeMap<String, f64>,
    synth: Option<SynthConfig>,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let value = value
        .trim()
        .parse()
        .map_err(|e| format!("bad value for {key}: {e}"))?;
    Ok((key.trim().to_string(), value))
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn is_binary(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("sttb"))
}

fn load_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let file = File::open(path).with_context(|| format!("opening trace {}", path.display()))?;
    let reader = BufReader::new(file);
    let Trace { events, misaligned } = if is_binary(path) {
        trace::read_binary(reader)
    } else {
        trace::parse_text(reader)
    }
    .with_context(|| format!("reading trace {}", path.display()))?;
    if misaligned > 0 {
        log::warn!("{misaligned} addresses were not block-aligned and were masked");
    }
    log::info!("loaded {} events from {}", events.len(), path.display());
    Ok(events)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

struct Setup {
    geometry: CacheGeometry,
    params: CacheParams,
    format: ReportFormat,
}

/// Preset, then config file, then flags.
fn setup(args: &SimArgs, file: &FileConfig) -> Result<Setup> {
    let size = args
        .cache_size
        .or(file.cache_size)
        .unwrap_or(CacheSize::Mb4);
    let assoc = args.assoc.or(file.assoc).unwrap_or(16);
    let geometry = CacheGeometry::preset(size, assoc)?;
    let mut params = CacheParams::preset(size);
    for (key, &value) in &file.params {
        params.set(key, value)?;
    }
    for (key, value) in &args.params {
        params.set(key, *value)?;
    }
    if let Some(f) = args.lcll_sense_fraction {
        params.lcll_sense_fraction = f;
    }
    params.validate()?;
    let format = args.report.or(file.report).unwrap_or(ReportFormat::Json);
    Ok(Setup {
        geometry,
        params,
        format,
    })
}

/// Emits the reports, then reports integrity violations. Returns whether the
/// runs were clean.
fn emit(
    results: &[(Report, RunOutcome)],
    format: ReportFormat,
    out: Option<&Path>,
) -> Result<bool> {
    let reports: Vec<Report> = results.iter().map(|(r, _)| r.clone()).collect();
    let mut sink = output(out)?;
    match format {
        ReportFormat::Json => accounting::write_json(&reports, &mut sink)?,
        ReportFormat::Csv => accounting::write_csv(&reports, &mut sink)?,
    }
    sink.flush()?;

    let mut clean = true;
    for (report, outcome) in results {
        if outcome.violations.is_empty() {
            continue;
        }
        clean = false;
        eprintln!(
            "{}: {} integrity violations",
            report.policy,
            outcome.violations.len()
        );
        for v in outcome.violations.iter().take(10) {
            eprintln!("  {v}");
        }
    }
    Ok(clean)
}

fn simulate(args: &SimArgs, file: &FileConfig, policies: &[Policy]) -> Result<bool> {
    let setup = setup(args, file)?;
    let events = load_trace(&args.trace)?;
    let results = sim::compare(policies, setup.geometry, &setup.params, &events)?;
    emit(&results, setup.format, args.out.as_deref())
}

fn generate(args: &GenArgs, file: &FileConfig) -> Result<()> {
    let mut cfg = file.synth.clone().unwrap_or_default();
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    apply!(seed => seed, events => event_count, blocks => block_count, zero_frac => zero_frac,
        narrow_frac => narrow_frac, wide_frac => wide_frac, mean_run_len => mean_run_len);
    let events = trace::generate(&cfg)?;

    let format = args.format.unwrap_or(match &args.out {
        Some(p) if is_binary(p) => TraceFormat::Binary,
        _ => TraceFormat::Text,
    });
    let mut sink = output(args.out.as_deref())?;
    match format {
        TraceFormat::Text => trace::write_text(&events, &mut sink)?,
        TraceFormat::Binary => trace::write_binary(&events, &mut sink)?,
    }
    sink.flush()?;
    log::info!("wrote {} events", events.len());
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    let file = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Run { sim, policy } => simulate(sim, &file, &[*policy]),
        Command::Compare { sim } => simulate(sim, &file, &Policy::ALL),
        Command::Gen(args) => generate(args, &file).map(|()| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STTSIM_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
