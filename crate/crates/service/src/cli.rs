//! Subcommands of the `vqn` tool. stdout carries data, stderr carries logs.

use crate::bench::{run_bench, BenchConfig, MsRange};
use crate::config::ServiceConfig;
use crate::http;
use crate::service::Service;
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use vqn_core::allocation::Policy;
use vqn_core::measurement::{
    coincidence_count, delay_histogram_around, CoincidenceSpec, DEFAULT_BACKGROUND_OFFSET_PS, DEFAULT_BACKGROUND_WIDTH_PS,
    DEFAULT_WINDOW_PS,
};
use vqn_core::photon_source::{generate_pair, testbed_preset, SourceConfig};
use vqn_core::simulation::{run, run_preset, Preset, PresetOutput, SimConfig};
use vqn_core::tagcore::{read_stream, write_csv, write_stream, StreamMetadata};

#[derive(Debug, Parser)]
#[command(name = "vqn", version, about = "Virtual entanglement-distribution testbed")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run an allocation simulation or one of the figure presets.
    Simulate(SimulateArgs),
    /// Write synthetic time-tag files.
    Generate(GenerateArgs),
    /// Coincidence analysis of two tag files, JSON on stdout.
    Analyze(AnalyzeArgs),
    /// Drive a running service with concurrent synthetic clients.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured listen address.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["preset", "config"])))]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Simulation config as JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<Policy>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TagFormat {
    Vqtt,
    Csv,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
pub struct GenerateArgs {
    /// Only "testbed" is available.
    #[arg(long, value_parser = ["testbed"])]
    pub preset: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = TagFormat::Vqtt)]
    pub format: TagFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistogramArg {
    pub bin_width_ps: i64,
    pub n_bins: usize,
}

fn parse_histogram(s: &str) -> Result<HistogramArg, String> {
    let (w, n) = s.split_once(',').ok_or("expected BINW,NBINS")?;
    let bin_width_ps: i64 = w.trim().parse().map_err(|e| format!("bin width: {e}"))?;
    let n_bins: usize = n.trim().parse().map_err(|e| format!("bin count: {e}"))?;
    if bin_width_ps < 1 {
        return Err("bin width must be at least 1 ps".into());
    }
    if n_bins % 2 == 0 {
        return Err("bin count must be odd so the peak has a centre bin".into());
    }
    Ok(HistogramArg { bin_width_ps, n_bins })
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: vqn_core::simulation::SimError| e.to_string())
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e: vqn_core::allocation::AllocationError| e.to_string())
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW_PS)]
    pub window_ps: i64,
    #[arg(long, default_value_t = DEFAULT_BACKGROUND_OFFSET_PS)]
    pub bg_offset_ps: i64,
    #[arg(long, default_value_t = DEFAULT_BACKGROUND_WIDTH_PS)]
    pub bg_width_ps: i64,
    /// Delay histogram around the peak, `BINW,NBINS` with an odd bin count.
    #[arg(long, value_parser = parse_histogram)]
    pub histogram: Option<HistogramArg>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub url: String,
    #[arg(long, default_value_t = 20)]
    pub users: usize,
    #[arg(long, default_value = "50-200")]
    pub interarrival_ms: MsRange,
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "5-50")]
    pub hold_ms: MsRange,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub type CliResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

fn write_out(out: Option<&Path>, bytes: &[u8]) -> std::io::Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes),
        None => std::io::stdout().lock().write_all(bytes),
    }
}

fn to_json_line(v: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

pub async fn serve(args: ServeArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    }
    .apply_env()?;
    if let Some(l) = args.listen {
        cfg.listen = l;
    }
    let listen = cfg.listen.clone();
    let svc = Service::from_config(cfg)?;
    let running = http::spawn(svc, &listen).await?;
    eprintln!("vqn listening on {}", running.url());
    tokio::select! {
        r = running.server => { r??; }
        _ = tokio::signal::ctrl_c() => { eprintln!("shutting down"); }
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> CliResult {
    let bytes = match (args.preset, &args.config) {
        (Some(preset), _) => {
            let out = run_preset(preset, args.seed.unwrap_or(0), args.policy)?;
            let mut buf = Vec::new();
            out.write_to(&mut buf)?;
            if matches!(out, PresetOutput::Single(_)) {
                buf.push(b'\n');
            }
            buf
        }
        (None, Some(path)) => {
            let mut cfg: SimConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(p) = args.policy {
                cfg.policy = p;
            }
            to_json_line(&run(&cfg)?)
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    write_out(args.out.as_deref(), &bytes)?;
    Ok(())
}

pub fn generate(args: GenerateArgs) -> CliResult {
    let mut cfg: SourceConfig = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => testbed_preset(),
    };
    if let Some(d) = args.duration {
        cfg.duration_s = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let meta = StreamMetadata {
        seed: Some(cfg.seed),
        config_hash: cfg.config_hash(),
    };
    let ext = match args.format {
        TagFormat::Vqtt => "vqtt",
        TagFormat::Csv => "csv",
    };
    let mut files = Vec::new();
    for (index, pair) in cfg.pairs.iter().enumerate() {
        let (s, i) = generate_pair(&cfg, index)?;
        for (channel, stream) in [(pair.signal, s), (pair.idler, i)] {
            let path = args.out.join(format!("ch{channel}.{ext}"));
            let stream = stream.with_metadata(meta.clone());
            match args.format {
                TagFormat::Vqtt => write_stream(&stream, &path)?,
                TagFormat::Csv => write_csv(&stream, &path)?,
            }
            eprintln!("wrote {} ({} tags)", path.display(), stream.len());
            files.push(json!({"channel": channel, "path": path, "tags": stream.len()}));
        }
    }
    let summary = json!({
        "duration_s": cfg.duration_s,
        "seed": cfg.seed,
        "config_hash": meta.config_hash,
        "files": files,
    });
    write_out(None, &to_json_line(&summary))?;
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> CliResult {
    let a = read_stream(&args.a)?;
    let b = read_stream(&args.b)?;
    let duration_s = a.duration_s().max(b.duration_s());
    let spec = CoincidenceSpec {
        window_ps: args.window_ps,
        background_offset_ps: args.bg_offset_ps,
        background_width_ps: args.bg_width_ps,
        ..CoincidenceSpec::default()
    };
    let result = coincidence_count(&a, &b, &spec, duration_s)?;
    let mut out = json!({
        "a": args.a,
        "b": args.b,
        "duration_s": duration_s,
        "window_ps": spec.window_ps,
        "background_offset_ps": spec.background_offset_ps,
        "coincidence": result,
    });
    if let Some(h) = args.histogram {
        let range = h.bin_width_ps * (h.n_bins as i64 - 1);
        out["histogram"] = serde_json::to_value(delay_histogram_around(
            &a,
            &b,
            h.bin_width_ps,
            range.max(h.bin_width_ps),
            result.peak_delay_ps,
        )?)?;
    }
    write_out(None, &to_json_line(&out))?;
    Ok(())
}

pub async fn bench(args: BenchArgs) -> CliResult {
    let cfg = BenchConfig {
        interarrival_ms: args.interarrival_ms,
        duration_s: args.duration,
        seed: args.seed,
        hold_ms: args.hold_ms,
        ..BenchConfig::new(&args.url, args.users)
    };
    let report = run_bench(&cfg).await;
    eprintln!(
        "{} requests, {} completed, {} lost, {} failures, p50 {:.1} ms, p99 {:.1} ms",
        report.requests, report.completed, report.lost, report.failures, report.latency.p50_ms, report.latency.p99_ms
    );
    write_out(args.out.as_deref(), &to_json_line(&report))?;
    if report.failures > 0 || report.lost > 0 {
        return Err(format!("{} failures, {} lost requests", report.failures, report.lost).into());
    }
    Ok(())
}

/// Parses `args` and runs the chosen subcommand. Returns the process exit code:
/// 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Generate(a) => generate(a),
        Command::Analyze(a) => analyze(a),
        Command::Serve(a) => runtime().and_then(|rt| rt.block_on(serve(a))),
        Command::Bench(a) => runtime().and_then(|rt| rt.block_on(bench(a))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Box<dyn std::error::Error + Send + Sync>> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}
