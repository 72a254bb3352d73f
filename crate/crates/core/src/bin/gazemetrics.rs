use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gazemetrics::metrics::FirstPassMode;
use gazemetrics::model::{LayoutManifest, ScreenModel};
use gazemetrics::oracle;
use gazemetrics::server::{self, ServerConfig};
use gazemetrics::session::LoadedSession;
use gazemetrics::toolkit::bench::{run_bench, synthetic_input, BenchOptions};
use gazemetrics::toolkit::compare::compare_csv;
use gazemetrics::toolkit::gazelog::{read_gazelog_file, write_gazelog};
use gazemetrics::toolkit::replay::{replay, ReplayOptions};
use gazemetrics::toolkit::simulate::{simulate_reading, synthetic_layout, LayoutParams, ReadingProfile};

#[derive(Parser)]
#[command(name = "gazemetrics", version, about = "Real-time reading metrics from eye-tracking gaze streams")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the WebSocket server
    Serve(ServeArgs),
    /// Send a recorded gaze log to a running server
    Replay(ReplayArgs),
    /// Generate a synthetic layout and/or reading gaze log
    Simulate(SimulateArgs),
    /// Recompute metrics offline by brute force
    Oracle(OracleArgs),
    /// Compare two metrics exports
    Compare(CompareArgs),
    /// Measure per-sample processing latency
    Bench(BenchArgs),
    /// Re-export the metrics CSV of a session file
    Export(ExportArgs),
}

/// Analysis settings; flags override the `--config` file.
#[derive(Args, Clone, Default)]
struct Settings {
    /// TOML file with server/session settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Velocity threshold, deg/s
    #[arg(long)]
    threshold: Option<f64>,
    /// Velocity window, samples
    #[arg(long)]
    window: Option<usize>,
    /// strict | first_visit
    #[arg(long)]
    first_pass_mode: Option<FirstPassMode>,
    /// Flush cadence, seconds
    #[arg(long)]
    flush_interval: Option<f64>,
    /// Minimum fixation duration, ms (0 = off)
    #[arg(long)]
    min_fixation_ms: Option<f64>,
    /// Gap that resets classification, ms
    #[arg(long)]
    max_gap_ms: Option<f64>,
}

impl Settings {
    fn resolve(&self) -> Result<ServerConfig> {
        let mut cfg: ServerConfig = match &self.config {
            Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => ServerConfig::default(),
        };
        let s = &mut cfg.session;
        if let Some(v) = self.threshold {
            s.ivt.threshold_dps = v;
        }
        if let Some(v) = self.window {
            s.ivt.window_samples = v;
        }
        if let Some(v) = self.first_pass_mode {
            s.first_pass_mode = v;
        }
        if let Some(v) = self.flush_interval {
            s.flush.interval_us = (v * 1e6).round() as i64;
        }
        if let Some(v) = self.min_fixation_ms {
            s.ivt.min_fixation_us = (v * 1e3).round() as i64;
        }
        if let Some(v) = self.max_gap_ms {
            s.ivt.max_gap_us = (v * 1e3).round() as i64;
        }
        s.ivt.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        if s.flush.interval_us <= 0 {
            bail!("flush interval must be > 0");
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    /// Directory for session files
    #[arg(long)]
    store: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "ws://127.0.0.1:8765")]
    url: String,
    /// Time scale; 0 = as fast as possible
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long)]
    session: Option<String>,
    #[arg(long, default_value = "")]
    participant: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// Read this layout instead of generating one
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    words: usize,
    #[arg(long, default_value_t = 3)]
    paragraphs: usize,
    #[arg(long, default_value_t = 1)]
    layout_seed: u64,
    /// Where to write the generated layout
    #[arg(long)]
    out_manifest: Option<PathBuf>,
    /// Where to write the gaze log
    #[arg(long)]
    out_log: Option<PathBuf>,
    #[arg(long, default_value_t = 300.0)]
    rate: f64,
    #[arg(long, default_value_t = 220.0)]
    fix_mean_ms: f64,
    #[arg(long, default_value_t = 60.0)]
    fix_sd_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    p_skip: f64,
    #[arg(long, default_value_t = 0.0)]
    p_regress: f64,
    /// Word indices followed by a forced regression
    #[arg(long, value_delimiter = ',')]
    regress_at: Vec<usize>,
    /// Positional noise sigma, px
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long)]
    geometry_3d: bool,
    #[arg(long, default_value_t = 1)]
    passes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct OracleArgs {
    /// Session file (JSONL)
    #[arg(long, conflicts_with = "log")]
    session: Option<PathBuf>,
    /// Gaze log (CSV), read through an identity viewport
    #[arg(long, requires = "manifest")]
    log: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Fail (exit 1) if a defined correlation is below this
    #[arg(long)]
    min_rho: Option<f64>,
    /// Fail (exit 1) if a MAE exceeds this (ms)
    #[arg(long)]
    max_mae: Option<f64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, requires = "manifest")]
    log: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Synthetic page size when no log is given
    #[arg(long, default_value_t = 1000)]
    words: usize,
    /// Minimum synthetic sample count when no log is given
    #[arg(long, default_value_t = 150_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stalled viewers attached during the run
    #[arg(long, default_value_t = 0)]
    viewers: usize,
    #[arg(long, default_value_t = 833.0)]
    budget_us: f64,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    session: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a checked condition, as opposed to bad input.
#[derive(Debug)]
struct AssertionFailed(String);

impl std::fmt::Display for AssertionFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for AssertionFailed {}

fn read_manifest(p: &Path) -> Result<LayoutManifest> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let m = LayoutManifest::from_json(&text).with_context(|| format!("parsing {}", p.display()))?;
    m.validate().with_context(|| format!("validating {}", p.display()))?;
    Ok(m)
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = a.settings.resolve()?;
    if a.store.is_some() {
        cfg.store_dir = a.store;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = server::start(&format!("{}:{}", a.host, a.port), cfg).await?;
        eprintln!("listening on {}", handle.url());
        tokio::signal::ctrl_c().await?;
        eprintln!("shutting down; ending open sessions");
        handle.shutdown().await;
        Ok(())
    })
}

fn run_replay(a: ReplayArgs) -> Result<()> {
    let samples = read_gazelog_file(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let manifest = a.manifest.as_deref().map(read_manifest).transpose()?;
    let opts = ReplayOptions {
        url: a.url,
        speed: a.speed,
        session: a.session,
        participant: a.participant,
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    let stats = rt.block_on(replay(&samples, manifest.as_ref(), &opts, None))?;
    eprintln!(
        "sent {} samples spanning {:.3} s in {:.3} s",
        stats.samples_sent,
        stats.log_span_us as f64 / 1e6,
        stats.wall.as_secs_f64()
    );
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let layout = match &a.manifest {
        Some(p) => read_manifest(p)?,
        None => synthetic_layout(&LayoutParams {
            words: a.words,
            paragraphs: a.paragraphs,
            seed: a.layout_seed,
            ..Default::default()
        }),
    };
    for (name, p) in [("p-skip", a.p_skip), ("p-regress", a.p_regress), ("dropout", a.dropout)] {
        if !(0.0..=1.0).contains(&p) {
            bail!("--{name} must be within [0, 1]");
        }
    }
    if a.rate.is_nan()
        || a.rate <= 0.0
        || a.noise.is_nan()
        || a.noise < 0.0
        || a.fix_sd_ms.is_nan()
        || a.fix_sd_ms < 0.0
    {
        bail!("--rate must be > 0; --noise and --fix-sd-ms must be >= 0");
    }
    if let Some(p) = &a.out_manifest {
        fs::write(p, serde_json::to_string_pretty(&layout)?).with_context(|| format!("writing {}", p.display()))?;
    }
    let profile = ReadingProfile {
        rate_hz: a.rate,
        fixation_mean_ms: a.fix_mean_ms,
        fixation_sd_ms: a.fix_sd_ms,
        p_skip: a.p_skip,
        p_regress: a.p_regress,
        regress_at: a.regress_at,
        noise_px: a.noise,
        p_dropout: a.dropout,
        geometry_3d: a.geometry_3d,
        passes: a.passes,
        seed: a.seed,
        ..Default::default()
    };
    let sim = simulate_reading(&layout, &profile, &ScreenModel::default());
    let mut buf = Vec::new();
    write_gazelog(&mut buf, &sim.samples)?;
    write_out(a.out_log.as_deref(), std::str::from_utf8(&buf)?)?;
    eprintln!("{} samples, {} planned fixations", sim.samples.len(), sim.planned.len());
    Ok(())
}

fn run_oracle(a: OracleArgs) -> Result<()> {
    let cfg = a.settings.resolve()?.session;
    let csv = match (&a.session, &a.log) {
        (Some(s), _) => {
            let (out, manifest) = oracle::run_session_file(s, &cfg)?;
            out.csv(manifest.as_ref())
        }
        (None, Some(l)) => {
            let samples = read_gazelog_file(l).with_context(|| format!("reading {}", l.display()))?;
            let manifest = read_manifest(a.manifest.as_deref().expect("required by clap"))?;
            oracle::run_log(&samples, Some(&manifest), &cfg)?.csv(Some(&manifest))
        }
        (None, None) => bail!("give --session or --log with --manifest"),
    };
    write_out(a.out.as_deref(), &csv)
}

fn compare(a: CompareArgs) -> Result<()> {
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let report = compare_csv(&read(&a.a)?, &read(&a.b)?)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    let bad = report.violations(a.min_rho, a.max_mae);
    if !bad.is_empty() {
        return Err(AssertionFailed(bad.join("; ")).into());
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = a.settings.resolve()?;
    let (manifest, samples) = match &a.log {
        Some(l) => (
            read_manifest(a.manifest.as_deref().expect("required by clap"))?,
            read_gazelog_file(l).with_context(|| format!("reading {}", l.display()))?,
        ),
        None => synthetic_input(a.words, a.samples, a.seed),
    };
    let opts = BenchOptions { stalled_viewers: a.viewers, viewer_buffer: cfg.viewer_buffer, budget_us: a.budget_us };
    let report = run_bench(&samples, &manifest, cfg.session, opts)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    if !report.within_budget {
        return Err(AssertionFailed(format!(
            "mean {:.3} us exceeds budget {:.0} us",
            report.stats.mean_us, report.budget_us
        ))
        .into());
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let loaded = LoadedSession::from_path(&a.session).with_context(|| format!("loading {}", a.session.display()))?;
    if loaded.truncated_tail {
        eprintln!("note: dropped an incomplete final line");
    }
    write_out(a.out.as_deref(), &loaded.metrics_csv()?)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Serve(a) => serve(a),
        Cmd::Replay(a) => run_replay(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Oracle(a) => run_oracle(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Bench(a) => bench(a),
        Cmd::Export(a) => export(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<AssertionFailed>() => {
            eprintln!("FAIL: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
