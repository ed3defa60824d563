use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use driftwatch_core::detect::{estimate_arl, DetectorConfig};
use driftwatch_core::ingest::{LangPolicy, SourceSpec, DEFAULT_STOPWORD_FRACTION};
use driftwatch_core::lexicon::LexiconKind;
use driftwatch_core::offline::Penalty;
use driftwatch_core::report::{Colors, SvgStyle};
use driftwatch_core::run::{self, AnalyzeOptions, LexiconSpec, ReportOptions, RunConfig, RunError};

#[derive(Parser, Debug)]
#[command(name = "driftwatch", version, about = "Online sentiment change detection for post streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score a post stream and report sentiment changes as they happen.
    Watch(WatchArgs),
    /// Offline moving average, histogram and changepoint segmentation of a scores file.
    Analyze(AnalyzeArgs),
    /// Per-segment TF-IDF term rankings and annotated plots for a finished run.
    Report(ReportArgs),
    /// Monte Carlo average run length of the two-sided detector.
    Arl(ArlArgs),
}

#[derive(Args, Debug, Default)]
struct DetectorArgs {
    /// Initial pre-change mean.
    #[arg(long, allow_negative_numbers = true)]
    theta0: Option<f64>,
    /// Change magnitude.
    #[arg(long)]
    delta: Option<f64>,
    /// Noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Alarm threshold h.
    #[arg(long)]
    threshold: Option<f64>,
    /// Observations averaged to re-estimate the mean after an alarm.
    #[arg(long)]
    reset_window: Option<usize>,
}

impl DetectorArgs {
    fn apply(&self, cfg: &mut DetectorConfig) {
        if let Some(v) = self.theta0 {
            cfg.theta0_init = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.threshold {
            cfg.h = v;
        }
        if let Some(v) = self.reset_window {
            cfg.reset_window = v;
        }
    }
}

#[derive(Args, Debug)]
struct WatchArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, env = "DRIFTWATCH_CONFIG")]
    config: Option<PathBuf>,
    /// NDJSON source: a file, `-` for stdin, or tcp://host:port.
    #[arg(long)]
    source: Option<String>,
    /// Replay throttle in posts per second.
    #[arg(long)]
    replay_rate: Option<f64>,
    #[arg(long, value_parser = ["metadata", "heuristic", "off"])]
    lang_policy: Option<String>,
    /// Minimum stopword fraction for the language heuristic.
    #[arg(long)]
    stopword_threshold: Option<f64>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    lexicon_kind: Option<LexiconKind>,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Bound on posts queued between the ingest and detection stages.
    #[arg(long)]
    channel_capacity: Option<usize>,
    /// Write series.svg and cusum.svg at the end of the run.
    #[arg(long)]
    svg: bool,
    /// Keep token bags in tokens.ndjson for a later `report`.
    #[arg(long)]
    tokens: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Scores CSV with `timestamp` and `score` (or `value`) columns.
    scores: PathBuf,
    /// Online events to compare against the offline changepoints.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long, default_value = "analysis")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = AnalyzeOptions::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    /// Per-changepoint penalty, or `default` for 2·ln(n).
    #[arg(long, default_value = "default")]
    penalty: Penalty,
    /// Maximum number of changepoints; defaults to the number of events if
    /// given, else 5.
    #[arg(long)]
    max_cp: Option<usize>,
    /// Matching tolerance in samples.
    #[arg(long, default_value_t = AnalyzeOptions::DEFAULT_TOLERANCE)]
    tolerance: u64,
    /// Marker colors as pos,neg,offline.
    #[arg(long, value_parser = Colors::parse)]
    colors: Option<Colors>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    scores: PathBuf,
    events: PathBuf,
    /// Token sidecar written by `watch --tokens`.
    tokens: PathBuf,
    #[arg(long, default_value = "report")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 30)]
    top_k: usize,
    #[arg(long, value_parser = Colors::parse)]
    colors: Option<Colors>,
}

#[derive(Args, Debug)]
struct ArlArgs {
    #[command(flatten)]
    detector: DetectorArgs,
    /// True mean of the simulated stream; defaults to theta0 (in-control ARL).
    #[arg(long, allow_negative_numbers = true)]
    mean: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    /// Runs without an alarm are censored at this length.
    #[arg(long, default_value_t = 1_000_000)]
    max_len: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn watch_config(args: &WatchArgs) -> Result<RunConfig, RunError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(src) = &args.source {
        let rate = cfg.source.replay_rate;
        cfg.source = SourceSpec::from_arg(src);
        cfg.source.replay_rate = rate;
    }
    if args.replay_rate.is_some() {
        cfg.source.replay_rate = args.replay_rate;
    }
    if let Some(name) = &args.lang_policy {
        let threshold = args.stopword_threshold.unwrap_or(DEFAULT_STOPWORD_FRACTION);
        cfg.lang_policy = LangPolicy::parse(name, threshold).map_err(RunError::Config)?;
    } else if let Some(t) = args.stopword_threshold {
        cfg.lang_policy = cfg.lang_policy.with_threshold(t);
    }
    if let Some(path) = &args.lexicon {
        let kind = args
            .lexicon_kind
            .or(cfg.lexicon.as_ref().map(|l| l.kind))
            .unwrap_or(LexiconKind::Binary);
        cfg.lexicon = Some(LexiconSpec {
            path: path.clone(),
            kind,
        });
    } else if let (Some(kind), Some(lex)) = (args.lexicon_kind, cfg.lexicon.as_mut()) {
        lex.kind = kind;
    }
    args.detector.apply(&mut cfg.detector);
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(c) = args.channel_capacity {
        cfg.channel_capacity = c;
    }
    cfg.emit.svg |= args.svg;
    cfg.emit.tokens |= args.tokens;
    Ok(cfg)
}

fn cmd_watch(args: &WatchArgs) -> Result<(), RunError> {
    let cfg = watch_config(args)?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
    }) {
        log::warn!("cannot install interrupt handler: {e}");
    }

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let summary = run::watch(&cfg, stop, &mut out)?;
    let s = &summary.ingest;
    eprintln!(
        "{} lines, {} accepted, {} malformed, {} rejected by language; {} scored; events: {} positive, {} negative{}",
        s.lines,
        s.accepted,
        s.parse_errors,
        s.rejected_language,
        summary.posts_scored,
        summary.events_positive,
        summary.events_negative,
        if summary.interrupted { " (interrupted)" } else { "" }
    );
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), RunError> {
    let mut opts = AnalyzeOptions::new(args.scores.clone(), args.output_dir.clone());
    opts.events = args.events.clone();
    opts.window = args.window;
    opts.bin_width = args.bin_width;
    opts.penalty = args.penalty;
    opts.max_changepoints = args.max_cp;
    opts.tolerance = args.tolerance;
    if let Some(c) = &args.colors {
        opts.style = SvgStyle {
            colors: c.clone(),
            ..SvgStyle::default()
        };
    }
    let summary = run::analyze(&opts)?;
    let cps = summary
        .segmentation
        .as_ref()
        .map(|s| s.changepoints.clone())
        .unwrap_or_default();
    eprintln!("{} samples, changepoints {:?}", summary.samples, cps);
    if let Some(cmp) = &summary.comparison {
        eprintln!(
            "{} matched, {} online only, {} offline only",
            cmp.matched.len(),
            cmp.online_only.len(),
            cmp.offline_only.len()
        );
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), RunError> {
    let segments = run::report(&ReportOptions {
        scores: args.scores.clone(),
        events: args.events.clone(),
        tokens: args.tokens.clone(),
        output_dir: args.output_dir.clone(),
        top_k: args.top_k,
        colors: args.colors.clone().unwrap_or_default(),
    })?;
    for s in &segments {
        eprintln!("{} -> {}", s.label, s.ranking_csv.display());
    }
    Ok(())
}

fn cmd_arl(args: &ArlArgs) -> Result<(), RunError> {
    let mut cfg = DetectorConfig::default();
    args.detector.apply(&mut cfg);
    let mean = args.mean.unwrap_or(cfg.theta0_init);
    let est = estimate_arl(cfg, mean, args.runs, args.max_len, args.seed)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, &est)
        .map_err(io::Error::from)
        .and_then(|()| writeln!(out))
        .map_err(|source| RunError::Io {
            path: "<stdout>".to_owned(),
            source,
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Watch(a) => cmd_watch(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
        Command::Arl(a) => cmd_arl(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
