//! End-to-end commands: the streaming `watch` pipeline, offline `analyze`,
//! and segment `report`, plus run configuration and the replayable run log.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::detect::{ChangeEvent, ConfigError, Detector, DetectorConfig, Direction};
use crate::ingest::{open_source, Ingest, IngestError, IngestStats, LangPolicy, LineSource, SourceSpec};
use crate::lexicon::{self, Lexicon, LexiconError, LexiconKind, ScoredPost};
use crate::offline::{self, OfflineError, Penalty, ScoreSeries};
use crate::report::{self, Colors, CsvError, Marker, SeriesOverlays, SvgStyle};
use crate::textprep::{self, TokenBag};

pub const DEFAULT_CHANNEL_CAPACITY: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Source(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: CsvError,
    },
    #[error("{path}: line {line}: {reason}")]
    Input { path: String, line: u64, reason: String },
    #[error(transparent)]
    Offline(#[from] OfflineError),
}

impl RunError {
    /// Process exit status for this failure: 2 for source errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Source(_) => 2,
            _ => 1,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_at(path: &Path) -> impl Fn(CsvError) -> RunError + '_ {
    move |source| RunError::Csv {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub path: PathBuf,
    pub kind: LexiconKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmitFlags {
    pub scores_csv: bool,
    pub events_ndjson: bool,
    pub svg: bool,
    /// Token sidecar for later `report` runs; off by default so posts are
    /// discarded after scoring.
    pub tokens: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags {
            scores_csv: true,
            events_ndjson: true,
            svg: false,
            tokens: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub source: SourceSpec,
    pub lexicon: Option<LexiconSpec>,
    pub detector: DetectorConfig,
    pub lang_policy: LangPolicy,
    pub output_dir: PathBuf,
    pub emit: EmitFlags,
    pub channel_capacity: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: SourceSpec::from_arg("-"),
            lexicon: None,
            detector: DetectorConfig::default(),
            lang_policy: LangPolicy::default(),
            output_dir: PathBuf::from("out"),
            emit: EmitFlags::default(),
            channel_capacity: DEFAULT_CHANNEL_CAPACITY,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, RunError> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.detector.validate()?;
        self.source.validate()?;
        if self.lexicon.is_none() {
            return Err(RunError::Config("no lexicon given".to_owned()));
        }
        if self.channel_capacity == 0 {
            return Err(RunError::Config("channel capacity must be at least 1".to_owned()));
        }
        match self.lang_policy {
            LangPolicy::Metadata { threshold } | LangPolicy::Heuristic { threshold }
                if !(0.0..=1.0).contains(&threshold) =>
            {
                Err(RunError::Config(format!("stopword threshold must be in [0, 1], got {threshold}")))
            }
            _ => Ok(()),
        }
    }
}

/// Output file names under the run's output directory.
pub mod files {
    pub const SCORES: &str = "scores.csv";
    pub const EVENTS: &str = "events.ndjson";
    pub const RUNLOG: &str = "runlog.ndjson";
    pub const CONFIG: &str = "config.json";
    pub const TOKENS: &str = "tokens.ndjson";
    pub const SUMMARY: &str = "summary.json";
    pub const SERIES_SVG: &str = "series.svg";
    pub const CUSUM_SVG: &str = "cusum.svg";
    pub const MOVING_AVERAGE: &str = "moving_average.csv";
    pub const HISTOGRAM: &str = "histogram.csv";
    pub const CHANGEPOINTS: &str = "changepoints.csv";
    pub const SEGMENTATION: &str = "segmentation.json";
    pub const COMPARISON: &str = "comparison.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconInfo {
    pub name: String,
    pub kind: LexiconKind,
    pub size: usize,
}

/// One line of `runlog.ndjson`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogEntry {
    Header {
        started_at: DateTime<Utc>,
        lexicon: LexiconInfo,
        config: RunConfig,
    },
    Score {
        seq: u64,
        timestamp: DateTime<Utc>,
        score: i64,
    },
    Event(ChangeEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: RunConfig,
    pub started_at: DateTime<Utc>,
    pub lexicon: LexiconInfo,
    pub scores: Vec<(u64, DateTime<Utc>, i64)>,
    pub events: Vec<ChangeEvent>,
}

impl RunLog {
    pub fn read(path: &Path) -> Result<RunLog, RunError> {
        let file = File::open(path).map_err(io_at(path))?;
        let bad = |line: u64, reason: String| RunError::Input {
            path: path.display().to_string(),
            line,
            reason,
        };
        let mut header = None;
        let mut scores = Vec::new();
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let n = i as u64 + 1;
            let line = line.map_err(io_at(path))?;
            match serde_json::from_str(&line).map_err(|e| bad(n, e.to_string()))? {
                LogEntry::Header {
                    started_at,
                    lexicon,
                    config,
                } if n == 1 => header = Some((started_at, lexicon, config)),
                LogEntry::Header { .. } => return Err(bad(n, "header after first line".to_owned())),
                _ if header.is_none() => return Err(bad(n, "missing header".to_owned())),
                LogEntry::Score { seq, timestamp, score } => scores.push((seq, timestamp, score)),
                LogEntry::Event(ev) => events.push(ev),
            }
        }
        let (started_at, lexicon, config) = header.ok_or_else(|| bad(1, "empty run log".to_owned()))?;
        Ok(RunLog {
            config,
            started_at,
            lexicon,
            scores,
            events,
        })
    }

    /// Events obtained by running a fresh detector over the logged scores.
    pub fn replay(&self) -> Result<Vec<ChangeEvent>, RunError> {
        let mut det = Detector::new(self.config.detector)?;
        Ok(self
            .scores
            .iter()
            .filter_map(|&(_, ts, score)| det.observe(score as f64).map(|a| a.at(ts)))
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WatchSummary {
    pub ingest: IngestStats,
    pub posts_scored: u64,
    pub events_positive: u64,
    pub events_negative: u64,
    pub channel_capacity: usize,
    /// Most posts ever held between the ingest and detect stages, counting
    /// one held by each stage plus those queued.
    pub peak_in_flight: usize,
    pub reset_window: usize,
    pub peak_ring: usize,
    pub interrupted: bool,
    /// Set when the source failed mid-stream; the run still ends cleanly.
    pub source_error: Option<String>,
    pub elapsed_secs: f64,
}

impl WatchSummary {
    pub fn posts_per_sec(&self) -> f64 {
        if self.elapsed_secs > 0.0 {
            self.posts_scored as f64 / self.elapsed_secs
        } else {
            0.0
        }
    }
}

struct Item {
    created_at: DateTime<Utc>,
    bag: TokenBag,
}

enum Stage {
    Item(Item),
    Done {
        stats: IngestStats,
        source_error: Option<String>,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path).map(BufWriter::new).map_err(io_at(path))
}

fn write_json_line<W: Write + ?Sized, T: Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

/// Load the lexicon, open the source and run [`watch_with`].
///
/// Nothing is written to the output directory unless the configuration is
/// valid, the lexicon loads and the source opens.
pub fn watch(config: &RunConfig, stop: Arc<AtomicBool>, events_out: &mut dyn Write) -> Result<WatchSummary, RunError> {
    config.validate()?;
    let spec = config.lexicon.as_ref().expect("validated");
    let (lex, diagnostics) = Lexicon::load(&spec.path, spec.kind)?;
    for d in &diagnostics {
        log::warn!("{}: line {}: {}", spec.path.display(), d.line, d.message);
    }
    let source = open_source(&config.source)?;
    watch_with(config, &lex, source, stop, events_out)
}

/// Single pass ingest → clean → tokenize → score → detect.
///
/// Ingest and text preparation run on their own thread, handing posts to the
/// scoring/detection stage through a bounded channel. Scores and events are
/// streamed to disk as they are produced; each event is also written to
/// `events_out` as one NDJSON line and flushed immediately.
pub fn watch_with(
    config: &RunConfig,
    lex: &Lexicon,
    source: LineSource,
    stop: Arc<AtomicBool>,
    events_out: &mut dyn Write,
) -> Result<WatchSummary, RunError> {
    config.validate()?;
    let started = Instant::now();
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_at(dir))?;

    let config_path = dir.join(files::CONFIG);
    let mut config_file = create(&config_path)?;
    serde_json::to_writer_pretty(&mut config_file, config)
        .map_err(io::Error::from)
        .and_then(|()| config_file.write_all(b"\n"))
        .and_then(|()| config_file.flush())
        .map_err(io_at(&config_path))?;

    let runlog_path = dir.join(files::RUNLOG);
    let mut runlog = create(&runlog_path)?;
    let header = LogEntry::Header {
        started_at: Utc::now(),
        lexicon: LexiconInfo {
            name: lex.name().to_owned(),
            kind: lex.kind(),
            size: lex.len(),
        },
        config: config.clone(),
    };
    write_json_line(&mut runlog, &header).map_err(io_at(&runlog_path))?;

    let scores_path = dir.join(files::SCORES);
    let mut scores = if config.emit.scores_csv {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(create(&scores_path)?);
        w.write_record(["seq", "timestamp", "score"])
            .map_err(|e| io_at(&scores_path)(e.into()))?;
        Some(w)
    } else {
        None
    };
    let events_path = dir.join(files::EVENTS);
    let mut events_file = if config.emit.events_ndjson {
        Some(create(&events_path)?)
    } else {
        None
    };
    let tokens_path = dir.join(files::TOKENS);
    let mut tokens = if config.emit.tokens {
        Some(create(&tokens_path)?)
    } else {
        None
    };

    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak_in_flight = Arc::new(AtomicUsize::new(0));
    let (tx, rx) = mpsc::sync_channel::<Stage>(config.channel_capacity);
    let producer = spawn_ingest(
        source,
        config.lang_policy,
        tx,
        Arc::clone(&stop),
        Arc::clone(&in_flight),
        Arc::clone(&peak_in_flight),
    )
    .map_err(io_at(dir))?;

    let mut detector = Detector::new(config.detector)?;
    let mut summary = WatchSummary {
        channel_capacity: config.channel_capacity,
        reset_window: config.detector.reset_window,
        ..WatchSummary::default()
    };
    let mut finished = false;

    let result = consume(
        &rx,
        &stop,
        &in_flight,
        lex,
        &mut detector,
        &mut summary,
        &mut finished,
        |post, bag, event| {
            if let Some(w) = scores.as_mut() {
                w.write_record([
                    post.seq.to_string(),
                    report::timestamp(&post.created_at),
                    post.score.to_string(),
                ])
                .map_err(|e| io_at(&scores_path)(e.into()))?;
            }
            let entry = LogEntry::Score {
                seq: post.seq,
                timestamp: post.created_at,
                score: post.score,
            };
            write_json_line(&mut runlog, &entry).map_err(io_at(&runlog_path))?;
            if let Some(w) = tokens.as_mut() {
                write_json_line(w, bag).map_err(io_at(&tokens_path))?;
            }
            if let Some(ev) = event {
                write_json_line(&mut runlog, &LogEntry::Event(ev.clone())).map_err(io_at(&runlog_path))?;
                runlog.flush().map_err(io_at(&runlog_path))?;
                if let Some(w) = events_file.as_mut() {
                    write_json_line(w, ev).map_err(io_at(&events_path))?;
                    w.flush().map_err(io_at(&events_path))?;
                }
                write_json_line(events_out, ev)
                    .and_then(|()| events_out.flush())
                    .map_err(io_at(Path::new("<stdout>")))?;
            }
            Ok(())
        },
    );
    drop(rx);
    if finished {
        let _ = producer.join();
    }
    // On interrupt the producer may be blocked on a read; leave it detached.

    summary.peak_in_flight = peak_in_flight.load(Ordering::Relaxed);
    summary.elapsed_secs = started.elapsed().as_secs_f64();

    // Flush whatever was produced, even on error or interrupt.
    if let Some(w) = scores.as_mut() {
        w.flush().map_err(io_at(&scores_path))?;
    }
    runlog.flush().map_err(io_at(&runlog_path))?;
    if let Some(w) = tokens.as_mut() {
        w.flush().map_err(io_at(&tokens_path))?;
    }
    result?;

    let summary_path = dir.join(files::SUMMARY);
    let mut f = create(&summary_path)?;
    serde_json::to_writer_pretty(&mut f, &summary)
        .map_err(io::Error::from)
        .and_then(|()| f.write_all(b"\n"))
        .and_then(|()| f.flush())
        .map_err(io_at(&summary_path))?;

    if config.emit.svg {
        if config.emit.scores_csv {
            render_watch_svgs(dir, &config.detector, SvgStyle::default())?;
        } else {
            log::warn!("svg output needs the scores file; skipping plots");
        }
    }
    Ok(summary)
}

fn spawn_ingest(
    source: LineSource,
    policy: LangPolicy,
    tx: SyncSender<Stage>,
    stop: Arc<AtomicBool>,
    in_flight: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
) -> io::Result<thread::JoinHandle<()>> {
    thread::Builder::new().name("ingest".to_owned()).spawn(move || {
        let mut ingest = Ingest::new(source, policy);
        for record in ingest.by_ref() {
            if stop.load(Ordering::Relaxed) {
                return;
            }
            let now = in_flight.fetch_add(1, Ordering::AcqRel) + 1;
            peak.fetch_max(now, Ordering::AcqRel);
            let item = Item {
                created_at: record.created_at,
                bag: textprep::prepare(&record.text, record.seq),
            };
            if tx.send(Stage::Item(item)).is_err() {
                return;
            }
        }
        let _ = tx.send(Stage::Done {
            stats: ingest.stats().clone(),
            source_error: ingest.source().closed_with_error().map(str::to_owned),
        });
    })
}

#[allow(clippy::too_many_arguments)]
fn consume<F>(
    rx: &Receiver<Stage>,
    stop: &AtomicBool,
    in_flight: &AtomicUsize,
    lex: &Lexicon,
    detector: &mut Detector,
    summary: &mut WatchSummary,
    finished: &mut bool,
    mut sink: F,
) -> Result<(), RunError>
where
    F: FnMut(&ScoredPost, &TokenBag, Option<&ChangeEvent>) -> Result<(), RunError>,
{
    loop {
        if stop.load(Ordering::Relaxed) {
            summary.interrupted = true;
            return Ok(());
        }
        let Ok(stage) = rx.recv() else {
            // Producer vanished without a completion message.
            *finished = true;
            return Ok(());
        };
        match stage {
            Stage::Item(item) => {
                let post = lexicon::score(&item.bag, item.created_at, lex);
                let event = detector.step(&post);
                summary.peak_ring = summary.peak_ring.max(detector.ring_len());
                summary.posts_scored += 1;
                match event.as_ref().map(|e| e.direction) {
                    Some(Direction::Positive) => summary.events_positive += 1,
                    Some(Direction::Negative) => summary.events_negative += 1,
                    None => {}
                }
                let res = sink(&post, &item.bag, event.as_ref());
                in_flight.fetch_sub(1, Ordering::AcqRel);
                res?;
            }
            Stage::Done { stats, source_error } => {
                if let Some(e) = &source_error {
                    log::warn!("source closed mid-stream: {e}");
                }
                summary.ingest = stats;
                summary.source_error = source_error;
                *finished = true;
                return Ok(());
            }
        }
    }
}

fn read_scores(path: &Path) -> Result<ScoreSeries, RunError> {
    let file = File::open(path).map_err(io_at(path))?;
    report::import_series_csv(BufReader::new(file)).map_err(|e| match e {
        CsvError::Malformed { line, reason } => RunError::Input {
            path: path.display().to_string(),
            line,
            reason,
        },
        other => csv_at(path)(other),
    })
}

/// `series.svg` and `cusum.svg` for a finished watch run, recomputed from
/// the scores file so the stream itself never has to be retained.
fn render_watch_svgs(dir: &Path, detector: &DetectorConfig, style: SvgStyle) -> Result<(), RunError> {
    let series = read_scores(&dir.join(files::SCORES))?;
    let mut det = Detector::new(*detector)?;
    let mut decisions = Vec::with_capacity(series.len());
    let mut marks = Vec::new();
    for &y in series.values() {
        let alarm = det.observe(y);
        decisions.push(det.last_decision());
        if let Some(a) = alarm {
            marks.push(Marker::Event {
                index: a.index,
                direction: a.direction,
            });
        }
    }
    let overlays = SeriesOverlays {
        moving_average: None,
        markers: marks.clone(),
    };
    write_text(
        &dir.join(files::SERIES_SVG),
        &report::render_series(series.values(), &overlays, &style, "sentiment score"),
    )?;
    write_text(
        &dir.join(files::CUSUM_SVG),
        &report::render_cusum(&decisions, detector.h, &marks, &style, "CUSUM decision functions"),
    )
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io_at(path))
}

pub fn read_events(path: &Path) -> Result<Vec<ChangeEvent>, RunError> {
    let file = File::open(path).map_err(io_at(path))?;
    let mut events: Vec<ChangeEvent> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i as u64 + 1;
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: ChangeEvent = serde_json::from_str(&line).map_err(|e| RunError::Input {
            path: path.display().to_string(),
            line: n,
            reason: e.to_string(),
        })?;
        if events.last().is_some_and(|prev| prev.index > ev.index) {
            return Err(RunError::Input {
                path: path.display().to_string(),
                line: n,
                reason: "events are not sorted by index".to_owned(),
            });
        }
        events.push(ev);
    }
    Ok(events)
}

pub fn read_tokens(path: &Path) -> Result<Vec<TokenBag>, RunError> {
    let file = File::open(path).map_err(io_at(path))?;
    let mut bags = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        bags.push(serde_json::from_str(&line).map_err(|e| RunError::Input {
            path: path.display().to_string(),
            line: i as u64 + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(bags)
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub scores: PathBuf,
    pub events: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub window: usize,
    pub bin_width: f64,
    pub penalty: Penalty,
    /// Defaults to the number of online events when an events file is given,
    /// otherwise [`AnalyzeOptions::DEFAULT_MAX_CP`].
    pub max_changepoints: Option<usize>,
    pub tolerance: u64,
    pub style: SvgStyle,
}

impl AnalyzeOptions {
    pub const DEFAULT_WINDOW: usize = 200;
    pub const DEFAULT_MAX_CP: usize = 5;
    pub const DEFAULT_TOLERANCE: u64 = 300;

    pub fn new(scores: PathBuf, output_dir: PathBuf) -> AnalyzeOptions {
        AnalyzeOptions {
            scores,
            events: None,
            output_dir,
            window: Self::DEFAULT_WINDOW,
            bin_width: 1.0,
            penalty: Penalty::Default,
            max_changepoints: None,
            tolerance: Self::DEFAULT_TOLERANCE,
            style: SvgStyle::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeSummary {
    pub samples: usize,
    pub max_changepoints: usize,
    pub segmentation: Option<offline::SegmentationResult>,
    pub comparison: Option<offline::MatchReport>,
}

pub fn analyze(opts: &AnalyzeOptions) -> Result<AnalyzeSummary, RunError> {
    let series = read_scores(&opts.scores)?;
    let events = opts.events.as_deref().map(read_events).transpose()?;
    if opts.window == 0 {
        return Err(RunError::Config("window must be at least 1".to_owned()));
    }
    if !(opts.bin_width.is_finite() && opts.bin_width > 0.0) {
        return Err(RunError::Config(format!("bin width must be positive, got {}", opts.bin_width)));
    }
    let q = opts
        .max_changepoints
        .unwrap_or_else(|| events.as_ref().map_or(AnalyzeOptions::DEFAULT_MAX_CP, Vec::len));

    let dir = &opts.output_dir;
    fs::create_dir_all(dir).map_err(io_at(dir))?;

    let ma = offline::moving_average(&series, opts.window)?;
    let path = dir.join(files::MOVING_AVERAGE);
    report::export_moving_average_csv(&path, &ma).map_err(csv_at(&path))?;

    let bins = offline::histogram(&series, opts.bin_width)?;
    let path = dir.join(files::HISTOGRAM);
    report::export_histogram_csv(&path, &bins).map_err(csv_at(&path))?;

    let segmentation = if series.len() >= 2 {
        let seg = offline::segment(series.values(), opts.penalty, q)?;
        let path = dir.join(files::CHANGEPOINTS);
        report::export_changepoints_csv(&path, &seg, &series).map_err(csv_at(&path))?;
        write_json(&dir.join(files::SEGMENTATION), &seg)?;
        Some(seg)
    } else {
        log::warn!("{} samples: too few to segment", series.len());
        None
    };

    let comparison = match (&events, &segmentation) {
        (Some(evs), Some(seg)) => {
            let cmp = offline::compare(evs, seg, opts.tolerance);
            write_json(&dir.join(files::COMPARISON), &cmp)?;
            Some(cmp)
        }
        _ => None,
    };

    if !series.is_empty() {
        let mut markers: Vec<Marker> = events
            .iter()
            .flatten()
            .map(|e| Marker::Event {
                index: e.index,
                direction: e.direction,
            })
            .collect();
        markers.extend(
            segmentation
                .iter()
                .flat_map(|s| &s.changepoints)
                .map(|&c| Marker::Offline { index: c as u64 }),
        );
        let overlays = SeriesOverlays {
            moving_average: Some(&ma.values),
            markers,
        };
        let title = format!("sentiment score, moving average (w={})", opts.window);
        write_text(
            &dir.join(files::SERIES_SVG),
            &report::render_series(series.values(), &overlays, &opts.style, &title),
        )?;
    }

    Ok(AnalyzeSummary {
        samples: series.len(),
        max_changepoints: q,
        segmentation,
        comparison,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)
        .map_err(io::Error::from)
        .and_then(|()| f.write_all(b"\n"))
        .and_then(|()| f.flush())
        .map_err(io_at(path))
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub scores: PathBuf,
    pub events: PathBuf,
    pub tokens: PathBuf,
    pub output_dir: PathBuf,
    pub top_k: usize,
    pub colors: Colors,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub label: String,
    pub start_index: usize,
    pub end_index: usize,
    pub ranking_csv: PathBuf,
    pub chart_svg: PathBuf,
}

/// Split the run at its change events and rank each segment's vocabulary.
pub fn report(opts: &ReportOptions) -> Result<Vec<SegmentReport>, RunError> {
    let series = read_scores(&opts.scores)?;
    let events = read_events(&opts.events)?;
    let bags = read_tokens(&opts.tokens)?;
    if bags.len() != series.len() {
        return Err(RunError::Config(format!(
            "{} has {} posts but {} has {} scores",
            opts.tokens.display(),
            bags.len(),
            opts.scores.display(),
            series.len()
        )));
    }

    let dir = &opts.output_dir;
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let style = SvgStyle {
        colors: opts.colors.clone(),
        ..SvgStyle::default()
    };

    let segments = report::split_by_events(&bags, &events);
    let mut out = Vec::with_capacity(segments.len());
    for (i, seg) in segments.iter().enumerate() {
        let ranking = report::tfidf_rank(seg, &segments, opts.top_k);
        let csv_path = dir.join(format!("segment_{}_terms.csv", i + 1));
        report::export_ranking_csv(&csv_path, &ranking).map_err(csv_at(&csv_path))?;
        let color = segment_color(&events, seg.start_index, &style.colors);
        let svg_path = dir.join(format!("segment_{}_terms.svg", i + 1));
        write_text(&svg_path, &report::render_bar_chart(&ranking, &style, color, &seg.label))?;
        out.push(SegmentReport {
            label: seg.label.clone(),
            start_index: seg.start_index,
            end_index: seg.end_index,
            ranking_csv: csv_path,
            chart_svg: svg_path,
        });
    }

    let overlays = SeriesOverlays {
        moving_average: None,
        markers: events
            .iter()
            .map(|e| Marker::Event {
                index: e.index,
                direction: e.direction,
            })
            .collect(),
    };
    write_text(
        &dir.join(files::SERIES_SVG),
        &report::render_series(series.values(), &overlays, &style, "sentiment score with detected changes"),
    )?;
    Ok(out)
}

/// Bars take the color of the change that opened the segment; the first
/// segment uses the neutral series color.
fn segment_color<'a>(events: &[ChangeEvent], start: usize, colors: &'a Colors) -> &'a str {
    match events.iter().find(|e| e.index as usize == start).map(|e| e.direction) {
        Some(Direction::Positive) => &colors.positive,
        Some(Direction::Negative) => &colors.negative,
        None => "#777777",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn lexicon() -> Lexicon {
        Lexicon::from_entries("t", LexiconKind::Binary, [("good", 1), ("bad", -1)]).unwrap()
    }

    fn config(dir: &Path) -> RunConfig {
        RunConfig {
            lexicon: Some(LexiconSpec {
                path: PathBuf::from("unused.tsv"),
                kind: LexiconKind::Binary,
            }),
            output_dir: dir.to_path_buf(),
            lang_policy: LangPolicy::Off,
            channel_capacity: 4,
            ..RunConfig::default()
        }
    }

    fn feed(lines: &[String]) -> LineSource {
        LineSource::from_reader(Cursor::new(lines.join("\n").into_bytes()))
    }

    fn post(i: usize, text: &str) -> String {
        format!(r#"{{"created_at":"2018-03-15T00:00:{:02}Z","text":"{text}"}}"#, i % 60)
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"lexicon":{"path":"x.tsv","kind":"scored"}}"#).unwrap();
        assert_eq!(cfg.detector, DetectorConfig::default());
        assert_eq!(cfg.channel_capacity, DEFAULT_CHANNEL_CAPACITY);
        assert!(cfg.emit.scores_csv && !cfg.emit.tokens);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::default().validate().is_err());
    }

    #[test]
    fn watch_streams_scores_and_events() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.detector.h = 2.0;
        cfg.detector.reset_window = 3;
        let lines: Vec<String> = (0..20).map(|i| post(i, if i < 10 { "bad" } else { "good good" })).collect();
        let mut stdout = Vec::new();
        let summary = watch_with(&cfg, &lexicon(), feed(&lines), Arc::new(AtomicBool::new(false)), &mut stdout).unwrap();
        assert_eq!(summary.posts_scored, 20);
        assert!(summary.events_positive >= 1);
        let printed = String::from_utf8(stdout).unwrap();
        let file = fs::read_to_string(dir.path().join(files::EVENTS)).unwrap();
        assert_eq!(printed, file);
        let scores = fs::read_to_string(dir.path().join(files::SCORES)).unwrap();
        assert_eq!(scores.lines().count(), 21);
        assert!(scores.starts_with("seq,timestamp,score\r\n0,2018-03-15T00:00:00Z,-1\r\n"));

        let log = RunLog::read(&dir.path().join(files::RUNLOG)).unwrap();
        assert_eq!(log.scores.len(), 20);
        assert_eq!(log.replay().unwrap(), log.events);
        assert_eq!(log.lexicon.size, 2);
        assert!(summary.peak_in_flight <= cfg.channel_capacity + 2);
        assert!(summary.peak_ring <= cfg.detector.reset_window);
    }

    #[test]
    fn interrupt_flushes_and_returns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path());
        let lines: Vec<String> = (0..50).map(|i| post(i, "good")).collect();
        let summary = watch_with(&cfg, &lexicon(), feed(&lines), Arc::new(AtomicBool::new(true)), &mut io::sink()).unwrap();
        assert!(summary.interrupted);
        let log = RunLog::read(&dir.path().join(files::RUNLOG)).unwrap();
        assert_eq!(log.scores.len() as u64, summary.posts_scored);
    }

    #[test]
    fn runlog_rejects_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log");
        fs::write(&p, "{\"type\":\"score\",\"seq\":0,\"timestamp\":\"2018-01-01T00:00:00Z\",\"score\":1}\n").unwrap();
        assert!(matches!(RunLog::read(&p), Err(RunError::Input { line: 1, .. })));
    }

    #[test]
    fn unsorted_events_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e");
        let ev = |i| {
            serde_json::to_string(&ChangeEvent {
                index: i,
                timestamp: Utc::now(),
                direction: Direction::Positive,
                theta0_before: 0.0,
                theta0_after: 0.0,
                g_at_alarm: 1.0,
            })
            .unwrap()
        };
        fs::write(&p, format!("{}\n{}\n", ev(5), ev(2))).unwrap();
        assert!(matches!(read_events(&p), Err(RunError::Input { line: 2, .. })));
    }
}
