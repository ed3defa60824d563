//! Post ingestion: NDJSON sources, record parsing and language filtering.
//!
//! A [`LineSource`] yields raw lines in arrival order from a file, standard
//! input or a TCP endpoint. [`Ingest`] turns those lines into accepted
//! [`TweetRecord`]s, skipping malformed and filtered lines and counting each
//! rejection under exactly one reason. At most one line is held in memory at
//! a time.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::net::TcpStream;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::textprep;

/// Maximum number of parse diagnostics retained; later ones are only counted.
pub const MAX_DIAGNOSTICS: usize = 100;

/// Default minimum stopword fraction for the heuristic language check.
pub const DEFAULT_STOPWORD_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    /// Position among accepted records, assigned by [`Ingest`].
    pub seq: u64,
    pub created_at: DateTime<Utc>,
    pub text: String,
    pub lang: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    FileReplay,
    Stdin,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// File path for replay, ignored for stdin, `tcp://host:port` for live.
    #[serde(default)]
    pub location: String,
    /// Posts per second for throttled replay; `None` replays as fast as possible.
    #[serde(default)]
    pub replay_rate: Option<f64>,
}

impl SourceSpec {
    /// Interpret a `--source` argument: `-` is stdin, `tcp://...` is live, anything else a file.
    pub fn from_arg(arg: &str) -> SourceSpec {
        let kind = if arg == "-" {
            SourceKind::Stdin
        } else if arg.contains("://") {
            SourceKind::Live
        } else {
            SourceKind::FileReplay
        };
        SourceSpec {
            kind,
            location: arg.to_owned(),
            replay_rate: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if let Some(rate) = self.replay_rate {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(IngestError::InvalidRate(rate));
            }
        }
        match self.kind {
            SourceKind::FileReplay if self.location.is_empty() => Err(IngestError::Unreadable {
                path: String::new(),
                source: io::Error::new(io::ErrorKind::NotFound, "no path given"),
            }),
            SourceKind::Live => parse_endpoint(&self.location).map(|_| ()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot open source {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed endpoint `{0}` (expected tcp://host:port)")]
    MalformedEndpoint(String),
    #[error("cannot connect to {endpoint}: {source}")]
    Connect {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("replay rate must be a positive number, got {0}")]
    InvalidRate(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("line is not valid UTF-8")]
    NotUtf8,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("missing mandatory field `{0}`")]
    MissingField(&'static str),
    #[error("unparseable created_at `{0}`")]
    BadTimestamp(String),
}

#[derive(Deserialize)]
struct RawRecord {
    created_at: Option<String>,
    text: Option<String>,
    lang: Option<String>,
}

/// Parse one NDJSON line. The returned record has `seq == 0`; sequence
/// numbers are assigned on acceptance by [`Ingest`].
pub fn parse_record(line: &str) -> Result<TweetRecord, ParseError> {
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| ParseError::InvalidJson(e.to_string()))?;
    let created_at = raw
        .created_at
        .ok_or(ParseError::MissingField("created_at"))?;
    let text = raw.text.ok_or(ParseError::MissingField("text"))?;
    Ok(TweetRecord {
        seq: 0,
        created_at: parse_timestamp(&created_at)?,
        text,
        lang: raw.lang.filter(|l| !l.is_empty()),
    })
}

pub fn parse_record_bytes(line: &[u8]) -> Result<TweetRecord, ParseError> {
    let line = std::str::from_utf8(line).map_err(|_| ParseError::NotUtf8)?;
    parse_record(line)
}

/// RFC 3339, falling back to the classic Twitter API form
/// `Thu Mar 15 23:59:29 +0000 2018`.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, ParseError> {
    DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y"))
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| ParseError::BadTimestamp(s.to_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum LangPolicy {
    /// Trust the `lang` tag; untagged posts fall back to the stopword heuristic.
    Metadata {
        threshold: f64,
    },
    /// Ignore `lang`; require a minimum fraction of English stopword tokens.
    Heuristic {
        threshold: f64,
    },
    Off,
}

impl Default for LangPolicy {
    fn default() -> Self {
        LangPolicy::Metadata {
            threshold: DEFAULT_STOPWORD_FRACTION,
        }
    }
}

impl LangPolicy {
    pub fn parse(name: &str, threshold: f64) -> Result<LangPolicy, String> {
        match name {
            "metadata" => Ok(LangPolicy::Metadata { threshold }),
            "heuristic" => Ok(LangPolicy::Heuristic { threshold }),
            "off" => Ok(LangPolicy::Off),
            other => Err(format!(
                "unknown language policy `{other}` (expected metadata|heuristic|off)"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LangPolicy::Metadata { .. } => "metadata",
            LangPolicy::Heuristic { .. } => "heuristic",
            LangPolicy::Off => "off",
        }
    }

    pub fn with_threshold(self, threshold: f64) -> LangPolicy {
        match self {
            LangPolicy::Metadata { .. } => LangPolicy::Metadata { threshold },
            LangPolicy::Heuristic { .. } => LangPolicy::Heuristic { threshold },
            LangPolicy::Off => LangPolicy::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LangVerdict {
    Accept,
    Reject,
}

pub fn language_filter(record: &TweetRecord, policy: &LangPolicy) -> LangVerdict {
    let accept = match *policy {
        LangPolicy::Off => true,
        LangPolicy::Metadata { threshold } => match record.lang.as_deref() {
            Some(lang) => lang == "en",
            None => stopword_fraction(&record.text) >= threshold,
        },
        LangPolicy::Heuristic { threshold } => stopword_fraction(&record.text) >= threshold,
    };
    if accept {
        LangVerdict::Accept
    } else {
        LangVerdict::Reject
    }
}

/// Fraction of cleaned tokens (counting repeats) that are English stopwords.
/// Zero for text without tokens.
pub fn stopword_fraction(text: &str) -> f64 {
    let cleaned = textprep::clean(text);
    let mut total = 0usize;
    let mut hits = 0usize;
    for tok in cleaned.split_whitespace() {
        total += 1;
        if is_stopword(tok) {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

// Sorted for binary search.
const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "across",
    "after",
    "again",
    "against",
    "all",
    "also",
    "always",
    "am",
    "among",
    "an",
    "and",
    "another",
    "any",
    "are",
    "around",
    "as",
    "at",
    "away",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "cannot",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "even",
    "ever",
    "every",
    "few",
    "for",
    "from",
    "further",
    "get",
    "got",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "however",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "let",
    "many",
    "may",
    "me",
    "might",
    "more",
    "most",
    "much",
    "must",
    "my",
    "myself",
    "never",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "often",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "per",
    "same",
    "she",
    "should",
    "since",
    "so",
    "some",
    "still",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "though",
    "through",
    "thus",
    "to",
    "too",
    "under",
    "until",
    "up",
    "upon",
    "us",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "whether",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "within",
    "without",
    "would",
    "yet",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

fn parse_endpoint(endpoint: &str) -> Result<(String, u16), IngestError> {
    let malformed = || IngestError::MalformedEndpoint(endpoint.to_owned());
    let rest = endpoint.strip_prefix("tcp://").ok_or_else(malformed)?;
    let (host, port) = rest.rsplit_once(':').ok_or_else(malformed)?;
    if host.is_empty() || host.contains('/') {
        return Err(malformed());
    }
    let port = port.parse::<u16>().map_err(|_| malformed())?;
    Ok((host.to_owned(), port))
}

/// Ordered raw-line reader over any byte stream, with optional throttling.
pub struct LineSource {
    reader: Box<dyn BufRead + Send>,
    rate: Option<f64>,
    started: Option<Instant>,
    emitted: u64,
    closed_with_error: Option<String>,
    finished: bool,
}

impl fmt::Debug for LineSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LineSource")
            .field("rate", &self.rate)
            .field("emitted", &self.emitted)
            .field("finished", &self.finished)
            .finish()
    }
}

impl LineSource {
    pub fn from_reader<R: BufRead + Send + 'static>(reader: R) -> LineSource {
        LineSource {
            reader: Box::new(reader),
            rate: None,
            started: None,
            emitted: 0,
            closed_with_error: None,
            finished: false,
        }
    }

    pub fn with_rate(mut self, rate: Option<f64>) -> LineSource {
        self.rate = rate;
        self
    }

    /// Set when the underlying stream failed mid-read; the source then
    /// reports end-of-stream.
    pub fn closed_with_error(&self) -> Option<&str> {
        self.closed_with_error.as_deref()
    }

    /// Read the next line (without its terminator) into `buf`. Returns
    /// `false` at end of stream.
    pub fn next_line(&mut self, buf: &mut Vec<u8>) -> bool {
        if self.finished {
            return false;
        }
        buf.clear();
        match self.reader.read_until(b'\n', buf) {
            Ok(0) => {
                self.finished = true;
                false
            }
            Ok(_) => {
                if buf.last() == Some(&b'\n') {
                    buf.pop();
                }
                if buf.last() == Some(&b'\r') {
                    buf.pop();
                }
                self.throttle();
                self.emitted += 1;
                true
            }
            Err(e) => {
                log::warn!("source closed mid-stream: {e}");
                self.closed_with_error = Some(e.to_string());
                self.finished = true;
                false
            }
        }
    }

    fn throttle(&mut self) {
        let Some(rate) = self.rate else { return };
        let start = *self.started.get_or_insert_with(Instant::now);
        let due = start + Duration::from_secs_f64(self.emitted as f64 / rate);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

pub fn open_source(spec: &SourceSpec) -> Result<LineSource, IngestError> {
    spec.validate()?;
    let source = match spec.kind {
        SourceKind::FileReplay => {
            let path = Path::new(&spec.location);
            let file = File::open(path).map_err(|source| IngestError::Unreadable {
                path: spec.location.clone(),
                source,
            })?;
            if file.metadata().map(|m| m.is_dir()).unwrap_or(false) {
                return Err(IngestError::Unreadable {
                    path: spec.location.clone(),
                    source: io::Error::new(io::ErrorKind::InvalidInput, "is a directory"),
                });
            }
            LineSource::from_reader(BufReader::with_capacity(1 << 16, file))
        }
        SourceKind::Stdin => LineSource::from_reader(BufReader::new(io::stdin())),
        SourceKind::Live => {
            let (host, port) = parse_endpoint(&spec.location)?;
            let stream = TcpStream::connect((host.as_str(), port)).map_err(|source| {
                IngestError::Connect {
                    endpoint: spec.location.clone(),
                    source,
                }
            })?;
            LineSource::from_reader(BufReader::new(stream))
        }
    };
    Ok(source.with_rate(spec.replay_rate))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    /// 1-based line number within the source.
    pub line: u64,
    pub error: ParseError,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub lines: u64,
    pub blank_lines: u64,
    pub accepted: u64,
    pub parse_errors: u64,
    pub rejected_language: u64,
    /// Highest number of records held by the ingest stage at once.
    pub peak_buffered: u64,
}

/// Iterator of accepted records with sequence numbers assigned in order.
#[derive(Debug)]
pub struct Ingest {
    source: LineSource,
    policy: LangPolicy,
    buf: Vec<u8>,
    stats: IngestStats,
    diagnostics: Vec<ParseDiagnostic>,
}

impl Ingest {
    pub fn new(source: LineSource, policy: LangPolicy) -> Ingest {
        Ingest {
            source,
            policy,
            buf: Vec::with_capacity(1024),
            stats: IngestStats::default(),
            diagnostics: Vec::new(),
        }
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn diagnostics(&self) -> &[ParseDiagnostic] {
        &self.diagnostics
    }

    pub fn source(&self) -> &LineSource {
        &self.source
    }
}

impl Iterator for Ingest {
    type Item = TweetRecord;

    fn next(&mut self) -> Option<TweetRecord> {
        while self.source.next_line(&mut self.buf) {
            self.stats.lines += 1;
            self.stats.peak_buffered = self.stats.peak_buffered.max(1);
            if self.buf.iter().all(u8::is_ascii_whitespace) {
                self.stats.blank_lines += 1;
                continue;
            }
            let mut record = match parse_record_bytes(&self.buf) {
                Ok(r) => r,
                Err(error) => {
                    self.stats.parse_errors += 1;
                    log::warn!("line {}: {error}", self.stats.lines);
                    if self.diagnostics.len() < MAX_DIAGNOSTICS {
                        self.diagnostics.push(ParseDiagnostic {
                            line: self.stats.lines,
                            error,
                        });
                    }
                    continue;
                }
            };
            if language_filter(&record, &self.policy) == LangVerdict::Reject {
                self.stats.rejected_language += 1;
                continue;
            }
            record.seq = self.stats.accepted;
            self.stats.accepted += 1;
            return Some(record);
        }
        None
    }
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "file-replay" => Ok(SourceKind::FileReplay),
            "stdin" => Ok(SourceKind::Stdin),
            "live" => Ok(SourceKind::Live),
            other => Err(format!("unknown source kind `{other}`")),
        }
    }
}
