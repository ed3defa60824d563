//! Sentiment lexicons and per-post scoring.
//!
//! Two on-disk formats are supported, both tab-separated with one entry per
//! line:
//!
//! - binary: `word<TAB>positive` or `word<TAB>negative`, mapped to +1 / -1
//! - scored: `word<TAB>integer` with the integer in `[-5, -1] ∪ [1, 5]`
//!
//! Blank lines and lines starting with `#` or `;` are ignored. A duplicated
//! word keeps its last value and produces a diagnostic. Entries whose word
//! can never equal a cleaned token (multi-word phrases, hyphenated or
//! apostrophised forms) are skipped with a diagnostic.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::textprep::TokenBag;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("lexicon line {line}: score {score} outside [-5,-1] ∪ [1,5]")]
    OutOfRange { line: usize, score: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconKind {
    Binary,
    Scored,
}

impl fmt::Display for LexiconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LexiconKind::Binary => "binary",
            LexiconKind::Scored => "scored",
        })
    }
}

impl FromStr for LexiconKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(LexiconKind::Binary),
            "scored" => Ok(LexiconKind::Scored),
            other => Err(format!(
                "unknown lexicon kind `{other}` (expected binary|scored)"
            )),
        }
    }
}

/// Non-fatal issue found while loading a lexicon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconDiagnostic {
    pub line: usize,
    pub message: String,
}

/// Immutable word → integer polarity map.
#[derive(Debug, Clone)]
pub struct Lexicon {
    name: String,
    kind: LexiconKind,
    entries: HashMap<String, i32>,
}

impl Lexicon {
    /// Load from a file; the lexicon is named after the file stem.
    pub fn load(
        path: impl AsRef<Path>,
        kind: LexiconKind,
    ) -> Result<(Lexicon, Vec<LexiconDiagnostic>), LexiconError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "lexicon".to_owned());
        Self::parse(name, kind, BufReader::new(file)).map_err(|e| match e {
            LexiconError::Io { source, .. } => LexiconError::Io {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn parse<R: BufRead>(
        name: impl Into<String>,
        kind: LexiconKind,
        reader: R,
    ) -> Result<(Lexicon, Vec<LexiconDiagnostic>), LexiconError> {
        let mut entries = HashMap::new();
        let mut diagnostics = Vec::new();

        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|source| LexiconError::Io {
                path: String::new(),
                source,
            })?;
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            let (word, value) =
                trimmed
                    .split_once('\t')
                    .ok_or_else(|| LexiconError::Malformed {
                        line: lineno,
                        reason: "expected `word<TAB>value`".to_owned(),
                    })?;
            let word = word.trim().to_lowercase();
            let value = value.trim();
            if word.is_empty() {
                return Err(LexiconError::Malformed {
                    line: lineno,
                    reason: "empty word".to_owned(),
                });
            }

            let score = match kind {
                LexiconKind::Binary => match value {
                    "positive" => 1,
                    "negative" => -1,
                    other => {
                        return Err(LexiconError::Malformed {
                            line: lineno,
                            reason: format!("expected positive|negative, found `{other}`"),
                        })
                    }
                },
                LexiconKind::Scored => {
                    let score: i64 = value.parse().map_err(|_| LexiconError::Malformed {
                        line: lineno,
                        reason: format!("expected integer score, found `{value}`"),
                    })?;
                    if score == 0 || !(-5..=5).contains(&score) {
                        return Err(LexiconError::OutOfRange {
                            line: lineno,
                            score,
                        });
                    }
                    score as i32
                }
            };

            if !word.chars().all(|c| c.is_alphabetic() && !c.is_numeric()) {
                diagnostics.push(LexiconDiagnostic {
                    line: lineno,
                    message: format!("`{word}` can never match a cleaned token; skipped"),
                });
                continue;
            }
            if let Some(previous) = entries.insert(word.clone(), score) {
                diagnostics.push(LexiconDiagnostic {
                    line: lineno,
                    message: format!("duplicate `{word}` (was {previous}, now {score})"),
                });
            }
        }

        Ok((
            Lexicon {
                name: name.into(),
                kind,
                entries,
            },
            diagnostics,
        ))
    }

    /// Build directly from `(word, score)` pairs. Values are validated as in [`Lexicon::parse`].
    pub fn from_entries<'a>(
        name: impl Into<String>,
        kind: LexiconKind,
        entries: impl IntoIterator<Item = (&'a str, i32)>,
    ) -> Result<Lexicon, LexiconError> {
        let mut map = HashMap::new();
        for (i, (word, score)) in entries.into_iter().enumerate() {
            let valid = match kind {
                LexiconKind::Binary => score == 1 || score == -1,
                LexiconKind::Scored => score != 0 && (-5..=5).contains(&score),
            };
            if !valid {
                return Err(LexiconError::OutOfRange {
                    line: i + 1,
                    score: score.into(),
                });
            }
            map.insert(word.to_lowercase(), score);
        }
        Ok(Lexicon {
            name: name.into(),
            kind,
            entries: map,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> LexiconKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<i32> {
        self.entries.get(word).copied()
    }

    /// Sum of matched word values over the bag, counting repeats.
    pub fn score_bag(&self, bag: &TokenBag) -> BagScore {
        let mut score = 0i64;
        let mut matched = 0u32;
        for tok in bag.iter() {
            if let Some(v) = self.get(tok) {
                score += i64::from(v);
                matched += 1;
            }
        }
        BagScore {
            score,
            matched,
            token_count: bag.len() as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BagScore {
    pub score: i64,
    pub matched: u32,
    pub token_count: u32,
}

/// One post's sentiment: the observation `y_k` fed to the detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredPost {
    pub seq: u64,
    pub created_at: DateTime<Utc>,
    pub score: i64,
    pub matched: u32,
    pub token_count: u32,
}

impl ScoredPost {
    pub fn value(&self) -> f64 {
        self.score as f64
    }
}

pub fn score(bag: &TokenBag, created_at: DateTime<Utc>, lexicon: &Lexicon) -> ScoredPost {
    let BagScore {
        score,
        matched,
        token_count,
    } = lexicon.score_bag(bag);
    ScoredPost {
        seq: bag.source_seq,
        created_at,
        score,
        matched,
        token_count,
    }
}
