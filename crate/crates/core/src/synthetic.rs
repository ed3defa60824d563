//! Seeded synthetic data: piecewise-constant Gaussian score streams and an
//! NDJSON post feed generated lazily, for experiments and load tests.

use std::io::{self, Read};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Concatenated segments of i.i.d. `N(mean, σ²)` samples, `(length, mean)` each.
pub fn piecewise_gaussian(segments: &[(usize, f64)], sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = segments.iter().map(|s| s.0).sum();
    let mut out = Vec::with_capacity(total);
    for &(len, mean) in segments {
        let dist = Normal::new(mean, sigma).expect("sigma must be positive and finite");
        out.extend((0..len).map(|_| dist.sample(&mut rng)));
    }
    out
}

const POSITIVE: &[&str] = &["good", "great", "happy", "love", "win", "hope"];
const NEGATIVE: &[&str] = &["bad", "sad", "awful", "hate", "fail", "crisis"];
const NEUTRAL: &[&str] = &[
    "the", "vote", "today", "is", "on", "minister", "deal", "we", "and", "of", "talks", "news",
];

/// `Read` source yielding `n` NDJSON posts one second apart. Posts mix words
/// from small positive, negative and neutral vocabularies; one in eight
/// carries a URL, mention or hashtag so cleaning does real work.
#[derive(Debug)]
pub struct SyntheticFeed {
    rng: ChaCha8Rng,
    remaining: u64,
    emitted: u64,
    start: DateTime<Utc>,
    line: Vec<u8>,
    pos: usize,
}

impl SyntheticFeed {
    pub fn new(n: u64, seed: u64) -> SyntheticFeed {
        SyntheticFeed {
            rng: ChaCha8Rng::seed_from_u64(seed),
            remaining: n,
            emitted: 0,
            start: Utc.with_ymd_and_hms(2018, 3, 15, 0, 0, 0).single().expect("valid date"),
            line: Vec::with_capacity(256),
            pos: 0,
        }
    }

    /// Words of positive, negative and neutral vocabulary used by the feed.
    pub fn vocabulary() -> (&'static [&'static str], &'static [&'static str], &'static [&'static str]) {
        (POSITIVE, NEGATIVE, NEUTRAL)
    }

    fn fill(&mut self) {
        use std::io::Write as _;
        self.line.clear();
        self.pos = 0;
        let ts = self.start + Duration::seconds(self.emitted as i64);
        let words = self.rng.random_range(3..10);
        let mut text = String::with_capacity(80);
        for i in 0..words {
            if i > 0 {
                text.push(' ');
            }
            let roll: f64 = self.rng.random();
            let pool = if roll < 0.2 {
                POSITIVE
            } else if roll < 0.4 {
                NEGATIVE
            } else {
                NEUTRAL
            };
            text.push_str(pool[self.rng.random_range(0..pool.len())]);
        }
        match self.rng.random_range(0..24) {
            0 => text.push_str(" https://t.co/x1y2z3"),
            1 => text.push_str(" @someone"),
            2 => text.push_str(" #topic"),
            _ => {}
        }
        let _ = writeln!(
            self.line,
            r#"{{"created_at":"{}","text":"{text}","lang":"en"}}"#,
            ts.format("%Y-%m-%dT%H:%M:%SZ")
        );
        self.emitted += 1;
        self.remaining -= 1;
    }
}

impl Read for SyntheticFeed {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.line.len() {
            if self.remaining == 0 {
                return Ok(0);
            }
            self.fill();
        }
        let n = buf.len().min(self.line.len() - self.pos);
        buf[..n].copy_from_slice(&self.line[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}
