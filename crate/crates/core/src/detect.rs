//! Online two-sided CUSUM detection of mean shifts with self-resetting baseline.
//!
//! Each side accumulates the Gaussian log-likelihood ratio of a shifted mean
//! `θ₁ = θ₀ ± δ` against the current baseline `θ₀`:
//!
//! ```text
//! s_k = (θ₁ − θ₀) / σ² · (y_k − (θ₀ + θ₁) / 2)
//! S_k = S_{k−1} + s_k,   S_0 = 0
//! m_k = min(m_{k−1}, S_k),   m_0 = 0
//! g_k = S_k − m_k
//! ```
//!
//! An alarm is raised at the first `k` where either side has `g_k ≥ h`
//! (equivalently `S_k ≥ m_k + h`). On alarm both sides are zeroed and the
//! baseline is re-estimated as the mean of the last `w` observations
//! (including the one that triggered), so later alarms are relative to the
//! current level rather than the initial one. `δ`, `σ` and `h` never change.
//!
//! Memory is constant: two sides of four scalars and a `w`-slot ring.

use std::borrow::Borrow;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lexicon::ScoredPost;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{name} must be a positive finite number, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("theta0 must be finite, got {0}")]
    NonFinite(f64),
    #[error("reset window must be at least 1")]
    EmptyResetWindow,
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Initial pre-change mean θ₀.
    pub theta0_init: f64,
    /// Change magnitude δ; the two sides watch θ₀ + δ and θ₀ − δ.
    pub delta: f64,
    /// Assumed known noise standard deviation σ.
    pub sigma: f64,
    /// Detection threshold h on the decision function.
    pub h: f64,
    /// Number of trailing observations averaged to re-estimate θ₀ on reset.
    pub reset_window: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            theta0_init: -0.5,
            delta: 0.5,
            sigma: 1.0,
            h: 20.0,
            reset_window: 50,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.theta0_init.is_finite() {
            return Err(ConfigError::NonFinite(self.theta0_init));
        }
        for (name, value) in [("delta", self.delta), ("sigma", self.sigma), ("h", self.h)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::NotPositive { name, value });
            }
        }
        if self.reset_window == 0 {
            return Err(ConfigError::EmptyResetWindow);
        }
        Ok(())
    }
}

/// Gaussian log-likelihood ratio increment for one observation.
pub fn sufficient_statistic(y: f64, theta0: f64, theta1: f64, sigma: f64) -> f64 {
    (theta1 - theta0) / (sigma * sigma) * (y - (theta0 + theta1) / 2.0)
}

/// One one-sided CUSUM: cumulative sum, its running minimum and the decision function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CusumSide {
    /// S_k.
    pub cumsum: f64,
    /// m_k, minimum of S over all steps since the last reset, including S_0 = 0.
    pub running_min: f64,
    /// g_k = S_k − m_k.
    pub decision: f64,
    /// Post-change mean this side tests for.
    pub theta1: f64,
}

impl CusumSide {
    fn new(theta1: f64) -> CusumSide {
        CusumSide {
            cumsum: 0.0,
            running_min: 0.0,
            decision: 0.0,
            theta1,
        }
    }

    fn update(&mut self, s: f64) {
        self.cumsum += s;
        self.running_min = self.running_min.min(self.cumsum);
        self.decision = self.cumsum - self.running_min;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        }
    }
}

/// Alarm raised by [`Detector::observe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alarm {
    /// Stopping time: 1-based number of observations seen when the alarm fired.
    pub index: u64,
    pub direction: Direction,
    pub theta0_before: f64,
    pub theta0_after: f64,
    pub g_at_alarm: f64,
}

impl Alarm {
    pub fn at(self, timestamp: DateTime<Utc>) -> ChangeEvent {
        ChangeEvent {
            index: self.index,
            timestamp,
            direction: self.direction,
            theta0_before: self.theta0_before,
            theta0_after: self.theta0_after,
            g_at_alarm: self.g_at_alarm,
        }
    }
}

/// A detected change, as written to `events.ndjson`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub index: u64,
    pub timestamp: DateTime<Utc>,
    pub direction: Direction,
    pub theta0_before: f64,
    pub theta0_after: f64,
    pub g_at_alarm: f64,
}

/// Fixed-capacity ring of the most recent observations.
#[derive(Debug, Clone)]
struct Ring {
    buf: Vec<f64>,
    head: usize,
    len: usize,
}

impl Ring {
    fn with_capacity(cap: usize) -> Ring {
        Ring {
            buf: vec![0.0; cap],
            head: 0,
            len: 0,
        }
    }

    fn push(&mut self, y: f64) {
        let cap = self.buf.len();
        self.buf[self.head] = y;
        self.head = (self.head + 1) % cap;
        self.len = (self.len + 1).min(cap);
    }

    fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        let cap = self.buf.len();
        let start = (self.head + cap - self.len) % cap;
        (0..self.len).map(move |i| self.buf[(start + i) % cap])
    }

    fn mean(&self) -> Option<f64> {
        (self.len > 0).then(|| self.iter().sum::<f64>() / self.len as f64)
    }

    fn clear(&mut self) {
        self.head = 0;
        self.len = 0;
    }
}

/// Two-sided self-resetting CUSUM state. Feed observations in stream order.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    theta0: f64,
    pos: CusumSide,
    neg: CusumSide,
    samples: u64,
    ring: Ring,
    last_decision: (f64, f64),
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Detector, ConfigError> {
        config.validate()?;
        let theta0 = config.theta0_init;
        Ok(Detector {
            config,
            theta0,
            pos: CusumSide::new(theta0 + config.delta),
            neg: CusumSide::new(theta0 - config.delta),
            samples: 0,
            ring: Ring::with_capacity(config.reset_window),
            last_decision: (0.0, 0.0),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Current pre-change mean θ₀.
    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    /// Upward-shift side.
    pub fn pos(&self) -> &CusumSide {
        &self.pos
    }

    /// Downward-shift side.
    pub fn neg(&self) -> &CusumSide {
        &self.neg
    }

    /// Number of observations processed since creation.
    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn ring_len(&self) -> usize {
        self.ring.len
    }

    pub fn ring_contents(&self) -> Vec<f64> {
        self.ring.iter().collect()
    }

    /// `(g⁺, g⁻)` after the most recent observation, before any reset it triggered.
    pub fn last_decision(&self) -> (f64, f64) {
        self.last_decision
    }

    /// Process one observation. Returns the alarm if either side crossed `h`;
    /// the detector is already reset when this returns.
    pub fn observe(&mut self, y: f64) -> Option<Alarm> {
        self.samples += 1;
        self.ring.push(y);

        let sigma = self.config.sigma;
        self.pos
            .update(sufficient_statistic(y, self.theta0, self.pos.theta1, sigma));
        self.neg
            .update(sufficient_statistic(y, self.theta0, self.neg.theta1, sigma));

        let (gp, gn) = (self.pos.decision, self.neg.decision);
        self.last_decision = (gp, gn);
        let h = self.config.h;
        if gp < h && gn < h {
            return None;
        }

        if gp == gn {
            log::warn!(
                "both CUSUM sides crossed h={h} with equal g={gp} at sample {}; reporting positive",
                self.samples
            );
        }
        let (direction, g_at_alarm) = if gp >= gn {
            (Direction::Positive, gp)
        } else {
            (Direction::Negative, gn)
        };
        let theta0_before = self.theta0;
        let theta0_after = self.reset();
        Some(Alarm {
            index: self.samples,
            direction,
            theta0_before,
            theta0_after,
            g_at_alarm,
        })
    }

    /// Observe a scored post, attaching its timestamp to any resulting event.
    pub fn step(&mut self, post: &ScoredPost) -> Option<ChangeEvent> {
        self.observe(post.value()).map(|a| a.at(post.created_at))
    }

    /// Re-initialize after an alarm: θ₀ becomes the mean of the ring, both
    /// sides restart from zero around the new θ₀, and the ring is emptied.
    /// Returns the new θ₀.
    ///
    /// # Panics
    ///
    /// If no observation has been seen since the last reset.
    pub fn reset(&mut self) -> f64 {
        let theta0 = self
            .ring
            .mean()
            .expect("reset requires at least one observation since the last reset");
        self.theta0 = theta0;
        self.pos = CusumSide::new(theta0 + self.config.delta);
        self.neg = CusumSide::new(theta0 - self.config.delta);
        self.ring.clear();
        theta0
    }
}

/// Result of running the detector over a whole stream.
#[derive(Debug, Clone)]
pub struct DetectorRun {
    pub events: Vec<ChangeEvent>,
    pub state: Detector,
}

/// Single pass over `scores`; each post is inspected once and dropped.
pub fn run_detector<I>(scores: I, config: DetectorConfig) -> Result<DetectorRun, ConfigError>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<ScoredPost>,
{
    let mut state = Detector::new(config)?;
    let mut events = Vec::new();
    for post in scores {
        if let Some(ev) = state.step(post.borrow()) {
            events.push(ev);
        }
    }
    Ok(DetectorRun { events, state })
}

/// Alarms over a plain value sequence.
pub fn detect_values<I: IntoIterator<Item = f64>>(
    values: I,
    config: DetectorConfig,
) -> Result<Vec<Alarm>, ConfigError> {
    let mut state = Detector::new(config)?;
    Ok(values
        .into_iter()
        .filter_map(|y| state.observe(y))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArlEstimate {
    pub mean_run_length: f64,
    pub std_error: f64,
    pub censored_fraction: f64,
    pub runs: usize,
}

/// Monte Carlo average run length of the two-sided detector (no reset) on
/// i.i.d. `N(true_mean, σ²)` streams.
///
/// Each run uses its own ChaCha8 stream derived from `seed` and the run
/// index, so results do not depend on how runs are scheduled across threads.
/// Runs that never alarm within `max_len` samples count as `max_len`.
pub fn estimate_arl(
    config: DetectorConfig,
    true_mean: f64,
    runs: usize,
    max_len: u64,
    seed: u64,
) -> Result<ArlEstimate, ConfigError> {
    config.validate()?;
    if runs == 0 {
        return Err(ConfigError::ZeroCount("runs"));
    }
    if max_len == 0 {
        return Err(ConfigError::ZeroCount("max_len"));
    }
    if !true_mean.is_finite() {
        return Err(ConfigError::NonFinite(true_mean));
    }

    let lengths: Vec<(u64, bool)> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(run as u64);
            let noise = Normal::new(true_mean, config.sigma).expect("sigma validated");
            let mut det = Detector::new(config).expect("config validated");
            for k in 1..=max_len {
                if det.observe(noise.sample(&mut rng)).is_some() {
                    return (k, false);
                }
            }
            (max_len, true)
        })
        .collect();

    let n = lengths.len() as f64;
    let mean = lengths.iter().map(|&(l, _)| l as f64).sum::<f64>() / n;
    let var = if lengths.len() > 1 {
        lengths
            .iter()
            .map(|&(l, _)| (l as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let censored = lengths.iter().filter(|&&(_, c)| c).count() as f64;
    Ok(ArlEstimate {
        mean_run_length: mean,
        std_error: (var / n).sqrt(),
        censored_fraction: censored / n,
        runs,
    })
}
