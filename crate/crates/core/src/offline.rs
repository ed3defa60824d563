//! Offline analyses over a completed score series.
//!
//! Indices reported here follow the 1-based "sample count" convention used by
//! the detector: a changepoint `t` means the first segment holds samples
//! `1..=t`, and an online alarm with index `k` fired on sample `k`.

use std::collections::BTreeMap;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::detect::ChangeEvent;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OfflineError {
    #[error("values and timestamps differ in length ({values} vs {timestamps})")]
    LengthMismatch { values: usize, timestamps: usize },
    #[error("timestamp at position {0} is earlier than its predecessor")]
    TimestampsDecrease(usize),
    #[error("moving-average window must be at least 1")]
    ZeroWindow,
    #[error("bin width must be a positive finite number, got {0}")]
    BadBinWidth(f64),
    #[error("segmentation needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("penalty must be a non-negative finite number, got {0}")]
    BadPenalty(f64),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
}

/// Score values with parallel, non-decreasing UTC timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    values: Vec<f64>,
    timestamps: Vec<DateTime<Utc>>,
}

impl ScoreSeries {
    pub fn new(
        values: Vec<f64>,
        timestamps: Vec<DateTime<Utc>>,
    ) -> Result<ScoreSeries, OfflineError> {
        if values.len() != timestamps.len() {
            return Err(OfflineError::LengthMismatch {
                values: values.len(),
                timestamps: timestamps.len(),
            });
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(OfflineError::TimestampsDecrease(i + 1));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(OfflineError::NonFinite(i));
        }
        Ok(ScoreSeries { values, timestamps })
    }

    /// Series with one-second synthetic timestamps starting at the Unix epoch.
    pub fn from_values(values: Vec<f64>) -> ScoreSeries {
        let timestamps = (0..values.len())
            .map(|i| Utc.timestamp_opt(i as i64, 0).single().expect("in range"))
            .collect();
        ScoreSeries::new(values, timestamps).expect("synthetic timestamps are ordered")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Trailing moving average; the first `window − 1` positions are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverage {
    pub window: usize,
    pub values: Vec<Option<f64>>,
    pub timestamps: Vec<DateTime<Utc>>,
}

pub fn moving_average(series: &ScoreSeries, window: usize) -> Result<MovingAverage, OfflineError> {
    if window == 0 {
        return Err(OfflineError::ZeroWindow);
    }
    Ok(MovingAverage {
        window,
        values: trailing_mean(series.values(), window),
        timestamps: series.timestamps().to_vec(),
    })
}

/// Trailing mean over raw values, with the running sum re-accumulated from
/// scratch every `window` steps to keep rounding from drifting.
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<Option<f64>> {
    assert!(window > 0, "window must be positive");
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        if i + 1 >= window && (i + 1) % window == 0 {
            sum = values[i + 1 - window..=i].iter().sum();
        }
        out.push((i + 1 >= window).then(|| sum / window as f64));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    /// Inclusive lower edge, a multiple of the bin width.
    pub low: f64,
    pub count: usize,
}

/// Counts per bin `[j·w, (j+1)·w)`, ascending, non-empty bins only.
pub fn histogram(series: &ScoreSeries, bin_width: f64) -> Result<Vec<HistogramBin>, OfflineError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(OfflineError::BadBinWidth(bin_width));
    }
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in series.values() {
        *bins.entry((v / bin_width).floor() as i64).or_default() += 1;
    }
    Ok(bins
        .into_iter()
        .map(|(j, count)| HistogramBin {
            low: j as f64 * bin_width,
            count,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Penalty {
    /// `2·ln(n)`.
    Default,
    Value(f64),
}

impl Penalty {
    pub fn resolve(self, n: usize) -> Result<f64, OfflineError> {
        match self {
            Penalty::Default => Ok(2.0 * (n as f64).ln()),
            Penalty::Value(b) if b.is_finite() && b >= 0.0 => Ok(b),
            Penalty::Value(b) => Err(OfflineError::BadPenalty(b)),
        }
    }
}

impl std::str::FromStr for Penalty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "default" {
            return Ok(Penalty::Default);
        }
        s.parse::<f64>()
            .map(Penalty::Value)
            .map_err(|_| format!("penalty must be a number or `default`, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationResult {
    /// 1-based index of the last sample of every segment but the final one.
    pub changepoints: Vec<usize>,
    pub segment_means: Vec<f64>,
    /// Residual sum of squares of the chosen segmentation.
    pub total_cost: f64,
    /// Per-changepoint penalty β that was applied.
    pub penalty: f64,
}

impl SegmentationResult {
    pub fn penalized_cost(&self) -> f64 {
        self.total_cost + self.penalty * self.changepoints.len() as f64
    }
}

/// Prefix sums of `y − y[0]`; the offset keeps the arithmetic identical for
/// shifted copies of the same series.
struct Prefix {
    sums: Vec<f64>,
}

impl Prefix {
    fn new(values: &[f64]) -> Prefix {
        let offset = values.first().copied().unwrap_or(0.0);
        let mut sums = Vec::with_capacity(values.len() + 1);
        let mut acc = 0.0;
        sums.push(0.0);
        for &v in values {
            acc += v - offset;
            sums.push(acc);
        }
        Prefix { sums }
    }

    fn mean(&self, a: usize, b: usize) -> f64 {
        (self.sums[b] - self.sums[a]) / (b - a) as f64
    }

    /// Best single split of `[a, b)`: `(t, reduction)` with the split between
    /// `t − 1` and `t`. Ties go to the smallest `t`.
    fn best_split(&self, a: usize, b: usize) -> Option<(usize, f64)> {
        let n = (b - a) as f64;
        let mut best: Option<(usize, f64)> = None;
        for t in a + 1..b {
            let n1 = (t - a) as f64;
            let n2 = (b - t) as f64;
            let diff = self.mean(a, t) - self.mean(t, b);
            let reduction = n1 * n2 / n * diff * diff;
            if best.is_none_or(|(_, r)| reduction > r) {
                best = Some((t, reduction));
            }
        }
        best
    }
}

fn rss(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum()
}

/// Penalized binary segmentation for changes in mean under squared-error cost.
///
/// Splits are grown greedily, always taking the single split (over all
/// current segments) with the largest cost reduction, until `max_changepoints`
/// splits exist or no split reduces the cost. The reported segmentation is
/// the prefix of that split sequence minimizing `RSS + β·k`, with ties going
/// to fewer changepoints. Split position ties resolve to the smallest index.
pub fn segment(
    values: &[f64],
    penalty: Penalty,
    max_changepoints: usize,
) -> Result<SegmentationResult, OfflineError> {
    let n = values.len();
    if n < 2 {
        return Err(OfflineError::TooShort(n));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(OfflineError::NonFinite(i));
    }
    let beta = penalty.resolve(n)?;
    let prefix = Prefix::new(values);

    struct Open {
        a: usize,
        b: usize,
        split: Option<(usize, f64)>,
    }
    let mut open = vec![Open {
        a: 0,
        b: n,
        split: prefix.best_split(0, n),
    }];
    let mut splits: Vec<(usize, f64)> = Vec::new();

    while splits.len() < max_changepoints {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.split.map(|(t, r)| (i, t, r)))
            .fold(None::<(usize, usize, f64)>, |best, cand| match best {
                Some((_, bt, br)) if br > cand.2 || (br == cand.2 && bt < cand.1) => best,
                _ => Some(cand),
            });
        let Some((i, t, r)) = pick else { break };
        if r <= 0.0 {
            break;
        }
        let seg = open.swap_remove(i);
        splits.push((t, r));
        open.push(Open {
            a: seg.a,
            b: t,
            split: prefix.best_split(seg.a, t),
        });
        open.push(Open {
            a: t,
            b: seg.b,
            split: prefix.best_split(t, seg.b),
        });
    }

    let mut best_k = 0;
    let mut best_cost = 0.0;
    let mut running = 0.0;
    for (k, &(_, r)) in splits.iter().enumerate() {
        running += beta - r;
        if running < best_cost {
            best_cost = running;
            best_k = k + 1;
        }
    }

    let mut changepoints: Vec<usize> = splits[..best_k].iter().map(|&(t, _)| t).collect();
    changepoints.sort_unstable();
    let bounds: Vec<usize> = std::iter::once(0)
        .chain(changepoints.iter().copied())
        .chain([n])
        .collect();
    let segment_means = bounds
        .windows(2)
        .map(|w| values[w[0]..w[1]].iter().sum::<f64>() / (w[1] - w[0]) as f64)
        .collect();
    let total_cost = bounds.windows(2).map(|w| rss(&values[w[0]..w[1]])).sum();

    Ok(SegmentationResult {
        changepoints,
        segment_means,
        total_cost,
        penalty: beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchedPair {
    pub online: u64,
    pub offline: u64,
    /// `online − offline`; positive when the online detector lags.
    pub delta: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MatchReport {
    pub tolerance: u64,
    pub matched: Vec<MatchedPair>,
    pub online_only: Vec<u64>,
    pub offline_only: Vec<u64>,
}

impl MatchReport {
    pub fn deltas(&self) -> impl Iterator<Item = i64> + '_ {
        self.matched.iter().map(|m| m.delta)
    }
}

/// Greedy nearest-index matching: candidate pairs within `tolerance` are taken
/// in order of increasing distance (then online index, then offline index),
/// each point used at most once.
pub fn match_indices(online: &[u64], offline: &[u64], tolerance: u64) -> MatchReport {
    let mut candidates: Vec<(u64, usize, usize)> = Vec::new();
    for (i, &on) in online.iter().enumerate() {
        for (j, &off) in offline.iter().enumerate() {
            let dist = on.abs_diff(off);
            if dist <= tolerance {
                candidates.push((dist, i, j));
            }
        }
    }
    candidates.sort_unstable_by_key(|&(d, i, j)| (d, online[i], offline[j], i, j));

    let mut used_on = vec![false; online.len()];
    let mut used_off = vec![false; offline.len()];
    let mut matched = Vec::new();
    for (_, i, j) in candidates {
        if used_on[i] || used_off[j] {
            continue;
        }
        used_on[i] = true;
        used_off[j] = true;
        matched.push(MatchedPair {
            online: online[i],
            offline: offline[j],
            delta: online[i] as i64 - offline[j] as i64,
        });
    }
    matched.sort_unstable_by_key(|m| (m.online, m.offline));

    let unused = |xs: &[u64], used: &[bool]| {
        xs.iter()
            .zip(used)
            .filter(|(_, &u)| !u)
            .map(|(&x, _)| x)
            .collect::<Vec<_>>()
    };
    MatchReport {
        tolerance,
        online_only: unused(online, &used_on),
        offline_only: unused(offline, &used_off),
        matched,
    }
}

pub fn compare(
    online: &[ChangeEvent],
    offline: &SegmentationResult,
    tolerance: u64,
) -> MatchReport {
    let on: Vec<u64> = online.iter().map(|e| e.index).collect();
    let off: Vec<u64> = offline.changepoints.iter().map(|&c| c as u64).collect();
    match_indices(&on, &off, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(v: &[f64]) -> ScoreSeries {
        ScoreSeries::from_values(v.to_vec())
    }

    fn blocks(spec: &[(f64, usize)]) -> Vec<f64> {
        spec.iter()
            .flat_map(|&(v, n)| std::iter::repeat(v).take(n))
            .collect()
    }

    #[test]
    fn series_validation() {
        let t = Utc.timestamp_opt(10, 0).unwrap();
        let t0 = Utc.timestamp_opt(0, 0).unwrap();
        assert!(matches!(
            ScoreSeries::new(vec![1.0], vec![]),
            Err(OfflineError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ScoreSeries::new(vec![1.0, 2.0], vec![t, t0]),
            Err(OfflineError::TimestampsDecrease(1))
        ));
        assert!(ScoreSeries::new(vec![1.0, 2.0], vec![t, t]).is_ok());
    }

    #[test]
    fn moving_average_examples() {
        let ma = moving_average(&series(&[1.0, 2.0, 3.0, 4.0, 5.0]), 3).unwrap();
        assert_eq!(ma.values, vec![None, None, Some(2.0), Some(3.0), Some(4.0)]);
        let ma = moving_average(&series(&[7.0; 6]), 4).unwrap();
        assert!(ma.values[3..].iter().all(|v| *v == Some(7.0)));
        let ma = moving_average(&series(&[1.0, -2.0, 3.5]), 1).unwrap();
        assert_eq!(ma.values, vec![Some(1.0), Some(-2.0), Some(3.5)]);
        let ma = moving_average(&series(&[1.0, 2.0]), 5).unwrap();
        assert_eq!(ma.values, vec![None, None]);
        assert_eq!(
            moving_average(&series(&[1.0]), 0),
            Err(OfflineError::ZeroWindow)
        );
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&series(&[-1.0, -1.0, 0.0, 2.0]), 1.0).unwrap();
        assert_eq!(
            h,
            vec![
                HistogramBin {
                    low: -1.0,
                    count: 2
                },
                HistogramBin { low: 0.0, count: 1 },
                HistogramBin { low: 2.0, count: 1 },
            ]
        );
        assert!(histogram(&series(&[]), 1.0).unwrap().is_empty());
        let h = histogram(&series(&[0.1, 0.4, 0.6, -0.1]), 0.5).unwrap();
        assert_eq!(
            h.iter().map(|b| (b.low, b.count)).collect::<Vec<_>>(),
            [(-0.5, 1), (0.0, 2), (0.5, 1)]
        );
        assert!(histogram(&series(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn segment_single_step() {
        let r = segment(&blocks(&[(0.0, 50), (5.0, 50)]), Penalty::Default, 5).unwrap();
        assert_eq!(r.changepoints, vec![50]);
        assert_eq!(r.segment_means, vec![0.0, 5.0]);
        assert_eq!(r.total_cost, 0.0);
        assert!((r.penalty - 2.0 * 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn segment_two_steps() {
        let r = segment(
            &blocks(&[(0.0, 30), (5.0, 30), (0.0, 30)]),
            Penalty::Default,
            5,
        )
        .unwrap();
        assert_eq!(r.changepoints, vec![30, 60]);
        assert_eq!(r.segment_means, vec![0.0, 5.0, 0.0]);
    }

    #[test]
    fn segment_constant_and_zero_cap() {
        let r = segment(&[3.0; 40], Penalty::Value(0.1), 5).unwrap();
        assert!(r.changepoints.is_empty());
        assert_eq!(r.segment_means, vec![3.0]);

        let r = segment(&blocks(&[(0.0, 50), (5.0, 50)]), Penalty::Default, 0).unwrap();
        assert!(r.changepoints.is_empty());
        assert_eq!(r.segment_means, vec![2.5]);
        assert_eq!(r.total_cost, 625.0);
    }

    #[test]
    fn segment_errors() {
        assert_eq!(
            segment(&[1.0], Penalty::Default, 1),
            Err(OfflineError::TooShort(1))
        );
        assert!(matches!(
            segment(&[1.0, 2.0], Penalty::Value(-1.0), 1),
            Err(OfflineError::BadPenalty(_))
        ));
        assert_eq!("default".parse::<Penalty>(), Ok(Penalty::Default));
        assert_eq!("3.5".parse::<Penalty>(), Ok(Penalty::Value(3.5)));
        assert!("x".parse::<Penalty>().is_err());
    }

    #[test]
    fn isolated_outlier_found_through_penalized_prefix() {
        // The first greedy split alone is not worth β; the pair is.
        let y = blocks(&[(0.0, 14), (5.0, 1), (0.0, 15)]);
        let r = segment(&y, Penalty::Default, 2).unwrap();
        assert_eq!(r.changepoints, vec![14, 15]);
    }

    #[test]
    fn compare_examples() {
        let r = match_indices(&[50], &[50], 10);
        assert_eq!(
            r.matched,
            vec![MatchedPair {
                online: 50,
                offline: 50,
                delta: 0
            }]
        );
        let r = match_indices(&[55], &[50], 10);
        assert_eq!(r.matched[0].delta, 5);
        let r = match_indices(&[55], &[200], 10);
        assert!(r.matched.is_empty());
        assert_eq!((r.online_only, r.offline_only), (vec![55], vec![200]));
    }

    #[test]
    fn compare_prefers_nearest_and_uses_points_once() {
        let r = match_indices(&[100, 104], &[103], 10);
        assert_eq!(
            r.matched,
            vec![MatchedPair {
                online: 104,
                offline: 103,
                delta: 1
            }]
        );
        assert_eq!(r.online_only, vec![100]);
        let r = match_indices(&[100, 200], &[90, 210], 0);
        assert!(r.matched.is_empty());
    }

    proptest! {
        #[test]
        fn moving_average_commutes_with_shift(
            v in prop::collection::vec(-50.0f64..50.0, 0..200),
            c in -100.0f64..100.0,
            w in 1usize..30,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = trailing_mean(&v, w);
            let b = trailing_mean(&shifted, w);
            for (x, y) in a.iter().zip(&b) {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!((x + c - y).abs() <= 1e-9),
                    (None, None) => {}
                    _ => prop_assert!(false, "absence differs"),
                }
            }
        }

        #[test]
        fn histogram_conserves_count(v in prop::collection::vec(-20.0f64..20.0, 0..300), w in 0.1f64..5.0) {
            let h = histogram(&ScoreSeries::from_values(v.clone()), w).unwrap();
            prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), v.len());
            prop_assert!(h.windows(2).all(|p| p[0].low < p[1].low));
        }

        #[test]
        fn segmentation_shift_invariant(
            v in prop::collection::vec(-5i32..=5, 2..150),
            c in -1000i32..1000,
            q in 0usize..6,
        ) {
            let y: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            let s: Vec<f64> = v.iter().map(|&x| f64::from(x + c)).collect();
            let a = segment(&y, Penalty::Default, q).unwrap();
            let b = segment(&s, Penalty::Default, q).unwrap();
            prop_assert_eq!(&a.changepoints, &b.changepoints);
            prop_assert!(a.changepoints.len() <= q);
            prop_assert!(a.changepoints.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(a.changepoints.iter().all(|&t| t > 0 && t < y.len()));
            prop_assert_eq!(a.segment_means.len(), a.changepoints.len() + 1);
        }
    }
}
