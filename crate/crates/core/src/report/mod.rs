//! Segment summaries and output artifacts.

mod export;
mod svg;

use std::collections::{HashMap, HashSet};

use serde::Serialize;

pub use export::{
    export_changepoints_csv, export_events_csv, export_histogram_csv, export_moving_average_csv,
    export_ranking_csv, export_scored_posts_csv, export_series_csv, format_float,
    import_series_csv, CsvError, SERIES_TIMESTAMP_FORMAT,
};
pub(crate) use export::timestamp;
pub use svg::{
    render_bar_chart, render_cusum, render_series, Colors, Marker, SeriesOverlays, SvgStyle,
};

use crate::detect::ChangeEvent;
use crate::textprep::TokenBag;

/// A contiguous run of posts between change events. Indices are 0-based
/// positions into the post list, both inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub label: String,
    pub start_index: usize,
    pub end_index: usize,
    pub posts: Vec<T>,
}

impl<T> Segment<T> {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }
}

/// Split posts at change events. An event with index `k` (the 1-based sample
/// count at which it fired) closes the preceding segment after its `k`-th
/// post, so the triggering post belongs to the segment before the change.
///
/// Events outside `1..n` would produce empty segments and are ignored.
pub fn split_by_events<T: Clone>(posts: &[T], events: &[ChangeEvent]) -> Vec<Segment<T>> {
    let n = posts.len();
    let mut cuts: Vec<(usize, &ChangeEvent)> = Vec::new();
    for ev in events {
        let cut = ev.index as usize;
        if cut == 0 || cut >= n || cuts.last().is_some_and(|&(c, _)| c >= cut) {
            continue;
        }
        cuts.push((cut, ev));
    }

    let describe = |ev: &ChangeEvent| {
        format!(
            "{} change #{} at {}",
            ev.direction.as_str(),
            ev.index,
            ev.timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
        )
    };

    let mut segments = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0usize;
    let mut opened_by: Option<&ChangeEvent> = None;
    for i in 0..=cuts.len() {
        let (end, closed_by) = match cuts.get(i) {
            Some(&(cut, ev)) => (cut, Some(ev)),
            None => (n, None),
        };
        if end == 0 {
            break;
        }
        let from = opened_by.map_or_else(|| "start".to_owned(), &describe);
        let to = closed_by.map_or_else(|| "end".to_owned(), &describe);
        segments.push(Segment {
            label: format!("segment {}: {from} .. {to}", i + 1),
            start_index: start,
            end_index: end - 1,
            posts: posts[start..end].to_vec(),
        });
        start = end;
        opened_by = closed_by;
    }
    segments
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermWeight {
    pub term: String,
    pub weight: f64,
    pub count: u64,
}

/// Terms ordered by descending TF-IDF weight, ties broken lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TermRanking {
    pub terms: Vec<TermWeight>,
}

impl TermRanking {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

fn term_counts(segment: &Segment<TokenBag>) -> HashMap<&str, u64> {
    let mut counts = HashMap::new();
    for bag in &segment.posts {
        for tok in bag.iter() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    counts
}

/// Rank `target`'s terms with each segment of `corpus` as one document:
/// `weight = count_in_target · ln(N / df)`. Zero-weight terms are dropped.
///
/// `target` is expected to be one of the corpus segments; if it is not, it
/// still counts as containing its own terms.
pub fn tfidf_rank(
    target: &Segment<TokenBag>,
    corpus: &[Segment<TokenBag>],
    top_k: usize,
) -> TermRanking {
    let tf = term_counts(target);
    if tf.is_empty() {
        return TermRanking::default();
    }
    let docs: Vec<HashSet<&str>> = corpus
        .iter()
        .map(|seg| seg.posts.iter().flat_map(|b| b.iter()).collect())
        .collect();
    let n = docs.len().max(1) as f64;

    let mut terms: Vec<TermWeight> = tf
        .into_iter()
        .filter_map(|(term, count)| {
            let df = docs.iter().filter(|d| d.contains(term)).count().max(1) as f64;
            let weight = count as f64 * (n / df).ln();
            (weight > 0.0).then(|| TermWeight {
                term: term.to_owned(),
                weight,
                count,
            })
        })
        .collect();
    terms.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then_with(|| a.term.cmp(&b.term))
    });
    terms.truncate(top_k);
    TermRanking { terms }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Direction;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn event(index: u64, direction: Direction) -> ChangeEvent {
        ChangeEvent {
            index,
            timestamp: Utc.timestamp_opt(index as i64, 0).unwrap(),
            direction,
            theta0_before: 0.0,
            theta0_after: 0.0,
            g_at_alarm: 20.0,
        }
    }

    fn seg(docs: &[&str]) -> Segment<TokenBag> {
        Segment {
            label: String::new(),
            start_index: 0,
            end_index: 0,
            posts: docs
                .iter()
                .map(|d| crate::textprep::tokenize(d, 0))
                .collect(),
        }
    }

    #[test]
    fn split_single_event() {
        let posts: Vec<usize> = (0..10).collect();
        let segs = split_by_events(&posts, &[event(4, Direction::Negative)]);
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start_index, segs[0].end_index), (0, 3));
        assert_eq!((segs[1].start_index, segs[1].end_index), (4, 9));
        // The 4th post (position 3) triggered the alarm.
        assert_eq!(*segs[0].posts.last().unwrap(), 3);
        assert!(segs[0].label.contains("start .. negative change #4"));
        assert!(segs[1].label.ends_with(".. end"));
    }

    #[test]
    fn split_no_events() {
        let posts: Vec<usize> = (0..7).collect();
        let segs = split_by_events(&posts, &[]);
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start_index, segs[0].end_index), (0, 6));
        assert!(split_by_events::<usize>(&[], &[]).is_empty());
    }

    #[test]
    fn split_reported_sample_counts() {
        let posts: Vec<usize> = (0..6000).collect();
        let segs = split_by_events(
            &posts,
            &[
                event(2142, Direction::Negative),
                event(4427, Direction::Positive),
            ],
        );
        let ranges: Vec<_> = segs.iter().map(|s| (s.start_index, s.end_index)).collect();
        // Samples 1..=2142, 2143..=4427, 4428..=6000 in 1-based counts.
        assert_eq!(ranges, vec![(0, 2141), (2142, 4426), (4427, 5999)]);
    }

    #[test]
    fn split_ignores_out_of_range_events() {
        let posts: Vec<usize> = (0..5).collect();
        let segs = split_by_events(
            &posts,
            &[event(0, Direction::Positive), event(5, Direction::Positive)],
        );
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn tfidf_examples() {
        let target = seg(&["brexit brexit vote", "brexit"]);
        let other = seg(&["vote now"]);
        let corpus = vec![target.clone(), other];
        let r = tfidf_rank(&target, &corpus, 30);
        assert_eq!(r.terms.len(), 1);
        assert_eq!(r.terms[0].term, "brexit");
        assert_eq!(r.terms[0].count, 3);
        assert!((r.terms[0].weight - 3.0 * 2f64.ln()).abs() < 1e-12);

        assert!(tfidf_rank(&seg(&[]), &corpus, 30).is_empty());
        let single = vec![target.clone()];
        assert!(tfidf_rank(&target, &single, 30).is_empty());
    }

    #[test]
    fn tfidf_order_and_truncation() {
        let a = seg(&["b b a a c"]);
        let corpus = vec![a.clone(), seg(&["z"])];
        let r = tfidf_rank(&a, &corpus, 2);
        let names: Vec<_> = r.terms.iter().map(|t| t.term.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    proptest! {
        #[test]
        fn split_partitions_posts(n in 0usize..200, cuts in prop::collection::btree_set(0u64..220, 0..8)) {
            let posts: Vec<usize> = (0..n).collect();
            let events: Vec<_> = cuts.iter().map(|&k| event(k, Direction::Positive)).collect();
            let segs = split_by_events(&posts, &events);
            let joined: Vec<usize> = segs.iter().flat_map(|s| s.posts.iter().copied()).collect();
            prop_assert_eq!(&joined, &posts);
            let mut next = 0;
            for s in &segs {
                prop_assert_eq!(s.start_index, next);
                prop_assert!(s.start_index <= s.end_index);
                prop_assert_eq!(s.len(), s.end_index - s.start_index + 1);
                next = s.end_index + 1;
            }
        }

        #[test]
        fn tfidf_weights_nonnegative_and_sorted(docs in prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 0..10), 1..5)) {
            let corpus: Vec<Segment<TokenBag>> = docs.iter().map(|d| {
                let refs: Vec<&str> = d.iter().map(String::as_str).collect();
                seg(&[&refs.join(" ")])
            }).collect();
            for target in &corpus {
                let r = tfidf_rank(target, &corpus, usize::MAX);
                prop_assert!(r.terms.iter().all(|t| t.weight > 0.0));
                prop_assert!(r.terms.windows(2).all(|w| w[0].weight > w[1].weight || (w[0].weight == w[1].weight && w[0].term < w[1].term)));
            }
        }
    }
}
