//! RFC 4180 CSV export and series import.
//!
//! Floats are written with six significant digits (`%g` style); timestamps
//! as RFC 3339 UTC with a `Z` suffix.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::detect::ChangeEvent;
use crate::ingest::parse_timestamp;
use crate::lexicon::ScoredPost;
use crate::offline::{HistogramBin, MovingAverage, ScoreSeries, SegmentationResult};
use crate::report::TermRanking;

pub const SERIES_TIMESTAMP_FORMAT: SecondsFormat = SecondsFormat::AutoSi;

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CsvError + '_ {
    move |source| CsvError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CsvError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CsvError::Io {
            path: path.display().to_string(),
            source,
        },
        other => CsvError::Malformed {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

pub(crate) fn timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SERIES_TIMESTAMP_FORMAT, true)
}

/// Six significant digits, trailing zeros trimmed, scientific notation
/// outside `1e-4 ≤ |x| < 1e6`.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let decimals = (5 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CsvError> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(BufWriter::new(file)))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CsvError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.into_inner()
        .map_err(|e| io_err(path)(e.into_error()))?
        .flush()
        .map_err(io_err(path))
}

pub fn export_series_csv(path: &Path, series: &ScoreSeries) -> Result<(), CsvError> {
    write_rows(
        path,
        &["timestamp", "value"],
        series
            .timestamps()
            .iter()
            .zip(series.values())
            .map(|(t, v)| [timestamp(t), format_float(*v)]),
    )
}

/// `seq,timestamp,score`, the same layout as a watch run's `scores.csv`.
pub fn export_scored_posts_csv(path: &Path, posts: &[ScoredPost]) -> Result<(), CsvError> {
    write_rows(
        path,
        &["seq", "timestamp", "score"],
        posts.iter().map(|p| {
            [
                p.seq.to_string(),
                timestamp(&p.created_at),
                p.score.to_string(),
            ]
        }),
    )
}

/// Absent positions are written as empty fields.
pub fn export_moving_average_csv(path: &Path, ma: &MovingAverage) -> Result<(), CsvError> {
    write_rows(
        path,
        &["timestamp", "value"],
        ma.timestamps
            .iter()
            .zip(&ma.values)
            .map(|(t, v)| [timestamp(t), v.map(format_float).unwrap_or_default()]),
    )
}

pub fn export_histogram_csv(path: &Path, bins: &[HistogramBin]) -> Result<(), CsvError> {
    write_rows(
        path,
        &["bin_low", "count"],
        bins.iter()
            .map(|b| [format_float(b.low), b.count.to_string()]),
    )
}

pub fn export_ranking_csv(path: &Path, ranking: &TermRanking) -> Result<(), CsvError> {
    write_rows(
        path,
        &["term", "weight", "count"],
        ranking
            .terms
            .iter()
            .map(|t| [t.term.clone(), format_float(t.weight), t.count.to_string()]),
    )
}

pub fn export_events_csv(path: &Path, events: &[ChangeEvent]) -> Result<(), CsvError> {
    write_rows(
        path,
        &[
            "index",
            "timestamp",
            "direction",
            "theta0_before",
            "theta0_after",
            "g_at_alarm",
        ],
        events.iter().map(|e| {
            [
                e.index.to_string(),
                timestamp(&e.timestamp),
                e.direction.as_str().to_owned(),
                format_float(e.theta0_before),
                format_float(e.theta0_after),
                format_float(e.g_at_alarm),
            ]
        }),
    )
}

/// One row per changepoint with the timestamp of the segment's last sample.
pub fn export_changepoints_csv(
    path: &Path,
    result: &SegmentationResult,
    series: &ScoreSeries,
) -> Result<(), CsvError> {
    write_rows(
        path,
        &["index", "timestamp", "mean_before", "mean_after"],
        result.changepoints.iter().enumerate().map(|(i, &cp)| {
            [
                cp.to_string(),
                series
                    .timestamps()
                    .get(cp - 1)
                    .map(timestamp)
                    .unwrap_or_default(),
                format_float(result.segment_means[i]),
                format_float(result.segment_means[i + 1]),
            ]
        }),
    )
}

/// Read a series from CSV with a header naming a `timestamp` column and a
/// `value` or `score` column (so both exported series and `scores.csv` work).
pub fn import_series_csv<R: Read>(reader: R) -> Result<ScoreSeries, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(reader);
    let malformed = |line: u64, reason: String| CsvError::Malformed { line, reason };
    let headers = rdr
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    let ts_col = headers
        .iter()
        .position(|h| h == "timestamp")
        .ok_or_else(|| malformed(1, "missing `timestamp` column".to_owned()))?;
    let val_col = headers
        .iter()
        .position(|h| h == "value" || h == "score")
        .ok_or_else(|| malformed(1, "missing `value` or `score` column".to_owned()))?;

    let mut values = Vec::new();
    let mut timestamps = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let ts = record.get(ts_col).unwrap_or_default();
        let t = parse_timestamp(ts).map_err(|e| malformed(line, e.to_string()))?;
        let raw = record.get(val_col).unwrap_or_default();
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| malformed(line, format!("`{raw}` is not a number")))?;
        if !v.is_finite() {
            return Err(malformed(line, format!("`{raw}` is not finite")));
        }
        if timestamps.last().is_some_and(|prev| t < *prev) {
            return Err(malformed(
                line,
                "timestamps must be non-decreasing".to_owned(),
            ));
        }
        values.push(v);
        timestamps.push(t);
    }
    ScoreSeries::new(values, timestamps).map_err(|e| malformed(0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::TermWeight;
    use chrono::TimeZone;
    use proptest::prelude::*;

    #[test]
    fn float_formatting() {
        let cases = [
            (0.0, "0"),
            (-0.0, "0"),
            (1.0, "1"),
            (-0.5, "-0.5"),
            (0.125, "0.125"),
            (3.0 * 2f64.ln(), "2.07944"),
            (20.000000001, "20"),
            (123456.7, "123457"),
            (999999.7, "1e6"),
            (1234567.0, "1.23457e6"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-5"),
            (-17.25, "-17.25"),
        ];
        for (x, want) in cases {
            assert_eq!(format_float(x), want, "{x}");
        }
    }

    #[test]
    fn series_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let t0 = Utc.with_ymd_and_hms(2018, 3, 15, 23, 59, 29).unwrap();
        let series = ScoreSeries::new(vec![1.0, -2.5], vec![t0, t0]).unwrap();
        export_series_csv(&path, &series).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "timestamp,value\r\n2018-03-15T23:59:29Z,1\r\n2018-03-15T23:59:29Z,-2.5\r\n"
        );
    }

    #[test]
    fn ranking_csv_keeps_order_and_quotes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let ranking = TermRanking {
            terms: vec![
                TermWeight {
                    term: "labour".into(),
                    weight: 4.5,
                    count: 3,
                },
                TermWeight {
                    term: "a,b".into(),
                    weight: 1.25,
                    count: 1,
                },
            ],
        };
        export_ranking_csv(&path, &ranking).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "term,weight,count\r\nlabour,4.5,3\r\n\"a,b\",1.25,1\r\n"
        );
    }

    #[test]
    fn import_reports_line_numbers() {
        let csv = "timestamp,value\n2018-03-15T00:00:00Z,1\n2018-03-15T00:00:01Z,abc\n";
        match import_series_csv(csv.as_bytes()) {
            Err(CsvError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let csv = "when,value\n";
        assert!(matches!(
            import_series_csv(csv.as_bytes()),
            Err(CsvError::Malformed { line: 1, .. })
        ));
        let csv = "timestamp,value\n2018-03-15T00:00:00Z,1,9\n";
        assert!(import_series_csv(csv.as_bytes()).is_err());
    }

    #[test]
    fn import_accepts_scores_layout() {
        let csv = "seq,timestamp,score\n0,2018-03-15T00:00:00Z,-2\n1,2018-03-15T00:00:05Z,3\n";
        let s = import_series_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.values(), &[-2.0, 3.0]);
    }

    #[test]
    fn unwritable_path() {
        let series = ScoreSeries::from_values(vec![1.0]);
        let err = export_series_csv(Path::new("/nonexistent-dir/x.csv"), &series).unwrap_err();
        assert!(matches!(err, CsvError::Io { .. }));
    }

    proptest! {
        #[test]
        fn series_round_trip_six_digits(values in prop::collection::vec(-1e7f64..1e7, 1..50)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.csv");
            let series = ScoreSeries::from_values(values.clone());
            export_series_csv(&path, &series).unwrap();
            let back = import_series_csv(File::open(&path).unwrap()).unwrap();
            prop_assert_eq!(back.timestamps(), series.timestamps());
            for (a, b) in values.iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 5e-6 * a.abs().max(1e-300), "{} vs {}", a, b);
            }
        }

        #[test]
        fn format_float_is_six_significant(x in -1e12f64..1e12) {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= 5e-6 * x.abs() + f64::MIN_POSITIVE);
            let digits = s.split('e').next().unwrap().chars().filter(char::is_ascii_digit).collect::<String>();
            prop_assert!(digits.trim_start_matches('0').len() <= 6, "{}", s);
        }
    }
}
