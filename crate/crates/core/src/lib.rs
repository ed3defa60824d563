//! Streaming sentiment change detection for short-text feeds.
//!
//! Posts flow through [`ingest`] → [`textprep`] → [`lexicon`] scoring →
//! [`detect`] (two-sided CUSUM with adaptive reset). [`offline`] provides
//! retrospective analyses of a finished score series, and [`report`] turns
//! either into CSV/SVG artifacts and per-segment term rankings.

pub mod detect;
pub mod ingest;
pub mod lexicon;
pub mod offline;
pub mod report;
pub mod run;
pub mod synthetic;
pub mod textprep;
