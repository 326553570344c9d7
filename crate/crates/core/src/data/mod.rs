//! Load-series ingestion, aggregation, windowing, and synthesis.
//!
//! Input CSV schema (UTF-8, header required):
//! `timestamp,household_id,kw` with ISO-8601 hourly timestamps, e.g.
//! `2013-01-01T00:00:00,26,1.234`. The synthetic exporter writes the same
//! schema, so licensed data can be dropped in unchanged.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

mod synth;
mod window;

pub use synth::{synth_generate, SynthSpec};
pub use window::{
    make_windows, split_and_standardize, Scaler, SplitTag, Window, WindowDataset,
};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One household's hourly load series. Timestamps are implicit: the series
/// starts at `start` and advances one hour per value.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadSeries {
    pub household: String,
    pub start: NaiveDateTime,
    pub values: Vec<f64>,
}

impl LoadSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours(i as i64)
    }

    pub fn end(&self) -> NaiveDateTime {
        self.timestamp(self.values.len())
    }
}

/// Parse a load CSV into one gap-checked series per household, in first
/// appearance order.
pub fn parse_csv(path: &Path) -> Result<Vec<LoadSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?;

    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?;
        let expected = ["timestamp", "household_id", "kw"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Csv {
                line: 1,
                msg: format!("expected header 'timestamp,household_id,kw', got '{}'", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, Vec<(NaiveDateTime, f64)>> =
        std::collections::HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::Csv { line, msg: format!("expected 3 fields, got {}", record.len()) });
        }
        let ts = NaiveDateTime::parse_from_str(&record[0], TIMESTAMP_FORMAT)
            .map_err(|e| Error::Csv { line, msg: format!("bad timestamp '{}': {e}", &record[0]) })?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(Error::Csv { line, msg: format!("timestamp '{}' is not on the hour", &record[0]) });
        }
        let id = record[1].to_string();
        let kw: f64 = record[2]
            .parse()
            .map_err(|e| Error::Csv { line, msg: format!("bad power value '{}': {e}", &record[2]) })?;
        if !kw.is_finite() {
            return Err(Error::Csv { line, msg: format!("power value '{}' is not finite", &record[2]) });
        }
        if kw < 0.0 {
            return Err(Error::Csv { line, msg: format!("negative power {kw} for household {id}") });
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((ts, kw));
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut series = rows.remove(&id).unwrap();
        series.sort_by_key(|(ts, _)| *ts);
        for pair in series.windows(2) {
            let expected = pair[0].0 + chrono::Duration::hours(1);
            match pair[1].0.cmp(&expected) {
                std::cmp::Ordering::Equal => {}
                std::cmp::Ordering::Less => {
                    return Err(Error::Series(format!(
                        "household {id}: duplicate timestamp {}",
                        pair[1].0.format(TIMESTAMP_FORMAT)
                    )));
                }
                std::cmp::Ordering::Greater => {
                    return Err(Error::Series(format!(
                        "household {id}: missing timestamp {}",
                        expected.format(TIMESTAMP_FORMAT)
                    )));
                }
            }
        }
        let start = series[0].0;
        out.push(LoadSeries {
            household: id,
            start,
            values: series.into_iter().map(|(_, v)| v).collect(),
        });
    }
    Ok(out)
}

/// Write series in the documented schema. Values use the shortest exact
/// decimal representation, so a write/parse round trip is lossless.
pub fn write_csv(series: &[LoadSeries], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "timestamp,household_id,kw")?;
    for s in series {
        for (i, v) in s.values.iter().enumerate() {
            writeln!(file, "{},{},{}", s.timestamp(i).format(TIMESTAMP_FORMAT), s.household, v)?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Pointwise sum of `n` seed-selected households.
pub fn aggregate(series: &[LoadSeries], n: usize, seed: u64) -> Result<LoadSeries> {
    if n == 0 || n > series.len() {
        return Err(Error::Config(format!(
            "cannot aggregate {n} households out of {}",
            series.len()
        )));
    }
    let first = &series[0];
    if series.iter().any(|s| s.start != first.start || s.len() != first.len()) {
        return Err(Error::Series("aggregate requires identical time ranges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, series.len(), n);
    let mut values = vec![0.0; first.len()];
    for idx in chosen.iter() {
        for (acc, v) in values.iter_mut().zip(&series[idx].values) {
            *acc += v;
        }
    }
    Ok(LoadSeries {
        household: format!("aggregate-{n}"),
        start: first.start,
        values,
    })
}

/// Midnight of a calendar date.
pub fn midnight(date: NaiveDate) -> NaiveDateTime {
    date.and_hms_opt(0, 0, 0).expect("midnight exists")
}

/// Hour of week in `0..168`, Monday 00:00 = 0.
pub(crate) fn hour_of_week(ts: NaiveDateTime) -> u32 {
    ts.weekday().num_days_from_monday() * 24 + ts.hour()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn parses_two_consecutive_hours() {
        let f = write_tmp(
            "timestamp,household_id,kw\n2013-01-01T00:00:00,26,1.5\n2013-01-01T01:00:00,26,2.0\n",
        );
        let series = parse_csv(f.path()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].household, "26");
        assert_eq!(series[0].values, vec![1.5, 2.0]);
    }

    #[test]
    fn reports_missing_timestamp() {
        let f = write_tmp(
            "timestamp,household_id,kw\n2013-01-01T00:00:00,1,1.0\n2013-01-01T02:00:00,1,1.0\n",
        );
        let err = parse_csv(f.path()).unwrap_err();
        assert!(err.to_string().contains("2013-01-01T01:00:00"), "{err}");
    }

    #[test]
    fn reports_duplicate_timestamp() {
        let f = write_tmp(
            "timestamp,household_id,kw\n2013-01-01T00:00:00,1,1.0\n2013-01-01T00:00:00,1,2.0\n",
        );
        let err = parse_csv(f.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn rejects_negative_power_with_line() {
        let f = write_tmp("timestamp,household_id,kw\n2013-01-01T00:00:00,1,-0.5\n");
        let err = parse_csv(f.path()).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_malformed_row_with_line() {
        let f = write_tmp("timestamp,household_id,kw\n2013-01-01T00:00:00,1,1.0\nnot-a-date,2,1.0\n");
        let err = parse_csv(f.path()).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
    }

    #[test]
    fn synthetic_export_reparses_identically() {
        let spec = SynthSpec { households: 6, days: 4, ..SynthSpec::default() };
        let series = synth_generate(&spec).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&series, f.path()).unwrap();
        let parsed = parse_csv(f.path()).unwrap();
        assert_eq!(parsed, series);
    }

    #[test]
    fn aggregate_single_household_is_unchanged() {
        let spec = SynthSpec { households: 5, days: 3, ..SynthSpec::default() };
        let series = synth_generate(&spec).unwrap();
        let agg = aggregate(&series, 1, 11).unwrap();
        assert!(series.iter().any(|s| s.values == agg.values));
    }

    #[test]
    fn aggregate_sums_pointwise() {
        let start = midnight(NaiveDate::from_ymd_opt(2013, 1, 1).unwrap());
        let a = LoadSeries { household: "a".into(), start, values: vec![1.0; 48] };
        let b = LoadSeries { household: "b".into(), start, values: vec![2.0; 48] };
        let agg = aggregate(&[a, b], 2, 0).unwrap();
        assert!(agg.values.iter().all(|v| *v == 3.0));
    }

    #[test]
    fn aggregate_of_everything_conserves_total() {
        let spec = SynthSpec { households: 7, days: 5, ..SynthSpec::default() };
        let series = synth_generate(&spec).unwrap();
        let agg = aggregate(&series, 7, 3).unwrap();
        let total: f64 = agg.values.iter().sum();
        let expected: f64 = series.iter().flat_map(|s| s.values.iter()).sum();
        assert!((total - expected).abs() < 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn aggregate_rejects_mismatched_ranges() {
        let start = midnight(NaiveDate::from_ymd_opt(2013, 1, 1).unwrap());
        let a = LoadSeries { household: "a".into(), start, values: vec![1.0; 48] };
        let b = LoadSeries { household: "b".into(), start, values: vec![2.0; 24] };
        assert!(aggregate(&[a, b], 2, 0).is_err());
    }
}
