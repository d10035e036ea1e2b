//! Long-format CSV ingestion and emission.
//!
//! Input rows are `location,signal,date,value`. Labels keep their order of
//! first appearance; the time axis spans every calendar day from the first
//! to the last observed date.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StelarError};
use crate::tensor::DenseTensor3;

/// One observation of the input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRecord {
    pub location: String,
    pub signal: String,
    pub date: NaiveDate,
    pub value: f64,
}

/// A tensor together with its axis labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    pub tensor: DenseTensor3,
    pub location_labels: Vec<String>,
    pub signal_labels: Vec<String>,
    pub start_date: NaiveDate,
}

impl TensorBundle {
    pub fn new(
        tensor: DenseTensor3,
        location_labels: Vec<String>,
        signal_labels: Vec<String>,
        start_date: NaiveDate,
    ) -> Result<Self> {
        let (m, n, _) = tensor.dims();
        if location_labels.len() != m || signal_labels.len() != n {
            return Err(StelarError::usage(format!(
                "{} location and {} signal labels for a {m}x{n} tensor",
                location_labels.len(),
                signal_labels.len()
            )));
        }
        Ok(TensorBundle {
            tensor,
            location_labels,
            signal_labels,
            start_date,
        })
    }

    /// Date of zero-based time index `t`.
    pub fn date(&self, t: usize) -> NaiveDate {
        offset_date(self.start_date, t)
    }

    pub fn date_axis(&self) -> Vec<NaiveDate> {
        (0..self.tensor.len_time()).map(|t| self.date(t)).collect()
    }
}

pub fn offset_date(start: NaiveDate, days: usize) -> NaiveDate {
    start
        .checked_add_days(Days::new(days as u64))
        .expect("date offset within calendar range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Missing (location, signal, date) cells become 0.
    Zero,
    /// Any missing cell is a data error.
    Error,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    location: String,
    signal: String,
    date: String,
    value: f64,
}

pub fn ingest_csv(path: &Path, fill: FillPolicy) -> Result<TensorBundle> {
    let file = File::open(path)
        .map_err(|e| StelarError::data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, fill)
}

pub fn read_csv<R: Read>(reader: R, fill: FillPolicy) -> Result<TensorBundle> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| StelarError::data(format!("line 1: unreadable header: {e}")))?
        .clone();
    let expected = ["location", "signal", "date", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(StelarError::data(format!(
            "line 1: header must be `location,signal,date,value`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut locations: Vec<String> = Vec::new();
    let mut signals: Vec<String> = Vec::new();
    let mut loc_index: HashMap<String, usize> = HashMap::new();
    let mut sig_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize, NaiveDate), (f64, u64)> = HashMap::new();

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            StelarError::data(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: RawRecord = record
            .deserialize(Some(&headers))
            .map_err(|e| StelarError::data(format!("line {line}: {e}")))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|e| {
            StelarError::data(format!("line {line}: bad date `{}`: {e}", row.date))
        })?;
        if !row.value.is_finite() || row.value < 0.0 {
            return Err(StelarError::data(format!(
                "line {line}: value must be finite and nonnegative, got {}",
                row.value
            )));
        }
        let li = *loc_index.entry(row.location.clone()).or_insert_with(|| {
            locations.push(row.location.clone());
            locations.len() - 1
        });
        let si = *sig_index.entry(row.signal.clone()).or_insert_with(|| {
            signals.push(row.signal.clone());
            signals.len() - 1
        });
        if let Some((_, first)) = cells.insert((li, si, date), (row.value, line)) {
            return Err(StelarError::data(format!(
                "line {line}: duplicate entry for ({}, {}, {date}), first seen on line {first}",
                row.location, row.signal
            )));
        }
    }

    if cells.is_empty() {
        return Err(StelarError::data("CSV contains no data rows"));
    }
    let start = cells.keys().map(|k| k.2).min().expect("nonempty");
    let end = cells.keys().map(|k| k.2).max().expect("nonempty");
    let len = (end - start).num_days() as usize + 1;
    let dims = (locations.len(), signals.len(), len);
    let mut data = vec![0.0; dims.0 * dims.1 * dims.2];
    for (&(li, si, date), &(value, _)) in &cells {
        let t = (date - start).num_days() as usize;
        data[(li * dims.1 + si) * len + t] = value;
    }
    let missing = dims.0 * dims.1 * dims.2 - cells.len();
    if missing > 0 && fill == FillPolicy::Error {
        let gap = first_missing(&cells, dims, start).expect("a cell is missing");
        return Err(StelarError::data(format!(
            "{missing} missing cells (first: {}, {}, {}); use zero fill to accept gaps",
            locations[gap.0], signals[gap.1], gap.2
        )));
    }
    TensorBundle::new(DenseTensor3::new(dims, data)?, locations, signals, start)
}

fn first_missing(
    cells: &HashMap<(usize, usize, NaiveDate), (f64, u64)>,
    dims: (usize, usize, usize),
    start: NaiveDate,
) -> Option<(usize, usize, NaiveDate)> {
    for li in 0..dims.0 {
        for si in 0..dims.1 {
            for t in 0..dims.2 {
                let d = offset_date(start, t);
                if !cells.contains_key(&(li, si, d)) {
                    return Some((li, si, d));
                }
            }
        }
    }
    None
}

/// Writes every cell of the bundle as a long-format row.
pub fn write_csv<W: Write>(bundle: &TensorBundle, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let (m, n, l) = bundle.tensor.dims();
    for i in 0..m {
        for j in 0..n {
            for t in 0..l {
                wtr.serialize(LongRecord {
                    location: bundle.location_labels[i].clone(),
                    signal: bundle.signal_labels[j].clone(),
                    date: bundle.date(t),
                    value: bundle.tensor.get(i, j, t),
                })
                .map_err(csv_err)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn emit_csv(bundle: &TensorBundle, path: &Path) -> Result<()> {
    write_csv(bundle, File::create(path)?)
}

/// Writes forecast slabs as `location,signal,date,value_predicted`; the
/// first slab is dated `first_date`.
pub fn write_forecast_csv<W: Write>(
    forecast: &DenseTensor3,
    location_labels: &[String],
    signal_labels: &[String],
    first_date: NaiveDate,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["location", "signal", "date", "value_predicted"])
        .map_err(csv_err)?;
    let (m, n, l) = forecast.dims();
    for i in 0..m {
        for j in 0..n {
            for t in 0..l {
                wtr.write_record([
                    location_labels[i].as_str(),
                    signal_labels[j].as_str(),
                    &offset_date(first_date, t).to_string(),
                    &forecast.get(i, j, t).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> StelarError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => StelarError::Io(io),
        other => StelarError::data(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, fill: FillPolicy) -> Result<TensorBundle> {
        read_csv(text.as_bytes(), fill)
    }

    #[test]
    fn fully_specified_grid() {
        let text = "location,signal,date,value\n\
                    a,cases,2021-01-01,1\n\
                    a,cases,2021-01-02,2\n\
                    a,cases,2021-01-03,3\n\
                    b,cases,2021-01-01,4\n\
                    b,cases,2021-01-02,5\n\
                    b,cases,2021-01-03,6.5\n";
        let bundle = parse(text, FillPolicy::Error).unwrap();
        assert_eq!(bundle.tensor.dims(), (2, 1, 3));
        assert_eq!(bundle.tensor.fiber(0, 0), &[1.0, 2.0, 3.0]);
        assert_eq!(bundle.tensor.fiber(1, 0), &[4.0, 5.0, 6.5]);
        assert_eq!(bundle.location_labels, vec!["a", "b"]);
        assert_eq!(bundle.start_date, NaiveDate::from_ymd_opt(2021, 1, 1).unwrap());
    }

    #[test]
    fn missing_cell_fill_policies() {
        let text = "location,signal,date,value\n\
                    a,x,2021-01-01,1\n\
                    a,x,2021-01-03,3\n\
                    a,y,2021-01-01,1\n\
                    a,y,2021-01-02,1\n\
                    a,y,2021-01-03,1\n";
        let bundle = parse(text, FillPolicy::Zero).unwrap();
        assert_eq!(bundle.tensor.fiber(0, 0), &[1.0, 0.0, 3.0]);
        let err = parse(text, FillPolicy::Error).unwrap_err();
        assert!(matches!(err, StelarError::Data(_)));
        assert!(err.to_string().contains("2021-01-02"));
    }

    #[test]
    fn duplicate_row_reports_line() {
        let text = "location,signal,date,value\n\
                    a,x,2021-01-01,1\n\
                    a,x,2021-01-02,3\n\
                    a,x,2021-01-01,2\n";
        let err = parse(text, FillPolicy::Zero).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn negative_and_malformed_values() {
        let neg = "location,signal,date,value\na,x,2021-01-01,-1\n";
        assert!(parse(neg, FillPolicy::Zero).unwrap_err().to_string().contains("line 2"));
        let bad = "location,signal,date,value\na,x,2021-01-01,1\na,x,2021-01-02,abc\n";
        let err = parse(bad, FillPolicy::Zero).unwrap_err();
        assert!(matches!(err, StelarError::Data(_)));
        assert!(err.to_string().contains("line 3"), "{err}");
        let date = "location,signal,date,value\na,x,01/02/2021,1\n";
        assert!(parse(date, FillPolicy::Zero).unwrap_err().to_string().contains("bad date"));
        let header = "loc,signal,date,value\na,x,2021-01-01,1\n";
        assert!(parse(header, FillPolicy::Zero).is_err());
        assert!(parse("location,signal,date,value\n", FillPolicy::Zero).is_err());
    }

    #[test]
    fn emit_then_ingest_round_trips() {
        let tensor = DenseTensor3::from_fn((2, 3, 4), |m, n, t| (m * 100 + n * 10 + t) as f64 / 7.0)
            .unwrap();
        let bundle = TensorBundle::new(
            tensor,
            vec!["z".into(), "a".into()],
            vec!["s2".into(), "s1".into(), "s0".into()],
            NaiveDate::from_ymd_opt(2020, 12, 30).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&bundle, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), FillPolicy::Error).unwrap();
        assert_eq!(back, bundle);
    }
}
