//! Meter CSV (`timestamp,power_kw[,label]`) reading, gap filling and writing.

use std::io::{Read, Write};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::format::{format_timestamp, parse_timestamp, real9};
use crate::memory::Reading;

/// Longest run of missing minutes that is forward-filled; longer gaps split
/// the series.
pub const MAX_FILL_MINUTES: i64 = 60;

/// One parsed CSV row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Row {
    /// 1-based line in the source, header included.
    pub line: usize,
    pub t: i64,
    pub power: f64,
    pub label: Option<u8>,
}

/// What the gap filler produced for one input row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ingested {
    Sample { reading: Reading, label: Option<u8> },
    /// The gap before the next sample was too long to fill.
    Break,
}

/// Forward-fills short gaps in a minute series and reports long ones.
#[derive(Clone, Debug)]
pub struct GapFiller {
    max_fill: i64,
    last: Option<(Reading, Option<u8>)>,
}

impl Default for GapFiller {
    fn default() -> Self {
        Self::new(MAX_FILL_MINUTES)
    }
}

impl GapFiller {
    pub fn new(max_fill: i64) -> Self {
        Self {
            max_fill,
            last: None,
        }
    }

    /// Appends the samples `row` expands to (fills first, then the row
    /// itself) to `out`.
    pub fn feed(&mut self, row: Row, out: &mut Vec<Ingested>) -> Result<()> {
        if let Some((prev, prev_label)) = self.last {
            let step = row.t - prev.t;
            if step <= 0 {
                return Err(Error::Parse {
                    line: row.line,
                    msg: format!(
                        "timestamp {} is not after the previous row ({})",
                        format_timestamp(row.t),
                        format_timestamp(prev.t)
                    ),
                });
            }
            let missing = step - 1;
            if missing > self.max_fill {
                out.push(Ingested::Break);
            } else {
                for k in 1..=missing {
                    out.push(Ingested::Sample {
                        reading: Reading {
                            t: prev.t + k,
                            power: prev.power,
                            filled: true,
                        },
                        label: prev_label,
                    });
                }
            }
        }
        let reading = Reading::new(row.t, row.power);
        self.last = Some((reading, row.label));
        out.push(Ingested::Sample {
            reading,
            label: row.label,
        });
        Ok(())
    }
}

/// Lazily parsed rows of a meter CSV.
pub struct MeterRows<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    has_label: bool,
}

impl<R: Read> MeterRows<R> {
    pub fn new(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(source);
        let headers = reader.headers().map_err(|e| csv_err(e, 1))?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let has_label = match names.as_slice() {
            ["timestamp", "power_kw"] => false,
            ["timestamp", "power_kw", "label"] => true,
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header timestamp,power_kw[,label], got {names:?}"),
                })
            }
        };
        Ok(Self {
            records: reader.into_records(),
            has_label,
        })
    }

    pub fn has_label(&self) -> bool {
        self.has_label
    }
}

fn csv_err(e: csv::Error, fallback_line: usize) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

impl<R: Read> Iterator for MeterRows<R> {
    type Item = Result<Row>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = match self.records.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(csv_err(e, 0))),
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        Some(parse_row(&record, line, self.has_label))
    }
}

fn parse_row(record: &csv::StringRecord, line: usize, has_label: bool) -> Result<Row> {
    let err = |msg: String| Error::Parse { line, msg };
    let want = if has_label { 3 } else { 2 };
    if record.len() != want {
        return Err(err(format!("expected {want} fields, found {}", record.len())));
    }
    let t = parse_timestamp(&record[0]).map_err(|e| err(e.to_string()))?;
    let power: f64 = record[1]
        .parse()
        .map_err(|_| err(format!("power_kw {:?} is not a number", &record[1])))?;
    if !power.is_finite() {
        return Err(err(format!("power_kw {power} is not finite")));
    }
    let label = if has_label {
        match &record[2] {
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(err(format!("label {other:?} is not 0 or 1"))),
        }
    } else {
        None
    };
    Ok(Row {
        line,
        t,
        power,
        label,
    })
}

/// A fully read meter file. Forward-filled readings carry `filled = true`;
/// `segments` are index ranges separated by unfillable gaps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeterSeries {
    pub readings: Vec<Reading>,
    pub labels: Option<Vec<u8>>,
    pub segments: Vec<Range<usize>>,
}

impl MeterSeries {
    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.readings.iter().map(|r| r.power).collect()
    }
}

pub fn read_meter_csv(source: impl Read) -> Result<MeterSeries> {
    let rows = MeterRows::new(source)?;
    let has_label = rows.has_label();
    let mut series = MeterSeries {
        labels: has_label.then(Vec::new),
        ..MeterSeries::default()
    };
    let mut filler = GapFiller::default();
    let mut seg_start = 0;
    let mut buf = Vec::new();
    for row in rows {
        buf.clear();
        filler.feed(row?, &mut buf)?;
        for item in &buf {
            match *item {
                Ingested::Break => {
                    let end = series.readings.len();
                    series.segments.push(seg_start..end);
                    seg_start = end;
                }
                Ingested::Sample { reading, label } => {
                    series.readings.push(reading);
                    if let (Some(labels), Some(l)) = (series.labels.as_mut(), label) {
                        labels.push(l);
                    }
                }
            }
        }
    }
    if series.readings.len() > seg_start {
        series.segments.push(seg_start..series.readings.len());
    }
    let filled = series.readings.iter().filter(|r| r.filled).count();
    if filled > 0 {
        log::info!("forward-filled {filled} missing minutes");
    }
    if series.segments.len() > 1 {
        log::warn!(
            "series split into {} segments at gaps longer than {MAX_FILL_MINUTES} minutes",
            series.segments.len()
        );
    }
    Ok(series)
}

/// Writes readings (and labels if given) in the meter CSV schema with powers
/// at 9 significant digits.
pub fn write_meter_csv(
    mut sink: impl Write,
    readings: &[Reading],
    labels: Option<&[u8]>,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != readings.len() {
            return Err(Error::Shape {
                op: "write_meter_csv",
                detail: format!("{} readings but {} labels", readings.len(), l.len()),
            });
        }
        writeln!(sink, "timestamp,power_kw,label")?;
    } else {
        writeln!(sink, "timestamp,power_kw")?;
    }
    for (i, r) in readings.iter().enumerate() {
        let ts = format_timestamp(r.t);
        match labels {
            Some(l) => writeln!(sink, "{ts},{},{}", real9(r.power), l[i])?,
            None => writeln!(sink, "{ts},{}", real9(r.power))?,
        }
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<MeterSeries> {
        read_meter_csv(s.as_bytes())
    }

    #[test]
    fn two_rows() {
        let s = parse("timestamp,power_kw\n2024-01-01T00:00:00Z,0.5\n2024-01-01T00:01:00Z,0.7\n")
            .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.powers(), vec![0.5, 0.7]);
        assert!(s.labels.is_none());
        assert_eq!(s.segments, vec![0..2]);
        assert_eq!(s.readings[1].t - s.readings[0].t, 1);
    }

    #[test]
    fn short_gap_is_filled() {
        let s = parse(
            "timestamp,power_kw,label\n\
             2024-01-01T00:00:00Z,0.5,0\n\
             2024-01-01T00:02:00Z,0.9,1\n",
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.readings[1].filled);
        assert_eq!(s.readings[1].power, 0.5);
        assert!(!s.readings[2].filled);
        assert_eq!(s.labels.unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn long_gap_splits() {
        let s = parse(
            "timestamp,power_kw\n\
             2024-01-01T00:00:00Z,0.5\n\
             2024-01-01T01:01:00Z,0.6\n\
             2024-01-01T03:00:00Z,0.7\n",
        )
        .unwrap();
        // 60 missing minutes are filled, 118 are not
        assert_eq!(s.len(), 63);
        assert_eq!(s.segments, vec![0..62, 62..63]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("timestamp,power_kw\n2024-01-01T00:00:00Z,0.5\n2024-01-01T00:01:00Z,abc\n")
            .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse("timestamp,power_kw\n2024-01-01T00:05:00Z,0.5\n2024-01-01T00:01:00Z,1\n")
            .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(parse("time,kw\n").is_err());
        let e = parse("timestamp,power_kw,label\n2024-01-01T00:00:00Z,0.5,2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        assert!(parse("timestamp,power_kw\n2024-01-01T00:00:00Z,NaN\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_at_nine_digits(
            powers in prop::collection::vec(-1e4f64..1e4, 1..50),
            with_labels in any::<bool>(),
        ) {
            let readings: Vec<Reading> = powers
                .iter()
                .enumerate()
                .map(|(i, &p)| Reading::new(28_401_120 + i as i64, p))
                .collect();
            let labels: Vec<u8> = (0..readings.len()).map(|i| (i % 3 == 0) as u8).collect();
            let mut buf = Vec::new();
            write_meter_csv(&mut buf, &readings, with_labels.then_some(labels.as_slice())).unwrap();
            let back = read_meter_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), readings.len());
            for (a, b) in back.readings.iter().zip(&readings) {
                prop_assert_eq!(a.t, b.t);
                let rounded: f64 = format!("{:.8e}", b.power).parse().unwrap();
                prop_assert_eq!(a.power, rounded);
            }
            if with_labels {
                prop_assert_eq!(back.labels.unwrap(), labels);
            }
        }
    }
}
