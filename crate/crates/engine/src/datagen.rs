//! Deterministic stream generation and CSV ingestion.
//!
//! CSV layouts (no header row, `,` separated, `.` decimal point, LF):
//!
//! | schema              | columns                                                        |
//! |---------------------|----------------------------------------------------------------|
//! | `finance`           | `t,id,broker_id,volume,price,side` with side `BID`/`ASK`        |
//! | `lineitem`          | `quantity,extendedprice,discount,tax,returnflag,linestatus,shipdate` (date `YYYY-MM-DD`) |
//! | `partsupp-supplier` | `PS,partkey,suppkey,supplycost,availqty` or `S,suppkey`         |

#![allow(clippy::inconsistent_digit_grouping)] // prices are written as whole.cents

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::EngineError;
use crate::event::{format_date, parse_date, Event, LineitemRow, OrderbookEvent, PartsuppRow, Schema, Side, SupplierRow};
use crate::fixed::Fixed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid stream spec: {0}")]
    InvalidSpec(&'static str),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("row of kind {kind} cannot be written as {schema}")]
    WrongSchema { kind: String, schema: Schema },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub schema: Schema,
    pub base_count: usize,
    pub seed: u64,
    pub iterations: usize,
}

impl StreamSpec {
    pub fn new(schema: Schema, base_count: usize, seed: u64, iterations: usize) -> Self {
        StreamSpec { schema, base_count, seed, iterations }
    }

    pub fn total(&self) -> usize {
        self.base_count * self.iterations
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.base_count == 0 {
            return Err(DataError::InvalidSpec("base_count must be positive"));
        }
        if self.iterations == 0 {
            return Err(DataError::InvalidSpec("iterations must be positive"));
        }
        if self.base_count.checked_mul(self.iterations).is_none() {
            return Err(DataError::InvalidSpec("base_count * iterations overflows"));
        }
        Ok(())
    }
}

/// Orderbook price band in whole units; wider than the axfinder gap so that
/// both matching and non-matching pairs occur.
const PRICE_MIN_CENTS: i64 = 100_00;
const PRICE_MAX_CENTS: i64 = 3_100_00;
const VOLUME_MAX_CENTS: i64 = 1_000_00;
const BROKERS: i64 = 10;

/// Days since epoch for 1992-01-02 ..= 1998-12-01, the TPC-H shipdate range.
const SHIPDATE_MIN: i32 = 8036;
const SHIPDATE_MAX: i32 = 10561;

/// Builds `base_count` rows from `seed`, then replays them `iterations` times.
pub fn generate(spec: &StreamSpec) -> Result<Vec<Event>, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base: Vec<Event> = match spec.schema {
        Schema::Finance => (0..spec.base_count).map(|i| finance_row(&mut rng, i)).collect(),
        Schema::Lineitem => (0..spec.base_count).map(|_| lineitem_row(&mut rng)).collect(),
        Schema::PartsuppSupplier => partsupp_rows(&mut rng, spec.base_count),
    };
    let mut out = Vec::with_capacity(spec.total());
    for _ in 0..spec.iterations {
        out.extend_from_slice(&base);
    }
    Ok(out)
}

fn cents(v: i64) -> Fixed {
    Fixed::from_raw(v * 100)
}

fn finance_row(rng: &mut ChaCha8Rng, i: usize) -> Event {
    Event::Orderbook(OrderbookEvent {
        t: Fixed::from_int(i as i64),
        id: i as i64 + 1,
        broker_id: rng.gen_range(1..=BROKERS),
        volume: cents(rng.gen_range(1_00..=VOLUME_MAX_CENTS)),
        price: cents(rng.gen_range(PRICE_MIN_CENTS..=PRICE_MAX_CENTS)),
        side: if i % 2 == 0 { Side::Bid } else { Side::Ask },
    })
}

fn lineitem_row(rng: &mut ChaCha8Rng) -> Event {
    let quantity = rng.gen_range(1..=50);
    // extendedprice = quantity * retail price, retail in [900, 2100)
    let retail_cents = rng.gen_range(900_00..2_100_00);
    Event::Lineitem(LineitemRow {
        quantity: Fixed::from_int(quantity),
        extendedprice: cents(quantity * retail_cents),
        discount: cents(rng.gen_range(0..=10)),
        tax: cents(rng.gen_range(0..=8)),
        returnflag: ['A', 'N', 'R'][rng.gen_range(0..3)],
        linestatus: ['F', 'O'][rng.gen_range(0..2)],
        shipdate: rng.gen_range(SHIPDATE_MIN..=SHIPDATE_MAX),
    })
}

/// Roughly one supplier row per ten partsupp rows; key ranges are small so
/// that joins hit.
fn partsupp_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Event> {
    let suppliers = (n as i64 / 20).max(1);
    let parts = (n as i64 / 4).max(1);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                Event::Supplier(SupplierRow { suppkey: rng.gen_range(1..=suppliers) })
            } else {
                Event::Partsupp(PartsuppRow {
                    partkey: rng.gen_range(1..=parts),
                    suppkey: rng.gen_range(1..=suppliers),
                    supplycost: cents(rng.gen_range(1_00..=1_000_00)),
                    availqty: rng.gen_range(1..=9999),
                })
            }
        })
        .collect()
}

pub fn load_csv(path: impl AsRef<Path>, schema: Schema) -> Result<Vec<Event>, DataError> {
    read_csv(File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: Schema) -> Result<Vec<Event>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| DataError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let fields: Vec<&str> = record.iter().collect();
        let event = parse_row(schema, &fields)
            .and_then(|e| e.validate().map(|_| e))
            .map_err(|e| DataError::Malformed { line, message: e.to_string() })?;
        out.push(event);
    }
    Ok(out)
}

fn expect_columns(fields: &[&str], n: usize) -> Result<(), EngineError> {
    if fields.len() != n {
        return Err(EngineError::Parse(format!("expected {n} columns, found {}", fields.len())));
    }
    Ok(())
}

fn int(s: &str) -> Result<i64, EngineError> {
    s.parse().map_err(|_| EngineError::Parse(format!("invalid integer `{s}`")))
}

fn flag(s: &str) -> Result<char, EngineError> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(EngineError::Parse(format!("expected single character, found `{s}`"))),
    }
}

fn parse_row(schema: Schema, f: &[&str]) -> Result<Event, EngineError> {
    match schema {
        Schema::Finance => {
            expect_columns(f, 6)?;
            Ok(Event::Orderbook(OrderbookEvent {
                t: f[0].parse()?,
                id: int(f[1])?,
                broker_id: int(f[2])?,
                volume: f[3].parse()?,
                price: f[4].parse()?,
                side: f[5].parse()?,
            }))
        }
        Schema::Lineitem => {
            expect_columns(f, 7)?;
            Ok(Event::Lineitem(LineitemRow {
                quantity: f[0].parse()?,
                extendedprice: f[1].parse()?,
                discount: f[2].parse()?,
                tax: f[3].parse()?,
                returnflag: flag(f[4])?,
                linestatus: flag(f[5])?,
                shipdate: parse_date(f[6])?,
            }))
        }
        Schema::PartsuppSupplier => match f.first().copied() {
            Some("PS") => {
                expect_columns(f, 5)?;
                Ok(Event::Partsupp(PartsuppRow {
                    partkey: int(f[1])?,
                    suppkey: int(f[2])?,
                    supplycost: f[3].parse()?,
                    availqty: int(f[4])?,
                }))
            }
            Some("S") => {
                expect_columns(f, 2)?;
                Ok(Event::Supplier(SupplierRow { suppkey: int(f[1])? }))
            }
            other => Err(EngineError::Parse(format!("unknown row tag {other:?}, expected PS or S"))),
        },
    }
}

pub fn write_csv<W: Write>(writer: W, schema: Schema, events: &[Event]) -> Result<(), DataError> {
    let mut w = BufWriter::new(writer);
    for e in events {
        if !schema.accepts(e.kind()) {
            return Err(DataError::WrongSchema { kind: e.kind().to_string(), schema });
        }
        match e {
            Event::Orderbook(o) => writeln!(
                w,
                "{},{},{},{},{},{}",
                o.t,
                o.id,
                o.broker_id,
                o.volume,
                o.price,
                o.side.as_str()
            )?,
            Event::Lineitem(l) => writeln!(
                w,
                "{},{},{},{},{},{},{}",
                l.quantity,
                l.extendedprice,
                l.discount,
                l.tax,
                l.returnflag,
                l.linestatus,
                format_date(l.shipdate)
            )?,
            Event::Partsupp(p) => {
                writeln!(w, "PS,{},{},{},{}", p.partkey, p.suppkey, p.supplycost, p.availqty)?
            }
            Event::Supplier(s) => writeln!(w, "S,{}", s.suppkey)?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, schema: Schema, events: &[Event]) -> Result<(), DataError> {
    write_csv(File::create(path)?, schema, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_million_finance_stream() {
        let ev = generate(&StreamSpec::new(Schema::Finance, 100, 1, 5000)).unwrap();
        assert_eq!(ev.len(), 500_000);
        assert_eq!(ev[..100], ev[100..200]);
        assert_eq!(ev[..100], ev[499_900..]);
    }

    #[test]
    fn single_event_stream() {
        for seed in [0, 1, u64::MAX] {
            assert_eq!(generate(&StreamSpec::new(Schema::Finance, 1, seed, 1)).unwrap().len(), 1);
        }
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(matches!(
            generate(&StreamSpec::new(Schema::Finance, 0, 1, 1)),
            Err(DataError::InvalidSpec(_))
        ));
        assert!(generate(&StreamSpec::new(Schema::Lineitem, 1, 1, 0)).is_err());
    }

    #[test]
    fn finance_sides_alternate_and_prices_in_band() {
        let ev = generate(&StreamSpec::new(Schema::Finance, 50, 3, 1)).unwrap();
        for (i, e) in ev.iter().enumerate() {
            let Event::Orderbook(o) = e else { panic!("wrong row") };
            assert_eq!(o.side, if i % 2 == 0 { Side::Bid } else { Side::Ask });
            assert!(o.price >= cents(PRICE_MIN_CENTS) && o.price <= cents(PRICE_MAX_CENTS));
            assert!(o.volume > Fixed::ZERO);
        }
    }

    #[test]
    fn parses_documented_finance_line() {
        let ev = read_csv("1.0,42,3,10.0,102.5,BID\n".as_bytes(), Schema::Finance).unwrap();
        assert_eq!(
            ev,
            vec![Event::Orderbook(OrderbookEvent {
                t: Fixed::ONE,
                id: 42,
                broker_id: 3,
                volume: Fixed::from_int(10),
                price: "102.5".parse().unwrap(),
                side: Side::Bid,
            })]
        );
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert!(read_csv("".as_bytes(), Schema::Finance).unwrap().is_empty());
    }

    #[test]
    fn wrong_arity_reports_line() {
        let err = read_csv("1.0,42,3,10.0,102.5,BID\n1.0,42,3,10.0\n".as_bytes(), Schema::Finance).unwrap_err();
        match err {
            DataError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_volume_rejected() {
        let err = read_csv("1.0,42,3,-10.0,102.5,ASK\n".as_bytes(), Schema::Finance).unwrap_err();
        assert!(err.to_string().contains("negative volume"), "{err}");
    }

    #[test]
    fn excess_precision_rejected() {
        assert!(read_csv("1.0,42,3,10.00001,102.5,ASK\n".as_bytes(), Schema::Finance).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let ev = generate(&StreamSpec::new(Schema::PartsuppSupplier, 40, 9, 1)).unwrap();
        save_csv(&path, Schema::PartsuppSupplier, &ev).unwrap();
        assert_eq!(load_csv(&path, Schema::PartsuppSupplier).unwrap(), ev);
    }

    proptest! {
        #[test]
        fn csv_roundtrip_any_schema(seed in any::<u64>(), base in 1usize..60, which in 0usize..3) {
            let schema = [Schema::Finance, Schema::Lineitem, Schema::PartsuppSupplier][which];
            let ev = generate(&StreamSpec::new(schema, base, seed, 1)).unwrap();
            let mut buf = Vec::new();
            write_csv(&mut buf, schema, &ev).unwrap();
            prop_assert_eq!(read_csv(buf.as_slice(), schema).unwrap(), ev);
        }

        #[test]
        fn generation_is_deterministic(seed in any::<u64>(), base in 1usize..50) {
            let spec = StreamSpec::new(Schema::Lineitem, base, seed, 2);
            prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
    }
}
