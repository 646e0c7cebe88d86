//! Input rows for the benchmark queries.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::fixed::Fixed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bid => "BID",
            Side::Ask => "ASK",
        }
    }
}

impl FromStr for Side {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "BID" | "bid" | "B" => Ok(Side::Bid),
            "ASK" | "ask" | "A" => Ok(Side::Ask),
            other => Err(EngineError::Parse(format!("unknown side `{other}`"))),
        }
    }
}

/// One orderbook insert (a bid or an ask).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderbookEvent {
    pub t: Fixed,
    pub id: i64,
    pub broker_id: i64,
    pub volume: Fixed,
    pub price: Fixed,
    pub side: Side,
}

/// The `lineitem` columns read by Q1 and Q6. `shipdate` is days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LineitemRow {
    pub quantity: Fixed,
    pub extendedprice: Fixed,
    pub discount: Fixed,
    pub tax: Fixed,
    pub returnflag: char,
    pub linestatus: char,
    pub shipdate: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartsuppRow {
    pub partkey: i64,
    pub suppkey: i64,
    pub supplycost: Fixed,
    pub availqty: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SupplierRow {
    pub suppkey: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Orderbook(OrderbookEvent),
    Lineitem(LineitemRow),
    Partsupp(PartsuppRow),
    Supplier(SupplierRow),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKind {
    Orderbook,
    Lineitem,
    Partsupp,
    Supplier,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowKind::Orderbook => "orderbook",
            RowKind::Lineitem => "lineitem",
            RowKind::Partsupp => "partsupp",
            RowKind::Supplier => "supplier",
        })
    }
}

impl Event {
    pub fn kind(&self) -> RowKind {
        match self {
            Event::Orderbook(_) => RowKind::Orderbook,
            Event::Lineitem(_) => RowKind::Lineitem,
            Event::Partsupp(_) => RowKind::Partsupp,
            Event::Supplier(_) => RowKind::Supplier,
        }
    }

    /// Checks the non-negativity constraints on volumes, quantities and prices.
    pub fn validate(&self) -> Result<(), EngineError> {
        let neg = |what: &str| Err(EngineError::OutOfRange(format!("negative {what}")));
        match self {
            Event::Orderbook(o) => {
                if o.volume.is_negative() {
                    return neg("volume");
                }
                if o.price.is_negative() {
                    return neg("price");
                }
            }
            Event::Lineitem(l) => {
                if l.quantity.is_negative() {
                    return neg("quantity");
                }
                if l.extendedprice.is_negative() {
                    return neg("extendedprice");
                }
            }
            Event::Partsupp(p) => {
                if p.availqty < 0 {
                    return neg("availqty");
                }
                if p.supplycost.is_negative() {
                    return neg("supplycost");
                }
            }
            Event::Supplier(_) => {}
        }
        Ok(())
    }
}

/// Input stream layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Finance,
    Lineitem,
    PartsuppSupplier,
}

impl Schema {
    pub fn as_str(self) -> &'static str {
        match self {
            Schema::Finance => "finance",
            Schema::Lineitem => "lineitem",
            Schema::PartsuppSupplier => "partsupp-supplier",
        }
    }

    pub fn accepts(self, kind: RowKind) -> bool {
        matches!(
            (self, kind),
            (Schema::Finance, RowKind::Orderbook)
                | (Schema::Lineitem, RowKind::Lineitem)
                | (Schema::PartsuppSupplier, RowKind::Partsupp | RowKind::Supplier)
        )
    }
}

impl FromStr for Schema {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "finance" | "orderbook" => Ok(Schema::Finance),
            "lineitem" => Ok(Schema::Lineitem),
            "partsupp-supplier" | "partsupp_supplier" | "partsupp" => Ok(Schema::PartsuppSupplier),
            other => Err(EngineError::Parse(format!("unknown schema `{other}`"))),
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryId {
    /// `countone`
    C1,
    /// `axfinder`
    Axf,
    /// `pricespread`
    Psp,
    Q1,
    Q6,
    Q11a,
}

impl QueryId {
    pub const ALL: [QueryId; 6] = [
        QueryId::C1,
        QueryId::Axf,
        QueryId::Psp,
        QueryId::Q1,
        QueryId::Q6,
        QueryId::Q11a,
    ];

    pub fn schema(self) -> Schema {
        match self {
            QueryId::C1 | QueryId::Axf | QueryId::Psp => Schema::Finance,
            QueryId::Q1 | QueryId::Q6 => Schema::Lineitem,
            QueryId::Q11a => Schema::PartsuppSupplier,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QueryId::C1 => "c1",
            QueryId::Axf => "axfinder",
            QueryId::Psp => "pricespread",
            QueryId::Q1 => "q1",
            QueryId::Q6 => "q6",
            QueryId::Q11a => "q11a",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<QueryId> {
        QueryId::ALL.get(code as usize).copied()
    }

    pub(crate) fn check(self, e: &Event) -> Result<(), EngineError> {
        if self.schema().accepts(e.kind()) {
            Ok(())
        } else {
            Err(EngineError::TypeMismatch { query: self, row: e.kind() })
        }
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryId {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "c1" | "countone" => Ok(QueryId::C1),
            "axf" | "axfinder" => Ok(QueryId::Axf),
            "psp" | "pricespread" => Ok(QueryId::Psp),
            "q1" => Ok(QueryId::Q1),
            "q6" => Ok(QueryId::Q6),
            "q11a" | "q11" => Ok(QueryId::Q11a),
            other => Err(EngineError::Parse(format!("unknown query `{other}`"))),
        }
    }
}

/// Date literals from the TPC-H predicates, as days since 1970-01-01.
pub mod dates {
    pub const Q6_SHIPDATE_FROM: i32 = 8766; // 1994-01-01
    pub const Q6_SHIPDATE_UNTIL: i32 = 9131; // 1995-01-01, exclusive
    pub const Q1_SHIPDATE_MAX: i32 = 10105; // 1997-09-01, inclusive
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

/// Parses `YYYY-MM-DD` into days since 1970-01-01.
pub fn parse_date(s: &str) -> Result<i32, EngineError> {
    let d = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| EngineError::Parse(format!("invalid date `{s}`: {e}")))?;
    i32::try_from((d - epoch()).num_days())
        .map_err(|_| EngineError::OutOfRange(format!("date `{s}`")))
}

pub fn format_date(days: i32) -> String {
    (epoch() + chrono::Duration::days(days as i64))
        .format("%Y-%m-%d")
        .to_string()
}
