//! Batch (non-incremental) evaluation of the benchmark queries.
//!
//! Every query is evaluated from scratch with nested loops straight from its
//! SQL text, sharing nothing with the incremental operators beyond the input
//! types and the fixed-point multiplication rule. Intended for differential
//! testing only; AXF, PSP and Q11a are quadratic.

use std::collections::BTreeMap;

use crate::error::EngineError;
use crate::event::{dates, Event, LineitemRow, OrderbookEvent, PartsuppRow, QueryId, Side};
use crate::fixed::Fixed;
use crate::view::{GroupKey, ViewSnapshot};

pub fn evaluate_oracle(query: QueryId, events: &[Event]) -> Result<ViewSnapshot, EngineError> {
    for e in events {
        if !query.schema().accepts(e.kind()) {
            return Err(EngineError::TypeMismatch { query, row: e.kind() });
        }
    }
    match query {
        QueryId::C1 => Ok(ViewSnapshot::Scalar(Fixed::from_int(events.len() as i64))),
        QueryId::Q6 => q6(&lineitems(events)),
        QueryId::Q1 => q1(&lineitems(events)),
        QueryId::Axf => axfinder(events),
        QueryId::Psp => pricespread(events),
        QueryId::Q11a => q11a(events),
    }
}

fn lineitems(events: &[Event]) -> Vec<LineitemRow> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Lineitem(l) => Some(*l),
            _ => None,
        })
        .collect()
}

fn sides(events: &[Event]) -> (Vec<OrderbookEvent>, Vec<OrderbookEvent>) {
    let book: Vec<OrderbookEvent> = events
        .iter()
        .filter_map(|e| match e {
            Event::Orderbook(o) => Some(*o),
            _ => None,
        })
        .collect();
    book.into_iter().partition(|o| o.side == Side::Bid)
}

fn narrow(v: i128) -> Result<Fixed, EngineError> {
    Fixed::from_wide_raw(v)
}

fn q6(rows: &[LineitemRow]) -> Result<ViewSnapshot, EngineError> {
    // WHERE shipdate >= '1994-01-01' AND shipdate < '1995-01-01'
    //   AND discount BETWEEN 0.05 AND 0.07 AND quantity < 24
    let lo = "0.05".parse::<Fixed>()?;
    let hi = "0.07".parse::<Fixed>()?;
    let mut revenue: i128 = 0;
    for l in rows {
        if l.shipdate >= dates::Q6_SHIPDATE_FROM
            && l.shipdate < dates::Q6_SHIPDATE_UNTIL
            && lo <= l.discount
            && l.discount <= hi
            && l.quantity.raw() < 24 * 10_000
        {
            revenue += l.extendedprice.checked_mul(l.discount)?.raw() as i128;
        }
    }
    Ok(ViewSnapshot::Scalar(narrow(revenue)?))
}

fn q1(rows: &[LineitemRow]) -> Result<ViewSnapshot, EngineError> {
    #[derive(Default)]
    struct Acc {
        qty: i128,
        base: i128,
        disc_price: i128,
        charge: i128,
        disc: i128,
        n: i64,
    }
    let mut groups: BTreeMap<(char, char), Acc> = BTreeMap::new();
    for l in rows.iter().filter(|l| l.shipdate <= dates::Q1_SHIPDATE_MAX) {
        let a = groups.entry((l.returnflag, l.linestatus)).or_default();
        let dp = l.extendedprice.checked_mul(Fixed::from_int(1).checked_sub(l.discount)?)?;
        let ch = dp.checked_mul(Fixed::from_int(1).checked_add(l.tax)?)?;
        a.qty += l.quantity.raw() as i128;
        a.base += l.extendedprice.raw() as i128;
        a.disc_price += dp.raw() as i128;
        a.charge += ch.raw() as i128;
        a.disc += l.discount.raw() as i128;
        a.n += 1;
    }
    let mut out = BTreeMap::new();
    for ((f, s), a) in groups {
        let n = a.n as i128;
        out.insert(
            GroupKey::Flags(f, s),
            vec![
                narrow(a.qty)?,
                narrow(a.base)?,
                narrow(a.disc_price)?,
                narrow(a.charge)?,
                narrow(a.qty / n)?,
                narrow(a.base / n)?,
                narrow(a.disc / n)?,
                Fixed::from_int(a.n),
            ],
        );
    }
    Ok(ViewSnapshot::Groups(out))
}

fn axfinder(events: &[Event]) -> Result<ViewSnapshot, EngineError> {
    let (bids, asks) = sides(events);
    let gap = 1000i128 * 10_000;
    let mut groups: BTreeMap<i64, i128> = BTreeMap::new();
    for b in &bids {
        for a in &asks {
            let (ap, bp) = (a.price.raw() as i128, b.price.raw() as i128);
            if b.broker_id == a.broker_id && (ap - bp > gap || bp - ap > gap) {
                *groups.entry(b.broker_id).or_insert(0) += a.volume.raw() as i128 - b.volume.raw() as i128;
            }
        }
    }
    let mut out = BTreeMap::new();
    for (k, v) in groups {
        out.insert(GroupKey::Id(k), vec![narrow(v)?]);
    }
    Ok(ViewSnapshot::Groups(out))
}

fn pricespread(events: &[Event]) -> Result<ViewSnapshot, EngineError> {
    let (bids, asks) = sides(events);
    let total_b: i128 = bids.iter().map(|b| b.volume.raw() as i128).sum();
    let total_a: i128 = asks.iter().map(|a| a.volume.raw() as i128).sum();
    // volume > 0.0001 * total, compared exactly: vol/10^4 > total/10^8
    let qualifies = |vol: Fixed, total: i128| vol.raw() as i128 * 10_000 > total;
    let mut sum: i128 = 0;
    for b in bids.iter().filter(|b| qualifies(b.volume, total_b)) {
        for a in asks.iter().filter(|a| qualifies(a.volume, total_a)) {
            sum += a.price.raw() as i128 - b.price.raw() as i128;
        }
    }
    Ok(ViewSnapshot::Scalar(narrow(sum)?))
}

fn q11a(events: &[Event]) -> Result<ViewSnapshot, EngineError> {
    let partsupp: Vec<PartsuppRow> = events
        .iter()
        .filter_map(|e| match e {
            Event::Partsupp(p) => Some(*p),
            _ => None,
        })
        .collect();
    let suppliers: Vec<i64> = events
        .iter()
        .filter_map(|e| match e {
            Event::Supplier(s) => Some(s.suppkey),
            _ => None,
        })
        .collect();
    let mut groups: BTreeMap<i64, i128> = BTreeMap::new();
    for ps in &partsupp {
        for &s in &suppliers {
            if ps.suppkey == s {
                *groups.entry(ps.partkey).or_insert(0) += ps.supplycost.raw() as i128 * ps.availqty as i128;
            }
        }
    }
    let mut out = BTreeMap::new();
    for (k, v) in groups {
        out.insert(GroupKey::Id(k), vec![narrow(v)?]);
    }
    Ok(ViewSnapshot::Groups(out))
}
