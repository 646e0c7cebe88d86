//! Per-tuple incremental maintenance of the six benchmark views.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::event::{dates, Event, LineitemRow, OrderbookEvent, PartsuppRow, QueryId, Side, SupplierRow};
use crate::fixed::{Fixed, SCALE};
use crate::ostree::AggTree;

/// `axfinder` matches bid/ask pairs whose prices differ by more than this.
pub const AXF_PRICE_GAP: Fixed = Fixed::from_int(1000);

/// PSP keeps rows whose volume exceeds 1/PSP_SHARE_DIVISOR of their side's total volume.
pub const PSP_SHARE_DIVISOR: i128 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupKey {
    Id(i64),
    Flags(char, char),
}

/// Query result in canonical form: groups without contributing rows are absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewSnapshot {
    Scalar(Fixed),
    Groups(BTreeMap<GroupKey, Vec<Fixed>>),
}

impl ViewSnapshot {
    pub fn scalar(&self) -> Option<Fixed> {
        match self {
            ViewSnapshot::Scalar(v) => Some(*v),
            ViewSnapshot::Groups(_) => None,
        }
    }

    pub fn groups(&self) -> Option<&BTreeMap<GroupKey, Vec<Fixed>>> {
        match self {
            ViewSnapshot::Scalar(_) => None,
            ViewSnapshot::Groups(g) => Some(g),
        }
    }
}

/// Column order of Q1 group vectors.
pub const Q1_COLUMNS: [&str; 8] = [
    "sum_qty",
    "sum_base_price",
    "sum_disc_price",
    "sum_charge",
    "avg_qty",
    "avg_price",
    "avg_disc",
    "count_order",
];

/// Shared counter of index operations (hash probes, tree node visits).
///
/// Only the owning engine writes it; readers on other threads see a
/// monotonically growing value.
#[derive(Debug, Clone, Default)]
pub struct OpCounter(Arc<AtomicU64>);

impl OpCounter {
    #[inline]
    fn add(&self, n: u64) {
        // single writer: plain load/store avoids a locked RMW in the hot path
        let v = self.0.load(Ordering::Relaxed);
        self.0.store(v + n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Default)]
struct Q1Acc {
    sum_qty: Fixed,
    sum_base_price: Fixed,
    sum_disc_price: Fixed,
    sum_charge: Fixed,
    sum_disc: Fixed,
    count: i64,
}

#[derive(Debug, Clone, Copy, Default)]
struct JoinAgg {
    sum: Fixed,
    pairs: i64,
}

#[derive(Debug, Clone, Default)]
struct Book {
    bids: AggTree,
    asks: AggTree,
}

#[derive(Debug, Clone)]
enum Inner {
    C1 { count: i64 },
    Q6 { revenue: Fixed },
    Q1 { groups: HashMap<(char, char), Q1Acc> },
    Q11a {
        supplier_mult: HashMap<i64, i64>,
        // suppkey -> partkey -> (sum of supplycost*availqty, rows)
        partsupp: HashMap<i64, HashMap<i64, JoinAgg>>,
        result: HashMap<i64, JoinAgg>,
    },
    Axf {
        books: HashMap<i64, Book>,
        result: HashMap<i64, JoinAgg>,
    },
    Psp {
        bid_volume: i128,
        ask_volume: i128,
        // keyed by volume, valued by price
        bids: AggTree,
        asks: AggTree,
        value: Fixed,
    },
}

/// Materialized state of one query, refreshed after every input tuple.
#[derive(Debug, Clone)]
pub struct ViewState {
    query: QueryId,
    inner: Inner,
    ops: OpCounter,
    applied: u64,
    fault_at: Option<u64>,
}

impl ViewState {
    pub fn new(query: QueryId) -> Self {
        let inner = match query {
            QueryId::C1 => Inner::C1 { count: 0 },
            QueryId::Q6 => Inner::Q6 { revenue: Fixed::ZERO },
            QueryId::Q1 => Inner::Q1 { groups: HashMap::new() },
            QueryId::Q11a => Inner::Q11a {
                supplier_mult: HashMap::new(),
                partsupp: HashMap::new(),
                result: HashMap::new(),
            },
            QueryId::Axf => Inner::Axf { books: HashMap::new(), result: HashMap::new() },
            QueryId::Psp => Inner::Psp {
                bid_volume: 0,
                ask_volume: 0,
                bids: AggTree::new(),
                asks: AggTree::new(),
                value: Fixed::ZERO,
            },
        };
        ViewState { query, inner, ops: OpCounter::default(), applied: 0, fault_at: None }
    }

    pub fn query(&self) -> QueryId {
        self.query
    }

    /// Number of events applied so far.
    pub fn applied(&self) -> u64 {
        self.applied
    }

    /// Total index operations performed so far.
    pub fn ops(&self) -> u64 {
        self.ops.get()
    }

    /// A handle that observes this state's operation count.
    pub fn op_counter(&self) -> OpCounter {
        self.ops.clone()
    }

    /// Deliberately corrupt the view once `n` events have been applied.
    /// Exists only to prove that differential checks catch divergence.
    #[doc(hidden)]
    pub fn inject_fault_after(&mut self, n: u64) {
        self.fault_at = Some(n);
    }

    #[inline]
    pub fn apply(&mut self, e: &Event) -> Result<(), EngineError> {
        self.query.check(e)?;
        let ops = match (&mut self.inner, e) {
            (Inner::C1 { count }, Event::Orderbook(_)) => {
                *count += 1;
                1
            }
            (Inner::Q6 { revenue }, Event::Lineitem(l)) => apply_q6(revenue, l)?,
            (Inner::Q1 { groups }, Event::Lineitem(l)) => apply_q1(groups, l)?,
            (Inner::Q11a { supplier_mult, partsupp, result }, Event::Supplier(s)) => {
                apply_supplier(supplier_mult, partsupp, result, s)?
            }
            (Inner::Q11a { supplier_mult, partsupp, result }, Event::Partsupp(p)) => {
                apply_partsupp(supplier_mult, partsupp, result, p)?
            }
            (Inner::Axf { books, result }, Event::Orderbook(o)) => apply_axf(books, result, o)?,
            (Inner::Psp { bid_volume, ask_volume, bids, asks, value }, Event::Orderbook(o)) => {
                apply_psp(bid_volume, ask_volume, bids, asks, value, o)?
            }
            _ => unreachable!("row kind checked against query schema"),
        };
        self.ops.add(ops);
        self.applied += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> ViewSnapshot {
        let mut snap = match &self.inner {
            Inner::C1 { count } => ViewSnapshot::Scalar(Fixed::from_int(*count)),
            Inner::Q6 { revenue } => ViewSnapshot::Scalar(*revenue),
            Inner::Psp { value, .. } => ViewSnapshot::Scalar(*value),
            Inner::Q1 { groups } => ViewSnapshot::Groups(
                groups
                    .iter()
                    .filter(|(_, acc)| acc.count > 0)
                    .map(|(&(f, s), acc)| (GroupKey::Flags(f, s), q1_row(acc)))
                    .collect(),
            ),
            Inner::Q11a { result, .. } | Inner::Axf { result, .. } => ViewSnapshot::Groups(
                result
                    .iter()
                    .filter(|(_, agg)| agg.pairs > 0)
                    .map(|(&k, agg)| (GroupKey::Id(k), vec![agg.sum]))
                    .collect(),
            ),
        };
        if matches!(self.fault_at, Some(n) if self.applied >= n) {
            corrupt(&mut snap);
        }
        snap
    }
}

fn corrupt(snap: &mut ViewSnapshot) {
    let bump = Fixed::from_raw(1);
    match snap {
        ViewSnapshot::Scalar(v) => *v = Fixed::from_raw(v.raw().wrapping_add(bump.raw())),
        ViewSnapshot::Groups(g) => match g.values_mut().next() {
            Some(row) => row[0] = Fixed::from_raw(row[0].raw().wrapping_add(1)),
            None => {
                g.insert(GroupKey::Id(i64::MIN), vec![bump]);
            }
        },
    }
}

fn q1_row(acc: &Q1Acc) -> Vec<Fixed> {
    vec![
        acc.sum_qty,
        acc.sum_base_price,
        acc.sum_disc_price,
        acc.sum_charge,
        acc.sum_qty.div_int(acc.count),
        acc.sum_base_price.div_int(acc.count),
        acc.sum_disc.div_int(acc.count),
        Fixed::from_int(acc.count),
    ]
}

/// `revenue` contribution of one lineitem row, or `None` if it fails the Q6 predicate.
pub(crate) fn q6_contribution(l: &LineitemRow) -> Result<Option<Fixed>, EngineError> {
    let in_dates = l.shipdate >= dates::Q6_SHIPDATE_FROM && l.shipdate < dates::Q6_SHIPDATE_UNTIL;
    let in_band = l.discount >= Fixed::new(0, 500) && l.discount <= Fixed::new(0, 700);
    if in_dates && in_band && l.quantity < Fixed::from_int(24) {
        Ok(Some(l.extendedprice.checked_mul(l.discount)?))
    } else {
        Ok(None)
    }
}

fn apply_q6(revenue: &mut Fixed, l: &LineitemRow) -> Result<u64, EngineError> {
    if let Some(v) = q6_contribution(l)? {
        *revenue = revenue.checked_add(v)?;
    }
    Ok(1)
}

fn apply_q1(groups: &mut HashMap<(char, char), Q1Acc>, l: &LineitemRow) -> Result<u64, EngineError> {
    if l.shipdate > dates::Q1_SHIPDATE_MAX {
        return Ok(1);
    }
    let disc_price = l.extendedprice.checked_mul(Fixed::ONE.checked_sub(l.discount)?)?;
    let charge = disc_price.checked_mul(Fixed::ONE.checked_add(l.tax)?)?;
    let acc = groups.entry((l.returnflag, l.linestatus)).or_default();
    acc.sum_qty = acc.sum_qty.checked_add(l.quantity)?;
    acc.sum_base_price = acc.sum_base_price.checked_add(l.extendedprice)?;
    acc.sum_disc_price = acc.sum_disc_price.checked_add(disc_price)?;
    acc.sum_charge = acc.sum_charge.checked_add(charge)?;
    acc.sum_disc = acc.sum_disc.checked_add(l.discount)?;
    acc.count += 1;
    Ok(1)
}

fn bump(result: &mut HashMap<i64, JoinAgg>, key: i64, sum: Fixed, pairs: i64) -> Result<(), EngineError> {
    let agg = result.entry(key).or_default();
    agg.sum = agg.sum.checked_add(sum)?;
    agg.pairs += pairs;
    Ok(())
}

fn apply_supplier(
    supplier_mult: &mut HashMap<i64, i64>,
    partsupp: &HashMap<i64, HashMap<i64, JoinAgg>>,
    result: &mut HashMap<i64, JoinAgg>,
    s: &SupplierRow,
) -> Result<u64, EngineError> {
    *supplier_mult.entry(s.suppkey).or_insert(0) += 1;
    let mut ops = 2;
    if let Some(parts) = partsupp.get(&s.suppkey) {
        for (&partkey, agg) in parts {
            bump(result, partkey, agg.sum, agg.pairs)?;
            ops += 1;
        }
    }
    Ok(ops)
}

fn apply_partsupp(
    supplier_mult: &HashMap<i64, i64>,
    partsupp: &mut HashMap<i64, HashMap<i64, JoinAgg>>,
    result: &mut HashMap<i64, JoinAgg>,
    p: &PartsuppRow,
) -> Result<u64, EngineError> {
    let value = p.supplycost.checked_mul_int(p.availqty)?;
    let mut ops = 2;
    let mult = supplier_mult.get(&p.suppkey).copied().unwrap_or(0);
    if mult > 0 {
        bump(result, p.partkey, value.checked_mul_int(mult)?, mult)?;
        ops += 1;
    }
    let agg = partsupp.entry(p.suppkey).or_default().entry(p.partkey).or_default();
    agg.sum = agg.sum.checked_add(value)?;
    agg.pairs += 1;
    Ok(ops)
}

fn apply_axf(
    books: &mut HashMap<i64, Book>,
    result: &mut HashMap<i64, JoinAgg>,
    o: &OrderbookEvent,
) -> Result<u64, EngineError> {
    let mut ops = 1;
    let book = books.entry(o.broker_id).or_default();
    let (lo, hi) = (
        o.price.raw().saturating_sub(AXF_PRICE_GAP.raw()),
        o.price.raw().saturating_add(AXF_PRICE_GAP.raw()),
    );
    let vol = o.volume.raw() as i128;
    let (same, other) = match o.side {
        Side::Bid => (&mut book.bids, &book.asks),
        Side::Ask => (&mut book.asks, &book.bids),
    };
    let below = other.below(lo, &mut ops);
    let above = other.above(hi, &mut ops);
    let count = below.count + above.count;
    let volume_sum = below.sum + above.sum;
    // each pair contributes ask.volume - bid.volume
    let delta = match o.side {
        Side::Ask => count as i128 * vol - volume_sum,
        Side::Bid => volume_sum - count as i128 * vol,
    };
    same.insert(o.price.raw(), 1, vol, &mut ops);
    if count > 0 {
        let pairs = i64::try_from(count).map_err(|_| EngineError::Overflow("pair count"))?;
        bump(result, o.broker_id, Fixed::from_wide_raw(delta)?, pairs)?;
    }
    Ok(ops)
}

fn apply_psp(
    bid_volume: &mut i128,
    ask_volume: &mut i128,
    bids: &mut AggTree,
    asks: &mut AggTree,
    value: &mut Fixed,
    o: &OrderbookEvent,
) -> Result<u64, EngineError> {
    let mut ops = 0;
    let (total, tree) = match o.side {
        Side::Bid => (&mut *bid_volume, &mut *bids),
        Side::Ask => (&mut *ask_volume, &mut *asks),
    };
    *total += o.volume.raw() as i128;
    tree.insert(o.volume.raw(), 1, o.price.raw() as i128, &mut ops);
    let qb = bids.above(share_bound(*bid_volume), &mut ops);
    let qa = asks.above(share_bound(*ask_volume), &mut ops);
    let v = qb.count as i128 * qa.sum - qa.count as i128 * qb.sum;
    *value = Fixed::from_wide_raw(v)?;
    Ok(ops)
}

/// Largest volume (raw) that does NOT exceed 0.0001 * total.
///
/// `vol > total / 10^4` over the reals is `vol * 10^4 > total_raw` in raw
/// units, which for integers is `vol > floor(total_raw / 10^4)`.
fn share_bound(total_raw: i128) -> i64 {
    debug_assert_eq!(SCALE as i128, PSP_SHARE_DIVISOR);
    i64::try_from(total_raw.div_euclid(PSP_SHARE_DIVISOR)).unwrap_or(i64::MAX)
}
