//! Seeded adversarial streams for differential testing.
//!
//! Unlike [`crate::generate`], values are drawn from coarse grids so that
//! exact price gaps of 1000, duplicate keys, zero volumes and repeated
//! suppliers all occur within a few hundred events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::event::{Event, LineitemRow, OrderbookEvent, PartsuppRow, QueryId, Schema, Side, SupplierRow};
use crate::fixed::Fixed;

pub fn random_stream(query: QueryId, seed: u64, len: usize) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|i| random_event(&mut rng, query.schema(), i)).collect()
}

fn random_event(rng: &mut ChaCha8Rng, schema: Schema, i: usize) -> Event {
    match schema {
        Schema::Finance => Event::Orderbook(OrderbookEvent {
            t: Fixed::from_int(i as i64),
            id: i as i64,
            broker_id: rng.gen_range(1..=4),
            volume: Fixed::from_raw(rng.gen_range(0..=40) * 2_500),
            price: Fixed::from_int(rng.gen_range(0..=12) * 250),
            side: if rng.gen_bool(0.5) { Side::Bid } else { Side::Ask },
        }),
        Schema::Lineitem => Event::Lineitem(LineitemRow {
            quantity: Fixed::from_int(rng.gen_range(20..=28)),
            extendedprice: Fixed::from_raw(rng.gen_range(1..=2_000_000_000)),
            discount: Fixed::from_raw(rng.gen_range(3..=9) * 100),
            tax: Fixed::from_raw(rng.gen_range(0..=8) * 100),
            returnflag: ['A', 'N', 'R'][rng.gen_range(0..3)],
            linestatus: ['F', 'O'][rng.gen_range(0..2)],
            // clustered around the predicate boundaries
            shipdate: [8765, 8766, 8767, 9130, 9131, 9132, 10104, 10105, 10106][rng.gen_range(0..9)],
        }),
        Schema::PartsuppSupplier => {
            if rng.gen_bool(0.25) {
                Event::Supplier(SupplierRow { suppkey: rng.gen_range(1..=6) })
            } else {
                Event::Partsupp(PartsuppRow {
                    partkey: rng.gen_range(1..=8),
                    suppkey: rng.gen_range(1..=6),
                    supplycost: Fixed::from_raw(rng.gen_range(0..=10_000_000)),
                    availqty: rng.gen_range(0..=9999),
                })
            }
        }
    }
}
