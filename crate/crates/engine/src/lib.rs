//! Embedded incremental query engine for the orderbook (`countone`,
//! `axfinder`, `pricespread`) and TPC-H (Q1, Q6, Q11a) benchmark views.
//!
//! Each [`ViewState`] refreshes its materialized result after every input
//! tuple. [`evaluate_oracle`] recomputes the same results from scratch and is
//! used for differential testing.

pub mod datagen;
mod error;
pub mod event;
pub mod fixed;
pub mod fuzz;
pub mod oracle;
pub mod ostree;
pub mod view;

pub use datagen::{generate, load_csv, read_csv, save_csv, write_csv, DataError, StreamSpec};
pub use error::EngineError;
pub use event::{Event, QueryId, RowKind, Schema, Side};
pub use fixed::Fixed;
pub use oracle::evaluate_oracle;
pub use view::{GroupKey, OpCounter, ViewSnapshot, ViewState};
