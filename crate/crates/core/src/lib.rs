//! Round-synchronous CONGEST simulator with enforced per-edge bit budgets,
//! plus sparsification, ruling-set and MIS algorithms on graph powers.
//!
//! Everything here is `no_std` with `alloc`. File formats, the CLI and the
//! experiment runner live in the `powersim` crate.

#![no_std]

extern crate alloc;

pub mod comm;
pub mod error;
pub mod graph;
pub mod hash;
pub mod mis;
pub mod netdecomp;
pub mod rng;
pub mod ruling;
pub mod runtime;
pub mod sparsify;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Graph, Vertex};
pub use runtime::{RoundReport, SimConfig};

/// `ceil(log2(x))`, with `ceil_log2(0) == ceil_log2(1) == 0`.
pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// `floor(log2(x))` for `x >= 1`.
pub fn floor_log2(x: u64) -> u32 {
    debug_assert!(x >= 1);
    63 - x.leading_zeros()
}

/// `log n` as used throughout: `ceil(log2 n)`, but never below 1.
pub fn log_n(n: usize) -> u32 {
    ceil_log2(n as u64).max(1)
}

/// Number of bits needed to write any value in `0..=max`.
pub fn bits_for(max: u64) -> u32 {
    (64 - max.leading_zeros()).max(1)
}
