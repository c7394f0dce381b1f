//! Simulation of page-level heap exploitation against a slab-over-buddy
//! allocator, a static finder for page-spraying callsites, and an audit of
//! page-reuse isolation.
//!
//! The layers build on each other: [`page_allocator`] hands out buddy blocks,
//! [`slab`] carves them into objects, [`kernel`] wires caches, callsites,
//! deferred frees and noise together, and [`exploit`] drives seeded trials
//! against that kernel. [`analyzer`] works on callgraph documents and shares
//! no state with the simulator. [`mitigation`] reconfigures a kernel before a
//! trial and audits its event log afterwards.

use sha2::{Digest, Sha256};

pub mod analyzer;
pub mod error;
pub mod exploit;
pub mod kernel;
pub mod mitigation;
pub mod noise;
pub mod page_allocator;
pub mod slab;

/// Lowercase hex SHA-256 of `bytes`; used to fingerprint inputs in reports.
pub fn content_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/allocators.md")]
    mod allocators {}
    #[doc = include_str!("../../../book/src/exploit.md")]
    mod exploit {}
    #[doc = include_str!("../../../book/src/analyzer.md")]
    mod analyzer {}
    #[doc = include_str!("../../../book/src/mitigations.md")]
    mod mitigations {}
}
