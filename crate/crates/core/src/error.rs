use thiserror::Error;

use crate::page_allocator::Zone;

/// Errors raised by the simulated memory system and the exploit engine.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid allocator configuration: {0}")]
    InvalidConfig(String),
    #[error("order {requested} exceeds max order {max}")]
    OrderTooLarge { requested: u8, max: u8 },
    #[error("out of memory (order {order}, preferred zone {zone:?})")]
    OutOfMemory { order: u8, zone: Zone },
    #[error("block {0} is not allocated")]
    DoublePageFree(u64),
    #[error("object size {object_size} exceeds slab capacity {capacity}")]
    ObjectTooLarge { object_size: usize, capacity: usize },
    #[error("unknown cache id {0}")]
    UnknownCache(u32),
    #[error("unknown slab id {0}")]
    UnknownSlab(u64),
    #[error("double free detected on slab {slab} slot {slot}")]
    DoubleFreeDetected { slab: u64, slot: u16 },
    #[error("unknown callsite {0}")]
    UnknownCallsite(String),
    #[error("callsite {callsite} has kind {kind}, operation needs {needed}")]
    CallsiteKind {
        callsite: String,
        kind: &'static str,
        needed: &'static str,
    },
    #[error("payload must not be empty")]
    EmptyPayload,
    #[error("{requested} pages exceed the per-call limit of {limit}")]
    PerCallLimit { requested: usize, limit: usize },
    #[error("ring must have at least one block")]
    EmptyRing,
    #[error("unknown ring {0}")]
    UnknownRing(u32),
    #[error("ring {0} is already mapped")]
    AlreadyMapped(u32),
    #[error("access [{offset}, {offset}+{len}) outside mapping of {span} bytes")]
    OutOfRange { offset: usize, len: usize, span: usize },
    #[error("zone {0:?} is not configured")]
    ZoneAbsent(Zone),
    #[error("environment already has allocations; mitigation must be applied first")]
    NotPristine,
    #[error("grooming failed after {0} attempts")]
    GroomingFailed(u32),
    #[error("phase ordering violated: {0}")]
    PhaseOrder(&'static str),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid callgraph: {0}")]
    InvalidGraph(String),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
