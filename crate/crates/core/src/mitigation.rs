//! Page-reuse isolation and the overlap audit.
//!
//! An exploit of the kind simulated here needs a page that was recycled from a
//! slab to come back as a buffer page (or as a slab of another cache). The
//! audit counts exactly those transitions, so a run with zero overlaps cannot
//! contain a successful reclaim.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::kernel::Kernel;
use crate::page_allocator::{Event, EventKind, GfpProfile, Owner, OwnerHint, Zone};
use crate::slab::CacheId;

/// Share of all frames moved into the reserved slab pool.
pub const SLAB_VIRTUAL_SHARE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationMode {
    #[default]
    None,
    GfpIsolation,
    SlabVirtual,
    ObjectIsolation,
}

impl MitigationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MitigationMode::None => "none",
            MitigationMode::GfpIsolation => "gfp",
            MitigationMode::SlabVirtual => "slab-virtual",
            MitigationMode::ObjectIsolation => "object",
        }
    }
}

impl FromStr for MitigationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(MitigationMode::None),
            "gfp" => Ok(MitigationMode::GfpIsolation),
            "slab-virtual" => Ok(MitigationMode::SlabVirtual),
            "object" => Ok(MitigationMode::ObjectIsolation),
            other => Err(format!("unknown mitigation `{other}` (none|gfp|slab-virtual|object)")),
        }
    }
}

pub fn apply(kernel: &mut Kernel, mode: MitigationMode) -> Result<()> {
    match mode {
        MitigationMode::None => Ok(()),
        MitigationMode::GfpIsolation => apply_gfp_isolation(kernel),
        MitigationMode::SlabVirtual => apply_slab_virtual(kernel),
        MitigationMode::ObjectIsolation => apply_object_isolation(kernel),
    }
}

/// Rewrites every callsite to allocate from Dma only. Slab caches are untouched.
pub fn apply_gfp_isolation(kernel: &mut Kernel) -> Result<()> {
    if kernel.pages.zone(Zone::Dma).is_none() {
        return Err(SimError::ZoneAbsent(Zone::Dma));
    }
    let ids: Vec<_> = kernel.callsites().iter().map(|c| c.id).collect();
    for id in ids {
        kernel.set_callsite_gfp(id, GfpProfile::dma(OwnerHint::BufferOwner))?;
    }
    Ok(())
}

/// Carves a reserved pool out of Normal and moves every slab cache into it.
/// Must run before the first page allocation.
pub fn apply_slab_virtual(kernel: &mut Kernel) -> Result<()> {
    if !kernel.is_pristine() {
        return Err(SimError::NotPristine);
    }
    let mut zones = kernel.config().zones.clone();
    let total: u64 = zones.values().sum();
    let reserved = ((total as f64 * SLAB_VIRTUAL_SHARE) as u64).max(1);
    let normal = zones.get_mut(&Zone::Normal).ok_or(SimError::ZoneAbsent(Zone::Normal))?;
    if *normal <= reserved {
        return Err(SimError::InvalidConfig(format!(
            "Normal zone of {normal} frames cannot give up {reserved} frames"
        )));
    }
    *normal -= reserved;
    zones.insert(Zone::SlabReserved, reserved);
    kernel.rezone(zones)?;
    kernel.set_slab_gfp(GfpProfile::new(Zone::SlabReserved, false, OwnerHint::SlabOwner));
    Ok(())
}

/// Gives each object type its own cache.
pub fn apply_object_isolation(kernel: &mut Kernel) -> Result<()> {
    kernel.set_object_isolation(true);
    Ok(())
}

/// One page that went from a recycled slab to a foreign owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<u64>,
    pub tick: u64,
    pub block: u64,
    pub order: u8,
    pub from_cache: CacheId,
    pub owner: Owner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub overlap_count: usize,
    /// ReuseOverlap events present in the log; equals `overlap_count` for
    /// logs written by the allocator.
    pub logged_overlaps: usize,
    pub events_scanned: usize,
    pub overlaps: Vec<Overlap>,
}

/// An event as written to a multi-trial log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedEvent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<u64>,
    #[serde(flatten)]
    pub event: Event,
}

/// Recomputes overlaps from Alloc and SlabRecycle events. Trials are audited
/// independently; untagged events form a single trial.
pub fn overlap_audit<'a>(events: impl IntoIterator<Item = &'a TaggedEvent>) -> OverlapReport {
    let mut recycled: BTreeMap<Option<u64>, HashMap<u64, CacheId>> = BTreeMap::new();
    let mut overlaps = Vec::new();
    let mut logged = 0;
    let mut scanned = 0;
    for te in events {
        scanned += 1;
        let e = &te.event;
        let frames = e.block..e.block + (1u64 << e.order);
        let taint = recycled.entry(te.trial).or_default();
        match e.kind {
            EventKind::SlabRecycle => {
                if let Some(Owner::Slab { cache }) = e.owner {
                    for f in frames {
                        taint.insert(f, cache);
                    }
                }
            }
            EventKind::Alloc => {
                let mut from = None;
                for f in frames {
                    if let Some(c) = taint.remove(&f) {
                        from.get_or_insert(c);
                    }
                }
                let (Some(from), Some(owner)) = (from, e.owner) else { continue };
                let foreign = match owner {
                    Owner::Buffer { .. } => true,
                    Owner::Slab { cache } => cache != from,
                    Owner::UserNoise => false,
                };
                if foreign {
                    overlaps.push(Overlap {
                        trial: te.trial,
                        tick: e.tick,
                        block: e.block,
                        order: e.order,
                        from_cache: from,
                        owner,
                    });
                }
            }
            EventKind::ReuseOverlap => logged += 1,
            _ => {}
        }
    }
    OverlapReport {
        overlap_count: overlaps.len(),
        logged_overlaps: logged,
        events_scanned: scanned,
        overlaps,
    }
}

/// Audits a single untagged log.
pub fn overlap_audit_log(events: &[Event]) -> OverlapReport {
    let tagged: Vec<TaggedEvent> = events
        .iter()
        .map(|e| TaggedEvent {
            trial: None,
            event: e.clone(),
        })
        .collect();
    overlap_audit(&tagged)
}
