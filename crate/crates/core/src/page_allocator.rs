//! Buddy-system page allocator with memory zones and GFP-style profiles.
//!
//! Each zone keeps one free list per order. Lists behave as stacks: the most
//! recently freed block of an order is handed out first. Allocation walks the
//! profile's fallback chain, takes the lowest sufficient order in the first
//! zone that has one, and splits it keeping the lower half. Freeing merges a
//! block with its free buddy until no buddy is free or `max_order` is reached.
//!
//! Every state change is appended to an [`EventLog`], which is also where the
//! page-reuse audit reads from.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::kernel::CallsiteId;
use crate::slab::CacheId;

pub const DEFAULT_PAGE_SIZE: usize = 4096;
pub const DEFAULT_MAX_ORDER: u8 = 10;

/// Memory zone. `SlabReserved` is the isolated pool used by the slab-virtual
/// mitigation; it never appears in a fallback chain of another zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Dma,
    Dma32,
    Normal,
    HighMem,
    SlabReserved,
}

/// Descent order used when a zone cannot satisfy a request.
const DESCENT: [Zone; 4] = [Zone::HighMem, Zone::Normal, Zone::Dma32, Zone::Dma];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwnerHint {
    SlabOwner,
    BufferOwner,
    UserNoise,
}

/// Allocation attributes: where to look first and whether to look elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GfpProfile {
    pub preferred_zone: Zone,
    pub allow_fallback: bool,
    pub owner_hint: OwnerHint,
}

impl GfpProfile {
    pub const fn new(preferred_zone: Zone, allow_fallback: bool, owner_hint: OwnerHint) -> Self {
        Self {
            preferred_zone,
            allow_fallback,
            owner_hint,
        }
    }

    /// Kernel-object pages (GFP_KERNEL analogue).
    pub const fn slab() -> Self {
        Self::new(Zone::Normal, true, OwnerHint::SlabOwner)
    }

    /// User-data buffer pages (GFP_HIGHUSER analogue, served from Normal here).
    pub const fn buffer() -> Self {
        Self::new(Zone::Normal, true, OwnerHint::BufferOwner)
    }

    pub const fn noise() -> Self {
        Self::new(Zone::Normal, true, OwnerHint::UserNoise)
    }

    /// DMA-only, no fallback.
    pub const fn dma(owner_hint: OwnerHint) -> Self {
        Self::new(Zone::Dma, false, owner_hint)
    }
}

/// Zones tried for `profile`, in order.
pub fn fallback_chain(profile: &GfpProfile) -> Vec<Zone> {
    if !profile.allow_fallback {
        return vec![profile.preferred_zone];
    }
    match DESCENT.iter().position(|z| *z == profile.preferred_zone) {
        Some(start) => DESCENT[start..].to_vec(),
        None => vec![profile.preferred_zone],
    }
}

/// Who holds an allocated block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Owner {
    Slab { cache: CacheId },
    Buffer { callsite: CallsiteId },
    UserNoise,
}

/// Block identity: the global index of its first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockState {
    Free,
    Allocated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageBlock {
    pub id: BlockId,
    pub zone: Zone,
    pub order: u8,
    pub first_frame: u64,
    pub state: BlockState,
    pub owner: Owner,
}

impl PageBlock {
    pub fn frames(&self) -> u64 {
        1 << self.order
    }

    pub fn contains_frame(&self, frame: u64) -> bool {
        frame >= self.first_frame && frame < self.first_frame + self.frames()
    }
}

#[derive(Debug, Clone)]
pub struct ZoneState {
    pub id: Zone,
    /// Global index of the zone's first frame; aligned to `2^max_order`.
    pub base: u64,
    pub total_frames: u64,
    /// `free_areas[k]` is the order-k free list; the last element is its head.
    pub free_areas: Vec<Vec<u64>>,
    free_frames: u64,
}

impl ZoneState {
    pub fn free_frames(&self) -> u64 {
        self.free_frames
    }

    pub fn contains(&self, frame: u64) -> bool {
        frame >= self.base && frame < self.base + self.total_frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Alloc,
    Free,
    Split,
    Merge,
    Fallback,
    SlabRecycle,
    ReuseOverlap,
}

/// One allocator event. Serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub kind: EventKind,
    pub block: u64,
    pub zone: Zone,
    pub order: u8,
    pub owner: Option<Owner>,
    /// For `ReuseOverlap`: the cache whose recycled page was handed out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_cache: Option<CacheId>,
}

/// Append-only record of allocator activity.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub tick: u64,
    events: Vec<Event>,
}

impl EventLog {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    fn push(&mut self, kind: EventKind, block: u64, zone: Zone, order: u8, owner: Option<Owner>) {
        self.events.push(Event {
            tick: self.tick,
            kind,
            block,
            zone,
            order,
            owner,
            from_cache: None,
        });
    }

    /// JSON lines, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

/// Contents of a written frame. Pattern frames repeat their bytes from the
/// start of the page and are only expanded when partially overwritten.
#[derive(Debug, Clone)]
enum Frame {
    Pattern(Arc<[u8]>),
    Bytes(Box<[u8]>),
}

impl Frame {
    fn byte(&self, off: usize) -> u8 {
        match self {
            Frame::Pattern(p) => p[off % p.len()],
            Frame::Bytes(b) => b[off],
        }
    }
}

/// The page allocator plus the physical byte store behind its frames.
#[derive(Debug, Clone)]
pub struct PageAllocator {
    page_size: usize,
    max_order: u8,
    zones: Vec<ZoneState>,
    allocated: BTreeMap<u64, PageBlock>,
    /// Lazily materialized frame contents; absent frames read as zero.
    memory: HashMap<u64, Frame>,
    /// Frames freed by a slab discard and not handed out since.
    recycled: HashMap<u64, CacheId>,
    pub log: EventLog,
}

impl PageAllocator {
    /// Builds an allocator whose zones start fully free as maximal aligned blocks.
    pub fn new(zone_sizes: &BTreeMap<Zone, u64>, page_size: usize, max_order: u8) -> Result<Self> {
        if zone_sizes.is_empty() {
            return Err(SimError::InvalidConfig("no zones".into()));
        }
        if page_size == 0 || !page_size.is_power_of_two() {
            return Err(SimError::InvalidConfig(format!("page size {page_size}")));
        }
        if max_order > 20 {
            return Err(SimError::InvalidConfig(format!("max order {max_order}")));
        }
        let align = 1u64 << max_order;
        let mut zones = Vec::new();
        let mut next_base = 0u64;
        for (&id, &frames) in zone_sizes {
            if frames == 0 {
                return Err(SimError::InvalidConfig(format!("zone {id:?} has no frames")));
            }
            let mut free_areas = vec![Vec::new(); max_order as usize + 1];
            let mut offset = 0u64;
            while offset < frames {
                let mut order = max_order;
                while order > 0 && (offset % (1 << order) != 0 || offset + (1 << order) > frames) {
                    order -= 1;
                }
                free_areas[order as usize].push(next_base + offset);
                offset += 1 << order;
            }
            // Lowest address on top so fresh allocators hand out low frames first.
            for list in &mut free_areas {
                list.reverse();
            }
            zones.push(ZoneState {
                id,
                base: next_base,
                total_frames: frames,
                free_areas,
                free_frames: frames,
            });
            next_base += frames.div_ceil(align) * align;
        }
        Ok(Self {
            page_size,
            max_order,
            zones,
            allocated: BTreeMap::new(),
            memory: HashMap::new(),
            recycled: HashMap::new(),
            log: EventLog::default(),
        })
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn max_order(&self) -> u8 {
        self.max_order
    }

    pub fn zones(&self) -> &[ZoneState] {
        &self.zones
    }

    pub fn zone(&self, id: Zone) -> Option<&ZoneState> {
        self.zones.iter().find(|z| z.id == id)
    }

    fn zone_index(&self, id: Zone) -> Option<usize> {
        self.zones.iter().position(|z| z.id == id)
    }

    pub fn zone_of_frame(&self, frame: u64) -> Option<Zone> {
        self.zones.iter().find(|z| z.contains(frame)).map(|z| z.id)
    }

    pub fn total_frames(&self) -> u64 {
        self.zones.iter().map(|z| z.total_frames).sum()
    }

    pub fn free_frames(&self) -> u64 {
        self.zones.iter().map(|z| z.free_frames).sum()
    }

    pub fn allocated_frames(&self) -> u64 {
        self.allocated.values().map(|b| b.frames()).sum()
    }

    pub fn allocated_frames_in(&self, zone: Zone) -> u64 {
        self.allocated
            .values()
            .filter(|b| b.zone == zone)
            .map(|b| b.frames())
            .sum()
    }

    pub fn block(&self, id: BlockId) -> Option<&PageBlock> {
        self.allocated.get(&id.0)
    }

    pub fn allocated_blocks(&self) -> impl Iterator<Item = &PageBlock> {
        self.allocated.values()
    }

    /// The allocated block covering `frame`, if any.
    pub fn block_containing(&self, frame: u64) -> Option<&PageBlock> {
        self.allocated
            .range(..=frame)
            .next_back()
            .map(|(_, b)| b)
            .filter(|b| b.contains_frame(frame))
    }

    /// The free block covering `frame`, as `(zone, order, first_frame)`.
    pub fn free_block_containing(&self, frame: u64) -> Option<(Zone, u8, u64)> {
        let zone = self.zones.iter().find(|z| z.contains(frame))?;
        for (order, list) in zone.free_areas.iter().enumerate() {
            let start = frame & !((1u64 << order) - 1);
            if list.contains(&start) {
                return Some((zone.id, order as u8, start));
            }
        }
        None
    }

    /// Number of order-`order` allocations that drain every free list of
    /// `zone` from `order` up to and including `through`.
    pub fn free_list_depth(&self, zone: Zone, order: u8, through: u8) -> u64 {
        let Some(z) = self.zone(zone) else { return 0 };
        (order..=through.min(self.max_order))
            .map(|k| z.free_areas[k as usize].len() as u64 * (1 << (k - order)))
            .sum()
    }

    pub fn alloc_pages(&mut self, profile: &GfpProfile, order: u8, owner: Owner) -> Result<PageBlock> {
        if order > self.max_order {
            return Err(SimError::OrderTooLarge {
                requested: order,
                max: self.max_order,
            });
        }
        for zone in fallback_chain(profile) {
            let Some(zi) = self.zone_index(zone) else { continue };
            let Some(mut k) = (order..=self.max_order)
                .find(|&k| !self.zones[zi].free_areas[k as usize].is_empty())
            else {
                continue;
            };
            let first = self.zones[zi].free_areas[k as usize].pop().expect("nonempty list");
            while k > order {
                self.log.push(EventKind::Split, first, zone, k, None);
                k -= 1;
                self.zones[zi].free_areas[k as usize].push(first + (1 << k));
            }
            self.zones[zi].free_frames -= 1 << order;
            let block = PageBlock {
                id: BlockId(first),
                zone,
                order,
                first_frame: first,
                state: BlockState::Allocated,
                owner,
            };
            self.allocated.insert(first, block);
            if zone != profile.preferred_zone {
                self.log.push(EventKind::Fallback, first, zone, order, Some(owner));
            }
            self.log.push(EventKind::Alloc, first, zone, order, Some(owner));
            self.note_reuse(&block);
            return Ok(block);
        }
        Err(SimError::OutOfMemory {
            order,
            zone: profile.preferred_zone,
        })
    }

    fn note_reuse(&mut self, block: &PageBlock) {
        if self.recycled.is_empty() {
            return;
        }
        let mut from = None;
        for frame in block.first_frame..block.first_frame + block.frames() {
            if let Some(cache) = self.recycled.remove(&frame) {
                from.get_or_insert(cache);
            }
        }
        let Some(from) = from else { return };
        let overlaps = match block.owner {
            Owner::Buffer { .. } => true,
            Owner::Slab { cache } => cache != from,
            Owner::UserNoise => false,
        };
        if overlaps {
            self.log.push(
                EventKind::ReuseOverlap,
                block.first_frame,
                block.zone,
                block.order,
                Some(block.owner),
            );
            if let Some(last) = self.log.events.last_mut() {
                last.from_cache = Some(from);
            }
        }
    }

    pub fn free_pages(&mut self, id: BlockId) -> Result<()> {
        let block = self
            .allocated
            .remove(&id.0)
            .ok_or(SimError::DoublePageFree(id.0))?;
        self.log
            .push(EventKind::Free, block.first_frame, block.zone, block.order, Some(block.owner));
        let zi = self.zone_index(block.zone).expect("block zone exists");
        self.zones[zi].free_frames += block.frames();
        let base = self.zones[zi].base;
        let mut first = block.first_frame;
        let mut order = block.order;
        while order < self.max_order {
            let buddy = base + ((first - base) ^ (1 << order));
            let list = &mut self.zones[zi].free_areas[order as usize];
            let Some(pos) = list.iter().position(|&f| f == buddy) else { break };
            list.remove(pos);
            first = first.min(buddy);
            order += 1;
            self.log.push(EventKind::Merge, first, block.zone, order, None);
        }
        self.zones[zi].free_areas[order as usize].push(first);
        Ok(())
    }

    /// Returns a discarded slab's block, recording the recycle.
    pub fn recycle_slab_pages(&mut self, id: BlockId, cache: CacheId) -> Result<()> {
        let block = *self.allocated.get(&id.0).ok_or(SimError::DoublePageFree(id.0))?;
        self.log.push(
            EventKind::SlabRecycle,
            block.first_frame,
            block.zone,
            block.order,
            Some(Owner::Slab { cache }),
        );
        for frame in block.first_frame..block.first_frame + block.frames() {
            self.recycled.insert(frame, cache);
        }
        self.free_pages(id)
    }

    pub fn read(&self, addr: u64, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        let ps = self.page_size as u64;
        let mut done = 0usize;
        while done < len {
            let a = addr + done as u64;
            let (frame, off) = (a / ps, (a % ps) as usize);
            let n = (self.page_size - off).min(len - done);
            match self.memory.get(&frame) {
                Some(Frame::Bytes(page)) => out[done..done + n].copy_from_slice(&page[off..off + n]),
                Some(p @ Frame::Pattern(_)) => {
                    for (i, b) in out[done..done + n].iter_mut().enumerate() {
                        *b = p.byte(off + i);
                    }
                }
                None => {}
            }
            done += n;
        }
        out
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) {
        let ps = self.page_size as u64;
        let mut done = 0usize;
        while done < bytes.len() {
            let a = addr + done as u64;
            let (frame, off) = (a / ps, (a % ps) as usize);
            let n = (self.page_size - off).min(bytes.len() - done);
            let ps = self.page_size;
            let slot = self
                .memory
                .entry(frame)
                .or_insert_with(|| Frame::Bytes(vec![0u8; ps].into_boxed_slice()));
            if let Frame::Pattern(_) = slot {
                let expanded: Box<[u8]> = (0..ps).map(|i| slot.byte(i)).collect();
                *slot = Frame::Bytes(expanded);
            }
            let Frame::Bytes(page) = slot else { unreachable!() };
            page[off..off + n].copy_from_slice(&bytes[done..done + n]);
            done += n;
        }
    }

    /// Overwrites whole frames with `pattern` repeated from each frame start.
    pub fn fill_frames(&mut self, first_frame: u64, count: u64, pattern: &Arc<[u8]>) {
        assert!(!pattern.is_empty(), "fill pattern must not be empty");
        for frame in first_frame..first_frame + count {
            self.memory.insert(frame, Frame::Pattern(Arc::clone(pattern)));
        }
    }

    pub fn read_u64(&self, addr: u64) -> u64 {
        u64::from_le_bytes(self.read(addr, 8).try_into().expect("8 bytes"))
    }

    pub fn write_u64(&mut self, addr: u64, value: u64) {
        self.write(addr, &value.to_le_bytes());
    }

    pub fn frame_addr(&self, frame: u64) -> u64 {
        frame * self.page_size as u64
    }

    /// Sorted list of every free block as `(first_frame, order)`.
    pub fn free_blocks(&self) -> Vec<(u64, u8)> {
        let mut out: Vec<(u64, u8)> = self
            .zones
            .iter()
            .flat_map(|z| {
                z.free_areas
                    .iter()
                    .enumerate()
                    .flat_map(|(k, l)| l.iter().map(move |&f| (f, k as u8)))
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Checks conservation, alignment and disjointness; returns the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for z in &self.zones {
            let mut free = 0;
            for (k, list) in z.free_areas.iter().enumerate() {
                for &f in list {
                    if (f - z.base) % (1 << k) != 0 {
                        return Err(format!("free block {f} of order {k} misaligned"));
                    }
                    if !z.contains(f) || f + (1 << k) > z.base + z.total_frames {
                        return Err(format!("free block {f} of order {k} outside zone {:?}", z.id));
                    }
                    free += 1u64 << k;
                }
            }
            if free != z.free_frames {
                return Err(format!("zone {:?}: counted {free} free, recorded {}", z.id, z.free_frames));
            }
            let alloc = self.allocated_frames_in(z.id);
            if free + alloc != z.total_frames {
                return Err(format!(
                    "zone {:?}: free {free} + allocated {alloc} != total {}",
                    z.id, z.total_frames
                ));
            }
        }
        let mut ranges: Vec<(u64, u64)> = self
            .free_blocks()
            .into_iter()
            .map(|(f, k)| (f, f + (1 << k)))
            .chain(self.allocated.values().map(|b| (b.first_frame, b.first_frame + b.frames())))
            .collect();
        ranges.sort_unstable();
        for w in ranges.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(format!("blocks {:?} and {:?} overlap", w[0], w[1]));
            }
        }
        Ok(())
    }
}
