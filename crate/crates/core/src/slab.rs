//! SLUB-style object caches carved out of page-allocator blocks.
//!
//! A cache owns at most one active slab; allocation takes the next slot from
//! the active slab's freelist. A slab whose freelist runs dry moves to the full
//! list. Frees move full slabs to the partial list, which is promoted FIFO.
//!
//! Every slab keeps an `inuse` ledger: allocations add one, every accepted free
//! subtracts one, including a second free of an already-free slot. When the
//! ledger of a non-active slab reaches zero the slab is discarded and its
//! pages go back to the buddy allocator. A double free therefore lets a slab be
//! discarded while one of its objects is still referenced.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::page_allocator::{BlockId, GfpProfile, Owner, PageAllocator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlabId(pub u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub name: String,
    pub object_size: usize,
    #[serde(default)]
    pub slab_order: u8,
    #[serde(default)]
    pub freelist_random: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub hardened: bool,
    #[serde(default = "GfpProfile::slab")]
    pub gfp: GfpProfile,
}

fn default_true() -> bool {
    true
}

impl CacheConfig {
    pub fn new(name: impl Into<String>, object_size: usize, slab_order: u8) -> Self {
        Self {
            name: name.into(),
            object_size,
            slab_order,
            freelist_random: false,
            seed: 0,
            hardened: true,
            gfp: GfpProfile::slab(),
        }
    }

    pub fn randomized(mut self, seed: u64) -> Self {
        self.freelist_random = true;
        self.seed = seed;
        self
    }

    pub fn hardened(mut self, on: bool) -> Self {
        self.hardened = on;
        self
    }

    pub fn objects_per_slab(&self, page_size: usize) -> usize {
        if self.object_size == 0 {
            return 0;
        }
        (page_size << self.slab_order) / self.object_size
    }
}

/// Handle to an allocated object. Stays valid as a value after the object is
/// freed; [`SlabAllocator::is_live`] tells whether it still names the object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub cache: CacheId,
    pub slab: SlabId,
    pub slot: u16,
    pub generation: u32,
    /// Byte offset of the object within the slab's page block.
    pub offset: usize,
    /// Physical byte address of the object.
    pub addr: u64,
}

#[derive(Debug, Clone)]
pub struct Slab {
    pub id: SlabId,
    pub cache: CacheId,
    pub block: BlockId,
    pub first_frame: u64,
    pub occupancy: Vec<bool>,
    pub slot_order: Vec<u16>,
    pub generation: Vec<u32>,
    /// Free slots; the last element is the freelist head.
    pub freelist: Vec<u16>,
    /// Allocations minus accepted frees.
    pub inuse: usize,
    /// Total accepted frees, for diagnostics.
    pub frees: usize,
}

impl Slab {
    pub fn live_slots(&self) -> usize {
        self.occupancy.iter().filter(|o| **o).count()
    }

    pub fn freelist_head(&self) -> Option<u16> {
        self.freelist.last().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabState {
    Active,
    Partial,
    Full,
}

#[derive(Debug, Clone)]
pub struct KmemCache {
    pub id: CacheId,
    pub config: CacheConfig,
    pub objects_per_slab: usize,
    pub active: Option<SlabId>,
    pub partial: VecDeque<SlabId>,
    pub full: Vec<SlabId>,
    pub discarded: u64,
    rng: ChaCha8Rng,
}

impl KmemCache {
    pub fn slab_state(&self, id: SlabId) -> Option<SlabState> {
        if self.active == Some(id) {
            Some(SlabState::Active)
        } else if self.partial.contains(&id) {
            Some(SlabState::Partial)
        } else if self.full.contains(&id) {
            Some(SlabState::Full)
        } else {
            None
        }
    }
}

/// Result of a successful free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeOutcome {
    /// The slot was already free; the free was accepted anyway.
    pub was_double: bool,
    /// The free discarded the slab.
    pub discarded: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SlabAllocator {
    caches: Vec<KmemCache>,
    slabs: BTreeMap<SlabId, Slab>,
    next_slab: u64,
}

impl SlabAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cache_create(&mut self, config: CacheConfig, page_size: usize) -> Result<CacheId> {
        let capacity = page_size << config.slab_order;
        if config.object_size == 0 || config.object_size > capacity {
            return Err(SimError::ObjectTooLarge {
                object_size: config.object_size,
                capacity,
            });
        }
        let n = config.objects_per_slab(page_size);
        if n > u16::MAX as usize {
            return Err(SimError::InvalidConfig(format!("{n} objects per slab")));
        }
        let id = CacheId(self.caches.len() as u32);
        self.caches.push(KmemCache {
            id,
            objects_per_slab: n,
            active: None,
            partial: VecDeque::new(),
            full: Vec::new(),
            discarded: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        });
        Ok(id)
    }

    pub fn caches(&self) -> &[KmemCache] {
        &self.caches
    }

    pub fn cache(&self, id: CacheId) -> Result<&KmemCache> {
        self.caches.get(id.0 as usize).ok_or(SimError::UnknownCache(id.0))
    }

    fn cache_mut(&mut self, id: CacheId) -> Result<&mut KmemCache> {
        self.caches.get_mut(id.0 as usize).ok_or(SimError::UnknownCache(id.0))
    }

    /// Replaces the GFP profile of every cache.
    pub fn set_all_gfp(&mut self, gfp: GfpProfile) {
        for c in &mut self.caches {
            c.config.gfp = gfp;
        }
    }

    pub fn slab(&self, id: SlabId) -> Option<&Slab> {
        self.slabs.get(&id)
    }

    pub fn slabs(&self) -> impl Iterator<Item = &Slab> {
        self.slabs.values()
    }

    /// Frames held by live slabs.
    pub fn slab_frames(&self) -> u64 {
        self.slabs
            .values()
            .map(|s| 1u64 << self.caches[s.cache.0 as usize].config.slab_order)
            .sum()
    }

    pub fn is_live(&self, r: &ObjectRef) -> bool {
        self.slabs
            .get(&r.slab)
            .is_some_and(|s| s.occupancy[r.slot as usize] && s.generation[r.slot as usize] == r.generation)
    }

    /// Allocates one object. The flag reports whether a fresh slab was created
    /// to serve it.
    pub fn object_alloc(&mut self, pages: &mut PageAllocator, cache: CacheId) -> Result<(ObjectRef, bool)> {
        let mut fresh = false;
        let slab_id = match self.cache(cache)?.active {
            Some(id) => id,
            None => {
                let c = self.cache_mut(cache)?;
                let id = match c.partial.pop_front() {
                    Some(id) => id,
                    None => {
                        fresh = true;
                        self.new_slab(pages, cache)?
                    }
                };
                self.caches[cache.0 as usize].active = Some(id);
                id
            }
        };
        let object_size = self.caches[cache.0 as usize].config.object_size;
        let page_size = pages.page_size() as u64;
        let slab = self.slabs.get_mut(&slab_id).expect("active slab exists");
        let slot = slab.freelist.pop().expect("active slab has a free slot");
        slab.occupancy[slot as usize] = true;
        slab.inuse += 1;
        let offset = slot as usize * object_size;
        let r = ObjectRef {
            cache,
            slab: slab_id,
            slot,
            generation: slab.generation[slot as usize],
            offset,
            addr: slab.first_frame * page_size + offset as u64,
        };
        if slab.freelist.is_empty() {
            let c = &mut self.caches[cache.0 as usize];
            c.active = None;
            c.full.push(slab_id);
        }
        Ok((r, fresh))
    }

    fn new_slab(&mut self, pages: &mut PageAllocator, cache: CacheId) -> Result<SlabId> {
        let c = &mut self.caches[cache.0 as usize];
        let n = c.objects_per_slab;
        let block = pages.alloc_pages(&c.config.gfp, c.config.slab_order, Owner::Slab { cache })?;
        let mut slot_order: Vec<u16> = (0..n as u16).collect();
        if c.config.freelist_random {
            slot_order.shuffle(&mut c.rng);
        }
        let id = SlabId(self.next_slab);
        self.next_slab += 1;
        let mut freelist = slot_order.clone();
        freelist.reverse();
        self.slabs.insert(
            id,
            Slab {
                id,
                cache,
                block: block.id,
                first_frame: block.first_frame,
                occupancy: vec![false; n],
                slot_order,
                generation: vec![0; n],
                freelist,
                inuse: 0,
                frees: 0,
            },
        );
        Ok(id)
    }

    /// Frees the slot named by `r`. The generation in `r` is not checked: a
    /// stale reference frees whatever currently sits in its slot.
    pub fn object_free(&mut self, pages: &mut PageAllocator, r: &ObjectRef) -> Result<FreeOutcome> {
        let hardened = self.cache(r.cache)?.config.hardened;
        let slab = self.slabs.get_mut(&r.slab).ok_or(SimError::UnknownSlab(r.slab.0))?;
        if slab.cache != r.cache {
            return Err(SimError::UnknownSlab(r.slab.0));
        }
        let slot = r.slot as usize;
        let was_double = !slab.occupancy[slot];
        if was_double && hardened && slab.freelist_head() == Some(r.slot) {
            return Err(SimError::DoubleFreeDetected {
                slab: r.slab.0,
                slot: r.slot,
            });
        }
        let was_full = slab.freelist.is_empty();
        slab.occupancy[slot] = false;
        slab.generation[slot] = slab.generation[slot].wrapping_add(1);
        slab.freelist.push(r.slot);
        slab.inuse = slab.inuse.saturating_sub(1);
        slab.frees += 1;
        let inuse = slab.inuse;
        let block = slab.block;
        let c = &mut self.caches[r.cache.0 as usize];
        if was_full {
            c.full.retain(|s| *s != r.slab);
            c.partial.push_back(r.slab);
        }
        let discard = inuse == 0 && c.active != Some(r.slab);
        if discard {
            c.partial.retain(|s| *s != r.slab);
            c.discarded += 1;
            self.slabs.remove(&r.slab);
            pages.recycle_slab_pages(block, r.cache)?;
        }
        Ok(FreeOutcome {
            was_double,
            discarded: discard,
        })
    }

    pub fn dump(&self) -> CacheDump {
        CacheDump {
            caches: self
                .caches
                .iter()
                .map(|c| CacheSummary {
                    id: c.id,
                    name: c.config.name.clone(),
                    object_size: c.config.object_size,
                    objects_per_slab: c.objects_per_slab,
                    discarded: c.discarded,
                    slabs: self
                        .slabs
                        .values()
                        .filter(|s| s.cache == c.id)
                        .map(|s| SlabSummary {
                            id: s.id,
                            block: s.block,
                            state: c.slab_state(s.id).expect("live slab is listed"),
                            inuse: s.inuse,
                            occupancy: s.occupancy.iter().map(|o| if *o { '1' } else { '0' }).collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// JSON inspection view of every cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheDump {
    pub caches: Vec<CacheSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheSummary {
    pub id: CacheId,
    pub name: String,
    pub object_size: usize,
    pub objects_per_slab: usize,
    pub discarded: u64,
    pub slabs: Vec<SlabSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlabSummary {
    pub id: SlabId,
    pub block: BlockId,
    pub state: SlabState,
    pub inuse: usize,
    /// One character per slot, `1` when occupied.
    pub occupancy: String,
}
