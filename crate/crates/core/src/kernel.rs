//! The simulated kernel: page and slab allocators, page-spraying callsites,
//! ring buffers with user mappings, RCU-deferred frees and background noise.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::noise::{NoiseOp, NoiseProfile};
use crate::page_allocator::{
    BlockId, GfpProfile, Owner, PageAllocator, Zone, DEFAULT_MAX_ORDER, DEFAULT_PAGE_SIZE,
};
use crate::slab::{CacheConfig, CacheId, FreeOutcome, ObjectRef, SlabAllocator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CallsiteId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RingId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallsiteKind {
    CopyWriteRaw,
    CopyWriteFrags,
    Remap,
}

impl CallsiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CallsiteKind::CopyWriteRaw => "copy_write_raw",
            CallsiteKind::CopyWriteFrags => "copy_write_frags",
            CallsiteKind::Remap => "remap",
        }
    }

    pub fn is_copy_write(self) -> bool {
        !matches!(self, CallsiteKind::Remap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usability {
    Full,
    Limited,
}

/// Registry entry as stored in the callsite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallsiteSpec {
    pub name: String,
    pub kind: CallsiteKind,
    pub gfp: GfpProfile,
    pub syscall: String,
    /// Pages per call for copy-write kinds, blocks per ring for remap.
    pub page_limit: usize,
    pub usability: Usability,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallsiteRegistry {
    pub version: u32,
    pub callsites: Vec<CallsiteSpec>,
}

const REGISTRY_JSON: &str = include_str!("../data/callsites.json");

/// The bundled registry of page-spraying callsites.
pub fn default_registry() -> &'static CallsiteRegistry {
    static REG: OnceLock<CallsiteRegistry> = OnceLock::new();
    REG.get_or_init(|| serde_json::from_str(REGISTRY_JSON).expect("bundled registry parses"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Callsite {
    pub id: CallsiteId,
    pub spec: CallsiteSpec,
}

/// Kernel-side record of one sprayed buffer page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferSlot {
    pub callsite: CallsiteId,
    pub page: Option<BlockId>,
    pub offset: usize,
    pub len: usize,
    pub ops_token: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingBuffer {
    pub id: RingId,
    pub callsite: CallsiteId,
    pub blocks: Vec<BlockId>,
    pub order: u8,
    pub mapped: bool,
    pub released: bool,
}

/// User-space view of a mapped ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserMapping {
    pub ring: RingId,
    pub span: usize,
}

/// Ops-table value installed in buffer slots and function-table victims.
pub const KERNEL_OPS_TOKEN: u64 = 0xffff_ffff_8220_0f40;
/// Offset of the function-table pointer inside a victim object.
pub const OPS_OFFSET: usize = 16;
/// Offset of the uid field inside a credential.
pub const UID_OFFSET: usize = 4;
pub const CRED_SIZE: usize = 192;
pub const UNPRIVILEGED_UID: u32 = 1000;

/// kmalloc size classes.
pub const KMALLOC_SIZES: [usize; 13] = [8, 16, 32, 64, 96, 128, 192, 256, 512, 1024, 2048, 4096, 8192];

pub fn kmalloc_slab_order(size: usize) -> u8 {
    if size <= 512 {
        0
    } else {
        3
    }
}

/// Smallest size class that fits `size`.
pub fn size_class(size: usize) -> Option<usize> {
    KMALLOC_SIZES.iter().copied().find(|&c| c >= size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub zones: BTreeMap<Zone, u64>,
    pub page_size: usize,
    pub max_order: u8,
    /// Seeds the freelist permutations of every cache.
    pub seed: u64,
    pub freelist_random: bool,
    pub hardened: bool,
    /// Per-size-class overrides; the class is chosen from `object_size`.
    pub cache_overrides: Vec<CacheConfig>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            zones: [(Zone::Dma, 256), (Zone::Normal, 4096)].into_iter().collect(),
            page_size: DEFAULT_PAGE_SIZE,
            max_order: DEFAULT_MAX_ORDER,
            seed: 0,
            freelist_random: false,
            hardened: true,
            cache_overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Kernel {
    pub pages: PageAllocator,
    pub slab: SlabAllocator,
    config: KernelConfig,
    callsites: Vec<Callsite>,
    buffers: Vec<BufferSlot>,
    rings: Vec<RingBuffer>,
    rcu: BTreeMap<u64, Vec<ObjectRef>>,
    rcu_results: Vec<(ObjectRef, Result<FreeOutcome>)>,
    kmalloc: Vec<(usize, CacheId)>,
    typed: BTreeMap<String, CacheId>,
    cred_cache: CacheId,
    object_isolation: bool,
    slab_gfp: GfpProfile,
    noise_objects: Vec<ObjectRef>,
    noise_pages: Vec<BlockId>,
    pub noise_ooms: u64,
    tick: u64,
}

fn mix(seed: u64, i: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Kernel {
    pub fn new(config: KernelConfig) -> Result<Self> {
        Self::with_registry(config, default_registry())
    }

    pub fn with_registry(config: KernelConfig, registry: &CallsiteRegistry) -> Result<Self> {
        let pages = PageAllocator::new(&config.zones, config.page_size, config.max_order)?;
        let callsites = registry
            .callsites
            .iter()
            .enumerate()
            .map(|(i, spec)| Callsite {
                id: CallsiteId(i as u32),
                spec: spec.clone(),
            })
            .collect();
        let mut k = Self {
            pages,
            slab: SlabAllocator::new(),
            callsites,
            buffers: Vec::new(),
            rings: Vec::new(),
            rcu: BTreeMap::new(),
            rcu_results: Vec::new(),
            kmalloc: Vec::new(),
            typed: BTreeMap::new(),
            cred_cache: CacheId(0),
            object_isolation: false,
            slab_gfp: GfpProfile::slab(),
            noise_objects: Vec::new(),
            noise_pages: Vec::new(),
            noise_ooms: 0,
            tick: 0,
            config,
        };
        k.create_caches()?;
        Ok(k)
    }

    fn class_config(&self, class: usize, name: String) -> CacheConfig {
        let mut cfg = CacheConfig::new(name, class, kmalloc_slab_order(class));
        cfg.freelist_random = self.config.freelist_random;
        cfg.hardened = self.config.hardened;
        if let Some(o) = self
            .config
            .cache_overrides
            .iter()
            .find(|o| size_class(o.object_size) == Some(class))
        {
            cfg.slab_order = o.slab_order;
            cfg.freelist_random = o.freelist_random;
            cfg.hardened = o.hardened;
        }
        cfg.gfp = self.slab_gfp;
        cfg
    }

    fn create_caches(&mut self) -> Result<()> {
        for (i, &class) in KMALLOC_SIZES.iter().enumerate() {
            let mut cfg = self.class_config(class, format!("kmalloc-{class}"));
            cfg.seed = mix(self.config.seed, i as u64);
            let id = self.slab.cache_create(cfg, self.config.page_size)?;
            self.kmalloc.push((class, id));
        }
        let mut cred = CacheConfig::new("cred_jar", CRED_SIZE, 0);
        cred.freelist_random = self.config.freelist_random;
        cred.hardened = self.config.hardened;
        cred.seed = mix(self.config.seed, KMALLOC_SIZES.len() as u64);
        cred.gfp = self.slab_gfp;
        self.cred_cache = self.slab.cache_create(cred, self.config.page_size)?;
        Ok(())
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn page_size(&self) -> usize {
        self.config.page_size
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// No page has ever been allocated.
    pub fn is_pristine(&self) -> bool {
        self.pages.log.is_empty()
    }

    pub fn callsites(&self) -> &[Callsite] {
        &self.callsites
    }

    pub fn callsite(&self, id: CallsiteId) -> Result<&Callsite> {
        self.callsites
            .get(id.0 as usize)
            .ok_or_else(|| SimError::UnknownCallsite(format!("#{}", id.0)))
    }

    pub fn callsite_by_name(&self, name: &str) -> Result<CallsiteId> {
        self.callsites
            .iter()
            .find(|c| c.spec.name == name)
            .map(|c| c.id)
            .ok_or_else(|| SimError::UnknownCallsite(name.to_string()))
    }

    pub fn set_callsite_gfp(&mut self, id: CallsiteId, gfp: GfpProfile) -> Result<()> {
        self.callsite(id)?;
        self.callsites[id.0 as usize].spec.gfp = gfp;
        Ok(())
    }

    /// Moves every slab cache, present and future, to `gfp`.
    pub(crate) fn set_slab_gfp(&mut self, gfp: GfpProfile) {
        self.slab_gfp = gfp;
        self.slab.set_all_gfp(gfp);
    }

    pub(crate) fn set_object_isolation(&mut self, on: bool) {
        self.object_isolation = on;
    }

    pub fn object_isolation(&self) -> bool {
        self.object_isolation
    }

    /// Rebuilds the page allocator with new zones. Only valid while pristine.
    pub(crate) fn rezone(&mut self, zones: BTreeMap<Zone, u64>) -> Result<()> {
        if !self.is_pristine() {
            return Err(SimError::NotPristine);
        }
        self.pages = PageAllocator::new(&zones, self.config.page_size, self.config.max_order)?;
        self.config.zones = zones;
        Ok(())
    }

    pub fn kmalloc_cache(&self, size: usize) -> Result<CacheId> {
        let class = size_class(size).ok_or(SimError::ObjectTooLarge {
            object_size: size,
            capacity: *KMALLOC_SIZES.last().expect("nonempty"),
        })?;
        Ok(self.kmalloc.iter().find(|(c, _)| *c == class).expect("class exists").1)
    }

    pub fn cred_cache(&self) -> CacheId {
        self.cred_cache
    }

    /// Cache serving objects of `type_label` and `size`. With object
    /// isolation each label gets its own cache.
    pub fn cache_for(&mut self, size: usize, type_label: &str) -> Result<CacheId> {
        let shared = self.kmalloc_cache(size)?;
        if !self.object_isolation {
            return Ok(shared);
        }
        if let Some(&id) = self.typed.get(type_label) {
            return Ok(id);
        }
        let class = self.slab.cache(shared)?.config.object_size;
        let mut cfg = self.class_config(class, type_label.to_string());
        cfg.seed = mix(self.config.seed, 1000 + self.typed.len() as u64);
        let id = self.slab.cache_create(cfg, self.config.page_size)?;
        self.typed.insert(type_label.to_string(), id);
        Ok(id)
    }

    pub fn kmalloc(&mut self, size: usize, type_label: &str) -> Result<(ObjectRef, bool)> {
        let cache = self.cache_for(size, type_label)?;
        self.slab.object_alloc(&mut self.pages, cache)
    }

    pub fn alloc_in(&mut self, cache: CacheId) -> Result<(ObjectRef, bool)> {
        self.slab.object_alloc(&mut self.pages, cache)
    }

    pub fn kfree(&mut self, r: &ObjectRef) -> Result<FreeOutcome> {
        self.slab.object_free(&mut self.pages, r)
    }

    /// Installs a function-table pointer in a freshly allocated object.
    pub fn init_ops_object(&mut self, r: &ObjectRef) {
        self.pages.write_u64(r.addr + OPS_OFFSET as u64, KERNEL_OPS_TOKEN);
    }

    /// Writes an unprivileged credential into a freshly allocated object.
    pub fn init_cred(&mut self, r: &ObjectRef) {
        let mut cred = vec![0u8; CRED_SIZE];
        cred[0..4].copy_from_slice(&1u32.to_le_bytes());
        for field in 0..8 {
            let at = UID_OFFSET + 4 * field;
            cred[at..at + 4].copy_from_slice(&UNPRIVILEGED_UID.to_le_bytes());
        }
        self.pages.write(r.addr, &cred);
    }

    /// Function-table pointer as seen through `r`, live or not.
    pub fn read_ops(&self, r: &ObjectRef) -> u64 {
        self.pages.read_u64(r.addr + OPS_OFFSET as u64)
    }

    pub fn read_uid(&self, r: &ObjectRef) -> u32 {
        u32::from_le_bytes(self.pages.read(r.addr + UID_OFFSET as u64, 4).try_into().expect("4 bytes"))
    }

    /// Allocates `n_pages` order-0 pages straight from the page allocator and
    /// fills each with `payload` repeated.
    pub fn spray_copy_write(&mut self, callsite: CallsiteId, payload: &[u8], n_pages: usize) -> Result<Vec<BlockId>> {
        let cs = self.callsite(callsite)?;
        if !cs.spec.kind.is_copy_write() {
            return Err(SimError::CallsiteKind {
                callsite: cs.spec.name.clone(),
                kind: cs.spec.kind.as_str(),
                needed: "copy_write",
            });
        }
        if payload.is_empty() {
            return Err(SimError::EmptyPayload);
        }
        if n_pages > cs.spec.page_limit {
            return Err(SimError::PerCallLimit {
                requested: n_pages,
                limit: cs.spec.page_limit,
            });
        }
        let gfp = cs.spec.gfp;
        let pattern: Arc<[u8]> = Arc::from(payload);
        let mut out = Vec::with_capacity(n_pages);
        for _ in 0..n_pages {
            let block = self.pages.alloc_pages(&gfp, 0, Owner::Buffer { callsite })?;
            self.pages.fill_frames(block.first_frame, 1, &pattern);
            self.buffers.push(BufferSlot {
                callsite,
                page: Some(block.id),
                offset: 0,
                len: self.config.page_size,
                ops_token: KERNEL_OPS_TOKEN,
            });
            out.push(block.id);
        }
        Ok(out)
    }

    pub fn buffers(&self) -> &[BufferSlot] {
        &self.buffers
    }

    /// Allocates a ring of `block_count` blocks of `order`. On failure every
    /// block allocated so far is released.
    pub fn ring_setup(&mut self, callsite: CallsiteId, block_count: usize, order: u8) -> Result<RingId> {
        let cs = self.callsite(callsite)?;
        if cs.spec.kind != CallsiteKind::Remap {
            return Err(SimError::CallsiteKind {
                callsite: cs.spec.name.clone(),
                kind: cs.spec.kind.as_str(),
                needed: "remap",
            });
        }
        if block_count == 0 {
            return Err(SimError::EmptyRing);
        }
        if block_count > cs.spec.page_limit {
            return Err(SimError::PerCallLimit {
                requested: block_count,
                limit: cs.spec.page_limit,
            });
        }
        let gfp = cs.spec.gfp;
        let mut blocks = Vec::with_capacity(block_count);
        for _ in 0..block_count {
            match self.pages.alloc_pages(&gfp, order, Owner::Buffer { callsite }) {
                Ok(b) => blocks.push(b.id),
                Err(e) => {
                    for b in blocks {
                        self.pages.free_pages(b)?;
                    }
                    return Err(e);
                }
            }
        }
        let id = RingId(self.rings.len() as u32);
        self.rings.push(RingBuffer {
            id,
            callsite,
            blocks,
            order,
            mapped: false,
            released: false,
        });
        Ok(id)
    }

    pub fn ring(&self, id: RingId) -> Result<&RingBuffer> {
        self.rings
            .get(id.0 as usize)
            .filter(|r| !r.released)
            .ok_or(SimError::UnknownRing(id.0))
    }

    pub fn ring_mmap(&mut self, id: RingId) -> Result<UserMapping> {
        let block_bytes;
        let count;
        {
            let ring = self.ring(id)?;
            if ring.mapped {
                return Err(SimError::AlreadyMapped(id.0));
            }
            block_bytes = self.config.page_size << ring.order;
            count = ring.blocks.len();
        }
        self.rings[id.0 as usize].mapped = true;
        Ok(UserMapping {
            ring: id,
            span: block_bytes * count,
        })
    }

    /// Frees every block of the ring.
    pub fn ring_release(&mut self, id: RingId) -> Result<()> {
        let blocks = self.ring(id)?.blocks.clone();
        for b in blocks {
            self.pages.free_pages(b)?;
        }
        self.rings[id.0 as usize].released = true;
        Ok(())
    }

    /// Physical address backing byte `offset` of the mapping.
    fn mapping_addr(&self, m: &UserMapping, offset: usize) -> Result<u64> {
        let ring = self.ring(m.ring)?;
        let block_bytes = self.config.page_size << ring.order;
        let block = ring.blocks[offset / block_bytes];
        Ok(self.pages.frame_addr(block.0) + (offset % block_bytes) as u64)
    }

    fn check_range(m: &UserMapping, offset: usize, len: usize) -> Result<()> {
        if offset.checked_add(len).is_none_or(|end| end > m.span) {
            return Err(SimError::OutOfRange {
                offset,
                len,
                span: m.span,
            });
        }
        Ok(())
    }

    pub fn user_read(&self, m: &UserMapping, offset: usize, len: usize) -> Result<Vec<u8>> {
        Self::check_range(m, offset, len)?;
        let mut out = Vec::with_capacity(len);
        let mut at = offset;
        while at < offset + len {
            let n = (self.config.page_size - at % self.config.page_size).min(offset + len - at);
            out.extend(self.pages.read(self.mapping_addr(m, at)?, n));
            at += n;
        }
        Ok(out)
    }

    pub fn user_write(&mut self, m: &UserMapping, offset: usize, bytes: &[u8]) -> Result<()> {
        Self::check_range(m, offset, bytes.len())?;
        let mut at = offset;
        while at < offset + bytes.len() {
            let n = (self.config.page_size - at % self.config.page_size).min(offset + bytes.len() - at);
            let addr = self.mapping_addr(m, at)?;
            self.pages.write(addr, &bytes[at - offset..at - offset + n]);
            at += n;
        }
        Ok(())
    }

    /// Fills every frame of the mapping with `pattern` repeated.
    pub fn user_fill(&mut self, m: &UserMapping, pattern: &[u8]) -> Result<()> {
        if pattern.is_empty() {
            return Err(SimError::EmptyPayload);
        }
        let ring = self.ring(m.ring)?;
        let frames = 1u64 << ring.order;
        let blocks = ring.blocks.clone();
        let pattern: Arc<[u8]> = Arc::from(pattern);
        for b in blocks {
            self.pages.fill_frames(b.0, frames, &pattern);
        }
        Ok(())
    }

    /// Mapping offset of physical byte `addr`, if the ring covers it.
    pub fn mapping_offset_of(&self, m: &UserMapping, addr: u64) -> Option<usize> {
        let ring = self.ring(m.ring).ok()?;
        let block_bytes = (self.config.page_size << ring.order) as u64;
        ring.blocks.iter().enumerate().find_map(|(i, b)| {
            let start = self.pages.frame_addr(b.0);
            (addr >= start && addr < start + block_bytes).then(|| i * block_bytes as usize + (addr - start) as usize)
        })
    }

    /// Frees `r` after `grace` ticks; immediately when `grace` is 0.
    pub fn rcu_defer_free(&mut self, r: ObjectRef, grace: u64) -> Result<Option<FreeOutcome>> {
        if grace == 0 {
            return self.kfree(&r).map(Some);
        }
        self.rcu.entry(self.tick + grace).or_default().push(r);
        Ok(None)
    }

    pub fn rcu_pending(&self) -> usize {
        self.rcu.values().map(Vec::len).sum()
    }

    /// Outcomes of deferred frees executed so far, in execution order.
    pub fn rcu_results(&self) -> &[(ObjectRef, Result<FreeOutcome>)] {
        &self.rcu_results
    }

    /// Starts the next tick and runs the frees that fall due in it.
    pub fn advance_tick(&mut self) {
        self.tick += 1;
        self.pages.log.tick = self.tick;
        if let Some(due) = self.rcu.remove(&self.tick) {
            for r in due {
                let res = self.kfree(&r);
                self.rcu_results.push((r, res));
            }
        }
    }

    /// Applies one noise operation. Allocation failures are counted, not raised.
    pub fn apply_noise<R: Rng + ?Sized>(&mut self, profile: &NoiseProfile, op: NoiseOp, rng: &mut R) {
        match op {
            NoiseOp::Alloc(i) => {
                let src = &profile.cache_allocs[i];
                let (size, label) = (src.size, src.label.clone());
                match self.kmalloc(size, &label) {
                    Ok((r, _)) => self.noise_objects.push(r),
                    Err(_) => self.noise_ooms += 1,
                }
            }
            NoiseOp::FreeObject => {
                if !self.noise_objects.is_empty() {
                    let r = self.noise_objects.swap_remove(rng.random_range(0..self.noise_objects.len()));
                    // A noise object can share a slot with a stale attacker
                    // reference; a rejected free just drops it.
                    let _ = self.kfree(&r);
                }
            }
            NoiseOp::AllocPage => match self.pages.alloc_pages(&GfpProfile::noise(), 0, Owner::UserNoise) {
                Ok(b) => self.noise_pages.push(b.id),
                Err(_) => self.noise_ooms += 1,
            },
            NoiseOp::FreePage => {
                if !self.noise_pages.is_empty() {
                    let b = self.noise_pages.swap_remove(rng.random_range(0..self.noise_pages.len()));
                    let _ = self.pages.free_pages(b);
                }
            }
        }
    }

    /// Draws and applies one tick of noise; returns the number of allocator
    /// events it produced.
    pub fn noise_tick<R: Rng + ?Sized>(&mut self, profile: &NoiseProfile, rng: &mut R) -> usize {
        let before = self.pages.log.len();
        for op in profile.draw(rng) {
            self.apply_noise(profile, op, rng);
        }
        self.pages.log.len() - before
    }

    /// Registers an object as noise so later noise frees may release it.
    pub fn adopt_noise_object(&mut self, r: ObjectRef) {
        self.noise_objects.push(r);
    }

    /// Live objects allocated by noise.
    pub fn noise_objects(&self) -> &[ObjectRef] {
        &self.noise_objects
    }

    /// Whether `r`'s slot is currently held by a noise object.
    pub fn slot_held_by_noise(&self, r: &ObjectRef) -> bool {
        self.noise_objects
            .iter()
            .any(|n| n.slab == r.slab && n.slot == r.slot && self.slab.is_live(n))
    }
}
