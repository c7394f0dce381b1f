//! Randomized allocator drivers checked against independent models: a
//! frame bitmap for the page allocator and a per-slab live count for slabs.

use std::collections::{BTreeMap, BTreeSet};

use pagespray::error::SimError;
use pagespray::page_allocator::*;
use pagespray::slab::{CacheConfig, CacheId, ObjectRef, SlabAllocator, SlabId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OPS: usize = 10_000;

/// Frame owner in the oracle; `GAP` marks indices between zones.
const GAP: u64 = u64::MAX;

fn profiles() -> [GfpProfile; 4] {
    [
        GfpProfile::slab(),
        GfpProfile::buffer(),
        GfpProfile::dma(OwnerHint::BufferOwner),
        GfpProfile::new(Zone::Normal, false, OwnerHint::UserNoise),
    ]
}

struct FrameOracle {
    frames: Vec<Option<u64>>,
    zones: Vec<(Zone, u64, u64)>,
}

impl FrameOracle {
    fn new(pa: &PageAllocator) -> Self {
        let zones: Vec<(Zone, u64, u64)> = pa.zones().iter().map(|z| (z.id, z.base, z.base + z.total_frames)).collect();
        let end = zones.iter().map(|z| z.2).max().unwrap_or(0);
        let mut frames = vec![Some(GAP); end as usize];
        for &(_, lo, hi) in &zones {
            frames[lo as usize..hi as usize].fill(None);
        }
        Self { frames, zones }
    }

    fn free_count(&self) -> u64 {
        self.frames.iter().filter(|f| f.is_none()).count() as u64
    }

    /// Some order-aligned (relative to the zone base) run of `2^order` free
    /// frames inside `zone`.
    fn has_free_run(&self, zone: Zone, order: u8) -> bool {
        let Some(&(_, lo, hi)) = self.zones.iter().find(|z| z.0 == zone) else {
            return false;
        };
        let size = 1u64 << order;
        let mut start = lo;
        while start + size <= hi {
            if self.frames[start as usize..(start + size) as usize].iter().all(Option::is_none) {
                return true;
            }
            start += size;
        }
        false
    }

    fn zone_of(&self, frame: u64) -> Option<(Zone, u64, u64)> {
        self.zones.iter().copied().find(|z| frame >= z.1 && frame < z.2)
    }
}

/// Random alloc/free sequence on a two-zone allocator. Every step is checked
/// against a frame bitmap: placement, alignment, zone choice, exhaustion
/// claims and frame conservation.
pub fn check_page_ops(seed: u64, ops: usize) -> Result<(), String> {
    let sizes = BTreeMap::from([(Zone::Dma, 256), (Zone::Normal, 2048)]);
    let mut pa = PageAllocator::new(&sizes, DEFAULT_PAGE_SIZE, DEFAULT_MAX_ORDER).map_err(|e| e.to_string())?;
    let mut oracle = FrameOracle::new(&pa);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live: Vec<PageBlock> = Vec::new();
    for step in 0..ops {
        let grow = live.is_empty() || rng.random_bool(0.55);
        if grow {
            let order = [0u8, 0, 0, 1, 1, 2, 3, 4, 6][rng.random_range(0..9)];
            let profile = profiles()[rng.random_range(0..4)];
            match pa.alloc_pages(&profile, order, Owner::UserNoise) {
                Ok(b) => {
                    let (zone, lo, hi) = oracle.zone_of(b.first_frame).ok_or("block outside every zone")?;
                    if zone != b.zone || b.order != order {
                        return Err(format!("step {step}: block {b:?} reports wrong zone or order"));
                    }
                    if !fallback_chain(&profile).contains(&zone) {
                        return Err(format!("step {step}: {zone:?} not allowed for {profile:?}"));
                    }
                    if (b.first_frame - lo) % (1 << order) != 0 || b.first_frame + b.frames() > hi {
                        return Err(format!("step {step}: misplaced block {b:?}"));
                    }
                    for f in b.first_frame..b.first_frame + b.frames() {
                        if oracle.frames[f as usize].is_some() {
                            return Err(format!("step {step}: frame {f} handed out twice"));
                        }
                        oracle.frames[f as usize] = Some(b.id.0);
                    }
                    live.push(b);
                }
                Err(SimError::OutOfMemory { .. }) => {
                    for z in fallback_chain(&profile) {
                        if oracle.has_free_run(z, order) {
                            return Err(format!("step {step}: OOM with a free order-{order} run in {z:?}"));
                        }
                    }
                }
                Err(e) => return Err(format!("step {step}: {e}")),
            }
        } else {
            let b = live.swap_remove(rng.random_range(0..live.len()));
            pa.free_pages(b.id).map_err(|e| format!("step {step}: {e}"))?;
            for f in b.first_frame..b.first_frame + b.frames() {
                oracle.frames[f as usize] = None;
            }
            if rng.random_bool(0.05) && pa.free_pages(b.id) != Err(SimError::DoublePageFree(b.id.0)) {
                return Err(format!("step {step}: second free of {} accepted", b.id));
            }
        }
        if pa.free_frames() != oracle.free_count() {
            return Err(format!("step {step}: {} free, oracle {}", pa.free_frames(), oracle.free_count()));
        }
        let held: u64 = live.iter().map(PageBlock::frames).sum();
        if pa.allocated_frames() != held || pa.free_frames() + held != pa.total_frames() {
            return Err(format!("step {step}: conservation broken"));
        }
        if step % 97 == 0 || step + 1 == ops {
            pa.check_invariants().map_err(|e| format!("step {step}: {e}"))?;
            let listed: BTreeSet<u64> = pa
                .free_blocks()
                .into_iter()
                .flat_map(|(f, k)| f..f + (1 << k))
                .collect();
            let expected: BTreeSet<u64> = (0..oracle.frames.len() as u64)
                .filter(|&f| oracle.frames[f as usize].is_none())
                .collect();
            if listed != expected {
                return Err(format!("step {step}: free lists disagree with the bitmap"));
            }
        }
    }
    Ok(())
}

/// Random object alloc/free sequence over three caches. Checks discard
/// exactness against a per-slab live count, address uniqueness, generation
/// based staleness and page accounting. Returns the page event log.
pub fn check_slab_ops(seed: u64, ops: usize, randomized: bool) -> Result<String, String> {
    let mut pa = PageAllocator::new(&BTreeMap::from([(Zone::Normal, 4096)]), DEFAULT_PAGE_SIZE, DEFAULT_MAX_ORDER)
        .map_err(|e| e.to_string())?;
    let mut sa = SlabAllocator::new();
    let mut caches = Vec::new();
    for (i, (size, order)) in [(512usize, 0u8), (1024, 1), (2048, 0)].into_iter().enumerate() {
        let mut cfg = CacheConfig::new(format!("c{i}"), size, order);
        if randomized {
            cfg = cfg.randomized(seed.wrapping_add(i as u64));
        }
        caches.push(sa.cache_create(cfg, DEFAULT_PAGE_SIZE).map_err(|e| e.to_string())?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live: Vec<ObjectRef> = Vec::new();
    let mut stale: Vec<ObjectRef> = Vec::new();
    let mut count: BTreeMap<SlabId, usize> = BTreeMap::new();
    let mut addrs: BTreeSet<u64> = BTreeSet::new();
    for step in 0..ops {
        let err = |e: SimError| format!("step {step}: {e}");
        if live.is_empty() || rng.random_bool(0.52) {
            let cache: CacheId = caches[rng.random_range(0..caches.len())];
            let (r, fresh) = sa.object_alloc(&mut pa, cache).map_err(err)?;
            if fresh == count.contains_key(&r.slab) {
                return Err(format!("step {step}: fresh flag {fresh} for slab {:?}", r.slab));
            }
            if !addrs.insert(r.addr) {
                return Err(format!("step {step}: address {:#x} handed out twice", r.addr));
            }
            let slab = sa.slab(r.slab).ok_or("allocated from a missing slab")?;
            let owner = pa.block(slab.block).map(|b| b.owner);
            if owner != Some(Owner::Slab { cache }) {
                return Err(format!("step {step}: slab page owned by {owner:?}"));
            }
            *count.entry(r.slab).or_default() += 1;
            if !sa.is_live(&r) || slab.inuse != count[&r.slab] {
                return Err(format!("step {step}: new object not tracked"));
            }
            live.push(r);
        } else {
            let r = live.swap_remove(rng.random_range(0..live.len()));
            let was_active = sa.cache(r.cache).map_err(err)?.active == Some(r.slab);
            let block = sa.slab(r.slab).ok_or("freeing into a missing slab")?.block;
            let out = sa.object_free(&mut pa, &r).map_err(err)?;
            addrs.remove(&r.addr);
            let left = count.get_mut(&r.slab).ok_or("untracked slab")?;
            *left -= 1;
            let expect_discard = *left == 0 && !was_active;
            if out.discarded != expect_discard || out.was_double {
                return Err(format!("step {step}: {out:?}, {left} left, active {was_active}"));
            }
            if out.discarded {
                count.remove(&r.slab);
                let last = pa.log.events().iter().rev().find(|e| e.kind == EventKind::SlabRecycle);
                if sa.slab(r.slab).is_some() || last.map(|e| e.block) != Some(block.0) {
                    return Err(format!("step {step}: discard of {:?} not recorded", r.slab));
                }
            } else if sa.slab(r.slab).map(|s| s.inuse) != Some(*left) {
                return Err(format!("step {step}: inuse drifted from the live count"));
            }
            stale.push(r);
        }
        if stale.len() > 64 {
            stale.drain(..32);
        }
        if let Some(s) = stale.iter().find(|s| sa.is_live(s)) {
            return Err(format!("step {step}: freed {s:?} still reads as live"));
        }
        if pa.allocated_frames() != sa.slab_frames() {
            return Err(format!("step {step}: page and slab accounting disagree"));
        }
        if step % 101 == 0 {
            pa.check_invariants().map_err(|e| format!("step {step}: {e}"))?;
            if let Some(r) = live.iter().find(|r| !sa.is_live(r)) {
                return Err(format!("step {step}: live {r:?} reads as freed"));
            }
        }
    }
    Ok(pa.log.to_jsonl())
}

/// Consecutive double free is caught when hardened and accepted otherwise;
/// an intervening free hides it either way.
pub fn check_double_free(seed: u64, objects: usize) -> Result<(), String> {
    for hardened in [true, false] {
        for interleave in [false, true] {
            let mut pa = PageAllocator::new(&BTreeMap::from([(Zone::Normal, 256)]), DEFAULT_PAGE_SIZE, DEFAULT_MAX_ORDER)
                .map_err(|e| e.to_string())?;
            let mut sa = SlabAllocator::new();
            let cfg = CacheConfig::new("victim", 256, 0).randomized(seed).hardened(hardened);
            let c = sa.cache_create(cfg, DEFAULT_PAGE_SIZE).map_err(|e| e.to_string())?;
            let mut objs = Vec::new();
            for _ in 0..objects.max(2) {
                objs.push(sa.object_alloc(&mut pa, c).map_err(|e| e.to_string())?.0);
            }
            let x = objs[seed as usize % objs.len()];
            let y = objs[(seed as usize + 1) % objs.len()];
            sa.object_free(&mut pa, &x).map_err(|e| e.to_string())?;
            if interleave {
                sa.object_free(&mut pa, &y).map_err(|e| e.to_string())?;
            }
            let second = sa.object_free(&mut pa, &x);
            let detected = matches!(second, Err(SimError::DoubleFreeDetected { .. }));
            if detected != (hardened && !interleave) {
                return Err(format!("hardened {hardened}, interleave {interleave}: {second:?}"));
            }
            if let Ok(out) = second {
                if !out.was_double {
                    return Err("double free not flagged".into());
                }
            }
        }
    }
    Ok(())
}
