//! Trial execution.
//!
//! Time advances in ticks. A tick may contain several attacker steps; the
//! tick's noise operations are scattered uniformly over the gaps between
//! those steps. Each attacker step is atomic with respect to noise.
//!
//! Page spray timeline:
//!
//! * trigger tick: groom S, free the vulnerable object (twice for a double
//!   free, with one padding free in between; the last free is RCU-deferred),
//! * `max(2 * grace, 1)` sleep ticks,
//! * attack tick: free the remaining paddings, which discards S, then spray
//!   pages until P comes back and check the victim.
//!
//! Object spray allocates the vulnerable object in the trigger tick, frees it
//! the same way, and reclaims the slot with counterfeit objects: in one burst
//! after the sleep (single thread) or one allocation per actor per tick from
//! the tick after the trigger (multi process).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{NoiseWindow, Scenario, Strategy, VictimKind, DEFAULT_CROSS_VICTIM_TYPE};
use crate::error::{Result, SimError};
use crate::kernel::{CallsiteId, CallsiteKind, Kernel, UserMapping, CRED_SIZE, OPS_OFFSET, UID_OFFSET};
use crate::mitigation;
use crate::noise::{interleave, poisson_quantile, NoiseOp, NoiseProfile};
use crate::page_allocator::{BlockId, Event, EventKind, Owner};
use crate::slab::{CacheId, ObjectRef, SlabId};

/// Value sprayed over reclaimed memory.
pub const SPRAY_TOKEN: u64 = 0xffff_ffff_dead_beef;
pub const MAX_GROOM_ATTEMPTS: u32 = 3;
/// Concurrent spray actors of the multi-process strategy.
pub const SPRAY_ACTORS: usize = 4;
/// Padding allocations allowed while looking for a fresh slab.
const DEFRAG_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    GroomingFailed,
    DetectedDoubleFree,
    SlabNotDiscarded,
    PageNotReclaimed,
    NoiseInterference,
    VictimNotCorrupted,
    LeakMissing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    pub ticks: u64,
    /// ReuseOverlap events logged during the trial.
    pub overlaps: usize,
}

/// Object placement produced by grooming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutState {
    pub slab: SlabId,
    pub slab_block: BlockId,
    /// Frame holding the vulnerable object.
    pub page: u64,
    /// Paddings in allocation order; the first `pre_paddings` precede the
    /// vulnerable object.
    pub paddings: Vec<ObjectRef>,
    pub pre_paddings: usize,
    pub vulnerable: ObjectRef,
    pub victim: ObjectRef,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReclaimOutcome {
    Reclaimed,
    NotReclaimed,
    /// An earlier phase already failed.
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Setup,
    Groomed,
    Freed,
    Reclaimed,
    Done,
}

/// One exploit attempt in a fresh kernel.
#[derive(Debug)]
pub struct Trial<'s> {
    scenario: &'s Scenario,
    seed: u64,
    pub kernel: Kernel,
    profile: NoiseProfile,
    noise_rng: ChaCha8Rng,
    inject_rng: ChaCha8Rng,
    gaps: VecDeque<Vec<NoiseOp>>,
    phase: Phase,
    layout: Option<LayoutState>,
    failure: Option<FailureReason>,
    released_at: Option<u64>,
    rcu_seen: usize,
    vuln_cache: CacheId,
    pad_cache: CacheId,
    victim_cache: CacheId,
    counterfeit_cache: CacheId,
    cross_victims: Vec<ObjectRef>,
    mapping: Option<UserMapping>,
}

fn token_bytes(len: usize) -> Vec<u8> {
    SPRAY_TOKEN.to_le_bytes().iter().copied().cycle().take(len).collect()
}

/// A credential with every id zeroed.
fn fake_cred() -> Vec<u8> {
    let mut cred = vec![0u8; CRED_SIZE];
    cred[0..4].copy_from_slice(&1u32.to_le_bytes());
    debug_assert!(cred[UID_OFFSET..UID_OFFSET + 4].iter().all(|b| *b == 0));
    cred
}

impl<'s> Trial<'s> {
    pub fn new(scenario: &'s Scenario, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let mut kernel = Kernel::new(scenario.kernel_config(seed))?;
        mitigation::apply(&mut kernel, scenario.mitigation)?;
        let size = scenario.cache.object_size;
        let (vuln_cache, pad_cache, victim_cache) = if scenario.variants.cred_overwrite {
            let c = kernel.cred_cache();
            (c, c, c)
        } else {
            (
                kernel.cache_for(size, &scenario.cache.name)?,
                kernel.cache_for(size, scenario.padding_type())?,
                kernel.cache_for(size, scenario.victim_type())?,
            )
        };
        let counterfeit_cache = kernel.cache_for(size, scenario.counterfeit_type())?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(1);
        let mut inject_rng = ChaCha8Rng::seed_from_u64(seed);
        inject_rng.set_stream(2);
        Ok(Self {
            scenario,
            seed,
            kernel,
            profile: scenario.noise_profile(),
            noise_rng,
            inject_rng,
            gaps: VecDeque::new(),
            phase: Phase::Setup,
            layout: None,
            failure: None,
            released_at: None,
            rcu_seen: 0,
            vuln_cache,
            pad_cache,
            victim_cache,
            counterfeit_cache,
            cross_victims: Vec::new(),
            mapping: None,
        })
    }

    pub fn layout(&self) -> Option<&LayoutState> {
        self.layout.as_ref()
    }

    pub fn failure(&self) -> Option<FailureReason> {
        self.failure
    }

    pub fn events(&self) -> &[Event] {
        self.kernel.pages.log.events()
    }

    fn fail(&mut self, reason: FailureReason) {
        self.failure.get_or_insert(reason);
    }

    fn noise_active(&self) -> bool {
        if self.profile.is_idle() {
            return false;
        }
        match self.scenario.noise_window {
            NoiseWindow::Always => true,
            NoiseWindow::AfterRelease => self.released_at.is_some_and(|t| self.kernel.tick() > t),
        }
    }

    /// Starts a tick with `steps` attacker steps.
    fn begin_tick(&mut self, steps: usize) {
        self.end_tick();
        self.kernel.advance_tick();
        self.scan_rcu();
        let ops = if self.noise_active() {
            self.profile.draw(&mut self.noise_rng)
        } else {
            Vec::new()
        };
        self.gaps = interleave(ops, steps, &mut self.noise_rng).into();
    }

    /// Runs the noise scheduled before the next attacker step.
    fn gap(&mut self) {
        if let Some(ops) = self.gaps.pop_front() {
            for op in ops {
                self.kernel.apply_noise(&self.profile, op, &mut self.noise_rng);
            }
        }
    }

    fn end_tick(&mut self) {
        while !self.gaps.is_empty() {
            self.gap();
        }
    }

    fn idle_tick(&mut self) {
        self.begin_tick(0);
        self.end_tick();
    }

    /// Checks deferred frees executed since the last scan.
    fn scan_rcu(&mut self) {
        let results = &self.kernel.rcu_results()[self.rcu_seen..];
        self.rcu_seen += results.len();
        let Some(vuln) = self.layout.as_ref().map(|l| l.vulnerable) else { return };
        let mut detected = false;
        let mut released = false;
        for (r, res) in results {
            if *r != vuln {
                continue;
            }
            match res {
                Err(SimError::DoubleFreeDetected { .. }) => detected = true,
                _ => released = true,
            }
        }
        if detected {
            self.fail(FailureReason::DetectedDoubleFree);
        }
        if released && self.scenario.strategy != Strategy::PageSpray {
            self.released_at = Some(self.kernel.tick());
        }
    }

    fn sleep_ticks(&self) -> u64 {
        (2 * self.scenario.rcu_grace).max(1)
    }

    fn objects_per_slab(&self, cache: CacheId) -> usize {
        self.kernel.slab.cache(cache).map(|c| c.objects_per_slab).unwrap_or(0)
    }

    fn init_victim(&mut self, r: &ObjectRef) {
        match self.scenario.victim {
            VictimKind::FunctionTable => self.kernel.init_ops_object(r),
            VictimKind::Credential => self.kernel.init_cred(r),
        }
    }

    fn trigger_free_steps(&self) -> usize {
        let s = self.scenario;
        match (s.vuln_kind.is_double_free(), s.strategy, s.consecutive_double_free) {
            (false, _, _) => 1,
            (true, _, true) => 2,
            (true, Strategy::PageSpray, false) => 3,
            // free, victim allocation, second free
            (true, _, false) => 3,
        }
    }

    fn warmup(&mut self) {
        if self.scenario.noise_window == NoiseWindow::Always && !self.profile.is_idle() {
            for _ in 0..self.scenario.warmup_ticks {
                self.idle_tick();
            }
        }
    }

    /// Step one: builds the slab layout. Starts the trigger tick.
    pub fn groom_layout(&mut self) -> Result<&LayoutState> {
        if self.phase != Phase::Setup {
            return Err(SimError::PhaseOrder("groom_layout runs once, first"));
        }
        self.warmup();
        self.begin_tick(1 + self.trigger_free_steps());
        self.gap();
        let layout = if self.scenario.strategy == Strategy::PageSpray {
            self.groom_page_layout()
        } else {
            self.groom_object_layout()
        };
        self.phase = Phase::Groomed;
        match layout {
            Ok(l) => {
                self.layout = Some(l);
                Ok(self.layout.as_ref().expect("just set"))
            }
            Err(SimError::OutOfMemory { .. }) => {
                self.fail(FailureReason::GroomingFailed);
                Err(SimError::GroomingFailed(MAX_GROOM_ATTEMPTS))
            }
            Err(e) => {
                self.fail(FailureReason::GroomingFailed);
                Err(e)
            }
        }
    }

    fn groom_page_layout(&mut self) -> Result<LayoutState> {
        let n = self.objects_per_slab(self.pad_cache);
        let double = self.scenario.vuln_kind.is_double_free();
        let roles = if double { 2 } else { 1 };
        let first_set = (n.saturating_sub(roles) / 2).max(1);
        let page_size = self.kernel.page_size() as u64;
        for attempt in 1..=MAX_GROOM_ATTEMPTS {
            let mut defrag = 0;
            let first = loop {
                let (r, fresh) = self.kernel.alloc_in(self.pad_cache)?;
                if fresh {
                    break r;
                }
                defrag += 1;
                if defrag > DEFRAG_LIMIT {
                    return Err(SimError::GroomingFailed(attempt));
                }
            };
            let s = first.slab;
            let mut paddings = vec![first];
            while paddings.len() < first_set && self.kernel.slab.cache(self.pad_cache)?.active == Some(s) {
                paddings.push(self.kernel.alloc_in(self.pad_cache)?.0);
            }
            let pre_paddings = paddings.len();
            let vulnerable = self.kernel.alloc_in(self.vuln_cache)?.0;
            let victim = if double {
                self.kernel.alloc_in(self.victim_cache)?.0
            } else {
                vulnerable
            };
            self.init_victim(&victim);
            while self.kernel.slab.cache(self.pad_cache)?.active == Some(s) {
                paddings.push(self.kernel.alloc_in(self.pad_cache)?.0);
            }
            // One more padding so S is no longer the active slab.
            self.kernel.alloc_in(self.pad_cache)?;
            let same_page = vulnerable.addr / page_size == victim.addr / page_size;
            let in_s = vulnerable.slab == s && victim.slab == s && paddings.iter().all(|p| p.slab == s);
            if same_page && in_s {
                let slab_block = self.kernel.slab.slab(s).expect("S is live").block;
                return Ok(LayoutState {
                    slab: s,
                    slab_block,
                    page: vulnerable.addr / page_size,
                    paddings,
                    pre_paddings,
                    vulnerable,
                    victim,
                    attempts: attempt,
                });
            }
        }
        Err(SimError::GroomingFailed(MAX_GROOM_ATTEMPTS))
    }

    fn groom_object_layout(&mut self) -> Result<LayoutState> {
        let page_size = self.kernel.page_size() as u64;
        let vulnerable = self.kernel.alloc_in(self.vuln_cache)?.0;
        if !self.scenario.vuln_kind.is_double_free() {
            self.init_victim(&vulnerable);
        }
        let slab_block = self.kernel.slab.slab(vulnerable.slab).expect("live").block;
        Ok(LayoutState {
            slab: vulnerable.slab,
            slab_block,
            page: vulnerable.addr / page_size,
            paddings: Vec::new(),
            pre_paddings: 0,
            vulnerable,
            victim: vulnerable,
            attempts: 1,
        })
    }

    /// Frees `r`, recording a hardened-freelist detection as the failure.
    fn attacker_free(&mut self, r: &ObjectRef) -> Result<bool> {
        match self.kernel.kfree(r) {
            Ok(_) => Ok(true),
            Err(SimError::DoubleFreeDetected { .. }) => {
                self.fail(FailureReason::DetectedDoubleFree);
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn defer_vuln_free(&mut self, vuln: ObjectRef) -> Result<bool> {
        match self.kernel.rcu_defer_free(vuln, self.scenario.rcu_grace) {
            Ok(_) => {
                if self.scenario.rcu_grace == 0 && self.scenario.strategy != Strategy::PageSpray {
                    self.released_at = Some(self.kernel.tick());
                }
                Ok(true)
            }
            Err(SimError::DoubleFreeDetected { .. }) => {
                self.fail(FailureReason::DetectedDoubleFree);
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    /// Steps two and three: frees until S is discarded (page spray) or the
    /// vulnerable slot is released (object spray).
    pub fn free_phase(&mut self) -> Result<()> {
        match self.phase {
            Phase::Groomed => {}
            Phase::Setup => return Err(SimError::PhaseOrder("free_phase needs a groomed layout")),
            _ => return Err(SimError::PhaseOrder("free_phase runs once")),
        }
        self.phase = Phase::Freed;
        if self.failure.is_some() {
            self.end_tick();
            return Ok(());
        }
        let layout = self.layout.clone().expect("groomed");
        let vuln = layout.vulnerable;
        let double = self.scenario.vuln_kind.is_double_free();
        let page_spray = self.scenario.strategy == Strategy::PageSpray;
        // Padding freed between the two frees of a double free.
        let mut spacer = None;
        if double {
            self.gap();
            if !self.attacker_free(&vuln)? {
                self.end_tick();
                return Ok(());
            }
            self.gap();
            if self.scenario.consecutive_double_free {
                self.defer_vuln_free(vuln)?;
            } else {
                if page_spray {
                    let idx = layout.pre_paddings - 1;
                    let pad = layout.paddings[idx];
                    self.attacker_free(&pad)?;
                    spacer = Some(idx);
                } else {
                    let victim = self.kernel.alloc_in(self.victim_cache)?.0;
                    self.init_victim(&victim);
                    self.layout.as_mut().expect("groomed").victim = victim;
                }
                self.gap();
                self.defer_vuln_free(vuln)?;
            }
        } else {
            self.gap();
            self.defer_vuln_free(vuln)?;
        }
        self.end_tick();
        if self.failure.is_some() {
            return Ok(());
        }

        let sleep = match self.scenario.strategy {
            Strategy::MultiProcessObjectSpray => 0,
            _ => self.sleep_ticks(),
        };
        for _ in 0..sleep {
            self.idle_tick();
        }
        if self.failure.is_some() || !page_spray {
            return Ok(());
        }

        // Attack tick: remaining padding frees, then the reclaim step.
        let remaining: Vec<ObjectRef> = layout
            .paddings
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != spacer)
            .map(|(_, p)| *p)
            .collect();
        self.begin_tick(remaining.len() + 1);
        for pad in &remaining {
            self.gap();
            self.inject_between_frees()?;
            self.attacker_free(pad)?;
        }
        if self.kernel.slab.slab(layout.slab).is_some() {
            self.fail(FailureReason::SlabNotDiscarded);
        } else {
            self.released_at = Some(self.kernel.tick());
        }
        Ok(())
    }

    /// Extra allocations into the vulnerable cache, coupled across rates by
    /// drawing one uniform per gap whatever the rate.
    fn inject_between_frees(&mut self) -> Result<()> {
        let u: f64 = self.inject_rng.random();
        let count = poisson_quantile(self.scenario.interleave_noise_rate, u);
        for _ in 0..count {
            match self.kernel.alloc_in(self.vuln_cache) {
                Ok((r, _)) => self.kernel.adopt_noise_object(r),
                Err(_) => self.kernel.noise_ooms += 1,
            }
        }
        Ok(())
    }

    /// Step four: reclaims the released memory.
    pub fn reclaim_phase(&mut self) -> Result<ReclaimOutcome> {
        match self.phase {
            Phase::Freed => {}
            Phase::Setup | Phase::Groomed => {
                return Err(SimError::PhaseOrder("reclaim_phase must follow free_phase"))
            }
            _ => return Err(SimError::PhaseOrder("reclaim_phase runs once")),
        }
        self.phase = Phase::Reclaimed;
        if self.failure.is_some() {
            self.end_tick();
            return Ok(ReclaimOutcome::Skipped);
        }
        let outcome = match self.scenario.strategy {
            Strategy::PageSpray => {
                self.gap();
                let res = self.reclaim_pages();
                self.end_tick();
                res?
            }
            Strategy::SingleThreadObjectSpray => self.reclaim_single_thread()?,
            Strategy::MultiProcessObjectSpray => self.reclaim_multi_process()?,
        };
        Ok(outcome)
    }

    fn page_reclaimed_by_buffer(&self, frame: u64) -> bool {
        self.kernel
            .pages
            .block_containing(frame)
            .is_some_and(|b| matches!(b.owner, Owner::Buffer { .. }))
    }

    fn spray_budget(&self, frame: u64) -> Option<usize> {
        let (zone, order, _) = self.kernel.pages.free_block_containing(frame)?;
        let depth = self.kernel.pages.free_list_depth(zone, 0, order) as usize;
        Some(self.scenario.spray_budget.unwrap_or(2 * depth))
    }

    fn reclaim_pages(&mut self) -> Result<ReclaimOutcome> {
        let layout = self.layout.clone().expect("groomed");
        let p = layout.page;
        let Some(budget) = self.spray_budget(p) else {
            self.fail(FailureReason::PageNotReclaimed);
            return Ok(ReclaimOutcome::NotReclaimed);
        };
        if self.scenario.variants.cross_cache {
            return self.reclaim_cross_cache(&layout, budget);
        }
        let cs = self.kernel.callsite_by_name(&self.scenario.callsite)?;
        let spec = self.kernel.callsite(cs)?.spec.clone();
        let payload = if self.scenario.variants.cred_overwrite {
            fake_cred()
        } else {
            token_bytes(8)
        };
        let mut used = 0;
        let reclaimed = if spec.kind == CallsiteKind::Remap {
            self.reclaim_with_rings(cs, spec.page_limit, budget, p, &mut used)?
        } else {
            while used < budget && !self.page_reclaimed_by_buffer(p) {
                let n = spec.page_limit.min(budget - used);
                match self.kernel.spray_copy_write(cs, &payload, n) {
                    Ok(_) => used += n,
                    Err(SimError::OutOfMemory { .. }) => break,
                    Err(e) => return Err(e),
                }
            }
            self.page_reclaimed_by_buffer(p)
        };
        if !reclaimed {
            self.fail(FailureReason::PageNotReclaimed);
            return Ok(ReclaimOutcome::NotReclaimed);
        }
        if let Some(m) = self.mapping {
            if self.scenario.variants.remap_leak {
                // The dangling kernel pointer is used: the object's own
                // address is stored into the freed object.
                let vuln = layout.vulnerable;
                self.kernel.pages.write_u64(vuln.addr, vuln.addr);
            } else {
                self.kernel.user_fill(&m, &payload)?;
            }
        }
        Ok(ReclaimOutcome::Reclaimed)
    }

    fn reclaim_with_rings(
        &mut self,
        cs: CallsiteId,
        limit: usize,
        budget: usize,
        p: u64,
        used: &mut usize,
    ) -> Result<bool> {
        while *used < budget {
            let n = limit.min(budget - *used);
            let ring = match self.kernel.ring_setup(cs, n, 0) {
                Ok(r) => r,
                Err(SimError::OutOfMemory { .. }) => return Ok(false),
                Err(e) => return Err(e),
            };
            *used += n;
            if self.kernel.ring(ring)?.blocks.contains(&BlockId(p)) {
                self.mapping = Some(self.kernel.ring_mmap(ring)?);
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Victim objects of another size class take over P as a slab page; the
    /// dangling reference then writes into one of them.
    fn reclaim_cross_cache(&mut self, layout: &LayoutState, budget: usize) -> Result<ReclaimOutcome> {
        let cache = self
            .kernel
            .cache_for(self.scenario.cross_victim_size, DEFAULT_CROSS_VICTIM_TYPE)?;
        let mut fresh_slabs = 0;
        let mut landed = None;
        while fresh_slabs <= budget {
            let (r, fresh) = match self.kernel.alloc_in(cache) {
                Ok(x) => x,
                Err(SimError::OutOfMemory { .. }) => break,
                Err(e) => return Err(e),
            };
            self.kernel.init_ops_object(&r);
            self.cross_victims.push(r);
            fresh_slabs += fresh as usize;
            let block = self.kernel.slab.slab(r.slab).expect("live").block;
            if self.kernel.pages.block(block).is_some_and(|b| b.contains_frame(layout.page)) {
                landed = Some(r.slab);
                break;
            }
        }
        let Some(slab) = landed else {
            self.fail(FailureReason::PageNotReclaimed);
            return Ok(ReclaimOutcome::NotReclaimed);
        };
        while self.kernel.slab.cache(cache)?.active == Some(slab) {
            let r = self.kernel.alloc_in(cache)?.0;
            self.kernel.init_ops_object(&r);
            self.cross_victims.push(r);
        }
        let vuln = layout.vulnerable;
        self.kernel.pages.write_u64(vuln.addr + OPS_OFFSET as u64, SPRAY_TOKEN);
        Ok(ReclaimOutcome::Reclaimed)
    }

    fn alloc_counterfeit(&mut self) -> Result<()> {
        match self.kernel.alloc_in(self.counterfeit_cache) {
            Ok((r, _)) => {
                let size = self.kernel.slab.cache(self.counterfeit_cache)?.config.object_size;
                self.kernel.pages.write(r.addr, &token_bytes(size));
                Ok(())
            }
            Err(SimError::OutOfMemory { .. }) => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn reclaim_single_thread(&mut self) -> Result<ReclaimOutcome> {
        let burst = 2 * self.objects_per_slab(self.counterfeit_cache);
        self.begin_tick(burst);
        for _ in 0..burst {
            self.gap();
            self.alloc_counterfeit()?;
        }
        self.end_tick();
        Ok(self.slot_outcome())
    }

    fn reclaim_multi_process(&mut self) -> Result<ReclaimOutcome> {
        let per_actor = 2 * self.objects_per_slab(self.counterfeit_cache);
        for _ in 0..per_actor {
            self.begin_tick(SPRAY_ACTORS);
            for _ in 0..SPRAY_ACTORS {
                self.gap();
                self.alloc_counterfeit()?;
            }
            self.end_tick();
        }
        Ok(self.slot_outcome())
    }

    fn slot_outcome(&self) -> ReclaimOutcome {
        let victim = self.layout.as_ref().expect("groomed").victim;
        if self.kernel.read_ops(&victim) == SPRAY_TOKEN {
            ReclaimOutcome::Reclaimed
        } else {
            ReclaimOutcome::NotReclaimed
        }
    }

    /// Decides whether the victim was corrupted (or the leak observed).
    pub fn detect_success(&mut self) -> Result<bool> {
        if self.phase != Phase::Reclaimed {
            return Err(SimError::PhaseOrder("detect_success must follow reclaim_phase"));
        }
        self.phase = Phase::Done;
        if self.failure.is_some() {
            return Ok(false);
        }
        let layout = self.layout.clone().expect("groomed");
        let v = &self.scenario.variants;
        let success = if v.remap_leak {
            let m = self.mapping.expect("reclaimed through a ring");
            let vuln = layout.vulnerable;
            let off = self.kernel.mapping_offset_of(&m, vuln.addr).expect("P is in the ring");
            let leaked = self.kernel.user_read(&m, off, 8)?;
            let ok = u64::from_le_bytes(leaked.try_into().expect("8 bytes")) == vuln.addr;
            if !ok {
                self.fail(FailureReason::LeakMissing);
            }
            return Ok(ok);
        } else if v.cross_cache {
            self.cross_victims
                .iter()
                .any(|r| self.kernel.slab.is_live(r) && self.kernel.read_ops(r) == SPRAY_TOKEN)
        } else if self.scenario.victim == VictimKind::Credential {
            self.kernel.read_uid(&layout.victim) == 0
        } else {
            self.kernel.read_ops(&layout.victim) == SPRAY_TOKEN
        };
        if !success {
            let noisy = self.scenario.strategy != Strategy::PageSpray && self.kernel.slot_held_by_noise(&layout.victim);
            self.fail(if noisy {
                FailureReason::NoiseInterference
            } else {
                FailureReason::VictimNotCorrupted
            });
        }
        Ok(success)
    }

    pub fn result(&self) -> TrialResult {
        let success = self.phase == Phase::Done && self.failure.is_none();
        TrialResult {
            seed: self.seed,
            success,
            failure_reason: if success {
                None
            } else {
                Some(self.failure.unwrap_or(FailureReason::VictimNotCorrupted))
            },
            ticks: self.kernel.tick(),
            overlaps: self.kernel.pages.log.count(EventKind::ReuseOverlap),
        }
    }

    /// Runs all four steps. Allocator errors inside a step are reported as
    /// that step's failure.
    pub fn run(&mut self) -> TrialResult {
        if self.groom_layout().is_err() {
            self.fail(FailureReason::GroomingFailed);
            return self.result();
        }
        if self.free_phase().is_err() {
            self.fail(FailureReason::SlabNotDiscarded);
            return self.result();
        }
        if self.reclaim_phase().is_err() {
            self.fail(FailureReason::PageNotReclaimed);
            return self.result();
        }
        let _ = self.detect_success();
        self.result()
    }
}

/// Runs one trial in a fresh kernel.
pub fn run_trial(scenario: &Scenario, seed: u64) -> Result<TrialResult> {
    Ok(Trial::new(scenario, seed)?.run())
}

/// Runs one trial and returns its allocator event log as well.
pub fn run_trial_logged(scenario: &Scenario, seed: u64) -> Result<(TrialResult, Vec<Event>)> {
    let mut t = Trial::new(scenario, seed)?;
    let r = t.run();
    Ok((r, t.kernel.pages.log.events().to_vec()))
}
