mod common;

use std::collections::BTreeMap;

use pagespray::page_allocator::*;
use pagespray::slab::{CacheConfig, SlabAllocator};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn page_allocator_matches_frame_bitmap(seed in any::<u64>()) {
        common::allocators::check_page_ops(seed, common::allocators::OPS).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn slab_discards_exactly_when_empty_and_inactive(seed in any::<u64>(), randomized in any::<bool>()) {
        common::allocators::check_slab_ops(seed, common::allocators::OPS, randomized).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn slab_runs_are_deterministic_per_seed(seed in any::<u64>()) {
        let a = common::allocators::check_slab_ops(seed, 2_000, true).map_err(TestCaseError::fail)?;
        let b = common::allocators::check_slab_ops(seed, 2_000, true).map_err(TestCaseError::fail)?;
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #[test]
    fn double_free_detection_follows_freelist_head(seed in any::<u64>(), objects in 2usize..16) {
        common::allocators::check_double_free(seed, objects).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn randomized_freelist_is_a_permutation(seed in any::<u64>(), order in 0u8..3, size in prop::sample::select(vec![64usize, 192, 256, 512, 1024])) {
        let mut pa = PageAllocator::new(&BTreeMap::from([(Zone::Normal, 256)]), DEFAULT_PAGE_SIZE, DEFAULT_MAX_ORDER).unwrap();
        let mut sa = SlabAllocator::new();
        let c = sa.cache_create(CacheConfig::new("k", size, order).randomized(seed), DEFAULT_PAGE_SIZE).unwrap();
        let n = (DEFAULT_PAGE_SIZE << order) / size;
        let mut slots: Vec<u16> = (0..n).map(|_| sa.object_alloc(&mut pa, c).unwrap().0.slot).collect();
        slots.sort_unstable();
        prop_assert_eq!(slots, (0..n as u16).collect::<Vec<_>>());
    }

    #[test]
    fn buddy_split_then_free_restores_the_zone(orders in prop::collection::vec(0u8..=10, 1..40)) {
        let mut pa = PageAllocator::new(&BTreeMap::from([(Zone::Normal, 4096)]), DEFAULT_PAGE_SIZE, DEFAULT_MAX_ORDER).unwrap();
        let before = pa.free_blocks();
        let mut held = Vec::new();
        for k in orders {
            if let Ok(b) = pa.alloc_pages(&GfpProfile::buffer(), k, Owner::UserNoise) {
                prop_assert_eq!(b.first_frame % (1 << k), 0);
                held.push(b.id);
            }
        }
        for id in held.into_iter().rev() {
            pa.free_pages(id).unwrap();
        }
        prop_assert_eq!(pa.free_blocks(), before);
    }
}

#[test]
fn noise_free_slab_fill_is_identity_order() {
    let mut pa = PageAllocator::new(&BTreeMap::from([(Zone::Normal, 64)]), DEFAULT_PAGE_SIZE, DEFAULT_MAX_ORDER).unwrap();
    let mut sa = SlabAllocator::new();
    let c = sa.cache_create(CacheConfig::new("k", 512, 0), DEFAULT_PAGE_SIZE).unwrap();
    let slots: Vec<u16> = (0..8).map(|_| sa.object_alloc(&mut pa, c).unwrap().0.slot).collect();
    assert_eq!(slots, (0..8).collect::<Vec<_>>());
}

#[test]
fn fixed_seed_page_run_passes() {
    common::allocators::check_page_ops(0xD1B7, common::allocators::OPS).unwrap();
}
