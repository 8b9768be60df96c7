use std::collections::{BTreeMap, BTreeSet};
use std::ffi::CStr;
use std::ptr;

use exmm_ffi::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(variant: u32) -> ExmmConfig {
    let mut cfg = std::mem::MaybeUninit::uninit();
    assert_eq!(unsafe { exmm_config_default(cfg.as_mut_ptr()) }, ExmmStatus::Ok);
    let mut cfg = unsafe { cfg.assume_init() };
    cfg.variant = variant;
    cfg.gamma = 4.0;
    cfg.block_bytes = 144;
    cfg.cache_bytes = 4 * 144;
    cfg.key_capacity = 64;
    cfg.pair_capacity = 1024;
    cfg
}

fn create(cfg: &ExmmConfig) -> *mut ExmmMultimap {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { exmm_multimap_new(cfg, &mut m) }, ExmmStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = exmm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn default_config_round_trips() {
    let mut cfg = std::mem::MaybeUninit::uninit();
    assert_eq!(unsafe { exmm_config_default(cfg.as_mut_ptr()) }, ExmmStatus::Ok);
    let cfg = unsafe { cfg.assume_init() };
    assert_eq!(cfg.variant, EXMM_VARIANT_DEAMORTIZED);
    assert_eq!(cfg.block_bytes, 4096);
    assert_eq!(cfg.cache_bytes, 512 * 1024);
}

#[test]
fn error_codes() {
    let m = create(&small_config(EXMM_VARIANT_DEAMORTIZED));
    unsafe {
        assert_eq!(exmm_multimap_insert(m, 1, 10), ExmmStatus::Ok);
        assert_eq!(exmm_multimap_insert(m, 1, 10), ExmmStatus::Duplicate);
        assert!(last_error().contains("already present"));
        assert_eq!(exmm_multimap_remove(m, 1, 11), ExmmStatus::NotFound);
        assert_eq!(exmm_multimap_insert(ptr::null_mut(), 1, 1), ExmmStatus::NullArgument);
        assert_eq!(exmm_multimap_count(m, 1, ptr::null_mut()), ExmmStatus::NullArgument);

        let mut len = 0usize;
        assert_eq!(exmm_multimap_insert(m, 1, 11), ExmmStatus::Ok);
        assert_eq!(
            exmm_multimap_find_all(m, 1, ptr::null_mut(), 0, &mut len),
            ExmmStatus::BufferTooSmall
        );
        assert_eq!(len, 2);

        let mut bad = small_config(7);
        let mut h = ptr::null_mut();
        assert_eq!(exmm_multimap_new(&bad, &mut h), ExmmStatus::InvalidConfig);
        assert!(h.is_null());
        bad = small_config(EXMM_VARIANT_BASIC);
        bad.gamma = 1.0;
        assert_eq!(exmm_multimap_new(&bad, &mut h), ExmmStatus::InvalidConfig);
        exmm_multimap_free(m);
        exmm_multimap_free(ptr::null_mut());
    }
}

#[test]
fn random_ops_match_model() {
    for variant in [EXMM_VARIANT_BASIC, EXMM_VARIANT_DEAMORTIZED] {
        let m = create(&small_config(variant));
        let mut model: BTreeMap<u32, BTreeSet<u64>> = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(variant as u64 + 11);
        let mut buf = vec![0u64; 1024];
        for _ in 0..5000 {
            let key = rng.gen_range(0..24u32);
            let value = rng.gen_range(0..40u64);
            let present = model.get(&key).is_some_and(|s| s.contains(&value));
            unsafe {
                match rng.gen_range(0..10) {
                    0..=3 => {
                        let want = if present { ExmmStatus::Duplicate } else { ExmmStatus::Ok };
                        assert_eq!(exmm_multimap_insert(m, key, value), want);
                        model.entry(key).or_default().insert(value);
                    }
                    4..=6 => {
                        let want = if present { ExmmStatus::Ok } else { ExmmStatus::NotFound };
                        assert_eq!(exmm_multimap_remove(m, key, value), want);
                        if let Some(s) = model.get_mut(&key) {
                            s.remove(&value);
                        }
                    }
                    7 => {
                        let mut hit = false;
                        assert_eq!(exmm_multimap_is_member(m, key, value, &mut hit), ExmmStatus::Ok);
                        assert_eq!(hit, present);
                        let mut c = 0;
                        assert_eq!(exmm_multimap_count(m, key, &mut c), ExmmStatus::Ok);
                        assert_eq!(c, model.get(&key).map_or(0, |s| s.len() as u64));
                    }
                    8 => {
                        let mut len = 0;
                        assert_eq!(
                            exmm_multimap_find_all(m, key, buf.as_mut_ptr(), buf.len(), &mut len),
                            ExmmStatus::Ok
                        );
                        let got: BTreeSet<u64> = buf[..len].iter().copied().collect();
                        assert_eq!(got.len(), len);
                        assert_eq!(got, model.get(&key).cloned().unwrap_or_default());
                    }
                    _ => {
                        if rng.gen_bool(0.2) {
                            assert_eq!(exmm_multimap_remove_all(m, key), ExmmStatus::Ok);
                            model.remove(&key);
                        }
                    }
                }
                assert_eq!(exmm_multimap_audit(m), ExmmStatus::Ok);
            }
        }
        let mut len = 0;
        unsafe {
            assert_eq!(exmm_multimap_len(m, &mut len), ExmmStatus::Ok);
            assert_eq!(len, model.values().map(|s| s.len() as u64).sum::<u64>());
            exmm_multimap_free(m);
        }
    }
}

#[test]
fn read_counters() {
    let m = create(&small_config(EXMM_VARIANT_DEAMORTIZED));
    unsafe {
        for v in 0..200 {
            assert_eq!(exmm_multimap_insert(m, (v % 13) as u32, v), ExmmStatus::Ok);
        }
        let (mut total, mut last) = (0, 0);
        assert_eq!(exmm_multimap_total_reads(m, &mut total), ExmmStatus::Ok);
        assert!(total > 0);
        let mut hit = false;
        assert_eq!(exmm_multimap_is_member(m, 5, 5, &mut hit), ExmmStatus::Ok);
        assert!(hit);
        assert_eq!(exmm_multimap_last_op_reads(m, &mut last), ExmmStatus::Ok);
        assert!(last <= 4, "isMember read {last} blocks");
        let mut after = 0;
        exmm_multimap_total_reads(m, &mut after);
        assert_eq!(after - total, last);
        exmm_multimap_free(m);
    }
}
