//! C ABI for the exmm multimap.
//!
//! Handles are opaque; every call returns an [`ExmmStatus`]. On failure a
//! message for the calling thread is available from
//! [`exmm_last_error_message`]. Each call that touches the structure ends one
//! logical operation, so [`exmm_multimap_last_op_reads`] reports the block
//! reads of the most recent call.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use exmm::cuckoo::InsertMode;
use exmm::multimap::{Multimap, MultimapConfig, MultimapError};
use exmm::multiqueue::Variant;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExmmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidConfig = 2,
    Duplicate = 3,
    NotFound = 4,
    TableFull = 5,
    StoreError = 6,
    AuditFailed = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

pub const EXMM_VARIANT_BASIC: u32 = 0;
pub const EXMM_VARIANT_DEAMORTIZED: u32 = 1;

/// Construction parameters. Fill with [`exmm_config_default`] and adjust.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ExmmConfig {
    /// `EXMM_VARIANT_BASIC` or `EXMM_VARIANT_DEAMORTIZED`.
    pub variant: u32,
    pub beta: f64,
    pub gamma: f64,
    pub block_bytes: usize,
    pub cache_bytes: usize,
    pub epsilon: f64,
    pub key_capacity: usize,
    pub pair_capacity: usize,
    pub seed: u64,
}

impl From<&MultimapConfig> for ExmmConfig {
    fn from(c: &MultimapConfig) -> Self {
        ExmmConfig {
            variant: match c.variant {
                Variant::Basic => EXMM_VARIANT_BASIC,
                Variant::Deamortized => EXMM_VARIANT_DEAMORTIZED,
            },
            beta: c.beta,
            gamma: c.gamma,
            block_bytes: c.block_bytes,
            cache_bytes: c.cache_bytes,
            epsilon: c.epsilon,
            key_capacity: c.key_capacity,
            pair_capacity: c.pair_capacity,
            seed: c.seed,
        }
    }
}

impl ExmmConfig {
    fn to_native(self) -> Result<MultimapConfig, String> {
        let variant = match self.variant {
            EXMM_VARIANT_BASIC => Variant::Basic,
            EXMM_VARIANT_DEAMORTIZED => Variant::Deamortized,
            v => return Err(format!("unknown variant {v}")),
        };
        Ok(MultimapConfig {
            variant,
            beta: self.beta,
            gamma: self.gamma,
            block_bytes: self.block_bytes,
            cache_bytes: self.cache_bytes,
            epsilon: self.epsilon,
            key_capacity: self.key_capacity,
            pair_capacity: self.pair_capacity,
            cuckoo_mode: InsertMode::RandomWalk,
            max_kicks: MultimapConfig::default().max_kicks,
            seed: self.seed,
        })
    }
}

/// Opaque multimap handle.
pub struct ExmmMultimap {
    inner: Multimap,
    last_op_reads: u64,
}

impl ExmmMultimap {
    fn end_op(&mut self) {
        self.last_op_reads = self.inner.store_mut().op_boundary();
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: ExmmStatus, msg: impl Into<String>) -> ExmmStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &MultimapError) -> ExmmStatus {
    match e {
        MultimapError::Duplicate(..) => ExmmStatus::Duplicate,
        MultimapError::NotFound(..) => ExmmStatus::NotFound,
        MultimapError::Table(_) => ExmmStatus::TableFull,
        MultimapError::Store(_) => ExmmStatus::StoreError,
        MultimapError::Config(_) => ExmmStatus::InvalidConfig,
    }
}

fn from_result(r: Result<(), MultimapError>) -> ExmmStatus {
    match r {
        Ok(()) => ExmmStatus::Ok,
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

fn guard(f: impl FnOnce() -> ExmmStatus) -> ExmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(ExmmStatus::Panic, msg)
        }
    }
}

/// Runs `f` on the handle, then closes the operation.
fn with_map(m: *mut ExmmMultimap, f: impl FnOnce(&mut Multimap) -> ExmmStatus) -> ExmmStatus {
    guard(|| {
        // SAFETY: the caller passes a handle from exmm_multimap_new that has
        // not been freed and is not used concurrently.
        let Some(h) = (unsafe { m.as_mut() }) else {
            return fail(ExmmStatus::NullArgument, "null multimap handle");
        };
        let s = f(&mut h.inner);
        h.end_op();
        s
    })
}

/// Writes the default configuration to `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for an `ExmmConfig`.
#[no_mangle]
pub unsafe extern "C" fn exmm_config_default(out: *mut ExmmConfig) -> ExmmStatus {
    if out.is_null() {
        return fail(ExmmStatus::NullArgument, "null config pointer");
    }
    out.write(ExmmConfig::from(&MultimapConfig::default()));
    ExmmStatus::Ok
}

/// Creates a multimap. On success `*out` receives a handle that must be
/// released with [`exmm_multimap_free`].
///
/// # Safety
/// `cfg` must point to a valid `ExmmConfig`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_new(cfg: *const ExmmConfig, out: *mut *mut ExmmMultimap) -> ExmmStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(ExmmStatus::NullArgument, "null argument");
        }
        out.write(ptr::null_mut());
        let native = match (*cfg).to_native() {
            Ok(c) => c,
            Err(e) => return fail(ExmmStatus::InvalidConfig, e),
        };
        match Multimap::new(native) {
            Ok(inner) => {
                let h = Box::new(ExmmMultimap {
                    inner,
                    last_op_reads: 0,
                });
                out.write(Box::into_raw(h));
                ExmmStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `m` must be null or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_free(m: *mut ExmmMultimap) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Inserts `(key, value)`. Returns `Duplicate` if the pair is present.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_insert(m: *mut ExmmMultimap, key: u32, value: u64) -> ExmmStatus {
    with_map(m, |mm| from_result(mm.insert(key, value)))
}

/// Removes `(key, value)`. Returns `NotFound` if the pair is absent.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_remove(m: *mut ExmmMultimap, key: u32, value: u64) -> ExmmStatus {
    with_map(m, |mm| from_result(mm.remove(key, value)))
}

/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_is_member(
    m: *mut ExmmMultimap,
    key: u32,
    value: u64,
    out: *mut bool,
) -> ExmmStatus {
    if out.is_null() {
        return fail(ExmmStatus::NullArgument, "null output pointer");
    }
    with_map(m, |mm| {
        out.write(mm.is_member(key, value));
        ExmmStatus::Ok
    })
}

/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_count(m: *mut ExmmMultimap, key: u32, out: *mut u64) -> ExmmStatus {
    if out.is_null() {
        return fail(ExmmStatus::NullArgument, "null output pointer");
    }
    with_map(m, |mm| {
        out.write(mm.count(key));
        ExmmStatus::Ok
    })
}

/// Copies the values of `key` into `values[0..cap]` and stores the number
/// of values in `*len`. If `cap` is too small nothing is copied, `*len`
/// holds the required size and `BufferTooSmall` is returned. `values` may
/// be null when `cap` is zero.
///
/// # Safety
/// `m` must be a live handle; `values` must have room for `cap` elements;
/// `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_find_all(
    m: *mut ExmmMultimap,
    key: u32,
    values: *mut u64,
    cap: usize,
    len: *mut usize,
) -> ExmmStatus {
    if len.is_null() || (values.is_null() && cap > 0) {
        return fail(ExmmStatus::NullArgument, "null output pointer");
    }
    with_map(m, |mm| {
        let all = mm.find_all(key);
        len.write(all.len());
        if all.len() > cap {
            return fail(
                ExmmStatus::BufferTooSmall,
                format!("{} values, buffer holds {cap}", all.len()),
            );
        }
        for (i, (_, v)) in all.iter().enumerate() {
            values.add(i).write(*v);
        }
        ExmmStatus::Ok
    })
}

/// Removes every value of `key`.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_remove_all(m: *mut ExmmMultimap, key: u32) -> ExmmStatus {
    with_map(m, |mm| {
        mm.remove_all(key);
        ExmmStatus::Ok
    })
}

/// Checks every structural invariant. Does not count as an operation.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_audit(m: *const ExmmMultimap) -> ExmmStatus {
    guard(|| {
        let Some(h) = m.as_ref() else {
            return fail(ExmmStatus::NullArgument, "null multimap handle");
        };
        match h.inner.audit() {
            Ok(_) => ExmmStatus::Ok,
            Err(e) => fail(ExmmStatus::AuditFailed, e),
        }
    })
}

/// Number of stored pairs.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_len(m: *const ExmmMultimap, out: *mut u64) -> ExmmStatus {
    match (m.as_ref(), out.is_null()) {
        (Some(h), false) => {
            out.write(h.inner.len());
            ExmmStatus::Ok
        }
        _ => fail(ExmmStatus::NullArgument, "null argument"),
    }
}

/// Blocks read from disk since creation.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_total_reads(m: *const ExmmMultimap, out: *mut u64) -> ExmmStatus {
    match (m.as_ref(), out.is_null()) {
        (Some(h), false) => {
            out.write(h.inner.store().reads_from_disk());
            ExmmStatus::Ok
        }
        _ => fail(ExmmStatus::NullArgument, "null argument"),
    }
}

/// Blocks read from disk by the most recent operation.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmm_multimap_last_op_reads(m: *const ExmmMultimap, out: *mut u64) -> ExmmStatus {
    match (m.as_ref(), out.is_null()) {
        (Some(h), false) => {
            out.write(h.last_op_reads);
            ExmmStatus::Ok
        }
        _ => fail(ExmmStatus::NullArgument, "null argument"),
    }
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn exmm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
