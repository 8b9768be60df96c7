//! Location-aware multiqueue over a table `S` of pages.
//!
//! Every queue belongs to one key. Light queues share blocks with other light
//! queues; heavy queues own a doubly linked chain of blocks. A dictionary `D`
//! (cuckoo table keyed by the element) maps every element to its block, and a
//! header table `T` (cuckoo table keyed by the queue key) holds the count and
//! head block of every queue.
//!
//! S block spare-area layout:
//!
//! | offset | size  | field                                             |
//! |--------|-------|---------------------------------------------------|
//! | 0      | 1     | kind (0 free, 1 light, 2 heavy)                   |
//! | 1      | 1     | designation (0 none, 1 by a T bucket, 2 heavy d)  |
//! | 2      | 2     | element count                                     |
//! | 4      | 4     | prev block (heavy chain)                          |
//! | 8      | 4     | next block (heavy chain)                          |
//! | 12     | 4     | forwarding handle `p(X)`                          |
//! | 16     | 4     | designating T bucket page                         |
//! | 20     | 4     | deficient block of the queue (heavy head only)    |
//! | 24     | 4     | owner key (heavy)                                 |
//! | 32     | slots | per-slot flags: bit 0 fresh, bit 1 header-stale   |
//!
//! Elements are 12 bytes (u32 key, u64 value) packed from offset 0 and
//! grouped into one contiguous run per light queue.

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::cuckoo::{CuckooTable, Slot};
use crate::pagestore::{Page, PageRef, PageStore};

pub const KEY_BYTES: usize = 4;
pub const ELEM_BYTES: usize = 12;
/// T payload: count (u32) and head block (u32).
pub const HEADER_PAYLOAD_BYTES: usize = 8;
/// D payload: block reference (u32).
pub const DICT_PAYLOAD_BYTES: usize = 4;
/// Stale elements fixed per block per targeting operation.
pub const FIXUP_BUDGET: usize = 12;

const KIND: usize = 0;
const DESIG: usize = 1;
const COUNT: usize = 2;
const PREV: usize = 4;
const NEXT: usize = 8;
const FWD: usize = 12;
const DREF: usize = 16;
const DQ: usize = 20;
const OWNER: usize = 24;
const FLAGS: usize = 32;

const FRESH: u8 = 1;
const HDR: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub key: u32,
    pub value: u64,
}

impl Pair {
    pub fn new(key: u32, value: u64) -> Self {
        Pair { key, value }
    }

    pub fn encode(&self) -> [u8; ELEM_BYTES] {
        let mut b = [0u8; ELEM_BYTES];
        b[..4].copy_from_slice(&self.key.to_le_bytes());
        b[4..].copy_from_slice(&self.value.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Self {
        Pair {
            key: u32::from_le_bytes(b[..4].try_into().unwrap()),
            value: u64::from_le_bytes(b[4..12].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Basic,
    Deamortized,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "basic" => Ok(Variant::Basic),
            "deamortized" => Ok(Variant::Deamortized),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Free,
    Light,
    Heavy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Desig {
    None,
    ByBucket,
    Heavy,
}

/// Queue header as stored in T.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub count: u32,
    pub head: PageRef,
}

impl Header {
    pub const EMPTY: Header = Header {
        count: 0,
        head: PageRef::NULL,
    };

    pub fn encode(&self) -> [u8; HEADER_PAYLOAD_BYTES] {
        let mut b = [0u8; HEADER_PAYLOAD_BYTES];
        b[..4].copy_from_slice(&self.count.to_le_bytes());
        b[4..].copy_from_slice(&self.head.raw().to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Self {
        Header {
            count: u32::from_le_bytes(b[..4].try_into().unwrap()),
            head: PageRef::from_raw(u32::from_le_bytes(b[4..8].try_into().unwrap())),
        }
    }
}

/// The paged store together with the header table T and dictionary D.
pub struct Storage {
    pub store: PageStore,
    pub t: CuckooTable,
    pub d: CuckooTable,
}

impl Storage {
    pub fn header(&mut self, key: u32) -> Option<(Slot, Header)> {
        let slot = self.t.lookup(&mut self.store, &key.to_le_bytes())?;
        let h = Header::decode(&self.t.read_payload(&mut self.store, slot));
        Some((slot, h))
    }

    pub fn put_header(&mut self, slot: Slot, h: Header) {
        self.t.write_payload(&mut self.store, slot, &h.encode());
    }

    /// D entry for a pair: its slot and the block it names.
    pub fn dict_get(&mut self, pair: Pair) -> Option<(Slot, PageRef)> {
        let slot = self.d.lookup(&mut self.store, &pair.encode())?;
        let raw = self.d.read_payload(&mut self.store, slot);
        Some((slot, PageRef::from_raw(u32::from_le_bytes(raw[..4].try_into().unwrap()))))
    }

    fn dict_point(&mut self, pair: Pair, block: PageRef) {
        let ok = self
            .d
            .update_in_place(&mut self.store, &pair.encode(), &block.raw().to_le_bytes());
        debug_assert!(ok, "no dictionary entry for {pair:?}");
    }

    pub(crate) fn bucket_d(&mut self, y: PageRef) -> PageRef {
        PageRef::from_raw(self.t.bucket_meta(&mut self.store, y))
    }

    fn set_bucket_d(&mut self, y: PageRef, x: PageRef) {
        self.t.set_bucket_meta(&mut self.store, y, x.raw());
    }
}

fn u16_at(b: &[u8], off: usize) -> usize {
    u16::from_le_bytes([b[off], b[off + 1]]) as usize
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn kind_of(p: &Page) -> Kind {
    match p.spare()[KIND] {
        1 => Kind::Light,
        2 => Kind::Heavy,
        _ => Kind::Free,
    }
}

fn desig_of(p: &Page) -> Desig {
    match p.spare()[DESIG] {
        1 => Desig::ByBucket,
        2 => Desig::Heavy,
        _ => Desig::None,
    }
}

fn set_desig(p: &mut Page, d: Desig) {
    p.spare_mut()[DESIG] = match d {
        Desig::None => 0,
        Desig::ByBucket => 1,
        Desig::Heavy => 2,
    };
}

fn set_kind(p: &mut Page, k: Kind) {
    p.spare_mut()[KIND] = match k {
        Kind::Free => 0,
        Kind::Light => 1,
        Kind::Heavy => 2,
    };
}

fn count_of(p: &Page) -> usize {
    u16_at(p.spare(), COUNT)
}

fn set_count(p: &mut Page, n: usize) {
    p.spare_mut()[COUNT..COUNT + 2].copy_from_slice(&(n as u16).to_le_bytes());
}

fn link(p: &Page, off: usize) -> PageRef {
    PageRef::from_raw(u32_at(p.spare(), off))
}

fn set_link(p: &mut Page, off: usize, r: PageRef) {
    p.spare_mut()[off..off + 4].copy_from_slice(&r.raw().to_le_bytes());
}

fn owner_of(p: &Page) -> u32 {
    u32_at(p.spare(), OWNER)
}

fn set_owner(p: &mut Page, key: u32) {
    p.spare_mut()[OWNER..OWNER + 4].copy_from_slice(&key.to_le_bytes());
}

fn elem(p: &Page, i: usize) -> Pair {
    Pair::decode(&p.data()[i * ELEM_BYTES..(i + 1) * ELEM_BYTES])
}

fn key_at(p: &Page, i: usize) -> u32 {
    u32_at(p.data(), i * ELEM_BYTES)
}

fn flags(p: &Page, i: usize) -> u8 {
    p.spare()[FLAGS + i]
}

fn set_flags(p: &mut Page, i: usize, f: u8) {
    p.spare_mut()[FLAGS + i] = f;
}

fn find_pair(p: &Page, pair: Pair) -> Option<usize> {
    if kind_of(p) == Kind::Free {
        return None;
    }
    let needle = pair.encode();
    (0..count_of(p)).find(|&i| p.data()[i * ELEM_BYTES..(i + 1) * ELEM_BYTES] == needle)
}

/// `(start, len)` of the run of `key` in a light block.
fn run_of(p: &Page, key: u32) -> Option<(usize, usize)> {
    if kind_of(p) != Kind::Light {
        return None;
    }
    let n = count_of(p);
    let start = (0..n).find(|&i| key_at(p, i) == key)?;
    let len = (start..n).take_while(|&i| key_at(p, i) == key).count();
    Some((start, len))
}

/// Runs of a light block in layout order as `(key, start, len)`.
fn runs(p: &Page) -> Vec<(u32, usize, usize)> {
    let n = count_of(p);
    let mut out: Vec<(u32, usize, usize)> = Vec::new();
    for i in 0..n {
        let k = key_at(p, i);
        match out.last_mut() {
            Some(last) if last.0 == k => last.2 += 1,
            _ => out.push((k, i, 1)),
        }
    }
    out
}

fn insert_at(p: &mut Page, i: usize, pair: Pair, f: u8) {
    let n = count_of(p);
    let (data, spare) = p.split_mut();
    data.copy_within(i * ELEM_BYTES..n * ELEM_BYTES, (i + 1) * ELEM_BYTES);
    data[i * ELEM_BYTES..(i + 1) * ELEM_BYTES].copy_from_slice(&pair.encode());
    spare.copy_within(FLAGS + i..FLAGS + n, FLAGS + i + 1);
    spare[FLAGS + i] = f;
    set_count(p, n + 1);
}

/// Removes slot `i`, handing a header-stale mark to the next element of
/// the same run.
fn remove_at(p: &mut Page, i: usize) -> Pair {
    let n = count_of(p);
    let out = elem(p, i);
    let f = flags(p, i);
    if f & HDR != 0 && i + 1 < n && key_at(p, i + 1) == out.key {
        let g = flags(p, i + 1);
        set_flags(p, i + 1, g | HDR);
    }
    let (data, spare) = p.split_mut();
    data.copy_within((i + 1) * ELEM_BYTES..n * ELEM_BYTES, i * ELEM_BYTES);
    spare.copy_within(FLAGS + i + 1..FLAGS + n, FLAGS + i);
    set_count(p, n - 1);
    out
}

/// Finds `pair` in `block` or in its forward. Free of side effects beyond
/// page reads.
pub fn locate(store: &mut PageStore, block: PageRef, pair: Pair) -> Option<(PageRef, usize)> {
    if block.is_null() {
        return None;
    }
    let page = store.page(block);
    if let Some(i) = find_pair(page, pair) {
        return Some((block, i));
    }
    let fwd = link(page, FWD);
    if fwd.is_null() {
        return None;
    }
    let page = store.page(fwd);
    find_pair(page, pair).map(|i| (fwd, i))
}

/// Off-the-record variant of [`locate`].
pub fn peek_locate(store: &PageStore, block: PageRef, pair: Pair) -> Option<(PageRef, usize)> {
    if block.is_null() {
        return None;
    }
    let page = store.peek(block).ok()?;
    if let Some(i) = find_pair(page, pair) {
        return Some((block, i));
    }
    let fwd = link(page, FWD);
    if fwd.is_null() {
        return None;
    }
    let page = store.peek(fwd).ok()?;
    find_pair(page, pair).map(|i| (fwd, i))
}

/// Off-the-record snapshot of one S block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockView {
    pub kind: Kind,
    pub elements: Vec<Pair>,
    /// `(key, length)` of each light run in layout order.
    pub runs: Vec<(u32, usize)>,
    /// Elements whose references have not been brought up to date.
    pub stale: usize,
    pub forward: PageRef,
    pub next: PageRef,
    pub owner: Option<u32>,
}

pub fn inspect(store: &PageStore, p: PageRef) -> Option<BlockView> {
    let page = store.peek(p).ok()?;
    let n = count_of(page);
    let kind = kind_of(page);
    Some(BlockView {
        kind,
        elements: (0..n).map(|i| elem(page, i)).collect(),
        runs: runs(page).into_iter().map(|(k, _, len)| (k, len)).collect(),
        stale: (0..n).filter(|&i| flags(page, i) & FRESH == 0).count(),
        forward: link(page, FWD),
        next: link(page, NEXT),
        owner: (kind == Kind::Heavy).then(|| owner_of(page)),
    })
}

/// Where a queue currently lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueueLoc {
    Light { block: PageRef, start: usize, len: usize },
    Heavy { head: PageRef },
}

fn loc_in(page: &Page, block: PageRef, key: u32) -> Option<QueueLoc> {
    match kind_of(page) {
        Kind::Light => run_of(page, key).map(|(start, len)| QueueLoc::Light { block, start, len }),
        Kind::Heavy if owner_of(page) == key && link(page, PREV).is_null() => {
            Some(QueueLoc::Heavy { head: block })
        }
        _ => None,
    }
}

/// Size thresholds in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub beta: f64,
    pub gamma: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta > 1.0) {
            return Err(format!("beta must exceed 1 (got {})", self.beta));
        }
        if !(self.gamma > 1.0) {
            return Err(format!("gamma must exceed 1 (got {})", self.gamma));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MqStats {
    pub light_splits: u64,
    pub heavy_splits: u64,
    /// Deamortized split that moved one queue out to a new heavy block.
    pub split_promote_moves: u64,
    /// Deamortized split that kept a large queue in place and moved the rest to d(Y).
    pub split_promote_to_dy: u64,
    /// As above, but the rest went to a fresh block that became d(Y).
    pub split_promote_to_fresh: u64,
    pub merges: u64,
    pub d_alterations: u64,
    pub light_to_heavy: u64,
    pub heavy_to_light: u64,
    pub elements_moved: u64,
    pub fixups: u64,
    /// Moves that found stale elements in the source or its forward and had
    /// to bring them up to date first.
    pub forced_flushes: u64,
    pub forced_fixes: u64,
    pub moves_checked: u64,
    pub separation_violations: u64,
    pub max_merge_sink_bytes: u64,
    pub header_fixes: u64,
}

pub struct MultiQueue {
    variant: Variant,
    thresholds: Thresholds,
    block_bytes: usize,
    slots: usize,
    live: Vec<bool>,
    live_count: usize,
    /// D entries left behind by removeAll that no longer name an element.
    spurious: u64,
    elements: u64,
    /// Targeting operations since the block was last a move source or sink;
    /// `u64::MAX` for blocks never involved in a move.
    since_move: Vec<u64>,
    separation_min: u64,
    stats: MqStats,
}

impl MultiQueue {
    pub fn new(variant: Variant, thresholds: Thresholds, block_bytes: usize) -> Result<Self, String> {
        thresholds.validate()?;
        let slots = block_bytes / ELEM_BYTES;
        if slots < 3 {
            return Err(format!("block of {block_bytes} bytes holds fewer than 3 elements"));
        }
        Ok(MultiQueue {
            variant,
            thresholds,
            block_bytes,
            slots,
            live: Vec::new(),
            live_count: 0,
            spurious: 0,
            elements: 0,
            since_move: Vec::new(),
            separation_min: (block_bytes / (12 * ELEM_BYTES)).max(1) as u64,
            stats: MqStats::default(),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn stats(&self) -> &MqStats {
        &self.stats
    }

    pub fn live_blocks(&self) -> usize {
        self.live_count
    }

    pub fn elements(&self) -> u64 {
        self.elements
    }

    pub fn spurious(&self) -> u64 {
        self.spurious
    }

    pub(crate) fn forget_spurious(&mut self, n: u64) {
        self.spurious -= n;
    }

    fn b(&self) -> f64 {
        self.block_bytes as f64
    }

    fn heavy_above(&self) -> f64 {
        self.b() / self.thresholds.beta
    }

    fn deficient_below(&self) -> f64 {
        self.b() / self.thresholds.gamma
    }

    fn merge_ceiling(&self) -> f64 {
        2.0 * self.b() / 3.0
    }

    fn third(&self) -> f64 {
        self.b() / 3.0
    }

    fn h2l_below(&self) -> f64 {
        match self.variant {
            Variant::Basic => self.b() / 4.0,
            Variant::Deamortized => self.b() / 6.0,
        }
    }

    fn bytes(n: usize) -> f64 {
        (n * ELEM_BYTES) as f64
    }

    fn deferred(&self) -> bool {
        self.variant == Variant::Deamortized
    }

    // ---- block lifecycle -------------------------------------------------

    fn alloc(&mut self, st: &mut Storage, kind: Kind) -> PageRef {
        let fresh = st.store.free_list_len() == 0;
        let p = st.store.allocate();
        let page = st.store.page(p);
        set_kind(page, kind);
        set_desig(page, Desig::None);
        set_count(page, 0);
        set_link(page, PREV, PageRef::NULL);
        set_link(page, NEXT, PageRef::NULL);
        set_link(page, DREF, PageRef::NULL);
        set_link(page, DQ, PageRef::NULL);
        set_owner(page, 0);
        if fresh {
            set_link(page, FWD, PageRef::NULL);
        }
        let i = p.index();
        if self.live.len() <= i {
            self.live.resize(i + 1, false);
            self.since_move.resize(i + 1, u64::MAX);
        }
        self.live[i] = true;
        self.live_count += 1;
        p
    }

    fn release(&mut self, st: &mut Storage, p: PageRef) {
        let page = st.store.page(p);
        debug_assert!(desig_of(page) != Desig::ByBucket);
        set_kind(page, Kind::Free);
        set_desig(page, Desig::None);
        set_count(page, 0);
        st.store.free(p).expect("S block freed twice");
        self.live[p.index()] = false;
        self.live_count -= 1;
    }

    fn count(&self, st: &mut Storage, p: PageRef) -> usize {
        count_of(st.store.page(p))
    }

    fn is_full(&self, st: &mut Storage, p: PageRef) -> bool {
        self.count(st, p) >= self.slots
    }

    // ---- designations ----------------------------------------------------

    /// Makes `x` the designated deficient light block of bucket `y`.
    fn designate_bucket(&mut self, st: &mut Storage, y: PageRef, x: PageRef) {
        let old = st.bucket_d(y);
        if old == x {
            return;
        }
        if !old.is_null() {
            set_desig(st.store.page(old), Desig::None);
            set_link(st.store.page(old), DREF, PageRef::NULL);
        }
        self.undesignate(st, x);
        st.set_bucket_d(y, x);
        let page = st.store.page(x);
        set_desig(page, Desig::ByBucket);
        set_link(page, DREF, y);
    }

    /// Drops a bucket designation held by `x`, if any.
    fn undesignate(&mut self, st: &mut Storage, x: PageRef) {
        let page = st.store.page(x);
        if desig_of(page) == Desig::ByBucket {
            let y = link(page, DREF);
            set_desig(page, Desig::None);
            set_link(page, DREF, PageRef::NULL);
            if st.bucket_d(y) == x {
                st.set_bucket_d(y, PageRef::NULL);
            }
        }
    }

    fn set_dq(&mut self, st: &mut Storage, head: PageRef, x: PageRef) {
        let old = link(st.store.page(head), DQ);
        if !old.is_null() && old != x {
            set_desig(st.store.page(old), Desig::None);
        }
        set_link(st.store.page(head), DQ, x);
        set_desig(st.store.page(x), Desig::Heavy);
    }

    // ---- instrumentation -------------------------------------------------

    fn touch(&mut self, p: PageRef) {
        let c = &mut self.since_move[p.index()];
        *c = c.saturating_add(1);
    }

    fn record_move(&mut self, source: PageRef, sink: PageRef, moved: usize) {
        if moved == 0 {
            return;
        }
        self.stats.elements_moved += moved as u64;
        self.stats.moves_checked += 1;
        if self.since_move[source.index()] < self.separation_min {
            self.stats.separation_violations += 1;
        }
        self.since_move[source.index()] = 0;
        self.since_move[sink.index()] = 0;
    }

    // ---- lazy reference maintenance --------------------------------------

    /// Clears the fresh flag of the first `n` elements of `p`.
    #[cfg(test)]
    pub(crate) fn mark_stale(st: &mut Storage, p: PageRef, n: usize) {
        let page = st.store.peek_mut(p).unwrap();
        for i in 0..n {
            let f = flags(page, i);
            set_flags(page, i, f & !FRESH);
        }
    }

    fn fix_elem(&mut self, st: &mut Storage, w: PageRef, i: usize) {
        let (pair, f) = {
            let page = st.store.page(w);
            (elem(page, i), flags(page, i))
        };
        st.dict_point(pair, w);
        if f & HDR != 0 {
            let (slot, mut h) = st.header(pair.key).expect("header of a stored element");
            if h.head != w {
                h.head = w;
                st.put_header(slot, h);
            }
            self.stats.header_fixes += 1;
        }
        set_flags(st.store.page(w), i, FRESH);
        self.stats.fixups += 1;
    }

    /// Brings up to `budget` stale elements of `w` up to date.
    fn fix_block(&mut self, st: &mut Storage, w: PageRef, budget: usize) -> usize {
        if w.is_null() {
            return 0;
        }
        let page = st.store.page(w);
        if kind_of(page) == Kind::Free {
            return 0;
        }
        let stale: Vec<usize> = (0..count_of(page))
            .filter(|&i| flags(page, i) & FRESH == 0)
            .take(budget)
            .collect();
        for &i in &stale {
            self.fix_elem(st, w, i);
        }
        stale.len()
    }

    pub(crate) fn lazy_fixup(&mut self, st: &mut Storage, x: PageRef) {
        self.touch(x);
        if !self.deferred() {
            return;
        }
        self.fix_block(st, x, FIXUP_BUDGET);
        let fwd = link(st.store.page(x), FWD);
        if fwd.is_null() {
            return;
        }
        self.fix_block(st, fwd, FIXUP_BUDGET);
        // Once the forward holds no stale element, no reference names `x`
        // for an element outside it, so the link can go.
        let page = st.store.page(fwd);
        let done = kind_of(page) == Kind::Free || (0..count_of(page)).all(|i| flags(page, i) & FRESH != 0);
        if done {
            set_link(st.store.page(x), FWD, PageRef::NULL);
        }
    }

    /// Before elements leave `x`, every stale reference into `x` or its
    /// forward must be current so that at most one forwarding hop is ever
    /// needed.
    fn flush_before_move(&mut self, st: &mut Storage, x: PageRef) {
        if !self.deferred() {
            return;
        }
        let fwd = link(st.store.page(x), FWD);
        let n = self.fix_block(st, x, usize::MAX) + self.fix_block(st, fwd, usize::MAX);
        if n > 0 {
            self.stats.forced_flushes += 1;
            self.stats.forced_fixes += n as u64;
        }
    }

    // ---- element movement ------------------------------------------------

    /// Moves light runs `(key, start, len)` from `src` to the end of `dst`,
    /// updating references eagerly or deferring them per the variant.
    fn move_runs(&mut self, st: &mut Storage, src: PageRef, dst: PageRef, chosen: &[(u32, usize, usize)]) -> usize {
        let mut moved_pairs = Vec::new();
        {
            let page = st.store.page(src);
            for &(_, start, len) in chosen {
                for i in start..start + len {
                    moved_pairs.push((elem(page, i), i == start));
                }
            }
            let mut keep: Vec<(Pair, u8)> = Vec::new();
            let n = count_of(page);
            for i in 0..n {
                if !chosen.iter().any(|&(_, s, l)| (s..s + l).contains(&i)) {
                    keep.push((elem(page, i), flags(page, i)));
                }
            }
            for (i, (p, f)) in keep.iter().enumerate() {
                page.data_mut()[i * ELEM_BYTES..(i + 1) * ELEM_BYTES].copy_from_slice(&p.encode());
                set_flags(page, i, *f);
            }
            set_count(page, keep.len());
        }
        let deferred = self.deferred();
        {
            let page = st.store.page(dst);
            for &(pair, first) in &moved_pairs {
                let n = count_of(page);
                let f = if deferred { if first { HDR } else { 0 } } else { FRESH };
                insert_at(page, n, pair, f);
            }
        }
        if deferred {
            if !moved_pairs.is_empty() {
                set_link(st.store.page(src), FWD, dst);
            }
        } else {
            for &(pair, first) in &moved_pairs {
                st.dict_point(pair, dst);
                if first {
                    let (slot, mut h) = st.header(pair.key).expect("header of a moved queue");
                    h.head = dst;
                    st.put_header(slot, h);
                }
            }
        }
        moved_pairs.len()
    }

    /// Moves every element of heavy block `src` into heavy block `dst`.
    fn move_heavy(&mut self, st: &mut Storage, src: PageRef, dst: PageRef) -> usize {
        let moved: Vec<Pair> = {
            let page = st.store.page(src);
            let v = (0..count_of(page)).map(|i| elem(page, i)).collect();
            set_count(page, 0);
            v
        };
        let deferred = self.deferred();
        {
            let page = st.store.page(dst);
            for &pair in &moved {
                let n = count_of(page);
                insert_at(page, n, pair, if deferred { 0 } else { FRESH });
            }
        }
        if deferred {
            if !moved.is_empty() {
                set_link(st.store.page(src), FWD, dst);
            }
        } else {
            for &pair in &moved {
                st.dict_point(pair, dst);
            }
        }
        moved.len()
    }

    // ---- queue resolution ------------------------------------------------

    /// Follows a header's head reference, trying the forward if the queue
    /// is no longer where the header says.
    pub fn resolve(&self, st: &mut Storage, key: u32, head: PageRef) -> Option<QueueLoc> {
        if head.is_null() {
            return None;
        }
        let page = st.store.page(head);
        if let Some(loc) = loc_in(page, head, key) {
            return Some(loc);
        }
        let fwd = link(page, FWD);
        if fwd.is_null() {
            return None;
        }
        let page = st.store.page(fwd);
        loc_in(page, fwd, key)
    }

    pub(crate) fn peek_resolve(st: &Storage, key: u32, head: PageRef) -> Option<QueueLoc> {
        if head.is_null() {
            return None;
        }
        let page = st.store.peek(head).ok()?;
        if let Some(loc) = loc_in(page, head, key) {
            return Some(loc);
        }
        let fwd = link(page, FWD);
        if fwd.is_null() {
            return None;
        }
        loc_in(st.store.peek(fwd).ok()?, fwd, key)
    }

    /// Repoints a stale light header at the block that now holds its run.
    fn fix_light_header(&mut self, st: &mut Storage, slot: Slot, h: &mut Header, block: PageRef, start: usize) {
        if h.head == block {
            return;
        }
        h.head = block;
        st.put_header(slot, *h);
        let page = st.store.page(block);
        let f = flags(page, start);
        set_flags(page, start, f & !HDR);
        self.stats.header_fixes += 1;
    }

    // ---- enqueue ---------------------------------------------------------

    /// Places `pair` in S. The header for `pair.key` must exist and already
    /// count the new element. Returns the block now holding the element;
    /// the caller inserts the D entry and then calls [`Self::after_enqueue`].
    pub fn enqueue(&mut self, st: &mut Storage, pair: Pair) -> PageRef {
        loop {
            let (slot, mut h) = st.header(pair.key).expect("enqueue without a header");
            let y = slot.page;
            if h.head.is_null() {
                let mut x = st.bucket_d(y);
                if x.is_null() {
                    x = self.alloc(st, Kind::Light);
                    self.designate_bucket(st, y, x);
                }
                if self.is_full(st, x) {
                    self.split(st, x, y);
                    continue;
                }
                let page = st.store.page(x);
                let n = count_of(page);
                insert_at(page, n, pair, FRESH);
                h.head = x;
                st.put_header(slot, h);
                self.elements += 1;
                return x;
            }
            match self.resolve(st, pair.key, h.head).expect("header names no queue") {
                QueueLoc::Light { block, start, len } => {
                    self.fix_light_header(st, slot, &mut h, block, start);
                    if self.is_full(st, block) {
                        self.split(st, block, y);
                        continue;
                    }
                    insert_at(st.store.page(block), start + len, pair, FRESH);
                    self.elements += 1;
                    return block;
                }
                QueueLoc::Heavy { head } => {
                    let dq = link(st.store.page(head), DQ);
                    if self.is_full(st, dq) {
                        self.heavy_split(st, slot, h, head);
                        continue;
                    }
                    let page = st.store.page(dq);
                    let n = count_of(page);
                    insert_at(page, n, pair, FRESH);
                    self.elements += 1;
                    return dq;
                }
            }
        }
    }

    /// Post-placement work once the D entry for `pair` exists.
    pub fn after_enqueue(&mut self, st: &mut Storage, pair: Pair, block: PageRef) {
        self.lazy_fixup(st, block);
        if self.variant == Variant::Basic {
            let page = st.store.page(block);
            if let Some((start, len)) = run_of(page, pair.key) {
                if Self::bytes(len) > self.heavy_above() {
                    self.light_to_heavy(st, block, pair.key, start, len);
                }
            }
        }
    }

    fn heavy_split(&mut self, st: &mut Storage, slot: Slot, mut h: Header, head: PageRef) {
        self.stats.heavy_splits += 1;
        let key = owner_of(st.store.page(head));
        let x = self.alloc(st, Kind::Heavy);
        {
            let page = st.store.page(x);
            set_owner(page, key);
            set_link(page, NEXT, head);
        }
        set_link(st.store.page(head), PREV, x);
        self.set_dq(st, head, x);
        let dq = link(st.store.page(head), DQ);
        set_link(st.store.page(head), DQ, PageRef::NULL);
        set_link(st.store.page(x), DQ, dq);
        h.head = x;
        st.put_header(slot, h);
    }

    /// Splits a full light block. `y` is the header bucket of the queue whose
    /// enqueue triggered the split.
    fn split(&mut self, st: &mut Storage, x: PageRef, y: PageRef) {
        self.stats.light_splits += 1;
        let rs = runs(st.store.page(x));
        if self.variant == Variant::Deamortized {
            let largest = rs.iter().copied().max_by_key(|r| (r.2, std::cmp::Reverse(r.1)));
            if let Some((key, start, len)) = largest {
                let size = Self::bytes(len);
                if size >= self.third() && size <= self.merge_ceiling() {
                    self.promote_by_move(st, x, (key, start, len));
                    return;
                }
                if size > self.merge_ceiling() {
                    self.promote_in_place(st, x, y, (key, start, len), &rs);
                    return;
                }
            }
        }
        self.greedy_split(st, x, y, &rs);
    }

    fn greedy_split(&mut self, st: &mut Storage, x: PageRef, y: PageRef, rs: &[(u32, usize, usize)]) {
        debug_assert!(rs.len() >= 2, "greedy split of a single-queue block");
        self.flush_before_move(st, x);
        let sink = self.alloc(st, Kind::Light);
        let mut chosen = Vec::new();
        let mut bytes = 0.0;
        for &r in &rs[..rs.len() - 1] {
            if bytes >= self.third() {
                break;
            }
            bytes += Self::bytes(r.2);
            chosen.push(r);
        }
        let n = self.move_runs(st, x, sink, &chosen);
        self.record_move(x, sink, n);
        // Only reachable when light queues may exceed B/3.
        self.light_deficiency(st, x, y);
    }

    /// Moves a queue of size in `[B/3, 2B/3]` to a fresh block of its own.
    fn promote_by_move(&mut self, st: &mut Storage, x: PageRef, run: (u32, usize, usize)) {
        self.stats.split_promote_moves += 1;
        self.flush_before_move(st, x);
        let (key, start, len) = run;
        let sink = self.alloc(st, Kind::Heavy);
        set_owner(st.store.page(sink), key);
        self.set_dq(st, sink, sink);
        {
            let moved: Vec<Pair> = {
                let page = st.store.page(x);
                (start..start + len).map(|i| elem(page, i)).collect()
            };
            let page = st.store.page(x);
            for _ in 0..len {
                remove_at(page, start);
            }
            let page = st.store.page(sink);
            for (i, &pair) in moved.iter().enumerate() {
                insert_at(page, i, pair, 0);
            }
        }
        set_link(st.store.page(x), FWD, sink);
        let (slot, mut h) = st.header(key).expect("header of a promoted queue");
        h.head = sink;
        st.put_header(slot, h);
        self.stats.light_to_heavy += 1;
        self.record_move(x, sink, len);
    }

    /// Keeps a queue larger than `2B/3` in `x`, making `x` its heavy block,
    /// and moves every other queue to the bucket's designated block or a
    /// fresh one.
    fn promote_in_place(&mut self, st: &mut Storage, x: PageRef, y_enq: PageRef, run: (u32, usize, usize), rs: &[(u32, usize, usize)]) {
        self.flush_before_move(st, x);
        let key = run.0;
        let designator = {
            let page = st.store.page(x);
            (desig_of(page) == Desig::ByBucket).then(|| link(page, DREF))
        };
        let y = designator.unwrap_or(y_enq);
        self.undesignate(st, x);
        let others: Vec<(u32, usize, usize)> = rs.iter().copied().filter(|r| r.0 != key).collect();
        let mut moved = 0;
        let mut sink = PageRef::NULL;
        if !others.is_empty() {
            let dy = st.bucket_d(y);
            let small = !dy.is_null() && Self::bytes(self.count(st, dy)) < self.third();
            if small {
                self.stats.split_promote_to_dy += 1;
                sink = dy;
            } else {
                self.stats.split_promote_to_fresh += 1;
                sink = self.alloc(st, Kind::Light);
                self.designate_bucket(st, y, sink);
            }
            moved = self.move_runs(st, x, sink, &others);
        }
        {
            let page = st.store.page(x);
            set_kind(page, Kind::Heavy);
            set_owner(page, key);
            set_link(page, PREV, PageRef::NULL);
            set_link(page, NEXT, PageRef::NULL);
            let f = flags(page, 0);
            set_flags(page, 0, f & !HDR);
        }
        self.set_dq(st, x, x);
        let (slot, mut h) = st.header(key).expect("header of a promoted queue");
        h.head = x;
        st.put_header(slot, h);
        self.stats.light_to_heavy += 1;
        if !sink.is_null() {
            self.record_move(x, sink, moved);
        }
    }

    /// Basic variant: a light queue above `B/beta` moves to a fresh block.
    fn light_to_heavy(&mut self, st: &mut Storage, x: PageRef, key: u32, start: usize, len: usize) {
        self.stats.light_to_heavy += 1;
        let sink = self.alloc(st, Kind::Heavy);
        set_owner(st.store.page(sink), key);
        self.set_dq(st, sink, sink);
        let moved: Vec<Pair> = {
            let page = st.store.page(x);
            let v: Vec<Pair> = (start..start + len).map(|i| elem(page, i)).collect();
            for _ in 0..len {
                remove_at(page, start);
            }
            v
        };
        {
            let page = st.store.page(sink);
            for (i, &pair) in moved.iter().enumerate() {
                insert_at(page, i, pair, FRESH);
            }
        }
        for &pair in &moved {
            st.dict_point(pair, sink);
        }
        let (slot, mut h) = st.header(key).expect("header of a promoted queue");
        h.head = sink;
        st.put_header(slot, h);
        self.record_move(x, sink, len);
        self.light_deficiency(st, x, slot.page);
    }

    // ---- remove ----------------------------------------------------------

    /// Removes a pair whose D entry names `named`. Returns false (and
    /// changes nothing) if the pair is in neither `named` nor its forward.
    pub fn remove(&mut self, st: &mut Storage, pair: Pair, named: PageRef) -> bool {
        let Some((w, i)) = locate(&mut st.store, named, pair) else {
            return false;
        };
        st.d.remove(&mut st.store, &pair.encode());
        remove_at(st.store.page(w), i);
        self.elements -= 1;
        let (slot, mut h) = st.header(pair.key).expect("header of a stored element");
        h.count -= 1;
        match kind_of(st.store.page(w)) {
            Kind::Light => {
                match run_of(st.store.page(w), pair.key) {
                    None => h.head = PageRef::NULL,
                    Some((start, _)) => self.fix_light_header(st, slot, &mut h, w, start),
                }
                st.put_header(slot, h);
                self.lazy_fixup(st, w);
                self.light_deficiency(st, w, slot.page);
            }
            Kind::Heavy => {
                let head = h.head;
                if h.count == 0 {
                    self.free_chain(st, head);
                    h.head = PageRef::NULL;
                    st.put_header(slot, h);
                    return true;
                }
                st.put_header(slot, h);
                self.lazy_fixup(st, w);
                self.heavy_deficiency(st, slot, head, w);
            }
            Kind::Free => unreachable!("element found in a free block"),
        }
        true
    }

    fn free_chain(&mut self, st: &mut Storage, head: PageRef) -> Vec<Pair> {
        let mut out = Vec::new();
        let mut cur = head;
        while !cur.is_null() {
            let page = st.store.page(cur);
            out.extend((0..count_of(page)).map(|i| elem(page, i)));
            let next = link(page, NEXT);
            self.release(st, cur);
            cur = next;
        }
        out
    }

    fn heavy_deficiency(&mut self, st: &mut Storage, slot: Slot, head: PageRef, w: PageRef) {
        let (w_count, w_next) = {
            let page = st.store.page(w);
            (count_of(page), link(page, NEXT))
        };
        if w == head && w_next.is_null() {
            if Self::bytes(w_count) < self.h2l_below() {
                self.stats.heavy_to_light += 1;
                let page = st.store.page(w);
                set_kind(page, Kind::Light);
                set_desig(page, Desig::None);
                set_link(page, DQ, PageRef::NULL);
                set_owner(page, 0);
                self.light_deficiency(st, w, slot.page);
            }
            return;
        }
        let dq = link(st.store.page(head), DQ);
        if w == dq || Self::bytes(w_count) >= self.deficient_below() {
            return;
        }
        let dq_count = self.count(st, dq);
        if Self::bytes(dq_count) >= self.merge_ceiling() || dq_count + w_count > self.slots {
            self.stats.d_alterations += 1;
            self.set_dq(st, head, w);
            return;
        }
        self.stats.merges += 1;
        self.flush_before_move(st, w);
        let n = self.move_heavy(st, w, dq);
        self.record_move(w, dq, n);
        let sink_bytes = (self.count(st, dq) * ELEM_BYTES) as u64;
        self.stats.max_merge_sink_bytes = self.stats.max_merge_sink_bytes.max(sink_bytes);
        let (prev, next) = {
            let page = st.store.page(w);
            (link(page, PREV), link(page, NEXT))
        };
        if !next.is_null() {
            set_link(st.store.page(next), PREV, prev);
        }
        if prev.is_null() {
            set_link(st.store.page(next), DQ, dq);
            set_link(st.store.page(w), DQ, PageRef::NULL);
            let key = owner_of(st.store.page(next));
            let (hslot, mut h) = st.header(key).expect("heavy header");
            debug_assert_eq!(hslot, slot);
            h.head = next;
            st.put_header(hslot, h);
        } else {
            set_link(st.store.page(prev), NEXT, next);
        }
        self.release(st, w);
    }

    /// Light-block rules after a block shrinks. `y` is the header bucket of
    /// the queue that was touched.
    fn light_deficiency(&mut self, st: &mut Storage, x: PageRef, y: PageRef) {
        let (kind, n, desig) = {
            let page = st.store.page(x);
            (kind_of(page), count_of(page), desig_of(page))
        };
        if kind != Kind::Light || Self::bytes(n) >= self.deficient_below() {
            return;
        }
        if n == 0 {
            self.undesignate(st, x);
            self.release(st, x);
            return;
        }
        if desig != Desig::None {
            return;
        }
        let d = st.bucket_d(y);
        if d.is_null() {
            self.designate_bucket(st, y, x);
            return;
        }
        let z = self.count(st, d);
        if Self::bytes(z) >= self.merge_ceiling() || z + n > self.slots {
            self.stats.d_alterations += 1;
            self.designate_bucket(st, y, x);
            return;
        }
        self.stats.merges += 1;
        self.flush_before_move(st, x);
        let rs = runs(st.store.page(x));
        let moved = self.move_runs(st, x, d, &rs);
        self.record_move(x, d, moved);
        let sink_bytes = (self.count(st, d) * ELEM_BYTES) as u64;
        self.stats.max_merge_sink_bytes = self.stats.max_merge_sink_bytes.max(sink_bytes);
        self.release(st, x);
    }

    // ---- whole-queue operations ------------------------------------------

    /// Every element of the queue for `key`, reading its block(s).
    pub fn find_all(&self, st: &mut Storage, key: u32, head: PageRef) -> Vec<Pair> {
        match self.resolve(st, key, head) {
            None => Vec::new(),
            Some(QueueLoc::Light { block, start, len }) => {
                let page = st.store.page(block);
                (start..start + len).map(|i| elem(page, i)).collect()
            }
            Some(QueueLoc::Heavy { head }) => {
                let mut out = Vec::new();
                let mut cur = head;
                while !cur.is_null() {
                    let page = st.store.page(cur);
                    out.extend((0..count_of(page)).map(|i| elem(page, i)));
                    cur = link(page, NEXT);
                }
                out
            }
        }
    }

    /// Removes every element of the queue for `key` from S. Basic purges the
    /// D entries; Deamortized leaves them behind as spurious. The caller
    /// owns the header afterwards (`head` is already NULL in T).
    pub fn remove_queue(&mut self, st: &mut Storage, key: u32) {
        let Some((slot, mut h)) = st.header(key) else {
            return;
        };
        let loc = self.resolve(st, key, h.head);
        h.head = PageRef::NULL;
        h.count = 0;
        st.put_header(slot, h);
        let removed = match loc {
            None => Vec::new(),
            Some(QueueLoc::Light { block, start, len }) => {
                let page = st.store.page(block);
                let v: Vec<Pair> = (start..start + len).map(|i| elem(page, i)).collect();
                for _ in 0..len {
                    remove_at(page, start);
                }
                self.lazy_fixup(st, block);
                self.light_deficiency(st, block, slot.page);
                v
            }
            Some(QueueLoc::Heavy { head }) => self.free_chain(st, head),
        };
        self.elements -= removed.len() as u64;
        match self.variant {
            Variant::Basic => {
                for pair in removed {
                    st.d.remove(&mut st.store, &pair.encode());
                }
            }
            Variant::Deamortized => self.spurious += removed.len() as u64,
        }
    }

    // ---- audit -----------------------------------------------------------

    /// Off-the-record structural check of S, T and D together.
    pub fn audit(&self, st: &Storage) -> Result<AuditReport, String> {
        let b = self.block_bytes;
        let mut report = AuditReport::default();
        let mut light_home: FxHashMap<u32, PageRef> = Default::default();
        let mut key_elems: FxHashMap<u32, u64> = Default::default();
        let mut in_heavy: FxHashMap<PageRef, u32> = Default::default();
        let mut dq_blocks = FxHashSet::default();
        let mut total = 0u64;
        let enforce_deficiency = self.thresholds.gamma >= 3.0;

        for (i, &live) in self.live.iter().enumerate() {
            if !live {
                continue;
            }
            let p = PageRef::new(i as u32);
            if st.store.is_free(p) {
                return Err(format!("{p} is live in S but on the free list"));
            }
            let page = st.store.peek(p).map_err(|e| e.to_string())?;
            let n = count_of(page);
            if n > self.slots {
                return Err(format!("{p} holds {n} elements, capacity {}", self.slots));
            }
            report.live_blocks += 1;
            total += n as u64;
            for j in 0..n {
                *key_elems.entry(key_at(page, j)).or_default() += 1;
                let f = flags(page, j);
                if !self.deferred() && f != FRESH {
                    return Err(format!("{p} slot {j} has flags {f:#x} in the basic variant"));
                }
            }
            match kind_of(page) {
                Kind::Free => return Err(format!("{p} is live but marked free")),
                Kind::Light => {
                    report.light_blocks += 1;
                    for (k, _, len) in runs(page) {
                        if let Some(other) = light_home.insert(k, p) {
                            return Err(format!("light queue {k} split between {other} and {p}"));
                        }
                        if self.variant == Variant::Basic && Self::bytes(len) > self.heavy_above() {
                            return Err(format!("light queue {k} holds {len} elements, above B/beta"));
                        }
                    }
                    match desig_of(page) {
                        Desig::ByBucket => {
                            let y = link(page, DREF);
                            if st.t.peek_bucket_meta(&st.store, y) != p.raw() {
                                return Err(format!("{p} claims bucket {y} which names another block"));
                            }
                        }
                        Desig::Heavy => return Err(format!("light {p} carries a heavy designation")),
                        Desig::None => {
                            if enforce_deficiency && Self::bytes(n) < self.deficient_below() {
                                return Err(format!("undesignated light {p} is deficient ({n} elements)"));
                            }
                        }
                    }
                }
                Kind::Heavy => {
                    report.heavy_blocks += 1;
                    let owner = owner_of(page);
                    if (0..n).any(|j| key_at(page, j) != owner) {
                        return Err(format!("heavy {p} holds a foreign element"));
                    }
                    in_heavy.insert(p, owner);
                    if desig_of(page) == Desig::Heavy {
                        dq_blocks.insert(p);
                    }
                }
            }
        }
        if total != self.elements {
            return Err(format!("element counter {} but {} stored", self.elements, total));
        }
        if self.live_count != report.live_blocks {
            return Err("live block counter out of sync".into());
        }

        // Bucket designations point back.
        for y in st.t.pages() {
            let x = PageRef::from_raw(st.t.peek_bucket_meta(&st.store, y));
            if x.is_null() {
                continue;
            }
            if !self.live.get(x.index()).copied().unwrap_or(false) {
                return Err(format!("bucket {y} designates non-live {x}"));
            }
            let page = st.store.peek(x).unwrap();
            if kind_of(page) != Kind::Light || desig_of(page) != Desig::ByBucket || link(page, DREF) != y {
                return Err(format!("bucket {y} designates {x}, which does not point back"));
            }
        }

        // Headers.
        let mut heavy_seen = FxHashSet::default();
        let mut header_keys = 0u64;
        let mut header_count_sum = 0u64;
        for (_, _, kb, payload) in st.t.peek_records(&st.store) {
            let key = u32::from_le_bytes(kb[..4].try_into().unwrap());
            let h = Header::decode(&payload);
            header_keys += 1;
            header_count_sum += h.count as u64;
            let stored = key_elems.get(&key).copied().unwrap_or(0);
            if h.count as u64 != stored {
                return Err(format!("key {key}: header count {} but {stored} elements", h.count));
            }
            if h.count == 0 {
                if !h.head.is_null() {
                    return Err(format!("key {key}: empty queue with head {}", h.head));
                }
                continue;
            }
            match Self::peek_resolve(st, key, h.head) {
                None => return Err(format!("key {key}: head {} does not resolve", h.head)),
                Some(QueueLoc::Light { block, len, .. }) => {
                    if self.variant == Variant::Basic && block != h.head {
                        return Err(format!("key {key}: basic header is stale"));
                    }
                    if len as u32 != h.count {
                        return Err(format!("key {key}: light run of {len}, count {}", h.count));
                    }
                }
                Some(QueueLoc::Heavy { head }) => {
                    if head != h.head {
                        return Err(format!("key {key}: heavy header must be exact"));
                    }
                    report.heavy_queues += 1;
                    heavy_seen.insert(key);
                    let dq = link(st.store.peek(head).unwrap(), DQ);
                    let mut cur = head;
                    let mut prev = PageRef::NULL;
                    let mut sum = 0usize;
                    let mut dq_found = false;
                    let mut blocks = 0usize;
                    while !cur.is_null() {
                        let page = st.store.peek(cur).unwrap();
                        if in_heavy.get(&cur) != Some(&key) {
                            return Err(format!("key {key}: chain visits {cur} of another owner"));
                        }
                        if link(page, PREV) != prev {
                            return Err(format!("key {key}: broken prev link at {cur}"));
                        }
                        if cur != head && !link(page, DQ).is_null() {
                            return Err(format!("key {key}: non-head {cur} carries d(Q)"));
                        }
                        let is_dq = cur == dq;
                        dq_found |= is_dq;
                        if is_dq != dq_blocks.contains(&cur) {
                            return Err(format!("key {key}: designation flag of {cur} disagrees with d(Q)"));
                        }
                        let n = count_of(page);
                        if enforce_deficiency && !is_dq && Self::bytes(n) < self.deficient_below() {
                            return Err(format!("key {key}: deficient {cur} is not d(Q)"));
                        }
                        sum += n;
                        blocks += 1;
                        prev = cur;
                        cur = link(page, NEXT);
                        if blocks > self.live.len() {
                            return Err(format!("key {key}: chain cycle"));
                        }
                    }
                    if !dq_found {
                        return Err(format!("key {key}: d(Q) {dq} outside its chain"));
                    }
                    if sum as u32 != h.count {
                        return Err(format!("key {key}: chain holds {sum}, count {}", h.count));
                    }
                }
            }
        }
        report.header_records = header_keys;
        if header_count_sum != total {
            return Err(format!("headers count {header_count_sum} elements, S holds {total}"));
        }
        if heavy_seen.len() as u64 != report.heavy_queues {
            return Err("heavy queue counted twice".into());
        }
        if in_heavy.values().any(|k| !heavy_seen.contains(k)) {
            return Err("heavy block not reachable from any header".into());
        }
        // Every light run must be referenced by its header.
        for &k in light_home.keys() {
            if heavy_seen.contains(&k) {
                return Err(format!("key {k} is both light and heavy"));
            }
        }

        // Dictionary.
        let mut live_entries = 0u64;
        let mut stale = 0u64;
        let mut err = None;
        let basic = self.variant == Variant::Basic;
        st.d.for_each_record(&st.store, |_, _, kb, payload| {
            if err.is_some() {
                return;
            }
            let pair = Pair::decode(kb);
            let named = PageRef::from_raw(u32::from_le_bytes(payload[..4].try_into().unwrap()));
            match peek_locate(&st.store, named, pair) {
                Some((w, _)) => {
                    live_entries += 1;
                    if w != named {
                        stale += 1;
                        if basic {
                            err = Some(format!("{pair:?}: basic D entry is stale"));
                        }
                    }
                }
                None if basic => err = Some(format!("{pair:?}: D entry names no element")),
                None => {}
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if live_entries != total {
            return Err(format!("{total} elements but {live_entries} resolvable D entries"));
        }
        let spurious = st.d.len() as u64 - live_entries;
        if spurious != self.spurious {
            return Err(format!("{spurious} spurious D entries, counter says {}", self.spurious));
        }
        report.stale_entries = stale;
        report.spurious_entries = spurious;
        report.elements = total;

        // Space bound from the deficiency discipline.
        if enforce_deficiency {
            let full_blocks = (self.thresholds.gamma * (total as f64 * ELEM_BYTES as f64) / b as f64).ceil() as usize;
            let bound = full_blocks + st.t.page_count() + report.heavy_queues as usize;
            if report.live_blocks > bound {
                return Err(format!("{} live blocks exceed bound {bound}", report.live_blocks));
            }
        }
        Ok(report)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub live_blocks: usize,
    pub light_blocks: usize,
    pub heavy_blocks: usize,
    pub heavy_queues: u64,
    pub header_records: u64,
    pub elements: u64,
    pub stale_entries: u64,
    pub spurious_entries: u64,
}
