//! External-memory cuckoo hash table with page-sized buckets.
//!
//! Two bucket arrays `T0` and `T1`; a record with key `k` lives in
//! `T0[h0(k)]` or `T1[h1(k)]`. Each bucket is one page whose payload is a
//! dense array of fixed-size records (key bytes followed by payload bytes).
//!
//! Two insertion strategies are provided:
//!
//! * [`InsertMode::RandomWalk`] treats each bucket as one region of
//!   `bucket_capacity` slots. When both candidate buckets are full a random
//!   resident of one of them is kicked to its alternate bucket, and so on.
//! * [`InsertMode::PartitionedBfs`] carves every bucket into
//!   `subtable_count` equal slot ranges. Each key is hashed to one subtable
//!   and is placed by breadth-first search over that subtable's cuckoo graph.
//!
//! Bucket page spare-area layout (little endian):
//!
//! | offset      | size | field                                   |
//! |-------------|------|-----------------------------------------|
//! | 2           | 4    | user metadata word (`bucket_meta`)      |
//! | 8 + 2r      | 2    | occupancy of region `r`                 |

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hash::hash_bytes;
use crate::pagestore::{PageRef, PageStore};

const META_OFFSET: usize = 2;
const COUNT_OFFSET: usize = 8;
const MAX_REHASH_ATTEMPTS: usize = 32;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CuckooError {
    #[error("table capacity {capacity} exhausted")]
    Capacity { capacity: usize },
    #[error("key already present")]
    DuplicateKey,
    #[error("invalid cuckoo configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsertMode {
    RandomWalk,
    PartitionedBfs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuckooConfig {
    pub key_bytes: usize,
    pub payload_bytes: usize,
    pub buckets_per_side: usize,
    pub epsilon: f64,
    pub mode: InsertMode,
    pub max_kicks: usize,
    /// Number of slot ranges per bucket in `PartitionedBfs` mode.
    pub subtable_count: usize,
    /// Node budget for one breadth-first search before falling back to a rehash.
    pub max_bfs_nodes: usize,
    pub seed: u64,
}

impl CuckooConfig {
    pub fn record_bytes(&self) -> usize {
        self.key_bytes + self.payload_bytes
    }

    pub fn bucket_capacity(&self, block_bytes: usize) -> usize {
        block_bytes / self.record_bytes()
    }

    /// Random-walk table sized so that `items` records use a `1/(1+epsilon)`
    /// fraction of the slots.
    pub fn for_items(
        key_bytes: usize,
        payload_bytes: usize,
        block_bytes: usize,
        items: usize,
        epsilon: f64,
        seed: u64,
    ) -> Self {
        let per_bucket = (block_bytes / (key_bytes + payload_bytes)).max(1);
        let slots = (items as f64 * (1.0 + epsilon)).ceil() as usize;
        let buckets_per_side = slots.div_ceil(2 * per_bucket).max(1);
        CuckooConfig {
            key_bytes,
            payload_bytes,
            buckets_per_side,
            epsilon,
            mode: InsertMode::RandomWalk,
            max_kicks: 500,
            subtable_count: 1,
            max_bfs_nodes: 4096,
            seed,
        }
    }

    /// `B/c` with `c = ceil(16 ln(1/epsilon))`, floored at one subtable.
    pub fn theorem_subtable_count(bucket_capacity: usize, epsilon: f64) -> usize {
        let c = (16.0 * (1.0 / epsilon).ln()).ceil().max(1.0) as usize;
        (bucket_capacity / c).max(1)
    }
}

/// Location of a record: bucket page plus slot index within the page.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub page: PageRef,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InsertOutcome {
    pub kicks: usize,
    pub bfs_expansions: usize,
    pub rehashed: bool,
    /// An evictable record was overwritten instead of claiming a free slot.
    pub evicted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuckooStats {
    pub inserts: u64,
    pub kicks: u64,
    pub max_kicks_in_insert: u64,
    pub rehashes: u64,
    pub overflow_rehashes: u64,
    pub bfs_searches: u64,
    pub bfs_expansions: u64,
    pub evictions: u64,
    pub failed_inserts: u64,
}

/// Predicate deciding whether a resident record `(key, payload)` may be
/// overwritten. It may read pages through the store.
pub type Evictable<'a> = dyn FnMut(&mut PageStore, &[u8], &[u8]) -> bool + 'a;

pub struct CuckooTable {
    cfg: CuckooConfig,
    block_bytes: usize,
    bucket_capacity: usize,
    region_capacity: usize,
    pages: [Vec<PageRef>; 2],
    seeds: [u64; 3],
    generation: u64,
    len: usize,
    region_len: Vec<usize>,
    rng: ChaCha8Rng,
    stats: CuckooStats,
}

enum Placement {
    Done(InsertOutcome),
    Failed(Vec<u8>),
}

impl CuckooTable {
    pub fn new(store: &mut PageStore, cfg: CuckooConfig) -> Result<Self, CuckooError> {
        let block_bytes = store.block_bytes();
        if cfg.key_bytes == 0 {
            return Err(CuckooError::Config("key_bytes must be positive".into()));
        }
        let bucket_capacity = cfg.bucket_capacity(block_bytes);
        if bucket_capacity == 0 {
            return Err(CuckooError::Config(format!(
                "record of {} bytes does not fit a {block_bytes}-byte block",
                cfg.record_bytes()
            )));
        }
        if cfg.buckets_per_side == 0 {
            return Err(CuckooError::Config("buckets_per_side must be positive".into()));
        }
        let regions = match cfg.mode {
            InsertMode::RandomWalk => 1,
            InsertMode::PartitionedBfs => cfg.subtable_count,
        };
        if regions == 0 || bucket_capacity / regions == 0 {
            return Err(CuckooError::Config(format!(
                "{regions} subtables leave no slots in a {bucket_capacity}-record bucket"
            )));
        }
        if COUNT_OFFSET + 2 * regions > store.spare_bytes() {
            return Err(CuckooError::Config("too many subtables for the page spare area".into()));
        }
        if cfg.epsilon <= 0.0 {
            return Err(CuckooError::Config("epsilon must be positive".into()));
        }
        let mut pages = [Vec::new(), Vec::new()];
        for side in &mut pages {
            for _ in 0..cfg.buckets_per_side {
                let p = store.allocate();
                let spare = store.peek_mut(p).expect("fresh page").spare_mut();
                spare[META_OFFSET..META_OFFSET + 4].copy_from_slice(&u32::MAX.to_le_bytes());
                for r in 0..regions {
                    spare[COUNT_OFFSET + 2 * r..COUNT_OFFSET + 2 * r + 2].fill(0);
                }
                side.push(p);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let seeds = [rng.gen(), rng.gen(), rng.gen()];
        Ok(CuckooTable {
            region_capacity: bucket_capacity / regions,
            region_len: vec![0; regions],
            block_bytes,
            bucket_capacity,
            pages,
            seeds,
            generation: 0,
            len: 0,
            rng,
            stats: CuckooStats::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &CuckooConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bucket_capacity(&self) -> usize {
        self.bucket_capacity
    }

    /// Total record slots across both sides.
    pub fn capacity(&self) -> usize {
        2 * self.cfg.buckets_per_side * self.region_capacity * self.region_count()
    }

    pub fn load(&self) -> f64 {
        self.len as f64 / self.capacity() as f64
    }

    pub fn stats(&self) -> &CuckooStats {
        &self.stats
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn pages(&self) -> impl Iterator<Item = PageRef> + '_ {
        self.pages[0].iter().chain(self.pages[1].iter()).copied()
    }

    pub fn page_count(&self) -> usize {
        self.pages[0].len() + self.pages[1].len()
    }

    fn region_count(&self) -> usize {
        self.region_len.len()
    }

    fn record_bytes(&self) -> usize {
        self.cfg.record_bytes()
    }

    /// Candidate bucket indices `(h0, h1)` for a key under the current seeds.
    pub fn buckets_of(&self, key: &[u8]) -> [usize; 2] {
        let n = self.cfg.buckets_per_side as u64;
        [
            (hash_bytes(key, self.seeds[0]) % n) as usize,
            (hash_bytes(key, self.seeds[1]) % n) as usize,
        ]
    }

    /// Subtable (slot range) a key belongs to; always 0 in random-walk mode.
    pub fn region_of(&self, key: &[u8]) -> usize {
        match self.region_count() {
            1 => 0,
            r => (hash_bytes(key, self.seeds[2]) % r as u64) as usize,
        }
    }

    fn region_lo(&self, r: usize) -> usize {
        r * self.region_capacity
    }

    fn count_in(page: &[u8], r: usize) -> usize {
        let off = COUNT_OFFSET + 2 * r;
        u16::from_le_bytes([page[off], page[off + 1]]) as usize
    }

    fn set_count(spare: &mut [u8], r: usize, n: usize) {
        let off = COUNT_OFFSET + 2 * r;
        spare[off..off + 2].copy_from_slice(&(n as u16).to_le_bytes());
    }

    fn rec_range(&self, slot: usize) -> std::ops::Range<usize> {
        let rb = self.record_bytes();
        slot * rb..(slot + 1) * rb
    }

    fn find_in_page(&self, data: &[u8], spare: &[u8], r: usize, key: &[u8]) -> Option<usize> {
        let kb = self.cfg.key_bytes;
        let lo = self.region_lo(r);
        (lo..lo + Self::count_in(spare, r)).find(|&s| {
            let range = self.rec_range(s);
            &data[range.start..range.start + kb] == key
        })
    }

    /// Reads at most the two candidate buckets.
    pub fn lookup(&self, store: &mut PageStore, key: &[u8]) -> Option<Slot> {
        debug_assert_eq!(key.len(), self.cfg.key_bytes);
        let r = self.region_of(key);
        let b = self.buckets_of(key);
        for side in 0..2 {
            let p = self.pages[side][b[side]];
            let page = store.page(p);
            if let Some(i) = self.find_in_page(page.data(), page.spare(), r, key) {
                return Some(Slot { page: p, index: i });
            }
        }
        None
    }

    /// Payload of the record for `key`, if present.
    pub fn get(&self, store: &mut PageStore, key: &[u8]) -> Option<Vec<u8>> {
        let slot = self.lookup(store, key)?;
        Some(self.read_payload(store, slot))
    }

    pub fn read_payload(&self, store: &mut PageStore, slot: Slot) -> Vec<u8> {
        let range = self.rec_range(slot.index);
        store.page(slot.page).data()[range.start + self.cfg.key_bytes..range.end].to_vec()
    }

    pub fn write_payload(&self, store: &mut PageStore, slot: Slot, payload: &[u8]) {
        debug_assert_eq!(payload.len(), self.cfg.payload_bytes);
        let range = self.rec_range(slot.index);
        store.page(slot.page).data_mut()[range.start + self.cfg.key_bytes..range.end]
            .copy_from_slice(payload);
    }

    /// Replaces the payload of `key` where it sits. Returns false if absent.
    pub fn update_in_place(&self, store: &mut PageStore, key: &[u8], payload: &[u8]) -> bool {
        match self.lookup(store, key) {
            Some(slot) => {
                self.write_payload(store, slot, payload);
                true
            }
            None => false,
        }
    }

    /// Removes `key`, returning its payload. Reads at most two buckets.
    pub fn remove(&mut self, store: &mut PageStore, key: &[u8]) -> Option<Vec<u8>> {
        let slot = self.lookup(store, key)?;
        let r = self.region_of(key);
        let payload = self.read_payload(store, slot);
        self.delete_slot(store, slot, r);
        Some(payload)
    }

    /// Removes the record at `slot` (region `r`), filling the hole with the
    /// region's last record.
    fn delete_slot(&mut self, store: &mut PageStore, slot: Slot, r: usize) {
        let rb = self.record_bytes();
        let lo = self.region_lo(r);
        let page = store.page(slot.page);
        let n = Self::count_in(page.spare(), r);
        let last = lo + n - 1;
        if slot.index != last {
            page.data_mut()
                .copy_within(last * rb..(last + 1) * rb, slot.index * rb);
        }
        Self::set_count(page.spare_mut(), r, n - 1);
        self.len -= 1;
        self.region_len[r] -= 1;
    }

    /// User metadata word stored with a bucket page.
    pub fn bucket_meta(&self, store: &mut PageStore, page: PageRef) -> u32 {
        let spare = store.page(page).spare();
        u32::from_le_bytes(spare[META_OFFSET..META_OFFSET + 4].try_into().unwrap())
    }

    pub fn set_bucket_meta(&self, store: &mut PageStore, page: PageRef, value: u32) {
        store.page(page).spare_mut()[META_OFFSET..META_OFFSET + 4]
            .copy_from_slice(&value.to_le_bytes());
    }

    /// Off-the-record read of a bucket's metadata word.
    pub fn peek_bucket_meta(&self, store: &PageStore, page: PageRef) -> u32 {
        let spare = store.peek(page).expect("bucket page").spare();
        u32::from_le_bytes(spare[META_OFFSET..META_OFFSET + 4].try_into().unwrap())
    }

    /// Off-the-record scan of all records as `(page, slot, key, payload)`.
    pub fn peek_records(&self, store: &PageStore) -> Vec<(PageRef, usize, Vec<u8>, Vec<u8>)> {
        let mut out = Vec::with_capacity(self.len);
        self.for_each_record(store, |p, s, k, v| out.push((p, s, k.to_vec(), v.to_vec())));
        out
    }

    /// Off-the-record visit of every stored record as `(page, slot, key, payload)`.
    pub fn for_each_record(&self, store: &PageStore, mut f: impl FnMut(PageRef, usize, &[u8], &[u8])) {
        let kb = self.cfg.key_bytes;
        for p in self.pages() {
            let page = store.peek(p).expect("bucket page");
            for r in 0..self.region_count() {
                let lo = self.region_lo(r);
                for s in lo..lo + Self::count_in(page.spare(), r) {
                    let rec = &page.data()[self.rec_range(s)];
                    f(p, s, &rec[..kb], &rec[kb..]);
                }
            }
        }
    }

    /// Off-the-record lookup.
    pub fn peek_get(&self, store: &PageStore, key: &[u8]) -> Option<(Slot, Vec<u8>)> {
        let r = self.region_of(key);
        let b = self.buckets_of(key);
        for side in 0..2 {
            let p = self.pages[side][b[side]];
            let page = store.peek(p).expect("bucket page");
            if let Some(i) = self.find_in_page(page.data(), page.spare(), r, key) {
                let range = self.rec_range(i);
                let payload = page.data()[range.start + self.cfg.key_bytes..range.end].to_vec();
                return Some((Slot { page: p, index: i }, payload));
            }
        }
        None
    }

    fn has_room(&self, store: &mut PageStore, p: PageRef, r: usize) -> bool {
        Self::count_in(store.page(p).spare(), r) < self.region_capacity
    }

    fn append(&mut self, store: &mut PageStore, p: PageRef, r: usize, record: &[u8]) -> usize {
        let rb = self.record_bytes();
        let lo = self.region_lo(r);
        let page = store.page(p);
        let n = Self::count_in(page.spare(), r);
        debug_assert!(n < self.region_capacity);
        let slot = lo + n;
        page.data_mut()[slot * rb..(slot + 1) * rb].copy_from_slice(record);
        Self::set_count(page.spare_mut(), r, n + 1);
        self.len += 1;
        self.region_len[r] += 1;
        slot
    }

    fn record_at(&self, store: &mut PageStore, p: PageRef, slot: usize) -> Vec<u8> {
        store.page(p).data()[self.rec_range(slot)].to_vec()
    }

    fn overwrite(&self, store: &mut PageStore, p: PageRef, slot: usize, record: &[u8]) {
        let range = self.rec_range(slot);
        store.page(p).data_mut()[range].copy_from_slice(record);
    }

    /// Finds a resident of region `r` in `p` that the predicate allows us to drop.
    fn find_evictable(
        &self,
        store: &mut PageStore,
        p: PageRef,
        r: usize,
        evictable: &mut Evictable<'_>,
    ) -> Option<usize> {
        let kb = self.cfg.key_bytes;
        let lo = self.region_lo(r);
        let n = Self::count_in(store.page(p).spare(), r);
        for s in lo..lo + n {
            let rec = self.record_at(store, p, s);
            if evictable(store, &rec[..kb], &rec[kb..]) {
                return Some(s);
            }
        }
        None
    }

    /// Inserts a record whose key must not already be present.
    ///
    /// `evictable`, when given, lets the insertion overwrite resident records
    /// that satisfy it (first in the two candidate buckets, then in every
    /// full bucket the random walk visits) and drops such records during a
    /// rehash.
    pub fn insert(
        &mut self,
        store: &mut PageStore,
        key: &[u8],
        payload: &[u8],
        mut evictable: Option<&mut Evictable<'_>>,
    ) -> Result<InsertOutcome, CuckooError> {
        if key.len() != self.cfg.key_bytes || payload.len() != self.cfg.payload_bytes {
            return Err(CuckooError::Config("record length mismatch".into()));
        }
        if self.peek_get(store, key).is_some() {
            return Err(CuckooError::DuplicateKey);
        }
        if self.len >= self.capacity() && evictable.is_none() {
            self.stats.failed_inserts += 1;
            return Err(CuckooError::Capacity {
                capacity: self.capacity(),
            });
        }
        self.stats.inserts += 1;
        let mut record = Vec::with_capacity(self.record_bytes());
        record.extend_from_slice(key);
        record.extend_from_slice(payload);

        if self.cfg.mode == InsertMode::PartitionedBfs {
            let r = self.region_of(key);
            let limit = self.region_overflow_limit();
            if (self.region_len[r] + 1) as f64 > limit {
                self.stats.overflow_rehashes += 1;
                let out = self.rehash(store, Some(record), evictable)?;
                return Ok(out);
            }
        }

        let placed = match self.cfg.mode {
            InsertMode::RandomWalk => self.place_random_walk(store, record, evictable.as_deref_mut()),
            InsertMode::PartitionedBfs => self.place_bfs(store, record),
        };
        match placed {
            Placement::Done(out) => Ok(out),
            Placement::Failed(homeless) => self.rehash(store, Some(homeless), evictable),
        }
    }

    /// Per-subtable record ceiling: `(1 + eps/3)` times the share a subtable
    /// receives when the whole table holds its design load `capacity/(1+eps)`.
    fn region_overflow_limit(&self) -> f64 {
        let per_region = 2.0 * self.cfg.buckets_per_side as f64 * self.region_capacity as f64;
        (1.0 + self.cfg.epsilon / 3.0) * per_region / (1.0 + self.cfg.epsilon)
    }

    fn place_random_walk(
        &mut self,
        store: &mut PageStore,
        record: Vec<u8>,
        mut evictable: Option<&mut Evictable<'_>>,
    ) -> Placement {
        let kb = self.cfg.key_bytes;
        let b = self.buckets_of(&record[..kb]);
        let candidates = [self.pages[0][b[0]], self.pages[1][b[1]]];
        for &p in &candidates {
            if self.has_room(store, p, 0) {
                self.append(store, p, 0, &record);
                return Placement::Done(InsertOutcome::default());
            }
        }
        if let Some(ev) = evictable.as_deref_mut() {
            for &p in &candidates {
                if let Some(s) = self.find_evictable(store, p, 0, ev) {
                    self.overwrite(store, p, s, &record);
                    self.stats.evictions += 1;
                    return Placement::Done(InsertOutcome {
                        evicted: true,
                        ..Default::default()
                    });
                }
            }
        }

        let mut homeless = record;
        let mut side = self.rng.gen_range(0..2usize);
        let mut page = candidates[side];
        let mut kicks = 0usize;
        while kicks < self.cfg.max_kicks {
            let n = Self::count_in(store.page(page).spare(), 0);
            let victim = self.rng.gen_range(0..n);
            let evicted = self.record_at(store, page, victim);
            self.overwrite(store, page, victim, &homeless);
            homeless = evicted;
            kicks += 1;
            self.stats.kicks += 1;

            side = 1 - side;
            let hb = self.buckets_of(&homeless[..kb]);
            page = self.pages[side][hb[side]];
            if self.has_room(store, page, 0) {
                self.append(store, page, 0, &homeless);
                self.stats.max_kicks_in_insert = self.stats.max_kicks_in_insert.max(kicks as u64);
                return Placement::Done(InsertOutcome {
                    kicks,
                    ..Default::default()
                });
            }
            if let Some(ev) = evictable.as_deref_mut() {
                if let Some(s) = self.find_evictable(store, page, 0, ev) {
                    self.overwrite(store, page, s, &homeless);
                    self.stats.evictions += 1;
                    return Placement::Done(InsertOutcome {
                        kicks,
                        evicted: true,
                        ..Default::default()
                    });
                }
            }
        }
        self.stats.max_kicks_in_insert = self.stats.max_kicks_in_insert.max(kicks as u64);
        Placement::Failed(homeless)
    }

    fn place_bfs(&mut self, store: &mut PageStore, record: Vec<u8>) -> Placement {
        struct Node {
            side: usize,
            bucket: usize,
            parent: Option<(usize, usize)>,
        }
        let kb = self.cfg.key_bytes;
        let r = self.region_of(&record[..kb]);
        let b = self.buckets_of(&record[..kb]);
        self.stats.bfs_searches += 1;
        for side in 0..2 {
            let p = self.pages[side][b[side]];
            if self.has_room(store, p, r) {
                self.append(store, p, r, &record);
                return Placement::Done(InsertOutcome::default());
            }
        }

        let mut nodes: Vec<Node> = Vec::new();
        let mut visited: HashSet<(usize, usize)> = HashSet::new();
        let mut queue: VecDeque<usize> = VecDeque::new();
        for (side, &bucket) in b.iter().enumerate() {
            if visited.insert((side, bucket)) {
                nodes.push(Node {
                    side,
                    bucket,
                    parent: None,
                });
                queue.push_back(nodes.len() - 1);
            }
        }
        let lo = self.region_lo(r);
        let mut expansions = 0usize;
        while let Some(i) = queue.pop_front() {
            if expansions >= self.cfg.max_bfs_nodes {
                break;
            }
            expansions += 1;
            self.stats.bfs_expansions += 1;
            let (side, bucket) = (nodes[i].side, nodes[i].bucket);
            let p = self.pages[side][bucket];
            let n = Self::count_in(store.page(p).spare(), r);
            for s in lo..lo + n {
                let resident = self.record_at(store, p, s);
                let alt_side = 1 - side;
                let alt_bucket = self.buckets_of(&resident[..kb])[alt_side];
                if !visited.insert((alt_side, alt_bucket)) {
                    continue;
                }
                let alt = self.pages[alt_side][alt_bucket];
                if self.has_room(store, alt, r) {
                    // Shift records along the path towards the free slot.
                    self.append(store, alt, r, &resident);
                    self.len -= 1;
                    self.region_len[r] -= 1;
                    let (mut cur, mut hole) = (i, s);
                    while let Some((pi, ps)) = nodes[cur].parent {
                        let from = self.pages[nodes[pi].side][nodes[pi].bucket];
                        let to = self.pages[nodes[cur].side][nodes[cur].bucket];
                        let moved = self.record_at(store, from, ps);
                        self.overwrite(store, to, hole, &moved);
                        cur = pi;
                        hole = ps;
                    }
                    let root = self.pages[nodes[cur].side][nodes[cur].bucket];
                    self.overwrite(store, root, hole, &record);
                    self.len += 1;
                    self.region_len[r] += 1;
                    return Placement::Done(InsertOutcome {
                        bfs_expansions: expansions,
                        ..Default::default()
                    });
                }
                nodes.push(Node {
                    side: alt_side,
                    bucket: alt_bucket,
                    parent: Some((i, s)),
                });
                queue.push_back(nodes.len() - 1);
            }
        }
        Placement::Failed(record)
    }

    /// Rebuilds the table under fresh hash seeds, re-placing every record
    /// (plus `pending`). Records matching `evictable` are dropped.
    fn rehash(
        &mut self,
        store: &mut PageStore,
        pending: Option<Vec<u8>>,
        mut evictable: Option<&mut Evictable<'_>>,
    ) -> Result<InsertOutcome, CuckooError> {
        let kb = self.cfg.key_bytes;
        let mut records: Vec<Vec<u8>> = Vec::with_capacity(self.len + 1);
        let all: Vec<PageRef> = self.pages().collect();
        for &p in &all {
            for r in 0..self.region_count() {
                let lo = self.region_lo(r);
                let n = Self::count_in(store.page(p).spare(), r);
                for s in lo..lo + n {
                    let rec = self.record_at(store, p, s);
                    let drop = match evictable.as_deref_mut() {
                        Some(ev) => ev(store, &rec[..kb], &rec[kb..]),
                        None => false,
                    };
                    if drop {
                        self.stats.evictions += 1;
                    } else {
                        records.push(rec);
                    }
                }
            }
        }
        records.extend(pending);
        if records.len() > self.capacity() {
            self.stats.failed_inserts += 1;
            return Err(CuckooError::Capacity {
                capacity: self.capacity(),
            });
        }
        for attempt in 0..MAX_REHASH_ATTEMPTS {
            self.stats.rehashes += 1;
            self.generation += 1;
            self.seeds = [self.rng.gen(), self.rng.gen(), self.rng.gen()];
            for &p in &all {
                let spare = store.page(p).spare_mut();
                for r in 0..self.region_len.len() {
                    Self::set_count(spare, r, 0);
                }
            }
            self.len = 0;
            self.region_len.iter_mut().for_each(|n| *n = 0);
            let mut ok = true;
            for rec in &records {
                let placed = match self.cfg.mode {
                    InsertMode::RandomWalk => self.place_random_walk(store, rec.clone(), None),
                    InsertMode::PartitionedBfs => {
                        let r = self.region_of(&rec[..kb]);
                        if (self.region_len[r] + 1) as f64 > self.region_overflow_limit()
                            && attempt + 1 < MAX_REHASH_ATTEMPTS
                        {
                            Placement::Failed(rec.clone())
                        } else {
                            self.place_bfs(store, rec.clone())
                        }
                    }
                };
                if let Placement::Failed(_) = placed {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(InsertOutcome {
                    rehashed: true,
                    ..Default::default()
                });
            }
        }
        self.stats.failed_inserts += 1;
        Err(CuckooError::Capacity {
            capacity: self.capacity(),
        })
    }

    /// Checks placement and uniqueness off the record. Returns the first
    /// violation found.
    pub fn audit(&self, store: &PageStore) -> Result<(), String> {
        let kb = self.cfg.key_bytes;
        let mut total = 0usize;
        let mut per_region = vec![0usize; self.region_count()];
        for side in 0..2 {
            for (bucket, &p) in self.pages[side].iter().enumerate() {
                let page = store.peek(p).map_err(|e| e.to_string())?;
                for r in 0..self.region_count() {
                    let n = Self::count_in(page.spare(), r);
                    if n > self.region_capacity {
                        return Err(format!("bucket {p} region {r} over capacity ({n})"));
                    }
                    let lo = self.region_lo(r);
                    for s in lo..lo + n {
                        let range = self.rec_range(s);
                        let key = &page.data()[range.start..range.start + self.cfg.key_bytes];
                        if self.buckets_of(key)[side] != bucket {
                            return Err(format!("record in slot {s} of {p} is outside its buckets"));
                        }
                        if self.region_of(key) != r {
                            return Err(format!("record in slot {s} of {p} is outside its subtable"));
                        }
                        // A copy can only sit in this bucket or the other candidate.
                        let earlier = (lo..s).any(|t| page.data()[self.rec_range(t)][..kb] == *key);
                        let across = side == 0 && {
                            let other = store.peek(self.pages[1][self.buckets_of(key)[1]]).map_err(|e| e.to_string())?;
                            self.find_in_page(other.data(), other.spare(), r, key).is_some()
                        };
                        if earlier || across {
                            return Err(format!("duplicate key {key:?}"));
                        }
                        total += 1;
                        per_region[r] += 1;
                    }
                }
            }
        }
        if total != self.len {
            return Err(format!("len {} but {} records stored", self.len, total));
        }
        if per_region != self.region_len {
            return Err("subtable counters out of sync".into());
        }
        debug_assert!(self.block_bytes >= self.bucket_capacity * self.record_bytes());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pagestore::CacheConfig;
    use std::collections::HashMap;

    fn store(block: usize, cache_pages: usize) -> PageStore {
        PageStore::new(CacheConfig {
            cache_bytes: block * cache_pages,
            block_bytes: block,
        })
        .unwrap()
    }

    fn cfg(buckets: usize, seed: u64) -> CuckooConfig {
        CuckooConfig {
            key_bytes: 4,
            payload_bytes: 4,
            buckets_per_side: buckets,
            epsilon: 0.07,
            mode: InsertMode::RandomWalk,
            max_kicks: 500,
            subtable_count: 1,
            max_bfs_nodes: 4096,
            seed,
        }
    }

    fn k(x: u32) -> [u8; 4] {
        x.to_le_bytes()
    }

    #[test]
    fn empty_lookup_reads_at_most_two_pages() {
        let mut s = store(64, 2);
        let t = CuckooTable::new(&mut s, cfg(8, 1)).unwrap();
        s.op_boundary();
        assert_eq!(t.lookup(&mut s, &k(5)), None);
        assert!(s.op_boundary() <= 2);
    }

    #[test]
    fn insert_lookup_round_trip() {
        let mut s = store(64, 4);
        let mut t = CuckooTable::new(&mut s, cfg(8, 1)).unwrap();
        t.insert(&mut s, &k(9), &k(77), None).unwrap();
        assert_eq!(t.get(&mut s, &k(9)), Some(k(77).to_vec()));
        let slot = t.lookup(&mut s, &k(9)).unwrap();
        let b = t.buckets_of(&k(9));
        assert!(slot.page == t.pages[0][b[0]] || slot.page == t.pages[1][b[1]]);
    }

    #[test]
    fn duplicate_insert_rejected() {
        let mut s = store(64, 4);
        let mut t = CuckooTable::new(&mut s, cfg(8, 1)).unwrap();
        t.insert(&mut s, &k(1), &k(1), None).unwrap();
        assert_eq!(t.insert(&mut s, &k(1), &k(2), None), Err(CuckooError::DuplicateKey));
    }

    #[test]
    fn remove_and_update() {
        let mut s = store(64, 4);
        let mut t = CuckooTable::new(&mut s, cfg(8, 1)).unwrap();
        assert_eq!(t.remove(&mut s, &k(3)), None);
        assert!(!t.update_in_place(&mut s, &k(3), &k(0)));
        t.insert(&mut s, &k(3), &k(1), None).unwrap();
        assert!(t.update_in_place(&mut s, &k(3), &k(2)));
        assert_eq!(t.get(&mut s, &k(3)), Some(k(2).to_vec()));
        assert_eq!(t.remove(&mut s, &k(3)), Some(k(2).to_vec()));
        assert_eq!(t.get(&mut s, &k(3)), None);
        assert!(t.is_empty());
    }

    /// Searches the seeded hash for keys with prescribed bucket pairs.
    fn find_key(t: &CuckooTable, want: impl Fn([usize; 2]) -> bool, skip: &[u32]) -> u32 {
        (0u32..)
            .find(|x| !skip.contains(x) && want(t.buckets_of(&k(*x))))
            .unwrap()
    }

    #[test]
    fn full_candidates_displace_resident_to_its_alternate() {
        // 8-byte records in 8-byte blocks: one record per bucket.
        let mut s = store(8, 8);
        let mut t = CuckooTable::new(&mut s, cfg(16, 3)).unwrap();
        assert_eq!(t.bucket_capacity(), 1);
        let a = find_key(&t, |_| true, &[]);
        let [a0, a1] = t.buckets_of(&k(a));
        let b = find_key(&t, |[h0, h1]| h0 == a0 && h1 != a1, &[a]);
        let bx = t.buckets_of(&k(b))[1];
        let c = find_key(&t, |[h0, h1]| h0 == a0 && h1 == bx, &[a, b]);
        for x in [a, b, c] {
            let out = t.insert(&mut s, &k(x), &k(x), None).unwrap();
            assert!(!out.rehashed);
        }
        // a started in T0[a0]; c could only be placed by pushing a to T1[a1].
        assert_eq!(t.lookup(&mut s, &k(a)).unwrap().page, t.pages[1][a1]);
        for x in [a, b, c] {
            assert_eq!(t.get(&mut s, &k(x)), Some(k(x).to_vec()));
        }
        t.audit(&s).unwrap();
    }

    #[test]
    fn evictable_resident_is_overwritten_without_kicks() {
        let mut s = store(8, 8);
        let mut t = CuckooTable::new(&mut s, cfg(16, 5)).unwrap();
        let a = find_key(&t, |_| true, &[]);
        let [a0, a1] = t.buckets_of(&k(a));
        let b = find_key(&t, |[h0, h1]| h0 == a0 && h1 == a1, &[a]);
        let c = find_key(&t, |[h0, h1]| h0 == a0 && h1 == a1, &[a, b]);
        t.insert(&mut s, &k(a), &k(0), None).unwrap();
        t.insert(&mut s, &k(b), &k(0), None).unwrap();
        let spurious = k(a);
        let mut ev = |_: &mut PageStore, key: &[u8], _: &[u8]| key == spurious;
        let out = t.insert(&mut s, &k(c), &k(1), Some(&mut ev)).unwrap();
        assert!(out.evicted);
        assert_eq!(out.kicks, 0);
        assert!(!out.rehashed);
        assert_eq!(t.get(&mut s, &k(a)), None);
        assert_eq!(t.get(&mut s, &k(c)), Some(k(1).to_vec()));
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn differential_against_hashmap() {
        let mut s = store(64, 4);
        let mut t = CuckooTable::new(&mut s, cfg(32, 11)).unwrap();
        let mut oracle: HashMap<u32, u32> = HashMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for step in 0..10_000u32 {
            let key = rng.gen_range(0..600u32);
            match rng.gen_range(0..3) {
                0 | 1 if !oracle.contains_key(&key) && oracle.len() < 300 => {
                    t.insert(&mut s, &k(key), &k(step), None).unwrap();
                    oracle.insert(key, step);
                }
                0 => {
                    assert_eq!(t.update_in_place(&mut s, &k(key), &k(step)), oracle.contains_key(&key));
                    if let Some(v) = oracle.get_mut(&key) {
                        *v = step;
                    }
                }
                _ => {
                    assert_eq!(t.remove(&mut s, &k(key)), oracle.remove(&key).map(|v| k(v).to_vec()));
                }
            }
            assert_eq!(t.len(), oracle.len());
            let probe = rng.gen_range(0..600u32);
            s.op_boundary();
            assert_eq!(t.get(&mut s, &k(probe)), oracle.get(&probe).map(|v| k(*v).to_vec()));
            assert!(s.op_boundary() <= 2);
        }
        t.audit(&s).unwrap();
    }

    #[test]
    fn bfs_single_record_goes_in_directly() {
        let mut s = store(64, 4);
        let mut c = cfg(8, 2);
        c.mode = InsertMode::PartitionedBfs;
        c.subtable_count = 2;
        let mut t = CuckooTable::new(&mut s, c).unwrap();
        let out = t.insert(&mut s, &k(1), &k(1), None).unwrap();
        assert_eq!(out.bfs_expansions, 0);
        assert_eq!(t.get(&mut s, &k(1)), Some(k(1).to_vec()));
    }

    #[test]
    fn bfs_relocates_one_record_along_short_path() {
        // Two records per bucket, two buckets per side, one subtable.
        let mut s = store(16, 8);
        let mut c = cfg(2, 7);
        c.mode = InsertMode::PartitionedBfs;
        c.epsilon = 0.5;
        let mut t = CuckooTable::new(&mut s, c).unwrap();
        let mut used = Vec::new();
        let mut pick = |t: &CuckooTable, want: [usize; 2]| {
            let x = find_key(t, |b| b == want, &used);
            used.push(x);
            x
        };
        let x1 = pick(&t, [0, 1]);
        let x2 = pick(&t, [0, 1]);
        let z1 = pick(&t, [0, 0]);
        let z2 = pick(&t, [0, 0]);
        let v = pick(&t, [0, 0]);
        for x in [x1, x2, z1, z2] {
            let out = t.insert(&mut s, &k(x), &k(x), None).unwrap();
            assert_eq!(out.bfs_expansions, 0);
        }
        // T0[0] = {x1, x2}, T1[0] = {z1, z2}, T1[1] empty.
        let out = t.insert(&mut s, &k(v), &k(v), None).unwrap();
        assert!(!out.rehashed);
        assert_eq!(out.bfs_expansions, 1);
        let in_t1_1: Vec<u32> = [x1, x2]
            .into_iter()
            .filter(|&x| t.lookup(&mut s, &k(x)).unwrap().page == t.pages[1][1])
            .collect();
        assert_eq!(in_t1_1.len(), 1);
        assert_eq!(t.lookup(&mut s, &k(v)).unwrap().page, t.pages[0][0]);
        for x in [x1, x2, z1, z2, v] {
            assert_eq!(t.get(&mut s, &k(x)), Some(k(x).to_vec()), "key {x}");
        }
        t.audit(&s).unwrap();
    }

    #[test]
    fn bfs_mean_expansions_small_at_half_load() {
        let mut s = store(96, 16);
        let mut c = cfg(0, 13);
        c.mode = InsertMode::PartitionedBfs;
        c.subtable_count = 2;
        c.epsilon = 1.0;
        // 12 records per bucket; 10^4 inserts at load 0.5 need 2*10^4 slots.
        c.buckets_per_side = 20_000 / 24 + 1;
        let mut t = CuckooTable::new(&mut s, c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut keys = HashSet::new();
        while keys.len() < 10_000 {
            keys.insert(rng.gen::<u32>());
        }
        for &x in &keys {
            t.insert(&mut s, &k(x), &k(x), None).unwrap();
        }
        let mean = t.stats().bfs_expansions as f64 / t.stats().bfs_searches as f64;
        assert!(mean < 3.0, "mean expansions {mean}");
        assert_eq!(t.stats().failed_inserts, 0);
        t.audit(&s).unwrap();
    }

    #[test]
    fn theorem_subtables() {
        // c = ceil(16 ln(1/0.07)) = 43.
        assert_eq!(CuckooConfig::theorem_subtable_count(341, 0.07), 7);
        assert_eq!(CuckooConfig::theorem_subtable_count(10, 0.07), 1);
    }

    #[test]
    fn capacity_error_when_full() {
        let mut s = store(8, 4);
        let mut t = CuckooTable::new(&mut s, cfg(1, 1)).unwrap();
        t.insert(&mut s, &k(1), &k(1), None).unwrap();
        t.insert(&mut s, &k(2), &k(2), None).unwrap();
        assert!(matches!(
            t.insert(&mut s, &k(3), &k(3), None),
            Err(CuckooError::Capacity { .. })
        ));
    }
}
