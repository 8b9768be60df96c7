//! Simulated two-level memory: an unbounded array of fixed-size pages (the
//! "disk") fronted by a small LRU cache.
//!
//! Only transfers from disk into the cache are counted. Every eviction is
//! modelled as a write-back of the least recently used page, and those
//! write-backs are tracked but never charged.
//!
//! Each page carries `block_bytes` of payload plus a small out-of-band spare
//! area. Payload bytes hold records and are what block-size thresholds are
//! measured against; the spare area holds per-block bookkeeping (occupancy
//! counts, chain links, forwarding handles, bitmaps).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Default simulated cache size: 512 KB.
pub const DEFAULT_CACHE_BYTES: usize = 512 * 1024;
/// Default block size: 4 KB.
pub const DEFAULT_BLOCK_BYTES: usize = 4096;

const IMAGE_MAGIC: &[u8; 8] = b"EXMMPAGE";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("dereferenced the NULL page reference")]
    Null,
    #[error("page {0} does not exist")]
    OutOfRange(PageRef),
    #[error("page {0} freed twice")]
    DoubleFree(PageRef),
    #[error("invalid cache configuration: {0}")]
    Config(String),
    #[error("malformed disk image: {0}")]
    BadImage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Handle to a page. `PageRef::NULL` is the distinguished null reference.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageRef(u32);

impl PageRef {
    pub const NULL: PageRef = PageRef(u32::MAX);

    pub fn new(index: u32) -> Self {
        debug_assert!(index != u32::MAX);
        PageRef(index)
    }

    /// Decodes a reference stored as a little-endian u32 (NULL round-trips).
    pub fn from_raw(raw: u32) -> Self {
        PageRef(raw)
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_null(self) -> bool {
        self.0 == u32::MAX
    }
}

impl std::fmt::Debug for PageRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_null() {
            write!(f, "PageRef(NULL)")
        } else {
            write!(f, "PageRef({})", self.0)
        }
    }
}

impl std::fmt::Display for PageRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub cache_bytes: usize,
    pub block_bytes: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            cache_bytes: DEFAULT_CACHE_BYTES,
            block_bytes: DEFAULT_BLOCK_BYTES,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.block_bytes == 0 {
            return Err(StoreError::Config("block_bytes must be positive".into()));
        }
        if self.cache_bytes == 0 || !self.cache_bytes.is_multiple_of(self.block_bytes) {
            return Err(StoreError::Config(format!(
                "cache_bytes {} is not a positive multiple of block_bytes {}",
                self.cache_bytes, self.block_bytes
            )));
        }
        if self.cache_bytes / self.block_bytes < 2 {
            return Err(StoreError::Config("cache must hold at least 2 pages".into()));
        }
        Ok(())
    }

    pub fn capacity_pages(&self) -> usize {
        self.cache_bytes / self.block_bytes
    }
}

/// Size of the out-of-band area attached to each page.
pub fn spare_bytes_for(block_bytes: usize) -> usize {
    64 + block_bytes / 4
}

/// A page: `block_bytes` of payload followed by the spare area.
#[derive(Clone)]
pub struct Page {
    bytes: Box<[u8]>,
    block_bytes: usize,
}

impl Page {
    fn zeroed(block_bytes: usize) -> Self {
        Page {
            bytes: vec![0u8; block_bytes + spare_bytes_for(block_bytes)].into_boxed_slice(),
            block_bytes,
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.bytes[..self.block_bytes]
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.bytes[..self.block_bytes]
    }

    pub fn spare(&self) -> &[u8] {
        &self.bytes[self.block_bytes..]
    }

    pub fn spare_mut(&mut self) -> &mut [u8] {
        &mut self.bytes[self.block_bytes..]
    }

    /// Payload and spare area borrowed together.
    pub fn split_mut(&mut self) -> (&mut [u8], &mut [u8]) {
        self.bytes.split_at_mut(self.block_bytes)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IoStats {
    pub reads_from_disk: u64,
    pub per_op_reads: u64,
    pub write_backs: u64,
    pub ops: u64,
    pub series: Option<Vec<(u64, u64)>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PageState {
    Live,
    Free,
}

const NIL: u32 = u32::MAX;

/// Intrusive doubly linked LRU list over page indices.
struct Lru {
    prev: Vec<u32>,
    next: Vec<u32>,
    cached: Vec<bool>,
    head: u32,
    tail: u32,
    len: usize,
    capacity: usize,
}

impl Lru {
    fn new(capacity: usize) -> Self {
        Lru {
            prev: Vec::new(),
            next: Vec::new(),
            cached: Vec::new(),
            head: NIL,
            tail: NIL,
            len: 0,
            capacity,
        }
    }

    fn grow(&mut self, pages: usize) {
        if self.cached.len() < pages {
            self.prev.resize(pages, NIL);
            self.next.resize(pages, NIL);
            self.cached.resize(pages, false);
        }
    }

    fn unlink(&mut self, i: u32) {
        let (p, n) = (self.prev[i as usize], self.next[i as usize]);
        if p != NIL {
            self.next[p as usize] = n;
        } else {
            self.head = n;
        }
        if n != NIL {
            self.prev[n as usize] = p;
        } else {
            self.tail = p;
        }
        self.prev[i as usize] = NIL;
        self.next[i as usize] = NIL;
    }

    fn push_front(&mut self, i: u32) {
        self.prev[i as usize] = NIL;
        self.next[i as usize] = self.head;
        if self.head != NIL {
            self.prev[self.head as usize] = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    fn clear(&mut self) {
        while self.tail != NIL {
            let victim = self.tail;
            self.unlink(victim);
            self.cached[victim as usize] = false;
        }
        self.len = 0;
    }

    /// Returns (hit, evicted_something).
    fn touch(&mut self, i: u32) -> (bool, bool) {
        if self.cached[i as usize] {
            if self.head != i {
                self.unlink(i);
                self.push_front(i);
            }
            return (true, false);
        }
        let mut evicted = false;
        if self.len == self.capacity {
            let victim = self.tail;
            self.unlink(victim);
            self.cached[victim as usize] = false;
            self.len -= 1;
            evicted = true;
        }
        self.cached[i as usize] = true;
        self.push_front(i);
        self.len += 1;
        (false, evicted)
    }
}

/// The simulated disk plus LRU cache, with a LIFO free list.
pub struct PageStore {
    config: CacheConfig,
    pages: Vec<Page>,
    state: Vec<PageState>,
    free: Vec<u32>,
    lru: Lru,
    stats: IoStats,
}

impl PageStore {
    pub fn new(config: CacheConfig) -> Result<Self, StoreError> {
        config.validate()?;
        Ok(PageStore {
            config,
            pages: Vec::new(),
            state: Vec::new(),
            free: Vec::new(),
            lru: Lru::new(config.capacity_pages()),
            stats: IoStats::default(),
        })
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    pub fn block_bytes(&self) -> usize {
        self.config.block_bytes
    }

    pub fn spare_bytes(&self) -> usize {
        spare_bytes_for(self.config.block_bytes)
    }

    /// Takes a page off the free list, or creates a fresh zeroed page.
    /// A recycled page keeps whatever its payload and spare area held.
    pub fn allocate(&mut self) -> PageRef {
        if let Some(i) = self.free.pop() {
            self.state[i as usize] = PageState::Live;
            return PageRef(i);
        }
        let i = self.pages.len() as u32;
        assert!(i != u32::MAX, "page index space exhausted");
        self.pages.push(Page::zeroed(self.config.block_bytes));
        self.state.push(PageState::Live);
        self.lru.grow(self.pages.len());
        PageRef(i)
    }

    pub fn free(&mut self, p: PageRef) -> Result<(), StoreError> {
        self.check(p)?;
        match self.state[p.index()] {
            PageState::Free => Err(StoreError::DoubleFree(p)),
            PageState::Live => {
                self.state[p.index()] = PageState::Free;
                self.free.push(p.0);
                Ok(())
            }
        }
    }

    fn check(&self, p: PageRef) -> Result<(), StoreError> {
        if p.is_null() {
            Err(StoreError::Null)
        } else if p.index() >= self.pages.len() {
            Err(StoreError::OutOfRange(p))
        } else {
            Ok(())
        }
    }

    /// Brings `p` into the cache (counting a disk read on a miss) and
    /// returns it for reading and writing. Free pages may be read too.
    pub fn read(&mut self, p: PageRef) -> Result<&mut Page, StoreError> {
        self.check(p)?;
        let (hit, evicted) = self.lru.touch(p.0);
        if !hit {
            self.stats.reads_from_disk += 1;
            self.stats.per_op_reads += 1;
        }
        if evicted {
            self.stats.write_backs += 1;
        }
        Ok(&mut self.pages[p.index()])
    }

    /// Like [`read`](Self::read) but panics on an invalid reference; used
    /// where the caller's own invariants guarantee validity.
    pub fn page(&mut self, p: PageRef) -> &mut Page {
        match self.read(p) {
            Ok(page) => page,
            Err(e) => panic!("page store contract violated: {e}"),
        }
    }

    /// Off-the-record access: no I/O accounting, no recency update.
    pub fn peek(&self, p: PageRef) -> Result<&Page, StoreError> {
        self.check(p)?;
        Ok(&self.pages[p.index()])
    }

    /// Off-the-record write access, for construction-time initialisation.
    pub fn peek_mut(&mut self, p: PageRef) -> Result<&mut Page, StoreError> {
        self.check(p)?;
        Ok(&mut self.pages[p.index()])
    }

    /// Empties the cache without counting anything, so the next access to
    /// every page misses.
    pub fn drop_cache(&mut self) {
        self.lru.clear();
    }

    /// Ends the current logical operation and returns its counted reads.
    pub fn op_boundary(&mut self) -> u64 {
        let reads = std::mem::take(&mut self.stats.per_op_reads);
        let idx = self.stats.ops;
        self.stats.ops += 1;
        if let Some(series) = self.stats.series.as_mut() {
            series.push((idx, reads));
        }
        reads
    }

    pub fn enable_series(&mut self) {
        if self.stats.series.is_none() {
            self.stats.series = Some(Vec::new());
        }
    }

    pub fn stats(&self) -> &IoStats {
        &self.stats
    }

    pub fn reads_from_disk(&self) -> u64 {
        self.stats.reads_from_disk
    }

    pub fn is_cached(&self, p: PageRef) -> bool {
        !p.is_null() && p.index() < self.pages.len() && self.lru.cached[p.index()]
    }

    pub fn cached_pages(&self) -> usize {
        self.lru.len
    }

    pub fn is_free(&self, p: PageRef) -> bool {
        !p.is_null() && p.index() < self.pages.len() && self.state[p.index()] == PageState::Free
    }

    pub fn free_list_len(&self) -> usize {
        self.free.len()
    }

    pub fn live_count(&self) -> usize {
        self.pages.len() - self.free.len()
    }

    pub fn total_pages(&self) -> usize {
        self.pages.len()
    }

    /// Writes the disk image: magic, block size, page count, then every
    /// page (payload followed by spare area) in index order. The free list
    /// and cache state are not part of the image.
    pub fn save_image(&self, path: &Path) -> Result<(), StoreError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(IMAGE_MAGIC)?;
        w.write_all(&(self.config.block_bytes as u32).to_le_bytes())?;
        w.write_all(&(self.pages.len() as u64).to_le_bytes())?;
        for page in &self.pages {
            w.write_all(&page.bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a disk image; every page comes back live and the cache cold.
    pub fn load_image(path: &Path, cache_bytes: usize) -> Result<Self, StoreError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != IMAGE_MAGIC {
            return Err(StoreError::BadImage("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let block_bytes = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut store = PageStore::new(CacheConfig {
            cache_bytes,
            block_bytes,
        })?;
        for _ in 0..count {
            let mut page = Page::zeroed(block_bytes);
            r.read_exact(&mut page.bytes)
                .map_err(|_| StoreError::BadImage("truncated page data".into()))?;
            store.pages.push(page);
            store.state.push(PageState::Live);
        }
        store.lru.grow(count);
        Ok(store)
    }
}
