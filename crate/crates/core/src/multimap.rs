//! External-memory multimap: a cuckoo table T of queue headers, a
//! multiqueue S holding the pairs, and a cuckoo dictionary D from each pair
//! to its block.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::cuckoo::{CuckooConfig, CuckooError, CuckooStats, CuckooTable, InsertMode};
use crate::multiqueue::{
    locate, AuditReport, Header, MqStats, MultiQueue, Pair, Storage, Thresholds, Variant,
    DICT_PAYLOAD_BYTES, ELEM_BYTES, HEADER_PAYLOAD_BYTES, KEY_BYTES,
};
use crate::pagestore::{CacheConfig, PageRef, PageStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum MultimapError {
    #[error("pair ({0}, {1}) is already present")]
    Duplicate(u32, u64),
    #[error("pair ({0}, {1}) is not present")]
    NotFound(u32, u64),
    #[error(transparent)]
    Table(#[from] CuckooError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultimapConfig {
    pub variant: Variant,
    pub beta: f64,
    pub gamma: f64,
    pub block_bytes: usize,
    pub cache_bytes: usize,
    pub epsilon: f64,
    /// Distinct keys T must hold.
    pub key_capacity: usize,
    /// Pairs (plus spurious entries) D must hold.
    pub pair_capacity: usize,
    pub cuckoo_mode: InsertMode,
    pub max_kicks: usize,
    pub seed: u64,
}

impl Default for MultimapConfig {
    fn default() -> Self {
        MultimapConfig {
            variant: Variant::Deamortized,
            beta: 3.0,
            gamma: 5.0,
            block_bytes: crate::pagestore::DEFAULT_BLOCK_BYTES,
            cache_bytes: crate::pagestore::DEFAULT_CACHE_BYTES,
            epsilon: 0.07,
            key_capacity: 1 << 20,
            pair_capacity: (1 << 20) + 1,
            cuckoo_mode: InsertMode::RandomWalk,
            max_kicks: 500,
            seed: 0x5EED,
        }
    }
}

/// Aggregate counters for reporting.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultimapStats {
    pub multiqueue: MqStats,
    pub headers: CuckooStats,
    pub dictionary: CuckooStats,
    pub spurious_evictions: u64,
}

pub struct Multimap {
    st: Storage,
    mq: MultiQueue,
    cfg: MultimapConfig,
    spurious_evictions: u64,
}

impl Multimap {
    pub fn new(cfg: MultimapConfig) -> Result<Self, MultimapError> {
        let mut store = PageStore::new(CacheConfig {
            cache_bytes: cfg.cache_bytes,
            block_bytes: cfg.block_bytes,
        })?;
        let mut tcfg = CuckooConfig::for_items(
            KEY_BYTES,
            HEADER_PAYLOAD_BYTES,
            cfg.block_bytes,
            cfg.key_capacity,
            cfg.epsilon,
            cfg.seed ^ 0x7454_4142,
        );
        let mut dcfg = CuckooConfig::for_items(
            ELEM_BYTES,
            DICT_PAYLOAD_BYTES,
            cfg.block_bytes,
            cfg.pair_capacity,
            cfg.epsilon,
            cfg.seed ^ 0x4449_4354,
        );
        for c in [&mut tcfg, &mut dcfg] {
            c.mode = cfg.cuckoo_mode;
            c.max_kicks = cfg.max_kicks;
            if cfg.cuckoo_mode == InsertMode::PartitionedBfs {
                c.subtable_count =
                    CuckooConfig::theorem_subtable_count(c.bucket_capacity(cfg.block_bytes), cfg.epsilon);
            }
        }
        let t = CuckooTable::new(&mut store, tcfg)?;
        let d = CuckooTable::new(&mut store, dcfg)?;
        let mq = MultiQueue::new(
            cfg.variant,
            Thresholds {
                beta: cfg.beta,
                gamma: cfg.gamma,
            },
            cfg.block_bytes,
        )
        .map_err(MultimapError::Config)?;
        Ok(Multimap {
            st: Storage { store, t, d },
            mq,
            cfg,
            spurious_evictions: 0,
        })
    }

    pub fn config(&self) -> &MultimapConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn store(&self) -> &PageStore {
        &self.st.store
    }

    pub fn store_mut(&mut self) -> &mut PageStore {
        &mut self.st.store
    }

    /// Number of live pairs.
    pub fn len(&self) -> u64 {
        self.mq.elements()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, key: u32, value: u64) -> Result<(), MultimapError> {
        let pair = Pair::new(key, value);
        if self.mq.spurious() == 0 {
            // Without spurious entries the algorithm needs no D lookup here;
            // uniqueness is the caller's precondition, enforced off the record.
            if self.st.d.peek_get(&self.st.store, &pair.encode()).is_some() {
                return Err(MultimapError::Duplicate(key, value));
            }
        } else if let Some((_, named)) = self.st.dict_get(pair) {
            let spurious = self.cfg.variant == Variant::Deamortized
                && locate(&mut self.st.store, named, pair).is_none();
            if !spurious {
                return Err(MultimapError::Duplicate(key, value));
            }
            self.st.d.remove(&mut self.st.store, &pair.encode());
            self.mq.forget_spurious(1);
        }
        let (slot, mut h) = match self.st.header(key) {
            Some(found) => found,
            None => {
                self.st
                    .t
                    .insert(&mut self.st.store, &key.to_le_bytes(), &Header::EMPTY.encode(), None)?;
                self.st.header(key).expect("header just inserted")
            }
        };
        h.count += 1;
        self.st.put_header(slot, h);
        let block = self.mq.enqueue(&mut self.st, pair);
        self.dict_insert(pair, block)?;
        self.mq.after_enqueue(&mut self.st, pair, block);
        Ok(())
    }

    fn dict_insert(&mut self, pair: Pair, block: PageRef) -> Result<(), MultimapError> {
        let key = pair.encode();
        let payload = block.raw().to_le_bytes();
        if self.mq.spurious() == 0 {
            self.st.d.insert(&mut self.st.store, &key, &payload, None)?;
            return Ok(());
        }
        let evicted = Cell::new(0u64);
        let mut spurious = |store: &mut PageStore, k: &[u8], p: &[u8]| {
            let named = PageRef::from_raw(u32::from_le_bytes(p[..4].try_into().unwrap()));
            let is = locate(store, named, Pair::decode(k)).is_none();
            if is {
                evicted.set(evicted.get() + 1);
            }
            is
        };
        let res = self.st.d.insert(&mut self.st.store, &key, &payload, Some(&mut spurious));
        self.mq.forget_spurious(evicted.get());
        self.spurious_evictions += evicted.get();
        res?;
        Ok(())
    }

    pub fn is_member(&mut self, key: u32, value: u64) -> bool {
        let pair = Pair::new(key, value);
        match self.st.dict_get(pair) {
            Some((_, named)) => locate(&mut self.st.store, named, pair).is_some(),
            None => false,
        }
    }

    /// True iff D holds an entry for the pair but the pair is stored in
    /// neither the named block nor its forward.
    pub fn is_spurious(&mut self, key: u32, value: u64) -> bool {
        let pair = Pair::new(key, value);
        match self.st.dict_get(pair) {
            Some((_, named)) => locate(&mut self.st.store, named, pair).is_none(),
            None => false,
        }
    }

    pub fn remove(&mut self, key: u32, value: u64) -> Result<(), MultimapError> {
        let pair = Pair::new(key, value);
        let Some((_, named)) = self.st.dict_get(pair) else {
            return Err(MultimapError::NotFound(key, value));
        };
        if self.mq.remove(&mut self.st, pair, named) {
            Ok(())
        } else {
            Err(MultimapError::NotFound(key, value))
        }
    }

    pub fn find_all(&mut self, key: u32) -> Vec<(u32, u64)> {
        let Some((_, h)) = self.st.header(key) else {
            return Vec::new();
        };
        self.mq
            .find_all(&mut self.st, key, h.head)
            .into_iter()
            .map(|p| (p.key, p.value))
            .collect()
    }

    pub fn remove_all(&mut self, key: u32) {
        if self.st.header(key).is_none() {
            return;
        }
        self.mq.remove_queue(&mut self.st, key);
        if self.cfg.variant == Variant::Basic {
            self.st.t.remove(&mut self.st.store, &key.to_le_bytes());
        }
    }

    pub fn count(&mut self, key: u32) -> u64 {
        self.st.header(key).map_or(0, |(_, h)| h.count as u64)
    }

    /// Full structural audit, off the record.
    pub fn audit(&self) -> Result<AuditReport, String> {
        self.st.t.audit(&self.st.store).map_err(|e| format!("T: {e}"))?;
        self.st.d.audit(&self.st.store).map_err(|e| format!("D: {e}"))?;
        self.mq.audit(&self.st)
    }

    pub fn stats(&self) -> MultimapStats {
        MultimapStats {
            multiqueue: self.mq.stats().clone(),
            headers: self.st.t.stats().clone(),
            dictionary: self.st.d.stats().clone(),
            spurious_evictions: self.spurious_evictions,
        }
    }

    pub fn spurious_entries(&self) -> u64 {
        self.mq.spurious()
    }

    pub fn s_blocks(&self) -> usize {
        self.mq.live_blocks()
    }

    pub fn t_pages(&self) -> usize {
        self.st.t.page_count()
    }

    pub fn d_pages(&self) -> usize {
        self.st.d.page_count()
    }

    /// Minimum bytes for the live pairs divided by bytes in live S blocks.
    pub fn s_load(&self) -> f64 {
        let used = self.mq.live_blocks() * self.cfg.block_bytes;
        if used == 0 {
            return 0.0;
        }
        (self.len() as usize * ELEM_BYTES) as f64 / used as f64
    }

    /// Minimum bytes for the live pairs divided by bytes in every page not on
    /// the free list (S, T and D together).
    pub fn total_load(&self) -> f64 {
        let used = self.st.store.live_count() * self.cfg.block_bytes;
        if used == 0 {
            return 0.0;
        }
        (self.len() as usize * ELEM_BYTES) as f64 / used as f64
    }
}
