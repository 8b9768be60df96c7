//! Workloads, reference oracle, experiment protocol and statistics.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cuckoo::InsertMode;
use crate::multimap::{Multimap, MultimapConfig, MultimapError, MultimapStats};
use crate::multiqueue::Variant;

/// Samples ranks with `P(r) ∝ r^-alpha` over `[1, universe]` and maps each
/// rank to a key through a fixed pseudorandom permutation.
pub struct Zipf {
    cdf: Vec<f64>,
    perm: Vec<u32>,
}

impl Zipf {
    pub fn new(universe: usize, alpha: f64, seed: u64) -> Self {
        assert!(universe > 0, "empty universe");
        let mut cdf = Vec::with_capacity(universe);
        let mut acc = 0.0;
        for r in 1..=universe {
            acc += (r as f64).powf(-alpha);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        let mut perm: Vec<u32> = (0..universe as u32).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5A49_5046));
        Zipf { cdf, perm }
    }

    pub fn universe(&self) -> usize {
        self.cdf.len()
    }

    /// 1-based rank.
    pub fn sample_rank<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) + 1
    }

    pub fn key_of_rank(&self, rank: usize) -> u32 {
        self.perm[rank - 1]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        self.key_of_rank(self.sample_rank(rng))
    }
}

/// In-memory reference multimap with uniform sampling over live pairs.
#[derive(Default)]
pub struct Oracle {
    by_key: HashMap<u32, HashSet<u64>>,
    live: Vec<(u32, u64)>,
    index: HashMap<(u32, u64), usize>,
    next_value: HashMap<u32, u64>,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    /// A value never before used with `key`.
    pub fn fresh_value(&mut self, key: u32) -> u64 {
        let v = self.next_value.entry(key).or_insert(0);
        *v += 1;
        *v
    }

    pub fn insert(&mut self, key: u32, value: u64) -> bool {
        if !self.by_key.entry(key).or_default().insert(value) {
            return false;
        }
        self.index.insert((key, value), self.live.len());
        self.live.push((key, value));
        true
    }

    pub fn remove(&mut self, key: u32, value: u64) -> bool {
        let Some(i) = self.index.remove(&(key, value)) else {
            return false;
        };
        self.live.swap_remove(i);
        if i < self.live.len() {
            self.index.insert(self.live[i], i);
        }
        let set = self.by_key.get_mut(&key).unwrap();
        set.remove(&value);
        if set.is_empty() {
            self.by_key.remove(&key);
        }
        true
    }

    pub fn remove_all(&mut self, key: u32) -> usize {
        let values = self.values(key);
        for &v in &values {
            self.remove(key, v);
        }
        values.len()
    }

    pub fn contains(&self, key: u32, value: u64) -> bool {
        self.index.contains_key(&(key, value))
    }

    pub fn count(&self, key: u32) -> u64 {
        self.by_key.get(&key).map_or(0, |s| s.len() as u64)
    }

    pub fn values(&self, key: u32) -> Vec<u64> {
        let mut v: Vec<u64> = self.by_key.get(&key).map(|s| s.iter().copied().collect()).unwrap_or_default();
        v.sort_unstable();
        v
    }

    /// Uniformly random live pair, or `None` when empty.
    pub fn pick_removal<R: Rng>(&self, rng: &mut R) -> Option<(u32, u64)> {
        if self.live.is_empty() {
            return None;
        }
        Some(self.live[rng.gen_range(0..self.live.len())])
    }

    pub fn live_pairs(&self) -> &[(u32, u64)] {
        &self.live
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub block_bytes: usize,
    pub cache_bytes: usize,
    pub epsilon: f64,
    pub universe: usize,
    pub warmup: u64,
    pub alternating: u64,
    pub seed: u64,
    /// Audit and compare against the oracle every this many operations (0 = never).
    pub audit_every: u64,
    pub load_every: u64,
    /// Operations at the end of the run over which the steady-state load is averaged.
    pub steady_window: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            variant: Variant::Deamortized,
            alpha: 0.99,
            beta: 3.0,
            gamma: 5.0,
            block_bytes: 4096,
            cache_bytes: 512 * 1024,
            epsilon: 0.07,
            universe: 1 << 20,
            warmup: 1 << 20,
            alternating: 8 << 20,
            seed: 1,
            audit_every: 0,
            load_every: 1 << 14,
            steady_window: 1 << 20,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha >= 0.0) {
            return Err("alpha must be non-negative".into());
        }
        if self.universe == 0 || self.universe > u32::MAX as usize {
            return Err("universe must be in [1, 2^32)".into());
        }
        if self.load_every == 0 {
            return Err("load_every must be positive".into());
        }
        Ok(())
    }

    pub fn multimap_config(&self) -> MultimapConfig {
        MultimapConfig {
            variant: self.variant,
            beta: self.beta,
            gamma: self.gamma,
            block_bytes: self.block_bytes,
            cache_bytes: self.cache_bytes,
            epsilon: self.epsilon,
            key_capacity: self.universe,
            // Alternating insert/remove never holds more than warmup + 1 pairs.
            pair_capacity: (self.warmup + 1) as usize,
            cuckoo_mode: InsertMode::RandomWalk,
            max_kicks: 500,
            seed: self.seed,
        }
    }
}

/// Running mean / variance / max of per-operation read counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accum {
    pub n: u64,
    pub sum: u64,
    pub sum_sq: u128,
    pub max: u64,
}

impl Accum {
    pub fn add(&mut self, x: u64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += (x as u128) * (x as u128);
        self.max = self.max.max(x);
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum as f64 / self.n as f64
        }
    }

    /// Population standard deviation.
    pub fn stddev(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sum_sq as f64 / self.n as f64 - m * m).max(0.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: String,
    pub ops: u64,
    pub mean: f64,
    pub stddev: f64,
    pub max: u64,
    pub pct_ops: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSample {
    pub op_index: u64,
    /// Pair bytes over bytes of live S blocks.
    pub load: f64,
    /// Pair bytes over bytes of all live pages (S, T and D).
    pub total_load: f64,
}

/// Reads above this count put an operation in the expensive class.
pub const CHEAP_LIMIT: u64 = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub config: WorkloadConfig,
    pub classes: Vec<ClassStats>,
    pub load_series: Vec<LoadSample>,
    pub final_load: f64,
    pub final_total_load: f64,
    pub steady_load: f64,
    pub steady_total_load: f64,
    pub substituted_inserts: u64,
    pub audits: u64,
    pub live_pairs: u64,
    pub s_blocks: usize,
    pub t_pages: usize,
    pub d_pages: usize,
    pub structure: MultimapStats,
}

impl StatsReport {
    pub fn class(&self, name: &str) -> Option<&ClassStats> {
        self.classes.iter().find(|c| c.class == name)
    }
}

#[derive(Default)]
struct Classes {
    all: Accum,
    insert: Accum,
    remove: Accum,
    cheap: Accum,
    expensive: Accum,
}

impl Classes {
    fn add(&mut self, is_insert: bool, reads: u64) {
        self.all.add(reads);
        if is_insert {
            self.insert.add(reads);
        } else {
            self.remove.add(reads);
        }
        if reads <= CHEAP_LIMIT {
            self.cheap.add(reads);
        } else {
            self.expensive.add(reads);
        }
    }

    fn rows(&self) -> Vec<ClassStats> {
        let total = self.all.n.max(1) as f64;
        [
            ("all", &self.all),
            ("insert", &self.insert),
            ("remove", &self.remove),
            ("le15", &self.cheap),
            ("gt15", &self.expensive),
        ]
        .into_iter()
        .map(|(name, a)| ClassStats {
            class: name.to_string(),
            ops: a.n,
            mean: a.mean(),
            stddev: a.stddev(),
            max: a.max,
            pct_ops: 100.0 * a.n as f64 / total,
        })
        .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("audit failed after operation {op}: {msg}")]
    Audit { op: u64, msg: String },
    #[error("oracle mismatch at operation {op}: {msg}")]
    Mismatch { op: u64, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Multimap(#[from] MultimapError),
}

fn verify_key(mm: &mut Multimap, oracle: &Oracle, key: u32, op: u64) -> Result<(), RunError> {
    let count = mm.count(key);
    if count != oracle.count(key) {
        return Err(RunError::Mismatch {
            op,
            msg: format!("count({key}) = {count}, expected {}", oracle.count(key)),
        });
    }
    let mut got: Vec<u64> = mm.find_all(key).into_iter().map(|(_, v)| v).collect();
    got.sort_unstable();
    if got != oracle.values(key) {
        return Err(RunError::Mismatch {
            op,
            msg: format!("findAll({key}) = {got:?}, expected {:?}", oracle.values(key)),
        });
    }
    Ok(())
}

fn audit(mm: &Multimap, op: u64) -> Result<(), RunError> {
    mm.audit().map(|_| ()).map_err(|msg| RunError::Audit { op, msg })
}

/// Warmup inserts followed by alternating insert / remove, as in the
/// reproduction protocol.
pub fn run_experiment(cfg: &WorkloadConfig) -> Result<StatsReport, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    let mut mm = Multimap::new(cfg.multimap_config())?;
    let zipf = Zipf::new(cfg.universe, cfg.alpha, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut oracle = Oracle::new();
    let mut classes = Classes::default();
    let mut series = Vec::new();
    let mut substituted = 0u64;
    let mut audits = 0u64;
    let total = cfg.warmup + cfg.alternating;
    mm.store_mut().op_boundary();

    for op in 0..total {
        let wants_insert = op < cfg.warmup || (op - cfg.warmup).is_multiple_of(2);
        let removal = if wants_insert { None } else { oracle.pick_removal(&mut rng) };
        let touched = match removal {
            Some((k, v)) => {
                mm.remove(k, v)?;
                oracle.remove(k, v);
                k
            }
            None => {
                if !wants_insert {
                    substituted += 1;
                }
                let k = zipf.sample(&mut rng);
                let v = oracle.fresh_value(k);
                mm.insert(k, v)?;
                oracle.insert(k, v);
                k
            }
        };
        let reads = mm.store_mut().op_boundary();
        classes.add(removal.is_none(), reads);

        if (op + 1) % cfg.load_every == 0 || op + 1 == total {
            series.push(LoadSample {
                op_index: op + 1,
                load: mm.s_load(),
                total_load: mm.total_load(),
            });
        }
        if cfg.audit_every > 0 && (op + 1) % cfg.audit_every == 0 {
            verify_key(&mut mm, &oracle, touched, op)?;
            audit(&mm, op)?;
            audits += 1;
            mm.store_mut().op_boundary();
        }
    }
    if oracle.len() as u64 != mm.len() {
        return Err(RunError::Mismatch {
            op: total,
            msg: format!("{} pairs stored, oracle holds {}", mm.len(), oracle.len()),
        });
    }

    let window_start = total.saturating_sub(cfg.steady_window);
    let steady: Vec<&LoadSample> = series.iter().filter(|s| s.op_index > window_start).collect();
    let avg = |f: fn(&LoadSample) -> f64| {
        if steady.is_empty() {
            0.0
        } else {
            steady.iter().map(|s| f(s)).sum::<f64>() / steady.len() as f64
        }
    };
    Ok(StatsReport {
        config: cfg.clone(),
        classes: classes.rows(),
        final_load: mm.s_load(),
        final_total_load: mm.total_load(),
        steady_load: avg(|s| s.load),
        steady_total_load: avg(|s| s.total_load),
        load_series: series,
        substituted_inserts: substituted,
        audits,
        live_pairs: mm.len(),
        s_blocks: mm.s_blocks(),
        t_pages: mm.t_pages(),
        d_pages: mm.d_pages(),
        structure: mm.stats(),
    })
}

/// Operation kinds of the mixed differential workload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Insert,
    Remove,
    RemoveAbsent,
    IsMember,
    FindAll,
    RemoveAll,
    Count,
    IsSpurious,
}

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::Insert,
        OpKind::Remove,
        OpKind::RemoveAbsent,
        OpKind::IsMember,
        OpKind::FindAll,
        OpKind::RemoveAll,
        OpKind::Count,
        OpKind::IsSpurious,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixedConfig {
    pub variant: Variant,
    pub beta: f64,
    pub gamma: f64,
    pub block_bytes: usize,
    pub cache_bytes: usize,
    pub epsilon: f64,
    pub universe: usize,
    pub alpha: f64,
    pub ops: u64,
    /// Relative weights, in [`OpKind::ALL`] order.
    pub weights: [u32; 8],
    /// Inserts are biased towards this many live pairs.
    pub target_pairs: usize,
    pub seed: u64,
    pub audit_every: u64,
}

impl Default for MixedConfig {
    fn default() -> Self {
        MixedConfig {
            variant: Variant::Deamortized,
            beta: 3.0,
            gamma: 4.0,
            block_bytes: 144,
            cache_bytes: 4 * 144,
            epsilon: 0.07,
            universe: 512,
            alpha: 0.99,
            ops: 100_000,
            weights: [30, 24, 2, 12, 8, 1, 8, 3],
            target_pairs: 600,
            seed: 1,
            audit_every: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MixedReport {
    pub ops: u64,
    pub audits: u64,
    pub per_kind: Vec<(OpKind, Accum)>,
    /// Largest amount by which a findAll exceeded `4 + ceil(gamma * n * 12 / B)`
    /// reads: two for the header, one stale hop, and the chain, where every
    /// chain block but one holds at least `B/gamma` bytes.
    pub find_all_excess_max: i64,
    pub final_pairs: u64,
    pub structure: MultimapStats,
}

impl MixedReport {
    pub fn kind(&self, k: OpKind) -> Accum {
        self.per_kind.iter().find(|(x, _)| *x == k).map(|(_, a)| a.clone()).unwrap_or_default()
    }

    pub fn max_reads(&self) -> u64 {
        self.per_kind.iter().map(|(_, a)| a.max).max().unwrap_or(0)
    }
}

/// Random mix of all ADT operations, each checked against the oracle, with
/// a structural audit every `audit_every` operations.
pub fn run_mixed(cfg: &MixedConfig) -> Result<MixedReport, RunError> {
    let mm_cfg = MultimapConfig {
        variant: cfg.variant,
        beta: cfg.beta,
        gamma: cfg.gamma,
        block_bytes: cfg.block_bytes,
        cache_bytes: cfg.cache_bytes,
        epsilon: cfg.epsilon,
        key_capacity: cfg.universe,
        pair_capacity: 2 * cfg.target_pairs + 64,
        cuckoo_mode: InsertMode::RandomWalk,
        max_kicks: 500,
        seed: cfg.seed,
    };
    let mut mm = Multimap::new(mm_cfg)?;
    let zipf = Zipf::new(cfg.universe, cfg.alpha, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut oracle = Oracle::new();
    let mut per_kind: HashMap<OpKind, Accum> = HashMap::new();
    let mut audits = 0u64;
    let mut excess_max = i64::MIN;
    let weight_total: u32 = cfg.weights.iter().sum();
    mm.store_mut().op_boundary();

    for op in 0..cfg.ops {
        let mut pick = rng.gen_range(0..weight_total);
        let mut kind = OpKind::Insert;
        for (k, &w) in OpKind::ALL.iter().zip(cfg.weights.iter()) {
            if pick < w {
                kind = *k;
                break;
            }
            pick -= w;
        }
        if kind == OpKind::Insert && oracle.len() >= 2 * cfg.target_pairs {
            kind = OpKind::Remove;
        }
        if kind == OpKind::Remove && oracle.is_empty() {
            kind = OpKind::Insert;
        }
        let mismatch = |msg: String| RunError::Mismatch { op, msg };
        let touched = match kind {
            OpKind::Insert => {
                let k = zipf.sample(&mut rng);
                let v = oracle.fresh_value(k);
                mm.insert(k, v)?;
                oracle.insert(k, v);
                k
            }
            OpKind::Remove => {
                let (k, v) = oracle.pick_removal(&mut rng).unwrap();
                mm.remove(k, v)?;
                oracle.remove(k, v);
                k
            }
            OpKind::RemoveAbsent => {
                let k = zipf.sample(&mut rng);
                let v = rng.gen_range(1..=oracle.next_value.get(&k).copied().unwrap_or(0) + 1);
                let expect = oracle.contains(k, v);
                let got = mm.remove(k, v);
                match (expect, got) {
                    (true, Ok(())) => {
                        oracle.remove(k, v);
                    }
                    (false, Err(MultimapError::NotFound(..))) => {}
                    (e, g) => return Err(mismatch(format!("remove({k},{v}) = {g:?}, live {e}"))),
                }
                k
            }
            OpKind::IsMember | OpKind::IsSpurious => {
                let (k, v) = if rng.gen_bool(0.5) && !oracle.is_empty() {
                    oracle.pick_removal(&mut rng).unwrap()
                } else {
                    let k = zipf.sample(&mut rng);
                    (k, rng.gen_range(1..=oracle.next_value.get(&k).copied().unwrap_or(0) + 1))
                };
                if kind == OpKind::IsMember {
                    let got = mm.is_member(k, v);
                    if got != oracle.contains(k, v) {
                        return Err(mismatch(format!("isMember({k},{v}) = {got}")));
                    }
                } else if mm.is_spurious(k, v) && oracle.contains(k, v) {
                    return Err(mismatch(format!("live pair ({k},{v}) reported spurious")));
                }
                k
            }
            OpKind::FindAll => {
                let k = zipf.sample(&mut rng);
                let mut got: Vec<u64> = mm.find_all(k).into_iter().map(|(_, v)| v).collect();
                got.sort_unstable();
                if got != oracle.values(k) {
                    return Err(mismatch(format!("findAll({k}) = {got:?}, expected {:?}", oracle.values(k))));
                }
                k
            }
            OpKind::RemoveAll => {
                let k = zipf.sample(&mut rng);
                mm.remove_all(k);
                oracle.remove_all(k);
                k
            }
            OpKind::Count => {
                let k = zipf.sample(&mut rng);
                let got = mm.count(k);
                if got != oracle.count(k) {
                    return Err(mismatch(format!("count({k}) = {got}, expected {}", oracle.count(k))));
                }
                k
            }
        };
        let reads = mm.store_mut().op_boundary();
        per_kind.entry(kind).or_default().add(reads);
        if kind == OpKind::FindAll {
            let bytes = oracle.count(touched) as f64 * crate::multiqueue::ELEM_BYTES as f64;
            let bound = 4 + (cfg.gamma * bytes / cfg.block_bytes as f64).ceil() as i64;
            excess_max = excess_max.max(reads as i64 - bound);
        }
        if cfg.audit_every > 0 && (op + 1) % cfg.audit_every == 0 {
            verify_key(&mut mm, &oracle, touched, op)?;
            audit(&mm, op)?;
            audits += 1;
            mm.store_mut().op_boundary();
        }
    }
    for &(k, v) in oracle.live_pairs() {
        if !mm.is_member(k, v) {
            return Err(RunError::Mismatch {
                op: cfg.ops,
                msg: format!("live pair ({k},{v}) missing at the end"),
            });
        }
    }
    mm.store_mut().op_boundary();
    let mut per_kind: Vec<(OpKind, Accum)> = per_kind.into_iter().collect();
    per_kind.sort_by_key(|(k, _)| *k);
    Ok(MixedReport {
        ops: cfg.ops,
        audits,
        per_kind,
        find_all_excess_max: excess_max,
        final_pairs: mm.len(),
        structure: mm.stats(),
    })
}

#[derive(Debug, thiserror::Error)]
#[error("unknown export format `{0}` (expected csv or json)")]
pub struct FormatError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = FormatError;
    fn from_str(s: &str) -> Result<Self, FormatError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(FormatError(other.to_string())),
        }
    }
}

/// `class,mean,stddev,max,pct_ops` rows.
pub fn classes_csv(classes: &[ClassStats]) -> String {
    let mut out = String::from("class,mean,stddev,max,pct_ops\n");
    for c in classes {
        out.push_str(&format!("{},{:.4},{:.4},{},{:.4}\n", c.class, c.mean, c.stddev, c.max, c.pct_ops));
    }
    out
}

/// `op_index,load` rows.
pub fn load_csv(series: &[LoadSample]) -> String {
    let mut out = String::from("op_index,load\n");
    for s in series {
        out.push_str(&format!("{},{:.6}\n", s.op_index, s.load));
    }
    out
}

pub fn export(report: &StatsReport, format: Format) -> String {
    match format {
        Format::Csv => classes_csv(&report.classes),
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes"),
    }
}
