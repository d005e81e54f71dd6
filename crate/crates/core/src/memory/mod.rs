//! Capacity-bounded key-value memory.
//!
//! Each entry is one stored frame's feature grid. Reads match every query
//! site against every stored key site, keep the `top_k` most similar
//! sites across the whole store, and return the softmax-weighted sum of
//! their values. The attention mass an entry receives accumulates into its
//! usage, and when the store overflows the least-used evictable entry is
//! dropped (oldest first on ties). The first entry ever written is
//! permanent.

pub mod knn;

use crate::encoder::FeatureGrid;
use crate::error::{Error, Result};

use knn::{KdTree, TopK};

pub const DEFAULT_CAPACITY: usize = 64;
pub const DEFAULT_WRITE_CADENCE: usize = 5;
pub const DEFAULT_TOP_K: usize = 8;
const WARM_START_ENTRIES: usize = 2;

#[derive(Debug, Clone)]
pub struct MemoryEntry {
    pub features: FeatureGrid,
    usage: f64,
    pub frame_index: usize,
    pub write_order: u64,
}

impl MemoryEntry {
    /// Accumulated matching score; `+inf` for the permanent entry.
    pub fn usage(&self) -> f64 {
        self.usage
    }

    pub fn is_permanent(&self) -> bool {
        self.usage == f64::INFINITY
    }
}

/// Result of one read.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub width: usize,
    pub height: usize,
    pub value_dim: usize,
    /// Site-major readout values, `values[site * value_dim + channel]`.
    pub values: Vec<f64>,
    /// Attention mass received by each entry, in store order; sums to the
    /// number of query sites.
    pub entry_mass: Vec<f64>,
}

impl Readout {
    pub fn value(&self, site: usize) -> &[f64] {
        &self.values[site * self.value_dim..(site + 1) * self.value_dim]
    }
}

/// What happened on a write.
#[derive(Debug, Clone)]
pub struct WriteOutcome {
    /// False only when the store cannot make room (capacity 1 with the
    /// permanent entry present); the incoming entry is then discarded.
    pub stored: bool,
    pub evicted: Option<MemoryEntry>,
}

/// Neighbour id of `site` in the entry with `write_order`. Entries are kept
/// in write order, so ids sort exactly like positions in the concatenation
/// of all entries' sites.
#[inline]
fn site_id(write_order: u64, site: usize) -> u64 {
    (write_order << 32) | site as u64
}

#[inline]
fn split_id(id: u64) -> (u64, usize) {
    (id >> 32, (id & 0xffff_ffff) as usize)
}

/// Writes since the last full rebuild that get their own small tree.
const MAX_RECENT_TREES: usize = 8;
/// Evictions tolerated inside the main tree before it is rebuilt.
const MAX_MASKED: usize = 8;

/// Search trees over the stored key sites: a main tree rebuilt now and
/// then, plus one small tree per entry written since. Entries evicted after
/// the last rebuild stay in the main tree and are masked out of searches.
#[derive(Debug, Clone)]
struct SiteIndex {
    main: KdTree,
    recent: Vec<(u64, KdTree)>,
    masked: Vec<u64>,
}

impl SiteIndex {
    fn build(entries: &[MemoryEntry]) -> Self {
        let key_dim = entries[0].features.key_dim;
        let total: usize = entries.iter().map(|e| e.features.sites()).sum();
        let mut keys = Vec::with_capacity(total * key_dim);
        let mut ids = Vec::with_capacity(total);
        for e in entries {
            keys.extend_from_slice(&e.features.keys);
            ids.extend((0..e.features.sites()).map(|s| site_id(e.write_order, s)));
        }
        Self {
            main: KdTree::with_ids(&keys, key_dim, ids),
            recent: Vec::new(),
            masked: Vec::new(),
        }
    }

    fn entry_tree(e: &MemoryEntry) -> KdTree {
        let ids = (0..e.features.sites()).map(|s| site_id(e.write_order, s)).collect();
        KdTree::with_ids(&e.features.keys, e.features.key_dim, ids)
    }

    fn added(&mut self, e: &MemoryEntry) {
        self.recent.push((e.write_order, Self::entry_tree(e)));
    }

    fn removed(&mut self, write_order: u64) {
        if let Some(pos) = self.recent.iter().position(|(w, _)| *w == write_order) {
            self.recent.remove(pos);
        } else {
            self.masked.push(write_order);
        }
    }

    fn is_stale(&self) -> bool {
        self.recent.len() > MAX_RECENT_TREES || self.masked.len() > MAX_MASKED
    }

    fn search(&self, query: &[f64], out: &mut TopK) {
        if self.masked.is_empty() {
            self.main.search(query, out);
        } else {
            self.main
                .search_where(query, out, |id| !self.masked.contains(&split_id(id).0));
        }
        for (_, tree) in &self.recent {
            tree.search(query, out);
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
    capacity: usize,
    write_cadence: usize,
    read_count: u64,
    next_order: u64,
    index: Option<SiteIndex>,
}

impl MemoryStore {
    pub fn new(capacity: usize, write_cadence: usize) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::Config("memory capacity must be >= 1".into()));
        }
        if write_cadence < 1 {
            return Err(Error::Config("write cadence k must be >= 1".into()));
        }
        Ok(Self {
            entries: Vec::new(),
            capacity,
            write_cadence,
            read_count: 0,
            next_order: 0,
            index: None,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn write_cadence(&self) -> usize {
        self.write_cadence
    }

    pub fn read_count(&self) -> u64 {
        self.read_count
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Whether `frame_index` falls on the write cadence.
    pub fn is_write_frame(&self, frame_index: usize) -> bool {
        frame_index.is_multiple_of(self.write_cadence)
    }

    /// Total stored key sites across entries.
    pub fn total_sites(&self) -> usize {
        self.entries.iter().map(|e| e.features.sites()).sum()
    }

    /// Append an entry, evicting once if the store overflows.
    ///
    /// The very first write is permanent and may carry any frame index;
    /// later writes must fall on the cadence. The incoming entry is never
    /// the eviction victim unless nothing else is evictable.
    pub fn write(&mut self, features: FeatureGrid, frame_index: usize) -> Result<WriteOutcome> {
        features.validate()?;
        if features.sites() > u32::MAX as usize {
            return Err(Error::Validation(format!("feature grid has {} sites", features.sites())));
        }
        let first = self.next_order == 0;
        if !first && !self.is_write_frame(frame_index) {
            return Err(Error::Validation(format!(
                "frame {frame_index} is off the write cadence k={}",
                self.write_cadence
            )));
        }
        if let Some(e) = self.entries.first() {
            let f = &e.features;
            if f.key_dim != features.key_dim || f.value_dim != features.value_dim {
                return Err(Error::Validation(format!(
                    "feature dims ({}, {}) differ from stored ({}, {})",
                    features.key_dim, features.value_dim, f.key_dim, f.value_dim
                )));
            }
        }
        let write_order = self.next_order;
        self.next_order += 1;
        self.entries.push(MemoryEntry {
            features,
            usage: if first { f64::INFINITY } else { 0.0 },
            frame_index,
            write_order,
        });
        let mut outcome = WriteOutcome {
            stored: true,
            evicted: None,
        };
        if self.entries.len() > self.capacity {
            match self.evict_where(|e| e.write_order != write_order) {
                Ok(victim) => outcome.evicted = Some(victim),
                Err(Error::CannotEvict) => {
                    self.entries.pop();
                    outcome.stored = false;
                }
                Err(e) => return Err(e),
            }
        }
        if outcome.stored {
            if let Some(index) = &mut self.index {
                index.added(self.entries.last().expect("just stored"));
            }
        }
        Ok(outcome)
    }

    /// Remove the lowest-usage non-permanent entry (oldest on ties).
    pub fn evict_lowest(&mut self) -> Result<MemoryEntry> {
        self.evict_where(|_| true)
    }

    fn evict_where(&mut self, eligible: impl Fn(&MemoryEntry) -> bool) -> Result<MemoryEntry> {
        let victim = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_permanent() && eligible(e))
            .min_by(|(_, a), (_, b)| {
                a.usage
                    .total_cmp(&b.usage)
                    .then(a.write_order.cmp(&b.write_order))
            })
            .map(|(i, _)| i)
            .ok_or(Error::CannotEvict)?;
        let victim = self.entries.remove(victim);
        if let Some(index) = &mut self.index {
            index.removed(victim.write_order);
        }
        Ok(victim)
    }

    /// Attention readout for every site of `query`.
    pub fn read(&mut self, query: &FeatureGrid, top_k: usize, temperature: f64) -> Result<Readout> {
        if self.entries.is_empty() {
            return Err(Error::ReadBeforeWrite);
        }
        if top_k < 1 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Config(format!("temperature {temperature} must be > 0")));
        }
        let key_dim = self.entries[0].features.key_dim;
        let value_dim = self.entries[0].features.value_dim;
        if query.key_dim != key_dim {
            return Err(Error::Validation(format!(
                "query key_dim {} differs from stored {key_dim}",
                query.key_dim
            )));
        }
        if !query.keys.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("query keys contain non-finite values".into()));
        }
        if self.index.as_ref().is_none_or(SiteIndex::is_stale) {
            self.index = Some(SiteIndex::build(&self.entries));
        }
        let index = self.index.as_ref().expect("index built above");
        let total = self.total_sites();
        let sites = query.sites();
        let dense = top_k >= total;
        let k = top_k.min(total);
        let entries = &self.entries;
        let n_entries = entries.len();
        let warm = if entries.iter().all(|e| e.features.sites() == sites) {
            n_entries.saturating_sub(WARM_START_ENTRIES)..n_entries
        } else {
            0..0
        };

        let mut values = vec![0.0; sites * value_dim];
        let mut entry_mass = vec![0.0; n_entries];
        let mut picked = TopK::new(k);
        // (dist2, entry position, site) in ascending (dist2, id) order
        let mut neighbors: Vec<(f64, usize, usize)> = Vec::with_capacity(if dense { total } else { k });
        let mut weights = Vec::with_capacity(neighbors.capacity());

        for q in 0..sites {
            let qk = query.key(q);
            neighbors.clear();
            if dense {
                for (pos, e) in entries.iter().enumerate() {
                    for site in 0..e.features.sites() {
                        neighbors.push((knn::squared_distance(qk, e.features.key(site)), pos, site));
                    }
                }
            } else {
                picked.clear();
                // same-site candidates from recent entries tighten the
                // pruning bound before the tree descent
                for e in &entries[warm.clone()] {
                    let d2 = knn::squared_distance(qk, e.features.key(q));
                    picked.offer(d2, site_id(e.write_order, q));
                }
                index.search(qk, &mut picked);
                for n in picked.as_slice() {
                    let (order, site) = split_id(n.id);
                    let pos = entries
                        .binary_search_by_key(&order, |e| e.write_order)
                        .expect("index holds only live entries");
                    neighbors.push((n.dist2, pos, site));
                }
            }
            let min_d2 = neighbors.iter().map(|n| n.0).fold(f64::INFINITY, f64::min);
            weights.clear();
            weights.extend(neighbors.iter().map(|&(d2, _, _)| (-(d2 - min_d2) / temperature).exp()));
            let z: f64 = weights.iter().sum();
            let out = &mut values[q * value_dim..(q + 1) * value_dim];
            for (&(_, pos, site), &e) in neighbors.iter().zip(&weights) {
                let w = e / z;
                for (o, &vi) in out.iter_mut().zip(entries[pos].features.value(site)) {
                    *o += w * vi;
                }
                entry_mass[pos] += w;
            }
        }

        let norm = sites as f64;
        for (e, &m) in self.entries.iter_mut().zip(&entry_mass) {
            e.usage += m / norm;
        }
        self.read_count += 1;
        Ok(Readout {
            width: query.width,
            height: query.height,
            value_dim,
            values,
            entry_mass,
        })
    }
}
