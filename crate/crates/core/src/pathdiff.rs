//! Path difference score: a dynamic-time-warping alignment of two AS paths
//! where the cost of pairing two ASes is their routing-role difference.
//!
//! Every AS of either path is paired at least once, the first ASes are
//! paired together, the last ASes are paired together, and pairings never
//! cross. The score is the minimum total difference over such alignments.

use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asgraph::Asn;
use crate::embedding::EmbeddingModel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("empty AS path")]
    EmptyPath,
    #[error("AS path contains an AS_SET segment")]
    ContainsAsSet,
}

/// One hop of a path as received: a plain ASN or an unordered AS_SET.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawHop {
    Asn(Asn),
    Set(Vec<Asn>),
}

impl From<u32> for RawHop {
    fn from(v: u32) -> Self {
        RawHop::Asn(Asn(v))
    }
}

/// Non-empty AS path, vantage point first, origin last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Asn>", into = "Vec<Asn>")]
pub struct AsPath(Vec<Asn>);

impl TryFrom<Vec<Asn>> for AsPath {
    type Error = PathError;

    fn try_from(v: Vec<Asn>) -> Result<Self, PathError> {
        AsPath::new(v)
    }
}

impl From<AsPath> for Vec<Asn> {
    fn from(p: AsPath) -> Self {
        p.0
    }
}

impl AsPath {
    pub fn new(asns: Vec<Asn>) -> Result<Self, PathError> {
        if asns.is_empty() {
            Err(PathError::EmptyPath)
        } else {
            Ok(AsPath(asns))
        }
    }

    pub fn from_u32s(asns: &[u32]) -> Result<Self, PathError> {
        AsPath::new(asns.iter().map(|&a| Asn(a)).collect())
    }

    pub fn asns(&self) -> &[Asn] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn origin(&self) -> Asn {
        *self.0.last().expect("non-empty")
    }

    pub fn first(&self) -> Asn {
        self.0[0]
    }

    pub fn has_duplicates(&self) -> bool {
        let mut seen: Vec<Asn> = self.0.clone();
        seen.sort_unstable();
        seen.windows(2).any(|w| w[0] == w[1])
    }
}

impl fmt::Display for AsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Validates a received path, optionally collapsing prepending runs.
pub fn preprocess_path(raw: &[RawHop], collapse_prepend: bool) -> Result<AsPath, PathError> {
    let mut out: Vec<Asn> = Vec::with_capacity(raw.len());
    for hop in raw {
        match hop {
            RawHop::Set(_) => return Err(PathError::ContainsAsSet),
            RawHop::Asn(a) => {
                if collapse_prepend && out.last() == Some(a) {
                    continue;
                }
                out.push(*a);
            }
        }
    }
    AsPath::new(out)
}

/// Source of pairwise AS differences.
pub trait PairDistance {
    fn distance(&self, u: Asn, v: Asn) -> f64;
}

impl<F: Fn(Asn, Asn) -> f64> PairDistance for F {
    fn distance(&self, u: Asn, v: Asn) -> f64 {
        self(u, v)
    }
}

/// Model-backed difference; pairs with an AS the model has never seen cost
/// `unknown_penalty` (zero when both sides are the same AS).
pub struct ModelDistance<'m> {
    pub model: &'m EmbeddingModel,
    pub unknown_penalty: f64,
}

impl PairDistance for ModelDistance<'_> {
    fn distance(&self, u: Asn, v: Asn) -> f64 {
        if u == v {
            return 0.0;
        }
        match (self.model.index_of(u), self.model.index_of(v)) {
            (Some(a), Some(b)) => self.model.pair_difference_idx(a, b),
            _ => self.unknown_penalty,
        }
    }
}

/// Full DP table; row and column 0 are the +∞ border with `[0][0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

impl DiffMatrix {
    pub fn compute(dist: &impl PairDistance, s: &AsPath, t: &AsPath) -> DiffMatrix {
        let (m, n) = (s.len(), t.len());
        let cols = n + 1;
        let mut cells = vec![f64::INFINITY; (m + 1) * cols];
        cells[0] = 0.0;
        for i in 1..=m {
            for j in 1..=n {
                let diff = dist.distance(s.0[i - 1], t.0[j - 1]);
                let best = cells[(i - 1) * cols + j]
                    .min(cells[i * cols + j - 1])
                    .min(cells[(i - 1) * cols + j - 1]);
                cells[i * cols + j] = diff + best;
            }
        }
        DiffMatrix {
            rows: m + 1,
            cols,
            cells,
        }
    }

    /// `(m + 1, n + 1)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.cols + j]
    }

    pub fn score(&self) -> f64 {
        self.get(self.rows - 1, self.cols - 1)
    }

    /// Optimal alignment as 1-based `(i, j)` matrix cells from `(1, 1)` to
    /// `(m, n)`. Ties prefer the diagonal predecessor, then left, then up.
    pub fn alignment(&self) -> Vec<(usize, usize)> {
        let (mut i, mut j) = (self.rows - 1, self.cols - 1);
        let mut cells = vec![(i, j)];
        while (i, j) != (1, 1) {
            let diag = self.get(i - 1, j - 1);
            let left = self.get(i, j - 1);
            let up = self.get(i - 1, j);
            if diag <= left && diag <= up {
                i -= 1;
                j -= 1;
            } else if left <= up {
                j -= 1;
            } else {
                i -= 1;
            }
            cells.push((i, j));
        }
        cells.reverse();
        cells
    }

    /// Whitespace-separated rows, `inf` for the unreachable border.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| {
                    let v = self.get(i, j);
                    if v.is_infinite() { "inf".to_string() } else { format!("{v:.6}") }
                })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Minimum-cost alignment score, computed with two rolling rows.
pub fn path_diff_score(dist: &impl PairDistance, s: &AsPath, t: &AsPath) -> f64 {
    let n = t.len();
    let mut prev = vec![f64::INFINITY; n + 1];
    let mut cur = vec![f64::INFINITY; n + 1];
    prev[0] = 0.0;
    for &a in &s.0 {
        cur[0] = f64::INFINITY;
        for j in 1..=n {
            let diff = dist.distance(a, t.0[j - 1]);
            cur[j] = diff + prev[j].min(cur[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub pair_hits: u64,
    pub pair_misses: u64,
    pub path_hits: u64,
    pub path_misses: u64,
}

impl CacheStats {
    pub fn pair_hit_ratio(&self) -> f64 {
        ratio(self.pair_hits, self.pair_misses)
    }

    pub fn path_hit_ratio(&self) -> f64 {
        ratio(self.path_hits, self.path_misses)
    }
}

fn ratio(h: u64, m: u64) -> f64 {
    if h + m == 0 {
        0.0
    } else {
        h as f64 / (h + m) as f64
    }
}

fn pair_key(u: Asn, v: Asn) -> u64 {
    let (a, b) = if u <= v { (u, v) } else { (v, u) };
    ((a.0 as u64) << 32) | b.0 as u64
}

/// Scores keyed on the canonically smaller path, then the larger one.
type PathCache = FxHashMap<Box<[Asn]>, FxHashMap<Box<[Asn]>, f64>>;

/// Scoring engine shared by the detector: model-backed differences with a
/// pairwise cache (keyed on the unordered AS pair) and a path-pair cache.
///
/// Pairs and paths touching an AS unknown to the model are never cached, so
/// changing the unknown-AS penalty never leaves stale entries behind.
pub struct PathScorer {
    model: Arc<EmbeddingModel>,
    unknown_penalty: AtomicU64,
    pairs: RwLock<FxHashMap<u64, f64>>,
    paths: RwLock<PathCache>,
    pair_hits: AtomicU64,
    pair_misses: AtomicU64,
    path_hits: AtomicU64,
    path_misses: AtomicU64,
}

impl PathScorer {
    pub fn new(model: Arc<EmbeddingModel>, unknown_penalty: f64) -> Self {
        PathScorer {
            model,
            unknown_penalty: AtomicU64::new(unknown_penalty.to_bits()),
            pairs: RwLock::new(FxHashMap::default()),
            paths: RwLock::new(PathCache::default()),
            pair_hits: AtomicU64::new(0),
            pair_misses: AtomicU64::new(0),
            path_hits: AtomicU64::new(0),
            path_misses: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &Arc<EmbeddingModel> {
        &self.model
    }

    pub fn unknown_penalty(&self) -> f64 {
        f64::from_bits(self.unknown_penalty.load(Ordering::Relaxed))
    }

    pub fn set_unknown_penalty(&self, v: f64) {
        self.unknown_penalty.store(v.to_bits(), Ordering::Relaxed);
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            pair_hits: self.pair_hits.load(Ordering::Relaxed),
            pair_misses: self.pair_misses.load(Ordering::Relaxed),
            path_hits: self.path_hits.load(Ordering::Relaxed),
            path_misses: self.path_misses.load(Ordering::Relaxed),
        }
    }

    pub fn pair_cache_len(&self) -> usize {
        self.pairs.read().expect("pair cache poisoned").len()
    }

    /// Pair difference through the cache.
    pub fn cached_pair_diff(&self, u: Asn, v: Asn) -> f64 {
        if u == v {
            return 0.0;
        }
        let (Some(a), Some(b)) = (self.model.index_of(u), self.model.index_of(v)) else {
            return self.unknown_penalty();
        };
        let key = pair_key(u, v);
        if let Some(&d) = self.pairs.read().expect("pair cache poisoned").get(&key) {
            self.pair_hits.fetch_add(1, Ordering::Relaxed);
            return d;
        }
        self.pair_misses.fetch_add(1, Ordering::Relaxed);
        // canonical argument order so every writer stores the same bits
        let (a, b) = if u <= v { (a, b) } else { (b, a) };
        let d = self.model.pair_difference_idx(a, b);
        self.pairs
            .write()
            .expect("pair cache poisoned")
            .entry(key)
            .or_insert(d);
        d
    }

    /// Path difference score through both caches.
    pub fn score(&self, s: &AsPath, t: &AsPath) -> f64 {
        let all_known = s.0.iter().chain(&t.0).all(|a| self.model.contains(*a));
        if !all_known {
            return path_diff_score(&|u, v| self.cached_pair_diff(u, v), s, t);
        }
        // score in canonical order so cached values are order independent bitwise
        let (a, b) = if s <= t { (s, t) } else { (t, s) };
        let hit = self
            .paths
            .read()
            .expect("path cache poisoned")
            .get(&a.0[..])
            .and_then(|m| m.get(&b.0[..]).copied());
        if let Some(d) = hit {
            self.path_hits.fetch_add(1, Ordering::Relaxed);
            return d;
        }
        self.path_misses.fetch_add(1, Ordering::Relaxed);
        let d = path_diff_score(&|u, v| self.cached_pair_diff(u, v), a, b);
        self.paths
            .write()
            .expect("path cache poisoned")
            .entry(a.0.clone().into_boxed_slice())
            .or_default()
            .entry(b.0.clone().into_boxed_slice())
            .or_insert(d);
        d
    }

    pub fn matrix(&self, s: &AsPath, t: &AsPath) -> DiffMatrix {
        DiffMatrix::compute(&|u, v| self.cached_pair_diff(u, v), s, t)
    }
}
