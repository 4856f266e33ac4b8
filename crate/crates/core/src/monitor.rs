//! Per-vantage routing tables and route-change extraction.
//!
//! Each vantage point owns a binary prefix trie holding the current path for
//! every announced prefix. A new announcement is compared against the path
//! stored for the same prefix or, when there is none, against the most
//! specific covering prefix in the table.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{BufRead, Write};
use std::net::IpAddr;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asgraph::Asn;
use crate::pathdiff::{preprocess_path, AsPath, PathError, RawHop};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("malformed announcement: {0}")]
    MalformedAnnouncement(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: timestamp {t} precedes {watermark} beyond the skew window")]
    ClockSkewViolation { line: usize, t: Timestamp, watermark: Timestamp },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_secs(secs: i64) -> Self {
        Timestamp(secs * 1_000_000)
    }

    pub fn from_parts(secs: i64, micros: u32) -> Self {
        Timestamp(secs * 1_000_000 + micros as i64)
    }

    pub fn secs(self) -> i64 {
        self.0.div_euclid(1_000_000)
    }

    pub fn subsec_micros(self) -> u32 {
        self.0.rem_euclid(1_000_000) as u32
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.subsec_micros() {
            0 => write!(f, "{}", self.secs()),
            us => write!(f, "{}.{us:06}", self.secs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnnouncementKind {
    #[serde(rename = "A")]
    Announce,
    #[serde(rename = "W")]
    Withdraw,
}

/// One replayed update as seen by a vantage point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Announcement {
    pub t: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_us: Option<u32>,
    pub vantage: Asn,
    pub kind: AnnouncementKind,
    pub prefix: IpNet,
    #[serde(default)]
    pub path: Vec<RawHop>,
}

impl Announcement {
    pub fn announce(t: i64, vantage: u32, prefix: &str, path: &[u32]) -> Self {
        Announcement {
            t,
            t_us: None,
            vantage: Asn(vantage),
            kind: AnnouncementKind::Announce,
            prefix: prefix.parse().expect("valid prefix"),
            path: path.iter().map(|&a| RawHop::from(a)).collect(),
        }
    }

    pub fn withdraw(t: i64, vantage: u32, prefix: &str) -> Self {
        Announcement {
            t,
            t_us: None,
            vantage: Asn(vantage),
            kind: AnnouncementKind::Withdraw,
            prefix: prefix.parse().expect("valid prefix"),
            path: Vec::new(),
        }
    }

    pub fn timestamp(&self) -> Timestamp {
        Timestamp::from_parts(self.t, self.t_us.unwrap_or(0))
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        if matches!(self.t_us, Some(us) if us >= 1_000_000) {
            return Err(MonitorError::MalformedAnnouncement("t_us out of range".into()));
        }
        if self.kind == AnnouncementKind::Announce && self.path.is_empty() {
            return Err(MonitorError::MalformedAnnouncement("announce without path".into()));
        }
        Ok(())
    }
}

/// A path replacement `(t, r, p, p′, l, l′)` at one vantage point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteChange {
    pub t: Timestamp,
    pub vantage: Asn,
    pub prefix: IpNet,
    /// `prefix` itself or its most specific covering prefix in the table.
    pub conflict: IpNet,
    pub new_path: AsPath,
    pub old_path: AsPath,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

fn key_bits(p: &IpNet) -> (usize, u128, u8) {
    match p.trunc() {
        IpNet::V4(n) => (0, (u32::from(n.addr()) as u128) << 96, n.prefix_len()),
        IpNet::V6(n) => (1, u128::from(n.addr()), n.prefix_len()),
    }
}

fn bit(addr: u128, depth: u8) -> usize {
    ((addr >> (127 - depth as u32)) & 1) as usize
}

fn net_from(family: usize, addr: u128, len: u8) -> IpNet {
    let mask = if len == 0 { 0 } else { u128::MAX << (128 - len as u32) };
    let addr = addr & mask;
    let ip = if family == 0 {
        IpAddr::V4(((addr >> 96) as u32).into())
    } else {
        IpAddr::V6(addr.into())
    };
    IpNet::new(ip, len).expect("length within family bounds")
}

#[derive(Debug, Clone)]
struct Node<V> {
    children: [Option<Box<Node<V>>>; 2],
    value: Option<V>,
}

impl<V> Default for Node<V> {
    fn default() -> Self {
        Node {
            children: [None, None],
            value: None,
        }
    }
}

/// Binary trie keyed by prefix bits. IPv4 and IPv6 live under separate roots.
#[derive(Debug, Clone)]
pub struct PrefixTrie<V> {
    roots: [Node<V>; 2],
    len: usize,
}

impl<V> Default for PrefixTrie<V> {
    fn default() -> Self {
        PrefixTrie {
            roots: [Node::default(), Node::default()],
            len: 0,
        }
    }
}

impl<V> PrefixTrie<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, prefix: IpNet, value: V) -> Option<V> {
        let (fam, addr, len) = key_bits(&prefix);
        let mut node = &mut self.roots[fam];
        for depth in 0..len {
            node = node.children[bit(addr, depth)].get_or_insert_with(Default::default);
        }
        let old = node.value.replace(value);
        if old.is_none() {
            self.len += 1;
        }
        old
    }

    pub fn get(&self, prefix: &IpNet) -> Option<&V> {
        let (fam, addr, len) = key_bits(prefix);
        let mut node = &self.roots[fam];
        for depth in 0..len {
            node = node.children[bit(addr, depth)].as_deref()?;
        }
        node.value.as_ref()
    }

    /// Exact entry for `prefix` if present, otherwise the nearest occupied
    /// ancestor.
    pub fn lookup(&self, prefix: &IpNet) -> Option<(IpNet, &V)> {
        let (fam, addr, len) = key_bits(prefix);
        let mut node = &self.roots[fam];
        let mut best = node.value.as_ref().map(|v| (0u8, v));
        for depth in 0..len {
            match node.children[bit(addr, depth)].as_deref() {
                Some(child) => node = child,
                None => break,
            }
            if let Some(v) = node.value.as_ref() {
                best = Some((depth + 1, v));
            }
        }
        best.map(|(l, v)| (net_from(fam, addr, l), v))
    }

    /// Nearest occupied strict ancestor of `prefix`.
    pub fn covering(&self, prefix: &IpNet) -> Option<(IpNet, &V)> {
        let (fam, addr, len) = key_bits(prefix);
        let mut node = &self.roots[fam];
        let mut best = None;
        for depth in 0..len {
            if let Some(v) = node.value.as_ref() {
                best = Some((depth, v));
            }
            match node.children[bit(addr, depth)].as_deref() {
                Some(child) => node = child,
                None => break,
            }
        }
        best.map(|(l, v)| (net_from(fam, addr, l), v))
    }

    /// Every occupied prefix covering `prefix` (itself included), shortest
    /// first.
    pub fn covering_all(&self, prefix: &IpNet) -> Vec<(IpNet, &V)> {
        let (fam, addr, len) = key_bits(prefix);
        let mut node = &self.roots[fam];
        let mut out = Vec::new();
        for depth in 0..=len {
            if let Some(v) = node.value.as_ref() {
                out.push((net_from(fam, addr, depth), v));
            }
            if depth == len {
                break;
            }
            match node.children[bit(addr, depth)].as_deref() {
                Some(child) => node = child,
                None => break,
            }
        }
        out
    }

    pub fn remove(&mut self, prefix: &IpNet) -> Option<V> {
        let (fam, addr, len) = key_bits(prefix);
        let out = Self::remove_at(&mut self.roots[fam], addr, 0, len);
        if out.is_some() {
            self.len -= 1;
        }
        out
    }

    fn remove_at(node: &mut Node<V>, addr: u128, depth: u8, len: u8) -> Option<V> {
        if depth == len {
            return node.value.take();
        }
        let b = bit(addr, depth);
        let child = node.children[b].as_deref_mut()?;
        let out = Self::remove_at(child, addr, depth + 1, len);
        if child.value.is_none() && child.children.iter().all(Option::is_none) {
            node.children[b] = None;
        }
        out
    }

    /// All entries in address order (shorter prefixes before their subtrees).
    pub fn iter(&self) -> Vec<(IpNet, &V)> {
        let mut out = Vec::with_capacity(self.len);
        for fam in 0..2 {
            Self::walk(&self.roots[fam], fam, 0, 0, &mut out);
        }
        out
    }

    fn walk<'a>(node: &'a Node<V>, fam: usize, addr: u128, depth: u8, out: &mut Vec<(IpNet, &'a V)>) {
        if let Some(v) = node.value.as_ref() {
            out.push((net_from(fam, addr, depth), v));
        }
        for (b, child) in node.children.iter().enumerate() {
            if let Some(c) = child {
                let a = addr | ((b as u128) << (127 - depth as u32));
                Self::walk(c, fam, a, depth + 1, out);
            }
        }
    }
}

/// Counters kept by [`Monitor`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorStats {
    pub announcements: u64,
    pub withdrawals: u64,
    pub changes: u64,
    pub ignored_default: u64,
    pub skipped_as_set: u64,
    pub duplicate_rib: u64,
}

/// RIB snapshot entry used to initialise the tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RibEntry {
    pub vantage: Asn,
    pub prefix: IpNet,
    pub path: Vec<RawHop>,
}

/// Routing tables of all vantage points.
#[derive(Debug, Clone)]
pub struct Monitor {
    tables: BTreeMap<Asn, PrefixTrie<AsPath>>,
    collapse_prepend: bool,
    stats: MonitorStats,
}

fn is_default_route(p: &IpNet) -> bool {
    p.prefix_len() == 0
}

impl Monitor {
    pub fn new(collapse_prepend: bool) -> Self {
        Monitor {
            tables: BTreeMap::new(),
            collapse_prepend,
            stats: MonitorStats::default(),
        }
    }

    pub fn stats(&self) -> MonitorStats {
        self.stats
    }

    pub fn table(&self, vantage: Asn) -> Option<&PrefixTrie<AsPath>> {
        self.tables.get(&vantage)
    }

    pub fn vantages(&self) -> impl Iterator<Item = Asn> + '_ {
        self.tables.keys().copied()
    }

    /// Loads a RIB snapshot without emitting changes. A repeated
    /// (vantage, prefix) with a different path keeps the last one.
    pub fn seed_rib(&mut self, rib: impl IntoIterator<Item = RibEntry>) {
        for entry in rib {
            if is_default_route(&entry.prefix) {
                self.stats.ignored_default += 1;
                continue;
            }
            let path = match preprocess_path(&entry.path, self.collapse_prepend) {
                Ok(p) => p,
                Err(_) => {
                    self.stats.skipped_as_set += 1;
                    continue;
                }
            };
            let prefix = entry.prefix.trunc();
            let table = self.tables.entry(entry.vantage).or_default();
            if let Some(old) = table.insert(prefix, path.clone()) {
                if old != path {
                    self.stats.duplicate_rib += 1;
                    log::warn!("duplicate RIB entry for {} at {}, keeping last", prefix, entry.vantage);
                }
            }
        }
    }

    pub fn apply(&mut self, ann: &Announcement) -> Result<Option<RouteChange>, MonitorError> {
        ann.validate()?;
        if is_default_route(&ann.prefix) {
            self.stats.ignored_default += 1;
            return Ok(None);
        }
        let prefix = ann.prefix.trunc();
        match ann.kind {
            AnnouncementKind::Withdraw => {
                self.stats.withdrawals += 1;
                if let Some(t) = self.tables.get_mut(&ann.vantage) {
                    t.remove(&prefix);
                }
                Ok(None)
            }
            AnnouncementKind::Announce => {
                self.stats.announcements += 1;
                let path = match preprocess_path(&ann.path, self.collapse_prepend) {
                    Ok(p) => p,
                    Err(PathError::ContainsAsSet) => {
                        self.stats.skipped_as_set += 1;
                        return Ok(None);
                    }
                    Err(e) => return Err(MonitorError::MalformedAnnouncement(e.to_string())),
                };
                let table = self.tables.entry(ann.vantage).or_default();
                let change = match table.lookup(&prefix) {
                    Some((conflict, old)) if *old != path => Some(RouteChange {
                        t: ann.timestamp(),
                        vantage: ann.vantage,
                        prefix,
                        conflict,
                        new_path: path.clone(),
                        old_path: old.clone(),
                        score: None,
                    }),
                    _ => None,
                };
                table.insert(prefix, path);
                if change.is_some() {
                    self.stats.changes += 1;
                }
                Ok(change)
            }
        }
    }
}

/// Reads a JSONL file of [`RibEntry`] records; blank lines are skipped.
pub fn read_rib(r: impl BufRead) -> Result<Vec<RibEntry>, MonitorError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: RibEntry = serde_json::from_str(&line).map_err(|e| MonitorError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Replay reader delivering announcements in non-decreasing time order.
///
/// Records up to `skew` behind the latest timestamp seen are buffered and
/// reordered; older ones are dropped and counted. With `skew` zero any
/// decrease is a violation.
pub struct ReplayReader<R> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
    skew: i64,
    latest: Option<Timestamp>,
    pending: BinaryHeap<Reverse<(Timestamp, usize, Pending)>>,
    rejected: u64,
    last_violation: Option<MonitorError>,
    done: bool,
}

#[derive(Debug, PartialEq, Eq)]
struct Pending(Box<Announcement>);

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // heap order is decided by (timestamp, line) which is unique
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl<R: BufRead> ReplayReader<R> {
    pub fn new(r: R, skew_secs: u64) -> Self {
        ReplayReader {
            lines: r.lines().enumerate(),
            skew: skew_secs as i64 * 1_000_000,
            latest: None,
            pending: BinaryHeap::new(),
            rejected: 0,
            last_violation: None,
            done: false,
        }
    }

    /// Number of records dropped for arriving too late.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn last_violation(&self) -> Option<&MonitorError> {
        self.last_violation.as_ref()
    }

    fn release(&mut self) -> Option<Announcement> {
        let Reverse((t, _, _)) = self.pending.peek()?;
        let ready = self.done || self.latest.is_some_and(|l| t.0 <= l.0 - self.skew);
        if ready {
            self.pending.pop().map(|Reverse((_, _, p))| *p.0)
        } else {
            None
        }
    }
}

impl<R: BufRead> Iterator for ReplayReader<R> {
    type Item = Result<Announcement, MonitorError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(a) = self.release() {
                return Some(Ok(a));
            }
            if self.done {
                return None;
            }
            let Some((i, line)) = self.lines.next() else {
                self.done = true;
                continue;
            };
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Announcement>(&line)
                .map_err(|e| e.to_string())
                .and_then(|a| a.validate().map(|_| a).map_err(|e| e.to_string()));
            let ann = match parsed {
                Ok(a) => a,
                Err(reason) => return Some(Err(MonitorError::Parse { line: i + 1, reason })),
            };
            let t = ann.timestamp();
            if let Some(latest) = self.latest {
                if t.0 < latest.0 - self.skew {
                    self.rejected += 1;
                    let err = MonitorError::ClockSkewViolation {
                        line: i + 1,
                        t,
                        watermark: latest,
                    };
                    log::debug!("{err}");
                    self.last_violation = Some(err);
                    continue;
                }
            }
            if self.latest.is_none_or(|l| t > l) {
                self.latest = Some(t);
            }
            self.pending.push(Reverse((t, i, Pending(Box::new(ann)))));
        }
    }
}
