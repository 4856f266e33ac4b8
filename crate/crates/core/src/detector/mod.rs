//! Suspicious-change filtering, prefix events, responsible ASes, event
//! correlation and alarm aggregation.
//!
//! A prefix event collects suspicious changes sharing `(p, p′)`. It is
//! anomalous once more than `th_v` distinct vantage points report members
//! whose timestamps are pairwise closer than `w`. Responsible ASes are the
//! union of the intersections of the drop-out sets `l − l′` and the pop-up
//! sets `l′ − l`. Anomalous events whose time ranges overlap and whose
//! responsible sets intersect are correlated; each connected component is
//! one alarm.

mod pipeline;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::asgraph::Asn;
use crate::monitor::{RouteChange, Timestamp};
use crate::validator::PatternVerdict;

pub use pipeline::{
    default_unknown_penalty, run_detection, ChunkMetric, DetectionOutput, DetectorConfig, Pipeline,
    ThresholdRecord,
};

/// Knee of the empirical CDF of `samples` by the Kneedle method
/// (concave increasing, sensitivity 1).
///
/// The CDF points are the sorted samples against `i / n`; both axes are
/// scaled to `[0, 1]` and the knee is the sample at the smallest maximiser of
/// `y − x`. Returns `None` for an empty sample.
pub fn kneedle(samples: &[f64]) -> Option<f64> {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let (lo, hi) = (xs[0], xs[n - 1]);
    if n == 1 || hi == lo {
        return Some(lo);
    }
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, &x) in xs.iter().enumerate() {
        let xn = (x - lo) / (hi - lo);
        let yn = i as f64 / (n - 1) as f64;
        let d = yn - xn;
        if d > best.0 + 1e-12 {
            best = (d, i);
        }
    }
    Some(xs[best.1])
}

/// Result of a threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrated<T> {
    pub value: T,
    /// True when history was insufficient and the default was used.
    pub fallback: bool,
}

pub const MIN_TH_D_HISTORY: usize = 20;
pub const DEFAULT_TH_V: usize = 2;

pub fn calibrate_th_d(history: &[f64], default: f64) -> Calibrated<f64> {
    match kneedle(history) {
        Some(k) if history.len() >= MIN_TH_D_HISTORY => Calibrated { value: k.max(0.0), fallback: false },
        _ => Calibrated { value: default, fallback: true },
    }
}

pub fn calibrate_th_v(counts: &[usize], default: usize) -> Calibrated<usize> {
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    match kneedle(&xs) {
        Some(k) => Calibrated { value: (k.ceil() as usize).max(1), fallback: false },
        None => Calibrated { value: default, fallback: true },
    }
}

/// Strict filter: a change is suspicious iff its score exceeds `th_d`.
pub fn is_suspicious(change: &RouteChange, th_d: f64) -> bool {
    change.score.is_some_and(|s| s > th_d)
}

/// Window witnessing an anomalous event: members in `(end − w, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCertificate {
    pub start: Timestamp,
    pub end: Timestamp,
    pub vantages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixEvent {
    pub id: u64,
    pub prefix: IpNet,
    pub conflict: IpNet,
    pub changes: Vec<RouteChange>,
    pub anomalous: bool,
    /// Largest distinct-vantage count seen in any window.
    pub max_vantages: usize,
    /// Window with the largest count among those exceeding `th_v`.
    pub certificate: Option<WindowCertificate>,
    pub responsible: BTreeSet<Asn>,
}

impl PrefixEvent {
    pub fn start(&self) -> Timestamp {
        self.changes.first().map(|c| c.t).unwrap_or_default()
    }

    pub fn end(&self) -> Timestamp {
        self.changes.last().map(|c| c.t).unwrap_or_default()
    }

    pub fn vantages(&self) -> BTreeSet<Asn> {
        self.changes.iter().map(|c| c.vantage).collect()
    }
}

fn dropout(c: &RouteChange) -> BTreeSet<Asn> {
    let old: BTreeSet<Asn> = c.old_path.asns().iter().copied().collect();
    c.new_path.asns().iter().copied().filter(|a| !old.contains(a)).collect()
}

fn popup(c: &RouteChange) -> BTreeSet<Asn> {
    let new: BTreeSet<Asn> = c.new_path.asns().iter().copied().collect();
    c.old_path.asns().iter().copied().filter(|a| !new.contains(a)).collect()
}

fn intersect(acc: &mut Option<BTreeSet<Asn>>, next: BTreeSet<Asn>) {
    *acc = Some(match acc.take() {
        None => next,
        Some(a) => a.intersection(&next).copied().collect(),
    });
}

/// `∩(l − l′) ∪ ∩(l′ − l)` over the given changes; empty when none.
pub fn responsible_ases<'a>(changes: impl IntoIterator<Item = &'a RouteChange>) -> BTreeSet<Asn> {
    let mut drop = None;
    let mut pop = None;
    for c in changes {
        intersect(&mut drop, dropout(c));
        intersect(&mut pop, popup(c));
    }
    let mut out = drop.unwrap_or_default();
    out.extend(pop.unwrap_or_default());
    out
}

#[derive(Debug, Clone)]
struct OpenEvent {
    event: PrefixEvent,
    recent: VecDeque<(Timestamp, Asn)>,
    counts: HashMap<Asn, usize>,
    drop: Option<BTreeSet<Asn>>,
    pop: Option<BTreeSet<Asn>>,
}

impl OpenEvent {
    fn new(id: u64, change: &RouteChange) -> Self {
        OpenEvent {
            event: PrefixEvent {
                id,
                prefix: change.prefix,
                conflict: change.conflict,
                changes: Vec::new(),
                anomalous: false,
                max_vantages: 0,
                certificate: None,
                responsible: BTreeSet::new(),
            },
            recent: VecDeque::new(),
            counts: HashMap::new(),
            drop: None,
            pop: None,
        }
    }

    fn push(&mut self, change: RouteChange, window: i64, th_v: usize) {
        let t = change.t;
        while let Some(&(ft, fv)) = self.recent.front() {
            if ft.0 > t.0 - window {
                break;
            }
            self.recent.pop_front();
            let c = self.counts.get_mut(&fv).expect("counted vantage");
            *c -= 1;
            if *c == 0 {
                self.counts.remove(&fv);
            }
        }
        self.recent.push_back((t, change.vantage));
        *self.counts.entry(change.vantage).or_insert(0) += 1;
        let n = self.counts.len();
        let ev = &mut self.event;
        ev.max_vantages = ev.max_vantages.max(n);
        if n > th_v {
            ev.anomalous = true;
            if ev.certificate.is_none_or(|c| n > c.vantages) {
                ev.certificate = Some(WindowCertificate {
                    start: self.recent.front().expect("non-empty window").0,
                    end: t,
                    vantages: n,
                });
            }
        }
        intersect(&mut self.drop, dropout(&change));
        intersect(&mut self.pop, popup(&change));
        ev.responsible = self.drop.iter().chain(&self.pop).flatten().copied().collect();
        ev.changes.push(change);
    }
}

/// Incremental prefix-event grouping. Changes must arrive in time order. An event
/// closes once no member has arrived for `window`.
#[derive(Debug, Clone)]
pub struct EventGrouper {
    window: i64,
    open: BTreeMap<(IpNet, IpNet), OpenEvent>,
    next_id: u64,
}

impl EventGrouper {
    pub fn new(window_secs: i64) -> Self {
        EventGrouper {
            window: window_secs * 1_000_000,
            open: BTreeMap::new(),
            next_id: 0,
        }
    }

    /// Adds a suspicious change. Returns the previous event for the same key
    /// if the quiet period closed it.
    pub fn push(&mut self, change: RouteChange, th_v: usize) -> Option<PrefixEvent> {
        let key = (change.prefix, change.conflict);
        let mut closed = None;
        if let Some(open) = self.open.get(&key) {
            if change.t.0 - open.event.end().0 >= self.window {
                closed = self.open.remove(&key).map(|o| o.event);
            }
        }
        let window = self.window;
        let next_id = &mut self.next_id;
        let open = self.open.entry(key).or_insert_with(|| {
            let e = OpenEvent::new(*next_id, &change);
            *next_id += 1;
            e
        });
        open.push(change, window, th_v);
        closed
    }

    /// Removes and returns events that can no longer grow at time `now`.
    pub fn close_idle(&mut self, now: Timestamp) -> Vec<PrefixEvent> {
        let window = self.window;
        let idle: Vec<(IpNet, IpNet)> = self
            .open
            .iter()
            .filter(|(_, o)| now.0 - o.event.end().0 >= window)
            .map(|(k, _)| *k)
            .collect();
        let mut out: Vec<PrefixEvent> = idle
            .into_iter()
            .filter_map(|k| self.open.remove(&k).map(|o| o.event))
            .collect();
        out.sort_by_key(|e| e.id);
        out
    }

    pub fn open_events(&self) -> impl Iterator<Item = &PrefixEvent> {
        self.open.values().map(|o| &o.event)
    }

    pub fn drain(&mut self) -> Vec<PrefixEvent> {
        let mut out: Vec<PrefixEvent> = std::mem::take(&mut self.open).into_values().map(|o| o.event).collect();
        out.sort_by_key(|e| e.id);
        out
    }
}

/// Batch grouping of time-ordered suspicious changes into prefix events.
pub fn group_events(suspicious: &[RouteChange], window_secs: i64, th_v: usize) -> Vec<PrefixEvent> {
    let mut g = EventGrouper::new(window_secs);
    let mut out = Vec::new();
    for c in suspicious {
        out.extend(g.push(c.clone(), th_v));
    }
    out.extend(g.drain());
    out.sort_by_key(|e| e.id);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub id: u64,
    pub start: Timestamp,
    pub end: Timestamp,
    pub prefixes: BTreeSet<IpNet>,
    pub responsible: BTreeSet<Asn>,
    pub vantage_count: usize,
    pub events: Vec<PrefixEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PatternVerdict>,
}

impl Alarm {
    pub fn from_events(id: u64, mut events: Vec<PrefixEvent>) -> Alarm {
        events.sort_by_key(|e| (e.start(), e.id));
        let start = events.iter().map(|e| e.start()).min().unwrap_or_default();
        let end = events.iter().map(|e| e.end()).max().unwrap_or_default();
        let mut prefixes = BTreeSet::new();
        let mut responsible = BTreeSet::new();
        let mut vantages = BTreeSet::new();
        for e in &events {
            prefixes.insert(e.prefix);
            prefixes.insert(e.conflict);
            responsible.extend(e.responsible.iter().copied());
            vantages.extend(e.changes.iter().map(|c| c.vantage));
        }
        Alarm {
            id,
            start,
            end,
            prefixes,
            responsible,
            vantage_count: vantages.len(),
            events,
            validation: None,
        }
    }

    pub fn changes(&self) -> impl Iterator<Item = &RouteChange> {
        self.events.iter().flat_map(|e| e.changes.iter())
    }

    pub fn change_count(&self) -> usize {
        self.events.iter().map(|e| e.changes.len()).sum()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }

    fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.0.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        by_root.into_values().collect()
    }
}

/// Whether two events are correlated: closed time ranges overlap and the
/// responsible sets intersect.
pub fn correlated(a: &PrefixEvent, b: &PrefixEvent) -> bool {
    a.start() <= b.end() && b.start() <= a.end() && !a.responsible.is_disjoint(&b.responsible)
}

/// Partitions events into alarms (connected components of the correlation
/// graph). Alarm ids are assigned in order of start time.
pub fn correlate(events: &[PrefixEvent]) -> Vec<Alarm> {
    let mut uf = UnionFind::new(events.len());
    let mut by_as: BTreeMap<Asn, Vec<usize>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        for a in &e.responsible {
            by_as.entry(*a).or_default().push(i);
        }
    }
    for members in by_as.values() {
        let mut sorted = members.clone();
        sorted.sort_by_key(|&i| events[i].start());
        // sweep by start time: an event overlaps every earlier one whose end
        // reaches its start
        let mut active: Vec<usize> = Vec::new();
        for &i in &sorted {
            let s = events[i].start();
            active.retain(|&j| events[j].end() >= s);
            for &j in &active {
                uf.union(i, j);
            }
            active.push(i);
        }
    }
    let mut alarms: Vec<Alarm> = uf
        .groups()
        .into_iter()
        .map(|g| Alarm::from_events(0, g.into_iter().map(|i| events[i].clone()).collect()))
        .collect();
    alarms.sort_by_key(|a| (a.start, a.events[0].id));
    for (i, a) in alarms.iter_mut().enumerate() {
        a.id = i as u64;
    }
    alarms
}

/// Merges alarms raised in different windows when they share a
/// `(prefix, responsible AS)` pair or a member event.
#[derive(Debug, Default, Clone)]
pub struct AlarmAggregator {
    alarms: Vec<Alarm>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum MergeKey {
    Pair(IpNet, Option<Asn>),
    Event(u64),
}

impl AlarmAggregator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, alarm: Alarm) {
        self.alarms.push(alarm);
    }

    pub fn len(&self) -> usize {
        self.alarms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alarms.is_empty()
    }

    pub fn finish(self) -> Vec<Alarm> {
        aggregate_alarms(self.alarms)
    }
}

pub fn aggregate_alarms(alarms: Vec<Alarm>) -> Vec<Alarm> {
    let mut uf = UnionFind::new(alarms.len());
    let mut owner: BTreeMap<MergeKey, usize> = BTreeMap::new();
    for (i, a) in alarms.iter().enumerate() {
        for e in &a.events {
            let mut keys = vec![MergeKey::Event(e.id)];
            for p in [e.prefix, e.conflict] {
                if e.responsible.is_empty() {
                    keys.push(MergeKey::Pair(p, None));
                }
                keys.extend(e.responsible.iter().map(|r| MergeKey::Pair(p, Some(*r))));
            }
            for k in keys {
                match owner.get(&k) {
                    Some(&j) => uf.union(i, j),
                    None => {
                        owner.insert(k, i);
                    }
                }
            }
        }
    }
    let mut merged: Vec<Alarm> = uf
        .groups()
        .into_iter()
        .map(|g| {
            // keep the most complete snapshot of each event
            let mut latest: BTreeMap<u64, PrefixEvent> = BTreeMap::new();
            for i in g {
                for e in &alarms[i].events {
                    match latest.get(&e.id) {
                        Some(prev) if (prev.changes.len(), prev.end()) >= (e.changes.len(), e.end()) => {}
                        _ => {
                            latest.insert(e.id, e.clone());
                        }
                    }
                }
            }
            Alarm::from_events(0, latest.into_values().collect())
        })
        .collect();
    merged.sort_by_key(|a| (a.start, a.events[0].id));
    for (i, a) in merged.iter_mut().enumerate() {
        a.id = i as u64;
    }
    merged
}
