//! Streaming detection: monitor → scoring → events → alarms.
//!
//! Time is cut into tumbling windows of width `w` starting after a
//! calibration-only warm-up of one lookback period. At every window boundary
//! the thresholds are recalibrated from the route changes of the trailing
//! lookback, anomalous events active during the window are correlated into
//! alarms, and events idle for `w` are retired. Alarms from all windows are
//! aggregated at the end.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use ipnet::IpNet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    calibrate_th_d, calibrate_th_v, correlate, AlarmAggregator, Alarm, Calibrated, EventGrouper, PrefixEvent,
    DEFAULT_TH_V,
};
use crate::asgraph::Asn;
use crate::embedding::EmbeddingModel;
use crate::monitor::{Announcement, Monitor, MonitorError, MonitorStats, RibEntry, Timestamp};
use crate::pathdiff::{CacheStats, PathScorer};

const CHUNK_SECS: i64 = 15 * 60;
const CHANGE_BATCH: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub window_secs: i64,
    pub lookback_secs: i64,
    /// Used until enough history exists, and whenever calibration falls back.
    pub default_th_d: f64,
    pub default_th_v: usize,
    /// Fixed thresholds disable calibration for that threshold.
    pub th_d: Option<f64>,
    pub th_v: Option<usize>,
    pub collapse_prepend: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            window_secs: 7200,
            lookback_secs: 7200,
            default_th_d: 1.0,
            default_th_v: DEFAULT_TH_V,
            th_d: None,
            th_v: None,
            collapse_prepend: true,
        }
    }
}

/// Processing statistics for one 15-minute slice of replay time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkMetric {
    pub start: Timestamp,
    pub announcements: u64,
    pub changes: u64,
    pub suspicious: u64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub at: Timestamp,
    pub th_d: Calibrated<f64>,
    pub th_v: Calibrated<usize>,
    pub unknown_penalty: f64,
    pub history: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionOutput {
    pub alarms: Vec<Alarm>,
    pub thresholds: Vec<ThresholdRecord>,
    pub chunks: Vec<ChunkMetric>,
    /// Wall time spent on each consecutive block of 1,000 route changes,
    /// counting only announcements that produced a change.
    pub change_batch_secs: Vec<f64>,
    pub cache: CacheStats,
    pub monitor: MonitorStats,
    pub announcements: u64,
    pub suspicious: u64,
    pub elapsed_secs: f64,
}

/// 99th percentile of the pair difference over (a sample of) model AS pairs.
pub fn default_unknown_penalty(model: &EmbeddingModel) -> f64 {
    let asns = model.asns();
    let n = asns.len();
    if n < 2 {
        return 0.0;
    }
    let mut ds = Vec::new();
    if n <= 400 {
        for i in 0..n {
            for j in i + 1..n {
                ds.push(model.pair_difference_idx(i, j));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        while ds.len() < 50_000 {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if i != j {
                ds.push(model.pair_difference_idx(i, j));
            }
        }
    }
    percentile(&mut ds, 0.99)
}

fn percentile(v: &mut [f64], q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() - 1) as f64 * q).round() as usize;
    v[idx]
}

#[derive(Debug, Clone)]
struct HistoryEntry {
    t: Timestamp,
    vantage: Asn,
    key: (IpNet, IpNet),
    score: f64,
    known: bool,
}

pub struct Pipeline {
    config: DetectorConfig,
    monitor: Monitor,
    scorer: PathScorer,
    grouper: EventGrouper,
    aggregator: AlarmAggregator,
    pending_closed: Vec<PrefixEvent>,
    history: VecDeque<HistoryEntry>,
    th_d: f64,
    th_v: usize,
    thresholds: Vec<ThresholdRecord>,
    origin: Option<Timestamp>,
    next_boundary: Timestamp,
    chunks: Vec<ChunkMetric>,
    change_batch_secs: Vec<f64>,
    batch_elapsed: f64,
    batch_changes: usize,
    announcements: u64,
    suspicious: u64,
    elapsed: f64,
}

impl Pipeline {
    pub fn new(model: Arc<EmbeddingModel>, config: DetectorConfig) -> Self {
        let penalty = default_unknown_penalty(&model);
        Pipeline {
            monitor: Monitor::new(config.collapse_prepend),
            scorer: PathScorer::new(model, penalty),
            grouper: EventGrouper::new(config.window_secs),
            aggregator: AlarmAggregator::new(),
            pending_closed: Vec::new(),
            history: VecDeque::new(),
            th_d: config.th_d.unwrap_or(config.default_th_d),
            th_v: config.th_v.unwrap_or(config.default_th_v),
            thresholds: Vec::new(),
            origin: None,
            next_boundary: Timestamp(i64::MAX),
            chunks: Vec::new(),
            change_batch_secs: Vec::new(),
            batch_elapsed: 0.0,
            batch_changes: 0,
            announcements: 0,
            suspicious: 0,
            elapsed: 0.0,
            config,
        }
    }

    pub fn seed_rib(&mut self, rib: impl IntoIterator<Item = RibEntry>) {
        self.monitor.seed_rib(rib);
    }

    pub fn scorer(&self) -> &PathScorer {
        &self.scorer
    }

    pub fn thresholds(&self) -> (f64, usize) {
        (self.th_d, self.th_v)
    }

    fn window(&self) -> i64 {
        self.config.window_secs * 1_000_000
    }

    /// Feeds one announcement; announcements must be in time order.
    pub fn process(&mut self, ann: &Announcement) -> Result<(), MonitorError> {
        let started = Instant::now();
        let t = ann.timestamp();
        let origin = *self.origin.get_or_insert_with(|| {
            self.next_boundary = Timestamp(t.0 + self.config.lookback_secs * 1_000_000);
            t
        });
        while t >= self.next_boundary {
            let b = self.next_boundary;
            self.boundary(b);
            self.next_boundary = Timestamp(b.0 + self.window());
        }

        let chunk_start = Timestamp(origin.0 + (t.0 - origin.0).div_euclid(CHUNK_SECS * 1_000_000) * CHUNK_SECS * 1_000_000);
        if self.chunks.last().is_none_or(|c| c.start != chunk_start) {
            self.chunks.push(ChunkMetric {
                start: chunk_start,
                announcements: 0,
                changes: 0,
                suspicious: 0,
                elapsed_secs: 0.0,
            });
        }

        self.announcements += 1;
        let mut changed = false;
        let mut flagged = false;
        if let Some(mut change) = self.monitor.apply(ann)? {
            changed = true;
            let score = self.scorer.score(&change.old_path, &change.new_path);
            change.score = Some(score);
            let model = self.scorer.model();
            let known = change
                .old_path
                .asns()
                .iter()
                .chain(change.new_path.asns())
                .all(|a| model.contains(*a));
            self.history.push_back(HistoryEntry {
                t,
                vantage: change.vantage,
                key: (change.prefix, change.conflict),
                score,
                known,
            });
            // the first lookback period only feeds calibration
            let detecting = !self.thresholds.is_empty();
            if detecting && score > self.th_d {
                flagged = true;
                self.suspicious += 1;
                if let Some(closed) = self.grouper.push(change, self.th_v) {
                    self.retire(closed);
                }
            }
        }

        let dt = started.elapsed().as_secs_f64();
        self.elapsed += dt;
        let chunk = self.chunks.last_mut().expect("chunk exists");
        chunk.announcements += 1;
        chunk.elapsed_secs += dt;
        if changed {
            self.batch_elapsed += dt;
            chunk.changes += 1;
            self.batch_changes += 1;
            if self.batch_changes == CHANGE_BATCH {
                self.change_batch_secs.push(self.batch_elapsed);
                self.batch_changes = 0;
                self.batch_elapsed = 0.0;
            }
        }
        if flagged {
            chunk.suspicious += 1;
        }
        Ok(())
    }

    /// An event closed by a quiet gap is reported with the next window.
    fn retire(&mut self, event: PrefixEvent) {
        if event.anomalous {
            self.pending_closed.push(event);
        }
    }

    fn boundary(&mut self, b: Timestamp) {
        let w = self.window();
        // alarms for the window that just ended
        let mut active: Vec<PrefixEvent> = std::mem::take(&mut self.pending_closed);
        active.extend(
            self.grouper
                .open_events()
                .filter(|e| e.anomalous && e.end().0 >= b.0 - w)
                .cloned(),
        );
        active.sort_by_key(|e| e.id);
        active.dedup_by_key(|e| e.id);
        for alarm in correlate(&active) {
            self.aggregator.push(alarm);
        }
        self.grouper.close_idle(b);
        self.recalibrate(b);
    }

    fn recalibrate(&mut self, b: Timestamp) {
        let lookback = self.config.lookback_secs * 1_000_000;
        while self.history.front().is_some_and(|h| h.t.0 < b.0 - lookback) {
            self.history.pop_front();
        }
        let scores: Vec<f64> = self.history.iter().map(|h| h.score).collect();
        let th_d = match self.config.th_d {
            Some(v) => Calibrated { value: v, fallback: false },
            None => calibrate_th_d(&scores, self.config.default_th_d),
        };
        let th_v = match self.config.th_v {
            Some(v) => Calibrated { value: v, fallback: false },
            None => {
                let counts = historical_vantage_counts(&self.history, th_d.value, self.window());
                calibrate_th_v(&counts, self.config.default_th_v)
            }
        };
        let mut known: Vec<f64> = self.history.iter().filter(|h| h.known).map(|h| h.score).collect();
        if !known.is_empty() {
            self.scorer.set_unknown_penalty(percentile(&mut known, 0.99));
        }
        self.th_d = th_d.value;
        self.th_v = th_v.value;
        self.thresholds.push(ThresholdRecord {
            at: b,
            th_d,
            th_v,
            unknown_penalty: self.scorer.unknown_penalty(),
            history: self.history.len(),
        });
        log::debug!("thresholds at {b}: th_d={} th_v={}", self.th_d, self.th_v);
    }

    pub fn finish(mut self) -> DetectionOutput {
        if self.origin.is_some() {
            let mut active = std::mem::take(&mut self.pending_closed);
            active.extend(self.grouper.drain().into_iter().filter(|e| e.anomalous));
            active.sort_by_key(|e| e.id);
            active.dedup_by_key(|e| e.id);
            for alarm in correlate(&active) {
                self.aggregator.push(alarm);
            }
        }
        DetectionOutput {
            alarms: self.aggregator.finish(),
            thresholds: self.thresholds,
            chunks: self.chunks,
            change_batch_secs: self.change_batch_secs,
            cache: self.scorer.stats(),
            monitor: self.monitor.stats(),
            announcements: self.announcements,
            suspicious: self.suspicious,
            elapsed_secs: self.elapsed,
        }
    }
}

/// Largest windowed distinct-vantage count of each `(p, p′)` group among
/// history changes scoring above `th_d`.
fn historical_vantage_counts(history: &VecDeque<HistoryEntry>, th_d: f64, window: i64) -> Vec<usize> {
    let mut groups: BTreeMap<(IpNet, IpNet), Vec<(Timestamp, Asn)>> = BTreeMap::new();
    for h in history.iter().filter(|h| h.score > th_d) {
        groups.entry(h.key).or_default().push((h.t, h.vantage));
    }
    groups
        .into_values()
        .map(|members| {
            let mut best = 0;
            let mut lo = 0;
            let mut counts: BTreeMap<Asn, usize> = BTreeMap::new();
            for &(t, v) in &members {
                while members[lo].0 .0 <= t.0 - window {
                    let c = counts.get_mut(&members[lo].1).expect("counted");
                    *c -= 1;
                    if *c == 0 {
                        counts.remove(&members[lo].1);
                    }
                    lo += 1;
                }
                *counts.entry(v).or_insert(0) += 1;
                best = best.max(counts.len());
            }
            best
        })
        .collect()
}

/// Runs the whole pipeline over a replay.
pub fn run_detection(
    model: Arc<EmbeddingModel>,
    rib: Vec<RibEntry>,
    replay: impl IntoIterator<Item = Result<Announcement, MonitorError>>,
    config: DetectorConfig,
) -> Result<DetectionOutput, MonitorError> {
    let mut p = Pipeline::new(model, config);
    p.seed_rib(rib);
    for ann in replay {
        p.process(&ann?)?;
    }
    Ok(p.finish())
}
