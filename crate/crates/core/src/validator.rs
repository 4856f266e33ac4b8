//! Alarm classification against anomalous-route patterns and the
//! legitimate-change heuristic.
//!
//! - P1: origins in different organisations, one origin Valid and the other
//!   InvalidAsn under route origin validation.
//! - P2: either path violates the valley-free property.
//! - P3: either path contains a reserved ASN or an adjacent pair with no
//!   known relationship.
//! - P4: origins in the same organisation whose validation states differ as
//!   Valid versus Invalid.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asgraph::{AsGraph, Asn, Relationship};
use crate::detector::Alarm;
use crate::monitor::{PrefixTrie, RouteChange};
use crate::pathdiff::AsPath;

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roa {
    pub prefix: IpNet,
    pub max_length: u8,
    pub asn: Asn,
}

/// Frozen ROA snapshot with covering-prefix lookup.
#[derive(Debug, Clone, Default)]
pub struct RoaTable {
    roas: Vec<Roa>,
    index: PrefixTrie<Vec<usize>>,
    snapshot: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RpkiState {
    Valid,
    InvalidAsn,
    InvalidLength,
    NotFound,
}

impl RpkiState {
    pub fn is_invalid(self) -> bool {
        matches!(self, RpkiState::InvalidAsn | RpkiState::InvalidLength)
    }
}

impl RoaTable {
    pub fn new(roas: Vec<Roa>) -> Result<Self, ValidatorError> {
        let mut index: PrefixTrie<Vec<usize>> = PrefixTrie::new();
        let mut hasher = Sha256::new();
        for (i, r) in roas.iter().enumerate() {
            let max = r.prefix.max_prefix_len();
            if r.max_length < r.prefix.prefix_len() || r.max_length > max {
                return Err(ValidatorError::Parse {
                    line: i + 1,
                    reason: format!("max_length {} invalid for {}", r.max_length, r.prefix),
                });
            }
            let p = r.prefix.trunc();
            match index.get(&p) {
                Some(_) => {
                    let mut v = index.remove(&p).expect("present");
                    v.push(i);
                    index.insert(p, v);
                }
                None => {
                    index.insert(p, vec![i]);
                }
            }
            hasher.update(format!("{},{},{}\n", p, r.max_length, r.asn.0));
        }
        Ok(RoaTable {
            roas,
            index,
            snapshot: format!("{:x}", hasher.finalize()),
        })
    }

    /// Parses `prefix,max_length,asn` rows; a header row and `#` comments
    /// are skipped.
    pub fn parse(r: impl BufRead) -> Result<Self, ValidatorError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut roas = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| ValidatorError::Parse { line, reason: e.to_string() })?;
            if rec.len() != 3 {
                return Err(ValidatorError::Parse { line, reason: format!("expected 3 fields, got {}", rec.len()) });
            }
            if i == 0 && rec[0].eq_ignore_ascii_case("prefix") {
                continue;
            }
            let err = |reason: String| ValidatorError::Parse { line, reason };
            roas.push(Roa {
                prefix: rec[0].parse().map_err(|e| err(format!("prefix: {e}")))?,
                max_length: rec[1].parse().map_err(|e| err(format!("max_length: {e}")))?,
                asn: rec[2].parse().map_err(|e| err(format!("asn: {e}")))?,
            });
        }
        RoaTable::new(roas)
    }

    pub fn len(&self) -> usize {
        self.roas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roas.is_empty()
    }

    /// SHA-256 over the normalised ROA list, identifying the snapshot.
    pub fn snapshot(&self) -> &str {
        &self.snapshot
    }

    pub fn covering(&self, prefix: &IpNet) -> impl Iterator<Item = &Roa> {
        self.index
            .covering_all(prefix)
            .into_iter()
            .flat_map(|(_, ids)| ids.iter().map(|&i| &self.roas[i]))
    }

    pub fn state(&self, prefix: &IpNet, origin: Asn) -> RpkiState {
        let len = prefix.prefix_len();
        let mut found = false;
        let mut asn_match = false;
        for roa in self.covering(prefix) {
            found = true;
            if roa.asn == origin {
                if len <= roa.max_length {
                    return RpkiState::Valid;
                }
                asn_match = true;
            }
        }
        match (found, asn_match) {
            (false, _) => RpkiState::NotFound,
            (true, true) => RpkiState::InvalidLength,
            (true, false) => RpkiState::InvalidAsn,
        }
    }
}

pub fn rpki_state(roa: &RoaTable, prefix: &IpNet, origin: Asn) -> RpkiState {
    roa.state(prefix, origin)
}

/// ASN → organisation map. Unknown ASNs never share an organisation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrgTable {
    orgs: HashMap<Asn, String>,
}

impl OrgTable {
    pub fn new(orgs: impl IntoIterator<Item = (Asn, String)>) -> Self {
        OrgTable {
            orgs: orgs.into_iter().collect(),
        }
    }

    /// Parses `asn<TAB>org_id` lines; blank and `#` lines are skipped.
    pub fn parse(r: impl BufRead) -> Result<Self, ValidatorError> {
        let mut orgs = HashMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (asn, org) = line.split_once('\t').ok_or_else(|| ValidatorError::Parse {
                line: i + 1,
                reason: "expected asn<TAB>org_id".into(),
            })?;
            let asn: Asn = asn.trim().parse().map_err(|e| ValidatorError::Parse {
                line: i + 1,
                reason: format!("{e}"),
            })?;
            orgs.insert(asn, org.trim().to_string());
        }
        Ok(OrgTable { orgs })
    }

    pub fn org(&self, asn: Asn) -> Option<&str> {
        self.orgs.get(&asn).map(String::as_str)
    }

    pub fn same_org(&self, a: Asn, b: Asn) -> bool {
        matches!((self.org(a), self.org(b)), (Some(x), Some(y)) if x == y)
    }

    pub fn len(&self) -> usize {
        self.orgs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orgs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValleyFree {
    Yes,
    No,
    /// Some adjacent pair has no relationship record.
    NotEvaluable,
}

/// Valley-free check. Paths are stored vantage first; the walk goes from the
/// origin toward the vantage point, i.e. the direction the route was
/// exported: uphill customer→provider links, at most one peer link, then
/// downhill provider→customer links. Prepending repeats are ignored.
pub fn valley_free(path: &AsPath, graph: &AsGraph) -> ValleyFree {
    let hops: Vec<Asn> = path.asns().iter().rev().copied().collect();
    // 0: climbing, 1: crossed the peer link, 2: descending
    let mut phase = 0;
    let mut violated = false;
    for w in hops.windows(2) {
        let (from, to) = (w[0], w[1]);
        if from == to {
            continue;
        }
        match graph.relationship(from, to) {
            None => return ValleyFree::NotEvaluable,
            Some(Relationship::C2P) => {
                if phase > 0 {
                    violated = true;
                }
            }
            Some(Relationship::P2P) => {
                if phase > 0 {
                    violated = true;
                }
                phase = 1;
            }
            Some(Relationship::P2C) => phase = 2,
        }
    }
    if violated {
        ValleyFree::No
    } else {
        ValleyFree::Yes
    }
}

/// True when the path has a reserved ASN or an adjacent pair with no
/// relationship record.
pub fn has_bogus_hop(path: &AsPath, graph: &AsGraph) -> bool {
    path.asns().iter().any(|a| a.is_reserved())
        || path
            .asns()
            .windows(2)
            .any(|w| w[0] != w[1] && graph.relationship(w[0], w[1]).is_none())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pattern {
    P1,
    P2,
    P3,
    P4,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::P1, Pattern::P2, Pattern::P3, Pattern::P4];
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternFlags {
    pub p1: bool,
    pub p2: bool,
    pub p3: bool,
    pub p4: bool,
}

impl PatternFlags {
    pub fn get(&self, p: Pattern) -> bool {
        match p {
            Pattern::P1 => self.p1,
            Pattern::P2 => self.p2,
            Pattern::P3 => self.p3,
            Pattern::P4 => self.p4,
        }
    }

    pub fn any(&self) -> bool {
        self.p1 || self.p2 || self.p3 || self.p4
    }
}

/// Offline datasets used for matching.
pub struct Validator<'a> {
    pub roa: &'a RoaTable,
    pub org: &'a OrgTable,
    pub graph: &'a AsGraph,
}

impl Validator<'_> {
    /// Pattern flags of one change. The new origin is validated for `p`, the
    /// old origin for `p′`.
    pub fn match_patterns(&self, change: &RouteChange) -> PatternFlags {
        let (new_o, old_o) = (change.new_path.origin(), change.old_path.origin());
        let mut flags = PatternFlags::default();
        if new_o != old_o {
            let s_new = self.roa.state(&change.prefix, new_o);
            let s_old = self.roa.state(&change.conflict, old_o);
            let same = self.org.same_org(new_o, old_o);
            let pair = |a: RpkiState, b: RpkiState| (s_new == a && s_old == b) || (s_new == b && s_old == a);
            flags.p1 = !same && pair(RpkiState::Valid, RpkiState::InvalidAsn);
            flags.p4 = same
                && (pair(RpkiState::Valid, RpkiState::InvalidAsn) || pair(RpkiState::Valid, RpkiState::InvalidLength));
        }
        flags.p2 = [&change.new_path, &change.old_path]
            .iter()
            .any(|p| valley_free(p, self.graph) == ValleyFree::No);
        flags.p3 = has_bogus_hop(&change.new_path, self.graph) || has_bogus_hop(&change.old_path, self.graph);
        flags
    }

    pub fn classify(&self, alarm: &Alarm) -> PatternVerdict {
        let flags: Vec<PatternFlags> = alarm.changes().map(|c| self.match_patterns(c)).collect();
        let mut v = classify_alarm(&flags);
        v.roa_snapshot = Some(self.roa.snapshot().to_string());
        v
    }
}

/// Exact fraction `matched / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub matched: usize,
    pub total: usize,
}

impl Ratio {
    pub fn value(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }

    /// `matched / total > 1/2` in integer arithmetic.
    pub fn exceeds_half(self) -> bool {
        2 * self.matched > self.total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Confidence {
    HighConfidence,
    LowConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternVerdict {
    /// Flags of every member change, in alarm order.
    pub flags: Vec<PatternFlags>,
    pub ep: BTreeMap<Pattern, Ratio>,
    pub confidence: Confidence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roa_snapshot: Option<String>,
}

impl PatternVerdict {
    pub fn ep_value(&self, p: Pattern) -> f64 {
        self.ep.get(&p).map(|r| r.value()).unwrap_or(0.0)
    }
}

/// Explanatory power of each pattern over the member changes; high
/// confidence iff some pattern explains strictly more than half.
pub fn classify_alarm(flags: &[PatternFlags]) -> PatternVerdict {
    let total = flags.len();
    let ep: BTreeMap<Pattern, Ratio> = Pattern::ALL
        .iter()
        .map(|&p| {
            let matched = flags.iter().filter(|f| f.get(p)).count();
            (p, Ratio { matched, total })
        })
        .collect();
    let confidence = if ep.values().any(|r| r.exceeds_half()) {
        Confidence::HighConfidence
    } else {
        Confidence::LowConfidence
    };
    PatternVerdict {
        flags: flags.to_vec(),
        ep,
        confidence,
        roa_snapshot: None,
    }
}

/// Origin change between sibling ASes of one organisation on paths without
/// repeated ASNs.
pub fn label_legitimate(change: &RouteChange, org: &OrgTable) -> bool {
    let (a, b) = (change.new_path.origin(), change.old_path.origin());
    a != b && org.same_org(a, b) && !change.new_path.has_duplicates() && !change.old_path.has_duplicates()
}
