//! Synthetic tiered topologies, policy-compliant route propagation, legitimate
//! churn and injected routing anomalies.
//!
//! Routes follow the Gao–Rexford model. Routes learned from customers are
//! exported to everyone, routes from peers and providers only to customers.
//! Each AS prefers customer over peer over provider routes, then the shorter
//! path, then the lower next-hop ASN.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use ipnet::{IpNet, Ipv4Net};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asgraph::{build_graph, AsGraph, Asn, Relationship, RelationshipRecord};
use crate::monitor::{Announcement, AnnouncementKind, RibEntry};
use crate::pathdiff::RawHop;
use crate::validator::{OrgTable, Roa};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid topology spec: {0}")]
    InvalidSpec(String),
    #[error("cannot place anomaly {0}: {1}")]
    Placement(usize, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTopologySpec {
    pub tier1: usize,
    pub mid: usize,
    pub stub: usize,
    /// Probability that two mid-tier ASes of the same level peer.
    pub mid_peering: f64,
    /// Probability that a stub has a second provider.
    pub stub_multihoming: f64,
    /// Stub pairs that belong to one organisation and share providers.
    pub sibling_pairs: usize,
    pub seed: u64,
}

impl Default for SynthTopologySpec {
    fn default() -> Self {
        SynthTopologySpec {
            tier1: 4,
            mid: 20,
            stub: 100,
            mid_peering: 0.25,
            stub_multihoming: 0.35,
            sibling_pairs: 4,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Tier1,
    /// Mid-tier level 1 buys transit from tier-1s, level 2 from level 1, …
    Mid(u8),
    Stub,
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub records: Vec<RelationshipRecord>,
    pub graph: AsGraph,
    pub tiers: BTreeMap<Asn, Tier>,
    pub siblings: Vec<(Asn, Asn)>,
}

const TIER1_BASE: u32 = 1000;
const MID_BASE: u32 = 2000;
const STUB_BASE: u32 = 10_000;
const MID_LEVELS: usize = 3;
/// Placement search budget per anomaly.
const MAX_PLACEMENT_CANDIDATES: usize = 256;
const MAX_PLACEMENT_TRIALS: usize = 4000;
const MAX_ACTORS_PER_VICTIM: usize = 32;
/// Undirected hop distance between a hijacker and its victim.
const MIN_ACTOR_HOPS: usize = 4;

impl Topology {
    pub fn asns_in(&self, pred: impl Fn(Tier) -> bool) -> Vec<Asn> {
        self.tiers.iter().filter(|(_, t)| pred(**t)).map(|(a, _)| *a).collect()
    }

    /// One organisation per AS except sibling pairs, which share one.
    pub fn org_table(&self) -> OrgTable {
        let mut orgs: BTreeMap<Asn, String> = self.tiers.keys().map(|a| (*a, format!("ORG-{}", a.0))).collect();
        for (a, b) in &self.siblings {
            let o = format!("ORG-{}", a.0);
            orgs.insert(*b, o);
        }
        OrgTable::new(orgs)
    }
}

/// Deterministic hierarchical topology: a tier-1 peering clique, mid-tier
/// levels each buying transit from the level above, and stubs buying transit
/// from mid-tier ASes.
pub fn generate_topology(spec: &SynthTopologySpec) -> Result<Topology, SynthError> {
    if spec.tier1 == 0 {
        return Err(SynthError::InvalidSpec("need at least one tier-1 AS".into()));
    }
    if spec.stub > 0 && spec.mid == 0 {
        return Err(SynthError::InvalidSpec("stubs need mid-tier providers".into()));
    }
    if 2 * spec.sibling_pairs > spec.stub {
        return Err(SynthError::InvalidSpec("too many sibling pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tier1: Vec<Asn> = (0..spec.tier1 as u32).map(|i| Asn(TIER1_BASE + i)).collect();
    let mids: Vec<Asn> = (0..spec.mid as u32).map(|i| Asn(MID_BASE + i)).collect();
    let stubs: Vec<Asn> = (0..spec.stub as u32).map(|i| Asn(STUB_BASE + i)).collect();

    let mut tiers = BTreeMap::new();
    let mut records = Vec::new();
    for (i, a) in tier1.iter().enumerate() {
        tiers.insert(*a, Tier::Tier1);
        for b in &tier1[i + 1..] {
            records.push(RelationshipRecord::new(*a, *b, Relationship::P2P));
        }
    }

    // split mids into levels of near-equal size
    let levels: Vec<&[Asn]> = {
        let per = spec.mid.div_ceil(MID_LEVELS).max(1);
        mids.chunks(per).collect()
    };
    let mut above: Vec<Asn> = tier1.clone();
    for (lvl, members) in levels.iter().enumerate() {
        for m in members.iter() {
            tiers.insert(*m, Tier::Mid(lvl as u8 + 1));
            let k = if above.len() > 1 && rng.gen_bool(0.6) { 2 } else { 1 };
            for p in above.choose_multiple(&mut rng, k) {
                records.push(RelationshipRecord::new(*p, *m, Relationship::P2C));
            }
        }
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                if rng.gen_bool(spec.mid_peering) {
                    records.push(RelationshipRecord::new(*a, *b, Relationship::P2P));
                }
            }
        }
        above = members.to_vec();
    }

    let mut siblings = Vec::new();
    let mut provider_sets: Vec<Vec<Asn>> = Vec::new();
    for (i, s) in stubs.iter().enumerate() {
        tiers.insert(*s, Tier::Stub);
        let provs: Vec<Asn> = if i % 2 == 1 && i / 2 < spec.sibling_pairs {
            siblings.push((stubs[i - 1], *s));
            provider_sets[i - 1].clone()
        } else {
            let k = if mids.len() > 1 && rng.gen_bool(spec.stub_multihoming) { 2 } else { 1 };
            let mut p: Vec<Asn> = mids.choose_multiple(&mut rng, k).copied().collect();
            p.sort();
            p
        };
        for p in &provs {
            records.push(RelationshipRecord::new(*p, *s, Relationship::P2C));
        }
        provider_sets.push(provs);
    }
    let graph = build_graph(&records).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok(Topology {
        records,
        graph,
        tiers,
        siblings,
    })
}

/// Provider, customer and peer lists by vertex index, in ASN order.
#[derive(Debug, Clone)]
pub struct Adjacency {
    asns: Vec<Asn>,
    index: HashMap<Asn, usize>,
    providers: Vec<Vec<usize>>,
    customers: Vec<Vec<usize>>,
    peers: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn new(graph: &AsGraph) -> Self {
        let n = graph.vertex_count();
        let mut providers = vec![Vec::new(); n];
        let mut customers = vec![Vec::new(); n];
        let mut peers = vec![Vec::new(); n];
        for u in 0..n {
            for &v in graph.customers_of(u) {
                if graph.has_edge(graph.asns()[v], graph.asns()[u]) {
                    peers[u].push(v);
                } else {
                    customers[u].push(v);
                    providers[v].push(u);
                }
            }
        }
        for l in providers.iter_mut().chain(&mut customers).chain(&mut peers) {
            l.sort_unstable();
        }
        Adjacency {
            asns: graph.asns().to_vec(),
            index: graph.asns().iter().enumerate().map(|(i, a)| (*a, i)).collect(),
            providers,
            customers,
            peers,
        }
    }

    pub fn index_of(&self, a: Asn) -> Option<usize> {
        self.index.get(&a).copied()
    }

    pub fn asn(&self, i: usize) -> Asn {
        self.asns[i]
    }

    /// Undirected hop distance from `src` to every AS (`usize::MAX` if
    /// unreachable).
    pub fn hops_from(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        dist[src] = 0;
        let mut queue = std::collections::VecDeque::from([src]);
        while let Some(x) = queue.pop_front() {
            for &y in self.providers[x].iter().chain(&self.customers[x]).chain(&self.peers[x]) {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    pub fn len(&self) -> usize {
        self.asns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asns.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum RouteClass {
    Origin,
    Customer,
    Peer,
    Provider,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Route {
    /// Vertex indexes from the holder to the origin.
    path: Vec<usize>,
    class: RouteClass,
}

/// A route injected at `path[0]` and exported to all neighbours as if it
/// were the AS's own prefix.
#[derive(Debug, Clone)]
struct Source {
    path: Vec<usize>,
}

/// Stable Gao–Rexford routing state for one prefix.
fn propagate(adj: &Adjacency, sources: &[Source], removed: Option<(usize, usize)>) -> Vec<Option<Route>> {
    let n = adj.len();
    let mut routes: Vec<Option<Route>> = vec![None; n];
    let cut = |a: usize, b: usize| removed.is_some_and(|(x, y)| (x, y) == (a, b) || (y, x) == (a, b));
    // ASes on a forged or leaked suffix never accept the announcement
    for s in sources {
        let at = s.path[0];
        if routes[at].is_none() {
            routes[at] = Some(Route {
                path: s.path.clone(),
                class: RouteClass::Origin,
            });
        }
    }
    let offer = |routes: &Vec<Option<Route>>, from: usize, to: usize| -> Option<Vec<usize>> {
        let r = routes[from].as_ref()?;
        if r.path.contains(&to) {
            return None;
        }
        let mut p = Vec::with_capacity(r.path.len() + 1);
        p.push(to);
        p.extend_from_slice(&r.path);
        Some(p)
    };

    // customer routes climb provider links
    let mut heap: BinaryHeap<Reverse<(usize, usize, usize)>> = BinaryHeap::new();
    for (i, r) in routes.iter().enumerate() {
        if let Some(r) = r {
            for &p in &adj.providers[i] {
                heap.push(Reverse((r.path.len(), i, p)));
            }
        }
    }
    while let Some(Reverse((_, from, to))) = heap.pop() {
        if routes[to].is_some() || cut(from, to) {
            continue;
        }
        if let Some(path) = offer(&routes, from, to) {
            routes[to] = Some(Route { path, class: RouteClass::Customer });
            for &p in &adj.providers[to] {
                heap.push(Reverse((routes[to].as_ref().unwrap().path.len(), to, p)));
            }
        }
    }

    // one peer hop from ASes holding customer or own routes
    let mut peer_routes = Vec::new();
    for x in 0..n {
        if routes[x].is_some() {
            continue;
        }
        let best = adj.peers[x]
            .iter()
            .filter(|&&y| !cut(x, y))
            .filter(|&&y| matches!(routes[y].as_ref().map(|r| r.class), Some(RouteClass::Origin | RouteClass::Customer)))
            .filter_map(|&y| offer(&routes, y, x).map(|p| (p.len(), y, p)))
            .min_by_key(|(l, y, _)| (*l, *y));
        if let Some((_, _, path)) = best {
            peer_routes.push((x, path));
        }
    }
    for (x, path) in peer_routes {
        routes[x] = Some(Route { path, class: RouteClass::Peer });
    }

    // provider routes descend customer links
    for (i, r) in routes.iter().enumerate() {
        if let Some(r) = r {
            for &c in &adj.customers[i] {
                heap.push(Reverse((r.path.len(), i, c)));
            }
        }
    }
    while let Some(Reverse((_, from, to))) = heap.pop() {
        if routes[to].is_some() || cut(from, to) {
            continue;
        }
        if let Some(path) = offer(&routes, from, to) {
            routes[to] = Some(Route { path, class: RouteClass::Provider });
            for &c in &adj.customers[to] {
                heap.push(Reverse((routes[to].as_ref().unwrap().path.len(), to, c)));
            }
        }
    }
    routes
}

fn to_asns(adj: &Adjacency, path: &[usize]) -> Vec<Asn> {
    path.iter().map(|&i| adj.asn(i)).collect()
}

fn raw(path: &[Asn]) -> Vec<RawHop> {
    path.iter().map(|a| RawHop::Asn(*a)).collect()
}

/// Best path of every vantage point for every originated prefix.
pub fn propagate_routes(graph: &AsGraph, prefixes: &[(IpNet, Asn)], vantages: &[Asn]) -> Vec<RibEntry> {
    let adj = Adjacency::new(graph);
    let mut out = Vec::new();
    for (prefix, origin) in prefixes {
        let Some(o) = adj.index_of(*origin) else { continue };
        let routes = propagate(&adj, &[Source { path: vec![o] }], None);
        for v in vantages {
            let Some(vi) = adj.index_of(*v) else { continue };
            if let Some(r) = &routes[vi] {
                out.push(RibEntry {
                    vantage: *v,
                    prefix: *prefix,
                    path: raw(&to_asns(&adj, &r.path)),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnomalyKind {
    PrefixOriginHijack,
    SubprefixOriginHijack,
    SubprefixPathHijack,
    RouteLeak,
}

impl AnomalyKind {
    pub fn code(self) -> &'static str {
        match self {
            AnomalyKind::PrefixOriginHijack => "PO",
            AnomalyKind::SubprefixOriginHijack => "SO",
            AnomalyKind::SubprefixPathHijack => "SP",
            AnomalyKind::RouteLeak => "RL",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for AnomalyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "PO" => Ok(AnomalyKind::PrefixOriginHijack),
            "SO" => Ok(AnomalyKind::SubprefixOriginHijack),
            "SP" => Ok(AnomalyKind::SubprefixPathHijack),
            "RL" => Ok(AnomalyKind::RouteLeak),
            _ => Err(format!("unknown anomaly kind {s:?} (expected PO, SO, SP or RL)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedAnomaly {
    pub id: usize,
    pub kind: AnomalyKind,
    pub actor: Asn,
    /// The victim's prefix; for subprefix kinds the hijacked more specific is
    /// `announced`.
    pub victim_prefix: IpNet,
    pub announced: IpNet,
    pub victim: Asn,
    pub start: i64,
    pub end: i64,
    /// Vantage points whose best route changed.
    pub affected_vantages: Vec<Asn>,
}

/// Ground-truth label of one replayed announcement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub index: usize,
    pub anomaly: usize,
    pub kind: AnomalyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub topology: SynthTopologySpec,
    pub mid_vantages: usize,
    pub stub_vantages: usize,
    pub start: i64,
    pub duration_secs: i64,
    pub anomalies: Vec<AnomalyKind>,
    pub anomaly_duration_secs: i64,
    /// Churn-free margin around each anomaly on its victim prefix. Longer than
    /// the detection window keeps unrelated flaps out of the anomaly's events.
    pub anomaly_margin_secs: i64,
    /// Minimum number of vantage points a hijack or leak must reach.
    pub min_affected: usize,
    /// Legitimate announcements to generate, at least.
    pub churn_announcements: usize,
    /// (vantage, prefix) pairs that flap repeatedly, on distinct prefixes.
    pub unstable_pairs: usize,
    /// Share of churn draws that flap an unstable pair.
    pub unstable_flap_share: f64,
    /// Share of churn draws that flap a random (vantage, prefix) pair.
    pub random_flap_share: f64,
    pub link_failures: usize,
    pub moas_flips: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        use AnomalyKind::*;
        ScenarioSpec {
            topology: SynthTopologySpec::default(),
            mid_vantages: 8,
            stub_vantages: 8,
            start: 1_700_000_000,
            duration_secs: 36 * 3600,
            anomalies: vec![
                PrefixOriginHijack,
                SubprefixOriginHijack,
                SubprefixPathHijack,
                RouteLeak,
                PrefixOriginHijack,
                SubprefixOriginHijack,
                SubprefixPathHijack,
                RouteLeak,
                PrefixOriginHijack,
                SubprefixOriginHijack,
            ],
            anomaly_duration_secs: 3 * 3600,
            anomaly_margin_secs: 3 * 3600,
            min_affected: 5,
            churn_announcements: 100_000,
            unstable_pairs: 40,
            unstable_flap_share: 0.3,
            random_flap_share: 0.001,
            link_failures: 3,
            moas_flips: 2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub vantages: Vec<Asn>,
    pub prefixes: Vec<(IpNet, Asn)>,
    pub rib: Vec<RibEntry>,
    pub announcements: Vec<Announcement>,
    pub labels: Vec<Label>,
    pub anomalies: Vec<InjectedAnomaly>,
    pub legit_announcements: usize,
}

impl Scenario {
    pub fn roas(&self) -> Vec<Roa> {
        self.prefixes
            .iter()
            .map(|(p, a)| Roa { prefix: *p, max_length: p.prefix_len(), asn: *a })
            .collect()
    }
}

/// `/16` block for the `k`-th originating AS.
fn prefix_for(k: usize) -> IpNet {
    let base = u32::from(Ipv4Addr::new(10, 0, 0, 0)) + ((k as u32) << 16);
    IpNet::V4(Ipv4Net::new(Ipv4Addr::from(base), 16).expect("valid length"))
}

fn first_subprefix(p: &IpNet) -> IpNet {
    IpNet::new(p.network(), 24).expect("valid length")
}

struct Busy(HashMap<(usize, IpNet), Vec<(i64, i64)>>);

impl Busy {
    fn free(&self, v: usize, p: IpNet, a: i64, b: i64) -> bool {
        self.0
            .get(&(v, p))
            .is_none_or(|iv| iv.iter().all(|&(s, e)| b < s || a > e))
    }

    fn all_free(&self, vs: &[usize], p: IpNet, a: i64, b: i64) -> bool {
        vs.iter().all(|&v| self.free(v, p, a, b))
    }

    fn reserve(&mut self, v: usize, p: IpNet, a: i64, b: i64) {
        self.0.entry((v, p)).or_default().push((a, b));
    }
}

struct Builder<'a> {
    spec: &'a ScenarioSpec,
    adj: Adjacency,
    vantages: Vec<usize>,
    prefixes: Vec<(IpNet, usize)>,
    baseline: Vec<Vec<Option<Route>>>,
    rng: ChaCha8Rng,
    busy: Busy,
    events: Vec<(i64, u64, Announcement, Option<(usize, AnomalyKind)>)>,
    seq: u64,
}

impl Builder<'_> {
    fn push(&mut self, t: i64, v: usize, prefix: IpNet, path: Option<&[usize]>, label: Option<(usize, AnomalyKind)>) {
        let vantage = self.adj.asn(v);
        let ann = match path {
            Some(p) => Announcement {
                t,
                t_us: None,
                vantage,
                kind: AnnouncementKind::Announce,
                prefix,
                path: raw(&to_asns(&self.adj, p)),
            },
            None => Announcement {
                t,
                t_us: None,
                vantage,
                kind: AnnouncementKind::Withdraw,
                prefix,
                path: Vec::new(),
            },
        };
        self.events.push((t, self.seq, ann, label));
        self.seq += 1;
    }

    fn base_path(&self, pi: usize, v: usize) -> Option<&[usize]> {
        self.baseline[pi][v].as_ref().map(|r| r.path.as_slice())
    }

    /// Vantages whose route differs between baseline and `alt`.
    fn diff(&self, pi: usize, alt: &[Option<Route>]) -> Vec<(usize, Vec<usize>)> {
        self.vantages
            .iter()
            .filter_map(|&v| match (&self.baseline[pi][v], &alt[v]) {
                (Some(a), Some(b)) if a.path != b.path => Some((v, b.path.clone())),
                _ => None,
            })
            .collect()
    }

    fn jitter(&mut self) -> i64 {
        self.rng.gen_range(0..120)
    }

    /// Emits a multi-vantage episode: new paths at `start`, baseline back at
    /// `end` (or withdrawals for a prefix absent from the baseline).
    fn episode(
        &mut self,
        prefix: IpNet,
        base: Option<usize>,
        changed: &[(usize, Vec<usize>)],
        start: i64,
        end: i64,
        label: Option<(usize, AnomalyKind)>,
    ) {
        for (v, path) in changed {
            let t = start + self.jitter();
            self.push(t, *v, prefix, Some(path), label);
            let t = end + self.jitter();
            match base {
                Some(pi) => {
                    let p = self.base_path(pi, *v).expect("baseline route").to_vec();
                    self.push(t, *v, prefix, Some(&p), label);
                }
                None => self.push(t, *v, prefix, None, label),
            }
        }
    }

    /// Alternative exportable paths of vantage `v` for prefix `pi` that tie
    /// with its best route on preference class and length, so only a lower
    /// tie-breaker (IGP cost, router id) separates them.
    fn alternatives(&self, pi: usize, v: usize) -> Vec<Vec<usize>> {
        let routes = &self.baseline[pi];
        let Some(best) = &routes[v] else { return Vec::new() };
        if best.class == RouteClass::Origin {
            return Vec::new();
        }
        let mut out = Vec::new();
        let exportable = |n: usize, up: bool| {
            routes[n]
                .as_ref()
                .filter(|r| !r.path.contains(&v))
                .filter(|r| up || matches!(r.class, RouteClass::Origin | RouteClass::Customer))
        };
        let ns = match best.class {
            RouteClass::Provider => &self.adj.providers[v],
            RouteClass::Peer => &self.adj.peers[v],
            _ => &self.adj.customers[v],
        };
        let up = best.class == RouteClass::Provider;
        {
            for &n in ns {
                if let Some(r) = exportable(n, up) {
                    let mut p = vec![v];
                    p.extend_from_slice(&r.path);
                    if p != best.path && p.len() == best.path.len() {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

fn kind_label(kind: AnomalyKind) -> &'static str {
    kind.code()
}

/// Builds the baseline RIBs, legitimate churn and the injected anomalies.
pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    let topology = generate_topology(&spec.topology)?;
    let adj = Adjacency::new(&topology.graph);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let tier1 = topology.asns_in(|t| t == Tier::Tier1);
    let mids = topology.asns_in(|t| matches!(t, Tier::Mid(_)));
    let stubs = topology.asns_in(|t| t == Tier::Stub);
    let mut vantage_asns: Vec<Asn> = tier1.clone();
    vantage_asns.extend(mids.choose_multiple(&mut rng, spec.mid_vantages.min(mids.len())));
    vantage_asns.extend(stubs.choose_multiple(&mut rng, spec.stub_vantages.min(stubs.len())));
    vantage_asns.sort();
    let vantages: Vec<usize> = vantage_asns.iter().map(|a| adj.index_of(*a).expect("known")).collect();

    let prefixes: Vec<(IpNet, usize)> = (0..adj.len()).map(|i| (prefix_for(i), i)).collect();
    let baseline: Vec<Vec<Option<Route>>> = prefixes
        .iter()
        .map(|&(_, o)| propagate(&adj, &[Source { path: vec![o] }], None))
        .collect();

    let mut rib = Vec::new();
    for (pi, (p, _)) in prefixes.iter().enumerate() {
        for &v in &vantages {
            if let Some(r) = &baseline[pi][v] {
                rib.push(RibEntry {
                    vantage: adj.asn(v),
                    prefix: *p,
                    path: raw(&to_asns(&adj, &r.path)),
                });
            }
        }
    }

    let mut b = Builder {
        spec,
        adj,
        vantages,
        prefixes,
        baseline,
        rng,
        busy: Busy(HashMap::new()),
        events: Vec::new(),
        seq: 0,
    };
    let anomalies = inject_anomalies(&mut b, &topology)?;
    let legit_before = b.events.len();
    multi_vantage_churn(&mut b, &topology);
    let multi = b.events.len() - legit_before;
    let labelled = legit_before;
    single_vantage_churn(&mut b, spec.churn_announcements.saturating_sub(multi));

    b.events.sort_by_key(|(t, s, _, _)| (*t, *s));
    let mut announcements = Vec::with_capacity(b.events.len());
    let mut labels = Vec::with_capacity(labelled);
    for (i, (_, _, ann, label)) in b.events.into_iter().enumerate() {
        if let Some((anomaly, kind)) = label {
            labels.push(Label { index: i, anomaly, kind });
        }
        announcements.push(ann);
    }
    let legit_announcements = announcements.len() - labels.len();
    Ok(Scenario {
        vantages: vantage_asns,
        prefixes: b.prefixes.iter().map(|(p, o)| (*p, b.adj.asn(*o))).collect(),
        topology,
        rib,
        announcements,
        labels,
        anomalies,
        legit_announcements,
    })
}

fn inject_anomalies(b: &mut Builder<'_>, topo: &Topology) -> Result<Vec<InjectedAnomaly>, SynthError> {
    let spec = b.spec;
    let n = spec.anomalies.len() as i64;
    let mut out = Vec::new();
    if n == 0 {
        return Ok(out);
    }
    // anomalies start after a two-hour warm-up, evenly spaced
    let lead = 3 * 3600;
    let slot = ((spec.duration_secs - lead - spec.anomaly_duration_secs) / n.max(1)).max(1);
    let vantage_set: BTreeSet<usize> = b.vantages.iter().copied().collect();
    let mut used_prefixes: BTreeSet<usize> = BTreeSet::new();
    let stubs: Vec<usize> = topo.asns_in(|t| t == Tier::Stub).iter().map(|a| b.adj.index_of(*a).unwrap()).collect();
    let stub_set: BTreeSet<usize> = stubs.iter().copied().collect();
    let non_vantage: Vec<usize> = (0..b.adj.len()).filter(|i| !vantage_set.contains(i)).collect();

    for (id, &kind) in spec.anomalies.iter().enumerate() {
        let start = spec.start + lead + id as i64 * slot;
        let end = start + spec.anomaly_duration_secs;
        let label = Some((id, kind));
        let mut candidates = Vec::new();

        // victims are stub prefixes not used by an earlier anomaly
        let mut victims: Vec<usize> = stubs
            .iter()
            .copied()
            .filter(|&s| !vantage_set.contains(&s) && !used_prefixes.contains(&s))
            .collect();
        victims.shuffle(&mut b.rng);
        let mut trials = 0;
        for &victim in &victims {
            if candidates.len() >= MAX_PLACEMENT_CANDIDATES || trials >= MAX_PLACEMENT_TRIALS {
                break;
            }
            let pi = victim;
            let on_path: BTreeSet<usize> = b
                .vantages
                .iter()
                .filter_map(|&v| b.baseline[pi][v].as_ref())
                .flat_map(|r| r.path.iter().copied())
                .collect();
            // ASes close to the victim play nearly the same routing role
            let hops = b.adj.hops_from(victim);
            let twin = |a: usize| b.adj.providers[a].iter().any(|p| b.adj.providers[victim].contains(p));
            let actors: Vec<usize> = match kind {
                AnomalyKind::RouteLeak => non_vantage
                    .iter()
                    .copied()
                    .filter(|&l| stub_set.contains(&l) && l != victim && b.adj.providers[l].len() >= 2)
                    .filter(|&l| !on_path.contains(&l) && !twin(l))
                    .filter(|&l| b.baseline[pi][l].as_ref().is_some_and(|r| r.class == RouteClass::Provider))
                    .collect(),
                _ => non_vantage
                    .iter()
                    .copied()
                    .filter(|&a| hops[a] >= MIN_ACTOR_HOPS && !on_path.contains(&a))
                    .collect(),
            };
            let mut actors = actors;
            actors.shuffle(&mut b.rng);
            for actor in actors.into_iter().take(MAX_ACTORS_PER_VICTIM) {
                trials += 1;
                let (prefix, base, sources) = match kind {
                    AnomalyKind::PrefixOriginHijack => (
                        b.prefixes[pi].0,
                        Some(pi),
                        vec![Source { path: vec![victim] }, Source { path: vec![actor] }],
                    ),
                    AnomalyKind::SubprefixOriginHijack => {
                        (first_subprefix(&b.prefixes[pi].0), None, vec![Source { path: vec![actor] }])
                    }
                    AnomalyKind::SubprefixPathHijack => {
                        (first_subprefix(&b.prefixes[pi].0), None, vec![Source { path: vec![actor, victim] }])
                    }
                    AnomalyKind::RouteLeak => {
                        let leaked = b.baseline[pi][actor].as_ref().unwrap().path.clone();
                        (b.prefixes[pi].0, Some(pi), vec![Source { path: vec![victim] }, Source { path: leaked }])
                    }
                };
                let routes = propagate(&b.adj, &sources, None);
                let changed: Vec<(usize, Vec<usize>)> = match base {
                    Some(_) => b.diff(pi, &routes),
                    None => b
                        .vantages
                        .iter()
                        .filter_map(|&v| routes[v].as_ref().map(|r| (v, r.path.clone())))
                        .collect(),
                };
                // every changed path must carry the actor
                if changed.len() >= spec.min_affected && changed.iter().all(|(_, p)| p.contains(&actor)) {
                    candidates.push((victim, actor, prefix, base, changed));
                }
            }
        }
        if candidates.is_empty() {
            return Err(SynthError::Placement(id, format!("no {} placement reaches {} vantages", kind_label(kind), spec.min_affected)));
        }
        let (victim, actor, prefix, base, changed) = candidates.swap_remove(b.rng.gen_range(0..candidates.len()));
        used_prefixes.insert(victim);
        let victim_prefix = b.prefixes[victim].0;
        for &v in &b.vantages.clone() {
            b.busy.reserve(v, victim_prefix, start - spec.anomaly_margin_secs, end + spec.anomaly_margin_secs);
        }
        b.episode(prefix, base, &changed, start, end, label);
        let mut affected: Vec<Asn> = changed.iter().map(|(v, _)| b.adj.asn(*v)).collect();
        affected.sort();
        out.push(InjectedAnomaly {
            id,
            kind,
            actor: b.adj.asn(actor),
            victim_prefix,
            announced: prefix,
            victim: b.adj.asn(victim),
            start,
            end,
            affected_vantages: affected,
        });
    }
    Ok(out)
}

/// Link failures at multi-homed stubs and origin moves between siblings.
fn multi_vantage_churn(b: &mut Builder<'_>, topo: &Topology) {
    let spec = b.spec;
    let span = (spec.start + 2 * 3600, spec.start + spec.duration_secs - 3600);
    let multihomed: Vec<usize> = topo
        .asns_in(|t| t == Tier::Stub)
        .iter()
        .map(|a| b.adj.index_of(*a).unwrap())
        .filter(|&s| b.adj.providers[s].len() >= 2)
        .collect();
    let mut placed = 0;
    let mut attempts = 0;
    while placed < spec.link_failures && attempts < 1000 && !multihomed.is_empty() {
        attempts += 1;
        let s = *multihomed.choose(&mut b.rng).unwrap();
        let p = *b.adj.providers[s].choose(&mut b.rng).unwrap();
        let start = b.rng.gen_range(span.0..span.1);
        let end = start + b.rng.gen_range(1200..3600);
        let prefix = b.prefixes[s].0;
        let vs = b.vantages.clone();
        if !b.busy.all_free(&vs, prefix, start - 600, end + 600) {
            continue;
        }
        let routes = propagate(&b.adj, &[Source { path: vec![s] }], Some((s, p)));
        let changed = b.diff(s, &routes);
        if changed.is_empty() {
            continue;
        }
        for &v in &vs {
            b.busy.reserve(v, prefix, start - 600, end + 600);
        }
        b.episode(prefix, Some(s), &changed, start, end, None);
        placed += 1;
    }

    let siblings: Vec<(usize, usize)> = topo
        .siblings
        .iter()
        .map(|(x, y)| (b.adj.index_of(*x).unwrap(), b.adj.index_of(*y).unwrap()))
        .collect();
    placed = 0;
    attempts = 0;
    while placed < spec.moas_flips && attempts < 1000 && !siblings.is_empty() {
        attempts += 1;
        let (x, y) = *siblings.choose(&mut b.rng).unwrap();
        let (from, to) = if b.rng.gen_bool(0.5) { (x, y) } else { (y, x) };
        let start = b.rng.gen_range(span.0..span.1);
        let end = start + b.rng.gen_range(1800..5400);
        let prefix = b.prefixes[from].0;
        let vs = b.vantages.clone();
        if !b.busy.all_free(&vs, prefix, start - 600, end + 600) {
            continue;
        }
        let routes = propagate(&b.adj, &[Source { path: vec![to] }], None);
        let changed = b.diff(from, &routes);
        if changed.is_empty() {
            continue;
        }
        for &v in &vs {
            b.busy.reserve(v, prefix, start - 600, end + 600);
        }
        b.episode(prefix, Some(from), &changed, start, end, None);
        placed += 1;
    }
}

/// Duplicates, prepended re-announcements and single-vantage flaps until
/// `target` announcements exist.
fn single_vantage_churn(b: &mut Builder<'_>, target: usize) {
    let spec = b.spec;
    let span = (spec.start, spec.start + spec.duration_secs);
    let pairs: Vec<(usize, usize)> = b
        .vantages
        .iter()
        .flat_map(|&v| (0..b.prefixes.len()).map(move |pi| (v, pi)))
        .collect();
    let flappable: Vec<(usize, usize, Vec<Vec<usize>>)> = pairs
        .iter()
        .filter_map(|&(v, pi)| {
            let alts = b.alternatives(pi, v);
            (!alts.is_empty()).then_some((v, pi, alts))
        })
        .collect();
    // unstable pairs sit on distinct prefixes
    let mut unstable = Vec::new();
    let mut taken = BTreeSet::new();
    let mut order: Vec<usize> = (0..flappable.len()).collect();
    order.shuffle(&mut b.rng);
    for i in order {
        if unstable.len() >= spec.unstable_pairs {
            break;
        }
        if taken.insert(flappable[i].1) {
            unstable.push(i);
        }
    }

    let start_len = b.events.len();
    let mut guard = 0usize;
    while b.events.len() - start_len < target && guard < target * 20 + 1000 {
        guard += 1;
        let t = b.rng.gen_range(span.0..span.1);
        let roll: f64 = b.rng.gen();
        let flap_share = spec.unstable_flap_share + spec.random_flap_share;
        if roll < flap_share && !flappable.is_empty() {
            let idx = if roll < spec.unstable_flap_share && !unstable.is_empty() {
                unstable[b.rng.gen_range(0..unstable.len())]
            } else {
                b.rng.gen_range(0..flappable.len())
            };
            let (v, pi, alts) = &flappable[idx];
            let (v, pi) = (*v, *pi);
            let d = b.rng.gen_range(60..1800);
            let prefix = b.prefixes[pi].0;
            if !b.busy.free(v, prefix, t - 30, t + d + 30) {
                continue;
            }
            b.busy.reserve(v, prefix, t - 30, t + d + 30);
            let alt = alts[b.rng.gen_range(0..alts.len())].clone();
            let best = b.base_path(pi, v).expect("baseline").to_vec();
            b.push(t, v, prefix, Some(&alt), None);
            b.push(t + d, v, prefix, Some(&best), None);
        } else {
            let (v, pi) = pairs[b.rng.gen_range(0..pairs.len())];
            let prefix = b.prefixes[pi].0;
            let Some(best) = b.base_path(pi, v).map(<[usize]>::to_vec) else { continue };
            if !b.busy.free(v, prefix, t, t) {
                continue;
            }
            let mut path = best;
            if roll > 0.9 {
                // origin prepending, collapsed away by the monitor
                let o = *path.last().unwrap();
                path.extend([o, o]);
            }
            b.push(t, v, prefix, Some(&path), None);
        }
    }
}
