//! Exportable statistics over a trained embedding: pair-set CDF tables and a
//! deterministic 3-D projection (two principal components of the rejections
//! from `r`, plus the projection on `r`).

use std::collections::{BTreeSet, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingModel, Result};
use crate::asgraph::{AsGraph, Asn};

/// Above this many vertices pair sets are sampled instead of enumerated.
const ENUMERATION_LIMIT: usize = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPairs {
    pub name: String,
    pub pairs: Vec<(Asn, Asn)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedScores {
    pub name: String,
    /// Ascending pair differences.
    pub values: Vec<f64>,
}

impl NamedScores {
    pub fn median(&self) -> Option<f64> {
        let n = self.values.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(self.values[n / 2]),
            _ => Some((self.values[n / 2 - 1] + self.values[n / 2]) / 2.0),
        }
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

/// Sorted pair differences for every named pair set.
pub fn proximity_stats(model: &EmbeddingModel, sets: &[NamedPairs]) -> Result<Vec<NamedScores>> {
    sets.iter()
        .map(|set| {
            let mut values = set
                .pairs
                .iter()
                .map(|&(u, v)| model.pair_difference(u, v))
                .collect::<Result<Vec<f64>>>()?;
            values.sort_by(f64::total_cmp);
            Ok(NamedScores {
                name: set.name.clone(),
                values,
            })
        })
        .collect()
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn pick(name: &str, mut candidates: Vec<(usize, usize)>, per_set: usize, graph: &AsGraph, rng: &mut ChaCha8Rng) -> NamedPairs {
    candidates.sort_unstable();
    candidates.dedup();
    let chosen: Vec<(usize, usize)> = if candidates.len() <= per_set {
        candidates
    } else {
        let mut idx = sample(rng, candidates.len(), per_set).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| candidates[i]).collect()
    };
    let asns = graph.asns();
    NamedPairs {
        name: name.to_string(),
        pairs: chosen.into_iter().map(|(u, v)| (asns[u], asns[v])).collect(),
    }
}

/// Pair sets mirroring the proximity and hierarchy study:
///
/// * `S0`/`H0`/`N0`: P2P, P2C and unconnected pairs with neighbor Jaccard < 10%
/// * `N1`..`N5`: unconnected pairs by neighbor Jaccard bucket of width 20%
/// * `S1`: all P2P pairs, `H1`..`H6`: pairs whose shortest pure P2C chain
///   has exactly k hops (provider first)
///
/// Each set holds at most `per_set` pairs.
pub fn sample_pair_sets(graph: &AsGraph, per_set: usize, seed: u64) -> Vec<NamedPairs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.vertex_count();
    let neighbors: Vec<BTreeSet<usize>> = (0..n).map(|i| graph.neighbors(i)).collect();
    let connected = |a: usize, b: usize| neighbors[a].contains(&b);
    let is_peer = |a: usize, b: usize| {
        graph.customers_of(a).contains(&b) && graph.customers_of(b).contains(&a)
    };

    let mut p2p = Vec::new();
    let mut p2c = Vec::new();
    for u in 0..n {
        for &v in graph.customers_of(u) {
            if is_peer(u, v) {
                if u < v {
                    p2p.push((u, v));
                }
            } else {
                p2c.push((u, v));
            }
        }
    }

    // unconnected candidates
    let mut unconnected = Vec::new();
    if n <= ENUMERATION_LIMIT {
        for u in 0..n {
            for v in (u + 1)..n {
                if !connected(u, v) {
                    unconnected.push((u, v));
                }
            }
        }
    } else {
        let budget = per_set.saturating_mul(40).max(1000);
        for _ in 0..budget {
            let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if u != v && !connected(u, v) {
                unconnected.push((u.min(v), u.max(v)));
            }
            // two-hop pairs reach the high-overlap buckets
            let w = rng.gen_range(0..n);
            let nb: Vec<usize> = neighbors[w].iter().copied().collect();
            if nb.len() >= 2 {
                let (a, b) = (nb[rng.gen_range(0..nb.len())], nb[rng.gen_range(0..nb.len())]);
                if a != b && !connected(a, b) {
                    unconnected.push((a.min(b), a.max(b)));
                }
            }
        }
    }

    let ji = |&(u, v): &(usize, usize)| jaccard(&neighbors[u], &neighbors[v]);
    let low = |pairs: &[(usize, usize)]| pairs.iter().copied().filter(|p| ji(p) < 0.1).collect::<Vec<_>>();
    let bucket = |lo: f64, hi: f64| {
        unconnected
            .iter()
            .copied()
            .filter(|p| {
                let j = ji(p);
                j >= lo && j < hi
            })
            .collect::<Vec<_>>()
    };

    let mut sets = vec![
        pick("S0", low(&p2p), per_set, graph, &mut rng),
        pick("H0", low(&p2c), per_set, graph, &mut rng),
        pick("N0", low(&unconnected), per_set, graph, &mut rng),
        pick("N1", bucket(0.0, 0.2), per_set, graph, &mut rng),
        pick("N2", bucket(0.2, 0.4), per_set, graph, &mut rng),
        pick("N3", bucket(0.4, 0.6), per_set, graph, &mut rng),
        pick("N4", bucket(0.6, 0.8), per_set, graph, &mut rng),
        pick("N5", bucket(0.8, f64::INFINITY), per_set, graph, &mut rng),
        pick("S1", p2p.clone(), per_set, graph, &mut rng),
    ];

    let sources: Vec<usize> = if n <= ENUMERATION_LIMIT {
        (0..n).collect()
    } else {
        let mut s = sample(&mut rng, n, ENUMERATION_LIMIT).into_vec();
        s.sort_unstable();
        s
    };
    let mut chains: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 7];
    for &src in &sources {
        let mut dist = vec![usize::MAX; n];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(a) = queue.pop_front() {
            if dist[a] >= 6 {
                continue;
            }
            for &b in graph.customers_of(a) {
                if dist[b] == usize::MAX && !is_peer(a, b) {
                    dist[b] = dist[a] + 1;
                    chains[dist[b]].push((src, b));
                    queue.push_back(b);
                }
            }
        }
    }
    for (k, pairs) in chains.into_iter().enumerate().skip(1) {
        sets.push(pick(&format!("H{k}"), pairs, per_set, graph, &mut rng));
    }
    sets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub asn: Asn,
    pub x: f64,
    pub y: f64,
    /// Projection on the hierarchy direction.
    pub z: f64,
}

fn power_iteration(cov: &[f64], d: usize, deflate: &[Vec<f64>]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 * 0.618_033_988_75).fract()).collect();
    for _ in 0..500 {
        for e in deflate {
            let p: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= p * b);
        }
        let mut next = vec![0.0; d];
        for i in 0..d {
            next[i] = (0..d).map(|j| cov[i * d + j] * v[j]).sum();
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return vec![0.0; d];
        }
        next.iter_mut().for_each(|a| *a /= norm);
        v = next;
    }
    // sign convention: largest-magnitude component positive
    let (imax, _) = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, a)| if a.abs() > acc.1 { (i, a.abs()) } else { acc });
    if v[imax] < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
    v
}

/// Projects the requested ASes onto the top two principal components of the
/// rejections of every AS in the model; `z` is the projection on `r`.
pub fn planar_projection(model: &EmbeddingModel, asns: &[Asn]) -> Result<Vec<PlanarPoint>> {
    let d = model.dim();
    let n = model.len();
    let rejections: Vec<Vec<f64>> = model
        .asns()
        .iter()
        .map(|&a| model.rejection(a))
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; d];
    for r in &rejections {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut cov = vec![0.0; d * d];
    for r in &rejections {
        for i in 0..d {
            let ci = r[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += ci * (r[j] - mean[j]);
            }
        }
    }
    let e1 = power_iteration(&cov, d, &[]);
    let e2 = power_iteration(&cov, d, std::slice::from_ref(&e1));
    asns.iter()
        .map(|&a| {
            let rej = model.rejection(a)?;
            let c: Vec<f64> = rej.iter().zip(&mean).map(|(v, m)| v - m).collect();
            Ok(PlanarPoint {
                asn: a,
                x: c.iter().zip(&e1).map(|(a, b)| a * b).sum(),
                y: c.iter().zip(&e2).map(|(a, b)| a * b).sum(),
                z: model.hierarchy_projection(a)?,
            })
        })
        .collect()
}
