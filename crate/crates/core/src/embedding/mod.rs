//! Semantics-aware AS embedding.
//!
//! Every AS gets a vector `x`. Two shared parameters shape the geometry:
//! a positive weight vector `l` (derived from the free vector `l_raw` by a
//! softmax floored at `alpha`) for the proximity term, and a unit direction
//! `r` along which the provider-to-customer hierarchy descends.
//!
//! ```text
//! p_score(u, v) = (x_v - x_u)ᵀ ((x_v - x_u) ⊙ l)
//! h_score(u, v) = (x_v - x_u)ᵀ r
//! score(u, v)   = -p_score(u, v) + h_score(u, v)
//! D(u, v)       = |p_score(u, v)| + |h_score(u, v)|
//! ```
//!
//! Training minimises `-ln σ(score(pos) - score(neg))` over every edge paired
//! with sampled non-edges.

mod analysis;
mod io;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asgraph::Asn;

pub use analysis::{
    planar_projection, proximity_stats, sample_pair_sets, NamedPairs, NamedScores, PlanarPoint,
};
pub use train::{train, train_observed, TrainOutcome, TrainProgress};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("AS{0} is not part of the model")]
    UnknownAsn(Asn),
    #[error("cannot train on an empty graph")]
    EmptyGraph,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// Clamp applied to the score difference before the logistic function.
pub const SCORE_DIFF_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Negative samples drawn per positive edge.
    pub negatives: usize,
    /// Lower bound on every component of `l`.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        let dim = 128;
        Hyperparams {
            dim,
            epochs: 1000,
            batch_size: 1024,
            learning_rate: 1e-5,
            negatives: 10,
            alpha: 1e-6 / dim as f64,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Defaults for a given dimension, with `alpha` rescaled to `1e-6 / dim`.
    pub fn with_dim(dim: usize) -> Self {
        Hyperparams {
            dim,
            alpha: 1e-6 / dim as f64,
            ..Hyperparams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EmbeddingError::InvalidHyperparams(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.negatives < 1 {
            return bad("negatives must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.alpha > 0.0) || self.alpha * self.dim as f64 >= 1.0 {
            return bad("alpha must be positive and alpha * dim < 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Trained (or in-training) embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    asns: Vec<Asn>,
    index: HashMap<Asn, usize>,
    /// Row-major `asns.len() x dim`.
    x: Vec<f64>,
    l_raw: Vec<f64>,
    r: Vec<f64>,
    l: Vec<f64>,
    hyper: Hyperparams,
    fingerprint: [u8; 32],
}

/// `alpha + (1 - dim * alpha) * softmax(raw)`: sums to one, every entry ≥ alpha.
pub fn floored_softmax(raw: &[f64], alpha: f64) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let scale = 1.0 - alpha * raw.len() as f64;
    exps.iter().map(|e| alpha + scale * e / total).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `-ln σ(z)` with `z` clamped to `±SCORE_DIFF_CLAMP`.
pub fn logistic_loss(score_diff: f64) -> f64 {
    let z = score_diff.clamp(-SCORE_DIFF_CLAMP, SCORE_DIFF_CLAMP);
    // softplus(-z)
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// σ(-z) for the clamped `z`, i.e. `-d loss / d z`.
fn logistic_weight(score_diff: f64) -> f64 {
    let z = score_diff.clamp(-SCORE_DIFF_CLAMP, SCORE_DIFF_CLAMP);
    1.0 / (1.0 + z.exp())
}

/// Gradient of one training instance's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// Per-vertex gradient of `x`, one entry per distinct AS in the instance.
    pub x: Vec<(Asn, Vec<f64>)>,
    pub l_raw: Vec<f64>,
    pub r: Vec<f64>,
}

impl Gradients {
    /// Gradient with respect to `x_asn`; zero for ASes outside the instance.
    pub fn x_of(&self, asn: Asn) -> Vec<f64> {
        self.x
            .iter()
            .find(|(a, _)| *a == asn)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; self.r.len()])
    }
}

impl EmbeddingModel {
    /// Builds a model from explicit parameters. `vectors` must all have
    /// length `hyper.dim`; `r` is normalised to unit length.
    pub fn from_parts(
        vectors: Vec<(Asn, Vec<f64>)>,
        l_raw: Vec<f64>,
        r: Vec<f64>,
        hyper: Hyperparams,
    ) -> Result<Self> {
        hyper.validate()?;
        let d = hyper.dim;
        if l_raw.len() != d || r.len() != d || vectors.iter().any(|(_, v)| v.len() != d) {
            return Err(EmbeddingError::Format("dimension mismatch".into()));
        }
        let mut vectors = vectors;
        vectors.sort_by_key(|(a, _)| *a);
        vectors.dedup_by_key(|(a, _)| *a);
        let asns: Vec<Asn> = vectors.iter().map(|(a, _)| *a).collect();
        let x: Vec<f64> = vectors.into_iter().flat_map(|(_, v)| v).collect();
        let mut model = EmbeddingModel::new_raw(asns, x, l_raw, r, hyper, [0; 32]);
        model.normalize_r();
        Ok(model)
    }

    pub(crate) fn new_raw(
        asns: Vec<Asn>,
        x: Vec<f64>,
        l_raw: Vec<f64>,
        r: Vec<f64>,
        hyper: Hyperparams,
        fingerprint: [u8; 32],
    ) -> Self {
        let index = asns.iter().enumerate().map(|(i, a)| (*a, i)).collect();
        let l = floored_softmax(&l_raw, hyper.alpha);
        EmbeddingModel {
            asns,
            index,
            x,
            l_raw,
            r,
            l,
            hyper,
            fingerprint,
        }
    }

    pub(crate) fn normalize_r(&mut self) {
        let norm = dot(&self.r, &self.r).sqrt();
        if norm > 0.0 {
            self.r.iter_mut().for_each(|v| *v /= norm);
        }
    }

    pub(crate) fn refresh_weights(&mut self) {
        self.l = floored_softmax(&self.l_raw, self.hyper.alpha);
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn asns(&self) -> &[Asn] {
        &self.asns
    }

    pub fn len(&self) -> usize {
        self.asns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asns.is_empty()
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.index.contains_key(&asn)
    }

    pub fn index_of(&self, asn: Asn) -> Option<usize> {
        self.index.get(&asn).copied()
    }

    /// Digest of the training graph (zero when built by hand).
    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn vector(&self, asn: Asn) -> Result<&[f64]> {
        let i = self.idx(asn)?;
        Ok(self.row(i))
    }

    pub fn weights(&self) -> &[f64] {
        &self.l
    }

    pub fn weights_raw(&self) -> &[f64] {
        &self.l_raw
    }

    pub fn direction(&self) -> &[f64] {
        &self.r
    }

    fn idx(&self, asn: Asn) -> Result<usize> {
        self.index_of(asn).ok_or(EmbeddingError::UnknownAsn(asn))
    }

    pub(crate) fn row(&self, i: usize) -> &[f64] {
        let d = self.hyper.dim;
        &self.x[i * d..(i + 1) * d]
    }

    /// `(p_score, h_score)` by vertex index, in one pass.
    pub(crate) fn scores_idx(&self, u: usize, v: usize) -> (f64, f64) {
        let (xu, xv) = (self.row(u), self.row(v));
        let mut p = 0.0;
        let mut h = 0.0;
        for i in 0..self.hyper.dim {
            let diff = xv[i] - xu[i];
            p += diff * diff * self.l[i];
            h += diff * self.r[i];
        }
        (p, h)
    }

    pub(crate) fn pair_difference_idx(&self, u: usize, v: usize) -> f64 {
        let (p, h) = self.scores_idx(u, v);
        p.abs() + h.abs()
    }

    pub fn p_score(&self, u: Asn, v: Asn) -> Result<f64> {
        Ok(self.scores_idx(self.idx(u)?, self.idx(v)?).0)
    }

    pub fn h_score(&self, u: Asn, v: Asn) -> Result<f64> {
        Ok(self.scores_idx(self.idx(u)?, self.idx(v)?).1)
    }

    pub fn score(&self, u: Asn, v: Asn) -> Result<f64> {
        let (p, h) = self.scores_idx(self.idx(u)?, self.idx(v)?);
        Ok(-p + h)
    }

    /// Routing-role difference `|p_score| + |h_score|`.
    pub fn pair_difference(&self, u: Asn, v: Asn) -> Result<f64> {
        Ok(self.pair_difference_idx(self.idx(u)?, self.idx(v)?))
    }

    pub fn loss(&self, positive: (Asn, Asn), negative: (Asn, Asn)) -> Result<f64> {
        let pos = self.score(positive.0, positive.1)?;
        let neg = self.score(negative.0, negative.1)?;
        Ok(logistic_loss(pos - neg))
    }

    pub fn gradients(&self, positive: (Asn, Asn), negative: (Asn, Asn)) -> Result<Gradients> {
        let idx = [
            self.idx(positive.0)?,
            self.idx(positive.1)?,
            self.idx(negative.0)?,
            self.idx(negative.1)?,
        ];
        let d = self.hyper.dim;
        let mut gx: Vec<(usize, Vec<f64>)> = Vec::with_capacity(4);
        let mut gl = vec![0.0; d];
        let mut gr = vec![0.0; d];
        let loss = self.accumulate_instance(idx, 1.0, &mut |vertex, i, g| {
            match gx.iter_mut().find(|(v, _)| *v == vertex) {
                Some((_, acc)) => acc[i] += g,
                None => {
                    let mut acc = vec![0.0; d];
                    acc[i] = g;
                    gx.push((vertex, acc));
                }
            }
        }, &mut gl, &mut gr);
        let gl_raw = self.weights_to_raw_gradient(&gl);
        gx.sort_by_key(|(v, _)| *v);
        Ok(Gradients {
            loss,
            x: gx.into_iter().map(|(v, g)| (self.asns[v], g)).collect(),
            l_raw: gl_raw,
            r: gr,
        })
    }

    /// Adds `scale * dL/dθ` for one instance into the sinks and returns the loss.
    ///
    /// `grad_l` receives the gradient with respect to `l` itself; callers map
    /// it through the softmax Jacobian once per batch.
    pub(crate) fn accumulate_instance(
        &self,
        [u, v, nu, nv]: [usize; 4],
        scale: f64,
        grad_x: &mut dyn FnMut(usize, usize, f64),
        grad_l: &mut [f64],
        grad_r: &mut [f64],
    ) -> f64 {
        let d = self.hyper.dim;
        let (xu, xv, xnu, xnv) = (self.row(u), self.row(v), self.row(nu), self.row(nv));
        let (pp, hp) = self.scores_idx(u, v);
        let (pn, hn) = self.scores_idx(nu, nv);
        let diff = (-pp + hp) - (-pn + hn);
        let loss = logistic_loss(diff);
        // dL/d(diff) = -σ(-diff)
        let w = -logistic_weight(diff) * scale;
        for i in 0..d {
            let a = xv[i] - xu[i];
            let b = xnv[i] - xnu[i];
            // d diff / d a = -2 l a + r ; d diff / d b = 2 l b - r
            let ga = w * (-2.0 * self.l[i] * a + self.r[i]);
            let gb = w * (2.0 * self.l[i] * b - self.r[i]);
            grad_x(v, i, ga);
            grad_x(u, i, -ga);
            grad_x(nv, i, gb);
            grad_x(nu, i, -gb);
            grad_l[i] += w * (b * b - a * a);
            grad_r[i] += w * (a - b);
        }
        loss
    }

    /// Chain rule through `l = alpha + (1 - d alpha) softmax(l_raw)`.
    pub(crate) fn weights_to_raw_gradient(&self, grad_l: &[f64]) -> Vec<f64> {
        let d = self.hyper.dim as f64;
        let scale = 1.0 - self.hyper.alpha * d;
        // softmax values recovered from l
        let s: Vec<f64> = self.l.iter().map(|li| (li - self.hyper.alpha) / scale).collect();
        let sg = dot(&s, grad_l);
        s.iter()
            .zip(grad_l)
            .map(|(si, gi)| scale * si * (gi - sg))
            .collect()
    }

    /// Signed coordinate of `x_u` along `r`.
    pub fn hierarchy_projection(&self, u: Asn) -> Result<f64> {
        Ok(dot(self.vector(u)?, &self.r))
    }

    /// Component of `x_u` orthogonal to `r`.
    pub fn rejection(&self, u: Asn) -> Result<Vec<f64>> {
        let xu = self.vector(u)?;
        let proj = dot(xu, &self.r);
        Ok(xu.iter().zip(&self.r).map(|(x, r)| x - proj * r).collect())
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.x, &mut self.l_raw, &mut self.r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hyper(dim: usize) -> Hyperparams {
        Hyperparams {
            alpha: 1e-3,
            ..Hyperparams::with_dim(dim)
        }
    }

    fn basis_model() -> EmbeddingModel {
        let d = 4;
        let mut r = vec![0.0; d];
        r[1] = 1.0;
        EmbeddingModel::from_parts(
            vec![
                (Asn(1), vec![0.0; d]),
                (Asn(2), vec![1.0, 0.0, 0.0, 0.0]),
                (Asn(3), r.clone()),
                (Asn(4), vec![0.0, 2.0, 0.0, 0.0]),
            ],
            vec![0.0; d],
            r,
            Hyperparams::with_dim(d),
        )
        .unwrap()
    }

    pub(crate) fn random_model(n: u32, d: usize, seed: u64) -> EmbeddingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (1..=n)
            .map(|a| (Asn(a), (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let l_raw = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        EmbeddingModel::from_parts(vectors, l_raw, r, hyper(d)).unwrap()
    }

    #[test]
    fn p_score_examples() {
        let m = basis_model();
        assert_eq!(m.p_score(Asn(1), Asn(1)).unwrap(), 0.0);
        // uniform l = 1/d when l_raw = 0
        let expected = 0.25;
        assert!((m.p_score(Asn(1), Asn(2)).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(m.p_score(Asn(1), Asn(99)), Err(EmbeddingError::UnknownAsn(Asn(99)))));
    }

    #[test]
    fn p_score_matches_scalar_loop() {
        let m = random_model(20, 8, 1);
        for u in 1..=20 {
            for v in 1..=20 {
                let (xu, xv) = (m.vector(Asn(u)).unwrap(), m.vector(Asn(v)).unwrap());
                let mut oracle = 0.0;
                for i in 0..8 {
                    oracle += m.weights()[i] * (xv[i] - xu[i]).powi(2);
                }
                let p = m.p_score(Asn(u), Asn(v)).unwrap();
                assert!((p - oracle).abs() < 1e-9);
                assert!(p >= 0.0);
                assert!((p - m.p_score(Asn(v), Asn(u)).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h_score_examples() {
        let m = basis_model();
        assert_eq!(m.h_score(Asn(3), Asn(3)).unwrap(), 0.0);
        assert!((m.h_score(Asn(1), Asn(3)).unwrap() - 1.0).abs() < 1e-15);
        let m = random_model(10, 6, 2);
        for (u, v, w) in [(1, 2, 3), (4, 9, 7), (10, 1, 5)] {
            let (u, v, w) = (Asn(u), Asn(v), Asn(w));
            let direct = m.h_score(u, v).unwrap();
            let via = m.h_score(u, w).unwrap() + m.h_score(w, v).unwrap();
            assert!((direct - via).abs() < 1e-9);
            assert!((direct + m.h_score(v, u).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn score_and_difference() {
        let m = random_model(10, 6, 3);
        for (u, v) in [(1, 2), (3, 8), (5, 5)] {
            let (u, v) = (Asn(u), Asn(v));
            let p = m.p_score(u, v).unwrap();
            let h = m.h_score(u, v).unwrap();
            assert_eq!(m.score(u, v).unwrap(), -p + h);
            assert_eq!(m.pair_difference(u, v).unwrap(), p.abs() + h.abs());
            assert!((m.pair_difference(u, v).unwrap() - m.pair_difference(v, u).unwrap()).abs() < 1e-9);
        }
        assert_eq!(m.pair_difference(Asn(4), Asn(4)).unwrap(), 0.0);
        // p = 0.5, h = 0.2 and h = -0.2 states
        assert!(((-0.5f64) + 0.2 - (-0.3)).abs() < 1e-15);
        assert!(((0.5f64).abs() + (-0.2f64).abs() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn loss_values() {
        assert!((logistic_loss(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        // ln(1 + e^-30) and 30 + ln(1 + e^-30), evaluated at 50 digits with mpmath
        assert!((logistic_loss(30.0) - 9.357622968839737e-14).abs() < 1e-26);
        assert!((logistic_loss(40.0) - 9.357622968839737e-14).abs() < 1e-26);
        assert!((logistic_loss(-30.0) - 30.000000000000092).abs() < 1e-12);
        assert!(logistic_loss(-1e9).is_finite());
        let m = random_model(6, 4, 4);
        let l = m.loss((Asn(1), Asn(2)), (Asn(3), Asn(4))).unwrap();
        assert!(l > 0.0 && l.is_finite());
    }

    #[test]
    fn weights_are_floored_simplex() {
        let raw = vec![50.0, -50.0, 0.0, 3.0];
        let l = floored_softmax(&raw, 1e-3);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(l.iter().all(|&v| v >= 1e-3));
    }

    fn finite_difference_check(m: &EmbeddingModel, pos: (Asn, Asn), neg: (Asn, Asn)) {
        let g = m.gradients(pos, neg).unwrap();
        let h = 1e-5;
        let loss_of = |mm: &EmbeddingModel| mm.loss(pos, neg).unwrap();
        let close = |analytic: f64, numeric: f64| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            (analytic - numeric).abs() / denom < 1e-4
        };
        let d = m.dim();
        for asn in [pos.0, pos.1, neg.0, neg.1] {
            let gi = g.x_of(asn);
            let row = m.index_of(asn).unwrap();
            for i in 0..d {
                let mut plus = m.clone();
                plus.params_mut().0[row * d + i] += h;
                let mut minus = m.clone();
                minus.params_mut().0[row * d + i] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                assert!(close(gi[i], numeric), "x[{asn}][{i}] {} vs {numeric}", gi[i]);
            }
        }
        for i in 0..d {
            let mut plus = m.clone();
            plus.params_mut().1[i] += h;
            plus.refresh_weights();
            let mut minus = m.clone();
            minus.params_mut().1[i] -= h;
            minus.refresh_weights();
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            assert!(close(g.l_raw[i], numeric), "l_raw[{i}] {} vs {numeric}", g.l_raw[i]);

            let mut plus = m.clone();
            plus.params_mut().2[i] += h;
            let mut minus = m.clone();
            minus.params_mut().2[i] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            assert!(close(g.r[i], numeric), "r[{i}] {} vs {numeric}", g.r[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = random_model(12, 6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut pick = || Asn(rng.gen_range(1..=12));
            let pos = (pick(), pick());
            let neg = (pick(), pick());
            finite_difference_check(&m, pos, neg);
        }
    }

    #[test]
    fn degenerate_gradients() {
        let d = 4;
        let mut m = random_model(4, d, 7);
        // x_1 == x_2 and x_3 == x_4
        let row = m.vector(Asn(1)).unwrap().to_vec();
        let row3 = m.vector(Asn(3)).unwrap().to_vec();
        let x = m.params_mut().0;
        x[d..2 * d].copy_from_slice(&row);
        x[3 * d..4 * d].copy_from_slice(&row3);
        let g = m.gradients((Asn(1), Asn(2)), (Asn(3), Asn(4))).unwrap();
        assert!(g.r.iter().all(|&v| v == 0.0));

        let m = random_model(6, d, 8);
        let g = m.gradients((Asn(1), Asn(2)), (Asn(3), Asn(4))).unwrap();
        assert_eq!(g.x_of(Asn(6)), vec![0.0; d]);
    }

    #[test]
    fn projection_decomposition() {
        let m = basis_model();
        // x_4 = 2r
        assert!((m.hierarchy_projection(Asn(4)).unwrap() - 2.0).abs() < 1e-15);
        assert!(m.rejection(Asn(4)).unwrap().iter().all(|v| v.abs() < 1e-15));
        let m = random_model(8, 5, 9);
        for a in 1..=8 {
            let a = Asn(a);
            let proj = m.hierarchy_projection(a).unwrap();
            let rej = m.rejection(a).unwrap();
            assert!(dot(&rej, m.direction()).abs() < 1e-9);
            for (i, xi) in m.vector(a).unwrap().iter().enumerate() {
                assert!((proj * m.direction()[i] + rej[i] - xi).abs() < 1e-9);
            }
        }
    }
}
