use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingError, EmbeddingModel, Hyperparams, Result};
use crate::asgraph::AsGraph;

/// Rejection-sampling budget for one negative edge.
const MAX_NEGATIVE_ATTEMPTS: usize = 1000;

/// Snapshot handed to the observer after every optimizer step and at the end
/// of every epoch.
pub struct TrainProgress<'a> {
    pub epoch: usize,
    pub step: usize,
    pub model: &'a EmbeddingModel,
    /// Set only on the end-of-epoch callback.
    pub epoch_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    /// Mean instance loss per epoch, evaluated at the parameters each
    /// mini-batch started from.
    pub epoch_losses: Vec<f64>,
}

pub fn train(graph: &AsGraph, hyper: &Hyperparams) -> Result<TrainOutcome> {
    train_observed(graph, hyper, |_| {})
}

/// SGD on the logistic ranking loss.
///
/// Each epoch shuffles the edges, pairs each one with `negatives` uniformly
/// drawn non-edges and applies summed mini-batch gradients. After every step
/// `r` is renormalised and `l` recomputed from `l_raw`.
pub fn train_observed(
    graph: &AsGraph,
    hyper: &Hyperparams,
    mut observer: impl FnMut(&TrainProgress<'_>),
) -> Result<TrainOutcome> {
    hyper.validate()?;
    if graph.vertex_count() == 0 || graph.edge_count() == 0 {
        return Err(EmbeddingError::EmptyGraph);
    }
    let n = graph.vertex_count();
    let d = hyper.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);

    let bound = 0.5 / d as f64;
    let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-bound..bound)).collect();
    let r: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut model = EmbeddingModel::new_raw(
        graph.asns().to_vec(),
        x,
        vec![0.0; d],
        r,
        hyper.clone(),
        graph.fingerprint(),
    );
    model.normalize_r();

    let mut edges: Vec<(usize, usize)> = graph
        .edges()
        .map(|(u, v)| (graph.index_of(u).unwrap(), graph.index_of(v).unwrap()))
        .collect();
    let edge_set: HashSet<(usize, usize)> = edges.iter().copied().collect();

    let mut grad_x = vec![0.0; n * d];
    let mut touched = vec![false; n];
    let mut touched_rows: Vec<usize> = Vec::new();
    let mut grad_l = vec![0.0; d];
    let mut grad_r = vec![0.0; d];
    let mut batch: Vec<[usize; 4]> = Vec::with_capacity(hyper.batch_size);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut step = 0usize;

    for epoch in 0..hyper.epochs {
        edges.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        let mut instances = edges.iter().flat_map(|&(u, v)| {
            std::iter::repeat((u, v)).take(hyper.negatives)
        });
        loop {
            batch.clear();
            for (u, v) in instances.by_ref() {
                if let Some((nu, nv)) = sample_negative(&mut rng, n, &edge_set) {
                    batch.push([u, v, nu, nv]);
                }
                if batch.len() == hyper.batch_size {
                    break;
                }
            }
            if batch.is_empty() {
                break;
            }

            grad_l.iter_mut().for_each(|g| *g = 0.0);
            grad_r.iter_mut().for_each(|g| *g = 0.0);
            for inst in &batch {
                let mut sink = |row: usize, i: usize, g: f64| {
                    if !touched[row] {
                        touched[row] = true;
                        touched_rows.push(row);
                    }
                    grad_x[row * d + i] += g;
                };
                loss_sum += model.accumulate_instance(*inst, 1.0, &mut sink, &mut grad_l, &mut grad_r);
                count += 1;
            }
            let grad_l_raw = model.weights_to_raw_gradient(&grad_l);

            let lr = hyper.learning_rate;
            let (xs, l_raw, rs) = model.params_mut();
            touched_rows.sort_unstable();
            for &row in &touched_rows {
                for i in 0..d {
                    xs[row * d + i] -= lr * grad_x[row * d + i];
                    grad_x[row * d + i] = 0.0;
                }
                touched[row] = false;
            }
            touched_rows.clear();
            for i in 0..d {
                l_raw[i] -= lr * grad_l_raw[i];
                rs[i] -= lr * grad_r[i];
            }
            model.normalize_r();
            model.refresh_weights();
            step += 1;
            observer(&TrainProgress {
                epoch,
                step,
                model: &model,
                epoch_loss: None,
            });
        }
        let mean = if count > 0 { loss_sum / count as f64 } else { 0.0 };
        epoch_losses.push(mean);
        observer(&TrainProgress {
            epoch,
            step,
            model: &model,
            epoch_loss: Some(mean),
        });
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Uniform ordered pair `(a, b)` with `a != b` and `(a, b)` not an edge.
fn sample_negative(
    rng: &mut ChaCha8Rng,
    n: usize,
    edges: &HashSet<(usize, usize)>,
) -> Option<(usize, usize)> {
    if n < 2 {
        return None;
    }
    for _ in 0..MAX_NEGATIVE_ATTEMPTS {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && !edges.contains(&(a, b)) {
            return Some((a, b));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asgraph::{build_graph, Asn, Relationship, RelationshipRecord};

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            dim: 8,
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.05,
            negatives: 10,
            alpha: 1e-6 / 8.0,
            seed: 11,
        }
    }

    #[test]
    fn two_vertex_hierarchy() {
        let g = build_graph(&[RelationshipRecord::new(1, 2, Relationship::P2C)]).unwrap();
        let out = train(&g, &small_hyper()).unwrap();
        let m = out.model;
        assert!(m.h_score(Asn(1), Asn(2)).unwrap() > 0.0);
        assert!(m.h_score(Asn(2), Asn(1)).unwrap() < 0.0);
        assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
    }

    #[test]
    fn deterministic_for_seed() {
        let recs = [
            RelationshipRecord::new(1, 2, Relationship::P2C),
            RelationshipRecord::new(1, 3, Relationship::P2C),
            RelationshipRecord::new(2, 3, Relationship::P2P),
            RelationshipRecord::new(3, 4, Relationship::P2C),
        ];
        let g = build_graph(&recs).unwrap();
        let h = Hyperparams { epochs: 20, ..small_hyper() };
        let a = train(&g, &h).unwrap();
        let b = train(&g, &h).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        let c = train(&g, &Hyperparams { seed: 12, ..h }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn constraints_hold_after_every_step() {
        let recs = [
            RelationshipRecord::new(1, 2, Relationship::P2C),
            RelationshipRecord::new(2, 3, Relationship::P2C),
            RelationshipRecord::new(1, 4, Relationship::P2P),
        ];
        let g = build_graph(&recs).unwrap();
        let h = Hyperparams { epochs: 30, batch_size: 3, ..small_hyper() };
        let mut steps = 0;
        train_observed(&g, &h, |p| {
            steps += 1;
            let l = p.model.weights();
            assert!((l.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(l.iter().all(|&v| v >= h.alpha));
            let rn: f64 = p.model.direction().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((rn - 1.0).abs() <= 1e-9);
        })
        .unwrap();
        assert!(steps > 30);
    }

    #[test]
    fn rejects_bad_input() {
        let g = build_graph(&[RelationshipRecord::new(1, 2, Relationship::P2C)]).unwrap();
        let h = Hyperparams { dim: 1, ..small_hyper() };
        assert!(matches!(train(&g, &h), Err(EmbeddingError::InvalidHyperparams(_))));
    }
}
