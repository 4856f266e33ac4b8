use std::io::{BufReader, Cursor};
use std::sync::Arc;

use beam_core::detector::{run_detection, DetectorConfig};
use beam_core::embedding::{train, EmbeddingModel, Hyperparams};
use beam_core::monitor::{write_jsonl, ReplayReader};
use beam_core::synth::{build_scenario, generate_topology, ScenarioSpec, SynthTopologySpec};

fn hyper(epochs: usize) -> Hyperparams {
    Hyperparams { epochs, batch_size: 64, learning_rate: 0.02, ..Hyperparams::with_dim(16) }
}

#[test]
fn trained_model_round_trips_through_file_format() {
    let graph = generate_topology(&SynthTopologySpec::default()).unwrap().graph;
    let model = train(&graph, &hyper(5)).unwrap().model;
    let mut buf = Vec::new();
    model.write_to(&mut buf).unwrap();
    let back = EmbeddingModel::read_from(Cursor::new(&buf)).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.fingerprint(), &graph.fingerprint());
}

#[test]
fn loss_falls_over_training() {
    let graph = generate_topology(&SynthTopologySpec::default()).unwrap().graph;
    let losses = train(&graph, &hyper(300)).unwrap().epoch_losses;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&losses[250..]) < 0.6 * mean(&losses[..50]), "{:?}", &losses[..5]);
}

#[test]
fn jsonl_replay_matches_in_memory_replay() {
    let spec = ScenarioSpec { churn_announcements: 5000, ..ScenarioSpec::default() };
    let scenario = build_scenario(&spec).unwrap();
    let model = Arc::new(train(&scenario.topology.graph, &hyper(100)).unwrap().model);

    let direct = run_detection(
        model.clone(),
        scenario.rib.clone(),
        scenario.announcements.iter().cloned().map(Ok),
        DetectorConfig::default(),
    )
    .unwrap();

    let mut file = Vec::new();
    write_jsonl(&mut file, &scenario.announcements).unwrap();
    let reader = ReplayReader::new(BufReader::new(Cursor::new(file)), 0);
    let replayed = run_detection(model, scenario.rib.clone(), reader, DetectorConfig::default()).unwrap();

    assert_eq!(replayed.announcements, scenario.announcements.len() as u64);
    assert_eq!(replayed.alarms, direct.alarms);
    assert_eq!(replayed.monitor, direct.monitor);
}
