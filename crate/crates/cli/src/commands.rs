use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use beam_core::asgraph::{build_graph, parse_relationships, parse_route_usage, perturb, write_relationships, AsGraph, Asn, NoiseKind, RelationshipFormat, RelationshipRecord};
use beam_core::detector::{default_unknown_penalty, Alarm, ChunkMetric, Pipeline, ThresholdRecord};
use beam_core::embedding::{planar_projection, train, EmbeddingModel};
use beam_core::monitor::{read_rib, write_jsonl, MonitorStats, ReplayReader};
use beam_core::pathdiff::{CacheStats, DiffMatrix, ModelDistance};
use beam_core::synth::{build_scenario, ScenarioSpec};
use beam_core::validator::{Confidence, OrgTable, Pattern, PatternVerdict, RoaTable, Validator};
use serde::Serialize;

use crate::config::Config;
use crate::error::{CliError, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
            _ => CliError::io(path, e),
        })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// File output when `path` is set, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish_output(mut w: impl Write, path: Option<&Path>) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path.unwrap_or(Path::new("<stdout>")), e))
}

fn read_records(cfg: &Config) -> Result<(PathBuf, Vec<RelationshipRecord>)> {
    let path = cfg.input("relationships", &cfg.relationships)?.to_path_buf();
    let file = parse_relationships(open(&path)?, cfg.relationships_format).map_err(|e| CliError::graph(&path, e))?;
    if !file.conflicts.is_empty() {
        log::warn!("{} conflicting relationship records ignored", file.conflicts.len());
    }
    Ok((path, file.records))
}

fn read_graph(cfg: &Config) -> Result<AsGraph> {
    let (path, records) = read_records(cfg)?;
    build_graph(&records).map_err(|e| CliError::graph(path, e))
}

fn load_model(cfg: &Config) -> Result<EmbeddingModel> {
    let path = cfg.input("model", &cfg.model)?;
    EmbeddingModel::load(path).map_err(|e| CliError::embedding(path, e))
}

fn read_alarms(path: &Path) -> Result<Vec<Alarm>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let alarm = serde_json::from_str(&line).map_err(|e| CliError::malformed(path, format!("line {}: {e}", i + 1)))?;
        out.push(alarm);
    }
    Ok(out)
}

pub fn cmd_train(cfg: &Config) -> Result<()> {
    let model_path = cfg
        .model
        .as_deref()
        .ok_or_else(|| CliError::Config("model is not set".into()))?;
    let graph = read_graph(cfg)?;
    let outcome = train(&graph, &cfg.hyper).map_err(|e| CliError::embedding(model_path, e))?;
    outcome.model.save(model_path).map_err(|e| CliError::embedding(model_path, e))?;

    let losses = &outcome.epoch_losses;
    println!(
        "trained d={} on {} ASes / {} directed edges for {} epochs -> {}",
        cfg.hyper.dim,
        graph.vertex_count(),
        graph.edge_count(),
        losses.len(),
        model_path.display()
    );
    let step = (losses.len() / 10).max(1);
    println!("{:>8} {:>12}", "epoch", "mean loss");
    for (i, l) in losses.iter().enumerate() {
        if i % step == 0 || i + 1 == losses.len() {
            println!("{:>8} {:>12.6}", i + 1, l);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Metrics<'a> {
    announcements: u64,
    suspicious: u64,
    alarms: usize,
    late_records: u64,
    elapsed_secs: f64,
    monitor: &'a MonitorStats,
    cache: &'a CacheStats,
    thresholds: &'a [ThresholdRecord],
    chunks: &'a [ChunkMetric],
}

pub fn cmd_detect(cfg: &Config) -> Result<()> {
    let replay_path = cfg.input("replay", &cfg.replay)?;
    let model = Arc::new(load_model(cfg)?);
    let rib = match &cfg.rib {
        Some(_) => {
            let p = cfg.input("rib", &cfg.rib)?;
            read_rib(open(p)?).map_err(|e| CliError::monitor(p, e))?
        }
        None => Vec::new(),
    };

    let mut pipeline = Pipeline::new(model, cfg.detector.clone());
    pipeline.seed_rib(rib);
    let mut reader = ReplayReader::new(open(replay_path)?, cfg.skew_secs);
    while let Some(ann) = reader.next() {
        let ann = ann.map_err(|e| CliError::monitor(replay_path, e))?;
        if cfg.strict_order && reader.rejected() > 0 {
            let why = reader.last_violation().map(|e| e.to_string()).unwrap_or_default();
            return Err(CliError::OrderViolation(why));
        }
        pipeline.process(&ann).map_err(|e| CliError::monitor(replay_path, e))?;
    }
    if cfg.strict_order && reader.rejected() > 0 {
        let why = reader.last_violation().map(|e| e.to_string()).unwrap_or_default();
        return Err(CliError::OrderViolation(why));
    }
    let out = pipeline.finish();

    let alarms_path = cfg.alarms.as_deref();
    let mut w = sink(alarms_path)?;
    write_jsonl(&mut w, &out.alarms).map_err(|e| CliError::io(alarms_path.unwrap_or(Path::new("<stdout>")), e))?;
    finish_output(w, alarms_path)?;

    if let Some(p) = &cfg.metrics {
        let m = Metrics {
            announcements: out.announcements,
            suspicious: out.suspicious,
            alarms: out.alarms.len(),
            late_records: reader.rejected(),
            elapsed_secs: out.elapsed_secs,
            monitor: &out.monitor,
            cache: &out.cache,
            thresholds: &out.thresholds,
            chunks: &out.chunks,
        };
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &m).map_err(|e| CliError::io(p, e.into()))?;
        finish_output(w, Some(p))?;
    }

    let rate = out.announcements as f64 / out.elapsed_secs.max(1e-9);
    eprintln!(
        "{} announcements, {} route changes, {} suspicious, {} alarms in {:.2}s ({rate:.0}/s)",
        out.announcements,
        out.monitor.changes,
        out.suspicious,
        out.alarms.len(),
        out.elapsed_secs
    );
    eprintln!(
        "cache hit ratio: pairs {:.3}, paths {:.3}; late records dropped: {}",
        out.cache.pair_hit_ratio(),
        out.cache.path_hit_ratio(),
        reader.rejected()
    );
    eprintln!("{:>12} {:>10} {:>8} {:>10} {:>10}", "chunk", "announce", "changes", "suspicious", "seconds");
    for c in &out.chunks {
        eprintln!(
            "{:>12} {:>10} {:>8} {:>10} {:>10.4}",
            c.start.secs(),
            c.announcements,
            c.changes,
            c.suspicious,
            c.elapsed_secs
        );
    }
    Ok(())
}

/// Alarm-level and summary EP tables.
pub fn ep_table(alarms: &[Alarm]) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:>6} {:>8} {:>9} {:>9} {:>9} {:>9}  confidence\n", "alarm", "changes", "P1", "P2", "P3", "P4"));
    let mut hc = [0usize; 4];
    let (mut any, mut lc) = (0usize, 0usize);
    let mut ep_sum = 0.0;
    for a in alarms {
        let Some(v) = &a.validation else { continue };
        let cell = |p: Pattern| v.ep.get(&p).map(|r| format!("{}/{}", r.matched, r.total)).unwrap_or_default();
        s.push_str(&format!(
            "{:>6} {:>8} {:>9} {:>9} {:>9} {:>9}  {}\n",
            a.id,
            a.change_count(),
            cell(Pattern::P1),
            cell(Pattern::P2),
            cell(Pattern::P3),
            cell(Pattern::P4),
            match v.confidence {
                Confidence::HighConfidence => "H.C.",
                Confidence::LowConfidence => "L.C.",
            }
        ));
        match v.confidence {
            Confidence::HighConfidence => {
                any += 1;
                for (k, p) in Pattern::ALL.iter().enumerate() {
                    if v.ep.get(p).is_some_and(|r| r.exceeds_half()) {
                        hc[k] += 1;
                    }
                }
                ep_sum += best_ep(v);
            }
            Confidence::LowConfidence => lc += 1,
        }
    }
    let avg = if any > 0 { format!("{:.4}", ep_sum / any as f64) } else { "-".into() };
    s.push_str(&format!(
        "\nH.C. P1 {} P2 {} P3 {} P4 {} Any {} | L.C. {} | Avg.EP {avg}\n",
        hc[0], hc[1], hc[2], hc[3], any, lc
    ));
    s
}

fn best_ep(v: &PatternVerdict) -> f64 {
    Pattern::ALL.iter().map(|&p| v.ep_value(p)).fold(0.0, f64::max)
}

pub fn cmd_validate(cfg: &Config, out: Option<&Path>) -> Result<()> {
    let alarms_path = cfg.input("alarms", &cfg.alarms)?;
    let roa_path = cfg.input("roa", &cfg.roa)?;
    let org_path = cfg.input("org", &cfg.org)?;
    let mut alarms = read_alarms(alarms_path)?;
    let roa = RoaTable::parse(open(roa_path)?).map_err(|e| CliError::validator(roa_path, e))?;
    let org = OrgTable::parse(open(org_path)?).map_err(|e| CliError::validator(org_path, e))?;
    let graph = read_graph(cfg)?;
    let validator = Validator { roa: &roa, org: &org, graph: &graph };
    for a in &mut alarms {
        a.validation = Some(validator.classify(a));
    }
    let mut w = sink(out)?;
    write_jsonl(&mut w, &alarms).map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))?;
    finish_output(w, out)?;
    eprint!("{}", ep_table(&alarms));
    Ok(())
}

pub fn cmd_report(cfg: &Config, alarm_id: u64, out_dir: Option<&Path>) -> Result<()> {
    let alarms_path = cfg.input("alarms", &cfg.alarms)?;
    let alarm = read_alarms(alarms_path)?
        .into_iter()
        .find(|a| a.id == alarm_id)
        .ok_or_else(|| CliError::NotFound(format!("alarm {alarm_id} is not in {}", alarms_path.display())))?;
    let model = load_model(cfg)?;
    let dist = ModelDistance { model: &model, unknown_penalty: default_unknown_penalty(&model) };
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }

    let mut w = BufWriter::new(io::stdout().lock());
    let stdout_err = |e| CliError::io("<stdout>", e);
    let prefixes: Vec<String> = alarm.prefixes.iter().map(|p| p.to_string()).collect();
    let responsible: Vec<String> = alarm.responsible.iter().map(|a| a.to_string()).collect();
    writeln!(
        w,
        "alarm {} [{} .. {}]: {} vantage points, {} changes\nprefixes: {}\nresponsible: {}",
        alarm.id,
        alarm.start,
        alarm.end,
        alarm.vantage_count,
        alarm.change_count(),
        prefixes.join(" "),
        if responsible.is_empty() { "-".to_string() } else { responsible.join(" ") }
    )
    .map_err(stdout_err)?;

    let mut involved = BTreeSet::new();
    for (k, c) in alarm.changes().enumerate() {
        involved.extend(c.old_path.asns().iter().copied());
        involved.extend(c.new_path.asns().iter().copied());
        let m = DiffMatrix::compute(&dist, &c.old_path, &c.new_path);
        let (rows, cols) = m.shape();
        writeln!(
            w,
            "\nchange {k}: t={} vantage={} prefix={}\n  old: {}\n  new: {}\n  score: {:.6}\n  DIFF ({rows}x{cols}):",
            c.t,
            c.vantage,
            c.prefix,
            c.old_path,
            c.new_path,
            m.score()
        )
        .map_err(stdout_err)?;
        m.write_text(&mut w).map_err(stdout_err)?;
        let cells: Vec<String> = m.alignment().iter().map(|(i, j)| format!("({i},{j})")).collect();
        writeln!(w, "  alignment: {}", cells.join(" ")).map_err(stdout_err)?;
        if let Some(d) = out_dir {
            let p = d.join(format!("alarm-{}-change-{k}-diff.txt", alarm.id));
            let mut f = create(&p)?;
            m.write_text(&mut f).map_err(|e| CliError::io(&p, e))?;
            finish_output(f, Some(&p))?;
            let p = d.join(format!("alarm-{}-change-{k}-alignment.csv", alarm.id));
            let mut f = create(&p)?;
            let mut lines = String::from("i,j,old_as,new_as,diff\n");
            for (i, j) in m.alignment() {
                let (a, b) = (c.old_path.asns()[i - 1], c.new_path.asns()[j - 1]);
                lines.push_str(&format!("{i},{j},{a},{b},{:.9}\n", beam_core::pathdiff::PairDistance::distance(&dist, a, b)));
            }
            f.write_all(lines.as_bytes()).map_err(|e| CliError::io(&p, e))?;
            finish_output(f, Some(&p))?;
        }
    }

    let known: Vec<Asn> = involved.iter().copied().filter(|a| model.contains(*a)).collect();
    let points = planar_projection(&model, &known).map_err(|e| CliError::embedding("<model>", e))?;
    writeln!(w, "\nprojection (x, y: PCA of rejections; z: hierarchy):").map_err(stdout_err)?;
    let mut csv = String::from("asn,x,y,z\n");
    for p in &points {
        csv.push_str(&format!("{},{:.9},{:.9},{:.9}\n", p.asn, p.x, p.y, p.z));
        writeln!(w, "  AS{:<10} {:>12.6} {:>12.6} {:>12.6}", p.asn.0, p.x, p.y, p.z).map_err(stdout_err)?;
    }
    let unknown: Vec<String> = involved.iter().filter(|a| !model.contains(**a)).map(|a| a.to_string()).collect();
    if !unknown.is_empty() {
        writeln!(w, "  not in model: {}", unknown.join(" ")).map_err(stdout_err)?;
    }
    if let Some(d) = out_dir {
        let p = d.join(format!("alarm-{}-projection.csv", alarm.id));
        std::fs::write(&p, csv).map_err(|e| CliError::io(&p, e))?;
    }
    finish_output(w, None)
}

pub fn cmd_perturb(cfg: &Config, kind: NoiseKind, ratio: f64, out: &Path) -> Result<()> {
    let (path, records) = read_records(cfg)?;
    let usage = match (kind, &cfg.route_usage) {
        (NoiseKind::W1 | NoiseKind::W2, Some(_)) => {
            let p = cfg.input("route_usage", &cfg.route_usage)?;
            Some(parse_route_usage(open(p)?).map_err(|e| CliError::graph(p, e))?)
        }
        _ => None,
    };
    let noisy = perturb(&records, kind, ratio, usage.as_ref(), cfg.hyper.seed).map_err(|e| CliError::graph(&path, e))?;
    let mut w = create(out)?;
    write_relationships(&mut w, &noisy, cfg.relationships_format).map_err(|e| CliError::io(out, e))?;
    finish_output(w, Some(out))?;
    eprintln!("{kind:?} {ratio}% (seed {}): {} records -> {}", cfg.hyper.seed, noisy.len(), out.display());
    Ok(())
}

pub fn cmd_project(cfg: &Config, asns: &[u32], out: Option<&Path>) -> Result<()> {
    let model = load_model(cfg)?;
    let wanted: Vec<Asn> = if asns.is_empty() { model.asns().to_vec() } else { asns.iter().map(|&a| Asn(a)).collect() };
    let points = planar_projection(&model, &wanted).map_err(|e| match e {
        beam_core::embedding::EmbeddingError::UnknownAsn(a) => CliError::NotFound(format!("AS{a} is not in the model")),
        other => CliError::embedding("<model>", other),
    })?;
    let mut w = sink(out)?;
    let err = |e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e);
    writeln!(w, "asn,x,y,z").map_err(err)?;
    for p in &points {
        writeln!(w, "{},{:.9},{:.9},{:.9}", p.asn, p.x, p.y, p.z).map_err(err)?;
    }
    finish_output(w, out)
}

/// Config written next to a synthesized scenario. The small topology needs a
/// far larger learning rate than the library defaults to train in 1000 epochs.
const SYNTH_CONFIG: &str = "\
relationships = relationships.txt
relationships_format = caida
roa = roa.csv
org = org.tsv
rib = rib.jsonl
replay = replay.jsonl
model = model.bin
alarms = alarms.jsonl
metrics = metrics.json
dim = 32
epochs = 1000
batch_size = 64
learning_rate = 0.02
seed = 0
";

pub fn cmd_synth(spec: &ScenarioSpec, out: &Path) -> Result<()> {
    let scenario = build_scenario(spec)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let write = |name: &str, f: &dyn Fn(&mut dyn Write) -> io::Result<()>| -> Result<()> {
        let p = out.join(name);
        let mut w = create(&p)?;
        f(&mut w).map_err(|e| CliError::io(&p, e))?;
        finish_output(w, Some(&p))
    };
    write("relationships.txt", &|w| write_relationships(w, &scenario.topology.records, RelationshipFormat::CaidaSerial))?;
    write("roa.csv", &|w| {
        writeln!(w, "prefix,max_length,asn")?;
        for r in scenario.roas() {
            writeln!(w, "{},{},{}", r.prefix, r.max_length, r.asn.0)?;
        }
        Ok(())
    })?;
    write("org.tsv", &|w| {
        let orgs = scenario.topology.org_table();
        for a in scenario.topology.tiers.keys() {
            writeln!(w, "{}\t{}", a.0, orgs.org(*a).unwrap_or_default())?;
        }
        Ok(())
    })?;
    write("rib.jsonl", &|w| write_jsonl(w, &scenario.rib))?;
    write("replay.jsonl", &|w| write_jsonl(w, &scenario.announcements))?;
    write("labels.jsonl", &|w| write_jsonl(w, &scenario.labels))?;
    write("anomalies.jsonl", &|w| write_jsonl(w, &scenario.anomalies))?;
    write("beam.conf", &|w| w.write_all(SYNTH_CONFIG.as_bytes()))?;
    eprintln!(
        "{} ASes, {} vantage points, {} announcements ({} anomalous, {} anomalies) -> {}",
        scenario.topology.graph.vertex_count(),
        scenario.vantages.len(),
        scenario.announcements.len(),
        scenario.labels.len(),
        scenario.anomalies.len(),
        out.display()
    );
    Ok(())
}
