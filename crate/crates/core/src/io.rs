//! Versioned file formats: datasets, checkpoints, traces, evaluation
//! reports and training configuration files.
//!
//! Datasets and traces are JSON lines, one record per line, each carrying a
//! `version` field. Checkpoints are a text header line, a JSON manifest line
//! and a little-endian `f64` payload.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Array};
use crate::datagen::{Dataset, GenConfig, Instance};
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, EvalReport};
use crate::game::{EpisodeTrace, LocalAction, Offers, Rule};
use crate::model::Model;
use crate::routing::{GlobalState, NodeId, RoutingProblem};
use crate::training::{EpochMetrics, Trainer, TrainingConfig};

pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TRACE_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

const CHECKPOINT_MAGIC: &str = "manr-checkpoint";

pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "validation.jsonl", "test.jsonl"];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn write_line<T: Serialize>(out: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| format_error(path, 0, e))?;
    writeln!(out, "{line}").map_err(|e| Error::io(path, e))
}

fn format_error(path: &Path, line: usize, reason: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    }
}

fn check_version(expected: u32, found: u32, what: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Version {
            expected: format!("{what} v{expected}"),
            found: format!("{what} v{found}"),
        })
    }
}

/// Reads JSON lines, checking each record's `version` before decoding it.
fn read_records<T: DeserializeOwned>(path: &Path, version: u32, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| format_error(path, i + 1, e))?;
        let found = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| format_error(path, i + 1, "missing version field"))?;
        check_version(version, found as u32, what)?;
        out.push(serde_json::from_value(value).map_err(|e| format_error(path, i + 1, e))?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    version: u32,
    generator: GenConfig,
    id: usize,
    problem: RoutingProblem,
    initial: GlobalState,
}

/// Writes `instances` as one dataset file.
pub fn write_instances(path: &Path, generator: &GenConfig, instances: &[Instance]) -> Result<()> {
    let mut out = create(path)?;
    for inst in instances {
        let record = DatasetRecord {
            version: DATASET_VERSION,
            generator: generator.clone(),
            id: inst.id,
            problem: inst.problem.clone(),
            initial: inst.initial.clone(),
        };
        write_line(&mut out, path, &record)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads one dataset file. The generator configuration is `None` for an
/// empty file.
pub fn read_instances(path: &Path) -> Result<(Option<GenConfig>, Vec<Instance>)> {
    let records: Vec<DatasetRecord> = read_records(path, DATASET_VERSION, "dataset")?;
    let mut generator: Option<GenConfig> = None;
    let mut instances = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        if let Some(g) = &generator {
            if *g != r.generator {
                return Err(format_error(path, i + 1, "records from different generator configurations"));
            }
        } else {
            generator = Some(r.generator);
        }
        let state = &r.initial;
        let violations = r.problem.validate_state(state);
        if !violations.is_empty() || !state.is_feasible() {
            return Err(format_error(path, i + 1, "initial solution is not a feasible state of its problem"));
        }
        instances.push(Instance {
            id: r.id,
            problem: r.problem,
            initial: r.initial,
        });
    }
    Ok((generator, instances))
}

/// Writes the three split files into `dir`.
pub fn write_dataset(dir: &Path, generator: &GenConfig, data: &Dataset) -> Result<()> {
    let splits = [&data.train, &data.validation, &data.test];
    for (name, split) in SPLIT_FILES.iter().zip(splits) {
        write_instances(&dir.join(name), generator, split)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(Option<GenConfig>, Dataset)> {
    let mut generator: Option<GenConfig> = None;
    let mut splits = Vec::with_capacity(3);
    for name in SPLIT_FILES {
        let path = dir.join(name);
        let (g, instances) = read_instances(&path)?;
        match (&generator, g) {
            (Some(a), Some(b)) if *a != b => {
                return Err(format_error(&path, 1, "split generated with a different configuration"))
            }
            (None, Some(b)) => generator = Some(b),
            _ => {}
        }
        splits.push(instances);
    }
    let test = splits.pop().unwrap_or_default();
    let validation = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok((generator, Dataset { train, validation, test }))
}

/// Everything needed to resume training. Random streams are derived from
/// the configured seed and the epoch counter, so these two fix the RNG
/// state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: Option<GenConfig>,
    pub training: TrainingConfig,
    pub model: Model,
    pub adam: AdamState,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, generator: Option<GenConfig>) -> Self {
        Checkpoint {
            generator,
            training: trainer.config.clone(),
            model: trainer.model.clone(),
            adam: trainer.adam.clone(),
            epoch: trainer.epoch,
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        self.training.validate()?;
        Ok(Trainer {
            config: self.training,
            model: self.model,
            adam: self.adam,
            epoch: self.epoch,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    generator: Option<GenConfig>,
    training: TrainingConfig,
    epoch: usize,
    adam_step: u64,
    params: Vec<ParamEntry>,
    /// Payload length in values: parameters, then first and second Adam
    /// moments, in manifest order.
    values: usize,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let params = ckpt.model.params();
    let manifest = Manifest {
        generator: ckpt.generator.clone(),
        training: ckpt.training.clone(),
        epoch: ckpt.epoch,
        adam_step: ckpt.adam.step,
        params: params
            .names()
            .iter()
            .zip(params.arrays())
            .map(|(name, a)| ParamEntry {
                name: name.clone(),
                shape: [a.rows(), a.cols()],
            })
            .collect(),
        values: 3 * params.num_values(),
    };
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").map_err(io)?;
    write_line(&mut out, path, &manifest)?;
    let groups = [params.arrays(), &ckpt.adam.first[..], &ckpt.adam.second[..]];
    for group in groups {
        for array in group {
            for v in array.data() {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut input = open(path)?;
    let mut header = String::new();
    input.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(format_error(path, 1, "not a checkpoint file"));
    }
    let found: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_error(path, 1, "missing checkpoint version"))?;
    check_version(CHECKPOINT_VERSION, found, "checkpoint")?;
    let mut line = String::new();
    input.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&line).map_err(|e| format_error(path, 2, e))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != manifest.values * 8 {
        return Err(format_error(
            path,
            3,
            format!("payload holds {} bytes, manifest expects {}", bytes.len(), manifest.values * 8),
        ));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take_group = || -> Result<Vec<Array>> {
        manifest
            .params
            .iter()
            .map(|p| Array::new(p.shape[0], p.shape[1], values.by_ref().take(p.shape[0] * p.shape[1]).collect()))
            .collect()
    };
    let arrays = take_group()?;
    let first = take_group()?;
    let second = take_group()?;
    if arrays.iter().map(Array::len).sum::<usize>() * 3 != manifest.values {
        return Err(format_error(path, 3, "payload length disagrees with parameter shapes"));
    }
    let names: Vec<String> = manifest.params.iter().map(|p| p.name.clone()).collect();
    let model = Model::from_params(manifest.training.model, &names, arrays)?;
    Ok(Checkpoint {
        generator: manifest.generator,
        training: manifest.training,
        model,
        adam: AdamState {
            first,
            second,
            step: manifest.adam_step,
        },
        epoch: manifest.epoch,
    })
}

/// File name of the checkpoint written after `epoch` completed epochs.
pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.ckpt")
}

pub fn append_metrics(path: &Path, metrics: &EpochMetrics) -> Result<()> {
    let mut out = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    write_line(&mut out, path, metrics)
}

/// Training configuration from a TOML file. Keys present in the file
/// override `defaults`; unknown keys are rejected.
pub fn load_training_config(path: &Path, defaults: &TrainingConfig) -> Result<TrainingConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_training_config(&text, defaults).map_err(|reason| format_error(path, 0, reason))
}

pub fn parse_training_config(text: &str, defaults: &TrainingConfig) -> std::result::Result<TrainingConfig, String> {
    let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut base = toml::Table::try_from(defaults).map_err(|e| e.to_string())?;
    merge(&mut base, overrides)?;
    let config: TrainingConfig = base.try_into().map_err(|e: toml::de::Error| e.to_string())?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn merge(base: &mut toml::Table, overrides: toml::Table) -> std::result::Result<(), String> {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o)?,
            (Some(slot), v) => *slot = v,
            (None, _) => return Err(format!("unknown configuration key `{key}`")),
        }
    }
    Ok(())
}

/// Human-readable description of one local action taken in `state`.
pub fn action_label(state: &GlobalState, agent: usize, action: &LocalAction) -> String {
    match *action {
        LocalAction::NoOp => format!("agent {agent}: idle"),
        LocalAction::Move { region, rule } => {
            let from_pool = state.pool.contains(&region);
            let keeps = state
                .routes
                .get(agent)
                .and_then(|r| r.position(region).map(|i| r.sequence()[i - 1]))
                .is_some_and(|pred| rule == Rule::After(pred));
            match (from_pool, rule) {
                (true, Rule::Pool) => format!("agent {agent}: decline {region}"),
                (true, Rule::After(u)) => format!("agent {agent}: integrate {region} after {u}"),
                (false, Rule::Pool) => format!("agent {agent}: drop {region} to pool"),
                (false, _) if keeps => format!("agent {agent}: keep {region}"),
                (false, Rule::After(u)) => format!("agent {agent}: move {region} after {u}"),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    /// First line: the problem and the initial state.
    Header {
        version: u32,
        seed: u64,
        steps: usize,
        problem: RoutingProblem,
        state: GlobalState,
        cost: f64,
    },
    /// Step `t` (from 1): the offers and actions applied to `s_{t-1}`, the
    /// resulting state `s_t` and the reward `r_t`.
    Step {
        version: u32,
        t: usize,
        offers: Offers,
        actions: Vec<LocalAction>,
        labels: Vec<String>,
        routes: Vec<Vec<NodeId>>,
        pool: Vec<NodeId>,
        feasible: bool,
        cost: Option<f64>,
        prev_feasible: usize,
        reward: f64,
    },
}

pub fn trace_records(problem: &RoutingProblem, trace: &EpisodeTrace, seed: u64) -> Vec<TraceRecord> {
    let mut out = Vec::with_capacity(trace.len() + 1);
    out.push(TraceRecord::Header {
        version: TRACE_VERSION,
        seed,
        steps: trace.len(),
        problem: problem.clone(),
        state: trace.states[0].clone(),
        cost: trace.costs[0],
    });
    for t in 0..trace.len() {
        let before = &trace.states[t];
        let after = &trace.states[t + 1];
        let actions = trace.actions[t].0.clone();
        out.push(TraceRecord::Step {
            version: TRACE_VERSION,
            t: t + 1,
            offers: trace.offers[t].clone(),
            labels: actions
                .iter()
                .enumerate()
                .map(|(i, a)| action_label(before, i, a))
                .collect(),
            actions,
            routes: after.routes.iter().map(|r| r.sequence().to_vec()).collect(),
            pool: after.pool.iter().copied().collect(),
            feasible: trace.feasible[t + 1],
            cost: trace.feasible[t + 1].then_some(trace.costs[t + 1]),
            prev_feasible: trace.prev_feasible[t],
            reward: trace.rewards[t],
        });
    }
    out
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        write_line(&mut out, path, r)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    read_records(path, TRACE_VERSION, "trace")
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct Summary<'a> {
    version: u32,
    options: &'a EvalOptions,
    #[serde(flatten)]
    summary: &'a crate::eval::EvalSummary,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    version: u32,
    #[serde(flatten)]
    record: &'a crate::eval::ProblemRecord,
}

/// Names of the files written by [`write_eval_report`]. Only
/// `timings.csv` depends on the machine.
pub const REPORT_FILES: [&str; 4] = ["report.csv", "records.jsonl", "summary.json", "timings.csv"];

/// Writes the per-problem CSV, per-problem records, the summary and the
/// wall-clock timings into `dir`.
pub fn write_eval_report(dir: &Path, report: &EvalReport, options: &EvalOptions) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = REPORT_FILES.iter().map(|f| dir.join(f)).collect();
    let csv_error = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| format_error(&path, 0, e)
    };

    let mut csv = csv::Writer::from_writer(create(&paths[0])?);
    let mut header = vec!["id", "initial_cost", "mean_cost", "best_cost", "gap_initial", "gap_initial_best"];
    header.extend(["baseline_cost", "gap_baseline", "gap_baseline_best", "baseline_skipped"]);
    if options.collaboration {
        header.extend(["noncollab_cost", "collaboration", "collaboration_best"]);
    }
    csv.write_record(&header).map_err(csv_error(&paths[0]))?;
    for r in &report.records {
        let mut row = vec![
            r.id.to_string(),
            r.initial_cost.to_string(),
            r.mean_cost.to_string(),
            r.best_cost.to_string(),
            r.gap_initial().to_string(),
            r.gap_initial_best().to_string(),
            cell(r.baseline_cost),
            cell(r.gap_baseline()),
            cell(r.gap_baseline_best()),
            r.baseline_skipped.to_string(),
        ];
        if options.collaboration {
            row.extend([cell(r.noncollab_cost), cell(r.collaboration()), cell(r.collaboration_best())]);
        }
        csv.write_record(&row).map_err(csv_error(&paths[0]))?;
    }
    csv.flush().map_err(|e| Error::io(&paths[0], e))?;

    let mut out = create(&paths[1])?;
    for record in &report.records {
        let line = RecordLine {
            version: REPORT_VERSION,
            record,
        };
        write_line(&mut out, &paths[1], &line)?;
    }
    out.flush().map_err(|e| Error::io(&paths[1], e))?;

    let summary = Summary {
        version: REPORT_VERSION,
        options,
        summary: &report.summary,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| format_error(&paths[2], 0, e))?;
    fs::write(&paths[2], text + "\n").map_err(|e| Error::io(&paths[2], e))?;

    let mut csv = csv::Writer::from_writer(create(&paths[3])?);
    csv.write_record(["id", "seconds"]).map_err(csv_error(&paths[3]))?;
    for (r, s) in report.records.iter().zip(&report.seconds) {
        csv.write_record([r.id.to_string(), s.to_string()])
            .map_err(csv_error(&paths[3]))?;
    }
    csv.flush().map_err(|e| Error::io(&paths[3], e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_dataset;
    use crate::game::{rollout_episode, GlobalAction, RewardConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_trainer() -> Trainer {
        let mut cfg = TrainingConfig::for_size(5, 2);
        cfg.model.hidden = 4;
        cfg.model.attention = 3;
        cfg.model.scorer_hidden = 5;
        cfg.epsilon = 0.1 + 0.2;
        Trainer::new(cfg).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig::new(5, 2, 10, 3);
        let data = generate_dataset(&cfg).unwrap();
        write_dataset(dir.path(), &cfg, &data).unwrap();
        let (g, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(g, Some(cfg));
        assert_eq!(back, data);
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig::new(5, 2, 0, 3);
        write_dataset(dir.path(), &cfg, &generate_dataset(&cfg).unwrap()).unwrap();
        for f in SPLIT_FILES {
            assert_eq!(fs::read(dir.path().join(f)).unwrap().len(), 0);
        }
        let (g, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(g, None);
        assert!(back.train.is_empty());
    }

    #[test]
    fn dataset_version_mismatch_names_both() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig::new(4, 2, 1, 3);
        let path = dir.path().join("x.jsonl");
        write_instances(&path, &cfg, &generate_dataset(&cfg).unwrap().train).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":7");
        fs::write(&path, text).unwrap();
        let err = read_instances(&path).unwrap_err().to_string();
        assert!(err.contains("v1") && err.contains("v7"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"version\":1}\n").unwrap();
        match read_instances(&path) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut trainer = small_trainer();
        trainer.epoch = 3;
        trainer.adam.step = 17;
        for (i, a) in trainer.adam.first.iter_mut().enumerate() {
            a.data_mut().iter_mut().for_each(|v| *v = (i as f64 + 0.1).sqrt() * 1e-7);
        }
        for a in trainer.adam.second.iter_mut() {
            a.data_mut().iter_mut().for_each(|v| *v = std::f64::consts::PI * 1e-300);
        }
        let ckpt = Checkpoint::from_trainer(&trainer, Some(GenConfig::new(5, 2, 10, 1)));
        let path = dir.path().join(checkpoint_name(3));
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let bits = |c: &Checkpoint| -> Vec<u64> {
            let p = c.model.params().arrays().iter();
            p.chain(&c.adam.first).chain(&c.adam.second).flat_map(|a| a.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&ckpt));
        assert_eq!(back.training.epsilon.to_bits(), ckpt.training.epsilon.to_bits());
        save_checkpoint(&dir.path().join("again.ckpt"), &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(dir.path().join("again.ckpt")).unwrap());
    }

    #[test]
    fn checkpoint_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &Checkpoint::from_trainer(&small_trainer(), None)).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut v2 = bytes.clone();
        let pos = CHECKPOINT_MAGIC.len() + 1;
        v2[pos] = b'2';
        fs::write(&path, &v2).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Version { .. }), "{err}");
        assert!(err.to_string().contains("v1") && err.to_string().contains("v2"));
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn checkpoint_shape_mismatch_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let mut ckpt = Checkpoint::from_trainer(&small_trainer(), None);
        ckpt.training.model.hidden = 5;
        save_checkpoint(&path, &ckpt).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn config_overrides() {
        let defaults = TrainingConfig::for_size(10, 2);
        let cfg = parse_training_config("epochs = 2\n[model]\nhidden = 8\n", &defaults).unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.model.hidden, 8);
        assert_eq!(cfg.steps, 30);
        assert!(parse_training_config("bogus = 1", &defaults).is_err());
        assert!(parse_training_config("epsilon = 2.0", &defaults).is_err());
        assert_eq!(parse_training_config("", &defaults).unwrap(), defaults);
    }

    fn noop_trace() -> (RoutingProblem, EpisodeTrace) {
        let inst = crate::datagen::generate_instance(&GenConfig::new(4, 2, 1, 9), 0).unwrap();
        let mut provider = |_: &RoutingProblem, s: &GlobalState, _: &Offers, _: &mut dyn rand::RngCore| {
            Ok(GlobalAction::noop(s.num_agents()))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = RewardConfig::for_agents(2);
        let trace = rollout_episode(&inst.problem, &inst.initial, &mut provider, 4, &cfg, &mut rng).unwrap();
        (inst.problem, trace)
    }

    #[test]
    fn noop_trace_records_repeat_the_state() {
        let (problem, trace) = noop_trace();
        let records = trace_records(&problem, &trace, 0);
        assert_eq!(records.len(), 5);
        let steps: Vec<_> = records[1..]
            .iter()
            .map(|r| match r {
                TraceRecord::Step { routes, pool, reward, .. } => (routes.clone(), pool.clone(), *reward),
                _ => panic!(),
            })
            .collect();
        assert!(steps.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(steps[0].2, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trace(&path, &records).unwrap();
        assert_eq!(read_trace(&path).unwrap(), records);
    }

    #[test]
    fn labels() {
        let (_, trace) = noop_trace();
        let s = &trace.states[0];
        let r = &s.routes[0];
        let (a, b) = (r.customers()[0], r.customers()[1]);
        let depot = r.depot();
        assert_eq!(action_label(s, 0, &LocalAction::NoOp), "agent 0: idle");
        assert_eq!(action_label(s, 0, &LocalAction::new(a, Rule::After(depot))), format!("agent 0: keep {a}"));
        assert_eq!(action_label(s, 0, &LocalAction::new(a, Rule::After(b))), format!("agent 0: move {a} after {b}"));
        assert_eq!(action_label(s, 0, &LocalAction::new(a, Rule::Pool)), format!("agent 0: drop {a} to pool"));
    }
}
