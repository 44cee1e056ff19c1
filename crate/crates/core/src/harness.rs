//! Experiment orchestration: configuration, per-stage evaluation, result
//! files.
//!
//! The harness drives a [`Trainer`] over a stream and evaluates a row of
//! the accuracy matrix before training and after every task. Task
//! boundaries come from the stream cursor; the trainer itself never sees
//! them.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::Strategy;
use crate::augment::{AugmentConfig, SynonymLexicon};
use crate::data::{BatchKind, ClassId, Oracle, TaskSpec, TaskStream};
use crate::error::{Error, Result};
use crate::memory::{MemoryBuffer, MemoryStrategy};
use crate::metrics::{macro_accuracy, AccuracyMatrix, MetricSummary};
use crate::model::{ModelState, DEFAULT_HIDDEN_DIMS, DEFAULT_INPUT_DIM};
use crate::text::featurize_text;
use crate::trainer::{adapt_for_eval, derived_rng, Flags, TrainConfig, Trainer};

/// Flat run configuration. Every key can be given in a TOML file and
/// overridden with `key=value` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Synonym lexicon TSV; the bundled lexicon is used when absent.
    pub lexicon: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Overrides the manifest's task order (1-based indices).
    pub order: Option<Vec<usize>>,
    pub seed: u64,
    pub k_shot: usize,
    pub batch_size: usize,
    pub episode_batches: usize,
    pub budget: usize,
    pub memory_per_class: usize,
    pub relative_weight: f64,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub al_strategy: Strategy,
    pub memory_strategy: MemoryStrategy,
    pub use_memory: bool,
    pub use_inner_aug: bool,
    pub use_outer_aug: bool,
    pub full_supervision: bool,
    pub swap_rate: f64,
    pub delete_rate: f64,
    pub synonym_rate: f64,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Write a model checkpoint every this many episodes; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            manifest: None,
            lexicon: None,
            output_dir: PathBuf::from("out"),
            order: None,
            seed: 0,
            k_shot: 5,
            batch_size: train.batch_size,
            episode_batches: train.episode_batches,
            budget: train.budget,
            memory_per_class: train.memory_per_class,
            relative_weight: train.relative_weight,
            inner_lr: train.inner_lr,
            outer_lr: train.outer_lr,
            al_strategy: train.strategy,
            memory_strategy: train.memory_strategy,
            use_memory: true,
            use_inner_aug: true,
            use_outer_aug: true,
            full_supervision: false,
            swap_rate: train.augment.swap_rate,
            delete_rate: train.augment.delete_rate,
            synonym_rate: train.augment.synonym_rate,
            input_dim: DEFAULT_INPUT_DIM,
            hidden_dims: DEFAULT_HIDDEN_DIMS.to_vec(),
            checkpoint_every: 0,
        }
    }
}

const STRING_KEYS: [&str; 5] = ["manifest", "lexicon", "output_dir", "al_strategy", "memory_strategy"];

fn parse_value(key: &str, raw: &str) -> toml::Value {
    if STRING_KEYS.contains(&key) {
        return toml::Value::String(raw.to_owned());
    }
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

impl RunConfig {
    /// Parses TOML text, then applies `(key, value)` overrides. Values of
    /// path and strategy keys are taken verbatim; others are read as TOML
    /// literals, falling back to bare strings.
    pub fn parse(source: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in overrides {
            let key = key.replace('-', "_");
            let value = parse_value(&key, value);
            table.insert(key, value);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episode_batches: self.episode_batches,
            batch_size: self.batch_size,
            budget: self.budget,
            memory_per_class: self.memory_per_class,
            relative_weight: self.relative_weight,
            inner_lr: self.inner_lr,
            outer_lr: self.outer_lr,
            strategy: self.al_strategy,
            memory_strategy: self.memory_strategy,
            augment: AugmentConfig {
                swap_rate: self.swap_rate,
                delete_rate: self.delete_rate,
                synonym_rate: self.synonym_rate,
            },
            flags: Flags {
                use_memory: self.use_memory,
                use_inner_aug: self.use_inner_aug,
                use_outer_aug: self.use_outer_aug,
                full_supervision: self.full_supervision,
            },
            seed: self.seed,
        }
    }

    pub fn model_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims
    }
}

/// Arg-max class over `head ∪ classes`, lowest class id on ties. Classes
/// missing from the head score a zero logit, as a freshly expanded row
/// would.
fn evaluate_task(model: &ModelState, task: &TaskSpec) -> Result<f64> {
    let mut eval = model.head.clone();
    for &c in &task.label_set {
        eval.expand(c);
    }
    let pairs = task
        .test
        .iter()
        .map(|e| {
            let rep = model.encode(&featurize_text(&e.text, model.input_dim()))?;
            let logits = eval.logits(&rep)?;
            let mut best = 0;
            for (i, z) in logits.iter().enumerate() {
                if *z > logits[best] {
                    best = i;
                }
            }
            Ok((e.require_label()?, eval.classes()[best]))
        })
        .collect::<Result<Vec<(ClassId, ClassId)>>>()?;
    macro_accuracy(&pairs)
}

/// One row of the accuracy matrix. The model is adapted once on a support
/// set from memory (skipped while memory is empty) and the adapted copy is
/// scored on every task's test set.
pub fn evaluate_stage(
    model: &ModelState,
    memory: &MemoryBuffer,
    tasks: &[TaskSpec],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let adapted;
    let eval_model = if memory.is_empty() {
        model
    } else {
        adapted = adapt_for_eval(model, memory, cfg, rng)?;
        &adapted
    };
    tasks.iter().map(|t| evaluate_task(eval_model, t)).collect()
}

/// Per-episode log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// 1-based task position.
    pub task: usize,
    pub kind: BatchKind,
    pub inner_losses: Vec<f64>,
    pub meta_loss: Option<f64>,
    pub annotations: usize,
    pub memory_size: usize,
}

pub const LOG_HEADER: &str = "episode,task,kind,inner_losses,meta_loss,annotations,memory_size";

impl EpisodeLog {
    pub fn csv_line(&self) -> String {
        let losses: Vec<String> = self.inner_losses.iter().map(f64::to_string).collect();
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.task,
            match self.kind {
                BatchKind::Labeled => "labeled",
                BatchKind::Pool => "pool",
            },
            losses.join(";"),
            self.meta_loss.map(|l| l.to_string()).unwrap_or_default(),
            self.annotations,
            self.memory_size
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub task_names: Vec<String>,
    pub matrix: AccuracyMatrix,
    pub metrics: MetricSummary,
    /// Oracle calls per task, in stream order.
    pub annotations: Vec<usize>,
    pub episodes: usize,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

impl RunResult {
    /// Recomputes the metrics from the stored matrix.
    pub fn recompute(&self) -> Result<MetricSummary> {
        self.matrix.summary()
    }
}

/// Everything a finished in-memory run leaves behind.
pub struct RunOutcome {
    pub result: RunResult,
    pub log: Vec<EpisodeLog>,
    pub trainer: Trainer,
}

/// Drives training over a prepared stream, evaluating a row per task.
///
/// `on_episode` is called after every episode, e.g. to flush logs.
pub fn run_stream(
    config: &RunConfig,
    stream: &TaskStream,
    oracle: Oracle,
    lexicon: SynonymLexicon,
    instrument: bool,
    mut on_episode: impl FnMut(&EpisodeLog, &Trainer) -> Result<()>,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let train_cfg = config.train_config();
    let model = ModelState::new(&config.model_dims(), config.seed);
    let mut trainer = Trainer::new(train_cfg.clone(), model, oracle, lexicon)?;
    if instrument {
        trainer = trainer.with_instrumentation();
    }
    let tasks = &stream.tasks;
    let mut matrix = AccuracyMatrix::new(tasks.iter().map(|t| t.test.len()).collect());
    let eval_rng = |stage: usize| derived_rng(config.seed, 100 + stage as u64);

    let row0 = evaluate_stage(&trainer.model, &trainer.memory, tasks, &train_cfg, &mut eval_rng(0))?;
    matrix.set_row(0, row0)?;

    let mut cursor = stream.cursor(train_cfg.batch_config());
    let mut log = Vec::new();
    let mut finished = 0;
    loop {
        let task_before = cursor.current_task();
        let Some(report) = trainer.run_episode(&mut cursor)? else {
            break;
        };
        let entry = EpisodeLog {
            episode: report.episode,
            task: task_before.map_or(0, |t| t + 1),
            kind: report.kind,
            inner_losses: report.inner_losses,
            meta_loss: report.meta_loss,
            annotations: report.annotations,
            memory_size: report.memory_size,
        };
        on_episode(&entry, &trainer)?;
        log.push(entry);
        let now = cursor.current_task().unwrap_or(tasks.len());
        while finished < now {
            finished += 1;
            let row = evaluate_stage(
                &trainer.model,
                &trainer.memory,
                tasks,
                &train_cfg,
                &mut eval_rng(finished),
            )?;
            log::info!("stage {finished}: {row:?}");
            matrix.set_row(finished, row)?;
        }
    }
    while finished < tasks.len() {
        finished += 1;
        let row = evaluate_stage(&trainer.model, &trainer.memory, tasks, &train_cfg, &mut eval_rng(finished))?;
        matrix.set_row(finished, row)?;
    }

    let metrics = matrix.summary()?;
    let annotations = (1..=tasks.len()).map(|t| trainer.oracle.calls(t)).collect();
    let result = RunResult {
        config: config.clone(),
        task_names: tasks.iter().map(|t| t.name.clone()).collect(),
        matrix,
        metrics,
        annotations,
        episodes: trainer.episodes(),
        seed: config.seed,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        result,
        log,
        trainer,
    })
}

/// Loads the manifest and lexicon named by `config` and applies the
/// configured order and few-shot sampling.
pub fn prepare(config: &RunConfig) -> Result<(TaskStream, Oracle, SynonymLexicon)> {
    let manifest_path = config
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("`manifest` is required".into()))?;
    let raw = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let mut manifest: crate::data::Manifest =
        serde_json::from_str(&raw).map_err(|e| Error::Manifest(e.to_string()))?;
    if let Some(order) = &config.order {
        manifest.order = Some(order.clone());
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let (stream, oracle) = TaskStream::from_manifest(&manifest, base)?;
    let stream = stream.with_few_shot(config.k_shot, config.seed)?;
    let lexicon = match &config.lexicon {
        Some(p) => SynonymLexicon::load(p)?,
        None => SynonymLexicon::bundled(),
    };
    Ok((stream, oracle, lexicon))
}

/// Writes `id, class, task_index, r0..` rows, one per stored example, with
/// representations recomputed by the current encoder.
pub fn dump_memory(memory: &MemoryBuffer, model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dim = model.encoder.output_dim();
    let mut out = String::from("id\tclass\ttask_index");
    for i in 0..dim {
        let _ = write!(out, "\tr{i}");
    }
    out.push('\n');
    for slot in memory.slots() {
        let e = &slot.example;
        let rep = model.encode(&featurize_text(&e.text, model.input_dim()))?;
        let _ = write!(out, "{}\t{}\t{}", e.id, e.require_label()?, e.task_index);
        for r in rep {
            let _ = write!(out, "\t{r}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub const RUN_FILE: &str = "run.json";
pub const LOG_FILE: &str = "log.csv";
pub const MEMORY_FILE: &str = "memory.tsv";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const MEMORY_STATE_FILE: &str = "memory.json";

/// Runs a configured experiment and writes `run.json`, `log.csv`,
/// `memory.tsv`, the final model checkpoint and the memory state into
/// `config.output_dir`. If training fails, the log written so far is kept
/// and the error is returned.
pub fn run_experiment(config: &RunConfig) -> Result<RunResult> {
    let (stream, oracle, lexicon) = prepare(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let log_path = dir.join(LOG_FILE);
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let outcome = run_stream(config, &stream, oracle, lexicon, false, |entry, trainer| {
        writeln!(log_file, "{}", entry.csv_line()).map_err(|e| Error::io(&log_path, e))?;
        log_file.flush().map_err(|e| Error::io(&log_path, e))?;
        if config.checkpoint_every > 0 && entry.episode % config.checkpoint_every == 0 {
            trainer.model.save(&ckpt_path)?;
        }
        Ok(())
    })?;

    let trainer = &outcome.trainer;
    trainer.model.save(&ckpt_path)?;
    let mem_path = dir.join(MEMORY_STATE_FILE);
    fs::write(&mem_path, serde_json::to_string(&trainer.memory)?).map_err(|e| Error::io(&mem_path, e))?;
    dump_memory(&trainer.memory, &trainer.model, dir.join(MEMORY_FILE))?;
    let run_path = dir.join(RUN_FILE);
    fs::write(&run_path, serde_json::to_string_pretty(&outcome.result)?)
        .map_err(|e| Error::io(&run_path, e))?;
    Ok(outcome.result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parse_and_override() {
        let cfg = RunConfig::parse(
            "seed = 3\nal_strategy = \"unc-lc\"\nhidden_dims = [16, 8]\n",
            &[
                ("budget".into(), "100".into()),
                ("memory-strategy".into(), "ring".into()),
                ("use_memory".into(), "false".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.al_strategy, Strategy::LeastConfidence);
        assert_eq!(cfg.budget, 100);
        assert_eq!(cfg.memory_strategy, MemoryStrategy::Ring);
        assert!(!cfg.use_memory);
        assert_eq!(cfg.model_dims(), vec![DEFAULT_INPUT_DIM, 16, 8]);

        assert!(RunConfig::parse("bogus = 1", &[]).is_err());
        assert!(RunConfig::parse("relative_weight = 2.0", &[]).is_err());
        let back = RunConfig::parse(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.inner_lr, 1e-3);
        assert_eq!(cfg.outer_lr, 3e-5);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.episode_batches, 5);
        assert_eq!(cfg.budget, 2000);
        assert_eq!(cfg.memory_per_class, 5);
    }
}
