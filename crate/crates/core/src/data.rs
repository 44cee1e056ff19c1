//! Task streams: loading, few-shot sampling, episode batching and the
//! labeling oracle.
//!
//! A stream is an ordered list of tasks. Each task contributes a labeled
//! few-shot set, an unlabeled pool and a test set. The trainer consumes the
//! stream through a [`StreamCursor`], which hands out episodes of at most `m`
//! batches. Pool labels never reach the trainer directly; they live in the
//! [`Oracle`] and are released one annotation at a time under a per-task
//! budget.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global class identifier shared by all tasks of a stream.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Shipped with a label (few-shot set or test set).
    Given,
    /// Unlabeled pool member; the label is held by the oracle.
    Pool,
    /// Pool member labeled through the oracle during training.
    Annotated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Given => "given",
            Provenance::Pool => "pool",
            Provenance::Annotated => "annotated",
        }
    }
}

/// One text instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: Option<ClassId>,
    /// 1-based position of the owning task in the stream. Only the harness
    /// and the oracle look at this.
    pub task_index: usize,
    pub provenance: Provenance,
}

impl Example {
    pub fn labeled(id: impl Into<String>, text: impl Into<String>, label: ClassId) -> Self {
        Example {
            id: id.into(),
            text: text.into(),
            label: Some(label),
            task_index: 1,
            provenance: Provenance::Given,
        }
    }

    pub fn require_label(&self) -> Result<ClassId> {
        self.label.ok_or_else(|| Error::Unlabeled(self.id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub label_set: BTreeSet<ClassId>,
    pub labeled: Vec<Example>,
    pub pool: Vec<Example>,
    pub test: Vec<Example>,
}

impl TaskSpec {
    /// Draws exactly `k` labeled examples per class of this task.
    ///
    /// Candidates of each class are shuffled with a generator seeded from
    /// `seed`; the union is shuffled once more so batches mix classes.
    pub fn sample_few_shot(&self, k: usize, seed: u64) -> Result<Vec<Example>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: BTreeMap<ClassId, Vec<&Example>> =
            self.label_set.iter().map(|&c| (c, Vec::new())).collect();
        for ex in &self.labeled {
            let label = ex.require_label()?;
            if let Some(bucket) = by_class.get_mut(&label) {
                bucket.push(ex);
            }
        }
        let mut out = Vec::with_capacity(k * by_class.len());
        for (class, mut candidates) in by_class {
            if candidates.len() < k {
                return Err(Error::InsufficientExamples {
                    class: class.0,
                    available: candidates.len(),
                    requested: k,
                });
            }
            candidates.shuffle(&mut rng);
            out.extend(candidates.into_iter().take(k).cloned());
        }
        out.shuffle(&mut rng);
        Ok(out)
    }
}

/// `⌈b · B_A / |pool|⌉`, the number of pool examples annotated per batch.
pub fn selection_size(batch_size: usize, budget: usize, pool_size: usize) -> Result<usize> {
    if pool_size == 0 {
        return Err(Error::EmptyPool);
    }
    Ok((batch_size * budget).div_ceil(pool_size))
}

/// Named five-dataset orderings used by the text classification benchmark.
pub const BENCHMARK_ORDERS: [[&str; 5]; 4] = [
    ["yelp", "agnews", "dbpedia", "amazon", "yahoo"],
    ["dbpedia", "yahoo", "agnews", "amazon", "yelp"],
    ["yelp", "yahoo", "amazon", "dbpedia", "agnews"],
    ["agnews", "yelp", "amazon", "yahoo", "dbpedia"],
];

/// Returns the dataset names of the 1-based benchmark ordering `index`.
pub fn benchmark_order(index: usize) -> Result<[&'static str; 5]> {
    index
        .checked_sub(1)
        .and_then(|i| BENCHMARK_ORDERS.get(i).copied())
        .ok_or_else(|| Error::OutOfRange(format!("benchmark order {index}")))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ManifestTask {
    pub name: String,
    pub labeled_path: PathBuf,
    pub pool_path: PathBuf,
    pub test_path: PathBuf,
    pub classes: Vec<u32>,
}

/// On-disk description of a stream. Paths are resolved relative to the
/// manifest's directory.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Manifest {
    pub tasks: Vec<ManifestTask>,
    /// 1-based indices into `tasks`.
    #[serde(default)]
    pub order: Option<Vec<usize>>,
    /// 1-based benchmark ordering, resolved against task names
    /// (case-insensitive). Ignored when `order` is present.
    #[serde(default)]
    pub order_preset: Option<usize>,
    #[serde(default)]
    pub class_names_path: Option<PathBuf>,
}

impl Manifest {
    pub fn resolved_order(&self) -> Result<Vec<usize>> {
        if let Some(order) = &self.order {
            return Ok(order.clone());
        }
        if let Some(preset) = self.order_preset {
            return benchmark_order(preset)?
                .iter()
                .map(|name| {
                    self.tasks
                        .iter()
                        .position(|t| t.name.eq_ignore_ascii_case(name))
                        .map(|i| i + 1)
                        .ok_or_else(|| {
                            Error::Manifest(format!("order preset needs a task named `{name}`"))
                        })
                })
                .collect();
        }
        Ok((1..=self.tasks.len()).collect())
    }
}

#[derive(Deserialize)]
struct Record {
    id: Option<String>,
    text: Option<String>,
    label: Option<u32>,
}

fn read_split(
    path: &Path,
    classes: &BTreeSet<ClassId>,
    task_index: usize,
) -> Result<Vec<(Example, ClassId)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, reason: &str| Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason: reason.to_owned(),
    };
    let mut out = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(line).map_err(|e| malformed(line_no, &e.to_string()))?;
        let id = rec.id.ok_or_else(|| malformed(line_no, "missing `id`"))?;
        let text = rec.text.ok_or_else(|| malformed(line_no, "missing `text`"))?;
        let label = ClassId(rec.label.ok_or_else(|| malformed(line_no, "missing `label`"))?);
        if !classes.contains(&label) {
            return Err(malformed(line_no, &format!("label {label} not in task classes")));
        }
        let ex = Example {
            id,
            text,
            label: Some(label),
            task_index,
            provenance: Provenance::Given,
        };
        out.push((ex, label));
    }
    Ok(out)
}

/// Ordered tasks plus optional class names for reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub class_names: BTreeMap<ClassId, String>,
}

impl TaskStream {
    /// Loads a manifest and its JSONL splits. Pool labels are moved into the
    /// returned oracle and stripped from the stream.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<(TaskStream, Oracle)> {
        let manifest_path = manifest_path.as_ref();
        let raw = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&raw).map_err(|e| Error::Manifest(e.to_string()))?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_manifest(&manifest, base)
    }

    pub fn from_manifest(manifest: &Manifest, base: &Path) -> Result<(TaskStream, Oracle)> {
        let order = manifest.resolved_order()?;
        let mut seen_ids = HashSet::new();
        let mut hidden = HashMap::new();
        let mut tasks = Vec::with_capacity(order.len());
        for (pos, &idx) in order.iter().enumerate() {
            let task_index = pos + 1;
            let mt = idx
                .checked_sub(1)
                .and_then(|i| manifest.tasks.get(i))
                .ok_or_else(|| Error::Manifest(format!("order index {idx} out of range")))?;
            let label_set: BTreeSet<ClassId> = mt.classes.iter().copied().map(ClassId).collect();
            if label_set.is_empty() {
                return Err(Error::Manifest(format!("task `{}` has no classes", mt.name)));
            }
            let mut split = |p: &Path| -> Result<Vec<(Example, ClassId)>> {
                let recs = read_split(&base.join(p), &label_set, task_index)?;
                for (ex, _) in &recs {
                    if !seen_ids.insert(ex.id.clone()) {
                        return Err(Error::DuplicateId(ex.id.clone()));
                    }
                }
                Ok(recs)
            };
            let labeled = split(&mt.labeled_path)?.into_iter().map(|(e, _)| e).collect();
            let pool = split(&mt.pool_path)?
                .into_iter()
                .map(|(mut e, label)| {
                    hidden.insert(e.id.clone(), (label, task_index));
                    e.label = None;
                    e.provenance = Provenance::Pool;
                    e
                })
                .collect();
            let test = split(&mt.test_path)?.into_iter().map(|(e, _)| e).collect();
            tasks.push(TaskSpec {
                name: mt.name.clone(),
                label_set,
                labeled,
                pool,
                test,
            });
        }
        let class_names = match &manifest.class_names_path {
            Some(p) => load_class_names(&base.join(p))?,
            None => BTreeMap::new(),
        };
        Ok((TaskStream { tasks, class_names }, Oracle::new(hidden)))
    }

    /// Builds a stream from in-memory tasks whose pool examples still carry
    /// labels. Labels are moved into the oracle exactly as [`TaskStream::load`]
    /// does.
    pub fn from_labeled_tasks(mut tasks: Vec<TaskSpec>) -> Result<(TaskStream, Oracle)> {
        let mut seen = HashSet::new();
        let mut hidden = HashMap::new();
        for (pos, task) in tasks.iter_mut().enumerate() {
            let task_index = pos + 1;
            for ex in task.labeled.iter_mut().chain(task.test.iter_mut()) {
                ex.require_label()?;
                ex.task_index = task_index;
                ex.provenance = Provenance::Given;
                if !seen.insert(ex.id.clone()) {
                    return Err(Error::DuplicateId(ex.id.clone()));
                }
            }
            for ex in task.pool.iter_mut() {
                let label = ex.require_label()?;
                if !seen.insert(ex.id.clone()) {
                    return Err(Error::DuplicateId(ex.id.clone()));
                }
                hidden.insert(ex.id.clone(), (label, task_index));
                ex.label = None;
                ex.task_index = task_index;
                ex.provenance = Provenance::Pool;
            }
        }
        Ok((
            TaskStream {
                tasks,
                class_names: BTreeMap::new(),
            },
            Oracle::new(hidden),
        ))
    }

    /// Replaces every task's labeled split by a `k`-shot sample.
    pub fn with_few_shot(mut self, k: usize, seed: u64) -> Result<Self> {
        for (pos, task) in self.tasks.iter_mut().enumerate() {
            let task_seed = seed ^ (pos as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            task.labeled = task.sample_few_shot(k, task_seed)?;
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn all_classes(&self) -> BTreeSet<ClassId> {
        self.tasks
            .iter()
            .flat_map(|t| t.label_set.iter().copied())
            .collect()
    }

    pub fn cursor(&self, config: BatchConfig) -> StreamCursor<'_> {
        StreamCursor {
            stream: self,
            config,
            task: 0,
            offset: 0,
        }
    }
}

fn load_class_names(path: &Path) -> Result<BTreeMap<ClassId, String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: BTreeMap<String, String> = serde_json::from_str(&raw)?;
    table
        .into_iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|id| (ClassId(id), v))
                .map_err(|_| Error::Manifest(format!("class name key `{k}` is not an integer")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKind {
    Labeled,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeBatch {
    pub examples: Vec<Example>,
    pub kind: BatchKind,
}

/// Up to `m` batches drawn from one task and one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub batches: Vec<EpisodeBatch>,
    /// Size of the pool of the task this episode came from; the trainer uses
    /// it for the per-batch selection size.
    pub pool_size: usize,
}

impl Episode {
    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    /// Batches per episode (`m`).
    pub episode_batches: usize,
    /// Examples per batch (`b`).
    pub batch_size: usize,
}

/// Single-pass reader over a stream: every labeled example of a task, then
/// every pool example, task after task.
#[derive(Debug, Clone)]
pub struct StreamCursor<'a> {
    stream: &'a TaskStream,
    config: BatchConfig,
    task: usize,
    /// Offset into the concatenation `labeled ++ pool` of the current task.
    offset: usize,
}

impl StreamCursor<'_> {
    /// 0-based position of the task the next episode will come from, or
    /// `None` once the stream is exhausted.
    pub fn current_task(&self) -> Option<usize> {
        (self.task < self.stream.tasks.len()).then_some(self.task)
    }

    pub fn is_exhausted(&self) -> bool {
        self.current_task().is_none()
    }

    /// Returns the next episode, or an empty one when the stream is done.
    ///
    /// An episode never crosses a task boundary and never mixes the labeled
    /// and pool splits; a short split yields a short final batch.
    pub fn next_episode(&mut self) -> Episode {
        let b = self.config.batch_size.max(1);
        let m = self.config.episode_batches.max(1);
        loop {
            let Some(task) = self.stream.tasks.get(self.task) else {
                return Episode {
                    batches: Vec::new(),
                    pool_size: 0,
                };
            };
            let n_labeled = task.labeled.len();
            let total = n_labeled + task.pool.len();
            if self.offset >= total {
                self.task += 1;
                self.offset = 0;
                continue;
            }
            let (kind, split, start, end) = if self.offset < n_labeled {
                (BatchKind::Labeled, &task.labeled, self.offset, n_labeled)
            } else {
                (BatchKind::Pool, &task.pool, self.offset - n_labeled, task.pool.len())
            };
            let take = (end - start).min(m * b);
            let batches = split[start..start + take]
                .chunks(b)
                .map(|chunk| EpisodeBatch {
                    examples: chunk.to_vec(),
                    kind,
                })
                .collect();
            self.offset += take;
            if self.offset >= total {
                self.task += 1;
                self.offset = 0;
            }
            return Episode {
                batches,
                pool_size: task.pool.len(),
            };
        }
    }
}

/// Holds the hidden pool labels and counts annotations per task.
///
/// Each new annotation is charged against the task's budget; looking up an
/// id that was already annotated is free and returns the same label.
#[derive(Debug, Clone)]
pub struct Oracle {
    hidden: HashMap<String, (ClassId, usize)>,
    annotated: HashSet<String>,
    calls: BTreeMap<usize, usize>,
    budget: Option<usize>,
}

impl Oracle {
    pub fn new(hidden: HashMap<String, (ClassId, usize)>) -> Self {
        Oracle {
            hidden,
            annotated: HashSet::new(),
            calls: BTreeMap::new(),
            budget: None,
        }
    }

    /// Sets the per-task annotation cap. `None` means unlimited.
    pub fn set_budget(&mut self, budget: Option<usize>) {
        self.budget = budget;
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    /// Returns the hidden label of a pool example.
    pub fn label(&mut self, example_id: &str) -> Result<ClassId> {
        let &(label, task) = self
            .hidden
            .get(example_id)
            .ok_or_else(|| Error::UnknownId(example_id.to_owned()))?;
        if !self.annotated.contains(example_id) {
            let spent = self.calls.get(&task).copied().unwrap_or(0);
            if self.budget.is_some_and(|b| spent >= b) {
                return Err(Error::BudgetExhausted { task });
            }
            self.annotated.insert(example_id.to_owned());
            *self.calls.entry(task).or_insert(0) += 1;
        }
        Ok(label)
    }

    /// Annotations still available for the task owning `example_id`.
    pub fn remaining(&self, example_id: &str) -> Result<usize> {
        let &(_, task) = self
            .hidden
            .get(example_id)
            .ok_or_else(|| Error::UnknownId(example_id.to_owned()))?;
        let spent = self.calls.get(&task).copied().unwrap_or(0);
        Ok(self.budget.map_or(usize::MAX, |b| b.saturating_sub(spent)))
    }

    /// Annotations charged so far to the 1-based task `task_index`.
    pub fn calls(&self, task_index: usize) -> usize {
        self.calls.get(&task_index).copied().unwrap_or(0)
    }

    pub fn calls_per_task(&self) -> &BTreeMap<usize, usize> {
        &self.calls
    }

    pub fn pool_len(&self) -> usize {
        self.hidden.len()
    }
}
