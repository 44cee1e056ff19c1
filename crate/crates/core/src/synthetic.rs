//! Synthetic keyword streams for experiments and tests.
//!
//! Every class owns a private keyword vocabulary, partitioned into synonym
//! groups that are also emitted as a lexicon. A text mixes keywords of its
//! class with filler words shared by all classes of all tasks. Pool texts
//! can additionally have a fraction of their tokens replaced by noise words
//! shared across the whole stream; the label is unaffected.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::SynonymLexicon;
use crate::data::{ClassId, Example, Manifest, ManifestTask, Provenance, TaskSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub keywords_per_class: usize,
    pub synonym_group: usize,
    pub filler_words: usize,
    pub noise_words: usize,
    pub tokens_per_text: usize,
    /// Fraction of a text's tokens drawn from its class keywords.
    pub keyword_fraction: f64,
    /// Labeled candidates per class written to the labeled split.
    pub labeled_per_class: usize,
    pub pool_size: usize,
    pub test_size: usize,
    /// Fraction of pool tokens replaced by noise words.
    pub pool_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            tasks: 3,
            classes_per_task: 4,
            keywords_per_class: 24,
            synonym_group: 3,
            filler_words: 200,
            noise_words: 200,
            tokens_per_text: 12,
            keyword_fraction: 0.4,
            labeled_per_class: 5,
            pool_size: 500,
            test_size: 200,
            pool_noise: 0.0,
            seed: 0,
        }
    }
}

fn keyword(task: usize, class: usize, j: usize) -> String {
    format!("t{task}c{class}k{j}")
}

/// Generated stream whose pool examples still carry their labels (see
/// [`crate::data::TaskStream::from_labeled_tasks`]).
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub tasks: Vec<TaskSpec>,
    pub lexicon: SynonymLexicon,
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<SyntheticStream> {
        if self.tasks == 0 || self.classes_per_task == 0 || self.keywords_per_class == 0 {
            return Err(Error::Config("synthetic stream needs tasks, classes and keywords".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let filler: Vec<String> = (0..self.filler_words.max(1)).map(|j| format!("w{j}")).collect();
        let noise: Vec<String> = (0..self.noise_words.max(1)).map(|j| format!("n{j}")).collect();

        let mut lexicon = SynonymLexicon::new();
        let group = self.synonym_group.max(1);
        for t in 1..=self.tasks {
            for c in 0..self.classes_per_task {
                let words: Vec<String> =
                    (0..self.keywords_per_class).map(|j| keyword(t, c, j)).collect();
                for chunk in words.chunks(group) {
                    for w in chunk {
                        lexicon.insert(w, chunk.iter().filter(|o| *o != w).cloned());
                    }
                }
            }
        }

        let mut tasks = Vec::with_capacity(self.tasks);
        for t in 1..=self.tasks {
            let base = ((t - 1) * self.classes_per_task) as u32;
            let label_set = (0..self.classes_per_task as u32).map(|c| ClassId(base + c)).collect();
            let text = |class: usize, noisy: bool, rng: &mut ChaCha8Rng| -> String {
                let n = self.tokens_per_text.max(1);
                let mut tokens: Vec<String> = (0..n)
                    .map(|_| {
                        if rng.gen_bool(self.keyword_fraction) {
                            keyword(t, class, rng.gen_range(0..self.keywords_per_class))
                        } else {
                            filler.choose(rng).expect("nonempty").clone()
                        }
                    })
                    .collect();
                if noisy && self.pool_noise > 0.0 {
                    for tok in tokens.iter_mut() {
                        if rng.gen_bool(self.pool_noise) {
                            *tok = noise.choose(rng).expect("nonempty").clone();
                        }
                    }
                }
                tokens.join(" ")
            };
            let make = |split: &str, count: usize, noisy: bool, by_class: bool, rng: &mut ChaCha8Rng| {
                (0..count)
                    .map(|i| {
                        let class = if by_class {
                            i % self.classes_per_task
                        } else {
                            rng.gen_range(0..self.classes_per_task)
                        };
                        Example {
                            id: format!("t{t}-{split}-{i}"),
                            text: text(class, noisy, rng),
                            label: Some(ClassId(base + class as u32)),
                            task_index: t,
                            provenance: Provenance::Given,
                        }
                    })
                    .collect::<Vec<_>>()
            };
            let labeled = make(
                "labeled",
                self.labeled_per_class * self.classes_per_task,
                false,
                true,
                &mut rng,
            );
            let pool = make("pool", self.pool_size, true, false, &mut rng);
            let test = make("test", self.test_size, false, true, &mut rng);
            tasks.push(TaskSpec {
                name: format!("task{t}"),
                label_set,
                labeled,
                pool,
                test,
            });
        }
        Ok(SyntheticStream { tasks, lexicon })
    }

    /// Writes `manifest.json`, per-task JSONL splits and `lexicon.tsv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stream = self.generate()?;
        let mut entries = Vec::new();
        for task in &stream.tasks {
            let mut paths = Vec::new();
            for (split, examples) in [("labeled", &task.labeled), ("pool", &task.pool), ("test", &task.test)] {
                let name = format!("{}.{split}.jsonl", task.name);
                let path = dir.join(&name);
                let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                for ex in examples {
                    let line = serde_json::json!({
                        "id": ex.id,
                        "text": ex.text,
                        "label": ex.label.map(|c| c.0),
                    });
                    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
                }
                paths.push(name);
            }
            entries.push(ManifestTask {
                name: task.name.clone(),
                labeled_path: paths[0].clone().into(),
                pool_path: paths[1].clone().into(),
                test_path: paths[2].clone().into(),
                classes: task.label_set.iter().map(|c| c.0).collect(),
            });
        }
        let manifest = Manifest {
            tasks: entries,
            order: None,
            order_preset: None,
            class_names_path: None,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;

        let path = dir.join("lexicon.tsv");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for (word, syns) in stream.lexicon.iter() {
            writeln!(f, "{word}\t{}", syns.join(",")).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    #[test]
    fn shapes_and_labels() {
        let spec = SyntheticSpec {
            pool_size: 40,
            test_size: 16,
            ..SyntheticSpec::default()
        };
        let s = spec.generate().unwrap();
        assert_eq!(s.tasks.len(), 3);
        for (i, t) in s.tasks.iter().enumerate() {
            assert_eq!(t.label_set.len(), 4);
            assert_eq!(t.labeled.len(), 20);
            assert_eq!(t.pool.len(), 40);
            assert_eq!(t.test.len(), 16);
            for e in t.labeled.iter().chain(&t.pool).chain(&t.test) {
                assert!(t.label_set.contains(&e.label.unwrap()));
                assert_eq!(e.task_index, i + 1);
                assert_eq!(tokenize(&e.text).len(), spec.tokens_per_text);
            }
        }
        assert_eq!(s.lexicon.get("t1c0k0").unwrap(), ["t1c0k1", "t1c0k2"]);
    }

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec::default();
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a.tasks, b.tasks);
    }
}
