//! Episodic meta-continual active learning.
//!
//! Each episode takes up to `m` batches from the stream. Labeled batches
//! adapt the classifier head with a weak-augmentation regularized loss.
//! Pool batches first spend part of the annotation budget through an
//! acquisition strategy, then adapt the head on the newly labeled subset
//! with a supervised term plus a weak/strong consistency term. Every
//! labeled or newly annotated example is offered to the replay memory.
//! Finally a first-order meta step moves encoder and head with Adam,
//! using the gradient taken at the adapted parameters on strongly
//! augmented memory.
//!
//! Inner steps update the head in place and the outer step starts from
//! the adapted head, so one continual run is one parameter trajectory.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, Candidate, Strategy};
use crate::augment::{strong_augment, weak_augment, AugmentConfig, SynonymLexicon};
use crate::data::{selection_size, BatchConfig, BatchKind, Example, Oracle, Provenance, StreamCursor};
use crate::error::{Error, Result};
use crate::memory::{MemoryBuffer, MemoryStrategy};
use crate::model::{DenseGrad, FullGrad, HeadGrad, ModelState, Target, Term};
use crate::text::{featurize_text, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub use_memory: bool,
    pub use_inner_aug: bool,
    pub use_outer_aug: bool,
    pub full_supervision: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            use_memory: true,
            use_inner_aug: true,
            use_outer_aug: true,
            full_supervision: false,
        }
    }
}

/// Hyperparameters of one continual run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Batches per episode (`m`).
    pub episode_batches: usize,
    /// Examples per batch (`b`).
    pub batch_size: usize,
    /// Annotation budget per task (`B_A`).
    pub budget: usize,
    /// Memory slots per class (`n_s`).
    pub memory_per_class: usize,
    /// Weight `w` of the supervised term in the inner losses.
    pub relative_weight: f64,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub strategy: Strategy,
    pub memory_strategy: MemoryStrategy,
    pub augment: AugmentConfig,
    pub flags: Flags,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episode_batches: 5,
            batch_size: 16,
            budget: 2000,
            memory_per_class: 5,
            relative_weight: 0.5,
            inner_lr: 1e-3,
            outer_lr: 3e-5,
            strategy: Strategy::Random,
            memory_strategy: MemoryStrategy::Reservoir,
            augment: AugmentConfig::default(),
            flags: Flags::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episode_batches == 0 {
            return Err(Error::Config("episode_batches must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.memory_per_class == 0 {
            return Err(Error::Config("memory_per_class must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.relative_weight) {
            return Err(Error::Config("relative_weight must lie in [0, 1]".into()));
        }
        self.augment.validate()
    }

    pub fn batch_config(&self) -> BatchConfig {
        BatchConfig {
            episode_batches: self.episode_batches,
            batch_size: self.batch_size,
        }
    }
}

/// Adam with bias correction.
///
/// Moments are shaped like the model; head rows for classes added after
/// the optimizer was created start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: FullGrad,
    second: FullGrad,
}

fn zeros_like(model: &ModelState) -> FullGrad {
    FullGrad {
        encoder: model
            .encoder
            .layers
            .iter()
            .map(|l| DenseGrad {
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.out_dim],
            })
            .collect(),
        head: HeadGrad::zeros_like(&model.head),
    }
}

fn align_head(moments: &mut HeadGrad, classes: &[crate::data::ClassId], dim: usize) {
    for (pos, class) in classes.iter().enumerate() {
        if moments.classes.get(pos) != Some(class) {
            moments.classes.insert(pos, *class);
            moments.weights.insert(pos, vec![0.0; dim]);
            moments.bias.insert(pos, 0.0);
        }
    }
}

impl Adam {
    pub fn new(model: &ModelState) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros_like(model),
            second: zeros_like(model),
        }
    }

    /// Applies one update of rate `lr` along `grad` to every parameter.
    pub fn update(&mut self, model: &mut ModelState, grad: &FullGrad, lr: f64) -> Result<()> {
        if grad.head.classes != model.head.classes() {
            return Err(Error::Shape("gradient head classes differ from model".into()));
        }
        let dim = model.head.dim;
        align_head(&mut self.first.head, model.head.classes(), dim);
        align_head(&mut self.second.head, model.head.classes(), dim);
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (l, layer) in model.encoder.layers.iter_mut().enumerate() {
            let (g, m, v) = (&grad.encoder[l], &mut self.first.encoder[l], &mut self.second.encoder[l]);
            for i in 0..layer.weights.len() {
                apply(&mut layer.weights[i], g.weights[i], &mut m.weights[i], &mut v.weights[i]);
            }
            for i in 0..layer.bias.len() {
                apply(&mut layer.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
            }
        }
        for c in 0..model.head.len() {
            let (w, b) = model.head.row_mut(c);
            let (m, v) = (&mut self.first.head, &mut self.second.head);
            for (i, wi) in w.iter_mut().enumerate() {
                apply(wi, grad.head.weights[c][i], &mut m.weights[c][i], &mut v.weights[c][i]);
            }
            apply(b, grad.head.bias[c], &mut m.bias[c], &mut v.bias[c]);
        }
        Ok(())
    }

    pub fn first_moment(&self) -> &FullGrad {
        &self.first
    }
}

fn features(text: &str, model: &ModelState) -> FeatureVector {
    featurize_text(text, model.input_dim())
}

fn step_head(model: &mut ModelState, terms: &[Term<'_>], lr: f64) -> Result<f64> {
    let loss = model.loss(terms)?;
    let grad = model.grad_head(terms)?;
    model.head.apply_sgd(&grad, lr)?;
    Ok(loss)
}

/// One SGD step on the head over a labeled batch.
///
/// The loss is `Σ w·CE(f(x), y) + (1−w)·CE(f(α(x)), y)` with `α` the weak
/// augmentation, or plain `Σ CE(f(x), y)` when inner augmentation is off.
/// Returns the loss before the step.
pub fn inner_step_labeled(
    model: &mut ModelState,
    batch: &[Example],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let labels = batch
        .iter()
        .map(Example::require_label)
        .collect::<Result<Vec<_>>>()?;
    for &y in &labels {
        model.expand_head(y);
    }
    let w = cfg.relative_weight;
    let clean: Vec<FeatureVector> = batch.iter().map(|e| features(&e.text, model)).collect();
    let weak: Vec<FeatureVector> = if cfg.flags.use_inner_aug {
        batch
            .iter()
            .map(|e| features(&weak_augment(&e.text, &cfg.augment, rng), model))
            .collect()
    } else {
        Vec::new()
    };
    let mut terms = Vec::with_capacity(2 * batch.len());
    for (i, &y) in labels.iter().enumerate() {
        if cfg.flags.use_inner_aug {
            terms.push(Term::hard(&clean[i], y, w));
            terms.push(Term::hard(&weak[i], y, 1.0 - w));
        } else {
            terms.push(Term::hard(&clean[i], y, 1.0));
        }
    }
    step_head(model, &terms, cfg.inner_lr)
}

/// Builds the terms of the annotated-batch loss:
/// `Σ w·CE(f(x), y) + (1−w)·CE(f(𝒜(x)), sg(f(α(x))))`, where the weak-view
/// prediction is frozen into a soft target.
pub fn annotated_terms<'a>(
    model: &ModelState,
    labels: &[crate::data::ClassId],
    clean: &'a [FeatureVector],
    views: Option<(&'a [FeatureVector], &'a [FeatureVector])>,
    w: f64,
) -> Result<Vec<Term<'a>>> {
    let mut terms = Vec::with_capacity(2 * labels.len());
    for (i, &y) in labels.iter().enumerate() {
        match views {
            Some((weak, strong)) => {
                let soft = model.predict(&weak[i])?;
                terms.push(Term::hard(&clean[i], y, w));
                terms.push(Term {
                    features: &strong[i],
                    target: Target::Soft(soft),
                    weight: 1.0 - w,
                });
            }
            None => terms.push(Term::hard(&clean[i], y, 1.0)),
        }
    }
    Ok(terms)
}

/// One SGD step on the head over newly annotated examples. Returns the loss
/// before the step.
pub fn inner_step_annotated(
    model: &mut ModelState,
    batch: &[Example],
    lexicon: &SynonymLexicon,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut labels = Vec::with_capacity(batch.len());
    for e in batch {
        if e.provenance != Provenance::Annotated {
            return Err(Error::Provenance {
                id: e.id.clone(),
                found: e.provenance.as_str(),
                expected: Provenance::Annotated.as_str(),
            });
        }
        labels.push(e.require_label()?);
    }
    for &y in &labels {
        model.expand_head(y);
    }
    let clean: Vec<FeatureVector> = batch.iter().map(|e| features(&e.text, model)).collect();
    let (weak, strong): (Vec<FeatureVector>, Vec<FeatureVector>) = if cfg.flags.use_inner_aug {
        batch
            .iter()
            .map(|e| {
                let weak = weak_augment(&e.text, &cfg.augment, rng);
                let strong = strong_augment(&e.text, lexicon, &cfg.augment, rng);
                (features(&weak, model), features(&strong, model))
            })
            .unzip()
    } else {
        (Vec::new(), Vec::new())
    };
    let views = cfg
        .flags
        .use_inner_aug
        .then_some((weak.as_slice(), strong.as_slice()));
    let terms = annotated_terms(model, &labels, &clean, views, cfg.relative_weight)?;
    step_head(model, &terms, cfg.inner_lr)
}

/// Picks up to `n_a` members of a pool batch (never more than the task's
/// remaining budget) and labels them through the oracle.
pub fn annotate_batch(
    model: &ModelState,
    batch: &[Example],
    n_a: usize,
    strategy: Strategy,
    oracle: &mut Oracle,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Example>> {
    let Some(first) = batch.first() else {
        return Ok(Vec::new());
    };
    let take = n_a.min(oracle.remaining(&first.id)?).min(batch.len());
    if take == 0 {
        return Ok(Vec::new());
    }
    let candidates = batch
        .iter()
        .map(|e| {
            let x = features(&e.text, model);
            let probs = if strategy.needs_probabilities() {
                let mut p = if model.head.is_empty() {
                    vec![1.0]
                } else {
                    model.predict(&x)?
                };
                // a single known class is treated as a confident prediction
                if p.len() < 2 {
                    p.push(0.0);
                }
                p
            } else {
                Vec::new()
            };
            let representation = if strategy.needs_representations() {
                model.encode(&x)?
            } else {
                Vec::new()
            };
            Ok(Candidate {
                id: e.id.clone(),
                probs,
                representation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let picked = acquisition::select_indices(&candidates, take, strategy, rng)?;
    picked
        .into_iter()
        .map(|i| {
            let mut e = batch[i].clone();
            e.label = Some(oracle.label(&e.id)?);
            e.provenance = Provenance::Annotated;
            Ok(e)
        })
        .collect()
}

/// Result of a meta step.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStep {
    pub loss: f64,
    /// Gradient at the adapted parameters, the direction handed to Adam.
    pub grad: FullGrad,
    /// Texts the meta loss was evaluated on, after augmentation.
    pub texts: Vec<String>,
}

/// First-order meta step on the whole memory.
///
/// The loss `Σ CE(f(𝒜(x)), y)` over every stored example is evaluated at the
/// current (inner-adapted) parameters; its gradient with respect to encoder
/// and head is applied by Adam at rate `outer_lr`. Returns `None` without
/// touching anything when memory is disabled or empty.
pub fn outer_step(
    model: &mut ModelState,
    memory: &MemoryBuffer,
    adam: &mut Adam,
    lexicon: &SynonymLexicon,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<OuterStep>> {
    if !cfg.flags.use_memory {
        return Ok(None);
    }
    if memory.is_empty() {
        log::debug!("memory empty, skipping outer step");
        return Ok(None);
    }
    let stored = memory.read_all();
    let mut labels = Vec::with_capacity(stored.len());
    let mut texts = Vec::with_capacity(stored.len());
    for e in &stored {
        let y = e.require_label()?;
        model.expand_head(y);
        labels.push(y);
        texts.push(if cfg.flags.use_outer_aug {
            strong_augment(&e.text, lexicon, &cfg.augment, rng)
        } else {
            e.text.clone()
        });
    }
    let xs: Vec<FeatureVector> = texts.iter().map(|t| features(t, model)).collect();
    let terms: Vec<Term<'_>> = xs
        .iter()
        .zip(&labels)
        .map(|(x, &y)| Term::hard(x, y, 1.0))
        .collect();
    let loss = model.loss(&terms)?;
    let grad = model.grad_full(&terms)?;
    adam.update(model, &grad, cfg.outer_lr)?;
    Ok(Some(OuterStep { loss, grad, texts }))
}

/// Copy of `model` fine-tuned on a support set drawn from memory: one SGD
/// step on the head per batch of `batch_size`, up to
/// `episode_batches · batch_size` examples, plain cross-entropy.
pub fn adapt_for_eval(
    model: &ModelState,
    memory: &MemoryBuffer,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelState> {
    let support = memory.sample_support(cfg.episode_batches * cfg.batch_size, rng)?;
    let mut adapted = model.clone();
    for e in &support {
        adapted.expand_head(e.require_label()?);
    }
    for chunk in support.chunks(cfg.batch_size.max(1)) {
        let xs: Vec<FeatureVector> = chunk.iter().map(|e| features(&e.text, &adapted)).collect();
        let terms = xs
            .iter()
            .zip(chunk)
            .map(|(x, e)| Ok(Term::hard(x, e.require_label()?, 1.0)))
            .collect::<Result<Vec<_>>>()?;
        let grad = adapted.grad_head(&terms)?;
        adapted.head.apply_sgd(&grad, cfg.inner_lr)?;
    }
    Ok(adapted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub kind: BatchKind,
    /// Pre-step loss of every inner step, in order.
    pub inner_losses: Vec<f64>,
    pub annotations: usize,
    pub memory_size: usize,
    pub meta_loss: Option<f64>,
}

/// Runtime checks used by tests and the acceptance suite.
#[derive(Debug, Clone, Default)]
pub struct Instrumentation {
    inner_ids: HashSet<String>,
    /// Ids that entered more than one inner step.
    pub repeated_inner: Vec<String>,
    pub inner_steps: usize,
    /// Inner steps after which the encoder differed from before.
    pub encoder_changes_in_inner: usize,
    /// Largest per-class memory occupancy seen at an episode boundary.
    pub max_class_occupancy: usize,
    pub outer_steps: usize,
    pub last_outer: Option<OuterStep>,
}

impl Instrumentation {
    fn record_inner(&mut self, batch: &[Example]) {
        self.inner_steps += 1;
        for e in batch {
            if !self.inner_ids.insert(e.id.clone()) {
                self.repeated_inner.push(e.id.clone());
            }
        }
    }

    pub fn distinct_inner_examples(&self) -> usize {
        self.inner_ids.len()
    }
}

/// Owns every piece of mutable training state.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelState,
    pub adam: Adam,
    pub memory: MemoryBuffer,
    pub oracle: Oracle,
    pub lexicon: SynonymLexicon,
    pub instrumentation: Option<Instrumentation>,
    aug_rng: ChaCha8Rng,
    acq_rng: ChaCha8Rng,
    mem_rng: ChaCha8Rng,
    episodes: usize,
}

/// Independent generator for one purpose of a seeded run.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        model: ModelState,
        mut oracle: Oracle,
        lexicon: SynonymLexicon,
    ) -> Result<Self> {
        config.validate()?;
        oracle.set_budget((!config.flags.full_supervision).then_some(config.budget));
        let adam = Adam::new(&model);
        let memory = MemoryBuffer::new(config.memory_per_class, config.memory_strategy);
        let seed = config.seed;
        Ok(Trainer {
            config,
            model,
            adam,
            memory,
            oracle,
            lexicon,
            instrumentation: None,
            aug_rng: derived_rng(seed, 1),
            acq_rng: derived_rng(seed, 2),
            mem_rng: derived_rng(seed, 3),
            episodes: 0,
        })
    }

    pub fn with_instrumentation(mut self) -> Self {
        self.instrumentation = Some(Instrumentation::default());
        self
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    fn inner<F>(&mut self, batch: &[Example], step: F) -> Result<f64>
    where
        F: FnOnce(&mut Self) -> Result<f64>,
    {
        let before = self.instrumentation.as_ref().map(|_| self.model.encoder.clone());
        let loss = step(self)?;
        if let (Some(inst), Some(before)) = (self.instrumentation.as_mut(), before) {
            inst.record_inner(batch);
            if before != self.model.encoder {
                inst.encoder_changes_in_inner += 1;
            }
        }
        Ok(loss)
    }

    /// Runs one episode; `None` once the stream is exhausted.
    pub fn run_episode(&mut self, cursor: &mut StreamCursor<'_>) -> Result<Option<EpisodeReport>> {
        let episode = cursor.next_episode();
        if episode.is_empty() {
            return Ok(None);
        }
        self.episodes += 1;
        let kind = episode.batches[0].kind;
        let n_a = if kind == BatchKind::Pool {
            selection_size(self.config.batch_size, self.config.budget, episode.pool_size)?
        } else {
            0
        };
        let mut inner_losses = Vec::new();
        let mut annotations = 0;
        let mut labeled_now: Vec<Example> = Vec::new();

        for batch in &episode.batches {
            match batch.kind {
                BatchKind::Labeled => {
                    let loss = self.inner(&batch.examples, |t| {
                        inner_step_labeled(&mut t.model, &batch.examples, &t.config, &mut t.aug_rng)
                    })?;
                    inner_losses.push(loss);
                    labeled_now.extend(batch.examples.iter().cloned());
                }
                BatchKind::Pool if self.config.flags.full_supervision => {
                    let revealed = batch
                        .examples
                        .iter()
                        .map(|e| {
                            let mut e = e.clone();
                            e.label = Some(self.oracle.label(&e.id)?);
                            e.provenance = Provenance::Annotated;
                            Ok(e)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    annotations += revealed.len();
                    let loss = self.inner(&revealed, |t| {
                        inner_step_labeled(&mut t.model, &revealed, &t.config, &mut t.aug_rng)
                    })?;
                    inner_losses.push(loss);
                    labeled_now.extend(revealed);
                }
                BatchKind::Pool => {
                    let new = annotate_batch(
                        &self.model,
                        &batch.examples,
                        n_a,
                        self.config.strategy,
                        &mut self.oracle,
                        &mut self.acq_rng,
                    )?;
                    annotations += new.len();
                    if new.is_empty() {
                        continue;
                    }
                    let loss = self.inner(&new, |t| {
                        inner_step_annotated(&mut t.model, &new, &t.lexicon, &t.config, &mut t.aug_rng)
                    })?;
                    inner_losses.push(loss);
                    labeled_now.extend(new);
                }
            }
        }

        if self.config.flags.use_memory {
            for e in labeled_now {
                let rep = self.model.encode(&features(&e.text, &self.model))?;
                self.memory.observe(e, rep, &mut self.mem_rng)?;
            }
        }

        let outer = outer_step(
            &mut self.model,
            &self.memory,
            &mut self.adam,
            &self.lexicon,
            &self.config,
            &mut self.aug_rng,
        )?;
        let meta_loss = outer.as_ref().map(|o| o.loss);
        if let Some(inst) = self.instrumentation.as_mut() {
            inst.max_class_occupancy = inst.max_class_occupancy.max(self.memory.max_class_len());
            if outer.is_some() {
                inst.outer_steps += 1;
            }
            inst.last_outer = outer;
        }

        Ok(Some(EpisodeReport {
            episode: self.episodes,
            kind,
            inner_losses,
            annotations,
            memory_size: self.memory.len(),
            meta_loss,
        }))
    }
}
