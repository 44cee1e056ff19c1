//! Meta-continual active learning for few-shot text classification.
//!
//! A stream of tasks arrives one at a time. Each task brings a handful of
//! labeled examples and an unlabeled pool from which a bounded number of
//! examples may be sent to an annotation oracle. A first-order meta-learner
//! adapts a classifier head on every incoming batch and then updates the whole
//! model so that it still fits a small replay memory of earlier examples.
//!
//! ```
//! use metacal::harness::{run_stream, RunConfig};
//! use metacal::synthetic::SyntheticSpec;
//! use metacal::data::TaskStream;
//!
//! let spec = SyntheticSpec { tasks: 2, pool_size: 32, test_size: 16, ..Default::default() };
//! let synth = spec.generate()?;
//! let (stream, oracle) = TaskStream::from_labeled_tasks(synth.tasks)?;
//! let config = RunConfig { input_dim: 256, hidden_dims: vec![16, 8], budget: 8, ..Default::default() };
//! let out = run_stream(&config, &stream, oracle, synth.lexicon, false, |_, _| Ok(()))?;
//! assert_eq!(out.result.annotations, vec![8, 8]);
//! # Ok::<(), metacal::Error>(())
//! ```

pub mod acquisition;
pub mod augment;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/stream.md")]
    mod stream {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/acquisition.md")]
    mod acquisition {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
