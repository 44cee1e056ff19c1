//! Per-class bounded replay memory.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::squared_distance;
use crate::data::{ClassId, Example};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryStrategy {
    Reservoir,
    Ring,
    Prototype,
}

impl MemoryStrategy {
    pub fn name(self) -> &'static str {
        match self {
            MemoryStrategy::Reservoir => "reservoir",
            MemoryStrategy::Ring => "ring",
            MemoryStrategy::Prototype => "prototype",
        }
    }
}

impl fmt::Display for MemoryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemoryStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reservoir" => Ok(MemoryStrategy::Reservoir),
            "ring" => Ok(MemoryStrategy::Ring),
            "prototype" => Ok(MemoryStrategy::Prototype),
            _ => Err(Error::Config(format!("unknown memory strategy `{s}`"))),
        }
    }
}

/// A stored example with the representation it had when inserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub example: Example,
    pub representation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Prototype {
    sum: Vec<f64>,
    count: usize,
}

impl Prototype {
    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }
}

/// Replay memory holding at most `per_class` examples for every class.
///
/// Slots are keyed by global class id, so tasks whose label sets overlap
/// share the same per-class slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    per_class: usize,
    strategy: MemoryStrategy,
    slots: BTreeMap<ClassId, Vec<Slot>>,
    seen: BTreeMap<ClassId, usize>,
    prototypes: BTreeMap<ClassId, Prototype>,
}

impl MemoryBuffer {
    pub fn new(per_class: usize, strategy: MemoryStrategy) -> Self {
        assert!(per_class >= 1, "memory needs at least one slot per class");
        MemoryBuffer {
            per_class,
            strategy,
            slots: BTreeMap::new(),
            seen: BTreeMap::new(),
            prototypes: BTreeMap::new(),
        }
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn strategy(&self) -> MemoryStrategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.slots.keys().copied()
    }

    pub fn class_len(&self, class: ClassId) -> usize {
        self.slots.get(&class).map_or(0, Vec::len)
    }

    /// Largest per-class occupancy.
    pub fn max_class_len(&self) -> usize {
        self.slots.values().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of labeled examples of `class` offered so far.
    pub fn seen(&self, class: ClassId) -> usize {
        self.seen.get(&class).copied().unwrap_or(0)
    }

    /// Running mean of every representation observed for `class`.
    pub fn prototype(&self, class: ClassId) -> Option<Vec<f64>> {
        self.prototypes.get(&class).map(Prototype::mean)
    }

    /// Offers a labeled example to the memory.
    pub fn observe<R: Rng + ?Sized>(
        &mut self,
        example: Example,
        representation: Vec<f64>,
        rng: &mut R,
    ) -> Result<()> {
        let class = example.require_label()?;
        let seen = {
            let s = self.seen.entry(class).or_insert(0);
            *s += 1;
            *s
        };
        let cap = self.per_class;
        let slots = self.slots.entry(class).or_default();
        let slot = Slot {
            example,
            representation,
        };
        match self.strategy {
            MemoryStrategy::Reservoir => {
                if slots.len() < cap {
                    slots.push(slot);
                } else {
                    let j = rng.gen_range(0..seen);
                    if j < cap {
                        slots[j] = slot;
                    }
                }
            }
            MemoryStrategy::Ring => {
                if slots.len() == cap {
                    slots.remove(0);
                }
                slots.push(slot);
            }
            MemoryStrategy::Prototype => {
                let proto = self.prototypes.entry(class).or_insert_with(|| Prototype {
                    sum: vec![0.0; slot.representation.len()],
                    count: 0,
                });
                if proto.sum.len() != slot.representation.len() {
                    return Err(Error::Shape("representation length changed".into()));
                }
                proto
                    .sum
                    .iter_mut()
                    .zip(&slot.representation)
                    .for_each(|(s, r)| *s += r);
                proto.count += 1;
                if slots.len() < cap {
                    slots.push(slot);
                } else {
                    let center = proto.mean();
                    let (far, far_d) = slots
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (i, squared_distance(&s.representation, &center)))
                        .fold((0, f64::NEG_INFINITY), |best, cur| {
                            if cur.1 > best.1 {
                                cur
                            } else {
                                best
                            }
                        });
                    if squared_distance(&slot.representation, &center) < far_d {
                        slots[far] = slot;
                    }
                }
            }
        }
        Ok(())
    }

    /// All stored slots, ordered by class id then slot index.
    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.values().flatten()
    }

    /// All stored examples, ordered by class id then slot index.
    pub fn read_all(&self) -> Vec<Example> {
        self.slots().map(|s| s.example.clone()).collect()
    }

    /// Uniform sample without replacement of up to `count` examples, in
    /// random order.
    pub fn sample_support<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Example>> {
        if self.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let all = self.read_all();
        let take = count.min(all.len());
        Ok(all.choose_multiple(rng, take).cloned().collect())
    }
}
