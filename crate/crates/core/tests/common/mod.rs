//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use metacal::acquisition::{Candidate, Strategy};
use metacal::data::TaskStream;
use metacal::harness::{run_stream, RunConfig, RunOutcome};
use metacal::synthetic::SyntheticSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// FNV-1a, 64 bit, written out from the published constants.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

/// Brute-force top-`n`: candidate `i` is chosen iff fewer than `n` others
/// beat it, where `j` beats `i` if its key is larger or equal with a lower
/// index. Returned in rank order.
pub fn brute_top(keys: &[f64], n: usize) -> Vec<usize> {
    let mut ranked: Vec<(usize, usize)> = (0..keys.len())
        .map(|i| {
            let rank = (0..keys.len())
                .filter(|&j| keys[j] > keys[i] || (keys[j] == keys[i] && j < i))
                .count();
            (rank, i)
        })
        .filter(|&(rank, _)| rank < n)
        .collect();
    ranked.sort();
    ranked.into_iter().map(|(_, i)| i).collect()
}

fn max_prob(p: &[f64]) -> f64 {
    let mut m = p[0];
    for &v in &p[1..] {
        if v > m {
            m = v;
        }
    }
    m
}

/// Selection keys (higher is picked first) computed without the library.
pub fn oracle_keys(cands: &[Candidate], strategy: Strategy) -> Vec<f64> {
    match strategy {
        Strategy::LeastConfidence => cands.iter().map(|c| -max_prob(&c.probs)).collect(),
        Strategy::Margin => cands
            .iter()
            .map(|c| {
                let mut p = c.probs.clone();
                p.sort_by(|a, b| b.total_cmp(a));
                -(p[0] - p[1])
            })
            .collect(),
        Strategy::Entropy => cands
            .iter()
            .map(|c| {
                let mut h = 0.0;
                for &p in &c.probs {
                    if p > 0.0 {
                        h += p * p.ln();
                    }
                }
                -h
            })
            .collect(),
        Strategy::RepresentativeMean | Strategy::DiversityMean => {
            let dim = cands[0].representation.len();
            let mut mean = vec![0.0; dim];
            for c in cands {
                for (m, x) in mean.iter_mut().zip(&c.representation) {
                    *m += x;
                }
            }
            for m in mean.iter_mut() {
                *m /= cands.len() as f64;
            }
            cands
                .iter()
                .map(|c| {
                    let mut d = 0.0;
                    for (x, m) in c.representation.iter().zip(&mean) {
                        d += (x - m) * (x - m);
                    }
                    if strategy == Strategy::RepresentativeMean {
                        -d
                    } else {
                        d
                    }
                })
                .collect()
        }
        _ => panic!("no closed-form oracle for {strategy}"),
    }
}

/// Random candidates: normalized probability vectors (with occasional exact
/// ties) and small-integer-grid representations so distance ties occur.
pub fn random_candidates(rng: &mut ChaCha8Rng, n: usize, classes: usize, dim: usize) -> Vec<Candidate> {
    (0..n)
        .map(|i| {
            let raw: Vec<f64> = if rng.gen_bool(0.1) {
                vec![1.0; classes]
            } else {
                (0..classes).map(|_| rng.gen_range(1..8) as f64).collect()
            };
            let total: f64 = raw.iter().sum();
            Candidate {
                id: format!("c{i}"),
                probs: raw.iter().map(|r| r / total).collect(),
                representation: (0..dim).map(|_| rng.gen_range(-3..=3) as f64 * 0.5).collect(),
            }
        })
        .collect()
}

/// Configuration used for the synthetic directional experiments.
pub fn synthetic_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        budget: 100,
        memory_per_class: 5,
        input_dim: 2048,
        hidden_dims: vec![1024],
        inner_lr: 0.3,
        outer_lr: 1e-2,
        ..RunConfig::default()
    }
}

pub fn synthetic_run(spec: &SyntheticSpec, config: &RunConfig, instrument: bool) -> RunOutcome {
    let synth = spec.generate().expect("synthetic stream");
    let (stream, oracle) = TaskStream::from_labeled_tasks(synth.tasks).expect("stream");
    let stream = stream.with_few_shot(config.k_shot, config.seed).expect("few-shot");
    run_stream(config, &stream, oracle, synth.lexicon, instrument, |_, _| Ok(())).expect("run")
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A hand-worked accuracy matrix with its expected metrics.
pub struct HandMatrix {
    pub rows: Vec<Vec<f64>>,
    pub test_sizes: Vec<usize>,
    pub acc: Vec<f64>,
    pub bwt: Vec<Option<f64>>,
    pub fwt: Vec<Option<f64>>,
    pub overall: f64,
}

/// Matrices whose metrics were worked out by hand.
pub fn hand_matrices() -> Vec<HandMatrix> {
    let third = 1.0 / 3.0;
    vec![
        HandMatrix {
            rows: vec![vec![0.5; 2], vec![0.8, 0.4], vec![0.6, 0.9]],
            test_sizes: vec![10, 10],
            acc: vec![0.8, 0.75],
            bwt: vec![None, Some(-0.2)],
            fwt: vec![None, Some(0.4)],
            overall: 0.75,
        },
        HandMatrix {
            rows: vec![
                vec![0.25; 3],
                vec![1.0, 0.5, 0.0],
                vec![0.5, 1.0, 0.25],
                vec![0.5, 0.75, 1.0],
            ],
            test_sizes: vec![1, 2, 1],
            acc: vec![1.0, 0.75, 0.75],
            bwt: vec![None, Some(-0.5), Some(-0.375)],
            fwt: vec![None, Some(0.75), Some(0.75)],
            overall: 0.75,
        },
        HandMatrix {
            rows: vec![vec![0.5], vec![0.9]],
            test_sizes: vec![5],
            acc: vec![0.9],
            bwt: vec![None],
            fwt: vec![None],
            overall: 0.9,
        },
        HandMatrix {
            rows: vec![
                vec![third; 3],
                vec![0.9, 0.1, 0.2],
                vec![0.9, 0.8, 0.3],
                vec![0.9, 0.8, 0.7],
            ],
            test_sizes: vec![3, 3, 3],
            acc: vec![0.9, 0.85, 0.8],
            bwt: vec![None, Some(0.0), Some(0.0)],
            fwt: vec![None, Some(0.8 - third), Some(0.75 - third)],
            overall: 0.8,
        },
        HandMatrix {
            rows: vec![
                vec![0.5; 4],
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
            test_sizes: vec![2, 1, 1, 4],
            acc: vec![1.0, 0.5, third, 0.25],
            bwt: vec![None, Some(-1.0), Some(-1.0), Some(-1.0)],
            fwt: vec![None, Some(0.5), Some(0.5), Some(0.5)],
            overall: 0.5,
        },
        HandMatrix {
            rows: vec![vec![0.25; 2], vec![0.8, 0.3], vec![0.7, 0.6]],
            test_sizes: vec![4, 4],
            acc: vec![0.8, 0.65],
            bwt: vec![None, Some(-0.1)],
            fwt: vec![None, Some(0.35)],
            overall: 0.65,
        },
        HandMatrix {
            rows: vec![vec![0.25, 0.6], vec![0.8, 0.1], vec![0.8, 0.6]],
            test_sizes: vec![2, 2],
            acc: vec![0.8, 0.7],
            bwt: vec![None, Some(0.0)],
            fwt: vec![None, Some(0.0)],
            overall: 0.7,
        },
        HandMatrix {
            rows: vec![vec![0.25; 2], vec![0.5, 0.5], vec![0.4, 0.2]],
            test_sizes: vec![1, 1],
            acc: vec![0.5, 0.3],
            bwt: vec![None, Some(-0.1)],
            fwt: vec![None, Some(-0.05)],
            overall: 0.3,
        },
    ]
}

/// Largest absolute deviation between a computed summary and the hand values.
pub fn hand_deviation(m: &HandMatrix, got: &metacal::metrics::MetricSummary) -> f64 {
    let mut worst = (got.overall - m.overall).abs();
    assert_eq!(got.acc.len(), m.acc.len());
    for (a, b) in got.acc.iter().zip(&m.acc) {
        worst = worst.max((a - b).abs());
    }
    for (got, want) in [(&got.bwt, &m.bwt), (&got.fwt, &m.fwt)] {
        for (a, b) in got.iter().zip(want) {
            match (a, b) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}
