//! Pool-based acquisition strategies.
//!
//! Every strategy picks `n_a` distinct candidates. Uncertainty strategies
//! rank by a score computed from the model's class probabilities (higher
//! score means more uncertain) and break ties by the lower candidate index.
//! Representative and diversity strategies work in the encoder's
//! representation space, either around k-means centroids (one pick per
//! cluster, `k = n_a`) or around the mean of all candidates.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "rand")]
    Random,
    #[serde(rename = "unc-lc")]
    LeastConfidence,
    #[serde(rename = "unc-margin")]
    Margin,
    #[serde(rename = "unc-entropy")]
    Entropy,
    #[serde(rename = "rep-kmeans")]
    RepresentativeKMeans,
    #[serde(rename = "div-kmeans")]
    DiversityKMeans,
    #[serde(rename = "rep-mean")]
    RepresentativeMean,
    #[serde(rename = "div-mean")]
    DiversityMean,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Random,
        Strategy::LeastConfidence,
        Strategy::Margin,
        Strategy::Entropy,
        Strategy::RepresentativeKMeans,
        Strategy::DiversityKMeans,
        Strategy::RepresentativeMean,
        Strategy::DiversityMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "rand",
            Strategy::LeastConfidence => "unc-lc",
            Strategy::Margin => "unc-margin",
            Strategy::Entropy => "unc-entropy",
            Strategy::RepresentativeKMeans => "rep-kmeans",
            Strategy::DiversityKMeans => "div-kmeans",
            Strategy::RepresentativeMean => "rep-mean",
            Strategy::DiversityMean => "div-mean",
        }
    }

    /// Whether the strategy reads class probabilities.
    pub fn needs_probabilities(self) -> bool {
        matches!(
            self,
            Strategy::LeastConfidence | Strategy::Margin | Strategy::Entropy
        )
    }

    /// Whether the strategy reads representations.
    pub fn needs_representations(self) -> bool {
        matches!(
            self,
            Strategy::RepresentativeKMeans
                | Strategy::DiversityKMeans
                | Strategy::RepresentativeMean
                | Strategy::DiversityMean
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown acquisition strategy `{s}`")))
    }
}

/// `−max_c p_c`.
pub fn score_least_confidence(probs: &[f64]) -> Result<f64> {
    probs
        .iter()
        .copied()
        .reduce(f64::max)
        .map(|p| -p)
        .ok_or(Error::Empty("probability vector"))
}

/// `−(p₍₁₎ − p₍₂₎)` over the two largest probabilities.
pub fn score_margin(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            got: probs.len(),
        });
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    Ok(-(first - second))
}

/// Natural-log entropy with `0 · ln 0 = 0`.
pub fn score_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn mean_vector(points: &[&[f64]]) -> Vec<f64> {
    let dim = points.first().map_or(0, |p| p.len());
    let mut mean = vec![0.0; dim];
    for p in points {
        mean.iter_mut().zip(p.iter()).for_each(|(m, x)| *m += x);
    }
    let n = points.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment pass.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

pub const KMEANS_MAX_ITERS: usize = 50;
pub const KMEANS_TOLERANCE: f64 = 1e-8;

fn inertia(points: &[&[f64]], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops after [`KMEANS_MAX_ITERS`] passes or once no centroid moves more
/// than [`KMEANS_TOLERANCE`]. A cluster that ends up empty is re-seeded with
/// the point farthest from its own centroid (taken from a cluster with more
/// than one member), so every returned cluster is nonempty.
pub fn kmeans<R: Rng + ?Sized>(points: &[&[f64]], k: usize, rng: &mut R) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::OutOfRange("k = 0".into()));
    }
    if k > points.len() {
        return Err(Error::TooMany {
            requested: k,
            available: points.len(),
        });
    }
    let n = points.len();

    // k-means++ seeding
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest
            .iter()
            .zip(&chosen)
            .filter(|(_, c)| !**c)
            .map(|(d, _)| d)
            .sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                target -= nearest[i];
                if target <= 0.0 && nearest[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && nearest[i] > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].to_vec();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }

    let mut assignments = vec![0; n];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignments[i] = best;
        }
        reseed_empty(points, &mut centroids, &mut assignments);
        history.push(inertia(points, &centroids, &assignments));

        let mut moved: f64 = 0.0;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64]> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| *p)
                .collect();
            let updated = mean_vector(&members);
            moved = moved.max(squared_distance(centroid, &updated).sqrt());
            *centroid = updated;
        }
        if moved < KMEANS_TOLERANCE {
            break;
        }
    }
    history.push(inertia(points, &centroids, &assignments));
    Ok(KMeans {
        assignments,
        centroids,
        inertia_history: history,
    })
}

fn reseed_empty(points: &[&[f64]], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .map(|i| (i, squared_distance(points[i], &centroids[assignments[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = donor else {
            return;
        };
        assignments[i] = empty;
        centroids[empty] = points[i].to_vec();
    }
}

/// One pool member offered to a strategy.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: String,
    /// Class probabilities from the current model.
    pub probs: Vec<f64>,
    /// Encoder representation.
    pub representation: Vec<f64>,
}

/// Indices of the top `n` entries of `scores`, highest first, lower index
/// first on ties.
fn top_by<F: Fn(usize) -> f64>(len: usize, n: usize, score: F) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let scores: Vec<f64> = (0..len).map(score).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Indices chosen by a strategy, with the clustering the k-means strategies
/// picked from.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub clustering: Option<KMeans>,
}

/// Chooses `n_a` candidates and returns their indices.
pub fn select_indices<R: Rng + ?Sized>(
    candidates: &[Candidate],
    n_a: usize,
    strategy: Strategy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    select_detailed(candidates, n_a, strategy, rng).map(|s| s.indices)
}

/// Like [`select_indices`], also returning the k-means clustering used by
/// `rep-kmeans` and `div-kmeans`.
pub fn select_detailed<R: Rng + ?Sized>(
    candidates: &[Candidate],
    n_a: usize,
    strategy: Strategy,
    rng: &mut R,
) -> Result<Selection> {
    let len = candidates.len();
    if n_a > len {
        return Err(Error::TooMany {
            requested: n_a,
            available: len,
        });
    }
    if n_a == 0 {
        return Ok(Selection {
            indices: Vec::new(),
            clustering: None,
        });
    }
    let mut clustering = None;
    let reps = || -> Vec<&[f64]> {
        candidates
            .iter()
            .map(|c| c.representation.as_slice())
            .collect()
    };
    let picked = match strategy {
        Strategy::Random => index::sample(rng, len, n_a).into_vec(),
        Strategy::LeastConfidence | Strategy::Margin | Strategy::Entropy => {
            let scores = candidates
                .iter()
                .map(|c| match strategy {
                    Strategy::LeastConfidence => score_least_confidence(&c.probs),
                    Strategy::Margin => score_margin(&c.probs),
                    _ => Ok(score_entropy(&c.probs)),
                })
                .collect::<Result<Vec<f64>>>()?;
            top_by(len, n_a, |i| scores[i])
        }
        Strategy::RepresentativeMean | Strategy::DiversityMean => {
            let points = reps();
            let center = mean_vector(&points);
            let dist: Vec<f64> = points
                .iter()
                .map(|p| squared_distance(p, &center))
                .collect();
            if strategy == Strategy::RepresentativeMean {
                top_by(len, n_a, |i| -dist[i])
            } else {
                top_by(len, n_a, |i| dist[i])
            }
        }
        Strategy::RepresentativeKMeans | Strategy::DiversityKMeans => {
            let points = reps();
            let km = kmeans(&points, n_a, rng)?;
            let nearest = strategy == Strategy::RepresentativeKMeans;
            let picked = (0..n_a)
                .map(|c| {
                    let members = (0..len).filter(|&i| km.assignments[i] == c);
                    let mut best: Option<(usize, f64)> = None;
                    for i in members {
                        let d = squared_distance(points[i], &km.centroids[c]);
                        let better = match best {
                            None => true,
                            Some((_, bd)) => {
                                if nearest {
                                    d < bd
                                } else {
                                    d > bd
                                }
                            }
                        };
                        if better {
                            best = Some((i, d));
                        }
                    }
                    best.map(|(i, _)| i).expect("clusters are nonempty")
                })
                .collect();
            clustering = Some(km);
            picked
        }
    };
    Ok(Selection {
        indices: picked,
        clustering,
    })
}

/// Chooses `n_a` candidates and returns their ids.
pub fn select<R: Rng + ?Sized>(
    candidates: &[Candidate],
    n_a: usize,
    strategy: Strategy,
    rng: &mut R,
) -> Result<Vec<String>> {
    Ok(select_indices(candidates, n_a, strategy, rng)?
        .into_iter()
        .map(|i| candidates[i].id.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cand(id: &str, probs: &[f64], rep: &[f64]) -> Candidate {
        Candidate {
            id: id.into(),
            probs: probs.to_vec(),
            representation: rep.to_vec(),
        }
    }

    #[test]
    fn score_examples() {
        assert!((score_least_confidence(&[0.7, 0.2, 0.1]).unwrap() + 0.7).abs() < 1e-15);
        assert_eq!(score_least_confidence(&[0.0, 1.0]).unwrap(), -1.0);
        assert_eq!(score_least_confidence(&[0.25; 4]).unwrap(), -0.25);
        assert!(score_least_confidence(&[]).is_err());

        assert!((score_margin(&[0.5, 0.3, 0.2]).unwrap() + 0.2).abs() < 1e-15);
        assert_eq!(score_margin(&[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(score_margin(&[1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(score_margin(&[1.0]), Err(Error::TooFewClasses { .. })));

        assert!((score_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(score_entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert!((score_entropy(&[0.5, 0.5, 0.0, 0.0]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kmeans_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![10.0, 10.0], vec![10.1, 10.0]];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();

        let one = kmeans(&refs, 1, &mut rng).unwrap();
        assert!((one.centroids[0][0] - 5.05).abs() < 1e-12);
        assert!((one.centroids[0][1] - 5.0).abs() < 1e-12);

        let two = kmeans(&refs, 2, &mut rng).unwrap();
        assert_eq!(two.assignments[0], two.assignments[1]);
        assert_eq!(two.assignments[2], two.assignments[3]);
        assert_ne!(two.assignments[0], two.assignments[2]);

        let all = kmeans(&refs, 4, &mut rng).unwrap();
        assert_eq!(all.inertia(), 0.0);

        assert!(matches!(kmeans(&refs, 5, &mut rng), Err(Error::TooMany { .. })));
    }

    #[test]
    fn kmeans_duplicates_keep_clusters_nonempty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = vec![vec![1.0]; 5];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let km = kmeans(&refs, 3, &mut rng).unwrap();
        for c in 0..3 {
            assert!(km.assignments.contains(&c));
        }
    }

    #[test]
    fn select_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = vec![
            cand("a", &[0.9, 0.1], &[0.0]),
            cand("b", &[0.6, 0.4], &[1.0]),
            cand("c", &[0.5, 0.5], &[10.0]),
        ];
        for s in Strategy::ALL {
            let mut got = select(&pool, 3, s, &mut rng).unwrap();
            got.sort();
            assert_eq!(got, ["a", "b", "c"], "{s}");
        }
        assert_eq!(select(&pool[..2], 1, Strategy::LeastConfidence, &mut rng).unwrap(), ["b"]);
        assert_eq!(select(&pool, 1, Strategy::RepresentativeMean, &mut rng).unwrap(), ["b"]);
        assert_eq!(select(&pool, 1, Strategy::DiversityMean, &mut rng).unwrap(), ["c"]);
        assert!(matches!(
            select(&pool, 4, Strategy::Random, &mut rng),
            Err(Error::TooMany { .. })
        ));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = vec![
            cand("x", &[0.5, 0.5], &[0.0]),
            cand("y", &[0.5, 0.5], &[0.0]),
            cand("z", &[0.5, 0.5], &[0.0]),
        ];
        assert_eq!(select(&pool, 2, Strategy::Entropy, &mut rng).unwrap(), ["x", "y"]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }
}
