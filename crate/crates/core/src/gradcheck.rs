//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::ClassId;
use crate::error::Result;
use crate::model::{ModelState, Target, Term};
use crate::text::FeatureVector;

pub const EPSILON: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// Inputs are redrawn until every pre-activation is at least this far from
/// the rectifier kink, where central differences are meaningless.
pub const KINK_MARGIN: f64 = 1e-3;

/// Denominator floor so that gradients that are zero up to rounding do not
/// blow up the ratio.
const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest relative error between `analytic` and central differences of the
/// loss, for parameters `offset..` in [`ModelState::params_mut`] order.
fn compare(model: &ModelState, terms: &[Term<'_>], analytic: &[f64], offset: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let original = *probe.params_mut().nth(offset + i).expect("index in range");
        *probe.params_mut().nth(offset + i).expect("index in range") = original + EPSILON;
        let plus = probe.loss(terms)?;
        *probe.params_mut().nth(offset + i).expect("index in range") = original - EPSILON;
        let minus = probe.loss(terms)?;
        *probe.params_mut().nth(offset + i).expect("index in range") = original;
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * EPSILON)));
    }
    Ok(worst)
}

/// Worst relative error of [`ModelState::grad_head`] and
/// [`ModelState::grad_full`] against finite differences.
pub fn check(model: &ModelState, terms: &[Term<'_>]) -> Result<(f64, f64)> {
    let full: Vec<f64> = model.grad_full(terms)?.iter().copied().collect();
    let head: Vec<f64> = model.grad_head(terms)?.iter().copied().collect();
    let encoder_params = full.len() - head.len();
    let head_err = compare(model, terms, &head, encoder_params)?;
    let full_err = compare(model, terms, &full, 0)?;
    Ok((head_err, full_err))
}

#[derive(Debug, Clone, Serialize)]
pub struct Draw {
    pub seed: u64,
    pub classes: usize,
    pub head_error: f64,
    pub full_error: f64,
}

impl Draw {
    pub fn passed(&self) -> bool {
        self.head_error < TOLERANCE && self.full_error < TOLERANCE
    }
}

fn random_features(dim: usize, rng: &mut ChaCha8Rng) -> FeatureVector {
    let values = (0..dim)
        .map(|_| if rng.gen_bool(0.5) { rng.gen_range(-1.0..1.0) } else { 0.0 })
        .collect();
    FeatureVector::from_dense(values)
}

/// Smallest `|pre-activation|` over all encoder units for input `x`.
pub fn kink_distance(model: &ModelState, x: &FeatureVector) -> f64 {
    let mut h = x.values().to_vec();
    let mut closest = f64::INFINITY;
    for layer in &model.encoder.layers {
        let z: Vec<f64> = (0..layer.out_dim)
            .map(|j| layer.bias[j] + layer.row(j).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        closest = z.iter().fold(closest, |c, v| c.min(v.abs()));
        h = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    closest
}

/// One random draw: model `dims`, 2 to 6 classes with random head rows and
/// a batch mixing weighted hard terms and soft-target terms.
pub fn random_draw(dims: &[usize], seed: u64) -> Result<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelState::new(dims, seed);
    let classes = rng.gen_range(2..=6usize);
    for c in 0..classes {
        model.expand_head(ClassId(c as u32));
    }
    for p in model.head.params_mut() {
        *p = rng.gen_range(-1.0..1.0);
    }
    let batch = rng.gen_range(1..=4usize);
    let inputs: Vec<FeatureVector> = (0..2 * batch)
        .map(|_| loop {
            let x = random_features(dims[0], &mut rng);
            if kink_distance(&model, &x) >= KINK_MARGIN {
                break x;
            }
        })
        .collect();
    let w = rng.gen_range(0.0..1.0);
    let mut terms = Vec::new();
    for i in 0..batch {
        let y = ClassId(rng.gen_range(0..classes) as u32);
        terms.push(Term::hard(&inputs[2 * i], y, w));
        let soft = model.predict(&inputs[2 * i])?;
        terms.push(Term {
            features: &inputs[2 * i + 1],
            target: Target::Soft(soft),
            weight: 1.0 - w,
        });
    }
    let (head_error, full_error) = check(&model, &terms)?;
    Ok(Draw {
        seed,
        classes,
        head_error,
        full_error,
    })
}

/// `draws` random draws with seeds `seed, seed + 1, ...`.
pub fn run_suite(dims: &[usize], draws: usize, seed: u64) -> Result<Vec<Draw>> {
    (0..draws as u64).map(|i| random_draw(dims, seed + i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let draws = run_suite(&[32, 16, 8], 3, 11).unwrap();
        for d in &draws {
            assert!(d.passed(), "{d:?}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-12);
    }
}
