//! Finite-difference oracle: a forward pass written independently of the
//! library and central differences over it.

use metacal::data::ClassId;
use metacal::model::{FullGrad, ModelState, Target, Term};
use metacal::text::FeatureVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Forward pass from raw parameters: ReLU after every dense layer, linear
/// head, log-sum-exp.
pub fn oracle_loss(model: &ModelState, batch: &[(Vec<f64>, Vec<f64>, f64)]) -> f64 {
    let mut total = 0.0;
    for (x, q, w) in batch {
        let mut h = x.clone();
        for layer in &model.encoder.layers {
            h = (0..layer.out_dim)
                .map(|j| {
                    let z: f64 = layer.bias[j]
                        + (0..layer.in_dim).map(|k| layer.weights[j * layer.in_dim + k] * h[k]).sum::<f64>();
                    z.max(0.0)
                })
                .collect();
        }
        let z: Vec<f64> = (0..model.head.len())
            .map(|i| {
                let (row, b) = model.head.row(i);
                b + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += w * q.iter().zip(&z).map(|(q, z)| -q * (z - lse)).sum::<f64>();
    }
    total
}

pub fn min_abs_preactivation(model: &ModelState, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let mut closest = f64::INFINITY;
    for layer in &model.encoder.layers {
        let z: Vec<f64> = (0..layer.out_dim)
            .map(|j| layer.bias[j] + (0..layer.in_dim).map(|k| layer.weights[j * layer.in_dim + k] * h[k]).sum::<f64>())
            .collect();
        closest = z.iter().fold(closest, |c, v| c.min(v.abs()));
        h = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    closest
}

/// Mutable access to one parameter in gradient order: encoder layers
/// (weights, bias), then head rows, then head biases.
pub fn with_param(model: &mut ModelState, mut idx: usize, f: impl FnOnce(&mut f64)) {
    for layer in model.encoder.layers.iter_mut() {
        if idx < layer.weights.len() {
            return f(&mut layer.weights[idx]);
        }
        idx -= layer.weights.len();
        if idx < layer.bias.len() {
            return f(&mut layer.bias[idx]);
        }
        idx -= layer.bias.len();
    }
    let dim = model.head.dim;
    let rows = model.head.len();
    if idx < rows * dim {
        return f(&mut model.head.row_mut(idx / dim).0[idx % dim]);
    }
    idx -= rows * dim;
    f(model.head.row_mut(idx).1)
}

pub fn numeric(model: &ModelState, batch: &[(Vec<f64>, Vec<f64>, f64)], idx: usize) -> f64 {
    let mut m = model.clone();
    with_param(&mut m, idx, |p| *p += EPS);
    let plus = oracle_loss(&m, batch);
    with_param(&mut m, idx, |p| *p -= 2.0 * EPS);
    let minus = oracle_loss(&m, batch);
    (plus - minus) / (2.0 * EPS)
}

pub struct Draw {
    pub model: ModelState,
    pub features: Vec<FeatureVector>,
    pub targets: Vec<Target>,
    pub weights: Vec<f64>,
}

impl Draw {
    pub fn terms(&self) -> Vec<Term<'_>> {
        self.features
            .iter()
            .zip(&self.targets)
            .zip(&self.weights)
            .map(|((f, t), &w)| Term {
                features: f,
                target: t.clone(),
                weight: w,
            })
            .collect()
    }

    pub fn oracle_batch(&self) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
        let classes = self.model.head.classes();
        self.features
            .iter()
            .zip(&self.targets)
            .zip(&self.weights)
            .map(|((f, t), &w)| {
                let q = match t {
                    Target::Hard(c) => classes.iter().map(|k| if k == c { 1.0 } else { 0.0 }).collect(),
                    Target::Soft(q) => q.clone(),
                };
                (f.values().to_vec(), q, w)
            })
            .collect()
    }
}

/// A 32→16→8 model with 2 to 6 classes and a batch of paired terms
/// `w·CE(f(x), y) + (1−w)·CE(f(x'), q)` where `q` is the model's own
/// prediction on a third input, frozen.
pub fn draw(seed: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ModelState::new(&[32, 16, 8], seed);
    let n_classes = rng.gen_range(2..=6u32);
    for c in 0..n_classes {
        model.expand_head(ClassId(c * 3));
    }
    for i in 0..model.head.len() {
        let (row, b) = model.head.row_mut(i);
        row.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        *b = rng.gen_range(-0.5..0.5);
    }
    // central differences are only valid away from the rectifier kink
    let input = |rng: &mut ChaCha8Rng| loop {
        let values: Vec<f64> = (0..32)
            .map(|_| if rng.gen_bool(0.6) { rng.gen_range(-1.0..1.0) } else { 0.0 })
            .collect();
        if min_abs_preactivation(&model, &values) > 1e-3 {
            break FeatureVector::from_dense(values);
        }
    };
    let w = rng.gen_range(0.0..1.0);
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let y = ClassId(rng.gen_range(0..n_classes) * 3);
        features.push(input(&mut rng));
        targets.push(Target::Hard(y));
        weights.push(w);
        let weak = input(&mut rng);
        targets.push(Target::Soft(model.predict(&weak).unwrap()));
        features.push(input(&mut rng));
        weights.push(1.0 - w);
    }
    Draw {
        model,
        features,
        targets,
        weights,
    }
}

pub fn flatten(g: &FullGrad) -> Vec<f64> {
    g.iter().copied().collect()
}

/// Worst relative error of `grad_full` and `grad_head` over every parameter.
pub fn worst_errors(d: &Draw) -> (f64, f64) {
    let batch = d.oracle_batch();
    let full = flatten(&d.model.grad_full(&d.terms()).unwrap());
    let offset: usize = d.model.encoder.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    let head: Vec<f64> = d.model.grad_head(&d.terms()).unwrap().iter().copied().collect();
    let mut worst_full = 0.0f64;
    let mut worst_head = 0.0f64;
    for (i, a) in full.iter().enumerate() {
        let n = numeric(&d.model, &batch, i);
        worst_full = worst_full.max(rel_err(*a, n));
        if i >= offset {
            worst_head = worst_head.max(rel_err(head[i - offset], n));
        }
    }
    (worst_head, worst_full)
}
