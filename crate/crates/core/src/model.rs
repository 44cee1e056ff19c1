//! Compact text classifier `f(x) = head(encoder(x))`.
//!
//! The encoder is a stack of affine layers, each followed by a rectifier.
//! The head is a single linear layer with one row per global class seen so
//! far, followed by a softmax. Gradients are computed analytically for the
//! summed, per-term weighted cross-entropy; all arithmetic is `f64`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::text::FeatureVector;

pub const DEFAULT_INPUT_DIM: usize = 2048;
pub const DEFAULT_HIDDEN_DIMS: [usize; 2] = [128, 64];

/// Affine layer with row-major `out_dim × in_dim` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in `±1/√in_dim`, zero bias.
    pub fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Dense {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    fn forward_dense(&self, input: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|j| {
                self.bias[j]
                    + self
                        .row(j)
                        .iter()
                        .zip(input)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect()
    }

    fn forward_sparse(&self, input: &FeatureVector) -> Vec<f64> {
        let x = input.values();
        (0..self.out_dim)
            .map(|j| {
                let row = self.row(j);
                self.bias[j] + input.support().iter().map(|&k| row[k] * x[k]).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<Dense>,
}

impl Encoder {
    /// `dims = [D_in, h_1, ..., h_L]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "encoder needs an input and an output dimension");
        let layers = dims
            .windows(2)
            .map(|w| Dense::uniform(w[0], w[1], rng))
            .collect();
        Encoder { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    fn check_shapes(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer outputs {} feed a layer expecting {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(())
    }

    /// Post-rectifier activations of every layer; the last one is the
    /// representation.
    fn trace(&self, input: &FeatureVector) -> Result<Vec<Vec<f64>>> {
        if input.dim() != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature dimension {} but encoder expects {}",
                input.dim(),
                self.input_dim()
            )));
        }
        self.check_shapes()?;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = if l == 0 {
                layer.forward_sparse(input)
            } else {
                layer.forward_dense(&acts[l - 1])
            };
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn encode(&self, input: &FeatureVector) -> Result<Vec<f64>> {
        Ok(self.trace(input)?.pop().unwrap_or_default())
    }
}

/// Linear softmax layer keyed by global class id. Rows are kept sorted by
/// class id, which fixes the order of probability vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub dim: usize,
    classes: Vec<ClassId>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Head {
    pub fn new(dim: usize) -> Self {
        Head {
            dim,
            classes: Vec::new(),
            weights: Vec::new(),
            bias: Vec::new(),
        }
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, class: ClassId) -> Option<usize> {
        self.classes.binary_search(&class).ok()
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.weights[i], self.bias[i])
    }

    pub fn row_mut(&mut self, i: usize) -> (&mut [f64], &mut f64) {
        (&mut self.weights[i], &mut self.bias[i])
    }

    /// Adds a zero row for `class` unless present. Returns whether a row was
    /// added.
    pub fn expand(&mut self, class: ClassId) -> bool {
        match self.classes.binary_search(&class) {
            Ok(_) => false,
            Err(pos) => {
                self.classes.insert(pos, class);
                self.weights.insert(pos, vec![0.0; self.dim]);
                self.bias.insert(pos, 0.0);
                true
            }
        }
    }

    pub fn logits(&self, rep: &[f64]) -> Result<Vec<f64>> {
        if rep.len() != self.dim {
            return Err(Error::Shape(format!(
                "representation of length {} but head expects {}",
                rep.len(),
                self.dim
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(rep).map(|(a, x)| a * x).sum::<f64>())
            .collect())
    }

    /// Weights row by row, then biases; the order of [`HeadGrad::iter`].
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().flatten().chain(self.bias.iter_mut())
    }

    pub fn apply_sgd(&mut self, grad: &HeadGrad, lr: f64) -> Result<()> {
        if grad.classes != self.classes {
            return Err(Error::Shape("head gradient classes differ from head".into()));
        }
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
        }
        self.bias
            .iter_mut()
            .zip(&grad.bias)
            .for_each(|(b, g)| *b -= lr * g);
        Ok(())
    }
}

/// Log-sum-exp stabilized softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Supervision for one loss term.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Hard(ClassId),
    /// Distribution over the head's classes, in head order.
    Soft(Vec<f64>),
}

impl Target {
    fn dense(&self, classes: &[ClassId]) -> Result<Vec<f64>> {
        match self {
            Target::Hard(c) => {
                let i = classes
                    .binary_search(c)
                    .map_err(|_| Error::UnknownClass(c.0))?;
                let mut q = vec![0.0; classes.len()];
                q[i] = 1.0;
                Ok(q)
            }
            Target::Soft(q) if q.len() == classes.len() => Ok(q.clone()),
            Target::Soft(q) => Err(Error::Shape(format!(
                "soft target over {} classes, head has {}",
                q.len(),
                classes.len()
            ))),
        }
    }
}

/// Cross-entropy of a probability vector (ordered like `classes`) against a
/// target: `-ln p_y` for hard targets, `-Σ q_c ln p_c` for soft ones.
pub fn cross_entropy(probs: &[f64], classes: &[ClassId], target: &Target) -> Result<f64> {
    if probs.len() != classes.len() {
        return Err(Error::Shape("probabilities and classes differ in length".into()));
    }
    let q = target.dense(classes)?;
    Ok(-q
        .iter()
        .zip(probs)
        .filter(|(q, _)| **q != 0.0)
        .map(|(q, p)| q * p.ln())
        .sum::<f64>())
}

/// One weighted cross-entropy term of a loss.
#[derive(Debug, Clone)]
pub struct Term<'a> {
    pub features: &'a FeatureVector,
    pub target: Target,
    pub weight: f64,
}

impl<'a> Term<'a> {
    pub fn hard(features: &'a FeatureVector, class: ClassId, weight: f64) -> Self {
        Term {
            features,
            target: Target::Hard(class),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub classes: Vec<ClassId>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros_like(head: &Head) -> Self {
        HeadGrad {
            classes: head.classes.clone(),
            weights: vec![vec![0.0; head.dim]; head.len()],
            bias: vec![0.0; head.len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(&self.bias)
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullGrad {
    pub encoder: Vec<DenseGrad>,
    pub head: HeadGrad,
}

impl FullGrad {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.encoder
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .chain(self.head.iter())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|&g| g == 0.0)
    }
}

/// Encoder, head and the seed the encoder was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub encoder: Encoder,
    pub head: Head,
    pub seed: u64,
}

impl ModelState {
    /// `dims = [D_in, h_1, ..., h_L]`; encoder weights are drawn from a
    /// ChaCha8 generator seeded with `seed`, the head starts empty.
    pub fn new(dims: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(dims, &mut rng);
        let head = Head::new(encoder.output_dim());
        ModelState {
            encoder,
            head,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Every parameter in the order of [`FullGrad::iter`].
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.encoder
            .layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
            .chain(self.head.params_mut())
    }

    pub fn expand_head(&mut self, class: ClassId) -> bool {
        self.head.expand(class)
    }

    pub fn encode(&self, input: &FeatureVector) -> Result<Vec<f64>> {
        self.encoder.encode(input)
    }

    /// Class probabilities, ordered like `self.head.classes()`.
    pub fn predict(&self, input: &FeatureVector) -> Result<Vec<f64>> {
        if self.head.is_empty() {
            return Err(Error::EmptyHead);
        }
        let rep = self.encode(input)?;
        Ok(softmax(&self.head.logits(&rep)?))
    }

    /// Arg-max class, lowest class id on ties.
    pub fn classify(&self, input: &FeatureVector) -> Result<ClassId> {
        let probs = self.predict(input)?;
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        Ok(self.head.classes[best])
    }

    /// `Σ weight · CE` over the terms.
    pub fn loss(&self, terms: &[Term<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for term in terms {
            let rep = self.encode(term.features)?;
            let logp = log_softmax(&self.head.logits(&rep)?);
            let q = term.target.dense(&self.head.classes)?;
            total -= term.weight
                * q.iter()
                    .zip(&logp)
                    .filter(|(q, _)| **q != 0.0)
                    .map(|(q, l)| q * l)
                    .sum::<f64>();
        }
        Ok(total)
    }

    fn check_batch(&self, terms: &[Term<'_>]) -> Result<()> {
        if terms.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        if self.head.is_empty() {
            return Err(Error::EmptyHead);
        }
        Ok(())
    }

    /// Gradient of [`ModelState::loss`] with respect to the head only.
    pub fn grad_head(&self, terms: &[Term<'_>]) -> Result<HeadGrad> {
        self.check_batch(terms)?;
        let mut grad = HeadGrad::zeros_like(&self.head);
        for term in terms {
            let rep = self.encode(term.features)?;
            let delta = self.logit_delta(&rep, term)?;
            accumulate_head(&mut grad, &delta, &rep);
        }
        Ok(grad)
    }

    /// Gradient of [`ModelState::loss`] with respect to encoder and head.
    pub fn grad_full(&self, terms: &[Term<'_>]) -> Result<FullGrad> {
        self.check_batch(terms)?;
        let mut head = HeadGrad::zeros_like(&self.head);
        let mut encoder: Vec<DenseGrad> = self
            .encoder
            .layers
            .iter()
            .map(|l| DenseGrad {
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.out_dim],
            })
            .collect();
        for term in terms {
            let acts = self.encoder.trace(term.features)?;
            let rep = acts.last().expect("encoder has at least one layer");
            let delta = self.logit_delta(rep, term)?;
            accumulate_head(&mut head, &delta, rep);

            // d loss / d representation
            let mut upstream = vec![0.0; self.head.dim];
            for (d, w) in delta.iter().zip(&self.head.weights) {
                upstream.iter_mut().zip(w).for_each(|(u, w)| *u += d * w);
            }
            for (l, layer) in self.encoder.layers.iter().enumerate().rev() {
                let local: Vec<f64> = upstream
                    .iter()
                    .zip(&acts[l])
                    .map(|(u, a)| if *a > 0.0 { *u } else { 0.0 })
                    .collect();
                let g = &mut encoder[l];
                for (j, d) in local.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    g.bias[j] += d;
                    let grow = &mut g.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
                    if l == 0 {
                        let x = term.features.values();
                        for &k in term.features.support() {
                            grow[k] += d * x[k];
                        }
                    } else {
                        grow.iter_mut()
                            .zip(&acts[l - 1])
                            .for_each(|(g, a)| *g += d * a);
                    }
                }
                if l > 0 {
                    let mut next = vec![0.0; layer.in_dim];
                    for (j, d) in local.iter().enumerate() {
                        if *d != 0.0 {
                            next.iter_mut()
                                .zip(layer.row(j))
                                .for_each(|(n, w)| *n += d * w);
                        }
                    }
                    upstream = next;
                }
            }
        }
        Ok(FullGrad { encoder, head })
    }

    /// `weight · (p − q)`, the loss gradient with respect to the logits.
    fn logit_delta(&self, rep: &[f64], term: &Term<'_>) -> Result<Vec<f64>> {
        let probs = softmax(&self.head.logits(rep)?);
        let q = term.target.dense(&self.head.classes)?;
        Ok(probs
            .iter()
            .zip(&q)
            .map(|(p, q)| term.weight * (p - q))
            .collect())
    }

    /// Writes a JSON checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: self.encoder.dims(),
            model: self.clone(),
        };
        let json = serde_json::to_string(&ckpt)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&raw)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        if ckpt.dims != ckpt.model.encoder.dims() {
            return Err(Error::Shape("checkpoint dims disagree with its layers".into()));
        }
        ckpt.model.encoder.check_shapes()?;
        Ok(ckpt.model)
    }
}

fn accumulate_head(grad: &mut HeadGrad, delta: &[f64], rep: &[f64]) {
    for ((gw, gb), d) in grad.weights.iter_mut().zip(&mut grad.bias).zip(delta) {
        *gb += d;
        gw.iter_mut().zip(rep).for_each(|(g, r)| *g += d * r);
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    dims: Vec<usize>,
    model: ModelState,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::featurize;

    fn small_model(seed: u64, classes: u32) -> ModelState {
        let mut m = ModelState::new(&[32, 16, 8], seed);
        for c in 0..classes {
            m.expand_head(ClassId(c));
        }
        m
    }

    #[test]
    fn encode_zero_input_zero_bias() {
        let m = small_model(1, 0);
        let rep = m.encode(&FeatureVector::zeros(32)).unwrap();
        assert_eq!(rep, vec![0.0; 8]);
    }

    #[test]
    fn encode_identity_layer() {
        let mut layer = Dense::zeros(4, 4);
        for i in 0..4 {
            layer.weights[i * 4 + i] = 1.0;
        }
        let enc = Encoder {
            layers: vec![layer],
        };
        let v = FeatureVector::from_dense(vec![0.5, 0.0, 0.25, 1.0]);
        assert_eq!(enc.encode(&v).unwrap(), v.values());
    }

    #[test]
    fn encode_shape_errors() {
        let m = ModelState::new(&[DEFAULT_INPUT_DIM, 128, 64], 3);
        let v = featurize(&["hello", "world"], DEFAULT_INPUT_DIM);
        let rep = m.encode(&v).unwrap();
        assert_eq!(rep.len(), 64);
        assert!(rep.iter().all(|r| r.is_finite()));
        assert!(matches!(m.encode(&FeatureVector::zeros(10)), Err(Error::Shape(_))));
    }

    #[test]
    fn predict_examples() {
        let m = small_model(2, 0);
        let v = featurize(&["a"], 32);
        assert!(matches!(m.predict(&v), Err(Error::EmptyHead)));

        let m1 = small_model(2, 1);
        assert_eq!(m1.predict(&v).unwrap(), vec![1.0]);

        let m4 = small_model(2, 4);
        assert_eq!(m4.predict(&v).unwrap(), vec![0.25; 4]);
        assert_eq!(m4.classify(&v).unwrap(), ClassId(0));
    }

    #[test]
    fn cross_entropy_examples() {
        let cls = [ClassId(0), ClassId(1), ClassId(2), ClassId(3)];
        let one = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(cross_entropy(&one, &cls, &Target::Hard(ClassId(0))).unwrap(), 0.0);
        let uni = [0.25; 4];
        let l = cross_entropy(&uni, &cls, &Target::Hard(ClassId(2))).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let p = [0.1, 0.2, 0.3, 0.4];
        let h: f64 = -p.iter().map(|p: &f64| p * p.ln()).sum::<f64>();
        let l = cross_entropy(&p, &cls, &Target::Soft(p.to_vec())).unwrap();
        assert!((l - h).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&p, &cls, &Target::Hard(ClassId(9))),
            Err(Error::UnknownClass(9))
        ));
    }

    #[test]
    fn stationary_head_gradient() {
        let m = small_model(4, 1);
        let v = featurize(&["x", "y"], 32);
        let g = m.grad_head(&[Term::hard(&v, ClassId(0), 1.0)]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn batch_linearity() {
        let mut m = small_model(5, 3);
        m.head.row_mut(1).0[2] = 0.7;
        let v = featurize(&["p", "q", "r"], 32);
        let single = m.grad_head(&[Term::hard(&v, ClassId(2), 1.0)]).unwrap();
        let terms: Vec<_> = (0..5).map(|_| Term::hard(&v, ClassId(2), 1.0)).collect();
        let batch = m.grad_head(&terms).unwrap();
        for (a, b) in batch.iter().zip(single.iter()) {
            assert!((a - 5.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_zero_first_layer_grad() {
        let mut m = small_model(6, 2);
        *m.head.row_mut(0).1 = 0.3;
        for b in m.encoder.layers[0].bias.iter_mut() {
            *b = 0.1;
        }
        let z = FeatureVector::zeros(32);
        let g = m.grad_full(&[Term::hard(&z, ClassId(1), 1.0)]).unwrap();
        assert!(g.encoder[0].weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn dead_unit_has_no_incoming_gradient() {
        let mut m = small_model(7, 3);
        m.head.row_mut(0).0.iter_mut().for_each(|w| *w = 0.5);
        // unit 3 of the first layer can never fire
        let layer = &mut m.encoder.layers[0];
        for k in 0..layer.in_dim {
            layer.weights[3 * layer.in_dim + k] = -1.0;
        }
        let xs: Vec<_> = ["a b", "c d e", "f"]
            .iter()
            .map(|t| featurize(&crate::text::tokenize(t), 32))
            .collect();
        let terms: Vec<_> = xs.iter().map(|x| Term::hard(x, ClassId(1), 1.0)).collect();
        let g = m.grad_full(&terms).unwrap();
        let row = &g.encoder[0].weights[3 * 32..4 * 32];
        assert!(row.iter().all(|&w| w == 0.0));
        assert_eq!(g.encoder[0].bias[3], 0.0);
    }

    #[test]
    fn expand_head_is_idempotent_and_neutral() {
        let mut m = small_model(8, 4);
        m.head.row_mut(2).0[0] = 1.0;
        let before = m.head.clone();
        assert!(!m.expand_head(ClassId(2)));
        assert_eq!(m.head, before);
        let v = featurize(&["z"], 32);
        let rep = m.encode(&v).unwrap();
        let old = m.head.logits(&rep).unwrap();
        assert!(m.expand_head(ClassId(10)));
        assert_eq!(m.head.len(), 5);
        assert_eq!(&m.head.logits(&rep).unwrap()[..4], &old[..]);

        let mut fresh = Head::new(8);
        fresh.expand(ClassId(3));
        assert_eq!(fresh.classes(), &[ClassId(3)]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = small_model(9, 3);
        m.head.row_mut(1).0[4] = 0.123_456_789_012_345_67;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        m.save(&path).unwrap();
        let back = ModelState::load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn clone_is_independent() {
        let m = small_model(10, 2);
        let snapshot = m.clone();
        let mut copy = m.clone();
        let v = featurize(&["k"], 32);
        let g = copy.grad_head(&[Term::hard(&v, ClassId(1), 1.0)]).unwrap();
        copy.head.apply_sgd(&g, 0.5).unwrap();
        assert_ne!(copy.head, m.head);
        assert_eq!(m, snapshot);
    }
}
