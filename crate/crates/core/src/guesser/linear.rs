//! Multinomial logistic regression over hashed unigram and bigram counts.
//!
//! Features hash into `num_buckets` slots. Only buckets that occur in the
//! training data can ever receive a non-zero weight, so the weight matrix is
//! stored over that observed subset; unseen buckets contribute nothing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_classes, softmax_guesses, tokenize, Example, Guess, Guesser};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{axpy, cross_entropy, softmax, Matrix};

pub const KIND: &str = "guesser-linear";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub num_buckets: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            num_buckets: 1 << 20,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

fn bucket(kind: u8, a: &str, b: Option<&str>, num_buckets: u32) -> u32 {
    let mut h = FnvHasher::default();
    h.write_u8(kind);
    h.write(a.as_bytes());
    if let Some(b) = b {
        h.write_u8(0x1f);
        h.write(b.as_bytes());
    }
    (h.finish() % num_buckets as u64) as u32
}

/// L2-normalised hashed unigram+bigram counts, sorted by bucket.
pub fn hashed_features(tokens: &[String], num_buckets: u32) -> Vec<(u32, f64)> {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for t in tokens {
        *counts.entry(bucket(b'u', t, None, num_buckets)).or_default() += 1.0;
    }
    for w in tokens.windows(2) {
        *counts
            .entry(bucket(b'b', &w[0], Some(&w[1]), num_buckets))
            .or_default() += 1.0;
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    counts
        .into_iter()
        .map(|(k, v)| (k, v / norm))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    config: LinearConfig,
    answers: Vec<String>,
    answer_index: HashMap<String, usize>,
    buckets: Vec<u32>,
    bucket_cols: HashMap<u32, usize>,
    /// Feature-major: row `c` holds the per-answer weights of feature column `c`.
    weights: Matrix,
    bias: Vec<f64>,
}

type SparseX = Vec<(usize, f64)>;

impl LinearModel {
    /// Zero-initialised model whose feature space covers `examples`.
    pub fn init(examples: &[Example], config: LinearConfig) -> Result<Self> {
        check_classes(examples)?;
        if config.num_buckets == 0 {
            return Err(Error::Config("num_buckets must be positive".into()));
        }
        let answers: Vec<String> = examples
            .iter()
            .map(|e| e.answer.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let buckets: Vec<u32> = examples
            .iter()
            .flat_map(|e| hashed_features(&tokenize(&e.text), config.num_buckets))
            .map(|(b, _)| b)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self::assemble(config, answers, buckets, None, None))
    }

    fn assemble(
        config: LinearConfig,
        answers: Vec<String>,
        buckets: Vec<u32>,
        weights: Option<Matrix>,
        bias: Option<Vec<f64>>,
    ) -> Self {
        let n_answers = answers.len();
        LinearModel {
            answer_index: answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect(),
            bucket_cols: buckets.iter().enumerate().map(|(i, &b)| (b, i)).collect(),
            weights: weights.unwrap_or_else(|| Matrix::zeros(buckets.len(), n_answers)),
            bias: bias.unwrap_or_else(|| vec![0.0; n_answers]),
            config,
            answers,
            buckets,
        }
    }

    /// Mini-batch gradient descent on mean cross-entropy; examples are
    /// reshuffled each epoch from a generator seeded with `config.seed`.
    pub fn train(examples: &[Example], config: LinearConfig) -> Result<Self> {
        let mut model = Self::init(examples, config)?;
        let data: Vec<(SparseX, usize)> = examples
            .iter()
            .map(|e| (model.features(&tokenize(&e.text)), model.answer_index[&e.answer]))
            .collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        let batch_size = model.config.batch_size.max(1);
        for epoch in 0..model.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(batch_size) {
                let step = model.config.learning_rate / batch.len() as f64;
                let residuals: Vec<Vec<f64>> = batch
                    .iter()
                    .map(|&i| {
                        let (x, gold) = &data[i];
                        let logits = model.logits_sparse(x);
                        total += cross_entropy(&logits, *gold);
                        let mut r = softmax(&logits);
                        r[*gold] -= 1.0;
                        r
                    })
                    .collect();
                for (&i, r) in batch.iter().zip(&residuals) {
                    for &(col, v) in &data[i].0 {
                        axpy(-step * v, r, model.weights.row_mut(col));
                    }
                    axpy(-step, r, &mut model.bias);
                }
            }
            tracing::debug!(epoch, loss = total / data.len().max(1) as f64, "linear epoch");
        }
        if !model.weights.is_finite() {
            return Err(Error::DegenerateTraining("weights diverged; lower the learning rate".into()));
        }
        Ok(model)
    }

    fn features(&self, tokens: &[String]) -> SparseX {
        hashed_features(tokens, self.config.num_buckets)
            .into_iter()
            .filter_map(|(b, v)| self.bucket_cols.get(&b).map(|&c| (c, v)))
            .collect()
    }

    fn logits_sparse(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let mut logits = self.bias.clone();
        for &(col, v) in x {
            axpy(v, self.weights.row(col), &mut logits);
        }
        logits
    }

    pub fn logits(&self, tokens: &[String]) -> Vec<f64> {
        self.logits_sparse(&self.features(tokens))
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn num_params(&self) -> usize {
        self.weights.data.len() + self.bias.len()
    }

    /// Weights then bias, flattened.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.data.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter length");
        let n = self.weights.data.len();
        self.weights.data.copy_from_slice(&params[..n]);
        self.bias.copy_from_slice(&params[n..]);
    }

    /// Mean cross-entropy over `batch` and its gradient in [`Self::params`] order.
    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        let n_w = self.weights.data.len();
        let cols = self.weights.cols;
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for ex in batch {
            let gold = *self
                .answer_index
                .get(&ex.answer)
                .ok_or_else(|| Error::InvalidInput(format!("unknown answer {:?}", ex.answer)))?;
            let x = self.features(&tokenize(&ex.text));
            let logits = self.logits_sparse(&x);
            loss += cross_entropy(&logits, gold) * scale;
            let mut r = softmax(&logits);
            r[gold] -= 1.0;
            for &(col, v) in &x {
                axpy(v * scale, &r, &mut grad[col * cols..(col + 1) * cols]);
            }
            axpy(scale, &r, &mut grad[n_w..]);
        }
        Ok((loss, grad))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            KIND,
            serde_json::json!({"answers": self.answers.len(), "features": self.buckets.len(), "num_buckets": self.config.num_buckets}),
            self.config.seed,
            &self.config,
            serde_json::json!({"answers": self.answers, "buckets": self.buckets}),
        );
        c.push("weights", &[self.weights.rows, self.weights.cols], self.weights.data.clone());
        c.push("bias", &[self.bias.len()], self.bias.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND)?;
        let config: LinearConfig = serde_json::from_value(c.header.config.clone())?;
        let answers: Vec<String> = c.meta("answers")?;
        let buckets: Vec<u32> = c.meta("buckets")?;
        let w = c.block("weights")?.to_vec();
        let b = c.block("bias")?.to_vec();
        if w.len() != buckets.len() * answers.len() || b.len() != answers.len() {
            return Err(Error::Format("linear weight blocks do not match header".into()));
        }
        let weights = Matrix::from_vec(buckets.len(), answers.len(), w);
        Ok(Self::assemble(config, answers, buckets, Some(weights), Some(b)))
    }
}

impl Guesser for LinearModel {
    fn guess_tokens(&self, tokens: &[String], k: usize) -> Vec<Guess> {
        softmax_guesses(&self.logits(tokens), &self.answers, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<Example> {
        vec![
            Example::new("red apple fruit", "Apple"),
            Example::new("crisp red apple", "Apple"),
            Example::new("yellow banana fruit", "Banana"),
            Example::new("ripe yellow banana", "Banana"),
        ]
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let cfg = LinearConfig {
            epochs: 50,
            batch_size: 2,
            ..Default::default()
        };
        let m = LinearModel::train(&toy(), cfg).unwrap();
        for ex in toy() {
            assert_eq!(m.guess(&ex.text, 1)[0].answer, ex.answer);
        }
    }

    #[test]
    fn zero_epochs_gives_uniform_probabilities() {
        let cfg = LinearConfig {
            epochs: 0,
            ..Default::default()
        };
        let m = LinearModel::train(&toy(), cfg).unwrap();
        for g in m.guess("red banana", 2) {
            assert!((g.probability - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cfg = LinearConfig {
            epochs: 5,
            seed: 11,
            ..Default::default()
        };
        let a = LinearModel::train(&toy(), cfg.clone()).unwrap();
        let b = LinearModel::train(&toy(), cfg).unwrap();
        let bits = |m: &LinearModel| m.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn single_class_is_rejected() {
        let ex = vec![Example::new("a", "X"), Example::new("b", "X")];
        assert!(matches!(
            LinearModel::train(&ex, LinearConfig::default()),
            Err(Error::DegenerateTraining(_))
        ));
    }

    #[test]
    fn hashed_features_are_unit_norm() {
        let f = hashed_features(&tokenize("a b a"), 1 << 20);
        let norm: f64 = f.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        // "a" twice, "b" once, bigrams "a b" and "b a".
        assert_eq!(f.len(), 4);
        assert!(hashed_features(&[], 16).is_empty());
    }

    #[test]
    fn container_round_trip() {
        let cfg = LinearConfig {
            epochs: 3,
            ..Default::default()
        };
        let m = LinearModel::train(&toy(), cfg).unwrap();
        let back = LinearModel::from_container(&Container::from_bytes(&m.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
