//! Deep averaging network: mean of word embeddings, a stack of GELU layers,
//! and a dot product against one embedding per answer.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_classes, softmax_guesses, tokenize, Example, Guess, Guesser, Vocabulary};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{axpy, cross_entropy, gelu, gelu_grad, softmax, Adam, AdamParams, Matrix};

pub const KIND: &str = "guesser-dan";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DanConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Stop after this many epochs without a dev-loss improvement.
    pub patience: usize,
    /// Halve the learning rate after this many epochs without improvement.
    pub anneal_patience: usize,
    /// Share of the training examples held out for early stopping when no
    /// explicit dev set is given.
    pub dev_fraction: f64,
    pub min_count: u32,
    pub seed: u64,
}

impl Default for DanConfig {
    fn default() -> Self {
        DanConfig {
            embedding_dim: 300,
            hidden_dim: 300,
            depth: 2,
            dropout: 0.15,
            batch_size: 128,
            max_epochs: 30,
            learning_rate: 1e-3,
            patience: 3,
            anneal_patience: 1,
            dev_fraction: 0.1,
            min_count: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DanTrainReport {
    pub epochs: usize,
    /// Examples dropped because they contain no known token.
    pub skipped_empty: usize,
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    weight: Matrix,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanModel {
    config: DanConfig,
    vocab: Vocabulary,
    embeddings: Matrix,
    layers: Vec<Layer>,
    answer_embeddings: Matrix,
}

/// Activations kept for the backward pass.
struct Trace {
    ids: Vec<usize>,
    /// `h_0 .. h_z` after dropout.
    hidden: Vec<Vec<f64>>,
    /// Pre-activations of layers `1 ..= z`.
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout scale per unit of `h_0 .. h_z`, when dropout is on.
    masks: Vec<Option<Vec<f64>>>,
    logits: Vec<f64>,
}

struct Grads {
    embeddings: Matrix,
    touched: BTreeSet<usize>,
    layers: Vec<Layer>,
    answers: Matrix,
}

impl Grads {
    fn zeros_like(m: &DanModel) -> Self {
        Grads {
            embeddings: Matrix::zeros(m.embeddings.rows, m.embeddings.cols),
            touched: BTreeSet::new(),
            layers: m
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows, l.weight.cols),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            answers: Matrix::zeros(m.answer_embeddings.rows, m.answer_embeddings.cols),
        }
    }

    fn clear(&mut self) {
        for &r in &self.touched {
            self.embeddings.row_mut(r).fill(0.0);
        }
        self.touched.clear();
        for l in &mut self.layers {
            l.weight.data.fill(0.0);
            l.bias.fill(0.0);
        }
        self.answers.data.fill(0.0);
    }
}

fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

impl DanModel {
    /// Randomly initialised model over the vocabulary of `examples`.
    pub fn init(examples: &[Example], config: DanConfig) -> Result<Self> {
        check_classes(examples)?;
        if config.embedding_dim == 0 || (config.depth > 0 && config.hidden_dim == 0) {
            return Err(Error::Config("DAN dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let vocab = Vocabulary::build(examples, config.min_count);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embeddings = Matrix::random_normal(vocab.num_tokens(), config.embedding_dim, 1.0, &mut rng);
        let mut layers = Vec::with_capacity(config.depth);
        let mut width = config.embedding_dim;
        for _ in 0..config.depth {
            layers.push(Layer {
                weight: Matrix::xavier(config.hidden_dim, width, &mut rng),
                bias: vec![0.0; config.hidden_dim],
            });
            width = config.hidden_dim;
        }
        let answer_embeddings = Matrix::xavier(vocab.num_answers(), width, &mut rng);
        Ok(DanModel {
            config,
            vocab,
            embeddings,
            layers,
            answer_embeddings,
        })
    }

    /// Trains on `train`, early-stopping on `dev` (or on a seeded
    /// `dev_fraction` split of `train` when `dev` is `None`). The returned
    /// model holds the parameters of the best dev epoch.
    pub fn train(train: &[Example], dev: Option<&[Example]>, config: DanConfig) -> Result<(Self, DanTrainReport)> {
        let (fit, held): (Vec<Example>, Vec<Example>) = match dev {
            Some(d) => (train.to_vec(), d.to_vec()),
            None => split_dev(train, config.dev_fraction, config.seed),
        };
        let mut model = Self::init(&fit, config)?;
        let mut report = DanTrainReport::default();

        let encode = |m: &DanModel, set: &[Example], report: &mut DanTrainReport| -> Vec<(Vec<usize>, usize)> {
            set.iter()
                .filter_map(|e| {
                    let ids = m.token_ids(&tokenize(&e.text));
                    if ids.is_empty() {
                        report.skipped_empty += 1;
                        return None;
                    }
                    Some((ids, m.vocab.answer_id(&e.answer)?))
                })
                .collect()
        };
        let data = encode(&model, &fit, &mut report);
        let dev_data = encode(&model, &held, &mut DanTrainReport::default());
        if report.skipped_empty > 0 {
            tracing::info!(skipped = report.skipped_empty, "DAN examples without known tokens skipped");
        }
        if data.is_empty() {
            return Err(Error::DegenerateTraining("no training example has a known token".into()));
        }

        let cfg = model.config.clone();
        let adam = AdamParams {
            learning_rate: cfg.learning_rate,
            ..AdamParams::default()
        };
        let mut opt_emb = Adam::new(model.embeddings.data.len(), adam);
        let mut opt_layers: Vec<(Adam, Adam)> = model
            .layers
            .iter()
            .map(|l| (Adam::new(l.weight.data.len(), adam), Adam::new(l.bias.len(), adam)))
            .collect();
        let mut opt_answers = Adam::new(model.answer_embeddings.data.len(), adam);

        // Separate stream from initialisation so changing epochs does not
        // perturb the initial weights.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut grads = Grads::zeros_like(&model);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut best: Option<(f64, DanModel)> = None;
        let mut since_best = 0;
        let mut lr = cfg.learning_rate;

        for epoch in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size.max(1)) {
                grads.clear();
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let (ids, gold) = &data[i];
                    let trace = model.forward(ids, Some((&mut rng, cfg.dropout)));
                    total += cross_entropy(&trace.logits, *gold);
                    model.backward(&trace, *gold, scale, &mut grads);
                }
                let rows: Vec<usize> = grads.touched.iter().copied().collect();
                opt_emb.step_rows(&mut model.embeddings.data, &grads.embeddings.data, &rows, cfg.embedding_dim);
                for (l, (g, (ow, ob))) in model.layers.iter_mut().zip(grads.layers.iter().zip(&mut opt_layers)) {
                    ow.step(&mut l.weight.data, &g.weight.data);
                    ob.step(&mut l.bias, &g.bias);
                }
                opt_answers.step(&mut model.answer_embeddings.data, &grads.answers.data);
            }
            report.epochs = epoch + 1;
            report.train_loss.push(total / data.len() as f64);
            if !model.is_finite() {
                return Err(Error::DegenerateTraining("DAN parameters diverged".into()));
            }

            let dev_loss = if dev_data.is_empty() {
                report.train_loss[epoch]
            } else {
                dev_data
                    .iter()
                    .map(|(ids, gold)| cross_entropy(&model.forward(ids, None::<(&mut ChaCha8Rng, f64)>).logits, *gold))
                    .sum::<f64>()
                    / dev_data.len() as f64
            };
            report.dev_loss.push(dev_loss);
            tracing::debug!(epoch, train = report.train_loss[epoch], dev = dev_loss, lr, "DAN epoch");

            if best.as_ref().map_or(true, |(b, _)| dev_loss < *b) {
                best = Some((dev_loss, model.clone()));
                report.best_epoch = epoch + 1;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience.max(1) {
                    break;
                }
                if cfg.anneal_patience > 0 && since_best % cfg.anneal_patience == 0 {
                    lr *= 0.5;
                    opt_emb.set_learning_rate(lr);
                    for (ow, ob) in &mut opt_layers {
                        ow.set_learning_rate(lr);
                        ob.set_learning_rate(lr);
                    }
                    opt_answers.set_learning_rate(lr);
                }
            }
        }
        Ok((best.map_or(model, |(_, m)| m), report))
    }

    /// Known token ids; unknown tokens are dropped from the average.
    fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.vocab.token_id(t))
            .filter(|&id| id != Vocabulary::UNK)
            .collect()
    }

    fn forward<R: Rng>(&self, ids: &[usize], mut dropout: Option<(&mut R, f64)>) -> Trace {
        let mut mask_for = |v: &mut Vec<f64>| -> Option<Vec<f64>> {
            let (rng, rate) = dropout.as_mut()?;
            if *rate <= 0.0 {
                return None;
            }
            let m = dropout_mask(v.len(), *rate, rng);
            v.iter_mut().zip(&m).for_each(|(x, s)| *x *= s);
            Some(m)
        };
        let mut h0 = vec![0.0; self.config.embedding_dim];
        if !ids.is_empty() {
            let w = 1.0 / ids.len() as f64;
            for &id in ids {
                axpy(w, self.embeddings.row(id), &mut h0);
            }
        }
        let mut masks = vec![mask_for(&mut h0)];
        let mut hidden = vec![h0];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut u = layer.weight.matvec(hidden.last().unwrap());
            axpy(1.0, &layer.bias, &mut u);
            let mut h: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
            masks.push(mask_for(&mut h));
            pre.push(u);
            hidden.push(h);
        }
        let logits = self.answer_embeddings.matvec(hidden.last().unwrap());
        Trace {
            ids: ids.to_vec(),
            hidden,
            pre,
            masks,
            logits,
        }
    }

    /// Accumulates `scale * d loss / d params` for one example into `grads`.
    fn backward(&self, trace: &Trace, gold: usize, scale: f64, grads: &mut Grads) {
        let mut g_logits = softmax(&trace.logits);
        g_logits[gold] -= 1.0;
        g_logits.iter_mut().for_each(|g| *g *= scale);

        let top = trace.hidden.last().unwrap();
        grads.answers.add_outer(1.0, &g_logits, top);
        let mut g_h = self.answer_embeddings.t_matvec(&g_logits);

        for i in (0..self.layers.len()).rev() {
            if let Some(m) = &trace.masks[i + 1] {
                g_h.iter_mut().zip(m).for_each(|(g, s)| *g *= s);
            }
            let g_u: Vec<f64> = g_h
                .iter()
                .zip(&trace.pre[i])
                .map(|(g, &u)| g * gelu_grad(u))
                .collect();
            grads.layers[i].weight.add_outer(1.0, &g_u, &trace.hidden[i]);
            axpy(1.0, &g_u, &mut grads.layers[i].bias);
            g_h = self.layers[i].weight.t_matvec(&g_u);
        }
        if let Some(m) = &trace.masks[0] {
            g_h.iter_mut().zip(m).for_each(|(g, s)| *g *= s);
        }
        if trace.ids.is_empty() {
            return;
        }
        let w = 1.0 / trace.ids.len() as f64;
        for &id in &trace.ids {
            axpy(w, &g_h, grads.embeddings.row_mut(id));
            grads.touched.insert(id);
        }
    }

    pub fn logits(&self, tokens: &[String]) -> Vec<f64> {
        self.forward(&self.token_ids(tokens), None::<(&mut ChaCha8Rng, f64)>)
            .logits
    }

    /// Mean of the first hidden state, `h_0`, for a token sequence.
    pub fn average_embedding(&self, tokens: &[String]) -> Vec<f64> {
        self.forward(&self.token_ids(tokens), None::<(&mut ChaCha8Rng, f64)>)
            .hidden
            .swap_remove(0)
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &DanConfig {
        &self.config
    }

    fn is_finite(&self) -> bool {
        self.embeddings.is_finite()
            && self.answer_embeddings.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embeddings.data];
        for l in &self.layers {
            out.push(&l.weight.data);
            out.push(&l.bias);
        }
        out.push(&self.answer_embeddings.data);
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embeddings.data];
        for l in &mut self.layers {
            out.push(&mut l.weight.data);
            out.push(&mut l.bias);
        }
        out.push(&mut self.answer_embeddings.data);
        out
    }

    pub fn num_params(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    /// Embeddings, then each layer's weight and bias, then answer embeddings.
    pub fn params(&self) -> Vec<f64> {
        self.buffers().concat()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter length");
        let mut offset = 0;
        for buf in self.buffers_mut() {
            let n = buf.len();
            buf.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
    }

    /// Mean cross-entropy over `batch` without dropout, with its gradient in
    /// [`Self::params`] order. Examples without known tokens use `h_0 = 0`.
    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
        let mut grads = Grads::zeros_like(self);
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        for ex in batch {
            let gold = self
                .vocab
                .answer_id(&ex.answer)
                .ok_or_else(|| Error::InvalidInput(format!("unknown answer {:?}", ex.answer)))?;
            let trace = self.forward(&self.token_ids(&tokenize(&ex.text)), None::<(&mut ChaCha8Rng, f64)>);
            loss += scale * cross_entropy(&trace.logits, gold);
            self.backward(&trace, gold, scale, &mut grads);
        }
        let mut flat = grads.embeddings.data;
        for l in grads.layers {
            flat.extend(l.weight.data);
            flat.extend(l.bias);
        }
        flat.extend(grads.answers.data);
        Ok((loss, flat))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            KIND,
            serde_json::json!({
                "vocab": self.vocab.num_tokens(),
                "answers": self.vocab.num_answers(),
                "embedding_dim": self.config.embedding_dim,
                "hidden_dim": self.config.hidden_dim,
                "depth": self.layers.len(),
            }),
            self.config.seed,
            &self.config,
            serde_json::json!({ "vocab": self.vocab }),
        );
        c.push(
            "embeddings",
            &[self.embeddings.rows, self.embeddings.cols],
            self.embeddings.data.clone(),
        );
        for (i, l) in self.layers.iter().enumerate() {
            c.push(&format!("layer{i}.weight"), &[l.weight.rows, l.weight.cols], l.weight.data.clone());
            c.push(&format!("layer{i}.bias"), &[l.bias.len()], l.bias.clone());
        }
        c.push(
            "answer_embeddings",
            &[self.answer_embeddings.rows, self.answer_embeddings.cols],
            self.answer_embeddings.data.clone(),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND)?;
        let config: DanConfig = serde_json::from_value(c.header.config.clone())?;
        let vocab = c.meta::<Vocabulary>("vocab")?.reindexed();
        let shaped = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
            let data = c.block(name)?.to_vec();
            if data.len() != rows * cols {
                return Err(Error::Format(format!("block {name:?} has the wrong size")));
            }
            Ok(Matrix::from_vec(rows, cols, data))
        };
        let embeddings = shaped("embeddings", vocab.num_tokens(), config.embedding_dim)?;
        let mut layers = Vec::with_capacity(config.depth);
        let mut width = config.embedding_dim;
        for i in 0..config.depth {
            layers.push(Layer {
                weight: shaped(&format!("layer{i}.weight"), config.hidden_dim, width)?,
                bias: shaped(&format!("layer{i}.bias"), 1, config.hidden_dim)?.data,
            });
            width = config.hidden_dim;
        }
        let answer_embeddings = shaped("answer_embeddings", vocab.num_answers(), width)?;
        Ok(DanModel {
            config,
            vocab,
            embeddings,
            layers,
            answer_embeddings,
        })
    }
}

/// Seeded split of `examples` into (fit, dev). Keeps everything for fitting
/// when the dev share would be empty.
fn split_dev(examples: &[Example], fraction: f64, seed: u64) -> (Vec<Example>, Vec<Example>) {
    let n_dev = (examples.len() as f64 * fraction.clamp(0.0, 0.5)).floor() as usize;
    if n_dev == 0 {
        return (examples.to_vec(), Vec::new());
    }
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    idx.shuffle(&mut rng);
    let dev: BTreeSet<usize> = idx[..n_dev].iter().copied().collect();
    let (mut fit, mut held) = (Vec::new(), Vec::new());
    for (i, e) in examples.iter().enumerate() {
        if dev.contains(&i) {
            held.push(e.clone());
        } else {
            fit.push(e.clone());
        }
    }
    (fit, held)
}

impl Guesser for DanModel {
    fn guess_tokens(&self, tokens: &[String], k: usize) -> Vec<Guess> {
        softmax_guesses(&self.logits(tokens), self.vocab.answers(), k)
    }
}
