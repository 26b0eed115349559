//! Buzz/wait decisions over guess streams: feature extraction, stable-oracle
//! labels, a confidence-threshold baseline and an MLP classifier.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::eval::{expected_wins, EwVariant, WinProbCurve};
use crate::guesser::GuessStream;
use crate::nn::{axpy, dot, sigmoid, softplus, Adam, AdamParams, Matrix};

pub const NUM_FEATURES: usize = 17;

/// Version tag of the feature layout, stored with serialized MLP buzzers.
pub const FEATURE_LAYOUT: &str = "top3-delta3-gap2-rankup5-stats4/v1";

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "p1", "p2", "p3", "dp1", "dp2", "dp3", "gap12", "gap23", "up1", "up2", "up3", "up4", "up5", "mean", "var",
    "prev_mean", "prev_var",
];

pub const THRESHOLD_KIND: &str = "buzzer-threshold";
pub const MLP_KIND: &str = "buzzer-mlp";

pub type BuzzFeatureVector = [f64; NUM_FEATURES];

/// Buzzer features need the top five guesses at every position.
pub fn check_stream(stream: &GuessStream) -> Result<()> {
    if stream.k < 5 {
        return Err(Error::InvalidInput(format!(
            "question {}: buzzer features need k >= 5, stream has k = {}",
            stream.qanta_id, stream.k
        )));
    }
    Ok(())
}

fn top3(stream: &GuessStream, pos: usize) -> [f64; 3] {
    let mut p = [0.0; 3];
    for (slot, g) in p.iter_mut().zip(&stream.positions[pos - 1]) {
        *slot = g.probability;
    }
    p
}

fn mean_var(p: &[f64; 3]) -> (f64, f64) {
    let mean = p.iter().sum::<f64>() / 3.0;
    let var = p.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
    (mean, var)
}

/// Feature vector at 1-based `position`; reads only positions up to it.
///
/// Layout: top-3 probabilities, their change since the previous position,
/// the two adjacent gaps, five rank-improved indicators for the current
/// top 5, then mean and population variance of the current and previous
/// top 3. At position 1 every temporal field is zero. Missing guesses count
/// as probability 0; a guess absent from the previous list counts as
/// improved.
pub fn extract_features(stream: &GuessStream, position: usize) -> Result<BuzzFeatureVector> {
    check_stream(stream)?;
    if position == 0 || position > stream.len() {
        return Err(Error::InvalidInput(format!(
            "position {position} outside stream of length {}",
            stream.len()
        )));
    }
    let mut f = [0.0; NUM_FEATURES];
    let cur = top3(stream, position);
    f[..3].copy_from_slice(&cur);
    f[6] = cur[0] - cur[1];
    f[7] = cur[1] - cur[2];
    let (m, v) = mean_var(&cur);
    f[13] = m;
    f[14] = v;
    if position > 1 {
        let prev = top3(stream, position - 1);
        for i in 0..3 {
            f[3 + i] = cur[i] - prev[i];
        }
        let prev_rank: HashMap<&str, usize> = stream.positions[position - 2]
            .iter()
            .enumerate()
            .map(|(r, g)| (g.answer.as_str(), r))
            .collect();
        for (r, g) in stream.positions[position - 1].iter().take(5).enumerate() {
            let improved = prev_rank.get(g.answer.as_str()).map_or(true, |&pr| pr > r);
            f[8 + r] = f64::from(u8::from(improved));
        }
        let (pm, pv) = mean_var(&prev);
        f[15] = pm;
        f[16] = pv;
    }
    Ok(f)
}

pub fn stream_features(stream: &GuessStream) -> Result<Vec<BuzzFeatureVector>> {
    (1..=stream.len()).map(|p| extract_features(stream, p)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLabels {
    pub labels: Vec<bool>,
    /// Earliest position from which the top guess stays correct.
    pub stable_position: Option<usize>,
}

/// Walks back from the end while the top guess is correct.
pub fn oracle_labels_from(correct: &[bool]) -> OracleLabels {
    let mut start = correct.len();
    while start > 0 && correct[start - 1] {
        start -= 1;
    }
    let stable_position = (start < correct.len()).then_some(start + 1);
    let labels = (0..correct.len()).map(|i| i >= start).collect();
    OracleLabels {
        labels,
        stable_position,
    }
}

pub fn oracle_labels(stream: &GuessStream) -> OracleLabels {
    oracle_labels_from(&stream.correctness())
}

/// Per-feature shift and scale learned from training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, or 1 for constant columns.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[BuzzFeatureVector]) -> Self {
        let n = xs.len().max(1) as f64;
        let mut mean = vec![0.0; NUM_FEATURES];
        for x in xs {
            axpy(1.0 / n, x, &mut mean);
        }
        let mut var = vec![0.0; NUM_FEATURES];
        for x in xs {
            for j in 0..NUM_FEATURES {
                var[j] += (x[j] - mean[j]).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &BuzzFeatureVector) -> BuzzFeatureVector {
        let mut z = [0.0; NUM_FEATURES];
        for j in 0..NUM_FEATURES {
            z[j] = (x[j] - self.mean[j]) / self.scale[j];
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 100,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// `sigmoid(w2 . relu(W1 z + b1) + b2)` over standardized features `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBuzzer {
    config: MlpConfig,
    standardizer: Standardizer,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl MlpBuzzer {
    /// Untrained network: Glorot first layer, zero output layer.
    pub fn init(standardizer: Standardizer, config: MlpConfig) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(MlpBuzzer {
            w1: Matrix::xavier(config.hidden, NUM_FEATURES, &mut rng),
            b1: vec![0.0; config.hidden],
            w2: vec![0.0; config.hidden],
            b2: 0.0,
            standardizer,
            config,
        })
    }

    /// Trains on labelled feature vectors with the logistic loss.
    pub fn fit(xs: &[BuzzFeatureVector], ys: &[bool], config: MlpConfig) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidInput("features and labels differ in length".into()));
        }
        let positives = ys.iter().filter(|&&y| y).count();
        if positives == 0 || positives == ys.len() {
            return Err(Error::DegenerateTraining(format!(
                "buzzer labels are all {}",
                if positives == 0 { "wait" } else { "buzz" }
            )));
        }
        let mut model = Self::init(Standardizer::fit(xs), config)?;
        let zs: Vec<BuzzFeatureVector> = xs.iter().map(|x| model.standardizer.apply(x)).collect();
        let adam = AdamParams {
            learning_rate: model.config.learning_rate,
            ..AdamParams::default()
        };
        let mut opt = Adam::new(model.num_params(), adam);
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..zs.len()).collect();
        for epoch in 0..model.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(model.config.batch_size.max(1)) {
                let bx: Vec<BuzzFeatureVector> = batch.iter().map(|&i| zs[i]).collect();
                let by: Vec<bool> = batch.iter().map(|&i| ys[i]).collect();
                let (loss, grad) = model.loss_and_grad_standardized(&bx, &by);
                total += loss * batch.len() as f64;
                let mut p = model.params();
                opt.step(&mut p, &grad);
                model.set_params(&p);
            }
            tracing::debug!(epoch, loss = total / zs.len() as f64, "buzzer epoch");
        }
        if !model.params().iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateTraining("buzzer parameters diverged".into()));
        }
        Ok(model)
    }

    /// Trains on every position of `streams` against stable-oracle labels.
    pub fn train(streams: &[GuessStream], config: MlpConfig) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in streams {
            xs.extend(stream_features(s)?);
            ys.extend(oracle_labels(s).labels);
        }
        Self::fit(&xs, &ys, config)
    }

    fn hidden(&self, z: &BuzzFeatureVector) -> (Vec<f64>, Vec<f64>) {
        let mut pre = self.w1.matvec(z);
        axpy(1.0, &self.b1, &mut pre);
        let act = pre.iter().map(|&u| u.max(0.0)).collect();
        (pre, act)
    }

    fn logit_standardized(&self, z: &BuzzFeatureVector) -> f64 {
        dot(&self.w2, &self.hidden(z).1) + self.b2
    }

    /// Sigmoid output on raw (unstandardized) features.
    pub fn predict(&self, x: &BuzzFeatureVector) -> f64 {
        sigmoid(self.logit_standardized(&self.standardizer.apply(x)))
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn num_params(&self) -> usize {
        self.w1.data.len() + self.b1.len() + self.w2.len() + 1
    }

    /// `W1`, `b1`, `w2`, `b2`, flattened.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend_from_slice(&self.w1.data);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter length");
        let (a, rest) = p.split_at(self.w1.data.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.data.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }

    /// Smallest `|pre-activation|` of any hidden unit over `xs`; finite
    /// differences are unreliable when this is near zero.
    pub fn min_abs_preactivation(&self, xs: &[BuzzFeatureVector]) -> f64 {
        xs.iter()
            .flat_map(|x| self.hidden(&self.standardizer.apply(x)).0)
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean logistic loss over raw features and its gradient in
    /// [`Self::params`] order.
    pub fn loss_and_grad(&self, xs: &[BuzzFeatureVector], ys: &[bool]) -> (f64, Vec<f64>) {
        let zs: Vec<BuzzFeatureVector> = xs.iter().map(|x| self.standardizer.apply(x)).collect();
        self.loss_and_grad_standardized(&zs, ys)
    }

    fn loss_and_grad_standardized(&self, zs: &[BuzzFeatureVector], ys: &[bool]) -> (f64, Vec<f64>) {
        let h = self.config.hidden;
        let n_w1 = self.w1.data.len();
        let mut grad = vec![0.0; self.num_params()];
        let scale = 1.0 / zs.len().max(1) as f64;
        let mut loss = 0.0;
        for (z, &y) in zs.iter().zip(ys) {
            let (pre, act) = self.hidden(z);
            let logit = dot(&self.w2, &act) + self.b2;
            let y = f64::from(u8::from(y));
            loss += scale * (softplus(logit) - y * logit);
            let g = scale * (sigmoid(logit) - y);
            axpy(g, &act, &mut grad[n_w1 + h..n_w1 + 2 * h]);
            grad[n_w1 + 2 * h] += g;
            for j in 0..h {
                if pre[j] > 0.0 {
                    let gu = g * self.w2[j];
                    grad[n_w1 + j] += gu;
                    axpy(gu, z, &mut grad[j * NUM_FEATURES..(j + 1) * NUM_FEATURES]);
                }
            }
        }
        (loss, grad)
    }

    fn to_container(&self) -> Container {
        let mut c = Container::new(
            MLP_KIND,
            serde_json::json!({"features": NUM_FEATURES, "hidden": self.config.hidden}),
            self.config.seed,
            &self.config,
            serde_json::json!({"feature_layout": FEATURE_LAYOUT, "standardizer": self.standardizer}),
        );
        c.push("w1", &[self.w1.rows, self.w1.cols], self.w1.data.clone());
        c.push("b1", &[self.b1.len()], self.b1.clone());
        c.push("w2", &[self.w2.len()], self.w2.clone());
        c.push("b2", &[1], vec![self.b2]);
        c
    }

    fn from_container(c: &Container) -> Result<Self> {
        let layout: String = c.meta("feature_layout")?;
        if layout != FEATURE_LAYOUT {
            return Err(Error::Format(format!(
                "buzzer was trained on feature layout {layout:?}, this build uses {FEATURE_LAYOUT:?}"
            )));
        }
        let config: MlpConfig = serde_json::from_value(c.header.config.clone())?;
        let standardizer: Standardizer = c.meta("standardizer")?;
        let mut m = MlpBuzzer::init(standardizer, config)?;
        let p: Vec<f64> = ["w1", "b1", "w2", "b2"]
            .iter()
            .map(|n| c.block(n).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?
            .concat();
        if p.len() != m.num_params() {
            return Err(Error::Format("buzzer weight blocks do not match header".into()));
        }
        m.set_params(&p);
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuzzerModel {
    /// Buzz when the top guess's probability exceeds the threshold.
    Threshold { threshold: f64 },
    Mlp(MlpBuzzer),
}

impl BuzzerModel {
    pub fn kind(&self) -> &'static str {
        match self {
            BuzzerModel::Threshold { .. } => THRESHOLD_KIND,
            BuzzerModel::Mlp(_) => MLP_KIND,
        }
    }

    /// Decision score at each position: top-1 probability for the threshold
    /// buzzer, sigmoid output for the MLP.
    pub fn scores(&self, stream: &GuessStream) -> Result<Vec<f64>> {
        match self {
            BuzzerModel::Threshold { .. } => Ok((1..=stream.len())
                .map(|p| stream.top(p).map_or(0.0, |g| g.probability))
                .collect()),
            BuzzerModel::Mlp(m) => Ok(stream_features(stream)?.iter().map(|x| m.predict(x)).collect()),
        }
    }

    /// Buzz/wait at every position.
    pub fn decisions(&self, stream: &GuessStream) -> Result<Vec<bool>> {
        let cut = match self {
            BuzzerModel::Threshold { threshold } => *threshold,
            BuzzerModel::Mlp(_) => 0.5,
        };
        Ok(self.scores(stream)?.into_iter().map(|s| s > cut).collect())
    }

    /// Decision at one position; reads only positions up to `position`.
    pub fn decide_at(&self, stream: &GuessStream, position: usize) -> Result<bool> {
        match self {
            BuzzerModel::Threshold { threshold } => {
                Ok(stream.top(position).map_or(0.0, |g| g.probability) > *threshold)
            }
            BuzzerModel::Mlp(m) => Ok(m.predict(&extract_features(stream, position)?) > 0.5),
        }
    }

    /// Earliest position deciding buzz.
    pub fn first_buzz(&self, stream: &GuessStream) -> Result<Option<usize>> {
        Ok(self.decisions(stream)?.iter().position(|&b| b).map(|i| i + 1))
    }

    pub fn to_container(&self) -> Container {
        match self {
            BuzzerModel::Threshold { threshold } => {
                let mut c = Container::new(
                    THRESHOLD_KIND,
                    serde_json::json!({}),
                    0,
                    &serde_json::json!({ "threshold": threshold }),
                    serde_json::json!({}),
                );
                c.push("threshold", &[1], vec![*threshold]);
                c
            }
            BuzzerModel::Mlp(m) => m.to_container(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        match c.header.kind.as_str() {
            THRESHOLD_KIND => Ok(BuzzerModel::Threshold {
                threshold: c.block("threshold")?[0],
            }),
            MLP_KIND => MlpBuzzer::from_container(c).map(BuzzerModel::Mlp),
            other => Err(Error::Format(format!("unknown buzzer kind {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Grid search over `0.00, 0.01, ..., 1.00` for the threshold maximising
/// EW on `streams`; ties go to the larger threshold.
pub fn tune_threshold(streams: &[GuessStream], curve: &WinProbCurve, variant: EwVariant) -> Result<f64> {
    if streams.is_empty() {
        return Err(Error::InvalidInput("threshold tuning needs at least one stream".into()));
    }
    let top: Vec<Vec<f64>> = streams
        .iter()
        .map(|s| (1..=s.len()).map(|p| s.top(p).map_or(0.0, |g| g.probability)).collect())
        .collect();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for step in 0..=100 {
        let theta = step as f64 / 100.0;
        let buzzes: Vec<Option<usize>> = top
            .iter()
            .map(|ps| ps.iter().position(|&p| p > theta).map(|i| i + 1))
            .collect();
        let ew = expected_wins(streams, &buzzes, curve, variant);
        if ew >= best.0 {
            best = (ew, theta);
        }
    }
    Ok(best.1)
}

/// CSV dump of features and oracle labels for every position.
pub fn write_feature_csv<W: Write>(mut out: W, streams: &[GuessStream]) -> Result<()> {
    let io = |e| Error::io("feature csv", e);
    writeln!(out, "qanta_id,position,label,{}", FEATURE_NAMES.join(",")).map_err(io)?;
    for s in streams {
        let labels = oracle_labels(s).labels;
        for (i, f) in stream_features(s)?.iter().enumerate() {
            let vals: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{},{},{}", s.qanta_id, i + 1, u8::from(labels[i]), vals.join(",")).map_err(io)?;
        }
    }
    Ok(())
}
