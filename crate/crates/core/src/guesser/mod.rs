//! Guessers map a question prefix to ranked candidate answers.
//!
//! Three models share the [`Guesser`] trait: BM25 retrieval over one
//! document per answer ([`ir`]), multinomial logistic regression over hashed
//! n-grams ([`linear`]) and a deep averaging network ([`dan`]).
//! [`guess_stream`] replays a question word by word through any of them.

pub mod dan;
pub mod ir;
pub mod linear;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::corpus::{self, QuestionRecord};
use crate::error::{Error, Result};

pub use dan::{DanConfig, DanModel};
pub use ir::{IrConfig, TfidfIndex};
pub use linear::{LinearConfig, LinearModel};

/// Lowercase, split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guess {
    pub answer: String,
    pub score: f64,
    #[serde(rename = "prob")]
    pub probability: f64,
}

/// One labelled training text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub answer: String,
}

impl Example {
    pub fn new(text: impl Into<String>, answer: impl Into<String>) -> Self {
        Example {
            text: text.into(),
            answer: answer.into(),
        }
    }
}

/// Whole-question examples, one per mapped question.
pub fn question_examples<'a>(questions: impl IntoIterator<Item = &'a QuestionRecord>) -> Vec<Example> {
    questions
        .into_iter()
        .filter_map(|q| q.page.as_ref().map(|p| Example::new(q.text.clone(), p.clone())))
        .collect()
}

/// Sentence-level examples: every sentence of a mapped question is its own
/// example labelled with the question's page.
pub fn sentence_examples<'a>(questions: impl IntoIterator<Item = &'a QuestionRecord>) -> Vec<Example> {
    questions
        .into_iter()
        .filter_map(|q| q.page.as_ref().map(|p| (q, p)))
        .flat_map(|(q, p)| {
            q.sentences()
                .into_iter()
                .map(move |s| Example::new(s, p.clone()))
        })
        .collect()
}

pub trait Guesser {
    /// Ranked guesses for an already-tokenized prefix, at most `k` of them.
    fn guess_tokens(&self, tokens: &[String], k: usize) -> Vec<Guess>;

    fn guess(&self, text: &str, k: usize) -> Vec<Guess> {
        self.guess_tokens(&tokenize(text), k)
    }
}

/// Picks the `k` highest scores, breaking ties by answer name so the result
/// is independent of iteration order.
pub(crate) fn top_k(
    scored: impl IntoIterator<Item = (usize, f64)>,
    answers: &[String],
    k: usize,
) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = scored.into_iter().collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.total_cmp(&a.1)
            .then_with(|| answers[a.0].cmp(&answers[b.0]))
    };
    if all.len() > k && k > 0 {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    all.truncate(k);
    all
}

/// Per-position guesses for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessStream {
    pub qanta_id: u64,
    /// Gold page.
    pub answer: String,
    pub step_size: usize,
    pub k: usize,
    pub word_count: usize,
    pub positions: Vec<Vec<Guess>>,
}

impl GuessStream {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Words revealed at 1-based stream position `pos`.
    pub fn words_at(&self, pos: usize) -> usize {
        (pos * self.step_size).min(self.word_count)
    }

    /// Fraction of the question revealed at `pos`, in `(0, 1]`.
    pub fn fraction_at(&self, pos: usize) -> f64 {
        if self.word_count == 0 {
            1.0
        } else {
            self.words_at(pos) as f64 / self.word_count as f64
        }
    }

    /// First stream position revealing at least `words` words.
    pub fn position_for_words(&self, words: usize) -> usize {
        words.div_ceil(self.step_size.max(1)).clamp(1, self.len().max(1))
    }

    pub fn top(&self, pos: usize) -> Option<&Guess> {
        self.positions.get(pos.checked_sub(1)?)?.first()
    }

    pub fn correct_at(&self, pos: usize) -> bool {
        self.top(pos).is_some_and(|g| g.answer == self.answer)
    }

    pub fn correctness(&self) -> Vec<bool> {
        (1..=self.len()).map(|p| self.correct_at(p)).collect()
    }

    pub fn final_guess(&self) -> Option<&Guess> {
        self.positions.last()?.first()
    }
}

/// Number of stream positions for a question of `word_count` words.
pub fn stream_length(word_count: usize, step_size: usize) -> usize {
    word_count.div_ceil(step_size.max(1))
}

/// Runs `model` over every `step_size`-word prefix of the question; the last
/// position always covers the full text.
pub fn guess_stream<G: Guesser + ?Sized>(
    model: &G,
    question: &QuestionRecord,
    k: usize,
    step_size: usize,
) -> Result<GuessStream> {
    if k == 0 || step_size == 0 {
        return Err(Error::InvalidInput("k and step_size must be at least 1".into()));
    }
    let answer = question
        .page
        .clone()
        .ok_or_else(|| Error::InvalidInput(format!("question {} has no page", question.qanta_id)))?;
    let word_tokens: Vec<Vec<String>> = corpus::words(&question.text).map(tokenize).collect();
    let word_count = word_tokens.len();
    let mut prefix_tokens = Vec::new();
    let mut token_ends = Vec::with_capacity(word_count);
    for toks in word_tokens {
        prefix_tokens.extend(toks);
        token_ends.push(prefix_tokens.len());
    }
    let positions = (1..=stream_length(word_count, step_size))
        .map(|j| {
            let words = (j * step_size).min(word_count);
            model.guess_tokens(&prefix_tokens[..token_ends[words - 1]], k)
        })
        .collect();
    Ok(GuessStream {
        qanta_id: question.qanta_id,
        answer,
        step_size,
        k,
        word_count,
        positions,
    })
}

pub fn write_streams(path: impl AsRef<Path>, streams: &[GuessStream]) -> Result<()> {
    corpus::write_jsonl(path.as_ref(), streams)
}

pub fn read_streams(path: impl AsRef<Path>) -> Result<Vec<GuessStream>> {
    corpus::read_jsonl(path.as_ref())
}

/// Token and answer indices for the trainable models. Token index 0 is the
/// reserved unknown token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    answers: Vec<String>,
    doc_freq: Vec<u32>,
    #[serde(skip)]
    token_index: HashMap<String, usize>,
    #[serde(skip)]
    answer_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const UNK_TOKEN: &'static str = "<unk>";

    /// Tokens seen in at least `min_count` examples; indices follow sorted
    /// order so the result does not depend on example order.
    pub fn build(examples: &[Example], min_count: u32) -> Self {
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        let mut answers = BTreeSet::new();
        for ex in examples {
            answers.insert(ex.answer.clone());
            let unique: BTreeSet<String> = tokenize(&ex.text).into_iter().collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut tokens = vec![Self::UNK_TOKEN.to_string()];
        let mut doc_freq = vec![0];
        for (t, c) in df {
            if c >= min_count.max(1) {
                tokens.push(t);
                doc_freq.push(c);
            } else {
                doc_freq[Self::UNK] += c;
            }
        }
        Self::from_parts(tokens, answers.into_iter().collect(), doc_freq)
    }

    pub fn from_parts(tokens: Vec<String>, answers: Vec<String>, doc_freq: Vec<u32>) -> Self {
        let token_index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let answer_index = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Vocabulary {
            tokens,
            answers,
            doc_freq,
            token_index,
            answer_index,
        }
    }

    /// Restores lookup tables after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_parts(self.tokens, self.answers, self.doc_freq)
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.token_index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn answer_id(&self, answer: &str) -> Option<usize> {
        self.answer_index.get(answer).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn doc_freq(&self, token_id: usize) -> u32 {
        self.doc_freq.get(token_id).copied().unwrap_or(0)
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_answers(&self) -> usize {
        self.answers.len()
    }
}

/// Any trained guesser, for code that picks the model at run time.
#[derive(Debug, Clone)]
pub enum GuesserModel {
    Ir(TfidfIndex),
    Linear(LinearModel),
    Dan(DanModel),
}

impl GuesserModel {
    pub fn kind(&self) -> &'static str {
        match self {
            GuesserModel::Ir(_) => ir::KIND,
            GuesserModel::Linear(_) => linear::KIND,
            GuesserModel::Dan(_) => dan::KIND,
        }
    }

    pub fn to_container(&self) -> Container {
        match self {
            GuesserModel::Ir(m) => m.to_container(),
            GuesserModel::Linear(m) => m.to_container(),
            GuesserModel::Dan(m) => m.to_container(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        match c.header.kind.as_str() {
            ir::KIND => TfidfIndex::from_container(c).map(GuesserModel::Ir),
            linear::KIND => LinearModel::from_container(c).map(GuesserModel::Linear),
            dan::KIND => DanModel::from_container(c).map(GuesserModel::Dan),
            other => Err(Error::Format(format!("unknown guesser kind {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

impl Guesser for GuesserModel {
    fn guess_tokens(&self, tokens: &[String], k: usize) -> Vec<Guess> {
        match self {
            GuesserModel::Ir(m) => m.guess_tokens(tokens, k),
            GuesserModel::Linear(m) => m.guess_tokens(tokens, k),
            GuesserModel::Dan(m) => m.guess_tokens(tokens, k),
        }
    }
}

pub(crate) fn check_classes(examples: &[Example]) -> Result<()> {
    let distinct: BTreeSet<&str> = examples.iter().map(|e| e.answer.as_str()).collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateTraining(format!(
            "need at least 2 distinct answers, found {}",
            distinct.len()
        )));
    }
    Ok(())
}

/// Top-k guesses with probabilities from a full softmax over `logits`.
pub(crate) fn softmax_guesses(logits: &[f64], answers: &[String], k: usize) -> Vec<Guess> {
    let probs = crate::nn::softmax(logits);
    top_k(logits.iter().copied().enumerate(), answers, k)
        .into_iter()
        .map(|(idx, s)| Guess {
            answer: answers[idx].clone(),
            score: s,
            probability: probs[idx],
        })
        .collect()
}
