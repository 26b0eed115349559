//! Okapi BM25 retrieval where each answer is one document built from all of
//! its training questions.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{tokenize, top_k, Example, Guess, Guesser};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::softmax;

pub const KIND: &str = "guesser-ir";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrConfig {
    pub k1: f64,
    pub b: f64,
}

impl Default for IrConfig {
    fn default() -> Self {
        IrConfig { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfIndex {
    config: IrConfig,
    answers: Vec<String>,
    terms: Vec<String>,
    term_index: HashMap<String, usize>,
    /// Per term: `(document, term frequency)` sorted by document.
    postings: Vec<Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    avgdl: f64,
}

impl TfidfIndex {
    /// Concatenates all training texts sharing an answer into one document.
    pub fn build(train: &[Example], config: IrConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let mut docs: BTreeMap<&str, BTreeMap<String, u32>> = BTreeMap::new();
        for ex in train {
            let doc = docs.entry(ex.answer.as_str()).or_default();
            for t in tokenize(&ex.text) {
                *doc.entry(t).or_default() += 1;
            }
        }
        let answers: Vec<String> = docs.keys().map(|a| a.to_string()).collect();
        let doc_len: Vec<u32> = docs.values().map(|d| d.values().sum()).collect();

        let mut by_term: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (d, counts) in docs.into_values().enumerate() {
            for (t, tf) in counts {
                by_term.entry(t).or_default().push((d as u32, tf));
            }
        }
        let (terms, postings): (Vec<_>, Vec<_>) = by_term.into_iter().unzip();
        Ok(Self::assemble(config, answers, terms, postings, doc_len))
    }

    fn assemble(
        config: IrConfig,
        answers: Vec<String>,
        terms: Vec<String>,
        postings: Vec<Vec<(u32, u32)>>,
        doc_len: Vec<u32>,
    ) -> Self {
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avgdl = if doc_len.is_empty() {
            0.0
        } else {
            total as f64 / doc_len.len() as f64
        };
        TfidfIndex {
            config,
            term_index: terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
            answers,
            terms,
            postings,
            doc_len,
            avgdl,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.answers.len()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, answer: &str) -> Option<u32> {
        let d = self.answers.iter().position(|a| a == answer)?;
        Some(self.doc_len[d])
    }

    /// `ln(1 + (N - n + 0.5) / (n + 0.5))`; never negative.
    pub fn idf(&self, term: &str) -> Option<f64> {
        let t = *self.term_index.get(term)?;
        Some(self.idf_of(t))
    }

    fn idf_of(&self, term: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.postings[term].len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Term frequency of `term` in the document of `answer`.
    pub fn term_frequency(&self, term: &str, answer: &str) -> u32 {
        let (Some(&t), Some(d)) = (
            self.term_index.get(term),
            self.answers.iter().position(|a| a == answer),
        ) else {
            return 0;
        };
        self.postings[t]
            .binary_search_by_key(&(d as u32), |p| p.0)
            .map(|i| self.postings[t][i].1)
            .unwrap_or(0)
    }

    /// BM25 score of every document that shares at least one query token.
    /// Repeated query tokens contribute once per occurrence.
    pub fn scores(&self, tokens: &[String]) -> Vec<(usize, f64)> {
        let IrConfig { k1, b } = self.config;
        let mut acc: HashMap<usize, f64> = HashMap::new();
        let mut order: Vec<usize> = Vec::new();
        for tok in tokens {
            let Some(&t) = self.term_index.get(tok) else {
                continue;
            };
            let idf = self.idf_of(t);
            for &(d, tf) in &self.postings[t] {
                let d = d as usize;
                let tf = tf as f64;
                let norm = k1 * (1.0 - b + b * self.doc_len[d] as f64 / self.avgdl);
                let entry = acc.entry(d).or_insert_with(|| {
                    order.push(d);
                    0.0
                });
                *entry += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        order.into_iter().map(|d| (d, acc[&d])).collect()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            KIND,
            serde_json::json!({"documents": self.num_docs(), "terms": self.terms.len()}),
            0,
            &self.config,
            serde_json::json!({"answers": self.answers, "terms": self.terms}),
        );
        let mut offsets = Vec::with_capacity(self.postings.len() + 1);
        let mut docs = Vec::new();
        let mut tfs = Vec::new();
        offsets.push(0.0);
        for p in &self.postings {
            for &(d, tf) in p {
                docs.push(d as f64);
                tfs.push(tf as f64);
            }
            offsets.push(docs.len() as f64);
        }
        c.push("doc_len", &[self.doc_len.len()], self.doc_len.iter().map(|&l| l as f64).collect());
        c.push("posting_offsets", &[offsets.len()], offsets);
        c.push("posting_docs", &[docs.len()], docs);
        c.push("posting_tfs", &[tfs.len()], tfs);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND)?;
        let config: IrConfig = serde_json::from_value(c.header.config.clone())?;
        let answers: Vec<String> = c.meta("answers")?;
        let terms: Vec<String> = c.meta("terms")?;
        let offsets = c.block("posting_offsets")?;
        let docs = c.block("posting_docs")?;
        let tfs = c.block("posting_tfs")?;
        if offsets.len() != terms.len() + 1 || docs.len() != tfs.len() {
            return Err(Error::Format("posting blocks do not match term list".into()));
        }
        let postings = offsets
            .windows(2)
            .map(|w| {
                (w[0] as usize..w[1] as usize)
                    .map(|i| (docs[i] as u32, tfs[i] as u32))
                    .collect()
            })
            .collect();
        let doc_len = c.block("doc_len")?.iter().map(|&l| l as u32).collect();
        Ok(Self::assemble(config, answers, terms, postings, doc_len))
    }
}

impl Guesser for TfidfIndex {
    /// An empty result means no query token occurs in any document.
    fn guess_tokens(&self, tokens: &[String], k: usize) -> Vec<Guess> {
        let best = top_k(self.scores(tokens), &self.answers, k);
        let scores: Vec<f64> = best.iter().map(|&(_, s)| s).collect();
        let probs = softmax(&scores);
        best.into_iter()
            .zip(probs)
            .map(|((d, score), probability)| Guess {
                answer: self.answers[d].clone(),
                score,
                probability,
            })
            .collect()
    }
}
