//! Six-way fold assignment by tournament quality and year.
//!
//! Championship questions from the dev/test years are routed by year alone;
//! everything else goes through an 80/20 guess/buzz split where the buzz side
//! only keeps questions that have gameplay. Per-question randomness comes
//! from a counter-based generator keyed by `(seed, qanta_id)`, so the result
//! does not depend on input order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer_map::Pool;
use crate::corpus::{Fold, QuestionRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldConfig {
    pub seed: u64,
    pub train_split: f64,
    pub championship_tournaments: BTreeSet<String>,
    pub buzztest_years: BTreeSet<i32>,
    pub guesstest_years: BTreeSet<i32>,
    pub dev_years: BTreeSet<i32>,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig {
            seed: 0,
            train_split: 0.8,
            championship_tournaments: [
                "ACF Regionals",
                "ACF Nationals",
                "ACF Fall",
                "PACE NSC",
                "NASAT",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            buzztest_years: [2016].into(),
            guesstest_years: [2017, 2018].into(),
            dev_years: [2015].into(),
        }
    }
}

impl FoldConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: FoldConfig = serde_json::from_str(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_split > 0.0 && self.train_split < 1.0) {
            return Err(Error::Config(format!(
                "train_split must lie in (0,1), got {}",
                self.train_split
            )));
        }
        let sets = [
            ("buzztest_years", &self.buzztest_years),
            ("guesstest_years", &self.guesstest_years),
            ("dev_years", &self.dev_years),
        ];
        for (i, (name_a, a)) in sets.iter().enumerate() {
            for (name_b, b) in &sets[i + 1..] {
                let shared: Vec<_> = a.intersection(b).collect();
                if !shared.is_empty() {
                    return Err(Error::Config(format!(
                        "{name_a} and {name_b} overlap on years {shared:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_championship(&self, q: &QuestionRecord) -> bool {
        let name = q.tournament.trim();
        self.championship_tournaments
            .iter()
            .any(|t| t.eq_ignore_ascii_case(name))
    }

    fn first_eval_year(&self) -> Option<i32> {
        self.dev_years.iter().next().copied()
    }

    /// Which answer-rule pool a question draws from, decided from metadata
    /// alone so it can run before fold assignment.
    pub fn pool(&self, q: &QuestionRecord) -> Pool {
        match q.year {
            Some(y)
                if self.is_championship(q)
                    && (self.dev_years.contains(&y)
                        || self.buzztest_years.contains(&y)
                        || self.guesstest_years.contains(&y)) =>
            {
                Pool::Test
            }
            _ => Pool::Train,
        }
    }
}

/// Uniform draw in `[0,1)` for one question: stream `qanta_id` of a ChaCha8
/// generator seeded with `seed`.
pub fn question_uniform(seed: u64, qanta_id: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(qanta_id);
    rng.gen::<f64>()
}

pub fn assign_fold(q: &QuestionRecord, has_gameplay: bool, u: f64, cfg: &FoldConfig) -> Result<Fold> {
    if cfg.is_championship(q) {
        if let Some(year) = q.year {
            if cfg.buzztest_years.contains(&year) {
                return Ok(Fold::Buzztest);
            }
            if cfg.guesstest_years.contains(&year) {
                return Ok(Fold::Guesstest);
            }
            if cfg.dev_years.contains(&year) {
                return Ok(if u < 0.5 { Fold::Guessdev } else { Fold::Buzzdev });
            }
            if cfg.first_eval_year().is_some_and(|first| year >= first) {
                return Err(Error::Config(format!(
                    "championship question {} from {year} is not covered by any dev/test year set",
                    q.qanta_id
                )));
            }
        }
    }
    Ok(if u < cfg.train_split {
        Fold::Guesstrain
    } else if has_gameplay {
        Fold::Buzztrain
    } else {
        Fold::Guesstrain
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldStats {
    pub counts: BTreeMap<Fold, usize>,
    pub total: usize,
}

impl FoldStats {
    pub fn count(&self, fold: Fold) -> usize {
        self.counts.get(&fold).copied().unwrap_or(0)
    }
}

/// Assigns folds to every question with a mapped page; unmapped questions
/// stay unassigned.
pub fn assign_all(
    questions: Vec<QuestionRecord>,
    with_gameplay: &HashSet<u64>,
    cfg: &FoldConfig,
) -> Result<(Vec<QuestionRecord>, FoldStats)> {
    cfg.validate()?;
    let mut stats = FoldStats::default();
    let mut out = Vec::with_capacity(questions.len());
    for mut q in questions {
        q.fold = if q.page.is_some() {
            let u = question_uniform(cfg.seed, q.qanta_id);
            assign_fold(&q, with_gameplay.contains(&q.qanta_id), u, cfg)?
        } else {
            Fold::Unassigned
        };
        *stats.counts.entry(q.fold).or_default() += 1;
        stats.total += 1;
        out.push(q);
    }
    Ok((out, stats))
}
