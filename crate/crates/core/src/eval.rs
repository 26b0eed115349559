//! Accuracy metrics, win-probability curves and expected wins.
//!
//! Positions are normalised to `t = words revealed / question word count`.
//! π(t) is the probability that an average human opponent has not yet
//! answered correctly by `t`; expected wins (EW) credits a correct buzz at
//! `t` with π(t) and averages over questions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::buzzer::oracle_labels;
use crate::corpus::GameplayRecord;
use crate::error::{Error, Result};
use crate::guesser::GuessStream;

/// Coefficients `(c0, c1, c2, c3)` of the published cubic fit.
pub const PUBLISHED_CUBIC: [f64; 4] = [0.0, 0.0775, -1.278, 0.588];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WinProbCurve {
    /// Right-continuous step function. `steps[i] = (t_i, π)` gives the value
    /// on `[t_i, t_{i+1})`; before the first step π is 1.
    Empirical { steps: Vec<(f64, f64)> },
    /// `clamp(c0 + c1 t + c2 t^2 + c3 t^3, 0, 1)`.
    Cubic { coeffs: [f64; 4] },
}

impl WinProbCurve {
    /// `π(t) = 1 - N_t / N` from `(t, correct)` observations, where `N_t`
    /// counts correct answers at `t_i <= t`.
    pub fn empirical(observations: impl IntoIterator<Item = (f64, bool)>) -> Self {
        let mut n = 0usize;
        let mut correct_at: Vec<f64> = Vec::new();
        for (t, correct) in observations {
            n += 1;
            if correct {
                correct_at.push(t);
            }
        }
        correct_at.sort_by(f64::total_cmp);
        let mut steps: Vec<(f64, f64)> = Vec::new();
        for (i, &t) in correct_at.iter().enumerate() {
            let pi = 1.0 - (i + 1) as f64 / n as f64;
            match steps.last_mut() {
                Some(last) if last.0 == t => last.1 = pi,
                _ => steps.push((t, pi)),
            }
        }
        WinProbCurve::Empirical { steps }
    }

    /// Pooled empirical curve over gameplay records, with `t` taken from
    /// each record's own question text.
    pub fn from_gameplay<'a>(records: impl IntoIterator<Item = &'a GameplayRecord>) -> Self {
        Self::empirical(records.into_iter().filter_map(|r| {
            let wc = r.word_count();
            (wc > 0).then(|| (r.position as f64 / wc as f64, r.result))
        }))
    }

    pub fn cubic(coeffs: [f64; 4]) -> Self {
        WinProbCurve::Cubic { coeffs }
    }

    pub fn published_cubic() -> Self {
        Self::cubic(PUBLISHED_CUBIC)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            WinProbCurve::Empirical { steps } => {
                let idx = steps.partition_point(|&(ti, _)| ti <= t);
                if idx == 0 {
                    1.0
                } else {
                    steps[idx - 1].1
                }
            }
            WinProbCurve::Cubic { coeffs: [c0, c1, c2, c3] } => {
                (c0 + t * (c1 + t * (c2 + t * c3))).clamp(0.0, 1.0)
            }
        }
    }

    /// Checks monotonicity on a 1001-point grid of `[0, 1]`.
    pub fn is_non_increasing(&self) -> bool {
        let vals: Vec<f64> = (0..=1000).map(|i| self.eval(i as f64 / 1000.0)).collect();
        vals.windows(2).all(|w| w[1] <= w[0] + 1e-12)
    }

    /// `(t, π(t))` on an evenly spaced grid of `points + 1` values.
    pub fn write_csv<W: Write>(&self, mut out: W, points: usize) -> std::io::Result<()> {
        writeln!(out, "t,pi")?;
        let points = points.max(1);
        for i in 0..=points {
            let t = i as f64 / points as f64;
            writeln!(out, "{t},{}", self.eval(t))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EwVariant {
    /// Credit requires the top guess to stay correct at every later position.
    Stable,
    /// Credit requires only the buzz position to be correct.
    FirstCorrect,
}

/// EW credit for buzzing on `stream` at 1-based `position`.
pub fn credit(stream: &GuessStream, position: usize, curve: &WinProbCurve, variant: EwVariant) -> f64 {
    if position == 0 || position > stream.len() || !stream.correct_at(position) {
        return 0.0;
    }
    if variant == EwVariant::Stable && !(position..=stream.len()).all(|p| stream.correct_at(p)) {
        return 0.0;
    }
    curve.eval(stream.fraction_at(position))
}

/// Mean credit over questions. `buzzes[i]` is the buzz position on
/// `streams[i]`; `None` earns nothing. Empty input gives 0.
pub fn expected_wins(
    streams: &[GuessStream],
    buzzes: &[Option<usize>],
    curve: &WinProbCurve,
    variant: EwVariant,
) -> f64 {
    assert_eq!(streams.len(), buzzes.len(), "one buzz entry per stream");
    if streams.is_empty() {
        return 0.0;
    }
    let total: f64 = streams
        .iter()
        .zip(buzzes)
        .map(|(s, b)| b.map_or(0.0, |p| credit(s, p, curve, variant)))
        .sum();
    total / streams.len() as f64
}

/// Buzz position of the oracle buzzer matching `variant`: the stable
/// position, or the earliest correct position.
pub fn oracle_buzz(stream: &GuessStream, variant: EwVariant) -> Option<usize> {
    match variant {
        EwVariant::Stable => oracle_labels(stream).stable_position,
        EwVariant::FirstCorrect => (1..=stream.len()).find(|&p| stream.correct_at(p)),
    }
}

pub fn oracle_expected_wins(streams: &[GuessStream], curve: &WinProbCurve, variant: EwVariant) -> f64 {
    let buzzes: Vec<Option<usize>> = streams.iter().map(|s| oracle_buzz(s, variant)).collect();
    expected_wins(streams, &buzzes, curve, variant)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionAccuracy {
    /// Top-1 accuracy once the first sentence is fully revealed.
    pub start: Option<f64>,
    /// Top-1 accuracy on the full question.
    pub end: f64,
    /// `(t, accuracy)` at evenly spaced revealed fractions.
    pub curve: Vec<(f64, f64)>,
}

/// `first_sentence_words[i]` is the word count of the first sentence of
/// the question behind `streams[i]`; without it start accuracy is skipped.
pub fn position_accuracy(streams: &[GuessStream], first_sentence_words: Option<&[usize]>, bins: usize) -> PositionAccuracy {
    let n = streams.len().max(1) as f64;
    let start = first_sentence_words.map(|fs| {
        assert_eq!(streams.len(), fs.len(), "one sentence length per stream");
        streams
            .iter()
            .zip(fs)
            .filter(|(s, &w)| s.correct_at(s.position_for_words(w)))
            .count() as f64
            / n
    });
    let end = streams.iter().filter(|s| s.correct_at(s.len())).count() as f64 / n;
    let bins = bins.max(1);
    let curve = (1..=bins)
        .map(|b| {
            let t = b as f64 / bins as f64;
            let hits = streams
                .iter()
                .filter(|s| {
                    let words = (t * s.word_count as f64).ceil() as usize;
                    s.correct_at(s.position_for_words(words))
                })
                .count();
            (t, hits as f64 / n)
        })
        .collect();
    PositionAccuracy { start, end, curve }
}

/// One guesser's row of the accuracy / EW table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub questions: usize,
    pub start_accuracy: Option<f64>,
    pub end_accuracy: f64,
    /// Oracle-buzzer EW under stable credit.
    pub ew_stable: f64,
    /// Oracle-buzzer EW under first-correct credit.
    pub ew_first_correct: f64,
    pub curve: WinProbCurve,
    pub per_position_accuracy: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn compute(
        model: &str,
        streams: &[GuessStream],
        first_sentence_words: Option<&[usize]>,
        curve: &WinProbCurve,
        bins: usize,
    ) -> Self {
        let acc = position_accuracy(streams, first_sentence_words, bins);
        EvalReport {
            model: model.to_string(),
            questions: streams.len(),
            start_accuracy: acc.start,
            end_accuracy: acc.end,
            ew_stable: oracle_expected_wins(streams, curve, EwVariant::Stable),
            ew_first_correct: oracle_expected_wins(streams, curve, EwVariant::FirstCorrect),
            curve: curve.clone(),
            per_position_accuracy: acc.curve,
        }
    }
}

pub fn write_accuracy_table<W: Write>(mut out: W, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(out, "model,start_acc,end_acc,ew_stable,ew_first_correct")?;
    for r in reports {
        let start = r.start_accuracy.map_or(String::new(), |v| format!("{v:.4}"));
        writeln!(
            out,
            "{},{start},{:.4},{:.4},{:.4}",
            r.model, r.end_accuracy, r.ew_stable, r.ew_first_correct
        )?;
    }
    Ok(())
}

/// One buzzer's row of the buzzer comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuzzerReport {
    pub model: String,
    /// Per-position agreement with the stable oracle labels; `None` for
    /// buzzers that are not trained against labels.
    pub accuracy: Option<f64>,
    pub ew: f64,
    /// Mean machine points per simulated (question, record) pair, when
    /// gameplay is available.
    pub score: Option<f64>,
}

pub fn write_buzzer_table<W: Write>(mut out: W, reports: &[BuzzerReport]) -> std::io::Result<()> {
    writeln!(out, "model,acc,ew,score")?;
    let opt = |v: Option<f64>, digits: usize| v.map_or(String::new(), |x| format!("{x:.digits$}"));
    for r in reports {
        writeln!(out, "{},{},{:.3},{}", r.model, opt(r.accuracy, 3), r.ew, opt(r.score, 2))?;
    }
    Ok(())
}

/// Fraction of positions where `decisions` matches the oracle labels.
pub fn decision_accuracy(streams: &[GuessStream], decisions: &[Vec<bool>]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (s, d) in streams.iter().zip(decisions) {
        let labels = oracle_labels(s).labels;
        for (a, b) in d.iter().zip(&labels) {
            hits += usize::from(a == b);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub buzz_opt_buzz: usize,
    pub buzz_opt_wait: usize,
    pub wait_opt_wait: usize,
    pub wait_opt_buzz: usize,
}

impl ConfusionCell {
    pub fn total(&self) -> usize {
        self.buzz_opt_buzz + self.buzz_opt_wait + self.wait_opt_wait + self.wait_opt_buzz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuzzConfusion {
    pub buckets: Vec<ConfusionCell>,
}

/// Buzz-vs-oracle counts binned by revealed fraction. A stream is counted at
/// every position up to and including its first buzz, then leaves the
/// population. A bin receives the positions whose `t` falls in it.
pub fn buzzer_confusion(streams: &[GuessStream], decisions: &[Vec<bool>], buckets: usize) -> Result<BuzzConfusion> {
    if buckets == 0 {
        return Err(Error::InvalidInput("bucket count must be positive".into()));
    }
    if streams.len() != decisions.len() {
        return Err(Error::InvalidInput("one decision sequence per stream".into()));
    }
    let mut out = vec![ConfusionCell::default(); buckets];
    for (s, d) in streams.iter().zip(decisions) {
        if d.len() != s.len() {
            return Err(Error::DataMismatch(format!(
                "question {}: {} decisions for {} positions",
                s.qanta_id,
                d.len(),
                s.len()
            )));
        }
        let labels = oracle_labels(s).labels;
        for (i, (&buzz, &opt)) in d.iter().zip(&labels).enumerate() {
            let t = s.fraction_at(i + 1);
            let bin = ((t * buckets as f64).ceil() as usize).clamp(1, buckets) - 1;
            let cell = &mut out[bin];
            match (buzz, opt) {
                (true, true) => cell.buzz_opt_buzz += 1,
                (true, false) => cell.buzz_opt_wait += 1,
                (false, false) => cell.wait_opt_wait += 1,
                (false, true) => cell.wait_opt_buzz += 1,
            }
            if buzz {
                break;
            }
        }
    }
    Ok(BuzzConfusion { buckets: out })
}

impl BuzzConfusion {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bucket,buzz_opt_buzz,buzz_opt_wait,wait_opt_wait,wait_opt_buzz")?;
        for (i, c) in self.buckets.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                c.buzz_opt_buzz,
                c.buzz_opt_wait,
                c.wait_opt_wait,
                c.wait_opt_buzz
            )?;
        }
        Ok(())
    }
}
