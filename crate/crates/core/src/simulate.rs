//! Simulated matches: a machine (guess stream + buzz decisions) against a
//! recorded human play, or against another machine.
//!
//! Buzz timing is compared in revealed words. A machine buzz counts as
//! first only when it comes strictly before the human's buzz word.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buzzer::BuzzerModel;
use crate::corpus::GameplayRecord;
use crate::error::{Error, Result};
use crate::guesser::GuessStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreRules {
    pub correct_points: i32,
    pub wrong_penalty: i32,
    /// Awarded to the side that answers correctly after the other side's
    /// wrong buzz.
    pub bounce_points: i32,
}

impl Default for ScoreRules {
    fn default() -> Self {
        ScoreRules {
            correct_points: 10,
            wrong_penalty: -5,
            bounce_points: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    MachineCorrect,
    /// The opponent is assumed to answer correctly afterwards.
    MachineWrong,
    OpponentCorrect,
    OpponentWrongMachineCorrect,
    OpponentWrongMachineWrong,
    /// Nobody buzzed.
    Dead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub qanta_id: u64,
    /// Opponent identifier: a player uid, or the other machine's name.
    pub opponent: String,
    pub machine_points: i32,
    pub opponent_points: i32,
    /// Word at which the machine answered, if it did.
    pub machine_buzz: Option<usize>,
    pub opponent_buzz: Option<usize>,
    pub resolution: Resolution,
}

fn top_correct(stream: &GuessStream, pos: usize) -> bool {
    stream.correct_at(pos)
}

/// Replays one recorded human play against the machine's per-position
/// buzz `decisions` on `stream`.
///
/// If the machine's first buzz comes strictly before the human's word it
/// answers first: +10 when correct, otherwise -5 and the human (assumed
/// correct) takes the bounce. Otherwise the human's recorded result stands;
/// after a human miss the machine answers at its first decided buzz, or
/// with its final guess, scoring the bounce when correct and 0 otherwise.
pub fn simulate_vs_record(
    stream: &GuessStream,
    decisions: &[bool],
    record: &GameplayRecord,
    rules: &ScoreRules,
) -> Result<QuestionOutcome> {
    if record.position == 0 || record.position > stream.word_count {
        return Err(Error::DataMismatch(format!(
            "question {}: record position {} outside {} words",
            stream.qanta_id, record.position, stream.word_count
        )));
    }
    if decisions.len() != stream.len() {
        return Err(Error::DataMismatch(format!(
            "question {}: {} decisions for {} positions",
            stream.qanta_id,
            decisions.len(),
            stream.len()
        )));
    }
    let first_buzz = decisions.iter().position(|&b| b).map(|i| i + 1);
    let mut out = QuestionOutcome {
        qanta_id: stream.qanta_id,
        opponent: record.uid.clone(),
        machine_points: 0,
        opponent_points: 0,
        machine_buzz: None,
        opponent_buzz: None,
        resolution: Resolution::Dead,
    };

    if let Some(p) = first_buzz.filter(|&p| stream.words_at(p) < record.position) {
        out.machine_buzz = Some(stream.words_at(p));
        if top_correct(stream, p) {
            out.machine_points = rules.correct_points;
            out.resolution = Resolution::MachineCorrect;
        } else {
            out.machine_points = rules.wrong_penalty;
            out.opponent_points = rules.bounce_points;
            out.opponent_buzz = Some(record.position);
            out.resolution = Resolution::MachineWrong;
        }
        return Ok(out);
    }

    out.opponent_buzz = Some(record.position);
    if record.result {
        out.opponent_points = rules.correct_points;
        out.resolution = Resolution::OpponentCorrect;
        return Ok(out);
    }
    out.opponent_points = rules.wrong_penalty;
    let answer_pos = first_buzz.unwrap_or(stream.len());
    out.machine_buzz = Some(stream.words_at(answer_pos));
    if top_correct(stream, answer_pos) {
        out.machine_points = rules.bounce_points;
        out.resolution = Resolution::OpponentWrongMachineCorrect;
    } else {
        out.resolution = Resolution::OpponentWrongMachineWrong;
    }
    Ok(out)
}

/// [`simulate_vs_record`] with decisions from a trained buzzer.
pub fn simulate_buzzer_vs_record(
    stream: &GuessStream,
    buzzer: &BuzzerModel,
    record: &GameplayRecord,
    rules: &ScoreRules,
) -> Result<QuestionOutcome> {
    simulate_vs_record(stream, &buzzer.decisions(stream)?, record, rules)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub pairs: usize,
    pub mean_machine_points: f64,
    /// Share of pairs where the machine outscored the opponent.
    pub win_rate: f64,
}

pub fn aggregate_score(outcomes: &[QuestionOutcome]) -> Result<ScoreSummary> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("no simulated outcomes to aggregate".into()));
    }
    let n = outcomes.len() as f64;
    Ok(ScoreSummary {
        pairs: outcomes.len(),
        mean_machine_points: outcomes.iter().map(|o| o.machine_points as f64).sum::<f64>() / n,
        win_rate: outcomes
            .iter()
            .filter(|o| o.machine_points > o.opponent_points)
            .count() as f64
            / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Win,
    /// The machine buzzed before its guess was right.
    TooEarly,
    /// The opponent got there first, or the machine never buzzed.
    TooLate,
}

impl OutcomeClass {
    pub fn of(outcome: &QuestionOutcome) -> Self {
        match outcome.resolution {
            Resolution::MachineCorrect | Resolution::OpponentWrongMachineCorrect => OutcomeClass::Win,
            Resolution::MachineWrong => OutcomeClass::TooEarly,
            _ => OutcomeClass::TooLate,
        }
    }
}

/// A question is winnable against a record when the top guess is correct at
/// some position revealed before the opponent's correct answer (or at any
/// position when the opponent missed).
pub fn is_possible(stream: &GuessStream, record: &GameplayRecord) -> bool {
    let deadline = if record.result {
        record.position
    } else {
        stream.word_count + 1
    };
    (1..=stream.len()).any(|p| stream.words_at(p) < deadline && stream.correct_at(p))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PossibilityBreakdown {
    pub possible: BTreeMap<OutcomeClass, usize>,
    pub impossible: BTreeMap<OutcomeClass, usize>,
}

impl PossibilityBreakdown {
    pub fn add(&mut self, possible: bool, outcome: &QuestionOutcome) {
        let side = if possible {
            &mut self.possible
        } else {
            &mut self.impossible
        };
        *side.entry(OutcomeClass::of(outcome)).or_default() += 1;
    }
}

/// Everything written to `match_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub rules: ScoreRules,
    /// Mean machine points per simulated (question, record) pair; a defined
    /// stand-in since no canonical per-question score exists.
    pub summary: ScoreSummary,
    pub breakdown: PossibilityBreakdown,
    pub resolutions: BTreeMap<Resolution, usize>,
    pub outcomes: Vec<QuestionOutcome>,
}

/// Simulates every record whose question has a stream. Records whose
/// question is missing are skipped; the count is returned alongside.
pub fn simulate_records(
    streams: &HashMap<u64, GuessStream>,
    buzzer: &BuzzerModel,
    records: &[(u64, GameplayRecord)],
    rules: &ScoreRules,
) -> Result<(MatchReport, usize)> {
    let mut decisions: HashMap<u64, Vec<bool>> = HashMap::new();
    let mut outcomes = Vec::new();
    let mut breakdown = PossibilityBreakdown::default();
    let mut skipped = 0;
    for (qid, record) in records {
        let Some(stream) = streams.get(qid) else {
            skipped += 1;
            continue;
        };
        if !decisions.contains_key(qid) {
            decisions.insert(*qid, buzzer.decisions(stream)?);
        }
        let o = simulate_vs_record(stream, &decisions[qid], record, rules)?;
        breakdown.add(is_possible(stream, record), &o);
        outcomes.push(o);
    }
    let mut resolutions = BTreeMap::new();
    for o in &outcomes {
        *resolutions.entry(o.resolution).or_default() += 1;
    }
    Ok((
        MatchReport {
            rules: *rules,
            summary: aggregate_score(&outcomes)?,
            breakdown,
            resolutions,
            outcomes,
        },
        skipped,
    ))
}

/// One machine in a machine-vs-machine match.
pub struct MachineSide<'a> {
    pub name: String,
    pub streams: &'a HashMap<u64, GuessStream>,
    pub buzzer: &'a BuzzerModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineQuestion {
    pub qanta_id: u64,
    pub points_a: i32,
    pub points_b: i32,
    pub buzz_a: Option<usize>,
    pub buzz_b: Option<usize>,
    /// Whether a coin flip decided who answered first.
    pub coin_flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineMatch {
    pub name_a: String,
    pub name_b: String,
    pub questions: Vec<MachineQuestion>,
    pub total_a: i32,
    pub total_b: i32,
    /// `None` on a tie.
    pub winner: Option<String>,
}

/// Plays `packet` between two machines. The earlier buzz (in words) answers
/// first; exact ties go to a fair coin seeded by `seed`. A wrong first
/// answer costs the penalty and the other side answers with its final guess.
pub fn simulate_machine_match(
    a: &MachineSide,
    b: &MachineSide,
    packet: &[u64],
    rules: &ScoreRules,
    seed: u64,
) -> Result<MachineMatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut questions = Vec::with_capacity(packet.len());
    for &qid in packet {
        let sa = a
            .streams
            .get(&qid)
            .ok_or_else(|| Error::InvalidInput(format!("{} has no stream for question {qid}", a.name)))?;
        let sb = b
            .streams
            .get(&qid)
            .ok_or_else(|| Error::InvalidInput(format!("{} has no stream for question {qid}", b.name)))?;
        let ba = a.buzzer.first_buzz(sa)?;
        let bb = b.buzzer.first_buzz(sb)?;
        let wa = ba.map(|p| sa.words_at(p));
        let wb = bb.map(|p| sb.words_at(p));
        let mut q = MachineQuestion {
            qanta_id: qid,
            points_a: 0,
            points_b: 0,
            buzz_a: None,
            buzz_b: None,
            coin_flip: false,
        };
        let a_first = match (wa, wb) {
            (None, None) => {
                questions.push(q);
                continue;
            }
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(x), Some(y)) if x != y => x < y,
            _ => {
                q.coin_flip = true;
                rng.gen::<bool>()
            }
        };
        let (first, first_pos, second) = if a_first {
            (sa, ba.unwrap(), sb)
        } else {
            (sb, bb.unwrap(), sa)
        };
        let (p_first, p_second) = if first.correct_at(first_pos) {
            (rules.correct_points, 0)
        } else if second.correct_at(second.len()) {
            (rules.wrong_penalty, rules.bounce_points)
        } else {
            (rules.wrong_penalty, 0)
        };
        let second_answered = !first.correct_at(first_pos);
        if a_first {
            q.points_a = p_first;
            q.points_b = p_second;
            q.buzz_a = wa;
            q.buzz_b = second_answered.then_some(sb.word_count);
        } else {
            q.points_b = p_first;
            q.points_a = p_second;
            q.buzz_b = wb;
            q.buzz_a = second_answered.then_some(sa.word_count);
        }
        questions.push(q);
    }
    let total_a: i32 = questions.iter().map(|q| q.points_a).sum();
    let total_b: i32 = questions.iter().map(|q| q.points_b).sum();
    let winner = match total_a.cmp(&total_b) {
        std::cmp::Ordering::Greater => Some(a.name.clone()),
        std::cmp::Ordering::Less => Some(b.name.clone()),
        std::cmp::Ordering::Equal => None,
    };
    Ok(MachineMatch {
        name_a: a.name.clone(),
        name_b: b.name.clone(),
        questions,
        total_a,
        total_b,
        winner,
    })
}
