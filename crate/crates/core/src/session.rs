//! Live human-vs-machine play: a per-match state machine driven by ticks
//! (one revealed word each), human buzzes and answers.
//!
//! Score deltas for a question are held as pending until the question
//! resolves, then committed to the scoreboard in one step.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::buzzer::BuzzerModel;
use crate::corpus::{self, QuestionRecord};
use crate::error::{Error, Result};
use crate::guesser::{tokenize, Guess, GuessStream, Guesser, GuesserModel};
use crate::simulate::ScoreRules;

/// Alias table keyed by canonical title.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    #[serde(default)]
    pub aliases: BTreeMap<String, Vec<String>>,
}

impl JudgeConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn strip_trailing_parentheticals(mut s: &str) -> &str {
    loop {
        let t = s.trim_end();
        if t.ends_with(')') {
            if let Some(open) = t.rfind('(') {
                s = &t[..open];
                continue;
            }
        }
        return t;
    }
}

/// Lowercase, strip diacritics, underscores to spaces, drop trailing
/// parentheticals, remove punctuation, collapse whitespace and drop one
/// leading article.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .collect::<String>()
        .to_lowercase()
        .replace('_', " ");
    let core = strip_trailing_parentheticals(&lowered);
    let cleaned: String = core
        .chars()
        .filter(|c| *c != '\'' && *c != '\u{2019}')
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let words = match words.split_first() {
        Some((first, rest)) if !rest.is_empty() && matches!(*first, "the" | "a" | "an") => rest,
        _ => &words[..],
    };
    words.join(" ")
}

/// Exact match after normalisation, against the title or any alias.
pub fn judge_answer(given: &str, canonical: &str, cfg: &JudgeConfig) -> bool {
    let g = normalize_answer(given);
    if g.is_empty() {
        return false;
    }
    g == normalize_answer(canonical)
        || cfg
            .aliases
            .get(canonical)
            .is_some_and(|al| al.iter().any(|a| normalize_answer(a) == g))
}

/// Guesser and buzzer shared by every session.
#[derive(Debug)]
pub struct MachineAgent {
    pub guesser: GuesserModel,
    pub buzzer: BuzzerModel,
    /// Guesses kept per position; at least 5 for feature-based buzzers.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionQuestion {
    pub qanta_id: u64,
    pub text: String,
    pub answer: String,
}

impl SessionQuestion {
    pub fn from_record(q: &QuestionRecord) -> Option<Self> {
        Some(SessionQuestion {
            qanta_id: q.qanta_id,
            text: q.text.clone(),
            answer: q.page.clone()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Revealing,
    AwaitingAnswer,
    Resolved,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientEvent {
    /// Reveal the next word (server timer).
    Tick,
    Buzz { position: usize },
    Answer { text: String },
    Next,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopGuess {
    pub answer: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    Word {
        index: usize,
        token: String,
    },
    MachineBuzz {
        position: usize,
        guess: String,
        correct: bool,
    },
    /// Verdict on the human's answer.
    Judged {
        correct: bool,
    },
    /// Question resolved; points are this question's deltas.
    Result {
        correct_answer: String,
        machine_points: i32,
        human_points: i32,
        top5: Vec<TopGuess>,
    },
    Score {
        human: i32,
        machine: i32,
        question: usize,
        questions: usize,
    },
    Finished {
        human: i32,
        machine: i32,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoreboard {
    pub session_id: String,
    pub state: SessionState,
    pub human: i32,
    pub machine: i32,
    /// 1-based index of the current question.
    pub question: usize,
    pub questions: usize,
    pub revealed: usize,
}

pub struct MatchSession {
    id: String,
    agent: Arc<MachineAgent>,
    judge: Arc<JudgeConfig>,
    rules: ScoreRules,
    questions: Vec<SessionQuestion>,
    current: usize,
    words: Vec<String>,
    cursor: usize,
    state: SessionState,
    human: i32,
    machine: i32,
    pending_human: i32,
    pending_machine: i32,
    human_buzzed: bool,
    human_locked: bool,
    machine_locked: bool,
    stream: GuessStream,
}

impl MatchSession {
    pub fn new(
        id: impl Into<String>,
        questions: Vec<SessionQuestion>,
        agent: Arc<MachineAgent>,
        judge: Arc<JudgeConfig>,
        rules: ScoreRules,
    ) -> Result<Self> {
        if questions.is_empty() {
            return Err(Error::InvalidInput("a match needs at least one question".into()));
        }
        if agent.k == 0 {
            return Err(Error::Config("agent k must be at least 1".into()));
        }
        let mut s = MatchSession {
            id: id.into(),
            agent,
            judge,
            rules,
            questions,
            current: 0,
            words: Vec::new(),
            cursor: 0,
            state: SessionState::Revealing,
            human: 0,
            machine: 0,
            pending_human: 0,
            pending_machine: 0,
            human_buzzed: false,
            human_locked: false,
            machine_locked: false,
            stream: GuessStream {
                qanta_id: 0,
                answer: String::new(),
                step_size: 1,
                k: 0,
                word_count: 0,
                positions: Vec::new(),
            },
        };
        s.load_question();
        Ok(s)
    }

    fn load_question(&mut self) {
        let q = &self.questions[self.current];
        self.words = corpus::words(&q.text).map(str::to_string).collect();
        self.cursor = 0;
        self.pending_human = 0;
        self.pending_machine = 0;
        self.human_buzzed = false;
        self.human_locked = false;
        self.machine_locked = false;
        self.stream = GuessStream {
            qanta_id: q.qanta_id,
            answer: q.answer.clone(),
            step_size: 1,
            k: self.agent.k,
            word_count: self.words.len(),
            positions: Vec::new(),
        };
        self.state = SessionState::Revealing;
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn scoreboard(&self) -> Scoreboard {
        Scoreboard {
            session_id: self.id.clone(),
            state: self.state,
            human: self.human,
            machine: self.machine,
            question: self.current + 1,
            questions: self.questions.len(),
            revealed: self.cursor,
        }
    }

    /// Applies one event. An event that is invalid in the current state
    /// yields a single error event and leaves the session unchanged.
    pub fn step(&mut self, event: &ClientEvent) -> Vec<ServerEvent> {
        match (self.state, event) {
            (SessionState::Revealing, ClientEvent::Tick) => self.tick(),
            (SessionState::Revealing, ClientEvent::Buzz { position }) => {
                if self.human_buzzed {
                    return error("already buzzed on this question");
                }
                if *position > self.cursor {
                    return error(&format!("buzz at word {position} but only {} revealed", self.cursor));
                }
                self.human_buzzed = true;
                self.state = SessionState::AwaitingAnswer;
                Vec::new()
            }
            (SessionState::AwaitingAnswer, ClientEvent::Answer { text }) => self.human_answer(text),
            (SessionState::Resolved, ClientEvent::Next) => {
                if self.current + 1 >= self.questions.len() {
                    self.state = SessionState::Finished;
                    vec![ServerEvent::Finished {
                        human: self.human,
                        machine: self.machine,
                    }]
                } else {
                    self.current += 1;
                    self.load_question();
                    Vec::new()
                }
            }
            (state, ev) => error(&format!("{ev:?} is not valid while {state:?}")),
        }
    }

    fn question(&self) -> &SessionQuestion {
        &self.questions[self.current]
    }

    /// Guesses for the currently revealed prefix, computed once per word.
    fn refresh_guesses(&mut self) {
        while self.stream.positions.len() < self.cursor {
            let n = self.stream.positions.len() + 1;
            let tokens = tokenize(&self.words[..n].join(" "));
            let guesses = self.agent.guesser.guess_tokens(&tokens, self.agent.k);
            self.stream.positions.push(guesses);
        }
    }

    fn top_guess(&self) -> Option<&Guess> {
        self.stream.positions.last().and_then(|p| p.first())
    }

    fn tick(&mut self) -> Vec<ServerEvent> {
        if self.cursor == self.words.len() {
            return self.end_of_question();
        }
        self.cursor += 1;
        let mut events = vec![ServerEvent::Word {
            index: self.cursor,
            token: self.words[self.cursor - 1].clone(),
        }];
        if self.machine_locked {
            return events;
        }
        self.refresh_guesses();
        let buzz = match self.agent.buzzer.decide_at(&self.stream, self.cursor) {
            Ok(b) => b,
            Err(e) => {
                events.push(ServerEvent::Error { message: e.to_string() });
                false
            }
        };
        if buzz {
            events.extend(self.machine_answer(true));
        }
        events
    }

    /// The machine answers with its current top guess. An interrupting
    /// buzz risks the penalty; an answer after the human's miss or at the
    /// end of the question does not.
    fn machine_answer(&mut self, interrupting: bool) -> Vec<ServerEvent> {
        let guess = self.top_guess().map(|g| g.answer.clone()).unwrap_or_default();
        let correct = !guess.is_empty() && guess == self.question().answer;
        let mut events = vec![ServerEvent::MachineBuzz {
            position: self.cursor,
            guess,
            correct,
        }];
        self.machine_locked = true;
        if correct {
            self.pending_machine += if self.human_locked {
                self.rules.bounce_points
            } else {
                self.rules.correct_points
            };
            events.extend(self.resolve());
        } else {
            if interrupting && !self.human_locked {
                self.pending_machine += self.rules.wrong_penalty;
            }
            if self.human_locked || self.cursor == self.words.len() && !interrupting {
                events.extend(self.resolve());
            }
        }
        events
    }

    fn human_answer(&mut self, text: &str) -> Vec<ServerEvent> {
        let correct = judge_answer(text, &self.question().answer, &self.judge);
        let mut events = vec![ServerEvent::Judged { correct }];
        self.human_locked = true;
        if correct {
            self.pending_human += if self.machine_locked {
                self.rules.bounce_points
            } else {
                self.rules.correct_points
            };
            events.extend(self.resolve());
        } else {
            if !self.machine_locked {
                self.pending_human += self.rules.wrong_penalty;
            }
            if self.machine_locked {
                events.extend(self.resolve());
            } else {
                self.state = SessionState::Revealing;
            }
        }
        events
    }

    fn end_of_question(&mut self) -> Vec<ServerEvent> {
        if self.machine_locked {
            return self.resolve();
        }
        self.refresh_guesses();
        let mut events = self.machine_answer(false);
        if self.state != SessionState::Resolved {
            events.extend(self.resolve());
        }
        events
    }

    fn resolve(&mut self) -> Vec<ServerEvent> {
        self.refresh_guesses();
        let top5 = self
            .stream
            .positions
            .last()
            .map(|p| {
                p.iter()
                    .take(5)
                    .map(|g| TopGuess {
                        answer: g.answer.clone(),
                        prob: g.probability,
                    })
                    .collect()
            })
            .unwrap_or_default();
        self.human += self.pending_human;
        self.machine += self.pending_machine;
        let events = vec![
            ServerEvent::Result {
                correct_answer: self.question().answer.clone(),
                machine_points: self.pending_machine,
                human_points: self.pending_human,
                top5,
            },
            ServerEvent::Score {
                human: self.human,
                machine: self.machine,
                question: self.current + 1,
                questions: self.questions.len(),
            },
        ];
        self.pending_human = 0;
        self.pending_machine = 0;
        self.state = SessionState::Resolved;
        events
    }
}

fn error(message: &str) -> Vec<ServerEvent> {
    vec![ServerEvent::Error {
        message: message.to_string(),
    }]
}
