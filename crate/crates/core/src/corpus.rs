//! Question and gameplay datasets: loading, cleanup, sentence spans,
//! de-duplication and the first-play gameplay filter.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, FixedOffset, NaiveDateTime};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Players with fewer distinct questions than this are dropped by
/// [`filter_gameplay`].
pub const MIN_QUESTIONS_PER_PLAYER: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Guesstrain,
    Buzztrain,
    Guessdev,
    Buzzdev,
    Guesstest,
    Buzztest,
    #[default]
    Unassigned,
}

impl Fold {
    pub const ALL: [Fold; 7] = [
        Fold::Guesstrain,
        Fold::Buzztrain,
        Fold::Guessdev,
        Fold::Buzzdev,
        Fold::Guesstest,
        Fold::Buzztest,
        Fold::Unassigned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fold::Guesstrain => "guesstrain",
            Fold::Buzztrain => "buzztrain",
            Fold::Guessdev => "guessdev",
            Fold::Buzzdev => "buzzdev",
            Fold::Guesstest => "guesstest",
            Fold::Buzztest => "buzztest",
            Fold::Unassigned => "unassigned",
        }
    }

    pub fn is_train(self) -> bool {
        matches!(self, Fold::Guesstrain | Fold::Buzztrain)
    }

    pub fn is_eval(self) -> bool {
        matches!(
            self,
            Fold::Guessdev | Fold::Buzzdev | Fold::Guesstest | Fold::Buzztest
        )
    }
}

impl std::str::FromStr for Fold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fold::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown fold {s:?}")))
    }
}

impl std::fmt::Display for Fold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A character-offset span `[start, end)` into a question's text.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qanta_id: u64,
    pub text: String,
    #[serde(rename = "answer")]
    pub raw_answer: String,
    #[serde(default)]
    pub page: Option<String>,
    #[serde(default)]
    pub fold: Fold,
    #[serde(default)]
    pub tournament: String,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub championship: bool,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub subcategory: Option<String>,
    #[serde(default)]
    pub proto_id: Option<String>,
    #[serde(rename = "tokenizations", default)]
    pub sentence_spans: Vec<Span>,
}

impl QuestionRecord {
    pub fn new(qanta_id: u64, text: impl Into<String>, raw_answer: impl Into<String>) -> Self {
        let text = text.into();
        let sentence_spans = sentence_spans(&text);
        QuestionRecord {
            qanta_id,
            text,
            raw_answer: raw_answer.into(),
            page: None,
            fold: Fold::Unassigned,
            tournament: String::new(),
            year: None,
            championship: false,
            category: None,
            subcategory: None,
            proto_id: None,
            sentence_spans,
        }
    }

    pub fn word_count(&self) -> usize {
        word_count(&self.text)
    }

    /// Text of each sentence, sliced by character offsets.
    pub fn sentences(&self) -> Vec<String> {
        let chars: Vec<char> = self.text.chars().collect();
        self.sentence_spans
            .iter()
            .map(|&(s, e)| chars[s.min(chars.len())..e.min(chars.len())].iter().collect())
            .collect()
    }

    /// Number of whitespace-delimited words up to the end of the first sentence.
    pub fn first_sentence_words(&self) -> usize {
        match self.sentence_spans.first() {
            Some(&(_, end)) => {
                let prefix: String = self.text.chars().take(end).collect();
                word_count(&prefix)
            }
            None => self.word_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameplayRecord {
    pub date: String,
    pub uid: String,
    pub qid: String,
    pub position: usize,
    pub guess: String,
    pub result: bool,
    pub question_text: String,
}

impl GameplayRecord {
    pub fn parsed_date(&self) -> Option<DateTime<FixedOffset>> {
        parse_play_date(&self.date)
    }

    pub fn word_count(&self) -> usize {
        word_count(&self.question_text)
    }
}

/// Whitespace-delimited words; the unit gameplay positions count in.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Parses both the browser `Date.toString()` form found in gameplay dumps
/// ("Thu Oct 29 2015 08:55:37 GMT-0400 (EDT)") and ISO-8601.
pub fn parse_play_date(raw: &str) -> Option<DateTime<FixedOffset>> {
    let trimmed = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(trimmed) {
        return Some(dt);
    }
    if let Ok(naive) = NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%dT%H:%M:%S%.f") {
        return Some(naive.and_utc().fixed_offset());
    }
    let without_zone_name = match trimmed.rfind(" (") {
        Some(idx) if trimmed.ends_with(')') => &trimmed[..idx],
        _ => trimmed,
    };
    DateTime::parse_from_str(without_zone_name, "%a %b %d %Y %H:%M:%S GMT%z").ok()
}

fn artifact_patterns() -> &'static [Regex] {
    static PATTERNS: OnceLock<Vec<Regex>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            r"(?i)\bmoderator(?:'s)?\s+note\s*:[^.!?]*[.!?]?",
            r"(?i)\(?\bdescription\s+(?:required|acceptable)\b\.?\)?",
            r"(?i)\b\d+\s*pts?\s*:",
            r"\(\*\)",
        ]
        .iter()
        .map(|p| Regex::new(p).expect("static regex"))
        .collect()
    })
}

/// Removes moderator/organizer artifacts and normalizes whitespace.
pub fn clean_text(text: &str) -> String {
    let mut out = text.to_string();
    for re in artifact_patterns() {
        out = re.replace_all(&out, " ").into_owned();
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

const ABBREVIATIONS: &[&str] = &[
    "Mr", "Mrs", "Ms", "Dr", "St", "Jr", "Sr", "Mt", "Ft", "vs", "Prof", "Gen", "Col", "Lt",
    "Capt", "Sgt", "Rev", "Gov", "Sen", "Rep",
];

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '»')
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '“' | '‘' | '«')
}

fn is_abbreviation(chars: &[char], period: usize) -> bool {
    let mut start = period;
    while start > 0 && !chars[start - 1].is_whitespace() {
        start -= 1;
    }
    let word: String = chars[start..period]
        .iter()
        .skip_while(|c| is_opening(**c))
        .collect();
    let mut it = word.chars();
    if let (Some(c), None) = (it.next(), it.next()) {
        // "A" and "I" are words in their own right, not initials.
        if c.is_uppercase() && c != 'A' && c != 'I' {
            return true;
        }
    }
    ABBREVIATIONS.contains(&word.as_str())
}

/// Deterministic rule-based sentence splitter.
///
/// A sentence ends at `.`, `?` or `!` (plus any closing quotes/brackets) when
/// followed by whitespace and an uppercase letter. Abbreviations such as
/// "Mr." and single-initial periods never end a sentence. Offsets are in
/// characters, and each span is trimmed of surrounding whitespace.
pub fn sentence_spans(text: &str) -> Vec<Span> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start = match chars.iter().position(|c| !c.is_whitespace()) {
        Some(s) => s,
        None => return spans,
    };

    let mut i = start;
    while i < n {
        let c = chars[i];
        if matches!(c, '.' | '?' | '!') && !(c == '.' && is_abbreviation(&chars, i)) {
            let mut end = i + 1;
            while end < n && is_closing(chars[end]) {
                end += 1;
            }
            let mut next = end;
            while next < n && chars[next].is_whitespace() {
                next += 1;
            }
            let mut letter = next;
            while letter < n && is_opening(chars[letter]) {
                letter += 1;
            }
            if next > end && letter < n && chars[letter].is_uppercase() {
                spans.push((start, end));
                start = next;
                i = next;
                continue;
            }
        }
        i += 1;
    }

    let last = chars
        .iter()
        .rposition(|c| !c.is_whitespace())
        .map(|p| p + 1)
        .unwrap_or(start);
    if last > start {
        spans.push((start, last));
    }
    spans
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Loads questions from JSON lines, strips moderator artifacts and fills in
/// sentence spans. File-provided spans are kept only when cleanup left the
/// text untouched, since they index into the original string.
pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut q: QuestionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(q.qanta_id) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("duplicate qanta_id {}", q.qanta_id),
            });
        }
        if let Some(year) = q.year {
            if year < 1997 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("year {year} predates the dataset"),
                });
            }
        }
        let cleaned = clean_text(&q.text);
        let spans_valid = cleaned == q.text && spans_within(&q.sentence_spans, cleaned.chars().count());
        q.text = cleaned;
        if !spans_valid || q.sentence_spans.is_empty() {
            q.sentence_spans = sentence_spans(&q.text);
        }
        out.push(q);
    }
    Ok(out)
}

fn spans_within(spans: &[Span], len: usize) -> bool {
    let mut prev_end = 0;
    spans.iter().all(|&(s, e)| {
        let ok = s >= prev_end && s < e && e <= len;
        prev_end = e;
        ok
    })
}

pub fn write_questions(path: impl AsRef<Path>, questions: &[QuestionRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), questions)
}

pub fn write_gameplay(path: impl AsRef<Path>, records: &[GameplayRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GameplayLoad {
    pub records: Vec<GameplayRecord>,
    /// Lines that were valid JSON but did not match the record schema.
    pub rejected_schema: usize,
    /// Records whose position was < 1 or past the end of the question text.
    pub rejected_position: usize,
}

/// Loads gameplay records verbatim. Syntax errors abort; schema violations
/// and impossible positions are counted and skipped.
pub fn load_gameplay(path: impl AsRef<Path>) -> Result<GameplayLoad> {
    let path = path.as_ref();
    let mut load = GameplayLoad::default();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        // Negative positions fail usize conversion; count them with the other bad positions.
        if value.get("position").and_then(|p| p.as_i64()).is_some_and(|p| p < 1) {
            load.rejected_position += 1;
            continue;
        }
        let record: GameplayRecord = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(_) => {
                load.rejected_schema += 1;
                continue;
            }
        };
        if record.position < 1 || record.position > record.word_count() {
            load.rejected_position += 1;
            continue;
        }
        load.records.push(record);
    }
    if load.rejected_schema + load.rejected_position > 0 {
        tracing::warn!(
            schema = load.rejected_schema,
            position = load.rejected_position,
            "rejected gameplay records"
        );
    }
    Ok(load)
}

type DateKey = (bool, i64, u32);

fn date_key(record: &GameplayRecord) -> DateKey {
    match record.parsed_date() {
        Some(dt) => (false, dt.timestamp(), dt.timestamp_subsec_nanos()),
        None => (true, 0, 0),
    }
}

/// Keeps each player's first play of each question, then drops players with
/// fewer than [`MIN_QUESTIONS_PER_PLAYER`] questions. Output is ordered by
/// `(uid, date)`; equal dates keep input order.
pub fn filter_gameplay(records: &[GameplayRecord]) -> Vec<GameplayRecord> {
    let mut order: Vec<(usize, DateKey)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (i, date_key(r)))
        .collect();
    order.sort_by(|a, b| {
        records[a.0]
            .uid
            .cmp(&records[b.0].uid)
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });

    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let firsts: Vec<usize> = order
        .into_iter()
        .filter(|&(i, _)| seen.insert((records[i].uid.as_str(), records[i].qid.as_str())))
        .map(|(i, _)| i)
        .collect();

    let mut per_uid: HashMap<&str, usize> = HashMap::new();
    for &i in &firsts {
        *per_uid.entry(records[i].uid.as_str()).or_default() += 1;
    }
    firsts
        .into_iter()
        .filter(|&i| per_uid[records[i].uid.as_str()] >= MIN_QUESTIONS_PER_PLAYER)
        .map(|i| records[i].clone())
        .collect()
}

/// Maps tournament-name variants onto one canonical spelling.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TournamentAliases {
    pub aliases: HashMap<String, String>,
}

impl TournamentAliases {
    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn apply(&self, questions: &mut [QuestionRecord]) {
        for q in questions {
            let canonical = self.canonical(&q.tournament).to_string();
            q.tournament = canonical;
        }
    }
}

/// Lowercased, punctuation stripped, whitespace collapsed.
pub fn normalize_for_dedup(text: &str) -> String {
    let stripped: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Collapses questions with equal normalized text within one
/// `(tournament, year)` to the record with the smallest `qanta_id`.
/// Output is sorted by `qanta_id`.
pub fn dedup_questions(records: Vec<QuestionRecord>) -> Vec<QuestionRecord> {
    let mut best: HashMap<(String, Option<i32>, String), QuestionRecord> = HashMap::new();
    for q in records {
        let key = (q.tournament.clone(), q.year, normalize_for_dedup(&q.text));
        match best.get(&key) {
            Some(existing) if existing.qanta_id <= q.qanta_id => {}
            _ => {
                best.insert(key, q);
            }
        }
    }
    let mut out: Vec<_> = best.into_values().collect();
    out.sort_by_key(|q| q.qanta_id);
    out
}

/// Immutable, indexed view over questions and their gameplay.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    questions: BTreeMap<u64, QuestionRecord>,
    word_counts: BTreeMap<u64, usize>,
    by_question: BTreeMap<u64, Vec<GameplayRecord>>,
    by_uid: BTreeMap<String, Vec<GameplayRecord>>,
    orphans: Vec<GameplayRecord>,
}

impl CorpusStore {
    /// Gameplay `qid`s are resolved through `proto_id`. Records whose `qid`
    /// matches no question, or more than one, go to the orphan table.
    pub fn new(questions: Vec<QuestionRecord>, gameplay: Vec<GameplayRecord>) -> Self {
        let mut proto: HashMap<String, Option<u64>> = HashMap::new();
        for q in &questions {
            if let Some(p) = &q.proto_id {
                proto
                    .entry(p.clone())
                    .and_modify(|slot| *slot = None)
                    .or_insert(Some(q.qanta_id));
            }
        }
        let mut store = CorpusStore {
            word_counts: questions.iter().map(|q| (q.qanta_id, q.word_count())).collect(),
            questions: questions.into_iter().map(|q| (q.qanta_id, q)).collect(),
            ..Default::default()
        };
        for record in gameplay {
            match proto.get(&record.qid).copied().flatten() {
                Some(id) => {
                    store
                        .by_uid
                        .entry(record.uid.clone())
                        .or_default()
                        .push(record.clone());
                    store.by_question.entry(id).or_default().push(record);
                }
                None => store.orphans.push(record),
            }
        }
        store
    }

    pub fn question(&self, qanta_id: u64) -> Option<&QuestionRecord> {
        self.questions.get(&qanta_id)
    }

    pub fn questions(&self) -> impl Iterator<Item = &QuestionRecord> {
        self.questions.values()
    }

    pub fn word_count(&self, qanta_id: u64) -> Option<usize> {
        self.word_counts.get(&qanta_id).copied()
    }

    pub fn gameplay_for(&self, qanta_id: u64) -> &[GameplayRecord] {
        self.by_question
            .get(&qanta_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn gameplay_by_player(&self, uid: &str) -> &[GameplayRecord] {
        self.by_uid.get(uid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn players(&self) -> impl Iterator<Item = &str> {
        self.by_uid.keys().map(String::as_str)
    }

    pub fn questions_with_gameplay(&self) -> HashSet<u64> {
        self.by_question.keys().copied().collect()
    }

    pub fn orphans(&self) -> &[GameplayRecord] {
        &self.orphans
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn play(uid: &str, qid: &str, date: &str) -> GameplayRecord {
        GameplayRecord {
            date: date.into(),
            uid: uid.into(),
            qid: qid.into(),
            position: 1,
            guess: "x".into(),
            result: true,
            question_text: "one two three".into(),
        }
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(sentence_spans("He ran. She won?"), vec![(0, 7), (8, 16)]);
        assert_eq!(sentence_spans("A. B."), vec![(0, 2), (3, 5)]);
    }

    #[test]
    fn empty_and_whitespace_text() {
        assert!(sentence_spans("").is_empty());
        assert!(sentence_spans("   \n").is_empty());
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(sentence_spans("Mr. Smith left.").len(), 1);
        assert_eq!(sentence_spans("Works by J. S. Bach. He died.").len(), 2);
        assert_eq!(sentence_spans("Kramer vs. Kramer won. It is sad.").len(), 2);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(sentence_spans("It was 3. and then more.").len(), 1);
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        let text = "He said \"Go.\" She went.";
        let spans = sentence_spans(text);
        assert_eq!(spans, vec![(0, 13), (14, 23)]);
    }

    #[test]
    fn cleans_moderator_notes() {
        let cleaned = clean_text("This hero MODERATOR NOTE: read slowly. slew a boar (*) for 10 points.");
        assert_eq!(cleaned, "This hero slew a boar for 10 points.");
        assert_eq!(clean_text("15 pts: name this city."), "name this city.");
    }

    #[test]
    fn parses_both_date_formats() {
        let a = parse_play_date("Thu Oct 29 2015 08:55:37 GMT-0400 (EDT)").unwrap();
        let b = parse_play_date("2015-10-29T12:55:37Z").unwrap();
        assert_eq!(a, b);
        assert!(parse_play_date("yesterday").is_none());
    }

    #[test]
    fn first_play_wins() {
        let mut records = vec![play("u", "q0", "2015-01-02T00:00:00Z"), play("u", "q0", "2015-01-01T00:00:00Z")];
        records[0].guess = "later".into();
        records.extend((1..20).map(|i| play("u", &format!("q{i}"), "2015-01-03T00:00:00Z")));
        let out = filter_gameplay(&records);
        assert_eq!(out.len(), 20);
        let q0: Vec<_> = out.iter().filter(|r| r.qid == "q0").collect();
        assert_eq!(q0.len(), 1);
        assert_eq!(q0[0].guess, "x");
    }

    #[test]
    fn players_below_twenty_questions_are_removed() {
        let records: Vec<_> = (0..19)
            .map(|i| play("light", &format!("q{i}"), "2015-01-01T00:00:00Z"))
            .collect();
        assert!(filter_gameplay(&records).is_empty());
    }

    #[test]
    fn dedup_keys_on_tournament_and_year() {
        let mut a = QuestionRecord::new(5, "Name this  city.", "x");
        a.tournament = "ACF Fall".into();
        a.year = Some(2014);
        let mut b = a.clone();
        b.qanta_id = 2;
        b.text = "Name this city. ".into();
        let mut c = a.clone();
        c.qanta_id = 9;
        c.year = Some(2015);
        let out = dedup_questions(vec![a, b, c]);
        assert_eq!(out.iter().map(|q| q.qanta_id).collect::<Vec<_>>(), vec![2, 9]);
    }

    #[test]
    fn store_routes_unknown_qids_to_orphans() {
        let mut q = QuestionRecord::new(1, "one two three", "x");
        q.proto_id = Some("p1".into());
        let store = CorpusStore::new(vec![q], vec![play("u", "p1", ""), play("u", "zz", "")]);
        assert_eq!(store.gameplay_for(1).len(), 1);
        assert_eq!(store.orphans().len(), 1);
        assert_eq!(store.word_count(1), Some(3));
    }
}
