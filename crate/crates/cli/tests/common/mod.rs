#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

pub const ANSWERS: usize = 6;
const CUES: usize = 10;
const FILLER: [&str; 8] = ["this", "work", "one", "its", "author", "that", "figure", "described"];

fn cue(answer: usize, j: usize) -> String {
    format!("cue{answer}w{j}")
}

pub fn title(answer: usize) -> String {
    format!("Answer_{answer}")
}

/// Small linear congruential generator so fixtures need no extra crates.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }

    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }
}

/// Three sentences; cue density rises from the first to the last sentence.
pub fn question_text(answer: usize, rng: &mut Lcg) -> String {
    let mut sentences = Vec::new();
    for (len, cues) in [(8, 2), (8, 4), (6, 4)] {
        let mut words: Vec<String> = (0..len - cues).map(|_| FILLER[rng.below(FILLER.len())].to_string()).collect();
        for _ in 0..cues {
            let at = rng.below(words.len() + 1);
            words.insert(at, cue(answer, rng.below(CUES)));
        }
        sentences.push(words.join(" "));
    }
    format!("{}. {}. For ten points, name {}.", sentences[0], sentences[1], sentences[2])
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Raw questions, gameplay, titles and a fast pipeline config.
///
/// Club questions (2010-2014) feed the train folds; championship questions
/// from 2015, 2016 and 2017 land in dev, buzztest and guesstest. One
/// question duplicates another and one answer has no title.
pub fn build_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Lcg::new(7);
    let mut questions = Vec::new();
    let mut id = 0u64;
    let mut push = |tournament: &str, year: i32, answer: usize, rng: &mut Lcg, questions: &mut Vec<serde_json::Value>| {
        id += 1;
        questions.push(json!({
            "qanta_id": id,
            "text": question_text(answer, rng),
            "answer": format!("Answer {answer}"),
            "tournament": tournament,
            "year": year,
            "proto_id": format!("p{id}"),
        }));
    };
    for year in 2010..2015 {
        for rep in 0..8 {
            for a in 0..ANSWERS {
                push(if rep % 2 == 0 { "Club Open" } else { "club open" }, year, a, &mut rng, &mut questions);
            }
        }
    }
    for year in [2015, 2016, 2017] {
        for _ in 0..2 {
            for a in 0..ANSWERS {
                push("ACF Regionals", year, a, &mut rng, &mut questions);
            }
        }
    }
    let mut dup = questions[0].clone();
    dup["qanta_id"] = json!(100_000);
    dup["proto_id"] = json!("dup");
    questions.push(dup);
    questions.push(json!({
        "qanta_id": 100_001,
        "text": "Name this thing nobody has a page for.",
        "answer": "Nonexistent thing",
        "tournament": "Club Open",
        "year": 2012,
    }));
    write_lines(&dir.path().join("raw_questions.jsonl"), &questions);

    let mut plays = Vec::new();
    for uid in ["u1", "u2", "u3", "u4"] {
        for q in &questions {
            let Some(proto) = q.get("proto_id") else { continue };
            let words = q["text"].as_str().unwrap().split_whitespace().count();
            plays.push(json!({
                "date": "2015-10-29T08:55:37+00:00",
                "uid": uid,
                "qid": proto,
                "position": 1 + rng.below(words),
                "guess": "x",
                "result": rng.below(2) == 0,
                "question_text": q["text"],
            }));
        }
    }
    write_lines(&dir.path().join("raw_gameplay.jsonl"), &plays);

    let titles: Vec<String> = (0..ANSWERS).map(title).collect();
    std::fs::write(dir.path().join("titles.txt"), titles.join("\n")).unwrap();
    std::fs::write(
        dir.path().join("config.json"),
        json!({
            "tournament_aliases": {"aliases": {"club open": "Club Open"}},
            "linear": {"epochs": 5},
            "dan": {"embedding_dim": 16, "hidden_dim": 16, "max_epochs": 8, "learning_rate": 0.01},
            "buzzer": {"epochs": 5, "hidden": 16},
        })
        .to_string(),
    )
    .unwrap();
    Fixture { dir }
}

pub fn write_lines(path: &Path, values: &[serde_json::Value]) {
    let mut f = std::fs::File::create(path).unwrap();
    for v in values {
        writeln!(f, "{v}").unwrap();
    }
}

pub fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn qb(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qb"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn qb")
}

/// Runs `qb` and panics with its stderr on failure.
pub fn qb_ok(cwd: &Path, args: &[&str]) -> String {
    let out = qb(cwd, args);
    assert!(
        out.status.success(),
        "qb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}
