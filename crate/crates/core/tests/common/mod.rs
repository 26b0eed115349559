#![allow(dead_code)]

use qb_core::guesser::{Guess, GuessStream};

pub const GOLD: &str = "Gold";

pub fn guess(answer: &str, p: f64) -> Guess {
    Guess {
        answer: answer.to_string(),
        score: p,
        probability: p,
    }
}

/// Step-1 stream whose top guess is `Gold` exactly where `correct` is true.
/// Each position carries five guesses with descending probabilities.
pub fn stream_from_pattern(qanta_id: u64, correct: &[bool]) -> GuessStream {
    let positions = correct
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let top = if c { GOLD.to_string() } else { format!("Wrong{}", i % 3) };
            let mut list = vec![guess(&top, 0.5)];
            for (r, p) in [0.2, 0.15, 0.1, 0.05].into_iter().enumerate() {
                let name = if c || r > 0 { format!("Other{r}") } else { GOLD.to_string() };
                list.push(guess(&name, p));
            }
            list
        })
        .collect();
    GuessStream {
        qanta_id,
        answer: GOLD.to_string(),
        step_size: 1,
        k: 5,
        word_count: correct.len(),
        positions,
    }
}

/// Step-1 stream from explicit per-position `(top answer, probabilities)`.
pub fn stream_from_lists(qanta_id: u64, lists: Vec<Vec<Guess>>) -> GuessStream {
    GuessStream {
        qanta_id,
        answer: GOLD.to_string(),
        step_size: 1,
        k: lists.first().map_or(5, Vec::len),
        word_count: lists.len(),
        positions: lists,
    }
}

/// Every boolean sequence of length `n`, in binary counting order.
pub fn all_patterns(n: usize) -> Vec<Vec<bool>> {
    (0..1u32 << n)
        .map(|m| (0..n).map(|i| m >> i & 1 == 1).collect())
        .collect()
}
