//! Maps raw moderator answer lines onto canonical knowledge-base titles.
//!
//! Mapping runs in two phases. [`expand_answer`] turns quizbowl answer
//! notation (`{required part}`, `[or alternate]`, `(accept ...)`) into plain
//! variant strings; [`match_answer`] then consults, in precedence order, the
//! hand-annotated rule tiers followed by exact-title and redirect lookups.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Fold, QuestionRecord};
use crate::error::{Error, Result};

/// Lowercased, underscores as spaces, whitespace collapsed.
pub fn normalize_title(s: &str) -> String {
    s.replace('_', " ")
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct TitleSet {
    titles: HashMap<String, String>,
    redirects: HashMap<String, String>,
}

impl TitleSet {
    pub fn new<I, S>(titles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = TitleSet::default();
        for t in titles {
            set.add_title(t);
        }
        set
    }

    pub fn add_title(&mut self, title: impl Into<String>) {
        let title = title.into();
        self.titles.entry(normalize_title(&title)).or_insert(title);
    }

    /// Adds an alias. Returns false (and ignores it) when the target is not a
    /// known title.
    pub fn add_redirect(&mut self, alias: &str, target: &str) -> bool {
        match self.titles.get(&normalize_title(target)) {
            Some(canonical) => {
                let canonical = canonical.clone();
                self.redirects.insert(normalize_title(alias), canonical);
                true
            }
            None => false,
        }
    }

    pub fn exact(&self, variant: &str) -> Option<&str> {
        self.titles.get(&normalize_title(variant)).map(String::as_str)
    }

    pub fn redirect(&self, variant: &str) -> Option<&str> {
        self.redirects.get(&normalize_title(variant)).map(String::as_str)
    }

    pub fn contains(&self, title: &str) -> bool {
        self.exact(title).is_some()
    }

    pub fn len(&self) -> usize {
        self.titles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }

    /// Reads `titles.tsv` (one title per line) and optionally `redirects.tsv`
    /// (`alias<TAB>target`). Redirects to unknown titles are skipped and
    /// counted in the second return value.
    pub fn load(titles: &Path, redirects: Option<&Path>) -> Result<(Self, usize)> {
        let raw = fs::read_to_string(titles).map_err(|e| Error::io(titles, e))?;
        let mut set = TitleSet::new(raw.lines().map(str::trim).filter(|l| !l.is_empty()));
        let mut dangling = 0;
        if let Some(path) = redirects {
            let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (idx, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (alias, target) = line.split_once('\t').ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "expected alias<TAB>target".into(),
                })?;
                if !set.add_redirect(alias.trim(), target.trim()) {
                    dangling += 1;
                }
            }
        }
        Ok((set, dangling))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguousTarget {
    pub page: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MappingRules {
    #[serde(default)]
    pub unambiguous: BTreeMap<String, String>,
    #[serde(default)]
    pub ambiguous: BTreeMap<String, Vec<AmbiguousTarget>>,
    #[serde(default)]
    pub direct: BTreeMap<String, String>,
    #[serde(skip)]
    pub pool: Pool,
    #[serde(skip)]
    unambiguous_index: HashMap<String, String>,
    #[serde(skip)]
    ambiguous_index: HashMap<String, Vec<AmbiguousTarget>>,
}

impl MappingRules {
    pub fn empty(pool: Pool) -> Self {
        MappingRules {
            pool,
            ..Default::default()
        }
    }

    pub fn from_json(json: &str, pool: Pool) -> Result<Self> {
        let mut rules: MappingRules = serde_json::from_str(json)?;
        rules.pool = pool;
        rules.reindex()?;
        Ok(rules)
    }

    pub fn load(path: &Path, pool: Pool) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw, pool)
    }

    pub fn with_unambiguous(mut self, answer: &str, page: &str) -> Self {
        self.unambiguous.insert(answer.into(), page.into());
        self.reindex().expect("builder keeps tiers disjoint");
        self
    }

    pub fn with_ambiguous(mut self, answer: &str, targets: &[(&str, &[&str])]) -> Self {
        let list = targets
            .iter()
            .map(|(page, words)| AmbiguousTarget {
                page: page.to_string(),
                words: words.iter().map(|w| w.to_string()).collect(),
            })
            .collect();
        self.ambiguous.insert(answer.into(), list);
        self.reindex().expect("builder keeps tiers disjoint");
        self
    }

    pub fn with_direct(mut self, qanta_id: u64, page: &str) -> Self {
        self.direct.insert(qanta_id.to_string(), page.into());
        self
    }

    fn reindex(&mut self) -> Result<()> {
        self.unambiguous_index = self
            .unambiguous
            .iter()
            .map(|(k, v)| (normalize_title(k), v.clone()))
            .collect();
        self.ambiguous_index = self
            .ambiguous
            .iter()
            .map(|(k, v)| (normalize_title(k), v.clone()))
            .collect();
        if let Some(k) = self
            .unambiguous_index
            .keys()
            .find(|k| self.ambiguous_index.contains_key(*k))
        {
            return Err(Error::Config(format!(
                "answer string {k:?} is both unambiguous and ambiguous"
            )));
        }
        for key in self.direct.keys() {
            key.parse::<u64>().map_err(|_| {
                Error::Config(format!("direct mapping key {key:?} is not a qanta_id"))
            })?;
        }
        Ok(())
    }

    fn direct_for(&self, qanta_id: u64) -> Option<&str> {
        self.direct.get(&qanta_id.to_string()).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    Direct,
    Unambiguous,
    Ambiguous,
    Exact,
    Redirect,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub page: Option<String>,
    pub method: MatchMethod,
    pub edit_cost: usize,
    /// Set when an ambiguous rule left more than one candidate standing.
    #[serde(default)]
    pub conflict: bool,
}

impl MatchResult {
    fn none(conflict: bool) -> Self {
        MatchResult {
            page: None,
            method: MatchMethod::None,
            edit_cost: 0,
            conflict,
        }
    }
}

fn is_boilerplate(phrase: &str) -> bool {
    let lower = phrase.to_lowercase();
    ["equivalent", "prompt", "do not", "don't", "reasonable", "description", "specific", "until", "mentioned"]
        .iter()
        .any(|w| lower.contains(w))
}

/// Splits `s` at every top-level (outside any bracket) occurrence of `sep`.
fn split_top_level<'a>(s: &'a str, sep: &str) -> Vec<&'a str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut last = 0;
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < s.len() {
        match bytes[i] {
            b'{' | b'[' | b'(' => depth += 1,
            b'}' | b']' | b')' => depth -= 1,
            _ => {}
        }
        if depth == 0 && s.is_char_boundary(i) && s[i..].starts_with(sep) {
            parts.push(&s[last..i]);
            i += sep.len();
            last = i;
            continue;
        }
        i += 1;
    }
    parts.push(&s[last..]);
    parts
}

/// Pulls out top-level `open...close` groups, returning (text without groups, group contents).
fn extract_groups(s: &str, open: char, close: char) -> (String, Vec<String>) {
    let mut outside = String::new();
    let mut groups = Vec::new();
    let mut depth = 0;
    let mut current = String::new();
    for c in s.chars() {
        if c == open {
            if depth > 0 {
                current.push(c);
            }
            depth += 1;
        } else if c == close && depth > 0 {
            depth -= 1;
            if depth == 0 {
                groups.push(std::mem::take(&mut current));
            } else {
                current.push(c);
            }
        } else if depth > 0 {
            current.push(c);
        } else {
            outside.push(c);
        }
    }
    (outside, groups)
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_article(s: &str) -> Option<String> {
    ["The ", "the ", "A ", "a ", "An ", "an "]
        .iter()
        .find_map(|a| s.strip_prefix(a))
        .map(|rest| rest.trim().to_string())
        .filter(|rest| !rest.is_empty())
}

fn strip_alternate_keyword(s: &str) -> &str {
    let t = s.trim();
    for kw in ["or ", "accept ", "also accept "] {
        if t.len() >= kw.len() && t[..kw.len()].eq_ignore_ascii_case(kw) {
            return t[kw.len()..].trim();
        }
    }
    t
}

/// Variants of a single alternative (no brackets, no top-level "or").
fn piece_variants(piece: &str, out: &mut Vec<String>) {
    // Parenthesized text is either a moderator instruction (dropped) or an
    // optional word like "(The)" (kept both ways).
    let (without_parens, groups) = extract_groups(piece, '(', ')');
    let mut bases = vec![collapse(&without_parens)];
    if groups.iter().any(|g| !is_instruction(g)) {
        let mut kept = String::new();
        let mut depth = 0;
        let mut current = String::new();
        for c in piece.chars() {
            match c {
                '(' => {
                    depth += 1;
                    if depth > 1 {
                        current.push(c);
                    }
                }
                ')' if depth > 0 => {
                    depth -= 1;
                    if depth == 0 {
                        if !is_instruction(&current) {
                            kept.push_str(&current);
                        }
                        current.clear();
                    } else {
                        current.push(c);
                    }
                }
                _ if depth > 0 => current.push(c),
                _ => kept.push(c),
            }
        }
        bases.push(collapse(&kept));
    }

    for base in bases {
        if base.is_empty() {
            continue;
        }
        let (_, required) = extract_groups(&base, '{', '}');
        let unbraced = collapse(&base.replace(['{', '}'], ""));
        out.push(unbraced.clone());
        if let Some(s) = strip_article(&unbraced) {
            out.push(s);
        }
        for r in required {
            let r = collapse(&r);
            if !r.is_empty() {
                if let Some(s) = strip_article(&r) {
                    out.push(s);
                }
                out.push(r);
            }
        }
    }
}

fn is_instruction(group: &str) -> bool {
    let lower = group.trim().to_lowercase();
    lower.starts_with("accept")
        || lower.starts_with("prompt")
        || lower.starts_with("do not")
        || lower.starts_with("don't")
        || lower.starts_with("or ")
        || is_boilerplate(&lower)
}

/// Produces answer variants, the raw string first, the rest ordered by
/// increasing edit distance from it (generation order breaks ties).
pub fn expand_answer(raw: &str) -> Vec<String> {
    let mut generated = Vec::new();

    let (main, brackets) = extract_groups(raw, '[', ']');
    let mut alternatives: Vec<String> = split_top_level(&main, " or ")
        .into_iter()
        .map(collapse)
        .collect();
    for b in brackets {
        for part in b.split(';') {
            for alt in split_top_level(part, " or ") {
                let alt = strip_alternate_keyword(alt);
                if !alt.is_empty() && !is_boilerplate(alt) {
                    alternatives.push(alt.to_string());
                }
            }
        }
    }
    for alt in &alternatives {
        piece_variants(alt, &mut generated);
    }

    let mut seen = HashSet::new();
    seen.insert(raw.to_string());
    let mut ranked: Vec<(usize, usize, String)> = generated
        .into_iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty() && seen.insert(v.clone()))
        .enumerate()
        .map(|(i, v)| (strsim::levenshtein(raw, &v), i, v))
        .collect();
    ranked.sort();

    let mut out = vec![raw.to_string()];
    out.extend(ranked.into_iter().map(|(_, _, v)| v));
    out
}

fn contains_word(haystack_tokens: &HashSet<String>, phrase: &str) -> bool {
    let words: Vec<String> = crate::guesser::tokenize(phrase);
    !words.is_empty() && words.iter().all(|w| haystack_tokens.contains(w))
}

/// Picks a title for the variants of one answer.
///
/// Tiers in precedence order: direct (by `qanta_id`), unambiguous rule,
/// ambiguous rule (needs a disambiguation word in the question and a single
/// surviving page), exact title, redirect. Within a tier the variant closest
/// to the raw answer wins, then the lexicographically smallest title.
pub fn match_answer(
    variants: &[String],
    wiki: &TitleSet,
    rules: &MappingRules,
    question_text: &str,
    qanta_id: u64,
) -> MatchResult {
    let raw = match variants.first() {
        Some(r) => r.as_str(),
        None => return MatchResult::none(false),
    };

    if let Some(page) = rules.direct_for(qanta_id) {
        return MatchResult {
            page: Some(page.to_string()),
            method: MatchMethod::Direct,
            edit_cost: 0,
            conflict: false,
        };
    }

    let best_of = |hits: Vec<(usize, String)>, method: MatchMethod| -> Option<MatchResult> {
        hits.into_iter().min().map(|(edit_cost, page)| MatchResult {
            page: Some(page),
            method,
            edit_cost,
            conflict: false,
        })
    };
    let cost = |v: &str| strsim::levenshtein(raw, v);

    let unambiguous: Vec<_> = variants
        .iter()
        .filter_map(|v| {
            rules
                .unambiguous_index
                .get(&normalize_title(v))
                .map(|p| (cost(v), p.clone()))
        })
        .collect();
    if let Some(r) = best_of(unambiguous, MatchMethod::Unambiguous) {
        return r;
    }

    let question_tokens: HashSet<String> = crate::guesser::tokenize(question_text).into_iter().collect();
    let mut ambiguous = Vec::new();
    let mut conflict = false;
    for v in variants {
        if let Some(targets) = rules.ambiguous_index.get(&normalize_title(v)) {
            let surviving: Vec<&AmbiguousTarget> = targets
                .iter()
                .filter(|t| t.words.iter().any(|w| contains_word(&question_tokens, w)))
                .collect();
            match surviving.as_slice() {
                [only] => ambiguous.push((cost(v), only.page.clone())),
                [] => {}
                _ => conflict = true,
            }
        }
    }
    if conflict {
        return MatchResult::none(true);
    }
    if let Some(r) = best_of(ambiguous, MatchMethod::Ambiguous) {
        return r;
    }

    let exact: Vec<_> = variants
        .iter()
        .filter_map(|v| wiki.exact(v).map(|p| (cost(v), p.to_string())))
        .collect();
    if let Some(r) = best_of(exact, MatchMethod::Exact) {
        return r;
    }

    let redirect: Vec<_> = variants
        .iter()
        .filter_map(|v| wiki.redirect(v).map(|p| (cost(v), p.to_string())))
        .collect();
    best_of(redirect, MatchMethod::Redirect).unwrap_or_else(|| MatchResult::none(false))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingReport {
    pub total: usize,
    pub by_method: BTreeMap<String, usize>,
    pub conflicts: usize,
    /// Raw answers that found no page, with their `qanta_id`.
    pub unmatched: Vec<(u64, String)>,
}

/// Maps every question, consulting only the rule pool its designation
/// selects. Unmatched questions get `page = None` and the unassigned fold.
pub fn map_corpus(
    questions: Vec<QuestionRecord>,
    wiki: &TitleSet,
    train_rules: &MappingRules,
    test_rules: &MappingRules,
    designate: impl Fn(&QuestionRecord) -> Pool,
) -> (Vec<QuestionRecord>, MappingReport) {
    let mut report = MappingReport::default();
    let mut out = Vec::with_capacity(questions.len());
    for mut q in questions {
        let rules = match designate(&q) {
            Pool::Train => train_rules,
            Pool::Test => test_rules,
        };
        let variants = expand_answer(&q.raw_answer);
        let result = match_answer(&variants, wiki, rules, &q.text, q.qanta_id);
        report.total += 1;
        let method = serde_json::to_value(result.method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *report.by_method.entry(method).or_default() += 1;
        if result.conflict {
            report.conflicts += 1;
        }
        match result.page {
            Some(page) => q.page = Some(page),
            None => {
                report.unmatched.push((q.qanta_id, q.raw_answer.clone()));
                q.page = None;
                q.fold = Fold::Unassigned;
            }
        }
        out.push(q);
    }
    (out, report)
}

/// Pool selection from an already-assigned fold: train folds use the train
/// pool, everything else the test pool.
pub fn pool_from_fold(q: &QuestionRecord) -> Pool {
    if q.fold.is_train() {
        Pool::Train
    } else {
        Pool::Test
    }
}
