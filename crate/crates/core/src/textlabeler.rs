//! Rule-based extraction of mention states from report text.
//!
//! Findings are located by longest-match dictionary lookup against the
//! vocabulary synonyms. Polarity follows NegEx-style pre-negation: a trigger
//! ("no", "without", "negative for", ...) negates a mention that starts at
//! most `max_scope_tokens` tokens after it, unless a scope terminator (sentence
//! punctuation, "but", ...) sits in between. List conjunctions ("," / "and" /
//! "or") do not end the scope, so in "no pneumothorax, pleural effusion and
//! consolidation" all three findings are negated.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelcore::{FindingVocabulary, MentionState};

const DEFAULT_TRIGGERS: &str = include_str!("../data/triggers.txt");

pub const DEFAULT_MAX_SCOPE_TOKENS: usize = 6;

const DEFAULT_TERMINATORS: &[&str] = &[
    ".", ";", ":", "!", "?", "but", "however", "although", "though", "yet", "except", "which",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextLabelError {
    #[error("report `{0}` has an empty body")]
    EmptyBody(String),
    #[error("invalid negation rules: {0}")]
    InvalidRules(String),
    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub body: String,
}

impl Report {
    pub fn new(report_id: impl Into<String>, body: impl Into<String>) -> Result<Self, TextLabelError> {
        let report = Self {
            report_id: report_id.into(),
            body: body.into(),
        };
        report.check()?;
        Ok(report)
    }

    /// Checks the non-empty body invariant (used after deserialization).
    pub fn check(&self) -> Result<(), TextLabelError> {
        if self.body.split_whitespace().next().is_none() {
            return Err(TextLabelError::EmptyBody(self.report_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Affirmed,
    Negated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub finding_id: usize,
    /// Half-open token span `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub polarity: Option<Polarity>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegationRuleSet {
    pre_triggers: Vec<Vec<String>>,
    scope_terminators: Vec<String>,
    max_scope_tokens: usize,
}

impl NegationRuleSet {
    pub fn new<S: AsRef<str>, T: AsRef<str>>(
        pre_triggers: &[S],
        scope_terminators: &[T],
        max_scope_tokens: usize,
    ) -> Result<Self, TextLabelError> {
        if max_scope_tokens == 0 {
            return Err(TextLabelError::InvalidRules(
                "max_scope_tokens must be at least 1".into(),
            ));
        }
        let mut triggers: Vec<Vec<String>> = Vec::new();
        for t in pre_triggers {
            let toks = tokenize(t.as_ref());
            if toks.is_empty() {
                return Err(TextLabelError::InvalidRules("empty trigger".into()));
            }
            if !triggers.contains(&toks) {
                triggers.push(toks);
            }
        }
        let mut terminators = Vec::new();
        for t in scope_terminators {
            let t = t.as_ref().trim().to_lowercase();
            if t.is_empty() || t.split_whitespace().count() != 1 {
                return Err(TextLabelError::InvalidRules(format!(
                    "scope terminator `{t}` must be a single token"
                )));
            }
            terminators.push(t);
        }
        Ok(Self {
            pre_triggers: triggers,
            scope_terminators: terminators,
            max_scope_tokens,
        })
    }

    /// One trigger per line; blank lines and `#` comments are ignored.
    /// Terminators and scope width take their defaults.
    pub fn from_trigger_text(text: &str) -> Result<Self, TextLabelError> {
        let triggers: Vec<&str> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(&triggers, DEFAULT_TERMINATORS, DEFAULT_MAX_SCOPE_TOKENS)
    }

    pub fn load_triggers(path: impl AsRef<Path>) -> Result<Self, TextLabelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TextLabelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_trigger_text(&text)
    }

    pub fn with_max_scope_tokens(mut self, n: usize) -> Result<Self, TextLabelError> {
        if n == 0 {
            return Err(TextLabelError::InvalidRules(
                "max_scope_tokens must be at least 1".into(),
            ));
        }
        self.max_scope_tokens = n;
        Ok(self)
    }

    pub fn max_scope_tokens(&self) -> usize {
        self.max_scope_tokens
    }

    pub fn pre_triggers(&self) -> &[Vec<String>] {
        &self.pre_triggers
    }

    fn is_terminator(&self, token: &str) -> bool {
        self.scope_terminators.iter().any(|t| t == token)
    }
}

impl Default for NegationRuleSet {
    fn default() -> Self {
        Self::from_trigger_text(DEFAULT_TRIGGERS).expect("built-in trigger list is valid")
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Lowercased word tokens; every other non-space character is its own token.
/// Hyphens and apostrophes between letters stay inside the word.
pub fn tokenize(body: &str) -> Vec<String> {
    let chars: Vec<char> = body.chars().collect();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if is_word_char(c) {
            word.extend(c.to_lowercase());
            continue;
        }
        let joins = (c == '-' || c == '\'') && !word.is_empty() && chars.get(i + 1).is_some_and(|&n| is_word_char(n));
        if joins {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Vocabulary and rules compiled for repeated labeling.
#[derive(Debug, Clone)]
pub struct Labeler {
    n_findings: usize,
    /// `(synonym tokens, finding id)`, longest first.
    phrases: Vec<(Vec<String>, usize)>,
    rules: NegationRuleSet,
}

impl Labeler {
    pub fn new(vocab: &FindingVocabulary, rules: NegationRuleSet) -> Self {
        let mut phrases = Vec::new();
        for f in vocab.findings() {
            for syn in &f.synonyms {
                let toks = tokenize(syn);
                if !toks.is_empty() {
                    phrases.push((toks, f.id));
                }
            }
        }
        // stable: equal lengths keep vocabulary order
        phrases.sort_by_key(|p| std::cmp::Reverse(p.0.len()));
        Self {
            n_findings: vocab.len(),
            phrases,
            rules,
        }
    }

    pub fn rules(&self) -> &NegationRuleSet {
        &self.rules
    }

    pub fn find_mentions(&self, tokens: &[String]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self
                .phrases
                .iter()
                .find(|(phrase, _)| tokens.len() - i >= phrase.len() && tokens[i..i + phrase.len()] == phrase[..]);
            match hit {
                Some((phrase, id)) => {
                    out.push(Mention {
                        finding_id: *id,
                        start: i,
                        end: i + phrase.len(),
                        polarity: None,
                    });
                    i += phrase.len();
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn label(&self, report: &Report) -> Vec<MentionState> {
        let tokens = tokenize(&report.body);
        let mut states = vec![MentionState::NoMention; self.n_findings];
        for m in self.find_mentions(&tokens) {
            let polarity = resolve_polarity(&tokens, &m, &self.rules);
            let slot = &mut states[m.finding_id];
            *slot = match (polarity, *slot) {
                (Polarity::Affirmed, _) => MentionState::Affirmed,
                (Polarity::Negated, MentionState::Affirmed) => MentionState::Affirmed,
                (Polarity::Negated, _) => MentionState::Negated,
            };
        }
        states
    }
}

pub fn find_mentions(tokens: &[String], vocab: &FindingVocabulary) -> Vec<Mention> {
    Labeler::new(vocab, NegationRuleSet::default()).find_mentions(tokens)
}

/// Only tokens in `[start - max_scope_tokens, start)` are inspected.
pub fn resolve_polarity(tokens: &[String], mention: &Mention, rules: &NegationRuleSet) -> Polarity {
    let window_start = mention.start.saturating_sub(rules.max_scope_tokens);
    for pos in (window_start..mention.start).rev() {
        if rules.is_terminator(&tokens[pos]) {
            return Polarity::Affirmed;
        }
        let ends_here = rules.pre_triggers.iter().any(|trigger| {
            let len = trigger.len();
            pos + 1 >= window_start + len && tokens[pos + 1 - len..=pos] == trigger[..]
        });
        if ends_here {
            return Polarity::Negated;
        }
    }
    Polarity::Affirmed
}

/// Mention state per vocabulary finding. A finding affirmed anywhere in the
/// report is `Affirmed` even if it is also negated elsewhere.
pub fn label_report(report: &Report, vocab: &FindingVocabulary, rules: &NegationRuleSet) -> Vec<MentionState> {
    Labeler::new(vocab, rules.clone()).label(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use MentionState::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn cxr() -> FindingVocabulary {
        FindingVocabulary::builtin()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("No pneumothorax."), vec!["no", "pneumothorax", "."]);
        assert!(toks("").is_empty());
        assert_eq!(
            toks("pleural effusion, consolidation"),
            vec!["pleural", "effusion", ",", "consolidation"]
        );
        assert_eq!(toks("X-ray  patient's"), vec!["x-ray", "patient's"]);
        assert_eq!(toks("-- a"), vec!["-", "-", "a"]);
    }

    #[test]
    fn mentions_use_longest_match() {
        let vocab = cxr();
        let m = find_mentions(&toks("pulmonary edema present"), &vocab);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].finding_id, m[0].start, m[0].end), (2, 0, 2));

        assert!(find_mentions(&toks("heart size normal"), &vocab).is_empty());

        let v = FindingVocabulary::parse("0,edema,\n1,pulmonary edema,").unwrap();
        let m = find_mentions(&toks("mild pulmonary edema"), &v);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].finding_id, m[0].start, m[0].end), (1, 1, 3));
    }

    #[test]
    fn negation_propagates_through_lists() {
        let vocab = cxr();
        let rules = NegationRuleSet::default();
        let r = Report::new("r1", "no pneumothorax, pleural effusion and consolidation").unwrap();
        assert_eq!(
            label_report(&r, &vocab, &rules),
            vec![Negated, Negated, NoMention, Negated]
        );
    }

    #[test]
    fn polarity_examples() {
        let vocab = cxr();
        let rules = NegationRuleSet::default();
        let t = toks("pneumothorax is present");
        let m = find_mentions(&t, &vocab);
        assert_eq!(resolve_polarity(&t, &m[0], &rules), Polarity::Affirmed);

        let t = toks("no fracture. consolidation noted");
        let m = find_mentions(&t, &vocab);
        assert_eq!(m.len(), 1);
        assert_eq!(resolve_polarity(&t, &m[0], &rules), Polarity::Affirmed);

        let v = FindingVocabulary::parse("0,fracture,\n1,consolidation,").unwrap();
        let r = Report::new("r", "no fracture. consolidation noted").unwrap();
        assert_eq!(label_report(&r, &v, &rules), vec![Negated, Affirmed]);

        let t = toks("no acute process but consolidation at the base");
        let m = find_mentions(&t, &vocab);
        assert_eq!(resolve_polarity(&t, &m[0], &rules), Polarity::Affirmed);

        let t = toks("negative for pneumothorax");
        let m = find_mentions(&t, &vocab);
        assert_eq!(resolve_polarity(&t, &m[0], &rules), Polarity::Negated);
    }

    #[test]
    fn scope_width_is_enforced() {
        let vocab = cxr();
        let rules = NegationRuleSet::default();
        // trigger is 7 tokens before the mention
        let t = toks("no a b c d e f pneumothorax");
        let m = find_mentions(&t, &vocab);
        assert_eq!(resolve_polarity(&t, &m[0], &rules), Polarity::Affirmed);
        let wide = rules.with_max_scope_tokens(7).unwrap();
        assert_eq!(resolve_polarity(&t, &m[0], &wide), Polarity::Negated);
    }

    #[test]
    fn label_report_examples() {
        let v = FindingVocabulary::parse("0,consolidation,\n1,pneumothorax,\n2,pulmonary edema,").unwrap();
        let rules = NegationRuleSet::default();
        let r = Report::new("a", "no consolidation").unwrap();
        assert_eq!(label_report(&r, &v, &rules), vec![Negated, NoMention, NoMention]);
        let r = Report::new("b", "heart size is normal").unwrap();
        assert_eq!(label_report(&r, &v, &rules), vec![NoMention; 3]);
        let r = Report::new("c", "consolidation in left lobe. no consolidation on right").unwrap();
        assert_eq!(label_report(&r, &v, &rules)[0], Affirmed);
        let r = Report::new("d", "no consolidation on right. consolidation in left lobe").unwrap();
        assert_eq!(label_report(&r, &v, &rules)[0], Affirmed);
    }

    #[test]
    fn rules_validation() {
        assert!(NegationRuleSet::new(&["no"], &["."], 0).is_err());
        assert!(NegationRuleSet::new(&[" "], &["."], 3).is_err());
        assert!(NegationRuleSet::new(&["no"], &["and so"], 3).is_err());
        let r = NegationRuleSet::new(&["No", "Negative For"], &["."], 3).unwrap();
        assert_eq!(r.pre_triggers()[1], vec!["negative", "for"]);
        assert!(Report::new("x", "  \n ").is_err());
    }

    const WORDS: &[&str] = &[
        "no",
        "not",
        "without",
        "negative",
        "for",
        "and",
        ",",
        ".",
        "but",
        "the",
        "left",
        "base",
        "pneumothorax",
        "consolidation",
        "pleural",
        "effusion",
        "edema",
        "mild",
        "seen",
    ];

    proptest! {
        #[test]
        fn polarity_ignores_tokens_outside_window(
            idx in prop::collection::vec(0..WORDS.len(), 1..30),
            noise in prop::collection::vec(0..WORDS.len(), 30),
        ) {
            let vocab = cxr();
            let rules = NegationRuleSet::default();
            let tokens: Vec<String> = idx.iter().map(|&i| WORDS[i].to_string()).collect();
            for m in find_mentions(&tokens, &vocab) {
                let expected = resolve_polarity(&tokens, &m, &rules);
                let lo = m.start.saturating_sub(rules.max_scope_tokens());
                let mut mutated = tokens.clone();
                for (p, slot) in mutated.iter_mut().enumerate() {
                    if p < lo || p >= m.end {
                        *slot = WORDS[noise[p % noise.len()]].to_string();
                    }
                }
                prop_assert_eq!(resolve_polarity(&mutated, &m, &rules), expected);
            }
        }

        #[test]
        fn labeling_is_deterministic_and_consistent(idx in prop::collection::vec(0..WORDS.len(), 1..25)) {
            let vocab = cxr();
            let rules = NegationRuleSet::default();
            let body = idx.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" ");
            let r = Report::new("p", body).unwrap();
            let a = label_report(&r, &vocab, &rules);
            prop_assert_eq!(&a, &label_report(&r, &vocab, &rules));
            let mentioned: Vec<usize> = find_mentions(&tokenize(&r.body), &vocab).iter().map(|m| m.finding_id).collect();
            for (k, s) in a.iter().enumerate() {
                prop_assert_eq!(*s == NoMention, !mentioned.contains(&k));
            }
        }
    }
}
