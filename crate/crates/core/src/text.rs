//! Text normalization and pattern lists shared by the signal extractor and
//! the evaluator.
//!
//! Normalization is NFKC, then lowercase, then typographic apostrophes folded
//! to `'`, then punctuation and hyphens mapped to spaces, then whitespace
//! collapsed. Matching works on the resulting token sequence.

use std::fs;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

/// Default hedge markers.
pub const DEFAULT_HEDGES: &str = include_str!("../patterns/hedges.txt");
/// Default refusal templates.
pub const DEFAULT_REFUSALS: &str = include_str!("../patterns/refusals.txt");
/// Default negation lexicon for Tier-1 matching.
pub const DEFAULT_NEGATIONS: &str = include_str!("../patterns/negations.txt");
/// Default irregular plural table (`singular plural` per line).
pub const DEFAULT_IRREGULARS: &str = include_str!("../patterns/irregulars.txt");

fn fold_char(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{02bc}' | '`' => '\'',
        _ => c,
    }
}

/// Normalizes `text` and returns the token sequence.
pub fn tokens(text: &str) -> Vec<String> {
    let lowered: String = text.nfkc().collect::<String>().to_lowercase();
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = lowered.chars().map(fold_char).collect();
    for (i, &c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || (c == '\''
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        if keep {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Normalized text: tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokens(text).join(" ")
}

/// Position of every occurrence of `needle` as a contiguous token run.
pub fn find_token_runs(haystack: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == *needle)
        .collect()
}

/// A case-insensitive list of phrases loaded from a pattern file.
///
/// File format: one pattern per line, `#` starts a comment, blank lines are
/// ignored. A pattern matches when its normalized token run occurs in the
/// normalized text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternList {
    patterns: Vec<Vec<String>>,
}

impl PatternList {
    pub fn parse(source: &str) -> Self {
        let patterns = source
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .map(tokens)
            .filter(|t| !t.is_empty())
            .collect();
        PatternList { patterns }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[Vec<String>] {
        &self.patterns
    }

    pub fn matches(&self, text: &str) -> bool {
        self.matches_tokens(&tokens(text))
    }

    pub fn matches_tokens(&self, toks: &[String]) -> bool {
        self.patterns
            .iter()
            .any(|p| !find_token_runs(toks, p).is_empty())
    }

    /// Token spans `[start, end)` of every pattern occurrence.
    pub fn spans(&self, toks: &[String]) -> Vec<(usize, usize)> {
        let mut spans: Vec<(usize, usize)> = self
            .patterns
            .iter()
            .flat_map(|p| find_token_runs(toks, p).into_iter().map(|s| (s, s + p.len())))
            .collect();
        spans.sort_unstable();
        spans.dedup();
        spans
    }
}
