//! Screening of critique texts written against a hidden score.
//!
//! Score leakage is detected locally by scanning for numerals that normalize
//! onto the hidden score. Alignment and factuality checks are delegated to
//! [`CheckPlugin`] implementations supplied by the caller.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default match tolerance: half of the last displayed decimal.
pub const DEFAULT_LEAK_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueRecord {
    pub id: String,
    pub critique: String,
    pub hidden_score: f64,
}

impl CritiqueRecord {
    pub fn new(id: impl Into<String>, critique: impl Into<String>, hidden_score: f64) -> Result<Self> {
        let rec = Self { id: id.into(), critique: critique.into(), hidden_score };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.critique.trim().is_empty() {
            return Err(Error::InvalidArgument(alloc::format!("critique {:?} is empty", self.id)));
        }
        if !(0.0..=1.0).contains(&self.hidden_score) {
            return Err(Error::InvalidArgument(alloc::format!(
                "hidden score {} of {:?} outside [0, 1]",
                self.hidden_score, self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorFlags {
    pub leak: bool,
    pub align: bool,
    pub fact: bool,
}

impl ErrorFlags {
    pub fn is_clean(&self) -> bool {
        !(self.leak || self.align || self.fact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagKind {
    Align,
    Fact,
}

/// External judgment source for one flag.
pub trait CheckPlugin {
    fn name(&self) -> &str;
    fn kind(&self) -> FlagKind;
    /// `Ok(true)` flags the record; `Err` means the record could not be screened.
    fn evaluate(&self, record: &CritiqueRecord) -> core::result::Result<bool, String>;
}

/// Plugin that returns a fixed verdict. Useful as a stand-in judge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstantCheck {
    pub name: String,
    pub kind: FlagKind,
    pub verdict: bool,
}

impl CheckPlugin for ConstantCheck {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> FlagKind {
        self.kind
    }

    fn evaluate(&self, _record: &CritiqueRecord) -> core::result::Result<bool, String> {
        Ok(self.verdict)
    }
}

/// A numeric literal found in the text, with byte offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Numeral {
    value: f64,
    start: usize,
    end: usize,
    decimal: bool,
}

fn scan_numerals(text: &str) -> Vec<Numeral> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let leading_dot = c == b'.'
            && i + 1 < bytes.len()
            && bytes[i + 1].is_ascii_digit()
            && (i == 0 || !bytes[i - 1].is_ascii_digit());
        if !(c.is_ascii_digit() || leading_dot) {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let mut decimal = false;
        if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            decimal = true;
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        // glued to a word ("f2", "4k", "x3") is not a standalone numeral
        let glued_before = start > 0 && bytes[start - 1].is_ascii_alphabetic();
        let glued_after = i < bytes.len() && bytes[i].is_ascii_alphabetic();
        if !(glued_before || glued_after) {
            if let Ok(value) = text[start..i].parse::<f64>() {
                out.push(Numeral { value, start, end: i, decimal });
            }
        }
    }
    out
}

fn lower_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

const SCORE_WORDS: &[&str] = &[
    "score", "scores", "scored", "scoring", "rating", "ratings", "rated", "rate", "grade", "graded", "mark",
    "marks", "verdict",
];

const FILLER_WORDS: &[&str] = &[
    "is", "of", "at", "a", "an", "be", "would", "should", "could", "around", "about", "approximately", "roughly",
    "near", "final", "overall", "my", "its", "it", "it's", "the", "this", "that", "image", "photo", "picture", "i",
    "i'd", "give", "gives", "assign", "assigned", "deserves", "earns", "as", "to", "me", "for", "with", "lands",
    "sits", "comes", "in", "aesthetic", "hidden", "true", "was", "here", "likely", "just", "set", "gets",
];

const UNIT_WORDS: &[&str] = &[
    "s", "sec", "secs", "second", "seconds", "ms", "mm", "cm", "m", "km", "kg", "g", "ev", "stop", "stops", "x",
    "mile", "miles", "inch", "inches", "ft", "feet", "meter", "meters", "metres", "hour", "hours", "minute",
    "minutes", "mp", "megapixel", "megapixels", "lux", "k",
];

/// True when the words right before a numeral name a score or rating.
fn score_context(before: &str) -> bool {
    let words = lower_words(before);
    for w in words.iter().rev().take(6) {
        if SCORE_WORDS.contains(&w.as_str()) {
            return true;
        }
        if !FILLER_WORDS.contains(&w.as_str()) {
            return false;
        }
    }
    false
}

/// Scale implied by what follows a numeral: `%`, "percent", "/N" or "out of N".
fn trailing_scale(after: &str) -> Option<f64> {
    let t = after.trim_start();
    if t.starts_with('%') {
        return Some(100.0);
    }
    let lower = t.to_lowercase();
    if lower.starts_with("percent") || lower.starts_with("per cent") {
        return Some(100.0);
    }
    let rest = if let Some(r) = t.strip_prefix('/') {
        r
    } else if lower.starts_with("out of") {
        t[6..].trim_start()
    } else {
        return None;
    };
    let rest_lower = rest.to_lowercase();
    for (word, scale) in [("ten", 10.0), ("five", 5.0), ("hundred", 100.0)] {
        if rest_lower.starts_with(word) {
            return Some(scale);
        }
    }
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    match digits.as_str() {
        "5" => Some(5.0),
        "10" => Some(10.0),
        "100" => Some(100.0),
        _ => None,
    }
}

fn followed_by_unit(after: &str) -> bool {
    let t = after.trim_start_matches([' ', '-']);
    let word: String = t.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    !word.is_empty() && UNIT_WORDS.contains(&word.to_lowercase().as_str())
}

/// Denominators and apertures ("1/250", "f/2.8") are never scores.
fn follows_slash(text: &str, start: usize) -> bool {
    text[..start].trim_end().ends_with('/')
}

/// Candidate normalized scores a numeral could be leaking.
fn candidates(text: &str, n: &Numeral) -> Vec<f64> {
    let mut out = Vec::new();
    let before = &text[..n.start];
    let after = &text[n.end..];
    if follows_slash(text, n.start) {
        return out;
    }
    if let Some(scale) = trailing_scale(after) {
        if n.value <= scale {
            out.push(n.value / scale);
        }
        return out;
    }
    if score_context(before) {
        for scale in [1.0, 10.0, 100.0] {
            if n.value <= scale {
                out.push(n.value / scale);
            }
        }
        return out;
    }
    if n.decimal && n.value <= 1.0 && !followed_by_unit(after) {
        out.push(n.value);
    }
    out
}

/// Whether the critique reveals a number within `tolerance` of the hidden score.
pub fn detect_score_leakage(record: &CritiqueRecord, tolerance: f64) -> bool {
    let text = record.critique.as_str();
    scan_numerals(text).iter().any(|n| {
        candidates(text, n).into_iter().any(|v| libm::fabs(v - record.hidden_score) <= tolerance + 1e-12)
    })
}

/// A plugin failed on a record; the partially assembled flags are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckFailure {
    pub plugin: String,
    pub message: String,
    pub partial: ErrorFlags,
}

/// Leakage is always checked locally; a flag with no plugin stays false.
pub fn run_checks(
    record: &CritiqueRecord,
    plugins: &[&dyn CheckPlugin],
    tolerance: f64,
) -> core::result::Result<ErrorFlags, CheckFailure> {
    let mut flags = ErrorFlags { leak: detect_score_leakage(record, tolerance), ..ErrorFlags::default() };
    for plugin in plugins {
        match plugin.evaluate(record) {
            Ok(v) => match plugin.kind() {
                FlagKind::Align => flags.align |= v,
                FlagKind::Fact => flags.fact |= v,
            },
            Err(message) => {
                return Err(CheckFailure { plugin: plugin.name().into(), message, partial: flags });
            }
        }
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub record: CritiqueRecord,
    pub flags: ErrorFlags,
    /// Set when a plugin failed and the record was never fully screened.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unscreened: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<CritiqueRecord>,
    pub rejected: Vec<Rejected>,
}

/// Partitions records into those with no flags raised and the rest, in input order.
pub fn filter_dataset(records: Vec<CritiqueRecord>, plugins: &[&dyn CheckPlugin], tolerance: f64) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for record in records {
        match run_checks(&record, plugins, tolerance) {
            Ok(flags) if flags.is_clean() => out.kept.push(record),
            Ok(flags) => out.rejected.push(Rejected { record, flags, unscreened: None }),
            Err(fail) => out.rejected.push(Rejected {
                record,
                flags: fail.partial,
                unscreened: Some(alloc::format!("{}: {}", fail.plugin, fail.message)),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(text: &str, hidden: f64) -> CritiqueRecord {
        CritiqueRecord::new("r", text, hidden).unwrap()
    }

    struct Failing;
    impl CheckPlugin for Failing {
        fn name(&self) -> &str {
            "judge"
        }
        fn kind(&self) -> FlagKind {
            FlagKind::Align
        }
        fn evaluate(&self, _: &CritiqueRecord) -> core::result::Result<bool, String> {
            Err("timeout".into())
        }
    }

    #[test]
    fn planted_and_clean() {
        assert!(detect_score_leakage(&rec("Overall this earns a rating of 0.61 overall, solid work.", 0.613), 0.01));
        assert!(!detect_score_leakage(&rec("Soft light and a calm palette.", 0.613), 0.01));
    }

    #[test]
    fn scales() {
        assert!(detect_score_leakage(&rec("I would put it at 61% of its potential.", 0.61), 0.005));
        assert!(detect_score_leakage(&rec("A solid 6 out of 10.", 0.6), 0.005));
        assert!(detect_score_leakage(&rec("Verdict: 7/10.", 0.7), 0.005));
        assert!(detect_score_leakage(&rec("The score is 6.1 in my view.", 0.61), 0.005));
        assert!(detect_score_leakage(&rec("Rating: 72", 0.72), 0.005));
        assert!(!detect_score_leakage(&rec("Three birds at f/2.8 and 1/250s.", 0.28), 0.005));
        assert!(!detect_score_leakage(&rec("A 0.5-second exposure blurs the water.", 0.5), 0.005));
        assert!(!detect_score_leakage(&rec("A 0.61 rating would be too generous.", 0.2), 0.005));
    }

    #[test]
    fn numeral_scan() {
        let ns = scan_numerals("at .75, then 12 and 3.5.");
        let vals: Vec<f64> = ns.iter().map(|n| n.value).collect();
        assert_eq!(vals, vec![0.75, 12.0, 3.5]);
        assert!(ns[0].decimal && !ns[1].decimal);
        assert!(scan_numerals("shot in 4k on an f8 lens").is_empty());
    }

    #[test]
    fn run_checks_paths() {
        let clean = rec("Balanced framing, muted tones.", 0.4);
        assert_eq!(run_checks(&clean, &[], 0.005).unwrap(), ErrorFlags::default());
        let leaked = rec("Deserves 0.40 overall.", 0.4);
        let always_align = ConstantCheck { name: "a".into(), kind: FlagKind::Align, verdict: false };
        assert!(run_checks(&leaked, &[&always_align], 0.005).unwrap().leak);
        let fact = ConstantCheck { name: "f".into(), kind: FlagKind::Fact, verdict: true };
        let flags = run_checks(&clean, &[&fact], 0.005).unwrap();
        assert!(flags.fact && !flags.leak && !flags.align);
        let failed = run_checks(&clean, &[&Failing], 0.005).unwrap_err();
        assert_eq!(failed.plugin, "judge");
    }

    #[test]
    fn filter_partitions() {
        let mut records = Vec::new();
        for i in 0..10 {
            let text = if i % 3 == 0 && i > 0 { "It rates 0.50 for me." } else { "Lovely texture." };
            records.push(CritiqueRecord::new(alloc::format!("{i}"), text, 0.5).unwrap());
        }
        let out = filter_dataset(records, &[], 0.005);
        assert_eq!(out.kept.len(), 7);
        assert_eq!(out.rejected.len(), 3);
        assert!(out.rejected.iter().all(|r| r.flags.leak));
        assert_eq!(filter_dataset(vec![], &[], 0.005), FilterOutcome::default());

        let rs = vec![rec("fine", 0.2)];
        let out = filter_dataset(rs, &[&Failing], 0.005);
        assert!(out.kept.is_empty());
        assert!(out.rejected[0].unscreened.as_deref().unwrap().contains("timeout"));
    }

    #[test]
    fn record_validation() {
        assert!(CritiqueRecord::new("x", "  ", 0.3).is_err());
        assert!(CritiqueRecord::new("x", "ok", 1.3).is_err());
    }
}
