//! Stylometric text verifier: presence/absence of character n-grams against
//! the user's training keystrokes, scored as the covered fraction of a
//! window's n-gram tokens.
//!
//! Raw typed keys are scored (typos included), case-sensitively, with
//! whitespace counting as ordinary characters: keystrokes are literal key
//! events.

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::detector::{Detector, Vote};
use crate::events::{escape_field, unescape_field, Modality, Window};

pub const DEFAULT_NGRAM_LEN: usize = 4;
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("insufficient text: need at least {needed} characters, got {got}")]
    InsufficientText { needed: usize, got: usize },
    #[error("model line {line}: {message}")]
    ModelFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The distinct character n-grams of a user's training keystrokes plus the
/// acceptance threshold on coverage. Immutable after training (the threshold
/// is tuned once, on characterization data, before any fusion-weight
/// estimation).
#[derive(Debug, Clone)]
pub struct NGramProfile {
    n: usize,
    grams: HashSet<String>,
    theta: f64,
}

/// Collect the distinct contiguous length-n substrings of the training
/// keystroke stream.
pub fn train_text(training_keystrokes: &str, n: usize) -> Result<NGramProfile, TextError> {
    assert!(n >= 1, "n-gram length must be at least 1");
    let chars: Vec<char> = training_keystrokes.chars().collect();
    if chars.len() < n {
        return Err(TextError::InsufficientText {
            needed: n,
            got: chars.len(),
        });
    }
    let grams: HashSet<String> = chars.windows(n).map(|w| w.iter().collect()).collect();
    Ok(NGramProfile {
        n,
        grams,
        theta: DEFAULT_THETA,
    })
}

impl NGramProfile {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn set_theta(&mut self, theta: f64) {
        assert!((0.0..=1.0).contains(&theta), "theta must lie in [0, 1]");
        self.theta = theta;
    }

    pub fn grams(&self) -> &HashSet<String> {
        &self.grams
    }

    pub fn contains(&self, gram: &str) -> bool {
        self.grams.contains(gram)
    }

    /// Fraction of the block's n-gram tokens present in the profile (token
    /// counting, not distinct counting). `None` when the block is shorter
    /// than n: no decision can be made.
    pub fn coverage(&self, block: &str) -> Option<f64> {
        let chars: Vec<char> = block.chars().collect();
        if chars.len() < self.n {
            return None;
        }
        let mut present = 0usize;
        let mut total = 0usize;
        let mut gram = String::with_capacity(self.n * 4);
        for w in chars.windows(self.n) {
            gram.clear();
            gram.extend(w.iter());
            total += 1;
            if self.grams.contains(&gram) {
                present += 1;
            }
        }
        Some(present as f64 / total as f64)
    }

    /// Accept when coverage reaches the threshold (ties accept); abstain when
    /// the window holds fewer than n characters.
    pub fn decide_text(&self, window_text: &str) -> Option<Vote> {
        self.coverage(window_text).map(|score| {
            if score >= self.theta {
                Vote::Accept
            } else {
                Vote::Reject
            }
        })
    }

    // Model file: line-oriented, sorted, escaped; round-trips byte for byte.

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "n\t{}", self.n)?;
        writeln!(w, "theta\t{}", self.theta)?;
        let mut sorted: Vec<&String> = self.grams.iter().collect();
        sorted.sort();
        for gram in sorted {
            writeln!(w, "gram\t{}", escape_field(gram))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<NGramProfile, TextError> {
        let mut n: Option<usize> = None;
        let mut theta: Option<f64> = None;
        let mut grams = HashSet::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let fmt_err = |message: &str| TextError::ModelFormat {
                line: idx + 1,
                message: message.to_string(),
            };
            let (key, value) = line.split_once('\t').ok_or_else(|| fmt_err("missing tab"))?;
            match key {
                "n" => n = Some(value.parse().map_err(|_| fmt_err("bad n"))?),
                "theta" => theta = Some(value.parse().map_err(|_| fmt_err("bad theta"))?),
                "gram" => {
                    grams.insert(unescape_field(value).map_err(|m| fmt_err(&m))?);
                }
                _ => return Err(fmt_err("unknown key")),
            }
        }
        let n = n.ok_or(TextError::ModelFormat {
            line: 0,
            message: "missing n".to_string(),
        })?;
        let theta = theta.ok_or(TextError::ModelFormat {
            line: 0,
            message: "missing theta".to_string(),
        })?;
        if let Some(bad) = grams.iter().find(|g| g.chars().count() != n) {
            return Err(TextError::ModelFormat {
                line: 0,
                message: format!("gram {bad:?} does not have length {n}"),
            });
        }
        Ok(NGramProfile { n, grams, theta })
    }
}

impl Detector for NGramProfile {
    fn modality(&self) -> Modality {
        Modality::Text
    }

    fn decide(&self, window: &Window<'_>) -> Option<Vote> {
        self.decide_text(&window.text_block())
    }
}

/// Pick the coverage threshold minimizing |FAR - FRR| on characterization
/// scores (FAR: impostor scores at or above theta; FRR: genuine scores
/// below). Ties prefer lower total error; among equally good thresholds the
/// median is taken, centering theta inside a zero-error band instead of
/// pinning it to an observed score, which transfers better to unseen
/// windows. Returns `None` when either side is empty.
pub fn tune_theta(genuine_scores: &[f64], impostor_scores: &[f64]) -> Option<f64> {
    if genuine_scores.is_empty() || impostor_scores.is_empty() {
        return None;
    }
    let mut candidates: Vec<f64> =
        Vec::with_capacity(2 * (genuine_scores.len() + impostor_scores.len()) + 1);
    candidates.push(0.0);
    candidates.extend_from_slice(genuine_scores);
    candidates.extend_from_slice(impostor_scores);
    candidates.sort_by(|a, b| a.total_cmp(b));
    candidates.dedup();
    for i in 1..candidates.len() {
        let mid = (candidates[i - 1] + candidates[i]) / 2.0;
        candidates.push(mid);
    }
    candidates.sort_by(|a, b| a.total_cmp(b));

    let mut best_key: Option<(f64, f64)> = None;
    let mut best_thetas: Vec<f64> = Vec::new();
    for &theta in &candidates {
        let far = impostor_scores.iter().filter(|&&s| s >= theta).count() as f64
            / impostor_scores.len() as f64;
        let frr = genuine_scores.iter().filter(|&&s| s < theta).count() as f64
            / genuine_scores.len() as f64;
        let key = ((far - frr).abs(), far + frr);
        match best_key {
            None => {
                best_key = Some(key);
                best_thetas.push(theta);
            }
            Some(cur) if key < cur => {
                best_key = Some(key);
                best_thetas.clear();
                best_thetas.push(theta);
            }
            Some(cur) if key == cur => best_thetas.push(theta),
            _ => {}
        }
    }
    Some(best_thetas[(best_thetas.len() - 1) / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn train_enumerates_distinct_substrings() {
        let profile = train_text("hello", 4).unwrap();
        let expect: HashSet<String> = ["hell", "ello"].iter().map(|s| s.to_string()).collect();
        assert_eq!(profile.grams(), &expect);
    }

    #[test]
    fn repetition_collapses_to_distinct_set() {
        let profile = train_text("aaaa", 2).unwrap();
        assert_eq!(profile.grams().len(), 1);
        assert!(profile.contains("aa"));
    }

    #[test]
    fn too_short_training_text_errors() {
        assert!(matches!(
            train_text("ab", 3),
            Err(TextError::InsufficientText { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn coverage_of_training_substring_is_one() {
        let profile = train_text("the quick brown fox", 4).unwrap();
        assert_eq!(profile.coverage("quick bro"), Some(1.0));
    }

    #[test]
    fn coverage_of_disjoint_block_is_zero() {
        let profile = train_text("aaaaaaa", 3).unwrap();
        assert_eq!(profile.coverage("zzzzzz"), Some(0.0));
    }

    #[test]
    fn coverage_hand_enumeration() {
        // Profile from "hello world" (n=4); block "hello" has tokens
        // {"hell","ello"}, both present.
        let profile = train_text("hello world", 4).unwrap();
        assert_eq!(profile.coverage("hello"), Some(1.0));
    }

    #[test]
    fn coverage_counts_tokens_not_distinct_grams() {
        // block "abab" with n=2 has tokens ab, ba, ab; profile holds only "ab".
        let profile = train_text("xabx", 2).unwrap();
        assert!(profile.contains("ab"));
        assert!(!profile.contains("ba"));
        let cov = profile.coverage("abab").unwrap();
        assert!((cov - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn short_block_abstains() {
        let profile = train_text("hello", 4).unwrap();
        assert_eq!(profile.coverage("hi"), None);
        assert_eq!(profile.decide_text(""), None);
    }

    #[test]
    fn decide_accepts_on_threshold_tie() {
        let mut profile = train_text("xabx", 2).unwrap();
        let cov = profile.coverage("abab").unwrap();
        profile.set_theta(cov);
        assert_eq!(profile.decide_text("abab"), Some(Vote::Accept));
    }

    #[test]
    fn full_coverage_accepts_at_default_theta() {
        let profile = train_text("hello", 4).unwrap();
        assert_eq!(profile.decide_text("hell"), Some(Vote::Accept));
    }

    #[test]
    fn own_training_text_accepted_for_any_theta_up_to_one() {
        let text = "it's a weird tyypo-ridden mesage";
        let mut profile = train_text(text, 4).unwrap();
        profile.set_theta(1.0);
        assert_eq!(profile.decide_text(text), Some(Vote::Accept));
    }

    #[test]
    fn coverage_invariant_to_gram_preserving_extension() {
        let base = train_text("banana", 3).unwrap();
        // Longer training text with the same gram set leaves scores alone.
        let extended = train_text("banananana", 3).unwrap();
        assert_eq!(extended.grams(), base.grams());
        for block in ["banan", "nana", "zzz"] {
            assert_eq!(base.coverage(block), extended.coverage(block));
        }
    }

    #[test]
    fn enlarging_profile_never_decreases_coverage() {
        let small = train_text("abcdef", 3).unwrap();
        let large = train_text("abcdefxyzuvw", 3).unwrap();
        assert!(small.grams().is_subset(large.grams()));
        for block in ["abcd", "defx", "xyzu", "qqqq"] {
            assert!(large.coverage(block).unwrap() >= small.coverage(block).unwrap());
        }
    }

    #[test]
    fn model_file_round_trips_byte_exactly() {
        let mut profile = train_text("hello\tworld \\ again", 4).unwrap();
        profile.set_theta(0.625);
        let mut buf = Vec::new();
        profile.write_to(&mut buf).unwrap();
        let reread = NGramProfile::read_from(&buf[..]).unwrap();
        assert_eq!(reread.n(), profile.n());
        assert_eq!(reread.theta(), profile.theta());
        assert_eq!(reread.grams(), profile.grams());
        let mut buf2 = Vec::new();
        reread.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn tune_theta_balances_error_rates() {
        // Genuine scores cluster high, impostor scores low; the balanced
        // threshold separates them completely.
        let genuine = [0.9, 0.8, 0.95, 0.85];
        let impostor = [0.1, 0.2, 0.15, 0.05];
        let theta = tune_theta(&genuine, &impostor).unwrap();
        let far = impostor.iter().filter(|&&s| s >= theta).count();
        let frr = genuine.iter().filter(|&&s| s < theta).count();
        assert_eq!((far, frr), (0, 0));
    }

    #[test]
    fn tune_theta_on_identical_distributions_is_near_half_error() {
        let scores = [0.1, 0.3, 0.5, 0.7, 0.9];
        let theta = tune_theta(&scores, &scores).unwrap();
        let far = scores.iter().filter(|&&s| s >= theta).count() as f64 / scores.len() as f64;
        let frr = scores.iter().filter(|&&s| s < theta).count() as f64 / scores.len() as f64;
        assert!((far - frr).abs() <= 0.2 + 1e-12);
    }

    #[test]
    fn tune_theta_requires_both_sides() {
        assert_eq!(tune_theta(&[], &[0.5]), None);
        assert_eq!(tune_theta(&[0.5], &[]), None);
    }
}
