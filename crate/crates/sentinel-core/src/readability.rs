//! Readability scoring: Flesch Reading Ease and Gunning Fog over plain
//! text, with a heuristic syllable counter.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SentinelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
    pub complex_words: usize,
}

/// Vowel-group syllable count with silent-e and common suffix corrections.
/// Always at least 1 for a non-empty word.
pub fn count_syllables(word: &str) -> usize {
    let w: String = word.chars().filter(|c| c.is_alphabetic()).collect::<String>().to_lowercase();
    if w.is_empty() {
        return 0;
    }
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let chars: Vec<char> = w.chars().collect();
    let mut groups = 0usize;
    let mut prev_vowel = false;
    for &c in &chars {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    // Silent final e, except "-le" after a consonant (table, little).
    if chars.len() >= 2 && chars[chars.len() - 1] == 'e' && !is_vowel(chars[chars.len() - 2]) {
        let le_after_consonant = chars.len() >= 3
            && chars[chars.len() - 2] == 'l'
            && !is_vowel(chars[chars.len() - 3]);
        if !le_after_consonant && groups > 1 {
            groups -= 1;
        }
    }
    // "-ed" after a non-t/d consonant does not add a syllable (walked).
    if w.len() >= 3 && w.ends_with("ed") {
        let before = chars[chars.len() - 3];
        if !is_vowel(before) && before != 't' && before != 'd' && groups > 1 {
            groups -= 1;
        }
    }
    groups.max(1)
}

/// True when the word counts toward Gunning Fog's complex-word tally:
/// three or more syllables, not a proper noun, and not pushed to three
/// syllables only by an -es/-ed/-ing inflection.
fn is_complex(word: &str) -> bool {
    let syl = count_syllables(word);
    if syl < 3 {
        return false;
    }
    if word.chars().next().is_some_and(|c| c.is_uppercase()) {
        return false;
    }
    let lower: String = word.chars().filter(|c| c.is_alphabetic()).collect::<String>().to_lowercase();
    for suffix in ["ing", "es", "ed"] {
        if let Some(stem) = lower.strip_suffix(suffix) {
            if !stem.is_empty() && count_syllables(stem) < 3 {
                return false;
            }
        }
    }
    true
}

/// Deterministic counts: sentences split on runs of [.!?], words are
/// whitespace tokens containing a letter. Text with words but no terminal
/// punctuation counts as one sentence.
pub fn analyze_text(text: &str) -> TextStats {
    let mut sentences = 0usize;
    let mut in_sentence = false;
    let mut has_alpha = false;
    for c in text.chars() {
        if matches!(c, '.' | '!' | '?') {
            if in_sentence && has_alpha {
                sentences += 1;
            }
            in_sentence = false;
            has_alpha = false;
        } else if !c.is_whitespace() || in_sentence {
            in_sentence = true;
            has_alpha |= c.is_alphabetic();
        }
    }
    if in_sentence && has_alpha {
        sentences += 1;
    }

    let mut words = 0usize;
    let mut syllables = 0usize;
    let mut complex_words = 0usize;
    for token in text.split_whitespace() {
        if !token.chars().any(|c| c.is_alphabetic()) {
            continue;
        }
        words += 1;
        syllables += count_syllables(token);
        if is_complex(token) {
            complex_words += 1;
        }
    }
    TextStats { sentences, words, syllables, complex_words }
}

pub fn flesch_reading_ease(stats: &TextStats) -> Result<f64> {
    if stats.words == 0 || stats.sentences == 0 {
        return Err(SentinelError::InvalidArgument(
            "readability undefined without words and sentences".into(),
        ));
    }
    Ok(206.835
        - 1.015 * stats.words as f64 / stats.sentences as f64
        - 84.6 * stats.syllables as f64 / stats.words as f64)
}

pub fn gunning_fog(stats: &TextStats) -> Result<f64> {
    if stats.words == 0 || stats.sentences == 0 {
        return Err(SentinelError::InvalidArgument(
            "readability undefined without words and sentences".into(),
        ));
    }
    Ok(0.4
        * (stats.words as f64 / stats.sentences as f64
            + 100.0 * stats.complex_words as f64 / stats.words as f64))
}

/// Grade presentation: numeric through grade 12, then categorical.
pub fn fog_grade_band(fog: f64) -> String {
    let grade = fog.round();
    if grade <= 12.0 {
        format!("{grade:.0}")
    } else if grade <= 16.0 {
        "college".to_string()
    } else {
        "college graduate".to_string()
    }
}
