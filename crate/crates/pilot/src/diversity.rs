//! Lexical diversity, repetition, compression, and readability measures.
//!
//! Repetition rate is defined as the complement of n-gram diversity; the
//! compressor is pinned to raw DEFLATE at level 6 so ratios are
//! bit-reproducible.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::corpus::ResponseRecord;

/// Texts shorter than this many UTF-8 bytes get a small-sample flag on
/// their compression ratio.
pub const COMPRESSION_MIN_BYTES: usize = 64;

#[derive(Debug, Error)]
pub enum DiversityError {
    #[error("no tokens")]
    NoTokens,
    #[error("text shorter than n ({len} tokens < n={n})")]
    TooShort { len: usize, n: usize },
    #[error("n must be in 1..=4, got {0}")]
    BadN(usize),
    #[error("empty text")]
    EmptyText,
    #[error("empty group")]
    EmptyGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    /// Token index just past each sentence end.
    pub sentence_bounds: Vec<usize>,
}

impl TokenStream {
    pub fn sentence_count(&self) -> usize {
        self.sentence_bounds.len()
    }
}

/// Word tokens are maximal alphanumeric+apostrophe runs, lowercased.
/// Sentences end at '.', '!' or '?' followed by whitespace or end of text.
pub fn tokenize(text: &str) -> Result<TokenStream, DiversityError> {
    let mut tokens = Vec::new();
    let mut bounds = Vec::new();
    let mut current = String::new();
    let mut tokens_in_sentence = 0usize;

    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() || c == '\'' {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
                tokens_in_sentence += 1;
            }
            if matches!(c, '.' | '!' | '?') {
                let next = chars.get(i + 1);
                if (next.is_none() || next.is_some_and(|n| n.is_whitespace())) && tokens_in_sentence > 0
                {
                    bounds.push(tokens.len());
                    tokens_in_sentence = 0;
                }
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
        tokens_in_sentence += 1;
    }
    if tokens_in_sentence > 0 {
        bounds.push(tokens.len());
    }
    if tokens.is_empty() {
        return Err(DiversityError::NoTokens);
    }
    Ok(TokenStream {
        tokens,
        sentence_bounds: bounds,
    })
}

pub fn type_token_ratio(ts: &TokenStream) -> Result<f64, DiversityError> {
    ngram_diversity(ts, 1)
}

/// Unique contiguous n-grams over total n-grams, computed across the whole
/// token stream (sentence bounds are ignored).
pub fn ngram_diversity(ts: &TokenStream, n: usize) -> Result<f64, DiversityError> {
    if !(1..=4).contains(&n) {
        return Err(DiversityError::BadN(n));
    }
    if ts.tokens.is_empty() {
        return Err(DiversityError::NoTokens);
    }
    if ts.tokens.len() < n {
        return Err(DiversityError::TooShort {
            len: ts.tokens.len(),
            n,
        });
    }
    let total = ts.tokens.len() - n + 1;
    let unique: HashSet<&[String]> = ts.tokens.windows(n).collect();
    Ok(unique.len() as f64 / total as f64)
}

pub fn repetition_rate(ts: &TokenStream, n: usize) -> Result<f64, DiversityError> {
    Ok(1.0 - ngram_diversity(ts, n)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionRatio {
    pub ratio: f64,
    /// Input was below [`COMPRESSION_MIN_BYTES`]; ratio is reported anyway.
    pub small_sample: bool,
}

/// compressed bytes / original bytes, raw DEFLATE stream at level 6.
pub fn compression_ratio(text: &str) -> Result<CompressionRatio, DiversityError> {
    if text.is_empty() {
        return Err(DiversityError::EmptyText);
    }
    let original = text.as_bytes();
    let mut encoder = DeflateEncoder::new(Vec::new(), Compression::new(6));
    encoder.write_all(original).expect("in-memory write");
    let compressed = encoder.finish().expect("in-memory finish");
    Ok(CompressionRatio {
        ratio: compressed.len() as f64 / original.len() as f64,
        small_sample: original.len() < COMPRESSION_MIN_BYTES,
    })
}

/// Syllables = maximal vowel-letter (aeiouy) groups, minus one for a
/// terminal silent 'e' when the word has more than one vowel group, with a
/// floor of one.
pub fn count_syllables(word: &str) -> usize {
    let lower = word.to_lowercase();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0usize;
    let mut in_group = false;
    for c in lower.chars() {
        if is_vowel(c) {
            if !in_group {
                groups += 1;
                in_group = true;
            }
        } else {
            in_group = false;
        }
    }
    if groups > 1 && lower.ends_with('e') {
        // The terminal e only counts as silent when it forms its own group.
        let chars: Vec<char> = lower.chars().collect();
        if chars.len() >= 2 && !is_vowel(chars[chars.len() - 2]) {
            groups -= 1;
        }
    }
    groups.max(1)
}

/// Flesch-Kincaid grade level:
/// `0.39 * (words/sentences) + 11.8 * (syllables/words) - 15.59`.
pub fn fk_grade_level(ts: &TokenStream) -> Result<f64, DiversityError> {
    if ts.tokens.is_empty() || ts.sentence_bounds.is_empty() {
        return Err(DiversityError::NoTokens);
    }
    let words = ts.tokens.len() as f64;
    let sentences = ts.sentence_bounds.len() as f64;
    let syllables: usize = ts.tokens.iter().map(|t| count_syllables(t)).sum();
    Ok(0.39 * (words / sentences) + 11.8 * (syllables as f64 / words) - 15.59)
}

/// Group-mean diversity scores. Per-metric means skip texts that fail the
/// metric's precondition; `exclusions` counts them per metric name.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiversityScores {
    pub ttr: Option<f64>,
    pub ngram_diversity: BTreeMap<usize, f64>,
    pub repetition: BTreeMap<usize, f64>,
    pub compression_ratio: Option<f64>,
    pub fk_grade: Option<f64>,
    pub mean_length_chars: Option<f64>,
    pub exclusions: BTreeMap<String, usize>,
    pub n_texts: usize,
}

pub fn diversity_summary(group: &[ResponseRecord]) -> Result<DiversityScores, DiversityError> {
    if group.is_empty() {
        return Err(DiversityError::EmptyGroup);
    }
    let mut exclusions: BTreeMap<String, usize> = BTreeMap::new();
    let exclude = |name: &str, tally: &mut BTreeMap<String, usize>| {
        *tally.entry(name.to_owned()).or_insert(0) += 1;
    };

    let mut ttr_vals = Vec::new();
    let mut ngram_vals: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut compression_vals = Vec::new();
    let mut fk_vals = Vec::new();
    let mut lengths = Vec::new();

    for record in group {
        let text = &record.response_text;
        lengths.push(text.chars().count() as f64);

        match compression_ratio(text) {
            Ok(c) => compression_vals.push(c.ratio),
            Err(_) => exclude("compression_ratio", &mut exclusions),
        }

        let ts = match tokenize(text) {
            Ok(ts) => ts,
            Err(_) => {
                exclude("ttr", &mut exclusions);
                exclude("fk_grade", &mut exclusions);
                for n in 1..=4 {
                    exclude(&format!("{n}-gram"), &mut exclusions);
                }
                continue;
            }
        };
        match type_token_ratio(&ts) {
            Ok(v) => ttr_vals.push(v),
            Err(_) => exclude("ttr", &mut exclusions),
        }
        for n in 1..=4 {
            match ngram_diversity(&ts, n) {
                Ok(v) => ngram_vals.entry(n).or_default().push(v),
                Err(_) => exclude(&format!("{n}-gram"), &mut exclusions),
            }
        }
        match fk_grade_level(&ts) {
            Ok(v) => fk_vals.push(v),
            Err(_) => exclude("fk_grade", &mut exclusions),
        }
    }

    let mean = |vals: &[f64]| -> Option<f64> {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    let ngram_diversity: BTreeMap<usize, f64> = ngram_vals
        .iter()
        .filter_map(|(n, vals)| mean(vals).map(|m| (*n, m)))
        .collect();
    let repetition = ngram_diversity.iter().map(|(n, d)| (*n, 1.0 - d)).collect();

    Ok(DiversityScores {
        ttr: mean(&ttr_vals),
        ngram_diversity,
        repetition,
        compression_ratio: mean(&compression_vals),
        fk_grade: mean(&fk_vals),
        mean_length_chars: mean(&lengths),
        exclusions,
        n_texts: group.len(),
    })
}
