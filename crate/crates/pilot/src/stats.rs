//! Automated quality flags (self-identification, placeholder text) and the
//! statistical tests applied to human ratings.
//!
//! The self-identification pattern set is versioned in
//! `resources/self_id_patterns.txt`; reports cite the version. p-values are
//! intentionally not computed: callers compare statistics against critical
//! values.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::corpus::{RatingRecord, ResponseRecord};

const SELF_ID_PATTERNS: &str = include_str!("../resources/self_id_patterns.txt");

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {need} groups, got {got}")]
    TooFewGroups { need: usize, got: usize },
    #[error("group {index} has fewer than {need} values")]
    GroupTooSmall { index: usize, need: usize },
    #[error("zero within-group variance")]
    ZeroWithinVariance,
    #[error("all values tied")]
    AllValuesTied,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired values, got {0}")]
    TooFewPairs(usize),
    #[error("zero variance in input")]
    ZeroVariance,
    #[error("empty group")]
    EmptyGroup,
    #[error("empty ratings input")]
    EmptyRatings,
    #[error("unknown rating metric: {0}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityFlags {
    pub persona_repetition: bool,
    pub placeholder: bool,
    /// Byte offsets into the original text.
    pub matched_spans: Vec<(usize, usize)>,
}

/// Version line of the bundled self-identification pattern set.
pub fn pattern_set_version() -> &'static str {
    SELF_ID_PATTERNS
        .lines()
        .next()
        .unwrap_or("version unknown")
        .trim()
}

fn self_id_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let fragments: Vec<&str> = SELF_ID_PATTERNS
            .lines()
            .skip(1) // version header
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        // Phrases count only at sentence-initial or post-punctuation
        // positions.
        let pattern = format!(r"(?mi)(?:^\s*|[.!?;:]\s+)((?:{})\b)", fragments.join("|"));
        Regex::new(&pattern).expect("bundled pattern set compiles")
    })
}

/// Flags explicit self-identification phrases ("As a researcher, ...").
pub fn persona_repetition_flag(text: &str) -> QualityFlags {
    let spans: Vec<(usize, usize)> = self_id_regex()
        .captures_iter(text)
        .filter_map(|c| c.get(1))
        .map(|m| (m.start(), m.end()))
        .collect();
    QualityFlags {
        persona_repetition: !spans.is_empty(),
        placeholder: false,
        matched_spans: spans,
    }
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]{2,})\]").expect("static regex compiles"))
}

/// Flags bracketed placeholder spans like "[Professor's Name]": at least two
/// characters with at least one letter, plus an uppercase letter or an
/// internal space.
pub fn placeholder_flag(text: &str) -> QualityFlags {
    let spans: Vec<(usize, usize)> = placeholder_regex()
        .captures_iter(text)
        .filter_map(|c| c.get(1))
        .filter(|m| {
            let inner = m.as_str();
            let has_alpha = inner.chars().any(|c| c.is_alphabetic());
            let has_upper = inner.chars().any(|c| c.is_uppercase());
            let has_internal_space = inner.trim().contains(' ');
            has_alpha && (has_upper || has_internal_space)
        })
        .map(|m| (m.start(), m.end()))
        .collect();
    QualityFlags {
        persona_repetition: false,
        placeholder: !spans.is_empty(),
        matched_spans: spans,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagKind {
    PersonaRepetition,
    Placeholder,
}

/// Fraction of group members whose flag is set.
pub fn flag_rate(group: &[ResponseRecord], which: FlagKind) -> Result<f64, StatsError> {
    if group.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    let flagged = group
        .iter()
        .filter(|r| match which {
            FlagKind::PersonaRepetition => {
                persona_repetition_flag(&r.response_text).persona_repetition
            }
            FlagKind::Placeholder => placeholder_flag(&r.response_text).placeholder,
        })
        .count();
    Ok(flagged as f64 / group.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DegreesOfFreedom {
    /// (between, within) for the ANOVA F statistic.
    F(usize, usize),
    /// k - 1 for Kruskal-Wallis H.
    H(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df: DegreesOfFreedom,
    pub n_groups: usize,
    pub n_total: usize,
}

/// One-way ANOVA: `F = (SSB/(k-1)) / (SSW/(N-k))`.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups { need: 2, got: k });
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::GroupTooSmall { index: i, need: 2 });
        }
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand_mean = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (mean - grand_mean).powi(2);
        ssw += g.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    if ssw <= 0.0 {
        return Err(StatsError::ZeroWithinVariance);
    }
    let df_between = k - 1;
    let df_within = n - k;
    let f = (ssb / df_between as f64) / (ssw / df_within as f64);
    Ok(TestResult {
        statistic: f,
        df: DegreesOfFreedom::F(df_between, df_within),
        n_groups: k,
        n_total: n,
    })
}

/// Kruskal-Wallis H with midrank ties and the standard tie-correction
/// divisor `1 - sum(t^3 - t)/(N^3 - N)`.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups { need: 2, got: k });
    }
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(StatsError::GroupTooSmall { index: i, need: 1 });
        }
    }
    let mut pooled: Vec<(f64, usize)> = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        for v in g {
            pooled.push((*v, gi));
        }
    }
    let n = pooled.len();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pooled.first().map(|p| p.0) == pooled.last().map(|p| p.0) {
        return Err(StatsError::AllValuesTied);
    }

    // Midranks and tie counts.
    let mut ranks = vec![0.0f64; n];
    let mut tie_term = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for slot in ranks.iter_mut().take(j).skip(i) {
            *slot = midrank;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }

    let mut rank_sums = vec![0.0f64; k];
    for ((_, gi), rank) in pooled.iter().zip(&ranks) {
        rank_sums[*gi] += rank;
    }
    let nf = n as f64;
    let mut h = 0.0;
    for (gi, g) in groups.iter().enumerate() {
        h += rank_sums[gi].powi(2) / g.len() as f64;
    }
    h = 12.0 / (nf * (nf + 1.0)) * h - 3.0 * (nf + 1.0);
    let correction = 1.0 - tie_term / (nf * nf * nf - nf);
    h /= correction;

    Ok(TestResult {
        statistic: h,
        df: DegreesOfFreedom::H(k - 1),
        n_groups: k,
        n_total: n,
    })
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewPairs(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

pub const RATING_METRICS: [&str; 4] =
    ["human_likeness", "content_adherence", "quality", "helpfulness"];

#[derive(Debug, Clone, PartialEq)]
pub struct LikertCell {
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator); absent when n = 1.
    pub sd: Option<f64>,
    pub n: usize,
}

pub type LikertTable = BTreeMap<(String, String), LikertCell>;

/// Per-level mean/sd/n for each of the four rating metrics. `level_of`
/// assigns each rating to a factor level.
pub fn likert_summary(
    ratings: &[RatingRecord],
    level_of: impl Fn(&RatingRecord) -> Option<String>,
) -> Result<LikertTable, StatsError> {
    if ratings.is_empty() {
        return Err(StatsError::EmptyRatings);
    }
    let mut buckets: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for rating in ratings {
        let Some(level) = level_of(rating) else {
            continue;
        };
        for metric in RATING_METRICS {
            let score = rating.score(metric).expect("known metric") as f64;
            buckets
                .entry((level.clone(), metric.to_owned()))
                .or_default()
                .push(score);
        }
    }
    let mut table = LikertTable::new();
    for (key, values) in buckets {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        table.insert(key, LikertCell { mean, sd, n });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_fixtures::record_with_text;

    #[test]
    fn self_identification_positive_cases() {
        for text in [
            "As a researcher, I believe the data is clear.",
            "as an engineer I see it differently.",
            "Well then. As a teacher, grading matters.",
            "I am a film critic with opinions.",
            "Being a historian, context is everything.",
            "Speaking as your mentor, take the job.",
        ] {
            let flags = persona_repetition_flag(text);
            assert!(flags.persona_repetition, "expected flag on: {text}");
            assert!(!flags.matched_spans.is_empty());
        }
    }

    #[test]
    fn self_identification_negative_cases() {
        for text in [
            "The results are clear.",
            "It works as a charm.",
            "She described him as a friend.",
            "This functions as an adapter.",
        ] {
            let flags = persona_repetition_flag(text);
            assert!(!flags.persona_repetition, "unexpected flag on: {text}");
            assert!(flags.matched_spans.is_empty());
        }
    }

    #[test]
    fn self_identification_spans_index_original_text() {
        let text = "Sure. As a researcher, I agree.";
        let flags = persona_repetition_flag(text);
        let (start, end) = flags.matched_spans[0];
        assert_eq!(&text[start..end], "As a");
    }

    #[test]
    fn placeholder_cases() {
        assert!(placeholder_flag("Dear [Professor's Name],").placeholder);
        assert!(placeholder_flag("Contact [SUPPORT] today.").placeholder);
        assert!(!placeholder_flag("array[3]").placeholder);
        assert!(!placeholder_flag("list[i]").placeholder);
        assert!(!placeholder_flag("no brackets here").placeholder);
    }

    #[test]
    fn flag_rates() {
        let group = vec![
            record_with_text("a", "As a researcher, hello."),
            record_with_text("b", "Plain text."),
            record_with_text("c", "More plain text."),
            record_with_text("d", "Nothing here."),
        ];
        let rate = flag_rate(&group, FlagKind::PersonaRepetition).unwrap();
        assert_eq!(rate, 0.25);
        assert_eq!(flag_rate(&group[1..], FlagKind::PersonaRepetition).unwrap(), 0.0);

        let all = vec![
            record_with_text("a", "Dear [Professor's Name]"),
            record_with_text("b", "Hi [Your Name]"),
        ];
        assert_eq!(flag_rate(&all, FlagKind::Placeholder).unwrap(), 1.0);
        assert!(flag_rate(&[], FlagKind::Placeholder).is_err());
    }

    #[test]
    fn anova_hand_values() {
        let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]])
            .unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.df, DegreesOfFreedom::F(2, 6));

        let r = one_way_anova(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!((r.statistic - 8.0).abs() < 1e-12);
        assert_eq!(r.df, DegreesOfFreedom::F(1, 2));

        assert!(matches!(
            one_way_anova(&[vec![1.0, 1.0], vec![2.0, 2.0]]),
            Err(StatsError::ZeroWithinVariance)
        ));
        assert!(one_way_anova(&[vec![1.0, 2.0]]).is_err());
        assert!(one_way_anova(&[vec![1.0], vec![2.0, 3.0]]).is_err());
    }

    #[test]
    fn anova_invariances() {
        let base = vec![vec![1.0, 2.0, 5.0], vec![3.0, 4.0, 1.5]];
        let f0 = one_way_anova(&base).unwrap().statistic;
        let shifted: Vec<Vec<f64>> = base
            .iter()
            .map(|g| g.iter().map(|v| v + 17.0).collect())
            .collect();
        let scaled: Vec<Vec<f64>> = base
            .iter()
            .map(|g| g.iter().map(|v| v * 2.5).collect())
            .collect();
        assert!((one_way_anova(&shifted).unwrap().statistic - f0).abs() < 1e-9);
        assert!((one_way_anova(&scaled).unwrap().statistic - f0).abs() < 1e-9);
    }

    #[test]
    fn kruskal_hand_values() {
        let r = kruskal_wallis(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!((r.statistic - 2.4).abs() < 1e-12, "{}", r.statistic);
        assert_eq!(r.df, DegreesOfFreedom::H(1));

        let r = kruskal_wallis(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap();
        assert!((r.statistic - 0.6).abs() < 1e-12, "{}", r.statistic);

        assert!(matches!(
            kruskal_wallis(&[vec![5.0, 5.0], vec![5.0, 5.0]]),
            Err(StatsError::AllValuesTied)
        ));
        assert!(kruskal_wallis(&[vec![1.0]]).is_err());
    }

    #[test]
    fn kruskal_monotone_invariance() {
        let base = vec![vec![1.0, 2.0, 7.0], vec![3.0, 4.0], vec![0.5, 6.0]];
        let h0 = kruskal_wallis(&base).unwrap().statistic;
        let transformed: Vec<Vec<f64>> = base
            .iter()
            .map(|g| g.iter().map(|v| v.exp()).collect())
            .collect();
        assert!((kruskal_wallis(&transformed).unwrap().statistic - h0).abs() < 1e-9);
    }

    #[test]
    fn pearson_values() {
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        let r = pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-12);

        assert!(pearson_r(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(matches!(
            pearson_r(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(StatsError::ZeroVariance)
        ));
    }

    #[test]
    fn likert_summary_values() {
        let mk = |id: &str, rater: &str, q: i64| RatingRecord {
            response_id: id.to_owned(),
            rater_id: rater.to_owned(),
            human_likeness: q,
            content_adherence: q,
            quality: q,
            helpfulness: q,
            feedback: None,
        };
        let ratings = vec![mk("a", "r1", 3), mk("b", "r1", 3), mk("c", "r1", 2), mk("d", "r2", 3)];
        let table = likert_summary(&ratings, |r| Some(r.rater_id.clone())).unwrap();
        let cell = &table[&("r1".to_owned(), "quality".to_owned())];
        assert!((cell.mean - 8.0 / 3.0).abs() < 1e-12);
        assert!((cell.sd.unwrap() - 0.5773502691896257).abs() < 1e-12);
        assert_eq!(cell.n, 3);

        let single = &table[&("r2".to_owned(), "quality".to_owned())];
        assert_eq!(single.mean, 3.0);
        assert!(single.sd.is_none());

        let uniform = likert_summary(&ratings[..2], |r| Some(r.rater_id.clone())).unwrap();
        let cell = &uniform[&("r1".to_owned(), "helpfulness".to_owned())];
        assert_eq!(cell.mean, 3.0);
        assert_eq!(cell.sd, Some(0.0));

        assert!(likert_summary(&[], |_| None).is_err());
    }

    #[test]
    fn pattern_set_is_versioned() {
        assert!(pattern_set_version().starts_with("version"));
    }
}
