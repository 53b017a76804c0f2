//! JSONL-backed corpus of generated responses plus the ratings CSV.
//!
//! Records round-trip exactly: unknown input fields are preserved opaquely
//! and re-emitted, and timestamps keep their original text form.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::prompt::{ContentType, SteeringCondition};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse failure: {message}")]
    ParseLine { line: usize, message: String },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invalid timestamp {value}")]
    BadTimestamp { line: usize, value: String },
    #[error("record {id}: response_text is empty")]
    EmptyResponse { id: String },
    #[error("group key is empty")]
    EmptyGroupKey,
    #[error("group key has duplicate field {0}")]
    DuplicateGroupField(String),
    #[error("unknown field: {0}")]
    UnknownField(String),
    #[error("rating {response_id}: score {value} outside {{1,2,3}}")]
    BadRating { response_id: String, value: i64 },
    #[error("ratings file: {0}")]
    Ratings(String),
}

/// One generated response with its full experimental coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub base_persona: String,
    pub sub_persona: String,
    pub condition: SteeringCondition,
    pub model_id: String,
    pub content_type: ContentType,
    pub request_id: String,
    pub request_text: String,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    /// RFC 3339 UTC, kept verbatim so round-trips are byte-exact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    /// Set when generation failed for this matrix cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

pub type Corpus = Vec<ResponseRecord>;

/// Reads a corpus file: one record per non-blank line, file order preserved,
/// ids unique.
pub fn read_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut corpus = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::ParseLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ResponseRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::ParseLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if let Some(ts) = &record.created_at {
            if chrono::DateTime::parse_from_rfc3339(ts).is_err() {
                return Err(CorpusError::BadTimestamp {
                    line: line_no,
                    value: ts.clone(),
                });
            }
        }
        if record.response_text.is_empty() && record.error.is_none() {
            return Err(CorpusError::EmptyResponse {
                id: record.id.clone(),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        corpus.push(record);
    }
    Ok(corpus)
}

pub fn write_jsonl(path: &Path, corpus: &[ResponseRecord]) -> Result<(), CorpusError> {
    let mut file = fs::File::create(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    for record in corpus {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(file, "{line}").map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

/// Fills absent timestamps with `now` and flags each filled record with an
/// extra `created_at_filled` field. Returns the number filled.
pub fn fill_missing_timestamps(corpus: &mut [ResponseRecord], now: &str) -> usize {
    let mut filled = 0;
    for record in corpus.iter_mut() {
        if record.created_at.is_none() {
            record.created_at = Some(now.to_owned());
            record.extra.insert("created_at_filled".into(), Value::Bool(true));
            filled += 1;
        }
    }
    filled
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupField {
    Condition,
    ModelId,
    ContentType,
    BasePersona,
}

impl GroupField {
    fn value_of(&self, record: &ResponseRecord) -> String {
        match self {
            GroupField::Condition => record.condition.to_string(),
            GroupField::ModelId => record.model_id.clone(),
            GroupField::ContentType => record.content_type.as_str().to_owned(),
            GroupField::BasePersona => record.base_persona.clone(),
        }
    }
}

impl fmt::Display for GroupField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GroupField::Condition => "condition",
            GroupField::ModelId => "model_id",
            GroupField::ContentType => "content_type",
            GroupField::BasePersona => "base_persona",
        };
        write!(f, "{s}")
    }
}

impl FromStr for GroupField {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "condition" => Ok(GroupField::Condition),
            "model_id" => Ok(GroupField::ModelId),
            "content_type" => Ok(GroupField::ContentType),
            "base_persona" => Ok(GroupField::BasePersona),
            other => Err(CorpusError::UnknownField(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupKey {
    fields: Vec<GroupField>,
}

impl GroupKey {
    pub fn new(fields: Vec<GroupField>) -> Result<Self, CorpusError> {
        if fields.is_empty() {
            return Err(CorpusError::EmptyGroupKey);
        }
        let mut seen = HashSet::new();
        for f in &fields {
            if !seen.insert(*f) {
                return Err(CorpusError::DuplicateGroupField(f.to_string()));
            }
        }
        Ok(GroupKey { fields })
    }

    pub fn parse(spec: &str) -> Result<Self, CorpusError> {
        let fields = spec
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<_>, _>>()?;
        GroupKey::new(fields)
    }

    pub fn fields(&self) -> &[GroupField] {
        &self.fields
    }

    pub fn tuple_of(&self, record: &ResponseRecord) -> Vec<String> {
        self.fields.iter().map(|f| f.value_of(record)).collect()
    }
}

/// Partitions the corpus; within-group order follows corpus order.
pub fn group_by(corpus: &[ResponseRecord], key: &GroupKey) -> BTreeMap<Vec<String>, Vec<ResponseRecord>> {
    let mut groups: BTreeMap<Vec<String>, Vec<ResponseRecord>> = BTreeMap::new();
    for record in corpus {
        groups.entry(key.tuple_of(record)).or_default().push(record.clone());
    }
    groups
}

/// Keeps records whose named field equals `value`; order preserved.
pub fn filter(corpus: &[ResponseRecord], field: &str, value: &str) -> Result<Corpus, CorpusError> {
    let accessor = |r: &ResponseRecord| -> Result<String, CorpusError> {
        Ok(match field {
            "id" => r.id.clone(),
            "base_persona" => r.base_persona.clone(),
            "sub_persona" => r.sub_persona.clone(),
            "condition" => r.condition.to_string(),
            "model_id" => r.model_id.clone(),
            "content_type" => r.content_type.as_str().to_owned(),
            "request_id" => r.request_id.clone(),
            other => return Err(CorpusError::UnknownField(other.to_owned())),
        })
    };
    let mut out = Vec::new();
    for record in corpus {
        if accessor(record)? == value {
            out.push(record.clone());
        }
    }
    Ok(out)
}

/// One human rating of a response on four 3-point Likert metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub response_id: String,
    pub rater_id: String,
    pub human_likeness: i64,
    pub content_adherence: i64,
    pub quality: i64,
    pub helpfulness: i64,
    #[serde(default)]
    pub feedback: Option<String>,
}

impl RatingRecord {
    pub fn score(&self, metric: &str) -> Option<i64> {
        match metric {
            "human_likeness" => Some(self.human_likeness),
            "content_adherence" => Some(self.content_adherence),
            "quality" => Some(self.quality),
            "helpfulness" => Some(self.helpfulness),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        for metric in ["human_likeness", "content_adherence", "quality", "helpfulness"] {
            let value = self.score(metric).expect("known metric");
            if !(1..=3).contains(&value) {
                return Err(CorpusError::BadRating {
                    response_id: self.response_id.clone(),
                    value,
                });
            }
        }
        Ok(())
    }
}

pub fn read_ratings_csv(path: &Path) -> Result<Vec<RatingRecord>, CorpusError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CorpusError::Ratings(e.to_string()))?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let record: RatingRecord = row.map_err(|e| CorpusError::Ratings(e.to_string()))?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

/// Builders for tests and bundled fixtures.
pub mod test_fixtures {
    use super::*;

    pub fn record_with_text(id: &str, text: &str) -> ResponseRecord {
        ResponseRecord {
            id: id.to_owned(),
            base_persona: "researcher".to_owned(),
            sub_persona: "researcher-1".to_owned(),
            condition: SteeringCondition::NPS,
            model_id: "stub-a".to_owned(),
            content_type: ContentType::PersonalWriting,
            request_id: "r1".to_owned(),
            request_text: "Write something.".to_owned(),
            response_text: text.to_owned(),
            explanation: None,
            created_at: None,
            error: None,
            extra: Map::new(),
        }
    }

    pub fn record_with_coords(
        id: &str,
        condition: SteeringCondition,
        model_id: &str,
        request_id: &str,
        base_persona: &str,
        text: &str,
    ) -> ResponseRecord {
        let mut r = record_with_text(id, text);
        r.condition = condition;
        r.model_id = model_id.to_owned();
        r.request_id = request_id.to_owned();
        r.base_persona = base_persona.to_owned();
        r
    }
}

#[cfg(test)]
mod tests {
    use super::test_fixtures::*;
    use super::*;

    #[test]
    fn jsonl_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut a = record_with_text("a", "hello there");
        a.extra.insert("custom".into(), Value::String("kept".into()));
        a.created_at = Some("2025-01-02T03:04:05Z".into());
        let b = record_with_text("b", "general kenobi");
        write_jsonl(&path, &[a.clone(), b.clone()]).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let good = serde_json::to_string(&record_with_text("a", "x")).unwrap();
        fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        let err = read_jsonl(&path).unwrap_err();
        assert!(err.to_string().starts_with("line 2: parse failure"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_jsonl(&path, &[record_with_text("a", "x"), record_with_text("a", "y")]).unwrap();
        assert!(matches!(
            read_jsonl(&path),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn grouping_is_a_partition() {
        let mut corpus = Vec::new();
        for (i, c) in [SteeringCondition::NPS, SteeringCondition::SBS, SteeringCondition::HPS]
            .iter()
            .enumerate()
        {
            for j in 0..2 {
                corpus.push(record_with_coords(
                    &format!("r{i}{j}"),
                    *c,
                    "m1",
                    "req",
                    "base",
                    "text here",
                ));
            }
        }
        let key = GroupKey::parse("condition").unwrap();
        let groups = group_by(&corpus, &key);
        assert_eq!(groups.len(), 3);
        assert!(groups.values().all(|g| g.len() == 2));
        assert_eq!(groups.values().map(Vec::len).sum::<usize>(), corpus.len());

        // Adding model_id on a single-model corpus leaves the partition alone.
        let key2 = GroupKey::parse("condition,model_id").unwrap();
        let groups2 = group_by(&corpus, &key2);
        assert_eq!(groups2.len(), 3);

        assert!(group_by(&[], &key).is_empty());
    }

    #[test]
    fn group_key_validation() {
        assert!(matches!(GroupKey::new(vec![]), Err(CorpusError::EmptyGroupKey)));
        assert!(matches!(
            GroupKey::new(vec![GroupField::Condition, GroupField::Condition]),
            Err(CorpusError::DuplicateGroupField(_))
        ));
        assert!(GroupKey::parse("nonsense").is_err());
    }

    #[test]
    fn filter_by_field() {
        let corpus: Vec<ResponseRecord> = SteeringCondition::ALL
            .iter()
            .flat_map(|c| {
                (0..30).map(move |i| {
                    record_with_coords(&format!("{c}{i}"), *c, "m", "req", "base", "text")
                })
            })
            .collect();
        assert_eq!(corpus.len(), 90);
        let sbs = filter(&corpus, "condition", "SBS").unwrap();
        assert_eq!(sbs.len(), 30);
        assert!(filter(&corpus, "nonexistent", "x").is_err());
    }

    #[test]
    fn ratings_csv_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.csv");
        fs::write(
            &path,
            "response_id,rater_id,human_likeness,content_adherence,quality,helpfulness,feedback\n\
             a,r1,3,2,3,1,fine\n\
             b,r1,2,2,2,2,\n",
        )
        .unwrap();
        let ratings = read_ratings_csv(&path).unwrap();
        assert_eq!(ratings.len(), 2);
        assert_eq!(ratings[0].human_likeness, 3);

        fs::write(
            &path,
            "response_id,rater_id,human_likeness,content_adherence,quality,helpfulness,feedback\n\
             a,r1,5,2,3,1,\n",
        )
        .unwrap();
        assert!(matches!(
            read_ratings_csv(&path),
            Err(CorpusError::BadRating { .. })
        ));
    }

    #[test]
    fn fill_timestamps_flags_records() {
        let mut corpus = vec![record_with_text("a", "x")];
        let filled = fill_missing_timestamps(&mut corpus, "2025-06-01T00:00:00Z");
        assert_eq!(filled, 1);
        assert_eq!(corpus[0].created_at.as_deref(), Some("2025-06-01T00:00:00Z"));
        assert_eq!(corpus[0].extra["created_at_filled"], Value::Bool(true));
    }
}
