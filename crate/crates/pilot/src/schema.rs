//! PILOT psycholinguistic profiles: parsing, validation, flattening,
//! averaging, and stability-tier variation checks.
//!
//! The canonical dimension tree lives in `resources/schema.json` and is the
//! single source of truth for leaf paths and their ordering. The resource
//! reproduces the published listing with its truncated closing braces
//! repaired; no dimensions were added or removed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde_json::{Map, Value};
use thiserror::Error;

pub const SCHEMA_JSON: &str = include_str!("../resources/schema.json");

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed profile document: {0}")]
    Malformed(String),
    #[error("missing dimension: {0}")]
    MissingDimension(String),
    #[error("unknown dimension: {0}")]
    UnknownDimension(String),
    #[error("{path}: score {value} out of range [0,100]")]
    OutOfRange { path: String, value: f64 },
    #[error("{path}: non-numeric score")]
    NonNumeric { path: String },
    #[error("cannot average an empty profile list")]
    EmptyInput,
    #[error("profile schema mismatch at {0}")]
    SchemaMismatch(String),
    #[error("variation report needs at least 2 profiles, got {0}")]
    TooFewProfiles(usize),
}

/// A dotted path from stability tier down to a leaf dimension,
/// e.g. `variable.emotional_tone.swear_words`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DimensionPath {
    segments: Vec<String>,
}

impl DimensionPath {
    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn leaf(&self) -> &str {
        self.segments.last().expect("paths are non-empty")
    }
}

impl fmt::Display for DimensionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.segments.join("."))
    }
}

impl FromStr for DimensionPath {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let path = DimensionPath {
            segments: s.split('.').map(str::to_owned).collect(),
        };
        if canonical_paths().contains(&path) {
            Ok(path)
        } else {
            Err(SchemaError::UnknownDimension(s.to_owned()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StabilityTier {
    Stable,
    SemiStable,
    Variable,
}

impl StabilityTier {
    /// Hard upper bound on allowed cross-context variation, in percentage points.
    pub fn max_variation(self) -> f64 {
        match self {
            StabilityTier::Stable => 5.0,
            StabilityTier::SemiStable => 15.0,
            StabilityTier::Variable => 30.0,
        }
    }

    fn from_segment(seg: &str) -> Option<Self> {
        match seg {
            "stable" => Some(StabilityTier::Stable),
            "semi_stable" => Some(StabilityTier::SemiStable),
            "variable" => Some(StabilityTier::Variable),
            _ => None,
        }
    }
}

impl fmt::Display for StabilityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StabilityTier::Stable => "stable",
            StabilityTier::SemiStable => "semi_stable",
            StabilityTier::Variable => "variable",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSource {
    Elicited,
    Averaged,
    Manual,
}

/// A complete profile: every canonical leaf path mapped to a 0-100 score.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotProfile {
    pub persona_id: String,
    pub source: ProfileSource,
    values: BTreeMap<DimensionPath, f64>,
}

impl PilotProfile {
    /// Builds a profile with every leaf set to the same score.
    pub fn uniform(persona_id: &str, score: f64) -> Result<Self, SchemaError> {
        let pairs: Vec<(DimensionPath, f64)> = canonical_paths()
            .iter()
            .map(|p| (p.clone(), score))
            .collect();
        unflatten(persona_id, ProfileSource::Manual, &pairs)
    }

    pub fn score(&self, path: &DimensionPath) -> Option<f64> {
        self.values.get(path).copied()
    }

    pub fn set_score(&mut self, path: &DimensionPath, score: f64) -> Result<(), SchemaError> {
        if !(0.0..=100.0).contains(&score) {
            return Err(SchemaError::OutOfRange {
                path: path.to_string(),
                value: score,
            });
        }
        match self.values.get_mut(path) {
            Some(slot) => {
                *slot = score;
                Ok(())
            }
            None => Err(SchemaError::UnknownDimension(path.to_string())),
        }
    }
}

/// All leaf paths of the canonical schema, in depth-first listing order.
pub fn canonical_paths() -> &'static [DimensionPath] {
    static PATHS: OnceLock<Vec<DimensionPath>> = OnceLock::new();
    PATHS.get_or_init(|| {
        let doc: Value = serde_json::from_str(SCHEMA_JSON).expect("bundled schema is valid JSON");
        let tree = doc
            .get("stability_hierarchy")
            .and_then(Value::as_object)
            .expect("bundled schema has a stability_hierarchy object");
        let mut paths = Vec::new();
        let mut prefix = Vec::new();
        collect_leaves(tree, &mut prefix, &mut paths);
        paths
    })
}

fn collect_leaves(node: &Map<String, Value>, prefix: &mut Vec<String>, out: &mut Vec<DimensionPath>) {
    for (key, child) in node {
        prefix.push(key.clone());
        match child.as_object() {
            Some(obj) if !obj.is_empty() => collect_leaves(obj, prefix, out),
            _ => out.push(DimensionPath {
                segments: prefix.clone(),
            }),
        }
        prefix.pop();
    }
}

/// Parses and validates a profile document (see the file format in the
/// module docs). Accepts iff the document's leaf set equals the canonical
/// leaf set and every score is a number in [0,100].
pub fn parse_profile(document: &str) -> Result<PilotProfile, SchemaError> {
    let doc: Value =
        serde_json::from_str(document).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| SchemaError::Malformed("top level is not an object".into()))?;

    let persona_id = obj
        .get("persona_id")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_owned();
    let source = match obj.get("source") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| SchemaError::Malformed(format!("invalid source: {v}")))?,
        None => ProfileSource::Manual,
    };
    let tree = obj
        .get("stability_hierarchy")
        .and_then(Value::as_object)
        .ok_or_else(|| SchemaError::Malformed("missing stability_hierarchy object".into()))?;

    let mut found: BTreeMap<DimensionPath, f64> = BTreeMap::new();
    let mut prefix = Vec::new();
    collect_scores(tree, &mut prefix, &mut found)?;

    for canonical in canonical_paths() {
        if !found.contains_key(canonical) {
            return Err(SchemaError::MissingDimension(canonical.to_string()));
        }
    }
    // Unknown-path detection: anything we collected beyond the canonical set.
    if found.len() > canonical_paths().len() {
        let extra = found
            .keys()
            .find(|p| !canonical_paths().contains(p))
            .expect("length mismatch implies an extra path");
        return Err(SchemaError::UnknownDimension(extra.to_string()));
    }

    Ok(PilotProfile {
        persona_id,
        source,
        values: found,
    })
}

fn collect_scores(
    node: &Map<String, Value>,
    prefix: &mut Vec<String>,
    out: &mut BTreeMap<DimensionPath, f64>,
) -> Result<(), SchemaError> {
    for (key, child) in node {
        prefix.push(key.clone());
        let path = DimensionPath {
            segments: prefix.clone(),
        };
        match child {
            Value::Object(obj) => collect_scores(obj, prefix, out)?,
            Value::Number(n) => {
                let score = n
                    .as_f64()
                    .ok_or_else(|| SchemaError::NonNumeric {
                        path: path.to_string(),
                    })?;
                if !(0.0..=100.0).contains(&score) {
                    prefix.pop();
                    return Err(SchemaError::OutOfRange {
                        path: path.to_string(),
                        value: score,
                    });
                }
                if !canonical_paths().contains(&path) {
                    prefix.pop();
                    return Err(SchemaError::UnknownDimension(path.to_string()));
                }
                out.insert(path, score);
            }
            _ => {
                prefix.pop();
                return Err(SchemaError::NonNumeric {
                    path: path.to_string(),
                });
            }
        }
        prefix.pop();
    }
    Ok(())
}

/// Canonical serialization: nested document in listing order, scores
/// rounded to at most 6 fractional digits, trailing newline.
pub fn serialize_profile(profile: &PilotProfile) -> String {
    let mut root = Map::new();
    root.insert("persona_id".into(), Value::String(profile.persona_id.clone()));
    root.insert(
        "source".into(),
        serde_json::to_value(profile.source).expect("source serializes"),
    );

    let mut tree = Map::new();
    for path in canonical_paths() {
        let score = profile.values[path];
        let rounded = (score * 1e6).round() / 1e6;
        insert_nested(&mut tree, path.segments(), rounded);
    }
    root.insert("stability_hierarchy".into(), Value::Object(tree));

    let mut text = serde_json::to_string_pretty(&Value::Object(root)).expect("profile serializes");
    text.push('\n');
    text
}

fn insert_nested(node: &mut Map<String, Value>, segments: &[String], score: f64) {
    if segments.len() == 1 {
        node.insert(
            segments[0].clone(),
            Value::Number(serde_json::Number::from_f64(score).expect("scores are finite")),
        );
        return;
    }
    let child = node
        .entry(segments[0].clone())
        .or_insert_with(|| Value::Object(Map::new()));
    insert_nested(
        child.as_object_mut().expect("interior nodes are objects"),
        &segments[1..],
        score,
    );
}

/// Canonical per-leaf view, in depth-first listing order.
pub fn flatten(profile: &PilotProfile) -> Vec<(DimensionPath, f64)> {
    canonical_paths()
        .iter()
        .map(|p| (p.clone(), profile.values[p]))
        .collect()
}

/// Rebuilds a profile from per-leaf pairs; the pair set must cover the
/// canonical schema exactly.
pub fn unflatten(
    persona_id: &str,
    source: ProfileSource,
    pairs: &[(DimensionPath, f64)],
) -> Result<PilotProfile, SchemaError> {
    let mut values = BTreeMap::new();
    for (path, score) in pairs {
        if !canonical_paths().contains(path) {
            return Err(SchemaError::UnknownDimension(path.to_string()));
        }
        if !(0.0..=100.0).contains(score) {
            return Err(SchemaError::OutOfRange {
                path: path.to_string(),
                value: *score,
            });
        }
        values.insert(path.clone(), *score);
    }
    for canonical in canonical_paths() {
        if !values.contains_key(canonical) {
            return Err(SchemaError::MissingDimension(canonical.to_string()));
        }
    }
    Ok(PilotProfile {
        persona_id: persona_id.to_owned(),
        source,
        values,
    })
}

/// Per-path arithmetic mean over complete profiles. The result takes the
/// first profile's persona_id and `source = averaged`.
pub fn average_profiles(profiles: &[PilotProfile]) -> Result<PilotProfile, SchemaError> {
    let first = profiles.first().ok_or(SchemaError::EmptyInput)?;
    let n = profiles.len() as f64;
    let mut values = BTreeMap::new();
    for path in canonical_paths() {
        let mut sum = 0.0;
        for p in profiles {
            sum += p
                .score(path)
                .ok_or_else(|| SchemaError::SchemaMismatch(path.to_string()))?;
        }
        values.insert(path.clone(), sum / n);
    }
    Ok(PilotProfile {
        persona_id: first.persona_id.clone(),
        source: ProfileSource::Averaged,
        values,
    })
}

pub fn tier_of(path: &DimensionPath) -> Result<StabilityTier, SchemaError> {
    if !canonical_paths().contains(path) {
        return Err(SchemaError::UnknownDimension(path.to_string()));
    }
    StabilityTier::from_segment(&path.segments()[0])
        .ok_or_else(|| SchemaError::UnknownDimension(path.to_string()))
}

#[derive(Debug, Clone)]
pub struct VariationReport {
    /// max score - min score per path, percentage points.
    pub per_path: BTreeMap<DimensionPath, f64>,
    /// Paths whose observed variation exceeds their tier's limit.
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: DimensionPath,
    pub observed: f64,
    pub allowed: f64,
}

/// Checks observed cross-profile variation against the tier limits
/// (stable <=5, semi-stable <=15, variable <=30 percentage points).
pub fn variation_report(profiles: &[PilotProfile]) -> Result<VariationReport, SchemaError> {
    if profiles.len() < 2 {
        return Err(SchemaError::TooFewProfiles(profiles.len()));
    }
    let mut per_path = BTreeMap::new();
    let mut violations = Vec::new();
    for path in canonical_paths() {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for p in profiles {
            let v = p
                .score(path)
                .ok_or_else(|| SchemaError::SchemaMismatch(path.to_string()))?;
            min = min.min(v);
            max = max.max(v);
        }
        let observed = max - min;
        let allowed = tier_of(path)?.max_variation();
        if observed > allowed {
            violations.push(Violation {
                path: path.clone(),
                observed,
                allowed,
            });
        }
        per_path.insert(path.clone(), observed);
    }
    Ok(VariationReport {
        per_path,
        violations,
    })
}
