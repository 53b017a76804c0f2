//! End-to-end orchestration: catalogs, run configuration, corpus
//! generation, and metric report assembly.
//!
//! Reports are deterministic for a fixed seed: group maps are ordered,
//! scores are serialized with stable key order, and generated records carry
//! no wall-clock fields when produced by the stub provider.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Map;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, Corpus, GroupKey, ResponseRecord};
use crate::diversity::{diversity_summary, DiversityScores};
use crate::prompt::{
    build_matrix, parse_tagged_output, ContentRequest, Persona, PromptBundle, SteeringCondition,
};
use crate::provider::{Gateway, GenerationRequest, ProviderConfig};
use crate::schema::{parse_profile, PilotProfile};
use crate::stats::{flag_rate, pattern_set_version, FlagKind};
use crate::steer::{steerability_summary, SteerConfig, SteerabilityReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Minimum group size for the steerability family; smaller groups are
/// reported with an exclusion reason instead.
pub const MIN_STEERABILITY_GROUP: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
    #[error(transparent)]
    Provider(#[from] crate::provider::ProviderError),
    #[error(transparent)]
    Schema(#[from] crate::schema::SchemaError),
    #[error("empty grouping result")]
    EmptyGrouping,
}

/// Declarative description of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Path to the provider configuration file, or "stub".
    pub provider: String,
    pub persona_catalog: PathBuf,
    pub request_catalog: PathBuf,
    pub conditions: Vec<SteeringCondition>,
    pub models: Vec<String>,
    pub seed: u64,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default)]
    pub k_max: Option<usize>,
    pub corpus_out: PathBuf,
    pub report_out: PathBuf,
}

fn default_k_min() -> usize {
    2
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if config.conditions.is_empty() {
            return Err(PipelineError::Config("conditions list is empty".into()));
        }
        if config.models.is_empty() {
            return Err(PipelineError::Config("models list is empty".into()));
        }
        Ok(config)
    }

    /// Stable hash of the canonical config serialization; embedded in
    /// reports so corpus/report provenance is checkable.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex_prefix(&digest, 16)
    }
}

fn hex_prefix(digest: &[u8], chars: usize) -> String {
    digest
        .iter()
        .flat_map(|b| [b >> 4, b & 0xf])
        .take(chars)
        .map(|n| char::from_digit(n as u32, 16).expect("nibble"))
        .collect()
}

/// Entry in the persona catalog file. A persona without a profile path gets
/// its profile elicited through the gateway (deterministic with the stub).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonaEntry {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub base_persona: Option<String>,
    #[serde(default)]
    pub profile_path: Option<PathBuf>,
}

pub fn load_personas(path: &Path) -> Result<Vec<PersonaEntry>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
}

pub fn load_requests(path: &Path) -> Result<Vec<ContentRequest>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
}

pub fn load_provider_config(reference: &str) -> Result<ProviderConfig, PipelineError> {
    if reference == "stub" {
        return Ok(ProviderConfig::stub());
    }
    let path = std::env::var("PILOT_PROVIDER_CONFIG").unwrap_or_else(|_| reference.to_owned());
    let text = fs::read_to_string(&path).map_err(|e| PipelineError::Read {
        path: path.clone(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
}

fn record_id(bundle: &PromptBundle) -> String {
    format!(
        "{}__{}__{}__{}",
        bundle.persona_id, bundle.condition, bundle.request_id, bundle.model_id
    )
}

fn mix_seed(master: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let h = u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
    master ^ h
}

/// Generates one record per matrix cell, appending to an existing corpus
/// file when present (cells already covered are skipped). Provider failures
/// are recorded with an `error` field, never dropped.
pub fn generate_corpus(config: &RunConfig, gateway: &Gateway) -> Result<Corpus, PipelineError> {
    let personas = load_personas(&config.persona_catalog)?;
    let requests = load_requests(&config.request_catalog)?;

    let mut profiles: BTreeMap<String, PilotProfile> = BTreeMap::new();
    let needs_profiles = config
        .conditions
        .iter()
        .any(|c| c.expects_tagged_output());
    if needs_profiles {
        for entry in &personas {
            let profile = match &entry.profile_path {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| PipelineError::Read {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                    parse_profile(&text)?
                }
                None => gateway.elicit_profile(
                    &entry.id,
                    std::slice::from_ref(&entry.description),
                    config.models.first().expect("validated non-empty"),
                )?,
            };
            profiles.insert(entry.id.clone(), profile);
        }
    }

    let persona_objs: Vec<Persona> = personas
        .iter()
        .map(|e| Persona {
            id: e.id.clone(),
            description: e.description.clone(),
            base_persona: e.base_persona.clone(),
        })
        .collect();
    let bundles = build_matrix(
        &persona_objs,
        &config.conditions,
        &requests,
        &config.models,
        |p| profiles.get(&p.id).cloned(),
    )?;

    let mut existing: Corpus = if config.corpus_out.exists() {
        corpus::read_jsonl(&config.corpus_out)?
    } else {
        Vec::new()
    };
    let done: std::collections::HashSet<String> =
        existing.iter().map(|r| r.id.clone()).collect();

    let pending: Vec<&PromptBundle> = bundles
        .iter()
        .filter(|b| !done.contains(&record_id(b)))
        .collect();
    let reqs: Vec<GenerationRequest> = pending
        .iter()
        .map(|b| {
            let mut req = GenerationRequest::new(&b.model_id, &b.rendered_prompt);
            req.seed = Some(mix_seed(config.seed, &record_id(b)));
            req
        })
        .collect();
    let results = gateway.generate_batch(&reqs);

    let request_index: BTreeMap<&str, &ContentRequest> =
        requests.iter().map(|r| (r.id.as_str(), r)).collect();
    let persona_index: BTreeMap<&str, &PersonaEntry> =
        personas.iter().map(|p| (p.id.as_str(), p)).collect();

    for (bundle, result) in pending.iter().zip(results) {
        let request = request_index[bundle.request_id.as_str()];
        let persona = persona_index[bundle.persona_id.as_str()];
        let mut record = ResponseRecord {
            id: record_id(bundle),
            base_persona: persona
                .base_persona
                .clone()
                .unwrap_or_else(|| persona.id.clone()),
            sub_persona: persona.id.clone(),
            condition: bundle.condition,
            model_id: bundle.model_id.clone(),
            content_type: request.content_type,
            request_id: request.id.clone(),
            request_text: request.text.clone(),
            response_text: String::new(),
            explanation: None,
            created_at: None,
            error: None,
            extra: Map::new(),
        };
        match result {
            Ok(generation) => {
                if bundle.condition.expects_tagged_output() {
                    match parse_tagged_output(&generation.text) {
                        Ok(tagged) => {
                            record.response_text = tagged.response;
                            if !tagged.explanation.is_empty() {
                                record.explanation = Some(tagged.explanation);
                            }
                        }
                        Err(e) => record.error = Some(format!("tag parse: {e}")),
                    }
                } else {
                    record.response_text = generation.text;
                }
            }
            Err(e) => record.error = Some(format!("generation: {e}")),
        }
        existing.push(record);
    }

    corpus::write_jsonl(&config.corpus_out, &existing)?;
    Ok(existing)
}

#[derive(Debug, Serialize)]
pub struct QualityRates {
    pub persona_repetition_rate: f64,
    pub placeholder_rate: f64,
}

#[derive(Debug, Serialize)]
pub struct GroupReport {
    pub n_records: usize,
    pub n_failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steerability: Option<SteerabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded: Option<BTreeMap<String, String>>,
    pub quality: QualityRates,
}

#[derive(Debug, Serialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub group_by: String,
    pub vector_source: String,
    pub detector_patterns: String,
    pub n_records: usize,
    /// Repetition rate is reported as 1 - n-gram diversity; group diversity
    /// is per-response-then-average.
    pub metric_conventions: String,
}

#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub groups: BTreeMap<String, GroupReport>,
}

/// Evaluates a corpus into one report with all metric families per group.
/// Records with an `error` field are excluded from metrics and counted.
pub fn evaluate_corpus(
    corpus: &[ResponseRecord],
    group_key: &GroupKey,
    config: &RunConfig,
) -> Result<MetricsReport, PipelineError> {
    let groups = corpus::group_by(corpus, group_key);
    if groups.is_empty() {
        return Err(PipelineError::EmptyGrouping);
    }

    let mut out = BTreeMap::new();
    for (tuple, members) in groups {
        let name = tuple.join("/");
        let (ok, failed): (Vec<ResponseRecord>, Vec<ResponseRecord>) =
            members.into_iter().partition(|r| r.error.is_none());
        let mut excluded: BTreeMap<String, String> = BTreeMap::new();

        let diversity = match diversity_summary(&ok) {
            Ok(scores) => Some(scores),
            Err(e) => {
                excluded.insert("diversity".into(), e.to_string());
                None
            }
        };

        let steer_config = SteerConfig {
            k_min: config.k_min,
            k_max: config.k_max,
            seed: config.seed,
        };
        let steerability = if ok.len() < MIN_STEERABILITY_GROUP.max(config.k_min) {
            excluded.insert("steerability".into(), "group too small".into());
            None
        } else {
            match steerability_summary(&ok, &steer_config) {
                Ok(report) => Some(report),
                Err(e) => {
                    excluded.insert("steerability".into(), e.to_string());
                    None
                }
            }
        };

        let quality = QualityRates {
            persona_repetition_rate: flag_rate(&ok, FlagKind::PersonaRepetition).unwrap_or(0.0),
            placeholder_rate: flag_rate(&ok, FlagKind::Placeholder).unwrap_or(0.0),
        };

        out.insert(
            name,
            GroupReport {
                n_records: ok.len() + failed.len(),
                n_failed: failed.len(),
                diversity,
                steerability,
                excluded: if excluded.is_empty() { None } else { Some(excluded) },
                quality,
            },
        );
    }

    Ok(MetricsReport {
        metadata: ReportMetadata {
            tool_version: TOOL_VERSION.to_owned(),
            seed: config.seed,
            config_hash: config.config_hash(),
            group_by: group_key
                .fields()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
            vector_source: "internal-tfidf".to_owned(),
            detector_patterns: pattern_set_version().to_owned(),
            n_records: corpus.len(),
            metric_conventions:
                "repetition=1-ngram_diversity; diversity=per-response-then-average".to_owned(),
        },
        groups: out,
    })
}

/// Serializes a report with stable ordering and LF line endings.
pub fn render_report(report: &MetricsReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    text
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<(), PipelineError> {
    fs::write(path, render_report(report)).map_err(|e| PipelineError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
