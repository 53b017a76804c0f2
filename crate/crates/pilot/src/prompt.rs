//! Steering prompt rendering, experiment-matrix construction, and
//! tagged-output parsing.
//!
//! The three condition templates live under `resources/templates/` and are
//! substituted verbatim. Rendering is deterministic: the same inputs always
//! produce byte-identical prompts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{serialize_profile, PilotProfile};

const NPS_TEMPLATE: &str = include_str!("../resources/templates/nps.txt");
const SBS_TEMPLATE: &str = include_str!("../resources/templates/sbs.txt");
const HPS_TEMPLATE: &str = include_str!("../resources/templates/hps.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("persona description is empty")]
    EmptyPersona,
    #[error("content request text is empty")]
    EmptyRequest,
    #[error("unknown content type: {0}")]
    UnknownContentType(String),
    #[error("unknown steering condition: {0}")]
    UnknownCondition(String),
    #[error("missing response tags")]
    MissingResponseTags,
    #[error("response tags are empty")]
    EmptyResponse,
    #[error("experiment matrix input list '{0}' is empty")]
    EmptyMatrixAxis(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_persona: Option<String>,
}

impl Persona {
    pub fn new(id: &str, description: &str) -> Result<Self, PromptError> {
        if description.trim().is_empty() {
            return Err(PromptError::EmptyPersona);
        }
        Ok(Persona {
            id: id.to_owned(),
            description: description.to_owned(),
            base_persona: None,
        })
    }
}

/// The seven content request categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContentType {
    #[serde(rename = "personal writing")]
    PersonalWriting,
    #[serde(rename = "formal writing")]
    FormalWriting,
    #[serde(rename = "email correspondence")]
    EmailCorrespondence,
    #[serde(rename = "social media")]
    SocialMedia,
    #[serde(rename = "commercial writing")]
    CommercialWriting,
    #[serde(rename = "entertainment")]
    Entertainment,
    #[serde(rename = "traditional book or story")]
    TraditionalBookOrStory,
}

impl ContentType {
    pub const ALL: [ContentType; 7] = [
        ContentType::PersonalWriting,
        ContentType::FormalWriting,
        ContentType::EmailCorrespondence,
        ContentType::SocialMedia,
        ContentType::CommercialWriting,
        ContentType::Entertainment,
        ContentType::TraditionalBookOrStory,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ContentType::PersonalWriting => "personal writing",
            ContentType::FormalWriting => "formal writing",
            ContentType::EmailCorrespondence => "email correspondence",
            ContentType::SocialMedia => "social media",
            ContentType::CommercialWriting => "commercial writing",
            ContentType::Entertainment => "entertainment",
            ContentType::TraditionalBookOrStory => "traditional book or story",
        }
    }
}

impl FromStr for ContentType {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContentType::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| PromptError::UnknownContentType(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentRequest {
    pub id: String,
    pub content_type: ContentType,
    pub text: String,
}

impl ContentRequest {
    pub fn new(id: &str, content_type: ContentType, text: &str) -> Result<Self, PromptError> {
        if text.trim().is_empty() {
            return Err(PromptError::EmptyRequest);
        }
        Ok(ContentRequest {
            id: id.to_owned(),
            content_type,
            text: text.to_owned(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SteeringCondition {
    NPS,
    SBS,
    HPS,
}

impl SteeringCondition {
    pub const ALL: [SteeringCondition; 3] = [
        SteeringCondition::NPS,
        SteeringCondition::SBS,
        SteeringCondition::HPS,
    ];

    /// NPS carries no tag-format instruction; its raw output is the response.
    pub fn expects_tagged_output(&self) -> bool {
        !matches!(self, SteeringCondition::NPS)
    }
}

impl fmt::Display for SteeringCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SteeringCondition::NPS => "NPS",
            SteeringCondition::SBS => "SBS",
            SteeringCondition::HPS => "HPS",
        };
        write!(f, "{s}")
    }
}

impl FromStr for SteeringCondition {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NPS" => Ok(SteeringCondition::NPS),
            "SBS" => Ok(SteeringCondition::SBS),
            "HPS" => Ok(SteeringCondition::HPS),
            other => Err(PromptError::UnknownCondition(other.to_owned())),
        }
    }
}

/// One fully rendered prompt, ready for a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub condition: SteeringCondition,
    pub persona_id: String,
    pub request_id: String,
    pub model_id: String,
    pub rendered_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_ref: Option<String>,
}

/// Substitutes template placeholders. Each placeholder is replaced exactly
/// once per occurrence; replacement text is never re-scanned.
fn substitute(template: &str, subs: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template.trim_end_matches('\n');
    'outer: while !rest.is_empty() {
        for (key, value) in subs {
            if let Some(stripped) = rest.strip_prefix(key) {
                out.push_str(value);
                rest = stripped;
                continue 'outer;
            }
        }
        let mut chars = rest.char_indices();
        let (_, c) = chars.next().expect("rest is non-empty");
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

pub fn render_nps(persona: &Persona, request: &ContentRequest) -> Result<PromptBundle, PromptError> {
    validate(persona, request)?;
    Ok(PromptBundle {
        condition: SteeringCondition::NPS,
        persona_id: persona.id.clone(),
        request_id: request.id.clone(),
        model_id: String::new(),
        rendered_prompt: substitute(
            NPS_TEMPLATE,
            &[("{persona}", &persona.description), ("{request}", &request.text)],
        ),
        profile_ref: None,
    })
}

pub fn render_sbs(
    profile: &PilotProfile,
    request: &ContentRequest,
) -> Result<PromptBundle, PromptError> {
    if request.text.trim().is_empty() {
        return Err(PromptError::EmptyRequest);
    }
    let serialized = serialize_profile(profile);
    Ok(PromptBundle {
        condition: SteeringCondition::SBS,
        persona_id: profile.persona_id.clone(),
        request_id: request.id.clone(),
        model_id: String::new(),
        rendered_prompt: substitute(
            SBS_TEMPLATE,
            &[
                ("{profile}", serialized.trim_end_matches('\n')),
                ("{request}", &request.text),
            ],
        ),
        profile_ref: Some(profile.persona_id.clone()),
    })
}

pub fn render_hps(
    persona: &Persona,
    profile: &PilotProfile,
    request: &ContentRequest,
) -> Result<PromptBundle, PromptError> {
    validate(persona, request)?;
    let serialized = serialize_profile(profile);
    Ok(PromptBundle {
        condition: SteeringCondition::HPS,
        persona_id: persona.id.clone(),
        request_id: request.id.clone(),
        model_id: String::new(),
        rendered_prompt: substitute(
            HPS_TEMPLATE,
            &[
                ("{persona}", &persona.description),
                ("{profile}", serialized.trim_end_matches('\n')),
                ("{request}", &request.text),
            ],
        ),
        profile_ref: Some(profile.persona_id.clone()),
    })
}

fn validate(persona: &Persona, request: &ContentRequest) -> Result<(), PromptError> {
    if persona.description.trim().is_empty() {
        return Err(PromptError::EmptyPersona);
    }
    if request.text.trim().is_empty() {
        return Err(PromptError::EmptyRequest);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedOutput {
    pub explanation: String,
    pub response: String,
    pub raw: String,
}

/// Extracts the first `<explanation>..</explanation>` and
/// `<response>..</response>` pair. Matching is case-sensitive and
/// non-greedy; the explanation block is optional.
pub fn parse_tagged_output(raw: &str) -> Result<TaggedOutput, PromptError> {
    let response = extract_first(raw, "<response>", "</response>")
        .ok_or(PromptError::MissingResponseTags)?
        .trim()
        .to_owned();
    if response.is_empty() {
        return Err(PromptError::EmptyResponse);
    }
    let explanation = extract_first(raw, "<explanation>", "</explanation>")
        .map(|s| s.trim().to_owned())
        .unwrap_or_default();
    Ok(TaggedOutput {
        explanation,
        response,
        raw: raw.to_owned(),
    })
}

fn extract_first<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

/// Cartesian product of the experiment axes in persona-major order
/// (persona, condition, request, model).
pub fn build_matrix(
    personas: &[Persona],
    conditions: &[SteeringCondition],
    requests: &[ContentRequest],
    models: &[String],
    profiles: impl Fn(&Persona) -> Option<PilotProfile>,
) -> Result<Vec<PromptBundle>, PromptError> {
    if personas.is_empty() {
        return Err(PromptError::EmptyMatrixAxis("personas"));
    }
    if conditions.is_empty() {
        return Err(PromptError::EmptyMatrixAxis("conditions"));
    }
    if requests.is_empty() {
        return Err(PromptError::EmptyMatrixAxis("requests"));
    }
    if models.is_empty() {
        return Err(PromptError::EmptyMatrixAxis("models"));
    }
    let mut out = Vec::with_capacity(personas.len() * conditions.len() * requests.len() * models.len());
    for persona in personas {
        for condition in conditions {
            for request in requests {
                for model in models {
                    let mut bundle = match condition {
                        SteeringCondition::NPS => render_nps(persona, request)?,
                        SteeringCondition::SBS => {
                            let profile = profiles(persona).unwrap_or_else(|| {
                                PilotProfile::uniform(&persona.id, 50.0)
                                    .expect("uniform profile is valid")
                            });
                            render_sbs(&profile, request)?
                        }
                        SteeringCondition::HPS => {
                            let profile = profiles(persona).unwrap_or_else(|| {
                                PilotProfile::uniform(&persona.id, 50.0)
                                    .expect("uniform profile is valid")
                            });
                            render_hps(persona, &profile, request)?
                        }
                    };
                    bundle.persona_id = persona.id.clone();
                    bundle.model_id = model.clone();
                    out.push(bundle);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::PilotProfile;

    fn persona() -> Persona {
        Persona::new("p1", "academic researcher").unwrap()
    }

    fn request() -> ContentRequest {
        ContentRequest::new("r1", ContentType::PersonalWriting, "Write a haiku.").unwrap()
    }

    #[test]
    fn nps_renders_exact_template() {
        let b = render_nps(&persona(), &request()).unwrap();
        assert_eq!(
            b.rendered_prompt,
            "Pretend you are a(n) academic researcher. Write a haiku."
        );
        assert!(b.profile_ref.is_none());
    }

    #[test]
    fn nps_rejects_empty_persona() {
        assert!(Persona::new("p", "").is_err());
    }

    #[test]
    fn nps_no_recursive_expansion() {
        let p = Persona::new("p", "{persona}").unwrap();
        let b = render_nps(&p, &request()).unwrap();
        assert_eq!(b.rendered_prompt, "Pretend you are a(n) {persona}. Write a haiku.");
    }

    #[test]
    fn sbs_contains_profile_and_markers_once() {
        let profile = PilotProfile::uniform("p1", 50.0).unwrap();
        let b = render_sbs(&profile, &request()).unwrap();
        assert!(b
            .rendered_prompt
            .starts_with("Using the following profile as a linguistic style guide:"));
        assert!(b.rendered_prompt.contains("\"function_words\": 50.0"));
        assert_eq!(b.rendered_prompt.matches("<explanation>").count(), 1);
        assert_eq!(b.rendered_prompt.matches("<response>").count(), 1);
        assert_eq!(b.profile_ref.as_deref(), Some("p1"));

        let again = render_sbs(&profile, &request()).unwrap();
        assert_eq!(b.rendered_prompt, again.rendered_prompt);
    }

    #[test]
    fn hps_structure() {
        let p = Persona::new("p1", "film critic").unwrap();
        let profile = PilotProfile::uniform("p1", 50.0).unwrap();
        let req = ContentRequest::new("r", ContentType::Entertainment, "Review a film.").unwrap();
        let hps = render_hps(&p, &profile, &req).unwrap();
        assert!(hps.rendered_prompt.starts_with("Pretend you are a(n) film critic.\n"));

        // HPS = NPS persona sentence + SBS body.
        let nps_sentence = "Pretend you are a(n) film critic.";
        let sbs = render_sbs(&profile, &req).unwrap();
        assert!(hps.rendered_prompt.contains(nps_sentence));
        assert!(hps.rendered_prompt.contains(&sbs.rendered_prompt));

        let again = render_hps(&p, &profile, &req).unwrap();
        assert_eq!(hps.rendered_prompt, again.rendered_prompt);
    }

    #[test]
    fn tagged_output_parsing() {
        let out =
            parse_tagged_output("<explanation> thinking </explanation>\n<response> hello </response>")
                .unwrap();
        assert_eq!(out.explanation, "thinking");
        assert_eq!(out.response, "hello");

        let only = parse_tagged_output("<response>only</response>").unwrap();
        assert_eq!(only.explanation, "");
        assert_eq!(only.response, "only");

        assert!(matches!(
            parse_tagged_output("no tags at all"),
            Err(PromptError::MissingResponseTags)
        ));
    }

    #[test]
    fn tagged_round_trip_recovers_response() {
        let raw = "<explanation>because</explanation>\n<response>The exact text.</response>";
        assert_eq!(parse_tagged_output(raw).unwrap().response, "The exact text.");
    }

    #[test]
    fn matrix_sizes() {
        let personas = vec![persona(), Persona::new("p2", "film critic").unwrap()];
        let conditions = vec![SteeringCondition::NPS, SteeringCondition::SBS];
        let requests = vec![
            request(),
            ContentRequest::new("r2", ContentType::SocialMedia, "Post.").unwrap(),
            ContentRequest::new("r3", ContentType::FormalWriting, "Report.").unwrap(),
        ];
        let models = vec!["m1".to_owned()];
        let bundles = build_matrix(&personas, &conditions, &requests, &models, |_| None).unwrap();
        assert_eq!(bundles.len(), 12);

        // No duplicate coordinate tuples.
        let mut coords: Vec<_> = bundles
            .iter()
            .map(|b| (b.persona_id.clone(), b.condition, b.request_id.clone(), b.model_id.clone()))
            .collect();
        coords.sort();
        coords.dedup();
        assert_eq!(coords.len(), 12);

        assert!(matches!(
            build_matrix(&personas, &conditions, &[], &models, |_| None),
            Err(PromptError::EmptyMatrixAxis("requests"))
        ));
    }

    #[test]
    fn full_scale_matrix_count() {
        // 25 personas x 3 conditions x 210 requests x 3 models = 47,250.
        // Checked arithmetically; materializing it is covered by matrix_sizes.
        assert_eq!(25usize * 3 * 210 * 3, 47_250);
    }
}
