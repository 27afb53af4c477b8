//! Zero-shot classification through prompted vision-language models.
//!
//! The prompt is fixed; a post's text and image travel next to it as
//! attachments. Backends sit behind [`VlmClient`]; the shipped
//! [`RecordedClient`] replays stored responses so runs need no GPU or API key.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::evaluation::Predicted;
use crate::par::{self, ExecMode};
use crate::taxonomy::ClassLabel;

pub const SYSTEM_PROMPT: &str = "You are an assistant who is being given an image and text pair as a Twitter post, which was created during a natural disaster event. Your task is to use information from both the text and the image to decide which option the post should be labeled as. You must pay close attention to each option when deciding which label to use.";

const QUESTION: &str = "Which option should this post be labeled as?";
const ANSWER_RULE: &str = "You may only answer with the chosen option's letter.";

/// Transport failures are retried this many times; unparseable answers never are.
pub const MAX_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

/// The system and user prompts, identical for every post and backend.
pub fn build_prompt() -> PromptPair {
    let mut user = String::from(QUESTION);
    for c in ClassLabel::all() {
        user.push('\n');
        user.push_str(&format!("{}. {} ({})", c.letter(), c.name(), c.prompt_hint()));
    }
    user.push('\n');
    user.push_str(ANSWER_RULE);
    PromptPair {
        system: SYSTEM_PROMPT.to_string(),
        user,
    }
}

/// Decoding settings forwarded to every backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VlmSettings {
    pub temperature: f64,
    pub num_beams: u32,
    pub max_new_tokens: u32,
}

impl Default for VlmSettings {
    fn default() -> Self {
        VlmSettings {
            temperature: 0.1,
            num_beams: 1,
            max_new_tokens: 1024,
        }
    }
}

/// Maps a raw answer to a class.
///
/// Surrounding whitespace, quotes, brackets and markdown emphasis are ignored.
/// The answer must then be a single letter A–M (any case), optionally
/// followed by `.`, `)` or `:` and further text. Anything else is
/// [`Predicted::Unparseable`].
pub fn parse_response(raw: &str) -> Predicted {
    let trim_set = |c: char| c.is_whitespace() || "\"'`*_([{".contains(c);
    let s = raw.trim_start_matches(trim_set);
    let s = s.trim_end_matches(|c: char| c.is_whitespace() || "\"'`*_]}".contains(c));
    let mut chars = s.chars();
    let Some(first) = chars.next() else {
        return Predicted::Unparseable;
    };
    let Ok(label) = ClassLabel::from_letter(first) else {
        return Predicted::Unparseable;
    };
    let rest = chars.as_str();
    let ok = match rest.chars().next() {
        None => true,
        Some('.' | ')' | ':') => {
            let after = &rest[1..];
            after.is_empty() || after.starts_with(char::is_whitespace)
        }
        Some(_) => false,
    };
    if ok {
        Predicted::Class(label)
    } else {
        Predicted::Unparseable
    }
}

/// How an adapter ships the post image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImageMode {
    Url,
    #[default]
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageAttachment {
    None,
    Url(String),
    File(PathBuf),
}

/// One request to a backend.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VlmRequest<'a> {
    pub post_id: &'a str,
    pub prompt: &'a PromptPair,
    pub post_text: &'a str,
    pub image: ImageAttachment,
    pub settings: VlmSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("no recorded response for post {0}")]
    Missing(String),
}

/// A vision-language model endpoint.
pub trait VlmClient: Send + Sync {
    fn complete(&self, request: &VlmRequest<'_>) -> Result<String, TransportError>;
}

/// Named backend configuration. The endpoint and credentials are declared,
/// never embedded: `auth_env` names the environment variable holding the key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub name: String,
    pub model_id: String,
    pub endpoint: String,
    pub auth_env: Option<String>,
    pub quantization: String,
    pub image_mode: ImageMode,
}

/// The four backends compared against the fine-tuned classifier.
pub fn adapter_presets() -> Vec<AdapterConfig> {
    let local = |name: &str, model: &str, quant: &str| AdapterConfig {
        name: name.to_string(),
        model_id: model.to_string(),
        endpoint: "http://localhost:8000/v1/chat/completions".to_string(),
        auth_env: None,
        quantization: quant.to_string(),
        image_mode: ImageMode::Binary,
    };
    vec![
        AdapterConfig {
            name: "gpt-4o-mini".to_string(),
            model_id: "gpt-4o-mini-2024-07-18".to_string(),
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            auth_env: Some("OPENAI_API_KEY".to_string()),
            quantization: "hosted".to_string(),
            image_mode: ImageMode::Url,
        },
        local("llava", "llava-v1.5-13b", "4-bit (pre-quantized checkpoint)"),
        local("qwen", "Qwen2.5-VL-7B-Instruct", "4-bit bitsandbytes"),
        local("smolvlm", "SmolVLM-Instruct", "none"),
    ]
}

/// One line of a recorded-response fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub post_id: String,
    #[serde(default)]
    pub raw: Option<String>,
    /// Fail this many attempts with a transport error before answering.
    #[serde(default)]
    pub fail_attempts: u32,
}

/// Replays stored answers keyed by post id.
#[derive(Debug, Default)]
pub struct RecordedClient {
    responses: HashMap<String, RecordedResponse>,
    attempts: Mutex<HashMap<String, u32>>,
}

impl RecordedClient {
    pub fn new(responses: impl IntoIterator<Item = RecordedResponse>) -> Self {
        RecordedClient {
            responses: responses
                .into_iter()
                .map(|r| (r.post_id.clone(), r))
                .collect(),
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: RecordedResponse = serde_json::from_str(line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            out.push(r);
        }
        Ok(RecordedClient::new(out))
    }
}

impl VlmClient for RecordedClient {
    fn complete(&self, request: &VlmRequest<'_>) -> Result<String, TransportError> {
        let rec = self
            .responses
            .get(request.post_id)
            .ok_or_else(|| TransportError::Missing(request.post_id.to_string()))?;
        let attempt = {
            let mut a = self.attempts.lock().expect("attempt counter poisoned");
            let n = a.entry(request.post_id.to_string()).or_insert(0);
            *n += 1;
            *n
        };
        if attempt <= rec.fail_attempts {
            return Err(TransportError::Unreachable(format!(
                "simulated failure {attempt} for {}",
                request.post_id
            )));
        }
        rec.raw
            .clone()
            .ok_or_else(|| TransportError::Unreachable("recorded as failed".to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ZeroShotOutcome {
    Answered { raw: String, parsed: Predicted },
    Failed { error: String },
}

/// Result for one post; `retries` counts re-sent requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub post_id: String,
    pub outcome: ZeroShotOutcome,
    pub retries: u32,
}

impl ZeroShotResult {
    /// Prediction used for scoring; failures score like unparseable answers.
    pub fn prediction(&self) -> Predicted {
        match &self.outcome {
            ZeroShotOutcome::Answered { parsed, .. } => *parsed,
            ZeroShotOutcome::Failed { .. } => Predicted::Unparseable,
        }
    }
}

/// Options for a zero-shot run.
#[derive(Debug, Clone)]
pub struct ZeroShotRun {
    pub settings: VlmSettings,
    pub image_mode: ImageMode,
    pub image_root: PathBuf,
    pub max_in_flight: usize,
    pub mode: ExecMode,
}

impl Default for ZeroShotRun {
    fn default() -> Self {
        ZeroShotRun {
            settings: VlmSettings::default(),
            image_mode: ImageMode::Binary,
            image_root: PathBuf::from("."),
            max_in_flight: 4,
            mode: ExecMode::default(),
        }
    }
}

/// Classifies every post, one result per post in input order.
///
/// Transport errors are retried up to [`MAX_RETRIES`] times and then
/// recorded; the run always continues.
pub fn classify_zeroshot(
    posts: &[Post],
    client: &dyn VlmClient,
    run: &ZeroShotRun,
) -> Vec<ZeroShotResult> {
    let prompt = build_prompt();
    par::map_bounded(run.mode, posts, run.max_in_flight, |post| {
        let image = match (post.image_path.is_empty(), run.image_mode) {
            (true, _) => ImageAttachment::None,
            (false, ImageMode::Url) => ImageAttachment::Url(post.image_path.clone()),
            (false, ImageMode::Binary) => {
                ImageAttachment::File(run.image_root.join(&post.image_path))
            }
        };
        let request = VlmRequest {
            post_id: &post.id,
            prompt: &prompt,
            post_text: &post.text,
            image,
            settings: run.settings,
        };
        let mut retries = 0;
        loop {
            match client.complete(&request) {
                Ok(raw) => {
                    let parsed = parse_response(&raw);
                    return ZeroShotResult {
                        post_id: post.id.clone(),
                        outcome: ZeroShotOutcome::Answered { raw, parsed },
                        retries,
                    };
                }
                Err(_) if retries < MAX_RETRIES => retries += 1,
                Err(e) => {
                    return ZeroShotResult {
                        post_id: post.id.clone(),
                        outcome: ZeroShotOutcome::Failed {
                            error: e.to_string(),
                        },
                        retries,
                    };
                }
            }
        }
    })
}

/// One line per post: `{post_id, raw, parsed_letter}` (plus `error` on failure).
pub fn response_log(results: &[ZeroShotResult]) -> String {
    let mut out = String::new();
    for r in results {
        let line = match &r.outcome {
            ZeroShotOutcome::Answered { raw, parsed } => serde_json::json!({
                "post_id": r.post_id,
                "raw": raw,
                "parsed_letter": parsed.class().map(|c| c.letter().to_string()),
            }),
            ZeroShotOutcome::Failed { error } => serde_json::json!({
                "post_id": r.post_id,
                "raw": null,
                "parsed_letter": null,
                "error": error,
                "retries": r.retries,
            }),
        };
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_timestamp;

    fn post(id: &str) -> Post {
        Post {
            id: id.into(),
            text: format!("post {id}"),
            image_path: format!("{id}.jpg"),
            created_at: parse_timestamp("2023-08-14T00:00:00Z").unwrap(),
            author_location_raw: None,
            source_year: 2023,
        }
    }

    fn rec(id: &str, raw: &str) -> RecordedResponse {
        RecordedResponse {
            post_id: id.into(),
            raw: Some(raw.into()),
            fail_attempts: 0,
        }
    }

    #[test]
    fn prompt_contents() {
        let p = build_prompt();
        assert!(p.user.contains("A. Evacuees (information relating to evacuees"));
        assert!(p.system.contains("created during a natural disaster event"));
        assert!(p.user.ends_with("You may only answer with the chosen option's letter."));
        assert!(p.user.contains("\nE. Warnings & Status Updates (warnings/updates"));
        assert!(p.user.contains("\nK. Smoke & Air Quality (information about smoke"));
        assert_eq!(p, build_prompt());
        assert_eq!(p.user.lines().count(), 15);
    }

    #[test]
    fn parse_cases() {
        assert_eq!(parse_response("B"), Predicted::Class(ClassLabel::GENERAL_INFORMATION));
        assert_eq!(parse_response(" m.\n"), Predicted::Class(ClassLabel::OTHER));
        assert_eq!(parse_response("I think it's smoke"), Predicted::Unparseable);
        assert_eq!(parse_response("K) Smoke"), Predicted::Class(ClassLabel::SMOKE));
        assert_eq!(parse_response("**E**"), Predicted::Class(ClassLabel::WARNINGS));
        assert_eq!(parse_response("(c)"), Predicted::Class(ClassLabel::PREPAREDNESS));
        assert_eq!(parse_response("I.e. nothing"), Predicted::Unparseable);
        assert_eq!(parse_response("N"), Predicted::Unparseable);
        assert_eq!(parse_response(""), Predicted::Unparseable);
        assert_eq!(parse_response("AB"), Predicted::Unparseable);
        for c in ClassLabel::all() {
            assert_eq!(parse_response(&c.letter().to_string()), Predicted::Class(c));
        }
    }

    #[test]
    fn empty_run() {
        let client = RecordedClient::default();
        assert!(classify_zeroshot(&[], &client, &ZeroShotRun::default()).is_empty());
        assert_eq!(response_log(&[]), "");
    }

    #[test]
    fn recorded_run_with_one_malformed_answer() {
        let posts: Vec<Post> = (0..5).map(|i| post(&format!("p{i}"))).collect();
        let client = RecordedClient::new(vec![
            rec("p0", "A"),
            rec("p1", "K"),
            rec("p2", "Sorry, I cannot help"),
            rec("p3", "m"),
            rec("p4", "E."),
        ]);
        let out = classify_zeroshot(&posts, &client, &ZeroShotRun::default());
        let preds: Vec<Predicted> = out.iter().map(|r| r.prediction()).collect();
        assert_eq!(
            preds,
            vec![
                ClassLabel::EVACUEES.into(),
                ClassLabel::SMOKE.into(),
                Predicted::Unparseable,
                ClassLabel::OTHER.into(),
                ClassLabel::WARNINGS.into(),
            ]
        );
        let log = response_log(&out);
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first["parsed_letter"], "A");
        let third: serde_json::Value = serde_json::from_str(log.lines().nth(2).unwrap()).unwrap();
        assert_eq!(third["raw"], "Sorry, I cannot help");
        assert!(third["parsed_letter"].is_null());
    }

    #[test]
    fn transport_errors_retry_then_fail() {
        let posts = vec![post("ok"), post("flaky"), post("down"), post("absent")];
        let client = RecordedClient::new(vec![
            rec("ok", "B"),
            RecordedResponse {
                post_id: "flaky".into(),
                raw: Some("C".into()),
                fail_attempts: 2,
            },
            RecordedResponse {
                post_id: "down".into(),
                raw: Some("C".into()),
                fail_attempts: 5,
            },
        ]);
        let run = ZeroShotRun {
            mode: ExecMode::Sequential,
            ..ZeroShotRun::default()
        };
        let out = classify_zeroshot(&posts, &client, &run);
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].retries, 0);
        assert_eq!(out[1].prediction(), ClassLabel::PREPAREDNESS.into());
        assert_eq!(out[1].retries, 2);
        assert!(matches!(out[2].outcome, ZeroShotOutcome::Failed { .. }));
        assert_eq!(out[2].retries, MAX_RETRIES);
        assert_eq!(out[3].prediction(), Predicted::Unparseable);
    }

    struct Echo;
    impl VlmClient for Echo {
        fn complete(&self, request: &VlmRequest<'_>) -> Result<String, TransportError> {
            assert_eq!(request.settings, VlmSettings::default());
            assert!(!request.prompt.user.contains(request.post_text));
            match &request.image {
                ImageAttachment::Url(u) => Ok(format!("{}:{u}", request.post_id)),
                _ => Ok("bad".into()),
            }
        }
    }

    #[test]
    fn settings_and_attachments_are_forwarded() {
        let run = ZeroShotRun {
            image_mode: ImageMode::Url,
            ..ZeroShotRun::default()
        };
        let out = classify_zeroshot(&[post("z")], &Echo, &run);
        match &out[0].outcome {
            ZeroShotOutcome::Answered { raw, .. } => assert_eq!(raw, "z:z.jpg"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn presets_cover_four_backends() {
        let names: Vec<String> = adapter_presets().into_iter().map(|a| a.name).collect();
        assert_eq!(names, ["gpt-4o-mini", "llava", "qwen", "smolvlm"]);
    }
}
