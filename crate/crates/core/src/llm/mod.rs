//! Provider-agnostic chat completion, prompt templates and reply parsers.

mod backends;
pub mod parse;
pub mod synthetic;
pub mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ClusterId;
use crate::text::sha256_hex;

pub use backends::{FnBackend, RecordingBackend, ScriptedBackend, TranscriptFixture};
pub use synthetic::SyntheticBackend;
#[cfg(feature = "http")]
pub use backends::{HttpBackend, HttpConfig};
pub use parse::{
    parse_assign, parse_generation, parse_reflection, parse_sufficiency, AssignChoice, GeneratedKeyword,
    GeneratedSet, ParseError, ReflectionVerdict, Suggestion, Sufficiency,
};
pub use templates::{
    render, render_generation, render_rank, GenerationContext, PromptBundle, RankSection, TemplateError, TemplateId,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub model_tag: String,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams { temperature: 0.0, model_tag: "default".into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub params: ChatParams,
}

impl ChatRequest {
    /// Fixture key: SHA-256 of the system text, a blank line, then the user text.
    pub fn prompt_sha256(&self) -> String {
        prompt_sha256(&self.system, &self.user)
    }
}

pub fn prompt_sha256(system: &str, user: &str) -> String {
    sha256_hex(format!("{system}\n\n{user}"))
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("no scripted reply for prompt {0}")]
    UnknownPrompt(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A chat completion endpoint.
pub trait ChatBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::rc::Rc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Generator,
    Reflector,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{template:?}: {source}")]
    Backend { template: TemplateId, source: BackendError },
    #[error("{template:?}: reply unparseable after {attempts} attempts: {source}")]
    Parse { template: TemplateId, attempts: usize, source: ParseError },
}

impl GatewayError {
    pub fn is_parse(&self) -> bool {
        matches!(self, GatewayError::Parse { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub template: TemplateId,
    pub slot: Slot,
    pub attempt: usize,
    pub prompt_sha256: String,
    pub reply: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const CORRECTIVE_INSTRUCTION: &str =
    "Your previous reply could not be parsed. Reply again using exactly the requested format.";

/// Two backend slots (keyword generator and reflector), retry policy and a transcript of every call.
pub struct Gateway {
    generator: Box<dyn ChatBackend>,
    reflector: Box<dyn ChatBackend>,
    pub generator_params: ChatParams,
    pub reflector_params: ChatParams,
    /// Extra attempts after a reply fails to parse.
    pub parse_retries: usize,
    /// Extra attempts after a transport failure.
    pub transport_retries: usize,
    transcript: Vec<TranscriptEntry>,
}

impl Gateway {
    pub fn new(generator: Box<dyn ChatBackend>, reflector: Box<dyn ChatBackend>) -> Self {
        Gateway {
            generator,
            reflector,
            generator_params: ChatParams::default(),
            reflector_params: ChatParams::default(),
            parse_retries: 2,
            transport_retries: 1,
            transcript: Vec::new(),
        }
    }

    /// Both slots share one backend.
    pub fn single<B: ChatBackend + 'static>(backend: B) -> Self {
        let shared = std::rc::Rc::new(backend);
        Gateway::new(Box::new(shared.clone()), Box::new(shared))
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn take_transcript(&mut self) -> Vec<TranscriptEntry> {
        std::mem::take(&mut self.transcript)
    }

    fn call(&mut self, slot: Slot, template: TemplateId, system: &str, user: &str, attempt: usize) -> Result<String, BackendError> {
        let params = match slot {
            Slot::Generator => self.generator_params.clone(),
            Slot::Reflector => self.reflector_params.clone(),
        };
        let req = ChatRequest { system: system.to_string(), user: user.to_string(), params };
        let hash = req.prompt_sha256();
        let mut last = None;
        for _ in 0..=self.transport_retries {
            let backend = match slot {
                Slot::Generator => &self.generator,
                Slot::Reflector => &self.reflector,
            };
            match backend.complete(&req) {
                Ok(reply) => {
                    self.transcript.push(TranscriptEntry {
                        template,
                        slot,
                        attempt,
                        prompt_sha256: hash,
                        reply: Some(reply.clone()),
                        error: None,
                    });
                    return Ok(reply);
                }
                // a missing fixture will not appear on retry
                Err(e @ BackendError::UnknownPrompt(_)) | Err(e @ BackendError::Config(_)) => {
                    last = Some(e);
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        let err = last.expect("at least one attempt");
        self.transcript.push(TranscriptEntry {
            template,
            slot,
            attempt,
            prompt_sha256: hash,
            reply: None,
            error: Some(err.to_string()),
        });
        Err(err)
    }

    /// Sends a prompt and parses the reply, retrying with a corrective
    /// instruction appended when parsing fails.
    pub fn ask<T>(
        &mut self,
        slot: Slot,
        template: TemplateId,
        system: &str,
        user: &str,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, GatewayError> {
        let mut last_err = None;
        for attempt in 0..=self.parse_retries {
            let prompt = match &last_err {
                None => user.to_string(),
                Some(e) => format!("{user}\n\n{CORRECTIVE_INSTRUCTION} ({e})"),
            };
            let reply = self
                .call(slot, template, system, &prompt, attempt)
                .map_err(|source| GatewayError::Backend { template, source })?;
            match parse(&reply) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("{template:?} reply unparseable on attempt {attempt}: {e}");
                    last_err = Some(e);
                }
            }
        }
        Err(GatewayError::Parse {
            template,
            attempts: self.parse_retries + 1,
            source: last_err.expect("at least one attempt"),
        })
    }

    /// Free-text completion; never fails on content.
    pub fn ask_text(&mut self, slot: Slot, template: TemplateId, system: &str, user: &str) -> Result<String, GatewayError> {
        self.call(slot, template, system, user, 0)
            .map_err(|source| GatewayError::Backend { template, source })
    }
}

/// Input for one cluster's intent analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentInput {
    pub cluster: ClusterId,
    /// Keyword text with its metric values, names in schema order.
    pub rows: Vec<(String, Vec<(String, f64)>)>,
}

/// One intent-analysis call per cluster, in cluster id order.
pub fn intent_summaries(
    clusters: &[IntentInput],
    product_name: &str,
    product_information: &str,
    gateway: &mut Gateway,
) -> Result<BTreeMap<ClusterId, String>, GatewayError> {
    let mut ordered: Vec<&IntentInput> = clusters.iter().collect();
    ordered.sort_by_key(|c| c.cluster);
    let mut out = BTreeMap::new();
    for c in ordered {
        let prompt = render(
            TemplateId::Intent,
            &templates::vars([
                ("product_name", product_name.to_string()),
                ("product_information", product_information.to_string()),
                ("clusters", templates::intent_cluster_block(&c.cluster.to_string(), &c.rows)),
            ]),
        )
        .expect("intent placeholders supplied");
        let summary = gateway.ask_text(Slot::Generator, TemplateId::Intent, "", &prompt.rendered_text)?;
        out.insert(c.cluster, summary.trim().to_string());
    }
    Ok(out)
}
