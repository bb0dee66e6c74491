//! Text-generation backends: a deterministic offline template and a remote
//! OpenAI-compatible chat-completions endpoint.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use searisk_core::evidence::EvidenceRecord;

use crate::error::{ReportError, Result};
use crate::prompt::PromptBundle;
use crate::schema::{DriverEntry, RiskReport};

/// Raw output of one backend call, plus the request that produced it when
/// the backend has one worth auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub model: Option<String>,
    pub request: Option<Value>,
    pub http_attempts: usize,
}

pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Produce report text for `bundle`. `feedback` carries the validation
    /// error from a rejected previous answer.
    fn generate(&self, bundle: &PromptBundle, feedback: Option<&str>) -> Result<BackendReply>;

    /// Whether reports from this backend carry a wall-clock timestamp.
    fn timestamps(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateBackend;

fn confidence_band(p: f64) -> &'static str {
    if p >= 0.8 || p <= 0.2 {
        "well away from"
    } else if p >= 0.6 || p <= 0.4 {
        "moderately far from"
    } else {
        "close to"
    }
}

/// Fill the six sections from the evidence with fixed sentence templates.
pub fn template_report(ev: &EvidenceRecord) -> RiskReport {
    let target_feature_drivers = ev
        .drivers
        .iter()
        .map(|d| DriverEntry {
            feature: d.feature.clone(),
            direction: Some(d.direction.as_str().to_string()),
            justification: format!(
                "{} sits at z = {:.3} against a dataset correlation of r = {:.3}; this points to {}{}.",
                d.feature,
                d.z,
                d.r,
                d.direction,
                if d.weak { " (weak evidence, the product is zero)" } else { "" }
            ),
        })
        .collect();

    let mut neighbor_influence = ev
        .neighbors
        .iter()
        .enumerate()
        .map(|(k, n)| {
            format!(
                "Neighbour {} is cell {} with attention weight {:.3}; its most prominent feature is {} (z = {:.3}).",
                k + 1,
                n.cell,
                n.weight,
                n.feature,
                n.z
            )
        })
        .collect::<Vec<_>>()
        .join(" ");
    if ev.neighbor_shortfall {
        neighbor_influence.push_str(" No second neighbour is available for this cell.");
    }

    let top = &ev.drivers[0];
    let increases = ev.drivers.iter().filter(|d| d.direction.as_str() == "increase risk").count();
    let risk_summary = format!(
        "Cell {} on {} has a predicted escalation probability of {:.3}. The leading driver is {} ({}), \
         and {} of the five listed drivers point to increase risk.",
        ev.cell, ev.date, ev.probability, top.feature, top.direction, increases
    );
    let counterfactual_suggestions = format!(
        "If {} moved back toward its daily average or beyond it, its contribution would {} instead.",
        top.feature,
        top.direction.flipped()
    );
    let weak = ev.drivers.iter().filter(|d| d.weak).count();
    let confidence_and_uncertainty = format!(
        "The probability of {:.3} is {} the 0.5 midpoint. {} of the five drivers carry weak evidence{}.",
        ev.probability,
        confidence_band(ev.probability),
        weak,
        if ev.neighbor_shortfall { ", and the neighbour evidence is incomplete" } else { "" }
    );
    let limitations = "Directions come from dataset-level correlations and same-day z-scores, not from causal \
                       analysis. Attention weights describe what the model attended to, not physical influence. \
                       Only the listed evidence was used."
        .to_string();

    RiskReport {
        target_feature_drivers,
        neighbor_influence,
        risk_summary,
        counterfactual_suggestions,
        confidence_and_uncertainty,
        limitations,
    }
}

impl GenerationBackend for TemplateBackend {
    fn id(&self) -> &str {
        "template"
    }

    fn generate(&self, bundle: &PromptBundle, _feedback: Option<&str>) -> Result<BackendReply> {
        let text = serde_json::to_string_pretty(&template_report(&bundle.evidence))?;
        Ok(BackendReply {
            text,
            model: None,
            request: None,
            http_attempts: 0,
        })
    }

    fn timestamps(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_attempts: usize,
    pub backoff_ms: u64,
    pub json_mode: bool,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            max_attempts: 3,
            backoff_ms: 1000,
            json_mode: true,
        }
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct Completion {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

enum Failure {
    Retry(String),
    Fatal(String),
}

impl RemoteBackend {
    /// Reads the API key from `cfg.api_key_env`; a missing key is allowed for
    /// endpoints that do not authenticate.
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if cfg.max_attempts == 0 {
            return Err(ReportError::Config("max_attempts must be at least 1".into()));
        }
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ReportError::Config(format!("http client: {e}")))?;
        Ok(RemoteBackend { cfg, api_key, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    pub fn request_body(&self, bundle: &PromptBundle, feedback: Option<&str>) -> Value {
        let mut user = bundle.user_text();
        if let Some(err) = feedback {
            user.push_str(&format!(
                "\n\nYour previous answer was rejected by the validator: {err}\nReturn a corrected JSON object."
            ));
        }
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": user},
            ],
            "temperature": 0,
            "max_tokens": bundle.token_budget,
        });
        if self.cfg.json_mode {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }

    fn call_once(&self, body: &Value) -> std::result::Result<(String, Option<String>), Failure> {
        let mut req = self.client.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retry(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: Completion =
            serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("unreadable completion: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Failure::Fatal("completion has no message content".into()))?;
        Ok((content, parsed.model))
    }
}

impl GenerationBackend for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn generate(&self, bundle: &PromptBundle, feedback: Option<&str>) -> Result<BackendReply> {
        let body = self.request_body(bundle, feedback);
        let mut last = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            match self.call_once(&body) {
                Ok((text, model)) => {
                    return Ok(BackendReply {
                        text,
                        model: model.or_else(|| Some(self.cfg.model.clone())),
                        request: Some(body),
                        http_attempts: attempt,
                    })
                }
                Err(Failure::Fatal(detail)) => {
                    return Err(ReportError::Transport {
                        attempts: attempt,
                        detail,
                    })
                }
                Err(Failure::Retry(detail)) => {
                    last = detail;
                    if attempt < self.cfg.max_attempts {
                        thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1)));
                    }
                }
            }
        }
        Err(ReportError::Transport {
            attempts: self.cfg.max_attempts,
            detail: last,
        })
    }
}
