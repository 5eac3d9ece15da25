//! Customer-review triage on top of the workflow engine: categorize, score
//! sentiment, then either answer from a template or pause for a human.

mod api;
mod bridge;
mod lexicon;
mod pipeline;
mod remote;
mod tickets;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use api::review_router;
pub use bridge::{BridgeStats, SentimentBridge};
pub use lexicon::LexiconClassifier;
pub use pipeline::{
    build_graph, keys, route, ResolveError, ResolveRequest, ResultRow, ResultsLog, ReviewService, AUTO_RESPOND,
    HUMAN_REVIEW,
};
pub use remote::{RemoteClassifier, RemoteConfig};
pub use tickets::{Resolution, ReviewTicket, TicketError, TicketHook, TicketStatus, TicketStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Neutral,
    Negative,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Neutral => "neutral",
            Label::Negative => "negative",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Label::Positive),
            "neutral" => Ok(Label::Neutral),
            "negative" => Ok(Label::Negative),
            other => Err(format!("unknown sentiment label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentResult {
    pub label: Label,
    /// In `[0, 1]`.
    pub confidence: f64,
    pub classifier_id: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("classifier unavailable: {0}")]
    ClassifierUnavailable(String),
    #[error("malformed verdict: {0}")]
    MalformedVerdict(String),
}

/// Anything that can label review text.
pub trait Classifier: Send + Sync {
    fn id(&self) -> &str;
    /// Picks one of `categories` for `query`.
    fn categorize(&self, query: &str, categories: &[String]) -> Result<String, ClassifierError>;
    fn analyze(&self, text: &str) -> Result<SentimentResult, ClassifierError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRule {
    pub name: String,
    #[serde(default)]
    pub keywords: Vec<String>,
}

/// Lexicon, category rules, routing threshold and response templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentConfig {
    /// Results below this confidence go to human review.
    pub threshold: f64,
    pub fallback_category: String,
    pub categories: Vec<CategoryRule>,
    pub positive_words: Vec<String>,
    pub negative_words: Vec<String>,
    /// Keyed by `"<category>/<label>"`.
    pub templates: BTreeMap<String, String>,
    pub default_template: String,
}

const DEFAULT_CONFIG: &str = include_str!("../../config/sentiment.json");

impl Default for SentimentConfig {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_CONFIG).expect("bundled sentiment config is valid")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing sentiment config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid sentiment config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no template for category {category:?}")]
pub struct MissingTemplate {
    pub category: String,
}

impl SentimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ConfigError::Invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !self.categories.iter().any(|c| c.name == self.fallback_category) {
            return Err(ConfigError::Invalid(format!(
                "fallback category {:?} is not in the category list",
                self.fallback_category
            )));
        }
        Ok(())
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    pub fn has_category(&self, name: &str) -> bool {
        self.categories.iter().any(|c| c.name == name)
    }

    /// The `(category, label)` template, the default template for a
    /// configured category without one, or an error for unknown categories.
    pub fn template(&self, category: &str, label: Label) -> Result<&str, MissingTemplate> {
        if let Some(t) = self.templates.get(&format!("{category}/{label}")) {
            return Ok(t);
        }
        if self.has_category(category) {
            return Ok(&self.default_template);
        }
        Err(MissingTemplate {
            category: category.to_owned(),
        })
    }
}

/// Lowercased alphanumeric words (apostrophes kept inside words).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}
