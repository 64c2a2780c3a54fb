//! Versioned, content-addressed prompt templates and their renderer.
//!
//! Templates use `{{name}}` placeholders. Article text, candidate lists and
//! sentence lists are wrapped in `<<<BLOCK ... BLOCK>>>` fences so responses
//! and the offline mock can locate them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ArticleType, LeanLabel, OrdinalScale, ToneLabel};
use crate::taxonomy::TaxonomyNode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TaxonomyClassify,
    ArticleType,
    Tone,
    Lean,
    SentenceTypes,
    EventSummary,
    FactGrouping,
}

impl Task {
    pub const ALL: [Self; 7] = [
        Self::TaxonomyClassify,
        Self::ArticleType,
        Self::Tone,
        Self::Lean,
        Self::SentenceTypes,
        Self::EventSummary,
        Self::FactGrouping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::TaxonomyClassify => "taxonomy_classify",
            Self::ArticleType => "article_type",
            Self::Tone => "tone",
            Self::Lean => "lean",
            Self::SentenceTypes => "sentence_types",
            Self::EventSummary => "event_summary",
            Self::FactGrouping => "fact_grouping",
        }
    }

    /// Placeholders a template for this task must reference.
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Self::TaxonomyClassify => &["level", "candidates", "title", "body"],
            Self::ArticleType | Self::Tone | Self::Lean => &["definition", "labels", "title", "body"],
            Self::SentenceTypes => &["labels", "sentences"],
            Self::EventSummary => &["headlines"],
            Self::FactGrouping => &["facts"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| PromptError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template references placeholder `{0}` with no value")]
    MissingPlaceholder(String),
    #[error("{task} template does not reference required placeholder `{name}`")]
    MissingRequiredPlaceholder { task: Task, name: String },
    #[error("unterminated placeholder in template")]
    Unterminated,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("template file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: Task,
    pub version: String,
    pub text: String,
    content_hash: String,
}

fn placeholders(text: &str) -> Result<Vec<&str>, PromptError> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(PromptError::Unterminated)?;
        out.push(after[..end].trim());
        rest = &after[end + 2..];
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn new(task: Task, version: impl Into<String>, text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        let used = placeholders(&text)?;
        for name in task.required_placeholders() {
            if !used.contains(name) {
                return Err(PromptError::MissingRequiredPlaceholder {
                    task,
                    name: (*name).to_string(),
                });
            }
        }
        let content_hash = hex::encode(&Sha256::digest(text.as_bytes())[..6]);
        Ok(Self {
            task,
            version: version.into(),
            text,
            content_hash,
        })
    }

    /// `<semver>+<content digest>`; identical text always yields the same tag.
    pub fn version_tag(&self) -> String {
        format!("{}+{}", self.version, self.content_hash)
    }

    /// Substitutes every placeholder. Pure: equal inputs give byte-identical output.
    pub fn render(&self, values: &PromptValues) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or(PromptError::Unterminated)?;
            let name = after[..end].trim();
            let value = values
                .get(name)
                .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

pub type PromptValues = BTreeMap<&'static str, String>;

const BUILTIN: [(Task, &str, &str); 7] = [
    (Task::TaxonomyClassify, "1.0.0", include_str!("../../prompts/taxonomy_classify.v1.0.0.txt")),
    (Task::ArticleType, "1.0.0", include_str!("../../prompts/article_type.v1.0.0.txt")),
    (Task::Tone, "1.0.0", include_str!("../../prompts/tone.v1.0.0.txt")),
    (Task::Lean, "1.0.0", include_str!("../../prompts/lean.v1.0.0.txt")),
    (Task::SentenceTypes, "1.0.0", include_str!("../../prompts/sentence_types.v1.0.0.txt")),
    (Task::EventSummary, "1.0.0", include_str!("../../prompts/event_summary.v1.0.0.txt")),
    (Task::FactGrouping, "1.0.0", include_str!("../../prompts/fact_grouping.v1.0.0.txt")),
];

/// One template per task.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<Task, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(task, version, text)| {
                (*task, PromptTemplate::new(*task, *version, *text).expect("builtin template valid"))
            })
            .collect();
        Self { templates }
    }

    /// Loads `<task>.v<semver>.txt` files from `dir`, overriding the builtins.
    /// When several versions of a task exist the highest semver wins.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        let mut found: BTreeMap<Task, (Vec<u64>, PromptTemplate)> = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| PromptError::Io(e.to_string()))?;
        for entry in entries {
            let path = entry.map_err(|e| PromptError::Io(e.to_string()))?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(stem) = name.strip_suffix(".txt") else { continue };
            let Some((task, version)) = stem.split_once(".v") else { continue };
            let task: Task = task.parse()?;
            let key: Vec<u64> = version.split('.').filter_map(|p| p.parse().ok()).collect();
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io(e.to_string()))?;
            let tpl = PromptTemplate::new(task, version, text)?;
            if found.get(&task).is_none_or(|(k, _)| *k < key) {
                found.insert(task, (key, tpl));
            }
        }
        for (task, (_, tpl)) in found {
            set.templates.insert(task, tpl);
        }
        Ok(set)
    }

    pub fn get(&self, task: Task) -> &PromptTemplate {
        &self.templates[&task]
    }

    /// Combined tag of the article-level templates, stored on annotations.
    pub fn annotation_version(&self) -> String {
        let tasks = [Task::TaxonomyClassify, Task::ArticleType, Task::Tone, Task::Lean];
        let mut h = Sha256::new();
        for t in tasks {
            h.update(self.get(t).version_tag().as_bytes());
            h.update([0u8]);
        }
        format!("{}+{}", self.get(Task::Lean).version, hex::encode(&h.finalize()[..6]))
    }
}

pub const LEAN_DEFINITION: &str = "Political lean measures how closely the article's choice of \
sources, emphasis and framing lines up with the stated positions, policy goals and worries of \
the Democratic Party or of the Republican Party. Pick Neutral when the article favors neither.";

pub const TONE_DEFINITION: &str = "Tone measures how warmly or harshly the writing treats its \
main subject, using the five labels below. Judge the wording and framing, not whether \
the underlying events are good or bad news.";

pub const ARTICLE_TYPE_DEFINITION: &str = "A news report states what happened with minimal \
interpretation. A news analysis explains causes, context or consequences while staying \
reported. An opinion piece argues for a point of view.";

pub fn scale_label_lines<S: OrdinalScale>() -> String {
    S::ALL.iter().map(|m| format!("- {}", m.label())).collect::<Vec<_>>().join("\n")
}

pub fn article_type_label_lines() -> String {
    ArticleType::ALL
        .iter()
        .map(|t| format!("- {}", t.label()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn candidate_lines(nodes: &[&TaxonomyNode]) -> String {
    nodes
        .iter()
        .map(|n| format!("{} | {}", n.id, n.name))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn article_values(title: &str, body: &str) -> PromptValues {
    let mut v = PromptValues::new();
    v.insert("title", title.trim().to_string());
    v.insert("body", body.trim().to_string());
    v
}

pub fn scale_values<S: OrdinalScale>(title: &str, body: &str, definition: &str) -> PromptValues {
    let mut v = article_values(title, body);
    v.insert("definition", definition.to_string());
    v.insert("labels", scale_label_lines::<S>());
    v
}

pub fn lean_values(title: &str, body: &str) -> PromptValues {
    scale_values::<LeanLabel>(title, body, LEAN_DEFINITION)
}

pub fn tone_values(title: &str, body: &str) -> PromptValues {
    scale_values::<ToneLabel>(title, body, TONE_DEFINITION)
}
