//! Project ingestion, desensitization, and the canonical project store.
//!
//! The store is one JSON record per line with a stable field order, so
//! re-saving an unchanged store is byte-identical and diffs stay readable.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexical;

/// One proposal document in the reference corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub title: String,
    pub body: String,
    pub year: i32,
    pub tags: Vec<String>,
    pub token_count: usize,
}

/// A raw document before desensitization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub year: i32,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// A regex-based rewrite rule for sensitive spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesensitizationRule {
    pub category: String,
    pub pattern: String,
    pub replacement: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate project id `{0}`")]
    DuplicateId(String),
    #[error("rule `{category}` has a non-compiling pattern: {source}")]
    BadPattern {
        category: String,
        #[source]
        source: Box<regex::Error>,
    },
    #[error("rule `{0}` replacement matches its own pattern")]
    SelfTriggering(String),
    #[error("{path}: line {line}: malformed record: {source}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("store file not found: {0}")]
    NotFound(PathBuf),
    #[error("unknown project id `{0}`")]
    UnknownProject(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct CompiledRule {
    regex: Regex,
    replacement: String,
}

fn compile_rules(rules: &[DesensitizationRule]) -> Result<Vec<CompiledRule>, CorpusError> {
    rules
        .iter()
        .map(|rule| {
            let regex = Regex::new(&rule.pattern).map_err(|e| CorpusError::BadPattern {
                category: rule.category.clone(),
                source: Box::new(e),
            })?;
            if regex.is_match(&rule.replacement) {
                return Err(CorpusError::SelfTriggering(rule.category.clone()));
            }
            Ok(CompiledRule { regex, replacement: rule.replacement.clone() })
        })
        .collect()
}

/// Applies the rules in list order; each rule rewrites the output of the
/// previous one. Replacements are literal, never expanded.
fn desensitize(body: &str, rules: &[CompiledRule]) -> String {
    let mut text = body.to_string();
    for rule in rules {
        text = rule
            .regex
            .replace_all(&text, regex::NoExpand(&rule.replacement))
            .into_owned();
    }
    text
}

/// Ingests raw documents into desensitized projects with token counts.
pub fn ingest(
    raw: Vec<RawDocument>,
    rules: &[DesensitizationRule],
) -> Result<Vec<Project>, CorpusError> {
    let compiled = compile_rules(rules)?;
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(raw.len());
    for doc in &raw {
        if seen.insert(&doc.id, ()).is_some() {
            return Err(CorpusError::DuplicateId(doc.id.clone()));
        }
    }
    Ok(raw
        .into_iter()
        .map(|doc| {
            let body = desensitize(&doc.body, &compiled);
            let token_count =
                lexical::approx_token_count(&doc.title) + lexical::approx_token_count(&body);
            Project {
                id: doc.id,
                title: doc.title,
                body,
                year: doc.year,
                tags: doc.tags,
                token_count,
            }
        })
        .collect())
}

/// Default rules: CN-style mobile numbers, national-ID-like digit runs, and
/// email addresses.
pub fn default_rules() -> Vec<DesensitizationRule> {
    vec![
        DesensitizationRule {
            category: "phone".into(),
            pattern: r"\b1[3-9]\d{9}\b".into(),
            replacement: "[PHONE]".into(),
        },
        DesensitizationRule {
            category: "national-id".into(),
            pattern: r"\b\d{17}[0-9Xx]\b".into(),
            replacement: "[ID-NUMBER]".into(),
        },
        DesensitizationRule {
            category: "email".into(),
            pattern: r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}".into(),
            replacement: "[EMAIL]".into(),
        },
    ]
}

/// Loads desensitization rules from a line-delimited JSON file.
pub fn load_rules(path: &Path) -> Result<Vec<DesensitizationRule>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::NotFound(path.to_path_buf()),
        _ => CorpusError::Io(e),
    })?;
    let mut rules = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rule: DesensitizationRule =
            serde_json::from_str(&line).map_err(|source| CorpusError::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                source,
            })?;
        rules.push(rule);
    }
    // Surface pattern problems at load time rather than mid-ingest.
    compile_rules(&rules)?;
    Ok(rules)
}

/// Immutable project store, unique ids, shareable read-only.
#[derive(Debug, Clone, Default)]
pub struct ProjectStore {
    projects: Vec<Project>,
    by_id: HashMap<String, usize>,
}

impl ProjectStore {
    pub fn new(projects: Vec<Project>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(projects.len());
        for (idx, project) in projects.iter().enumerate() {
            if by_id.insert(project.id.clone(), idx).is_some() {
                return Err(CorpusError::DuplicateId(project.id.clone()));
            }
        }
        Ok(ProjectStore { projects, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Project> {
        self.by_id.get(id).map(|&idx| &self.projects[idx])
    }

    pub fn require(&self, id: &str) -> Result<&Project, CorpusError> {
        self.get(id).ok_or_else(|| CorpusError::UnknownProject(id.to_string()))
    }

    pub fn projects(&self) -> &[Project] {
        &self.projects
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.projects.iter().map(|p| p.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.projects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projects.is_empty()
    }

    /// Serializes to line-delimited JSON with stable field order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for project in &self.projects {
            out.push_str(&serde_json::to_string(project).expect("project serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self, CorpusError> {
        let mut projects = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let project: Project =
                serde_json::from_str(line).map_err(|source| CorpusError::MalformedRecord {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    source,
                })?;
            projects.push(project);
        }
        ProjectStore::new(projects)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CorpusError::NotFound(path.to_path_buf()),
            _ => CorpusError::Io(e),
        })?;
        Self::from_jsonl(&text, path)
    }
}
