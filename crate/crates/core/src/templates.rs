//! Named prompt templates with `{placeholder}` substitution.
//!
//! `{{` and `}}` render as literal braces. Rendering fails if the template
//! names a placeholder that was not supplied.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{0}` not found")]
    Missing(String),
    #[error("template `{template}` references unknown placeholder `{placeholder}`")]
    UnknownPlaceholder { template: String, placeholder: String },
    #[error("template `{template}` has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("cannot read templates from {path}: {message}")]
    Io { path: String, message: String },
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../templates/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "doctor_instruction",
    "doctor_prompt",
    "task_examination",
    "task_diagnosis",
    "task_treatment",
    "reflect",
    "judge_helpfulness",
    "refine",
    "read_books",
    "triage",
    "patient_basic_info",
    "patient_history",
    "patient_symptoms",
    "patient_exams",
    "qc_judge",
);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    /// The templates compiled into the crate (identical to `templates/`).
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Load every `*.txt` file of `dir`, keyed by file stem.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| TemplateError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut templates = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let stem = path.file_stem().unwrap().to_string_lossy().to_string();
                templates.insert(stem, fs::read_to_string(&path).map_err(io)?);
            }
        }
        Ok(Self { templates })
    }

    pub fn insert(&mut self, name: impl Into<String>, body: impl Into<String>) {
        self.templates.insert(name.into(), body.into());
    }

    pub fn get(&self, name: &str) -> Result<&str, TemplateError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::Missing(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        render_str(name, self.get(name)?, vars)
    }
}

fn render_str(name: &str, template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            out.push('}');
            rest = &tail[1..];
        } else {
            let end = tail.find('}').ok_or_else(|| TemplateError::Unterminated {
                template: name.to_string(),
            })?;
            let key = &tail[1..end];
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::UnknownPlaceholder {
                    template: name.to_string(),
                    placeholder: key.to_string(),
                })?;
            out.push_str(value);
            rest = &tail[end + 1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}
