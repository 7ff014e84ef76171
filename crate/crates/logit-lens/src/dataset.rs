//! Multi-document QA datasets (JSON lines) and prompt templates.
//!
//! One object per line:
//!
//! ```json
//! {"question": "...", "answers": ["..."], "ctxs": [{"title": "...", "text": "...", "isgold": true}]}
//! ```
//!
//! The first context with `isgold: true` is the gold document and every other
//! context joins the distractor pool. Instance ids are 0-based line numbers
//! among non-blank lines. Unknown fields are ignored.

use std::fs;
use std::path::Path;

use logit_lens_core::qa::{Document, PromptTemplate, QAInstance};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The bundled default template, identical to `PromptTemplate::default()`.
pub const DEFAULT_TEMPLATE_JSON: &str = include_str!("../assets/qa-v1.json");

#[derive(Deserialize)]
struct RawInstance {
    question: String,
    answers: Vec<String>,
    ctxs: Vec<RawContext>,
}

#[derive(Deserialize)]
struct RawContext {
    #[serde(default)]
    title: String,
    text: String,
    #[serde(default)]
    isgold: bool,
}

fn convert(id: usize, raw: RawInstance) -> std::result::Result<QAInstance, String> {
    let gold_at = raw
        .ctxs
        .iter()
        .position(|c| c.isgold)
        .ok_or("no context is marked isgold")?;
    let mut gold_document = None;
    let mut distractor_pool = Vec::with_capacity(raw.ctxs.len().saturating_sub(1));
    for (i, c) in raw.ctxs.into_iter().enumerate() {
        let doc = Document {
            title: c.title,
            text: c.text,
        };
        if i == gold_at {
            gold_document = Some(doc);
        } else {
            distractor_pool.push(doc);
        }
    }
    let instance = QAInstance {
        id,
        question: raw.question,
        answers: raw.answers,
        gold_document: gold_document.expect("gold index is in range"),
        distractor_pool,
    };
    instance.validate().map_err(|e| e.to_string())?;
    Ok(instance)
}

/// Parses JSON-lines text. `origin` names the source in error messages.
pub fn parse_jsonl(text: &str, origin: &Path) -> Result<Vec<QAInstance>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Dataset {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let raw: RawInstance = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        out.push(convert(out.len(), raw).map_err(fail)?);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<QAInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

/// Serializes instances back to the JSON-lines layout (gold context first).
pub fn to_jsonl(instances: &[QAInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        let ctxs: Vec<_> = std::iter::once((&inst.gold_document, true))
            .chain(inst.distractor_pool.iter().map(|d| (d, false)))
            .map(|(d, gold)| serde_json::json!({"title": d.title, "text": d.text, "isgold": gold}))
            .collect();
        let line = serde_json::json!({
            "question": inst.question,
            "answers": inst.answers,
            "ctxs": ctxs,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    version: String,
    instruction: String,
    document: String,
    question: String,
}

pub fn parse_template(json: &str) -> Result<PromptTemplate> {
    let t: TemplateFile = serde_json::from_str(json).map_err(|e| Error::json("prompt template", e))?;
    for (field, needle) in [
        (&t.document, "{text}"),
        (&t.document, "{index}"),
        (&t.question, "{question}"),
    ] {
        if !field.contains(needle) {
            return Err(Error::InvalidInput(format!(
                "prompt template {} lacks the {needle} placeholder",
                t.version
            )));
        }
    }
    Ok(PromptTemplate {
        version: t.version,
        instruction: t.instruction,
        document: t.document,
        question: t.question,
    })
}

pub fn read_template(path: &Path) -> Result<PromptTemplate> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_template(&text)
}

pub fn default_template() -> PromptTemplate {
    parse_template(DEFAULT_TEMPLATE_JSON).expect("bundled template is valid")
}
