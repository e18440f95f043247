//! Fixed prompt templates for the LLM-backed stages.

use serde::Serialize;

use super::ChatRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PromptTemplate {
    pub role: ChatRole,
    pub id: &'static str,
    pub text: &'static str,
}

/// Id of the single template for roles that have no prompt choice.
pub const FIXED: &str = "fixed";

const TEMPLATES: [PromptTemplate; 8] = [
    PromptTemplate {
        role: ChatRole::Rewriter,
        id: "P1",
        text: "Rewrite the user query for retrieval. Output only the rewritten query; do not answer the question or add explanations.",
    },
    PromptTemplate {
        role: ChatRole::Rewriter,
        id: "P2",
        text: "Rewrite the user query for retrieval with keywords and entities. Output only the rewritten query; do not answer the question or add explanations.",
    },
    PromptTemplate {
        role: ChatRole::Rewriter,
        id: "P3",
        text: "Rewrite the user query as a standalone question for retrieval. Output only the rewritten query; do not answer the question or add explanations.",
    },
    PromptTemplate {
        role: ChatRole::Pruner,
        id: "P1",
        text: "Keep only sentences that directly support the answer. Output only the pruned context text; do not answer the question or add explanations.",
    },
    PromptTemplate {
        role: ChatRole::Pruner,
        id: "P2",
        text: "Select the minimal context needed to answer. Output only the pruned context text; do not answer the question or add explanations.",
    },
    PromptTemplate {
        role: ChatRole::Pruner,
        id: "P3",
        text: "Remove irrelevant content and keep key evidence only. Output only the pruned context text; do not answer the question or add explanations.",
    },
    PromptTemplate {
        role: ChatRole::Generator,
        id: FIXED,
        text: "Answer the question using only the provided context. If the answer is not in the context, state that it is unknown.",
    },
    PromptTemplate {
        role: ChatRole::Judge,
        id: FIXED,
        text: "Judge whether the answer matches the reference list and return a JSON score with a short reason.",
    },
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("no prompt template `{id}` for role {role}")]
pub struct UnknownPrompt {
    pub role: ChatRole,
    pub id: String,
}

pub fn get_prompt(role: ChatRole, id: &str) -> Result<PromptTemplate, UnknownPrompt> {
    TEMPLATES
        .iter()
        .find(|t| t.role == role && t.id == id)
        .copied()
        .ok_or_else(|| UnknownPrompt { role, id: id.to_string() })
}

pub fn templates() -> &'static [PromptTemplate] {
    &TEMPLATES
}
