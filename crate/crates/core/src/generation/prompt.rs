use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievedSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

pub const TRUNCATION_MARK: &str = "…[truncated]";

/// Sentence the model is told to state when no sources were retrieved.
pub const EMPTY_CONTEXT_NOTICE: &str = "There is no relevant information in previous notebooks";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptOptions {
    /// Per-source character budget; longer texts are cut and marked.
    pub source_char_budget: usize,
    /// How many of the most recent conversation turns are sent.
    pub history_turns: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            source_char_budget: 6_000,
            history_turns: 6,
        }
    }
}

/// A fully instantiated prompt for one conversation turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    /// The instruction template with competition, context and question filled in.
    pub system_text: String,
    /// Prior turns, oldest first.
    pub history: Vec<Turn>,
    pub current_user_text: String,
    /// The `{context}` slot as inserted into `system_text`.
    pub context: String,
    /// Chunk ids of the sources, in ranked order.
    pub source_ids: Vec<String>,
}

/// Chat message in provider order: history, then the templated current turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'static str,
    pub content: &'a str,
}

impl AssembledPrompt {
    pub fn messages(&self) -> Vec<ChatMessage<'_>> {
        self.history
            .iter()
            .map(|t| ChatMessage { role: t.role.as_str(), content: &t.text })
            .chain(std::iter::once(ChatMessage {
                role: "user",
                content: &self.system_text,
            }))
            .collect()
    }
}

pub fn render_template(title: &str, description: &str, context: &str, question: &str) -> String {
    format!(
        "Task: You are an expert in data science. Your goal is to assist a user in dealing with a \
task related to a Kaggle competition: {title}. Whenever possible, provide answers in the form of \
code snippets that directly address the user's needs.\n\
\n\
Information Provided:\n\
1. Competition Description: {description}\n\
2. Context: {context}\n\
\n\
*Note:* The context includes other people's code, which contains information necessary for \
answering the user's question. Please rely solely on the provided context to craft your response. \
Assume all questions pertain specifically to this competition. If the context is empty, state \
\"{EMPTY_CONTEXT_NOTICE}\" and then proceed to answer the question based on your expertise.\n\
\n\
User Query: {question}\n\
\n\
Expected Output: Please provide your response as a string, including code snippets where applicable.\n"
    )
}

fn truncate_chars(text: &str, budget: usize) -> String {
    match text.char_indices().nth(budget) {
        Some((cut, _)) => format!("{}{TRUNCATION_MARK}", &text[..cut]),
        None => text.to_string(),
    }
}

/// Sources joined in the given order, each under a `--- Source k ---` header
/// where `k` is its rank position. Empty when there are no sources.
pub fn format_context<T>(sources: &[RetrievedSource<T>], char_budget: usize) -> String {
    sources
        .iter()
        .map(|s| {
            let body = truncate_chars(&s.chunk.rendered_text, char_budget);
            format!("--- Source {} ---\n{}", s.rank_position, body.trim_end_matches('\n'))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn assemble_prompt<T>(
    query: &str,
    sources: &[RetrievedSource<T>],
    competition_title: &str,
    competition_description: &str,
    history: &[Turn],
    options: &PromptOptions,
) -> AssembledPrompt {
    let context = format_context(sources, options.source_char_budget);
    let system_text = render_template(competition_title, competition_description, &context, query);
    let start = history.len().saturating_sub(options.history_turns);
    AssembledPrompt {
        system_text,
        history: history[start..].to_vec(),
        current_user_text: query.to_string(),
        context,
        source_ids: sources.iter().map(|s| s.chunk.chunk_id.clone()).collect(),
    }
}
