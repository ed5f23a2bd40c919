//! Prompt assembly and streaming response generation.

mod prompt;
mod provider;

pub use prompt::{
    assemble_prompt, format_context, render_template, AssembledPrompt, ChatMessage, PromptOptions,
    Role, Turn, EMPTY_CONTEXT_NOTICE, TRUNCATION_MARK,
};
pub use provider::{
    generate, split_fragments, FinishReason, GenerationResult, LlmError, LlmKind, LlmProvider,
    LlmSpec, MockLlm, RemoteLlm, ERROR_MARKER, MOCK_FRAGMENT_CHARS, MOCK_PREAMBLE,
};
