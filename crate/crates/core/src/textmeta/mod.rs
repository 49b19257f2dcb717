//! Prompt rendering, meta-output parsing, and notion matching.

mod lemma;
mod parse;
mod prompt;

pub use lemma::{lemmatize, lemmatize_word, lemmatize_words, notion_in_text, LemmatizedText};
pub use parse::{parse_meta_output, render_meta_text, serialize_meta_record, META_CLOSE, META_OPEN};
pub use prompt::{
    hints_in_prompt, join_messages, meta_prompt_messages, render_meta_prompt, render_solution_prompt,
    solution_prompt_messages, Message, PromptTemplate, Role, HINT_HEADER,
};
