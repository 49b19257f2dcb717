use serde::{Deserialize, Serialize};

use crate::error::{MasaError, Result};
use crate::types::{Task, MIN_PREDICTED_LENGTH};

const META_TEMPLATE_V1: &str = include_str!("../../assets/meta_prompt_v1.txt");
const SOLUTION_TEMPLATE_V1: &str = include_str!("../../assets/solution_prompt_v1.txt");

/// Header line that opens the hint block of a solution prompt.
pub const HINT_HEADER: &str = "Relevant notions:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

impl Role {
    fn tag(self) -> &'static str {
        match self {
            Role::System => "[System]:",
            Role::User => "[User]:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Role-tagged messages containing `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    messages: Vec<Message>,
}

impl PromptTemplate {
    /// Parses the checked-in asset format: a `[System]:` or `[User]:` line
    /// opens a message, everything up to the next tag is its content.
    pub fn parse(source: &str) -> Result<Self> {
        let mut messages: Vec<Message> = Vec::new();
        for line in source.lines() {
            let role = match line.trim_end() {
                "[System]:" => Some(Role::System),
                "[User]:" => Some(Role::User),
                _ => None,
            };
            match (role, messages.last_mut()) {
                (Some(role), _) => messages.push(Message {
                    role,
                    content: String::new(),
                }),
                (None, Some(msg)) => {
                    msg.content.push_str(line);
                    msg.content.push('\n');
                }
                (None, None) if line.trim().is_empty() => {}
                (None, None) => {
                    return Err(MasaError::Render("template text before first role tag".into()));
                }
            }
        }
        if messages.is_empty() {
            return Err(MasaError::Render("template has no messages".into()));
        }
        for m in &mut messages {
            m.content = m.content.trim_matches('\n').to_string();
        }
        Ok(Self { messages })
    }

    pub fn meta_default() -> Self {
        Self::parse(META_TEMPLATE_V1).expect("bundled meta template parses")
    }

    pub fn solution_default() -> Self {
        Self::parse(SOLUTION_TEMPLATE_V1).expect("bundled solution template parses")
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        for m in &self.messages {
            for name in placeholder_names(&m.content) {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    /// Fills every placeholder; a placeholder without a value is an error.
    pub fn render_messages(&self, values: &[(&str, &str)]) -> Result<Vec<Message>> {
        self.messages
            .iter()
            .map(|m| {
                Ok(Message {
                    role: m.role,
                    content: substitute(&m.content, values)?,
                })
            })
            .collect()
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        Ok(join_messages(&self.render_messages(values)?))
    }
}

pub fn join_messages(messages: &[Message]) -> String {
    messages
        .iter()
        .map(|m| format!("{}\n{}", m.role.tag(), m.content))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn is_placeholder_char(c: char) -> bool {
    c.is_ascii_lowercase() || c == '_'
}

fn placeholder_at(s: &str) -> Option<&str> {
    let body = s.strip_prefix('{')?;
    let end = body.find('}')?;
    let name = &body[..end];
    (!name.is_empty() && name.chars().all(is_placeholder_char)).then_some(name)
}

fn placeholder_names(content: &str) -> Vec<String> {
    content
        .match_indices('{')
        .filter_map(|(i, _)| placeholder_at(&content[i..]).map(str::to_string))
        .collect()
}

fn substitute(content: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(content.len());
    let mut rest = content;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        match placeholder_at(tail) {
            Some(name) => {
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| MasaError::Render(format!("no value for placeholder {{{name}}}")))?;
                out.push_str(value);
                rest = &tail[name.len() + 2..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn problem_text(task: &Task) -> Result<&str> {
    if task.prompt.trim().is_empty() {
        return Err(MasaError::Render("problem text is empty".into()));
    }
    Ok(&task.prompt)
}

pub fn meta_prompt_messages(task: &Task, max_len: u32) -> Result<Vec<Message>> {
    if max_len < MIN_PREDICTED_LENGTH {
        return Err(MasaError::Render(format!(
            "max_response_length {max_len} is below {MIN_PREDICTED_LENGTH}"
        )));
    }
    let max = max_len.to_string();
    PromptTemplate::meta_default().render_messages(&[
        ("problem", problem_text(task)?),
        ("max_response_length", &max),
    ])
}

/// The meta-prediction prompt for `task`.
pub fn render_meta_prompt(task: &Task, max_len: u32) -> Result<String> {
    Ok(join_messages(&meta_prompt_messages(task, max_len)?))
}

fn hint_block(hints: &[String]) -> String {
    if hints.is_empty() {
        return String::new();
    }
    let mut block = format!("\n\n{HINT_HEADER}");
    for h in hints {
        block.push_str("\n- ");
        block.push_str(h);
    }
    block
}

pub fn solution_prompt_messages(task: &Task, hints: &[String]) -> Vec<Message> {
    let block = hint_block(hints);
    PromptTemplate::solution_default()
        .render_messages(&[("problem", &task.prompt), ("hints", &block)])
        .expect("solution template placeholders are all supplied")
}

/// The solution prompt, with a hint block appended when `hints` is non-empty.
pub fn render_solution_prompt(task: &Task, hints: &[String]) -> String {
    join_messages(&solution_prompt_messages(task, hints))
}

/// Recovers the hint list from a rendered solution prompt.
pub fn hints_in_prompt(prompt: &str) -> Vec<&str> {
    let Some(start) = prompt.rfind(HINT_HEADER) else {
        return Vec::new();
    };
    prompt[start + HINT_HEADER.len()..]
        .lines()
        .skip(1)
        .map_while(|l| l.strip_prefix("- "))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(p: &str) -> Task {
        Task {
            id: "t".into(),
            prompt: p.into(),
            ground_truth: "4".into(),
            sim_latent: None,
        }
    }

    #[test]
    fn meta_prompt_schema_line() {
        let text = render_meta_prompt(&task("2+2?"), 8192).unwrap();
        assert!(text.contains("solution_length (integer from 128 to 8192)"));
        assert!(text.contains("pass_rate (integer from 0 to 8)"));
        assert!(text.contains("do not directly include the notions already written in the problem statement"));
        assert!(text.ends_with("Problem: 2+2?"));
        assert!(text.starts_with("[System]:\nYou are a helpful assistant.\n\n[User]:\nThink step-by-step"));
    }

    #[test]
    fn meta_prompt_errors() {
        assert!(matches!(render_meta_prompt(&task(""), 8192), Err(MasaError::Render(_))));
        assert!(render_meta_prompt(&task("x"), 100).is_err());
    }

    #[test]
    fn rendering_is_pure() {
        let t = task("2+2?");
        assert_eq!(render_meta_prompt(&t, 8192).unwrap(), render_meta_prompt(&t, 8192).unwrap());
    }

    #[test]
    fn missing_placeholder_fails() {
        let tpl = PromptTemplate::meta_default();
        assert_eq!(tpl.placeholders(), vec!["max_response_length", "problem"]);
        assert!(tpl.render(&[("problem", "x")]).is_err());
    }

    #[test]
    fn empty_braces_are_literal() {
        let p = render_solution_prompt(&task("2+2?"), &[]);
        assert!(p.contains(r"\boxed{}"));
    }

    #[test]
    fn hints_elided_and_ordered() {
        let t = task("Find the side length.");
        let plain = render_solution_prompt(&t, &[]);
        assert!(!plain.contains(HINT_HEADER));
        let one = render_solution_prompt(&t, &["law of sines".to_string()]);
        assert_eq!(one.matches("law of sines").count(), 1);
        let two = render_solution_prompt(&t, &["b".to_string(), "a".to_string()]);
        assert!(two.find("- b").unwrap() < two.find("- a").unwrap());
        assert_eq!(hints_in_prompt(&two), vec!["b", "a"]);
        assert!(hints_in_prompt(&plain).is_empty());
    }
}
