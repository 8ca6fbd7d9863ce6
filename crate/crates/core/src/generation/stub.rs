//! Deterministic generators for tests and offline runs. Every stub is a pure
//! function of the request.

use std::collections::HashMap;

use super::{parse_prompt, GenError, GenerationRequest, Generator, PromptTask};
use crate::atomizer::split_sentences;
use crate::text::normalize_whitespace;

/// Fixed prompt → response table.
#[derive(Debug, Clone, Default)]
pub struct TableStub {
    table: HashMap<String, String>,
}

impl TableStub {
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        TableStub {
            table: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }
}

impl Generator for TableStub {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        self.table
            .get(&request.prompt)
            .cloned()
            .ok_or_else(|| GenError::Unavailable(crate::text::truncate_chars(&request.prompt, 60).to_string()))
    }
}

/// Answers atomization prompts with the chunk's sentences, one per line.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoSentencesStub;

impl Generator for EchoSentencesStub {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        match parse_prompt(&request.prompt) {
            Some((PromptTask::Atomize, slots)) => Ok(split_sentences(slots[0].1)
                .into_iter()
                .map(normalize_whitespace)
                .collect::<Vec<_>>()
                .join("\n")),
            _ => Err(GenError::Unavailable("not an atomization prompt".into())),
        }
    }
}

/// Answers question prompts with
/// `What does the passage say about <first 6 tokens of atom>?`, with the
/// variant number appended for draws past the first. Variants cycle with
/// `sample_index`.
#[derive(Debug, Clone, Copy)]
pub struct TemplateQuestionStub {
    pub variants: u32,
}

impl Default for TemplateQuestionStub {
    fn default() -> Self {
        TemplateQuestionStub { variants: 3 }
    }
}

impl TemplateQuestionStub {
    pub fn question(&self, atom: &str, sample_index: u32) -> String {
        let head: Vec<&str> = atom
            .split_whitespace()
            .take(6)
            .map(|t| t.trim_end_matches(['.', '?', '!', ',', ';', ':']))
            .collect();
        let variant = sample_index % self.variants.max(1) + 1;
        if variant == 1 {
            format!("What does the passage say about {}?", head.join(" "))
        } else {
            format!(
                "What does the passage say about {} (variant {variant})?",
                head.join(" ")
            )
        }
    }
}

impl Generator for TemplateQuestionStub {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        match parse_prompt(&request.prompt) {
            Some((PromptTask::Question, slots)) => Ok(self.question(slots[1].1, request.sample_index)),
            _ => Err(GenError::Unavailable("not a question prompt".into())),
        }
    }
}

/// Answers rewrite prompts with `Answer: <query>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnswerPrefixStub;

impl Generator for AnswerPrefixStub {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        match parse_prompt(&request.prompt) {
            Some((PromptTask::Rewrite, slots)) => Ok(format!("Answer: {}", slots[0].1)),
            _ => Err(GenError::Unavailable("not a rewrite prompt".into())),
        }
    }
}

/// Routes each prompt kind to the matching stub; the offline pipeline generator.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineStub {
    pub questions: TemplateQuestionStub,
}

impl Generator for OfflineStub {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenError> {
        match parse_prompt(&request.prompt) {
            Some((PromptTask::Atomize, _)) => EchoSentencesStub.generate(request),
            Some((PromptTask::Question, _)) => self.questions.generate(request),
            Some((PromptTask::Rewrite, _)) => AnswerPrefixStub.generate(request),
            None => Err(GenError::Unavailable("unrecognized prompt".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::render_prompt;

    #[test]
    fn table_lookup() {
        let stub = TableStub::new([("p", "r")]);
        let req = GenerationRequest::new("p").unwrap();
        assert_eq!(stub.generate(&req).unwrap(), "r");
        assert!(stub.generate(&GenerationRequest::new("q").unwrap()).is_err());
    }

    #[test]
    fn template_questions_cycle() {
        let stub = TemplateQuestionStub { variants: 3 };
        let prompt = render_prompt(
            PromptTask::Question,
            &[("chunk", "ignored"), ("atom", "The quick brown fox jumps over the lazy dog.")],
        )
        .unwrap();
        let req = GenerationRequest::new(prompt).unwrap();
        let q: Vec<String> = (0..4)
            .map(|i| stub.generate(&req.clone().with_sample_index(i)).unwrap())
            .collect();
        assert_eq!(q[0], "What does the passage say about The quick brown fox jumps over?");
        assert_eq!(
            q[1],
            "What does the passage say about The quick brown fox jumps over (variant 2)?"
        );
        assert_eq!(q[3], q[0]);
        // pure: same request, same answer
        assert_eq!(stub.generate(&req).unwrap(), stub.generate(&req).unwrap());
    }

    #[test]
    fn answer_prefix() {
        let prompt = render_prompt(PromptTask::Rewrite, &[("query", "Q?")]).unwrap();
        let out = AnswerPrefixStub
            .generate(&GenerationRequest::new(prompt).unwrap())
            .unwrap();
        assert_eq!(out, "Answer: Q?");
    }
}
