//! Tokenization with retained byte offsets and distant-supervision matching.

use serde::{Deserialize, Serialize};

use crate::objectives::SpanTarget;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// Lowercased surface form.
    pub text: String,
    /// Byte offset of the first character in the raw string.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
}

/// Raw text plus its tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Passage {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { text, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Raw substring covered by `span`, whitespace-trimmed.
    pub fn span_text(&self, span: SpanTarget) -> &str {
        let a = self.tokens[span.start].start;
        let b = self.tokens[span.end].end;
        self.text[a..b].trim()
    }

    /// Character length of the covered substring.
    pub fn span_char_len(&self, span: SpanTarget) -> usize {
        self.span_text(span).chars().count()
    }

    /// Token span exactly covering the characters `[char_start, char_start + char_len)`.
    pub fn span_from_chars(&self, char_start: usize, char_len: usize) -> Option<SpanTarget> {
        let byte_at = |c: usize| -> Option<usize> {
            if c == self.text.chars().count() {
                return Some(self.text.len());
            }
            self.text.char_indices().nth(c).map(|(b, _)| b)
        };
        let a = byte_at(char_start)?;
        let b = byte_at(char_start + char_len)?;
        let start = self.tokens.iter().position(|t| t.start == a)?;
        let end = self.tokens.iter().position(|t| t.end == b)?;
        SpanTarget::new(start, end).ok()
    }

    /// Lowercased token strings.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercased whitespace-and-punctuation split. Every punctuation character
/// is its own token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |tokens: &mut Vec<Token>, from: usize, to: usize| {
        tokens.push(Token {
            text: text[from..to].to_lowercase(),
            start: from,
            end: to,
        });
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || is_punct(c) {
            if let Some(s) = word_start.take() {
                flush(&mut tokens, s, i);
            }
            if is_punct(c) {
                flush(&mut tokens, i, i + c.len_utf8());
            }
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(s) = word_start {
        flush(&mut tokens, s, text.len());
    }
    tokens
}

/// Every token span whose covered, trimmed substring equals `answer`
/// case-insensitively, in (start, end) order.
pub fn annotate_gt(passage: &Passage, answer: &str) -> Vec<SpanTarget> {
    let wanted = answer.trim().to_lowercase();
    if wanted.is_empty() {
        return Vec::new();
    }
    let wanted_chars = wanted.chars().count();
    let mut spans = Vec::new();
    for i in 0..passage.len() {
        for j in i..passage.len() {
            let covered = passage.span_text(SpanTarget { start: i, end: j });
            if covered.chars().count() > wanted_chars {
                break;
            }
            if covered.to_lowercase() == wanted {
                spans.push(SpanTarget { start: i, end: j });
            }
        }
    }
    spans
}

/// Case-insensitive substring test used for the retrieval overlap rule.
pub fn contains_answer(text: &str, answer: &str) -> bool {
    let wanted = answer.trim().to_lowercase();
    !wanted.is_empty() && text.to_lowercase().contains(&wanted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation_and_keeps_offsets() {
        let text = "The \"Fat Man\", dropped.";
        let toks = tokenize(text);
        let words: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(
            words,
            ["the", "\"", "fat", "man", "\"", ",", "dropped", "."]
        );
        for t in &toks {
            assert_eq!(text[t.start..t.end].to_lowercase(), t.text);
        }
        assert!(toks.windows(2).all(|w| w[0].end <= w[1].start));
    }

    #[test]
    fn tokenize_empty_and_unicode() {
        assert!(tokenize("   ").is_empty());
        let toks = tokenize("Ünïcode wörds");
        assert_eq!(toks[0].text, "ünïcode");
        assert_eq!(toks[1].text, "wörds");
    }

    #[test]
    fn annotate_repeated_answer() {
        let p = Passage::new("a b a b");
        assert_eq!(
            annotate_gt(&p, "a b"),
            vec![
                SpanTarget { start: 0, end: 1 },
                SpanTarget { start: 2, end: 3 }
            ]
        );
        assert!(annotate_gt(&p, "c").is_empty());
        assert!(annotate_gt(&p, "  ").is_empty());
    }

    #[test]
    fn annotate_is_case_insensitive() {
        let p = Passage::new("Little Boy fell, then little boy again.");
        assert_eq!(annotate_gt(&p, "LITTLE BOY").len(), 2);
    }

    #[test]
    fn annotate_finds_planted_occurrences() {
        let filler = ["alpha", "beta", "gamma", "delta", "eps"];
        let mut words: Vec<String> = (0..50).map(|i| filler[i % 5].to_string()).collect();
        let planted = [4usize, 21, 40];
        for &p in &planted {
            words[p] = "red".into();
            words[p + 1] = "river".into();
        }
        let passage = Passage::new(words.join(" "));
        let found = annotate_gt(&passage, "red river");
        let expected: Vec<SpanTarget> = planted
            .iter()
            .map(|&p| SpanTarget {
                start: p,
                end: p + 1,
            })
            .collect();
        assert_eq!(found, expected);
        for span in found {
            assert_eq!(passage.span_text(span).to_lowercase(), "red river");
        }
    }

    #[test]
    fn span_from_chars_recovers_tokens() {
        let p = Passage::new("He said \"fat man\" twice.");
        let span = p.span_from_chars(9, 7).unwrap();
        assert_eq!(p.span_text(span), "fat man");
        assert!(p.span_from_chars(10, 3).is_none());
    }

    #[test]
    fn overlap_rule() {
        assert!(contains_answer("It was Little Boy.", "little boy"));
        assert!(!contains_answer("It was Fat Man.", "little boy"));
    }
}
