/// Estimates the token count of `text` as one token per four characters,
/// rounded up. Deterministic and independent of any model's vocabulary.
pub fn count_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Pluggable token estimator for budget checks.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// The default four-characters-per-token rule.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharsPerToken;

impl TokenCounter for CharsPerToken {
    fn count(&self, text: &str) -> usize {
        count_tokens(text)
    }
}

/// Cuts `text` to at most `max_tokens` tokens under the default rule,
/// on a character boundary.
pub fn truncate_to_tokens(text: &mut String, max_tokens: usize) {
    let max_chars = max_tokens.saturating_mul(4);
    if let Some((idx, _)) = text.char_indices().nth(max_chars) {
        text.truncate(idx);
    }
}
