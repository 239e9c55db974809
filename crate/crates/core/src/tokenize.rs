//! Whitespace tokenizer with punctuation splitting.
//!
//! Tokens are maximal runs of non-whitespace; punctuation characters at the
//! start or end of a run are split off as single-character tokens. Apostrophes
//! and hyphens inside a word stay attached (`don't`, `follow-up`).

/// Splits `text` into tokens. Total and deterministic; empty input yields an empty list.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        split_chunk(chunk, &mut tokens);
    }
    tokens
}

fn split_chunk<'a>(chunk: &'a str, out: &mut Vec<&'a str>) {
    let core_start = chunk
        .char_indices()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, _)| i);
    let Some(core_start) = core_start else {
        // punctuation only
        out.extend(chunk.char_indices().map(|(i, c)| &chunk[i..i + c.len_utf8()]));
        return;
    };
    let core_end = chunk
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(chunk.len());

    let head = &chunk[..core_start];
    out.extend(head.char_indices().map(|(i, c)| &head[i..i + c.len_utf8()]));
    out.push(&chunk[core_start..core_end]);
    let tail = &chunk[core_end..];
    out.extend(tail.char_indices().map(|(i, c)| &tail[i..i + c.len_utf8()]));
}

/// True when the token carries speech content (at least one letter or digit).
pub fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

/// Word tokens only, in order.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    tokenize(text).into_iter().filter(|t| is_word(t))
}

/// Number of word tokens; punctuation-only tokens are not counted.
pub fn word_count(text: &str) -> usize {
    tokenize(text).iter().filter(|t| is_word(t)).count()
}
