//! Pulls a SQL statement out of free-form model output.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("model output contains no SQL")]
    Empty,
}

/// Extracts SQL from model text, by precedence:
///
/// 1. the first fenced code block tagged `sql` or untagged,
/// 2. the text from the first `SELECT`/`WITH` keyword to the first
///    terminating semicolon (outside string literals) or end of text,
/// 3. the whole trimmed text.
///
/// Trailing semicolons are stripped. The rules are applied until the text
/// stops changing, which makes the function idempotent.
pub fn extract_sql(model_text: &str) -> Result<String, ExtractError> {
    let mut current = model_text.trim().to_string();
    loop {
        let next = extract_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        Err(ExtractError::Empty)
    } else {
        Ok(current)
    }
}

fn extract_once(text: &str) -> String {
    let candidate = fenced_block(text)
        .or_else(|| keyword_span(text))
        .unwrap_or(text);
    strip_terminator(candidate).to_string()
}

fn strip_terminator(s: &str) -> &str {
    s.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace())
}

/// Content of the first ```` ``` ```` block whose info string is empty or `sql`.
fn fenced_block(text: &str) -> Option<&str> {
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let close = after.find("```")?;
        let block = &after[..close];
        let (info, body) = match block.find('\n') {
            Some(nl) => (&block[..nl], &block[nl + 1..]),
            None => ("", block),
        };
        let info = info.trim();
        if info.is_empty() || info.eq_ignore_ascii_case("sql") || info.eq_ignore_ascii_case("sqlite") {
            return Some(body);
        }
        rest = &after[close + 3..];
    }
    None
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn find_keyword(text: &str, case_sensitive: bool) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut best: Option<usize> = None;
    for kw in ["SELECT", "WITH"] {
        let n = kw.len();
        let mut i = 0;
        while i + n <= bytes.len() {
            let window = &bytes[i..i + n];
            let hit = if case_sensitive {
                window == kw.as_bytes()
            } else {
                window.eq_ignore_ascii_case(kw.as_bytes())
            };
            let left_ok = i == 0 || !is_word_byte(bytes[i - 1]);
            let right_ok = i + n == bytes.len() || !is_word_byte(bytes[i + n]);
            if hit && left_ok && right_ok {
                best = Some(best.map_or(i, |b| b.min(i)));
                break;
            }
            i += 1;
        }
    }
    best
}

/// From the first SQL keyword to the first unquoted semicolon. Upper-case
/// keywords win over lower-case ones so prose such as "with" is skipped
/// when a real statement follows.
fn keyword_span(text: &str) -> Option<&str> {
    let start = find_keyword(text, true).or_else(|| find_keyword(text, false))?;
    let tail = &text[start..];
    let mut quote: Option<char> = None;
    for (i, c) in tail.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '\'' || c == '"' || c == '`' => quote = Some(c),
            None if c == ';' => return Some(&tail[..i]),
            None => {}
        }
    }
    Some(tail)
}
