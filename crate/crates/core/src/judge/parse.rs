use serde::{Deserialize, Serialize};

use crate::metrics::EDGE_PUNCTUATION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Parsed,
    Ambiguous,
    Empty,
}

/// Extracts a True/False verdict from a judge completion: the first
/// whitespace-delimited token that equals `true` or `false` after
/// lowercasing and stripping edge punctuation. Blank output is `Empty`,
/// output with neither token is `Ambiguous`.
pub fn parse_verdict(raw: &str) -> (Option<bool>, ParseStatus) {
    if raw.trim().is_empty() {
        return (None, ParseStatus::Empty);
    }
    for token in raw.split_whitespace() {
        let t = token.trim_matches(EDGE_PUNCTUATION);
        if t.eq_ignore_ascii_case("true") {
            return (Some(true), ParseStatus::Parsed);
        }
        if t.eq_ignore_ascii_case("false") {
            return (Some(false), ParseStatus::Parsed);
        }
    }
    (None, ParseStatus::Ambiguous)
}
