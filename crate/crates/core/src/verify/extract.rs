//! Final-answer extraction from model responses.

use serde::{Deserialize, Serialize};

use super::grammar::eval_expr;
use super::normalize::{brace_group, normalize_math};

/// Where an extracted answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Boxed,
    TrailingExpression,
}

/// A final answer pulled out of a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    /// Contiguous substring of the response.
    pub raw: String,
    pub source: AnswerSource,
    /// `normalize_math(raw)`.
    pub normalized: String,
}

/// Extracts the final answer from a response.
///
/// Tries, in document order preference (latest occurrence wins):
/// the last `$...$` / `\(...\)` / `\[...\]` segment that parses under the
/// closed numeric grammar, the last bare numeric/fraction token outside
/// any `\boxed{...}` span, and the last `\boxed{...}` body located by
/// balanced-brace scanning.
pub fn extract_answer(response: &str) -> Option<ExtractedAnswer> {
    let boxed = last_boxed(response);
    let boxed_span = boxed.as_ref().map(|(start, end, _)| (*start, *end));

    let mut best: Option<(usize, ExtractedAnswer)> = None;
    let mut consider = |start: usize, ans: ExtractedAnswer| {
        if best.as_ref().is_none_or(|(s, _)| start >= *s) {
            best = Some((start, ans));
        }
    };

    if let Some((start, _, raw)) = &boxed {
        consider(
            *start,
            ExtractedAnswer {
                raw: raw.clone(),
                source: AnswerSource::Boxed,
                normalized: normalize_math(raw),
            },
        );
    }

    if let Some((start, raw)) = last_math_segment(response) {
        let normalized = normalize_math(&raw);
        if eval_expr(&normalized).is_some() {
            consider(
                start,
                ExtractedAnswer { raw, source: AnswerSource::TrailingExpression, normalized },
            );
        }
    }

    if let Some((start, raw)) = last_numeric_token(response, boxed_span) {
        let normalized = normalize_math(&raw);
        if eval_expr(&normalized).is_some() {
            consider(
                start,
                ExtractedAnswer { raw, source: AnswerSource::TrailingExpression, normalized },
            );
        }
    }

    best.map(|(_, ans)| ans)
}

/// Last `\boxed{...}` with balanced braces: (start of `\boxed`, end past
/// the closing brace, inner body).
fn last_boxed(s: &str) -> Option<(usize, usize, String)> {
    let mut result = None;
    let mut from = 0;
    while let Some(rel) = s[from..].find("\\boxed") {
        let cmd = from + rel;
        let after = cmd + "\\boxed".len();
        let ws = s[after..].len() - s[after..].trim_start().len();
        // brace_group indices are absolute in `s`
        if let Some((body, end)) = brace_group(s, after + ws) {
            result = Some((cmd, end, body.to_string()));
            from = end;
        } else {
            from = after;
        }
    }
    result
}

/// Last inline/display math segment, returned as (start offset, inner text).
fn last_math_segment(s: &str) -> Option<(usize, String)> {
    let mut best: Option<(usize, String)> = None;
    for (open, close) in [("\\(", "\\)"), ("\\[", "\\]")] {
        let mut from = 0;
        while let Some(rel) = s[from..].find(open) {
            let start = from + rel;
            let inner_start = start + open.len();
            if let Some(len) = s[inner_start..].find(close) {
                let inner = s[inner_start..inner_start + len].trim().to_string();
                if !inner.is_empty() && best.as_ref().is_none_or(|(b, _)| start >= *b) {
                    best = Some((start, inner));
                }
                from = inner_start + len + close.len();
            } else {
                break;
            }
        }
    }
    // $...$ pairs
    let dollars: Vec<usize> = s.match_indices('$').map(|(i, _)| i).collect();
    for pair in dollars.chunks(2) {
        if let [a, b] = pair {
            let inner = s[a + 1..*b].trim().to_string();
            if !inner.is_empty() && best.as_ref().is_none_or(|(x, _)| *a >= *x) {
                best = Some((*a, inner));
            }
        }
    }
    best
}

/// Last standalone numeric/fraction token not inside the boxed span.
fn last_numeric_token(s: &str, boxed_span: Option<(usize, usize)>) -> Option<(usize, String)> {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        regex::Regex::new(r"[-+]?\d+(?:\.\d+)?(?:\s*/\s*\d+(?:\.\d+)?)?").unwrap()
    });
    let mut best = None;
    for m in re.find_iter(s) {
        if let Some((bs, be)) = boxed_span {
            if m.start() >= bs && m.start() < be {
                continue;
            }
        }
        best = Some((m.start(), m.as_str().to_string()));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxed_fraction() {
        let ans = extract_answer("... the answer is \\boxed{\\frac{1}{2}}").unwrap();
        assert_eq!(ans.raw, "\\frac{1}{2}");
        assert_eq!(ans.source, AnswerSource::Boxed);
        assert_eq!(ans.normalized, "1/2");
    }

    #[test]
    fn trailing_number() {
        let ans = extract_answer("... therefore x = 42.").unwrap();
        assert_eq!(ans.raw, "42");
        assert_eq!(ans.source, AnswerSource::TrailingExpression);
    }

    #[test]
    fn nothing_extractable() {
        assert!(extract_answer("no math here at all").is_none());
    }

    #[test]
    fn nested_boxed_braces() {
        // nesting up to depth 8 must round-trip exactly
        let mut body = String::from("x");
        for _ in 0..7 {
            body = format!("{{{body}}}");
        }
        let resp = format!("answer: \\boxed{{{body}}}");
        let ans = extract_answer(&resp).unwrap();
        assert_eq!(ans.raw, body);
        assert_eq!(ans.source, AnswerSource::Boxed);
    }

    #[test]
    fn last_boxed_wins() {
        let ans = extract_answer("\\boxed{1} then \\boxed{2}").unwrap();
        assert_eq!(ans.raw, "2");
    }

    #[test]
    fn math_segment_after_boxed_wins() {
        let ans = extract_answer("\\boxed{1} but really $3/4$").unwrap();
        assert_eq!(ans.raw, "3/4");
        assert_eq!(ans.source, AnswerSource::TrailingExpression);
    }

    #[test]
    fn numbers_inside_boxed_do_not_shadow_it() {
        let ans = extract_answer("thus \\boxed{\\frac{12}{34}}").unwrap();
        assert_eq!(ans.source, AnswerSource::Boxed);
        assert_eq!(ans.raw, "\\frac{12}{34}");
    }
}
