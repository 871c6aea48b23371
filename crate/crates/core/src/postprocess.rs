//! Normalizes free-form predictor output into a nested list of moments.
//!
//! Accepted grammar, loosely: after removing tag-like markers such as
//! `</s>`, the text is cut into windows at every bracket character
//! (`[ ] ( ) { }`). Each window contributes its first two numbers as a
//! `(start, end)` pair, swapped when reversed; windows with fewer than two
//! numbers are dropped. Numbers are optionally signed integers or decimals;
//! scientific notation is skipped. If no pair survives, the result is the
//! fallback `[[-1, -1]]`.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

pub const FALLBACK: (f64, f64) = (-1.0, -1.0);

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"</?[A-Za-z_|][^<>]*>").unwrap());

static CANONICAL: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"-?(?:0|[1-9][0-9]*)(?:\.[0-9]+)?";
    let pair = format!(r"\[{num}, {num}\]");
    Regex::new(&format!(r"^\[{pair}(?:, {pair})*\]$")).unwrap()
});

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsedPrediction {
    pub moments: Vec<(f64, f64)>,
    pub was_fallback: bool,
}

impl ParsedPrediction {
    pub fn fallback() -> Self {
        Self {
            moments: vec![FALLBACK],
            was_fallback: true,
        }
    }

    fn from_pairs(moments: Vec<(f64, f64)>) -> Self {
        if moments.is_empty() {
            return Self::fallback();
        }
        let was_fallback = moments == [FALLBACK];
        Self {
            moments,
            was_fallback,
        }
    }
}

impl fmt::Display for ParsedPrediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (s, e)) in self.moments.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "[{}, {}]", format_number(*s), format_number(*e))?;
        }
        f.write_str("]")
    }
}

/// Shortest decimal that round-trips, without a trailing `.0`.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        "0".to_owned()
    } else {
        format!("{v}")
    }
}

/// Canonical text form, e.g. `[[1.5, 4.3], [6, 9]]`.
pub fn render(parsed: &ParsedPrediction) -> String {
    parsed.to_string()
}

pub fn is_canonical(text: &str) -> bool {
    CANONICAL.is_match(text)
}

/// Removes end-of-sequence and similar tag markers.
pub fn strip_markers(text: &str) -> String {
    MARKER.replace_all(text, " ").into_owned()
}

fn is_bracket(c: char) -> bool {
    matches!(c, '[' | ']' | '(' | ')' | '{' | '}')
}

/// Numbers in `text`, in order of appearance.
pub fn extract_numbers(text: &str) -> Vec<f64> {
    let bytes = text.as_bytes();
    let n = bytes.len();
    let digit_at = |i: usize| i < n && bytes[i].is_ascii_digit();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let start = i;
        let mut j = i;
        if matches!(bytes[j], b'+' | b'-') {
            let glued = j > 0 && (bytes[j - 1].is_ascii_alphanumeric() || bytes[j - 1] == b'.');
            let leads_number = digit_at(j + 1) || (j + 2 < n && bytes[j + 1] == b'.' && digit_at(j + 2));
            if glued || !leads_number {
                i += 1;
                continue;
            }
            j += 1;
        }
        if !(digit_at(j) || (bytes[j] == b'.' && digit_at(j + 1))) {
            i += 1;
            continue;
        }
        while digit_at(j) {
            j += 1;
        }
        if j < n && bytes[j] == b'.' && digit_at(j + 1) {
            j += 1;
            while digit_at(j) {
                j += 1;
            }
        }
        let mut end = j;
        let mut scientific = false;
        if j < n && matches!(bytes[j], b'e' | b'E') {
            let mut k = j + 1;
            if k < n && matches!(bytes[k], b'+' | b'-') {
                k += 1;
            }
            if digit_at(k) {
                while digit_at(k) {
                    k += 1;
                }
                scientific = true;
                end = k;
            }
        }
        if !scientific {
            if let Ok(v) = text[start..j].parse::<f64>() {
                if v.is_finite() {
                    out.push(if v == 0.0 { 0.0 } else { v });
                }
            }
        }
        i = end;
    }
    out
}

/// Extracts moment pairs from raw predictor text. Never fails.
pub fn post_process(raw: &str) -> ParsedPrediction {
    let cleaned = strip_markers(raw);
    if cleaned.trim().is_empty() {
        return ParsedPrediction::fallback();
    }
    let pairs = cleaned
        .split(is_bracket)
        .filter_map(|window| {
            let nums = extract_numbers(window);
            match nums[..] {
                [a, b, ..] if a > b => Some((b, a)),
                [a, b, ..] => Some((a, b)),
                _ => None,
            }
        })
        .collect();
    ParsedPrediction::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(text: &str) -> Vec<(f64, f64)> {
        post_process(text).moments
    }

    #[test]
    fn missing_closing_bracket() {
        assert_eq!(pairs("[[1.5, 4.3],[6.7, 9.2]"), vec![(1.5, 4.3), (6.7, 9.2)]);
    }

    #[test]
    fn missing_comma() {
        assert_eq!(pairs("[[1.5, 4.3][6.7, 9.2]]"), vec![(1.5, 4.3), (6.7, 9.2)]);
    }

    #[test]
    fn empty_and_wordy_outputs_fall_back() {
        for s in ["", "   ", "no moments found", "</s>", "[[]]", "[[3]]"] {
            let p = post_process(s);
            assert!(p.was_fallback, "{s:?}");
            assert_eq!(p.moments, vec![FALLBACK]);
        }
    }

    #[test]
    fn reversed_pair_is_swapped() {
        assert_eq!(pairs("[[9.2, 6.7]]"), vec![(6.7, 9.2)]);
    }

    #[test]
    fn end_marker_is_stripped() {
        assert_eq!(pairs("[[3, 7]]</s>"), vec![(3.0, 7.0)]);
        assert_eq!(pairs("<s>[[3, 7]]<|endoftext|>"), vec![(3.0, 7.0)]);
    }

    #[test]
    fn arity_rules() {
        assert_eq!(pairs("[[1, 2, 3], [4], [5, 6]]"), vec![(1.0, 2.0), (5.0, 6.0)]);
        assert_eq!(pairs("[[1, 2], [1, 2]]"), vec![(1.0, 2.0), (1.0, 2.0)]);
    }

    #[test]
    fn number_forms() {
        assert_eq!(extract_numbers("-1, +2.5 .5 3."), vec![-1.0, 2.5, 0.5, 3.0]);
        assert_eq!(extract_numbers("1e5 2 3.0E-2 4"), vec![2.0, 4.0]);
        assert_eq!(extract_numbers("2-5"), vec![2.0, 5.0]);
        assert_eq!(extract_numbers("e 1.5e"), vec![1.5]);
        assert_eq!(extract_numbers("- -.5"), vec![-0.5]);
        assert_eq!(extract_numbers(&"9".repeat(400)), Vec::<f64>::new());
    }

    #[test]
    fn rendering() {
        let p = ParsedPrediction::from_pairs(vec![(1.5, 4.3)]);
        assert_eq!(render(&p), "[[1.5, 4.3]]");
        assert_eq!(render(&ParsedPrediction::fallback()), "[[-1, -1]]");
        let p = ParsedPrediction::from_pairs(vec![(3.0, 7.0), (-0.0, 0.25)]);
        assert_eq!(render(&p), "[[3, 7], [0, 0.25]]");
        assert!(is_canonical(&render(&p)));
        assert!(!is_canonical("[[3, 7],[1, 2]]"));
        assert!(!is_canonical("[]"));
    }

    #[test]
    fn fallback_text_round_trips_as_fallback() {
        let p = post_process("[[-1, -1]]");
        assert!(p.was_fallback);
        assert_eq!(p, ParsedPrediction::fallback());
    }

    fn decimal() -> impl Strategy<Value = f64> {
        (0u32..100_000, 0u32..4).prop_map(|(m, scale)| m as f64 / 10f64.powi(scale as i32))
    }

    proptest! {
        #[test]
        fn canonical_input_parses_to_its_literal_pairs(
            raw in proptest::collection::vec((decimal(), decimal()), 1..6)
        ) {
            let ordered: Vec<(f64, f64)> = raw.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
            let text = render(&ParsedPrediction { moments: ordered.clone(), was_fallback: false });
            prop_assert!(is_canonical(&text));
            prop_assert_eq!(pairs(&text), ordered);
        }

        #[test]
        fn arbitrary_text_is_total_and_idempotent(s in ".{0,64}") {
            let p = post_process(&s);
            let text = render(&p);
            prop_assert!(is_canonical(&text));
            prop_assert!(p.moments.iter().all(|(a, b)| a <= b));
            prop_assert_eq!(post_process(&text), p);
        }
    }
}
