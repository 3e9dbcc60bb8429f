use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::ActionKind;

/// Default cap on reformulated query length, in whitespace-separated words.
pub const DEFAULT_WORD_CAP: usize = 30;

/// Words the reformulation prompt forbids.
pub const DEFAULT_NEGATIONS: [&str; 10] = [
    "not", "no", "without", "never", "none", "nothing", "nobody", "neither", "nor", "cannot",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grammar {
    Action,
    Verdict,
    Reformulation,
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grammar::Action => "action",
            Grammar::Verdict => "verdict",
            Grammar::Reformulation => "reformulation",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{grammar} output did not parse: {reason}")]
pub struct ParseFailure {
    pub grammar: Grammar,
    pub reason: String,
}

fn failure(grammar: Grammar, reason: impl Into<String>) -> ParseFailure {
    ParseFailure {
        grammar,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub kind: ActionKind,
    pub reasoning: String,
    pub raw: String,
}

impl ParsedAction {
    /// A conforming answer for this value.
    pub fn to_wire(kind: ActionKind, reasoning: &str) -> String {
        serde_json::json!({ "action": kind.as_str(), "reasoning": reasoning }).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub matched: bool,
    /// Present only in JSON mode.
    pub reasoning: Option<String>,
    pub raw: String,
}

impl ParsedVerdict {
    pub fn to_wire(matched: bool, reasoning: Option<&str>) -> String {
        let word = if matched { "matched" } else { "unmatched" };
        match reasoning {
            None => word.to_string(),
            Some(r) => serde_json::json!({ "Evaluation": word, "reasoning": r }).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedReformulation {
    pub text: String,
    pub reasoning: Option<String>,
    pub raw: String,
}

impl ParsedReformulation {
    pub fn to_wire(text: &str, reasoning: Option<&str>) -> String {
        match reasoning {
            Some(r) => format!("<think>\n{r}\n</think>\n\n<reformulate>\n{text}\n</reformulate>"),
            None => format!("<reformulate>\n{text}\n</reformulate>"),
        }
    }
}

/// The first balanced `{...}` span in `raw` that parses as a JSON object.
pub fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(offset) = raw[start..].find('{') {
        let open = start + offset;
        if let Some(close) = balanced_end(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&raw[open..=close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

/// Index of the brace closing the one at `open`, skipping string literals.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn string_field(map: &Map<String, Value>, key: &str) -> Option<String> {
    map.get(key).and_then(Value::as_str).map(str::to_string)
}

pub fn parse_action(raw: &str) -> Result<ParsedAction, ParseFailure> {
    let map = first_json_object(raw).ok_or_else(|| failure(Grammar::Action, "no JSON object"))?;
    let action = string_field(&map, "action")
        .ok_or_else(|| failure(Grammar::Action, "missing string field `action`"))?;
    let kind = match action.trim().to_ascii_lowercase().as_str() {
        "exploit" => ActionKind::Exploit,
        "explore" => ActionKind::Explore,
        other => return Err(failure(Grammar::Action, format!("invalid action `{other}`"))),
    };
    Ok(ParsedAction {
        kind,
        reasoning: string_field(&map, "reasoning").unwrap_or_default(),
        raw: raw.to_string(),
    })
}

fn verdict_word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(matched|unmatched)\b").unwrap())
}

pub fn parse_verdict(raw: &str, with_reasoning: bool) -> Result<ParsedVerdict, ParseFailure> {
    if with_reasoning {
        let map =
            first_json_object(raw).ok_or_else(|| failure(Grammar::Verdict, "no JSON object"))?;
        let eval = string_field(&map, "Evaluation")
            .ok_or_else(|| failure(Grammar::Verdict, "missing string field `Evaluation`"))?;
        let matched = match eval.trim().to_ascii_lowercase().as_str() {
            "matched" => true,
            "unmatched" => false,
            other => {
                return Err(failure(
                    Grammar::Verdict,
                    format!("invalid evaluation `{other}`"),
                ))
            }
        };
        return Ok(ParsedVerdict {
            matched,
            reasoning: Some(string_field(&map, "reasoning").unwrap_or_default()),
            raw: raw.to_string(),
        });
    }
    let word = verdict_word_re()
        .captures(raw)
        .ok_or_else(|| failure(Grammar::Verdict, "neither `matched` nor `unmatched` present"))?;
    Ok(ParsedVerdict {
        matched: word[1].eq_ignore_ascii_case("matched"),
        reasoning: None,
        raw: raw.to_string(),
    })
}

/// Content of the first `<tag>...</tag>` pair, tags matched case-insensitively.
fn tagged<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    // ASCII lowercasing keeps byte offsets valid in `raw`.
    let lower = raw.to_ascii_lowercase();
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = lower.find(&open)? + open.len();
    let end = start + lower[start..].find(&close)?;
    Some(&raw[start..end])
}

pub fn parse_reformulation(raw: &str) -> Result<ParsedReformulation, ParseFailure> {
    parse_reformulation_with_cap(raw, DEFAULT_WORD_CAP)
}

pub fn parse_reformulation_with_cap(
    raw: &str,
    word_cap: usize,
) -> Result<ParsedReformulation, ParseFailure> {
    let text = tagged(raw, "reformulate")
        .ok_or_else(|| failure(Grammar::Reformulation, "no <reformulate> block"))?
        .trim();
    if text.is_empty() {
        return Err(failure(Grammar::Reformulation, "empty <reformulate> block"));
    }
    let words = text.split_whitespace().count();
    if words > word_cap {
        return Err(failure(
            Grammar::Reformulation,
            format!("{words} words exceeds the cap of {word_cap}"),
        ));
    }
    let reasoning = tagged(raw, "think")
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(str::to_string);
    Ok(ParsedReformulation {
        text: text.to_string(),
        reasoning,
        raw: raw.to_string(),
    })
}

/// The first word of `text` found in `wordlist`, compared case-insensitively.
/// Contractions ending in `n't` always count.
pub fn find_negation<S: AsRef<str>>(text: &str, wordlist: &[S]) -> Option<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .filter(|w| !w.is_empty())
        .find(|w| {
            let lower = w.to_lowercase().replace('\u{2019}', "'");
            lower.ends_with("n't") || wordlist.iter().any(|n| n.as_ref() == lower)
        })
        .map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn action_examples() {
        let a = parse_action(r#"{"action": "explore", "reasoning": "precision too low"}"#).unwrap();
        assert_eq!((a.kind, a.reasoning.as_str()), (ActionKind::Explore, "precision too low"));
        let a = parse_action(r#"Sure! {"action":"exploit","reasoning":""}"#).unwrap();
        assert_eq!((a.kind, a.reasoning.as_str()), (ActionKind::Exploit, ""));
        assert!(parse_action(r#"{"action": "both"}"#).is_err());
        assert!(parse_action("exploit").is_err());
    }

    #[test]
    fn action_skips_non_json_braces() {
        let raw = "Consider {this}. Answer:\n```json\n{\"action\": \"exploit\", \"reasoning\": \"a {b} c\"}\n```";
        let a = parse_action(raw).unwrap();
        assert_eq!(a.kind, ActionKind::Exploit);
        assert_eq!(a.reasoning, "a {b} c");
    }

    #[test]
    fn verdict_examples() {
        assert!(parse_verdict("matched", false).unwrap().matched);
        assert!(!parse_verdict("Unmatched.", false).unwrap().matched);
        let v = parse_verdict(
            r#"{"Evaluation": "unmatched", "reasoning": "no door visible"}"#,
            true,
        )
        .unwrap();
        assert!(!v.matched);
        assert_eq!(v.reasoning.as_deref(), Some("no door visible"));
        assert!(parse_verdict("it is unmatchedly unclear", false).is_err());
        assert!(parse_verdict("matched", true).is_err());
    }

    #[test]
    fn reformulation_examples() {
        let raw = "<think>add UI terms</think><reformulate>A man talking in a video call inset window at the bottom corner of the screen</reformulate>";
        let r = parse_reformulation(raw).unwrap();
        assert_eq!(
            r.text,
            "A man talking in a video call inset window at the bottom corner of the screen"
        );
        assert_eq!(r.reasoning.as_deref(), Some("add UI terms"));
        let r = parse_reformulation("<reformulate>men walking</reformulate>").unwrap();
        assert_eq!((r.text.as_str(), r.reasoning), ("men walking", None));
        assert!(parse_reformulation("no tags here").is_err());
        assert!(parse_reformulation("<reformulate>  </reformulate>").is_err());
    }

    #[test]
    fn word_cap_rejects_without_truncating() {
        let long = vec!["word"; 31].join(" ");
        assert!(parse_reformulation(&format!("<reformulate>{long}</reformulate>")).is_err());
        let ok = vec!["word"; 30].join(" ");
        assert!(parse_reformulation(&format!("<reformulate>{ok}</reformulate>")).is_ok());
    }

    #[test]
    fn negation_words_are_found() {
        assert_eq!(
            find_negation("a man without a hat", &DEFAULT_NEGATIONS).as_deref(),
            Some("without")
        );
        assert_eq!(
            find_negation("a dog that isn't barking", &DEFAULT_NEGATIONS).as_deref(),
            Some("isn't")
        );
        assert_eq!(find_negation("notebook on a table", &DEFAULT_NEGATIONS), None);
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ,.'\"{}:!?-]{0,60}"
    }

    fn query_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-zA-Z0-9,.'-]{1,12}", 1..=30).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn action_round_trips(explore in any::<bool>(), reasoning in text_strategy()) {
            let kind = if explore { ActionKind::Explore } else { ActionKind::Exploit };
            let parsed = parse_action(&ParsedAction::to_wire(kind, &reasoning)).unwrap();
            prop_assert_eq!(parsed.kind, kind);
            prop_assert_eq!(parsed.reasoning, reasoning);
        }

        #[test]
        fn verdict_round_trips(matched in any::<bool>(), reasoning in proptest::option::of(text_strategy())) {
            let wire = ParsedVerdict::to_wire(matched, reasoning.as_deref());
            let parsed = parse_verdict(&wire, reasoning.is_some()).unwrap();
            prop_assert_eq!(parsed.matched, matched);
            prop_assert_eq!(parsed.reasoning, reasoning);
        }

        #[test]
        fn reformulation_round_trips(text in query_strategy(), reasoning in proptest::option::of("[a-z][a-z ,.]{0,40}[a-z]")) {
            let wire = ParsedReformulation::to_wire(&text, reasoning.as_deref());
            let parsed = parse_reformulation(&wire).unwrap();
            prop_assert_eq!(parsed.text, text);
            prop_assert_eq!(parsed.reasoning, reasoning);
        }

        #[test]
        fn parsers_never_panic(raw in any::<String>()) {
            let _ = parse_action(&raw);
            let _ = parse_verdict(&raw, false);
            let _ = parse_verdict(&raw, true);
            let _ = parse_reformulation(&raw);
        }
    }
}
