//! Parsers for structured content inside free-text LLM replies.

use std::sync::OnceLock;

use super::{PromptError, Verdict, VerdictValue};

/// Extracts the items of a numbered list (`<int>. <sentence>`), in order.
///
/// Numbering, surrounding whitespace, and wrapping quotes are stripped;
/// empty items are dropped. Non-numbered lines — greeting chatter before the
/// first item, commentary after the last — are ignored.
pub fn parse_numbered_list(text: &str) -> Result<Vec<String>, PromptError> {
    static ITEM: OnceLock<regex::Regex> = OnceLock::new();
    let item = ITEM.get_or_init(|| regex::Regex::new(r"^\s*\d+[.)]\s*(.*)$").unwrap());
    let mut items = Vec::new();
    for line in text.lines() {
        if let Some(captures) = item.captures(line) {
            let cleaned = strip_wrapping_quotes(captures[1].trim());
            if !cleaned.is_empty() {
                items.push(cleaned.to_string());
            }
        }
    }
    if items.is_empty() {
        return Err(PromptError::NoItemsFound);
    }
    Ok(items)
}

fn strip_wrapping_quotes(s: &str) -> &str {
    let mut out = s;
    loop {
        let trimmed = out.trim();
        let stripped = trimmed
            .strip_prefix('"')
            .and_then(|rest| rest.strip_suffix('"'))
            .or_else(|| {
                trimmed
                    .strip_prefix('\'')
                    .and_then(|rest| rest.strip_suffix('\''))
            });
        match stripped {
            Some(inner) if !inner.is_empty() => out = inner,
            _ => return trimmed,
        }
    }
}

/// Maps a reply to one of the three verdicts. Total by design: scanning the
/// reply's word tokens in order, `not sure` is checked before `no` (substring
/// hazard), and a reply matching none of the tokens falls back to `NotSure`
/// with the `unparsed` flag set.
pub fn parse_verdict(text: &str) -> Verdict {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect();
    let mut value = None;
    for (i, token) in tokens.iter().enumerate() {
        match token.as_str() {
            "not" if tokens.get(i + 1).is_some_and(|next| next == "sure") => {
                value = Some(VerdictValue::NotSure);
            }
            "yes" => value = Some(VerdictValue::Yes),
            "no" => value = Some(VerdictValue::No),
            _ => continue,
        }
        break;
    }
    match value {
        Some(value) => Verdict {
            value,
            raw_text: text.to_string(),
            unparsed: false,
        },
        None => {
            log::warn!("unparseable verdict reply {text:?}; recording Not Sure");
            Verdict {
                value: VerdictValue::NotSure,
                raw_text: text.to_string(),
                unparsed: true,
            }
        }
    }
}
