use std::sync::OnceLock;

use regex::Regex;

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]").expect("valid token pattern"))
}

fn special_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^_[A-Z]+(_\d+)?$").expect("valid special-token pattern"))
}

/// Database placeholders such as `_NAME_3` or `_EMPTY`.
pub fn is_special_token(token: &str) -> bool {
    special_re().is_match(token)
}

/// Lowercases everything except special tokens.
pub fn normalize(token: &str) -> String {
    if is_special_token(token) {
        token.to_string()
    } else {
        token.to_lowercase()
    }
}

/// Splits on whitespace and punctuation; word characters stay together.
///
/// ```
/// use reflm::corpus::tokenize;
/// assert_eq!(tokenize("1 Large banana, sliced"), ["1", "large", "banana", ",", "sliced"]);
/// assert_eq!(tokenize("call _PHONE_2 now"), ["call", "_PHONE_2", "now"]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    token_re().find_iter(text).map(|m| normalize(m.as_str())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_split_off() {
        assert_eq!(tokenize("Preheat the oven."), ["preheat", "the", "oven", "."]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("01223 356555"), ["01223", "356555"]);
    }

    #[test]
    fn special_tokens_keep_case() {
        assert!(is_special_token("_ADDR_12"));
        assert!(is_special_token("_EMPTY"));
        assert!(!is_special_token("_addr_1"));
        assert!(!is_special_token("NAME"));
        assert_eq!(normalize("_NAME_0"), "_NAME_0");
        assert_eq!(normalize("Nirala"), "nirala");
    }
}
