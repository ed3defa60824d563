//! Post text cleaning and whitespace tokenization.
//!
//! Cleaning is a fixed sequence of rewrites:
//!
//! 1. remove URLs (`scheme://...` and bare `t.co/...`)
//! 2. remove `@mention` tokens
//! 3. remove `#hashtag` tokens (the whole tag, not only the `#`)
//! 4. remove numeric characters
//! 5. replace every remaining non-alphanumeric, non-whitespace character with a space
//! 6. lowercase
//! 7. collapse whitespace runs to one space and trim
//!
//! The output therefore consists only of lowercase alphabetic characters and
//! single spaces, which makes [`clean`] idempotent.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)[a-z][a-z0-9+.\-]*://\S*|\bt\.co/\S*").expect("valid url pattern")
});
static MENTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"@\w+").expect("valid mention pattern"));
static HASHTAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"#\w+").expect("valid hashtag pattern"));

/// Bag of cleaned word tokens for one post, in original order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBag {
    pub source_seq: u64,
    pub tokens: Vec<String>,
}

impl TokenBag {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

/// Clean raw post text. Total and deterministic.
pub fn clean(text: &str) -> String {
    let text = URL.replace_all(text, " ");
    let text = MENTION.replace_all(&text, " ");
    let text = HASHTAG.replace_all(&text, " ");

    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_numeric() {
            continue;
        }
        if c.is_whitespace() || !c.is_alphanumeric() {
            out.push(' ');
            continue;
        }
        // Lowercasing can expand into characters (combining marks) that are
        // not alphabetic; those are treated like punctuation.
        for lc in c.to_lowercase() {
            if lc.is_alphabetic() && !lc.is_numeric() {
                out.push(lc);
            } else {
                out.push(' ');
            }
        }
    }

    collapse_whitespace(&out)
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Split cleaned text on whitespace into a [`TokenBag`].
pub fn tokenize(cleaned: &str, source_seq: u64) -> TokenBag {
    TokenBag {
        source_seq,
        tokens: cleaned.split_whitespace().map(str::to_owned).collect(),
    }
}

/// `tokenize(clean(text))`.
pub fn prepare(text: &str, source_seq: u64) -> TokenBag {
    tokenize(&clean(text), source_seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clean_examples() {
        assert_eq!(clean("Check https://t.co/x #Brexit @PM now!!"), "check now");
        assert_eq!(clean(""), "");
        assert_eq!(clean("Good news 2018"), "good news");
    }

    #[test]
    fn clean_handles_bare_tco_and_other_schemes() {
        assert_eq!(
            clean("see t.co/AbC12 and HTTP://example.com/a?b=1 ok"),
            "see and ok"
        );
        assert_eq!(clean("ftp://x.y/z done"), "done");
    }

    #[test]
    fn punctuation_splits_words() {
        assert_eq!(clean("good.bad"), "good bad");
        assert_eq!(clean("snake_case"), "snake case");
        assert_eq!(clean("don't"), "don t");
    }

    #[test]
    fn mentions_and_hashtags_removed_whole() {
        assert_eq!(clean("@Theresa_May says #Brexit2019 is #GREAT"), "says is");
        assert_eq!(clean("a#b c@d"), "a c");
    }

    #[test]
    fn unicode_lowercasing() {
        assert_eq!(clean("ÉLAN Straße"), "élan straße");
        assert_eq!(clean("İstanbul"), clean(&clean("İstanbul")));
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("check now", 0).tokens, vec!["check", "now"]);
        assert!(tokenize("", 0).is_empty());
        assert_eq!(
            tokenize("good  good bad", 3).tokens,
            vec!["good", "good", "bad"]
        );
        assert_eq!(tokenize("x", 7).source_seq, 7);
    }

    fn tweetish() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![
                "[a-zA-Z]{1,8}",
                "#[a-zA-Z0-9_]{1,8}",
                "@[a-zA-Z0-9_]{1,8}",
                "https?://[a-z./]{1,12}",
                "t\\.co/[A-Za-z0-9]{1,6}",
                "[0-9]{1,4}",
                "[!?.,;:'\"()\\-]{1,3}",
                "\\PC{1,4}",
            ],
            0..12,
        )
        .prop_map(|parts| parts.join(" "))
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(s in any::<String>()) {
            let once = clean(&s);
            prop_assert_eq!(clean(&once), once);
        }

        #[test]
        fn clean_is_idempotent_on_tweet_like_text(s in tweetish()) {
            let once = clean(&s);
            prop_assert_eq!(clean(&once), once);
        }

        #[test]
        fn tokens_have_no_removed_categories(s in tweetish()) {
            for tok in prepare(&s, 0).iter() {
                prop_assert!(!tok.is_empty());
                prop_assert!(tok.chars().all(|c| c.is_alphabetic() && !c.is_numeric()));
                prop_assert!(!tok.contains("://"));
                prop_assert_eq!(tok.to_lowercase(), tok);
            }
        }
    }
}
