//! Assets shipped with the crate: sample corpus, default question bank,
//! and the mock annotator's trait lexicon.
//!
//! The lexicon is a single JSON source shared by the mock annotator and the
//! default bank generator, so bank options and mock-generated responses stay
//! phrase-aligned.

use crate::mbti::Attitude;
use std::collections::HashMap;
use std::sync::OnceLock;

/// 100-entry instruction corpus in `{instruction, input, output}` JSONL.
pub const SAMPLE_CORPUS: &str = include_str!("../assets/sample_corpus.jsonl");

/// The default 32-item questionnaire (8 questions per dimension).
pub const DEFAULT_BANK: &str = include_str!("../assets/bank_default.json");

/// Per-attitude trait phrases used by the mock annotator.
pub const MOCK_LEXICON_JSON: &str = include_str!("../assets/mock_lexicon.json");

static LEXICON: OnceLock<HashMap<Attitude, Vec<String>>> = OnceLock::new();

/// Trait phrases for each attitude. Phrase sets of opposite attitudes are
/// disjoint.
pub fn lexicon() -> &'static HashMap<Attitude, Vec<String>> {
    LEXICON.get_or_init(|| {
        let raw: HashMap<String, Vec<String>> =
            serde_json::from_str(MOCK_LEXICON_JSON).expect("lexicon asset is valid JSON");
        raw.into_iter()
            .map(|(k, v)| {
                let att = Attitude::from_letter(k.chars().next().expect("letter key"))
                    .expect("lexicon keys are attitude letters");
                (att, v)
            })
            .collect()
    })
}

/// Phrases for one attitude.
pub fn phrases(attitude: Attitude) -> &'static [String] {
    &lexicon()[&attitude]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_covers_all_attitudes() {
        let lex = lexicon();
        assert_eq!(lex.len(), 8);
        for a in Attitude::ALL {
            assert!(lex[&a].len() >= 4, "{a} needs at least 4 phrases");
        }
    }

    #[test]
    fn opposite_attitudes_share_no_phrases() {
        for a in Attitude::ALL {
            let mine: std::collections::HashSet<&String> = phrases(a).iter().collect();
            for p in phrases(a.opposite()) {
                assert!(!mine.contains(p), "{p:?} appears for both {a} and its opposite");
            }
        }
    }

    #[test]
    fn phrases_are_first_person() {
        for a in Attitude::ALL {
            for p in phrases(a) {
                assert!(p.starts_with("I "), "{p:?} is not first person");
            }
        }
    }

    #[test]
    fn sample_corpus_is_valid_jsonl() {
        let mut count = 0;
        for line in SAMPLE_CORPUS.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("instruction").and_then(|s| s.as_str()).is_some());
            assert!(v.get("input").is_some());
            count += 1;
        }
        assert_eq!(count, 100);
    }
}
