//! Deterministic offline annotation.
//!
//! Every output is a pure function of (seed, inputs): classification hashes
//! the instruction into a dimension, and generated text is assembled from
//! the fixed trait lexicon with marker tokens. Each sentence of a generated
//! response carries its attitude's marker exactly once, at the front.

use crate::assets::phrases;
use crate::lm::Vocabulary;
use crate::mbti::{Attitude, Dimension, PersonalityType};
use crate::util::stable_hash;

/// Hash-derived dimension: canonical-order index of
/// `hash(seed, instruction) mod 4`.
pub fn classify_dimension(seed: u64, instruction: &str) -> Dimension {
    let h = stable_hash(seed, &["classify", instruction]);
    Dimension::ALL[(h % 4) as usize]
}

/// Two-sentence response in the style of one attitude.
pub fn styled_response(seed: u64, instruction: &str, attitude: Attitude) -> String {
    let pool = phrases(attitude);
    let h1 = stable_hash(seed, &["phrase1", instruction, &attitude.letter().to_string()]);
    let h2 = stable_hash(seed, &["phrase2", instruction, &attitude.letter().to_string()]);
    let first = (h1 % pool.len() as u64) as usize;
    // Second phrase always differs from the first.
    let second = (first + 1 + (h2 % (pool.len() as u64 - 1)) as usize) % pool.len();
    let mk = Vocabulary::marker_text(attitude);
    format!("{mk} {}. {mk} {}.", pool[first], pool[second])
}

/// Response pair for a dimension: canonical-first attitude, then its
/// opposite. The two responses are never identical.
pub fn generate_attitude_pair(
    seed: u64,
    instruction: &str,
    dimension: Dimension,
) -> (String, String) {
    let (first, second) = dimension.attitudes();
    (
        styled_response(seed, instruction, first),
        styled_response(seed, instruction, second),
    )
}

/// Question pool for self-awareness generation, each tied to the dimension
/// its answer should speak to.
pub const AWARENESS_QUESTIONS: [(&str, Dimension); 8] = [
    ("How do you recharge?", Dimension::Energy),
    ("What energizes you in a group?", Dimension::Energy),
    ("How do you take in new information?", Dimension::Information),
    ("What do you trust when learning something?", Dimension::Information),
    ("How do you make decisions?", Dimension::Decision),
    ("What matters most when you choose?", Dimension::Decision),
    ("How do you organize your work?", Dimension::Execution),
    ("How do you treat deadlines and plans?", Dimension::Execution),
];

/// The `index`-th self-awareness Q&A for a type. Questions cycle through
/// the pool; answers are first-person trait descriptions built from the
/// type's own attitude phrases.
pub fn self_awareness_qa(
    seed: u64,
    personality: PersonalityType,
    index: usize,
) -> (String, String) {
    let (question, dimension) = AWARENESS_QUESTIONS[index % AWARENESS_QUESTIONS.len()];
    let attitude = personality.attitude_on(dimension);
    let pool = phrases(attitude);
    let code = personality.code();
    let idx = index.to_string();
    let h1 = stable_hash(seed, &["aw1", &code, &idx]);
    let h2 = stable_hash(seed, &["aw2", &code, &idx]);
    let first = (h1 % pool.len() as u64) as usize;
    let second = (first + 1 + (h2 % (pool.len() as u64 - 1)) as usize) % pool.len();
    let mk = Vocabulary::marker_text(attitude);
    let answer = format!("{mk} {}. {mk} {}.", pool[first], pool[second]);
    (question.to_string(), answer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_is_pinned() {
        // Regression pin: the hash of this instruction under seed 0 must
        // never drift, or datasets stop reproducing.
        let d = classify_dimension(0, "Give three tips for staying healthy.");
        assert_eq!(d, classify_dimension(0, "Give three tips for staying healthy."));
        assert_eq!(d, Dimension::Information);
    }

    #[test]
    fn classification_covers_all_dimensions() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..1000 {
            let d = classify_dimension(0, &format!("instruction number {i}"));
            seen.insert(d);
        }
        assert_eq!(seen.len(), 4, "1000 mock instructions must hit all four dimensions");
    }

    #[test]
    fn pair_halves_are_distinct_and_styled() {
        let (first, second) = generate_attitude_pair(0, "Plan a picnic.", Dimension::Decision);
        assert_ne!(first, second);
        assert!(first.contains("<mk_T>"));
        assert!(second.contains("<mk_F>"));
    }

    #[test]
    fn marker_appears_exactly_once_per_sentence() {
        for seed in [0, 7] {
            let (first, second) =
                generate_attitude_pair(seed, "Describe a quiet library scene.", Dimension::Energy);
            for (resp, att) in [(first, Attitude::E), (second, Attitude::I)] {
                let mk = Vocabulary::marker_text(att);
                let sentences: Vec<&str> =
                    resp.split_inclusive('.').filter(|s| !s.trim().is_empty()).collect();
                assert_eq!(sentences.len(), 2);
                for s in sentences {
                    assert_eq!(s.matches(&mk).count(), 1, "sentence {s:?}");
                }
            }
        }
    }

    #[test]
    fn mock_is_deterministic_and_seed_sensitive() {
        let a = styled_response(3, "Sort the list.", Attitude::J);
        let b = styled_response(3, "Sort the list.", Attitude::J);
        assert_eq!(a, b);
        // A different seed changes at least some outputs over a few tries.
        let mut any_diff = false;
        for i in 0..8 {
            let inst = format!("instruction {i}");
            any_diff |= styled_response(3, &inst, Attitude::J)
                != styled_response(4, &inst, Attitude::J);
        }
        assert!(any_diff);
    }

    #[test]
    fn awareness_answers_use_the_types_lexicon() {
        let infp = PersonalityType::parse("INFP").unwrap();
        for i in 0..8 {
            let (q, a) = self_awareness_qa(0, infp, i);
            assert!(!q.is_empty());
            assert!(a.contains("I "), "answer must be first person: {a:?}");
            let hit = infp
                .attitudes()
                .iter()
                .flat_map(|&att| phrases(att))
                .any(|p| a.contains(p.as_str()));
            assert!(hit, "answer {a:?} mentions no INFP trait phrase");
        }
    }

    #[test]
    fn opposite_types_share_no_answers() {
        let infp = PersonalityType::parse("INFP").unwrap();
        let estj = infp.full_opposite();
        let a: std::collections::HashSet<String> =
            (0..32).map(|i| self_awareness_qa(0, infp, i).1).collect();
        for i in 0..32 {
            let (_, ans) = self_awareness_qa(0, estj, i);
            assert!(!a.contains(&ans), "shared answer {ans:?}");
        }
    }
}
