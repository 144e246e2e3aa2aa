//! Byte-level vocabulary with special and attitude-marker tokens.
//!
//! Ids 0..=255 are raw bytes, followed by BOS/EOS/PAD and one marker token
//! per attitude. Marker literals like `<mk_T>` encode to a single token, so
//! a marker is one learnable symbol rather than six bytes.

use crate::mbti::Attitude;

/// Token id.
pub type TokenId = usize;

/// The fixed byte-level vocabulary. Token ids are stable across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary;

impl Vocabulary {
    pub const BOS: TokenId = 256;
    pub const EOS: TokenId = 257;
    pub const PAD: TokenId = 258;
    const MARKER_BASE: TokenId = 259;

    /// Total vocabulary size: 256 bytes + 3 specials + 8 markers.
    pub const SIZE: usize = 267;

    /// The marker token for an attitude.
    pub fn marker(attitude: Attitude) -> TokenId {
        Self::MARKER_BASE + attitude.index()
    }

    /// The literal text form of an attitude marker, e.g. `<mk_T>`.
    pub fn marker_text(attitude: Attitude) -> String {
        format!("<mk_{}>", attitude.letter())
    }

    fn marker_attitude(id: TokenId) -> Option<Attitude> {
        if (Self::MARKER_BASE..Self::MARKER_BASE + 8).contains(&id) {
            Some(Attitude::ALL[id - Self::MARKER_BASE])
        } else {
            None
        }
    }

    /// Encodes text to token ids. Marker literals become single marker
    /// tokens; every other byte maps to its byte token. No BOS/EOS are
    /// added.
    pub fn encode(text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(bytes.len());
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'<' {
                if let Some(att) = Self::match_marker(&bytes[i..]) {
                    out.push(Self::marker(att));
                    i += 6; // len of "<mk_X>"
                    continue;
                }
            }
            out.push(bytes[i] as TokenId);
            i += 1;
        }
        out
    }

    fn match_marker(rest: &[u8]) -> Option<Attitude> {
        if rest.len() < 6 || &rest[..4] != b"<mk_" || rest[5] != b'>' {
            return None;
        }
        let c = rest[4] as char;
        // Marker letters are uppercase only.
        if !c.is_ascii_uppercase() {
            return None;
        }
        Attitude::from_letter(c)
    }

    /// Decodes token ids back to text. Byte tokens emit their byte, marker
    /// tokens their literal form, and BOS/EOS/PAD emit nothing.
    pub fn decode(tokens: &[TokenId]) -> String {
        let mut bytes = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if t < 256 {
                bytes.push(t as u8);
            } else if let Some(att) = Self::marker_attitude(t) {
                bytes.extend_from_slice(Self::marker_text(att).as_bytes());
            }
            // BOS/EOS/PAD are structural; they have no text form.
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocabulary_size_and_layout() {
        assert_eq!(Vocabulary::SIZE, 267);
        assert_eq!(Vocabulary::marker(Attitude::E), 259);
        assert_eq!(Vocabulary::marker(Attitude::P), 266);
    }

    #[test]
    fn plain_text_round_trips() {
        let s = "Give three tips for staying healthy.";
        let toks = Vocabulary::encode(s);
        assert_eq!(toks.len(), s.len());
        assert_eq!(Vocabulary::decode(&toks), s);
    }

    #[test]
    fn markers_encode_to_single_tokens() {
        let s = "<mk_T> I weigh the logic first.";
        let toks = Vocabulary::encode(s);
        assert_eq!(toks[0], Vocabulary::marker(Attitude::T));
        assert_eq!(toks.len(), s.len() - 5);
        assert_eq!(Vocabulary::decode(&toks), s);
    }

    #[test]
    fn near_marker_text_stays_bytes() {
        for s in ["<mk_t>", "<mk_X>", "<mk_T", "<mkT>", "<mk_>"] {
            let toks = Vocabulary::encode(s);
            assert!(toks.iter().all(|&t| t < 256), "{s} produced non-bytes");
            assert_eq!(Vocabulary::decode(&toks), s);
        }
    }

    #[test]
    fn specials_decode_to_nothing() {
        let toks = vec![Vocabulary::BOS, b'h' as usize, b'i' as usize, Vocabulary::EOS];
        assert_eq!(Vocabulary::decode(&toks), "hi");
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_text(s in "\\PC*") {
            let toks = Vocabulary::encode(&s);
            prop_assert_eq!(Vocabulary::decode(&toks), s);
        }

        #[test]
        fn round_trip_arbitrary_bytes(b in proptest::collection::vec(any::<u8>(), 0..256)) {
            // Arbitrary byte strings via latin-1 style mapping stay intact.
            let s: String = b.iter().map(|&x| x as char).collect();
            let toks = Vocabulary::encode(&s);
            prop_assert_eq!(Vocabulary::decode(&toks), s);
        }
    }
}
