//! MBTI dimensions, attitudes, and the sixteen personality types.
//!
//! Four dichotomous dimensions, each owning two opposed attitudes:
//!
//! - Energy: Extraversion (E) — Introversion (I)
//! - Information: Sensing (S) — Intuition (N)
//! - Decision: Thinking (T) — Feeling (F)
//! - Execution: Judging (J) — Perceiving (P)
//!
//! A personality type picks one attitude per dimension; formatting yields a
//! 4-letter code in the canonical dimension order above.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// One of the four MBTI axes, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dimension {
    Energy,
    Information,
    Decision,
    Execution,
}

impl Dimension {
    /// All four dimensions in canonical order.
    pub const ALL: [Dimension; 4] = [
        Dimension::Energy,
        Dimension::Information,
        Dimension::Decision,
        Dimension::Execution,
    ];

    /// Canonical position (0..4) used for code formatting and shard order.
    pub fn index(self) -> usize {
        match self {
            Dimension::Energy => 0,
            Dimension::Information => 1,
            Dimension::Decision => 2,
            Dimension::Execution => 3,
        }
    }

    /// Lowercase word used in all file formats.
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Energy => "energy",
            Dimension::Information => "information",
            Dimension::Decision => "decision",
            Dimension::Execution => "execution",
        }
    }

    /// Parses the lowercase serialized form.
    pub fn parse(s: &str) -> Option<Dimension> {
        match s {
            "energy" => Some(Dimension::Energy),
            "information" => Some(Dimension::Information),
            "decision" => Some(Dimension::Decision),
            "execution" => Some(Dimension::Execution),
            _ => None,
        }
    }

    /// The dimension's two attitudes, canonical-first attitude first.
    pub fn attitudes(self) -> (Attitude, Attitude) {
        match self {
            Dimension::Energy => (Attitude::E, Attitude::I),
            Dimension::Information => (Attitude::S, Attitude::N),
            Dimension::Decision => (Attitude::T, Attitude::F),
            Dimension::Execution => (Attitude::J, Attitude::P),
        }
    }

    /// The attitude listed first in the dichotomy (E, S, T or J).
    pub fn canonical_first(self) -> Attitude {
        self.attitudes().0
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Dimension {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Dimension {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Dimension::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown dimension {s:?}")))
    }
}

/// One pole of a dimension. Serializes as its single uppercase letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attitude {
    E,
    I,
    S,
    N,
    T,
    F,
    J,
    P,
}

impl Attitude {
    /// All eight attitudes, grouped by dimension in canonical order.
    pub const ALL: [Attitude; 8] = [
        Attitude::E,
        Attitude::I,
        Attitude::S,
        Attitude::N,
        Attitude::T,
        Attitude::F,
        Attitude::J,
        Attitude::P,
    ];

    /// Uppercase letter used in codes and file formats.
    pub fn letter(self) -> char {
        match self {
            Attitude::E => 'E',
            Attitude::I => 'I',
            Attitude::S => 'S',
            Attitude::N => 'N',
            Attitude::T => 'T',
            Attitude::F => 'F',
            Attitude::J => 'J',
            Attitude::P => 'P',
        }
    }

    /// Parses a letter, case-insensitively.
    pub fn from_letter(c: char) -> Option<Attitude> {
        match c.to_ascii_uppercase() {
            'E' => Some(Attitude::E),
            'I' => Some(Attitude::I),
            'S' => Some(Attitude::S),
            'N' => Some(Attitude::N),
            'T' => Some(Attitude::T),
            'F' => Some(Attitude::F),
            'J' => Some(Attitude::J),
            'P' => Some(Attitude::P),
            _ => None,
        }
    }

    /// The dimension this attitude belongs to.
    pub fn dimension(self) -> Dimension {
        match self {
            Attitude::E | Attitude::I => Dimension::Energy,
            Attitude::S | Attitude::N => Dimension::Information,
            Attitude::T | Attitude::F => Dimension::Decision,
            Attitude::J | Attitude::P => Dimension::Execution,
        }
    }

    /// The other attitude of the same dimension.
    pub fn opposite(self) -> Attitude {
        match self {
            Attitude::E => Attitude::I,
            Attitude::I => Attitude::E,
            Attitude::S => Attitude::N,
            Attitude::N => Attitude::S,
            Attitude::T => Attitude::F,
            Attitude::F => Attitude::T,
            Attitude::J => Attitude::P,
            Attitude::P => Attitude::J,
        }
    }

    /// Index into [`Attitude::ALL`].
    pub fn index(self) -> usize {
        match self {
            Attitude::E => 0,
            Attitude::I => 1,
            Attitude::S => 2,
            Attitude::N => 3,
            Attitude::T => 4,
            Attitude::F => 5,
            Attitude::J => 6,
            Attitude::P => 7,
        }
    }
}

impl fmt::Display for Attitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl Serialize for Attitude {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 1];
        ser.serialize_str(self.letter().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for Attitude {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => Attitude::from_letter(c)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown attitude {s:?}"))),
            _ => Err(serde::de::Error::custom(format!(
                "attitude must be a single uppercase letter, got {s:?}"
            ))),
        }
    }
}

/// Error from [`PersonalityType::parse`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("malformed type code {code:?}: expected 4 letters")]
    MalformedLength { code: String },
    #[error("malformed type code {code:?}: {letter:?} is not valid for the {dimension} position")]
    MalformedLetter {
        code: String,
        letter: char,
        dimension: Dimension,
    },
}

/// One attitude per dimension; names one of the 16 MBTI types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PersonalityType {
    pub energy: Attitude,
    pub information: Attitude,
    pub decision: Attitude,
    pub execution: Attitude,
}

impl PersonalityType {
    /// Builds a type from one attitude per dimension, validating ownership.
    pub fn new(
        energy: Attitude,
        information: Attitude,
        decision: Attitude,
        execution: Attitude,
    ) -> Option<PersonalityType> {
        let t = PersonalityType {
            energy,
            information,
            decision,
            execution,
        };
        (energy.dimension() == Dimension::Energy
            && information.dimension() == Dimension::Information
            && decision.dimension() == Dimension::Decision
            && execution.dimension() == Dimension::Execution)
            .then_some(t)
    }

    /// Parses a 4-letter code, case-insensitively. Each letter must be valid
    /// for its position.
    pub fn parse(code: &str) -> Result<PersonalityType, CodeError> {
        let chars: Vec<char> = code.chars().collect();
        if chars.len() != 4 || !chars.iter().all(|c| c.is_ascii_alphabetic()) {
            return Err(CodeError::MalformedLength {
                code: code.to_string(),
            });
        }
        let mut picked = [Attitude::E; 4];
        for (i, (&c, dim)) in chars.iter().zip(Dimension::ALL).enumerate() {
            let att = Attitude::from_letter(c).filter(|a| a.dimension() == dim).ok_or(
                CodeError::MalformedLetter {
                    code: code.to_string(),
                    letter: c,
                    dimension: dim,
                },
            )?;
            picked[i] = att;
        }
        Ok(PersonalityType {
            energy: picked[0],
            information: picked[1],
            decision: picked[2],
            execution: picked[3],
        })
    }

    /// Uppercase 4-letter code in canonical dimension order.
    pub fn code(&self) -> String {
        self.attitudes().iter().map(|a| a.letter()).collect()
    }

    /// Attitudes in canonical dimension order.
    pub fn attitudes(&self) -> [Attitude; 4] {
        [self.energy, self.information, self.decision, self.execution]
    }

    /// The attitude this type holds on the given dimension.
    pub fn attitude_on(&self, d: Dimension) -> Attitude {
        self.attitudes()[d.index()]
    }

    /// The type with every attitude flipped (e.g. INFP → ESTJ).
    pub fn full_opposite(&self) -> PersonalityType {
        PersonalityType {
            energy: self.energy.opposite(),
            information: self.information.opposite(),
            decision: self.decision.opposite(),
            execution: self.execution.opposite(),
        }
    }

    /// All sixteen types, in E/I-major enumeration order.
    pub fn all() -> Vec<PersonalityType> {
        let mut out = Vec::with_capacity(16);
        for &e in &[Attitude::E, Attitude::I] {
            for &s in &[Attitude::S, Attitude::N] {
                for &t in &[Attitude::T, Attitude::F] {
                    for &j in &[Attitude::J, Attitude::P] {
                        out.push(PersonalityType {
                            energy: e,
                            information: s,
                            decision: t,
                            execution: j,
                        });
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for PersonalityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl Serialize for PersonalityType {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for PersonalityType {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        PersonalityType::parse(&s).map_err(serde::de::Error::custom)
    }
}
