use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// Index of a letter in its alphabet's declared order.
///
/// All vectors and matrices in the crate are indexed by `Letter`; the order is
/// fixed when the alphabet is built and never changes under induction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter(pub u8);

impl Letter {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Ordered set of distinct symbols naming the exchanged intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
}

/// Letters are stored as `u8`, and completeness/irreducibility checks use a
/// `u64` bitmask per line.
pub const MAX_LETTERS: usize = 64;

impl Alphabet {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Arc<Self>> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.len() < 2 {
            return Err(Error::Malformed(format!(
                "alphabet needs at least 2 letters, got {}",
                symbols.len()
            )));
        }
        if symbols.len() > MAX_LETTERS {
            return Err(Error::Malformed(format!(
                "alphabet has {} letters, maximum is {MAX_LETTERS}",
                symbols.len()
            )));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.contains(char::is_whitespace) || s == "/" {
                return Err(Error::Malformed(format!("invalid letter symbol {s:?}")));
            }
            if symbols[..i].contains(s) {
                return Err(Error::Malformed(format!("duplicate letter symbol {s:?}")));
            }
        }
        Ok(Arc::new(Alphabet { symbols }))
    }

    /// Alphabet `A B C ...` with `d` single-character letters.
    pub fn latin(d: usize) -> Result<Arc<Self>> {
        if d > 26 {
            return Err(Error::Malformed(format!(
                "latin alphabet supports at most 26 letters, got {d}"
            )));
        }
        Self::new((0..d).map(|i| ((b'A' + i as u8) as char).to_string()))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false // by construction d >= 2
    }

    pub fn letters(&self) -> impl Iterator<Item = Letter> {
        (0..self.symbols.len() as u8).map(Letter)
    }

    pub fn symbol(&self, l: Letter) -> &str {
        &self.symbols[l.index()]
    }

    pub fn letter_of(&self, symbol: &str) -> Option<Letter> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .map(|i| Letter(i as u8))
    }

    /// Renders a word (sequence of letters) with single spaces.
    pub fn word(&self, letters: &[Letter]) -> String {
        letters
            .iter()
            .map(|&l| self.symbol(l))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbols.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_and_duplicate() {
        assert!(Alphabet::new(["A"]).is_err());
        assert!(Alphabet::new(["A", "A"]).is_err());
        assert!(Alphabet::new(["A", "B C"]).is_err());
        assert!(Alphabet::new(["A", "B"]).is_ok());
    }

    #[test]
    fn lookup_roundtrip() {
        let a = Alphabet::latin(4).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a.symbol(Letter(2)), "C");
        assert_eq!(a.letter_of("D"), Some(Letter(3)));
        assert_eq!(a.letter_of("E"), None);
    }
}
