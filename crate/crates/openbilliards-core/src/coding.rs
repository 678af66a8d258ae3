//! Symbolic dynamics of the open billiard: admissible words over scatterer
//! labels, transposition, palindromic structure, and the two-letter word
//! families that accumulate on a homoclinic orbit.
//!
//! Words are cyclic: the admissibility constraint couples the last symbol to
//! the first. A word names one periodic orbit; rotations of a word name the
//! same orbit with a different starting collision, so spectrum tables key
//! entries by the lexicographically least rotation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WordError {
    #[error("word must have at least 2 symbols, got {0}")]
    TooShort(usize),
    #[error("symbol {symbol} at position {position} equals its cyclic successor")]
    Repetition { symbol: u8, position: usize },
    #[error("symbol {symbol} at position {position} outside labels 1..={max}")]
    BadLabel { symbol: u8, position: usize, max: u8 },
    #[error("cannot parse word from {0:?}: expected ASCII digits 1-9")]
    Parse(String),
    #[error("incompatible family words sigma={sigma} tau={tau}: need sigma=(s1 s0), tau=(t1 s0) with three distinct labels")]
    BadFamily { sigma: String, tau: String },
}

/// Checks cyclic non-repetition and label range without allocating.
pub fn is_admissible(symbols: &[u8], max_label: u8) -> bool {
    if symbols.len() < 2 {
        return false;
    }
    for (k, &sym) in symbols.iter().enumerate() {
        if sym < 1 || sym > max_label {
            return false;
        }
        let next = symbols[(k + 1) % symbols.len()];
        if sym == next {
            return false;
        }
    }
    true
}

/// A validated cyclic word over scatterer labels `1..=max_label`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdmissibleWord {
    symbols: Vec<u8>,
}

impl AdmissibleWord {
    pub fn new(symbols: Vec<u8>, max_label: u8) -> Result<Self, WordError> {
        if symbols.len() < 2 {
            return Err(WordError::TooShort(symbols.len()));
        }
        for (k, &sym) in symbols.iter().enumerate() {
            if sym < 1 || sym > max_label {
                return Err(WordError::BadLabel {
                    symbol: sym,
                    position: k,
                    max: max_label,
                });
            }
            if sym == symbols[(k + 1) % symbols.len()] {
                return Err(WordError::Repetition {
                    symbol: sym,
                    position: k,
                });
            }
        }
        Ok(AdmissibleWord { symbols })
    }

    /// Parses an ASCII digit string like "3212".
    pub fn parse(text: &str, max_label: u8) -> Result<Self, WordError> {
        let symbols: Option<Vec<u8>> = text
            .chars()
            .map(|c| c.to_digit(10).and_then(|d| u8::try_from(d).ok()))
            .collect();
        match symbols {
            Some(v) if !v.is_empty() => AdmissibleWord::new(v, max_label),
            _ => Err(WordError::Parse(text.to_string())),
        }
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false // validated words have length >= 2
    }

    /// Scatterer index (0-based) visited at position `k`.
    pub fn scatterer_at(&self, k: usize) -> usize {
        (self.symbols[k % self.symbols.len()] - 1) as usize
    }

    /// The reversed word: same trajectory traversed backwards.
    pub fn transpose(&self) -> AdmissibleWord {
        let mut symbols = self.symbols.clone();
        symbols.reverse();
        AdmissibleWord { symbols }
    }

    /// Lexicographically least rotation, as the dedup key for spectrum tables.
    /// Rotations are identified (same orbit, shifted start); reversal is not.
    pub fn canonical_key(&self) -> String {
        let p = self.symbols.len();
        let mut best: Option<Vec<u8>> = None;
        for shift in 0..p {
            let rot: Vec<u8> = (0..p).map(|k| self.symbols[(k + shift) % p]).collect();
            if best.as_ref().is_none_or(|b| rot < *b) {
                best = Some(rot);
            }
        }
        best.unwrap().iter().map(|s| (b'0' + s) as char).collect()
    }

    /// Palindromic structure under cyclic rotation, if any.
    ///
    /// A word of even length `2q` is palindromic when some position `c`
    /// satisfies `w(c+i) = w(c-i)` for all `i` (indices cyclic). The two
    /// reflection-fixed positions `c` and `c+q` are the perpendicular
    /// bounces of the orbit. Odd-length words return `None`.
    pub fn palindromic_structure(&self) -> Option<PalindromicStructure> {
        let p = self.symbols.len();
        if p % 2 != 0 {
            return None;
        }
        let q = p / 2;
        for c in 0..p {
            let symmetric = (1..q).all(|i| {
                self.symbols[(c + i) % p] == self.symbols[(c + p - i) % p]
            });
            if symmetric {
                return Some(PalindromicStructure {
                    perpendicular_positions: (c.min((c + q) % p), c.max((c + q) % p)),
                });
            }
        }
        None
    }

    pub fn is_palindromic(&self) -> bool {
        self.palindromic_structure().is_some()
    }
}

impl fmt::Display for AdmissibleWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Reflection data of a palindromic word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PalindromicStructure {
    /// The two positions fixed by the reflection (perpendicular bounces),
    /// sorted ascending.
    pub perpendicular_positions: (usize, usize),
}

/// Builds the family member `h_n = tau sigma^n` of length `2n+2`.
///
/// `sigma = (s1 s0)` is the 2-periodic base word and `tau = (t1 s0)` shares
/// its second symbol; the three labels must be distinct so the word visits a
/// third scatterer exactly once per period.
pub fn homoclinic_family(
    sigma: &AdmissibleWord,
    tau: &AdmissibleWord,
    n: usize,
    max_label: u8,
) -> Result<AdmissibleWord, WordError> {
    let bad = || WordError::BadFamily {
        sigma: sigma.to_string(),
        tau: tau.to_string(),
    };
    if sigma.len() != 2 || tau.len() != 2 {
        return Err(bad());
    }
    let (s1, s0) = (sigma.symbols[0], sigma.symbols[1]);
    let (t1, t0) = (tau.symbols[0], tau.symbols[1]);
    if t0 != s0 || t1 == s1 || t1 == s0 || s1 == s0 {
        return Err(bad());
    }
    if n == 0 {
        return Err(bad());
    }
    let mut symbols = Vec::with_capacity(2 * n + 2);
    symbols.push(t1);
    symbols.push(s0);
    for _ in 0..n {
        symbols.push(s1);
        symbols.push(s0);
    }
    AdmissibleWord::new(symbols, max_label)
}

/// All admissible words of length `p` over labels `1..=m`, as rooted
/// sequences (rotations counted separately).
pub fn enumerate_admissible(m: u8, p: usize) -> Vec<AdmissibleWord> {
    let mut out = Vec::new();
    let mut stack = vec![Vec::<u8>::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == p {
            if prefix[p - 1] != prefix[0] {
                out.push(AdmissibleWord {
                    symbols: prefix,
                });
            }
            continue;
        }
        for sym in 1..=m {
            if prefix.last() == Some(&sym) {
                continue;
            }
            let mut next = prefix.clone();
            next.push(sym);
            stack.push(next);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(text: &str) -> AdmissibleWord {
        AdmissibleWord::parse(text, 3).unwrap()
    }

    #[test]
    fn admissibility_gate() {
        assert!(is_admissible(&[1, 2], 3));
        assert!(!is_admissible(&[1, 1], 3));
        // Cyclic wrap: last symbol equals first.
        assert!(!is_admissible(&[1, 2, 1], 3));
        assert!(!is_admissible(&[1], 3));
        assert!(!is_admissible(&[1, 4], 3));
        assert!(AdmissibleWord::parse("121", 3).is_err());
    }

    #[test]
    fn transpose_is_involutive_and_reverses() {
        assert_eq!(w("123").transpose().to_string(), "321");
        assert_eq!(w("12").transpose().to_string(), "21");
        let word = w("321212");
        assert_eq!(word.transpose().transpose(), word);
        assert!(is_admissible(word.transpose().symbols(), 3));
    }

    #[test]
    fn canonical_key_is_rotation_invariant() {
        assert_eq!(w("312").canonical_key(), "123");
        assert_eq!(w("231").canonical_key(), "123");
        assert_eq!(w("123").canonical_key(), "123");
        // Reversal is a different key in general.
        assert_ne!(w("123").canonical_key(), w("123").transpose().canonical_key());
    }

    #[test]
    fn palindromic_detection() {
        // 2-periodic orbits bounce perpendicularly at both collisions.
        let two = w("12").palindromic_structure().unwrap();
        assert_eq!(two.perpendicular_positions, (0, 1));
        assert!(w("1213").is_palindromic());
        assert!(!w("123123").is_palindromic());
        // Odd length is never palindromic in this sense.
        assert!(!w("123").is_palindromic());
    }

    #[test]
    fn family_words() {
        let sigma = w("12");
        let tau = w("32");
        let h3 = homoclinic_family(&sigma, &tau, 3, 3).unwrap();
        assert_eq!(h3.to_string(), "32121212");
        let h1 = homoclinic_family(&sigma, &tau, 1, 3).unwrap();
        assert_eq!(h1.to_string(), "3212");
        for n in 1..=8 {
            let hn = homoclinic_family(&sigma, &tau, n, 3).unwrap();
            assert_eq!(hn.len(), 2 * n + 2);
            let pal = hn.palindromic_structure().unwrap();
            // Perpendicular bounces: the third-scatterer visit and the
            // mid-excursion collision.
            assert_eq!(pal.perpendicular_positions, (0, n + 1));
        }
        // tau must share the second symbol with sigma.
        assert!(homoclinic_family(&sigma, &w("13"), 2, 3).is_err());
        assert!(homoclinic_family(&sigma, &w("12"), 2, 3).is_err());
    }

    #[test]
    fn word_count_matches_transition_matrix_trace() {
        // Over 3 symbols the count of length-p cyclic words with no adjacent
        // repeats is 2^p + 2(-1)^p.
        for p in 2..=12usize {
            let count = enumerate_admissible(3, p).len() as i64;
            let expect = 2i64.pow(p as u32) + 2 * if p % 2 == 0 { 1 } else { -1 };
            assert_eq!(count, expect, "period {p}");
        }
    }
}
