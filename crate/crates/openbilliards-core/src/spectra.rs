//! Marked length / Lyapunov spectrum tables.
//!
//! A spectrum table maps canonical admissible words to the length and
//! Lyapunov exponent of the corresponding periodic orbit. Everything the
//! inverse pipeline consumes flows through this layer, so values persist as
//! bit-exact decimal strings tagged with their precision, never as binary
//! floats. The on-disk format is JSON lines: one header object with the
//! geometry hash and build parameters, then one object per entry in key
//! order (deterministic regardless of solve parallelism).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coding::{AdmissibleWord, WordError};
use crate::geometry::Table;
use crate::hp::Hp;
use crate::solver::{solve_orbit, PeriodicOrbit};

pub const SPECTRUM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed spectrum line: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad spectrum file: {0}")]
    Format(String),
    #[error("word {0} not present in the spectrum table")]
    NotFound(String),
    #[error(transparent)]
    Word(#[from] WordError),
}

/// One stored orbit: length and Lyapunov exponent as decimal strings that
/// reparse bit-exactly at `precision`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub length: String,
    pub lyapunov: String,
    /// Worst normalized reflection-law residual left by the orbit solver.
    pub residual: f64,
    pub precision: u32,
}

impl SpectrumEntry {
    pub fn from_orbit(orbit: &PeriodicOrbit) -> Self {
        SpectrumEntry {
            length: orbit.length.to_decimal(),
            lyapunov: orbit.lyapunov.to_decimal(),
            residual: orbit.residual,
            precision: orbit.precision,
        }
    }

    pub fn length_hp(&self) -> Hp {
        Hp::parse(self.precision, &self.length).expect("entry validated on construction")
    }

    pub fn lyapunov_hp(&self) -> Hp {
        Hp::parse(self.precision, &self.lyapunov).expect("entry validated on construction")
    }

    fn validate(&self, key: &str) -> Result<(), SpectrumError> {
        let bad = |what: &str| SpectrumError::Format(format!("entry {key}: {what}"));
        let l = Hp::parse(self.precision, &self.length).ok_or_else(|| bad("unparseable length"))?;
        let le =
            Hp::parse(self.precision, &self.lyapunov).ok_or_else(|| bad("unparseable exponent"))?;
        if !(l.is_finite() && l.to_f64() > 0.0) {
            return Err(bad("length must be positive"));
        }
        if !(le.is_finite() && le.to_f64() > 0.0) {
            return Err(bad("Lyapunov exponent must be positive (hyperbolicity)"));
        }
        Ok(())
    }
}

/// Header line of a `.mls.jsonl` file.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct SpectrumHeader {
    format_version: u32,
    table_hash: String,
    precision: u32,
    entries: usize,
    failures: usize,
}

/// Entry line of a `.mls.jsonl` file.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct SpectrumLine {
    word: String,
    #[serde(flatten)]
    entry: SpectrumEntry,
}

/// Failure line of a `.mls.jsonl` file (solver failures are recorded, not
/// fatal, so a batch build always produces a complete artifact).
#[derive(Clone, Debug, Serialize, Deserialize)]
struct FailureLine {
    word: String,
    error: String,
}

#[derive(Clone, Debug, Default)]
pub struct SpectrumTable {
    /// Hash of the geometry the entries were computed on.
    pub table_hash: String,
    /// Working precision of the build, in bits.
    pub precision: u32,
    /// Canonical word key -> entry.
    pub entries: BTreeMap<String, SpectrumEntry>,
    /// Canonical word key -> solver error text, for words that failed.
    pub failures: BTreeMap<String, String>,
}

impl SpectrumTable {
    /// Solves every word in parallel and merges the results in key order.
    /// Words that are rotations of each other collapse to one entry;
    /// reversed words stay distinct keys (the marking is oriented) unless
    /// the reversal happens to be a rotation.
    pub fn build(table: &Table, words: &[AdmissibleWord], precision: u32) -> SpectrumTable {
        let mut unique: BTreeMap<String, AdmissibleWord> = BTreeMap::new();
        for w in words {
            unique.entry(w.canonical_key()).or_insert_with(|| w.clone());
        }
        let solved: Vec<(String, Result<PeriodicOrbit, _>)> = unique
            .into_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(key, w)| {
                let r = solve_orbit(table, &w, precision);
                (key, r)
            })
            .collect();
        let mut out = SpectrumTable {
            table_hash: table.hash.clone(),
            precision,
            entries: BTreeMap::new(),
            failures: BTreeMap::new(),
        };
        for (key, r) in solved {
            match r {
                Ok(orbit) => {
                    out.entries.insert(key, SpectrumEntry::from_orbit(&orbit));
                }
                Err(e) => {
                    out.failures.insert(key, e.to_string());
                }
            }
        }
        out
    }

    /// Entry for a word, resolved through its canonical key.
    pub fn get(&self, word: &AdmissibleWord) -> Result<&SpectrumEntry, SpectrumError> {
        let key = word.canonical_key();
        self.entries
            .get(&key)
            .ok_or(SpectrumError::NotFound(key))
    }

    /// Entry for a word given as text; inadmissible words are a domain
    /// error, not a lookup miss.
    pub fn query(&self, text: &str, max_label: u8) -> Result<&SpectrumEntry, SpectrumError> {
        let word = AdmissibleWord::parse(text, max_label)?;
        self.get(&word)
    }

    /// Whether the stored geometry hash matches `table` (a mismatch means
    /// the spectrum was built for some other configuration).
    pub fn matches_table(&self, table: &Table) -> bool {
        self.table_hash == table.hash
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), SpectrumError> {
        let header = SpectrumHeader {
            format_version: SPECTRUM_FORMAT_VERSION,
            table_hash: self.table_hash.clone(),
            precision: self.precision,
            entries: self.entries.len(),
            failures: self.failures.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (word, entry) in &self.entries {
            let line = SpectrumLine {
                word: word.clone(),
                entry: entry.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        for (word, error) in &self.failures {
            let line = FailureLine {
                word: word.clone(),
                error: error.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<SpectrumTable, SpectrumError> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| SpectrumError::Format("empty file".into()))??;
        let header: SpectrumHeader = serde_json::from_str(&header_line)?;
        if header.format_version != SPECTRUM_FORMAT_VERSION {
            return Err(SpectrumError::Format(format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        let mut out = SpectrumTable {
            table_hash: header.table_hash,
            precision: header.precision,
            entries: BTreeMap::new(),
            failures: BTreeMap::new(),
        };
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(entry) = serde_json::from_str::<SpectrumLine>(&line) {
                entry.entry.validate(&entry.word)?;
                if out.entries.insert(entry.word.clone(), entry.entry).is_some() {
                    return Err(SpectrumError::Format(format!(
                        "duplicate entry {}",
                        entry.word
                    )));
                }
            } else {
                let failure: FailureLine = serde_json::from_str(&line)?;
                out.failures.insert(failure.word, failure.error);
            }
        }
        if out.entries.len() != header.entries || out.failures.len() != header.failures {
            return Err(SpectrumError::Format(format!(
                "line count mismatch: header says {}+{}, found {}+{}",
                header.entries,
                header.failures,
                out.entries.len(),
                out.failures.len()
            )));
        }
        Ok(out)
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("jsonl is utf8")
    }

    pub fn save(&self, path: &Path) -> Result<(), SpectrumError> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<SpectrumTable, SpectrumError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Length, Lyapunov exponent, and solve residual of one word, at full
/// working precision.
#[derive(Clone, Debug)]
pub struct SpectrumValues {
    pub length: Hp,
    pub lyapunov: Hp,
    pub residual: f64,
}

/// What the inverse pipeline is allowed to see: spectrum values by word,
/// nothing geometric.
pub trait SpectrumSource: Sync {
    fn lookup(&self, word: &AdmissibleWord) -> Option<SpectrumValues>;
    fn precision(&self) -> u32;
}

impl SpectrumSource for SpectrumTable {
    fn lookup(&self, word: &AdmissibleWord) -> Option<SpectrumValues> {
        let entry = self.entries.get(&word.canonical_key())?;
        Some(SpectrumValues {
            length: entry.length_hp(),
            lyapunov: entry.lyapunov_hp(),
            residual: entry.residual,
        })
    }

    fn precision(&self) -> u32 {
        self.precision
    }
}

/// Spectrum source that solves orbits on demand and memoizes them, for
/// pipelines that do not know their word list up front.
pub struct LiveSpectrum<'a> {
    table: &'a Table,
    precision: u32,
    cache: RwLock<HashMap<String, Option<SpectrumValues>>>,
}

impl<'a> LiveSpectrum<'a> {
    pub fn new(table: &'a Table, precision: u32) -> Self {
        LiveSpectrum {
            table,
            precision,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Snapshot of everything solved so far, as a persistable table.
    pub fn snapshot(&self) -> SpectrumTable {
        let cache = self.cache.read().expect("cache lock");
        let mut out = SpectrumTable {
            table_hash: self.table.hash.clone(),
            precision: self.precision,
            entries: BTreeMap::new(),
            failures: BTreeMap::new(),
        };
        for (key, values) in cache.iter() {
            if let Some(v) = values {
                out.entries.insert(
                    key.clone(),
                    SpectrumEntry {
                        length: v.length.to_decimal(),
                        lyapunov: v.lyapunov.to_decimal(),
                        residual: v.residual,
                        precision: self.precision,
                    },
                );
            } else {
                out.failures.insert(key.clone(), "solver failure".into());
            }
        }
        out
    }
}

impl SpectrumSource for LiveSpectrum<'_> {
    fn lookup(&self, word: &AdmissibleWord) -> Option<SpectrumValues> {
        let key = word.canonical_key();
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let values = solve_orbit(self.table, word, self.precision)
            .ok()
            .map(|orbit| SpectrumValues {
                length: orbit.length,
                lyapunov: orbit.lyapunov,
                residual: orbit.residual,
            });
        self.cache
            .write()
            .expect("cache lock")
            .insert(key, values.clone());
        values
    }

    fn precision(&self) -> u32 {
        self.precision
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::enumerate_admissible;
    use crate::geometry::{equilateral_table, CurveSpec};

    const PREC: u32 = 256;

    fn word(text: &str) -> AdmissibleWord {
        AdmissibleWord::parse(text, 3).unwrap()
    }

    #[test]
    fn symmetric_words_have_equal_lengths() {
        let table = equilateral_table(6.0);
        let words = [word("12"), word("13"), word("23")];
        let spectrum = SpectrumTable::build(&table, &words, PREC);
        assert_eq!(spectrum.entries.len(), 3);
        assert!(spectrum.failures.is_empty());
        let lengths: Vec<Hp> = words.iter().map(|w| spectrum.get(w).unwrap().length_hp()).collect();
        for l in &lengths[1..] {
            assert!(
                (l - &lengths[0]).abs().to_f64() < 1e-25,
                "threefold symmetry forces equal lengths"
            );
        }
    }

    #[test]
    fn reversal_gives_distinct_key_and_equal_length() {
        // "12123" reversed is "32121", whose least rotation "12132" is not a
        // rotation of "12123": an oriented pair of the same geometric orbit.
        let table = equilateral_table(6.0);
        let sigma = word("12123");
        let sigma_rev = sigma.transpose();
        assert_ne!(sigma.canonical_key(), sigma_rev.canonical_key());
        let spectrum = SpectrumTable::build(&table, &[sigma.clone(), sigma_rev.clone()], PREC);
        assert_eq!(spectrum.entries.len(), 2);
        let a = spectrum.get(&sigma).unwrap();
        let b = spectrum.get(&sigma_rev).unwrap();
        let tol = 10.0 * a.residual.max(b.residual);
        assert!((a.length_hp() - b.length_hp()).abs().to_f64() <= tol);
        assert!((a.lyapunov_hp() - b.lyapunov_hp()).abs().to_f64() <= tol);
    }

    #[test]
    fn rotations_collapse_to_one_entry() {
        let table = equilateral_table(6.0);
        let words = [word("123"), word("231"), word("312")];
        let spectrum = SpectrumTable::build(&table, &words, PREC);
        assert_eq!(spectrum.entries.len(), 1);
    }

    #[test]
    fn empty_word_list_gives_empty_table() {
        let table = equilateral_table(6.0);
        let spectrum = SpectrumTable::build(&table, &[], PREC);
        assert!(spectrum.entries.is_empty());
        assert!(spectrum.failures.is_empty());
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let table = equilateral_table(6.0);
        let words = enumerate_admissible(3, 3);
        let spectrum = SpectrumTable::build(&table, &words, PREC);
        let text = spectrum.to_jsonl_string();
        let back = SpectrumTable::read_jsonl(std::io::Cursor::new(text.as_bytes())).unwrap();
        assert_eq!(back.table_hash, spectrum.table_hash);
        assert_eq!(back.precision, spectrum.precision);
        assert_eq!(back.entries, spectrum.entries);
        // Decimal strings reparse to the same bits.
        for (key, entry) in &spectrum.entries {
            let reparsed = back.entries[key].length_hp();
            assert!((reparsed - entry.length_hp()).is_zero());
        }
        // Serialization is deterministic.
        assert_eq!(text, back.to_jsonl_string());
    }

    #[test]
    fn solver_failures_are_recorded_not_fatal() {
        // Third circle centered between the others: "13" is occluded.
        let table = Table::new(
            vec![
                ("1".into(), CurveSpec::circle([0.0, 0.0], 1.0)),
                ("2".into(), CurveSpec::circle([4.0, 0.2], 1.0)),
                ("3".into(), CurveSpec::circle([8.0, 0.0], 1.0)),
            ],
            crate::geometry::DEFAULT_NON_ECLIPSE_MARGIN,
        )
        .unwrap();
        let spectrum = SpectrumTable::build(&table, &[word("12"), word("13")], PREC);
        assert_eq!(spectrum.entries.len(), 1);
        assert_eq!(spectrum.failures.len(), 1);
        assert!(spectrum.failures.contains_key("13"));
        // Failures survive the round trip.
        let back =
            SpectrumTable::read_jsonl(std::io::Cursor::new(spectrum.to_jsonl_string())).unwrap();
        assert_eq!(back.failures, spectrum.failures);
    }

    #[test]
    fn query_rejects_inadmissible_words() {
        let table = equilateral_table(6.0);
        let spectrum = SpectrumTable::build(&table, &[word("12")], PREC);
        match spectrum.query("11", 3) {
            Err(SpectrumError::Word(_)) => {}
            other => panic!("expected admissibility rejection, got {other:?}"),
        }
        match spectrum.query("13", 3) {
            Err(SpectrumError::NotFound(_)) => {}
            other => panic!("expected lookup miss, got {other:?}"),
        }
    }

    #[test]
    fn live_source_matches_batch_build() {
        let table = equilateral_table(6.0);
        let live = LiveSpectrum::new(&table, PREC);
        let batch = SpectrumTable::build(&table, &[word("123")], PREC);
        let from_live = live.lookup(&word("123")).unwrap();
        let from_batch = batch.lookup(&word("123")).unwrap();
        assert!((from_live.length - from_batch.length).is_zero());
        assert!((from_live.lyapunov - from_batch.lyapunov).is_zero());
        let snap = live.snapshot();
        assert_eq!(snap.entries.len(), 1);
    }
}
