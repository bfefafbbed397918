//! Tab-separated fact files.
//!
//! Quadruples: `subject<TAB>predicate<TAB>object<TAB>timestamp[<TAB>0|1]`.
//! Triples: `subject<TAB>predicate<TAB>object[<TAB>0|1]`.
//! Lines starting with `#` and blank lines are ignored; a missing value means true.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};

use super::vocab::Interner;
use super::{DataError, Dataset, EpisodicDataset, Quadruple, SemanticDataset, Triple, Vocabulary};

/// Maps a raw timestamp string to a sortable key. Equal keys denote the same timestamp.
pub trait TimestampParser: Send + Sync {
    fn parse(&self, raw: &str) -> Option<i64>;
}

/// Calendar dates in ISO-8601 (`2014-12-25`) or US (`12/25/2014`) form.
#[derive(Debug, Clone, Copy, Default)]
pub struct DateParser;

impl TimestampParser for DateParser {
    fn parse(&self, raw: &str) -> Option<i64> {
        NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .or_else(|_| NaiveDate::parse_from_str(raw, "%m/%d/%Y"))
            .ok()
            .map(|d| i64::from(d.num_days_from_ce()))
    }
}

/// Plain integers (`0`, `1`, ...), for already-discretized timelines.
#[derive(Debug, Clone, Copy, Default)]
pub struct OrdinalParser;

impl TimestampParser for OrdinalParser {
    fn parse(&self, raw: &str) -> Option<i64> {
        raw.parse().ok()
    }
}

pub struct LoadOptions {
    pub timestamps: Box<dyn TimestampParser>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { timestamps: Box::new(DateParser) }
    }
}

struct Record<'a> {
    line: usize,
    fields: Vec<&'a str>,
    value: bool,
}

fn parse_value(line: usize, raw: &str) -> Result<bool, DataError> {
    match raw {
        "1" => Ok(true),
        "0" => Ok(false),
        _ => Err(DataError::BadValue { line, value: raw.to_owned() }),
    }
}

/// Splits `text` into records of `arity` fields plus an optional value column.
fn records<'a>(
    text: &'a str,
    arity: usize,
    expected: &'static str,
) -> impl Iterator<Item = Result<Record<'a>, DataError>> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('#') {
            return None;
        }
        let mut fields: Vec<&str> = raw.split('\t').collect();
        let value = match fields.len() {
            n if n == arity => Ok(true),
            n if n == arity + 1 => parse_value(line, fields.pop().unwrap().trim()),
            found => Err(DataError::FieldCount { line, expected, found }),
        };
        Some(value.map(|value| Record { line, fields, value }))
    })
}

fn read_to_string(mut reader: impl Read) -> Result<String, DataError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    Ok(text)
}

/// Reads a quadruple file, building the vocabulary from its contents.
///
/// Entities and predicates are indexed in order of first appearance;
/// timestamps are sorted by their parsed key.
pub fn load_quadruples(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<EpisodicDataset, DataError> {
    parse_quadruples(File::open(path)?, opts)
}

pub fn parse_quadruples(reader: impl Read, opts: &LoadOptions) -> Result<EpisodicDataset, DataError> {
    let text = read_to_string(reader)?;
    let mut entities = Interner::default();
    let mut predicates = Interner::default();
    // key -> first label seen for it
    let mut times: BTreeMap<i64, String> = BTreeMap::new();
    let mut raw = Vec::new();

    for record in records(&text, 4, "4 or 5") {
        let Record { line, fields, value } = record?;
        let s = entities.intern(fields[0]);
        let p = predicates.intern(fields[1]);
        let o = entities.intern(fields[2]);
        let key = opts
            .timestamps
            .parse(fields[3].trim())
            .ok_or_else(|| DataError::BadTimestamp { line, value: fields[3].to_owned() })?;
        times.entry(key).or_insert_with(|| fields[3].to_owned());
        raw.push((line, key, s, p, o, value));
    }

    let time_index: HashMap<i64, usize> = times.keys().enumerate().map(|(i, &k)| (k, i)).collect();
    let labels = times.into_values().collect();
    let vocab = Vocabulary::new(entities.names().to_vec(), predicates.names().to_vec(), labels)?;

    let facts =
        raw.into_iter().map(|(line, key, s, p, o, value)| (line, Quadruple { t: time_index[&key], s, p, o, value }));
    let quadruples = dedup_with_lines(facts, |q| [q.t, q.s, q.p, q.o], |q| q.value)?;
    EpisodicDataset::new(Arc::new(vocab), quadruples)
}

/// Reads a quadruple file against a fixed vocabulary (prepared splits).
pub fn load_quadruples_with_vocab(
    path: impl AsRef<Path>,
    vocab: Arc<Vocabulary>,
) -> Result<EpisodicDataset, DataError> {
    parse_quadruples_with_vocab(File::open(path)?, vocab)
}

fn lookup(interner: &Interner, class: &'static str, line: usize, name: &str) -> Result<usize, DataError> {
    interner.index_of(name).ok_or_else(|| DataError::UnknownName { line, class, name: name.to_owned() })
}

pub fn parse_quadruples_with_vocab(reader: impl Read, vocab: Arc<Vocabulary>) -> Result<EpisodicDataset, DataError> {
    let text = read_to_string(reader)?;
    let mut facts = Vec::new();
    for record in records(&text, 4, "4 or 5") {
        let Record { line, fields, value } = record?;
        let q = Quadruple {
            s: lookup(vocab.entities(), "entity", line, fields[0])?,
            p: lookup(vocab.predicates(), "predicate", line, fields[1])?,
            o: lookup(vocab.entities(), "entity", line, fields[2])?,
            t: lookup(vocab.timestamps(), "timestamp", line, fields[3])?,
            value,
        };
        facts.push((line, q));
    }
    let quadruples = dedup_with_lines(facts, |q| [q.t, q.s, q.p, q.o], |q| q.value)?;
    EpisodicDataset::new(vocab, quadruples)
}

pub fn load_triples_with_vocab(path: impl AsRef<Path>, vocab: Arc<Vocabulary>) -> Result<SemanticDataset, DataError> {
    parse_triples_with_vocab(File::open(path)?, vocab)
}

pub fn parse_triples_with_vocab(reader: impl Read, vocab: Arc<Vocabulary>) -> Result<SemanticDataset, DataError> {
    let text = read_to_string(reader)?;
    let mut facts = Vec::new();
    for record in records(&text, 3, "3 or 4") {
        let Record { line, fields, value } = record?;
        let t = Triple {
            s: lookup(vocab.entities(), "entity", line, fields[0])?,
            p: lookup(vocab.predicates(), "predicate", line, fields[1])?,
            o: lookup(vocab.entities(), "entity", line, fields[2])?,
            value,
        };
        facts.push((line, t));
    }
    let triples = dedup_with_lines(facts, |t| [0, t.s, t.p, t.o], |t| t.value)?;
    SemanticDataset::new(vocab, triples)
}

/// Drops repeated facts, reporting contradictions with both line numbers.
fn dedup_with_lines<F: Copy>(
    facts: impl IntoIterator<Item = (usize, F)>,
    key: impl Fn(&F) -> [usize; 4],
    value: impl Fn(&F) -> bool,
) -> Result<Vec<F>, DataError> {
    let mut seen: HashMap<[usize; 4], (bool, usize)> = HashMap::new();
    let mut out = Vec::new();
    for (line, fact) in facts {
        match seen.get(&key(&fact)) {
            None => {
                seen.insert(key(&fact), (value(&fact), line));
                out.push(fact);
            }
            Some(&(v, _)) if v == value(&fact) => {}
            Some(&(_, first_line)) => return Err(DataError::Contradiction { line, first_line }),
        }
    }
    Ok(out)
}

pub fn write_quadruples(mut w: impl Write, ds: &EpisodicDataset) -> Result<(), DataError> {
    let v = ds.vocab();
    for q in ds.facts() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            v.entities().name_of(q.s).unwrap(),
            v.predicates().name_of(q.p).unwrap(),
            v.entities().name_of(q.o).unwrap(),
            v.timestamps().name_of(q.t).unwrap(),
            u8::from(q.value)
        )?;
    }
    Ok(())
}

pub fn write_triples(mut w: impl Write, ds: &SemanticDataset) -> Result<(), DataError> {
    let v = ds.vocab();
    for t in ds.facts() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            v.entities().name_of(t.s).unwrap(),
            v.predicates().name_of(t.p).unwrap(),
            v.entities().name_of(t.o).unwrap(),
            u8::from(t.value)
        )?;
    }
    Ok(())
}
