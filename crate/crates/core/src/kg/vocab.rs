use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;

/// An ordered, duplicate-free list of names with reverse lookup.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn from_names(names: Vec<String>, class: &'static str) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(DataError::DuplicateName { class, name: name.clone() });
            }
        }
        Ok(Self { names, index })
    }

    /// Returns the index of `name`, inserting it at the end if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl PartialEq for Interner {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

impl Eq for Interner {}

/// Bidirectional name/index maps for entities, predicates and timestamps.
///
/// Timestamp index order is temporal order: index `i` is earlier than `i + 1`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    entities: Interner,
    predicates: Interner,
    timestamps: Interner,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    entities: Vec<String>,
    predicates: Vec<String>,
    timestamps: Vec<String>,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = DataError;

    fn try_from(file: VocabularyFile) -> Result<Self, DataError> {
        Vocabulary::new(file.entities, file.predicates, file.timestamps)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile { entities: v.entities.names, predicates: v.predicates.names, timestamps: v.timestamps.names }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from ordered name lists; timestamps must already be in temporal order.
    pub fn new(entities: Vec<String>, predicates: Vec<String>, timestamps: Vec<String>) -> Result<Self, DataError> {
        Ok(Self {
            entities: Interner::from_names(entities, "entity")?,
            predicates: Interner::from_names(predicates, "predicate")?,
            timestamps: Interner::from_names(timestamps, "timestamp")?,
        })
    }

    /// Anonymous vocabulary `e0.., p0.., t0..` of the given sizes.
    pub fn with_counts(n_entities: usize, n_predicates: usize, n_timestamps: usize) -> Self {
        let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        Self::new(names("e", n_entities), names("p", n_predicates), names("t", n_timestamps))
            .expect("generated names are unique")
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn predicates(&self) -> &Interner {
        &self.predicates
    }

    pub fn timestamps(&self) -> &Interner {
        &self.timestamps
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn n_timestamps(&self) -> usize {
        self.timestamps.len()
    }

    /// Index of the last timestamp, `None` for an empty timeline.
    pub fn last_timestamp(&self) -> Option<usize> {
        self.n_timestamps().checked_sub(1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DataError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Hex SHA-256 of the canonical (compact) JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&compact))
    }
}
