//! Scoring functions for semantic and episodic embedding models.
//!
//! Every model maps a fact to a real logit `θ`; the fact probability is
//! `σ(θ)`. Parameters live in a flat list of [`Table`]s, each a stack of
//! equally shaped rows (one row per entity, predicate or timestamp, or a
//! single row for a shared core tensor). Gradients are sparse over rows.

mod correlation;
mod gradient;
mod kernels;

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::Vocabulary;

pub use correlation::{circular_correlation, circular_correlation_direct, circular_correlation_fft, FFT_THRESHOLD};
pub(crate) use correlation::{convolve, correlate};
pub use gradient::ParamGradient;
pub(crate) use kernels::TimeOperand;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("vector lengths differ or are zero ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0} has no {1} variant")]
    InvalidKind(Family, Memory),
    #[error("unknown model name {0:?}")]
    UnknownModel(String),
    #[error("{kind} scores {expected} facts")]
    ArityMismatch { kind: ModelKind, expected: &'static str },
    #[error("fact index out of range: {0:?}")]
    IndexOutOfRange([usize; 4]),
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("{0} requires equal entity and time ranks")]
    RankMismatch(ModelKind),
    #[error("table {0:?} is missing")]
    MissingTable(Role),
    #[error("table {role:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { role: Role, expected: (usize, Vec<usize>), found: (usize, Vec<usize>) },
    #[error("{0} cannot be written as a_t · f(s, p, o)")]
    NotProjectable(ModelKind),
}

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    DistMult,
    HolE,
    ComplEx,
    Tucker,
    Tree,
    ConT,
    Rescal,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::DistMult => "distmult",
            Family::HolE => "hole",
            Family::ComplEx => "complex",
            Family::Tucker => "tucker",
            Family::Tree => "tree",
            Family::ConT => "cont",
            Family::Rescal => "rescal",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether a model scores triples (semantic) or quadruples (episodic).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Memory {
    Semantic,
    Episodic,
}

impl fmt::Display for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Memory::Semantic => "semantic",
            Memory::Episodic => "episodic",
        })
    }
}

/// A valid (family, memory) pair. RESCAL is semantic-only; Tree and ConT are episodic-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelKind {
    family: Family,
    memory: Memory,
}

impl ModelKind {
    pub const ALL: [ModelKind; 11] = [
        ModelKind { family: Family::DistMult, memory: Memory::Episodic },
        ModelKind { family: Family::HolE, memory: Memory::Episodic },
        ModelKind { family: Family::ComplEx, memory: Memory::Episodic },
        ModelKind { family: Family::Tucker, memory: Memory::Episodic },
        ModelKind { family: Family::Tree, memory: Memory::Episodic },
        ModelKind { family: Family::ConT, memory: Memory::Episodic },
        ModelKind { family: Family::DistMult, memory: Memory::Semantic },
        ModelKind { family: Family::HolE, memory: Memory::Semantic },
        ModelKind { family: Family::ComplEx, memory: Memory::Semantic },
        ModelKind { family: Family::Tucker, memory: Memory::Semantic },
        ModelKind { family: Family::Rescal, memory: Memory::Semantic },
    ];

    pub fn new(family: Family, memory: Memory) -> Result<Self, ModelError> {
        let valid = match family {
            Family::Rescal => memory == Memory::Semantic,
            Family::Tree | Family::ConT => memory == Memory::Episodic,
            _ => true,
        };
        if valid {
            Ok(Self { family, memory })
        } else {
            Err(ModelError::InvalidKind(family, memory))
        }
    }

    pub fn episodic(family: Family) -> Result<Self, ModelError> {
        Self::new(family, Memory::Episodic)
    }

    pub fn semantic(family: Family) -> Result<Self, ModelError> {
        Self::new(family, Memory::Semantic)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn memory(&self) -> Memory {
        self.memory
    }

    pub fn is_episodic(&self) -> bool {
        self.memory == Memory::Episodic
    }

    /// Episodic models whose score is linear in a single time vector/core.
    pub fn admits_projection(&self) -> bool {
        self.is_episodic() && self.family != Family::Tree
    }

    /// Semantic model compared against this one in projection reports.
    pub fn semantic_counterpart(&self) -> ModelKind {
        match self.family {
            Family::ConT | Family::Tree => ModelKind { family: Family::Rescal, memory: Memory::Semantic },
            family => ModelKind { family, memory: Memory::Semantic },
        }
    }

    /// Families whose time rank must equal the entity rank.
    fn ties_ranks(&self) -> bool {
        self.is_episodic() && matches!(self.family, Family::DistMult | Family::HolE | Family::ComplEx)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = match self.memory {
            Memory::Semantic => "sem",
            Memory::Episodic => "epi",
        };
        write!(f, "{}-{suffix}", self.family)
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    /// Accepts `distmult-epi`, `hole-sem`, `complex-episodic`, ..., and bare
    /// `tree`, `cont`, `rescal`.
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let lower = s.to_ascii_lowercase();
        let (family, memory) = match lower.split_once('-') {
            Some((f, m)) => (f.to_owned(), Some(m.to_owned())),
            None => (lower.clone(), None),
        };
        let family = match family.as_str() {
            "distmult" => Family::DistMult,
            "hole" => Family::HolE,
            "complex" => Family::ComplEx,
            "tucker" => Family::Tucker,
            "tree" => Family::Tree,
            "cont" => Family::ConT,
            "rescal" => Family::Rescal,
            _ => return Err(ModelError::UnknownModel(s.to_owned())),
        };
        let memory = match memory.as_deref() {
            Some("epi" | "episodic") => Memory::Episodic,
            Some("sem" | "semantic") => Memory::Semantic,
            Some(_) => return Err(ModelError::UnknownModel(s.to_owned())),
            None => match family {
                Family::Rescal => Memory::Semantic,
                Family::Tree | Family::ConT => Memory::Episodic,
                _ => return Err(ModelError::UnknownModel(s.to_owned())),
            },
        };
        ModelKind::new(family, memory)
    }
}

impl TryFrom<String> for ModelKind {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, ModelError> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.to_string()
    }
}

/// Embedding dimensions: `entity` for entities and predicates, `time` for timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rank {
    pub entity: usize,
    pub time: usize,
}

impl Rank {
    pub fn new(entity: usize, time: usize) -> Result<Self, ModelError> {
        if entity == 0 || time == 0 {
            return Err(ModelError::ZeroRank);
        }
        Ok(Self { entity, time })
    }

    pub fn uniform(rank: usize) -> Result<Self, ModelError> {
        Self::new(rank, rank)
    }
}

/// Vocabulary sizes a model is allocated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counts {
    pub entities: usize,
    pub predicates: usize,
    pub timestamps: usize,
}

impl Counts {
    pub fn new(entities: usize, predicates: usize, timestamps: usize) -> Self {
        Self { entities, predicates, timestamps }
    }

    pub fn of(vocab: &Vocabulary) -> Self {
        Self::new(vocab.n_entities(), vocab.n_predicates(), vocab.n_timestamps())
    }
}

/// What a parameter table holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Entity vectors (real part for ComplEx).
    Entity,
    EntityIm,
    /// Predicate vectors (real part for ComplEx).
    Predicate,
    PredicateIm,
    /// Start-time vectors (real part for ComplEx).
    Time,
    TimeIm,
    /// DistMult's diagonal core λ.
    Diagonal,
    /// Shared Tucker core, `r_t × r × r × r` (episodic) or `r × r × r` (semantic).
    Core,
    /// Tree cores `G_1: r_t × r × r` and `G_2: r × r × r_t`.
    TreeCore1,
    TreeCore2,
    /// Per-predicate `r × r` matrices (RESCAL, Tree).
    PredicateCore,
    /// Per-timestamp `r × r × r` cores (ConT).
    TimeCore,
    /// End-time tables trained on ε_end for the projection.
    EndTime,
    EndTimeIm,
    EndTimeCore,
}

impl Role {
    pub const ALL: [Role; 15] = [
        Role::Entity,
        Role::EntityIm,
        Role::Predicate,
        Role::PredicateIm,
        Role::Time,
        Role::TimeIm,
        Role::Diagonal,
        Role::Core,
        Role::TreeCore1,
        Role::TreeCore2,
        Role::PredicateCore,
        Role::TimeCore,
        Role::EndTime,
        Role::EndTimeIm,
        Role::EndTimeCore,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn is_end_time(self) -> bool {
        matches!(self, Role::EndTime | Role::EndTimeIm | Role::EndTimeCore)
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Entity => "entity",
            Role::EntityIm => "entity_im",
            Role::Predicate => "predicate",
            Role::PredicateIm => "predicate_im",
            Role::Time => "time",
            Role::TimeIm => "time_im",
            Role::Diagonal => "diagonal",
            Role::Core => "core",
            Role::TreeCore1 => "tree_core1",
            Role::TreeCore2 => "tree_core2",
            Role::PredicateCore => "predicate_core",
            Role::TimeCore => "time_core",
            Role::EndTime => "end_time",
            Role::EndTimeIm => "end_time_im",
            Role::EndTimeCore => "end_time_core",
        }
    }

    pub fn from_name(name: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.name() == name)
    }

    /// Row tables of vectors (Xavier fans from `rows × dim`).
    fn is_embedding(self) -> bool {
        matches!(
            self,
            Role::Entity
                | Role::EntityIm
                | Role::Predicate
                | Role::PredicateIm
                | Role::Time
                | Role::TimeIm
                | Role::EndTime
                | Role::EndTimeIm
        )
    }
}

/// Which time table scores a quadruple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeSide {
    Start,
    End,
}

/// A stack of `rows` equally shaped tensors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub role: Role,
    pub rows: usize,
    pub row_shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Table {
    pub fn zeros(role: Role, rows: usize, row_shape: Vec<usize>) -> Self {
        let len = rows * row_shape.iter().product::<usize>();
        Self { role, rows, row_shape, data: vec![0.0; len] }
    }

    pub fn row_len(&self) -> usize {
        self.row_shape.iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// `(fan_in, fan_out)` used for Xavier initialization.
    ///
    /// Vector tables use `(rows, dim)`, the diagonal `(dim, 1)`; core tensors
    /// (shared, or one per predicate/timestamp) use the product of the leading
    /// row dimensions and the trailing one.
    pub fn fans(&self) -> (usize, usize) {
        if self.role.is_embedding() {
            (self.rows, self.row_len())
        } else if self.role == Role::Diagonal {
            (self.row_len(), 1)
        } else {
            let (last, lead) = self.row_shape.split_last().expect("cores have a shape");
            (lead.iter().product(), *last)
        }
    }

    pub fn xavier_bound(&self) -> f64 {
        let (fan_in, fan_out) = self.fans();
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

type Layout = Vec<(Role, usize, Vec<usize>)>;

fn base_layout(kind: ModelKind, c: Counts, rank: Rank) -> Layout {
    let (d, dt) = (rank.entity, rank.time);
    let epi = kind.is_episodic();
    let mut l: Layout = Vec::new();
    match kind.family {
        Family::DistMult | Family::HolE => {
            l.push((Role::Entity, c.entities, vec![d]));
            l.push((Role::Predicate, c.predicates, vec![d]));
            if epi {
                l.push((Role::Time, c.timestamps, vec![d]));
            }
            if kind.family == Family::DistMult {
                l.push((Role::Diagonal, 1, vec![d]));
            }
        }
        Family::ComplEx => {
            l.push((Role::Entity, c.entities, vec![d]));
            l.push((Role::EntityIm, c.entities, vec![d]));
            l.push((Role::Predicate, c.predicates, vec![d]));
            l.push((Role::PredicateIm, c.predicates, vec![d]));
            if epi {
                l.push((Role::Time, c.timestamps, vec![d]));
                l.push((Role::TimeIm, c.timestamps, vec![d]));
            }
        }
        Family::Tucker => {
            l.push((Role::Entity, c.entities, vec![d]));
            l.push((Role::Predicate, c.predicates, vec![d]));
            if epi {
                l.push((Role::Time, c.timestamps, vec![dt]));
                l.push((Role::Core, 1, vec![dt, d, d, d]));
            } else {
                l.push((Role::Core, 1, vec![d, d, d]));
            }
        }
        Family::Tree => {
            l.push((Role::Entity, c.entities, vec![d]));
            l.push((Role::PredicateCore, c.predicates, vec![d, d]));
            l.push((Role::Time, c.timestamps, vec![dt]));
            l.push((Role::TreeCore1, 1, vec![dt, d, d]));
            l.push((Role::TreeCore2, 1, vec![d, d, dt]));
        }
        Family::ConT => {
            l.push((Role::Entity, c.entities, vec![d]));
            l.push((Role::Predicate, c.predicates, vec![d]));
            l.push((Role::TimeCore, c.timestamps, vec![d, d, d]));
        }
        Family::Rescal => {
            l.push((Role::Entity, c.entities, vec![d]));
            l.push((Role::PredicateCore, c.predicates, vec![d, d]));
        }
    }
    l
}

fn end_layout(kind: ModelKind, c: Counts, rank: Rank) -> Result<Layout, ModelError> {
    if !kind.admits_projection() {
        return Err(ModelError::NotProjectable(kind));
    }
    let d = rank.entity;
    Ok(match kind.family {
        Family::ConT => vec![(Role::EndTimeCore, c.timestamps, vec![d, d, d])],
        Family::ComplEx => vec![(Role::EndTime, c.timestamps, vec![d]), (Role::EndTimeIm, c.timestamps, vec![d])],
        Family::Tucker => vec![(Role::EndTime, c.timestamps, vec![rank.time])],
        _ => vec![(Role::EndTime, c.timestamps, vec![d])],
    })
}

/// Number of parameters of `kind`, by closed-form formula.
///
/// Episodic HolE counts its time embeddings, `(N_e + N_p + N_t)·r`.
pub fn param_count(kind: ModelKind, counts: Counts, rank: Rank) -> Result<usize, ModelError> {
    check_rank(kind, rank)?;
    let Counts { entities: ne, predicates: np, timestamps: nt } = counts;
    let (d, dt) = (rank.entity, rank.time);
    let epi = kind.is_episodic();
    Ok(match kind.family {
        Family::DistMult if epi => (ne + np + nt + 1) * d,
        Family::DistMult => (ne + np + 1) * d,
        Family::HolE if epi => (ne + np + nt) * d,
        Family::HolE => (ne + np) * d,
        Family::ComplEx if epi => 2 * (ne + np + nt) * d,
        Family::ComplEx => 2 * (ne + np) * d,
        Family::Tucker if epi => (ne + np) * d + (nt + d * d * d) * dt,
        Family::Tucker => (ne + np) * d + d * d * d,
        Family::Tree => ne * d + np * d * d + (nt + 2 * d * d) * dt,
        Family::ConT => (ne + np) * d + nt * d * d * d,
        Family::Rescal => ne * d + np * d * d,
    })
}

fn check_rank(kind: ModelKind, rank: Rank) -> Result<(), ModelError> {
    if rank.entity == 0 || rank.time == 0 {
        return Err(ModelError::ZeroRank);
    }
    if kind.ties_ranks() && rank.entity != rank.time {
        return Err(ModelError::RankMismatch(kind));
    }
    Ok(())
}

/// All parameters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    kind: ModelKind,
    rank: Rank,
    counts: Counts,
    tables: Vec<Table>,
    lookup: [Option<usize>; Role::ALL.len()],
}

fn fill_xavier(table: &mut Table, rng: &mut ChaCha8Rng) {
    let b = table.xavier_bound();
    let dist = Uniform::new_inclusive(-b, b).expect("finite bound");
    table.data.iter_mut().for_each(|x| *x = dist.sample(rng));
}

impl ModelParams {
    /// Xavier-uniform initialization, deterministic per seed.
    pub fn init(kind: ModelKind, counts: Counts, rank: Rank, seed: u64) -> Result<Self, ModelError> {
        check_rank(kind, rank)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = base_layout(kind, counts, rank)
            .into_iter()
            .map(|(role, rows, shape)| {
                let mut t = Table::zeros(role, rows, shape);
                fill_xavier(&mut t, &mut rng);
                t
            })
            .collect();
        Ok(Self::assemble(kind, rank, counts, tables))
    }

    /// All-zero parameters with the layout of `kind`.
    pub fn zeros(kind: ModelKind, counts: Counts, rank: Rank) -> Result<Self, ModelError> {
        check_rank(kind, rank)?;
        let tables = base_layout(kind, counts, rank)
            .into_iter()
            .map(|(role, rows, shape)| Table::zeros(role, rows, shape))
            .collect();
        Ok(Self::assemble(kind, rank, counts, tables))
    }

    fn assemble(kind: ModelKind, rank: Rank, counts: Counts, tables: Vec<Table>) -> Self {
        let mut lookup = [None; Role::ALL.len()];
        for (i, t) in tables.iter().enumerate() {
            lookup[t.role.slot()] = Some(i);
        }
        Self { kind, rank, counts, tables, lookup }
    }

    /// Rebuilds parameters from stored tables, checking them against the layout.
    pub fn from_tables(kind: ModelKind, rank: Rank, counts: Counts, tables: Vec<Table>) -> Result<Self, ModelError> {
        check_rank(kind, rank)?;
        let mut expected = base_layout(kind, counts, rank);
        if tables.iter().any(|t| t.role.is_end_time()) {
            expected.extend(end_layout(kind, counts, rank)?);
        }
        for (role, rows, shape) in &expected {
            let t = tables.iter().find(|t| t.role == *role).ok_or(ModelError::MissingTable(*role))?;
            if t.rows != *rows || &t.row_shape != shape || t.data.len() != rows * t.row_len() {
                return Err(ModelError::ShapeMismatch {
                    role: *role,
                    expected: (*rows, shape.clone()),
                    found: (t.rows, t.row_shape.clone()),
                });
            }
        }
        if tables.len() != expected.len() {
            let extra = tables.iter().find(|t| !expected.iter().any(|e| e.0 == t.role)).unwrap();
            return Err(ModelError::ShapeMismatch {
                role: extra.role,
                expected: (0, vec![]),
                found: (extra.rows, extra.row_shape.clone()),
            });
        }
        Ok(Self::assemble(kind, rank, counts, tables))
    }

    /// Adds Xavier-initialized end-time tables (projection stage 2).
    pub fn add_end_tables(&mut self, seed: u64) -> Result<(), ModelError> {
        let layout = end_layout(self.kind, self.counts, self.rank)?;
        if self.has_end_tables() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (role, rows, shape) in layout {
            let mut t = Table::zeros(role, rows, shape);
            fill_xavier(&mut t, &mut rng);
            self.lookup[role.slot()] = Some(self.tables.len());
            self.tables.push(t);
        }
        Ok(())
    }

    pub fn has_end_tables(&self) -> bool {
        self.tables.iter().any(|t| t.role.is_end_time())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    #[cfg(test)]
    pub(crate) fn tables_mut(&mut self) -> &mut [Table] {
        &mut self.tables
    }

    pub fn table(&self, role: Role) -> Option<&Table> {
        self.lookup[role.slot()].map(|i| &self.tables[i])
    }

    pub fn table_mut(&mut self, role: Role) -> Option<&mut Table> {
        self.lookup[role.slot()].map(|i| &mut self.tables[i])
    }

    /// Row `i` of a table that the layout guarantees to exist.
    pub(crate) fn row(&self, role: Role, i: usize) -> &[f64] {
        self.table(role).unwrap_or_else(|| panic!("{} has no {role:?} table", self.kind)).row(i)
    }

    /// Total number of stored values, end-time tables included.
    pub fn allocated_len(&self) -> usize {
        self.tables.iter().map(|t| t.data.len()).sum()
    }

    /// Stored values excluding end-time tables; equals [`param_count`].
    pub fn base_len(&self) -> usize {
        self.tables.iter().filter(|t| !t.role.is_end_time()).map(|t| t.data.len()).sum()
    }

    /// `‖P‖²` over every table.
    pub fn squared_norm(&self) -> f64 {
        self.tables.iter().flat_map(|t| &t.data).map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().flat_map(|t| &t.data).all(|x| x.is_finite())
    }
}
