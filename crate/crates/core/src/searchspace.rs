//! The categorical RAG search space, configuration identity and enumeration.
//!
//! Configurations have a canonical dense ordinal: a mixed-radix number whose
//! digits are the value indices of the five parameters in the order
//! `chunk_size, chunk_overlap, embedding_model, top_k, generative_model`
//! (slowest to fastest).

use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("parameter `{0}` has an empty value list")]
    EmptyValues(ParamName),
    #[error("parameter `{param}` lists value `{value}` more than once")]
    DuplicateValue { param: ParamName, value: String },
    #[error("chunk_overlap {0} outside [0, 1)")]
    OverlapOutOfRange(f64),
    #[error("{param} must be at least 1, got {value}")]
    NonPositive { param: ParamName, value: u32 },
    #[error("ordinal {ordinal} out of range for a space of {size} configurations")]
    OrdinalOutOfRange { ordinal: usize, size: usize },
    #[error("value `{value}` is not a member of `{param}`")]
    NotAMember { param: ParamName, value: String },
    #[error("unknown parameter name `{0}`")]
    UnknownParam(String),
    #[error("invalid search space file {path}: {message}")]
    File { path: String, message: String },
}

/// One of the five pipeline hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    ChunkSize,
    ChunkOverlap,
    EmbeddingModel,
    TopK,
    GenerativeModel,
}

impl ParamName {
    /// Canonical order; also the mixed-radix digit order (slowest first).
    pub const ALL: [ParamName; 5] = [
        ParamName::ChunkSize,
        ParamName::ChunkOverlap,
        ParamName::EmbeddingModel,
        ParamName::TopK,
        ParamName::GenerativeModel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::ChunkSize => "chunk_size",
            ParamName::ChunkOverlap => "chunk_overlap",
            ParamName::EmbeddingModel => "embedding_model",
            ParamName::TopK => "top_k",
            ParamName::GenerativeModel => "generative_model",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// True for the parameters that determine the vector index.
    pub fn is_index_param(self) -> bool {
        matches!(self, ParamName::ChunkSize | ParamName::ChunkOverlap | ParamName::EmbeddingModel)
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = SpaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParamName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| SpaceError::UnknownParam(s.to_string()))
    }
}

/// Chunk overlap as a fraction of the chunk size, in `[0, 1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Overlap(f64);

impl Overlap {
    pub fn new(fraction: f64) -> Result<Self, SpaceError> {
        if !(fraction.is_finite() && (0.0..1.0).contains(&fraction)) {
            return Err(SpaceError::OverlapOutOfRange(fraction));
        }
        // normalize -0.0 so equality and hashing agree
        Ok(Overlap(fraction + 0.0))
    }

    pub fn fraction(self) -> f64 {
        self.0
    }

    /// Tokens shared by consecutive chunks of `chunk_size` tokens.
    pub fn overlap_tokens(self, chunk_size: u32) -> u32 {
        // 100 * 0.29 is 28.999999999999996 in binary floating point
        (f64::from(chunk_size) * self.0 + 1e-9).floor() as u32
    }
}

impl PartialEq for Overlap {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Overlap {}

impl Hash for Overlap {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl PartialOrd for Overlap {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Overlap {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl TryFrom<f64> for Overlap {
    type Error = SpaceError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Overlap::new(v)
    }
}

impl From<Overlap> for f64 {
    fn from(o: Overlap) -> f64 {
        o.0
    }
}

impl fmt::Display for Overlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The (chunk size, overlap, embedding model) triple that determines an index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexConfig {
    pub chunk_size: u32,
    pub chunk_overlap: Overlap,
    pub embedding_model: String,
}

impl IndexConfig {
    /// Stable textual identity, used for index-cost dedup and index caches.
    pub fn fingerprint(&self) -> String {
        format!("{}|{}|{}", self.chunk_size, self.chunk_overlap, self.embedding_model)
    }
}

impl fmt::Display for IndexConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "chunk_size={} chunk_overlap={} embedding_model={}",
            self.chunk_size, self.chunk_overlap, self.embedding_model
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnswerConfig {
    pub top_k: u32,
    pub generative_model: String,
}

/// One point of the search space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RagConfig {
    pub index: IndexConfig,
    pub answer: AnswerConfig,
}

impl fmt::Display for RagConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} top_k={} generative_model={}",
            self.index, self.answer.top_k, self.answer.generative_model
        )
    }
}

/// Value indices of a configuration, in `ParamName::ALL` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coords(pub [usize; 5]);

impl Coords {
    pub fn get(&self, param: ParamName) -> usize {
        self.0[param.index()]
    }

    pub fn with(mut self, param: ParamName, value: usize) -> Self {
        self.0[param.index()] = value;
        self
    }
}

/// Per-parameter ordered value lists. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct SearchSpace {
    chunk_size: Vec<u32>,
    chunk_overlap: Vec<Overlap>,
    embedding_model: Vec<String>,
    top_k: Vec<u32>,
    generative_model: Vec<String>,
}

/// Serialized form: five keys, each a list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSpace {
    pub chunk_size: Vec<u32>,
    pub chunk_overlap: Vec<f64>,
    pub embedding_model: Vec<String>,
    pub top_k: Vec<u32>,
    pub generative_model: Vec<String>,
}

impl TryFrom<RawSpace> for SearchSpace {
    type Error = SpaceError;

    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        let overlaps = raw
            .chunk_overlap
            .iter()
            .map(|&f| Overlap::new(f))
            .collect::<Result<Vec<_>, _>>()?;
        SearchSpace::new(raw.chunk_size, overlaps, raw.embedding_model, raw.top_k, raw.generative_model)
    }
}

impl From<SearchSpace> for RawSpace {
    fn from(s: SearchSpace) -> Self {
        RawSpace {
            chunk_size: s.chunk_size,
            chunk_overlap: s.chunk_overlap.into_iter().map(f64::from).collect(),
            embedding_model: s.embedding_model,
            top_k: s.top_k,
            generative_model: s.generative_model,
        }
    }
}

fn check_list<T: PartialEq + fmt::Display>(param: ParamName, values: &[T]) -> Result<(), SpaceError> {
    if values.is_empty() {
        return Err(SpaceError::EmptyValues(param));
    }
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(SpaceError::DuplicateValue { param, value: v.to_string() });
        }
    }
    Ok(())
}

impl SearchSpace {
    pub fn new(
        chunk_size: Vec<u32>,
        chunk_overlap: Vec<Overlap>,
        embedding_model: Vec<String>,
        top_k: Vec<u32>,
        generative_model: Vec<String>,
    ) -> Result<Self, SpaceError> {
        check_list(ParamName::ChunkSize, &chunk_size)?;
        check_list(ParamName::ChunkOverlap, &chunk_overlap)?;
        check_list(ParamName::EmbeddingModel, &embedding_model)?;
        check_list(ParamName::TopK, &top_k)?;
        check_list(ParamName::GenerativeModel, &generative_model)?;
        for (param, list) in [(ParamName::ChunkSize, &chunk_size), (ParamName::TopK, &top_k)] {
            if let Some(&value) = list.iter().find(|&&v| v == 0) {
                return Err(SpaceError::NonPositive { param, value });
            }
        }
        Ok(SearchSpace { chunk_size, chunk_overlap, embedding_model, top_k, generative_model })
    }

    /// The default 3 x 2 x 3 x 3 x 3 space.
    pub fn builtin() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        SearchSpace::new(
            vec![256, 384, 512],
            vec![Overlap(0.0), Overlap(0.25)],
            s(&["multilingual-e5-large", "bge-large-en-v1.5", "granite-embedding-125M-english"]),
            vec![3, 5, 10],
            s(&["Llama-3.1-8B-Instruct", "Mistral-Nemo-Instruct-2407", "Granite-3.1-8B-instruct"]),
        )
        .expect("built-in space is valid")
    }

    /// Loads a space from a TOML or JSON file (by extension; TOML otherwise).
    pub fn load(path: &Path) -> Result<Self, SpaceError> {
        let file_err = |message: String| SpaceError::File { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| file_err(e.to_string()))
        }
    }

    pub fn chunk_sizes(&self) -> &[u32] {
        &self.chunk_size
    }
    pub fn chunk_overlaps(&self) -> &[Overlap] {
        &self.chunk_overlap
    }
    pub fn embedding_models(&self) -> &[String] {
        &self.embedding_model
    }
    pub fn top_ks(&self) -> &[u32] {
        &self.top_k
    }
    pub fn generative_models(&self) -> &[String] {
        &self.generative_model
    }

    pub fn cardinality(&self, param: ParamName) -> usize {
        match param {
            ParamName::ChunkSize => self.chunk_size.len(),
            ParamName::ChunkOverlap => self.chunk_overlap.len(),
            ParamName::EmbeddingModel => self.embedding_model.len(),
            ParamName::TopK => self.top_k.len(),
            ParamName::GenerativeModel => self.generative_model.len(),
        }
    }

    pub fn radices(&self) -> [usize; 5] {
        ParamName::ALL.map(|p| self.cardinality(p))
    }

    pub fn total_size(&self) -> usize {
        self.radices().iter().product()
    }

    /// Human-readable label of the `index`-th value of `param`.
    pub fn value_label(&self, param: ParamName, index: usize) -> String {
        match param {
            ParamName::ChunkSize => self.chunk_size[index].to_string(),
            ParamName::ChunkOverlap => self.chunk_overlap[index].to_string(),
            ParamName::EmbeddingModel => self.embedding_model[index].clone(),
            ParamName::TopK => self.top_k[index].to_string(),
            ParamName::GenerativeModel => self.generative_model[index].clone(),
        }
    }

    pub fn coords_of_ordinal(&self, ordinal: usize) -> Result<Coords, SpaceError> {
        let size = self.total_size();
        if ordinal >= size {
            return Err(SpaceError::OrdinalOutOfRange { ordinal, size });
        }
        let radices = self.radices();
        let mut rest = ordinal;
        let mut digits = [0usize; 5];
        for i in (0..5).rev() {
            digits[i] = rest % radices[i];
            rest /= radices[i];
        }
        Ok(Coords(digits))
    }

    pub fn ordinal_of_coords(&self, coords: &Coords) -> usize {
        let radices = self.radices();
        coords.0.iter().zip(radices).fold(0, |acc, (&d, r)| {
            debug_assert!(d < r);
            acc * r + d
        })
    }

    pub fn config_of_coords(&self, c: &Coords) -> RagConfig {
        RagConfig {
            index: IndexConfig {
                chunk_size: self.chunk_size[c.0[0]],
                chunk_overlap: self.chunk_overlap[c.0[1]],
                embedding_model: self.embedding_model[c.0[2]].clone(),
            },
            answer: AnswerConfig {
                top_k: self.top_k[c.0[3]],
                generative_model: self.generative_model[c.0[4]].clone(),
            },
        }
    }

    pub fn coords_of_config(&self, config: &RagConfig) -> Result<Coords, SpaceError> {
        fn position<T: PartialEq + fmt::Display>(param: ParamName, list: &[T], v: &T) -> Result<usize, SpaceError> {
            list.iter()
                .position(|x| x == v)
                .ok_or_else(|| SpaceError::NotAMember { param, value: v.to_string() })
        }
        Ok(Coords([
            position(ParamName::ChunkSize, &self.chunk_size, &config.index.chunk_size)?,
            position(ParamName::ChunkOverlap, &self.chunk_overlap, &config.index.chunk_overlap)?,
            position(ParamName::EmbeddingModel, &self.embedding_model, &config.index.embedding_model)?,
            position(ParamName::TopK, &self.top_k, &config.answer.top_k)?,
            position(ParamName::GenerativeModel, &self.generative_model, &config.answer.generative_model)?,
        ]))
    }

    /// The configuration with the given ordinal.
    pub fn config_at(&self, ordinal: usize) -> Result<RagConfig, SpaceError> {
        Ok(self.config_of_coords(&self.coords_of_ordinal(ordinal)?))
    }

    pub fn ordinal(&self, config: &RagConfig) -> Result<usize, SpaceError> {
        Ok(self.ordinal_of_coords(&self.coords_of_config(config)?))
    }

    /// Every configuration, in ordinal order.
    pub fn enumerate(&self) -> Vec<RagConfig> {
        (0..self.total_size())
            .map(|i| self.config_at(i).expect("ordinal in range"))
            .collect()
    }

    /// One configuration per value of `free_param`, all other fields copied from `config`.
    pub fn neighbors_fixing(&self, config: &RagConfig, free_param: ParamName) -> Result<Vec<RagConfig>, SpaceError> {
        let base = self.coords_of_config(config)?;
        Ok((0..self.cardinality(free_param))
            .map(|v| self.config_of_coords(&base.with(free_param, v)))
            .collect())
    }

    /// Ordinal of the index part among the `chunk_size x chunk_overlap x embedding_model` sub-grid.
    pub fn index_ordinal(&self, coords: &Coords) -> usize {
        (coords.0[0] * self.chunk_overlap.len() + coords.0[1]) * self.embedding_model.len() + coords.0[2]
    }

    pub fn index_count(&self) -> usize {
        self.chunk_size.len() * self.chunk_overlap.len() * self.embedding_model.len()
    }

    /// Canonical serialization; the basis of [`SearchSpace::fingerprint`].
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&RawSpace::from(self.clone())).expect("space serializes")
    }

    /// Short hash identifying this space in grid tables and run exports.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(sizes: [usize; 5]) -> SearchSpace {
        let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
        SearchSpace::new(
            (1..=sizes[0] as u32).map(|i| i * 100).collect(),
            (0..sizes[1]).map(|i| Overlap::new(i as f64 * 0.1).unwrap()).collect(),
            names("emb", sizes[2]),
            (1..=sizes[3] as u32).collect(),
            names("gen", sizes[4]),
        )
        .unwrap()
    }

    #[test]
    fn builtin_has_162_configs_18_indexes_9_answers() {
        let space = SearchSpace::builtin();
        assert_eq!(space.radices(), [3, 2, 3, 3, 3]);
        let all = space.enumerate();
        assert_eq!(all.len(), 162);
        let idx: HashSet<_> = all.iter().map(|c| c.index.clone()).collect();
        let ans: HashSet<_> = all.iter().map(|c| c.answer.clone()).collect();
        assert_eq!(idx.len(), 18);
        assert_eq!(ans.len(), 9);
        assert_eq!(space.index_count(), 18);
    }

    #[test]
    fn singleton_space_enumerates_one() {
        assert_eq!(small([1, 1, 1, 1, 1]).enumerate().len(), 1);
    }

    #[test]
    fn enumerate_matches_nested_loops() {
        let space = small([2, 2, 2, 2, 2]);
        let mut oracle = Vec::new();
        for a in space.chunk_sizes() {
            for b in space.chunk_overlaps() {
                for c in space.embedding_models() {
                    for d in space.top_ks() {
                        for e in space.generative_models() {
                            oracle.push(RagConfig {
                                index: IndexConfig { chunk_size: *a, chunk_overlap: *b, embedding_model: c.clone() },
                                answer: AnswerConfig { top_k: *d, generative_model: e.clone() },
                            });
                        }
                    }
                }
            }
        }
        assert_eq!(space.enumerate(), oracle);
        assert_eq!(oracle.len(), 32);
    }

    #[test]
    fn ordinal_boundaries() {
        let space = SearchSpace::builtin();
        let first = space.config_at(0).unwrap();
        assert_eq!(first.index.chunk_size, 256);
        assert_eq!(first.index.chunk_overlap.fraction(), 0.0);
        assert_eq!(first.index.embedding_model, "multilingual-e5-large");
        assert_eq!(first.answer.top_k, 3);
        assert_eq!(first.answer.generative_model, "Llama-3.1-8B-Instruct");

        // 161 = ((((2*2+1)*3+2)*3+2)*3+2)
        let last = space.config_at(161).unwrap();
        assert_eq!(space.coords_of_config(&last).unwrap(), Coords([2, 1, 2, 2, 2]));
        assert_eq!(last.answer.generative_model, "Granite-3.1-8B-instruct");

        assert_eq!(
            space.config_at(162),
            Err(SpaceError::OrdinalOutOfRange { ordinal: 162, size: 162 })
        );
    }

    #[test]
    fn roundtrip_all_ordinals() {
        let space = SearchSpace::builtin();
        for i in 0..space.total_size() {
            assert_eq!(space.ordinal(&space.config_at(i).unwrap()).unwrap(), i);
        }
    }

    #[test]
    fn neighbors_vary_only_free_param() {
        let space = SearchSpace::builtin();
        let base = space.config_at(77).unwrap();
        let n = space.neighbors_fixing(&base, ParamName::TopK).unwrap();
        assert_eq!(n.len(), 3);
        assert!(n.contains(&base));
        for c in &n {
            assert_eq!(c.index, base.index);
            assert_eq!(c.answer.generative_model, base.answer.generative_model);
        }
        let tops: HashSet<_> = n.iter().map(|c| c.answer.top_k).collect();
        assert_eq!(tops.len(), 3);
    }

    #[test]
    fn neighbors_singleton_list() {
        let space = small([1, 1, 2, 1, 1]);
        let base = space.config_at(1).unwrap();
        assert_eq!(space.neighbors_fixing(&base, ParamName::ChunkSize).unwrap(), vec![base]);
    }

    #[test]
    fn neighbor_union_has_ten_configs() {
        let space = SearchSpace::builtin();
        let base = space.config_at(40).unwrap();
        let union: HashSet<_> = ParamName::ALL
            .iter()
            .flat_map(|&p| space.neighbors_fixing(&base, p).unwrap())
            .collect();
        assert_eq!(union.len(), 3 + 2 + 3 + 3 + 3 - 4);
    }

    #[test]
    fn validation_rejects_bad_lists() {
        let ok = SearchSpace::builtin();
        let raw = RawSpace::from(ok.clone());
        let mut dup = raw.clone();
        dup.top_k = vec![3, 3];
        assert!(matches!(SearchSpace::try_from(dup), Err(SpaceError::DuplicateValue { .. })));
        let mut empty = raw.clone();
        empty.embedding_model.clear();
        assert_eq!(SearchSpace::try_from(empty), Err(SpaceError::EmptyValues(ParamName::EmbeddingModel)));
        let mut over = raw.clone();
        over.chunk_overlap = vec![1.0];
        assert_eq!(SearchSpace::try_from(over), Err(SpaceError::OverlapOutOfRange(1.0)));
        let mut zero = raw;
        zero.chunk_size = vec![0];
        assert!(matches!(SearchSpace::try_from(zero), Err(SpaceError::NonPositive { .. })));
    }

    #[test]
    fn toml_file_roundtrip_and_fingerprint() {
        let text = r#"
chunk_size = [256, 384, 512]
chunk_overlap = [0.0, 0.25]
embedding_model = ["multilingual-e5-large", "bge-large-en-v1.5", "granite-embedding-125M-english"]
top_k = [3, 5, 10]
generative_model = ["Llama-3.1-8B-Instruct", "Mistral-Nemo-Instruct-2407", "Granite-3.1-8B-instruct"]
"#;
        let parsed: SearchSpace = toml::from_str(text).unwrap();
        assert_eq!(parsed, SearchSpace::builtin());
        assert_eq!(parsed.fingerprint(), SearchSpace::builtin().fingerprint());
        assert_ne!(small([2, 2, 2, 2, 2]).fingerprint(), parsed.fingerprint());
    }

    #[test]
    fn equal_configs_hash_equal() {
        use std::collections::hash_map::DefaultHasher;
        let space = SearchSpace::builtin();
        let a = space.config_at(5).unwrap();
        let mut b = a.clone();
        b.index.chunk_overlap = Overlap::new(-0.0).unwrap();
        let h = |c: &RagConfig| {
            let mut s = DefaultHasher::new();
            c.hash(&mut s);
            s.finish()
        };
        assert_eq!(a, b);
        assert_eq!(h(&a), h(&b));
    }
}
