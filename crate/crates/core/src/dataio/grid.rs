//! Per-(config, question, metric, split) score store.
//!
//! On disk a grid table is a CSV file preceded by one header line:
//!
//! ```text
//! # ragtune-grid format_version=1 space=<fingerprint>
//! ordinal,split,metric,qid,score
//! 0,dev,lexical_ac,q1,0.5
//! ```
//!
//! Rows are written in canonical `(ordinal, split, metric, qid)` order, with
//! metrics ordered `lexical_ac, faithfulness, context_mrr, judge_ac`. Optional
//! replayed costs live in a JSON-lines sidecar `<grid>.costs.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Location, Split};
use crate::metrics::Metric;
use crate::scalar::Scalar;
use crate::searchspace::SearchSpace;

pub const GRID_FORMAT_VERSION: u32 = 1;
const GRID_MAGIC: &str = "# ragtune-grid";
const COLUMNS: [&str; 5] = ["ordinal", "split", "metric", "qid", "score"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridKey {
    pub ordinal: usize,
    pub split: Split,
    pub metric: Metric,
    pub qid: String,
}

/// Replayed evaluation costs: per index (embedding tokens) and per question (generation tokens).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridCosts {
    /// Keyed by `SearchSpace::index_ordinal`.
    pub index_tokens: BTreeMap<usize, u64>,
    /// Keyed by (config ordinal, split, qid) → (input tokens, output tokens).
    pub generation: BTreeMap<(usize, Split, String), (u64, u64)>,
}

impl GridCosts {
    pub fn is_empty(&self) -> bool {
        self.index_tokens.is_empty() && self.generation.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum CostRecord {
    Header { format_version: u32, space: String },
    Index { index: usize, embedded_tokens: u64 },
    Generation { ordinal: usize, split: Split, qid: String, input_tokens: u64, output_tokens: u64 },
}

/// Result of a completeness check for one (metric, split).
#[derive(Debug, Clone, PartialEq)]
pub struct Completeness {
    pub metric: Metric,
    pub split: Split,
    pub questions: usize,
    pub missing: Vec<(usize, String)>,
}

impl Completeness {
    pub fn is_complete(&self) -> bool {
        self.questions > 0 && self.missing.is_empty()
    }

    /// Short description of the gaps, listing at most `limit` pairs.
    pub fn describe(&self, limit: usize) -> String {
        if self.questions == 0 {
            return format!("no {} questions recorded for {}", self.split, self.metric);
        }
        let mut text = format!("{} missing (config, question) pairs for {}/{}", self.missing.len(), self.metric, self.split);
        for (ordinal, qid) in self.missing.iter().take(limit) {
            text.push_str(&format!("\n  config {ordinal}, question {qid}"));
        }
        if self.missing.len() > limit {
            text.push_str(&format!("\n  ... and {} more", self.missing.len() - limit));
        }
        text
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTable<S = f64> {
    space_fingerprint: String,
    rows: BTreeMap<GridKey, S>,
    pub costs: GridCosts,
}

impl<S: Scalar> GridTable<S> {
    pub fn new(space: &SearchSpace) -> Self {
        GridTable { space_fingerprint: space.fingerprint(), rows: BTreeMap::new(), costs: GridCosts::default() }
    }

    /// A complete table for `metric` on `split` with `score(ordinal, question_index)` per row.
    /// Questions are named `q1..=qN`.
    pub fn from_fn(
        space: &SearchSpace,
        split: Split,
        metric: Metric,
        questions: usize,
        mut score: impl FnMut(usize, usize) -> S,
    ) -> Result<Self, DataError> {
        let mut table = Self::new(space);
        table.fill(space, split, metric, questions, &mut score)?;
        Ok(table)
    }

    /// Adds a complete block of rows for `metric` on `split`, as in [`GridTable::from_fn`].
    pub fn fill(
        &mut self,
        space: &SearchSpace,
        split: Split,
        metric: Metric,
        questions: usize,
        mut score: impl FnMut(usize, usize) -> S,
    ) -> Result<(), DataError> {
        for ordinal in 0..space.total_size() {
            for q in 0..questions {
                let key = GridKey { ordinal, split, metric, qid: format!("q{}", q + 1) };
                self.insert(key, score(ordinal, q))?;
            }
        }
        Ok(())
    }

    pub fn space_fingerprint(&self) -> &str {
        &self.space_fingerprint
    }

    pub fn check_space(&self, space: &SearchSpace) -> Result<(), DataError> {
        let expected = space.fingerprint();
        if expected != self.space_fingerprint {
            return Err(DataError::FingerprintMismatch { expected, found: self.space_fingerprint.clone() });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Inserts a score, rejecting values outside `[0, 1]` and duplicate keys.
    pub fn insert(&mut self, key: GridKey, score: S) -> Result<(), DataError> {
        let at = Location { path: "<grid>".into(), line: None };
        if !score.is_unit_interval() {
            return Err(DataError::ScoreOutOfRange { at, score: score.to_string() });
        }
        if self.rows.contains_key(&key) {
            return Err(DataError::DuplicateKey { at, key: describe_key(&key) });
        }
        self.rows.insert(key, score);
        Ok(())
    }

    pub fn get(&self, ordinal: usize, split: Split, metric: Metric, qid: &str) -> Option<S> {
        self.rows
            .get(&GridKey { ordinal, split, metric, qid: qid.to_string() })
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GridKey, &S)> {
        self.rows.iter()
    }

    /// Question ids recorded for `split` under any metric, sorted.
    pub fn qids(&self, split: Split) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.keys().filter(|k| k.split == split).map(|k| k.qid.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn has_metric(&self, metric: Metric, split: Split) -> bool {
        self.rows.keys().any(|k| k.metric == metric && k.split == split)
    }

    /// Every (config, qid) pair of `split` lacking a `metric` score.
    ///
    /// `qids` defaults to the questions recorded for the split under any metric.
    pub fn completeness(&self, space: &SearchSpace, metric: Metric, split: Split, qids: Option<&[String]>) -> Completeness {
        let owned;
        let qids = match qids {
            Some(q) => q,
            None => {
                owned = self.qids(split);
                &owned
            }
        };
        let mut missing = Vec::new();
        for ordinal in 0..space.total_size() {
            for qid in qids {
                if self.get(ordinal, split, metric, qid).is_none() {
                    missing.push((ordinal, qid.clone()));
                }
            }
        }
        Completeness { metric, split, questions: qids.len(), missing }
    }

    /// Configs with at least one missing (qid, metric) pair among the requested ones.
    pub fn incomplete_configs(&self, space: &SearchSpace, metrics: &[Metric], split: Split, qids: &[String]) -> Vec<usize> {
        (0..space.total_size())
            .filter(|&o| metrics.iter().any(|&m| qids.iter().any(|q| self.get(o, split, m, q).is_none())))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
        let fingerprint = parse_header(first).ok_or_else(|| {
            DataError::schema(path, Some(1), format!("expected `{GRID_MAGIC} format_version={GRID_FORMAT_VERSION} space=<fingerprint>`"))
        })?;
        if fingerprint.0 != GRID_FORMAT_VERSION {
            return Err(DataError::Version {
                at: Location { path: path.display().to_string(), line: Some(1) },
                found: fingerprint.0,
                expected: GRID_FORMAT_VERSION,
            });
        }
        let mut table = GridTable { space_fingerprint: fingerprint.1, rows: BTreeMap::new(), costs: GridCosts::default() };

        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let headers = reader.headers().map_err(|e| DataError::schema(path, Some(2), e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != COLUMNS {
            return Err(DataError::schema(path, Some(2), format!("expected columns {}", COLUMNS.join(","))));
        }
        for record in reader.records() {
            let record = record.map_err(|e| DataError::schema(path, e.position().map(|p| p.line() as usize + 1), e.to_string()))?;
            let line = record.position().map(|p| p.line() as usize + 1);
            let at = || Location { path: path.display().to_string(), line };
            let field_err = |name: &str, value: &str| DataError::schema(path, line, format!("invalid {name} `{value}`"));
            if record.len() != COLUMNS.len() {
                return Err(DataError::schema(path, line, format!("expected {} fields", COLUMNS.len())));
            }
            let ordinal: usize = record[0].parse().map_err(|_| field_err("ordinal", &record[0]))?;
            let split: Split = record[1].parse().map_err(|_| field_err("split", &record[1]))?;
            let metric: Metric = record[2].parse().map_err(|_| field_err("metric", &record[2]))?;
            let qid = record[3].to_string();
            let score = S::parse_score(&record[4]).ok_or_else(|| field_err("score", &record[4]))?;
            if !score.is_unit_interval() {
                return Err(DataError::ScoreOutOfRange { at: at(), score: record[4].to_string() });
            }
            let key = GridKey { ordinal, split, metric, qid };
            if table.rows.contains_key(&key) {
                return Err(DataError::DuplicateKey { at: at(), key: describe_key(&key) });
            }
            table.rows.insert(key, score);
        }

        let cost_path = costs_path(path);
        if cost_path.exists() {
            table.costs = read_costs(&cost_path, &table.space_fingerprint)?;
        }
        Ok(table)
    }

    /// Reads a table and checks it was built for `space`.
    pub fn load(path: &Path, space: &SearchSpace) -> Result<Self, DataError> {
        let table = Self::read(path)?;
        table.check_space(space)?;
        if let Some(key) = table.rows.keys().find(|k| k.ordinal >= space.total_size()) {
            return Err(DataError::schema(path, None, format!("ordinal {} outside the space", key.ordinal)));
        }
        Ok(table)
    }

    pub fn store(&self, path: &Path) -> Result<(), DataError> {
        let mut out = format!("{GRID_MAGIC} format_version={GRID_FORMAT_VERSION} space={}\n", self.space_fingerprint).into_bytes();
        {
            let mut writer = csv::Writer::from_writer(&mut out);
            writer.write_record(COLUMNS).map_err(|e| DataError::io(path, e.into()))?;
            for (k, score) in &self.rows {
                writer
                    .write_record([
                        k.ordinal.to_string(),
                        k.split.to_string(),
                        k.metric.to_string(),
                        k.qid.clone(),
                        score.to_string(),
                    ])
                    .map_err(|e| DataError::io(path, e.into()))?;
            }
            writer.flush().map_err(|e| DataError::io(path, e))?;
        }
        fs::write(path, out).map_err(|e| DataError::io(path, e))?;
        if !self.costs.is_empty() {
            write_costs(&costs_path(path), &self.space_fingerprint, &self.costs)?;
        }
        Ok(())
    }
}

fn describe_key(k: &GridKey) -> String {
    format!("ordinal={} split={} metric={} qid={}", k.ordinal, k.split, k.metric, k.qid)
}

fn parse_header(line: &str) -> Option<(u32, String)> {
    let rest = line.trim_end().strip_prefix(GRID_MAGIC)?;
    let mut version = None;
    let mut space = None;
    for field in rest.split_whitespace() {
        match field.split_once('=')? {
            ("format_version", v) => version = v.parse().ok(),
            ("space", s) => space = Some(s.to_string()),
            _ => {}
        }
    }
    Some((version?, space?))
}

pub(crate) fn costs_path(grid: &Path) -> PathBuf {
    let mut name = grid.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".costs.jsonl");
    grid.with_file_name(name)
}

fn read_costs(path: &Path, fingerprint: &str) -> Result<GridCosts, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut costs = GridCosts::default();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let record: CostRecord = serde_json::from_str(line).map_err(|e| DataError::schema(path, Some(i + 1), e.to_string()))?;
        match record {
            CostRecord::Header { format_version, space } => {
                if format_version != GRID_FORMAT_VERSION {
                    return Err(DataError::Version {
                        at: Location { path: path.display().to_string(), line: Some(i + 1) },
                        found: format_version,
                        expected: GRID_FORMAT_VERSION,
                    });
                }
                if space != fingerprint {
                    return Err(DataError::FingerprintMismatch { expected: fingerprint.to_string(), found: space });
                }
            }
            CostRecord::Index { index, embedded_tokens } => {
                costs.index_tokens.insert(index, embedded_tokens);
            }
            CostRecord::Generation { ordinal, split, qid, input_tokens, output_tokens } => {
                costs.generation.insert((ordinal, split, qid), (input_tokens, output_tokens));
            }
        }
    }
    Ok(costs)
}

fn write_costs(path: &Path, fingerprint: &str, costs: &GridCosts) -> Result<(), DataError> {
    let mut lines = vec![CostRecord::Header { format_version: GRID_FORMAT_VERSION, space: fingerprint.to_string() }];
    lines.extend(costs.index_tokens.iter().map(|(&index, &embedded_tokens)| CostRecord::Index { index, embedded_tokens }));
    lines.extend(costs.generation.iter().map(|((ordinal, split, qid), &(i, o))| CostRecord::Generation {
        ordinal: *ordinal,
        split: *split,
        qid: qid.clone(),
        input_tokens: i,
        output_tokens: o,
    }));
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(&l).expect("cost record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}
