use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Location, Split};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaPair {
    pub qid: String,
    pub question: String,
    pub gold_answer: String,
    #[serde(default)]
    pub gold_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclaredCounts {
    pub documents: usize,
    pub dev: usize,
    pub test: usize,
}

/// Dataset manifest: file locations (relative to the manifest) and split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    pub corpus: String,
    pub benchmark: String,
    /// Corpus the test questions are answered against, when it differs from `corpus`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_corpus: Option<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared: Option<DeclaredCounts>,
}

/// Corpus plus a dev/test split QA benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub corpus: Vec<Document>,
    pub dev: Vec<QaPair>,
    pub test: Vec<QaPair>,
    /// Separate corpus for the test split (set by dev sampling); `None` means `corpus`.
    pub test_corpus: Option<Vec<Document>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub name: String,
    pub documents: usize,
    pub dev: usize,
    pub test: usize,
    pub declared: Option<DeclaredCounts>,
    pub dev_with_gold: usize,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} documents, {} dev QA ({} with gold documents), {} test QA",
            if self.name.is_empty() { "dataset" } else { &self.name },
            self.documents,
            self.dev,
            self.dev_with_gold,
            self.test
        )
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| DataError::schema(path, Some(i + 1), e.to_string()))?;
        out.push((i + 1, record));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| DataError::io(path, e))
}

fn load_corpus(path: &Path) -> Result<Vec<Document>, DataError> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line, doc) in read_jsonl::<Document>(path)? {
        if doc.text.trim().is_empty() {
            return Err(DataError::schema(path, Some(line), format!("document `{}` has empty text", doc.doc_id)));
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(DataError::DuplicateId {
                at: Location { path: path.display().to_string(), line: Some(line) },
                id: doc.doc_id,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

impl Dataset {
    /// Loads and validates a dataset from its manifest.
    pub fn load(manifest_path: &Path) -> Result<Self, DataError> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(manifest_path).map_err(|e| DataError::io(manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DataError::schema(manifest_path, Some(e.line()), e.to_string()))?;
        let at_manifest = || Location { path: manifest_path.display().to_string(), line: None };
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(DataError::Version {
                at: at_manifest(),
                found: manifest.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }

        let corpus_path = base.join(&manifest.corpus);
        let corpus = load_corpus(&corpus_path)?;
        let test_corpus_path = manifest.test_corpus.as_ref().map(|p| base.join(p));
        let test_corpus = test_corpus_path.as_deref().map(load_corpus).transpose()?;

        let bench_path = base.join(&manifest.benchmark);
        let mut by_qid: HashMap<String, (usize, QaPair)> = HashMap::new();
        for (line, qa) in read_jsonl::<QaPair>(&bench_path)? {
            if by_qid.contains_key(&qa.qid) {
                return Err(DataError::DuplicateId {
                    at: Location { path: bench_path.display().to_string(), line: Some(line) },
                    id: qa.qid,
                });
            }
            by_qid.insert(qa.qid.clone(), (line, qa));
        }

        let mut assigned = HashSet::new();
        let mut take_split = |qids: &[String], docs: &[Document]| -> Result<Vec<QaPair>, DataError> {
            let doc_ids: HashSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
            let mut out = Vec::with_capacity(qids.len());
            for qid in qids {
                if !assigned.insert(qid.clone()) {
                    return Err(DataError::DuplicateId { at: at_manifest(), id: qid.clone() });
                }
                let (line, qa) = by_qid
                    .get(qid)
                    .ok_or_else(|| DataError::schema(manifest_path, None, format!("split lists unknown qid `{qid}`")))?;
                if let Some(missing) = qa.gold_doc_ids.iter().find(|g| !doc_ids.contains(g.as_str())) {
                    return Err(DataError::DanglingReference {
                        at: Location { path: bench_path.display().to_string(), line: Some(*line) },
                        qid: qid.clone(),
                        doc_id: missing.clone(),
                    });
                }
                out.push(qa.clone());
            }
            Ok(out)
        };
        let dev = take_split(&manifest.dev, &corpus)?;
        let test = take_split(&manifest.test, test_corpus.as_deref().unwrap_or(&corpus))?;

        let dataset = Dataset { name: manifest.name.clone(), corpus, dev, test, test_corpus };
        if let Some(declared) = manifest.declared {
            let actual = DeclaredCounts { documents: dataset.corpus.len(), dev: dataset.dev.len(), test: dataset.test.len() };
            if declared != actual {
                return Err(DataError::schema(
                    manifest_path,
                    None,
                    format!("declared counts {declared:?} do not match contents {actual:?}"),
                ));
            }
        }
        Ok(dataset)
    }

    /// Checks id uniqueness, split disjointness and gold-document integrity.
    pub fn validate(&self) -> Result<(), DataError> {
        let here = || Location { path: format!("<dataset {}>", self.name), line: None };
        let check_corpus = |docs: &[Document]| -> Result<HashSet<String>, DataError> {
            let mut ids = HashSet::new();
            for d in docs {
                if !ids.insert(d.doc_id.clone()) {
                    return Err(DataError::DuplicateId { at: here(), id: d.doc_id.clone() });
                }
            }
            Ok(ids)
        };
        let corpus_ids = check_corpus(&self.corpus)?;
        let test_ids = match &self.test_corpus {
            Some(tc) => check_corpus(tc)?,
            None => corpus_ids.clone(),
        };
        let mut qids = HashSet::new();
        for (questions, ids) in [(&self.dev, &corpus_ids), (&self.test, &test_ids)] {
            for qa in questions {
                if !qids.insert(qa.qid.clone()) {
                    return Err(DataError::DuplicateId { at: here(), id: qa.qid.clone() });
                }
                if let Some(g) = qa.gold_doc_ids.iter().find(|g| !ids.contains(*g)) {
                    return Err(DataError::DanglingReference { at: here(), qid: qa.qid.clone(), doc_id: g.clone() });
                }
            }
        }
        Ok(())
    }

    pub fn questions(&self, split: Split) -> &[QaPair] {
        match split {
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn corpus_for(&self, split: Split) -> &[Document] {
        match (split, &self.test_corpus) {
            (Split::Test, Some(tc)) => tc,
            _ => &self.corpus,
        }
    }

    pub fn qids(&self, split: Split) -> Vec<String> {
        self.questions(split).iter().map(|q| q.qid.clone()).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.name.clone(),
            documents: self.corpus.len(),
            dev: self.dev.len(),
            test: self.test.len(),
            declared: Some(DeclaredCounts { documents: self.corpus.len(), dev: self.dev.len(), test: self.test.len() }),
            dev_with_gold: self.dev.iter().filter(|q| !q.gold_doc_ids.is_empty()).count(),
        }
    }

    /// Writes `manifest.json`, `corpus.jsonl`, `benchmark.jsonl` (and `test_corpus.jsonl`) into `dir`.
    pub fn store(&self, dir: &Path) -> Result<PathBuf, DataError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        write_jsonl(&dir.join("corpus.jsonl"), &self.corpus)?;
        let bench: Vec<&QaPair> = self.dev.iter().chain(&self.test).collect();
        write_jsonl(&dir.join("benchmark.jsonl"), &bench)?;
        if let Some(tc) = &self.test_corpus {
            write_jsonl(&dir.join("test_corpus.jsonl"), tc)?;
        }
        let manifest = Manifest {
            format_version: DATASET_FORMAT_VERSION,
            name: self.name.clone(),
            corpus: "corpus.jsonl".into(),
            benchmark: "benchmark.jsonl".into(),
            test_corpus: self.test_corpus.as_ref().map(|_| "test_corpus.jsonl".into()),
            dev: self.qids(Split::Dev),
            test: self.qids(Split::Test),
            declared: Some(DeclaredCounts { documents: self.corpus.len(), dev: self.dev.len(), test: self.test.len() }),
        };
        let path = dir.join("manifest.json");
        let mut f = fs::File::create(&path).map_err(|e| DataError::io(&path, e))?;
        serde_json::to_writer_pretty(&mut f, &manifest).expect("manifest serializes");
        f.write_all(b"\n").map_err(|e| DataError::io(&path, e))?;
        Ok(path)
    }

    /// Content hash over a canonical serialization; independent of file layout.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |tag: &str, value: String| {
            hasher.update(tag.as_bytes());
            hasher.update((value.len() as u64).to_le_bytes());
            hasher.update(value.as_bytes());
        };
        feed("name", self.name.clone());
        for d in &self.corpus {
            feed("doc", serde_json::to_string(d).expect("serializes"));
        }
        for q in &self.dev {
            feed("dev", serde_json::to_string(q).expect("serializes"));
        }
        for q in &self.test {
            feed("test", serde_json::to_string(q).expect("serializes"));
        }
        if let Some(tc) = &self.test_corpus {
            for d in tc {
                feed("test_doc", serde_json::to_string(d).expect("serializes"));
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn fixture(dir: &Path) {
        let corpus: String = (1..=5)
            .map(|i| format!("{{\"doc_id\":\"d{i}\",\"title\":\"Doc {i}\",\"text\":\"text of document {i}\"}}\n"))
            .collect();
        write(dir, "corpus.jsonl", &corpus);
        let bench: String = (1..=6)
            .map(|i| {
                format!(
                    "{{\"qid\":\"q{i}\",\"question\":\"what is {i}?\",\"gold_answer\":\"answer {i}\",\"gold_doc_ids\":[\"d{}\"]}}\n",
                    (i % 5) + 1
                )
            })
            .collect();
        write(dir, "benchmark.jsonl", &bench);
        write(
            dir,
            "manifest.json",
            r#"{"format_version":1,"name":"tiny","corpus":"corpus.jsonl","benchmark":"benchmark.jsonl",
                "dev":["q1","q2","q3","q4"],"test":["q5","q6"]}"#,
        );
    }

    #[test]
    fn loads_fixture_counts() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let ds = Dataset::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!((ds.corpus.len(), ds.dev.len(), ds.test.len()), (5, 4, 2));
        ds.validate().unwrap();
        assert_eq!(ds.summary().dev_with_gold, 4);
    }

    #[test]
    fn dangling_reference_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let mut bench = fs::read_to_string(dir.path().join("benchmark.jsonl")).unwrap();
        bench = bench.replace("\"gold_doc_ids\":[\"d3\"]", "\"gold_doc_ids\":[\"missing\"]");
        write(dir.path(), "benchmark.jsonl", &bench);
        let err = Dataset::load(&dir.path().join("manifest.json")).unwrap_err();
        match err {
            DataError::DanglingReference { at, qid, doc_id } => {
                assert_eq!(qid, "q2");
                assert_eq!(doc_id, "missing");
                assert_eq!(at.line, Some(2));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let mut corpus = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
        corpus.push_str("{\"doc_id\":\"d1\",\"text\":\"again\"}\n");
        write(dir.path(), "corpus.jsonl", &corpus);
        let err = Dataset::load(&dir.path().join("manifest.json")).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId { ref id, ref at } if id == "d1" && at.line == Some(6)), "{err}");
    }

    #[test]
    fn schema_error_has_location() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write(dir.path(), "corpus.jsonl", "{\"doc_id\":\"d1\",\"text\":\"ok\"}\n{\"doc_id\":7}\n");
        let err = Dataset::load(&dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("corpus.jsonl:2"), "{err}");
    }

    #[test]
    fn overlapping_splits_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write(
            dir.path(),
            "manifest.json",
            r#"{"format_version":1,"corpus":"corpus.jsonl","benchmark":"benchmark.jsonl","dev":["q1"],"test":["q1"]}"#,
        );
        assert!(matches!(
            Dataset::load(&dir.path().join("manifest.json")),
            Err(DataError::DuplicateId { .. })
        ));
    }

    #[test]
    fn store_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let ds = Dataset::load(&dir.path().join("manifest.json")).unwrap();
        let out = tempfile::tempdir().unwrap();
        let manifest = ds.store(out.path()).unwrap();
        let again = Dataset::load(&manifest).unwrap();
        assert_eq!(again, ds);
        assert_eq!(again.content_hash(), ds.content_hash());
    }

    #[test]
    fn bioasq_shaped_counts_surface_in_summary() {
        let dir = tempfile::tempdir().unwrap();
        let corpus: String = (0..40181)
            .map(|i| format!("{{\"doc_id\":\"p{i}\",\"text\":\"passage {i}\"}}\n"))
            .collect();
        write(dir.path(), "corpus.jsonl", &corpus);
        let bench: String = (0..1150)
            .map(|i| {
                format!(
                    "{{\"qid\":\"b{i}\",\"question\":\"q{i}\",\"gold_answer\":\"a{i}\",\"gold_doc_ids\":[\"p{}\",\"p{}\"]}}\n",
                    i * 3,
                    i * 3 + 1
                )
            })
            .collect();
        write(dir.path(), "benchmark.jsonl", &bench);
        let manifest = Manifest {
            format_version: 1,
            name: "bioasq-shaped".into(),
            corpus: "corpus.jsonl".into(),
            benchmark: "benchmark.jsonl".into(),
            test_corpus: None,
            dev: (0..1000).map(|i| format!("b{i}")).collect(),
            test: (1000..1150).map(|i| format!("b{i}")).collect(),
            declared: Some(DeclaredCounts { documents: 40181, dev: 1000, test: 150 }),
        };
        write(dir.path(), "manifest.json", &serde_json::to_string(&manifest).unwrap());
        let summary = Dataset::load(&dir.path().join("manifest.json")).unwrap().summary();
        assert_eq!((summary.documents, summary.dev, summary.test), (40181, 1000, 150));
        assert_eq!(summary.declared, manifest.declared);
        assert!(summary.to_string().contains("40181 documents"));
    }

    #[test]
    fn declared_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write(
            dir.path(),
            "manifest.json",
            r#"{"format_version":1,"corpus":"corpus.jsonl","benchmark":"benchmark.jsonl","dev":["q1"],"test":["q2"],
                "declared":{"documents":99,"dev":1,"test":1}}"#,
        );
        assert!(Dataset::load(&dir.path().join("manifest.json")).is_err());
    }
}
