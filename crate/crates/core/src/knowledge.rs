//! Runbook, wiki and deployment-metadata index with BM25 ranking.
//!
//! Corpus statistics (document count, average length, document frequency)
//! are computed over the candidate set: documents that pass the kind and
//! service filters and contain at least one query term. Documents that share
//! no term with the query therefore never influence a ranking.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DocKind {
    Runbook,
    Wiki,
    Deployment,
}

impl fmt::Display for DocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DocKind::Runbook => "RUNBOOK",
            DocKind::Wiki => "WIKI",
            DocKind::Deployment => "DEPLOYMENT",
        })
    }
}

impl FromStr for DocKind {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "runbook" => Ok(DocKind::Runbook),
            "wiki" => Ok(DocKind::Wiki),
            "deployment" => Ok(DocKind::Deployment),
            other => Err(KnowledgeError::InvalidDoc(format!("unknown doc kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub doc_id: String,
    pub kind: DocKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    pub title: String,
    pub body: String,
    /// Deployment docs carry `commit_id` and `deployed_at` (epoch ms).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl KnowledgeDoc {
    pub fn deployed_at(&self) -> Option<Timestamp> {
        self.meta.get("deployed_at").and_then(|v| Timestamp::from_wire(&serde_json::Value::String(v.clone())))
    }

    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.body.trim().is_empty() {
            return Err(KnowledgeError::EmptyBody(self.doc_id.clone()));
        }
        if self.doc_id.trim().is_empty() {
            return Err(KnowledgeError::InvalidDoc("doc_id must be non-empty".into()));
        }
        if self.kind == DocKind::Deployment {
            if !self.meta.contains_key("commit_id") {
                return Err(KnowledgeError::InvalidDoc(format!("{}: deployment without commit_id", self.doc_id)));
            }
            if self.deployed_at().is_none() {
                return Err(KnowledgeError::InvalidDoc(format!(
                    "{}: deployment without a valid deployed_at",
                    self.doc_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub score: f64,
    pub matched_terms: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnowledgeError {
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("knowledge index is empty")]
    EmptyIndex,
    #[error("invalid document: {0}")]
    InvalidDoc(String),
    #[error("invalid search: {0}")]
    InvalidSearch(String),
    #[error("io: {0}")]
    Io(String),
}

/// Lowercase, split on anything that is not alphanumeric, no stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

struct Indexed {
    doc: KnowledgeDoc,
    tf: HashMap<String, u32>,
    len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_len: f64,
}

#[derive(Default)]
pub struct KnowledgeStore {
    docs: RwLock<BTreeMap<String, Indexed>>,
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a document.
    pub fn index_doc(&self, doc: KnowledgeDoc) -> Result<(), KnowledgeError> {
        doc.validate()?;
        let mut text = format!("{} {}", doc.title, doc.body);
        if let Some(summary) = doc.meta.get("change_summary") {
            text.push(' ');
            text.push_str(summary);
        }
        let tokens = tokenize(&text);
        let mut tf = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        let entry = Indexed { len: tokens.len(), tf, doc };
        self.docs.write().unwrap().insert(entry.doc.doc_id.clone(), entry);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<KnowledgeDoc> {
        self.docs.read().unwrap().get(doc_id).map(|d| d.doc.clone())
    }

    pub fn docs(&self) -> Vec<KnowledgeDoc> {
        self.docs.read().unwrap().values().map(|d| d.doc.clone()).collect()
    }

    pub fn stats(&self) -> CorpusStats {
        let docs = self.docs.read().unwrap();
        let n = docs.len();
        let total: usize = docs.values().map(|d| d.len).sum();
        CorpusStats { doc_count: n, avg_len: if n == 0 { 0.0 } else { total as f64 / n as f64 } }
    }

    pub fn search(
        &self,
        query: &str,
        kind: Option<DocKind>,
        service: Option<&str>,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, KnowledgeError> {
        if k < 1 {
            return Err(KnowledgeError::InvalidSearch("k must be at least 1".into()));
        }
        let docs = self.docs.read().unwrap();
        if docs.is_empty() {
            return Err(KnowledgeError::EmptyIndex);
        }
        let mut terms = tokenize(query);
        terms.sort();
        terms.dedup();

        let candidates: Vec<&Indexed> = docs
            .values()
            .filter(|d| kind.is_none_or(|k| d.doc.kind == k))
            .filter(|d| service.is_none_or(|s| d.doc.service.as_deref() == Some(s)))
            .filter(|d| terms.iter().any(|t| d.tf.contains_key(t)))
            .collect();
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let n = candidates.len() as f64;
        let avg_len = candidates.iter().map(|d| d.len as f64).sum::<f64>() / n;
        let df: HashMap<&str, f64> = terms
            .iter()
            .map(|t| (t.as_str(), candidates.iter().filter(|d| d.tf.contains_key(t)).count() as f64))
            .collect();

        let mut hits: Vec<RetrievalHit> = candidates
            .iter()
            .map(|d| {
                let mut score = 0.0;
                let mut matched = Vec::new();
                for t in &terms {
                    let Some(&tf) = d.tf.get(t) else { continue };
                    matched.push(t.clone());
                    score += bm25_term(tf as f64, d.len as f64, avg_len, n, df[t.as_str()]);
                }
                RetrievalHit { doc_id: d.doc.doc_id.clone(), score, matched_terms: matched }
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        hits.truncate(k);
        Ok(hits)
    }

    /// Deployment docs for `service` deployed at or after `since`, newest first.
    pub fn recent_deployments(&self, service: &str, since: Timestamp) -> Vec<KnowledgeDoc> {
        let docs = self.docs.read().unwrap();
        let mut out: Vec<(Timestamp, KnowledgeDoc)> = docs
            .values()
            .filter(|d| d.doc.kind == DocKind::Deployment && d.doc.service.as_deref() == Some(service))
            .filter_map(|d| d.doc.deployed_at().map(|t| (t, d.doc.clone())))
            .filter(|(t, _)| *t >= since)
            .collect();
        out.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
        out.into_iter().map(|(_, d)| d).collect()
    }

    /// Loads every regular file in `dir` as a document (see [`parse_doc`]).
    pub fn load_dir(&self, dir: &Path) -> Result<usize, KnowledgeError> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| KnowledgeError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut n = 0;
        for path in entries {
            let text = fs::read_to_string(&path).map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("doc");
            self.index_doc(parse_doc(stem, &text)?)?;
            n += 1;
        }
        Ok(n)
    }
}

fn bm25_term(tf: f64, len: f64, avg_len: f64, n: f64, df: f64) -> f64 {
    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
    let norm = if avg_len > 0.0 { len / avg_len } else { 1.0 };
    idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * norm))
}

/// Parses the on-disk document format: `key: value` header lines, a blank
/// line, then the body. Recognized headers are `kind`, `service`, `title`,
/// `commit_id`, `deployed_at` and `change_summary`; other headers land in
/// `meta` as well.
pub fn parse_doc(doc_id: &str, text: &str) -> Result<KnowledgeDoc, KnowledgeError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let (header, body) = match text.find("\n\n") {
        Some(i) => (&text[..i], &text[i + 2..]),
        None => match text.find("\r\n\r\n") {
            Some(i) => (&text[..i], &text[i + 4..]),
            None => return Err(KnowledgeError::InvalidDoc(format!("{doc_id}: missing blank line after header"))),
        },
    };
    let mut kind = None;
    let mut service = None;
    let mut title = None;
    let mut meta = BTreeMap::new();
    for line in header.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(KnowledgeError::InvalidDoc(format!("{doc_id}: bad header line `{line}`")));
        };
        let (key, value) = (key.trim().to_ascii_lowercase(), value.trim().to_string());
        match key.as_str() {
            "kind" => kind = Some(value.parse::<DocKind>()?),
            "service" => service = Some(value),
            "title" => title = Some(value),
            "deployed_at" => {
                let ts = Timestamp::from_wire(&serde_json::Value::String(value.clone()))
                    .ok_or_else(|| KnowledgeError::InvalidDoc(format!("{doc_id}: bad deployed_at `{value}`")))?;
                meta.insert(key, ts.0.to_string());
            }
            _ => {
                meta.insert(key, value);
            }
        }
    }
    let doc = KnowledgeDoc {
        doc_id: doc_id.to_string(),
        kind: kind.ok_or_else(|| KnowledgeError::InvalidDoc(format!("{doc_id}: missing kind header")))?,
        service,
        title: title.unwrap_or_else(|| doc_id.to_string()),
        body: body.trim().to_string(),
        meta,
    };
    doc.validate()?;
    Ok(doc)
}

/// Inverse of [`parse_doc`].
pub fn render_doc(doc: &KnowledgeDoc) -> String {
    let mut out = format!("kind: {}\n", doc.kind.to_string().to_ascii_lowercase());
    if let Some(s) = &doc.service {
        out.push_str(&format!("service: {s}\n"));
    }
    out.push_str(&format!("title: {}\n", doc.title));
    for (k, v) in &doc.meta {
        let v = match (k.as_str(), doc.deployed_at()) {
            ("deployed_at", Some(ts)) => ts.to_rfc3339(),
            _ => v.clone(),
        };
        out.push_str(&format!("{k}: {v}\n"));
    }
    out.push('\n');
    out.push_str(&doc.body);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, kind: DocKind, service: Option<&str>, body: &str) -> KnowledgeDoc {
        KnowledgeDoc {
            doc_id: id.into(),
            kind,
            service: service.map(Into::into),
            title: String::new(),
            body: body.into(),
            meta: BTreeMap::new(),
        }
    }

    fn deploy(id: &str, service: &str, at: i64, summary: &str) -> KnowledgeDoc {
        let mut d = doc(id, DocKind::Deployment, Some(service), summary);
        d.meta.insert("commit_id".into(), format!("c-{id}"));
        d.meta.insert("deployed_at".into(), at.to_string());
        d
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Fix NPE in PriceCalc::apply()!"), ["fix", "npe", "in", "pricecalc", "apply"]);
    }

    #[test]
    fn sole_match_ranks_first() {
        let kb = KnowledgeStore::new();
        kb.index_doc(doc("a", DocKind::Runbook, Some("checkout"), "restart the checkout pods")).unwrap();
        kb.index_doc(doc("b", DocKind::Wiki, None, "catalog ingestion overview")).unwrap();
        let hits = kb.search("checkout pods", None, None, 5).unwrap();
        assert_eq!(hits[0].doc_id, "a");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].matched_terms, ["checkout", "pods"]);
    }

    #[test]
    fn reindex_replaces() {
        let kb = KnowledgeStore::new();
        kb.index_doc(doc("a", DocKind::Runbook, None, "alpha beta")).unwrap();
        kb.index_doc(doc("a", DocKind::Runbook, None, "gamma delta")).unwrap();
        assert!(kb.search("alpha", None, None, 3).unwrap().is_empty());
        assert_eq!(kb.search("gamma", None, None, 3).unwrap()[0].doc_id, "a");
        assert_eq!(kb.stats().doc_count, 1);
    }

    #[test]
    fn bm25_hand_computed() {
        // Both documents have 4 tokens; avgdl = 4, so length normalization is 1.
        // N = 2, df = 2: idf = ln((2 - 2 + 0.5) / (2 + 0.5) + 1) = ln(1.2).
        // tf = 2: 2 * 2.2 / (2 + 1.2) = 1.375;  tf = 1: 2.2 / 2.2 = 1.
        let kb = KnowledgeStore::new();
        kb.index_doc(doc("one", DocKind::Runbook, None, "cache cache warm cold")).unwrap();
        kb.index_doc(doc("two", DocKind::Runbook, None, "cache warm cold hot")).unwrap();
        let hits = kb.search("cache", None, None, 2).unwrap();
        let idf = 1.2f64.ln();
        assert_eq!(hits[0].doc_id, "one");
        assert!((hits[0].score - idf * 1.375).abs() < 1e-12);
        assert!((hits[1].score - idf * 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let kb = KnowledgeStore::new();
        kb.index_doc(doc("z", DocKind::Wiki, None, "same words")).unwrap();
        kb.index_doc(doc("m", DocKind::Wiki, None, "same words")).unwrap();
        let hits = kb.search("same", None, None, 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.doc_id.as_str()).collect::<Vec<_>>(), ["m", "z"]);
    }

    #[test]
    fn kind_filter() {
        let kb = KnowledgeStore::new();
        kb.index_doc(doc("r", DocKind::Runbook, Some("pay"), "pricing errors")).unwrap();
        kb.index_doc(deploy("d", "pay", 10, "pricing refactor")).unwrap();
        let hits = kb.search("pricing", Some(DocKind::Deployment), None, 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "d");
    }

    #[test]
    fn empty_index_and_bad_k() {
        let kb = KnowledgeStore::new();
        assert_eq!(kb.search("x", None, None, 1), Err(KnowledgeError::EmptyIndex));
        kb.index_doc(doc("a", DocKind::Wiki, None, "x")).unwrap();
        assert!(matches!(kb.search("x", None, None, 0), Err(KnowledgeError::InvalidSearch(_))));
    }

    #[test]
    fn empty_body_rejected() {
        let kb = KnowledgeStore::new();
        assert_eq!(kb.index_doc(doc("a", DocKind::Wiki, None, "  ")), Err(KnowledgeError::EmptyBody("a".into())));
    }

    #[test]
    fn recent_deployments_newest_first() {
        let kb = KnowledgeStore::new();
        kb.index_doc(deploy("d1", "pay", 100, "one")).unwrap();
        kb.index_doc(deploy("d2", "pay", 300, "two")).unwrap();
        kb.index_doc(deploy("d3", "pay", 200, "three")).unwrap();
        kb.index_doc(deploy("x", "other", 400, "four")).unwrap();
        let got: Vec<String> = kb.recent_deployments("pay", Timestamp(150)).into_iter().map(|d| d.doc_id).collect();
        assert_eq!(got, ["d2", "d3"]);
        assert!(kb.recent_deployments("none", Timestamp::MIN).is_empty());
        assert_eq!(kb.recent_deployments("pay", Timestamp::MIN).len(), 3);
    }

    #[test]
    fn parses_doc_file() {
        let text = "kind: deployment\nservice: pricing\ncommit_id: abc123\ndeployed_at: 2025-01-06T10:00:00Z\ntitle: Pricing rollout\n\nRefactor discount rules.\n";
        let d = parse_doc("pricing-abc123", text).unwrap();
        assert_eq!(d.kind, DocKind::Deployment);
        assert_eq!(d.service.as_deref(), Some("pricing"));
        assert_eq!(d.meta["commit_id"], "abc123");
        assert_eq!(d.deployed_at(), Timestamp::parse_rfc3339("2025-01-06T10:00:00Z"));
        assert_eq!(d.body, "Refactor discount rules.");
        assert!(parse_doc("x", "kind: wiki\nno body").is_err());
        assert!(parse_doc("x", "kind: deployment\n\nbody").is_err());
        assert_eq!(parse_doc("pricing-abc123", &render_doc(&d)).unwrap(), d);
    }
}
