//! Embedding corpora on disk.
//!
//! A corpus file is JSONL: the first line is a metadata header carrying the
//! dims and a format version, each following line is one record with a token
//! embedding sequence and optional paired image / vision-backbone embeddings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    /// `L_seq x dim`, `L_seq >= 1`.
    pub token_embeddings: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding: Option<Vec<f64>>,
    /// Strong vision-backbone features of the paired image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl EmbeddingRecord {
    pub fn seq_len(&self) -> usize {
        self.token_embeddings.len()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format_version: u32,
    /// Token-embedding dimension, uniform across the corpus.
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision_dim: Option<usize>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub records: Vec<EmbeddingRecord>,
}

impl Corpus {
    /// Builds a corpus from records, deriving and validating the header.
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Corpus> {
        if records.is_empty() {
            return Err(Error::Format("corpus has no records".into()));
        }
        let dim = records[0]
            .token_embeddings
            .first()
            .map(|t| t.len())
            .ok_or_else(|| Error::Format("first record has an empty token sequence".into()))?;
        let image_dim = records
            .iter()
            .find_map(|r| r.image_embedding.as_ref().map(|v| v.len()));
        let vision_dim = records
            .iter()
            .find_map(|r| r.vision_embedding.as_ref().map(|v| v.len()));
        let header = CorpusHeader {
            format_version: CORPUS_FORMAT_VERSION,
            dim,
            image_dim,
            vision_dim,
            count: records.len(),
        };
        let corpus = Corpus { header, records };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for rec in &self.records {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::Format(format!("duplicate record id {:?}", rec.id)));
            }
            if rec.token_embeddings.is_empty() {
                return Err(Error::Format(format!(
                    "record {:?} has an empty token sequence",
                    rec.id
                )));
            }
            for tok in &rec.token_embeddings {
                if tok.len() != self.header.dim {
                    return Err(Error::Format(format!(
                        "record {:?}: token dim {} does not match corpus dim {}",
                        rec.id,
                        tok.len(),
                        self.header.dim
                    )));
                }
                if tok.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("token embeddings of record {:?}", rec.id),
                    });
                }
            }
            for (name, opt, want) in [
                ("image_embedding", &rec.image_embedding, self.header.image_dim),
                ("vision_embedding", &rec.vision_embedding, self.header.vision_dim),
            ] {
                if let Some(v) = opt {
                    if Some(v.len()) != want {
                        return Err(Error::Format(format!(
                            "record {:?}: {name} dim {} does not match header {:?}",
                            rec.id,
                            v.len(),
                            want
                        )));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite {
                            context: format!("{name} of record {:?}", rec.id),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: empty corpus file", path.display())))?;
        let header: CorpusHeader = serde_json::from_str(header_line)?;
        if header.format_version != CORPUS_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported corpus format_version {}",
                header.format_version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<EmbeddingRecord>(line)?);
        }
        let corpus = Corpus { header, records };
        corpus.validate()?;
        if corpus.records.len() != corpus.header.count {
            return Err(Error::Format(format!(
                "corpus header count {} does not match {} records",
                corpus.header.count,
                corpus.records.len()
            )));
        }
        Ok(corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, tokens: Vec<Vec<f64>>) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.to_string(),
            token_embeddings: tokens,
            image_embedding: None,
            vision_embedding: Some(vec![1.0, 0.0]),
            text: Some(format!("record {id}")),
        }
    }

    #[test]
    fn roundtrip_through_jsonl() {
        let corpus = Corpus::from_records(vec![
            record("a", vec![vec![1.0, 2.0], vec![3.0, 4.0]]),
            record("b", vec![vec![0.5, -0.5]]),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        corpus.save(&path).unwrap();
        let back = Corpus::load(&path).unwrap();
        assert_eq!(back.records.len(), 2);
        assert_eq!(back.header.dim, 2);
        assert_eq!(back.records[0].token_embeddings[1][0].to_bits(), 3.0f64.to_bits());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let res = Corpus::from_records(vec![
            record("a", vec![vec![1.0]]),
            record("a", vec![vec![2.0]]),
        ]);
        assert!(res.is_err());
    }

    #[test]
    fn ragged_dims_rejected() {
        let res = Corpus::from_records(vec![
            record("a", vec![vec![1.0, 2.0]]),
            record("b", vec![vec![1.0]]),
        ]);
        assert!(res.is_err());
    }
}
