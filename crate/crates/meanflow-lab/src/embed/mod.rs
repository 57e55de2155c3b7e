//! Representation-quality toolkit over embedding corpora.
//!
//! Mean pooling along the sequence dimension, the cosine measure, similarity
//! retrieval, retrieval-based discriminability (scored in the vision-backbone
//! space), and ablation-based disentanglement. Retrieval defaults to
//! text-to-text over pooled caption embeddings; text-to-image is an explicit
//! mode valid when the corpus carries image embeddings of the same dimension.

pub mod corpus;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use corpus::{Corpus, CorpusHeader, EmbeddingRecord};
pub use synth::{
    gen_synthetic_embeddings, synthetic_corpus, EmbedMode, EmbeddingTable, SyntheticEmbedSpec,
};

use crate::error::{Error, Result};
use crate::numcore::{hash_bytes, norm, seed_chain, Rng};

/// `h(x) = (1 / L_seq) sum_t e_t`: mean pooling along the sequence dimension.
pub fn mean_pool(token_embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = token_embeddings
        .first()
        .ok_or_else(|| Error::InvalidArg("mean_pool: empty token sequence".into()))?;
    let mut acc = vec![0.0; first.len()];
    for tok in token_embeddings {
        for (a, v) in acc.iter_mut().zip(tok) {
            *a += v;
        }
    }
    let inv = 1.0 / token_embeddings.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Cosine similarity `<a, b> / (||a|| ||b||)`; zero-norm operands are an
/// error.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "cosine",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArg("cosine: zero-norm vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Cosine distance `1 - cosine_similarity`, in `[0, 2]`. The two are exposed
/// side by side and sum to one identically.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    /// Pooled text embedding of the query against pooled text embeddings of
    /// the corpus (the default; valid for any encoder).
    TextText,
    /// Pooled text embedding of the query against image embeddings; requires
    /// matching dimensions (a jointly trained encoder).
    TextImage,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: String,
    pub similarity: f64,
}

/// Top-k corpus records by cosine similarity to the query, ties broken by
/// ascending id. The query itself is not excluded when it is part of the
/// corpus; a record identical to the query therefore ranks first.
pub fn retrieve_topk(
    query: &EmbeddingRecord,
    corpus: &Corpus,
    k: usize,
    mode: RetrievalMode,
) -> Result<Vec<RetrievalHit>> {
    if k == 0 {
        return Err(Error::InvalidArg("retrieve_topk: k must be >= 1".into()));
    }
    let pooled_query = mean_pool(&query.token_embeddings)?;
    let mut scored = Vec::with_capacity(corpus.records.len());
    for rec in &corpus.records {
        let similarity = match mode {
            RetrievalMode::TextText => {
                let pooled = mean_pool(&rec.token_embeddings)?;
                cosine_similarity(&pooled_query, &pooled)?
            }
            RetrievalMode::TextImage => {
                let img = rec.image_embedding.as_ref().ok_or_else(|| {
                    Error::Format(format!("record {:?} has no image embedding", rec.id))
                })?;
                if img.len() != pooled_query.len() {
                    return Err(Error::Shape {
                        op: "retrieve_topk(text-image)",
                        lhs: vec![pooled_query.len()],
                        rhs: vec![img.len()],
                    });
                }
                cosine_similarity(&pooled_query, img)?
            }
        };
        scored.push(RetrievalHit {
            id: rec.id.clone(),
            similarity,
        });
    }
    scored.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("similarities are finite")
            .then_with(|| a.id.cmp(&b.id))
    });
    scored.truncate(k);
    Ok(scored)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscriminabilityReport {
    pub score: f64,
    pub k: usize,
    pub mode: RetrievalMode,
    pub per_query: Vec<(String, f64)>,
}

/// Retrieval-based discriminability: for each query, retrieve the top-k
/// records, then score the mean cosine similarity between the vision-backbone
/// embeddings of the retrieved records and the query. High scores mean the
/// text space ranks visually similar pairs together.
pub fn discriminability_score(
    corpus: &Corpus,
    query_ids: &[String],
    k: usize,
    mode: RetrievalMode,
) -> Result<DiscriminabilityReport> {
    let mut per_query = Vec::with_capacity(query_ids.len());
    let mut missing: Vec<String> = Vec::new();
    let mut retrievals = Vec::with_capacity(query_ids.len());
    for qid in query_ids {
        let query = corpus
            .get(qid)
            .ok_or_else(|| Error::UnknownCondition(qid.clone()))?;
        if query.vision_embedding.is_none() && !missing.contains(qid) {
            missing.push(qid.clone());
        }
        let hits = retrieve_topk(query, corpus, k, mode)?;
        for h in &hits {
            let rec = corpus.get(&h.id).expect("retrieved from this corpus");
            if rec.vision_embedding.is_none() && !missing.contains(&rec.id) {
                missing.push(rec.id.clone());
            }
        }
        retrievals.push((qid.clone(), hits));
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingVision { ids: missing });
    }
    let mut total = 0.0;
    for (qid, hits) in retrievals {
        let qvis = corpus.get(&qid).unwrap().vision_embedding.as_ref().unwrap();
        let mut acc = 0.0;
        for h in &hits {
            let rvis = corpus.get(&h.id).unwrap().vision_embedding.as_ref().unwrap();
            acc += cosine_similarity(rvis, qvis)?;
        }
        let q_score = acc / hits.len() as f64;
        total += q_score;
        per_query.push((qid, q_score));
    }
    Ok(DiscriminabilityReport {
        score: total / per_query.len() as f64,
        k,
        mode,
        per_query,
    })
}

/// Seeded uniform query subset of a corpus, by record index without
/// replacement; the sampling protocol for discriminability runs.
pub fn select_queries(corpus: &Corpus, count: usize, seed: u64) -> Vec<String> {
    let mut rng = Rng::seed(seed_chain(seed, &[0x71]));
    let n = corpus.records.len();
    let picked = rng.choose_indices(n, count.min(n));
    picked.iter().map(|&i| corpus.records[i].id.clone()).collect()
}

fn removal_count(seq_len: usize, rho: f64) -> Result<usize> {
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::InvalidArg(format!("ablation fraction must be in (0,1), got {rho}")));
    }
    if seq_len < 2 {
        return Err(Error::InvalidArg(
            "ablate_tokens needs at least 2 tokens".into(),
        ));
    }
    // round(rho * L), keeping at least one token.
    Ok(((rho * seq_len as f64).round() as usize).min(seq_len - 1))
}

/// Removes `round(rho * L)` token positions chosen uniformly without
/// replacement (at least one token always retained).
pub fn ablate_tokens(record: &EmbeddingRecord, rho: f64, rng: &mut Rng) -> Result<EmbeddingRecord> {
    let l = record.seq_len();
    let k = removal_count(l, rho)?;
    let removed = rng.choose_indices(l, k);
    Ok(strip_positions(record, &removed))
}

fn strip_positions(record: &EmbeddingRecord, removed_sorted: &[usize]) -> EmbeddingRecord {
    let mut kept = Vec::with_capacity(record.seq_len() - removed_sorted.len());
    let mut rm = removed_sorted.iter().peekable();
    for (i, tok) in record.token_embeddings.iter().enumerate() {
        if rm.peek() == Some(&&i) {
            rm.next();
            continue;
        }
        kept.push(tok.clone());
    }
    EmbeddingRecord {
        id: record.id.clone(),
        token_embeddings: kept,
        image_embedding: record.image_embedding.clone(),
        vision_embedding: record.vision_embedding.clone(),
        text: record.text.clone(),
    }
}

/// Token-value-keyed ablation used by [`disentanglement_score`]: each token
/// gets the key `seed_chain(record_seed, [fnv1a(token bytes)])` with
/// `record_seed = seed_chain(base_seed, [fnv1a(record id)])`, and the
/// `round(rho * L)` smallest keys are removed. Keys depend on token values
/// rather than positions, so permuting the token order removes the same
/// multiset of tokens and the score is order-invariant; duplicate tokens
/// share a key and are interchangeable.
fn ablate_tokens_keyed(record: &EmbeddingRecord, rho: f64, base_seed: u64) -> Result<EmbeddingRecord> {
    let l = record.seq_len();
    let k = removal_count(l, rho)?;
    let record_seed = seed_chain(base_seed, &[hash_bytes(record.id.as_bytes())]);
    let mut keys: Vec<(u64, usize)> = record
        .token_embeddings
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let mut bytes = Vec::with_capacity(tok.len() * 8);
            for v in tok {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            (seed_chain(record_seed, &[hash_bytes(&bytes)]), i)
        })
        .collect();
    keys.sort_unstable();
    let mut removed: Vec<usize> = keys[..k].iter().map(|&(_, i)| i).collect();
    removed.sort_unstable();
    Ok(strip_positions(record, &removed))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisentanglementReport {
    pub score: f64,
    pub rho: f64,
    pub per_record: Vec<(String, f64)>,
}

/// Ablation-based disentanglement: mean over records of the cosine
/// similarity between the pooled original and the pooled ablated sequence.
/// Removal is re-seeded per record from the record id (see
/// `ablate_tokens_keyed`), making the score reproducible and invariant to
/// token order.
pub fn disentanglement_score(corpus: &Corpus, rho: f64, seed: u64) -> Result<DisentanglementReport> {
    let mut per_record = Vec::with_capacity(corpus.records.len());
    let mut total = 0.0;
    for rec in &corpus.records {
        let ablated = ablate_tokens_keyed(rec, rho, seed)?;
        let a = mean_pool(&rec.token_embeddings)?;
        let b = mean_pool(&ablated.token_embeddings)?;
        let sim = cosine_similarity(&a, &b)?;
        total += sim;
        per_record.push((rec.id.clone(), sim));
    }
    if per_record.is_empty() {
        return Err(Error::InvalidArg("disentanglement_score: empty corpus".into()));
    }
    Ok(DisentanglementReport {
        score: total / per_record.len() as f64,
        rho,
        per_record,
    })
}
