//! Corpus analysis command: discriminability and disentanglement reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{
    discriminability_score, disentanglement_score, select_queries, Corpus, RetrievalMode,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyzeMetric {
    Discriminability,
    Disentanglement,
}

impl AnalyzeMetric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "discriminability" => Ok(AnalyzeMetric::Discriminability),
            "disentanglement" => Ok(AnalyzeMetric::Disentanglement),
            other => Err(Error::InvalidArg(format!(
                "unknown metric {other:?}, expected discriminability|disentanglement"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AnalyzeOptions {
    pub metric: AnalyzeMetric,
    /// Retrieval depth (discriminability).
    pub k: usize,
    /// Ablation fraction (disentanglement).
    pub rho: f64,
    pub seed: u64,
    /// Size of the seeded uniform query subset (discriminability).
    pub query_count: usize,
    pub mode: RetrievalMode,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            metric: AnalyzeMetric::Discriminability,
            k: 2,
            rho: 0.3,
            seed: 0,
            query_count: 100,
            mode: RetrievalMode::TextText,
        }
    }
}

/// Analysis report: the scalar score plus a per-query / per-record breakdown.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub metric: AnalyzeMetric,
    pub score: f64,
    pub corpus_records: usize,
    pub breakdown: Vec<(String, f64)>,
}

pub fn analyze_corpus(corpus: &Corpus, opts: &AnalyzeOptions) -> Result<AnalyzeReport> {
    match opts.metric {
        AnalyzeMetric::Discriminability => {
            let queries = select_queries(corpus, opts.query_count, opts.seed);
            let report = discriminability_score(corpus, &queries, opts.k, opts.mode)?;
            Ok(AnalyzeReport {
                metric: opts.metric,
                score: report.score,
                corpus_records: corpus.records.len(),
                breakdown: report.per_query,
            })
        }
        AnalyzeMetric::Disentanglement => {
            let report = disentanglement_score(corpus, opts.rho, opts.seed)?;
            Ok(AnalyzeReport {
                metric: opts.metric,
                score: report.score,
                corpus_records: corpus.records.len(),
                breakdown: report.per_record,
            })
        }
    }
}

pub fn analyze_corpus_file(path: &Path, opts: &AnalyzeOptions) -> Result<AnalyzeReport> {
    let corpus = Corpus::load(path)?;
    analyze_corpus(&corpus, opts)
}
