//! Sentence scoring: total log probability of a sentence under an
//! autoregressive language model, summed over its tokens.
//!
//! Backends implement [`SentenceScorer`]. Everything downstream (proxy
//! co-occurrence, inference) only sees the trait.

pub mod cache;
pub mod offline;
pub mod remote;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ScoreError};

pub use cache::CachedScorer;
pub use offline::OfflineScorer;
pub use remote::{RemoteConfig, RemoteScorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    pub token: String,
    /// `None` for a first token the backend could not condition on.
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub sentence: String,
    pub total_logprob: f64,
    /// Number of tokens whose log probability entered the total.
    pub token_count: usize,
    pub backend: String,
    pub tokens: Option<Vec<TokenLogProb>>,
}

impl SentenceScore {
    /// Builds a score from per-token log probabilities. Absent entries are
    /// skipped and do not count toward `token_count`.
    pub fn from_tokens(
        sentence: &str,
        backend: &str,
        tokens: Vec<TokenLogProb>,
    ) -> std::result::Result<Self, ScoreError> {
        let present: Vec<f64> = tokens.iter().filter_map(|t| t.logprob).collect();
        if present.is_empty() {
            return Err(ScoreError::transport(sentence, "no token log probabilities to sum"));
        }
        Ok(SentenceScore {
            sentence: sentence.to_string(),
            total_logprob: present.iter().sum(),
            token_count: present.len(),
            backend: backend.to_string(),
            tokens: Some(tokens),
        })
    }
}

/// Anything that can assign a log probability to a sentence.
///
/// Implementations must be deterministic per [`identity`](Self::identity)
/// and callable from several threads at once.
pub trait SentenceScorer: Send + Sync {
    fn identity(&self) -> String;

    fn score(&self, sentence: &str) -> std::result::Result<SentenceScore, ScoreError>;

    /// Scores each sentence in order. A failure occupies its own slot and
    /// does not stop the rest of the batch.
    fn score_batch(&self, sentences: &[String]) -> Vec<std::result::Result<SentenceScore, ScoreError>> {
        sentences.iter().map(|s| self.score(s)).collect()
    }
}

impl<S: SentenceScorer + ?Sized> SentenceScorer for &S {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn score(&self, sentence: &str) -> std::result::Result<SentenceScore, ScoreError> {
        (**self).score(sentence)
    }

    fn score_batch(&self, sentences: &[String]) -> Vec<std::result::Result<SentenceScore, ScoreError>> {
        (**self).score_batch(sentences)
    }
}

impl<S: SentenceScorer + ?Sized> SentenceScorer for Box<S> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn score(&self, sentence: &str) -> std::result::Result<SentenceScore, ScoreError> {
        (**self).score(sentence)
    }

    fn score_batch(&self, sentences: &[String]) -> Vec<std::result::Result<SentenceScore, ScoreError>> {
        (**self).score_batch(sentences)
    }
}

pub(crate) fn check_sentence(sentence: &str) -> std::result::Result<(), ScoreError> {
    if sentence.is_empty() {
        Err(ScoreError::EmptySentence)
    } else {
        Ok(())
    }
}

/// Per-token perplexity, `exp(-total / token_count)`.
pub fn perplexity(score: &SentenceScore) -> Result<f64> {
    if score.token_count == 0 {
        return Err(Error::param("perplexity of a sentence with no scored tokens"));
    }
    Ok((-score.total_logprob / score.token_count as f64).exp())
}
