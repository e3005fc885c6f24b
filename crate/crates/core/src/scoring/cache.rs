//! Append-only on-disk score cache.
//!
//! Each line is `backend id TAB sha256(sentence) TAB sentence TAB
//! total_logprob TAB token_count`. Lines from other backends, lines whose
//! hash does not match, and a torn final line left by an interrupted run are
//! ignored on load. Cached scores carry no per-token breakdown.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result, ScoreError};

use super::{SentenceScore, SentenceScorer};

pub const CACHE_FILE_NAME: &str = "scores.tsv";

pub fn sentence_hash(sentence: &str) -> String {
    hex::encode(Sha256::digest(sentence.as_bytes()))
}

pub struct CachedScorer<S> {
    inner: S,
    identity: String,
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, (f64, usize)>>,
    file: Mutex<Option<File>>,
}

fn parse_line(line: &str, backend: &str) -> Option<(String, f64, usize)> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 5 || cols[0] != backend {
        return None;
    }
    if sentence_hash(cols[2]) != cols[1] {
        return None;
    }
    let total: f64 = cols[3].parse().ok()?;
    let count: usize = cols[4].parse().ok()?;
    (total.is_finite() && count > 0).then(|| (cols[2].to_string(), total, count))
}

impl<S: SentenceScorer> CachedScorer<S> {
    /// In-memory cache only.
    pub fn in_memory(inner: S) -> Self {
        CachedScorer {
            identity: inner.identity(),
            inner,
            path: None,
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    /// Cache backed by `dir/scores.tsv`; existing entries for this backend
    /// are loaded and new ones appended.
    pub fn open(inner: S, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CACHE_FILE_NAME);
        let identity = inner.identity();
        let mut entries = HashMap::new();
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(|e| Error::io(&path, e))?;
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        for line in complete.lines() {
            if let Some((sentence, total, count)) = parse_line(line, &identity) {
                entries.insert(sentence, (total, count));
            }
        }
        if complete.len() != text.len() {
            log::warn!("{}: ignoring torn final line", path.display());
            file.seek(SeekFrom::End(0)).map_err(|e| Error::io(&path, e))?;
            file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(CachedScorer {
            inner,
            identity,
            path: Some(path),
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    fn record(&self, score: &SentenceScore) {
        if score.sentence.contains(['\t', '\n', '\r']) {
            return;
        }
        self.entries
            .lock()
            .unwrap()
            .insert(score.sentence.clone(), (score.total_logprob, score.token_count));
        let mut file = self.file.lock().unwrap();
        if let Some(f) = file.as_mut() {
            let line = format!(
                "{}\t{}\t{}\t{:?}\t{}\n",
                self.identity,
                sentence_hash(&score.sentence),
                score.sentence,
                score.total_logprob,
                score.token_count
            );
            if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
                log::warn!("score cache write failed: {e}");
            }
        }
    }
}

impl<S: SentenceScorer> SentenceScorer for CachedScorer<S> {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn score(&self, sentence: &str) -> std::result::Result<SentenceScore, ScoreError> {
        super::check_sentence(sentence)?;
        if let Some(&(total, count)) = self.entries.lock().unwrap().get(sentence) {
            return Ok(SentenceScore {
                sentence: sentence.to_string(),
                total_logprob: total,
                token_count: count,
                backend: self.identity.clone(),
                tokens: None,
            });
        }
        let score = self.inner.score(sentence)?;
        self.record(&score);
        Ok(score)
    }
}
