//! Deterministic offline scorer for tests and dry runs.
//!
//! A sentence is split into word and punctuation tokens. Each token gets a
//! log probability in `[-5.0, -0.1]` derived from SHA-256 of the seed and
//! the token text. On top of that, every `(object, room, bonus)` entry of the
//! bonus table whose object label occurs before ` is called ` and whose room
//! label occurs after it adds `bonus` to the final token. Bonuses are
//! bounded by [`MAX_BONUS`] in magnitude, so the final token may exceed zero
//! by at most that much; real language-model log probabilities never do.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result, ScoreError};
use crate::scene::Label;

use super::{check_sentence, SentenceScore, SentenceScorer, TokenLogProb};

pub const DEFAULT_SEED: u64 = 20220822;
pub const MAX_BONUS: f64 = 50.0;

const SPLIT_MARKER: &str = " is called ";

#[derive(Debug, Clone, PartialEq)]
pub struct PairBonus {
    pub object: Label,
    pub room: Label,
    pub bonus: f64,
}

#[derive(Debug, Clone)]
pub struct OfflineScorer {
    seed: u64,
    bonuses: Vec<PairBonus>,
    identity: String,
}

/// Reads a bonus table: `object TAB room TAB bonus` per line, `#` comments.
pub fn parse_bonus_table(text: &str, source_name: &str) -> Result<Vec<PairBonus>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        let bonus: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("invalid bonus {:?}", cols[2])))?;
        if !bonus.is_finite() || bonus.abs() > MAX_BONUS {
            return Err(err(format!("bonus must be finite with magnitude at most {MAX_BONUS}")));
        }
        out.push(PairBonus {
            object: Label::new(cols[0]),
            room: Label::new(cols[1]),
            bonus,
        });
    }
    Ok(out)
}

pub fn load_bonus_table(path: &Path) -> Result<Vec<PairBonus>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bonus_table(&text, &path.display().to_string())
}

fn tokenize(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in sentence.split_whitespace() {
        let core = word.trim_end_matches([',', '.']);
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(word[core.len()..].chars().map(String::from));
    }
    out
}

impl OfflineScorer {
    pub fn new(seed: u64, bonuses: Vec<PairBonus>) -> Self {
        let mut h = Sha256::new();
        for b in &bonuses {
            h.update(format!("{}\t{}\t{:?}\n", b.object, b.room, b.bonus));
        }
        let digest = hex::encode(h.finalize());
        let identity = format!("offline:seed={seed}:bonus={}", &digest[..12]);
        OfflineScorer {
            seed,
            bonuses,
            identity,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn token_logprob(&self, token: &str) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let d = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&d[..8]);
        let u = (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64;
        -(0.1 + 4.9 * u)
    }

    fn bonus(&self, sentence: &str) -> f64 {
        let (head, tail) = sentence.split_once(SPLIT_MARKER).unwrap_or((sentence, sentence));
        self.bonuses
            .iter()
            .filter(|b| head.contains(b.object.as_str()) && tail.contains(b.room.as_str()))
            .map(|b| b.bonus)
            .sum()
    }
}

impl SentenceScorer for OfflineScorer {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn score(&self, sentence: &str) -> std::result::Result<SentenceScore, ScoreError> {
        check_sentence(sentence)?;
        let mut tokens: Vec<TokenLogProb> = tokenize(sentence)
            .into_iter()
            .map(|t| TokenLogProb {
                logprob: Some(self.token_logprob(&t)),
                token: t,
            })
            .collect();
        if let Some(last) = tokens.last_mut() {
            last.logprob = last.logprob.map(|lp| lp + self.bonus(sentence));
        }
        SentenceScore::from_tokens(sentence, &self.identity, tokens)
    }
}
