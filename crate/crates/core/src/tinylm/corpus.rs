//! Synthetic hierarchical sequences with long-range recall.
//!
//! A sequence is a run of segments. Each segment opens with a header
//! `DEF key ident` that binds a fresh key to an identifier, followed by a
//! body of filler tokens counting upward from an offset fixed by the
//! identifier. Body slots may instead hold a query `QRY key ident`, whose
//! key names a binding from an earlier segment and whose identifier is the
//! one bound there.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::SyntheticTaskConfig;
use crate::error::{Error, Result};
use crate::hier::HierPos;

pub const DEF: u32 = 0;
pub const QRY: u32 = 1;
pub const SPECIAL_TOKENS: usize = 2;

#[derive(Debug, Clone, Copy)]
pub struct Vocab {
    keys: u32,
    idents: u32,
    body: u32,
}

impl Vocab {
    pub fn new(cfg: &SyntheticTaskConfig) -> Self {
        Self {
            keys: cfg.key_vocab as u32,
            idents: cfg.ident_vocab as u32,
            body: cfg.body_vocab as u32,
        }
    }

    pub fn key(&self, i: u32) -> u32 {
        SPECIAL_TOKENS as u32 + i
    }

    pub fn ident(&self, i: u32) -> u32 {
        SPECIAL_TOKENS as u32 + self.keys + i
    }

    pub fn body(&self, i: u32) -> u32 {
        SPECIAL_TOKENS as u32 + self.keys + self.idents + i % self.body
    }

    pub fn is_key(&self, t: u32) -> bool {
        (SPECIAL_TOKENS as u32..SPECIAL_TOKENS as u32 + self.keys).contains(&t)
    }

    pub fn size(&self) -> usize {
        SPECIAL_TOKENS + (self.keys + self.idents + self.body) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub tokens: Vec<u32>,
    /// Segment ordinal of every token.
    pub segments: Vec<u32>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self {
            tokens: self.tokens[..len.min(self.len())].to_vec(),
            segments: self.segments[..len.min(self.len())].to_vec(),
        }
    }

    /// `(segment, token-within-segment)` positions with the global index.
    pub fn positions(&self) -> Vec<HierPos> {
        let mut out = Vec::with_capacity(self.len());
        let mut within = 0u64;
        for (i, &seg) in self.segments.iter().enumerate() {
            if i > 0 && self.segments[i - 1] != seg {
                within = 0;
            }
            out.push(HierPos::segmented(seg as u64, within, i as u64));
            within += 1;
        }
        out
    }
}

/// Generates one sequence of at least `min_len` tokens (when `min_len` is
/// given) or of exactly `segments_per_sequence` segments.
fn generate_sequence(cfg: &SyntheticTaskConfig, rng: &mut ChaCha8Rng, min_len: Option<usize>) -> Sequence {
    let vocab = Vocab::new(cfg);
    let mut tokens = Vec::new();
    let mut segments = Vec::new();
    let mut pool: Vec<u32> = Vec::new();
    // Per segment: (key, ident). A binding is live while no later segment
    // rebinds the same key.
    let mut bindings: Vec<(u32, u32)> = Vec::new();
    let mut live_owner: Vec<Option<usize>> = vec![None; cfg.key_vocab];

    let mut seg = 0usize;
    loop {
        let done = match min_len {
            Some(n) => tokens.len() >= n,
            None => seg >= cfg.segments_per_sequence,
        };
        if done {
            break;
        }
        if pool.is_empty() {
            pool = (0..vocab.keys).collect();
            pool.shuffle(rng);
        }
        let key = pool.pop().expect("refilled above");
        let ident = rng.random_range(0..vocab.idents);
        let live: Vec<usize> = (0..seg)
            .filter(|&s| live_owner[bindings[s].0 as usize] == Some(s))
            .collect();

        let seg_len = rng.random_range(cfg.segment_len_min..=cfg.segment_len_max);
        let mut body = Vec::with_capacity(seg_len);
        body.extend([DEF, vocab.key(key), vocab.ident(ident)]);
        let mut count = 0u32;
        while body.len() < seg_len {
            let room = seg_len - body.len();
            if room >= 3 && !live.is_empty() && rng.random_bool(cfg.recall_rate) {
                let (k, v) = bindings[live[rng.random_range(0..live.len())]];
                body.extend([QRY, vocab.key(k), vocab.ident(v)]);
            } else {
                body.push(vocab.body(ident + count));
                count += 1;
            }
        }
        body.truncate(seg_len);
        segments.extend(std::iter::repeat_n(seg as u32, body.len()));
        tokens.extend(body);
        bindings.push((key, ident));
        live_owner[key as usize] = Some(seg);
        seg += 1;
    }
    Sequence { tokens, segments }
}

/// `cfg.sequences` sequences of `cfg.segments_per_sequence` segments each.
pub fn generate_corpus(cfg: &SyntheticTaskConfig, seed: u64) -> Result<Vec<Sequence>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..cfg.sequences)
        .map(|_| generate_sequence(cfg, &mut rng, None))
        .collect())
}

/// `count` sequences of exactly `len` tokens.
pub fn generate_fixed_length(cfg: &SyntheticTaskConfig, seed: u64, count: usize, len: usize) -> Result<Vec<Sequence>> {
    cfg.validate()?;
    if len == 0 {
        return Err(Error::InvalidConfig("sequence length must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| generate_sequence(cfg, &mut rng, Some(len)).truncated(len))
        .collect())
}

/// Serialized corpus with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: SyntheticTaskConfig,
    pub vocab_size: usize,
    pub sequences: Vec<Sequence>,
}

pub const CORPUS_FORMAT: &str = "hirope-synthetic-corpus";

impl CorpusFile {
    pub fn new(config: SyntheticTaskConfig, seed: u64) -> Result<Self> {
        let sequences = generate_corpus(&config, seed)?;
        Ok(Self {
            format: CORPUS_FORMAT.into(),
            version: 1,
            seed,
            vocab_size: config.vocab_size(),
            config,
            sequences,
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.format != CORPUS_FORMAT || self.version != 1 {
            return Err(Error::Parse(format!(
                "unsupported corpus {} v{}",
                self.format, self.version
            )));
        }
        for s in &self.sequences {
            if s.tokens.len() != s.segments.len() {
                return Err(Error::Parse("corpus sequence has mismatched segment ids".into()));
            }
            if s.tokens.iter().any(|&t| t as usize >= self.vocab_size) {
                return Err(Error::Parse("corpus token outside vocabulary".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticTaskConfig {
        SyntheticTaskConfig {
            sequences: 20,
            ..SyntheticTaskConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            generate_corpus(&small(), 3).unwrap(),
            generate_corpus(&small(), 3).unwrap()
        );
        assert_ne!(
            generate_corpus(&small(), 3).unwrap(),
            generate_corpus(&small(), 4).unwrap()
        );
    }

    #[test]
    fn no_queries_without_recall() {
        let cfg = SyntheticTaskConfig {
            recall_rate: 0.0,
            ..small()
        };
        for s in generate_corpus(&cfg, 1).unwrap() {
            assert!(!s.tokens.contains(&QRY));
        }
    }

    #[test]
    fn segment_lengths_and_positions() {
        let cfg = small();
        for s in generate_corpus(&cfg, 9).unwrap() {
            let pos = s.positions();
            let mut lens = vec![0usize; cfg.segments_per_sequence];
            for p in &pos {
                lens[p.levels()[0] as usize] += 1;
            }
            assert!(lens
                .iter()
                .all(|l| (cfg.segment_len_min..=cfg.segment_len_max).contains(l)));
            assert!(pos.iter().enumerate().all(|(i, p)| p.global() == i as u64));
            // every segment opens with a header
            for (i, p) in pos.iter().enumerate() {
                assert_eq!(p.token() == 0, s.tokens[i] == DEF);
            }
        }
    }

    #[test]
    fn fixed_length_sequences() {
        let seqs = generate_fixed_length(&small(), 5, 3, 300).unwrap();
        assert!(seqs.iter().all(|s| s.len() == 300));
        assert!(seqs[0].segments.last().unwrap() > &10);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SyntheticTaskConfig {
            segment_len_min: 1,
            ..small()
        };
        assert!(generate_corpus(&cfg, 0).is_err());
    }
}
