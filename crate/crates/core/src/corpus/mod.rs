//! Prompt ingestion, byte-level tokenization to fixed length, dataset
//! splits, and secret sampling.

pub mod secret;
pub mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvipError};

pub use secret::Secret;
pub use synth::generate_corpus;

/// Byte vocabulary (256 raw byte values) plus pad and unk sentinels.
pub const VOCAB_SIZE: usize = 258;
pub const PAD_ID: u32 = 256;
pub const UNK_ID: u32 = 257;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub source_id: String,
}

impl Prompt {
    pub fn new(text: impl Into<String>, source_id: impl Into<String>) -> Self {
        Prompt {
            text: text.into(),
            source_id: source_id.into(),
        }
    }
}

/// Fixed-length tokenized prompt. Pad positions are contiguous at the end;
/// `mask[i]` is true exactly on real (non-pad) positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Byte-level tokenization, truncated or padded to exactly `t` ids.
/// Total on all UTF-8 input; empty prompts become all-pad sequences.
pub fn tokenize_and_pad(prompt: &Prompt, t: usize) -> TokenSequence {
    let bytes = prompt.text.as_bytes();
    let real = bytes.len().min(t);
    let mut ids = Vec::with_capacity(t);
    let mut mask = Vec::with_capacity(t);
    for &b in &bytes[..real] {
        ids.push(b as u32);
        mask.push(true);
    }
    while ids.len() < t {
        ids.push(PAD_ID);
        mask.push(false);
    }
    TokenSequence { ids, mask }
}

/// Reconstructs the non-pad prefix as bytes (lossy UTF-8 for display).
pub fn detokenize(seq: &TokenSequence) -> Vec<u8> {
    seq.ids
        .iter()
        .zip(&seq.mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| id as u8)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle followed by ratio slicing; the three parts are disjoint
/// and cover the corpus.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    let sum = r_train + r_val + r_test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SvipError::InvalidArgument(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }
    if n < 3 {
        return Err(SvipError::InvalidArgument(format!(
            "corpus of {n} items is too small to split"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = crate::numerics::rng::substream(seed, "split");
    indices.shuffle(&mut rng);
    let n_train = (r_train * n as f64).floor() as usize;
    let n_val = (r_val * n as f64).floor() as usize;
    let train = indices[..n_train].to_vec();
    let validation = indices[n_train..n_train + n_val].to_vec();
    let test = indices[n_train + n_val..].to_vec();
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
    })
}

/// One prompt per line, UTF-8, LF-terminated.
pub fn save_corpus(prompts: &[Prompt], path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    for p in prompts {
        debug_assert!(!p.text.contains('\n'));
        w.write_all(p.text.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Prompt>> {
    let f = File::open(&path)?;
    let reader = BufReader::new(f);
    let mut prompts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        prompts.push(Prompt::new(line, format!("line{i}")));
    }
    Ok(prompts)
}

/// Uniform secret of `d_s` bits.
pub fn sample_secret(d_s: usize, rng: &mut impl RngCore) -> Secret {
    Secret::sample(d_s, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::substream;

    #[test]
    fn short_prompt_is_padded_with_trailing_mask() {
        let seq = tokenize_and_pad(&Prompt::new("abc", "t"), 8);
        assert_eq!(seq.len(), 8);
        assert_eq!(seq.real_len(), 3);
        assert_eq!(
            seq.mask,
            vec![true, true, true, false, false, false, false, false]
        );
        assert_eq!(&seq.ids[..3], &[97, 98, 99]);
        assert!(seq.ids[3..].iter().all(|&id| id == PAD_ID));
    }

    #[test]
    fn long_prompt_is_truncated_to_t() {
        let text: String = std::iter::repeat('x').take(50).collect();
        let seq = tokenize_and_pad(&Prompt::new(text, "t"), 48);
        assert_eq!(seq.len(), 48);
        assert_eq!(seq.real_len(), 48);
    }

    #[test]
    fn empty_prompt_is_all_pad() {
        let seq = tokenize_and_pad(&Prompt::new("", "t"), 8);
        assert_eq!(seq.real_len(), 0);
        assert!(seq.mask.iter().all(|&m| !m));
    }

    #[test]
    fn tokenize_detokenize_round_trip() {
        for text in ["hello world", "ünïcodé", "  spaces  ", "a"] {
            let seq = tokenize_and_pad(&Prompt::new(text, "t"), 64);
            let bytes = detokenize(&seq);
            let re = tokenize_and_pad(
                &Prompt::new(String::from_utf8(bytes).unwrap(), "t"),
                64,
            );
            assert_eq!(seq, re);
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let s = split_dataset(10, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.validation.len(), 1);
        assert_eq!(s.test.len(), 1);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let a = split_dataset(1000, (0.8, 0.1, 0.1), 7).unwrap();
        let b = split_dataset(1000, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a.train, b.train);
        let c = split_dataset(1000, (0.8, 0.1, 0.1), 8).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn tiny_corpus_rejected() {
        assert!(split_dataset(2, (0.8, 0.1, 0.1), 1).is_err());
    }

    #[test]
    fn secret_bit_mean_is_near_half() {
        let mut rng = substream(5, "secrets");
        let n = 10_000;
        let mut ones = 0usize;
        for _ in 0..n {
            let s = sample_secret(16, &mut rng);
            ones += s.bits().iter().filter(|&&b| b == 1).count();
        }
        let mean = ones as f64 / (n * 16) as f64;
        assert!((0.47..=0.53).contains(&mean), "bit mean {mean}");
    }

    #[test]
    fn secret_collisions_match_birthday_chance() {
        // P(collision per pair) = 2^-16; over 10k independent pairs the
        // expected count is ~0.15, so more than 3 collisions would be off
        // by over an order of magnitude.
        let mut rng = substream(6, "collide");
        let mut collisions = 0;
        for _ in 0..10_000 {
            let a = sample_secret(16, &mut rng);
            let b = sample_secret(16, &mut rng);
            if a == b {
                collisions += 1;
            }
        }
        assert!(collisions <= 3, "collisions {collisions}");
    }
}
