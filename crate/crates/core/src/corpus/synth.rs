//! Built-in synthetic prompt generator: seeded Markov babble over byte
//! bigram contexts, so the repo has no external data dependency.

use rand::Rng;

use crate::numerics::rng::substream_indexed;

use super::Prompt;

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz .,";
const SUCCESSORS: usize = 5;

/// Deterministic successor table: each (prev, cur) context maps to a few
/// allowed next bytes with fixed weights, all derived from the seed.
struct BabbleChain {
    table: Vec<[(u8, f64); SUCCESSORS]>,
}

impl BabbleChain {
    fn new(seed: u64) -> Self {
        let k = ALPHABET.len();
        let mut rng = substream_indexed(seed, "babble-table", 0);
        let mut table = Vec::with_capacity(k * k);
        for _ in 0..k * k {
            let mut entry = [(0u8, 0.0f64); SUCCESSORS];
            let mut total = 0.0;
            for slot in entry.iter_mut() {
                let next = ALPHABET[rng.gen_range(0..k)];
                let w: f64 = rng.gen_range(0.05..1.0);
                *slot = (next, w);
                total += w;
            }
            for slot in entry.iter_mut() {
                slot.1 /= total;
            }
            table.push(entry);
        }
        BabbleChain { table }
    }

    fn index(prev: u8, cur: u8) -> usize {
        let pos = |b: u8| ALPHABET.iter().position(|&a| a == b).unwrap_or(0);
        pos(prev) * ALPHABET.len() + pos(cur)
    }

    fn next(&self, prev: u8, cur: u8, rng: &mut impl Rng) -> u8 {
        let entry = &self.table[Self::index(prev, cur)];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(b, w) in entry {
            acc += w;
            if u < acc {
                return b;
            }
        }
        entry[SUCCESSORS - 1].0
    }
}

/// `n` prompts of 24..=120 bytes each, deterministic under the seed.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<Prompt> {
    let chain = BabbleChain::new(seed);
    (0..n)
        .map(|i| {
            let mut rng = substream_indexed(seed, "babble-prompt", i as u64);
            let len = rng.gen_range(24..=120);
            let mut bytes = Vec::with_capacity(len);
            let mut prev = ALPHABET[rng.gen_range(0..ALPHABET.len())];
            let mut cur = ALPHABET[rng.gen_range(0..ALPHABET.len())];
            bytes.push(cur);
            while bytes.len() < len {
                let next = chain.next(prev, cur, &mut rng);
                bytes.push(next);
                prev = cur;
                cur = next;
            }
            let text = String::from_utf8(bytes).expect("alphabet is ASCII");
            Prompt::new(text.trim().to_string(), format!("synth{i}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_varied() {
        let a = generate_corpus(50, 3);
        let b = generate_corpus(50, 3);
        assert_eq!(a.len(), 50);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.text, y.text);
        }
        let distinct: std::collections::HashSet<&str> =
            a.iter().map(|p| p.text.as_str()).collect();
        assert!(distinct.len() > 45, "only {} distinct prompts", distinct.len());
        let c = generate_corpus(50, 4);
        assert_ne!(a[0].text, c[0].text);
    }

    #[test]
    fn prompts_are_single_line_and_nonempty() {
        for p in generate_corpus(100, 9) {
            assert!(!p.text.contains('\n'));
            assert!(!p.text.is_empty());
        }
    }
}
