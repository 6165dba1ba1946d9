//! Seeded synthetic corpora with Zipfian word frequencies.
//!
//! Every word belongs to one topic. A sentence picks a topic and then draws
//! each token either from that topic's words or from the whole vocabulary,
//! both weighted by the global Zipf law. Co-occurrence therefore carries
//! topic structure at every frequency level, which is what skip-gram needs to
//! learn anything, while counts stay heavy-tailed.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZipfCorpusConfig {
    pub vocab_size: usize,
    pub tokens: usize,
    pub topics: usize,
    /// Zipf exponent `s` in `p(rank) ∝ 1 / rank^s`.
    pub exponent: f64,
    /// Probability that a token comes from the sentence topic.
    pub topic_weight: f64,
    pub sentence_len: usize,
    pub seed: u64,
}

impl Default for ZipfCorpusConfig {
    fn default() -> Self {
        ZipfCorpusConfig {
            vocab_size: 5000,
            tokens: 1_000_000,
            topics: 50,
            exponent: 1.0,
            topic_weight: 0.7,
            sentence_len: 20,
            seed: 7,
        }
    }
}

/// Name of the word with the given 0-based frequency rank.
pub fn word_name(rank: usize) -> String {
    format!("w{rank}")
}

/// Topic of the word with the given rank.
pub fn topic_of(rank: usize, topics: usize) -> usize {
    rank % topics
}

pub fn zipf_corpus(config: &ZipfCorpusConfig) -> Result<String> {
    if config.vocab_size < 2 || config.topics == 0 || config.topics > config.vocab_size {
        return Err(Error::invalid("need at least 2 words and 1..=vocab_size topics"));
    }
    if config.sentence_len == 0 || !(0.0..=1.0).contains(&config.topic_weight) {
        return Err(Error::invalid("bad sentence length or topic weight"));
    }
    let weight = |r: usize| ((r + 1) as f64).powf(-config.exponent);
    let global = WeightedIndex::new((0..config.vocab_size).map(weight))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let members: Vec<Vec<usize>> = (0..config.topics)
        .map(|t| (t..config.vocab_size).step_by(config.topics).collect())
        .collect();
    let per_topic: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&r| weight(r))).expect("non-empty topic"))
        .collect();

    let names: Vec<String> = (0..config.vocab_size).map(word_name).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = String::with_capacity(config.tokens * 6);
    let mut produced = 0;
    while produced < config.tokens {
        let topic = rng.gen_range(0..config.topics);
        let len = config.sentence_len.min(config.tokens - produced);
        for i in 0..len {
            let rank = if rng.gen::<f64>() < config.topic_weight {
                members[topic][per_topic[topic].sample(&mut rng)]
            } else {
                global.sample(&mut rng)
            };
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&names[rank]);
        }
        out.push('\n');
        produced += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let c = ZipfCorpusConfig {
            vocab_size: 100,
            tokens: 5000,
            topics: 5,
            ..ZipfCorpusConfig::default()
        };
        let a = zipf_corpus(&c).unwrap();
        assert_eq!(a, zipf_corpus(&c).unwrap());
        assert_eq!(a.split_whitespace().count(), 5000);
    }

    #[test]
    fn counts_fall_with_rank() {
        let c = ZipfCorpusConfig {
            vocab_size: 50,
            tokens: 50_000,
            topics: 5,
            ..ZipfCorpusConfig::default()
        };
        let text = zipf_corpus(&c).unwrap();
        let count = |w: &str| text.split_whitespace().filter(|t| *t == w).count();
        assert!(count("w0") > count("w10"));
        assert!(count("w10") > count("w45"));
    }
}
