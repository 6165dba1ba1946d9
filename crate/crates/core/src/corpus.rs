//! Corpus ingestion, vocabulary statistics and the sampling tables used
//! during training.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;

use crate::{Error, Result};

/// Longest run of tokens treated as one sentence; longer lines are split.
pub const MAX_SENTENCE_LEN: usize = 1000;

/// Words of a corpus with their occurrence counts.
///
/// Indices are dense and ordered by descending count, ties broken by the
/// lexicographic order of the word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    total_tokens: u64,
    min_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit `(word, count)` entries.
    ///
    /// `total_tokens` counts every token seen in the corpus, including the
    /// ones dropped by `min_count`; it must be at least the retained sum.
    pub fn from_counts(
        entries: impl IntoIterator<Item = (String, u64)>,
        total_tokens: u64,
        min_count: u64,
    ) -> Result<Self> {
        let mut entries: Vec<(String, u64)> = entries
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut index = HashMap::with_capacity(entries.len());
        for (i, (w, _)) in entries.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary word {w:?}")));
            }
        }
        let (words, counts): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let retained: u64 = counts.iter().sum();
        if total_tokens < retained {
            return Err(Error::invalid(format!(
                "total_tokens {total_tokens} below retained token count {retained}"
            )));
        }
        Ok(Vocabulary {
            words,
            counts,
            index,
            total_tokens,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, idx: usize) -> u64 {
        self.counts[idx]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Every token of the corpus, including those below `min_count`.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Tokens belonging to retained words.
    pub fn retained_tokens(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Writes `word<TAB>count` lines in index order.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        for (w, c) in self.words.iter().zip(&self.counts) {
            writeln!(out, "{w}\t{c}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Vocabulary::write_dump`].
    pub fn read_dump<R: BufRead>(input: R, source_name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: lineno + 1,
                message,
            };
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected word<TAB>count".into()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad count {count:?}: {e}")))?;
            entries.push((word.to_string(), count));
        }
        let total = entries.iter().map(|(_, c)| c).sum();
        Vocabulary::from_counts(entries, total, 1)
    }
}

/// Counts whitespace-separated tokens and keeps words seen at least
/// `min_count` times.
pub fn build_vocabulary<I, S>(tokens: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count < 1 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut total = 0u64;
    for tok in tokens {
        let tok = tok.as_ref();
        total += 1;
        match counts.get_mut(tok) {
            Some(c) => *c += 1,
            None => {
                counts.insert(tok.to_string(), 1);
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    Vocabulary::from_counts(counts, total, min_count)
}

/// Splits text into tokens on Unicode whitespace.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// The corpus as vocabulary indices, one entry per sentence.
///
/// Out-of-vocabulary tokens are dropped before windowing. Lines longer
/// than [`MAX_SENTENCE_LEN`] are split into several sentences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedCorpus {
    sentences: Vec<Vec<u32>>,
}

impl IndexedCorpus {
    pub fn from_lines<'a>(
        lines: impl IntoIterator<Item = &'a str>,
        vocab: &Vocabulary,
        lowercase: bool,
    ) -> Self {
        let mut sentences = Vec::new();
        for line in lines {
            let ids: Vec<u32> = tokenize(line, lowercase)
                .iter()
                .filter_map(|t| vocab.index_of(t).map(|i| i as u32))
                .collect();
            for chunk in ids.chunks(MAX_SENTENCE_LEN) {
                sentences.push(chunk.to_vec());
            }
        }
        IndexedCorpus { sentences }
    }

    pub fn from_sentences(sentences: Vec<Vec<u32>>) -> Self {
        IndexedCorpus { sentences }
    }

    pub fn sentences(&self) -> &[Vec<u32>] {
        &self.sentences
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Popular/rare split of a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPartition {
    popular: Vec<usize>,
    rare: Vec<usize>,
    is_popular: Vec<bool>,
    fraction: f64,
}

impl FrequencyPartition {
    /// Builds a partition from an explicit popular mask.
    pub fn from_mask(is_popular: Vec<bool>, fraction: f64) -> Result<Self> {
        let popular: Vec<usize> = (0..is_popular.len()).filter(|&i| is_popular[i]).collect();
        let rare: Vec<usize> = (0..is_popular.len()).filter(|&i| !is_popular[i]).collect();
        if popular.is_empty() || rare.is_empty() {
            return Err(Error::DegeneratePartition {
                popular: popular.len(),
                rare: rare.len(),
            });
        }
        Ok(FrequencyPartition {
            popular,
            rare,
            is_popular,
            fraction,
        })
    }

    /// Sorted indices of popular words.
    pub fn popular(&self) -> &[usize] {
        &self.popular
    }

    /// Sorted indices of rare words.
    pub fn rare(&self) -> &[usize] {
        &self.rare
    }

    pub fn is_popular(&self, idx: usize) -> bool {
        self.is_popular[idx]
    }

    pub fn is_rare(&self, idx: usize) -> bool {
        !self.is_popular[idx]
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn len(&self) -> usize {
        self.is_popular.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_popular.is_empty()
    }
}

/// Marks the `round(fraction * |V|)` most frequent words as popular.
pub fn partition_by_frequency(vocab: &Vocabulary, fraction: f64) -> Result<FrequencyPartition> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "popular fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = vocab.len();
    let n_popular = (fraction * n as f64).round() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        vocab
            .count(b)
            .cmp(&vocab.count(a))
            .then_with(|| vocab.word(a).cmp(vocab.word(b)))
    });
    let mut mask = vec![false; n];
    for &i in &order[..n_popular.min(n)] {
        mask[i] = true;
    }
    FrequencyPartition::from_mask(mask, fraction)
}

/// Unigram table for drawing negative samples with probability
/// proportional to `count^alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeTable {
    table: Vec<u32>,
    alpha: f64,
}

impl NegativeTable {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn entries(&self) -> &[u32] {
        &self.table
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.table[rng.gen_range(0..self.table.len())]
    }
}

/// Fills a table of `size` slots so that each word's share differs from
/// `count^alpha / sum(count^alpha)` by less than `1 / size`.
///
/// Slots are apportioned by largest remainder, so the rounding error of
/// every word is below one slot.
pub fn build_negative_table(vocab: &Vocabulary, alpha: f64, size: usize) -> Result<NegativeTable> {
    if size < vocab.len() {
        return Err(Error::invalid(format!(
            "negative table size {size} smaller than vocabulary size {}",
            vocab.len()
        )));
    }
    if size > u32::MAX as usize {
        return Err(Error::invalid("negative table too large"));
    }
    let weights: Vec<f64> = vocab.counts().iter().map(|&c| (c as f64).powf(alpha)).collect();
    let total: f64 = weights.iter().sum();

    let mut slots = Vec::with_capacity(vocab.len());
    let mut remainders = Vec::with_capacity(vocab.len());
    let mut assigned = 0usize;
    for (i, w) in weights.iter().enumerate() {
        let exact = w / total * size as f64;
        let base = exact.floor() as usize;
        slots.push(base);
        remainders.push((exact - base as f64, i));
        assigned += base;
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(size.saturating_sub(assigned)) {
        slots[i] += 1;
    }

    let mut table = Vec::with_capacity(size);
    for (i, &n) in slots.iter().enumerate() {
        table.extend(std::iter::repeat_n(i as u32, n));
    }
    debug_assert_eq!(table.len(), size);
    Ok(NegativeTable { table, alpha })
}

/// Probability of keeping one occurrence of `word` under frequent-word
/// subsampling with threshold `t`. The relative frequency is taken over
/// retained tokens.
pub fn subsample_keep_probability(vocab: &Vocabulary, word: usize, t: f64) -> f64 {
    let f = vocab.count(word) as f64 / vocab.retained_tokens() as f64;
    keep_probability(f, t)
}

#[inline]
pub(crate) fn keep_probability(f: f64, t: f64) -> f64 {
    (((f / t).sqrt() + 1.0) * t / f).min(1.0)
}

/// Draws a stratified vocabulary minibatch: `ceil(b/2)` popular and
/// `floor(b/2)` rare words without replacement, each clamped to its class
/// size. Both halves come back sorted.
pub fn sample_vocab_minibatch<R: Rng + ?Sized>(
    partition: &FrequencyPartition,
    batch_size: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let batch_size = batch_size.max(2);
    let n_pop = batch_size.div_ceil(2).min(partition.popular().len());
    let n_rare = (batch_size / 2).min(partition.rare().len());
    let draw = |pool: &[usize], n: usize, rng: &mut R| {
        let mut picked: Vec<usize> = if n == pool.len() {
            pool.to_vec()
        } else {
            index::sample(rng, pool.len(), n)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        };
        picked.sort_unstable();
        picked
    };
    let pop = draw(partition.popular(), n_pop, rng);
    let rare = draw(partition.rare(), n_rare, rng);
    (pop, rare)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn vocab_from(text: &str, min_count: u64) -> Result<Vocabulary> {
        build_vocabulary(text.split_whitespace(), min_count)
    }

    #[test]
    fn counts_and_orders_by_frequency() {
        let v = vocab_from("a a b", 1).unwrap();
        assert_eq!(v.words(), ["a", "b"]);
        assert_eq!(v.counts(), [2, 1]);
        assert_eq!(v.index_of("a"), Some(0));
        assert_eq!(v.total_tokens(), 3);
    }

    #[test]
    fn min_count_threshold() {
        let v = vocab_from("a a b", 2).unwrap();
        assert_eq!(v.words(), ["a"]);
        assert_eq!(v.total_tokens(), 3);
        assert_eq!(v.retained_tokens(), 2);
    }

    #[test]
    fn vocabulary_errors() {
        assert!(matches!(vocab_from("", 1), Err(Error::EmptyCorpus)));
        assert!(matches!(vocab_from("a b c", 2), Err(Error::EmptyVocabulary)));
        assert_eq!(
            vocab_from("a", 2).unwrap_err().to_string(),
            "vocabulary empty after min_count filter"
        );
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = vocab_from("c b a c b a d", 1).unwrap();
        assert_eq!(v.words(), ["a", "b", "c", "d"]);
    }

    #[test]
    fn dump_round_trip() {
        let v = vocab_from("x y y z z z", 1).unwrap();
        let mut buf = Vec::new();
        v.write_dump(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "z\t3\ny\t2\nx\t1\n");
        let back = Vocabulary::read_dump(&buf[..], "dump").unwrap();
        assert_eq!(back.words(), v.words());
        assert_eq!(back.counts(), v.counts());
    }

    #[test]
    fn dump_parse_error_names_line() {
        let err = Vocabulary::read_dump("a\t1\nb 2\n".as_bytes(), "v.txt").unwrap_err();
        assert!(err.to_string().starts_with("v.txt:2:"), "{err}");
    }

    #[test]
    fn partition_takes_top_fraction() {
        let text: String = (0..10)
            .flat_map(|i| std::iter::repeat_n(format!("w{i} "), 20 - i))
            .collect();
        let v = vocab_from(&text, 1).unwrap();
        let p = partition_by_frequency(&v, 0.2).unwrap();
        assert_eq!(p.popular(), [0, 1]);
        assert_eq!(v.word(0), "w0");
        assert_eq!(v.word(1), "w1");
        assert_eq!(p.rare().len(), 8);
    }

    #[test]
    fn partition_tie_break_matches_full_sort() {
        // Oracle: enumerate the complete (count desc, word asc) order by hand.
        let v = Vocabulary::from_counts(
            ["e", "c", "a", "d", "b"].iter().map(|w| (w.to_string(), 5)),
            25,
            1,
        )
        .unwrap();
        let p = partition_by_frequency(&v, 0.4).unwrap();
        let popular: Vec<&str> = p.popular().iter().map(|&i| v.word(i)).collect();
        assert_eq!(popular, ["a", "b"]);
    }

    #[test]
    fn partition_rejects_degenerate_splits() {
        let v = vocab_from("a b c", 1).unwrap();
        assert!(matches!(
            partition_by_frequency(&v, 0.1),
            Err(Error::DegeneratePartition { popular: 0, .. })
        ));
        assert!(matches!(
            partition_by_frequency(&v, 0.9),
            Err(Error::DegeneratePartition { rare: 0, .. })
        ));
        assert!(partition_by_frequency(&v, 1.0).is_err());
    }

    #[test]
    fn negative_table_symmetric() {
        let v = vocab_from("a b", 1).unwrap();
        let t = build_negative_table(&v, 0.75, 100).unwrap();
        let a = t.entries().iter().filter(|&&i| i == 0).count();
        assert_eq!(a, 50);
    }

    #[test]
    fn negative_table_proportional() {
        let v = Vocabulary::from_counts([("a".into(), 8), ("b".into(), 1)], 9, 1).unwrap();
        let t = build_negative_table(&v, 1.0, 9).unwrap();
        assert_eq!(t.entries().iter().filter(|&&i| i == 0).count(), 8);
    }

    #[test]
    fn negative_table_smoothed_share() {
        let v = Vocabulary::from_counts([("a".into(), 8), ("b".into(), 1)], 9, 1).unwrap();
        // direct evaluation: 8^0.75 / (8^0.75 + 1)
        let expected = 8f64.powf(0.75) / (8f64.powf(0.75) + 1.0);
        assert!((expected - 0.8262).abs() < 1e-4);
        let size = 100_000;
        let t = build_negative_table(&v, 0.75, size).unwrap();
        let share = t.entries().iter().filter(|&&i| i == 0).count() as f64 / size as f64;
        assert!((share - expected).abs() < 1.0 / size as f64);
    }

    #[test]
    fn negative_table_too_small() {
        let v = vocab_from("a b c", 1).unwrap();
        assert!(build_negative_table(&v, 0.75, 2).is_err());
    }

    #[test]
    fn keep_probability_values() {
        assert_eq!(keep_probability(1e-4, 1e-4), 1.0);
        assert!((keep_probability(1e-2, 1e-4) - 0.11).abs() < 1e-12);
        // f(a) = 100/101, so t = 1/101 gives f = 100t
        let v = Vocabulary::from_counts([("a".into(), 100), ("b".into(), 1)], 101, 1).unwrap();
        let p = subsample_keep_probability(&v, 0, 1.0 / 101.0);
        assert!((p - 0.11).abs() < 1e-12, "{p}");
        assert_eq!(subsample_keep_probability(&v, 1, 1.0 / 101.0), 1.0);
    }

    #[test]
    fn minibatch_halves() {
        let mask: Vec<bool> = (0..10).map(|i| i < 4).collect();
        let p = FrequencyPartition::from_mask(mask, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pop, rare) = sample_vocab_minibatch(&p, 2, &mut rng);
        assert_eq!((pop.len(), rare.len()), (1, 1));
        let (pop, rare) = sample_vocab_minibatch(&p, 5, &mut rng);
        assert_eq!((pop.len(), rare.len()), (3, 2));
        assert!(pop.iter().all(|&i| p.is_popular(i)));
        assert!(rare.iter().all(|&i| p.is_rare(i)));
    }

    #[test]
    fn minibatch_clamps_to_class_size() {
        let mask: Vec<bool> = (0..10).map(|i| i < 2).collect();
        let p = FrequencyPartition::from_mask(mask, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (pop, rare) = sample_vocab_minibatch(&p, 3000, &mut rng);
        assert_eq!(pop, [0, 1]);
        assert_eq!(rare.len(), 8);
    }

    #[test]
    fn indexed_corpus_drops_oov_and_splits_long_lines() {
        let v = vocab_from("a a b", 2).unwrap();
        let long = vec!["a"; MAX_SENTENCE_LEN + 3].join(" ");
        let c = IndexedCorpus::from_lines(["a b a", long.as_str(), "b"], &v, false);
        assert_eq!(c.sentences()[0], [0, 0]);
        assert_eq!(c.sentences()[1].len(), MAX_SENTENCE_LEN);
        assert_eq!(c.sentences()[2].len(), 3);
        assert_eq!(c.sentences().len(), 3);
    }
}
