//! Tokenization, embedding file I/O, character n-gram composition for
//! out-of-vocabulary words, and a minimal subword skip-gram trainer.
//!
//! The on-disk format is word2vec text: a `vocab_size dim` header, one line
//! per word (token followed by `dim` space-separated reals), and optional
//! extension lines prefixed `ngram:` carrying the hashed bucket table. Reals
//! are written as shortest round-trip decimals (at most 17 significant
//! digits), so save → load reproduces every vector bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

fn parse_err(line: usize, message: impl Into<String>) -> EmbedError {
    EmbedError::Parse {
        line,
        message: message.into(),
    }
}

// ── tokenization ──────────────────────────────────────────────────────────

fn is_protected(chunk: &str) -> bool {
    chunk.starts_with("http://")
        || chunk.starts_with("https://")
        || chunk.starts_with("www.")
        || (chunk.starts_with('@') && chunk.chars().count() > 1)
}

/// Lowercases, splits on whitespace, and splits leading/trailing punctuation
/// into separate tokens. URLs and @-mentions stay whole. Deterministic, and
/// idempotent on its own output joined by single spaces.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        if is_protected(&lower) {
            out.push(lower);
            continue;
        }
        let chars: Vec<char> = lower.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        let mut protected_rest = false;
        while start < end && !chars[start].is_alphanumeric() {
            let rest: String = chars[start..end].iter().collect();
            if is_protected(&rest) {
                protected_rest = true;
                break;
            }
            out.push(chars[start].to_string());
            start += 1;
        }
        if protected_rest {
            out.push(chars[start..end].iter().collect());
            continue;
        }
        let mut trailing = Vec::new();
        while end > start && !chars[end - 1].is_alphanumeric() {
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

// ── character n-grams ─────────────────────────────────────────────────────

/// All character n-grams of the boundary-bracketed word (`<w>`) with n in
/// `[n_min, n_max]`, ordered by n ascending then left to right, plus the
/// whole bracketed word itself (deduplicated when it already occurs as one
/// of the n-grams). Duplicate interior n-grams are kept: the result is a
/// multiset.
pub fn extract_ngrams(word: &str, n_min: usize, n_max: usize) -> Vec<String> {
    assert!(!word.is_empty(), "extract_ngrams requires a nonempty word");
    assert!(n_min <= n_max, "n_min must not exceed n_max");
    let bracketed: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut grams = Vec::new();
    for n in n_min..=n_max.min(bracketed.len()) {
        for window in bracketed.windows(n) {
            grams.push(window.iter().collect::<String>());
        }
    }
    let whole: String = bracketed.iter().collect();
    if !grams.contains(&whole) {
        grams.push(whole);
    }
    grams
}

/// FNV-1a 64-bit over UTF-8 bytes: the fixed string hash used for bucket
/// selection and catalog fingerprints. Stable across platforms and builds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ── vocabulary ────────────────────────────────────────────────────────────

/// Bijective token ↔ dense-index mapping with frequency counts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from (token, count) pairs sorted by count descending, token
    /// ascending, so indices are deterministic.
    pub fn from_counts(mut pairs: Vec<(String, u64)>) -> Self {
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Vocabulary::default();
        for (token, count) in pairs {
            vocab.push(token, count);
        }
        vocab
    }

    fn push(&mut self, token: String, count: u64) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.counts.push(count);
    }

    /// Restores the token → index map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

// ── embedding table ───────────────────────────────────────────────────────

/// Provenance of a looked-up vector, used by the models to route gradients
/// back into the table.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenVec {
    /// In-vocabulary token: its stored row, bit-exact.
    Word { index: usize, vector: Vec<f64> },
    /// Out-of-vocabulary token composed as the mean of its n-gram bucket
    /// rows (bucket indices listed with multiplicity).
    Subword {
        buckets: Vec<usize>,
        vector: Vec<f64>,
    },
    /// Deterministic per-word fallback used when the table carries no bucket
    /// matrix (plain word2vec/glove files). Not trainable.
    Hashed { vector: Vec<f64> },
}

impl TokenVec {
    pub fn vector(&self) -> &[f64] {
        match self {
            TokenVec::Word { vector, .. }
            | TokenVec::Subword { vector, .. }
            | TokenVec::Hashed { vector } => vector,
        }
    }

    pub fn into_vector(self) -> Vec<f64> {
        match self {
            TokenVec::Word { vector, .. }
            | TokenVec::Subword { vector, .. }
            | TokenVec::Hashed { vector } => vector,
        }
    }
}

/// Word vectors plus an optional hashed character n-gram bucket table for
/// composing vectors of unseen words. Immutable after load or training;
/// training-time updates go through the explicit `*_mut` row accessors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: Vocabulary,
    /// vocab.len() × dim, row-major.
    words: Vec<f64>,
    /// bucket_count × dim, row-major; empty when bucket_count == 0.
    buckets: Vec<f64>,
    bucket_count: usize,
    n_min: usize,
    n_max: usize,
}

/// Default hashed-bucket count for the subword table.
pub const DEFAULT_BUCKETS: usize = 200_000;
/// Default character n-gram range.
pub const DEFAULT_NGRAM_RANGE: (usize, usize) = (3, 6);

impl EmbeddingTable {
    pub fn new(
        vocab: Vocabulary,
        dim: usize,
        words: Vec<f64>,
        buckets: Vec<f64>,
        bucket_count: usize,
        n_min: usize,
        n_max: usize,
    ) -> Result<Self> {
        if words.len() != vocab.len() * dim {
            return Err(EmbedError::Config(format!(
                "word matrix has {} values, expected {} ({} words × dim {})",
                words.len(),
                vocab.len() * dim,
                vocab.len(),
                dim
            )));
        }
        if buckets.len() != bucket_count * dim {
            return Err(EmbedError::Config(format!(
                "bucket matrix has {} values, expected {} ({} buckets × dim {})",
                buckets.len(),
                bucket_count * dim,
                bucket_count,
                dim
            )));
        }
        if !words.iter().chain(buckets.iter()).all(|v| v.is_finite()) {
            return Err(EmbedError::Config("non-finite embedding value".into()));
        }
        Ok(Self {
            dim,
            vocab,
            words,
            buckets,
            bucket_count,
            n_min,
            n_max,
        })
    }

    /// Random table over the given tokens: word rows uniform in `±1/dim`,
    /// no bucket table. Used for synthetic experiments.
    pub fn random(tokens: &[String], dim: usize, seed: u64) -> Self {
        let vocab = Vocabulary::from_counts(tokens.iter().map(|t| (t.clone(), 1)).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / dim as f64;
        let words = (0..vocab.len() * dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            dim,
            vocab,
            words,
            buckets: Vec::new(),
            bucket_count: 0,
            n_min: DEFAULT_NGRAM_RANGE.0,
            n_max: DEFAULT_NGRAM_RANGE.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Restores the internal token → index map; must be called after
    /// deserializing a table.
    pub fn rebuild_index(&mut self) {
        self.vocab.rebuild_index();
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        (self.n_min, self.n_max)
    }

    pub fn word_row(&self, index: usize) -> &[f64] {
        &self.words[index * self.dim..(index + 1) * self.dim]
    }

    pub fn word_row_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.words[index * self.dim..(index + 1) * self.dim]
    }

    pub fn bucket_row(&self, index: usize) -> &[f64] {
        &self.buckets[index * self.dim..(index + 1) * self.dim]
    }

    pub fn bucket_row_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.buckets[index * self.dim..(index + 1) * self.dim]
    }

    pub(crate) fn words_flat(&self) -> &[f64] {
        &self.words
    }

    pub(crate) fn words_flat_mut(&mut self) -> &mut [f64] {
        &mut self.words
    }

    pub(crate) fn buckets_flat(&self) -> &[f64] {
        &self.buckets
    }

    pub(crate) fn buckets_flat_mut(&mut self) -> &mut [f64] {
        &mut self.buckets
    }

    /// Bucket indices (with multiplicity) of a word's n-grams.
    pub fn bucket_indices(&self, word: &str) -> Vec<usize> {
        extract_ngrams(word, self.n_min, self.n_max)
            .iter()
            .map(|g| (fnv1a64(g.as_bytes()) % self.bucket_count as u64) as usize)
            .collect()
    }

    /// Composes a vector for an out-of-vocabulary word: the mean of the
    /// bucket rows of all its n-grams. Total over any nonempty word. Falls
    /// back to a deterministic per-word pseudo-random vector (scale 0.01,
    /// seeded by the word's FNV-1a hash) when no bucket table exists.
    pub fn compose_oov(&self, word: &str) -> TokenVec {
        if word.is_empty() || self.bucket_count == 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(word.as_bytes()));
            let vector = (0..self.dim).map(|_| rng.gen_range(-0.01..0.01)).collect();
            return TokenVec::Hashed { vector };
        }
        let buckets = self.bucket_indices(word);
        let mut vector = vec![0.0; self.dim];
        for &b in &buckets {
            for (acc, v) in vector.iter_mut().zip(self.bucket_row(b)) {
                *acc += v;
            }
        }
        let k = buckets.len() as f64;
        for v in &mut vector {
            *v /= k;
        }
        TokenVec::Subword { buckets, vector }
    }

    /// The stored row for an in-vocabulary token, the composed subword
    /// vector otherwise. Never fails for any Unicode token.
    pub fn lookup(&self, token: &str) -> TokenVec {
        match self.vocab.index_of(token) {
            Some(index) => TokenVec::Word {
                index,
                vector: self.word_row(index).to_vec(),
            },
            None => self.compose_oov(token),
        }
    }

    /// Convenience: just the vector.
    pub fn lookup_vec(&self, token: &str) -> Vec<f64> {
        self.lookup(token).into_vector()
    }

    /// Writes the word2vec text format described in the module docs.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{} {}", self.vocab.len(), self.dim)?;
        for i in 0..self.vocab.len() {
            write!(w, "{}", self.vocab.token(i))?;
            for v in self.word_row(i) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        if self.bucket_count > 0 {
            writeln!(
                w,
                "ngram:meta {} {} {}",
                self.bucket_count, self.n_min, self.n_max
            )?;
            for b in 0..self.bucket_count {
                write!(w, "ngram:{b}")?;
                for v in self.bucket_row(b) {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_real(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("non-numeric field {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

/// Loads the word2vec text format (with optional `ngram:` extension lines).
/// `expected_dim`, when given, is validated against the file header.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected \"vocab_size dim\" header"))?;
    let header = header?;
    let mut parts = header.split_whitespace();
    let vocab_size: usize = parts
        .next()
        .ok_or_else(|| parse_err(1, "missing vocab size in header"))?
        .parse()
        .map_err(|_| parse_err(1, format!("malformed header {header:?}")))?;
    let dim: usize = parts
        .next()
        .ok_or_else(|| parse_err(1, "missing dimension in header"))?
        .parse()
        .map_err(|_| parse_err(1, format!("malformed header {header:?}")))?;
    if parts.next().is_some() {
        return Err(parse_err(1, format!("malformed header {header:?}")));
    }
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(EmbedError::Config(format!(
                "embedding dimension {dim} does not match configured dimension {expected}"
            )));
        }
    }

    let mut vocab = Vocabulary::default();
    let mut words: Vec<f64> = Vec::with_capacity(vocab_size * dim);
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut extension: Option<(usize, String)> = None;
    for (idx, line) in &mut lines {
        let lineno = idx + 1;
        let line = line?;
        if vocab.len() == vocab_size {
            extension = Some((lineno, line));
            break;
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "empty row"))?
            .to_string();
        if token.starts_with("ngram:") {
            return Err(parse_err(
                lineno,
                format!(
                    "found extension line after {} of {vocab_size} word rows",
                    vocab.len()
                ),
            ));
        }
        if let Some(prev) = seen.insert(token.clone(), lineno) {
            return Err(parse_err(
                lineno,
                format!("duplicate token {token:?} (first seen on line {prev})"),
            ));
        }
        let mut values = 0usize;
        for f in fields {
            words.push(parse_real(f, lineno)?);
            values += 1;
        }
        if values != dim {
            words.truncate(words.len() - values);
            return Err(parse_err(
                lineno,
                format!("expected {dim} values, found {values}"),
            ));
        }
        // File order is the index order; counts are unknown, recorded as 1.
        vocab.push(token, 1);
    }
    if vocab.len() != vocab_size {
        return Err(parse_err(
            0,
            format!(
                "header promised {vocab_size} word rows, file has {}",
                vocab.len()
            ),
        ));
    }

    let mut bucket_count = 0usize;
    let (mut n_min, mut n_max) = DEFAULT_NGRAM_RANGE;
    let mut buckets = Vec::new();
    let mut expect_bucket = 0usize;
    {
        let mut handle_extension = |lineno: usize, line: String| -> Result<()> {
            let mut fields = line.split_whitespace();
            let tag = fields
                .next()
                .ok_or_else(|| parse_err(lineno, "empty line"))?;
            if tag == "ngram:meta" {
                if bucket_count != 0 {
                    return Err(parse_err(lineno, "duplicate ngram:meta line"));
                }
                let nums: Vec<usize> = fields
                    .map(|f| {
                        f.parse()
                            .map_err(|_| parse_err(lineno, format!("non-numeric field {f:?}")))
                    })
                    .collect::<Result<_>>()?;
                if nums.len() != 3 || nums[0] == 0 {
                    return Err(parse_err(
                        lineno,
                        "ngram:meta expects bucket_count n_min n_max",
                    ));
                }
                bucket_count = nums[0];
                n_min = nums[1];
                n_max = nums[2];
                buckets.reserve(bucket_count * dim);
                return Ok(());
            }
            let Some(idx_str) = tag.strip_prefix("ngram:") else {
                return Err(parse_err(
                    lineno,
                    format!("unexpected line after word rows: {tag:?}"),
                ));
            };
            if bucket_count == 0 {
                return Err(parse_err(lineno, "ngram row before ngram:meta"));
            }
            let idx: usize = idx_str
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed bucket index {idx_str:?}")))?;
            if idx != expect_bucket {
                return Err(parse_err(
                    lineno,
                    format!("bucket rows out of order: expected {expect_bucket}, found {idx}"),
                ));
            }
            let mut values = 0usize;
            for f in fields {
                buckets.push(parse_real(f, lineno)?);
                values += 1;
            }
            if values != dim {
                return Err(parse_err(
                    lineno,
                    format!("expected {dim} values, found {values}"),
                ));
            }
            expect_bucket += 1;
            Ok(())
        };

        if let Some((lineno, line)) = extension {
            handle_extension(lineno, line)?;
            for (idx, line) in lines {
                handle_extension(idx + 1, line?)?;
            }
        }
    }
    if expect_bucket != bucket_count {
        return Err(parse_err(
            0,
            format!("ngram:meta promised {bucket_count} bucket rows, file has {expect_bucket}"),
        ));
    }

    EmbeddingTable::new(vocab, dim, words, buckets, bucket_count, n_min, n_max)
}

// ── subword skip-gram training ────────────────────────────────────────────

/// Configuration for [`train_subword_skipgram`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly over all training pairs.
    pub lr: f64,
    pub min_count: u64,
    pub buckets: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.05,
            min_count: 2,
            buckets: DEFAULT_BUCKETS,
            n_min: DEFAULT_NGRAM_RANGE.0,
            n_max: DEFAULT_NGRAM_RANGE.1,
            seed: 42,
        }
    }
}

/// Unigram^0.75 negative sampler over vocabulary indices.
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocabulary) -> Self {
        let mut cumulative = Vec::with_capacity(vocab.len());
        let mut total = 0.0;
        for i in 0..vocab.len() {
            total += (vocab.count(i) as f64).powf(0.75);
            cumulative.push(total);
        }
        Self { cumulative }
    }

    /// Probability mass assigned to index `i`.
    pub fn probability(&self, i: usize) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        (self.cumulative[i] - prev) / total
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        // u*total can round up to exactly total; keep the index in range.
        self.cumulative
            .partition_point(|c| *c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// (center, context) pairs within a symmetric window, centers left to right,
/// contexts left to right within each window.
pub fn skipgram_pairs(tokens: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &center) in tokens.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(tokens.len() - 1);
        for (j, &context) in tokens.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i {
                pairs.push((center, context));
            }
        }
    }
    pairs
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains subword skip-gram embeddings with negative sampling on a plain
/// text corpus (one document per line, tokenized like the models do).
///
/// The input representation of a center word is its word vector plus the
/// mean of its n-gram bucket vectors; the input-side gradient flows fully
/// into the word vector and is split equally across the contributing
/// buckets. Context (output) vectors are a separate matrix discarded after
/// training. Deterministic under a fixed seed.
pub fn train_subword_skipgram<I>(lines: I, cfg: &SkipgramConfig) -> Result<EmbeddingTable>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    if cfg.dim == 0 || cfg.window == 0 || cfg.buckets == 0 {
        return Err(EmbedError::Config(
            "dim, window and buckets must be positive".into(),
        ));
    }
    // Pass 1: counts. The corpus is buffered as token sequences so epochs
    // can replay it.
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut docs_tokens: Vec<Vec<String>> = Vec::new();
    for line in lines {
        let tokens = tokenize(line.as_ref());
        for t in &tokens {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
        if !tokens.is_empty() {
            docs_tokens.push(tokens);
        }
    }
    let kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= cfg.min_count)
        .collect();
    if kept.is_empty() {
        return Err(EmbedError::Config(
            "corpus is empty after min-count filtering".into(),
        ));
    }
    let vocab = Vocabulary::from_counts(kept);

    let docs: Vec<Vec<usize>> = docs_tokens
        .iter()
        .map(|toks| toks.iter().filter_map(|t| vocab.index_of(t)).collect())
        .filter(|ids: &Vec<usize>| ids.len() >= 2)
        .collect();
    let pairs_per_epoch: usize = docs
        .iter()
        .map(|d| skipgram_pairs(d, cfg.window).len())
        .sum();
    if pairs_per_epoch == 0 {
        return Err(EmbedError::Config(
            "corpus yields no skip-gram pairs after filtering".into(),
        ));
    }
    let total_pairs = (pairs_per_epoch * cfg.epochs) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;
    let bound = 1.0 / dim as f64;
    let mut words: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    let mut buckets: Vec<f64> = (0..cfg.buckets * dim)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    let mut output: Vec<f64> = vec![0.0; vocab.len() * dim];

    // Per-word bucket lists, cached once.
    let word_buckets: Vec<Vec<usize>> = (0..vocab.len())
        .map(|i| {
            extract_ngrams(vocab.token(i), cfg.n_min, cfg.n_max)
                .iter()
                .map(|g| (fnv1a64(g.as_bytes()) % cfg.buckets as u64) as usize)
                .collect()
        })
        .collect();

    let sampler = NegativeSampler::new(&vocab);
    let mut processed = 0usize;
    let mut input = vec![0.0; dim];
    let mut input_grad = vec![0.0; dim];

    for _epoch in 0..cfg.epochs {
        for doc in &docs {
            for (center, context) in skipgram_pairs(doc, cfg.window) {
                let progress = processed as f64 / total_pairs;
                let lr = cfg.lr * (1.0 - progress).max(1e-4);
                processed += 1;

                let grams = &word_buckets[center];
                let k = grams.len() as f64;
                input.copy_from_slice(&words[center * dim..(center + 1) * dim]);
                for &b in grams {
                    for (acc, v) in input.iter_mut().zip(&buckets[b * dim..(b + 1) * dim]) {
                        *acc += v / k;
                    }
                }
                input_grad.iter_mut().for_each(|v| *v = 0.0);

                // Positive target then `negatives` sampled targets. A
                // negative draw equal to the context word is discarded.
                for sample in 0..=cfg.negatives {
                    let (target, label) = if sample == 0 {
                        (context, 1.0)
                    } else {
                        let neg = sampler.sample(&mut rng);
                        if neg == context {
                            continue;
                        }
                        (neg, 0.0)
                    };
                    let out = &mut output[target * dim..(target + 1) * dim];
                    let score: f64 = input.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                    let g = (sigmoid(score) - label) * lr;
                    for ((ig, o), inp) in input_grad.iter_mut().zip(out.iter_mut()).zip(&input) {
                        *ig += g * *o;
                        *o -= g * inp;
                    }
                }

                for (w, g) in words[center * dim..(center + 1) * dim]
                    .iter_mut()
                    .zip(&input_grad)
                {
                    *w -= g;
                }
                for &b in grams {
                    for (v, g) in buckets[b * dim..(b + 1) * dim].iter_mut().zip(&input_grad) {
                        *v -= g / k;
                    }
                }
            }
        }
    }

    EmbeddingTable::new(
        vocab,
        dim,
        words,
        buckets,
        cfg.buckets,
        cfg.n_min,
        cfg.n_max,
    )
}

/// Cosine similarity between two equal-length vectors (0 when either is
/// all-zero).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
