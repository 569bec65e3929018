//! Synthetic bilingual world with known semantics.
//!
//! A sentence is a sequence of distinct *concepts*. Each language renders a
//! concept through its own token bijection, reorders the sequence with a
//! fixed language-specific permutation, and sprinkles in function-word noise.
//! Concept sets give exact ground truth for alignment, mining, similarity and
//! entailment.

mod tsv;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::TokenSequence;
use crate::error::{Error, Result};
use crate::trainer::nli::NliLabel;

pub use tsv::{
    load_mining_tsv, load_nli_tsv, load_sts_tsv, load_tsv, save_mining_tsv, save_nli_tsv, save_sts_tsv, save_tsv,
};

pub type Concept = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    A,
    B,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::A => "a",
            Language::B => "b",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "a" | "A" => Ok(Language::A),
            "b" | "B" => Ok(Language::B),
            other => Err(format!("unknown language `{other}` (a|b)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Deterministic reordering applied to a concept sequence before rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordOrder {
    #[default]
    Identity,
    Reverse,
    /// Even positions first, then odd positions.
    EvenOdd,
}

impl WordOrder {
    pub fn apply<T: Copy>(self, items: &[T]) -> Vec<T> {
        match self {
            WordOrder::Identity => items.to_vec(),
            WordOrder::Reverse => items.iter().rev().copied().collect(),
            WordOrder::EvenOdd => items
                .iter()
                .step_by(2)
                .chain(items.iter().skip(1).step_by(2))
                .copied()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    pub concept_count: usize,
    pub function_words: usize,
    pub order_a: WordOrder,
    pub order_b: WordOrder,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            concept_count: 400,
            function_words: 16,
            order_a: WordOrder::Identity,
            order_b: WordOrder::Reverse,
        }
    }
}

/// Concept-to-token bijections and noise vocabularies for both languages.
///
/// In each language, concept tokens occupy ids `0..concept_count` (in a
/// language-specific shuffled assignment) and function tokens occupy
/// `concept_count..vocab_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub concept_count: usize,
    pub function_words: usize,
    pub surface_a: Vec<u32>,
    pub surface_b: Vec<u32>,
    pub order_a: WordOrder,
    pub order_b: WordOrder,
}

impl Lexicon {
    pub fn generate(config: &LexiconConfig, seed: u64) -> Result<Self> {
        if config.concept_count < 20 {
            return Err(Error::config("concept_count", "must be at least 20"));
        }
        let mut rng = stream_rng(seed, 100);
        let surface = |rng: &mut ChaCha8Rng| {
            let mut ids: Vec<u32> = (0..config.concept_count as u32).collect();
            ids.shuffle(rng);
            ids
        };
        let surface_a = surface(&mut rng);
        let surface_b = surface(&mut rng);
        Ok(Self {
            concept_count: config.concept_count,
            function_words: config.function_words,
            surface_a,
            surface_b,
            order_a: config.order_a,
            order_b: config.order_b,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.concept_count + self.function_words
    }

    fn surface(&self, lang: Language) -> &[u32] {
        match lang {
            Language::A => &self.surface_a,
            Language::B => &self.surface_b,
        }
    }

    fn order(&self, lang: Language) -> WordOrder {
        match lang {
            Language::A => self.order_a,
            Language::B => self.order_b,
        }
    }

    pub fn is_function_token(&self, token: u32) -> bool {
        token as usize >= self.concept_count
    }

    /// Renders a concept sequence: surface lookup, reordering, then after each
    /// content token a function token with probability `noise_rate`.
    pub fn render<R: Rng + ?Sized>(
        &self,
        concepts: &[Concept],
        lang: Language,
        noise_rate: f64,
        rng: &mut R,
    ) -> TokenSequence {
        let surface = self.surface(lang);
        let ordered = self.order(lang).apply(concepts);
        let mut tokens = Vec::with_capacity(ordered.len() * 2);
        for c in ordered {
            tokens.push(surface[c as usize]);
            if self.function_words > 0 && noise_rate > 0.0 && rng.random::<f64>() < noise_rate {
                tokens.push((self.concept_count + rng.random_range(0..self.function_words)) as u32);
            }
        }
        TokenSequence::new(tokens).expect("concept sequences are non-empty")
    }

    /// Concepts recoverable from a rendered sentence (function tokens dropped).
    pub fn decode(&self, tokens: &TokenSequence, lang: Language) -> Vec<Concept> {
        let surface = self.surface(lang);
        let mut inverse = vec![0u32; self.concept_count];
        for (c, &t) in surface.iter().enumerate() {
            inverse[t as usize] = c as u32;
        }
        tokens
            .ids()
            .iter()
            .filter(|&&t| !self.is_function_token(t))
            .map(|&t| inverse[t as usize])
            .collect()
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sorted copy, used as a set key.
pub fn concept_key(concepts: &[Concept]) -> Vec<Concept> {
    let mut key = concepts.to_vec();
    key.sort_unstable();
    key
}

pub fn jaccard(a: &[Concept], b: &[Concept]) -> f64 {
    let sa: HashSet<_> = a.iter().collect();
    let sb: HashSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Shared concepts relative to the smaller set.
pub fn overlap_fraction(a: &[Concept], b: &[Concept]) -> f64 {
    let sa: HashSet<_> = a.iter().collect();
    let shared = b.iter().filter(|c| sa.contains(c)).count();
    shared as f64 / a.len().min(b.len()).max(1) as f64
}

/// Entailment if the hypothesis concepts are a strict subset of the
/// premise's, contradiction if disjoint, neutral otherwise.
pub fn nli_label(premise: &[Concept], hypothesis: &[Concept]) -> NliLabel {
    let p: HashSet<_> = premise.iter().collect();
    let h: HashSet<_> = hypothesis.iter().collect();
    if h.is_subset(&p) && h.len() < p.len() {
        NliLabel::Entailment
    } else if h.is_disjoint(&p) {
        NliLabel::Contradiction
    } else {
        NliLabel::Neutral
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub a: TokenSequence,
    pub b: TokenSequence,
    /// Concept sequence in canonical (pre-reordering) order.
    pub concepts: Vec<Concept>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<ParallelPair>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&ParallelPair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    /// Side-A and side-B sentences of one split, aligned by index.
    pub fn sides(&self, split: Split) -> (Vec<TokenSequence>, Vec<TokenSequence>) {
        self.split(split)
            .into_iter()
            .map(|p| (p.a.clone(), p.b.clone()))
            .unzip()
    }

    /// Largest token id + 1 on each side.
    pub fn observed_vocab(&self) -> (usize, usize) {
        let max = |f: fn(&ParallelPair) -> &TokenSequence| {
            self.pairs
                .iter()
                .flat_map(|p| f(p).ids().iter().copied())
                .max()
                .map_or(0, |m| m as usize + 1)
        };
        (max(|p| &p.a), max(|p| &p.b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelSpec {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub noise_rate: f64,
}

impl Default for ParallelSpec {
    fn default() -> Self {
        Self {
            train: 5000,
            validation: 500,
            test: 1000,
            len_min: 5,
            len_max: 12,
            noise_rate: 0.1,
        }
    }
}

fn check_lengths(lex: &Lexicon, len_min: usize, len_max: usize) -> Result<()> {
    if len_min < 3 || len_max > 20 || len_min > len_max {
        return Err(Error::config(
            "len_range",
            format!("[{len_min}, {len_max}] must lie within [3, 20]"),
        ));
    }
    if len_max * 2 > lex.concept_count {
        return Err(Error::config(
            "len_range",
            "sentences too long for the concept inventory",
        ));
    }
    Ok(())
}

fn check_noise(noise_rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&noise_rate) {
        return Err(Error::config(
            "noise_rate",
            format!("must lie in [0, 1), got {noise_rate}"),
        ));
    }
    Ok(())
}

fn sample_concepts<R: Rng + ?Sized>(lex: &Lexicon, len_min: usize, len_max: usize, rng: &mut R) -> Vec<Concept> {
    let len = rng.random_range(len_min..=len_max);
    index::sample(rng, lex.concept_count, len)
        .into_iter()
        .map(|c| c as Concept)
        .collect()
}

/// Draws concept sequences whose sets are not in `used`, recording them.
fn sample_fresh<R: Rng + ?Sized>(
    lex: &Lexicon,
    len_min: usize,
    len_max: usize,
    used: &mut HashSet<Vec<Concept>>,
    rng: &mut R,
) -> Result<Vec<Concept>> {
    for _ in 0..10_000 {
        let c = sample_concepts(lex, len_min, len_max, rng);
        if used.insert(concept_key(&c)) {
            return Ok(c);
        }
    }
    Err(Error::config(
        "n_pairs",
        "concept inventory exhausted; cannot draw unique sentences",
    ))
}

pub(crate) fn gen_parallel_with(
    lex: &Lexicon,
    spec: &ParallelSpec,
    used: &mut HashSet<Vec<Concept>>,
    rng: &mut ChaCha8Rng,
) -> Result<ParallelCorpus> {
    check_lengths(lex, spec.len_min, spec.len_max)?;
    check_noise(spec.noise_rate)?;
    let total = spec.train + spec.validation + spec.test;
    if total == 0 {
        return Err(Error::config("n_pairs", "must be at least 1"));
    }
    let mut pairs = Vec::with_capacity(total);
    for (split, n) in [
        (Split::Train, spec.train),
        (Split::Validation, spec.validation),
        (Split::Test, spec.test),
    ] {
        for _ in 0..n {
            let concepts = sample_fresh(lex, spec.len_min, spec.len_max, used, rng)?;
            let a = lex.render(&concepts, Language::A, spec.noise_rate, rng);
            let b = lex.render(&concepts, Language::B, spec.noise_rate, rng);
            pairs.push(ParallelPair { a, b, concepts, split });
        }
    }
    Ok(ParallelCorpus { pairs })
}

/// Parallel corpus with disjoint train/validation/test splits. No concept set
/// occurs twice anywhere in the corpus.
pub fn gen_parallel_corpus(lex: &Lexicon, spec: &ParallelSpec, seed: u64) -> Result<ParallelCorpus> {
    gen_parallel_with(lex, spec, &mut HashSet::new(), &mut stream_rng(seed, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: TokenSequence,
    pub concepts: Vec<Concept>,
}

/// Two monolingual collections, a fraction of which are translations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningCorpus {
    pub side_a: Vec<Sentence>,
    pub side_b: Vec<Sentence>,
    /// `(index in side_a, index in side_b)`, sorted.
    pub gold_pairs: Vec<(usize, usize)>,
    pub parallel_fraction: f64,
}

impl MiningCorpus {
    pub fn tokens_a(&self) -> Vec<TokenSequence> {
        self.side_a.iter().map(|s| s.tokens.clone()).collect()
    }

    pub fn tokens_b(&self) -> Vec<TokenSequence> {
        self.side_b.iter().map(|s| s.tokens.clone()).collect()
    }

    pub fn gold_set(&self) -> HashSet<(usize, usize)> {
        self.gold_pairs.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSpec {
    pub n_a: usize,
    pub n_b: usize,
    pub parallel_fraction: f64,
    pub len_min: usize,
    pub len_max: usize,
    pub noise_rate: f64,
}

impl Default for MiningSpec {
    fn default() -> Self {
        Self {
            n_a: 1000,
            n_b: 1000,
            parallel_fraction: 0.1,
            len_min: 5,
            len_max: 12,
            noise_rate: 0.1,
        }
    }
}

/// Non-gold cross pairs must share less than this fraction of concepts.
pub const MAX_NON_GOLD_OVERLAP: f64 = 0.5;

fn bitset(concepts: &[Concept], words: usize) -> Vec<u64> {
    let mut bits = vec![0u64; words];
    for &c in concepts {
        bits[c as usize / 64] |= 1 << (c % 64);
    }
    bits
}

fn shared(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as usize).sum()
}

pub(crate) fn gen_mining_with(
    lex: &Lexicon,
    spec: &MiningSpec,
    used: &mut HashSet<Vec<Concept>>,
    rng: &mut ChaCha8Rng,
) -> Result<MiningCorpus> {
    if !(spec.parallel_fraction > 0.0 && spec.parallel_fraction < 1.0) {
        return Err(Error::config(
            "parallel_fraction",
            format!("must lie strictly between 0 and 1, got {}", spec.parallel_fraction),
        ));
    }
    if spec.n_a == 0 || spec.n_b == 0 {
        return Err(Error::config("n_a/n_b", "both sides need at least one sentence"));
    }
    check_lengths(lex, spec.len_min, spec.len_max)?;
    check_noise(spec.noise_rate)?;

    let n_gold = (spec.parallel_fraction * spec.n_a.min(spec.n_b) as f64).floor() as usize;
    let words = lex.concept_count.div_ceil(64);
    // every accepted set must overlap every earlier one by less than half,
    // which covers gold-vs-gold, gold-vs-filler and filler-vs-filler pairs
    let mut accepted: Vec<(Vec<u64>, usize)> = Vec::new();
    let mut draw = |rng: &mut ChaCha8Rng| -> Result<Vec<Concept>> {
        for _ in 0..10_000 {
            let c = sample_concepts(lex, spec.len_min, spec.len_max, rng);
            let bits = bitset(&c, words);
            let ok = accepted
                .iter()
                .all(|(other, len)| (shared(&bits, other) as f64) < MAX_NON_GOLD_OVERLAP * c.len().min(*len) as f64);
            if ok && used.insert(concept_key(&c)) {
                accepted.push((bits, c.len()));
                return Ok(c);
            }
        }
        Err(Error::config("n_a/n_b", "cannot draw enough low-overlap sentences"))
    };

    let mut side_a = Vec::with_capacity(spec.n_a);
    let mut side_b = Vec::with_capacity(spec.n_b);
    for _ in 0..n_gold {
        let concepts = draw(rng)?;
        let ta = lex.render(&concepts, Language::A, spec.noise_rate, rng);
        let tb = lex.render(&concepts, Language::B, spec.noise_rate, rng);
        side_a.push(Sentence {
            tokens: ta,
            concepts: concepts.clone(),
        });
        side_b.push(Sentence { tokens: tb, concepts });
    }
    for _ in n_gold..spec.n_a {
        let concepts = draw(rng)?;
        let tokens = lex.render(&concepts, Language::A, spec.noise_rate, rng);
        side_a.push(Sentence { tokens, concepts });
    }
    for _ in n_gold..spec.n_b {
        let concepts = draw(rng)?;
        let tokens = lex.render(&concepts, Language::B, spec.noise_rate, rng);
        side_b.push(Sentence { tokens, concepts });
    }

    let mut perm_a: Vec<usize> = (0..spec.n_a).collect();
    let mut perm_b: Vec<usize> = (0..spec.n_b).collect();
    perm_a.shuffle(rng);
    perm_b.shuffle(rng);
    // perm[new] = old; gold i sits at old index i on both sides
    let mut pos_a = vec![0; spec.n_a];
    let mut pos_b = vec![0; spec.n_b];
    for (new, &old) in perm_a.iter().enumerate() {
        pos_a[old] = new;
    }
    for (new, &old) in perm_b.iter().enumerate() {
        pos_b[old] = new;
    }
    let side_a: Vec<Sentence> = perm_a.iter().map(|&old| side_a[old].clone()).collect();
    let side_b: Vec<Sentence> = perm_b.iter().map(|&old| side_b[old].clone()).collect();
    let mut gold_pairs: Vec<(usize, usize)> = (0..n_gold).map(|i| (pos_a[i], pos_b[i])).collect();
    gold_pairs.sort_unstable();

    let corpus = MiningCorpus {
        side_a,
        side_b,
        gold_pairs,
        parallel_fraction: spec.parallel_fraction,
    };
    audit_mining_corpus(&corpus)?;
    Ok(corpus)
}

/// Mining corpus with `⌊parallel_fraction · min(n_a, n_b)⌋` translation pairs.
pub fn gen_mining_corpus(lex: &Lexicon, spec: &MiningSpec, seed: u64) -> Result<MiningCorpus> {
    gen_mining_with(lex, spec, &mut HashSet::new(), &mut stream_rng(seed, 2))
}

/// Exhaustive check: gold pairs carry identical concept sets, every other
/// cross pair shares less than half its concepts.
pub fn audit_mining_corpus(corpus: &MiningCorpus) -> Result<()> {
    let gold = corpus.gold_set();
    for (i, a) in corpus.side_a.iter().enumerate() {
        for (j, b) in corpus.side_b.iter().enumerate() {
            if gold.contains(&(i, j)) {
                if concept_key(&a.concepts) != concept_key(&b.concepts) {
                    return Err(Error::config(
                        "gold_pairs",
                        format!("gold pair ({i}, {j}) differs in concepts"),
                    ));
                }
            } else if overlap_fraction(&a.concepts, &b.concepts) >= MAX_NON_GOLD_OVERLAP {
                return Err(Error::config(
                    "gold_pairs",
                    format!("non-gold pair ({i}, {j}) overlaps too much"),
                ));
            }
        }
    }
    Ok(())
}

/// For each sentence on one side, its aligned counterpart must be the unique
/// highest concept-Jaccard match on the other side.
pub fn audit_separability(a: &[Vec<Concept>], b: &[Vec<Concept>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    for (i, ca) in a.iter().enumerate() {
        let own = jaccard(ca, &b[i]);
        for (j, cb) in b.iter().enumerate() {
            if j != i && jaccard(ca, cb) >= own {
                return Err(Error::config(
                    "separability",
                    format!("sentence {i} ties or loses to {j}"),
                ));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsPair {
    pub sent1: TokenSequence,
    pub sent2: TokenSequence,
    pub concepts1: Vec<Concept>,
    pub concepts2: Vec<Concept>,
    /// Concept-set Jaccard similarity.
    pub gold_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliTriple {
    pub premise: TokenSequence,
    pub hypothesis: TokenSequence,
    pub premise_concepts: Vec<Concept>,
    pub hypothesis_concepts: Vec<Concept>,
    pub label: NliLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSpec {
    pub n: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub noise_rate: f64,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            len_min: 5,
            len_max: 12,
            noise_rate: 0.1,
        }
    }
}

/// Concepts not in `exclude`, drawn without replacement.
fn fresh_outside<R: Rng + ?Sized>(lex: &Lexicon, exclude: &[Concept], count: usize, rng: &mut R) -> Vec<Concept> {
    let banned: HashSet<_> = exclude.iter().copied().collect();
    let pool: Vec<Concept> = (0..lex.concept_count as Concept)
        .filter(|c| !banned.contains(c))
        .collect();
    index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

fn check_pair_spec(lex: &Lexicon, spec: &PairSpec) -> Result<()> {
    if spec.n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    check_lengths(lex, spec.len_min, spec.len_max)?;
    check_noise(spec.noise_rate)
}

pub(crate) fn gen_sts_with(lex: &Lexicon, spec: &PairSpec, rng: &mut ChaCha8Rng) -> Result<Vec<StsPair>> {
    check_pair_spec(lex, spec)?;
    let mut out = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c1 = sample_concepts(lex, spec.len_min, spec.len_max, rng);
        let len2 = rng.random_range(spec.len_min..=spec.len_max);
        // uniform number of shared concepts spreads gold similarity over [0, 1]
        let keep = rng.random_range(0..=c1.len().min(len2));
        let mut c2: Vec<Concept> = index::sample(rng, c1.len(), keep).into_iter().map(|i| c1[i]).collect();
        c2.extend(fresh_outside(lex, &c1, len2 - keep, rng));
        c2.shuffle(rng);
        let sent1 = lex.render(&c1, Language::A, spec.noise_rate, rng);
        let sent2 = lex.render(&c2, Language::A, spec.noise_rate, rng);
        let gold_sim = jaccard(&c1, &c2);
        out.push(StsPair {
            sent1,
            sent2,
            concepts1: c1,
            concepts2: c2,
            gold_sim,
        });
    }
    Ok(out)
}

/// Monolingual (language A) sentence pairs scored by concept Jaccard.
pub fn gen_sts_pairs(lex: &Lexicon, spec: &PairSpec, seed: u64) -> Result<Vec<StsPair>> {
    gen_sts_with(lex, spec, &mut stream_rng(seed, 3))
}

pub(crate) fn gen_nli_with(lex: &Lexicon, spec: &PairSpec, rng: &mut ChaCha8Rng) -> Result<Vec<NliTriple>> {
    check_pair_spec(lex, spec)?;
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let target = NliLabel::ALL[i % 3];
        let premise = sample_concepts(lex, spec.len_min, spec.len_max, rng);
        let plen = premise.len();
        let hypothesis: Vec<Concept> = match target {
            NliLabel::Entailment => {
                let k = rng.random_range(1..plen);
                index::sample(rng, plen, k).into_iter().map(|j| premise[j]).collect()
            }
            NliLabel::Contradiction => {
                let k = rng.random_range(spec.len_min..=spec.len_max);
                fresh_outside(lex, &premise, k, rng)
            }
            NliLabel::Neutral => {
                let k = rng.random_range(spec.len_min.max(2)..=spec.len_max);
                let keep = rng.random_range(1..k.min(plen + 1));
                let mut h: Vec<Concept> = index::sample(rng, plen, keep).into_iter().map(|j| premise[j]).collect();
                h.extend(fresh_outside(lex, &premise, k - keep, rng));
                h.shuffle(rng);
                h
            }
        };
        debug_assert_eq!(nli_label(&premise, &hypothesis), target);
        let label = nli_label(&premise, &hypothesis);
        out.push(NliTriple {
            premise: lex.render(&premise, Language::A, spec.noise_rate, rng),
            hypothesis: lex.render(&hypothesis, Language::A, spec.noise_rate, rng),
            premise_concepts: premise,
            hypothesis_concepts: hypothesis,
            label,
        });
    }
    out.shuffle(rng);
    Ok(out)
}

/// Language-A premise/hypothesis pairs with labels cycling through the three
/// classes (so counts differ by at most one).
pub fn gen_nli_triples(lex: &Lexicon, spec: &PairSpec, seed: u64) -> Result<Vec<NliTriple>> {
    gen_nli_with(lex, spec, &mut stream_rng(seed, 4))
}

/// Everything needed for a training + evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub lexicon: LexiconConfig,
    pub parallel: ParallelSpec,
    pub mining: MiningSpec,
    pub sts: PairSpec,
    pub nli: PairSpec,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lexicon: LexiconConfig::default(),
            parallel: ParallelSpec::default(),
            mining: MiningSpec::default(),
            sts: PairSpec::default(),
            nli: PairSpec {
                n: 5000,
                ..PairSpec::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub lexicon: Lexicon,
    pub parallel: ParallelCorpus,
    pub mining_validation: MiningCorpus,
    pub mining_test: MiningCorpus,
    pub sts: Vec<StsPair>,
    pub nli: Vec<NliTriple>,
}

impl World {
    /// Parallel and mining sentences never share a concept set with each
    /// other; each dataset has its own RNG stream.
    pub fn generate(config: &WorldConfig) -> Result<Self> {
        let lexicon = Lexicon::generate(&config.lexicon, config.seed)?;
        let mut used = HashSet::new();
        let parallel = gen_parallel_with(&lexicon, &config.parallel, &mut used, &mut stream_rng(config.seed, 1))?;
        let mining_validation = gen_mining_with(&lexicon, &config.mining, &mut used, &mut stream_rng(config.seed, 2))?;
        let mining_test = gen_mining_with(&lexicon, &config.mining, &mut used, &mut stream_rng(config.seed, 5))?;
        let sts = gen_sts_with(&lexicon, &config.sts, &mut stream_rng(config.seed, 3))?;
        let nli = gen_nli_with(&lexicon, &config.nli, &mut stream_rng(config.seed, 4))?;
        Ok(Self {
            lexicon,
            parallel,
            mining_validation,
            mining_test,
            sts,
            nli,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::generate(&LexiconConfig::default(), 3).unwrap()
    }

    fn small_spec() -> ParallelSpec {
        ParallelSpec {
            train: 300,
            validation: 50,
            test: 50,
            ..ParallelSpec::default()
        }
    }

    #[test]
    fn lexicon_is_bijective() {
        let l = lex();
        for s in [&l.surface_a, &l.surface_b] {
            let set: HashSet<_> = s.iter().collect();
            assert_eq!(set.len(), l.concept_count);
            assert!(s.iter().all(|&t| !l.is_function_token(t)));
        }
        assert_ne!(l.surface_a, l.surface_b);
    }

    #[test]
    fn word_orders() {
        assert_eq!(WordOrder::Reverse.apply(&[1, 2, 3]), vec![3, 2, 1]);
        assert_eq!(WordOrder::EvenOdd.apply(&[0, 1, 2, 3, 4]), vec![0, 2, 4, 1, 3]);
        assert_eq!(WordOrder::Identity.apply(&[5, 6]), vec![5, 6]);
    }

    #[test]
    fn same_seed_same_corpus() {
        let l = lex();
        let a = gen_parallel_corpus(&l, &small_spec(), 9).unwrap();
        let b = gen_parallel_corpus(&l, &small_spec(), 9).unwrap();
        assert_eq!(a, b);
        let c = gen_parallel_corpus(&l, &small_spec(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_identity_order_has_equal_lengths() {
        let l = Lexicon::generate(
            &LexiconConfig {
                order_b: WordOrder::Identity,
                ..LexiconConfig::default()
            },
            1,
        )
        .unwrap();
        let spec = ParallelSpec {
            noise_rate: 0.0,
            ..small_spec()
        };
        for p in gen_parallel_corpus(&l, &spec, 2).unwrap().pairs {
            assert_eq!(p.a.len(), p.b.len());
        }
    }

    #[test]
    fn pairs_share_concepts_and_splits_are_disjoint() {
        let l = lex();
        let corpus = gen_parallel_corpus(&l, &small_spec(), 4).unwrap();
        assert_eq!(corpus.split(Split::Validation).len(), 50);
        let mut seen = HashSet::new();
        for p in &corpus.pairs {
            assert_eq!(concept_key(&l.decode(&p.a, Language::A)), concept_key(&p.concepts));
            assert_eq!(concept_key(&l.decode(&p.b, Language::B)), concept_key(&p.concepts));
            assert!(seen.insert(concept_key(&p.concepts)), "duplicate concept set");
        }
        let (a, b): (Vec<_>, Vec<_>) = corpus
            .split(Split::Test)
            .iter()
            .map(|p| (l.decode(&p.a, Language::A), l.decode(&p.b, Language::B)))
            .unzip();
        audit_separability(&a, &b).unwrap();
    }

    #[test]
    fn parallel_config_errors() {
        let l = lex();
        let bad = ParallelSpec {
            len_min: 2,
            ..small_spec()
        };
        assert!(matches!(
            gen_parallel_corpus(&l, &bad, 0),
            Err(Error::ConfigInvalid { .. })
        ));
        let empty = ParallelSpec {
            train: 0,
            validation: 0,
            test: 0,
            ..small_spec()
        };
        assert!(gen_parallel_corpus(&l, &empty, 0).is_err());
    }

    #[test]
    fn mining_counts_and_gold() {
        let l = lex();
        let spec = MiningSpec {
            n_a: 300,
            n_b: 250,
            parallel_fraction: 0.1,
            ..MiningSpec::default()
        };
        let m = gen_mining_corpus(&l, &spec, 5).unwrap();
        assert_eq!(m.side_a.len(), 300);
        assert_eq!(m.side_b.len(), 250);
        assert_eq!(m.gold_pairs.len(), 25);
        for &(i, j) in &m.gold_pairs {
            assert_eq!(concept_key(&m.side_a[i].concepts), concept_key(&m.side_b[j].concepts));
        }
        audit_mining_corpus(&m).unwrap();
        let bad = MiningSpec {
            parallel_fraction: 1.0,
            ..spec
        };
        assert!(matches!(
            gen_mining_corpus(&l, &bad, 5),
            Err(Error::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn sts_gold_is_jaccard() {
        let l = lex();
        let pairs = gen_sts_pairs(
            &l,
            &PairSpec {
                n: 300,
                ..PairSpec::default()
            },
            6,
        )
        .unwrap();
        let mut has_zero = false;
        let mut has_one = false;
        for p in &pairs {
            assert_eq!(p.gold_sim, jaccard(&p.concepts1, &p.concepts2));
            has_zero |= p.gold_sim == 0.0;
            has_one |= p.gold_sim == 1.0;
        }
        assert!(has_zero && has_one);
        assert_eq!(jaccard(&[1, 2, 3], &[3, 2, 1]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[3, 4]), 0.0);
    }

    #[test]
    fn nli_rule_and_balance() {
        assert_eq!(nli_label(&[1, 2, 3], &[1, 3]), NliLabel::Entailment);
        assert_eq!(nli_label(&[1, 2, 3], &[4, 5]), NliLabel::Contradiction);
        assert_eq!(nli_label(&[1, 2, 3], &[1, 2, 3]), NliLabel::Neutral);
        assert_eq!(nli_label(&[1, 2, 3], &[1, 9]), NliLabel::Neutral);

        let l = lex();
        let triples = gen_nli_triples(
            &l,
            &PairSpec {
                n: 301,
                ..PairSpec::default()
            },
            7,
        )
        .unwrap();
        let mut counts = [0usize; 3];
        for t in &triples {
            assert_eq!(nli_label(&t.premise_concepts, &t.hypothesis_concepts), t.label);
            counts[t.label.index()] += 1;
        }
        assert_eq!(counts, [101, 100, 100]);
    }

    #[test]
    fn world_generation_is_deterministic() {
        let config = WorldConfig {
            parallel: small_spec(),
            mining: MiningSpec {
                n_a: 100,
                n_b: 100,
                ..MiningSpec::default()
            },
            sts: PairSpec {
                n: 50,
                ..PairSpec::default()
            },
            nli: PairSpec {
                n: 60,
                ..PairSpec::default()
            },
            ..WorldConfig::default()
        };
        let w1 = World::generate(&config).unwrap();
        let w2 = World::generate(&config).unwrap();
        assert_eq!(w1, w2);
        let mut sets: HashSet<Vec<Concept>> = w1.parallel.pairs.iter().map(|p| concept_key(&p.concepts)).collect();
        for s in w1.mining_test.side_a.iter().chain(&w1.mining_validation.side_a) {
            let key = concept_key(&s.concepts);
            let gold_dup = w1
                .mining_test
                .side_b
                .iter()
                .chain(&w1.mining_validation.side_b)
                .any(|b| concept_key(&b.concepts) == key);
            if !gold_dup {
                assert!(sets.insert(key));
            }
        }
    }
}
