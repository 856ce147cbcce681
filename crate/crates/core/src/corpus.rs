//! Text ingestion: normalization, joint byte pair encoding, vocabularies
//! and word-budget minibatches.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Sentence-end symbol. Also used as the first decoder input.
pub const SENTENCE_END: &str = "<s>";
/// Unknown-token symbol.
pub const UNKNOWN: &str = "<unk>";
/// Suffix appended to every subword unit that does not end a word.
pub const CONTINUATION: &str = "@@";

/// Maps full-width Latin letters and digits to their ASCII forms.
///
/// Every other character, including full-width punctuation and katakana,
/// passes through untouched.
pub fn normalize_halfwidth(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{FF10}'..='\u{FF19}' | '\u{FF21}'..='\u{FF3A}' | '\u{FF41}'..='\u{FF5A}' => {
                char::from_u32(c as u32 - 0xFEE0).unwrap_or(c)
            }
            _ => c,
        })
        .collect()
}

/// Whitespace tokenization.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

/// An ordered list of learned symbol merges.
///
/// Subword output marks every unit that is not the last piece of its word
/// with the [`CONTINUATION`] suffix, so `"lower"` may become
/// `["low@@", "er"]`. Input words that themselves end in `@@` are not
/// round-trippable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate merge ({}, {})",
                    pair.0, pair.1
                )));
            }
        }
        Ok(Self { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Segments one word into subword units (without continuation markers).
    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_pair(&symbols, left, right);
        }
        symbols
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_owned(), r.to_owned()))
                }
                _ => {
                    return Err(Error::Parse {
                        path: path.to_owned(),
                        line: i + 1,
                        message: "expected \"left right\"".into(),
                    })
                }
            }
        }
        Self::from_merges(merges).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: 0,
            message: e.to_string(),
        })
    }
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns `num_merges` greedy most-frequent-pair merges.
///
/// Pairs never cross word boundaries. Equal counts are resolved in favour
/// of the lexicographically smallest pair. Learning stops early when no
/// adjacent pair is left.
pub fn learn_bpe(corpus: &[Vec<String>], num_merges: usize) -> Result<BpeModel> {
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sentence in corpus {
        for word in sentence {
            *word_counts.entry(word.as_str()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.chars().map(String::from).collect(), c))
        .collect();

    let mut merges = Vec::with_capacity(num_merges);
    let mut learned: HashSet<(String, String)> = HashSet::new();
    while merges.len() < num_merges {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((&w[0], &w[1])).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|((l, r), _)| !learned.contains(&((*l).to_owned(), (*r).to_owned())))
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|((l, r), _)| (l.to_owned(), r.to_owned()));
        let Some((left, right)) = best else { break };
        for (symbols, _) in words.iter_mut() {
            if symbols.len() > 1 {
                *symbols = merge_pair(symbols, &left, &right);
            }
        }
        learned.insert((left.clone(), right.clone()));
        merges.push((left, right));
    }
    BpeModel::from_merges(merges)
}

/// Learns merges over the pooled source and target text.
pub fn learn_joint_bpe(
    source: &[Vec<String>],
    target: &[Vec<String>],
    num_merges: usize,
) -> Result<BpeModel> {
    let pooled: Vec<Vec<String>> = source.iter().chain(target).cloned().collect();
    learn_bpe(&pooled, num_merges)
}

/// Splits each word into subword units, marking non-final units with `@@`.
pub fn apply_bpe(model: &BpeModel, sentence: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(sentence.len());
    for word in sentence {
        let units = model.segment_word(word);
        let last = units.len().saturating_sub(1);
        for (i, unit) in units.into_iter().enumerate() {
            if i < last {
                out.push(format!("{unit}{CONTINUATION}"));
            } else {
                out.push(unit);
            }
        }
    }
    out
}

/// Joins subword units back into whitespace tokens.
pub fn invert_bpe(units: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for unit in units {
        match unit.strip_suffix(CONTINUATION) {
            Some(piece) => pending.push_str(piece),
            None => {
                pending.push_str(unit);
                out.push(std::mem::take(&mut pending));
            }
        }
    }
    if !pending.is_empty() {
        out.push(pending);
    }
    out
}

/// Bidirectional token/id map. Id 0 is [`SENTENCE_END`], id 1 is [`UNKNOWN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const END_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;

    /// Builds a vocabulary from an explicit token list; reserved symbols are
    /// prepended when missing from the head of the list.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![SENTENCE_END.to_owned(), UNKNOWN.to_owned()];
        for t in tokens {
            let t = t.into();
            if t != SENTENCE_END && t != UNKNOWN {
                all.push(t);
            }
        }
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of `token`, or the unknown id.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains_id(&self, id: u32) -> bool {
        (id as usize) < self.tokens.len()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Maps ids back to tokens, dropping sentence-end symbols.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != Self::END_ID)
            .map(|&id| self.token(id).unwrap_or(UNKNOWN).to_owned())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = text.lines().collect();
        let parse_err = |line: usize, message: &str| Error::Parse {
            path: path.to_owned(),
            line,
            message: message.to_owned(),
        };
        if tokens.first() != Some(&SENTENCE_END) {
            return Err(parse_err(1, "first token must be <s>"));
        }
        if tokens.get(1) != Some(&UNKNOWN) {
            return Err(parse_err(2, "second token must be <unk>"));
        }
        let mut seen = HashSet::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(parse_err(
                    i + 1,
                    "token must be non-empty without whitespace",
                ));
            }
            if !seen.insert(*t) {
                return Err(parse_err(i + 1, "duplicate token"));
            }
        }
        Self::from_tokens(tokens.into_iter().skip(2))
    }
}

/// Keeps the `max_size` most frequent tokens; ties go to the
/// lexicographically smaller token.
pub fn build_vocab(corpus: &[Vec<String>], max_size: usize) -> Result<Vocabulary> {
    if max_size < 1 {
        return Err(Error::InvalidArgument("max_size must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for tok in sentence {
            if tok != SENTENCE_END && tok != UNKNOWN {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// One training example. Neither side carries the sentence-end symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

impl SentencePair {
    pub fn new(source: Vec<u32>, target: Vec<u32>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::EmptySentence);
        }
        Ok(Self { source, target })
    }

    /// Source plus target token count.
    pub fn word_count(&self) -> usize {
        self.source.len() + self.target.len()
    }

    pub fn check_ids(&self, src: &Vocabulary, tgt: &Vocabulary) -> Result<()> {
        if let Some(id) = self.source.iter().find(|&&id| !src.contains_id(id)) {
            return Err(Error::InvalidArgument(format!(
                "source id {id} out of range"
            )));
        }
        if let Some(id) = self.target.iter().find(|&&id| !tgt.contains_id(id)) {
            return Err(Error::InvalidArgument(format!(
                "target id {id} out of range"
            )));
        }
        Ok(())
    }
}

/// Indices into the pair list making up one minibatch.
pub type Minibatch = Vec<usize>;

/// Sorts pairs by descending source length (stable) and groups them
/// sequentially so that no batch exceeds `word_budget` words, except a
/// single pair that is larger than the budget on its own.
pub fn make_minibatches(pairs: &[SentencePair], word_budget: usize) -> Result<Vec<Minibatch>> {
    if word_budget < 1 {
        return Err(Error::InvalidArgument(
            "word budget must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[b].source.len().cmp(&pairs[a].source.len()));

    let mut batches = Vec::new();
    let mut current: Minibatch = Vec::new();
    let mut words = 0;
    for idx in order {
        let n = pairs[idx].word_count();
        if !current.is_empty() && words + n > word_budget {
            batches.push(std::mem::take(&mut current));
            words = 0;
        }
        current.push(idx);
        words += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Reads a line-aligned parallel corpus.
pub fn read_parallel(source: &Path, target: &Path) -> Result<Vec<(String, String)>> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch {
            source_path: source.to_owned(),
            source_lines: src.len(),
            target_path: target.to_owned(),
            target_lines: tgt.len(),
        });
    }
    Ok(src.into_iter().zip(tgt).collect())
}

/// Reads a plain text file as whitespace-tokenized sentences.
pub fn read_tokenized(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

/// Encodes tokenized text pairs, skipping pairs where either side is empty.
pub fn encode_pairs(
    source: &[Vec<String>],
    target: &[Vec<String>],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Vec<SentencePair> {
    source
        .iter()
        .zip(target)
        .filter_map(|(s, t)| SentencePair::new(src_vocab.encode(s), tgt_vocab.encode(t)).ok())
        .collect()
}
