//! Lexical translation probabilities `p(e|f)` from IBM Model 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::{SentencePair, Vocabulary};
use crate::{Error, Result};

/// Default pruning threshold applied before the table is used as a lexicon.
pub const DEFAULT_MIN_PROB: f64 = 1e-3;

/// Sparse `p(e|f)`: for every source id, target ids with their probability,
/// sorted by target id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexiconTable {
    entries: BTreeMap<u32, Vec<(u32, f64)>>,
}

impl LexiconTable {
    pub fn from_entries(entries: BTreeMap<u32, Vec<(u32, f64)>>) -> Result<Self> {
        let mut entries = entries;
        for (f, dist) in entries.iter_mut() {
            dist.sort_by_key(|&(e, _)| e);
            if dist.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate target for source {f}"
                )));
            }
            let mut mass = 0.0;
            for &(e, p) in dist.iter() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!(
                        "p({e}|{f}) = {p} outside [0, 1]"
                    )));
                }
                mass += p;
            }
            if mass > 1.0 + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "distribution for source {f} sums to {mass}"
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Distribution for one source id; empty when unseen.
    pub fn distribution(&self, source: u32) -> &[(u32, f64)] {
        self.entries.get(&source).map_or(&[], Vec::as_slice)
    }

    pub fn prob(&self, source: u32, target: u32) -> f64 {
        let dist = self.distribution(source);
        dist.binary_search_by_key(&target, |&(e, _)| e)
            .map_or(0.0, |i| dist[i].1)
    }

    pub fn sources(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[(u32, f64)])> {
        self.entries.iter().map(|(&f, d)| (f, d.as_slice()))
    }

    /// Writes `source<TAB>target<TAB>probability` lines.
    pub fn save(&self, path: &Path, src: &Vocabulary, tgt: &Vocabulary) -> Result<()> {
        let mut out = String::new();
        for (&f, dist) in &self.entries {
            let f_tok = src.token(f).ok_or_else(|| {
                Error::InvalidArgument(format!("source id {f} not in vocabulary"))
            })?;
            for &(e, p) in dist {
                let e_tok = tgt.token(e).ok_or_else(|| {
                    Error::InvalidArgument(format!("target id {e} not in vocabulary"))
                })?;
                out.push_str(&format!("{f_tok}\t{e_tok}\t{p:.16e}\n"));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a TSV lexicon; tokens absent from either vocabulary are skipped.
    pub fn load(path: &Path, src: &Vocabulary, tgt: &Vocabulary) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err("expected 3 tab-separated fields".into()));
            }
            let p: f64 = fields[2]
                .parse()
                .map_err(|_| err(format!("bad probability {:?}", fields[2])))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(err(format!("probability {p} outside [0, 1]")));
            }
            if let (Some(f), Some(e)) = (src.get(fields[0]), tgt.get(fields[1])) {
                entries.entry(f).or_default().push((e, p));
            }
        }
        Self::from_entries(entries).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Trains source-to-target IBM Model 1 without a NULL word.
///
/// `t(e|f)` starts uniform over the targets that co-occur with `f`.
pub fn ibm1_train(pairs: &[SentencePair], iterations: usize) -> Result<LexiconTable> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if iterations < 1 {
        return Err(Error::InvalidArgument(
            "iterations must be at least 1".into(),
        ));
    }
    let mut cooc: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for pair in pairs {
        for &f in &pair.source {
            cooc.entry(f)
                .or_default()
                .extend(pair.target.iter().copied());
        }
    }
    let mut t: HashMap<(u32, u32), f64> = HashMap::new();
    for (&f, targets) in &cooc {
        let p = 1.0 / targets.len() as f64;
        for &e in targets {
            t.insert((f, e), p);
        }
    }

    for _ in 0..iterations {
        let mut counts: HashMap<(u32, u32), f64> = HashMap::with_capacity(t.len());
        let mut totals: HashMap<u32, f64> = HashMap::new();
        for pair in pairs {
            for &e in &pair.target {
                let z: f64 = pair.source.iter().map(|&f| t[&(f, e)]).sum();
                for &f in &pair.source {
                    let c = t[&(f, e)] / z;
                    *counts.entry((f, e)).or_default() += c;
                    *totals.entry(f).or_default() += c;
                }
            }
        }
        for (key, p) in t.iter_mut() {
            *p = counts[key] / totals[&key.0];
        }
    }

    let mut entries: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for (&f, targets) in &cooc {
        entries.insert(f, targets.iter().map(|&e| (e, t[&(f, e)])).collect());
    }
    Ok(LexiconTable { entries })
}

/// Model 1 corpus log-likelihood `sum log(1/|F| sum_f t(e|f))`.
pub fn ibm1_log_likelihood(table: &LexiconTable, pairs: &[SentencePair]) -> f64 {
    pairs
        .iter()
        .map(|pair| {
            let norm = (pair.source.len() as f64).ln();
            pair.target
                .iter()
                .map(|&e| {
                    let s: f64 = pair.source.iter().map(|&f| table.prob(f, e)).sum();
                    s.ln() - norm
                })
                .sum::<f64>()
        })
        .sum()
}

/// Drops entries below `min_prob` without renormalizing.
pub fn prune_lexicon(table: &LexiconTable, min_prob: f64) -> Result<LexiconTable> {
    if !(0.0..1.0).contains(&min_prob) {
        return Err(Error::InvalidArgument(format!(
            "min_prob {min_prob} outside [0, 1)"
        )));
    }
    let entries = table
        .entries
        .iter()
        .map(|(&f, dist)| {
            let kept = dist
                .iter()
                .copied()
                .filter(|&(_, p)| p >= min_prob)
                .collect();
            (f, kept)
        })
        .collect();
    Ok(LexiconTable { entries })
}
