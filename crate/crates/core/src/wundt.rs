//! Placement of lines on the predictable ↔ random spectrum.
//!
//! Surprisal under the baseline LM is the spectrum coordinate; trigram
//! novelty against the training corpus measures how much of a line is
//! recycled. The band filter keeps the middle of the surprisal range.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::baseline_lm::LmModel;
use crate::corpus::Corpus;
use crate::error::ModelError;
use crate::generated::GeneratedLine;
use crate::scalar::Scalar;

pub const DEFAULT_NGRAM: usize = 3;
pub const DEFAULT_QUANTILES: (f64, f64) = (0.25, 0.75);
pub const DEFAULT_REFERENCE_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WundtError {
    #[error("{scores} scores for {lines} lines")]
    MisalignedScores { lines: usize, scores: usize },
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("quantile band needs a non-empty reference sample")]
    EmptyReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScore {
    pub surprisal: f64,
    pub novelty: f64,
    pub in_band: bool,
    pub components: BTreeMap<String, f64>,
}

impl LineScore {
    pub fn new(surprisal: f64, novelty: f64, band: &ResolvedBand) -> Self {
        let components = BTreeMap::from([("novelty".to_string(), novelty), ("surprisal".to_string(), surprisal)]);
        Self {
            surprisal,
            novelty,
            in_band: band.contains(surprisal),
            components,
        }
    }
}

/// Band as absolute nats/token or as quantiles of a reference sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BandConfig {
    Absolute { low: f64, high: f64 },
    Quantile { q_low: f64, q_high: f64 },
}

impl Default for BandConfig {
    fn default() -> Self {
        BandConfig::Quantile {
            q_low: DEFAULT_QUANTILES.0,
            q_high: DEFAULT_QUANTILES.1,
        }
    }
}

impl BandConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN bounds
    pub fn validate(&self) -> Result<(), WundtError> {
        match *self {
            BandConfig::Absolute { low, high } if !(low < high) => {
                Err(WundtError::InvalidBand(format!("low {low} must be < high {high}")))
            }
            BandConfig::Quantile { q_low, q_high }
                if !(0.0 < q_low && q_low < q_high && q_high < 1.0) =>
            {
                Err(WundtError::InvalidBand(format!(
                    "quantiles must satisfy 0 < {q_low} < {q_high} < 1"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_reference(&self) -> bool {
        matches!(self, BandConfig::Quantile { .. })
    }

    /// Fixes the band to absolute bounds; quantile mode uses `reference`.
    pub fn resolve(&self, reference: &[f64]) -> Result<ResolvedBand, WundtError> {
        self.validate()?;
        match *self {
            BandConfig::Absolute { low, high } => Ok(ResolvedBand { low, high }),
            BandConfig::Quantile { q_low, q_high } => {
                let mut sorted: Vec<f64> = reference.iter().copied().filter(|v| v.is_finite()).collect();
                if sorted.is_empty() {
                    return Err(WundtError::EmptyReference);
                }
                sorted.sort_by(f64::total_cmp);
                Ok(ResolvedBand {
                    low: quantile_sorted(&sorted, q_low),
                    high: quantile_sorted(&sorted, q_high),
                })
            }
        }
    }
}

/// Inclusive surprisal interval. Infinite bounds serialise as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedBand {
    #[serde(serialize_with = "bound::ser", deserialize_with = "bound::de_low")]
    pub low: f64,
    #[serde(serialize_with = "bound::ser", deserialize_with = "bound::de_high")]
    pub high: f64,
}

impl ResolvedBand {
    pub const UNBOUNDED: ResolvedBand = ResolvedBand {
        low: f64::NEG_INFINITY,
        high: f64::INFINITY,
    };

    pub fn contains(&self, surprisal: f64) -> bool {
        self.low <= surprisal && surprisal <= self.high
    }
}

mod bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn ser<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn de_low<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }

    pub fn de_high<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Linear-interpolation quantile of ascending `sorted` values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Min, quartiles and max keyed `min q25 q50 q75 max`.
pub fn summary_quantiles(values: &[f64]) -> BTreeMap<String, f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return BTreeMap::new();
    }
    sorted.sort_by(f64::total_cmp);
    [("min", 0.0), ("q25", 0.25), ("q50", 0.5), ("q75", 0.75), ("max", 1.0)]
        .into_iter()
        .map(|(k, q)| (k.to_string(), quantile_sorted(&sorted, q)))
        .collect()
}

/// Word n-gram sets of a reference corpus, for every order `1..=n`.
#[derive(Debug, Clone, Default)]
pub struct NgramIndex {
    n: usize,
    by_order: Vec<HashSet<Vec<String>>>,
}

impl NgramIndex {
    pub fn new<'a>(texts: impl IntoIterator<Item = &'a str>, n: usize) -> Self {
        let n = n.max(1);
        let mut by_order = vec![HashSet::new(); n];
        for text in texts {
            let words: Vec<&str> = text.split_whitespace().collect();
            for (k, set) in by_order.iter_mut().enumerate() {
                for gram in words.windows(k + 1) {
                    set.insert(gram.iter().map(|w| w.to_string()).collect());
                }
            }
        }
        Self { n, by_order }
    }

    /// Index over the corpus training split.
    pub fn from_corpus(corpus: &Corpus, n: usize) -> Self {
        Self::new(corpus.train_lines().map(|l| l.text.as_str()), n)
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Share of the line's n-grams absent from the index. Lines shorter than
    /// `n` use their own length as the order; an empty line scores 0.
    pub fn novelty(&self, text: &str) -> f64 {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return 0.0;
        }
        let order = self.n.min(words.len());
        let set = &self.by_order[order - 1];
        let grams: Vec<Vec<String>> = words
            .windows(order)
            .map(|g| g.iter().map(|w| w.to_string()).collect())
            .collect();
        let present = grams.iter().filter(|g| set.contains(*g)).count();
        1.0 - present as f64 / grams.len() as f64
    }
}

/// Novelty of `text` against the corpus training lines.
pub fn novelty(text: &str, corpus: &Corpus, n: usize) -> f64 {
    NgramIndex::from_corpus(corpus, n).novelty(text)
}

/// Scores lines with a fixed LM, n-gram index and band.
pub struct Scorer<'a, T> {
    pub lm: &'a LmModel<T>,
    pub index: &'a NgramIndex,
    pub band: ResolvedBand,
}

impl<T: Scalar> Scorer<'_, T> {
    pub fn score(&self, tokens: &[usize], text: &str) -> Result<LineScore, ModelError> {
        Ok(self.score_batch(&[(tokens, text)])?.remove(0))
    }

    pub fn score_batch(&self, lines: &[(&[usize], &str)]) -> Result<Vec<LineScore>, ModelError> {
        let toks: Vec<&[usize]> = lines.iter().map(|(t, _)| *t).collect();
        let surprisals = self.lm.surprisals(&toks)?;
        Ok(surprisals
            .into_iter()
            .zip(lines)
            .map(|(s, (_, text))| LineScore::new(s.to_f64_lossy(), self.index.novelty(text), &self.band))
            .collect())
    }

    /// Attaches scores to every line of `pool`.
    pub fn score_pool(&self, pool: &mut [GeneratedLine]) -> Result<(), ModelError> {
        for chunk in pool.chunks_mut(256) {
            let lines: Vec<(&[usize], &str)> = chunk.iter().map(|l| (l.tokens.as_slice(), l.text.as_str())).collect();
            let scores = self.score_batch(&lines)?;
            for (line, score) in chunk.iter_mut().zip(scores) {
                line.score = Some(score);
            }
        }
        Ok(())
    }
}

/// One-off scoring of a single line.
pub fn score_line<T: Scalar>(
    tokens: &[usize],
    text: &str,
    lm: &LmModel<T>,
    corpus: &Corpus,
    band: &ResolvedBand,
) -> Result<LineScore, ModelError> {
    let index = NgramIndex::from_corpus(corpus, DEFAULT_NGRAM);
    Scorer {
        lm,
        index: &index,
        band: *band,
    }
    .score(tokens, text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub below: usize,
    pub in_band: usize,
    pub above: usize,
    pub band: ResolvedBand,
    pub quantiles: BTreeMap<String, f64>,
}

/// Keeps lines whose surprisal falls inside `band`, preserving order.
/// Retained lines carry their score with `in_band` refreshed.
pub fn band_filter(
    pool: &[GeneratedLine],
    scores: &[LineScore],
    band: &ResolvedBand,
) -> Result<(Vec<GeneratedLine>, BandReport), WundtError> {
    if pool.len() != scores.len() {
        return Err(WundtError::MisalignedScores {
            lines: pool.len(),
            scores: scores.len(),
        });
    }
    let mut kept = Vec::new();
    let (mut below, mut above) = (0, 0);
    for (line, score) in pool.iter().zip(scores) {
        if score.surprisal < band.low {
            below += 1;
        } else if score.surprisal > band.high {
            above += 1;
        } else {
            let mut line = line.clone();
            let mut s = score.clone();
            s.in_band = true;
            line.score = Some(s);
            kept.push(line);
        }
    }
    let surprisals: Vec<f64> = scores.iter().map(|s| s.surprisal).collect();
    let report = BandReport {
        below,
        in_band: kept.len(),
        above,
        band: *band,
        quantiles: summary_quantiles(&surprisals),
    };
    Ok((kept, report))
}

/// [`band_filter`] using the scores already attached to the lines;
/// unscored lines are dropped.
pub fn band_filter_scored(pool: &[GeneratedLine], band: &ResolvedBand) -> (Vec<GeneratedLine>, BandReport) {
    let scored: Vec<GeneratedLine> = pool.iter().filter(|l| l.score.is_some()).cloned().collect();
    let scores: Vec<LineScore> = scored.iter().filter_map(|l| l.score.clone()).collect();
    band_filter(&scored, &scores, band).expect("scores taken from the same lines")
}

/// Removes exact-text duplicates, keeping first occurrences in order.
pub fn dedup(pool: Vec<GeneratedLine>) -> Vec<GeneratedLine> {
    let mut seen = HashSet::new();
    pool.into_iter().filter(|l| seen.insert(l.text.clone())).collect()
}

/// JSON score report written by the `score` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub lines: Vec<ScoredText>,
    pub quantiles: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub text: String,
    pub surprisal: f64,
    pub novelty: f64,
    pub in_band: bool,
}
