//! Smoothed sentence BLEU, corpus BLEU, TER with block shifts, the
//! `(TER - BLEU) / 2` tuning criterion and paired bootstrap resampling.
//!
//! Scores are fractions in `[0, 1]` throughout; only the CLI renders
//! percentages.

use std::borrow::Cow;
use std::collections::HashMap;
use std::ops::{AddAssign, SubAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Longest block moved by one TER shift.
pub const TER_MAX_SHIFT_SIZE: usize = 10;
/// Farthest a block may travel in one TER shift.
pub const TER_MAX_SHIFT_DISTANCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub max_order: usize,
    pub lowercase: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { max_order: 4, lowercase: true }
    }
}

/// Raw clipped n-gram statistics of one hypothesis (or a pooled corpus).
/// Smoothing is applied when scoring, never stored here.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NGramStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl NGramStats {
    pub fn zero(max_order: usize) -> Self {
        NGramStats { matches: vec![0; max_order], totals: vec![0; max_order], hyp_len: 0, ref_len: 0 }
    }

    pub fn max_order(&self) -> usize {
        self.matches.len()
    }
}

impl AddAssign<&NGramStats> for NGramStats {
    fn add_assign(&mut self, rhs: &NGramStats) {
        for (a, b) in self.matches.iter_mut().zip(&rhs.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&rhs.totals) {
            *a += b;
        }
        self.hyp_len += rhs.hyp_len;
        self.ref_len += rhs.ref_len;
    }
}

impl SubAssign<&NGramStats> for NGramStats {
    fn sub_assign(&mut self, rhs: &NGramStats) {
        for (a, b) in self.matches.iter_mut().zip(&rhs.matches) {
            *a -= b;
        }
        for (a, b) in self.totals.iter_mut().zip(&rhs.totals) {
            *a -= b;
        }
        self.hyp_len -= rhs.hyp_len;
        self.ref_len -= rhs.ref_len;
    }
}

pub(crate) fn normalize<'a, S: AsRef<str>>(tokens: &'a [S], cfg: &MetricConfig) -> Vec<Cow<'a, str>> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if cfg.lowercase && t.chars().any(char::is_uppercase) {
                Cow::Owned(t.to_lowercase())
            } else {
                Cow::Borrowed(t)
            }
        })
        .collect()
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches of `hyp` against `reference`.
pub fn ngram_stats<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], reference: &[R], cfg: &MetricConfig) -> NGramStats {
    let hyp = normalize(hyp, cfg);
    let reference = normalize(reference, cfg);
    let mut stats = NGramStats::zero(cfg.max_order);
    stats.hyp_len = hyp.len() as u64;
    stats.ref_len = reference.len() as u64;
    for n in 1..=cfg.max_order {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&reference, n);
        stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        stats.matches[n - 1] = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    }
    stats
}

/// `min(0, 1 - r/c)` in log space; `None` for an empty hypothesis.
fn log_brevity_penalty(hyp_len: u64, ref_len: u64) -> Option<f64> {
    if hyp_len == 0 {
        return None;
    }
    Some((1.0 - ref_len as f64 / hyp_len as f64).min(0.0))
}

/// BLEU from pooled statistics. With `add_one` every n-gram count starts at 1.
pub fn bleu_from_stats(stats: &NGramStats, add_one: bool) -> f64 {
    let Some(log_bp) = log_brevity_penalty(stats.hyp_len, stats.ref_len) else {
        return 0.0;
    };
    let order = stats.max_order();
    let mut log_prec = 0.0;
    for (m, t) in stats.matches.iter().zip(&stats.totals) {
        let (m, t) = if add_one { (*m as f64 + 1.0, *t as f64 + 1.0) } else { (*m as f64, *t as f64) };
        if m == 0.0 {
            return 0.0;
        }
        log_prec += (m / t).ln();
    }
    (log_prec / order as f64 + log_bp).exp()
}

/// Add-one smoothed BLEU of a single sentence with a per-sentence brevity
/// penalty.
pub fn sentence_bleu<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], reference: &[R], cfg: &MetricConfig) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Domain("sentence BLEU against an empty reference".into()));
    }
    Ok(bleu_from_stats(&ngram_stats(hyp, reference, cfg), true))
}

fn check_lengths(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::CorpusShape(format!("{hyps} hypotheses for {refs} references")));
    }
    Ok(())
}

fn check_refs<R: AsRef<[S]>, S: AsRef<str>>(refs: &[R]) -> Result<()> {
    if let Some(i) = refs.iter().position(|r| r.as_ref().is_empty()) {
        return Err(Error::Domain(format!("reference {i} is empty")));
    }
    Ok(())
}

/// Unsmoothed corpus BLEU over pooled clipped counts.
pub fn corpus_bleu<H, R, S, T>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> Result<f64>
where
    H: AsRef<[S]>,
    R: AsRef<[T]>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    check_lengths(hyps.len(), refs.len())?;
    check_refs(refs)?;
    let mut pooled = NGramStats::zero(cfg.max_order);
    for (h, r) in hyps.iter().zip(refs) {
        pooled += &ngram_stats(h.as_ref(), r.as_ref(), cfg);
    }
    Ok(bleu_from_stats(&pooled, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EditOp {
    Match,
    Substitution,
    /// Hypothesis word with no reference counterpart.
    Insertion,
    /// Reference word missing from the hypothesis.
    Deletion,
}

/// Levenshtein distance with its alignment. Ties prefer the diagonal, then
/// deletions, then insertions.
pub fn edit_alignment<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], reference: &[R]) -> (usize, Vec<EditOp>) {
    let (n, m) = (hyp.len(), reference.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(hyp[i - 1].as_ref() != reference[j - 1].as_ref());
            let ins = d[(i - 1) * w + j] + 1;
            let del = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1].as_ref() == reference[j - 1].as_ref();
            if d[(i - 1) * w + j - 1] + usize::from(!same) == here {
                ops.push(if same { EditOp::Match } else { EditOp::Substitution });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            ops.push(EditOp::Deletion);
            j -= 1;
        } else {
            ops.push(EditOp::Insertion);
            i -= 1;
        }
    }
    ops.reverse();
    (d[n * w + m], ops)
}

fn edit_distance<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], reference: &[R]) -> usize {
    let m = reference.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(h.as_ref() != reference[j - 1].as_ref());
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Result of a TER computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerResult {
    pub shifts: usize,
    /// Levenshtein cost after shifting.
    pub edit_cost: usize,
    pub ref_len: usize,
    /// The hypothesis after all shifts were applied (normalized tokens).
    pub shifted_hyp: Vec<String>,
    /// Monotone alignment of `shifted_hyp` to the reference.
    pub alignment: Vec<EditOp>,
}

impl TerResult {
    pub fn edits(&self) -> usize {
        self.shifts + self.edit_cost
    }

    pub fn rate(&self) -> f64 {
        self.edits() as f64 / self.ref_len as f64
    }
}

/// Moves `block_len` tokens starting at `start` so that they begin at
/// index `dest` of the result.
fn apply_shift<T: Clone>(tokens: &[T], start: usize, block_len: usize, dest: usize) -> Vec<T> {
    let mut rest: Vec<T> = Vec::with_capacity(tokens.len());
    rest.extend_from_slice(&tokens[..start]);
    rest.extend_from_slice(&tokens[start + block_len..]);
    let mut out = Vec::with_capacity(tokens.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(&tokens[start..start + block_len]);
    out.extend_from_slice(&rest[dest..]);
    out
}

/// Hypothesis positions whose word is aligned as a match.
fn matched_positions(ops: &[EditOp], hyp_len: usize) -> Vec<bool> {
    let mut matched = vec![false; hyp_len];
    let mut i = 0;
    for op in ops {
        match op {
            EditOp::Match => {
                matched[i] = true;
                i += 1;
            }
            EditOp::Substitution | EditOp::Insertion => i += 1,
            EditOp::Deletion => {}
        }
    }
    matched
}

fn contains_block(reference: &[Cow<'_, str>], block: &[Cow<'_, str>]) -> bool {
    reference.windows(block.len()).any(|w| w == block)
}

/// Translation edit rate with greedy block shifts.
///
/// Each round tries every block of at most [`TER_MAX_SHIFT_SIZE`] words that
/// occurs somewhere in the reference and is not already fully matched, at
/// every destination within [`TER_MAX_SHIFT_DISTANCE`], and applies the
/// shift with the largest reduction in edit distance net of the shift's own
/// cost. Rounds stop when no shift pays for itself.
pub fn ter<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], reference: &[R], cfg: &MetricConfig) -> Result<TerResult> {
    if reference.is_empty() {
        return Err(Error::Domain("TER against an empty reference".into()));
    }
    let reference = normalize(reference, cfg);
    let mut cur = normalize(hyp, cfg);
    let mut shifts = 0;
    let (mut cost, mut ops) = edit_alignment(&cur, &reference);
    while cost > 0 {
        let matched = matched_positions(&ops, cur.len());
        let n = cur.len();
        let mut best: Option<(usize, Vec<Cow<'_, str>>)> = None;
        let mut best_cost = cost;
        for start in 0..n {
            let longest = TER_MAX_SHIFT_SIZE.min(n - start);
            for block_len in (1..=longest).rev() {
                if matched[start..start + block_len].iter().all(|&m| m) {
                    continue;
                }
                if !contains_block(&reference, &cur[start..start + block_len]) {
                    continue;
                }
                let lo = start.saturating_sub(TER_MAX_SHIFT_DISTANCE);
                let hi = (start + TER_MAX_SHIFT_DISTANCE).min(n - block_len);
                for dest in lo..=hi {
                    if dest == start {
                        continue;
                    }
                    let cand = apply_shift(&cur, start, block_len, dest);
                    let c = edit_distance(&cand, &reference);
                    // A shift must save more than the one edit it costs.
                    if c + 1 < best_cost {
                        best_cost = c + 1;
                        best = Some((c, cand));
                    }
                }
            }
        }
        match best {
            Some((c, cand)) => {
                cur = cand;
                shifts += 1;
                let (c2, o2) = edit_alignment(&cur, &reference);
                debug_assert_eq!(c, c2);
                cost = c2;
                ops = o2;
            }
            None => break,
        }
    }
    Ok(TerResult {
        shifts,
        edit_cost: cost,
        ref_len: reference.len(),
        shifted_hyp: cur.into_iter().map(Cow::into_owned).collect(),
        alignment: ops,
    })
}

/// Corpus TER: total edits over total reference length.
pub fn corpus_ter<H, R, S, T>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> Result<f64>
where
    H: AsRef<[S]>,
    R: AsRef<[T]>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    check_lengths(hyps.len(), refs.len())?;
    check_refs(refs)?;
    let mut edits = 0usize;
    let mut len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let t = ter(h.as_ref(), r.as_ref(), cfg)?;
        edits += t.edits();
        len += t.ref_len;
    }
    Ok(edits as f64 / len as f64)
}

/// Everything the tuning criterion needs from one hypothesis; additive over
/// sentences.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub bleu: NGramStats,
    pub ter_edits: u64,
    pub ter_ref_len: u64,
}

impl ErrorStats {
    pub fn zero(max_order: usize) -> Self {
        ErrorStats { bleu: NGramStats::zero(max_order), ter_edits: 0, ter_ref_len: 0 }
    }

    pub fn compute<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], reference: &[R], cfg: &MetricConfig) -> Result<Self> {
        let t = ter(hyp, reference, cfg)?;
        Ok(ErrorStats {
            bleu: ngram_stats(hyp, reference, cfg),
            ter_edits: t.edits() as u64,
            ter_ref_len: t.ref_len as u64,
        })
    }

    pub fn bleu(&self) -> f64 {
        bleu_from_stats(&self.bleu, false)
    }

    pub fn ter(&self) -> f64 {
        self.ter_edits as f64 / self.ter_ref_len as f64
    }

    /// `(TER - BLEU) / 2`, lower is better.
    pub fn criterion(&self) -> f64 {
        (self.ter() - self.bleu()) / 2.0
    }
}

impl AddAssign<&ErrorStats> for ErrorStats {
    fn add_assign(&mut self, rhs: &ErrorStats) {
        self.bleu += &rhs.bleu;
        self.ter_edits += rhs.ter_edits;
        self.ter_ref_len += rhs.ter_ref_len;
    }
}

impl SubAssign<&ErrorStats> for ErrorStats {
    fn sub_assign(&mut self, rhs: &ErrorStats) {
        self.bleu -= &rhs.bleu;
        self.ter_edits -= rhs.ter_edits;
        self.ter_ref_len -= rhs.ter_ref_len;
    }
}

/// Pooled error statistics of a corpus.
pub fn corpus_error_stats<H, R, S, T>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> Result<ErrorStats>
where
    H: AsRef<[S]>,
    R: AsRef<[T]>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    check_lengths(hyps.len(), refs.len())?;
    check_refs(refs)?;
    let mut total = ErrorStats::zero(cfg.max_order);
    for (h, r) in hyps.iter().zip(refs) {
        total += &ErrorStats::compute(h.as_ref(), r.as_ref(), cfg)?;
    }
    Ok(total)
}

/// `(corpus TER - corpus BLEU) / 2` in fractional units.
pub fn combined_criterion<H, R, S, T>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> Result<f64>
where
    H: AsRef<[S]>,
    R: AsRef<[T]>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    Ok(corpus_error_stats(hyps, refs, cfg)?.criterion())
}

/// Default resample count of the bootstrap test.
pub const BOOTSTRAP_SAMPLES: usize = 1000;

/// Paired bootstrap resampling: the fraction of resampled corpora on which
/// system A has strictly higher corpus BLEU than system B.
pub fn bootstrap_significance<A, B, R, S, T, U>(
    hyps_a: &[A],
    hyps_b: &[B],
    refs: &[R],
    samples: usize,
    seed: u64,
    cfg: &MetricConfig,
) -> Result<f64>
where
    A: AsRef<[S]>,
    B: AsRef<[T]>,
    R: AsRef<[U]>,
    S: AsRef<str>,
    T: AsRef<str>,
    U: AsRef<str>,
{
    check_lengths(hyps_a.len(), refs.len())?;
    check_lengths(hyps_b.len(), refs.len())?;
    check_refs(refs)?;
    if samples < 100 {
        return Err(Error::Config(format!("bootstrap needs >= 100 samples, got {samples}")));
    }
    if refs.is_empty() {
        return Err(Error::Domain("bootstrap over an empty corpus".into()));
    }
    let stats_a: Vec<NGramStats> =
        hyps_a.iter().zip(refs).map(|(h, r)| ngram_stats(h.as_ref(), r.as_ref(), cfg)).collect();
    let stats_b: Vec<NGramStats> =
        hyps_b.iter().zip(refs).map(|(h, r)| ngram_stats(h.as_ref(), r.as_ref(), cfg)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = refs.len();
    let mut wins = 0usize;
    for _ in 0..samples {
        let mut a = NGramStats::zero(cfg.max_order);
        let mut b = NGramStats::zero(cfg.max_order);
        for _ in 0..size {
            let i = rng.random_range(0..size);
            a += &stats_a[i];
            b += &stats_b[i];
        }
        if bleu_from_stats(&a, false) > bleu_from_stats(&b, false) {
            wins += 1;
        }
    }
    Ok(wins as f64 / samples as f64)
}

/// Confidence marker for a bootstrap fraction: `‡` at 99%, `†` at 95%.
pub fn significance_marker(fraction: f64) -> &'static str {
    if fraction >= 0.99 {
        "‡"
    } else if fraction >= 0.95 {
        "†"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    /// Independent BLEU: enumerates n-grams by brute force with nested
    /// scans instead of hash maps.
    fn brute_force_stats(hyp: &[String], reference: &[String], order: usize) -> (Vec<u64>, Vec<u64>) {
        let mut matches = vec![0u64; order];
        let mut totals = vec![0u64; order];
        for n in 1..=order {
            if hyp.len() < n {
                continue;
            }
            let hgrams: Vec<&[String]> = hyp.windows(n).collect();
            let rgrams: Vec<&[String]> = if reference.len() >= n { reference.windows(n).collect() } else { vec![] };
            totals[n - 1] = hgrams.len() as u64;
            let mut seen: Vec<&[String]> = vec![];
            for g in &hgrams {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let ch = hgrams.iter().filter(|x| *x == g).count() as u64;
                let cr = rgrams.iter().filter(|x| *x == g).count() as u64;
                matches[n - 1] += ch.min(cr);
            }
        }
        (matches, totals)
    }

    fn brute_sbleu(hyp: &[String], reference: &[String]) -> f64 {
        if hyp.is_empty() {
            return 0.0;
        }
        let (m, t) = brute_force_stats(hyp, reference, 4);
        let mut p = 1.0f64;
        for n in 0..4 {
            p *= (m[n] as f64 + 1.0) / (t[n] as f64 + 1.0);
        }
        let bp = (1.0 - reference.len() as f64 / hyp.len() as f64).min(0.0).exp();
        bp * p.powf(0.25)
    }

    #[test]
    fn sentence_bleu_examples() {
        let cfg = MetricConfig::default();
        let r = toks("the blue car");
        assert_eq!(sentence_bleu(&r, &r, &cfg).unwrap(), 1.0);

        let unk = sentence_bleu(&toks("the UNK car"), &r, &cfg).unwrap();
        let hand = (0.75f64 * (1.0 / 3.0) * 0.5 * 1.0).powf(0.25);
        assert!((unk - hand).abs() < 1e-12);
        assert!((unk - brute_sbleu(&toks("the UNK car"), &r)).abs() < 1e-12);
        assert!((unk - 0.594_603_557_501_360_5).abs() < 1e-9);

        let short = sentence_bleu(&toks("the"), &r, &cfg).unwrap();
        assert!((short - (-2.0f64).exp()).abs() < 1e-12);
        assert!((short - 0.135_335_283_236_612_7).abs() < 1e-9);

        assert_eq!(sentence_bleu::<String, _>(&[], &r, &cfg).unwrap(), 0.0);
        assert!(matches!(sentence_bleu(&r, &Vec::<String>::new(), &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn sentence_bleu_lowercases() {
        let cfg = MetricConfig::default();
        assert_eq!(sentence_bleu(&toks("The Blue CAR"), &toks("the blue car"), &cfg).unwrap(), 1.0);
        let cased = MetricConfig { lowercase: false, ..cfg };
        assert!(sentence_bleu(&toks("The blue car"), &toks("the blue car"), &cased).unwrap() < 1.0);
    }

    #[test]
    fn corpus_bleu_examples() {
        let cfg = MetricConfig::default();
        let refs = vec![toks("a b c d e"), toks("x y z w")];
        assert_eq!(corpus_bleu(&refs, &refs, &cfg).unwrap(), 1.0);
        // Three-word sentences have no 4-grams at all.
        let short = vec![toks("a b c")];
        assert_eq!(corpus_bleu(&short, &[toks("a b c")], &cfg).unwrap(), 0.0);

        let hyps = vec![toks("a b c d f"), toks("x y z w q")];
        // Pooled brute force: orders 1..4.
        let mut m = [0u64; 4];
        let mut t = [0u64; 4];
        for (h, r) in hyps.iter().zip(&refs) {
            let (bm, bt) = brute_force_stats(h, r, 4);
            for n in 0..4 {
                m[n] += bm[n];
                t[n] += bt[n];
            }
        }
        let c = 10.0f64;
        let rl = 9.0f64;
        let bp = (1.0 - rl / c).min(0.0).exp();
        let expected = bp * ((0..4).map(|n| m[n] as f64 / t[n] as f64).product::<f64>()).powf(0.25);
        let got = corpus_bleu(&hyps, &refs, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!(matches!(corpus_bleu(&hyps[..1], &refs, &cfg), Err(Error::CorpusShape(_))));
    }

    #[test]
    fn single_sentence_corpus_differs_only_by_add_one() {
        let cfg = MetricConfig::default();
        let h = toks("the cat sat on a mat today");
        let r = toks("the cat sat on the mat");
        let stats = ngram_stats(&h, &r, &cfg);
        let mut smoothed = stats.clone();
        for v in smoothed.matches.iter_mut().chain(smoothed.totals.iter_mut()) {
            *v += 1;
        }
        assert_eq!(bleu_from_stats(&smoothed, false), sentence_bleu(&h, &r, &cfg).unwrap());
        assert_eq!(bleu_from_stats(&stats, false), corpus_bleu(&[h], &[r], &cfg).unwrap());
    }

    #[test]
    fn ter_examples() {
        let cfg = MetricConfig::default();
        let r = toks("the blue car");
        let same = ter(&r, &r, &cfg).unwrap();
        assert_eq!(same.rate(), 0.0);
        assert!(same.alignment.iter().all(|op| *op == EditOp::Match));

        let subs = ter(&toks("the black cab"), &r, &cfg).unwrap();
        assert!((subs.rate() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(subs.shifts, 0);

        let shifted = ter(&toks("car the blue"), &r, &cfg).unwrap();
        assert!((shifted.rate() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(shifted.shifts, 1);
        assert_eq!(shifted.shifted_hyp, r);

        assert!(matches!(ter(&r, &Vec::<String>::new(), &cfg), Err(Error::Domain(_))));
        let empty_hyp = ter::<String, _>(&[], &r, &cfg).unwrap();
        assert_eq!(empty_hyp.rate(), 1.0);
    }

    #[test]
    fn edit_alignment_ops_reconstruct_cost() {
        let (c, ops) = edit_alignment(&toks("a b c"), &toks("b c d"));
        assert_eq!(c, 2);
        assert_eq!(ops, vec![EditOp::Insertion, EditOp::Match, EditOp::Match, EditOp::Deletion]);
    }

    #[test]
    fn criterion_examples() {
        let cfg = MetricConfig::default();
        let refs = vec![toks("a b c d e"), toks("f g h i")];
        assert_eq!(combined_criterion(&refs, &refs, &cfg).unwrap(), -0.5);
        let disjoint = vec![toks("v w x y z"), toks("p q r s")];
        assert_eq!(combined_criterion(&disjoint, &refs, &cfg).unwrap(), 0.5);
        let hyps = vec![toks("a b x d e"), toks("g f h i j")];
        let t = corpus_ter(&hyps, &refs, &cfg).unwrap();
        let b = corpus_bleu(&hyps, &refs, &cfg).unwrap();
        assert_eq!(combined_criterion(&hyps, &refs, &cfg).unwrap(), (t - b) / 2.0);
    }

    #[test]
    fn bootstrap_examples() {
        let cfg = MetricConfig::default();
        let refs: Vec<Vec<String>> = (0..30).map(|i| toks(&format!("w{i} a b c d e{}", i % 7))).collect();
        let same = bootstrap_significance(&refs, &refs, &refs, 1000, 7, &cfg).unwrap();
        assert!(same <= 0.5);
        assert_eq!(significance_marker(same), "");

        let bad: Vec<Vec<String>> = (0..30).map(|i| toks(&format!("z{i} q r s t u"))).collect();
        assert_eq!(bootstrap_significance(&refs, &bad, &refs, 200, 7, &cfg).unwrap(), 1.0);

        let noisy: Vec<Vec<String>> = refs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut r = r.clone();
                if i % 2 == 0 {
                    r[2] = "zz".into();
                }
                r
            })
            .collect();
        let a = bootstrap_significance(&noisy, &refs, &refs, 300, 99, &cfg).unwrap();
        let b = bootstrap_significance(&noisy, &refs, &refs, 300, 99, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(matches!(bootstrap_significance(&refs, &refs, &refs, 10, 1, &cfg), Err(Error::Config(_))));
    }

    /// Every hypothesis reachable by block moves, with the fewest moves that
    /// reach it (breadth-first search without distance or size caps).
    fn exhaustive_ter(hyp: &[String], reference: &[String]) -> usize {
        use std::collections::{HashMap, VecDeque};
        let mut depth: HashMap<Vec<String>, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        depth.insert(hyp.to_vec(), 0);
        queue.push_back(hyp.to_vec());
        let mut best = usize::MAX;
        while let Some(cur) = queue.pop_front() {
            let d = depth[&cur];
            best = best.min(d + edit_distance(&cur, reference));
            if d + 1 >= best {
                continue;
            }
            let n = cur.len();
            for start in 0..n {
                for len in 1..=n - start {
                    for dest in 0..=n - len {
                        if dest == start {
                            continue;
                        }
                        let next = apply_shift(&cur, start, len, dest);
                        if !depth.contains_key(&next) {
                            depth.insert(next.clone(), d + 1);
                            queue.push_back(next);
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn exhaustive_ter_oracle_examples() {
        assert_eq!(exhaustive_ter(&toks("car the blue"), &toks("the blue car")), 1);
        assert_eq!(exhaustive_ter(&toks("the black cab"), &toks("the blue car")), 2);
    }

    #[test]
    fn greedy_ter_brackets_exhaustive_minimum() {
        use rand::seq::IndexedRandom;
        let cfg = MetricConfig::default();
        let vocab: Vec<String> = (0..20).map(|i| format!("v{i}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut equal = 0;
        let trials = 500;
        for _ in 0..trials {
            let hl = rng.random_range(1..=6);
            let rl = rng.random_range(1..=6);
            // Draw from a narrow window of the vocabulary so shifts matter.
            let window = &vocab[..rng.random_range(3..=8)];
            let r: Vec<String> = (0..rl).map(|_| window.choose(&mut rng).unwrap().clone()).collect();
            let h: Vec<String> = (0..hl).map(|_| window.choose(&mut rng).unwrap().clone()).collect();
            let greedy = ter(&h, &r, &cfg).unwrap();
            let exact = exhaustive_ter(&h, &r);
            assert!(greedy.edits() >= exact, "{h:?} {r:?}");
            assert!(greedy.edits() <= edit_distance(&h, &r));
            if greedy.edits() == exact {
                equal += 1;
            }
        }
        // Greedy search is a heuristic; on these short pairs it should
        // almost always find the optimum.
        assert!(equal as f64 >= 0.95 * trials as f64, "{equal}/{trials}");
    }

    proptest! {
        #[test]
        fn sentence_bleu_bounds_and_identity(
            h in prop::collection::vec(0u8..6, 0..9),
            r in prop::collection::vec(0u8..6, 1..9),
        ) {
            let cfg = MetricConfig::default();
            let h: Vec<String> = h.iter().map(|x| format!("t{x}")).collect();
            let r: Vec<String> = r.iter().map(|x| format!("t{x}")).collect();
            let s = sentence_bleu(&h, &r, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((s - brute_sbleu(&h, &r)).abs() < 1e-12);
            if h.len() == r.len() {
                prop_assert_eq!(s == 1.0, h == r);
            }
            prop_assert_eq!(ter(&r, &r, &cfg).unwrap().rate(), 0.0);
        }

        #[test]
        fn reordering_keeps_unigram_matches(
            h in prop::collection::vec(0u8..6, 1..9),
            r in prop::collection::vec(0u8..6, 1..9),
            rot in 0usize..9,
        ) {
            let cfg = MetricConfig::default();
            let h: Vec<String> = h.iter().map(|x| format!("t{x}")).collect();
            let r: Vec<String> = r.iter().map(|x| format!("t{x}")).collect();
            let mut p = h.clone();
            let k = rot % p.len();
            p.rotate_left(k);
            let a = ngram_stats(&h, &r, &cfg);
            let b = ngram_stats(&p, &r, &cfg);
            prop_assert_eq!(a.matches[0], b.matches[0]);
        }
    }
}
