//! Sentence-BLEU oracle paths through confusion networks.
//!
//! Words absent from the reference can never produce an n-gram match, so
//! they are first collapsed to a single `UNK` label per slot. The search then
//! walks the slots left to right keeping at most `k` partial hypotheses,
//! ranked by total clipped n-gram matches, then by the baseline model score,
//! then lexicographically. Partials with the same word sequence are
//! recombined. The brevity penalty only enters at the final node.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{ConfusionNetwork, Label, MergedArc, Slot};
use crate::metrics::{self, MetricConfig, NGramStats};
use crate::{Error, Result, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Beam width per node; `usize::MAX` disables pruning.
    pub k: usize,
    pub metric: MetricConfig,
    /// Break match-count ties with the baseline model score.
    pub use_model_tiebreak: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { k: 1200, metric: MetricConfig::default(), use_model_tiebreak: true }
    }
}

/// Baseline model score of taking `arc` in slot `slot` of `cn` after `history`.
pub trait ArcScorer: Sync {
    fn arc_score(&self, cn: &ConfusionNetwork, slot: usize, arc: &MergedArc, history: &[&str]) -> f64;
}

/// Replaces every word that does not occur in the reference by `UNK`, arc by
/// arc. Epsilon arcs are kept.
pub fn simplify_unk<R: AsRef<str>>(cn: &ConfusionNetwork, reference: &[R], cfg: &MetricConfig) -> ConfusionNetwork {
    let in_ref: HashSet<String> = metrics::normalize(reference, cfg).into_iter().map(|c| c.into_owned()).collect();
    let slots = cn
        .slots
        .iter()
        .map(|slot| {
            let labels = slot
                .labels()
                .map(|l| match l {
                    Label::Eps => Label::Eps,
                    Label::Word(w) => {
                        let key = metrics::normalize(std::slice::from_ref(w), cfg).remove(0);
                        if in_ref.contains(key.as_ref()) {
                            l.clone()
                        } else {
                            Label::word(UNK)
                        }
                    }
                })
                .collect();
            Slot::new(labels).expect("simplification keeps words as words")
        })
        .collect();
    ConfusionNetwork {
        slots,
        num_systems: cn.num_systems,
        primary_id: cn.primary_id,
        sentence_index: cn.sentence_index,
    }
}

/// The chosen arc of every slot and the resulting hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePath {
    pub decisions: Vec<MergedArc>,
    pub sbleu: f64,
    pub words: Vec<String>,
}

impl OraclePath {
    pub fn decision_labels(&self) -> Vec<Label> {
        self.decisions.iter().map(|d| d.label.clone()).collect()
    }
}

#[derive(Clone)]
struct Partial {
    words: Vec<u32>,
    /// Occurrences so far of each distinct reference n-gram.
    counts: Vec<u32>,
    matches: Vec<u64>,
    total_matches: u64,
    score: f64,
    back: Vec<u16>,
}

/// Per-sentence interning: ids are assigned in lexicographic order of the
/// surface strings so id sequences compare like word sequences.
struct Lexicon {
    surface: Vec<String>,
    /// Surface id to normalized id.
    norm: Vec<u32>,
}

fn rank(a: &Partial, b: &Partial) -> Ordering {
    b.total_matches
        .cmp(&a.total_matches)
        .then_with(|| b.score.total_cmp(&a.score))
        .then_with(|| a.words.cmp(&b.words))
        .then_with(|| a.back.cmp(&b.back))
}

/// Best sentence-BLEU path found by the pruned k-best search.
pub fn extract_oracle<R: AsRef<str>>(
    cn: &ConfusionNetwork,
    reference: &[R],
    cfg: &OracleConfig,
    scorer: Option<&dyn ArcScorer>,
) -> Result<OraclePath> {
    if cn.is_empty() {
        return Err(Error::Domain(format!("sentence {}: empty confusion network", cn.sentence_index)));
    }
    if reference.is_empty() {
        return Err(Error::Domain(format!("sentence {}: empty reference", cn.sentence_index)));
    }
    if cfg.k == 0 {
        return Err(Error::Config("oracle beam k must be >= 1".into()));
    }
    let order = cfg.metric.max_order;
    let merged = cn.merged_slots();

    // Interning.
    let mut surfaces: Vec<String> =
        merged.iter().flatten().filter_map(|m| m.label.as_word().map(String::from)).collect();
    surfaces.sort();
    surfaces.dedup();
    let norm_ref = metrics::normalize(reference, &cfg.metric);
    let mut norm_ids: HashMap<String, u32> = HashMap::new();
    for r in &norm_ref {
        let next = norm_ids.len() as u32;
        norm_ids.entry(r.to_string()).or_insert(next);
    }
    let lexicon = Lexicon {
        norm: surfaces
            .iter()
            .map(|s| {
                let key = metrics::normalize(std::slice::from_ref(s), &cfg.metric).remove(0).into_owned();
                let next = norm_ids.len() as u32;
                *norm_ids.entry(key).or_insert(next)
            })
            .collect(),
        surface: surfaces,
    };
    let ref_ids: Vec<u32> = norm_ref.iter().map(|r| norm_ids[r.as_ref()]).collect();
    let mut ngram_index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut ref_counts: Vec<u32> = Vec::new();
    for n in 1..=order {
        for g in ref_ids.windows(n) {
            let next = ngram_index.len();
            let idx = *ngram_index.entry(g.to_vec()).or_insert(next);
            if idx == ref_counts.len() {
                ref_counts.push(0);
            }
            ref_counts[idx] += 1;
        }
    }

    let arc_ids: Vec<Vec<Option<u32>>> = merged
        .iter()
        .map(|slot| {
            slot.iter()
                .map(|m| {
                    m.label.as_word().map(|w| lexicon.surface.binary_search_by(|s| s.as_str().cmp(w)).unwrap() as u32)
                })
                .collect()
        })
        .collect();

    let use_scores = cfg.use_model_tiebreak && scorer.is_some();
    let mut beam = vec![Partial {
        words: Vec::new(),
        counts: vec![0; ref_counts.len()],
        matches: vec![0; order],
        total_matches: 0,
        score: 0.0,
        back: Vec::new(),
    }];
    let mut key = Vec::with_capacity(order);
    for (t, slot) in merged.iter().enumerate() {
        let mut next: Vec<Partial> = Vec::with_capacity(beam.len() * slot.len());
        let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
        for p in &beam {
            for (a, arc) in slot.iter().enumerate() {
                let mut q = p.clone();
                q.back.push(a as u16);
                if use_scores {
                    let history: Vec<&str> = p.words.iter().map(|&w| lexicon.surface[w as usize].as_str()).collect();
                    q.score += scorer.unwrap().arc_score(cn, t, arc, &history);
                }
                if let Some(w) = arc_ids[t][a] {
                    q.words.push(w);
                    let len = q.words.len();
                    for n in 1..=order.min(len) {
                        key.clear();
                        key.extend(q.words[len - n..].iter().map(|&x| lexicon.norm[x as usize]));
                        if let Some(&idx) = ngram_index.get(key.as_slice()) {
                            q.counts[idx] += 1;
                            if q.counts[idx] <= ref_counts[idx] {
                                q.matches[n - 1] += 1;
                                q.total_matches += 1;
                            }
                        }
                    }
                }
                match seen.get(&q.words) {
                    Some(&i) => {
                        if rank(&q, &next[i]) == Ordering::Less {
                            next[i] = q;
                        }
                    }
                    None => {
                        seen.insert(q.words.clone(), next.len());
                        next.push(q);
                    }
                }
            }
        }
        next.sort_by(rank);
        next.truncate(cfg.k);
        beam = next;
    }

    let ref_len = ref_ids.len() as u64;
    let stats_of = |p: &Partial| {
        let len = p.words.len();
        NGramStats {
            matches: p.matches.clone(),
            totals: (1..=order).map(|n| len.saturating_sub(n - 1) as u64).collect(),
            hyp_len: len as u64,
            ref_len,
        }
    };
    let mut best: Option<(f64, &Partial)> = None;
    for p in &beam {
        let s = metrics::bleu_from_stats(&stats_of(p), true);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, p));
        }
    }
    let (sbleu, p) = best.expect("beam is never empty");
    let words: Vec<String> = p.words.iter().map(|&w| lexicon.surface[w as usize].clone()).collect();
    debug_assert_eq!(
        metrics::ngram_stats(&words, reference, &cfg.metric).matches,
        p.matches,
        "incremental clipping diverged from a full recount"
    );
    let decisions = p.back.iter().enumerate().map(|(t, &a)| merged[t][a as usize].clone()).collect();
    Ok(OraclePath { decisions, sbleu, words })
}

/// Oracle paths of a whole corpus plus corpus scores of the oracle sentences.
#[derive(Debug, Clone)]
pub struct OracleCorpus {
    pub paths: Vec<OraclePath>,
    pub bleu: f64,
    pub ter: f64,
    pub criterion: f64,
}

/// Simplifies each network against its reference and extracts its oracle.
pub fn oracle_corpus<R: AsRef<[String]> + Sync>(
    networks: &[ConfusionNetwork],
    refs: &[R],
    cfg: &OracleConfig,
    scorer: Option<&dyn ArcScorer>,
) -> Result<OracleCorpus> {
    if networks.len() != refs.len() {
        return Err(Error::CorpusShape(format!("{} networks for {} references", networks.len(), refs.len())));
    }
    let paths = networks
        .par_iter()
        .zip(refs.par_iter())
        .map(|(cn, r)| {
            let simple = simplify_unk(cn, r.as_ref(), &cfg.metric);
            extract_oracle(&simple, r.as_ref(), cfg, scorer).map_err(|e| e.at_sentence("oracle", cn.sentence_index))
        })
        .collect::<Result<Vec<_>>>()?;
    let hyps: Vec<&[String]> = paths.iter().map(|p| p.words.as_slice()).collect();
    let stats = metrics::corpus_error_stats(&hyps, refs, &cfg.metric)?;
    Ok(OracleCorpus { bleu: stats.bleu(), ter: stats.ter(), criterion: stats.criterion(), paths })
}

/// Arc-decision record: `{sentence_index, decisions, skippable}`. UNK and
/// epsilon decisions are kept but flagged as skippable for training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub sentence_index: usize,
    pub decisions: Vec<String>,
    pub skippable: Vec<bool>,
}

impl DecisionRecord {
    pub fn new(sentence_index: usize, path: &OraclePath) -> Self {
        DecisionRecord {
            sentence_index,
            decisions: path.decisions.iter().map(|d| d.label.as_str().to_string()).collect(),
            skippable: path.decisions.iter().map(|d| d.label.is_eps() || d.label.as_word() == Some(UNK)).collect(),
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        self.decisions.iter().map(|d| Label::from_token(d)).collect()
    }
}

pub fn write_decisions(records: &[DecisionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_decisions(path: impl AsRef<Path>) -> Result<Vec<DecisionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::build_network;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn colours() -> ConfusionNetwork {
        let hyps: Vec<Vec<String>> =
            ["the black cab", "an red train", "a orange car", "a green car"].iter().map(|s| toks(s)).collect();
        build_network(&hyps, 0).unwrap()
    }

    fn net(slots: &[&[&str]]) -> ConfusionNetwork {
        ConfusionNetwork {
            slots: slots.iter().map(|s| Slot::new(s.iter().map(|w| Label::from_token(w)).collect()).unwrap()).collect(),
            num_systems: slots[0].len(),
            primary_id: 0,
            sentence_index: 0,
        }
    }

    fn unlimited() -> OracleConfig {
        OracleConfig { k: usize::MAX, ..OracleConfig::default() }
    }

    #[test]
    fn simplification_examples() {
        let r = toks("the blue car");
        let cfg = MetricConfig::default();
        let s = simplify_unk(&colours(), &r, &cfg);
        let labels: Vec<Vec<&str>> = s.slots.iter().map(|sl| sl.labels().map(Label::as_str).collect()).collect();
        assert_eq!(labels[1], vec!["UNK"; 4]);
        assert_eq!(labels[2], vec!["UNK", "UNK", "car", "car"]);
        assert_eq!(labels[0], vec!["the", "UNK", "UNK", "UNK"]);

        let all_in = net(&[&["the", "car", "blue"]]);
        assert_eq!(simplify_unk(&all_in, &r, &cfg), all_in);

        let with_eps = net(&[&["cab", "<eps>", "car", "car"]]);
        let simplified = simplify_unk(&with_eps, &r, &cfg);
        let labels: Vec<&str> = simplified.slots[0].labels().map(Label::as_str).collect();
        assert_eq!(labels, vec!["UNK", "<eps>", "car", "car"]);
    }

    #[test]
    fn colour_sentence_oracle() {
        let r = toks("the blue car");
        let cfg = OracleConfig::default();
        let simple = simplify_unk(&colours(), &r, &cfg.metric);
        let path = extract_oracle(&simple, &r, &cfg, None).unwrap();
        assert_eq!(path.words, toks("the UNK car"));
        assert!((path.sbleu - 0.594_603_557_501_360_5).abs() < 1e-9);

        // On the raw network the same slots are chosen: `the`, a word that
        // is not in the reference, then `car`.
        let raw = extract_oracle(&colours(), &r, &cfg, None).unwrap();
        assert_eq!(raw.words[0], "the");
        assert_eq!(raw.words[2], "car");
        assert_eq!(raw.sbleu, path.sbleu);
    }

    #[test]
    fn system_equal_to_reference_is_found() {
        let hyps = vec![toks("x y z"), toks("a b c d"), toks("a q c")];
        let cn = build_network(&hyps, 0).unwrap();
        let path = extract_oracle(&cn, &toks("a b c d"), &OracleConfig::default(), None).unwrap();
        assert_eq!(path.sbleu, 1.0);
        assert_eq!(path.words, toks("a b c d"));
        for d in &path.decisions {
            assert!(d.support.contains(&1));
        }
    }

    #[test]
    fn errors() {
        let empty = ConfusionNetwork { slots: vec![], num_systems: 2, primary_id: 0, sentence_index: 4 };
        assert!(matches!(extract_oracle(&empty, &toks("a"), &OracleConfig::default(), None), Err(Error::Domain(_))));
        assert!(matches!(
            extract_oracle(&colours(), &Vec::<String>::new(), &OracleConfig::default(), None),
            Err(Error::Domain(_))
        ));
    }

    struct PreferSystem(usize);

    impl ArcScorer for PreferSystem {
        fn arc_score(&self, _cn: &ConfusionNetwork, _slot: usize, arc: &MergedArc, _history: &[&str]) -> f64 {
            if arc.support.contains(&self.0) {
                1.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn model_score_breaks_match_ties() {
        // `x` and `y` both miss the reference; with the scorer the path of
        // system 1 wins the tie.
        let cn = net(&[&["a", "a"], &["x", "y"], &["b", "b"]]);
        let r = toks("a b");
        let plain = extract_oracle(&cn, &r, &OracleConfig::default(), None).unwrap();
        assert_eq!(plain.words, toks("a x b"));
        let tied = extract_oracle(&cn, &r, &OracleConfig::default(), Some(&PreferSystem(1))).unwrap();
        assert_eq!(tied.words, toks("a y b"));
    }

    fn random_network(rng: &mut ChaCha8Rng) -> (ConfusionNetwork, Vec<String>) {
        let vocab: Vec<String> = (0..10).map(|i| format!("v{i}")).collect();
        let systems = 4;
        let slots = rng.random_range(1..=8);
        let mut out = Vec::new();
        for _ in 0..slots {
            let distinct = rng.random_range(1..=4);
            let mut options: Vec<Label> = (0..distinct)
                .map(|_| {
                    if rng.random_bool(0.15) {
                        Label::Eps
                    } else {
                        Label::Word(vocab[rng.random_range(0..vocab.len())].clone())
                    }
                })
                .collect();
            if options.iter().all(Label::is_eps) {
                options[0] = Label::Word(vocab[0].clone());
            }
            let word = options.iter().find(|l| !l.is_eps()).unwrap().clone();
            let mut labels: Vec<Label> =
                (0..systems).map(|_| options[rng.random_range(0..options.len())].clone()).collect();
            if labels.iter().all(Label::is_eps) {
                labels[0] = word;
            }
            out.push(Slot::new(labels).unwrap());
        }
        let rlen = rng.random_range(1..=8);
        let reference = (0..rlen).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect();
        (ConfusionNetwork { slots: out, num_systems: systems, primary_id: 0, sentence_index: 0 }, reference)
    }

    fn all_paths(cn: &ConfusionNetwork) -> Vec<Vec<String>> {
        let mut paths: Vec<Vec<String>> = vec![vec![]];
        for slot in cn.merged_slots() {
            let mut next = Vec::new();
            for p in &paths {
                for arc in &slot {
                    let mut q = p.clone();
                    if let Some(w) = arc.label.as_word() {
                        q.push(w.to_string());
                    }
                    next.push(q);
                }
            }
            next.sort();
            next.dedup();
            paths = next;
        }
        paths
    }

    #[test]
    fn unpruned_search_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = unlimited();
        for _ in 0..100 {
            let (cn, r) = random_network(&mut rng);
            let best = all_paths(&cn)
                .iter()
                .map(|p| metrics::sentence_bleu(p, &r, &cfg.metric).unwrap())
                .fold(0.0f64, f64::max);
            let path = extract_oracle(&cn, &r, &cfg, None).unwrap();
            assert_eq!(path.sbleu, best);
            assert_eq!(metrics::sentence_bleu(&path.words, &r, &cfg.metric).unwrap(), path.sbleu);
            // UNK simplification leaves the optimum unchanged.
            let simple = simplify_unk(&cn, &r, &cfg.metric);
            assert_eq!(extract_oracle(&simple, &r, &cfg, None).unwrap().sbleu, best);
        }
    }

    #[test]
    fn oracle_dominates_every_system_and_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (cn, r) = random_network(&mut rng);
            for k in [1usize, 3, 1200] {
                let cfg = OracleConfig { k, ..OracleConfig::default() };
                let path = extract_oracle(&cn, &r, &cfg, None).unwrap();
                let words: Vec<String> =
                    path.decisions.iter().filter_map(|d| d.label.as_word().map(String::from)).collect();
                assert_eq!(words, path.words);
                assert_eq!(metrics::sentence_bleu(&path.words, &r, &cfg.metric).unwrap(), path.sbleu);
                if k >= 1200 {
                    for i in 0..cn.num_systems {
                        let sys = cn.system_words(i);
                        assert!(path.sbleu >= metrics::sentence_bleu(&sys, &r, &cfg.metric).unwrap());
                    }
                }
            }
        }
    }

    #[test]
    fn corpus_with_reference_systems_scores_perfectly() {
        let refs = vec![toks("a b c d"), toks("e f g h i")];
        let nets: Vec<ConfusionNetwork> = refs
            .iter()
            .enumerate()
            .map(|(i, r)| build_network(&[toks("z z"), r.clone(), toks("a e")], i).unwrap())
            .collect();
        let out = oracle_corpus(&nets, &refs, &OracleConfig::default(), None).unwrap();
        assert_eq!(out.bleu, 1.0);
        let again = oracle_corpus(&nets, &refs, &OracleConfig::default(), None).unwrap();
        assert_eq!(again.paths, out.paths);
    }

    #[test]
    fn decisions_round_trip() {
        let r = toks("the blue car");
        let simple = simplify_unk(&colours(), &r, &MetricConfig::default());
        let path = extract_oracle(&simple, &r, &OracleConfig::default(), None).unwrap();
        let rec = DecisionRecord::new(0, &path);
        assert_eq!(rec.decisions, toks("the UNK car"));
        assert_eq!(rec.skippable, vec![false, true, false]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dec.jsonl");
        write_decisions(std::slice::from_ref(&rec), &p).unwrap();
        assert_eq!(read_decisions(&p).unwrap(), vec![rec]);
    }
}
