//! Linear-model decoding of confusion networks.
//!
//! Feature order is fixed: `globalVote_0 .. globalVote_{I-1}`, `primary`,
//! `lm`, `wordPenalty`, then `localVote` when the neural model is active.
//! Epsilon arcs carry only the vote and primary features.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::align::{ConfusionNetwork, MergedArc};
use crate::nnvote::LocalVoteModel;
use crate::oracle::ArcScorer;
use crate::{Error, Result, BOS, EOS, UNKNOWN};

#[derive(Debug, Clone, Default)]
struct Dist {
    counts: HashMap<u32, u64>,
    total: u64,
}

impl Dist {
    fn add(&mut self, w: u32) {
        *self.counts.entry(w).or_insert(0) += 1;
        self.total += 1;
    }

    fn types(&self) -> u64 {
        self.counts.len() as u64
    }

    fn count(&self, w: u32) -> u64 {
        self.counts.get(&w).copied().unwrap_or(0)
    }

    /// Witten-Bell interpolation with the lower-order estimate.
    fn interpolate(&self, w: u32, lower: f64) -> f64 {
        let t = self.types() as f64;
        (self.count(w) as f64 + t * lower) / (self.total as f64 + t)
    }
}

/// Interpolated Witten-Bell trigram model. Each sentence is padded as
/// `<s> <s> w_1 .. w_n </s>`; the unigram level backs off to a uniform
/// distribution over every predictable token including `</s>` and `<unk>`.
#[derive(Debug, Clone)]
pub struct TrigramLM {
    ids: HashMap<String, u32>,
    unigram: Dist,
    bigram: HashMap<u32, Dist>,
    trigram: HashMap<(u32, u32), Dist>,
    /// Number of predictable tokens; `<s>` is excluded.
    predictable: usize,
}

impl TrigramLM {
    const BOS_ID: u32 = 0;
    const EOS_ID: u32 = 1;
    const UNK_ID: u32 = 2;

    pub fn train<S: AsRef<[T]>, T: AsRef<str>>(corpus: &[S]) -> Self {
        let words: BTreeSet<&str> = corpus
            .iter()
            .flat_map(|s| s.as_ref().iter().map(|w| w.as_ref()))
            .filter(|w| ![BOS, EOS, UNKNOWN].contains(w))
            .collect();
        let mut ids: HashMap<String, u32> =
            [BOS, EOS, UNKNOWN].iter().enumerate().map(|(i, w)| (w.to_string(), i as u32)).collect();
        for w in words {
            let next = ids.len() as u32;
            ids.insert(w.to_string(), next);
        }
        let mut lm = TrigramLM {
            predictable: ids.len() - 1,
            ids,
            unigram: Dist::default(),
            bigram: HashMap::new(),
            trigram: HashMap::new(),
        };
        for s in corpus {
            let (mut u, mut v) = (Self::BOS_ID, Self::BOS_ID);
            let seq =
                s.as_ref().iter().map(|w| lm.id(w.as_ref())).chain(std::iter::once(Self::EOS_ID)).collect::<Vec<_>>();
            for w in seq {
                lm.unigram.add(w);
                lm.bigram.entry(v).or_default().add(w);
                lm.trigram.entry((u, v)).or_default().add(w);
                u = v;
                v = w;
            }
        }
        lm
    }

    /// Model id of a word; unseen words share the `<unk>` id.
    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn bos_id(&self) -> u32 {
        Self::BOS_ID
    }

    pub fn eos_id(&self) -> u32 {
        Self::EOS_ID
    }

    /// Ids of every predictable token (all but `<s>`).
    pub fn predictable_ids(&self) -> impl Iterator<Item = u32> {
        1..=self.predictable as u32
    }

    pub fn prob_ids(&self, u: u32, v: u32, w: u32) -> f64 {
        let uniform = 1.0 / self.predictable as f64;
        let p1 = self.unigram.interpolate(w, uniform);
        let p2 = match self.bigram.get(&v) {
            Some(d) => d.interpolate(w, p1),
            None => p1,
        };
        match self.trigram.get(&(u, v)) {
            Some(d) => d.interpolate(w, p2),
            None => p2,
        }
    }

    /// p(w | u v) for surface words.
    pub fn prob(&self, u: &str, v: &str, w: &str) -> f64 {
        self.prob_ids(self.id(u), self.id(v), self.id(w))
    }

    pub fn logprob_ids(&self, u: u32, v: u32, w: u32) -> f64 {
        self.prob_ids(u, v, w).ln()
    }

    /// Log-probability of a whole sentence including `</s>`.
    pub fn sentence_logprob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let (mut u, mut v) = (Self::BOS_ID, Self::BOS_ID);
        let mut total = 0.0;
        for w in words.iter().map(|w| self.id(w.as_ref())).chain(std::iter::once(Self::EOS_ID)) {
            total += self.logprob_ids(u, v, w);
            u = v;
            v = w;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub num_systems: usize,
    pub local_vote: bool,
}

impl FeatureLayout {
    pub fn new(num_systems: usize, local_vote: bool) -> Self {
        FeatureLayout { num_systems, local_vote }
    }

    pub fn dim(&self) -> usize {
        self.num_systems + 3 + usize::from(self.local_vote)
    }

    pub fn primary(&self) -> usize {
        self.num_systems
    }

    pub fn lm(&self) -> usize {
        self.num_systems + 1
    }

    pub fn word_penalty(&self) -> usize {
        self.num_systems + 2
    }

    pub fn local_vote_index(&self) -> Option<usize> {
        self.local_vote.then_some(self.num_systems + 3)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.num_systems).map(|i| format!("globalVote_{i}")).collect();
        names.extend(["primary", "lm", "wordPenalty"].map(String::from));
        if self.local_vote {
            names.push("localVote".into());
        }
        names
    }

    /// Layout implied by a list of feature names, if it is one.
    pub fn from_names(names: &[String]) -> Result<Self> {
        let local_vote = names.last().is_some_and(|n| n == "localVote");
        let base = names.len().checked_sub(3 + usize::from(local_vote));
        let layout = base.map(|i| FeatureLayout::new(i, local_vote));
        match layout {
            Some(l) if l.names() == names => Ok(l),
            _ => Err(Error::Format(format!("unrecognized feature names: {}", names.join(" ")))),
        }
    }
}

/// Weight vector aligned with a feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layout: FeatureLayout,
    pub values: Vec<f64>,
}

impl Weights {
    pub fn new(layout: FeatureLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Config(format!("{} weights for {} features", values.len(), layout.dim())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("weights must be finite".into()));
        }
        Ok(Weights { layout, values })
    }

    /// Every weight set to 1.
    pub fn uniform(layout: FeatureLayout) -> Self {
        Weights { layout, values: vec![1.0; layout.dim()] }
    }

    /// Same weights with a `localVote` weight appended.
    pub fn with_local_vote(&self, weight: f64) -> Self {
        let mut values = self.values[..self.layout.num_systems + 3].to_vec();
        values.push(weight);
        Weights { layout: FeatureLayout::new(self.layout.num_systems, true), values }
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        self.values.iter().zip(features).map(|(w, f)| w * f).sum()
    }

    /// Writes `name<TAB>value` lines in feature order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for (n, v) in self.layout.names().iter().zip(&self.values) {
            text.push_str(&format!("{n}\t{v}\n"));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (name, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("{}:{}: expected name<TAB>value", path.display(), n + 1)))?;
            names.push(name.to_string());
            values.push(
                value.trim().parse::<f64>().map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?,
            );
        }
        Weights::new(FeatureLayout::from_names(&names)?, values)
    }
}

/// Vote, primary and word-penalty features of one merged arc; the LM (and
/// localVote) entries are left at 0.
pub fn arc_features(arc: &MergedArc, layout: &FeatureLayout, primary_id: usize) -> Vec<f64> {
    let mut f = vec![0.0; layout.dim()];
    for &i in &arc.support {
        f[i] = 1.0;
    }
    if arc.support.contains(&primary_id) {
        f[layout.primary()] = 1.0;
    }
    if !arc.label.is_eps() {
        f[layout.word_penalty()] = 1.0;
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    pub words: Vec<String>,
    pub features: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub sentence_index: usize,
    pub entries: Vec<NBestEntry>,
}

impl NBestList {
    pub fn best(&self) -> Option<&NBestEntry> {
        self.entries.first()
    }
}

#[derive(Clone)]
struct Partial {
    words: Vec<u32>,
    feats: Vec<f64>,
    score: f64,
}

fn rank(a: &Partial, b: &Partial) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.words.cmp(&b.words))
}

/// Exact n-best decoding. Partial paths are grouped by LM state (the last
/// two emitted words); within a state paths with equal surfaces are
/// recombined and only the best `n` survive. Ties go to the
/// lexicographically smaller surface.
pub fn decode_nbest(
    cn: &ConfusionNetwork,
    weights: &Weights,
    lm: &TrigramLM,
    local_vote: Option<&LocalVoteModel>,
    n: usize,
) -> Result<NBestList> {
    let layout = FeatureLayout::new(cn.num_systems, local_vote.is_some());
    if weights.layout != layout {
        return Err(Error::Config(format!(
            "weights cover {} features, decoder needs {}",
            weights.layout.dim(),
            layout.dim()
        )));
    }
    if n == 0 {
        return Err(Error::Config("n-best size must be >= 1".into()));
    }
    let merged = cn.merged_slots();
    let lv_scores = match local_vote {
        Some(m) => Some(m.score_network(cn, &merged)?),
        None => None,
    };

    // Sentence-local ids in surface order so id sequences sort like words.
    let surfaces: Vec<&str> =
        merged.iter().flatten().filter_map(|m| m.label.as_word()).collect::<BTreeSet<_>>().into_iter().collect();
    let lm_ids: Vec<u32> = surfaces.iter().map(|w| lm.id(w)).collect();
    let local_id = |w: &str| surfaces.binary_search(&w).expect("interned") as u32;

    struct ArcInfo {
        word: Option<u32>,
        feats: Vec<f64>,
    }
    let arcs: Vec<Vec<ArcInfo>> = merged
        .iter()
        .enumerate()
        .map(|(t, slot)| {
            slot.iter()
                .enumerate()
                .map(|(a, m)| {
                    let mut feats = arc_features(m, &layout, cn.primary_id);
                    if let (Some(idx), Some(s)) = (layout.local_vote_index(), &lv_scores) {
                        feats[idx] = s[t][a];
                    }
                    ArcInfo { word: m.label.as_word().map(local_id), feats }
                })
                .collect()
        })
        .collect();

    let bos = lm.bos_id();
    let mut beam: BTreeMap<(u32, u32), Vec<Partial>> = BTreeMap::new();
    beam.insert((bos, bos), vec![Partial { words: Vec::new(), feats: vec![0.0; layout.dim()], score: 0.0 }]);
    for slot in &arcs {
        let mut next: BTreeMap<(u32, u32), Vec<Partial>> = BTreeMap::new();
        let mut seen: HashMap<(u32, u32), HashMap<Vec<u32>, usize>> = HashMap::new();
        for (&(u, v), partials) in &beam {
            for p in partials {
                for arc in slot {
                    let mut feats = p.feats.clone();
                    for (f, x) in feats.iter_mut().zip(&arc.feats) {
                        *f += x;
                    }
                    let mut words = p.words.clone();
                    let state = match arc.word {
                        Some(w) => {
                            let id = lm_ids[w as usize];
                            feats[layout.lm()] += lm.logprob_ids(u, v, id);
                            words.push(w);
                            (v, id)
                        }
                        None => (u, v),
                    };
                    let q = Partial { score: weights.score(&feats), words, feats };
                    let bucket = next.entry(state).or_default();
                    let index = seen.entry(state).or_default();
                    match index.get(&q.words) {
                        Some(&i) => {
                            if q.score > bucket[i].score {
                                bucket[i] = q;
                            }
                        }
                        None => {
                            index.insert(q.words.clone(), bucket.len());
                            bucket.push(q);
                        }
                    }
                }
            }
        }
        for bucket in next.values_mut() {
            bucket.sort_by(rank);
            bucket.truncate(n);
        }
        beam = next;
    }

    let eos = lm.eos_id();
    let mut finals: Vec<Partial> = Vec::new();
    for (&(u, v), partials) in &beam {
        for p in partials {
            let mut q = p.clone();
            q.feats[layout.lm()] += lm.logprob_ids(u, v, eos);
            q.score = weights.score(&q.feats);
            finals.push(q);
        }
    }
    finals.sort_by(rank);
    finals.truncate(n);
    Ok(NBestList {
        sentence_index: cn.sentence_index,
        entries: finals
            .into_iter()
            .map(|p| NBestEntry {
                words: p.words.iter().map(|&w| surfaces[w as usize].to_string()).collect(),
                features: p.feats,
                score: p.score,
            })
            .collect(),
    })
}

/// Decodes every network; results keep network order.
pub fn decode_corpus(
    networks: &[ConfusionNetwork],
    weights: &Weights,
    lm: &TrigramLM,
    local_vote: Option<&LocalVoteModel>,
    n: usize,
) -> Result<Vec<NBestList>> {
    networks
        .par_iter()
        .map(|cn| decode_nbest(cn, weights, lm, local_vote, n).map_err(|e| e.at_sentence("decode", cn.sentence_index)))
        .collect()
}

/// 1-best word sequences of decoded lists.
pub fn one_best(lists: &[NBestList]) -> Vec<Vec<String>> {
    lists.iter().map(|l| l.best().map(|e| e.words.clone()).unwrap_or_default()).collect()
}

/// Writes `index ||| text ||| features ||| score` lines.
pub fn write_nbest(lists: &[NBestList], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for list in lists {
        for e in &list.entries {
            let feats: Vec<String> = e.features.iter().map(f64::to_string).collect();
            writeln!(out, "{} ||| {} ||| {} ||| {}", list.sentence_index, e.words.join(" "), feats.join(" "), e.score)
                .map_err(|err| Error::io(path, err))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads an n-best file; consecutive lines with the same index form a list.
pub fn read_nbest(path: impl AsRef<Path>) -> Result<Vec<NBestList>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |n: usize, msg: String| Error::Format(format!("{}:{}: {msg}", path.display(), n + 1));
    let mut lists: Vec<NBestList> = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let parts: Vec<&str> = line.split(" ||| ").collect();
        if parts.len() != 4 {
            return Err(bad(n, "expected 4 fields".into()));
        }
        let idx: usize = parts[0].trim().parse().map_err(|e| bad(n, format!("{e}")))?;
        let features = parts[2]
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| bad(n, format!("{e}"))))
            .collect::<Result<Vec<_>>>()?;
        let score: f64 = parts[3].trim().parse().map_err(|e| bad(n, format!("{e}")))?;
        let entry = NBestEntry { words: parts[1].split_whitespace().map(String::from).collect(), features, score };
        match lists.last_mut() {
            Some(l) if l.sentence_index == idx => l.entries.push(entry),
            _ => lists.push(NBestList { sentence_index: idx, entries: vec![entry] }),
        }
    }
    Ok(lists)
}

/// Baseline model score of an arc, used to break oracle ties.
pub struct BaselineScorer<'a> {
    pub weights: &'a Weights,
    pub lm: &'a TrigramLM,
}

impl ArcScorer for BaselineScorer<'_> {
    fn arc_score(&self, cn: &ConfusionNetwork, _slot: usize, arc: &MergedArc, history: &[&str]) -> f64 {
        let layout = self.weights.layout;
        let mut f = arc_features(arc, &layout, cn.primary_id);
        if let Some(w) = arc.label.as_word() {
            let n = history.len();
            let u = if n >= 2 { self.lm.id(history[n - 2]) } else { self.lm.bos_id() };
            let v = if n >= 1 { self.lm.id(history[n - 1]) } else { self.lm.bos_id() };
            f[layout.lm()] = self.lm.logprob_ids(u, v, self.lm.id(w));
        }
        self.weights.score(&f)
    }
}
