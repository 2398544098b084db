//! Exchange-algorithm word clustering.
//!
//! Words are moved one at a time to the class that maximizes the class
//! bigram log-likelihood
//!
//! ```text
//! LL = Σ_{g,h} N(g,h) ln N(g,h) − Σ_g N(g,·) ln N(g,·) − Σ_h N(·,h) ln N(·,h) + Σ_w N(w) ln N(w)
//! ```
//!
//! where `N(w)` counts `w` as a bigram successor. Class 0 doubles as the
//! class of words never seen in training.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, BOS, EPS, UNKNOWN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub num_classes: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { num_classes: 1000, iterations: 10, seed: 1 }
    }
}

/// Total word to class mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    classes: BTreeMap<String, u32>,
    num_classes: usize,
}

impl ClassMap {
    pub fn from_assignments(classes: BTreeMap<String, u32>, num_classes: usize) -> Result<Self> {
        if let Some((w, c)) = classes.iter().find(|(_, &c)| c as usize >= num_classes) {
            return Err(Error::Config(format!("class {c} of `{w}` out of range")));
        }
        Ok(ClassMap { classes, num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.classes.contains_key(word)
    }

    /// Class of a word; unseen words fall into class 0.
    pub fn class_of(&self, word: &str) -> u32 {
        self.classes.get(word).copied().unwrap_or(0)
    }

    /// Token used in place of `token` on the network layers: reserved tokens
    /// stay as they are, everything else becomes `C<id>`.
    pub fn map_token(&self, token: &str) -> String {
        if token == BOS || token == EPS || token == UNKNOWN {
            token.to_string()
        } else {
            format!("C{}", self.class_of(token))
        }
    }

    /// Class ids of every token of every sentence.
    pub fn apply<S: AsRef<[T]>, T: AsRef<str>>(&self, sentences: &[S]) -> Vec<Vec<u32>> {
        sentences.iter().map(|s| s.as_ref().iter().map(|w| self.class_of(w.as_ref())).collect()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.classes.iter().map(|(w, &c)| (w.as_str(), c))
    }

    /// Writes `word<TAB>class_id` lines sorted by word.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (w, c) in &self.classes {
            writeln!(out, "{w}\t{c}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a class map file; the class count is one more than the largest id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut classes = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (w, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("{}:{}: expected word<TAB>class", path.display(), n + 1)))?;
            let c: u32 = c.trim().parse().map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
            classes.insert(w.to_string(), c);
        }
        let num_classes = classes.values().max().map_or(1, |&m| m as usize + 1);
        Ok(ClassMap { classes, num_classes })
    }
}

/// One accepted exchange move and the objective after it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeMove {
    pub word: String,
    pub from: u32,
    pub to: u32,
    pub objective: f64,
}

/// Everything needed to replay a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrace {
    pub initial: ClassMap,
    pub initial_objective: f64,
    pub moves: Vec<ExchangeMove>,
    /// Objective after each full sweep.
    pub iteration_objectives: Vec<f64>,
}

fn xlogx(x: i64) -> f64 {
    if x <= 0 {
        0.0
    } else {
        let x = x as f64;
        x * x.ln()
    }
}

struct Counts {
    words: Vec<String>,
    /// Successors of each word (excluding itself) with counts.
    succ: Vec<Vec<(usize, i64)>>,
    pred: Vec<Vec<(usize, i64)>>,
    self_loops: Vec<i64>,
    /// Bigrams with the word on the left / right.
    left: Vec<i64>,
    right: Vec<i64>,
}

impl Counts {
    fn new<S: AsRef<[T]>, T: AsRef<str>>(corpus: &[S]) -> Self {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for s in corpus {
            for w in s.as_ref() {
                index.entry(w.as_ref()).or_insert(0);
            }
        }
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let words: Vec<String> = index.keys().map(|w| w.to_string()).collect();
        let n = words.len();
        let mut bigrams: BTreeMap<(usize, usize), i64> = BTreeMap::new();
        for s in corpus {
            let ids: Vec<usize> = s.as_ref().iter().map(|w| index[w.as_ref()]).collect();
            for pair in ids.windows(2) {
                *bigrams.entry((pair[0], pair[1])).or_insert(0) += 1;
            }
        }
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        let mut self_loops = vec![0; n];
        let mut left = vec![0; n];
        let mut right = vec![0; n];
        for (&(a, b), &c) in &bigrams {
            left[a] += c;
            right[b] += c;
            if a == b {
                self_loops[a] += c;
            } else {
                succ[a].push((b, c));
                pred[b].push((a, c));
            }
        }
        Counts { words, succ, pred, self_loops, left, right }
    }
}

struct State {
    c: usize,
    assign: Vec<usize>,
    sizes: Vec<usize>,
    /// Dense class bigram counts, row = left class.
    bigram: Vec<i64>,
    left: Vec<i64>,
    right: Vec<i64>,
}

impl State {
    fn new(counts: &Counts, assign: Vec<usize>, c: usize) -> Self {
        let mut s = State { c, sizes: vec![0; c], bigram: vec![0; c * c], left: vec![0; c], right: vec![0; c], assign };
        for (w, &k) in s.assign.iter().enumerate() {
            s.sizes[k] += 1;
            s.left[k] += counts.left[w];
            s.right[k] += counts.right[w];
            s.bigram[k * c + k] += counts.self_loops[w];
            for &(v, n) in &counts.succ[w] {
                s.bigram[k * c + s.assign[v]] += n;
            }
        }
        s
    }

    fn objective(&self, constant: f64) -> f64 {
        let b: f64 = self.bigram.iter().map(|&x| xlogx(x)).sum();
        let l: f64 = self.left.iter().map(|&x| xlogx(x)).sum();
        let r: f64 = self.right.iter().map(|&x| xlogx(x)).sum();
        b - l - r + constant
    }
}

/// Neighbor counts of one word aggregated by the neighbor's class.
struct Neighborhood {
    from_class: Vec<(usize, i64)>,
    to_class: Vec<(usize, i64)>,
    self_loops: i64,
    left: i64,
    right: i64,
}

fn neighborhood(counts: &Counts, state: &State, w: usize) -> Neighborhood {
    let mut into: BTreeMap<usize, i64> = BTreeMap::new();
    for &(v, n) in &counts.pred[w] {
        *into.entry(state.assign[v]).or_insert(0) += n;
    }
    let mut out: BTreeMap<usize, i64> = BTreeMap::new();
    for &(v, n) in &counts.succ[w] {
        *out.entry(state.assign[v]).or_insert(0) += n;
    }
    Neighborhood {
        from_class: into.into_iter().collect(),
        to_class: out.into_iter().collect(),
        self_loops: counts.self_loops[w],
        left: counts.left[w],
        right: counts.right[w],
    }
}

/// Change of the objective when a word with neighborhood `nb` (currently in
/// no class) joins class `k`.
fn join_gain(state: &State, nb: &Neighborhood, k: usize) -> f64 {
    let c = state.c;
    let mut gain = 0.0;
    let mut diag = nb.self_loops;
    for &(h, x) in &nb.to_class {
        if h == k {
            diag += x;
        } else {
            let cur = state.bigram[k * c + h];
            gain += xlogx(cur + x) - xlogx(cur);
        }
    }
    for &(h, y) in &nb.from_class {
        if h == k {
            diag += y;
        } else {
            let cur = state.bigram[h * c + k];
            gain += xlogx(cur + y) - xlogx(cur);
        }
    }
    let cur = state.bigram[k * c + k];
    gain += xlogx(cur + diag) - xlogx(cur);
    gain -= xlogx(state.left[k] + nb.left) - xlogx(state.left[k]);
    gain -= xlogx(state.right[k] + nb.right) - xlogx(state.right[k]);
    gain
}

fn apply(state: &mut State, nb: &Neighborhood, k: usize, sign: i64) {
    let c = state.c;
    for &(h, x) in &nb.to_class {
        state.bigram[k * c + h] += sign * x;
    }
    for &(h, y) in &nb.from_class {
        state.bigram[h * c + k] += sign * y;
    }
    state.bigram[k * c + k] += sign * nb.self_loops;
    state.left[k] += sign * nb.left;
    state.right[k] += sign * nb.right;
}

/// Trains a class map and returns the full move trace.
pub fn train_classes_traced<S: AsRef<[T]>, T: AsRef<str>>(
    corpus: &[S],
    cfg: &ClusterConfig,
) -> Result<(ClassMap, ClusterTrace)> {
    if cfg.num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", cfg.num_classes)));
    }
    if cfg.iterations < 1 {
        return Err(Error::Config("need at least one exchange iteration".into()));
    }
    let counts = Counts::new(corpus);
    let n = counts.words.len();
    let c = cfg.num_classes;
    if n < c {
        return Err(Error::Domain(format!("{n} distinct words for {c} classes")));
    }

    // Frequency order, ties by word; the C-1 most frequent words get classes
    // 1..C-1 to themselves and the rest are dealt round-robin from class 0.
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in corpus {
        for w in s.as_ref() {
            *freq.entry(w.as_ref()).or_insert(0) += 1;
        }
    }
    let mut by_freq: Vec<usize> = (0..n).collect();
    by_freq.sort_by(|&a, &b| freq[counts.words[b].as_str()].cmp(&freq[counts.words[a].as_str()]).then(a.cmp(&b)));
    let mut assign = vec![0usize; n];
    for (rank, &w) in by_freq.iter().enumerate() {
        assign[w] = if rank < c - 1 { rank + 1 } else { (rank - (c - 1)) % c };
    }

    let constant: f64 = counts.right.iter().map(|&x| xlogx(x)).sum();
    let mut state = State::new(&counts, assign, c);
    let to_map = |state: &State| ClassMap {
        classes: counts.words.iter().zip(&state.assign).map(|(w, &k)| (w.clone(), k as u32)).collect(),
        num_classes: c,
    };
    let initial = to_map(&state);
    let mut objective = state.objective(constant);
    let initial_objective = objective;
    let mut moves = Vec::new();
    let mut iteration_objectives = Vec::with_capacity(cfg.iterations);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..cfg.iterations {
        order.shuffle(&mut rng);
        let mut moved = false;
        for &w in &order {
            let from = state.assign[w];
            if state.sizes[from] == 1 {
                continue;
            }
            let nb = neighborhood(&counts, &state, w);
            apply(&mut state, &nb, from, -1);
            let stay = join_gain(&state, &nb, from);
            let mut best = (stay, from);
            for k in 0..c {
                if k == from {
                    continue;
                }
                let g = join_gain(&state, &nb, k);
                if g > best.0 + 1e-9 {
                    best = (g, k);
                }
            }
            let to = best.1;
            apply(&mut state, &nb, to, 1);
            if to != from {
                state.assign[w] = to;
                state.sizes[from] -= 1;
                state.sizes[to] += 1;
                objective += best.0 - stay;
                moves.push(ExchangeMove { word: counts.words[w].clone(), from: from as u32, to: to as u32, objective });
                moved = true;
            }
        }
        iteration_objectives.push(objective);
        if !moved {
            break;
        }
    }

    let map = to_map(&state);
    Ok((map, ClusterTrace { initial, initial_objective, moves, iteration_objectives }))
}

pub fn train_classes<S: AsRef<[T]>, T: AsRef<str>>(corpus: &[S], cfg: &ClusterConfig) -> Result<ClassMap> {
    train_classes_traced(corpus, cfg).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    /// Class bigram log-likelihood from scratch: P(w_i | w_{i-1}) =
    /// P(c_i | c_{i-1}) P(w_i | c_i).
    fn brute_objective(corpus: &[Vec<String>], class_of: &dyn Fn(&str) -> u32) -> f64 {
        let mut cb: HashMap<(u32, u32), f64> = HashMap::new();
        let mut cl: HashMap<u32, f64> = HashMap::new();
        let mut cr: HashMap<u32, f64> = HashMap::new();
        let mut wr: HashMap<&str, f64> = HashMap::new();
        let mut pairs = Vec::new();
        for s in corpus {
            for p in s.windows(2) {
                let (a, b) = (class_of(&p[0]), class_of(&p[1]));
                *cb.entry((a, b)).or_default() += 1.0;
                *cl.entry(a).or_default() += 1.0;
                *cr.entry(b).or_default() += 1.0;
                *wr.entry(p[1].as_str()).or_default() += 1.0;
                pairs.push((a, b, p[1].as_str()));
            }
        }
        pairs.iter().map(|&(a, b, w)| (cb[&(a, b)] / cl[&a]).ln() + (wr[w] / cr[&b]).ln()).sum()
    }

    #[test]
    fn alternating_corpus_splits_like_exhaustive_search() {
        let corpus = vec![toks("a b a b a b")];
        let words = ["a", "b"];
        // Every assignment of the two words to two classes.
        let mut best = (f64::NEG_INFINITY, (0, 0));
        for ca in 0..2u32 {
            for cb in 0..2u32 {
                let f = |w: &str| if w == "a" { ca } else { cb };
                let o = brute_objective(&corpus, &f);
                if o > best.0 + 1e-12 {
                    best = (o, (ca, cb));
                }
            }
        }
        let split = (best.1).0 != (best.1).1;
        assert!(split);
        let cfg = ClusterConfig { num_classes: 2, iterations: 10, seed: 3 };
        let (map, trace) = train_classes_traced(&corpus, &cfg).unwrap();
        assert_ne!(map.class_of(words[0]), map.class_of(words[1]));
        let final_obj = trace.iteration_objectives.last().copied().unwrap();
        assert!((final_obj - best.0).abs() < 1e-9);
    }

    #[test]
    fn one_class_per_word_gives_word_bigram_likelihood() {
        let corpus = vec![toks("x y z x y y z"), toks("z x y")];
        let cfg = ClusterConfig { num_classes: 3, iterations: 5, seed: 9 };
        let (map, trace) = train_classes_traced(&corpus, &cfg).unwrap();
        let mut ids: Vec<u32> = map.iter().map(|(_, c)| c).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);
        // Word bigram conditional log-likelihood.
        let mut big: HashMap<(&str, &str), f64> = HashMap::new();
        let mut left: HashMap<&str, f64> = HashMap::new();
        for s in &corpus {
            for p in s.windows(2) {
                *big.entry((&p[0], &p[1])).or_default() += 1.0;
                *left.entry(&p[0]).or_default() += 1.0;
            }
        }
        let ll: f64 = big.iter().map(|((a, _), n)| n * (n / left[a]).ln()).sum();
        assert!((trace.initial_objective - ll).abs() < 1e-9);
        assert!(trace.moves.is_empty());
    }

    #[test]
    fn objective_never_decreases_and_matches_recount() {
        let text = "the cat sat on the mat . a dog sat on a log . the dog ate the cat . \
                    a cat ate a rat . the rat sat on the log . a man saw the dog on a mat .";
        let corpus: Vec<Vec<String>> = text.split(" . ").map(toks).collect();
        let cfg = ClusterConfig { num_classes: 4, iterations: 10, seed: 17 };
        let (map, trace) = train_classes_traced(&corpus, &cfg).unwrap();
        let mut assign: BTreeMap<String, u32> = trace.initial.iter().map(|(w, c)| (w.to_string(), c)).collect();
        let mut prev = brute_objective(&corpus, &|w| assign[w]);
        assert!((prev - trace.initial_objective).abs() < 1e-9);
        for m in &trace.moves {
            assert_eq!(assign[&m.word], m.from);
            assign.insert(m.word.clone(), m.to);
            let now = brute_objective(&corpus, &|w| assign[w]);
            assert!(now >= prev - 1e-9, "{now} < {prev}");
            assert!((now - m.objective).abs() < 1e-8);
            let mut sizes = vec![0; cfg.num_classes];
            for c in assign.values() {
                sizes[*c as usize] += 1;
            }
            assert!(sizes.iter().all(|&s| s > 0));
            prev = now;
        }
        assert_eq!(map.iter().map(|(w, c)| (w.to_string(), c)).collect::<BTreeMap<_, _>>(), assign);
        // Same seed, same classes.
        assert_eq!(train_classes(&corpus, &cfg).unwrap(), map);
        // Re-applying to the training corpus is stable and never unseen.
        let once = map.apply(&corpus);
        assert_eq!(once, map.apply(&corpus));
        assert!(corpus.iter().flatten().all(|w| map.contains(w)));
    }

    #[test]
    fn errors_and_mapping_rules() {
        let corpus = vec![toks("a b a")];
        assert!(matches!(
            train_classes(&corpus, &ClusterConfig { num_classes: 3, iterations: 1, seed: 0 }),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            train_classes(&corpus, &ClusterConfig { num_classes: 1, iterations: 1, seed: 0 }),
            Err(Error::Config(_))
        ));
        let map = train_classes(&corpus, &ClusterConfig { num_classes: 2, iterations: 1, seed: 0 }).unwrap();
        assert_eq!(map.class_of("never-seen"), 0);
        assert_eq!(map.map_token("<s>"), "<s>");
        assert_eq!(map.map_token("<eps>"), "<eps>");
        assert_eq!(map.map_token("<unk>"), "<unk>");
        assert_eq!(map.map_token("never-seen"), "C0");
    }

    #[test]
    fn file_round_trip() {
        let corpus = vec![toks("p q r p q s r")];
        let map = train_classes(&corpus, &ClusterConfig { num_classes: 3, iterations: 3, seed: 1 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classes.tsv");
        map.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().all(|l| l.split('\t').count() == 2));
        let back = ClassMap::load(&path).unwrap();
        for (w, c) in map.iter() {
            assert_eq!(back.class_of(w), c);
        }
    }
}
