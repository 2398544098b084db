//! Minimum error rate training on n-best pools under `(TER - BLEU) / 2`.
//!
//! Each candidate's model score is linear along a search line, so the 1-best
//! of a sentence changes only at the breakpoints of the upper envelope of
//! its candidate lines. Pooling the breakpoints of all sentences splits the
//! line into intervals of constant corpus criterion, which are evaluated
//! exactly.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::ConfusionNetwork;
use crate::decode::{self, NBestList, TrigramLM, Weights};
use crate::metrics::{self, ErrorStats, MetricConfig};
use crate::nnvote::LocalVoteModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MertConfig {
    pub restarts: usize,
    pub outer_iterations: usize,
    pub nbest: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Random directions tried per round on top of the coordinate axes.
    pub random_directions: usize,
    pub max_rounds: usize,
}

impl Default for MertConfig {
    fn default() -> Self {
        MertConfig {
            restarts: 5,
            outer_iterations: 5,
            nbest: 200,
            seed: 1,
            epsilon: 1e-6,
            random_directions: 4,
            max_rounds: 50,
        }
    }
}

impl MertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::Config("restarts must be >= 1".into()));
        }
        if self.nbest < 2 {
            return Err(Error::Config("n-best size must be >= 2".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub words: Vec<String>,
    pub features: Vec<f64>,
    pub stats: ErrorStats,
}

/// Accumulated n-best candidates per sentence; no sentence holds the same
/// surface twice.
#[derive(Debug, Clone)]
pub struct Pool {
    pub sentences: Vec<Vec<Candidate>>,
    dim: usize,
    max_order: usize,
    index: Vec<HashMap<Vec<String>, usize>>,
}

impl Pool {
    pub fn new(num_sentences: usize, dim: usize, max_order: usize) -> Self {
        Pool { sentences: vec![Vec::new(); num_sentences], dim, max_order, index: vec![HashMap::new(); num_sentences] }
    }

    /// Pool holding exactly the given candidates; later duplicates of a
    /// surface replace earlier ones.
    pub fn from_candidates(sentences: Vec<Vec<Candidate>>, dim: usize, max_order: usize) -> Result<Self> {
        let mut pool = Pool::new(sentences.len(), dim, max_order);
        for (s, cands) in sentences.into_iter().enumerate() {
            for c in cands {
                pool.insert(s, c)?;
            }
        }
        Ok(pool)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&mut self, s: usize, c: Candidate) -> Result<bool> {
        if c.features.len() != self.dim {
            return Err(Error::Config(format!("candidate has {} features, pool has {}", c.features.len(), self.dim)));
        }
        match self.index[s].get(&c.words) {
            Some(&i) => {
                self.sentences[s][i].features = c.features;
                Ok(false)
            }
            None => {
                self.index[s].insert(c.words.clone(), self.sentences[s].len());
                self.sentences[s].push(c);
                Ok(true)
            }
        }
    }

    /// Adds decoded lists. A surface already pooled keeps its position and
    /// takes the newest feature vector. Returns the number of new entries.
    pub fn merge<R: AsRef<[String]> + Sync>(
        &mut self,
        lists: &[NBestList],
        refs: &[R],
        metric: &MetricConfig,
    ) -> Result<usize> {
        if lists.len() != self.sentences.len() || refs.len() != self.sentences.len() {
            return Err(Error::CorpusShape(format!(
                "{} lists and {} references for a pool of {}",
                lists.len(),
                refs.len(),
                self.sentences.len()
            )));
        }
        let scored: Vec<Vec<Candidate>> = lists
            .par_iter()
            .zip(refs.par_iter())
            .enumerate()
            .map(|(s, (list, r))| {
                list.entries
                    .iter()
                    .map(|e| {
                        let stats = if let Some(&i) = self.index[s].get(&e.words) {
                            self.sentences[s][i].stats.clone()
                        } else {
                            ErrorStats::compute(&e.words, r.as_ref(), metric)?
                        };
                        Ok(Candidate { words: e.words.clone(), features: e.features.clone(), stats })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut added = 0;
        for (s, cands) in scored.into_iter().enumerate() {
            for c in cands {
                added += usize::from(self.insert(s, c)?);
            }
        }
        Ok(added)
    }

    /// Highest-scoring candidate per sentence; ties go to the lowest index.
    pub fn select(&self, weights: &[f64]) -> Vec<usize> {
        self.sentences
            .iter()
            .map(|cands| {
                let mut best = (0, f64::NEG_INFINITY);
                for (i, c) in cands.iter().enumerate() {
                    let s = dot(weights, &c.features);
                    if s > best.1 {
                        best = (i, s);
                    }
                }
                best.0
            })
            .collect()
    }

    /// Corpus criterion of the selected candidates.
    pub fn criterion(&self, weights: &[f64]) -> f64 {
        let mut total = ErrorStats::zero(self.max_order);
        for (cands, i) in self.sentences.iter().zip(self.select(weights)) {
            if let Some(c) = cands.get(i) {
                total += &c.stats;
            }
        }
        total.criterion()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Best point on a search line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineResult {
    pub step: f64,
    pub criterion: f64,
}

/// Upper envelope of `score_i(γ) = b_i + γ m_i` as (candidate, start) pairs
/// in increasing γ; the first segment starts at −∞.
fn envelope(lines: &mut [(f64, f64, usize)]) -> Vec<(usize, f64)> {
    // Slope ascending; for equal slopes the highest intercept, then the
    // lowest index, comes first and alone survives.
    lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut hull: Vec<(f64, f64, usize, f64)> = Vec::new();
    for &(m, b, i) in lines.iter() {
        if hull.last().is_some_and(|h| h.0 == m) {
            continue;
        }
        loop {
            match hull.last() {
                None => {
                    hull.push((m, b, i, f64::NEG_INFINITY));
                    break;
                }
                Some(&(tm, tb, _, start)) => {
                    let x = (tb - b) / (m - tm);
                    if x <= start {
                        hull.pop();
                    } else {
                        hull.push((m, b, i, x));
                        break;
                    }
                }
            }
        }
    }
    hull.into_iter().map(|(_, _, i, x)| (i, x)).collect()
}

/// Exact minimum of the pool criterion along `weights + γ · direction`.
/// When the interval containing γ = 0 is optimal the step is 0; otherwise
/// the representative point of the best interval nearest to 0 is returned.
pub fn line_search(pool: &Pool, weights: &[f64], direction: &[f64]) -> Result<LineResult> {
    if weights.len() != pool.dim || direction.len() != pool.dim {
        return Err(Error::Config(format!(
            "line search in {} / {} dimensions over a {}-feature pool",
            weights.len(),
            direction.len(),
            pool.dim
        )));
    }
    let mut total = ErrorStats::zero(pool.max_order);
    let mut current: Vec<usize> = vec![0; pool.sentences.len()];
    let mut events: Vec<(f64, usize, usize)> = Vec::new();
    let mut lines = Vec::new();
    for (s, cands) in pool.sentences.iter().enumerate() {
        if cands.is_empty() {
            continue;
        }
        lines.clear();
        lines
            .extend(cands.iter().enumerate().map(|(i, c)| (dot(direction, &c.features), dot(weights, &c.features), i)));
        let hull = envelope(&mut lines);
        current[s] = hull[0].0;
        total += &cands[hull[0].0].stats;
        events.extend(hull[1..].iter().map(|&(i, x)| (x, s, i)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (lower, upper, criterion) for each constant interval.
    let mut intervals: Vec<(f64, f64, f64)> = Vec::new();
    let mut lower = f64::NEG_INFINITY;
    let mut e = 0;
    while e < events.len() {
        let x = events[e].0;
        intervals.push((lower, x, total.criterion()));
        while e < events.len() && events[e].0 == x {
            let (_, s, i) = events[e];
            total -= &pool.sentences[s][current[s]].stats;
            total += &pool.sentences[s][i].stats;
            current[s] = i;
            e += 1;
        }
        lower = x;
    }
    intervals.push((lower, f64::INFINITY, total.criterion()));

    let best = intervals.iter().map(|iv| iv.2).fold(f64::INFINITY, f64::min);
    if let Some(iv) = intervals.iter().find(|iv| iv.0 < 0.0 && 0.0 < iv.1) {
        if iv.2 == best {
            return Ok(LineResult { step: 0.0, criterion: best });
        }
    }
    let rep = |&(lo, hi, _): &(f64, f64, f64)| match (lo.is_finite(), hi.is_finite()) {
        (false, false) => 0.0,
        (false, true) => hi - 1.0,
        (true, false) => lo + 1.0,
        (true, true) => 0.5 * (lo + hi),
    };
    let step =
        intervals.iter().filter(|iv| iv.2 == best).map(rep).min_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
    Ok(LineResult { step, criterion: best })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MertResult {
    pub weights: Vec<f64>,
    pub criterion: f64,
    pub init_criterion: f64,
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Greedy line optimization from one start: every round searches all
/// coordinate axes and some random directions from the current point and
/// moves along the best one if that strictly lowers the criterion.
fn optimize_from(pool: &Pool, start: Vec<f64>, cfg: &MertConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
    let dim = pool.dim;
    let mut w = start;
    let mut crit = pool.criterion(&w);
    for _ in 0..cfg.max_rounds {
        let mut dirs: Vec<Vec<f64>> = (0..dim)
            .map(|k| {
                let mut d = vec![0.0; dim];
                d[k] = 1.0;
                d
            })
            .collect();
        dirs.extend((0..cfg.random_directions).map(|_| random_unit(dim, rng)));
        let results = dirs.par_iter().map(|d| line_search(pool, &w, d)).collect::<Result<Vec<_>>>()?;
        let mut best: Option<(usize, LineResult)> = None;
        for (k, r) in results.iter().enumerate() {
            if r.step != 0.0 && best.is_none_or(|(_, b)| r.criterion < b.criterion) {
                best = Some((k, *r));
            }
        }
        let Some((k, r)) = best else { break };
        if !(r.criterion < crit) {
            break;
        }
        let cand: Vec<f64> = w.iter().zip(&dirs[k]).map(|(x, d)| x + r.step * d).collect();
        let c = pool.criterion(&cand);
        if !(c < crit) {
            break;
        }
        let gain = crit - c;
        w = cand;
        crit = c;
        if gain <= cfg.epsilon {
            break;
        }
    }
    Ok((w, crit))
}

/// Multi-start MERT. Restart 0 starts from `init`, the others from seeded
/// random points in [−1, 1]^d. The result is never worse than `init` on the
/// pool.
pub fn mert(pool: &Pool, init: &[f64], cfg: &MertConfig) -> Result<MertResult> {
    cfg.validate()?;
    if init.len() != pool.dim {
        return Err(Error::Config(format!("{} initial weights for a {}-feature pool", init.len(), pool.dim)));
    }
    if pool.is_empty() {
        return Err(Error::Domain("MERT on an empty pool".into()));
    }
    let init_criterion = pool.criterion(init);
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<(Vec<f64>, u64)> = (0..cfg.restarts)
        .map(|r| {
            let start =
                if r == 0 { init.to_vec() } else { (0..pool.dim).map(|_| master.random_range(-1.0..1.0)).collect() };
            (start, master.random())
        })
        .collect();
    let runs = starts
        .into_par_iter()
        .map(|(start, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, c) = optimize_from(pool, start, cfg, &mut rng)?;
            let scale = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if scale > 0.0 {
                let normalized: Vec<f64> = w.iter().map(|x| x / scale).collect();
                let cn = pool.criterion(&normalized);
                if cn <= c {
                    return Ok((normalized, cn));
                }
            }
            Ok((w, c))
        })
        .collect::<Result<Vec<_>>>()?;
    let (weights, criterion) =
        runs.into_iter().reduce(|a, b| if b.1 < a.1 { b } else { a }).expect("at least one restart");
    debug_assert!(criterion <= init_criterion);
    Ok(MertResult { weights, criterion, init_criterion })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneIteration {
    /// Criterion of the 1-best outputs decoded at the start of the iteration.
    pub decode_criterion: f64,
    pub pool_size: usize,
    pub pool_criterion_before: f64,
    pub pool_criterion_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    /// Weights whose decoded 1-best had the lowest criterion.
    pub weights: Weights,
    pub criterion: f64,
    pub initial_criterion: f64,
    pub iterations: Vec<TuneIteration>,
    pub converged: bool,
}

/// Decode, merge into the pool, run MERT; repeat until the 1-best outputs
/// stop changing or the iteration cap is hit. Every decode is scored and
/// the best-scoring weights are returned, the initial ones included.
pub fn tune_loop<R: AsRef<[String]> + Sync>(
    networks: &[ConfusionNetwork],
    refs: &[R],
    lm: &TrigramLM,
    local_vote: Option<&LocalVoteModel>,
    init: &Weights,
    cfg: &MertConfig,
    metric: &MetricConfig,
) -> Result<TuneResult> {
    cfg.validate()?;
    if networks.len() != refs.len() {
        return Err(Error::CorpusShape(format!("{} networks for {} references", networks.len(), refs.len())));
    }
    let mut pool = Pool::new(networks.len(), init.layout.dim(), metric.max_order);
    let mut weights = init.clone();
    let mut best: Option<(Weights, f64)> = None;
    let mut previous: Option<Vec<Vec<String>>> = None;
    let mut iterations = Vec::new();
    let mut initial_criterion = f64::NAN;
    let mut converged = false;
    for it in 0..=cfg.outer_iterations {
        let lists = decode::decode_corpus(networks, &weights, lm, local_vote, cfg.nbest)?;
        let outputs = decode::one_best(&lists);
        let crit = metrics::combined_criterion(&outputs, refs, metric)?;
        if it == 0 {
            initial_criterion = crit;
        }
        log::info!("tune iteration {it}: decode criterion {crit:.6}");
        if best.as_ref().is_none_or(|(_, b)| crit < *b) {
            best = Some((weights.clone(), crit));
        }
        if previous.as_ref() == Some(&outputs) {
            converged = true;
            break;
        }
        if it == cfg.outer_iterations {
            break;
        }
        pool.merge(&lists, refs, metric)?;
        let run = mert(&pool, &weights.values, &MertConfig { seed: cfg.seed.wrapping_add(it as u64), ..*cfg })?;
        iterations.push(TuneIteration {
            decode_criterion: crit,
            pool_size: pool.len(),
            pool_criterion_before: run.init_criterion,
            pool_criterion_after: run.criterion,
        });
        weights = Weights::new(weights.layout, run.weights)?;
        previous = Some(outputs);
    }
    let (weights, criterion) = best.expect("at least one decode");
    Ok(TuneResult { weights, criterion, initial_criterion, iterations, converged })
}

/// Sorts candidates the way [`Pool::select`] ranks them; used by callers
/// that need a full ranking rather than the argmax.
pub fn rank_candidates(cands: &[Candidate], weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (dot(weights, &cands[a].features), dot(weights, &cands[b].features));
        sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    order
}
