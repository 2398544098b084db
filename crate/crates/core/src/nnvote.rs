//! Neural local vote: a feedforward softmax network that predicts the oracle
//! word of a slot from the words all systems put into that slot.
//!
//! Every context position shares one projection matrix. The projected
//! vectors are concatenated, passed through one rectified hidden layer and a
//! full softmax over the vocabulary. Training is plain minibatch SGD on
//! cross-entropy.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{ConfusionNetwork, Label, MergedArc};
use crate::wordclass::ClassMap;
use crate::{Error, Result, BOS, EPS, UNK, UNKNOWN};

const MODEL_FORMAT: &str = "syscomb-ffnn";
const MODEL_VERSION: u32 = 1;

/// Dense word index. `<s>`, `<eps>` and `<unk>` hold indices 0, 1 and 2;
/// other words follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const RESERVED: [&'static str; 3] = [BOS, EPS, UNKNOWN];
    pub const UNKNOWN_INDEX: usize = 2;

    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        let rest: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !Self::RESERVED.contains(&w.as_str()))
            .collect();
        let words: Vec<String> = Self::RESERVED.iter().map(|w| w.to_string()).chain(rest).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    /// Rebuilds a vocabulary from its stored word list, checking that the
    /// reserved prefix is intact and that no word repeats.
    fn from_stored(words: Vec<String>) -> Result<Self> {
        if words.len() < 3 || words[..3] != Self::RESERVED {
            return Err(Error::Format("vocabulary lacks the reserved prefix".into()));
        }
        let index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != words.len() {
            return Err(Error::Format("vocabulary repeats a word".into()));
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Index of `word`, or of `<unk>` when it is not in the vocabulary.
    pub fn index_of(&self, word: &str) -> usize {
        self.get(word).unwrap_or(Self::UNKNOWN_INDEX)
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Vocabulary of every context and target word plus the reserved tokens.
pub fn build_vocab(examples: &[Example]) -> Vocabulary {
    Vocabulary::from_words(examples.iter().flat_map(|e| e.context.iter().chain(std::iter::once(&e.target))))
}

/// Word-level training example. The context holds one word per system, or a
/// (predecessor, current) pair per system with bigram history.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub context: Vec<String>,
    pub target: String,
}

impl Example {
    /// Parses `context words<TAB>target`.
    pub fn parse(line: &str) -> Result<Self> {
        let (ctx, target) =
            line.split_once('\t').ok_or_else(|| Error::Format(format!("expected context<TAB>target: `{line}`")))?;
        let target = target.trim();
        if target.is_empty() || target.contains(char::is_whitespace) {
            return Err(Error::Format(format!("bad target in `{line}`")));
        }
        let context: Vec<String> = ctx.split_whitespace().map(String::from).collect();
        if context.is_empty() {
            return Err(Error::Format(format!("empty context in `{line}`")));
        }
        Ok(Example { context, target: target.to_string() })
    }

    /// Replaces every word by its class token.
    pub fn map_classes(&self, classes: &ClassMap) -> Example {
        Example {
            context: self.context.iter().map(|w| classes.map_token(w)).collect(),
            target: classes.map_token(&self.target),
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.context.join(" "), self.target)
    }
}

pub fn write_examples(examples: &[Example], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in examples {
        writeln!(out, "{e}").map_err(|err| Error::io(path, err))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| Example::parse(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

/// Input context of every slot of `cn`. With history 2 each system
/// contributes its last non-epsilon word before the slot (`<s>` if none)
/// followed by its arc word; epsilon arcs read as `<eps>`.
pub fn network_contexts(cn: &ConfusionNetwork, history: usize) -> Vec<Vec<String>> {
    let mut prev: Vec<&str> = vec![BOS; cn.num_systems];
    let mut out = Vec::with_capacity(cn.len());
    for slot in &cn.slots {
        let mut ctx = Vec::with_capacity(history * cn.num_systems);
        for (i, label) in slot.labels().enumerate() {
            if history == 2 {
                ctx.push(prev[i].to_string());
            }
            ctx.push(label.as_str().to_string());
        }
        for (i, label) in slot.labels().enumerate() {
            if let Some(w) = label.as_word() {
                prev[i] = w;
            }
        }
        out.push(ctx);
    }
    out
}

fn check_history(history: usize) -> Result<()> {
    if history == 1 || history == 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("history must be 1 or 2, got {history}")))
    }
}

/// One example per slot whose decision is a real word.
pub fn extract_examples(cn: &ConfusionNetwork, decisions: &[Label], history: usize) -> Result<Vec<Example>> {
    check_history(history)?;
    if decisions.len() != cn.len() {
        return Err(Error::Consistency(format!(
            "sentence {}: {} decisions for {} slots",
            cn.sentence_index,
            decisions.len(),
            cn.len()
        )));
    }
    Ok(network_contexts(cn, history)
        .into_iter()
        .zip(decisions)
        .filter_map(|(context, d)| match d.as_word() {
            Some(w) if w != UNK => Some(Example { context, target: w.to_string() }),
            _ => None,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NNConfig {
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub projection_dim: usize,
    pub history: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for NNConfig {
    fn default() -> Self {
        NNConfig {
            hidden_size: 200,
            learning_rate: 0.08,
            epochs: 20,
            projection_dim: 150,
            history: 1,
            seed: 1,
            batch_size: 64,
        }
    }
}

impl NNConfig {
    pub fn validate(&self) -> Result<()> {
        check_history(self.history)?;
        if self.hidden_size == 0 || self.projection_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("network sizes and batch size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Example with words replaced by vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub context: Vec<usize>,
    pub target: usize,
}

/// Parameter blocks, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// vocab × projection_dim
    pub projection: Vec<f64>,
    /// (context_len · projection_dim) × hidden
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    /// hidden × vocab
    pub output_w: Vec<f64>,
    pub output_b: Vec<f64>,
}

impl Params {
    fn zeros(vocab: usize, context_len: usize, cfg: &NNConfig) -> Self {
        let (p, h) = (cfg.projection_dim, cfg.hidden_size);
        Params {
            projection: vec![0.0; vocab * p],
            hidden_w: vec![0.0; context_len * p * h],
            hidden_b: vec![0.0; h],
            output_w: vec![0.0; h * vocab],
            output_b: vec![0.0; vocab],
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("projection", &self.projection),
            ("hidden_w", &self.hidden_w),
            ("hidden_b", &self.hidden_b),
            ("output_w", &self.output_w),
            ("output_b", &self.output_b),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 5] {
        [
            ("projection", &mut self.projection),
            ("hidden_w", &mut self.hidden_w),
            ("hidden_b", &mut self.hidden_b),
            ("output_w", &mut self.output_w),
            ("output_b", &mut self.output_b),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    vocab: Vocabulary,
    config: NNConfig,
    context_len: usize,
    params: Params,
}

struct Activations {
    input: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl FeedForwardNet {
    /// Network with weights drawn uniformly from [−0.05, 0.05] and zero biases.
    pub fn new(vocab: Vocabulary, context_len: usize, config: NNConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if context_len == 0 {
            return Err(Error::Config("context length must be >= 1".into()));
        }
        let mut params = Params::zeros(vocab.len(), context_len, &config);
        for block in [&mut params.projection, &mut params.hidden_w, &mut params.output_w] {
            for x in block.iter_mut() {
                *x = rng.random_range(-0.05..=0.05);
            }
        }
        Ok(FeedForwardNet { vocab, config, context_len, params })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &NNConfig {
        &self.config
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn encode(&self, example: &Example) -> Result<EncodedExample> {
        self.check_len(example.context.len())?;
        Ok(EncodedExample {
            context: example.context.iter().map(|w| self.vocab.index_of(w)).collect(),
            target: self.vocab.index_of(&example.target),
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.context_len {
            return Err(Error::Shape(format!("context has {len} words, network expects {}", self.context_len)));
        }
        Ok(())
    }

    fn activations(&self, context: &[usize]) -> Activations {
        let (p, h, v) = (self.config.projection_dim, self.config.hidden_size, self.vocab.len());
        let prm = &self.params;
        let mut input = Vec::with_capacity(context.len() * p);
        for &c in context {
            input.extend_from_slice(&prm.projection[c * p..(c + 1) * p]);
        }
        let mut hidden_pre = prm.hidden_b.clone();
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                let row = &prm.hidden_w[i * h..(i + 1) * h];
                for (a, &w) in hidden_pre.iter_mut().zip(row) {
                    *a += x * w;
                }
            }
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&a| a.max(0.0)).collect();
        let mut logits = prm.output_b.clone();
        for (j, &y) in hidden.iter().enumerate() {
            if y != 0.0 {
                let row = &prm.output_w[j * v..(j + 1) * v];
                for (z, &w) in logits.iter_mut().zip(row) {
                    *z += y * w;
                }
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for z in logits.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        for z in logits.iter_mut() {
            *z /= sum;
        }
        Activations { input, hidden_pre, hidden, probs: logits }
    }

    /// Posterior distribution over the vocabulary for an index context.
    pub fn forward(&self, context: &[usize]) -> Result<Vec<f64>> {
        self.check_len(context.len())?;
        if let Some(&bad) = context.iter().find(|&&c| c >= self.vocab.len()) {
            return Err(Error::Shape(format!("context index {bad} outside vocabulary")));
        }
        Ok(self.activations(context).probs)
    }

    /// Distribution for a word context; unknown words read as `<unk>`.
    pub fn forward_words<S: AsRef<str>>(&self, context: &[S]) -> Result<Vec<f64>> {
        let ids: Vec<usize> = context.iter().map(|w| self.vocab.index_of(w.as_ref())).collect();
        self.forward(&ids)
    }

    /// Natural-log probability of `word` after `context`; unknown words read
    /// as `<unk>` on both sides.
    pub fn log_prob<S: AsRef<str>>(&self, context: &[S], word: &str) -> Result<f64> {
        let probs = self.forward_words(context)?;
        Ok(probs[self.vocab.index_of(word)].ln())
    }

    /// Mean cross-entropy of a batch and its gradient.
    pub fn loss_and_gradient(&self, batch: &[EncodedExample]) -> Result<(f64, Params)> {
        let mut grad = Params::zeros(self.vocab.len(), self.context_len, &self.config);
        let loss = self.accumulate(batch, &mut grad)?;
        let scale = 1.0 / batch.len().max(1) as f64;
        for (_, b) in grad.blocks_mut() {
            b.iter_mut().for_each(|g| *g *= scale);
        }
        Ok((loss * scale, grad))
    }

    /// Adds the summed gradient of `batch` into `grad`; returns summed loss.
    fn accumulate(&self, batch: &[EncodedExample], grad: &mut Params) -> Result<f64> {
        let (p, h, v) = (self.config.projection_dim, self.config.hidden_size, self.vocab.len());
        let prm = &self.params;
        let mut loss = 0.0;
        let mut d_hidden = vec![0.0; h];
        let mut d_input = vec![0.0; self.context_len * p];
        for ex in batch {
            self.check_len(ex.context.len())?;
            if ex.target >= v || ex.context.iter().any(|&c| c >= v) {
                return Err(Error::Shape("example index outside vocabulary".into()));
            }
            let act = self.activations(&ex.context);
            loss -= act.probs[ex.target].ln();
            let mut d_logits = act.probs;
            d_logits[ex.target] -= 1.0;

            for (gb, &d) in grad.output_b.iter_mut().zip(&d_logits) {
                *gb += d;
            }
            for j in 0..h {
                let row = &prm.output_w[j * v..(j + 1) * v];
                d_hidden[j] =
                    if act.hidden_pre[j] > 0.0 { row.iter().zip(&d_logits).map(|(w, d)| w * d).sum() } else { 0.0 };
                let y = act.hidden[j];
                if y != 0.0 {
                    let grow = &mut grad.output_w[j * v..(j + 1) * v];
                    for (g, &d) in grow.iter_mut().zip(&d_logits) {
                        *g += y * d;
                    }
                }
            }
            for (gb, &d) in grad.hidden_b.iter_mut().zip(&d_hidden) {
                *gb += d;
            }
            for (i, &x) in act.input.iter().enumerate() {
                let row = &prm.hidden_w[i * h..(i + 1) * h];
                d_input[i] = row.iter().zip(&d_hidden).map(|(w, d)| w * d).sum();
                let grow = &mut grad.hidden_w[i * h..(i + 1) * h];
                for (g, &d) in grow.iter_mut().zip(&d_hidden) {
                    *g += x * d;
                }
            }
            for (k, &c) in ex.context.iter().enumerate() {
                let grow = &mut grad.projection[c * p..(c + 1) * p];
                for (g, &d) in grow.iter_mut().zip(&d_input[k * p..(k + 1) * p]) {
                    *g += d;
                }
            }
        }
        Ok(loss)
    }

    /// Fraction of examples whose target is the argmax of the distribution.
    pub fn accuracy(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for e in examples {
            let enc = self.encode(e)?;
            let probs = self.activations(&enc.context).probs;
            let best =
                probs.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b }).0;
            hits += usize::from(best == enc.target);
        }
        Ok(hits as f64 / examples.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(self, None, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_model(path.as_ref()).map(|(net, _)| net)
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Trains a network on `examples`; every context must have the same length.
pub fn train(examples: &[Example], cfg: &NNConfig) -> Result<(FeedForwardNet, TrainReport)> {
    cfg.validate()?;
    let first = examples.first().ok_or_else(|| Error::Domain("no training examples".into()))?;
    let context_len = first.context.len();
    if context_len % cfg.history != 0 {
        return Err(Error::Shape(format!("context length {context_len} is not a multiple of history {}", cfg.history)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = FeedForwardNet::new(build_vocab(examples), context_len, *cfg, &mut rng)?;
    let encoded = examples.iter().map(|e| net.encode(e)).collect::<Result<Vec<_>>>()?;
    let report = train_encoded(&mut net, &encoded, &mut rng)?;
    Ok((net, report))
}

/// Runs `net.config().epochs` epochs of minibatch SGD in place.
pub fn train_encoded(net: &mut FeedForwardNet, data: &[EncodedExample], rng: &mut impl Rng) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Domain("no training examples".into()));
    }
    let cfg = net.config;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = Params::zeros(net.vocab.len(), net.context_len, &cfg);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            for (_, b) in grad.blocks_mut() {
                b.fill(0.0);
            }
            total += net.accumulate(&batch, &mut grad)?;
            let step = cfg.learning_rate / batch.len() as f64;
            for ((_, w), (_, g)) in net.params.blocks_mut().into_iter().zip(grad.blocks()) {
                for (x, d) in w.iter_mut().zip(g) {
                    *x -= step * d;
                }
            }
        }
        let mean = total / data.len() as f64;
        log::debug!("epoch {}: mean loss {mean:.5}", epoch + 1);
        epoch_losses.push(mean);
    }
    if net.params.blocks().iter().any(|(_, b)| b.iter().any(|x| !x.is_finite())) {
        return Err(Error::Domain("training diverged to non-finite parameters".into()));
    }
    Ok(TrainReport { epoch_losses })
}

/// The trained network plus the optional class map applied to its inputs
/// and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVoteModel {
    pub net: FeedForwardNet,
    pub classes: Option<ClassMap>,
}

impl LocalVoteModel {
    pub fn history(&self) -> usize {
        self.net.config.history
    }

    fn token(&self, word: &str) -> String {
        match &self.classes {
            Some(c) => c.map_token(word),
            None => word.to_string(),
        }
    }

    /// Log-probability of `arc` given a word context; epsilon arcs score 0.
    pub fn score_arc<S: AsRef<str>>(&self, context: &[S], arc: &Label) -> Result<f64> {
        let Some(word) = arc.as_word() else {
            return Ok(0.0);
        };
        let ctx: Vec<String> = context.iter().map(|w| self.token(w.as_ref())).collect();
        self.net.log_prob(&ctx, &self.token(word))
    }

    /// Score of every merged arc of every slot, in `merged_slots` order.
    pub fn score_network(&self, cn: &ConfusionNetwork, merged: &[Vec<MergedArc>]) -> Result<Vec<Vec<f64>>> {
        let contexts = network_contexts(cn, self.history());
        contexts
            .iter()
            .zip(merged)
            .map(|(ctx, slot)| {
                let ctx: Vec<String> = ctx.iter().map(|w| self.token(w)).collect();
                let probs = self.net.forward_words(&ctx)?;
                Ok(slot
                    .iter()
                    .map(|m| match m.label.as_word() {
                        Some(w) => probs[self.net.vocab.index_of(&self.token(w))].ln(),
                        None => 0.0,
                    })
                    .collect())
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(&self.net, self.classes.as_ref(), path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (net, classes) = load_model(path.as_ref())?;
        Ok(LocalVoteModel { net, classes })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: NNConfig,
    context_len: usize,
    vocab: Vec<String>,
    projection: Vec<f64>,
    hidden_w: Vec<f64>,
    hidden_b: Vec<f64>,
    output_w: Vec<f64>,
    output_b: Vec<f64>,
    #[serde(default)]
    classes: Option<BTreeMap<String, u32>>,
    #[serde(default)]
    num_classes: usize,
}

fn save_model(net: &FeedForwardNet, classes: Option<&ClassMap>, path: &Path) -> Result<()> {
    let p = &net.params;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: net.config,
        context_len: net.context_len,
        vocab: net.vocab.words.clone(),
        projection: p.projection.clone(),
        hidden_w: p.hidden_w.clone(),
        hidden_b: p.hidden_b.clone(),
        output_w: p.output_w.clone(),
        output_b: p.output_b.clone(),
        classes: classes.map(|c| c.iter().map(|(w, k)| (w.to_string(), k)).collect()),
        num_classes: classes.map_or(0, ClassMap::num_classes),
    };
    let out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(out);
    serde_json::to_writer(&mut out, &file).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn load_model(path: &Path) -> Result<(FeedForwardNet, Option<ClassMap>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::Format(format!("{}: unsupported model {} v{}", path.display(), file.format, file.version)));
    }
    file.config.validate().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let vocab = Vocabulary::from_stored(file.vocab)?;
    let params = Params {
        projection: file.projection,
        hidden_w: file.hidden_w,
        hidden_b: file.hidden_b,
        output_w: file.output_w,
        output_b: file.output_b,
    };
    let expect = Params::zeros(vocab.len(), file.context_len, &file.config);
    for ((name, got), (_, want)) in params.blocks().into_iter().zip(expect.blocks()) {
        if got.len() != want.len() {
            return Err(Error::Format(format!(
                "{}: block {name} has {} values, expected {}",
                path.display(),
                got.len(),
                want.len()
            )));
        }
    }
    let classes = match file.classes {
        Some(c) => Some(ClassMap::from_assignments(c, file.num_classes.max(1))?),
        None => None,
    };
    Ok((FeedForwardNet { vocab, config: file.config, context_len: file.context_len, params }, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::build_network;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn colours() -> ConfusionNetwork {
        let hyps = [toks("the black cab"), toks("an red train"), toks("a orange car"), toks("a green car")];
        build_network(&hyps, 0).unwrap()
    }

    fn decisions(words: &[&str]) -> Vec<Label> {
        words.iter().map(|w| Label::from_token(w)).collect()
    }

    fn ex(ctx: &str, target: &str) -> Example {
        Example { context: toks(ctx), target: target.into() }
    }

    #[test]
    fn unigram_and_bigram_examples() {
        let cn = colours();
        let d = decisions(&["the", "UNK", "car"]);
        let uni = extract_examples(&cn, &d, 1).unwrap();
        assert_eq!(uni, vec![ex("the an a a", "the"), ex("cab train car car", "car")]);
        let bi = extract_examples(&cn, &d, 2).unwrap();
        assert_eq!(
            bi,
            vec![ex("<s> the <s> an <s> a <s> a", "the"), ex("black cab red train orange car green car", "car")]
        );
        let all_unk = decisions(&["UNK", "UNK", "UNK"]);
        assert!(extract_examples(&cn, &all_unk, 1).unwrap().is_empty());
        assert!(matches!(extract_examples(&cn, &d[..2], 1), Err(Error::Consistency(_))));
    }

    #[test]
    fn bigram_predecessor_skips_epsilon() {
        let hyps = [toks("a b c"), toks("b c d")];
        let cn = build_network(&hyps, 0).unwrap();
        let ctx = network_contexts(&cn, 2);
        // Slots: [a|ε], [b|b], [c|c], [ε|d].
        assert_eq!(ctx[1], toks("a b <s> b"));
        assert_eq!(ctx[3], toks("c <eps> c d"));
    }

    #[test]
    fn vocabulary_rules() {
        let v = build_vocab(&[ex("the an a a", "the"), ex("cab train car car", "car")]);
        assert_eq!(&v.words()[..3], &Vocabulary::RESERVED);
        for w in ["the", "an", "a", "cab", "train", "car"] {
            assert!(v.get(w).is_some());
        }
        assert_eq!(v.index_of("zebra"), Vocabulary::UNKNOWN_INDEX);
        let w = build_vocab(&[ex("the an a a", "the"), ex("cab train car car", "car")]);
        assert_eq!(v, w);
        assert_eq!(Vocabulary::from_words(["<s>", "<eps>"]).len(), 3);
    }

    #[test]
    fn unigram_examples_under_classes() {
        let mut m = BTreeMap::new();
        for w in ["the", "an", "a"] {
            m.insert(w.to_string(), 1);
        }
        for w in ["cab", "train", "car"] {
            m.insert(w.to_string(), 2);
        }
        let classes = ClassMap::from_assignments(m, 3).unwrap();
        assert_eq!(ex("the an a a", "the").map_classes(&classes), ex("C1 C1 C1 C1", "C1"));
        assert_eq!(ex("cab train car car", "car").map_classes(&classes), ex("C2 C2 C2 C2", "C2"));
    }

    fn small_net(seed: u64, v: usize, ctx: usize, p: usize, h: usize) -> FeedForwardNet {
        let cfg = NNConfig { hidden_size: h, projection_dim: p, ..NNConfig::default() };
        let vocab = Vocabulary::from_words((0..v - 3).map(|i| format!("w{i}")));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = FeedForwardNet::new(vocab, ctx, cfg, &mut rng).unwrap();
        // Larger weights and nonzero biases exercise every branch.
        for (_, b) in net.params_mut().blocks_mut() {
            for x in b.iter_mut() {
                *x = rng.random_range(-0.8..0.8);
            }
        }
        net
    }

    #[test]
    fn forward_normalizes_and_zero_output_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in 0..100 {
            let net = small_net(s, 12, 4, 5, 7);
            let ctx: Vec<usize> = (0..4).map(|_| rng.random_range(0..12)).collect();
            let p = net.forward(&ctx).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|&x| x > 0.0));
        }
        let mut net = small_net(0, 12, 4, 5, 7);
        net.params_mut().output_w.fill(0.0);
        net.params_mut().output_b.fill(0.0);
        let p = net.forward(&[0, 1, 2, 3]).unwrap();
        assert!(p.iter().all(|&x| x == 1.0 / 12.0));
        assert!(matches!(net.forward(&[0, 1]), Err(Error::Shape(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut net = small_net(11, 12, 4, 5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<EncodedExample> = (0..6)
            .map(|_| EncodedExample {
                context: (0..4).map(|_| rng.random_range(0..12)).collect(),
                target: rng.random_range(0..12),
            })
            .collect();
        let (_, grad) = net.loss_and_gradient(&batch).unwrap();
        let h = 1e-5;
        for b in 0..5 {
            let n = grad.blocks()[b].1.len();
            for i in 0..n {
                let orig = net.params().blocks()[b].1[i];
                net.params_mut().blocks_mut()[b].1[i] = orig + h;
                let up = net.loss_and_gradient(&batch).unwrap().0;
                net.params_mut().blocks_mut()[b].1[i] = orig - h;
                let down = net.loss_and_gradient(&batch).unwrap().0;
                net.params_mut().blocks_mut()[b].1[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grad.blocks()[b].1[i];
                let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
                assert!(rel < 1e-4, "{} [{i}]: {analytic} vs {numeric}", grad.blocks()[b].0);
            }
        }
    }

    fn unigram_examples(copies: usize) -> Vec<Example> {
        let mut v = Vec::new();
        for _ in 0..copies {
            v.push(ex("the an a a", "the"));
            v.push(ex("cab train car car", "car"));
        }
        v
    }

    #[test]
    fn memorizes_unigram_examples() {
        let data = unigram_examples(200);
        let (net, report) = train(&data, &NNConfig::default()).unwrap();
        assert_eq!(net.accuracy(&data).unwrap(), 1.0);
        assert_eq!(report.epoch_losses.len(), 20);
        assert!(report.epoch_losses.windows(2).all(|w| w[1] <= w[0]));
        let model = LocalVoteModel { net, classes: None };
        let ctx = toks("the an a a");
        let scores: Vec<f64> =
            ["the", "an", "a"].iter().map(|w| model.score_arc(&ctx, &Label::word(*w)).unwrap()).collect();
        assert!(scores.iter().all(|s| s.is_finite()));
        assert!(scores[0] > scores[1] && scores[0] > scores[2]);
        assert_eq!(model.score_arc(&ctx, &Label::Eps).unwrap(), 0.0);
        let unseen = model.score_arc(&ctx, &Label::word("zebra")).unwrap();
        let unk = model.score_arc(&ctx, &Label::word("<unk>")).unwrap();
        assert_eq!(unseen, unk);
        // Same seed, same loss.
        let (_, again) = train(&data, &NNConfig::default()).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = unigram_examples(1)[..1].to_vec();
        let cfg = NNConfig { learning_rate: 0.0, epochs: 1, hidden_size: 4, projection_dim: 3, ..NNConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = FeedForwardNet::new(build_vocab(&data), 4, cfg, &mut rng).unwrap();
        let before = net.params().clone();
        let enc = vec![net.encode(&data[0]).unwrap()];
        train_encoded(&mut net, &enc, &mut rng).unwrap();
        assert_eq!(net.params(), &before);
        assert!(matches!(train(&[], &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn network_scores_match_arc_scores() {
        let data = unigram_examples(20);
        let cfg = NNConfig { hidden_size: 8, projection_dim: 4, epochs: 3, ..NNConfig::default() };
        let (net, _) = train(&data, &cfg).unwrap();
        let model = LocalVoteModel { net, classes: None };
        let cn = colours();
        let merged = cn.merged_slots();
        let scores = model.score_network(&cn, &merged).unwrap();
        let contexts = network_contexts(&cn, 1);
        for (t, slot) in merged.iter().enumerate() {
            for (a, m) in slot.iter().enumerate() {
                assert_eq!(scores[t][a], model.score_arc(&contexts[t], &m.label).unwrap());
            }
        }
    }

    #[test]
    fn model_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for s in 0..10 {
            let net = small_net(s, 9, 3, 4, 5);
            let path = dir.path().join(format!("m{s}.json"));
            net.save(&path).unwrap();
            let back = FeedForwardNet::load(&path).unwrap();
            assert_eq!(back.vocab(), net.vocab());
            for _ in 0..5 {
                let ctx: Vec<usize> = (0..3).map(|_| rng.random_range(0..9)).collect();
                assert_eq!(back.forward(&ctx).unwrap(), net.forward(&ctx).unwrap());
            }
        }
        let path = dir.path().join("m0.json");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(FeedForwardNet::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn examples_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.tsv");
        let data = vec![ex("<s> the <s> an", "the"), ex("cab train", "car")];
        write_examples(&data, &path).unwrap();
        assert_eq!(read_examples(&path).unwrap(), data);
    }
}
