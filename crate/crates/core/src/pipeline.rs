//! End-to-end runs over three disjoint splits: `tune_nn` supplies oracle
//! paths for the voting network, `tune_mert` tunes the linear weights and
//! `test` is decoded once per feature set and scored.
//!
//! Every artifact goes into one run directory together with a snapshot of
//! the configuration. Runs are deterministic for fixed seeds.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{self, ConfusionNetwork};
use crate::analysis::{self, DistributionRow, Recovery};
use crate::corpus::{self, CombinationCorpus};
use crate::decode::{self, FeatureLayout, TrigramLM, Weights};
use crate::metrics::{self, MetricConfig};
use crate::nnvote::{self, Example, LocalVoteModel, NNConfig, TrainReport};
use crate::oracle::{self, DecisionRecord, OracleConfig, OracleCorpus};
use crate::synth;
use crate::tune::{self, MertConfig, TuneResult};
use crate::wordclass::{self, ClassMap, ClusterConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPaths {
    pub systems: Vec<PathBuf>,
    pub reference: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub tune_nn: SplitPaths,
    pub tune_mert: SplitPaths,
    pub test: SplitPaths,
    /// Planted-minority labels of the test split.
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSection {
    pub k: usize,
    pub model_tiebreak: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { k: 1200, model_tiebreak: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassSection {
    pub enabled: bool,
    pub num_classes: usize,
    pub iterations: usize,
    /// Monolingual training text; the tune_nn references when absent.
    pub corpus: Option<PathBuf>,
}

impl Default for ClassSection {
    fn default() -> Self {
        ClassSection { enabled: false, num_classes: 1000, iterations: 10, corpus: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSection {
    pub local_vote: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection { local_vote: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub nn: NNConfig,
    #[serde(default)]
    pub classes: ClassSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub mert: MertConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_bootstrap() -> usize {
    metrics::BOOTSTRAP_SAMPLES
}

fn default_seed() -> u64 {
    1
}

impl PipelineConfig {
    /// Parses a TOML config; relative paths are taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for split in [&mut self.data.tune_nn, &mut self.data.tune_mert, &mut self.data.test] {
            split.systems.iter_mut().for_each(fix);
            fix(&mut split.reference);
        }
        if let Some(p) = &mut self.data.test_labels {
            fix(p);
        }
        if let Some(p) = &mut self.classes.corpus {
            fix(p);
        }
    }

    /// Checks that inputs exist, splits are distinct and sub-configs hold.
    pub fn validate(&self) -> Result<()> {
        let splits = [&self.data.tune_nn, &self.data.tune_mert, &self.data.test];
        for s in splits {
            for p in s.systems.iter().chain(std::iter::once(&s.reference)) {
                if !p.is_file() {
                    return Err(Error::Config(format!("missing input file {}", p.display())));
                }
            }
        }
        for (i, a) in splits.iter().enumerate() {
            for b in &splits[i + 1..] {
                if a.reference == b.reference || a.systems.iter().any(|p| b.systems.contains(p)) {
                    return Err(Error::Config("tune_nn, tune_mert and test must use distinct files".into()));
                }
            }
        }
        if splits.iter().any(|s| s.systems.len() != self.data.test.systems.len()) {
            return Err(Error::Config("every split needs the same number of systems".into()));
        }
        if let Some(p) = &self.data.test_labels {
            if !p.is_file() {
                return Err(Error::Config(format!("missing label file {}", p.display())));
            }
        }
        if self.oracle.k == 0 {
            return Err(Error::Config("oracle k must be >= 1".into()));
        }
        self.nn.validate()?;
        self.mert.validate()
    }

    fn oracle_config(&self, k: usize) -> OracleConfig {
        OracleConfig { k, metric: self.metric, use_model_tiebreak: self.oracle.model_tiebreak }
    }
}

/// A loaded split with its networks and language model.
pub struct Split {
    pub name: &'static str,
    pub corpus: CombinationCorpus,
    pub refs: Vec<Vec<String>>,
    pub networks: Vec<ConfusionNetwork>,
    pub lm: TrigramLM,
}

impl Split {
    pub fn load(name: &'static str, paths: &SplitPaths) -> Result<Self> {
        let corpus = corpus::load_corpus(&paths.systems, Some(&paths.reference)).map_err(|e| e.at_stage("load"))?;
        Split::from_corpus(name, corpus)
    }

    pub fn from_corpus(name: &'static str, corpus: CombinationCorpus) -> Result<Self> {
        let refs: Vec<Vec<String>> = corpus
            .references()
            .ok_or_else(|| Error::Config(format!("split {name} has no references")).at_stage("load"))?
            .iter()
            .map(|s| s.tokens().to_vec())
            .collect();
        let networks = build_networks(&corpus).map_err(|e| e.at_stage("build"))?;
        let lm = TrigramLM::train(&corpus.all_sentences().map(|s| s.tokens()).collect::<Vec<_>>());
        Ok(Split { name, corpus, refs, networks, lm })
    }
}

/// One network per sentence, in sentence order.
pub fn build_networks(corpus: &CombinationCorpus) -> Result<Vec<ConfusionNetwork>> {
    (0..corpus.len())
        .into_par_iter()
        .map(|s| align::build_network(&corpus.hypotheses(s), s).map_err(|e| e.at_sentence("build", s)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub bleu: f64,
    pub ter: f64,
    pub criterion: f64,
}

impl EvalScores {
    pub fn compute<H, R, S, T>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> Result<Self>
    where
        H: AsRef<[S]>,
        R: AsRef<[T]>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let stats = metrics::corpus_error_stats(hyps, refs, cfg)?;
        Ok(EvalScores { bleu: stats.bleu(), ter: stats.ter(), criterion: stats.criterion() })
    }

    /// `BLEU x TER y (TER-BLEU)/2 z` in percent with two decimals.
    pub fn format(&self) -> String {
        format!(
            "BLEU {:.2}  TER {:.2}  (TER-BLEU)/2 {:.2}",
            100.0 * self.bleu,
            100.0 * self.ter,
            100.0 * self.criterion
        )
    }
}

/// Tuned weights of one feature set and the test outputs they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupResult {
    pub tune: TuneResult,
    pub test: EvalScores,
    pub outputs: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalVoteTraining {
    pub oracle: EvalScores,
    pub examples: usize,
    pub train: TrainReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub systems: Vec<(String, EvalScores)>,
    pub baseline: SetupResult,
    pub local_vote: Option<(LocalVoteTraining, SetupResult)>,
    /// Fraction of bootstrap samples where +localVote has higher BLEU.
    pub significance: Option<f64>,
    pub distribution_baseline: Vec<DistributionRow>,
    pub distribution_local_vote: Option<Vec<DistributionRow>>,
    pub recovery_baseline: Option<Recovery>,
    pub recovery_local_vote: Option<Recovery>,
}

impl PipelineReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("test set scores\n");
        for (name, sc) in &self.systems {
            s.push_str(&format!("  {name:<24} {}\n", sc.format()));
        }
        s.push_str(&format!("  {:<24} {}\n", "baseline", self.baseline.test.format()));
        if let Some((_, lv)) = &self.local_vote {
            let marker = self.significance.map(metrics::significance_marker).unwrap_or("");
            s.push_str(&format!("  {:<24} {} {marker}\n", "+localVote", lv.test.format()));
        }
        s.push_str("\ntune set (TER-BLEU)/2\n");
        s.push_str(&format!(
            "  baseline    initial {:.4}  tuned {:.4}\n",
            100.0 * self.baseline.tune.initial_criterion,
            100.0 * self.baseline.tune.criterion
        ));
        if let Some((train, lv)) = &self.local_vote {
            s.push_str(&format!(
                "  +localVote  initial {:.4}  tuned {:.4}\n",
                100.0 * lv.tune.initial_criterion,
                100.0 * lv.tune.criterion
            ));
            s.push_str(&format!(
                "\noracle (tune_nn) {}\ntraining examples {}\nfinal epoch loss {:.5}\n",
                train.oracle.format(),
                train.examples,
                train.train.epoch_losses.last().copied().unwrap_or(f64::NAN)
            ));
        }
        if let Some(p) = self.significance {
            s.push_str(&format!("bootstrap: +localVote better in {:.1}% of samples\n", 100.0 * p));
        }
        s.push_str("\nword occurrence, baseline\n");
        s.push_str(&analysis::format_distribution(&self.distribution_baseline));
        if let Some(d) = &self.distribution_local_vote {
            s.push_str("\nword occurrence, +localVote\n");
            s.push_str(&analysis::format_distribution(d));
        }
        if let Some(r) = self.recovery_baseline {
            s.push_str(&format!("\nplanted positions recovered, baseline: {}/{}\n", r.recovered, r.total));
        }
        if let Some(r) = self.recovery_local_vote {
            s.push_str(&format!("planted positions recovered, +localVote: {}/{}\n", r.recovered, r.total));
        }
        s
    }
}

/// Oracle paths, training examples and the trained voting model.
pub struct LocalVoteArtifacts {
    pub oracle: OracleCorpus,
    pub examples: Vec<Example>,
    pub classes: Option<ClassMap>,
    pub model: LocalVoteModel,
    pub train: TrainReport,
}

/// Runs oracle extraction with beam `k`, example extraction, optional
/// class training and network training on the tune_nn split.
pub fn train_local_vote(
    cfg: &PipelineConfig,
    split: &Split,
    k: usize,
    classes: Option<&ClusterConfig>,
) -> Result<LocalVoteArtifacts> {
    let layout = FeatureLayout::new(split.corpus.num_systems(), false);
    let tiebreak = Weights::uniform(layout);
    let scorer = decode::BaselineScorer { weights: &tiebreak, lm: &split.lm };
    let oracle = oracle::oracle_corpus(&split.networks, &split.refs, &cfg.oracle_config(k), Some(&scorer))
        .map_err(|e| e.at_stage("oracle"))?;
    let mut examples = Vec::new();
    for (cn, path) in split.networks.iter().zip(&oracle.paths) {
        let ex = nnvote::extract_examples(cn, &path.decision_labels(), cfg.nn.history)
            .map_err(|e| e.at_sentence("extract", cn.sentence_index))?;
        examples.extend(ex);
    }
    let class_map = match classes {
        Some(cc) => {
            let text: Vec<Vec<String>> = match &cfg.classes.corpus {
                Some(p) => corpus::read_sentences(p)
                    .map_err(|e| e.at_stage("classes"))?
                    .into_iter()
                    .map(|s| s.tokens().to_vec())
                    .collect(),
                None => split.refs.clone(),
            };
            Some(wordclass::train_classes(&text, cc).map_err(|e| e.at_stage("classes"))?)
        }
        None => None,
    };
    let train_examples: Vec<Example> = match &class_map {
        Some(m) => examples.iter().map(|e| e.map_classes(m)).collect(),
        None => examples.clone(),
    };
    let (net, train) =
        nnvote::train(&train_examples, &NNConfig { seed: cfg.seed, ..cfg.nn }).map_err(|e| e.at_stage("nn-train"))?;
    Ok(LocalVoteArtifacts {
        oracle,
        examples,
        model: LocalVoteModel { net, classes: class_map.clone() },
        classes: class_map,
        train,
    })
}

fn tune_and_test(
    cfg: &PipelineConfig,
    tune_split: &Split,
    test_split: &Split,
    init: &Weights,
    model: Option<&LocalVoteModel>,
    stage: &'static str,
) -> Result<SetupResult> {
    let mert = MertConfig { seed: cfg.seed.wrapping_add(cfg.mert.seed), ..cfg.mert };
    let tune = tune::tune_loop(&tune_split.networks, &tune_split.refs, &tune_split.lm, model, init, &mert, &cfg.metric)
        .map_err(|e| e.at_stage(stage))?;
    let lists = decode::decode_corpus(&test_split.networks, &tune.weights, &test_split.lm, model, 1)
        .map_err(|e| e.at_stage("decode-test"))?;
    let outputs = decode::one_best(&lists);
    let test = EvalScores::compute(&outputs, &test_split.refs, &cfg.metric).map_err(|e| e.at_stage("eval"))?;
    Ok(SetupResult { tune, test, outputs })
}

fn write_to(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Error::io(p, e))
}

/// Runs every stage and writes all artifacts into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_to(out_dir, "config.toml", &cfg.to_toml()?)?;

    let tune_mert = Split::load("tune_mert", &cfg.data.tune_mert)?;
    let test = Split::load("test", &cfg.data.test)?;
    align::write_networks(&tune_mert.networks, out_dir.join("networks.tune_mert.jsonl"))?;
    align::write_networks(&test.networks, out_dir.join("networks.test.jsonl"))?;

    let layout = FeatureLayout::new(test.corpus.num_systems(), false);
    let baseline = tune_and_test(cfg, &tune_mert, &test, &Weights::uniform(layout), None, "tune-baseline")?;
    baseline.tune.weights.save(out_dir.join("weights.baseline.tsv"))?;
    corpus::write_token_lines(&baseline.outputs, out_dir.join("test.baseline.txt"))?;

    let local_vote = if cfg.features.local_vote {
        let tune_nn = Split::load("tune_nn", &cfg.data.tune_nn)?;
        align::write_networks(&tune_nn.networks, out_dir.join("networks.tune_nn.jsonl"))?;
        let classes = cfg.classes.enabled.then_some(ClusterConfig {
            num_classes: cfg.classes.num_classes,
            iterations: cfg.classes.iterations,
            seed: cfg.seed,
        });
        let art = train_local_vote(cfg, &tune_nn, cfg.oracle.k, classes.as_ref())?;
        let records: Vec<DecisionRecord> =
            art.oracle.paths.iter().enumerate().map(|(s, p)| DecisionRecord::new(s, p)).collect();
        oracle::write_decisions(&records, out_dir.join("oracle.tune_nn.jsonl"))?;
        let oracle_words: Vec<&[String]> = art.oracle.paths.iter().map(|p| p.words.as_slice()).collect();
        corpus::write_token_lines(&oracle_words, out_dir.join("oracle.tune_nn.txt"))?;
        nnvote::write_examples(&art.examples, out_dir.join("examples.tune_nn.tsv"))?;
        if let Some(m) = &art.classes {
            m.save(out_dir.join("classes.tsv"))?;
        }
        art.model.save(out_dir.join("localvote.model.json"))?;

        let init = baseline.tune.weights.with_local_vote(0.0);
        let lv = tune_and_test(cfg, &tune_mert, &test, &init, Some(&art.model), "tune-localvote")?;
        lv.tune.weights.save(out_dir.join("weights.localvote.tsv"))?;
        corpus::write_token_lines(&lv.outputs, out_dir.join("test.localvote.txt"))?;
        let training = LocalVoteTraining {
            oracle: EvalScores { bleu: art.oracle.bleu, ter: art.oracle.ter, criterion: art.oracle.criterion },
            examples: art.examples.len(),
            train: art.train,
        };
        Some((training, lv))
    } else {
        None
    };

    let report = evaluate(cfg, &test, baseline, local_vote)?;
    write_to(out_dir, "report.txt", &report.to_text())?;
    write_scores_csv(&report, &out_dir.join("scores.csv"))?;
    Ok(report)
}

fn evaluate(
    cfg: &PipelineConfig,
    test: &Split,
    baseline: SetupResult,
    local_vote: Option<(LocalVoteTraining, SetupResult)>,
) -> Result<PipelineReport> {
    let systems = test
        .corpus
        .systems()
        .iter()
        .map(|sys| Ok((sys.name.clone(), EvalScores::compute(&sys.sentences, &test.refs, &cfg.metric)?)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_stage("eval"))?;
    let significance = match &local_vote {
        Some((_, lv)) => Some(
            metrics::bootstrap_significance(
                &lv.outputs,
                &baseline.outputs,
                &test.refs,
                cfg.bootstrap_samples,
                cfg.seed,
                &cfg.metric,
            )
            .map_err(|e| e.at_stage("eval"))?,
        ),
        None => None,
    };
    let distribution_baseline = analysis::word_occurrence_distribution(&test.corpus, &baseline.outputs)?;
    let distribution_local_vote = match &local_vote {
        Some((_, lv)) => Some(analysis::word_occurrence_distribution(&test.corpus, &lv.outputs)?),
        None => None,
    };
    let labels = match &cfg.data.test_labels {
        Some(p) => Some(synth::read_labels(p).map_err(|e| e.at_stage("eval"))?),
        None => None,
    };
    let (recovery_baseline, recovery_local_vote) = match &labels {
        Some(l) => (
            Some(analysis::planted_recovery(&baseline.outputs, &test.refs, l)?),
            match &local_vote {
                Some((_, lv)) => Some(analysis::planted_recovery(&lv.outputs, &test.refs, l)?),
                None => None,
            },
        ),
        None => (None, None),
    };
    Ok(PipelineReport {
        systems,
        baseline,
        local_vote,
        significance,
        distribution_baseline,
        distribution_local_vote,
        recovery_baseline,
        recovery_local_vote,
    })
}

fn write_scores_csv(report: &PipelineReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["setup", "bleu", "ter", "criterion", "tune_criterion"]).map_err(err)?;
    for (name, s) in &report.systems {
        w.write_record([name.clone(), s.bleu.to_string(), s.ter.to_string(), s.criterion.to_string(), String::new()])
            .map_err(err)?;
    }
    let mut rows = vec![("baseline", &report.baseline)];
    if let Some((_, lv)) = &report.local_vote {
        rows.push(("localvote", lv));
    }
    for (name, r) in rows {
        w.write_record([
            name.to_string(),
            r.test.bleu.to_string(),
            r.test.ter.to_string(),
            r.test.criterion.to_string(),
            r.tune.criterion.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    K,
    ClassSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    /// Oracle criterion on tune_nn.
    pub oracle_criterion: f64,
    /// Tuned +localVote criterion on tune_mert.
    pub tune_criterion: f64,
}

/// Varies the oracle beam or the class count with everything else fixed.
/// The baseline weights are tuned once and shared by all values.
pub fn sweep(cfg: &PipelineConfig, axis: SweepAxis, values: &[usize]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if values.is_empty() || values.contains(&0) {
        return Err(Error::Config("sweep values must be non-empty and >= 1".into()));
    }
    let tune_nn = Split::load("tune_nn", &cfg.data.tune_nn)?;
    let tune_mert = Split::load("tune_mert", &cfg.data.tune_mert)?;
    let layout = FeatureLayout::new(tune_mert.corpus.num_systems(), false);
    let mert = MertConfig { seed: cfg.seed.wrapping_add(cfg.mert.seed), ..cfg.mert };
    let base = tune::tune_loop(
        &tune_mert.networks,
        &tune_mert.refs,
        &tune_mert.lm,
        None,
        &Weights::uniform(layout),
        &mert,
        &cfg.metric,
    )
    .map_err(|e| e.at_stage("tune-baseline"))?;
    let init = base.weights.with_local_vote(0.0);
    values
        .iter()
        .map(|&v| {
            let (k, classes) = match axis {
                SweepAxis::K => (
                    v,
                    cfg.classes.enabled.then_some(ClusterConfig {
                        num_classes: cfg.classes.num_classes,
                        iterations: cfg.classes.iterations,
                        seed: cfg.seed,
                    }),
                ),
                SweepAxis::ClassSize => (
                    cfg.oracle.k,
                    Some(ClusterConfig { num_classes: v, iterations: cfg.classes.iterations, seed: cfg.seed }),
                ),
            };
            let art = train_local_vote(cfg, &tune_nn, k, classes.as_ref())?;
            let lv = tune::tune_loop(
                &tune_mert.networks,
                &tune_mert.refs,
                &tune_mert.lm,
                Some(&art.model),
                &init,
                &mert,
                &cfg.metric,
            )
            .map_err(|e| e.at_stage("tune-localvote"))?;
            log::info!("sweep value {v}: oracle {:.6} tune {:.6}", art.oracle.criterion, lv.criterion);
            Ok(SweepRow { value: v, oracle_criterion: art.oracle.criterion, tune_criterion: lv.criterion })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Synthetic data set laid out for [`run_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub reference: synth::ReferenceSpec,
    pub noise: synth::NoiseSpec,
    pub tune_nn: usize,
    pub tune_mert: usize,
    pub test: usize,
}

/// Generates references and systems, splits them into the three roles and
/// writes one directory per split plus a ready-to-run `config.toml`.
pub fn write_synthetic_dataset(plan: &SynthPlan, dir: &Path) -> Result<PipelineConfig> {
    let total = plan.tune_nn + plan.tune_mert + plan.test;
    let refs = synth::generate_references(&synth::ReferenceSpec { num_sentences: total, ..plan.reference })?;
    let data = synth::generate_systems(&refs, &plan.noise)?;
    let n = data.corpus.num_systems();
    let bounds = [
        ("tune_nn", 0, plan.tune_nn),
        ("tune_mert", plan.tune_nn, plan.tune_nn + plan.tune_mert),
        ("test", plan.tune_nn + plan.tune_mert, total),
    ];
    let mut splits = Vec::new();
    for (name, lo, hi) in bounds {
        let sub = dir.join(name);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut systems = Vec::new();
        for sys in data.corpus.systems() {
            let p = sub.join(format!("sys{}.txt", sys.system_id));
            corpus::write_sentences(&sys.sentences[lo..hi], &p)?;
            systems.push(p);
        }
        let reference = sub.join("ref.txt");
        corpus::write_sentences(&refs[lo..hi], &reference)?;
        if name == "test" {
            let labels: Vec<synth::PlantedLabel> = data
                .labels
                .iter()
                .filter(|l| (lo..hi).contains(&l.sentence_index))
                .map(|l| synth::PlantedLabel { sentence_index: l.sentence_index - lo, ..*l })
                .collect();
            synth::write_labels(&labels, sub.join("labels.jsonl"))?;
        }
        splits.push(SplitPaths { systems, reference });
    }
    debug_assert_eq!(splits[0].systems.len(), n);
    let mut it = splits.into_iter();
    let cfg = PipelineConfig {
        data: DataConfig {
            tune_nn: it.next().expect("three splits"),
            tune_mert: it.next().expect("three splits"),
            test: it.next().expect("three splits"),
            test_labels: Some(dir.join("test").join("labels.jsonl")),
        },
        oracle: OracleSection::default(),
        nn: NNConfig::default(),
        classes: ClassSection::default(),
        features: FeatureSection::default(),
        mert: MertConfig::default(),
        metric: MetricConfig::default(),
        bootstrap_samples: metrics::BOOTSTRAP_SAMPLES,
        seed: plan.noise.seed,
    };
    // The file stores paths relative to itself so the directory can move.
    let mut portable = cfg.clone();
    let rel = |p: &mut PathBuf| {
        if let Ok(r) = p.strip_prefix(dir) {
            *p = r.to_path_buf();
        }
    };
    for split in [&mut portable.data.tune_nn, &mut portable.data.tune_mert, &mut portable.data.test] {
        split.systems.iter_mut().for_each(rel);
        rel(&mut split.reference);
    }
    if let Some(p) = &mut portable.data.test_labels {
        rel(p);
    }
    write_to(dir, "config.toml", &portable.to_toml()?)?;
    Ok(cfg)
}
