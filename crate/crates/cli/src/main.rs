//! `syscomb` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use syscomb::align;
use syscomb::analysis;
use syscomb::corpus::{self, CombinationCorpus};
use syscomb::decode::{self, BaselineScorer, FeatureLayout, TrigramLM, Weights};
use syscomb::metrics::{self, MetricConfig};
use syscomb::nnvote::{self, LocalVoteModel, NNConfig};
use syscomb::oracle::{self, DecisionRecord, OracleConfig};
use syscomb::pipeline::{self, EvalScores, PipelineConfig, SweepAxis, SynthPlan};
use syscomb::synth::{NoiseSpec, ReferenceSpec, SystemNoise};
use syscomb::tune::{self, MertConfig};
use syscomb::wordclass::{self, ClassMap, ClusterConfig};

#[derive(Parser)]
#[command(name = "syscomb", version, about = "Confusion network system combination")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build confusion networks and decode them with a weight vector.
    Combine(CombineArgs),
    /// Extract sentence-BLEU oracle paths from confusion networks.
    Oracle(OracleArgs),
    /// Turn oracle arc decisions into network training examples.
    Extract(ExtractArgs),
    /// Train word classes with the exchange algorithm.
    Classes(ClassesArgs),
    /// Train the local voting network on extracted examples.
    NnTrain(NnTrainArgs),
    /// Tune linear model weights with MERT.
    Tune(TuneArgs),
    /// Score a hypothesis file against references.
    Eval(EvalArgs),
    /// Word occurrence distribution of a combined output.
    Analyze(AnalyzeArgs),
    /// Sweep the oracle beam size or the class count.
    Sweep(SweepArgs),
    /// Run every stage from a configuration file.
    Pipeline(PipelineArgs),
    /// Write a synthetic data set with a ready-to-run configuration.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SystemsArgs {
    /// System output files, one sentence per line; the order fixes system ids.
    #[arg(long, num_args = 1.., required = true)]
    systems: Vec<PathBuf>,
}

#[derive(Args)]
struct CombineArgs {
    #[command(flatten)]
    systems: SystemsArgs,
    /// Feature weights; uniform weights when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Local voting model; enables the localVote feature.
    #[arg(long)]
    local_vote: Option<PathBuf>,
    /// Size of the n-best list written with --nbest-out.
    #[arg(long, default_value_t = 1)]
    nbest: usize,
    #[arg(long)]
    nbest_out: Option<PathBuf>,
    /// Write the confusion networks as JSON lines.
    #[arg(long)]
    dump_cn: Option<PathBuf>,
    /// Combined 1-best output.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    systems: SystemsArgs,
    #[arg(long)]
    reference: PathBuf,
    /// Previously dumped networks; rebuilt from the systems when absent.
    #[arg(long)]
    networks: Option<PathBuf>,
    /// Beam size of the oracle search.
    #[arg(long, default_value_t = 1200)]
    k: usize,
    /// Disable the baseline model score as a pruning tie-break.
    #[arg(long)]
    no_tiebreak: bool,
    /// Oracle sentences, one per line.
    #[arg(long, short)]
    out: PathBuf,
    /// Arc decisions as JSON lines.
    #[arg(long)]
    decisions: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Dumped networks matching the decision file.
    #[arg(long)]
    networks: PathBuf,
    #[arg(long)]
    decisions: PathBuf,
    /// Words per system in the input context (1 or 2).
    #[arg(long, default_value_t = 1)]
    history: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassesArgs {
    /// Monolingual text, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1000)]
    num_classes: usize,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct NnTrainArgs {
    #[arg(long)]
    examples: PathBuf,
    /// Class map applied to contexts and targets before training.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    hidden_size: usize,
    #[arg(long, default_value_t = 150)]
    projection_dim: usize,
    #[arg(long, default_value_t = 0.08)]
    learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// History the examples were extracted with; scoring reuses it.
    #[arg(long, default_value_t = 1)]
    history: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    systems: SystemsArgs,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    local_vote: Option<PathBuf>,
    /// Starting weights; a missing localVote entry starts at 0.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    #[arg(long, default_value_t = 200)]
    nbest: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Second hypothesis file for a paired bootstrap test.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long, default_value_t = metrics::BOOTSTRAP_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    systems: SystemsArgs,
    #[arg(long)]
    combined: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    K,
    ClassSize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory for all artifacts.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Train word classes with this many classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    no_local_vote: bool,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    num_systems: usize,
    #[arg(long, default_value_t = 500)]
    tune_nn: usize,
    #[arg(long, default_value_t = 300)]
    tune_mert: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 300)]
    vocab_size: usize,
    #[arg(long, default_value_t = 0.15)]
    substitution: f64,
    #[arg(long, default_value_t = 0.05)]
    deletion: f64,
    #[arg(long, default_value_t = 0.0)]
    insertion: f64,
    #[arg(long, default_value_t = 0.05)]
    planted: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn load_systems(paths: &[PathBuf], reference: Option<&Path>) -> Result<CombinationCorpus> {
    Ok(corpus::load_corpus(paths, reference)?)
}

fn token_refs(corpus: &CombinationCorpus) -> Result<Vec<Vec<String>>> {
    let refs = corpus.references().context("references required")?;
    Ok(refs.iter().map(|s| s.tokens().to_vec()).collect())
}

fn corpus_lm(corpus: &CombinationCorpus) -> TrigramLM {
    TrigramLM::train(&corpus.all_sentences().map(|s| s.tokens()).collect::<Vec<_>>())
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(corpus::read_sentences(path)?.into_iter().map(|s| s.tokens().to_vec()).collect())
}

fn combine(a: CombineArgs) -> Result<()> {
    let corpus = load_systems(&a.systems.systems, None)?;
    let networks = pipeline::build_networks(&corpus)?;
    if let Some(p) = &a.dump_cn {
        align::write_networks(&networks, p)?;
    }
    let lv = a.local_vote.as_deref().map(LocalVoteModel::load).transpose()?;
    let layout = FeatureLayout::new(corpus.num_systems(), lv.is_some());
    let weights = match &a.weights {
        Some(p) => Weights::load(p)?,
        None => Weights::uniform(layout),
    };
    let lists = decode::decode_corpus(&networks, &weights, &corpus_lm(&corpus), lv.as_ref(), a.nbest.max(1))?;
    corpus::write_token_lines(&decode::one_best(&lists), &a.out)?;
    if let Some(p) = &a.nbest_out {
        decode::write_nbest(&lists, p)?;
    }
    log::info!("combined {} sentences from {} systems", corpus.len(), corpus.num_systems());
    Ok(())
}

fn run_oracle(a: OracleArgs) -> Result<()> {
    let corpus = load_systems(&a.systems.systems, Some(&a.reference))?;
    let refs = token_refs(&corpus)?;
    let networks = match &a.networks {
        Some(p) => align::read_networks(p, Some(corpus.num_systems()))?,
        None => pipeline::build_networks(&corpus)?,
    };
    let cfg = OracleConfig { k: a.k, use_model_tiebreak: !a.no_tiebreak, ..OracleConfig::default() };
    let lm = corpus_lm(&corpus);
    let weights = Weights::uniform(FeatureLayout::new(corpus.num_systems(), false));
    let scorer = BaselineScorer { weights: &weights, lm: &lm };
    let result = oracle::oracle_corpus(&networks, &refs, &cfg, Some(&scorer))?;
    let words: Vec<&[String]> = result.paths.iter().map(|p| p.words.as_slice()).collect();
    corpus::write_token_lines(&words, &a.out)?;
    let records: Vec<DecisionRecord> =
        networks.iter().zip(&result.paths).map(|(cn, p)| DecisionRecord::new(cn.sentence_index, p)).collect();
    oracle::write_decisions(&records, &a.decisions)?;
    println!("{}", EvalScores { bleu: result.bleu, ter: result.ter, criterion: result.criterion }.format());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let networks = align::read_networks(&a.networks, None)?;
    let records = oracle::read_decisions(&a.decisions)?;
    if networks.len() != records.len() {
        bail!("{} networks but {} decision records", networks.len(), records.len());
    }
    let mut examples = Vec::new();
    for (cn, r) in networks.iter().zip(&records) {
        if cn.sentence_index != r.sentence_index {
            bail!("network {} paired with decisions for {}", cn.sentence_index, r.sentence_index);
        }
        examples.extend(nnvote::extract_examples(cn, &r.labels(), a.history)?);
    }
    nnvote::write_examples(&examples, &a.out)?;
    log::info!("{} examples", examples.len());
    Ok(())
}

fn classes(a: ClassesArgs) -> Result<()> {
    let text = read_lines(&a.corpus)?;
    let cfg = ClusterConfig { num_classes: a.num_classes, iterations: a.iterations, seed: a.seed };
    let map = wordclass::train_classes(&text, &cfg)?;
    map.save(&a.out)?;
    log::info!("{} words in {} classes", map.len(), map.num_classes());
    Ok(())
}

fn nn_train(a: NnTrainArgs) -> Result<()> {
    let mut examples = nnvote::read_examples(&a.examples)?;
    let classes = a.classes.as_deref().map(ClassMap::load).transpose()?;
    if let Some(m) = &classes {
        examples = examples.iter().map(|e| e.map_classes(m)).collect();
    }
    let cfg = NNConfig {
        hidden_size: a.hidden_size,
        projection_dim: a.projection_dim,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        history: a.history,
    };
    let (net, report) = nnvote::train(&examples, &cfg)?;
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        log::info!("epoch {}: loss {loss:.5}", e + 1);
    }
    println!("training accuracy {:.4}", net.accuracy(&examples)?);
    LocalVoteModel { net, classes }.save(&a.out)?;
    Ok(())
}

fn run_tune(a: TuneArgs) -> Result<()> {
    let corpus = load_systems(&a.systems.systems, Some(&a.reference))?;
    let refs = token_refs(&corpus)?;
    let networks = pipeline::build_networks(&corpus)?;
    let lv = a.local_vote.as_deref().map(LocalVoteModel::load).transpose()?;
    let layout = FeatureLayout::new(corpus.num_systems(), lv.is_some());
    let init = match &a.init {
        Some(p) => {
            let w = Weights::load(p)?;
            if lv.is_some() && w.layout.local_vote_index().is_none() {
                w.with_local_vote(0.0)
            } else {
                w
            }
        }
        None => Weights::uniform(layout),
    };
    let cfg = MertConfig {
        restarts: a.restarts,
        outer_iterations: a.iterations,
        nbest: a.nbest,
        seed: a.seed,
        ..MertConfig::default()
    };
    let result =
        tune::tune_loop(&networks, &refs, &corpus_lm(&corpus), lv.as_ref(), &init, &cfg, &MetricConfig::default())?;
    result.weights.save(&a.out)?;
    println!(
        "tune (TER-BLEU)/2 {:.4} -> {:.4} after {} iterations",
        100.0 * result.initial_criterion,
        100.0 * result.criterion,
        result.iterations.len()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = MetricConfig::default();
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    println!("{}", EvalScores::compute(&hyps, &refs, &cfg)?.format());
    if let Some(other) = &a.compare {
        let b = read_lines(other)?;
        println!("compare {}", EvalScores::compute(&b, &refs, &cfg)?.format());
        let p = metrics::bootstrap_significance(&hyps, &b, &refs, a.samples, a.seed, &cfg)?;
        println!("bootstrap: hyp better in {:.1}% of samples {}", 100.0 * p, metrics::significance_marker(p));
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let corpus = load_systems(&a.systems.systems, None)?;
    let combined = read_lines(&a.combined)?;
    let rows = analysis::word_occurrence_distribution(&corpus, &combined)?;
    print!("{}", analysis::format_distribution(&rows));
    if let Some(p) = &a.csv {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["support", "in_output", "total", "percentage"])?;
        for r in &rows {
            w.write_record([
                r.support.to_string(),
                r.in_output.to_string(),
                r.total.to_string(),
                format!("{:.1}", r.percentage()),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let axis = match a.axis {
        Axis::K => SweepAxis::K,
        Axis::ClassSize => SweepAxis::ClassSize,
    };
    let rows = pipeline::sweep(&cfg, axis, &a.values)?;
    pipeline::write_sweep_csv(&rows, &a.out)?;
    for r in &rows {
        println!("{}\t{:.6}\t{:.6}", r.value, r.oracle_criterion, r.tune_criterion);
    }
    Ok(())
}

fn run_pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(k) = a.k {
        cfg.oracle.k = k;
    }
    if let Some(c) = a.classes {
        cfg.classes.enabled = true;
        cfg.classes.num_classes = c;
    }
    if a.no_local_vote {
        cfg.features.local_vote = false;
    }
    if let Some(h) = a.history {
        cfg.nn.history = h;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let report = pipeline::run_pipeline(&cfg, &a.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let noise = SystemNoise { substitution: a.substitution, deletion: a.deletion, insertion: a.insertion };
    let plan = SynthPlan {
        reference: ReferenceSpec { vocab_size: a.vocab_size, seed: a.seed, ..ReferenceSpec::default() },
        noise: NoiseSpec::uniform(a.num_systems, noise, a.planted, a.seed),
        tune_nn: a.tune_nn,
        tune_mert: a.tune_mert,
        test: a.test,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    pipeline::write_synthetic_dataset(&plan, &a.out)?;
    println!("{}", a.out.join("config.toml").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match cli.command {
        Command::Combine(a) => combine(a),
        Command::Oracle(a) => run_oracle(a),
        Command::Extract(a) => extract(a),
        Command::Classes(a) => classes(a),
        Command::NnTrain(a) => nn_train(a),
        Command::Tune(a) => run_tune(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Sweep(a) => sweep(a),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Synth(a) => synth(a),
    }
}
