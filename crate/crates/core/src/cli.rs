//! Command-line front end.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{require_exists, RunConfig};
use crate::corpus::{
    accumulate_joint_goals, generate_synthetic_corpus, load_corpus, select_utterance, Corpus, CorpusFormat,
    OntologySpec, SlotValue, Split, UtteranceMode,
};
use crate::error::{Error, Result};
use crate::evaluator::{decode_predictions, evaluate, ResultRecord};
use crate::featurizer::{vocabulary, EmbeddingTable};
use crate::model::SimModel;
use crate::trainer::{apply_ablation, load_model, parameter_breakdown, train, Checkpoint, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "sim-dst", version, about = "Slot-independent neural dialogue state tracker")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Utterance source at evaluation time: transcript or asr_top1.
    #[arg(long, global = true)]
    pub mode: Option<UtteranceMode>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Cap on evaluation worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Corpus directory or file (default: config, then $SIM_DST_DATA_DIR).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    /// GloVe-format word vectors (default: embeddings.txt in the corpus dir).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write the best checkpoint, log and metrics.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also write per-turn outcomes as JSON lines to this file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Print per-turn predictions as JSON lines.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Train and evaluate the full model and each single-flag ablation.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Report parameter counts of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic corpus, ontology and word vectors to --out.
    Synth {
        #[arg(long, default_value_t = 20)]
        dialogues: usize,
        #[arg(long, value_enum, default_value_t = Shape::Small)]
        shape: Shape,
        /// Word vector dimension.
        #[arg(long, default_value_t = 300)]
        dim: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    Small,
    Woz,
    Dstc2,
}

impl Shape {
    fn spec(self) -> OntologySpec {
        match self {
            Shape::Small => OntologySpec::small(),
            Shape::Woz => OntologySpec::woz_like(),
            Shape::Dstc2 => OntologySpec::dstc2_like(),
        }
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit
/// code: 0 success, 1 usage or validation error, 2 runtime failure.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn build_config(cli: &Cli, data: Option<&DataArgs>, checkpoint: Option<&PathBuf>) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    if let Some(t) = cli.threshold {
        cfg.threshold = t;
    }
    if let Some(n) = cli.threads {
        cfg.threads = n;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(data) = data {
        if let Some(c) = &data.corpus {
            cfg.corpus = Some(c.clone());
        }
        if let Some(f) = data.format {
            cfg.format = f;
        }
        if let Some(e) = &data.embeddings {
            cfg.embeddings = Some(e.clone());
        }
    }
    if let Some(c) = checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { data, checkpoint } => cmd_train(&build_config(&cli, Some(data), checkpoint.as_ref())?),
        Command::Evaluate {
            data,
            checkpoint,
            split,
            dump,
        } => cmd_evaluate(&build_config(&cli, Some(data), checkpoint.as_ref())?, *split, dump.as_deref()),
        Command::Predict { data, checkpoint, split } => {
            cmd_predict(&build_config(&cli, Some(data), checkpoint.as_ref())?, *split)
        }
        Command::Ablate { data } => cmd_ablate(&build_config(&cli, Some(data), None)?),
        Command::Inspect { checkpoint, json } => {
            cmd_inspect(&build_config(&cli, None, checkpoint.as_ref())?.checkpoint_path(), *json)
        }
        Command::Synth { dialogues, shape, dim } => {
            let cfg = build_config(&cli, None, None)?;
            cmd_synth(&cfg.out_dir, cfg.train.seed, *dialogues, shape.spec(), *dim)
        }
    }
}

/// Loads the corpus and the word vectors it needs, checking paths first.
pub fn load_inputs(cfg: &RunConfig) -> Result<(Corpus, Arc<EmbeddingTable>)> {
    let corpus_path = cfg.corpus_path()?;
    let embeddings_path = cfg.embeddings_path()?;
    require_exists(&corpus_path)?;
    require_exists(&embeddings_path)?;
    let corpus = load_corpus(&corpus_path, cfg.format)?;
    let vocab = vocabulary(&corpus.dialogues, &corpus.ontology);
    let words = EmbeddingTable::load_glove(&embeddings_path, Some(&vocab))?;
    log::info!("{} of {} vocabulary words have vectors", words.rows() - 1, vocab.len());
    Ok((corpus, Arc::new(words)))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

/// Scores the non-empty held-out splits.
fn held_out_records(model: &SimModel, corpus: &Corpus, cfg: &RunConfig) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for split in [Split::Dev, Split::Test] {
        let dialogues = corpus.split_owned(split);
        if dialogues.is_empty() {
            continue;
        }
        let e = evaluate(model, &dialogues, &corpus.ontology, &cfg.eval_options())?;
        out.push(ResultRecord::new(split.as_str(), cfg.mode, &e.metrics));
    }
    Ok(out)
}

fn train_to(
    cfg: &RunConfig,
    corpus: &Corpus,
    words: &Arc<EmbeddingTable>,
    out_dir: &Path,
    checkpoint: &Path,
) -> Result<(Checkpoint, SimModel)> {
    if words.dim() != cfg.train.dims.d_word {
        return Err(Error::Config(format!(
            "word vectors have {} dims but d_word is {}",
            words.dim(),
            cfg.train.dims.d_word
        )));
    }
    create_dir(out_dir)?;
    let log_path = out_dir.join("train_log.jsonl");
    if log_path.exists() {
        std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
    }
    let opts = TrainOptions {
        log_path: Some(log_path),
        eval: cfg.eval_options(),
        ..TrainOptions::default()
    };
    let outcome = train(corpus, words.clone(), &cfg.train, &opts)?;
    outcome.checkpoint.save(checkpoint)?;
    let model = load_model(&outcome.checkpoint, words.clone())?;
    Ok((outcome.checkpoint, model))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (corpus, words) = load_inputs(cfg)?;
    let ck_path = cfg.checkpoint_path();
    let (ck, model) = train_to(cfg, &corpus, &words, &cfg.out_dir, &ck_path)?;
    eprintln!(
        "best epoch {} (dev joint goal {:.4}); checkpoint written to {}",
        ck.epoch,
        ck.dev_joint_goal,
        ck_path.display()
    );
    let records = held_out_records(&model, &corpus, cfg)?;
    let lines: String = records.iter().map(|r| json_line(r) + "\n").collect();
    write_file(&cfg.out_dir.join("metrics.jsonl"), &lines)?;
    print!("{lines}");
    Ok(())
}

fn load_checkpoint_model(cfg: &RunConfig, words: Arc<EmbeddingTable>) -> Result<SimModel> {
    let path = cfg.checkpoint_path();
    require_exists(&path)?;
    let ck = Checkpoint::load(&path)?;
    if ck.config.dims.d_word != words.dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {}-dimensional word vectors, embeddings have {}",
            ck.config.dims.d_word,
            words.dim()
        )));
    }
    load_model(&ck, words)
}

fn split_dialogues(corpus: &Corpus, split: Split) -> Result<Vec<crate::corpus::Dialogue>> {
    let dialogues = corpus.split_owned(split);
    if dialogues.is_empty() {
        return Err(Error::InvalidInput(format!("the corpus has no {split} dialogues")));
    }
    Ok(dialogues)
}

pub fn cmd_evaluate(cfg: &RunConfig, split: Split, dump: Option<&Path>) -> Result<()> {
    let (corpus, words) = load_inputs(cfg)?;
    let model = load_checkpoint_model(cfg, words)?;
    let dialogues = split_dialogues(&corpus, split)?;
    let e = evaluate(&model, &dialogues, &corpus.ontology, &cfg.eval_options())?;
    let record = ResultRecord::new(split.as_str(), cfg.mode, &e.metrics);
    let line = json_line(&record);
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(format!("metrics_{split}.json")), &(line.clone() + "\n"))?;
    if let Some(path) = dump {
        let lines: String = e.turns.iter().map(|t| json_line(t) + "\n").collect();
        write_file(path, &lines)?;
    }
    println!("{line}");
    Ok(())
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    dialogue: &'a str,
    turn: usize,
    turn_goals: Vec<SlotValue>,
    turn_requests: Vec<SlotValue>,
    joint_goal: Vec<SlotValue>,
    probabilities: Vec<(String, String, f64)>,
}

pub fn cmd_predict(cfg: &RunConfig, split: Split) -> Result<()> {
    let (corpus, words) = load_inputs(cfg)?;
    let model = load_checkpoint_model(cfg, words)?;
    let dialogues = split_dialogues(&corpus, split)?;
    let encoded = model.encode_ontology(&corpus.ontology)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for d in &dialogues {
        let mut preds = Vec::with_capacity(d.turns.len());
        for turn in &d.turns {
            let tokens = select_utterance(&d.id, turn, cfg.mode)?;
            let probs = model.score_encoded(&tokens, &turn.system_actions, &encoded)?;
            let scored: Vec<(SlotValue, f64)> = encoded.pairs.iter().cloned().zip(probs).collect();
            preds.push(decode_predictions(&scored, cfg.threshold));
        }
        let goals: Vec<Vec<SlotValue>> = preds.iter().map(|p| p.turn_goals.iter().cloned().collect()).collect();
        let joint = accumulate_joint_goals(&goals)?;
        for ((turn, p), j) in d.turns.iter().zip(&preds).zip(joint) {
            let rec = PredictionRecord {
                dialogue: &d.id,
                turn: turn.index,
                turn_goals: p.turn_goals.iter().cloned().collect(),
                turn_requests: p.turn_requests.iter().cloned().collect(),
                joint_goal: j.into_iter().collect(),
                probabilities: p
                    .probabilities
                    .iter()
                    .map(|(sv, pr)| (sv.slot.clone(), sv.value.clone(), *pr))
                    .collect(),
            };
            writeln!(out, "{}", json_line(&rec)).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub ablation: String,
    pub d_u: usize,
    pub trainable_parameters: usize,
    pub best_epoch: usize,
    pub dev_joint_goal: f64,
    pub test_joint_goal: Option<f64>,
    pub test_turn_request: Option<f64>,
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
    let header = ["ablation", "d_u", "params", "epoch", "dev_joint", "test_joint", "test_request"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.ablation.clone(),
                r.d_u.to_string(),
                r.trainable_parameters.to_string(),
                r.best_epoch.to_string(),
                pct(Some(r.dev_joint_goal)),
                pct(r.test_joint_goal),
                pct(r.test_turn_request),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..7)
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for r in &body {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let (corpus, words) = load_inputs(cfg)?;
    let test = corpus.split_owned(Split::Test);
    let mut rows = Vec::new();
    for (name, ablation) in crate::model::Ablation::study() {
        let mut run = cfg.clone();
        run.train.ablation = ablation;
        let dir = cfg.out_dir.join("ablation").join(name.replace('=', "-"));
        let (ck, model) = train_to(&run, &corpus, &words, &dir, &dir.join("model.ckpt"))?;
        let metrics = if test.is_empty() {
            None
        } else {
            Some(evaluate(&model, &test, &corpus.ontology, &run.eval_options())?.metrics)
        };
        let row = AblationRow {
            ablation: name.to_string(),
            d_u: run.train.dims.d_u(&ablation),
            trainable_parameters: model.parameter_count(),
            best_epoch: ck.epoch,
            dev_joint_goal: ck.dev_joint_goal,
            test_joint_goal: metrics.map(|m| m.joint_goal_acc),
            test_turn_request: metrics.map(|m| m.turn_request_acc),
        };
        eprintln!("{}", json_line(&row));
        rows.push(row);
    }
    let table = format_ablation_table(&rows);
    let lines: String = rows.iter().map(|r| json_line(r) + "\n").collect();
    write_file(&cfg.out_dir.join("ablation.txt"), &table)?;
    write_file(&cfg.out_dir.join("ablation.jsonl"), &lines)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct InspectReport {
    trainable_parameters: usize,
    components: std::collections::BTreeMap<String, usize>,
    epoch: usize,
    dev_joint_goal: f64,
    dev_turn_request: f64,
    d_u: usize,
}

pub fn cmd_inspect(path: &Path, json: bool) -> Result<()> {
    require_exists(path)?;
    let ck = Checkpoint::load(path)?;
    let model_cfg = apply_ablation(&ck.config);
    let components = parameter_breakdown(&ck.params);
    let report = InspectReport {
        trainable_parameters: ck.params.count(true),
        components,
        epoch: ck.epoch,
        dev_joint_goal: ck.dev_joint_goal,
        dev_turn_request: ck.dev_turn_request,
        d_u: model_cfg.dims.d_u(&model_cfg.ablation),
    };
    if json {
        println!("{}", json_line(&report));
        return Ok(());
    }
    println!("checkpoint: {}", path.display());
    println!("epoch: {}  dev joint goal: {:.4}  dev turn request: {:.4}", report.epoch, report.dev_joint_goal, report.dev_turn_request);
    println!("utterance feature width: {}", report.d_u);
    let width = report.components.keys().map(String::len).max().unwrap_or(0);
    for (name, n) in &report.components {
        println!("  {name:<width$}  {n:>9}");
    }
    println!("trainable parameters: {}", report.trainable_parameters);
    Ok(())
}

pub fn cmd_synth(dir: &Path, seed: u64, n_dialogues: usize, spec: OntologySpec, dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidInput("--dim must be positive".into()));
    }
    let (dialogues, ontology) = generate_synthetic_corpus(seed, n_dialogues, &spec)?;
    let corpus = Corpus::new(dialogues, ontology)?;
    corpus.write_native(dir)?;
    let vocab: BTreeSet<String> = vocabulary(&corpus.dialogues, &corpus.ontology).into_iter().collect();
    let words: Vec<String> = vocab.into_iter().collect();
    EmbeddingTable::random(&words, dim, seed).write_glove(&dir.join(crate::config::DEFAULT_EMBEDDINGS_FILE))?;
    for (split, n, turns) in corpus.split_sizes() {
        eprintln!("{split}: {n} dialogues, {turns} turns");
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}
