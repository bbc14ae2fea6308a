//! `coalition-scope`: batch driver for corpus generation, agreement
//! detection, value learning, agreement scoring and evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use coalition_core::corpus::log::game_log_string;
use coalition_core::corpus::{dataset_stats, generate_game, Corpus, CorpusConfig};
use coalition_core::detection::{detect_corpus, observe_tuples, read_detections, train_on_split, write_detections};
use coalition_core::equilibrium::{TrainValuesConfig, ValueMode};
use coalition_core::evaluation::{
    detected_cases, detection_scores, labeled_cases, run_ranking_experiment, write_case_rows, AgreementSource,
    ValueBaseline,
};
use coalition_core::http::JsonClient;
use coalition_core::intent::RemoteIntent;
use coalition_core::mentions::{Lexicon, MentionSource};
use coalition_core::rationalizability::ValueNormalization;
use coalition_core::seed::derive_seed_str;
use coalition_core::{
    load_map, score_agreement_set, train_values, Agreement, CoalitionStructure, EquilibriumConfig, ExperimentConfig,
    IntentBackend, IntentTable, LogisticModel, MapGraph, Power, ScoredAgreement, ScoringConfig, TrainConfig,
    ValueFunction,
};

#[derive(Parser)]
#[command(
    name = "coalition-scope",
    version,
    about = "Coalition structure prediction for negotiation games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one scripted game and write its log.
    Simulate(SimulateArgs),
    /// Generate a labeled corpus of scripted games.
    GenCorpus(GenCorpusArgs),
    /// Train the agreement classifier on a corpus's train split.
    TrainDetector(TrainDetectorArgs),
    /// Learn a value function by self-play.
    TrainValues(TrainValuesArgs),
    /// Run the detector over every talking pair of a corpus.
    Detect(DetectArgs),
    /// Score detected agreements per game, round and pair.
    Score(ScoreArgs),
    /// Rank agreements among alternatives and report metrics.
    Evaluate(EvaluateArgs),
    /// Write scored agreements as DOT coalition graphs.
    ExportGraph(ExportGraphArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    map: PathBuf,
    /// Log file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    honesty: f64,
    #[arg(long, default_value_t = 8)]
    rounds: u32,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    games: usize,
    #[arg(long, default_value_t = 0.75)]
    honesty: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    rounds: u32,
    /// Fraction of tuples in the train split.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Heuristic,
    Table,
    Remote,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Heuristic)]
    backend: BackendKind,
    /// Intent service URL for the remote backend.
    #[arg(long, env = "COALITION_SCOPE_ENDPOINT")]
    endpoint: Option<String>,
    /// Intent table file for the table backend.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Mention annotator URL; the gazetteer is used when absent or failing.
    #[arg(long)]
    annotator: Option<String>,
}

#[derive(Args)]
struct EquilibriumArgs {
    /// Candidate assignments per participating power.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Proposal draws per power.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
}

impl EquilibriumArgs {
    fn config(&self) -> EquilibriumConfig {
        EquilibriumConfig {
            k: self.k,
            samples: self.samples,
            iters: self.iters,
            gamma: self.gamma,
            beta: self.beta,
            ..EquilibriumConfig::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Normalization {
    Raw,
    MinMax,
}

impl From<Normalization> for ValueNormalization {
    fn from(n: Normalization) -> Self {
        match n {
            Normalization::Raw => ValueNormalization::Raw,
            Normalization::MinMax => ValueNormalization::MinMax,
        }
    }
}

#[derive(Args)]
struct TrainDetectorArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Train on every tuple instead of only those passing the filter.
    #[arg(long)]
    unfiltered: bool,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-3)]
    l2: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Linear,
    Tabular,
}

#[derive(Args)]
struct TrainValuesArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 6)]
    horizon: u32,
    #[arg(long, value_enum, default_value_t = Mode::Linear)]
    mode: Mode,
    #[command(flatten)]
    equilibrium: EquilibriumArgs,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Value-function file; supply-center share when absent.
    #[arg(long)]
    values: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Normalization::Raw)]
    normalization: Normalization,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    equilibrium: EquilibriumArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Sum,
    Product,
    Initiator,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Rank detected agreements instead of the labeled ones.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    values: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-case CSV rows.
    #[arg(long)]
    rows: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k_alts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Normalization::Raw)]
    normalization: Normalization,
    #[arg(long, value_enum, default_value_t = Baseline::Sum)]
    baseline: Baseline,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    equilibrium: EquilibriumArgs,
}

#[derive(Args)]
struct ExportGraphArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Scored agreements of one game, round and pair.
#[derive(Debug, Serialize, Deserialize)]
struct ScoredSet {
    game_id: String,
    round: u32,
    power_i: Power,
    power_j: Power,
    candidates: Vec<ScoredAgreement>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreReport {
    seed: u64,
    config: ScoringConfig,
    sets: Vec<ScoredSet>,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<coalition_core::Error> for Failure {
    fn from(e: coalition_core::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn read_input(flag: &str, path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{flag} {}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &str) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_map_file(path: &Path) -> Outcome<MapGraph> {
    let text = read_input("--map", path)?;
    load_map(&text).map_err(|e| Failure::Validation(format!("--map {}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Outcome<Corpus> {
    if !path.is_dir() {
        return Err(Failure::Validation(format!(
            "--corpus {}: not a directory",
            path.display()
        )));
    }
    Corpus::load(path).map_err(|e| Failure::Validation(format!("--corpus {}: {e}", path.display())))
}

fn build_backend(args: &BackendArgs, map: &MapGraph) -> Outcome<(IntentBackend, MentionSource)> {
    let backend = match args.backend {
        BackendKind::Heuristic => IntentBackend::heuristic(map),
        BackendKind::Table => {
            let path = args
                .table
                .as_ref()
                .ok_or_else(|| Failure::Validation("--table is required with --backend table".into()))?;
            let text = read_input("--table", path)?;
            IntentBackend::Table(
                IntentTable::from_json(&text)
                    .map_err(|e| Failure::Validation(format!("--table {}: {e}", path.display())))?,
            )
        }
        BackendKind::Remote => {
            let endpoint = args.endpoint.as_ref().ok_or_else(|| {
                Failure::Validation("--endpoint (or COALITION_SCOPE_ENDPOINT) is required with --backend remote".into())
            })?;
            IntentBackend::Remote(RemoteIntent {
                client: JsonClient::new(endpoint),
                fallback: None,
            })
        }
    };
    let lexicon = Lexicon::from_map(map);
    let mentions = match &args.annotator {
        Some(url) => MentionSource::Remote {
            client: JsonClient::new(url),
            lexicon,
        },
        None => MentionSource::Lexicon(lexicon),
    };
    Ok((backend, mentions))
}

fn load_values(path: Option<&PathBuf>, map: &MapGraph, gamma: f64) -> Outcome<ValueFunction> {
    let Some(path) = path else {
        return Ok(ValueFunction::sc_share(map, gamma));
    };
    let text = read_input("--values", path)?;
    let vf = ValueFunction::from_json(&text)
        .map_err(|e| Failure::Validation(format!("--values {}: {e}", path.display())))?;
    vf.check_map(map)
        .map_err(|e| Failure::Validation(format!("--values {}: {e}", path.display())))?;
    Ok(vf)
}

fn to_json<T: Serialize>(value: &T) -> Outcome<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn simulate(args: SimulateArgs) -> Outcome<()> {
    let map = load_map_file(&args.map)?;
    let mut config = CorpusConfig::new(1, args.honesty, args.seed);
    config.rounds = args.rounds;
    let (log, agreements) = generate_game(&map, 0, &config)?;
    let text = game_log_string(&log)?;
    match &args.out {
        Some(path) => write_output(path, &text)?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Runtime(e.to_string()))?,
    }
    eprintln!("{} rounds, {} agreements", log.play.len(), agreements.len());
    Ok(())
}

fn gen_corpus(args: GenCorpusArgs) -> Outcome<()> {
    let map = load_map_file(&args.map)?;
    if args.games == 0 {
        return Err(Failure::Validation("--games must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&args.honesty) {
        return Err(Failure::Validation("--honesty must lie in [0, 1]".into()));
    }
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(Failure::Validation("--split must lie in (0, 1)".into()));
    }
    let config = CorpusConfig {
        n_games: args.games,
        honesty: args.honesty,
        seed: args.seed,
        rounds: args.rounds,
        split_ratio: args.split,
    };
    let corpus = coalition_core::generate_labeled_corpus(&map, &config)?;
    corpus.save(&args.out)?;
    match dataset_stats(&corpus.tuples) {
        Ok(s) => eprintln!(
            "{} games, {} tuples, {} positive ({:.3})",
            corpus.games.len(),
            s.n,
            s.positives,
            s.positive_rate
        ),
        Err(_) => eprintln!("{} games, no tuples", corpus.games.len()),
    }
    Ok(())
}

fn train_detector(args: TrainDetectorArgs) -> Outcome<()> {
    let corpus = load_corpus(&args.corpus)?;
    let (backend, mentions) = build_backend(&args.backend, &corpus.map)?;
    let config = TrainConfig {
        learning_rate: args.learning_rate,
        iterations: args.epochs,
        l2: args.l2,
    };
    let observations = observe_tuples(&corpus, &corpus.tuples, &backend, &mentions)?;
    let model = train_on_split(&corpus.tuples, &observations, !args.unfiltered, &config)?;
    write_output(&args.out, &(model.to_json()? + "\n"))?;
    eprintln!("threshold {:.2}", model.threshold);
    Ok(())
}

fn train_values_cmd(args: TrainValuesArgs) -> Outcome<()> {
    let map = load_map_file(&args.map)?;
    let config = TrainValuesConfig {
        episodes: args.episodes,
        horizon: args.horizon,
        mode: match args.mode {
            Mode::Linear => ValueMode::Linear,
            Mode::Tabular => ValueMode::Tabular,
        },
        equilibrium: args.equilibrium.config(),
    };
    let vf = train_values(&map, &config, args.seed)?;
    write_output(&args.out, &(vf.to_json()? + "\n"))
}

fn detect_cmd(args: DetectArgs) -> Outcome<()> {
    let corpus = load_corpus(&args.corpus)?;
    let text = read_input("--model", &args.model)?;
    let model = LogisticModel::from_json(&text)
        .map_err(|e| Failure::Validation(format!("--model {}: {e}", args.model.display())))?;
    let (backend, mentions) = build_backend(&args.backend, &corpus.map)?;
    let records = detect_corpus(&corpus, &backend, &model, &mentions)?;
    let mut buf = Vec::new();
    write_detections(&records, &mut buf)?;
    write_output(&args.out, &String::from_utf8_lossy(&buf))?;
    let positives = records.iter().filter(|r| r.result.label).count();
    let failed = records.iter().filter(|r| r.result.error.is_some()).count();
    eprintln!("{} units, {positives} positive, {failed} failed", records.len());
    Ok(())
}

fn score_cmd(args: ScoreArgs) -> Outcome<()> {
    let corpus = load_corpus(&args.corpus)?;
    let text = read_input("--detections", &args.detections)?;
    let records = read_detections(&text)?;
    let eq = args.equilibrium.config();
    eq.validate()?;
    let vf = load_values(args.values.as_ref(), &corpus.map, eq.gamma)?;
    let (backend, _) = build_backend(&args.backend, &corpus.map)?;
    let config = ScoringConfig {
        equilibrium: eq,
        normalization: args.normalization.into(),
    };
    let mut groups: BTreeMap<(String, u32, Power, Power), Vec<Agreement>> = BTreeMap::new();
    for case in detected_cases(&corpus, &records)? {
        let a = case.agreement;
        groups
            .entry((case.game_id, a.round, a.power_i.clone(), a.power_j.clone()))
            .or_default()
            .push(a);
    }
    let mut sets = Vec::with_capacity(groups.len());
    for ((game_id, round, power_i, power_j), agreements) in groups {
        let game = corpus
            .game(&game_id)
            .ok_or_else(|| Failure::Validation(format!("--detections: unknown game {game_id}")))?;
        let idx = game
            .play
            .rounds
            .iter()
            .position(|r| r.state.round == round)
            .ok_or_else(|| Failure::Validation(format!("--detections: {game_id} has no round {round}")))?;
        let prefix = game.play.prefix(idx)?;
        let seed = derive_seed_str(args.seed, &format!("{game_id}|{round}|{power_i}|{power_j}"));
        let candidates = score_agreement_set(&corpus.map, &prefix, &agreements, &vf, &backend, &config, seed)?;
        sets.push(ScoredSet {
            game_id,
            round,
            power_i,
            power_j,
            candidates,
        });
    }
    let n: usize = sets.iter().map(|s| s.candidates.len()).sum();
    let report = ScoreReport {
        seed: args.seed,
        config,
        sets,
    };
    write_output(&args.out, &to_json(&report)?)?;
    eprintln!("{n} agreements scored in {} sets", report.sets.len());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Outcome<()> {
    let corpus = load_corpus(&args.corpus)?;
    let records = match &args.detections {
        Some(path) => Some(read_detections(&read_input("--detections", path)?)?),
        None => None,
    };
    let eq = args.equilibrium.config();
    eq.validate()?;
    let vf = load_values(args.values.as_ref(), &corpus.map, eq.gamma)?;
    let (backend, _) = build_backend(&args.backend, &corpus.map)?;
    let config = ExperimentConfig {
        k_alternatives: args.k_alts,
        scoring: ScoringConfig {
            equilibrium: eq,
            normalization: args.normalization.into(),
        },
        baseline: match args.baseline {
            Baseline::Sum => ValueBaseline::Sum,
            Baseline::Product => ValueBaseline::Product,
            Baseline::Initiator => ValueBaseline::Initiator,
        },
        seed: args.seed,
    };
    let (source, cases) = match &records {
        Some(r) => (AgreementSource::Detected, detected_cases(&corpus, r)?),
        None => (AgreementSource::Labeled, labeled_cases(&corpus)?),
    };
    let (mut report, rows) = run_ranking_experiment(&corpus, source, &cases, &vf, &backend, &config)?;
    if let Some(r) = &records {
        report.detection = Some(detection_scores(&corpus, r)?);
    }
    write_output(&args.out, &(report.to_json()? + "\n"))?;
    if let Some(path) = &args.rows {
        let mut buf = Vec::new();
        write_case_rows(&rows, &mut buf)?;
        write_output(path, &String::from_utf8_lossy(&buf))?;
    }
    eprintln!(
        "{} cases ({} honored, {} violated)",
        report.cases, report.honored, report.violated
    );
    Ok(())
}

fn export_graph(args: ExportGraphArgs) -> Outcome<()> {
    let corpus = load_corpus(&args.corpus)?;
    let text = read_input("--scores", &args.scores)?;
    let report: ScoreReport = serde_json::from_str(&text)
        .map_err(|e| Failure::Validation(format!("--scores {}: {e}", args.scores.display())))?;
    let mut structures: BTreeMap<(String, u32), CoalitionStructure> = BTreeMap::new();
    for set in &report.sets {
        let game = corpus
            .game(&set.game_id)
            .ok_or_else(|| Failure::Validation(format!("--scores: unknown game {}", set.game_id)))?;
        let state = &game
            .play
            .rounds
            .iter()
            .find(|r| r.state.round == set.round)
            .ok_or_else(|| Failure::Validation(format!("--scores: {} has no round {}", set.game_id, set.round)))?
            .state;
        let mut g = structures
            .remove(&(set.game_id.clone(), set.round))
            .unwrap_or_else(|| CoalitionStructure::new(&corpus.map, state));
        for c in &set.candidates {
            g = g.add_agreement(&c.agreement)?.set_weight(&c.agreement, c.wt)?;
        }
        structures.insert((set.game_id.clone(), set.round), g);
    }
    let mut out = String::new();
    for ((game_id, round), g) in &structures {
        out.push_str(&g.export_dot(&format!("{game_id} round {round}")));
    }
    write_output(&args.out, &out)?;
    let edges: usize = structures.values().map(|g| g.len()).sum();
    eprintln!("{} graphs, {edges} edges", structures.len());
    Ok(())
}

fn run(command: Command) -> Outcome<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::GenCorpus(a) => gen_corpus(a),
        Command::TrainDetector(a) => train_detector(a),
        Command::TrainValues(a) => train_values_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ExportGraph(a) => export_graph(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
