use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use wxhome::data::{load_observations, load_stations, write_atomic};
use wxhome::estimator::MissingPolicy;
use wxhome::eval::{evaluate, Denominator};
use wxhome::lexicon::WeatherLexicon;
use wxhome::output::{load_records, save_records, to_estimation_result, Method};
use wxhome::pipeline::{load_truth, truth_to_csv, Corpus, PreprocessSummary, Split};
use wxhome::synth::{self, SynthConfig};
use wxhome::workflow::{self, Estimator, Inputs, RunConfig};
use wxhome::{Error, Result};

#[derive(Parser)]
#[command(
    name = "wxhome",
    about = "Estimate users' home stations from weather-bearing messages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world (stations, observations, messages, truth).
    Synth(SynthArgs),
    /// Geographic, date and weather-word filtering of raw messages.
    Preprocess(PreprocessArgs),
    /// Rank weather-word candidates by PMI and write the lexicon.
    Lexicon(LexiconArgs),
    /// Train the rain/no-rain classifier on a labelled corpus.
    Train(TrainArgs),
    /// Rank candidate home stations for every user in a corpus.
    Estimate(EstimateArgs),
    /// Precision@k over a sweep of correct distances.
    Evaluate(EvaluateArgs),
    /// All stages with a seeded per-user train/test split.
    Pipeline(Box<PipelineArgs>),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML world configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration. Flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InputArgs {
    /// Directory written by `synth`; supplies stations, observations and messages.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    stations: Option<PathBuf>,
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long)]
    messages: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessKnobs {
    #[arg(long)]
    bot_sources: Option<PathBuf>,
    /// Skip malformed message lines instead of failing.
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    radius_km: Option<f64>,
    /// Local time offset from UTC in minutes.
    #[arg(long, allow_negative_numbers = true)]
    utc_offset: Option<i32>,
    #[arg(long)]
    min_messages: Option<usize>,
    #[arg(long)]
    home_threshold: Option<f64>,
    /// Assign home truth before weather-word filtering.
    #[arg(long)]
    truth_before_lexicon: bool,
}

#[derive(Args)]
struct LexiconKnobs {
    #[arg(long)]
    min_freq: Option<u64>,
    #[arg(long)]
    min_users: Option<u64>,
    #[arg(long)]
    top: Option<usize>,
    /// Without curated lists, keep candidates whose PMI exceeds this.
    #[arg(long, allow_negative_numbers = true)]
    auto_min_pmi: Option<f64>,
    #[arg(long)]
    curated_rain: Option<PathBuf>,
    #[arg(long)]
    curated_norain: Option<PathBuf>,
}

#[derive(Args)]
struct TrainKnobs {
    /// SVM cost parameter C.
    #[arg(long)]
    cost: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Weight the cost of each class by its inverse frequency.
    #[arg(long)]
    balanced: bool,
}

#[derive(Args)]
struct EstimateKnobs {
    #[arg(long, value_enum)]
    missing_policy: Option<PolicyArg>,
    /// Keep only the top k stations per user in the output.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args)]
struct EvalKnobs {
    /// Ranks to evaluate, comma separated.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Correct-distance sweep as start:stop:step in km.
    #[arg(long)]
    d_sweep: Option<String>,
    #[arg(long)]
    prefecture_k: Option<usize>,
    #[arg(long)]
    prefecture_d: Option<f64>,
    #[arg(long, value_enum)]
    denominator: Option<DenominatorArg>,
}

#[derive(Args)]
struct SplitArgs {
    /// Restrict the input corpus to one side of the per-user split.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Strict,
    AllowMissing,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenominatorArg {
    AllUsers,
    PerGroup,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Weather,
    BaselineA,
    BaselineB,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    knobs: PreprocessKnobs,
    /// Lexicon directory; when given, also filter by weather words and assign home truth.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LexiconArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    knobs: LexiconKnobs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    knobs: TrainKnobs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    knobs: EstimateKnobs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Weather)]
    method: MethodArg,
    /// Model directory from `train` (weather method).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Corpus the baselines fit their per-area word model on.
    #[arg(long)]
    fit_corpus: Option<PathBuf>,
    /// Users to estimate.
    #[arg(long)]
    corpus: PathBuf,
    /// Output JSONL file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    knobs: EvalKnobs,
    #[arg(long)]
    estimates: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    stations: Option<PathBuf>,
    #[arg(long)]
    world: Option<PathBuf>,
    /// Report directory. Without it the sweep CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    pre: PreprocessKnobs,
    #[command(flatten)]
    lex: LexiconKnobs,
    #[command(flatten)]
    train: TrainKnobs,
    #[command(flatten)]
    est: EstimateKnobs,
    #[command(flatten)]
    eval: EvalKnobs,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::from_toml(&read(p)?)?,
            None => RunConfig::default(),
        };
        set(&mut config.seed, &self.seed);
        Ok(config)
    }
}

impl InputArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(w) = &self.world {
            *c = std::mem::take(c).with_world(w);
        }
        for (slot, v) in [
            (&mut c.stations, &self.stations),
            (&mut c.observations, &self.observations),
            (&mut c.messages, &self.messages),
        ] {
            if v.is_some() {
                *slot = v.clone();
            }
        }
    }
}

impl PreprocessKnobs {
    fn apply(&self, c: &mut RunConfig) {
        if self.bot_sources.is_some() {
            c.bot_sources = self.bot_sources.clone();
        }
        c.lenient |= self.lenient;
        c.truth_before_lexicon |= self.truth_before_lexicon;
        set(&mut c.radius_km, &self.radius_km);
        set(&mut c.utc_offset, &self.utc_offset);
        set(&mut c.min_messages, &self.min_messages);
        set(&mut c.home_threshold, &self.home_threshold);
    }
}

impl LexiconKnobs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.min_freq, &self.min_freq);
        set(&mut c.min_users, &self.min_users);
        set(&mut c.top, &self.top);
        set(&mut c.auto_min_pmi, &self.auto_min_pmi);
        if self.curated_rain.is_some() {
            c.curated_rain = self.curated_rain.clone();
        }
        if self.curated_norain.is_some() {
            c.curated_norain = self.curated_norain.clone();
        }
    }
}

impl TrainKnobs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.cost, &self.cost);
        set(&mut c.tol, &self.tol);
        set(&mut c.max_iter, &self.max_iter);
        c.balanced |= self.balanced;
    }
}

impl EstimateKnobs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(p) = self.missing_policy {
            c.missing_policy = match p {
                PolicyArg::Strict => MissingPolicy::Strict,
                PolicyArg::AllowMissing => MissingPolicy::AllowMissing,
            };
        }
        if self.top_k.is_some() {
            c.top_k_output = self.top_k;
        }
    }
}

impl EvalKnobs {
    fn apply(&self, c: &mut RunConfig) {
        if !self.k.is_empty() {
            c.k_values = self.k.clone();
        }
        set(&mut c.d_sweep, &self.d_sweep);
        set(&mut c.prefecture_k, &self.prefecture_k);
        set(&mut c.prefecture_d, &self.prefecture_d);
        if let Some(d) = self.denominator {
            c.denominator = match d {
                DenominatorArg::AllUsers => Denominator::AllUsers,
                DenominatorArg::PerGroup => Denominator::PerGroup,
            };
        }
    }
}

impl SplitArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.train_fraction, &self.train_fraction);
    }

    fn select(&self, c: &RunConfig, corpus: Corpus) -> Corpus {
        let want = match self.split {
            SplitArg::All => return corpus,
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        };
        corpus.filter(|m| c.split_of(&m.user_id) == want)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => SynthConfig::from_toml(&read(p)?)?,
        None => SynthConfig::default(),
    };
    let world = synth::generate(&config, a.seed)?;
    world.write(&a.out)?;
    println!(
        "synth: {} stations, {} observations, {} messages, {} users -> {}",
        world.stations.len(),
        world.observations.len(),
        world.messages.len(),
        world.truth.len(),
        a.out.display()
    );
    Ok(())
}

fn run_preprocess(a: PreprocessArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.input.apply(&mut config);
    a.knobs.apply(&mut config);
    config.validate()?;
    let inputs = workflow::load_inputs(&config)?;
    let mut summary = PreprocessSummary::default();
    let corpus_a = workflow::phase_a(&config, &inputs, &mut summary)?;
    corpus_a.save(a.out.join("corpus_phase_a.jsonl"))?;
    let mut tail = String::new();
    if let Some(dir) = &a.lexicon {
        let lexicon = WeatherLexicon::load(dir)?;
        let (truth, corpus) = workflow::finish_corpus(&config, &corpus_a, &lexicon, &mut summary);
        corpus.save(a.out.join("corpus.jsonl"))?;
        write_atomic(&a.out.join("truth.csv"), &truth_to_csv(&truth))?;
        tail = format!(
            ", {} final messages from {} users with a home",
            corpus.len(),
            truth.len()
        );
    }
    workflow::write_json(&a.out.join("preprocess_summary.json"), &summary)?;
    println!(
        "preprocess: {} input messages, {} kept after geo/date filtering{tail}",
        summary.input, summary.phase_a_kept
    );
    Ok(())
}

fn run_lexicon(a: LexiconArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.knobs.apply(&mut config);
    a.split.apply(&mut config);
    config.validate()?;
    let corpus = a.split.select(&config, Corpus::load(&a.corpus)?);
    let built = workflow::lexicon_from_corpus(&config, &corpus)?;
    built.save(&a.out)?;
    println!(
        "lexicon: {} rain and {} no-rain words from {} messages",
        built.lexicon.rain_words().len(),
        built.lexicon.norain_words().len(),
        corpus.len()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.knobs.apply(&mut config);
    a.split.apply(&mut config);
    config.validate()?;
    let corpus = a.split.select(&config, Corpus::load(&a.corpus)?);
    let (vocab, model) = workflow::train_on(&config, &corpus)?;
    workflow::save_model(&a.out, &vocab, &model)?;
    let meta = model.meta();
    println!(
        "train: {} messages, {} features, {} epochs, {}",
        corpus.len(),
        vocab.len(),
        meta.iterations,
        if meta.converged {
            "converged"
        } else {
            "not converged"
        }
    );
    Ok(())
}

fn load_station_inputs(config: &RunConfig) -> Result<Inputs> {
    let stations = config
        .stations
        .as_ref()
        .ok_or_else(|| Error::Config("no stations file given".into()))?;
    let observations = config
        .observations
        .as_ref()
        .ok_or_else(|| Error::Config("no observations file given".into()))?;
    let stations = load_stations(stations)?;
    let observations = load_observations(observations, &stations)?;
    Ok(Inputs {
        stations,
        observations,
    })
}

fn run_estimate(a: EstimateArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.input.apply(&mut config);
    a.knobs.apply(&mut config);
    a.split.apply(&mut config);
    config.validate()?;
    let inputs = load_station_inputs(&config)?;
    let targets = a.split.select(&config, Corpus::load(&a.corpus)?);
    let method = match a.method {
        MethodArg::Weather => Method::Weather,
        MethodArg::BaselineA => Method::BaselineA,
        MethodArg::BaselineB => Method::BaselineB,
    };
    let records = match method {
        Method::Weather => {
            let dir = a
                .model
                .as_ref()
                .ok_or_else(|| Error::Config("the weather method needs --model".into()))?;
            let (vocab, model) = workflow::load_model(dir)?;
            let est = Estimator::Weather {
                vocab: &vocab,
                model: &model,
            };
            workflow::estimate_users(
                &est,
                &targets,
                &inputs,
                config.missing_policy,
                config.top_k_output,
            )?
        }
        _ => {
            let path = a
                .fit_corpus
                .as_ref()
                .ok_or_else(|| Error::Config("baselines need --fit-corpus".into()))?;
            let fit = Corpus::load(path)?;
            let est = Estimator::Baseline { method, fit: &fit };
            workflow::estimate_users(
                &est,
                &targets,
                &inputs,
                config.missing_policy,
                config.top_k_output,
            )?
        }
    };
    save_records(&a.out, &records)?;
    println!(
        "estimate: {method} ranked stations for {} users -> {}",
        records.len(),
        a.out.display()
    );
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.knobs.apply(&mut config);
    config.validate()?;
    let stations_path = match (&a.stations, &a.world) {
        (Some(p), _) => p.clone(),
        (None, Some(w)) => w.join(synth::STATIONS_FILE),
        (None, None) => return Err(Error::Config("evaluate needs --stations or --world".into())),
    };
    let stations = load_stations(&stations_path)?;
    let truth = load_truth(&a.truth)?;
    let results = to_estimation_result(&load_records(&a.estimates)?);
    let report = evaluate(&results, &truth, &stations, &config.eval_params()?)?;
    match &a.out {
        Some(dir) => {
            workflow::save_report(dir, &report)?;
            let first = &report.sweep[0];
            println!(
                "evaluate: {} users, P@{} d={} km = {:.4}, macro average {:.4} -> {}",
                report.users,
                first.k,
                first.d,
                first.precision,
                report.by_prefecture.macro_average,
                dir.display()
            );
        }
        None => print!("{}", report.sweep_csv()),
    }
    Ok(())
}

fn run_pipeline(a: PipelineArgs) -> Result<()> {
    let mut config = a.common.load()?;
    a.input.apply(&mut config);
    a.pre.apply(&mut config);
    a.lex.apply(&mut config);
    a.train.apply(&mut config);
    a.est.apply(&mut config);
    a.eval.apply(&mut config);
    set(&mut config.train_fraction, &a.train_fraction);
    let outcome = workflow::run_pipeline(&config, &a.out)?;
    let s = &outcome.summary;
    let scores: Vec<String> = s
        .methods
        .iter()
        .map(|(m, v)| format!("{m} {:.4}", v.precision_at_1_d10))
        .collect();
    println!(
        "pipeline: {} train / {} test users, P@1 d=10 km: {} -> {}",
        s.train_users,
        s.test_users,
        scores.join(", "),
        a.out.display()
    );
    Ok(())
}

fn version() -> &'static str {
    let text = format!(
        "{} (model format \"{}\", world format \"{}\")",
        env!("CARGO_PKG_VERSION"),
        wxhome::svm::MODEL_FORMAT,
        synth::WORLD_FORMAT
    );
    Box::leak(text.into_boxed_str())
}

fn main() -> ExitCode {
    let matches = match Cli::command().version(version()).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Preprocess(a) => run_preprocess(a),
        Command::Lexicon(a) => run_lexicon(a),
        Command::Train(a) => run_train(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Pipeline(a) => run_pipeline(*a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wxhome: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
