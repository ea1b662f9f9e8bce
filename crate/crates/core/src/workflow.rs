//! File-level stages and the end-to-end run used by the command-line tool.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_a_rank, baseline_b_rank, fit_area_word_model};
use crate::data::{
    load_messages, load_observations, load_stations, write_atomic, ObservationTable, ParseMode,
    UtcOffset,
};
use crate::error::{Error, Result};
use crate::estimator::{rank_areas, MissingPolicy};
use crate::eval::{evaluate, parse_sweep, Denominator, EvalParams, EvalReport};
use crate::features::{build_vocabulary, vectorize, Vocabulary};
use crate::geo::StationIndex;
use crate::lexicon::{
    build_lexicon, candidates_to_csv, count_statistics, load_word_list, select_candidates,
    Candidate, CandidateParams, WeatherLexicon,
};
use crate::output::{save_records, to_estimation_result, EstimateRecord, EstimationResult, Method};
use crate::pipeline::{
    assign_home_truth, preprocess_phase_a, preprocess_phase_b, truth_to_csv, user_split, Corpus,
    HomeRule, HomeTruth, PhaseAParams, PreprocessSummary, Split,
};
use crate::svm::{train, LinearModel, TrainParams};
use crate::synth;

/// Every knob of a run, with the reference parameter values as defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stations: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub messages: Option<PathBuf>,
    pub bot_sources: Option<PathBuf>,
    pub curated_rain: Option<PathBuf>,
    pub curated_norain: Option<PathBuf>,
    pub lenient: bool,

    pub radius_km: f64,
    pub utc_offset: i32,

    pub min_freq: u64,
    pub min_users: u64,
    pub top: usize,
    pub auto_min_pmi: f64,

    pub min_messages: usize,
    pub home_threshold: f64,
    pub truth_before_lexicon: bool,

    pub cost: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub balanced: bool,

    pub train_fraction: f64,
    pub missing_policy: MissingPolicy,
    pub top_k_output: Option<usize>,

    pub k_values: Vec<usize>,
    pub d_sweep: String,
    pub prefecture_k: usize,
    pub prefecture_d: f64,
    pub denominator: Denominator,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stations: None,
            observations: None,
            messages: None,
            bot_sources: None,
            curated_rain: None,
            curated_norain: None,
            lenient: false,
            radius_km: 10.0,
            utc_offset: UtcOffset::JST.minutes(),
            min_freq: 10,
            min_users: 10,
            top: 2000,
            auto_min_pmi: 0.0,
            min_messages: 10,
            home_threshold: 0.9,
            truth_before_lexicon: false,
            cost: 0.025,
            tol: 1e-3,
            max_iter: 1000,
            balanced: false,
            train_fraction: 0.8,
            missing_policy: MissingPolicy::Strict,
            top_k_output: None,
            k_values: vec![1, 3, 5],
            d_sweep: "10:160:10".into(),
            prefecture_k: 1,
            prefecture_d: 10.0,
            denominator: Denominator::AllUsers,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Points the input paths at a directory written by the synthetic generator.
    pub fn with_world(mut self, dir: &Path) -> Self {
        self.stations = Some(dir.join(synth::STATIONS_FILE));
        self.observations = Some(dir.join(synth::OBSERVATIONS_FILE));
        self.messages = Some(dir.join(synth::MESSAGES_FILE));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.radius_km > 0.0) {
            return fail(format!(
                "radius_km must be positive, got {}",
                self.radius_km
            ));
        }
        UtcOffset::from_minutes(self.utc_offset)?;
        if !(self.cost > 0.0 && self.tol > 0.0) {
            return fail("cost and tol must be positive".into());
        }
        if self.max_iter == 0 || self.top == 0 {
            return fail("max_iter and top must be positive".into());
        }
        if !(self.home_threshold > 0.0 && self.home_threshold <= 1.0) {
            return fail("home_threshold must be in (0, 1]".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must be in (0, 1)".into());
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) || self.prefecture_k == 0 {
            return fail("k values must be at least 1".into());
        }
        if !(self.prefecture_d > 0.0) {
            return fail("prefecture_d must be positive".into());
        }
        parse_sweep(&self.d_sweep)?;
        Ok(())
    }

    fn input(&self, path: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::Config(format!("no {name} file given")))
    }

    pub fn phase_a_params(&self) -> Result<PhaseAParams> {
        let bot_sources = match &self.bot_sources {
            Some(p) => load_word_list(p)?,
            None => BTreeSet::new(),
        };
        Ok(PhaseAParams {
            radius_km: self.radius_km,
            bot_sources,
            offset: UtcOffset::from_minutes(self.utc_offset)?,
        })
    }

    pub fn candidate_params(&self) -> CandidateParams {
        CandidateParams {
            min_freq: self.min_freq,
            min_users: self.min_users,
            top: self.top,
        }
    }

    pub fn home_rule(&self) -> HomeRule {
        HomeRule {
            min_messages: self.min_messages,
            threshold: self.home_threshold,
        }
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            cost: self.cost,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            balanced: self.balanced,
        }
    }

    pub fn eval_params(&self) -> Result<EvalParams> {
        Ok(EvalParams {
            k_values: self.k_values.clone(),
            d_values: parse_sweep(&self.d_sweep)?,
            prefecture_k: self.prefecture_k,
            prefecture_d: self.prefecture_d,
            denominator: self.denominator,
        })
    }

    pub fn split_of(&self, user: &str) -> Split {
        user_split(user, self.seed, self.train_fraction)
    }
}

pub struct Inputs {
    pub stations: StationIndex,
    pub observations: ObservationTable,
}

pub fn load_inputs(config: &RunConfig) -> Result<Inputs> {
    let stations = load_stations(config.input(&config.stations, "stations")?)?;
    let observations = load_observations(
        config.input(&config.observations, "observations")?,
        &stations,
    )?;
    Ok(Inputs {
        stations,
        observations,
    })
}

/// Loads messages and runs the first preprocessing phase.
pub fn phase_a(
    config: &RunConfig,
    inputs: &Inputs,
    summary: &mut PreprocessSummary,
) -> Result<Corpus> {
    let mode = if config.lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    };
    let loaded = load_messages(config.input(&config.messages, "messages")?, mode)?;
    summary.skipped_malformed += loaded.skipped;
    preprocess_phase_a(
        &loaded.messages,
        &inputs.stations,
        &inputs.observations,
        &config.phase_a_params()?,
        summary,
    )
}

pub struct LexiconBuild {
    pub lexicon: WeatherLexicon,
    pub rain_candidates: Vec<Candidate>,
    pub norain_candidates: Vec<Candidate>,
}

pub fn lexicon_from_corpus(config: &RunConfig, corpus: &Corpus) -> Result<LexiconBuild> {
    let table = count_statistics(corpus)?;
    let rain_candidates = select_candidates(&table, true, config.candidate_params());
    let norain_candidates = select_candidates(&table, false, config.candidate_params());
    let curated_rain = config
        .curated_rain
        .as_ref()
        .map(load_word_list)
        .transpose()?;
    let curated_norain = config
        .curated_norain
        .as_ref()
        .map(load_word_list)
        .transpose()?;
    let lexicon = build_lexicon(
        &rain_candidates,
        &norain_candidates,
        curated_rain.as_ref(),
        curated_norain.as_ref(),
        config.auto_min_pmi,
    )?;
    Ok(LexiconBuild {
        lexicon,
        rain_candidates,
        norain_candidates,
    })
}

pub const CANDIDATES_RAIN_FILE: &str = "candidates_rain.csv";
pub const CANDIDATES_NORAIN_FILE: &str = "candidates_norain.csv";

impl LexiconBuild {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(
            &dir.join(CANDIDATES_RAIN_FILE),
            &candidates_to_csv(&self.rain_candidates)?,
        )?;
        write_atomic(
            &dir.join(CANDIDATES_NORAIN_FILE),
            &candidates_to_csv(&self.norain_candidates)?,
        )?;
        self.lexicon.save(dir)
    }
}

/// Weather-word filtering plus home truth, in the configured order.
pub fn finish_corpus(
    config: &RunConfig,
    phase_a: &Corpus,
    lexicon: &WeatherLexicon,
    summary: &mut PreprocessSummary,
) -> (HomeTruth, Corpus) {
    if config.truth_before_lexicon {
        let (truth, kept) = assign_home_truth(phase_a, config.home_rule(), summary);
        let filtered = preprocess_phase_b(&kept, lexicon, summary);
        let truth = truth
            .into_iter()
            .filter(|(u, _)| filtered.messages().iter().any(|m| &m.user_id == u))
            .collect();
        summary.final_messages = filtered.len();
        (truth, filtered)
    } else {
        let filtered = preprocess_phase_b(phase_a, lexicon, summary);
        assign_home_truth(&filtered, config.home_rule(), summary)
    }
}

pub fn train_on(config: &RunConfig, corpus: &Corpus) -> Result<(Vocabulary, LinearModel)> {
    let vocab = build_vocabulary(corpus)?;
    let vectors: Vec<_> = corpus
        .messages()
        .iter()
        .map(|m| vectorize(&m.tokens, &vocab))
        .collect();
    let labels: Vec<bool> = corpus.messages().iter().map(|m| m.label).collect();
    let model = train(&vectors, &labels, config.train_params())?;
    Ok((vocab, model))
}

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_FILE: &str = "model.txt";

pub fn save_model(dir: &Path, vocab: &Vocabulary, model: &LinearModel) -> Result<()> {
    vocab.save(dir.join(VOCAB_FILE))?;
    model.save(dir.join(MODEL_FILE), vocab)
}

pub fn load_model(dir: &Path) -> Result<(Vocabulary, LinearModel)> {
    let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
    let model = LinearModel::load(dir.join(MODEL_FILE), &vocab)?;
    Ok((vocab, model))
}

/// What a method needs beyond the target users' messages.
pub enum Estimator<'a> {
    Weather {
        vocab: &'a Vocabulary,
        model: &'a LinearModel,
    },
    /// Baselines fit their per-area word model on this corpus.
    Baseline { method: Method, fit: &'a Corpus },
}

pub fn estimate_users(
    estimator: &Estimator<'_>,
    targets: &Corpus,
    inputs: &Inputs,
    policy: MissingPolicy,
    top_k: Option<usize>,
) -> Result<Vec<EstimateRecord>> {
    match estimator {
        Estimator::Weather { vocab, model } => targets
            .users()
            .map(|(user, msgs)| {
                let ranked = rank_areas(
                    msgs,
                    model,
                    vocab,
                    &inputs.observations,
                    &inputs.stations,
                    policy,
                )?;
                Ok(EstimateRecord::new(user, Method::Weather, &ranked, top_k))
            })
            .collect(),
        Estimator::Baseline { method, fit } => {
            let area_model = fit_area_word_model(fit, &inputs.stations);
            targets
                .users()
                .map(|(user, msgs)| match method {
                    Method::BaselineA => Ok(EstimateRecord::new(
                        user,
                        *method,
                        &baseline_a_rank(msgs, &area_model, &inputs.stations),
                        top_k,
                    )),
                    Method::BaselineB => Ok(EstimateRecord::new(
                        user,
                        *method,
                        &baseline_b_rank(msgs, &area_model, &inputs.stations),
                        top_k,
                    )),
                    Method::Weather => Err(Error::InvalidArgument(
                        "the weather method needs a model, not a fit corpus".into(),
                    )),
                })
                .collect()
        }
    }
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    write_atomic(path, &json)
}

pub fn save_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    write_atomic(&dir.join("sweep.csv"), report.sweep_csv().as_bytes())?;
    write_atomic(
        &dir.join("prefectures.csv"),
        report.prefecture_csv().as_bytes(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub precision_at_1_d10: f64,
    pub macro_average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preprocess: PreprocessSummary,
    pub rain_words: usize,
    pub norain_words: usize,
    pub vocabulary: usize,
    pub train_users: usize,
    pub train_messages: usize,
    pub test_users: usize,
    pub svm_iterations: usize,
    pub svm_converged: bool,
    pub methods: BTreeMap<Method, MethodSummary>,
}

pub struct RunOutcome {
    pub summary: RunSummary,
    pub truth: HomeTruth,
    pub estimates: BTreeMap<Method, EstimationResult>,
    pub reports: BTreeMap<Method, EvalReport>,
    pub inputs: Inputs,
}

/// Preprocess, select the lexicon, train on the training users, estimate and
/// evaluate the held-out users with all three methods, writing everything
/// under `out`.
pub fn run_pipeline(config: &RunConfig, out: &Path) -> Result<RunOutcome> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let mut pre = PreprocessSummary::default();
    let corpus_a = phase_a(config, &inputs, &mut pre)?;
    corpus_a.save(out.join("corpus_phase_a.jsonl"))?;

    // the lexicon only sees training users so held-out labels never leak in
    let lexicon_corpus = corpus_a.filter(|m| config.split_of(&m.user_id) == Split::Train);
    let lexicon = lexicon_from_corpus(config, &lexicon_corpus)?;
    lexicon.save(&out.join("lexicon"))?;

    let (truth, corpus) = finish_corpus(config, &corpus_a, &lexicon.lexicon, &mut pre);
    corpus.save(out.join("corpus.jsonl"))?;
    write_atomic(&out.join("truth.csv"), &truth_to_csv(&truth))?;
    write_json(&out.join("preprocess_summary.json"), &pre)?;

    let train_corpus = corpus.filter(|m| config.split_of(&m.user_id) == Split::Train);
    let test_corpus = corpus.filter(|m| config.split_of(&m.user_id) == Split::Test);
    if train_corpus.is_empty() || test_corpus.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "train/test split left {} training and {} test messages",
            train_corpus.len(),
            test_corpus.len()
        )));
    }
    let (vocab, model) = train_on(config, &train_corpus)?;
    save_model(&out.join("model"), &vocab, &model)?;

    let eval_params = config.eval_params()?;
    let mut estimates = BTreeMap::new();
    let mut reports = BTreeMap::new();
    let mut methods = BTreeMap::new();
    for method in Method::ALL {
        let estimator = match method {
            Method::Weather => Estimator::Weather {
                vocab: &vocab,
                model: &model,
            },
            _ => Estimator::Baseline {
                method,
                fit: &train_corpus,
            },
        };
        let records = estimate_users(
            &estimator,
            &test_corpus,
            &inputs,
            config.missing_policy,
            config.top_k_output,
        )?;
        save_records(
            out.join("estimates").join(format!("{method}.jsonl")),
            &records,
        )?;
        let result = to_estimation_result(&records);
        let report = evaluate(&result, &truth, &inputs.stations, &eval_params)?;
        save_report(&out.join("reports").join(method.name()), &report)?;
        methods.insert(
            method,
            MethodSummary {
                precision_at_1_d10: crate::eval::precision_at_k(
                    &result,
                    &truth,
                    &inputs.stations,
                    1,
                    10.0,
                )?,
                macro_average: report.by_prefecture.macro_average,
            },
        );
        estimates.insert(method, result);
        reports.insert(method, report);
    }

    let summary = RunSummary {
        preprocess: pre,
        rain_words: lexicon.lexicon.rain_words().len(),
        norain_words: lexicon.lexicon.norain_words().len(),
        vocabulary: vocab.len(),
        train_users: train_corpus.user_count(),
        train_messages: train_corpus.len(),
        test_users: test_corpus.user_count(),
        svm_iterations: model.meta().iterations,
        svm_converged: model.meta().converged,
        methods,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        summary,
        truth,
        estimates,
        reports,
        inputs,
    })
}
