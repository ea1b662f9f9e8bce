use std::fs;

use wxhome::output::{to_estimation_result, Method};
use wxhome::pipeline::{PreprocessSummary, Split};
use wxhome::synth::{self, SynthConfig};
use wxhome::workflow::{self, Estimator, RunConfig};

#[test]
fn staged_functions_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let world = synth::generate(
        &SynthConfig {
            n_users: 24,
            messages_per_user: 50,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    world.write(dir.path().join("world")).unwrap();
    let config = RunConfig {
        min_users: 4,
        seed: 1,
        ..RunConfig::default().with_world(&dir.path().join("world"))
    };
    let outcome = workflow::run_pipeline(&config, &dir.path().join("out")).unwrap();

    let inputs = workflow::load_inputs(&config).unwrap();
    let mut summary = PreprocessSummary::default();
    let corpus_a = workflow::phase_a(&config, &inputs, &mut summary).unwrap();
    let train_a = corpus_a.filter(|m| config.split_of(&m.user_id) == Split::Train);
    let lexicon = workflow::lexicon_from_corpus(&config, &train_a).unwrap();
    let (truth, corpus) = workflow::finish_corpus(&config, &corpus_a, &lexicon.lexicon, &mut summary);
    assert_eq!(truth, outcome.truth);
    assert_eq!(summary, outcome.summary.preprocess);

    let train = corpus.filter(|m| config.split_of(&m.user_id) == Split::Train);
    let test = corpus.filter(|m| config.split_of(&m.user_id) == Split::Test);
    let (vocab, model) = workflow::train_on(&config, &train).unwrap();
    let saved = dir.path().join("model");
    workflow::save_model(&saved, &vocab, &model).unwrap();
    assert_eq!(
        fs::read(saved.join(workflow::MODEL_FILE)).unwrap(),
        fs::read(dir.path().join("out/model").join(workflow::MODEL_FILE)).unwrap()
    );

    let (vocab, model) = workflow::load_model(&saved).unwrap();
    let weather = Estimator::Weather {
        vocab: &vocab,
        model: &model,
    };
    let records =
        workflow::estimate_users(&weather, &test, &inputs, config.missing_policy, None).unwrap();
    assert_eq!(
        to_estimation_result(&records),
        outcome.estimates[&Method::Weather]
    );
    let baseline = Estimator::Baseline {
        method: Method::BaselineA,
        fit: &train,
    };
    let records =
        workflow::estimate_users(&baseline, &test, &inputs, config.missing_policy, None).unwrap();
    assert_eq!(
        to_estimation_result(&records),
        outcome.estimates[&Method::BaselineA]
    );
}

#[test]
fn truth_before_lexicon_keeps_only_surviving_users() {
    let dir = tempfile::tempdir().unwrap();
    let world = synth::generate(
        &SynthConfig {
            n_users: 10,
            messages_per_user: 30,
            fidelity: 0.6,
            ..Default::default()
        },
        4,
    )
    .unwrap();
    world.write(dir.path()).unwrap();
    let config = RunConfig {
        min_users: 2,
        truth_before_lexicon: true,
        curated_rain: Some(dir.path().join(synth::CURATED_RAIN_FILE)),
        curated_norain: Some(dir.path().join(synth::CURATED_NORAIN_FILE)),
        ..RunConfig::default().with_world(dir.path())
    };
    let inputs = workflow::load_inputs(&config).unwrap();
    let mut summary = PreprocessSummary::default();
    let corpus_a = workflow::phase_a(&config, &inputs, &mut summary).unwrap();
    let lexicon = workflow::lexicon_from_corpus(&config, &corpus_a).unwrap();
    let (truth, corpus) = workflow::finish_corpus(&config, &corpus_a, &lexicon.lexicon, &mut summary);
    assert!(corpus.len() < corpus_a.len());
    for (user, _) in corpus.users() {
        assert_eq!(truth[user], world.truth[user]);
    }
    assert_eq!(truth.len(), corpus.user_count());
    assert!(corpus
        .messages()
        .iter()
        .all(|m| m.tokens.iter().any(|t| lexicon.lexicon.contains(t))));
}
