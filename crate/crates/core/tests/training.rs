use frage::adversary::{Discriminator, DiscriminatorKind};
use frage::io::WordVectors;
use frage::linalg::Matrix;
use frage::sgns::{Embeddings, TrainingPair};
use frage::synth::{zipf_corpus, ZipfCorpusConfig};
use frage::trainer::{
    combined_objective, train_step, Checkpoint, StepBuffers, Trainer, TrainerConfig, TrainerState, TrainingData,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_text() -> String {
    zipf_corpus(&ZipfCorpusConfig {
        vocab_size: 300,
        tokens: 20_000,
        topics: 10,
        ..ZipfCorpusConfig::default()
    })
    .unwrap()
}

fn small_config() -> TrainerConfig {
    TrainerConfig {
        dim: 16,
        negatives: 5,
        min_count: 2,
        vocab_batch: 60,
        epochs: 2,
        batch_tokens: 500,
        task_lr: 0.05,
        disc_lr: 0.1,
        neg_table_size: 100_000,
        log_interval: 10,
        ..TrainerConfig::default()
    }
}

fn run_to_end(trainer: &mut Trainer) {
    trainer.run(&mut |_| {}).unwrap();
}

#[test]
fn lambda_zero_is_bit_identical_to_baseline() {
    let config = TrainerConfig {
        lambda: 0.0,
        ..small_config()
    };
    let data = TrainingData::from_text(&small_text(), &config).unwrap();
    let mut adv = Trainer::new(&data, config.clone()).unwrap();
    let mut base = Trainer::baseline(&data, config).unwrap();
    run_to_end(&mut adv);
    run_to_end(&mut base);
    assert!(adv.state().step > 10);
    assert_eq!(adv.state().embeddings, base.state().embeddings);
}

#[test]
fn warm_start_gates_the_fooling_term() {
    let config = TrainerConfig {
        lambda: 0.5,
        warm_start_steps: 10,
        ..small_config()
    };
    let data = TrainingData::from_text(&small_text(), &config).unwrap();
    let mut adv = Trainer::new(&data, config.clone()).unwrap();
    let mut base = Trainer::baseline(&data, config).unwrap();
    for step in 0..10 {
        let report = adv.step().unwrap().unwrap();
        base.step().unwrap();
        assert_eq!(report.effective_lambda, 0.0);
        assert_eq!(adv.state().embeddings, base.state().embeddings, "step {step}");
    }
    let report = adv.step().unwrap().unwrap();
    base.step().unwrap();
    assert_eq!(report.effective_lambda, 0.5);
    assert_ne!(adv.state().embeddings.input(), base.state().embeddings.input());
}

#[test]
fn one_step_on_two_words_decreases_the_embedding_objective() {
    let input = Matrix::from_rows(&[[0.3, -0.2, 0.1], [-0.1, 0.4, 0.2]]);
    let context = Matrix::from_rows(&[[0.2, 0.1, -0.3], [0.05, -0.2, 0.3]]);
    let disc = Discriminator::logistic(vec![0.7, -0.4, 0.2], 0.1);
    let pairs = vec![
        TrainingPair { center: 0, context: 1, negatives: vec![0] },
        TrainingPair { center: 1, context: 0, negatives: vec![1] },
    ];
    let (pop, rare) = (vec![0], vec![1]);
    for lambda in [0.0, 0.1, 1.0] {
        let config = TrainerConfig {
            dim: 3,
            lambda,
            disc_lr: 1e-3,
            disc_kind: DiscriminatorKind::Logistic,
            ..TrainerConfig::default()
        };
        let embeddings = Embeddings::new(input.clone(), context.clone()).unwrap();
        let mut state = TrainerState {
            step: 0,
            initial_digest: input.digest(),
            embeddings,
            discriminator: Some(disc.clone()),
            task_rng: ChaCha8Rng::seed_from_u64(0),
            vocab_rng: ChaCha8Rng::seed_from_u64(0),
        };
        let before = combined_objective(&state.embeddings, &disc, &pairs, &pop, &rare, lambda).unwrap();
        let mut buffers = StepBuffers::new(2, 3);
        train_step(&mut state, &pairs, Some((&pop, &rare)), &config, 1e-3, &mut buffers).unwrap();
        // measured against the discriminator the embeddings were playing
        let after = combined_objective(&state.embeddings, &disc, &pairs, &pop, &rare, lambda).unwrap();
        assert!(after < before, "lambda {lambda}: {before} -> {after}");
        assert_eq!(state.step, 1);
    }
}

#[test]
fn strict_runs_are_byte_identical() {
    let config = TrainerConfig {
        epochs: 1,
        ..small_config()
    };
    let data = TrainingData::from_text(&small_text(), &config).unwrap();
    let dump = || {
        let mut t = Trainer::new(&data, config.clone()).unwrap();
        run_to_end(&mut t);
        let wv = WordVectors::new(data.vocab.words().to_vec(), t.state().embeddings.input().clone()).unwrap();
        let mut buf = Vec::new();
        wv.write(&mut buf).unwrap();
        buf
    };
    assert_eq!(dump(), dump());
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let config = small_config();
    let data = TrainingData::from_text(&small_text(), &config).unwrap();
    let mut full = Trainer::new(&data, config.clone()).unwrap();
    let mut full_log = Vec::new();
    full.run(&mut |r| full_log.push(r.clone())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut first = Trainer::new(&data, config).unwrap();
    let mut log = Vec::new();
    first.run_until(17, &mut |r| log.push(r.clone())).unwrap();
    first.checkpoint().save(&path).unwrap();
    drop(first);

    let mut resumed = Trainer::resume(&data, Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(resumed.state().step, 17);
    resumed.run(&mut |r| log.push(r.clone())).unwrap();
    assert_eq!(resumed.state(), full.state());
    // records straddling the checkpoint average a different set of steps
    let steps = |l: &[frage::trainer::LogRecord]| l.iter().map(|r| r.step).collect::<Vec<_>>();
    assert_eq!(steps(&log), steps(&full_log));
    assert_eq!(log.last(), full_log.last());
}

#[test]
fn resume_rejects_a_foreign_initialization() {
    let config = small_config();
    let data = TrainingData::from_text(&small_text(), &config).unwrap();
    let mut ckpt = Trainer::new(&data, config).unwrap().checkpoint();
    ckpt.config.seed += 1;
    assert!(matches!(
        Trainer::resume(&data, ckpt),
        Err(frage::Error::DigestMismatch { .. })
    ));
}

#[test]
fn checkpoint_write_failure_is_an_error() {
    let config = small_config();
    let data = TrainingData::from_text(&small_text(), &config).unwrap();
    let ckpt = Trainer::new(&data, config).unwrap().checkpoint();
    let dir = tempfile::tempdir().unwrap();
    assert!(ckpt.save(&dir.path().join("missing").join("ckpt.json")).is_err());
}

#[test]
fn relaxed_mode_stays_finite_and_learns() {
    let config = TrainerConfig {
        strict: false,
        batch_tokens: 2000,
        ..small_config()
    };
    let data = TrainingData::from_text(&small_text(), &config).unwrap();
    let mut t = Trainer::new(&data, config).unwrap();
    let mut log = Vec::new();
    t.run(&mut |r| log.push(r.clone())).unwrap();
    assert!(t.state().embeddings.is_finite());
    assert!(log.last().unwrap().task_loss < log.first().unwrap().task_loss);
}

#[test]
fn popular_words_travel_further_in_the_baseline() {
    let config = TrainerConfig {
        subsample: 0.0,
        ..small_config()
    };
    let data = TrainingData::from_text(&small_text(), &config).unwrap();
    let mut t = Trainer::baseline(&data, config).unwrap();
    run_to_end(&mut t);
    let d = t.displacement().unwrap();
    assert!(d.ratio > 1.0, "{d:?}");
}
