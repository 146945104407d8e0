use tmlga::dataio::{load_manifest, load_samples};
use tmlga::eval::{evaluate_records, predict_samples, InvertedPolicy, DEFAULT_ALPHAS};
use tmlga::synthdata::{generate, SynthSpec};
use tmlga::training::{prepare_training_data, train, TrainConfig, Trainer};

fn small_spec() -> SynthSpec {
    SynthSpec {
        num_videos: 100,
        num_test_videos: 20,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn training_loss_decreases_on_the_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let paths = generate(&SynthSpec::default()).unwrap().write(dir.path()).unwrap();
    let manifest = load_manifest(&paths.train).unwrap();
    let config = TrainConfig {
        epochs: 10,
        seed: 1,
        ..TrainConfig::desk_scale()
    };
    let data = prepare_training_data(&manifest, &paths.embeddings, &config).unwrap();
    let means: Vec<f64> = train(&data, &config).unwrap().log.iter().map(|e| e.mean_total).collect();
    assert_eq!(means.len(), 10);
    for pair in means.windows(2) {
        assert!(pair[1] < pair[0], "loss did not decrease: {means:?}");
    }
}

#[test]
fn synthetic_data_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let paths = generate(&small_spec()).unwrap().write(dir.path()).unwrap();
    let train_manifest = load_manifest(&paths.train).unwrap();
    let test_manifest = load_manifest(&paths.test).unwrap();
    let config = TrainConfig {
        epochs: 10,
        seed: 4,
        ..TrainConfig::desk_scale()
    };
    let data = prepare_training_data(&train_manifest, &paths.embeddings, &config).unwrap();
    let outcome = train(&data, &config).unwrap();
    assert!(outcome.log[9].mean_total < outcome.log[0].mean_total);

    let test = load_samples(&test_manifest, &data.vocab, config.max_query_len).unwrap();
    let records = predict_samples(&outcome.model, &test).unwrap();
    assert_eq!(records.len(), 20);
    for r in &records {
        assert!(1 <= r.tau_s && r.tau_s <= 64 && 1 <= r.tau_e && r.tau_e <= 64);
        assert!(r.t_s_pred >= 0.0 && r.t_e_pred <= 64.0 * 16.0 / 25.0 + 1e-9);
    }
    let report = evaluate_records(&records, &DEFAULT_ALPHAS, InvertedPolicy::Swap).unwrap();
    assert_eq!(report.count, 20);
    let accs: Vec<f64> = DEFAULT_ALPHAS.iter().map(|&a| report.accuracy_at(a).unwrap()).collect();
    assert!(accs.windows(2).all(|w| w[1] <= w[0]));
    // ten epochs on a hundred videos already beats chance by a wide margin
    assert!(accs[0] >= 0.5, "{}", report.to_json());
}

#[test]
fn empty_training_set_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        num_videos: 0,
        num_test_videos: 1,
        ..small_spec()
    };
    let paths = generate(&spec).unwrap().write(dir.path()).unwrap();
    let manifest = load_manifest(&paths.train).unwrap();
    let config = TrainConfig::desk_scale();
    let err = prepare_training_data(&manifest, &paths.embeddings, &config)
        .and_then(|data| Trainer::new(config.clone(), data.vocab, data.embeddings, 32).map(|_| ()));
    assert!(err.is_err());
}
