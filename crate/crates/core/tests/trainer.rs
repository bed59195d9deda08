use omcl_core::autodiff::Tensor;
use omcl_core::data::batch_indices;
use omcl_core::data::{make_splits, synthetic::GaussianMixture, TrialData};
use omcl_core::metrics::ScoredPrediction;
use omcl_core::model::{cos_prob, Architecture, Checkpoint, Model, ScoringMode};
use omcl_core::rng::{stream_rng, Stream};
use omcl_core::trainer::{
    evaluate_trial, export_embeddings, report_from_predictions, run_trials, sweep, sweep_csv, train_trial, trial_seed,
    SweepAxis, TrainConfig, TrainError,
};
use rand::Rng;

fn small_data(seed: u64) -> TrialData {
    let mix = GaussianMixture {
        per_class: 40,
        ..GaussianMixture::default()
    };
    let split = make_splits(8, 1, seed, &[], None).unwrap().remove(0);
    mix.trial_data(seed, &split)
}

fn small_config() -> TrainConfig {
    TrainConfig {
        backbone: Architecture::Mlp { hidden: vec![8] },
        embed_dim: 4,
        epochs: 3,
        batch_size: 32,
        trial: Some(0),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_weight_terms_follow_the_cosine_trajectory() {
    let data = small_data(1);
    let cosine = TrainConfig {
        enable_mlas: false,
        enable_oss: false,
        ..small_config()
    };
    let silent = TrainConfig {
        lambda: 0.0,
        descriptors: Some(0),
        ..small_config()
    };
    let a = train_trial(&cosine, &data, &mut |_| {}).unwrap();
    let b = train_trial(&silent, &data, &mut |_| {}).unwrap();
    assert_eq!(a.record.batch_losses.len(), b.record.batch_losses.len());
    for (x, y) in a.record.batch_losses.iter().zip(&b.record.batch_losses) {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
    assert!((a.record.scale_trace[2] - b.record.scale_trace[2]).abs() <= 1e-12);

    // first batch loss against the untrained model, recomputed by hand
    let model = Model::new(
        &cosine.model_config(data.input, data.num_classes),
        &mut stream_rng(cosine.seed, Stream::Init, 0),
    )
    .unwrap();
    let idx = &batch_indices(data.train.len(), cosine.batch_size, trial_seed(cosine.seed, 0), 0)[0];
    let batch = data.batch(&data.train, idx, None);
    let cos = model.head.cosines(&model.embed(&batch.images).unwrap()).unwrap();
    let ce = batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -cos_prob(cos.row(i), y, cosine.init_scale).ln())
        .sum::<f64>()
        / idx.len() as f64;
    assert!(
        (a.record.batch_losses[0] - ce).abs() <= 1e-12,
        "{} vs {ce}",
        a.record.batch_losses[0]
    );
}

#[test]
fn scale_trace_tracks_the_freeze_flag() {
    let data = small_data(2);
    let frozen = train_trial(&small_config().baseline(), &data, &mut |_| {}).unwrap();
    assert_eq!(frozen.record.scale_trace, vec![16.0; 3]);
    let mut seen = Vec::new();
    let adaptive = train_trial(&small_config(), &data, &mut |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
    assert_eq!(adaptive.record.scale_trace.len(), 3);
    assert!(adaptive.record.scale_trace.iter().all(|s| *s != 16.0 && *s >= 1.0));
}

#[test]
fn reports_are_finite_and_bounded() {
    let data = small_data(3);
    for cfg in [small_config(), small_config().baseline()] {
        let r = train_trial(&cfg, &data, &mut |_| {}).unwrap().record.report;
        for v in [r.acc_c, r.auroc_o, r.oscr_o] {
            assert!(v.is_finite() && (0.0..=1.0).contains(&v), "{v}");
        }
        assert_eq!(r.n_known + r.n_unknown, 320);
        assert_eq!(r.label, cfg.method());
    }
}

#[test]
fn parameter_count_does_not_depend_on_the_loss() {
    let data = small_data(4);
    let a = train_trial(&small_config(), &data, &mut |_| {}).unwrap();
    let b = train_trial(&small_config().baseline(), &data, &mut |_| {}).unwrap();
    assert_eq!(a.record.num_params, b.record.num_params);
    // mlp 2->8->4, head 4x4, scale
    assert_eq!(a.record.num_params, 2 * 8 + 8 + 8 * 4 + 4 + 16 + 1);
}

#[test]
fn perfect_and_random_scores() {
    let cfg = small_config();
    let mut preds: Vec<ScoredPrediction> = (0..50)
        .map(|i| ScoredPrediction {
            known_score: 0.9,
            predicted: i % 4,
            truth: Some(i % 4),
        })
        .collect();
    preds.extend((0..50).map(|_| ScoredPrediction {
        known_score: 0.1,
        predicted: 0,
        truth: None,
    }));
    let r = report_from_predictions(&preds, 0, &cfg).unwrap();
    assert_eq!((r.acc_c, r.auroc_o, r.oscr_o), (1.0, 1.0, 1.0));

    let mut rng = stream_rng(9, Stream::Noise, 0);
    for p in &mut preds {
        p.known_score = rng.random();
    }
    let r = report_from_predictions(&preds, 0, &cfg).unwrap();
    assert!((r.auroc_o - 0.5).abs() < 0.15);
    let many: Vec<ScoredPrediction> = (0..4000)
        .map(|i| ScoredPrediction {
            known_score: rng.random(),
            predicted: 0,
            truth: (i % 2 == 0).then_some(0),
        })
        .collect();
    let r = report_from_predictions(&many, 0, &cfg).unwrap();
    assert!((r.auroc_o - 0.5).abs() < 0.03, "{}", r.auroc_o);
}

#[test]
fn sweep_matches_direct_runs() {
    let cfg = TrainConfig {
        epochs: 2,
        ..small_config()
    };
    let direct = run_trials(
        &TrainConfig {
            lambda: 0.25,
            ..cfg.clone()
        },
        &mut |_| {},
    )
    .unwrap();
    let rows = sweep(&cfg, SweepAxis::Lambda, &[0.25, 1.0], 2).unwrap();
    assert_eq!(rows[0].reports, vec![direct[0].record.report.clone()]);
    assert_eq!(rows[0].auroc, direct[0].record.report.auroc_o);
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("value,acc,auroc,oscr\n0.25,"));
    assert!(sweep(&cfg, SweepAxis::Descriptors, &[1.5], 1).is_err());
    assert_eq!("t".parse::<SweepAxis>(), Ok(SweepAxis::Threshold));
}

#[test]
fn fixed_scale_axis_freezes_the_scale() {
    let cfg = SweepAxis::FixedScale.apply(&small_config(), 8.0).unwrap();
    assert!(cfg.freeze_scale);
    assert_eq!(cfg.init_scale, 8.0);
    assert!(SweepAxis::InitScale.apply(&small_config(), 0.5).is_err());
}

#[test]
fn embedding_export_respects_the_cap() {
    let data = small_data(5);
    let trained = train_trial(&small_config(), &data, &mut |_| {}).unwrap();
    let model = &trained.checkpoint.model;
    let csv = export_embeddings(model, &data, 7, 5).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("sample_id,true_class,z0,z1,z2,z3"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8 * 7);
    assert_eq!(rows.iter().filter(|r| r[1] == "UNKNOWN").count(), 4 * 7);

    let first = &rows[0];
    let i = data
        .test_known
        .ids
        .iter()
        .position(|id| id.to_string() == first[0])
        .unwrap();
    let z = model.embed(&data.batch(&data.test_known, &[i], None).images).unwrap();
    for (j, v) in z.row(0).iter().enumerate() {
        assert_eq!(first[2 + j].parse::<f64>().unwrap(), *v);
    }
}

#[test]
fn divergent_training_aborts() {
    let cfg = TrainConfig {
        lr: 1e300,
        ..small_config()
    };
    match train_trial(&cfg, &small_data(6), &mut |_| {}) {
        Err(TrainError::NonFinite { epoch, .. }) => assert!(epoch < 3),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn runs_are_deterministic() {
    let data = small_data(7);
    let a = train_trial(&small_config(), &data, &mut |_| {}).unwrap();
    let b = train_trial(&small_config(), &data, &mut |_| {}).unwrap();
    assert_eq!(a.record.batch_losses, b.record.batch_losses);
    assert_eq!(a.record.report, b.record.report);
    assert_eq!(a.checkpoint, b.checkpoint);
    let c = train_trial(
        &TrainConfig {
            seed: 8,
            ..small_config()
        },
        &data,
        &mut |_| {},
    )
    .unwrap();
    assert_ne!(a.record.batch_losses, c.record.batch_losses);
}

#[test]
fn saved_checkpoint_reproduces_the_report() {
    let data = small_data(8);
    let cfg = small_config();
    let trained = train_trial(&cfg, &data, &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.omcl");
    trained.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.metadata["config_digest"], cfg.digest());
    let stored: TrainConfig = serde_json::from_value(back.metadata["config"].clone()).unwrap();
    assert_eq!(stored, cfg);
    assert_eq!(evaluate_trial(&back.model, &data, &cfg).unwrap(), trained.record.report);
}

#[test]
fn class_count_mismatch_is_rejected() {
    let data = small_data(9);
    let cfg = small_config();
    let model = Model::new(&cfg.model_config(data.input, 3), &mut stream_rng(0, Stream::Init, 0)).unwrap();
    assert!(matches!(
        evaluate_trial(&model, &data, &cfg),
        Err(TrainError::Config(_))
    ));
    assert!(export_embeddings(&model, &data, 1, 1).is_err());
    let x = Tensor::zeros(&[1, 1, 1, 2]);
    assert!(model.predict(&x, ScoringMode::Plain).is_err());
}

#[test]
fn config_round_trip_and_digest() {
    let cfg = TrainConfig {
        margin: -0.2,
        pinned: vec![1],
        ..small_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(TrainConfig::load(&path).unwrap(), cfg);
    let json = dir.path().join("c.json");
    std::fs::write(&json, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(TrainConfig::load(&json).unwrap(), cfg);

    assert_eq!(
        TrainConfig {
            trial: Some(2),
            ..cfg.clone()
        }
        .digest(),
        cfg.digest()
    );
    assert_ne!(
        TrainConfig {
            lambda: 0.3,
            ..cfg.clone()
        }
        .digest(),
        cfg.digest()
    );

    std::fs::write(&path, "epochs = 3\nbogus = 1\n").unwrap();
    assert!(matches!(TrainConfig::load(&path), Err(TrainError::Config(_))));
    std::fs::write(&path, "epochs = 0\n").unwrap();
    assert!(TrainConfig::load(&path).is_err());
    let partial: TrainConfig = toml::from_str("lambda = 0.75").unwrap();
    assert_eq!(
        partial,
        TrainConfig {
            lambda: 0.75,
            ..TrainConfig::default()
        }
    );
}

#[test]
fn baseline_turns_everything_off() {
    let b = TrainConfig::default().baseline();
    assert!(!b.enable_mlas && !b.enable_oss && b.freeze_scale);
    assert_eq!(b.scoring, ScoringMode::Plain);
    assert_eq!(b.descriptor_count(), 0);
    assert_eq!(TrainConfig::default().descriptor_count(), 64);
    assert_eq!(b.method(), "cosine");
}
