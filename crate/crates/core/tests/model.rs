use clothlayer::geometry::PointCloud;
use clothlayer::layering::{encode, Strategy, StrategyLabels};
use clothlayer::nn::checkpoint::{self, CheckpointMeta, OptimizerMeta};
use clothlayer::nn::model::predict_from_logits;
use clothlayer::nn::train::{evaluate, Augmentation};
use clothlayer::nn::{
    multilayer_loss, BackboneKind, Graph, Inputs, Matrix, Model, ModelConfig, Sample, TrainConfig, Trainer,
};
use clothlayer::scan::{resample, scan, LabeledScan, ScanConfig};
use clothlayer::scene::{sample_scene, BodySpec, OutfitSpec};
use clothlayer::{Error, GarmentClass};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene_scan(points: usize, seed: u64) -> LabeledScan {
    let outfit = OutfitSpec::new(GarmentClass::TShirt, GarmentClass::LongPants, 0.08).unwrap();
    let scene = sample_scene(&outfit, &BodySpec::default(), seed).unwrap();
    let s = scan(&scene, &ScanConfig { seed, rays_per_view: 2048, ..ScanConfig::default() }).unwrap();
    resample(&s, points, seed).unwrap()
}

fn small_config(kind: BackboneKind, strategy: Strategy) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind, strategy);
    cfg.feature_width = 16;
    cfg.k_neighbors = 8;
    cfg
}

#[test]
fn head_shapes_follow_the_strategy() {
    let s = scene_scan(128, 1);
    for (strategy, widths) in [(Strategy::S2, vec![2, 2, 2]), (Strategy::S5, vec![2, 7, 4]), (Strategy::S1, vec![4])] {
        let model = Model::<f32>::new(small_config(BackboneKind::Pt, strategy), 0).unwrap();
        let logits = model.logits(&s.cloud).unwrap();
        let shapes: Vec<_> = logits.iter().map(Matrix::shape).collect();
        let expect: Vec<_> = widths.iter().map(|&c| (128, c)).collect();
        assert_eq!(shapes, expect, "{strategy}");
    }
}

#[test]
fn zero_weights_give_zero_features_and_uniform_heads() {
    let s = scene_scan(64, 2);
    for kind in BackboneKind::ALL {
        let mut model = Model::<f64>::new(small_config(kind, Strategy::S2), 0).unwrap();
        model.params.fill_zero();
        let input = Inputs::from_cloud(&s.cloud);
        let mut g = Graph::new(&model.params);
        let fwd = model.forward(&mut g, &input).unwrap();
        assert!(g.value(fwd.features).data.iter().all(|&v| v == 0.0), "{kind}");
        for &z in &fwd.logits {
            assert!(g.value(z).data.iter().all(|&v| v == 0.0));
        }
        let labels = encode(&s.labels, Strategy::S2).unwrap();
        let loss = multilayer_loss(&mut g, &fwd.logits, &labels, None).unwrap();
        assert!((g.value(loss).data[0] - 3.0 * 2f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn heads_reject_a_width_mismatch() {
    let model = Model::<f64>::new(small_config(BackboneKind::Set, Strategy::S3), 0).unwrap();
    let mut g = Graph::new(&model.params);
    let f = g.constant(Matrix::zeros(10, 7));
    assert!(matches!(model.heads_forward(&mut g, f), Err(Error::InvalidArgument(_))));
}

#[test]
fn backbones_need_k_points() {
    let s = scene_scan(64, 3);
    let small = s.cloud.select(&(0..5).collect::<Vec<_>>());
    for kind in BackboneKind::ALL {
        let model = Model::<f32>::new(small_config(kind, Strategy::S2), 0).unwrap();
        assert!(matches!(model.predict(&small), Err(Error::InvalidArgument(_))), "{kind}");
    }
}

#[test]
fn heads_must_match_the_strategy() {
    let mut cfg = ModelConfig::new(BackboneKind::Pt, Strategy::S2);
    cfg.heads.pop();
    assert!(Model::<f32>::new(cfg, 0).is_err());
}

#[test]
fn argmax_prediction_breaks_ties_low() {
    let logits = vec![
        Matrix::from_vec(2, 2, vec![0.1f32, 2.0, 0.5, 0.5]).unwrap(),
        Matrix::from_vec(2, 2, vec![1.0f32, 1.0, 0.0, -1.0]).unwrap(),
        Matrix::from_vec(2, 2, vec![0.0f32, 0.0, 3.0, 3.5]).unwrap(),
    ];
    let p = predict_from_logits(Strategy::S2, &logits).unwrap();
    assert_eq!(p.layers, vec![vec![1, 0], vec![0, 0], vec![0, 1]]);
}

fn permuted(cloud: &PointCloud, perm: &[usize]) -> PointCloud {
    cloud.select(perm)
}

#[test]
fn predictions_commute_with_point_permutations() {
    let s = scene_scan(512, 4);
    let mut perm: Vec<usize> = (0..s.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    for kind in BackboneKind::ALL {
        let model = Model::<f32>::new(ModelConfig::new(kind, Strategy::S5), 3).unwrap();
        let base = model.predict(&s.cloud).unwrap();
        let moved = model.predict(&permuted(&s.cloud, &perm)).unwrap();
        assert_eq!(moved, base.select(&perm), "{kind}");
        let lb = model.logits(&s.cloud).unwrap();
        let lm = model.logits(&permuted(&s.cloud, &perm)).unwrap();
        for (a, b) in lb.iter().zip(&lm) {
            for (i, &p) in perm.iter().enumerate() {
                assert_eq!(b.row(i), a.row(p), "{kind}: logits differ");
            }
        }
    }
}

#[test]
fn checkpoints_round_trip_weights_and_optimizer_state() {
    let s = scene_scan(128, 5);
    let sample = Sample::from_scan(&s, Strategy::S4).unwrap();
    let model = Model::<f32>::new(small_config(BackboneKind::Edge, Strategy::S4), 7).unwrap();
    let mut tr = Trainer::new(model, TrainConfig { epochs: 2, batch_size: 1, ..TrainConfig::default() }).unwrap();
    tr.run_epoch(std::slice::from_ref(&sample), None).unwrap();
    let meta = CheckpointMeta {
        toolkit_version: clothlayer::VERSION.into(),
        config_hash: "abc".into(),
        seed: 0,
        epoch: tr.epochs_done,
        model: tr.model.config.clone(),
        optimizer: Some(OptimizerMeta { config: tr.optimizer.config, step: tr.optimizer.step }),
    };
    let mut buf = Vec::new();
    checkpoint::save(&mut buf, &meta, &tr.model, Some(&tr.optimizer)).unwrap();
    assert_eq!(&buf[..8], b"CLTHCKPT");
    let (meta2, model2, opt2) = checkpoint::load::<f32, _>(buf.as_slice()).unwrap();
    assert_eq!(meta2, meta);
    assert_eq!(model2.params, tr.model.params);
    assert_eq!(opt2.as_ref(), Some(&tr.optimizer));
    assert_eq!(model2.predict(&s.cloud).unwrap(), tr.model.predict(&s.cloud).unwrap());

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::load::<f32, _>(bad.as_slice()), Err(Error::Format(_))));
    assert!(matches!(checkpoint::load::<f32, _>(&buf[..buf.len() - 3]), Err(Error::Format(_))));
}

fn train_run(kind: BackboneKind, epochs: usize, augment: bool, sample: &Sample) -> Trainer<f32> {
    let mut cfg = small_config(kind, Strategy::S2);
    cfg.augment = augment;
    let model = Model::<f32>::new(cfg, 11).unwrap();
    let mut tr = Trainer::new(model, TrainConfig { epochs, batch_size: 1, seed: 5, ..TrainConfig::default() }).unwrap();
    tr.fit(std::slice::from_ref(sample), None, |_| {}).unwrap();
    tr
}

#[test]
fn training_is_reproducible() {
    let sample = Sample::from_scan(&scene_scan(256, 6), Strategy::S2).unwrap();
    let a = train_run(BackboneKind::Pt, 3, true, &sample);
    let b = train_run(BackboneKind::Pt, 3, true, &sample);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.log, b.log);
}

#[test]
fn loss_decreases_over_ten_epochs_for_every_backbone() {
    let sample = Sample::from_scan(&scene_scan(512, 7), Strategy::S2).unwrap();
    for kind in BackboneKind::ALL {
        let tr = train_run(kind, 10, false, &sample);
        let first = tr.log.first().unwrap().loss;
        let last = tr.log.last().unwrap().loss;
        assert!(last < first, "{kind}: loss {first} -> {last}");
    }
}

#[test]
fn augmentation_moves_points_but_not_labels() {
    let s = scene_scan(256, 8);
    let before = encode(&s.labels, Strategy::S5).unwrap();
    let aug = Augmentation::draw(&mut ChaCha8Rng::seed_from_u64(1));
    let moved = aug.apply(&s.cloud).unwrap();
    assert_ne!(moved.positions, s.cloud.positions);
    for n in &moved.normals {
        assert!((n.norm() - 1.0).abs() < 1e-9);
    }
    // labels are attached to point indices and are never touched
    let sample = Sample { cloud: moved, labels: before.clone() };
    assert_eq!(sample.labels, encode(&s.labels, Strategy::S5).unwrap());
    let model = Model::<f32>::new(small_config(BackboneKind::Set, Strategy::S5), 0).unwrap();
    let a = Inputs::<f32>::from_cloud(&s.cloud);
    let b = Inputs::<f32>::from_cloud(&sample.cloud);
    assert_ne!(a.features, b.features);
    let acc = evaluate(&model, std::slice::from_ref(&sample)).unwrap();
    assert_eq!(acc.layers[0].total, 256);
}

#[test]
fn nan_loss_aborts_with_diagnostics() {
    let sample = Sample::from_scan(&scene_scan(128, 9), Strategy::S2).unwrap();
    let mut model = Model::<f32>::new(small_config(BackboneKind::Pt, Strategy::S2), 0).unwrap();
    let id = model.params.find("head.body.1.b").unwrap();
    model.params.value_mut(id).data[0] = f32::NAN;
    let mut tr = Trainer::new(model, TrainConfig { epochs: 1, batch_size: 1, ..TrainConfig::default() }).unwrap();
    match tr.run_epoch(std::slice::from_ref(&sample), None) {
        Err(Error::Numeric(msg)) => {
            assert!(msg.contains("epoch 0") && msg.contains("batch 0") && msg.contains("lr"), "{msg}");
        }
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn empty_training_sets_are_rejected() {
    let model = Model::<f32>::new(small_config(BackboneKind::Pt, Strategy::S2), 0).unwrap();
    let mut tr = Trainer::new(model, TrainConfig::default()).unwrap();
    assert!(matches!(tr.run_epoch(&[], None), Err(Error::InvalidArgument(_))));
}

#[test]
fn labels_of_another_strategy_are_rejected() {
    let s = scene_scan(64, 10);
    let sample = Sample { cloud: s.cloud.clone(), labels: encode(&s.labels, Strategy::S3).unwrap() };
    let model = Model::<f32>::new(small_config(BackboneKind::Pt, Strategy::S2), 0).unwrap();
    let mut tr = Trainer::new(model, TrainConfig::default()).unwrap();
    assert!(tr.run_epoch(std::slice::from_ref(&sample), None).is_err());
    let _: &StrategyLabels = &sample.labels;
}
