use std::fs;
use std::path::Path;
use std::process::Command;

use clothlayer::ply::read_ply;
use clothlayer::{GarmentClass, Strategy};
use clothlayer_cli::commands::eval::EvalOptions;
use clothlayer_cli::commands::{eval, export, gen, train};
use clothlayer_cli::config::{combinations, OutfitWeights, RunConfig};
use clothlayer_cli::manifest::{Manifest, Split};
use clothlayer_cli::palette;

fn small(out: &Path) -> RunConfig {
    RunConfig {
        seed: 11,
        threads: 1,
        scenes: 9,
        val_count: 3,
        points: 256,
        rays_per_view: 2048,
        feature_width: 8,
        depth: 1,
        k_neighbors: 8,
        epochs: 2,
        batch_size: 4,
        out: Some(out.to_path_buf()),
        ..RunConfig::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clothlayer"))
}

#[test]
fn ninety_uniform_scenes_give_ten_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { scenes: 90, points: 64, rays_per_view: 1024, ..small(dir.path()) };
    let m = gen::run(&cfg).unwrap();
    assert_eq!(gen::combination_counts(&m), vec![10; 9]);
    assert_eq!(m.entries.len(), 90);
    assert!(m.entries.iter().all(|e| e.points == 64));
}

#[test]
fn table1_weights_are_realized_within_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        scenes: 100,
        points: 32,
        rays_per_view: 512,
        outfit_weights: OutfitWeights::Preset("table1".into()),
        ..small(dir.path())
    };
    let m = gen::run(&cfg).unwrap();
    let counts = gen::combination_counts(&m);
    let weights = cfg.weights().unwrap();
    for (c, w) in counts.iter().zip(&weights) {
        assert!((*c as f64 - 100.0 * w).abs() < 1.0, "{counts:?}");
    }
    let combos = combinations();
    let at = |u, l| counts[combos.iter().position(|&p| p == (u, l)).unwrap()];
    // 504 : 310 of 3306 scaled to 100 scenes is 15.245 : 9.377; the three
    // scenes left after flooring go to the largest remainders (.736, .658, .377).
    assert_eq!(at(GarmentClass::TShirt, GarmentClass::LongPants), 15);
    assert_eq!(at(GarmentClass::Top, GarmentClass::Skirt), 10);
}

#[test]
fn generation_is_byte_identical_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen::run(&small(a.path())).unwrap();
    gen::run(&RunConfig { threads: 0, ..small(b.path()) }).unwrap();
    for f in ["manifest.csv", "scan_0004.ply", "scenes/scene_0004.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    gen::run(&RunConfig { seed: 12, ..small(c.path()) }).unwrap();
    assert_ne!(fs::read(a.path().join("manifest.csv")).unwrap(), fs::read(c.path().join("manifest.csv")).unwrap());
}

#[test]
fn artifacts_carry_version_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let m = gen::run(&cfg).unwrap();
    assert_eq!(m.config_hash, cfg.hash());
    let ply = read_ply(std::io::BufReader::new(fs::File::open(dir.path().join("scan_0000.ply")).unwrap())).unwrap();
    assert_eq!(ply.comment_value("clothlayer"), Some(clothlayer::VERSION));
    assert_eq!(ply.comment_value("config_hash"), Some(cfg.hash().as_str()));
    assert_eq!(ply.comment_value("seed"), Some("11"));
    let resolved = fs::read_to_string(dir.path().join("resolved_config.toml")).unwrap();
    assert!(resolved.contains(&cfg.hash()));
}

#[test]
fn manifest_split_is_disjoint_and_used_by_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let m = gen::run(&small(&data)).unwrap();
    let train: Vec<_> = m.split(Split::Train).map(|e| e.file.clone()).collect();
    let val: Vec<_> = m.split(Split::Val).map(|e| e.file.clone()).collect();
    assert_eq!(val.len(), 3);
    assert_eq!(train.len() + val.len(), 9);
    assert!(train.iter().all(|f| !val.contains(f)));

    let run = dir.path().join("run");
    let cfg = RunConfig { dataset: Some(data.clone()), ..small(&run) };
    let t = train::run(&cfg).unwrap();
    assert_eq!(t.epochs_done, 2);
    let log = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let header = log.lines().find(|l| l.starts_with("epoch")).unwrap();
    for col in ["train_miou_body", "train_miou_upper", "train_miou_lower", "val_miou_body", "val_miou_upper", "val_miou_lower"] {
        assert!(header.split(',').any(|c| c == col), "{header}");
    }
    assert!(run.join("checkpoint.ckpt").is_file());
    assert!(run.join("resolved_config.toml").is_file());
}

#[test]
fn resume_continues_epoch_numbering() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen::run(&small(&data)).unwrap();
    let first = dir.path().join("first");
    train::run(&RunConfig { dataset: Some(data.clone()), ..small(&first) }).unwrap();
    let second = dir.path().join("second");
    let cfg = RunConfig {
        dataset: Some(data.clone()),
        epochs: 4,
        resume: Some(first.join("checkpoint.ckpt")),
        ..small(&second)
    };
    let t = train::run(&cfg).unwrap();
    assert_eq!(t.log.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![2, 3]);
    let log = fs::read_to_string(second.join("metrics.csv")).unwrap();
    let epochs: Vec<&str> = log
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(epochs, ["0", "1", "2", "3"]);

    let wrong = RunConfig { strategy: "s5".into(), out: Some(dir.path().join("w")), ..cfg };
    assert_eq!(train::run(&wrong).unwrap_err().exit_code(), 2);
}

#[test]
fn ground_truth_scores_perfectly_and_columns_follow_class_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen::run(&small(&data)).unwrap();
    for s in Strategy::ALL {
        let cfg = RunConfig {
            dataset: Some(data.clone()),
            strategy: s.name().into(),
            split: "all".into(),
            ..small(&dir.path().join(format!("eval_{s}")))
        };
        let opts = EvalOptions { ground_truth_as_prediction: true, strategy_explicit: true };
        let r = eval::run(&cfg, &opts).unwrap();
        assert_eq!(r.report.avg_miou, Some(1.0));
        for (l, layer) in r.report.layers.iter().enumerate() {
            assert_eq!(layer.classes, s.class_names(l));
            assert!(layer.ious.iter().all(|x| x.is_none() || *x == Some(1.0)));
        }
        assert_eq!(r.consistency.inconsistent_points, 0);
        assert_eq!(r.consistency.unlabeled_points, 0);
    }
}

#[test]
fn eval_rejects_a_mismatched_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen::run(&small(&data)).unwrap();
    let run = dir.path().join("run");
    train::run(&RunConfig { dataset: Some(data.clone()), epochs: 1, ..small(&run) }).unwrap();
    let cfg = RunConfig {
        dataset: Some(data),
        checkpoint: Some(run.join("checkpoint.ckpt")),
        strategy: "s3".into(),
        ..small(&dir.path().join("eval"))
    };
    let opts = EvalOptions { ground_truth_as_prediction: false, strategy_explicit: true };
    assert_eq!(eval::run(&cfg, &opts).unwrap_err().exit_code(), 2);
    let ok = EvalOptions { strategy_explicit: false, ..opts };
    let r = eval::run(&cfg, &ok).unwrap();
    assert_eq!(r.report.strategy, Strategy::S2);
    assert!(dir.path().join("eval/report.json").is_file());
}

#[test]
fn s3_export_writes_one_colored_file_per_layer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = small(&data);
    gen::run(&cfg).unwrap();
    let scan = data.join("scan_0002.ply");
    let (cloud, gt) = clothlayer_cli::commands::read_scan(&scan).unwrap();
    let pred = clothlayer::layering::encode(&gt.unwrap(), Strategy::S3).unwrap();
    let pred_path = dir.path().join("pred.csv");
    fs::write(&pred_path, export::predictions_to_csv(&pred)).unwrap();

    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let ecfg = RunConfig {
            scan: Some(scan.clone()),
            predictions: Some(pred_path.clone()),
            strategy: "s3".into(),
            ..small(&dir.path().join(run))
        };
        outputs.push(export::run(&ecfg).unwrap());
    }
    let names: Vec<String> = outputs[0].iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for layer in ["body", "visible", "hidden"] {
        assert!(names.contains(&format!("{layer}_pred.ply")));
        assert!(names.contains(&format!("{layer}_gt.ply")));
    }
    for (a, b) in outputs[0].iter().zip(&outputs[1]) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        let d = read_ply(std::io::BufReader::new(fs::File::open(a).unwrap())).unwrap();
        assert_eq!(d.len(), cloud.len());
        let (r, g, b, class) = (d.column("red").unwrap(), d.column("green").unwrap(), d.column("blue").unwrap(), d.column("class").unwrap());
        let layer = Strategy::S3.layer_names().iter().position(|n| a.to_string_lossy().contains(&format!("/{n}_"))).unwrap();
        for i in 0..d.len() {
            let c = palette::color(Strategy::S3.class_names(layer)[class[i] as usize]);
            assert_eq!([r[i] as u8, g[i] as u8, b[i] as u8], c);
        }
    }

    let short = dir.path().join("short.csv");
    let truncated = clothlayer::StrategyLabels::new(Strategy::S3, pred.layers.iter().map(|l| l[..10].to_vec()).collect()).unwrap();
    fs::write(&short, export::predictions_to_csv(&truncated)).unwrap();
    let bad = RunConfig { scan: Some(scan), predictions: Some(short), ..small(&dir.path().join("c")) };
    assert_eq!(export::run(&bad).unwrap_err().exit_code(), 2);
}

#[test]
fn empty_training_split_is_an_invalid_argument() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen::run(&RunConfig { scenes: 2, val_count: 2, ..small(&data) }).unwrap();
    let cfg = RunConfig { dataset: Some(data), ..small(&dir.path().join("run")) };
    assert_eq!(train::run(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bin().args(["train", "--dataset"]).arg(dir.path().join("nope")).output().unwrap();
    assert_eq!(missing.status.code(), Some(3), "{}", String::from_utf8_lossy(&missing.stderr));

    let bad = bin().args(["gen", "--strategy", "s9"]).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));

    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, "scenes = 3\nval_count = 1\npoints = 64\nrays_per_view = 512\nseed = 5\n").unwrap();
    let out = dir.path().join("ds");
    let ok = bin().arg("gen").arg("--config").arg(&cfg_path).arg("--seed").arg("6").arg("--out").arg(&out).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.entries.len(), 3);
    assert_eq!(m.seed, 6, "flags override the config file");

    let unwritable = bin().args(["gen", "--scenes", "1", "--points", "8", "--out", "/proc/clothlayer"]).output().unwrap();
    assert_eq!(unwritable.status.code(), Some(3));
}
