use nuclick_core::signals::{self, GuideInput, GuidingSignal, PatchSpec, Squiggle};
use nuclick_core::synth::{self, ObjectKind, SynthConfig};
use nuclick_core::{morph, BinaryMask, Point};
use nuclick_net::NetworkConfig;
use nuclick_pipeline::eval::skeleton_path;
use nuclick_pipeline::train::{epoch_checkpoint_path, training_sample};
use nuclick_pipeline::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_net() -> NetworkConfig {
    NetworkConfig {
        base_width: 4,
        depth: 2,
        ms_block_levels: vec![1],
        ms_dilations: vec![1, 2],
        patch_size: 32,
        ..NetworkConfig::default()
    }
}

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        network: small_net(),
        ..TrainConfig::default()
    }
}

fn nuclei(seed: u64, n: usize) -> Vec<(image::RgbImage, nuclick_core::LabelMap)> {
    (0..n)
        .map(|i| synth::generate(&SynthConfig::nuclei(40, 40, seed * 100 + i as u64)).unwrap())
        .collect()
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = TrainConfig {
        epochs: 7,
        checkpoint: Some("out/model.nuck".into()),
        network: NetworkConfig {
            kind: ObjectKind::Gland,
            ..small_net()
        },
        ..TrainConfig::default()
    };
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn config_defaults_and_rejections() {
    let cfg = TrainConfig::from_toml("train_data = \"d\"\n").unwrap();
    assert_eq!((cfg.epochs, cfg.batch_size, cfg.network.patch_size), (40, 16, 64));
    assert_eq!((cfg.lr, cfg.weight_decay), (3e-3, 5e-5));
    for bad in ["epochs = 0", "lr = -1.0", "weight_decay = 0.0", "batch_size = 0", "bogus = 1", "[network]\npatch_size = 30"] {
        assert!(TrainConfig::from_toml(bad).is_err(), "{bad}");
    }
}

#[test]
fn guide_modes_parse() {
    assert_eq!("gt-centroid".parse::<GuideMode>().unwrap(), GuideMode::GtCentroid);
    assert_eq!("gt-interior".parse::<GuideMode>().unwrap(), GuideMode::GtInterior);
    for s in ["jitter(3)", "jitter:3", "jitter=3.0"] {
        assert_eq!(s.parse::<GuideMode>().unwrap(), GuideMode::Jitter(3.0));
    }
    for s in ["jitter(-1)", "jitter(x)", "centroid", ""] {
        assert!(s.parse::<GuideMode>().is_err(), "{s}");
    }
    assert_eq!(GuideMode::Jitter(2.5).to_string().parse::<GuideMode>().unwrap(), GuideMode::Jitter(2.5));
}

#[test]
fn network_input_layout() {
    let img = image::RgbImage::from_fn(4, 3, |x, y| image::Rgb([255, (x * 10) as u8, (y * 20) as u8]));
    let mut signal = GuidingSignal::empty(4, 3);
    signal.inclusion.set(1, 1, true);
    signal.exclusion.set(3, 2, true);
    let with = network_input(&img, &signal, true).unwrap();
    assert_eq!(with.shape(), [1, 5, 3, 4]);
    let plane = |t: &nuclick_net::Tensor<f32>, c: usize| t.data()[c * 12..(c + 1) * 12].to_vec();
    assert!(plane(&with, 0).iter().all(|&v| v == 1.0));
    assert_eq!(plane(&with, 1)[3], 30.0 / 255.0);
    assert_eq!(plane(&with, 2)[8], 40.0 / 255.0);
    assert_eq!(plane(&with, 3).iter().sum::<f32>(), 1.0);
    assert_eq!(plane(&with, 3)[5], 1.0);
    assert_eq!(plane(&with, 4)[11], 1.0);
    let without = network_input(&img, &signal, false).unwrap();
    assert!(plane(&without, 4).iter().all(|&v| v == 0.0));
    assert!(network_input(&img, &GuidingSignal::empty(3, 3), true).is_err());
}

#[test]
fn training_sample_targets_one_instance() {
    let data = nuclei(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = small_net();
    for (img, labels) in &data {
        let s = training_sample(img, labels, &net, &mut rng).unwrap().unwrap();
        assert_eq!(s.input.shape(), [1, 5, 32, 32]);
        assert_eq!(s.target.shape(), [1, 1, 32, 32]);
        let target = BinaryMask::from_vec(32, 32, s.target.data().iter().map(|&v| v > 0.5).collect()).unwrap();
        assert!(target.any());
        assert!(s.signal.inclusion.is_subset_of(&target));
        assert!(!s.signal.exclusion.intersects(&target));
        assert_eq!(morph::connected_components(&target).max_label(), 1);
    }
    let empty = nuclick_core::LabelMap::new(40, 40);
    assert!(training_sample(&data[0].0, &empty, &net, &mut rng).unwrap().is_none());
}

#[test]
fn single_batch_overfits() {
    let data = nuclei(4, 4);
    let cfg = TrainConfig {
        batch_size: 4,
        network: NetworkConfig {
            patch_size: 32,
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch: Vec<_> = data
        .iter()
        .map(|(i, l)| training_sample(i, l, &cfg.network, &mut rng).unwrap().unwrap())
        .collect();
    let first = trainer.step(&batch).unwrap();
    let mut last = first;
    for _ in 1..200 {
        last = trainer.step(&batch).unwrap();
    }
    assert!(last < 0.7, "loss {first} -> {last}");
}

#[test]
fn loss_log_is_deterministic() {
    let data = nuclei(5, 6);
    let cfg = small_train(3);
    let a = train_on(&data, &cfg, |_, _| Ok(())).unwrap();
    let b = train_on(&data, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(a.log.len(), 3);
    assert_eq!(a.log, b.log);
    assert_eq!(a.net.tensors(), b.net.tensors());
    let c = train_on(&data, &TrainConfig { seed: 9, ..cfg }, |_, _| Ok(())).unwrap();
    assert_ne!(a.log, c.log);
    assert!(a.log.iter().all(|e| e.mean_loss.is_finite() && e.lr == 3e-3));
}

#[test]
fn train_writes_artifacts_and_epoch_checkpoints_reproduce_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (train_dir, val_dir) = (dir.path().join("train"), dir.path().join("val"));
    synth::write_dataset(&SynthConfig::nuclei(40, 40, 11), 6, &train_dir).unwrap();
    synth::write_dataset(&SynthConfig::nuclei(40, 40, 12), 3, &val_dir).unwrap();
    let ckpt = dir.path().join("model.nuck");
    let log = dir.path().join("loss.csv");
    let cfg = TrainConfig {
        train_data: train_dir.clone(),
        val_data: Some(val_dir.clone()),
        checkpoint: Some(ckpt.clone()),
        loss_log: Some(log.clone()),
        checkpoint_every: 1,
        ..small_train(2)
    };
    let outcome = train(&cfg).unwrap();
    let csv = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,mean_loss,lr");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));

    let val = synth::read_dataset(&val_dir).unwrap();
    let mut live = Vec::new();
    let data = synth::read_dataset(&train_dir).unwrap();
    train_on(&data, &cfg, |_, net| {
        live.push(evaluate(&Segmenter::new(net.clone()), &val, GuideMode::GtCentroid, 0)?);
        Ok(())
    })
    .unwrap();
    for k in 1..=2 {
        let path = epoch_checkpoint_path(&ckpt, k);
        assert!(path.to_string_lossy().ends_with(&format!(".epoch00{k}")));
        let reloaded = evaluate_dir(&path, &val_dir, GuideMode::GtCentroid, 0).unwrap();
        assert_eq!(reloaded, live[k - 1]);
    }
    assert_eq!(evaluate_dir(&ckpt, &val_dir, GuideMode::GtCentroid, 0).unwrap(), live[1]);
    assert_eq!(Segmenter::load(&ckpt).unwrap().net().tensors(), outcome.net.tensors());
}

#[test]
fn training_refuses_overlapping_validation_data() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    synth::write_dataset(&SynthConfig::nuclei(40, 40, 1), 2, &train_dir).unwrap();
    for val in [train_dir.clone(), dir.path().to_path_buf()] {
        let cfg = TrainConfig {
            train_data: train_dir.clone(),
            val_data: Some(val),
            ..small_train(1)
        };
        assert!(matches!(train(&cfg), Err(PipelineError::Config(_))));
    }
    let missing = TrainConfig {
        train_data: dir.path().join("nope"),
        ..small_train(1)
    };
    assert!(train(&missing).is_err());
}

#[test]
fn untrained_network_scores_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = nuclick_net::Network::build(NetworkConfig::default(), &mut rng).unwrap();
    let seg = Segmenter::new(net);
    let val: Vec<_> = (0..5)
        .map(|i| synth::generate(&SynthConfig::nuclei(64, 64, 77 + i)).unwrap())
        .collect();
    let report = evaluate(&seg, &val, GuideMode::GtCentroid, 0).unwrap();
    assert!(report.aji < 0.25, "aji {}", report.aji);
}

#[test]
fn zero_jitter_equals_centroid_mode() {
    let data = nuclei(6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seg = Segmenter::new(nuclick_net::Network::build(small_net(), &mut rng).unwrap());
    let a = evaluate(&seg, &data, GuideMode::GtCentroid, 5).unwrap();
    let b = evaluate(&seg, &data, GuideMode::Jitter(0.0), 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn segmenter_uses_other_guides_as_exclusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seg = Segmenter::new(nuclick_net::Network::build(small_net(), &mut rng).unwrap());
    let guides = [
        GuideInput::click(Point::new(10, 10)),
        GuideInput::click(Point::new(14, 12)),
        GuideInput::click(Point::new(39, 39)),
    ];
    let window = seg.window((40, 40), &guides[0]).unwrap();
    assert_eq!(window.size, (32, 32));
    let s = seg.signal(&guides, 0, &window).unwrap();
    assert_eq!(s.inclusion.count(), 1);
    let ex = s.exclusion.points();
    assert_eq!(ex.len(), 1);
    assert_eq!(window.patch_pixel_to_image(ex[0]), Point::new(14, 12));
    assert!(seg.window((40, 40), &GuideInput::click(Point::new(40, 3))).is_err());
    let labels = seg.segment_image(&nuclei(1, 1)[0].0, &guides).unwrap();
    assert!(labels.max_label() <= 3);
}

fn thin_blob(cells: &[(i32, i32)]) -> BinaryMask {
    let pts: Vec<Point> = cells.iter().map(|&(x, y)| Point::new(x, y)).collect();
    morph::skeletonize(&BinaryMask::from_points(24, 24, &pts))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn skeleton_path_redraws_its_mask(
        disks in proptest::collection::vec((4i32..20, 4i32..20, 2i32..5), 1..4),
    ) {
        let mut cells = Vec::new();
        for &(cx, cy, r) in &disks {
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                        cells.push((x, y));
                    }
                }
            }
        }
        let blob = thin_blob(&cells);
        let comps = morph::connected_components(&blob);
        let main = comps.instance(1);
        let path = skeleton_path(&main);
        for w in path.windows(2) {
            let d = ((w[0][0] - w[1][0]).abs(), (w[0][1] - w[1][1]).abs());
            prop_assert!(d.0 <= 1.0 && d.1 <= 1.0);
        }
        let drawn = signals::rasterize_squiggle(&Squiggle::single(path), &PatchSpec::new((0, 0), (24, 24))).unwrap();
        prop_assert_eq!(drawn, main);
    }
}
