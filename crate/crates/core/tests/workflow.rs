use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wdcgan_core::checkpoint::Checkpoint;
use wdcgan_core::classifier::{self, ClassifierConfig};
use wdcgan_core::metrics::{self, DUPLICATE_THRESHOLD};
use wdcgan_core::signal::{
    self, Condition, ModalComponent, ModeShift, ScenarioSplit, Segment, SplitCounts, SurrogateSpec,
};
use wdcgan_core::wdcgan::{self, GanConfig, TrainOptions};

fn spec() -> SurrogateSpec {
    SurrogateSpec {
        modes: vec![
            ModalComponent {
                frequency_hz: 60.0,
                damping_ratio: 0.05,
                amplitude: 0.3,
            },
            ModalComponent {
                frequency_hz: 150.0,
                damping_ratio: 0.05,
                amplitude: 0.15,
            },
        ],
        noise_std: 0.03,
        damage_shift: vec![
            ModeShift {
                frequency_factor: 2.0,
                amplitude_factor: 1.0,
            },
            ModeShift::identity(),
        ],
        duration_s: 8.0,
        sample_rate_hz: 1024.0,
        excitation_rate_hz: 64.0,
        joint_id: 2,
    }
}

fn pools(seed: u64) -> (Vec<Segment>, Vec<Segment>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec();
    let und = signal::synthesize_surrogate(&s, Condition::Undamaged, &mut rng).unwrap();
    let dam = signal::synthesize_surrogate(&s, Condition::Damaged, &mut rng).unwrap();
    (
        signal::segment(&und, 64, false, &mut rng).unwrap(),
        signal::segment(&dam, 64, false, &mut rng).unwrap(),
    )
}

fn small_gan() -> GanConfig {
    GanConfig {
        z_channels: 8,
        channel_widths: vec![16, 8, 8, 4, 1],
        seg_len: 64,
        lr_generator: 1e-4,
        lr_critic: 1e-4,
        critic_iters: 2,
        minibatch: 32,
        epochs: 3,
        critic_dropout_p: 0.3,
        eval_interval: 1,
        eval_samples: 16,
        seed: 5,
        ..GanConfig::default()
    }
}

fn normalized(split: &ScenarioSplit) -> ScenarioSplit {
    let f = |v: &[(Segment, u8)]| {
        v.iter()
            .map(|(s, y)| (signal::normalize_minmax(s, -1.0, 1.0).unwrap().0, *y))
            .collect::<Vec<_>>()
    };
    ScenarioSplit {
        scenario_id: split.scenario_id,
        train: f(&split.train),
        test: f(&split.test),
    }
}

#[test]
fn surrogate_to_scenario_metrics() {
    let (und, dam) = pools(1);
    assert_eq!((und.len(), dam.len()), (128, 128));

    let mut fids = Vec::new();
    let mut hook = |e: usize, g: &wdcgan::Generator| {
        let v = wdcgan::median_pair_fid(g, &dam, 16, e as u64)?;
        fids.push(v);
        Ok(v)
    };
    let (ckpt, hist) = wdcgan::train_gan(&small_gan(), &dam, Some(&mut hook), TrainOptions { zero_wall_clock: true }).unwrap();
    assert_eq!(hist.records.len(), 3);
    assert_eq!(fids.len(), 3);
    assert!(hist.records.iter().all(|r| r.critic_loss.is_finite() && r.wall_clock_s == 0.0));

    let fakes = wdcgan::generate(&ckpt, 80, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!(fakes.iter().all(|s| s.len() == 64 && s.joint_id == 2 && s.condition == Condition::Damaged));
    assert!(fakes.iter().flat_map(|s| &s.values).all(|v| v.abs() <= 1.0));

    let partners: Vec<usize> = (0..fakes.len()).map(|i| i % dam.len()).collect();
    assert_eq!(metrics::fid_report(&fakes, &dam, &partners).unwrap().values().len(), 80);
    assert_eq!(metrics::creativity_report(&fakes, &dam, DUPLICATE_THRESHOLD).unwrap().values().len(), 80 * 128);
    assert_eq!(metrics::diversity_report(&fakes, DUPLICATE_THRESHOLD).unwrap().values().len(), 80 * 79 / 2);

    let counts = SplitCounts {
        train_per_class: 20,
        test_per_class: 15,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for scenario in [1u8, 2] {
        let split = normalized(&signal::build_scenario(&und, &dam, &fakes, scenario, counts, &mut rng).unwrap());
        let cfg = ClassifierConfig {
            channel_widths: vec![16, 8, 8, 4, 1],
            seg_len: 64,
            epochs: 3,
            ..ClassifierConfig::default()
        };
        let (ck, hist) = classifier::train_classifier(&cfg, &split, true).unwrap();
        assert_eq!(hist.records.len(), 3);
        let m = classifier::test_classifier(&ck, &split).unwrap();
        assert_eq!(m.records.len(), 30);
        assert!((0.0..=1.0).contains(&m.classification_accuracy));
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 31);
    }
}

#[test]
fn generation_is_prefix_stable_and_survives_a_file_round_trip() {
    let (_, dam) = pools(2);
    let (ckpt, _) = wdcgan::train_gan(&small_gan(), &dam, None, TrainOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gan.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);

    let many = wdcgan::generate(&ckpt, 100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let few = wdcgan::generate(&loaded, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(few[..], many[..10]);
}

#[test]
fn classifier_rejects_a_gan_checkpoint() {
    let (und, dam) = pools(3);
    let (ckpt, _) = wdcgan::train_gan(&GanConfig { epochs: 1, ..small_gan() }, &dam, None, TrainOptions::default()).unwrap();
    let split = signal::build_scenario(&und, &dam, &[], 1, SplitCounts::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(classifier::test_classifier(&ckpt, &normalized(&split)).is_err());
}
