use pgcs::bps::BpsConfig;
use pgcs::channel::ChannelParams;
use pgcs::evalsuite::{run_point, PointSpec, System};
use pgcs::rng::RngStreams;
use pgcs::trainer::{load_checkpoint, save_checkpoint, PhaseRecovery, TrainConfig, Trainer};

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

#[test]
fn awgn_training_approaches_the_exact_demapper() {
    let cfg = TrainConfig {
        m: 3,
        epochs: 50,
        batch_start: 1000,
        batch_end: 1000,
        snr_db_range: [12.0, 12.0],
        linewidth_range_hz: [0.0, 0.0],
        phase_recovery: PhaseRecovery::Genie,
        ..TrainConfig::desk()
    };
    let mut t = Trainer::new(cfg).unwrap();
    while !t.is_finished() {
        t.train_epoch().unwrap();
    }
    let p = ChannelParams::from_physical(12.0, 0.0, 32e9).unwrap();
    let mut spec = PointSpec::new(1 << 16, BpsConfig::default());
    spec.recovery = PhaseRecovery::Genie;
    let learned = run_point(System::Model(t.model()), p, p, &spec, &mut RngStreams::new(4)).unwrap();
    let c = t.model().constellation(p).unwrap();
    let exact = run_point(System::ExactGaussian(&c), p, p, &spec, &mut RngStreams::new(4)).unwrap();
    assert!(
        (learned.bmi - exact.bmi).abs() < 0.1,
        "neural {} vs exact {}",
        learned.bmi,
        exact.bmi
    );
    assert!(exact.bmi > 2.5, "{}", exact.bmi);
}

#[test]
fn desk_loss_curve_goes_down() {
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::desk()
    };
    let mut t = Trainer::new(cfg).unwrap();
    let mut bce = Vec::new();
    while !t.is_finished() {
        bce.push(t.train_epoch().unwrap().bce_bits);
    }
    assert!(bce.iter().all(|v| v.is_finite()));
    assert!(median(&bce[45..]) < median(&bce[..5]), "{bce:?}");
}

#[test]
fn resume_from_a_saved_file_matches_an_uninterrupted_run() {
    let cfg = TrainConfig {
        m: 2,
        epochs: 4,
        batches_per_epoch: 3,
        batch_start: 64,
        batch_end: 128,
        bps: BpsConfig {
            num_test_angles: 16,
            window_size: 16,
            ..BpsConfig::default()
        },
        ..TrainConfig::desk()
    };
    let mut straight = Trainer::new(cfg.clone()).unwrap();
    let full: Vec<_> = (0..4).map(|_| straight.train_epoch().unwrap()).collect();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut first = Trainer::new(cfg).unwrap();
    first.train_epoch().unwrap();
    first.train_epoch().unwrap();
    save_checkpoint(&first.checkpoint(), &path).unwrap();
    drop(first);
    let mut resumed = Trainer::from_checkpoint(load_checkpoint(&path).unwrap()).unwrap();
    let tail: Vec<_> = (0..2).map(|_| resumed.train_epoch().unwrap()).collect();
    assert_eq!(&full[2..], &tail[..]);
    assert_eq!(straight.model(), resumed.model());
    assert!(resumed.is_finished());
}
