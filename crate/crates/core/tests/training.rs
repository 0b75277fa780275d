use declip_core::data::{Dataset, Item, Split, SyntheticSpec};
use declip_core::eval::{evaluate, reconstruct, saturated_sdr};
use declip_core::losses::{GroupSampler, LossConfig, LossKind};
use declip_core::models::{Arch, MlpArch};
use declip_core::train::{train, Checkpoint, TrainConfig, TrainOptions};
use declip_core::{BlendConfig, Error};

fn small_synthetic(d: usize, v: f64, n_train: usize) -> (Dataset, Dataset) {
    SyntheticSpec {
        ambient_dim: 40,
        num_signals: n_train,
        num_test: 40,
        seed: 3,
        ..SyntheticSpec::new(d, v)
    }
    .generate()
    .unwrap()
}

fn mlp(dim: usize, hidden: usize, skip: bool) -> Arch {
    Arch::Mlp(MlpArch {
        input_dim: dim,
        in_channels: 1,
        hidden_dims: vec![hidden, hidden],
        skip,
    })
}

fn self_supervised(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(LossConfig::self_supervised(GroupSampler::uniform(0.5, 1.5).unwrap()), epochs);
    cfg.batch_size = 16;
    cfg.seed = 11;
    cfg
}

#[test]
fn supervised_identity_task_converges() {
    let items = (0..64)
        .map(|i| {
            let x: Vec<f64> = (0..8).map(|j| 0.5 * ((i * 7 + j * 3) as f64).sin()).collect();
            Item { x: Some(x.clone()), y: x, meta: format!("{i}") }
        })
        .collect();
    let data = Dataset { mu: 1.0, split: Split::Train, provenance: String::new(), items };
    let mut cfg = TrainConfig::new(LossConfig::new(LossKind::Supervised), 200);
    cfg.batch_size = 16;
    let out = train(&cfg, &data, &mlp(8, 16, true), TrainOptions::default()).unwrap();
    let log = &out.log.records;
    assert_eq!(log.len(), 200);
    assert!(log.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    assert!(log.last().unwrap().loss < 1e-3, "{:?}", log.last());
    assert!(log.last().unwrap().loss < log[0].loss);
}

fn mean_saturated_sdr(data: &Dataset, xhat: &[Vec<f64>]) -> f64 {
    let cfg = data.clip_config().unwrap();
    let vals: Vec<f64> = data
        .items
        .iter()
        .zip(xhat)
        .filter_map(|(it, h)| saturated_sdr(it.x.as_ref().unwrap(), h, &it.y, &cfg))
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn reconstructions(ck: &Checkpoint, data: &Dataset) -> Vec<Vec<f64>> {
    let ys: Vec<&[f64]> = data.items.iter().map(|i| i.y.as_slice()).collect();
    reconstruct(ck, &ys, &data.clip_config().unwrap(), &BlendConfig::default()).unwrap()
}

/// With one basis vector and an exact clipped proportion, every item is the
/// same signal up to sign, so the clipped coordinates are never observed.
#[test]
#[ignore = "unattainable: the saturated coordinates of a 1-D subspace are never observed unsaturated"]
fn one_dimensional_subspace_is_recovered_without_ground_truth() {
    let (train_set, test_set) = small_synthetic(1, 0.3, 200);
    let out = train(&self_supervised(60), &train_set.measurements_only(), &mlp(40, 64, false), TrainOptions::default()).unwrap();
    let report = evaluate(&out.checkpoint, &test_set, &BlendConfig::default()).unwrap();
    assert!(report.model.mean > 20.0, "model {} identity {}", report.model.mean, report.identity.mean);
}

#[test]
fn one_dimensional_subspace_is_recoverable_with_ground_truth() {
    let (train_set, test_set) = small_synthetic(1, 0.3, 200);
    let mut cfg = TrainConfig::new(LossConfig::new(LossKind::Supervised), 60);
    cfg.batch_size = 16;
    let out = train(&cfg, &train_set, &mlp(40, 64, false), TrainOptions::default()).unwrap();
    let report = evaluate(&out.checkpoint, &test_set, &BlendConfig::default()).unwrap();
    assert!(report.model.mean > 20.0, "model {} identity {}", report.model.mean, report.identity.mean);
}

#[test]
fn self_supervised_training_logs_nonnegative_terms() {
    let (train_set, _) = small_synthetic(5, 0.3, 64);
    let out = train(&self_supervised(5), &train_set.measurements_only(), &mlp(40, 16, false), TrainOptions::default()).unwrap();
    for r in &out.log.records {
        assert!(r.mc.unwrap() >= 0.0 && r.ei.unwrap() >= 0.0 && r.loss.is_finite());
    }
}

/// A bias-free network trained on naive consistency still extrapolates the
/// subspace into saturated samples (about 9 dB over identity here), so the
/// identity-level outcome this checks for is not what happens.
#[test]
#[ignore = "contradicted empirically: naive consistency training beats identity on saturated samples"]
fn naive_consistency_leaves_saturated_samples_at_identity() {
    let (train_set, test_set) = small_synthetic(5, 0.3, 300);
    let mut cfg = TrainConfig::new(LossConfig::new(LossKind::Nmc), 40);
    cfg.batch_size = 16;
    let out = train(&cfg, &train_set.measurements_only(), &mlp(40, 64, false), TrainOptions::default()).unwrap();
    let model = mean_saturated_sdr(&test_set, &reconstructions(&out.checkpoint, &test_set));
    let ys: Vec<Vec<f64>> = test_set.items.iter().map(|i| i.y.clone()).collect();
    let identity = mean_saturated_sdr(&test_set, &ys);
    assert!((model - identity).abs() <= 1.0, "model {model} identity {identity}");
}

#[test]
fn identical_runs_are_bit_identical() {
    let (train_set, _) = small_synthetic(3, 0.2, 48);
    let data = train_set.measurements_only();
    let run = || {
        train(&self_supervised(3), &data, &mlp(40, 16, false), TrainOptions::default())
            .unwrap()
            .checkpoint
            .to_bytes()
            .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn resuming_reproduces_the_uninterrupted_run() {
    let (train_set, _) = small_synthetic(3, 0.2, 48);
    let data = train_set.measurements_only();
    let arch = mlp(40, 16, false);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = self_supervised(4);
    cfg.checkpoint_every = 2;
    let full = train(
        &cfg,
        &data,
        &arch,
        TrainOptions { checkpoint_dir: Some(dir.path().to_path_buf()), ..Default::default() },
    )
    .unwrap();
    let mid = Checkpoint::load_for(dir.path().join("epoch-0002.ckpt"), &arch).unwrap();
    assert_eq!(mid.epochs_done, 2);
    let resumed = train(&cfg, &data, &arch, TrainOptions { resume: Some(mid), ..Default::default() }).unwrap();
    assert_eq!(resumed.log.records.len(), 2);
    assert_eq!(resumed.checkpoint.to_bytes().unwrap(), full.checkpoint.to_bytes().unwrap());
}

#[test]
fn checkpoint_round_trip_and_arch_check() {
    let arch = mlp(10, 4, true);
    let fresh = Checkpoint::fresh(arch.clone(), 5).unwrap();
    assert_eq!(fresh.params, arch.init_params(5).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    fresh.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), fresh);
    assert!(matches!(Checkpoint::load_for(&path, &mlp(10, 5, true)), Err(Error::ArchMismatch(_))));

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 40] ^= 0x01;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checksum)));
}

#[test]
fn non_finite_loss_aborts_and_keeps_last_finite_parameters() {
    let mut items: Vec<Item> = (0..8)
        .map(|i| Item { x: None, y: vec![0.1 * i as f64; 4], meta: String::new() })
        .collect();
    items[5].y[2] = f64::NAN;
    let data = Dataset { mu: 1.0, split: Split::Train, provenance: String::new(), items };
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::new(LossConfig::new(LossKind::Mc), 3);
    cfg.batch_size = 8;
    let arch = mlp(4, 3, true);
    let err = train(
        &cfg,
        &data,
        &arch,
        TrainOptions { checkpoint_dir: Some(dir.path().to_path_buf()), ..Default::default() },
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, .. }), "{err}");
    let snap = Checkpoint::load_for(dir.path().join("last_finite.ckpt"), &arch).unwrap();
    assert_eq!(snap.epochs_done, 0);
    assert_eq!(snap.params, arch.init_params(0).unwrap());
}

#[test]
fn supervised_needs_ground_truth() {
    let (train_set, _) = small_synthetic(2, 0.2, 8);
    let cfg = TrainConfig::new(LossConfig::new(LossKind::Supervised), 1);
    let r = train(&cfg, &train_set.measurements_only(), &mlp(40, 4, true), TrainOptions::default());
    assert!(matches!(r, Err(Error::InvalidConfig(_))));
}

#[test]
fn mask_flag_must_match_architecture() {
    let (train_set, _) = small_synthetic(2, 0.2, 8);
    let mut cfg = self_supervised(1);
    cfg.use_mask_channel = true;
    let r = train(&cfg, &train_set, &mlp(40, 4, true), TrainOptions::default());
    assert!(matches!(r, Err(Error::ArchMismatch(_))));
}
