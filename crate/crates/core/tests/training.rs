use geoharm::data::{
    build_checkerboard, grid_to_bundle, synth_field_bundle, CheckerboardConfig, GridField,
    SynthFieldConfig, Task,
};
use geoharm::dfs::EmbeddingSpec;
use geoharm::encoder::PositionalEncoder;
use geoharm::matrix::Matrix;
use geoharm::net::{Model, NetworkArch};
use geoharm::train::{
    adam_step, evaluate, fit, loss, predict_embedded, split_loss, AdamState, LossKind, Metric,
    Targets, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_board() -> geoharm::data::DatasetBundle {
    build_checkerboard(&CheckerboardConfig {
        num_centers: 30,
        num_classes: 5,
        n_train: 600,
        n_val: 300,
        n_test: 300,
        seed: 4,
    })
    .unwrap()
}

#[test]
fn precomputed_and_recomputed_losses_agree() {
    let bundle = small_board();
    let pe: EmbeddingSpec = "sh:L=6".parse().unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        patience: 3,
        ..Default::default()
    };
    let result = fit(&bundle, &pe, NetworkArch::siren(16, 2, 30.0, 0.0), &cfg).unwrap();
    let encoder = PositionalEncoder::new(&pe).unwrap();
    for split in [&bundle.train, &bundle.val, &bundle.test] {
        let x = encoder.embed_batch(&split.points);
        let pre = loss(
            LossKind::SoftmaxCrossEntropy,
            &predict_embedded(&result.model, &x).unwrap(),
            &split.targets,
        )
        .unwrap();
        let re = split_loss(
            &result.model,
            &encoder,
            split,
            LossKind::SoftmaxCrossEntropy,
        )
        .unwrap();
        assert!((pre - re).abs() < 1e-12, "{pre} vs {re}");
    }
}

#[test]
fn returned_model_has_the_best_recorded_val_loss() {
    let bundle = small_board();
    let pe: EmbeddingSpec = "spherec+:S=4,rmin=20,rmax=360".parse().unwrap();
    let cfg = TrainConfig {
        max_epochs: 12,
        patience: 4,
        learning_rate: 0.01,
        ..Default::default()
    };
    let result = fit(&bundle, &pe, NetworkArch::fcnet(16, 0.5), &cfg).unwrap();
    let best = result
        .history
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    let encoder = PositionalEncoder::new(&pe).unwrap();
    let val = split_loss(
        &result.model,
        &encoder,
        &bundle.val,
        LossKind::SoftmaxCrossEntropy,
    )
    .unwrap();
    assert!((val - best).abs() < 1e-12);
    assert_eq!(result.history[result.best_epoch - 1].val_loss, best);
    if result.stopped_early {
        assert_eq!(result.history.len() - result.best_epoch, cfg.patience);
    }
}

#[test]
fn fixed_batch_loss_decreases_over_first_steps() {
    let mut violations = 0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(
            32,
            9,
            (0..32 * 9).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let targets = Targets::Classes((0..32).map(|_| rng.random_range(0..4)).collect());
        for arch in [
            NetworkArch::linear(),
            NetworkArch::fcnet(16, 0.0),
            NetworkArch::siren(16, 2, 30.0, 0.0),
        ] {
            let mut model = Model::init(arch.with_dims(9, 4).unwrap(), seed).unwrap();
            let mut state = AdamState::new(model.num_params());
            let mut prev = f64::INFINITY;
            for _ in 0..5 {
                let (value, grad) = model
                    .loss_and_grad(&x, &targets, LossKind::SoftmaxCrossEntropy, None)
                    .unwrap();
                if value > prev {
                    violations += 1;
                }
                prev = value;
                adam_step(model.params_mut(), &grad, &mut state, 1e-3, 0.0).unwrap();
            }
        }
    }
    // One violation per five seeds for each of the three architectures.
    assert!(violations <= 3, "{violations} increases");
}

#[test]
fn linear_harmonics_fit_a_low_degree_field_exactly() {
    let field = synth_field_bundle(&SynthFieldConfig {
        channels: 3,
        truth_degree: 4,
        n_train: 1500,
        n_val: 300,
        n_test: 300,
        seed: 2,
    })
    .unwrap();
    let pe: EmbeddingSpec = "sh:L=10".parse().unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        max_epochs: 200,
        batch_size: 256,
        ..Default::default()
    };
    let result = fit(&field.bundle, &pe, NetworkArch::linear(), &cfg).unwrap();
    let encoder = PositionalEncoder::new(&pe).unwrap();
    let train_mse = evaluate(&result.model, &encoder, &field.bundle.train, Metric::Mse)
        .unwrap()
        .scalar()
        .unwrap();
    assert!(train_mse < 1e-4, "train mse {train_mse}");
}

#[test]
fn tiny_grid_file_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (cols, rows) = (24, 12);
    let mut values = Vec::new();
    for ch in 0..2 {
        for i in 0..rows {
            for j in 0..cols {
                let lat = (-82.5 + 15.0 * i as f64).to_radians();
                let lon = (-172.5 + 15.0 * j as f64).to_radians();
                values.push(if ch == 0 {
                    250.0 + 40.0 * lat.sin()
                } else {
                    3.0 * lon.cos() * lat.cos()
                });
            }
        }
    }
    let grid = GridField::new(
        (-172.5, 15.0, cols),
        (-82.5, 15.0, rows),
        vec!["tas".into(), "uas".into()],
        values,
    )
    .unwrap();
    let path = dir.path().join("tiny.grdf");
    grid.save(&path).unwrap();

    let spec = format!("grid:path={},train_frac=0.5,val_frac=0.2", path.display());
    let bundle = spec
        .parse::<geoharm::data::DatasetSpec>()
        .unwrap()
        .build(3)
        .unwrap();
    assert_eq!(bundle.task, Task::Regression(2));
    assert_eq!(bundle.channel_names, ["tas", "uas"]);
    assert_eq!(
        bundle.train.len() + bundle.val.len() + bundle.test.len(),
        cols * rows
    );
    let direct = grid_to_bundle(&grid, 0.5, 0.2, 3).unwrap();
    assert_eq!(direct.train.points, bundle.train.points);

    let pe: EmbeddingSpec = "sh:L=3".parse().unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.03,
        max_epochs: 150,
        batch_size: 64,
        ..Default::default()
    };
    let result = fit(&bundle, &pe, NetworkArch::linear(), &cfg).unwrap();
    let encoder = PositionalEncoder::new(&pe).unwrap();
    let mse = evaluate(&result.model, &encoder, &bundle.test, Metric::Mse)
        .unwrap()
        .scalar()
        .unwrap();
    // Both channels are degree-1 harmonics, so the standardized fit is close.
    assert!(mse < 0.05, "test mse {mse}");
}
