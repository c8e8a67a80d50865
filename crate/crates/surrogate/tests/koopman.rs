use pistm_core::Tensor;
use pistm_surrogate::koopman::{forecast_fields, train_kae_snapshots};
use pistm_surrogate::synthetic::default_initial_state;
use pistm_surrogate::{forecast, FieldNormalizer, KaeTrainConfig, KoopmanModel, OrthogonalSystem};
use proptest::prelude::*;

fn small_config(seed: u64) -> KaeTrainConfig {
    KaeTrainConfig {
        latent_dim: 4,
        hidden: 12,
        horizon: 3,
        epochs: 60,
        batch_size: 8,
        learning_rate: 5e-3,
        seed,
        ..KaeTrainConfig::default()
    }
}

fn rotation_data(n: usize) -> (OrthogonalSystem, Tensor) {
    let sys = OrthogonalSystem::random(4, 3).unwrap();
    let data = sys.trajectory(&default_initial_state(4), n).unwrap();
    (sys, data)
}

fn rotation_2d(theta: f64) -> Tensor {
    let (s, c) = theta.sin_cos();
    Tensor::new(&[2, 2], vec![c, -s, s, c]).unwrap()
}

#[test]
fn constant_sequence_forecasts_the_constant() {
    let data = Tensor::full(&[30, 3, 4], 0.7);
    let model = train_kae_snapshots(&data, &small_config(1)).unwrap();
    let f = forecast_fields(&model, &Tensor::full(&[3, 4], 0.7), 5).unwrap();
    assert_eq!(f.dims(), &[6, 12]);
    assert!(
        f.data().iter().all(|v| (v - 0.7).abs() < 1e-4),
        "{:?}",
        &f.data()[..3]
    );
    assert!(model.report().unwrap().last.total < 1e-8);
}

#[test]
fn training_halves_the_loss() {
    let (_, data) = rotation_data(60);
    let model = train_kae_snapshots(&data, &small_config(2)).unwrap();
    let report = model.report().unwrap();
    assert!(
        report.last.total <= 0.5 * report.initial.total,
        "loss {} -> {}",
        report.initial.total,
        report.last.total
    );
}

#[test]
fn training_is_deterministic() {
    let (_, data) = rotation_data(40);
    let cfg = KaeTrainConfig {
        epochs: 5,
        ..small_config(9)
    };
    let a = train_kae_snapshots(&data, &cfg).unwrap();
    let b = train_kae_snapshots(&data, &cfg).unwrap();
    assert_eq!(a.params(), b.params());
    let c = train_kae_snapshots(&data, &KaeTrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn inverse_operator_pair_round_trips() {
    let norm = FieldNormalizer::from_parts(vec![0.0; 4], 1.0).unwrap();
    let cfg = KaeTrainConfig {
        latent_dim: 2,
        hidden: 3,
        horizon: 1,
        ..KaeTrainConfig::default()
    };
    let mut model = KoopmanModel::init(&[4], norm, &cfg).unwrap();
    let c = rotation_2d(0.3);
    model.set_operators(c.clone(), c.transpose().unwrap()).unwrap();
    assert!(model.consistency_error() < 1e-15);
    let z = Tensor::new(&[2], vec![0.8, -1.1]).unwrap();
    let there = model.evolve_forward(&z, 25).unwrap();
    let back = model.evolve_backward(&there, 25).unwrap();
    assert!(back.sub(&z).unwrap().max_abs() < 1e-12);
    assert!((norm_of(&there) - norm_of(&z)).abs() < 1e-12);
}

#[test]
fn forecast_of_length_one_is_one_operator_step() {
    let (_, data) = rotation_data(20);
    let cfg = KaeTrainConfig {
        epochs: 2,
        ..small_config(4)
    };
    let model = train_kae_snapshots(&data, &cfg).unwrap();
    let last = Tensor::new(&[4], data.outer(19).to_vec()).unwrap();
    let f = forecast_fields(&model, &last, 0).unwrap();
    let z = model.evolve_forward(&model.encode(&last).unwrap(), 1).unwrap();
    let expect = model.decode(&z).unwrap();
    assert_eq!(f.data(), expect.data());
    assert!(forecast(&model, &last, 3, 20).is_err(), "1-D snapshots cannot form a field sequence");
}

#[test]
fn field_forecast_is_stamped_and_shaped() {
    let data = Tensor::from_fn(&[24, 4, 4], |i| ((i / 16) as f64 * 0.4 + (i % 16) as f64).sin());
    let cfg = KaeTrainConfig {
        epochs: 2,
        ..small_config(6)
    };
    let model = train_kae_snapshots(&data, &cfg).unwrap();
    let last = Tensor::new(&[4, 4], data.outer(23).to_vec()).unwrap();
    let seq = forecast(&model, &last, 9, 24).unwrap();
    assert_eq!(seq.len(), 10);
    assert_eq!(seq.t_start(), 24);
    assert!(seq.tensor().is_finite());
}

#[test]
fn checkpoint_round_trip_preserves_forecasts() {
    let (_, data) = rotation_data(30);
    let cfg = KaeTrainConfig {
        epochs: 3,
        ..small_config(5)
    };
    let model = train_kae_snapshots(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = KoopmanModel::load(dir.path()).unwrap();
    assert_eq!(back, model);
    let last = Tensor::new(&[4], data.outer(29).to_vec()).unwrap();
    assert_eq!(
        forecast_fields(&model, &last, 9).unwrap(),
        forecast_fields(&back, &last, 9).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn evolution_composes(a in 0usize..6, b in 0usize..6, theta in -3.0f64..3.0,
                          z in prop::array::uniform2(-2.0f64..2.0)) {
        let norm = FieldNormalizer::from_parts(vec![0.0; 3], 1.0).unwrap();
        let cfg = KaeTrainConfig { latent_dim: 2, hidden: 2, horizon: 1, ..KaeTrainConfig::default() };
        let mut model = KoopmanModel::init(&[3], norm, &cfg).unwrap();
        model.set_operators(rotation_2d(theta).scale(1.1), rotation_2d(-theta)).unwrap();
        let z = Tensor::new(&[2], z.to_vec()).unwrap();
        let whole = model.evolve_forward(&z, a + b).unwrap();
        let split = model.evolve_forward(&model.evolve_forward(&z, a).unwrap(), b).unwrap();
        prop_assert_eq!(whole, split);
    }

    #[test]
    fn rotations_preserve_latent_norm(steps in 0usize..40, theta in -3.0f64..3.0,
                                      z in prop::array::uniform2(-2.0f64..2.0)) {
        let norm = FieldNormalizer::from_parts(vec![0.0; 3], 1.0).unwrap();
        let cfg = KaeTrainConfig { latent_dim: 2, hidden: 2, horizon: 1, ..KaeTrainConfig::default() };
        let mut model = KoopmanModel::init(&[3], norm, &cfg).unwrap();
        let c = rotation_2d(theta);
        model.set_operators(c.clone(), c.transpose().unwrap()).unwrap();
        let z = Tensor::new(&[2], z.to_vec()).unwrap();
        let zs = model.evolve_forward(&z, steps).unwrap();
        prop_assert!((norm_of(&zs) - norm_of(&z)).abs() < 1e-12 * (1.0 + norm_of(&z)));
    }
}

fn norm_of(t: &Tensor) -> f64 {
    t.frobenius_norm()
}
