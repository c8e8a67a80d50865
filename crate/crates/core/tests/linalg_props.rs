use pistm_core::linalg::{cholesky, cholesky_solve, matmul};
use pistm_core::{io, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = Tensor::from_fn(&[n, n], |_| rng.random_range(-1.0..1.0));
    let mut a = matmul(&b, &b.transpose().unwrap()).unwrap();
    for i in 0..n {
        let v = a.at(i, i) + n as f64 * 1e-3;
        a.set(i, i, v);
    }
    a
}

#[test]
fn cholesky_residual_up_to_200() {
    for (n, seed) in [(1, 1), (5, 2), (17, 3), (64, 4), (128, 5), (200, 6)] {
        let a = random_spd(n, seed);
        let l = cholesky(&a).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                assert_eq!(l.at(i, j), 0.0);
            }
        }
        let llt = matmul(&l, &l.transpose().unwrap()).unwrap();
        let rel = llt.sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(rel <= 1e-10, "n={n}: residual {rel:e}");
    }
}

#[test]
fn solve_round_trip() {
    let a = random_spd(30, 9);
    let l = cholesky(&a).unwrap();
    let b = Tensor::from_fn(&[30, 3], |i| (i as f64 * 0.37).cos());
    let x = cholesky_solve(&l, &b).unwrap();
    let back = matmul(&a, &x).unwrap();
    assert!(back.sub(&b).unwrap().max_abs() <= 1e-9);
}

proptest! {
    #[test]
    fn tensor_file_roundtrip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_fn(&dims, |_| rng.random::<f64>() * 1e6 - 5e5);
        let back = io::decode_tensor(&io::encode_tensor(&t)).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn matmul_associative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::from_fn(&[3, 4], |_| rng.random_range(-1.0..1.0));
        let b = Tensor::from_fn(&[4, 2], |_| rng.random_range(-1.0..1.0));
        let c = Tensor::from_fn(&[2, 5], |_| rng.random_range(-1.0..1.0));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.sub(&right).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn conv_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[1, 2, 6, 6], |_| rng.random_range(-1.0..1.0));
        let k = Tensor::from_fn(&[3, 2, 4, 4], |_| rng.random_range(-1.0..1.0));
        let a = pistm_core::conv::conv2d(&x, &k, 2, 1).unwrap();
        let b = pistm_core::conv::conv2d(&x, &k, 2, 1).unwrap();
        prop_assert_eq!(a, b);
    }
}
