use pistm_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Glorot-uniform weights for a layer with the given fan-in and fan-out.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, dims: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(dims, |_| rng.random_range(-a..a))
}

/// Identity plus uniform noise of the given amplitude.
pub(crate) fn near_identity(rng: &mut ChaCha8Rng, n: usize, noise: f64) -> Tensor {
    let mut t = Tensor::eye(n);
    if noise > 0.0 {
        for v in t.data_mut() {
            *v += rng.random_range(-noise..noise);
        }
    }
    t
}

/// Fisher-Yates shuffle of `0..n`.
pub(crate) fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// `x·W + b` for a row-major batch `x: [n, a]`.
pub(crate) fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> pistm_core::Result<Tensor> {
    let mut y = pistm_core::linalg::matmul(x, w)?;
    let m = b.len();
    for i in 0..y.dims()[0] {
        for (v, bias) in y.outer_mut(i)[..m].iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Ok(y)
}
