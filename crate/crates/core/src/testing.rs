//! Central finite-difference gradient oracle for test suites.
//!
//! Independent of the reverse-mode path: it only evaluates a loss closure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{ComputeGraph, NodeId};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

/// Central differences of `loss` with respect to every entry of `params[which]`.
pub fn finite_difference(
    params: &[Tensor],
    which: usize,
    step: f64,
    mut loss: impl FnMut(&[Tensor]) -> f64,
) -> Tensor {
    let mut work = params.to_vec();
    let mut out = Tensor::zeros(params[which].dims());
    for i in 0..params[which].len() {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + step;
        let up = loss(&work);
        work[which].data_mut()[i] = orig - step;
        let down = loss(&work);
        work[which].data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both norms are tiny.
pub fn relative_gradient_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff = analytic.sub(numeric).expect("gradient dims").frobenius_norm();
    let scale = analytic.frobenius_norm().max(numeric.frobenius_norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Outcome of one parameter of one finite-difference check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub name: &'static str,
    pub seed: u64,
    pub param: usize,
    pub error: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.error <= GRADIENT_TOLERANCE
    }
}

type Build = dyn Fn(&mut ComputeGraph, &[NodeId]) -> NodeId;

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], amplitude: f64) -> Tensor {
    Tensor::from_fn(dims, |_| rng.random_range(-amplitude..amplitude))
}

fn graph_loss(params: &[Tensor], build: &Build) -> f64 {
    let mut g = ComputeGraph::new();
    let ids: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = build(&mut g, &ids);
    g.value(out).item().expect("scalar loss")
}

fn check_graph(out: &mut Vec<GradientCheck>, name: &'static str, seed: u64, params: Vec<Tensor>, build: &Build) {
    let mut g = ComputeGraph::new();
    let ids: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &ids);
    let grads = g.backward(loss).expect("backward pass");
    for (i, id) in ids.iter().enumerate() {
        let numeric = finite_difference(&params, i, FD_STEP, |p| graph_loss(p, build));
        let analytic = grads.get(*id).expect("parameter gradient");
        out.push(GradientCheck {
            name,
            seed,
            param: i,
            error: relative_gradient_error(analytic, &numeric),
        });
    }
}

/// Squared distance to a fixed random target, so the loss is generic in `x`.
fn probe(g: &mut ComputeGraph, x: NodeId, seed: u64) -> NodeId {
    let dims = g.value(x).dims().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let w = g.input(uniform(&mut rng, &dims, 1.0));
    let d = g.sub(x, w).expect("same dims");
    g.mean_square(d)
}

/// Finite-difference checks of every graph primitive, plus one composed graph,
/// with inputs drawn from `seed`.
pub fn primitive_gradient_checks(seed: u64) -> Vec<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |dims: &[usize]| uniform(&mut rng, dims, 1.0);
    let mut out = Vec::new();
    let c = &mut out;
    let s = seed;
    check_graph(c, "matmul", s, vec![r(&[3, 4]), r(&[4, 2])], &move |g, p| {
        let y = g.matmul(p[0], p[1]).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "transpose", s, vec![r(&[3, 5])], &move |g, p| {
        let y = g.transpose(p[0]).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "add_bias", s, vec![r(&[4, 3]), r(&[3])], &move |g, p| {
        let y = g.add_bias(p[0], p[1]).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "add_channel_bias", s, vec![r(&[2, 3, 4, 4]), r(&[3])], &move |g, p| {
        let y = g.add_channel_bias(p[0], p[1]).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "conv2d stride 1", s, vec![r(&[2, 2, 5, 5]), r(&[3, 2, 3, 3])], &move |g, p| {
        let y = g.conv2d(p[0], p[1], 1, 0).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "conv2d stride 2", s, vec![r(&[2, 2, 8, 8]), r(&[3, 2, 4, 4])], &move |g, p| {
        let y = g.conv2d(p[0], p[1], 2, 1).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "conv_transpose2d", s, vec![r(&[2, 3, 4, 4]), r(&[3, 2, 4, 4])], &move |g, p| {
        let y = g.conv_transpose2d(p[0], p[1], 2, 1).unwrap();
        probe(g, y, s)
    });
    let (a, b) = (r(&[3, 3]), r(&[3, 3]));
    check_graph(c, "tanh", s, vec![a.clone()], &move |g, p| {
        let y = g.tanh(p[0]);
        probe(g, y, s)
    });
    check_graph(c, "add", s, vec![a.clone(), b.clone()], &move |g, p| {
        let y = g.add(p[0], p[1]).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "sub", s, vec![a.clone(), b.clone()], &move |g, p| {
        let y = g.sub(p[0], p[1]).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "scale", s, vec![a.clone()], &move |g, p| {
        let y = g.scale(p[0], -2.5);
        probe(g, y, s)
    });
    check_graph(c, "reshape", s, vec![b.clone()], &move |g, p| {
        let y = g.reshape(p[0], &[9, 1]).unwrap();
        probe(g, y, s)
    });
    check_graph(c, "mean_square", s, vec![b.clone()], &|g, p| g.mean_square(p[0]));
    check_graph(c, "mse", s, vec![a, b], &|g, p| g.mse(p[0], p[1]).unwrap());
    let x = r(&[2, 1, 8, 8]);
    let params = vec![r(&[2, 1, 4, 4]), r(&[2]), r(&[32, 3]), r(&[3])];
    check_graph(c, "composed", s, params, &move |g, p| {
        let xi = g.input(x.clone());
        let h = g.conv2d(xi, p[0], 2, 1).unwrap();
        let h = g.add_channel_bias(h, p[1]).unwrap();
        let h = g.tanh(h);
        let f = g.reshape(h, &[2, 32]).unwrap();
        let d = g.matmul(f, p[2]).unwrap();
        let d = g.add_bias(d, p[3]).unwrap();
        let a = probe(g, d, s);
        let b = g.mean_square(f);
        g.weighted_sum(&[(a, 1.0), (b, 0.3)]).unwrap()
    });
    out
}

/// Inverse and log-determinant of a square matrix by Gauss-Jordan elimination
/// with partial pivoting. Shares no code with the Cholesky routines.
pub fn dense_inverse_log_det(a: &Tensor) -> (Tensor, f64) {
    let n = a.dims()[0];
    assert_eq!(a.dims(), &[n, n], "square matrix expected");
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.outer(i).to_vec()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .expect("non-empty column");
        m.swap(p, c);
        inv.swap(p, c);
        let pivot = m[c][c];
        assert!(pivot != 0.0, "singular matrix");
        log_det += pivot.abs().ln();
        for j in 0..n {
            m[c][j] /= pivot;
            inv[c][j] /= pivot;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for j in 0..n {
                        m[r][j] -= f * m[c][j];
                        inv[r][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    let data = inv.into_iter().flatten().collect();
    (Tensor::new(&[n, n], data).expect("n × n"), log_det)
}
