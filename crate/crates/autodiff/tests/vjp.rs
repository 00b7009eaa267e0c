//! Every primitive's vector-Jacobian product against central differences.

use hist_autodiff::gradcheck::{finite_difference_grads, max_relative_error};
use hist_autodiff::{Graph, ParamStore, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-7;

type Build = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Contract the op output with fixed random weights so every output entry
/// contributes to a scalar loss.
fn loss_of(params: &ParamStore<f64>, weights: &Tensor<f64>, build: Build) -> (f64, Vec<Tensor<f64>>) {
    let mut g = Graph::new();
    let inputs: Vec<Var> = params.ids().map(|id| g.param(params, id).unwrap()).collect();
    let out = build(&mut g, &inputs).unwrap();
    let w = g.constant(weights.clone()).unwrap();
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum_all(prod).unwrap();
    let value = g.value(loss).item();
    let grads = g.backward(loss).unwrap().into_param_grads(params);
    (value, grads)
}

fn check(name: &str, shapes: &[[usize; 2]], seed: u64, build: Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    for (i, s) in shapes.iter().enumerate() {
        params.add(format!("x{i}"), random_tensor(&mut rng, s[0], s[1])).unwrap();
    }
    let out_shape = {
        let mut g = Graph::new();
        let inputs: Vec<Var> = params.ids().map(|id| g.param(&params, id).unwrap()).collect();
        let out = build(&mut g, &inputs).unwrap();
        g.shape(out)
    };
    let weights = random_tensor(&mut rng, out_shape[0], out_shape[1]);
    let (_, analytic) = loss_of(&params, &weights, build);
    let numeric = finite_difference_grads(&params, STEP, |p| loss_of(p, &weights, build).0);
    let (err, at) = max_relative_error(&analytic, &numeric, FLOOR);
    assert!(err < TOL, "{name}: relative error {err:e} at {at:?}");
}

fn all_ops() -> Vec<(&'static str, Vec<[usize; 2]>, Build)> {
    vec![
        ("matmul", vec![[3, 4], [4, 2]], |g, x| g.matmul(x[0], x[1])),
        ("transpose", vec![[3, 4]], |g, x| g.transpose(x[0])),
        ("add", vec![[3, 4], [3, 4]], |g, x| g.add(x[0], x[1])),
        ("add_row", vec![[3, 4], [1, 4]], |g, x| g.add(x[0], x[1])),
        ("sub", vec![[3, 4], [3, 4]], |g, x| g.sub(x[0], x[1])),
        ("mul", vec![[3, 4], [3, 4]], |g, x| g.mul(x[0], x[1])),
        ("scale", vec![[2, 3]], |g, x| g.scale(x[0], -1.7)),
        ("concat_rows", vec![[2, 3], [1, 3]], |g, x| g.concat_rows(&[x[0], x[1], x[0]])),
        ("slice_cols", vec![[3, 5]], |g, x| g.slice_cols(x[0], 1, 3)),
        ("slice_rows", vec![[5, 3]], |g, x| g.slice_rows(x[0], 1, 3)),
        ("gather_rows", vec![[4, 3]], |g, x| g.gather_rows(x[0], &[2, 0, 2])),
        ("sum_rows", vec![[3, 4]], |g, x| g.sum_rows(x[0])),
        ("sum_cols", vec![[3, 4]], |g, x| g.sum_cols(x[0])),
        ("mean_rows", vec![[3, 4]], |g, x| g.mean_rows(x[0])),
        ("mean_cols", vec![[3, 4]], |g, x| g.mean_cols(x[0])),
        ("sum_all", vec![[3, 4]], |g, x| g.sum_all(x[0])),
        ("sigmoid", vec![[3, 4]], |g, x| g.sigmoid(x[0])),
        ("tanh", vec![[3, 4]], |g, x| g.tanh(x[0])),
        ("leaky_relu", vec![[3, 4]], |g, x| g.leaky_relu(x[0], 0.01)),
        ("softmax_rows", vec![[3, 5]], |g, x| g.softmax_rows(x[0])),
        ("row_norms", vec![[3, 4]], |g, x| g.row_norms(x[0])),
        ("cosine", vec![[3, 4], [5, 4]], |g, x| g.cosine(x[0], x[1], 1e-12)),
        ("cosine_self", vec![[4, 3]], |g, x| g.cosine(x[0], x[0], 1e-12)),
        ("mse", vec![[3, 2], [3, 2]], |g, x| g.mse(x[0], x[1])),
        ("affine", vec![[3, 4], [4, 2], [1, 2]], |g, x| g.affine(x[0], x[1], x[2])),
    ]
}

#[test]
fn every_primitive_matches_finite_differences() {
    for (seed, (name, shapes, build)) in all_ops().into_iter().enumerate() {
        for trial in 0..5 {
            check(name, &shapes, 1000 * seed as u64 + trial, build);
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(3, 4, vals).unwrap()).unwrap();
        let s = g.softmax_rows(x).unwrap();
        let v = g.value(s);
        for r in 0..3 {
            prop_assert!(v.row(r).iter().all(|&p| p >= 0.0));
            let total: f64 = v.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_is_bounded(a in prop::collection::vec(-5.0f64..5.0, 9), b in prop::collection::vec(-5.0f64..5.0, 6)) {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(3, 3, a).unwrap()).unwrap();
        let b = g.constant(Tensor::new(2, 3, b).unwrap()).unwrap();
        let c = g.cosine(a, b, 1e-12).unwrap();
        prop_assert!(g.value(c).data().iter().all(|&v| (-1.0 - 1e-6..=1.0 + 1e-6).contains(&v)));
    }

    #[test]
    fn cosine_f32_is_bounded(a in prop::collection::vec(-5.0f32..5.0, 8)) {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::new(4, 2, a).unwrap()).unwrap();
        let c = g.cosine(a, a, 1e-12).unwrap();
        prop_assert!(g.value(c).data().iter().all(|&v| (-1.0 - 1e-6..=1.0 + 1e-6).contains(&v)));
    }
}
