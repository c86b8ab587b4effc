//! Finite-difference checks for every differentiable op.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfi_tensor::gradcheck::check_directional;
use vfi_tensor::nn::{Conv2d, GroupNorm, Linear};
use vfi_tensor::{Graph, ParamStore, ResizeMode, Tensor, Var};

const TOL: f64 = 1e-6;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, r)
}

/// Projects an arbitrary output onto a fixed random direction so the check
/// covers the full Jacobian, not just a sum.
fn project<'g>(g: &'g Graph<f64>, y: Var<'g, f64>) -> Var<'g, f64> {
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let w = g.constant(Tensor::randn(&y.shape(), &mut r));
    (y * w).sum()
}

fn check_inputs<F>(inputs: Vec<Tensor<f64>>, f: F) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let mut store = ParamStore::new();
    let mut inputs = inputs;
    let mut r = rng();
    let res = check_directional(&mut store, &mut inputs, |g, _, v| project(g, f(g, v)), 6, 1e-5, &mut r);
    res.rel_err
}

#[test]
fn elementwise_ops() {
    let mut r = rng();
    let a = randn(&[2, 3, 4, 5], &mut r);
    let b = randn(&[2, 3, 4, 5], &mut r);
    let err = check_inputs(vec![a, b], |_, v| {
        let s = v[0].mul(v[1]).add(v[0].silu()).sub(v[1].sigmoid());
        let t = v[0].square().scale(0.3).add_scalar(0.2).add(v[1].softplus());
        s.add(t).add(v[0].leaky_relu(0.2)).add(v[1].one_minus())
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn abs_and_relu_away_from_kinks() {
    let a = Tensor::from_vec(&[1, 1, 2, 3], vec![0.5, -0.7, 1.2, -2.0, 0.9, -0.3]).unwrap();
    let err = check_inputs(vec![a], |_, v| v[0].abs().add(v[0].relu()));
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn broadcasting_and_channel_ops() {
    let mut r = rng();
    let x = randn(&[2, 4, 3, 3], &mut r);
    let m = randn(&[2, 1, 3, 3], &mut r);
    let v = randn(&[2, 4], &mut r);
    let err = check_inputs(vec![x, m, v], |_, v| {
        let y = v[0].mul_map(v[1]).add_channel_vector(v[2]);
        let parts = Var::cat_channels(&[y.slice_channels(1, 2), v[0], v[1]]);
        parts.reshape(&[2, 7 * 9])
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn convolution_geometries() {
    for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 2, 1)] {
        let mut r = rng();
        let x = randn(&[2, 3, 6, 5], &mut r);
        let w = randn(&[4, 3, k, k], &mut r);
        let b = randn(&[4], &mut r);
        let err = check_inputs(vec![x, w, b], move |_, v| v[0].conv2d(v[1], Some(v[2]), stride, pad));
        assert!(err < TOL, "k={k} s={stride} p={pad}: rel err {err}");
    }
}

#[test]
fn resize_and_upsample() {
    let mut r = rng();
    let x = randn(&[1, 2, 8, 6], &mut r);
    let err = check_inputs(vec![x], |_, v| {
        let a = v[0].resize(4, 3, ResizeMode::Area);
        let b = v[0].resize(5, 7, ResizeMode::Bilinear).resize(4, 3, ResizeMode::Area);
        a.add(b).upsample_nearest2x()
    });
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn warp_wrt_features_and_offsets() {
    let mut r = rng();
    let phi = randn(&[2, 3, 5, 6], &mut r);
    // Offsets kept away from integer lattice points and well inside the domain
    // so the bilinear kinks and the clamp are not straddled by the probe.
    let off = Tensor::from_vec(
        &[2, 2, 5, 6],
        (0..120).map(|i| 0.13 + 0.61 * ((i * 37 % 11) as f64 / 11.0) - 0.5).collect(),
    )
    .unwrap();
    let mut store = ParamStore::new();
    let mut inputs = vec![phi, off];
    let res = check_directional(
        &mut store,
        &mut inputs,
        |g, _, v| project(g, v[0].warp(v[1])),
        6,
        1e-6,
        &mut r,
    );
    assert!(res.rel_err < 1e-5, "rel err {}", res.rel_err);
}

#[test]
fn group_norm_and_layers() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::same3(&mut store, "c", 4, 6, &mut r);
    let gn = GroupNorm::new(&mut store, "gn", 6, 3);
    let lin = Linear::new(&mut store, "l", 5, 6, &mut r);
    // Non-trivial affine parameters.
    for id in store.ids().collect::<Vec<_>>() {
        let t = Tensor::randn(store.get(id).shape(), &mut r);
        *store.get_mut(id) = t;
    }
    let mut inputs = vec![randn(&[2, 4, 3, 4], &mut r), randn(&[2, 5], &mut r)];
    let res = check_directional(
        &mut store,
        &mut inputs,
        |g, ps, v| {
            let h = gn.forward(g, ps, conv.forward(g, ps, v[0]));
            let e = lin.forward(g, ps, v[1]);
            project(g, h.add_channel_vector(e).silu())
        },
        6,
        1e-5,
        &mut r,
    );
    assert!(res.rel_err < TOL, "rel err {}", res.rel_err);
}

#[test]
fn batched_matmul_all_transposes_and_softmax() {
    for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
        let mut r = rng();
        let a = if ta { randn(&[2, 4, 3], &mut r) } else { randn(&[2, 3, 4], &mut r) };
        let b = if tb { randn(&[2, 5, 4], &mut r) } else { randn(&[2, 4, 5], &mut r) };
        let err = check_inputs(vec![a, b], move |_, v| v[0].bmm(v[1], ta, tb).softmax_last());
        assert!(err < TOL, "ta={ta} tb={tb}: rel err {err}");
    }
}

#[test]
fn gather_rows_scatters_back() {
    let mut r = rng();
    let table = randn(&[4, 3], &mut r);
    let err = check_inputs(vec![table], |_, v| v[0].gather_rows(&[0, 2, 2, 3, 1, 0], 1, 2, 3));
    assert!(err < TOL, "rel err {err}");
}

#[test]
fn detach_blocks_gradient() {
    let g = Graph::<f64>::new();
    let x = g.variable(Tensor::full(&[3], 2.0));
    let y = x.mul(x.detach()).sum();
    let grads = g.backward(y);
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn repeated_param_binding_accumulates() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("p", Tensor::full(&[2], 3.0));
    let g = Graph::new();
    let a = g.param(&store, id);
    let b = g.param(&store, id);
    let loss = a.add(b).sum();
    let grads = g.backward(loss).for_store(&store);
    assert_eq!(grads[0].as_ref().unwrap().data(), &[2.0, 2.0]);
}
