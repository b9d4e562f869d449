//! Symbolic gradients and HVPs against central differences on random graphs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use tdi_autodiff::*;

fn rand_tensor(rng: &mut Xoshiro256StarStar, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn rand_params(rng: &mut Xoshiro256StarStar, layout: &Arc<Layout>, scale: f64) -> ParamVector {
    let data = (0..layout.len()).map(|_| rng.random_range(-scale..scale)).collect();
    ParamVector::from_data(layout.clone(), data).unwrap()
}

/// A small random network exercising a rotating head so every op in the set
/// appears across trials. Returns (graph, scalar output, inputs).
fn random_net(rng: &mut Xoshiro256StarStar, variant: usize) -> (Graph, NodeId, Vec<Tensor>) {
    let (n, din, h, dout) = (3, 4, 5, 3);
    let mut l = Layout::new();
    l.push("w0", vec![din, h]);
    l.push("b0", vec![h]);
    l.push("w1", vec![h, dout]);
    l.push("b1", vec![dout]);
    let mut g = Graph::new(Arc::new(l));
    let x = g.input(&[n, din]);
    let h0 = g.affine(x, g.param(0), g.param(1)).unwrap();
    let a0 = if variant % 2 == 0 {
        g.leaky_relu(h0, 0.01).unwrap()
    } else {
        g.tanh(h0).unwrap()
    };
    let out = g.affine(a0, g.param(2), g.param(3)).unwrap();
    let mut inputs = vec![rand_tensor(rng, &[n, din], 1.0)];
    let j = match variant % 5 {
        0 => {
            let y = g.input(&[n, dout]);
            inputs.push(rand_tensor(rng, &[n, dout], 1.0));
            let se = g.squared_error(out, y).unwrap();
            g.scale(se, 0.5).unwrap()
        }
        1 => {
            let labels = g.input(&[n]);
            inputs.push(Tensor::vector((0..n).map(|_| rng.random_range(0..dout) as f64).collect()));
            g.cross_entropy(out, labels).unwrap()
        }
        2 => {
            let m = g.max_cols(out).unwrap();
            let m2 = g.mul(m, m).unwrap();
            g.sum(m2).unwrap()
        }
        3 => {
            // softmax probability of the argmax class, plus a log/div path
            let p = g.softmax(out).unwrap();
            let conf = g.pick(p, Selector::ArgmaxOf(out)).unwrap();
            let lg = g.log(conf).unwrap();
            let e = g.exp(out).unwrap();
            let one = g.constant(Tensor::full(&[n, dout], 1.0));
            let d = g.add(e, one).unwrap();
            let q = g.div(out, d).unwrap();
            let s1 = g.sum(lg).unwrap();
            let s2 = g.sum(q).unwrap();
            g.sub(s1, s2).unwrap()
        }
        _ => {
            let idx = g.input(&[n]);
            inputs.push(Tensor::vector((0..n).map(|_| rng.random_range(0..dout) as f64).collect()));
            let q = g.gather(out, idx).unwrap();
            let t = g.transpose(q).unwrap();
            let qq = g.matmul(t, q).unwrap();
            let neg = g.neg(qq).unwrap();
            let sh = g.add_scalar(neg, 0.3).unwrap();
            g.sum(sh).unwrap()
        }
    };
    (g, j, inputs)
}

fn random_conv_net(rng: &mut Xoshiro256StarStar) -> (Graph, NodeId, Vec<Tensor>) {
    let mut l = Layout::new();
    l.push("k0", vec![2, 1, 3, 3]);
    l.push("c0", vec![2]);
    l.push("k1", vec![2, 2, 3, 3]);
    l.push("w", vec![2 * 3 * 3, 1]);
    let mut g = Graph::new(Arc::new(l));
    let x = g.input(&[2, 1, 6, 6]);
    let y = g.input(&[2, 1]);
    let c0 = g.conv2d(x, g.param(0), 2, 1).unwrap();
    let bias = g.broadcast_channels(g.param(1), &[2, 2, 3, 3]).unwrap();
    let c0 = g.add(c0, bias).unwrap();
    let a0 = g.tanh(c0).unwrap();
    let c1 = g.conv2d(a0, g.param(2), 1, 1).unwrap();
    let a1 = g.leaky_relu(c1, 0.01).unwrap();
    let flat = g.reshape(a1, &[2, 18]).unwrap();
    let out = g.matmul(flat, g.param(3)).unwrap();
    let se = g.squared_error(out, y).unwrap();
    (g, se, vec![rand_tensor(rng, &[2, 1, 6, 6], 1.0), rand_tensor(rng, &[2, 1], 1.0)])
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(11);
    let mut worst = 0.0f64;
    for trial in 0..120 {
        let (g, j, inputs) = random_net(&mut rng, trial);
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let p = rand_params(&mut rng, g.layout(), 0.8);
        let ad = grad(&g, j, &p, &refs).unwrap();
        let fd = finite_diff_grad(&g, j, &p, &refs, 1e-5).unwrap();
        let err = max_relative_error(&ad.grad, &fd).unwrap();
        worst = worst.max(err);
        assert!(err < 1e-6, "trial {trial}: relative error {err}");
    }
    eprintln!("worst gradient relative error {worst:e}");
}

#[test]
fn conv_gradients_and_hvps_match_central_differences() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(5);
    for trial in 0..20 {
        let (g, j, inputs) = random_conv_net(&mut rng);
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let p = rand_params(&mut rng, g.layout(), 0.7);
        let ad = grad(&g, j, &p, &refs).unwrap();
        let fd = finite_diff_grad(&g, j, &p, &refs, 1e-5).unwrap();
        let err = max_relative_error(&ad.grad, &fd).unwrap();
        assert!(err < 1e-6, "conv trial {trial}: grad error {err}");
        let v = rand_params(&mut rng, g.layout(), 1.0);
        let hv = hvp(&g, j, &p, &refs, &v).unwrap();
        let fd_hv = finite_diff_hvp(&g, j, &p, &refs, &v, 1e-5).unwrap();
        let err = max_relative_error(&hv, &fd_hv).unwrap();
        assert!(err < 1e-5, "conv trial {trial}: hvp error {err}");
    }
}

#[test]
fn hvps_match_gradient_differences() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(23);
    for trial in 0..120 {
        let (g, j, inputs) = random_net(&mut rng, trial);
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let p = rand_params(&mut rng, g.layout(), 0.8);
        let v = rand_params(&mut rng, g.layout(), 1.0);
        let hv = hvp(&g, j, &p, &refs, &v).unwrap();
        let fd = finite_diff_hvp(&g, j, &p, &refs, &v, 1e-5).unwrap();
        let err = max_relative_error(&hv, &fd).unwrap();
        assert!(err < 1e-5, "trial {trial}: relative error {err}");
    }
}

#[test]
fn hvp_is_symmetric() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(31);
    for trial in 0..120 {
        let (g, j, inputs) = random_net(&mut rng, trial);
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let p = rand_params(&mut rng, g.layout(), 0.8);
        let u = rand_params(&mut rng, g.layout(), 1.0);
        let v = rand_params(&mut rng, g.layout(), 1.0);
        let prog = HvpProgram::new(&g, j).unwrap();
        let uhv = u.dot(&prog.run(&p, &refs, &v).unwrap()).unwrap();
        let vhu = v.dot(&prog.run(&p, &refs, &u).unwrap()).unwrap();
        assert!((uhv - vhu).abs() <= 1e-8 * uhv.abs().max(1.0), "trial {trial}: {uhv} vs {vhu}");
    }
}

#[test]
fn mean_loss_gradient_is_mean_of_per_example_gradients() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(3);
    let mut l = Layout::new();
    l.push("w0", vec![4, 6]);
    l.push("b0", vec![6]);
    l.push("w1", vec![6, 1]);
    let layout = Arc::new(l);
    let build = |n: usize| {
        let mut g = Graph::new(layout.clone());
        let x = g.input(&[n, 4]);
        let y = g.input(&[n, 1]);
        let h = g.affine(x, g.param(0), g.param(1)).unwrap();
        let a = g.leaky_relu(h, 0.01).unwrap();
        let f = g.matmul(a, g.param(2)).unwrap();
        let d = g.sub(f, y).unwrap();
        let d2 = g.mul(d, d).unwrap();
        let j = g.mean(d2).unwrap();
        (g, j)
    };
    let p = rand_params(&mut rng, &layout, 0.5);
    let xs: Vec<Tensor> = (0..5).map(|_| rand_tensor(&mut rng, &[4], 1.0)).collect();
    let ys: Vec<Tensor> = (0..5).map(|_| rand_tensor(&mut rng, &[1], 1.0)).collect();
    let (gb, jb) = build(5);
    let xb = Tensor::stack(&xs.iter().collect::<Vec<_>>()).unwrap();
    let yb = Tensor::stack(&ys.iter().collect::<Vec<_>>()).unwrap();
    let full = grad(&gb, jb, &p, &[&xb, &yb]).unwrap();
    let (g1, j1) = build(1);
    let batch: Vec<Vec<Tensor>> = xs.iter().zip(&ys).map(|(x, y)| vec![x.unsqueeze0(), y.unsqueeze0()]).collect();
    let per = per_example_grads(&g1, j1, &p, &batch).unwrap();
    let mut mean = ParamVector::zeros(layout.clone());
    for r in &per {
        mean.axpy(1.0 / 5.0, &r.grad).unwrap();
    }
    assert!(mean.max_abs_diff(&full.grad).unwrap() < 1e-12);

    let dup = per_example_grads(&g1, j1, &p, &[batch[0].clone(), batch[0].clone()]).unwrap();
    assert_eq!(dup[0], dup[1]);
}

#[test]
fn evaluation_examples() {
    let mut l = Layout::new();
    l.push("unused", vec![1]);
    let layout = Arc::new(l);
    let p = ParamVector::zeros(layout.clone());

    let mut g = Graph::new(layout.clone());
    let x = g.input(&[1]);
    let y = g.leaky_relu(x, 0.01).unwrap();
    let out = g.evaluate(&p, &[&Tensor::vector(vec![-1.0])], &[y, x]).unwrap();
    assert_eq!(out[0].data(), &[-0.01]);
    assert_eq!(out[1].data(), &[-1.0]);

    let mut g = Graph::new(layout.clone());
    let eye = g.constant(Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
    let m = g.input(&[2, 2]);
    let prod = g.matmul(eye, m).unwrap();
    let mt = Tensor::matrix(&[vec![1.5, -2.0], vec![3.0, 4.25]]);
    assert_eq!(g.evaluate(&p, &[&mt], &[prod]).unwrap()[0], mt);

    let wrong = Tensor::matrix(&[vec![1.0, 2.0, 3.0]]);
    match g.evaluate(&p, &[&wrong], &[prod]) {
        Err(AdError::Shape { node, .. }) => assert_eq!(node, m.index()),
        other => panic!("expected shape error, got {other:?}"),
    }
    assert!(matches!(g.matmul(m, g.param(0)), Err(AdError::Shape { .. })));
}

#[test]
fn evaluation_is_bit_deterministic() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(99);
    let (g, j, inputs) = random_net(&mut rng, 3);
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let p = rand_params(&mut rng, g.layout(), 0.8);
    let a = grad(&g, j, &p, &refs).unwrap();
    let b = grad(&g, j, &p, &refs).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.grad, b.grad);
}

#[test]
fn max_gradient_ties_route_to_first_index() {
    let mut l = Layout::new();
    l.push("q", vec![1, 3]);
    let mut g = Graph::new(Arc::new(l));
    let m = g.max_cols(g.param(0)).unwrap();
    let s = g.sum(m).unwrap();
    let p = ParamVector::from_data(g.layout().clone(), vec![0.1, 0.9, 0.9]).unwrap();
    let r = grad(&g, s, &p, &[]).unwrap();
    assert_eq!(r.value, 0.9);
    assert_eq!(r.grad.data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn finite_diff_examples() {
    let mut l = Layout::new();
    l.push("theta", vec![]);
    let mut g = Graph::new(Arc::new(l));
    let t2 = g.mul(g.param(0), g.param(0)).unwrap();
    let j = g.scale(t2, 0.5).unwrap();
    let p = ParamVector::from_data(g.layout().clone(), vec![3.0]).unwrap();
    let fd = finite_diff_grad(&g, j, &p, &[], 1e-4).unwrap();
    assert!((fd.data()[0] - 3.0).abs() < 1e-8);
    assert!(matches!(finite_diff_grad(&g, j, &p, &[], 0.0), Err(AdError::InvalidStep(_))));
    assert!(matches!(finite_diff_grad(&g, j, &p, &[], -1.0), Err(AdError::InvalidStep(_))));
    let c = g.scalar(2.0);
    let fd = finite_diff_grad(&g, c, &p, &[], 1e-4).unwrap();
    assert_eq!(fd.data(), &[0.0]);
}

#[test]
fn tnsr_round_trip_random_shapes() {
    use proptest::prelude::*;
    proptest!(|(dims in proptest::collection::vec(0usize..4, 0..4), seed in any::<u64>())| {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let t = rand_tensor(&mut rng, &dims, 10.0);
        let mut buf = Vec::new();
        write_tnsr(&mut buf, &t).unwrap();
        prop_assert_eq!(read_tnsr(&buf[..]).unwrap(), t);
    });
}
