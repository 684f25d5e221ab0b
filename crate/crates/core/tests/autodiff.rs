mod common;

use common::{tensor, weighted_sum};
use rand::Rng;
use trajid::autodiff::{BnMode, Graph, OptimizerConfig, OptimizerState, RunningStats, Tensor};
use trajid::rng::seeded;

/// Adam on f(w) = w², written out independently of the library.
fn adam_oracle(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut path = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t as i32));
        let vhat = v / (1.0 - b2.powi(t as i32));
        w -= lr * mhat / (vhat.sqrt() + eps);
        path.push(w);
    }
    path
}

#[test]
fn adam_follows_the_scalar_recurrence() {
    let lr = 0.1;
    let oracle = adam_oracle(1.0, lr, 100);
    let mut opt = OptimizerState::<f64>::new(OptimizerConfig::Adam {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    })
    .unwrap();
    let mut w = [1.0f64];
    for (t, want) in oracle.iter().enumerate() {
        let g = [2.0 * w[0]];
        opt.step(&mut [&mut w[..]], &[&g[..]]).unwrap();
        assert!((w[0] - want).abs() < 1e-12, "step {}: {} vs {want}", t + 1, w[0]);
    }
    assert_eq!(opt.step, 100);
    assert!(w[0].abs() < 0.1);
}

#[test]
fn gradients_scale_with_the_loss() {
    let mut rng = seeded(4);
    let x = tensor(&mut rng, &[2, 5, 3]);
    let w = tensor(&mut rng, &[4, 3, 3]);
    let r = tensor(&mut rng, &[2, 5, 4]);
    let grads = |a: f64| {
        let mut g = Graph::new();
        let (xv, wv) = (g.leaf(x.clone(), true), g.leaf(w.clone(), true));
        let y = g.conv1d(xv, wv, None, 1, 1).unwrap();
        let y = g.relu(y);
        let s = weighted_sum(&mut g, y, &r);
        let loss = g.scale(s, a);
        g.backward(loss).unwrap();
        [g.grad(xv).unwrap().to_vec(), g.grad(wv).unwrap().to_vec()]
    };
    let base = grads(1.0);
    let scaled = grads(-2.5);
    for (b, s) in base.iter().zip(&scaled) {
        for (p, q) in b.iter().zip(s) {
            assert!((q + 2.5 * p).abs() < 1e-12);
        }
    }
}

#[test]
fn batchnorm_eval_is_a_fixed_affine_map() {
    let mut rng = seeded(8);
    let ch = 3;
    let mut rs = RunningStats {
        mean: vec![0.5, -1.0, 2.0],
        var: vec![4.0, 0.25, 1.0],
    };
    let gamma = Tensor::new(vec![ch], vec![2.0, -1.0, 0.5]).unwrap();
    let beta = Tensor::new(vec![ch], vec![0.1, 0.2, 0.3]).unwrap();
    let x = tensor(&mut rng, &[2, 4, ch]);
    let mut g = Graph::new();
    let (xv, gv, bv) = (g.leaf(x.clone(), false), g.leaf(gamma.clone(), false), g.leaf(beta.clone(), false));
    let y = g.batchnorm1d(xv, gv, bv, BnMode::Eval, &mut rs, 0.1, 1e-5).unwrap();
    for (i, (&xi, &yi)) in x.data().iter().zip(g.value(y).data()).enumerate() {
        let c = i % ch;
        let want = gamma.data()[c] * (xi - rs.mean[c]) / (rs.var[c] + 1e-5).sqrt() + beta.data()[c];
        assert!((yi - want).abs() < 1e-12);
    }
    // Eval mode leaves the running statistics alone.
    assert_eq!(rs.var, [4.0, 0.25, 1.0]);
}

#[test]
fn batchnorm_train_updates_running_stats() {
    let x = Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let mut rs = RunningStats::<f64>::new(1);
    let mut g = Graph::new();
    let xv = g.leaf(x, false);
    let gv = g.leaf(Tensor::full(&[1], 1.0), false);
    let bv = g.leaf(Tensor::zeros(&[1]), false);
    g.batchnorm1d(xv, gv, bv, BnMode::Train, &mut rs, 0.1, 1e-5).unwrap();
    // Batch mean 3, population variance 3.5.
    assert!((rs.mean[0] - 0.3).abs() < 1e-15);
    assert!((rs.var[0] - (0.9 + 0.35)).abs() < 1e-15);
    // A single position cannot be standardized.
    let mut g = Graph::new();
    let xv = g.leaf(Tensor::full(&[1, 1, 1], 1.0), false);
    let gv = g.leaf(Tensor::full(&[1], 1.0), false);
    let bv = g.leaf(Tensor::zeros(&[1]), false);
    assert!(g.batchnorm1d(xv, gv, bv, BnMode::Train, &mut rs, 0.1, 1e-5).is_err());
}

#[test]
fn single_precision_gradients_agree_loosely() {
    // f32 forward/backward against f64 central differences of the same graph.
    for seed in 0..20 {
        let mut rng = seeded(seed);
        let (b, cin, cout, len) = (2, rng.gen_range(1..4), rng.gen_range(1..4), 5);
        let x = tensor(&mut rng, &[b, len, cin]);
        let w = tensor(&mut rng, &[cout, cin, 3]);
        let r = tensor(&mut rng, &[b, len, cout]);
        let mut g = Graph::<f32>::new();
        let (xv, wv) = (g.leaf(x.cast(), true), g.leaf(w.cast(), true));
        let y = g.conv1d(xv, wv, None, 1, 1).unwrap();
        let rv = g.leaf(r.cast(), false);
        let p = g.mul(y, rv).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        let analytic: Vec<f64> = g.grad(wv).unwrap().iter().map(|&v| f64::from(v)).collect();
        let numeric: Vec<f64> = (0..w.numel())
            .map(|i| {
                let eval = |d: f64| {
                    let mut wp = w.clone();
                    wp.data_mut()[i] += d;
                    let mut g = Graph::<f64>::new();
                    let (xv, wv) = (g.leaf(x.clone(), false), g.leaf(wp, false));
                    let y = g.conv1d(xv, wv, None, 1, 1).unwrap();
                    let s = weighted_sum(&mut g, y, &r);
                    g.value(s).item().unwrap()
                };
                (eval(1e-4) - eval(-1e-4)) / 2e-4
            })
            .collect();
        assert!(common::rel_err(&analytic, &numeric) < 1e-2, "seed {seed}");
    }
}

#[test]
fn label_out_of_range_is_an_error() {
    let mut g = Graph::<f64>::new();
    let z = g.leaf(Tensor::zeros(&[2, 3]), true);
    assert!(g.softmax_cross_entropy(z, &[0, 3]).is_err());
    assert!(g.softmax_cross_entropy(z, &[0]).is_err());
}
