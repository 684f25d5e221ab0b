//! Helpers shared by integration tests: central finite differences in f64.
#![allow(dead_code)]

use rand::Rng;
use trajid::autodiff::{BnMode, Graph, RunningStats, Tensor, Var};
use trajid::model::{ModelConfig, ResNet1d};

pub mod protocol;
use trajid::rng::{seeded, SeededRng};

/// Small enough that a perturbation almost never carries a ReLU input of the
/// full network across zero, large enough for f64 round-off to stay near 1e-8.
pub const FD_STEP: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-4;

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Uniform values in ±1 kept at least `gap` away from zero, so ReLU kinks are
/// never within a finite-difference step.
pub fn values(rng: &mut SeededRng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

pub fn tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), values(rng, n, 1e-2)).unwrap()
}

/// Compare backward gradients of `build`'s scalar output with respect to
/// every input against central differences over all coordinates.
pub fn check<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &vars);
        g.value(out).item().unwrap()
    };
    for (k, v) in vars.iter().enumerate() {
        let grad = g.grad(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (i, &a) in grad.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
            analytic.push(a);
        }
    }
    rel_err(&analytic, &numeric)
}

/// Reduce `y` to a scalar with fixed random weights so every output element
/// gets a distinct upstream gradient.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, weights: &Tensor<f64>) -> Var {
    let w = g.leaf(weights.clone(), false);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

/// Name and relative error of every autodiff op for one seed.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = seeded(seed);
    let mut out = Vec::new();

    // conv1d over a few geometries, with and without bias.
    let (b, cin, cout, len) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(3..=7));
    let (stride, pad, kernel) = [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1), (1, 2, 3)][rng.gen_range(0..5)];
    let x = tensor(&mut rng, &[b, len, cin]);
    let w = tensor(&mut rng, &[cout, cin, kernel]);
    let bias = tensor(&mut rng, &[cout]);
    let out_len = trajid::autodiff::conv_out_len(len, kernel, stride, pad).unwrap();
    let r = tensor(&mut rng, &[b, out_len, cout]);
    out.push((
        "conv1d",
        check(&[x.clone(), w.clone(), bias], |g, v| {
            let y = g.conv1d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            weighted_sum(g, y, &r)
        }),
    ));
    out.push((
        "conv1d_nobias",
        check(&[x, w], |g, v| {
            let y = g.conv1d(v[0], v[1], None, stride, pad).unwrap();
            weighted_sum(g, y, &r)
        }),
    ));

    // batchnorm in both modes.
    let (b, len, ch) = (rng.gen_range(2..=4), rng.gen_range(1..=4), rng.gen_range(1..=3));
    let x = tensor(&mut rng, &[b, len, ch]);
    let gamma = tensor(&mut rng, &[ch]);
    let beta = tensor(&mut rng, &[ch]);
    let r = tensor(&mut rng, &[b, len, ch]);
    out.push((
        "batchnorm1d_train",
        check(&[x.clone(), gamma.clone(), beta.clone()], |g, v| {
            let mut rs = RunningStats::new(ch);
            let y = g.batchnorm1d(v[0], v[1], v[2], BnMode::Train, &mut rs, 0.1, 1e-5).unwrap();
            weighted_sum(g, y, &r)
        }),
    ));
    let mean = values(&mut rng, ch, 0.0);
    let var: Vec<f64> = (0..ch).map(|_| rng.gen_range(0.2..2.0)).collect();
    out.push((
        "batchnorm1d_eval",
        check(&[x, gamma, beta], |g, v| {
            let mut rs = RunningStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            let y = g.batchnorm1d(v[0], v[1], v[2], BnMode::Eval, &mut rs, 0.1, 1e-5).unwrap();
            weighted_sum(g, y, &r)
        }),
    ));

    // Elementwise ops.
    let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=3)];
    let a = tensor(&mut rng, &shape);
    let c = tensor(&mut rng, &shape);
    let r = tensor(&mut rng, &shape);
    out.push((
        "relu",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, &r)
        }),
    ));
    out.push((
        "add",
        check(&[a.clone(), c.clone()], |g, v| {
            let y = g.add(v[0], v[1]).unwrap();
            weighted_sum(g, y, &r)
        }),
    ));
    out.push((
        "mul",
        check(&[a.clone(), c], |g, v| {
            let y = g.mul(v[0], v[1]).unwrap();
            weighted_sum(g, y, &r)
        }),
    ));
    let k: f64 = rng.gen_range(-2.0..2.0);
    out.push((
        "scale",
        check(std::slice::from_ref(&a), |g, v| {
            let y = g.scale(v[0], k);
            weighted_sum(g, y, &r)
        }),
    ));
    out.push(("sum", check(std::slice::from_ref(&a), |g, v| g.sum(v[0]))));

    let rp = tensor(&mut rng, &[shape[0], shape[2]]);
    out.push((
        "global_avg_pool",
        check(&[a], |g, v| {
            let y = g.global_avg_pool(v[0]).unwrap();
            weighted_sum(g, y, &rp)
        }),
    ));

    let (b, f, o) = (rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(2..=4));
    let x = tensor(&mut rng, &[b, f]);
    let w = tensor(&mut rng, &[o, f]);
    let bias = tensor(&mut rng, &[o]);
    let r = tensor(&mut rng, &[b, o]);
    out.push((
        "linear",
        check(&[x.clone(), w.clone(), bias.clone()], |g, v| {
            let y = g.linear(v[0], v[1], v[2]).unwrap();
            weighted_sum(g, y, &r)
        }),
    ));
    let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..o)).collect();
    let z = Tensor::new(vec![b, o], values(&mut rng, b * o, 0.0).iter().map(|v| 3.0 * v).collect()).unwrap();
    out.push((
        "softmax_cross_entropy",
        check(&[z], |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap()),
    ));
    out
}

/// Finite-difference check of the full width 0.125 network (three classes)
/// on a random batch. Checks `coords_per_tensor` random coordinates of every
/// parameter tensor.
pub fn model_error(seed: u64, coords_per_tensor: usize) -> f64 {
    let mut rng = seeded(seed ^ 0x5EED);
    let cfg = ModelConfig::new(3).with_width(0.125);
    let (net, mut store) = ResNet1d::build::<f64>(cfg, seed).unwrap();
    let batch = 4;
    let input = Tensor::new(vec![batch, 3, 7], values(&mut rng, batch * 21, 0.0)).unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..3)).collect();

    let mut g = Graph::new();
    let fwd = net.forward(&mut g, &mut store, input.clone(), BnMode::Train, true).unwrap();
    let loss = g.softmax_cross_entropy(fwd.logits, &labels).unwrap();
    g.backward(loss).unwrap();
    let grads: Vec<Vec<f64>> = fwd.params.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |store: &mut trajid::model::ParamStore<f64>| -> f64 {
        let mut g = Graph::new();
        let fwd = net.forward(&mut g, store, input.clone(), BnMode::Train, false).unwrap();
        let loss = g.softmax_cross_entropy(fwd.logits, &labels).unwrap();
        g.value(loss).item().unwrap()
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let n = store.get(name).unwrap().numel();
        for _ in 0..coords_per_tensor.min(n) {
            let i = rng.gen_range(0..n);
            let orig = store.get(name).unwrap().data()[i];
            store.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = eval(&mut store);
            store.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = eval(&mut store);
            store.get_mut(name).unwrap().data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
            analytic.push(grads[k][i]);
        }
    }
    rel_err(&analytic, &numeric)
}
