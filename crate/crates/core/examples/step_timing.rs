//! Times forward+backward+Adam steps of the canonical model on random windows.
use std::time::Instant;

use rand::Rng;
use trajid::autodiff::{BnMode, Graph, OptimizerConfig, OptimizerState, Tensor};
use trajid::model::{ModelConfig, ResNet1d};

fn main() {
    let batch = 64;
    let width: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let (net, mut store) = ResNet1d::build::<f32>(ModelConfig::new(6).with_width(width), 0).unwrap();
    let mut opt = OptimizerState::<f32>::new(OptimizerConfig::default()).unwrap();
    let mut rng = trajid::rng::seeded(1);
    let data: Vec<f32> = (0..batch * 21).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % 6).collect();
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let t0 = Instant::now();
    for _ in 0..steps {
        let mut g = Graph::new();
        let fwd = net
            .forward(&mut g, &mut store, Tensor::new(vec![batch, 3, 7], data.clone()).unwrap(), BnMode::Train, true)
            .unwrap();
        let loss = g.softmax_cross_entropy(fwd.logits, &labels).unwrap();
        g.backward(loss).unwrap();
        let grads: Vec<Vec<f32>> = fwd.params.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
        let grad_refs: Vec<&[f32]> = grads.iter().map(|v| v.as_slice()).collect();
        let mut ps: Vec<&mut [f32]> = store.tensors_mut().map(|t| t.data_mut()).collect();
        opt.step(&mut ps, &grad_refs).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("{:.3} ms/step, {:.1} us/window", 1e3 * dt / steps as f64, 1e6 * dt / (steps * batch) as f64);
}
