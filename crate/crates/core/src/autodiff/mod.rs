//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Only the operations the 1D ResNet uses are provided: `conv1d`,
//! `batchnorm1d`, `relu`, `add`, `global_avg_pool`, `linear` and
//! `softmax_cross_entropy`, plus `mul`, `scale` and `sum` for composing
//! losses. Convolution follows the cross-correlation convention (no kernel
//! flip) and sequence tensors are channels-last, `B×L×C`. Everything is
//! generic over [`Scalar`] so the same graph runs in `f32` for training and
//! `f64` for finite-difference checks.

mod graph;
mod optim;
mod scalar;
mod tensor;

use thiserror::Error;

pub use graph::{conv_out_len, BnMode, Graph, RunningStats, Var};
pub use optim::{OptimizerConfig, OptimizerState};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch norm in training mode needs at least 2 values per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward on a tensor that does not depend on any trainable input")]
    Detached,
    #[error("backward already ran on this graph; reset gradients first")]
    BackwardTwice,
    #[error("invalid optimizer setting: {0}")]
    InvalidHyperparameter(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph<f64>, data: &[f64]) -> Var {
        g.leaf(Tensor::from_slice(&[data.len()], data).unwrap(), true)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1.0, -2.0, 3.5]);
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_square_gradient_is_identity() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1.0, 2.0, 3.0]);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let loss = g.scale(s, 0.5);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn second_backward_is_an_error_until_reset() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1.0]);
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert_eq!(g.backward(loss), Err(AutodiffError::BackwardTwice));
        g.reset_grads();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), [1.0]);
    }

    #[test]
    fn detached_and_non_scalar_losses_rejected() {
        let mut g = Graph::<f64>::new();
        let c = g.leaf(Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap(), false);
        let s = g.sum(c);
        assert_eq!(g.backward(s), Err(AutodiffError::Detached));
        let x = leaf(&mut g, &[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(AutodiffError::NotScalar(_))));
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let mut g = Graph::<f64>::new();
        let z = g.leaf(Tensor::from_slice(&[1, 2], &[0.0, 0.0]).unwrap(), true);
        let loss = g.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((g.value(loss).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(
            g.softmax_cross_entropy(z, &[2]),
            Err(AutodiffError::LabelOutOfRange { label: 2, classes: 2 })
        );
    }

    #[test]
    fn pool_of_constant() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[2, 5, 3], 1.25), false);
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).shape(), [2, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn batchnorm_train_standardizes() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| ((i * 37) % 13) as f64 * 0.7 - 2.0).collect();
        let x = g.leaf(Tensor::new(vec![2, 4, 3], data).unwrap(), false);
        let gamma = g.leaf(Tensor::full(&[3], 1.0), false);
        let beta = g.leaf(Tensor::zeros(&[3]), false);
        let mut rs = RunningStats::new(3);
        let y = g.batchnorm1d(x, gamma, beta, BnMode::Train, &mut rs, 0.1, 1e-5).unwrap();
        let v = g.value(y).data();
        for c in 0..3 {
            let vals: Vec<f64> = (0..8).map(|r| v[r * 3 + c]).collect();
            let m = vals.iter().sum::<f64>() / 8.0;
            let var = vals.iter().map(|e| (e - m).powi(2)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn batchnorm_constant_input_returns_beta() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[4, 3, 2], 7.0), false);
        let gamma = g.leaf(Tensor::full(&[2], 2.0), false);
        let beta = g.leaf(Tensor::full(&[2], 3.0), false);
        let mut rs = RunningStats::new(2);
        let y = g.batchnorm1d(x, gamma, beta, BnMode::Train, &mut rs, 0.1, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 3.0));
        assert!((rs.mean[0] - 0.7).abs() < 1e-12);
        assert!((rs.var[0] - 0.9).abs() < 1e-12);
        let one = g.leaf(Tensor::full(&[1, 1, 2], 7.0), false);
        assert_eq!(
            g.batchnorm1d(one, gamma, beta, BnMode::Train, &mut rs, 0.1, 1e-5),
            Err(AutodiffError::BatchTooSmall(1))
        );
        assert!(g.batchnorm1d(one, gamma, beta, BnMode::Eval, &mut rs, 0.1, 1e-5).is_ok());
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 5).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x = g.leaf(Tensor::new(vec![2, 5, 3], data.clone()).unwrap(), false);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let w = g.leaf(Tensor::new(vec![3, 3, 1], w).unwrap(), false);
        let b = g.leaf(Tensor::zeros(&[3]), false);
        let y = g.conv1d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn adam_minimizes_square() {
        let cfg = OptimizerConfig::Adam {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut st = OptimizerState::<f64>::new(cfg).unwrap();
        let mut w = vec![1.0];
        for _ in 0..100 {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::from_slice(&[1], &w).unwrap(), true);
            let sq = g.mul(x, x).unwrap();
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            let grad = g.grad(x).unwrap().to_vec();
            st.step(&mut [&mut w[..]], &[&grad[..]]).unwrap();
        }
        assert!(w[0].abs() < 0.1, "{}", w[0]);
    }
}
