use serde::{Deserialize, Serialize};

use super::{AutodiffError, Scalar};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    SgdMomentum {
        lr: f64,
        momentum: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::SgdMomentum { lr, .. } => lr,
        }
    }
}

/// Moment buffers (Adam) or velocities (SGD with momentum), one per parameter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self, AutodiffError> {
        if !(config.lr() > 0.0) {
            return Err(AutodiffError::InvalidHyperparameter(format!(
                "learning rate must be positive, got {}",
                config.lr()
            )));
        }
        Ok(Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    fn ensure_buffers(&mut self, sizes: &[usize]) -> Result<(), AutodiffError> {
        if self.first.is_empty() {
            self.first = sizes.iter().map(|&n| vec![T::zero(); n]).collect();
            self.second = sizes.iter().map(|&n| vec![T::zero(); n]).collect();
        }
        if self.first.len() != sizes.len() || self.first.iter().zip(sizes).any(|(b, &n)| b.len() != n) {
            return Err(AutodiffError::Shape("optimizer buffers do not match parameters".into()));
        }
        Ok(())
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.second
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<(), AutodiffError> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(AutodiffError::Shape("parameter/gradient shapes differ".into()));
        }
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        self.ensure_buffers(&sizes)?;
        self.step += 1;
        match self.config {
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let (b1, b2) = (T::of(beta1), T::of(beta2));
                let c1 = T::of(1.0 - beta1.powf(self.step as f64));
                let c2 = T::of(1.0 - beta2.powf(self.step as f64));
                let (lr, eps) = (T::of(lr), T::of(eps));
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    let (ob1, ob2) = (T::one() - b1, T::one() - b2);
                    for (((p, &gi), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + ob1 * gi;
                        *v = b2 * *v + ob2 * gi * gi;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
            OptimizerConfig::SgdMomentum { lr, momentum } => {
                let (lr, mu) = (T::of(lr), T::of(momentum));
                for ((p, g), vel) in params.iter_mut().zip(grads).zip(self.first.iter_mut()) {
                    for ((p, &gi), vel) in p.iter_mut().zip(g.iter()).zip(vel.iter_mut()) {
                        *vel = mu * *vel + gi;
                        *p -= lr * *vel;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let mut st = OptimizerState::<f64>::new(OptimizerConfig::default()).unwrap();
        let mut p = [0.5, -0.25, 1.0];
        let g = [3.0, -0.02, 1e-3];
        st.step(&mut [&mut p[..]], &[&g[..]]).unwrap();
        let lr = 1e-3;
        for (new, (old, gi)) in p.iter().zip([0.5, -0.25, 1.0].iter().zip(g)) {
            let expect = old - lr * gi.signum();
            assert!((new - expect).abs() <= lr * 1e-4, "{new} vs {expect}");
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut st = OptimizerState::<f64>::new(OptimizerConfig::default()).unwrap();
        let mut p = [1.0];
        st.step(&mut [&mut p[..]], &[&[2.0][..]]).unwrap();
        let before = p[0];
        let m1 = st.first_moments()[0][0];
        st.step(&mut [&mut p[..]], &[&[0.0][..]]).unwrap();
        assert_eq!(st.first_moments()[0][0], 0.9 * m1);
        assert!(st.second_moments()[0][0] < 0.004 + 1e-12);
        // A fresh optimizer fed only zeros never moves.
        let mut fresh = OptimizerState::<f64>::new(OptimizerConfig::default()).unwrap();
        let mut q = [before];
        fresh.step(&mut [&mut q[..]], &[&[0.0][..]]).unwrap();
        assert_eq!(q[0], before);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let cfg = OptimizerConfig::Adam {
            lr: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        assert!(OptimizerState::<f32>::new(cfg).is_err());
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        let cfg = OptimizerConfig::SgdMomentum { lr: 0.1, momentum: 0.5 };
        let mut st = OptimizerState::<f64>::new(cfg).unwrap();
        let mut p = [0.0];
        st.step(&mut [&mut p[..]], &[&[1.0][..]]).unwrap();
        st.step(&mut [&mut p[..]], &[&[1.0][..]]).unwrap();
        assert!((p[0] - (-0.1 - 0.15)).abs() < 1e-12);
    }
}
