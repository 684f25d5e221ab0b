use crate::autodiff::{BnMode, Graph, RunningStats, Scalar, Tensor, Var};
use crate::rng;

use super::{ModelConfig, ModelError, ParamStore};

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    weight: usize,
    gamma: usize,
    beta: usize,
    running: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: ConvBn,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
}

/// The network topology with indices into its [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ResNet1d {
    config: ModelConfig,
    stem: ConvBn,
    blocks: Vec<Block>,
    head_w: usize,
    head_b: usize,
}

/// `B×C×L` to the graph's `B×L×C`.
fn channels_last<T: Scalar>(batch: &Tensor<T>) -> Tensor<T> {
    let (b, c, l) = (batch.shape()[0], batch.shape()[1], batch.shape()[2]);
    let src = batch.data();
    let mut out = Vec::with_capacity(src.len());
    for bi in 0..b {
        for li in 0..l {
            out.extend((0..c).map(|ci| src[(bi * c + ci) * l + li]));
        }
    }
    Tensor::new(vec![b, l, c], out).expect("same element count")
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Channels-last copy of the batch.
    pub input: Var,
    pub logits: Var,
    /// Parameter leaves, in [`ParamStore`] order.
    pub params: Vec<Var>,
}

struct Builder<'a, T> {
    params: Vec<(String, Tensor<T>)>,
    running: Vec<(String, RunningStats<T>)>,
    rng: &'a mut rng::SeededRng,
}

impl<T: Scalar> Builder<'_, T> {
    fn kaiming(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        use rand::Rng;
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(self.rng.gen_range(-bound..bound))).collect();
        self.params.push((name, Tensor::new(shape.to_vec(), data).expect("shape")));
        self.params.len() - 1
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f64) -> usize {
        self.params.push((name, Tensor::full(shape, T::of(v))));
        self.params.len() - 1
    }

    fn conv_bn(&mut self, prefix: &str, bn: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvBn {
        let (conv, bn) = if bn.is_empty() {
            (format!("{prefix}.conv"), format!("{prefix}.bn"))
        } else {
            (format!("{prefix}.conv{bn}"), format!("{prefix}.bn{bn}"))
        };
        let weight = self.kaiming(format!("{conv}.weight"), &[cout, cin, k], cin * k);
        let gamma = self.constant(format!("{bn}.weight"), &[cout], 1.0);
        let beta = self.constant(format!("{bn}.bias"), &[cout], 0.0);
        self.running.push((bn, RunningStats::new(cout)));
        ConvBn {
            weight,
            gamma,
            beta,
            running: self.running.len() - 1,
            stride,
            pad: k / 2,
        }
    }
}

impl ResNet1d {
    /// Build the topology and a freshly initialized store: Kaiming-uniform conv
    /// and linear weights (bound `√(6/fan_in)`) drawn in parameter order from
    /// the seeded stream, BN scale 1 and shift 0, zero classifier bias.
    pub fn build<T: Scalar>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>), ModelError> {
        config.validate()?;
        let ch = config.channels();
        let mut stream = rng::seeded(seed);
        let mut b = Builder {
            params: Vec::new(),
            running: Vec::new(),
            rng: &mut stream,
        };
        let stem = b.conv_bn("stem", "", config.in_channels, ch[0], config.stem_kernel, 1);
        let mut blocks = Vec::new();
        let mut cin = ch[0];
        for (s, (&n_blocks, &cout)) in config.stage_blocks.iter().zip(&ch).enumerate() {
            for i in 0..n_blocks {
                let stride = if s > 0 && i == 0 { 2 } else { 1 };
                let prefix = format!("stages.{s}.{i}");
                let k = config.block_kernel;
                let conv1 = b.conv_bn(&prefix, "1", cin, cout, k, stride);
                let conv2 = b.conv_bn(&prefix, "2", cout, cout, k, 1);
                let shortcut = (stride != 1 || cin != cout).then(|| b.conv_bn(&format!("{prefix}.downsample"), "", cin, cout, 1, stride));
                blocks.push(Block { conv1, conv2, shortcut });
                cin = cout;
            }
        }
        let head_w = b.kaiming("head.weight".into(), &[config.n_classes, cin], cin);
        let head_b = b.constant("head.bias".into(), &[config.n_classes], 0.0);
        let (params, running) = (b.params, b.running);
        let net = Self {
            config: config.clone(),
            stem,
            blocks,
            head_w,
            head_b,
        };
        Ok((
            net,
            ParamStore {
                config,
                seed,
                params,
                running,
            },
        ))
    }

    /// Topology for an existing store.
    pub fn for_store<T: Scalar>(store: &ParamStore<T>) -> Result<Self, ModelError> {
        Ok(Self::build::<T>(store.config.clone(), store.seed)?.0)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn conv_bn<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        running: &mut [(String, RunningStats<T>)],
        p: &[Var],
        x: Var,
        l: ConvBn,
        mode: BnMode,
    ) -> Result<Var, ModelError> {
        let y = g.conv1d(x, p[l.weight], None, l.stride, l.pad)?;
        let (mom, eps) = (T::of(self.config.bn_momentum), T::of(self.config.bn_eps));
        Ok(g.batchnorm1d(y, p[l.gamma], p[l.beta], mode, &mut running[l.running].1, mom, eps)?)
    }

    fn check_input(&self, shape: &[usize]) -> Result<(), ModelError> {
        if shape.len() != 3 || shape[0] == 0 || shape[1] != self.config.in_channels || shape[2] != self.config.input_length {
            return Err(ModelError::InputShape {
                got: shape.to_vec(),
                channels: self.config.in_channels,
                length: self.config.input_length,
            });
        }
        Ok(())
    }

    /// Record a forward pass of `batch` (`B × in_channels × input_length`).
    /// Training mode updates the store's running statistics.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        batch: Tensor<T>,
        mode: BnMode,
        requires_grad: bool,
    ) -> Result<Forward, ModelError> {
        self.check_input(batch.shape())?;
        let input = g.leaf(channels_last(&batch), false);
        let params: Vec<Var> = store
            .params
            .iter()
            .map(|(_, t)| g.leaf(t.clone(), requires_grad))
            .collect();
        let logits = self.forward_with(g, &mut store.running, &params, input, mode)?;
        Ok(Forward { input, logits, params })
    }

    /// Evaluation-mode logits, `B × n_classes`.
    pub fn predict_logits<T: Scalar>(&self, store: &ParamStore<T>, batch: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_input(batch.shape())?;
        let mut g = Graph::new();
        let input = g.leaf(channels_last(&batch), false);
        let params: Vec<Var> = store.params.iter().map(|(_, t)| g.leaf(t.clone(), false)).collect();
        // Eval mode only reads the running statistics.
        let mut running = store.running.clone();
        let logits = self.forward_with(&mut g, &mut running, &params, input, BnMode::Eval)?;
        Ok(g.value(logits).clone())
    }

    fn forward_with<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        running: &mut [(String, RunningStats<T>)],
        p: &[Var],
        input: Var,
        mode: BnMode,
    ) -> Result<Var, ModelError> {
        let h = self.conv_bn(g, running, p, input, self.stem, mode)?;
        let mut h = g.relu(h);
        for block in &self.blocks {
            let o = self.conv_bn(g, running, p, h, block.conv1, mode)?;
            let o = g.relu(o);
            let o = self.conv_bn(g, running, p, o, block.conv2, mode)?;
            let sc = match block.shortcut {
                Some(l) => self.conv_bn(g, running, p, h, l, mode)?,
                None => h,
            };
            let sum = g.add(o, sc)?;
            h = g.relu(sum);
        }
        let pooled = g.global_avg_pool(h)?;
        let logits = g.linear(pooled, p[self.head_w], p[self.head_b])?;
        if !g.value(logits).all_finite() {
            return Err(ModelError::NonFinite("logits".into()));
        }
        Ok(logits)
    }
}
