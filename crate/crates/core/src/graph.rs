//! Eager reverse-mode differentiation on a tape.
//!
//! Every op evaluates immediately and appends a node holding its value, so
//! node ids are already a topological order and `backward` is a single
//! reverse sweep. Nodes that do not depend on anything trainable carry
//! `requires_grad = false` and are skipped during the sweep.
//!
//! Parameter leaves remember which [`ParamStore`] entry they were read from;
//! [`ParamStore::accumulate`] adds their gradients into the store. Calling
//! `backward` and accumulating twice without [`ParamStore::zero_grads`] in
//! between sums both contributions.

use crate::error::{Error, Result};
use crate::kernels::{self, GradMask};
use crate::param::{ParamId, ParamKey, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, T),
    ScalarAdd(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    PRelu(Var, Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
}

/// Operation kind of a node, for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    ScalarMul,
    ScalarAdd,
    Sum,
    Mean,
    Mse,
    Conv2d,
    ConvTranspose2d,
    PixelShuffle,
    PixelUnshuffle,
    BatchNorm,
    PRelu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
    param: Option<ParamKey>,
}

/// Batch statistics produced by a training-mode batch-norm node.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel the statistics were taken over.
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients from one `backward` sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamKey, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root with respect to leaf `v`, if `v` required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamKey, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|&(key, node)| self.by_node[node].as_ref().map(|g| (key, g)))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that never receives a gradient (inputs, targets, detached values).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that receives a gradient but is not tied to a parameter store.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Reads a parameter. With `track` false it enters as a constant, which is
    /// how a frozen network is evaluated.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId, track: bool) -> Var {
        let value = store.value(id).clone();
        let v = self.push(Op::Leaf, value, track);
        if track {
            self.nodes[v.0].param = Some(store.key(id));
        }
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        match self.nodes[v.0].op {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::ScalarMul(..) => OpKind::ScalarMul,
            Op::ScalarAdd(..) => OpKind::ScalarAdd,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Mse(..) => OpKind::Mse,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::PixelShuffle(..) => OpKind::PixelShuffle,
            Op::PixelUnshuffle(..) => OpKind::PixelUnshuffle,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::PRelu(..) => OpKind::PRelu,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scalar_mul(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).scalar_mul(c);
        let rg = self.needs(&[a]);
        self.push(Op::ScalarMul(a, c), value, rg)
    }

    pub fn scalar_add(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).scalar_add(c);
        let rg = self.needs(&[a]);
        self.push(Op::ScalarAdd(a), value, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(Op::Sum(a), value, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.needs(&[a]);
        self.push(Op::Mean(a), value, rg)
    }

    /// Mean of squared differences, as a `[1]` tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).mse(self.value(b))?);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Mse(a, b), value, rg))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let value = kernels::conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let rg = self.needs(&[x, weight]) || bias.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                padding,
            },
            value,
            rg,
        ))
    }

    /// Transposed convolution; `weight` is `(in, out, k, k)`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let value = kernels::conv_transpose2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let rg = self.needs(&[x, weight]) || bias.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(
            Op::ConvTranspose2d {
                x,
                weight,
                bias,
                stride,
                padding,
            },
            value,
            rg,
        ))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = kernels::pixel_shuffle(self.value(x), r)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::PixelShuffle(x, r), value, rg))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = kernels::pixel_unshuffle(self.value(x), r)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::PixelUnshuffle(x, r), value, rg))
    }

    /// Per-channel normalization over `(N, H, W)` with the batch's own
    /// statistics (biased variance). Returns the statistics so the caller
    /// can update running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        self.check_channel_params(gamma, beta, c)?;
        let count = n * h * w;
        if count < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch norm over a single element per channel (input {:?})",
                self.value(x).shape()
            )));
        }
        let plane = h * w;
        let xd = self.value(x).data();
        let inv_count = T::of(1.0 / count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for b in 0..n {
                acc += xd[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
            }
            mean[ch] = acc * inv_count;
            let mut sq = T::zero();
            for b in 0..n {
                for &v in &xd[(b * c + ch) * plane..][..plane] {
                    let d = v - mean[ch];
                    sq += d * d;
                }
            }
            var[ch] = sq * inv_count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (normalized, value) = self.normalize_channels(x, gamma, beta, &mean, &inv_std);
        let rg = self.needs(&[x, gamma, beta]);
        let v = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats: true,
            },
            value,
            rg,
        );
        Ok((v, BatchStats { mean, var, count }))
    }

    /// Normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c, _, _) = self.value(x).dims4()?;
        self.check_channel_params(gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "running statistics sized for {} channels, input has {c}",
                running_mean.len()
            )));
        }
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let (normalized, value) = self.normalize_channels(x, gamma, beta, running_mean, &inv_std);
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats: false,
            },
            value,
            rg,
        ))
    }

    fn check_channel_params(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::ShapeMismatch(format!(
                    "batch norm {name} shape {:?} for {c} channels",
                    self.value(v).shape()
                )));
            }
        }
        Ok(())
    }

    fn normalize_channels(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
    ) -> (Tensor<T>, Tensor<T>) {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4().expect("checked by caller");
        let plane = h * w;
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut normalized = xt.clone();
        let mut out = xt.clone();
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let xs = &mut normalized.data_mut()[off..off + plane];
                for v in xs.iter_mut() {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
                let src = &normalized.data()[off..off + plane];
                let ys = &mut out.data_mut()[off..off + plane];
                for (y, &nv) in ys.iter_mut().zip(src) {
                    *y = g[ch] * nv + bt[ch];
                }
            }
        }
        (normalized, out)
    }

    /// `max(x, 0) + slope * min(x, 0)` with a learnable scalar `slope` (`[1]`).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let a = self.value(slope).item()?;
        let value = self.value(x).map(|v| if v > T::zero() { v } else { a * v });
        let rg = self.needs(&[x, slope]);
        Ok(self.push(Op::PRelu(x, slope), value, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { slope * v });
        let rg = self.needs(&[x]);
        self.push(Op::LeakyRelu(x, slope), value, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::tanh);
        let rg = self.needs(&[x]);
        self.push(Op::Tanh(x), value, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.needs(&[x]);
        self.push(Op::Sigmoid(x), value, rg)
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::full(root_value.shape(), T::one())?);
        }
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads)?;
            // Only leaf gradients are reported; interior ones are dropped early.
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        let params = self.nodes[..=root.0]
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|k| (k, i)))
            .collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            by_node: grads,
            params,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.clone())?;
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.map(|v| -v))?;
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.requires_grad(a) {
                    self.accumulate(grads, a, g.mul(bv)?)?;
                }
                if self.requires_grad(b) {
                    self.accumulate(grads, b, g.mul(av)?)?;
                }
            }
            &Op::ScalarMul(a, c) => self.accumulate(grads, a, g.scalar_mul(c))?,
            &Op::ScalarAdd(a) => self.accumulate(grads, a, g.clone())?,
            &Op::Sum(a) => {
                let gv = g.item()?;
                self.accumulate(grads, a, Tensor::full(self.value(a).shape(), gv)?)?;
            }
            &Op::Mean(a) => {
                let av = self.value(a);
                let gv = g.item()? / T::of(av.len() as f64);
                self.accumulate(grads, a, Tensor::full(av.shape(), gv)?)?;
            }
            &Op::Mse(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let scale = T::of(2.0) * g.item()? / T::of(av.len() as f64);
                let ga = av.zip_map(bv, |x, y| scale * (x - y))?;
                if self.requires_grad(b) {
                    self.accumulate(grads, b, ga.map(|v| -v))?;
                }
                self.accumulate(grads, a, ga)?;
            }
            &Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                padding,
            } => {
                let want = GradMask {
                    input: self.requires_grad(x),
                    weight: self.requires_grad(weight),
                    bias: bias.is_some_and(|b| self.requires_grad(b)),
                };
                let cg = kernels::conv2d_backward(
                    self.value(x),
                    self.value(weight),
                    g,
                    stride,
                    padding,
                    want,
                )?;
                self.scatter_conv(grads, x, weight, bias, cg)?;
            }
            &Op::ConvTranspose2d {
                x,
                weight,
                bias,
                stride,
                padding,
            } => {
                let want = GradMask {
                    input: self.requires_grad(x),
                    weight: self.requires_grad(weight),
                    bias: bias.is_some_and(|b| self.requires_grad(b)),
                };
                let cg = kernels::conv_transpose2d_backward(
                    self.value(x),
                    self.value(weight),
                    g,
                    stride,
                    padding,
                    want,
                )?;
                self.scatter_conv(grads, x, weight, bias, cg)?;
            }
            &Op::PixelShuffle(x, r) => {
                self.accumulate(grads, x, kernels::pixel_unshuffle(g, r)?)?;
            }
            &Op::PixelUnshuffle(x, r) => {
                self.accumulate(grads, x, kernels::pixel_shuffle(g, r)?)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => self.batch_norm_backward(
                grads,
                g,
                (*x, *gamma, *beta),
                normalized,
                inv_std,
                *batch_stats,
            )?,
            &Op::PRelu(x, slope) => {
                let xv = self.value(x);
                let a = self.value(slope).item()?;
                if self.requires_grad(x) {
                    let gx = g.zip_map(xv, |gi, xi| gi * relu_family_slope(xi, a))?;
                    self.accumulate(grads, x, gx)?;
                }
                if self.requires_grad(slope) {
                    let ga: T = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| if xi < T::zero() { gi * xi } else { T::zero() })
                        .sum();
                    self.accumulate(grads, slope, Tensor::scalar(ga))?;
                }
            }
            &Op::LeakyRelu(x, slope) => {
                let gx = g.zip_map(self.value(x), |gi, xi| gi * relu_family_slope(xi, slope))?;
                self.accumulate(grads, x, gx)?;
            }
            &Op::Tanh(x) => {
                let gx = g.zip_map(&node.value, |gi, y| gi * (T::one() - y * y))?;
                self.accumulate(grads, x, gx)?;
            }
            &Op::Sigmoid(x) => {
                let gx = g.zip_map(&node.value, |gi, y| gi * y * (T::one() - y))?;
                self.accumulate(grads, x, gx)?;
            }
        }
        Ok(())
    }

    fn scatter_conv(
        &self,
        grads: &mut [Option<Tensor<T>>],
        x: Var,
        weight: Var,
        bias: Option<Var>,
        cg: kernels::ConvGrads<T>,
    ) -> Result<()> {
        if let Some(gx) = cg.input {
            self.accumulate(grads, x, gx)?;
        }
        if let Some(gw) = cg.weight {
            self.accumulate(grads, weight, gw)?;
        }
        if let (Some(b), Some(gb)) = (bias, cg.bias) {
            self.accumulate(grads, b, gb)?;
        }
        Ok(())
    }

    fn batch_norm_backward(
        &self,
        grads: &mut [Option<Tensor<T>>],
        g: &Tensor<T>,
        (x, gamma, beta): (Var, Var, Var),
        normalized: &Tensor<T>,
        inv_std: &[T],
        batch_stats: bool,
    ) -> Result<()> {
        let (n, c, h, w) = g.dims4()?;
        let plane = h * w;
        let count = n * plane;
        let gd = g.data();
        let xh = normalized.data();
        let gam = self.value(gamma).data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    dbeta[ch] += gd[i];
                    dgamma[ch] += gd[i] * xh[i];
                }
            }
        }
        if self.requires_grad(x) {
            let mut dx = g.clone();
            let m = T::of(count as f64);
            for ch in 0..c {
                let scale = gam[ch] * inv_std[ch];
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        dx.data_mut()[i] = if batch_stats {
                            // d/dx of gamma * (x - mean) / std with mean and std
                            // taken over the same batch.
                            scale * (gd[i] - dbeta[ch] / m - xh[i] * dgamma[ch] / m)
                        } else {
                            scale * gd[i]
                        };
                    }
                }
            }
            self.accumulate(grads, x, dx)?;
        }
        self.accumulate(grads, gamma, Tensor::from_vec(&[c], dgamma)?)?;
        self.accumulate(grads, beta, Tensor::from_vec(&[c], dbeta)?)?;
        Ok(())
    }
}

/// Derivative of the ReLU family; the kink at exactly zero gets slope 0.
fn relu_family_slope<T: Scalar>(x: T, negative_slope: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        negative_slope
    } else {
        T::zero()
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    // Split on sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
