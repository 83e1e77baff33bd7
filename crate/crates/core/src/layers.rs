//! Convolutional building blocks with their parameters held in a
//! [`ParamStore`].
//!
//! Layers only keep [`ParamId`]s; the owning network holds the store and
//! passes it in on every forward call. Batch-norm running statistics are
//! plain state on the layer, updated by training-mode forwards.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::{conv_output_extent, transpose_output_extent};
use crate::param::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How a network is evaluated: batch-norm mode, and whether parameters are
/// tracked for gradients (a frozen network enters the graph as constants).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    pub mode: Mode,
    pub track_params: bool,
}

impl Pass {
    pub const TRAIN: Pass = Pass {
        mode: Mode::Train,
        track_params: true,
    };
    pub const EVAL: Pass = Pass {
        mode: Mode::Eval,
        track_params: false,
    };

    pub fn frozen(mode: Mode) -> Pass {
        Pass {
            mode,
            track_params: false,
        }
    }
}

fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// 2-D convolution, weight `(out, in, k, k)`, bias `(out)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    /// Weights and bias drawn from `uniform(-b, b)`, `b = 1/sqrt(in * k * k)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "conv {name}: channels, kernel and stride must be positive"
            )));
        }
        let fan_in = in_channels * kernel * kernel;
        let w = fan_in_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng)?;
        let b = fan_in_uniform(&[out_channels], fan_in, rng)?;
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: store.add(&format!("{name}.weight"), w),
            bias: store.add(&format!("{name}.bias"), b),
        })
    }

    pub fn output_extent(&self, n: usize) -> Option<usize> {
        conv_output_extent(n, self.kernel, self.stride, self.padding)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        pass: Pass,
    ) -> Result<Var> {
        let w = g.param(store, self.weight, pass.track_params);
        let b = g.param(store, self.bias, pass.track_params);
        g.conv2d(x, w, Some(b), self.stride, self.padding)
    }
}

/// Transposed convolution, weight `(in, out, k, k)`, bias `(out)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose2d {
    /// Same fan-in rule as [`Conv2d`], where the fan-in of an output pixel
    /// is `in * ceil(k / s)^2` (the taps that can reach it).
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "transpose conv {name}: channels, kernel and stride must be positive"
            )));
        }
        let taps = kernel.div_ceil(stride);
        let fan_in = in_channels * taps * taps;
        let w = fan_in_uniform(&[in_channels, out_channels, kernel, kernel], fan_in, rng)?;
        let b = fan_in_uniform(&[out_channels], fan_in, rng)?;
        Ok(ConvTranspose2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: store.add(&format!("{name}.weight"), w),
            bias: store.add(&format!("{name}.bias"), b),
        })
    }

    pub fn output_extent(&self, n: usize) -> Option<usize> {
        transpose_output_extent(n, self.kernel, self.stride, self.padding)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        pass: Pass,
    ) -> Result<Var> {
        let w = g.param(store, self.weight, pass.track_params);
        let b = g.param(store, self.bias, pass.track_params);
        g.conv_transpose2d(x, w, Some(b), self.stride, self.padding)
    }
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel batch normalization with learnable scale and shift.
///
/// Running estimates follow `running = 0.9 * running + 0.1 * batch`, using
/// the unbiased batch variance; normalization itself uses the biased one.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar = f32> {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.add(&format!("{name}.gamma"), Tensor::ones(&[channels])?);
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(&[channels])?);
        let full_name = store.qualified(name);
        Ok(BatchNorm2d {
            name: full_name,
            channels,
            gamma,
            beta,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::ones(&[channels])?,
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
        })
    }

    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        pass: Pass,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma, pass.track_params);
        let beta = g.param(store, self.beta, pass.track_params);
        let eps = T::of(self.eps);
        match pass.mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm_train(x, gamma, beta, eps)?;
                let keep = T::of(self.momentum);
                let take = T::one() - keep;
                let unbias = T::of(stats.count as f64 / (stats.count - 1) as f64);
                for (r, &m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
                    *r = keep * *r + take * m;
                }
                for (r, &v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
                    *r = keep * *r + take * v * unbias;
                }
                Ok(y)
            }
            Mode::Eval => g.batch_norm_eval(
                x,
                gamma,
                beta,
                self.running_mean.data(),
                self.running_var.data(),
                eps,
            ),
        }
    }

    /// Running statistics, named for checkpointing.
    pub fn buffers(&self) -> [(String, &Tensor<T>); 2] {
        [
            (format!("{}.running_mean", self.name), &self.running_mean),
            (format!("{}.running_var", self.name), &self.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> [(String, &mut Tensor<T>); 2] {
        [
            (format!("{}.running_mean", self.name), &mut self.running_mean),
            (format!("{}.running_var", self.name), &mut self.running_var),
        ]
    }
}

pub const PRELU_INIT: f64 = 0.25;

/// Parametric ReLU with one learnable slope per layer.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str) -> Self {
        PRelu {
            slope: store.add(&format!("{name}.slope"), Tensor::scalar(T::of(PRELU_INIT))),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        pass: Pass,
    ) -> Result<Var> {
        let a = g.param(store, self.slope, pass.track_params);
        g.prelu(x, a)
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Elementwise nonlinearity. Only `PRelu` has parameters.
#[derive(Debug, Clone)]
pub enum Activation {
    PRelu(PRelu),
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        pass: Pass,
    ) -> Result<Var> {
        match self {
            Activation::PRelu(p) => p.forward(g, store, x, pass),
            Activation::LeakyRelu(slope) => Ok(g.leaky_relu(x, T::of(*slope))),
            Activation::Tanh => Ok(g.tanh(x)),
            Activation::Sigmoid => Ok(g.sigmoid(x)),
        }
    }
}

/// Sub-pixel rearrangement `(N, C r^2, H, W) -> (N, C, rH, rW)`.
#[derive(Debug, Clone, Copy)]
pub struct PixelShuffle {
    pub r: usize,
}

impl PixelShuffle {
    pub fn new(r: usize) -> Result<Self> {
        if r < 2 {
            return Err(Error::Config(format!("pixel shuffle factor {r} must be >= 2")));
        }
        Ok(PixelShuffle { r })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        g.pixel_shuffle(x, self.r)
    }
}

/// `y = x + F(x)` with `F = conv3 -> BN -> PReLU -> conv3 -> BN`; the batch
/// norms are optional.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Scalar = f32> {
    pub conv1: Conv2d,
    pub bn1: Option<BatchNorm2d<T>>,
    pub act: PRelu,
    pub conv2: Conv2d,
    pub bn2: Option<BatchNorm2d<T>>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        batch_norm: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, 1, 1, rng)?;
        let bn1 = batch_norm
            .then(|| BatchNorm2d::new(store, &format!("{name}.bn1"), channels))
            .transpose()?;
        let act = PRelu::new(store, &format!("{name}.act"));
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, 1, 1, rng)?;
        let bn2 = batch_norm
            .then(|| BatchNorm2d::new(store, &format!("{name}.bn2"), channels))
            .transpose()?;
        Ok(ResidualBlock {
            conv1,
            bn1,
            act,
            conv2,
            bn2,
        })
    }

    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        pass: Pass,
    ) -> Result<Var> {
        let mut h = self.conv1.forward(g, store, x, pass)?;
        if let Some(bn) = &mut self.bn1 {
            h = bn.forward(g, store, h, pass)?;
        }
        h = self.act.forward(g, store, h, pass)?;
        h = self.conv2.forward(g, store, h, pass)?;
        if let Some(bn) = &mut self.bn2 {
            h = bn.forward(g, store, h, pass)?;
        }
        g.add(x, h)
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm2d<T>> {
        self.bn1.iter().chain(self.bn2.iter())
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm2d<T>> {
        self.bn1.iter_mut().chain(self.bn2.iter_mut())
    }
}
