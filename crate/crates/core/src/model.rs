//! The generator and discriminator networks.
//!
//! Generator, for an input of `C x H x W`:
//!
//! ```text
//! conv k9 s1 p4 (C -> F) + PReLU                      H x W
//! nB residual blocks (width F)                        H x W
//! conv k3 s1 p1 + BN, plus skip from the head output  H x W
//! nS x [conv k3 (F -> 4F), pixel shuffle r=2, PReLU]  H 2^nS x W 2^nS
//! conv k9 s(2^nS) p4 (F -> C) + tanh                  H x W
//! ```
//!
//! With the default two shuffle stages the tail stride is 4, so the output
//! has the input's size. The default generator has 808,332 parameters.
//!
//! Discriminator: four `conv k3 p1` blocks with strides `[2, 2, 1, 1]` and
//! channels `[64, 128, 256, 512]` (LeakyReLU 0.2, batch norm on blocks 2-4),
//! then a `k4 s4` transposed convolution to one channel and a sigmoid. The
//! blocks shrink the image by 4 and the head grows it back by 4, so the
//! output is a `1 x H x W` map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{
    Activation, BatchNorm2d, Conv2d, ConvTranspose2d, PRelu, Pass, PixelShuffle, ResidualBlock,
    LEAKY_SLOPE,
};
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Smallest accepted input extent.
pub const MIN_EXTENT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub width: usize,
    pub residual_blocks: usize,
    /// Number of x2 pixel-shuffle stages; the tail stride is `2^stages`.
    pub shuffle_stages: usize,
    pub batch_norm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            channels: 3,
            width: 64,
            residual_blocks: 6,
            shuffle_stages: 2,
            batch_norm: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 {
            return Err(Error::Config("generator channels and width must be positive".into()));
        }
        if self.residual_blocks == 0 {
            return Err(Error::Config("generator needs at least one residual block".into()));
        }
        if !(1..=4).contains(&self.shuffle_stages) {
            return Err(Error::Config(format!(
                "generator shuffle stages {} outside 1..=4",
                self.shuffle_stages
            )));
        }
        Ok(())
    }

    pub fn tail_stride(&self) -> usize {
        1 << self.shuffle_stages
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub block_channels: Vec<usize>,
    pub block_strides: Vec<usize>,
    pub batch_norm: bool,
    pub head_kernel: usize,
    pub head_stride: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            in_channels: 3,
            block_channels: vec![64, 128, 256, 512],
            block_strides: vec![2, 2, 1, 1],
            batch_norm: true,
            head_kernel: 4,
            head_stride: 4,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("discriminator needs input channels".into()));
        }
        if self.block_channels.is_empty() || self.block_channels.len() != self.block_strides.len() {
            return Err(Error::Config(
                "discriminator block channels and strides must be nonempty and equal length".into(),
            ));
        }
        if self.block_channels.contains(&0) || self.block_strides.contains(&0) {
            return Err(Error::Config("discriminator extents must be positive".into()));
        }
        if self.head_kernel != self.head_stride {
            return Err(Error::Config(format!(
                "head kernel {} must equal head stride {} for an exact size restore",
                self.head_kernel, self.head_stride
            )));
        }
        if self.downsampling() != self.head_stride {
            return Err(Error::Config(format!(
                "blocks downsample by {} but the head upsamples by {}",
                self.downsampling(),
                self.head_stride
            )));
        }
        Ok(())
    }

    pub fn downsampling(&self) -> usize {
        self.block_strides.iter().product()
    }
}

/// A network assembled from layers, with its parameters and batch-norm
/// statistics.
pub trait Network<T: Scalar> {
    fn forward(&mut self, g: &mut Graph<T>, x: Var, pass: Pass) -> Result<Var>;
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    /// Running batch-norm statistics, in a fixed order.
    fn buffers(&self) -> Vec<(String, &Tensor<T>)>;
    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;
    /// Checks an `(N, C, H, W)` input shape against the network's contract.
    fn check_input(&self, shape: &[usize]) -> Result<()>;

    /// Forward pass on a tensor, returning the output value.
    fn infer(&mut self, x: &Tensor<T>, pass: Pass) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv, pass)?;
        Ok(g.value(y).clone())
    }
}

fn check_nchw(shape: &[usize], channels: usize, multiple: usize, who: &str) -> Result<()> {
    let [_, c, h, w] = *shape else {
        return Err(Error::ShapeMismatch(format!("{who} expects NCHW input, got {shape:?}")));
    };
    if c != channels {
        return Err(Error::ShapeMismatch(format!(
            "{who} expects {channels} channels, got {c}"
        )));
    }
    for e in [h, w] {
        if e < MIN_EXTENT || e % multiple != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{who} input extents must be >= {MIN_EXTENT} and divisible by {multiple}, got {h}x{w}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct UpsampleStage {
    conv: Conv2d,
    shuffle: PixelShuffle,
    act: PRelu,
}

#[derive(Debug, Clone)]
pub struct Generator<T: Scalar = f32> {
    cfg: GeneratorConfig,
    params: ParamStore<T>,
    head: Conv2d,
    head_act: PRelu,
    blocks: Vec<ResidualBlock<T>>,
    post_conv: Conv2d,
    post_bn: Option<BatchNorm2d<T>>,
    upsample: Vec<UpsampleStage>,
    tail: Conv2d,
}

/// Builds a generator with parameters initialized from `rng`.
pub fn build_generator<T: Scalar>(cfg: &GeneratorConfig, rng: &mut Rng) -> Result<Generator<T>> {
    Generator::new(cfg, rng)
}

/// Builds a discriminator with parameters initialized from `rng`.
pub fn build_discriminator<T: Scalar>(
    cfg: &DiscriminatorConfig,
    rng: &mut Rng,
) -> Result<Discriminator<T>> {
    Discriminator::new(cfg, rng)
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: &GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (c, f) = (cfg.channels, cfg.width);
        let mut params = ParamStore::new("g");
        let head = Conv2d::new(&mut params, "head", c, f, 9, 1, 4, rng)?;
        let head_act = PRelu::new(&mut params, "head.act");
        let blocks = (0..cfg.residual_blocks)
            .map(|i| ResidualBlock::new(&mut params, &format!("block{i}"), f, cfg.batch_norm, rng))
            .collect::<Result<_>>()?;
        let post_conv = Conv2d::new(&mut params, "post.conv", f, f, 3, 1, 1, rng)?;
        let post_bn = cfg
            .batch_norm
            .then(|| BatchNorm2d::new(&mut params, "post.bn", f))
            .transpose()?;
        let upsample = (0..cfg.shuffle_stages)
            .map(|i| {
                Ok(UpsampleStage {
                    conv: Conv2d::new(&mut params, &format!("up{i}.conv"), f, f * 4, 3, 1, 1, rng)?,
                    shuffle: PixelShuffle::new(2)?,
                    act: PRelu::new(&mut params, &format!("up{i}.act")),
                })
            })
            .collect::<Result<_>>()?;
        let tail = Conv2d::new(&mut params, "tail", f, c, 9, cfg.tail_stride(), 4, rng)?;
        Ok(Generator {
            cfg: cfg.clone(),
            params,
            head,
            head_act,
            blocks,
            post_conv,
            post_bn,
            upsample,
            tail,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        let mut out: Vec<&mut BatchNorm2d<T>> = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.batch_norms_mut());
        }
        out.extend(self.post_bn.iter_mut());
        out
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        let mut out: Vec<&BatchNorm2d<T>> = Vec::new();
        for b in &self.blocks {
            out.extend(b.batch_norms());
        }
        out.extend(self.post_bn.iter());
        out
    }
}

impl<T: Scalar> Network<T> for Generator<T> {
    fn forward(&mut self, g: &mut Graph<T>, x: Var, pass: Pass) -> Result<Var> {
        self.check_input(g.value(x).shape())?;
        let params = &self.params;
        let mut h = self.head.forward(g, params, x, pass)?;
        h = self.head_act.forward(g, params, h, pass)?;
        let trunk = h;
        for block in &mut self.blocks {
            h = block.forward(g, params, h, pass)?;
        }
        h = self.post_conv.forward(g, params, h, pass)?;
        if let Some(bn) = &mut self.post_bn {
            h = bn.forward(g, params, h, pass)?;
        }
        h = g.add(h, trunk)?;
        for stage in &self.upsample {
            h = stage.conv.forward(g, params, h, pass)?;
            h = stage.shuffle.forward(g, h)?;
            h = stage.act.forward(g, params, h, pass)?;
        }
        h = self.tail.forward(g, params, h, pass)?;
        Activation::Tanh.forward(g, params, h, pass)
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.batch_norms().into_iter().flat_map(|bn| bn.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.batch_norms_mut()
            .into_iter()
            .flat_map(|bn| bn.buffers_mut())
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        check_nchw(shape, self.cfg.channels, 4, "generator")
    }
}

#[derive(Debug, Clone)]
struct DiscBlock<T: Scalar> {
    conv: Conv2d,
    bn: Option<BatchNorm2d<T>>,
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar = f32> {
    cfg: DiscriminatorConfig,
    params: ParamStore<T>,
    blocks: Vec<DiscBlock<T>>,
    head: ConvTranspose2d,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: &DiscriminatorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new("d");
        let mut blocks = Vec::with_capacity(cfg.block_channels.len());
        let mut in_ch = cfg.in_channels;
        for (i, (&out_ch, &stride)) in cfg.block_channels.iter().zip(&cfg.block_strides).enumerate() {
            let conv = Conv2d::new(&mut params, &format!("block{i}.conv"), in_ch, out_ch, 3, stride, 1, rng)?;
            // The first block has no normalization.
            let bn = (cfg.batch_norm && i > 0)
                .then(|| BatchNorm2d::new(&mut params, &format!("block{i}.bn"), out_ch))
                .transpose()?;
            blocks.push(DiscBlock { conv, bn });
            in_ch = out_ch;
        }
        let head = ConvTranspose2d::new(&mut params, "head", in_ch, 1, cfg.head_kernel, cfg.head_stride, 0, rng)?;
        Ok(Discriminator {
            cfg: cfg.clone(),
            params,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }
}

impl<T: Scalar> Network<T> for Discriminator<T> {
    fn forward(&mut self, g: &mut Graph<T>, x: Var, pass: Pass) -> Result<Var> {
        self.check_input(g.value(x).shape())?;
        let params = &self.params;
        let mut h = x;
        for block in &mut self.blocks {
            h = block.conv.forward(g, params, h, pass)?;
            if let Some(bn) = &mut block.bn {
                h = bn.forward(g, params, h, pass)?;
            }
            h = g.leaky_relu(h, T::of(LEAKY_SLOPE));
        }
        h = self.head.forward(g, params, h, pass)?;
        Ok(g.sigmoid(h))
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.blocks
            .iter()
            .filter_map(|b| b.bn.as_ref())
            .flat_map(|bn| bn.buffers())
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.blocks
            .iter_mut()
            .filter_map(|b| b.bn.as_mut())
            .flat_map(|bn| bn.buffers_mut())
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        check_nchw(shape, self.cfg.in_channels, self.cfg.downsampling(), "discriminator")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;

    fn tiny_gen() -> GeneratorConfig {
        GeneratorConfig {
            width: 4,
            residual_blocks: 1,
            ..GeneratorConfig::default()
        }
    }

    fn tiny_disc() -> DiscriminatorConfig {
        DiscriminatorConfig {
            block_channels: vec![4, 4, 4, 4],
            ..DiscriminatorConfig::default()
        }
    }

    #[test]
    fn generator_preserves_32_square() {
        let mut rng = Rng::new(1);
        let mut g = build_generator::<f32>(&GeneratorConfig::default(), &mut rng).unwrap();
        let x = Tensor::uniform(&[1, 3, 32, 32], -1.0, 1.0, &mut rng).unwrap();
        let y = g.infer(&x, Pass::EVAL).unwrap();
        assert_eq!(y.shape(), &[1, 3, 32, 32]);
        assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn generator_rejects_indivisible_extent() {
        let mut rng = Rng::new(1);
        let mut g = build_generator::<f32>(&tiny_gen(), &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 3, 30, 32]).unwrap();
        assert!(matches!(g.infer(&x, Pass::EVAL), Err(Error::ShapeMismatch(_))));
        assert!(g.check_input(&[1, 3, 4, 4]).is_err());
        assert!(g.check_input(&[1, 1, 8, 8]).is_err());
    }

    #[test]
    fn discriminator_output_is_probability_map() {
        let mut rng = Rng::new(2);
        let mut d = build_discriminator::<f32>(&tiny_disc(), &mut rng).unwrap();
        let x = Tensor::uniform(&[2, 3, 32, 32], -1.0, 1.0, &mut rng).unwrap();
        let y = d.infer(&x, Pass::frozen(Mode::Train)).unwrap();
        assert_eq!(y.shape(), &[2, 1, 32, 32]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn invalid_configs() {
        let mut rng = Rng::new(0);
        let bad = GeneratorConfig {
            residual_blocks: 0,
            ..GeneratorConfig::default()
        };
        assert!(matches!(build_generator::<f32>(&bad, &mut rng), Err(Error::Config(_))));
        let bad = DiscriminatorConfig {
            block_strides: vec![2, 2, 2, 1],
            ..DiscriminatorConfig::default()
        };
        assert!(matches!(build_discriminator::<f32>(&bad, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = Rng::new(3);
        let mut g = build_generator::<f32>(&tiny_gen(), &mut rng).unwrap();
        let x = Tensor::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng).unwrap();
        let a = g.infer(&x, Pass::EVAL).unwrap();
        let b = g.infer(&x, Pass::EVAL).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn train_forward_moves_running_stats_eval_does_not() {
        let mut rng = Rng::new(4);
        let mut g = build_generator::<f32>(&tiny_gen(), &mut rng).unwrap();
        let x = Tensor::uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut rng).unwrap();
        let before: Vec<Tensor> = g.buffers().into_iter().map(|(_, t)| t.clone()).collect();
        g.infer(&x, Pass::EVAL).unwrap();
        let same: Vec<Tensor> = g.buffers().into_iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(before, same);
        g.infer(&x, Pass::TRAIN).unwrap();
        let after: Vec<Tensor> = g.buffers().into_iter().map(|(_, t)| t.clone()).collect();
        assert_ne!(before, after);
    }

    #[test]
    fn one_stage_variant_is_shape_preserving() {
        let mut rng = Rng::new(5);
        let cfg = GeneratorConfig {
            shuffle_stages: 1,
            ..tiny_gen()
        };
        let mut g = build_generator::<f32>(&cfg, &mut rng).unwrap();
        let x = Tensor::zeros(&[1, 3, 16, 16]).unwrap();
        assert_eq!(g.infer(&x, Pass::EVAL).unwrap().shape(), &[1, 3, 16, 16]);
    }

    #[test]
    fn parameter_names_are_unique() {
        let mut rng = Rng::new(6);
        let g = build_generator::<f32>(&GeneratorConfig::default(), &mut rng).unwrap();
        let mut names: Vec<&str> = g.params().iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn default_generator_parameter_count_matches_tally() {
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let bn = |c: usize| 2 * c;
        let prelu = 1;
        let (c, f) = (3, 64);
        let block = 2 * conv(f, f, 3) + 2 * bn(f) + prelu;
        let tally = conv(c, f, 9)
            + prelu
            + 6 * block
            + conv(f, f, 3)
            + bn(f)
            + 2 * (conv(f, 4 * f, 3) + prelu)
            + conv(f, c, 9);
        assert_eq!(tally, 808_332);
        let mut rng = Rng::new(0);
        let g = build_generator::<f32>(&GeneratorConfig::default(), &mut rng).unwrap();
        assert_eq!(g.params().num_scalars(), tally);
    }
}
