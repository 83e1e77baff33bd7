//! Central finite-difference checks of analytic gradients, in f64.
//!
//! The error for one tensor is `|a - n| / max(|a|, |n|)` over the flattened
//! gradient (Euclidean norms), where `a` is the analytic gradient and `n` the
//! numerical one.
//!
//! A tensor whose analytic gradient vanishes (a conv bias feeding batch norm,
//! say) has no scale to compare against. When the analytic gradient moves the
//! function by less than [`ROUNDING_LEVEL`] of its value across one central
//! difference, the error is instead the largest such change measured
//! numerically, relative to the function value: `max |f(x+h) - f(x-h)| / |f(x)|`.
//! Rounding noise keeps this near machine precision, while a real gradient
//! shows up at the size of the step.

use crate::corruption::corrupt_batch;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Mode, Pass, ResidualBlock};
use crate::losses::{discriminator_loss, generator_loss, ADVERSARIAL_WEIGHT};
use crate::model::{
    build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig, Network,
};
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const ROUNDING_LEVEL: f64 = 1e-12;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Name (or input index) of the tensor with the largest error.
    pub worst: String,
    pub elements: usize,
}

impl GradCheck {
    fn new() -> Self {
        GradCheck {
            max_rel_error: 0.0,
            worst: String::new(),
            elements: 0,
        }
    }

    fn record(&mut self, name: String, analytic: &[f64], numeric: &[f64], step: f64, value: f64) {
        let err = if zero_gradient_error(analytic, step, value) <= ROUNDING_LEVEL {
            zero_gradient_error(numeric, step, value)
        } else {
            relative_error(analytic, numeric)
        };
        self.elements += analytic.len();
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = err;
            self.worst = name;
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Error for a gradient that is analytically zero; see the module docs.
pub fn zero_gradient_error(numeric: &[f64], step: f64, value: f64) -> f64 {
    let spread = numeric.iter().fold(0.0f64, |m, n| m.max(n.abs())) * 2.0 * step;
    if spread == 0.0 {
        0.0
    } else {
        spread / value.abs().max(f64::MIN_POSITIVE)
    }
}

fn scalar_root(g: &Graph<f64>, root: Var) -> Result<f64> {
    g.value(root).item().map_err(|_| {
        Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            g.value(root).shape()
        ))
    })
}

/// Checks the gradient of `f` with respect to every input tensor. `f`
/// receives the inputs as graph variables and returns a scalar.
pub fn check_inputs(
    inputs: &[Tensor<f64>],
    mut f: impl FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
    step: f64,
) -> Result<GradCheck> {
    let eval = |f: &mut dyn FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
                xs: &[Tensor<f64>]|
     -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let root = f(&mut g, &vars)?;
        scalar_root(&g, root)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let root = f(&mut g, &vars)?;
    let value = scalar_root(&g, root)?;
    let grads = g.backward(root)?;

    let mut report = GradCheck::new();
    let mut xs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = match grads.wrt(v) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; inputs[i].len()],
        };
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + step;
            let plus = eval(&mut f, &xs)?;
            xs[i].data_mut()[j] = orig - step;
            let minus = eval(&mut f, &xs)?;
            xs[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        report.record(format!("input {i}"), &analytic, &numeric, step, value);
    }
    Ok(report)
}

/// Checks the gradient of `loss` with respect to every parameter of `net`.
///
/// `loss` must not depend on state it mutates; in particular a network with
/// batch norm should be evaluated in training mode, whose output does not
/// read the running statistics.
pub fn check_network<N: Network<f64>>(
    net: &mut N,
    mut loss: impl FnMut(&mut N, &mut Graph<f64>) -> Result<Var>,
    step: f64,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let root = loss(net, &mut g)?;
    let value = scalar_root(&g, root)?;
    let grads = g.backward(root)?;
    net.params_mut().zero_grads();
    net.params_mut().accumulate(&grads)?;

    let ids: Vec<_> = net.params().ids().collect();
    let mut report = GradCheck::new();
    for id in ids {
        let analytic = net.params().grad(id).data().to_vec();
        let name = net.params().name(id).to_owned();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = net.params().value(id).data()[j];
            let mut values = [0.0; 2];
            for (k, delta) in [step, -step].into_iter().enumerate() {
                perturb(net, id, j, orig + delta)?;
                let mut g = Graph::new();
                let root = loss(net, &mut g)?;
                values[k] = scalar_root(&g, root)?;
            }
            perturb(net, id, j, orig)?;
            *slot = (values[0] - values[1]) / (2.0 * step);
        }
        report.record(name, &analytic, &numeric, step, value);
    }
    net.params_mut().zero_grads();
    Ok(report)
}

fn perturb<N: Network<f64>>(net: &mut N, id: crate::param::ParamId, j: usize, value: f64) -> Result<()> {
    let mut t = net.params().value(id).clone();
    t.data_mut()[j] = value;
    net.params_mut().set_value(id, t)
}

/// Tolerance for single layers and losses.
pub const LAYER_TOLERANCE: f64 = 1e-6;
/// Tolerance for whole networks.
pub const MODEL_TOLERANCE: f64 = 1e-5;
/// Whole networks have many PReLU and leaky-ReLU units near their kinks; a
/// smaller step keeps the difference stencils from straddling them.
pub const MODEL_STEP: f64 = 1e-6;

/// One named check from [`standard_suite`].
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub result: GradCheck,
    pub tolerance: f64,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.result.passes(self.tolerance)
    }
}

/// Sums the output against fixed random weights so every element counts.
fn project(g: &mut Graph<f64>, y: Var, rng: &mut Rng) -> Result<Var> {
    let c = g.constant(Tensor::uniform(g.value(y).shape(), -1.0, 1.0, rng)?);
    let prod = g.mul(y, c)?;
    Ok(g.sum(prod))
}

fn projected(
    inputs: &[Tensor<f64>],
    seed: u64,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    check_inputs(
        inputs,
        |g, v| {
            let y = f(g, v)?;
            project(g, y, &mut Rng::new(seed))
        },
        DEFAULT_STEP,
    )
}

struct BlockNet {
    store: ParamStore<f64>,
    block: ResidualBlock<f64>,
}

impl Network<f64> for BlockNet {
    fn forward(&mut self, g: &mut Graph<f64>, x: Var, pass: Pass) -> Result<Var> {
        self.block.forward(g, &self.store, x, pass)
    }
    fn params(&self) -> &ParamStore<f64> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
    fn buffers(&self) -> Vec<(String, &Tensor<f64>)> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        Vec::new()
    }
    fn check_input(&self, _shape: &[usize]) -> Result<()> {
        Ok(())
    }
}

/// Checks every differentiable layer, both losses, and a tiny generator and
/// discriminator (width 4, one residual block, 8x8 inputs) on shapes and
/// values drawn from `seed`.
pub fn standard_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = Rng::new(seed);
    let rng = &mut rng;
    let mut out = Vec::new();
    let mut push = |name, result, tolerance| out.push(SuiteEntry { name, result, tolerance });
    let u = |shape: &[usize], rng: &mut Rng| Tensor::<f64>::uniform(shape, -1.0, 1.0, rng);
    let pick = |lo: usize, hi: usize, rng: &mut Rng| lo + rng.below((hi - lo + 1) as u64) as usize;
    let proj_seed = seed ^ 0x9e37_79b9;

    let (n, cin, cout) = (pick(1, 2, rng), pick(1, 3, rng), pick(1, 3, rng));
    let (k, s) = (pick(1, 4, rng), pick(1, 3, rng));
    let p = pick(0, k - 1, rng);
    let (h, w) = (pick(k, k + 4, rng), pick(k, k + 4, rng));
    let ins = [u(&[n, cin, h, w], rng)?, u(&[cout, cin, k, k], rng)?, u(&[cout], rng)?];
    push("conv2d", projected(&ins, proj_seed, |g, v| g.conv2d(v[0], v[1], Some(v[2]), s, p))?, LAYER_TOLERANCE);

    let (th, tw) = (pick(1, 4, rng), pick(1, 4, rng));
    let tp = pick(0, (k - 1).min(((th.min(tw) - 1) * s + k - 1) / 2), rng);
    let ins = [u(&[n, cin, th, tw], rng)?, u(&[cin, cout, k, k], rng)?, u(&[cout], rng)?];
    push(
        "conv_transpose2d",
        projected(&ins, proj_seed, |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), s, tp))?,
        LAYER_TOLERANCE,
    );

    let r = pick(2, 3, rng);
    let ins = [u(&[n, r * r * cin, pick(1, 3, rng), pick(1, 3, rng)], rng)?];
    push("pixel_shuffle", projected(&ins, proj_seed, |g, v| g.pixel_shuffle(v[0], r))?, LAYER_TOLERANCE);

    let ins = [u(&[2, cin, 3, 3], rng)?, u(&[cin], rng)?, u(&[cin], rng)?];
    push(
        "batch_norm_train",
        projected(&ins, proj_seed, |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0))?,
        LAYER_TOLERANCE,
    );
    let mean: Vec<f64> = (0..cin).map(|_| rng.uniform_f64() - 0.5).collect();
    let var: Vec<f64> = (0..cin).map(|_| 0.5 + rng.uniform_f64()).collect();
    let ins = [u(&[2, cin, 3, 3], rng)?, u(&[cin], rng)?, u(&[cin], rng)?];
    push(
        "batch_norm_eval",
        projected(&ins, proj_seed, |g, v| g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5))?,
        LAYER_TOLERANCE,
    );

    let ins = [u(&[2, 3, 4], rng)?.scalar_mul(3.0), Tensor::scalar(0.1 + 0.5 * rng.uniform_f64())];
    push("prelu", projected(&ins, proj_seed, |g, v| g.prelu(v[0], v[1]))?, LAYER_TOLERANCE);
    let ins = [u(&[2, 3, 4], rng)?.scalar_mul(3.0)];
    push("leaky_relu", projected(&ins, proj_seed, |g, v| Ok(g.leaky_relu(v[0], 0.2)))?, LAYER_TOLERANCE);
    push("tanh", projected(&ins, proj_seed, |g, v| Ok(g.tanh(v[0])))?, LAYER_TOLERANCE);
    push("sigmoid", projected(&ins, proj_seed, |g, v| Ok(g.sigmoid(v[0])))?, LAYER_TOLERANCE);

    let mut store = ParamStore::<f64>::new("rb");
    let block = ResidualBlock::new(&mut store, "block", 2, true, rng)?;
    let mut net = BlockNet { store, block };
    let x = u(&[2, 2, 4, 4], rng)?;
    let weights = u(&[2, 2, 4, 4], rng)?;
    let weighted = |g: &mut Graph<f64>, y: Var| -> Result<Var> {
        let c = g.constant(weights.clone());
        let prod = g.mul(y, c)?;
        Ok(g.sum(prod))
    };
    let result = check_network(&mut net, |net, g| {
        let xv = g.constant(x.clone());
        let y = net.forward(g, xv, Pass::TRAIN)?;
        weighted(g, y)
    }, DEFAULT_STEP)?;
    push("residual_block_params", result, LAYER_TOLERANCE);
    let result = check_inputs(std::slice::from_ref(&x), |g, v| {
        let y = net.forward(g, v[0], Pass::frozen(Mode::Train))?;
        weighted(g, y)
    }, DEFAULT_STEP)?;
    push("residual_block_input", result, LAYER_TOLERANCE);

    let ins = [
        Tensor::uniform(&[2, 1, 3, 3], 0.05, 0.95, rng)?,
        Tensor::uniform(&[2, 1, 3, 3], 0.05, 0.95, rng)?,
        Tensor::uniform(&[2, 1, 3, 3], 0.9, 1.0, rng)?,
    ];
    let result = check_inputs(&ins, |g, v| Ok(discriminator_loss(g, v[0], v[1], v[2])?.loss_d), DEFAULT_STEP)?;
    push("discriminator_loss", result, LAYER_TOLERANCE);
    let ins = [u(&[2, 3, 3, 3], rng)?, u(&[2, 3, 3, 3], rng)?, Tensor::uniform(&[2, 1, 3, 3], 0.05, 0.95, rng)?];
    let result = check_inputs(
        &ins,
        |g, v| Ok(generator_loss(g, v[0], v[1], v[2], ADVERSARIAL_WEIGHT)?.loss_g),
        DEFAULT_STEP,
    )?;
    push("generator_loss", result, LAYER_TOLERANCE);

    let gcfg = GeneratorConfig { width: 4, residual_blocks: 1, ..GeneratorConfig::default() };
    let dcfg = DiscriminatorConfig { block_channels: vec![4, 4, 4, 4], ..DiscriminatorConfig::default() };
    let mut generator = build_generator::<f64>(&gcfg, rng)?;
    let mut discriminator = build_discriminator::<f64>(&dcfg, rng)?;
    let clean = u(&[2, 3, 8, 8], rng)?;
    let (corrupted, _) = corrupt_batch(&clean, 0.3, -1.0, rng)?;
    let targets = Tensor::uniform(&[2, 1, 8, 8], 0.9, 1.0, rng)?;
    let mut frozen = discriminator.clone();
    let result = check_network(&mut generator, |gen, g| {
        let x = g.constant(corrupted.clone());
        let h_hat = gen.forward(g, x, Pass::TRAIN)?;
        let d_fake = frozen.forward(g, h_hat, Pass::frozen(Mode::Train))?;
        let h = g.constant(clean.clone());
        Ok(generator_loss(g, h_hat, h, d_fake, ADVERSARIAL_WEIGHT)?.loss_g)
    }, MODEL_STEP)?;
    push("generator_end_to_end", result, MODEL_TOLERANCE);
    let fake = generator.infer(&corrupted, Pass::frozen(Mode::Train))?;
    let result = check_network(&mut discriminator, |disc, g| {
        let real = g.constant(clean.clone());
        let fk = g.constant(fake.clone());
        let d_real = disc.forward(g, real, Pass::TRAIN)?;
        let d_fake = disc.forward(g, fk, Pass::TRAIN)?;
        let t = g.constant(targets.clone());
        Ok(discriminator_loss(g, d_real, d_fake, t)?.loss_d)
    }, MODEL_STEP)?;
    push("discriminator_end_to_end", result, MODEL_TOLERANCE);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::from_vec(&[3], vec![0.5, -1.5, 2.0]).unwrap();
        let r = check_inputs(&[x], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        }, DEFAULT_STEP)
        .unwrap();
        assert!(r.passes(1e-8), "{r:?}");
        assert_eq!(r.elements, 3);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(relative_error(&[1.0, 2.0], &[1.0, 2.1]) > 1e-2);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn zero_gradient_uses_function_scale() {
        assert_eq!(zero_gradient_error(&[0.0, 0.0], 1e-5, 3.0), 0.0);
        assert!(zero_gradient_error(&[1e-11], 1e-5, 1.0) < 1e-12);
        assert!(zero_gradient_error(&[0.5], 1e-5, 1.0) > 1e-6);
    }

    #[test]
    fn bias_before_batch_norm() {
        let mut rng = Rng::new(10);
        let x = Tensor::uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng).unwrap();
        let w = Tensor::uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::uniform(&[2], -1.0, 1.0, &mut rng).unwrap();
        let c = Tensor::uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng).unwrap();
        let r = check_inputs(&[x, w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            let gamma = g.constant(Tensor::ones(&[2])?);
            let beta = g.constant(Tensor::zeros(&[2])?);
            let (z, _) = g.batch_norm_train(y, gamma, beta, 1e-5)?;
            let cv = g.constant(c.clone());
            let p = g.mul(z, cv)?;
            Ok(g.sum(p))
        }, DEFAULT_STEP)
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn conv_with_weights_as_inputs() {
        let mut rng = Rng::new(9);
        let x = Tensor::uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut rng).unwrap();
        let w = Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::uniform(&[3], -1.0, 1.0, &mut rng).unwrap();
        let r = check_inputs(&[x, w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            let y2 = g.mul(y, y)?;
            Ok(g.mean(y2))
        }, DEFAULT_STEP)
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn standard_suite_passes() {
        for entry in standard_suite(1).unwrap() {
            assert!(entry.passes(), "{entry:?}");
        }
    }
}
