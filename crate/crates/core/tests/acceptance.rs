//! Acceptance suite: runs every criterion and prints one PASS/FAIL line each.
//!
//! `cargo test -p ssrgan --test acceptance` runs all of them; numeric
//! arguments after `--` select criteria, e.g. `-- 1 7`.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use ssrgan::corruption::{corrupted_count, CorruptionMask};
use ssrgan::data::Split;
use ssrgan::gradcheck::standard_suite;
use ssrgan::graph::{Graph, Var};
use ssrgan::kernels::{conv2d_forward, conv_transpose2d_forward, pixel_shuffle, pixel_unshuffle};
use ssrgan::layers::Pass;
use ssrgan::losses::{discriminator_loss, generator_loss, real_targets, ADVERSARIAL_WEIGHT};
use ssrgan::metrics::nmse;
use ssrgan::training::{
    evaluate, load_split, lr_at_epoch, resume, run, train, DatasetConfig, TrainConfig, Trainer,
};
use ssrgan::{
    build_discriminator, build_generator, Checkpoint, DiscriminatorConfig, GeneratorConfig,
    Network, Rng, Tensor,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

const INSTANCES: u64 = 5;

fn criterion_gradients() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..INSTANCES {
        for entry in standard_suite(seed).map_err(e2s)? {
            let err = entry.result.max_rel_error;
            ensure(
                entry.passes(),
                format!(
                    "{} (instance {seed}): rel error {err:.3e} at {} (tolerance {:e})",
                    entry.name, entry.result.worst, entry.tolerance
                ),
            )?;
            match worst.iter_mut().find(|(n, _)| *n == entry.name) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((entry.name, err)),
            }
        }
    }
    let summary = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!("{INSTANCES} instances each; worst rel errors: {summary}"))
}

// ---------------------------------------------------------------- 2

fn direct_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: &[f32], s: usize, p: usize) -> Vec<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[0], ws[2]);
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (wd + 2 * p - k) / s + 1;
    let mut out = vec![0.0f64; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = f64::from(b[co]);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * k + ky) * k + kx];
                                acc += f64::from(xv) * f64::from(wv);
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn direct_transpose(x: &Tensor<f32>, w: &Tensor<f32>, b: &[f32], s: usize, p: usize) -> Vec<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[1], ws[2]);
    let oh = (h - 1) * s + k - 2 * p;
    let ow = (wd - 1) * s + k - 2 * p;
    let mut out = vec![0.0f64; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for v in &mut out[(ni * cout + co) * oh * ow..(ni * cout + co + 1) * oh * ow] {
                *v = f64::from(b[co]);
            }
        }
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = f64::from(x.data()[((ni * cin + ci) * h + iy) * wd + ix]);
                    for co in 0..cout {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * s + ky) as isize - p as isize;
                                let ox = (ix * s + kx) as isize - p as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let wv = f64::from(w.data()[((ci * cout + co) * k + ky) * k + kx]);
                                out[((ni * cout + co) * oh + oy as usize) * ow + ox as usize] += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn max_diff(a: &Tensor<f32>, b: &[f64]) -> f64 {
    a.data()
        .iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - y).abs())
        .fold(0.0, f64::max)
}

fn criterion_oracles() -> Outcome {
    let mut rng = Rng::new(2024);
    let (mut conv_worst, mut tr_worst) = (0.0f64, 0.0f64);
    for case in 0..50 {
        let n = 1 + rng.below(2) as usize;
        let cin = 1 + rng.below(4) as usize;
        let cout = 1 + rng.below(4) as usize;
        let k = 1 + rng.below(5) as usize;
        let s = 1 + rng.below(3) as usize;
        let p = rng.below(k as u64) as usize;
        let h = k.max(1 + rng.below(16) as usize);
        let w = k.max(1 + rng.below(16) as usize);
        let x = Tensor::<f32>::uniform(&[n, cin, h, w], -1.0, 1.0, &mut rng).unwrap();
        let wt = Tensor::<f32>::uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::<f32>::uniform(&[cout], -1.0, 1.0, &mut rng).unwrap();
        let y = conv2d_forward(&x, &wt, Some(&b), s, p).map_err(|e| format!("conv case {case}: {e}"))?;
        let d = max_diff(&y, &direct_conv(&x, &wt, b.data(), s, p));
        conv_worst = conv_worst.max(d);
        ensure(d < 1e-5, format!("conv case {case}: max abs diff {d:e}"))?;

        let th = 1 + rng.below(8) as usize;
        let tw = 1 + rng.below(8) as usize;
        // Largest padding that still leaves a non-empty output.
        let max_pad = ((th.min(tw) - 1) * s + k - 1) / 2;
        let tp = rng.below(max_pad.min(k - 1) as u64 + 1) as usize;
        let xt = Tensor::<f32>::uniform(&[n, cin, th, tw], -1.0, 1.0, &mut rng).unwrap();
        let wtt = Tensor::<f32>::uniform(&[cin, cout, k, k], -1.0, 1.0, &mut rng).unwrap();
        let yt = match conv_transpose2d_forward(&xt, &wtt, Some(&b), s, tp) {
            Ok(y) => y,
            Err(e) => return Err(format!("transpose case {case}: {e}")),
        };
        let d = max_diff(&yt, &direct_transpose(&xt, &wtt, b.data(), s, tp));
        tr_worst = tr_worst.max(d);
        ensure(d < 1e-5, format!("transpose case {case}: max abs diff {d:e}"))?;

        let r = 2 + rng.below(2) as usize;
        let xs = Tensor::<f32>::uniform(&[n, cin * r * r, 1 + rng.below(5) as usize, 1 + rng.below(5) as usize], -1.0, 1.0, &mut rng).unwrap();
        let shuffled = pixel_shuffle(&xs, r).map_err(e2s)?;
        ensure(pixel_unshuffle(&shuffled, r).map_err(e2s)? == xs, format!("shuffle case {case}: round trip"))?;
        let mut a: Vec<u32> = xs.data().iter().map(|v| v.to_bits()).collect();
        let mut bb: Vec<u32> = shuffled.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        bb.sort_unstable();
        ensure(a == bb, format!("shuffle case {case}: multiset"))?;
    }
    Ok(format!(
        "50 shapes; conv max diff {conv_worst:.1e}, transpose max diff {tr_worst:.1e}; shuffle exact"
    ))
}

// ---------------------------------------------------------------- 3

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn criterion_losses() -> Outcome {
    let full = |v: f32, shape: &[usize]| Tensor::<f32>::full(shape, v).unwrap();
    let d = [2, 1, 4, 4];
    let d_case = |real: f32, fake: f32, target: f32| {
        let mut g = Graph::<f32>::new();
        let (r, f, t) = (g.constant(full(real, &d)), g.constant(full(fake, &d)), g.constant(full(target, &d)));
        let l = discriminator_loss(&mut g, r, f, t).unwrap();
        let v = |x: Var| g.value(x).item().unwrap();
        (v(l.loss_d), v(l.loss_r), v(l.loss_f))
    };
    let (ld, lr, lf) = d_case(0.0, 1.0, 1.0);
    ensure(round6(f64::from(ld)) == 2.0 && ld == lf + lr, format!("loss_D case 2: {ld}"))?;
    let (ld, lr, lf) = d_case(0.9, 0.5, 0.9);
    ensure(round6(f64::from(ld)) == 0.25 && ld == lf + lr, format!("loss_D case 0.25: {ld}"))?;
    let (ld, _, _) = d_case(0.95, 0.0, 0.95);
    ensure(ld == 0.0, format!("loss_D perfect: {ld}"))?;

    let g_case = |diff: f32, fake: f32| {
        let mut g = Graph::<f32>::new();
        let hh = g.constant(full(diff, &[2, 3, 4, 4]));
        let h = g.constant(full(0.0, &[2, 3, 4, 4]));
        let df = g.constant(full(fake, &d));
        let l = generator_loss(&mut g, hh, h, df, ADVERSARIAL_WEIGHT).unwrap();
        g.value(l.loss_g).item().unwrap()
    };
    let cases = [(0.0, 1.0, 0.0), (0.0, 0.0, 0.001), (0.5, 0.5, 0.25025)];
    for (diff, fake, want) in cases {
        let got = f64::from(g_case(diff, fake));
        ensure(round6(got) == want, format!("loss_G({diff}, {fake}) = {got}, want {want}"))?;
    }

    let mut rng = Rng::new(3);
    for _ in 0..100 {
        let mut g = Graph::<f32>::new();
        let r = g.constant(Tensor::uniform(&d, 0.0, 1.0, &mut rng).unwrap());
        let f = g.constant(Tensor::uniform(&d, 0.0, 1.0, &mut rng).unwrap());
        let t = g.constant(real_targets(2, 4, 4, &mut rng).unwrap());
        let l = discriminator_loss(&mut g, r, f, t).unwrap();
        let v = |x: Var| g.value(x).item().unwrap();
        ensure(v(l.loss_d) == v(l.loss_f) + v(l.loss_r), "loss_D decomposition")?;
    }
    Ok("loss_D 2 and 0.25, loss_G 0, 0.001 and 0.25025 to 6 decimals; decomposition exact over 100 draws".into())
}

// ---------------------------------------------------------------- 4

fn criterion_nmse() -> Outcome {
    let v = |d: &[f32]| Tensor::from_vec(&[d.len()], d.to_vec()).unwrap();
    let h = v(&[3.0, 4.0]);
    ensure(nmse(&h, &h).map_err(e2s)? == 0.0, "identity")?;
    ensure(nmse(&h, &v(&[0.0, 0.0])).map_err(e2s)? == 1.0, "zero prediction")?;
    let hand = nmse(&h, &v(&[3.0, 0.0])).map_err(e2s)?;
    ensure(round6(hand) == 0.64, format!("[3,4] case {hand}"))?;
    let mut rng = Rng::new(4);
    let mut worst = 0u32;
    for _ in 0..200 {
        let a = Tensor::<f32>::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng).unwrap();
        let b = Tensor::<f32>::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng).unwrap();
        let c = (rng.uniform_f64() * 100.0 + 0.01) as f32 * if rng.below(2) == 0 { 1.0 } else { -1.0 };
        let base = nmse(&a, &b).map_err(e2s)? as f32;
        let scaled = nmse(&a.scalar_mul(c), &b.scalar_mul(c)).map_err(e2s)? as f32;
        let ulps = (i64::from(base.to_bits() as i32) - i64::from(scaled.to_bits() as i32)).unsigned_abs() as u32;
        worst = worst.max(ulps);
    }
    ensure(worst <= 4, format!("scale invariance off by {worst} ulp"))?;
    Ok(format!("identity 0, zero 1, hand case {hand:.6}, scale invariance within {worst} ulp over 200 draws"))
}

// ---------------------------------------------------------------- 5

fn criterion_corruption() -> Outcome {
    let mut checked = 0;
    for &(h, w) in &[(128usize, 128usize), (8, 8), (32, 32), (17, 5), (1, 1), (64, 48)] {
        for &p in &[0.0, 0.1, 0.25, 0.29, 0.3, 0.5, 0.8, 1.0] {
            let m = CorruptionMask::from_seed(h, w, p, 99).map_err(e2s)?;
            let want = (p * (h * w) as f64 + 1e-9).floor() as usize;
            ensure(m.count() == want && corrupted_count(h, w, p).unwrap() == want, format!("count at ({h},{w},{p}): {}", m.count()))?;
            checked += 1;
        }
    }
    let m = CorruptionMask::from_seed(128, 128, 0.3, 7).map_err(e2s)?;
    ensure(m.count() == 4915, format!("(128,128,0.3) gave {}", m.count()))?;

    let (seeds, p) = (10_000u64, 0.25);
    let mut hits = [0u32; 64];
    for s in 0..seeds {
        let m = CorruptionMask::from_seed(8, 8, p, s).map_err(e2s)?;
        for (c, &b) in hits.iter_mut().zip(&m.mask) {
            *c += u32::from(b);
        }
    }
    let n = seeds as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    let worst = hits
        .iter()
        .map(|&c| (f64::from(c) - n * p).abs() / sigma)
        .fold(0.0, f64::max);
    ensure(worst <= 5.0, format!("uniformity: worst cell {worst:.2} sigma"))?;
    Ok(format!("{checked} exact counts incl. 4915; uniformity worst cell {worst:.2} sigma"))
}

// ---------------------------------------------------------------- 6

fn criterion_shapes() -> Outcome {
    let mut rng = Rng::new(6);
    let mut gen = build_generator::<f32>(&GeneratorConfig::default(), &mut rng).map_err(e2s)?;
    let mut disc = build_discriminator::<f32>(&DiscriminatorConfig::default(), &mut rng).map_err(e2s)?;
    let mut seen = Vec::new();
    for size in [128, 32] {
        let x = Tensor::uniform(&[1, 3, size, size], -1.0, 1.0, &mut rng).unwrap();
        let y = gen.infer(&x, Pass::EVAL).map_err(e2s)?;
        ensure(y.shape() == [1, 3, size, size], format!("generator {size}: {:?}", y.shape()))?;
        let d = disc.infer(&x, Pass::EVAL).map_err(e2s)?;
        ensure(d.shape() == [1, 1, size, size], format!("discriminator {size}: {:?}", d.shape()))?;
        seen.push(format!("{size}: G {:?} D {:?}", y.shape(), d.shape()));
    }
    Ok(seen.join("; "))
}

// ---------------------------------------------------------------- 7

fn criterion_training_smoke() -> Outcome {
    let cfg = TrainConfig {
        dataset: DatasetConfig { synthetic_count: 16, train_fraction: 1.0, ..DatasetConfig::default() },
        image_size: 32,
        corruption_level: 0.3,
        batch_size: 4,
        epochs: 50,
        seed: 7,
        ..TrainConfig::default()
    };
    let data = load_split(&cfg, Split::Train).map_err(e2s)?;
    ensure(data.images.len() == 16, "16 images")?;
    let mut trainer = Trainer::new(&cfg).map_err(e2s)?;
    let opts = trainer.default_options();
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..16).collect();
    while losses.len() < 200 {
        let lr = lr_at_epoch(&cfg, trainer.epoch);
        trainer.rng.shuffle(&mut order);
        for idx in order.chunks(4) {
            let items: Vec<Tensor<f32>> = idx.iter().map(|&i| data.images[i].clone()).collect();
            let r = trainer.train_step(&Tensor::stack(&items).unwrap(), lr, opts).map_err(e2s)?;
            ensure(r.all_finite() && r.loss_d >= 0.0 && r.loss_g >= 0.0, format!("bad losses {r:?}"))?;
            losses.push(r.loss_g);
        }
        trainer.epoch += 1;
    }
    let initial = losses[0];
    let final_mean = losses[196..].iter().sum::<f32>() / 4.0;
    let eval = evaluate(&mut trainer.generator, &data.images, &data.ids, 0.3, cfg.seed, -1.0).map_err(e2s)?;
    ensure(
        final_mean < 0.5 * initial,
        format!("loss_G {initial:.4} -> {final_mean:.4}, not halved"),
    )?;
    ensure(
        eval.model.mean < eval.baseline.mean,
        format!("NMSE {:.4} not below baseline {:.4}", eval.model.mean, eval.baseline.mean),
    )?;
    Ok(format!(
        "200 steps: loss_G {initial:.4} -> {final_mean:.4} (last 4 steps); NMSE {:.4} vs corrupted-input baseline {:.4}",
        eval.model.mean, eval.baseline.mean
    ))
}

// ---------------------------------------------------------------- 8

fn desk_networks() -> (GeneratorConfig, DiscriminatorConfig) {
    (
        GeneratorConfig { width: 16, ..GeneratorConfig::default() },
        DiscriminatorConfig { block_channels: vec![16, 32, 64, 128], ..DiscriminatorConfig::default() },
    )
}

fn criterion_trend() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let (generator, discriminator) = desk_networks();
    let mut results = Vec::new();
    for level in [0.3, 0.5, 0.8] {
        let cfg = TrainConfig {
            dataset: DatasetConfig {
                synthetic_count: 96,
                train_fraction: 2.0 / 3.0,
                max_images: Some(64),
                ..DatasetConfig::default()
            },
            image_size: 32,
            corruption_level: level,
            batch_size: 8,
            epochs: 12,
            seed: 11,
            checkpoint_every: 100,
            nmse_subset: 8,
            generator: generator.clone(),
            discriminator: discriminator.clone(),
            output_dir: dir.path().join(format!("level_{level}")),
            ..TrainConfig::default()
        };
        let out = train(&cfg).map_err(e2s)?;
        let test = load_split(&cfg, Split::Test).map_err(e2s)?;
        let mut t = Trainer::from_checkpoint(&out.final_checkpoint).map_err(e2s)?;
        let r = evaluate(&mut t.generator, &test.images, &test.ids, level, cfg.seed, -1.0).map_err(e2s)?;
        results.push((level, r.model.mean, r.baseline.mean, test.images.len()));
    }
    let text = results
        .iter()
        .map(|(l, m, b, n)| format!("p={l}: {m:.4} (baseline {b:.4}, {n} test images)"))
        .collect::<Vec<_>>()
        .join("; ");
    ensure(
        results.windows(2).all(|w| w[1].1 > w[0].1),
        format!("not strictly increasing: {text}"),
    )?;
    Ok(format!("64 training images, 12 epochs per level; {text}"))
}

// ---------------------------------------------------------------- 9

fn criterion_schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let want = [(0, 0.0002), (25, 0.0001), (50, 0.00005), (75, 0.000025)];
    for (epoch, lr) in want {
        let got = lr_at_epoch(&cfg, epoch);
        ensure(got == lr, format!("epoch {epoch}: {got} != {lr}"))?;
    }
    Ok("0.0002 / 0.0001 / 0.00005 / 0.000025 at epochs 0 / 25 / 50 / 75".into())
}

// ---------------------------------------------------------------- 10

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let base = TrainConfig {
        dataset: DatasetConfig { synthetic_count: 8, train_fraction: 1.0, ..DatasetConfig::default() },
        image_size: 16,
        batch_size: 4,
        epochs: 20,
        seed: 5,
        checkpoint_every: 10,
        generator: GeneratorConfig { width: 8, residual_blocks: 2, ..GeneratorConfig::default() },
        discriminator: DiscriminatorConfig { block_channels: vec![8, 16, 32, 64], ..DiscriminatorConfig::default() },
        ..TrainConfig::default()
    };
    let run_dir = dir.path().join("run");
    let cfg_a = TrainConfig { output_dir: run_dir.clone(), ..base.clone() };
    let a = train(&cfg_a).map_err(e2s)?;
    let a_final = fs::read(&a.paths.final_checkpoint).map_err(e2s)?;
    let a_mid = fs::read(a.paths.epoch_checkpoint(10)).map_err(e2s)?;
    let a_metrics = fs::read(&a.paths.metrics).map_err(e2s)?;

    // Same config and seed again, in the same directory.
    let b = train(&cfg_a).map_err(e2s)?;
    ensure(fs::read(&b.paths.final_checkpoint).map_err(e2s)? == a_final, "second run differs")?;

    // Save/load round trip.
    let loaded = Checkpoint::from_bytes(&a_final).map_err(e2s)?;
    ensure(loaded.to_bytes().map_err(e2s)? == a_final, "save/load round trip differs")?;
    let rebuilt = Trainer::from_checkpoint(&loaded).map_err(e2s)?.checkpoint();
    ensure(rebuilt.to_bytes().map_err(e2s)? == a_final, "trainer round trip differs")?;

    // Resume from the epoch-10 checkpoint and finish epochs 11..20.
    let mid = dir.path().join("epoch10.ckpt");
    fs::write(&mid, &a_mid).map_err(e2s)?;
    let resumed = resume(&mid, None, None).map_err(e2s)?;
    ensure(resumed.epochs.len() == 10, format!("resumed {} epochs", resumed.epochs.len()))?;
    ensure(fs::read(&resumed.paths.final_checkpoint).map_err(e2s)? == a_final, "resumed final checkpoint differs")?;
    ensure(fs::read(&resumed.paths.metrics).map_err(e2s)? == a_metrics, "resumed metrics differ")?;

    // Resuming an in-memory trainer gives the same bytes too.
    let mut t = Trainer::from_checkpoint(&Checkpoint::from_bytes(&a_mid).map_err(e2s)?).map_err(e2s)?;
    let data = load_split(&t.cfg, Split::Train).map_err(e2s)?;
    let other = dir.path().join("other");
    let out = run(&mut t, &data, &other).map_err(e2s)?;
    ensure(out.final_checkpoint == loaded, "in-memory resume differs")?;
    Ok(format!("20-epoch run: repeat, round trip and resume from epoch 10 all byte-identical ({} bytes)", a_final.len()))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient checks", criterion_gradients),
        (2, "oracle equivalence", criterion_oracles),
        (3, "loss formulas", criterion_losses),
        (4, "NMSE", criterion_nmse),
        (5, "corruption", criterion_corruption),
        (6, "shape contract", criterion_shapes),
        (7, "desk training smoke", criterion_training_smoke),
        (8, "NMSE rises with corruption level", criterion_trend),
        (9, "learning-rate schedule", criterion_schedule),
        (10, "determinism and persistence", criterion_determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id:2}] {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{id:2}] {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
