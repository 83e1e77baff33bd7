use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ssrgan::corruption::CorruptionMask;
use ssrgan::data::{denormalize, load_image, normalize, resize_bilinear, save_image, synthetic_images};
use ssrgan::{load_checkpoint, nmse, save_checkpoint, Network, Pass, Tensor, Trainer};

fn ssrgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssrgan"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", stdout(o), stderr(o));
}

#[track_caller]
fn fails_with(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error["), "{err}");
}

/// Smooth test images in `[0.1, 0.9]`, so no pixel equals the black fill.
fn write_images(dir: &Path, sizes: &[(usize, usize)]) {
    fs::create_dir_all(dir).unwrap();
    for (i, &(h, w)) in sizes.iter().enumerate() {
        let img = &synthetic_images(1, h.max(w), i as u64).unwrap()[0];
        let img = resize_bilinear(img, h, w).unwrap();
        save_image(&img, &dir.join(format!("img_{i}.png"))).unwrap();
    }
}

fn desk_config(dir: &Path, epochs: usize, size: usize, out: &Path) -> PathBuf {
    let text = format!(
        r#"{{
  "dataset": {{"synthetic_count": 24, "train_fraction": 0.67}},
  "image_size": {size}, "epochs": {epochs}, "batch_size": 4, "seed": 3,
  "generator": {{"width": 8, "residual_blocks": 1}},
  "discriminator": {{"block_channels": [8, 8, 16, 16]}},
  "checkpoint_every": 5, "nmse_subset": 4,
  "output_dir": "{}"
}}"#,
        p(out)
    );
    let path = dir.join(format!("config_{epochs}_{size}.json"));
    fs::write(&path, text).unwrap();
    path
}

fn differing_sites(a: &Tensor<f32>, b: &Tensor<f32>) -> usize {
    let (h, w) = (a.shape()[1], a.shape()[2]);
    (0..h * w)
        .filter(|&i| (0..3).any(|c| a.data()[c * h * w + i] != b.data()[c * h * w + i]))
        .count()
}

#[test]
fn corrupt_blanks_exact_count() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("in"), dir.path().join("out"));
    write_images(&input, &[(128, 128)]);
    let o = ssrgan(&["corrupt", "--input", p(&input), "--output", p(&output), "--level", "0.3", "--seed", "4"]);
    ok(&o);
    assert!(stdout(&o).contains("corrupted 1 images"));
    let original = load_image(&input.join("img_0.png")).unwrap().pixels;
    let corrupted = load_image(&output.join("img_0.png")).unwrap().pixels;
    assert_eq!(differing_sites(&original, &corrupted), 4915);

    let mask = fs::read(output.join("img_0.mask.pgm")).unwrap();
    assert!(mask.starts_with(b"P5\n128 128 255\n"));
    let body = &mask[mask.len() - 128 * 128..];
    assert_eq!(body.iter().filter(|&&v| v == 255).count(), 4915);
    assert!(body.iter().all(|&v| v == 0 || v == 255));
}

#[test]
fn corrupt_level_zero_keeps_resized_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("in"), dir.path().join("out"));
    write_images(&input, &[(20, 30), (16, 16)]);
    ok(&ssrgan(&["corrupt", "--input", p(&input), "--output", p(&output), "--level", "0", "--size", "16"]));
    for i in 0..2 {
        let name = format!("img_{i}.png");
        let resized = resize_bilinear(&load_image(&input.join(&name)).unwrap().pixels, 16, 16).unwrap();
        let expected = dir.path().join(format!("expected_{i}.png"));
        save_image(&resized, &expected).unwrap();
        assert_eq!(fs::read(output.join(&name)).unwrap(), fs::read(&expected).unwrap());
    }
}

#[test]
fn corrupt_errors_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_images(&input, &[(12, 12)]);
    let out = |name: &str| dir.path().join(name);
    let args = |o: &Path, level: &str| {
        ssrgan(&["corrupt", "--input", p(&input), "--output", p(o), "--level", level, "--seed", "9", "--size", "12"])
    };
    fails_with(&args(&out("a"), "1.1"), 2);
    let empty = out("empty");
    fs::create_dir_all(&empty).unwrap();
    fails_with(
        &ssrgan(&["corrupt", "--input", p(&empty), "--output", p(&out("b")), "--level", "0.3"]),
        2,
    );
    let blocker = out("file");
    fs::write(&blocker, b"x").unwrap();
    fails_with(&args(&blocker.join("sub"), "0.3"), 3);

    ok(&args(&out("c"), "0.5"));
    ok(&args(&out("d"), "0.5"));
    for name in ["img_0.png", "img_0.mask.pgm"] {
        assert_eq!(fs::read(out("c").join(name)).unwrap(), fs::read(out("d").join(name)).unwrap());
    }
}

#[test]
fn every_subcommand_documents_flags_and_rejects_unknown_ones() {
    let flags: [(&str, &[&str]); 7] = [
        ("corrupt", &["--input", "--output", "--level", "--seed", "--size"]),
        ("train", &["--config", "--resume", "--seed", "--epochs", "--output"]),
        ("eval", &["--checkpoint", "--split", "--level", "--seed", "--out"]),
        ("infer", &["--checkpoint", "--image", "--level", "--seed", "--out"]),
        ("sweep", &["--config", "--levels", "--seed", "--epochs", "--output"]),
        ("report", &["--runs", "--out", "--seed", "--no-plots"]),
        ("gradcheck", &["--seed", "--instances"]),
    ];
    for (cmd, names) in flags {
        let help = ssrgan(&[cmd, "--help"]);
        ok(&help);
        for name in names {
            assert!(stdout(&help).contains(name), "{cmd} --help lacks {name}");
        }
        fails_with(&ssrgan(&[cmd, "--no-such-flag"]), 2);
    }
}

#[test]
fn train_writes_one_row_per_epoch_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = desk_config(dir.path(), 20, 32, &run);
    let o = ssrgan(&["train", "--config", p(&cfg)]);
    ok(&o);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,lr,loss_D,loss_G,nmse");
    assert_eq!(lines.len(), 21);
    assert!(run.join("final.ckpt").is_file());
    assert!(run.join("checkpoints/epoch_0010.ckpt").is_file());
    let eval = fs::read_to_string(run.join("eval.csv")).unwrap();
    assert!(eval.starts_with("dataset,corruption_level,epoch,nmse_mean,n_images\nsynthetic,0.3,20,"));

    let out = dir.path().join("report");
    ok(&ssrgan(&["report", "--runs", p(&run), "--out", p(&out)]));
    let curve = fs::read_to_string(out.join("nmse_vs_epoch.csv")).unwrap();
    assert_eq!(curve.lines().count(), 21);
    assert!(curve.starts_with("run,dataset,corruption_level,epoch,nmse\nrun,synthetic,0.3,1,"));
    assert!(out.join("nmse_vs_epoch.png").is_file());
    assert!(out.join("nmse_vs_level.png").is_file());

    // The same command twice leaves byte-identical files.
    let first = fs::read(run.join("final.ckpt")).unwrap();
    let first_metrics = fs::read(run.join("metrics.csv")).unwrap();
    ok(&ssrgan(&["train", "--config", p(&cfg)]));
    assert_eq!(fs::read(run.join("final.ckpt")).unwrap(), first);
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), first_metrics);
}

#[test]
fn train_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = desk_config(dir.path(), 10, 16, &run);
    ok(&ssrgan(&["train", "--config", p(&cfg)]));
    let full = fs::read(run.join("final.ckpt")).unwrap();

    let mid = dir.path().join("mid.ckpt");
    fs::copy(run.join("checkpoints/epoch_0005.ckpt"), &mid).unwrap();
    ok(&ssrgan(&["train", "--resume", p(&mid)]));
    assert_eq!(fs::read(run.join("final.ckpt")).unwrap(), full);
    fails_with(&ssrgan(&["train", "--resume", p(&mid), "--seed", "1"]), 2);

    let csv = dir.path().join("e/eval.csv");
    let o = ssrgan(&["eval", "--checkpoint", p(&run.join("final.ckpt")), "--out", p(&csv), "--seed", "2"]);
    ok(&o);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(stdout(&o), text);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], ["synthetic", "0.3", "10"]);
    assert_eq!(row[4], "8");
    let value: f64 = row[3].parse().unwrap();
    assert!(value > 0.0 && value < 0.3, "{value}");
    fails_with(&ssrgan(&["eval", "--checkpoint", p(&run.join("final.ckpt")), "--level", "-0.1"]), 2);
}

fn infer_oracle(ckpt: &Path, image: &Path, level: f64, seed: u64) -> f64 {
    let mut t = Trainer::from_checkpoint(&load_checkpoint(ckpt).unwrap()).unwrap();
    let size = t.cfg.image_size;
    let original = resize_bilinear(&load_image(image).unwrap().pixels, size, size).unwrap();
    let mask = CorruptionMask::from_seed(size, size, level, seed).unwrap();
    let x = mask.apply(&normalize(&original), -1.0).unwrap();
    let y = t.generator.infer(&Tensor::stack(&[x]).unwrap(), Pass::EVAL).unwrap();
    let recon = denormalize(&y.index_axis0(0).unwrap());
    nmse(&original, &recon).unwrap()
}

#[test]
fn infer_triptych_and_checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = desk_config(dir.path(), 2, 16, &run);
    ok(&ssrgan(&["train", "--config", p(&cfg)]));
    let ckpt = run.join("final.ckpt");
    let images = dir.path().join("img");
    write_images(&images, &[(24, 20)]);
    let image = images.join("img_0.png");

    for (level, seed) in [(0.0, 0u64), (0.5, 7)] {
        let out = dir.path().join(format!("strip_{level}.png"));
        let o = ssrgan(&[
            "infer", "--checkpoint", p(&ckpt), "--image", p(&image),
            "--level", &level.to_string(), "--seed", &seed.to_string(), "--out", p(&out),
        ]);
        ok(&o);
        let printed: f64 = stdout(&o).trim().strip_prefix("nmse ").unwrap().parse().unwrap();
        let expected = infer_oracle(&ckpt, &image, level, seed);
        assert!((printed - expected).abs() < 5e-7, "{printed} vs {expected}");

        let strip = load_image(&out).unwrap().pixels;
        assert_eq!(strip.shape(), [3, 16, 3 * 16 + 2]);
        let panel = |k: usize| -> Vec<f32> {
            (0..3 * 16)
                .flat_map(|row| {
                    let start = row * 50 + k * 17;
                    strip.data()[start..start + 16].to_vec()
                })
                .collect()
        };
        assert_eq!(panel(0) == panel(1), level == 0.0);
        let again = dir.path().join("again.png");
        ok(&ssrgan(&[
            "infer", "--checkpoint", p(&ckpt), "--image", p(&image),
            "--level", &level.to_string(), "--seed", &seed.to_string(), "--out", p(&again),
        ]));
        assert_eq!(fs::read(&again).unwrap(), fs::read(&out).unwrap());
    }

    // A tensor with the wrong shape.
    let mut bad = load_checkpoint(&ckpt).unwrap();
    let slot = bad.tensors.iter_mut().find(|(n, _)| n == "g.tail.weight").unwrap();
    slot.1 = Tensor::zeros(&[1, 1, 1, 1]).unwrap();
    let bad_path = dir.path().join("bad.ckpt");
    save_checkpoint(&bad, &bad_path).unwrap();
    let args = |c: &Path| {
        ssrgan(&["infer", "--checkpoint", p(c), "--image", p(&image), "--level", "0.3", "--out", p(&dir.path().join("x.png"))])
    };
    fails_with(&args(&bad_path), 5);
    // A flipped payload byte.
    let mut bytes = fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 2] ^= 0x40;
    let flipped = dir.path().join("flipped.ckpt");
    fs::write(&flipped, bytes).unwrap();
    fails_with(&args(&flipped), 5);
}

#[test]
fn sweep_default_levels_and_trend() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path(), 1, 16, &dir.path().join("unused"));
    let all = dir.path().join("all");
    let o = ssrgan(&["sweep", "--config", p(&cfg), "--output", p(&all)]);
    ok(&o);
    let table = fs::read_to_string(all.join("nmse_vs_level.csv")).unwrap();
    let levels: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(levels, ["0.3", "0.4", "0.5", "0.6", "0.7", "0.8"]);
    for l in ["0.30", "0.40", "0.50", "0.60", "0.70", "0.80"] {
        assert!(all.join(format!("level_{l}/final.ckpt")).is_file());
    }
    fails_with(&ssrgan(&["sweep", "--config", p(&cfg), "--levels", "0.3,1.5"]), 2);

    let cfg = desk_config(dir.path(), 8, 16, &dir.path().join("unused"));
    let trend = dir.path().join("trend");
    ok(&ssrgan(&["sweep", "--config", p(&cfg), "--levels", "0.8,0.3", "--output", p(&trend)]));
    let table = fs::read_to_string(trend.join("nmse_vs_level.csv")).unwrap();
    let rows: Vec<(f64, f64)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows[0].0, 0.3);
    assert!(rows[1].1 > rows[0].1, "{rows:?}");
}

fn fake_run(dir: &Path, level: f64, nmse: f64, metrics: &str) {
    fs::create_dir_all(dir).unwrap();
    let cfg = format!(r#"{{"corruption_level": {level}, "dataset": {{"name": "flowers"}}}}"#);
    fs::write(dir.join("config.json"), cfg).unwrap();
    fs::write(dir.join("metrics.csv"), metrics).unwrap();
    fs::write(
        dir.join("eval.csv"),
        format!("dataset,corruption_level,epoch,nmse_mean,n_images\nflowers,{level},2,{nmse},10\n"),
    )
    .unwrap();
}

#[test]
fn report_merges_sorts_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let good = "epoch,lr,loss_D,loss_G,nmse\n1,0.0002,0.5,0.1,0.2\n2,0.0002,0.4,0.08,0.15\n";
    fake_run(&runs.join("a"), 0.8, 0.3, good);
    fake_run(&runs.join("b"), 0.3, 0.1, good);
    fake_run(&runs.join("c"), 0.5, 0.2, good);
    let out = dir.path().join("out");
    ok(&ssrgan(&["report", "--runs", p(&runs), "--out", p(&out)]));
    let table = fs::read_to_string(out.join("nmse_vs_level.csv")).unwrap();
    assert_eq!(
        table,
        "dataset,corruption_level,epoch,nmse_mean,n_images\n\
         flowers,0.3,2,0.1,10\nflowers,0.5,2,0.2,10\nflowers,0.8,2,0.3,10\n"
    );
    assert_eq!(fs::read_to_string(out.join("nmse_vs_epoch.csv")).unwrap().lines().count(), 7);
    let png = fs::read(out.join("nmse_vs_level.png")).unwrap();
    ok(&ssrgan(&["report", "--runs", p(&runs), "--out", p(&out)]));
    assert_eq!(fs::read(out.join("nmse_vs_level.png")).unwrap(), png);

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fails_with(&ssrgan(&["report", "--runs", p(&empty), "--out", p(&out)]), 2);

    fake_run(&runs.join("d"), 0.4, 0.1, "epoch,lr,loss_D,loss_G,nmse\n1,0.0002,0.5,0.1,0.2\n2,0.0002,oops,0.08,0.15\n");
    let o = ssrgan(&["report", "--runs", p(&runs), "--out", p(&out)]);
    fails_with(&o, 4);
    assert!(stderr(&o).contains("metrics.csv:3"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes() {
    let o = ssrgan(&["gradcheck", "--instances", "1", "--seed", "3"]);
    ok(&o);
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 15);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}
