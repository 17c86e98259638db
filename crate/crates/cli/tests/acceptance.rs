//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion; exits non-zero when any of them fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use perceiver::gradcheck::{check, DEFAULT_STEP};
use perceiver::ingestion::{
    audio_to_segments, fuse_modalities, synthetic_dataset, video_to_patches, DatasetOptions, Video,
};
use perceiver::init::rng_from_seed;
use perceiver::model::{shared_name, video_dropout, Arrangement};
use perceiver::{
    count_flops, lamb_step, DatasetKind, FourierConfig, LambConfig, LambState, Perceiver, PerceiverConfig, Tape,
    Tensor64,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cli(args: &[&str]) -> Result<(String, Duration), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_perceiver")).args(args).output().map_err(|e| e.to_string())?;
    let took = start.elapsed();
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok((String::from_utf8_lossy(&out.stdout).into_owned(), took))
}

/// `(params, flops, wall time)` from `perceiver count`.
fn count(config: &str) -> Result<(f64, f64, Duration), String> {
    let path = configs().join(format!("{config}.cfg"));
    let (out, took) = cli(&["count", "--config", path.to_str().unwrap()])?;
    let total = out.lines().find_map(|l| l.strip_prefix("total,")).ok_or("no totals line")?;
    let mut it = total.split(',').map(|v| v.parse::<f64>().unwrap());
    Ok((it.next().unwrap(), it.next().unwrap(), took))
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn criterion_1() -> Outcome {
    let rows =
        [("imagenet-8x", 44.9), ("imagenet-1x-at-start", 41.1), ("imagenet-8x-unshared", 326.2), ("crossonly-4", 12.7)];
    let mut detail = Vec::new();
    let mut ok = true;
    for (config, target) in rows {
        let (params, _, took) = count(config)?;
        let m = params / 1e6;
        let pass = within(m, target, 0.02) && took < Duration::from_secs(1);
        ok &= pass;
        detail.push(format!("{config} {m:.2}M vs {target}M{}", if pass { "" } else { " (out of range)" }));
    }
    let line = detail.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_2() -> Outcome {
    let rows = [
        ("imagenet-8x", 707.2),
        ("imagenet-1x", 404.3),
        ("imagenet-2x", 447.6),
        ("imagenet-4x", 534.1),
        ("crossonly-4", 173.1),
        ("crossonly-8", 346.1),
        ("crossonly-12", 519.2),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (config, target) in rows {
        let (_, flops, took) = count(config)?;
        let b = flops / 1e9;
        let pass = within(b, target, 0.05) && took < Duration::from_secs(1);
        ok &= pass;
        detail.push(format!("{config} {b:.1}B vs {target}B"));
    }
    let line = detail.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_3() -> Outcome {
    let mut rng = rng_from_seed(33);
    let trials = 25;
    for trial in 0..trials {
        let heads = [1usize, 2, 4][rng.random_range(0..3)];
        let cfg = PerceiverConfig {
            num_cross_attends: rng.random_range(1..=3),
            self_attends_per_block: rng.random_range(0..=2),
            blocks_per_cross: rng.random_range(0..=2),
            latent_n: rng.random_range(1..=8),
            latent_d: heads * rng.random_range(1..=4),
            share_cross_after_first: rng.random_bool(0.5),
            share_latent_towers: rng.random_bool(0.5),
            arrangement: if rng.random_bool(0.5) { Arrangement::Interleaved } else { Arrangement::AtStart },
            num_classes: rng.random_range(1..=5),
            latent_heads: heads,
            input_channels: rng.random_range(1..=9),
            ..Default::default()
        };
        let m = rng.random_range(1..=64);
        let model = Perceiver::<f64>::build(cfg.clone(), trial).map_err(|e| e.to_string())?;
        let x = Tensor64::from_fn([m, cfg.input_channels], |_| rng.random_range(-1.0..1.0));
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape, false).map_err(|e| e.to_string())?;
        model.forward(&mut tape, &p, &x, &[], false).map_err(|e| e.to_string())?;
        let analytic = count_flops(&cfg, m).map_err(|e| e.to_string())?.flops;
        if analytic != tape.flops() {
            return Err(format!("trial {trial}: analytic {analytic} vs executed {}", tape.flops()));
        }
    }
    Ok(format!("{trials} random configs, analytic == executed"))
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("perm.cfg");
    std::fs::write(
        &cfg,
        "dtype = \"f32\"\ninput_rows = 256\ninput_channels = 24\nnum_classes = 4\n\
         num_cross_attends = 2\nself_attends_per_block = 2\nblocks_per_cross = 1\n\
         latent_n = 8\nlatent_d = 32\ncross_heads = 2\nlatent_heads = 2\n",
    )
    .map_err(|e| e.to_string())?;
    let (out, _) = cli(&["permute-eval", "--config", cfg.to_str().unwrap(), "--items", "50"])?;
    let change = |model: &str| -> f64 {
        out.lines()
            .find(|l| l.starts_with(&format!("{model},")))
            .and_then(|l| l.split(',').nth(2))
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::NAN)
    };
    let (p, c) = (change("perceiver"), change("conv1d_probe"));
    let line = format!("Perceiver max relative change {p:.2e}, conv probe {c:.2e}");
    if p < 1e-6 && c > 1e-2 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn tiny_loss(model: &Perceiver<f64>, batch: &[(Tensor64, usize)], grad: bool) -> (f64, Vec<Tensor64>) {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape, grad).unwrap();
    let mut total = None;
    for (x, y) in batch {
        let out = model.forward(&mut tape, &p, x, &[], false).unwrap();
        let l = tape.cross_entropy(out.logits, *y).unwrap();
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l).unwrap(),
        });
    }
    let total = total.unwrap();
    let value = tape.value(total).item();
    if !grad {
        return (value, Vec::new());
    }
    tape.backward(total).unwrap();
    (value, model.params().gradients(&tape, &p))
}

fn criterion_5() -> Outcome {
    let cfg = PerceiverConfig {
        num_cross_attends: 2,
        self_attends_per_block: 1,
        blocks_per_cross: 1,
        latent_n: 4,
        latent_d: 8,
        num_classes: 3,
        latent_heads: 2,
        input_channels: 6,
        latent_init_scale: 0.5,
        ..Default::default()
    };
    let mut rng = rng_from_seed(55);
    let mut model = Perceiver::<f64>::build(cfg.clone(), 5).map_err(|e| e.to_string())?;
    for t in model.params_mut().tables_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let batch: Vec<(Tensor64, usize)> =
        (0..2).map(|i| (Tensor64::from_fn([12, 6], |_| rng.random_range(-1.0..1.0)), i * 2)).collect();
    let (_, analytic) = tiny_loss(&model, &batch, true);
    let tables = model.params().tables().to_vec();
    let mut coords: Vec<(usize, usize)> =
        tables.iter().enumerate().map(|(t, x)| (t, rng.random_range(0..x.numel()))).collect();
    while coords.len() < 240 {
        let t = rng.random_range(0..tables.len());
        coords.push((t, rng.random_range(0..tables[t].numel())));
    }
    let f = |xs: &[Tensor64]| {
        let mut m = model.clone();
        m.params_mut().tables_mut().clone_from_slice(xs);
        Ok(tiny_loss(&m, &batch, false).0)
    };
    let report = check(f, &tables, &analytic, &coords, DEFAULT_STEP).map_err(|e| e.to_string())?;
    let worst = report.max_rel_error();

    // Aliased gradients against the unrolled copy.
    let unrolled = model.unshare().map_err(|e| e.to_string())?;
    let (_, gu) = tiny_loss(&unrolled, &batch, true);
    let mut summed: Vec<Tensor64> = analytic.iter().map(|g| Tensor64::zeros(g.shape().to_vec())).collect();
    for (name, g) in unrolled.params().names().iter().zip(&gu) {
        let id = model.params().find(&shared_name(&cfg, name)).ok_or("unmapped table")?;
        summed[id.index()].data_mut().iter_mut().zip(g.data()).for_each(|(s, v)| *s += v);
    }
    let alias_err = analytic
        .iter()
        .zip(&summed)
        .flat_map(|(a, s)| a.data().iter().zip(s.data()).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)))
        .fold(0.0, f64::max);
    let line =
        format!("{} coordinates, max relative error {worst:.2e}; aliased vs unrolled {alias_err:.1e}", report.len());
    if report.len() >= 200 && worst < 1e-5 && alias_err < 1e-12 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_6() -> Outcome {
    let mut rng = rng_from_seed(66);
    let mut params = vec![Tensor64::from_fn([4, 3], |_| rng.random_range(-1.0..1.0))];
    let mut theta = params[0].data().to_vec();
    let (mut m, mut v) = (vec![0.0; 12], vec![0.0; 12]);
    let cfg = LambConfig { force_unit_trust: true, ..Default::default() };
    let mut state = LambState::new(cfg, &params).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for t in 1..=30 {
        let g = Tensor64::from_fn([4, 3], |_| rng.random_range(-1.0..1.0));
        lamb_step(&mut params, std::slice::from_ref(&g), &mut state, 0.01).map_err(|e| e.to_string())?;
        for j in 0..12 {
            m[j] = 0.9 * m[j] + 0.1 * g.data()[j];
            v[j] = 0.999 * v[j] + 0.001 * g.data()[j].powi(2);
            let mh = m[j] / (1.0 - 0.9f64.powi(t));
            let vh = v[j] / (1.0 - 0.999f64.powi(t));
            theta[j] -= 0.01 * mh / (vh.sqrt() + 1e-6);
            worst = worst.max((theta[j] - params[0].data()[j]).abs());
        }
    }
    let mut scalar = vec![Tensor64::scalar(1.0)];
    let mut s = LambState::new(LambConfig::default(), &scalar).map_err(|e| e.to_string())?;
    lamb_step(&mut scalar, &[Tensor64::scalar(1.0)], &mut s, 0.1).map_err(|e| e.to_string())?;
    let hand = (scalar[0].item() - 0.9).abs();
    let line = format!("Adam oracle max deviation {worst:.1e}; hand step error {hand:.1e}");
    if worst < 1e-12 && hand < 1e-12 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Trains a bundled config into a fresh directory and returns its test
/// accuracy.
fn train(config: &str) -> Result<f64, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = configs().join(format!("{config}.cfg"));
    cli(&["train", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])?;
    let results = std::fs::read_to_string(dir.path().join("results.csv")).map_err(|e| e.to_string())?;
    results
        .lines()
        .find_map(|l| l.strip_prefix("test_accuracy,"))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| "no test accuracy".into())
}

fn criterion_7() -> Outcome {
    let sign = train("sign-of-mean")?;
    let shapes = train("shapes")?;
    let permuted = train("shapes-permuted")?;
    let line = format!("sign-of-mean {sign:.3}, shapes {shapes:.3}, shapes permuted {permuted:.3}");
    if sign >= 0.99 && shapes >= 0.9 && (shapes - permuted).abs() <= 0.005 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_8() -> Outcome {
    let mut cases = 0;
    for dims in 1..=3 {
        for k in 1..=32 {
            for mu in [2.0, 4.0, 7.0, 16.0, 64.0, 224.0, 1124.0] {
                let cfg = FourierConfig::new(dims, k, mu);
                if cfg.channels() != dims * (2 * k + 1) {
                    return Err(format!("channels for d={dims} K={k}"));
                }
                let bands = cfg.bands(0).map_err(|e| e.to_string())?;
                let top = if k == 1 { 1.0 } else { mu / 2.0 };
                if bands[0] != 1.0 || *bands.last().unwrap() != top {
                    return Err(format!("endpoints for K={k} μ={mu}: {bands:?}"));
                }
                if k > 1 {
                    let step = (mu / 2.0 - 1.0) / (k - 1) as f64;
                    if bands.windows(2).any(|w| (w[1] - w[0] - step).abs() > 1e-12) {
                        return Err(format!("uneven spacing for K={k} μ={mu}"));
                    }
                }
                let axes = vec![4; dims];
                let grid = perceiver::positional::PositionGrid::linear(&axes).map_err(|e| e.to_string())?;
                let f: Tensor64 = perceiver::positional::fourier_features(&grid, &cfg).map_err(|e| e.to_string())?;
                if f.data().iter().any(|v| v.is_nan() || v.abs() > 1.0) {
                    return Err(format!("unbounded output for d={dims} K={k} μ={mu}"));
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (d, K, μ) cases"))
}

fn criterion_9() -> Outcome {
    let cfg = configs().join("bench.cfg");
    let (out, _) = cli(&["bench", "--config", cfg.to_str().unwrap(), "--runs", "3"])?;
    let rows: Vec<Vec<f64>> =
        out.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect();
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    let ratios: Vec<f64> = rows.iter().skip(1).map(|r| r[4]).collect();
    let gaps: Vec<f64> = ratios.iter().map(|r| (4.0 - r).abs()).collect();
    let trending = gaps.windows(2).all(|w| w[1] < w[0]) && ratios.iter().all(|r| *r > 2.0 && *r < 4.0);
    let walls: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let timed = walls.iter().all(|w| w.is_finite() && *w > 0.0);
    let line = format!("R² {r2:.6}; transformer ratios {ratios:.3?}; wall ms {walls:.1?}");
    if r2 > 0.999 && trending && timed {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_10() -> Outcome {
    let frames = Video::new(32, 224, 224, vec![128; 32 * 224 * 224 * 3]).map_err(|e| e.to_string())?;
    let video =
        video_to_patches::<f32>(&frames, [2, 8, 8], &FourierConfig::new(3, 32, 32.0)).map_err(|e| e.to_string())?;
    let wave = vec![0.0f32; 61_440];
    let audio =
        audio_to_segments::<f32>(&wave, 128, false, &FourierConfig::new(1, 64, 480.0)).map_err(|e| e.to_string())?;
    let fused = fuse_modalities(&[video.clone(), audio.clone()], &[4, 1]).map_err(|e| e.to_string())?;
    let (m, c) = (fused.data.rows(), fused.data.last_dim());
    let widths_ok = c == (video.data.last_dim() + 4).max(audio.data.last_dim() + 1)
        && fused.spans.iter().all(|s| s.feature_channels <= c);

    let mut rng = rng_from_seed(10);
    let d = synthetic_dataset::<f32>(DatasetKind::TwoModalityParity, 1, 0, 3, DatasetOptions::default())
        .map_err(|e| e.to_string())?;
    let mut dropped = 0;
    for _ in 0..10_000 {
        let mut x = d.train[0].input.clone();
        dropped +=
            usize::from(video_dropout(&mut x, &d.spans, "video", 0.3, true, &mut rng).map_err(|e| e.to_string())?);
    }
    let rate = dropped as f64 / 10_000.0;

    let fused_acc = train("parity")?;
    let no_video = train("parity-no-video")?;
    let line = format!(
        "M = {m} ({} + {}), C = {c}; dropout rate {rate:.4}; parity fused {fused_acc:.3}, video dropped {no_video:.3}",
        video.data.rows(),
        audio.data.rows()
    );
    if m == 13_024 && widths_ok && (rate - 0.3).abs() <= 0.02 && fused_acc >= 0.95 && no_video <= 0.55 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, u64);
    let criteria: [Criterion; 10] = [
        ("parameter counts", criterion_1, 5),
        ("FLOP counts", criterion_2, 8),
        ("count oracle", criterion_3, 60),
        ("permutation invariance", criterion_4, 60),
        ("gradient integrity", criterion_5, 300),
        ("optimizer", criterion_6, 10),
        ("desk-scale learning", criterion_7, 900),
        ("Fourier invariants", criterion_8, 10),
        ("scaling bench", criterion_9, 660),
        ("multimodal plumbing", criterion_10, 900),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took.as_secs() >= budget => Err(format!("{d}; took {took:.1?}, budget {budget} s")),
            other => other,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {:>2} {tag} {name} [{took:.1?}]: {detail}", i + 1);
        failed += usize::from(result.is_err());
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
