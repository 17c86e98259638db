use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use perceiver::accounting::{count_byte_transformer, count_flops};
use perceiver::baselines::{ByteTransformer, ByteTransformerConfig, Conv1dProbe};
use perceiver::checkpoint::load_checkpoint;
use perceiver::export::{grid_csv, pgm};
use perceiver::ingestion::{Dataset, PermutationSpec};
use perceiver::init::{rng_from_seed, truncated_normal};
use perceiver::train::{evaluate, train as train_model, VIDEO};
use perceiver::{DType, Error, Perceiver, Result, RunConfig, Scalar, Tensor};

macro_rules! by_dtype {
    ($cfg:expr, $f:ident ( $($arg:expr),* )) => {
        match $cfg.dtype()? {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub struct RunOutcome {
    pub steps: u64,
    pub final_loss: f64,
    pub test_accuracy: f64,
}

/// Trains one configured run into `out_dir`.
pub fn run<T: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let data: Dataset<T> = cfg.dataset()?;
    let model_cfg = cfg.model_config(Some(&data))?;
    let opts = cfg.train_options(data.train.len(), Some(out_dir.to_path_buf()));
    let resolved = RunConfig {
        output_dir: Some(out_dir.to_path_buf()),
        input_rows: Some(data.rows()),
        input_channels: Some(data.channels()),
        num_classes: Some(data.num_classes),
        epoch_length_steps: Some(opts.schedule.epoch_length),
        ..cfg.clone()
    };
    write(&out_dir.join("config.toml"), resolved.to_toml()?)?;
    let mut model = Perceiver::<T>::build(model_cfg, cfg.seed)?;
    let rows = train_model(&mut model, &data, &opts)?;
    let drop = cfg.drop_video_at_eval.then_some(VIDEO);
    let test_accuracy = evaluate(&model, &data.test, &data.spans, drop)?;
    let final_loss = rows.last().map_or(f64::NAN, |r| r.loss);
    write(
        &out_dir.join("results.csv"),
        format!("metric,value\nsteps,{}\nfinal_loss,{final_loss}\ntest_accuracy,{test_accuracy}\n", rows.len()),
    )?;
    Ok(RunOutcome { steps: rows.len() as u64, final_loss, test_accuracy })
}

fn output_dir(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    out.or_else(|| cfg.output_dir.clone()).ok_or_else(|| Error::Config("output_dir: required (or pass --out)".into()))
}

pub fn train(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = output_dir(&cfg, out)?;
    let r = by_dtype!(cfg, run(&cfg, &dir))?;
    println!("trained {} steps: final loss {:.6}, test accuracy {:.4}", r.steps, r.final_loss, r.test_accuracy);
    Ok(())
}

fn eval_typed<T: Scalar>(cfg: &RunConfig, checkpoint: &Path, drop_video: bool) -> Result<()> {
    let data: Dataset<T> = cfg.dataset()?;
    let (model, step) = load_checkpoint::<T>(checkpoint)?;
    let acc = evaluate(&model, &data.test, &data.spans, drop_video.then_some(VIDEO))?;
    println!("step {step}: test accuracy {acc:.4} on {} items", data.test.len());
    Ok(())
}

pub fn eval(config: &Path, checkpoint: &Path, drop_video: bool) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    by_dtype!(cfg, eval_typed(&cfg, checkpoint, drop_video))
}

pub fn count(config: &Path, m: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let data = if cfg.has_dataset() { Some(cfg.dataset::<f32>()?) } else { None };
    let model_cfg = cfg.model_config(data.as_ref())?;
    let m = m
        .or(cfg.input_rows)
        .or(data.as_ref().map(|d| d.rows()))
        .ok_or_else(|| Error::Config("input_rows: required to count FLOPs (or pass --m)".into()))?;
    let report = count_flops(&model_cfg, m)?;
    let mut csv = report.to_csv();
    csv.push_str(&format!("total,{},{}\n", report.params, report.flops));
    print!("{csv}");
    eprintln!(
        "M={m}: {:.2}M params, {:.1}B FLOPs unfused ({:.1}B fused, {:.1}B without head)",
        report.params as f64 / 1e6,
        report.flops as f64 / 1e9,
        report.fused_flops() as f64 / 1e9,
        report.flops_without_head() as f64 / 1e9,
    );
    if let Some(path) = out {
        write(&path, csv)?;
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn bench_typed<T: Scalar>(
    cfg: &RunConfig,
    ms: &[usize],
    runs: Option<usize>,
    width: usize,
    layers: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    if ms.is_empty() || ms.windows(2).any(|w| w[0] >= w[1]) || ms[0] == 0 {
        return Err(Error::Config("m: sizes must be positive and strictly ascending".into()));
    }
    if cfg.learned_position_channels.is_some() {
        return Err(Error::Config(
            "learned_position_channels: a learned table fixes M and cannot be benchmarked".into(),
        ));
    }
    let data = if cfg.has_dataset() { Some(cfg.dataset::<T>()?) } else { None };
    let model_cfg = cfg.model_config(data.as_ref())?;
    let baseline = ByteTransformerConfig {
        input_channels: model_cfg.input_channels,
        width,
        layers,
        heads: 1,
        num_classes: model_cfg.num_classes,
        ..Default::default()
    };
    let model = Perceiver::<T>::build(model_cfg.clone(), cfg.seed)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut csv = String::from("m,perceiver_flops,perceiver_wall_ms,transformer_flops,transformer_ratio\n");
    let mut prev: Option<u64> = None;
    for &m in ms {
        let pf = count_flops(&model_cfg, m)?.flops;
        let tf = count_byte_transformer(&baseline, m)?.flops;
        let wall = match runs {
            Some(n) => {
                let x: Tensor<T> = truncated_normal(&mut rng, [m, model_cfg.input_channels], 1.0)?;
                let spans = single_span(m, model_cfg.input_channels);
                let times = (0..n.max(1))
                    .map(|_| {
                        let t = Instant::now();
                        model.logits(&x, &spans).map(|_| t.elapsed().as_secs_f64() * 1e3)
                    })
                    .collect::<Result<Vec<_>>>()?;
                format!("{:.3}", median(times))
            }
            None => String::new(),
        };
        let ratio = prev.map_or(String::new(), |p| format!("{:.4}", tf as f64 / p as f64));
        csv.push_str(&format!("{m},{pf},{wall},{tf},{ratio}\n"));
        prev = Some(tf);
    }
    print!("{csv}");
    if let Some(path) = out {
        write(&path, csv)?;
    }
    Ok(())
}

fn single_span(m: usize, c: usize) -> Vec<perceiver::ModalitySpan> {
    vec![perceiver::ModalitySpan { modality: "input".into(), rows: 0..m, feature_channels: c }]
}

pub fn bench(
    config: &Path,
    ms: &[usize],
    runs: Option<usize>,
    width: usize,
    layers: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    by_dtype!(cfg, bench_typed(&cfg, ms, runs, width, layers, out))
}

/// `‖a − b‖∞ / ‖a‖∞`.
pub fn relative_change<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    let diff = a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x.as_f64() - y.as_f64()).abs()));
    diff / scale.max(f64::MIN_POSITIVE)
}

fn permute_eval_typed<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    items: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let data = if cfg.has_dataset() { Some(cfg.dataset::<T>()?) } else { None };
    let model = match &checkpoint {
        Some(path) => load_checkpoint::<T>(path)?.0,
        None => Perceiver::build(cfg.model_config(data.as_ref())?, cfg.seed)?,
    };
    let (m, c) = (data.as_ref().map(|d| d.rows()).or(cfg.input_rows), model.config().input_channels);
    let m = m.ok_or_else(|| Error::Config("input_rows: required without a dataset".into()))?;
    if !model.config().modalities.is_empty() {
        return Err(Error::Config("permute-eval needs single-modality input".into()));
    }
    let mut rng = rng_from_seed(seed);
    let inputs: Vec<Tensor<T>> = match &data {
        Some(d) => d.test.iter().take(items).map(|e| e.input.clone()).collect(),
        None => (0..items).map(|_| truncated_normal(&mut rng, [m, c], 1.0)).collect::<Result<_>>()?,
    };
    let spec = PermutationSpec::random(m, seed);
    let spans = data.as_ref().map_or_else(|| single_span(m, c), |d| d.spans.clone());
    let transformer = ByteTransformer::<T>::build(
        ByteTransformerConfig {
            input_channels: c,
            width: 32,
            layers: 1,
            heads: 1,
            num_classes: model.config().num_classes,
            ..Default::default()
        },
        seed,
    )?;
    let probe = Conv1dProbe::<T>::new(m, c, 8, model.config().num_classes, &mut rng)?;
    let mut changes = [Vec::new(), Vec::new(), Vec::new()];
    for x in &inputs {
        let y = x.permute_rows(&spec.permutation)?;
        changes[0].push(relative_change(&model.logits(x, &spans)?, &model.logits(&y, &spans)?));
        changes[1].push(relative_change(&transformer.logits(x)?, &transformer.logits(&y)?));
        changes[2].push(relative_change(&probe.logits(x)?, &probe.logits(&y)?));
    }
    let mut csv = String::from("model,items,max_relative_change,mean_relative_change\n");
    for (name, v) in ["perceiver", "byte_transformer", "conv1d_probe"].iter().zip(&changes) {
        let max = v.iter().copied().fold(0.0, f64::max);
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        csv.push_str(&format!("{name},{},{max:e},{mean:e}\n", v.len()));
    }
    print!("{csv}");
    if let (Some(d), Some(_)) = (&data, &checkpoint) {
        let plain = evaluate(&model, &d.test, &d.spans, None)?;
        let permuted = d.permuted(&spec)?;
        let perm = evaluate(&model, &permuted.test, &permuted.spans, None)?;
        eprintln!("test accuracy {plain:.4}, with rows permuted {perm:.4}");
    }
    if let Some(path) = out {
        write(&path, csv)?;
    }
    Ok(())
}

pub fn permute_eval(
    config: &Path,
    checkpoint: Option<PathBuf>,
    items: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    by_dtype!(cfg, permute_eval_typed(&cfg, checkpoint, items, seed, out))
}

fn attmaps_typed<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    item: usize,
    attend: &str,
    latents: &[usize],
    out: &Path,
) -> Result<()> {
    let data: Dataset<T> = cfg.dataset()?;
    let (model, _) = load_checkpoint::<T>(checkpoint)?;
    let example = data
        .test
        .get(item)
        .ok_or_else(|| Error::Config(format!("item: {item} is past the {} test items", data.test.len())))?;
    let (_, maps) = model.logits_with_maps(&example.input, &data.spans)?;
    let selected: Vec<usize> = if attend == "all" {
        (0..maps.len()).collect()
    } else {
        let i: usize =
            attend.parse().map_err(|_| Error::Config(format!("attend: expected an index or `all`, got `{attend}`")))?;
        if i >= maps.len() {
            return Err(Error::Config(format!("attend: {i} out of range, model has {} cross-attends", maps.len())));
        }
        vec![i]
    };
    let n = model.config().latent_n;
    if let Some(&bad) = latents.iter().find(|&&l| l >= n) {
        return Err(Error::Config(format!("latents: {bad} out of range for {n} latents")));
    }
    let m = data.rows();
    let grid = data.grid.clone().filter(|g| g.len() == 2 && g[0] * g[1] == m);
    let mut written = 0;
    for &i in &selected {
        let am = &maps[i];
        for h in 0..am.heads {
            for &l in latents {
                let row = am.latent_row(h, l);
                let stem = format!("attend{i}_head{h}_latent{l}");
                match &grid {
                    Some(g) => {
                        write(&out.join(format!("{stem}.pgm")), pgm(row, g[0], g[1])?)?;
                        write(&out.join(format!("{stem}.csv")), grid_csv(row, g[1]))?;
                    }
                    None => write(&out.join(format!("{stem}.csv")), grid_csv(row, m))?,
                }
                written += 1;
            }
        }
    }
    println!("wrote {written} maps to {}", out.display());
    Ok(())
}

pub fn attmaps(
    config: &Path,
    checkpoint: &Path,
    item: usize,
    attend: &str,
    latents: &[usize],
    out: &Path,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    by_dtype!(cfg, attmaps_typed(&cfg, checkpoint, item, attend, latents, out))
}

pub fn sweep(config: &Path, axis: &str, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (key, values) =
        axis.split_once('=').ok_or_else(|| Error::Config(format!("axis: expected key=v1,v2,..., got `{axis}`")))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("axis: no values given for `{key}`")));
    }
    let runs = values.iter().map(|v| cfg.with_override(key, v)).collect::<Result<Vec<_>>>()?;
    let mut csv = format!("{key},status,steps,final_loss,test_accuracy\n");
    for (value, run_cfg) in values.iter().zip(&runs) {
        let dir = out.join(format!("{key}-{value}"));
        let line = match by_dtype!(run_cfg, run(run_cfg, &dir)) {
            Ok(r) => format!("{value},ok,{},{},{}", r.steps, r.final_loss, r.test_accuracy),
            Err(Error::Diverged { step, reason }) => {
                eprintln!("{key}={value}: diverged at step {step}: {reason}");
                format!("{value},diverged,{step},,")
            }
            Err(e) => {
                eprintln!("{key}={value}: {e}");
                format!("{value},failed,,,")
            }
        };
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    write(&out.join("sweep.csv"), csv)
}
