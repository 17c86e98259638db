use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn perceiver(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perceiver")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
dtype = "f32"
seed = 3
dataset_kind = "sign-of-mean"
train_size = 64
test_size = 32
num_cross_attends = 1
self_attends_per_block = 1
blocks_per_cross = 1
latent_n = 4
latent_d = 8
base_lr = 0.003
steps = 12
batch_size = 4
checkpoint_every_steps = 6
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write_config(
        dir.path(),
        "missing.cfg",
        &format!("{SMALL}dataset_path = \"{}/nowhere\"\n", dir.path().display()),
    );
    let o = perceiver(&["train", "--config", &missing, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset_path"));

    let unknown = write_config(dir.path(), "unknown.cfg", &format!("{SMALL}colour = 3\n"));
    assert_eq!(perceiver(&["count", "--config", &unknown]).status.code(), Some(2));

    assert_eq!(perceiver(&["count"]).status.code(), Some(2));
    let o = perceiver(&["count", "--config", dir.path().join("absent.cfg").to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = perceiver(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let metrics = |d: &Path| fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics(&a), metrics(&b));
    assert_eq!(metrics(&a).lines().count(), 13);
    for f in ["config.toml", "results.csv", "checkpoint-step00000006.bin", "checkpoint-step00000012.bin"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(
        fs::read(a.join("checkpoint-step00000012.bin")).unwrap(),
        fs::read(b.join("checkpoint-step00000012.bin")).unwrap()
    );

    // The resolved config trains again on its own.
    let resolved = a.join("config.toml");
    let c = dir.path().join("c");
    let o = perceiver(&["train", "--config", resolved.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metrics(&a), metrics(&c));

    let o =
        perceiver(&["eval", "--config", &cfg, "--checkpoint", a.join("checkpoint-step00000012.bin").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("test accuracy"));
}

#[test]
fn sweep_over_bands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let out = dir.path().join("sweep");
    let o = perceiver(&["sweep", "--config", &cfg, "--axis", "fourier_bands=2,8,32", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.contains(",ok,")), "{table}");
    for v in ["2", "8", "32"] {
        assert!(out.join(format!("fourier_bands-{v}")).join("metrics.csv").exists());
    }

    let o = perceiver(&["sweep", "--config", &cfg, "--axis", "latent_init_scale=0.1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());

    for bad in ["fourier_bands=", "fourier_bands", "=1,2"] {
        let o = perceiver(&["sweep", "--config", &cfg, "--axis", bad, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
}

#[test]
fn attention_maps_for_grid_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "shapes.cfg",
        &SMALL.replace("sign-of-mean", "procedural-shapes").replace("steps = 12", "steps = 2"),
    );
    let run = dir.path().join("run");
    assert!(perceiver(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]).status.success());
    let ckpt = run.join("checkpoint-step00000002.bin");
    let maps = dir.path().join("maps");
    let o = perceiver(&[
        "attmaps",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--latents",
        "0,3",
        "--out",
        maps.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(maps.join("attend0_head0_latent3.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n8 8\n255\n"));
    assert_eq!(pgm.len(), 11 + 64);
    assert!(maps.join("attend0_head0_latent0.csv").exists());

    let o = perceiver(&[
        "attmaps",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--latents",
        "9",
        "--out",
        maps.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn count_writes_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/imagenet-8x.cfg");
    let out = dir.path().join("count.csv");
    let o = perceiver(&["count", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out).unwrap();
    assert!(csv.starts_with("layer,params,flops\n"));
    assert_eq!(csv, stdout(&o));
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names.first(), Some(&"latent"));
    assert!(names.contains(&"cross_attend.7") && names.contains(&"latent_tower.7"));
    assert_eq!(names[names.len() - 2..], ["head", "total"]);
}
