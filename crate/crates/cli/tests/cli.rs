use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = r#"
schedule.steps = 50
codec.image_channels = 1
codec.factor = 4
codec.pyramid_levels = 2
codec.codebook_size = 16
codec.embed_dim = 4
codec.base_width = 8
codec.bins = 2
codec_train.steps = 4
codec_train.batch_size = 2
denoiser.latent_channels = 4
denoiser.base_width = 8
denoiser.depth = 2
denoiser.attention_heads = 2
denoiser.time_embed_dim = 8
denoiser.bins = 2
denoiser_train.steps = 4
denoiser_train.batch_size = 2
denoiser_train.probe_draws = 2
denoiser_train.probe_every = 2
i2e.bins = 2
i2e.width = 4
i2e.steps = 3
dataset.synthetic.height = 16
dataset.synthetic.width = 16
dataset.synthetic.channels = 1
dataset.synthetic.medium_speed = [2.0, 4.0]
dataset.synthetic.hard_speed = [4.0, 7.0]
dataset.train_count = 4
dataset.eval_count = 2
sampler.steps = 8
"#;

fn vfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfi")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, format!("{TOY}{extra}")).unwrap();
    p
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = vfi(&["gen-data", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = vfi(&["eval", "--config", "c.toml", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(vfi(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_and_runtime_failures_use_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "codec.no_such_key = 1\n").unwrap();
    let out = vfi(&["gen-data", "--config", s(&bad), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = write_config(dir.path(), "");
    let missing = dir.path().join("nope.bin");
    fs::create_dir_all(dir.path().join("data/train/000000")).unwrap();
    let out = vfi(&[
        "train-denoiser",
        "--config",
        s(&cfg),
        "--data",
        s(&dir.path().join("data")),
        "--codec",
        s(&missing),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2), "empty split is a configuration problem");
    let gen = vfi(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("real"))]);
    assert!(gen.status.success());
    let out = vfi(&[
        "train-denoiser",
        "--config",
        s(&cfg),
        "--data",
        s(&dir.path().join("real")),
        "--codec",
        s(&missing),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_on_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let data = dir.path().join("data");
    assert!(vfi(&["gen-data", "--config", s(&cfg), "--out", s(&data)]).status.success());
    let eval = data.join("eval");
    let out = vfi(&["eval", "--config", s(&cfg), "--pred", s(&eval), "--target", s(&eval), "--out", s(&dir.path().join("r"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["count"], 2);
    assert_eq!(report["mean"]["psnr"], 99.0);
    assert_eq!(report["mean"]["ssim"], 1.0);
    assert_eq!(report["psnr_cap"], 99.0);
}

#[test]
fn end_to_end_toy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "hints.backend = \"learned\"\n");
    let root = dir.path();
    let run = |args: &[&str]| {
        let out = vfi(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let data = root.join("data");
    let models = root.join("models");
    run(&["gen-data", "--config", s(&cfg), "--seed", "3", "--out", s(&data)]);
    run(&["train-codec", "--config", s(&cfg), "--data", s(&data), "--out", s(&models)]);
    assert!(models.join("i2e.bin").is_file());
    let codec = models.join("codec.bin");
    let i2e = models.join("i2e.bin");
    run(&["train-denoiser", "--config", s(&cfg), "--data", s(&data), "--codec", s(&codec), "--i2e", s(&i2e), "--out", s(&models)]);
    let samples = root.join("samples");
    let den = models.join("denoiser.bin");
    let sample_args = [
        "sample", "--config", s(&cfg), "--data", s(&data), "--codec", s(&codec), "--denoiser", s(&den), "--sampler", "ma-ddim",
        "--steps", "8", "--hints", "simulator", "--out", s(&samples),
    ];
    run(&sample_args);
    let pngs: Vec<_> = fs::read_dir(&samples).unwrap().filter_map(|e| e.ok()).map(|e| e.file_name().into_string().unwrap()).collect();
    assert_eq!(pngs.iter().filter(|n| n.ends_with(".png")).count(), 2);
    assert_eq!(pngs.iter().filter(|n| n.ends_with(".manifest.json")).count(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(samples.join("000004.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["decoder_calls"], 9);
    assert_eq!(manifest["sampler"], "ma_ddim");
    let first = fs::read(samples.join("000004.png")).unwrap();
    run(&sample_args);
    assert_eq!(fs::read(samples.join("000004.png")).unwrap(), first);

    run(&[
        "sample", "--config", s(&cfg), "--data", s(&data), "--codec", s(&codec), "--denoiser", s(&den), "--i2e", s(&i2e),
        "--sampler", "ma-ddim", "--steps", "2", "--out", s(&root.join("learned")),
    ]);
    let out = vfi(&[
        "sample", "--config", s(&cfg), "--data", s(&data), "--codec", s(&codec), "--denoiser", s(&den), "--sampler", "ma-ddim",
        "--steps", "2", "--out", s(&root.join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2), "learned hints without a network");

    let report = root.join("report");
    run(&["eval", "--config", s(&cfg), "--pred", s(&samples), "--target", s(&data.join("eval")), "--out", s(&report)]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["count"], 2);

    // A config edit invalidates checkpoints.
    let other = root.join("other.toml");
    fs::write(&other, format!("{TOY}hints.threshold = 0.2\n")).unwrap();
    let out = vfi(&[
        "sample", "--config", s(&other), "--data", s(&data), "--codec", s(&codec), "--denoiser", s(&den), "--out", s(&root.join("y")),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let a = data.join("eval/000004/prev.png");
    let b = data.join("eval/000004/next.png");
    run(&["simulate-events", "--config", s(&cfg), "--prev", s(&a), "--next", s(&b), "--out", s(&root.join("ev"))]);
    assert!(root.join("ev/events.txt").is_file() && root.join("ev/volume.bin").is_file());
}
