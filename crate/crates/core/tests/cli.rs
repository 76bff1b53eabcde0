use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

fn mlsgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlsgan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The smoke configuration: k=3, N=3, T=4, 64 samples, 3 epochs.
fn smoke_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 11
[data]
samples = 64
group_classes = 3
individual_classes = 3
agents = 3
agents_max = 3
steps = 4
features = 4
[model]
hidden = 8
z_dim = 2
[train]
epochs = 3
batch_size = 8
[paths]
dataset = "{0}/data.bin"
out = "{0}/out"
{extra}
"#,
        dir.display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_prints_histogram_summing_to_sample_count() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config(dir.path(), "");
    let out = mlsgan(&["gen-data", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("data.bin").is_file());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("samples 64"));
    let total: usize = lines
        .map(|l| l.split_whitespace().last().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 64);
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config(dir.path(), "");
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    assert_eq!(code(&mlsgan(&["gen-data", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&mlsgan(&["gen-data", "--config", s(&cfg), "--out", s(&b)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.bin");
    assert_eq!(code(&mlsgan(&["gen-data", "--config", s(&cfg), "--out", s(&c), "--seed", "12"])), 0);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn config_errors_exit_two_and_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[data]\nagents = 3\nagents_max = 5\n").unwrap();
    let out = mlsgan(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("x.bin"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("agents_max"), "{}", stderr(&out));

    fs::write(&cfg, "[train]\nbatch_sise = 4\n").unwrap();
    let out = mlsgan(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("batch_sise"));

    let out = mlsgan(&["train", "--variant", "no_such_variant"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn io_problems_exit_three() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config(dir.path(), "");
    let out = mlsgan(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 3, "dataset was never generated");
    assert!(stderr(&out).contains("data.bin"));

    let out = mlsgan(&["train", "--config", s(&dir.path().join("missing.toml"))]);
    assert_eq!(code(&out), 3);

    fs::write(dir.path().join("data.bin"), b"MLSGDAT1\x03\x00").unwrap();
    let out = mlsgan(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 3, "truncated dataset");
}

#[test]
fn smoke_train_writes_outputs_quickly() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config(dir.path(), "");
    assert_eq!(code(&mlsgan(&["gen-data", "--config", s(&cfg)])), 0);
    let start = Instant::now();
    let out = mlsgan(&["train", "--config", s(&cfg)]);
    let elapsed = start.elapsed();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");

    let o = dir.path().join("out");
    let csv = fs::read_to_string(o.join("mls_gan_metrics.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("epoch,d_loss,g_loss,mca,mpca"));
    assert_eq!(rows.count(), 3);
    assert!(o.join("mls_gan.ckpt").is_file());
    assert!(o.join("mls_gan_gates.txt").is_file());
    let report = fs::read_to_string(o.join("mls_gan_report.txt")).unwrap();
    assert!(report.contains("confusion 3"));
    assert_eq!(stdout(&out), report);

    let out = mlsgan(&["eval", "--config", s(&cfg), "--checkpoint", s(&o.join("mls_gan.ckpt"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mca = |t: &str| t.lines().find(|l| l.starts_with("mca ")).unwrap().to_string();
    assert_eq!(mca(&stdout(&out)), mca(&report));

    let out = mlsgan(&["probe", "--config", s(&cfg), "--checkpoint", s(&o.join("mls_gan.ckpt")), "--baseline"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("run probe mls_gan initial"));
}

#[test]
fn train_outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config(dir.path(), "");
    assert_eq!(code(&mlsgan(&["gen-data", "--config", s(&cfg)])), 0);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&mlsgan(&["train", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&mlsgan(&["train", "--config", s(&cfg), "--out", s(&b)])), 0);
    for f in ["mls_gan.ckpt", "mls_gan_metrics.csv", "mls_gan_report.txt", "mls_gan_gates.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_continues_epoch_numbering() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config(dir.path(), "");
    assert_eq!(code(&mlsgan(&["gen-data", "--config", s(&cfg)])), 0);
    let ckpt = dir.path().join("run.ckpt");
    let first = mlsgan(&["train", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--variant", "cgan_gfu"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));

    let text = fs::read_to_string(&cfg).unwrap().replace("epochs = 3", "epochs = 5");
    fs::write(&cfg, text).unwrap();
    let more = dir.path().join("more");
    let out = mlsgan(&[
        "train", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--variant", "cgan_gfu", "--resume", "--out", s(&more),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(more.join("cgan_gfu_metrics.csv")).unwrap();
    let epochs: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["3", "4"]);

    let out = mlsgan(&["train", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--variant", "mls_gan", "--resume"]);
    assert_eq!(code(&out), 2, "variant mismatch against the checkpoint");
}

#[test]
fn ablate_writes_six_rows_and_logs_the_split() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config(dir.path(), "");
    assert_eq!(code(&mlsgan(&["gen-data", "--config", s(&cfg)])), 0);
    let out = mlsgan(&["ablate", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).starts_with("split train "));
    let csv = fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,mca,mpca,status"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    let names: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        ["mls_gan", "g_gfu_ablated", "g_supervised", "cgan_no_gfu_no_scene", "cgan_gfu", "mls_gan_no_scene"]
    );
    assert!(rows.iter().all(|r| r.ends_with(",ok")));
}

#[test]
fn grad_check_passes_and_catches_injected_fault() {
    let out = mlsgan(&["grad-check"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let checked = stdout(&out).lines().filter(|l| l.contains("max_rel_error")).count();
    assert!(checked >= 6);

    let out = mlsgan(&["grad-check", "--inject-sign-flip"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("gated_fusion"), "{}", stderr(&out));
}

#[test]
fn non_finite_features_abort_with_exit_four() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config(dir.path(), "format = \"text\"");
    let text = fs::read_to_string(&cfg).unwrap().replace("data.bin", "data.txt");
    fs::write(&cfg, text).unwrap();
    assert_eq!(code(&mlsgan(&["gen-data", "--config", s(&cfg)])), 0);
    let data = dir.path().join("data.txt");
    let corrupted: Vec<String> = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .map(|l| match l.strip_prefix("scene ") {
            Some(rest) => format!("scene inf {}", rest.split_once(' ').unwrap().1),
            None => l.to_string(),
        })
        .collect();
    fs::write(&data, corrupted.join("\n") + "\n").unwrap();
    let out = mlsgan(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 4);
    let err = stderr(&out);
    assert!(err.contains("epoch 0") && err.contains("batch 0"), "{err}");
}
