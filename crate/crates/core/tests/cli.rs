use std::path::Path;
use std::process::{Command, Output};

fn condgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condgan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const TINY: &str = r#"{
  "mode": "transitional",
  "num_classes": 2,
  "samples_per_class": 10,
  "modes_per_class": 2,
  "t_start": 10,
  "t_end": 20,
  "t_max": 40,
  "eval_every": 20,
  "batch_size": 8,
  "mapping_units": 8,
  "synthesis_units": 8,
  "trunk_units": 8
}"#;

#[test]
fn schedule_curve() {
    let o = condgan(&["schedule", "--ts", "2000", "--te", "4000", "--tm", "8000", "--stride", "1000"]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        "t,lambda\n0,0\n1000,0\n2000,0\n3000,0.5\n4000,1\n5000,1\n6000,1\n7000,1\n8000,1\n"
    );
    let o = condgan(&["schedule", "--ts", "5", "--te", "1", "--tm", "8"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let o = condgan(&["train", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("step,lambda,d_total,g_total,fid,kid,precision,recall,mode_coverage,class_fidelity\n40,1,"));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let ck = out.join("checkpoint.bin");
    let o = condgan(&["eval", "--checkpoint", ck.to_str().unwrap(), "--lambda", "0"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("40,0,"));

    let o = condgan(&["train", "--resume", ck.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), text);

    // flags override the config file
    let o = condgan(&["train", "--config", &cfg, "--mode", "unconditional", "--tm", "20"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("20,0,"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), r#"{"learning_rate": 1.0}"#);
    assert_eq!(condgan(&["train", "--config", &bad]).status.code(), Some(1));
    let cfg = write_config(dir.path(), TINY);
    assert_eq!(condgan(&["train", "--config", &cfg, "--mode", "semi"]).status.code(), Some(1));
    assert_eq!(condgan(&["train"]).status.code(), Some(1));
    let missing = dir.path().join("nope.bin");
    assert_eq!(
        condgan(&["eval", "--checkpoint", missing.to_str().unwrap(), "--lambda", "1"]).status.code(),
        Some(1)
    );
}

#[test]
fn non_finite_training_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = TINY.replace("\"batch_size\": 8", "\"batch_size\": 8, \"lr\": 1e300, \"r1_weight\": 0.0");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("run");
    let o = condgan(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint_abort.bin").exists());
}

#[test]
fn metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    let real = dir.path().join("real.csv");
    let fake = dir.path().join("fake.csv");
    let mut r = String::from("label,x0,x1\n");
    let mut f = String::from("label,x0,x1\n");
    for i in 0..20 {
        let (x, y) = ((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos());
        r.push_str(&format!("{},{x},{y}\n", i % 2));
        f.push_str(&format!("{},{},{y}\n", i % 2, x + 1.0));
    }
    std::fs::write(&real, r).unwrap();
    std::fs::write(&fake, f).unwrap();
    let o = condgan(&["metrics", real.to_str().unwrap(), fake.to_str().unwrap(), "--fid"]);
    assert!(o.status.success());
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - 1.0).abs() < 1e-9, "{v}");

    let o = condgan(&[
        "metrics",
        real.to_str().unwrap(),
        fake.to_str().unwrap(),
        "--fid",
        "--kid",
        "--pr",
        "--classwise",
        "--block-size",
        "10",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    assert_eq!(text.trim().split(',').count(), 6);
}

#[test]
fn sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = condgan(&["sweep", "--config", &cfg, "--axis", "t_start", "--values", "0,10", "--seeds", "1,2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("axis,value,seed,status"));
    assert!(lines[1].starts_with("t_start,0,1,ok,40,"));
    assert!(lines[4].starts_with("t_start,10,2,ok,40,"));
    assert_eq!(
        condgan(&["sweep", "--config", &cfg, "--axis", "width", "--values", "1", "--seeds", "1"]).status.code(),
        Some(1)
    );
}
