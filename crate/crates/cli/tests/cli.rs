use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ion-readout"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn ion-readout")
}

fn base_cfg(dir: &Path) -> &'static str {
    std::fs::write(
        dir.join("base.cfg"),
        "# 40Ca+ optical qubit\nbright_rate = 55800\ndark_rate = 442\nshelf_lifetime = 1.168\n\
         sub_bin_duration = 10e-6\nsub_bins = 200\nseed = 3\n",
    )
    .unwrap();
    "base.cfg"
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn simulate_smoke_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path());
    let out = run(
        dir.path(),
        &["simulate", "--config", cfg, "--method", "ml", "--trials", "2000", "--seed", "7", "-o", "sim.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("eps = ") && summary.contains("(95%)") && summary.contains("t_a"), "{summary}");
    let text = std::fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    assert!(text.starts_with("# ion-readout "));
    assert!(text.contains("# seed=7\n"));
    assert!(text.contains("# config_sha256="));
    let rows = data_lines(&text);
    assert_eq!(rows[0], "x_name,x_value,method,eps,eps_lo95,eps_hi95,eps_B,eps_D,mean_ta_s,mean_ta_bright_s,mean_ta_dark_s,n_trials");
    assert!(rows[1].starts_with("N,2e2,ml,"), "{}", rows[1]);
    assert!(rows[1].ends_with(",2000"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path());
    let common = ["--config", cfg, "--method", "adaptive", "--ec", "1e-4", "--trials", "3000"];
    let mut outputs = Vec::new();
    for (name, threads) in [("a.csv", "1"), ("b.csv", "1"), ("c.csv", "3")] {
        let mut args = vec!["simulate"];
        args.extend(common);
        args.extend(["--threads", threads, "-o", name, "--dump", "dump.csv"]);
        let out = run(dir.path(), &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            std::fs::read(dir.path().join(name)).unwrap(),
            std::fs::read(dir.path().join("dump.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let dump = String::from_utf8(outputs[0].1.clone()).unwrap();
    let rows = data_lines(&dump);
    assert_eq!(rows[0], "label,stream_id,n_subbins_used,sum_counts,verdict,log_pB,log_pD,posterior_error");
    assert_eq!(rows.len(), 1 + 6000);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path());
    // Unknown flag: argument parser.
    assert_eq!(run(dir.path(), &["simulate", "--bogus"]).status.code(), Some(2));
    // Unknown config key names the key and line.
    std::fs::write(dir.path().join("bad.cfg"), "seed = 1\nbrigt_rate = 5\n").unwrap();
    let out = run(dir.path(), &["simulate", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("brigt_rate") && err.contains("bad.cfg:2"), "{err}");
    // Missing required field for the method.
    let out = run(dir.path(), &["simulate", "--config", cfg, "--method", "threshold"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_c"));
    // Conflicting flags.
    let out = run(dir.path(), &["simulate", "--config", cfg, "--method", "ml", "--ec", "1e-4"]);
    assert_eq!(out.status.code(), Some(2));
    // Referenced file missing.
    let out = run(dir.path(), &["classify", "--config", cfg, "--trace", "nope.txt"]);
    assert_eq!(out.status.code(), Some(2));
    // Trace shorter than the fixed bin: fails while running.
    std::fs::write(dir.path().join("short.txt"), "0\n1\n").unwrap();
    let out = run(dir.path(), &["classify", "--config", cfg, "--trace", "short.txt", "--method", "ml"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // Output into a file whose directory is a regular file.
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let out = run(dir.path(), &["histogram", "--config", cfg, "-o", "blocker/h.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn json_mirrors_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path());
    let args = ["sweep-bin-time", "--config", cfg, "--n-list", "5..40:5"];
    let csv_out = run(dir.path(), &[&args[..], &["-o", "s.csv"]].concat());
    let json_out = run(dir.path(), &[&args[..], &["-o", "s.json", "--emit", "json"]].concat());
    assert!(csv_out.status.success() && json_out.status.success());
    let csv_text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    let rows = data_lines(&csv_text);
    let header: Vec<&str> = rows[0].split(',').collect();
    let records = json["records"].as_array().unwrap();
    assert_eq!(records.len(), rows.len() - 1);
    for (row, rec) in rows[1..].iter().zip(records) {
        for (col, cell) in header.iter().zip(row.split(',')) {
            match &rec[*col] {
                serde_json::Value::String(s) => assert_eq!(s, cell),
                serde_json::Value::Number(n) => {
                    let a: f64 = cell.parse().unwrap();
                    assert_eq!(a, n.as_f64().unwrap(), "{col}");
                }
                other => panic!("{col}: {other}"),
            }
        }
    }
    assert_eq!(json["meta"]["seed"], 3);
    let hash_line = csv_text.lines().find(|l| l.starts_with("# config_sha256=")).unwrap();
    // Output format and path are not part of the hash.
    assert_eq!(&hash_line["# config_sha256=".len()..], json["meta"]["config_sha256"].as_str().unwrap());
}

#[test]
fn histogram_distributions_are_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path());
    let out = run(dir.path(), &["histogram", "--config", cfg, "--N", "42", "-o", "h.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows[0], "n,bright,dark_decay,dark_no_decay");
    let mut sums = [0.0; 3];
    let mut bright_mean = 0.0;
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        for i in 0..3 {
            sums[i] += v[i + 1];
        }
        bright_mean += v[0] * v[1];
    }
    for s in sums {
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }
    // 55800/s over 420 us.
    assert!((bright_mean - 23.436).abs() < 0.01, "{bright_mean}");
}

#[test]
fn classify_reports_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path());
    std::fs::write(dir.path().join("bright.txt"), "1\n0\n2\n1\n0\n1\n1\n").unwrap();
    let out = run(
        dir.path(),
        &["classify", "--config", cfg, "--trace", "bright.txt", "--method", "adaptive", "--ec", "1e-4", "--tc", "500e-6", "-o", "v.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("bright"), "{stdout}");
    let text = std::fs::read_to_string(dir.path().join("v.csv")).unwrap();
    let rows = data_lines(&text);
    assert!(rows[1].starts_with("adaptive,bright,"), "{}", rows[1]);
    let cols: Vec<&str> = rows[1].split(',').collect();
    let posterior: f64 = cols[2].parse().unwrap();
    assert!(posterior <= 1e-4);
}

#[test]
fn table_goes_to_stdout_without_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path());
    let out = run(dir.path(), &["optimize-threshold", "--config", cfg, "--n-list", "20..40"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(data_lines(&stdout)[0].starts_with("N,t_b_s,n_c,"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("optimize-threshold: N = "));
}

#[test]
fn shelve_sweep_with_fixed_schedule() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sched.toml"),
        "repeats = 1\n[[segments]]\nduration_s = 20e-6\ndrive393 = 0.05\ndrive850_sigma = 229.8\ndrive850_pi = 0.18\n",
    )
    .unwrap();
    let out = run(dir.path(), &["shelve-sweep", "--schedule", "sched.toml", "-o", "s.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(data_lines(&text)[1].starts_with("t_T,2e-5,schedule,"));
    // A fixed schedule and an optimization grid conflict.
    let out = run(dir.path(), &["shelve-sweep", "--schedule", "sched.toml", "--tt-list", "1e-5"]);
    assert_eq!(out.status.code(), Some(2));
}
