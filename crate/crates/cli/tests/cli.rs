use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_h2mxr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn frame_mean(v: &Value) -> f64 {
    v["report"]["frames"]["mean"].as_f64().expect("frames recorded")
}

#[test]
fn hmc_beats_ls_on_1to16_preset() {
    let dir = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for dba in ["lsdba", "hmcdba"] {
        let out = dir.path().join(dba);
        let o = run(&[
            "simulate",
            "--preset",
            &format!("paper-5.1-1to16-8K-{dba}"),
            "--duration",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        means.push(frame_mean(&summary(&out)));
        let stem = format!("paper-5.1-1to16-8K-{dba}");
        assert!(out.join(format!("fig5_{stem}.csv")).exists());
        assert!(out.join(format!("fig7_{stem}.csv")).exists());
    }
    assert!(means[1] < means[0], "hmc {} ls {}", means[1], means[0]);
}

#[test]
fn zero_traffic_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("idle.toml");
    fs::write(&sc, "name = \"idle\"\npairs = 0\nload = 0.0\nduration = 0.5\nwarmup = 0.0\n").unwrap();
    let out = dir.path().join("o");
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap(), "--assert-qoe"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s["report"]["frames"]["count"].as_u64(), Some(0));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("r{i}"));
        let o = run(&[
            "simulate",
            "--preset",
            "desk-4K-hmcdba",
            "--duration",
            "0.8",
            "--seed",
            "7",
            "--packets",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        outs.push(out);
    }
    for f in ["packets.csv", "frames.csv", "grants.csv", "commands.csv", "summary.json", "fig5_desk-4K-hmcdba.csv"] {
        let a = fs::read(outs[0].join(f)).unwrap();
        let b = fs::read(outs[1].join(f)).unwrap();
        assert!(a.len() > 100, "{f}");
        assert!(a == b, "{f} differs");
    }
    let other = dir.path().join("r9");
    run(&["simulate", "--preset", "desk-4K-hmcdba", "--duration", "0.8", "--seed", "8", "--packets", "--out", other.to_str().unwrap()]);
    assert_ne!(fs::read(outs[0].join("packets.csv")).unwrap(), fs::read(other.join("packets.csv")).unwrap());
}

#[test]
fn assert_qoe_fails_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    // a saturated FTTR misses the 8K budget
    let o = run(&[
        "simulate",
        "--preset",
        "desk-8K-lsdba",
        "--duration",
        "1.5",
        "--load",
        "0.95",
        "--assert-qoe",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.toml");
    fs::write(&sc, "name = \"x\"\nlaod = 0.5\n").unwrap();
    let o = run(&["validate-config", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("laod"));
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["validate-config", "--preset", "nope"])), 2);
    assert_eq!(code(&run(&["simulate", "--preset", "desk-8K-lsdba", "--load", "2"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["validate-config", "--preset", "desk-2K-lsdba"])), 0);

    let tr = dir.path().join("t.csv");
    fs::write(&tr, "timestamp_ms,yaw_deg,pitch_deg,roll_deg\n0,0,0,0\n15,181,0,0\n").unwrap();
    let sc = dir.path().join("files.toml");
    fs::write(&sc, "name = \"f\"\n[trace]\nkind = \"files\"\npaths = [\"t.csv\"]\n").unwrap();
    let o = run(&["validate-config", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn dumped_config_validates() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate-config", "--preset", "desk-8K-hmcdba", "--dump"]);
    assert_eq!(code(&o), 0);
    let sc = dir.path().join("full.toml");
    fs::write(&sc, &o.stdout).unwrap();
    assert_eq!(code(&run(&["validate-config", "--scenario", sc.to_str().unwrap()])), 0);
}

fn sweep_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("sweep.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn load_sweep_is_ordered_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["sweep", "--preset", "desk-8K-lsdba", "--duration", "2", "--axis", "load", "--values", "0.9,0.1,0.5"])
        .args(["--out", dir.path().to_str().unwrap()])
        .env("H2MXR_MAX_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = sweep_rows(dir.path());
    let vals: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(vals, ["0.9", "0.1", "0.5"]);
    let mean = |v: &str| rows.iter().find(|r| r[1] == v).unwrap()[4].parse::<f64>().unwrap();
    assert!(mean("0.1") <= mean("0.5") && mean("0.5") <= mean("0.9"));
    let fig5 = fs::read_to_string(dir.path().join("fig5_desk-8K-lsdba.csv")).unwrap();
    let order: Vec<&str> = fig5.lines().skip(1).filter(|l| l.contains(",xr_frame,")).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(order, ["0.9", "0.1", "0.5"]);
    // every class, not just whole frames
    for class in ["xr", "hmd", "bkg", "xr_frame"] {
        let m = |v: &str| -> f64 {
            let row = fig5.lines().find(|l| l.split(',').nth(2) == Some(v) && l.split(',').nth(6) == Some(class)).unwrap();
            row.split(',').nth(8).unwrap().parse().unwrap()
        };
        assert!(m("0.1") <= m("0.5") && m("0.5") <= m("0.9"), "{class}");
    }
}

#[test]
fn horizon_sweep_request_drops() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep", "--preset", "desk-8K-hmcdba", "--duration", "0.8", "--axis", "horizon", "--values", "15,30,60,90", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fig7 = fs::read_to_string(dir.path().join("fig7_desk-8K-hmcdba.csv")).unwrap();
    let rows: Vec<Vec<f64>> = fig7
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 12);
    for w in rows.chunks(4) {
        let hs: Vec<f64> = w.iter().map(|r| r[1]).collect();
        assert_eq!(hs, [15.0, 30.0, 60.0, 90.0]);
        for p in w.windows(2) {
            assert!(p[1][3] <= p[0][3]);
        }
    }
}

#[test]
fn single_value_sweep_matches_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let sw = dir.path().join("sw");
    let base = ["--preset", "desk-2K-hmcdba", "--duration", "0.8", "--seed", "3"];
    let o = bin().arg("simulate").args(base).args(["--load", "0.4", "--out", sim.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 0);
    let o = bin()
        .arg("sweep")
        .args(base)
        .args(["--axis", "load", "--values", "0.4", "--out", sw.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let point = sw.join("load_0.4");
    for f in ["frames.csv", "grants.csv", "commands.csv", "summary.json"] {
        assert!(fs::read(sim.join(f)).unwrap() == fs::read(point.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failed_sweep_point_keeps_others() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep", "--preset", "desk-2K-lsdba", "--duration", "0.8", "--axis", "horizon", "--values", "15,-5,90", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let rows = sweep_rows(dir.path());
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][2], "ok");
    assert!(rows[1][2].starts_with("error"));
    assert_eq!(rows[2][2], "ok");
    assert!(dir.path().join("horizon_90").join("summary.json").exists());
    let fig7 = fs::read_to_string(dir.path().join("fig7_desk-2K-lsdba.csv")).unwrap();
    assert_eq!(fig7.lines().count(), 1 + 3 * 2);
}

#[test]
fn predict_constant_trace_gives_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("c.csv");
    let mut text = String::from("timestamp_ms,yaw_deg,pitch_deg,roll_deg\n");
    for i in 0..600 {
        text.push_str(&format!("{},12.5,-3,0.5\n", i * 15));
    }
    fs::write(&tr, text).unwrap();
    let o = run(&[
        "predict",
        "--trace",
        tr.to_str().unwrap(),
        "--methods",
        "persistence",
        "--speeds",
        "30",
        "--segment",
        "300",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("predict.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6 * 3);
    assert!(rows.iter().all(|r| r.ends_with(",0")), "{csv}");
}

#[test]
fn predict_grid_is_six_by_six() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "predict",
        "--methods",
        "persistence,moving_average",
        "--samples",
        "800",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let block: Vec<&str> = stdout.lines().skip_while(|l| !l.starts_with("persistence yaw")).take(8).collect();
    assert_eq!(block.len(), 8);
    // header of six horizons, then six speed rows of six values
    assert_eq!(block[1].split_whitespace().count(), 7);
    for row in &block[2..8] {
        assert_eq!(row.split_whitespace().count(), 7, "{row}");
    }
    let csv = fs::read_to_string(dir.path().join("predict.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 36 * 3);
}

#[test]
fn train_then_simulate_with_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let o = run(&["train", "--method", "persistence", "--horizon", "6", "--out", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("o");
    let o = run(&[
        "simulate", "--preset", "desk-2K-hmcdba", "--duration", "0.8", "--model", model.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&out)["predictor"], "persistence (model file)");
    // 60 ms horizon is 4 samples; the model was trained for 6
    let sc = dir.path().join("h60.toml");
    fs::write(&sc, "name = \"h\"\nhorizon = 0.06\nduration = 0.8\n").unwrap();
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--model", model.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn trafficgen_reports_moments() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("draws.csv");
    let o = run(&["trafficgen", "--count", "2000", "--seed", "4", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let gap = v["xr_gap_ms"]["mean"].as_f64().unwrap();
    assert!((gap - 33.13).abs() < 1.0, "{gap}");
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 3 * 2000);
}
