mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::Link;
use uwqkd::RunReport;

fn uwqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwqkd")).args(args).output().expect("binary runs")
}

fn config_path(name: &str) -> String {
    common::configs_dir().join(name).display().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn run_writes_report_and_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = uwqkd(&["run", "--config", &config_path("tank_10_22db.toml"), "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = RunReport::from_json(&fs::read_to_string(dir.path().join("run_report.json")).unwrap()).unwrap();
    assert_eq!(report.keys_match, Some(true));
    let t = fs::read_to_string(dir.path().join("transcript.jsonl")).unwrap();
    let entries = uwqkd::transcript::read_jsonl(t.as_bytes()).unwrap();
    assert!(entries.len() > 4 && entries.iter().all(|e| e.to_bytes().is_some()));
}

#[test]
fn seed_flag_changes_the_run() {
    let path = config_path("analytic_16_35db.toml");
    let a = uwqkd(&["run", "--config", &path, "--format", "csv"]);
    assert_eq!(a.status.code(), Some(0));
    let text = String::from_utf8(a.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("attenuation_db,"));
    assert!(lines[1].starts_with("16.35,"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", &Link::bench(20_000, 3.0).toml());
    let run = |seed: &str| {
        let o = uwqkd(&["run", "--config", &cfg, "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
        let r = RunReport::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
        (r.config.seeds, r.tallies)
    };
    let (s5, t5) = run("5");
    assert_eq!((s5.alice, s5.bob, s5.channel), (5, 6, 7));
    assert_ne!(run("9").1, t5);
}

#[test]
fn invalid_configs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        ("unknown.toml", Link::bench(20_000, 3.0).toml() + "\nbogus = 1\n"),
        ("few.toml", Link::bench(100, 3.0).toml()),
        ("negative.toml", Link::bench(20_000, -1.0).toml()),
        ("yield.toml", Link { y0: 2.0, ..Link::bench(20_000, 3.0) }.toml()),
    ];
    for (name, text) in bad {
        let p = write(dir.path(), name, &text);
        let o = uwqkd(&["run", "--config", &p]);
        assert_eq!(o.status.code(), Some(3), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = uwqkd(&["sweep", "--config", &config_path("tank_10_22db.toml")]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn protocol_abort_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        Link::bench(50_000, 3.0).toml().replace("timeout_ms = 2000", "timeout_ms = 2000\nframe_drop_probability = 0.5");
    let p = write(dir.path(), "drop.toml", &text);
    let o = uwqkd(&["run", "--config", &p]);
    assert_eq!(o.status.code(), Some(2));
    let r = RunReport::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(r.outcome, uwqkd::Outcome::Aborted);
}

#[test]
fn sweep_writes_one_csv_per_water_type() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = uwqkd(&["sweep", "--config", &config_path("sweep.toml"), "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    for name in ["sweep_jerlov_i.csv", "sweep_jerlov_ii.csv", "sweep_jerlov_iii.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), 1 + 7);
        assert!(text.starts_with(uwqkd::sweep::CSV_HEADER));
    }
    let o = uwqkd(&["sweep", "--config", &config_path("sweep.toml"), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["curves"].as_array().unwrap().len(), 3);
}

#[test]
fn calibrate_and_tomography() {
    let o = uwqkd(&["calibrate", "--config", &config_path("calibrate.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["succeeded"], true);
    assert_eq!(v["cutoffs"].as_array().unwrap().len(), 3);

    let o = uwqkd(&["tomography", "--config", &config_path("tomography.toml"), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1 + 4);
}

#[test]
fn serve_and_connect_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "pair.toml", &Link::bench(30_000, 3.0).toml());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let server = Command::new(env!("CARGO_BIN_EXE_uwqkd"))
        .args(["serve", "--config", &cfg, "--listen", &addr])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let bob = uwqkd(&["connect", "--config", &cfg, "--peer", &addr]);
    let alice = server.wait_with_output().unwrap();
    assert_eq!(alice.status.code(), Some(0));
    assert_eq!(bob.status.code(), Some(0));
    let a = RunReport::from_json(&String::from_utf8(alice.stdout).unwrap()).unwrap();
    let b = RunReport::from_json(&String::from_utf8(bob.stdout).unwrap()).unwrap();
    let ha = a.party(uwqkd_core::protocol::Role::Alice).unwrap().final_key_sha256.clone();
    let hb = b.party(uwqkd_core::protocol::Role::Bob).unwrap().final_key_sha256.clone();
    assert!(ha.is_some());
    assert_eq!(ha, hb);
}
