use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pllsynth"));
    c.env_remove("PLLSYNTH_OUT_DIR");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Nominal config with some lines replaced.
fn variant(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(config("nominal.toml")).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let p = dir.join("variant.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_nominal_locks_and_writes_a_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let cfg = config("nominal.toml");
    let o = run(&["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&o);
    assert_eq!(s["schema"], "pllsynth-summary/1");
    assert_eq!(s["locked_at_end"], true);
    assert_eq!(s["band"], 4);
    assert!(s["final_freq_error"].as_f64().unwrap().abs() < 1e-7);

    for f in [
        "edges.csv",
        "waveforms.csv",
        "ref_cycles.csv",
        "summary.json",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let m = read_json(&out.join("manifest.json"));
    let hash: String = Sha256::digest(fs::read(&cfg).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    assert_eq!(m["input_sha256"], hash);
    assert_eq!(m["seed"], 1);
    assert_eq!(m["subcommand"], "simulate");
    assert!(m["wall_clock_s"].as_f64().unwrap() >= 0.0);
    let edges = fs::read_to_string(out.join("edges.csv")).unwrap();
    assert!(edges.starts_with("# pllsynth-edges/1"));
    let wf = fs::read_to_string(out.join("waveforms.csv")).unwrap();
    assert_eq!(wf.lines().nth(1), Some("time_s,v_ctrl_v,v_x_v,band,supply_dev_v"));
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = config("dj_rj.toml");
    let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    for d in &dirs {
        let o = run(&[
            "simulate",
            cfg.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
            "--duration",
            "5e-6",
        ]);
        assert_eq!(code(&o), 0);
    }
    for f in ["summary.json", "edges.csv", "waveforms.csv", "ref_cycles.csv"] {
        assert_eq!(
            fs::read(dirs[0].join(f)).unwrap(),
            fs::read(dirs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let budget = |_: ()| run(&["budget", "psrr", "10e-3", "10e6", "380e6", "-60"]).stdout;
    assert_eq!(budget(()), budget(()));
}

#[test]
fn seed_changes_noise_but_not_lock_status() {
    let tmp = TempDir::new().unwrap();
    let cfg = config("dj_rj.toml");
    let mut edges = Vec::new();
    for seed in ["1", "2"] {
        let d = tmp.path().join(seed);
        let o = run(&[
            "simulate",
            cfg.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert_eq!(code(&o), 0);
        assert_eq!(json(&o)["locked_at_end"], true);
        edges.push(fs::read(d.join("edges.csv")).unwrap());
    }
    assert_ne!(edges[0], edges[1]);
}

#[test]
fn malformed_config_is_rejected_with_field_messages() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let p = variant(tmp.path(), &[("icp_a = 10e-6", "icp_a = -10e-6")]);
    let o = run(&["simulate", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("icp_a"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let p = variant(tmp.path(), &[("n_caps = 8", "n_caps = 8\nbogus = 1")]);
    let o = run(&["simulate", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let o = run(&["simulate", "/nonexistent/cfg.toml", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn rail_pinned_run_exits_with_a_diagnostic() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let p = variant(
        tmp.path(),
        &[
            ("band_overlap = 0.2", "band_overlap = 0.2\nband = 8"),
            ("duration_s = 100e-6", "duration_s = 300e-6"),
        ],
    );
    let o = run(&["simulate", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot lock in selected band"));
    // the trace is still written
    assert_eq!(read_json(&out.join("summary.json"))["locked_at_end"], false);
}

#[test]
fn dj_rj_scenario_decomposes() {
    let tmp = TempDir::new().unwrap();
    let trace = tmp.path().join("trace");
    let res = tmp.path().join("res");
    let cfg = config("dj_rj.toml");
    assert_eq!(
        code(&run(&[
            "simulate",
            cfg.to_str().unwrap(),
            "--out",
            trace.to_str().unwrap()
        ])),
        0
    );
    let o = run(&[
        "analyze",
        trace.to_str().unwrap(),
        "--out",
        res.to_str().unwrap(),
        "--decompose",
        "--t-start",
        "5e-6",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["signal"], "OUT_A");
    assert_eq!(r["model"], "bimodal");
    let dj = r["dj_s"].as_f64().unwrap();
    let rj = r["rj_s"].as_f64().unwrap();
    assert!((dj / 3.13e-12 - 1.0).abs() < 0.05, "dj {dj}");
    assert!((rj / 560e-15 - 1.0).abs() < 0.25, "rj {rj}");
    assert_eq!(read_json(&res.join("results.json")), r);
    let hist = fs::read_to_string(res.join("tie_histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 102);
}

#[test]
fn ripple_spur_matches_the_budget() {
    let tmp = TempDir::new().unwrap();
    let trace = tmp.path().join("trace");
    let res = tmp.path().join("res");
    let cfg = config("ripple.toml");
    assert_eq!(
        code(&run(&[
            "simulate",
            cfg.to_str().unwrap(),
            "--out",
            trace.to_str().unwrap()
        ])),
        0
    );
    let o = run(&[
        "analyze",
        trace.to_str().unwrap(),
        "--out",
        res.to_str().unwrap(),
        "--spur",
        "1e6",
        "--t-start",
        "10e-6",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let measured = json(&o)["spurs"][0]["level_dbc"].as_f64().unwrap();
    let formula = json(&run(&["budget", "spur", "380e6", "1e-3", "1e6"]))["result"]["level_dbc"]
        .as_f64()
        .unwrap();
    // OUT_B runs at VCO / 16
    let expected = formula - 20.0 * 16f64.log10();
    assert!((measured - expected).abs() < 2.0, "{measured} vs {expected}");
    let psd = fs::read_to_string(res.join("psd.csv")).unwrap();
    assert!(psd.starts_with("# pllsynth-psd/1"));
    assert_eq!(psd.lines().nth(1), Some("f_hz,l_dbchz"));
}

#[test]
fn analysis_input_errors() {
    let tmp = TempDir::new().unwrap();
    let res = tmp.path().join("res");
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = run(&["analyze", empty.to_str().unwrap(), "--out", res.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    // a couple of microseconds of OUT_B is far too short to decompose
    let trace = tmp.path().join("short");
    let cfg = config("nominal.toml");
    let o = run(&[
        "simulate",
        cfg.to_str().unwrap(),
        "--out",
        trace.to_str().unwrap(),
        "--duration",
        "2e-6",
        "--record",
        "OUT_B",
    ]);
    assert_eq!(code(&o), 0);
    let o = run(&[
        "analyze",
        trace.to_str().unwrap(),
        "--out",
        res.to_str().unwrap(),
        "--decompose",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "analyze",
        trace.to_str().unwrap(),
        "--out",
        res.to_str().unwrap(),
        "--signal",
        "VCO",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn lock_time_from_a_trace_directory() {
    let tmp = TempDir::new().unwrap();
    let trace = tmp.path().join("trace");
    let cfg = config("nominal.toml");
    let o = run(&["simulate", cfg.to_str().unwrap(), "--out", trace.to_str().unwrap()]);
    let detector = json(&o)["lock_time"].as_f64().unwrap();
    let o = run(&[
        "analyze",
        trace.to_str().unwrap(),
        "--out",
        trace.to_str().unwrap(),
        "--lock-time",
    ]);
    assert_eq!(code(&o), 0);
    let t = json(&o)["lock_time_s"].as_f64().unwrap();
    assert!(t > 0.0 && t <= detector, "{t} vs {detector}");
}

#[test]
fn out_dir_defaults_to_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = config("nominal.toml");
    let o = bin()
        .args(["simulate", cfg.to_str().unwrap(), "--duration", "2e-6"])
        .env("PLLSYNTH_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("summary.json").is_file());
}

#[test]
fn budget_commands() {
    let r = json(&run(&["budget", "psrr", "10e-3", "10e6", "380e6", "-60"]));
    assert_eq!(r["schema"], "pllsynth-budget/1");
    assert!((r["result"]["psrr_db"].as_f64().unwrap() - 45.575).abs() < 0.01);
    let published: Vec<f64> = r["cross_check"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["published"].as_f64().unwrap())
        .collect();
    assert!(published.contains(&36.0));

    let s = json(&run(&["budget", "spur", "380e6", "1e-3", "1e6"]));
    assert!((s["result"]["level_dbc"].as_f64().unwrap() + 14.425).abs() < 0.01);
    let v = json(&run(&["budget", "vnmax", "-110", "380e6", "1e6"]));
    let vn = v["result"]["vn_max_v_per_rthz"].as_f64().unwrap();
    let p = json(&run(&["budget", "pn", &vn.to_string(), "380e6", "1e6"]));
    assert!((p["result"]["l_dbc_hz"].as_f64().unwrap() + 110.0).abs() < 1e-9);

    assert_eq!(code(&run(&["budget", "spur", "380e6", "-1e-3", "1e6"])), 2);
    assert_eq!(code(&run(&["budget", "spur", "380e6"])), 2);
}

#[test]
fn design_filter_command() {
    let r = json(&run(&["design-filter"]));
    assert_eq!(r["schema"], "pllsynth-filter/1");
    assert!((r["crossover_gain"].as_f64().unwrap() - 1.0).abs() < 1e-3);
    assert!((r["phase_margin_deg"].as_f64().unwrap() - 55.0).abs() < 0.1);
    assert!(r["c2_f"].as_f64().unwrap() < r["c1_f"].as_f64().unwrap());
    assert_eq!(code(&run(&["design-filter", "--pm", "89"])), 2);
    assert_eq!(code(&run(&["design-filter", "--fc", "-1"])), 2);
}

#[test]
fn plan_and_regmap_round_trip() {
    let r = json(&run(&["plan", "40e6", "1.92e9", "480e6"]));
    assert_eq!(r["schema"], "pllsynth-plan/1");
    let p = &r["plan"];
    assert_eq!(p["exact"], true);
    assert_eq!(p["np_plus_s"], 48);
    assert_eq!(p["f_vco"], 7.68e9);
    assert_eq!(p["f_out_a"], 1.92e9);
    assert_eq!(p["f_out_b"], 480e6);

    let tmp = TempDir::new().unwrap();
    let hex = tmp.path().join("regs.hex");
    let o = run(&[
        "regmap",
        "encode",
        "40e6",
        "1.92e9",
        "480e6",
        "--output",
        hex.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&hex).unwrap();
    assert!(text.starts_with("# pllsynth-regmap/1\n"));
    let d = json(&run(&["regmap", "decode", hex.to_str().unwrap()]));
    assert_eq!(d["fields"]["p"], p["p"]);
    assert_eq!(d["fields"]["s"], p["s"]);
    assert_eq!(d["fields"]["outdiv_a"], p["outdiv_a"]);
    assert_eq!(d["outdiv_b_ratio"], 8);

    fs::write(&hex, "# pllsynth-regmap/1\nzz\n").unwrap();
    assert_eq!(code(&run(&["regmap", "decode", hex.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["plan", "40e6", "-1"])), 2);
    assert_eq!(code(&run(&["plan", "40e6", "100e9"])), 2);
}
