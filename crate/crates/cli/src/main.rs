//! `pllsynth` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input, 3 runtime diagnostic,
//! 4 record too short for the requested analysis.

mod trace_io;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use pllsynth::analysis::{
    decompose, histogram, lock_time, pn_psd, spur_level, tie, AnalysisError, JitterModel, PsdOptions,
};
use pllsynth::design::{
    closed_loop_bandwidth, crossover_check, design_loop_filter, max_supply_noise, published_cross_check, required_psrr,
    spur_amplitude, supply_pn, CrossCheck, FilterDesignSpec,
};
use pllsynth::dividers::StageSets;
use pllsynth::progif::{decode, encode, plan, Biases, Plan, PlanRequest, ProgramFields, RegisterFile};
use pllsynth::vco::VcoParams;
use pllsynth::{
    simulate, simulate_open_vco, validate_config, Amperes, Dbc, DbcPerHz, EdgeEvent, Hertz, PllConfig, Seconds, Signal,
    SimError, SimSummary, SimTrace, Volts,
};

const SUMMARY_SCHEMA: &str = "pllsynth-summary/1";
const MANIFEST_SCHEMA: &str = "pllsynth-manifest/1";
const RESULTS_SCHEMA: &str = "pllsynth-analysis/1";
const BUDGET_SCHEMA: &str = "pllsynth-budget/1";
const FILTER_SCHEMA: &str = "pllsynth-filter/1";
const PLAN_SCHEMA: &str = "pllsynth-plan/1";
const FIELDS_SCHEMA: &str = "pllsynth-fields/1";

#[derive(Parser)]
#[command(
    name = "pllsynth",
    version,
    about = "Integer-N PLL synthesizer simulator and design toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a closed-loop (or free-running VCO) simulation and write its trace.
    Simulate(SimulateArgs),
    /// Jitter, phase-noise, spur and lock-time analysis of a recorded trace.
    Analyze(AnalyzeArgs),
    /// Closed-form supply budgets.
    #[command(subcommand)]
    Budget(BudgetOp),
    /// Synthesize the passive loop filter for a crossover and phase margin.
    DesignFilter(DesignArgs),
    /// Choose divider settings for target output frequencies.
    Plan(PlanArgs),
    /// Encode or decode register-map programming files.
    #[command(subcommand)]
    Regmap(RegmapOp),
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "PLLSYNTH_OUT_DIR", default_value = "pllsynth-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    config: PathBuf,
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Signals to record, replacing the configured list (e.g. REF,CLK,OUT_A).
    #[arg(long, value_delimiter = ',')]
    record: Option<Vec<Signal>>,
    /// Hold the control voltage and run the VCO and dividers open loop.
    #[arg(long)]
    open_loop: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Edges file, or a directory written by `simulate`.
    input: PathBuf,
    #[command(flatten)]
    out: OutDir,
    /// Signal to analyze; defaults to the first of OUT_A, OUT_B, CLK, VCO present.
    #[arg(long)]
    signal: Option<Signal>,
    /// Time-interval error statistics.
    #[arg(long)]
    tie: bool,
    /// Random/deterministic jitter decomposition.
    #[arg(long)]
    decompose: bool,
    /// Phase-noise spectrum.
    #[arg(long)]
    pn: bool,
    /// Spur level at this offset in Hz; may be repeated.
    #[arg(long)]
    spur: Vec<f64>,
    /// Lock time from the per-reference-cycle samples.
    #[arg(long)]
    lock_time: bool,
    /// Ignore edges before this time, seconds.
    #[arg(long, default_value_t = 0.0)]
    t_start: f64,
    /// Lowest reported offset frequency, Hz.
    #[arg(long)]
    f_low: Option<f64>,
    /// Highest reported offset frequency, Hz.
    #[arg(long)]
    f_high: Option<f64>,
    /// TIE histogram bins.
    #[arg(long, default_value_t = 100)]
    bins: usize,
}

#[derive(Subcommand)]
enum BudgetOp {
    /// Sideband level from supply ripple.
    #[command(allow_negative_numbers = true)]
    Spur {
        /// Pushing gain, Hz/V.
        k_push: f64,
        /// Ripple amplitude, V.
        v_m: f64,
        /// Ripple frequency, Hz.
        f_m: f64,
    },
    /// Phase noise from white supply noise.
    #[command(allow_negative_numbers = true)]
    Pn {
        /// Noise density, V/√Hz.
        vn: f64,
        k_push: f64,
        /// Offset frequency, Hz.
        delta_f: f64,
    },
    /// Rejection needed to meet a spur target.
    #[command(allow_negative_numbers = true)]
    Psrr {
        v_in: f64,
        f_m: f64,
        k_push: f64,
        /// Spur target, dBc.
        spur_target: f64,
    },
    /// Largest supply noise density meeting a phase-noise target.
    #[command(allow_negative_numbers = true)]
    Vnmax {
        /// Target, dBc/Hz.
        l_target: f64,
        k_push: f64,
        delta_f: f64,
    },
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct DesignArgs {
    /// Charge-pump current, A.
    #[arg(long, default_value_t = 10e-6)]
    icp: f64,
    /// VCO gain, Hz/V.
    #[arg(long, default_value_t = 0.6e9)]
    kvco: f64,
    /// VCO over reference frequency.
    #[arg(long, default_value_t = 144.0)]
    n_total: f64,
    /// Crossover frequency, Hz.
    #[arg(long, default_value_t = 230e3)]
    fc: f64,
    /// Phase margin, degrees.
    #[arg(long, default_value_t = 55.0)]
    pm: f64,
}

#[derive(Args)]
struct PlanArgs {
    f_ref: f64,
    f_out_a: f64,
    f_out_b: Option<f64>,
    /// Take VCO ranges and divider stage sets from this configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RegmapOp {
    /// Plan the request and print the register programming file.
    Encode {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value_t = 16)]
        cp_dac: u32,
        #[arg(long, default_value_t = 16)]
        vco_bias_dac: u32,
        /// Program the planned band and disable automatic band selection.
        #[arg(long)]
        manual_band: bool,
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decode a programming file into fields (JSON).
    Decode {
        file: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        msg: msg.into(),
    }
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        msg: msg.into(),
    }
}

fn from_analysis(e: AnalysisError) -> Failure {
    match e {
        AnalysisError::TooFewEdges { .. } | AnalysisError::InsufficientRecord(_) => Failure {
            code: 4,
            msg: e.to_string(),
        },
        _ => invalid(e.to_string()),
    }
}

fn from_sim(e: SimError) -> Failure {
    match e {
        SimError::InvalidConfig(v) => {
            let lines: Vec<String> = v.iter().map(|x| format!("  {x}")).collect();
            invalid(format!("invalid configuration:\n{}", lines.join("\n")))
        }
        other => runtime(other.to_string()),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Budget(op) => cmd_budget(op),
        Cmd::DesignFilter(a) => cmd_design_filter(a),
        Cmd::Plan(a) => cmd_plan(a),
        Cmd::Regmap(op) => cmd_regmap(op),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(dir: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> Outcome {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| runtime(format!("cannot write {}: {e}", p.display())))?;
    written.push(name.to_string());
    Ok(())
}

#[derive(Serialize)]
struct Manifest {
    schema: &'static str,
    subcommand: &'static str,
    tool_version: &'static str,
    input: String,
    input_sha256: String,
    seed: Option<u64>,
    outputs: Vec<String>,
    started_unix_s: f64,
    wall_clock_s: f64,
}

/// Written last, through a temporary file and a rename.
fn write_manifest(dir: &Path, name: &str, m: &Manifest) -> Outcome {
    let tmp = dir.join(format!(".{name}.tmp"));
    let dst = dir.join(name);
    fs::write(&tmp, to_json(m))
        .and_then(|_| fs::rename(&tmp, &dst))
        .map_err(|e| runtime(format!("cannot write {}: {e}", dst.display())))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn load_config(path: &Path) -> Result<(PllConfig, String), Failure> {
    let bytes = fs::read(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|_| invalid(format!("{} is not UTF-8", path.display())))?;
    let cfg = PllConfig::from_toml_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok((cfg, sha256_hex(text.as_bytes())))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    schema: &'static str,
    config_sha256: &'a str,
    seed: u64,
    duration_s: f64,
    mode: &'static str,
    #[serde(flatten)]
    summary: &'a SimSummary,
}

fn cmd_simulate(a: SimulateArgs) -> Outcome {
    let started = unix_now();
    let clock = Instant::now();
    let (mut cfg, hash) = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.sim.seed = s;
    }
    if let Some(d) = a.duration {
        cfg.sim.duration = Seconds(d);
    }
    if let Some(r) = a.record {
        cfg.sim.record_edges = r.into_iter().collect();
    }
    let violations = validate_config(&cfg);
    if !violations.is_empty() {
        return Err(from_sim(SimError::InvalidConfig(violations)));
    }
    let trace = if a.open_loop {
        simulate_open_vco(&cfg, cfg.sim.duration, &mut pllsynth::edges::NullSink)
    } else {
        simulate(&cfg)
    }
    .map_err(from_sim)?;

    let dir = &a.out.out;
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    write_file(
        dir,
        "edges.csv",
        &trace_io::edges_csv(&trace.edges, cfg.f_ref.0),
        &mut written,
    )?;
    write_file(
        dir,
        "waveforms.csv",
        &trace_io::waveforms_csv(&trace.waveforms),
        &mut written,
    )?;
    write_file(
        dir,
        "ref_cycles.csv",
        &trace_io::ref_cycles_csv(&trace.ref_cycles),
        &mut written,
    )?;
    let summary = trace.summary();
    let sf = SummaryFile {
        schema: SUMMARY_SCHEMA,
        config_sha256: &hash,
        seed: cfg.sim.seed,
        duration_s: cfg.sim.duration.0,
        mode: if a.open_loop { "open_loop" } else { "closed_loop" },
        summary,
    };
    let json = to_json(&sf);
    write_file(dir, "summary.json", &json, &mut written)?;
    write_manifest(
        dir,
        "manifest.json",
        &Manifest {
            schema: MANIFEST_SCHEMA,
            subcommand: "simulate",
            tool_version: env!("CARGO_PKG_VERSION"),
            input: a.config.display().to_string(),
            input_sha256: hash.clone(),
            seed: Some(cfg.sim.seed),
            outputs: written,
            started_unix_s: started,
            wall_clock_s: clock.elapsed().as_secs_f64(),
        },
    )?;
    print!("{json}");
    match &summary.diagnostic {
        Some(d) => Err(runtime(d.clone())),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct PsdPoint {
    f_hz: f64,
    l_dbchz: f64,
}

#[derive(Serialize)]
struct SpurOut {
    f_hz: f64,
    level_dbc: f64,
    floor_limited: bool,
}

#[derive(Serialize, Default)]
struct Results {
    schema: &'static str,
    signal: String,
    edges_used: usize,
    period_s: Option<f64>,
    tie_rms_s: Option<f64>,
    rj_s: Option<f64>,
    dj_s: Option<f64>,
    model: Option<JitterModel>,
    ll_gain: Option<f64>,
    psd_convention: Option<String>,
    psd_bin_hz: Option<f64>,
    psd: Vec<PsdPoint>,
    spurs: Vec<SpurOut>,
    lock_time_s: Option<f64>,
}

/// Edges of the chosen signal plus, for trace directories, the reference
/// cycle samples.
fn load_trace(input: &Path) -> Result<(SimTrace, String), Failure> {
    let mut trace = SimTrace::default();
    let edges_path = if input.is_dir() {
        let rc = input.join("ref_cycles.csv");
        if rc.exists() {
            trace.ref_cycles = trace_io::read_ref_cycles(&rc).map_err(invalid)?;
        }
        input.join("edges.csv")
    } else {
        input.to_path_buf()
    };
    let bytes = fs::read(&edges_path).map_err(|e| invalid(format!("cannot read {}: {e}", edges_path.display())))?;
    trace.edges = trace_io::read_edges(&edges_path).map_err(|e| invalid(format!("{}: {e}", edges_path.display())))?;
    Ok((trace, sha256_hex(&bytes)))
}

fn pick_signal(trace: &SimTrace, want: Option<Signal>) -> Result<Signal, Failure> {
    if let Some(s) = want {
        return if trace.edges_of(s).is_empty() {
            Err(invalid(format!("no {s} edges in the input")))
        } else {
            Ok(s)
        };
    }
    [
        Signal::OutA,
        Signal::OutB,
        Signal::Clk,
        Signal::Vco,
        Signal::Quad,
        Signal::Ref,
    ]
    .into_iter()
    .find(|s| !trace.edges_of(*s).is_empty())
    .ok_or_else(|| invalid("input holds no clock edges"))
}

fn cmd_analyze(a: AnalyzeArgs) -> Outcome {
    let started = unix_now();
    let clock = Instant::now();
    let (trace, hash) = load_trace(&a.input)?;
    let any = a.tie || a.decompose || a.pn || !a.spur.is_empty() || a.lock_time;
    let (want_tie, want_dec, want_lock) = if any {
        (a.tie, a.decompose, a.lock_time)
    } else {
        (true, true, !trace.ref_cycles.is_empty())
    };
    let want_pn = a.pn || !a.spur.is_empty();
    if a.spur.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(invalid("spur offsets must be positive"));
    }

    let mut res = Results {
        schema: RESULTS_SCHEMA,
        ..Default::default()
    };
    let mut written = Vec::new();
    let dir = &a.out.out;
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;

    if want_tie || want_dec || want_pn {
        let sig = pick_signal(&trace, a.signal)?;
        let edges: Vec<EdgeEvent> = trace
            .edges_of(sig)
            .iter()
            .filter(|e| e.t() >= a.t_start)
            .copied()
            .collect();
        res.signal = sig.to_string();
        res.edges_used = edges.len();
        if want_tie || want_dec {
            let t = tie(&edges).map_err(from_analysis)?;
            res.period_s = Some(t.period);
            res.tie_rms_s = Some(t.rms());
            let mut csv = String::from("# pllsynth-tie-histogram/1\ntie_s,count\n");
            for (c, n) in histogram(&t.residuals, a.bins.max(1)) {
                csv.push_str(&format!("{c:e},{n}\n"));
            }
            write_file(dir, "tie_histogram.csv", &csv, &mut written)?;
            if want_dec {
                let d = decompose(&t).map_err(from_analysis)?;
                res.rj_s = Some(d.rj);
                res.dj_s = Some(d.dj);
                res.model = Some(d.model);
                res.ll_gain = Some(d.ll_gain);
            }
        }
        if want_pn {
            let rising: Vec<f64> = edges.iter().filter(|e| e.is_rising()).map(EdgeEvent::t).collect();
            let f0 = if rising.len() >= 2 {
                (rising.len() - 1) as f64 / (rising[rising.len() - 1] - rising[0])
            } else {
                return Err(from_analysis(AnalysisError::TooFewEdges {
                    need: 2,
                    got: rising.len(),
                }));
            };
            let min_spur = a.spur.iter().copied().fold(f64::INFINITY, f64::min);
            let max_spur = a.spur.iter().copied().fold(0.0, f64::max);
            let f_low = a.f_low.unwrap_or_else(|| 100e3f64.min(min_spur / 20.0));
            let f_high = a.f_high.unwrap_or_else(|| 10e6f64.max(2.0 * max_spur).min(f0 / 4.0));
            let psd = pn_psd(&edges, f0, &PsdOptions::new(f_low, f_high)).map_err(from_analysis)?;
            let mut csv = format!(
                "# pllsynth-psd/1 convention={}\nf_hz,l_dbchz\n",
                psd.convention.replace(' ', "_")
            );
            for (f, l) in psd.f_hz.iter().zip(&psd.l_dbc_hz) {
                csv.push_str(&format!("{f:e},{l:e}\n"));
                res.psd.push(PsdPoint { f_hz: *f, l_dbchz: *l });
            }
            write_file(dir, "psd.csv", &csv, &mut written)?;
            for &f in &a.spur {
                let s = spur_level(&psd, f).map_err(from_analysis)?;
                res.spurs.push(SpurOut {
                    f_hz: s.f_hz,
                    level_dbc: s.level_dbc,
                    floor_limited: s.floor_limited,
                });
            }
            res.psd_convention = Some(psd.convention);
            res.psd_bin_hz = Some(psd.bin_hz);
        }
    }
    if want_lock {
        if trace.ref_cycles.is_empty() && trace.edges_of(Signal::Lock).is_empty() {
            return Err(invalid("lock time needs ref_cycles.csv or LOCK edges"));
        }
        res.lock_time_s = match lock_time(&trace) {
            Ok(t) => Some(t),
            Err(AnalysisError::NeverLocked) => None,
            Err(e) => return Err(from_analysis(e)),
        };
    }
    let json = to_json(&res);
    write_file(dir, "results.json", &json, &mut written)?;
    write_manifest(
        dir,
        "analysis_manifest.json",
        &Manifest {
            schema: MANIFEST_SCHEMA,
            subcommand: "analyze",
            tool_version: env!("CARGO_PKG_VERSION"),
            input: a.input.display().to_string(),
            input_sha256: hash,
            seed: None,
            outputs: written,
            started_unix_s: started,
            wall_clock_s: clock.elapsed().as_secs_f64(),
        },
    )?;
    print!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct BudgetOut {
    schema: &'static str,
    op: &'static str,
    inputs: BTreeMap<&'static str, f64>,
    result: serde_json::Value,
    cross_check: Vec<CrossCheck>,
}

fn positive(vals: &[(&'static str, f64)]) -> Result<BTreeMap<&'static str, f64>, Failure> {
    for (name, v) in vals {
        if !(v.is_finite() && *v > 0.0) {
            return Err(invalid(format!("{name} must be a positive number, got {v}")));
        }
    }
    Ok(vals.iter().copied().collect())
}

fn checks_matching(prefix: &str) -> Vec<CrossCheck> {
    published_cross_check()
        .into_iter()
        .filter(|c| c.quantity.starts_with(prefix))
        .collect()
}

fn cmd_budget(op: BudgetOp) -> Outcome {
    let out = match op {
        BudgetOp::Spur { k_push, v_m, f_m } => {
            let inputs = positive(&[("k_push_hz_per_v", k_push), ("v_m_v", v_m), ("f_m_hz", f_m)])?;
            let s = spur_amplitude(k_push, Volts(v_m), Hertz(f_m));
            BudgetOut {
                schema: BUDGET_SCHEMA,
                op: "spur",
                inputs,
                result: serde_json::json!({
                    "level_dbc": s.level_dbc,
                    "modulation_index_rad": s.modulation_index,
                    "narrowband": s.narrowband,
                }),
                cross_check: Vec::new(),
            }
        }
        BudgetOp::Pn { vn, k_push, delta_f } => {
            let inputs = positive(&[
                ("vn_v_per_rthz", vn),
                ("k_push_hz_per_v", k_push),
                ("delta_f_hz", delta_f),
            ])?;
            BudgetOut {
                schema: BUDGET_SCHEMA,
                op: "pn",
                inputs,
                result: serde_json::json!({ "l_dbc_hz": supply_pn(vn, k_push, Hertz(delta_f)).0 }),
                cross_check: checks_matching("supply_pn"),
            }
        }
        BudgetOp::Psrr {
            v_in,
            f_m,
            k_push,
            spur_target,
        } => {
            let mut inputs = positive(&[("v_in_v", v_in), ("f_m_hz", f_m), ("k_push_hz_per_v", k_push)])?;
            if !spur_target.is_finite() {
                return Err(invalid("spur target must be finite"));
            }
            inputs.insert("spur_target_dbc", spur_target);
            let r = required_psrr(Volts(v_in), Hertz(f_m), k_push, Dbc(spur_target));
            BudgetOut {
                schema: BUDGET_SCHEMA,
                op: "psrr",
                inputs,
                result: serde_json::json!({
                    "psrr_db": r.psrr_db,
                    "v_allowed_v": r.v_allowed,
                    "already_compliant": r.already_compliant,
                }),
                cross_check: checks_matching("psrr"),
            }
        }
        BudgetOp::Vnmax {
            l_target,
            k_push,
            delta_f,
        } => {
            let mut inputs = positive(&[("k_push_hz_per_v", k_push), ("delta_f_hz", delta_f)])?;
            if !l_target.is_finite() {
                return Err(invalid("target must be finite"));
            }
            inputs.insert("l_target_dbc_hz", l_target);
            BudgetOut {
                schema: BUDGET_SCHEMA,
                op: "vnmax",
                inputs,
                result: serde_json::json!({
                    "vn_max_v_per_rthz": max_supply_noise(DbcPerHz(l_target), k_push, Hertz(delta_f)),
                }),
                cross_check: checks_matching("max_supply_noise"),
            }
        }
    };
    print!("{}", to_json(&out));
    Ok(())
}

fn cmd_design_filter(a: DesignArgs) -> Outcome {
    let spec = FilterDesignSpec {
        i_cp: Amperes(a.icp),
        kvco: a.kvco,
        n_total: a.n_total,
        f_c: Hertz(a.fc),
        phase_margin: a.pm,
    };
    let f = design_loop_filter(&spec).map_err(|e| invalid(e.to_string()))?;
    let check = crossover_check(&f, &spec);
    let out = serde_json::json!({
        "schema": FILTER_SCHEMA,
        "spec": spec,
        "rz_ohm": f.rz.0,
        "c1_f": f.c1.0,
        "c2_f": f.c2.0,
        "zero_hz": 1.0 / (std::f64::consts::TAU * f.tau_zero()),
        "pole_hz": 1.0 / (std::f64::consts::TAU * f.tau_pole()),
        "crossover_gain": check.magnitude,
        "phase_margin_deg": check.phase_margin,
        "closed_loop_bandwidth_hz": closed_loop_bandwidth(&f, a.icp, a.kvco, a.n_total),
    });
    print!("{}", to_json(&out));
    Ok(())
}

fn vco_and_sets(config: Option<&Path>) -> Result<(VcoParams, StageSets), Failure> {
    match config {
        Some(p) => {
            let (cfg, _) = load_config(p)?;
            Ok((cfg.vco, cfg.outdiv_stages))
        }
        None => Ok((VcoParams::default(), StageSets::default())),
    }
}

fn run_plan(a: &PlanArgs) -> Result<(Plan, StageSets), Failure> {
    let (vco, sets) = vco_and_sets(a.config.as_deref())?;
    let req = PlanRequest {
        f_ref: Hertz(a.f_ref),
        f_out_a: Hertz(a.f_out_a),
        f_out_b: a.f_out_b.map(Hertz),
    };
    let p = plan(&req, &vco, &sets).map_err(|e| invalid(e.to_string()))?;
    Ok((p, sets))
}

fn cmd_plan(a: PlanArgs) -> Outcome {
    let (p, sets) = run_plan(&a)?;
    let (_, txs) = encode(&p, &Biases::default(), &sets).map_err(|e| invalid(e.to_string()))?;
    let regs: Vec<String> = txs.iter().map(ToString::to_string).collect();
    let out = serde_json::json!({
        "schema": PLAN_SCHEMA,
        "plan": p,
        "registers": regs,
    });
    print!("{}", to_json(&out));
    Ok(())
}

#[derive(Serialize)]
struct FieldsOut<'a> {
    schema: &'static str,
    fields: &'a ProgramFields,
    outdiv_a_ratio: u32,
    outdiv_b_ratio: u32,
}

fn cmd_regmap(op: RegmapOp) -> Outcome {
    match op {
        RegmapOp::Encode {
            plan: pa,
            cp_dac,
            vco_bias_dac,
            manual_band,
            output,
        } => {
            let (p, sets) = run_plan(&pa)?;
            let biases = Biases {
                cp_dac,
                vco_bias_dac,
                auto_band: !manual_band,
            };
            let (_, txs) = encode(&p, &biases, &sets).map_err(|e| invalid(e.to_string()))?;
            let text = RegisterFile::to_hex(&txs);
            match output {
                Some(path) => {
                    fs::write(&path, &text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?
                }
                None => print!("{text}"),
            }
        }
        RegmapOp::Decode { file, config } => {
            let (_, sets) = vco_and_sets(config.as_deref())?;
            let text =
                fs::read_to_string(&file).map_err(|e| invalid(format!("cannot read {}: {e}", file.display())))?;
            let txs = RegisterFile::parse_hex(&text).map_err(|e| invalid(e.to_string()))?;
            let mut rf = RegisterFile::default();
            rf.apply(&txs).map_err(|e| invalid(e.to_string()))?;
            let fields = decode(&rf, &sets).map_err(|e| invalid(e.to_string()))?;
            let out = FieldsOut {
                schema: FIELDS_SCHEMA,
                outdiv_a_ratio: fields.outdiv_a.ratio(),
                outdiv_b_ratio: fields.outdiv_b.ratio(),
                fields: &fields,
            };
            print!("{}", to_json(&out));
        }
    }
    Ok(())
}
