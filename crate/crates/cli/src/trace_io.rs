//! Trace files written by `simulate` and read back by `analyze`.
//!
//! Every file starts with a `# <schema>` line. Edge times are stored as a
//! whole number of time-base periods plus a residual so that long runs keep
//! sub-femtosecond resolution in text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pllsynth::engine::{RefCycleSample, WaveformSample};
use pllsynth::{EdgeEvent, Polarity, Signal};

pub const EDGES_SCHEMA: &str = "pllsynth-edges/1";
pub const WAVEFORMS_SCHEMA: &str = "pllsynth-waveforms/1";
pub const REF_CYCLES_SCHEMA: &str = "pllsynth-refcycles/1";

const EDGES_HEADER: &str = "signal,polarity,index,cycle_index,residual_s";

pub fn edges_csv(edges: &BTreeMap<Signal, Vec<EdgeEvent>>, time_base_hz: f64) -> String {
    let mut out = format!("# {EDGES_SCHEMA} time_base_hz={time_base_hz:e}\n{EDGES_HEADER}\n");
    for stream in edges.values() {
        for e in stream {
            let k = (e.t() * time_base_hz).floor();
            let r = e.t() - k / time_base_hz;
            let _ = writeln!(
                out,
                "{},{},{},{},{:e}",
                e.signal,
                e.polarity.as_str(),
                e.index,
                k as i64,
                r
            );
        }
    }
    out
}

pub fn waveforms_csv(w: &[WaveformSample]) -> String {
    let mut out = format!("# {WAVEFORMS_SCHEMA}\ntime_s,v_ctrl_v,v_x_v,band,supply_dev_v\n");
    for s in w {
        let _ = writeln!(
            out,
            "{:e},{:e},{:e},{},{:e}",
            s.t, s.v_ctrl, s.v_x, s.band, s.supply_dev
        );
    }
    out
}

pub fn ref_cycles_csv(rc: &[RefCycleSample]) -> String {
    let mut out = format!("# {REF_CYCLES_SCHEMA}\ntime_s,freq_error,v_ctrl_v\n");
    for s in rc {
        let _ = writeln!(out, "{:e},{:e},{:e}", s.t, s.freq_error, s.v_ctrl);
    }
    out
}

fn schema_line<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, want: &str) -> Result<&'a str, String> {
    let (_, first) = lines.next().ok_or("file is empty")?;
    let rest = first
        .strip_prefix('#')
        .map(str::trim)
        .ok_or_else(|| format!("missing schema line, expected `# {want}`"))?;
    let mut words = rest.split_whitespace();
    match words.next() {
        Some(s) if s == want => Ok(rest[want.len()..].trim()),
        other => Err(format!("unsupported schema {other:?}, expected {want}")),
    }
}

fn field<T: std::str::FromStr>(cols: &[&str], i: usize, line: usize, what: &str) -> Result<T, String> {
    cols.get(i)
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| format!("line {line}: bad {what}"))
}

/// Parse an edges file. Besides the native layout, a plain
/// `signal,polarity,index,time_s` table is accepted.
pub fn read_edges(path: &Path) -> Result<BTreeMap<Signal, Vec<EdgeEvent>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let params = schema_line(&mut lines, EDGES_SCHEMA)?;
    let base: Option<f64> = params
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("time_base_hz="))
        .and_then(|v| v.parse().ok());
    let (_, header) = lines.next().ok_or("missing column header")?;
    let split_time = match header.trim() {
        EDGES_HEADER => true,
        "signal,polarity,index,time_s" => false,
        h => return Err(format!("unexpected column header {h:?}")),
    };
    if split_time && !base.is_some_and(|b| b > 0.0) {
        return Err("schema line lacks a positive time_base_hz".into());
    }
    let mut out: BTreeMap<Signal, Vec<EdgeEvent>> = BTreeMap::new();
    for (n, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let signal: Signal = field(&cols, 0, n, "signal")?;
        let polarity: Polarity = field(&cols, 1, n, "polarity")?;
        let index: u64 = field(&cols, 2, n, "index")?;
        let t = if split_time {
            let k: i64 = field(&cols, 3, n, "cycle_index")?;
            let r: f64 = field(&cols, 4, n, "residual_s")?;
            k as f64 / base.unwrap_or(1.0) + r
        } else {
            field(&cols, 3, n, "time_s")?
        };
        if !t.is_finite() {
            return Err(format!("line {n}: non-finite time"));
        }
        out.entry(signal).or_default().push(EdgeEvent {
            signal,
            polarity,
            index,
            time: pllsynth::Seconds(t),
        });
    }
    Ok(out)
}

pub fn read_ref_cycles(path: &Path) -> Result<Vec<RefCycleSample>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    schema_line(&mut lines, REF_CYCLES_SCHEMA)?;
    lines.next().ok_or("missing column header")?;
    lines
        .map(|(n, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            Ok(RefCycleSample {
                t: field(&cols, 0, n, "time_s")?,
                freq_error: field(&cols, 1, n, "freq_error")?,
                v_ctrl: field(&cols, 2, n, "v_ctrl_v")?,
            })
        })
        .collect()
}
