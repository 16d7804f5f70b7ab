//! Full synthesizer configuration, its validation, and the TOML file format.
//!
//! File layout (schema `pllsynth-config/1`):
//!
//! ```toml
//! schema = "pllsynth-config/1"
//! [pll]      # f_ref_hz, vdd_v, t_reset_s, icp_a, cp_mismatch, cp_leakage_a
//! [filter]   # rz_ohm, c1_f, c2_f
//! [vco]      # f_min_hz, f_max_hz, n_caps, kvco_hz_per_v, kvdd_hz_per_v,
//!            # kvddl_hz_per_v, vddl_v, v_mid_v, band_overlap, band (optional)
//! [divider]  # n, p, s, outdiv_a, outdiv_b, stage_sets
//! [noise]    # vco_pn_dbc_hz + vco_pn_offset_hz, ref_rj_s, ripple_v + ripple_hz,
//!            # supply_noise_v_per_rthz, buffer_dcd_s
//! [lockdet]  # alpha, alpha_low, r_ratio, tau_s, vdd_v
//! [sim]      # duration_s, seed, sample_interval_s, record_edges, initial_vctrl_v
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{design_loop_filter, FilterDesignSpec};
use crate::dividers::{fb_ratio, FeedbackDividerConfig, OutputDividerConfig, StageSets};
use crate::edges::Signal;
use crate::lockdet::LockDetectorParams;
use crate::loop_blocks::{ChargePumpParams, LoopFilterParams, PfdParams};
use crate::noise::{NoiseSpec, PnTarget, Ripple};
use crate::units::{finite, finite_opt, Amperes, DbcPerHz, Farads, Hertz, Ohms, Seconds, Volts};
use crate::vco::VcoParams;

pub const CONFIG_SCHEMA: &str = "pllsynth-config/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Parse(String),
    #[error("cannot serialize configuration: {0}")]
    Serialize(String),
}

/// Run control for one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimControl {
    pub duration: Seconds,
    pub seed: u64,
    /// Spacing of the analog waveform samples.
    pub sample_interval: Seconds,
    pub record_edges: BTreeSet<Signal>,
    /// Start with the filter charged to this control voltage instead of
    /// `v_mid`.
    pub initial_vctrl: Option<Volts>,
}

impl Default for SimControl {
    fn default() -> Self {
        Self {
            duration: Seconds(100e-6),
            seed: 1,
            sample_interval: Seconds(10e-9),
            record_edges: [Signal::Ref, Signal::Clk, Signal::Lock].into_iter().collect(),
            initial_vctrl: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PllConfig {
    pub f_ref: Hertz,
    /// Main supply; the control node saturates at 0 and `vdd`.
    pub vdd: Volts,
    pub pfd: PfdParams,
    pub cp: ChargePumpParams,
    pub filter: LoopFilterParams,
    pub vco: VcoParams,
    pub fbdiv: FeedbackDividerConfig,
    pub outdiv_stages: StageSets,
    pub outdiv_a: OutputDividerConfig,
    pub outdiv_b: OutputDividerConfig,
    pub lockdet: LockDetectorParams,
    pub noise: NoiseSpec,
    pub sim: SimControl,
}

impl Default for PllConfig {
    /// 50 MHz reference, `N·P+S = 36` (VCO at 7.2 GHz), filter synthesized
    /// for a 230 kHz crossover with 55° phase margin.
    fn default() -> Self {
        let fbdiv = FeedbackDividerConfig { n: 2, p: 18, s: 0 };
        let filter = design_loop_filter(&FilterDesignSpec {
            n_total: 4.0 * 36.0,
            ..Default::default()
        })
        .expect("default filter design is feasible");
        let stages = StageSets::default();
        let outdiv_a = stages.decompose(2).expect("ratio 2");
        let outdiv_b = stages.decompose(8).expect("ratio 8");
        Self {
            f_ref: Hertz(50e6),
            vdd: Volts(1.2),
            pfd: PfdParams::default(),
            cp: ChargePumpParams::default(),
            filter,
            vco: VcoParams::default(),
            fbdiv,
            outdiv_stages: stages,
            outdiv_a,
            outdiv_b,
            lockdet: LockDetectorParams::default(),
            noise: NoiseSpec::default(),
            sim: SimControl::default(),
        }
    }
}

impl PllConfig {
    /// `N·P+S`, or 0 when the divider settings are invalid.
    pub fn np_plus_s(&self) -> u32 {
        fb_ratio(&self.fbdiv).unwrap_or(0)
    }

    /// VCO frequency over reference frequency: quadrature ÷2, `N·P+S`, ÷2.
    pub fn n_total(&self) -> f64 {
        4.0 * f64::from(self.np_plus_s())
    }

    /// VCO frequency implied by lock.
    pub fn target_vco(&self) -> f64 {
        self.f_ref.0 * self.n_total()
    }

    /// Quadrature rail frequency at lock.
    pub fn quad_freq(&self) -> f64 {
        self.target_vco() / 2.0
    }

    /// Control voltage at which the given band sits exactly on the target.
    pub fn locked_vctrl(&self, band: u32) -> f64 {
        self.vco.vctrl_for(band, self.target_vco())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        file.into_config()
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(&ConfigFile::from_config(self)).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

/// One broken rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn check(&mut self, ok: bool, field: &str, rule: impl Into<String>) {
        if !ok {
            self.0.push(Violation {
                field: field.into(),
                rule: rule.into(),
            });
        }
    }

    fn positive(&mut self, v: f64, field: &str) {
        self.check(v.is_finite() && v > 0.0, field, "must be positive");
    }

    fn non_negative(&mut self, v: f64, field: &str) {
        self.check(v.is_finite() && v >= 0.0, field, "must be non-negative");
    }
}

/// Every rule the configuration breaks; empty when it is valid.
pub fn validate_config(cfg: &PllConfig) -> Vec<Violation> {
    let mut c = Checker(Vec::new());

    c.positive(cfg.f_ref.0, "pll.f_ref_hz");
    c.positive(cfg.vdd.0, "pll.vdd_v");
    let t_reset = cfg.pfd.t_reset.0;
    c.check(
        t_reset > 0.0 && t_reset * 10.0 * cfg.f_ref.0 < 1.0,
        "pll.t_reset_s",
        "must be positive and below 1/(10·f_ref)",
    );
    c.positive(cfg.cp.i_cp.0, "pll.icp_a");
    c.check(
        cfg.cp.mismatch.abs() < 0.5,
        "pll.cp_mismatch",
        "|mismatch| must be below 0.5",
    );
    c.check(cfg.cp.leakage.is_finite(), "pll.cp_leakage_a", "must be finite");

    c.positive(cfg.filter.rz.0, "filter.rz_ohm");
    c.positive(cfg.filter.c1.0, "filter.c1_f");
    c.positive(cfg.filter.c2.0, "filter.c2_f");
    c.check(
        cfg.filter.c2.0 < cfg.filter.c1.0,
        "filter.c2_f",
        "c2 must be smaller than c1",
    );

    let v = &cfg.vco;
    c.positive(v.f_min.0, "vco.f_min_hz");
    c.check(v.f_min.0 < v.f_max.0, "vco.f_max_hz", "f_min must be below f_max");
    c.check(v.n_caps >= 1, "vco.n_caps", "at least one switched capacitor");
    c.positive(v.kvco, "vco.kvco_hz_per_v");
    c.check(v.kvdd.is_finite(), "vco.kvdd_hz_per_v", "must be finite");
    c.check(v.kvddl.is_finite(), "vco.kvddl_hz_per_v", "must be finite");
    c.positive(v.vddl.0, "vco.vddl_v");
    c.check(
        v.v_mid.0 > 0.0 && v.v_mid.0 < cfg.vdd.0,
        "vco.v_mid_v",
        "must lie strictly between 0 and VDD",
    );
    c.check(
        (0.0..1.0).contains(&v.band_overlap),
        "vco.band_overlap",
        "must lie in [0, 1)",
    );
    if let Some(b) = v.band {
        c.check(b <= v.n_caps, "vco.band", format!("band out of range 0-{}", v.n_caps));
    }

    let fb = &cfg.fbdiv;
    c.check(fb.n == 2, "divider.n", "prescaler N is fixed at 2");
    c.check((1..=63).contains(&fb.p), "divider.p", "P out of range 1-63");
    c.check(fb.s <= 15, "divider.s", "S out of range 0-15");
    c.check(fb.s <= fb.p, "divider.s", "S must not exceed P");

    for (name, od) in [("divider.outdiv_a", &cfg.outdiv_a), ("divider.outdiv_b", &cfg.outdiv_b)] {
        if let Err(e) = od.validate(&cfg.outdiv_stages) {
            c.check(false, name, e.to_string());
        }
    }

    let ld = &cfg.lockdet;
    c.check(
        0.0 < ld.alpha_low && ld.alpha_low < ld.alpha && ld.alpha < 1.0,
        "lockdet.alpha",
        "need 0 < alpha_low < alpha < 1",
    );
    c.positive(ld.r_ratio, "lockdet.r_ratio");
    c.positive(ld.vdd.0, "lockdet.vdd_v");
    c.check(
        ld.tau.0 * cfg.f_ref.0 >= 50.0,
        "lockdet.tau_s",
        "must span at least 50 reference periods",
    );

    let n = &cfg.noise;
    if let Some(pn) = n.vco_pn {
        c.positive(pn.offset.0, "noise.vco_pn_offset_hz");
    }
    c.non_negative(n.ref_rj.0, "noise.ref_rj_s");
    if let Some(r) = n.ripple {
        c.non_negative(r.amplitude.0, "noise.ripple_v");
        c.positive(r.freq.0, "noise.ripple_hz");
    }
    c.non_negative(n.supply_noise_psd, "noise.supply_noise_v_per_rthz");
    c.non_negative(n.buffer_dcd.0, "noise.buffer_dcd_s");

    c.check(cfg.sim.duration.0 > 0.0, "sim.duration_s", "duration must be positive");
    c.check(
        cfg.sim.sample_interval.0 > 0.0,
        "sim.sample_interval_s",
        "sample interval must be positive",
    );
    if let Some(vi) = cfg.sim.initial_vctrl {
        c.check(
            (0.0..=cfg.vdd.0).contains(&vi.0),
            "sim.initial_vctrl_v",
            "must lie within the rails",
        );
    }

    if v.band.is_none() && c.0.is_empty() {
        let f = cfg.target_vco();
        c.check(
            f >= v.f_min.0 && f <= v.f_max.0,
            "divider.p",
            format!(
                "implied VCO frequency {:.6e} Hz lies outside {:.6e}-{:.6e} Hz",
                f, v.f_min.0, v.f_max.0
            ),
        );
    }
    c.0
}

// ---- file layout ----

fn is_none<T>(v: &Option<T>) -> bool {
    v.is_none()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema: String,
    pll: PllSection,
    filter: FilterSection,
    vco: VcoSection,
    divider: DividerSection,
    noise: NoiseSection,
    lockdet: LockdetSection,
    sim: SimSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PllSection {
    f_ref_hz: Hertz,
    vdd_v: Volts,
    t_reset_s: Seconds,
    icp_a: Amperes,
    #[serde(deserialize_with = "finite")]
    cp_mismatch: f64,
    cp_leakage_a: Amperes,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterSection {
    rz_ohm: Ohms,
    c1_f: Farads,
    c2_f: Farads,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VcoSection {
    f_min_hz: Hertz,
    f_max_hz: Hertz,
    n_caps: u32,
    #[serde(deserialize_with = "finite")]
    kvco_hz_per_v: f64,
    #[serde(deserialize_with = "finite")]
    kvdd_hz_per_v: f64,
    #[serde(deserialize_with = "finite")]
    kvddl_hz_per_v: f64,
    vddl_v: Volts,
    v_mid_v: Volts,
    #[serde(deserialize_with = "finite")]
    band_overlap: f64,
    #[serde(default, skip_serializing_if = "is_none")]
    band: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DividerSection {
    n: u32,
    p: u32,
    s: u32,
    outdiv_a: Vec<u32>,
    outdiv_b: Vec<u32>,
    stage_sets: Vec<Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    #[serde(default, deserialize_with = "finite_opt", skip_serializing_if = "is_none")]
    vco_pn_dbc_hz: Option<f64>,
    #[serde(default, deserialize_with = "finite_opt", skip_serializing_if = "is_none")]
    vco_pn_offset_hz: Option<f64>,
    ref_rj_s: Seconds,
    #[serde(default, deserialize_with = "finite_opt", skip_serializing_if = "is_none")]
    ripple_v: Option<f64>,
    #[serde(default, deserialize_with = "finite_opt", skip_serializing_if = "is_none")]
    ripple_hz: Option<f64>,
    #[serde(deserialize_with = "finite")]
    supply_noise_v_per_rthz: f64,
    buffer_dcd_s: Seconds,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LockdetSection {
    #[serde(deserialize_with = "finite")]
    alpha: f64,
    #[serde(deserialize_with = "finite")]
    alpha_low: f64,
    #[serde(deserialize_with = "finite")]
    r_ratio: f64,
    tau_s: Seconds,
    vdd_v: Volts,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    duration_s: Seconds,
    seed: u64,
    sample_interval_s: Seconds,
    record_edges: Vec<String>,
    #[serde(default, deserialize_with = "finite_opt", skip_serializing_if = "is_none")]
    initial_vctrl_v: Option<f64>,
}

fn paired(a: Option<f64>, b: Option<f64>, what: &str) -> Result<Option<(f64, f64)>, ConfigError> {
    match (a, b) {
        (Some(x), Some(y)) => Ok(Some((x, y))),
        (None, None) => Ok(None),
        _ => Err(ConfigError::Parse(format!("{what} must be given together"))),
    }
}

impl ConfigFile {
    fn from_config(cfg: &PllConfig) -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            pll: PllSection {
                f_ref_hz: cfg.f_ref,
                vdd_v: cfg.vdd,
                t_reset_s: cfg.pfd.t_reset,
                icp_a: cfg.cp.i_cp,
                cp_mismatch: cfg.cp.mismatch,
                cp_leakage_a: cfg.cp.leakage,
            },
            filter: FilterSection {
                rz_ohm: cfg.filter.rz,
                c1_f: cfg.filter.c1,
                c2_f: cfg.filter.c2,
            },
            vco: VcoSection {
                f_min_hz: cfg.vco.f_min,
                f_max_hz: cfg.vco.f_max,
                n_caps: cfg.vco.n_caps,
                kvco_hz_per_v: cfg.vco.kvco,
                kvdd_hz_per_v: cfg.vco.kvdd,
                kvddl_hz_per_v: cfg.vco.kvddl,
                vddl_v: cfg.vco.vddl,
                v_mid_v: cfg.vco.v_mid,
                band_overlap: cfg.vco.band_overlap,
                band: cfg.vco.band,
            },
            divider: DividerSection {
                n: cfg.fbdiv.n,
                p: cfg.fbdiv.p,
                s: cfg.fbdiv.s,
                outdiv_a: cfg.outdiv_a.stages.clone(),
                outdiv_b: cfg.outdiv_b.stages.clone(),
                stage_sets: cfg.outdiv_stages.0.clone(),
            },
            noise: NoiseSection {
                vco_pn_dbc_hz: cfg.noise.vco_pn.map(|p| p.level.0),
                vco_pn_offset_hz: cfg.noise.vco_pn.map(|p| p.offset.0),
                ref_rj_s: cfg.noise.ref_rj,
                ripple_v: cfg.noise.ripple.map(|r| r.amplitude.0),
                ripple_hz: cfg.noise.ripple.map(|r| r.freq.0),
                supply_noise_v_per_rthz: cfg.noise.supply_noise_psd,
                buffer_dcd_s: cfg.noise.buffer_dcd,
            },
            lockdet: LockdetSection {
                alpha: cfg.lockdet.alpha,
                alpha_low: cfg.lockdet.alpha_low,
                r_ratio: cfg.lockdet.r_ratio,
                tau_s: cfg.lockdet.tau,
                vdd_v: cfg.lockdet.vdd,
            },
            sim: SimSection {
                duration_s: cfg.sim.duration,
                seed: cfg.sim.seed,
                sample_interval_s: cfg.sim.sample_interval,
                record_edges: cfg.sim.record_edges.iter().map(|s| s.name().to_string()).collect(),
                initial_vctrl_v: cfg.sim.initial_vctrl.map(|v| v.0),
            },
        }
    }

    fn into_config(self) -> Result<PllConfig, ConfigError> {
        if self.schema != CONFIG_SCHEMA {
            return Err(ConfigError::Parse(format!(
                "unsupported schema {:?}, expected {CONFIG_SCHEMA:?}",
                self.schema
            )));
        }
        let vco_pn = paired(
            self.noise.vco_pn_dbc_hz,
            self.noise.vco_pn_offset_hz,
            "vco_pn_dbc_hz and vco_pn_offset_hz",
        )?
        .map(|(l, f)| PnTarget {
            level: DbcPerHz(l),
            offset: Hertz(f),
        });
        let ripple =
            paired(self.noise.ripple_v, self.noise.ripple_hz, "ripple_v and ripple_hz")?.map(|(v, f)| Ripple {
                amplitude: Volts(v),
                freq: Hertz(f),
            });
        let record_edges = self
            .sim
            .record_edges
            .iter()
            .map(|s| s.parse::<Signal>())
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(ConfigError::Parse)?;
        Ok(PllConfig {
            f_ref: self.pll.f_ref_hz,
            vdd: self.pll.vdd_v,
            pfd: PfdParams {
                t_reset: self.pll.t_reset_s,
            },
            cp: ChargePumpParams {
                i_cp: self.pll.icp_a,
                mismatch: self.pll.cp_mismatch,
                leakage: self.pll.cp_leakage_a,
            },
            filter: LoopFilterParams {
                rz: self.filter.rz_ohm,
                c1: self.filter.c1_f,
                c2: self.filter.c2_f,
            },
            vco: VcoParams {
                f_min: self.vco.f_min_hz,
                f_max: self.vco.f_max_hz,
                n_caps: self.vco.n_caps,
                kvco: self.vco.kvco_hz_per_v,
                kvdd: self.vco.kvdd_hz_per_v,
                kvddl: self.vco.kvddl_hz_per_v,
                vddl: self.vco.vddl_v,
                v_mid: self.vco.v_mid_v,
                band_overlap: self.vco.band_overlap,
                band: self.vco.band,
            },
            fbdiv: FeedbackDividerConfig {
                n: self.divider.n,
                p: self.divider.p,
                s: self.divider.s,
            },
            outdiv_stages: StageSets(self.divider.stage_sets),
            outdiv_a: OutputDividerConfig {
                stages: self.divider.outdiv_a,
            },
            outdiv_b: OutputDividerConfig {
                stages: self.divider.outdiv_b,
            },
            lockdet: LockDetectorParams {
                alpha: self.lockdet.alpha,
                alpha_low: self.lockdet.alpha_low,
                r_ratio: self.lockdet.r_ratio,
                tau: self.lockdet.tau_s,
                vdd: self.lockdet.vdd_v,
            },
            noise: NoiseSpec {
                vco_pn,
                ref_rj: self.noise.ref_rj_s,
                ripple,
                supply_noise_psd: self.noise.supply_noise_v_per_rthz,
                buffer_dcd: self.noise.buffer_dcd_s,
            },
            sim: SimControl {
                duration: self.sim.duration_s,
                seed: self.sim.seed,
                sample_interval: self.sim.sample_interval_s,
                record_edges,
                initial_vctrl: self.sim.initial_vctrl_v.map(Volts),
            },
        })
    }
}
