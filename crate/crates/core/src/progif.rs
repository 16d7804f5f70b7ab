//! Frequency planner and two-wire register map.
//!
//! Register map (8-bit registers):
//!
//! | addr | field                                   | access |
//! |------|-----------------------------------------|--------|
//! | 0x00 | P[5:0]                                  | RW     |
//! | 0x01 | S[3:0]                                  | RW     |
//! | 0x02 | band[3:0], auto_band at bit 4           | RW     |
//! | 0x03 | OUT_A stage code                        | RW     |
//! | 0x04 | OUT_B stage code                        | RW     |
//! | 0x05 | cp_dac[4:0]                             | RW     |
//! | 0x06 | vco_bias_dac[4:0]                       | RW     |
//! | 0x07 | status, bit 0 = LOCK                    | RO     |
//!
//! A stage code packs the index of each stage's selected ratio within its
//! allowed set, first stage in the least significant bits, each stage taking
//! `ceil(log2(set size))` bits.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PllConfig;
use crate::design::{design_loop_filter, FilterDesignSpec};
use crate::dividers::{outdiv_available_ratios, FeedbackDividerConfig, OutputDividerConfig, StageSets};
use crate::engine::{simulate, SimError, SimSummary};
use crate::units::{Amperes, Hertz};
use crate::vco::{band_search, VcoParams};

pub const REGMAP_SCHEMA: &str = "pllsynth-regmap/1";
pub const REG_COUNT: usize = 8;
pub const ADDR_P: u8 = 0x00;
pub const ADDR_S: u8 = 0x01;
pub const ADDR_BAND: u8 = 0x02;
pub const ADDR_OUTDIV_A: u8 = 0x03;
pub const ADDR_OUTDIV_B: u8 = 0x04;
pub const ADDR_CP_DAC: u8 = 0x05;
pub const ADDR_VCO_BIAS: u8 = 0x06;
pub const ADDR_STATUS: u8 = 0x07;
pub const AUTO_BAND_BIT: u8 = 1 << 4;
/// Charge-pump current per DAC code.
pub const CP_DAC_LSB: f64 = 0.625e-6;

const WRITE_MASK: [u8; REG_COUNT] = [0x3F, 0x0F, 0x1F, 0xFF, 0xFF, 0x1F, 0x1F, 0x00];

/// Relative error below which an output counts as exact.
const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{field} value {value} exceeds field width (max {max})")]
    FieldWidth { field: &'static str, value: u32, max: u32 },
    #[error("unmapped address 0x{0:02X}")]
    UnmappedAddress(u8),
    #[error("cannot decode register file: {0}")]
    Decode(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub f_ref: Hertz,
    pub f_out_a: Hertz,
    pub f_out_b: Option<Hertz>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub f_ref: f64,
    pub np_plus_s: u32,
    pub p: u32,
    pub s: u32,
    pub f_vco: f64,
    pub band_hint: u32,
    pub outdiv_a: OutputDividerConfig,
    pub outdiv_b: OutputDividerConfig,
    pub f_out_a: f64,
    pub f_out_b: f64,
    pub exact: bool,
    pub error_ppm_a: f64,
    pub error_ppm_b: Option<f64>,
}

/// Best achievable output ratio for one target: `(ratio, |relative error|)`.
fn best_ratio(f_quad: f64, target: f64, ratios: &[u32]) -> (u32, f64) {
    ratios
        .iter()
        .map(|&r| (r, (f_quad / r as f64 / target - 1.0).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("ratio set is never empty")
}

/// Exhaustive search over feedback ratios and output ratios.
///
/// Ranking: exact plans first, then the smallest worst-case error, then
/// the VCO frequency closest to mid-range.
pub fn plan(req: &PlanRequest, vco: &VcoParams, sets: &StageSets) -> Result<Plan, ProgError> {
    let f_ref = req.f_ref.0;
    let targets: Vec<f64> = std::iter::once(req.f_out_a.0).chain(req.f_out_b.map(|f| f.0)).collect();
    if !(f_ref.is_finite() && f_ref > 0.0) || targets.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(ProgError::InvalidRequest("frequencies must be positive".into()));
    }
    let f_lo = vco.f_min.0;
    let f_hi = vco.f_max.0;
    if let Some(f) = targets.iter().find(|f| **f > f_hi / 2.0) {
        return Err(ProgError::InvalidRequest(format!(
            "output {f} Hz above the quadrature rail bound {} Hz",
            f_hi / 2.0
        )));
    }
    let ratios: Vec<u32> = outdiv_available_ratios(sets).into_iter().collect();
    let m_lo = (f_lo / (4.0 * f_ref)).ceil() as u32;
    let m_hi = (f_hi / (4.0 * f_ref)).floor() as u32;
    let mid = 0.5 * (f_lo + f_hi);

    let mut best: Option<(bool, f64, f64, Plan)> = None;
    for m in m_lo.max(1)..=m_hi {
        let Some(fb) = FeedbackDividerConfig::for_ratio(m) else {
            continue;
        };
        let f_vco = 4.0 * f_ref * m as f64;
        let f_quad = f_vco / 2.0;
        let picks: Vec<(u32, f64)> = targets.iter().map(|t| best_ratio(f_quad, *t, &ratios)).collect();
        let worst = picks.iter().map(|p| p.1).fold(0.0, f64::max);
        let exact = worst <= EXACT_TOL;
        let dist = (f_vco - mid).abs();
        let better = match &best {
            None => true,
            Some((e, w, d, _)) => {
                if exact != *e {
                    exact
                } else if exact {
                    dist < *d
                } else if worst != *w {
                    worst < *w
                } else {
                    dist < *d
                }
            }
        };
        if !better {
            continue;
        }
        let Ok(band_hint) = band_search(Hertz(f_vco), vco) else {
            continue;
        };
        let decomp = |r: u32| sets.decompose(r).expect("ratio taken from the achievable set");
        let (ra, ea) = picks[0];
        let (rb, eb) = picks.get(1).copied().unwrap_or((ra, ea));
        let plan = Plan {
            f_ref,
            np_plus_s: m,
            p: fb.p,
            s: fb.s,
            f_vco,
            band_hint,
            outdiv_a: decomp(ra),
            outdiv_b: decomp(rb),
            f_out_a: f_quad / ra as f64,
            f_out_b: f_quad / rb as f64,
            exact,
            error_ppm_a: ea * 1e6,
            error_ppm_b: req.f_out_b.map(|_| eb * 1e6),
        };
        best = Some((exact, worst, dist, plan));
    }
    best.map(|b| b.3).ok_or_else(|| {
        ProgError::Infeasible(format!(
            "no feedback ratio puts 4 x {f_ref} Hz x (NP+S) inside [{f_lo}, {f_hi}] Hz"
        ))
    })
}

/// Turn a plan into a simulation config based on `base`. The loop filter
/// is redesigned for the new division ratio.
pub fn plan_config(plan: &Plan, base: &PllConfig) -> Result<PllConfig, ProgError> {
    let mut cfg = base.clone();
    cfg.f_ref = Hertz(plan.f_ref);
    cfg.fbdiv = FeedbackDividerConfig {
        n: 2,
        p: plan.p,
        s: plan.s,
    };
    cfg.outdiv_a = plan.outdiv_a.clone();
    cfg.outdiv_b = plan.outdiv_b.clone();
    cfg.vco.band = None;
    let spec = FilterDesignSpec {
        i_cp: cfg.cp.i_cp,
        kvco: cfg.vco.kvco,
        n_total: cfg.n_total(),
        f_c: Hertz(FilterDesignSpec::default().f_c.0.min(plan.f_ref / 10.0)),
        ..FilterDesignSpec::default()
    };
    cfg.filter = design_loop_filter(&spec).map_err(|e| ProgError::Infeasible(e.to_string()))?;
    Ok(cfg)
}

/// Everything the register file holds apart from status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramFields {
    pub p: u32,
    pub s: u32,
    pub band: u32,
    pub auto_band: bool,
    pub outdiv_a: OutputDividerConfig,
    pub outdiv_b: OutputDividerConfig,
    pub cp_dac: u32,
    pub vco_bias_dac: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Biases {
    pub cp_dac: u32,
    pub vco_bias_dac: u32,
    pub auto_band: bool,
}

impl Default for Biases {
    fn default() -> Self {
        Self {
            cp_dac: 16,
            vco_bias_dac: 16,
            auto_band: true,
        }
    }
}

impl ProgramFields {
    pub fn from_plan(plan: &Plan, biases: &Biases) -> Self {
        Self {
            p: plan.p,
            s: plan.s,
            band: plan.band_hint,
            auto_band: biases.auto_band,
            outdiv_a: plan.outdiv_a.clone(),
            outdiv_b: plan.outdiv_b.clone(),
            cp_dac: biases.cp_dac,
            vco_bias_dac: biases.vco_bias_dac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub addr: u8,
    pub value: u8,
}

impl fmt::Display for Transaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02X}={:02X}", self.addr, self.value)
    }
}

impl std::str::FromStr for Transaction {
    type Err = ProgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ProgError::Decode(format!("expected AA=VV, got {s:?}"));
        let (a, v) = s.trim().split_once('=').ok_or_else(bad)?;
        Ok(Self {
            addr: u8::from_str_radix(a.trim(), 16).map_err(|_| bad())?,
            value: u8::from_str_radix(v.trim(), 16).map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegisterFile {
    pub regs: [u8; REG_COUNT],
}

impl RegisterFile {
    /// Masked write; reserved bits and the status register are ignored.
    pub fn write(&mut self, addr: u8, value: u8) -> Result<(), ProgError> {
        let mask = *WRITE_MASK.get(addr as usize).ok_or(ProgError::UnmappedAddress(addr))?;
        if mask != 0 {
            self.regs[addr as usize] = value & mask;
        }
        Ok(())
    }

    pub fn read(&self, addr: u8) -> Result<u8, ProgError> {
        self.regs
            .get(addr as usize)
            .copied()
            .ok_or(ProgError::UnmappedAddress(addr))
    }

    pub fn apply(&mut self, txs: &[Transaction]) -> Result<(), ProgError> {
        txs.iter().try_for_each(|t| self.write(t.addr, t.value))
    }

    /// Hex text, one `AA=VV` per line, with a schema header.
    pub fn to_hex(txs: &[Transaction]) -> String {
        let mut s = format!("# {REGMAP_SCHEMA}\n");
        for t in txs {
            s.push_str(&t.to_string());
            s.push('\n');
        }
        s
    }

    pub fn parse_hex(text: &str) -> Result<Vec<Transaction>, ProgError> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect()
    }
}

fn stage_widths(sets: &StageSets) -> Vec<u32> {
    sets.0
        .iter()
        .map(|s| usize::BITS - (s.len().max(1) - 1).leading_zeros())
        .collect()
}

fn encode_stages(cfg: &OutputDividerConfig, sets: &StageSets, field: &'static str) -> Result<u8, ProgError> {
    cfg.validate(sets)
        .map_err(|e| ProgError::InvalidRequest(format!("{field}: {e}")))?;
    let widths = stage_widths(sets);
    if widths.iter().sum::<u32>() > 8 {
        return Err(ProgError::InvalidRequest(
            "stage sets need more than 8 code bits".into(),
        ));
    }
    let mut code = 0u32;
    let mut shift = 0;
    for ((r, set), w) in cfg.stages.iter().zip(&sets.0).zip(&widths) {
        let idx = set.iter().position(|x| x == r).expect("validated") as u32;
        code |= idx << shift;
        shift += w;
    }
    Ok(code as u8)
}

fn decode_stages(code: u8, sets: &StageSets) -> Result<OutputDividerConfig, ProgError> {
    let mut stages = Vec::with_capacity(sets.0.len());
    let mut shift = 0;
    for (set, w) in sets.0.iter().zip(stage_widths(sets)) {
        let idx = ((code as u32) >> shift) & ((1 << w) - 1);
        let r = set
            .get(idx as usize)
            .ok_or_else(|| ProgError::Decode(format!("stage code 0x{code:02X} selects index {idx}")))?;
        stages.push(*r);
        shift += w;
    }
    if (code as u32) >> shift != 0 {
        return Err(ProgError::Decode(format!("stage code 0x{code:02X} sets unused bits")));
    }
    Ok(OutputDividerConfig { stages })
}

fn width_check(field: &'static str, value: u32, bits: u32) -> Result<u8, ProgError> {
    let max = (1 << bits) - 1;
    if value > max {
        return Err(ProgError::FieldWidth { field, value, max });
    }
    Ok(value as u8)
}

/// Pack fields into registers and the ascending write list.
pub fn encode_fields(f: &ProgramFields, sets: &StageSets) -> Result<(RegisterFile, Vec<Transaction>), ProgError> {
    let values = [
        width_check("P", f.p, 6)?,
        width_check("S", f.s, 4)?,
        width_check("band", f.band, 4)? | if f.auto_band { AUTO_BAND_BIT } else { 0 },
        encode_stages(&f.outdiv_a, sets, "outdiv_a")?,
        encode_stages(&f.outdiv_b, sets, "outdiv_b")?,
        width_check("cp_dac", f.cp_dac, 5)?,
        width_check("vco_bias_dac", f.vco_bias_dac, 5)?,
    ];
    let mut rf = RegisterFile::default();
    let txs: Vec<Transaction> = values
        .iter()
        .enumerate()
        .map(|(a, v)| Transaction {
            addr: a as u8,
            value: *v,
        })
        .collect();
    rf.apply(&txs)?;
    Ok((rf, txs))
}

pub fn encode(plan: &Plan, biases: &Biases, sets: &StageSets) -> Result<(RegisterFile, Vec<Transaction>), ProgError> {
    encode_fields(&ProgramFields::from_plan(plan, biases), sets)
}

pub fn decode(rf: &RegisterFile, sets: &StageSets) -> Result<ProgramFields, ProgError> {
    let r = &rf.regs;
    Ok(ProgramFields {
        p: r[ADDR_P as usize] as u32,
        s: r[ADDR_S as usize] as u32,
        band: (r[ADDR_BAND as usize] & 0x0F) as u32,
        auto_band: r[ADDR_BAND as usize] & AUTO_BAND_BIT != 0,
        outdiv_a: decode_stages(r[ADDR_OUTDIV_A as usize], sets)?,
        outdiv_b: decode_stages(r[ADDR_OUTDIV_B as usize], sets)?,
        cp_dac: r[ADDR_CP_DAC as usize] as u32,
        vco_bias_dac: r[ADDR_VCO_BIAS as usize] as u32,
    })
}

/// Register file attached to a behavioral model of the synthesizer.
#[derive(Debug, Clone)]
pub struct Device {
    pub regs: RegisterFile,
    pub base: PllConfig,
    lock: Option<bool>,
}

impl Device {
    pub fn new(base: PllConfig) -> Self {
        Self {
            regs: RegisterFile::default(),
            base,
            lock: None,
        }
    }

    pub fn write(&mut self, addr: u8, value: u8) -> Result<(), ProgError> {
        self.regs.write(addr, value)
    }

    /// Status reads reflect the last attached simulation, else 0.
    pub fn read(&self, addr: u8) -> Result<u8, ProgError> {
        if addr == ADDR_STATUS {
            return Ok(self.lock.map_or(0, u8::from));
        }
        self.regs.read(addr)
    }

    pub fn attach(&mut self, summary: &SimSummary) {
        self.lock = Some(summary.locked_at_end);
    }

    pub fn detach(&mut self) {
        self.lock = None;
    }

    /// Configuration implied by the current register contents.
    pub fn config(&self) -> Result<PllConfig, ProgError> {
        let f = decode(&self.regs, &self.base.outdiv_stages)?;
        let mut cfg = self.base.clone();
        cfg.fbdiv = FeedbackDividerConfig { n: 2, p: f.p, s: f.s };
        cfg.vco.band = (!f.auto_band).then_some(f.band);
        cfg.outdiv_a = f.outdiv_a;
        cfg.outdiv_b = f.outdiv_b;
        cfg.cp.i_cp = Amperes(f.cp_dac as f64 * CP_DAC_LSB);
        Ok(cfg)
    }

    /// Simulate the programmed configuration and attach the result.
    pub fn run(&mut self) -> Result<SimSummary, ProgError> {
        let trace = simulate(&self.config()?)?;
        let s = trace.summary().clone();
        self.attach(&s);
        Ok(s)
    }
}
