//! Feedback, quadrature and output dividers.
//!
//! The feedback path divides the quadrature rail by `N·P+S` (pulse swallow)
//! and then by two, so the recovered clock CLK has an exact 50% duty cycle.
//! The output dividers are cascades of selectable stages with a bypass
//! (divide-by-1) mode in each stage.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edges::{EdgeEvent, Polarity, Signal};

pub const P_RANGE: (u32, u32) = (1, 63);
pub const S_RANGE: (u32, u32) = (0, 15);
pub const MAX_OUTPUT_RATIO: u32 = 160;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DividerError {
    #[error("P = {0} out of range 1-63")]
    POutOfRange(u32),
    #[error("S = {0} out of range 0-15")]
    SOutOfRange(u32),
    #[error("S = {s} exceeds P = {p}; the swallow counter would stall")]
    SwallowExceedsProgram { p: u32, s: u32 },
    #[error("prescaler modulus N = {0} must be 2")]
    BadPrescaler(u32),
    #[error("expected {expected} stage selections, got {got}")]
    StageCount { expected: usize, got: usize },
    #[error("stage {stage}: ratio {ratio} is not in {allowed:?}")]
    StageSelection {
        stage: usize,
        ratio: u32,
        allowed: Vec<u32>,
    },
    #[error("total output ratio {0} outside 1-160")]
    TotalRatio(u32),
    #[error("ratio {0} is not achievable with the configured stages")]
    Unachievable(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackDividerConfig {
    pub n: u32,
    pub p: u32,
    pub s: u32,
}

impl Default for FeedbackDividerConfig {
    fn default() -> Self {
        Self { n: 2, p: 18, s: 0 }
    }
}

impl FeedbackDividerConfig {
    pub fn validate(&self) -> Result<(), DividerError> {
        if self.n != 2 {
            return Err(DividerError::BadPrescaler(self.n));
        }
        if !(P_RANGE.0..=P_RANGE.1).contains(&self.p) {
            return Err(DividerError::POutOfRange(self.p));
        }
        if self.s > S_RANGE.1 {
            return Err(DividerError::SOutOfRange(self.s));
        }
        if self.s > self.p {
            return Err(DividerError::SwallowExceedsProgram { p: self.p, s: self.s });
        }
        Ok(())
    }

    /// `(p, s)` with `s` minimal, then `p` minimal, for a total ratio.
    pub fn for_ratio(np_plus_s: u32) -> Option<Self> {
        (S_RANGE.0..=S_RANGE.1).find_map(|s| {
            let rest = np_plus_s.checked_sub(s)?;
            if rest % 2 != 0 {
                return None;
            }
            let cfg = Self { n: 2, p: rest / 2, s };
            cfg.validate().ok().map(|_| cfg)
        })
    }
}

/// Total feedback division `n·p + s`.
pub fn fb_ratio(cfg: &FeedbackDividerConfig) -> Result<u32, DividerError> {
    cfg.validate()?;
    Ok(cfg.n * cfg.p + cfg.s)
}

/// Behavioral pulse-swallow counter: an `N/(N+1)` dual-modulus prescaler
/// clocked by the input, a program counter `P` and a swallow counter `S`,
/// both clocked by the prescaler output.
#[derive(Debug, Clone)]
pub struct PulseSwallowCounter {
    n: u32,
    p: u32,
    s: u32,
    prescaler: u32,
    program: u32,
    swallow: u32,
}

impl PulseSwallowCounter {
    pub fn new(cfg: &FeedbackDividerConfig) -> Self {
        Self {
            n: cfg.n,
            p: cfg.p,
            s: cfg.s,
            prescaler: 0,
            program: 0,
            swallow: 0,
        }
    }

    fn modulus(&self) -> u32 {
        if self.swallow < self.s {
            self.n + 1
        } else {
            self.n
        }
    }

    /// Clock one input edge; true when the divider emits an output pulse.
    pub fn clock(&mut self) -> bool {
        self.prescaler += 1;
        if self.prescaler < self.modulus() {
            return false;
        }
        self.prescaler = 0;
        self.program += 1;
        if self.swallow < self.s {
            self.swallow += 1;
        }
        if self.program == self.p {
            self.program = 0;
            self.swallow = 0;
            true
        } else {
            false
        }
    }
}

/// Arithmetic feedback divider plus the final divide-by-two.
///
/// Emits a DIV pulse on input rising edges 0, M, 2M, … (M = `n·p+s`) and
/// toggles CLK on each DIV pulse, so CLK rises on input edges 0, 2M, 4M, ….
#[derive(Debug, Clone)]
pub struct FeedbackDivider {
    modulus: u64,
    inputs: u64,
    div_count: u64,
    div_high: bool,
    clk_high: bool,
    clk_count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FeedbackOutput {
    pub div: Option<EdgeEvent>,
    pub clk: Option<EdgeEvent>,
}

impl FeedbackDivider {
    pub fn new(cfg: &FeedbackDividerConfig) -> Result<Self, DividerError> {
        Ok(Self::with_modulus(fb_ratio(cfg)?))
    }

    pub fn with_modulus(modulus: u32) -> Self {
        Self {
            modulus: u64::from(modulus.max(1)),
            inputs: 0,
            div_count: 0,
            div_high: false,
            clk_high: false,
            clk_count: 0,
        }
    }

    /// Feed one input edge; falling edges are ignored.
    pub fn feed(&mut self, edge: &EdgeEvent) -> FeedbackOutput {
        let mut out = FeedbackOutput::default();
        if edge.polarity != Polarity::Rising {
            return out;
        }
        let t = edge.t();
        if self.inputs.is_multiple_of(self.modulus) {
            out.div = Some(EdgeEvent::rising(Signal::Div, self.div_count, t));
            self.div_count += 1;
            self.div_high = true;
            out.clk = Some(if self.clk_high {
                self.clk_high = false;
                EdgeEvent::falling(Signal::Clk, self.clk_count - 1, t)
            } else {
                self.clk_high = true;
                self.clk_count += 1;
                EdgeEvent::rising(Signal::Clk, self.clk_count - 1, t)
            });
        } else if self.div_high {
            self.div_high = false;
            out.div = Some(EdgeEvent::falling(Signal::Div, self.div_count - 1, t));
        }
        self.inputs += 1;
        out
    }
}

/// Divide a whole edge stream: returns (DIV edges, CLK edges).
pub fn fb_divide(
    input: &[EdgeEvent],
    cfg: &FeedbackDividerConfig,
) -> Result<(Vec<EdgeEvent>, Vec<EdgeEvent>), DividerError> {
    let mut d = FeedbackDivider::new(cfg)?;
    let (mut div, mut clk) = (Vec::new(), Vec::new());
    for e in input {
        let o = d.feed(e);
        div.extend(o.div);
        clk.extend(o.clk);
    }
    Ok((div, clk))
}

/// Divide-by-two producing in-phase (toggles on input rising edges) and
/// quadrature (toggles on input falling edges) rails.
#[derive(Debug, Clone, Default)]
pub struct QuadratureDivider {
    i_high: bool,
    q_high: bool,
    i_count: u64,
    q_count: u64,
}

impl QuadratureDivider {
    fn toggle(high: &mut bool, count: &mut u64, signal: Signal, t: f64) -> EdgeEvent {
        *high = !*high;
        if *high {
            *count += 1;
            EdgeEvent::rising(signal, *count - 1, t)
        } else {
            EdgeEvent::falling(signal, *count - 1, t)
        }
    }

    /// In-phase output edge caused by a VCO rising edge at `t`.
    pub fn on_rising(&mut self, t: f64) -> EdgeEvent {
        Self::toggle(&mut self.i_high, &mut self.i_count, Signal::Quad, t)
    }

    /// Quadrature output edge caused by a VCO falling edge at `t`. The Q
    /// rail has no signal name of its own; it is labelled QUAD as well.
    pub fn on_falling(&mut self, t: f64) -> EdgeEvent {
        Self::toggle(&mut self.q_high, &mut self.q_count, Signal::Quad, t)
    }
}

/// Divide a stream with both polarities into (I, Q) rails.
pub fn quad_divide(input: &[EdgeEvent]) -> (Vec<EdgeEvent>, Vec<EdgeEvent>) {
    let mut q = QuadratureDivider::default();
    let (mut is, mut qs) = (Vec::new(), Vec::new());
    for e in input {
        match e.polarity {
            Polarity::Rising => is.push(q.on_rising(e.t())),
            Polarity::Falling => qs.push(q.on_falling(e.t())),
        }
    }
    (is, qs)
}

/// Allowed ratios of each output-divider stage, first stage first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageSets(pub Vec<Vec<u32>>);

impl Default for StageSets {
    fn default() -> Self {
        Self(vec![vec![1, 5], vec![1, 2, 3, 4], vec![1, 2], vec![1, 2], vec![1, 2]])
    }
}

impl StageSets {
    /// Every stage-selection tuple, in lexicographic order of set indices.
    pub fn combinations(&self) -> Vec<Vec<u32>> {
        self.0.iter().fold(vec![Vec::new()], |acc, set| {
            acc.into_iter()
                .flat_map(|prefix| {
                    set.iter().map(move |&r| {
                        let mut v = prefix.clone();
                        v.push(r);
                        v
                    })
                })
                .collect()
        })
    }

    /// Stage selection realizing `ratio`, preferring larger ratios in the
    /// earlier stages.
    pub fn decompose(&self, ratio: u32) -> Option<OutputDividerConfig> {
        self.combinations()
            .into_iter()
            .filter(|c| c.iter().product::<u32>() == ratio)
            .max()
            .map(|stages| OutputDividerConfig { stages })
    }
}

/// Sorted set of achievable total ratios.
pub fn outdiv_available_ratios(sets: &StageSets) -> BTreeSet<u32> {
    sets.combinations()
        .iter()
        .map(|c| c.iter().product::<u32>())
        .filter(|&r| (1..=MAX_OUTPUT_RATIO).contains(&r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDividerConfig {
    pub stages: Vec<u32>,
}

impl OutputDividerConfig {
    pub fn bypass(n_stages: usize) -> Self {
        Self {
            stages: vec![1; n_stages],
        }
    }

    pub fn ratio(&self) -> u32 {
        self.stages.iter().product()
    }

    pub fn validate(&self, sets: &StageSets) -> Result<(), DividerError> {
        if self.stages.len() != sets.0.len() {
            return Err(DividerError::StageCount {
                expected: sets.0.len(),
                got: self.stages.len(),
            });
        }
        for (i, (&r, allowed)) in self.stages.iter().zip(&sets.0).enumerate() {
            if !allowed.contains(&r) {
                return Err(DividerError::StageSelection {
                    stage: i,
                    ratio: r,
                    allowed: allowed.clone(),
                });
            }
        }
        let total = self.ratio();
        if !(1..=MAX_OUTPUT_RATIO).contains(&total) {
            return Err(DividerError::TotalRatio(total));
        }
        Ok(())
    }
}

/// Per-stage counter and output level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageState {
    pub ratio: u32,
    pub count: u32,
    pub high: bool,
}

/// Streaming cascade of output-divider stages.
///
/// Each stage counts input transitions of either polarity and toggles its
/// output every `ratio` transitions. On a 50% duty input this divides by
/// `ratio` with 50% output duty for odd and even ratios alike; a ratio-1
/// stage passes transitions through unchanged.
#[derive(Debug, Clone)]
pub struct OutputDivider {
    pub signal: Signal,
    pub stages: Vec<StageState>,
    rising_count: u64,
}

impl OutputDivider {
    pub fn new(cfg: &OutputDividerConfig, signal: Signal) -> Self {
        Self {
            signal,
            stages: cfg
                .stages
                .iter()
                .map(|&ratio| StageState {
                    ratio,
                    ..Default::default()
                })
                .collect(),
            rising_count: 0,
        }
    }

    /// Feed one input transition; returns the output transition it causes.
    pub fn feed(&mut self, edge: &EdgeEvent) -> Option<EdgeEvent> {
        let mut level = edge.polarity == Polarity::Rising;
        for st in &mut self.stages {
            if st.ratio == 1 {
                continue;
            }
            let fire = st.count == 0;
            st.count = (st.count + 1) % st.ratio;
            if !fire {
                return None;
            }
            st.high = !st.high;
            level = st.high;
        }
        let t = edge.t();
        Some(if level {
            self.rising_count += 1;
            EdgeEvent::rising(self.signal, self.rising_count - 1, t)
        } else {
            EdgeEvent::falling(self.signal, self.rising_count.saturating_sub(1), t)
        })
    }
}

/// Divide a whole edge stream (both polarities) by the configured cascade.
pub fn outdiv_divide(input: &[EdgeEvent], cfg: &OutputDividerConfig, signal: Signal) -> Vec<EdgeEvent> {
    let mut d = OutputDivider::new(cfg, signal);
    input.iter().filter_map(|e| d.feed(e)).collect()
}

/// Ideal 50%-duty clock with `cycles` periods starting at `t0`.
pub fn uniform_clock(signal: Signal, period: f64, cycles: usize, t0: f64) -> Vec<EdgeEvent> {
    (0..cycles)
        .flat_map(|k| {
            let t = t0 + k as f64 * period;
            [
                EdgeEvent::rising(signal, k as u64, t),
                EdgeEvent::falling(signal, k as u64, t + period / 2.0),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: u32, s: u32) -> FeedbackDividerConfig {
        FeedbackDividerConfig { n: 2, p, s }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(fb_ratio(&cfg(24, 0)).unwrap(), 48);
        assert_eq!(fb_ratio(&cfg(63, 15)).unwrap(), 141);
        assert_eq!(fb_ratio(&cfg(1, 0)).unwrap(), 2);
    }

    #[test]
    fn ratio_errors() {
        assert_eq!(fb_ratio(&cfg(0, 0)), Err(DividerError::POutOfRange(0)));
        assert_eq!(fb_ratio(&cfg(64, 0)), Err(DividerError::POutOfRange(64)));
        assert_eq!(fb_ratio(&cfg(20, 16)), Err(DividerError::SOutOfRange(16)));
        assert!(matches!(
            fb_ratio(&cfg(3, 5)),
            Err(DividerError::SwallowExceedsProgram { .. })
        ));
    }

    #[test]
    fn pulse_swallow_matches_formula_on_sample() {
        for (p, s) in [(1, 0), (1, 1), (24, 0), (17, 9), (63, 15)] {
            let mut c = PulseSwallowCounter::new(&cfg(p, s));
            let m = 2 * p + s;
            let mut outs = vec![];
            for k in 0..(5 * m) {
                if c.clock() {
                    outs.push(k);
                }
            }
            let gaps: Vec<u32> = outs.windows(2).map(|w| w[1] - w[0]).collect();
            assert!(gaps.iter().all(|&g| g == m), "p={p} s={s} gaps={gaps:?}");
        }
    }

    #[test]
    fn for_ratio_prefers_small_s() {
        assert_eq!(FeedbackDividerConfig::for_ratio(48), Some(cfg(24, 0)));
        assert_eq!(FeedbackDividerConfig::for_ratio(47), Some(cfg(23, 1)));
        assert_eq!(FeedbackDividerConfig::for_ratio(141), Some(cfg(63, 15)));
        assert_eq!(FeedbackDividerConfig::for_ratio(142), None);
        assert_eq!(FeedbackDividerConfig::for_ratio(1), None);
    }

    #[test]
    fn fb_divide_counts() {
        let input = uniform_clock(Signal::Quad, 1.0, 96, 0.0);
        let (div, clk) = fb_divide(&input, &cfg(24, 0)).unwrap();
        let div_r: Vec<_> = div.iter().filter(|e| e.is_rising()).collect();
        assert_eq!(div_r.len(), 2);
        let clk_r = clk.iter().filter(|e| e.is_rising()).count();
        let clk_f = clk.iter().filter(|e| !e.is_rising()).count();
        assert_eq!((clk_r, clk_f), (1, 1));
        // CLK period spans 2·48 input periods with 50% duty.
        let input = uniform_clock(Signal::Quad, 1.0, 400, 0.0);
        let (_, clk) = fb_divide(&input, &cfg(1, 0)).unwrap();
        let rises: Vec<f64> = clk.iter().filter(|e| e.is_rising()).map(|e| e.t()).collect();
        assert!(rises.windows(2).all(|w| w[1] - w[0] == 4.0));
    }

    #[test]
    fn clk_edges_pass_input_times() {
        let mut rs = crate::rng::random_stream(5, "t");
        let mut t = 0.0;
        let input: Vec<EdgeEvent> = (0..2000)
            .map(|k| {
                t += 1.0 + 0.1 * rs.gaussian();
                EdgeEvent::rising(Signal::Quad, k, t)
            })
            .collect();
        let m = 37;
        let (_, clk) = fb_divide(&input, &cfg(13, 11)).unwrap();
        for (k, e) in clk.iter().filter(|e| e.is_rising()).enumerate() {
            assert_eq!(e.t(), input[2 * k * m as usize].t());
        }
    }

    #[test]
    fn available_ratios() {
        let r = outdiv_available_ratios(&StageSets::default());
        for x in [1, 2, 8, 160, 6, 12, 15, 24, 30] {
            assert!(r.contains(&x), "missing {x}");
        }
        assert_eq!(*r.iter().max().unwrap(), 160);
        for x in [4, 6, 8, 10, 12, 15, 16, 20, 24, 30] {
            assert!(r.contains(&x));
        }
    }

    #[test]
    fn decompose_round_trips() {
        let sets = StageSets::default();
        for r in outdiv_available_ratios(&sets) {
            let c = sets.decompose(r).unwrap();
            assert_eq!(c.ratio(), r);
            c.validate(&sets).unwrap();
        }
        assert!(sets.decompose(7).is_none());
    }

    #[test]
    fn bypass_is_identity() {
        let input = uniform_clock(Signal::Quad, 0.26e-9, 50, 0.0);
        let out = outdiv_divide(&input, &OutputDividerConfig::bypass(5), Signal::Quad);
        assert_eq!(out, input);
    }

    #[test]
    fn ratio_8_on_3_84_ghz() {
        let period = 1.0 / 3.84e9;
        let input = uniform_clock(Signal::Quad, period, 8 * 100, 0.0);
        let c = StageSets::default().decompose(8).unwrap();
        let out = outdiv_divide(&input, &c, Signal::OutA);
        let rises: Vec<f64> = out.iter().filter(|e| e.is_rising()).map(|e| e.t()).collect();
        let f = (rises.len() - 1) as f64 / (rises.last().unwrap() - rises[0]);
        assert!((f / 480e6 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn odd_ratios_keep_half_duty() {
        let input = uniform_clock(Signal::Quad, 1.0, 300, 0.0);
        for r in [3, 5, 15] {
            let c = StageSets::default().decompose(r).unwrap();
            let out = outdiv_divide(&input, &c, Signal::OutA);
            for w in out.windows(2) {
                assert!((w[1].t() - w[0].t() - r as f64 / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadrature_offset_is_quarter_period() {
        let input = uniform_clock(Signal::Vco, 1.0, 100, 0.0);
        let (i, q) = quad_divide(&input);
        let ir: Vec<f64> = i.iter().filter(|e| e.is_rising()).map(|e| e.t()).collect();
        let qr: Vec<f64> = q.iter().filter(|e| e.is_rising()).map(|e| e.t()).collect();
        assert!(ir.windows(2).all(|w| w[1] - w[0] == 2.0));
        for (a, b) in ir.iter().zip(&qr) {
            assert_eq!(b - a, 0.5);
        }
    }
}
