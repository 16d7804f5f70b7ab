//! Event-driven closed-loop simulator.
//!
//! The loop advances from event to event: the next REF edge, the next VCO
//! rising edge, a pending PFD reset, or the next waveform sample. Between
//! events the charge-pump current is constant and the loop filter is
//! advanced with its exact solution. The VCO period is fixed at the start of
//! each cycle from the control voltage and supply deviation at that instant.
//!
//! Signal flow: VCO → quadrature ÷2 → { feedback ÷(N·P+S) → ÷2 → CLK → PFD,
//! I rail → OUT_A divider, Q rail → OUT_B divider }.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{validate_config, PllConfig, Violation};
use crate::dividers::{FeedbackDivider, OutputDivider, QuadratureDivider};
use crate::edges::{EdgeEvent, EdgeSink, EdgeStream, NullSink, Polarity, Signal};
use crate::lockdet::{lockdet_advance, LockDetectorState};
use crate::loop_blocks::{cp_current, filter_advance, pfd_step, FilterState, PfdInput, PfdState, PfdTransitions};
use crate::noise::{sigma_from_pn, SupplyWaveform};
use crate::rng::{labels, random_stream, RandomStream};
use crate::units::{Seconds, Volts};
use crate::vco::{band_search, vco_next_edge, VcoError, VcoState};

/// Consecutive reference cycles with the control node on a rail before the
/// run is abandoned.
pub const RAIL_PIN_LIMIT: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Violation>),
    #[error("band search failed: {0}")]
    BandSearch(VcoError),
    #[error("VCO failure: {0}")]
    Vco(VcoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformSample {
    pub t: f64,
    pub v_ctrl: f64,
    pub v_x: f64,
    pub band: u32,
    pub supply_dev: f64,
}

/// Loop state observed at each reference edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefCycleSample {
    pub t: f64,
    /// VCO frequency of the cycle in progress relative to the lock target.
    pub freq_error: f64,
    pub v_ctrl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    /// First assertion of the lock detector.
    pub lock_time: Option<f64>,
    /// Mean VCO frequency over the last 100 reference cycles, relative to
    /// the lock target.
    pub final_freq_error: f64,
    /// Mean control voltage over the second half of the run.
    pub mean_vctrl: f64,
    pub locked_at_end: bool,
    pub band: u32,
    pub f_target_vco: f64,
    pub rail_clamp_events: u64,
    pub end_time: f64,
    /// Set when the run was abandoned.
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimTrace {
    pub edges: BTreeMap<Signal, EdgeStream>,
    pub waveforms: Vec<WaveformSample>,
    pub ref_cycles: Vec<RefCycleSample>,
    pub summary: Option<SimSummary>,
}

impl SimTrace {
    pub fn edges_of(&self, s: Signal) -> &[EdgeEvent] {
        self.edges.get(&s).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn summary(&self) -> &SimSummary {
        self.summary.as_ref().expect("completed trace has a summary")
    }
}

/// Full closed-loop state.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub pfd: PfdState,
    pub filter: FilterState,
    pub vco: VcoState,
    pub lockdet: LockDetectorState,
    pub now: f64,
}

struct Recorder<'s> {
    record: [bool; 10],
    edges: BTreeMap<Signal, EdgeStream>,
    sink: &'s mut dyn EdgeSink,
}

impl<'s> Recorder<'s> {
    fn new(cfg: &PllConfig, sink: &'s mut dyn EdgeSink) -> Self {
        let mut record = [false; 10];
        for s in &cfg.sim.record_edges {
            record[*s as usize] = true;
        }
        Self {
            record,
            edges: BTreeMap::new(),
            sink,
        }
    }

    #[inline]
    fn emit(&mut self, e: EdgeEvent) {
        if self.record[e.signal as usize] {
            self.edges.entry(e.signal).or_default().push(e);
        }
        self.sink.on_edge(&e);
    }
}

fn band_for(cfg: &PllConfig) -> Result<u32, SimError> {
    match cfg.vco.band {
        Some(b) => Ok(b),
        None => band_search(crate::units::Hertz(cfg.target_vco()), &cfg.vco).map_err(SimError::BandSearch),
    }
}

fn check(cfg: &PllConfig) -> Result<(), SimError> {
    let v = validate_config(cfg);
    if v.is_empty() {
        Ok(())
    } else {
        Err(SimError::InvalidConfig(v))
    }
}

/// Per-cycle VCO jitter source.
struct VcoJitter {
    sigma: f64,
    stream: RandomStream,
}

impl VcoJitter {
    fn new(cfg: &PllConfig) -> Option<Self> {
        let pn = cfg.noise.vco_pn?;
        let sigma = sigma_from_pn(pn.level, pn.offset, crate::units::Hertz(cfg.target_vco())).ok()?;
        Some(Self {
            sigma: sigma.0,
            stream: random_stream(cfg.sim.seed, labels::VCO_JITTER),
        })
    }

    #[inline]
    fn sample(&mut self) -> f64 {
        self.sigma * self.stream.gaussian()
    }
}

/// VCO plus everything downstream of it that does not feed back.
struct VcoChain {
    vco: VcoState,
    jitter: Option<VcoJitter>,
    supply: SupplyWaveform,
    supply_rate: f64,
    last_supply: f64,
    quad: QuadratureDivider,
    out_a: OutputDivider,
    out_b: OutputDivider,
    dcd: f64,
    /// Frequency of the cycle in progress, without jitter.
    f_now: f64,
}

impl VcoChain {
    fn new(cfg: &PllConfig, band: u32) -> Self {
        Self {
            vco: VcoState::new(band),
            jitter: VcoJitter::new(cfg),
            supply: SupplyWaveform::new(&cfg.noise, random_stream(cfg.sim.seed, labels::SUPPLY_NOISE)),
            supply_rate: cfg.target_vco(),
            last_supply: 0.0,
            quad: QuadratureDivider::default(),
            out_a: OutputDivider::new(&cfg.outdiv_a, Signal::OutA),
            out_b: OutputDivider::new(&cfg.outdiv_b, Signal::OutB),
            dcd: cfg.noise.buffer_dcd.0,
            f_now: cfg.target_vco(),
        }
    }

    fn next_edge_time(&self) -> f64 {
        self.vco.last_update.0
    }

    fn buffered(&self, e: EdgeEvent) -> EdgeEvent {
        if e.polarity == Polarity::Falling && self.dcd != 0.0 {
            EdgeEvent {
                time: Seconds(e.t() + self.dcd),
                ..e
            }
        } else {
            e
        }
    }

    /// Fire the pending VCO rising edge, schedule the next one, and push
    /// the resulting edges through the open-loop dividers. Returns the
    /// in-phase quadrature edge so the caller can feed the loop.
    fn fire(
        &mut self,
        v_ctrl: f64,
        params: &crate::vco::VcoParams,
        rec: &mut Recorder<'_>,
    ) -> Result<EdgeEvent, SimError> {
        let t = self.vco.last_update.0;
        let index = self.vco.cycles();
        rec.emit(EdgeEvent::rising(Signal::Vco, index, t));

        let dev = if self.supply.is_active() {
            self.supply.sample(t, self.supply_rate).0
        } else {
            0.0
        };
        self.last_supply = dev;
        let jitter = self.jitter.as_mut().map_or(0.0, VcoJitter::sample);
        let (next, _) =
            vco_next_edge(self.vco, Volts(v_ctrl), Volts(dev), params, Seconds(jitter)).map_err(SimError::Vco)?;
        let period = next.last_update.0 - t;
        self.f_now = crate::vco::vco_frequency(self.vco.band, Volts(v_ctrl), Volts(dev), params)
            .map_err(SimError::Vco)?
            .0;
        self.vco = next;

        let i_edge = self.quad.on_rising(t);
        rec.emit(i_edge);
        if let Some(o) = self.out_a.feed(&i_edge) {
            rec.emit(self.buffered(o));
        }
        let t_fall = t + 0.5 * period;
        rec.emit(EdgeEvent::falling(Signal::Vco, index, t_fall));
        let q_edge = self.quad.on_falling(t_fall);
        if let Some(o) = self.out_b.feed(&q_edge) {
            rec.emit(self.buffered(o));
        }
        Ok(i_edge)
    }
}

struct Counters {
    up: u64,
    dn: u64,
    lock: u64,
}

/// Run the closed loop for `cfg.sim.duration`.
pub fn simulate(cfg: &PllConfig) -> Result<SimTrace, SimError> {
    simulate_with(cfg, &mut NullSink)
}

/// Test stimulus applied on top of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stimulus {
    /// Every REF edge at or after `.0` is delayed by `.1` seconds.
    pub ref_phase_step: Option<(f64, f64)>,
}

/// Run the closed loop, streaming every edge into `sink` as it is produced.
pub fn simulate_with(cfg: &PllConfig, sink: &mut dyn EdgeSink) -> Result<SimTrace, SimError> {
    simulate_stimulated(cfg, &Stimulus::default(), sink)
}

pub fn simulate_stimulated(cfg: &PllConfig, stim: &Stimulus, sink: &mut dyn EdgeSink) -> Result<SimTrace, SimError> {
    check(cfg)?;
    let band = band_for(cfg)?;
    let target = cfg.target_vco();
    let duration = cfg.sim.duration.0;
    let vdd = cfg.vdd.0;
    let f_ref = cfg.f_ref.0;
    let t_ref = 1.0 / f_ref;

    let mut rec = Recorder::new(cfg, sink);
    let v0 = cfg.sim.initial_vctrl.map_or(cfg.vco.v_mid.0, |v| v.0);
    let mut st = LoopState {
        pfd: PfdState::default(),
        filter: FilterState::settled(v0),
        vco: VcoState::new(band),
        lockdet: LockDetectorState::default(),
        now: 0.0,
    };
    let mut chain = VcoChain::new(cfg, band);
    let mut fb = FeedbackDivider::new(&cfg.fbdiv).map_err(|e| {
        SimError::InvalidConfig(vec![Violation {
            field: "divider".into(),
            rule: e.to_string(),
        }])
    })?;
    let mut ref_jitter = random_stream(cfg.sim.seed, labels::REF_JITTER);
    let mut counters = Counters { up: 0, dn: 0, lock: 0 };
    let mut trace = SimTrace::default();

    let mut ref_k: u64 = 0;
    let mut next_ref = 0.0;
    let mut sample_k: u64 = 0;
    let sample_dt = cfg.sim.sample_interval.0;
    let mut lockdet_since = 0.0;
    let mut lock_time = None;
    let mut clamp_events = 0u64;
    let mut pinned = 0u64;
    let mut diagnostic = None;
    // (time, vco cycle index) at each REF edge, for the mean frequency
    let mut ref_marks: Vec<(f64, u64)> = Vec::new();

    // Bring the lock detector up to `t` with the PFD activity held.
    let advance_lockdet = |st: &mut LoopState,
                           since: &mut f64,
                           t: f64,
                           rec: &mut Recorder<'_>,
                           counters: &mut Counters,
                           lock_time: &mut Option<f64>| {
        if t <= *since {
            return;
        }
        let step = lockdet_advance(st.lockdet, st.pfd.up || st.pfd.dn, Seconds(t - *since), &cfg.lockdet);
        if let Some(dt) = step.toggled_at {
            let at = *since + dt;
            if step.state.locked {
                rec.emit(EdgeEvent::rising(Signal::Lock, counters.lock, at));
                counters.lock += 1;
                lock_time.get_or_insert(at);
            } else {
                rec.emit(EdgeEvent::falling(Signal::Lock, counters.lock.saturating_sub(1), at));
            }
        }
        st.lockdet = step.state;
        *since = t;
    };

    let emit_pfd = |tr: PfdTransitions, rec: &mut Recorder<'_>, counters: &mut Counters| {
        if let Some(p) = tr.up {
            if p == Polarity::Rising {
                rec.emit(EdgeEvent::rising(Signal::Up, counters.up, tr.time));
                counters.up += 1;
            } else {
                rec.emit(EdgeEvent::falling(Signal::Up, counters.up.saturating_sub(1), tr.time));
            }
        }
        if let Some(p) = tr.dn {
            if p == Polarity::Rising {
                rec.emit(EdgeEvent::rising(Signal::Dn, counters.dn, tr.time));
                counters.dn += 1;
            } else {
                rec.emit(EdgeEvent::falling(Signal::Dn, counters.dn.saturating_sub(1), tr.time));
            }
        }
    };

    loop {
        let t_reset = st.pfd.pending_reset_at.map_or(f64::INFINITY, |s| s.0);
        let t_vco = chain.next_edge_time();
        let t_sample = sample_k as f64 * sample_dt;
        let t = t_reset.min(next_ref).min(t_vco).min(t_sample);
        let t_end = t.min(duration);

        // analog advance to t_end
        if t_end > st.now {
            let i = cp_current(st.pfd.up, st.pfd.dn, &cfg.cp);
            st.filter = filter_advance(st.filter, i, Seconds(t_end - st.now), &cfg.filter);
            if st.filter.clamp(vdd) {
                clamp_events += 1;
            }
            st.now = t_end;
        }
        if t > duration {
            break;
        }

        if t == t_reset {
            advance_lockdet(&mut st, &mut lockdet_since, t, &mut rec, &mut counters, &mut lock_time);
            let (pfd, tr) = pfd_step(st.pfd, PfdInput::ResetExpiry(Seconds(t)), &cfg.pfd);
            st.pfd = pfd;
            emit_pfd(tr, &mut rec, &mut counters);
        } else if t == next_ref {
            let e = EdgeEvent::rising(Signal::Ref, ref_k, t);
            rec.emit(e);
            let (pfd, tr) = pfd_step(st.pfd, PfdInput::Edge(e), &cfg.pfd);
            if !tr.is_empty() {
                advance_lockdet(&mut st, &mut lockdet_since, t, &mut rec, &mut counters, &mut lock_time);
            }
            st.pfd = pfd;
            emit_pfd(tr, &mut rec, &mut counters);

            let v = st.filter.v_ctrl.0;
            trace.ref_cycles.push(RefCycleSample {
                t,
                freq_error: (chain.f_now - target) / target,
                v_ctrl: v,
            });
            ref_marks.push((chain.next_edge_time(), chain.vco.cycles()));
            if v <= 0.0 || v >= vdd {
                pinned += 1;
                if pinned > RAIL_PIN_LIMIT {
                    diagnostic = Some(format!(
                        "loop cannot lock in selected band {band}: control voltage pinned at {v} V for more than {RAIL_PIN_LIMIT} reference cycles"
                    ));
                    break;
                }
            } else {
                pinned = 0;
            }

            ref_k += 1;
            let jitter = if cfg.noise.ref_rj.0 > 0.0 {
                cfg.noise.ref_rj.0 * ref_jitter.gaussian()
            } else {
                0.0
            };
            let ideal = ref_k as f64 * t_ref;
            let step = match stim.ref_phase_step {
                Some((at, dt)) if ideal >= at => dt,
                _ => 0.0,
            };
            next_ref = ideal + jitter + step;
        } else if t == t_vco {
            let i_edge = chain.fire(st.filter.v_ctrl.0, &cfg.vco, &mut rec)?;
            st.vco = chain.vco;
            let out = fb.feed(&i_edge);
            if let Some(d) = out.div {
                rec.emit(d);
            }
            if let Some(c) = out.clk {
                rec.emit(c);
                if c.is_rising() {
                    let (pfd, tr) = pfd_step(st.pfd, PfdInput::Edge(c), &cfg.pfd);
                    if !tr.is_empty() {
                        advance_lockdet(&mut st, &mut lockdet_since, t, &mut rec, &mut counters, &mut lock_time);
                    }
                    st.pfd = pfd;
                    emit_pfd(tr, &mut rec, &mut counters);
                }
            }
        } else {
            advance_lockdet(&mut st, &mut lockdet_since, t, &mut rec, &mut counters, &mut lock_time);
            trace.waveforms.push(WaveformSample {
                t,
                v_ctrl: st.filter.v_ctrl.0,
                v_x: st.lockdet.v_x.0,
                band,
                supply_dev: chain.last_supply,
            });
            sample_k += 1;
        }
    }
    let end = st.now;
    advance_lockdet(
        &mut st,
        &mut lockdet_since,
        end,
        &mut rec,
        &mut counters,
        &mut lock_time,
    );

    let final_freq_error = mean_freq_error(&ref_marks, target);
    let half = trace.ref_cycles.len() / 2;
    let tail = &trace.ref_cycles[half..];
    let mean_vctrl = if tail.is_empty() {
        st.filter.v_ctrl.0
    } else {
        tail.iter().map(|r| r.v_ctrl).sum::<f64>() / tail.len() as f64
    };
    trace.summary = Some(SimSummary {
        lock_time,
        final_freq_error,
        mean_vctrl,
        locked_at_end: st.lockdet.locked,
        band,
        f_target_vco: target,
        rail_clamp_events: clamp_events,
        end_time: end,
        diagnostic,
    });
    trace.edges = rec.edges;
    Ok(trace)
}

/// Mean VCO frequency over the last 100 reference cycles, relative to target.
fn mean_freq_error(marks: &[(f64, u64)], target: f64) -> f64 {
    if marks.len() < 2 {
        return f64::NAN;
    }
    let last = marks[marks.len() - 1];
    let first = marks[marks.len().saturating_sub(101)];
    let cycles = (last.1 - first.1) as f64;
    let f = cycles / (last.0 - first.0);
    (f - target) / target
}

/// Free-running VCO with its open-loop dividers; the control voltage is held
/// where the selected band sits on the lock target.
pub fn simulate_open_vco(cfg: &PllConfig, duration: Seconds, sink: &mut dyn EdgeSink) -> Result<SimTrace, SimError> {
    check(cfg)?;
    let band = band_for(cfg)?;
    let target = cfg.target_vco();
    let v_ctrl = cfg.sim.initial_vctrl.map_or(cfg.locked_vctrl(band), |v| v.0);
    let mut rec = Recorder::new(cfg, sink);
    let mut chain = VcoChain::new(cfg, band);
    while chain.next_edge_time() <= duration.0 {
        chain.fire(v_ctrl, &cfg.vco, &mut rec)?;
    }
    let f = crate::vco::vco_frequency(band, Volts(v_ctrl), Volts(0.0), &cfg.vco)
        .map_err(SimError::Vco)?
        .0;
    Ok(SimTrace {
        edges: rec.edges,
        waveforms: Vec::new(),
        ref_cycles: Vec::new(),
        summary: Some(SimSummary {
            lock_time: None,
            final_freq_error: (f - target) / target,
            mean_vctrl: v_ctrl,
            locked_at_end: false,
            band,
            f_target_vco: target,
            rail_clamp_events: 0,
            end_time: duration.0,
            diagnostic: None,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::Hertz;

    fn quick() -> PllConfig {
        let mut cfg = PllConfig::default();
        cfg.sim.duration = Seconds(60e-6);
        cfg.sim.record_edges = [Signal::Ref, Signal::Clk, Signal::Up, Signal::Dn, Signal::Lock]
            .into_iter()
            .collect();
        cfg
    }

    #[test]
    fn nominal_run_locks() {
        let cfg = quick();
        let tr = simulate(&cfg).unwrap();
        let s = tr.summary();
        assert_eq!(s.band, 4);
        assert!(s.locked_at_end);
        assert!(s.final_freq_error.abs() < 1e-7, "{}", s.final_freq_error);
        assert!(s.diagnostic.is_none());
        assert!(s.lock_time.unwrap() < 60e-6);
    }

    #[test]
    fn reruns_are_identical() {
        let mut cfg = quick();
        cfg.sim.duration = Seconds(10e-6);
        cfg.noise.vco_pn = Some(crate::noise::PnTarget {
            level: crate::units::DbcPerHz(-100.0),
            offset: Hertz(1e6),
        });
        cfg.noise.ref_rj = Seconds(1e-12);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = quick();
        cfg.sim.duration = Seconds(0.0);
        assert!(matches!(simulate(&cfg), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn forced_wrong_band_pins_the_rail() {
        let mut cfg = quick();
        cfg.vco.band = Some(0);
        cfg.sim.duration = Seconds(400e-6);
        cfg.sim.record_edges.clear();
        let tr = simulate(&cfg).unwrap();
        let s = tr.summary();
        assert!(s.diagnostic.as_deref().unwrap().contains("cannot lock"));
        assert!(!s.locked_at_end);
    }

    #[test]
    fn edges_are_causal_and_monotone() {
        let tr = simulate(&quick()).unwrap();
        for (sig, edges) in &tr.edges {
            assert!(crate::edges::is_monotone(edges), "{sig}");
            assert!(edges.iter().all(|e| e.t() >= 0.0));
        }
    }

    #[test]
    fn open_vco_without_noise_is_uniform() {
        let mut cfg = PllConfig::default();
        cfg.sim.record_edges = [Signal::Vco].into_iter().collect();
        let tr = simulate_open_vco(&cfg, Seconds(1e-6), &mut NullSink).unwrap();
        let t: Vec<f64> = crate::edges::rising_times(tr.edges_of(Signal::Vco));
        let period = 1.0 / 7.2e9;
        for (k, x) in t.iter().enumerate() {
            assert!((x - k as f64 * period).abs() < 1e-21);
        }
    }
}
