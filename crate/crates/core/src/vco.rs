//! Band-switched LC VCO.
//!
//! Coarse tuning engages `band` of the `n_caps` equal switched capacitors
//! (thermometer count, so there are `n_caps + 1` bands). The band-center
//! frequency at `v_mid` is affine in the band index, from `f_max` with no
//! capacitor engaged down to `f_min` with all engaged. Fine tuning is linear
//! in the control voltage with slope `kvco`, and the core supply `VDDL`
//! pushes the frequency with slope `kvddl`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edges::{EdgeEvent, Signal};
use crate::units::{Hertz, Seconds, Volts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VcoError {
    #[error("band {band} out of range 0..={n_caps}")]
    BandOutOfRange { band: u32, n_caps: u32 },
    #[error("VCO frequency {0} Hz is not positive")]
    NonPositiveFrequency(f64),
    #[error("target {target} Hz is unreachable in any band (reachable {lo}..{hi} Hz)")]
    Unreachable { target: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcoParams {
    pub f_min: Hertz,
    pub f_max: Hertz,
    pub n_caps: u32,
    pub kvco: f64,
    pub kvdd: f64,
    pub kvddl: f64,
    pub vddl: Volts,
    pub v_mid: Volts,
    /// Fraction of a band's fine-tuning span shared with its neighbour.
    pub band_overlap: f64,
    /// Fixed coarse band, or `None` for automatic band search.
    pub band: Option<u32>,
}

impl Default for VcoParams {
    fn default() -> Self {
        Self {
            f_min: Hertz(5.6e9),
            f_max: Hertz(8.6e9),
            n_caps: 8,
            kvco: 0.6e9,
            kvdd: 48e6,
            kvddl: 380e6,
            vddl: Volts(0.8),
            v_mid: Volts(0.6),
            band_overlap: 0.2,
            band: None,
        }
    }
}

impl VcoParams {
    /// Spacing between adjacent band centers.
    pub fn band_step(&self) -> f64 {
        (self.f_max.0 - self.f_min.0) / f64::from(self.n_caps)
    }

    /// Width of one band's fine-tuning span.
    pub fn band_span(&self) -> f64 {
        self.band_step() / (1.0 - self.band_overlap)
    }

    /// Band-center frequency at `v_mid`.
    pub fn f_band(&self, band: u32) -> f64 {
        self.f_max.0 - f64::from(band) * self.band_step()
    }

    /// Frequency range covered by one band's fine-tuning span.
    pub fn band_range(&self, band: u32) -> (f64, f64) {
        let c = self.f_band(band);
        let h = self.band_span() / 2.0;
        (c - h, c + h)
    }

    /// Control voltage that puts `band` exactly on `target`.
    pub fn vctrl_for(&self, band: u32, target: f64) -> f64 {
        self.v_mid.0 + (target - self.f_band(band)) / self.kvco
    }

    fn check_band(&self, band: u32) -> Result<(), VcoError> {
        if band > self.n_caps {
            Err(VcoError::BandOutOfRange {
                band,
                n_caps: self.n_caps,
            })
        } else {
            Ok(())
        }
    }
}

/// Oscillation frequency for a band, control voltage and `VDDL` deviation.
pub fn vco_frequency(band: u32, v_ctrl: Volts, v_ddl_dev: Volts, params: &VcoParams) -> Result<Hertz, VcoError> {
    params.check_band(band)?;
    let f = params.f_band(band) + params.kvco * (v_ctrl.0 - params.v_mid.0) + params.kvddl * v_ddl_dev.0;
    Ok(Hertz(f.clamp(0.5 * params.f_min.0, 1.2 * params.f_max.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VcoState {
    pub band: u32,
    /// Completed cycles.
    pub phase: f64,
    /// Time of the latest rising edge.
    pub last_update: Seconds,
    /// Rounding residual of `last_update` (compensated summation), so long
    /// runs do not accumulate timestamp error.
    pub time_residual: f64,
}

impl VcoState {
    pub fn new(band: u32) -> Self {
        Self {
            band,
            ..Default::default()
        }
    }

    pub fn cycles(&self) -> u64 {
        self.phase as u64
    }
}

/// Advance one cycle: the next rising edge comes one period (plus jitter)
/// after the previous one.
pub fn vco_next_edge(
    state: VcoState,
    v_ctrl: Volts,
    v_ddl_dev: Volts,
    params: &VcoParams,
    jitter_sample: Seconds,
) -> Result<(VcoState, EdgeEvent), VcoError> {
    let f = vco_frequency(state.band, v_ctrl, v_ddl_dev, params)?.0;
    if f <= 0.0 {
        return Err(VcoError::NonPositiveFrequency(f));
    }
    let next = advance_time(state, 1.0 / f + jitter_sample.0);
    let edge = EdgeEvent::rising(Signal::Vco, next.cycles(), next.last_update.0);
    Ok((next, edge))
}

/// Add `dt` to the edge clock with two-sum compensation.
pub(crate) fn advance_time(state: VcoState, dt: f64) -> VcoState {
    let a = state.last_update.0;
    let b = dt + state.time_residual;
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    VcoState {
        band: state.band,
        phase: state.phase + 1.0,
        last_update: Seconds(s),
        time_residual: err,
    }
}

/// Band whose center is nearest to `target_f`.
///
/// Fails when the target lies outside every band's fine-tuning span.
pub fn band_search(target_f: Hertz, params: &VcoParams) -> Result<u32, VcoError> {
    let target = target_f.0;
    let lo = params.band_range(params.n_caps).0;
    let hi = params.band_range(0).1;
    if !(lo..=hi).contains(&target) {
        return Err(VcoError::Unreachable { target, lo, hi });
    }
    let best = (0..=params.n_caps)
        .min_by(|&a, &b| {
            let da = (params.f_band(a) - target).abs();
            let db = (params.f_band(b) - target).abs();
            da.total_cmp(&db)
        })
        .expect("at least one band");
    Ok(best)
}
