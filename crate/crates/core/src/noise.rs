//! Noise and disturbance sources.
//!
//! The VCO phase-noise model is white FM only: every cycle's period gets an
//! independent Gaussian offset, so edge timing performs a random walk and the
//! phase-noise density falls at 20 dB/decade.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomStream;
use crate::units::{DbcPerHz, Hertz, Seconds, Volts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Phase-noise calibration point in the 1/f² region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnTarget {
    pub level: DbcPerHz,
    pub offset: Hertz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ripple {
    pub amplitude: Volts,
    pub freq: Hertz,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub vco_pn: Option<PnTarget>,
    /// White jitter of each reference edge, rms.
    pub ref_rj: Seconds,
    /// Sinusoidal ripple on VDDL.
    pub ripple: Option<Ripple>,
    /// One-sided white noise density on VDDL, V/√Hz.
    pub supply_noise_psd: f64,
    /// Extra delay of every output falling edge (rise/fall mismatch of the
    /// output buffers).
    pub buffer_dcd: Seconds,
}

impl NoiseSpec {
    pub fn is_quiet(&self) -> bool {
        self.vco_pn.is_none()
            && self.ref_rj.0 == 0.0
            && self.ripple.is_none()
            && self.supply_noise_psd == 0.0
            && self.buffer_dcd.0 == 0.0
    }
}

/// Per-cycle period-jitter sigma giving single-sideband phase noise
/// `l_target` at offset `delta_f` on a carrier `f0`.
///
/// Independent period offsets of variance σ² per cycle make the edge-time
/// error a random walk with diffusion σ²·f0, whose one-sided phase PSD is
/// `S_φ(f) = 2σ²f0³/f²`. With `L = S_φ/2`, `σ = √(10^(L/10)·Δf²/f0³)`.
pub fn sigma_from_pn(l_target: DbcPerHz, delta_f: Hertz, f0: Hertz) -> Result<Seconds, NoiseError> {
    if delta_f.0 <= 0.0 {
        return Err(NoiseError::NonPositive("offset frequency"));
    }
    if f0.0 <= 0.0 {
        return Err(NoiseError::NonPositive("carrier frequency"));
    }
    let l = 10f64.powf(l_target.0 / 10.0);
    Ok(Seconds((l * delta_f.0 * delta_f.0 / f0.0.powi(3)).sqrt()))
}

/// Inverse of [`sigma_from_pn`].
pub fn pn_from_sigma(sigma: Seconds, delta_f: Hertz, f0: Hertz) -> DbcPerHz {
    let l = sigma.0 * sigma.0 * f0.0.powi(3) / (delta_f.0 * delta_f.0);
    DbcPerHz(10.0 * l.log10())
}

/// Deterministic ripple plus sampled white noise on VDDL.
#[derive(Debug, Clone)]
pub struct SupplyWaveform {
    ripple: Option<Ripple>,
    psd: f64,
    stream: RandomStream,
}

impl SupplyWaveform {
    pub fn new(spec: &NoiseSpec, stream: RandomStream) -> Self {
        Self {
            ripple: spec.ripple,
            psd: spec.supply_noise_psd,
            stream,
        }
    }

    pub fn ripple_at(&self, t: f64) -> f64 {
        match self.ripple {
            Some(r) => r.amplitude.0 * (std::f64::consts::TAU * r.freq.0 * t).sin(),
            None => 0.0,
        }
    }

    /// Deviation at `t`. The noise part is one sample of white noise
    /// band-limited to `sample_rate/2`.
    pub fn sample(&mut self, t: f64, sample_rate: f64) -> Volts {
        let mut v = self.ripple_at(t);
        if self.psd > 0.0 {
            v += self.psd * (sample_rate / 2.0).sqrt() * self.stream.gaussian();
        }
        Volts(v)
    }

    pub fn is_active(&self) -> bool {
        self.ripple.is_some() || self.psd > 0.0
    }
}

/// One-shot form of [`SupplyWaveform::sample`].
pub fn supply_at(t: Seconds, spec: &NoiseSpec, stream: &mut RandomStream, sample_rate: Hertz) -> Volts {
    let mut v = match spec.ripple {
        Some(r) => r.amplitude.0 * (std::f64::consts::TAU * r.freq.0 * t.0).sin(),
        None => 0.0,
    };
    if spec.supply_noise_psd > 0.0 {
        v += spec.supply_noise_psd * (sample_rate.0 / 2.0).sqrt() * stream.gaussian();
    }
    Volts(v)
}
