//! Offline statistics on edge streams: time-interval error, jitter
//! decomposition, phase-noise PSD, spur level, lock time and closed-loop
//! bandwidth.
//!
//! PSD convention: `L(f) = S_φ(f)/2` with `S_φ` one-sided, in dBc/Hz.

use std::f64::consts::{PI, TAU};

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edges::{EdgeEvent, EdgeSink, Polarity, Signal};
use crate::engine::SimTrace;

pub const MIN_TIE_EDGES: usize = 100;
pub const MIN_DECOMPOSE_SAMPLES: usize = 10_000;
/// Phase is resampled at this multiple of the highest reported offset.
pub const RESAMPLE_FACTOR: f64 = 32.0;
pub const MIN_SEGMENTS: usize = 8;
pub const LOCK_FREQ_TOLERANCE: f64 = 1e-6;
pub const LOCK_HOLD_CYCLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {need} edges, got {got}")]
    TooFewEdges { need: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("floor exceeds measurement")]
    FloorExceedsMeasurement,
    #[error("insufficient record: {0}")]
    InsufficientRecord(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("never locked")]
    NeverLocked,
}

/// Residuals of an ideal-clock least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieSeries {
    pub residuals: Vec<f64>,
    pub period: f64,
    pub offset: f64,
}

impl TieSeries {
    pub fn rms(&self) -> f64 {
        let n = self.residuals.len() as f64;
        (self.residuals.iter().map(|x| x * x).sum::<f64>() / n).sqrt()
    }
}

/// Ordinary least squares of edge time against position in the stream.
pub fn tie(edges: &[EdgeEvent]) -> Result<TieSeries, AnalysisError> {
    let times: Vec<f64> = edges.iter().map(EdgeEvent::t).collect();
    tie_times(&times)
}

pub fn tie_times(times: &[f64]) -> Result<TieSeries, AnalysisError> {
    let n = times.len();
    if n < MIN_TIE_EDGES {
        return Err(AnalysisError::TooFewEdges {
            need: MIN_TIE_EDGES,
            got: n,
        });
    }
    // work relative to the first edge and a rough period to keep the
    // numbers small
    let t0 = times[0];
    let rough = (times[n - 1] - t0) / (n - 1) as f64;
    let y: Vec<f64> = times
        .iter()
        .enumerate()
        .map(|(k, t)| (t - t0) - k as f64 * rough)
        .collect();
    let km = (n - 1) as f64 / 2.0;
    let ym = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (k, v) in y.iter().enumerate() {
        let dk = k as f64 - km;
        sxy += dk * (v - ym);
        sxx += dk * dk;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * km;
    let residuals = y
        .iter()
        .enumerate()
        .map(|(k, v)| v - (intercept + slope * k as f64))
        .collect();
    Ok(TieSeries {
        residuals,
        period: rough + slope,
        offset: t0 + intercept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterModel {
    Unimodal,
    Bimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterDecomposition {
    pub rj: f64,
    pub dj: f64,
    pub model: JitterModel,
    /// Log-likelihood gain of the two-component fit over a single Gaussian.
    pub ll_gain: f64,
}

fn gaussian_ll(n: f64, var: f64) -> f64 {
    -0.5 * n * ((TAU * var).ln() + 1.0)
}

/// Two equal-weight Gaussians sharing one sigma, fitted by EM.
fn em_dual_dirac(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let half = sorted.len() / 2;
    let mut mu1 = sorted[..half].iter().sum::<f64>() / half as f64;
    let mut mu2 = sorted[half..].iter().sum::<f64>() / (sorted.len() - half) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut ll = f64::NEG_INFINITY;
    for _ in 0..500 {
        let (mut w1, mut s1, mut s2, mut sq) = (0.0, 0.0, 0.0, 0.0);
        let mut new_ll = 0.0;
        for &v in x {
            let a = -(v - mu1).powi(2) / (2.0 * var);
            let b = -(v - mu2).powi(2) / (2.0 * var);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let r = ea / (ea + eb);
            new_ll += m + (0.5 * (ea + eb)).ln();
            w1 += r;
            s1 += r * v;
            s2 += (1.0 - r) * v;
            sq += r * (v - mu1).powi(2) + (1.0 - r) * (v - mu2).powi(2);
        }
        new_ll -= 0.5 * n * (TAU * var).ln();
        mu1 = s1 / w1.max(f64::MIN_POSITIVE);
        mu2 = s2 / (n - w1).max(f64::MIN_POSITIVE);
        var = (sq / n).max(f64::MIN_POSITIVE);
        let done = (new_ll - ll).abs() < 1e-9 * new_ll.abs().max(1.0);
        ll = new_ll;
        if done {
            break;
        }
    }
    // final likelihood at the converged parameters
    let mut final_ll = 0.0;
    for &v in x {
        let a = -(v - mu1).powi(2) / (2.0 * var);
        let b = -(v - mu2).powi(2) / (2.0 * var);
        let m = a.max(b);
        final_ll += m + (0.5 * ((a - m).exp() + (b - m).exp())).ln();
    }
    final_ll -= 0.5 * n * (TAU * var).ln();
    (mu1, mu2, var, final_ll)
}

/// Dual-Dirac decomposition of a TIE series.
///
/// Two candidate two-component fits are tried: alternate-edge labelling
/// (even and odd positions get their own mean, one shared sigma), and a
/// blind equal-weight mixture fitted by EM. The one with the higher
/// likelihood wins. The result is bimodal when it beats a single Gaussian
/// by more than `ln(n)`.
pub fn decompose(tie: &TieSeries) -> Result<JitterDecomposition, AnalysisError> {
    let x = &tie.residuals;
    let n = x.len();
    if n < MIN_DECOMPOSE_SAMPLES {
        return Err(AnalysisError::TooFewEdges {
            need: MIN_DECOMPOSE_SAMPLES,
            got: n,
        });
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if !(var0 > 0.0) {
        return Err(AnalysisError::Degenerate("zero variance"));
    }
    let ll0 = gaussian_ll(nf, var0);

    let (mut se, mut so, mut ne) = (0.0, 0.0, 0usize);
    for (k, v) in x.iter().enumerate() {
        if k % 2 == 0 {
            se += v;
            ne += 1;
        } else {
            so += v;
        }
    }
    let (me, mo) = (se / ne as f64, so / (n - ne) as f64);
    let var_p = x
        .iter()
        .enumerate()
        .map(|(k, v)| (v - if k % 2 == 0 { me } else { mo }).powi(2))
        .sum::<f64>()
        / nf;
    let ll_p = gaussian_ll(nf, var_p);

    let (m1, m2, var_e, ll_e) = em_dual_dirac(x);
    let (dj, var, ll) = if ll_p >= ll_e {
        ((me - mo).abs(), var_p, ll_p)
    } else {
        ((m1 - m2).abs(), var_e, ll_e)
    };
    let gain = ll - ll0;
    if gain > nf.ln() {
        Ok(JitterDecomposition {
            rj: var.sqrt(),
            dj,
            model: JitterModel::Bimodal,
            ll_gain: gain,
        })
    } else {
        Ok(JitterDecomposition {
            rj: var0.sqrt(),
            dj: 0.0,
            model: JitterModel::Unimodal,
            ll_gain: gain,
        })
    }
}

/// Remove an uncorrelated instrument floor from an rms measurement.
pub fn subtract_floor(total_rms: f64, floor_rms: f64) -> Result<f64, AnalysisError> {
    if floor_rms > total_rms {
        return Err(AnalysisError::FloorExceedsMeasurement);
    }
    Ok((total_rms * total_rms - floor_rms * floor_rms).sqrt())
}

/// Histogram of TIE residuals: `(bin centre, count)`.
pub fn histogram(x: &[f64], bins: usize) -> Vec<(f64, u64)> {
    if x.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = if hi > lo { (hi - lo) / bins as f64 } else { 1e-15 };
    let mut counts = vec![0u64; bins];
    for v in x {
        let b = (((v - lo) / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + (b as f64 + 0.5) * w, c))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdOptions {
    pub f_low: f64,
    pub f_high: f64,
    pub points_per_decade: usize,
}

impl PsdOptions {
    pub fn new(f_low: f64, f_high: f64) -> Self {
        Self {
            f_low,
            f_high,
            points_per_decade: 10,
        }
    }

    pub fn sample_rate(&self) -> f64 {
        RESAMPLE_FACTOR * self.f_high
    }

    fn check(&self) -> Result<(), AnalysisError> {
        if !(self.f_low > 0.0 && self.f_high > self.f_low && self.points_per_decade > 0) {
            return Err(AnalysisError::Invalid(format!(
                "need 0 < f_low < f_high, got {} and {}",
                self.f_low, self.f_high
            )));
        }
        Ok(())
    }
}

/// Welch estimate of the one-sided phase PSD in rad²/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePsd {
    pub bin_hz: f64,
    pub s_phi: Vec<f64>,
    pub segments: usize,
    pub nperseg: usize,
}

impl PhasePsd {
    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.bin_hz
    }

    /// `∫ S_φ df` over all bins.
    pub fn total_power(&self) -> f64 {
        self.s_phi.iter().sum::<f64>() * self.bin_hz
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|k| 0.5 - 0.5 * (TAU * k as f64 / n as f64).cos()).collect()
}

/// Welch periodogram: Hann window, 50 % overlap, per-segment mean removal.
pub fn welch(x: &[f64], fs: f64, nperseg: usize) -> Result<PhasePsd, AnalysisError> {
    if nperseg < 8 || x.len() < nperseg {
        return Err(AnalysisError::InsufficientRecord(format!(
            "{} samples for segments of {nperseg}",
            x.len()
        )));
    }
    let step = nperseg / 2;
    let segments = (x.len() - nperseg) / step + 1;
    let w = hann(nperseg);
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::new().plan_fft_forward(nperseg);
    let mut buf = vec![Complex64::new(0.0, 0.0); nperseg];
    let n_out = nperseg / 2 + 1;
    let mut acc = vec![0.0; n_out];
    for s in 0..segments {
        let seg = &x[s * step..s * step + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for (b, (v, wv)) in buf.iter_mut().zip(seg.iter().zip(&w)) {
            *b = Complex64::new((v - mean) * wv, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let scale = 1.0 / (fs * wss * segments as f64);
    let s_phi = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (nperseg.is_multiple_of(2) && k == n_out - 1) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    Ok(PhasePsd {
        bin_hz: fs / nperseg as f64,
        s_phi,
        segments,
        nperseg,
    })
}

/// Single-sideband phase noise on a log-spaced grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnPsd {
    pub f_hz: Vec<f64>,
    pub l_dbc_hz: Vec<f64>,
    pub bin_hz: f64,
    pub segments: usize,
    pub sample_rate: f64,
    pub window: String,
    pub convention: String,
    /// Underlying Welch bins, kept for tone integration.
    pub raw: PhasePsd,
}

impl PnPsd {
    /// Level at `f` interpolated in log-log on the report grid.
    pub fn level_at(&self, f: f64) -> Option<f64> {
        let i = self.f_hz.iter().position(|&x| x >= f)?;
        if self.f_hz[i] == f || i == 0 {
            return (self.f_hz[i] == f).then_some(self.l_dbc_hz[i]);
        }
        let (f0, f1) = (self.f_hz[i - 1].ln(), self.f_hz[i].ln());
        let a = (f.ln() - f0) / (f1 - f0);
        Some(self.l_dbc_hz[i - 1] * (1.0 - a) + self.l_dbc_hz[i] * a)
    }

    /// Least-squares slope in dB/decade over `[f_a, f_b]`.
    pub fn slope(&self, f_a: f64, f_b: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .f_hz
            .iter()
            .zip(&self.l_dbc_hz)
            .filter(|(f, _)| **f >= f_a * (1.0 - 1e-9) && **f <= f_b * (1.0 + 1e-9))
            .map(|(f, l)| (f.log10(), *l))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Segment length: fine enough to put several bins below `f_low`, short
/// enough to leave at least [`MIN_SEGMENTS`] segments.
fn choose_nperseg(n: usize, fs: f64, f_low: f64) -> Result<usize, AnalysisError> {
    let wanted = ((4.0 * fs / f_low).ceil() as usize).next_power_of_two();
    let fit_limit = 2 * n / (MIN_SEGMENTS + 1);
    if fit_limit < 8 {
        return Err(AnalysisError::InsufficientRecord(format!("only {n} phase samples")));
    }
    let fit = 1usize << (usize::BITS - 1 - fit_limit.leading_zeros());
    let nperseg = wanted.min(fit);
    if fs / nperseg as f64 > f_low {
        return Err(AnalysisError::InsufficientRecord(format!(
            "record of {:.3e} s resolves {:.3e} Hz, need {:.3e} Hz",
            n as f64 / fs,
            fs / nperseg as f64,
            f_low
        )));
    }
    Ok(nperseg)
}

/// PSD of a uniformly sampled phase record (radians).
pub fn pn_psd_from_phase(phase: &[f64], fs: f64, opts: &PsdOptions) -> Result<PnPsd, AnalysisError> {
    opts.check()?;
    let duration = phase.len() as f64 / fs;
    if duration < 10.0 / opts.f_low {
        return Err(AnalysisError::InsufficientRecord(format!(
            "record of {duration:.3e} s is shorter than 10/f_low = {:.3e} s",
            10.0 / opts.f_low
        )));
    }
    if opts.f_high > fs / 2.0 {
        return Err(AnalysisError::Invalid(format!("f_high above Nyquist of {fs} Hz")));
    }
    let nperseg = choose_nperseg(phase.len(), fs, opts.f_low)?;
    let detrended = detrend(phase);
    let raw = welch(&detrended, fs, nperseg)?;

    let decades = (opts.f_high / opts.f_low).log10();
    let npts = (decades * opts.points_per_decade as f64).round() as usize + 1;
    let half = 0.5 / opts.points_per_decade as f64;
    let mut f_hz = Vec::with_capacity(npts);
    let mut l_dbc_hz = Vec::with_capacity(npts);
    for i in 0..npts {
        let f = if i + 1 == npts {
            opts.f_high
        } else {
            opts.f_low * 10f64.powf(i as f64 / opts.points_per_decade as f64)
        };
        let (lo, hi) = (f * 10f64.powf(-half), f * 10f64.powf(half));
        let k_lo = (lo / raw.bin_hz).ceil().max(1.0) as usize;
        let k_hi = ((hi / raw.bin_hz).ceil() as usize).min(raw.s_phi.len());
        let s = if k_hi > k_lo {
            raw.s_phi[k_lo..k_hi].iter().sum::<f64>() / (k_hi - k_lo) as f64
        } else {
            // band narrower than a bin: interpolate
            let x = f / raw.bin_hz;
            let k = (x.floor() as usize).clamp(1, raw.s_phi.len() - 2);
            let a = x - k as f64;
            raw.s_phi[k] * (1.0 - a) + raw.s_phi[k + 1] * a
        };
        f_hz.push(f);
        l_dbc_hz.push(10.0 * (s / 2.0).log10());
    }
    Ok(PnPsd {
        f_hz,
        l_dbc_hz,
        bin_hz: raw.bin_hz,
        segments: raw.segments,
        sample_rate: fs,
        window: "hann".into(),
        convention: "L(f) = S_phi(f)/2, S_phi one-sided, dBc/Hz".into(),
        raw,
    })
}

fn detrend(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let km = (n - 1.0) / 2.0;
    let ym = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, v) in x.iter().enumerate() {
        let dk = k as f64 - km;
        sxy += dk * (v - ym);
        sxx += dk * dk;
    }
    let b = sxy / sxx;
    x.iter()
        .enumerate()
        .map(|(k, v)| v - ym - b * (k as f64 - km))
        .collect()
}

/// Streaming edge consumer that turns the rising edges of one signal into a
/// uniformly sampled phase record.
///
/// The excess time of edge `k` over a nominal clock, `x_k = t_k − t_0 −
/// k/f0`, is linearly interpolated onto a grid at `fs`; phase is
/// `−2π·f0·x`. Residual frequency offset shows up as a linear ramp and is
/// removed by the detrend in [`pn_psd_from_phase`].
#[derive(Debug, Clone)]
pub struct PhaseSampler {
    signal: Signal,
    f0: f64,
    fs: f64,
    count: u64,
    t_first: f64,
    prev: Option<(f64, f64)>,
    next_grid: u64,
    phase: Vec<f64>,
}

impl PhaseSampler {
    pub fn new(signal: Signal, f0: f64, fs: f64) -> Self {
        Self {
            signal,
            f0,
            fs,
            count: 0,
            t_first: 0.0,
            prev: None,
            next_grid: 0,
            phase: Vec::new(),
        }
    }

    pub fn push_time(&mut self, t: f64) {
        if self.count == 0 {
            self.t_first = t;
        }
        let rel = t - self.t_first;
        let x = rel - self.count as f64 / self.f0;
        self.count += 1;
        if let Some((t_prev, x_prev)) = self.prev {
            loop {
                let g = self.next_grid as f64 / self.fs;
                if g > rel {
                    break;
                }
                let a = (g - t_prev) / (rel - t_prev);
                let xi = x_prev + a * (x - x_prev);
                self.phase.push(-TAU * self.f0 * xi);
                self.next_grid += 1;
            }
        }
        self.prev = Some((rel, x));
    }

    pub fn sample_rate(&self) -> f64 {
        self.fs
    }

    pub fn edges_seen(&self) -> u64 {
        self.count
    }

    pub fn finish(self) -> Vec<f64> {
        self.phase
    }
}

impl EdgeSink for PhaseSampler {
    fn on_edge(&mut self, e: &EdgeEvent) {
        if e.signal == self.signal && e.polarity == Polarity::Rising {
            self.push_time(e.t());
        }
    }
}

/// Phase-noise PSD of an edge stream. Only rising edges are used.
pub fn pn_psd(edges: &[EdgeEvent], f0_nominal: f64, opts: &PsdOptions) -> Result<PnPsd, AnalysisError> {
    opts.check()?;
    let rising: Vec<f64> = edges.iter().filter(|e| e.is_rising()).map(EdgeEvent::t).collect();
    if rising.len() < MIN_TIE_EDGES {
        return Err(AnalysisError::TooFewEdges {
            need: MIN_TIE_EDGES,
            got: rising.len(),
        });
    }
    let f0 = if f0_nominal > 0.0 {
        f0_nominal
    } else {
        let t = tie_times(&rising)?;
        1.0 / t.period
    };
    let mut s = PhaseSampler::new(Signal::Vco, f0, opts.sample_rate());
    for t in rising {
        s.push_time(t);
    }
    let fs = s.sample_rate();
    pn_psd_from_phase(&s.finish(), fs, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpurLevel {
    pub f_hz: f64,
    pub level_dbc: f64,
    /// The tone did not rise above the local noise floor; `level_dbc` is
    /// an upper bound.
    pub floor_limited: bool,
}

/// Tone power at `f_m`: the Welch bins within ±3 of the tone are summed,
/// the local median floor is subtracted, and the result is referred to one
/// sideband.
pub fn spur_level(psd: &PnPsd, f_m: f64) -> Result<SpurLevel, AnalysisError> {
    let raw = &psd.raw;
    if raw.bin_hz > f_m / 20.0 {
        return Err(AnalysisError::InsufficientRecord(format!(
            "resolution {:.3e} Hz exceeds f_m/20",
            raw.bin_hz
        )));
    }
    let kc = (f_m / raw.bin_hz).round() as usize;
    if kc + 30 >= raw.s_phi.len() {
        return Err(AnalysisError::Invalid(format!("{f_m} Hz is outside the PSD span")));
    }
    let tone: f64 = raw.s_phi[kc - 3..=kc + 3].iter().sum::<f64>() * raw.bin_hz;
    let mut side: Vec<f64> = raw.s_phi[kc - 25..kc - 5]
        .iter()
        .chain(&raw.s_phi[kc + 6..kc + 26])
        .copied()
        .collect();
    side.sort_by(f64::total_cmp);
    let floor = side[side.len() / 2] * 7.0 * raw.bin_hz;
    let excess = tone - floor;
    let floor_limited = excess <= 3.0 * floor;
    let power = if floor_limited { tone.max(floor) } else { excess };
    Ok(SpurLevel {
        f_hz: f_m,
        level_dbc: 10.0 * (power / 2.0).log10(),
        floor_limited,
    })
}

/// First time after which the per-reference-cycle frequency error stays
/// within 1e-6 for 100 consecutive cycles. Falls back to the first LOCK
/// assertion when the trace has no frequency samples.
pub fn lock_time(trace: &SimTrace) -> Result<f64, AnalysisError> {
    let rc = &trace.ref_cycles;
    if rc.is_empty() {
        return trace
            .edges_of(Signal::Lock)
            .iter()
            .find(|e| e.is_rising())
            .map(EdgeEvent::t)
            .ok_or(AnalysisError::NeverLocked);
    }
    let mut run = 0usize;
    for (i, s) in rc.iter().enumerate() {
        if s.freq_error.abs() < LOCK_FREQ_TOLERANCE {
            run += 1;
            if run == LOCK_HOLD_CYCLES {
                return Ok(rc[i + 1 - LOCK_HOLD_CYCLES].t);
            }
        } else {
            run = 0;
        }
    }
    Err(AnalysisError::NeverLocked)
}

/// Mean frequency of a clock from its rising edges in `[t_from, ∞)`.
pub fn mean_frequency(edges: &[EdgeEvent], t_from: f64) -> Option<f64> {
    let r: Vec<f64> = edges
        .iter()
        .filter(|e| e.is_rising() && e.t() >= t_from)
        .map(EdgeEvent::t)
        .collect();
    if r.len() < 2 {
        return None;
    }
    Some((r.len() - 1) as f64 / (r[r.len() - 1] - r[0]))
}

/// −3 dB closed-loop bandwidth from the response of CLK to a reference
/// phase step of `step` seconds applied at `t_step`.
///
/// The CLK excess time per reference period is differenced into a sampled
/// impulse response whose DTFT is the closed-loop transfer function.
pub fn step_response_bandwidth(clk: &[EdgeEvent], f_ref: f64, t_step: f64, step: f64) -> Result<f64, AnalysisError> {
    let t_ref = 1.0 / f_ref;
    let rises: Vec<f64> = clk.iter().filter(|e| e.is_rising()).map(EdgeEvent::t).collect();
    let k0 = (t_step * f_ref).ceil() as usize;
    if rises.len() < k0 + 64 || k0 < 16 {
        return Err(AnalysisError::InsufficientRecord("step response too short".into()));
    }
    let excess: Vec<f64> = rises.iter().enumerate().map(|(k, t)| t - k as f64 * t_ref).collect();
    let pre = excess[k0 - 16..k0].iter().sum::<f64>() / 16.0;
    let s: Vec<f64> = excess[k0 - 1..].iter().map(|e| (e - pre) / step).collect();
    let h: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
    let settled = s[s.len() - 1];
    if (settled - 1.0).abs() > 0.05 {
        return Err(AnalysisError::InsufficientRecord(format!(
            "step response settled at {settled:.3} of the step"
        )));
    }
    let mag = |f: f64| -> f64 {
        let w = TAU * f * t_ref;
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in h.iter().enumerate() {
            let a = w * j as f64;
            re += v * a.cos();
            im -= v * a.sin();
        }
        (re * re + im * im).sqrt() / settled
    };
    let target = std::f64::consts::FRAC_1_SQRT_2;
    let mut f_prev = f_ref * 1e-5;
    let mut f = f_prev;
    let f_max = f_ref / 4.0;
    while f < f_max {
        f_prev = f;
        f *= 1.02;
        if mag(f_prev) >= target && mag(f) < target {
            let (mut lo, mut hi) = (f_prev, f);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if mag(mid) >= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(AnalysisError::Invalid("no −3 dB crossing below f_ref/4".into()))
}

/// Phase-modulation index giving a sideband at `level_dbc`.
pub fn pm_index_for(level_dbc: f64) -> f64 {
    2.0 * 10f64.powf(level_dbc / 20.0)
}

/// Ideal clock with sinusoidal phase modulation, for tests and calibration.
pub fn pm_clock(f0: f64, beta: f64, f_m: f64, cycles: usize) -> Vec<EdgeEvent> {
    (0..cycles)
        .map(|k| {
            let t = k as f64 / f0;
            // edge where 2π·f0·t + β·sin(2π f_m t) = 2πk, to first order
            let dt = -beta * (TAU * f_m * t).sin() / (2.0 * PI * f0);
            EdgeEvent::rising(Signal::Vco, k as u64, t + dt)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::random_stream;

    fn clock(times: &[f64]) -> Vec<EdgeEvent> {
        times
            .iter()
            .enumerate()
            .map(|(k, t)| EdgeEvent::rising(Signal::OutA, k as u64, *t))
            .collect()
    }

    #[test]
    fn tie_of_uniform_clock_is_zero() {
        let t: Vec<f64> = (0..10_000).map(|k| 1e-3 + k as f64 / 1.92e9).collect();
        let s = tie(&clock(&t)).unwrap();
        assert!(s.residuals.iter().all(|r| r.abs() < 1e-15));
        assert!((s.period * 1.92e9 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn displaced_edge_leverage() {
        let n = 1000;
        let mut t: Vec<f64> = (0..n).map(|k| k as f64 * 1e-9).collect();
        t[400] += 1e-12;
        let s = tie(&clock(&t)).unwrap();
        let r = s.residuals[400];
        assert!(r > 0.99e-12 && r < 1e-12, "{r}");
    }

    #[test]
    fn tie_rejects_short_input() {
        let t: Vec<f64> = (0..99).map(|k| k as f64).collect();
        assert!(matches!(tie(&clock(&t)), Err(AnalysisError::TooFewEdges { .. })));
    }

    #[test]
    fn gaussian_tie_std() {
        let mut rs = random_stream(3, "tie");
        let t: Vec<f64> = (0..100_000)
            .map(|k| k as f64 / 1.92e9 + 880e-15 * rs.gaussian())
            .collect();
        let s = tie(&clock(&t)).unwrap();
        assert!((s.rms() / 880e-15 - 1.0).abs() < 0.02);
    }

    #[test]
    fn floor_subtraction() {
        assert!((subtract_floor(880e-15, 540e-15).unwrap() - 694.8e-15).abs() < 0.05e-15);
        assert_eq!(subtract_floor(3.0, 0.0).unwrap(), 3.0);
        assert_eq!(subtract_floor(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(subtract_floor(1.0, 2.0), Err(AnalysisError::FloorExceedsMeasurement));
    }

    fn dual_dirac(n: usize, dj: f64, rj: f64, seed: u64) -> TieSeries {
        let mut rs = random_stream(seed, "dd");
        let t: Vec<f64> = (0..n)
            .map(|k| {
                let d = if k % 2 == 0 { dj / 2.0 } else { -dj / 2.0 };
                k as f64 * 520e-12 + d + rj * rs.gaussian()
            })
            .collect();
        tie_times(&t).unwrap()
    }

    #[test]
    fn decompose_dcd_scenario() {
        let d = decompose(&dual_dirac(100_000, 3.13e-12, 560e-15, 1)).unwrap();
        assert_eq!(d.model, JitterModel::Bimodal);
        assert!((d.dj / 3.13e-12 - 1.0).abs() < 0.1);
        assert!((d.rj / 560e-15 - 1.0).abs() < 0.1);
    }

    #[test]
    fn decompose_gaussian_is_unimodal() {
        let d = decompose(&dual_dirac(100_000, 0.0, 700e-15, 2)).unwrap();
        assert_eq!(d.model, JitterModel::Unimodal);
        assert_eq!(d.dj, 0.0);
        assert!((d.rj / 700e-15 - 1.0).abs() < 0.05);
    }

    #[test]
    fn decompose_rejects_constant() {
        let s = TieSeries {
            residuals: vec![0.0; 20_000],
            period: 1.0,
            offset: 0.0,
        };
        assert!(matches!(decompose(&s), Err(AnalysisError::Degenerate(_))));
    }

    #[test]
    fn em_finds_shuffled_mixture() {
        // random labels: only the blind fit can see the two modes
        let mut rs = random_stream(9, "mix");
        let x: Vec<f64> = (0..50_000)
            .map(|_| {
                let d = if rs.uniform() < 0.5 { 5e-12 } else { -5e-12 };
                d + 1e-12 * rs.gaussian()
            })
            .collect();
        let s = TieSeries {
            residuals: x,
            period: 1.0,
            offset: 0.0,
        };
        let d = decompose(&s).unwrap();
        assert_eq!(d.model, JitterModel::Bimodal);
        assert!((d.dj / 10e-12 - 1.0).abs() < 0.02);
        assert!((d.rj / 1e-12 - 1.0).abs() < 0.05);
    }

    #[test]
    fn parseval_on_white_phase() {
        let mut rs = random_stream(4, "parseval");
        let x: Vec<f64> = (0..1 << 16).map(|_| 0.01 * rs.gaussian()).collect();
        let p = welch(&x, 1e6, 1024).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((p.total_power() / var - 1.0).abs() < 0.05);
    }

    #[test]
    fn pm_tone_level() {
        let beta = 0.01;
        let f0 = 1e9;
        let edges = pm_clock(f0, beta, 1e6, 1_000_000);
        let psd = pn_psd(&edges, f0, &PsdOptions::new(50e3, 5e6)).unwrap();
        let s = spur_level(&psd, 1e6).unwrap();
        let want = 20.0 * (beta / 2.0).log10();
        assert!(!s.floor_limited);
        assert!((s.level_dbc - want).abs() < 0.5, "{} vs {want}", s.level_dbc);
    }

    #[test]
    fn clean_clock_spur_is_floor_limited() {
        let f0 = 1e9;
        let mut rs = random_stream(5, "floor");
        let edges: Vec<EdgeEvent> = (0..1_000_000)
            .map(|k| EdgeEvent::rising(Signal::Vco, k, k as f64 / f0 + 1e-14 * rs.gaussian()))
            .collect();
        let psd = pn_psd(&edges, f0, &PsdOptions::new(50e3, 5e6)).unwrap();
        assert!(spur_level(&psd, 1e6).unwrap().floor_limited);
    }

    #[test]
    fn short_record_is_rejected() {
        let edges = pm_clock(1e9, 0.01, 1e6, 10_000);
        assert!(matches!(
            pn_psd(&edges, 1e9, &PsdOptions::new(100e3, 5e6)),
            Err(AnalysisError::InsufficientRecord(_))
        ));
    }

    #[test]
    fn report_grid_is_increasing_and_covers_range() {
        let edges = pm_clock(1e9, 0.001, 1e6, 2_000_000);
        let p = pn_psd(&edges, 1e9, &PsdOptions::new(100e3, 5e6)).unwrap();
        assert!(p.f_hz.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(p.f_hz[0], 100e3);
        assert_eq!(*p.f_hz.last().unwrap(), 5e6);
    }

    #[test]
    fn histogram_counts_everything() {
        let x: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        let h = histogram(&x, 10);
        assert_eq!(h.iter().map(|b| b.1).sum::<u64>(), 1000);
        assert!(h.iter().all(|b| b.1 == 100));
    }
}
