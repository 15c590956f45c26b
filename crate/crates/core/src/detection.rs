//! Coherent echo field of a weighted pair ensemble and its I/Q metrics.
//!
//! The emitted field is taken as the weighted sum of target coherences
//! ρ_ge; I and Q are its real and imaginary parts, in arbitrary units.
//!
//! The cross-pair sum is deterministic: pairs are cut into fixed chunks of
//! [`REDUCTION_CHUNK`] in ensemble order, each chunk is summed sequentially,
//! and the chunk sums are then added sequentially in chunk order. The result
//! does not depend on the number of worker threads.

use std::f64::consts::{LN_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::IonPairParams;
use crate::error::{ensure_finite, Error, Result};
use crate::protocols::{uniform_grid, CouplingOptions, PairPropagator, PairState, Timeline};
use crate::quantum::RelaxationParams;
use crate::C64;

pub const REDUCTION_CHUNK: usize = 256;

/// Peaks below this fraction of the largest possible echo (all weight in a
/// fully refocused coherence of 1/2) count as no echo.
pub const NO_ECHO_FRACTION: f64 = 1e-12;

/// The peak is searched within this many envelope widths of the expected time.
pub const SEARCH_HALF_WIDTHS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub dt_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub description: String,
    pub n_pairs: usize,
    pub seed: Option<u64>,
    pub total_weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EchoTrace {
    pub t0_s: f64,
    pub dt_s: f64,
    pub amplitude: Vec<C64>,
    pub metadata: TraceMetadata,
}

impl EchoTrace {
    pub fn new(t0_s: f64, dt_s: f64, amplitude: Vec<C64>, metadata: TraceMetadata) -> Result<Self> {
        ensure_finite("t0_s", t0_s)?;
        if !(dt_s > 0.0) || !dt_s.is_finite() {
            return Err(Error::InvalidParameter(format!("trace step must be > 0, got {dt_s}")));
        }
        if let Some(i) = amplitude.iter().position(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite amplitude at sample {i}")));
        }
        Ok(Self { t0_s, dt_s, amplitude, metadata })
    }

    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0_s + i as f64 * self.dt_s
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    pub fn t_end_s(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.len() == other.len()
            && (self.t0_s - other.t0_s).abs() <= 1e-9 * self.dt_s
            && (self.dt_s - other.dt_s).abs() <= 1e-12 * self.dt_s
    }

    /// Sample-wise sum of two traces on the same grid.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(Error::InvalidParameter("traces are on different grids".into()));
        }
        let amplitude = self.amplitude.iter().zip(&other.amplitude).map(|(a, b)| a + b).collect();
        let metadata = TraceMetadata {
            description: format!("{} + {}", self.metadata.description, other.metadata.description),
            n_pairs: self.metadata.n_pairs + other.metadata.n_pairs,
            seed: None,
            total_weight: self.metadata.total_weight + other.metadata.total_weight,
        };
        Ok(Self { amplitude, metadata, ..*self })
    }

    /// Copy with every sample multiplied by `factor`.
    pub fn rotated(&self, factor: C64) -> Self {
        Self { amplitude: self.amplitude.iter().map(|a| a * factor).collect(), metadata: self.metadata.clone(), ..*self }
    }

    /// Adds independent Gaussian noise of standard deviation `sigma` to I and Q.
    pub fn with_detector_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidParameter(format!("noise sigma {sigma}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitude = self
            .amplitude
            .iter()
            .map(|a| a + C64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        Ok(Self { amplitude, metadata: self.metadata.clone(), ..*self })
    }
}

/// Weighted target coherence of every pair on the window grid.
pub fn echo_signal(
    ensemble: &[IonPairParams],
    timeline: &Timeline,
    relax: &RelaxationParams,
    options: &CouplingOptions,
    window: &Window,
) -> Result<EchoTrace> {
    relax.validate()?;
    let free_start = timeline.final_free_start_s();
    let end = timeline.duration_s();
    let slack = 1e-12;
    if window.t_start_s < free_start - slack || window.t_end_s > end + slack {
        return Err(Error::Range(format!(
            "window [{}, {}] s is outside the final free span [{free_start}, {end}] s",
            window.t_start_s, window.t_end_s
        )));
    }
    let times = uniform_grid(window.t_start_s, window.t_end_s, window.dt_s)?;
    let m = times.len();

    let chunk_sums: Vec<Vec<C64>> = ensemble
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| -> Result<Vec<C64>> {
            let mut acc = vec![C64::new(0.0, 0.0); m];
            for pair in chunk {
                let w = pair.weight;
                PairPropagator::new(pair, relax, options).run(PairState::ground(), timeline, &times, |k, _, s| {
                    acc[k] += s.target.coherence() * w;
                })?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut amplitude = vec![C64::new(0.0, 0.0); m];
    for part in &chunk_sums {
        for (a, p) in amplitude.iter_mut().zip(part) {
            *a += p;
        }
    }
    let metadata = TraceMetadata {
        description: String::new(),
        n_pairs: ensemble.len(),
        seed: None,
        total_weight: ensemble.iter().map(|p| p.weight).sum(),
    };
    EchoTrace::new(window.t_start_s, window.dt_s, amplitude, metadata)
}

/// Echo envelope FWHM for a Gaussian line of the given FWHM:
/// 4·ln2 / (π·FWHM_line).
pub fn fourier_envelope_fwhm_s(line_fwhm_hz: f64) -> f64 {
    4.0 * LN_2 / (PI * line_fwhm_hz)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoMetrics {
    pub peak_magnitude: f64,
    pub peak_time_s: f64,
    /// Absent when there is no echo.
    pub phase_deg: Option<f64>,
    pub no_echo: bool,
}

fn search_range(trace: &EchoTrace, expected_echo_s: f64, envelope_fwhm_s: f64) -> Result<(usize, usize)> {
    if trace.is_empty() {
        return Err(Error::Range("empty trace".into()));
    }
    if !(envelope_fwhm_s > 0.0) {
        return Err(Error::InvalidParameter(format!("envelope width must be > 0, got {envelope_fwhm_s}")));
    }
    let half_step = 0.5 * trace.dt_s;
    if expected_echo_s < trace.t0_s - half_step || expected_echo_s > trace.t_end_s() + half_step {
        return Err(Error::Range(format!(
            "expected echo at {expected_echo_s} s is outside the trace [{}, {}] s",
            trace.t0_s,
            trace.t_end_s()
        )));
    }
    let reach = SEARCH_HALF_WIDTHS * envelope_fwhm_s;
    let last = trace.len() - 1;
    let index = |t: f64| ((t - trace.t0_s) / trace.dt_s).clamp(0.0, last as f64);
    Ok((index(expected_echo_s - reach).ceil() as usize, index(expected_echo_s + reach).floor() as usize))
}

/// Largest |amplitude| near the expected echo time, with its phase.
pub fn echo_metrics(trace: &EchoTrace, expected_echo_s: f64, envelope_fwhm_s: f64) -> Result<EchoMetrics> {
    let (lo, hi) = search_range(trace, expected_echo_s, envelope_fwhm_s)?;
    let (mut best, mut best_mag) = (lo, -1.0);
    for i in lo..=hi {
        let mag = trace.amplitude[i].norm();
        if mag > best_mag {
            best = i;
            best_mag = mag;
        }
    }
    let ceiling = 0.5 * trace.metadata.total_weight;
    let no_echo = !(best_mag >= NO_ECHO_FRACTION * ceiling) || best_mag == 0.0;
    let a = trace.amplitude[best];
    Ok(EchoMetrics {
        peak_magnitude: best_mag,
        peak_time_s: trace.time(best),
        phase_deg: (!no_echo).then(|| a.im.atan2(a.re).to_degrees()),
        no_echo,
    })
}

/// Wraps an angle in degrees into (−180, 180].
pub fn wrap_degrees(x: f64) -> f64 {
    let r = x.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Echo phase of `b` minus echo phase of `a`, wrapped; `None` if either has
/// no echo.
pub fn phase_shift_between(
    a: &EchoTrace,
    b: &EchoTrace,
    expected_echo_s: f64,
    envelope_fwhm_s: f64,
) -> Result<Option<f64>> {
    if !a.same_grid(b) {
        return Err(Error::InvalidParameter("traces are on different grids".into()));
    }
    let ma = echo_metrics(a, expected_echo_s, envelope_fwhm_s)?;
    let mb = echo_metrics(b, expected_echo_s, envelope_fwhm_s)?;
    Ok(match (ma.phase_deg, mb.phase_deg) {
        (Some(pa), Some(pb)) => Some(wrap_degrees(pb - pa)),
        _ => None,
    })
}

/// Full width at half maximum of |amplitude| around the echo peak, from
/// linear interpolation of the half-maximum crossings. `None` if there is
/// no echo or a crossing lies outside the trace.
pub fn measured_envelope_fwhm_s(trace: &EchoTrace, expected_echo_s: f64, envelope_fwhm_s: f64) -> Result<Option<f64>> {
    let m = echo_metrics(trace, expected_echo_s, envelope_fwhm_s)?;
    if m.no_echo {
        return Ok(None);
    }
    let mag: Vec<f64> = trace.amplitude.iter().map(|a| a.norm()).collect();
    let half = 0.5 * m.peak_magnitude;
    let peak = ((m.peak_time_s - trace.t0_s) / trace.dt_s).round() as usize;
    let cross = |i: usize, j: usize| {
        // Interpolated time where |a| passes `half` between samples i and j.
        let f = (mag[i] - half) / (mag[i] - mag[j]);
        trace.time(i) + f * (trace.time(j) - trace.time(i))
    };
    let left = (1..=peak).rev().find(|&i| mag[i - 1] < half).map(|i| cross(i, i - 1));
    let right = (peak..mag.len() - 1).find(|&i| mag[i + 1] < half).map(|i| cross(i, i + 1));
    Ok(match (left, right) {
        (Some(l), Some(r)) => Some(r - l),
        _ => None,
    })
}
