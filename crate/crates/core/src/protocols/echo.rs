//! Two-pulse photon echo timelines with an optional control perturbation.

use std::f64::consts::{FRAC_2_PI, PI};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::quantum::Pulse;

use super::timeline::{Channel, Timeline, TimelineBuilder};

/// Where the control perturbation goes relative to the target echo pulses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Starts together with the rephasing π pulse.
    WithRephasing,
    /// Starts as soon as the first (π/2) pulse ends.
    AfterFirstPulse,
    /// Identical excursion in both free-precession halves: the pulse at the
    /// start of each half and its phase-inverted copy ending τ later.
    BothHalves,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub pulse: Pulse,
    pub placement: Placement,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoDesign {
    /// Free delay between the end of the π/2 pulse and the start of the π pulse.
    pub tau_s: f64,
    pub target_rabi_hz: f64,
    /// Drive phase shared by both target pulses.
    #[serde(default)]
    pub phase_rad: f64,
    /// How long to keep simulating after the expected echo.
    pub observe_s: f64,
}

impl EchoDesign {
    pub fn new(tau_s: f64, target_rabi_hz: f64) -> Self {
        Self { tau_s, target_rabi_hz, phase_rad: 0.0, observe_s: tau_s }
    }

    pub fn half_pi(&self) -> Pulse {
        Pulse::with_area(self.target_rabi_hz, 0.25, self.phase_rad)
    }

    pub fn pi(&self) -> Pulse {
        Pulse::with_area(self.target_rabi_hz, 0.5, self.phase_rad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EchoTimeline {
    pub timeline: Timeline,
    pub rephasing_start_s: f64,
    pub rephasing_end_s: f64,
    /// Refocusing time: τ after the π pulse plus (2/π)·t(π/2), the
    /// effective free precession of a finite π/2 pulse.
    pub echo_time_s: f64,
}

/// π/2 → τ → π → observation window, with the perturbation inserted.
pub fn make_echo_timeline(design: &EchoDesign, perturb: Option<&Perturbation>) -> Result<EchoTimeline> {
    ensure_finite("tau_s", design.tau_s)?;
    ensure_finite("target_rabi_hz", design.target_rabi_hz)?;
    ensure_finite("observe_s", design.observe_s)?;
    if design.target_rabi_hz <= 0.0 {
        return Err(Error::InvalidParameter("target_rabi_hz must be > 0".into()));
    }
    if design.observe_s < 0.0 {
        return Err(Error::InvalidParameter("observe_s must be >= 0".into()));
    }
    let half = design.half_pi();
    let pi = design.pi();
    let tau = design.tau_s;
    if tau <= half.duration_s + pi.duration_s {
        return Err(Error::Sequence(format!(
            "tau = {tau} s does not exceed the echo pulse durations ({} s)",
            half.duration_s + pi.duration_s
        )));
    }
    let ctrl = perturb.map(|p| p.pulse);
    let d_c = ctrl.map_or(0.0, |p| p.duration_s);
    if let Some(p) = perturb {
        p.pulse.validate()?;
        let fits = match p.placement {
            Placement::WithRephasing => true,
            Placement::AfterFirstPulse => d_c <= tau,
            Placement::BothHalves => 2.0 * d_c <= tau,
        };
        if !fits {
            return Err(Error::Sequence(format!("control pulse of {d_c} s does not fit in tau = {tau} s")));
        }
    }
    let inverse = ctrl.map(|p| Pulse { phase_rad: p.phase_rad + PI, ..p });
    let placement = perturb.map(|p| p.placement);

    let mut b = TimelineBuilder::new();
    let mirrored_half = |b: &mut TimelineBuilder| {
        let (p, q) = (ctrl.unwrap(), inverse.unwrap());
        b.wait(Channel::Target, tau - d_c);
        b.with(Channel::Control, p);
        b.wait(Channel::Target, d_c);
        b.with(Channel::Control, q);
    };

    b.pulse(Channel::Target, half);
    match placement {
        Some(Placement::AfterFirstPulse) => {
            b.wait(Channel::Target, tau);
            b.with(Channel::Control, ctrl.unwrap());
        }
        Some(Placement::BothHalves) => mirrored_half(&mut b),
        _ => {
            b.delay(tau);
        }
    }
    let rephasing_start_s = b.pulse(Channel::Target, pi);
    if placement == Some(Placement::WithRephasing) {
        b.with(Channel::Control, ctrl.unwrap());
    }
    let rephasing_end_s = rephasing_start_s + pi.duration_s;
    if placement == Some(Placement::BothHalves) {
        mirrored_half(&mut b);
    }
    let echo_time_s = rephasing_end_s + tau + FRAC_2_PI * half.duration_s;
    let remaining = echo_time_s + design.observe_s - b.end_s();
    if remaining > 0.0 {
        b.delay(remaining);
    }
    Ok(EchoTimeline { timeline: b.build()?, rephasing_start_s, rephasing_end_s, echo_time_s })
}
