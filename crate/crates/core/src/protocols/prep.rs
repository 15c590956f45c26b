//! Ensemble preparation: Rabi distillation and interaction-based pair
//! selection.
//!
//! Every preparation cycle ends with a wait-for-decay reset. Ions that end
//! a cycle anywhere but the ground state are partly shelved, and the pair
//! weight is multiplied by the ground population after the reset. Each
//! cycle starts again from the (renormalised) ground state, so the survival
//! is the same in every cycle.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::IonPairParams;
use crate::error::{ensure_finite, Error, Result};
use crate::quantum::{apply_pulse, pump_cycle, DensityMatrix3, Pulse, RelaxationParams};

use super::propagate::{CouplingOptions, PairPropagator, PairState};
use super::timeline::{Channel, Timeline, TimelineBuilder};

fn scale_and_detuning(pair: &IonPairParams, channel: Channel) -> (f64, f64) {
    match channel {
        Channel::Target => (pair.target_rabi_scale, pair.target_detuning_hz),
        Channel::Control => (pair.control_rabi_scale, pair.control_detuning_hz),
    }
}

/// Ground population after one nominal-2π pulse plus reset.
pub fn distill_survival(pair: &IonPairParams, channel: Channel, pulse: &Pulse, branch_aux: f64) -> Result<f64> {
    let (scale, detuning) = scale_and_detuning(pair, channel);
    let driven = apply_pulse(&DensityMatrix3::ground(), pulse, detuning, scale)?;
    Ok(pump_cycle(&driven, branch_aux)?.ground_population())
}

/// Repeated 2π pulses on one channel, each followed by a reset. Ions whose
/// Rabi scale or detuning keeps them from completing the cycle lose weight.
pub fn distill_rabi(
    ensemble: &mut [IonPairParams],
    channel: Channel,
    n_cycles: u32,
    pulse: &Pulse,
    relax: &RelaxationParams,
) -> Result<()> {
    pulse.validate()?;
    relax.validate()?;
    if n_cycles == 0 {
        return Err(Error::InvalidParameter("n_cycles must be >= 1".into()));
    }
    ensemble.par_iter_mut().try_for_each(|pair| {
        let survival = distill_survival(pair, channel, pulse, relax.branch_aux)?;
        pair.weight *= survival.powi(n_cycles as i32);
        Ok(())
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectParams {
    /// Free delay on either side of the rephasing pulse.
    pub tau_s: f64,
    /// Design coupling Δ* that is returned to the ground state.
    pub target_coupling_hz: f64,
    pub n_cycles: u32,
    /// Swap the roles of the two ions on every other cycle.
    #[serde(default)]
    pub alternate_roles: bool,
}

impl SelectParams {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("tau_s", self.tau_s)?;
        ensure_finite("target_coupling_hz", self.target_coupling_hz)?;
        if self.tau_s <= 0.0 {
            return Err(Error::InvalidParameter("tau_s must be > 0".into()));
        }
        if self.n_cycles == 0 {
            return Err(Error::InvalidParameter("n_cycles must be >= 1".into()));
        }
        Ok(())
    }

    /// Conditional phase 2π·Δ*·τ picked up by a design pair.
    pub fn design_phase_rad(&self) -> f64 {
        TAU * self.target_coupling_hz * self.tau_s
    }
}

/// Rabi frequencies of the selection pulses (target and control channels).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionPulses {
    pub target_rabi_hz: f64,
    pub control_rabi_hz: f64,
}

/// One selection cycle:
/// target π/2 → τ → (target π ‖ control π) → τ → target π/2(φ) → control π.
///
/// In this frame a pair whose conditional phase equals φ = 2π·Δ*·τ is
/// mapped back to the ground state by the last target pulse.
pub fn selection_timeline(params: &SelectParams, pulses: &SelectionPulses) -> Result<Timeline> {
    params.validate()?;
    let t_pi = Pulse::with_area(pulses.target_rabi_hz, 0.5, 0.0);
    let t_half = Pulse::with_area(pulses.target_rabi_hz, 0.25, 0.0);
    let c_pi = Pulse::with_area(pulses.control_rabi_hz, 0.5, 0.0);
    let mut b = TimelineBuilder::new();
    b.pulse(Channel::Target, t_half);
    b.delay(params.tau_s);
    b.pulse(Channel::Target, t_pi);
    b.with(Channel::Control, c_pi);
    b.delay(params.tau_s);
    b.pulse(Channel::Target, Pulse { phase_rad: params.design_phase_rad(), ..t_half });
    b.pulse(Channel::Control, c_pi);
    b.build()
}

fn swapped(pair: &IonPairParams) -> IonPairParams {
    IonPairParams {
        target_detuning_hz: pair.control_detuning_hz,
        control_detuning_hz: pair.target_detuning_hz,
        target_rabi_scale: pair.control_rabi_scale,
        control_rabi_scale: pair.target_rabi_scale,
        ..*pair
    }
}

/// Target ground population after one selection cycle and reset.
pub fn selection_survival(
    pair: &IonPairParams,
    cycle: &Timeline,
    relax: &RelaxationParams,
    options: &CouplingOptions,
) -> Result<f64> {
    let end = PairPropagator::new(pair, relax, options).run(PairState::ground(), cycle, &[], |_, _, _| {})?;
    Ok(pump_cycle(&end.target, relax.branch_aux)?.ground_population())
}

/// Repeated selection cycles; weights are multiplied by the per-cycle survival.
pub fn pair_select(
    ensemble: &mut [IonPairParams],
    params: &SelectParams,
    pulses: &SelectionPulses,
    relax: &RelaxationParams,
    options: &CouplingOptions,
) -> Result<()> {
    relax.validate()?;
    let cycle = selection_timeline(params, pulses)?;
    let (as_target, as_control) = if params.alternate_roles {
        (params.n_cycles.div_ceil(2), params.n_cycles / 2)
    } else {
        (params.n_cycles, 0)
    };
    ensemble.par_iter_mut().try_for_each(|pair| {
        let mut factor = selection_survival(pair, &cycle, relax, options)?.powi(as_target as i32);
        if as_control > 0 {
            factor *= selection_survival(&swapped(pair), &cycle, relax, options)?.powi(as_control as i32);
        }
        pair.weight *= factor;
        Ok(())
    })
}

/// Ideal-pulse acceptance after `n_cycles`: cos²(π(Δ − Δ*)τ)^n.
pub fn analytic_selection_acceptance(coupling_hz: f64, params: &SelectParams) -> f64 {
    (PI * (coupling_hz - params.target_coupling_hz) * params.tau_s)
        .cos()
        .powi(2)
        .powi(params.n_cycles as i32)
}

/// Distance of Δ from the nearest alias Δ* + k/τ, in (−1/(2τ), 1/(2τ)].
///
/// Couplings differing by a multiple of 1/τ are indistinguishable to an
/// echo of delay τ.
pub fn aliased_coupling_offset(coupling_hz: f64, params: &SelectParams) -> f64 {
    let period = 1.0 / params.tau_s;
    let x = coupling_hz - params.target_coupling_hz;
    x - period * (x / period).round()
}
