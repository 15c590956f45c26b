//! Coupled propagation of one control–target pair through a timeline.
//!
//! The dipole interaction enters as a c-number detuning: the target sits at
//! `target_detuning_hz + coupling_hz · P_e(control)`, and with back-action
//! enabled the control sits at `control_detuning_hz + coupling_hz · P_e(target)`.
//!
//! Within a segment where at most one ion is driven, the idle ion's shift
//! is set by the time average of the driven ion's excitation, which is
//! closed form for a fixed-axis rotation, so such segments are exact up to
//! T1 decay of the neighbour during a pulse. Segments with both ions driven
//! are cut into sub-steps with two fixed-point passes on the averages.

use serde::{Deserialize, Serialize};

use crate::ensemble::IonPairParams;
use crate::error::{Error, Result};
use crate::quantum::{
    apply_pulse, free_evolve_unchecked, mean_decay_factor, mean_excited_during_pulse, DensityMatrix3, Pulse,
    RelaxationParams,
};

use super::timeline::{Segment, Timeline};

/// Sample times within this distance past the end still count as inside.
const SAMPLE_EPS_S: f64 = 1e-12;

/// Sub-steps resolve this many points per generalized Rabi period.
const STEPS_PER_PERIOD: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingOptions {
    /// Shift the control by the target's excitation as well.
    pub back_action: bool,
    /// During target pulses, hold the control excitation seen by the target
    /// at its value at the start of the segment.
    pub frozen_control_during_target_pulses: bool,
    /// Upper bound on sub-steps when both channels are driven.
    pub max_substep_s: f64,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self { back_action: true, frozen_control_during_target_pulses: false, max_substep_s: 100e-9 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairState {
    pub target: DensityMatrix3,
    pub control: DensityMatrix3,
}

impl PairState {
    pub fn ground() -> Self {
        Self::default()
    }
}

/// Per-sample record of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairTrajectory {
    pub times_s: Vec<f64>,
    pub target: Vec<DensityMatrix3>,
    pub control: Vec<DensityMatrix3>,
}

impl PairTrajectory {
    pub fn target_coherence(&self) -> impl Iterator<Item = crate::C64> + '_ {
        self.target.iter().map(DensityMatrix3::coherence)
    }
}

/// Steps one pair through timeline segments.
#[derive(Clone, Copy, Debug)]
pub struct PairPropagator<'a> {
    pub pair: &'a IonPairParams,
    pub relax: &'a RelaxationParams,
    pub options: &'a CouplingOptions,
}

impl<'a> PairPropagator<'a> {
    pub fn new(pair: &'a IonPairParams, relax: &'a RelaxationParams, options: &'a CouplingOptions) -> Self {
        Self { pair, relax, options }
    }

    fn back_coupling(&self) -> f64 {
        if self.options.back_action {
            self.pair.coupling_hz
        } else {
            0.0
        }
    }

    /// Advances `state` by `duration_s` with the given drives.
    pub fn step(
        &self,
        state: &mut PairState,
        target: Option<&Pulse>,
        control: Option<&Pulse>,
        duration_s: f64,
    ) -> Result<()> {
        if duration_s <= 0.0 {
            return Ok(());
        }
        let pair = self.pair;
        let coupling = pair.coupling_hz;
        let back = self.back_coupling();
        let decay = mean_decay_factor(duration_s, self.relax.t1_s);
        let pt0 = state.target.excited_population();
        let pc0 = state.control.excited_population();

        match (target, control) {
            (None, None) => {
                let t_det = pair.target_detuning_hz + coupling * pc0 * decay;
                let c_det = pair.control_detuning_hz + back * pt0 * decay;
                state.target = free_evolve_unchecked(&state.target, duration_s, t_det, self.relax);
                state.control = free_evolve_unchecked(&state.control, duration_s, c_det, self.relax);
            }
            (Some(tp), None) => {
                let tp = tp.with_duration(duration_s);
                let seen = if self.options.frozen_control_during_target_pulses { pc0 } else { pc0 * decay };
                let t_det = pair.target_detuning_hz + coupling * seen;
                let mean_t = mean_excited_during_pulse(&state.target, &tp, t_det, pair.target_rabi_scale)?;
                state.target = apply_pulse(&state.target, &tp, t_det, pair.target_rabi_scale)?;
                let c_det = pair.control_detuning_hz + back * mean_t;
                state.control = free_evolve_unchecked(&state.control, duration_s, c_det, self.relax);
            }
            (None, Some(cp)) => {
                let cp = cp.with_duration(duration_s);
                let c_det = pair.control_detuning_hz + back * pt0 * decay;
                let mean_c = mean_excited_during_pulse(&state.control, &cp, c_det, pair.control_rabi_scale)?;
                state.control = apply_pulse(&state.control, &cp, c_det, pair.control_rabi_scale)?;
                let t_det = pair.target_detuning_hz + coupling * mean_c;
                state.target = free_evolve_unchecked(&state.target, duration_s, t_det, self.relax);
            }
            (Some(tp), Some(cp)) => self.step_both(state, tp, cp, duration_s)?,
        }
        Ok(())
    }

    fn step_both(&self, state: &mut PairState, tp: &Pulse, cp: &Pulse, duration_s: f64) -> Result<()> {
        let pair = self.pair;
        let coupling = pair.coupling_hz;
        let back = self.back_coupling();
        let rate = |p: &Pulse, scale: f64, det: f64| (p.rabi_hz * scale).hypot(det - p.extra_detuning_hz);
        let fastest = rate(tp, pair.target_rabi_scale, pair.target_detuning_hz)
            .max(rate(cp, pair.control_rabi_scale, pair.control_detuning_hz));
        let mut h_max = self.options.max_substep_s;
        if fastest > 0.0 {
            h_max = h_max.min(1.0 / (STEPS_PER_PERIOD * fastest));
        }
        let n = (duration_s / h_max).ceil().max(1.0) as usize;
        let h = duration_s / n as f64;
        let tp = tp.with_duration(h);
        let cp = cp.with_duration(h);
        let frozen_pc = state.control.excited_population();

        for _ in 0..n {
            let mut mean_t = state.target.excited_population();
            let mut mean_c = state.control.excited_population();
            let seen_c = |m: f64| if self.options.frozen_control_during_target_pulses { frozen_pc } else { m };
            for _ in 0..2 {
                let t_det = pair.target_detuning_hz + coupling * seen_c(mean_c);
                let c_det = pair.control_detuning_hz + back * mean_t;
                let next_t = mean_excited_during_pulse(&state.target, &tp, t_det, pair.target_rabi_scale)?;
                let next_c = mean_excited_during_pulse(&state.control, &cp, c_det, pair.control_rabi_scale)?;
                mean_t = next_t;
                mean_c = next_c;
            }
            let t_det = pair.target_detuning_hz + coupling * seen_c(mean_c);
            let c_det = pair.control_detuning_hz + back * mean_t;
            state.target = apply_pulse(&state.target, &tp, t_det, pair.target_rabi_scale)?;
            state.control = apply_pulse(&state.control, &cp, c_det, pair.control_rabi_scale)?;
        }
        Ok(())
    }

    fn step_partial(&self, state: &mut PairState, seg: &Segment, duration_s: f64) -> Result<()> {
        self.step(state, seg.target.as_ref(), seg.control.as_ref(), duration_s)
    }

    /// Runs the whole timeline, calling `observe(k, t, state)` at each of
    /// the sorted `sample_times_s`.
    pub fn run<F>(&self, initial: PairState, timeline: &Timeline, sample_times_s: &[f64], mut observe: F) -> Result<PairState>
    where
        F: FnMut(usize, f64, &PairState),
    {
        if sample_times_s.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Range("sample times must be sorted".into()));
        }
        if let Some(&first) = sample_times_s.first() {
            if first < 0.0 {
                return Err(Error::Range(format!("sample time {first} s precedes the timeline")));
            }
        }
        if let Some(&last) = sample_times_s.last() {
            if last > timeline.duration_s() + SAMPLE_EPS_S {
                return Err(Error::Range(format!(
                    "sample time {last} s is past the end of the timeline ({} s)",
                    timeline.duration_s()
                )));
            }
        }

        let mut state = initial;
        let mut k = 0;
        // Samples at t = 0 see the initial state.
        while k < sample_times_s.len() && sample_times_s[k] <= 0.0 {
            observe(k, sample_times_s[k], &state);
            k += 1;
        }
        for seg in timeline.segments() {
            let mut cursor = seg.start_s;
            let end = seg.end_s();
            while k < sample_times_s.len() && sample_times_s[k] <= end + SAMPLE_EPS_S {
                let t = sample_times_s[k].clamp(cursor, end);
                self.step_partial(&mut state, seg, t - cursor)?;
                cursor = t;
                observe(k, sample_times_s[k], &state);
                k += 1;
            }
            self.step_partial(&mut state, seg, end - cursor)?;
        }
        Ok(state)
    }
}

/// Uniform sample grid `start, start + dt, …` up to and including `end`.
pub fn uniform_grid(start_s: f64, end_s: f64, dt_s: f64) -> Result<Vec<f64>> {
    if !(dt_s > 0.0) || !start_s.is_finite() || !end_s.is_finite() || end_s < start_s {
        return Err(Error::Range(format!("bad grid [{start_s}, {end_s}] step {dt_s}")));
    }
    let n = ((end_s - start_s) / dt_s + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start_s + i as f64 * dt_s).collect())
}

/// Runs a pair from the ground state and records both ions on a uniform
/// grid of step `sample_dt_s` (or only the final state when `None`).
pub fn run_sequence(
    pair: &IonPairParams,
    timeline: &Timeline,
    relax: &RelaxationParams,
    options: &CouplingOptions,
    sample_dt_s: Option<f64>,
) -> Result<PairTrajectory> {
    let times = match sample_dt_s {
        Some(dt) => uniform_grid(0.0, timeline.duration_s(), dt)?,
        None => vec![timeline.duration_s()],
    };
    let mut traj = PairTrajectory {
        times_s: Vec::with_capacity(times.len()),
        target: Vec::with_capacity(times.len()),
        control: Vec::with_capacity(times.len()),
    };
    PairPropagator::new(pair, relax, options).run(PairState::ground(), timeline, &times, |_, t, s| {
        traj.times_s.push(t);
        traj.target.push(s.target);
        traj.control.push(s.control);
    })?;
    Ok(traj)
}
