//! The three experiment runners.

use log::info;
use serde::{Deserialize, Serialize};
use stark_echo::detection::{
    echo_metrics, echo_signal, fourier_envelope_fwhm_s, phase_shift_between, EchoMetrics, EchoTrace, Window,
};
use stark_echo::ensemble::{sample_ensemble, weighted_moments, IonPairParams};
use stark_echo::protocols::{
    aliased_coupling_offset, analytic_selection_acceptance, distill_rabi, make_echo_timeline, pair_select,
    run_sequence, selection_survival, selection_timeline, Channel, EchoDesign, EchoTimeline, Perturbation,
    SelectParams, SelectionPulses,
};
use stark_echo::quantum::Pulse;

use crate::config::{ExperimentConfig, SelectionConfig};
use crate::output::{write_csv, write_json, write_trace};
use crate::{HarnessError, RunOutput};

/// Grid used for the coupling spread of the selectivity curve.
const CURVE_SPREAD_POINTS: usize = 2001;

/// Pairs written out when trajectories are requested.
const TRAJECTORY_PAIRS: usize = 8;

pub fn select_params(cfg: &ExperimentConfig, sel: &SelectionConfig) -> SelectParams {
    SelectParams {
        tau_s: cfg.sequence.tau_s,
        target_coupling_hz: sel.target_coupling_hz,
        n_cycles: sel.n_cycles,
        alternate_roles: sel.alternate_roles,
    }
}

fn selection_pulses(cfg: &ExperimentConfig) -> SelectionPulses {
    SelectionPulses { target_rabi_hz: cfg.sequence.target_rabi_hz, control_rabi_hz: cfg.sequence.control_rabi_hz }
}

/// Sample, optionally fix the coupling, then distill and select as configured.
pub fn prepare_ensemble(cfg: &ExperimentConfig, with_selection: bool) -> Result<Vec<IonPairParams>, HarnessError> {
    let mut ens = sample_ensemble(&cfg.ensemble)?;
    if let Some(c) = cfg.fixed_coupling_hz {
        ens.iter_mut().for_each(|p| p.coupling_hz = c);
    }
    if let Some(d) = &cfg.distillation {
        let relax = cfg.prep_relaxation(d.branch_aux);
        let seq = &cfg.sequence;
        distill_rabi(&mut ens, Channel::Target, d.n_cycles, &Pulse::with_area(seq.target_rabi_hz, 1.0, 0.0), &relax)?;
        distill_rabi(&mut ens, Channel::Control, d.n_cycles, &Pulse::with_area(seq.control_rabi_hz, 1.0, 0.0), &relax)?;
        info!("distilled: active weight {:.4}", total_weight(&ens));
    }
    if let (true, Some(sel)) = (with_selection, &cfg.selection) {
        let relax = cfg.prep_relaxation(sel.branch_aux);
        pair_select(&mut ens, &select_params(cfg, sel), &selection_pulses(cfg), &relax, &cfg.coupling)?;
        info!("selected: active weight {:.4}", total_weight(&ens));
    }
    Ok(ens)
}

fn total_weight(ens: &[IonPairParams]) -> f64 {
    ens.iter().map(|p| p.weight).sum()
}

fn envelope_fwhm(cfg: &ExperimentConfig) -> f64 {
    fourier_envelope_fwhm_s(cfg.ensemble.antihole_fwhm_hz)
}

fn half_window(cfg: &ExperimentConfig) -> f64 {
    cfg.detection.half_window_envelopes * envelope_fwhm(cfg)
}

fn echo_design(cfg: &ExperimentConfig) -> EchoDesign {
    EchoDesign { observe_s: half_window(cfg), ..EchoDesign::new(cfg.sequence.tau_s, cfg.sequence.target_rabi_hz) }
}

/// Echo run with the control perturbation of `duration_s` (none if zero).
fn run_echo(
    cfg: &ExperimentConfig,
    ens: &[IonPairParams],
    control_duration_s: f64,
    description: &str,
    noise_stream: u64,
) -> Result<(EchoTimeline, EchoTrace), HarnessError> {
    let pert = Perturbation {
        pulse: Pulse::new(cfg.sequence.control_rabi_hz, 0.0, control_duration_s),
        placement: cfg.sequence.perturb_placement,
    };
    let tl = make_echo_timeline(&echo_design(cfg), (control_duration_s > 0.0).then_some(&pert))?;
    let half = half_window(cfg);
    let window = Window {
        t_start_s: (tl.echo_time_s - half).max(tl.timeline.final_free_start_s()),
        t_end_s: tl.echo_time_s + half,
        dt_s: cfg.detection.dt_s,
    };
    let mut trace = echo_signal(ens, &tl.timeline, &cfg.relaxation, &cfg.coupling, &window)?;
    if let Some(sigma) = cfg.detection.noise_sigma {
        let seed = cfg.ensemble.rng_seed.wrapping_add(noise_stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        trace = trace.with_detector_noise(sigma * trace.metadata.total_weight, seed)?;
    }
    trace.metadata.description = description.to_string();
    trace.metadata.seed = Some(cfg.ensemble.rng_seed);
    Ok((tl, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemolitionSummary {
    pub experiment: String,
    pub n_pairs: usize,
    pub seed: u64,
    pub total_weight: f64,
    pub control_rabi_hz: f64,
    pub rabi_period_s: f64,
    pub baseline_magnitude: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Ratios to the baseline at the interior local minima of the scan.
    pub local_minima_ratio: Vec<f64>,
    /// Ratios at the local maxima, excluding the first scan point.
    pub local_maxima_ratio: Vec<f64>,
    pub no_echo_points: usize,
}

/// Local minima and maxima of a sampled curve; the first point is never
/// counted, the last only as a maximum or minimum against its neighbour.
pub fn local_extrema(r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (mut minima, mut maxima) = (Vec::new(), Vec::new());
    let n = r.len();
    for i in 1..n {
        let next = if i + 1 < n { r[i + 1] } else { r[i] };
        if r[i] < r[i - 1] && r[i] <= next {
            minima.push(r[i]);
        }
        if r[i] > r[i - 1] && r[i] >= next {
            maxima.push(r[i]);
        }
    }
    (minima, maxima)
}

pub fn run_demolition_scan(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let ens = prepare_ensemble(cfg, false)?;
    let env = envelope_fwhm(cfg);
    let (base_tl, base_trace) = run_echo(cfg, &ens, 0.0, "control off", 0)?;
    let base = echo_metrics(&base_trace, base_tl.echo_time_s, env)?;
    info!("control-off echo magnitude {:.6}", base.peak_magnitude);

    let durations = cfg.control_duration_scan.expect("validated").points();
    let mut magnitudes = Vec::with_capacity(durations.len());
    let mut no_echo_points = 0;
    for (k, &tc) in durations.iter().enumerate() {
        let (tl, trace) = run_echo(cfg, &ens, tc, "control on", k as u64 + 1)?;
        let m = echo_metrics(&trace, tl.echo_time_s, env)?;
        if m.no_echo {
            no_echo_points += 1;
        }
        let mag = if m.no_echo { 0.0 } else { m.peak_magnitude };
        info!("t_c = {tc:.4e} s: ratio {:.4}", mag / base.peak_magnitude);
        magnitudes.push(mag);
    }

    let dir = &cfg.output_dir;
    let rows = durations
        .iter()
        .zip(&magnitudes)
        .map(|(t, m)| vec![t.to_string(), m.to_string(), base.peak_magnitude.to_string()]);
    let csv = write_csv(&dir.join("demolition_scan.csv"), &["t_c_s", "echo_magnitude", "echo_magnitude_control_off"], rows)?;

    let ratios: Vec<f64> = magnitudes.iter().map(|m| m / base.peak_magnitude).collect();
    let (local_minima_ratio, local_maxima_ratio) = local_extrema(&ratios);
    let summary = DemolitionSummary {
        experiment: "demolition_scan".into(),
        n_pairs: ens.len(),
        seed: cfg.ensemble.rng_seed,
        total_weight: total_weight(&ens),
        control_rabi_hz: cfg.sequence.control_rabi_hz,
        rabi_period_s: 1.0 / cfg.sequence.control_rabi_hz,
        baseline_magnitude: base.peak_magnitude,
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().skip(1).copied().fold(f64::NEG_INFINITY, f64::max),
        local_minima_ratio,
        local_maxima_ratio,
        no_echo_points,
    };
    let json = write_json(&dir.join("demolition_summary.json"), &summary)?;
    Ok(RunOutput { files: vec![csv, json] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPhaseSummary {
    pub experiment: String,
    pub n_pairs: usize,
    pub seed: u64,
    pub prepared_weight: f64,
    pub tau_s: f64,
    /// 360°·Δ*·τ when pair selection ran.
    pub design_phase_deg: Option<f64>,
    pub expected_echo_time_s: f64,
    pub envelope_fwhm_s: f64,
    /// Phase lag of the control-on echo behind the control-off echo.
    pub phase_shift_deg: Option<f64>,
    pub magnitude_ratio: Option<f64>,
    /// Weighted spread of couplings around the nearest alias of Δ*.
    pub folded_coupling_sd_hz: Option<f64>,
    pub control_off: EchoMetrics,
    pub control_on: EchoMetrics,
}

pub fn run_conditional_phase(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let ens = prepare_ensemble(cfg, true)?;
    let env = envelope_fwhm(cfg);
    let tc = cfg.sequence.control_pulse_area / cfg.sequence.control_rabi_hz;
    let (off_tl, off) = run_echo(cfg, &ens, 0.0, "control off", 0)?;
    let (on_tl, on) = run_echo(cfg, &ens, tc, "control on", 1)?;
    // Both arms share the target pulses, so the echo time is common.
    let echo_time = on_tl.echo_time_s;
    debug_assert!((echo_time - off_tl.echo_time_s).abs() < 1e-15);
    let m_off = echo_metrics(&off, echo_time, env)?;
    let m_on = echo_metrics(&on, echo_time, env)?;
    let phase_shift_deg = phase_shift_between(&on, &off, echo_time, env)?;
    let magnitude_ratio = (!m_off.no_echo).then(|| m_on.peak_magnitude / m_off.peak_magnitude);
    info!("phase shift {phase_shift_deg:?} deg, magnitude ratio {magnitude_ratio:?}");

    let sel = cfg.selection.as_ref().map(|s| select_params(cfg, s));
    let folded_coupling_sd_hz = sel.map(|sp| {
        weighted_moments(ens.iter().map(|p| (aliased_coupling_offset(p.coupling_hz, &sp), p.weight))).1
    });
    let dir = &cfg.output_dir;
    let mut files = vec![
        write_trace(&dir.join("trace_control_off.csv"), &off)?,
        write_trace(&dir.join("trace_control_on.csv"), &on)?,
    ];
    if cfg.emit_trajectories {
        files.push(write_trajectories(cfg, &ens, &[("control_off", &off_tl), ("control_on", &on_tl)])?);
    }
    let summary = ConditionalPhaseSummary {
        experiment: "conditional_phase".into(),
        n_pairs: ens.len(),
        seed: cfg.ensemble.rng_seed,
        prepared_weight: total_weight(&ens),
        tau_s: cfg.sequence.tau_s,
        design_phase_deg: sel.map(|sp| sp.design_phase_rad().to_degrees()),
        expected_echo_time_s: echo_time,
        envelope_fwhm_s: env,
        phase_shift_deg,
        magnitude_ratio,
        folded_coupling_sd_hz,
        control_off: m_off,
        control_on: m_on,
    };
    files.push(write_json(&dir.join("conditional_phase_summary.json"), &summary)?);
    Ok(RunOutput { files })
}

fn write_trajectories(
    cfg: &ExperimentConfig,
    ens: &[IonPairParams],
    arms: &[(&str, &EchoTimeline)],
) -> Result<std::path::PathBuf, HarnessError> {
    let mut rows = Vec::new();
    for (arm, tl) in arms {
        for (i, pair) in ens.iter().take(TRAJECTORY_PAIRS).enumerate() {
            let traj = run_sequence(pair, &tl.timeline, &cfg.relaxation, &cfg.coupling, Some(cfg.detection.dt_s))?;
            for (k, t) in traj.times_s.iter().enumerate() {
                let (tg, ct) = (&traj.target[k], &traj.control[k]);
                let c = tg.coherence();
                rows.push(vec![
                    arm.to_string(),
                    i.to_string(),
                    t.to_string(),
                    tg.excited_population().to_string(),
                    c.re.to_string(),
                    c.im.to_string(),
                    ct.excited_population().to_string(),
                ]);
            }
        }
    }
    write_csv(
        &cfg.output_dir.join("trajectories.csv"),
        &["arm", "pair", "t_s", "target_excited", "target_re_ge", "target_im_ge", "control_excited"],
        rows,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectivitySummary {
    pub experiment: String,
    pub tau_s: f64,
    pub target_coupling_hz: f64,
    pub n_cycles: u32,
    pub n_points: usize,
    /// RMS of simulated minus analytic weight over the scan.
    pub rms_deviation: f64,
    pub max_deviation: f64,
    /// Weighted coupling spread of the simulated curve over one period
    /// Δ* ± 1/(2τ).
    pub curve_coupling_sd_hz: f64,
    pub quarter_period_hz: f64,
    /// Same spread for the prepared Monte Carlo ensemble, folded into the
    /// principal alias interval.
    pub ensemble_folded_coupling_sd_hz: f64,
    pub ensemble_prepared_weight: f64,
    pub n_pairs: usize,
    pub seed: u64,
}

pub fn run_selectivity_scan(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let sel = cfg.selection.expect("validated");
    let sp = select_params(cfg, &sel);
    let relax = cfg.prep_relaxation(sel.branch_aux);
    let cycle = selection_timeline(&sp, &selection_pulses(cfg))?;
    let single = |coupling: f64| -> Result<f64, HarnessError> {
        let per_cycle = selection_survival(&IonPairParams::ideal(coupling), &cycle, &relax, &cfg.coupling)?;
        Ok(per_cycle.powi(sp.n_cycles as i32))
    };

    let couplings = cfg.coupling_scan.expect("validated").points();
    let simulated = couplings.iter().map(|&c| single(c)).collect::<Result<Vec<_>, _>>()?;
    let analytic: Vec<f64> = couplings.iter().map(|&c| analytic_selection_acceptance(c, &sp)).collect();
    let dev: Vec<f64> = simulated.iter().zip(&analytic).map(|(s, a)| s - a).collect();
    let rms_deviation = (dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64).sqrt();
    let max_deviation = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));

    let period = 1.0 / sp.tau_s;
    let spread_grid: Vec<f64> = (0..CURVE_SPREAD_POINTS)
        .map(|i| sp.target_coupling_hz + period * (i as f64 / (CURVE_SPREAD_POINTS - 1) as f64 - 0.5))
        .collect();
    let spread_weights = spread_grid.iter().map(|&c| single(c)).collect::<Result<Vec<_>, _>>()?;
    let curve_coupling_sd_hz = weighted_moments(spread_grid.iter().copied().zip(spread_weights)).1;

    let ens = prepare_ensemble(cfg, true)?;
    let ensemble_folded_coupling_sd_hz =
        weighted_moments(ens.iter().map(|p| (aliased_coupling_offset(p.coupling_hz, &sp), p.weight))).1;
    info!("selectivity: rms deviation {rms_deviation:.3e}, curve sd {curve_coupling_sd_hz:.1} Hz");

    let dir = &cfg.output_dir;
    let rows = couplings
        .iter()
        .zip(simulated.iter().zip(&analytic))
        .map(|(c, (s, a))| vec![c.to_string(), s.to_string(), a.to_string()]);
    let csv = write_csv(&dir.join("selectivity_scan.csv"), &["coupling_hz", "weight", "analytic_weight"], rows)?;
    let summary = SelectivitySummary {
        experiment: "selectivity_scan".into(),
        tau_s: sp.tau_s,
        target_coupling_hz: sp.target_coupling_hz,
        n_cycles: sp.n_cycles,
        n_points: couplings.len(),
        rms_deviation,
        max_deviation,
        curve_coupling_sd_hz,
        quarter_period_hz: 0.25 / sp.tau_s,
        ensemble_folded_coupling_sd_hz,
        ensemble_prepared_weight: total_weight(&ens),
        n_pairs: ens.len(),
        seed: cfg.ensemble.rng_seed,
    };
    let json = write_json(&dir.join("selectivity_summary.json"), &summary)?;
    Ok(RunOutput { files: vec![csv, json] })
}
