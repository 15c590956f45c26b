//! Coupled-pair sequences, preparation and echo timelines against closed forms.

use std::f64::consts::{FRAC_2_PI, PI};

use stark_echo::ensemble::{sample_ensemble, weighted_moments, EnsembleSpec, IonPairParams};
use stark_echo::protocols::{
    aliased_coupling_offset, analytic_selection_acceptance, distill_rabi, distill_survival, make_echo_timeline,
    pair_select, run_sequence, selection_survival, selection_timeline, Channel, CouplingOptions, EchoDesign,
    EchoTimeline, PairPropagator, PairState, Perturbation, Placement, SelectParams, SelectionPulses, Timeline,
    TimelineBuilder,
};
use stark_echo::quantum::{apply_pulse, DensityMatrix3, Pulse, RelaxationParams};
use stark_echo::C64;

const TAU: f64 = 20e-6;

fn no_back_action() -> CouplingOptions {
    CouplingOptions { back_action: false, ..CouplingOptions::default() }
}

fn plus_state() -> DensityMatrix3 {
    let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    DensityMatrix3::pure([a, a, C64::new(0.0, 0.0)]).unwrap()
}

/// Target coherence at each sample time, starting from `initial`.
fn coherences(pair: &IonPairParams, tl: &Timeline, initial: PairState, times: &[f64], opts: &CouplingOptions) -> Vec<C64> {
    let relax = RelaxationParams::none();
    let mut out = vec![C64::new(0.0, 0.0); times.len()];
    PairPropagator::new(pair, &relax, opts).run(initial, tl, times, |k, _, s| out[k] = s.target.coherence()).unwrap();
    out
}

#[test]
fn unpulsed_control_leaves_the_target_alone() {
    let mut b = TimelineBuilder::new();
    b.pulse(Channel::Target, Pulse::with_area(2e6, 0.25, 0.0));
    b.delay(TAU);
    b.pulse(Channel::Target, Pulse::with_area(2e6, 0.5, 0.0));
    b.delay(TAU);
    let tl = b.build().unwrap();
    let relax = RelaxationParams::default();
    let opts = CouplingOptions::default();
    let mut pair = IonPairParams { target_detuning_hz: 12e3, ..IonPairParams::ideal(5e3) };
    let coupled = run_sequence(&pair, &tl, &relax, &opts, Some(1e-6)).unwrap();
    pair.coupling_hz = 0.0;
    let free = run_sequence(&pair, &tl, &relax, &opts, Some(1e-6)).unwrap();
    for (a, b) in coupled.target.iter().zip(&free.target) {
        assert!(a.max_abs_diff(b) <= 1e-12);
    }
}

#[test]
fn held_control_excitation_adds_linear_phase() {
    let coupling = 5e3;
    let d_c = 0.5 / 5e6;
    let mut b = TimelineBuilder::new();
    b.pulse(Channel::Control, Pulse::with_area(5e6, 0.5, 0.0));
    b.delay(10e-6);
    let tl = b.build().unwrap();
    let times: Vec<f64> = (1..=10).map(|k| d_c + k as f64 * 1e-6).collect();
    let initial = PairState { target: plus_state(), control: DensityMatrix3::ground() };
    let on = coherences(&IonPairParams::ideal(coupling), &tl, initial, &times, &no_back_action());
    let off = coherences(&IonPairParams::ideal(0.0), &tl, initial, &times, &no_back_action());
    for ((t, a), b) in times.iter().zip(&on).zip(&off) {
        // Mean excitation over a resonant π pulse is exactly one half.
        let expected = -2.0 * PI * coupling * (t - 0.5 * d_c);
        let got = (a / b).arg();
        assert!((got - expected).abs() < 1e-9, "t = {t}: {got} vs {expected}");
    }
}

#[test]
fn full_control_cycle_costs_half_its_duration_in_phase() {
    let coupling = 3e3;
    let d_c = 1.0 / 5e6;
    let mut b = TimelineBuilder::new();
    b.pulse(Channel::Control, Pulse::with_area(5e6, 1.0, 0.0));
    b.delay(5e-6);
    let tl = b.build().unwrap();
    let end = [tl.duration_s()];
    let initial = PairState { target: plus_state(), control: DensityMatrix3::ground() };
    let on = coherences(&IonPairParams::ideal(coupling), &tl, initial, &end, &no_back_action())[0];
    let off = coherences(&IonPairParams::ideal(0.0), &tl, initial, &end, &no_back_action())[0];
    assert!(((on / off).arg() + 2.0 * PI * coupling * d_c / 2.0).abs() < 1e-12);
    assert!((on.norm() - off.norm()).abs() < 1e-12);
}

#[test]
fn zero_coupling_pairs_ignore_the_control() {
    let design = EchoDesign::new(TAU, 2e6);
    let pert = Perturbation { pulse: Pulse::with_area(5e6, 0.5, 0.3), placement: Placement::WithRephasing };
    let with = make_echo_timeline(&design, Some(&pert)).unwrap();
    let without = make_echo_timeline(&design, None).unwrap();
    let pair = IonPairParams { target_detuning_hz: -7e3, target_rabi_scale: 0.9, ..IonPairParams::ideal(0.0) };
    let relax = RelaxationParams::default();
    let a = run_sequence(&pair, &with.timeline, &relax, &CouplingOptions::default(), Some(0.5e-6)).unwrap();
    let b = run_sequence(&pair, &without.timeline, &relax, &CouplingOptions::default(), Some(0.5e-6)).unwrap();
    for (x, y) in a.target.iter().zip(&b.target) {
        assert!(x.max_abs_diff(y) <= 1e-12);
    }
}

#[test]
fn distillation_examples() {
    let pulse = Pulse::with_area(2e6, 1.0, 0.0);
    let relax = RelaxationParams { branch_aux: 1.0, ..RelaxationParams::default() };
    let mut ens = [IonPairParams::ideal(0.0), IonPairParams { target_rabi_scale: 0.5, ..IonPairParams::ideal(0.0) }];
    distill_rabi(&mut ens[..1], Channel::Target, 10, &pulse, &relax).unwrap();
    assert!((ens[0].weight - 1.0).abs() < 1e-9);
    distill_rabi(&mut ens[1..], Channel::Target, 1, &pulse, &relax).unwrap();
    // Half the Rabi rate turns the nominal 2π pulse into a π pulse.
    let driven = apply_pulse(&DensityMatrix3::ground(), &pulse, 0.0, 0.5).unwrap();
    assert!((ens[1].weight - driven.ground_population()).abs() < 1e-15);
    assert!(ens[1].weight < 1e-12);
}

/// Weighted sd of the Rabi scale for prior N(1, σ0) times a per-cycle
/// survival cos²(π s)-type factor, by quadrature.
fn predicted_scale_sd(sigma0: f64, n: u32, branch: f64) -> f64 {
    let m = 20_001;
    let (lo, hi) = (1.0 - 8.0 * sigma0, 1.0 + 8.0 * sigma0);
    let pts = (0..m).map(|i| {
        let s = lo + (hi - lo) * i as f64 / (m - 1) as f64;
        let prior = (-0.5 * ((s - 1.0) / sigma0).powi(2)).exp();
        let excited = (PI * s).sin().powi(2);
        (s, prior * (1.0 - branch * excited).powi(n as i32))
    });
    weighted_moments(pts).1
}

#[test]
fn distillation_narrows_the_rabi_distribution_as_predicted() {
    let spec = EnsembleSpec { n_pairs: 50_000, antihole_fwhm_hz: 0.0, rng_seed: 9, ..EnsembleSpec::default() };
    let before = sample_ensemble(&spec).unwrap();
    let sd0 = weighted_moments(before.iter().map(|p| (p.target_rabi_scale, p.weight))).1;
    let pulse = Pulse::with_area(2e6, 1.0, 0.0);
    for (n, branch) in [(10, 0.5), (10, 1.0), (50, 1.0)] {
        let mut ens = before.clone();
        let relax = RelaxationParams { branch_aux: branch, ..RelaxationParams::default() };
        distill_rabi(&mut ens, Channel::Target, n, &pulse, &relax).unwrap();
        let sd = weighted_moments(ens.iter().map(|p| (p.target_rabi_scale, p.weight))).1;
        let predicted = predicted_scale_sd(0.1, n, branch);
        assert!((sd / predicted - 1.0).abs() < 0.03, "n = {n}, b = {branch}: {sd} vs {predicted}");
        if n == 50 {
            assert!(sd0 / sd >= 3.0, "shrink {}", sd0 / sd);
        } else {
            assert!(sd < sd0);
        }
    }
}

#[test]
fn distill_survival_equals_single_pulse_closed_form() {
    let pulse = Pulse::with_area(2e6, 1.0, 0.0);
    for (scale, det) in [(1.0, 0.0), (0.8, 0.0), (1.1, 50e3), (0.3, -200e3)] {
        let pair = IonPairParams { target_rabi_scale: scale, target_detuning_hz: det, ..IonPairParams::ideal(0.0) };
        let got = distill_survival(&pair, Channel::Target, &pulse, 1.0).unwrap();
        let omega = 2e6 * scale;
        let w = omega.hypot(det);
        let pe = (omega / w).powi(2) * (PI * w * pulse.duration_s).sin().powi(2);
        assert!((got - (1.0 - pe)).abs() < 1e-12);
    }
}

fn ideal_select(coupling: f64, n_cycles: u32) -> (SelectParams, f64) {
    let sp = SelectParams { tau_s: TAU, target_coupling_hz: 20.0 / 360.0 / TAU, n_cycles, alternate_roles: false };
    // Sub-nanosecond pulses stand in for ideal ones.
    let pulses = SelectionPulses { target_rabi_hz: 1e9, control_rabi_hz: 1e9 };
    let relax = RelaxationParams { branch_aux: 1.0, ..RelaxationParams::none() };
    let mut ens = vec![IonPairParams::ideal(coupling)];
    pair_select(&mut ens, &sp, &pulses, &relax, &CouplingOptions::default()).unwrap();
    (sp, ens[0].weight)
}

#[test]
fn design_coupling_survives_selection() {
    let dstar = 20.0 / 360.0 / TAU;
    for n in [1, 10, 40] {
        let (_, w) = ideal_select(dstar, n);
        assert!((w - 1.0).abs() < 1e-9, "n = {n}: {w}");
    }
    let (_, w) = ideal_select(dstar + 0.5 / TAU, 1);
    assert!(w < 1e-9, "half-period mismatch survives with {w}");
}

#[test]
fn selection_matches_the_cos_squared_law_for_ideal_pulses() {
    let dstar = 20.0 / 360.0 / TAU;
    for k in -20..=20 {
        let coupling = dstar + k as f64 * 1.3e3;
        let (sp, w) = ideal_select(coupling, 3);
        let a = analytic_selection_acceptance(coupling, &sp);
        assert!((w - a).abs() < 1e-4, "coupling {coupling}: {w} vs {a}");
    }
}

#[test]
fn more_cycles_never_raise_off_target_weight() {
    let dstar = 20.0 / 360.0 / TAU;
    let sp = SelectParams { tau_s: TAU, target_coupling_hz: dstar, n_cycles: 1, alternate_roles: false };
    let cycle = selection_timeline(&sp, &SelectionPulses { target_rabi_hz: 2e6, control_rabi_hz: 5e6 }).unwrap();
    let relax = RelaxationParams::default();
    for coupling in [-40e3, -3e3, 0.0, 1e3, 10e3, 26e3] {
        let pair = IonPairParams { target_detuning_hz: 4e3, control_rabi_scale: 0.95, ..IonPairParams::ideal(coupling) };
        let s = selection_survival(&pair, &cycle, &relax, &CouplingOptions::default()).unwrap();
        assert!((0.0..=1.0).contains(&s));
        let mut prev = 1.0;
        for n in 1..=12 {
            let w = s.powi(n);
            assert!(w <= prev);
            prev = w;
        }
    }
}

#[test]
fn selected_ensemble_coupling_spread_is_narrow() {
    let spec = EnsembleSpec { n_pairs: 10_000, ..EnsembleSpec::default() };
    let mut ens = sample_ensemble(&spec).unwrap();
    let sp = SelectParams { tau_s: TAU, target_coupling_hz: 20.0 / 360.0 / TAU, n_cycles: 10, alternate_roles: false };
    let relax = RelaxationParams { branch_aux: 1.0, ..RelaxationParams::default() };
    pair_select(
        &mut ens,
        &sp,
        &SelectionPulses { target_rabi_hz: 2e6, control_rabi_hz: 5e6 },
        &relax,
        &CouplingOptions::default(),
    )
    .unwrap();
    assert!(ens.iter().all(|p| (0.0..=1.0).contains(&p.weight)));
    let (mean, sd) = weighted_moments(ens.iter().map(|p| (aliased_coupling_offset(p.coupling_hz, &sp), p.weight)));
    assert!(sd < 0.25 / TAU, "folded sd {sd}");
    assert!(mean.abs() < sd);
}

#[test]
fn alternate_roles_also_select_on_the_control() {
    let dstar = 20.0 / 360.0 / TAU;
    let sp = SelectParams { tau_s: TAU, target_coupling_hz: dstar, n_cycles: 4, alternate_roles: true };
    let pulses = SelectionPulses { target_rabi_hz: 2e6, control_rabi_hz: 5e6 };
    let relax = RelaxationParams { branch_aux: 1.0, ..RelaxationParams::default() };
    let pair = IonPairParams { control_rabi_scale: 0.7, ..IonPairParams::ideal(dstar) };
    let mut plain = vec![pair];
    let mut alt = vec![pair];
    pair_select(&mut plain, &SelectParams { alternate_roles: false, ..sp }, &pulses, &relax, &CouplingOptions::default()).unwrap();
    pair_select(&mut alt, &sp, &pulses, &relax, &CouplingOptions::default()).unwrap();
    // A poor control-side Rabi scale is only penalised when roles swap.
    assert!(alt[0].weight < plain[0].weight);
}

#[test]
fn echo_timeline_shape() {
    let design = EchoDesign::new(TAU, 2e6);
    let tl = make_echo_timeline(&design, None).unwrap();
    let d90 = 0.25 / 2e6;
    let d180 = 0.5 / 2e6;
    assert_eq!(tl.timeline.segments().len(), 4);
    assert!((tl.rephasing_start_s - (d90 + TAU)).abs() < 1e-15);
    assert!((tl.echo_time_s - (d90 + TAU + d180 + TAU + FRAC_2_PI * d90)).abs() < 1e-15);
    assert!((tl.timeline.duration_s() - (tl.echo_time_s + design.observe_s)).abs() < 1e-15);
    assert!(make_echo_timeline(&EchoDesign::new(1e-7, 2e6), None).is_err());
}

fn echo_coherence(pair: &IonPairParams, tl: &EchoTimeline, relax: &RelaxationParams, opts: &CouplingOptions) -> C64 {
    let mut c = C64::new(0.0, 0.0);
    PairPropagator::new(pair, relax, opts)
        .run(PairState::ground(), &tl.timeline, &[tl.echo_time_s], |_, _, s| c = s.target.coherence())
        .unwrap();
    c
}

/// Echo phase change for a shift switched on during the rephasing π pulse:
/// a detuning active at rotation angle θ of the π pulse enters with weight
/// −cos θ relative to the second half.
fn with_rephasing_closed_form(coupling: f64, target_rabi: f64, control_rabi: f64, tl: &EchoTimeline) -> f64 {
    let d = 0.5 / target_rabi;
    let d_c = 0.5 / control_rabi;
    let n = 200_000;
    let h = d / n as f64;
    let f = |t: f64| {
        let pc = if t < d_c { (PI * control_rabi * t).sin().powi(2) } else { 1.0 };
        -(PI * t / d).cos() * pc
    };
    // Composite Simpson.
    let mut s = f(0.0) + f(d);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let during = s * h / 3.0;
    -2.0 * PI * coupling * (during + tl.echo_time_s - tl.rephasing_end_s)
}

#[test]
fn rephasing_perturbation_matches_closed_form() {
    let design = EchoDesign::new(TAU, 2e6);
    let pert = Perturbation { pulse: Pulse::with_area(5e6, 0.5, 0.0), placement: Placement::WithRephasing };
    let off = make_echo_timeline(&design, None).unwrap();
    let on = make_echo_timeline(&design, Some(&pert)).unwrap();
    let relax = RelaxationParams::none();
    for coupling in [2777.8, -1e3, 10e3] {
        let pair = IonPairParams::ideal(coupling);
        let got = (echo_coherence(&pair, &on, &relax, &no_back_action())
            / echo_coherence(&pair, &off, &relax, &no_back_action()))
        .arg();
        let expected = with_rephasing_closed_form(coupling, 2e6, 5e6, &on);
        assert!((got - expected).abs() < 1e-5, "coupling {coupling}: {got} vs {expected}");
    }
}

#[test]
fn excitation_from_the_first_half_on_mostly_cancels() {
    let design = EchoDesign::new(TAU, 2e6);
    let d_c = 0.5 / 5e6;
    let pert = Perturbation { pulse: Pulse::with_area(5e6, 0.5, 0.0), placement: Placement::AfterFirstPulse };
    let off = make_echo_timeline(&design, None).unwrap();
    let on = make_echo_timeline(&design, Some(&pert)).unwrap();
    let relax = RelaxationParams::none();
    let coupling = 2777.8;
    let pair = IonPairParams::ideal(coupling);
    let got = (echo_coherence(&pair, &on, &relax, &no_back_action())
        / echo_coherence(&pair, &off, &relax, &no_back_action()))
    .arg();
    // −(τ − d_c/2) before the π pulse, nothing net during it, then τ + (2/π)·t(π/2).
    let expected = -2.0 * PI * coupling * (0.5 * d_c + FRAC_2_PI * design.half_pi().duration_s);
    // First order in Δ·t(π); the remainder is of order 1e-6 rad here.
    assert!((got - expected).abs() < 1e-5, "{got} vs {expected}");
}

#[test]
fn symmetric_shift_cancels_exactly() {
    let design = EchoDesign::new(TAU, 2e6);
    let pert = Perturbation { pulse: Pulse::with_area(5e6, 0.5, 0.0), placement: Placement::BothHalves };
    let off = make_echo_timeline(&design, None).unwrap();
    let on = make_echo_timeline(&design, Some(&pert)).unwrap();
    let relax = RelaxationParams::none();
    for coupling in [100.0, 2777.8, -20e3, 300e3] {
        let pair = IonPairParams::ideal(coupling);
        let phase = (echo_coherence(&pair, &on, &relax, &no_back_action())
            / echo_coherence(&pair, &off, &relax, &no_back_action()))
        .arg();
        assert!(phase.abs() < 1e-9, "coupling {coupling}: {phase}");
    }
}

#[test]
fn trajectories_stay_physical() {
    let spec = EnsembleSpec { n_pairs: 50, dopant_density_per_nm3: 5e-6, rng_seed: 3, ..EnsembleSpec::default() };
    let design = EchoDesign::new(TAU, 2e6);
    let relax = RelaxationParams::default();
    for placement in [Placement::WithRephasing, Placement::AfterFirstPulse, Placement::BothHalves] {
        let pert = Perturbation { pulse: Pulse::with_area(5e6, 0.5, 0.0), placement };
        let tl = make_echo_timeline(&design, Some(&pert)).unwrap();
        for pair in sample_ensemble(&spec).unwrap() {
            let traj = run_sequence(&pair, &tl.timeline, &relax, &CouplingOptions::default(), Some(0.25e-6)).unwrap();
            for s in traj.target.iter().chain(&traj.control) {
                s.check().unwrap();
            }
        }
    }
}

#[test]
fn sample_times_outside_the_timeline_are_range_errors() {
    let tl = make_echo_timeline(&EchoDesign::new(TAU, 2e6), None).unwrap();
    let relax = RelaxationParams::default();
    let opts = CouplingOptions::default();
    let pair = IonPairParams::ideal(0.0);
    let prop = PairPropagator::new(&pair, &relax, &opts);
    let late = [tl.timeline.duration_s() * 1.01];
    assert!(matches!(prop.run(PairState::ground(), &tl.timeline, &late, |_, _, _| {}), Err(stark_echo::Error::Range(_))));
    let unsorted = [2e-6, 1e-6];
    assert!(prop.run(PairState::ground(), &tl.timeline, &unsorted, |_, _, _| {}).is_err());
}
