//! Self-check suite behind the `validate` experiment.
//!
//! Each check runs a property of the simulator with fixed seeds and small
//! sizes and records pass/fail with a short detail string. The report is
//! written as `validation_report.json`; any failure makes the run fail.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stark_echo::detection::{echo_metrics, echo_signal, fourier_envelope_fwhm_s, phase_shift_between, Window};
use stark_echo::ensemble::{sample_ensemble, EnsembleSpec, IonPairParams, MIN_RABI_SCALE};
use stark_echo::protocols::{
    make_echo_timeline, CouplingOptions, EchoDesign, EchoTimeline, PairPropagator, PairState, Perturbation, Placement,
};
use stark_echo::quantum::{apply_pulse, free_evolve, DensityMatrix3, Pulse, RelaxationParams};
use stark_echo::C64;

use crate::config::ExperimentConfig;
use crate::output::write_json;
use crate::{HarnessError, RunOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub experiment: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.into(), passed, detail }
}

type M2 = [[C64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn axpy(a: &M2, s: f64, b: &M2) -> M2 {
    let mut out = *a;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += b[i][j] * s;
        }
    }
    out
}

/// RK4 of dU/dt = −i·2π·H·U with H = ½(Ω cosφ σx + Ω sinφ σy + δ σz),
/// step at most `max_step_s`.
pub fn brute_force_propagator(rabi_hz: f64, phase_rad: f64, detuning_hz: f64, duration_s: f64, max_step_s: f64) -> M2 {
    let z = C64::new(0.0, 0.0);
    let off = C64::from_polar(0.5 * rabi_hz, -phase_rad);
    let h = [[C64::new(0.5 * detuning_hz, 0.0), off], [off.conj(), C64::new(-0.5 * detuning_hz, 0.0)]];
    // G = −i·2π·H
    let mut g = [[z; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            g[i][j] = h[i][j] * C64::new(0.0, -2.0 * PI);
        }
    }
    let n = (duration_s / max_step_s).ceil().max(1.0) as usize;
    let dt = duration_s / n as f64;
    let mut u = [[C64::new(1.0, 0.0), z], [z, C64::new(1.0, 0.0)]];
    for _ in 0..n {
        let k1 = mul(&g, &u);
        let k2 = mul(&g, &axpy(&u, 0.5 * dt, &k1));
        let k3 = mul(&g, &axpy(&u, 0.5 * dt, &k2));
        let k4 = mul(&g, &axpy(&u, dt, &k3));
        for i in 0..2 {
            for j in 0..2 {
                u[i][j] += (k1[i][j] + (k2[i][j] + k3[i][j]) * 2.0 + k4[i][j]) * (dt / 6.0);
            }
        }
    }
    u
}

/// ρ → U ρ U† on the g,e block of a 3×3 density matrix.
pub fn conjugate(u: &M2, state: &DensityMatrix3) -> [[C64; 3]; 3] {
    let r = state.matrix();
    let mut out = *r;
    for i in 0..2 {
        for j in 0..3 {
            let ui = u[i][0] * r[0][j] + u[i][1] * r[1][j];
            out[i][j] = ui;
        }
    }
    let rows = out;
    for i in 0..3 {
        for j in 0..2 {
            out[i][j] = rows[i][0] * u[j][0].conj() + rows[i][1] * u[j][1].conj();
        }
    }
    out
}

fn max_abs_diff(a: &[[C64; 3]; 3], b: &[[C64; 3]; 3]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn random_state(rng: &mut ChaCha8Rng) -> DensityMatrix3 {
    let psi = [
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
    ];
    let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    DensityMatrix3::pure(psi.map(|c| c / norm)).expect("normalised state")
}

fn random_pulse(rng: &mut ChaCha8Rng) -> (Pulse, f64) {
    let pulse = Pulse::new(rng.random_range(0.1e6..5e6), rng.random_range(-PI..PI), rng.random_range(10e-9..1e-6));
    (pulse, rng.random_range(-2e6..2e6))
}

pub fn propagator_oracle(n: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (p, det) = random_pulse(&mut rng);
        let rho = random_state(&mut rng);
        let exact = apply_pulse(&rho, &p, det, 1.0).expect("valid pulse");
        let u = brute_force_propagator(p.rabi_hz, p.phase_rad, det, p.duration_s, 0.5e-9);
        worst = worst.max(max_abs_diff(exact.matrix(), &conjugate(&u, &rho)));
    }
    check("propagator_oracle", worst <= 1e-8, format!("{n} pulses, max |Δρ| = {worst:.3e}"))
}

pub fn unitarity_and_composition(n: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst_phys, mut worst_comp) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let (p, det) = random_pulse(&mut rng);
        let rho = random_state(&mut rng);
        let out = apply_pulse(&rho, &p, det, 1.0).expect("valid pulse");
        let (e0, e1) = (rho.eigenvalues(), out.eigenvalues());
        let spectrum = (0..3).map(|i| (e0[i] - e1[i]).abs()).fold(0.0, f64::max);
        worst_phys = worst_phys.max((out.trace() - 1.0).abs()).max(spectrum);
        let split = rng.random_range(0.0..1.0) * p.duration_s;
        let a = apply_pulse(&rho, &p.with_duration(split), det, 1.0).expect("valid pulse");
        let ab = apply_pulse(&a, &p.with_duration(p.duration_s - split), det, 1.0).expect("valid pulse");
        worst_comp = worst_comp.max(ab.max_abs_diff(&out));
    }
    let passed = worst_phys <= 1e-10 && worst_comp <= 1e-10;
    check(
        "unitarity_and_composition",
        passed,
        format!("trace/spectrum error {worst_phys:.3e}, composition error {worst_comp:.3e}"),
    )
}

fn relaxation_physical() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let relax = RelaxationParams::default();
    let mut ok = true;
    for _ in 0..200 {
        let rho = random_state(&mut rng);
        let out = free_evolve(&rho, rng.random_range(0.0..5e-3), rng.random_range(-1e5..1e5), &relax).expect("valid");
        ok &= out.check().is_ok();
    }
    check("relaxation_keeps_states_physical", ok, "200 random states".into())
}

fn ensemble_invariants(spec: &EnsembleSpec) -> CheckResult {
    let a = sample_ensemble(spec).expect("valid spec");
    let b = sample_ensemble(spec).expect("valid spec");
    let bound = spec.antihole_fwhm_hz * stark_echo::ensemble::DETUNING_TRUNCATION_FWHM;
    let ok_values = a.iter().all(|p| {
        p.weight == 1.0
            && p.target_rabi_scale >= MIN_RABI_SCALE
            && p.control_rabi_scale >= MIN_RABI_SCALE
            && p.target_detuning_hz.abs() <= bound
            && p.control_detuning_hz.abs() <= bound
            && p.coupling_hz.is_finite()
    });
    check(
        "ensemble_invariants",
        ok_values && a == b,
        format!("{} pairs, reproducible: {}", a.len(), a == b),
    )
}

fn small_echo_spec(seed: u64) -> EnsembleSpec {
    EnsembleSpec { n_pairs: 400, rng_seed: seed, ..EnsembleSpec::default() }
}

fn echo_checks() -> Vec<CheckResult> {
    let relax = RelaxationParams::default();
    let opts = CouplingOptions::default();
    let env = fourier_envelope_fwhm_s(100e3);
    let design = EchoDesign { observe_s: env, ..EchoDesign::new(20e-6, 2e6) };
    let tl = make_echo_timeline(&design, None).expect("valid design");
    let window = Window { t_start_s: tl.echo_time_s - env, t_end_s: tl.echo_time_s + env, dt_s: 0.1e-6 };
    let a = sample_ensemble(&small_echo_spec(21)).expect("valid spec");
    let b = sample_ensemble(&small_echo_spec(22)).expect("valid spec");
    let union: Vec<IonPairParams> = a.iter().chain(&b).copied().collect();
    let ta = echo_signal(&a, &tl.timeline, &relax, &opts, &window).expect("in range");
    let tb = echo_signal(&b, &tl.timeline, &relax, &opts, &window).expect("in range");
    let tu = echo_signal(&union, &tl.timeline, &relax, &opts, &window).expect("in range");
    let sum = ta.add(&tb).expect("same grid");
    let scale = tu.amplitude.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let lin_err = tu.amplitude.iter().zip(&sum.amplitude).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale;

    // I ↔ Q exchange is conj followed by a 90° rotation; magnitudes must agree.
    let swapped = stark_echo::detection::EchoTrace {
        amplitude: ta.amplitude.iter().map(|c| C64::new(c.im, c.re)).collect(),
        ..ta.clone()
    };
    let m0 = echo_metrics(&ta, tl.echo_time_s, env).expect("in range");
    let m1 = echo_metrics(&swapped, tl.echo_time_s, env).expect("in range");

    // Rotating every drive phase by φ is a frame rotation about z: every
    // echo phase moves by −φ and the shift between arms is unchanged.
    let pert = Perturbation { pulse: Pulse::with_area(5e6, 0.5, 0.0), placement: Placement::WithRephasing };
    let shift = |phase: f64| {
        let d = EchoDesign { phase_rad: phase, ..design };
        let off = make_echo_timeline(&d, None).expect("valid design");
        let on = make_echo_timeline(&d, Some(&pert)).expect("valid design");
        let t_off = echo_signal(&a, &off.timeline, &relax, &opts, &window).expect("in range");
        let t_on = echo_signal(&a, &on.timeline, &relax, &opts, &window).expect("in range");
        let m = echo_metrics(&t_off, off.echo_time_s, env).expect("in range");
        (m.phase_deg, phase_shift_between(&t_on, &t_off, off.echo_time_s, env).expect("same grid"))
    };
    let (p0, s0) = shift(0.0);
    let (p1, s1) = shift(0.7);
    let closure = match (p0, p1, s0, s1) {
        (Some(p0), Some(p1), Some(s0), Some(s1)) => {
            let moved = stark_echo::detection::wrap_degrees(p1 - p0);
            ((moved + 0.7f64.to_degrees()).abs() < 1e-6, (s1 - s0).abs() < 1e-6, format!("echo phase moved {moved:.6} deg, shift {s0:.6} vs {s1:.6} deg"))
        }
        _ => (false, false, "no echo".into()),
    };

    vec![
        check("echo_linearity", lin_err <= 1e-12, format!("relative error {lin_err:.3e}")),
        check(
            "iq_exchange_keeps_magnitude",
            (m0.peak_magnitude - m1.peak_magnitude).abs() <= 1e-12 * m0.peak_magnitude,
            format!("{} vs {}", m0.peak_magnitude, m1.peak_magnitude),
        ),
        check("phase_convention_closure", closure.0 && closure.1, closure.2),
    ]
}

/// Echo phase change of one resonant pair when the control is excited for
/// the same stretch of both halves. Population decay of the control would
/// break the symmetry, so relaxation is off. With back-action the control's
/// return pulse is detuned by Δ·P_e(target) and leaves a residual of order
/// (Δ/Ω_c)², which shows up for large couplings.
pub fn cancellation_phase_rad(coupling_hz: f64, back_action: bool) -> f64 {
    let relax = RelaxationParams::none();
    let opts = CouplingOptions { back_action, ..CouplingOptions::default() };
    let design = EchoDesign { observe_s: 1e-6, ..EchoDesign::new(20e-6, 2e6) };
    let pert = Perturbation { pulse: Pulse::with_area(5e6, 0.5, 0.0), placement: Placement::BothHalves };
    let off = make_echo_timeline(&design, None).expect("valid design");
    let on = make_echo_timeline(&design, Some(&pert)).expect("valid design");
    let pair = IonPairParams::ideal(coupling_hz);
    let coherence_at_echo = |tl: &EchoTimeline| {
        let mut c = C64::new(0.0, 0.0);
        PairPropagator::new(&pair, &relax, &opts)
            .run(PairState::ground(), &tl.timeline, &[tl.echo_time_s], |_, _, s| c = s.target.coherence())
            .expect("valid");
        c
    };
    let (a, b) = (coherence_at_echo(&off), coherence_at_echo(&on));
    (b / a).arg()
}

pub fn cancellation() -> CheckResult {
    let cases = [(100.0, true), (2777.8, true), (-3e3, true), (2e4, false), (-5e4, false), (2e5, false)];
    let worst = cases.iter().map(|&(c, b)| cancellation_phase_rad(c, b).abs()).fold(0.0, f64::max);
    check("both_halves_cancellation", worst < 1e-6, format!("max |phase| = {worst:.3e} rad"))
}

fn config_round_trip(cfg: &ExperimentConfig) -> CheckResult {
    let back = ExperimentConfig::from_json(&cfg.to_json());
    let ok = matches!(&back, Ok(b) if b == cfg);
    check("config_round_trip", ok, if ok { "identity".into() } else { format!("{back:?}") })
}

pub fn run_checks(cfg: &ExperimentConfig) -> Vec<CheckResult> {
    let mut spec = cfg.ensemble;
    spec.n_pairs = spec.n_pairs.min(2000);
    let mut checks = vec![
        propagator_oracle(200),
        unitarity_and_composition(500),
        relaxation_physical(),
        ensemble_invariants(&spec),
        cancellation(),
        config_round_trip(cfg),
    ];
    checks.extend(echo_checks());
    checks
}

pub fn run_validation(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let checks = run_checks(cfg);
    for c in &checks {
        log::info!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let report = ValidationReport { experiment: "validate".into(), passed: failed == 0, checks };
    let path = write_json(&cfg.output_dir.join("validation_report.json"), &report)?;
    if failed > 0 {
        return Err(HarnessError::ValidationFailed { failed, total: report.checks.len() });
    }
    Ok(RunOutput { files: vec![path] })
}
