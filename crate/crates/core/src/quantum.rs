//! Single-ion state and exact piecewise propagation.
//!
//! Basis order is (g, e, a): ground, excited and the auxiliary shelf. Light
//! only couples g and e. In the rotating frame the drive Hamiltonian is
//!
//! ```text
//! H / h = ½ (Ω cos φ σx + Ω sin φ σy + δ σz)     (on the g,e block)
//! ```
//!
//! with σz = |g⟩⟨g| − |e⟩⟨e|, so a free ion at detuning δ carries
//! ρ_ge ∝ exp(−i 2π δ t). The auxiliary level sits at zero energy and only
//! receives population through excited-state decay.

use std::f64::consts::{PI, TAU};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::C64;

pub const GROUND: usize = 0;
pub const EXCITED: usize = 1;
pub const AUX: usize = 2;

/// Tolerances used by [`DensityMatrix3::check`].
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-10;

/// 3×3 density matrix of one ion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix3 {
    rho: [[C64; 3]; 3],
}

impl Default for DensityMatrix3 {
    fn default() -> Self {
        Self::ground()
    }
}

impl DensityMatrix3 {
    pub fn ground() -> Self {
        Self::from_populations(1.0, 0.0, 0.0)
    }

    pub fn excited() -> Self {
        Self::from_populations(0.0, 1.0, 0.0)
    }

    /// Diagonal (incoherent) state. No validation; see [`Self::check`].
    pub fn from_populations(ground: f64, excited: f64, aux: f64) -> Self {
        let z = C64::new(0.0, 0.0);
        let mut rho = [[z; 3]; 3];
        rho[GROUND][GROUND] = C64::new(ground, 0.0);
        rho[EXCITED][EXCITED] = C64::new(excited, 0.0);
        rho[AUX][AUX] = C64::new(aux, 0.0);
        Self { rho }
    }

    /// Projector onto a normalised pure state.
    pub fn pure(psi: [C64; 3]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::InvalidParameter("state vector has zero or non-finite norm".into()));
        }
        let inv = 1.0 / norm.sqrt();
        let mut rho = [[C64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rho[i][j] = psi[i] * psi[j].conj() * inv * inv;
            }
        }
        Ok(Self { rho })
    }

    /// Wraps a raw matrix after checking the density-matrix invariants.
    pub fn from_matrix(rho: [[C64; 3]; 3]) -> Result<Self> {
        let state = Self { rho };
        state.check()?;
        Ok(state)
    }

    pub fn matrix(&self) -> &[[C64; 3]; 3] {
        &self.rho
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.rho[i][j]
    }

    pub fn ground_population(&self) -> f64 {
        self.rho[GROUND][GROUND].re
    }

    pub fn excited_population(&self) -> f64 {
        self.rho[EXCITED][EXCITED].re
    }

    pub fn aux_population(&self) -> f64 {
        self.rho[AUX][AUX].re
    }

    /// Optical coherence ρ_ge = ⟨g|ρ|e⟩.
    pub fn coherence(&self) -> C64 {
        self.rho[GROUND][EXCITED]
    }

    pub fn trace(&self) -> f64 {
        (0..3).map(|i| self.rho[i][i].re).sum()
    }

    /// Largest elementwise deviation between two states.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.rho[i][j] - other.rho[i][j]).norm());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        let m = Matrix3::from_fn(|i, j| self.rho[i][j]);
        let eig = m.symmetric_eigen().eigenvalues;
        let mut ev = [eig[0], eig[1], eig[2]];
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Hermiticity, unit trace and positivity within the module tolerances.
    pub fn check(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                let z = self.rho[i][j];
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::InvalidParameter("density matrix has non-finite entries".into()));
                }
                if (z - self.rho[j][i].conj()).norm() > HERMITIAN_TOL {
                    return Err(Error::InvalidParameter(format!("density matrix not Hermitian at ({i},{j})")));
                }
            }
        }
        if (self.trace() - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!("trace {} differs from 1", self.trace())));
        }
        let smallest = self.eigenvalues()[0];
        if smallest < -POSITIVITY_TOL {
            return Err(Error::InvalidParameter(format!("negative eigenvalue {smallest}")));
        }
        Ok(())
    }

    /// Bloch vector (x, y, z) of the g,e block and its trace s = P_g + P_e.
    fn bloch(&self) -> ([f64; 3], f64) {
        let c = self.coherence();
        let pg = self.ground_population();
        let pe = self.excited_population();
        ([2.0 * c.re, -2.0 * c.im, pg - pe], pg + pe)
    }
}

/// A constant-amplitude drive segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// Nominal Rabi frequency in Hz (cycles, not radians).
    pub rabi_hz: f64,
    #[serde(default)]
    pub phase_rad: f64,
    /// Carrier offset from the channel's anti-hole centre.
    #[serde(default)]
    pub extra_detuning_hz: f64,
    pub duration_s: f64,
}

impl Pulse {
    pub fn new(rabi_hz: f64, phase_rad: f64, duration_s: f64) -> Self {
        Self { rabi_hz, phase_rad, extra_detuning_hz: 0.0, duration_s }
    }

    /// Pulse of the given area (in cycles: 0.5 is a π pulse) at `rabi_hz`.
    pub fn with_area(rabi_hz: f64, area: f64, phase_rad: f64) -> Self {
        Self::new(rabi_hz, phase_rad, area / rabi_hz)
    }

    pub fn area(&self) -> f64 {
        self.rabi_hz * self.duration_s
    }

    pub fn with_duration(self, duration_s: f64) -> Self {
        Self { duration_s, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("rabi_hz", self.rabi_hz)?;
        ensure_finite("phase_rad", self.phase_rad)?;
        ensure_finite("extra_detuning_hz", self.extra_detuning_hz)?;
        ensure_finite("duration_s", self.duration_s)?;
        if self.rabi_hz < 0.0 {
            return Err(Error::InvalidParameter(format!("rabi_hz must be >= 0, got {}", self.rabi_hz)));
        }
        if self.duration_s < 0.0 {
            return Err(Error::InvalidParameter(format!("duration_s must be >= 0, got {}", self.duration_s)));
        }
        Ok(())
    }
}

/// Homogeneous relaxation of the optical transition. Infinite times are
/// written as `null` in JSON.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationParams {
    #[serde(with = "infinite_as_null")]
    pub t1_s: f64,
    #[serde(with = "infinite_as_null")]
    pub t2_s: f64,
    /// Fraction of decayed excitation that lands on the auxiliary shelf.
    pub branch_aux: f64,
}

impl Default for RelaxationParams {
    /// 100 Hz homogeneous linewidth, 2 ms lifetime, even branching.
    fn default() -> Self {
        Self { t1_s: 2e-3, t2_s: 1.0 / (PI * 100.0), branch_aux: 0.5 }
    }
}

impl RelaxationParams {
    pub fn new(t1_s: f64, t2_s: f64, branch_aux: f64) -> Result<Self> {
        let relax = Self { t1_s, t2_s, branch_aux };
        relax.validate()?;
        Ok(relax)
    }

    /// No decay, no dephasing; decayed population (there is none) would shelve.
    pub fn none() -> Self {
        Self { t1_s: f64::INFINITY, t2_s: f64::INFINITY, branch_aux: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1_s.is_nan() || self.t1_s <= 0.0 || self.t2_s.is_nan() || self.t2_s <= 0.0 {
            return Err(Error::InvalidParameter("T1 and T2 must be positive".into()));
        }
        if self.t2_s > 2.0 * self.t1_s {
            return Err(Error::InvalidParameter(format!(
                "T2 = {} s exceeds 2·T1 = {} s",
                self.t2_s,
                2.0 * self.t1_s
            )));
        }
        validate_branch(self.branch_aux)
    }
}

fn validate_branch(branch_aux: f64) -> Result<()> {
    if (0.0..=1.0).contains(&branch_aux) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("branch_aux must lie in [0, 1], got {branch_aux}")))
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*value)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// SU(2) rotation acting on the g,e block: U = cos(θ/2) − i sin(θ/2) n·σ.
#[derive(Clone, Copy, Debug)]
struct Rotation {
    u: [[C64; 2]; 2],
}

impl Rotation {
    fn new(rabi_hz: f64, phase_rad: f64, detuning_hz: f64, duration_s: f64) -> Self {
        let w = rabi_hz.hypot(detuning_hz);
        if w == 0.0 || duration_s == 0.0 {
            let one = C64::new(1.0, 0.0);
            let zero = C64::new(0.0, 0.0);
            return Self { u: [[one, zero], [zero, one]] };
        }
        let half = PI * w * duration_s;
        let (s, c) = half.sin_cos();
        let nz = detuning_hz / w;
        let (sp, cp) = phase_rad.sin_cos();
        let nt = rabi_hz / w;
        // n_x − i n_y = (Ω/W) e^{−iφ}
        let minus = C64::new(nt * cp, -nt * sp);
        let u00 = C64::new(c, -s * nz);
        let u11 = C64::new(c, s * nz);
        let u01 = C64::new(0.0, -s) * minus;
        let u10 = C64::new(0.0, -s) * minus.conj();
        Self { u: [[u00, u01], [u10, u11]] }
    }

    fn conjugate(&self, state: &DensityMatrix3) -> DensityMatrix3 {
        let r = &state.rho;
        let u = &self.u;
        // T = U·ρ on rows g,e (all three columns).
        let mut t = [[C64::new(0.0, 0.0); 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                t[i][j] = u[i][0] * r[0][j] + u[i][1] * r[1][j];
            }
        }
        let mut out = state.rho;
        // Block: T·U† restricted to columns g,e.
        for i in 0..2 {
            for j in i..2 {
                let v = t[i][0] * u[j][0].conj() + t[i][1] * u[j][1].conj();
                out[i][j] = v;
                out[j][i] = v.conj();
            }
            out[i][i].im = 0.0;
            out[i][AUX] = t[i][AUX];
            out[AUX][i] = t[i][AUX].conj();
        }
        DensityMatrix3 { rho: out }
    }
}

fn check_pulse_inputs(pulse: &Pulse, ion_detuning_hz: f64, rabi_scale: f64) -> Result<()> {
    pulse.validate()?;
    ensure_finite("ion_detuning_hz", ion_detuning_hz)?;
    ensure_finite("rabi_scale", rabi_scale)?;
    if rabi_scale < 0.0 {
        return Err(Error::InvalidParameter(format!("rabi_scale must be >= 0, got {rabi_scale}")));
    }
    Ok(())
}

/// Exact generalized-Rabi rotation of the g,e block.
///
/// The effective Rabi frequency is `pulse.rabi_hz · rabi_scale` and the
/// detuning is `ion_detuning_hz − pulse.extra_detuning_hz`. No relaxation
/// acts during a pulse.
pub fn apply_pulse(
    state: &DensityMatrix3,
    pulse: &Pulse,
    ion_detuning_hz: f64,
    rabi_scale: f64,
) -> Result<DensityMatrix3> {
    check_pulse_inputs(pulse, ion_detuning_hz, rabi_scale)?;
    let rot = Rotation::new(
        pulse.rabi_hz * rabi_scale,
        pulse.phase_rad,
        ion_detuning_hz - pulse.extra_detuning_hz,
        pulse.duration_s,
    );
    Ok(rot.conjugate(state))
}

/// Time average of P_e over the pulse that [`apply_pulse`] would apply.
///
/// The Bloch vector precesses about a fixed axis, so the average is closed
/// form. Used to convert a neighbour's excitation into an accumulated
/// frequency shift.
pub fn mean_excited_during_pulse(
    state: &DensityMatrix3,
    pulse: &Pulse,
    ion_detuning_hz: f64,
    rabi_scale: f64,
) -> Result<f64> {
    check_pulse_inputs(pulse, ion_detuning_hz, rabi_scale)?;
    let omega = pulse.rabi_hz * rabi_scale;
    let delta = ion_detuning_hz - pulse.extra_detuning_hz;
    let w = omega.hypot(delta);
    let total = TAU * w * pulse.duration_s;
    if w == 0.0 || total == 0.0 {
        return Ok(state.excited_population());
    }
    let (sp, cp) = pulse.phase_rad.sin_cos();
    let n = [omega * cp / w, omega * sp / w, delta / w];
    let ([x, y, z], s) = state.bloch();
    let along = n[0] * x + n[1] * y + n[2] * z;
    let cross_z = n[0] * y - n[1] * x;
    // ⟨cos θ⟩ and ⟨sin θ⟩ for θ running linearly from 0 to `total`.
    let (mean_cos, mean_sin) = if total < 1e-6 {
        (1.0 - total * total / 6.0, total / 2.0 - total.powi(3) / 24.0)
    } else {
        (total.sin() / total, (1.0 - total.cos()) / total)
    };
    let mean_z = n[2] * along + mean_cos * (z - n[2] * along) + mean_sin * cross_z;
    Ok(0.5 * (s - mean_z))
}

/// Time average of e^{−t/T1} over `[0, duration_s]`.
pub fn mean_decay_factor(duration_s: f64, t1_s: f64) -> f64 {
    if t1_s.is_infinite() || duration_s == 0.0 {
        return 1.0;
    }
    let x = duration_s / t1_s;
    if x < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Free precession at `ion_detuning_hz` with T1 decay and T2 dephasing.
///
/// Decayed excitation splits `branch_aux` to the shelf and the rest to the
/// ground state.
pub fn free_evolve(
    state: &DensityMatrix3,
    duration_s: f64,
    ion_detuning_hz: f64,
    relax: &RelaxationParams,
) -> Result<DensityMatrix3> {
    ensure_finite("duration_s", duration_s)?;
    ensure_finite("ion_detuning_hz", ion_detuning_hz)?;
    if duration_s < 0.0 {
        return Err(Error::InvalidParameter(format!("duration_s must be >= 0, got {duration_s}")));
    }
    Ok(free_evolve_unchecked(state, duration_s, ion_detuning_hz, relax))
}

pub(crate) fn free_evolve_unchecked(
    state: &DensityMatrix3,
    duration_s: f64,
    ion_detuning_hz: f64,
    relax: &RelaxationParams,
) -> DensityMatrix3 {
    if duration_s == 0.0 {
        return *state;
    }
    let mut r = state.rho;
    let keep_e = (-duration_s / relax.t1_s).exp();
    let dephase = (-duration_s / relax.t2_s).exp();
    // U = diag(e^{−iπδt}, e^{+iπδt}, 1)
    let half = PI * ion_detuning_hz * duration_s;
    let rot = C64::from_polar(1.0, -half);
    let pe = r[EXCITED][EXCITED].re;
    let decayed = pe * (1.0 - keep_e);
    r[EXCITED][EXCITED] = C64::new(pe * keep_e, 0.0);
    r[GROUND][GROUND] = C64::new(r[GROUND][GROUND].re + (1.0 - relax.branch_aux) * decayed, 0.0);
    r[AUX][AUX] = C64::new(r[AUX][AUX].re + relax.branch_aux * decayed, 0.0);

    let ge = r[GROUND][EXCITED] * rot * rot * dephase;
    let ga = r[GROUND][AUX] * rot;
    let ea = r[EXCITED][AUX] * rot.conj() * dephase;
    r[GROUND][EXCITED] = ge;
    r[EXCITED][GROUND] = ge.conj();
    r[GROUND][AUX] = ga;
    r[AUX][GROUND] = ga.conj();
    r[EXCITED][AUX] = ea;
    r[AUX][EXCITED] = ea.conj();
    DensityMatrix3 { rho: r }
}

/// One complete wait-for-decay reset: excited population is redistributed
/// (`branch_aux` to the shelf) and every coherence is erased.
pub fn pump_cycle(state: &DensityMatrix3, branch_aux: f64) -> Result<DensityMatrix3> {
    validate_branch(branch_aux)?;
    let pg = state.ground_population();
    let pe = state.excited_population();
    let pa = state.aux_population();
    Ok(DensityMatrix3::from_populations(
        pg + (1.0 - branch_aux) * pe,
        0.0,
        pa + branch_aux * pe,
    ))
}
