//! Static parameters of control–target ion pairs.
//!
//! Each pair carries the two anti-hole detunings, the beam-profile Rabi
//! scales and the signed Stark coupling between the ions. Couplings come
//! from the nearest-neighbour distance of a Poisson point process of
//! control-class dopants and the 1/r³ dipole law.
//!
//! Sampling uses `ChaCha8Rng` seeded with `seed_from_u64(rng_seed)`, one
//! stream, pairs drawn in index order. The draw order per pair is: target
//! detuning, control detuning, target Rabi scale, control Rabi scale,
//! uniform for the distance, sign.

use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// σ = FWHM / (2·√(2 ln 2)) for a Gaussian.
pub const FWHM_TO_SIGMA: f64 = 0.424_660_900_144_009_5;

/// Detunings are truncated at this many anti-hole FWHMs.
pub const DETUNING_TRUNCATION_FWHM: f64 = 5.0;

/// Lower cut-off of the Rabi-scale distribution.
pub const MIN_RABI_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingSign {
    Random,
    Positive,
}

/// One control–target pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IonPairParams {
    pub target_detuning_hz: f64,
    pub control_detuning_hz: f64,
    pub target_rabi_scale: f64,
    pub control_rabi_scale: f64,
    /// Frequency shift of the target when the control is fully excited.
    pub coupling_hz: f64,
    /// Active population left after the preparation steps so far.
    pub weight: f64,
}

impl IonPairParams {
    /// Resonant pair with unit Rabi scales and the given coupling.
    pub fn ideal(coupling_hz: f64) -> Self {
        Self {
            target_detuning_hz: 0.0,
            control_detuning_hz: 0.0,
            target_rabi_scale: 1.0,
            control_rabi_scale: 1.0,
            coupling_hz,
            weight: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n_pairs: usize,
    pub antihole_fwhm_hz: f64,
    /// Fractional spread (standard deviation) of the beam intensity seen by the ions.
    pub rabi_scale_sigma: f64,
    /// Dipole coupling constant: coupling = kappa / r³ with r in nm.
    pub kappa_hz_nm3: f64,
    pub dopant_density_per_nm3: f64,
    pub coupling_sign: CouplingSign,
    pub rng_seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_pairs: 10_000,
            antihole_fwhm_hz: 100e3,
            rabi_scale_sigma: 0.1,
            // 10 GHz at 0.5 nm
            kappa_hz_nm3: 1.25e9,
            dopant_density_per_nm3: 1.0e-6,
            coupling_sign: CouplingSign::Random,
            rng_seed: 1,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::InvalidParameter("n_pairs must be >= 1".into()));
        }
        for (name, v) in [
            ("antihole_fwhm_hz", self.antihole_fwhm_hz),
            ("rabi_scale_sigma", self.rabi_scale_sigma),
            ("kappa_hz_nm3", self.kappa_hz_nm3),
        ] {
            ensure_finite(name, v)?;
            if v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        ensure_finite("dopant_density_per_nm3", self.dopant_density_per_nm3)?;
        if self.dopant_density_per_nm3 <= 0.0 {
            return Err(Error::InvalidParameter("dopant_density_per_nm3 must be > 0".into()));
        }
        Ok(())
    }

    /// Characteristic coupling (4/3)π·n·κ: |coupling| exceeds x with
    /// probability 1 − exp(−scale/x).
    pub fn coupling_scale_hz(&self) -> f64 {
        4.0 / 3.0 * PI * self.dopant_density_per_nm3 * self.kappa_hz_nm3
    }

    /// Analytic P(|coupling| > threshold).
    pub fn coupling_exceedance(&self, threshold_hz: f64) -> f64 {
        -(-self.coupling_scale_hz() / threshold_hz).exp_m1()
    }
}

/// Dipole–dipole frequency shift at separation `r_nm`.
pub fn coupling_at_distance(kappa_hz_nm3: f64, r_nm: f64) -> Result<f64> {
    ensure_finite("r_nm", r_nm)?;
    ensure_finite("kappa_hz_nm3", kappa_hz_nm3)?;
    if r_nm <= 0.0 {
        return Err(Error::InvalidParameter(format!("separation must be > 0, got {r_nm} nm")));
    }
    Ok(kappa_hz_nm3 / (r_nm * r_nm * r_nm))
}

/// P(R > r) for the nearest neighbour of a 3-D Poisson process.
pub fn nearest_neighbour_survival(density_per_nm3: f64, r_nm: f64) -> f64 {
    (-4.0 / 3.0 * PI * density_per_nm3 * r_nm.powi(3)).exp()
}

/// Inverse of [`nearest_neighbour_survival`]: the distance whose survival
/// probability equals `u` (0 < u ≤ 1).
pub fn nearest_neighbour_quantile(density_per_nm3: f64, u: f64) -> f64 {
    (-u.ln() / (4.0 / 3.0 * PI * density_per_nm3)).cbrt()
}

/// Median nearest-neighbour distance: (4/3)π·n·r³ = ln 2.
pub fn nearest_neighbour_median(density_per_nm3: f64) -> f64 {
    (LN_2 / (4.0 / 3.0 * PI * density_per_nm3)).cbrt()
}

/// Inverse-transform draw of the nearest-neighbour distance.
pub fn sample_nearest_neighbour_distance<R: Rng + ?Sized>(density_per_nm3: f64, rng: &mut R) -> Result<f64> {
    ensure_finite("density_per_nm3", density_per_nm3)?;
    if density_per_nm3 <= 0.0 {
        return Err(Error::InvalidParameter("density must be > 0".into()));
    }
    // 1 − U lies in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    Ok(nearest_neighbour_quantile(density_per_nm3, u))
}

fn truncated<R: Rng + ?Sized>(dist: &Normal<f64>, rng: &mut R, accept: impl Fn(f64) -> bool) -> f64 {
    loop {
        let x = dist.sample(rng);
        if accept(x) {
            return x;
        }
    }
}

/// Draws `spec.n_pairs` pairs. Deterministic in `spec.rng_seed`.
pub fn sample_ensemble(spec: &EnsembleSpec) -> Result<Vec<IonPairParams>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let sigma = spec.antihole_fwhm_hz * FWHM_TO_SIGMA;
    let limit = DETUNING_TRUNCATION_FWHM * spec.antihole_fwhm_hz;
    let detuning = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let scale = Normal::new(1.0, spec.rabi_scale_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for _ in 0..spec.n_pairs {
        let target_detuning_hz = truncated(&detuning, &mut rng, |x| x.abs() <= limit);
        let control_detuning_hz = truncated(&detuning, &mut rng, |x| x.abs() <= limit);
        let target_rabi_scale = truncated(&scale, &mut rng, |x| x >= MIN_RABI_SCALE);
        let control_rabi_scale = truncated(&scale, &mut rng, |x| x >= MIN_RABI_SCALE);
        let r = sample_nearest_neighbour_distance(spec.dopant_density_per_nm3, &mut rng)?;
        let magnitude = coupling_at_distance(spec.kappa_hz_nm3, r)?;
        let negative = rng.random::<bool>();
        let coupling_hz = match spec.coupling_sign {
            CouplingSign::Random if negative => -magnitude,
            _ => magnitude,
        };
        pairs.push(IonPairParams {
            target_detuning_hz,
            control_detuning_hz,
            target_rabi_scale,
            control_rabi_scale,
            coupling_hz,
            weight: 1.0,
        });
    }
    Ok(pairs)
}

/// Weighted mean and standard deviation.
pub fn weighted_moments(values: impl IntoIterator<Item = (f64, f64)>) -> (f64, f64) {
    let (mut sw, mut swx, mut swxx) = (0.0, 0.0, 0.0);
    for (x, w) in values {
        sw += w;
        swx += w * x;
        swxx += w * x * x;
    }
    if sw <= 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = swx / sw;
    (mean, (swxx / sw - mean * mean).max(0.0).sqrt())
}
