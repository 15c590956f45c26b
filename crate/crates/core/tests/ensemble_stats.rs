//! Statistical checks of the sampled ensembles against closed forms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stark_echo::ensemble::{
    nearest_neighbour_survival, sample_ensemble, sample_nearest_neighbour_distance, weighted_moments, EnsembleSpec,
    FWHM_TO_SIGMA,
};

#[test]
fn nearest_neighbour_distances_pass_ks() {
    let density = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut r: Vec<f64> =
        (0..1_000_000).map(|_| sample_nearest_neighbour_distance(density, &mut rng).unwrap()).collect();
    r.sort_by(f64::total_cmp);
    let n = r.len() as f64;
    let ks = r
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - nearest_neighbour_survival(density, x);
            (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.002, "KS statistic {ks}");
}

#[test]
fn detuning_spread_matches_the_antihole_width() {
    let spec = EnsembleSpec { n_pairs: 100_000, ..EnsembleSpec::default() };
    let ens = sample_ensemble(&spec).unwrap();
    let (_, sd) = weighted_moments(ens.iter().map(|p| (p.target_detuning_hz, 1.0)));
    let expected = 100e3 * FWHM_TO_SIGMA;
    assert!((expected - 42.47e3).abs() < 10.0);
    assert!((sd / expected - 1.0).abs() < 0.01, "sd {sd}");
}

#[test]
fn coupling_exceedance_follows_the_poisson_law() {
    let spec = EnsembleSpec { n_pairs: 100_000, ..EnsembleSpec::default() };
    let ens = sample_ensemble(&spec).unwrap();
    let t2 = 1.0 / (std::f64::consts::PI * 100.0);
    for threshold in [1.0 / (std::f64::consts::PI * t2), 5e3, 10e3, 50e3] {
        let frac = ens.iter().filter(|p| p.coupling_hz.abs() > threshold).count() as f64 / ens.len() as f64;
        let predicted = spec.coupling_exceedance(threshold);
        assert!((frac / predicted - 1.0).abs() < 0.02, "threshold {threshold}: {frac} vs {predicted}");
    }
}

#[test]
fn statistics_agree_across_seeds() {
    let draw = |seed| sample_ensemble(&EnsembleSpec { n_pairs: 20_000, rng_seed: seed, ..EnsembleSpec::default() }).unwrap();
    let (a, b) = (draw(101), draw(202));
    let stats = |ens: &[stark_echo::ensemble::IonPairParams], f: fn(&stark_echo::ensemble::IonPairParams) -> f64| {
        let n = ens.len() as f64;
        let (m, sd) = weighted_moments(ens.iter().map(|p| (f(p), 1.0)));
        (m, sd, sd / n.sqrt())
    };
    let fields: [fn(&stark_echo::ensemble::IonPairParams) -> f64; 4] = [
        |p| p.target_detuning_hz,
        |p| p.control_detuning_hz,
        |p| p.target_rabi_scale,
        |p| p.control_rabi_scale,
    ];
    for f in fields {
        let (ma, sa, ea) = stats(&a, f);
        let (mb, sb, eb) = stats(&b, f);
        let se = ea.hypot(eb);
        assert!((ma - mb).abs() < 5.0 * se, "means {ma} vs {mb}");
        // Standard error of a Gaussian sd is sd/√(2n).
        let se_sd = (sa * sa + sb * sb).sqrt() / (2.0 * a.len() as f64).sqrt();
        assert!((sa - sb).abs() < 5.0 * se_sd, "sds {sa} vs {sb}");
    }
}

#[test]
fn sampled_weights_start_at_one() {
    let ens = sample_ensemble(&EnsembleSpec::default()).unwrap();
    assert!(ens.iter().all(|p| p.weight == 1.0));
}
