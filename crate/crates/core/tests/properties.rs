use bloch_homog::bloch::FiberAssembler;
use bloch_homog::cell::EffectiveData;
use bloch_homog::expsweep::{scaling_identity_defect, DiscrepancyFiber};
use bloch_homog::germ::{classify, germ_report, theta_grid, Regime};
use bloch_homog::lattice::{FourierBasis, Lattice};
use bloch_homog::linalg::C64;
use bloch_homog::models::{self, ModelDescriptor};
use bloch_homog::periodic_fn::PeriodicMatrixFunction as Pmf;
use bloch_homog::validate::{random_spec, voigt_reuss_gaps};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

/// g = a0 + Σ_j (c_j e^{2πijx} + conj), positive since a0 > 2 Σ|c_j|.
fn acoustics(coeffs: &[(f64, f64)]) -> ModelDescriptor {
    let lat = Lattice::cubic(1, 1.0);
    let a0 = 1.0 + 2.0 * coeffs.iter().map(|(re, im)| re.hypot(*im)).sum::<f64>();
    let mut terms = vec![(vec![0i64], C64::new(a0, 0.0))];
    for (j, (re, im)) in coeffs.iter().enumerate() {
        let j = j as i64 + 1;
        terms.push((vec![j], C64::new(*re, *im)));
        terms.push((vec![-j], C64::new(*re, -*im)));
    }
    models::acoustics_1d(Pmf::scalar(&lat, &terms)).unwrap()
}

/// Contrast up to about 18 at frequency 3 needs far more modes than the default model.
const RANDOM_ACOUSTICS_CUTOFF: f64 = 2.0 * PI * 96.5;

/// Harmonic mean by the trapezoid rule, exact up to roundoff for trigonometric g.
fn harmonic_mean(coeffs: &[(f64, f64)]) -> f64 {
    let a0 = 1.0 + 2.0 * coeffs.iter().map(|(re, im)| re.hypot(*im)).sum::<f64>();
    let n = 4096;
    let mut acc = 0.0;
    for i in 0..n {
        let x = i as f64 / n as f64;
        let mut g = a0;
        for (j, (re, im)) in coeffs.iter().enumerate() {
            let ph = 2.0 * PI * (j + 1) as f64 * x;
            g += 2.0 * (re * ph.cos() - im * ph.sin());
        }
        acc += 1.0 / g;
    }
    n as f64 / acc
}

fn coeff_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..4)
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn acoustics_effective_coefficient_is_harmonic_mean(coeffs in coeff_strategy()) {
        let m = acoustics(&coeffs);
        let basis = FourierBasis::new(&m.spec.lattice, RANDOM_ACOUSTICS_CUTOFF).unwrap();
        let eff = EffectiveData::compute(&m.spec, &basis).unwrap();
        let hm = harmonic_mean(&coeffs);
        prop_assert!((eff.g0[(0, 0)].re - hm).abs() < 1e-9 * hm, "{} vs {hm}", eff.g0[(0, 0)].re);
    }

    #[test]
    fn real_acoustics_has_vanishing_n_and_enhanced_regime(coeffs in coeff_strategy()) {
        let m = acoustics(&coeffs);
        let basis = FourierBasis::new(&m.spec.lattice, RANDOM_ACOUSTICS_CUTOFF).unwrap();
        let eff = EffectiveData::compute(&m.spec, &basis).unwrap();
        let (cls, reports) = classify(&m.spec, &eff, &[vec![1.0], vec![-1.0]]);
        prop_assert!(cls.n_plain_max < 1e-9);
        prop_assert_eq!(cls.regime, Regime::Enhanced1);
        // γ(θ) = g⁰θ²
        for r in reports {
            prop_assert!((r.gammas[0] - eff.g0[(0, 0)].re).abs() < 1e-10);
        }
    }

    #[test]
    fn random_fields_obey_voigt_reuss_bounds(seed in 0u64..1_000_000, shape in 0usize..6) {
        let (d, m, n) = [(1, 1, 1), (1, 2, 2), (1, 2, 1), (1, 3, 1), (2, 1, 1), (2, 2, 1)][shape];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, d, m, n, 0.15).unwrap();
        let cutoff = 2.0 * spec.lattice.r0 * if d == 1 { 16.0 } else { 6.0 };
        let basis = FourierBasis::new(&spec.lattice, cutoff).unwrap();
        let eff = EffectiveData::compute(&spec, &basis).unwrap();
        let (upper, lower, equal) = voigt_reuss_gaps(&spec, &eff).unwrap();
        prop_assert!(upper >= -1e-9, "{upper}");
        prop_assert!(lower >= -1e-9, "{lower}");
        if let Some(e) = equal {
            prop_assert!(e < 1e-9, "{e}");
        }
    }

    #[test]
    fn square_symbols_have_vanishing_n(seed in 0u64..1_000_000, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, 1, m, m, 0.15).unwrap();
        let basis = FourierBasis::new(&spec.lattice, 2.0 * spec.lattice.r0 * 16.0).unwrap();
        let eff = EffectiveData::compute(&spec, &basis).unwrap();
        let (cls, _) = classify(&spec, &eff, &[vec![1.0], vec![-1.0]]);
        prop_assert!(cls.n_plain_max < 1e-9, "{}", cls.n_plain_max);
    }

    #[test]
    fn bloch_fibers_are_hermitian_and_nonnegative(k1 in -0.5..0.5f64, k2 in -0.5..0.5f64) {
        let m = models::hermitian_2d(0.1).unwrap();
        let basis = FourierBasis::new(&m.spec.lattice, m.default_cutoff).unwrap();
        let asm = FiberAssembler::new(&m.spec, &basis).unwrap();
        let fib = asm.fiber(&[k1, k2]);
        let k = &fib.matrix;
        let scale = k.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let herm = (k - k.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(herm < 1e-12 * scale);
        prop_assert!(fib.eigenvalues()[0] > -1e-12 * scale);
        // k and k + b give unitarily equivalent fibers
        let shifted = asm.lowest_eigenvalues(&[k1 + 1.0, k2], 3);
        let base = asm.lowest_eigenvalues(&[k1, k2], 3);
        prop_assert!((shifted[0] - base[0]).abs() < 1e-6 * base[2].max(1e-3));
    }

    #[test]
    fn discrepancy_obeys_the_scaling_identity(k in 0.01..1.5f64, eps in 0.01..0.2f64, tau in -50.0..50.0f64) {
        let m = models::acoustics_1d_default();
        let basis = FourierBasis::new(&m.spec.lattice, m.default_cutoff).unwrap();
        let eff = EffectiveData::compute(&m.spec, &basis).unwrap();
        let asm = FiberAssembler::new(&m.spec, &basis).unwrap();
        let fib = DiscrepancyFiber::new(&m.spec, &eff, &asm, &[k]);
        prop_assert!(fib.unitarity_defect() < 1e-10);
        prop_assert!(scaling_identity_defect(&fib, eps, tau) < 1e-12);
        let norm = fib.norm(eps, tau, 0.0);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&norm));
        // smoothing never increases the norm
        prop_assert!(fib.norm(eps, tau, 2.0) <= norm + 1e-14);
    }
}

/// I₀(x) by its power series.
fn bessel_i0(x: f64) -> f64 {
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..60 {
        term *= (x / 2.0) * (x / 2.0) / (k * k) as f64;
        sum += term;
    }
    sum
}

#[test]
fn pauli_gamma_matches_bessel_formula() {
    let lat = Lattice::cubic(2, 2.0 * PI);
    for a in [0.1, 0.3] {
        // φ = a cos x₁: mean e^{±2φ} = I₀(2a)
        let phi = Pmf::scalar(&lat, &[(vec![1, 0], C64::new(a / 2.0, 0.0)), (vec![-1, 0], C64::new(a / 2.0, 0.0))]);
        let m = models::pauli(phi).unwrap();
        let gamma = 1.0 / bessel_i0(2.0 * a).powi(2);
        let basis = FourierBasis::new(&m.spec.lattice, 8.5).unwrap();
        let eff = EffectiveData::compute(&m.spec, &basis).unwrap();
        for th in theta_grid(2, 8) {
            let r = germ_report(&m.spec, &eff, &th);
            for g in &r.gammas {
                assert!((g - gamma).abs() < 1e-8, "a {a}: {g} vs {gamma}");
            }
        }
    }
}

#[test]
fn hermitian_model_n_scales_with_cube_of_c() {
    for c in [0.05, 0.2] {
        let m = models::hermitian_2d(c).unwrap();
        let basis = FourierBasis::new(&m.spec.lattice, m.default_cutoff).unwrap();
        let eff = EffectiveData::compute(&m.spec, &basis).unwrap();
        let n01 = germ_report(&m.spec, &eff, &[0.0, 1.0]).n_hat[(0, 0)].re;
        let n10 = germ_report(&m.spec, &eff, &[1.0, 0.0]).n_hat[(0, 0)].re;
        assert!((n01 - 1.5 * c * c * c).abs() < 1e-10, "c {c}: {n01}");
        assert!(n10.abs() < 1e-12);
        let (cls, _) = classify(&m.spec, &eff, &theta_grid(2, 32));
        assert_eq!(cls.regime, Regime::GeneralOnly);
    }
}

#[test]
fn zoo_known_values_hold() {
    for m in models::zoo() {
        let basis = FourierBasis::new(&m.spec.lattice, m.default_cutoff).unwrap();
        let eff = EffectiveData::compute(&m.spec, &basis).unwrap();
        for kv in &m.known_values {
            match kv.quantity.as_str() {
                "g0" => assert!((eff.g0[(0, 0)].re - kv.value).abs() < 1e-9, "{}", m.name),
                "Qbar" => assert!((eff.q_bar[(0, 0)].re - kv.value).abs() < 1e-10, "{}", m.name),
                _ => {}
            }
        }
    }
}
