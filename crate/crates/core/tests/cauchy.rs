use bloch_homog::bloch::FiberAssembler;
use bloch_homog::cauchy::*;
use bloch_homog::cell::EffectiveData;
use bloch_homog::expsweep::{KGridOptions, Law};
use bloch_homog::lattice::{FourierBasis, Lattice};
use bloch_homog::linalg::C64;
use bloch_homog::models::{self, ModelDescriptor};
use bloch_homog::periodic_fn::PeriodicMatrixFunction as Pmf;
use std::f64::consts::PI;

fn problem(m: &ModelDescriptor, bump: Bump, s: f64, law: Law) -> CauchyProblem {
    let basis = FourierBasis::new(&m.spec.lattice, m.default_cutoff).unwrap();
    let eff = EffectiveData::compute(&m.spec, &basis).unwrap();
    let asm = FiberAssembler::new(&m.spec, &basis).unwrap();
    let amp = vec![C64::new(1.0, 0.0); m.spec.n];
    CauchyProblem::new(&m.spec, &eff, &asm, bump, amp, s, law).unwrap().normalized()
}

fn constant_acoustics(g: f64) -> ModelDescriptor {
    let lat = Lattice::cubic(1, 1.0);
    models::acoustics_1d(Pmf::scalar(&lat, &[(vec![0], C64::new(g, 0.0))])).unwrap()
}

fn acoustics() -> ModelDescriptor {
    models::acoustics_1d_default()
}

/// Simpson rule on [a, b] with 2m panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / (2 * m) as f64;
    let mut acc = f(a) + f(b);
    for i in 1..2 * m {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn legendre(n: usize, u: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, u);
    if n == 0 {
        return 1.0;
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * u * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[test]
fn bump_sobolev_norms_match_closed_forms() {
    // p = 1: ∫(1 − x²)² = 16/15, ∫(1 + x²)(1 − x²)² = 128/105
    let b = Bump::new(vec![0.0], 1.0, 1).unwrap();
    assert!((b.sobolev_norm(0.0) - (16.0 / 15.0 / (2.0 * PI)).sqrt()).abs() < 1e-14);
    assert!((b.sobolev_norm(1.0) - (128.0 / 105.0 / (2.0 * PI)).sqrt()).abs() < 1e-14);
    // shifted 2D box, s = 1.5, against Simpson on each axis
    let b = Bump::new(vec![0.3, -0.7], 0.8, 3).unwrap();
    let one = |x: f64, c: f64| {
        let u = (x - c) / 0.8;
        (1.0 - u * u).powi(3)
    };
    let n = 400;
    let mut acc = 0.0;
    let h = 1.6 / n as f64;
    for i in 0..=n {
        let wx = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let x = -0.5 + i as f64 * h;
        for j in 0..=n {
            let wy = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            let y = -1.5 + j as f64 * h;
            let v = one(x, 0.3) * one(y, -0.7);
            acc += wx * wy * (1.0 + x * x + y * y).powf(1.5) * v * v;
        }
    }
    let oracle = (acc * h * h / 9.0 / (4.0 * PI * PI)).sqrt();
    assert!((b.sobolev_norm(1.5) - oracle).abs() < 1e-9 * oracle);
}

#[test]
fn spherical_bessel_matches_legendre_moments() {
    for &x in &[0.0, 4e-4, 0.3, 2.9, 7.5, 13.0, 41.0, -6.2] {
        let j = spherical_bessel(14, x);
        for (n, jn) in j.iter().enumerate() {
            // ∫ P_n(u) e^{ixu} du = 2 iⁿ j_n(x)
            let re = simpson(|u| legendre(n, u) * (x * u).cos(), -1.0, 1.0, 4000);
            let im = simpson(|u| legendre(n, u) * (x * u).sin(), -1.0, 1.0, 4000);
            let m = C64::new(re, im) / (C64::new(0.0, 1.0).powu(n as u32) * 2.0);
            assert!(m.im.abs() < 1e-11, "n {n} x {x}");
            assert!((m.re - jn).abs() < 1e-11, "n {n} x {x}: {} vs {jn}", m.re);
        }
    }
}

#[test]
fn constant_coefficients_give_no_error() {
    let m = constant_acoustics(2.0);
    let p = problem(&m, Bump::new(vec![0.5], 3.0, 4).unwrap(), 2.0, Law::General);
    for &(eps, tau) in &[(0.1, 1.0), (0.03, 5.0), (0.05, -2.0)] {
        let e = p.solve_pair(eps, tau).unwrap();
        assert!(e.l2_error < 1e-10, "ε {eps} τ {tau}: {}", e.l2_error);
        assert!(e.unitarity_defect.unwrap() < 1e-12);
    }
}

#[test]
fn forced_solution_matches_duhamel_formula() {
    // A = −g d², F = a·B on [0.2, 0.9], φ = 0 via a zero amplitude:
    // û(τ) = −i ∫ e^{-i(τ−s)gξ²} ds · a B(ξ)
    let g = 2.0;
    let m = constant_acoustics(g);
    let bump = Bump::new(vec![0.0], 3.0, 4).unwrap();
    let mut p = problem(&m, bump.clone(), 2.0, Law::General);
    p.amplitude = vec![C64::new(0.0, 0.0)];
    let a = C64::new(0.6, -0.8);
    let p = p.with_forcing(vec![ForcingPiece { start: 0.2, end: 0.9, amplitude: vec![a] }]).unwrap();
    let tau = 1.5;
    let e = p.solve_pair(0.1, tau).unwrap();
    assert!(e.l2_error < 1e-10);
    let density = |xi: f64| {
        let lam = g * xi * xi;
        let integral = if lam.abs() < 1e-12 {
            C64::new(0.7, 0.0)
        } else {
            (C64::from_polar(1.0, -(tau - 0.9) * lam) - C64::from_polar(1.0, -(tau - 0.2) * lam)) / C64::new(0.0, lam)
        };
        (integral * a).norm_sqr() * bump.value(&[xi]).powi(2)
    };
    let oracle = (simpson(density, -3.0, 3.0, 20000) / (2.0 * PI)).sqrt();
    assert!((e.norm_u_eps - oracle).abs() < 1e-9 * oracle, "{} vs {oracle}", e.norm_u_eps);
    assert!((e.norm_u0 - oracle).abs() < 1e-9 * oracle);
}

#[test]
fn forcing_pieces_add_linearly() {
    let m = acoustics();
    let base = problem(&m, Bump::new(vec![0.0], 2.0, 4).unwrap(), 2.0, Law::General).with_fiber_cutoff(40.0).unwrap();
    let a = vec![C64::new(0.3, 0.1)];
    let whole = base.clone().with_forcing(vec![ForcingPiece { start: 0.0, end: 1.0, amplitude: a.clone() }]).unwrap();
    let split = base
        .clone()
        .with_forcing(vec![
            ForcingPiece { start: 0.0, end: 0.4, amplitude: a.clone() },
            ForcingPiece { start: 0.4, end: 1.0, amplitude: a.clone() },
        ])
        .unwrap();
    let (x, y) = (whole.solve_pair(0.1, 1.3).unwrap(), split.solve_pair(0.1, 1.3).unwrap());
    assert!((x.l2_error - y.l2_error).abs() < 1e-9 * x.l2_error, "{} {}", x.l2_error, y.l2_error);
    assert!(x.unitarity_defect.is_none());
    assert!((x.data_norm - y.data_norm).abs() < 1e-12);
}

#[test]
fn norms_are_conserved_without_forcing() {
    let m = acoustics();
    let p = problem(&m, Bump::new(vec![0.0], 4.0, 6).unwrap(), 3.0, Law::General);
    for &(eps, tau) in &[(1.0 / 16.0, 1.0), (1.0 / 32.0, 40.0)] {
        let e = p.solve_pair(eps, tau).unwrap();
        assert!(e.unitarity_defect.unwrap() < 1e-10);
        assert!(e.l2_error <= e.trivial_bound);
    }
}

#[test]
fn filon_and_direct_rules_agree() {
    let m = acoustics();
    let mut p = problem(&m, Bump::new(vec![0.0], 4.0, 6).unwrap(), 3.0, Law::General).with_fiber_cutoff(40.0).unwrap();
    p.quadrature.method = QuadratureMethod::Filon;
    let filon = p.solve_pair(1.0 / 16.0, 1.0).unwrap();
    assert_eq!(filon.unresolved_panels, 0);
    p.quadrature.method = QuadratureMethod::Direct;
    let direct = p.solve_pair(1.0 / 16.0, 1.0).unwrap();
    p.quadrature.refine = 2;
    let doubled = p.solve_pair(1.0 / 16.0, 1.0).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    assert!(rel(doubled.l2_error, direct.l2_error) < 1e-8);
    assert!(rel(filon.l2_error, direct.l2_error) < 1e-8, "{} {}", filon.l2_error, direct.l2_error);
    assert!(direct.nodes > 10 * filon.nodes);
}

#[test]
fn filon_rule_is_stable_under_refinement() {
    let m = acoustics();
    let mut p = problem(&m, Bump::new(vec![0.0], 4.0, 6).unwrap(), 2.0, Law::Enhanced).with_fiber_cutoff(40.0).unwrap();
    p.centering = Centering::Worst { rel_width: 0.1, grid: KGridOptions::default() };
    let coarse = p.solve_pair(1.0 / 64.0, 64.0).unwrap();
    p.quadrature.filon_nodes = 20;
    p.quadrature.filon_tol = 1e-13;
    let fine = p.solve_pair(1.0 / 64.0, 64.0).unwrap();
    assert!((coarse.l2_error - fine.l2_error).abs() < 1e-7 * fine.l2_error);
    assert!(coarse.center[0].abs() > 4.0);
}

#[test]
fn support_outside_one_dual_cell_is_rejected() {
    let m = acoustics();
    let p = problem(&m, Bump::new(vec![0.0], 4.0, 6).unwrap(), 2.0, Law::General);
    assert!(matches!(p.solve_pair(1.0, 1.0), Err(bloch_homog::error::Error::SupportOverflow(_))));
}

#[test]
fn forcing_needs_the_direct_rule() {
    let m = constant_acoustics(1.0);
    let mut p = problem(&m, Bump::new(vec![0.0], 1.0, 2).unwrap(), 1.0, Law::General)
        .with_forcing(vec![ForcingPiece { start: 0.0, end: 1.0, amplitude: vec![C64::new(1.0, 0.0)] }])
        .unwrap();
    p.quadrature.method = QuadratureMethod::Filon;
    assert!(p.solve_pair(0.1, 1.0).is_err());
}

#[test]
fn tables_report_slopes_and_constants() {
    let m = acoustics();
    let p = problem(&m, Bump::new(vec![0.0], 4.0, 6).unwrap(), 3.0, Law::General).with_fiber_cutoff(40.0).unwrap();
    let t = p.eps_table(1.0, &[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]).unwrap();
    assert!((t.fitted_slope - 1.0).abs() < 0.05);
    assert_eq!(t.predicted_slope, 1.0);
    for r in &t.rows {
        assert!(r.l2_error <= r.bound * (1.0 + 1e-12));
    }
    let csv = cauchy_csv(&t);
    assert_eq!(csv.lines().count(), 4);
}
