//! Property suite over the model zoo and seeded random fields.
//!
//! Every check records a measured value, its tolerance and the verdict, so a
//! run is reproducible and diffable. No timings or other nondeterministic data
//! enter the report.

use crate::bloch::{fiber_defects, symbol, FieldOptions, FiberAssembler, OperatorSpec};
use crate::cell::EffectiveData;
use crate::error::Result;
use crate::expsweep::{scaling_identity_defect, DiscrepancyFiber};
use crate::germ::{classify, germ_report, theta_grid};
use crate::lattice::{FourierBasis, Lattice};
use crate::linalg::{cx, herm_eigvals, hermitian_defect, max_abs, real, CMat, C64};
use crate::models::{self, ModelDescriptor};
use crate::oracle::{fit_all, OracleOptions};
use crate::periodic_fn::PeriodicMatrixFunction as Pmf;
use crate::report::{fmt_f64, Csv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Random Hermitian positive fields in the Voigt–Reuss suite.
    pub random_fields: usize,
    /// θ directions for germ and oracle checks (d = 2; d = 1 uses ±1).
    pub theta_count: usize,
    pub oracle: OracleOptions,
    /// Zoo members to check; empty means all.
    pub models: Vec<String>,
    /// Overrides each model's default basis cutoff.
    pub cutoff: Option<f64>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 20240611,
            random_fields: 50,
            theta_count: 16,
            oracle: OracleOptions::default(),
            models: Vec::new(),
            cutoff: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub group: String,
    pub subject: String,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// "<=" (value ≤ tolerance) or ">=" (value ≥ tolerance).
    pub relation: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub failures: usize,
    pub passed: bool,
}

impl ValidationReport {
    pub fn csv(&self) -> String {
        let mut csv = Csv::new(&["group", "subject", "name", "value", "relation", "tolerance", "passed"]);
        for c in &self.checks {
            csv.row(vec![
                c.group.as_str().into(),
                c.subject.as_str().into(),
                c.name.as_str().into(),
                c.value.into(),
                c.relation.as_str().into(),
                c.tolerance.into(),
                c.passed.into(),
            ]);
        }
        csv.finish()
    }
}

struct Recorder {
    checks: Vec<Check>,
}

impl Recorder {
    fn at_most(&mut self, group: &str, subject: &str, name: &str, value: f64, tol: f64) {
        self.push(group, subject, name, value, tol, "<=", value <= tol);
    }

    fn at_least(&mut self, group: &str, subject: &str, name: &str, value: f64, tol: f64) {
        self.push(group, subject, name, value, tol, ">=", value >= tol);
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, group: &str, subject: &str, name: &str, value: f64, tol: f64, rel: &str, ok: bool) {
        self.checks.push(Check {
            group: group.into(),
            subject: subject.into(),
            name: name.into(),
            value,
            tolerance: tol,
            relation: rel.into(),
            passed: ok && value.is_finite(),
        });
    }
}

/// Run the whole suite.
pub fn run(opts: &ValidateOptions) -> Result<ValidationReport> {
    let mut rec = Recorder { checks: Vec::new() };
    for m in models::zoo() {
        if !opts.models.is_empty() && !opts.models.contains(&m.name) {
            continue;
        }
        check_model(&mut rec, &m, opts)?;
    }
    if opts.random_fields > 0 {
        for (i, r) in voigt_reuss_suite(opts.seed, opts.random_fields)?.iter().enumerate() {
            let subject = format!("random[{i}] d={} m={} n={}", r.d, r.m, r.n);
            rec.at_least("voigt_reuss", &subject, "min_eig(mean - g0)", r.upper_gap, -1e-9);
            rec.at_least("voigt_reuss", &subject, "min_eig(g0 - harmonic)", r.lower_gap, -1e-9);
            if let Some(e) = r.equal_defect {
                rec.at_most("voigt_reuss", &subject, "|g0 - harmonic| (m = n)", e, 1e-9);
            }
        }
    }
    let failures = rec.checks.iter().filter(|c| !c.passed).count();
    Ok(ValidationReport { seed: opts.seed, checks: rec.checks, failures, passed: failures == 0 })
}

/// Directions used for germ checks: ±1 in 1D, a uniform circle otherwise.
pub fn thetas_for(d: usize, count: usize) -> Vec<Vec<f64>> {
    if d == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        theta_grid(d, count)
    }
}

fn check_model(rec: &mut Recorder, m: &ModelDescriptor, opts: &ValidateOptions) -> Result<()> {
    let spec = &m.spec;
    let name = m.name.as_str();
    let cutoff = opts.cutoff.unwrap_or(m.default_cutoff);
    let basis = FourierBasis::new(&spec.lattice, cutoff)?;
    let eff = EffectiveData::compute(spec, &basis)?;
    let asm = FiberAssembler::new(spec, &basis)?;
    let d = spec.lattice.dim;
    let thetas = thetas_for(d, opts.theta_count);

    // effective matrix
    let scale = max_abs(&eff.g0).max(1.0);
    rec.at_most("effective", name, "hermitian defect of g0", hermitian_defect(&eff.g0) / scale, 1e-12);
    rec.at_least("effective", name, "min eigenvalue of g0", herm_eigvals(&eff.g0)[0], 1e-12);
    rec.at_most("effective", name, "cell residual", eff.residual, 1e-10);
    let (upper, lower, equal) = voigt_reuss_gaps(spec, &eff)?;
    rec.at_least("effective", name, "min_eig(mean - g0)", upper, -1e-9);
    rec.at_least("effective", name, "min_eig(g0 - harmonic)", lower, -1e-9);
    if let Some(e) = equal {
        rec.at_most("effective", name, "|g0 - harmonic| (m = n)", e, 1e-9);
    }
    let notch = FourierBasis::new(&spec.lattice, cutoff + 2.0 * spec.lattice.r0)?;
    let eff_up = EffectiveData::compute(spec, &notch)?;
    rec.at_most("effective", name, "g0 change under one cutoff notch", max_abs(&(&eff_up.g0 - &eff.g0)) / scale, 1e-9);

    // known values
    for kv in &m.known_values {
        let (err, tol) = match kv.quantity.as_str() {
            "g0" => ((eff.g0[(0, 0)].re - kv.value).abs(), 1e-9),
            "Qbar" => ((eff.q_bar[(0, 0)].re - kv.value).abs(), 1e-10),
            "f0" => ((eff.f0[(0, 0)].re - kv.value).abs(), 1e-10),
            "gamma" => {
                let gs: Vec<f64> = thetas.iter().flat_map(|t| germ_report(spec, &eff, t).gammas).collect();
                (gs.iter().map(|g| (g - kv.value).abs()).fold(0.0, f64::max), 1e-8 * kv.value.abs())
            }
            q if q.starts_with("N(") => {
                let theta: Vec<f64> = q[2..q.len() - 1].split(',').map(|s| s.trim().parse().unwrap_or(f64::NAN)).collect();
                ((germ_report(spec, &eff, &theta).n_hat[(0, 0)].re - kv.value).abs(), 1e-8)
            }
            _ => continue,
        };
        rec.at_most("known", name, &kv.quantity, err, tol);
    }

    // fibers
    let t0 = spec.constants().t0;
    for (i, th) in thetas.iter().take(2).enumerate() {
        let k: Vec<f64> = th.iter().map(|x| 0.5 * t0 * x).collect();
        let fib = asm.fiber(&k);
        let (herm, psd) = fiber_defects(&fib);
        rec.at_most("bloch", name, &format!("fiber hermitian defect #{i}"), herm, 1e-12);
        rec.at_most("bloch", name, &format!("fiber negativity #{i}"), psd, 1e-12);
        rec.at_most("bloch", name, &format!("Gelfand consistency #{i}"), gelfand_defect(spec, &asm, &basis, &k)?, 1e-8);
        let up = FiberAssembler::new(spec, &notch)?;
        let (a, b) = (asm.lowest_eigenvalues(&k, spec.n), up.lowest_eigenvalues(&k, spec.n));
        let rel = a.iter().zip(&b).map(|(x, y)| (x - y).abs() / y.abs()).fold(0.0, f64::max);
        rec.at_most("bloch", name, &format!("band change under one cutoff notch #{i}"), rel, 1e-8);
    }

    // germ
    let (cls, reports) = classify(spec, &eff, &thetas);
    let frame = reports.iter().map(|r| r.frame_defect(&eff.q_bar)).fold(0.0, f64::max);
    rec.at_most("germ", name, "Q-orthonormality of the zeta frame", frame, 1e-10);
    let herm = reports.iter().map(|r| r.hermitian_defects()).fold(0.0, f64::max);
    rec.at_most("germ", name, "hermitian defects of germ operators", herm, 1e-12);
    if spec.n == 1 {
        let nstar = reports.iter().map(|r| max_abs(&r.nstar)).fold(0.0, f64::max);
        rec.at_most("germ", name, "N_* (n = 1)", nstar, 1e-12);
    }
    if expects_vanishing_n(spec) {
        rec.at_most("germ", name, "max |N(theta)| (vanishing identity)", cls.n_max, 1e-9);
    }
    let ag = germ_oracle_agreement(spec, &eff, &asm, &thetas, &opts.oracle)?;
    rec.at_most("oracle", name, "gamma relative error", ag.gamma, 1e-8);
    rec.at_most("oracle", name, "mu relative error", ag.mu, 1e-5);
    rec.at_most("oracle", name, "nu relative error", ag.nu, 1e-4);

    // discrepancy fibers
    let k: Vec<f64> = thetas[0].iter().map(|x| 0.3 * t0 * x).collect();
    let fib = DiscrepancyFiber::new(spec, &eff, &asm, &k);
    rec.at_most("sweep", name, "unitarity of both exponentials", fib.unitarity_defect(), 1e-10);
    for a in [2.0, 4.0] {
        let defect = scaling_identity_defect(&fib, 0.1 / a, 3.0);
        rec.at_most("sweep", name, &format!("scaling identity a = {a}"), defect, 1e-12);
    }

    if let Some(kv) = m.known_values.iter().find(|k| k.quantity == "gamma") {
        let (off, scalar) = scalar_effective_defects(spec, &eff, &basis, &thetas, kv.value);
        rec.at_most("effective", name, "off-diagonal effective fiber entries", off, 1e-10);
        rec.at_most("effective", name, "effective fiber minus gamma|xi|^2", scalar, 1e-8);
    }
    Ok(())
}

/// Largest off-diagonal entry of the sandwiched effective blocks at k = θ/4,
/// and the largest |block − γ|ξ|²·1|/|ξ|², over the whole basis.
pub fn scalar_effective_defects(
    spec: &OperatorSpec,
    eff: &EffectiveData,
    basis: &FourierBasis,
    thetas: &[Vec<f64>],
    gamma: f64,
) -> (f64, f64) {
    let (mut off, mut scalar) = (0.0f64, 0.0f64);
    for th in thetas {
        let k: Vec<f64> = th.iter().map(|x| 0.25 * x).collect();
        for (v, blk) in basis.vectors.iter().zip(eff.effective_blocks(spec, basis, &k, true)) {
            let r2: f64 = v.iter().zip(&k).map(|(a, b)| (a + b) * (a + b)).sum();
            for i in 0..spec.n {
                for j in 0..spec.n {
                    if i == j {
                        scalar = scalar.max((blk[(i, i)] - gamma * r2).norm() / r2);
                    } else {
                        off = off.max(blk[(i, j)].norm());
                    }
                }
            }
        }
    }
    (off, scalar)
}

/// Models for which N̂ (or N̂_Q) must vanish identically: m = n, or real
/// symmetric data with real b, g and f.
pub fn expects_vanishing_n(spec: &OperatorSpec) -> bool {
    let real_mats = spec.b_mats.iter().all(|b| b.iter().all(|z| z.im == 0.0));
    spec.m == spec.n || (real_mats && is_real_symmetric(&spec.g) && is_real_symmetric(&spec.f))
}

fn is_real_symmetric(f: &Pmf) -> bool {
    f.coeffs.iter().all(|(m, c)| {
        let neg: Vec<i64> = m.iter().map(|x| -x).collect();
        let conj = f.coeff(&neg).map(|z| z.conj());
        max_abs(&(c - &conj)) < 1e-14 && max_abs(&(c - c.transpose())) < 1e-14
    })
}

/// (min eig(ḡ − g⁰), min eig(g⁰ − g̱), ‖g⁰ − g̱‖ when m = n).
pub fn voigt_reuss_gaps(spec: &OperatorSpec, eff: &EffectiveData) -> Result<(f64, f64, Option<f64>)> {
    let grid = spec.working_grid().max(64);
    let mean = spec.g.mean();
    let harmonic = spec.g.harmonic_mean(grid)?;
    let upper = herm_eigvals(&crate::linalg::hermitize(&(&mean - &eff.g0)))[0];
    let lower = herm_eigvals(&crate::linalg::hermitize(&(&eff.g0 - &harmonic)))[0];
    let equal = (spec.m == spec.n).then(|| max_abs(&(&eff.g0 - &harmonic)));
    Ok((upper, lower, equal))
}

/// Worst relative mismatch between germ coefficients and oracle fits.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Agreement {
    pub gamma: f64,
    pub mu: f64,
    pub nu: f64,
}

/// Compare (γ_l, μ_l, ν_l) from the cell formulas with dispersion fits over
/// the given directions. Errors are relative to max(|value|, max γ) so that
/// vanishing coefficients are measured on the scale of the band.
pub fn germ_oracle_agreement(
    spec: &OperatorSpec,
    eff: &EffectiveData,
    asm: &FiberAssembler,
    thetas: &[Vec<f64>],
    opts: &OracleOptions,
) -> Result<Agreement> {
    let per: Vec<Result<Agreement>> = thetas
        .par_iter()
        .map(|th| {
            let r = germ_report(spec, eff, th);
            let fits = fit_all(asm, th, spec.n, opts)?;
            let sc = r.gammas.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let mut a = Agreement { gamma: 0.0, mu: 0.0, nu: 0.0 };
            for (l, f) in fits.iter().enumerate() {
                a.gamma = a.gamma.max((f.gamma - r.gammas[l]).abs() / r.gammas[l].abs().max(sc));
                a.mu = a.mu.max((f.mu - r.mus[l]).abs() / r.mus[l].abs().max(sc));
                a.nu = a.nu.max((f.nu - r.nus[l]).abs() / r.nus[l].abs().max(sc));
            }
            Ok(a)
        })
        .collect();
    let mut out = Agreement { gamma: 0.0, mu: 0.0, nu: 0.0 };
    for a in per {
        let a = a?;
        out.gamma = out.gamma.max(a.gamma);
        out.mu = out.mu.max(a.mu);
        out.nu = out.nu.max(a.nu);
    }
    Ok(out)
}

/// Relative mismatch between K(k)c and b(D+k)* g b(D+k) applied to the
/// trigonometric polynomial with coefficients c, the product with g taken
/// pointwise on a grid.
pub fn gelfand_defect(spec: &OperatorSpec, asm: &FiberAssembler, basis: &FourierBasis, k: &[f64]) -> Result<f64> {
    let lat = &spec.lattice;
    let (m, n) = (spec.m, spec.n);
    let inner = FourierBasis::new(lat, 2.0 * lat.r0 + 1e-9)?;
    // coefficients on the inner shell, extended by zero to the basis
    let mut c = crate::linalg::CVec::zeros(asm.dim());
    let mut bu = Vec::new();
    for (i, v) in inner.freqs.iter().enumerate() {
        let j = match basis.index_of(v) {
            Some(j) => j,
            None => continue,
        };
        let amp = crate::linalg::CVec::from_fn(n, |r, _| cx(1.0 / (1 + i + r) as f64, 0.5 - r as f64 * 0.25));
        c.rows_mut(j * n, n).copy_from(&amp);
        let xi: Vec<f64> = basis.vectors[j].iter().zip(k).map(|(a, b)| a + b).collect();
        bu.push((v.clone(), symbol(&spec.b_mats, &xi) * amp));
    }
    let field = Pmf::from_coeffs(lat, m, 1, bu.into_iter().map(|(v, x)| (v, CMat::from_column_slice(m, 1, x.as_slice()))))?;
    let reach = field.max_index() + spec.g.max_index();
    let grid_n = crate::periodic_fn::min_grid((2 * reach + 2).max(2 * basis.max_index() + 1));
    let mut samples = field.sample(grid_n)?;
    let gs = spec.g.sample(grid_n)?;
    for (x, g) in samples.values.iter_mut().zip(&gs.values) {
        *x = g * &*x;
    }
    let prod = Pmf::from_grid(lat, &samples, basis)?.field;
    let direct = asm.matrix(k) * &c;
    let mut err: f64 = 0.0;
    for (j, v) in basis.freqs.iter().enumerate() {
        let xi: Vec<f64> = basis.vectors[j].iter().zip(k).map(|(a, b)| a + b).collect();
        let gb = prod.coeff(v);
        let want = symbol(&spec.b_mats, &xi).adjoint() * gb;
        for r in 0..n {
            err = err.max((want[(r, 0)] - direct[j * n + r]).norm());
        }
    }
    Ok(err / direct.iter().map(|z| z.norm()).fold(1e-300, f64::max))
}

/// One random field of the Voigt–Reuss suite.
#[derive(Clone, Debug, Serialize)]
pub struct VoigtReussCase {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub upper_gap: f64,
    pub lower_gap: f64,
    pub equal_defect: Option<f64>,
}

/// Entry scale of the random factor h in g = h*h + 1.
const FIELD_AMPLITUDE: f64 = 0.15;

/// The (d, m, n) shapes cycled through by the random suite.
const SHAPES: [(usize, usize, usize); 10] =
    [(1, 1, 1), (1, 2, 2), (1, 2, 1), (1, 3, 3), (1, 3, 1), (2, 1, 1), (2, 2, 2), (2, 2, 1), (2, 3, 3), (2, 3, 1)];

/// Voigt–Reuss bracketing for `count` seeded random Hermitian positive
/// band-limited g = h*h + 1 with h of frequency ≤ 1.
pub fn voigt_reuss_suite(seed: u64, count: usize) -> Result<Vec<VoigtReussCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<(usize, OperatorSpec)> = (0..count)
        .map(|i| {
            let (d, m, n) = SHAPES[i % SHAPES.len()];
            Ok((i, random_spec(&mut rng, d, m, n, FIELD_AMPLITUDE)?))
        })
        .collect::<Result<_>>()?;
    specs
        .par_iter()
        .map(|(_, spec)| {
            let d = spec.lattice.dim;
            let cutoff = if d == 1 { 2.0 * spec.lattice.r0 * 16.0 } else { 2.0 * spec.lattice.r0 * 8.0 };
            let basis = FourierBasis::new(&spec.lattice, cutoff)?;
            let eff = EffectiveData::compute(spec, &basis)?;
            let (upper_gap, lower_gap, equal_defect) = voigt_reuss_gaps(spec, &eff)?;
            Ok(VoigtReussCase { d, m: spec.m, n: spec.n, upper_gap, lower_gap, equal_defect })
        })
        .collect()
}

fn random_c(rng: &mut ChaCha8Rng, scale: f64) -> C64 {
    cx(scale * rng.gen_range(-1.0..1.0), scale * rng.gen_range(-1.0..1.0))
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> CMat {
    CMat::from_fn(r, c, |_, _| random_c(rng, scale))
}

/// A spec with random g and a symbol b satisfying the rank condition.
pub fn random_spec(rng: &mut ChaCha8Rng, d: usize, m: usize, n: usize, amplitude: f64) -> Result<OperatorSpec> {
    let lat = if d == 1 { Lattice::cubic(1, 1.0) } else { Lattice::cubic(2, 2.0 * std::f64::consts::PI) };
    let mut freqs = vec![vec![0i64; d]];
    for l in 0..d {
        let mut e = vec![0i64; d];
        e[l] = 1;
        freqs.push(e.clone());
        e[l] = -1;
        freqs.push(e);
    }
    let h = Pmf::from_coeffs(&lat, m, m, freqs.into_iter().map(|f| (f, random_mat(rng, m, m, amplitude))).collect::<Vec<_>>())?;
    let g = h.adjoint().multiply(&h)?.add(&Pmf::identity(&lat, m))?;
    let b_mats = if m == n {
        // b(ξ) = (ξ₁ + iξ₂)C, or Cσ·ξ for m = 2 in 2D
        let c = random_mat(rng, m, m, 0.5) + CMat::identity(m, m) * real(2.0);
        match (d, m) {
            (1, _) => vec![c],
            (_, 2) => {
                let s1 = CMat::from_row_slice(2, 2, &[real(0.0), real(1.0), real(1.0), real(0.0)]);
                let s2 = CMat::from_row_slice(2, 2, &[real(0.0), cx(0.0, -1.0), cx(0.0, 1.0), real(0.0)]);
                vec![&c * s1, &c * s2]
            }
            _ => vec![c.clone(), c * cx(0.0, 1.0)],
        }
    } else {
        (0..d).map(|_| random_mat(rng, m, n, 1.0)).collect()
    };
    OperatorSpec::new(&lat, b_mats, g, None, FieldOptions::for_lattice(&lat))
}

/// Human-readable lines, one per check.
pub fn summary_lines(report: &ValidationReport) -> Vec<String> {
    report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{} {} [{}] {}: {} {} {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.group,
                c.subject,
                c.name,
                fmt_f64(c.value),
                c.relation,
                fmt_f64(c.tolerance)
            )
        })
        .collect()
}
