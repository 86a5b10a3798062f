//! Smoothed fiber discrepancies of the operator exponential, their sup over
//! quasimomentum, (ε, τ) sweeps with fitted exponents, and sharpness probes.

use crate::bloch::{sphere_grid, symbol, FiberAssembler, OperatorSpec};
use crate::cell::EffectiveData;
use crate::error::{Error, Result};
use crate::germ::{germ_report, ZERO_TOL};
use crate::linalg::{herm_eig, herm_eigvals, hermitize, inverse, loglog_fit, max_abs, real, CMat, CVec, LineFit, C64};
use serde::Serialize;

/// Which error law a sweep or probe refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Law {
    /// (1 + |τ|)^{s/3} ε^{s/3}; probes need μ ≠ 0.
    General,
    /// (1 + |τ|^{1/2})^{s/2} ε^{s/2}; probes need μ = 0 and ν ≠ 0.
    Enhanced,
}

impl Law {
    /// (α, p): the law reads ((1 + |τ|^α) ε)^{s/p}.
    pub fn exponents(&self) -> (f64, f64) {
        match self {
            Law::General => (1.0, 3.0),
            Law::Enhanced => (0.5, 2.0),
        }
    }
}

/// Precomputed data of one fiber for repeated discrepancy evaluations.
#[derive(Clone, Debug)]
pub struct DiscrepancyFiber {
    pub k: Vec<f64>,
    values: Vec<f64>,
    vectors: CMat,
    weight: Option<CMat>,
    /// Eigen-data of the n × n blocks f₀ b(b+k)* g⁰ b(b+k) f₀.
    eff_blocks: Vec<(Vec<f64>, CMat)>,
    f0: CMat,
    f0_inv: CMat,
    /// |b + k| per basis frequency.
    freq_norms: Vec<f64>,
    n: usize,
}

impl DiscrepancyFiber {
    pub fn new(spec: &OperatorSpec, eff: &EffectiveData, asm: &FiberAssembler, k: &[f64]) -> Self {
        let fib = asm.fiber(k);
        let eff_blocks = asm
            .basis
            .vectors
            .iter()
            .map(|v| {
                let xi: Vec<f64> = v.iter().zip(k).map(|(a, b)| a + b).collect();
                let b = symbol(&spec.b_mats, &xi);
                let a0 = hermitize(&(&eff.f0 * b.adjoint() * &eff.g0 * b * &eff.f0));
                let e = herm_eig(&a0);
                (e.values, e.vectors)
            })
            .collect();
        let freq_norms = asm
            .basis
            .vectors
            .iter()
            .map(|v| v.iter().zip(k).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt())
            .collect();
        DiscrepancyFiber {
            k: k.to_vec(),
            values: fib.eig.values,
            vectors: fib.eig.vectors,
            weight: fib.weight,
            eff_blocks,
            f0: eff.f0.clone(),
            f0_inv: inverse(&eff.f0).expect("f0 invertible"),
            freq_norms,
            n: spec.n,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    fn smoothing(&self, eps: f64, s: f64) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.dim());
        for t in &self.freq_norms {
            let x = if s == 0.0 { 1.0 } else { (eps * eps / (t * t + eps * eps)).powf(s / 2.0) };
            w.extend(std::iter::repeat(x).take(self.n));
        }
        w
    }

    /// y = (f e^{-iφA} f⁻¹ − f₀ e^{-iφA⁰} f₀⁻¹) x, or its adjoint.
    fn apply_j(&self, phase: f64, x: &CVec, adjoint: bool) -> CVec {
        let v = &self.vectors;
        let rot = |lam: f64| C64::from_polar(1.0, if adjoint { phase * lam } else { -phase * lam });
        let exact = if !adjoint {
            let mx = match &self.weight {
                Some(m) => m * x,
                None => x.clone(),
            };
            let mut c = v.ad_mul(&mx);
            for (i, lam) in self.values.iter().enumerate() {
                c[i] *= rot(*lam);
            }
            v * c
        } else {
            let mut c = v.ad_mul(x);
            for (i, lam) in self.values.iter().enumerate() {
                c[i] *= rot(*lam);
            }
            let y = v * c;
            match &self.weight {
                Some(m) => m * y,
                None => y,
            }
        };
        let n = self.n;
        let mut eff = CVec::zeros(x.len());
        for (b, (vals, vecs)) in self.eff_blocks.iter().enumerate() {
            let xb = x.rows(b * n, n).into_owned();
            // f₀ U e^{∓iφΛ} U* f₀⁻¹ (adjoint: f₀⁻¹ U e^{±iφΛ} U* f₀)
            let (left, right) = if adjoint { (&self.f0_inv, &self.f0) } else { (&self.f0, &self.f0_inv) };
            let mut c = vecs.ad_mul(&(right * xb));
            for (i, lam) in vals.iter().enumerate() {
                c[i] *= rot(*lam);
            }
            eff.rows_mut(b * n, n).copy_from(&(left * (vecs * c)));
        }
        exact - eff
    }

    /// ‖J(k,ε;τ) ℛ(k,ε)^{s/2}‖ (Ĵ when f = 1).
    pub fn norm(&self, eps: f64, tau: f64, s: f64) -> f64 {
        let phase = tau / (eps * eps);
        let w = self.smoothing(eps, s);
        let dim = self.dim();
        let apply = |x: &CVec| -> CVec {
            let wx = CVec::from_iterator(dim, x.iter().zip(&w).map(|(a, b)| a * *b));
            self.apply_j(phase, &wx, false)
        };
        let apply_adj = |y: &CVec| -> CVec {
            let z = self.apply_j(phase, y, true);
            CVec::from_iterator(dim, z.iter().zip(&w).map(|(a, b)| a * *b))
        };
        top_singular_value(dim, apply, apply_adj)
    }

    /// max |u* u − 1| for the eigenframe, in the fiber's own inner product.
    pub fn unitarity_defect(&self) -> f64 {
        let g = match &self.weight {
            Some(m) => self.vectors.adjoint() * m * &self.vectors,
            None => self.vectors.adjoint() * &self.vectors,
        };
        let mut worst = max_abs(&(g - CMat::identity(self.dim(), self.dim())));
        for (_, u) in &self.eff_blocks {
            worst = worst.max(max_abs(&(u.adjoint() * u - CMat::identity(u.nrows(), u.nrows()))));
        }
        worst
    }

    /// Lowest eigenvalues of A(k), ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }
}

/// Largest singular value of a linear map given by matvecs.
///
/// Dense for small dimensions; otherwise Lanczos with full
/// reorthogonalisation on the Gram operator from a fixed start vector.
pub fn top_singular_value(dim: usize, apply: impl Fn(&CVec) -> CVec, apply_adj: impl Fn(&CVec) -> CVec) -> f64 {
    if dim <= 96 {
        let mut m = CMat::zeros(dim, dim);
        for j in 0..dim {
            let mut e = CVec::zeros(dim);
            e[j] = real(1.0);
            m.set_column(j, &apply(&e));
        }
        let gram = hermitize(&(m.adjoint() * &m));
        return herm_eigvals(&gram).last().copied().unwrap_or(0.0).max(0.0).sqrt();
    }
    let steps = dim.min(60);
    let mut basis: Vec<CVec> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let golden = 0.618_033_988_749_894_9;
    let mut q = CVec::from_fn(dim, |i, _| C64::new(1.0 + 0.5 * ((i as f64 + 1.0) * golden).sin(), 0.25 * (i as f64 * golden * 3.0).cos()));
    q /= real(q.norm());
    let mut last = f64::NAN;
    for it in 0..steps {
        basis.push(q.clone());
        let mut r = apply_adj(&apply(&q));
        let a = q.dotc(&r).re;
        alpha.push(a);
        for b in &basis {
            let c = b.dotc(&r);
            r -= b * c;
        }
        for b in &basis {
            let c = b.dotc(&r);
            r -= b * c;
        }
        let bn = r.norm();
        let top = tridiagonal_top(&alpha, &beta);
        let converged = (top - last).abs() <= 1e-13 * top.abs().max(f64::MIN_POSITIVE);
        last = top;
        if bn <= 1e-14 * top.abs().max(f64::MIN_POSITIVE) || (converged && it >= 4) {
            break;
        }
        beta.push(bn);
        q = r / real(bn);
    }
    last.max(0.0).sqrt()
}

fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let t = nalgebra::DMatrix::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j || j + 1 == i {
            beta[i.min(j)]
        } else {
            0.0
        }
    });
    t.symmetric_eigenvalues().max()
}

/// Radial-angular quasimomentum grid.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct KGridOptions {
    /// Radii t⁰·2^{-j/per_octave} for j down to `octaves` octaves below t⁰.
    pub octaves: usize,
    pub per_octave: usize,
    /// Directions in d ≥ 2.
    pub angles: usize,
    pub include_origin: bool,
}

impl Default for KGridOptions {
    fn default() -> Self {
        KGridOptions { octaves: 12, per_octave: 4, angles: 16, include_origin: true }
    }
}

/// Points tθ inside the centred dual cell, with radii t⁰·2^{-j/r} from the
/// cell boundary down to min(t⁰·2^{-J}, ε_min/16) (J ≥ 8).
pub fn k_grid(spec: &OperatorSpec, opts: &KGridOptions, eps_min: f64) -> Result<Vec<Vec<f64>>> {
    if opts.octaves < 8 || opts.per_octave == 0 {
        return Err(Error::Config("k grid needs at least 8 octaves and one radius per octave".into()));
    }
    let lat = &spec.lattice;
    let t0 = spec.constants().t0;
    let r = opts.per_octave as f64;
    let outer = lat.dual_cell_radius();
    let t_min = (t0 * 2f64.powi(-(opts.octaves as i32))).min(eps_min / 16.0);
    let up = ((outer / t0).log2() * r).ceil().max(0.0) as i64;
    let down = ((t0 / t_min).log2() * r).ceil() as i64;
    let dirs = sphere_grid(lat.dim, opts.angles);
    let mut out = Vec::new();
    if opts.include_origin {
        out.push(vec![0.0; lat.dim]);
    }
    for j in -up..=down {
        let t = t0 * 2f64.powf(-(j as f64) / r);
        for th in &dirs {
            let k: Vec<f64> = th.iter().map(|x| x * t).collect();
            if lat.in_dual_cell(&k) {
                out.push(k);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub tau: f64,
    pub s: f64,
    pub sup_norm: f64,
    pub argmax_k: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    /// The fixed parameter (τ for ε-slopes, ε for τ-exponents).
    pub at: f64,
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    /// Residual ≤ 0.1 in log-log.
    pub clean: bool,
}

impl SlopeFit {
    fn from_fit(at: f64, f: LineFit) -> Self {
        SlopeFit { at, slope: f.slope, intercept: f.intercept, residual: f.residual, clean: f.residual <= 0.1 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub law: Law,
    pub s: f64,
    pub k_points: usize,
    pub points: Vec<SweepPoint>,
    /// ε-slope at the first τ of the list.
    pub eps_slope: f64,
    /// Largest τ-growth exponent over ε.
    pub tau_exponent: f64,
    /// max sup_norm / ((1 + |τ|^α) ε)^{s/p}.
    pub constant_estimate: f64,
    pub eps_slopes: Vec<SlopeFit>,
    pub tau_exponents: Vec<SlopeFit>,
    pub unitarity_defect: f64,
    /// The trivial bound 2‖f‖‖f⁻¹‖.
    pub trivial_bound: f64,
}

/// Sup over `k_grid` of the smoothed discrepancy for every (ε, τ).
pub fn run_sweep(
    spec: &OperatorSpec,
    eff: &EffectiveData,
    asm: &FiberAssembler,
    k_grid: &[Vec<f64>],
    eps_list: &[f64],
    tau_list: &[f64],
    s: f64,
    law: Law,
) -> Result<SweepResult> {
    use rayon::prelude::*;
    if k_grid.is_empty() || eps_list.is_empty() || tau_list.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if !(0.0..=3.0).contains(&s) {
        return Err(Error::Config(format!("s = {s} outside [0, 3]")));
    }
    let combos: Vec<(f64, f64)> = tau_list.iter().flat_map(|&t| eps_list.iter().map(move |&e| (e, t))).collect();
    // per k: (norm per combo, unitarity defect); collected in grid order
    let per_k: Vec<(Vec<f64>, f64)> = k_grid
        .par_iter()
        .map(|k| {
            let fib = DiscrepancyFiber::new(spec, eff, asm, k);
            let vals = combos.iter().map(|&(e, t)| fib.norm(e, t, s)).collect();
            (vals, fib.unitarity_defect())
        })
        .collect();
    let mut points = Vec::with_capacity(combos.len());
    for (c, &(eps, tau)) in combos.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, (vals, _)) in per_k.iter().enumerate() {
            if vals[c] > best.0 {
                best = (vals[c], i);
            }
        }
        points.push(SweepPoint { eps, tau, s, sup_norm: best.0, argmax_k: k_grid[best.1].clone() });
    }
    let unitarity_defect = per_k.iter().map(|p| p.1).fold(0.0, f64::max);
    let (alpha, p) = law.exponents();
    let constant_estimate = points
        .iter()
        .map(|pt| pt.sup_norm / ((1.0 + pt.tau.abs().powf(alpha)) * pt.eps).powf(s / p))
        .fold(0.0, f64::max);
    let mut eps_slopes = Vec::new();
    if eps_list.len() >= 2 {
        for &tau in tau_list {
            let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter(|q| q.tau == tau).map(|q| (q.eps, q.sup_norm)).unzip();
            eps_slopes.push(SlopeFit::from_fit(tau, loglog_fit(&xs, &ys)));
        }
    }
    let mut tau_exponents = Vec::new();
    let positive: Vec<f64> = tau_list.iter().copied().filter(|t| *t != 0.0).collect();
    if positive.len() >= 2 {
        for &eps in eps_list {
            let (xs, ys): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|q| q.eps == eps && q.tau != 0.0)
                .map(|q| (q.tau.abs(), q.sup_norm))
                .unzip();
            tau_exponents.push(SlopeFit::from_fit(eps, loglog_fit(&xs, &ys)));
        }
    }
    let nb = &spec.norms;
    Ok(SweepResult {
        law,
        s,
        k_points: k_grid.len(),
        eps_slope: eps_slopes.first().map_or(f64::NAN, |f| f.slope),
        tau_exponent: tau_exponents.iter().map(|f| f.slope).fold(f64::NAN, f64::max),
        constant_estimate,
        points,
        eps_slopes,
        tau_exponents,
        unitarity_defect,
        trivial_bound: if spec.f_is_identity { 2.0 } else { 2.0 * nb.f * nb.f_inv },
    })
}

/// |‖Ĵ(k,ε;τ)‖ − ‖Ĵ(k,aε;a²τ)‖| for a ∈ {2, 4}, without smoothing.
pub fn scaling_identity_defect(fib: &DiscrepancyFiber, eps: f64, tau: f64) -> f64 {
    let base = fib.norm(eps, tau, 0.0);
    [2.0, 4.0].iter().map(|a| (fib.norm(a * eps, a * a * tau, 0.0) - base).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow {
    pub tau: f64,
    pub eps: f64,
    /// t_♭ or t_†.
    pub t: f64,
    pub k: Vec<f64>,
    pub branch: usize,
    pub lambda: f64,
    pub phase_defect: f64,
    pub sup_norm: f64,
    pub ratio: f64,
    /// 2·phase_defect·ε^s (t² + ε²)^{-s/2}, a lower bound for sup_norm.
    pub lower_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeTable {
    pub law: Law,
    pub theta0: Vec<f64>,
    pub s: f64,
    /// μ_j (general) or ν_j (enhanced) of the probed branch.
    pub coefficient: f64,
    pub gamma: f64,
    pub rows: Vec<ProbeRow>,
    /// min over rows of `ratio`.
    pub fitted_constant: f64,
    /// log-log slope of `ratio` against τ.
    pub ratio_tau_slope: f64,
}

/// Evaluate the extremal fibers k = t_♭θ₀ with ε = |τ|⁻¹ (general)
/// or k = t_†θ₀ with ε = |τ|^{-1/2} (enhanced).
pub fn sharpness_probe(
    spec: &OperatorSpec,
    eff: &EffectiveData,
    asm: &FiberAssembler,
    theta0: &[f64],
    s: f64,
    tau_list: &[f64],
    law: Law,
) -> Result<ProbeTable> {
    let norm: f64 = theta0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Config("theta0 must be a unit vector".into()));
    }
    let germ = germ_report(spec, eff, theta0);
    let mu_max = germ.mus.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let (branch, coefficient) = match law {
        Law::General => {
            let j = (0..spec.n).max_by(|a, b| germ.mus[*a].abs().total_cmp(&germ.mus[*b].abs())).unwrap_or(0);
            (j, germ.mus[j])
        }
        Law::Enhanced => {
            if mu_max > ZERO_TOL {
                return Err(Error::ProbeInapplicable(format!("μ = {mu_max:e} is nonzero at theta0")));
            }
            let j = (0..spec.n).max_by(|a, b| germ.nus[*a].abs().total_cmp(&germ.nus[*b].abs())).unwrap_or(0);
            (j, germ.nus[j])
        }
    };
    if coefficient.abs() < ZERO_TOL {
        return Err(Error::ProbeInapplicable(format!("required coefficient {coefficient:e} below 1e-9")));
    }
    let gamma = germ.gammas[branch];
    let mut rows = Vec::with_capacity(tau_list.len());
    for &tau in tau_list {
        if tau == 0.0 {
            return Err(Error::Config("probe needs τ ≠ 0".into()));
        }
        let (eps, t) = match law {
            Law::General => {
                let eps = 1.0 / tau.abs();
                (eps, (std::f64::consts::PI / 4.0 / coefficient.abs()).cbrt() * tau.abs().powf(-1.0 / 3.0) * eps.powf(2.0 / 3.0))
            }
            Law::Enhanced => {
                let eps = tau.abs().powf(-0.5);
                (eps, (std::f64::consts::PI / 4.0 / coefficient.abs()).powf(0.25) * tau.abs().powf(-0.25) * eps.sqrt())
            }
        };
        let k: Vec<f64> = theta0.iter().map(|x| x * t).collect();
        let lambda = asm.lowest_eigenvalues(&k, spec.n)[branch];
        let phase_defect = (0.5 * tau / (eps * eps) * (lambda - gamma * t * t)).sin().abs();
        let fib = DiscrepancyFiber::new(spec, eff, asm, &k);
        let sup_norm = fib.norm(eps, tau, s);
        let (alpha, _) = law.exponents();
        let ratio = sup_norm / (eps * tau.abs().powf(alpha));
        let weight = (eps * eps / (t * t + eps * eps)).powf(s / 2.0);
        rows.push(ProbeRow { tau, eps, t, k, branch, lambda, phase_defect, sup_norm, ratio, lower_bound: 2.0 * phase_defect * weight });
    }
    let fitted_constant = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let ratio_tau_slope = if rows.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.tau.abs(), r.ratio)).unzip();
        loglog_fit(&x, &y).slope
    } else {
        f64::NAN
    };
    Ok(ProbeTable { law, theta0: theta0.to_vec(), s, coefficient, gamma, rows, fitted_constant, ratio_tau_slope })
}

/// CSV of sweep points.
pub fn sweep_csv(result: &SweepResult) -> String {
    use crate::report::{Cell, Csv};
    let d = result.points.first().map_or(0, |p| p.argmax_k.len());
    let mut header = vec!["eps".to_string(), "tau".into(), "s".into(), "sup_norm".into()];
    header.extend((1..=d).map(|i| format!("argmax_k{i}")));
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new(&refs);
    for p in &result.points {
        let mut row: Vec<Cell> = vec![p.eps.into(), p.tau.into(), p.s.into(), p.sup_norm.into()];
        row.extend(p.argmax_k.iter().map(|x| Cell::from(*x)));
        csv.row(row);
    }
    csv.finish()
}
