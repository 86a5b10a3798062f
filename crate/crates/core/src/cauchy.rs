//! Cauchy problems i∂_τ u = A_ε u + F for the periodic operator and its
//! homogenized limit, solved fiberwise in quasimomentum and compared in L2 by
//! Plancherel.
//!
//! The data are band-limited: φ̂(ξ) = a·B(ξ) with a polynomial bump B on a
//! box. A physical frequency ξ sits in the fiber k = εξ − b₀ at the block b₀,
//! where A_ε acts as ε⁻² A(k). Errors are measured as ‖f^ε u_ε − f₀ u₀‖,
//! which is ‖u_ε − u₀‖ when f = 1.

use crate::bloch::{symbol, FiberAssembler, OperatorSpec};
use crate::cell::EffectiveData;
use crate::error::{Error, Result};
use crate::expsweep::{k_grid, DiscrepancyFiber, KGridOptions, Law};
use crate::linalg::{gauss_legendre, herm_eig, hermitize, inverse, loglog_fit, spectral_norm, CMat, CVec, C64};
use crate::report::Csv;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// B(ξ) = Π_l (1 − ((ξ_l − c_l)/R)²)^p on the box |ξ_l − c_l| ≤ R, zero outside.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub power: u32,
}

impl Bump {
    pub fn new(center: Vec<f64>, radius: f64, power: u32) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() || power == 0 {
            return Err(Error::Config("bump needs a positive radius and power".into()));
        }
        Ok(Bump { center, radius, power })
    }

    pub fn value(&self, xi: &[f64]) -> f64 {
        let mut v = 1.0;
        for (x, c) in xi.iter().zip(&self.center) {
            let u = (x - c) / self.radius;
            if u.abs() >= 1.0 {
                return 0.0;
            }
            v *= (1.0 - u * u).powi(self.power as i32);
        }
        v
    }

    /// ‖B‖_{H^s} = ((2π)^{-d} ∫ (1 + |ξ|²)^s B² dξ)^{1/2}; exact for integer s.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let d = self.center.len();
        let per_axis = 2 * self.power as usize + s.ceil() as usize + 2;
        let n = if s.fract() == 0.0 { per_axis } else { 4 * per_axis };
        let (x, w) = gauss_legendre(n);
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        loop {
            let xi: Vec<f64> = (0..d).map(|l| self.center[l] + self.radius * x[idx[l]]).collect();
            let wt: f64 = (0..d).map(|l| self.radius * w[idx[l]]).product();
            let b = self.value(&xi);
            let r2: f64 = xi.iter().map(|v| v * v).sum();
            acc += wt * (1.0 + r2).powf(s) * b * b;
            if !odometer(&mut idx, n) {
                break;
            }
        }
        (acc / (2.0 * PI).powi(d as i32)).sqrt()
    }
}

/// Advance a tensor index over [0, n)^d; false after the last one.
fn odometer(idx: &mut [usize], n: usize) -> bool {
    for axis in (0..idx.len()).rev() {
        if idx[axis] + 1 < n {
            idx[axis] += 1;
            return true;
        }
        idx[axis] = 0;
    }
    false
}

/// F(·, τ̃) = a·B for τ̃ in [start, end), zero otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForcingPiece {
    pub start: f64,
    pub end: f64,
    pub amplitude: Vec<C64>,
}

/// Where the bump sits for each (ε, τ).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// The bump as given.
    Fixed,
    /// Centre at k*/ε with k* the maximiser of the smoothed discrepancy over
    /// a k-grid, radius `rel_width`·|k*|/ε.
    Worst { rel_width: f64, grid: KGridOptions },
}

/// How the momentum integral is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureMethod {
    /// Filon without forcing, direct with forcing.
    Auto,
    /// Composite Gauss–Legendre with panels resolving every significant phase.
    Direct,
    /// Adaptive panels on which each mode's linear phase is integrated exactly.
    Filon,
}

/// Momentum quadrature settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureOptions {
    pub method: QuadratureMethod,
    /// Filon: Gauss–Legendre nodes per panel and axis.
    pub filon_nodes: usize,
    /// Filon: initial panels per axis.
    pub filon_panels: usize,
    /// Filon: accepted Legendre tail per panel, relative to the squared error
    /// estimate times the panel's share of the box.
    pub filon_tol: f64,
    /// Filon: bisection depth limit; deeper panels are counted as unresolved.
    pub filon_depth: usize,
    /// Gauss–Legendre nodes per panel.
    pub panel_nodes: usize,
    /// Largest spread of fiber phases across one panel, in radians.
    pub phase_per_panel: f64,
    /// Pilot nodes per axis used to estimate phase gradients.
    pub pilot_nodes: usize,
    /// Multiplies the panel count (2 = doubled density).
    pub refine: usize,
    /// Exact modes beyond the n dominant ones are resolved when their data
    /// weight exceeds `mode_tol` times the total weight outside the dominant
    /// modes, which sets the scale of the squared error.
    pub mode_tol: f64,
    pub max_nodes: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            method: QuadratureMethod::Auto,
            filon_nodes: 12,
            filon_panels: 4,
            filon_tol: 1e-10,
            filon_depth: 16,
            panel_nodes: 8,
            phase_per_panel: 3.0,
            pilot_nodes: 12,
            refine: 1,
            mode_tol: 1e-6,
            max_nodes: 400_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CauchyProblem {
    pub spec: OperatorSpec,
    pub eff: EffectiveData,
    asm: FiberAssembler,
    pub bump: Bump,
    /// φ̂ = amplitude·B.
    pub amplitude: Vec<C64>,
    pub forcing: Vec<ForcingPiece>,
    pub s: f64,
    pub law: Law,
    pub centering: Centering,
    pub quadrature: QuadratureOptions,
    pub sobolev_norm_phi: f64,
    /// Fitted constant used for `CauchyError::bound`.
    pub constant: Option<f64>,
}

/// One comparison of u_ε and u₀ at (ε, τ).
#[derive(Clone, Debug, Serialize)]
pub struct CauchyError {
    pub eps: f64,
    pub tau: f64,
    pub l2_error: f64,
    /// C·rate·data_norm, NaN without a fitted constant.
    pub bound: f64,
    /// l2_error / (rate·data_norm).
    pub ratio: f64,
    /// ε^{s/p}(1 + |τ|^α)^{s/p}.
    pub rate: f64,
    /// ‖φ‖_{H^s} + ‖F‖_{L1((0,τ);H^s)}.
    pub data_norm: f64,
    pub profile: Law,
    pub center: Vec<f64>,
    pub radius: f64,
    pub norm_u_eps: f64,
    pub norm_u0: f64,
    /// Relative change of ‖u_ε‖ and ‖u₀‖ over time (F = 0 only).
    pub unitarity_defect: Option<f64>,
    pub trivial_bound: f64,
    pub nodes: usize,
    /// Filon panels that hit the depth limit.
    pub unresolved_panels: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchyTable {
    pub law: Law,
    pub s: f64,
    /// τ = ε^{-α} when present, otherwise the fixed τ of every row.
    pub alpha: Option<f64>,
    pub rows: Vec<CauchyError>,
    /// Slope of log(l2_error/data_norm) against log ε.
    pub fitted_slope: f64,
    pub predicted_slope: f64,
    pub fitted_constant: f64,
}

/// Per-node contributions, to be multiplied by the quadrature weight.
#[derive(Clone, Copy, Default)]
struct NodeSums {
    err: f64,
    u_eps: f64,
    u_eps0: f64,
    u0: f64,
    u00: f64,
}

struct Source {
    amp: CVec,
    kind: SourceKind,
}

enum SourceKind {
    Initial,
    /// Overlap [a, b] of a forcing interval with the time span, and sign(τ).
    Piece { a: f64, b: f64, sign: f64 },
}

impl Source {
    /// Multiplier of the mode with physical eigenvalue λ at time τ.
    fn multiplier(&self, tau: f64, lam: f64) -> C64 {
        match self.kind {
            SourceKind::Initial => C64::from_polar(1.0, -tau * lam),
            SourceKind::Piece { a, b, sign } => {
                // −i ∫_a^b e^{-i(τ−s)λ} ds, signed for τ < 0
                let h = 0.5 * (b - a);
                let c = 0.5 * (a + b);
                let x = h * lam;
                let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
                C64::new(0.0, -sign * 2.0 * h * sinc) * C64::from_polar(1.0, -(tau - c) * lam)
            }
        }
    }
}

impl CauchyProblem {
    pub fn new(
        spec: &OperatorSpec,
        eff: &EffectiveData,
        asm: &FiberAssembler,
        bump: Bump,
        amplitude: Vec<C64>,
        s: f64,
        law: Law,
    ) -> Result<Self> {
        if bump.center.len() != spec.lattice.dim {
            return Err(Error::Dimension(format!("bump centre has {} coordinates, expected {}", bump.center.len(), spec.lattice.dim)));
        }
        if amplitude.len() != spec.n {
            return Err(Error::Dimension(format!("amplitude has {} entries, expected {}", amplitude.len(), spec.n)));
        }
        if !(s >= 0.0) {
            return Err(Error::Config(format!("Sobolev order must be ≥ 0, got {s}")));
        }
        let sobolev_norm_phi = amp_norm(&amplitude) * bump.sobolev_norm(s);
        Ok(CauchyProblem {
            spec: spec.clone(),
            eff: eff.clone(),
            asm: asm.clone(),
            bump,
            amplitude,
            forcing: Vec::new(),
            s,
            law,
            centering: Centering::Fixed,
            quadrature: QuadratureOptions::default(),
            sobolev_norm_phi,
            constant: None,
        })
    }

    pub fn with_forcing(mut self, forcing: Vec<ForcingPiece>) -> Result<Self> {
        for p in &forcing {
            if p.amplitude.len() != self.spec.n || !(p.end >= p.start) {
                return Err(Error::Config("forcing piece needs n amplitudes and start ≤ end".into()));
            }
        }
        self.forcing = forcing;
        Ok(self)
    }

    /// Use a separate fiber basis with the given cutoff for the solves.
    pub fn with_fiber_cutoff(mut self, cutoff: f64) -> Result<Self> {
        let basis = crate::lattice::FourierBasis::new(&self.spec.lattice, cutoff)?;
        self.asm = FiberAssembler::new(&self.spec, &basis)?;
        Ok(self)
    }

    pub fn fiber_dim(&self) -> usize {
        self.asm.dim()
    }

    /// Scale φ so that ‖φ‖_{H^s} = 1.
    pub fn normalized(mut self) -> Self {
        let k = 1.0 / self.sobolev_norm_phi;
        for a in &mut self.amplitude {
            *a *= k;
        }
        self.sobolev_norm_phi = 1.0;
        self
    }

    /// Predicted rate ε^{s/p}(1 + |τ|^α)^{s/p}, with s capped at p.
    pub fn rate(&self, eps: f64, tau: f64) -> f64 {
        let (alpha, p) = self.law.exponents();
        let s = self.s.min(p);
        (eps * (1.0 + tau.abs().powf(alpha))).powf(s / p)
    }

    /// Compare u_ε and u₀ at (ε, τ) with the problem's centering.
    pub fn solve_pair(&self, eps: f64, tau: f64) -> Result<CauchyError> {
        let bump = self.bump_for(eps, tau)?;
        self.solve_with(&bump, eps, tau)
    }

    /// The bump used at (ε, τ).
    pub fn bump_for(&self, eps: f64, tau: f64) -> Result<Bump> {
        match &self.centering {
            Centering::Fixed => Ok(self.bump.clone()),
            Centering::Worst { rel_width, grid } => {
                if !(*rel_width > 0.0 && *rel_width < 1.0) {
                    return Err(Error::Config("rel_width must lie in (0, 1)".into()));
                }
                let mut opts = grid.clone();
                opts.include_origin = false;
                let ks = k_grid(&self.spec, &opts, eps)?;
                let norms: Vec<f64> = {
                    use rayon::prelude::*;
                    ks.par_iter()
                        .map(|k| DiscrepancyFiber::new(&self.spec, &self.eff, &self.asm, k).norm(eps, tau, self.s))
                        .collect()
                };
                let mut best = (f64::NEG_INFINITY, 0usize);
                for (i, v) in norms.iter().enumerate() {
                    if *v > best.0 {
                        best = (*v, i);
                    }
                }
                let k = &ks[best.1];
                let t = k.iter().map(|x| x * x).sum::<f64>().sqrt();
                // keep the scaled box inside the dual cell
                let room = (1.0 - rel_width) * self.spec.lattice.r0;
                let scale = if t > room { room / t } else { 1.0 };
                let center: Vec<f64> = k.iter().map(|x| x * scale / eps).collect();
                Bump::new(center, rel_width * t * scale / eps, self.bump.power)
            }
        }
    }

    fn sources(&self, tau: f64) -> Vec<Source> {
        let n = self.spec.n;
        let mut out = vec![Source { amp: CVec::from_vec(self.amplitude.clone()), kind: SourceKind::Initial }];
        let (lo, hi) = if tau >= 0.0 { (0.0, tau) } else { (tau, 0.0) };
        for p in &self.forcing {
            let (a, b) = (p.start.max(lo), p.end.min(hi));
            if b > a {
                out.push(Source {
                    amp: CVec::from_iterator(n, p.amplitude.iter().copied()),
                    kind: SourceKind::Piece { a, b, sign: tau.signum() },
                });
            }
        }
        out
    }

    /// Σ |overlap|·‖a‖ over the forcing pieces: ‖F‖_{L1((0,τ);·)} / ‖B‖.
    fn forcing_mass(&self, tau: f64) -> f64 {
        let (lo, hi) = if tau >= 0.0 { (0.0, tau) } else { (tau, 0.0) };
        self.forcing.iter().map(|p| (p.end.min(hi) - p.start.max(lo)).max(0.0) * amp_norm(&p.amplitude)).sum()
    }

    fn solve_with(&self, bump: &Bump, eps: f64, tau: f64) -> Result<CauchyError> {
        if !(eps > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("need ε > 0 and finite τ, got ε = {eps}, τ = {tau}")));
        }
        let lat = &self.spec.lattice;
        let d = lat.dim;
        let n = self.spec.n;
        let basis = &self.asm.basis;
        let scaled_center: Vec<f64> = bump.center.iter().map(|c| eps * c).collect();
        let (_, m0) = lat.reduce(&scaled_center);
        let block = basis
            .index_of(&m0)
            .ok_or_else(|| Error::SupportOverflow(format!("profile block {m0:?} outside the fiber basis; increase the cutoff")))?;
        let b0 = lat.dual_vector(&m0);
        for mask in 0..1usize << d {
            let corner: Vec<f64> = (0..d)
                .map(|l| {
                    let sgn = if mask >> l & 1 == 1 { 1.0 } else { -1.0 };
                    eps * (bump.center[l] + sgn * bump.radius) - b0[l]
                })
                .collect();
            if !lat.in_dual_cell(&corner) {
                return Err(Error::SupportOverflow(
                    "scaled profile support spans several dual cells; decrease eps or the profile radius".into(),
                ));
            }
        }
        let ctx = Ctx {
            spec: &self.spec,
            asm: &self.asm,
            f0: &self.eff.f0,
            f0_inv: inverse(&self.eff.f0).ok_or(Error::NotPositive)?,
            g0: &self.eff.g0,
            sources: self.sources(tau),
            eps,
            tau,
            block,
            b0,
            n,
        };

        let filon = match self.quadrature.method {
            QuadratureMethod::Direct => false,
            QuadratureMethod::Filon if !self.forcing.is_empty() => {
                return Err(Error::Config("the Filon rule handles F = 0 only; use the direct rule with forcing".into()))
            }
            QuadratureMethod::Filon => true,
            QuadratureMethod::Auto => self.forcing.is_empty(),
        };
        let (acc, total, unresolved_panels) = if filon { self.filon(&ctx, bump)? } else { self.direct(&ctx, bump)? };
        let vol = (2.0 * PI).powi(d as i32);
        let root = |x: f64| (x.max(0.0) / vol).sqrt();
        let l2_error = root(acc.err);
        let (norm_u_eps, norm_u_eps0, norm_u0, norm_u00) = (root(acc.u_eps), root(acc.u_eps0), root(acc.u0), root(acc.u00));
        let unitarity_defect = if self.forcing.is_empty() {
            Some(((norm_u_eps - norm_u_eps0).abs() / norm_u_eps0).max((norm_u0 - norm_u00).abs() / norm_u00))
        } else {
            None
        };
        let l2_phi = amp_norm(&self.amplitude) * bump.sobolev_norm(0.0);
        let hs = bump.sobolev_norm(self.s);
        let mass = self.forcing_mass(tau);
        let data_norm = amp_norm(&self.amplitude) * hs + mass * hs;
        let nb = &self.spec.norms;
        let kappa = if self.spec.f_is_identity { 1.0 } else { nb.f * nb.f_inv };
        let kappa0 = spectral_norm(&self.eff.f0) * spectral_norm(&ctx.f0_inv);
        let trivial_bound = (kappa + kappa0) * (l2_phi + mass * bump.sobolev_norm(0.0));
        let rate = self.rate(eps, tau);
        let ratio = l2_error / (rate * data_norm);
        Ok(CauchyError {
            eps,
            tau,
            l2_error,
            bound: self.constant.map_or(f64::NAN, |c| c * rate * data_norm),
            ratio,
            rate,
            data_norm,
            profile: self.law,
            center: bump.center.clone(),
            radius: bump.radius,
            norm_u_eps,
            norm_u0,
            unitarity_defect,
            trivial_bound,
            nodes: total,
            unresolved_panels,
        })
    }

    /// Composite Gauss–Legendre rule whose panels resolve every significant
    /// phase difference (estimated on a pilot grid).
    fn direct(&self, ctx: &Ctx, bump: &Bump) -> Result<(NodeSums, usize, usize)> {
        let (d, n, eps, tau) = (self.spec.lattice.dim, self.spec.n, ctx.eps, ctx.tau);
        // pilot: spread of significant phase gradients along each axis
        let q = self.quadrature.panel_nodes.max(2);
        let np = self.quadrature.pilot_nodes.max(3);
        let (px, _) = gauss_legendre(np);
        let pilot_axis: Vec<Vec<f64>> = (0..d).map(|l| px.iter().map(|x| bump.center[l] + bump.radius * x).collect()).collect();
        let mut pilot_idx = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            pilot_idx.push(idx.clone());
            if !odometer(&mut idx, np) {
                break;
            }
        }
        let pilot: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            pilot_idx
                .par_iter()
                .map(|ix| {
                    let xi: Vec<f64> = (0..d).map(|l| pilot_axis[l][ix[l]]).collect();
                    ctx.phases(&xi)
                })
                .collect()
        };
        let sig = significant_modes(&pilot, self.asm.dim(), n, self.quadrature.mode_tol);
        let mut per_axis = Vec::with_capacity(d);
        let base = 2 * bump.power as usize + self.s.ceil() as usize + 2;
        for l in 0..d {
            let mut grad: f64 = 0.0;
            for (i, ix) in pilot_idx.iter().enumerate() {
                if ix[l] + 1 >= np {
                    continue;
                }
                let mut jx = ix.clone();
                jx[l] += 1;
                let j = i + np.pow((d - 1 - l) as u32);
                debug_assert_eq!(pilot_idx[j], jx);
                let dxi = pilot_axis[l][ix[l] + 1] - pilot_axis[l][ix[l]];
                let diffs: Vec<f64> = sig.iter().map(|&b| pilot[j][b] - pilot[i][b]).collect();
                let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
                if hi > lo {
                    grad = grad.max((hi - lo) / dxi);
                }
            }
            let spread = grad * tau.abs() / (eps * eps) * 2.0 * bump.radius;
            let panels = ((spread / self.quadrature.phase_per_panel).ceil() as usize).max(base.div_ceil(q)).max(1);
            per_axis.push(panels * self.quadrature.refine.max(1) * q);
        }
        let total: usize = per_axis.iter().product();
        if total > self.quadrature.max_nodes {
            return Err(Error::Config(format!(
                "momentum quadrature needs {total} nodes (limit {}); reduce |τ|/ε² or the profile radius",
                self.quadrature.max_nodes
            )));
        }

        let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d).map(|l| composite_gl(bump.center[l] - bump.radius, bump.center[l] + bump.radius, per_axis[l] / q, q)).collect();
        let mut nodes = Vec::with_capacity(total);
        let mut ix = vec![0usize; d];
        loop {
            let xi: Vec<f64> = (0..d).map(|l| axes[l].0[ix[l]]).collect();
            let w: f64 = (0..d).map(|l| axes[l].1[ix[l]]).product();
            nodes.push((xi, w));
            let mut more = false;
            for axis in (0..d).rev() {
                if ix[axis] + 1 < per_axis[axis] {
                    ix[axis] += 1;
                    more = true;
                    break;
                }
                ix[axis] = 0;
            }
            if !more {
                break;
            }
        }
        let sums: Vec<NodeSums> = {
            use rayon::prelude::*;
            nodes.par_iter().map(|(xi, _)| ctx.node(xi, bump.value(xi))).collect()
        };
        let mut acc = NodeSums::default();
        for ((_, w), s) in nodes.iter().zip(&sums) {
            acc.err += w * s.err;
            acc.u_eps += w * s.u_eps;
            acc.u_eps0 += w * s.u_eps0;
            acc.u0 += w * s.u0;
            acc.u00 += w * s.u00;
        }
        Ok((acc, total, 0))
    }

    /// Adaptive Filon-type rule. On each panel every oscillatory term A e^{iΨ}
    /// is split as e^{iΨ_lin}·(A e^{i(Ψ − Ψ_lin)}), the second factor is
    /// expanded in tensor Legendre polynomials from Gauss nodes, and the
    /// moments ∫ P_n(u) e^{iωu} du = 2 iⁿ j_n(ω) are exact. The cost is set by
    /// phase curvature, not by the phase itself.
    fn filon(&self, ctx: &Ctx, bump: &Bump) -> Result<(NodeSums, usize, usize)> {
        use rayon::prelude::*;
        let d = self.spec.lattice.dim;
        let q = self.quadrature.filon_nodes.max(4);
        let rule = LegendreRule::new(q);
        let p0 = self.quadrature.filon_panels.max(1);
        let box_vol = (2.0 * bump.radius).powi(d as i32);
        let mut level: Vec<Panel> = Vec::new();
        let h0 = 2.0 * bump.radius / p0 as f64;
        let mut ix = vec![0usize; d];
        loop {
            let lo: Vec<f64> = (0..d).map(|l| bump.center[l] - bump.radius + h0 * ix[l] as f64).collect();
            let hi: Vec<f64> = lo.iter().map(|x| x + h0).collect();
            level.push(Panel { lo, hi, depth: 0 });
            if !odometer(&mut ix, p0) {
                break;
            }
        }
        let mut acc = NodeSums::default();
        let mut nodes = 0usize;
        let mut unresolved = 0usize;
        let mut scale: Option<f64> = None;
        while !level.is_empty() {
            let results: Vec<PanelResult> = level.par_iter().map(|p| rule.panel(ctx, bump, p)).collect();
            nodes += level.len() * q.pow(d as u32);
            let sc = *scale.get_or_insert_with(|| results.iter().map(|r| r.sums.err).sum::<f64>().abs());
            let mut next = Vec::new();
            for (p, r) in level.iter().zip(&results) {
                let share = p.volume() / box_vol;
                let ok = r.tail <= (self.quadrature.filon_tol * sc * share).max(r.floor);
                if ok || p.depth >= self.quadrature.filon_depth {
                    if !ok {
                        unresolved += 1;
                    }
                    acc.err += r.sums.err;
                    acc.u_eps += r.sums.u_eps;
                    acc.u_eps0 += r.sums.u_eps0;
                    acc.u0 += r.sums.u0;
                    acc.u00 += r.sums.u00;
                } else {
                    next.extend(p.split());
                }
            }
            if nodes > self.quadrature.max_nodes {
                return Err(Error::Config(format!(
                    "Filon refinement exceeded {} nodes; reduce |τ| or the profile radius",
                    self.quadrature.max_nodes
                )));
            }
            level = next;
        }
        Ok((acc, nodes, unresolved))
    }

    /// Errors over ε at fixed τ.
    pub fn eps_table(&self, tau: f64, eps_list: &[f64]) -> Result<CauchyTable> {
        let rows = eps_list.iter().map(|&e| self.solve_pair(e, tau)).collect::<Result<Vec<_>>>()?;
        let (_, p) = self.law.exponents();
        Ok(self.finish_table(rows, None, self.s.min(p) / p))
    }

    /// Errors at τ = ε^{-α} with the fitted exponent and the predicted one.
    pub fn long_time_table(&self, alpha: f64, eps_list: &[f64]) -> Result<CauchyTable> {
        if !(alpha >= 0.0) {
            return Err(Error::Config(format!("α must be ≥ 0, got {alpha}")));
        }
        let rows = eps_list.iter().map(|&e| self.solve_pair(e, e.powf(-alpha))).collect::<Result<Vec<_>>>()?;
        let (_, p) = self.law.exponents();
        let s = self.s.min(p);
        let predicted = match self.law {
            Law::General => s * (1.0 - alpha) / 3.0,
            Law::Enhanced => s * (1.0 - alpha / 2.0) / 2.0,
        };
        Ok(self.finish_table(rows, Some(alpha), predicted))
    }

    fn finish_table(&self, mut rows: Vec<CauchyError>, alpha: Option<f64>, predicted_slope: f64) -> CauchyTable {
        let fitted_constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        for r in &mut rows {
            r.bound = fitted_constant * r.rate * r.data_norm;
        }
        let fitted_slope = if rows.len() >= 2 {
            let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.l2_error / r.data_norm).collect();
            loglog_fit(&xs, &ys).slope
        } else {
            f64::NAN
        };
        CauchyTable { law: self.law, s: self.s, alpha, rows, fitted_slope, predicted_slope, fitted_constant }
    }
}

fn amp_norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Composite Gauss–Legendre rule with `panels` equal panels on [a, b].
fn composite_gl(a: f64, b: f64, panels: usize, q: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(q);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * q);
    let mut ws = Vec::with_capacity(panels * q);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            xs.push(mid + 0.5 * h * xi);
            ws.push(0.5 * h * wi);
        }
    }
    (xs, ws)
}

struct Ctx<'a> {
    spec: &'a OperatorSpec,
    asm: &'a FiberAssembler,
    f0: &'a CMat,
    f0_inv: CMat,
    g0: &'a CMat,
    sources: Vec<Source>,
    eps: f64,
    tau: f64,
    block: usize,
    b0: Vec<f64>,
    n: usize,
}

impl Ctx<'_> {
    fn fiber_k(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter().zip(&self.b0).map(|(x, b)| self.eps * x - b).collect()
    }

    fn effective(&self, xi: &[f64]) -> crate::linalg::HermEig {
        let scaled: Vec<f64> = xi.iter().map(|x| self.eps * x).collect();
        let b = symbol(&self.spec.b_mats, &scaled);
        herm_eig(&hermitize(&(self.f0 * b.adjoint() * self.g0 * b * self.f0)))
    }

    /// Fiber eigenvalues (exact then effective) and the weight of the data in
    /// each exact mode, for the pilot.
    fn phases(&self, xi: &[f64]) -> Vec<f64> {
        let fib = self.asm.fiber(&self.fiber_k(xi));
        let mut out = fib.eig.values.clone();
        let dim = out.len();
        let x = self.embed(&self.sources[0].amp, dim);
        let mx = match &fib.weight {
            Some(m) => m * x,
            None => x,
        };
        let c = fib.eig.vectors.ad_mul(&mx);
        out.extend(self.effective(xi).values);
        out.extend(c.iter().map(|z| z.norm_sqr()));
        out
    }

    fn embed(&self, a: &CVec, dim: usize) -> CVec {
        let mut x = CVec::zeros(dim);
        x.rows_mut(self.block * self.n, self.n).copy_from(a);
        x
    }

    /// err² density and norms at ξ in the form base + Re Σ A_t e^{iΨ_t}
    /// (F = 0), all scaled by |B(ξ)|².
    fn filon_node(&self, xi: &[f64], bump: f64) -> FilonNode {
        let e2 = self.eps * self.eps;
        let fib = self.asm.fiber(&self.fiber_k(xi));
        let dim = fib.eig.values.len();
        let n = self.n;
        let v = &fib.eig.vectors;
        let a = &self.sources[0].amp;
        let x = self.embed(a, dim);
        let mx = match &fib.weight {
            Some(m) => m * &x,
            None => x.clone(),
        };
        let c = v.ad_mul(&mx);
        let phi: Vec<f64> = fib.eig.values.iter().map(|l| self.tau * l / e2).collect();
        let b2 = bump * bump;
        let mut base = 0.0;
        let mut amps = Vec::new();
        let mut phases = Vec::new();
        match &fib.weight {
            None => base += c.norm_squared(),
            Some(_) => {
                let g = v.ad_mul(v);
                for j in 0..dim {
                    base += c[j].norm_sqr() * g[(j, j)].re;
                    for l in j + 1..dim {
                        amps.push(c[j].conj() * c[l] * g[(j, l)] * 2.0 * b2);
                        phases.push(phi[j] - phi[l]);
                    }
                }
            }
        }
        let ef = self.effective(xi);
        let fa = &self.f0_inv * a;
        let proj: Vec<C64> = (0..n).map(|k| ef.vectors.column(k).dotc(&fa)).collect();
        let e: Vec<CVec> = (0..n).map(|k| self.f0 * ef.vectors.column(k) * proj[k]).collect();
        let phi0: Vec<f64> = ef.values.iter().map(|l| self.tau * l / e2).collect();
        for k in 0..n {
            base += e[k].norm_squared();
            for l in k + 1..n {
                amps.push(e[k].dotc(&e[l]) * 2.0 * b2);
                phases.push(phi0[k] - phi0[l]);
            }
        }
        for k in 0..n {
            for j in 0..dim {
                let vj = v.column(j);
                let blk = vj.rows(self.block * n, n);
                amps.push(e[k].dotc(&blk) * c[j] * (-2.0 * b2));
                phases.push(phi0[k] - phi[j]);
            }
        }
        let u0: f64 = proj.iter().map(|z| z.norm_sqr()).sum();
        FilonNode {
            base: b2 * base,
            amps,
            phases,
            norms: [b2 * c.norm_squared(), b2 * x.dotc(&mx).re, b2 * u0, b2 * fa.norm_squared()],
            lam_max: fib.eig.values.iter().chain(ef.values.iter()).fold(0.0, |m, l| m.max(l.abs())),
        }
    }

    /// Squared error and norm densities at ξ (before |B|² and weights).
    fn node(&self, xi: &[f64], bump: f64) -> NodeSums {
        let e2 = self.eps * self.eps;
        let fib = self.asm.fiber(&self.fiber_k(xi));
        let dim = fib.eig.values.len();
        let v = &fib.eig.vectors;
        let mut coef = CVec::zeros(dim);
        let mut init_m = 0.0;
        for (si, src) in self.sources.iter().enumerate() {
            let x = self.embed(&src.amp, dim);
            let mx = match &fib.weight {
                Some(m) => m * &x,
                None => x.clone(),
            };
            if si == 0 {
                init_m = x.dotc(&mx).re;
            }
            let c = v.ad_mul(&mx);
            for (j, lam) in fib.eig.values.iter().enumerate() {
                coef[j] += src.multiplier(self.tau, lam / e2) * c[j];
            }
        }
        let exact = v * &coef;
        let exact_m = match &fib.weight {
            Some(m) => exact.dotc(&(m * &exact)).re,
            None => exact.norm_squared(),
        };
        let ef = self.effective(xi);
        let mut eff = CVec::zeros(self.n);
        for src in &self.sources {
            let mut c = ef.vectors.ad_mul(&(&self.f0_inv * &src.amp));
            for (j, lam) in ef.values.iter().enumerate() {
                c[j] *= src.multiplier(self.tau, lam / e2);
            }
            eff += self.f0 * (&ef.vectors * c);
        }
        let a0 = &self.sources[0].amp;
        let mut diff = exact;
        let mut blk = diff.rows_mut(self.block * self.n, self.n);
        blk -= &eff;
        let b2 = bump * bump;
        NodeSums {
            err: b2 * diff.norm_squared(),
            u_eps: b2 * exact_m,
            u_eps0: b2 * init_m,
            u0: b2 * (&self.f0_inv * &eff).norm_squared(),
            u00: b2 * (&self.f0_inv * a0).norm_squared(),
        }
    }
}

/// Indices (into the pilot vectors) of the phases that matter: exact modes
/// carrying a non-negligible share of the data anywhere, and all effective modes.
fn significant_modes(pilot: &[Vec<f64>], dim: usize, n: usize, tol: f64) -> Vec<usize> {
    let mut keep = vec![false; dim];
    for p in pilot {
        let w = &p[dim + n..];
        let mut sorted = w.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let top = n.min(sorted.len());
        let leak: f64 = sorted[top..].iter().sum();
        for (j, x) in w.iter().enumerate() {
            if *x >= sorted[top - 1] || *x > tol * leak {
                keep[j] = true;
            }
        }
    }
    let mut out: Vec<usize> = (0..dim).filter(|&j| keep[j]).collect();
    out.extend(dim..dim + n);
    out
}

struct Panel {
    lo: Vec<f64>,
    hi: Vec<f64>,
    depth: usize,
}

impl Panel {
    fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    fn split(&self) -> Vec<Panel> {
        let d = self.lo.len();
        (0..1usize << d)
            .map(|mask| {
                let mut lo = self.lo.clone();
                let mut hi = self.hi.clone();
                for l in 0..d {
                    let mid = 0.5 * (self.lo[l] + self.hi[l]);
                    if mask >> l & 1 == 1 {
                        lo[l] = mid;
                    } else {
                        hi[l] = mid;
                    }
                }
                Panel { lo, hi, depth: self.depth + 1 }
            })
            .collect()
    }
}

struct PanelResult {
    sums: NodeSums,
    /// Bound on the integral of the unresolved Legendre tail.
    tail: f64,
    /// Tail level explained by eigenvalue roundoff amplified by |τ|/ε².
    floor: f64,
}

/// Integrand data at one node: err² density = base + Re Σ_t A_t e^{iΨ_t}.
struct FilonNode {
    base: f64,
    amps: Vec<C64>,
    phases: Vec<f64>,
    norms: [f64; 4],
    /// Largest fiber eigenvalue magnitude, the scale of its absolute roundoff.
    lam_max: f64,
}

/// Gauss–Legendre nodes with the Legendre analysis matrix
/// T[n][i] = (2n + 1)/2 · w_i P_n(u_i).
struct LegendreRule {
    q: usize,
    u: Vec<f64>,
    w: Vec<f64>,
    analysis: Vec<Vec<f64>>,
}

impl LegendreRule {
    fn new(q: usize) -> Self {
        let (u, w) = gauss_legendre(q);
        let mut analysis = vec![vec![0.0; q]; q];
        for (i, &x) in u.iter().enumerate() {
            let (mut p0, mut p1) = (1.0, x);
            for n in 0..q {
                let pn = if n == 0 {
                    1.0
                } else if n == 1 {
                    x
                } else {
                    let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
                    p0 = p1;
                    p1 = p2;
                    p2
                };
                analysis[n][i] = (2 * n + 1) as f64 / 2.0 * w[i] * pn;
            }
        }
        LegendreRule { q, u, w, analysis }
    }

    /// Apply the analysis matrix along every axis of a q^d tensor (row-major,
    /// last axis fastest).
    fn analyse(&self, values: &[C64], d: usize) -> Vec<C64> {
        let q = self.q;
        let mut cur = values.to_vec();
        for axis in 0..d {
            let stride = q.pow((d - 1 - axis) as u32);
            let mut out = vec![C64::new(0.0, 0.0); cur.len()];
            for (base, _) in cur.iter().enumerate() {
                if (base / stride) % q != 0 {
                    continue;
                }
                for n in 0..q {
                    let mut acc = C64::new(0.0, 0.0);
                    for i in 0..q {
                        acc += cur[base + i * stride] * self.analysis[n][i];
                    }
                    out[base + n * stride] = acc;
                }
            }
            cur = out;
        }
        cur
    }

    fn panel(&self, ctx: &Ctx, bump: &Bump, p: &Panel) -> PanelResult {
        let d = p.lo.len();
        let q = self.q;
        let half: Vec<f64> = p.lo.iter().zip(&p.hi).map(|(a, b)| 0.5 * (b - a)).collect();
        let mid: Vec<f64> = p.lo.iter().zip(&p.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let jac: f64 = half.iter().product();
        let mut idx = vec![0usize; d];
        let mut data = Vec::with_capacity(q.pow(d as u32));
        let mut weights = Vec::with_capacity(q.pow(d as u32));
        loop {
            let xi: Vec<f64> = (0..d).map(|l| mid[l] + half[l] * self.u[idx[l]]).collect();
            weights.push(jac * (0..d).map(|l| self.w[idx[l]]).product::<f64>());
            data.push(ctx.filon_node(&xi, bump.value(&xi)));
            if !odometer(&mut idx, q) {
                break;
            }
        }
        let mut sums = NodeSums::default();
        let mut magnitude = 0.0;
        let lam_max = data.iter().map(|nd| nd.lam_max).fold(0.0, f64::max);
        let noise = (16.0 * f64::EPSILON * ctx.tau.abs() * lam_max / (ctx.eps * ctx.eps)).max(1e-13);
        for (nd, w) in data.iter().zip(&weights) {
            sums.err += w * nd.base;
            sums.u_eps += w * nd.norms[0];
            sums.u_eps0 += w * nd.norms[1];
            sums.u0 += w * nd.norms[2];
            sums.u00 += w * nd.norms[3];
            magnitude += w * nd.base.abs();
        }
        let nterms = data[0].amps.len();
        let mut tail = 0.0;
        let big = |ix: usize| -> bool {
            // some axis index ≥ q − 2
            let mut r = ix;
            for _ in 0..d {
                if r % q >= q - 2 {
                    return true;
                }
                r /= q;
            }
            false
        };
        for t in 0..nterms {
            let amax = data.iter().map(|nd| nd.amps[t].norm()).fold(0.0, f64::max);
            if amax == 0.0 {
                continue;
            }
            let psi: Vec<C64> = data.iter().map(|nd| C64::new(nd.phases[t], 0.0)).collect();
            let pc = self.analyse(&psi, d);
            let c0 = pc[0].re;
            let omega: Vec<f64> = (0..d).map(|l| pc[q.pow((d - 1 - l) as u32)].re).collect();
            let mut idx = vec![0usize; d];
            let mut resid = Vec::with_capacity(data.len());
            for nd in &data {
                let lin: f64 = c0 + (0..d).map(|l| omega[l] * self.u[idx[l]]).sum::<f64>();
                resid.push(nd.amps[t] * C64::from_polar(1.0, nd.phases[t] - lin));
                odometer(&mut idx, q);
            }
            let coef = self.analyse(&resid, d);
            let moments: Vec<Vec<C64>> = omega.iter().map(|&om| legendre_moments(q, om)).collect();
            let mut integral = C64::new(0.0, 0.0);
            let mut idx = vec![0usize; d];
            for (ci, c) in coef.iter().enumerate() {
                let m: C64 = (0..d).map(|l| moments[l][idx[l]]).product();
                integral += c * m;
                if big(ci) {
                    tail += c.norm() * 2f64.powi(d as i32) * jac;
                }
                odometer(&mut idx, q);
            }
            integral *= C64::from_polar(jac, c0);
            sums.err += integral.re;
            magnitude += amax * 2f64.powi(d as i32) * jac;
        }
        PanelResult { sums, tail, floor: noise * magnitude }
    }
}

/// ∫_{-1}^{1} P_n(u) e^{iωu} du = 2 iⁿ j_n(ω) for n < q.
fn legendre_moments(q: usize, omega: f64) -> Vec<C64> {
    let j = spherical_bessel(q, omega);
    let mut ipow = C64::new(1.0, 0.0);
    let mut out = Vec::with_capacity(q);
    for jn in j {
        out.push(ipow * 2.0 * jn);
        ipow *= C64::new(0.0, 1.0);
    }
    out
}

/// j_0(x), …, j_{count−1}(x) for real x.
pub fn spherical_bessel(count: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; count];
    if count == 0 {
        return out;
    }
    let ax = x.abs();
    if ax < 1e-3 {
        // three-term series x^n/(2n+1)!! (1 − x²/(2(2n+3)) + x⁴/(8(2n+3)(2n+5)))
        let mut lead = 1.0;
        for (n, o) in out.iter_mut().enumerate() {
            if n > 0 {
                lead *= ax / (2 * n + 1) as f64;
            }
            let a = (2 * n + 3) as f64;
            let b = (2 * n + 5) as f64;
            *o = lead * (1.0 - ax * ax / (2.0 * a) + ax.powi(4) / (8.0 * a * b));
        }
    } else if ax >= count as f64 {
        out[0] = ax.sin() / ax;
        if count > 1 {
            out[1] = ax.sin() / (ax * ax) - ax.cos() / ax;
        }
        for n in 1..count.saturating_sub(1) {
            out[n + 1] = (2 * n + 1) as f64 / ax * out[n] - out[n - 1];
        }
    } else {
        // Miller's downward recurrence, normalised by the larger of j_0, j_1
        let start = count + 20 + ax as usize;
        let mut jp1 = 0.0;
        let mut jn = 1e-300;
        let mut tmp = vec![0.0; start + 1];
        tmp[start] = jn;
        for n in (1..=start).rev() {
            let jm1 = (2 * n + 1) as f64 / ax * jn - jp1;
            jp1 = jn;
            jn = jm1;
            tmp[n - 1] = jn;
            if jn.abs() > 1e250 {
                for v in tmp[n - 1..].iter_mut() {
                    *v *= 1e-250;
                }
                jn *= 1e-250;
                jp1 *= 1e-250;
            }
        }
        let j0 = ax.sin() / ax;
        let j1 = ax.sin() / (ax * ax) - ax.cos() / ax;
        let k = if j0.abs() >= j1.abs() { j0 / tmp[0] } else { j1 / tmp[1] };
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o = t * k;
        }
    }
    if x < 0.0 {
        for (n, o) in out.iter_mut().enumerate() {
            if n % 2 == 1 {
                *o = -*o;
            }
        }
    }
    out
}

/// eps, tau, l2_error, bound, ratio, data_norm, nodes.
pub fn cauchy_csv(table: &CauchyTable) -> String {
    let mut csv = Csv::new(&["eps", "tau", "l2_error", "bound", "ratio", "data_norm", "nodes"]);
    for r in &table.rows {
        csv.row(vec![r.eps.into(), r.tau.into(), r.l2_error.into(), r.bound.into(), r.ratio.into(), r.data_norm.into(), r.nodes.into()]);
    }
    csv.finish()
}
