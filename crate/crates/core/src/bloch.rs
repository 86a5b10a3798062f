//! Operator data and the Bloch fibers A(k) = f* b(D+k)* g b(D+k) f on the cell.

use crate::error::{Error, Result};
use crate::lattice::{FourierBasis, Lattice};
use crate::linalg::{
    herm_eig, herm_eigvals, hermitian_defect, hermitize, max_abs, real,
    unitary_exp, CMat, HermEig, C64,
};
use crate::periodic_fn::PeriodicMatrixFunction as Pmf;
use serde::Serialize;
use std::f64::consts::PI;

/// Numerical settings for pointwise field maps (inverse, root, exponential).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FieldOptions {
    /// Grid points per axis.
    pub grid: usize,
    /// Frequency cutoff (in units of |b|) for fields produced on the grid.
    pub field_cutoff: f64,
}

impl FieldOptions {
    /// Defaults sized for a lattice: 24 shells of the shortest dual vector.
    pub fn for_lattice(lattice: &Lattice) -> Self {
        FieldOptions { grid: 128, field_cutoff: 2.0 * lattice.r0 * 24.0 + 1e-9 }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormBounds {
    pub g: f64,
    pub g_inv: f64,
    pub f: f64,
    pub f_inv: f64,
}

/// The data (b_1..b_d, g, f) of A = f* b(D)* g b(D) f.
#[derive(Clone, Debug)]
pub struct OperatorSpec {
    pub lattice: Lattice,
    pub b_mats: Vec<CMat>,
    pub g: Pmf,
    pub f: Pmf,
    pub f_inv: Pmf,
    pub h: Pmf,
    pub m: usize,
    pub n: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    pub norms: NormBounds,
    pub f_is_identity: bool,
    pub options: FieldOptions,
}

/// Unit directions covering the sphere S^{d-1}.
///
/// d = 1 gives ±1; d = 2 gives `count` equally spaced angles; d ≥ 3 uses a
/// Fibonacci lattice with every point paired with its antipode.
pub fn sphere_grid(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count.max(2))
            .map(|j| {
                let a = 2.0 * PI * j as f64 / count.max(2) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let half = (count / 2).max(1);
            let golden = PI * (3.0 - 5f64.sqrt());
            let mut out = Vec::with_capacity(2 * half);
            for i in 0..half {
                let z = 1.0 - (i as f64 + 0.5) / half as f64;
                let r = (1.0 - z * z).sqrt();
                let mut p = vec![0.0; d];
                p[0] = r * (golden * i as f64).cos();
                p[1] = r * (golden * i as f64).sin();
                p[2] = z;
                let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                p.iter_mut().for_each(|x| *x /= norm);
                out.push(p.iter().map(|x| -x).collect());
                out.push(p);
            }
            out
        }
    }
}

/// b(ξ) = Σ ξ_l b_l.
pub fn symbol(b_mats: &[CMat], xi: &[f64]) -> CMat {
    let (m, n) = b_mats[0].shape();
    let mut out = CMat::zeros(m, n);
    for (bl, x) in b_mats.iter().zip(xi) {
        out += bl * real(*x);
    }
    out
}

impl OperatorSpec {
    /// Validate and complete the data. `f = None` means f = 1.
    pub fn new(lattice: &Lattice, b_mats: Vec<CMat>, g: Pmf, f: Option<Pmf>, options: FieldOptions) -> Result<Self> {
        match f {
            None => {
                let n = b_mats.first().map(|b| b.ncols()).unwrap_or(0);
                let id = Pmf::identity(lattice, n);
                Self::assemble(lattice, b_mats, g, id.clone(), id, true, options)
            }
            Some(f) => {
                let keep = FourierBasis::new(lattice, options.field_cutoff)?;
                let inv = f.inverse(options.grid, &keep)?;
                Self::check_loss(inv.dropped_mass)?;
                Self::assemble(lattice, b_mats, g, f, inv.field, false, options)
            }
        }
    }

    /// Use when both f and f⁻¹ are known (e.g. f⁻¹ exactly band-limited).
    pub fn with_inverse_pair(
        lattice: &Lattice,
        b_mats: Vec<CMat>,
        g: Pmf,
        f: Pmf,
        f_inv: Pmf,
        options: FieldOptions,
    ) -> Result<Self> {
        Self::assemble(lattice, b_mats, g, f, f_inv, false, options)
    }

    fn check_loss(loss: f64) -> Result<()> {
        if loss > 1e-8 {
            Err(Error::Truncation(loss))
        } else {
            Ok(())
        }
    }

    fn assemble(
        lattice: &Lattice,
        b_mats: Vec<CMat>,
        g: Pmf,
        f: Pmf,
        f_inv: Pmf,
        f_is_identity: bool,
        options: FieldOptions,
    ) -> Result<Self> {
        let d = lattice.dim;
        if b_mats.len() != d {
            return Err(Error::Dimension(format!("need {d} symbol matrices, got {}", b_mats.len())));
        }
        let (m, n) = b_mats[0].shape();
        if b_mats.iter().any(|b| b.shape() != (m, n)) {
            return Err(Error::Dimension("symbol matrices differ in shape".into()));
        }
        if m < n || n == 0 {
            return Err(Error::Dimension(format!("need m ≥ n ≥ 1, got m = {m}, n = {n}")));
        }
        if g.shape() != (m, m) || f.shape() != (n, n) || f_inv.shape() != (n, n) {
            return Err(Error::Dimension("coefficient shapes do not match b".into()));
        }
        let scale = g.coeffs.values().map(max_abs).fold(0.0, f64::max).max(1.0);
        if g.hermitian_defect() > 1e-12 * scale {
            return Err(Error::Model("g is not Hermitian".into()));
        }
        let grid = options.grid.max(crate::periodic_fn::min_grid(
            g.max_index().max(f.max_index()).max(f_inv.max_index()),
        ));
        if g.min_eigenvalue(grid)? <= 0.0 {
            return Err(Error::NotPositive);
        }
        // f f⁻¹ = 1 on the grid
        let prod = f.multiply(&f_inv)?.sample(grid.max(crate::periodic_fn::min_grid(
            f.max_index() + f_inv.max_index(),
        )))?;
        let id = CMat::identity(n, n);
        let defect = prod.values.iter().map(|v| max_abs(&(v - &id))).fold(0.0, f64::max);
        if defect > 1e-8 {
            return Err(Error::Model(format!("f and f_inv are not inverse (defect {defect:e})")));
        }

        let thetas = sphere_grid(d, if d == 2 { 720 } else { 2000 });
        let (mut a0, mut a1) = (f64::INFINITY, 0.0f64);
        for th in &thetas {
            let b = symbol(&b_mats, th);
            let ev = herm_eigvals(&(b.adjoint() * &b));
            a0 = a0.min(ev[0]);
            a1 = a1.max(ev[n - 1]);
        }
        if a0 <= 1e-10 * a1 {
            return Err(Error::Model("rank b(θ) < n for some θ".into()));
        }

        // widen the kept band until the square root is resolved
        let mut h = None;
        for widen in [1.0, 2.0, 4.0] {
            let keep = FourierBasis::new(lattice, options.field_cutoff * widen)?;
            let root = g.sqrt_factor(grid * widen as usize, &keep)?;
            let done = root.dropped_mass <= 1e-8;
            h = Some(root);
            if done {
                break;
            }
        }
        let h = h.expect("at least one attempt");
        Self::check_loss(h.dropped_mass)?;
        let g_inv_norm = {
            let s = g.sample(grid)?;
            s.values.iter().map(|v| 1.0 / herm_eigvals(v)[0]).fold(0.0, f64::max)
        };
        let norms = NormBounds {
            g: g.sup_norm(grid)?,
            g_inv: g_inv_norm,
            f: f.sup_norm(grid)?,
            f_inv: f_inv.sup_norm(grid)?,
        };
        Ok(OperatorSpec {
            lattice: lattice.clone(),
            b_mats,
            g,
            f,
            f_inv,
            h: h.field,
            m,
            n,
            alpha0: a0,
            alpha1: a1,
            norms,
            f_is_identity,
            options,
        })
    }

    pub fn symbol(&self, xi: &[f64]) -> CMat {
        symbol(&self.b_mats, xi)
    }

    /// Q = (f f*)⁻¹ = (f⁻¹)* f⁻¹.
    pub fn q_field(&self) -> Pmf {
        self.f_inv.adjoint().multiply(&self.f_inv).expect("square fields")
    }

    pub fn q_bar(&self) -> CMat {
        self.q_field().mean()
    }

    pub fn constants(&self) -> ConstantsBundle {
        let c_star = self.alpha0 / (self.norms.f_inv.powi(2) * self.norms.g_inv);
        let r0 = self.lattice.r0;
        let delta = 0.25 * c_star * r0 * r0;
        let t0 = delta.sqrt() / (self.alpha1.sqrt() * self.norms.g.sqrt() * self.norms.f);
        ConstantsBundle { c_star, delta, t0, t00: None, c_circ: None, beta2: 1.0 }
    }

    /// Largest grid needed to resolve every stored field.
    pub fn working_grid(&self) -> usize {
        let mi = self.g.max_index().max(self.f.max_index()).max(self.f_inv.max_index());
        self.options.grid.max(crate::periodic_fn::min_grid(2 * mi))
    }
}

/// Threshold constants. `t00` and `c_circ` are filled from germ data.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantsBundle {
    pub c_star: f64,
    pub delta: f64,
    pub t0: f64,
    pub t00: Option<f64>,
    pub c_circ: Option<f64>,
    pub beta2: f64,
}

impl ConstantsBundle {
    /// Fill c° and t⁰⁰ from the germ eigenvalues γ°_1 < … < γ°_p of every
    /// direction (distinct cluster values). One cluster everywhere leaves
    /// both unset.
    pub fn with_clusters(mut self, spec: &OperatorSpec, cluster_values: &[Vec<f64>]) -> Self {
        let mut c_circ = f64::INFINITY;
        for vals in cluster_values {
            for i in 0..vals.len() {
                for j in 0..i {
                    let c = self.c_star.min((vals[i] - vals[j]).abs() / spec.n as f64);
                    c_circ = c_circ.min(c);
                }
            }
        }
        if c_circ.is_finite() {
            let nb = &spec.norms;
            let t00 = spec.lattice.r0 * spec.alpha0.sqrt() * c_circ
                / (8.0 * self.beta2)
                / spec.alpha1.powf(1.5)
                / nb.g.powf(1.5)
                / nb.g_inv.sqrt()
                / nb.f.powi(3)
                / nb.f_inv;
            self.c_circ = Some(c_circ);
            self.t00 = Some(t00);
        }
        self
    }
}

/// Eigen-data of one fiber in the coordinates v = f u.
///
/// A(k) u = λ u is solved as K(k) v = λ M v with K = b(D+k)* g b(D+k) and
/// M = (f f*)⁻¹, so the eigenvectors are M-orthonormal. For f = 1, M = I.
#[derive(Clone, Debug)]
pub struct BlochFiber {
    pub k: Vec<f64>,
    /// K(k).
    pub matrix: CMat,
    pub eig: HermEig,
    /// M, absent when f = 1.
    pub weight: Option<CMat>,
}

impl BlochFiber {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig.values
    }

    /// f e^{-i·phase·A(k)} f⁻¹ acting on v, which is e^{-i·phase·A(k)} when f = 1.
    pub fn exponential(&self, phase: f64) -> CMat {
        match &self.weight {
            None => unitary_exp(&self.eig, phase),
            Some(m) => {
                let mut vp = self.eig.vectors.clone();
                for (j, lam) in self.eig.values.iter().enumerate() {
                    let mut col = vp.column_mut(j);
                    col *= C64::from_polar(1.0, -phase * lam);
                }
                vp * self.eig.vectors.adjoint() * m
            }
        }
    }
}

pub fn fiber_exponential(eig: &HermEig, phase: f64) -> CMat {
    unitary_exp(eig, phase)
}

/// Galerkin discretisation of A(k) on u ∈ f⁻¹ span{e^{i⟨b,x⟩} : b ∈ S}.
///
/// Both K(k) and M are exact compressions, and the constants (the kernel of
/// A(0) in v coordinates) lie in the trial space.
#[derive(Clone, Debug)]
pub struct FiberAssembler {
    pub basis: FourierBasis,
    /// t⁰ of the operator, the admissible radius for expansions in |k|.
    pub t0: f64,
    b_mats: Vec<CMat>,
    m: usize,
    n: usize,
    g_conv: CMat,
    weight: Option<CMat>,
    /// L⁻¹ with M = L L*.
    weight_chol_inv: Option<CMat>,
}

/// Convolution matrix of a field between two frequency lists.
pub fn convolution_matrix(field: &Pmf, rows: &FourierBasis, cols: &FourierBasis) -> CMat {
    let (r, c) = field.shape();
    let mut out = CMat::zeros(r * rows.len(), c * cols.len());
    for (i, bi) in rows.freqs.iter().enumerate() {
        for (j, bj) in cols.freqs.iter().enumerate() {
            let diff: Vec<i64> = bi.iter().zip(bj).map(|(a, b)| a - b).collect();
            if let Some(blk) = field.coeffs.get(&diff) {
                out.view_mut((i * r, j * c), (r, c)).copy_from(blk);
            }
        }
    }
    out
}

impl FiberAssembler {
    pub fn new(spec: &OperatorSpec, basis: &FourierBasis) -> Result<Self> {
        let g_conv = hermitize(&convolution_matrix(&spec.g, basis, basis));
        if g_conv.clone().cholesky().is_none() {
            return Err(Error::Factorization("g compression not positive definite".into()));
        }
        let (weight, weight_chol_inv) = if spec.f_is_identity {
            (None, None)
        } else {
            let m = hermitize(&convolution_matrix(&spec.q_field(), basis, basis));
            let l = m
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Factorization("Q compression not positive definite".into()))?
                .l();
            let linv = l.try_inverse().ok_or_else(|| Error::Factorization("singular Q factor".into()))?;
            (Some(m), Some(linv))
        };
        Ok(FiberAssembler {
            basis: basis.clone(),
            t0: spec.constants().t0,
            b_mats: spec.b_mats.clone(),
            m: spec.m,
            n: spec.n,
            g_conv,
            weight,
            weight_chol_inv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n * self.basis.len()
    }

    pub fn weight(&self) -> Option<&CMat> {
        self.weight.as_ref()
    }

    /// K(k) with blocks b(b_i+k)* ĝ(b_i − b_j) b(b_j+k).
    pub fn matrix(&self, k: &[f64]) -> CMat {
        let (m, n) = (self.m, self.n);
        let syms: Vec<CMat> = self
            .basis
            .vectors
            .iter()
            .map(|v| {
                let xi: Vec<f64> = v.iter().zip(k).map(|(a, b)| a + b).collect();
                symbol(&self.b_mats, &xi)
            })
            .collect();
        let ns = syms.len();
        let mut gb = CMat::zeros(m * ns, n * ns);
        for (j, bj) in syms.iter().enumerate() {
            let blk = self.g_conv.columns(j * m, m) * bj;
            gb.columns_mut(j * n, n).copy_from(&blk);
        }
        let mut out = CMat::zeros(n * ns, n * ns);
        for (i, bi) in syms.iter().enumerate() {
            let blk = bi.adjoint() * gb.rows(i * m, m);
            out.rows_mut(i * n, n).copy_from(&blk);
        }
        hermitize(&out)
    }

    pub fn fiber(&self, k: &[f64]) -> BlochFiber {
        let matrix = self.matrix(k);
        let eig = match &self.weight_chol_inv {
            None => herm_eig(&matrix),
            Some(linv) => {
                let e = herm_eig(&hermitize(&(linv * &matrix * linv.adjoint())));
                HermEig { values: e.values, vectors: linv.adjoint() * e.vectors }
            }
        };
        BlochFiber { k: k.to_vec(), matrix, eig, weight: self.weight.clone() }
    }

    /// Lowest `count` eigenvalues of A(k).
    ///
    /// For count ≤ n the constants block is kept explicit and the rest is
    /// eliminated by a Schur complement iterated to self-consistency, which
    /// keeps full relative accuracy for eigenvalues of size |k|².
    pub fn lowest_eigenvalues(&self, k: &[f64], count: usize) -> Vec<f64> {
        if count <= self.n {
            if let Some(v) = self.lowest_by_schur(k, count) {
                return v;
            }
        }
        let mut v = self.fiber(k).eig.values;
        v.truncate(count);
        v
    }

    fn lowest_by_schur(&self, k: &[f64], count: usize) -> Option<Vec<f64>> {
        let n = self.n;
        let dim = self.dim();
        let z0 = self.basis.zero_index() * n;
        let kmat = self.matrix(k);
        let mmat = self.weight.clone().unwrap_or_else(|| CMat::identity(dim, dim));
        // permute the constants block to the front
        let order: Vec<usize> = (z0..z0 + n).chain((0..dim).filter(|i| *i < z0 || *i >= z0 + n)).collect();
        let perm = |a: &CMat| CMat::from_fn(dim, dim, |i, j| a[(order[i], order[j])]);
        let (kp, mp) = (perm(&kmat), perm(&mmat));
        let r = dim - n;
        let k00 = kp.view((0, 0), (n, n)).into_owned();
        let k0p = kp.view((0, n), (n, r)).into_owned();
        let kpp = kp.view((n, n), (r, r)).into_owned();
        let m00 = mp.view((0, 0), (n, n)).into_owned();
        let m0p = mp.view((0, n), (n, r)).into_owned();
        let mpp = mp.view((n, n), (r, r)).into_owned();
        let mut out = Vec::with_capacity(count);
        for l in 0..count {
            let mut lam = 0.0f64;
            let mut done = false;
            for _ in 0..60 {
                let a = &kpp - &mpp * real(lam);
                let c = (&k0p - &m0p * real(lam)).adjoint();
                let rr = -(a.lu().solve(&c)?);
                let ke = &k00 + &k0p * &rr + rr.adjoint() * k0p.adjoint() + rr.adjoint() * &kpp * &rr;
                let me = &m00 + &m0p * &rr + rr.adjoint() * m0p.adjoint() + rr.adjoint() * &mpp * &rr;
                let me = hermitize(&me);
                me.clone().cholesky()?;
                let next = crate::linalg::gen_herm_eig(&hermitize(&ke), &me).values[l];
                if !next.is_finite() {
                    return None;
                }
                let change = (next - lam).abs();
                lam = next;
                if change <= 1e-15 * lam.abs() || lam == 0.0 && change == 0.0 {
                    done = true;
                    break;
                }
            }
            if !done {
                return None;
            }
            out.push(lam);
        }
        Some(out)
    }
}

/// Diagonal of ℛ(k,ε)^{s/2}: ε^s (|b+k|² + ε²)^{-s/2}, repeated over n components.
pub fn smoothing_weight(basis: &FourierBasis, k: &[f64], eps: f64, s: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(basis.len() * n);
    for v in &basis.vectors {
        let t2: f64 = v.iter().zip(k).map(|(a, b)| (a + b) * (a + b)).sum();
        let w = if s == 0.0 { 1.0 } else { eps.powf(s) * (t2 + eps * eps).powf(-s / 2.0) };
        out.extend(std::iter::repeat(w).take(n));
    }
    out
}

/// M diag(w).
pub fn scale_columns(m: &CMat, w: &[f64]) -> CMat {
    let mut out = m.clone();
    for (j, &x) in w.iter().enumerate() {
        out.column_mut(j).scale_mut(x);
    }
    out
}

/// Fiber Hermiticity and semidefiniteness defects, for sanity checks.
pub fn fiber_defects(f: &BlochFiber) -> (f64, f64) {
    let scale = f.eig.values.last().copied().unwrap_or(1.0).abs().max(1.0);
    (hermitian_defect(&f.matrix) / scale, (-f.eig.values[0]).max(0.0) / scale)
}

/// e^{-iφ M} for a block-diagonal M given by its blocks.
pub fn block_exponential(blocks: &[CMat], phase: f64) -> CMat {
    let sizes: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(sizes, sizes);
    let mut at = 0;
    for b in blocks {
        let e = if b.nrows() == 1 {
            CMat::from_element(1, 1, C64::from_polar(1.0, -phase * b[(0, 0)].re))
        } else {
            unitary_exp(&herm_eig(b), phase)
        };
        out.view_mut((at, at), e.shape()).copy_from(&e);
        at += b.nrows();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_1d() -> OperatorSpec {
        let l = Lattice::cubic(1, 1.0);
        OperatorSpec::new(
            &l,
            vec![CMat::identity(1, 1)],
            Pmf::identity(&l, 1),
            None,
            FieldOptions::for_lattice(&l),
        )
        .unwrap()
    }

    #[test]
    fn free_fiber_is_diagonal() {
        let spec = free_1d();
        let basis = FourierBasis::new(&spec.lattice, 2.0 * PI * 4.5).unwrap();
        let asm = FiberAssembler::new(&spec, &basis).unwrap();
        let k = 0.7;
        let fib = asm.fiber(&[k]);
        let mut want: Vec<f64> = (-4..=4).map(|m| (2.0 * PI * m as f64 + k).powi(2)).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in fib.eigenvalues().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10 * b.max(1.0));
        }
        let low = asm.lowest_eigenvalues(&[k], 3);
        assert!((low[0] - k * k).abs() < 1e-15);
    }

    #[test]
    fn free_constants() {
        let c = free_1d().constants();
        assert!((c.c_star - 1.0).abs() < 1e-14);
        assert!((c.delta - PI * PI / 4.0).abs() < 1e-13);
        assert!((c.t0 - PI / 2.0).abs() < 1e-13);
    }

    #[test]
    fn smoothing_weight_values() {
        let spec = free_1d();
        let basis = FourierBasis::new(&spec.lattice, 2.0 * PI * 1.5).unwrap();
        let w = smoothing_weight(&basis, &[0.3], 0.1, 2.0, 1);
        let z = basis.zero_index();
        assert!((w[z] - 0.01 / (0.09 + 0.01)).abs() < 1e-15);
        assert!(smoothing_weight(&basis, &[0.3], 0.1, 0.0, 1).iter().all(|&x| x == 1.0));
    }

    #[test]
    fn exponential_of_zero_phase_is_identity() {
        let spec = free_1d();
        let basis = FourierBasis::new(&spec.lattice, 2.0 * PI * 2.5).unwrap();
        let fib = FiberAssembler::new(&spec, &basis).unwrap().fiber(&[0.2]);
        let e = fib.exponential(0.0);
        assert!(max_abs(&(e - CMat::identity(5, 5))) < 1e-14);
    }

    #[test]
    fn sphere_grids_are_unit() {
        for d in 1..=3 {
            for p in sphere_grid(d, 40) {
                let n: f64 = p.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-14);
            }
        }
    }
}
