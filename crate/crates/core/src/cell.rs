//! Periodic cell problems solved by Galerkin on the zero-mean Fourier subspace.

use crate::bloch::{convolution_matrix, symbol, OperatorSpec};
use crate::error::{Error, Result};
use crate::lattice::FourierBasis;
use crate::linalg::{herm_inv_sqrt, hermitize, max_abs, real, CMat};
use crate::periodic_fn::{mean_adjoint_product, CoeffRecord, PeriodicMatrixFunction as Pmf};
use serde::Serialize;

/// Everything produced by the cell problems.
#[derive(Clone, Debug)]
pub struct EffectiveData {
    pub basis: FourierBasis,
    pub lambda: Pmf,
    pub g_tilde: Pmf,
    pub g0: CMat,
    pub lambda_q: Pmf,
    pub lambda2: Vec<Pmf>,
    pub lambda2_q: Vec<Pmf>,
    pub q: Pmf,
    pub q_bar: CMat,
    pub f0: CMat,
    /// Largest relative Galerkin residual over all solves.
    pub residual: f64,
}

/// Factorised operator K = B* G B on S \ {0}, reused for every right side.
struct CellSystem {
    freqs: FourierBasis,
    b_blocks: Vec<CMat>,
    chol: nalgebra::linalg::Cholesky<crate::linalg::C64, nalgebra::Dyn>,
    k: CMat,
    n: usize,
}

impl CellSystem {
    fn new(spec: &OperatorSpec, basis: &FourierBasis) -> Result<Self> {
        let zero = vec![0i64; spec.lattice.dim];
        let nonzero: Vec<Vec<i64>> = basis.freqs.iter().filter(|m| **m != zero).cloned().collect();
        let freqs = FourierBasis::from_freqs(&spec.lattice, basis.cutoff, nonzero);
        let (m, n) = (spec.m, spec.n);
        let b_blocks: Vec<CMat> = freqs.vectors.iter().map(|v| symbol(&spec.b_mats, v)).collect();
        let g = convolution_matrix(&spec.g, &freqs, &freqs);
        let mut bmat = CMat::zeros(m * freqs.len(), n * freqs.len());
        for (i, blk) in b_blocks.iter().enumerate() {
            bmat.view_mut((i * m, i * n), (m, n)).copy_from(blk);
        }
        let k = hermitize(&(bmat.adjoint() * g * &bmat));
        let chol = k.clone().cholesky().ok_or(Error::CellSingular)?;
        Ok(CellSystem { freqs, b_blocks, chol, k, n })
    }

    /// Solve with a right side given per frequency (n × cols blocks); returns
    /// the zero-mean solution and its relative residual.
    fn solve(&self, spec: &OperatorSpec, rhs: &Pmf) -> (Pmf, f64) {
        let cols = rhs.cols;
        let n = self.n;
        let mut r = CMat::zeros(n * self.freqs.len(), cols);
        for (i, m) in self.freqs.freqs.iter().enumerate() {
            if let Some(c) = rhs.coeffs.get(m) {
                r.view_mut((i * n, 0), (n, cols)).copy_from(c);
            }
        }
        let x = self.chol.solve(&r);
        let res = max_abs(&(&self.k * &x - &r)) / max_abs(&r).max(1e-300);
        let mut out = Pmf::zeros(&spec.lattice, n, cols);
        for (i, m) in self.freqs.freqs.iter().enumerate() {
            let blk = x.view((i * n, 0), (n, cols)).into_owned();
            if max_abs(&blk) > 0.0 {
                out.coeffs.insert(m.clone(), blk);
            }
        }
        (out, if max_abs(&r) == 0.0 { 0.0 } else { res })
    }

    /// b(b)* applied blockwise to an m × cols field, restricted to S \ {0}.
    fn apply_b_adjoint(&self, spec: &OperatorSpec, field: &Pmf) -> Pmf {
        let mut out = Pmf::zeros(&spec.lattice, self.n, field.cols);
        for (i, m) in self.freqs.freqs.iter().enumerate() {
            if let Some(c) = field.coeffs.get(m) {
                out.coeffs.insert(m.clone(), self.b_blocks[i].adjoint() * c);
            }
        }
        out
    }
}

/// b(D) applied to an n × cols field.
pub fn apply_b(spec: &OperatorSpec, field: &Pmf) -> Pmf {
    let mut out = Pmf::zeros(&spec.lattice, spec.m, field.cols);
    for (m, c) in &field.coeffs {
        let v = spec.lattice.dual_vector(m);
        out.coeffs.insert(m.clone(), symbol(&spec.b_mats, &v) * c);
    }
    out
}

const RESIDUAL_TOL: f64 = 1e-9;

fn check_residual(r: f64) -> Result<()> {
    if r > RESIDUAL_TOL {
        Err(Error::Factorization(format!("cell residual {r:e} above tolerance")))
    } else {
        Ok(())
    }
}

/// Second corrector with weight Q and first corrector `lam`:
/// b(D)* g (b(D)X + b_l lam) = −b_l* g̃ + Q Q̄⁻¹ b_l* g⁰, mean(Q X) = 0.
fn second_corrector(
    spec: &OperatorSpec,
    sys: &CellSystem,
    lam: &Pmf,
    g_tilde: &Pmf,
    g0: &CMat,
    q: &Pmf,
    q_bar_inv: &CMat,
    l: usize,
) -> Result<(Pmf, f64)> {
    let bl = &spec.b_mats[l];
    let source = g_tilde
        .left_mul(&(bl.adjoint() * real(-1.0)))
        .add(&q.right_mul(&(q_bar_inv * bl.adjoint() * g0)))?;
    let solvability = max_abs(&source.mean()) / max_abs(g0).max(1.0);
    if solvability > RESIDUAL_TOL {
        return Err(Error::Solvability(solvability));
    }
    let coupling = spec.g.multiply(&lam.left_mul(bl))?;
    let rhs = source.sub(&sys.apply_b_adjoint(spec, &coupling))?;
    let (x, res) = sys.solve(spec, &rhs);
    let shift = q_bar_inv * q.multiply(&x)?.mean();
    let x_q = x.sub(&Pmf::constant(&spec.lattice, shift))?;
    Ok((x_q, res))
}

impl EffectiveData {
    pub fn compute(spec: &OperatorSpec, basis: &FourierBasis) -> Result<Self> {
        let (m, n) = (spec.m, spec.n);
        let lat = &spec.lattice;
        let sys = CellSystem::new(spec, basis)?;

        // Λ: right side −b(b)* ĝ(b) per column of 1_m
        let rhs = sys.apply_b_adjoint(spec, &spec.g.scale(real(-1.0)));
        let (lambda, res1) = sys.solve(spec, &rhs);
        let mut residual = res1;

        let one = Pmf::identity(lat, m);
        let g_tilde = spec.g.multiply(&apply_b(spec, &lambda).add(&one)?)?;
        let g0 = hermitize(&g_tilde.mean());

        let q = spec.q_field();
        let q_bar = hermitize(&q.mean());
        let q_bar_inv = q_bar.clone().try_inverse().ok_or(Error::NotPositive)?;
        let f0 = herm_inv_sqrt(&q_bar);
        let lambda_q =
            lambda.sub(&Pmf::constant(lat, &q_bar_inv * q.multiply(&lambda)?.mean()))?;

        let id_n = Pmf::identity(lat, n);
        let id_inv = CMat::identity(n, n);
        let mut lambda2 = Vec::with_capacity(lat.dim);
        let mut lambda2_q = Vec::with_capacity(lat.dim);
        for l in 0..lat.dim {
            let (x, r) = second_corrector(spec, &sys, &lambda, &g_tilde, &g0, &id_n, &id_inv, l)?;
            residual = residual.max(r);
            lambda2.push(x);
            let (xq, rq) =
                second_corrector(spec, &sys, &lambda_q, &g_tilde, &g0, &q, &q_bar_inv, l)?;
            residual = residual.max(rq);
            lambda2_q.push(xq);
        }
        check_residual(residual)?;
        Ok(EffectiveData {
            basis: basis.clone(),
            lambda,
            g_tilde,
            g0,
            lambda_q,
            lambda2,
            lambda2_q,
            q,
            q_bar,
            f0,
            residual,
        })
    }

    /// Λ⁽²⁾(θ) = Σ θ_l Λ_l⁽²⁾ (Q-weighted when `weighted`).
    pub fn lambda2_theta(&self, theta: &[f64], weighted: bool) -> Pmf {
        let parts = if weighted { &self.lambda2_q } else { &self.lambda2 };
        let mut acc = Pmf::zeros(&parts[0].lattice, parts[0].rows, parts[0].cols);
        for (p, t) in parts.iter().zip(theta) {
            acc = acc.add(&p.scale(real(*t))).expect("same shape");
        }
        acc
    }

    /// Constant n × n blocks f₀ b(b+k)* g⁰ b(b+k) f₀ of the effective fiber,
    /// one per basis frequency. `sandwiched = false` drops f₀.
    pub fn effective_blocks(&self, spec: &OperatorSpec, basis: &FourierBasis, k: &[f64], sandwiched: bool) -> Vec<CMat> {
        basis
            .vectors
            .iter()
            .map(|v| {
                let xi: Vec<f64> = v.iter().zip(k).map(|(a, b)| a + b).collect();
                let b = symbol(&spec.b_mats, &xi);
                let s = hermitize(&(b.adjoint() * &self.g0 * b));
                if sandwiched {
                    hermitize(&(&self.f0 * s * &self.f0))
                } else {
                    s
                }
            })
            .collect()
    }

    /// Dense effective fiber matrix (block diagonal).
    pub fn effective_fiber(&self, spec: &OperatorSpec, basis: &FourierBasis, k: &[f64], sandwiched: bool) -> CMat {
        let blocks = self.effective_blocks(spec, basis, k, sandwiched);
        let n = spec.n;
        let mut out = CMat::zeros(n * blocks.len(), n * blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            out.view_mut((i * n, i * n), (n, n)).copy_from(b);
        }
        out
    }

    /// Largest of |mean Λ|, |mean QΛ_Q| and |mean QΛ_Q,l⁽²⁾|.
    pub fn mean_defects(&self) -> f64 {
        let mut worst = max_abs(&self.lambda.mean());
        worst = worst.max(max_abs(&self.q.multiply(&self.lambda_q).expect("shapes").mean()));
        for x in &self.lambda2_q {
            worst = worst.max(max_abs(&self.q.multiply(x).expect("shapes").mean()));
        }
        for x in &self.lambda2 {
            worst = worst.max(max_abs(&x.mean()));
        }
        worst
    }

    /// mean(Λ_Q* Q Λ_Q), the m × m kernel of Ẑ_Q* Q Ẑ_Q.
    pub fn zq_gram(&self) -> CMat {
        let ql = self.q.multiply(&self.lambda_q).expect("shapes");
        hermitize(&mean_adjoint_product(&self.lambda_q, &ql))
    }

    pub fn report(&self) -> EffectiveReport {
        EffectiveReport {
            g0: MatrixRecord::from(&self.g0),
            q_bar: MatrixRecord::from(&self.q_bar),
            f0: MatrixRecord::from(&self.f0),
            basis_size: self.basis.len(),
            cutoff: self.basis.cutoff,
            residual: self.residual,
            lambda: self.lambda.records(),
            lambda_q: self.lambda_q.records(),
            lambda2: self.lambda2.iter().map(|x| x.records()).collect(),
            lambda2_q: self.lambda2_q.iter().map(|x| x.records()).collect(),
        }
    }
}

/// Dense complex matrix split into real and imaginary parts.
#[derive(Clone, Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct MatrixRecord {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CMat> for MatrixRecord {
    fn from(m: &CMat) -> Self {
        MatrixRecord {
            re: (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect()).collect(),
            im: (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect()).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EffectiveReport {
    pub g0: MatrixRecord,
    pub q_bar: MatrixRecord,
    pub f0: MatrixRecord,
    pub basis_size: usize,
    pub cutoff: f64,
    pub residual: f64,
    pub lambda: Vec<CoeffRecord>,
    pub lambda_q: Vec<CoeffRecord>,
    pub lambda2: Vec<Vec<CoeffRecord>>,
    pub lambda2_q: Vec<Vec<CoeffRecord>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::FieldOptions;
    use crate::lattice::Lattice;
    use crate::linalg::C64;
    use std::f64::consts::PI;

    fn acoustics(a: f64) -> (OperatorSpec, FourierBasis) {
        let l = Lattice::cubic(1, 1.0);
        let g = Pmf::scalar(&l, &[(vec![0], real(a)), (vec![1], real(0.5)), (vec![-1], real(0.5))]);
        let spec = OperatorSpec::new(&l, vec![CMat::identity(1, 1)], g, None, FieldOptions::for_lattice(&l)).unwrap();
        let basis = FourierBasis::new(&l, 2.0 * PI * 40.5).unwrap();
        (spec, basis)
    }

    #[test]
    fn harmonic_mean_in_one_dimension() {
        let (spec, basis) = acoustics(2.0);
        let eff = EffectiveData::compute(&spec, &basis).unwrap();
        assert!((eff.g0[(0, 0)].re - 3f64.sqrt()).abs() < 1e-12);
        // g̃ is the constant g⁰ in 1D
        for (m, c) in &eff.g_tilde.coeffs {
            if m[0] != 0 {
                assert!(c[(0, 0)].norm() < 1e-12, "{m:?}");
            }
        }
        assert!(eff.mean_defects() < 1e-14);
    }

    #[test]
    fn constant_coefficients_need_no_corrector() {
        let l = Lattice::cubic(2, 2.0 * PI);
        let g = Pmf::constant(&l, CMat::from_row_slice(2, 2, &[real(2.0), C64::new(0.0, 0.3), C64::new(0.0, -0.3), real(1.0)]));
        let b = vec![CMat::from_row_slice(2, 1, &[real(1.0), real(0.0)]), CMat::from_row_slice(2, 1, &[real(0.0), real(1.0)])];
        let spec = OperatorSpec::new(&l, b, g.clone(), None, FieldOptions::for_lattice(&l)).unwrap();
        let basis = FourierBasis::new(&l, 3.0).unwrap();
        let eff = EffectiveData::compute(&spec, &basis).unwrap();
        assert!(eff.lambda.coeffs.is_empty());
        assert!(max_abs(&(eff.g0 - g.mean())) < 1e-15);
        assert!(eff.lambda2.iter().all(|x| x.coeffs.values().all(|c| max_abs(c) < 1e-15)));
    }
}
