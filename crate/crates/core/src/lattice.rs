//! Bravais lattices, their duals, and truncated Fourier bases.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

/// Lattice Γ with generating vectors `a_j` (rows of `basis`) and dual vectors
/// `b_l` (rows of `dual_basis`) normalised by ⟨b_l, a_j⟩ = 2π δ_lj.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dim: usize,
    pub basis: Vec<Vec<f64>>,
    pub dual_basis: Vec<Vec<f64>>,
    pub cell_volume: f64,
    pub dual_cell_volume: f64,
    /// Radius of the ball inscribed in the closed Brillouin zone.
    pub r0: f64,
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn spec_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Odometer over the integer box [-r, r]^d in lexicographic order.
pub(crate) fn for_each_in_box(d: usize, r: i64, mut f: impl FnMut(&[i64])) {
    let mut m = vec![-r; d];
    loop {
        f(&m);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if m[axis] < r {
                m[axis] += 1;
                for later in m.iter_mut().skip(axis + 1) {
                    *later = -r;
                }
                break;
            }
        }
    }
}

impl Lattice {
    /// Build from `d` generating vectors (rows).
    pub fn new(basis: Vec<Vec<f64>>) -> Result<Self> {
        let d = basis.len();
        if d == 0 || basis.iter().any(|r| r.len() != d) {
            return Err(Error::Config("lattice basis must be a non-empty square matrix".into()));
        }
        let a = to_matrix(&basis);
        let det = a.determinant();
        let scale = basis.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        if !det.is_finite() || det.abs() <= 1e-12 * scale.powi(d as i32) {
            return Err(Error::DegenerateLattice);
        }
        let ainv = a.clone().try_inverse().ok_or(Error::DegenerateLattice)?;
        let dual = ainv.transpose() * (2.0 * PI);
        let cell_volume = det.abs();
        let dual_cell_volume = dual.determinant().abs();

        // minimal nonzero |b| inside a box that provably contains the minimiser
        let dual_inv = dual.clone().try_inverse().ok_or(Error::DegenerateLattice)?;
        let r = (2.0 * spec_norm(&dual) * spec_norm(&dual_inv)).ceil() as i64;
        let mut best = f64::INFINITY;
        for_each_in_box(d, r.max(1), |m| {
            if m.iter().all(|&x| x == 0) {
                return;
            }
            let mut len2 = 0.0;
            for j in 0..d {
                let c: f64 = (0..d).map(|l| m[l] as f64 * dual[(l, j)]).sum();
                len2 += c * c;
            }
            best = best.min(len2);
        });
        Ok(Lattice {
            dim: d,
            basis,
            dual_basis: from_matrix(&dual),
            cell_volume,
            dual_cell_volume,
            r0: best.sqrt() / 2.0,
        })
    }

    /// Γ = ℤ^d scaled by `period` along each axis.
    pub fn cubic(d: usize, period: f64) -> Self {
        let basis = (0..d)
            .map(|i| (0..d).map(|j| if i == j { period } else { 0.0 }).collect())
            .collect();
        Lattice::new(basis).expect("cubic lattice is nondegenerate")
    }

    /// Cartesian dual-lattice vector Σ m_l b_l.
    pub fn dual_vector(&self, m: &[i64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|j| (0..d).map(|l| m[l] as f64 * self.dual_basis[l][j]).sum())
            .collect()
    }

    /// Cartesian point Σ s_j a_j for fractional coordinates s.
    pub fn point(&self, s: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d).map(|j| (0..d).map(|l| s[l] * self.basis[l][j]).sum()).collect()
    }

    /// Integer coordinates of a Cartesian vector in the dual basis, if it is a
    /// dual-lattice vector to within `tol`.
    pub fn dual_coords(&self, xi: &[f64], tol: f64) -> Option<Vec<i64>> {
        // m_l = ⟨ξ, a_l⟩ / 2π
        let m: Vec<f64> = (0..self.dim)
            .map(|l| (0..self.dim).map(|j| xi[j] * self.basis[l][j]).sum::<f64>() / (2.0 * PI))
            .collect();
        let r: Vec<i64> = m.iter().map(|x| x.round() as i64).collect();
        if m.iter().zip(&r).all(|(x, k)| (x - *k as f64).abs() <= tol) {
            Some(r)
        } else {
            None
        }
    }

    /// Fractional coordinates ⟨k, a_l⟩/2π of k in the dual basis.
    pub fn dual_fractional(&self, k: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|l| (0..self.dim).map(|j| k[j] * self.basis[l][j]).sum::<f64>() / (2.0 * PI))
            .collect()
    }

    /// k lies in the centred dual cell Ω̃ = {Σ c_l b_l : |c_l| ≤ 1/2}.
    pub fn in_dual_cell(&self, k: &[f64]) -> bool {
        self.dual_fractional(k).iter().all(|c| c.abs() <= 0.5 + 1e-12)
    }

    /// Largest |k| over the centred dual cell.
    pub fn dual_cell_radius(&self) -> f64 {
        let d = self.dim;
        (0..1usize << d)
            .map(|mask| {
                let mut v = vec![0.0; d];
                for l in 0..d {
                    let sgn = if mask >> l & 1 == 1 { 0.5 } else { -0.5 };
                    for j in 0..d {
                        v[j] += sgn * self.dual_basis[l][j];
                    }
                }
                v.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Reduce k into the dual primitive cell: k = k_red + Σ m_l b_l with the
    /// fractional coordinates of k_red in [-1/2, 1/2).
    pub fn reduce(&self, k: &[f64]) -> (Vec<f64>, Vec<i64>) {
        let frac: Vec<f64> = (0..self.dim)
            .map(|l| (0..self.dim).map(|j| k[j] * self.basis[l][j]).sum::<f64>() / (2.0 * PI))
            .collect();
        let m: Vec<i64> = frac.iter().map(|x| (x + 0.5).floor() as i64).collect();
        let shift = self.dual_vector(&m);
        (k.iter().zip(&shift).map(|(a, b)| a - b).collect(), m)
    }

    fn dual_inverse_norm(&self) -> f64 {
        let dual = to_matrix(&self.dual_basis);
        spec_norm(&dual.try_inverse().expect("dual basis invertible"))
    }
}

/// Dual-lattice frequencies with |b| ≤ cutoff in lexicographic order of their
/// integer coordinates.
#[derive(Clone, Debug)]
pub struct FourierBasis {
    pub lattice: Lattice,
    pub cutoff: f64,
    pub freqs: Vec<Vec<i64>>,
    pub vectors: Vec<Vec<f64>>,
    index: HashMap<Vec<i64>, usize>,
}

impl FourierBasis {
    pub fn new(lattice: &Lattice, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(Error::Config(format!("basis cutoff must be positive, got {cutoff}")));
        }
        let r = (cutoff * lattice.dual_inverse_norm()).ceil() as i64 + 1;
        let mut freqs = Vec::new();
        for_each_in_box(lattice.dim, r, |m| {
            let v = lattice.dual_vector(m);
            if v.iter().map(|x| x * x).sum::<f64>().sqrt() <= cutoff * (1.0 + 1e-12) {
                freqs.push(m.to_vec());
            }
        });
        Ok(Self::from_freqs(lattice, cutoff, freqs))
    }

    /// Basis over an explicit frequency list (sorted and deduplicated).
    pub fn from_freqs(lattice: &Lattice, cutoff: f64, mut freqs: Vec<Vec<i64>>) -> Self {
        freqs.sort();
        freqs.dedup();
        let vectors = freqs.iter().map(|m| lattice.dual_vector(m)).collect();
        let index = freqs.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        FourierBasis { lattice: lattice.clone(), cutoff, freqs, vectors, index }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn index_of(&self, m: &[i64]) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn zero_index(&self) -> usize {
        self.index_of(&vec![0; self.lattice.dim]).expect("basis contains zero")
    }

    /// Largest |m_l| over all frequencies and axes.
    pub fn max_index(&self) -> i64 {
        self.freqs.iter().flatten().fold(0, |a, &b| a.max(b.abs()))
    }

    /// Minkowski sum with a support set, as a new basis.
    pub fn extended_by(&self, support: &[Vec<i64>]) -> FourierBasis {
        let mut all = Vec::with_capacity(self.len() * support.len().max(1));
        for m in &self.freqs {
            for s in support {
                all.push(m.iter().zip(s).map(|(a, b)| a + b).collect());
            }
        }
        all.extend(self.freqs.iter().cloned());
        FourierBasis::from_freqs(&self.lattice, self.cutoff, all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_integer_lattice() {
        let l = Lattice::cubic(1, 1.0);
        assert!((l.r0 - PI).abs() < 1e-14);
        assert!((l.cell_volume - 1.0).abs() < 1e-14);
        assert!((l.dual_cell_volume - 2.0 * PI).abs() < 1e-13);
    }

    #[test]
    fn square_two_pi_lattice() {
        let l = Lattice::cubic(2, 2.0 * PI);
        assert!((l.r0 - 0.5).abs() < 1e-14);
        assert!((l.dual_basis[0][0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_basis_rejected() {
        let e = Lattice::new(vec![vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(e, Err(Error::DegenerateLattice)));
    }

    #[test]
    fn basis_counts() {
        let l1 = Lattice::cubic(1, 1.0);
        assert_eq!(FourierBasis::new(&l1, 6.5 * 2.0 * PI).unwrap().len(), 13);
        let l2 = Lattice::cubic(2, 2.0 * PI);
        let b = FourierBasis::new(&l2, 2.5).unwrap();
        assert_eq!(b.len(), 21);
        for m in &b.freqs {
            let neg: Vec<i64> = m.iter().map(|x| -x).collect();
            assert!(b.index_of(&neg).is_some());
        }
        let sorted = b.freqs.windows(2).all(|w| w[0] < w[1]);
        assert!(sorted);
    }

    #[test]
    fn tiny_cutoff_keeps_only_zero() {
        let l = Lattice::cubic(2, 2.0 * PI);
        let b = FourierBasis::new(&l, 0.3).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn reduce_lands_in_primitive_cell() {
        let l = Lattice::cubic(1, 1.0);
        let (k, m) = l.reduce(&[7.0]);
        assert_eq!(m, vec![1]);
        assert!((k[0] - (7.0 - 2.0 * PI)).abs() < 1e-14);
    }
}
