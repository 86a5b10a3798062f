//! Γ-periodic matrix fields stored as Fourier coefficients.
//!
//! A field is F(x) = Σ_b F̂_b e^{i⟨b,x⟩} over dual-lattice frequencies b,
//! keyed by their integer coordinates. Coefficients are canonical; grids of
//! point values are derived views used for pointwise nonlinear maps.

use crate::error::{Error, Result};
use crate::lattice::{FourierBasis, Lattice};
use crate::linalg::{herm_eig, herm_fn, max_abs, real, spectral_norm, CMat, C64};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct PeriodicMatrixFunction {
    pub rows: usize,
    pub cols: usize,
    pub lattice: Lattice,
    pub coeffs: BTreeMap<Vec<i64>, CMat>,
}

/// Point values on the uniform grid x_j = Σ (j_l / n) a_l, j ∈ [0, n)^d,
/// stored with the last axis fastest.
#[derive(Clone, Debug)]
pub struct Grid {
    pub n: usize,
    pub dim: usize,
    pub values: Vec<CMat>,
}

/// Result of projecting grid data back to coefficients.
#[derive(Clone, Debug)]
pub struct Truncated {
    pub field: PeriodicMatrixFunction,
    /// ℓ² norm of discarded coefficients over the total.
    pub dropped_mass: f64,
}

fn neg(m: &[i64]) -> Vec<i64> {
    m.iter().map(|x| -x).collect()
}

fn add_idx(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// In-place d-dimensional FFT over an n^d array, last axis fastest.
/// `inverse` computes Σ c_m e^{+2πi m·j/n} without normalisation.
fn fft_nd(data: &mut [C64], n: usize, d: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut line = vec![C64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let outer = n.pow(axis as u32);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[base + k * stride] = *v;
                }
            }
        }
    }
}

fn grid_offset(m: &[i64], n: usize) -> usize {
    let mut idx = 0usize;
    for &x in m {
        idx = idx * n + x.rem_euclid(n as i64) as usize;
    }
    idx
}

/// Smallest admissible grid for frequencies up to `max_index` per axis.
pub fn min_grid(max_index: i64) -> usize {
    (2 * max_index + 1) as usize
}

impl PeriodicMatrixFunction {
    pub fn zeros(lattice: &Lattice, rows: usize, cols: usize) -> Self {
        PeriodicMatrixFunction { rows, cols, lattice: lattice.clone(), coeffs: BTreeMap::new() }
    }

    pub fn constant(lattice: &Lattice, m: CMat) -> Self {
        let mut f = Self::zeros(lattice, m.nrows(), m.ncols());
        f.coeffs.insert(vec![0; lattice.dim], m);
        f
    }

    pub fn identity(lattice: &Lattice, n: usize) -> Self {
        Self::constant(lattice, CMat::identity(n, n))
    }

    pub fn from_coeffs(
        lattice: &Lattice,
        rows: usize,
        cols: usize,
        coeffs: impl IntoIterator<Item = (Vec<i64>, CMat)>,
    ) -> Result<Self> {
        let mut f = Self::zeros(lattice, rows, cols);
        for (m, c) in coeffs {
            if m.len() != lattice.dim || c.shape() != (rows, cols) {
                return Err(Error::Dimension("coefficient shape does not match field".into()));
            }
            *f.coeffs.entry(m).or_insert_with(|| CMat::zeros(rows, cols)) += c;
        }
        Ok(f)
    }

    /// Scalar field from (frequency, value) pairs.
    pub fn scalar(lattice: &Lattice, coeffs: &[(Vec<i64>, C64)]) -> Self {
        Self::from_coeffs(
            lattice,
            1,
            1,
            coeffs.iter().map(|(m, c)| (m.clone(), CMat::from_element(1, 1, *c))),
        )
        .expect("scalar coefficients")
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn coeff(&self, m: &[i64]) -> CMat {
        self.coeffs.get(m).cloned().unwrap_or_else(|| CMat::zeros(self.rows, self.cols))
    }

    /// Cell average, equal to the zero coefficient.
    pub fn mean(&self) -> CMat {
        self.coeff(&vec![0; self.lattice.dim])
    }

    pub fn support(&self) -> Vec<Vec<i64>> {
        self.coeffs.keys().cloned().collect()
    }

    pub fn max_index(&self) -> i64 {
        self.coeffs.keys().flatten().fold(0, |a, &b| a.max(b.abs()))
    }

    /// Pointwise conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut f = Self::zeros(&self.lattice, self.cols, self.rows);
        for (m, c) in &self.coeffs {
            f.coeffs.insert(neg(m), c.adjoint());
        }
        f
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut f = self.clone();
        for c in f.coeffs.values_mut() {
            *c *= s;
        }
        f
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!("add {:?} + {:?}", self.shape(), other.shape())));
        }
        let mut f = self.clone();
        for (m, c) in &other.coeffs {
            *f.coeffs.entry(m.clone()).or_insert_with(|| CMat::zeros(self.rows, self.cols)) += c;
        }
        Ok(f)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(real(-1.0)))
    }

    /// x ↦ M F(x).
    pub fn left_mul(&self, m: &CMat) -> Self {
        let mut f = Self::zeros(&self.lattice, m.nrows(), self.cols);
        for (k, c) in &self.coeffs {
            f.coeffs.insert(k.clone(), m * c);
        }
        f
    }

    /// x ↦ F(x) M.
    pub fn right_mul(&self, m: &CMat) -> Self {
        let mut f = Self::zeros(&self.lattice, self.rows, m.ncols());
        for (k, c) in &self.coeffs {
            f.coeffs.insert(k.clone(), c * m);
        }
        f
    }

    /// Exact pointwise product (full convolution, no truncation).
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "multiply {:?} · {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut f = Self::zeros(&self.lattice, self.rows, other.cols);
        for (ma, ca) in &self.coeffs {
            for (mb, cb) in &other.coeffs {
                let m = add_idx(ma, mb);
                *f.coeffs.entry(m).or_insert_with(|| CMat::zeros(self.rows, other.cols)) += ca * cb;
            }
        }
        Ok(f)
    }

    /// Product restricted to the frequencies of `basis`, with the dropped mass.
    pub fn multiply_truncated(&self, other: &Self, basis: &FourierBasis) -> Result<Truncated> {
        let full = self.multiply(other)?;
        Ok(full.truncate_to(basis))
    }

    pub fn truncate_to(&self, basis: &FourierBasis) -> Truncated {
        let mut kept = Self::zeros(&self.lattice, self.rows, self.cols);
        let (mut total, mut dropped) = (0.0, 0.0);
        for (m, c) in &self.coeffs {
            let w = c.norm_squared();
            total += w;
            if basis.index_of(m).is_some() {
                kept.coeffs.insert(m.clone(), c.clone());
            } else {
                dropped += w;
            }
        }
        let ratio = if total > 0.0 { (dropped / total).sqrt() } else { 0.0 };
        Truncated { field: kept, dropped_mass: ratio }
    }

    /// Σ_b ‖F̂_b‖²_F, the mean of ‖F(x)‖²_F.
    pub fn l2_mass(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_squared()).sum()
    }

    /// Largest deviation from F̂(−b) = F̂(b)*.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (m, c) in &self.coeffs {
            let partner = self.coeff(&neg(m));
            worst = worst.max(max_abs(&(c - partner.adjoint())));
        }
        worst
    }

    /// Value at a Cartesian point.
    pub fn eval(&self, x: &[f64]) -> CMat {
        let mut out = CMat::zeros(self.rows, self.cols);
        for (m, c) in &self.coeffs {
            let b = self.lattice.dual_vector(m);
            let phase: f64 = b.iter().zip(x).map(|(p, q)| p * q).sum();
            out += c * C64::from_polar(1.0, phase);
        }
        out
    }

    /// Point values on an n^d grid.
    pub fn sample(&self, n: usize) -> Result<Grid> {
        let needed = min_grid(self.max_index());
        if n < needed {
            return Err(Error::GridTooCoarse { needed, got: n });
        }
        let d = self.lattice.dim;
        let total = n.pow(d as u32);
        let mut values = vec![CMat::zeros(self.rows, self.cols); total];
        let mut buf = vec![C64::new(0.0, 0.0); total];
        for r in 0..self.rows {
            for c in 0..self.cols {
                buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                for (m, cm) in &self.coeffs {
                    buf[grid_offset(m, n)] += cm[(r, c)];
                }
                fft_nd(&mut buf, n, d, true);
                for (v, z) in values.iter_mut().zip(&buf) {
                    v[(r, c)] = *z;
                }
            }
        }
        Ok(Grid { n, dim: d, values })
    }

    /// Coefficients from grid values, keeping frequencies in `keep`.
    /// Coefficients below 1e-15 of the largest are dropped as well.
    pub fn from_grid(lattice: &Lattice, grid: &Grid, keep: &FourierBasis) -> Result<Truncated> {
        let n = grid.n;
        let needed = min_grid(keep.max_index());
        if n < needed {
            return Err(Error::GridTooCoarse { needed, got: n });
        }
        let d = grid.dim;
        let (rows, cols) = grid.values[0].shape();
        let total = grid.values.len();
        let norm = 1.0 / total as f64;
        let mut spectra: Vec<Vec<C64>> = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut buf: Vec<C64> = grid.values.iter().map(|v| v[(r, c)] * norm).collect();
                fft_nd(&mut buf, n, d, false);
                spectra.push(buf);
            }
        }
        let mut grand = 0.0;
        for sp in &spectra {
            grand += sp.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mut field = Self::zeros(lattice, rows, cols);
        let mut biggest = 0.0f64;
        let mut used = vec![false; total];
        for m in &keep.freqs {
            let off = grid_offset(m, n);
            used[off] = true;
            let cm = CMat::from_fn(rows, cols, |r, c| spectra[r * cols + c][off]);
            biggest = biggest.max(max_abs(&cm));
            field.coeffs.insert(m.clone(), cm);
        }
        let mut lost = 0.0;
        field.coeffs.retain(|_, c| {
            let keep_it = max_abs(c) > 1e-15 * biggest;
            if !keep_it {
                lost += c.norm_squared();
            }
            keep_it
        });
        for sp in &spectra {
            lost += sp.iter().zip(&used).filter(|(_, u)| !**u).map(|(z, _)| z.norm_sqr()).sum::<f64>();
        }
        let dropped = if grand > 0.0 { (lost / grand).sqrt() } else { 0.0 };
        Ok(Truncated { field, dropped_mass: dropped })
    }

    /// Apply a pointwise map on an n^d grid and project back onto `keep`.
    pub fn map_pointwise(
        &self,
        n: usize,
        keep: &FourierBasis,
        f: impl Fn(&CMat) -> Result<CMat>,
    ) -> Result<Truncated> {
        let g = self.sample(n)?;
        let values = g.values.iter().map(&f).collect::<Result<Vec<_>>>()?;
        Self::from_grid(&self.lattice, &Grid { n, dim: g.dim, values }, keep)
    }

    /// Pointwise inverse.
    pub fn inverse(&self, n: usize, keep: &FourierBasis) -> Result<Truncated> {
        self.map_pointwise(n, keep, |m| {
            m.clone().try_inverse().ok_or_else(|| Error::Dimension("pointwise singular".into()))
        })
    }

    /// Hermitian positive square root h with h*h = g pointwise.
    pub fn sqrt_factor(&self, n: usize, keep: &FourierBasis) -> Result<Truncated> {
        if self.rows != self.cols {
            return Err(Error::Dimension("sqrt_factor needs a square field".into()));
        }
        self.map_pointwise(n, keep, |m| {
            let e = herm_eig(m);
            if e.values[0] <= 0.0 {
                return Err(Error::NotPositive);
            }
            Ok(herm_fn(&e, |lam| real(lam.sqrt())))
        })
    }

    /// Pointwise Hermitian exponential e^{F(x)}.
    pub fn exp_hermitian(&self, n: usize, keep: &FourierBasis) -> Result<Truncated> {
        self.map_pointwise(n, keep, |m| Ok(herm_fn(&herm_eig(m), |lam| real(lam.exp()))))
    }

    /// max over grid of ‖F(x)‖₂.
    pub fn sup_norm(&self, n: usize) -> Result<f64> {
        Ok(self.sample(n)?.values.iter().map(spectral_norm).fold(0.0, f64::max))
    }

    /// Smallest pointwise eigenvalue over the grid (Hermitian fields).
    pub fn min_eigenvalue(&self, n: usize) -> Result<f64> {
        Ok(self
            .sample(n)?
            .values
            .iter()
            .map(|v| herm_eig(v).values[0])
            .fold(f64::INFINITY, f64::min))
    }

    /// Harmonic mean (mean of F⁻¹)⁻¹ from grid quadrature.
    pub fn harmonic_mean(&self, n: usize) -> Result<CMat> {
        let g = self.sample(n)?;
        let mut acc = CMat::zeros(self.rows, self.cols);
        for v in &g.values {
            acc += v.clone().try_inverse().ok_or(Error::NotPositive)?;
        }
        acc /= real(g.values.len() as f64);
        acc.try_inverse().ok_or(Error::NotPositive)
    }

    /// Serializable coefficient records.
    pub fn records(&self) -> Vec<CoeffRecord> {
        self.coeffs
            .iter()
            .map(|(m, c)| CoeffRecord {
                freq: m.clone(),
                re: (0..c.nrows()).map(|i| (0..c.ncols()).map(|j| c[(i, j)].re).collect()).collect(),
                im: (0..c.nrows()).map(|i| (0..c.ncols()).map(|j| c[(i, j)].im).collect()).collect(),
            })
            .collect()
    }

    pub fn from_records(lattice: &Lattice, records: &[CoeffRecord]) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::Config("empty coefficient list".into()))?;
        let rows = first.re.len();
        let cols = first.re.first().map(|r| r.len()).unwrap_or(0);
        let mut out = Vec::new();
        for r in records {
            if r.re.len() != rows || r.re.iter().any(|x| x.len() != cols) {
                return Err(Error::Config("ragged coefficient matrix".into()));
            }
            let im_ok = r.im.is_empty() || (r.im.len() == rows && r.im.iter().all(|x| x.len() == cols));
            if !im_ok {
                return Err(Error::Config("imaginary part shape mismatch".into()));
            }
            let m = CMat::from_fn(rows, cols, |i, j| {
                let im = if r.im.is_empty() { 0.0 } else { r.im[i][j] };
                C64::new(r.re[i][j], im)
            });
            out.push((r.freq.clone(), m));
        }
        Self::from_coeffs(lattice, rows, cols, out)
    }
}

/// One Fourier coefficient as stored in input and output documents.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CoeffRecord {
    pub freq: Vec<i64>,
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Vec<Vec<f64>>,
}

/// Mean of F* G for two fields of equal row count, Σ_b F̂_b* Ĝ_b.
pub fn mean_adjoint_product(f: &PeriodicMatrixFunction, g: &PeriodicMatrixFunction) -> CMat {
    let mut acc = CMat::zeros(f.cols, g.cols);
    for (m, cf) in &f.coeffs {
        if let Some(cg) = g.coeffs.get(m) {
            acc += cf.adjoint() * cg;
        }
    }
    acc
}

/// Mean of F* W G with W a field: Σ_{b,b'} F̂_b* Ŵ_{b−b'} Ĝ_{b'}.
pub fn mean_sandwich(
    f: &PeriodicMatrixFunction,
    w: &PeriodicMatrixFunction,
    g: &PeriodicMatrixFunction,
) -> Result<CMat> {
    let wg = w.multiply(g)?;
    Ok(mean_adjoint_product(f, &wg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lat1() -> Lattice {
        Lattice::cubic(1, 1.0)
    }

    fn two_plus_cos() -> PeriodicMatrixFunction {
        PeriodicMatrixFunction::scalar(
            &lat1(),
            &[(vec![0], real(2.0)), (vec![1], real(0.5)), (vec![-1], real(0.5))],
        )
    }

    #[test]
    fn sample_matches_direct_evaluation() {
        let g = two_plus_cos();
        let s = g.sample(8).unwrap();
        for j in 0..8 {
            let want = 2.0 + (2.0 * PI * j as f64 / 8.0).cos();
            assert!((s.values[j][(0, 0)] - real(want)).norm() < 1e-14);
        }
        assert!(matches!(g.sample(2), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn square_by_convolution() {
        let g = two_plus_cos();
        let sq = g.multiply(&g).unwrap();
        assert!((sq.coeff(&[0])[(0, 0)] - real(4.5)).norm() < 1e-15);
        assert!((sq.coeff(&[1])[(0, 0)] - real(2.0)).norm() < 1e-15);
        assert!((sq.coeff(&[2])[(0, 0)] - real(0.25)).norm() < 1e-15);
    }

    #[test]
    fn round_trip_grid() {
        let g = two_plus_cos();
        let basis = FourierBasis::new(&lat1(), 2.0 * PI * 3.5).unwrap();
        let back = PeriodicMatrixFunction::from_grid(&lat1(), &g.sample(16).unwrap(), &basis).unwrap();
        assert!(back.dropped_mass < 1e-14);
        let diff = back.field.sub(&g).unwrap();
        assert!(diff.coeffs.values().all(|c| max_abs(c) < 1e-14));
    }

    #[test]
    fn inverse_times_field_is_identity() {
        let g = two_plus_cos();
        let basis = FourierBasis::new(&lat1(), 2.0 * PI * 30.5).unwrap();
        let inv = g.inverse(128, &basis).unwrap();
        assert!(inv.dropped_mass < 1e-14);
        let prod = g.multiply(&inv.field).unwrap().truncate_to(&basis).field;
        let err = prod.sub(&PeriodicMatrixFunction::identity(&lat1(), 1)).unwrap();
        assert!(err.coeffs.values().all(|c| max_abs(c) < 1e-14));
        // mean of 1/(2 + cos 2πx) is 1/√3
        assert!((inv.field.mean()[(0, 0)].re - 1.0 / 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn sqrt_factor_scalar() {
        let g = two_plus_cos();
        let basis = FourierBasis::new(&lat1(), 2.0 * PI * 30.5).unwrap();
        let h = g.sqrt_factor(128, &basis).unwrap().field;
        for x in [0.0, 0.13, 0.5, 0.77] {
            let want = (2.0 + (2.0 * PI * x).cos()).sqrt();
            assert!((h.eval(&[x])[(0, 0)].re - want).abs() < 1e-13);
        }
    }

    #[test]
    fn harmonic_mean_below_mean() {
        let g = two_plus_cos();
        let hm = g.harmonic_mean(64).unwrap()[(0, 0)].re;
        assert!((hm - 3f64.sqrt()).abs() < 1e-13);
        assert!(hm <= g.mean()[(0, 0)].re);
    }

    #[test]
    fn adjoint_and_records_round_trip() {
        let l = lat1();
        let f = PeriodicMatrixFunction::from_coeffs(
            &l,
            1,
            2,
            vec![(vec![1], CMat::from_row_slice(1, 2, &[C64::new(1.0, 2.0), C64::new(0.0, -1.0)]))],
        )
        .unwrap();
        let fa = f.adjoint();
        assert_eq!(fa.shape(), (2, 1));
        assert!((fa.coeff(&[-1])[(0, 0)] - C64::new(1.0, -2.0)).norm() < 1e-15);
        let back = PeriodicMatrixFunction::from_records(&l, &f.records()).unwrap();
        assert!(max_abs(&(back.coeff(&[1]) - f.coeff(&[1]))) == 0.0);
    }
}
