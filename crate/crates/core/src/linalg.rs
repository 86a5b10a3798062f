//! Dense complex linear algebra used throughout the crate.
//!
//! Thin wrappers over `nalgebra`: sorted Hermitian eigendecompositions,
//! spectral norms, unitary exponentials, generalized Hermitian problems
//! and the small least-squares fits used by the oracle and sweeps.

use nalgebra::{DMatrix, DVector};

pub type C64 = num_complex::Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;

#[inline]
pub fn cx(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// (A + A*) / 2.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()) * real(0.5)
}

/// Largest entrywise distance from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermEig {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

/// Full Hermitian eigendecomposition with ascending eigenvalues.
///
/// Ties are broken by the solver's native order so results are reproducible
/// for identical input.
pub fn herm_eig(a: &CMat) -> HermEig {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "herm_eig: matrix not square");
    if n == 0 {
        return HermEig { values: vec![], vectors: CMat::zeros(0, 0) };
    }
    let eig = hermitize(a).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    HermEig { values, vectors }
}

/// Eigenvalues only, ascending.
pub fn herm_eigvals(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 {
        return vec![];
    }
    let mut v: Vec<f64> = hermitize(a).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Spectral norm ‖M‖₂, via the smaller Gram matrix.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = if m.ncols() <= m.nrows() { m.adjoint() * m } else { m * m.adjoint() };
    let top = herm_eigvals(&gram).last().copied().unwrap_or(0.0);
    top.max(0.0).sqrt()
}

/// Singular values, descending.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// V diag(φ(λ)) V* for a precomputed decomposition.
pub fn herm_fn(eig: &HermEig, f: impl Fn(f64) -> C64) -> CMat {
    let n = eig.values.len();
    let mut scaled = eig.vectors.clone();
    for j in 0..n {
        let w = f(eig.values[j]);
        for i in 0..n {
            scaled[(i, j)] *= w;
        }
    }
    scaled * eig.vectors.adjoint()
}

/// e^{-i·phase·H} from a decomposition of H.
pub fn unitary_exp(eig: &HermEig, phase: f64) -> CMat {
    herm_fn(eig, |lam| C64::from_polar(1.0, -phase * lam))
}

/// Positive square root of a Hermitian positive semidefinite matrix.
pub fn herm_sqrt(a: &CMat) -> CMat {
    herm_fn(&herm_eig(a), |lam| real(lam.max(0.0).sqrt()))
}

/// Inverse positive square root of a Hermitian positive definite matrix.
pub fn herm_inv_sqrt(a: &CMat) -> CMat {
    herm_fn(&herm_eig(a), |lam| real(1.0 / lam.sqrt()))
}

pub fn inverse(a: &CMat) -> Option<CMat> {
    a.clone().try_inverse()
}

/// Rotate the phase of each column so its largest-magnitude entry is real positive.
pub fn fix_phases(v: &mut CMat) {
    for j in 0..v.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..v.nrows() {
            let a = v[(i, j)].norm();
            // strict comparison keeps the first maximiser on exact ties
            if a > best_abs * (1.0 + 1e-12) {
                best_abs = a;
                best = i;
            }
        }
        if best_abs > 0.0 {
            let ph = v[(best, j)].conj() / best_abs;
            for i in 0..v.nrows() {
                v[(i, j)] *= ph;
            }
        }
    }
}

/// Solution of S ζ = γ W ζ with W Hermitian positive definite.
///
/// Columns of the returned frame are W-orthonormal: ζ* W ζ = 1.
pub fn gen_herm_eig(s: &CMat, w: &CMat) -> HermEig {
    let l = hermitize(w)
        .cholesky()
        .expect("gen_herm_eig: weight not positive definite")
        .l();
    let linv = l.try_inverse().expect("gen_herm_eig: singular Cholesky factor");
    let c = &linv * s * linv.adjoint();
    let eig = herm_eig(&c);
    HermEig { values: eig.values, vectors: linv.adjoint() * eig.vectors }
}

/// Group sorted values into clusters: a new cluster starts when the gap to the
/// previous value exceeds `rel_gap · scale`.
pub fn cluster_sorted(values: &[f64], rel_gap: f64, scale: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(cl) if (v - values[*cl.last().unwrap()]).abs() <= rel_gap * scale => cl.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Ordinary least squares via SVD.
#[derive(Clone, Debug)]
pub struct LstSq {
    pub coef: Vec<f64>,
    pub residual_max: f64,
    pub residual_rms: f64,
    pub condition: f64,
}

pub fn lstsq(a: &RMat, y: &[f64]) -> LstSq {
    let yv = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let sol = svd.solve(&yv, 0.0).expect("lstsq: SVD solve failed");
    let r = a * &sol - &yv;
    let rmax = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let rms = (r.iter().map(|x| x * x).sum::<f64>() / y.len().max(1) as f64).sqrt();
    LstSq {
        coef: sol.iter().copied().collect(),
        residual_max: rmax,
        residual_rms: rms,
        condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
    }
}

/// Straight-line fit y = slope·x + intercept.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
}

/// Least-squares slope of ln y against ln x; `residual` is the RMS log residual.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> LineFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    line_fit(&lx, &ly)
}

pub fn line_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    assert!(x.len() >= 2 && x.len() == y.len(), "line_fit needs two or more points");
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    LineFit { slope, intercept, residual: (rss / n).sqrt() }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 - 1.0) * z * p2 - (j as f64 - 1.0) * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Block-diagonal embedding of a small matrix repeated `count` times.
pub fn block_diag_repeat(block: &CMat, count: usize) -> CMat {
    let (r, c) = block.shape();
    let mut out = CMat::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_herm(n: usize, seed: u64) -> CMat {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = CMat::from_fn(n, n, |_, _| cx(next(), next()));
        hermitize(&a)
    }

    #[test]
    fn eig_reconstructs_and_sorts() {
        let a = random_herm(7, 3);
        let e = herm_eig(&a);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let rec = herm_fn(&e, real);
        assert!(max_abs(&(rec - &a)) < 1e-12);
    }

    #[test]
    fn exponential_is_unitary() {
        let a = random_herm(6, 9);
        let u = unitary_exp(&herm_eig(&a), 3.7);
        let id = CMat::identity(6, 6);
        assert!(max_abs(&(u.adjoint() * &u - id)) < 1e-12);
        assert!((spectral_norm(&u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generalized_frame_is_weight_orthonormal() {
        let s = random_herm(4, 1);
        let b = random_herm(4, 2);
        let w = &b * b.adjoint() + CMat::identity(4, 4);
        let e = gen_herm_eig(&s, &w);
        let gram = e.vectors.adjoint() * &w * &e.vectors;
        assert!(max_abs(&(gram - CMat::identity(4, 4))) < 1e-12);
        for (j, lam) in e.values.iter().enumerate() {
            let z = e.vectors.column(j);
            let r = &s * z - &w * z * real(*lam);
            assert!(r.norm() < 1e-11);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn loglog_slope_recovered() {
        let x = [0.5, 0.25, 0.125, 0.0625];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        let f = loglog_fit(&x, &y);
        assert!((f.slope - 1.5).abs() < 1e-12 && f.residual < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let d = CMat::from_diagonal(&CVec::from_vec(vec![real(1.0), real(-4.0), cx(0.0, 2.0)]));
        assert!((spectral_norm(&d) - 4.0).abs() < 1e-12);
    }
}
