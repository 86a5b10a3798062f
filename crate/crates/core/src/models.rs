//! Built-in operators with known ground truths.

use crate::bloch::{FieldOptions, OperatorSpec};
use crate::error::{Error, Result};
use crate::lattice::{FourierBasis, Lattice};
use crate::linalg::{cx, herm_eig, hermitize, max_abs, real, CMat, C64};
use crate::periodic_fn::PeriodicMatrixFunction as Pmf;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Clone, Debug, Serialize)]
pub struct KnownValue {
    pub quantity: String,
    pub value: f64,
    pub provenance: String,
}

#[derive(Clone, Debug)]
pub struct ModelDescriptor {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub spec: OperatorSpec,
    pub known_values: Vec<KnownValue>,
    /// Basis cutoff for cell problems and fibers that resolves the model to
    /// well below the acceptance tolerances.
    pub default_cutoff: f64,
}

fn known(q: &str, v: f64, p: &str) -> KnownValue {
    KnownValue { quantity: q.into(), value: v, provenance: p.into() }
}

fn identity_symbols(d: usize) -> Vec<CMat> {
    (0..d).map(|l| CMat::from_fn(d, 1, |i, _| real(if i == l { 1.0 } else { 0.0 }))).collect()
}

fn is_real_field(f: &Pmf) -> bool {
    f.coeffs.iter().all(|(m, c)| {
        let neg: Vec<i64> = m.iter().map(|x| -x).collect();
        max_abs(&(c - f.coeff(&neg).map(|z| z.conj()))) < 1e-14
    })
}

/// D* g D on Γ = ℤ with a real positive scalar g.
pub fn acoustics_1d(g: Pmf) -> Result<ModelDescriptor> {
    let lat = g.lattice.clone();
    if lat.dim != 1 || g.shape() != (1, 1) || !is_real_field(&g) {
        return Err(Error::Model("acoustics_1d needs a real scalar g on a 1D lattice".into()));
    }
    let opts = FieldOptions::for_lattice(&lat);
    let grid = opts.grid.max(crate::periodic_fn::min_grid(4 * g.max_index()));
    if g.min_eigenvalue(grid)? <= 0.0 {
        return Err(Error::NotPositive);
    }
    let hm = g.harmonic_mean(grid.max(512))?[(0, 0)].re;
    let spec = OperatorSpec::new(&lat, identity_symbols(1), g, None, opts)?;
    Ok(ModelDescriptor {
        name: "acoustics_1d".into(),
        params: BTreeMap::new(),
        spec,
        known_values: vec![known("g0", hm, "harmonic mean by grid quadrature")],
        default_cutoff: 2.0 * PI / lat.cell_volume * 24.5,
    })
}

/// g(x) = 2 + cos(2πx) on Γ = ℤ.
pub fn acoustics_1d_default() -> ModelDescriptor {
    let lat = Lattice::cubic(1, 1.0);
    let g = Pmf::scalar(&lat, &[(vec![0], real(2.0)), (vec![1], real(0.5)), (vec![-1], real(0.5))]);
    let mut m = acoustics_1d(g).expect("default acoustics model");
    m.known_values = vec![known("g0", 3f64.sqrt(), "closed form (a² − 1)^{1/2} for a + cos")];
    m
}

/// 2D scalar operator with g = [[1, iβ'], [−iβ', 1]], β = c(sin x₁ + cos 2x₁),
/// on Γ = (2πℤ)².
pub fn hermitian_2d(c: f64) -> Result<ModelDescriptor> {
    if !(c > 0.0 && c < 1.0 / 3.0) {
        return Err(Error::Model(format!("hermitian_2d needs 0 < c < 1/3, got {c}")));
    }
    let lat = Lattice::cubic(2, 2.0 * PI);
    // iβ' = (ic/2)(e^{ix} + e^{-ix}) − c(e^{2ix} − e^{-2ix})
    let g12 = [
        (vec![1, 0], cx(0.0, c / 2.0)),
        (vec![-1, 0], cx(0.0, c / 2.0)),
        (vec![2, 0], real(-c)),
        (vec![-2, 0], real(c)),
    ];
    let mut coeffs: Vec<(Vec<i64>, CMat)> = vec![(vec![0, 0], CMat::identity(2, 2))];
    for (m, z) in &g12 {
        let mut blk = CMat::zeros(2, 2);
        blk[(0, 1)] = *z;
        coeffs.push((m.clone(), blk));
        // (g₂₁)^(−m) = conj((g₁₂)^(m))
        let mut low = CMat::zeros(2, 2);
        low[(1, 0)] = z.conj();
        coeffs.push((m.iter().map(|x| -x).collect(), low));
    }
    let g = Pmf::from_coeffs(&lat, 2, 2, coeffs)?;
    let opts = FieldOptions::for_lattice(&lat);
    let spec = OperatorSpec::new(&lat, identity_symbols(2), g, None, opts)?;
    let mut params = BTreeMap::new();
    params.insert("c".into(), c);
    Ok(ModelDescriptor {
        name: "hermitian_2d".into(),
        params,
        spec,
        known_values: vec![
            known("N(0,1)", 1.5 * c.powi(3), "−α/π with α = −(3π/2)c³"),
            known("N(1,0)", 0.0, "N vanishes at θ = (±1, 0)"),
        ],
        default_cutoff: 8.5,
    })
}

/// Ground state of D* ǧ D + V at k = 0, as (energy, ω) with ω real positive
/// and mean ω² = 1.
pub fn ground_state(g_check: &Pmf, v: &Pmf, basis: &FourierBasis) -> Result<(f64, Pmf)> {
    let lat = &g_check.lattice;
    let d = lat.dim;
    let nb = basis.len();
    let mut h = CMat::zeros(nb, nb);
    for i in 0..nb {
        for j in 0..nb {
            let diff: Vec<i64> = basis.freqs[i].iter().zip(&basis.freqs[j]).map(|(a, b)| a - b).collect();
            let mut z = C64::new(0.0, 0.0);
            if let Some(gc) = g_check.coeffs.get(&diff) {
                for p in 0..d {
                    for q in 0..d {
                        z += gc[(p, q)] * (basis.vectors[i][p] * basis.vectors[j][q]);
                    }
                }
            }
            if let Some(vc) = v.coeffs.get(&diff) {
                z += vc[(0, 0)];
            }
            h[(i, j)] = z;
        }
    }
    let e = herm_eig(&hermitize(&h));
    let energy = e.values[0];
    let mut col: Vec<C64> = e.vectors.column(0).iter().copied().collect();
    let mean = col[basis.zero_index()];
    if mean.norm() < 1e-12 {
        return Err(Error::Factorization("ground state has zero mean".into()));
    }
    let phase = mean.conj() / mean.norm();
    col.iter_mut().for_each(|z| *z *= phase);
    // enforce a real-valued function: ω̂(−b) = conj ω̂(b)
    let mut w = Pmf::zeros(lat, 1, 1);
    for (i, m) in basis.freqs.iter().enumerate() {
        let neg: Vec<i64> = m.iter().map(|x| -x).collect();
        let j = basis.index_of(&neg).expect("basis symmetric");
        let z = 0.5 * (col[i] + col[j].conj());
        w.coeffs.insert(m.clone(), CMat::from_element(1, 1, z));
    }
    let norm = w.l2_mass().sqrt();
    let biggest = w.coeffs.values().map(max_abs).fold(0.0, f64::max);
    w.coeffs.retain(|_, c| max_abs(c) > 1e-15 * biggest);
    let w = w.scale(real(1.0 / norm));
    Ok((energy, w))
}

/// Factorised Schrödinger operator ω⁻¹ D* ω² ǧ D ω⁻¹ (V shifted to bottom 0).
pub fn schrodinger(g_check: Pmf, v: Pmf) -> Result<ModelDescriptor> {
    let lat = g_check.lattice.clone();
    let d = lat.dim;
    if g_check.shape() != (d, d) || v.shape() != (1, 1) || !is_real_field(&v) {
        return Err(Error::Model("schrodinger needs ǧ of size d×d and a real scalar V".into()));
    }
    let opts = FieldOptions::for_lattice(&lat);
    let basis = FourierBasis::new(&lat, 2.0 * lat.r0 * 40.5)?;
    let (energy, omega) = ground_state(&g_check, &v, &basis)?;
    let grid = (if d > 1 { 128 } else { 512 }).max(crate::periodic_fn::min_grid(2 * omega.max_index()));
    let samples = omega.sample(grid)?;
    let min_w = samples.values.iter().map(|x| x[(0, 0)].re).fold(f64::INFINITY, f64::min);
    let max_im = samples.values.iter().map(|x| x[(0, 0)].im.abs()).fold(0.0, f64::max);
    if min_w <= 0.0 || max_im > 1e-10 {
        return Err(Error::Factorization(format!("ground state not positive (min {min_w:e})")));
    }
    let keep = FourierBasis::new(&lat, opts.field_cutoff)?;
    let f = omega.inverse(grid, &keep)?;
    if f.dropped_mass > 1e-8 {
        return Err(Error::Truncation(f.dropped_mass));
    }
    // ω² ǧ as the exact product of a scalar field with a d×d field
    let w2 = omega.multiply(&omega)?;
    let mut g = Pmf::zeros(&lat, d, d);
    for (m, c) in &w2.coeffs {
        for (m2, c2) in &g_check.coeffs {
            let k: Vec<i64> = m.iter().zip(m2).map(|(a, b)| a + b).collect();
            *g.coeffs.entry(k).or_insert_with(|| CMat::zeros(d, d)) += c2 * c[(0, 0)];
        }
    }
    let spec = OperatorSpec::with_inverse_pair(&lat, identity_symbols(d), g, f.field, omega, opts)?;
    let mut params = BTreeMap::new();
    params.insert("energy_shift".into(), -energy);
    Ok(ModelDescriptor {
        name: "schrodinger".into(),
        params,
        spec,
        known_values: vec![known("Qbar", 1.0, "mean ω² = 1 by normalisation"), known("f0", 1.0, "(Q̄)^{-1/2}")],
        default_cutoff: 2.0 * lat.r0 * 24.5,
    })
}

/// ǧ = 1.5 + 0.5 cos 2πx, V = 2 cos 2πx + 0.5 sin 4πx on Γ = ℤ.
pub fn schrodinger_default() -> ModelDescriptor {
    let lat = Lattice::cubic(1, 1.0);
    let gc = Pmf::scalar(&lat, &[(vec![0], real(1.5)), (vec![1], real(0.25)), (vec![-1], real(0.25))]);
    let v = Pmf::scalar(
        &lat,
        &[(vec![1], real(1.0)), (vec![-1], real(1.0)), (vec![2], cx(0.0, -0.25)), (vec![-2], cx(0.0, 0.25))],
    );
    schrodinger(gc, v).expect("default Schrödinger model")
}

/// 2D Pauli operator with ω_± = e^{±φ}, b = σ₁ξ₁ + σ₂ξ₂, on Γ = (2πℤ)² unless
/// φ lives on another lattice.
pub fn pauli(phi: Pmf) -> Result<ModelDescriptor> {
    let lat = phi.lattice.clone();
    if lat.dim != 2 || phi.shape() != (1, 1) || !is_real_field(&phi) {
        return Err(Error::Model("pauli needs a real scalar φ on a 2D lattice".into()));
    }
    if phi.mean()[(0, 0)].norm() > 1e-14 {
        return Err(Error::Model("φ must have zero mean".into()));
    }
    let mut opts = FieldOptions::for_lattice(&lat);
    let phi_cut = phi
        .coeffs
        .keys()
        .map(|m| lat.dual_vector(m).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    opts.field_cutoff = opts.field_cutoff.max(4.0 * phi_cut);
    let keep = FourierBasis::new(&lat, opts.field_cutoff)?;
    let grid = opts.grid;
    let exp_of = |s: f64| -> Result<Pmf> {
        let t = phi.scale(real(s)).exp_hermitian(grid, &keep)?;
        if t.dropped_mass > 1e-8 {
            return Err(Error::Truncation(t.dropped_mass));
        }
        Ok(t.field)
    };
    let (ep, em, e2p, e2m) = (exp_of(1.0)?, exp_of(-1.0)?, exp_of(2.0)?, exp_of(-2.0)?);
    let diag = |a: &Pmf, b: &Pmf| -> Result<Pmf> {
        let mut out = Pmf::zeros(&lat, 2, 2);
        for (m, c) in &a.coeffs {
            out.coeffs.entry(m.clone()).or_insert_with(|| CMat::zeros(2, 2))[(0, 0)] = c[(0, 0)];
        }
        for (m, c) in &b.coeffs {
            out.coeffs.entry(m.clone()).or_insert_with(|| CMat::zeros(2, 2))[(1, 1)] = c[(0, 0)];
        }
        Ok(out)
    };
    let f = diag(&ep, &em)?;
    let f_inv = diag(&em, &ep)?;
    let g = diag(&e2p, &e2m)?;
    let s1 = CMat::from_row_slice(2, 2, &[real(0.0), real(1.0), real(1.0), real(0.0)]);
    let s2 = CMat::from_row_slice(2, 2, &[real(0.0), cx(0.0, -1.0), cx(0.0, 1.0), real(0.0)]);
    // γ = |Ω|² ‖ω₊‖⁻² ‖ω₋‖⁻² = 1 / (mean e^{2φ} · mean e^{−2φ})
    let gamma = 1.0 / (e2p.mean()[(0, 0)].re * e2m.mean()[(0, 0)].re);
    let spec = OperatorSpec::with_inverse_pair(&lat, vec![s1, s2], g, f, f_inv, opts)?;
    Ok(ModelDescriptor {
        name: "pauli".into(),
        params: BTreeMap::new(),
        spec,
        known_values: vec![known("gamma", gamma, "|Ω|² ‖ω₊‖⁻² ‖ω₋‖⁻²")],
        default_cutoff: 6.5,
    })
}

/// φ = 0.2 cos(x₁ + x₂) on Γ = (2πℤ)².
pub fn pauli_default() -> ModelDescriptor {
    let lat = Lattice::cubic(2, 2.0 * PI);
    let phi = Pmf::scalar(&lat, &[(vec![1, 1], real(0.1)), (vec![-1, -1], real(0.1))]);
    pauli(phi).expect("default Pauli model")
}

/// The four default models.
pub fn zoo() -> Vec<ModelDescriptor> {
    vec![
        acoustics_1d_default(),
        hermitian_2d(0.1).expect("c = 0.1 admissible"),
        schrodinger_default(),
        pauli_default(),
    ]
}

/// Model by name with optional numeric parameters.
pub fn by_name(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelDescriptor> {
    let allowed: &[&str] = if name == "hermitian_2d" { &["c"] } else { &[] };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::Config(format!("model '{name}' has no parameter '{k}'")));
    }
    match name {
        "acoustics_1d" => Ok(acoustics_1d_default()),
        "hermitian_2d" => hermitian_2d(params.get("c").copied().unwrap_or(0.1)),
        "schrodinger" => Ok(schrodinger_default()),
        "pauli" => Ok(pauli_default()),
        other => Err(Error::Config(format!("unknown model '{other}'"))),
    }
}
