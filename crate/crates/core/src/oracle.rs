//! Taylor coefficients of the lowest bands fitted from fiber eigenvalues alone.

use crate::bloch::FiberAssembler;
use crate::error::{Error, Result};
use crate::linalg::{lstsq, RMat};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    pub t_max: f64,
    pub n_samples: usize,
    /// Highest power in the fit basis t², …, t^max_power.
    pub max_power: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { t_max: 0.05, n_samples: 16, max_power: 7 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DispersionFit {
    pub theta: Vec<f64>,
    /// Zero-based band index.
    pub l: usize,
    pub t_samples: Vec<f64>,
    pub lambda_samples: Vec<f64>,
    pub gamma: f64,
    pub mu: f64,
    pub nu: f64,
    /// Coefficients of t², t³, … in order.
    pub coefficients: Vec<f64>,
    pub residual: f64,
    pub condition: f64,
    /// Richardson estimates of γ from the two smallest-t pairs.
    pub richardson: [f64; 2],
}

/// t_k = t_max 2^{-k/2}, k = 0..n.
pub fn geometric_grid(t_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t_max * 2f64.powf(-(k as f64) / 2.0)).collect()
}

/// Lowest `count` eigenvalues of A(tθ) for each t.
pub fn band_samples(asm: &FiberAssembler, theta: &[f64], ts: &[f64], count: usize) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    ts.par_iter()
        .map(|&t| {
            let k: Vec<f64> = theta.iter().map(|x| x * t).collect();
            asm.lowest_eigenvalues(&k, count)
        })
        .collect()
}

/// Least-squares fit of y(t) against t², …, t^p with columns scaled by t_max.
pub fn fit_series(ts: &[f64], ys: &[f64], t_max: f64, max_power: usize) -> Result<(Vec<f64>, f64, f64)> {
    let powers: Vec<i32> = (2..=max_power as i32).collect();
    let a = RMat::from_fn(ts.len(), powers.len(), |i, j| (ts[i] / t_max).powi(powers[j]));
    let fit = lstsq(&a, ys);
    if fit.condition > 1e12 {
        return Err(Error::IllConditioned(fit.condition));
    }
    let coef = fit.coef.iter().zip(&powers).map(|(c, p)| c / t_max.powi(*p)).collect();
    Ok((coef, fit.residual_max, fit.condition))
}

fn richardson(ts: &[f64], ys: &[f64]) -> [f64; 2] {
    // r(t) = λ/t² = γ + μ t + …; eliminate the linear term between t and t/√2
    let r: Vec<f64> = ts.iter().zip(ys).map(|(t, y)| y / (t * t)).collect();
    let n = r.len();
    let s = std::f64::consts::SQRT_2;
    let est = |i: usize| (s * r[i + 1] - r[i]) / (s - 1.0);
    if n < 3 {
        return [r[n - 1], r[n - 1]];
    }
    [est(n - 2), est(n - 3)]
}

/// Fit band `l` (zero-based, l < n) along direction θ.
pub fn fit_dispersion(asm: &FiberAssembler, theta: &[f64], l: usize, opts: &OracleOptions) -> Result<DispersionFit> {
    Ok(fit_all(asm, theta, l + 1, opts)?.swap_remove(l))
}

/// Fit the lowest `count` bands along θ from one set of samples.
pub fn fit_all(asm: &FiberAssembler, theta: &[f64], count: usize, opts: &OracleOptions) -> Result<Vec<DispersionFit>> {
    if opts.n_samples < 6 {
        return Err(Error::Config("oracle needs at least 6 samples".into()));
    }
    if opts.t_max > asm.t0 {
        return Err(Error::Config(format!("t_max {} exceeds t0 = {}", opts.t_max, asm.t0)));
    }
    let ts = geometric_grid(opts.t_max, opts.n_samples);
    let samples = band_samples(asm, theta, &ts, count);
    let mut out = Vec::with_capacity(count);
    for l in 0..count {
        let ys: Vec<f64> = samples.iter().map(|s| s[l]).collect();
        let (coef, residual, condition) = fit_series(&ts, &ys, opts.t_max, opts.max_power)?;
        out.push(DispersionFit {
            theta: theta.to_vec(),
            l,
            t_samples: ts.clone(),
            lambda_samples: ys.clone(),
            gamma: coef[0],
            mu: coef.get(1).copied().unwrap_or(0.0),
            nu: coef.get(2).copied().unwrap_or(0.0),
            coefficients: coef,
            residual,
            condition,
            richardson: richardson(&ts, &ys),
        });
    }
    Ok(out)
}

/// Fit of Σ_{l ∈ cluster} λ_l(t), for clusters whose branches cannot be separated.
pub fn fit_cluster_trace(asm: &FiberAssembler, theta: &[f64], cluster: &[usize], opts: &OracleOptions) -> Result<Vec<f64>> {
    let ts = geometric_grid(opts.t_max, opts.n_samples);
    let top = cluster.iter().max().map(|x| x + 1).unwrap_or(0);
    let samples = band_samples(asm, theta, &ts, top);
    let ys: Vec<f64> = samples.iter().map(|s| cluster.iter().map(|&l| s[l]).sum()).collect();
    Ok(fit_series(&ts, &ys, opts.t_max, opts.max_power)?.0)
}

/// CSV of (t, λ_1(t), …) rows.
pub fn samples_csv(fits: &[DispersionFit]) -> String {
    let mut s = String::from("t");
    for f in fits {
        s.push_str(&format!(",lambda_{}", f.l + 1));
    }
    s.push('\n');
    if let Some(first) = fits.first() {
        for (i, t) in first.t_samples.iter().enumerate() {
            s.push_str(&crate::report::fmt_f64(*t));
            for f in fits {
                s.push(',');
                s.push_str(&crate::report::fmt_f64(f.lambda_samples[i]));
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_polynomial_recovered() {
        let ts = geometric_grid(0.1, 12);
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * t * t - 0.3 * t.powi(3) + 0.7 * t.powi(4)).collect();
        let (c, _, cond) = fit_series(&ts, &ys, 0.1, 5).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12);
        assert!((c[1] + 0.3).abs() < 1e-9);
        assert!((c[2] - 0.7).abs() < 1e-6);
        assert!(cond < 1e12);
    }

    #[test]
    fn richardson_removes_linear_term() {
        let ts = geometric_grid(0.1, 8);
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t * t + 0.5 * t.powi(3)).collect();
        let r = richardson(&ts, &ys);
        assert!((r[0] - 3.0).abs() < 1e-12 && (r[1] - 3.0).abs() < 1e-12);
    }
}
