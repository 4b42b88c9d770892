//! Independent reference implementations used to check the library.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

/// Brute-force OLS: forms XᵀX, inverts it by Gauss-Jordan elimination with
/// partial pivoting, and derives every statistic from the inverse.
pub struct OracleFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub r2: f64,
}

pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        assert!(d.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, p) in m[r].iter_mut().zip(pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn ols(x: &[Vec<f64>], y: &[f64]) -> OracleFit {
    let n = x.len();
    let p = x[0].len();
    let xtx: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| x.iter().map(|r| r[i] * r[j]).sum())
                .collect()
        })
        .collect();
    let xty: Vec<f64> = (0..p)
        .map(|i| x.iter().zip(y).map(|(r, v)| r[i] * v).sum())
        .collect();
    let inv = invert(&xtx);
    let beta: Vec<f64> = inv
        .iter()
        .map(|row| row.iter().zip(&xty).map(|(a, b)| a * b).sum())
        .collect();
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(r, v)| {
            let fit: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (v - fit).powi(2)
        })
        .sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let df = (n - p) as f64;
    let s2 = rss / df;
    let se: Vec<f64> = (0..p).map(|j| (s2 * inv[j][j]).sqrt()).collect();
    let t: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let pv = t.iter().map(|t| t_two_sided(*t, df)).collect();
    OracleFit {
        beta,
        se,
        t,
        p: pv,
        r2: 1.0 - rss / tss,
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature over [a, b], started from 64 panels so
/// narrow peaks are not missed.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = simpson(lo, hi, fa, fm, fb);
            adaptive(&f, lo, hi, fa, fm, fb, whole, tol / PANELS as f64, 40)
        })
        .sum()
}

/// Two-sided Student-t p-value by quadrature. With x = √ν·tanθ the density
/// becomes proportional to cos^(ν-1)θ on (-π/2, π/2), so
/// p = ∫_{θ₀}^{π/2} cos^(ν-1) / ∫_0^{π/2} cos^(ν-1), θ₀ = atan(|t|/√ν).
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    let g = |th: f64| th.cos().max(0.0).powf(df - 1.0);
    let theta0 = (t.abs() / df.sqrt()).atan();
    integrate(g, theta0, FRAC_PI_2, 1e-14) / integrate(g, 0.0, FRAC_PI_2, 1e-14)
}

/// Two-sided standard normal p-value by quadrature of the density.
pub fn normal_two_sided(z: f64) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    1.0 - 2.0 * integrate(phi, 0.0, z.abs(), 1e-14)
}
