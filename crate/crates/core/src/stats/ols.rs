use std::collections::BTreeSet;

use super::design::{DesignRow, N_TERMS};
use super::tdist::two_sided_p;
use crate::error::{Error, Result};
use crate::persona::TraitCell;

const RANK_TOL: f64 = 1e-10;

/// Least-squares solution for a general dense design.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub beta: Vec<f64>,
    /// (XᵀX)⁻¹, row-major p×p.
    pub xtx_inv: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub rss: f64,
}

/// Solves min ‖y − Xβ‖² by Householder QR. `x` holds rows of length p.
///
/// Returns `Err(column)` with the first column found to be linearly dependent
/// on the ones before it.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> std::result::Result<LeastSquares, usize> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    assert_eq!(y.len(), n, "design and response lengths differ");
    if n < p || p == 0 {
        return Err(n.min(p));
    }
    // Column-major working copy.
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let mut qty = y.to_vec();
    let mut diag = vec![0.0; p];

    for k in 0..p {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        // v = a_k[k..] - alpha e_1, stored in place.
        a[k][k] -= alpha;
        let vnorm2: f64 = a[k][k..].iter().map(|v| v * v).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let (head, tail) = a.split_at_mut(k + 1);
        let v = &head[k][k..];
        for col in tail.iter_mut() {
            let s: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum::<f64>() * 2.0 / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(v) {
                *c -= s * vi;
            }
        }
        let s: f64 = v.iter().zip(&qty[k..]).map(|(a, b)| a * b).sum::<f64>() * 2.0 / vnorm2;
        for (c, vi) in qty[k..].iter_mut().zip(v) {
            *c -= s * vi;
        }
    }

    let max_pivot = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if let Some(k) = diag.iter().position(|d| d.abs() <= RANK_TOL * max_pivot) {
        return Err(k);
    }
    // R is upper triangular: R[i][j] = a[j][i] for i < j, diag on the diagonal.
    let r = |i: usize, j: usize| if i == j { diag[i] } else { a[j][i] };

    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r(i, j) * beta[j]).sum();
        beta[i] = (qty[i] - s) / r(i, i);
    }

    // R⁻¹ by back substitution, then (XᵀX)⁻¹ = R⁻¹R⁻ᵀ.
    let mut rinv = vec![vec![0.0; p]; p];
    for j in 0..p {
        rinv[j][j] = 1.0 / r(j, j);
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|m| r(i, m) * rinv[m][j]).sum();
            rinv[i][j] = -s / r(i, i);
        }
    }
    let xtx_inv = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| (i.max(j)..p).map(|m| rinv[i][m] * rinv[j][m]).sum())
                .collect()
        })
        .collect();

    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(row, yi)| yi - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let rss = residuals.iter().map(|e| e * e).sum();
    Ok(LeastSquares {
        beta,
        xtx_inv,
        residuals,
        rss,
    })
}

/// Coefficient table for the saturated 2×2×2 model.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub n: usize,
    pub df: usize,
    pub coefficients: [f64; N_TERMS],
    pub std_errors: [f64; N_TERMS],
    pub t_stats: [f64; N_TERMS],
    pub p_values: [f64; N_TERMS],
    pub r2: f64,
    pub residuals: Vec<f64>,
}

/// Fits y = Xβ + ε over the eight effect-coded terms.
pub fn fit_ols(observations: &[(DesignRow, f64)]) -> Result<OlsFit> {
    let n = observations.len();
    if n <= N_TERMS {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {N_TERMS} parameters"
        )));
    }
    if observations.iter().any(|(_, y)| !y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite outcome value".into()));
    }
    let x: Vec<Vec<f64>> = observations.iter().map(|(r, _)| r.x.to_vec()).collect();
    let y: Vec<f64> = observations.iter().map(|(_, y)| *y).collect();

    let ls = least_squares(&x, &y).map_err(|_| {
        let present: BTreeSet<TraitCell> = observations.iter().map(|(r, _)| r.cell()).collect();
        Error::SingularDesign {
            missing: TraitCell::all()
                .filter(|c| !present.contains(c))
                .map(|c| c.id())
                .collect(),
        }
    })?;

    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if tss == 0.0 {
        return Err(Error::DegenerateResponse);
    }
    let df = n - N_TERMS;
    let sigma2 = ls.rss / df as f64;
    let r2 = if ls.rss <= 1e-12 * tss {
        1.0
    } else {
        (1.0 - ls.rss / tss).clamp(0.0, 1.0)
    };

    let mut fit = OlsFit {
        n,
        df,
        coefficients: [0.0; N_TERMS],
        std_errors: [0.0; N_TERMS],
        t_stats: [0.0; N_TERMS],
        p_values: [1.0; N_TERMS],
        r2,
        residuals: ls.residuals,
    };
    for j in 0..N_TERMS {
        let b = ls.beta[j];
        let se = (sigma2 * ls.xtx_inv[j][j]).max(0.0).sqrt();
        let t = if se > 0.0 {
            b / se
        } else if b == 0.0 {
            0.0
        } else {
            b.signum() * f64::INFINITY
        };
        fit.coefficients[j] = b;
        fit.std_errors[j] = se;
        fit.t_stats[j] = t;
        fit.p_values[j] = two_sided_p(t, df as f64)?;
    }
    Ok(fit)
}
