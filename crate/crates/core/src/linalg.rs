//! Small dense linear-algebra helpers shared by the learning and certification code.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest singular value (induced 2-norm).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Eigenvalues through the real Schur form with a bounded iteration count.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(Error::InvalidDimension("matrix is not square".into()));
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    // Repeated eigenvalues can stall deflation at machine precision; loosen gradually.
    for eps in [f64::EPSILON, 1e-14, 1e-12] {
        if let Some(schur) = m.clone().try_schur(eps, 10_000) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::Numerical("Schur iteration did not converge".into()))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Singular values sorted in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Solves `m x = rhs` with a pivoted LU factorization.
pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let x = m
        .clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numerical("non-finite solution of linear system".into()))
    }
}

/// Shift matrix of size `n`: ones on the superdiagonal.
pub fn shift_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

/// Companion matrix with ones on the superdiagonal and `-w` as its last row.
pub fn companion(w: &[f64]) -> DMatrix<f64> {
    let n = w.len();
    let mut m = shift_matrix(n);
    for (j, wj) in w.iter().enumerate() {
        m[(n - 1, j)] = -wj;
    }
    m
}

/// `exp(A t)` for nilpotent `A`, summed until the powers vanish. Exact up to rounding.
pub fn nilpotent_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=n {
        term = &term * a * (t / k as f64);
        if term.iter().all(|v| *v == 0.0) {
            return Ok(result);
        }
        result += &term;
    }
    if (&term * a).iter().any(|v| *v != 0.0) {
        return Err(Error::Numerical("matrix is not nilpotent".into()));
    }
    Ok(result)
}

/// Characteristic polynomial coefficients, highest degree first (monic), by Faddeev-LeVerrier.
pub fn characteristic_polynomial(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    let eye = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        let c_prev = *coeffs.last().unwrap();
        m = a * &m + &eye * c_prev;
        let am = a * &m;
        coeffs.push(-am.trace() / k as f64);
    }
    coeffs
}

fn horner(coeffs: &[f64], s: Complex<f64>) -> Complex<f64> {
    coeffs
        .iter()
        .fold(Complex::new(0.0, 0.0), |acc, &c| acc * s + c)
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    let deg = coeffs.len() - 1;
    coeffs[..deg]
        .iter()
        .enumerate()
        .map(|(i, c)| c * (deg - i) as f64)
        .collect()
}

/// Roots of a polynomial given highest-degree-first coefficients.
///
/// Weierstrass (Durand-Kerner) iteration, followed by a cluster pass: a group of `k` nearby
/// roots is replaced by the root of the `(k-1)`-th derivative nearest to the group mean, which
/// stays well conditioned where the multiple root itself is not.
pub fn polynomial_roots(coeffs: &[f64]) -> Result<Vec<Complex<f64>>> {
    let lead = *coeffs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty polynomial".into()))?;
    if lead == 0.0 {
        return Err(Error::InvalidArgument("leading coefficient is zero".into()));
    }
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let deg = monic.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let bound = 1.0 + monic[1..].iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let mut roots: Vec<Complex<f64>> = (0..deg)
        .map(|k| {
            let angle = 0.4 + std::f64::consts::TAU * k as f64 / deg as f64;
            Complex::from_polar(0.5 * bound, angle)
        })
        .collect();
    for _ in 0..2000 {
        let mut delta = 0.0_f64;
        for i in 0..deg {
            let zi = roots[i];
            let mut denom = Complex::new(1.0, 0.0);
            for (j, zj) in roots.iter().enumerate() {
                if j != i {
                    denom *= zi - zj;
                }
            }
            if denom.norm() == 0.0 {
                denom = Complex::new(1e-300, 0.0);
            }
            let step = horner(&monic, zi) / denom;
            roots[i] = zi - step;
            delta = delta.max(step.norm() / (1.0 + zi.norm()));
        }
        if delta < 1e-15 {
            break;
        }
    }
    if roots.iter().any(|r| !r.re.is_finite() || !r.im.is_finite()) {
        return Err(Error::Numerical("root iteration produced non-finite values".into()));
    }
    // Durand-Kerner converges only linearly onto multiple roots; the cluster pass fixes those.

    let mut cluster_of: Vec<usize> = (0..deg).collect();
    for i in 0..deg {
        for j in (i + 1)..deg {
            if (roots[i] - roots[j]).norm() < 1e-3 * (1.0 + roots[i].norm()) {
                let (a, b) = (cluster_of[i], cluster_of[j]);
                let (lo, hi) = (a.min(b), a.max(b));
                for c in cluster_of.iter_mut() {
                    if *c == hi {
                        *c = lo;
                    }
                }
            }
        }
    }
    let mut refined = roots.clone();
    for label in 0..deg {
        let members: Vec<usize> = (0..deg).filter(|&i| cluster_of[i] == label).collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len();
        let mean = members.iter().map(|&i| roots[i]).sum::<Complex<f64>>() / k as f64;
        let mut poly = monic.clone();
        for _ in 1..k {
            poly = derivative(&poly);
        }
        let dpoly = derivative(&poly);
        let mut z = mean;
        for _ in 0..50 {
            let d = horner(&dpoly, z);
            if d.norm() == 0.0 {
                break;
            }
            let step = horner(&poly, z) / d;
            z -= step;
            if step.norm() <= 1e-16 * (1.0 + z.norm()) {
                break;
            }
        }
        if (z - mean).norm() < 1e-2 * (1.0 + mean.norm()) {
            for &i in &members {
                refined[i] = z;
            }
        }
    }
    Ok(refined)
}

/// Eigenvalues from the characteristic polynomial; intended for the small matrices (n <= 8)
/// used in the Hurwitz checks.
pub fn eigenvalues_via_charpoly(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !a.is_square() {
        return Err(Error::InvalidDimension("matrix is not square".into()));
    }
    if a.nrows() > 8 {
        return Err(Error::InvalidDimension(format!(
            "characteristic-polynomial eigenvalues limited to n <= 8, got {}",
            a.nrows()
        )));
    }
    polynomial_roots(&characteristic_polynomial(a))
}

/// True iff every eigenvalue has real part below `-1e-9`.
pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<bool> {
    Ok(eigenvalues_via_charpoly(a)?.iter().all(|l| l.re < -1e-9))
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
