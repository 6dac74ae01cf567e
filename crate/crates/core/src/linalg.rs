//! Small dense linear-algebra helpers shared by the synthesis modules.
//!
//! Everything here works on `nalgebra` dynamic matrices; the systems handled
//! by this crate are a handful of states, so clarity wins over blocking.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted by [`solve_guarded`].
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    let min = sv.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_abs_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && max_abs_entry(&(m - m.transpose())) <= tol
}

pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

/// `a ⪰ b - tol·I` in the Loewner order.
pub fn psd_geq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(&(a - b)) >= -tol
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Solve `m · x = rhs`, failing when `m` is numerically singular.
pub fn solve_guarded(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::Singular { stage: None, cond });
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::Singular { stage: None, cond })
}

pub fn solve_guarded_vec(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let x = solve_guarded(m, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Ok(x.column(0).into_owned())
}

pub fn inverse_guarded(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_guarded(m, &DMatrix::identity(m.nrows(), m.nrows()))
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Popov-Belevitch-Hautus rank test for `(a, b)` stabilizability.
///
/// Every eigenvalue with `|λ| ≥ 1` must leave `[a − λI, b]` with full row
/// rank, counted with a singular-value threshold `rel_tol · σ_max`.
pub fn pbh_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> bool {
    let n = a.nrows();
    a.complex_eigenvalues()
        .iter()
        .filter(|l| l.norm() >= 1.0 - 1e-12)
        .all(|&lambda| {
            let mut block = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
            for i in 0..n {
                for j in 0..n {
                    let shift = if i == j {
                        lambda
                    } else {
                        Complex::new(0.0, 0.0)
                    };
                    block[(i, j)] = Complex::new(a[(i, j)], 0.0) - shift;
                }
                for j in 0..b.ncols() {
                    block[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
                }
            }
            numerical_rank(block, rel_tol) == n
        })
}

/// Dual PBH test: `(a, c)` detectable iff `(a', c')` stabilizable.
pub fn pbh_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>, rel_tol: f64) -> bool {
    pbh_stabilizable(&a.transpose(), &c.transpose(), rel_tol)
}

fn numerical_rank(m: DMatrix<Complex<f64>>, rel_tol: f64) -> usize {
    let sv = m.singular_values();
    let max = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = psd_sqrt(&m);
        assert!(max_abs_entry(&(&s * &s - &m)) < 1e-12);
    }

    #[test]
    fn guarded_solve_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let err = solve_guarded(&m, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn pbh_flags_uncontrollable_unstable_mode() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::zeros(1, 1);
        assert!(!pbh_stabilizable(&a, &b, 1e-9));
        // a stable uncontrollable mode is fine
        let a = DMatrix::from_element(1, 1, 0.5);
        assert!(pbh_stabilizable(&a, &b, 1e-9));
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
    }
}
