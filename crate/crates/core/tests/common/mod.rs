#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn s(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

pub fn diag(d: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(d))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// `MM' + floor·I` for a random square `M`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n);
    let out = &m * m.transpose() + DMatrix::identity(n, n) * floor;
    (&out + out.transpose()) * 0.5
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Textbook finite-horizon LQR with explicit inverses:
/// `K = −(R + B'PB)⁻¹B'PA`, `P ← Q + A'P(A + BK)`. Returns `(P_0..P_N, K_0..K_{N−1})`.
pub fn classical_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n_steps: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut p = vec![q.clone(); n_steps + 1];
    let mut k = vec![DMatrix::zeros(b.ncols(), a.nrows()); n_steps];
    for t in (0..n_steps).rev() {
        let pn = &p[t + 1];
        let inv = (r + b.transpose() * pn * b)
            .try_inverse()
            .expect("invertible");
        k[t] = -(&inv * b.transpose() * pn * a);
        let next = q + a.transpose() * pn * (a + b * &k[t]);
        p[t] = (&next + next.transpose()) * 0.5;
    }
    (p, k)
}

/// Nelder–Mead with restarts; returns the best point and value.
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    restarts: usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut best = x0.to_vec();
    let mut best_f = f(&best);
    for round in 0..restarts {
        let scale = step / (1 << round.min(6)) as f64;
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..dim {
            let mut p = best.clone();
            p[i] += scale;
            simplex.push(p);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
        for _ in 0..20_000 {
            let mut idx: Vec<usize> = (0..=dim).collect();
            idx.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
            simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            if (vals[dim] - vals[0]).abs() <= 1e-15 * (1.0 + vals[0].abs()) {
                break;
            }
            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|p| p[j]).sum::<f64>() / dim as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..dim)
                    .map(|j| centroid[j] + t * (simplex[dim][j] - centroid[j]))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[dim] = xe;
                    vals[dim] = fe;
                } else {
                    simplex[dim] = xr;
                    vals[dim] = fr;
                }
            } else if fr < vals[dim - 1] {
                simplex[dim] = xr;
                vals[dim] = fr;
            } else {
                let xc = if fr < vals[dim] {
                    along(-0.5)
                } else {
                    along(0.5)
                };
                let fc = f(&xc);
                if fc < vals[dim].min(fr) {
                    simplex[dim] = xc;
                    vals[dim] = fc;
                } else {
                    for i in 1..=dim {
                        simplex[i] = (0..dim)
                            .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                            .collect();
                        vals[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=dim)
            .min_by(|&i, &j| vals[i].total_cmp(&vals[j]))
            .unwrap();
        if vals[i] < best_f {
            best_f = vals[i];
            best = simplex[i].clone();
        }
    }
    (best, best_f)
}

/// Sample autocorrelation at lag `k`.
pub fn autocorr(xs: &[f64], k: usize) -> f64 {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = (0..n - k)
        .map(|i| (xs[i] - mean) * (xs[i + k] - mean))
        .sum();
    cov / var
}
