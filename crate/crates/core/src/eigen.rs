//! Hermitian eigensolvers used by the temporal-mode and tomography code.
//!
//! `jacobi` diagonalizes a full matrix with cyclic complex Jacobi rotations.
//! `top_eigenpairs` extracts the leading part of the spectrum by block
//! subspace iteration with Rayleigh-Ritz refinement, falling back to the
//! full Jacobi sweep for small problems.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Eigenvalues in descending order with matching unit eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

/// Largest `|a_ij - conj(a_ji)|`.
pub fn hermitian_defect(a: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(a: &DMatrix<Complex64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.norm()))
}

/// Full eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
pub fn jacobi(a: &DMatrix<Complex64>) -> Result<HermitianEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Precondition("matrix is not square".into()));
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    if hermitian_defect(a) > 1e-10 * scale {
        return Err(Error::InvalidKernel(format!(
            "matrix is not Hermitian (defect {:e})",
            hermitian_defect(a)
        )));
    }
    // row-major working copy, symmetrized
    let mut m = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
        }
    }
    let mut v = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        v[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let frob2: f64 = m.iter().map(|z| z.norm_sqr()).sum();
    let target = (1e-15f64).powi(2) * frob2.max(f64::MIN_POSITIVE);

    let mut converged = n < 2;
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].norm_sqr())
            .sum();
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = m[p * n + p].re;
                let aqq = m[q * n + q].re;
                let phase = apq / mag; // e^{i phi}
                let theta = (aqq - app) / (2.0 * mag);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let e = phase.conj();
                let g_pp = Complex64::new(c, 0.0);
                let g_pq = Complex64::new(s, 0.0);
                let g_qp = e * (-s);
                let g_qq = e * c;
                // columns: M <- M G
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = mkp * g_pp + mkq * g_qp;
                    m[k * n + q] = mkp * g_pq + mkq * g_qq;
                }
                // rows: M <- G^H M
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = g_pp.conj() * mpk + g_qp.conj() * mqk;
                    m[q * n + k] = g_pq.conj() * mpk + g_qq.conj() * mqk;
                }
                m[p * n + q] = Complex64::new(0.0, 0.0);
                m[q * n + p] = Complex64::new(0.0, 0.0);
                m[p * n + p].im = 0.0;
                m[q * n + q].im = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = vkp * g_pp + vkq * g_qp;
                    v[k * n + q] = vkp * g_pq + vkq * g_qq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Convergence("Jacobi sweeps exhausted".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].re.total_cmp(&m[i * n + i].re));
    let values = order.iter().map(|&i| m[i * n + i].re).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok(HermitianEigen { values, vectors })
}

fn sub_columns(m: &DMatrix<Complex64>, k: usize) -> DMatrix<Complex64> {
    m.columns(0, k).into_owned()
}

/// Leading `k` eigenpairs of a Hermitian matrix, eigenvalues descending.
///
/// Deterministic: the starting block is drawn from a fixed-seed generator.
pub fn top_eigenpairs(a: &DMatrix<Complex64>, k: usize) -> Result<HermitianEigen> {
    let n = a.nrows();
    if k > n {
        return Err(Error::Precondition(format!(
            "requested {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    let block = (2 * k).max(k + 8).min(n);
    if n <= 160 || 3 * block >= n {
        let full = jacobi(a)?;
        return Ok(HermitianEigen {
            values: full.values[..k].to_vec(),
            vectors: sub_columns(&full.vectors, k),
        });
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    if hermitian_defect(a) > 1e-10 * scale {
        return Err(Error::InvalidKernel(format!(
            "matrix is not Hermitian (defect {:e})",
            hermitian_defect(a)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_e16e);
    let start = DMatrix::from_fn(n, block, |_, _| {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let mut y = a * &start;
    let tol = 1e-12;
    for _iter in 0..20_000 {
        let q = y.clone().qr().q();
        let z = a * &q;
        let s = q.adjoint() * &z;
        let small = jacobi(&s)?;
        let x = &q * &small.vectors;
        let ax = &z * &small.vectors;
        let lead = small.values[0].abs().max(small.values[block - 1].abs());
        let norm_scale = lead.max(scale * 1e-300);
        let converged = (0..k).all(|i| {
            let r = ax.column(i) - x.column(i) * Complex64::new(small.values[i], 0.0);
            r.norm() <= tol * norm_scale
        });
        if converged {
            return Ok(HermitianEigen {
                values: small.values[..k].to_vec(),
                vectors: sub_columns(&x, k),
            });
        }
        y = ax;
    }
    Err(Error::Convergence(
        "subspace iteration did not reach the residual tolerance".into(),
    ))
}
