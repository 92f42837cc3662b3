//! Small dense linear algebra: Cholesky factorization, symmetric eigenvalues
//! via cyclic Jacobi, packed symmetric storage, and an L1-ball projection.
//!
//! The matrices in this crate are small (precision matrices, Fisher blocks),
//! so plain O(p^3) routines are enough and keep the crate generic over the
//! scalar type.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Length of the packed storage for a symmetric p x p matrix.
pub fn packed_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Side length p recovered from a packed length, if it is one.
pub fn packed_dim(len: usize) -> Option<usize> {
    let p = ((((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1)) / 2;
    for q in p.saturating_sub(1)..=p + 1 {
        if packed_len(q) == len {
            return Some(q);
        }
    }
    None
}

/// Packed index of entry (i, j), i <= j, row-major upper triangle.
pub fn packed_index(p: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < p);
    i * p - i * (i + 1) / 2 + j
}

/// Expand a packed symmetric vector to a dense matrix.
pub fn unpack_symmetric<S: Scalar>(v: ArrayView1<S>, p: usize) -> Array2<S> {
    let mut m = Array2::zeros((p, p));
    for i in 0..p {
        for j in i..p {
            let x = v[packed_index(p, i, j)];
            m[[i, j]] = x;
            m[[j, i]] = x;
        }
    }
    m
}

/// Pack the upper triangle of a symmetric matrix.
pub fn pack_symmetric<S: Scalar>(m: ArrayView2<S>) -> Array1<S> {
    let p = m.nrows();
    let mut v = Array1::zeros(packed_len(p));
    for i in 0..p {
        for j in i..p {
            v[packed_index(p, i, j)] = m[[i, j]];
        }
    }
    v
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Fails on a non-positive pivot, which doubles as the PD test.
pub fn cholesky<S: Scalar>(a: ArrayView2<S>) -> Result<Array2<S>> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: a.ncols(),
        });
    }
    let mut l: Array2<S> = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum = sum - l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= S::zero() {
                    return Err(Error::domain(format!(
                        "non-positive pivot {} at row {i} in Cholesky",
                        sum.to_f()
                    )));
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

pub fn is_positive_definite<S: Scalar>(a: ArrayView2<S>) -> bool {
    cholesky(a).is_ok()
}

/// log det of a symmetric PD matrix via its Cholesky factor.
pub fn log_det_pd<S: Scalar>(a: ArrayView2<S>) -> Result<S> {
    let l = cholesky(a)?;
    let two = S::from_f(2.0);
    Ok((0..a.nrows()).map(|i| l[[i, i]].ln()).sum::<S>() * two)
}

/// Solve L x = b with L lower triangular.
pub fn solve_lower<S: Scalar>(l: ArrayView2<S>, b: ArrayView1<S>) -> Array1<S> {
    let p = l.nrows();
    let mut x = b.to_owned();
    for i in 0..p {
        for k in 0..i {
            let t = l[[i, k]] * x[k];
            x[i] = x[i] - t;
        }
        x[i] = x[i] / l[[i, i]];
    }
    x
}

/// Solve L^T x = b with L lower triangular.
pub fn solve_lower_transpose<S: Scalar>(l: ArrayView2<S>, b: ArrayView1<S>) -> Array1<S> {
    let p = l.nrows();
    let mut x = b.to_owned();
    for i in (0..p).rev() {
        for k in i + 1..p {
            let t = l[[k, i]] * x[k];
            x[i] = x[i] - t;
        }
        x[i] = x[i] / l[[i, i]];
    }
    x
}

/// Inverse of a symmetric PD matrix via Cholesky.
pub fn invert_pd<S: Scalar>(a: ArrayView2<S>) -> Result<Array2<S>> {
    let p = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::zeros((p, p));
    for j in 0..p {
        let mut e: Array1<S> = Array1::zeros(p);
        e[j] = S::one();
        let y = solve_lower(l.view(), e.view());
        let x = solve_lower_transpose(l.view(), y.view());
        inv.column_mut(j).assign(&x);
    }
    // symmetrize against roundoff
    for i in 0..p {
        for j in i + 1..p {
            let avg = (inv[[i, j]] + inv[[j, i]]) * S::from_f(0.5);
            inv[[i, j]] = avg;
            inv[[j, i]] = avg;
        }
    }
    Ok(inv)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<S: Scalar>(a: ArrayView2<S>) -> Array1<S> {
    let p = a.nrows();
    let mut m = a.to_owned();
    let tol = S::from_f(1e-14);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = S::zero();
        for i in 0..p {
            for j in i + 1..p {
                off = off + m[[i, j]] * m[[i, j]];
            }
        }
        let scale: S = (0..p).map(|i| m[[i, i]] * m[[i, i]]).sum::<S>() + off + S::epsilon();
        if off <= tol * tol * scale {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                let apq = m[[i, j]];
                if apq == S::zero() {
                    continue;
                }
                let app = m[[i, i]];
                let aqq = m[[j, j]];
                let theta = (aqq - app) / (S::from_f(2.0) * apq);
                let t = {
                    let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                    sign / (theta.abs() + (theta * theta + S::one()).sqrt())
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mik = m[[i, k]];
                    let mjk = m[[j, k]];
                    m[[i, k]] = c * mik - s * mjk;
                    m[[j, k]] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let mki = m[[k, i]];
                    let mkj = m[[k, j]];
                    m[[k, i]] = c * mki - s * mkj;
                    m[[k, j]] = s * mki + c * mkj;
                }
            }
        }
    }
    let mut eig: Vec<S> = (0..p).map(|i| m[[i, i]]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Array1::from(eig)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn symmetric_max_eigenvalue<S: Scalar>(a: ArrayView2<S>) -> S {
    let eig = symmetric_eigenvalues(a);
    eig[eig.len() - 1]
}

/// Euclidean projection of `x` onto the L1 ball of the given radius.
pub fn project_l1_ball<S: Scalar>(x: ArrayView1<S>, radius: S) -> Array1<S> {
    if radius <= S::zero() {
        return Array1::zeros(x.len());
    }
    let l1: S = x.iter().map(|v| v.abs()).sum();
    if l1 <= radius {
        return x.to_owned();
    }
    // find the soft-threshold level by sorting |x|
    let mut mags: Vec<S> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = S::zero();
    let mut theta = S::zero();
    for (k, &m) in mags.iter().enumerate() {
        cumsum = cumsum + m;
        let kf = S::from_f((k + 1) as f64);
        let t = (cumsum - radius) / kf;
        if k + 1 == mags.len() || mags[k + 1] <= t {
            theta = t;
            break;
        }
    }
    x.mapv(|v| {
        let m = v.abs() - theta;
        if m > S::zero() {
            m * v.signum()
        } else {
            S::zero()
        }
    })
}
