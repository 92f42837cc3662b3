//! Independent numerical oracles used by the integration tests. These are
//! deliberately separate implementations from the library code paths they
//! check: a plain Cholesky/Jacobi pair, Cauchy-integral differentiation,
//! central finite differences, and a coordinate-descent lasso solver.

#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::Rng;

/// Lower-triangular Cholesky factor; panics on a non-PD input (oracle use
/// only feeds PD matrices).
pub fn chol_lower(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                assert!(s > 0.0, "oracle chol: matrix not positive definite");
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    l
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
pub fn jacobi_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]].abs() < 1e-18 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

/// Solves A x = b for symmetric PD A via Cholesky.
pub fn pd_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let l = chol_lower(a);
    let n = b.len();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Inverse of a symmetric PD matrix via column solves.
pub fn pd_inverse(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let col = pd_solve(a, e.view());
        for i in 0..n {
            inv[[i, j]] = col[i];
        }
    }
    inv
}

/// Taylor coefficients f^(k)(0)/k! for k = 0..=k_max of a function analytic
/// on |z| <= radius, by trapezoid discretization of the Cauchy integral.
/// Exponentially accurate in the node count.
pub fn cauchy_taylor_coeffs(
    f: impl Fn(Complex64) -> Complex64,
    radius: f64,
    k_max: usize,
    nodes: usize,
) -> Vec<f64> {
    let n = nodes.max(4 * (k_max + 1));
    let vals: Vec<Complex64> = (0..n)
        .map(|j| {
            let t = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            f(Complex64::from_polar(radius, t))
        })
        .collect();
    (0..=k_max)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, v) in vals.iter().enumerate() {
                let t = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                acc += v * Complex64::from_polar(1.0, -(k as f64) * t);
            }
            (acc / n as f64).re / radius.powi(k as i32)
        })
        .collect()
}

/// Central-difference gradient with step h.
pub fn fd_gradient(f: impl Fn(ArrayView1<f64>) -> f64, x: ArrayView1<f64>, h: f64) -> Array1<f64> {
    let mut g = Array1::<f64>::zeros(x.len());
    let mut xp = x.to_owned();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let up = f(xp.view());
        xp[i] = xi - h;
        let dn = f(xp.view());
        xp[i] = xi;
        g[i] = (up - dn) / (2.0 * h);
    }
    g
}

/// Coordinate-descent solver for 1/2 th' G th - b' th + lambda ||th||_1.
/// Cycles until the sup-norm update falls below tol.
pub fn cd_lasso(g: ArrayView2<f64>, b: ArrayView1<f64>, lambda: f64, tol: f64) -> Array1<f64> {
    let p = b.len();
    let mut theta = Array1::<f64>::zeros(p);
    for _sweep in 0..200_000 {
        let mut max_move = 0.0_f64;
        for i in 0..p {
            let gii = g[[i, i]];
            assert!(gii > 0.0, "oracle cd: zero curvature coordinate");
            let mut r = b[i];
            for j in 0..p {
                if j != i {
                    r -= g[[i, j]] * theta[j];
                }
            }
            let new = soft(r, lambda) / gii;
            max_move = max_move.max((new - theta[i]).abs());
            theta[i] = new;
        }
        if max_move < tol {
            break;
        }
    }
    theta
}

fn soft(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Random symmetric matrix with entries in [-1, 1].
pub fn random_symmetric(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = rng.gen_range(-1.0..1.0);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    m
}

/// Random positive definite matrix A A' / n + 0.3 I.
pub fn random_pd(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] = rng.gen_range(-1.0..1.0);
        }
    }
    a.dot(&a.t()) / n as f64 + Array2::<f64>::eye(n) * 0.3
}
