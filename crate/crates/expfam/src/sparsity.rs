//! Restricted Fisher eigenvalues, the cone diagnostic, the two-stage
//! threshold-and-refit procedure, and support-recovery metrics.
//!
//! kappa_max is closed form (top eigenvalue of the on-support Fisher block).
//! kappa_min is the infimum of ||delta||_F / ||delta_S||_2 over the cone
//! {||delta_{S^c}||_1 <= 3 ||delta_S||_1}; the problem is nonconvex in
//! general, so the returned value is an upper bound on the true infimum,
//! found by slice enumeration (small p) or randomized cone starts with
//! projected local descent.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::family::{Dataset, FamilyModel, FisherMatrix, ParameterVector};
use crate::linalg::{project_l1_ball, symmetric_max_eigenvalue};
use crate::num::Scalar;
use crate::solver::{fit_l1, fit_restricted, FitResult, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReMethod {
    ExactEnumeration,
    RandomizedConeSearch,
}

#[derive(Debug, Clone)]
pub struct ReConstants<S: Scalar> {
    /// Upper bound on the cone infimum of ||delta||_F / ||delta_S||_2.
    pub kappa_min: S,
    /// sqrt of the top eigenvalue of F_SS (exact).
    pub kappa_max: S,
    pub support: BTreeSet<usize>,
    pub method: ReMethod,
    pub certificate_samples: usize,
}

/// Membership in the cone ||delta_{S^c}||_1 <= cone_constant ||delta_S||_1
/// with the standard constant 3.
pub fn cone_membership<S: Scalar>(delta: ArrayView1<S>, support: &BTreeSet<usize>) -> bool {
    cone_membership_with(delta, support, S::from_f(3.0))
}

pub fn cone_membership_with<S: Scalar>(
    delta: ArrayView1<S>,
    support: &BTreeSet<usize>,
    cone_constant: S,
) -> bool {
    let l1_s: S = support.iter().map(|&i| delta[i].abs()).sum();
    let l1_sc: S = (0..delta.len())
        .filter(|i| !support.contains(i))
        .map(|i| delta[i].abs())
        .sum();
    l1_sc <= cone_constant * l1_s + S::from_f(1e-12) * (S::one() + l1_s)
}

/// Restricted eigenvalue constants of a Fisher matrix over a support set.
/// Exact slice enumeration for p <= 6, randomized cone search otherwise;
/// `budget` controls the number of starts. Deterministic given the seed.
pub fn re_constants<S: Scalar>(
    fisher: &FisherMatrix<S>,
    support: &BTreeSet<usize>,
    budget: usize,
    seed: u64,
) -> Result<ReConstants<S>> {
    let method = if fisher.dim() <= 6 {
        ReMethod::ExactEnumeration
    } else {
        ReMethod::RandomizedConeSearch
    };
    re_constants_with_method(fisher, support, budget, seed, method)
}

/// As [`re_constants`] but with the search method forced, so the two
/// strategies can be compared on the same problem.
pub fn re_constants_with_method<S: Scalar>(
    fisher: &FisherMatrix<S>,
    support: &BTreeSet<usize>,
    budget: usize,
    seed: u64,
    method: ReMethod,
) -> Result<ReConstants<S>> {
    let p = fisher.dim();
    if support.is_empty() {
        return Err(Error::invalid("support must be nonempty"));
    }
    if support.iter().any(|&i| i >= p) {
        return Err(Error::invalid("support index out of range"));
    }
    let s_idx: Vec<usize> = support.iter().copied().collect();
    let f = fisher.entries();

    // kappa_max^2 = top eigenvalue of F_SS, exact
    let s = s_idx.len();
    let mut f_ss = Array2::zeros((s, s));
    for (a, &i) in s_idx.iter().enumerate() {
        for (b, &j) in s_idx.iter().enumerate() {
            f_ss[[a, b]] = f[[i, j]];
        }
    }
    let kappa_max = symmetric_max_eigenvalue(f_ss.view()).max(S::zero()).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = S::infinity();
    let mut samples = 0;

    // enumeration over the unit sphere of the on-support block; every slice
    // minimization over the off-support block is convex and solved to
    // convergence, so small-p results are exact up to the sphere grid
    let slices: Vec<Array1<S>> = match method {
        ReMethod::ExactEnumeration => sphere_grid(s, budget.max(500)),
        ReMethod::RandomizedConeSearch => (0..budget.max(1))
            .map(|_| {
                let mut v: Array1<S> = Array1::from_iter((0..s).map(|_| S::std_normal(&mut rng)));
                let n = v.dot(&v).sqrt();
                if n > S::zero() {
                    v = v / n;
                }
                v
            })
            .collect(),
    };

    let l_full = symmetric_max_eigenvalue(f.view()).max(S::from_f(1e-12));
    for slice in slices {
        samples += 1;
        let val = polish_slice(f, &s_idx, slice, l_full)?;
        if val < best {
            best = val;
        }
    }

    let kappa_min = best.max(S::zero()).sqrt();
    Ok(ReConstants {
        kappa_min,
        kappa_max,
        support: support.clone(),
        method,
        certificate_samples: samples,
    })
}

/// Minimizes delta^T F delta with ||delta_S||_2 = 1 starting from the given
/// on-support slice: alternating convex minimization over the off-support
/// block (projected gradient on the L1 ball, convex) and local sphere steps
/// on the on-support block.
fn polish_slice<S: Scalar>(
    f: &Array2<S>,
    s_idx: &[usize],
    mut u: Array1<S>,
    l_full: S,
) -> Result<S> {
    let p = f.nrows();
    let in_s = {
        let mut m = vec![false; p];
        for &i in s_idx {
            m[i] = true;
        }
        m
    };
    let c_idx: Vec<usize> = (0..p).filter(|i| !in_s[*i]).collect();

    let mut delta: Array1<S> = Array1::zeros(p);
    let set_support = |delta: &mut Array1<S>, u: &Array1<S>| {
        for (a, &i) in s_idx.iter().enumerate() {
            delta[i] = u[a];
        }
    };
    set_support(&mut delta, &u);

    let step = S::one() / l_full;

    let quad = |delta: &Array1<S>| -> S { delta.dot(&f.dot(delta)) };

    let mut value = quad(&delta);
    for _outer in 0..60 {
        // convex inner solve over the off-support block
        if !c_idx.is_empty() {
            let radius = S::from_f(3.0) * s_idx.iter().map(|&i| delta[i].abs()).sum::<S>();
            for _ in 0..200 {
                let grad_full = f.dot(&delta) * S::from_f(2.0);
                let mut z: Array1<S> =
                    Array1::from_iter(c_idx.iter().map(|&i| delta[i] - step * grad_full[i]));
                z = project_l1_ball(z.view(), radius);
                let mut moved = S::zero();
                for (a, &i) in c_idx.iter().enumerate() {
                    moved = moved + (delta[i] - z[a]).abs();
                    delta[i] = z[a];
                }
                if moved < S::from_f(1e-12) {
                    break;
                }
            }
        }

        // local sphere step on the on-support block
        let grad_full = f.dot(&delta) * S::from_f(2.0);
        let mut improved = false;
        let mut eta = S::from_f(0.5) / l_full;
        for _ in 0..30 {
            let mut u_try: Array1<S> =
                Array1::from_iter(s_idx.iter().enumerate().map(|(a, &i)| u[a] - eta * grad_full[i]));
            let n = u_try.dot(&u_try).sqrt();
            if n > S::from_f(1e-12) {
                u_try = u_try / n;
                let mut cand = delta.clone();
                set_support(&mut cand, &u_try);
                // keep the off-support block inside the (possibly changed)
                // cone budget
                let radius = S::from_f(3.0) * s_idx.iter().map(|&i| cand[i].abs()).sum::<S>();
                let z: Array1<S> = Array1::from_iter(c_idx.iter().map(|&i| cand[i]));
                let z = project_l1_ball(z.view(), radius);
                for (a, &i) in c_idx.iter().enumerate() {
                    cand[i] = z[a];
                }
                let v = quad(&cand);
                if v < value - S::from_f(1e-14) {
                    u = u_try;
                    delta = cand;
                    value = v;
                    improved = true;
                    break;
                }
            }
            eta = eta * S::from_f(0.5);
        }
        if !improved {
            break;
        }
    }
    Ok(value)
}

/// Deterministic covering of the unit sphere in dimension s with roughly
/// `count` points (exact antipodal pair for s = 1, uniform angle grid for
/// s = 2, Fibonacci spiral for s = 3, low-discrepancy normal grid beyond).
fn sphere_grid<S: Scalar>(s: usize, count: usize) -> Vec<Array1<S>> {
    match s {
        1 => vec![Array1::from(vec![S::one()]), Array1::from(vec![-S::one()])],
        2 => (0..count)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                Array1::from(vec![S::from_f(t.cos()), S::from_f(t.sin())])
            })
            .collect(),
        3 => {
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = 2.0 * std::f64::consts::PI * i as f64 / golden;
                    Array1::from(vec![
                        S::from_f(r * phi.cos()),
                        S::from_f(r * phi.sin()),
                        S::from_f(z),
                    ])
                })
                .collect()
        }
        _ => {
            // seeded dense normal draws, deterministic
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
            (0..count.max(2000))
                .map(|_| {
                    let mut v: Array1<S> =
                        Array1::from_iter((0..s).map(|_| S::std_normal(&mut rng)));
                    let n = v.dot(&v).sqrt();
                    if n > S::zero() {
                        v = v / n;
                    }
                    v
                })
                .collect()
        }
    }
}

/// The thresholded support {i : |theta_i| > tau} (strict inequality).
pub fn threshold_support<S: Scalar>(theta: &ParameterVector<S>, tau: S) -> BTreeSet<usize> {
    theta
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > tau)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone)]
pub struct TwoStageConfig<S: Scalar> {
    pub lambda: S,
    /// Threshold; the theoretical default is 18 lambda / kappa_min^2.
    pub tau: S,
    pub solver: SolverConfig<S>,
}

impl<S: Scalar> TwoStageConfig<S> {
    pub fn new(lambda: S, tau: S) -> Result<Self> {
        if tau < S::zero() {
            return Err(Error::invalid("tau must be nonnegative"));
        }
        let mut solver = SolverConfig::new(lambda);
        solver.lambda = lambda;
        Ok(TwoStageConfig { lambda, tau, solver })
    }

    /// The default threshold rule tau = 18 lambda / kappa_min^2.
    pub fn with_default_tau(lambda: S, kappa_min: S) -> Result<Self> {
        if kappa_min <= S::zero() {
            return Err(Error::invalid("kappa_min must be positive for the default tau"));
        }
        Self::new(lambda, S::from_f(18.0) * lambda / (kappa_min * kappa_min))
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageResult<S: Scalar> {
    pub stage1: FitResult<S>,
    pub stage2: FitResult<S>,
    pub support: BTreeSet<usize>,
}

/// Stage 1: L1 fit at lambda. Stage 2: refit at the same lambda restricted
/// to the coordinates whose stage-1 magnitude exceeds tau.
pub fn two_stage_fit<S: Scalar>(
    family: &FamilyModel<S>,
    data: &Dataset<S>,
    cfg: &TwoStageConfig<S>,
) -> Result<TwoStageResult<S>> {
    if cfg.tau < S::zero() {
        return Err(Error::invalid("tau must be nonnegative"));
    }
    let mut solver = cfg.solver;
    solver.lambda = cfg.lambda;
    let stage1 = fit_l1(family, data, &solver)?;
    let support = threshold_support(&stage1.estimate, cfg.tau);
    let stage2 = fit_restricted(family, data, cfg.lambda, &support, &solver)?;
    Ok(TwoStageResult {
        stage1,
        stage2,
        support,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportMetrics<S: Scalar> {
    pub size: usize,
    pub precision: S,
    pub recall: S,
    pub l1_error: S,
    pub l2_error: S,
}

/// Support precision/recall of the estimate against the truth, plus L1/L2
/// parameter errors. Empty sets count as perfectly matched.
pub fn support_metrics<S: Scalar>(
    theta_hat: &ParameterVector<S>,
    theta_star: &ParameterVector<S>,
) -> Result<SupportMetrics<S>> {
    if theta_hat.len() != theta_star.len() {
        return Err(Error::DimensionMismatch {
            expected: theta_star.len(),
            got: theta_hat.len(),
        });
    }
    let pred = theta_hat.support();
    let truth = theta_star.support();
    let tp = pred.intersection(&truth).count();
    let precision = if pred.is_empty() {
        S::one()
    } else {
        S::from_f(tp as f64 / pred.len() as f64)
    };
    let recall = if truth.is_empty() {
        S::one()
    } else {
        S::from_f(tp as f64 / truth.len() as f64)
    };
    let diff = theta_hat.values().to_owned() - theta_star.values();
    let l1_error = diff.iter().map(|v| v.abs()).sum();
    let l2_error = diff.dot(&diff).sqrt();
    Ok(SupportMetrics {
        size: pred.len(),
        precision,
        recall,
        l1_error,
        l2_error,
    })
}
