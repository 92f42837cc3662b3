//! Exponential families in natural form: P(t|theta) = h_t exp{<theta, t> - log Z(theta)}.
//!
//! Five concrete families are provided. `Bernoulli` and `UnitVarGaussian` are
//! product families (independent coordinates, p >= 1). `GaussianPrecision`
//! parameterizes a mean-zero multivariate normal by its precision matrix in
//! packed symmetric storage; the sufficient statistic is -1/2 YY^T so that the
//! packed Euclidean inner product reproduces the matrix trace pairing.
//! The two GLM families use t_{y,X} = yX with a configurable covariate source.
//!
//! Constant offsets (base measure, (p/2) log 2pi, ...) are dropped throughout:
//! only theta-differences enter regret, objectives, and risks.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    self, cholesky, invert_pd, is_positive_definite, log_det_pd, packed_index, packed_len,
    solve_lower_transpose, unpack_symmetric,
};
use crate::num::{sigmoid, softplus, Scalar};

/// How GLM covariates are generated and how expectations over X are taken.
#[derive(Debug, Clone)]
pub struct CovariateDesign<S: Scalar> {
    /// The design points used for averaging (exact for a fixed design,
    /// a recorded Monte Carlo sample for the truncated-Gaussian source).
    pub rows: Array2<S>,
    /// True when `rows` is the exhaustive finite design.
    pub exact: bool,
    /// Number of Monte Carlo draws behind `rows` when not exact.
    pub mc_samples: usize,
    /// Norm bound for fresh draws (truncated-Gaussian source only).
    pub norm_bound: Option<S>,
}

impl<S: Scalar> CovariateDesign<S> {
    pub fn fixed(rows: Array2<S>) -> Self {
        let mc_samples = rows.nrows();
        CovariateDesign {
            rows,
            exact: true,
            mc_samples,
            norm_bound: None,
        }
    }

    /// Isotropic Gaussian covariates truncated to `norm_bound`, with
    /// expectations over X approximated by `mc_samples` recorded draws.
    pub fn truncated_gaussian(dim: usize, norm_bound: S, mc_samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Array2::zeros((mc_samples, dim));
        for mut row in rows.axis_iter_mut(Axis(0)) {
            let x = draw_truncated_gaussian::<S>(dim, norm_bound, &mut rng);
            row.assign(&x);
        }
        CovariateDesign {
            rows,
            exact: false,
            mc_samples,
            norm_bound: Some(norm_bound),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Largest L2 row norm; the a.s. bound on ||X|| for a fixed design.
    pub fn max_row_norm(&self) -> S {
        self.rows
            .axis_iter(Axis(0))
            .map(|r| r.dot(&r).sqrt())
            .fold(S::zero(), |a, b| if b > a { b } else { a })
    }

    fn sample_x<R: Rng>(&self, rng: &mut R) -> Array1<S> {
        if self.exact {
            let j = rng.gen_range(0..self.rows.nrows());
            self.rows.row(j).to_owned()
        } else {
            let b = self.norm_bound.expect("truncated source has a norm bound");
            draw_truncated_gaussian::<S>(self.dim(), b, rng)
        }
    }
}

fn draw_truncated_gaussian<S: Scalar>(dim: usize, bound: S, rng: &mut impl Rng) -> Array1<S> {
    loop {
        let x: Array1<S> = Array1::from_iter((0..dim).map(|_| S::std_normal(rng)));
        if x.dot(&x).sqrt() <= bound {
            return x;
        }
    }
}

#[derive(Debug, Clone)]
pub enum FamilyKind<S: Scalar> {
    /// Product of `dim` independent Bernoulli coordinates, t in {0,1}^dim.
    Bernoulli { dim: usize },
    /// Product of `dim` independent unit-variance Gaussians, mean = theta.
    UnitVarGaussian { dim: usize },
    /// Mean-zero Gaussian with precision matrix Theta (side x side, packed).
    GaussianPrecision { side: usize },
    /// Logistic regression: y | X ~ Bernoulli(sigmoid(<theta, X>)), t = yX.
    LogisticGlm { design: CovariateDesign<S> },
    /// Least squares regression: y | X ~ N(<theta, X>, 1), t = yX.
    LinearGlm { design: CovariateDesign<S> },
}

#[derive(Debug, Clone)]
pub struct FamilyModel<S: Scalar> {
    kind: FamilyKind<S>,
    dimension: usize,
    stat_bound: Option<S>,
}

/// A natural parameter with an optional support annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<S: Scalar> {
    values: Array1<S>,
    support: Option<BTreeSet<usize>>,
}

impl<S: Scalar> ParameterVector<S> {
    pub fn new(values: Array1<S>) -> Self {
        ParameterVector {
            values,
            support: None,
        }
    }

    /// Annotates the exact support; fails if the set does not match the
    /// nonzero pattern.
    pub fn with_support(values: Array1<S>, support: BTreeSet<usize>) -> Result<Self> {
        let actual: BTreeSet<usize> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != S::zero())
            .map(|(i, _)| i)
            .collect();
        if actual != support {
            return Err(Error::invalid(
                "support annotation does not match the nonzero pattern",
            ));
        }
        Ok(ParameterVector {
            values,
            support: Some(support),
        })
    }

    pub fn values(&self) -> ArrayView1<'_, S> {
        self.values.view()
    }

    pub fn into_values(self) -> Array1<S> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The exact support {i : theta_i != 0}, annotated or computed.
    pub fn support(&self) -> BTreeSet<usize> {
        match &self.support {
            Some(s) => s.clone(),
            None => self
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != S::zero())
                .map(|(i, _)| i)
                .collect(),
        }
    }

    pub fn sparsity(&self) -> usize {
        self.support().len()
    }
}

impl<S: Scalar> From<Array1<S>> for ParameterVector<S> {
    fn from(values: Array1<S>) -> Self {
        ParameterVector::new(values)
    }
}

/// An n x p matrix of sufficient statistics, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    stats: Array2<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(stats: Array2<S>) -> Result<Self> {
        if stats.nrows() == 0 {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        Ok(Dataset { stats })
    }

    pub fn n(&self) -> usize {
        self.stats.nrows()
    }

    pub fn dim(&self) -> usize {
        self.stats.ncols()
    }

    pub fn stats(&self) -> &Array2<S> {
        &self.stats
    }

    /// Empirical mean of the sufficient statistic.
    pub fn empirical_mean(&self) -> Array1<S> {
        let n = S::from_f(self.n() as f64);
        self.stats.sum_axis(Axis(0)) / n
    }
}

/// Symmetric PSD Fisher information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix<S: Scalar> {
    entries: Array2<S>,
}

impl<S: Scalar> FisherMatrix<S> {
    pub fn new(entries: Array2<S>) -> Result<Self> {
        let p = entries.nrows();
        if entries.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: entries.ncols(),
            });
        }
        let tol = S::from_f(1e-12);
        for i in 0..p {
            for j in i + 1..p {
                if (entries[[i, j]] - entries[[j, i]]).abs() > tol {
                    return Err(Error::invalid("Fisher matrix is not symmetric"));
                }
            }
        }
        let trace: S = (0..p).map(|i| entries[[i, i]]).sum();
        let min_eig = linalg::symmetric_eigenvalues(entries.view())[0];
        if min_eig < -S::from_f(1e-9) * trace.abs() {
            return Err(Error::invalid("Fisher matrix is not positive semidefinite"));
        }
        Ok(FisherMatrix { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<S> {
        &self.entries
    }

    /// Quadratic form delta^T F delta.
    pub fn quadratic_form(&self, delta: ArrayView1<S>) -> Result<S> {
        if delta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: delta.len(),
            });
        }
        Ok(delta.dot(&self.entries.dot(&delta)))
    }
}

/// Fisher risk (theta - theta*)^T F (theta - theta*).
pub fn fisher_risk<S: Scalar>(
    fisher: &FisherMatrix<S>,
    theta: &ParameterVector<S>,
    theta_star: &ParameterVector<S>,
) -> Result<S> {
    if theta.len() != theta_star.len() {
        return Err(Error::DimensionMismatch {
            expected: theta_star.len(),
            got: theta.len(),
        });
    }
    let delta = &theta.values - &theta_star.values;
    fisher.quadratic_form(delta.view())
}

impl<S: Scalar> FamilyModel<S> {
    pub fn bernoulli(dim: usize) -> Self {
        assert!(dim >= 1);
        FamilyModel {
            kind: FamilyKind::Bernoulli { dim },
            dimension: dim,
            stat_bound: None,
        }
    }

    pub fn unit_var_gaussian(dim: usize) -> Self {
        assert!(dim >= 1);
        FamilyModel {
            kind: FamilyKind::UnitVarGaussian { dim },
            dimension: dim,
            stat_bound: None,
        }
    }

    /// Precision-matrix Gaussian over a `side`-dimensional observation;
    /// the natural parameter has packed dimension side*(side+1)/2.
    pub fn gaussian_precision(side: usize) -> Self {
        assert!(side >= 1);
        FamilyModel {
            kind: FamilyKind::GaussianPrecision { side },
            dimension: packed_len(side),
            stat_bound: None,
        }
    }

    pub fn logistic_glm(design: CovariateDesign<S>) -> Self {
        let dimension = design.dim();
        // |y| <= 1, so ||t|| <= ||X||
        let stat_bound = Some(if design.exact {
            design.max_row_norm()
        } else {
            design.norm_bound.unwrap()
        });
        FamilyModel {
            kind: FamilyKind::LogisticGlm { design },
            dimension,
            stat_bound,
        }
    }

    pub fn linear_glm(design: CovariateDesign<S>) -> Self {
        let dimension = design.dim();
        FamilyModel {
            kind: FamilyKind::LinearGlm { design },
            dimension,
            stat_bound: None,
        }
    }

    pub fn kind(&self) -> &FamilyKind<S> {
        &self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// a.s. L2 bound on the sufficient statistic, when one exists.
    pub fn stat_bound(&self) -> Option<S> {
        self.stat_bound
    }

    /// Matrix side length for the precision family.
    pub fn precision_side(&self) -> Option<usize> {
        match self.kind {
            FamilyKind::GaussianPrecision { side } => Some(side),
            _ => None,
        }
    }

    pub fn glm_design(&self) -> Option<&CovariateDesign<S>> {
        match &self.kind {
            FamilyKind::LogisticGlm { design } | FamilyKind::LinearGlm { design } => Some(design),
            _ => None,
        }
    }

    fn check_dim(&self, theta: &ParameterVector<S>) -> Result<()> {
        if theta.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Membership in the natural parameter space.
    pub fn domain_contains(&self, theta: &ParameterVector<S>) -> bool {
        if theta.len() != self.dimension {
            return false;
        }
        match &self.kind {
            FamilyKind::GaussianPrecision { side } => {
                let m = unpack_symmetric(theta.values(), *side);
                is_positive_definite(m.view())
            }
            _ => theta.values().iter().all(|v| v.is_finite()),
        }
    }

    fn require_domain(&self, theta: &ParameterVector<S>) -> Result<()> {
        self.check_dim(theta)?;
        if !self.domain_contains(theta) {
            return Err(Error::domain(
                "parameter outside the natural parameter space",
            ));
        }
        Ok(())
    }

    /// log Z(theta), exact closed form, constant offsets dropped.
    pub fn log_partition(&self, theta: &ParameterVector<S>) -> Result<S> {
        self.require_domain(theta)?;
        let v = theta.values();
        Ok(match &self.kind {
            FamilyKind::Bernoulli { .. } => v.iter().map(|&t| softplus(t)).sum(),
            FamilyKind::UnitVarGaussian { .. } => v.dot(&v) * S::from_f(0.5),
            FamilyKind::GaussianPrecision { side } => {
                let m = unpack_symmetric(v, *side);
                -S::from_f(0.5) * log_det_pd(m.view())?
            }
            FamilyKind::LogisticGlm { design } => {
                let nu = design.rows.dot(&v);
                nu.iter().map(|&x| softplus(x)).sum::<S>() / S::from_f(nu.len() as f64)
            }
            FamilyKind::LinearGlm { design } => {
                let nu = design.rows.dot(&v);
                nu.iter().map(|&x| x * x).sum::<S>() * S::from_f(0.5)
                    / S::from_f(nu.len() as f64)
            }
        })
    }

    /// E[t] = grad log Z(theta).
    pub fn mean_sufficient_stat(&self, theta: &ParameterVector<S>) -> Result<Array1<S>> {
        self.require_domain(theta)?;
        let v = theta.values();
        Ok(match &self.kind {
            FamilyKind::Bernoulli { .. } => v.mapv(sigmoid),
            FamilyKind::UnitVarGaussian { .. } => v.to_owned(),
            FamilyKind::GaussianPrecision { side } => {
                let m = unpack_symmetric(v, *side);
                let inv = invert_pd(m.view())?;
                precision_mean_packed(&inv, *side)
            }
            FamilyKind::LogisticGlm { design } => {
                let nu = design.rows.dot(&v);
                let mut acc: Array1<S> = Array1::zeros(self.dimension);
                for (j, row) in design.rows.axis_iter(Axis(0)).enumerate() {
                    acc = acc + &(row.to_owned() * sigmoid(nu[j]));
                }
                acc / S::from_f(nu.len() as f64)
            }
            FamilyKind::LinearGlm { design } => {
                let nu = design.rows.dot(&v);
                let mut acc: Array1<S> = Array1::zeros(self.dimension);
                for (j, row) in design.rows.axis_iter(Axis(0)).enumerate() {
                    acc = acc + &(row.to_owned() * nu[j]);
                }
                acc / S::from_f(nu.len() as f64)
            }
        })
    }

    /// Fisher information: Hessian of log Z, equivalently Cov(t) under theta.
    /// For GLMs this is the expected Fisher over the covariate distribution.
    pub fn fisher_information(&self, theta: &ParameterVector<S>) -> Result<FisherMatrix<S>> {
        self.require_domain(theta)?;
        let v = theta.values();
        let p = self.dimension;
        let entries = match &self.kind {
            FamilyKind::Bernoulli { .. } => {
                Array2::from_diag(&v.mapv(|t| {
                    let m = sigmoid(t);
                    m * (S::one() - m)
                }))
            }
            FamilyKind::UnitVarGaussian { .. } => Array2::eye(p),
            FamilyKind::GaussianPrecision { side } => {
                let m = unpack_symmetric(v, *side);
                let inv = invert_pd(m.view())?;
                precision_fisher_packed(&inv, *side)
            }
            FamilyKind::LogisticGlm { design } => {
                let nu = design.rows.dot(&v);
                glm_expected_fisher(design, |j| {
                    let m = sigmoid(nu[j]);
                    m * (S::one() - m)
                })
            }
            FamilyKind::LinearGlm { design } => glm_expected_fisher(design, |_| S::one()),
        };
        FisherMatrix::new(entries)
    }

    /// Empirical negative log-likelihood up to a theta-independent constant:
    /// -<theta, E_hat[t]> + log Z(theta).
    pub fn nll(&self, theta: &ParameterVector<S>, data: &Dataset<S>) -> Result<S> {
        if data.dim() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: data.dim(),
            });
        }
        let lz = self.log_partition(theta)?;
        Ok(lz - theta.values().dot(&data.empirical_mean()))
    }

    /// Gradient of `nll`: -E_hat[t] + grad log Z(theta).
    pub fn grad_nll(&self, theta: &ParameterVector<S>, data: &Dataset<S>) -> Result<Array1<S>> {
        if data.dim() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: data.dim(),
            });
        }
        let mean = self.mean_sufficient_stat(theta)?;
        Ok(mean - data.empirical_mean())
    }

    /// Population regret L(theta) - L(theta*) in the well-specified case:
    /// -<theta - theta*, grad log Z(theta*)> + log Z(theta) - log Z(theta*).
    pub fn population_regret(
        &self,
        theta: &ParameterVector<S>,
        theta_star: &ParameterVector<S>,
    ) -> Result<S> {
        let mean_star = self.mean_sufficient_stat(theta_star)?;
        let lz = self.log_partition(theta)?;
        let lz_star = self.log_partition(theta_star)?;
        let delta = &theta.values - &theta_star.values;
        Ok(lz - lz_star - delta.dot(&mean_star))
    }

    /// n i.i.d. rows of sufficient statistics under P(.|theta).
    /// Deterministic given the seed.
    pub fn sample(&self, theta: &ParameterVector<S>, n: usize, seed: u64) -> Result<Dataset<S>> {
        self.require_domain(theta)?;
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = theta.values();
        let p = self.dimension;
        let mut stats = Array2::zeros((n, p));
        match &self.kind {
            FamilyKind::Bernoulli { .. } => {
                for mut row in stats.axis_iter_mut(Axis(0)) {
                    for (i, &t) in v.iter().enumerate() {
                        let u: S = S::uniform01(&mut rng);
                        row[i] = if u < sigmoid(t) { S::one() } else { S::zero() };
                    }
                }
            }
            FamilyKind::UnitVarGaussian { .. } => {
                for mut row in stats.axis_iter_mut(Axis(0)) {
                    for (i, &t) in v.iter().enumerate() {
                        row[i] = t + S::std_normal(&mut rng);
                    }
                }
            }
            FamilyKind::GaussianPrecision { side } => {
                let m = unpack_symmetric(v, *side);
                let l = cholesky(m.view())?;
                for mut row in stats.axis_iter_mut(Axis(0)) {
                    let z: Array1<S> =
                        Array1::from_iter((0..*side).map(|_| S::std_normal(&mut rng)));
                    // y = L^{-T} z has covariance (L L^T)^{-1} = Theta^{-1}
                    let y = solve_lower_transpose(l.view(), z.view());
                    row.assign(&precision_stat_packed(&y, *side));
                }
            }
            FamilyKind::LogisticGlm { design } => {
                for mut row in stats.axis_iter_mut(Axis(0)) {
                    let x = design.sample_x(&mut rng);
                    let nu = x.dot(&v);
                    let u: S = S::uniform01(&mut rng);
                    let y = if u < sigmoid(nu) { S::one() } else { S::zero() };
                    row.assign(&(x * y));
                }
            }
            FamilyKind::LinearGlm { design } => {
                for mut row in stats.axis_iter_mut(Axis(0)) {
                    let x = design.sample_x(&mut rng);
                    let nu = x.dot(&v);
                    let y = nu + S::std_normal(&mut rng);
                    row.assign(&(x * y));
                }
            }
        }
        Dataset::new(stats)
    }
}

/// Packed sufficient statistic for the precision family: diagonal entries
/// -1/2 y_i^2, off-diagonal entries -y_i y_j (the factor 2 from the symmetric
/// pairing is folded in so plain dot products reproduce -1/2 <Theta, YY^T>).
pub fn precision_stat_packed<S: Scalar>(y: &Array1<S>, side: usize) -> Array1<S> {
    let mut t = Array1::zeros(packed_len(side));
    let half = S::from_f(0.5);
    for i in 0..side {
        for j in i..side {
            t[packed_index(side, i, j)] = if i == j {
                -half * y[i] * y[i]
            } else {
                -y[i] * y[j]
            };
        }
    }
    t
}

/// E[t] for the precision family given Sigma = Theta^{-1}.
fn precision_mean_packed<S: Scalar>(sigma: &Array2<S>, side: usize) -> Array1<S> {
    let mut g = Array1::zeros(packed_len(side));
    let half = S::from_f(0.5);
    for i in 0..side {
        for j in i..side {
            g[packed_index(side, i, j)] = if i == j {
                -half * sigma[[i, i]]
            } else {
                -sigma[[i, j]]
            };
        }
    }
    g
}

/// Hessian of -1/2 log det Theta in packed coordinates:
/// H_kl = 1/2 tr(Sigma E_l Sigma E_k) with E the packed symmetric basis.
fn precision_fisher_packed<S: Scalar>(sigma: &Array2<S>, side: usize) -> Array2<S> {
    let d = packed_len(side);
    let half = S::from_f(0.5);
    let pairs: Vec<(usize, usize)> = (0..side)
        .flat_map(|i| (i..side).map(move |j| (i, j)))
        .collect();
    let mut h = Array2::zeros((d, d));
    for (l, &(a, b)) in pairs.iter().enumerate() {
        // A = Sigma E_l Sigma
        let col_a = sigma.column(a).to_owned();
        let col_b = sigma.column(b).to_owned();
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let aij = if a == b {
                col_a[i] * col_a[j]
            } else {
                col_a[i] * col_b[j] + col_b[i] * col_a[j]
            };
            let inner = if i == j {
                aij
            } else {
                let aji = if a == b {
                    col_a[j] * col_a[i]
                } else {
                    col_a[j] * col_b[i] + col_b[j] * col_a[i]
                };
                aij + aji
            };
            h[[k, l]] = half * inner;
        }
    }
    h
}

fn glm_expected_fisher<S: Scalar>(
    design: &CovariateDesign<S>,
    weight: impl Fn(usize) -> S,
) -> Array2<S> {
    let p = design.dim();
    let mut acc = Array2::zeros((p, p));
    for (j, row) in design.rows.axis_iter(Axis(0)).enumerate() {
        let w = weight(j);
        for a in 0..p {
            let wa = w * row[a];
            for b in a..p {
                acc[[a, b]] = acc[[a, b]] + wa * row[b];
            }
        }
    }
    let n = S::from_f(design.rows.nrows() as f64);
    for a in 0..p {
        for b in a..p {
            let v = acc[[a, b]] / n;
            acc[[a, b]] = v;
            acc[[b, a]] = v;
        }
    }
    acc
}
