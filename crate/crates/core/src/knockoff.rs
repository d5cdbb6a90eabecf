//! Approximate coordinate-wise Gaussian knockoffs.
//!
//! For each feature `j` the generator
//!
//! 1. keeps the `⌊k·n⌉` features most correlated with `j` (the screening set
//!    `S_j`, which always contains `j`);
//! 2. picks the scalar `s` closest to `Σ_jj` for which the augmented covariance
//!    of `(X_S, X̃_j)`, with `Cov(X̃_j, X_j) = Σ_jj − s`, stays positive
//!    semidefinite;
//! 3. draws `X̃_j` from the Gaussian conditional law of `X̃_j` given `X_S`.
//!
//! Coordinates are fitted and sampled independently, each with its own RNG
//! substream keyed by `(seed, j)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{column, nearest_int};
use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_KNOCKOFF};

/// Relative cutoff below which eigenvalues are treated as zero when forming
/// a pseudoinverse.
pub const PINV_RCOND: f64 = 1e-10;

/// Absolute tolerance of the bisection for the decorrelation scalar.
pub const S_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffGenConfig {
    /// Screening set size as a fraction of n.
    pub screen_fraction: f64,
    /// Smallest eigenvalue allowed for the augmented covariance is `-psd_tolerance`.
    pub psd_tolerance: f64,
    pub seed: u64,
}

impl Default for KnockoffGenConfig {
    fn default() -> Self {
        KnockoffGenConfig { screen_fraction: 0.25, psd_tolerance: 1e-10, seed: 0 }
    }
}

impl KnockoffGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.screen_fraction > 0.0 && self.screen_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "screen fraction {} must be in (0, 1]",
                self.screen_fraction
            )));
        }
        if !(self.psd_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("psd tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Conditional law of one knockoff coordinate given its screening set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateModel {
    pub screen_set: Vec<usize>,
    pub s_hat: f64,
    pub cond_coef: Vec<f64>,
    pub cond_mean_offset: f64,
    pub cond_var: f64,
    /// Smallest eigenvalue of the augmented covariance at `s_hat`.
    pub augmented_min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffModel {
    pub coords: Vec<CoordinateModel>,
    pub psd_tolerance: f64,
}

/// Column means and the unbiased (n − 1) sample covariance.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let mean = DVector::from_fn(p, |j, _| column(x, j).iter().sum::<f64>() / n as f64);
    let mut centered = x.clone();
    for j in 0..p {
        let m = mean[j];
        centered.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    // exact symmetry
    for a in 0..p {
        for b in 0..a {
            let v = cov[(a, b)];
            cov[(b, a)] = v;
        }
    }
    Ok((cov, mean))
}

/// The `size` features most correlated with `j` in absolute value, returned in
/// ascending index order. `j` is always kept; ties go to the lower index.
pub fn screen_features(cov: &DMatrix<f64>, j: usize, size: usize) -> Result<Vec<usize>> {
    let p = cov.nrows();
    if size == 0 || size > p {
        return Err(Error::InvalidConfig(format!("screen size {size} not in 1..={p}")));
    }
    let vj = cov[(j, j)];
    if vj <= 0.0 {
        return Err(Error::ZeroVariance(j));
    }
    let score = |k: usize| -> f64 {
        if k == j {
            return f64::INFINITY;
        }
        let vk = cov[(k, k)];
        if vk <= 0.0 {
            0.0
        } else {
            (cov[(j, k)] / (vj * vk).sqrt()).abs()
        }
    };
    let mut order: Vec<(f64, usize)> = (0..p).map(|k| (score(k), k)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut set: Vec<usize> = order[..size].iter().map(|&(_, k)| k).collect();
    set.sort_unstable();
    Ok(set)
}

/// The augmented covariance of `(X_S, X̃_j)` for a given `s`; `pos` is the
/// position of `j` inside the screening set.
pub fn augmented_covariance(cov_sub: &DMatrix<f64>, pos: usize, s: f64) -> DMatrix<f64> {
    let k = cov_sub.nrows();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    m.view_mut((0, 0), (k, k)).copy_from(cov_sub);
    for r in 0..k {
        let v = cov_sub[(r, pos)] - if r == pos { s } else { 0.0 };
        m[(r, k)] = v;
        m[(k, r)] = v;
    }
    m[(k, k)] = cov_sub[(pos, pos)];
    m
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// The feasible `s` closest to `Σ_jj`. Feasible means the augmented covariance
/// has smallest eigenvalue at least `-psd_tolerance`. The feasible set is an
/// interval containing 0, so when `Σ_jj` itself is infeasible the upper end of
/// the interval is found by bisection on `[0, Σ_jj]`.
pub fn solve_decorrelation_scalar(cov_sub: &DMatrix<f64>, pos: usize, psd_tolerance: f64) -> f64 {
    let target = cov_sub[(pos, pos)];
    if target <= 0.0 {
        return 0.0;
    }
    let feasible = |s: f64| min_eigenvalue(&augmented_covariance(cov_sub, pos, s)) >= -psd_tolerance;
    if feasible(target) {
        return target;
    }
    if !feasible(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, target);
    while hi - lo > S_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix. Eigenvalues below
/// `PINV_RCOND` times the largest are dropped.
pub fn psd_pseudoinverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cutoff = PINV_RCOND * top;
    let inv = eig
        .eigenvalues
        .map(|v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 });
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&inv);
    scaled * eig.eigenvectors.transpose()
}

/// Parameters of `X̃_j | X_S`: regression coefficients, intercept and
/// residual variance (clamped at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub coef: Vec<f64>,
    pub offset: f64,
    pub var: f64,
}

pub fn fit_conditional_gaussian(
    cov: &DMatrix<f64>,
    means: &DVector<f64>,
    j: usize,
    screen_set: &[usize],
    s_hat: f64,
) -> ConditionalGaussian {
    let a = cov.select_rows(screen_set).select_columns(screen_set);
    let v = DVector::from_iterator(
        screen_set.len(),
        screen_set.iter().map(|&k| cov[(k, j)] - if k == j { s_hat } else { 0.0 }),
    );
    let coef = psd_pseudoinverse(&a) * &v;
    let offset = means[j] - screen_set.iter().zip(coef.iter()).map(|(&k, c)| c * means[k]).sum::<f64>();
    let var = (cov[(j, j)] - v.dot(&coef)).max(0.0);
    ConditionalGaussian { coef: coef.iter().copied().collect(), offset, var }
}

/// Fits the conditional law of every knockoff coordinate.
pub fn fit_knockoff_model(x: &DMatrix<f64>, cfg: &KnockoffGenConfig) -> Result<KnockoffModel> {
    cfg.validate()?;
    let (n, p) = x.shape();
    let (cov, means) = sample_covariance(x)?;
    let size = p.min(nearest_int(cfg.screen_fraction * n as f64)).max(1);
    let coords = (0..p)
        .into_par_iter()
        .map(|j| {
            let screen_set = screen_features(&cov, j, size)?;
            let pos = screen_set.binary_search(&j).expect("screening set contains j");
            let sub = cov.select_rows(&screen_set).select_columns(&screen_set);
            let s_hat = solve_decorrelation_scalar(&sub, pos, cfg.psd_tolerance);
            let lambda = min_eigenvalue(&augmented_covariance(&sub, pos, s_hat));
            let cg = fit_conditional_gaussian(&cov, &means, j, &screen_set, s_hat);
            Ok(CoordinateModel {
                screen_set,
                s_hat,
                cond_coef: cg.coef,
                cond_mean_offset: cg.offset,
                cond_var: cg.var,
                augmented_min_eigenvalue: lambda,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KnockoffModel { coords, psd_tolerance: cfg.psd_tolerance })
}

impl KnockoffModel {
    /// Draws one knockoff matrix for `x`; column `j` uses substream `(seed, j)`.
    pub fn sample(&self, x: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
        let n = x.nrows();
        let cols: Vec<Vec<f64>> = self
            .coords
            .par_iter()
            .enumerate()
            .map(|(j, c)| {
                let mut rng = substream(seed, &[STREAM_KNOCKOFF, j as u64]);
                let sd = c.cond_var.sqrt();
                (0..n)
                    .map(|i| {
                        let mean = c.cond_mean_offset
                            + c.screen_set
                                .iter()
                                .zip(&c.cond_coef)
                                .map(|(&k, b)| b * x[(i, k)])
                                .sum::<f64>();
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mean + sd * z
                    })
                    .collect()
            })
            .collect();
        DMatrix::from_fn(n, self.coords.len(), |i, j| cols[j][i])
    }
}

pub fn generate_knockoffs(
    x: &DMatrix<f64>,
    cfg: &KnockoffGenConfig,
) -> Result<(DMatrix<f64>, KnockoffModel)> {
    let model = fit_knockoff_model(x, cfg)?;
    let xk = model.sample(x, cfg.seed);
    Ok((xk, model))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnockoffDiagnostics {
    /// Sample correlation of each feature with its knockoff.
    pub corr: Vec<f64>,
    /// `cross_cov[(l, k)]` is the sample covariance of knockoff `l` with feature `k`.
    #[serde(skip)]
    pub cross_cov: DMatrix<f64>,
    /// Mean over `l ≠ k` of `(Cov(X̃_l, X_k) − Cov(X_l, X_k))²`.
    pub offdiag_mean_sq_dev: f64,
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / (n - 1.0)
}

pub fn knockoff_diagnostics(x: &DMatrix<f64>, x_knock: &DMatrix<f64>) -> Result<KnockoffDiagnostics> {
    if x.shape() != x_knock.shape() {
        return Err(Error::ShapeMismatch(format!(
            "x is {:?} but knockoffs are {:?}",
            x.shape(),
            x_knock.shape()
        )));
    }
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let cross_cov = DMatrix::from_fn(p, p, |l, k| sample_cov(column(x_knock, l), column(x, k)));
    let corr = (0..p)
        .map(|j| {
            let vx = sample_cov(column(x, j), column(x, j));
            let vk = sample_cov(column(x_knock, j), column(x_knock, j));
            if vx > 0.0 && vk > 0.0 {
                cross_cov[(j, j)] / (vx * vk).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let offdiag_mean_sq_dev = if p > 1 {
        let mut acc = 0.0;
        for l in 0..p {
            for k in 0..p {
                if l != k {
                    let d = cross_cov[(l, k)] - sample_cov(column(x, l), column(x, k));
                    acc += d * d;
                }
            }
        }
        acc / (p * (p - 1)) as f64
    } else {
        0.0
    };
    Ok(KnockoffDiagnostics { corr, cross_cov, offdiag_mean_sq_dev })
}
