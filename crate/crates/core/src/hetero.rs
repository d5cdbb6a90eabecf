//! Variance-difference (VD) and variance-difference Breusch–Pagan (VDBP)
//! tests.
//!
//! For feature `l` and break `a`, with `d_i = 1{x_il ≤ a} − 1{x̃_il ≤ a}`:
//!
//! ```text
//! T_l(a)  = n^{-1/2} Σ d_i ε̂_i²
//! σ̂_l²(a) = n^{-1}   Σ (d_i ε̂_i² − μ̂)²,   μ̂ = n^{-1} Σ d_i ε̂_i²
//! G_l(a)  = n₂^{-1}  Σ d_i η̂_i²            (screening half)
//! ```
//!
//! The studentized statistic `T/σ̂` is compared with the two-sided normal
//! threshold. Under the null a feature and its knockoff are exchangeable with
//! the scaled error, so `T` is centered at zero.

use serde::Serialize;

use crate::data::{build_break_grid, split_sample, BreakGrid, Dataset, SampleSplit};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, residuals, ForestConfig};
use crate::normal::{p_value, two_sided_threshold};
use crate::rng::{derive_seed, STREAM_HOLDOUT};

/// Fraction of the inference sample used for the statistic when the break is selected.
pub const VD_GAMMA: f64 = 2.0 / 3.0;
/// Fraction of the inference sample used for the statistic in VDBP.
pub const VDBP_GAMMA: f64 = 1.0 / 3.0;
/// Number of evenly spaced break candidates between the screening quartiles.
pub const DEFAULT_BREAK_CANDIDATES: usize = 100;
/// Break used for 0/1 features.
pub const BINARY_BREAK: f64 = 0.5;

fn check_lengths(x: &[f64], xk: &[f64], resid: &[f64]) -> Result<()> {
    if x.len() != xk.len() {
        return Err(Error::LengthMismatch(x.len(), xk.len()));
    }
    if x.len() != resid.len() {
        return Err(Error::LengthMismatch(x.len(), resid.len()));
    }
    if x.is_empty() {
        return Err(Error::LengthMismatch(0, 0));
    }
    Ok(())
}

#[inline]
fn weighted(x: f64, xk: f64, r: f64, a: f64) -> f64 {
    let d = (x <= a) as i32 - (xk <= a) as i32;
    match d {
        0 => 0.0,
        1 => r * r,
        _ => -(r * r),
    }
}

fn sum_weighted(x: &[f64], xk: &[f64], resid: &[f64], a: f64) -> f64 {
    x.iter()
        .zip(xk)
        .zip(resid)
        .map(|((&u, &v), &r)| weighted(u, v, r, a))
        .sum()
}

pub fn t_statistic(xcol: &[f64], xkcol: &[f64], resid: &[f64], a: f64) -> Result<f64> {
    check_lengths(xcol, xkcol, resid)?;
    Ok(sum_weighted(xcol, xkcol, resid, a) / (xcol.len() as f64).sqrt())
}

pub fn sigma_hat(xcol: &[f64], xkcol: &[f64], resid: &[f64], a: f64) -> Result<f64> {
    check_lengths(xcol, xkcol, resid)?;
    let n = xcol.len() as f64;
    let mu = sum_weighted(xcol, xkcol, resid, a) / n;
    let ss: f64 = xcol
        .iter()
        .zip(xkcol)
        .zip(resid)
        .map(|((&u, &v), &r)| (weighted(u, v, r, a) - mu).powi(2))
        .sum();
    Ok((ss / n).sqrt())
}

pub fn g_statistic(ucol: &[f64], ukcol: &[f64], resid_screen: &[f64], a: f64) -> Result<f64> {
    check_lengths(ucol, ukcol, resid_screen)?;
    Ok(sum_weighted(ucol, ukcol, resid_screen, a) / ucol.len() as f64)
}

/// The candidate maximizing `|G_l(κ)|`; ties go to the smallest candidate.
pub fn select_break(l: usize, screen: &Dataset, resid_screen: &[f64], grid: &BreakGrid) -> Result<f64> {
    let xk = screen.knockoffs()?;
    let candidates = grid.candidates_per_feature.get(l).ok_or(Error::EmptyGrid(l))?;
    let (u, uk) = (crate::data::column(&screen.x, l), crate::data::column(xk, l));
    let mut best: Option<(f64, f64)> = None;
    for &kappa in candidates {
        let g = g_statistic(u, uk, resid_screen, kappa)?.abs();
        if best.is_none_or(|(b, _)| g > b) {
            best = Some((g, kappa));
        }
    }
    best.map(|(_, k)| k).ok_or(Error::EmptyGrid(l))
}

/// The feature maximizing `|G_l(a_l)|`; ties go to the lowest index.
pub fn select_feature(screen: &Dataset, resid_screen: &[f64], breaks: &[f64]) -> Result<usize> {
    let xk = screen.knockoffs()?;
    if breaks.len() != screen.p() {
        return Err(Error::LengthMismatch(screen.p(), breaks.len()));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (l, &a) in breaks.iter().enumerate() {
        let g = g_statistic(crate::data::column(&screen.x, l), crate::data::column(xk, l), resid_screen, a)?
            .abs();
        if g > best.0 {
            best = (g, l);
        }
    }
    Ok(best.1)
}

/// Benjamini–Hochberg step-up at level `q`. Returns the rejected indices in
/// ascending order.
pub fn bh_adjust(p_values: &[f64], q: f64) -> Result<Vec<usize>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::BadLevel(q));
    }
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidConfig(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let cutoff = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * q / m as f64)
        .unwrap_or(0);
    let mut rejected = order[..cutoff].to_vec();
    rejected.sort_unstable();
    Ok(rejected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "break")]
pub enum BreakMode {
    /// The same break for every feature; VD then uses the whole sample.
    Fixed(f64),
    /// Breaks chosen on a screening half from a quartile grid.
    Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Fit the forest on the inference sample itself.
    Full,
    /// Hold out this fraction of rows for fitting only; the rest is the inference sample.
    Holdout { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub forest: ForestConfig,
    pub centering: Centering,
    pub alphas: Vec<f64>,
    /// Seeds sample splitting.
    pub seed: u64,
    pub break_candidates: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            forest: ForestConfig::default(),
            centering: Centering::Full,
            alphas: vec![0.1, 0.05, 0.025],
            seed: 0,
            break_candidates: DEFAULT_BREAK_CANDIDATES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaDecision {
    pub alpha: f64,
    pub threshold: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub test: &'static str,
    pub mode: &'static str,
    /// Studentized statistic `T / σ̂`.
    pub statistic: f64,
    pub p_value: f64,
    pub t_value: f64,
    pub sigma_hat: f64,
    pub break_used: f64,
    /// Zero-based index of the tested (VD) or selected (VDBP) feature.
    pub feature: usize,
    pub feature_name: String,
    pub alpha_decisions: Vec<AlphaDecision>,
    pub n_stat: usize,
    pub n_screen: usize,
}

impl TestReport {
    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        self.alpha_decisions.iter().find(|d| d.alpha == alpha).map(|d| d.reject)
    }
}

pub fn decisions(statistic: f64, alphas: &[f64]) -> Vec<AlphaDecision> {
    alphas
        .iter()
        .map(|&alpha| {
            let threshold = two_sided_threshold(alpha);
            AlphaDecision { alpha, threshold, reject: statistic.abs() > threshold }
        })
        .collect()
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    match alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        Some(a) => Err(Error::InvalidConfig(format!("alpha {a} must be in (0, 1)"))),
        None => Ok(()),
    }
}

fn check_feature(j: usize, p: usize) -> Result<()> {
    if j >= p {
        return Err(Error::FeatureOutOfRange { index: j, p });
    }
    Ok(())
}

struct Studentized {
    t: f64,
    sigma: f64,
    stat: f64,
}

fn studentize(stat_sample: &Dataset, resid: &[f64], j: usize, a: f64) -> Result<Studentized> {
    let xk = stat_sample.knockoffs()?;
    let (x, xk) = (crate::data::column(&stat_sample.x, j), crate::data::column(xk, j));
    let t = t_statistic(x, xk, resid, a)?;
    let sigma = sigma_hat(x, xk, resid, a)?;
    if !(sigma > 0.0) {
        return Err(Error::DegenerateVariance { feature: j, brk: a });
    }
    Ok(Studentized { t, sigma, stat: t / sigma })
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

#[allow(clippy::too_many_arguments)]
fn report(
    test: &'static str,
    mode: BreakMode,
    s: Studentized,
    j: usize,
    a: f64,
    alphas: &[f64],
    n_stat: usize,
    n_screen: usize,
) -> Result<TestReport> {
    Ok(TestReport {
        test,
        mode: match mode {
            BreakMode::Fixed(_) => "fixed",
            BreakMode::Select => "select",
        },
        statistic: s.stat,
        p_value: p_value(s.stat)?,
        t_value: s.t,
        sigma_hat: s.sigma,
        break_used: a,
        feature: j,
        feature_name: format!("x{}", j + 1),
        alpha_decisions: decisions(s.stat, alphas),
        n_stat,
        n_screen,
    })
}

/// VD tests for several features on an already-centered inference sample.
/// All features share one sample split.
pub fn vd_from_residuals(
    ds: &Dataset,
    resid: &[f64],
    features: &[usize],
    mode: BreakMode,
    cfg: &TestConfig,
) -> Result<Vec<Result<TestReport>>> {
    check_alphas(&cfg.alphas)?;
    ds.knockoffs()?;
    if resid.len() != ds.n() {
        return Err(Error::LengthMismatch(ds.n(), resid.len()));
    }
    for &j in features {
        check_feature(j, ds.p())?;
    }
    match mode {
        BreakMode::Fixed(a) => Ok(features
            .iter()
            .map(|&j| {
                let s = studentize(ds, resid, j, a)?;
                report("vd", mode, s, j, a, &cfg.alphas, ds.n(), 0)
            })
            .collect()),
        BreakMode::Select => {
            let SampleSplit { idx_stat, idx_screen } = split_sample(ds.n(), VD_GAMMA, cfg.seed)?;
            let (stat, screen) = (ds.select_rows(&idx_stat), ds.select_rows(&idx_screen));
            let (r_stat, r_screen) = (pick(resid, &idx_stat), pick(resid, &idx_screen));
            let grid = build_break_grid(&screen.x, cfg.break_candidates)?;
            Ok(features
                .iter()
                .map(|&j| {
                    let a = select_break(j, &screen, &r_screen, &grid)?;
                    let s = studentize(&stat, &r_stat, j, a)?;
                    report("vd", mode, s, j, a, &cfg.alphas, stat.n(), screen.n())
                })
                .collect())
        }
    }
}

/// VDBP test on an already-centered inference sample.
pub fn vdbp_from_residuals(ds: &Dataset, resid: &[f64], mode: BreakMode, cfg: &TestConfig) -> Result<TestReport> {
    check_alphas(&cfg.alphas)?;
    ds.knockoffs()?;
    if resid.len() != ds.n() {
        return Err(Error::LengthMismatch(ds.n(), resid.len()));
    }
    let SampleSplit { idx_stat, idx_screen } = split_sample(ds.n(), VDBP_GAMMA, cfg.seed)?;
    let (stat, screen) = (ds.select_rows(&idx_stat), ds.select_rows(&idx_screen));
    let (r_stat, r_screen) = (pick(resid, &idx_stat), pick(resid, &idx_screen));
    let breaks: Vec<f64> = match mode {
        BreakMode::Fixed(a) => vec![a; ds.p()],
        BreakMode::Select => {
            let grid = build_break_grid(&screen.x, cfg.break_candidates)?;
            (0..ds.p())
                .map(|l| select_break(l, &screen, &r_screen, &grid))
                .collect::<Result<_>>()?
        }
    };
    let l = select_feature(&screen, &r_screen, &breaks)?;
    let s = studentize(&stat, &r_stat, l, breaks[l])?;
    report("vdbp", mode, s, l, breaks[l], &cfg.alphas, stat.n(), screen.n())
}

/// Fits the centering forest and returns the inference sample with its
/// residuals.
pub fn center(ds: &Dataset, cfg: &TestConfig) -> Result<(Dataset, Vec<f64>)> {
    match cfg.centering {
        Centering::Full => {
            let forest = fit_forest(&ds.x, &ds.y, &cfg.forest)?;
            let r = residuals(&forest, ds)?;
            Ok((ds.clone(), r))
        }
        Centering::Holdout { fraction } => {
            let split = split_sample(ds.n(), fraction, derive_seed(cfg.seed, &[STREAM_HOLDOUT]))?;
            let train = ds.select_rows(&split.idx_stat);
            let inference = ds.select_rows(&split.idx_screen);
            let forest = fit_forest(&train.x, &train.y, &cfg.forest)?;
            let r = residuals(&forest, &inference)?;
            Ok((inference, r))
        }
    }
}

pub fn vd_test(ds: &Dataset, j: usize, mode: BreakMode, cfg: &TestConfig) -> Result<TestReport> {
    vd_test_features(ds, &[j], mode, cfg)?.remove(0)
}

/// VD tests for several features sharing one forest fit and one split.
pub fn vd_test_features(
    ds: &Dataset,
    features: &[usize],
    mode: BreakMode,
    cfg: &TestConfig,
) -> Result<Vec<Result<TestReport>>> {
    ds.knockoffs()?;
    for &j in features {
        check_feature(j, ds.p())?;
    }
    check_alphas(&cfg.alphas)?;
    let (inference, r) = center(ds, cfg)?;
    vd_from_residuals(&inference, &r, features, mode, cfg)
}

pub fn vdbp_test(ds: &Dataset, mode: BreakMode, cfg: &TestConfig) -> Result<TestReport> {
    ds.knockoffs()?;
    check_alphas(&cfg.alphas)?;
    let (inference, r) = center(ds, cfg)?;
    vdbp_from_residuals(&inference, &r, mode, cfg)
}

/// True when every entry is 0 or 1.
pub fn is_binary(values: &[f64]) -> bool {
    values.iter().all(|&v| v == 0.0 || v == 1.0)
}
