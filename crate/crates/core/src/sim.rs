//! Data-generating processes and the Monte Carlo harness for size and power.
//!
//! Features are AR(1)-correlated, `Σ_lk = ρ^{|l−k|}`, either Gaussian or
//! multivariate t with 10 degrees of freedom rescaled to covariance `Σ`.
//! Responses follow one of six regression models; models 27 and 29 are
//! homoskedastic, the others have variance driven by `x10` and/or `x15`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{column, Dataset};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, residuals, ForestConfig, MeanModel};
use crate::hetero::{vd_from_residuals, vdbp_from_residuals, BreakMode, TestConfig};
use crate::knockoff::{generate_knockoffs, KnockoffGenConfig};
use crate::rng::{
    derive_seed, substream, STREAM_FEATURES, STREAM_FOREST, STREAM_KNOCKOFF, STREAM_NOISE,
    STREAM_REPETITION,
};

pub const T_DEGREES_OF_FREEDOM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dgp {
    M23,
    M24,
    M27,
    M28,
    M29,
    M30,
}

impl Dgp {
    pub const ALL: [Dgp; 6] = [Dgp::M23, Dgp::M24, Dgp::M27, Dgp::M28, Dgp::M29, Dgp::M30];

    pub fn name(self) -> &'static str {
        match self {
            Dgp::M23 => "m23",
            Dgp::M24 => "m24",
            Dgp::M27 => "m27",
            Dgp::M28 => "m28",
            Dgp::M29 => "m29",
            Dgp::M30 => "m30",
        }
    }

    /// Highest (one-based) feature the model reads.
    pub fn required_p(self) -> usize {
        match self {
            Dgp::M27 | Dgp::M29 => 5,
            _ => 15,
        }
    }

    /// Zero-based features entering the standard deviation function.
    pub fn variance_features(self) -> &'static [usize] {
        match self {
            Dgp::M23 | Dgp::M24 => &[9, 14],
            Dgp::M28 | Dgp::M30 => &[14],
            Dgp::M27 | Dgp::M29 => &[],
        }
    }

    pub fn mean(self, x: &[f64]) -> f64 {
        match self {
            Dgp::M23 => x[0] + x[1],
            _ => 2.0 * x[0] * x[1] + x[2] + x[3] + x[4] * x[4],
        }
    }

    /// Multiplier of the error term.
    pub fn sd(self, x: &[f64]) -> f64 {
        match self {
            Dgp::M23 | Dgp::M24 => (0.5 + x[9] + x[14]).exp().sqrt(),
            Dgp::M27 | Dgp::M29 => 1.0,
            Dgp::M28 | Dgp::M30 => {
                if x[14] > 0.0 {
                    4.0
                } else {
                    1.0
                }
            }
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dgp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Dgp::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Dgp::ALL.iter().map(|d| d.name()).collect();
                Error::InvalidConfig(format!("unknown model `{s}`; valid: {}", names.join(", ")))
            })
    }
}

pub fn gen_response(x_row: &[f64], dgp: Dgp, noise: f64) -> Result<f64> {
    if x_row.len() < dgp.required_p() {
        return Err(Error::ShortRow { needed: dgp.required_p(), got: x_row.len() });
    }
    Ok(dgp.mean(x_row) + dgp.sd(x_row) * noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDist {
    Gaussian,
    StudentT10,
}

impl FromStr for FeatureDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" => Ok(FeatureDist::Gaussian),
            "t10" | "student_t_df10" | "t" => Ok(FeatureDist::StudentT10),
            _ => Err(Error::InvalidConfig(format!("unknown feature distribution `{s}`; valid: gaussian, t10"))),
        }
    }
}

/// Where knockoffs come from in a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KnockoffSource {
    /// The sample-based coordinate-wise generator.
    Generated { screen_fraction: f64 },
    /// Exact draws from the true law of `X_j | X_{-j}` (Gaussian features only).
    Ideal,
    /// `x̃ = x`; every statistic is zero.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimCentering {
    Forest,
    /// Subtract the true mean function.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TestKind {
    /// Zero-based features.
    Vd { features: Vec<usize> },
    Vdbp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationScenario {
    pub dgp: Dgp,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub feature_dist: FeatureDist,
    pub reps: usize,
    pub alphas: Vec<f64>,
    pub test: TestKind,
    pub mode: BreakMode,
    pub seed: u64,
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub knockoffs: KnockoffSource,
    pub centering: SimCentering,
}

impl SimulationScenario {
    /// Defaults: 100 repetitions, 500 trees, selected breaks.
    pub fn new(dgp: Dgp, test: TestKind, n: usize, p: usize, rho: f64) -> Self {
        SimulationScenario {
            dgp,
            n,
            p,
            rho,
            feature_dist: FeatureDist::Gaussian,
            reps: 100,
            alphas: vec![0.1, 0.05, 0.025],
            test,
            mode: BreakMode::Select,
            seed: 0,
            n_trees: 500,
            mtry: None,
            min_leaf: 5,
            knockoffs: KnockoffSource::Generated { screen_fraction: 0.25 },
            centering: SimCentering::Forest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < self.dgp.required_p() {
            return Err(Error::InvalidConfig(format!(
                "model {} needs p >= {}, got {}",
                self.dgp,
                self.dgp.required_p(),
                self.p
            )));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::BadRho(self.rho));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.n < 10 {
            return Err(Error::TooFewRows { needed: 10, got: self.n });
        }
        if let TestKind::Vd { features } = &self.test {
            if features.is_empty() {
                return Err(Error::InvalidConfig("no features to test".into()));
            }
            if let Some(&j) = features.iter().find(|&&j| j >= self.p) {
                return Err(Error::FeatureOutOfRange { index: j, p: self.p });
            }
        }
        if self.knockoffs == KnockoffSource::Ideal && self.feature_dist != FeatureDist::Gaussian {
            return Err(Error::InvalidConfig("ideal knockoffs need Gaussian features".into()));
        }
        Ok(())
    }

    fn forest_config(&self, rep_seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            mtry: self.mtry,
            min_leaf: self.min_leaf,
            seed: derive_seed(rep_seed, &[STREAM_FOREST]),
            ..Default::default()
        }
    }
}

pub fn ar1_covariance(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::BadRho(rho));
    }
    Ok(DMatrix::from_fn(p, p, |l, k| rho.powi(l.abs_diff(k) as i32)))
}

/// Draws `n` rows with covariance `cov` from the given family.
pub fn sample_features_with(
    cov: &DMatrix<f64>,
    n: usize,
    dist: FeatureDist,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let p = cov.nrows();
    let l = cov.clone().cholesky().ok_or(Error::CholeskyFailure)?.l();
    let mut rng = substream(seed, &[STREAM_FEATURES]);
    let mut z = DMatrix::from_fn(n, p, |_, _| 0.0);
    // row-wise draws so each row's chi-square follows its normals
    let chi = ChiSquared::new(T_DEGREES_OF_FREEDOM).expect("valid df");
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
        if dist == FeatureDist::StudentT10 {
            let w: f64 = chi.sample(&mut rng);
            let scale = ((T_DEGREES_OF_FREEDOM - 2.0) / w).sqrt();
            z.row_mut(i).iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(z * l.transpose())
}

pub fn sample_features(scn: &SimulationScenario, seed: u64) -> Result<DMatrix<f64>> {
    let cov = ar1_covariance(scn.p, scn.rho)?;
    sample_features_with(&cov, scn.n, scn.feature_dist, seed)
}

/// Knockoffs drawn from the exact Gaussian conditional `X_j | X_{-j}` given
/// the true zero-mean covariance.
pub fn ideal_knockoffs(x: &DMatrix<f64>, cov: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let precision = cov.clone().cholesky().ok_or(Error::CholeskyFailure)?.inverse();
    let cols: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, &[STREAM_KNOCKOFF, j as u64]);
            let w = precision[(j, j)];
            let sd = (1.0 / w).sqrt();
            (0..n)
                .map(|i| {
                    let mean = -(0..p)
                        .filter(|&k| k != j)
                        .map(|k| precision[(j, k)] * x[(i, k)])
                        .sum::<f64>()
                        / w;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + sd * z
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(n, p, |i, j| cols[j][i]))
}

struct Draw {
    x: DMatrix<f64>,
    xk: DMatrix<f64>,
    noise: Vec<f64>,
    y: Vec<f64>,
}

fn draw(scn: &SimulationScenario, rep_seed: u64) -> Result<Draw> {
    let cov = ar1_covariance(scn.p, scn.rho)?;
    let x = sample_features_with(&cov, scn.n, scn.feature_dist, rep_seed)?;
    let kseed = derive_seed(rep_seed, &[STREAM_KNOCKOFF]);
    let xk = match scn.knockoffs {
        KnockoffSource::Generated { screen_fraction } => {
            let cfg = KnockoffGenConfig { screen_fraction, seed: kseed, ..Default::default() };
            generate_knockoffs(&x, &cfg)?.0
        }
        KnockoffSource::Ideal => ideal_knockoffs(&x, &cov, kseed)?,
        KnockoffSource::Identity => x.clone(),
    };
    let mut rng = substream(rep_seed, &[STREAM_NOISE]);
    let noise: Vec<f64> = (0..scn.n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = (0..scn.n)
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            gen_response(&row, scn.dgp, noise[i])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Draw { x, xk, noise, y })
}

struct OracleMean(Dgp);

impl MeanModel for OracleMean {
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok((0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.0.mean(&row)
            })
            .collect())
    }
}

/// One repetition: the studentized statistic per tested feature, or `None`
/// when the variance estimate was degenerate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepOutcome {
    pub rep: usize,
    /// Zero-based tested (VD) or selected (VDBP) feature per entry.
    pub features: Vec<usize>,
    pub statistics: Vec<Option<f64>>,
}

fn run_one(scn: &SimulationScenario, rep: usize) -> Result<RepOutcome> {
    let rep_seed = derive_seed(scn.seed, &[STREAM_REPETITION, rep as u64]);
    let d = draw(scn, rep_seed)?;
    let ds = Dataset::new(d.x, Some(d.xk), d.y)?;
    let resid = match scn.centering {
        SimCentering::Forest => {
            let forest = fit_forest(&ds.x, &ds.y, &scn.forest_config(rep_seed))?;
            residuals(&forest, &ds)?
        }
        SimCentering::Oracle => residuals(&OracleMean(scn.dgp), &ds)?,
    };
    let cfg = TestConfig {
        forest: scn.forest_config(rep_seed),
        alphas: scn.alphas.clone(),
        seed: rep_seed,
        ..Default::default()
    };
    let degenerate = |e: Error| match e {
        Error::DegenerateVariance { .. } => Ok(None),
        other => Err(other),
    };
    match &scn.test {
        TestKind::Vd { features } => {
            let reports = vd_from_residuals(&ds, &resid, features, scn.mode, &cfg)?;
            let statistics = reports
                .into_iter()
                .map(|r| r.map(|r| Some(r.statistic)).or_else(degenerate))
                .collect::<Result<Vec<_>>>()?;
            Ok(RepOutcome { rep, features: features.clone(), statistics })
        }
        TestKind::Vdbp => {
            let (feature, stat) = match vdbp_from_residuals(&ds, &resid, scn.mode, &cfg) {
                Ok(r) => (r.feature, Some(r.statistic)),
                Err(Error::DegenerateVariance { feature, .. }) => (feature, None),
                Err(e) => return Err(e),
            };
            Ok(RepOutcome { rep, features: vec![feature], statistics: vec![stat] })
        }
    }
}

/// Runs every repetition, in parallel, returning outcomes in repetition order.
pub fn run_repetitions(scn: &SimulationScenario) -> Result<Vec<RepOutcome>> {
    scn.validate()?;
    (0..scn.reps).into_par_iter().map(|rep| run_one(scn, rep)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRow {
    /// Zero-based feature for VD rows; absent for VDBP.
    pub feature: Option<usize>,
    pub alpha: f64,
    pub rejections: usize,
    pub reps: usize,
    pub rejection_rate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionTable {
    pub scenario: SimulationScenario,
    pub rows: Vec<RejectionRow>,
    /// Statistics that could not be studentized (counted as non-rejections).
    pub degenerate: usize,
}

impl RejectionTable {
    pub fn rate(&self, feature: Option<usize>, alpha: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.feature == feature && r.alpha == alpha)
            .map(|r| r.rejection_rate)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dgp,test,feature,alpha,rejections,reps,rejection_rate,std_error\n");
        let test = match self.scenario.test {
            TestKind::Vd { .. } => "vd",
            TestKind::Vdbp => "vdbp",
        };
        for r in &self.rows {
            let feature = r.feature.map(|f| format!("x{}", f + 1)).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.scenario.dgp, test, feature, r.alpha, r.rejections, r.reps, r.rejection_rate, r.std_error
            ));
        }
        out
    }
}

pub fn aggregate(scn: &SimulationScenario, outcomes: &[RepOutcome]) -> RejectionTable {
    use crate::normal::two_sided_threshold;
    let reps = outcomes.len();
    let slots: Vec<Option<usize>> = match &scn.test {
        TestKind::Vd { features } => features.iter().map(|&f| Some(f)).collect(),
        TestKind::Vdbp => vec![None],
    };
    let degenerate = outcomes
        .iter()
        .map(|o| o.statistics.iter().filter(|s| s.is_none()).count())
        .sum();
    let mut rows = Vec::new();
    for (slot, &feature) in slots.iter().enumerate() {
        for &alpha in &scn.alphas {
            let t = two_sided_threshold(alpha);
            let rejections = outcomes
                .iter()
                .filter(|o| o.statistics[slot].is_some_and(|s| s.abs() > t))
                .count();
            let rate = rejections as f64 / reps as f64;
            rows.push(RejectionRow {
                feature,
                alpha,
                rejections,
                reps,
                rejection_rate: rate,
                std_error: (rate * (1.0 - rate) / reps as f64).sqrt(),
            });
        }
    }
    RejectionTable { scenario: scn.clone(), rows, degenerate }
}

pub fn run_experiment(scn: &SimulationScenario) -> Result<RejectionTable> {
    let outcomes = run_repetitions(scn)?;
    Ok(aggregate(scn, &outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Monte Carlo estimate of `E[(1{X_j ≤ a} − 1{X̃_j ≤ a}) (ζ(X) ε)²]` using the
/// true errors, pooled over all rows of all repetitions.
pub fn null_moment_diagnostic(scn: &SimulationScenario, j: usize, a: f64) -> Result<MomentEstimate> {
    let mut probe = scn.clone();
    probe.test = TestKind::Vd { features: vec![j] };
    probe.validate()?;
    let per_rep: Vec<Vec<f64>> = (0..scn.reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(scn.seed, &[STREAM_REPETITION, rep as u64]);
            let d = draw(scn, rep_seed)?;
            let (xj, xkj) = (column(&d.x, j), column(&d.xk, j));
            Ok((0..scn.n)
                .map(|i| {
                    let row: Vec<f64> = d.x.row(i).iter().copied().collect();
                    let e = scn.dgp.sd(&row) * d.noise[i];
                    let ind = (xj[i] <= a) as i32 - (xkj[i] <= a) as i32;
                    ind as f64 * e * e
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per_rep.into_iter().flatten().collect();
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(MomentEstimate { estimate: mean, std_error: (var / m).sqrt(), draws: values.len() })
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n − F|`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |d, (i, &v)| {
        let f = cdf(v);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Asymptotic Kolmogorov tail probability with Stephens' small-sample
/// correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
