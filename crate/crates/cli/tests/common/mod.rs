#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use hetknock_core::data::write_csv;
use hetknock_core::rng::substream;
use hetknock_core::sim::{ar1_covariance, sample_features_with, Dgp, FeatureDist};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

pub fn hetknock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetknock"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// AR(1) Gaussian design with a response from model 30 (variance driven by x15
/// when p >= 15). With `binary`, features are thresholded at zero.
pub fn write_dataset(path: &Path, n: usize, p: usize, seed: u64, binary: bool) {
    let cov = ar1_covariance(p, 0.5).unwrap();
    let mut x = sample_features_with(&cov, n, FeatureDist::Gaussian, seed).unwrap();
    let mut rng = substream(seed, &[99]);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let e: f64 = StandardNormal.sample(&mut rng);
            if p >= 15 {
                Dgp::M30.mean(&row) + Dgp::M30.sd(&row) * e
            } else {
                row[0] + (1.0 + 2.0 * (row[0] > 0.0) as i32 as f64) * e
            }
        })
        .collect();
    if binary {
        x = x.map(|v| (v > 0.0) as i32 as f64);
    }
    let mut buf = Vec::new();
    write_csv(&mut buf, &x, None::<&DMatrix<f64>>, Some(&y)).unwrap();
    std::fs::write(path, buf).unwrap();
}
