use hetknock_core::forest::fit_forest;
use hetknock_core::rng::substream;
use hetknock_core::sim::{gen_response, sample_features, Dgp, SimulationScenario, TestKind};
use hetknock_core::ForestConfig;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn oob_error_settles_by_a_hundred_trees() {
    let s = SimulationScenario::new(Dgp::M23, TestKind::Vdbp, 500, 20, 0.4);
    let x = sample_features(&s, 5).unwrap();
    let mut rng = substream(5, &[1]);
    let y: Vec<f64> = (0..s.n)
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            gen_response(&row, Dgp::M23, StandardNormal.sample(&mut rng)).unwrap()
        })
        .collect();
    let mse = |trees| {
        let cfg = ForestConfig { n_trees: trees, seed: 9, ..Default::default() };
        fit_forest(&x, &y, &cfg).unwrap().oob_mse(&y).unwrap()
    };
    let (m100, m500) = (mse(100), mse(500));
    assert!((m100 - m500).abs() / m500 < 0.05, "oob mse {m100} vs {m500}");
}
