use robustcov::toys::{
    analytic_inflation, coverage_experiment, empirical_inflation, sample_gaussian, toy_covariance, ToyConfig,
    ToyStatistic,
};
use robustcov_core::derate::DEFAULT_GAMMA;

#[test]
fn sampler_reproduces_the_covariance() {
    let n = 1_000_000;
    for rho in [0.0, 0.5] {
        let draws = sample_gaussian(&toy_covariance(rho).unwrap(), n, 3).unwrap();
        for i in 0..10 {
            let var = draws.iter().map(|x| x[i] * x[i]).sum::<f64>() / n as f64;
            assert!((var - 1.0).abs() < 0.005, "rho {rho} var[{i}] = {var}");
        }
        let cross = draws.iter().map(|x| x[1] * x[6]).sum::<f64>() / n as f64;
        assert!((cross - rho).abs() < 0.005, "rho {rho} cov = {cross}");
    }
}

#[test]
fn parameter_statistic_is_chi_square_without_correlation() {
    let mut cfg = ToyConfig::two_blocks(11);
    cfg.rho_list = vec![0.0];
    let curve = coverage_experiment(&cfg, ToyStatistic::ProjectedNaive).unwrap();
    assert!(curve.ks_distance[0] < 0.003, "KS {}", curve.ks_distance[0]);
}

#[test]
fn no_inflation_under_the_assumed_covariance() {
    let mut cfg = ToyConfig::two_blocks(21);
    cfg.rho_list = vec![0.0];
    let e = empirical_inflation(&cfg, DEFAULT_GAMMA).unwrap();
    assert!((e - 1.0).abs() < 0.01, "{e}");
    assert!((analytic_inflation(&cfg, DEFAULT_GAMMA).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn analytic_and_monte_carlo_inflation_agree() {
    let mut cfg = ToyConfig::two_blocks(31);
    cfg.rho_list = vec![0.5];
    let (e, a) = (
        empirical_inflation(&cfg, DEFAULT_GAMMA).unwrap(),
        analytic_inflation(&cfg, DEFAULT_GAMMA).unwrap(),
    );
    assert!(a > 1.0);
    assert!((e - a).abs() < 0.02, "empirical {e} analytic {a}");
}

#[test]
fn coverage_is_deterministic() {
    let mut cfg = ToyConfig::two_blocks(41);
    cfg.n_samples = 50_000;
    cfg.alpha = Some(1.19);
    for stat in [ToyStatistic::PMin, ToyStatistic::ProjectedInflated] {
        let (a, b) = (
            coverage_experiment(&cfg, stat).unwrap(),
            coverage_experiment(&cfg, stat).unwrap(),
        );
        assert_eq!(a.empirical_cdf, b.empirical_cdf);
        assert_eq!(a.checks, b.checks);
    }
}
