use fcc_core::select::{
    bivariate_readout, covariate_shift_readout, gen_linear_gaussian_data, run_covariate_shift,
    select_bivariate, BivariateConfig, CovariateShiftConfig, GaussianParams,
};

const CANDIDATES: [f64; 18] = [
    0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85,
    0.9,
];
const K2: [f64; 10] = [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.9, 0.9];

#[test]
fn covariate_shift_is_reproducible() {
    let cfg = CovariateShiftConfig::scaled(&CANDIDATES, &K2, 20.0, 10, 17);
    let (a, ra) = run_covariate_shift(&cfg).unwrap();
    let (b, rb) = run_covariate_shift(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    assert_eq!(ra.to_csv(), rb.to_csv());
    assert!(ra.to_csv().starts_with("k,nll_bits,model_bits,fc_total"));
}

#[test]
fn k2_config_selects_few_mechanisms() {
    for seed in 0..5 {
        let cfg = CovariateShiftConfig::scaled(&CANDIDATES, &K2, 20.0, 10, seed);
        let (_, res) = run_covariate_shift(&cfg).unwrap();
        assert!((1..=3).contains(&res.argmin_fc), "seed {seed}: {}", res.argmin_fc);
    }
}

#[test]
fn covariate_shift_readout_names_the_chain() {
    let cfg = CovariateShiftConfig::scaled(&CANDIDATES, &K2, 20.0, 10, 1);
    let (_, res) = run_covariate_shift(&cfg).unwrap();
    let s = covariate_shift_readout(&cfg, &res).unwrap();
    assert!(s.has_global("E", "X"));
    assert!(s.has_global("X", "Y"));
    assert!(!s.has_global("Y", "X"));
}

#[test]
fn bivariate_config_json() {
    let cfg = BivariateConfig {
        env_params: vec![GaussianParams::new(1.0, 16.0, 1.0), GaussianParams::new(9.0, 16.0, 2.0)],
        samples_per_env: 10,
        grid_size: 8,
        seed: 3,
        k_min: 3,
        k_max: 6,
    };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: BivariateConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let samples = gen_linear_gaussian_data(&cfg).unwrap();
    let res = select_bivariate(&cfg, &samples).unwrap();
    assert_eq!(res.rows.len(), 8);
    let s = bivariate_readout(&res).unwrap();
    assert!(!s.is_empty());
}
