use bridge::{assemble_condition, ConditionMode, Connector, ConnectorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensor_core::{grad_check, Tensor, GRAD_CHECK_TOL};

const SEEDS: [u64; 5] = [11, 23, 37, 51, 68];

#[test]
fn connector_gradients_match_finite_differences() {
    for seed in SEEDS {
        let cfg = ConnectorConfig { d_lm: 8, d_cond: 6, blocks: 2, heads: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conn = Connector::<f64>::init(&cfg, &mut rng);
        let mm = Tensor::randn(&[3, 8], 1.0, &mut rng).detach();
        let queries = Tensor::randn(&[2, 8], 1.0, &mut rng).detach();
        let probe = Tensor::randn(&[5, 6], 1.0, &mut rng).detach();

        let params: Vec<Tensor<f64>> = conn.params.iter().map(|(_, p)| p.clone()).collect();
        let report = grad_check(&params, |_| {
            let bundle = assemble_condition(Some(&mm), Some(&queries), ConditionMode::Dual)
                .map_err(|e| match e {
                    bridge::BridgeError::Tensor(t) => t,
                    other => panic!("unexpected error {other}"),
                })?;
            let out = conn.forward(&bundle).map_err(|e| match e {
                bridge::BridgeError::Tensor(t) => t,
                other => panic!("unexpected error {other}"),
            })?;
            out.mul(&probe)?.mean_all()
        })
        .unwrap();
        assert!(
            report.passes(GRAD_CHECK_TOL),
            "seed {seed}: max rel err {} at {:?} over {} coords",
            report.max_rel_err,
            report.worst,
            report.coords_checked
        );
    }
}
