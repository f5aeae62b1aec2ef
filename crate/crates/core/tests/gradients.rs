mod common;

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..100 {
        for (op, err) in common::op_suite(seed) {
            assert!(err < 1e-4, "seed {seed}: {op} relative error {err:e}");
        }
    }
}

#[test]
fn actor_and_critic_gradients_match_central_differences() {
    for seed in 0..100 {
        let err = common::pipeline_check(seed, 4, 2, 6);
        assert!(err < 1e-3, "seed {seed}: pipeline relative error {err:e}");
    }
}
