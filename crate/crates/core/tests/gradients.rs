mod common;

use common::{max_gradient_error, random_grad_scene};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_gradients_match_central_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_grad_scene(&mut rng);
        let (err, k) = max_gradient_error(&scene);
        prop_assert!(err <= 1e-3, "relative error {err} at parameter {k}");
    }
}
