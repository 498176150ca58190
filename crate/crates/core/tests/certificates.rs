mod common;

use common::random_poly;
use ncalg::lipconst::{analytic_l0, analytic_l1, empirical_l0, empirical_l1, il_penalty};
use ncalg::rng;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_constants_never_exceed_certificates(seed in any::<u64>(), b in 0.2f64..1.5) {
        let mut r = rng::seeded(seed);
        let p = random_poly(&mut r, 2, 3, 6);
        let l0 = analytic_l0(&p, b).unwrap();
        let l1 = analytic_l1(&p, b).unwrap();
        let e0 = empirical_l0(&p, b, 60, seed).unwrap();
        let e1 = empirical_l1(&p, b, 60, seed).unwrap();
        prop_assert!(e0 <= l0 * (1.0 + 1e-9) + 1e-12);
        for (e, a) in e1.iter().zip(&l1) {
            prop_assert!(*e <= a * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn penalty_bounds_the_largest_constant(seed in any::<u64>(), b in 0.2f64..1.5) {
        let mut r = rng::seeded(seed);
        let p = random_poly(&mut r, 2, 3, 6);
        let (pen, _) = il_penalty(&p, b).unwrap();
        let max_l1 = analytic_l1(&p, b).unwrap().into_iter().fold(0.0, f64::max);
        prop_assert!(pen.value >= max_l1 - 1e-12);
        prop_assert!(pen.value <= max_l1 + 0.01 * 2f64.ln() + 1e-12);
    }
}
