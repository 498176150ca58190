mod common;

use common::{random_general_shifts, random_poly, rel_err};
use nalgebra::DMatrix;
use ncalg::asm::{apply, apply_streaming, instantiate, operator_norm_bound};
use ncalg::rng;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_maps_to_matrix_product(seed in any::<u64>(), n in 1usize..8, m in 1usize..4) {
        let mut r = rng::seeded(seed);
        let s = random_general_shifts(&mut r, n, m);
        let p = random_poly(&mut r, m, 3, 5);
        let q = random_poly(&mut r, m, 3, 5);
        let pq = instantiate(&p.multiply(&q).unwrap(), &s).unwrap().matrix;
        let prod = instantiate(&p, &s).unwrap().matrix * instantiate(&q, &s).unwrap().matrix;
        prop_assert!(rel_err(&pq, &prod) <= 1e-10 || pq.norm() < 1e-12);
    }

    #[test]
    fn sum_and_scaling_are_linear(seed in any::<u64>(), n in 1usize..8, a in -3.0f64..3.0) {
        let mut r = rng::seeded(seed);
        let s = random_general_shifts(&mut r, n, 2);
        let p = random_poly(&mut r, 2, 3, 5);
        let q = random_poly(&mut r, 2, 3, 5);
        let lhs = instantiate(&p.scale(a).add(&q).unwrap(), &s).unwrap().matrix;
        let rhs = instantiate(&p, &s).unwrap().matrix * a + instantiate(&q, &s).unwrap().matrix;
        prop_assert!(rel_err(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn streaming_matches_dense(seed in any::<u64>(), n in 1usize..12, m in 1usize..4) {
        let mut r = rng::seeded(seed);
        let s = random_general_shifts(&mut r, n, m);
        let p = random_poly(&mut r, m, 4, 8);
        let x = rng::gaussian_vector(&mut r, n);
        let dense = apply(&instantiate(&p, &s).unwrap(), &x).unwrap();
        let stream = apply_streaming(&p, &s, &x).unwrap();
        let scale = dense.norm().max(1e-300);
        prop_assert!((dense - stream).norm() / scale <= 1e-10);
    }

    #[test]
    fn norm_bound_dominates_exact_norm(seed in any::<u64>(), n in 1usize..10) {
        let mut r = rng::seeded(seed);
        let s = random_general_shifts(&mut r, n, 2);
        let p = random_poly(&mut r, 2, 3, 6);
        let nb = operator_norm_bound(&p, &s).unwrap();
        prop_assert!(nb.exact.unwrap() <= nb.bound * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn non_commuting_shifts_separate_word_order() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
    let s = ncalg::ShiftSet::new(vec![a, b]).unwrap();
    let ab = ncalg::NcPolynomial::monomial(2, ncalg::Word::new(vec![0, 1]), 1.0).unwrap();
    let ba = ncalg::NcPolynomial::monomial(2, ncalg::Word::new(vec![1, 0]), 1.0).unwrap();
    let diff = instantiate(&ab, &s).unwrap().matrix - instantiate(&ba, &s).unwrap().matrix;
    assert_eq!(diff, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
}
