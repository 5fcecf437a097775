use proptest::prelude::*;
use tcsk_core::functionals::{j_chi, k_energy};
use tcsk_core::grid::{partial, random_band_limited};
use tcsk_core::kahler::{assemble, HermitianFormField};
use tcsk_core::linop::{pairing, LinearizedOperator};
use tcsk_core::TorusGrid;

fn grid1() -> TorusGrid {
    TorusGrid::uniform(1, 32).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectral_derivative_of_trig_mode(k in 1usize..15, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let g = grid1();
        let kf = k as f64;
        let f = g.field_from_fn(|x| a * (kf * x[0]).cos() + b * (kf * x[1]).sin());
        let exact = g.field_from_fn(|x| -a * kf * (kf * x[0]).sin());
        prop_assert!(partial(&f, 0, 1).unwrap().max_abs_diff(&exact) < 1e-11);
    }

    #[test]
    fn energies_ignore_constant_shift(seed in 0u64..1000, c in -5.0f64..5.0) {
        let g = grid1();
        let chi = HermitianFormField::identity(&g);
        let phi = random_band_limited(&g, 3, 0.3, seed).unwrap();
        let shifted = phi.map(|v| v + c);
        prop_assert!((j_chi(&phi, &chi).unwrap() - j_chi(&shifted, &chi).unwrap()).abs() < 1e-9);
        prop_assert!((k_energy(&phi).unwrap() - k_energy(&shifted).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn linearization_is_linear(seed in 0u64..1000, t in 0.0f64..=1.0, a in -3.0f64..3.0) {
        let g = grid1();
        let chi = HermitianFormField::identity(&g);
        let state = assemble(&random_band_limited(&g, 2, 0.2, seed).unwrap()).unwrap();
        let u = random_band_limited(&g, 3, 1.0, seed + 1).unwrap();
        let v = random_band_limited(&g, 3, 1.0, seed + 2).unwrap();
        let op = LinearizedOperator::new(state, &chi, t).unwrap();
        let lhs = op.apply(&u.axpy(a, &v)).unwrap();
        let rhs = op.apply(&u).unwrap().axpy(a, &op.apply(&v).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * (1.0 + rhs.sup_norm()));
    }

    #[test]
    fn flat_linearization_is_symmetric(seed in 0u64..1000, t in 0.0f64..=1.0) {
        let g = grid1();
        let chi = HermitianFormField::identity(&g);
        let state = assemble(&g.zeros()).unwrap();
        let u = random_band_limited(&g, 3, 1.0, seed).unwrap();
        let v = random_band_limited(&g, 3, 1.0, seed + 1).unwrap();
        let op = LinearizedOperator::new(state.clone(), &chi, t).unwrap();
        let a = pairing(&state, &op.apply(&u).unwrap(), &v);
        let b = pairing(&state, &u, &op.apply(&v).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{} {}", a, b);
    }
}
