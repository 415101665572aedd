use clarep_core::clarid::{evr_sequence, extraneous_directions, project_out, saturation_point, select_k};
use clarep_core::numerics::{dot, Matrix, Rng};
use proptest::prelude::*;

fn jacobian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn projection_is_idempotent_and_orthogonal(
        dim in 2usize..=6,
        feat in 2usize..=12,
        seed in any::<u64>(),
        x in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let n = dim.min(feat);
        let basis = extraneous_directions(&jacobian(feat, dim, seed), n).unwrap();
        let x = &x[..dim];
        let evr = evr_sequence(&basis).unwrap();
        prop_assert!(evr.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*evr.last().unwrap(), 1.0);
        let k = select_k(&evr);
        prop_assert!((1..=n).contains(&k));
        for k in 0..=n {
            let p = project_out(x, &basis, k).unwrap();
            let pp = project_out(&p, &basis, k).unwrap();
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
            for i in 0..k {
                prop_assert!(dot(&p, &basis.direction(i)).abs() <= 1e-10);
            }
            prop_assert!(dot(&p, &p).sqrt() <= dot(x, x).sqrt() + 1e-12);
        }
    }

    #[test]
    fn saturation_choice_is_recheckable(
        acc in prop::collection::vec(0.0f64..=1.0, 1..=10),
        tol in 0.0f64..0.1,
    ) {
        let grid: Vec<usize> = (1..=acc.len()).map(|i| 100 * i).collect();
        let chosen = saturation_point(&grid, &acc, tol).unwrap();
        let idx = grid.iter().position(|&g| g == chosen).unwrap();
        let best = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(acc[idx] >= best - tol);
        prop_assert!(acc[idx + 1..].iter().all(|&a| a < best - tol));
        prop_assert!(chosen <= *grid.last().unwrap());
    }
}
