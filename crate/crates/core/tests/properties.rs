use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lve_core::covariance::{lattice_covariance, CutoffMode, LatticeShape};
use lve_core::graph::dual::{canonical_relabel, random_decorated_tree};
use lve_core::graph::trees::{is_positive_semidefinite, random_tree};
use lve_core::graph::{dualize, path_infimum_matrix, primalize, LabeledTree, WeakeningAssignment};
use lve_core::wick::{gaussian_moment, wick_reduction_moment};

#[test]
fn dual_round_trip_on_500_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for i in 0..500 {
        let n = 1 + i % 8;
        let t = random_decorated_tree(n, 0.4, &mut rng);
        let word = dualize(&t).unwrap();
        assert!(word.satisfies_counting_identities(n), "counting identities fail for {t:?}");
        assert_eq!(primalize(&word).unwrap(), canonical_relabel(&t).unwrap());
    }
}

fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prufer_round_trip(n in 2usize..10, seed in any::<u64>()) {
        let t = random_tree(n, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(LabeledTree::from_prufer(n, &t.prufer_code()).unwrap(), t);
    }

    #[test]
    fn path_infimum_matrices_are_psd(n in 2usize..9, seed in any::<u64>(), w in prop::collection::vec(0.0f64..=1.0, 8)) {
        let t = random_tree(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let m = path_infimum_matrix(&t, &WeakeningAssignment::new(w[..n - 1].to_vec()).unwrap()).unwrap();
        prop_assert!(m.relative_eq(&m.transpose(), 0.0, 0.0));
        prop_assert!(is_positive_semidefinite(&m, 1e-10));
    }

    #[test]
    fn pairings_agree_with_reduction(n in 1usize..4, seed in any::<u64>(), idx in prop::collection::vec(0usize..3, 0..9)) {
        let cov = random_spd(n, seed);
        let idx: Vec<usize> = idx.into_iter().map(|i| i % n).collect();
        let direct = gaussian_moment(&cov, &idx).unwrap();
        let reduced = wick_reduction_moment(&cov, &idx);
        prop_assert!((direct - reduced).abs() <= 1e-10 * direct.abs().max(1.0));
    }
}

#[test]
fn single_site_moments_are_double_factorials() {
    let cov = DMatrix::from_element(1, 1, 2.0);
    let mut double_factorial = 1.0;
    for k in 1..=5usize {
        double_factorial *= (2 * k - 1) as f64;
        let m = gaussian_moment(&cov, &vec![0; 2 * k]).unwrap();
        assert_relative_eq!(m, double_factorial * 2f64.powi(k as i32), max_relative = 1e-14);
    }
    assert_eq!(gaussian_moment(&cov, &[0, 0, 0]).unwrap(), 0.0);
}

#[test]
fn lattice_covariances_are_symmetric_and_positive() {
    for shape in [LatticeShape::chain(5), LatticeShape::square(3)] {
        let mode = CutoffMode::SliceSum { slice_ratio: 2.0, j_max: 3 };
        let model = lattice_covariance(shape, 1.0, 1.0, mode).unwrap();
        let c = &model.covariance;
        assert!(c.relative_eq(&c.transpose(), 1e-14, 1e-14));
        assert!(is_positive_semidefinite(c, 1e-12));
        assert_relative_eq!(model.tadpole, c[(0, 0)], max_relative = 1e-12);
    }
}
