use held_core::linalg::{gaussian_matrix, random_orthogonal, select_rows};
use held_core::similarity::{linear_cka, svcca, SvccaConfig};
use held_core::Matrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cka_self_similarity_and_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.random_range(10..200);
        let d = rng.random_range(2..40);
        let z = gaussian_matrix(&mut rng, n, d);
        assert!((linear_cka(&z, &z).unwrap() - 1.0).abs() <= 1e-9);
        let q = random_orthogonal(&mut rng, d);
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let zq = &z * &q * c;
        assert!((linear_cka(&z, &zq).unwrap() - 1.0).abs() <= 1e-9);
        let other = gaussian_matrix(&mut rng, n, d + 3);
        let base = linear_cka(&z, &other).unwrap();
        assert!((linear_cka(&zq, &other).unwrap() - base).abs() <= 1e-9);
    }
}

#[test]
fn svcca_on_identical_and_invertibly_mapped_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = gaussian_matrix(&mut rng, 600, 12);
    let cfg = SvccaConfig {
        n_components: 4,
        ..SvccaConfig::default()
    };
    let rep = svcca(&z, &z, &cfg).unwrap();
    assert!(
        rep.per_component_corrs.iter().all(|c| (c - 1.0).abs() <= 1e-6),
        "{rep:?}"
    );

    // Well conditioned: identity plus a small perturbation.
    let r = Matrix::identity(12, 12) + gaussian_matrix(&mut rng, 12, 12) * 0.1;
    let sv = r.clone().svd(false, false).singular_values;
    assert!(sv.max() / sv.min() < 10.0);
    let cfg = SvccaConfig {
        n_components: 12,
        ..SvccaConfig::default()
    };
    let rep = svcca(&z, &(&z * r), &cfg).unwrap();
    assert!((rep.mean_corr - 1.0).abs() <= 1e-6, "{}", rep.mean_corr);
}

#[test]
fn svcca_shuffled_null_stays_low() {
    let cfg = SvccaConfig {
        n_components: 64,
        n_repeats: 1,
        ..SvccaConfig::default()
    };
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z_a = gaussian_matrix(&mut rng, 2000, 96);
        let z_b = gaussian_matrix(&mut rng, 2000, 96);
        let mut order: Vec<usize> = (0..2000).collect();
        order.shuffle(&mut rng);
        let rep = svcca(&z_a, &select_rows(&z_b, &order), &SvccaConfig { seed, ..cfg.clone() }).unwrap();
        assert!(rep.mean_corr <= 0.25, "seed {seed}: {}", rep.mean_corr);
        assert!(
            rep.shuffled_baseline_mean <= 0.25,
            "seed {seed}: {}",
            rep.shuffled_baseline_mean
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cka_is_symmetric_and_bounded(seed in any::<u64>(), n in 5usize..60, da in 1usize..10, db in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_matrix(&mut rng, n, da);
        let b = gaussian_matrix(&mut rng, n, db);
        let ab = linear_cka(&a, &b).unwrap();
        let ba = linear_cka(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn cka_ignores_column_means(seed in any::<u64>(), shift in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_matrix(&mut rng, 30, 4);
        let b = gaussian_matrix(&mut rng, 30, 3);
        let x = linear_cka(&a, &b).unwrap();
        let y = linear_cka(&a.add_scalar(shift), &b).unwrap();
        prop_assert!((x - y).abs() <= 1e-8);
    }
}
