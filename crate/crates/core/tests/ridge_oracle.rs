use std::time::Instant;

use held_core::alignment::{apply, fit, solve, SolveOptions, SufficientStats};
use held_core::classifier_ood::{accuracy, predict, train_head, HeadConfig};
use held_core::linalg::{frob, gaussian_matrix};
use held_core::tensor_store::{MapKind, SyntheticSpec, SyntheticWorld};
use held_core::{Matrix, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense direct solve of `min ‖[Z_B 1]·θ − Z_A‖² + λ‖W‖²` with an
/// unpenalized intercept row, by LU on the augmented normal equations.
fn dense_ridge(z_b: &Matrix, z_a: &Matrix, lambda: f64) -> (Matrix, Vector) {
    let (n, d) = z_b.shape();
    let mut x = Matrix::from_element(n, d + 1, 1.0);
    x.columns_mut(0, d).copy_from(z_b);
    let mut system = x.transpose() * &x;
    for i in 0..d {
        system[(i, i)] += lambda;
    }
    let theta = system.lu().solve(&(x.transpose() * z_a)).expect("nonsingular");
    let w = theta.rows(0, d).into_owned();
    let b = theta.row(d).transpose();
    (w, b)
}

fn objective(z_b: &Matrix, z_a: &Matrix, w: &Matrix, b: &Vector, lambda: f64) -> f64 {
    let mut r = z_b * w - z_a;
    for mut row in r.row_iter_mut() {
        row += b.transpose();
    }
    r.norm_squared() + lambda * w.norm_squared()
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    frob(&(a - b)) / frob(b).max(1e-300)
}

#[test]
fn streamed_solve_matches_dense_direct_solve() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d_b = rng.random_range(1..=32);
        let d_a = rng.random_range(1..=32);
        let n = rng.random_range((2 * d_b).max(4)..=500);
        let lambda = 10f64.powf(rng.random_range(-4.0..0.0));
        let z_b = gaussian_matrix(&mut rng, n, d_b);
        let z_a = &z_b * gaussian_matrix(&mut rng, d_b, d_a) + gaussian_matrix(&mut rng, n, d_a) * 0.3;

        let mut stats = SufficientStats::new(d_b, d_a);
        let mut at = 0;
        while at < n {
            let len = rng.random_range(1..=64).min(n - at);
            stats
                .accumulate(&z_b.rows(at, len).into_owned(), &z_a.rows(at, len).into_owned())
                .unwrap();
            at += len;
        }
        let map = solve(&stats, SolveOptions::with_lambda(lambda)).unwrap();
        let (w, b) = dense_ridge(&z_b, &z_a, lambda);
        let e = rel(&map.w, &w).max((&map.b - &b).norm() / b.norm().max(1.0));
        worst = worst.max(e);
    }
    assert!(worst <= 1e-8, "worst relative error {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 5.0, "took {:?}", start.elapsed());
}

#[test]
fn gradient_vanishes_at_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..10 {
        let d_b = rng.random_range(1..=8);
        let d_a = rng.random_range(1..=8);
        let n = 40 + trial * 5;
        let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
        let z_b = gaussian_matrix(&mut rng, n, d_b);
        let z_a = gaussian_matrix(&mut rng, n, d_a);
        let (map, _) = fit(&z_b, &z_a, SolveOptions::with_lambda(lambda)).unwrap();
        let h = 1e-5;
        let tol = 1e-6 * (1.0 + frob(&map.w));
        let f = |w: &Matrix, b: &Vector| objective(&z_b, &z_a, w, b, lambda);
        let mut max_grad: f64 = 0.0;
        for i in 0..d_b {
            for j in 0..d_a {
                let (mut wp, mut wm) = (map.w.clone(), map.w.clone());
                wp[(i, j)] += h;
                wm[(i, j)] -= h;
                max_grad = max_grad.max(((f(&wp, &map.b) - f(&wm, &map.b)) / (2.0 * h)).abs());
            }
        }
        for j in 0..d_a {
            let (mut bp, mut bm) = (map.b.clone(), map.b.clone());
            bp[j] += h;
            bm[j] -= h;
            max_grad = max_grad.max(((f(&map.w, &bp) - f(&map.w, &bm)) / (2.0 * h)).abs());
        }
        assert!(max_grad <= tol, "trial {trial}: gradient {max_grad:e} > {tol:e}");

        // Away from the optimum the same differences see the analytic gradient.
        let w1 = &map.w + Matrix::from_element(d_b, d_a, 0.1);
        let mut r = &z_b * &w1 - &z_a;
        for mut row in r.row_iter_mut() {
            row += map.b.transpose();
        }
        let analytic = (z_b.transpose() * r) * 2.0 + &w1 * (2.0 * lambda);
        let mut wp = w1.clone();
        let mut wm = w1.clone();
        wp[(0, 0)] += h;
        wm[(0, 0)] -= h;
        let fd = (f(&wp, &map.b) - f(&wm, &map.b)) / (2.0 * h);
        assert!((fd - analytic[(0, 0)]).abs() <= 1e-5 * (1.0 + analytic[(0, 0)].abs()));
    }
}

#[test]
fn planted_map_is_recovered_and_transfers() {
    for seed in 0..5u64 {
        let spec = SyntheticSpec {
            n: 600,
            latent_dim: 12,
            d_a: 24,
            d_b: 20,
            noise_std: 0.0,
            n_classes: 4,
            seed,
            maps: MapKind::Random,
        };
        let world = SyntheticWorld::new(&spec).unwrap();
        let public = world.draw(600, 1);
        let train = world.draw(500, 2);
        let test = world.draw(500, 3);
        let (map, rep) = fit(&public.z_b, &public.z_a, SolveOptions::with_lambda(1e-9)).unwrap();
        let resid = rel(&apply(&map, &public.z_b).unwrap(), &public.z_a);
        assert!(resid <= 1e-6, "seed {seed}: residual {resid:e}");
        assert!(rep.train_mse <= 1e-12);

        let head = train_head(&train.z_a, &train.labels, 4, &HeadConfig::default()).unwrap();
        let base = accuracy(&predict(&head, &test.z_a).unwrap(), &test.labels).unwrap();
        let mapped = accuracy(&predict(&head, &apply(&map, &test.z_b).unwrap()).unwrap(), &test.labels).unwrap();
        assert!(
            (base - mapped).abs() <= 0.005,
            "seed {seed}: baseline {base}, mapped {mapped}"
        );
    }
}

fn instance() -> impl Strategy<Value = (Matrix, Matrix, Vec<usize>)> {
    (1usize..6, 1usize..6, 2usize..40, any::<u64>()).prop_map(|(d_b, d_a, n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z_b = gaussian_matrix(&mut rng, n, d_b);
        let z_a = gaussian_matrix(&mut rng, n, d_a);
        let mut cuts: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..=n)).collect();
        cuts.sort_unstable();
        (z_b, z_a, cuts)
    })
}

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + b.amax())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn batching_does_not_change_the_map((z_b, z_a, cuts) in instance()) {
        let n = z_b.nrows();
        let mut whole = SufficientStats::new(z_b.ncols(), z_a.ncols());
        whole.accumulate(&z_b, &z_a).unwrap();
        let mut parts = SufficientStats::new(z_b.ncols(), z_a.ncols());
        let mut bounds = cuts.clone();
        bounds.push(n);
        let mut at = 0;
        for &c in &bounds {
            let len = c - at;
            let mut part = SufficientStats::new(z_b.ncols(), z_a.ncols());
            part.accumulate(&z_b.rows(at, len).into_owned(), &z_a.rows(at, len).into_owned()).unwrap();
            parts.merge(&part).unwrap();
            at = c;
        }
        prop_assert_eq!(parts.count(), n);
        let opts = SolveOptions::with_lambda(0.1);
        let (a, b) = (solve(&whole, opts).unwrap(), solve(&parts, opts).unwrap());
        prop_assert!(close(&a.w, &b.w, 1e-9));
    }

    #[test]
    fn retract_undoes_accumulate((z_b, z_a, _) in instance()) {
        let mut stats = SufficientStats::new(z_b.ncols(), z_a.ncols());
        stats.accumulate(&z_b, &z_a).unwrap();
        let before = stats.clone();
        let extra_b = z_b.rows(0, 1).into_owned();
        let extra_a = z_a.rows(0, 1).into_owned();
        stats.accumulate(&extra_b, &extra_a).unwrap();
        stats.retract(&extra_b, &extra_a).unwrap();
        prop_assert_eq!(stats.count(), before.count());
        prop_assert!(close(stats.gram(), before.gram(), 1e-12));
        prop_assert!(close(stats.cross(), before.cross(), 1e-12));
    }

    #[test]
    fn map_is_equivariant_to_target_shifts((z_b, z_a, _) in instance(), shift in -5.0f64..5.0) {
        let opts = SolveOptions::with_lambda(0.05);
        let (m1, _) = fit(&z_b, &z_a, opts).unwrap();
        let (m2, _) = fit(&z_b, &z_a.add_scalar(shift), opts).unwrap();
        prop_assert!(close(&m1.w, &m2.w, 1e-8));
        let db = &m2.b - &m1.b;
        prop_assert!(db.iter().all(|x| (x - shift).abs() <= 1e-8 * (1.0 + shift.abs())));
    }

    #[test]
    fn objective_is_minimal_at_the_solution((z_b, z_a, _) in instance(), seed in any::<u64>()) {
        let lambda = 0.2;
        let (m, _) = fit(&z_b, &z_a, SolveOptions::with_lambda(lambda)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dw = gaussian_matrix(&mut rng, z_b.ncols(), z_a.ncols()) * 1e-3;
        let f0 = objective(&z_b, &z_a, &m.w, &m.b, lambda);
        let db = Vector::from_fn(z_a.ncols(), |_, _| rng.random_range(-1e-3..1e-3));
        let f1 = objective(&z_b, &z_a, &(&m.w + dw), &(&m.b + db), lambda);
        prop_assert!(f1 >= f0 - 1e-9 * (1.0 + f0));
    }
}
