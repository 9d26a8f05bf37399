use std::time::Instant;

use held_he::{HeBackend, KeyMaterial, PRESET_DEFAULT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TRIALS: usize = 1000;
const REL_TOL: f64 = 1e-3;
const LEN: usize = 16;

/// Max slot error relative to the reference vector's magnitude.
fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max) / scale
}

fn uniform(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-100.0..100.0)).collect()
}

#[test]
fn thousand_random_trials_at_default_params() {
    let start = Instant::now();
    let he = HeBackend::from_preset(PRESET_DEFAULT).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let KeyMaterial { secret, public } = he.keygen(&mut rng, &he.power_of_two_rotations()).unwrap();
    let pk = &public.public_key;
    let gk = &public.galois_keys;
    let slots = he.slot_count();
    let mut worst = [0.0f64; 5];

    for trial in 0..TRIALS {
        let u = uniform(&mut rng, LEN);
        let v = uniform(&mut rng, LEN);
        let p = uniform(&mut rng, LEN);
        let s: f64 = rng.random_range(-100.0..100.0);
        let cu = he.encrypt(pk, &u, &mut rng).unwrap();
        let op = trial % 5;
        let (got, want): (Vec<f64>, Vec<f64>) = match op {
            0 => {
                let cv = he.encrypt(pk, &v, &mut rng).unwrap();
                let out = he.add(&cu, &cv).unwrap();
                (
                    he.decrypt(&secret, &out).unwrap(),
                    u.iter().zip(&v).map(|(a, b)| a + b).collect(),
                )
            }
            1 => {
                let out = he.mul_plain(&cu, &p).unwrap();
                (
                    he.decrypt(&secret, &out).unwrap(),
                    u.iter().zip(&p).map(|(a, b)| a * b).collect(),
                )
            }
            2 => {
                let k = rng.random_range(1..slots);
                let out = he.rotate(&cu, k, gk).unwrap();
                let mut padded = u.clone();
                padded.resize(slots, 0.0);
                let want = (0..slots).map(|t| padded[(t + k) % slots]).collect();
                (he.decrypt(&secret, &out).unwrap(), want)
            }
            3 => {
                let d = 1 << rng.random_range(0..=6);
                let x = uniform(&mut rng, d);
                let w = uniform(&mut rng, d);
                let cx = he.encrypt(pk, &x, &mut rng).unwrap();
                let out = he.inner_product_ct_pt(&cx, &w, gk).unwrap();
                let dot: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                let terms = x.iter().zip(&w).fold(1.0f64, |m, (a, b)| m.max((a * b).abs()));
                let got = he.decrypt(&secret, &out).unwrap()[0];
                // Relative to the largest summand so cancellation does not
                // inflate the measure.
                worst[3] = worst[3].max((got - dot).abs() / terms.max(dot.abs()));
                continue;
            }
            _ => {
                let cv = he.encrypt(pk, &v, &mut rng).unwrap();
                let acc = he.scalar_mul_accumulate(None, &cu, s).unwrap();
                let acc = he.scalar_mul_accumulate(Some(acc), &cv, -s / 3.0).unwrap();
                let out = he.rescale(&acc).unwrap();
                let want = u.iter().zip(&v).map(|(a, b)| s * a - s / 3.0 * b).collect();
                (he.decrypt(&secret, &out).unwrap(), want)
            }
        };
        worst[op] = worst[op].max(rel_err(&got[..want.len()], &want));
    }

    let names = ["add", "mul_plain", "rotate", "inner_product", "scalar_mul_accumulate"];
    for (name, w) in names.iter().zip(worst) {
        eprintln!("{name}: worst relative error {w:.3e}");
        assert!(w <= REL_TOL, "{name}: {w:e}");
    }
    let elapsed = start.elapsed();
    eprintln!("{TRIALS} trials in {elapsed:?}");
    assert!(elapsed.as_secs() < 120);
}

#[test]
fn encode_decode_unit_interval() {
    let he = HeBackend::from_preset(PRESET_DEFAULT).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let v: Vec<f64> = (0..he.slot_count()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let back = he.decode(&he.encode_default(&v).unwrap());
        worst = worst.max(v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    assert!(worst <= 1e-6, "{worst:e}");
    assert!(worst <= 2f64.powi(-20));
}
