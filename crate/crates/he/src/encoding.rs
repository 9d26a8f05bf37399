//! Canonical-embedding encoder: `N/2` real slots ↔ integer coefficients.
//!
//! Slot `j` is the evaluation at `ζ^{5^j}`, `ζ = exp(iπ/N)`, so the Galois
//! element `5^k` rotates slots left by `k`.

use std::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone)]
pub struct Encoder {
    n: usize,
    slots: usize,
    m: usize,
    rot_group: Vec<usize>,
    ksi: Vec<Complex64>,
}

fn bit_reverse_permute<T>(v: &mut [T]) {
    let n = v.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j ^= bit;
        if i < j {
            v.swap(i, j);
        }
    }
}

impl Encoder {
    pub fn new(n: usize) -> Self {
        let slots = n / 2;
        let m = 2 * n;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            rot_group.push(g);
            g = g * 5 % m;
        }
        let ksi = (0..=m)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64))
            .collect();
        Self {
            n,
            slots,
            m,
            rot_group,
            ksi,
        }
    }

    /// Galois element for a left rotation by `k` slots.
    pub fn galois_element(&self, k: usize) -> usize {
        self.rot_group[k % self.slots]
    }

    fn special_fft(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        bit_reverse_permute(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len / 2;
            let lenq = len * 4;
            let gap = self.m / lenq;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] % lenq) * gap;
                    let u = vals[i + j];
                    let v = vals[i + j + lenh] * self.ksi[idx];
                    vals[i + j] = u + v;
                    vals[i + j + lenh] = u - v;
                }
            }
            len *= 2;
        }
    }

    fn special_ifft(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let mut len = size;
        while len >= 2 {
            let lenh = len / 2;
            let lenq = len * 4;
            let gap = self.m / lenq;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (lenq - (self.rot_group[j] % lenq)) * gap;
                    let u = vals[i + j] + vals[i + j + lenh];
                    let v = (vals[i + j] - vals[i + j + lenh]) * self.ksi[idx];
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            len /= 2;
        }
        bit_reverse_permute(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }

    /// Real-valued coefficients `round(scale · σ⁻¹(values))` before
    /// rounding, zero-padded to all slots.
    pub fn embed_inverse(&self, values: &[f64], scale: f64) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.slots];
        for (b, &v) in buf.iter_mut().zip(values) {
            b.re = v;
        }
        self.special_ifft(&mut buf);
        let mut coeffs = vec![0.0; self.n];
        for (i, z) in buf.iter().enumerate() {
            coeffs[i] = z.re * scale;
            coeffs[i + self.slots] = z.im * scale;
        }
        coeffs
    }

    /// Slot values (real parts) of a polynomial with the given coefficients.
    pub fn embed(&self, coeffs: &[f64], scale: f64) -> Vec<f64> {
        let mut buf: Vec<Complex64> = (0..self.slots)
            .map(|i| Complex64::new(coeffs[i] / scale, coeffs[i + self.slots] / scale))
            .collect();
        self.special_fft(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }
}
