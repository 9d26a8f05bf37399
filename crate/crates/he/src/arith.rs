//! Word-size modular arithmetic, prime search and negacyclic NTT.

/// An odd modulus below 2^62 with precomputed Barrett constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modulus {
    q: u64,
    /// floor(2^128 / q).
    barrett: u128,
}

impl Modulus {
    pub fn new(q: u64) -> Self {
        assert!(q > 2 && q < (1 << 62) && q & 1 == 1, "modulus {q} out of range");
        Self {
            q,
            barrett: u128::MAX / q as u128,
        }
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.q
    }

    /// Reduces any `x < q²`.
    #[inline]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let (xh, xl) = ((x >> 64) as u64, x as u64);
        let (mh, ml) = ((self.barrett >> 64) as u64, self.barrett as u64);
        let mid = (xh as u128) * (ml as u128) + (xl as u128) * (mh as u128) + (((xl as u128) * (ml as u128)) >> 64);
        let qhat = (xh as u128) * (mh as u128) + (mid >> 64);
        let mut r = x.wrapping_sub(qhat.wrapping_mul(self.q as u128)) as u64;
        while r >= self.q {
            r -= self.q;
        }
        r
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> u64 {
        if x >= self.q {
            x % self.q
        } else {
            x
        }
    }

    /// Maps a signed integer into `[0, q)`.
    #[inline]
    pub fn from_i64(&self, x: i64) -> u64 {
        let r = self.reduce(x.unsigned_abs());
        if x < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    /// Centered representative in `(−q/2, q/2]`.
    #[inline]
    pub fn center(&self, x: u64) -> i64 {
        if x > self.q / 2 {
            x as i64 - self.q as i64
        } else {
            x as i64
        }
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.q {
            s - self.q
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.q - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.q - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Precomputation for [`mul_shoup`](Self::mul_shoup) with fixed `w < q`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.q as u128) as u64
    }

    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.q));
        if r >= self.q {
            r - self.q
        } else {
            r
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1 % self.q;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse by Fermat; `q` must be prime.
    pub fn inv(&self, a: u64) -> u64 {
        assert!(self.reduce(a) != 0, "zero has no inverse");
        self.pow(a, self.q - 2)
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    (a as u128 * b as u128 % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller–Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Primes `q ≡ 1 (mod 2n)` of exactly `bits` bits, largest first, skipping
/// any in `exclude`.
pub fn ntt_primes(bits: u32, n: usize, count: usize, exclude: &[u64]) -> Option<Vec<u64>> {
    let step = 2 * n as u64;
    let top = 1u64 << bits;
    let low = 1u64 << (bits - 1);
    let mut q = top - step + 1;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if q <= low {
            return None;
        }
        if is_prime(q) && !exclude.contains(&q) {
            out.push(q);
        }
        q -= step;
    }
    Some(out)
}

/// Index map realizing `a(X) ↦ a(X^g)` on forward-NTT output:
/// `out[i] = in[map[i]]`. Slot `i` holds the evaluation at `ψ^(2·rev(i)+1)`.
pub fn automorphism_index(n: usize, g: usize) -> Vec<usize> {
    let bits = n.trailing_zeros();
    let mask = 2 * n - 1;
    (0..n)
        .map(|i| {
            let e = (2 * bit_reverse(i, bits) + 1) * g & mask;
            bit_reverse((e - 1) / 2, bits)
        })
        .collect()
}

fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

/// Negacyclic NTT tables for one prime. Forward output is in bit-reversed
/// order; [`inverse`](Self::inverse) undoes it.
#[derive(Debug, Clone)]
pub struct NttTable {
    pub modulus: Modulus,
    n: usize,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

impl NttTable {
    pub fn new(q: u64, n: usize) -> Self {
        assert!(n.is_power_of_two());
        let m = Modulus::new(q);
        assert_eq!((q - 1) % (2 * n as u64), 0, "{q} is not 1 mod 2n");
        let psi = primitive_root_2n(&m, n);
        let psi_inv = m.inv(psi);
        let bits = n.trailing_zeros();
        let mut psi_rev = vec![0; n];
        let mut psi_inv_rev = vec![0; n];
        let (mut p, mut pi) = (1u64, 1u64);
        for i in 0..n {
            let r = bit_reverse(i, bits);
            psi_rev[r] = p;
            psi_inv_rev[r] = pi;
            p = m.mul(p, psi);
            pi = m.mul(pi, psi_inv);
        }
        let psi_rev_shoup = psi_rev.iter().map(|&w| m.shoup(w)).collect();
        let psi_inv_rev_shoup = psi_inv_rev.iter().map(|&w| m.shoup(w)).collect();
        let n_inv = m.inv(n as u64);
        Self {
            modulus: m,
            n,
            psi_rev,
            psi_rev_shoup,
            psi_inv_rev,
            psi_inv_rev_shoup,
            n_inv,
            n_inv_shoup: m.shoup(n_inv),
        }
    }

    /// In-place negacyclic NTT. Butterflies keep values lazily in `[0, 4q)`.
    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.modulus.value();
        let two_q = 2 * q;
        let mut t = self.n;
        let mut groups = 1;
        while groups < self.n {
            t >>= 1;
            for (i, block) in a.chunks_exact_mut(2 * t).enumerate() {
                let w = self.psi_rev[groups + i];
                let ws = self.psi_rev_shoup[groups + i];
                let (lo, hi) = block.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = reduce_once(*x, two_q);
                    let v = mul_shoup_lazy(*y, w, ws, q);
                    *x = u + v;
                    *y = u + two_q - v;
                }
            }
            groups <<= 1;
        }
        for x in a.iter_mut() {
            *x = reduce_once(reduce_once(*x, two_q), q);
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.modulus.value();
        let two_q = 2 * q;
        let mut t = 1;
        let mut groups = self.n;
        while groups > 1 {
            let h = groups >> 1;
            for (i, block) in a.chunks_exact_mut(2 * t).enumerate() {
                let w = self.psi_inv_rev[h + i];
                let ws = self.psi_inv_rev_shoup[h + i];
                let (lo, hi) = block.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (u, v) = (*x, *y);
                    *x = reduce_once(u + v, two_q);
                    *y = mul_shoup_lazy(u + two_q - v, w, ws, q);
                }
            }
            t <<= 1;
            groups = h;
        }
        for x in a.iter_mut() {
            *x = reduce_once(mul_shoup_lazy(*x, self.n_inv, self.n_inv_shoup, q), q);
        }
    }
}

/// `x − m` if `x ≥ m`, branch-free.
#[inline(always)]
fn reduce_once(x: u64, m: u64) -> u64 {
    x.min(x.wrapping_sub(m))
}

/// `a·w mod q` up to one extra `q`, for any `a < 2^64`.
#[inline(always)]
fn mul_shoup_lazy(a: u64, w: u64, ws: u64, q: u64) -> u64 {
    let hi = ((a as u128 * ws as u128) >> 64) as u64;
    a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(q))
}

/// A primitive 2n-th root of unity: `ψ^n = −1`.
fn primitive_root_2n(m: &Modulus, n: usize) -> u64 {
    let q = m.value();
    let exp = (q - 1) / (2 * n as u64);
    for g in 2.. {
        let psi = m.pow(g, exp);
        if m.pow(psi, n as u64) == q - 1 {
            return psi;
        }
    }
    unreachable!()
}
