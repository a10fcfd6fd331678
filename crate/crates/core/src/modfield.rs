//! Exact arithmetic modulo primes below 2^62.
//!
//! Every modulus used by the crate (image transform, share, plaintext and
//! ciphertext moduli) is a [`FieldSpec`]. Products go through a 128-bit
//! intermediate and a Barrett reduction, so no value ever leaves `[0, p)`.

use rand::Rng;

use crate::error::{Error, Result};

/// A residue in `[0, modulus)` for some [`FieldSpec`].
pub type Residue = u64;

/// Moduli must stay below this bound.
pub const MODULUS_LIMIT: u64 = 1 << 62;

/// Witnesses that make Miller-Rabin exact for every `n < 2^64`.
const MR_WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Arithmetic context for a prime modulus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    modulus: u64,
    bits: u32,
    barrett_mu: u64,
    two_adicity: u32,
    generator: u64,
    /// Distinct prime factors of `modulus - 1`.
    order_factors: Vec<u64>,
}

impl FieldSpec {
    pub fn new(modulus: u64) -> Result<Self> {
        if modulus >= MODULUS_LIMIT || !is_prime(modulus) {
            return Err(Error::InvalidModulus(modulus));
        }
        let bits = 64 - modulus.leading_zeros();
        let barrett_mu = ((1u128 << (2 * bits)) / modulus as u128) as u64;
        let order = modulus - 1;
        let order_factors = distinct_prime_factors(order);
        let two_adicity = order.trailing_zeros();
        let generator = (1..modulus)
            .find(|&g| {
                order_factors
                    .iter()
                    .all(|&l| pow_mod_raw(g, order / l, modulus) != 1)
            })
            .expect("a prime field always has a generator");
        Ok(Self {
            modulus,
            bits,
            barrett_mu,
            two_adicity,
            generator,
            order_factors,
        })
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn two_adicity(&self) -> u32 {
        self.two_adicity
    }

    pub fn generator(&self) -> Residue {
        self.generator
    }

    /// Distinct prime factors of `modulus - 1`, ascending.
    pub fn order_factors(&self) -> &[u64] {
        &self.order_factors
    }

    /// Barrett reduction of a product of two reduced residues.
    #[inline]
    pub fn reduce_wide(&self, x: u128) -> Residue {
        debug_assert!(x < (self.modulus as u128) * (self.modulus as u128));
        let qhat = ((x >> (self.bits - 1)) * self.barrett_mu as u128) >> (self.bits + 1);
        let mut r = (x - qhat * self.modulus as u128) as u64;
        // the quotient estimate is short by at most two
        if r >= self.modulus {
            r -= self.modulus;
        }
        if r >= self.modulus {
            r -= self.modulus;
        }
        r
    }

    #[inline]
    pub fn reduce(&self, x: u64) -> Residue {
        x % self.modulus
    }

    #[inline]
    pub fn mul_mod(&self, a: Residue, b: Residue) -> Residue {
        debug_assert!(a < self.modulus && b < self.modulus);
        self.reduce_wide(a as u128 * b as u128)
    }

    #[inline]
    pub fn add_mod(&self, a: Residue, b: Residue) -> Residue {
        let s = a + b;
        if s >= self.modulus {
            s - self.modulus
        } else {
            s
        }
    }

    #[inline]
    pub fn sub_mod(&self, a: Residue, b: Residue) -> Residue {
        if a >= b {
            a - b
        } else {
            a + self.modulus - b
        }
    }

    #[inline]
    pub fn neg_mod(&self, a: Residue) -> Residue {
        if a == 0 {
            0
        } else {
            self.modulus - a
        }
    }

    pub fn pow_mod(&self, base: Residue, mut exp: u64) -> Residue {
        let mut result = 1 % self.modulus;
        let mut b = base;
        while exp > 0 {
            if exp & 1 == 1 {
                result = self.mul_mod(result, b);
            }
            b = self.mul_mod(b, b);
            exp >>= 1;
        }
        result
    }

    /// Multiplicative inverse; `a` must be nonzero.
    pub fn inv_mod(&self, a: Residue) -> Residue {
        debug_assert!(a != 0);
        self.pow_mod(a, self.modulus - 2)
    }

    /// Canonical primitive `order`-th root of unity, `generator^((p-1)/order)`.
    pub fn find_root_of_unity(&self, order: u64) -> Result<Residue> {
        let group = self.modulus - 1;
        if order == 0 || !group.is_multiple_of(order) {
            return Err(Error::OrderNotDividing {
                order,
                modulus: self.modulus,
            });
        }
        Ok(self.pow_mod(self.generator, group / order))
    }

    /// True when `root` has multiplicative order exactly `order`.
    pub fn is_primitive_root_of_unity(&self, root: Residue, order: u64) -> bool {
        if order == 0 || root >= self.modulus || self.pow_mod(root, order) != 1 {
            return false;
        }
        prime_factors_small(order)
            .into_iter()
            .all(|l| self.pow_mod(root, order / l) != 1)
    }

    /// Maps a signed integer to its residue.
    #[inline]
    pub fn encode_signed(&self, v: i64) -> Residue {
        v.rem_euclid(self.modulus as i64) as u64
    }

    /// Centered lift into `(-p/2, p/2]`.
    #[inline]
    pub fn decode_signed(&self, r: Residue) -> i64 {
        if r > self.modulus / 2 {
            r as i64 - self.modulus as i64
        } else {
            r as i64
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Residue {
        rng.gen_range(0..self.modulus)
    }
}

fn pow_mod_raw(base: u64, mut exp: u64, m: u64) -> u64 {
    let mut result = 1u128 % m as u128;
    let mut b = base as u128 % m as u128;
    while exp > 0 {
        if exp & 1 == 1 {
            result = result * b % m as u128;
        }
        b = b * b % m as u128;
        exp >>= 1;
    }
    result as u64
}

/// Deterministic Miller-Rabin, exact for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for &p in &MR_WITNESSES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let d = (n - 1) >> (n - 1).trailing_zeros();
    let s = (n - 1).trailing_zeros();
    'witness: for &a in &MR_WITNESSES {
        let mut x = pow_mod_raw(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = ((x as u128 * x as u128) % n as u128) as u64;
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Brent's variant of Pollard rho; `n` must be composite and odd.
fn pollard_rho(n: u64) -> u64 {
    let mulm = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    for c in 1u64.. {
        let f = |x: u64| (mulm(x, x) + c) % n;
        let (mut x, mut y, mut g) = (2u64, 2u64, 1u64);
        let mut q = 1u64;
        let mut r = 1u64;
        let mut ys = y;
        while g == 1 {
            x = y;
            for _ in 0..r {
                y = f(y);
            }
            let mut k = 0;
            while k < r && g == 1 {
                ys = y;
                for _ in 0..(128.min(r - k)) {
                    y = f(y);
                    q = mulm(q, x.abs_diff(y));
                }
                g = gcd(q, n);
                k += 128;
            }
            r *= 2;
        }
        if g == n {
            loop {
                ys = f(ys);
                g = gcd(x.abs_diff(ys), n);
                if g > 1 {
                    break;
                }
            }
        }
        if g != n {
            return g;
        }
    }
    unreachable!()
}

fn factor_into(n: u64, out: &mut Vec<u64>) {
    if n == 1 {
        return;
    }
    if is_prime(n) {
        out.push(n);
        return;
    }
    for &p in &MR_WITNESSES {
        if n.is_multiple_of(p) {
            out.push(p);
            factor_into(n / p, out);
            return;
        }
    }
    let d = pollard_rho(n);
    factor_into(d, out);
    factor_into(n / d, out);
}

/// Distinct prime factors of `n`, ascending.
pub fn distinct_prime_factors(n: u64) -> Vec<u64> {
    let mut f = Vec::new();
    factor_into(n, &mut f);
    f.sort_unstable();
    f.dedup();
    f
}

fn prime_factors_small(n: u64) -> Vec<u64> {
    distinct_prime_factors(n)
}

/// Smallest prime `p >= min_value` with `p ≡ residue (mod step)`.
pub fn find_prime(min_value: u64, residue: u64, step: u64) -> Result<u64> {
    if step == 0 {
        return Err(Error::SearchExhausted);
    }
    let residue = residue % step;
    let start = min_value.max(2);
    let offset = (residue + step - start % step) % step;
    let mut candidate = start.checked_add(offset).ok_or(Error::SearchExhausted)?;
    while candidate < MODULUS_LIMIT {
        if is_prime(candidate) {
            return Ok(candidate);
        }
        candidate = candidate.checked_add(step).ok_or(Error::SearchExhausted)?;
    }
    Err(Error::SearchExhausted)
}

/// Discrete Gaussian with parameter `sigma`, cut at `6·sigma`.
///
/// Rejection sampling from the uniform distribution on the cut interval
/// with acceptance probability `exp(-x²/2σ²)`.
pub fn sample_gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> i64 {
    debug_assert!(sigma > 0.0);
    let bound = gaussian_bound(sigma);
    let two_sigma_sq = 2.0 * sigma * sigma;
    loop {
        let x = rng.gen_range(-bound..=bound);
        let rho = (-((x * x) as f64) / two_sigma_sq).exp();
        if rng.gen::<f64>() < rho {
            return x;
        }
    }
}

/// Largest magnitude [`sample_gaussian`] can return.
pub fn gaussian_bound(sigma: f64) -> i64 {
    (6.0 * sigma).floor() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn f(p: u64) -> FieldSpec {
        FieldSpec::new(p).unwrap()
    }

    #[test]
    fn mul_mod_examples() {
        let p17 = f(17);
        assert_eq!(p17.mul_mod(5, 7), 35 % 17);
        assert_eq!(p17.mul_mod(0, 13), 0);
        assert_eq!(p17.mul_mod(1, 13), 13);
    }

    #[test]
    fn pow_mod_examples() {
        let p17 = f(17);
        assert_eq!(p17.pow_mod(2, 4), 16);
        assert_eq!(p17.pow_mod(9, 0), 1);
        assert_eq!(p17.pow_mod(4, 2), 16);
        for x in 1..17 {
            assert_eq!(p17.pow_mod(x, 16), 1);
        }
    }

    #[test]
    fn barrett_matches_u128_remainder() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for p in [2u64, 3, 17, 12289, 147457, 2305843009213693951 /* 2^61-1 */] {
            let fs = f(p);
            for _ in 0..20_000 {
                let a = fs.sample_uniform(&mut rng);
                let b = fs.sample_uniform(&mut rng);
                assert_eq!(fs.mul_mod(a, b), ((a as u128 * b as u128) % p as u128) as u64);
            }
            assert_eq!(fs.mul_mod(p - 1, p - 1), 1 % p);
        }
        // largest prime below the cap
        let big = find_prime((1 << 62) - 200, 1, 2).unwrap();
        let fs = f(big);
        assert_eq!(fs.mul_mod(big - 1, big - 1), 1);
        assert_eq!(fs.mul_mod(big - 1, big - 2), 2);
    }

    #[test]
    fn mul_mod_associative_randomized() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for p in [12289u64, 147457, 1152921504606830593] {
            let fs = f(p);
            for _ in 0..40_000 {
                let (a, b, c) = (
                    fs.sample_uniform(&mut rng),
                    fs.sample_uniform(&mut rng),
                    fs.sample_uniform(&mut rng),
                );
                assert_eq!(
                    fs.mul_mod(a, fs.mul_mod(b, c)),
                    fs.mul_mod(fs.mul_mod(a, b), c)
                );
            }
        }
    }

    #[test]
    fn generator_has_full_order() {
        for p in [2u64, 17, 97, 2311, 12289, 147457, 2363393] {
            let fs = f(p);
            let g = fs.generator();
            assert_eq!(fs.pow_mod(g, p - 1), 1 % p);
            assert!(fs.is_primitive_root_of_unity(g, p - 1));
        }
        assert_eq!(f(17).generator(), 3);
        assert_eq!(f(147457).generator(), 10);
    }

    #[test]
    fn rejects_composites_and_oversized() {
        assert!(matches!(FieldSpec::new(15), Err(Error::InvalidModulus(15))));
        assert!(FieldSpec::new(1).is_err());
        assert!(FieldSpec::new((1 << 62) + 135).is_err());
    }

    #[test]
    fn root_of_unity_examples() {
        let p17 = f(17);
        // exhaustive: elements of order 4 in Z_17^*
        let order4: Vec<u64> = (1..17)
            .filter(|&x| p17.pow_mod(x, 4) == 1 && p17.pow_mod(x, 2) != 1)
            .collect();
        assert_eq!(order4, vec![4, 13]);
        let w = p17.find_root_of_unity(4).unwrap();
        assert!(order4.contains(&w));
        assert_eq!(p17.mul_mod(w, w), 16);
        assert_eq!(w, p17.pow_mod(3, 4));
        assert_eq!(p17.find_root_of_unity(1).unwrap(), 1);
        assert!(matches!(
            p17.find_root_of_unity(5),
            Err(Error::OrderNotDividing { order: 5, modulus: 17 })
        ));
        assert!(p17.find_root_of_unity(0).is_err());
    }

    #[test]
    fn root_of_unity_has_exact_order_for_every_divisor() {
        for p in [17u64, 12289, 147457] {
            let fs = f(p);
            let group = p - 1;
            let divisors = (1..=group.min(1 << 20)).filter(|k| group % k == 0);
            for k in divisors {
                let w = fs.find_root_of_unity(k).unwrap();
                assert_eq!(fs.pow_mod(w, k), 1);
                // brute-force order check for small k, factor check otherwise
                if k <= 64 {
                    let order = (1..=k).find(|&e| fs.pow_mod(w, e) == 1).unwrap();
                    assert_eq!(order, k);
                } else {
                    assert!(fs.is_primitive_root_of_unity(w, k));
                }
            }
        }
    }

    #[test]
    fn find_prime_examples() {
        assert_eq!(find_prime(12289, 1, 4096).unwrap(), 12289);
        assert_eq!(find_prime(2, 1, 1).unwrap(), 2);
        // smallest prime >= 36864 that is 1 mod 4096
        let p = find_prime(36864, 1, 4096).unwrap();
        assert_eq!(p, 40961);
        assert!(is_prime(p) && p % 4096 == 1);
        // the medium parameter prime is the first 1 mod 4096 prime above 2^14 * 9
        assert_eq!(find_prime(147456, 1, 4096).unwrap(), 147457);
        assert_eq!(find_prime(2304, 1, 3).unwrap(), 2311);
        assert_eq!(find_prime(2359296, 1, 3).unwrap(), 2359303);
        assert_eq!(find_prime(2359303, 1, 4096).unwrap(), 2363393);
    }

    #[test]
    fn find_prime_exhausts_above_cap() {
        assert!(matches!(
            find_prime(MODULUS_LIMIT - 3, 0, 1 << 40),
            Err(Error::SearchExhausted)
        ));
    }

    #[test]
    fn find_prime_output_is_prime_and_congruent() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..200 {
            let min = rng.gen_range(2..1u64 << 40);
            let step = 1u64 << rng.gen_range(0..14);
            let p = find_prime(min, 1, step).unwrap();
            assert!(p >= min && p % step == 1 % step);
            assert!(is_prime(p));
            // nothing smaller qualifies (spot check of the preceding candidates)
            let mut c = p;
            for _ in 0..5 {
                if c < min + step {
                    break;
                }
                c -= step;
                assert!(!is_prime(c));
            }
        }
    }

    #[test]
    fn miller_rabin_matches_trial_division() {
        let trial = |n: u64| n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0);
        for n in 0..20_000u64 {
            assert_eq!(is_prime(n), trial(n), "n = {n}");
        }
        // strong pseudoprimes to several small bases
        for n in [3215031751u64, 341550071728321, 3825123056546413051] {
            assert!(!is_prime(n));
        }
        assert!(is_prime((1 << 61) - 1));
    }

    #[test]
    fn factorization_recovers_n() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..1u64 << 61);
            let fs = distinct_prime_factors(n);
            let mut m = n;
            for &p in &fs {
                assert!(is_prime(p));
                while m % p == 0 {
                    m /= p;
                }
            }
            assert_eq!(m, 1);
        }
    }

    #[test]
    fn gaussian_moments_and_tail() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let sigma = 4.0;
        let draws: Vec<i64> = (0..100_000).map(|_| sample_gaussian(sigma, &mut rng)).collect();
        assert!(draws.iter().all(|x| x.abs() <= 24));
        let mean = draws.iter().sum::<i64>() as f64 / draws.len() as f64;
        let var = draws.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((-0.1..=0.1).contains(&mean), "mean {mean}");
        assert!((0.8 * 16.0..=1.2 * 16.0).contains(&var), "variance {var}");
    }

    #[test]
    fn signed_encoding_is_centered() {
        let p17 = f(17);
        assert_eq!(p17.encode_signed(-1), 16);
        assert_eq!(p17.decode_signed(16), -1);
        assert_eq!(p17.decode_signed(8), 8);
        assert_eq!(p17.decode_signed(9), -8);
        for v in -8..=8 {
            assert_eq!(p17.decode_signed(p17.encode_signed(v)), v);
        }
    }
}
