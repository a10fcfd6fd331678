//! Packed additively homomorphic encryption in the BFV style.
//!
//! Symmetric-key scheme over `R_q = Z_q[x]/(x^n + 1)`:
//!
//! ```text
//! c0 = -a,  c1 = a·t + Δ·m + e0,    Δ = floor(q / p_e)
//! m' = round(p_e · (c0·t + c1) / q) mod p_e
//! ```
//!
//! Plaintext vectors of `n` slots are packed with the negacyclic NTT mod
//! `p_e`, so a ring product against an encoded plaintext multiplies slot by
//! slot. Ciphertexts may live in the coefficient or the evaluation (ring
//! NTT) domain; every ring NTT over `q` is counted so the transform savings
//! of evaluation-domain encryption can be audited.

mod negacyclic;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::modfield::{gaussian_bound, sample_gaussian, FieldSpec, Residue};

pub use negacyclic::{negacyclic_mul_direct, NegacyclicNtt};

/// Ring degrees below this are flagged insecure.
pub const MIN_SECURE_DEGREE: usize = 1024;

/// `(n, q, p_e, σ)` plus the roots of unity the ring transforms use.
#[derive(Clone, Debug, PartialEq)]
pub struct RlweParams {
    n: usize,
    q: FieldSpec,
    p_e: FieldSpec,
    sigma: f64,
    psi: Residue,
    psi_p: Residue,
}

impl RlweParams {
    pub fn new(n: usize, q: FieldSpec, p_e: FieldSpec, sigma: f64) -> Result<Self> {
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::InvalidParams(format!("n = {n} is not a power of two >= 2")));
        }
        let two_n = 2 * n as u64;
        if q.modulus() % two_n != 1 || p_e.modulus() % two_n != 1 {
            return Err(Error::InvalidParams(format!(
                "q = {} and p_e = {} must both be 1 mod {two_n}",
                q.modulus(),
                p_e.modulus()
            )));
        }
        if q.modulus() / p_e.modulus() < 2 {
            return Err(Error::InvalidParams("floor(q / p_e) must be at least 2".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidParams("sigma must be positive".into()));
        }
        let psi = q.find_root_of_unity(two_n)?;
        let psi_p = p_e.find_root_of_unity(two_n)?;
        Ok(Self {
            n,
            q,
            p_e,
            sigma,
            psi,
            psi_p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> &FieldSpec {
        &self.q
    }

    pub fn p_e(&self) -> &FieldSpec {
        &self.p_e
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn psi(&self) -> Residue {
        self.psi
    }

    pub fn psi_p(&self) -> Residue {
        self.psi_p
    }

    /// `Δ = floor(q / p_e)`.
    pub fn delta(&self) -> u64 {
        self.q.modulus() / self.p_e.modulus()
    }

    /// `q mod p_e`; every plaintext wrap adds this much noise.
    pub fn delta_remainder(&self) -> u64 {
        self.q.modulus() % self.p_e.modulus()
    }

    pub fn is_insecure(&self) -> bool {
        self.n < MIN_SECURE_DEGREE
    }

    /// Largest centered coefficient of any encoded plaintext.
    pub fn max_plain_coeff(&self) -> u64 {
        self.p_e.modulus() / 2
    }

    /// Noise bound of a fresh encryption.
    pub fn fresh_noise_bound(&self) -> f64 {
        gaussian_bound(self.sigma) as f64
    }

    /// Remaining bits of headroom for a ciphertext whose noise is at most `bound`.
    pub fn budget_for_bound(&self, bound: f64) -> f64 {
        (self.delta() as f64 / 2.0).log2() - (bound + self.delta_remainder() as f64).log2()
    }

    pub fn bound_for_budget(&self, budget: f64) -> f64 {
        (self.delta() as f64 / 2.0) * (-budget).exp2() - self.delta_remainder() as f64
    }

    /// Noise bound after multiplying by a plaintext with centered
    /// coefficients at most `max_w`.
    pub fn bound_after_mul(&self, bound: f64, max_w: u64) -> f64 {
        let nw = self.n as f64 * max_w as f64;
        nw * bound + self.delta_remainder() as f64 * (nw + 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RingDomain {
    Coefficient,
    Evaluation,
}

impl RingDomain {
    pub fn tag(self) -> u8 {
        match self {
            RingDomain::Coefficient => 0,
            RingDomain::Evaluation => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(RingDomain::Coefficient),
            1 => Some(RingDomain::Evaluation),
            _ => None,
        }
    }
}

/// `n` residues, either polynomial coefficients or ring-NTT values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingElem {
    pub coeffs: Vec<Residue>,
    pub domain: RingDomain,
}

impl RingElem {
    pub fn zero(n: usize, domain: RingDomain) -> Self {
        Self {
            coeffs: vec![0; n],
            domain,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub c0: RingElem,
    pub c1: RingElem,
    /// Tracked estimate; decryption is exact while this stays positive.
    pub noise_budget_bits: f64,
}

impl Ciphertext {
    pub fn domain(&self) -> RingDomain {
        self.c0.domain
    }

    pub fn n(&self) -> usize {
        self.c0.coeffs.len()
    }
}

/// Secret polynomial with discrete-Gaussian coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SecretKey {
    t: RingElem,
    t_hat: Vec<Residue>,
}

impl SecretKey {
    pub fn t(&self) -> &RingElem {
        &self.t
    }
}

/// Plaintext slot vector of length `n`, entries mod `p_e`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainVec {
    pub slots: Vec<Residue>,
}

impl PlainVec {
    pub fn new(slots: Vec<Residue>) -> Self {
        Self { slots }
    }

    pub fn zeros(n: usize) -> Self {
        Self { slots: vec![0; n] }
    }
}

/// A slot multiplicand already encoded, lifted to `q` and ring-transformed.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPlain {
    values: Vec<Residue>,
    max_abs: u64,
}

impl PreparedPlain {
    /// Largest centered coefficient of the encoded polynomial.
    pub fn max_abs(&self) -> u64 {
        self.max_abs
    }
}

/// Snapshot of the operation counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    /// Negacyclic NTTs (either direction) over `q`.
    pub ring_ntt: u64,
    /// Negacyclic NTTs over `p_e` used for slot packing.
    pub plain_ntt: u64,
    /// Pointwise ring-element products.
    pub hadamard: u64,
    /// Ring-element additions and subtractions.
    pub ring_add: u64,
}

impl OpCounts {
    pub fn ring_ops(&self) -> u64 {
        self.ring_ntt + self.hadamard + self.ring_add
    }
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, rhs: Self) -> Self {
        OpCounts {
            ring_ntt: self.ring_ntt - rhs.ring_ntt,
            plain_ntt: self.plain_ntt - rhs.plain_ntt,
            hadamard: self.hadamard - rhs.hadamard,
            ring_add: self.ring_add - rhs.ring_add,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    ring_ntt: AtomicU64,
    plain_ntt: AtomicU64,
    hadamard: AtomicU64,
    ring_add: AtomicU64,
}

impl Counters {
    fn bump(c: &AtomicU64, by: u64) {
        c.fetch_add(by, Ordering::Relaxed);
    }
}

/// Scheme context: parameters, transform tables and instrumentation.
///
/// Each party owns its own context so counters are per party.
#[derive(Debug)]
pub struct Bfv {
    params: RlweParams,
    ring: NegacyclicNtt,
    plain: NegacyclicNtt,
    /// slot `i` lives at evaluation index `slot_index[i]`
    slot_index: Vec<usize>,
    counters: Counters,
}

impl Clone for Bfv {
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            ring: self.ring.clone(),
            plain: self.plain.clone(),
            slot_index: self.slot_index.clone(),
            counters: Counters::default(),
        }
    }
}

impl Bfv {
    pub fn new(params: &RlweParams) -> Result<Self> {
        let ring = NegacyclicNtt::with_psi(params.n, params.psi, &params.q)?;
        let plain = NegacyclicNtt::with_psi(params.n, params.psi_p, &params.p_e)?;
        // slot i <-> evaluation at psi_p^(2i+1)
        let log_n = params.n.trailing_zeros();
        let slot_index = (0..params.n)
            .map(|i| negacyclic::bit_reverse(i, log_n))
            .collect();
        Ok(Self {
            params: params.clone(),
            ring,
            plain,
            slot_index,
            counters: Counters::default(),
        })
    }

    pub fn params(&self) -> &RlweParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn counts(&self) -> OpCounts {
        let c = &self.counters;
        OpCounts {
            ring_ntt: c.ring_ntt.load(Ordering::Relaxed),
            plain_ntt: c.plain_ntt.load(Ordering::Relaxed),
            hadamard: c.hadamard.load(Ordering::Relaxed),
            ring_add: c.ring_add.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counts(&self) {
        let c = &self.counters;
        for a in [&c.ring_ntt, &c.plain_ntt, &c.hadamard, &c.ring_add] {
            a.store(0, Ordering::Relaxed);
        }
    }

    fn q(&self) -> &FieldSpec {
        &self.params.q
    }

    fn ring_forward(&self, a: &mut [Residue]) {
        Counters::bump(&self.counters.ring_ntt, 1);
        self.ring.forward(a);
    }

    fn ring_inverse(&self, a: &mut [Residue]) {
        Counters::bump(&self.counters.ring_ntt, 1);
        self.ring.inverse(a);
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::LengthMismatch {
                left: len,
                right: self.n(),
            });
        }
        Ok(())
    }

    pub fn keygen<R: Rng + ?Sized>(&self, rng: &mut R) -> SecretKey {
        let coeffs: Vec<Residue> = (0..self.n())
            .map(|_| self.q().encode_signed(sample_gaussian(self.params.sigma, rng)))
            .collect();
        let mut t_hat = coeffs.clone();
        self.ring_forward(&mut t_hat);
        SecretKey {
            t: RingElem {
                coeffs,
                domain: RingDomain::Coefficient,
            },
            t_hat,
        }
    }

    /// Polynomial mod `p_e` whose value at `ψ_p^(2i+1)` is slot `i`.
    pub fn encode_slots(&self, v: &PlainVec) -> Result<RingElem> {
        self.check_len(v.slots.len())?;
        let p = self.params.p_e.modulus();
        let mut evals = vec![0; self.n()];
        for (i, &s) in v.slots.iter().enumerate() {
            if s >= p {
                return Err(Error::RangeViolation(format!("slot value {s} >= p_e = {p}")));
            }
            evals[self.slot_index[i]] = s;
        }
        Counters::bump(&self.counters.plain_ntt, 1);
        self.plain.inverse(&mut evals);
        Ok(RingElem {
            coeffs: evals,
            domain: RingDomain::Coefficient,
        })
    }

    pub fn decode_slots(&self, m: &RingElem) -> Result<PlainVec> {
        self.check_len(m.coeffs.len())?;
        let mut evals = m.coeffs.clone();
        Counters::bump(&self.counters.plain_ntt, 1);
        self.plain.forward(&mut evals);
        Ok(PlainVec {
            slots: self.slot_index.iter().map(|&j| evals[j]).collect(),
        })
    }

    /// `Δ·m` mod q for `m` with coefficients in `[0, p_e)`.
    fn scale_plain(&self, m: &RingElem) -> Vec<Residue> {
        let delta = self.params.delta() % self.q().modulus();
        m.coeffs.iter().map(|&c| self.q().mul_mod(c, delta)).collect()
    }

    fn gaussian_poly<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Residue> {
        (0..self.n())
            .map(|_| self.q().encode_signed(sample_gaussian(self.params.sigma, rng)))
            .collect()
    }

    fn uniform_poly<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Residue> {
        (0..self.n()).map(|_| self.q().sample_uniform(rng)).collect()
    }

    fn pointwise(&self, a: &[Residue], b: &[Residue]) -> Vec<Residue> {
        Counters::bump(&self.counters.hadamard, 1);
        a.iter().zip(b).map(|(&x, &y)| self.q().mul_mod(x, y)).collect()
    }

    fn add_vec(&self, a: &[Residue], b: &[Residue]) -> Vec<Residue> {
        Counters::bump(&self.counters.ring_add, 1);
        a.iter().zip(b).map(|(&x, &y)| self.q().add_mod(x, y)).collect()
    }

    fn sub_vec(&self, a: &[Residue], b: &[Residue]) -> Vec<Residue> {
        Counters::bump(&self.counters.ring_add, 1);
        a.iter().zip(b).map(|(&x, &y)| self.q().sub_mod(x, y)).collect()
    }

    fn fresh_budget(&self) -> f64 {
        self.params.budget_for_bound(self.params.fresh_noise_bound())
    }

    /// Coefficient-domain encryption: `c0 = -a, c1 = a·t + Δ·m + e0`.
    pub fn encrypt<R: Rng + ?Sized>(&self, m: &PlainVec, sk: &SecretKey, rng: &mut R) -> Result<Ciphertext> {
        let msg = self.encode_slots(m)?;
        let a = self.uniform_poly(rng);
        let e0 = self.gaussian_poly(rng);
        let mut a_hat = a.clone();
        self.ring_forward(&mut a_hat);
        let mut at = self.pointwise(&a_hat, &sk.t_hat);
        self.ring_inverse(&mut at);
        let c1 = self.add_vec(&self.add_vec(&at, &self.scale_plain(&msg)), &e0);
        let c0 = a.iter().map(|&x| self.q().neg_mod(x)).collect();
        Ok(Ciphertext {
            c0: RingElem {
                coeffs: c0,
                domain: RingDomain::Coefficient,
            },
            c1: RingElem {
                coeffs: c1,
                domain: RingDomain::Coefficient,
            },
            noise_budget_bits: self.fresh_budget(),
        })
    }

    /// Evaluation-domain encryption of slot values:
    /// `ĉ0 = -â, ĉ1 = â∘t̂ + NTT_q(Δ·m + e0)`.
    ///
    /// Consumes randomness exactly like [`Bfv::encrypt`], so both paths
    /// decrypt identically under the same RNG state.
    pub fn encrypt_freq_direct<R: Rng + ?Sized>(
        &self,
        freq_slots: &PlainVec,
        sk: &SecretKey,
        rng: &mut R,
    ) -> Result<Ciphertext> {
        let msg = self.encode_slots(freq_slots)?;
        let mut a_hat = self.uniform_poly(rng);
        let e0 = self.gaussian_poly(rng);
        self.ring_forward(&mut a_hat);
        let mut body = self.add_vec(&self.scale_plain(&msg), &e0);
        self.ring_forward(&mut body);
        let c1 = self.add_vec(&self.pointwise(&a_hat, &sk.t_hat), &body);
        let c0 = a_hat.iter().map(|&x| self.q().neg_mod(x)).collect();
        Ok(Ciphertext {
            c0: RingElem {
                coeffs: c0,
                domain: RingDomain::Evaluation,
            },
            c1: RingElem {
                coeffs: c1,
                domain: RingDomain::Evaluation,
            },
            noise_budget_bits: self.fresh_budget(),
        })
    }

    /// `c0·t + c1` in the coefficient domain.
    fn phase(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Vec<Residue>> {
        self.check_len(ct.c0.coeffs.len())?;
        self.check_len(ct.c1.coeffs.len())?;
        if ct.c0.domain != ct.c1.domain {
            return Err(Error::DomainMismatch);
        }
        Ok(match ct.domain() {
            RingDomain::Evaluation => {
                let mut v = self.add_vec(&self.pointwise(&ct.c0.coeffs, &sk.t_hat), &ct.c1.coeffs);
                self.ring_inverse(&mut v);
                v
            }
            RingDomain::Coefficient => {
                let mut c0 = ct.c0.coeffs.clone();
                self.ring_forward(&mut c0);
                let mut ct0 = self.pointwise(&c0, &sk.t_hat);
                self.ring_inverse(&mut ct0);
                self.add_vec(&ct0, &ct.c1.coeffs)
            }
        })
    }

    fn round_to_plain(&self, x: Residue) -> Residue {
        let q = self.q().modulus() as u128;
        let p = self.params.p_e.modulus() as u128;
        (((x as u128 * p + q / 2) / q) % p) as u64
    }

    pub fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<PlainVec> {
        let phase = self.phase(ct, sk)?;
        let m = RingElem {
            coeffs: phase.iter().map(|&x| self.round_to_plain(x)).collect(),
            domain: RingDomain::Coefficient,
        };
        self.decode_slots(&m)
    }

    /// Test-only exact noise measurement: decrypts and returns the largest
    /// centered `|c0·t + c1 - Δ·m|`.
    pub fn decrypt_with_noise(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<(PlainVec, u64)> {
        let phase = self.phase(ct, sk)?;
        let q = self.q();
        let delta = self.params.delta() % q.modulus();
        let mut max_noise = 0u64;
        let mut coeffs = Vec::with_capacity(phase.len());
        for &x in &phase {
            let m = self.round_to_plain(x);
            let e = q.sub_mod(x, q.mul_mod(m, delta));
            max_noise = max_noise.max(q.decode_signed(e).unsigned_abs());
            coeffs.push(m);
        }
        let pv = self.decode_slots(&RingElem {
            coeffs,
            domain: RingDomain::Coefficient,
        })?;
        Ok((pv, max_noise))
    }

    pub fn add_ct(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        if a.domain() != b.domain() || a.c1.domain != b.c1.domain {
            return Err(Error::DomainMismatch);
        }
        self.check_len(a.n())?;
        self.check_len(b.n())?;
        let p = &self.params;
        let bound = p.bound_for_budget(a.noise_budget_bits)
            + p.bound_for_budget(b.noise_budget_bits)
            + p.delta_remainder() as f64;
        Ok(Ciphertext {
            c0: RingElem {
                coeffs: self.add_vec(&a.c0.coeffs, &b.c0.coeffs),
                domain: a.domain(),
            },
            c1: RingElem {
                coeffs: self.add_vec(&a.c1.coeffs, &b.c1.coeffs),
                domain: a.domain(),
            },
            noise_budget_bits: p.budget_for_bound(bound),
        })
    }

    /// Adds (`negate = false`) or subtracts `Δ·encode(m)`; the slots change
    /// by `±m mod p_e`. Costs one ring NTT on an evaluation-domain ciphertext.
    pub fn add_plain(&self, ct: &Ciphertext, m: &PlainVec, negate: bool) -> Result<Ciphertext> {
        let mut scaled = self.scale_plain(&self.encode_slots(m)?);
        if ct.domain() == RingDomain::Evaluation {
            self.ring_forward(&mut scaled);
        }
        let c1 = if negate {
            self.sub_vec(&ct.c1.coeffs, &scaled)
        } else {
            self.add_vec(&ct.c1.coeffs, &scaled)
        };
        let p = &self.params;
        let bound = p.bound_for_budget(ct.noise_budget_bits) + p.delta_remainder() as f64;
        Ok(Ciphertext {
            c0: ct.c0.clone(),
            c1: RingElem {
                coeffs: c1,
                domain: ct.domain(),
            },
            noise_budget_bits: p.budget_for_bound(bound),
        })
    }

    /// Encodes, centers and ring-transforms a slot multiplicand.
    pub fn prepare_plain(&self, w: &PlainVec) -> Result<PreparedPlain> {
        let enc = self.encode_slots(w)?;
        let pe = &self.params.p_e;
        let q = self.q();
        let mut max_abs = 0;
        let mut values: Vec<Residue> = enc
            .coeffs
            .iter()
            .map(|&c| {
                let s = pe.decode_signed(c);
                max_abs = max_abs.max(s.unsigned_abs());
                q.encode_signed(s)
            })
            .collect();
        self.ring_forward(&mut values);
        Ok(PreparedPlain { values, max_abs })
    }

    /// Slot-wise product with a plaintext vector.
    pub fn mul_plain(&self, ct: &Ciphertext, w: &PlainVec) -> Result<Ciphertext> {
        let prepared = self.prepare_plain(w)?;
        self.mul_prepared(ct, &prepared)
    }

    /// Slot-wise product with a prepared multiplicand; the result is in the
    /// evaluation domain. No ring NTT runs when `ct` is already there.
    pub fn mul_prepared(&self, ct: &Ciphertext, w: &PreparedPlain) -> Result<Ciphertext> {
        self.check_len(w.values.len())?;
        let p = &self.params;
        let bound = p.bound_after_mul(p.bound_for_budget(ct.noise_budget_bits), w.max_abs);
        let budget = p.budget_for_bound(bound);
        if !(budget > 0.0) {
            return Err(Error::NoiseExhausted(budget));
        }
        let ct = self.to_evaluation_domain(ct);
        Ok(Ciphertext {
            c0: RingElem {
                coeffs: self.pointwise(&ct.c0.coeffs, &w.values),
                domain: RingDomain::Evaluation,
            },
            c1: RingElem {
                coeffs: self.pointwise(&ct.c1.coeffs, &w.values),
                domain: RingDomain::Evaluation,
            },
            noise_budget_bits: budget,
        })
    }

    pub fn elem_to_evaluation(&self, x: &RingElem) -> RingElem {
        match x.domain {
            RingDomain::Evaluation => x.clone(),
            RingDomain::Coefficient => {
                let mut coeffs = x.coeffs.clone();
                self.ring_forward(&mut coeffs);
                RingElem {
                    coeffs,
                    domain: RingDomain::Evaluation,
                }
            }
        }
    }

    pub fn elem_to_coefficient(&self, x: &RingElem) -> RingElem {
        match x.domain {
            RingDomain::Coefficient => x.clone(),
            RingDomain::Evaluation => {
                let mut coeffs = x.coeffs.clone();
                self.ring_inverse(&mut coeffs);
                RingElem {
                    coeffs,
                    domain: RingDomain::Coefficient,
                }
            }
        }
    }

    pub fn to_evaluation_domain(&self, ct: &Ciphertext) -> Ciphertext {
        Ciphertext {
            c0: self.elem_to_evaluation(&ct.c0),
            c1: self.elem_to_evaluation(&ct.c1),
            noise_budget_bits: ct.noise_budget_bits,
        }
    }

    pub fn to_coefficient_domain(&self, ct: &Ciphertext) -> Ciphertext {
        Ciphertext {
            c0: self.elem_to_coefficient(&ct.c0),
            c1: self.elem_to_coefficient(&ct.c1),
            noise_budget_bits: ct.noise_budget_bits,
        }
    }

    /// Pointwise product of two evaluation-domain elements.
    pub fn elem_mul(&self, a: &RingElem, b: &RingElem) -> Result<RingElem> {
        if a.domain != RingDomain::Evaluation || b.domain != RingDomain::Evaluation {
            return Err(Error::DomainMismatch);
        }
        Ok(RingElem {
            coeffs: self.pointwise(&a.coeffs, &b.coeffs),
            domain: RingDomain::Evaluation,
        })
    }

    /// Fresh-encryption budget, assumed for ciphertexts read off the wire.
    pub fn fresh_noise_budget(&self) -> f64 {
        self.fresh_budget()
    }
}
