//! Homomorphic secret sharing: HomShare splits an encrypted slot vector into
//! an encrypted share for Alice and a plaintext share for Bob; HomRec folds
//! Bob's share back in.
//!
//! Shares live mod `p_A`. Slots live mod `p_E`. Alice decrypts mod `p_E` and
//! reduces mod `p_A`, which is exact as long as no slot value wraps `p_E`
//! (always true when the three moduli coincide; see
//! [`ModulusChain::validate_no_wrap`] otherwise).

use rand::Rng;

use crate::error::{Error, Result};
use crate::modfield::{FieldSpec, Residue};
use crate::ringbfv::{Bfv, Ciphertext, PlainVec, SecretKey};

/// Transform modulus `p_N`, sharing modulus `p_A` and slot modulus `p_E`,
/// ordered `p_E >= p_A >= p_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulusChain {
    p_n: FieldSpec,
    p_a: FieldSpec,
    p_e: FieldSpec,
}

impl ModulusChain {
    pub fn new(p_n: FieldSpec, p_a: FieldSpec, p_e: FieldSpec) -> Result<Self> {
        if !(p_e.modulus() >= p_a.modulus() && p_a.modulus() >= p_n.modulus()) {
            return Err(Error::ChainViolation(format!(
                "need p_E >= p_A >= p_N, got {} / {} / {}",
                p_e.modulus(),
                p_a.modulus(),
                p_n.modulus()
            )));
        }
        Ok(Self { p_n, p_a, p_e })
    }

    /// `p_N = p_A = p_E = p`.
    pub fn unified(p: FieldSpec) -> Self {
        Self {
            p_n: p.clone(),
            p_a: p.clone(),
            p_e: p,
        }
    }

    pub fn p_n(&self) -> &FieldSpec {
        &self.p_n
    }

    pub fn p_a(&self) -> &FieldSpec {
        &self.p_a
    }

    pub fn p_e(&self) -> &FieldSpec {
        &self.p_e
    }

    pub fn is_unified(&self) -> bool {
        self.p_n == self.p_e && self.p_a == self.p_e
    }

    /// Largest integer a slot can hold before HomShare's decryption, for a
    /// layer summing `channels_in` products of HomRec outputs (each below
    /// `2 p_N`) with filter values (below `p_N`), plus the share offset `p_A`.
    pub fn worst_slot_value(&self, channels_in: usize) -> u128 {
        let pn = self.p_n.modulus() as u128 - 1;
        channels_in as u128 * 2 * pn * pn + self.p_a.modulus() as u128
    }

    /// Checks that split moduli never wrap `p_E`. A unified chain always passes.
    pub fn validate_no_wrap(&self, channels_in: usize) -> Result<()> {
        if self.is_unified() {
            return Ok(());
        }
        if self.p_a != self.p_n {
            return Err(Error::RangeViolation(format!(
                "split chain needs p_A = p_N for share-wise inverse transforms, got p_A = {}, p_N = {}",
                self.p_a.modulus(),
                self.p_n.modulus()
            )));
        }
        let worst = self.worst_slot_value(channels_in.max(1));
        if worst >= self.p_e.modulus() as u128 {
            return Err(Error::RangeViolation(format!(
                "slot values up to {worst} wrap p_E = {}",
                self.p_e.modulus()
            )));
        }
        Ok(())
    }

    fn check_bfv(&self, bfv: &Bfv) -> Result<()> {
        if bfv.params().p_e() != &self.p_e {
            return Err(Error::ChainViolation(format!(
                "ciphertext slot modulus {} differs from chain p_E {}",
                bfv.params().p_e().modulus(),
                self.p_e.modulus()
            )));
        }
        Ok(())
    }
}

/// Output of [`hom_share`].
#[derive(Clone, Debug, PartialEq)]
pub struct SharePair {
    /// Encrypts `y - s_B` (mod `p_A` after Alice's reduction).
    pub alice_ct: Ciphertext,
    /// `s_B`, uniform in `[0, p_A)`.
    pub bob_share: PlainVec,
    pub share_modulus: FieldSpec,
}

/// Samples a uniform share vector mod `p_A`.
pub fn sample_share<R: Rng + ?Sized>(len: usize, chain: &ModulusChain, rng: &mut R) -> PlainVec {
    PlainVec::new((0..len).map(|_| chain.p_a.sample_uniform(rng)).collect())
}

/// HomShare with a freshly sampled `s_B`.
pub fn hom_share<R: Rng + ?Sized>(
    bfv: &Bfv,
    ct_y: &Ciphertext,
    chain: &ModulusChain,
    rng: &mut R,
) -> Result<SharePair> {
    let s_b = sample_share(bfv.n(), chain, rng);
    hom_share_with(bfv, ct_y, chain, s_b)
}

/// HomShare with a caller-chosen `s_B`. Adds `p_A - s_B` so the slot stays
/// non-negative as an integer; Alice's reduction mod `p_A` then yields
/// `(y - s_B) mod p_A`.
pub fn hom_share_with(
    bfv: &Bfv,
    ct_y: &Ciphertext,
    chain: &ModulusChain,
    s_b: PlainVec,
) -> Result<SharePair> {
    share_impl(bfv, ct_y, None, chain, s_b)
}

/// HomShare of `[y] ⊞ extra` using one plaintext addition: the slots gain
/// `extra + p_A - s_B`. `extra` entries must lie below `p_N`.
pub fn hom_share_fused(
    bfv: &Bfv,
    ct_y: &Ciphertext,
    extra: &PlainVec,
    chain: &ModulusChain,
    s_b: PlainVec,
) -> Result<SharePair> {
    share_impl(bfv, ct_y, Some(extra), chain, s_b)
}

fn share_impl(
    bfv: &Bfv,
    ct_y: &Ciphertext,
    extra: Option<&PlainVec>,
    chain: &ModulusChain,
    s_b: PlainVec,
) -> Result<SharePair> {
    chain.check_bfv(bfv)?;
    let pa = chain.p_a.modulus();
    let pe = &chain.p_e;
    for len in [Some(s_b.slots.len()), extra.map(|e| e.slots.len())].into_iter().flatten() {
        if len != bfv.n() {
            return Err(Error::LengthMismatch {
                left: len,
                right: bfv.n(),
            });
        }
    }
    if s_b.slots.iter().any(|&s| s >= pa) {
        return Err(Error::ChainViolation("share not reduced mod p_A".into()));
    }
    if extra.is_some_and(|e| e.slots.iter().any(|&v| v >= chain.p_n.modulus())) {
        return Err(Error::ChainViolation("addend not reduced mod p_N".into()));
    }
    let offset = PlainVec::new(
        s_b.slots
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                let base = pe.reduce(pa - s);
                extra.map_or(base, |e| pe.add_mod(base, e.slots[j]))
            })
            .collect(),
    );
    Ok(SharePair {
        alice_ct: bfv.add_plain(ct_y, &offset, false)?,
        bob_share: s_b,
        share_modulus: chain.p_a.clone(),
    })
}

/// HomRec: adds `s_B` back. The slots then hold the integer `s_A + s_B`,
/// congruent to the shared value mod `p_A`.
pub fn hom_rec(
    bfv: &Bfv,
    alice_ct: &Ciphertext,
    bob_share: &PlainVec,
    chain: &ModulusChain,
) -> Result<Ciphertext> {
    chain.check_bfv(bfv)?;
    if bob_share.slots.len() != bfv.n() {
        return Err(Error::LengthMismatch {
            left: bob_share.slots.len(),
            right: bfv.n(),
        });
    }
    if bob_share.slots.iter().any(|&s| s >= chain.p_a.modulus()) {
        return Err(Error::ChainViolation("share not reduced mod p_A".into()));
    }
    bfv.add_plain(alice_ct, bob_share, false)
}

/// Alice's side of HomShare: decrypt and reduce mod `p_A`.
pub fn open_share(bfv: &Bfv, ct: &Ciphertext, sk: &SecretKey, chain: &ModulusChain) -> Result<Vec<Residue>> {
    chain.check_bfv(bfv)?;
    let pa = &chain.p_a;
    Ok(bfv.decrypt(ct, sk)?.slots.into_iter().map(|v| pa.reduce(v)).collect())
}

/// `(s_a + s_b) mod p_A`, element-wise.
pub fn recombine_clear(s_a: &[Residue], s_b: &[Residue], p_a: &FieldSpec) -> Result<Vec<Residue>> {
    if s_a.len() != s_b.len() {
        return Err(Error::LengthMismatch {
            left: s_a.len(),
            right: s_b.len(),
        });
    }
    Ok(s_a
        .iter()
        .zip(s_b)
        .map(|(&a, &b)| p_a.add_mod(p_a.reduce(a), p_a.reduce(b)))
        .collect())
}
